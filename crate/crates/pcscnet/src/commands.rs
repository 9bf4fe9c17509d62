//! The eight subcommands. Each one writes `<out_dir>/<command>.txt` (a
//! plain-text table) and `<out_dir>/<command>.metrics` (`key=value` lines).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use pcsc_core::model::{Model, PreparedScan};

use crate::bench::bench;
use crate::config::RunConfig;
use crate::gradcheck::{self, run_suite};
use crate::kitti::write_kitti_scan;
use crate::metrics::EvalReport;
use crate::ply::{default_palette, error_colors, export_ply, label_colors};
use crate::remap::RemapTable;
use crate::synth::generate_scene;
use crate::train::{ablate_loss, ablate_voxel, evaluate, load_data, prepare_all, synth_spec, train, CheckpointDir};
use crate::{Error, Result};

/// Sequence names used by `make-synth`.
pub const SYNTH_TRAIN_SEQUENCE: &str = "00";
pub const SYNTH_VAL_SEQUENCE: &str = "08";

/// Receives progress lines as they are produced.
pub type Log<'a> = &'a mut dyn FnMut(&str);

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes the report pair for `command` and returns the table.
pub fn write_reports(cfg: &RunConfig, command: &str, table: &str, metrics: &str) -> Result<String> {
    create_dir(&cfg.out_dir)?;
    write_file(&cfg.out_dir.join(format!("{command}.txt")), table)?;
    write_file(&cfg.out_dir.join(format!("{command}.metrics")), metrics)?;
    Ok(table.to_string())
}

/// Writes synthetic scenes in KITTI layout under `out_dir`, with an identity
/// remap file and a config pointing at them.
pub fn cmd_make_synth(cfg: &RunConfig, log: Log) -> Result<String> {
    let root = &cfg.out_dir;
    let mut rows = Vec::new();
    for (seq, count, val) in [
        (SYNTH_TRAIN_SEQUENCE, cfg.synth_train_scenes, false),
        (SYNTH_VAL_SEQUENCE, cfg.synth_val_scenes, true),
    ] {
        let dir = root.join("sequences").join(seq);
        create_dir(&dir.join("velodyne"))?;
        create_dir(&dir.join("labels"))?;
        for i in 0..count {
            let spec = synth_spec(cfg, i, val);
            let cloud = generate_scene(&spec)?;
            let name = format!("{i:06}");
            write_kitti_scan(
                &cloud,
                &dir.join("velodyne").join(format!("{name}.bin")),
                Some(&dir.join("labels").join(format!("{name}.label"))),
            )?;
            log(&format!("scan sequence={seq} name={name} points={}", cloud.len()));
            rows.push((seq, name, cloud.len(), spec.seed));
        }
    }
    let remap_path = root.join("remap.txt");
    write_file(&remap_path, &RemapTable::identity(cfg.model.classes).to_text())?;

    let mut data_cfg = cfg.clone();
    data_cfg.data_root = root.clone();
    data_cfg.train_sequences = vec![SYNTH_TRAIN_SEQUENCE.into()];
    data_cfg.val_sequences = vec![SYNTH_VAL_SEQUENCE.into()];
    data_cfg.remap = remap_path.to_string_lossy().into_owned();
    write_file(&root.join("dataset.cfg"), &data_cfg.to_text())?;

    let mut table = format!("{:<10} {:<8} {:>8} {:>10}\n", "sequence", "scan", "points", "seed");
    for (seq, name, n, seed) in &rows {
        table += &format!("{seq:<10} {name:<8} {n:>8} {seed:>10}\n");
    }
    let total: usize = rows.iter().map(|r| r.2).sum();
    let metrics = format!(
        "scans={}\npoints={total}\nroot={}\nremap={}\nconfig={}\n",
        rows.len(),
        root.display(),
        remap_path.display(),
        root.join("dataset.cfg").display()
    );
    write_reports(cfg, "make-synth", &table, &metrics)
}

pub fn cmd_train(cfg: &RunConfig, log: Log) -> Result<String> {
    create_dir(&cfg.out_dir)?;
    write_file(&cfg.out_dir.join("config.txt"), &cfg.to_text())?;
    for line in cfg.to_text().lines() {
        log(&format!("config {line}"));
    }
    let data = load_data(cfg)?;
    let train_scans = prepare_all(&data.train, &cfg.model, cfg.loss.k)?;
    let val_scans = prepare_all(&data.val, &cfg.model, cfg.loss.k)?;
    let mut lines = Vec::new();
    let outcome = train(
        cfg,
        &train_scans,
        &val_scans,
        &data.class_names,
        Some(&CheckpointDir(cfg.out_dir.clone())),
        &mut |line| {
            lines.push(line.to_string());
            log(line);
        },
    )?;
    let mut log_file = String::new();
    for l in &lines {
        log_file += l;
        log_file.push('\n');
    }
    append(&cfg.out_dir.join("train.log"), &log_file)?;

    let mut table = format!("{:>6} {:>12} {:>10} {:>8} {:>9}\n", "epoch", "loss", "train_acc", "miou", "time_s");
    for e in &outcome.history {
        let miou = e.miou.map_or("-".to_string(), |m| format!("{m:.4}"));
        table += &format!("{:>6} {:>12.6} {:>10.4} {:>8} {:>9.2}\n", e.epoch, e.loss, e.train_accuracy, miou, e.seconds);
    }
    let last = outcome.history.last();
    let metrics = format!(
        "epochs_run={}\nfinal_loss={}\nfinal_train_accuracy={}\nbest_miou={}\nstopped_early={}\nseconds={}\ncheckpoint={}\n",
        outcome.history.len(),
        last.map_or(f64::NAN, |e| e.loss),
        last.map_or(f64::NAN, |e| e.train_accuracy),
        outcome.best_miou.unwrap_or(f64::NAN),
        outcome.stopped_early,
        last.map_or(0.0, |e| e.seconds),
        cfg.out_dir.join("best.ckpt").display()
    );
    write_reports(cfg, "train", &table, &metrics)
}

fn append(path: &Path, text: &str) -> Result<()> {
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_model(cfg: &RunConfig) -> Result<Model> {
    let path = cfg.checkpoint_path();
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let mut model = Model::new(cfg.model.clone())?;
    model.load_checkpoint(&bytes, cfg.adam())?;
    Ok(model)
}

/// Evaluation scans: the validation split, or the training split when no
/// validation data is configured.
fn eval_scans(cfg: &RunConfig) -> Result<(Vec<String>, Vec<PreparedScan>, Vec<String>)> {
    let data = load_data(cfg)?;
    let clouds = if data.val.is_empty() { data.train } else { data.val };
    let names = clouds.iter().map(|(n, _)| n.clone()).collect();
    Ok((names, prepare_all(&clouds, &cfg.model, cfg.loss.k)?, data.class_names))
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<(String, EvalReport)> {
    let model = load_model(cfg)?;
    let (_, scans, class_names) = eval_scans(cfg)?;
    if scans.is_empty() {
        return Err(Error::Data("no scans to evaluate".into()));
    }
    let report = evaluate(&model, &scans, &class_names)?;
    let table = write_reports(cfg, "eval", &report.table(), &report.metrics())?;
    Ok((table, report))
}

/// Colored PLY per scan under `<out_dir>/infer`, plus error maps when asked.
pub fn cmd_infer(cfg: &RunConfig, log: Log) -> Result<String> {
    let model = load_model(cfg)?;
    let (names, scans, _) = eval_scans(cfg)?;
    let dir = cfg.out_dir.join("infer");
    create_dir(&dir)?;
    let palette = default_palette(cfg.model.classes);
    let mut table = format!("{:<20} {:>8} {:>10}  {}\n", "scan", "points", "accuracy", "file");
    let mut metrics = String::new();
    let mut written: Vec<PathBuf> = Vec::new();
    for (name, scan) in names.iter().zip(&scans) {
        let pred = model.infer(scan)?;
        let path = dir.join(format!("{name}.ply"));
        export_ply(&path, &scan.cloud.xyz, &label_colors(&pred, &palette)?, cfg.infer_format)?;
        written.push(path.clone());
        let accuracy = match scan.cloud.labels.as_deref() {
            Some(truth) => {
                if cfg.infer_errors {
                    let epath = dir.join(format!("{name}.errors.ply"));
                    export_ply(&epath, &scan.cloud.xyz, &error_colors(&pred, truth), cfg.infer_format)?;
                    written.push(epath);
                }
                let valid: Vec<(u32, u32)> = pred
                    .iter()
                    .zip(truth)
                    .filter(|(_, &t)| t != pcsc_core::IGNORE_LABEL)
                    .map(|(&p, &t)| (p, t))
                    .collect();
                let hit = valid.iter().filter(|(p, t)| p == t).count();
                Some(hit as f64 / valid.len().max(1) as f64)
            }
            None => None,
        };
        let acc = accuracy.map_or("-".to_string(), |a| format!("{a:.4}"));
        log(&format!("infer scan={name} points={} accuracy={acc}", scan.len()));
        table += &format!("{name:<20} {:>8} {acc:>10}  {}\n", scan.len(), path.display());
        metrics += &format!("scan.{name}.points={}\nscan.{name}.accuracy={acc}\n", scan.len());
    }
    metrics += &format!("scans={}\nfiles={}\n", scans.len(), written.len());
    write_reports(cfg, "infer", &table, &metrics)
}

pub fn cmd_ablate_voxel(cfg: &RunConfig, log: Log) -> Result<String> {
    let result = ablate_voxel(cfg, log)?;
    write_reports(cfg, "ablate-voxel", &result.table(), &result.metrics())
}

pub fn cmd_ablate_loss(cfg: &RunConfig, log: Log) -> Result<String> {
    let result = ablate_loss(cfg, log)?;
    write_reports(cfg, "ablate-loss", &result.table(), &result.metrics())
}

pub fn cmd_bench(cfg: &RunConfig) -> Result<String> {
    let report = bench(cfg)?;
    write_reports(cfg, "bench", &report.table(), &report.metrics())
}

/// Fails with [`Error::CheckFailed`] naming every component over tolerance.
pub fn cmd_gradcheck(cfg: &RunConfig) -> Result<String> {
    let results = run_suite(&cfg.gradcheck_fault)?;
    let table = write_reports(cfg, "gradcheck", &gradcheck::table(&results), &gradcheck::metrics(&results))?;
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed()).map(|r| r.name).collect();
    if failed.is_empty() {
        Ok(table)
    } else {
        Err(Error::CheckFailed(format!(
            "gradient check failed for {} (tolerance {:e})",
            failed.join(","),
            gradcheck::TOLERANCE
        )))
    }
}
