//! Data loading, the training loop, evaluation and the two ablation sweeps.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use pcsc_core::geometry::PointCloud;
use pcsc_core::model::{predict, Model, ModelConfig, PreparedScan};
use pcsc_core::nn::AdamState;
use pcsc_core::IGNORE_LABEL;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::dataset::split_sequences;
use crate::metrics::{ConfusionMatrix, EvalReport};
use crate::remap::{RemapTable, KITTI_CLASS_NAMES};
use crate::synth::{generate_scene, SceneSpec, CLASS_NAMES};
use crate::{Error, Result};

/// Seed offset separating validation scenes from training scenes.
const VAL_SEED_OFFSET: u64 = 1_000_000;

#[derive(Debug, Clone)]
pub struct Data {
    pub train: Vec<(String, PointCloud)>,
    pub val: Vec<(String, PointCloud)>,
    pub class_names: Vec<String>,
}

pub fn resolve_remap(cfg: &RunConfig) -> Result<RemapTable> {
    match cfg.remap.as_str() {
        "kitti19" => Ok(RemapTable::kitti19()),
        "identity" => Ok(RemapTable::identity(cfg.model.classes)),
        path => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            RemapTable::parse(&text)
        }
    }
}

pub fn class_names(cfg: &RunConfig, remap: Option<&RemapTable>) -> Vec<String> {
    let names: &[&str] = if cfg.data_root.as_os_str().is_empty() {
        &CLASS_NAMES
    } else if remap.is_some_and(|r| *r == RemapTable::kitti19()) {
        &KITTI_CLASS_NAMES
    } else {
        &[]
    };
    (0..cfg.model.classes)
        .map(|c| names.get(c).map_or_else(|| format!("class{c}"), |s| s.to_string()))
        .collect()
}

pub fn synth_spec(cfg: &RunConfig, index: usize, val: bool) -> SceneSpec {
    let offset = if val { VAL_SEED_OFFSET } else { 0 };
    SceneSpec {
        seed: cfg.synth.seed.wrapping_add(offset).wrapping_add(index as u64),
        ..cfg.synth.clone()
    }
}

/// Synthetic scenes when no dataset root is configured, otherwise the
/// configured KITTI sequences.
pub fn load_data(cfg: &RunConfig) -> Result<Data> {
    if cfg.data_root.as_os_str().is_empty() {
        let make = |n: usize, val: bool| -> Result<Vec<(String, PointCloud)>> {
            (0..n)
                .map(|i| {
                    let spec = synth_spec(cfg, i, val);
                    Ok((format!("synth-{}", spec.seed), generate_scene(&spec)?))
                })
                .collect()
        };
        return Ok(Data {
            train: make(cfg.synth_train_scenes, false)?,
            val: make(cfg.synth_val_scenes, true)?,
            class_names: class_names(cfg, None),
        });
    }
    let remap = resolve_remap(cfg)?;
    if remap.classes() > cfg.model.classes {
        return Err(Error::Config(format!(
            "remap produces {} classes but classes = {}",
            remap.classes(),
            cfg.model.classes
        )));
    }
    let splits = split_sequences(&cfg.data_root, &cfg.train_sequences, &cfg.val_sequences)?;
    let load = |files: &[crate::dataset::ScanFile]| -> Result<Vec<(String, PointCloud)>> {
        files
            .iter()
            .map(|f| Ok((scan_name(&f.bin), f.load(&remap)?)))
            .collect()
    };
    Ok(Data {
        train: load(&splits.train)?,
        val: load(&splits.val)?,
        class_names: class_names(cfg, Some(&remap)),
    })
}

fn scan_name(bin: &Path) -> String {
    let seq = bin
        .parent()
        .and_then(Path::parent)
        .and_then(Path::file_name)
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let stem = bin.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    format!("{seq}-{stem}")
}

pub fn prepare_all(clouds: &[(String, PointCloud)], model: &ModelConfig, knn_k: usize) -> Result<Vec<PreparedScan>> {
    clouds
        .iter()
        .map(|(_, c)| {
            if let Some(labels) = &c.labels {
                check_labels(labels, model.classes)?;
            }
            Ok(PreparedScan::new(c.clone(), model, knn_k)?)
        })
        .collect()
}

fn check_labels(labels: &[u32], classes: usize) -> Result<()> {
    match labels.iter().position(|&l| l != IGNORE_LABEL && l as usize >= classes) {
        Some(i) => Err(Error::Data(format!("label {} at point {i} exceeds {classes} classes", labels[i]))),
        None => Ok(()),
    }
}

/// Confusion, overall and boundary accuracy of `model` over labeled scans.
pub fn evaluate(model: &Model, scans: &[PreparedScan], class_names: &[String]) -> Result<EvalReport> {
    let start = Instant::now();
    let mut confusion = ConfusionMatrix::new(model.config.classes);
    let (mut b_hit, mut b_total) = (0usize, 0usize);
    let mut points = 0;
    for scan in scans {
        let pred = model.infer(scan)?;
        let truth = scan.labels()?;
        confusion.add(truth, &pred)?;
        points += scan.len();
        if let Some(b) = &scan.boundary {
            for ((&p, &t), &nd) in pred.iter().zip(truth).zip(&b.n_diff) {
                if nd > 0 && t != IGNORE_LABEL {
                    b_total += 1;
                    b_hit += usize::from(p == t);
                }
            }
        }
    }
    Ok(EvalReport {
        confusion,
        class_names: class_names.to_vec(),
        scans: scans.len(),
        points,
        seconds: start.elapsed().as_secs_f64(),
        boundary_accuracy: (b_total > 0).then(|| b_hit as f64 / b_total as f64),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub train_accuracy: f64,
    pub miou: Option<f64>,
    pub seconds: f64,
}

impl fmt::Display for EpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "epoch={} loss={:.6} train_acc={:.4}", self.epoch, self.loss, self.train_accuracy)?;
        match self.miou {
            Some(m) => write!(f, " miou={m:.4}")?,
            None => write!(f, " miou=nan")?,
        }
        write!(f, " time={:.2}", self.seconds)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub history: Vec<EpochLog>,
    pub best_miou: Option<f64>,
    pub stopped_early: bool,
}

/// Where the training loop keeps its checkpoints.
#[derive(Debug, Clone)]
pub struct CheckpointDir(pub PathBuf);

impl CheckpointDir {
    pub fn last(&self) -> PathBuf {
        self.0.join("last.ckpt")
    }
    pub fn best(&self) -> PathBuf {
        self.0.join("best.ckpt")
    }
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Runs `cfg.epochs` epochs of single-step-per-batch training. Scan order is
/// reshuffled each epoch from the seed, so a resumed run replays the same
/// sequence as an uninterrupted one.
pub fn train(
    cfg: &RunConfig,
    train: &[PreparedScan],
    val: &[PreparedScan],
    class_names: &[String],
    checkpoints: Option<&CheckpointDir>,
    log: &mut dyn FnMut(&str),
) -> Result<TrainOutcome> {
    if train.is_empty() {
        return Err(Error::Data("no training scans".into()));
    }
    let mut model = Model::new(cfg.model.clone())?;
    let mut adam = AdamState::new(cfg.adam(), &model);
    let steps_per_epoch = train.len().div_ceil(cfg.batch_size);
    let mut first_epoch = 0;
    if let Some(dir) = checkpoints.filter(|_| cfg.resume) {
        let path = dir.last();
        if path.exists() {
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            adam = model
                .load_checkpoint(&bytes, cfg.adam())?
                .ok_or_else(|| Error::format(&path, "checkpoint has no optimizer state"))?;
            first_epoch = adam.step as usize / steps_per_epoch;
            log(&format!("resume epoch={first_epoch} step={}", adam.step));
        }
    }

    let mut history = Vec::new();
    let mut best: Option<f64> = None;
    let mut stopped_early = false;
    let start = Instant::now();
    for epoch in first_epoch..cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        if cfg.shuffle {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.model.seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
            order.shuffle(&mut rng);
        }
        let (mut loss, mut correct, mut labeled) = (0.0, 0, 0);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&PreparedScan> = chunk.iter().map(|&i| &train[i]).collect();
            let stats = model.train_step_stats(&batch, &mut adam, &cfg.loss)?;
            loss += stats.loss;
            correct += stats.correct;
            labeled += stats.labeled;
        }
        let train_accuracy = if labeled > 0 { correct as f64 / labeled as f64 } else { 0.0 };
        let evaluate_now = !val.is_empty() && cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0;
        let miou = if evaluate_now {
            Some(evaluate(&model, val, class_names)?.miou())
        } else {
            None
        };
        let entry = EpochLog {
            epoch: epoch + 1,
            loss: loss / steps_per_epoch as f64,
            train_accuracy,
            miou,
            seconds: start.elapsed().as_secs_f64(),
        };
        log(&entry.to_string());
        history.push(entry);

        if let Some(dir) = checkpoints {
            write(&dir.last(), &model.save_checkpoint(Some(&adam))?)?;
            let improved = match (miou, best) {
                (Some(m), Some(b)) => m > b,
                (Some(_), None) => true,
                (None, _) => val.is_empty(),
            };
            if improved {
                write(&dir.best(), &model.save_checkpoint(None)?)?;
            }
        }
        if let Some(m) = miou {
            best = Some(best.map_or(m, |b| b.max(m)));
        }
        if cfg.target_accuracy > 0.0 && train_accuracy >= cfg.target_accuracy {
            stopped_early = true;
            log(&format!("stop epoch={} train_acc={train_accuracy:.4}", epoch + 1));
            break;
        }
    }
    Ok(TrainOutcome {
        model,
        history,
        best_miou: best,
        stopped_early,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelAblationRow {
    pub voxel_size: f64,
    pub seed: u64,
    pub miou: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelAblation {
    pub rows: Vec<VoxelAblationRow>,
}

impl VoxelAblation {
    pub fn mean_miou(&self, voxel_size: f64) -> f64 {
        mean(self.rows.iter().filter(|r| r.voxel_size == voxel_size).map(|r| r.miou))
    }

    pub fn sizes(&self) -> Vec<f64> {
        let mut sizes: Vec<f64> = Vec::new();
        for r in &self.rows {
            if !sizes.contains(&r.voxel_size) {
                sizes.push(r.voxel_size);
            }
        }
        sizes
    }

    pub fn table(&self) -> String {
        let mut s = format!("{:<12} {:>8} {:>10}\n", "voxel_size", "seed", "miou");
        for r in &self.rows {
            s += &format!("{:<12} {:>8} {:>10.4}\n", r.voxel_size, r.seed, r.miou);
        }
        for v in self.sizes() {
            s += &format!("{:<12} {:>8} {:>10.4}\n", v, "mean", self.mean_miou(v));
        }
        s
    }

    pub fn metrics(&self) -> String {
        self.sizes()
            .iter()
            .map(|v| format!("miou.voxel_{v}={:.6}\n", self.mean_miou(*v)))
            .collect()
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

/// Configuration for repetition `rep` of an ablation: fresh scenes and a
/// fresh initialization per repetition.
pub fn ablation_config(cfg: &RunConfig, rep: usize) -> RunConfig {
    let mut c = cfg.clone();
    c.model.seed = cfg.model.seed.wrapping_add(rep as u64);
    c.synth.seed = cfg.synth.seed.wrapping_add(1000 * rep as u64);
    c.resume = false;
    c
}

fn train_and_eval(cfg: &RunConfig, data: &Data) -> Result<EvalReport> {
    let train_scans = prepare_all(&data.train, &cfg.model, cfg.loss.k)?;
    let val_scans = prepare_all(&data.val, &cfg.model, cfg.loss.k)?;
    if val_scans.is_empty() {
        return Err(Error::Data("ablations need validation scans".into()));
    }
    let quiet = RunConfig { eval_every: 0, ..cfg.clone() };
    let outcome = train(&quiet, &train_scans, &[], &data.class_names, None, &mut |_| {})?;
    evaluate(&outcome.model, &val_scans, &data.class_names)
}

/// One model per voxel size and repetition, each evaluated on held-out scans.
pub fn ablate_voxel(cfg: &RunConfig, log: &mut dyn FnMut(&str)) -> Result<VoxelAblation> {
    if cfg.ablate_voxel_sizes.len() < 2 {
        return Err(Error::Config("ablate_voxel_sizes needs at least two sizes".into()));
    }
    let mut rows = Vec::new();
    for rep in 0..cfg.ablate_seeds {
        let base = ablation_config(cfg, rep);
        let data = load_data(&base)?;
        for &size in &cfg.ablate_voxel_sizes {
            let mut run = base.clone();
            run.model.voxel_size = size;
            let report = train_and_eval(&run, &data)?;
            log(&format!("voxel_size={size} seed={} miou={:.4}", run.model.seed, report.miou()));
            rows.push(VoxelAblationRow {
                voxel_size: size,
                seed: run.model.seed,
                miou: report.miou(),
            });
        }
    }
    Ok(VoxelAblation { rows })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossAblationRow {
    pub seed: u64,
    pub w_pa: f64,
    pub miou: f64,
    pub accuracy: f64,
    pub boundary_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossAblation {
    pub w_pa: f64,
    pub rows: Vec<LossAblationRow>,
}

impl LossAblation {
    fn arm(&self, combined: bool) -> impl Iterator<Item = &LossAblationRow> {
        self.rows.iter().filter(move |r| (r.w_pa != 0.0) == combined)
    }

    pub fn mean_boundary_accuracy(&self, combined: bool) -> f64 {
        mean(self.arm(combined).map(|r| r.boundary_accuracy))
    }

    pub fn mean_miou(&self, combined: bool) -> f64 {
        mean(self.arm(combined).map(|r| r.miou))
    }

    pub fn table(&self) -> String {
        let mut s = format!("{:<10} {:>8} {:>8} {:>10} {:>10} {:>10}\n", "loss", "seed", "w_pa", "miou", "acc", "boundary");
        for r in &self.rows {
            let name = if r.w_pa == 0.0 { "ce" } else { "ce+pa" };
            s += &format!(
                "{:<10} {:>8} {:>8} {:>10.4} {:>10.4} {:>10.4}\n",
                name, r.seed, r.w_pa, r.miou, r.accuracy, r.boundary_accuracy
            );
        }
        for (name, combined) in [("ce", false), ("ce+pa", true)] {
            s += &format!(
                "{:<10} {:>8} {:>8} {:>10.4} {:>10} {:>10.4}\n",
                name,
                "mean",
                "",
                self.mean_miou(combined),
                "",
                self.mean_boundary_accuracy(combined)
            );
        }
        s
    }

    pub fn metrics(&self) -> String {
        format!(
            "miou.ce={:.6}\nmiou.combined={:.6}\nboundary_accuracy.ce={:.6}\nboundary_accuracy.combined={:.6}\nw_pa={}\n",
            self.mean_miou(false),
            self.mean_miou(true),
            self.mean_boundary_accuracy(false),
            self.mean_boundary_accuracy(true),
            self.w_pa
        )
    }
}

/// Cross-entropy alone against the combined loss, matched scenes and seeds.
pub fn ablate_loss(cfg: &RunConfig, log: &mut dyn FnMut(&str)) -> Result<LossAblation> {
    if cfg.loss.w_pa == 0.0 {
        return Err(Error::Config("ablate-loss compares against w_pa > 0; got w_pa = 0".into()));
    }
    let mut rows = Vec::new();
    for rep in 0..cfg.ablate_seeds {
        let base = ablation_config(cfg, rep);
        let data = load_data(&base)?;
        for w_pa in [0.0, cfg.loss.w_pa] {
            let mut run = base.clone();
            run.loss.w_pa = w_pa;
            let report = train_and_eval(&run, &data)?;
            let boundary = report.boundary_accuracy.unwrap_or(f64::NAN);
            log(&format!(
                "w_pa={w_pa} seed={} miou={:.4} boundary_acc={boundary:.4}",
                run.model.seed,
                report.miou()
            ));
            rows.push(LossAblationRow {
                seed: run.model.seed,
                w_pa,
                miou: report.miou(),
                accuracy: report.confusion.accuracy(),
                boundary_accuracy: boundary,
            });
        }
    }
    Ok(LossAblation {
        w_pa: cfg.loss.w_pa,
        rows,
    })
}

/// Training-set accuracy of a finished model, measured with a clean pass.
pub fn train_accuracy(model: &Model, scans: &[PreparedScan]) -> Result<f64> {
    let (mut hit, mut total) = (0usize, 0usize);
    for scan in scans {
        let (probs, _) = model.forward(scan)?;
        for (p, &t) in predict(&probs).iter().zip(scan.labels()?) {
            if t != IGNORE_LABEL {
                total += 1;
                hit += usize::from(*p == t);
            }
        }
    }
    Ok(if total > 0 { hit as f64 / total as f64 } else { 0.0 })
}
