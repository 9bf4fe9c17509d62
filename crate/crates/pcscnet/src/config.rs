//! Run configuration: `key = value` lines with `#` comments, overridable by
//! `--key value` flags. Unknown keys are errors.

use std::fs;
use std::path::{Path, PathBuf};

use pcsc_core::loss::LossConfig;
use pcsc_core::model::ModelConfig;
use pcsc_core::nn::AdamConfig;

use crate::ply::PlyFormat;
use crate::synth::SceneSpec;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub shuffle: bool,
    /// Stop once the training accuracy of an epoch reaches this (0 disables).
    pub target_accuracy: f64,
    /// Evaluate on the validation split every this many epochs.
    pub eval_every: usize,
    /// KITTI-layout dataset root; empty means synthetic scenes.
    pub data_root: PathBuf,
    pub train_sequences: Vec<String>,
    pub val_sequences: Vec<String>,
    /// `kitti19`, `identity`, or a path to a remap file.
    pub remap: String,
    pub synth: SceneSpec,
    pub synth_train_scenes: usize,
    pub synth_val_scenes: usize,
    pub out_dir: PathBuf,
    /// Checkpoint read by eval and infer; empty means `<out_dir>/best.ckpt`.
    pub checkpoint: PathBuf,
    pub resume: bool,
    pub ablate_voxel_sizes: Vec<f64>,
    pub ablate_seeds: usize,
    pub bench_scans: usize,
    pub bench_grid: usize,
    pub bench_occupancy: Vec<f64>,
    pub infer_format: PlyFormat,
    pub infer_errors: bool,
    /// Component whose analytic gradient the gradient checker corrupts.
    pub gradcheck_fault: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig {
                classes: 5,
                ..ModelConfig::default()
            },
            loss: LossConfig::default(),
            epochs: 150,
            lr: 1e-3,
            batch_size: 1,
            shuffle: true,
            target_accuracy: 0.0,
            eval_every: 1,
            data_root: PathBuf::new(),
            train_sequences: crate::dataset::DEFAULT_TRAIN.iter().map(|s| s.to_string()).collect(),
            val_sequences: crate::dataset::DEFAULT_VAL.iter().map(|s| s.to_string()).collect(),
            remap: "kitti19".into(),
            synth: SceneSpec::default(),
            synth_train_scenes: 5,
            synth_val_scenes: 2,
            out_dir: PathBuf::from("runs/default"),
            checkpoint: PathBuf::new(),
            resume: false,
            ablate_voxel_sizes: vec![0.1, 0.3],
            ablate_seeds: 3,
            bench_scans: 10,
            bench_grid: 64,
            bench_occupancy: vec![0.005, 0.01, 0.02],
            infer_format: PlyFormat::Binary,
            infer_errors: false,
            gradcheck_fault: String::new(),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got `{value}`"))),
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn parse_range(key: &str, value: &str) -> Result<(f64, f64)> {
    match parse_list::<f64>(key, value)?.as_slice() {
        [v] => Ok((*v, *v)),
        [a, b] if a <= b => Ok((*a, *b)),
        _ => Err(Error::Config(format!("{key}: expected `min, max`, got `{value}`"))),
    }
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")
}

fn range(r: (f64, f64)) -> String {
    format!("{}, {}", r.0, r.1)
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let m = &mut self.model;
        let s = &mut self.synth;
        match key {
            "voxel_size" => m.voxel_size = parse(key, v)?,
            "kernel_points" => m.kernel_points = parse(key, v)?,
            "intensity" => m.intensity = parse_bool(key, v)?,
            "extraction_width" => m.extraction_width = parse(key, v)?,
            "unet_widths" => m.unet_widths = parse_list(key, v)?,
            "decoder_width" => m.decoder_width = parse(key, v)?,
            "kernel_size" => m.kernel_size = parse(key, v)?,
            "head_hidden" => m.head_hidden = parse(key, v)?,
            "classes" => m.classes = parse(key, v)?,
            "scale_shift" => m.scale_shift = parse_bool(key, v)?,
            "seed" => m.seed = parse(key, v)?,
            "w_ce" => self.loss.w_ce = parse(key, v)?,
            "w_pa" => self.loss.w_pa = parse(key, v)?,
            "knn_k" => self.loss.k = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "shuffle" => self.shuffle = parse_bool(key, v)?,
            "target_accuracy" => self.target_accuracy = parse(key, v)?,
            "eval_every" => self.eval_every = parse(key, v)?,
            "data_root" => self.data_root = PathBuf::from(v),
            "train_sequences" => self.train_sequences = parse_list(key, v)?,
            "val_sequences" => self.val_sequences = parse_list(key, v)?,
            "remap" => self.remap = v.to_string(),
            "synth_train_scenes" => self.synth_train_scenes = parse(key, v)?,
            "synth_val_scenes" => self.synth_val_scenes = parse(key, v)?,
            "synth_extent" => s.extent = parse(key, v)?,
            "synth_ground" => s.ground = parse_bool(key, v)?,
            "synth_buildings" => s.buildings = parse(key, v)?,
            "synth_cars" => s.cars = parse(key, v)?,
            "synth_poles" => s.poles = parse(key, v)?,
            "synth_trees" => s.trees = parse(key, v)?,
            "synth_building_side" => s.building_side = parse_range(key, v)?,
            "synth_building_height" => s.building_height = parse_range(key, v)?,
            "synth_car_length" => s.car_length = parse_range(key, v)?,
            "synth_car_width" => s.car_width = parse(key, v)?,
            "synth_car_height" => s.car_height = parse(key, v)?,
            "synth_pole_radius" => s.pole_radius = parse_range(key, v)?,
            "synth_pole_height" => s.pole_height = parse_range(key, v)?,
            "synth_tree_radius" => s.tree_radius = parse_range(key, v)?,
            "synth_density" => s.density = parse(key, v)?,
            "synth_noise" => s.noise = parse(key, v)?,
            "synth_seed" => s.seed = parse(key, v)?,
            "out_dir" => self.out_dir = PathBuf::from(v),
            "checkpoint" => self.checkpoint = PathBuf::from(v),
            "resume" => self.resume = parse_bool(key, v)?,
            "ablate_voxel_sizes" => self.ablate_voxel_sizes = parse_list(key, v)?,
            "ablate_seeds" => self.ablate_seeds = parse(key, v)?,
            "bench_scans" => self.bench_scans = parse(key, v)?,
            "bench_grid" => self.bench_grid = parse(key, v)?,
            "bench_occupancy" => self.bench_occupancy = parse_list(key, v)?,
            "infer_format" => {
                self.infer_format = match v {
                    "binary" => PlyFormat::Binary,
                    "ascii" => PlyFormat::Ascii,
                    _ => return Err(Error::Config(format!("{key}: expected binary or ascii, got `{v}`"))),
                }
            }
            "infer_errors" => self.infer_errors = parse_bool(key, v)?,
            "gradcheck_fault" => self.gradcheck_fault = v.to_string(),
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Every key with its current value, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let m = &self.model;
        let s = &self.synth;
        vec![
            ("voxel_size", m.voxel_size.to_string()),
            ("kernel_points", m.kernel_points.to_string()),
            ("intensity", m.intensity.to_string()),
            ("extraction_width", m.extraction_width.to_string()),
            ("unet_widths", join(&m.unet_widths)),
            ("decoder_width", m.decoder_width.to_string()),
            ("kernel_size", m.kernel_size.to_string()),
            ("head_hidden", m.head_hidden.to_string()),
            ("classes", m.classes.to_string()),
            ("scale_shift", m.scale_shift.to_string()),
            ("seed", m.seed.to_string()),
            ("w_ce", self.loss.w_ce.to_string()),
            ("w_pa", self.loss.w_pa.to_string()),
            ("knn_k", self.loss.k.to_string()),
            ("epochs", self.epochs.to_string()),
            ("lr", self.lr.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("shuffle", self.shuffle.to_string()),
            ("target_accuracy", self.target_accuracy.to_string()),
            ("eval_every", self.eval_every.to_string()),
            ("data_root", self.data_root.display().to_string()),
            ("train_sequences", join(&self.train_sequences)),
            ("val_sequences", join(&self.val_sequences)),
            ("remap", self.remap.clone()),
            ("synth_train_scenes", self.synth_train_scenes.to_string()),
            ("synth_val_scenes", self.synth_val_scenes.to_string()),
            ("synth_extent", s.extent.to_string()),
            ("synth_ground", s.ground.to_string()),
            ("synth_buildings", s.buildings.to_string()),
            ("synth_cars", s.cars.to_string()),
            ("synth_poles", s.poles.to_string()),
            ("synth_trees", s.trees.to_string()),
            ("synth_building_side", range(s.building_side)),
            ("synth_building_height", range(s.building_height)),
            ("synth_car_length", range(s.car_length)),
            ("synth_car_width", s.car_width.to_string()),
            ("synth_car_height", s.car_height.to_string()),
            ("synth_pole_radius", range(s.pole_radius)),
            ("synth_pole_height", range(s.pole_height)),
            ("synth_tree_radius", range(s.tree_radius)),
            ("synth_density", s.density.to_string()),
            ("synth_noise", s.noise.to_string()),
            ("synth_seed", s.seed.to_string()),
            ("out_dir", self.out_dir.display().to_string()),
            ("checkpoint", self.checkpoint.display().to_string()),
            ("resume", self.resume.to_string()),
            ("ablate_voxel_sizes", join(&self.ablate_voxel_sizes)),
            ("ablate_seeds", self.ablate_seeds.to_string()),
            ("bench_scans", self.bench_scans.to_string()),
            ("bench_grid", self.bench_grid.to_string()),
            ("bench_occupancy", join(&self.bench_occupancy)),
            (
                "infer_format",
                match self.infer_format {
                    PlyFormat::Binary => "binary".into(),
                    PlyFormat::Ascii => "ascii".into(),
                },
            ),
            ("infer_errors", self.infer_errors.to_string()),
            ("gradcheck_fault", self.gradcheck_fault.clone()),
        ]
    }

    /// Applies `key = value` lines on top of the current values.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got `{line}`", lineno + 1)))?;
            self.set(key.trim(), value)
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    /// `--key value` pairs; dashes inside keys may be written as `-`.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, args: &[S]) -> Result<()> {
        let mut it = args.iter().map(AsRef::as_ref);
        while let Some(flag) = it.next() {
            let key = flag
                .strip_prefix("--")
                .ok_or_else(|| Error::Config(format!("expected `--key value`, got `{flag}`")))?;
            let (key, value) = match key.split_once('=') {
                Some((k, v)) => (k.to_string(), v.to_string()),
                None => {
                    let v = it
                        .next()
                        .ok_or_else(|| Error::Config(format!("flag --{key} needs a value")))?;
                    (key.to_string(), v.to_string())
                }
            };
            self.set(&key.replace('-', "_"), &value)?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be > 0, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be ≥ 1".into()));
        }
        if self.data_root.as_os_str().is_empty() && self.model.classes != crate::synth::CLASS_NAMES.len() {
            return Err(Error::Config(format!(
                "synthetic scenes have {} classes but classes = {}",
                crate::synth::CLASS_NAMES.len(),
                self.model.classes
            )));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        if self.checkpoint.as_os_str().is_empty() {
            self.out_dir.join("best.ckpt")
        } else {
            self.checkpoint.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.set("unet_widths", "8, 16").unwrap();
        cfg.set("synth_pole_radius", "0.05, 0.1").unwrap();
        cfg.set("infer_format", "ascii").unwrap();
        cfg.set("data_root", "/tmp/kitti").unwrap();
        assert_eq!(RunConfig::from_text(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn every_echoed_key_is_settable() {
        let mut cfg = RunConfig::default();
        for (k, v) in RunConfig::default().entries() {
            cfg.set(k, &v).unwrap();
        }
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn comments_and_overrides() {
        let mut cfg = RunConfig::from_text("# run\nepochs = 3  # short\n\nlr=0.01\n").unwrap();
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.lr, 0.01);
        cfg.apply_overrides(&["--epochs", "7", "--w-pa=0", "--unet_widths", "4,4"]).unwrap();
        assert_eq!(cfg.epochs, 7);
        assert_eq!(cfg.loss.w_pa, 0.0);
        assert_eq!(cfg.model.unet_widths, vec![4, 4]);
    }

    #[test]
    fn errors() {
        assert!(RunConfig::from_text("nonsense = 1").is_err());
        assert!(RunConfig::from_text("epochs 3").is_err());
        assert!(RunConfig::from_text("epochs = three").is_err());
        assert!(RunConfig::from_text("shuffle = maybe").is_err());
        let mut cfg = RunConfig::default();
        assert!(cfg.apply_overrides(&["--epochs"]).is_err());
        assert!(cfg.apply_overrides(&["epochs", "3"]).is_err());
        assert!(cfg.apply_overrides(&["--bogus", "3"]).is_err());
    }

    #[test]
    fn synthetic_needs_five_classes() {
        let mut cfg = RunConfig::default();
        cfg.validate().unwrap();
        cfg.model.classes = 19;
        assert!(cfg.validate().is_err());
        cfg.data_root = "/data".into();
        cfg.validate().unwrap();
    }
}
