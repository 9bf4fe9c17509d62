//! Per-stage inference timing and the sparse-versus-dense convolution
//! comparison.

use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::Instant;

use pcsc_core::geometry::{relative_coords, voxelize, PointCloud, VoxelCoord};
use pcsc_core::model::{build_input_features, devoxelize_concat, predict, Model};
use pcsc_core::nn::{init, softmax_rows};
use pcsc_core::sparse::{build_rulebook_submanifold, ConvKind, Sites, SparseConv, SparseTensor, UNetGeometry};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::dense::{dense_conv, DenseGrid};
use crate::synth::generate_scene;
use crate::train::{load_data, synth_spec};
use crate::Result;

pub const STAGES: [&str; 5] = ["voxelize", "rulebook", "extract", "unet", "head"];

#[derive(Debug, Clone, PartialEq)]
pub struct StageTimes {
    pub scans: usize,
    pub points: usize,
    /// Seconds per stage, summed over scans, in [`STAGES`] order.
    pub stages: [f64; 5],
    pub total: f64,
}

impl StageTimes {
    pub fn scans_per_sec(&self) -> f64 {
        self.scans as f64 / self.total
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvTiming {
    pub occupancy: f64,
    pub active: usize,
    pub rulebook_s: f64,
    pub sparse_s: f64,
    pub dense_s: f64,
    /// Largest deviation between the two at the active sites.
    pub max_abs_diff: f64,
}

impl ConvTiming {
    pub fn speedup(&self) -> f64 {
        self.dense_s / self.sparse_s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub stages: StageTimes,
    pub grid: usize,
    pub width: usize,
    pub conv: Vec<ConvTiming>,
}

impl BenchReport {
    pub fn table(&self) -> String {
        let s = &self.stages;
        let mut out = format!("{:<10} {:>12}\n", "stage", "ms/scan");
        for (name, t) in STAGES.iter().zip(&s.stages) {
            out += &format!("{name:<10} {:>12.3}\n", 1e3 * t / s.scans as f64);
        }
        out += &format!("{:<10} {:>12.3}\n", "total", 1e3 * s.total / s.scans as f64);
        out += &format!("scans={} points={} scans_per_sec={:.3}\n\n", s.scans, s.points, s.scans_per_sec());
        out += &format!(
            "{:<10} {:>8} {:>12} {:>12} {:>12} {:>9} {:>10}\n",
            "occupancy", "active", "rulebook_ms", "sparse_ms", "dense_ms", "speedup", "max_diff"
        );
        for c in &self.conv {
            out += &format!(
                "{:<10} {:>8} {:>12.3} {:>12.3} {:>12.3} {:>9.2} {:>10.2e}\n",
                c.occupancy,
                c.active,
                1e3 * c.rulebook_s,
                1e3 * c.sparse_s,
                1e3 * c.dense_s,
                c.speedup(),
                c.max_abs_diff
            );
        }
        out += &format!("grid={}^3 width={}\n", self.grid, self.width);
        out
    }

    pub fn metrics(&self) -> String {
        let s = &self.stages;
        let mut out = format!("scans={}\npoints={}\n", s.scans, s.points);
        for (name, t) in STAGES.iter().zip(&s.stages) {
            out += &format!("stage.{name}_ms={:.6}\n", 1e3 * t / s.scans as f64);
        }
        out += &format!(
            "total_ms={:.6}\nscans_per_sec={:.6}\npoints_per_sec={:.3}\ngrid={}\nwidth={}\n",
            1e3 * s.total / s.scans as f64,
            s.scans_per_sec(),
            s.points as f64 / s.total,
            self.grid,
            self.width
        );
        for c in &self.conv {
            let key = format!("conv.occupancy_{}", c.occupancy);
            out += &format!(
                "{key}.active={}\n{key}.rulebook_ms={:.6}\n{key}.sparse_ms={:.6}\n{key}.dense_ms={:.6}\n{key}.speedup={:.6}\n{key}.max_abs_diff={:e}\n",
                c.active,
                1e3 * c.rulebook_s,
                1e3 * c.sparse_s,
                1e3 * c.dense_s,
                c.speedup(),
                c.max_abs_diff
            );
        }
        out
    }
}

fn bench_clouds(cfg: &RunConfig) -> Result<Vec<PointCloud>> {
    if cfg.data_root.as_os_str().is_empty() {
        return (0..cfg.bench_scans)
            .map(|i| generate_scene(&synth_spec(cfg, i, true)))
            .collect();
    }
    let data = load_data(cfg)?;
    Ok(data
        .val
        .into_iter()
        .chain(data.train)
        .take(cfg.bench_scans)
        .map(|(_, c)| c)
        .collect())
}

/// Times each inference stage of a freshly initialized model.
pub fn time_stages(model: &Model, clouds: &[PointCloud]) -> Result<StageTimes> {
    let cfg = &model.config;
    let mut stages = [0.0; 5];
    let mut points = 0;
    let start = Instant::now();
    for cloud in clouds {
        let mut t = Instant::now();
        let mut lap = |i: usize, stages: &mut [f64; 5]| {
            stages[i] += t.elapsed().as_secs_f64();
            t = Instant::now();
        };
        let vmap = voxelize(cloud, cfg.voxel_size)?;
        let rel = relative_coords(cloud, &vmap);
        let features = build_input_features(cloud, &rel, cfg.intensity)?;
        lap(0, &mut stages);
        let sites = Arc::new(Sites::new(vmap.coords().to_vec(), 1)?);
        let geometry = UNetGeometry::build(&sites, cfg.unet_widths.len(), cfg.kernel_size, 2)?;
        lap(1, &mut stages);
        let (ext, _) = model.extractor.extract(&features, &rel, &vmap)?;
        lap(2, &mut stages);
        let x = SparseTensor::new(sites, ext.voxel_feats)?;
        let (u, _) = model.unet.forward(&x, &geometry)?;
        lap(3, &mut stages);
        let concat = devoxelize_concat(&ext.point_feats, &u.feats, &vmap)?;
        let head_in = match &model.scale_shift {
            Some(ss) => ss.forward(&concat)?,
            None => concat,
        };
        let (logits, _) = model.head.forward(&head_in)?;
        let labels = predict(&softmax_rows(&logits));
        lap(4, &mut stages);
        points += labels.len();
    }
    Ok(StageTimes {
        scans: clouds.len(),
        points,
        stages,
        total: start.elapsed().as_secs_f64(),
    })
}

/// Distinct random cells of a `side³` grid at the given occupancy.
pub fn random_sites(rng: &mut ChaCha8Rng, side: usize, occupancy: f64) -> Vec<VoxelCoord> {
    let cells = side * side * side;
    let target = ((cells as f64 * occupancy).round() as usize).clamp(1, cells);
    let mut set = BTreeSet::new();
    while set.len() < target {
        let i = rng.gen_range(0..cells);
        set.insert([(i / (side * side)) as i32, ((i / side) % side) as i32, (i % side) as i32]);
    }
    set.into_iter().collect()
}

fn min_time<T>(reps: usize, mut f: impl FnMut() -> Result<T>) -> Result<(f64, T)> {
    let mut best = f64::INFINITY;
    let mut last = None;
    for _ in 0..reps.max(1) {
        let t = Instant::now();
        let v = f()?;
        best = best.min(t.elapsed().as_secs_f64());
        last = Some(v);
    }
    Ok((best, last.expect("at least one repetition")))
}

/// Submanifold sparse conv against the dense zero-filled oracle on a random
/// pattern, single-threaded.
pub fn time_conv(side: usize, width: usize, occupancy: f64, seed: u64) -> Result<ConvTiming> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coords = random_sites(&mut rng, side, occupancy);
    let mut irng = init::rng(seed);
    let conv = SparseConv::new("bench", &mut irng, ConvKind::Submanifold, 3, width, width);
    let feats = init::uniform(&mut irng, coords.len(), width, 1.0);
    let sites = Arc::new(Sites::new(coords, 1)?);
    let (rulebook_s, rb) = min_time(3, || Ok(build_rulebook_submanifold(&sites, 3)?))?;
    let (sparse_s, sparse) = min_time(3, || Ok(conv.forward_feats(&feats, &rb)?))?;
    let grid = DenseGrid::from_sparse(side, sites.coords(), &feats)?;
    let (dense_s, dense) = min_time(1, || dense_conv(&grid, &conv, 1))?;
    let mut max_abs_diff: f64 = 0.0;
    for (r, c) in sites.coords().iter().enumerate() {
        let d = dense.row_at(c).expect("active site inside the grid");
        for (a, b) in sparse.row(r).iter().zip(d) {
            max_abs_diff = max_abs_diff.max((a - b).abs());
        }
    }
    Ok(ConvTiming {
        occupancy,
        active: sites.len(),
        rulebook_s,
        sparse_s,
        dense_s,
        max_abs_diff,
    })
}

pub fn bench(cfg: &RunConfig) -> Result<BenchReport> {
    let model = Model::new(cfg.model.clone())?;
    let clouds = bench_clouds(cfg)?;
    if clouds.is_empty() {
        return Err(crate::Error::Data("no scans to benchmark".into()));
    }
    let stages = time_stages(&model, &clouds)?;
    let width = cfg.model.extraction_width;
    let conv = cfg
        .bench_occupancy
        .iter()
        .enumerate()
        .map(|(i, &occ)| time_conv(cfg.bench_grid, width, occ, cfg.model.seed.wrapping_add(i as u64)))
        .collect::<Result<Vec<_>>>()?;
    Ok(BenchReport {
        stages,
        grid: cfg.bench_grid,
        width,
        conv,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_sites_are_distinct_and_sized() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = random_sites(&mut rng, 8, 0.25);
        assert_eq!(s.len(), 128);
        assert!(s.windows(2).all(|w| w[0] < w[1]));
        assert!(s.iter().all(|c| c.iter().all(|&v| (0..8).contains(&v))));
    }

    #[test]
    fn small_conv_timing_agrees_with_dense() {
        let t = time_conv(10, 4, 0.1, 9).unwrap();
        assert_eq!(t.active, 100);
        assert!(t.max_abs_diff < 1e-9);
    }

    #[test]
    fn stage_times_account_for_total() {
        let mut cfg = RunConfig {
            bench_scans: 2,
            ..RunConfig::default()
        };
        cfg.synth.extent = 10.0;
        cfg.synth.buildings = 1;
        cfg.synth.cars = 1;
        cfg.synth.poles = 1;
        cfg.synth.trees = 1;
        cfg.model.unet_widths = vec![8, 8, 8];
        cfg.model.extraction_width = 8;
        cfg.model.decoder_width = 8;
        cfg.model.head_hidden = 8;
        let model = Model::new(cfg.model.clone()).unwrap();
        let clouds = bench_clouds(&cfg).unwrap();
        let t = time_stages(&model, &clouds).unwrap();
        let sum: f64 = t.stages.iter().sum();
        assert!(sum <= t.total * 1.05 && sum >= t.total * 0.95, "{sum} vs {}", t.total);
    }
}
