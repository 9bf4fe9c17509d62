//! Central-difference gradient checks over every differentiable component
//! and the full network, on small random instances.

use std::sync::Arc;
use std::time::Instant;

use pcsc_core::geometry::{relative_coords, voxelize, Point, PointCloud, VoxelCoord};
use pcsc_core::kpconv::{KernelPointSet, PointConvExtractor};
use pcsc_core::loss::{combined_loss, cross_entropy, BoundaryInfo, LossConfig};
use pcsc_core::model::{build_input_features, Model, ModelConfig};
use pcsc_core::nn::{
    grad_check, init, relu, relu_backward, softmax_rows, GradCheckReport, Linear, Matrix, Mlp, Param, Parameterized,
    ScaleShift,
};
use pcsc_core::sparse::{
    build_rulebook_deconv, build_rulebook_strided, build_rulebook_submanifold, ConvKind, ResidualBlock, Rulebook,
    Sites, SparseConv, SparseTensor, UNet, UNetConfig, UNetGeometry,
};
use pcsc_core::IGNORE_LABEL;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

pub const COMPONENTS: [&str; 12] = [
    "linear",
    "relu",
    "softmax_ce",
    "combined_loss",
    "kpconv",
    "submanifold",
    "strided",
    "deconv",
    "residual",
    "unet",
    "head",
    "model",
];

/// Central-difference step.
pub const STEP: f64 = 1e-5;
/// Denominator floor of the relative error, so that gradients near zero
/// are compared on an absolute scale.
pub const FLOOR: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct ComponentResult {
    pub name: &'static str,
    pub report: GradCheckReport,
    pub seconds: f64,
}

impl ComponentResult {
    pub fn passed(&self) -> bool {
        self.report.max_rel_error < TOLERANCE
    }
}

/// A layer together with the input it is applied to, so that input
/// gradients are checked alongside parameter gradients.
struct Bundle<L> {
    layer: L,
    input: Param,
}

impl<L: Parameterized> Parameterized for Bundle<L> {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.layer.params();
        v.push(&self.input);
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.layer.params_mut();
        v.push(&mut self.input);
        v
    }
}

fn randomize<M: Parameterized + ?Sized>(m: &mut M, rng: &mut ChaCha8Rng, limit: f64) {
    let mut irng = init::rng(rng.gen());
    for p in m.params_mut() {
        let (r, c) = p.shape();
        p.value = init::uniform(&mut irng, r, c, limit);
    }
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    init::uniform(&mut init::rng(rng.gen()), rows, cols, 1.0)
}

/// Entries bounded away from zero, keeping ReLU off its kink.
fn off_kink(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| {
            let v: f64 = rng.gen_range(0.1..1.0);
            if rng.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Matrix::from_vec(rows, cols, data).expect("sized")
}

/// `Σ out ⊙ r`, whose gradient with respect to `out` is `r`.
fn project(out: &Matrix, r: &Matrix) -> Result<f64> {
    Ok(out.dot(r)?)
}

fn random_sites(rng: &mut ChaCha8Rng, side: i32, count: usize) -> Arc<Sites> {
    let mut coords: Vec<VoxelCoord> = Vec::new();
    while coords.len() < count {
        let c = [rng.gen_range(0..side), rng.gen_range(0..side), rng.gen_range(0..side)];
        if !coords.contains(&c) {
            coords.push(c);
        }
    }
    Arc::new(Sites::new(coords, 1).expect("distinct coordinates"))
}

fn random_cloud(rng: &mut ChaCha8Rng, n: usize, extent: i32, voxel: f64, classes: u32) -> PointCloud {
    let xyz: Vec<Point> = (0..n)
        .map(|_| {
            let mut p = [0.0; 3];
            for v in &mut p {
                *v = (rng.gen_range(0..extent) as f64 + rng.gen_range(0.1..0.9)) * voxel;
            }
            p
        })
        .collect();
    let intensity = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
    let labels = (0..n).map(|_| rng.gen_range(0..classes)).collect();
    PointCloud::new(xyz)
        .with_intensity(intensity)
        .and_then(|c| c.with_labels(labels))
        .expect("lengths match")
}

fn check<M: Parameterized>(
    m: &mut M,
    fault: bool,
    mut loss: impl FnMut(&mut M, bool) -> Result<f64>,
) -> Result<GradCheckReport> {
    Ok(grad_check(m, STEP, FLOOR, |m, backward| {
        let v = loss(m, backward).map_err(|e| pcsc_core::Error::Internal(e.to_string()))?;
        if backward && fault {
            for p in m.params_mut() {
                p.grad.scale(2.0);
            }
        }
        Ok(v)
    })?)
}

fn conv_case(kind: ConvKind, rng: &mut ChaCha8Rng, fault: bool) -> Result<GradCheckReport> {
    let sites = random_sites(rng, 4, 14);
    let (rb, in_rows): (Rulebook, usize) = match kind {
        ConvKind::Submanifold => (build_rulebook_submanifold(&sites, 3)?, sites.len()),
        ConvKind::Strided => (build_rulebook_strided(&sites, 3, 2)?, sites.len()),
        ConvKind::Deconv => {
            let down = build_rulebook_strided(&sites, 3, 2)?;
            let n = down.out_sites.len();
            (build_rulebook_deconv(&down)?, n)
        }
    };
    let mut irng = init::rng(rng.gen());
    let layer = SparseConv::new("conv", &mut irng, kind, 3, 3, 2);
    let mut m = Bundle {
        layer,
        input: Param::new("input", Matrix::zeros(in_rows, 3)),
    };
    randomize(&mut m, rng, 0.8);
    let r = random_matrix(rng, rb.out_sites.len(), 2);
    check(&mut m, fault, |m, backward| {
        let out = m.layer.forward_feats(&m.input.value, &rb)?;
        if backward {
            let dx = m.layer.backward(&m.input.value, &rb, &r)?;
            m.input.grad.add_assign(&dx)?;
        }
        project(&out, &r)
    })
}

struct Head {
    norm: ScaleShift,
    mlp: Mlp,
    input: Param,
}

impl Parameterized for Head {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.norm.params();
        v.extend(self.mlp.params());
        v.push(&self.input);
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.norm.params_mut();
        v.extend(self.mlp.params_mut());
        v.push(&mut self.input);
        v
    }
}

/// Runs one named component. `fault` doubles every analytic gradient, which
/// the check must reject.
pub fn run_component(name: &str, fault: bool) -> Result<GradCheckReport> {
    let seed = COMPONENTS
        .iter()
        .position(|c| *c == name)
        .ok_or_else(|| Error::Config(format!("unknown gradcheck component `{name}`")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(0x6c0d_e000 + seed as u64);
    match name {
        "linear" => {
            let mut irng = init::rng(1);
            let mut m = Bundle {
                layer: Linear::new("linear", &mut irng, 5, 4),
                input: Param::new("input", random_matrix(&mut rng, 8, 5)),
            };
            randomize(&mut m.layer, &mut rng, 0.8);
            let r = random_matrix(&mut rng, 8, 4);
            check(&mut m, fault, |m, backward| {
                let out = m.layer.forward(&m.input.value)?;
                if backward {
                    let dx = m.layer.backward(&m.input.value, &r)?;
                    m.input.grad.add_assign(&dx)?;
                }
                project(&out, &r)
            })
        }
        "relu" => {
            let mut m = Param::new("input", off_kink(&mut rng, 10, 4));
            let r = random_matrix(&mut rng, 10, 4);
            check(&mut m, fault, |m, backward| {
                if backward {
                    let dx = relu_backward(&m.value, &r)?;
                    m.grad.add_assign(&dx)?;
                }
                project(&relu(&m.value), &r)
            })
        }
        "softmax_ce" | "combined_loss" => {
            let (n, c) = (12, 4);
            let mut m = Param::new("logits", random_matrix(&mut rng, n, c));
            let mut targets: Vec<u32> = (0..n).map(|_| rng.gen_range(0..c as u32)).collect();
            targets[3] = IGNORE_LABEL;
            let boundary = BoundaryInfo {
                n_diff: (0..n).map(|_| rng.gen_range(0..5)).collect(),
            };
            let cfg = LossConfig::default();
            let combined = name == "combined_loss";
            check(&mut m, fault, |m, backward| {
                let probs = softmax_rows(&m.value);
                let (v, d) = if combined {
                    combined_loss(&probs, &targets, &boundary, &cfg)?
                } else {
                    cross_entropy(&probs, &targets)?
                };
                if backward {
                    m.grad.add_assign(&d)?;
                }
                Ok(v)
            })
        }
        "kpconv" => {
            let cloud = random_cloud(&mut rng, 30, 3, 0.1, 2);
            let vmap = voxelize(&cloud, 0.1)?;
            let rel = relative_coords(&cloud, &vmap);
            let feats = build_input_features(&cloud, &rel, true)?;
            let mut irng = init::rng(2);
            let o = 3;
            let mlp = Mlp::new("kpconv.mlp", &mut irng, &[feats.cols(), o, o]);
            let kernel = KernelPointSet::new("kpconv.kernel", &mut irng, 15, 0.1, o)?;
            let mut m = Bundle {
                layer: PointConvExtractor::new(mlp, kernel)?,
                input: Param::new("input", feats),
            };
            randomize(&mut m.layer, &mut rng, 0.8);
            let rp = random_matrix(&mut rng, cloud.len(), o);
            let rv = random_matrix(&mut rng, vmap.num_voxels(), o);
            check(&mut m, fault, |m, backward| {
                let (out, cache) = m.layer.extract(&m.input.value, &rel, &vmap)?;
                if backward {
                    let dx = m.layer.backward(&cache, &vmap, &rp, &rv)?;
                    m.input.grad.add_assign(&dx)?;
                }
                Ok(project(&out.point_feats, &rp)? + project(&out.voxel_feats, &rv)?)
            })
        }
        "submanifold" => conv_case(ConvKind::Submanifold, &mut rng, fault),
        "strided" => conv_case(ConvKind::Strided, &mut rng, fault),
        "deconv" => conv_case(ConvKind::Deconv, &mut rng, fault),
        "residual" => {
            let sites = random_sites(&mut rng, 3, 12);
            let rb = build_rulebook_submanifold(&sites, 3)?;
            let mut irng = init::rng(3);
            let mut m = Bundle {
                layer: ResidualBlock::new("res", &mut irng, 3, 3),
                input: Param::new("input", Matrix::zeros(sites.len(), 3)),
            };
            randomize(&mut m, &mut rng, 0.8);
            let r = random_matrix(&mut rng, sites.len(), 3);
            check(&mut m, fault, |m, backward| {
                let (out, cache) = m.layer.forward(&m.input.value, &rb)?;
                if backward {
                    let dx = m.layer.backward(&m.input.value, &rb, &cache, &r)?;
                    m.input.grad.add_assign(&dx)?;
                }
                project(&out, &r)
            })
        }
        "unet" => {
            let sites = random_sites(&mut rng, 8, 24);
            let cfg = UNetConfig {
                input_width: 3,
                widths: vec![3, 4, 4],
                decoder_width: 2,
                kernel_size: 3,
                stride: 2,
            };
            let geom = UNetGeometry::build(&sites, cfg.widths.len(), 3, 2)?;
            let mut irng = init::rng(4);
            let mut m = Bundle {
                layer: UNet::new("unet", &mut irng, cfg)?,
                input: Param::new("input", Matrix::zeros(sites.len(), 3)),
            };
            randomize(&mut m, &mut rng, 0.6);
            let r = random_matrix(&mut rng, sites.len(), 2);
            check(&mut m, fault, |m, backward| {
                let x = SparseTensor::new(sites.clone(), m.input.value.clone())?;
                let (out, cache) = m.layer.forward(&x, &geom)?;
                if backward {
                    let dx = m.layer.backward(&geom, &cache, &r)?;
                    m.input.grad.add_assign(&dx)?;
                }
                project(&out.feats, &r)
            })
        }
        "head" => {
            let (n, w, c) = (10, 5, 3);
            let mut irng = init::rng(5);
            let mut m = Head {
                norm: ScaleShift::new("head.norm", w),
                mlp: Mlp::new("head.mlp", &mut irng, &[w, 4, c]),
                input: Param::new("input", Matrix::zeros(n, w)),
            };
            randomize(&mut m, &mut rng, 0.8);
            let targets: Vec<u32> = (0..n).map(|_| rng.gen_range(0..c as u32)).collect();
            check(&mut m, fault, |m, backward| {
                let z = m.norm.forward(&m.input.value)?;
                let (logits, cache) = m.mlp.forward(&z)?;
                let (v, d) = cross_entropy(&softmax_rows(&logits), &targets)?;
                if backward {
                    let dz = m.mlp.backward(&cache, &d)?;
                    let dx = m.norm.backward(&m.input.value, &dz)?;
                    m.input.grad.add_assign(&dx)?;
                }
                Ok(v)
            })
        }
        "model" => {
            let cloud = random_cloud(&mut rng, 40, 3, 0.1, 3);
            let cfg = ModelConfig {
                extraction_width: 4,
                unet_widths: vec![4, 5, 6],
                decoder_width: 3,
                head_hidden: 6,
                classes: 3,
                scale_shift: true,
                seed: 5,
                ..ModelConfig::default()
            };
            let mut m = Model::new(cfg)?;
            randomize(&mut m, &mut rng, 0.6);
            let scan = m.prepare(cloud, 10)?;
            let loss = LossConfig::default();
            check(&mut m, fault, |m, backward| {
                if backward {
                    Ok(m.accumulate_loss(&scan, &loss, 1.0)?.0)
                } else {
                    let (probs, _) = m.forward(&scan)?;
                    let boundary = scan.boundary.as_ref().expect("labeled scan");
                    Ok(combined_loss(&probs, scan.labels()?, boundary, &loss)?.0)
                }
            })
        }
        _ => unreachable!("listed in COMPONENTS"),
    }
}

/// Every component in order; `fault` names a component whose gradients are
/// corrupted, or is empty.
pub fn run_suite(fault: &str) -> Result<Vec<ComponentResult>> {
    if !fault.is_empty() && !COMPONENTS.contains(&fault) {
        return Err(Error::Config(format!("unknown gradcheck component `{fault}`")));
    }
    COMPONENTS
        .iter()
        .map(|&name| {
            let t = Instant::now();
            let report = run_component(name, name == fault)?;
            Ok(ComponentResult {
                name,
                report,
                seconds: t.elapsed().as_secs_f64(),
            })
        })
        .collect()
}

pub fn table(results: &[ComponentResult]) -> String {
    let mut s = format!("{:<14} {:>7} {:>12} {:>8} {:>8}\n", "component", "coords", "max_rel_err", "time_s", "status");
    for r in results {
        s += &format!(
            "{:<14} {:>7} {:>12.3e} {:>8.3} {:>8}\n",
            r.name,
            r.report.coordinates,
            r.report.max_rel_error,
            r.seconds,
            if r.passed() { "pass" } else { "FAIL" }
        );
    }
    s
}

pub fn metrics(results: &[ComponentResult]) -> String {
    let mut s = String::new();
    for r in results {
        s += &format!(
            "{}.max_rel_error={:e}\n{}.passed={}\n",
            r.name,
            r.report.max_rel_error,
            r.name,
            r.passed()
        );
    }
    let total: f64 = results.iter().map(|r| r.seconds).sum();
    s += &format!(
        "passed={}\ntolerance={:e}\nstep={:e}\nfloor={:e}\nseconds={:.3}\n",
        results.iter().all(ComponentResult::passed),
        TOLERANCE,
        STEP,
        FLOOR,
        total
    );
    s
}
