//! Point-convolution feature extraction.
//!
//! Each point's input features are lifted by an MLP, then every voxel's
//! points are aggregated into a single voxel feature with kernel-point
//! convolution:
//!
//! ```text
//! v = Σ_k ( Σ_{i ∈ voxel} h(x_i − x_c, k) · f_i ) · W_k
//! h(x, k) = max(0, 1 − ‖x − k‖ / σ)
//! ```
//!
//! The inner sum over points is evaluated first (one `1×O` row per kernel
//! point), so the matrix products cost `A·K·O²` instead of `N·K·O²`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::geometry::{Point, VoxelMap};
use crate::nn::init::{xavier_uniform, InitRng};
use crate::nn::{Matrix, Mlp, MlpCache, Param, Parameterized};
use crate::{Error, Result};

/// Correlation between a point (relative to its voxel center) and a kernel
/// point.
pub fn correlation(x_rel: Point, kernel_point: Point, sigma: f64) -> f64 {
    let d = libm::sqrt(crate::geometry::dist2(&x_rel, &kernel_point));
    (1.0 - d / sigma).max(0.0)
}

/// Kernel point positions for `k ∈ {1, 9, 15, 27}` and the matching
/// influence radius `σ = max(0.75·s/∛K, s/4)`.
///
/// * 1: the voxel center.
/// * 9: center plus the 8 corners of a cube with half-side `s/4`.
/// * 15: center plus 6 face and 8 corner directions, all at radius `s/4`.
/// * 27: the grid `{−s/4, 0, s/4}³`.
pub fn make_kernel_points(k: usize, voxel_size: f64) -> Result<(Vec<Point>, f64)> {
    let q = voxel_size / 4.0;
    let signs = [-1.0, 1.0];
    let mut pts = vec![[0.0; 3]];
    match k {
        1 => {}
        9 => {
            for &x in &signs {
                for &y in &signs {
                    for &z in &signs {
                        pts.push([x * q, y * q, z * q]);
                    }
                }
            }
        }
        15 => {
            for a in 0..3 {
                for &s in &signs {
                    let mut p = [0.0; 3];
                    p[a] = s * q;
                    pts.push(p);
                }
            }
            let d = q / libm::sqrt(3.0);
            for &x in &signs {
                for &y in &signs {
                    for &z in &signs {
                        pts.push([x * d, y * d, z * d]);
                    }
                }
            }
        }
        27 => {
            pts.clear();
            for x in -1..=1 {
                for y in -1..=1 {
                    for z in -1..=1 {
                        pts.push([x as f64 * q, y as f64 * q, z as f64 * q]);
                    }
                }
            }
        }
        other => return Err(Error::UnsupportedKernelCount(other)),
    }
    let sigma = (voxel_size * 0.75 / libm::cbrt(k as f64)).max(voxel_size / 4.0);
    Ok((pts, sigma))
}

/// Rigid kernel points with one trainable `O×O` matrix each.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelPointSet {
    positions: Vec<Point>,
    sigma: f64,
    pub weights: Vec<Param>,
}

impl KernelPointSet {
    pub fn new(
        name: &str,
        rng: &mut InitRng,
        k: usize,
        voxel_size: f64,
        width: usize,
    ) -> Result<Self> {
        let (positions, sigma) = make_kernel_points(k, voxel_size)?;
        let scale = 1.0 / k as f64;
        let weights = (0..k)
            .map(|i| {
                Param::new(
                    format!("{name}.w{i}"),
                    xavier_uniform(rng, width, width, scale),
                )
            })
            .collect();
        Ok(KernelPointSet {
            positions,
            sigma,
            weights,
        })
    }

    /// Explicit layout; every weight must be `width×width`.
    pub fn from_parts(positions: Vec<Point>, sigma: f64, weights: Vec<Param>) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::InvalidConfig(format!("sigma must be positive, got {sigma}")));
        }
        if positions.len() != weights.len() || positions.is_empty() {
            return Err(Error::InvalidConfig(format!(
                "{} kernel points but {} weight matrices",
                positions.len(),
                weights.len()
            )));
        }
        let o = weights[0].shape().0;
        if let Some(w) = weights.iter().find(|w| w.shape() != (o, o)) {
            return Err(Error::shape("kernel weights", w.shape(), (o, o)));
        }
        Ok(KernelPointSet {
            positions,
            sigma,
            weights,
        })
    }

    pub fn positions(&self) -> &[Point] {
        &self.positions
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn width(&self) -> usize {
        self.weights[0].shape().0
    }
}

/// Point-wise features `𝓕` (N×O) and one voxel feature per voxel row (A×O).
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractionOutput {
    pub point_feats: Matrix,
    pub voxel_feats: Matrix,
}

/// Saved activations of one [`PointConvExtractor::extract`] call.
#[derive(Debug, Clone)]
pub struct ExtractCache {
    mlp: MlpCache,
    point_feats: Matrix,
    /// `h(x_i − x_c, k)`, N×K.
    influence: Matrix,
    /// Per-voxel kernel sums `s_k`, A×(K·O).
    sums: Matrix,
}

/// MLP lift followed by kernel-point aggregation.
#[derive(Debug, Clone, PartialEq)]
pub struct PointConvExtractor {
    pub mlp: Mlp,
    pub kernel: KernelPointSet,
}

impl PointConvExtractor {
    pub fn new(mlp: Mlp, kernel: KernelPointSet) -> Result<Self> {
        if mlp.out_width() != kernel.width() {
            return Err(Error::shape(
                "extractor",
                (mlp.in_width(), mlp.out_width()),
                (kernel.width(), kernel.width()),
            ));
        }
        Ok(PointConvExtractor { mlp, kernel })
    }

    pub fn extract(
        &self,
        inputs: &Matrix,
        rel: &[Point],
        vmap: &VoxelMap,
    ) -> Result<(ExtractionOutput, ExtractCache)> {
        let n = vmap.num_points();
        if inputs.rows() != n || rel.len() != n {
            return Err(Error::shape("extract", inputs.shape(), (n, self.mlp.in_width())));
        }
        if inputs.cols() != self.mlp.in_width() {
            return Err(Error::shape("extract", inputs.shape(), (n, self.mlp.in_width())));
        }
        let (point_feats, mlp_cache) = self.mlp.forward(inputs)?;
        let k = self.kernel.len();
        let o = self.kernel.width();

        let mut influence = Matrix::zeros(n, k);
        for (i, x) in rel.iter().enumerate() {
            for (j, kp) in self.kernel.positions.iter().enumerate() {
                influence.set(i, j, correlation(*x, *kp, self.kernel.sigma));
            }
        }

        let a = vmap.num_voxels();
        let mut sums = Matrix::zeros(a, k * o);
        for v in 0..a {
            let row = sums.row_mut(v);
            for &i in vmap.points_in(v) {
                let f = point_feats.row(i);
                for (j, &h) in influence.row(i).iter().enumerate() {
                    if h > 0.0 {
                        for (s, fv) in row[j * o..(j + 1) * o].iter_mut().zip(f) {
                            *s += h * fv;
                        }
                    }
                }
            }
        }

        let mut voxel_feats = Matrix::zeros(a, o);
        for (j, w) in self.kernel.weights.iter().enumerate() {
            voxel_feats.gemm(1.0, sums.view().col_block(j * o, o), w.value.view(), 1.0)?;
        }
        Ok((
            ExtractionOutput {
                point_feats: point_feats.clone(),
                voxel_feats,
            },
            ExtractCache {
                mlp: mlp_cache,
                point_feats,
                influence,
                sums,
            },
        ))
    }

    /// Accumulates parameter gradients; returns the gradient w.r.t. the MLP
    /// inputs.
    pub fn backward(
        &mut self,
        cache: &ExtractCache,
        vmap: &VoxelMap,
        upstream_point: &Matrix,
        upstream_voxel: &Matrix,
    ) -> Result<Matrix> {
        let k = self.kernel.len();
        let o = self.kernel.width();
        let (n, a) = (vmap.num_points(), vmap.num_voxels());
        if cache.sums.shape() != (a, k * o) || cache.influence.shape() != (n, k) {
            return Err(Error::MissingActivations("kpconv"));
        }
        if upstream_point.shape() != (n, o) {
            return Err(Error::shape("extract_backward", upstream_point.shape(), (n, o)));
        }
        if upstream_voxel.shape() != (a, o) {
            return Err(Error::shape("extract_backward", upstream_voxel.shape(), (a, o)));
        }

        let mut d_sums = Matrix::zeros(a, k * o);
        let mut tmp = Matrix::zeros(a, o);
        for (j, w) in self.kernel.weights.iter_mut().enumerate() {
            let s_j = cache.sums.view().col_block(j * o, o);
            w.grad.gemm(1.0, s_j.t(), upstream_voxel.view(), 1.0)?;
            tmp.gemm(1.0, upstream_voxel.view(), w.value.view().t(), 0.0)?;
            for v in 0..a {
                d_sums.row_mut(v)[j * o..(j + 1) * o].copy_from_slice(tmp.row(v));
            }
        }

        let mut d_feats = upstream_point.clone();
        for (i, &v) in vmap.point_to_voxel().iter().enumerate() {
            let ds = d_sums.row(v);
            let hrow = cache.influence.row(i);
            let df = d_feats.row_mut(i);
            for (j, &h) in hrow.iter().enumerate() {
                if h > 0.0 {
                    for (d, s) in df.iter_mut().zip(&ds[j * o..(j + 1) * o]) {
                        *d += h * s;
                    }
                }
            }
        }
        debug_assert_eq!(cache.point_feats.shape(), d_feats.shape());
        self.mlp.backward(&cache.mlp, &d_feats)
    }
}

impl Parameterized for PointConvExtractor {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.mlp.params();
        v.extend(self.kernel.weights.iter());
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.mlp.params_mut();
        v.extend(self.kernel.weights.iter_mut());
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{relative_coords, voxelize, PointCloud};
    use crate::nn::{grad_check, init};

    #[test]
    fn correlation_exact_values() {
        let kp = [0.01, -0.02, 0.03];
        assert_eq!(correlation(kp, kp, 0.05), 1.0);
        let at = |d: f64| correlation([kp[0] + d, kp[1], kp[2]], kp, 0.05);
        assert!(at(0.05).abs() < 1e-12);
        assert_eq!(at(0.07), 0.0);
        assert!((at(0.025) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn kernel_layouts() {
        for k in [1, 9, 15, 27] {
            let (pts, sigma) = make_kernel_points(k, 0.1).unwrap();
            assert_eq!(pts.len(), k);
            assert!(sigma >= 0.025 - 1e-15);
            let bound = 0.1 * libm::sqrt(3.0) / 2.0;
            for p in &pts {
                assert!(libm::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]) <= bound);
                let neg = [-p[0], -p[1], -p[2]];
                assert!(pts.iter().any(|q| (0..3).all(|a| (q[a] - neg[a]).abs() < 1e-15)));
            }
        }
        let (pts, _) = make_kernel_points(9, 0.1).unwrap();
        assert!(pts.contains(&[0.025, 0.025, 0.025]));
        assert_eq!(make_kernel_points(1, 0.1).unwrap().0, vec![[0.0; 3]]);
        assert!(make_kernel_points(8, 0.1).is_err());
    }

    fn identity_extractor(positions: Vec<Point>, sigma: f64, o: usize) -> PointConvExtractor {
        let mut rng = init::rng(0);
        let weights = (0..positions.len())
            .map(|i| Param::new(format!("w{i}"), Matrix::identity(o)))
            .collect();
        let kernel = KernelPointSet::from_parts(positions, sigma, weights).unwrap();
        PointConvExtractor::new(Mlp::new("mlp", &mut rng, &[2, 3, o]), kernel).unwrap()
    }

    #[test]
    fn single_point_on_kernel_point() {
        let (pts, _) = make_kernel_points(9, 0.1).unwrap();
        // minimum inter-point distance is 0.025·√3; σ well below half of it
        let ex = identity_extractor(pts.clone(), 0.01, 3);
        let cloud = PointCloud::new(vec![[0.05 + pts[3][0], 0.05 + pts[3][1], 0.05 + pts[3][2]]]);
        let vm = voxelize(&cloud, 0.1).unwrap();
        let rel = relative_coords(&cloud, &vm);
        let inputs = Matrix::from_rows(&[[0.3, -0.7]]);
        let (out, _) = ex.extract(&inputs, &rel, &vm).unwrap();
        for c in 0..3 {
            assert!((out.voxel_feats.get(0, c) - out.point_feats.get(0, c)).abs() < 1e-12);
        }
    }

    #[test]
    fn far_points_give_zero_and_duplicates_double() {
        let ex = identity_extractor(vec![[0.0; 3]], 0.01, 3);
        let cloud = PointCloud::new(vec![[0.09, 0.09, 0.09]]);
        let vm = voxelize(&cloud, 0.1).unwrap();
        let rel = relative_coords(&cloud, &vm);
        let (out, _) = ex.extract(&Matrix::from_rows(&[[1.0, 2.0]]), &rel, &vm).unwrap();
        assert_eq!(out.voxel_feats.max_abs(), 0.0);

        let ex = identity_extractor(make_kernel_points(15, 0.1).unwrap().0, 0.03, 3);
        let one = PointCloud::new(vec![[0.051, 0.04, 0.06], [0.02, 0.07, 0.03]]);
        let two = PointCloud::new(vec![[0.051, 0.04, 0.06], [0.02, 0.07, 0.03], [0.051, 0.04, 0.06]]);
        let i1 = Matrix::from_rows(&[[0.5, -1.0], [0.2, 0.1]]);
        let i2 = Matrix::from_rows(&[[0.5, -1.0], [0.2, 0.1], [0.5, -1.0]]);
        let run = |c: &PointCloud, i: &Matrix| {
            let vm = voxelize(c, 0.1).unwrap();
            ex.extract(i, &relative_coords(c, &vm), &vm).unwrap().0.voxel_feats
        };
        let single = run(&PointCloud::new(vec![[0.051, 0.04, 0.06]]), &Matrix::from_rows(&[[0.5, -1.0]]));
        let (a, b) = (run(&one, &i1), run(&two, &i2));
        for c in 0..3 {
            assert!((b.get(0, c) - a.get(0, c) - single.get(0, c)).abs() < 1e-12);
        }
    }

    #[test]
    fn width_mismatch() {
        let ex = identity_extractor(vec![[0.0; 3]], 0.05, 3);
        let cloud = PointCloud::new(vec![[0.0; 3]]);
        let vm = voxelize(&cloud, 0.1).unwrap();
        let rel = relative_coords(&cloud, &vm);
        assert!(ex.extract(&Matrix::zeros(1, 5), &rel, &vm).is_err());
    }

    #[test]
    fn scalar_chain_rule() {
        // O = 1, one kernel point: v = h·f·w
        let mut rng = init::rng(1);
        let kernel = KernelPointSet::from_parts(
            vec![[0.0; 3]],
            0.1,
            vec![Param::new("w", Matrix::from_rows(&[[1.5]]))],
        )
        .unwrap();
        let mut ex = PointConvExtractor::new(Mlp::new("m", &mut rng, &[1, 1]), kernel).unwrap();
        ex.mlp.layers[0].weight.value = Matrix::from_rows(&[[2.0]]);
        let cloud = PointCloud::new(vec![[0.07, 0.05, 0.05]]);
        let vm = voxelize(&cloud, 0.1).unwrap();
        let rel = relative_coords(&cloud, &vm);
        let x = Matrix::from_rows(&[[1.0]]);
        let (out, cache) = ex.extract(&x, &rel, &vm).unwrap();
        let h = 1.0 - 0.02 / 0.1;
        let f = 2.0;
        assert!((out.voxel_feats.get(0, 0) - h * f * 1.5).abs() < 1e-12);
        let dx = ex
            .backward(&cache, &vm, &Matrix::zeros(1, 1), &Matrix::from_rows(&[[1.0]]))
            .unwrap();
        assert!((ex.kernel.weights[0].grad.get(0, 0) - h * f).abs() < 1e-12);
        // dv/df = h·w, then through the linear layer: df/dx = 2
        assert!((dx.get(0, 0) - h * 1.5 * 2.0).abs() < 1e-12);

        let mut zero = ex.clone();
        zero.zero_grads();
        let dx = zero
            .backward(&cache, &vm, &Matrix::zeros(1, 1), &Matrix::zeros(1, 1))
            .unwrap();
        assert_eq!(dx.max_abs(), 0.0);
        assert!(zero.params().iter().all(|p| p.grad.max_abs() == 0.0));
    }

    #[test]
    fn grad_check_small_cloud() {
        use rand::Rng;
        let mut rng = init::rng(9);
        let mut xyz = Vec::new();
        for v in 0..5 {
            for _ in 0..6 {
                xyz.push([
                    v as f64 * 0.1 + rng.gen_range(0.0..0.1),
                    rng.gen_range(0.0..0.1),
                    rng.gen_range(0.0..0.1),
                ]);
            }
        }
        let cloud = PointCloud::new(xyz);
        let vm = voxelize(&cloud, 0.1).unwrap();
        assert_eq!(vm.num_voxels(), 5);
        let rel = relative_coords(&cloud, &vm);
        let inputs = init::uniform(&mut rng, 30, 4, 1.0);
        let kernel = KernelPointSet::new("kp", &mut rng, 15, 0.1, 3).unwrap();
        let mut ex = PointConvExtractor::new(Mlp::new("mlp", &mut rng, &[4, 3, 3]), kernel).unwrap();
        let probe_p = init::uniform(&mut rng, 30, 3, 1.0);
        let probe_v = init::uniform(&mut rng, 5, 3, 1.0);
        let report = grad_check(&mut ex, 1e-6, 1e-6, |ex, backward| {
            let (out, cache) = ex.extract(&inputs, &rel, &vm)?;
            if backward {
                ex.backward(&cache, &vm, &probe_p, &probe_v)?;
            }
            Ok(out.point_feats.dot(&probe_p)? + out.voxel_feats.dot(&probe_v)?)
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-5, "{report:?}");
    }
}
