//! The full network: voxelize, extract voxel features with kernel-point
//! convolution, propagate them through the sparse U-Net, copy each voxel's
//! feature back to its points next to their own point features, and classify
//! every point with an MLP head.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write as _;

use crate::checkpoint;
use crate::geometry::{relative_coords, voxelize, Point, PointCloud, VoxelMap};
use crate::kpconv::{ExtractCache, KernelPointSet, PointConvExtractor};
use crate::loss::{boundary_info, combined_loss, BoundaryInfo, LossConfig};
use crate::nn::init::{self, InitRng};
use crate::nn::{softmax_rows, AdamConfig, AdamState, Matrix, Mlp, MlpCache, Param, Parameterized, ScaleShift};
use crate::sparse::{Sites, SparseTensor, UNet, UNetCache, UNetConfig, UNetGeometry};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub voxel_size: f64,
    pub kernel_points: usize,
    /// Whether the per-point input carries an intensity channel.
    pub intensity: bool,
    pub extraction_width: usize,
    pub unet_widths: Vec<usize>,
    pub decoder_width: usize,
    pub kernel_size: usize,
    pub head_hidden: usize,
    pub classes: usize,
    pub scale_shift: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            voxel_size: 0.1,
            kernel_points: 15,
            intensity: true,
            extraction_width: 32,
            unet_widths: vec![32, 64, 128],
            decoder_width: 32,
            kernel_size: 3,
            head_hidden: 64,
            classes: 19,
            scale_shift: false,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// `[rel x, rel y, rel z, intensity?, 1]`.
    pub fn input_width(&self) -> usize {
        if self.intensity {
            5
        } else {
            4
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.voxel_size > 0.0 && self.voxel_size.is_finite()) {
            return Err(Error::InvalidConfig(format!("voxel_size must be > 0, got {}", self.voxel_size)));
        }
        if self.classes < 2 {
            return Err(Error::InvalidConfig(format!("need at least 2 classes, got {}", self.classes)));
        }
        if self.unet_widths.is_empty() || self.unet_widths.contains(&0) {
            return Err(Error::InvalidConfig("unet widths must be non-empty and positive".into()));
        }
        if self.extraction_width == 0 || self.decoder_width == 0 || self.head_hidden == 0 {
            return Err(Error::InvalidConfig("layer widths must be positive".into()));
        }
        if self.kernel_size % 2 == 0 {
            return Err(Error::InvalidConfig(format!("kernel_size must be odd, got {}", self.kernel_size)));
        }
        Ok(())
    }
}

/// Per-point input features built from the voxel assignment.
pub fn build_input_features(cloud: &PointCloud, rel: &[Point], intensity: bool) -> Result<Matrix> {
    let n = cloud.len();
    if rel.len() != n {
        return Err(Error::shape("input features", (rel.len(), 3), (n, 3)));
    }
    let width = if intensity { 5 } else { 4 };
    let values = match (&cloud.intensity, intensity) {
        (Some(v), true) => Some(v.as_slice()),
        (None, true) => {
            return Err(Error::InvalidConfig("model expects intensity but the cloud has none".into()))
        }
        _ => None,
    };
    let mut out = Matrix::zeros(n, width);
    for (i, r) in rel.iter().enumerate() {
        let row = out.row_mut(i);
        row[..3].copy_from_slice(r);
        if let Some(v) = values {
            row[3] = v[i];
        }
        row[width - 1] = 1.0;
    }
    Ok(out)
}

/// Row `p` is `[point_feats[p] ‖ voxel_feats[voxel of p]]`.
pub fn devoxelize_concat(point_feats: &Matrix, voxel_feats: &Matrix, vmap: &VoxelMap) -> Result<Matrix> {
    if point_feats.rows() != vmap.num_points() || voxel_feats.rows() != vmap.num_voxels() {
        return Err(Error::shape("devoxelize_concat", point_feats.shape(), voxel_feats.shape()));
    }
    let (a, b) = (point_feats.cols(), voxel_feats.cols());
    let mut out = Matrix::zeros(point_feats.rows(), a + b);
    for (p, &v) in vmap.point_to_voxel().iter().enumerate() {
        let row = out.row_mut(p);
        row[..a].copy_from_slice(point_feats.row(p));
        row[a..].copy_from_slice(voxel_feats.row(v));
    }
    Ok(out)
}

/// Splits the upstream gradient: the left block goes to the points, the right
/// block is summed over each voxel's points.
pub fn devoxelize_concat_backward(upstream: &Matrix, left: usize, vmap: &VoxelMap) -> Result<(Matrix, Matrix)> {
    if upstream.rows() != vmap.num_points() || upstream.cols() < left {
        return Err(Error::shape("devoxelize_backward", upstream.shape(), (vmap.num_points(), left)));
    }
    let right = upstream.cols() - left;
    let mut dp = Matrix::zeros(upstream.rows(), left);
    let mut dv = Matrix::zeros(vmap.num_voxels(), right);
    for (p, &v) in vmap.point_to_voxel().iter().enumerate() {
        let row = upstream.row(p);
        dp.row_mut(p).copy_from_slice(&row[..left]);
        for (d, u) in dv.row_mut(v).iter_mut().zip(&row[left..]) {
            *d += u;
        }
    }
    Ok((dp, dv))
}

/// Argmax per row; ties go to the lowest class index.
pub fn predict(probs: &Matrix) -> Vec<u32> {
    (0..probs.rows())
        .map(|r| {
            let mut best = 0;
            for (j, &v) in probs.row(r).iter().enumerate() {
                if v > probs.get(r, best) {
                    best = j;
                }
            }
            best as u32
        })
        .collect()
}

/// Everything about one scan that does not depend on the parameters.
#[derive(Debug, Clone)]
pub struct PreparedScan {
    pub cloud: PointCloud,
    pub vmap: VoxelMap,
    pub rel: Vec<Point>,
    pub features: Matrix,
    pub sites: Arc<Sites>,
    pub geometry: UNetGeometry,
    /// Present when the cloud is labeled.
    pub boundary: Option<BoundaryInfo>,
}

impl PreparedScan {
    pub fn new(cloud: PointCloud, config: &ModelConfig, loss_k: usize) -> Result<Self> {
        let vmap = voxelize(&cloud, config.voxel_size)?;
        let rel = relative_coords(&cloud, &vmap);
        let features = build_input_features(&cloud, &rel, config.intensity)?;
        let sites = Arc::new(Sites::new(vmap.coords().to_vec(), 1)?);
        if sites.coords() != vmap.coords() {
            return Err(Error::Internal("voxel rows are not in site order".into()));
        }
        let geometry = UNetGeometry::build(&sites, config.unet_widths.len(), config.kernel_size, 2)?;
        let boundary = match cloud.labels {
            Some(_) => Some(boundary_info(&cloud, loss_k)?),
            None => None,
        };
        Ok(PreparedScan {
            cloud,
            vmap,
            rel,
            features,
            sites,
            geometry,
            boundary,
        })
    }

    pub fn len(&self) -> usize {
        self.cloud.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cloud.is_empty()
    }

    pub fn labels(&self) -> Result<&[u32]> {
        self.cloud.labels.as_deref().ok_or(Error::MissingLabels)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub correct: usize,
    pub labeled: usize,
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    extract: ExtractCache,
    unet: UNetCache,
    head_in: Matrix,
    concat: Matrix,
    head: MlpCache,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub extractor: PointConvExtractor,
    pub unet: UNet,
    pub scale_shift: Option<ScaleShift>,
    pub head: Mlp,
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng: InitRng = init::rng(config.seed);
        let o = config.extraction_width;
        let mlp = Mlp::new("kpconv.mlp", &mut rng, &[config.input_width(), o, o]);
        let kernel = KernelPointSet::new("kpconv.kernel", &mut rng, config.kernel_points, config.voxel_size, o)?;
        let extractor = PointConvExtractor::new(mlp, kernel)?;
        let unet = UNet::new(
            "unet",
            &mut rng,
            UNetConfig {
                input_width: o,
                widths: config.unet_widths.clone(),
                decoder_width: config.decoder_width,
                kernel_size: config.kernel_size,
                stride: 2,
            },
        )?;
        let cat = o + config.decoder_width;
        let scale_shift = config.scale_shift.then(|| ScaleShift::new("head.norm", cat));
        let head = Mlp::new("head.mlp", &mut rng, &[cat, config.head_hidden, config.classes]);
        Ok(Model {
            config,
            extractor,
            unet,
            scale_shift,
            head,
        })
    }

    pub fn prepare(&self, cloud: PointCloud, loss_k: usize) -> Result<PreparedScan> {
        PreparedScan::new(cloud, &self.config, loss_k)
    }

    /// Class probabilities, one row per point.
    pub fn forward(&self, scan: &PreparedScan) -> Result<(Matrix, ForwardCache)> {
        let (ext, extract) = self.extractor.extract(&scan.features, &scan.rel, &scan.vmap)?;
        let x = SparseTensor::new(scan.sites.clone(), ext.voxel_feats)?;
        let (u, unet) = self.unet.forward(&x, &scan.geometry)?;
        let concat = devoxelize_concat(&ext.point_feats, &u.feats, &scan.vmap)?;
        let head_in = match &self.scale_shift {
            Some(ss) => ss.forward(&concat)?,
            None => concat.clone(),
        };
        let (logits, head) = self.head.forward(&head_in)?;
        Ok((
            softmax_rows(&logits),
            ForwardCache {
                extract,
                unet,
                head_in,
                concat,
                head,
            },
        ))
    }

    pub fn infer(&self, scan: &PreparedScan) -> Result<Vec<u32>> {
        Ok(predict(&self.forward(scan)?.0))
    }

    /// Accumulates every parameter gradient from the gradient with respect to
    /// the logits.
    pub fn backward(&mut self, scan: &PreparedScan, cache: &ForwardCache, d_logits: &Matrix) -> Result<()> {
        let d_head_in = self.head.backward(&cache.head, d_logits)?;
        let d_concat = match &mut self.scale_shift {
            Some(ss) => ss.backward(&cache.concat, &d_head_in)?,
            None => d_head_in,
        };
        debug_assert_eq!(cache.head_in.shape(), d_concat.shape());
        let (d_points, d_unet_out) =
            devoxelize_concat_backward(&d_concat, self.config.extraction_width, &scan.vmap)?;
        let d_voxels = self.unet.backward(&scan.geometry, &cache.unet, &d_unet_out)?;
        self.extractor.backward(&cache.extract, &scan.vmap, &d_points, &d_voxels)?;
        Ok(())
    }

    /// Forward, combined loss and backward for one labeled scan; gradients
    /// are accumulated scaled by `weight`. Returns the unscaled loss and the
    /// probabilities it was computed from.
    pub fn accumulate_loss(&mut self, scan: &PreparedScan, loss: &LossConfig, weight: f64) -> Result<(f64, Matrix)> {
        let labels = scan.labels()?;
        let boundary = scan.boundary.as_ref().ok_or(Error::MissingLabels)?;
        let (probs, cache) = self.forward(scan)?;
        let (value, mut d_logits) = combined_loss(&probs, labels, boundary, loss)?;
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss(self.norm_report(value)));
        }
        d_logits.scale(weight);
        self.backward(scan, &cache, &d_logits)?;
        Ok((value, probs))
    }

    /// One optimizer step over a batch; the batch loss is the mean of the
    /// per-scan losses. Returns the loss before the update.
    pub fn train_step(&mut self, batch: &[&PreparedScan], adam: &mut AdamState, loss: &LossConfig) -> Result<f64> {
        Ok(self.train_step_stats(batch, adam, loss)?.loss)
    }

    /// [`Model::train_step`] that also counts how many labeled points the
    /// pre-update network classified correctly.
    pub fn train_step_stats(
        &mut self,
        batch: &[&PreparedScan],
        adam: &mut AdamState,
        loss: &LossConfig,
    ) -> Result<StepStats> {
        if batch.is_empty() {
            return Err(Error::EmptyCloud);
        }
        self.zero_grads();
        let w = 1.0 / batch.len() as f64;
        let mut stats = StepStats::default();
        for scan in batch {
            let (value, probs) = self.accumulate_loss(scan, loss, w)?;
            stats.loss += w * value;
            for (p, &t) in predict(&probs).iter().zip(scan.labels()?) {
                if t != crate::IGNORE_LABEL {
                    stats.labeled += 1;
                    stats.correct += usize::from(*p == t);
                }
            }
        }
        if let Some(p) = self.params().iter().find(|p| !p.grad.is_finite()) {
            let msg = format!("non-finite gradient in {}; {}", p.name(), self.norm_report(stats.loss));
            return Err(Error::NonFiniteLoss(msg));
        }
        adam.apply(self)?;
        self.zero_grads();
        Ok(stats)
    }

    /// `name value_norm grad_norm` for every parameter.
    pub fn norm_report(&self, loss: f64) -> String {
        let mut s = format!("loss={loss}");
        for p in self.params() {
            let _ = write!(s, " {}:{:.3e}/{:.3e}", p.name(), p.value.norm(), p.grad.norm());
        }
        s
    }

    /// Parameters plus, optionally, the optimizer moments and step count.
    pub fn save_checkpoint(&self, adam: Option<&AdamState>) -> Result<Vec<u8>> {
        let params = self.params();
        let mut entries: Vec<(String, Matrix)> = Vec::new();
        if let Some(adam) = adam {
            if adam.moments.len() != params.len() {
                return Err(Error::UninitializedOptimizer("<optimizer/model mismatch>".into()));
            }
            entries.push(("adam.step".into(), Matrix::filled(1, 1, adam.step as f64)));
            for (p, (m, v)) in params.iter().zip(&adam.moments) {
                entries.push((format!("adam.m.{}", p.name()), m.clone()));
                entries.push((format!("adam.v.{}", p.name()), v.clone()));
            }
        }
        checkpoint::encode(
            params
                .iter()
                .map(|p| (p.name(), &p.value))
                .chain(entries.iter().map(|(n, m)| (n.as_str(), m))),
        )
    }

    /// Restores the parameters; returns the optimizer state when the
    /// checkpoint carries one.
    pub fn load_checkpoint(&mut self, bytes: &[u8], adam_config: AdamConfig) -> Result<Option<AdamState>> {
        let rest = checkpoint::load_params(self, checkpoint::decode(bytes)?)?;
        if rest.is_empty() {
            return Ok(None);
        }
        let lookup = |key: String| -> Result<Matrix> {
            let pos = rest
                .iter()
                .position(|(n, _)| *n == key)
                .ok_or_else(|| Error::Checkpoint(format!("missing entry `{key}`")))?;
            Ok(rest[pos].1.clone())
        };
        let step = lookup("adam.step".into())?.get(0, 0) as u64;
        let mut moments = Vec::new();
        for p in self.params() {
            let m = lookup(format!("adam.m.{}", p.name()))?;
            let v = lookup(format!("adam.v.{}", p.name()))?;
            if m.shape() != p.shape() || v.shape() != p.shape() {
                return Err(Error::shape("optimizer state", m.shape(), p.shape()));
            }
            moments.push((m, v));
        }
        Ok(Some(AdamState {
            config: adam_config,
            step,
            moments,
        }))
    }
}

impl Parameterized for Model {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.extractor.params();
        v.extend(self.unet.params());
        if let Some(ss) = &self.scale_shift {
            v.extend(ss.params());
        }
        v.extend(self.head.params());
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.extractor.params_mut();
        v.extend(self.unet.params_mut());
        if let Some(ss) = &mut self.scale_shift {
            v.extend(ss.params_mut());
        }
        v.extend(self.head.params_mut());
        v
    }
}
