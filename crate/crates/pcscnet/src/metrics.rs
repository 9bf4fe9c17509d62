//! Confusion matrix, per-class IoU and mIoU.

use std::fmt::Write as _;

use pcsc_core::IGNORE_LABEL;

use crate::{Error, Result};

/// Rows are ground truth, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    /// Points whose truth is ignored are skipped.
    pub fn add(&mut self, truth: &[u32], pred: &[u32]) -> Result<()> {
        if truth.len() != pred.len() {
            return Err(Error::Data(format!("{} labels but {} predictions", truth.len(), pred.len())));
        }
        for (&t, &p) in truth.iter().zip(pred) {
            if t == IGNORE_LABEL {
                continue;
            }
            if t as usize >= self.classes || p as usize >= self.classes {
                return Err(Error::Data(format!("label pair ({t}, {p}) outside {} classes", self.classes)));
            }
            self.counts[t as usize * self.classes + p as usize] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::Data(format!("merging {} and {} classes", self.classes, other.classes)));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn truth_count(&self, c: usize) -> u64 {
        (0..self.classes).map(|p| self.get(c, p)).sum()
    }

    pub fn pred_count(&self, c: usize) -> u64 {
        (0..self.classes).map(|t| self.get(t, c)).sum()
    }

    /// `TP / (TP + FP + FN)`, or `None` when the class is absent from both
    /// truth and prediction.
    pub fn iou(&self, c: usize) -> Option<f64> {
        let tp = self.get(c, c);
        let denom = self.truth_count(c) + self.pred_count(c) - tp;
        (denom > 0).then(|| tp as f64 / denom as f64)
    }

    /// Mean IoU over the classes present in truth or prediction.
    pub fn miou(&self) -> f64 {
        let ious: Vec<f64> = (0..self.classes).filter_map(|c| self.iou(c)).collect();
        if ious.is_empty() {
            0.0
        } else {
            ious.iter().sum::<f64>() / ious.len() as f64
        }
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        (0..self.classes).map(|c| self.get(c, c)).sum::<u64>() as f64 / total as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub confusion: ConfusionMatrix,
    pub class_names: Vec<String>,
    pub scans: usize,
    pub points: usize,
    pub seconds: f64,
    /// Accuracy over points with at least one differently-labeled neighbor.
    pub boundary_accuracy: Option<f64>,
}

impl EvalReport {
    pub fn miou(&self) -> f64 {
        self.confusion.miou()
    }

    pub fn points_per_sec(&self) -> f64 {
        rate(self.points, self.seconds)
    }

    pub fn scans_per_sec(&self) -> f64 {
        rate(self.scans, self.seconds)
    }

    fn name(&self, c: usize) -> String {
        self.class_names.get(c).cloned().unwrap_or_else(|| format!("class{c}"))
    }

    /// Per-class IoU table followed by the confusion matrix.
    pub fn table(&self) -> String {
        let cm = &self.confusion;
        let mut s = String::new();
        let _ = writeln!(s, "{:<16} {:>10} {:>10} {:>8}", "class", "truth", "pred", "iou");
        for c in 0..cm.classes() {
            let iou = cm.iou(c).map_or("-".to_string(), |v| format!("{v:.4}"));
            let _ = writeln!(s, "{:<16} {:>10} {:>10} {:>8}", self.name(c), cm.truth_count(c), cm.pred_count(c), iou);
        }
        let _ = writeln!(s, "{:<16} {:>10} {:>10} {:>8.4}", "mean", cm.total(), cm.total(), self.miou());
        let _ = writeln!(s, "# mean excludes classes absent from both truth and prediction (marked -)");
        let _ = writeln!(s, "\nconfusion (rows = truth, columns = prediction)");
        for t in 0..cm.classes() {
            let row: Vec<String> = (0..cm.classes()).map(|p| cm.get(t, p).to_string()).collect();
            let _ = writeln!(s, "{:<16} {}", self.name(t), row.join(" "));
        }
        s
    }

    /// `key=value` lines.
    pub fn metrics(&self) -> String {
        let cm = &self.confusion;
        let mut s = String::new();
        let _ = writeln!(s, "miou={:.6}", self.miou());
        let _ = writeln!(s, "accuracy={:.6}", cm.accuracy());
        if let Some(b) = self.boundary_accuracy {
            let _ = writeln!(s, "boundary_accuracy={b:.6}");
        }
        let _ = writeln!(s, "points={}", cm.total());
        let _ = writeln!(s, "scans={}", self.scans);
        let _ = writeln!(s, "points_per_sec={:.1}", self.points_per_sec());
        let _ = writeln!(s, "scans_per_sec={:.3}", self.scans_per_sec());
        for c in 0..cm.classes() {
            let v = cm.iou(c).map_or("nan".to_string(), |v| format!("{v:.6}"));
            let _ = writeln!(s, "iou.{}={v}", self.name(c));
        }
        s
    }
}

fn rate(count: usize, seconds: f64) -> f64 {
    if seconds > 0.0 {
        count as f64 / seconds
    } else {
        0.0
    }
}
