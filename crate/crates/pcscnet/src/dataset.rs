//! SemanticKITTI directory layout: `<root>/sequences/<NN>/velodyne/*.bin`
//! with optional `<root>/sequences/<NN>/labels/*.label`.

use std::fs;
use std::path::{Path, PathBuf};

use pcsc_core::geometry::PointCloud;

use crate::kitti::read_kitti_scan;
use crate::remap::RemapTable;
use crate::{Error, Result};

pub const DEFAULT_TRAIN: [&str; 10] = ["00", "01", "02", "03", "04", "05", "06", "07", "09", "10"];
pub const DEFAULT_VAL: [&str; 1] = ["08"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScanFile {
    pub bin: PathBuf,
    /// Set whenever the sequence has a `labels` directory.
    pub label: Option<PathBuf>,
}

impl ScanFile {
    pub fn load(&self, remap: &RemapTable) -> Result<PointCloud> {
        read_kitti_scan(&self.bin, self.label.as_deref(), remap)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Splits {
    pub train: Vec<ScanFile>,
    pub val: Vec<ScanFile>,
}

pub fn sequence_dir(root: &Path, seq: &str) -> PathBuf {
    root.join("sequences").join(seq)
}

/// Scans of one sequence, sorted by file name.
pub fn list_sequence(root: &Path, seq: &str) -> Result<Vec<ScanFile>> {
    let dir = sequence_dir(root, seq);
    let velodyne = dir.join("velodyne");
    let entries = fs::read_dir(&velodyne).map_err(|e| Error::io(&velodyne, e))?;
    let mut bins = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(&velodyne, e))?.path();
        if path.extension().is_some_and(|e| e == "bin") {
            bins.push(path);
        }
    }
    bins.sort();
    let labels = dir.join("labels");
    let has_labels = labels.is_dir();
    Ok(bins
        .into_iter()
        .map(|bin| {
            let label = has_labels.then(|| {
                let stem = bin.file_stem().unwrap_or_default();
                labels.join(stem).with_extension("label")
            });
            ScanFile { bin, label }
        })
        .collect())
}

pub fn split_sequences<S: AsRef<str>>(root: &Path, train: &[S], val: &[S]) -> Result<Splits> {
    if let Some(s) = train.iter().find(|t| val.iter().any(|v| v.as_ref() == t.as_ref())) {
        return Err(Error::Config(format!("sequence {} is in both the train and val lists", s.as_ref())));
    }
    let collect = |seqs: &[S]| -> Result<Vec<ScanFile>> {
        let mut out = Vec::new();
        for s in seqs {
            out.extend(list_sequence(root, s.as_ref())?);
        }
        Ok(out)
    };
    Ok(Splits {
        train: collect(train)?,
        val: collect(val)?,
    })
}
