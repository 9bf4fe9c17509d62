//! SemanticKITTI scan files: `.bin` holds `x y z remission` as little-endian
//! `f32` per point, `.label` one little-endian `u32` per point with the
//! semantic id in the lower 16 bits and the instance id in the upper 16.

use std::fs;
use std::path::Path;

use pcsc_core::geometry::{Point, PointCloud};

use crate::remap::RemapTable;
use crate::{Error, Result};

pub fn parse_points(bytes: &[u8]) -> std::result::Result<(Vec<Point>, Vec<f64>), String> {
    if bytes.len() % 16 != 0 {
        return Err(format!("{} bytes is not a multiple of 16", bytes.len()));
    }
    let mut xyz = Vec::with_capacity(bytes.len() / 16);
    let mut intensity = Vec::with_capacity(bytes.len() / 16);
    for rec in bytes.chunks_exact(16) {
        let f = |i: usize| f64::from(f32::from_le_bytes(rec[4 * i..4 * i + 4].try_into().unwrap()));
        xyz.push([f(0), f(1), f(2)]);
        intensity.push(f(3).clamp(0.0, 1.0));
    }
    Ok((xyz, intensity))
}

/// Semantic ids (lower 16 bits) of each label word.
pub fn parse_labels(bytes: &[u8]) -> std::result::Result<Vec<u16>, String> {
    if bytes.len() % 4 != 0 {
        return Err(format!("{} bytes is not a multiple of 4", bytes.len()));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|w| (u32::from_le_bytes(w.try_into().unwrap()) & 0xffff) as u16)
        .collect())
}

pub fn read_kitti_scan(bin: &Path, label: Option<&Path>, remap: &RemapTable) -> Result<PointCloud> {
    let bytes = fs::read(bin).map_err(|e| Error::io(bin, e))?;
    let (xyz, intensity) = parse_points(&bytes).map_err(|m| Error::format(bin, m))?;
    let n = xyz.len();
    let mut cloud = PointCloud::new(xyz).with_intensity(intensity)?;
    if let Some(label) = label {
        let bytes = fs::read(label).map_err(|e| Error::io(label, e))?;
        let raw = parse_labels(&bytes).map_err(|m| Error::format(label, m))?;
        if raw.len() != n {
            return Err(Error::format(
                label,
                format!("{} labels ({} bytes) for {} points ({} bytes)", raw.len(), bytes.len(), n, 16 * n),
            ));
        }
        let labels = raw
            .iter()
            .enumerate()
            .map(|(index, &r)| remap.get(r).ok_or(Error::UnknownLabel { raw: r, index }))
            .collect::<Result<Vec<u32>>>()?;
        cloud = cloud.with_labels(labels)?;
    }
    Ok(cloud)
}

/// Writes the scan, storing labels as raw semantic ids with a zero instance.
pub fn write_kitti_scan(cloud: &PointCloud, bin: &Path, label: Option<&Path>) -> Result<()> {
    let mut bytes = Vec::with_capacity(16 * cloud.len());
    for (i, p) in cloud.xyz.iter().enumerate() {
        let r = cloud.intensity.as_ref().map_or(0.0, |v| v[i]);
        for v in [p[0], p[1], p[2], r] {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    fs::write(bin, bytes).map_err(|e| Error::io(bin, e))?;
    if let Some(path) = label {
        let labels = cloud.labels.as_deref().ok_or(pcsc_core::Error::MissingLabels)?;
        let mut bytes = Vec::with_capacity(4 * labels.len());
        for (index, &l) in labels.iter().enumerate() {
            let raw = u16::try_from(l).map_err(|_| Error::Data(format!("label {l} at point {index} does not fit 16 bits")))?;
            bytes.extend_from_slice(&u32::from(raw).to_le_bytes());
        }
        fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}
