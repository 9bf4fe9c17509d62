//! Colored point-cloud export in PLY (`ascii 1.0` or
//! `binary_little_endian 1.0`) with `double` coordinates and `uchar` colors.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use pcsc_core::geometry::Point;
use pcsc_core::IGNORE_LABEL;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    Binary,
}

pub type Rgb = [u8; 3];

const IGNORED: Rgb = [0, 0, 0];
const CORRECT: Rgb = [160, 160, 160];
const WRONG: Rgb = [230, 30, 30];

const BASE_PALETTE: [Rgb; 19] = [
    [100, 150, 245],
    [100, 230, 245],
    [30, 60, 150],
    [80, 30, 180],
    [100, 80, 250],
    [255, 30, 30],
    [255, 40, 200],
    [150, 30, 90],
    [255, 0, 255],
    [255, 150, 255],
    [75, 0, 75],
    [175, 0, 75],
    [255, 200, 0],
    [255, 120, 50],
    [0, 175, 0],
    [135, 60, 0],
    [150, 240, 80],
    [255, 240, 150],
    [255, 0, 0],
];

/// Distinct colors for the first 19 classes, then a deterministic hash.
pub fn default_palette(classes: usize) -> Vec<Rgb> {
    (0..classes)
        .map(|c| {
            BASE_PALETTE.get(c).copied().unwrap_or_else(|| {
                let h = (c as u32).wrapping_mul(2_654_435_761);
                [(h >> 24) as u8, (h >> 16) as u8, (h >> 8) as u8]
            })
        })
        .collect()
}

pub fn label_colors(labels: &[u32], palette: &[Rgb]) -> Result<Vec<Rgb>> {
    labels
        .iter()
        .map(|&l| {
            if l == IGNORE_LABEL {
                Ok(IGNORED)
            } else {
                palette
                    .get(l as usize)
                    .copied()
                    .ok_or_else(|| Error::Data(format!("palette has {} colors, label {l}", palette.len())))
            }
        })
        .collect()
}

/// Gray where the prediction matches the ground truth, red where it does not,
/// black for ignored points.
pub fn error_colors(pred: &[u32], truth: &[u32]) -> Vec<Rgb> {
    pred.iter()
        .zip(truth)
        .map(|(&p, &t)| match t {
            IGNORE_LABEL => IGNORED,
            t if t == p => CORRECT,
            _ => WRONG,
        })
        .collect()
}

pub fn write_ply<W: Write>(mut w: W, xyz: &[Point], colors: &[Rgb], format: PlyFormat) -> io::Result<()> {
    if xyz.len() != colors.len() {
        return Err(io::Error::new(
            io::ErrorKind::InvalidInput,
            format!("{} points but {} colors", xyz.len(), colors.len()),
        ));
    }
    let name = match format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::Binary => "binary_little_endian",
    };
    write!(
        w,
        "ply\nformat {name} 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
        xyz.len()
    )?;
    for (p, c) in xyz.iter().zip(colors) {
        match format {
            PlyFormat::Ascii => writeln!(w, "{} {} {} {} {} {}", p[0], p[1], p[2], c[0], c[1], c[2])?,
            PlyFormat::Binary => {
                for v in p {
                    w.write_all(&v.to_le_bytes())?;
                }
                w.write_all(c)?;
            }
        }
    }
    w.flush()
}

pub fn export_ply(path: &Path, xyz: &[Point], colors: &[Rgb], format: PlyFormat) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_ply(BufWriter::new(file), xyz, colors, format).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_point_ascii() {
        let mut buf = Vec::new();
        write_ply(&mut buf, &[[1.0, 2.5, -3.0]], &[[1, 2, 3]], PlyFormat::Ascii).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("element vertex 1\n"));
        assert!(text.ends_with("end_header\n1 2.5 -3 1 2 3\n"));
    }

    #[test]
    fn error_map() {
        let c = error_colors(&[0, 1, 2], &[0, 2, IGNORE_LABEL]);
        assert_eq!(c, vec![CORRECT, WRONG, IGNORED]);
    }

    #[test]
    fn palette_coverage() {
        let pal = default_palette(3);
        assert!(label_colors(&[0, 2, IGNORE_LABEL], &pal).is_ok());
        assert!(label_colors(&[3], &pal).is_err());
        let big = default_palette(40);
        assert_eq!(big.len(), 40);
    }

    #[test]
    fn mismatched_lengths() {
        assert!(write_ply(Vec::new(), &[[0.0; 3]], &[], PlyFormat::Binary).is_err());
    }
}
