//! File round trips through the filesystem, read back with parsers written
//! here independently of the crate.

use std::fs;

use pcsc_core::geometry::PointCloud;
use pcscnet::dataset::{split_sequences, DEFAULT_TRAIN, DEFAULT_VAL};
use pcscnet::kitti::{read_kitti_scan, write_kitti_scan};
use pcscnet::ply::{error_colors, export_ply, PlyFormat};
use pcscnet::remap::RemapTable;
use proptest::prelude::*;

struct Ply {
    format: String,
    xyz: Vec<[f64; 3]>,
    rgb: Vec<[u8; 3]>,
}

fn parse_ply(bytes: &[u8]) -> Ply {
    let end = b"end_header\n";
    let split = bytes.windows(end.len()).position(|w| w == end).expect("header terminator") + end.len();
    let header = std::str::from_utf8(&bytes[..split]).unwrap();
    let mut lines = header.lines();
    assert_eq!(lines.next(), Some("ply"));
    let mut format = String::new();
    let mut count = 0;
    let mut props = Vec::new();
    for line in lines {
        let f: Vec<&str> = line.split_whitespace().collect();
        match f.as_slice() {
            ["format", fmt, "1.0"] => format = fmt.to_string(),
            ["element", "vertex", n] => count = n.parse().unwrap(),
            ["property", ty, name] => props.push((ty.to_string(), name.to_string())),
            _ => {}
        }
    }
    let names: Vec<&str> = props.iter().map(|p| p.1.as_str()).collect();
    assert_eq!(names, ["x", "y", "z", "red", "green", "blue"]);
    let body = &bytes[split..];
    let mut xyz = Vec::new();
    let mut rgb = Vec::new();
    if format == "ascii" {
        for line in std::str::from_utf8(body).unwrap().lines() {
            let v: Vec<&str> = line.split_whitespace().collect();
            xyz.push([v[0].parse().unwrap(), v[1].parse().unwrap(), v[2].parse().unwrap()]);
            rgb.push([v[3].parse().unwrap(), v[4].parse().unwrap(), v[5].parse().unwrap()]);
        }
    } else {
        assert_eq!(format, "binary_little_endian");
        assert_eq!(body.len(), count * 27);
        for rec in body.chunks(27) {
            let f = |i: usize| f64::from_le_bytes(rec[8 * i..8 * i + 8].try_into().unwrap());
            xyz.push([f(0), f(1), f(2)]);
            rgb.push([rec[24], rec[25], rec[26]]);
        }
    }
    assert_eq!(xyz.len(), count);
    Ply { format, xyz, rgb }
}

#[test]
fn single_point_header() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("one.ply");
    export_ply(&path, &[[1.0, 2.0, 3.0]], &[[9, 8, 7]], PlyFormat::Ascii).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    assert!(text.contains("element vertex 1\n"));
    let ply = parse_ply(text.as_bytes());
    assert_eq!(ply.format, "ascii");
    assert_eq!(ply.xyz, [[1.0, 2.0, 3.0]]);
    assert_eq!(ply.rgb, [[9, 8, 7]]);
}

#[test]
fn error_map_colors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("err.ply");
    let colors = error_colors(&[0, 1, 2], &[0, 2, u32::MAX]);
    export_ply(&path, &[[0.0; 3]; 3], &colors, PlyFormat::Binary).unwrap();
    let ply = parse_ply(&fs::read(&path).unwrap());
    let [ok, wrong, _] = [ply.rgb[0], ply.rgb[1], ply.rgb[2]];
    assert!(ok[0] == ok[1] && ok[1] == ok[2] && ok[0] > 0, "correct points are gray");
    assert!(wrong[0] > 200 && wrong[1] < 50 && wrong[2] < 50, "wrong points are red");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn binary_ply_is_bit_exact(
        pts in proptest::collection::vec(proptest::array::uniform3(proptest::num::f64::NORMAL), 1..50),
        seed in any::<u8>(),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cloud.ply");
        let colors: Vec<[u8; 3]> = (0..pts.len()).map(|i| [seed, i as u8, 255 - seed]).collect();
        export_ply(&path, &pts, &colors, PlyFormat::Binary).unwrap();
        let ply = parse_ply(&fs::read(&path).unwrap());
        for (a, b) in ply.xyz.iter().zip(&pts) {
            for (x, y) in a.iter().zip(b) {
                prop_assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        prop_assert_eq!(ply.rgb, colors);
    }

    #[test]
    fn kitti_round_trip(
        pts in proptest::collection::vec(proptest::array::uniform3(-80.0f32..80.0), 1..60),
        labels in proptest::collection::vec(0u32..5, 60),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let (bin, lab) = (dir.path().join("s.bin"), dir.path().join("s.label"));
        let xyz: Vec<[f64; 3]> = pts.iter().map(|p| [p[0] as f64, p[1] as f64, p[2] as f64]).collect();
        let n = xyz.len();
        let intensity: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
        let cloud = PointCloud::new(xyz.clone())
            .with_intensity(intensity)
            .and_then(|c| c.with_labels(labels[..n].to_vec()))
            .unwrap();
        write_kitti_scan(&cloud, &bin, Some(&lab)).unwrap();
        prop_assert_eq!(fs::metadata(&bin).unwrap().len(), 16 * n as u64);
        let back = read_kitti_scan(&bin, Some(&lab), &RemapTable::identity(5)).unwrap();
        prop_assert_eq!(back.xyz, xyz);
        prop_assert_eq!(back.labels, cloud.labels);
    }
}

#[test]
fn kitti_raw_words_and_remap() {
    let dir = tempfile::tempdir().unwrap();
    let (bin, lab) = (dir.path().join("s.bin"), dir.path().join("s.label"));
    let mut points = Vec::new();
    for v in [1.5f32, -2.25, 0.125, 0.5, 3.0, 4.0, 5.0, 2.0] {
        points.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(&bin, &points).unwrap();
    let words: Vec<u8> = [0x0003_000Au32, 0x0000_0028].iter().flat_map(|w| w.to_le_bytes()).collect();
    fs::write(&lab, &words).unwrap();
    let cloud = read_kitti_scan(&bin, Some(&lab), &RemapTable::kitti19()).unwrap();
    assert_eq!(cloud.xyz, [[1.5, -2.25, 0.125], [3.0, 4.0, 5.0]]);
    assert_eq!(cloud.intensity.as_deref(), Some(&[0.5, 1.0][..]));
    // raw 10 is car (0), raw 40 is road (8)
    assert_eq!(cloud.labels.as_deref(), Some(&[0, 8][..]));

    fs::write(&lab, 0x0000_0007u32.to_le_bytes().repeat(2)).unwrap();
    let err = read_kitti_scan(&bin, Some(&lab), &RemapTable::kitti19()).unwrap_err();
    assert_eq!(err.kind(), "label");

    fs::write(&bin, &points[..20]).unwrap();
    assert_eq!(read_kitti_scan(&bin, None, &RemapTable::kitti19()).unwrap_err().kind(), "format");
}

#[test]
fn default_splits_and_missing_sequences() {
    assert_eq!(DEFAULT_TRAIN, ["00", "01", "02", "03", "04", "05", "06", "07", "09", "10"]);
    assert_eq!(DEFAULT_VAL, ["08"]);
    let dir = tempfile::tempdir().unwrap();
    for seq in ["00", "08"] {
        let vel = dir.path().join("sequences").join(seq).join("velodyne");
        fs::create_dir_all(&vel).unwrap();
        for name in ["000001.bin", "000000.bin"] {
            fs::write(vel.join(name), [0u8; 16]).unwrap();
        }
    }
    let splits = split_sequences(dir.path(), &["00"], &["08"]).unwrap();
    assert_eq!(splits.train.len(), 2);
    assert!(splits.train[0].bin.ends_with("000000.bin"));
    assert!(split_sequences(dir.path(), &["00"], &[] as &[&str]).unwrap().val.is_empty());
    assert!(split_sequences(dir.path(), &["00", "01"], &["08"]).is_err());
    assert!(split_sequences(dir.path(), &["00"], &["00"]).is_err());
}
