//! Raw dataset label ids to training classes.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use pcsc_core::IGNORE_LABEL;

use crate::{Error, Result};

const KITTI_19: &str = include_str!("../data/semantic-kitti-19.txt");

pub const KITTI_CLASS_NAMES: [&str; 19] = [
    "car",
    "bicycle",
    "motorcycle",
    "truck",
    "other-vehicle",
    "person",
    "bicyclist",
    "motorcyclist",
    "road",
    "parking",
    "sidewalk",
    "other-ground",
    "building",
    "fence",
    "vegetation",
    "trunk",
    "terrain",
    "pole",
    "traffic-sign",
];

/// Total over the raw ids it lists; anything else is rejected on lookup.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RemapTable {
    map: BTreeMap<u16, u32>,
    classes: usize,
}

impl RemapTable {
    /// `raw_id class_id` per line; `#` starts a comment; the class may be
    /// `ignore` or `-1`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        let mut classes = 0;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = || Error::Config(format!("remap line {}: expected `raw_id class_id`, got `{line}`", lineno + 1));
            let mut it = line.split_whitespace();
            let (raw, class) = match (it.next(), it.next(), it.next()) {
                (Some(r), Some(c), None) => (r, c),
                _ => return Err(bad()),
            };
            let raw: u16 = raw.parse().map_err(|_| bad())?;
            let class = match class {
                "ignore" | "-1" => IGNORE_LABEL,
                c => {
                    let c: u32 = c.parse().map_err(|_| bad())?;
                    classes = classes.max(c as usize + 1);
                    c
                }
            };
            if map.insert(raw, class).is_some() {
                return Err(Error::Config(format!("remap line {}: raw id {raw} listed twice", lineno + 1)));
            }
        }
        Ok(RemapTable { map, classes })
    }

    pub fn kitti19() -> Self {
        Self::parse(KITTI_19).expect("bundled table parses")
    }

    /// Raw id `c` maps to class `c` for `c < classes`.
    pub fn identity(classes: usize) -> Self {
        RemapTable {
            map: (0..classes as u16).map(|c| (c, u32::from(c))).collect(),
            classes,
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, raw: u16) -> Option<u32> {
        self.map.get(&raw).copied()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (raw, &class) in &self.map {
            if class == IGNORE_LABEL {
                let _ = writeln!(s, "{raw} ignore");
            } else {
                let _ = writeln!(s, "{raw} {class}");
            }
        }
        s
    }
}
