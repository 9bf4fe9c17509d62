//! Procedural outdoor scenes: a ground plane with buildings, cars, poles and
//! vegetation, every point labeled with the primitive that produced it.

use std::f64::consts::PI;

use pcsc_core::geometry::{Point, PointCloud};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::{Error, Result};

pub const GROUND: u32 = 0;
pub const BUILDING: u32 = 1;
pub const CAR: u32 = 2;
pub const POLE: u32 = 3;
pub const VEGETATION: u32 = 4;
pub const CLASS_NAMES: [&str; 5] = ["ground", "building", "car", "pole", "vegetation"];

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    /// Side length of the square ground patch, centered on the origin (m).
    pub extent: f64,
    pub ground: bool,
    pub buildings: usize,
    pub cars: usize,
    pub poles: usize,
    pub trees: usize,
    pub building_side: (f64, f64),
    pub building_height: (f64, f64),
    pub car_length: (f64, f64),
    pub car_width: f64,
    pub car_height: f64,
    pub pole_radius: (f64, f64),
    pub pole_height: (f64, f64),
    pub tree_radius: (f64, f64),
    /// Points per square meter of sampled surface.
    pub density: f64,
    /// Standard deviation of the isotropic Gaussian jitter (m).
    pub noise: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            extent: 16.0,
            ground: true,
            buildings: 2,
            cars: 3,
            poles: 4,
            trees: 3,
            building_side: (2.0, 3.5),
            building_height: (2.5, 4.0),
            car_length: (3.4, 4.4),
            car_width: 1.8,
            car_height: 1.5,
            pole_radius: (0.1, 0.2),
            pole_height: (3.0, 5.0),
            tree_radius: (0.8, 1.4),
            density: 60.0,
            noise: 0.01,
            seed: 0,
        }
    }
}

/// One scene element. Boxes are axis-aligned; `center` is the footprint
/// center at ground level unless stated otherwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Primitive {
    Ground { half: f64 },
    /// Four vertical walls, open top.
    Building { center: [f64; 2], size: [f64; 2], height: f64 },
    /// Closed box sides and roof, floating `clearance` above the ground.
    Car { center: [f64; 2], size: [f64; 2], clearance: f64, height: f64 },
    Pole { center: [f64; 2], radius: f64, height: f64 },
    /// Solid ball of foliage; `center` is 3D.
    Tree { center: Point, radius: f64 },
}

impl Primitive {
    pub fn label(&self) -> u32 {
        match self {
            Primitive::Ground { .. } => GROUND,
            Primitive::Building { .. } => BUILDING,
            Primitive::Car { .. } => CAR,
            Primitive::Pole { .. } => POLE,
            Primitive::Tree { .. } => VEGETATION,
        }
    }

    fn footprint(&self) -> ([f64; 2], f64) {
        match *self {
            Primitive::Ground { .. } => ([0.0; 2], 0.0),
            Primitive::Building { center, size, .. } | Primitive::Car { center, size, .. } => {
                (center, 0.5 * size[0].hypot(size[1]))
            }
            Primitive::Pole { center, radius, .. } => (center, radius),
            Primitive::Tree { center, radius } => ([center[0], center[1]], radius),
        }
    }
}

fn range(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

/// Places the primitives without overlapping footprints.
pub fn layout(spec: &SceneSpec) -> Result<Vec<Primitive>> {
    if !(spec.density > 0.0) {
        return Err(Error::Config(format!("scene density must be > 0, got {}", spec.density)));
    }
    if !(spec.extent > 0.0) {
        return Err(Error::Config(format!("scene extent must be > 0, got {}", spec.extent)));
    }
    if !spec.ground && spec.buildings + spec.cars + spec.poles + spec.trees == 0 {
        return Err(Error::Config("scene has no primitives".into()));
    }
    let mut last = None;
    for attempt in 0..32u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(attempt.wrapping_mul(0x9e37_79b9_7f4a_7c15)));
        match try_layout(spec, &mut rng) {
            Ok(prims) => return Ok(prims),
            Err(e) => last = Some(e),
        }
    }
    Err(last.expect("at least one attempt"))
}

fn try_layout(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Result<Vec<Primitive>> {
    let half = spec.extent / 2.0;
    let mut out = Vec::new();
    if spec.ground {
        out.push(Primitive::Ground { half });
    }
    let kinds = [
        (BUILDING, spec.buildings),
        (CAR, spec.cars),
        (POLE, spec.poles),
        (VEGETATION, spec.trees),
    ];
    for (kind, count) in kinds {
        for _ in 0..count {
            let shape = match kind {
                BUILDING => {
                    let size = [range(rng, spec.building_side), range(rng, spec.building_side)];
                    let height = range(rng, spec.building_height);
                    Primitive::Building { center: [0.0; 2], size, height }
                }
                CAR => {
                    let l = range(rng, spec.car_length);
                    let w = spec.car_width;
                    let size = if rng.gen_bool(0.5) { [l, w] } else { [w, l] };
                    Primitive::Car { center: [0.0; 2], size, clearance: 0.2, height: spec.car_height }
                }
                POLE => Primitive::Pole {
                    center: [0.0; 2],
                    radius: range(rng, spec.pole_radius),
                    height: range(rng, spec.pole_height),
                },
                _ => {
                    let radius = range(rng, spec.tree_radius);
                    let z = radius + rng.gen_range(0.3..1.2);
                    Primitive::Tree { center: [0.0, 0.0, z], radius }
                }
            };
            out.push(place(rng, shape, half, &out)?);
        }
    }
    Ok(out)
}

fn place(rng: &mut ChaCha8Rng, shape: Primitive, half: f64, placed: &[Primitive]) -> Result<Primitive> {
    let (_, r) = shape.footprint();
    let lim = half - r - 0.2;
    if lim <= 0.0 {
        return Err(Error::Config(format!("scene extent {} too small for its primitives", 2.0 * half)));
    }
    for _ in 0..500 {
        let c = [rng.gen_range(-lim..lim), rng.gen_range(-lim..lim)];
        let free = placed.iter().all(|p| {
            let (pc, pr) = p.footprint();
            pr == 0.0 || (c[0] - pc[0]).hypot(c[1] - pc[1]) > r + pr + 0.3
        });
        if free {
            return Ok(match shape {
                Primitive::Building { size, height, .. } => Primitive::Building { center: c, size, height },
                Primitive::Car { size, clearance, height, .. } => Primitive::Car { center: c, size, clearance, height },
                Primitive::Pole { radius, height, .. } => Primitive::Pole { center: c, radius, height },
                Primitive::Tree { center, radius } => Primitive::Tree { center: [c[0], c[1], center[2]], radius },
                g @ Primitive::Ground { .. } => g,
            });
        }
    }
    Err(Error::Config("could not place every primitive; enlarge the extent or lower the counts".into()))
}

fn count(density: f64, area: f64) -> usize {
    ((density * area).round() as usize).max(1)
}

/// Samples `n` points on the axis-aligned rectangle spanned from `origin`
/// along axes `a` and `b` with lengths `la`, `lb`.
fn sample_face(rng: &mut ChaCha8Rng, out: &mut Vec<Point>, origin: Point, a: usize, b: usize, la: f64, lb: f64, density: f64) {
    for _ in 0..count(density, la * lb) {
        let mut p = origin;
        p[a] += rng.gen::<f64>() * la;
        p[b] += rng.gen::<f64>() * lb;
        out.push(p);
    }
}

fn sample_box_sides(rng: &mut ChaCha8Rng, out: &mut Vec<Point>, center: [f64; 2], size: [f64; 2], z0: f64, h: f64, density: f64) {
    let (x0, y0) = (center[0] - size[0] / 2.0, center[1] - size[1] / 2.0);
    sample_face(rng, out, [x0, y0, z0], 0, 2, size[0], h, density);
    sample_face(rng, out, [x0, y0 + size[1], z0], 0, 2, size[0], h, density);
    sample_face(rng, out, [x0, y0, z0], 1, 2, size[1], h, density);
    sample_face(rng, out, [x0 + size[0], y0, z0], 1, 2, size[1], h, density);
}

fn sample(rng: &mut ChaCha8Rng, prim: &Primitive, density: f64) -> Vec<Point> {
    let mut pts = Vec::new();
    match *prim {
        Primitive::Ground { half } => {
            sample_face(rng, &mut pts, [-half, -half, 0.0], 0, 1, 2.0 * half, 2.0 * half, density);
        }
        Primitive::Building { center, size, height } => {
            sample_box_sides(rng, &mut pts, center, size, 0.0, height, density);
        }
        Primitive::Car { center, size, clearance, height } => {
            sample_box_sides(rng, &mut pts, center, size, clearance, height, density);
            let origin = [center[0] - size[0] / 2.0, center[1] - size[1] / 2.0, clearance + height];
            sample_face(rng, &mut pts, origin, 0, 1, size[0], size[1], density);
        }
        Primitive::Pole { center, radius, height } => {
            for _ in 0..count(density, 2.0 * PI * radius * height) {
                let t = rng.gen::<f64>() * 2.0 * PI;
                pts.push([center[0] + radius * t.cos(), center[1] + radius * t.sin(), rng.gen::<f64>() * height]);
            }
        }
        Primitive::Tree { center, radius } => {
            let n = count(density, 4.0 * PI * radius * radius);
            while pts.len() < n {
                let d: [f64; 3] = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
                if d[0] * d[0] + d[1] * d[1] + d[2] * d[2] <= 1.0 {
                    pts.push([center[0] + radius * d[0], center[1] + radius * d[1], center[2] + radius * d[2]]);
                }
            }
        }
    }
    pts
}

/// Deterministic for a given spec (seed included). Intensity is uniform
/// noise and carries no class information.
pub fn generate_scene(spec: &SceneSpec) -> Result<PointCloud> {
    let prims = layout(spec)?;
    Ok(sample_layout(spec, &prims))
}

pub fn sample_layout(spec: &SceneSpec, prims: &[Primitive]) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5ca1_ab1e);
    let jitter = Normal::new(0.0, spec.noise.max(0.0)).expect("finite noise");
    let mut xyz = Vec::new();
    let mut labels = Vec::new();
    for prim in prims {
        let pts = sample(&mut rng, prim, spec.density);
        labels.extend(std::iter::repeat(prim.label()).take(pts.len()));
        xyz.extend(pts);
    }
    if spec.noise > 0.0 {
        for p in &mut xyz {
            for v in p.iter_mut() {
                *v += jitter.sample(&mut rng);
            }
        }
    }
    let intensity = (0..xyz.len()).map(|_| rng.gen::<f64>()).collect();
    PointCloud::new(xyz)
        .with_intensity(intensity)
        .and_then(|c| c.with_labels(labels))
        .expect("lengths match by construction")
}
