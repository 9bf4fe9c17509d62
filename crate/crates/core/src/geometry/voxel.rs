use alloc::vec::Vec;

use super::{Point, PointCloud, VoxelCoord};
use crate::{Error, Result};

/// Point ↔ voxel index at one resolution.
///
/// Voxel rows are ordered lexicographically by coordinate; the points of a
/// voxel are listed in ascending index order.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelMap {
    voxel_size: f64,
    coords: Vec<VoxelCoord>,
    point_to_voxel: Vec<usize>,
    offsets: Vec<usize>,
    members: Vec<usize>,
}

impl VoxelMap {
    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn coords(&self) -> &[VoxelCoord] {
        &self.coords
    }

    pub fn point_to_voxel(&self) -> &[usize] {
        &self.point_to_voxel
    }

    pub fn num_voxels(&self) -> usize {
        self.coords.len()
    }

    pub fn num_points(&self) -> usize {
        self.point_to_voxel.len()
    }

    /// Indices of the points inside voxel row `v`.
    pub fn points_in(&self, v: usize) -> &[usize] {
        &self.members[self.offsets[v]..self.offsets[v + 1]]
    }

    pub fn voxel_to_points(&self) -> impl Iterator<Item = &[usize]> + '_ {
        (0..self.num_voxels()).map(move |v| self.points_in(v))
    }
}

/// Assigns each point to the voxel `floor(xyz / voxel_size)`.
pub fn voxelize(cloud: &PointCloud, voxel_size: f64) -> Result<VoxelMap> {
    if !(voxel_size > 0.0 && voxel_size.is_finite()) {
        return Err(Error::InvalidConfig(alloc::format!(
            "voxel size must be positive, got {voxel_size}"
        )));
    }
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let mut point_coords = Vec::with_capacity(cloud.len());
    for (i, p) in cloud.xyz.iter().enumerate() {
        if !p.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteCoordinate(i));
        }
        let mut c = [0i32; 3];
        for a in 0..3 {
            let f = libm::floor(p[a] / voxel_size);
            if !(f >= i32::MIN as f64 && f <= i32::MAX as f64) {
                return Err(Error::InvalidConfig(alloc::format!(
                    "point {i} is out of the representable voxel range"
                )));
            }
            c[a] = f as i32;
        }
        point_coords.push(c);
    }

    let mut order: Vec<usize> = (0..cloud.len()).collect();
    order.sort_unstable_by_key(|&i| (point_coords[i], i));

    let mut coords: Vec<VoxelCoord> = Vec::new();
    let mut offsets = Vec::new();
    let mut point_to_voxel = alloc::vec![0usize; cloud.len()];
    for (pos, &i) in order.iter().enumerate() {
        if coords.last() != Some(&point_coords[i]) {
            coords.push(point_coords[i]);
            offsets.push(pos);
        }
        point_to_voxel[i] = coords.len() - 1;
    }
    offsets.push(order.len());
    Ok(VoxelMap {
        voxel_size,
        coords,
        point_to_voxel,
        offsets,
        members: order,
    })
}

pub fn voxel_center(coord: VoxelCoord, voxel_size: f64) -> Point {
    [
        (coord[0] as f64 + 0.5) * voxel_size,
        (coord[1] as f64 + 0.5) * voxel_size,
        (coord[2] as f64 + 0.5) * voxel_size,
    ]
}

/// Offset of every point from the center of its voxel.
pub fn relative_coords(cloud: &PointCloud, vmap: &VoxelMap) -> Vec<Point> {
    cloud
        .xyz
        .iter()
        .zip(vmap.point_to_voxel())
        .map(|(p, &v)| {
            let c = voxel_center(vmap.coords[v], vmap.voxel_size);
            [p[0] - c[0], p[1] - c[1], p[2] - c[2]]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn close(a: Point, b: Point, tol: f64) -> bool {
        (0..3).all(|i| (a[i] - b[i]).abs() <= tol)
    }

    #[test]
    fn floor_assignment() {
        let cloud = PointCloud::new(alloc::vec![[0.25, 0.17, -0.03]]);
        let vm = voxelize(&cloud, 0.1).unwrap();
        assert_eq!(vm.coords(), &[[2, 1, -1]]);
        let rel = relative_coords(&cloud, &vm);
        assert!(close(rel[0], [0.0, 0.02, 0.02], 1e-12), "{:?}", rel[0]);
    }

    #[test]
    fn shared_voxel() {
        let cloud = PointCloud::new(alloc::vec![[0.01, 0.0, 0.0], [0.09, 0.0, 0.0]]);
        let vm = voxelize(&cloud, 0.1).unwrap();
        assert_eq!(vm.coords(), &[[0, 0, 0]]);
        assert_eq!(vm.points_in(0), &[0, 1]);
    }

    #[test]
    fn boundary_point_belongs_to_upper_voxel() {
        let cloud = PointCloud::new(alloc::vec![[0.5, -0.5, 0.0]]);
        let vm = voxelize(&cloud, 0.25).unwrap();
        assert_eq!(vm.coords(), &[[2, -2, 0]]);
    }

    #[test]
    fn centers() {
        assert!(close(voxel_center([0, 0, 0], 0.1), [0.05; 3], 1e-15));
        assert!(close(voxel_center([2, 1, -1], 0.1), [0.25, 0.15, -0.05], 1e-15));
    }

    #[test]
    fn errors() {
        assert_eq!(
            voxelize(&PointCloud::new(alloc::vec![]), 0.1),
            Err(Error::EmptyCloud)
        );
        let cloud = PointCloud::new(alloc::vec![[0.0; 3], [f64::NAN, 0.0, 0.0]]);
        assert_eq!(voxelize(&cloud, 0.1), Err(Error::NonFiniteCoordinate(1)));
        assert!(voxelize(&PointCloud::new(alloc::vec![[0.0; 3]]), 0.0).is_err());
    }

    #[test]
    fn random_cloud_matches_recomputed_floor() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let xyz: Vec<Point> = (0..1000)
            .map(|_| [rng.gen_range(0.0..10.0), rng.gen_range(0.0..10.0), rng.gen_range(0.0..10.0)])
            .collect();
        let cloud = PointCloud::new(xyz.clone());
        let vm = voxelize(&cloud, 0.1).unwrap();
        assert!(vm.num_voxels() <= cloud.len());
        for (i, p) in xyz.iter().enumerate() {
            let expect = [
                libm::floor(p[0] / 0.1) as i32,
                libm::floor(p[1] / 0.1) as i32,
                libm::floor(p[2] / 0.1) as i32,
            ];
            assert_eq!(vm.coords()[vm.point_to_voxel()[i]], expect);
        }
        assert!(vm.coords().windows(2).all(|w| w[0] < w[1]));
        for (p, r) in xyz.iter().zip(relative_coords(&cloud, &vm)) {
            let _ = p;
            assert!(r.iter().all(|v| v.abs() <= 0.05 + 1e-12));
        }
    }

    fn arb_cloud() -> impl Strategy<Value = Vec<Point>> {
        proptest::collection::vec(
            (-400i32..400, -400i32..400, -400i32..400)
                .prop_map(|(x, y, z)| [x as f64 / 64.0, y as f64 / 64.0, z as f64 / 64.0]),
            1..120,
        )
    }

    proptest! {
        #[test]
        fn partition_round_trip(xyz in arb_cloud()) {
            let cloud = PointCloud::new(xyz);
            let vm = voxelize(&cloud, 0.125).unwrap();
            let mut seen = alloc::vec![0u32; cloud.len()];
            for (v, pts) in vm.voxel_to_points().enumerate() {
                prop_assert!(!pts.is_empty());
                for &p in pts {
                    seen[p] += 1;
                    prop_assert_eq!(vm.point_to_voxel()[p], v);
                }
            }
            prop_assert!(seen.iter().all(|&c| c == 1));
        }

        #[test]
        fn translation_covariance_is_exact(xyz in arb_cloud(), m in (-8i32..8, -8i32..8, -8i32..8)) {
            // dyadic coordinates and voxel size keep the arithmetic exact
            let size = 0.125;
            let cloud = PointCloud::new(xyz);
            let shift = [m.0 as f64 * size, m.1 as f64 * size, m.2 as f64 * size];
            let moved = cloud.translated(shift);
            let a = voxelize(&cloud, size).unwrap();
            let b = voxelize(&moved, size).unwrap();
            for (ca, cb) in a.coords().iter().zip(b.coords()) {
                prop_assert_eq!([ca[0] + m.0, ca[1] + m.1, ca[2] + m.2], *cb);
            }
            let ra = relative_coords(&cloud, &a);
            let rb = relative_coords(&moved, &b);
            for (x, y) in ra.iter().zip(&rb) {
                for k in 0..3 {
                    prop_assert_eq!(x[k].to_bits(), y[k].to_bits());
                }
            }
        }

        #[test]
        fn permutation_equivariance(xyz in arb_cloud(), seed in any::<u64>()) {
            let cloud = PointCloud::new(xyz);
            let mut order: Vec<usize> = (0..cloud.len()).collect();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            for i in (1..order.len()).rev() {
                order.swap(i, rng.gen_range(0..=i));
            }
            let a = voxelize(&cloud, 0.125).unwrap();
            let b = voxelize(&cloud.permuted(&order), 0.125).unwrap();
            prop_assert_eq!(a.coords(), b.coords());
            for (new, &old) in order.iter().enumerate() {
                prop_assert_eq!(b.point_to_voxel()[new], a.point_to_voxel()[old]);
            }
        }
    }
}
