use alloc::vec;
use alloc::vec::Vec;

use super::{dist2, Point};
use crate::{Error, Result};

/// Exact k-nearest-neighbor lists, one row of `k` indices per point, sorted by
/// ascending distance with ties broken by lower index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnnGraph {
    k: usize,
    indices: Vec<u32>,
}

impl KnnGraph {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.indices.len() / self.k.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn neighbors(&self, p: usize) -> &[u32] {
        &self.indices[p * self.k..(p + 1) * self.k]
    }
}

/// Uniform-grid bucketing of a point set.
struct Grid {
    origin: Point,
    cell: f64,
    dims: [usize; 3],
    starts: Vec<usize>,
    items: Vec<u32>,
}

impl Grid {
    fn build(xyz: &[Point]) -> Grid {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in xyz {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let ext: Vec<f64> = (0..3).map(|a| hi[a] - lo[a]).collect();
        let max_ext = ext.iter().copied().fold(0.0, f64::max);
        let n = xyz.len() as f64;
        let cell = if max_ext > 0.0 {
            let floor = max_ext * 1e-3;
            let vol: f64 = ext.iter().map(|e| e.max(floor)).product();
            libm::cbrt(vol / n).max(max_ext / 4096.0)
        } else {
            1.0
        };
        let mut dims = [1usize; 3];
        for a in 0..3 {
            dims[a] = (libm::floor(ext[a] / cell) as usize + 1).max(1);
        }
        let mut grid = Grid {
            origin: lo,
            cell,
            dims,
            starts: Vec::new(),
            items: Vec::new(),
        };
        let total = dims[0] * dims[1] * dims[2];
        let cells: Vec<usize> = xyz.iter().map(|p| grid.flat(grid.cell_of(p))).collect();
        let mut counts = vec![0usize; total + 1];
        for &c in &cells {
            counts[c + 1] += 1;
        }
        for i in 0..total {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut items = vec![0u32; xyz.len()];
        for (i, &c) in cells.iter().enumerate() {
            items[fill[c]] = i as u32;
            fill[c] += 1;
        }
        grid.starts = counts;
        grid.items = items;
        grid
    }

    fn cell_of(&self, p: &Point) -> [usize; 3] {
        let mut c = [0usize; 3];
        for a in 0..3 {
            let f = libm::floor((p[a] - self.origin[a]) / self.cell);
            c[a] = (f.max(0.0) as usize).min(self.dims[a] - 1);
        }
        c
    }

    fn flat(&self, c: [usize; 3]) -> usize {
        (c[2] * self.dims[1] + c[1]) * self.dims[0] + c[0]
    }

    fn bucket(&self, c: [usize; 3]) -> &[u32] {
        let f = self.flat(c);
        &self.items[self.starts[f]..self.starts[f + 1]]
    }

    /// Lower bound on the distance from `q` to any point in a cell outside
    /// the Chebyshev block of radius `r` around `c`. Infinite once the block
    /// covers the grid.
    fn escape_distance(&self, q: &Point, c: [usize; 3], r: usize) -> f64 {
        let mut best = f64::INFINITY;
        for a in 0..3 {
            if c[a] > r {
                let lo = self.origin[a] + (c[a] - r) as f64 * self.cell;
                best = best.min(q[a] - lo);
            }
            if c[a] + r + 1 < self.dims[a] {
                let hi = self.origin[a] + (c[a] + r + 1) as f64 * self.cell;
                best = best.min(hi - q[a]);
            }
        }
        best
    }
}

/// Bounded list of the best `(d², index)` pairs seen so far.
struct TopK {
    k: usize,
    items: Vec<(f64, u32)>,
}

impl TopK {
    fn offer(&mut self, d2: f64, idx: u32) {
        let better = |a: &(f64, u32)| (d2, idx) < *a;
        if self.items.len() == self.k && !self.items.last().is_some_and(better) {
            return;
        }
        let pos = self.items.iter().position(better).unwrap_or(self.items.len());
        self.items.insert(pos, (d2, idx));
        self.items.truncate(self.k);
    }

    fn worst(&self) -> Option<f64> {
        (self.items.len() == self.k).then(|| self.items[self.k - 1].0)
    }
}

/// Exact Euclidean k-NN for every point, excluding the point itself.
pub fn knn(xyz: &[Point], k: usize) -> Result<KnnGraph> {
    if k == 0 || xyz.len() <= k {
        return Err(Error::NotEnoughPoints { n: xyz.len(), k });
    }
    let grid = Grid::build(xyz);
    let max_r = grid.dims.iter().copied().max().unwrap_or(1);
    let mut indices = Vec::with_capacity(xyz.len() * k);
    let mut top = TopK {
        k,
        items: Vec::with_capacity(k + 1),
    };
    for (qi, q) in xyz.iter().enumerate() {
        top.items.clear();
        let c = grid.cell_of(q);
        for r in 0..=max_r {
            visit_shell(&grid, c, r, |bucket| {
                for &pi in bucket {
                    if pi as usize != qi {
                        top.offer(dist2(q, &xyz[pi as usize]), pi);
                    }
                }
            });
            let esc = grid.escape_distance(q, c, r);
            if esc.is_infinite() {
                break;
            }
            if let Some(w) = top.worst() {
                // small margin absorbs rounding in the cell assignment
                let bound = esc * (1.0 - 1e-9) - 1e-12;
                if bound > 0.0 && w < bound * bound {
                    break;
                }
            }
        }
        indices.extend(top.items.iter().map(|&(_, i)| i));
    }
    Ok(KnnGraph { k, indices })
}

fn visit_shell(grid: &Grid, c: [usize; 3], r: usize, mut f: impl FnMut(&[u32])) {
    let r = r as isize;
    let range = |a: usize| {
        let lo = (c[a] as isize - r).max(0);
        let hi = (c[a] as isize + r).min(grid.dims[a] as isize - 1);
        (lo, hi)
    };
    let (x0, x1) = range(0);
    let (y0, y1) = range(1);
    let (z0, z1) = range(2);
    let ci = [c[0] as isize, c[1] as isize, c[2] as isize];
    for z in z0..=z1 {
        let dz = (z - ci[2]).abs();
        for y in y0..=y1 {
            let dy = (y - ci[1]).abs();
            if dz < r && dy < r {
                for x in [ci[0] - r, ci[0] + r] {
                    if x >= x0 && x <= x1 && (r > 0 || x == ci[0]) {
                        f(grid.bucket([x as usize, y as usize, z as usize]));
                    }
                }
            } else {
                for x in x0..=x1 {
                    f(grid.bucket([x as usize, y as usize, z as usize]));
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn brute(xyz: &[Point], k: usize) -> Vec<Vec<u32>> {
        (0..xyz.len())
            .map(|q| {
                let mut all: Vec<(f64, u32)> = (0..xyz.len())
                    .filter(|&p| p != q)
                    .map(|p| (dist2(&xyz[q], &xyz[p]), p as u32))
                    .collect();
                all.sort_by(|a, b| a.partial_cmp(b).unwrap());
                all.iter().take(k).map(|a| a.1).collect()
            })
            .collect()
    }

    fn line() -> Vec<Point> {
        alloc::vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [3.0, 0.0, 0.0]]
    }

    #[test]
    fn collinear_examples() {
        let g = knn(&line(), 1).unwrap();
        assert_eq!(
            (0..3).map(|p| g.neighbors(p).to_vec()).collect::<Vec<_>>(),
            alloc::vec![alloc::vec![1], alloc::vec![0], alloc::vec![1]]
        );
        let g = knn(&line(), 2).unwrap();
        assert_eq!(
            (0..3).map(|p| g.neighbors(p).to_vec()).collect::<Vec<_>>(),
            alloc::vec![alloc::vec![1, 2], alloc::vec![0, 2], alloc::vec![1, 0]]
        );
    }

    #[test]
    fn too_few_points() {
        assert_eq!(knn(&line(), 3), Err(Error::NotEnoughPoints { n: 3, k: 3 }));
    }

    #[test]
    fn ties_prefer_lower_index() {
        // four points on a unit square: both side neighbors tie
        let xyz = alloc::vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 1.0, 0.0]];
        let g = knn(&xyz, 2).unwrap();
        assert_eq!(g.neighbors(3), &[1, 2]);
        assert_eq!(g.neighbors(0), &[1, 2]);
    }

    #[test]
    fn matches_brute_force_on_random_clouds() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for (n, flat) in [(500usize, false), (800, true), (300, false)] {
            let xyz: Vec<Point> = (0..n)
                .map(|_| {
                    let z = if flat { 0.0 } else { rng.gen_range(0.0..3.0) };
                    [rng.gen_range(0.0..10.0), rng.gen_range(-5.0..5.0), z]
                })
                .collect();
            let g = knn(&xyz, 10).unwrap();
            let b = brute(&xyz, 10);
            for q in 0..n {
                assert_eq!(g.neighbors(q), &b[q][..], "point {q}");
            }
        }
    }

    #[test]
    fn duplicate_points_and_integer_lattice() {
        // lattice points produce many exact distance ties
        let mut xyz = Vec::new();
        for x in 0..6 {
            for y in 0..6 {
                xyz.push([x as f64, y as f64, 0.0]);
            }
        }
        xyz.push([2.0, 2.0, 0.0]);
        let g = knn(&xyz, 6).unwrap();
        let b = brute(&xyz, 6);
        for q in 0..xyz.len() {
            assert_eq!(g.neighbors(q), &b[q][..]);
        }
    }
}
