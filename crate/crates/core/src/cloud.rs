//! Point clouds, nearest-neighbour queries and the symmetric Chamfer distance.

use crate::error::{domain, Result};
use crate::par;

pub type Point3 = [f64; 3];

/// Clouds at or above this size are searched through a uniform grid.
pub const GRID_THRESHOLD: usize = 4096;

/// A set of surface samples in millimetres.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        if points.is_empty() {
            return domain("point cloud must contain at least one point");
        }
        if points.iter().flatten().any(|c| !c.is_finite()) {
            return domain("point cloud coordinates must be finite");
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn into_points(self) -> Vec<Point3> {
        self.points
    }

    pub fn translated(&self, t: Point3) -> Self {
        Self {
            points: self
                .points
                .iter()
                .map(|p| [p[0] + t[0], p[1] + t[1], p[2] + t[2]])
                .collect(),
        }
    }

    /// Axis-aligned bounding box `(min, max)`.
    pub fn bounds(&self) -> (Point3, Point3) {
        bounds(&self.points)
    }

    /// Length of the bounding-box diagonal.
    pub fn diagonal(&self) -> f64 {
        let (lo, hi) = self.bounds();
        dist2(&lo, &hi).sqrt()
    }
}

/// Symmetric Chamfer distance: the sum of both directional means of squared
/// nearest-neighbour distances. The value is in mm²; [`ChamferDistance::rms_mm`]
/// gives its square root for reporting in millimetres.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct ChamferDistance(pub f64);

impl ChamferDistance {
    pub fn squared_mm(self) -> f64 {
        self.0
    }

    pub fn rms_mm(self) -> f64 {
        self.0.sqrt()
    }
}

#[inline]
pub fn dist2(a: &Point3, b: &Point3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

fn bounds(points: &[Point3]) -> (Point3, Point3) {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points {
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    (lo, hi)
}

/// Nearest neighbour in `target` for one query: `(index, squared distance)`.
/// Ties resolve to the lowest index.
pub fn nearest_brute(query: &Point3, target: &[Point3]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, t) in target.iter().enumerate() {
        let d = dist2(query, t);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Uniform-grid index over a fixed point set.
pub struct GridIndex<'a> {
    points: &'a [Point3],
    origin: Point3,
    cell: f64,
    dims: [usize; 3],
    // CSR layout: cell c owns entries[starts[c]..starts[c + 1]].
    starts: Vec<usize>,
    entries: Vec<usize>,
}

impl<'a> GridIndex<'a> {
    pub fn new(points: &'a [Point3]) -> Self {
        let (lo, hi) = bounds(points);
        let ext = [hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]];
        let max_ext = ext.iter().cloned().fold(0.0, f64::max).max(1e-9);
        // Aim for roughly two points per occupied cell on surface-like data.
        let target_cells = (points.len() / 2).max(1) as f64;
        let mut cell = max_ext / target_cells.sqrt().max(1.0);
        let mut dims = [1usize; 3];
        loop {
            for k in 0..3 {
                dims[k] = ((ext[k] / cell).floor() as usize + 1).max(1);
            }
            if dims.iter().product::<usize>() <= 4 * points.len() + 8 {
                break;
            }
            cell *= 1.5;
        }
        let ncell = dims.iter().product::<usize>();
        let mut counts = vec![0usize; ncell + 1];
        let cell_of: Vec<usize> = points
            .iter()
            .map(|p| {
                let c = Self::coords(p, &lo, cell, &dims);
                (c[2] * dims[1] + c[1]) * dims[0] + c[0]
            })
            .collect();
        for &c in &cell_of {
            counts[c + 1] += 1;
        }
        for c in 0..ncell {
            counts[c + 1] += counts[c];
        }
        let mut fill = counts.clone();
        let mut entries = vec![0usize; points.len()];
        for (i, &c) in cell_of.iter().enumerate() {
            entries[fill[c]] = i;
            fill[c] += 1;
        }
        Self {
            points,
            origin: lo,
            cell,
            dims,
            starts: counts,
            entries,
        }
    }

    fn coords(p: &Point3, lo: &Point3, cell: f64, dims: &[usize; 3]) -> [usize; 3] {
        let mut c = [0usize; 3];
        for k in 0..3 {
            let v = ((p[k] - lo[k]) / cell).floor();
            c[k] = if v <= 0.0 {
                0
            } else {
                (v as usize).min(dims[k] - 1)
            };
        }
        c
    }

    /// Exact nearest neighbour, same tie rule as [`nearest_brute`].
    pub fn nearest(&self, q: &Point3) -> (usize, f64) {
        let qc = Self::coords(q, &self.origin, self.cell, &self.dims);
        let qc = [qc[0] as i64, qc[1] as i64, qc[2] as i64];
        let dims = [self.dims[0] as i64, self.dims[1] as i64, self.dims[2] as i64];
        let max_r = *dims.iter().max().unwrap();
        let mut best = (usize::MAX, f64::INFINITY);
        for r in 0..=max_r {
            for cz in (qc[2] - r).max(0)..=(qc[2] + r).min(dims[2] - 1) {
                for cy in (qc[1] - r).max(0)..=(qc[1] + r).min(dims[1] - 1) {
                    let inner = (cz - qc[2]).abs() < r && (cy - qc[1]).abs() < r;
                    for cx in (qc[0] - r).max(0)..=(qc[0] + r).min(dims[0] - 1) {
                        // Only the shell at Chebyshev distance r is new.
                        if inner && (cx - qc[0]).abs() < r {
                            continue;
                        }
                        let c = ((cz * dims[1] + cy) * dims[0] + cx) as usize;
                        for &i in &self.entries[self.starts[c]..self.starts[c + 1]] {
                            let d = dist2(q, &self.points[i]);
                            if d < best.1 || (d == best.1 && i < best.0) {
                                best = (i, d);
                            }
                        }
                    }
                }
            }
            // Cells outside the visited block are more than r * cell away.
            let reach = r as f64 * self.cell;
            if best.0 != usize::MAX && best.1 <= reach * reach {
                break;
            }
        }
        best
    }
}

/// Nearest neighbour of every query point in `target`.
pub fn nearest_neighbors(query: &[Point3], target: &[Point3]) -> Vec<(usize, f64)> {
    if target.len() >= GRID_THRESHOLD {
        let grid = GridIndex::new(target);
        par::map_slice(query, |q| grid.nearest(q))
    } else {
        par::map_slice(query, |q| nearest_brute(q, target))
    }
}

/// Symmetric Chamfer distance between two clouds.
pub fn chamfer_distance(a: &PointCloud, b: &PointCloud) -> Result<ChamferDistance> {
    chamfer_points(a.points(), b.points())
}

pub fn chamfer_points(a: &[Point3], b: &[Point3]) -> Result<ChamferDistance> {
    if a.is_empty() || b.is_empty() {
        return domain("chamfer distance needs two non-empty clouds");
    }
    let ab: f64 = nearest_neighbors(a, b).iter().map(|x| x.1).sum::<f64>() / a.len() as f64;
    let ba: f64 = nearest_neighbors(b, a).iter().map(|x| x.1).sum::<f64>() / b.len() as f64;
    Ok(ChamferDistance(ab + ba))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(n: usize, seed: u64) -> Vec<Point3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                [
                    rng.random_range(-10.0..10.0),
                    rng.random_range(-10.0..10.0),
                    rng.random_range(-2.0..2.0),
                ]
            })
            .collect()
    }

    #[test]
    fn identical_clouds_have_zero_distance() {
        let a = PointCloud::new(random_cloud(100, 1)).unwrap();
        assert_eq!(chamfer_distance(&a, &a).unwrap().0, 0.0);
    }

    #[test]
    fn two_singletons() {
        let a = PointCloud::new(vec![[0.0, 0.0, 0.0]]).unwrap();
        let b = PointCloud::new(vec![[1.0, 0.0, 0.0]]).unwrap();
        let cd = chamfer_distance(&a, &b).unwrap();
        assert_eq!(cd.squared_mm(), 2.0);
        assert!((cd.rms_mm() - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn empty_cloud_rejected() {
        assert!(PointCloud::new(vec![]).is_err());
        assert!(chamfer_points(&[], &[[0.0; 3]]).is_err());
    }

    #[test]
    fn matches_exhaustive_pairwise_oracle() {
        let a = random_cloud(512, 2);
        let b = random_cloud(512, 3);
        let oracle = |p: &[Point3], q: &[Point3]| {
            let mut s = 0.0;
            for x in p {
                let mut m = f64::INFINITY;
                for y in q {
                    let d = (x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2) + (x[2] - y[2]).powi(2);
                    m = m.min(d);
                }
                s += m;
            }
            s / p.len() as f64
        };
        let expect = oracle(&a, &b) + oracle(&b, &a);
        let got = chamfer_points(&a, &b).unwrap().0;
        assert!((got - expect).abs() < 1e-9, "{got} vs {expect}");
    }

    #[test]
    fn grid_index_agrees_with_brute_force() {
        let target = random_cloud(5000, 4);
        let mut query = random_cloud(300, 5);
        // Queries outside the target bounds exercise the outer rings.
        query.push([50.0, -40.0, 9.0]);
        query.push([-100.0, 0.0, 0.0]);
        let grid = GridIndex::new(&target);
        for q in &query {
            let (gi, gd) = grid.nearest(q);
            let (bi, bd) = nearest_brute(q, &target);
            assert_eq!(gd, bd);
            assert_eq!(gi, bi);
        }
    }

    #[test]
    fn grid_handles_planar_clouds() {
        // All z equal: degenerate extent along one axis.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let target: Vec<Point3> = (0..6000)
            .map(|_| [rng.random_range(0.0..110.0), rng.random_range(0.0..40.0), 0.0])
            .collect();
        let grid = GridIndex::new(&target);
        for _ in 0..200 {
            let q = [
                rng.random_range(-5.0..115.0),
                rng.random_range(-5.0..45.0),
                rng.random_range(-3.0..3.0),
            ];
            assert_eq!(grid.nearest(&q).1, nearest_brute(&q, &target).1);
        }
    }
}
