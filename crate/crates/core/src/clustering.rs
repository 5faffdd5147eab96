//! Slow-timescale grouping of pairs by midpoint proximity and orthogonal
//! RB assignment inside each group.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use serde::Serialize;

use crate::config::SimConfig;
use crate::error::{Error, Result};
use crate::mobility::RoadGrid;

pub const KMEANS_RESTARTS: usize = 20;
const KMEANS_MAX_ITER: usize = 200;

/// Gaussian similarity with a hard neighbourhood cutoff, using planar
/// distance.
pub fn similarity(points: &[[f64; 2]], gamma: f64, phi: f64) -> DMatrix<f64> {
    similarity_by(points, gamma, phi, |a, b| {
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
    })
}

/// Same as [`similarity`] but with minimum-image distance on the wrapped
/// grid.
pub fn similarity_on_grid(
    grid: &RoadGrid,
    points: &[[f64; 2]],
    gamma: f64,
    phi: f64,
) -> DMatrix<f64> {
    similarity_by(points, gamma, phi, |a, b| {
        grid.delta(a[0], b[0]).hypot(grid.delta(a[1], b[1]))
    })
}

fn similarity_by(
    points: &[[f64; 2]],
    gamma: f64,
    phi: f64,
    dist: impl Fn([f64; 2], [f64; 2]) -> f64,
) -> DMatrix<f64> {
    let k = points.len();
    let mut f = DMatrix::zeros(k, k);
    for i in 0..k {
        f[(i, i)] = 1.0;
        for j in i + 1..k {
            let d = dist(points[i], points[j]);
            let v = if d <= phi {
                (-(d * d) / (gamma * gamma)).exp()
            } else {
                0.0
            };
            f[(i, j)] = v;
            f[(j, i)] = v;
        }
    }
    f
}

/// `I − D^{-1/2} F D^{-1/2}`; zero-degree rows keep a zero scaling.
pub fn normalized_laplacian(f: &DMatrix<f64>) -> DMatrix<f64> {
    let k = f.nrows();
    let inv_sqrt: Vec<f64> = (0..k)
        .map(|i| {
            let d: f64 = f.row(i).iter().sum();
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    DMatrix::from_fn(k, k, |i, j| {
        let id = if i == j { 1.0 } else { 0.0 };
        id - inv_sqrt[i] * f[(i, j)] * inv_sqrt[j]
    })
}

/// Eigenvalues (ascending) of the normalized Laplacian together with the
/// row-normalised embedding built from the `g` smallest eigenvectors.
pub fn spectral_embedding(f: &DMatrix<f64>, g: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let k = f.nrows();
    let eig = SymmetricEigen::new(normalized_laplacian(f));
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[a]
            .total_cmp(&eig.eigenvalues[b])
            .then(a.cmp(&b))
    });
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let rows = (0..k)
        .map(|r| {
            let mut row: Vec<f64> = order[..g]
                .iter()
                .map(|&c| eig.eigenvectors[(r, c)])
                .collect();
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.iter_mut().for_each(|v| *v /= norm);
            }
            row
        })
        .collect();
    (values, rows)
}

/// Labels in `[0, g)`, canonicalised so that groups are numbered by the
/// first pair that belongs to them.
pub fn spectral_cluster<R: Rng + ?Sized>(
    f: &DMatrix<f64>,
    g: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let k = f.nrows();
    if g < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 groups, got {g}"
        )));
    }
    if k < g {
        return Err(Error::InvalidInput(format!(
            "{k} pairs cannot form {g} groups"
        )));
    }
    let (_, rows) = spectral_embedding(f, g);
    Ok(canonical(&kmeans(&rows, g, KMEANS_RESTARTS, rng)))
}

fn canonical(labels: &[usize]) -> Vec<usize> {
    let mut map = Vec::<(usize, usize)>::new();
    labels
        .iter()
        .map(|&l| match map.iter().find(|(from, _)| *from == l) {
            Some(&(_, to)) => to,
            None => {
                let to = map.len();
                map.push((l, to));
                to
            }
        })
        .collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd's k-means with k-means++ seeding; best inertia over `restarts`.
/// Every cluster is kept nonempty when `points.len() >= k`.
pub fn kmeans<R: Rng + ?Sized>(
    points: &[Vec<f64>],
    k: usize,
    restarts: usize,
    rng: &mut R,
) -> Vec<usize> {
    let mut best: Option<(f64, Vec<usize>)> = None;
    for _ in 0..restarts.max(1) {
        let (inertia, labels) = kmeans_once(points, k, rng);
        if best.as_ref().is_none_or(|(b, _)| inertia < *b - 1e-12) {
            best = Some((inertia, labels));
        }
    }
    best.map(|(_, l)| l).unwrap_or_default()
}

fn kmeans_once<R: Rng + ?Sized>(points: &[Vec<f64>], k: usize, rng: &mut R) -> (f64, Vec<usize>) {
    let n = points.len();
    if n == 0 {
        return (0.0, Vec::new());
    }
    let mut centers: Vec<Vec<f64>> = vec![points[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k.min(n) {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    idx = i;
                    break;
                }
                u -= w;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        centers.push(points[pick].clone());
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &centers[centers.len() - 1]));
        }
    }

    let mut labels = vec![usize::MAX; n];
    for _ in 0..KMEANS_MAX_ITER {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let mut best = 0;
            let mut bd = f64::INFINITY;
            for (c, center) in centers.iter().enumerate() {
                let d = sq_dist(p, center);
                if d < bd {
                    bd = d;
                    best = c;
                }
            }
            if labels[i] != best {
                labels[i] = best;
                changed = true;
            }
        }
        fill_empty(points, &mut labels, &centers);
        let dim = points[0].len();
        let mut sums = vec![vec![0.0; dim]; centers.len()];
        let mut counts = vec![0usize; centers.len()];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(p) {
                *s += v;
            }
        }
        for (c, center) in centers.iter_mut().enumerate() {
            if counts[c] > 0 {
                for (x, s) in center.iter_mut().zip(&sums[c]) {
                    *x = s / counts[c] as f64;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let inertia = points
        .iter()
        .zip(&labels)
        .map(|(p, &l)| sq_dist(p, &centers[l]))
        .sum();
    (inertia, labels)
}

/// Moves the point farthest from its centre into each empty cluster.
fn fill_empty(points: &[Vec<f64>], labels: &mut [usize], centers: &[Vec<f64>]) {
    let k = centers.len();
    loop {
        let mut counts = vec![0usize; k];
        labels.iter().for_each(|&l| counts[l] += 1);
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        let donor = (0..points.len())
            .filter(|&i| counts[labels[i]] > 1)
            .max_by(|&a, &b| {
                sq_dist(&points[a], &centers[labels[a]])
                    .total_cmp(&sq_dist(&points[b], &centers[labels[b]]))
                    .then(b.cmp(&a))
            });
        match donor {
            Some(i) => labels[i] = empty,
            None => return,
        }
    }
}

/// Round-robin split of RBs `0..num_rbs` inside each group, lower pair
/// indices first. Every group reuses the whole pool.
pub fn allocate_rbs(labels: &[usize], num_rbs: usize) -> Vec<Vec<usize>> {
    let groups = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut out = vec![Vec::new(); labels.len()];
    for g in 0..groups {
        let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == g).collect();
        for rb in 0..num_rbs {
            out[members[rb % members.len()]].push(rb);
        }
    }
    out
}

pub fn should_recluster(slot: u64, period: u64) -> bool {
    period > 0 && slot.is_multiple_of(period)
}

/// One reclustering epoch.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupAssignment {
    pub slot: u64,
    pub labels: Vec<usize>,
    pub rbs: Vec<Vec<usize>>,
}

impl GroupAssignment {
    pub fn num_groups(&self) -> usize {
        self.labels.iter().copied().max().map_or(0, |m| m + 1)
    }

    /// Pair indices in `group`.
    pub fn members(&self, group: usize) -> impl Iterator<Item = usize> + '_ {
        self.labels
            .iter()
            .enumerate()
            .filter(move |(_, &l)| l == group)
            .map(|(i, _)| i)
    }
}

/// Cluster and allocate in one step using the configured group count,
/// similarity scale, cutoff and RB pool.
pub fn assign_groups<R: Rng + ?Sized>(
    cfg: &SimConfig,
    grid: &RoadGrid,
    midpoints: &[[f64; 2]],
    slot: u64,
    rng: &mut R,
) -> Result<GroupAssignment> {
    let f = similarity_on_grid(
        grid,
        midpoints,
        cfg.similarity_scale_m,
        cfg.neighborhood_radius_m,
    );
    let labels = spectral_cluster(&f, cfg.num_groups, rng)?;
    let rbs = allocate_rbs(&labels, cfg.num_rbs);
    Ok(GroupAssignment { slot, labels, rbs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SimRng;
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn blobs(rng: &mut SimRng) -> Vec<[f64; 2]> {
        let mut pts = Vec::new();
        for i in 0..12 {
            let c = if i % 2 == 0 { [0.0, 0.0] } else { [300.0, 0.0] };
            pts.push([
                c[0] + rng.random_range(-10.0..10.0),
                c[1] + rng.random_range(-10.0..10.0),
            ]);
        }
        pts
    }

    #[test]
    fn similarity_entries() {
        let f = similarity(
            &[[0.0, 0.0], [0.0, 0.0], [30.0, 0.0], [200.0, 0.0]],
            30.0,
            150.0,
        );
        assert_eq!(f[(0, 1)], 1.0);
        assert!((f[(0, 2)] - (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(f[(0, 3)], 0.0);
        assert_eq!(f, f.transpose());
        assert!((0..4).all(|i| f[(i, i)] == 1.0));
    }

    #[test]
    fn grid_similarity_wraps() {
        let grid = RoadGrid::new(250.0, 62.5, 2.0);
        let f = similarity_on_grid(&grid, &[[5.0, 0.0], [245.0, 0.0]], 30.0, 150.0);
        assert!((f[(0, 1)] - (-100.0f64 / 900.0).exp()).abs() < 1e-12);
    }

    #[test]
    fn separates_blobs() {
        let mut rng = SimRng::seed_from_u64(4);
        let pts = blobs(&mut rng);
        let f = similarity(&pts, 30.0, 150.0);
        let labels = spectral_cluster(&f, 2, &mut rng).unwrap();
        for i in 0..pts.len() {
            assert_eq!(labels[i], i % 2, "{labels:?}");
        }
        let (vals, _) = spectral_embedding(&f, 2);
        assert!(vals[1] < 0.1);
        assert!(vals[0].abs() < 1e-9);
    }

    #[test]
    fn equivariant_under_permutation() {
        let mut rng = SimRng::seed_from_u64(8);
        let pts = blobs(&mut rng);
        let perm: Vec<usize> = (0..pts.len()).rev().collect();
        let permuted: Vec<[f64; 2]> = perm.iter().map(|&i| pts[i]).collect();
        let a = spectral_cluster(&similarity(&pts, 30.0, 150.0), 2, &mut rng).unwrap();
        let b = spectral_cluster(&similarity(&permuted, 30.0, 150.0), 2, &mut rng).unwrap();
        for i in 0..pts.len() {
            for j in 0..pts.len() {
                assert_eq!(a[perm[i]] == a[perm[j]], b[i] == b[j]);
            }
        }
    }

    #[test]
    fn one_pair_per_group() {
        let mut rng = SimRng::seed_from_u64(1);
        let pts = [[0.0, 0.0], [40.0, 0.0], [0.0, 45.0], [90.0, 90.0]];
        let labels = spectral_cluster(&similarity(&pts, 30.0, 150.0), 4, &mut rng).unwrap();
        let mut sorted = labels.clone();
        sorted.sort();
        assert_eq!(sorted, vec![0, 1, 2, 3]);
    }

    #[test]
    fn rejects_bad_group_count() {
        let mut rng = SimRng::seed_from_u64(1);
        let f = similarity(&[[0.0, 0.0], [1.0, 1.0]], 30.0, 150.0);
        assert!(spectral_cluster(&f, 1, &mut rng).is_err());
        assert!(spectral_cluster(&f, 3, &mut rng).is_err());
    }

    #[test]
    fn identical_points_still_fill_groups() {
        let mut rng = SimRng::seed_from_u64(2);
        let pts = vec![[10.0, 10.0]; 6];
        let labels = spectral_cluster(&similarity(&pts, 30.0, 150.0), 3, &mut rng).unwrap();
        for g in 0..3 {
            assert!(labels.contains(&g));
        }
    }

    #[test]
    fn rb_split_examples() {
        assert_eq!(allocate_rbs(&[0], 20), vec![(0..20).collect::<Vec<_>>()]);
        let each = allocate_rbs(&vec![0; 20], 20);
        assert!(each.iter().all(|s| s.len() == 1));
        let three = allocate_rbs(&[0, 0, 0], 20);
        let sizes: Vec<usize> = three.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![7, 7, 6]);
    }

    #[test]
    fn recluster_cadence() {
        assert!(should_recluster(0, 100));
        assert!(!should_recluster(1, 100));
        assert!(should_recluster(200, 100));
    }

    proptest! {
        #[test]
        fn rb_sets_disjoint_within_group(labels in proptest::collection::vec(0usize..4, 1..30), n in 1usize..25) {
            let labels = canonical(&labels);
            let sets = allocate_rbs(&labels, n);
            let groups = labels.iter().max().unwrap() + 1;
            for g in 0..groups {
                let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == g).collect();
                let mut seen = vec![false; n];
                for &m in &members {
                    prop_assert!(sets[m].len() >= n / members.len());
                    for &rb in &sets[m] {
                        prop_assert!(!seen[rb]);
                        seen[rb] = true;
                    }
                }
                prop_assert!(seen.iter().all(|&s| s));
            }
        }
    }
}
