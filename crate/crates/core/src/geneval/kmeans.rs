use rand::Rng;

use crate::error::{Error, Result};
use crate::{par, rng};

const MAX_ITERS: usize = 300;
const TOL: f64 = 1e-4;

/// K-means bins fitted on training points.
#[derive(Debug, Clone, PartialEq)]
pub struct BinModel {
    pub k: usize,
    pub dim: usize,
    /// `k x dim`, row-major.
    pub centroids: Vec<f32>,
    /// Fraction of training points in each bin.
    pub proportions: Vec<f64>,
    pub n_train: usize,
    pub alpha: f64,
    /// Within-cluster sum of squares after each assignment pass.
    pub objective: Vec<f64>,
    pub iterations: usize,
}

fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = (x - y) as f64;
            d * d
        })
        .sum()
}

/// Nearest centroid (smallest index on ties) and its squared distance.
pub fn nearest_centroid(centroids: &[f32], dim: usize, x: &[f32]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.chunks(dim).enumerate() {
        let d = sq_dist(c, x);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn assign_all(centroids: &[f32], dim: usize, points: &[&[f32]]) -> Vec<(usize, f64)> {
    par::map(points.len(), |i| nearest_centroid(centroids, dim, points[i]))
}

fn check_points(points: &[&[f32]]) -> Result<usize> {
    let dim = points
        .first()
        .map(|p| p.len())
        .ok_or_else(|| Error::InvalidArgument("no points to cluster".into()))?;
    if dim == 0 || points.iter().any(|p| p.len() != dim) {
        return Err(Error::dim("points must share one non-zero dimension"));
    }
    Ok(dim)
}

/// k-means++ seeding followed by Lloyd iterations.
pub fn kmeans_fit(points: &[&[f32]], k: usize, seed: u64) -> Result<BinModel> {
    let dim = check_points(points)?;
    let n = points.len();
    if k == 0 || n < k {
        return Err(Error::InvalidArgument(format!(
            "k-means needs at least k = {k} points, got {n}"
        )));
    }
    let mut r = rng::rng(seed);
    let mut centroids: Vec<f32> = Vec::with_capacity(k * dim);
    centroids.extend_from_slice(points[r.random_range(0..n)]);
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[..dim])).collect();
    while centroids.len() < k * dim {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let u = r.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if u < acc {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            r.random_range(0..n)
        };
        let c = points[pick].to_vec();
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &c));
        }
        centroids.extend_from_slice(&c);
    }

    let mut objective = Vec::new();
    let mut iterations = 0;
    let mut assign = assign_all(&centroids, dim, points);
    loop {
        reseed_empty(&mut centroids, dim, points, &mut assign);
        objective.push(assign.iter().map(|a| a.1).sum());
        let next = means(&assign, dim, k, points);
        let moved = centroids
            .chunks(dim)
            .zip(next.chunks(dim))
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        iterations += 1;
        assign = assign_all(&centroids, dim, points);
        if moved < TOL || iterations >= MAX_ITERS {
            break;
        }
    }
    reseed_empty(&mut centroids, dim, points, &mut assign);
    objective.push(assign.iter().map(|a| a.1).sum());
    let mut counts = vec![0usize; k];
    for a in &assign {
        counts[a.0] += 1;
    }
    Ok(BinModel {
        k,
        dim,
        centroids,
        proportions: counts.iter().map(|&c| c as f64 / n as f64).collect(),
        n_train: n,
        alpha: 0.05,
        objective,
        iterations,
    })
}

/// Moves each empty cluster onto the point farthest from its centroid.
fn reseed_empty(centroids: &mut [f32], dim: usize, points: &[&[f32]], assign: &mut [(usize, f64)]) {
    let k = centroids.len() / dim;
    loop {
        let mut counts = vec![0usize; k];
        for a in assign.iter() {
            counts[a.0] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else { return };
        let far = (0..points.len())
            .filter(|&i| counts[assign[i].0] > 1)
            .max_by(|&a, &b| assign[a].1.total_cmp(&assign[b].1).then(b.cmp(&a)));
        let Some(far) = far else { return };
        centroids[empty * dim..][..dim].copy_from_slice(points[far]);
        assign[far] = (empty, 0.0);
    }
}

fn means(assign: &[(usize, f64)], dim: usize, k: usize, points: &[&[f32]]) -> Vec<f32> {
    let mut sums = vec![0.0f64; k * dim];
    let mut counts = vec![0usize; k];
    for (p, a) in points.iter().zip(assign) {
        counts[a.0] += 1;
        for (s, &v) in sums[a.0 * dim..][..dim].iter_mut().zip(p.iter()) {
            *s += v as f64;
        }
    }
    sums.chunks(dim)
        .zip(&counts)
        .flat_map(|(s, &c)| s.iter().map(move |&v| (v / c.max(1) as f64) as f32).collect::<Vec<_>>())
        .collect()
}

impl BinModel {
    /// Bin of every point by exhaustive nearest-centroid scan.
    pub fn assign(&self, points: &[&[f32]]) -> Result<Vec<usize>> {
        if points.iter().any(|p| p.len() != self.dim) {
            return Err(Error::dim(format!("points must have dimension {}", self.dim)));
        }
        Ok(assign_all(&self.centroids, self.dim, points)
            .into_iter()
            .map(|a| a.0)
            .collect())
    }

    pub fn proportions_of(&self, points: &[&[f32]]) -> Result<Vec<f64>> {
        let mut counts = vec![0usize; self.k];
        for b in self.assign(points)? {
            counts[b] += 1;
        }
        Ok(counts
            .iter()
            .map(|&c| c as f64 / points.len().max(1) as f64)
            .collect())
    }
}
