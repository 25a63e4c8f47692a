use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    /// Row-major `[k x dim]`.
    pub centroids: Vec<f32>,
    pub k: usize,
    pub dim: usize,
    pub feature_kind: String,
    pub fit_seed: u64,
    pub inertia: f64,
}

impl Codebook {
    pub fn centroid(&self, i: usize) -> &[f32] {
        &self.centroids[i * self.dim..(i + 1) * self.dim]
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.dim == 0 || self.centroids.len() != self.k * self.dim {
            return Err(Error::Param(format!(
                "codebook of {} values is not {} x {}",
                self.centroids.len(),
                self.k,
                self.dim
            )));
        }
        if self.centroids.iter().any(|v| !v.is_finite()) || !(self.inertia >= 0.0) {
            return Err(Error::Param("codebook has non-finite centroids or negative inertia".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KmeansConfig {
    pub max_iter: usize,
    pub n_restarts: usize,
    /// Frames drawn for fitting; all frames are still assigned.
    pub fit_cap: usize,
}

impl Default for KmeansConfig {
    fn default() -> Self {
        Self {
            max_iter: 50,
            n_restarts: 3,
            fit_cap: 200_000,
        }
    }
}

fn sq_dist(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(x: &[f32], centroids: &[f32], dim: usize) -> (usize, f32) {
    let mut best = (0, f32::INFINITY);
    for (i, c) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// Nearest centroid by squared Euclidean distance, lowest index on ties.
pub fn assign(x: &[f32], dim: usize, codebook: &Codebook) -> Result<Vec<u16>> {
    if dim != codebook.dim || dim == 0 || x.len() % dim != 0 {
        return Err(Error::Param(format!(
            "feature dimension {dim} ({} values) does not match codebook dimension {}",
            x.len(),
            codebook.dim
        )));
    }
    Ok(x.chunks_exact(dim)
        .map(|row| nearest(row, &codebook.centroids, dim).0 as u16)
        .collect())
}

/// Result of one Lloyd run.
#[derive(Debug, Clone)]
pub struct LloydRun {
    pub centroids: Vec<f32>,
    pub inertia: f64,
    /// Objective after each assignment step.
    pub trace: Vec<f64>,
}

fn plus_plus(x: &[f32], dim: usize, k: usize, rng: &mut impl Rng) -> Vec<f32> {
    let n = x.len() / dim;
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centroids.extend_from_slice(&x[first * dim..(first + 1) * dim]);
    let mut d2: Vec<f64> = x.chunks_exact(dim).map(|r| sq_dist(r, &centroids[..dim]) as f64).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random_range(0.0..total);
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
        centroids.extend_from_slice(&x[pick * dim..(pick + 1) * dim]);
        let new = &centroids[c * dim..(c + 1) * dim];
        for (i, r) in x.chunks_exact(dim).enumerate() {
            d2[i] = d2[i].min(sq_dist(r, new) as f64);
        }
    }
    centroids
}

/// Lloyd's algorithm from k-means++ seeds. An emptied cluster takes over
/// the point farthest from its current centroid.
pub fn lloyd(x: &[f32], dim: usize, k: usize, max_iter: usize, seed: u64) -> LloydRun {
    let n = x.len() / dim;
    let mut rng = seed::rng(seed);
    let mut centroids = plus_plus(x, dim, k, &mut rng);
    let mut labels = vec![usize::MAX; n];
    let mut dists = vec![0f32; n];
    let mut trace = Vec::new();
    for _ in 0..max_iter.max(1) {
        let mut changed = false;
        for (i, r) in x.chunks_exact(dim).enumerate() {
            let (c, d) = nearest(r, &centroids, dim);
            changed |= labels[i] != c;
            labels[i] = c;
            dists[i] = d;
        }
        let mut counts = vec![0usize; k];
        for &l in &labels {
            counts[l] += 1;
        }
        while let Some(empty) = counts.iter().position(|&c| c == 0) {
            let far = (0..n)
                .filter(|&i| counts[labels[i]] > 1)
                .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)))
                .expect("n >= k leaves a cluster with two points");
            counts[labels[far]] -= 1;
            labels[far] = empty;
            counts[empty] = 1;
            dists[far] = 0.0;
            centroids[empty * dim..(empty + 1) * dim].copy_from_slice(&x[far * dim..(far + 1) * dim]);
            changed = true;
        }
        let objective: f64 = dists.iter().map(|&d| d as f64).sum();
        trace.push(objective);

        let mut sums = vec![0f64; k * dim];
        for (i, r) in x.chunks_exact(dim).enumerate() {
            let s = &mut sums[labels[i] * dim..(labels[i] + 1) * dim];
            for (a, &v) in s.iter_mut().zip(r) {
                *a += v as f64;
            }
        }
        for c in 0..k {
            for j in 0..dim {
                centroids[c * dim + j] = (sums[c * dim + j] / counts[c] as f64) as f32;
            }
        }
        if !changed {
            break;
        }
    }
    let inertia = x
        .chunks_exact(dim)
        .map(|r| nearest(r, &centroids, dim).1 as f64)
        .sum();
    LloydRun {
        centroids,
        inertia,
        trace,
    }
}

/// Best of `n_restarts` Lloyd runs by final inertia, earliest restart on ties.
pub fn kmeans_fit(x: &[f32], dim: usize, k: usize, max_iter: usize, n_restarts: usize, seed: u64) -> Result<Codebook> {
    if dim == 0 || x.len() % dim != 0 {
        return Err(Error::Param(format!("{} values do not form rows of {dim}", x.len())));
    }
    let n = x.len() / dim;
    if k == 0 || n < k {
        return Err(Error::Param(format!("k-means needs 1 <= K <= N, got K={k}, N={n}")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Param("k-means input is not finite".into()));
    }
    let mut best: Option<LloydRun> = None;
    for r in 0..n_restarts.max(1) {
        let run = lloyd(x, dim, k, max_iter, seed::substream_idx(seed, "kmeans-restart", r as u64));
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    let best = best.unwrap();
    Ok(Codebook {
        centroids: best.centroids,
        k,
        dim,
        feature_kind: String::new(),
        fit_seed: seed,
        inertia: best.inertia,
    })
}
