//! Exact Wasserstein distances between equal-size point clouds.
//!
//! `W_p` is solved as an assignment problem with a shortest augmenting path
//! (Jonker–Volgenant style) solver; `W_∞` is a bottleneck assignment found
//! by binary search over the distinct costs with Hopcroft–Karp matching.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::linalg::dist;
use crate::particles::ParticleCloud;
use crate::pde::GridDensity;
use crate::rng::stream_rng;

/// Pairwise Euclidean distances `cost(i, j) = |a_i - b_j|`.
#[derive(Clone, Debug, PartialEq)]
pub struct CostMatrix {
    n: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(a: &ParticleCloud, b: &ParticleCloud) -> Result<Self> {
        if a.len() != b.len() {
            return Err(invalid(format!("clouds have different sizes {} and {}", a.len(), b.len())));
        }
        if a.dim() != b.dim() {
            return Err(invalid("clouds have different dimensions"));
        }
        let n = a.len();
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            let x = a.position(i);
            for j in 0..n {
                data.push(dist(x, b.position(j)));
            }
        }
        Ok(CostMatrix { n, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }
}

/// Minimum-cost perfect assignment for a square row-major cost matrix.
/// Returns `(total cost, column assigned to each row)`.
pub fn assignment(n: usize, cost: &[f64]) -> (f64, Vec<usize>) {
    // 1-based potentials; column 0 is a virtual source.
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![inf; n + 1];
    let mut used = vec![false; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0usize;
        minv.iter_mut().for_each(|m| *m = inf);
        used.iter_mut().for_each(|b| *b = false);
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col_of = vec![0usize; n];
    for j in 1..=n {
        if row_of[j] > 0 {
            col_of[row_of[j] - 1] = j - 1;
        }
    }
    let total = (0..n).map(|i| cost[i * n + col_of[i]]).sum();
    (total, col_of)
}

/// `W_p` between two equal-size clouds with uniform weights.
pub fn wasserstein_p(a: &ParticleCloud, b: &ParticleCloud, p: f64) -> Result<f64> {
    if !(p >= 1.0) || !p.is_finite() {
        return Err(invalid(format!("need finite p >= 1, got {p}")));
    }
    let c = CostMatrix::new(a, b)?;
    Ok(wasserstein_p_costs(&c, p))
}

fn wasserstein_p_costs(c: &CostMatrix, p: f64) -> f64 {
    let n = c.n;
    let powered: Vec<f64> = if p == 1.0 { c.data.clone() } else { c.data.iter().map(|d| d.powf(p)).collect() };
    let (_, assign) = assignment(n, &powered);
    // Summed in row order so the value does not depend on the solver's
    // accumulation order.
    let s: f64 = (0..n).map(|i| powered[i * n + assign[i]]).sum();
    (s / n as f64).max(0.0).powf(1.0 / p)
}

/// `W_∞`: the bottleneck assignment value.
pub fn wasserstein_inf(a: &ParticleCloud, b: &ParticleCloud) -> Result<f64> {
    let c = CostMatrix::new(a, b)?;
    let mut levels = c.data.clone();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let (mut lo, mut hi) = (0usize, levels.len() - 1);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if perfect_matching(&c, levels[mid]) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    Ok(levels[lo])
}

/// Hopcroft–Karp test for a perfect matching using edges with cost `<= thr`.
fn perfect_matching(c: &CostMatrix, thr: f64) -> bool {
    let n = c.n;
    let adj: Vec<Vec<usize>> = (0..n).map(|i| (0..n).filter(|&j| c.get(i, j) <= thr).collect()).collect();
    if adj.iter().any(|a| a.is_empty()) {
        return false;
    }
    const NONE: usize = usize::MAX;
    let mut mate_l = vec![NONE; n];
    let mut mate_r = vec![NONE; n];
    let mut layer = vec![0usize; n];
    let mut matched = 0;
    loop {
        // Breadth-first layering from free left vertices.
        let mut queue = std::collections::VecDeque::new();
        for i in 0..n {
            if mate_l[i] == NONE {
                layer[i] = 0;
                queue.push_back(i);
            } else {
                layer[i] = usize::MAX;
            }
        }
        let mut found = false;
        while let Some(i) = queue.pop_front() {
            for &j in &adj[i] {
                let k = mate_r[j];
                if k == NONE {
                    found = true;
                } else if layer[k] == usize::MAX {
                    layer[k] = layer[i] + 1;
                    queue.push_back(k);
                }
            }
        }
        if !found {
            return matched == n;
        }
        let mut next = vec![0usize; n];
        for i in 0..n {
            if mate_l[i] == NONE && augment(i, &adj, &mut mate_l, &mut mate_r, &mut layer, &mut next) {
                matched += 1;
            }
        }
        if matched == n {
            return true;
        }
    }
}

fn augment(
    i: usize,
    adj: &[Vec<usize>],
    mate_l: &mut [usize],
    mate_r: &mut [usize],
    layer: &mut [usize],
    next: &mut [usize],
) -> bool {
    while next[i] < adj[i].len() {
        let j = adj[i][next[i]];
        next[i] += 1;
        let k = mate_r[j];
        if k == usize::MAX || (layer[k] == layer[i] + 1 && augment(k, adj, mate_l, mate_r, layer, next)) {
            mate_l[i] = j;
            mate_r[j] = i;
            return true;
        }
    }
    layer[i] = usize::MAX;
    false
}

/// `n` i.i.d. draws: a cell with probability proportional to its mass, then
/// a uniform point inside it.
pub fn sample_density<R: Rng + ?Sized>(rho: &GridDensity, n: usize, rng: &mut R) -> Result<ParticleCloud> {
    let mesh = rho.mesh();
    let mut cdf = Vec::with_capacity(mesh.len());
    let mut acc = 0.0;
    for v in rho.values() {
        acc += v;
        cdf.push(acc);
    }
    if !(acc > 0.0) {
        return Err(invalid("cannot sample a density of zero mass"));
    }
    let d = mesh.dim();
    let mut pos = Vec::with_capacity(n * d);
    for _ in 0..n {
        let u = rng.random::<f64>() * acc;
        let cell = cdf.partition_point(|c| *c <= u).min(mesh.len() - 1);
        let idx = mesh.multi_index(cell);
        for k in 0..d {
            let a = mesh.lo()[k] + idx[k] as f64 * mesh.h()[k];
            pos.push(a + rng.random::<f64>() * mesh.h()[k]);
        }
    }
    ParticleCloud::from_points(d, pos)
}

/// Mean and standard error over `replicas` of `W_p(cloud, sample)` where each
/// sample has `|cloud|` points drawn from `rho`.
pub fn estimate_wp_cloud_vs_density<R: Rng + ?Sized>(
    cloud: &ParticleCloud,
    rho: &GridDensity,
    p: f64,
    replicas: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    if replicas == 0 {
        return Err(invalid("need at least one replica"));
    }
    let base = rng.next_u64();
    let vals: Vec<f64> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let sample = sample_density(rho, cloud.len(), &mut stream_rng(base, r as u64))?;
            wasserstein_p(cloud, &sample, p)
        })
        .collect::<Result<_>>()?;
    Ok(mean_stderr(&vals))
}

/// Sample mean and standard error of the mean.
pub fn mean_stderr(vals: &[f64]) -> (f64, f64) {
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    if vals.len() < 2 {
        return (mean, 0.0);
    }
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
