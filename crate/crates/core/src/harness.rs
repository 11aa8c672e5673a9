//! Monte Carlo rate experiments and their reports.
//!
//! Each experiment sweeps a list of particle counts `N`, runs `M` replicas
//! per count with seeds derived from `(seed, N, replica)`, and reduces the
//! replicas in index order into a [`RateTable`]. A log-log least-squares
//! fit of the row statistics gives the observed rate.

use std::f64::consts::PI;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{config, invalid, Result};
use crate::geometry::{DomainSpec, Shape};
use crate::linalg::dist;
use crate::particles::{max_deviation, run_interacting, step_mckean, ParticleCloud, SimConfig};
use crate::pde::{self, DensityProvider, GridDensity, InitialDensity, Mesh, PdeConfig};
use crate::quadrature::gauss_legendre;
use crate::rng::{derive_seed, stream_rng};
use crate::sensitivity::{ResolvedRegion, SensitivitySpec};
use crate::transport::{estimate_wp_cloud_vs_density, mean_stderr, sample_density};
use crate::velocity::{velocity_from_density, BinnedCloud, KernelKind, KernelSpec};

/// Parameters selecting the branch of the chaos rate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoreticalRate {
    pub p: f64,
    pub q: f64,
    pub d: usize,
    pub m: u32,
}

/// `((2m)!)^{1/(2m)}`.
pub fn factorial_root(m: u32) -> f64 {
    let two_m = 2 * m;
    let ln_fact: f64 = (1..=two_m).map(|k| (k as f64).ln()).sum();
    (ln_fact / two_m as f64).exp()
}

/// Prefactor `((2m)!)^{1/(2m)} sqrt(8m)` of the velocity law of large numbers.
pub fn velocity_lln_constant(m: u32) -> f64 {
    factorial_root(m) * (8.0 * m as f64).sqrt()
}

/// Prefactor `8 e^{2m}` of the generalized-boundary law of large numbers.
pub fn theta_lln_constant(m: u32) -> f64 {
    8.0 * (2.0 * m as f64).exp()
}

/// `c_m = ((2m)!)^{1/(2m)} sqrt(8m) + 8 e^{2m}`.
pub fn c_m(m: u32) -> f64 {
    velocity_lln_constant(m) + theta_lln_constant(m)
}

/// Universal exponent `-1/2 + 1/(2m)`.
pub fn lln_exponent(m: u32) -> f64 {
    -0.5 + 0.5 / m as f64
}

impl TheoreticalRate {
    fn check(&self, n: usize) -> Result<()> {
        if self.m == 0 {
            return Err(invalid("m must be a positive integer"));
        }
        let floor = (2 * self.m as usize).pow(2);
        if n < floor {
            return Err(invalid(format!("N = {n} violates N >= (2m)^2 = {floor}")));
        }
        if !(self.p >= 1.0) || !(self.q > self.p) || !self.q.is_finite() {
            return Err(invalid("need 1 <= p < q < infinity"));
        }
        if self.d == 0 {
            return Err(invalid("dimension must be positive"));
        }
        let d = self.d as f64;
        if 2.0 * self.p >= d && self.q == 2.0 * self.p {
            return Err(invalid("branch constraint q != 2p violated"));
        }
        if 2.0 * self.p < d && self.q == d / (d - self.p) {
            return Err(invalid("branch constraint q != d/(d-p) violated"));
        }
        Ok(())
    }

    /// Exponents of the sampling terms, in the order they appear.
    pub fn branch_exponents(&self) -> [f64; 2] {
        let (p, q, d) = (self.p, self.q, self.d as f64);
        let first = if 2.0 * p >= d { -1.0 / (2.0 * p) } else { -1.0 / d };
        [first, -(q - p) / (q * p)]
    }

    /// Slowest decaying exponent of the bound.
    pub fn leading_exponent(&self) -> f64 {
        let [a, b] = self.branch_exponents();
        lln_exponent(self.m).max(a).max(b)
    }
}

/// N-dependence of the chaos bound:
/// `c_m N^{-1/2+1/(2m)}` plus the Fournier–Guillin branch terms.
pub fn theoretical_bound(rate: &TheoreticalRate, n: usize) -> Result<f64> {
    rate.check(n)?;
    let nf = n as f64;
    let [a, b] = rate.branch_exponents();
    let log_factor = if 2.0 * rate.p == rate.d as f64 { (1.0 + nf).ln().powf(1.0 / rate.p) } else { 1.0 };
    Ok(c_m(rate.m) * nf.powf(lln_exponent(rate.m)) + nf.powf(a) * log_factor + nf.powf(b))
}

/// One row of a rate table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub n: usize,
    pub replicas: usize,
    pub mean: f64,
    pub stderr: f64,
    pub theory_bound: f64,
}

/// Row statistics with the fitted log-log slope.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateTable {
    pub rows: Vec<RateRow>,
    pub slope: f64,
    /// 95% half-width of the slope.
    pub ci: f64,
    pub theory_exponent: f64,
}

impl RateTable {
    fn from_rows(rows: Vec<RateRow>, theory_exponent: f64) -> Result<Self> {
        let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.n as f64, r.mean)).collect();
        let (slope, ci) = fit_loglog_slope(&pts)?;
        Ok(RateTable { rows, slope, ci, theory_exponent })
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("N,M,mean,stderr,theory_bound\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{:e},{:e},{:e}\n", r.n, r.replicas, r.mean, r.stderr, r.theory_bound));
        }
        s
    }

    pub fn slope_json(&self) -> serde_json::Value {
        serde_json::json!({ "slope": self.slope, "ci": self.ci, "theory_exponent": self.theory_exponent })
    }

    /// Whether row means strictly decrease with `N`.
    pub fn strictly_decreasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].mean < w[0].mean)
    }

    pub fn rows_below_bound(&self) -> bool {
        self.rows.iter().all(|r| r.mean <= r.theory_bound)
    }
}

/// Least-squares slope of `log mean` against `log N`, with the 95%
/// Student-t half-width.
pub fn fit_loglog_slope(rows: &[(f64, f64)]) -> Result<(f64, f64)> {
    if rows.len() < 4 {
        return Err(invalid(format!("slope fit needs at least 4 rows, got {}", rows.len())));
    }
    if rows.iter().any(|(n, m)| !(*m > 0.0) || !(*n > 0.0)) {
        return Err(invalid("slope fit needs positive N and means"));
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.0.ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.1.ln()).collect();
    let n = xs.len() as f64;
    let xm = xs.iter().sum::<f64>() / n;
    let ym = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - xm).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(invalid("slope fit needs distinct N values"));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xm) * (y - ym)).sum();
    let slope = sxy / sxx;
    let ssr: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - ym - slope * (x - xm)).powi(2)).sum();
    let se = (ssr / (n - 2.0) / sxx).sqrt();
    let t = StudentsT::new(0.0, 1.0, n - 2.0).map_err(|e| invalid(e.to_string()))?.inverse_cdf(0.975);
    Ok((slope, t * se))
}

/// Law of the i.i.d. samples in the law-of-large-numbers experiments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LawSpec {
    /// Uniform on a two-dimensional box, with exact reference integrals.
    Uniform,
    /// A grid density; references use cell-midpoint quadrature.
    Grid { cells: Vec<usize>, initial: InitialDensity },
}

/// Reference law with sampler and exact (or quadrature) integrals.
#[derive(Clone, Debug)]
pub enum ReferenceLaw {
    UniformBox { lo: [f64; 2], hi: [f64; 2] },
    Grid(GridDensity),
}

impl ReferenceLaw {
    pub fn new(spec: &LawSpec, domain: &DomainSpec) -> Result<Self> {
        match spec {
            LawSpec::Uniform => match domain.shape() {
                Shape::Box { lo, hi } if lo.len() == 2 => {
                    Ok(ReferenceLaw::UniformBox { lo: [lo[0], lo[1]], hi: [hi[0], hi[1]] })
                }
                _ => Err(config("the exact uniform law needs a two-dimensional box; use a grid law")),
            },
            LawSpec::Grid { cells, initial } => {
                let mesh = Mesh::new(domain.clone(), cells.clone())?;
                Ok(ReferenceLaw::Grid(initial.build(&mesh)?))
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ReferenceLaw::UniformBox { .. } => 2,
            ReferenceLaw::Grid(g) => g.mesh().dim(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<ParticleCloud> {
        match self {
            ReferenceLaw::UniformBox { lo, hi } => {
                let mut pos = Vec::with_capacity(2 * n);
                for _ in 0..n {
                    pos.push(rng.random_range(lo[0]..hi[0]));
                    pos.push(rng.random_range(lo[1]..hi[1]));
                }
                ParticleCloud::from_points(2, pos)
            }
            ReferenceLaw::Grid(g) => sample_density(g, n, rng),
        }
    }

    /// `V[rho](x)`.
    pub fn velocity(&self, x: &[f64], sens: &SensitivitySpec, kernel: &KernelSpec) -> Result<Vec<f64>> {
        match self {
            ReferenceLaw::UniformBox { lo, hi } => {
                let region = sens.resolve_at(x)?;
                Ok(uniform_box_velocity(x, lo, hi, &region, kernel).to_vec())
            }
            ReferenceLaw::Grid(g) => velocity_from_density(x, g, sens, kernel),
        }
    }

    /// `rho(x + Theta(w(x))^{u,+})` for every `u` in `us`.
    pub fn theta_masses(&self, x: &[f64], region: &ResolvedRegion, us: &[f64], out: &mut [f64]) -> Result<()> {
        match self {
            ReferenceLaw::UniformBox { lo, hi } => {
                if region.axis().is_some() || region.segment().is_some() {
                    return Err(config("exact generalized-boundary masses are implemented for balls only"));
                }
                let area = (hi[0] - lo[0]) * (hi[1] - lo[1]);
                let r = region.radius();
                let (x0, x1, y0, y1) = (lo[0] - x[0], hi[0] - x[0], lo[1] - x[1], hi[1] - x[1]);
                for (o, u) in out.iter_mut().zip(us) {
                    let outer = disk_rect_area(r + u, x0, x1, y0, y1);
                    let inner = if r > *u { disk_rect_area(r - u, x0, x1, y0, y1) } else { 0.0 };
                    *o = (outer - inner) / area;
                }
                Ok(())
            }
            ReferenceLaw::Grid(g) => {
                let mesh = g.mesh();
                let vol = mesh.cell_volume();
                out.iter_mut().for_each(|v| *v = 0.0);
                let mut hist = vec![0.0; us.len()];
                for f in 0..mesh.len() {
                    let v = g.values()[f];
                    if v == 0.0 {
                        continue;
                    }
                    let c = mesh.center(&mesh.multi_index(f));
                    let o: Vec<f64> = c.iter().zip(x).map(|(a, b)| a - b).collect();
                    let k = us.partition_point(|u| *u < region.theta_distance(&o));
                    if k < us.len() {
                        hist[k] += v * vol;
                    }
                }
                let mut acc = 0.0;
                for (o, h) in out.iter_mut().zip(&hist) {
                    acc += h;
                    *o = acc;
                }
                Ok(())
            }
        }
    }
}

/// Area of the disk of radius `r` at the origin intersected with
/// `[x0, x1] x [y0, y1]`.
pub fn disk_rect_area(r: f64, x0: f64, x1: f64, y0: f64, y1: f64) -> f64 {
    if !(r > 0.0) {
        return 0.0;
    }
    let (a, b) = (x0.max(-r), x1.min(r));
    if a >= b || y0 >= y1 {
        return 0.0;
    }
    let s = |x: f64| (r * r - x * x).max(0.0).sqrt();
    let prim = |x: f64| 0.5 * (x * s(x) + r * r * (x / r).clamp(-1.0, 1.0).asin());
    let mut cuts = vec![a, b];
    for c in [y0, y1] {
        if c.abs() < r {
            let x = (r * r - c * c).sqrt();
            for v in [-x, x] {
                if v > a && v < b {
                    cuts.push(v);
                }
            }
        }
    }
    cuts.sort_by(f64::total_cmp);
    let mut area = 0.0;
    for w in cuts.windows(2) {
        let (p, q) = (w[0], w[1]);
        if q <= p {
            continue;
        }
        let m = 0.5 * (p + q);
        let sm = s(m);
        let top_is_line = y1 < sm;
        let bottom_is_line = y0 > -sm;
        let top = if top_is_line { y1 } else { sm };
        let bottom = if bottom_is_line { y0 } else { -sm };
        if top <= bottom {
            continue;
        }
        let arc = prim(q) - prim(p);
        let int_top = if top_is_line { y1 * (q - p) } else { arc };
        let int_bottom = if bottom_is_line { y0 * (q - p) } else { -arc };
        area += int_top - int_bottom;
    }
    area
}

/// `∫_0^R (radial component of ∇φ(-s e)) s ds` for a radial kernel.
fn radial_moment(kernel: &KernelSpec, big_r: f64, rule: &(Vec<f64>, Vec<f64>)) -> f64 {
    if big_r <= 0.0 {
        return 0.0;
    }
    match *kernel.kind() {
        KernelKind::Zero => 0.0,
        KernelKind::GaussianGrad { amplitude, width } => {
            let t = big_r / width;
            amplitude * width * ((PI / 2.0).sqrt() * statrs::function::erf::erf(t / 2f64.sqrt()) - t * (-0.5 * t * t).exp())
        }
        _ => {
            let mut g = [0.0; 2];
            let mut f = |s: f64| {
                kernel.grad_into(&[-s, 0.0], &mut g);
                g[0] * s
            };
            let cut = match *kernel.kind() {
                KernelKind::PolyTaper { support, .. } if support < big_r => support,
                _ => big_r,
            };
            crate::quadrature::integrate(rule, 0.0, cut, &mut f)
        }
    }
}

/// Exact `V[rho](x)` for `rho` uniform on a planar box, by polar quadrature
/// split at every angle where the integration radius changes form.
pub fn uniform_box_velocity(x: &[f64], lo: &[f64; 2], hi: &[f64; 2], region: &ResolvedRegion, kernel: &KernelSpec) -> [f64; 2] {
    let r = region.radius();
    if kernel.is_zero() || r <= 0.0 {
        return [0.0, 0.0];
    }
    let ang_rule = gauss_legendre(24);
    let rad_rule = gauss_legendre(32);
    // Faces: outward directions and distances from x.
    let faces = [
        (0.0, hi[0] - x[0]),
        (PI / 2.0, hi[1] - x[1]),
        (PI, x[0] - lo[0]),
        (1.5 * PI, x[1] - lo[1]),
    ];
    let (start, span) = match region.axis() {
        None => (0.0, 2.0 * PI),
        Some(a) => {
            let alpha = region.half_angle();
            (a[1].atan2(a[0]) - alpha, 2.0 * alpha)
        }
    };
    let wrap = |t: f64| start + (t - start).rem_euclid(2.0 * PI);
    let mut cuts = vec![start, start + span];
    for c in [[lo[0], lo[1]], [hi[0], lo[1]], [hi[0], hi[1]], [lo[0], hi[1]]] {
        cuts.push(wrap((c[1] - x[1]).atan2(c[0] - x[0])));
    }
    for (dir, delta) in faces {
        if delta < r {
            let a = (delta.max(0.0) / r).acos();
            cuts.push(wrap(dir + a));
            cuts.push(wrap(dir - a));
        }
    }
    cuts.retain(|c| *c >= start && *c <= start + span);
    cuts.sort_by(f64::total_cmp);
    let exit = |th: f64| {
        faces
            .iter()
            .filter_map(|(dir, delta)| {
                let c = (th - dir).cos();
                (c > 1e-15).then(|| delta.max(0.0) / c)
            })
            .fold(f64::INFINITY, f64::min)
    };
    let mut v = [0.0, 0.0];
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b - a <= 0.0 {
            continue;
        }
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        for (node, weight) in ang_rule.0.iter().zip(&ang_rule.1) {
            let th = mid + half * node;
            let big_r = r.min(exit(th));
            let m = radial_moment(kernel, big_r, &rad_rule) * weight * half;
            v[0] += m * th.cos();
            v[1] += m * th.sin();
        }
    }
    let area = (hi[0] - lo[0]) * (hi[1] - lo[1]);
    [v[0] / area, v[1] / area]
}

/// Row statistic `(mean S^{2m})^{1/(2m)}` with a delta-method standard error.
pub fn moment_root(samples: &[f64], m: u32) -> (f64, f64) {
    let k = 2 * m as i32;
    let pow: Vec<f64> = samples.iter().map(|s| s.powi(k)).collect();
    let (mu, se) = mean_stderr(&pow);
    if mu <= 0.0 {
        return (0.0, 0.0);
    }
    let root = mu.powf(1.0 / k as f64);
    (root, root / (k as f64 * mu) * se)
}

fn default_u_points() -> usize {
    64
}

/// Configuration of the law-of-large-numbers sweeps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LlnConfig {
    pub ns: Vec<usize>,
    pub replicas: usize,
    pub m: u32,
    pub domain: DomainSpec,
    #[serde(default = "default_law")]
    pub law: LawSpec,
    pub sensitivity: SensitivitySpec,
    pub kernel: KernelSpec,
    /// Radii in the grid replacing `sup_u`.
    #[serde(default = "default_u_points")]
    pub u_points: usize,
}

fn default_law() -> LawSpec {
    LawSpec::Uniform
}

impl LlnConfig {
    fn validate(&self) -> Result<()> {
        if self.ns.windows(2).any(|w| w[1] <= w[0]) || self.ns.is_empty() {
            return Err(config("N values must be strictly increasing"));
        }
        if self.replicas < 30 {
            return Err(config("need at least 30 replicas per row"));
        }
        let floor = (2 * self.m as usize).pow(2);
        if self.m == 0 || self.ns[0] < floor {
            return Err(config(format!("every N must satisfy N >= (2m)^2 = {floor}")));
        }
        if !self.sensitivity.compatible_dim(self.domain.dim()) {
            return Err(config("sensitivity dimension does not match the domain"));
        }
        if self.u_points < 2 {
            return Err(config("need at least two u radii"));
        }
        Ok(())
    }

    pub fn u_grid(&self) -> Vec<f64> {
        let diam = self.domain.diameter();
        (0..self.u_points).map(|k| diam * k as f64 / (self.u_points - 1) as f64).collect()
    }
}

fn replica_rng(seed: u64, n: usize, r: usize) -> rand_chacha::ChaCha8Rng {
    stream_rng(derive_seed(seed, n as u64), r as u64)
}

/// `sup_i |V[rho^N](Y_i) - V[rho](Y_i)|` for one sample.
pub fn velocity_lln_statistic(
    cloud: &ParticleCloud,
    law: &ReferenceLaw,
    sens: &SensitivitySpec,
    kernel: &KernelSpec,
) -> Result<f64> {
    let d = cloud.dim();
    let n = cloud.len();
    let radius = sens.global_radius();
    let bins = BinnedCloud::new(cloud, sens, radius.max(1e-3))?;
    let mut cand = Vec::new();
    let mut emp = vec![0.0; d];
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let x = cloud.position(i);
        let region = sens.resolve_at(x)?;
        bins.candidates(x, &mut cand);
        emp.iter_mut().for_each(|v| *v = 0.0);
        crate::velocity::accumulate(x, cloud.positions(), d, cand.iter().copied(), &region, kernel, &mut emp);
        emp.iter_mut().for_each(|v| *v /= n as f64);
        let reference = law.velocity(x, sens, kernel)?;
        worst = worst.max(dist(&emp, &reference));
    }
    Ok(worst)
}

/// `sup_i max_u |(rho^N - rho)(Y_i + Theta(w(Y_i))^{u,+})|` for one sample.
pub fn theta_lln_statistic(cloud: &ParticleCloud, law: &ReferenceLaw, sens: &SensitivitySpec, us: &[f64]) -> Result<f64> {
    let n = cloud.len();
    let d = cloud.dim();
    let mut hist = vec![0usize; us.len()];
    let mut reference = vec![0.0; us.len()];
    let mut off = vec![0.0; d];
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let x = cloud.position(i);
        let region = sens.resolve_at(x)?;
        hist.iter_mut().for_each(|h| *h = 0);
        for j in 0..n {
            let y = cloud.position(j);
            for k in 0..d {
                off[k] = y[k] - x[k];
            }
            let td = region.theta_distance(&off);
            let k = us.partition_point(|u| *u < td);
            if k < us.len() {
                hist[k] += 1;
            }
        }
        law.theta_masses(x, &region, us, &mut reference)?;
        let mut acc = 0usize;
        for (h, r) in hist.iter().zip(&reference) {
            acc += h;
            worst = worst.max((acc as f64 / n as f64 - r).abs());
        }
    }
    Ok(worst)
}

fn lln_sweep(
    cfg: &LlnConfig,
    seed: u64,
    bound: impl Fn(usize) -> f64,
    stat: impl Fn(&ParticleCloud, &ReferenceLaw) -> Result<f64> + Sync,
) -> Result<RateTable> {
    cfg.validate()?;
    let law = ReferenceLaw::new(&cfg.law, &cfg.domain)?;
    let mut rows = Vec::with_capacity(cfg.ns.len());
    for &n in &cfg.ns {
        let samples: Vec<f64> = (0..cfg.replicas)
            .into_par_iter()
            .map(|r| {
                let cloud = law.sample(n, &mut replica_rng(seed, n, r))?;
                stat(&cloud, &law)
            })
            .collect::<Result<_>>()?;
        let (mean, stderr) = moment_root(&samples, cfg.m);
        rows.push(RateRow { n, replicas: cfg.replicas, mean, stderr, theory_bound: bound(n) });
    }
    RateTable::from_rows(rows, lln_exponent(cfg.m))
}

/// Velocity law of large numbers: rows bounded by
/// `‖∇φ‖_∞ ((2m)!)^{1/(2m)} sqrt(8m) N^{-1/2+1/(2m)}`.
pub fn run_lln_velocity(cfg: &LlnConfig, seed: u64) -> Result<RateTable> {
    let c = cfg.kernel.sup_norm() * velocity_lln_constant(cfg.m);
    let e = lln_exponent(cfg.m);
    lln_sweep(cfg, seed, |n| c * (n as f64).powf(e), |cloud, law| {
        velocity_lln_statistic(cloud, law, &cfg.sensitivity, &cfg.kernel)
    })
}

/// Generalized-boundary law of large numbers: rows bounded by
/// `8 e^{2m} N^{-1/2+1/(2m)}`.
pub fn run_lln_theta(cfg: &LlnConfig, seed: u64) -> Result<RateTable> {
    let c = theta_lln_constant(cfg.m);
    let e = lln_exponent(cfg.m);
    let us = cfg.u_grid();
    lln_sweep(cfg, seed, |n| c * (n as f64).powf(e), |cloud, law| {
        theta_lln_statistic(cloud, law, &cfg.sensitivity, &us)
    })
}

/// Configuration of the coupled stability experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityConfig {
    pub deltas: Vec<f64>,
    /// Particle system; its initial law is replaced by the offset pair.
    pub sim: SimConfig,
    /// Density driving both systems; omitted means `∇φ` acts on the
    /// uniform density.
    #[serde(default)]
    pub pde: Option<PdeConfig>,
    /// Offset direction; defaults to the diagonal.
    #[serde(default)]
    pub direction: Option<Vec<f64>>,
}

/// `D(t) / D(0)` curves of the stability experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub times: Vec<f64>,
    /// `(delta, D(t))` per offset.
    pub deviations: Vec<(f64, Vec<f64>)>,
    /// Smallest `lambda` with `D(t) <= D(0) e^{lambda t}`, per positive offset.
    pub growth_rates: Vec<(f64, f64)>,
    /// Largest relative spread `(max - min) / mean` of `D(t)/D(0)` across
    /// positive offsets, over all times.
    pub max_spread: f64,
}

impl StabilityReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t");
        for (d, _) in &self.deviations {
            s.push_str(&format!(",D_delta_{d}"));
        }
        s.push('\n');
        for (k, t) in self.times.iter().enumerate() {
            s.push_str(&format!("{t:e}"));
            for (_, v) in &self.deviations {
                s.push_str(&format!(",{:e}", v[k]));
            }
            s.push('\n');
        }
        s
    }
}

/// Two McKean systems driven by the same density and noise, started from
/// clouds offset by `delta` along a fixed direction, for every `delta`.
pub fn run_stability(cfg: &StabilityConfig, seed: u64) -> Result<StabilityReport> {
    let sim = &cfg.sim;
    sim.validate()?;
    let d = sim.domain.dim();
    if cfg.deltas.iter().any(|v| !(*v >= 0.0)) || cfg.deltas.is_empty() {
        return Err(config("offsets must be nonnegative"));
    }
    let dir: Vec<f64> = match &cfg.direction {
        Some(v) if v.len() == d && v.iter().any(|c| *c != 0.0) => {
            let nrm = v.iter().map(|c| c * c).sum::<f64>().sqrt();
            v.iter().map(|c| c / nrm).collect()
        }
        Some(_) => return Err(config("offset direction must be a nonzero vector in R^d")),
        None => vec![1.0 / (d as f64).sqrt(); d],
    };
    let provider = match &cfg.pde {
        Some(p) => {
            if p.domain != sim.domain {
                return Err(config("PDE and particle domains differ"));
            }
            pde::solve(p)?
        }
        None => {
            let mesh = Mesh::new(sim.domain.clone(), vec![16; d])
                .map_err(|_| config("stability without a PDE config needs a box domain"))?;
            DensityProvider::constant(GridDensity::uniform(mesh))
        }
    };
    let dmax = cfg.deltas.iter().copied().fold(0.0, f64::max);
    let mut rng = stream_rng(seed, crate::rng::INIT_STREAM);
    let mut base = Vec::with_capacity(sim.n * d);
    for _ in 0..sim.n {
        let mut accepted = false;
        for _ in 0..crate::particles::MAX_PROPOSALS {
            let p = sim.domain.sample_uniform(&mut rng);
            let q: Vec<f64> = p.iter().zip(&dir).map(|(a, b)| a + dmax * b).collect();
            if sim.domain.contains(&q) {
                base.extend(p);
                accepted = true;
                break;
            }
        }
        if !accepted {
            return Err(config("largest offset does not fit inside the domain"));
        }
    }
    let mut run_cfg = sim.clone();
    run_cfg.seed = seed;
    let steps = sim.steps();
    let dt = sim.dt();
    let times: Vec<f64> = (0..=steps).map(|k| k as f64 * dt).collect();
    let deviations: Vec<(f64, Vec<f64>)> = cfg
        .deltas
        .par_iter()
        .map(|&delta| -> Result<(f64, Vec<f64>)> {
            let shifted: Vec<f64> = base.chunks_exact(d).flat_map(|p| p.iter().zip(&dir).map(move |(a, b)| a + delta * b)).collect();
            let mut a = ParticleCloud::from_points(d, base.clone())?;
            let mut b = ParticleCloud::from_points(d, shifted)?;
            let mut dev = vec![max_deviation(&a, &b)];
            for _ in 0..steps {
                step_mckean(&mut a, &provider, &run_cfg)?;
                step_mckean(&mut b, &provider, &run_cfg)?;
                dev.push(max_deviation(&a, &b));
            }
            Ok((delta, dev))
        })
        .collect::<Result<_>>()?;
    let positive: Vec<&(f64, Vec<f64>)> = deviations.iter().filter(|(_, v)| v[0] > 0.0).collect();
    let growth_rates = positive
        .iter()
        .map(|(delta, v)| {
            let lam = times
                .iter()
                .zip(v)
                .skip(1)
                .map(|(t, dv)| (dv / v[0]).ln() / t)
                .fold(f64::NEG_INFINITY, f64::max);
            (*delta, lam)
        })
        .collect();
    let mut max_spread: f64 = 0.0;
    if positive.len() > 1 {
        for k in 0..times.len() {
            let ratios: Vec<f64> = positive.iter().map(|(_, v)| v[k] / v[0]).collect();
            let hi = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
            let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
            max_spread = max_spread.max((hi - lo) / mean);
        }
    }
    Ok(StabilityReport { times, deviations, growth_rates, max_spread })
}

/// Configuration of the propagation-of-chaos sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChaosConfig {
    pub ns: Vec<usize>,
    pub replicas: usize,
    pub p: f64,
    /// Moment exponent of the theoretical rate.
    #[serde(default = "default_q")]
    pub q: f64,
    #[serde(default = "default_m")]
    pub m: u32,
    /// Mean-field PDE; its initial density is also the particles' law.
    pub pde: PdeConfig,
    /// Particle dynamics; `n` and `initial` are overridden per row.
    pub sim: SimConfig,
}

fn default_q() -> f64 {
    3.0
}

fn default_m() -> u32 {
    2
}

/// Snapshot count used when a chaos run does not list its own.
pub const DEFAULT_SNAPSHOTS: usize = 20;

/// `DEFAULT_SNAPSHOTS` step-aligned times spread evenly over `(0, t_end]`.
pub fn default_snapshots(sim: &SimConfig) -> Vec<f64> {
    let steps = sim.steps();
    let dt = sim.dt();
    let mut ks: Vec<u64> = (1..=DEFAULT_SNAPSHOTS as u64)
        .map(|k| ((k * steps) as f64 / DEFAULT_SNAPSHOTS as f64).round() as u64)
        .filter(|k| *k > 0)
        .collect();
    ks.dedup();
    ks.into_iter().map(|k| k as f64 * dt).collect()
}

/// Per-row output of the chaos sweep together with the PDE it was
/// measured against.
#[derive(Clone, Debug)]
pub struct ChaosOutcome {
    pub table: RateTable,
    /// Per row and replica, `max_t W_p(mu^N_t, rho_t)` estimates.
    pub replica_values: Vec<Vec<f64>>,
    pub provider: DensityProvider,
}

/// `sup_t E[W_p(mu^N_t, rho_t)]` over the snapshot schedule, for every `N`.
pub fn run_chaos(cfg: &ChaosConfig, seed: u64) -> Result<ChaosOutcome> {
    if cfg.ns.windows(2).any(|w| w[1] <= w[0]) || cfg.ns.is_empty() {
        return Err(config("N values must be strictly increasing"));
    }
    if cfg.replicas < 2 {
        return Err(config("need at least two replicas per row"));
    }
    if cfg.pde.domain != cfg.sim.domain {
        return Err(config("PDE and particle domains differ"));
    }
    let mut cfg = cfg.clone();
    if cfg.sim.snapshots.is_empty() {
        cfg.sim.snapshots = default_snapshots(&cfg.sim);
        cfg.pde.snapshots.extend(cfg.sim.snapshots.iter().copied());
    }
    let cfg = &cfg;
    let schedule = cfg.pde.schedule();
    for t in &cfg.sim.snapshots {
        if !schedule.iter().any(|s| (s - t).abs() <= 1e-12 * t.max(1.0)) {
            return Err(config(format!("particle snapshot {t} is not a PDE snapshot time")));
        }
    }
    if (cfg.pde.t_end - cfg.sim.t_end).abs() > 1e-12 * cfg.sim.t_end.max(1.0) {
        return Err(config("PDE and particle horizons differ"));
    }
    let d = cfg.sim.domain.dim();
    let rate = TheoreticalRate { p: cfg.p, q: cfg.q, d, m: cfg.m };
    let provider = pde::solve(&cfg.pde)?;
    let snaps: Vec<GridDensity> = cfg.sim.snapshots.iter().map(|t| provider.at(*t)).collect::<Result<_>>()?;
    let rho0 = provider.at(0.0)?;
    let mut rows = Vec::new();
    let mut all = Vec::new();
    for &n in &cfg.ns {
        let bound = theoretical_bound(&rate, n)?;
        let vals: Vec<f64> = (0..cfg.replicas)
            .into_par_iter()
            .map(|r| -> Result<f64> {
                let mut rng = replica_rng(seed, n, r);
                let cloud = sample_density(&rho0, n, &mut rng)?;
                let mut sim = cfg.sim.clone();
                sim.n = n;
                sim.initial = crate::particles::InitialLaw::Points { points: cloud.rows() };
                sim.seed = derive_seed(seed ^ 0xc4a0_5eed, (n as u64) << 20 | r as u64);
                let (_, traj) = run_interacting(cloud, &sim)?;
                let mut worst: f64 = 0.0;
                for (snap, rho) in traj.iter().zip(&snaps) {
                    let c = ParticleCloud::from_points(d, snap.positions.clone())?;
                    let (w, _) = estimate_wp_cloud_vs_density(&c, rho, cfg.p, 1, &mut rng)?;
                    worst = worst.max(w);
                }
                Ok(worst)
            })
            .collect::<Result<_>>()?;
        let (mean, stderr) = mean_stderr(&vals);
        rows.push(RateRow { n, replicas: cfg.replicas, mean, stderr, theory_bound: bound });
        all.push(vals);
    }
    let table = RateTable::from_rows(rows, rate.leading_exponent())?;
    Ok(ChaosOutcome { table, replica_values: all, provider })
}
