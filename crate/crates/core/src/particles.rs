//! The interacting particle system and its McKean–Vlasov surrogate.
//!
//! Both systems use the projected Euler–Maruyama step from [`geometry`].
//! Noise is addressed by `(seed, stream id, step)` so the two systems can
//! share increments exactly.
//!
//! [`geometry`]: crate::geometry

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config, invalid, Error, Result};
use crate::geometry::{DomainSpec, ReflectionLedger};
use crate::linalg::dist;
use crate::pde::DensityProvider;
use crate::rng::NoiseStreams;
use crate::sensitivity::SensitivitySpec;
use crate::velocity::{velocity_from_density_into, BinnedCloud, KernelSpec};

/// Proposals allowed per accepted draw in rejection sampling.
pub const MAX_PROPOSALS: usize = 1_000_000;

/// Law of the initial positions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialLaw {
    /// Uniform on the domain.
    Uniform,
    /// Isotropic Gaussian conditioned on the domain.
    TruncatedGaussian { mean: Vec<f64>, std: f64 },
    /// Fixed positions, one row per particle.
    Points { points: Vec<Vec<f64>> },
}

/// Parameters of a particle simulation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    /// Step size; when omitted, `1e-3 * min(diameter^2 / (2 sigma), 1)`.
    #[serde(default)]
    pub dt: Option<f64>,
    pub t_end: f64,
    pub sigma: f64,
    #[serde(default)]
    pub seed: u64,
    pub domain: DomainSpec,
    pub sensitivity: SensitivitySpec,
    pub kernel: KernelSpec,
    #[serde(default = "default_initial")]
    pub initial: InitialLaw,
    #[serde(default)]
    pub snapshots: Vec<f64>,
    /// Bin width for the accelerated velocity path; chosen automatically
    /// when omitted.
    #[serde(default)]
    pub bin_width: Option<f64>,
}

fn default_initial() -> InitialLaw {
    InitialLaw::Uniform
}

impl SimConfig {
    /// Configuration with uniform initial data, no snapshots and default `dt`.
    pub fn new(
        n: usize,
        t_end: f64,
        sigma: f64,
        domain: DomainSpec,
        sensitivity: SensitivitySpec,
        kernel: KernelSpec,
    ) -> Self {
        SimConfig {
            n,
            dt: None,
            t_end,
            sigma,
            seed: 0,
            domain,
            sensitivity,
            kernel,
            initial: InitialLaw::Uniform,
            snapshots: Vec::new(),
            bin_width: None,
        }
    }

    pub fn dt(&self) -> f64 {
        self.dt.unwrap_or_else(|| {
            let diam = self.domain.diameter();
            let scale = if self.sigma > 0.0 { diam * diam / (2.0 * self.sigma) } else { 1.0 };
            1e-3 * scale.min(1.0)
        })
    }

    /// Number of steps to reach `t_end`.
    pub fn steps(&self) -> u64 {
        (self.t_end / self.dt()).round() as u64
    }

    pub fn validate(&self) -> Result<()> {
        let dt = self.dt();
        if self.n == 0 {
            return Err(config("particle count must be at least 1"));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(config(format!("dt must be positive, got {dt}")));
        }
        if !(self.t_end >= dt) || !self.t_end.is_finite() {
            return Err(config(format!("horizon {} must be at least dt = {dt}", self.t_end)));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(config("sigma must be nonnegative"));
        }
        let d = self.domain.dim();
        if !self.sensitivity.compatible_dim(d) {
            return Err(config("sensitivity dimension does not match the domain"));
        }
        self.snapshot_steps()?;
        if let Some(w) = self.bin_width {
            if !(w >= self.sensitivity.global_radius()) {
                return Err(config(format!("bin width {w} is below the sensitivity radius")));
            }
        }
        match &self.initial {
            InitialLaw::Uniform => {}
            InitialLaw::TruncatedGaussian { mean, std } => {
                if mean.len() != d || !(*std > 0.0) {
                    return Err(config("truncated gaussian needs a mean in R^d and std > 0"));
                }
            }
            InitialLaw::Points { points } => {
                if points.len() != self.n {
                    return Err(config(format!("expected {} initial points, got {}", self.n, points.len())));
                }
                if points.iter().any(|p| p.len() != d || !self.domain.contains_tol(p)) {
                    return Err(config("initial points must lie in the closed domain"));
                }
            }
        }
        Ok(())
    }

    /// Step indices of the snapshot schedule.
    pub fn snapshot_steps(&self) -> Result<Vec<u64>> {
        let dt = self.dt();
        let mut out = Vec::with_capacity(self.snapshots.len());
        for &t in &self.snapshots {
            if !(0.0..=self.t_end * (1.0 + 1e-12)).contains(&t) {
                return Err(config(format!("snapshot time {t} outside [0, {}]", self.t_end)));
            }
            let k = (t / dt).round();
            if (k * dt - t).abs() > 1e-9 * dt.max(t) {
                return Err(config(format!("snapshot time {t} is not a multiple of dt = {dt}")));
            }
            out.push(k as u64);
        }
        Ok(out)
    }

    fn bins_width(&self) -> Option<f64> {
        let r = self.sensitivity.global_radius();
        self.bin_width.or_else(|| (4.0 * r < self.domain.diameter()).then_some(r))
    }
}

/// Positions, reflection ledgers and noise stream ids of `N` particles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParticleCloud {
    dim: usize,
    positions: Vec<f64>,
    ledgers: Vec<ReflectionLedger>,
    stream_ids: Vec<u64>,
    step: u64,
    time: f64,
}

impl ParticleCloud {
    /// Builds a cloud at time zero from flat `N * dim` coordinates.
    pub fn from_points(dim: usize, positions: Vec<f64>) -> Result<Self> {
        if dim == 0 || positions.is_empty() || !positions.len().is_multiple_of(dim) {
            return Err(invalid("a cloud needs N >= 1 points of matching dimension"));
        }
        if positions.iter().any(|v| !v.is_finite()) {
            return Err(invalid("non-finite particle coordinate"));
        }
        let n = positions.len() / dim;
        Ok(ParticleCloud {
            dim,
            positions,
            ledgers: vec![ReflectionLedger::new(dim); n],
            stream_ids: (0..n as u64).collect(),
            step: 0,
            time: 0.0,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != dim) {
            return Err(invalid("ragged point list"));
        }
        Self::from_points(dim, rows.concat())
    }

    /// Replaces the noise stream assigned to each particle.
    pub fn with_stream_ids(mut self, ids: Vec<u64>) -> Result<Self> {
        if ids.len() != self.len() {
            return Err(invalid("one stream id per particle"));
        }
        self.stream_ids = ids;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.positions.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Flat `N * dim` coordinates.
    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn position(&self, i: usize) -> &[f64] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.positions.chunks_exact(self.dim).map(|c| c.to_vec()).collect()
    }

    pub fn ledgers(&self) -> &[ReflectionLedger] {
        &self.ledgers
    }

    pub fn stream_ids(&self) -> &[u64] {
        &self.stream_ids
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn step_index(&self) -> u64 {
        self.step
    }

    fn advance_clock(&mut self, dt: f64) {
        self.step += 1;
        self.time = self.step as f64 * dt;
    }
}

/// Draws the initial cloud of `cfg` from its initial law.
pub fn init_cloud<R: Rng + ?Sized>(cfg: &SimConfig, rng: &mut R) -> Result<ParticleCloud> {
    cfg.validate()?;
    let dom = &cfg.domain;
    let d = dom.dim();
    let mut pos = Vec::with_capacity(cfg.n * d);
    match &cfg.initial {
        InitialLaw::Uniform => {
            for _ in 0..cfg.n {
                pos.extend(dom.sample_uniform(rng));
            }
        }
        InitialLaw::TruncatedGaussian { mean, std } => {
            let mut p = vec![0.0; d];
            for _ in 0..cfg.n {
                let mut accepted = false;
                for _ in 0..MAX_PROPOSALS {
                    for k in 0..d {
                        let z: f64 = rng.sample(StandardNormal);
                        p[k] = mean[k] + std * z;
                    }
                    if dom.contains(&p) {
                        accepted = true;
                        break;
                    }
                }
                if !accepted {
                    return Err(config(format!(
                        "truncated gaussian rejected {MAX_PROPOSALS} proposals in a row"
                    )));
                }
                pos.extend_from_slice(&p);
            }
        }
        InitialLaw::Points { points } => {
            for p in points {
                pos.extend_from_slice(p);
            }
        }
    }
    ParticleCloud::from_points(d, pos)
}

/// Drift of every particle from the empirical measure of `cloud`.
fn interacting_drifts(cloud: &ParticleCloud, cfg: &SimConfig) -> Result<Vec<f64>> {
    let d = cloud.dim;
    let n = cloud.len();
    let mut drifts = vec![0.0; n * d];
    if cfg.kernel.is_zero() {
        return Ok(drifts);
    }
    let bins = match cfg.bins_width() {
        Some(w) => Some(BinnedCloud::new(cloud, &cfg.sensitivity, w)?),
        None => None,
    };
    let inv_n = 1.0 / n as f64;
    drifts
        .par_chunks_mut(d)
        .enumerate()
        .try_for_each_init(Vec::new, |cand, (i, out)| -> Result<()> {
            let x = cloud.position(i);
            let region = cfg.sensitivity.resolve_at(x)?;
            match &bins {
                Some(b) => {
                    b.candidates(x, cand);
                    crate::velocity::accumulate(x, &cloud.positions, d, cand.iter().copied(), &region, &cfg.kernel, out);
                }
                None => crate::velocity::accumulate(x, &cloud.positions, d, 0..n, &region, &cfg.kernel, out),
            }
            out.iter_mut().for_each(|v| *v *= inv_n);
            Ok(())
        })?;
    Ok(drifts)
}

/// Drift of every particle from a density.
fn density_drifts(cloud: &ParticleCloud, provider: &DensityProvider, cfg: &SimConfig) -> Result<Vec<f64>> {
    let d = cloud.dim;
    let mut drifts = vec![0.0; cloud.len() * d];
    if cfg.kernel.is_zero() {
        provider.check_covers(cloud.time)?;
        return Ok(drifts);
    }
    let rho = provider.at(cloud.time)?;
    let radius = cfg.sensitivity.global_radius();
    drifts.par_chunks_mut(d).enumerate().try_for_each(|(i, out)| -> Result<()> {
        let x = cloud.position(i);
        let region = cfg.sensitivity.resolve_at(x)?;
        velocity_from_density_into(x, &rho, &region, radius, &cfg.kernel, out);
        Ok(())
    })?;
    Ok(drifts)
}

fn apply_step(cloud: &mut ParticleCloud, drifts: &[f64], cfg: &SimConfig) {
    let d = cloud.dim;
    let dt = cfg.dt();
    let noise = NoiseStreams::new(cfg.seed);
    let step = cloud.step;
    let sigma = cfg.sigma;
    let dom = &cfg.domain;
    let ids = &cloud.stream_ids;
    cloud
        .positions
        .par_chunks_mut(d)
        .zip(cloud.ledgers.par_iter_mut())
        .enumerate()
        .for_each(|(i, (x, ledger))| {
            let mut xi = [0.0; 8];
            let mut refl = [0.0; 8];
            let mut z = [0.0; 8];
            if sigma > 0.0 {
                noise.gaussian(ids[i], step, &mut z[..d]);
            }
            xi[..d].copy_from_slice(x);
            dom.reflected_step_into(&xi[..d], &drifts[i * d..(i + 1) * d], &z[..d], dt, sigma, x, &mut refl[..d]);
            ledger.record(&refl[..d]);
        });
    cloud.advance_clock(dt);
}

/// One Jacobi step of the interacting system: all drifts are computed from
/// the pre-step cloud, then every particle takes a reflected step.
pub fn step_interacting(cloud: &mut ParticleCloud, cfg: &SimConfig) -> Result<()> {
    check_dims(cloud, cfg)?;
    let drifts = interacting_drifts(cloud, cfg)?;
    apply_step(cloud, &drifts, cfg);
    Ok(())
}

/// One step of the McKean–Vlasov surrogate: drifts come from the density
/// supplied by `provider` at the cloud's current time.
pub fn step_mckean(cloud: &mut ParticleCloud, provider: &DensityProvider, cfg: &SimConfig) -> Result<()> {
    check_dims(cloud, cfg)?;
    let drifts = density_drifts(cloud, provider, cfg)?;
    apply_step(cloud, &drifts, cfg);
    Ok(())
}

fn check_dims(cloud: &ParticleCloud, cfg: &SimConfig) -> Result<()> {
    if cloud.dim != cfg.domain.dim() {
        return Err(invalid("cloud and domain dimensions differ"));
    }
    Ok(())
}

/// Recorded state of a cloud at one snapshot time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub time: f64,
    pub positions: Vec<f64>,
    pub reflection_totals: Vec<f64>,
}

impl Snapshot {
    pub fn of(cloud: &ParticleCloud) -> Self {
        Snapshot {
            time: cloud.time,
            positions: cloud.positions.clone(),
            reflection_totals: cloud.ledgers.iter().map(|l| l.total).collect(),
        }
    }
}

/// Runs the interacting system from `cloud` to `cfg.t_end`, recording the
/// snapshot schedule.
pub fn run_interacting(mut cloud: ParticleCloud, cfg: &SimConfig) -> Result<(ParticleCloud, Vec<Snapshot>)> {
    cfg.validate()?;
    let marks = cfg.snapshot_steps()?;
    let mut snaps = Vec::with_capacity(marks.len());
    let total = cfg.steps();
    loop {
        let k = cloud.step;
        snaps.extend(marks.iter().filter(|&&m| m == k).map(|_| Snapshot::of(&cloud)));
        if k >= total {
            break;
        }
        step_interacting(&mut cloud, cfg)?;
    }
    Ok((cloud, snaps))
}

/// The interacting system and its McKean surrogate driven by shared noise
/// from identical initial positions.
#[derive(Clone, Debug, PartialEq)]
pub struct CoupledRun {
    pub interacting: ParticleCloud,
    pub mckean: ParticleCloud,
}

impl CoupledRun {
    pub fn new(initial: ParticleCloud) -> Self {
        CoupledRun { interacting: initial.clone(), mckean: initial }
    }

    /// `max_i |X_i - Y_i|`.
    pub fn sup_deviation(&self) -> f64 {
        max_deviation(&self.interacting, &self.mckean)
    }

    /// `max_i |V[mu^N](X_i) - V[rho_t](Y_i)|`: the drift mismatch the
    /// coupling has to absorb at the current step.
    pub fn drift_gap(&self, cfg: &SimConfig, provider: &DensityProvider) -> Result<f64> {
        let a = interacting_drifts(&self.interacting, cfg)?;
        let b = density_drifts(&self.mckean, provider, cfg)?;
        let d = self.interacting.dim;
        Ok(a.chunks_exact(d).zip(b.chunks_exact(d)).map(|(x, y)| dist(x, y)).fold(0.0, f64::max))
    }
}

/// `max_i |A_i - B_i|` over paired particles.
pub fn max_deviation(a: &ParticleCloud, b: &ParticleCloud) -> f64 {
    a.positions
        .chunks_exact(a.dim)
        .zip(b.positions.chunks_exact(b.dim))
        .map(|(x, y)| dist(x, y))
        .fold(0.0, f64::max)
}

/// Advances both systems of `run` by one step with identical increments.
pub fn advance_coupled(run: &mut CoupledRun, cfg: &SimConfig, provider: &DensityProvider) -> Result<()> {
    let (a, b) = (&run.interacting, &run.mckean);
    if a.step != b.step || a.len() != b.len() || a.stream_ids != b.stream_ids {
        return Err(Error::State(format!(
            "coupled clouds are misaligned (steps {} and {})",
            a.step, b.step
        )));
    }
    step_interacting(&mut run.interacting, cfg)?;
    step_mckean(&mut run.mckean, provider, cfg)?;
    Ok(())
}
