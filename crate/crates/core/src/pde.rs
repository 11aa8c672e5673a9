//! Explicit finite-volume solver for the aggregation-diffusion equation
//!
//! ```text
//! d_t rho = div(sigma grad rho - rho V[rho]),   <sigma grad rho - rho V[rho], n> = 0 on the boundary
//! ```
//!
//! on box domains. Advection is first-order upwind with face velocities
//! averaged from the two neighbouring cell centres, diffusion is centred,
//! and boundary faces carry no flux, so the scheme conserves mass exactly
//! up to rounding and keeps densities nonnegative under the CFL bound
//! enforced by [`PdeConfig::validate`].

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config, invalid, Error, Result};
use crate::geometry::{DomainSpec, Shape};
use crate::sensitivity::SensitivitySpec;
use crate::velocity::KernelSpec;

/// Safety factor applied to the stability limits.
pub const CFL_SAFETY: f64 = 0.4;

/// Uniform rectilinear mesh over a box. Cells are numbered with axis 0
/// varying fastest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mesh {
    lo: Vec<f64>,
    hi: Vec<f64>,
    cells: Vec<usize>,
    h: Vec<f64>,
    strides: Vec<usize>,
}

impl Mesh {
    pub fn new(domain: DomainSpec, cells: Vec<usize>) -> Result<Self> {
        let Shape::Box { lo, hi } = domain.shape() else {
            return Err(config("the PDE solver needs a box domain"));
        };
        if cells.len() != lo.len() || cells.contains(&0) {
            return Err(config("need a positive cell count for every axis"));
        }
        let h: Vec<f64> = (0..lo.len()).map(|k| (hi[k] - lo[k]) / cells[k] as f64).collect();
        let mut strides = vec![1usize; cells.len()];
        for k in 1..cells.len() {
            strides[k] = strides[k - 1] * cells[k - 1];
        }
        Ok(Mesh { lo: lo.clone(), hi: hi.clone(), cells, h, strides })
    }

    pub fn dim(&self) -> usize {
        self.cells.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn cells(&self) -> &[usize] {
        &self.cells
    }

    pub fn h(&self) -> &[f64] {
        &self.h
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn len(&self) -> usize {
        self.cells.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_volume(&self) -> f64 {
        self.h.iter().product()
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut out = vec![0; self.dim()];
        for k in 0..self.dim() {
            out[k] = flat % self.cells[k];
            flat /= self.cells[k];
        }
        out
    }

    pub fn center(&self, idx: &[usize]) -> Vec<f64> {
        (0..self.dim()).map(|k| self.lo[k] + (idx[k] as f64 + 0.5) * self.h[k]).collect()
    }

    /// Cell containing `x`, clamped onto the mesh.
    pub fn locate(&self, x: &[f64]) -> Vec<usize> {
        (0..self.dim())
            .map(|k| {
                let i = ((x[k] - self.lo[k]) / self.h[k]).floor();
                i.clamp(0.0, (self.cells[k] - 1) as f64) as usize
            })
            .collect()
    }
}

/// Cell-averaged density on a [`Mesh`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridDensity {
    mesh: Mesh,
    values: Vec<f64>,
    time: f64,
}

impl GridDensity {
    pub fn new(mesh: Mesh, values: Vec<f64>) -> Result<Self> {
        if values.len() != mesh.len() {
            return Err(invalid("one value per cell"));
        }
        if values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(invalid("densities must be finite and nonnegative"));
        }
        Ok(GridDensity { mesh, values, time: 0.0 })
    }

    pub fn zeros(mesh: Mesh) -> Self {
        let n = mesh.len();
        GridDensity { mesh, values: vec![0.0; n], time: 0.0 }
    }

    /// Uniform probability density.
    pub fn uniform(mesh: Mesh) -> Self {
        let n = mesh.len();
        let v = 1.0 / (n as f64 * mesh.cell_volume());
        GridDensity { mesh, values: vec![v; n], time: 0.0 }
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn with_time(mut self, t: f64) -> Self {
        self.time = t;
        self
    }

    /// `Σ ρ_c vol_c`.
    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.mesh.cell_volume()
    }

    pub fn linf(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Rescales to unit mass.
    pub fn normalized(mut self) -> Result<Self> {
        let m = self.mass();
        if !(m > 0.0) {
            return Err(invalid("cannot normalize a density of zero mass"));
        }
        self.values.iter_mut().for_each(|v| *v /= m);
        Ok(self)
    }

    /// `‖a - b‖_{L¹}` on a shared mesh.
    pub fn l1_distance(&self, other: &GridDensity) -> Result<f64> {
        if self.mesh != other.mesh {
            return Err(invalid("densities live on different meshes"));
        }
        let s: f64 = self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).sum();
        Ok(s * self.mesh.cell_volume())
    }

    /// Averages blocks of `factor^d` cells onto a mesh coarser by `factor`.
    pub fn coarsen(&self, factor: usize) -> Result<GridDensity> {
        if factor == 0 || self.mesh.cells.iter().any(|c| c % factor != 0) {
            return Err(invalid("coarsening factor must divide every cell count"));
        }
        let cells: Vec<usize> = self.mesh.cells.iter().map(|c| c / factor).collect();
        let dom = DomainSpec::new_box(self.mesh.lo.clone(), self.mesh.hi.clone())?;
        let coarse = Mesh::new(dom, cells)?;
        let mut values = vec![0.0; coarse.len()];
        let scale = (factor as f64).powi(self.mesh.dim() as i32);
        for (flat, v) in self.values.iter().enumerate() {
            let idx: Vec<usize> = self.mesh.multi_index(flat).iter().map(|i| i / factor).collect();
            values[coarse.flat_index(&idx)] += v / scale;
        }
        Ok(GridDensity { mesh: coarse, values, time: self.time })
    }

    /// Point value (piecewise constant).
    pub fn value_at(&self, x: &[f64]) -> f64 {
        self.values[self.mesh.flat_index(&self.mesh.locate(x))]
    }
}

/// Initial density families; each is normalized to unit mass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialDensity {
    Uniform,
    /// Isotropic Gaussian sampled at cell centres.
    Gaussian { mean: Vec<f64>, std: f64 },
    /// All mass in the cell containing `center`.
    Spike { center: Vec<f64> },
    /// Explicit cell values.
    Values { values: Vec<f64> },
}

impl InitialDensity {
    pub fn build(&self, mesh: &Mesh) -> Result<GridDensity> {
        let d = mesh.dim();
        let g = match self {
            InitialDensity::Uniform => GridDensity::uniform(mesh.clone()),
            InitialDensity::Gaussian { mean, std } => {
                if mean.len() != d || !(*std > 0.0) {
                    return Err(config("gaussian density needs a mean in R^d and std > 0"));
                }
                let values = (0..mesh.len())
                    .map(|f| {
                        let c = mesh.center(&mesh.multi_index(f));
                        let r2: f64 = c.iter().zip(mean).map(|(a, b)| (a - b) * (a - b)).sum();
                        (-r2 / (2.0 * std * std)).exp()
                    })
                    .collect();
                GridDensity::new(mesh.clone(), values)?
            }
            InitialDensity::Spike { center } => {
                if center.len() != d {
                    return Err(config("spike center dimension mismatch"));
                }
                let mut g = GridDensity::zeros(mesh.clone());
                let f = mesh.flat_index(&mesh.locate(center));
                g.values[f] = 1.0;
                g
            }
            InitialDensity::Values { values } => GridDensity::new(mesh.clone(), values.clone())
                .map_err(|e| config(format!("initial values: {e}")))?,
        };
        g.normalized().map_err(|e| config(e.to_string()))
    }
}

/// Parameters of a PDE run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PdeConfig {
    pub cells: Vec<usize>,
    /// Maximal step; defaults to the CFL limit.
    #[serde(default)]
    pub dt: Option<f64>,
    pub t_end: f64,
    pub sigma: f64,
    pub domain: DomainSpec,
    pub sensitivity: SensitivitySpec,
    pub kernel: KernelSpec,
    #[serde(default = "default_initial")]
    pub initial: InitialDensity,
    /// Output times; `0` and `t_end` are always included.
    #[serde(default)]
    pub snapshots: Vec<f64>,
}

fn default_initial() -> InitialDensity {
    InitialDensity::Uniform
}

impl PdeConfig {
    pub fn new(
        cells: Vec<usize>,
        t_end: f64,
        sigma: f64,
        domain: DomainSpec,
        sensitivity: SensitivitySpec,
        kernel: KernelSpec,
        initial: InitialDensity,
    ) -> Result<Self> {
        let c = PdeConfig { cells, dt: None, t_end, sigma, domain, sensitivity, kernel, initial, snapshots: Vec::new() };
        c.validate()?;
        Ok(c)
    }

    pub fn mesh(&self) -> Result<Mesh> {
        Mesh::new(self.domain.clone(), self.cells.clone())
    }

    /// `0.4 min(h / (2 ‖∇φ‖_∞ mass), h^2 / (4 d sigma))` for unit mass.
    pub fn cfl_limit(&self) -> Result<f64> {
        let mesh = self.mesh()?;
        let h = mesh.h().iter().copied().fold(f64::INFINITY, f64::min);
        let d = mesh.dim() as f64;
        let adv = if self.kernel.sup_norm() > 0.0 { h / (2.0 * self.kernel.sup_norm()) } else { f64::INFINITY };
        let diff = if self.sigma > 0.0 { h * h / (4.0 * d * self.sigma) } else { f64::INFINITY };
        Ok(CFL_SAFETY * adv.min(diff))
    }

    pub fn dt(&self) -> Result<f64> {
        match self.dt {
            Some(dt) => Ok(dt),
            None => Ok(self.cfl_limit()?.min(self.t_end.max(f64::MIN_POSITIVE))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mesh = self.mesh()?;
        if !self.sensitivity.compatible_dim(mesh.dim()) {
            return Err(config("sensitivity dimension does not match the domain"));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(config("sigma must be nonnegative"));
        }
        if !(self.t_end >= 0.0) || !self.t_end.is_finite() {
            return Err(config("t_end must be nonnegative"));
        }
        let dt = self.dt()?;
        let lim = self.cfl_limit()?;
        if !(dt > 0.0) || dt > lim * (1.0 + 1e-12) {
            return Err(config(format!("dt = {dt} violates the CFL limit {lim}")));
        }
        if self.snapshots.iter().any(|t| !(0.0..=self.t_end).contains(t)) {
            return Err(config("snapshot times must lie in [0, t_end]"));
        }
        Ok(())
    }

    /// Sorted output times including `0` and `t_end`.
    pub fn schedule(&self) -> Vec<f64> {
        let mut ts = self.snapshots.clone();
        ts.push(0.0);
        ts.push(self.t_end);
        ts.sort_by(f64::total_cmp);
        ts.dedup_by(|a, b| (*a - *b).abs() <= 1e-14 * self.t_end.max(1.0));
        ts
    }
}

/// Convolution stencil `∇φ(-o) vol` over mesh offsets `o` within the
/// sensitivity radius.
struct Stencil {
    dim: usize,
    shifts: Vec<i64>,
    flat: Vec<isize>,
    weights: Vec<f64>,
    offsets: Vec<f64>,
    reach: Vec<i64>,
    filtered: bool,
}

impl Stencil {
    fn new(mesh: &Mesh, sens: &SensitivitySpec, kernel: &KernelSpec) -> Result<Self> {
        let d = mesh.dim();
        let r = sens.global_radius();
        let reach: Vec<i64> = (0..d)
            .map(|k| ((r / mesh.h[k]).ceil() as i64).min(mesh.cells[k] as i64 - 1))
            .collect();
        let shared = if sens.is_translation_invariant() {
            let mid: Vec<f64> = (0..d).map(|k| 0.5 * (mesh.lo[k] + mesh.hi[k])).collect();
            Some(sens.resolve_at(&mid)?)
        } else {
            None
        };
        let mut st = Stencil {
            dim: d,
            shifts: Vec::new(),
            flat: Vec::new(),
            weights: Vec::new(),
            offsets: Vec::new(),
            reach: reach.clone(),
            filtered: shared.is_some(),
        };
        let vol = mesh.cell_volume();
        let mut s: Vec<i64> = reach.iter().map(|r| -r).collect();
        let mut o = vec![0.0; d];
        let mut neg = vec![0.0; d];
        let mut g = vec![0.0; d];
        loop {
            for k in 0..d {
                o[k] = s[k] as f64 * mesh.h[k];
                neg[k] = -o[k];
            }
            let r2: f64 = o.iter().map(|v| v * v).sum();
            let keep = r2 <= r * r && shared.as_ref().is_none_or(|reg| reg.contains(&o));
            if keep {
                kernel.grad_into(&neg, &mut g);
                st.shifts.extend_from_slice(&s);
                st.flat.push((0..d).map(|k| s[k] as isize * mesh.strides[k] as isize).sum());
                st.weights.extend(g.iter().map(|v| v * vol));
                st.offsets.extend_from_slice(&o);
            }
            let mut k = 0;
            loop {
                if k == d {
                    return Ok(st);
                }
                s[k] += 1;
                if s[k] <= reach[k] {
                    break;
                }
                s[k] = -reach[k];
                k += 1;
            }
        }
    }
}

/// Explicit stepper bound to one configuration.
pub struct Stepper {
    cfg: PdeConfig,
    mesh: Mesh,
    stencil: Option<Stencil>,
    centers: Vec<f64>,
}

impl Stepper {
    pub fn new(cfg: &PdeConfig) -> Result<Self> {
        cfg.validate()?;
        let mesh = cfg.mesh()?;
        let stencil = if cfg.kernel.is_zero() { None } else { Some(Stencil::new(&mesh, &cfg.sensitivity, &cfg.kernel)?) };
        let centers = (0..mesh.len()).flat_map(|f| mesh.center(&mesh.multi_index(f))).collect();
        Ok(Stepper { cfg: cfg.clone(), mesh, stencil, centers })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    /// `V[rho]` at every cell centre, `d` components per cell.
    pub fn cell_velocities(&self, rho: &GridDensity) -> Result<Vec<f64>> {
        let d = self.mesh.dim();
        let mut vel = vec![0.0; self.mesh.len() * d];
        let Some(st) = &self.stencil else {
            return Ok(vel);
        };
        if st.filtered {
            return Ok(self.convolve(st, &rho.values));
        }
        let sens = &self.cfg.sensitivity;
        let values = &rho.values;
        let mesh = &self.mesh;
        vel.par_chunks_mut(d).enumerate().try_for_each(|(i, out)| -> Result<()> {
            let mut idx = [0i64; 8];
            let mut rest = i;
            for k in 0..d {
                idx[k] = (rest % mesh.cells[k]) as i64;
                rest /= mesh.cells[k];
            }
            let interior = (0..d).all(|k| idx[k] >= st.reach[k] && idx[k] + st.reach[k] < mesh.cells[k] as i64);
            let region = if st.filtered { None } else { Some(sens.resolve_at(&self.centers[i * d..(i + 1) * d])?) };
            for e in 0..st.flat.len() {
                if !interior {
                    let sh = &st.shifts[e * d..(e + 1) * d];
                    if (0..d).any(|k| {
                        let j = idx[k] + sh[k];
                        j < 0 || j >= mesh.cells[k] as i64
                    }) {
                        continue;
                    }
                }
                let rho_j = values[(i as isize + st.flat[e]) as usize];
                if rho_j == 0.0 {
                    continue;
                }
                if let Some(reg) = &region {
                    if !reg.contains(&st.offsets[e * st.dim..(e + 1) * st.dim]) {
                        continue;
                    }
                }
                let w = &st.weights[e * d..(e + 1) * d];
                for k in 0..d {
                    out[k] += w[k] * rho_j;
                }
            }
            Ok(())
        })?;
        Ok(vel)
    }

    /// Shift-major evaluation of a position-independent stencil: each entry
    /// is applied to a contiguous run of cells along axis 0 per row. Every
    /// cell still accumulates entries in ascending order.
    fn convolve(&self, st: &Stencil, values: &[f64]) -> Vec<f64> {
        let mesh = &self.mesh;
        let d = mesh.dim();
        let n = mesh.len();
        let mut comps = vec![vec![0.0; n]; d];
        let mut lo = vec![0usize; d];
        let mut hi = vec![0usize; d];
        let mut idx = vec![0usize; d];
        for e in 0..st.flat.len() {
            let sh = &st.shifts[e * d..(e + 1) * d];
            for k in 0..d {
                let c = mesh.cells[k] as i64;
                lo[k] = (-sh[k]).clamp(0, c) as usize;
                hi[k] = (c - sh[k]).clamp(0, c) as usize;
            }
            if (0..d).any(|k| lo[k] >= hi[k]) {
                continue;
            }
            let off = st.flat[e];
            let w = &st.weights[e * d..(e + 1) * d];
            idx[1..].copy_from_slice(&lo[1..]);
            loop {
                let base: usize = (1..d).map(|k| idx[k] * mesh.strides[k]).sum();
                let (a, b) = (base + lo[0], base + hi[0]);
                let src = &values[(a as isize + off) as usize..(b as isize + off) as usize];
                for (comp, wk) in comps.iter_mut().zip(w) {
                    for (o, r) in comp[a..b].iter_mut().zip(src) {
                        *o += wk * r;
                    }
                }
                let mut k = 1;
                while k < d {
                    idx[k] += 1;
                    if idx[k] < hi[k] {
                        break;
                    }
                    idx[k] = lo[k];
                    k += 1;
                }
                if k == d {
                    break;
                }
            }
        }
        let mut vel = vec![0.0; n * d];
        for (k, comp) in comps.iter().enumerate() {
            for (i, v) in comp.iter().enumerate() {
                vel[i * d + k] = *v;
            }
        }
        vel
    }

    /// Advances `rho` by `dt`, which must respect the CFL limit.
    pub fn step(&self, rho: &GridDensity, dt: f64) -> Result<GridDensity> {
        let lim = self.cfg.cfl_limit()?;
        if !(dt > 0.0) || dt > lim * (1.0 + 1e-12) {
            return Err(config(format!("dt = {dt} violates the CFL limit {lim}")));
        }
        if rho.mesh != self.mesh {
            return Err(invalid("density mesh differs from the solver mesh"));
        }
        let d = self.mesh.dim();
        let vel = self.cell_velocities(rho)?;
        let old = &rho.values;
        let mut new = old.clone();
        let sigma = self.cfg.sigma;
        for k in 0..d {
            let h = self.mesh.h[k];
            let stride = self.mesh.strides[k];
            let n_k = self.mesh.cells[k];
            let c = dt / h;
            for i in 0..self.mesh.len() {
                if (i / stride) % n_k == n_k - 1 {
                    continue;
                }
                let j = i + stride;
                let v = 0.5 * (vel[i * d + k] + vel[j * d + k]);
                let flux = v.max(0.0) * old[i] + v.min(0.0) * old[j] - sigma * (old[j] - old[i]) / h;
                new[i] -= c * flux;
                new[j] += c * flux;
            }
        }
        Ok(GridDensity { mesh: self.mesh.clone(), values: new, time: rho.time + dt })
    }
}

/// One explicit step of size `cfg.dt()`.
pub fn step_fv(rho: &GridDensity, cfg: &PdeConfig) -> Result<GridDensity> {
    Stepper::new(cfg)?.step(rho, cfg.dt()?)
}

/// Snapshots of a PDE solution with linear interpolation in time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityProvider {
    snapshots: Vec<GridDensity>,
    /// `(t, ‖ρ_t‖_∞)` after every step.
    linf_history: Vec<(f64, f64)>,
    frozen: bool,
}

impl DensityProvider {
    /// A time-independent density valid at every time.
    pub fn constant(rho: GridDensity) -> Self {
        let l = rho.linf();
        DensityProvider { snapshots: vec![rho.with_time(0.0)], linf_history: vec![(0.0, l)], frozen: true }
    }

    pub fn snapshots(&self) -> &[GridDensity] {
        &self.snapshots
    }

    pub fn linf_history(&self) -> &[(f64, f64)] {
        &self.linf_history
    }

    /// `max_t ‖ρ_t‖_∞` over all computed steps.
    pub fn max_linf(&self) -> f64 {
        self.linf_history.iter().map(|p| p.1).fold(0.0, f64::max)
    }

    pub fn end_time(&self) -> f64 {
        if self.frozen {
            f64::INFINITY
        } else {
            self.snapshots.last().map_or(0.0, |s| s.time)
        }
    }

    pub fn check_covers(&self, t: f64) -> Result<()> {
        let end = self.end_time();
        if !(t >= 0.0 && t <= end * (1.0 + 1e-12) + 1e-15) {
            return Err(Error::TimeCoverage { t, start: 0.0, end });
        }
        Ok(())
    }

    /// Density at time `t`, linearly interpolated between snapshots.
    pub fn at(&self, t: f64) -> Result<GridDensity> {
        self.check_covers(t)?;
        if self.frozen || self.snapshots.len() == 1 {
            return Ok(self.snapshots[0].clone().with_time(t));
        }
        let pos = self.snapshots.partition_point(|s| s.time < t).min(self.snapshots.len() - 1);
        let b = &self.snapshots[pos];
        if pos == 0 || (b.time - t).abs() <= 1e-14 * t.max(1.0) {
            return Ok(b.clone().with_time(t));
        }
        let a = &self.snapshots[pos - 1];
        let lam = (t - a.time) / (b.time - a.time);
        let values = a.values.iter().zip(&b.values).map(|(x, y)| (1.0 - lam) * x + lam * y).collect();
        Ok(GridDensity { mesh: a.mesh.clone(), values, time: t })
    }
}

/// Solves the PDE from `cfg.initial`, hitting every scheduled time exactly.
pub fn solve(cfg: &PdeConfig) -> Result<DensityProvider> {
    let mesh = cfg.mesh()?;
    let rho0 = cfg.initial.build(&mesh)?;
    solve_from(cfg, rho0)
}

/// Solves the PDE from a given initial density.
pub fn solve_from(cfg: &PdeConfig, rho0: GridDensity) -> Result<DensityProvider> {
    let stepper = Stepper::new(cfg)?;
    let dt_max = cfg.dt()?;
    let schedule = cfg.schedule();
    let mut rho = rho0.with_time(0.0);
    let mut hist = vec![(0.0, rho.linf())];
    let mut snaps = vec![rho.clone()];
    for w in schedule.windows(2) {
        let (a, b) = (w[0], w[1]);
        let sub = ((b - a) / dt_max * (1.0 - 1e-12)).ceil().max(1.0) as usize;
        let dt = (b - a) / sub as f64;
        for s in 0..sub {
            rho = stepper.step(&rho, dt)?;
            rho.time = a + (s + 1) as f64 * dt;
            hist.push((rho.time, rho.linf()));
        }
        rho.time = b;
        snaps.push(rho.clone());
    }
    Ok(DensityProvider { snapshots: snaps, linf_history: hist, frozen: false })
}

/// `f0 / (1 - C f0 t)`, the growth bound for `‖ρ_t‖_∞`.
pub fn linf_envelope(f0: f64, c: f64, t: f64) -> Result<f64> {
    if !(f0 >= 0.0) || !(c >= 0.0) || !(t >= 0.0) {
        return Err(invalid("envelope needs f0, C, t >= 0"));
    }
    let q = c * f0 * t;
    if q >= 1.0 {
        return Err(Error::BlowUp { t, blow_up: 1.0 / (c * f0) });
    }
    Ok(f0 / (1.0 - q))
}

/// Smallest `C` with `f(t) <= f0 / (1 - C f0 t)` along a recorded history.
pub fn calibrate_linf_constant(f0: f64, history: &[(f64, f64)]) -> f64 {
    history
        .iter()
        .filter(|(t, f)| *t > 0.0 && *f > 0.0)
        .map(|(t, f)| (1.0 - f0 / f) / (f0 * t))
        .fold(0.0, f64::max)
}

/// `f0 e^t + C e^t ∫_0^t g(s) e^{-s} ds` with the integral by the trapezoid
/// rule over samples `(times, g)` starting at `0`.
pub fn gronwall_envelope_ii(f0: f64, c: f64, times: &[f64], g: &[f64]) -> Result<f64> {
    if times.len() != g.len() || times.is_empty() {
        return Err(invalid("need matching, nonempty samples of g"));
    }
    if times[0] != 0.0 || times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(invalid("sample times must start at 0 and increase"));
    }
    let t = *times.last().unwrap();
    let integral: f64 = times
        .windows(2)
        .zip(g.windows(2))
        .map(|(ts, gs)| 0.5 * (ts[1] - ts[0]) * (gs[0] * (-ts[0]).exp() + gs[1] * (-ts[1]).exp()))
        .sum();
    Ok(f0 * t.exp() + c * t.exp() * integral)
}
