//! Interaction kernels and the nonlocal velocity field
//!
//! ```text
//! V[mu](x) = ∫ ∇φ(x - y) 1_{K(w(x))}(y - x) mu(dy)
//! ```
//!
//! evaluated for empirical measures (naively or through a spatial bin
//! index) and for cell-averaged grid densities.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config, invalid, Error, Result};
use crate::geometry::random_unit;
use crate::linalg::{dist, dot};
use crate::particles::ParticleCloud;
use crate::pde::GridDensity;
use crate::sensitivity::{ResolvedRegion, SensitivitySpec};

/// Interaction field families. All are bounded and globally Lipschitz.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelKind {
    /// `∇φ ≡ 0`.
    Zero,
    /// `∇φ(z) = -(A / l^2) z exp(-|z|^2 / (2 l^2))`; attractive for `A > 0`.
    GaussianGrad { amplitude: f64, width: f64 },
    /// Negative gradient of the Morse potential
    /// `C_r exp(-s/l_r) - C_a exp(-s/l_a)` in the softened radius
    /// `s = sqrt(|z|^2 + softening^2)`: `C_r` repels, `C_a` attracts.
    MorseGrad {
        c_a: f64,
        l_a: f64,
        c_r: f64,
        l_r: f64,
        #[serde(default = "default_softening")]
        softening: f64,
    },
    /// `∇φ(z) = -A z (1 - |z|^2 / R^2)^2` inside `|z| < R`, zero outside.
    PolyTaper { amplitude: f64, support: f64 },
}

fn default_softening() -> f64 {
    0.05
}

/// A validated kernel together with its sup-norm and Lipschitz bounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KernelKind", into = "KernelKind")]
pub struct KernelSpec {
    kind: KernelKind,
    sup_norm: f64,
    lipschitz: f64,
}

impl TryFrom<KernelKind> for KernelSpec {
    type Error = Error;
    fn try_from(kind: KernelKind) -> Result<Self> {
        KernelSpec::new(kind)
    }
}

impl From<KernelSpec> for KernelKind {
    fn from(k: KernelSpec) -> Self {
        k.kind
    }
}

impl KernelSpec {
    pub fn new(kind: KernelKind) -> Result<Self> {
        let finite_pos = |v: f64, what: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(config(format!("kernel {what} must be positive, got {v}")))
            }
        };
        let (sup_norm, lipschitz) = match &kind {
            KernelKind::Zero => (0.0, 0.0),
            KernelKind::GaussianGrad { amplitude, width } => {
                finite_pos(*width, "width")?;
                if !amplitude.is_finite() {
                    return Err(config("kernel amplitude must be finite"));
                }
                let a = amplitude.abs();
                (a / width * (-0.5f64).exp(), a / (width * width))
            }
            KernelKind::MorseGrad { c_a, l_a, c_r, l_r, softening } => {
                finite_pos(*l_a, "l_a")?;
                finite_pos(*l_r, "l_r")?;
                finite_pos(*softening, "softening")?;
                if !(c_a.is_finite() && c_r.is_finite()) {
                    return Err(config("Morse strengths must be finite"));
                }
                let first = c_r.abs() / l_r + c_a.abs() / l_a;
                let second = c_r.abs() / (l_r * l_r) + c_a.abs() / (l_a * l_a);
                (first, (first / softening).max(second))
            }
            KernelKind::PolyTaper { amplitude, support } => {
                finite_pos(*support, "support")?;
                if !amplitude.is_finite() {
                    return Err(config("kernel amplitude must be finite"));
                }
                let a = amplitude.abs();
                (a * support / 5f64.sqrt() * 16.0 / 25.0, a)
            }
        };
        let k = KernelSpec { kind, sup_norm, lipschitz };
        k.check_bounds()?;
        Ok(k)
    }

    pub fn zero() -> Self {
        KernelSpec { kind: KernelKind::Zero, sup_norm: 0.0, lipschitz: 0.0 }
    }

    pub fn gaussian(amplitude: f64, width: f64) -> Result<Self> {
        Self::new(KernelKind::GaussianGrad { amplitude, width })
    }

    pub fn kind(&self) -> &KernelKind {
        &self.kind
    }

    /// `‖∇φ‖_∞`.
    pub fn sup_norm(&self) -> f64 {
        self.sup_norm
    }

    /// `‖∇φ‖_Lip`.
    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.kind, KernelKind::Zero) || self.sup_norm == 0.0
    }

    /// Length scale outside which the field is negligible or zero; used to
    /// size validation probes.
    fn length_scale(&self) -> f64 {
        match self.kind {
            KernelKind::Zero => 1.0,
            KernelKind::GaussianGrad { width, .. } => width,
            KernelKind::MorseGrad { l_a, l_r, .. } => l_a.max(l_r),
            KernelKind::PolyTaper { support, .. } => support,
        }
    }

    /// Writes `∇φ(z)` into `out`.
    #[inline]
    pub fn grad_into(&self, z: &[f64], out: &mut [f64]) {
        let r2 = dot(z, z);
        let coef = match self.kind {
            KernelKind::Zero => 0.0,
            KernelKind::GaussianGrad { amplitude, width } => {
                let l2 = width * width;
                -amplitude / l2 * (-r2 / (2.0 * l2)).exp()
            }
            KernelKind::MorseGrad { c_a, l_a, c_r, l_r, softening } => {
                let s = (r2 + softening * softening).sqrt();
                (c_r / l_r * (-s / l_r).exp() - c_a / l_a * (-s / l_a).exp()) / s
            }
            KernelKind::PolyTaper { amplitude, support } => {
                let t = r2 / (support * support);
                if t < 1.0 {
                    -amplitude * (1.0 - t) * (1.0 - t)
                } else {
                    0.0
                }
            }
        };
        for (o, zi) in out.iter_mut().zip(z) {
            *o = coef * zi;
        }
    }

    pub fn grad(&self, z: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; z.len()];
        self.grad_into(z, &mut out);
        out
    }

    /// Checks the reported constants against 10^5 sampled probes.
    fn check_bounds(&self) -> Result<()> {
        if matches!(self.kind, KernelKind::Zero) {
            return Ok(());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0x6b65_726e);
        let reach = 6.0 * self.length_scale();
        let (mut g1, mut g2) = (vec![0.0; 3], vec![0.0; 3]);
        for i in 0..100_000 {
            let dir = random_unit(3, &mut rng);
            let r = reach * rng.random::<f64>();
            let z1: Vec<f64> = dir.iter().map(|d| d * r).collect();
            self.grad_into(&z1, &mut g1);
            if dot(&g1, &g1).sqrt() > self.sup_norm * (1.0 + 1e-9) {
                return Err(config(format!("kernel exceeds its sup-norm bound at {z1:?}")));
            }
            let step = self.length_scale() * 10f64.powf(-3.0 * rng.random::<f64>()) * if i % 2 == 0 { 1.0 } else { 0.1 };
            let dz = random_unit(3, &mut rng);
            let z2: Vec<f64> = z1.iter().zip(&dz).map(|(a, b)| a + step * b).collect();
            self.grad_into(&z2, &mut g2);
            if dist(&g1, &g2) > self.lipschitz * dist(&z1, &z2) * (1.0 + 1e-6) + 1e-15 {
                return Err(config("kernel exceeds its Lipschitz bound"));
            }
        }
        Ok(())
    }
}

/// Empirical velocity `(1/N) Σ_j ∇φ(x - X_j) 1_{K(w(x))}(X_j - x)`, summed
/// in ascending particle index.
pub fn velocity_empirical(
    x: &[f64],
    cloud: &ParticleCloud,
    sens: &SensitivitySpec,
    kernel: &KernelSpec,
) -> Result<Vec<f64>> {
    if cloud.is_empty() {
        return Err(invalid("velocity of an empty cloud"));
    }
    let region = sens.resolve_at(x)?;
    let mut out = vec![0.0; x.len()];
    accumulate(x, cloud.positions(), cloud.dim(), 0..cloud.len(), &region, kernel, &mut out);
    let n = cloud.len() as f64;
    out.iter_mut().for_each(|v| *v /= n);
    Ok(out)
}

pub(crate) fn accumulate(
    x: &[f64],
    positions: &[f64],
    dim: usize,
    indices: impl Iterator<Item = usize>,
    region: &ResolvedRegion,
    kernel: &KernelSpec,
    out: &mut [f64],
) {
    let mut off = [0.0; 8];
    let mut neg = [0.0; 8];
    let mut g = [0.0; 8];
    let (off, neg, g) = (&mut off[..dim], &mut neg[..dim], &mut g[..dim]);
    for j in indices {
        let y = &positions[j * dim..(j + 1) * dim];
        for k in 0..dim {
            off[k] = y[k] - x[k];
            neg[k] = x[k] - y[k];
        }
        if region.contains(off) {
            kernel.grad_into(neg, g);
            for k in 0..dim {
                out[k] += g[k];
            }
        }
    }
}

/// Uniform bin index over a particle snapshot. Bins have width at least the
/// sensitivity radius, so every particle that can interact with a query
/// point lies in the `3^d` bins around it.
#[derive(Clone, Debug)]
pub struct BinnedCloud {
    dim: usize,
    origin: Vec<f64>,
    width: f64,
    shape: Vec<usize>,
    starts: Vec<usize>,
    members: Vec<usize>,
}

impl BinnedCloud {
    pub fn new(cloud: &ParticleCloud, sens: &SensitivitySpec, bin_width: f64) -> Result<Self> {
        if !(bin_width >= sens.global_radius()) || !bin_width.is_finite() {
            return Err(config(format!(
                "bin width {bin_width} is below the sensitivity radius {}",
                sens.global_radius()
            )));
        }
        let dim = cloud.dim();
        let pos = cloud.positions();
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        for p in pos.chunks_exact(dim) {
            for k in 0..dim {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        let shape: Vec<usize> = (0..dim)
            .map(|k| (((hi[k] - lo[k]) / bin_width).floor() as usize + 1).max(1))
            .collect();
        let mut bins = Self { dim, origin: lo, width: bin_width, shape, starts: Vec::new(), members: Vec::new() };
        let total: usize = bins.shape.iter().product();
        let cell_of: Vec<usize> = pos.chunks_exact(dim).map(|p| bins.flat(&bins.cell(p))).collect();
        let mut counts = vec![0usize; total + 1];
        for &c in &cell_of {
            counts[c + 1] += 1;
        }
        for i in 0..total {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut members = vec![0usize; cell_of.len()];
        for (j, &c) in cell_of.iter().enumerate() {
            members[fill[c]] = j;
            fill[c] += 1;
        }
        bins.starts = counts;
        bins.members = members;
        Ok(bins)
    }

    fn cell(&self, p: &[f64]) -> Vec<i64> {
        (0..self.dim)
            .map(|k| ((p[k] - self.origin[k]) / self.width).floor() as i64)
            .collect()
    }

    fn flat(&self, c: &[i64]) -> usize {
        let mut idx = 0usize;
        for k in (0..self.dim).rev() {
            let ck = c[k].clamp(0, self.shape[k] as i64 - 1) as usize;
            idx = idx * self.shape[k] + ck;
        }
        idx
    }

    /// Ascending indices of particles in the bins neighbouring `x`.
    pub fn candidates(&self, x: &[f64], out: &mut Vec<usize>) {
        out.clear();
        let home: Vec<i64> = self
            .cell(x)
            .iter()
            .zip(&self.shape)
            .map(|(c, s)| (*c).clamp(-2, *s as i64 + 1))
            .collect();
        let mut step = vec![-1i64; self.dim];
        loop {
            let c: Vec<i64> = home.iter().zip(&step).map(|(h, s)| h + s).collect();
            if c.iter().zip(&self.shape).all(|(ci, s)| *ci >= 0 && *ci < *s as i64) {
                let f = self.flat(&c);
                out.extend_from_slice(&self.members[self.starts[f]..self.starts[f + 1]]);
            }
            let mut k = 0;
            loop {
                if k == self.dim {
                    out.sort_unstable();
                    return;
                }
                step[k] += 1;
                if step[k] <= 1 {
                    break;
                }
                step[k] = -1;
                k += 1;
            }
        }
    }
}

/// Binned evaluation of [`velocity_empirical`]; identical to it bit for bit.
pub fn velocity_empirical_binned(
    x: &[f64],
    cloud: &ParticleCloud,
    bins: &BinnedCloud,
    sens: &SensitivitySpec,
    kernel: &KernelSpec,
) -> Result<Vec<f64>> {
    if cloud.is_empty() {
        return Err(invalid("velocity of an empty cloud"));
    }
    let region = sens.resolve_at(x)?;
    let mut cand = Vec::new();
    bins.candidates(x, &mut cand);
    let mut out = vec![0.0; x.len()];
    accumulate(x, cloud.positions(), cloud.dim(), cand.into_iter(), &region, kernel, &mut out);
    let n = cloud.len() as f64;
    out.iter_mut().for_each(|v| *v /= n);
    Ok(out)
}

/// Midpoint-rule velocity of a grid density:
/// `Σ_c ∇φ(x - y_c) 1_K(y_c - x) ρ_c vol_c` over cells whose centre can lie
/// in `K`, in ascending cell order.
pub fn velocity_from_density(
    x: &[f64],
    density: &GridDensity,
    sens: &SensitivitySpec,
    kernel: &KernelSpec,
) -> Result<Vec<f64>> {
    let region = sens.resolve_at(x)?;
    let mut out = vec![0.0; x.len()];
    velocity_from_density_into(x, density, &region, sens.global_radius(), kernel, &mut out);
    Ok(out)
}

pub(crate) fn velocity_from_density_into(
    x: &[f64],
    density: &GridDensity,
    region: &ResolvedRegion,
    radius: f64,
    kernel: &KernelSpec,
    out: &mut [f64],
) {
    let mesh = density.mesh();
    let d = mesh.dim();
    let values = density.values();
    let vol = mesh.cell_volume();
    let mut lo = [0usize; 8];
    let mut hi = [0usize; 8];
    for k in 0..d {
        let a = ((x[k] - radius - mesh.lo()[k]) / mesh.h()[k] - 0.5).floor();
        let b = ((x[k] + radius - mesh.lo()[k]) / mesh.h()[k] - 0.5).ceil();
        let n = mesh.cells()[k] as f64;
        lo[k] = a.clamp(0.0, n) as usize;
        hi[k] = (b.clamp(-1.0, n - 1.0) + 1.0) as usize;
        if lo[k] >= hi[k] {
            out.iter_mut().for_each(|v| *v = 0.0);
            return;
        }
    }
    out.iter_mut().for_each(|v| *v = 0.0);
    let mut idx = lo;
    let mut off = [0.0; 8];
    let mut neg = [0.0; 8];
    let mut g = [0.0; 8];
    loop {
        let flat = mesh.flat_index(&idx[..d]);
        let rho = values[flat];
        if rho != 0.0 {
            for k in 0..d {
                let yc = mesh.lo()[k] + (idx[k] as f64 + 0.5) * mesh.h()[k];
                off[k] = yc - x[k];
                neg[k] = x[k] - yc;
            }
            if region.contains(&off[..d]) {
                kernel.grad_into(&neg[..d], &mut g[..d]);
                let m = rho * vol;
                for k in 0..d {
                    out[k] += g[k] * m;
                }
            }
        }
        let mut k = 0;
        loop {
            if k == d {
                return;
            }
            idx[k] += 1;
            if idx[k] < hi[k] {
                break;
            }
            idx[k] = lo[k];
            k += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::DomainSpec;
    use crate::pde::{GridDensity, Mesh};
    use crate::sensitivity::{OrientationField, Region};
    use std::f64::consts::PI;

    fn sens_ball(r: f64) -> SensitivitySpec {
        SensitivitySpec::new(Region::Ball { radius: r }, OrientationField::Constant { value: vec![1.0, 0.0] }).unwrap()
    }

    fn cloud(points: &[[f64; 2]]) -> ParticleCloud {
        ParticleCloud::from_points(2, points.iter().flatten().copied().collect()).unwrap()
    }

    #[test]
    fn kernel_constants() {
        let g = KernelSpec::gaussian(1.0, 0.2).unwrap();
        assert!((g.sup_norm() - 5.0 * (-0.5f64).exp()).abs() < 1e-12);
        assert!((g.lipschitz() - 25.0).abs() < 1e-12);
        let m = KernelSpec::new(KernelKind::MorseGrad { c_a: 1.0, l_a: 0.5, c_r: 0.5, l_r: 0.1, softening: 0.05 }).unwrap();
        assert!(m.sup_norm() > 0.0);
        let p = KernelSpec::new(KernelKind::PolyTaper { amplitude: 2.0, support: 0.3 }).unwrap();
        assert_eq!(p.grad(&[0.4, 0.0]), vec![0.0, 0.0]);
        assert!(KernelSpec::gaussian(1.0, 0.0).is_err());
        let js = serde_json::to_string(&g).unwrap();
        assert!(js.contains("gaussian_grad"));
    }

    #[test]
    fn empirical_examples() {
        let k = KernelSpec::gaussian(1.0, 0.3).unwrap();
        let s = sens_ball(0.5);
        let x = [0.5, 0.5];
        let c = cloud(&[[0.6, 0.5]]);
        let v = velocity_empirical(&x, &c, &s, &k).unwrap();
        assert_eq!(v, k.grad(&[0.5 - 0.6, 0.0]));

        let far = cloud(&[[0.0, 0.0], [1.0, 1.0]]);
        assert_eq!(velocity_empirical(&x, &far, &s, &k).unwrap(), vec![0.0, 0.0]);

        let sym = cloud(&[[0.6, 0.55], [0.4, 0.45]]);
        let v = velocity_empirical(&x, &sym, &s, &k).unwrap();
        assert!(v.iter().all(|c| c.abs() < 1e-15), "{v:?}");

        let empty = ParticleCloud::from_points(2, vec![]);
        assert!(empty.is_err());
    }

    #[test]
    fn binned_requires_wide_bins() {
        let s = sens_ball(0.5);
        let c = cloud(&[[0.1, 0.1]]);
        assert!(matches!(BinnedCloud::new(&c, &s, 0.4), Err(Error::Config(_))));
    }

    #[test]
    fn binned_equals_naive_on_random_cloud() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let dom = DomainSpec::new_box(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let pts: Vec<f64> = (0..10_000).flat_map(|_| dom.sample_uniform(&mut rng)).collect();
        let c = ParticleCloud::from_points(2, pts).unwrap();
        let k = KernelSpec::gaussian(1.0, 0.1).unwrap();
        let s = SensitivitySpec::new(
            Region::Cone { radius: 0.1, half_angle: PI / 3.0 },
            OrientationField::Rotational { magnitude: 1.0, wavenumber: 3.0 },
        )
        .unwrap();
        let bins = BinnedCloud::new(&c, &s, 0.1).unwrap();
        for _ in 0..100 {
            let x = dom.sample_uniform(&mut rng);
            let a = velocity_empirical(&x, &c, &s, &k).unwrap();
            let b = velocity_empirical_binned(&x, &c, &bins, &s, &k).unwrap();
            assert_eq!(a, b);
        }
        // All particles in one bin.
        let cluster = cloud(&[[0.5, 0.5], [0.51, 0.5], [0.5, 0.52], [0.49, 0.49]]);
        let bins = BinnedCloud::new(&cluster, &s, 0.2).unwrap();
        for x in [[0.5, 0.5], [0.45, 0.5], [0.9, 0.9]] {
            assert_eq!(
                velocity_empirical(&x, &cluster, &s, &k).unwrap(),
                velocity_empirical_binned(&x, &cluster, &bins, &s, &k).unwrap()
            );
        }
    }

    #[test]
    fn density_examples() {
        let k = KernelSpec::gaussian(1.0, 0.2).unwrap();
        let s = sens_ball(0.3);
        let mesh = Mesh::new(DomainSpec::new_box(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap(), vec![20, 20]).unwrap();
        let uniform = GridDensity::uniform(mesh.clone());
        let v = velocity_from_density(&[0.5, 0.5], &uniform, &s, &k).unwrap();
        assert!(v.iter().all(|c| c.abs() < 1e-14), "{v:?}");

        let mut spike = GridDensity::zeros(mesh.clone());
        let c = mesh.flat_index(&[12, 10]);
        spike.values_mut()[c] = 1.0 / mesh.cell_volume();
        let yc = mesh.center(&[12, 10]);
        let x = [0.5, 0.5];
        let v = velocity_from_density(&x, &spike, &s, &k).unwrap();
        let expect = k.grad(&[x[0] - yc[0], x[1] - yc[1]]);
        assert!(dist(&v, &expect) < 1e-14);
    }
}
