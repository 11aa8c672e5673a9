//! Sensitivity regions `K(w(x))`, their generalized boundaries `Theta`,
//! sharp and mollified indicators, and Monte Carlo probes of the
//! regularity assumptions the mean-field analysis relies on.
//!
//! Four region families are provided:
//!
//! | kind           | region                                              |
//! |----------------|-----------------------------------------------------|
//! | `ball`         | closed ball of fixed radius `r`                     |
//! | `varying_ball` | ball of radius `r(|w|)`, bounded and Lipschitz      |
//! | `cone`         | vision cone of radius `r` and half-angle `theta`    |
//! | `varying_cone` | cone whose half-angle `theta(|w|)` opens to `pi`    |
//!
//! The generalized boundary of all regions is the topological boundary,
//! except for `varying_cone`, which adds the segment `R(w) = [a(w), b(w)]`
//! with `a = -r w/|w|` and `b = 2r(|w| - 1) w/|w|` whenever `|w|` lies in
//! `(1/2, 1)`.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config, invalid, Error, Result};
use crate::linalg::{dist_to_segment, dot, norm};
use crate::quadrature::gauss_legendre;

/// Shape family of a sensitivity region.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Region {
    Ball {
        radius: f64,
    },
    /// Radius `r_max - (r_max - r_min) tanh(|w| / scale)`.
    VaryingBall {
        r_min: f64,
        r_max: f64,
        scale: f64,
    },
    Cone {
        radius: f64,
        half_angle: f64,
    },
    /// Half-angle `pi` for `|w| <= 1`, then
    /// `pi - (pi - limit_angle) exp(-steepness / (|w| - 1))`.
    VaryingCone {
        radius: f64,
        limit_angle: f64,
        #[serde(default = "default_steepness")]
        steepness: f64,
    },
}

fn default_steepness() -> f64 {
    0.5
}

/// Built-in Lipschitz orientation fields `w(x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OrientationField {
    Constant {
        value: Vec<f64>,
    },
    /// `magnitude (cos(k x_1), sin(k x_1), 0, ...)`: a unit direction that
    /// turns as one moves along the first axis.
    Rotational {
        magnitude: f64,
        wavenumber: f64,
    },
    /// `magnitude (x - center) / max(|x - center|, core)`.
    Radial {
        center: Vec<f64>,
        magnitude: f64,
        core: f64,
    },
}

impl OrientationField {
    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.eval_into(x, &mut out);
        out
    }

    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        match self {
            OrientationField::Constant { value } => out.copy_from_slice(value),
            OrientationField::Rotational { magnitude, wavenumber } => {
                out.iter_mut().for_each(|v| *v = 0.0);
                let phase = wavenumber * x[0];
                out[0] = magnitude * phase.cos();
                out[1] = magnitude * phase.sin();
            }
            OrientationField::Radial { center, magnitude, core } => {
                let mut r2 = 0.0;
                for ((o, xi), c) in out.iter_mut().zip(x).zip(center) {
                    *o = xi - c;
                    r2 += *o * *o;
                }
                let s = magnitude / r2.sqrt().max(*core);
                out.iter_mut().for_each(|v| *v *= s);
            }
        }
    }

    /// Lipschitz constant of `x -> w(x)`.
    pub fn lipschitz(&self) -> f64 {
        match self {
            OrientationField::Constant { .. } => 0.0,
            OrientationField::Rotational { magnitude, wavenumber } => (magnitude * wavenumber).abs(),
            OrientationField::Radial { magnitude, core, .. } => magnitude.abs() / core,
        }
    }

    /// `(inf |w|, sup |w|)` over the whole space.
    pub fn magnitude_bounds(&self) -> (f64, f64) {
        match self {
            OrientationField::Constant { value } => (norm(value), norm(value)),
            OrientationField::Rotational { magnitude, .. } => (magnitude.abs(), magnitude.abs()),
            OrientationField::Radial { magnitude, .. } => (0.0, magnitude.abs()),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, OrientationField::Constant { .. })
    }

    fn validate(&self, dim: Option<usize>) -> Result<()> {
        match self {
            OrientationField::Constant { value } => {
                if value.is_empty() || value.iter().any(|v| !v.is_finite()) {
                    return Err(config("constant orientation must be a finite vector"));
                }
                if let Some(d) = dim {
                    if value.len() != d {
                        return Err(config("orientation dimension mismatch"));
                    }
                }
            }
            OrientationField::Rotational { magnitude, wavenumber } => {
                if !magnitude.is_finite() || !wavenumber.is_finite() {
                    return Err(config("rotational field parameters must be finite"));
                }
                if dim.is_some_and(|d| d < 2) {
                    return Err(config("rotational field needs dimension >= 2"));
                }
            }
            OrientationField::Radial { center, magnitude, core } => {
                if !(*core > 0.0) || !magnitude.is_finite() || center.iter().any(|c| !c.is_finite()) {
                    return Err(config("radial field needs finite magnitude, center and core > 0"));
                }
                if dim.is_some_and(|d| d != center.len()) {
                    return Err(config("orientation dimension mismatch"));
                }
            }
        }
        Ok(())
    }
}

/// Set-valued map `x -> K(w(x))` together with its orientation field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSensitivity", into = "RawSensitivity")]
pub struct SensitivitySpec {
    region: Region,
    orientation: OrientationField,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct RawSensitivity {
    #[serde(flatten)]
    region: Region,
    orientation: OrientationField,
}

impl TryFrom<RawSensitivity> for SensitivitySpec {
    type Error = Error;
    fn try_from(raw: RawSensitivity) -> Result<Self> {
        SensitivitySpec::new(raw.region, raw.orientation)
    }
}

impl From<SensitivitySpec> for RawSensitivity {
    fn from(s: SensitivitySpec) -> Self {
        RawSensitivity {
            region: s.region,
            orientation: s.orientation,
        }
    }
}

impl SensitivitySpec {
    pub fn new(region: Region, orientation: OrientationField) -> Result<Self> {
        let pos = |v: f64, what: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(config(format!("{what} must be positive and finite, got {v}")))
            }
        };
        let mut dim = None;
        if let OrientationField::Constant { value } = &orientation {
            dim = Some(value.len());
        }
        if let OrientationField::Radial { center, .. } = &orientation {
            dim = Some(center.len());
        }
        orientation.validate(dim)?;
        match &region {
            Region::Ball { radius } => pos(*radius, "ball radius")?,
            Region::VaryingBall { r_min, r_max, scale } => {
                pos(*r_min, "r_min")?;
                pos(*scale, "scale")?;
                if !(r_max >= r_min && r_max.is_finite()) {
                    return Err(config("varying ball needs r_min <= r_max"));
                }
            }
            Region::Cone { radius, half_angle } => {
                pos(*radius, "cone radius")?;
                if !(*half_angle > 0.0 && *half_angle < PI) {
                    return Err(config(format!("cone half-angle must lie in (0, pi), got {half_angle}")));
                }
                if orientation.magnitude_bounds().0 <= 0.0 {
                    return Err(config("a fixed cone needs |w| bounded away from zero"));
                }
            }
            Region::VaryingCone { radius, limit_angle, steepness } => {
                pos(*radius, "cone radius")?;
                pos(*steepness, "steepness")?;
                if !(*limit_angle > 0.0 && *limit_angle < PI) {
                    return Err(config("limit angle must lie in (0, pi)"));
                }
            }
        }
        if matches!(region, Region::Cone { .. } | Region::VaryingCone { .. })
            && dim.is_some_and(|d| d != 2 && d != 3)
        {
            return Err(config("vision cones are defined in dimension 2 or 3"));
        }
        Ok(SensitivitySpec { region, orientation })
    }

    /// Whether this spec can act on points of dimension `d`.
    pub fn compatible_dim(&self, d: usize) -> bool {
        let field_ok = match &self.orientation {
            OrientationField::Constant { value } => value.len() == d,
            OrientationField::Rotational { .. } => d >= 2,
            OrientationField::Radial { center, .. } => center.len() == d,
        };
        let cone = matches!(self.region, Region::Cone { .. } | Region::VaryingCone { .. });
        field_ok && (!cone || d == 2 || d == 3)
    }

    pub fn region(&self) -> &Region {
        &self.region
    }

    pub fn orientation(&self) -> &OrientationField {
        &self.orientation
    }

    /// Radius of a ball containing every `K(w)`.
    pub fn global_radius(&self) -> f64 {
        match self.region {
            Region::Ball { radius } | Region::Cone { radius, .. } | Region::VaryingCone { radius, .. } => {
                radius
            }
            Region::VaryingBall { r_max, .. } => r_max,
        }
    }

    /// Whether `K(w)` depends on `w` at all.
    pub fn depends_on_orientation(&self) -> bool {
        !matches!(self.region, Region::Ball { .. })
    }

    /// Whether `K(w(x))` is the same set for every `x`.
    pub fn is_translation_invariant(&self) -> bool {
        !self.depends_on_orientation() || self.orientation.is_constant()
    }

    /// Half-angle profile of the varying cone.
    pub fn angle_profile(limit_angle: f64, steepness: f64, z: f64) -> f64 {
        if z <= 1.0 {
            PI
        } else {
            PI - (PI - limit_angle) * (-steepness / (z - 1.0)).exp()
        }
    }

    /// Radius profile of the varying ball.
    pub fn radius_profile(r_min: f64, r_max: f64, scale: f64, z: f64) -> f64 {
        r_max - (r_max - r_min) * (z / scale).tanh()
    }

    /// Evaluates `K(w)` for a given orientation value.
    pub fn resolve(&self, w: &[f64]) -> Result<ResolvedRegion> {
        let wn = norm(w);
        if !wn.is_finite() {
            return Err(invalid("orientation has non-finite components"));
        }
        let cone = |radius: f64, half_angle: f64, segment: Option<(Vec<f64>, Vec<f64>)>| {
            if wn == 0.0 {
                return Err(invalid("zero orientation: cone direction undefined"));
            }
            let axis: Vec<f64> = w.iter().map(|v| v / wn).collect();
            Ok(ResolvedRegion {
                radius,
                axis: (half_angle < PI).then_some(axis),
                half_angle,
                cos_half: half_angle.cos(),
                segment,
            })
        };
        match self.region {
            Region::Ball { radius } => Ok(ResolvedRegion::ball(radius)),
            Region::VaryingBall { r_min, r_max, scale } => {
                Ok(ResolvedRegion::ball(Self::radius_profile(r_min, r_max, scale, wn)))
            }
            Region::Cone { radius, half_angle } => cone(radius, half_angle, None),
            Region::VaryingCone { radius, limit_angle, steepness } => {
                let theta = Self::angle_profile(limit_angle, steepness, wn);
                let segment = (wn > 0.5 && wn < 1.0).then(|| {
                    let a: Vec<f64> = w.iter().map(|v| -radius * v / wn).collect();
                    let b: Vec<f64> = w.iter().map(|v| 2.0 * radius * (wn - 1.0) * v / wn).collect();
                    (a, b)
                });
                cone(radius, theta, segment)
            }
        }
    }

    /// `K(w(x))` at a position.
    pub fn resolve_at(&self, x: &[f64]) -> Result<ResolvedRegion> {
        self.resolve(&self.orientation.eval(x))
    }

    /// `1_{K(w)}(offset)`; closed sets, so boundary points count as inside.
    pub fn indicator(&self, w: &[f64], offset: &[f64]) -> Result<bool> {
        Ok(self.resolve(w)?.contains(offset))
    }

    /// `1` iff `dist(offset, Theta(w)) <= u`.
    pub fn theta_enlarged_indicator(&self, w: &[f64], offset: &[f64], u: f64) -> Result<bool> {
        if !(u >= 0.0) {
            return Err(Error::Precondition(format!("enlargement radius must be >= 0, got {u}")));
        }
        Ok(self.resolve(w)?.theta_distance(offset) <= u)
    }

    /// Smoothed indicator `1^{eps,eta}`: the sharp indicator convolved with
    /// a bump of width `eps` in the offset and, when the region depends on
    /// the orientation, a bump of width `eta` in `w`.
    pub fn mollified_indicator(&self, params: &MollificationParams, w: &[f64], offset: &[f64]) -> Result<f64> {
        Mollifier::new(params, offset.len())?.eval(self, w, offset)
    }

    /// Monte Carlo estimate of `|K(w1) Δ K(w2)|` over the bounding ball.
    pub fn symmetric_difference_measure<R: Rng + ?Sized>(
        &self,
        w1: &[f64],
        w2: &[f64],
        samples: usize,
        rng: &mut R,
    ) -> Result<(f64, f64)> {
        if samples < 1000 {
            return Err(Error::Precondition("symmetric difference needs >= 1000 samples".into()));
        }
        let k1 = self.resolve(w1)?;
        let k2 = self.resolve(w2)?;
        if w1 == w2 {
            return Ok((0.0, 0.0));
        }
        let r = self.global_radius();
        let d = w1.len();
        let hits = (0..samples)
            .filter(|_| {
                let p = sample_in_ball(d, r, rng);
                k1.contains(&p) != k2.contains(&p)
            })
            .count();
        Ok(bernoulli_measure(hits, samples, ball_volume(d, r)))
    }

    /// Monte Carlo estimate of `|Theta(w)^{eps,+}|`.
    pub fn theta_enlargement_measure<R: Rng + ?Sized>(
        &self,
        w: &[f64],
        eps: f64,
        samples: usize,
        rng: &mut R,
    ) -> Result<(f64, f64)> {
        let k = self.resolve(w)?;
        let half = self.global_radius() + eps;
        let d = w.len();
        let mut p = vec![0.0; d];
        let hits = (0..samples)
            .filter(|_| {
                p.iter_mut().for_each(|v| *v = rng.random_range(-half..half));
                k.theta_distance(&p) <= eps
            })
            .count();
        Ok(bernoulli_measure(hits, samples, (2.0 * half).powi(d as i32)))
    }
}

/// Rope inequality for one fixed set `K`:
/// `|1_K(y1 - x1) - 1_K(y2 - x2)| <= 1_{d^{2|x1-x2|}K}(y1 - x1) + 1_{d^{2|y1-y2|}K}(y1 - x1)`
/// where `d^e K` is the closed `e`-neighbourhood of the boundary.
pub fn rope_inequality_check(k: &ResolvedRegion, x1: &[f64], y1: &[f64], x2: &[f64], y2: &[f64]) -> bool {
    let o1: Vec<f64> = y1.iter().zip(x1).map(|(a, b)| a - b).collect();
    let o2: Vec<f64> = y2.iter().zip(x2).map(|(a, b)| a - b).collect();
    let lhs = (k.contains(&o1) as i32 - k.contains(&o2) as i32).abs();
    let bd = k.boundary_distance(&o1);
    let dx = crate::linalg::dist(x1, x2);
    let dy = crate::linalg::dist(y1, y2);
    let rhs = (bd <= 2.0 * dx) as i32 + (bd <= 2.0 * dy) as i32;
    lhs <= rhs
}

/// `K(w)` for one fixed orientation value.
#[derive(Clone, Debug, PartialEq)]
pub struct ResolvedRegion {
    radius: f64,
    /// Unit cone axis; `None` for balls and fully open cones.
    axis: Option<Vec<f64>>,
    half_angle: f64,
    cos_half: f64,
    segment: Option<(Vec<f64>, Vec<f64>)>,
}

impl ResolvedRegion {
    pub fn ball(radius: f64) -> Self {
        ResolvedRegion {
            radius,
            axis: None,
            half_angle: PI,
            cos_half: -1.0,
            segment: None,
        }
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn half_angle(&self) -> f64 {
        self.half_angle
    }

    pub fn axis(&self) -> Option<&[f64]> {
        self.axis.as_deref()
    }

    /// Extra generalized-boundary segment, when present.
    pub fn segment(&self) -> Option<(&[f64], &[f64])> {
        self.segment.as_ref().map(|(a, b)| (a.as_slice(), b.as_slice()))
    }

    #[inline]
    pub fn contains(&self, o: &[f64]) -> bool {
        let r2 = dot(o, o);
        if r2 > self.radius * self.radius {
            return false;
        }
        match &self.axis {
            None => true,
            Some(a) => dot(o, a) >= r2.sqrt() * self.cos_half,
        }
    }

    /// Distance from `o` to the topological boundary `∂K`.
    pub fn boundary_distance(&self, o: &[f64]) -> f64 {
        let r = norm(o);
        match &self.axis {
            None => (r - self.radius).abs(),
            Some(axis) => {
                // Meridian-plane coordinates (along, across >= 0).
                let a = dot(o, axis);
                let b = (r * r - a * a).max(0.0).sqrt();
                let (s, c) = self.half_angle.sin_cos();
                let rim = [self.radius * c, self.radius * s];
                let polar = b.atan2(a);
                let d_arc = if polar <= self.half_angle {
                    (r - self.radius).abs()
                } else {
                    ((a - rim[0]).powi(2) + (b - rim[1]).powi(2)).sqrt()
                };
                let d_side = dist_to_segment(&[a, b], &[0.0, 0.0], &rim);
                d_arc.min(d_side)
            }
        }
    }

    /// Distance from `o` to the generalized boundary `Theta`.
    pub fn theta_distance(&self, o: &[f64]) -> f64 {
        let d = self.boundary_distance(o);
        match &self.segment {
            Some((a, b)) => d.min(dist_to_segment(o, a, b)),
            None => d,
        }
    }
}

/// Widths and quadrature resolution of the mollified indicator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MollificationParams {
    pub eps: f64,
    pub eta: f64,
    #[serde(default = "default_nodes")]
    pub nodes: usize,
}

fn default_nodes() -> usize {
    9
}

impl MollificationParams {
    pub fn new(eps: f64, eta: f64) -> Self {
        MollificationParams { eps, eta, nodes: default_nodes() }
    }
}

/// Precomputed tensor-product quadrature for the compact bump
/// `exp(-1 / (1 - |y|^2))` on the unit ball, scaled to each width.
#[derive(Clone, Debug)]
pub struct Mollifier {
    params: MollificationParams,
    /// Unit-ball nodes (flattened, `dim` per node) with normalized weights.
    nodes: Vec<f64>,
    weights: Vec<f64>,
    dim: usize,
}

impl Mollifier {
    pub fn new(params: &MollificationParams, dim: usize) -> Result<Self> {
        if !(params.eps > 0.0) || !(params.eta > 0.0) || params.nodes == 0 {
            return Err(Error::Precondition("mollification widths must be positive".into()));
        }
        let (x, w) = gauss_legendre(params.nodes);
        let q = params.nodes;
        let total = q.pow(dim as u32);
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        let mut idx = vec![0usize; dim];
        for _ in 0..total {
            let y: Vec<f64> = idx.iter().map(|&i| x[i]).collect();
            let r2 = dot(&y, &y);
            if r2 < 1.0 {
                let wt = idx.iter().map(|&i| w[i]).product::<f64>() * (-1.0 / (1.0 - r2)).exp();
                nodes.extend_from_slice(&y);
                weights.push(wt);
            }
            for k in 0..dim {
                idx[k] += 1;
                if idx[k] < q {
                    break;
                }
                idx[k] = 0;
            }
        }
        let sum: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|v| *v /= sum);
        Ok(Mollifier { params: *params, nodes, weights, dim })
    }

    pub fn eval(&self, spec: &SensitivitySpec, w: &[f64], offset: &[f64]) -> Result<f64> {
        let d = self.dim;
        let eps = self.params.eps;
        let mut p = vec![0.0; d];
        let inner = |k: &ResolvedRegion, p: &mut [f64]| -> f64 {
            let mut acc = 0.0;
            for (y, wt) in self.nodes.chunks_exact(d).zip(&self.weights) {
                for i in 0..d {
                    p[i] = offset[i] - eps * y[i];
                }
                if k.contains(p) {
                    acc += wt;
                }
            }
            acc
        };
        if !spec.depends_on_orientation() {
            return Ok(inner(&spec.resolve(w)?, &mut p).min(1.0));
        }
        let eta = self.params.eta;
        let mut wp = vec![0.0; d];
        let mut total = 0.0;
        for (y, wt) in self.nodes.chunks_exact(d).zip(&self.weights) {
            for i in 0..d {
                wp[i] = w[i] - eta * y[i];
            }
            total += wt * inner(&spec.resolve(&wp)?, &mut p);
        }
        Ok(total.clamp(0.0, 1.0))
    }
}

/// Volume of the `d`-ball of radius `r`.
pub fn ball_volume(d: usize, r: f64) -> f64 {
    let h = d as f64 / 2.0;
    PI.powf(h) / statrs::function::gamma::gamma(h + 1.0) * r.powi(d as i32)
}

/// Uniform point in the centered `d`-ball of radius `r`.
pub fn sample_in_ball<R: Rng + ?Sized>(d: usize, r: f64, rng: &mut R) -> Vec<f64> {
    let mut p = vec![0.0; d];
    loop {
        p.iter_mut().for_each(|v| *v = rng.random_range(-r..r));
        if dot(&p, &p) <= r * r {
            return p;
        }
    }
}

fn bernoulli_measure(hits: usize, n: usize, volume: f64) -> (f64, f64) {
    let f = hits as f64 / n as f64;
    (volume * f, volume * (f * (1.0 - f) / n as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn constant(w: [f64; 2]) -> OrientationField {
        OrientationField::Constant { value: w.to_vec() }
    }

    fn ball(r: f64) -> SensitivitySpec {
        SensitivitySpec::new(Region::Ball { radius: r }, constant([1.0, 0.0])).unwrap()
    }

    fn cone(r: f64, th: f64) -> SensitivitySpec {
        SensitivitySpec::new(Region::Cone { radius: r, half_angle: th }, constant([1.0, 0.0])).unwrap()
    }

    fn vcone() -> SensitivitySpec {
        SensitivitySpec::new(
            Region::VaryingCone { radius: 1.0, limit_angle: PI / 4.0, steepness: 0.5 },
            constant([1.0, 0.0]),
        )
        .unwrap()
    }

    #[test]
    fn indicator_examples() {
        assert!(ball(1.0).indicator(&[0.3, 0.1], &[0.5, 0.0]).unwrap());
        assert!(!cone(1.0, PI / 3.0).indicator(&[1.0, 0.0], &[0.0, 0.5]).unwrap());
        assert!(vcone().indicator(&[0.7, 0.0], &[-0.3, 0.1]).unwrap());
        assert!(matches!(
            cone(1.0, PI / 3.0).indicator(&[0.0, 0.0], &[0.1, 0.0]),
            Err(Error::InvalidInput(_))
        ));
        // Boundary points resolve to inside.
        assert!(ball(1.0).indicator(&[1.0, 0.0], &[1.0, 0.0]).unwrap());
        assert!(cone(1.0, PI / 4.0).indicator(&[1.0, 0.0], &[0.0, 0.0]).unwrap());
    }

    #[test]
    fn theta_enlarged_examples() {
        let b = ball(1.0);
        assert!(b.theta_enlarged_indicator(&[1.0, 0.0], &[1.0, 0.0], 0.0).unwrap());
        assert!(!b.theta_enlarged_indicator(&[1.0, 0.0], &[0.0, 0.0], 0.5).unwrap());
    }

    #[test]
    fn varying_cone_segment_window() {
        let s = vcone();
        assert!(s.resolve(&[0.4, 0.0]).unwrap().segment().is_none());
        assert!(s.resolve(&[1.2, 0.0]).unwrap().segment().is_none());
        let k = s.resolve(&[0.75, 0.0]).unwrap();
        let (a, b) = k.segment().unwrap();
        assert_eq!(a, &[-1.0, 0.0]);
        assert!((b[0] + 0.5).abs() < 1e-15 && b[1] == 0.0);
        // Full ball: Theta is the circle plus the segment.
        assert!((k.theta_distance(&[-0.7, 0.0]) - 0.0).abs() < 1e-15);
        assert!((k.theta_distance(&[-0.2, 0.0]) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn cone_boundary_distance_matches_dense_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for spec in [cone(1.0, PI / 3.0), cone(0.8, 2.0)] {
            let k = spec.resolve(&[0.6, 0.8]).unwrap();
            let th = k.half_angle();
            let axis = k.axis().unwrap().to_vec();
            let phi0 = axis[1].atan2(axis[0]);
            // Dense boundary sample: the arc and both sides.
            let mut pts = Vec::new();
            let m = 20_000;
            for i in 0..=m {
                let t = i as f64 / m as f64;
                let phi = phi0 - th + 2.0 * th * t;
                pts.push([k.radius() * phi.cos(), k.radius() * phi.sin()]);
                for s in [-1.0, 1.0] {
                    let phi = phi0 + s * th;
                    pts.push([t * k.radius() * phi.cos(), t * k.radius() * phi.sin()]);
                }
            }
            for _ in 0..1000 {
                let o = [rng.random_range(-1.3..1.3), rng.random_range(-1.3..1.3)];
                let brute = pts
                    .iter()
                    .map(|p| ((p[0] - o[0]).powi(2) + (p[1] - o[1]).powi(2)).sqrt())
                    .fold(f64::INFINITY, f64::min);
                let exact = k.theta_distance(&o);
                assert!(exact <= brute + 1e-12 && brute - exact < 1e-3, "o={o:?} {exact} {brute}");
                // Enlarged indicator agrees with the oracle outside a 1e-3 band.
                for u in [0.05, 0.2, 0.5] {
                    if (brute - u).abs() > 1e-3 {
                        assert_eq!(exact <= u, brute <= u);
                    }
                }
            }
        }
    }

    #[test]
    fn cone_3d_distance_reduces_to_meridian() {
        let spec = SensitivitySpec::new(
            Region::Cone { radius: 1.0, half_angle: PI / 4.0 },
            OrientationField::Constant { value: vec![0.0, 0.0, 2.0] },
        )
        .unwrap();
        let k = spec.resolve(&[0.0, 0.0, 2.0]).unwrap();
        // On the lateral surface.
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!(k.boundary_distance(&[0.5 * s, 0.0, 0.5 * s]) < 1e-15);
        // On the axis, halfway out: closest is the side at distance 0.5 sin(pi/4).
        assert!((k.boundary_distance(&[0.0, 0.0, 0.5]) - 0.5 * s).abs() < 1e-12);
        assert!(k.contains(&[0.0, 0.1, 0.5]));
        assert!(!k.contains(&[0.0, 0.6, 0.5]));
    }

    #[test]
    fn mollified_examples() {
        let p = MollificationParams::new(0.01, 0.01);
        let b = ball(1.0);
        assert_eq!(b.mollified_indicator(&p, &[1.0, 0.0], &[0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(b.mollified_indicator(&p, &[1.0, 0.0], &[2.0, 0.0]).unwrap(), 0.0);
        let mid = b.mollified_indicator(&p, &[1.0, 0.0], &[1.0, 0.0]).unwrap();
        assert!(mid > 0.2 && mid < 0.8, "{mid}");
        let c = cone(1.0, PI / 4.0);
        let v = c.mollified_indicator(&p, &[1.0, 0.0], &[0.5, 0.0]).unwrap();
        assert_eq!(v, 1.0);
    }

    #[test]
    fn mollified_converges_to_sharp_away_from_boundary() {
        let c = cone(1.0, PI / 4.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let o = [rng.random_range(-1.2..1.2), rng.random_range(-1.2..1.2)];
            let k = c.resolve(&[1.0, 0.0]).unwrap();
            let bd = k.boundary_distance(&o);
            let sharp = k.contains(&o) as i32 as f64;
            let mut prev = f64::INFINITY;
            for eps in [0.2, 0.1, 0.05, 0.02] {
                let p = MollificationParams::new(eps, eps);
                let v = c.mollified_indicator(&p, &[1.0, 0.0], &o).unwrap();
                assert!((0.0..=1.0).contains(&v));
                let err = (v - sharp).abs();
                if bd > 2.0 * eps {
                    assert!(err < 1e-12, "o={o:?} eps={eps} v={v}");
                }
                if bd > 0.25 {
                    assert!(err <= prev + 1e-12);
                }
                prev = err;
            }
        }
    }

    #[test]
    fn symmetric_difference_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let c = cone(1.0, PI / 4.0);
        assert_eq!(c.symmetric_difference_measure(&[1.0, 0.0], &[1.0, 0.0], 1000, &mut rng).unwrap(), (0.0, 0.0));
        let b = ball(1.0);
        assert_eq!(b.symmetric_difference_measure(&[1.0, 0.0], &[0.0, 1.0], 5000, &mut rng).unwrap().0, 0.0);
        assert!(c.symmetric_difference_measure(&[1.0, 0.0], &[0.0, 1.0], 10, &mut rng).is_err());

        // Two thin wedges of angle 0.1: dense-grid oracle for the area.
        let w2 = [0.1f64.cos(), 0.1f64.sin()];
        let k1 = c.resolve(&[1.0, 0.0]).unwrap();
        let k2 = c.resolve(&w2).unwrap();
        let m = 2000;
        let h = 2.0 / m as f64;
        let mut cells = 0usize;
        for i in 0..m {
            for j in 0..m {
                let p = [-1.0 + (i as f64 + 0.5) * h, -1.0 + (j as f64 + 0.5) * h];
                if k1.contains(&p) != k2.contains(&p) {
                    cells += 1;
                }
            }
        }
        let grid_area = cells as f64 * h * h;
        assert!((grid_area - 0.1).abs() < 2e-3, "{grid_area}");
        let (est, se) = c.symmetric_difference_measure(&[1.0, 0.0], &w2, 200_000, &mut rng).unwrap();
        assert!((est - grid_area).abs() < 3.0 * se, "{est} ± {se} vs {grid_area}");
    }

    #[test]
    fn rope_examples() {
        let k = ball(1.0).resolve(&[1.0, 0.0]).unwrap();
        let z = [0.0, 0.0];
        assert!(rope_inequality_check(&k, &z, &[0.3, 0.2], &z, &[0.3, 0.2]));
        assert!(rope_inequality_check(&k, &z, &[0.99, 0.0], &z, &[1.01, 0.0]));
    }

    #[test]
    fn config_validation() {
        assert!(SensitivitySpec::new(Region::Cone { radius: 1.0, half_angle: PI }, constant([1.0, 0.0])).is_err());
        assert!(SensitivitySpec::new(
            Region::Cone { radius: 1.0, half_angle: 1.0 },
            OrientationField::Radial { center: vec![0.0, 0.0], magnitude: 1.0, core: 0.1 }
        )
        .is_err());
        let js = r#"{"kind":"cone","radius":0.3,"half_angle":1.0,"orientation":{"kind":"rotational","magnitude":1.0,"wavenumber":2.0}}"#;
        let s: SensitivitySpec = serde_json::from_str(js).unwrap();
        assert_eq!(s.global_radius(), 0.3);
        assert!(!s.is_translation_invariant());
    }
}
