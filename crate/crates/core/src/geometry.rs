//! Convex domains, Euclidean projection onto their closure, outward normals
//! and the projected Euler step used to discretize the Skorokhod problem.
//!
//! A reflected diffusion confined to a convex set `O` is advanced as
//!
//! ```text
//! pre   = x + drift dt + sqrt(2 sigma dt) xi
//! x_new = P_O(pre)
//! k     = pre - x_new
//! ```
//!
//! where `P_O` is the Euclidean projection onto the closure of `O`. The
//! reflection increment `k` lies in the normal cone at `x_new`, so the
//! variational inequality `<k, x_new - w> >= 0` holds for every `w` in the
//! closed domain.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{all_finite, dist, dot, norm, solve};

/// Boundary-membership tolerance in units of the domain diameter.
pub const BOUNDARY_TOL: f64 = 1e-9;

/// Coordinate tolerance of the alternating-projection solver.
pub const DYKSTRA_TOL: f64 = 1e-12;

/// Iteration cap (full sweeps) of the alternating-projection solver.
pub const DYKSTRA_MAX_SWEEPS: usize = 10_000;

/// A closed halfspace `{x : <normal, x> <= offset}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Halfspace {
    pub normal: Vec<f64>,
    pub offset: f64,
}

/// The serialized shape of a domain, tagged by `kind`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Shape {
    Ball { center: Vec<f64>, radius: f64 },
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Halfspaces { faces: Vec<Halfspace> },
}

/// A validated bounded convex domain with nonempty interior.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Shape", into = "Shape")]
pub struct DomainSpec {
    shape: Shape,
    dim: usize,
    diameter: f64,
    bbox_lo: Vec<f64>,
    bbox_hi: Vec<f64>,
    interior: Vec<f64>,
}

impl TryFrom<Shape> for DomainSpec {
    type Error = Error;

    fn try_from(shape: Shape) -> Result<Self> {
        match shape {
            Shape::Ball { center, radius } => DomainSpec::ball(center, radius),
            Shape::Box { lo, hi } => DomainSpec::new_box(lo, hi),
            Shape::Halfspaces { faces } => DomainSpec::halfspaces(faces),
        }
    }
}

impl From<DomainSpec> for Shape {
    fn from(d: DomainSpec) -> Shape {
        d.shape
    }
}

impl DomainSpec {
    pub fn ball(center: Vec<f64>, radius: f64) -> Result<Self> {
        if center.is_empty() || !all_finite(&center) {
            return Err(invalid("ball center must be a nonempty finite point"));
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(invalid(format!("ball radius must be positive, got {radius}")));
        }
        let dim = center.len();
        Ok(DomainSpec {
            dim,
            diameter: 2.0 * radius,
            bbox_lo: center.iter().map(|c| c - radius).collect(),
            bbox_hi: center.iter().map(|c| c + radius).collect(),
            interior: center.clone(),
            shape: Shape::Ball { center, radius },
        })
    }

    #[doc(alias = "box")]
    pub fn new_box(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.is_empty() || lo.len() != hi.len() {
            return Err(invalid("box corners must be nonempty and of equal dimension"));
        }
        if !all_finite(&lo) || !all_finite(&hi) {
            return Err(invalid("box corners must be finite"));
        }
        if lo.iter().zip(&hi).any(|(a, b)| a >= b) {
            return Err(invalid("box requires lo < hi componentwise"));
        }
        let dim = lo.len();
        Ok(DomainSpec {
            dim,
            diameter: dist(&lo, &hi),
            bbox_lo: lo.clone(),
            bbox_hi: hi.clone(),
            interior: lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect(),
            shape: Shape::Box { lo, hi },
        })
    }

    /// Intersection of halfspaces. Normals are normalized; the set is
    /// checked for boundedness by a sampled ray test and for a nonempty
    /// interior through its vertex set.
    pub fn halfspaces(faces: Vec<Halfspace>) -> Result<Self> {
        let dim = faces.first().map(|f| f.normal.len()).unwrap_or(0);
        if dim == 0 {
            return Err(invalid("halfspace intersection needs at least one face"));
        }
        let mut unit = Vec::with_capacity(faces.len());
        for f in &faces {
            if f.normal.len() != dim || !all_finite(&f.normal) || !f.offset.is_finite() {
                return Err(invalid("halfspace normals must be finite and share one dimension"));
            }
            let n = norm(&f.normal);
            if n == 0.0 {
                return Err(invalid("halfspace normal must be nonzero"));
            }
            unit.push(Halfspace {
                normal: f.normal.iter().map(|x| x / n).collect(),
                offset: f.offset / n,
            });
        }
        check_bounded(&unit, dim)?;
        let vertices = polytope_vertices(&unit, dim);
        if vertices.len() < dim + 1 {
            return Err(invalid("halfspace intersection is empty or has no interior"));
        }
        let mut interior = vec![0.0; dim];
        for v in &vertices {
            for (acc, x) in interior.iter_mut().zip(v) {
                *acc += x / vertices.len() as f64;
            }
        }
        let mut diameter: f64 = 0.0;
        for (i, a) in vertices.iter().enumerate() {
            for b in &vertices[i + 1..] {
                diameter = diameter.max(dist(a, b));
            }
        }
        let slack = unit
            .iter()
            .map(|f| f.offset - dot(&f.normal, &interior))
            .fold(f64::INFINITY, f64::min);
        if !(slack > 1e-9 * diameter.max(f64::MIN_POSITIVE)) {
            return Err(invalid("halfspace intersection has empty interior"));
        }
        let mut bbox_lo = vec![f64::INFINITY; dim];
        let mut bbox_hi = vec![f64::NEG_INFINITY; dim];
        for v in &vertices {
            for k in 0..dim {
                bbox_lo[k] = bbox_lo[k].min(v[k]);
                bbox_hi[k] = bbox_hi[k].max(v[k]);
            }
        }
        Ok(DomainSpec {
            shape: Shape::Halfspaces { faces: unit },
            dim,
            diameter,
            bbox_lo,
            bbox_hi,
            interior,
        })
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn diameter(&self) -> f64 {
        self.diameter
    }

    /// Axis-aligned bounding box `(lo, hi)`.
    pub fn bounding_box(&self) -> (&[f64], &[f64]) {
        (&self.bbox_lo, &self.bbox_hi)
    }

    /// A point strictly inside the domain.
    pub fn interior_point(&self) -> &[f64] {
        &self.interior
    }

    /// Absolute boundary tolerance: `BOUNDARY_TOL * diameter`.
    pub fn tolerance(&self) -> f64 {
        BOUNDARY_TOL * self.diameter
    }

    /// Exact membership in the closed domain, no tolerance.
    pub fn contains(&self, x: &[f64]) -> bool {
        match &self.shape {
            Shape::Ball { center, radius } => {
                x.iter().zip(center).map(|(a, c)| (a - c) * (a - c)).sum::<f64>() <= radius * radius
            }
            Shape::Box { lo, hi } => x
                .iter()
                .zip(lo.iter().zip(hi))
                .all(|(v, (l, h))| *l <= *v && *v <= *h),
            Shape::Halfspaces { faces } => faces.iter().all(|f| dot(&f.normal, x) <= f.offset),
        }
    }

    /// Membership in the closed domain up to [`DomainSpec::tolerance`].
    pub fn contains_tol(&self, x: &[f64]) -> bool {
        self.signed_distance(x) <= self.tolerance()
    }

    /// Signed distance to the boundary: negative inside, positive outside.
    pub fn signed_distance(&self, x: &[f64]) -> f64 {
        match &self.shape {
            Shape::Ball { center, radius } => dist(x, center) - radius,
            _ if !self.contains(x) => {
                let mut p = vec![0.0; self.dim];
                self.project_into(x, &mut p);
                dist(x, &p)
            }
            Shape::Box { lo, hi } => -x
                .iter()
                .zip(lo.iter().zip(hi))
                .map(|(v, (l, h))| (v - l).min(h - v))
                .fold(f64::INFINITY, f64::min),
            Shape::Halfspaces { faces } => -faces
                .iter()
                .map(|f| f.offset - dot(&f.normal, x))
                .fold(f64::INFINITY, f64::min),
        }
    }

    /// Unsigned distance to the boundary surface.
    pub fn boundary_distance(&self, x: &[f64]) -> f64 {
        self.signed_distance(x).abs()
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(invalid(format!(
                "point has dimension {}, domain has {}",
                x.len(),
                self.dim
            )));
        }
        if !all_finite(x) {
            return Err(invalid("point has non-finite coordinates"));
        }
        Ok(())
    }

    /// Euclidean projection onto the closed domain.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_point(x)?;
        let mut out = vec![0.0; self.dim];
        self.project_into(x, &mut out);
        Ok(out)
    }

    /// Projection without argument validation. `out` must have length `dim`.
    pub fn project_into(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(x);
        if self.contains(x) {
            return;
        }
        match &self.shape {
            Shape::Ball { center, radius } => {
                let r = dist(x, center);
                for ((o, xi), c) in out.iter_mut().zip(x).zip(center) {
                    *o = c + radius * (xi - c) / r;
                }
            }
            Shape::Box { lo, hi } => {
                for ((o, l), h) in out.iter_mut().zip(lo).zip(hi) {
                    *o = o.clamp(*l, *h);
                }
            }
            Shape::Halfspaces { faces } => dykstra(faces, x, out),
        }
    }

    /// Outward unit normal at a boundary point. At Box edges and corners,
    /// and at polytope vertices, the normalized sum of the active face
    /// normals is returned.
    pub fn outward_normal(&self, p: &[f64]) -> Result<Vec<f64>> {
        self.check_point(p)?;
        let tol = self.tolerance();
        let off = self.boundary_distance(p);
        if off > tol {
            return Err(Error::Domain(format!(
                "point is {off:e} from the boundary (tolerance {tol:e})"
            )));
        }
        let mut n = vec![0.0; self.dim];
        match &self.shape {
            Shape::Ball { center, .. } => {
                for ((ni, pi), c) in n.iter_mut().zip(p).zip(center) {
                    *ni = pi - c;
                }
            }
            Shape::Box { lo, hi } => {
                for k in 0..self.dim {
                    if (p[k] - lo[k]).abs() <= tol {
                        n[k] -= 1.0;
                    }
                    if (p[k] - hi[k]).abs() <= tol {
                        n[k] += 1.0;
                    }
                }
            }
            Shape::Halfspaces { faces } => {
                for f in faces {
                    if (f.offset - dot(&f.normal, p)).abs() <= tol {
                        for (ni, fi) in n.iter_mut().zip(&f.normal) {
                            *ni += fi;
                        }
                    }
                }
            }
        }
        let len = norm(&n);
        if len == 0.0 {
            return Err(Error::Domain("no active face at boundary point".into()));
        }
        n.iter_mut().for_each(|v| *v /= len);
        Ok(n)
    }

    /// Whether `v` lies in the normal cone of the domain at boundary point
    /// `p` (up to `tol` in the angular sense).
    pub fn in_normal_cone(&self, p: &[f64], v: &[f64], tol: f64) -> bool {
        let mut w = vec![0.0; self.dim];
        let vn = norm(v);
        if vn == 0.0 {
            return true;
        }
        // v is in the normal cone iff <v, w - p> <= 0 for all w in the
        // domain; for projections this is iff P(p + v) == p.
        for (wi, (pi, vi)) in w.iter_mut().zip(p.iter().zip(v)) {
            *wi = pi + vi / vn;
        }
        let mut q = vec![0.0; self.dim];
        self.project_into(&w, &mut q);
        dist(&q, p) <= tol
    }

    /// One projected Euler–Maruyama step. Returns `(x_new, reflection)` with
    /// `reflection = pre - x_new`.
    pub fn reflected_step(
        &self,
        x: &[f64],
        drift: &[f64],
        noise: &[f64],
        dt: f64,
        sigma: f64,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_point(x)?;
        if drift.len() != self.dim || noise.len() != self.dim {
            return Err(invalid("drift and noise must match the domain dimension"));
        }
        if !(dt > 0.0) || !(sigma >= 0.0) {
            return Err(Error::Precondition(format!(
                "need dt > 0 and sigma >= 0, got dt={dt}, sigma={sigma}"
            )));
        }
        if !self.contains_tol(x) {
            return Err(Error::Precondition("step started outside the closed domain".into()));
        }
        let mut x_new = vec![0.0; self.dim];
        let mut refl = vec![0.0; self.dim];
        self.reflected_step_into(x, drift, noise, dt, sigma, &mut x_new, &mut refl);
        if !all_finite(&x_new) {
            return Err(invalid("step produced non-finite coordinates"));
        }
        Ok((x_new, refl))
    }

    /// Unchecked in-place variant of [`DomainSpec::reflected_step`].
    #[allow(clippy::too_many_arguments)]
    pub fn reflected_step_into(
        &self,
        x: &[f64],
        drift: &[f64],
        noise: &[f64],
        dt: f64,
        sigma: f64,
        x_new: &mut [f64],
        reflection: &mut [f64],
    ) {
        let amp = (2.0 * sigma * dt).sqrt();
        for k in 0..self.dim {
            reflection[k] = x[k] + drift[k] * dt + amp * noise[k];
        }
        self.project_into(reflection, x_new);
        for k in 0..self.dim {
            reflection[k] -= x_new[k];
        }
    }

    /// Uniform sample on the domain by rejection from the bounding box.
    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut p = vec![0.0; self.dim];
        loop {
            for k in 0..self.dim {
                p[k] = rng.random_range(self.bbox_lo[k]..self.bbox_hi[k]);
            }
            if self.contains(&p) {
                return p;
            }
        }
    }

    /// `n` points on the boundary.
    pub fn sample_boundary_points<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
        (0..n).map(|_| self.sample_boundary_point(rng)).collect()
    }

    fn sample_boundary_point<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match &self.shape {
            Shape::Ball { center, radius } => {
                let u = random_unit(self.dim, rng);
                center.iter().zip(&u).map(|(c, ui)| c + radius * ui).collect()
            }
            Shape::Box { lo, hi } => {
                // Choose a face with probability proportional to its area.
                let d = self.dim;
                let widths: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| b - a).collect();
                let areas: Vec<f64> = (0..d)
                    .map(|k| (0..d).filter(|&j| j != k).map(|j| widths[j]).product::<f64>())
                    .collect();
                let total: f64 = 2.0 * areas.iter().sum::<f64>();
                let mut pick = rng.random::<f64>() * total;
                let mut face = (d - 1, true);
                'outer: for (k, a) in areas.iter().enumerate() {
                    for upper in [false, true] {
                        if pick < *a {
                            face = (k, upper);
                            break 'outer;
                        }
                        pick -= a;
                    }
                }
                let mut p: Vec<f64> = lo
                    .iter()
                    .zip(hi)
                    .map(|(a, b)| rng.random_range(*a..*b))
                    .collect();
                p[face.0] = if face.1 { hi[face.0] } else { lo[face.0] };
                p
            }
            Shape::Halfspaces { faces } => {
                let u = random_unit(self.dim, rng);
                let x0 = &self.interior;
                let t = faces
                    .iter()
                    .filter_map(|f| {
                        let nu = dot(&f.normal, &u);
                        (nu > 0.0).then(|| (f.offset - dot(&f.normal, x0)) / nu)
                    })
                    .fold(f64::INFINITY, f64::min);
                x0.iter().zip(&u).map(|(a, b)| a + t * b).collect()
            }
        }
    }
}

/// Uniformly distributed unit vector.
pub fn random_unit<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = norm(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Cumulative reflection of one particle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReflectionLedger {
    /// Accumulated `|K|_t`, the sum of reflection increment lengths.
    pub total: f64,
    /// Reflection vector of the most recent step.
    pub last: Vec<f64>,
}

impl ReflectionLedger {
    pub fn new(dim: usize) -> Self {
        ReflectionLedger {
            total: 0.0,
            last: vec![0.0; dim],
        }
    }

    pub fn record(&mut self, reflection: &[f64]) {
        self.total += norm(reflection);
        self.last.copy_from_slice(reflection);
    }
}

fn dykstra(faces: &[Halfspace], x: &[f64], out: &mut [f64]) {
    let d = x.len();
    let mut incr = vec![vec![0.0; d]; faces.len()];
    let mut y = vec![0.0; d];
    let mut prev = vec![0.0; d];
    out.copy_from_slice(x);
    for _ in 0..DYKSTRA_MAX_SWEEPS {
        prev.copy_from_slice(out);
        // The iterate can repeat across a sweep while the increments still
        // move, so both enter the stopping test.
        let mut change: f64 = 0.0;
        for (f, p) in faces.iter().zip(incr.iter_mut()) {
            for k in 0..d {
                y[k] = out[k] + p[k];
            }
            let excess = dot(&f.normal, &y) - f.offset;
            for k in 0..d {
                out[k] = if excess > 0.0 { y[k] - excess * f.normal[k] } else { y[k] };
                let next = y[k] - out[k];
                change = change.max((next - p[k]).abs());
                p[k] = next;
            }
        }
        for (a, b) in out.iter().zip(&prev) {
            change = change.max((a - b).abs());
        }
        if change < DYKSTRA_TOL {
            break;
        }
    }
}

fn check_bounded(faces: &[Halfspace], dim: usize) -> Result<()> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5eed_b0c5);
    let mut dirs: Vec<Vec<f64>> = Vec::new();
    for k in 0..dim {
        for s in [-1.0, 1.0] {
            let mut e = vec![0.0; dim];
            e[k] = s;
            dirs.push(e);
        }
    }
    dirs.extend((0..4096).map(|_| random_unit(dim, &mut rng)));
    for u in &dirs {
        if !faces.iter().any(|f| dot(&f.normal, u) > 1e-12) {
            return Err(invalid("halfspace intersection is unbounded"));
        }
    }
    Ok(())
}

fn polytope_vertices(faces: &[Halfspace], dim: usize) -> Vec<Vec<f64>> {
    let m = faces.len();
    let mut vertices: Vec<Vec<f64>> = Vec::new();
    let mut idx: Vec<usize> = (0..dim).collect();
    if m < dim {
        return vertices;
    }
    let scale = faces.iter().map(|f| f.offset.abs()).fold(1.0, f64::max);
    loop {
        let mat: Vec<Vec<f64>> = idx.iter().map(|&i| faces[i].normal.clone()).collect();
        let rhs: Vec<f64> = idx.iter().map(|&i| faces[i].offset).collect();
        if let Some(v) = solve(mat, rhs) {
            let feasible = faces
                .iter()
                .all(|f| dot(&f.normal, &v) <= f.offset + 1e-9 * scale);
            if feasible && !vertices.iter().any(|w| dist(w, &v) < 1e-9 * scale) {
                vertices.push(v);
            }
        }
        // next combination
        let mut k = dim;
        loop {
            if k == 0 {
                return vertices;
            }
            k -= 1;
            if idx[k] < m - dim + k {
                idx[k] += 1;
                for j in k + 1..dim {
                    idx[j] = idx[j - 1] + 1;
                }
                break;
            }
        }
    }
}
