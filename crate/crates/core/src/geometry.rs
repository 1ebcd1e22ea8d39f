//! Closed convex state domains: Euclidean projection, squared distance and
//! the unit inward normal at boundary points.
//!
//! Four shapes are supported. A half-space is stored by its *inward* unit
//! normal `a` and offset `c`, i.e. `D = {x : <a, x> > c}` with closure
//! `{<a, x> >= c}`; a polytope is a finite intersection of such half-spaces.

use crate::error::{ensure_finite, Error, Result};

/// Maximum number of Dykstra sweeps for polytope projection.
pub const DYKSTRA_MAX_SWEEPS: usize = 10_000;
/// Dykstra stops once a full sweep moves the iterate by less than this.
pub const DYKSTRA_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct HalfSpace {
    normal: Vec<f64>,
    offset: f64,
}

impl HalfSpace {
    /// `normal` is the unit inward normal; the closed set is `<normal, x> >= offset`.
    pub fn new(normal: Vec<f64>, offset: f64) -> Result<Self> {
        if normal.is_empty() {
            return Err(Error::InvalidInput("half-space normal is empty".into()));
        }
        ensure_finite("half-space normal", &normal)?;
        if !offset.is_finite() {
            return Err(Error::InvalidInput("half-space offset is not finite".into()));
        }
        let len = norm(&normal);
        if (len - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "half-space normal must have unit length, got |a| = {len}"
            )));
        }
        Ok(Self { normal, offset })
    }

    pub fn normal(&self) -> &[f64] {
        &self.normal
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    /// Signed slack `<a, x> - c`; nonnegative inside the closed half-space.
    #[inline]
    pub fn slack(&self, x: &[f64]) -> f64 {
        dot(&self.normal, x) - self.offset
    }

    #[inline]
    fn project_in_place(&self, x: &mut [f64]) {
        let s = self.slack(x);
        if s < 0.0 {
            for (xi, ai) in x.iter_mut().zip(&self.normal) {
                *xi -= s * ai;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DomainKind {
    HalfSpace(HalfSpace),
    Ball { center: Vec<f64>, radius: f64 },
    Box { lower: Vec<f64>, upper: Vec<f64> },
    Polytope(Vec<HalfSpace>),
}

/// A closed convex domain `D̄ ⊂ R^d` containing the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexDomain {
    kind: DomainKind,
    dim: usize,
}

impl ConvexDomain {
    pub fn half_space(normal: Vec<f64>, offset: f64) -> Result<Self> {
        let hs = HalfSpace::new(normal, offset)?;
        let dim = hs.normal.len();
        Self::validated(DomainKind::HalfSpace(hs), dim)
    }

    /// The half-line `[lower, ∞)` in one dimension.
    pub fn half_line(lower: f64) -> Result<Self> {
        Self::half_space(vec![1.0], lower)
    }

    pub fn ball(center: Vec<f64>, radius: f64) -> Result<Self> {
        ensure_finite("ball center", &center)?;
        if center.is_empty() {
            return Err(Error::InvalidInput("ball center is empty".into()));
        }
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::InvalidInput(format!("ball radius must be > 0, got {radius}")));
        }
        let dim = center.len();
        Self::validated(DomainKind::Ball { center, radius }, dim)
    }

    pub fn cuboid(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::InvalidInput(format!(
                "box bounds must be non-empty and of equal length ({} vs {})",
                lower.len(),
                upper.len()
            )));
        }
        ensure_finite("box lower", &lower)?;
        ensure_finite("box upper", &upper)?;
        if lower.iter().zip(&upper).any(|(l, u)| l >= u) {
            return Err(Error::InvalidInput(format!(
                "box requires lower < upper componentwise: {lower:?} vs {upper:?}"
            )));
        }
        let dim = lower.len();
        Self::validated(DomainKind::Box { lower, upper }, dim)
    }

    pub fn polytope(faces: Vec<HalfSpace>) -> Result<Self> {
        let dim = faces
            .first()
            .map(|f| f.normal.len())
            .ok_or_else(|| Error::InvalidInput("polytope needs at least one face".into()))?;
        if faces.iter().any(|f| f.normal.len() != dim) {
            return Err(Error::InvalidInput("polytope faces differ in dimension".into()));
        }
        Self::validated(DomainKind::Polytope(faces), dim)
    }

    fn validated(kind: DomainKind, dim: usize) -> Result<Self> {
        let dom = Self { kind, dim };
        let origin = vec![0.0; dim];
        if !dom.contains(&origin) {
            return Err(Error::InvalidInput(
                "domain closure must contain the origin".into(),
            ));
        }
        Ok(dom)
    }

    pub fn kind(&self) -> &DomainKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Whether the origin is an interior point (not merely in the closure).
    pub fn origin_is_interior(&self) -> bool {
        let origin = vec![0.0; self.dim];
        match &self.kind {
            DomainKind::HalfSpace(h) => h.slack(&origin) > 0.0,
            DomainKind::Ball { center, radius } => norm(center) < *radius,
            DomainKind::Box { lower, upper } => {
                lower.iter().all(|&l| l < 0.0) && upper.iter().all(|&u| u > 0.0)
            }
            DomainKind::Polytope(faces) => faces.iter().all(|f| f.slack(&origin) > 0.0),
        }
    }

    /// Axis-aligned bounding box of `D̄`, when it is cheap to state.
    pub fn bounding_box(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        match &self.kind {
            DomainKind::Ball { center, radius } => Some((
                center.iter().map(|c| c - radius).collect(),
                center.iter().map(|c| c + radius).collect(),
            )),
            DomainKind::Box { lower, upper } => Some((lower.clone(), upper.clone())),
            DomainKind::HalfSpace(_) | DomainKind::Polytope(_) => None,
        }
    }

    /// Membership in the closed domain `D̄` (exact, no tolerance).
    /// Membership in `D̄` up to [`Self::boundary_tol`], so projected points
    /// always test as members despite rounding.
    pub fn contains(&self, x: &[f64]) -> bool {
        let tol = Self::boundary_tol(x);
        match &self.kind {
            DomainKind::HalfSpace(h) => h.slack(x) >= -tol,
            DomainKind::Ball { center, radius } => dist_sq(x, center).sqrt() <= radius + tol,
            DomainKind::Box { lower, upper } => x
                .iter()
                .zip(lower.iter().zip(upper))
                .all(|(xi, (l, u))| *xi >= *l - tol && *xi <= *u + tol),
            DomainKind::Polytope(faces) => faces.iter().all(|f| f.slack(x) >= -tol),
        }
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::InvalidInput(format!(
                "point has dimension {}, domain has {}",
                x.len(),
                self.dim
            )));
        }
        ensure_finite("point", x)
    }

    /// Euclidean projection onto `D̄`. Points already in `D̄` are returned unchanged.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_point(x)?;
        let mut out = x.to_vec();
        self.project_in_place(&mut out);
        Ok(out)
    }

    /// Unchecked projection used on hot paths; `x` must have the domain's dimension.
    pub fn project_in_place(&self, x: &mut [f64]) {
        match &self.kind {
            DomainKind::HalfSpace(h) => h.project_in_place(x),
            DomainKind::Ball { center, radius } => {
                let r2 = dist_sq(x, center);
                if r2 > radius * radius {
                    let scale = radius / r2.sqrt();
                    for (xi, ci) in x.iter_mut().zip(center) {
                        *xi = ci + scale * (*xi - ci);
                    }
                }
            }
            DomainKind::Box { lower, upper } => {
                for ((xi, l), u) in x.iter_mut().zip(lower).zip(upper) {
                    *xi = xi.clamp(*l, *u);
                }
            }
            DomainKind::Polytope(faces) => {
                if faces.iter().all(|f| f.slack(x) >= 0.0) {
                    return;
                }
                dykstra(faces, x);
            }
        }
    }

    /// Squared distance `|x - π(x)|^2`.
    pub fn dist2(&self, x: &[f64]) -> Result<f64> {
        let p = self.project(x)?;
        Ok(dist_sq(x, &p))
    }

    pub fn dist(&self, x: &[f64]) -> Result<f64> {
        self.dist2(x).map(f64::sqrt)
    }

    /// Boundary-membership tolerance used by [`Self::inward_normal`].
    pub fn boundary_tol(x: &[f64]) -> f64 {
        1e-9 * (1.0 + norm(x))
    }

    /// Unit inward normal at a boundary point. At nonsmooth points the result
    /// is the normalized sum of the active faces' inward normals.
    pub fn inward_normal(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_point(x)?;
        let tol = Self::boundary_tol(x);
        let off_boundary = || {
            Error::Domain(format!("point {x:?} is not within {tol:e} of the boundary"))
        };
        match &self.kind {
            DomainKind::HalfSpace(h) => {
                if h.slack(x).abs() <= tol {
                    Ok(h.normal.clone())
                } else {
                    Err(off_boundary())
                }
            }
            DomainKind::Ball { center, radius } => {
                let r = dist_sq(x, center).sqrt();
                if (r - radius).abs() > tol {
                    return Err(off_boundary());
                }
                Ok(center.iter().zip(x).map(|(c, xi)| (c - xi) / r).collect())
            }
            DomainKind::Box { lower, upper } => {
                let mut n = vec![0.0; self.dim];
                let mut active = false;
                for i in 0..self.dim {
                    if x[i] < lower[i] - tol || x[i] > upper[i] + tol {
                        return Err(off_boundary());
                    }
                    if (x[i] - lower[i]).abs() <= tol {
                        n[i] += 1.0;
                        active = true;
                    }
                    if (x[i] - upper[i]).abs() <= tol {
                        n[i] -= 1.0;
                        active = true;
                    }
                }
                if !active {
                    return Err(off_boundary());
                }
                normalized(n).ok_or_else(off_boundary)
            }
            DomainKind::Polytope(faces) => {
                let mut n = vec![0.0; self.dim];
                let mut active = false;
                for f in faces {
                    let s = f.slack(x);
                    if s < -tol {
                        return Err(off_boundary());
                    }
                    if s.abs() <= tol {
                        active = true;
                        for (ni, ai) in n.iter_mut().zip(&f.normal) {
                            *ni += ai;
                        }
                    }
                }
                if !active {
                    return Err(off_boundary());
                }
                normalized(n).ok_or_else(|| {
                    Error::Domain(format!("active face normals cancel at {x:?}"))
                })
            }
        }
    }
}

/// Dykstra's alternating projections onto an intersection of half-spaces.
fn dykstra(faces: &[HalfSpace], x: &mut [f64]) {
    let d = x.len();
    let mut incr = vec![0.0; faces.len() * d];
    let mut y = vec![0.0; d];
    for _ in 0..DYKSTRA_MAX_SWEEPS {
        let mut moved = 0.0;
        for (i, f) in faces.iter().enumerate() {
            let p = &mut incr[i * d..(i + 1) * d];
            for k in 0..d {
                y[k] = x[k] + p[k];
            }
            f.project_in_place(&mut y);
            for k in 0..d {
                let next = y[k];
                p[k] = x[k] + p[k] - next;
                moved += (next - x[k]) * (next - x[k]);
                x[k] = next;
            }
        }
        if moved.sqrt() < DYKSTRA_TOL * (1.0 + norm(x)) {
            break;
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub(crate) fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn normalized(mut v: Vec<f64>) -> Option<Vec<f64>> {
    let n = norm(&v);
    if n <= f64::EPSILON {
        return None;
    }
    v.iter_mut().for_each(|x| *x /= n);
    Some(v)
}
