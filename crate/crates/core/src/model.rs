//! Mean field game data: coefficients, control set, initial law and the
//! penalized transforms of drift and running cost.

use std::sync::Arc;

use rand::Rng;

use crate::error::{ensure_finite, Error, Result};
use crate::geometry::ConvexDomain;
use crate::measures::EmpiricalMeasure;

/// Finite control grid `U_h ⊂ R^N`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlGrid {
    dim: usize,
    atoms: Vec<f64>,
}

impl ControlGrid {
    pub fn from_points(dim: usize, atoms: Vec<f64>) -> Result<Self> {
        if dim == 0 || atoms.is_empty() || !atoms.len().is_multiple_of(dim) {
            return Err(Error::InvalidInput(format!(
                "control grid needs at least one point of dimension {dim}"
            )));
        }
        ensure_finite("control grid", &atoms)?;
        Ok(Self { dim, atoms })
    }

    pub fn singleton(u: &[f64]) -> Result<Self> {
        Self::from_points(u.len(), u.to_vec())
    }

    /// Tensor grid over `[lower, upper]` with `resolution` points per axis
    /// (endpoints included; a resolution of 1 takes the midpoint).
    pub fn box_grid(lower: &[f64], upper: &[f64], resolution: usize) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() || resolution == 0 {
            return Err(Error::InvalidInput("bad box control grid".into()));
        }
        if lower.iter().zip(upper).any(|(l, u)| l > u) {
            return Err(Error::InvalidInput("control box requires lower <= upper".into()));
        }
        let dim = lower.len();
        let axis = |k: usize, i: usize| {
            if resolution == 1 {
                0.5 * (lower[k] + upper[k])
            } else {
                lower[k] + (upper[k] - lower[k]) * i as f64 / (resolution - 1) as f64
            }
        };
        let total = resolution.pow(dim as u32);
        let mut atoms = Vec::with_capacity(total * dim);
        for flat in 0..total {
            let mut rem = flat;
            let mut idx = vec![0; dim];
            for k in (0..dim).rev() {
                idx[k] = rem % resolution;
                rem /= resolution;
            }
            for (k, &i) in idx.iter().enumerate() {
                atoms.push(axis(k, i));
            }
        }
        Self::from_points(dim, atoms)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.atoms.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn atom(&self, j: usize) -> &[f64] {
        &self.atoms[j * self.dim..(j + 1) * self.dim]
    }

    /// Index of the nearest atom (smallest index on ties).
    pub fn nearest(&self, u: &[f64]) -> usize {
        let mut best = (f64::INFINITY, 0);
        for j in 0..self.len() {
            let d = crate::geometry::dist_sq(self.atom(j), u);
            if d < best.0 {
                best = (d, j);
            }
        }
        best.1
    }

    /// Index of the atom with the smallest norm (smallest index on ties).
    pub fn nearest_to_origin(&self) -> usize {
        self.nearest(&vec![0.0; self.dim])
    }
}

/// The compact control set `U` and its finite discretization.
#[derive(Debug, Clone, PartialEq)]
pub enum ControlSet {
    Finite(ControlGrid),
    Box {
        lower: Vec<f64>,
        upper: Vec<f64>,
        resolution: usize,
    },
}

impl ControlSet {
    pub fn grid(&self) -> Result<ControlGrid> {
        match self {
            ControlSet::Finite(g) => Ok(g.clone()),
            ControlSet::Box {
                lower,
                upper,
                resolution,
            } => ControlGrid::box_grid(lower, upper, *resolution),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ControlSet::Finite(g) => g.dim(),
            ControlSet::Box { lower, .. } => lower.len(),
        }
    }

    /// Membership in `U` with a small absolute slack.
    pub fn contains(&self, u: &[f64]) -> bool {
        const SLACK: f64 = 1e-12;
        match self {
            ControlSet::Finite(g) => {
                u.len() == g.dim()
                    && (0..g.len()).any(|j| crate::geometry::dist_sq(g.atom(j), u) <= SLACK * SLACK)
            }
            ControlSet::Box { lower, upper, .. } => {
                u.len() == lower.len()
                    && u
                        .iter()
                        .zip(lower.iter().zip(upper))
                        .all(|(x, (l, h))| *x >= l - SLACK && *x <= h + SLACK)
            }
        }
    }
}

/// Finite summary of a measure argument handed to coefficient callbacks.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureSummary {
    pub mean: Vec<f64>,
    /// `∫ |z|^2 μ(dz)`
    pub second_moment: f64,
    /// Full sample, attached only for models that ask for it.
    pub sample: Option<Arc<EmpiricalMeasure>>,
}

impl MeasureSummary {
    pub fn of(measure: &EmpiricalMeasure, with_sample: bool) -> Self {
        Self {
            mean: measure.mean(),
            second_moment: measure.second_moment(),
            sample: with_sample.then(|| Arc::new(measure.clone())),
        }
    }

    pub fn dirac(point: &[f64]) -> Self {
        Self {
            mean: point.to_vec(),
            second_moment: point.iter().map(|v| v * v).sum(),
            sample: None,
        }
    }
}

/// Coefficients `(b, σ, f, h, g)` of the controlled dynamics and costs.
///
/// Implementations must be pure and reentrant. `diffusion` writes the
/// `d × m` matrix row-major.
pub trait Coefficients: Send + Sync {
    fn drift(&self, t: f64, x: &[f64], mu: &MeasureSummary, u: &[f64], out: &mut [f64]);
    fn diffusion(&self, t: f64, x: &[f64], mu: &MeasureSummary, u: &[f64], out: &mut [f64]);
    fn running_cost(&self, t: f64, x: &[f64], mu: &MeasureSummary, u: &[f64]) -> f64;
    fn boundary_cost(&self, t: f64, x: &[f64], mu: &MeasureSummary) -> f64;
    fn terminal_cost(&self, x: &[f64], mu: &MeasureSummary) -> f64;

    /// Vector-valued boundary cost for the inner-product convention.
    fn boundary_cost_vector(&self, _t: f64, _x: &[f64], _mu: &MeasureSummary) -> Option<Vec<f64>> {
        None
    }

    /// Whether callbacks read [`MeasureSummary::sample`].
    fn needs_sample(&self) -> bool {
        false
    }
}

/// How the boundary cost is paired with the reflection process.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BoundaryConvention {
    /// `∫ h d|K|`, penalty `n·h·|x − π(x)|`.
    #[default]
    TotalVariation,
    /// `∫ <h⃗, dK>` with an outward-oriented `K`, penalty `n·<h⃗, x − π(x)>`.
    InnerProduct,
}

/// Law of the initial state.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialLaw {
    Dirac(Vec<f64>),
    UniformBox { lower: Vec<f64>, upper: Vec<f64> },
    /// Resample uniformly from a fixed point cloud.
    Empirical(EmpiricalMeasure),
}

impl InitialLaw {
    pub fn dim(&self) -> usize {
        match self {
            InitialLaw::Dirac(p) => p.len(),
            InitialLaw::UniformBox { lower, .. } => lower.len(),
            InitialLaw::Empirical(m) => m.dim(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        match self {
            InitialLaw::Dirac(p) => out.copy_from_slice(p),
            InitialLaw::UniformBox { lower, upper } => {
                for ((o, l), u) in out.iter_mut().zip(lower).zip(upper) {
                    *o = l + (u - l) * rng.random::<f64>();
                }
            }
            InitialLaw::Empirical(m) => {
                let i = rng.random_range(0..m.len());
                out.copy_from_slice(m.point(i));
            }
        }
    }

    fn check_support(&self, domain: &ConvexDomain) -> Result<()> {
        let outside = |p: &[f64]| {
            Error::InvalidInput(format!("initial law charges {p:?}, which lies outside the domain"))
        };
        match self {
            InitialLaw::Dirac(p) => {
                ensure_finite("initial point", p)?;
                if !domain.contains(p) {
                    return Err(outside(p));
                }
            }
            InitialLaw::UniformBox { lower, upper } => {
                ensure_finite("initial box", lower)?;
                ensure_finite("initial box", upper)?;
                if lower.iter().zip(upper).any(|(l, u)| l > u) {
                    return Err(Error::InvalidInput("initial box requires lower <= upper".into()));
                }
                // D̄ is convex, so the box lies inside iff its corners do.
                let d = lower.len();
                for mask in 0..(1usize << d) {
                    let corner: Vec<f64> = (0..d)
                        .map(|k| if mask >> k & 1 == 1 { upper[k] } else { lower[k] })
                        .collect();
                    if !domain.contains(&corner) {
                        return Err(outside(&corner));
                    }
                }
            }
            InitialLaw::Empirical(m) => {
                for i in 0..m.len() {
                    if !domain.contains(m.point(i)) {
                        return Err(outside(m.point(i)));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Penalization strength `n >= 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PenaltyLevel(u64);

impl PenaltyLevel {
    pub fn new(n: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidInput("penalty level must be >= 1".into()));
        }
        Ok(Self(n))
    }

    pub fn get(self) -> u64 {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64
    }
}

/// Immutable problem data.
#[derive(Clone)]
pub struct ModelSpec {
    domain: ConvexDomain,
    horizon: f64,
    dim_noise: usize,
    controls: ControlSet,
    control_grid: ControlGrid,
    coefficients: Arc<dyn Coefficients>,
    initial_law: InitialLaw,
    convention: BoundaryConvention,
}

impl std::fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelSpec")
            .field("domain", &self.domain)
            .field("horizon", &self.horizon)
            .field("dim_noise", &self.dim_noise)
            .field("controls", &self.controls)
            .field("initial_law", &self.initial_law)
            .field("convention", &self.convention)
            .finish_non_exhaustive()
    }
}

impl ModelSpec {
    pub fn new(
        domain: ConvexDomain,
        horizon: f64,
        dim_noise: usize,
        controls: ControlSet,
        coefficients: Arc<dyn Coefficients>,
        initial_law: InitialLaw,
    ) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidInput(format!("horizon must be > 0, got {horizon}")));
        }
        if dim_noise == 0 {
            return Err(Error::InvalidInput("noise dimension must be >= 1".into()));
        }
        if initial_law.dim() != domain.dim() {
            return Err(Error::InvalidInput(format!(
                "initial law has dimension {}, domain has {}",
                initial_law.dim(),
                domain.dim()
            )));
        }
        initial_law.check_support(&domain)?;
        let control_grid = controls.grid()?;
        Ok(Self {
            domain,
            horizon,
            dim_noise,
            controls,
            control_grid,
            coefficients,
            initial_law,
            convention: BoundaryConvention::TotalVariation,
        })
    }

    pub fn with_convention(mut self, convention: BoundaryConvention) -> Self {
        self.convention = convention;
        self
    }

    pub fn with_horizon(mut self, horizon: f64) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidInput(format!("horizon must be > 0, got {horizon}")));
        }
        self.horizon = horizon;
        Ok(self)
    }

    pub fn with_coefficients(mut self, coefficients: Arc<dyn Coefficients>) -> Self {
        self.coefficients = coefficients;
        self
    }

    pub fn domain(&self) -> &ConvexDomain {
        &self.domain
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn dim_noise(&self) -> usize {
        self.dim_noise
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn controls(&self) -> &ControlSet {
        &self.controls
    }

    pub fn control_grid(&self) -> &ControlGrid {
        &self.control_grid
    }

    pub fn coefficients(&self) -> &dyn Coefficients {
        self.coefficients.as_ref()
    }

    pub fn initial_law(&self) -> &InitialLaw {
        &self.initial_law
    }

    pub fn convention(&self) -> BoundaryConvention {
        self.convention
    }

    fn check_args(&self, t: f64, x: &[f64], u: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::InvalidInput(format!(
                "state has dimension {}, model has {}",
                x.len(),
                self.dim()
            )));
        }
        if u.len() != self.controls.dim() {
            return Err(Error::InvalidInput(format!(
                "control has dimension {}, control set has {}",
                u.len(),
                self.controls.dim()
            )));
        }
        if !t.is_finite() {
            return Err(Error::InvalidInput("time is not finite".into()));
        }
        ensure_finite("state", x)?;
        ensure_finite("control", u)
    }

    pub fn drift(&self, t: f64, x: &[f64], mu: &MeasureSummary, u: &[f64]) -> Result<Vec<f64>> {
        self.check_args(t, x, u)?;
        let mut out = vec![0.0; self.dim()];
        self.coefficients.drift(t, x, mu, u, &mut out);
        ensure_finite("drift", &out).map_err(|_| coefficient_failure("drift", x))?;
        Ok(out)
    }

    pub fn diffusion(&self, t: f64, x: &[f64], mu: &MeasureSummary, u: &[f64]) -> Result<Vec<f64>> {
        self.check_args(t, x, u)?;
        let mut out = vec![0.0; self.dim() * self.dim_noise];
        self.coefficients.diffusion(t, x, mu, u, &mut out);
        ensure_finite("diffusion", &out).map_err(|_| coefficient_failure("diffusion", x))?;
        Ok(out)
    }

    /// `σσᵀ` as a row-major `d × d` matrix.
    pub fn covariance(&self, t: f64, x: &[f64], mu: &MeasureSummary, u: &[f64]) -> Result<Vec<f64>> {
        let s = self.diffusion(t, x, mu, u)?;
        Ok(outer_self(&s, self.dim(), self.dim_noise))
    }

    /// `b^n = b − n (x − π(x))`.
    pub fn penalized_drift(
        &self,
        n: PenaltyLevel,
        t: f64,
        x: &[f64],
        mu: &MeasureSummary,
        u: &[f64],
    ) -> Result<Vec<f64>> {
        let mut b = self.drift(t, x, mu, u)?;
        let p = self.domain.project(x)?;
        for ((bi, xi), pi) in b.iter_mut().zip(x).zip(&p) {
            *bi -= n.as_f64() * (xi - pi);
        }
        Ok(b)
    }

    /// `f^n = f + n·h·|x − π(x)|` (or `f + n·<h⃗, x − π(x)>` under the
    /// inner-product convention).
    pub fn penalized_running_cost(
        &self,
        n: PenaltyLevel,
        t: f64,
        x: &[f64],
        mu: &MeasureSummary,
        u: &[f64],
    ) -> Result<f64> {
        let f = self.running_cost(t, x, mu, u)?;
        let p = self.domain.project(x)?;
        let penalty = self.boundary_pairing(t, x, mu, x, &p)?;
        Ok(f + n.as_f64() * penalty)
    }

    pub fn running_cost(&self, t: f64, x: &[f64], mu: &MeasureSummary, u: &[f64]) -> Result<f64> {
        self.check_args(t, x, u)?;
        let f = self.coefficients.running_cost(t, x, mu, u);
        finite_scalar("running cost", f, x)
    }

    pub fn boundary_cost(&self, t: f64, x: &[f64], mu: &MeasureSummary) -> Result<f64> {
        finite_scalar("boundary cost", self.coefficients.boundary_cost(t, x, mu), x)
    }

    pub fn terminal_cost(&self, x: &[f64], mu: &MeasureSummary) -> Result<f64> {
        finite_scalar("terminal cost", self.coefficients.terminal_cost(x, mu), x)
    }

    /// Boundary cost charged for an outward displacement `from − to`,
    /// evaluated at the state `at`.
    pub(crate) fn boundary_pairing(
        &self,
        t: f64,
        at: &[f64],
        mu: &MeasureSummary,
        from: &[f64],
        to: &[f64],
    ) -> Result<f64> {
        match self.convention {
            BoundaryConvention::TotalVariation => {
                let len = crate::geometry::dist_sq(from, to).sqrt();
                if len == 0.0 {
                    return Ok(0.0);
                }
                Ok(self.boundary_cost(t, at, mu)? * len)
            }
            BoundaryConvention::InnerProduct => {
                let h = self.coefficients.boundary_cost_vector(t, at, mu).ok_or_else(|| {
                    Error::Configuration(
                        "inner-product boundary convention needs a vector boundary cost".into(),
                    )
                })?;
                if h.len() != self.dim() {
                    return Err(Error::ContractViolation("vector boundary cost has wrong length".into()));
                }
                let v: f64 = h.iter().zip(from.iter().zip(to)).map(|(hi, (a, b))| hi * (a - b)).sum();
                finite_scalar("boundary cost", v, at)
            }
        }
    }

    /// `ℒφ = bᵀ∇φ + ½ Tr(σσᵀ ∇²φ)`.
    pub fn generator_apply(
        &self,
        phi: &dyn TestFunction,
        t: f64,
        x: &[f64],
        mu: &MeasureSummary,
        u: &[f64],
    ) -> Result<f64> {
        let d = self.dim();
        if phi.dim() != d {
            return Err(Error::InvalidInput(format!(
                "test function has dimension {}, model has {d}",
                phi.dim()
            )));
        }
        let b = self.drift(t, x, mu, u)?;
        let a = self.covariance(t, x, mu, u)?;
        Ok(generator_value(phi, x, &b, &a))
    }
}

pub(crate) fn generator_value(phi: &dyn TestFunction, x: &[f64], b: &[f64], a: &[f64]) -> f64 {
    let d = x.len();
    let mut grad = vec![0.0; d];
    let mut hess = vec![0.0; d * d];
    phi.gradient(x, &mut grad);
    phi.hessian(x, &mut hess);
    let first: f64 = b.iter().zip(&grad).map(|(bi, gi)| bi * gi).sum();
    let second: f64 = a.iter().zip(&hess).map(|(ai, hi)| ai * hi).sum();
    first + 0.5 * second
}

/// `S Sᵀ` for a row-major `d × m` matrix `S`.
pub(crate) fn outer_self(s: &[f64], d: usize, m: usize) -> Vec<f64> {
    let mut a = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            a[i * d + j] = (0..m).map(|k| s[i * m + k] * s[j * m + k]).sum();
        }
    }
    a
}

fn coefficient_failure(what: &str, x: &[f64]) -> Error {
    Error::ContractViolation(format!("{what} returned a non-finite value at x = {x:?}"))
}

fn finite_scalar(what: &str, v: f64, x: &[f64]) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(coefficient_failure(what, x))
    }
}

/// A `C²` test function supplying value, gradient and Hessian.
pub trait TestFunction: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64], out: &mut [f64]);
    /// Row-major `d × d` Hessian.
    fn hessian(&self, x: &[f64], out: &mut [f64]);
}

/// `φ(x) = <c, x> + x^T Q x + k`, which covers the linear and quadratic
/// probes used by the diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticTest {
    pub linear: Vec<f64>,
    /// Symmetric `d × d`, row-major.
    pub quadratic: Vec<f64>,
    pub constant: f64,
}

impl QuadraticTest {
    /// `φ(x) = x_axis`.
    pub fn coordinate(dim: usize, axis: usize) -> Self {
        let mut linear = vec![0.0; dim];
        linear[axis] = 1.0;
        Self {
            linear,
            quadratic: vec![0.0; dim * dim],
            constant: 0.0,
        }
    }

    /// `φ(x) = |x|²`.
    pub fn squared_norm(dim: usize) -> Self {
        let mut quadratic = vec![0.0; dim * dim];
        for i in 0..dim {
            quadratic[i * dim + i] = 1.0;
        }
        Self {
            linear: vec![0.0; dim],
            quadratic,
            constant: 0.0,
        }
    }
}

impl TestFunction for QuadraticTest {
    fn dim(&self) -> usize {
        self.linear.len()
    }

    fn value(&self, x: &[f64]) -> f64 {
        let d = x.len();
        let mut v = self.constant;
        for i in 0..d {
            v += self.linear[i] * x[i];
            for j in 0..d {
                v += x[i] * self.quadratic[i * d + j] * x[j];
            }
        }
        v
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let d = x.len();
        for i in 0..d {
            out[i] = self.linear[i]
                + (0..d)
                    .map(|j| (self.quadratic[i * d + j] + self.quadratic[j * d + i]) * x[j])
                    .sum::<f64>();
        }
    }

    fn hessian(&self, x: &[f64], out: &mut [f64]) {
        let d = x.len();
        for i in 0..d {
            for j in 0..d {
                out[i * d + j] = self.quadratic[i * d + j] + self.quadratic[j * d + i];
            }
        }
    }
}

/// Smallest empirical constants in the growth bounds on `b`, `σσᵀ`, `f`,
/// `h` and `g`, estimated on random inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct GrowthReport {
    pub drift: f64,
    pub covariance: f64,
    pub running_cost: f64,
    pub boundary_cost: f64,
    pub terminal_cost: f64,
    /// Bounds whose constant kept growing as the sampling radius increased.
    pub warnings: Vec<String>,
}

/// Monte Carlo check of the linear/quadratic growth bounds. Constants are
/// estimated on states of radius `radius` and `4·radius`; a constant that
/// grows by more than a factor 2 is reported as a warning.
pub fn check_growth<R: Rng + ?Sized>(
    ms: &ModelSpec,
    samples: usize,
    radius: f64,
    rng: &mut R,
) -> Result<GrowthReport> {
    let run = |r: f64, rng: &mut R| -> Result<[f64; 5]> {
        let d = ms.dim();
        let grid = ms.control_grid();
        let mut c = [0.0f64; 5];
        for _ in 0..samples {
            let x: Vec<f64> = (0..d).map(|_| r * (2.0 * rng.random::<f64>() - 1.0)).collect();
            let mean: Vec<f64> = (0..d).map(|_| r * (2.0 * rng.random::<f64>() - 1.0)).collect();
            let m2 = mean.iter().map(|v| v * v).sum::<f64>() * (1.0 + rng.random::<f64>());
            let mu = MeasureSummary {
                mean,
                second_moment: m2,
                sample: None,
            };
            let t = ms.horizon() * rng.random::<f64>();
            let u = grid.atom(rng.random_range(0..grid.len())).to_vec();
            let xn = crate::geometry::norm(&x);
            let lin = 1.0 + xn + m2.sqrt();
            let quad = 1.0 + xn * xn + m2;
            let b = ms.drift(t, &x, &mu, &u)?;
            let a = ms.covariance(t, &x, &mu, &u)?;
            let an = a.iter().map(|v| v * v).sum::<f64>().sqrt();
            c[0] = c[0].max(crate::geometry::norm(&b) / lin);
            c[1] = c[1].max(an / quad);
            c[2] = c[2].max(ms.running_cost(t, &x, &mu, &u)?.abs() / quad);
            c[3] = c[3].max(ms.boundary_cost(t, &x, &mu)?.abs() / lin);
            c[4] = c[4].max(ms.terminal_cost(&x, &mu)?.abs() / quad);
        }
        Ok(c)
    };
    let near = run(radius, rng)?;
    let far = run(4.0 * radius, rng)?;
    let names = ["drift", "covariance", "running cost", "boundary cost", "terminal cost"];
    let mut warnings = Vec::new();
    for k in 0..5 {
        if far[k] > 2.0 * near[k] + 1e-12 {
            let msg = format!(
                "{} growth constant rose from {:.3e} to {:.3e} between radius {radius} and {}",
                names[k],
                near[k],
                far[k],
                4.0 * radius
            );
            log::warn!("{msg}");
            warnings.push(msg);
        }
    }
    let best = |k: usize| near[k].max(far[k]);
    Ok(GrowthReport {
        drift: best(0),
        covariance: best(1),
        running_cost: best(2),
        boundary_cost: best(3),
        terminal_cost: best(4),
        warnings,
    })
}
