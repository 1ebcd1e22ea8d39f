//! Particle time-stepping for the penalized system and the projected
//! reflected oracle, with tracking of the reflection process `K` and its
//! total variation, cost evaluation and the martingale-residual check.
//!
//! Sign convention for `K`: penalized schemes record the outward
//! displacement removed by the penalty (`X⁺ + ΔK = X̃`), the reflected
//! scheme records the inward push (`X⁺ = Y + ΔK`).

use rand::Rng;
use rand_distr::StandardNormal;

use crate::controls::{sample_control, ControlLaw};
use crate::error::{Error, Result};
use crate::geometry::{dist_sq, dot, norm};
use crate::measures::{EmpiricalMeasure, MeasureFlow};
use crate::model::{generator_value, outer_self, ControlGrid, MeasureSummary, ModelSpec, PenaltyLevel, TestFunction};
use crate::rng::{stream, Lane};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    PenalizedExplicit,
    PenalizedSplitting,
    ReflectedProjected,
}

impl Scheme {
    pub fn is_penalized(self) -> bool {
        !matches!(self, Scheme::ReflectedProjected)
    }

    pub fn name(self) -> &'static str {
        match self {
            Scheme::PenalizedExplicit => "penalized_explicit",
            Scheme::PenalizedSplitting => "penalized_splitting",
            Scheme::ReflectedProjected => "reflected_projected",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "penalized_explicit" => Some(Scheme::PenalizedExplicit),
            "penalized_splitting" => Some(Scheme::PenalizedSplitting),
            "reflected_projected" => Some(Scheme::ReflectedProjected),
            _ => None,
        }
    }
}

/// Where the measure argument comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Interaction {
    /// The particles' own empirical measure at the current step.
    #[default]
    SelfConsistent,
    /// An external flow on the same time grid.
    Frozen,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub particles: usize,
    /// `M`; the step is `T / M`.
    pub steps: usize,
    pub scheme: Scheme,
    pub penalty: Option<PenaltyLevel>,
    pub seed: u64,
    pub interaction: Interaction,
}

impl SimConfig {
    pub fn new(particles: usize, steps: usize, scheme: Scheme, seed: u64) -> Self {
        Self {
            particles,
            steps,
            scheme,
            penalty: None,
            seed,
            interaction: Interaction::SelfConsistent,
        }
    }

    pub fn with_penalty(mut self, n: PenaltyLevel) -> Self {
        self.penalty = Some(n);
        self
    }

    pub fn with_interaction(mut self, interaction: Interaction) -> Self {
        self.interaction = interaction;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn dt(&self, horizon: f64) -> f64 {
        horizon / self.steps as f64
    }

    pub fn validate(&self, horizon: f64) -> Result<()> {
        if self.particles == 0 {
            return Err(Error::InvalidInput("particle count must be >= 1".into()));
        }
        if self.steps == 0 {
            return Err(Error::InvalidInput("step count must be >= 1".into()));
        }
        match (self.scheme.is_penalized(), self.penalty) {
            (true, None) => {
                return Err(Error::InvalidInput(format!(
                    "scheme {} needs a penalty level",
                    self.scheme.name()
                )))
            }
            (false, Some(_)) => {
                return Err(Error::InvalidInput("the reflected scheme takes no penalty level".into()))
            }
            _ => {}
        }
        if let (Scheme::PenalizedExplicit, Some(n)) = (self.scheme, self.penalty) {
            let ndt = n.as_f64() * self.dt(horizon);
            if ndt > 0.5 {
                return Err(Error::InvalidInput(format!(
                    "explicit penalization is unstable: n·dt = {ndt} exceeds 1/2"
                )));
            }
        }
        Ok(())
    }
}

/// Controls applied along the paths.
#[derive(Debug, Clone, PartialEq)]
pub enum AppliedControls {
    Constant(Vec<f64>),
    /// `[M][N][dim]`
    Strict { dim: usize, values: Vec<f64> },
    /// Per-step weights `[M][N][atoms]` and the sampled atom `[M][N]`.
    Relaxed {
        grid: ControlGrid,
        weights: Vec<f64>,
        atoms: Vec<u32>,
    },
}

/// Simulated paths. Positions are kept as a [`MeasureFlow`] so that the
/// realized flow is available without copying.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBundle {
    flow: MeasureFlow,
    /// `[M+1][N][d]`, cumulative
    k: Vec<f64>,
    /// `[M+1][N]`, cumulative
    kvar: Vec<f64>,
    controls: AppliedControls,
    scheme: Scheme,
    penalty: Option<PenaltyLevel>,
    seed: u64,
}

impl PathBundle {
    pub fn dim(&self) -> usize {
        self.flow.dim()
    }

    pub fn particles(&self) -> usize {
        self.flow.frame(0).len()
    }

    pub fn steps(&self) -> usize {
        self.flow.steps()
    }

    pub fn horizon(&self) -> f64 {
        self.flow.horizon()
    }

    pub fn dt(&self) -> f64 {
        self.flow.dt()
    }

    pub fn time(&self, step: usize) -> f64 {
        self.flow.time(step)
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn penalty(&self) -> Option<PenaltyLevel> {
        self.penalty
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn flow(&self) -> &MeasureFlow {
        &self.flow
    }

    pub fn into_flow(self) -> MeasureFlow {
        self.flow
    }

    pub fn x(&self, step: usize, i: usize) -> &[f64] {
        self.flow.frame(step).point(i)
    }

    pub fn k(&self, step: usize, i: usize) -> &[f64] {
        let d = self.dim();
        let o = (step * self.particles() + i) * d;
        &self.k[o..o + d]
    }

    pub fn kvar(&self, step: usize, i: usize) -> f64 {
        self.kvar[step * self.particles() + i]
    }

    /// `ΔK` over step `step → step + 1`.
    pub fn dk(&self, step: usize, i: usize) -> Vec<f64> {
        self.k(step + 1, i)
            .iter()
            .zip(self.k(step, i))
            .map(|(a, b)| a - b)
            .collect()
    }

    /// Displacement applied to the state by the constraint over one step.
    fn push(&self, step: usize, i: usize) -> Vec<f64> {
        let mut dk = self.dk(step, i);
        if self.scheme.is_penalized() {
            dk.iter_mut().for_each(|v| *v = -*v);
        }
        dk
    }

    /// Outward displacement over one step, paired with the boundary cost.
    fn outward(&self, step: usize, i: usize) -> Vec<f64> {
        let mut dk = self.dk(step, i);
        if !self.scheme.is_penalized() {
            dk.iter_mut().for_each(|v| *v = -*v);
        }
        dk
    }

    /// State at which the boundary cost of step `step` is evaluated.
    fn boundary_anchor(&self, step: usize, i: usize) -> &[f64] {
        match self.scheme {
            Scheme::PenalizedExplicit => self.x(step, i),
            _ => self.x(step + 1, i),
        }
    }

    pub fn controls(&self) -> &AppliedControls {
        &self.controls
    }

    /// Control value applied at `step` (the sampled atom for relaxed laws).
    pub fn control(&self, step: usize, i: usize) -> Option<&[f64]> {
        let n = self.particles();
        match &self.controls {
            AppliedControls::Constant(u) => Some(u),
            AppliedControls::Strict { dim, values } => {
                let o = (step * n + i) * dim;
                values.get(o..o + dim)
            }
            AppliedControls::Relaxed { grid, atoms, .. } => {
                atoms.get(step * n + i).map(|&a| grid.atom(a as usize))
            }
        }
    }

    pub fn relaxed_weights(&self, step: usize, i: usize) -> Option<&[f64]> {
        match &self.controls {
            AppliedControls::Relaxed { grid, weights, .. } => {
                let k = grid.len();
                let o = (step * self.particles() + i) * k;
                weights.get(o..o + k)
            }
            _ => None,
        }
    }

    /// `|K|_T` per particle.
    pub fn terminal_kvar(&self) -> Vec<f64> {
        let n = self.particles();
        self.kvar[self.steps() * n..].to_vec()
    }
}

/// One particle-step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub x: Vec<f64>,
    pub dk: Vec<f64>,
    pub dkvar: f64,
}

/// Scratch space for the inner loop.
struct Stepper<'a> {
    ms: &'a ModelSpec,
    scheme: Scheme,
    n: f64,
    dt: f64,
    b: Vec<f64>,
    s: Vec<f64>,
    p: Vec<f64>,
}

impl<'a> Stepper<'a> {
    fn new(ms: &'a ModelSpec, scheme: Scheme, penalty: Option<PenaltyLevel>, dt: f64) -> Self {
        let d = ms.dim();
        Self {
            ms,
            scheme,
            n: penalty.map_or(0.0, PenaltyLevel::as_f64),
            dt,
            b: vec![0.0; d],
            s: vec![0.0; d * ms.dim_noise()],
            p: vec![0.0; d],
        }
    }

    /// Advance `x` by one step; writes the next state and `ΔK`, returns `Δ|K|`.
    #[allow(clippy::too_many_arguments)]
    fn advance(
        &mut self,
        t: f64,
        x: &[f64],
        mu: &MeasureSummary,
        u: &[f64],
        xi: &[f64],
        out: &mut [f64],
        dk: &mut [f64],
    ) -> f64 {
        let d = x.len();
        let m = xi.len();
        let c = self.ms.coefficients();
        c.drift(t, x, mu, u, &mut self.b);
        c.diffusion(t, x, mu, u, &mut self.s);
        let sq = self.dt.sqrt();
        for a in 0..d {
            let noise: f64 = (0..m).map(|j| self.s[a * m + j] * xi[j]).sum();
            out[a] = x[a] + self.b[a] * self.dt + sq * noise;
        }
        let domain = self.ms.domain();
        match self.scheme {
            Scheme::PenalizedExplicit => {
                self.p.copy_from_slice(x);
                domain.project_in_place(&mut self.p);
                for a in 0..d {
                    dk[a] = self.n * (x[a] - self.p[a]) * self.dt;
                    out[a] -= dk[a];
                }
            }
            Scheme::PenalizedSplitting => {
                self.p.copy_from_slice(out);
                domain.project_in_place(&mut self.p);
                let decay = (-self.n * self.dt).exp();
                for a in 0..d {
                    let tilde = out[a];
                    out[a] = self.p[a] + decay * (tilde - self.p[a]);
                    dk[a] = tilde - out[a];
                }
            }
            Scheme::ReflectedProjected => {
                self.p.copy_from_slice(out);
                domain.project_in_place(&mut self.p);
                for a in 0..d {
                    dk[a] = self.p[a] - out[a];
                    out[a] = self.p[a];
                }
            }
        }
        norm(dk)
    }
}

fn check_step_inputs(ms: &ModelSpec, x: &[f64], u: &[f64], xi: &[f64]) -> Result<()> {
    if x.len() != ms.dim() || xi.len() != ms.dim_noise() || u.len() != ms.controls().dim() {
        return Err(Error::InvalidInput("step inputs have the wrong dimensions".into()));
    }
    Ok(())
}

fn single_step(
    ms: &ModelSpec,
    cfg: &SimConfig,
    t: f64,
    x: &[f64],
    mu: &MeasureSummary,
    u: &[f64],
    xi: &[f64],
) -> Result<StepOutcome> {
    cfg.validate(ms.horizon())?;
    check_step_inputs(ms, x, u, xi)?;
    let mut st = Stepper::new(ms, cfg.scheme, cfg.penalty, cfg.dt(ms.horizon()));
    let mut out = vec![0.0; x.len()];
    let mut dk = vec![0.0; x.len()];
    let dkvar = st.advance(t, x, mu, u, xi, &mut out, &mut dk);
    if out.iter().chain(&dk).any(|v| !v.is_finite()) {
        return Err(Error::Divergence {
            particle: 0,
            step: 0,
            detail: format!("non-finite state {out:?}"),
        });
    }
    Ok(StepOutcome { x: out, dk, dkvar })
}

/// One penalized step from `x` with control `u` and standard normal draw `xi`.
pub fn step_penalized(
    ms: &ModelSpec,
    cfg: &SimConfig,
    t: f64,
    x: &[f64],
    mu: &MeasureSummary,
    u: &[f64],
    xi: &[f64],
) -> Result<StepOutcome> {
    if !cfg.scheme.is_penalized() {
        return Err(Error::InvalidInput("step_penalized needs a penalized scheme".into()));
    }
    single_step(ms, cfg, t, x, mu, u, xi)
}

/// One projected-Euler step from `x ∈ D̄`.
pub fn step_reflected(
    ms: &ModelSpec,
    cfg: &SimConfig,
    t: f64,
    x: &[f64],
    mu: &MeasureSummary,
    u: &[f64],
    xi: &[f64],
) -> Result<StepOutcome> {
    if cfg.scheme != Scheme::ReflectedProjected {
        return Err(Error::InvalidInput("step_reflected needs the reflected scheme".into()));
    }
    if !ms.domain().contains(x) {
        return Err(Error::Domain(format!("reflected step from {x:?} outside the domain")));
    }
    single_step(ms, cfg, t, x, mu, u, xi)
}

fn summary(ms: &ModelSpec, frame: &EmpiricalMeasure) -> MeasureSummary {
    MeasureSummary::of(frame, ms.coefficients().needs_sample())
}

enum Recorder {
    Constant(Vec<f64>),
    Strict(usize, Vec<f64>),
    Relaxed(ControlGrid, Vec<f64>, Vec<u32>),
}

/// Run `cfg.particles` particles over `cfg.steps` steps under `law`.
///
/// With [`Interaction::Frozen`] the measure argument at step `k` is
/// `mu_ext.frame(k)`; otherwise it is the particles' own step-`k`
/// empirical measure. Output depends only on `(cfg, law, mu_ext)`.
pub fn simulate(
    ms: &ModelSpec,
    cfg: &SimConfig,
    law: &ControlLaw,
    mu_ext: Option<&MeasureFlow>,
) -> Result<PathBundle> {
    let horizon = ms.horizon();
    cfg.validate(horizon)?;
    match (cfg.interaction, mu_ext) {
        (Interaction::Frozen, None) => {
            return Err(Error::InvalidInput("frozen interaction needs an external flow".into()))
        }
        (Interaction::Frozen, Some(flow)) => {
            if flow.steps() != cfg.steps || (flow.horizon() - horizon).abs() > 1e-12 * horizon {
                return Err(Error::GridMismatch(format!(
                    "external flow has (T={}, M={}), simulation uses (T={horizon}, M={})",
                    flow.horizon(),
                    flow.steps(),
                    cfg.steps
                )));
            }
            if flow.dim() != ms.dim() {
                return Err(Error::GridMismatch("external flow has the wrong dimension".into()));
            }
        }
        (Interaction::SelfConsistent, Some(_)) => {
            return Err(Error::InvalidInput(
                "an external flow was given but the interaction is self-consistent".into(),
            ))
        }
        (Interaction::SelfConsistent, None) => {}
    }
    if let ControlLaw::Constant(u) = law {
        if !ms.controls().contains(u) {
            return Err(Error::ContractViolation(format!("constant control {u:?} is outside U")));
        }
    }

    let d = ms.dim();
    let m = ms.dim_noise();
    let np = cfg.particles;
    let steps = cfg.steps;
    let dt = cfg.dt(horizon);
    let seed = cfg.seed;

    let mut x0 = vec![0.0; np * d];
    for i in 0..np {
        let mut rng = stream(seed, i as u64, 0, Lane::Initial);
        ms.initial_law().sample(&mut rng, &mut x0[i * d..(i + 1) * d]);
    }
    let mut frames = Vec::with_capacity(steps + 1);
    frames.push(EmpiricalMeasure::uniform(d, x0)?);
    let mut k_all = vec![0.0; (steps + 1) * np * d];
    let mut kvar_all = vec![0.0; (steps + 1) * np];

    let u_dim = ms.controls().dim();
    let mut rec = match law {
        ControlLaw::Constant(u) => Recorder::Constant(u.clone()),
        l if l.is_relaxed() => {
            let grid = l.grid().expect("relaxed laws carry a grid").clone();
            let k = grid.len();
            Recorder::Relaxed(grid, Vec::with_capacity(steps * np * k), Vec::with_capacity(steps * np))
        }
        _ => Recorder::Strict(u_dim, Vec::with_capacity(steps * np * u_dim)),
    };

    let mut stepper = Stepper::new(ms, cfg.scheme, cfg.penalty, dt);
    let mut xi = vec![0.0; m];
    for step in 0..steps {
        let t = step as f64 * dt;
        let mu = match mu_ext {
            Some(flow) => summary(ms, flow.frame(step)),
            None => summary(ms, &frames[step]),
        };
        let cur = frames[step].samples();
        let mut next = vec![0.0; np * d];
        let (k_prev, k_rest) = k_all.split_at_mut((step + 1) * np * d);
        let k_prev = &k_prev[step * np * d..];
        let k_next = &mut k_rest[..np * d];
        for i in 0..np {
            let x = &cur[i * d..(i + 1) * d];
            let u_owned;
            let u: &[f64] = match &mut rec {
                Recorder::Constant(u) => u,
                rec => {
                    let mut crng = stream(seed, i as u64, step as u64, Lane::Control);
                    let draw = sample_control(law, ms.controls(), t, x, &mut crng)?;
                    match rec {
                        Recorder::Strict(_, values) => values.extend_from_slice(&draw.u),
                        Recorder::Relaxed(grid, weights, atoms) => {
                            weights.extend_from_slice(draw.weights.as_deref().unwrap_or(&[]));
                            atoms.push(grid.nearest(&draw.u) as u32);
                        }
                        Recorder::Constant(_) => unreachable!(),
                    }
                    u_owned = draw.u;
                    &u_owned
                }
            };
            let mut nrng = stream(seed, i as u64, step as u64, Lane::Noise);
            for v in xi.iter_mut() {
                *v = nrng.sample(StandardNormal);
            }
            let out = &mut next[i * d..(i + 1) * d];
            let dk = &mut k_next[i * d..(i + 1) * d];
            let dkvar = stepper.advance(t, x, &mu, u, &xi, out, dk);
            if out.iter().chain(dk.iter()).any(|v| !v.is_finite()) {
                return Err(Error::Divergence {
                    particle: i,
                    step,
                    detail: format!("state {:?} from {:?}", out, x),
                });
            }
            for a in 0..d {
                dk[a] += k_prev[i * d + a];
            }
            kvar_all[(step + 1) * np + i] = kvar_all[step * np + i] + dkvar;
        }
        frames.push(EmpiricalMeasure::uniform(d, next)?);
    }

    let controls = match rec {
        Recorder::Constant(u) => AppliedControls::Constant(u),
        Recorder::Strict(dim, values) => AppliedControls::Strict { dim, values },
        Recorder::Relaxed(grid, weights, atoms) => AppliedControls::Relaxed { grid, weights, atoms },
    };
    Ok(PathBundle {
        flow: MeasureFlow::new(horizon, frames)?,
        k: k_all,
        kvar: kvar_all,
        controls,
        scheme: cfg.scheme,
        penalty: cfg.penalty,
        seed,
    })
}

/// Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        if xs.is_empty() {
            return Self { mean: f64::NAN, se: f64::NAN };
        }
        let mean = xs.iter().sum::<f64>() / n;
        let se = if xs.len() > 1 {
            let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        } else {
            0.0
        };
        Self { mean, se }
    }
}

impl std::fmt::Display for Estimate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} ± {}", self.mean, self.se)
    }
}

/// Cost estimate keeping per-particle samples for paired comparisons.
#[derive(Debug, Clone, PartialEq)]
pub struct CostEstimate {
    pub estimate: Estimate,
    pub samples: Vec<f64>,
}

impl CostEstimate {
    pub fn mean(&self) -> f64 {
        self.estimate.mean
    }

    pub fn se(&self) -> f64 {
        self.estimate.se
    }

    /// `self − other` with the standard error of the paired differences.
    /// Falls back to independent errors if the sample counts differ.
    pub fn paired_gap(&self, other: &CostEstimate) -> Estimate {
        if self.samples.len() == other.samples.len() {
            let diff: Vec<f64> = self.samples.iter().zip(&other.samples).map(|(a, b)| a - b).collect();
            Estimate::from_samples(&diff)
        } else {
            Estimate {
                mean: self.mean() - other.mean(),
                se: self.se().hypot(other.se()),
            }
        }
    }
}

fn check_flow(paths: &PathBundle, mu: &MeasureFlow) -> Result<()> {
    if !paths.flow().same_grid(mu) {
        return Err(Error::GridMismatch(format!(
            "measure flow has (T={}, M={}), paths have (T={}, M={})",
            mu.horizon(),
            mu.steps(),
            paths.horizon(),
            paths.steps()
        )));
    }
    Ok(())
}

/// Cost of each particle path under `mu`: left-endpoint `∫f dt`, boundary
/// cost charged per unit of constraint displacement, plus `g(X_T, μ_T)`.
/// For penalized paths the boundary term is the penalty part of `f^n`.
pub fn evaluate_cost(ms: &ModelSpec, paths: &PathBundle, mu: &MeasureFlow) -> Result<CostEstimate> {
    check_flow(paths, mu)?;
    let np = paths.particles();
    let dt = paths.dt();
    let zero = vec![0.0; paths.dim()];
    let mut samples = vec![0.0; np];
    for step in 0..paths.steps() {
        let t = paths.time(step);
        let summ = summary(ms, mu.frame(step));
        for (i, acc) in samples.iter_mut().enumerate() {
            let x = paths.x(step, i);
            let f = match (paths.relaxed_weights(step, i), paths.controls()) {
                (Some(w), AppliedControls::Relaxed { grid, .. }) => {
                    let mut f = 0.0;
                    for (j, &wj) in w.iter().enumerate() {
                        if wj > 0.0 {
                            f += wj * ms.running_cost(t, x, &summ, grid.atom(j))?;
                        }
                    }
                    f
                }
                _ => ms.running_cost(t, x, &summ, paths.control(step, i).unwrap_or(&[]))?,
            };
            *acc += f * dt;
            let dkvar = paths.kvar(step + 1, i) - paths.kvar(step, i);
            if dkvar > 0.0 {
                let mut at = paths.boundary_anchor(step, i).to_vec();
                ms.domain().project_in_place(&mut at);
                *acc += ms.boundary_pairing(t, &at, &summ, &paths.outward(step, i), &zero)?;
            }
        }
    }
    let last = summ_terminal(ms, mu);
    for (i, acc) in samples.iter_mut().enumerate() {
        *acc += ms.terminal_cost(paths.x(paths.steps(), i), &last)?;
    }
    Ok(CostEstimate {
        estimate: Estimate::from_samples(&samples),
        samples,
    })
}

fn summ_terminal(ms: &ModelSpec, mu: &MeasureFlow) -> MeasureSummary {
    summary(ms, mu.frame(mu.steps()))
}

/// Increments of `φ(X_t) − ∫ℒφ dt − ∫Dφ·(constraint push)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualReport {
    /// Across-particle mean of the increment over each step.
    pub per_step_mean: Vec<f64>,
    pub per_step_se: Vec<f64>,
    /// Mean and error of the per-particle total over `[0, T]`.
    pub total: Estimate,
    /// `total.mean / total.se` (0 when both vanish).
    pub z: f64,
}

/// Martingale residual of `phi` along `paths`. The generator averages over
/// relaxed weights; the constraint term uses the gradient at the midpoint
/// of each push, which is exact for quadratic `phi`.
pub fn martingale_residual(
    ms: &ModelSpec,
    paths: &PathBundle,
    mu: &MeasureFlow,
    phi: &dyn TestFunction,
) -> Result<ResidualReport> {
    check_flow(paths, mu)?;
    let d = ms.dim();
    if phi.dim() != d {
        return Err(Error::InvalidInput(format!(
            "test function has dimension {}, model has {d}",
            phi.dim()
        )));
    }
    let np = paths.particles();
    let dt = paths.dt();
    let mut totals = vec![0.0; np];
    let mut per_step_mean = Vec::with_capacity(paths.steps());
    let mut per_step_se = Vec::with_capacity(paths.steps());
    let mut incs = vec![0.0; np];
    let mut grad = vec![0.0; d];
    for step in 0..paths.steps() {
        let t = paths.time(step);
        let summ = summary(ms, mu.frame(step));
        for i in 0..np {
            let x = paths.x(step, i);
            let lphi = match (paths.relaxed_weights(step, i), paths.controls()) {
                (Some(w), AppliedControls::Relaxed { grid, .. }) => {
                    let mut acc = 0.0;
                    for (j, &wj) in w.iter().enumerate() {
                        if wj > 0.0 {
                            acc += wj * generator_at(ms, phi, t, x, &summ, grid.atom(j))?;
                        }
                    }
                    acc
                }
                _ => generator_at(ms, phi, t, x, &summ, paths.control(step, i).unwrap_or(&[]))?,
            };
            let xn = paths.x(step + 1, i);
            let mut inc = phi.value(xn) - phi.value(x) - lphi * dt;
            let push = paths.push(step, i);
            if push.iter().any(|v| *v != 0.0) {
                let mid: Vec<f64> = xn.iter().zip(&push).map(|(a, p)| a - 0.5 * p).collect();
                phi.gradient(&mid, &mut grad);
                inc -= dot(&grad, &push);
            }
            incs[i] = inc;
            totals[i] += inc;
        }
        let e = Estimate::from_samples(&incs);
        per_step_mean.push(e.mean);
        per_step_se.push(e.se);
    }
    let total = Estimate::from_samples(&totals);
    let z = if total.se > 0.0 {
        total.mean / total.se
    } else if total.mean == 0.0 {
        0.0
    } else {
        f64::INFINITY.copysign(total.mean)
    };
    Ok(ResidualReport {
        per_step_mean,
        per_step_se,
        total,
        z,
    })
}

fn generator_at(
    ms: &ModelSpec,
    phi: &dyn TestFunction,
    t: f64,
    x: &[f64],
    mu: &MeasureSummary,
    u: &[f64],
) -> Result<f64> {
    let b = ms.drift(t, x, mu, u)?;
    let s = ms.diffusion(t, x, mu, u)?;
    let a = outer_self(&s, ms.dim(), ms.dim_noise());
    Ok(generator_value(phi, x, &b, &a))
}

/// Path functionals used by the moment-bound checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathMoments {
    /// `E sup_t |X_t|²`
    pub sup_sq: Estimate,
    /// `E |K|_T`
    pub kvar_terminal: Estimate,
    /// Smallest accumulated `Σ <X, ΔK_outward>` over particles.
    pub min_boundary_work: f64,
}

pub fn path_moments(paths: &PathBundle) -> PathMoments {
    let np = paths.particles();
    let mut sup = vec![0.0f64; np];
    let mut work = vec![0.0f64; np];
    for i in 0..np {
        for step in 0..=paths.steps() {
            let x = paths.x(step, i);
            sup[i] = sup[i].max(dot(x, x));
            if step < paths.steps() && paths.kvar(step + 1, i) > paths.kvar(step, i) {
                work[i] += dot(paths.boundary_anchor(step, i), &paths.outward(step, i));
            }
        }
    }
    PathMoments {
        sup_sq: Estimate::from_samples(&sup),
        kvar_terminal: Estimate::from_samples(&paths.terminal_kvar()),
        min_boundary_work: work.iter().copied().fold(f64::INFINITY, f64::min),
    }
}

/// Mean squared distance between the terminal states of two bundles run
/// with common random numbers.
pub fn terminal_rms_gap(a: &PathBundle, b: &PathBundle) -> Result<f64> {
    if a.particles() != b.particles() || a.steps() != b.steps() || a.dim() != b.dim() {
        return Err(Error::GridMismatch("bundles differ in shape".into()));
    }
    let (ma, mb) = (a.steps(), b.steps());
    let s: f64 = (0..a.particles()).map(|i| dist_sq(a.x(ma, i), b.x(mb, i))).sum();
    Ok((s / a.particles() as f64).sqrt())
}
