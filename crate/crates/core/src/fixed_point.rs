//! The equilibrium loop `μ ↦ law of the best-responding state`, with
//! damping by particle-subsample mixing, and the drivers for the
//! penalization sweep and the strict-approximation study.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;

use crate::best_response::{exploitability, solve_dp, DpConfig, Exploitability};
use crate::controls::{chattering, ControlLaw};
use crate::error::{Error, Result};
use crate::measures::{d_u, w2_flow, EmpiricalMeasure, MeasureFlow, TimedControlMeasure};
use crate::model::{ModelSpec, PenaltyLevel};
use crate::rng::{derive_seed, StreamRng};
use crate::simulator::{evaluate_cost, simulate, CostEstimate, Estimate, Interaction, Scheme, SimConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointConfig {
    /// Particle count, time grid, seed, and the mode: a penalized scheme
    /// with its level, or the reflected scheme.
    pub sim: SimConfig,
    pub dp: DpConfig,
    /// Share `θ ∈ (0, 1]` of particles taken from the new flow.
    pub damping: f64,
    pub max_iters: usize,
    /// Stop once the flow residual falls below this.
    pub tol: f64,
    /// Exploitability above `exploit_tol·(1 + |J|)` is flagged.
    pub exploit_tol: f64,
}

impl FixedPointConfig {
    pub fn new(sim: SimConfig, dp: DpConfig) -> Self {
        Self {
            sim,
            dp,
            damping: 0.5,
            max_iters: 30,
            tol: 5e-2,
            exploit_tol: 5e-2,
        }
    }

    pub fn validate(&self, horizon: f64) -> Result<()> {
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::InvalidInput(format!("damping must lie in (0, 1], got {}", self.damping)));
        }
        if self.tol.is_nan() || self.tol <= 0.0 {
            return Err(Error::InvalidInput(format!("tolerance must be > 0, got {}", self.tol)));
        }
        self.sim.validate(horizon)
    }

    /// The same configuration in penalized mode at level `n`.
    pub fn penalized(&self, n: PenaltyLevel) -> Self {
        let scheme = if self.sim.scheme.is_penalized() {
            self.sim.scheme
        } else {
            Scheme::PenalizedSplitting
        };
        let mut c = self.clone();
        c.sim.scheme = scheme;
        c.sim.penalty = Some(n);
        c
    }

    /// The same configuration in reflected mode.
    pub fn reflected(&self) -> Self {
        let mut c = self.clone();
        c.sim.scheme = Scheme::ReflectedProjected;
        c.sim.penalty = None;
        c
    }
}

#[derive(Debug, Clone)]
pub struct EquilibriumReport {
    pub flow: MeasureFlow,
    pub law: ControlLaw,
    /// `w2_flow(new, old)` per iteration.
    pub residuals: Vec<f64>,
    /// Exploitability of `law` under `flow`.
    pub exploitability: Exploitability,
    pub iterations: usize,
    pub converged: bool,
    /// Exploitability exceeded the configured tolerance.
    pub exploit_flagged: bool,
    pub seed: u64,
    pub scheme: Scheme,
    pub penalty: Option<PenaltyLevel>,
}

impl EquilibriumReport {
    /// `J` (or `J^n`) of the returned law under the returned flow.
    pub fn cost(&self) -> &CostEstimate {
        &self.exploitability.current_cost
    }

    /// Plain-text summary; byte-identical for identical runs.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let e = &self.exploitability;
        let _ = writeln!(s, "status = {}", if self.converged { "converged" } else { "not_converged" });
        let _ = writeln!(s, "scheme = {}", self.scheme.name());
        if let Some(n) = self.penalty {
            let _ = writeln!(s, "penalty = {}", n.get());
        }
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "iterations = {}", self.iterations);
        let _ = writeln!(s, "particles = {}", self.flow.frame(0).len());
        let _ = writeln!(s, "steps = {}", self.flow.steps());
        let _ = writeln!(s, "cost = {}", self.cost().mean());
        let _ = writeln!(s, "cost_se = {}", self.cost().se());
        let _ = writeln!(s, "exploitability = {}", e.gap.mean);
        let _ = writeln!(s, "exploitability_se = {}", e.gap.se);
        let _ = writeln!(s, "exploitability_raw = {}", e.raw_gap.mean);
        let _ = writeln!(s, "best_response_cost = {}", e.best_response_cost.mean);
        match e.dp_value {
            Some(v) => {
                let _ = writeln!(s, "dp_value = {v}");
            }
            None => {
                let _ = writeln!(s, "dp_value = none");
            }
        }
        let _ = writeln!(s, "exploitability_flagged = {}", self.exploit_flagged);
        let hist: Vec<String> = self.residuals.iter().map(|r| r.to_string()).collect();
        let _ = writeln!(s, "residuals = {}", hist.join(","));
        s
    }
}

/// Keep the particles in `take_new` from `new` and the rest from `old`,
/// at every time node.
fn mix_flows(old: &MeasureFlow, new: &MeasureFlow, take_new: &[bool]) -> Result<MeasureFlow> {
    let d = old.dim();
    let frames = old
        .frames()
        .iter()
        .zip(new.frames())
        .map(|(a, b)| {
            let mut pts = Vec::with_capacity(a.samples().len());
            for (i, &fresh) in take_new.iter().enumerate() {
                pts.extend_from_slice(if fresh { b.point(i) } else { a.point(i) });
            }
            EmpiricalMeasure::uniform(d, pts)
        })
        .collect::<Result<Vec<_>>>()?;
    MeasureFlow::new(old.horizon(), frames)
}

/// Which particle indices come from the new flow in iteration `iter`.
fn subsample(seed: u64, iter: usize, n: usize, theta: f64) -> Vec<bool> {
    let fresh = ((theta * n as f64).ceil() as usize).min(n);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut StreamRng::seed_from_u64(derive_seed(seed, iter as u64)));
    let mut take = vec![false; n];
    for &i in &idx[..fresh] {
        take[i] = true;
    }
    take
}

/// Damped fixed-point iteration. Every simulation reuses `cfg.sim.seed`,
/// so successive flows differ only through the control law and `μ`.
///
/// Iteration `k`: best response to `μ_k` by DP, a frozen simulation under
/// it, residual `w2_flow(new, μ_k)`, then `μ_{k+1}` takes `⌈θN⌉` particles
/// from the new flow and the rest from `μ_k`. Non-convergence is reported,
/// not raised.
pub fn solve_equilibrium(ms: &ModelSpec, cfg: &FixedPointConfig) -> Result<EquilibriumReport> {
    cfg.validate(ms.horizon())?;
    let self_cfg = cfg.sim.clone().with_interaction(Interaction::SelfConsistent);
    let frozen = cfg.sim.clone().with_interaction(Interaction::Frozen);
    let grid = ms.control_grid();
    let vacuous = grid.len() == 1;
    let mut law = ControlLaw::Constant(grid.atom(grid.nearest_to_origin()).to_vec());
    let mut flow = simulate(ms, &self_cfg, &law, None)?.into_flow();
    let n = cfg.sim.particles;
    let mut residuals = Vec::new();
    let mut converged = false;
    for iter in 0..cfg.max_iters {
        if !vacuous {
            law = solve_dp(ms, &flow, cfg.sim.penalty, &cfg.dp)?.law();
        }
        let new = simulate(ms, &frozen, &law, Some(&flow))?.into_flow();
        let r = w2_flow(&new, &flow)?;
        residuals.push(r);
        log::info!("iteration {}: flow residual {r}", iter + 1);
        flow = if cfg.damping >= 1.0 {
            new
        } else {
            mix_flows(&flow, &new, &subsample(cfg.sim.seed, iter, n, cfg.damping))?
        };
        if r < cfg.tol {
            converged = true;
            break;
        }
    }
    let exploit = exploitability(ms, &flow, &law, &cfg.sim, &cfg.dp)?;
    let bound = cfg.exploit_tol * (1.0 + exploit.current_cost.mean().abs());
    let exploit_flagged = exploit.gap.mean > bound;
    if exploit_flagged {
        log::warn!("exploitability {} exceeds {bound}", exploit.gap.mean);
    }
    Ok(EquilibriumReport {
        flow,
        law,
        iterations: residuals.len(),
        residuals,
        exploitability: exploit,
        converged,
        exploit_flagged,
        seed: cfg.sim.seed,
        scheme: cfg.sim.scheme,
        penalty: cfg.sim.penalty,
    })
}

/// One penalty level of a sweep.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub n: PenaltyLevel,
    /// `w2_flow(μ^n, μ_ref)`
    pub flow_gap: f64,
    /// `J^n − J_ref`, paired across common random numbers.
    pub cost_gap: Estimate,
    pub cost: Estimate,
    pub converged: bool,
    pub iterations: usize,
    /// Set when this level failed; the other fields are then NaN.
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub reference: EquilibriumReport,
}

impl SweepReport {
    /// CSV with one row per level and a final `reference` row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("n,flow_gap,cost_gap,cost_gap_se,abs_cost_gap,cost,cost_se,converged,iterations,error\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{}",
                r.n.get(),
                r.flow_gap,
                r.cost_gap.mean,
                r.cost_gap.se,
                r.cost_gap.mean.abs(),
                r.cost.mean,
                r.cost.se,
                r.converged,
                r.iterations,
                r.error.as_deref().unwrap_or("").replace(',', ";")
            );
        }
        let c = self.reference.cost();
        let _ = writeln!(
            s,
            "reference,0,0,0,0,{},{},{},{},",
            c.mean(),
            c.se(),
            self.reference.converged,
            self.reference.iterations
        );
        s
    }
}

/// Equilibria for each `n` with common random numbers, against the
/// reflected-mode reference. A failure at one level is recorded in its
/// row and the sweep continues.
pub fn penalization_sweep(ms: &ModelSpec, cfg: &FixedPointConfig, levels: &[PenaltyLevel]) -> Result<SweepReport> {
    let reference = solve_equilibrium(ms, &cfg.reflected())?;
    let mut rows = Vec::with_capacity(levels.len());
    for &n in levels {
        let row = solve_equilibrium(ms, &cfg.penalized(n)).and_then(|rep| {
            Ok(SweepRow {
                n,
                flow_gap: w2_flow(&rep.flow, &reference.flow)?,
                cost_gap: rep.cost().paired_gap(reference.cost()),
                cost: rep.cost().estimate,
                converged: rep.converged,
                iterations: rep.iterations,
                error: None,
            })
        });
        rows.push(row.unwrap_or_else(|e| {
            log::warn!("penalty level {} failed: {e}", n.get());
            let nan = Estimate { mean: f64::NAN, se: f64::NAN };
            SweepRow {
                n,
                flow_gap: f64::NAN,
                cost_gap: nan,
                cost: nan,
                converged: false,
                iterations: 0,
                error: Some(e.to_string()),
            }
        }));
    }
    Ok(SweepReport { rows, reference })
}

/// One switching period of a strict-approximation run.
#[derive(Debug, Clone)]
pub struct StrictRow {
    pub period: f64,
    pub n: PenaltyLevel,
    /// `d_U(chattered, relaxed)`
    pub control_distance: f64,
    /// `J(chattered, penalized) − J(relaxed, reflected)`, paired.
    pub cost_gap: Estimate,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct StrictApproxReport {
    pub rows: Vec<StrictRow>,
    pub reference_cost: Estimate,
}

impl StrictApproxReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("period,n,control_distance,cost_gap,cost_gap_se,abs_cost_gap,error\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                r.period,
                r.n.get(),
                r.control_distance,
                r.cost_gap.mean,
                r.cost_gap.se,
                r.cost_gap.mean.abs(),
                r.error.as_deref().unwrap_or("").replace(',', ";")
            );
        }
        s
    }
}

/// Penalty level tied to a switching period, `round(n0 / Δ)` (at least 1).
pub fn tied_penalty(n0: f64, period: f64) -> Result<PenaltyLevel> {
    if !(n0 > 0.0 && period > 0.0) {
        return Err(Error::InvalidInput("n0 and the period must be > 0".into()));
    }
    PenaltyLevel::new(((n0 / period).round() as u64).max(1))
}

/// Chatter the open-loop relaxed control `q` at each period, run the
/// penalized splitting scheme with `n = n0/Δ` frozen to the reference
/// flow, and compare with the reflected run under `q` itself.
pub fn strict_approximation_run(
    ms: &ModelSpec,
    sim: &SimConfig,
    q: &TimedControlMeasure,
    periods: &[f64],
    n0: f64,
) -> Result<StrictApproxReport> {
    let ref_cfg = SimConfig {
        scheme: Scheme::ReflectedProjected,
        penalty: None,
        interaction: Interaction::SelfConsistent,
        ..sim.clone()
    };
    let relaxed = ControlLaw::RelaxedOpenLoop(std::sync::Arc::new(q.clone()));
    let reference = simulate(ms, &ref_cfg, &relaxed, None)?;
    let flow = reference.flow();
    let j_ref = evaluate_cost(ms, &reference, flow)?;
    let mut rows = Vec::with_capacity(periods.len());
    for &period in periods {
        let attempt = || -> Result<StrictRow> {
            let n = tied_penalty(n0, period)?;
            let schedule = chattering(q, period)?;
            let cfg = SimConfig {
                scheme: Scheme::PenalizedSplitting,
                penalty: Some(n),
                interaction: Interaction::Frozen,
                ..sim.clone()
            };
            let law = ControlLaw::StrictOpenLoop(std::sync::Arc::new(schedule.clone()));
            let paths = simulate(ms, &cfg, &law, Some(flow))?;
            let j = evaluate_cost(ms, &paths, flow)?;
            Ok(StrictRow {
                period,
                n,
                control_distance: d_u(&schedule.as_measure()?, q)?,
                cost_gap: j.paired_gap(&j_ref),
                error: None,
            })
        };
        rows.push(attempt().unwrap_or_else(|e| {
            log::warn!("period {period} failed: {e}");
            StrictRow {
                period,
                n: PenaltyLevel::new(1).expect("1 is a valid level"),
                control_distance: f64::NAN,
                cost_gap: Estimate { mean: f64::NAN, se: f64::NAN },
                error: Some(e.to_string()),
            }
        }));
    }
    Ok(StrictApproxReport {
        rows,
        reference_cost: j_ref.estimate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ConvexDomain;
    use crate::model::{ControlGrid, ControlSet, InitialLaw};
    use crate::presets::{builtin, PresetKind, PresetParams};
    use std::sync::Arc;

    fn ou() -> ModelSpec {
        let c = builtin(PresetKind::ReflectedOuMf, 1, &PresetParams::new()).unwrap();
        ModelSpec::new(
            ConvexDomain::half_line(0.0).unwrap(),
            1.0,
            1,
            ControlSet::Finite(ControlGrid::singleton(&[0.0]).unwrap()),
            Arc::new(c),
            InitialLaw::UniformBox { lower: vec![0.0], upper: vec![1.0] },
        )
        .unwrap()
    }

    fn lq() -> ModelSpec {
        let c = builtin(PresetKind::LqControl, 1, &PresetParams::new()).unwrap();
        ModelSpec::new(
            ConvexDomain::cuboid(vec![-1.0], vec![1.0]).unwrap(),
            1.0,
            1,
            ControlSet::Finite(ControlGrid::from_points(1, vec![-1.0, 0.0, 1.0]).unwrap()),
            Arc::new(c),
            InitialLaw::UniformBox { lower: vec![0.0], upper: vec![0.5] },
        )
        .unwrap()
    }

    #[test]
    fn no_control_is_self_consistent_at_once() {
        let sim = SimConfig::new(200, 20, Scheme::ReflectedProjected, 4);
        let cfg = FixedPointConfig::new(sim, DpConfig::new(0.1).with_box(vec![0.0], vec![3.0]));
        let rep = solve_equilibrium(&ou(), &cfg).unwrap();
        assert!(rep.converged);
        assert_eq!(rep.iterations, 1);
        assert_eq!(rep.residuals[0], 0.0);
        assert_eq!(rep.exploitability.gap.mean, 0.0);
    }

    #[test]
    fn zero_iterations_is_not_converged() {
        let sim = SimConfig::new(50, 10, Scheme::ReflectedProjected, 4);
        let mut cfg = FixedPointConfig::new(sim, DpConfig::new(0.1));
        cfg.max_iters = 0;
        let rep = solve_equilibrium(&lq(), &cfg).unwrap();
        assert!(!rep.converged);
        assert!(rep.residuals.is_empty());
        assert!(rep.to_text().starts_with("status = not_converged"));
    }

    #[test]
    fn equilibrium_is_deterministic() {
        let sim = SimConfig::new(300, 20, Scheme::PenalizedSplitting, 8).with_penalty(PenaltyLevel::new(32).unwrap());
        let mut cfg = FixedPointConfig::new(sim, DpConfig::new(0.05));
        cfg.max_iters = 4;
        let a = solve_equilibrium(&lq(), &cfg).unwrap();
        let b = solve_equilibrium(&lq(), &cfg).unwrap();
        assert_eq!(a.to_text(), b.to_text());
        assert_eq!(a.flow, b.flow);
    }

    #[test]
    fn subsample_counts() {
        let t = subsample(1, 0, 10, 0.5);
        assert_eq!(t.iter().filter(|&&b| b).count(), 5);
        let t = subsample(1, 0, 10, 0.31);
        assert_eq!(t.iter().filter(|&&b| b).count(), 4);
        assert_ne!(subsample(1, 0, 100, 0.5), subsample(1, 1, 100, 0.5));
    }

    #[test]
    fn single_level_sweep_has_one_row() {
        let sim = SimConfig::new(100, 10, Scheme::ReflectedProjected, 2);
        let cfg = FixedPointConfig::new(sim, DpConfig::new(0.1).with_box(vec![0.0], vec![3.0]));
        let rep = penalization_sweep(&ou(), &cfg, &[PenaltyLevel::new(8).unwrap()]).unwrap();
        assert_eq!(rep.rows.len(), 1);
        assert!(rep.rows[0].error.is_none());
        assert!(rep.rows[0].flow_gap.is_finite() && rep.rows[0].cost_gap.mean.is_finite());
        assert_eq!(rep.to_csv().lines().count(), 3);
    }

    #[test]
    fn strict_control_has_no_gap_in_distance() {
        let ms = lq();
        let grid = ControlGrid::from_points(1, vec![-1.0, 0.0, 1.0]).unwrap();
        let q = TimedControlMeasure::stationary(1.0, 40, grid, &[0.0, 1.0, 0.0]).unwrap();
        let sim = SimConfig::new(200, 40, Scheme::ReflectedProjected, 3);
        let rep = strict_approximation_run(&ms, &sim, &q, &[0.2, 0.1], 12.8).unwrap();
        for r in &rep.rows {
            assert!(r.control_distance < 1e-9);
            assert!(r.error.is_none());
        }
        assert_eq!(rep.rows[0].n.get(), 64);
    }
}
