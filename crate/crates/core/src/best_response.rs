//! Best response to a frozen measure flow by dynamic programming on a
//! locally consistent Markov chain (upwind Kushner scheme), for `d <= 2`.
//!
//! Each flow interval `[t_k, t_{k+1}]` is split into `s` chain substeps of
//! length `δ = dt / s`, with `s` the smallest count keeping every
//! transition probability nonnegative. The control is held over the
//! interval, so `V_k = min_u (T_u)^s V_{k+1}`.

use std::sync::Arc;

use crate::controls::{ControlLaw, FeedbackTable, StateGrid};
use crate::error::{Error, Result};
use crate::geometry::{dist_sq, ConvexDomain, DomainKind};
use crate::measures::{EmpiricalMeasure, MeasureFlow};
use crate::model::{outer_self, ControlGrid, MeasureSummary, ModelSpec, PenaltyLevel};
use crate::simulator::{evaluate_cost, simulate, CostEstimate, Estimate, Interaction, SimConfig};

/// Tolerance on the diagonal-dominance requirement of the covariance.
const DOMINANCE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct DpConfig {
    /// Node spacing, shared by all axes.
    pub hx: f64,
    /// Truncation box; required on axes where the domain is unbounded.
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
    /// Also evaluate mixtures of the two best controls per node.
    pub relaxed_probe: bool,
}

impl DpConfig {
    pub fn new(hx: f64) -> Self {
        Self {
            hx,
            lower: None,
            upper: None,
            relaxed_probe: false,
        }
    }

    pub fn with_box(mut self, lower: Vec<f64>, upper: Vec<f64>) -> Self {
        self.lower = Some(lower);
        self.upper = Some(upper);
        self
    }
}

/// Per-axis bounds implied by the domain (infinite where unbounded).
fn axis_bounds(domain: &ConvexDomain) -> (Vec<f64>, Vec<f64>) {
    let d = domain.dim();
    if let Some(b) = domain.bounding_box() {
        return b;
    }
    let mut lo = vec![f64::NEG_INFINITY; d];
    let mut hi = vec![f64::INFINITY; d];
    let faces = match domain.kind() {
        DomainKind::HalfSpace(h) => std::slice::from_ref(h),
        DomainKind::Polytope(f) => f.as_slice(),
        _ => &[],
    };
    for f in faces {
        let a = f.normal();
        let axis: Vec<usize> = (0..d).filter(|&k| a[k] != 0.0).collect();
        if let [k] = axis[..] {
            // a_k x_k >= c
            let bound = f.offset() / a[k];
            if a[k] > 0.0 {
                lo[k] = lo[k].max(bound);
            } else {
                hi[k] = hi[k].min(bound);
            }
        }
    }
    (lo, hi)
}

/// State grid, control grid and time grid of one DP solve.
#[derive(Debug, Clone, PartialEq)]
pub struct DpGrid {
    state: StateGrid,
    controls: ControlGrid,
    horizon: f64,
    steps: usize,
    penalty: Option<PenaltyLevel>,
    /// Nodes carrying their own chain rows (all nodes in penalized mode).
    active: Vec<bool>,
    /// Active node standing in for each node.
    snap: Vec<usize>,
}

impl DpGrid {
    /// Grid covering `D̄` (or the truncation box), extended by a penalty
    /// margin in penalized mode, on the time grid of `mu`.
    pub fn new(ms: &ModelSpec, mu: &MeasureFlow, penalty: Option<PenaltyLevel>, cfg: &DpConfig) -> Result<Self> {
        let d = ms.dim();
        if d > 2 {
            return Err(Error::Configuration("grid dynamic programming supports d <= 2".into()));
        }
        let h = cfg.hx;
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::Configuration(format!("grid spacing must be > 0, got {h}")));
        }
        if (mu.horizon() - ms.horizon()).abs() > 1e-12 * ms.horizon() || mu.dim() != d {
            return Err(Error::GridMismatch("measure flow does not match the model".into()));
        }
        let (mut lo, mut hi) = axis_bounds(ms.domain());
        for (bound, user, pick) in [
            (&mut lo, &cfg.lower, f64::max as fn(f64, f64) -> f64),
            (&mut hi, &cfg.upper, f64::min as fn(f64, f64) -> f64),
        ] {
            if let Some(u) = user {
                if u.len() != d {
                    return Err(Error::Configuration("truncation box has the wrong dimension".into()));
                }
                for (b, v) in bound.iter_mut().zip(u) {
                    *b = if b.is_finite() { pick(*b, *v) } else { *v };
                }
            }
        }
        if lo.iter().chain(&hi).any(|v| !v.is_finite()) {
            return Err(Error::Configuration(
                "domain is unbounded; give a truncation box for the grid".into(),
            ));
        }
        if lo.iter().zip(&hi).any(|(l, u)| l >= u) {
            return Err(Error::Configuration("grid box is empty".into()));
        }
        if let Some(n) = penalty {
            let margin = penalty_margin(ms, mu, n)?;
            let cells = (margin / h).ceil();
            for k in 0..d {
                lo[k] -= cells * h;
                hi[k] += cells * h;
            }
        }
        let counts: Vec<usize> = (0..d)
            .map(|k| ((hi[k] - lo[k]) / h - 1e-9).ceil() as usize + 1)
            .collect();
        let state = StateGrid::new(lo, vec![h; d], counts)?;
        let nodes = state.len();
        let active: Vec<bool> = match penalty {
            Some(_) => vec![true; nodes],
            None => (0..nodes).map(|j| inside(ms.domain(), &state.node(j), h)).collect(),
        };
        if !active.iter().any(|&a| a) {
            return Err(Error::Configuration("no grid node lies in the domain".into()));
        }
        let active_idx: Vec<usize> = (0..nodes).filter(|&j| active[j]).collect();
        let snap = (0..nodes)
            .map(|j| {
                if active[j] {
                    return j;
                }
                let p = ms.domain().project(&state.node(j)).expect("grid nodes are finite");
                nearest_active(&state, &active, &active_idx, &p)
            })
            .collect();
        Ok(Self {
            state,
            controls: ms.control_grid().clone(),
            horizon: mu.horizon(),
            steps: mu.steps(),
            penalty,
            active,
            snap,
        })
    }

    pub fn state(&self) -> &StateGrid {
        &self.state
    }

    pub fn controls(&self) -> &ControlGrid {
        &self.controls
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn penalty(&self) -> Option<PenaltyLevel> {
        self.penalty
    }

    pub fn is_active(&self, node: usize) -> bool {
        self.active[node]
    }

    pub fn hx(&self) -> f64 {
        self.state.spacing()[0]
    }
}

/// Membership in `D̄` with a rounding slack relative to the spacing.
fn inside(domain: &ConvexDomain, x: &[f64], h: f64) -> bool {
    domain.contains(x) || domain.dist2(x).map(|d2| d2 <= (1e-9 * h).powi(2)).unwrap_or(false)
}

fn nearest_active(state: &StateGrid, active: &[bool], active_idx: &[usize], p: &[f64]) -> usize {
    let j = state.nearest(p);
    if active[j] {
        return j;
    }
    *active_idx
        .iter()
        .min_by(|&&a, &&b| dist_sq(&state.node(a), p).total_cmp(&dist_sq(&state.node(b), p)))
        .expect("at least one active node")
}

/// Largest diffusion scale over corner and centre probes of the flow support.
fn penalty_margin(ms: &ModelSpec, mu: &MeasureFlow, n: PenaltyLevel) -> Result<f64> {
    let d = ms.dim();
    let dt = mu.dt();
    let mut sigma: f64 = 0.0;
    for k in [0, mu.steps()] {
        let frame = mu.frame(k);
        let summ = MeasureSummary::of(frame, ms.coefficients().needs_sample());
        let probes = [frame.mean(), frame.point(0).to_vec()];
        for x in &probes {
            for j in 0..ms.control_grid().len() {
                let s = ms.diffusion(mu.time(k), x, &summ, ms.control_grid().atom(j))?;
                let a = outer_self(&s, d, ms.dim_noise());
                for i in 0..d {
                    sigma = sigma.max(a[i * d + i].sqrt());
                }
            }
        }
    }
    Ok((3.0 * sigma * dt.sqrt()).max(5.0 * sigma / (2.0 * n.as_f64()).sqrt()))
}

/// Neighbour offsets in units of the spacing: axis moves, then diagonals.
fn moves(d: usize) -> Vec<[i64; 2]> {
    match d {
        1 => vec![[1, 0], [-1, 0]],
        _ => vec![[1, 0], [-1, 0], [0, 1], [0, -1], [1, 1], [-1, -1], [1, -1], [-1, 1]],
    }
}

/// Transition rows for one control, in compressed-row form over nodes.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ChainRows {
    start: Vec<usize>,
    target: Vec<u32>,
    prob: Vec<f64>,
}

impl ChainRows {
    pub fn row(&self, node: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.start[node], self.start[node + 1]);
        self.target[a..b].iter().zip(&self.prob[a..b]).map(|(&t, &p)| (t as usize, p))
    }

    fn apply(&self, w: &[f64], node: usize) -> f64 {
        let (a, b) = (self.start[node], self.start[node + 1]);
        let mut acc = 0.0;
        for k in a..b {
            acc += self.prob[k] * w[self.target[k] as usize];
        }
        acc
    }
}

/// The chain for one flow interval.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalChain {
    pub substeps: usize,
    pub delta: f64,
    /// Indexed by control.
    pub rows: Vec<ChainRows>,
    /// Cost per substep, `[control][node]`.
    pub costs: Vec<Vec<f64>>,
    /// Moves that left the grid box and were clamped to its edge.
    pub clamped: usize,
}

/// Build the transition model of flow interval `k` under the frozen `mu`.
///
/// Penalized mode uses `b^n` and `f^n`. Reflected mode sends moves that
/// leave `D̄` to the active node nearest their projection and charges the
/// boundary cost of the displacement.
pub fn build_chain(ms: &ModelSpec, mu: &MeasureFlow, grid: &DpGrid, k: usize) -> Result<IntervalChain> {
    if k >= grid.steps || mu.steps() != grid.steps || (mu.horizon() - grid.horizon).abs() > 1e-12 * grid.horizon {
        return Err(Error::GridMismatch("interval outside the DP time grid".into()));
    }
    let d = ms.dim();
    let h = grid.hx();
    let t = mu.time(k);
    let dt = grid.dt();
    let summ = MeasureSummary::of(mu.frame(k), ms.coefficients().needs_sample());
    let nodes = grid.state.len();
    let ctrl = &grid.controls;
    let nu = ctrl.len();
    let mv = moves(d);

    // First pass: coefficients and the substep count.
    let mut drift = vec![0.0; nu * nodes * d];
    let mut cov = vec![0.0; nu * nodes * d * d];
    let mut run = vec![0.0; nu * nodes];
    let mut qmax: f64 = 0.0;
    for j in 0..nu {
        let u = ctrl.atom(j);
        for node in 0..nodes {
            if !grid.active[node] {
                continue;
            }
            let x = grid.state.node(node);
            let (b, f) = match grid.penalty {
                Some(n) => (
                    ms.penalized_drift(n, t, &x, &summ, u)?,
                    ms.penalized_running_cost(n, t, &x, &summ, u)?,
                ),
                None => (ms.drift(t, &x, &summ, u)?, ms.running_cost(t, &x, &summ, u)?),
            };
            let a = ms.covariance(t, &x, &summ, u)?;
            for i in 0..d {
                let off: f64 = (0..d).filter(|&l| l != i).map(|l| a[i * d + l].abs()).sum();
                if a[i * d + i] - off < -DOMINANCE_TOL {
                    return Err(Error::Configuration(format!(
                        "covariance at {x:?} is not diagonally dominant; the upwind chain has negative probabilities"
                    )));
                }
            }
            let mut q: f64 = (0..d).map(|i| a[i * d + i] + h * b[i].abs()).sum();
            if d == 2 {
                q -= a[1].abs();
            }
            qmax = qmax.max(q);
            let o = j * nodes + node;
            drift[o * d..(o + 1) * d].copy_from_slice(&b);
            cov[o * d * d..(o + 1) * d * d].copy_from_slice(&a);
            run[o] = f;
        }
    }
    let substeps = ((qmax * dt / (h * h)) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
    let delta = dt / substeps as f64;
    let scale = delta / (h * h);

    // Second pass: probabilities, redirections and per-substep costs.
    let mut rows = Vec::with_capacity(nu);
    let mut costs = Vec::with_capacity(nu);
    let mut clamped = 0;
    let mut idx = vec![0usize; d];
    let mut y = vec![0.0; d];
    for j in 0..nu {
        let mut r = ChainRows {
            start: Vec::with_capacity(nodes + 1),
            target: Vec::new(),
            prob: Vec::new(),
        };
        let mut c = vec![0.0; nodes];
        r.start.push(0);
        for node in 0..nodes {
            if !grid.active[node] {
                r.start.push(r.target.len());
                continue;
            }
            let o = j * nodes + node;
            let b = &drift[o * d..(o + 1) * d];
            let a = &cov[o * d * d..(o + 1) * d * d];
            let x = grid.state.node(node);
            let base = grid.state.unflat(node);
            let mut cost = run[o] * delta;
            let mut moved = 0.0;
            for m in &mv {
                let p = move_weight(m, a, b, d, h) * scale;
                if p <= 0.0 {
                    continue;
                }
                moved += p;
                let mut out_of_box = false;
                for i in 0..d {
                    let v = base[i] as i64 + m[i];
                    y[i] = x[i] + h * m[i] as f64;
                    if v < 0 || v >= grid.state.counts()[i] as i64 {
                        out_of_box = true;
                        idx[i] = v.clamp(0, grid.state.counts()[i] as i64 - 1) as usize;
                    } else {
                        idx[i] = v as usize;
                    }
                }
                let tgt = match grid.penalty {
                    Some(_) => {
                        if out_of_box {
                            clamped += 1;
                        }
                        grid.state.flat(&idx)
                    }
                    None => {
                        let direct = grid.state.flat(&idx);
                        if !out_of_box && grid.active[direct] {
                            direct
                        } else {
                            let py = ms.domain().project(&y)?;
                            if dist_sq(&py, &y) > 0.0 {
                                cost += p * ms.boundary_pairing(t, &py, &summ, &y, &py)?;
                            } else {
                                clamped += 1;
                            }
                            grid.snap[grid.state.nearest(&py)]
                        }
                    }
                };
                r.target.push(tgt as u32);
                r.prob.push(p);
            }
            let stay = 1.0 - moved;
            if stay < -1e-12 {
                return Err(Error::Configuration(format!(
                    "transition row at {x:?} has negative stay probability {stay}"
                )));
            }
            r.target.push(node as u32);
            r.prob.push(stay.max(0.0));
            r.start.push(r.target.len());
            c[node] = cost;
        }
        rows.push(r);
        costs.push(c);
    }
    Ok(IntervalChain {
        substeps,
        delta,
        rows,
        costs,
        clamped,
    })
}

/// Weight of one move before scaling by `δ / h²`.
fn move_weight(m: &[i64; 2], a: &[f64], b: &[f64], d: usize, h: f64) -> f64 {
    let axis = |i: usize, sign: i64| {
        let off: f64 = (0..d).filter(|&l| l != i).map(|l| a[i * d + l].abs()).sum();
        let up = if sign > 0 { b[i].max(0.0) } else { (-b[i]).max(0.0) };
        (0.5 * a[i * d + i] - 0.5 * off + h * up).max(0.0)
    };
    match (d, m) {
        (1, [s, _]) => axis(0, *s),
        (_, [s, 0]) => axis(0, *s),
        (_, [0, s]) => axis(1, *s),
        (_, [s, r]) => {
            let a01 = a[1];
            if s == r {
                0.5 * a01.max(0.0)
            } else {
                0.5 * (-a01).max(0.0)
            }
        }
    }
}

/// Value function and argmin control on the DP grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueField {
    grid: StateGrid,
    horizon: f64,
    steps: usize,
    /// `[M+1][nodes]`
    values: Vec<f64>,
    /// `[M][nodes]`
    argmin: Vec<u32>,
    substeps: Vec<usize>,
}

impl ValueField {
    pub fn grid(&self) -> &StateGrid {
        &self.grid
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn value(&self, k: usize, node: usize) -> f64 {
        self.values[k * self.grid.len() + node]
    }

    pub fn values(&self, k: usize) -> &[f64] {
        let n = self.grid.len();
        &self.values[k * n..(k + 1) * n]
    }

    pub fn argmin(&self, k: usize, node: usize) -> usize {
        self.argmin[k * self.grid.len() + node] as usize
    }

    /// `V(t_k, x)` at the nearest node.
    pub fn value_at(&self, k: usize, x: &[f64]) -> f64 {
        self.value(k, self.grid.nearest(x))
    }

    /// `∫ V(0, x) λ(dx)` over an initial sample, nearest-node lookup.
    pub fn expected_initial(&self, initial: &EmpiricalMeasure) -> f64 {
        (0..initial.len())
            .map(|i| initial.weight(i) * self.value_at(0, initial.point(i)))
            .sum()
    }

    /// Chain substeps used in each flow interval.
    pub fn substeps(&self) -> &[usize] {
        &self.substeps
    }
}

/// Gain from mixing the two best controls at each node.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeReport {
    /// `V_strict − V_mixed` at the initial law.
    pub gain_at_initial: f64,
    /// Largest gain over nodes at `t = 0`.
    pub max_gain: f64,
    /// Share of (interval, node) pairs where the mixture was strictly better.
    pub mixed_share: f64,
}

#[derive(Debug, Clone)]
pub struct DpSolution {
    pub value: ValueField,
    pub table: Arc<FeedbackTable>,
    pub probe: Option<ProbeReport>,
    /// Grid-edge clamps over the whole solve.
    pub clamped: usize,
}

impl DpSolution {
    pub fn law(&self) -> ControlLaw {
        ControlLaw::Table(self.table.clone())
    }
}

fn evaluate_policy(chain: &IntervalChain, j: usize, next: &[f64], scratch: &mut Vec<f64>) -> Vec<f64> {
    let rows = &chain.rows[j];
    let cost = &chain.costs[j];
    let mut w = next.to_vec();
    scratch.resize(w.len(), 0.0);
    for _ in 0..chain.substeps {
        for node in 0..w.len() {
            scratch[node] = if rows.start[node] == rows.start[node + 1] {
                w[node]
            } else {
                cost[node] + rows.apply(&w, node)
            };
        }
        std::mem::swap(&mut w, scratch);
    }
    w
}

/// Node-wise min over controls; ties go to the smallest index.
fn minimize(ws: &[Vec<f64>], nodes: usize) -> (Vec<f64>, Vec<u32>) {
    let mut v = ws[0].clone();
    let mut arg = vec![0u32; nodes];
    for (j, w) in ws.iter().enumerate().skip(1) {
        for node in 0..nodes {
            if w[node] < v[node] {
                v[node] = w[node];
                arg[node] = j as u32;
            }
        }
    }
    (v, arg)
}

/// Backward recursion under the frozen flow `mu`. Penalized mode when
/// `penalty` is set, reflected mode otherwise.
pub fn solve_dp(ms: &ModelSpec, mu: &MeasureFlow, penalty: Option<PenaltyLevel>, cfg: &DpConfig) -> Result<DpSolution> {
    let grid = DpGrid::new(ms, mu, penalty, cfg)?;
    solve_on_grid(ms, mu, &grid, cfg.relaxed_probe)
}

pub fn solve_on_grid(ms: &ModelSpec, mu: &MeasureFlow, grid: &DpGrid, relaxed_probe: bool) -> Result<DpSolution> {
    let nodes = grid.state.len();
    let steps = grid.steps;
    let nu = grid.controls.len();
    let terminal = MeasureSummary::of(mu.frame(steps), ms.coefficients().needs_sample());
    let mut values = vec![0.0; (steps + 1) * nodes];
    let mut argmin = vec![0u32; steps * nodes];
    for node in 0..nodes {
        let src = grid.snap[node];
        values[steps * nodes + node] = ms.terminal_cost(&grid.state.node(src), &terminal)?;
    }
    let mut probe_next = values[steps * nodes..].to_vec();
    let mut mixed = 0usize;
    let mut substeps = vec![0; steps];
    let mut clamped = 0;
    let mut scratch = Vec::new();
    for k in (0..steps).rev() {
        let chain = build_chain(ms, mu, grid, k)?;
        substeps[k] = chain.substeps;
        clamped += chain.clamped;
        let next = values[(k + 1) * nodes..(k + 2) * nodes].to_vec();
        let ws: Vec<Vec<f64>> = (0..nu).map(|j| evaluate_policy(&chain, j, &next, &mut scratch)).collect();
        let (mut v, mut arg) = minimize(&ws, nodes);
        for node in 0..nodes {
            if !grid.active[node] {
                v[node] = v[grid.snap[node]];
                arg[node] = arg[grid.snap[node]];
            }
        }
        values[k * nodes..(k + 1) * nodes].copy_from_slice(&v);
        argmin[k * nodes..(k + 1) * nodes].copy_from_slice(&arg);

        if relaxed_probe {
            let (pv, count) = probe_interval(&chain, &probe_next, nodes, nu, &mut scratch);
            mixed += count;
            probe_next = pv;
            for node in 0..nodes {
                if !grid.active[node] {
                    probe_next[node] = probe_next[grid.snap[node]];
                }
            }
        }
    }
    if clamped > 0 {
        log::warn!("{clamped} chain moves left the grid box and were clamped to its edge");
    }
    let value = ValueField {
        grid: grid.state.clone(),
        horizon: grid.horizon,
        steps,
        values,
        argmin,
        substeps,
    };
    let probe = relaxed_probe.then(|| {
        let initial = mu.frame(0);
        let strict0 = value.expected_initial(initial);
        let mixed0: f64 = (0..initial.len())
            .map(|i| initial.weight(i) * probe_next[grid.state.nearest(initial.point(i))])
            .sum();
        let max_gain = (0..nodes)
            .map(|node| value.value(0, node) - probe_next[node])
            .fold(0.0, f64::max);
        ProbeReport {
            gain_at_initial: strict0 - mixed0,
            max_gain,
            mixed_share: mixed as f64 / (steps * nodes) as f64,
        }
    });
    let table = FeedbackTable::new(
        grid.horizon,
        steps,
        grid.state.clone(),
        grid.controls.clone(),
        value.argmin.clone(),
    )?;
    Ok(DpSolution {
        value,
        table: Arc::new(table),
        probe,
        clamped,
    })
}

/// One interval of the probe recursion: strict controls plus the ½/½
/// mixture of the two best ones at each node.
fn probe_interval(
    chain: &IntervalChain,
    next: &[f64],
    nodes: usize,
    nu: usize,
    scratch: &mut Vec<f64>,
) -> (Vec<f64>, usize) {
    let ws: Vec<Vec<f64>> = (0..nu).map(|j| evaluate_policy(chain, j, next, scratch)).collect();
    let (strict, _) = minimize(&ws, nodes);
    if nu < 2 {
        return (strict, 0);
    }
    let mut pair = vec![(0usize, 0usize); nodes];
    for (node, p) in pair.iter_mut().enumerate() {
        let mut order: Vec<usize> = (0..nu).collect();
        order.sort_by(|&a, &b| ws[a][node].total_cmp(&ws[b][node]).then(a.cmp(&b)));
        *p = (order[0], order[1]);
    }
    let mut w = next.to_vec();
    scratch.resize(nodes, 0.0);
    for _ in 0..chain.substeps {
        for node in 0..nodes {
            let (a, b) = pair[node];
            let (ra, rb) = (&chain.rows[a], &chain.rows[b]);
            scratch[node] = if ra.start[node] == ra.start[node + 1] {
                w[node]
            } else {
                0.5 * (chain.costs[a][node] + chain.costs[b][node]) + 0.5 * (ra.apply(&w, node) + rb.apply(&w, node))
            };
        }
        std::mem::swap(&mut w, scratch);
    }
    let mut count = 0;
    let out = (0..nodes)
        .map(|node| {
            if w[node] < strict[node] {
                count += 1;
                w[node]
            } else {
                strict[node]
            }
        })
        .collect();
    (out, count)
}

/// Optimality gap of `current` under the frozen flow `mu`.
#[derive(Debug, Clone, PartialEq)]
pub struct Exploitability {
    /// `J(current) − J(best response)`, clipped below at `−3·SE`.
    pub gap: Estimate,
    /// Unclipped paired difference.
    pub raw_gap: Estimate,
    /// Per-particle costs of `current`, kept for paired comparisons.
    pub current_cost: CostEstimate,
    pub best_response_cost: Estimate,
    /// DP value averaged over the initial sample (absent when the control
    /// set is a single point and no DP is run).
    pub dp_value: Option<f64>,
}

/// Exploitability with both costs taken from rollouts under `mu` with
/// common random numbers; the DP best response supplies the comparison
/// law. The scheme of `sim` selects penalized or reflected mode.
pub fn exploitability(
    ms: &ModelSpec,
    mu: &MeasureFlow,
    current: &ControlLaw,
    sim: &SimConfig,
    dp: &DpConfig,
) -> Result<Exploitability> {
    if ms.control_grid().len() == 1 {
        return vacuous_exploitability(ms, mu, current, sim);
    }
    let best = solve_dp(ms, mu, sim.penalty, dp)?;
    exploitability_against(ms, mu, current, &best, sim)
}

/// With a one-point control set every law is optimal; only the cost is
/// estimated.
pub(crate) fn vacuous_exploitability(
    ms: &ModelSpec,
    mu: &MeasureFlow,
    current: &ControlLaw,
    sim: &SimConfig,
) -> Result<Exploitability> {
    let frozen = sim.clone().with_interaction(Interaction::Frozen);
    let (cost, _) = rollout_cost(ms, &frozen, current, mu)?;
    let zero = Estimate { mean: 0.0, se: 0.0 };
    Ok(Exploitability {
        gap: zero,
        raw_gap: zero,
        best_response_cost: cost.estimate,
        current_cost: cost,
        dp_value: None,
    })
}

/// As [`exploitability`] with a precomputed best response.
pub fn exploitability_against(
    ms: &ModelSpec,
    mu: &MeasureFlow,
    current: &ControlLaw,
    best: &DpSolution,
    sim: &SimConfig,
) -> Result<Exploitability> {
    let frozen = sim.clone().with_interaction(Interaction::Frozen);
    let cur = rollout_cost(ms, &frozen, current, mu)?;
    let opt = rollout_cost(ms, &frozen, &best.law(), mu)?;
    let raw = cur.0.paired_gap(&opt.0);
    let gap = Estimate {
        mean: raw.mean.max(-3.0 * raw.se),
        se: raw.se,
    };
    Ok(Exploitability {
        gap,
        raw_gap: raw,
        current_cost: cur.0,
        best_response_cost: opt.0.estimate,
        dp_value: Some(best.value.expected_initial(&opt.1)),
    })
}

/// Cost of `law` under frozen `mu`, with the initial sample used.
fn rollout_cost(
    ms: &ModelSpec,
    sim: &SimConfig,
    law: &ControlLaw,
    mu: &MeasureFlow,
) -> Result<(CostEstimate, EmpiricalMeasure)> {
    let paths = simulate(ms, sim, law, Some(mu))?;
    let cost = evaluate_cost(ms, &paths, mu)?;
    Ok((cost, paths.flow().frame(0).clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Coefficients, ControlSet, InitialLaw};
    use crate::presets::{builtin, PresetKind, PresetParams};
    use crate::simulator::Scheme;

    fn lq(domain: ConvexDomain, controls: ControlGrid, params: &[(&str, f64)]) -> ModelSpec {
        let p: PresetParams = params.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        let c = builtin(PresetKind::LqControl, 1, &p).unwrap();
        ModelSpec::new(domain, 1.0, 1, ControlSet::Finite(controls), Arc::new(c), InitialLaw::Dirac(vec![0.0])).unwrap()
    }

    fn flat_flow(steps: usize) -> MeasureFlow {
        MeasureFlow::constant(1.0, steps, EmpiricalMeasure::dirac(&[0.0]).unwrap()).unwrap()
    }

    fn three() -> ControlGrid {
        ControlGrid::from_points(1, vec![-1.0, 0.0, 1.0]).unwrap()
    }

    fn mean_var(row: impl Iterator<Item = (usize, f64)>, grid: &StateGrid, x: f64) -> (f64, f64, f64) {
        let (mut s, mut m, mut v) = (0.0, 0.0, 0.0);
        for (t, p) in row {
            let dx = grid.node(t)[0] - x;
            s += p;
            m += p * dx;
            v += p * dx * dx;
        }
        (s, m, v)
    }

    #[test]
    fn symmetric_interior_row() {
        let ms = lq(
            ConvexDomain::cuboid(vec![-1.0], vec![1.0]).unwrap(),
            ControlGrid::singleton(&[0.0]).unwrap(),
            &[("sigma", 1.0)],
        );
        let mu = flat_flow(10);
        let grid = DpGrid::new(&ms, &mu, None, &DpConfig::new(0.05)).unwrap();
        let chain = build_chain(&ms, &mu, &grid, 0).unwrap();
        let node = grid.state().nearest(&[0.0]);
        let (s, m, v) = mean_var(chain.rows[0].row(node), grid.state(), 0.0);
        assert!((s - 1.0).abs() < 1e-12);
        assert!(m.abs() < 1e-15);
        assert!((v - chain.delta).abs() < 1e-12);
    }

    #[test]
    fn penalized_row_points_back() {
        let ms = lq(
            ConvexDomain::half_line(0.0).unwrap(),
            ControlGrid::singleton(&[0.0]).unwrap(),
            &[("sigma", 0.5)],
        );
        let mu = flat_flow(10);
        let n = PenaltyLevel::new(64).unwrap();
        let cfg = DpConfig::new(0.01).with_box(vec![0.0], vec![1.0]);
        let grid = DpGrid::new(&ms, &mu, Some(n), &cfg).unwrap();
        assert!(grid.state().lower()[0] < 0.0);
        let chain = build_chain(&ms, &mu, &grid, 0).unwrap();
        let node = grid.state().nearest(&[-0.05]);
        let x = grid.state().node(node)[0];
        let (s, m, v) = mean_var(chain.rows[0].row(node), grid.state(), x);
        assert!((s - 1.0).abs() < 1e-12);
        // mean = −n·dist·δ exactly for the upwind scheme
        assert!((m - 64.0 * (-x) * chain.delta).abs() < 1e-12);
        let h = grid.hx();
        assert!((v - 0.25 * chain.delta).abs() <= h * 64.0 * x.abs() * chain.delta + 1e-12);
    }

    #[test]
    fn reflecting_rows_stay_in_domain() {
        let ms = lq(ConvexDomain::half_line(0.0).unwrap(), three(), &[("sigma", 1.0), ("h", 2.0)]);
        let mu = flat_flow(10);
        let cfg = DpConfig::new(0.05).with_box(vec![-1.0], vec![1.0]);
        let grid = DpGrid::new(&ms, &mu, None, &cfg).unwrap();
        assert_eq!(grid.state().lower()[0], 0.0);
        let chain = build_chain(&ms, &mu, &grid, 0).unwrap();
        let edge = grid.state().nearest(&[0.0]);
        for j in 0..3 {
            let row: Vec<_> = chain.rows[j].row(edge).collect();
            assert!((row.iter().map(|r| r.1).sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&(t, _)| grid.state().node(t)[0] >= 0.0));
        }
        // the outward move of the boundary node is charged h·hx
        let p_out = chain.rows[0].row(edge).next().map(|_| ()).is_some();
        assert!(p_out);
        assert!(chain.costs[0][edge] > 0.0);
    }

    #[test]
    fn control_free_costs_give_uncontrolled_value_and_index_zero() {
        struct Flat;
        impl Coefficients for Flat {
            fn drift(&self, _: f64, _: &[f64], _: &MeasureSummary, _: &[f64], o: &mut [f64]) {
                o.fill(0.0)
            }
            fn diffusion(&self, _: f64, _: &[f64], _: &MeasureSummary, _: &[f64], o: &mut [f64]) {
                o.fill(1.0)
            }
            fn running_cost(&self, _: f64, x: &[f64], _: &MeasureSummary, _: &[f64]) -> f64 {
                x[0] * x[0]
            }
            fn boundary_cost(&self, _: f64, _: &[f64], _: &MeasureSummary) -> f64 {
                0.0
            }
            fn terminal_cost(&self, _: &[f64], _: &MeasureSummary) -> f64 {
                0.0
            }
        }
        let ms = ModelSpec::new(
            ConvexDomain::cuboid(vec![-2.0], vec![2.0]).unwrap(),
            1.0,
            1,
            ControlSet::Finite(three()),
            Arc::new(Flat),
            InitialLaw::Dirac(vec![0.0]),
        )
        .unwrap();
        let sol = solve_dp(&ms, &flat_flow(20), None, &DpConfig::new(0.1)).unwrap();
        assert!(sol.value.argmin.iter().all(|&a| a == 0));
        // E∫B_t² dt = ½ without reflection; the box reflection at ±2 barely matters
        let v0 = sol.value.value_at(0, &[0.0]);
        assert!((v0 - 0.5).abs() < 0.05, "{v0}");
    }

    #[test]
    fn zero_costs_give_zero_value() {
        let ms = lq(
            ConvexDomain::cuboid(vec![-1.0], vec![1.0]).unwrap(),
            three(),
            &[("r", 0.0), ("c", 0.0), ("gamma", 0.0)],
        );
        let sol = solve_dp(&ms, &flat_flow(10), None, &DpConfig::new(0.1)).unwrap();
        assert!(sol.value.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_shift_and_monotonicity() {
        let dom = ConvexDomain::cuboid(vec![-1.0], vec![1.0]).unwrap();
        let mu = flat_flow(20);
        let base = lq(dom.clone(), three(), &[]);
        let shifted = lq(dom.clone(), three(), &[]);
        let v = solve_dp(&base, &mu, None, &DpConfig::new(0.05)).unwrap().value;

        struct Shift(Arc<dyn Coefficients>, f64);
        impl Coefficients for Shift {
            fn drift(&self, t: f64, x: &[f64], m: &MeasureSummary, u: &[f64], o: &mut [f64]) {
                self.0.drift(t, x, m, u, o)
            }
            fn diffusion(&self, t: f64, x: &[f64], m: &MeasureSummary, u: &[f64], o: &mut [f64]) {
                self.0.diffusion(t, x, m, u, o)
            }
            fn running_cost(&self, t: f64, x: &[f64], m: &MeasureSummary, u: &[f64]) -> f64 {
                self.0.running_cost(t, x, m, u)
            }
            fn boundary_cost(&self, t: f64, x: &[f64], m: &MeasureSummary) -> f64 {
                self.0.boundary_cost(t, x, m)
            }
            fn terminal_cost(&self, x: &[f64], m: &MeasureSummary) -> f64 {
                self.0.terminal_cost(x, m) + self.1
            }
        }
        let inner: Arc<dyn Coefficients> = Arc::new(builtin(PresetKind::LqControl, 1, &PresetParams::new()).unwrap());
        let ms2 = shifted.with_coefficients(Arc::new(Shift(inner, 0.75)));
        let v2 = solve_dp(&ms2, &mu, None, &DpConfig::new(0.05)).unwrap().value;
        for (a, b) in v.values.iter().zip(&v2.values) {
            assert!((b - a - 0.75).abs() < 1e-9);
        }

        let cheaper = lq(dom, three(), &[("c", 0.1)]);
        let v3 = solve_dp(&cheaper, &mu, None, &DpConfig::new(0.05)).unwrap().value;
        assert!(v3.values.iter().zip(&v.values).all(|(a, b)| *a <= *b + 1e-9));
    }

    #[test]
    fn dp_value_matches_rollout() {
        let ms = lq(ConvexDomain::cuboid(vec![-1.0], vec![1.0]).unwrap(), three(), &[]);
        let mu = flat_flow(50);
        let sol = solve_dp(&ms, &mu, None, &DpConfig::new(0.02)).unwrap();
        let sim = SimConfig::new(4000, 50, Scheme::ReflectedProjected, 5).with_interaction(Interaction::Frozen);
        let paths = simulate(&ms, &sim, &sol.law(), Some(&mu)).unwrap();
        let j = evaluate_cost(&ms, &paths, &mu).unwrap();
        let v0 = sol.value.value_at(0, &[0.0]);
        assert!((j.mean() - v0).abs() <= 3.0 * j.se() + 0.05, "{} vs {v0}", j.estimate);
    }

    #[test]
    fn exploitability_self_and_perturbed() {
        let ms = lq(ConvexDomain::cuboid(vec![-1.0], vec![1.0]).unwrap(), three(), &[("c", 2.0)]);
        let mu = flat_flow(40);
        let dp = DpConfig::new(0.05);
        let sim = SimConfig::new(2000, 40, Scheme::ReflectedProjected, 21);
        let best = solve_dp(&ms, &mu, None, &dp).unwrap();
        let e = exploitability_against(&ms, &mu, &best.law(), &best, &sim).unwrap();
        assert!(e.gap.mean.abs() <= 3.0 * e.gap.se.max(1e-12));
        let bad = ControlLaw::Constant(vec![1.0]);
        let e = exploitability_against(&ms, &mu, &bad, &best, &sim).unwrap();
        assert!(e.gap.mean > 3.0 * e.gap.se, "{:?}", e.gap);
    }

    #[test]
    fn probe_never_hurts() {
        let ms = lq(ConvexDomain::cuboid(vec![-1.0], vec![1.0]).unwrap(), three(), &[]);
        let mut cfg = DpConfig::new(0.05);
        cfg.relaxed_probe = true;
        let sol = solve_dp(&ms, &flat_flow(20), None, &cfg).unwrap();
        let p = sol.probe.unwrap();
        assert!(p.gain_at_initial >= 0.0 && p.max_gain >= 0.0);
    }

    #[test]
    fn rejects_high_dimension_and_unbounded() {
        let ms = lq(ConvexDomain::half_line(0.0).unwrap(), three(), &[]);
        assert!(solve_dp(&ms, &flat_flow(5), None, &DpConfig::new(0.1)).is_err());
    }
}
