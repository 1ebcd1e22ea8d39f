//! Strict and relaxed control laws, chattering of relaxed controls into
//! switching strict controls, and the binned Markovian projection.

use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::measures::TimedControlMeasure;
use crate::model::{ControlGrid, ControlSet};
use crate::simulator::{AppliedControls, PathBundle};

/// Slack used when mapping a time onto a grid cell.
const TIME_SLACK: f64 = 1e-9;

#[inline]
pub(crate) fn cell_index(t: f64, dt: f64, cells: usize) -> usize {
    ((t / dt + TIME_SLACK).floor().max(0.0) as usize).min(cells.saturating_sub(1))
}

/// Uniform tensor grid of nodes in `R^d` with nearest-node lookup.
#[derive(Debug, Clone, PartialEq)]
pub struct StateGrid {
    lower: Vec<f64>,
    spacing: Vec<f64>,
    counts: Vec<usize>,
}

impl StateGrid {
    pub fn new(lower: Vec<f64>, spacing: Vec<f64>, counts: Vec<usize>) -> Result<Self> {
        if lower.is_empty() || lower.len() != spacing.len() || lower.len() != counts.len() {
            return Err(Error::InvalidInput("state grid axes disagree".into()));
        }
        if spacing.iter().any(|h| !(h.is_finite() && *h > 0.0)) || counts.contains(&0) {
            return Err(Error::InvalidInput("state grid needs positive spacing and counts".into()));
        }
        Ok(Self {
            lower,
            spacing,
            counts,
        })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|k| self.lower[k] + self.spacing[k] * (self.counts[k] - 1) as f64)
            .collect()
    }

    /// Flat index from per-axis indices (last axis fastest).
    pub fn flat(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.counts).fold(0, |acc, (i, c)| acc * c + i)
    }

    pub fn unflat(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for k in (0..self.dim()).rev() {
            idx[k] = flat % self.counts[k];
            flat /= self.counts[k];
        }
        idx
    }

    pub fn node(&self, flat: usize) -> Vec<f64> {
        self.unflat(flat)
            .iter()
            .enumerate()
            .map(|(k, &i)| self.lower[k] + self.spacing[k] * i as f64)
            .collect()
    }

    /// Per-axis index of the nearest node, clamped to the grid.
    pub fn nearest_axis(&self, k: usize, v: f64) -> usize {
        let r = ((v - self.lower[k]) / self.spacing[k]).round();
        if r <= 0.0 || !r.is_finite() {
            0
        } else {
            (r as usize).min(self.counts[k] - 1)
        }
    }

    pub fn nearest(&self, x: &[f64]) -> usize {
        let mut flat = 0;
        for k in 0..self.dim() {
            flat = flat * self.counts[k] + self.nearest_axis(k, x[k]);
        }
        flat
    }
}

/// Strict feedback `α(t, x) ∈ U`.
pub trait StrictFeedback: Send + Sync {
    fn control(&self, t: f64, x: &[f64], out: &mut [f64]);
}

impl<F> StrictFeedback for F
where
    F: Fn(f64, &[f64], &mut [f64]) + Send + Sync,
{
    fn control(&self, t: f64, x: &[f64], out: &mut [f64]) {
        self(t, x, out)
    }
}

/// Relaxed feedback `q(t, x)`: probability weights over a control grid.
pub trait RelaxedFeedback: Send + Sync {
    fn grid(&self) -> &ControlGrid;
    fn weights(&self, t: f64, x: &[f64], out: &mut [f64]);
}

/// Strict feedback tabulated on a state grid, one atom per time cell and node.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackTable {
    pub(crate) horizon: f64,
    pub(crate) cells: usize,
    pub(crate) grid: StateGrid,
    pub(crate) controls: ControlGrid,
    /// `[cells][nodes]`
    pub(crate) atoms: Vec<u32>,
}

impl FeedbackTable {
    pub fn new(
        horizon: f64,
        cells: usize,
        grid: StateGrid,
        controls: ControlGrid,
        atoms: Vec<u32>,
    ) -> Result<Self> {
        if cells == 0 || atoms.len() != cells * grid.len() {
            return Err(Error::InvalidInput("feedback table has wrong size".into()));
        }
        if atoms.iter().any(|&a| a as usize >= controls.len()) {
            return Err(Error::InvalidInput("feedback table refers to a missing atom".into()));
        }
        Ok(Self {
            horizon,
            cells,
            grid,
            controls,
            atoms,
        })
    }

    pub fn grid(&self) -> &StateGrid {
        &self.grid
    }

    pub fn controls(&self) -> &ControlGrid {
        &self.controls
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn atom_at(&self, t: f64, x: &[f64]) -> usize {
        let c = cell_index(t, self.horizon / self.cells as f64, self.cells);
        self.atoms[c * self.grid.len() + self.grid.nearest(x)] as usize
    }

    pub fn atom_at_node(&self, cell: usize, node: usize) -> usize {
        self.atoms[cell * self.grid.len() + node] as usize
    }

    /// A copy with `f` applied to every entry, e.g. to build perturbed laws.
    pub fn map_atoms(&self, mut f: impl FnMut(usize, usize, usize) -> usize) -> Result<Self> {
        let n = self.grid.len();
        let atoms = self
            .atoms
            .iter()
            .enumerate()
            .map(|(k, &a)| f(k / n, k % n, a as usize) as u32)
            .collect();
        Self::new(self.horizon, self.cells, self.grid.clone(), self.controls.clone(), atoms)
    }
}

/// Relaxed feedback tabulated on per-cell state bins.
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxedTable {
    horizon: f64,
    controls: ControlGrid,
    /// one binning per time cell
    bins: Vec<StateGrid>,
    /// `[cell][bin][atom]`, flattened per cell
    weights: Vec<Vec<f64>>,
}

impl RelaxedTable {
    pub fn cells(&self) -> usize {
        self.bins.len()
    }

    pub fn bins(&self, cell: usize) -> &StateGrid {
        &self.bins[cell]
    }

    pub fn bin_weights(&self, cell: usize, bin: usize) -> &[f64] {
        let k = self.controls.len();
        &self.weights[cell][bin * k..(bin + 1) * k]
    }
}

impl RelaxedFeedback for RelaxedTable {
    fn grid(&self) -> &ControlGrid {
        &self.controls
    }

    fn weights(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let c = cell_index(t, self.horizon / self.cells() as f64, self.cells());
        out.copy_from_slice(self.bin_weights(c, self.bins[c].nearest(x)));
    }
}

/// Strict piecewise-constant open-loop control: one atom per time cell.
#[derive(Debug, Clone, PartialEq)]
pub struct StrictSchedule {
    pub horizon: f64,
    pub controls: ControlGrid,
    pub atoms: Vec<usize>,
}

impl StrictSchedule {
    pub fn dt(&self) -> f64 {
        self.horizon / self.atoms.len() as f64
    }

    pub fn atom_at(&self, t: f64) -> usize {
        self.atoms[cell_index(t, self.dt(), self.atoms.len())]
    }

    /// The schedule as a (Dirac-valued) relaxed control, for `d_U`.
    pub fn as_measure(&self) -> Result<TimedControlMeasure> {
        TimedControlMeasure::strict(self.horizon, self.controls.clone(), &self.atoms)
    }
}

/// A control law as consumed by the simulator.
#[derive(Clone)]
pub enum ControlLaw {
    Constant(Vec<f64>),
    /// User feedback; outputs are checked against `U`.
    StrictFeedback(Arc<dyn StrictFeedback>),
    /// Grid-valued feedback (e.g. a dynamic-programming argmin).
    Table(Arc<FeedbackTable>),
    StrictOpenLoop(Arc<StrictSchedule>),
    RelaxedFeedback(Arc<dyn RelaxedFeedback>),
    RelaxedOpenLoop(Arc<TimedControlMeasure>),
    /// Chattering of a relaxed feedback evaluated at the current state.
    Chattered {
        base: Arc<dyn RelaxedFeedback>,
        period: f64,
        dt: f64,
        horizon: f64,
    },
}

impl std::fmt::Debug for ControlLaw {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ControlLaw::Constant(u) => write!(f, "Constant({u:?})"),
            ControlLaw::StrictFeedback(_) => write!(f, "StrictFeedback(..)"),
            ControlLaw::Table(t) => write!(f, "Table({} cells, {} nodes)", t.cells, t.grid.len()),
            ControlLaw::StrictOpenLoop(s) => write!(f, "StrictOpenLoop({} cells)", s.atoms.len()),
            ControlLaw::RelaxedFeedback(_) => write!(f, "RelaxedFeedback(..)"),
            ControlLaw::RelaxedOpenLoop(q) => write!(f, "RelaxedOpenLoop({} cells)", q.cells()),
            ControlLaw::Chattered { period, .. } => write!(f, "Chattered(period {period})"),
        }
    }
}

/// Control drawn for one particle-step. `weights` is set for relaxed laws.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlDraw {
    pub u: Vec<f64>,
    pub weights: Option<Vec<f64>>,
}

impl ControlLaw {
    /// Control grid for laws that draw from one; `None` for constant and
    /// free-form feedback.
    pub fn grid(&self) -> Option<&ControlGrid> {
        match self {
            ControlLaw::Constant(_) | ControlLaw::StrictFeedback(_) => None,
            ControlLaw::Table(t) => Some(&t.controls),
            ControlLaw::StrictOpenLoop(s) => Some(&s.controls),
            ControlLaw::RelaxedFeedback(q) => Some(q.grid()),
            ControlLaw::RelaxedOpenLoop(q) => Some(q.grid()),
            ControlLaw::Chattered { base, .. } => Some(base.grid()),
        }
    }

    pub fn is_relaxed(&self) -> bool {
        matches!(self, ControlLaw::RelaxedFeedback(_) | ControlLaw::RelaxedOpenLoop(_))
    }

    /// Chattered version of a relaxed feedback law.
    pub fn chattered(base: Arc<dyn RelaxedFeedback>, period: f64, dt: f64, horizon: f64) -> Result<Self> {
        block_cells(period, dt)?;
        Ok(ControlLaw::Chattered {
            base,
            period,
            dt,
            horizon,
        })
    }
}

/// Draw `u ∈ U` from `law` at `(t, x)`. Strict laws ignore `rng`.
pub fn sample_control<R: Rng + ?Sized>(
    law: &ControlLaw,
    controls: &ControlSet,
    t: f64,
    x: &[f64],
    rng: &mut R,
) -> Result<ControlDraw> {
    let u_dim = controls.dim();
    let draw = match law {
        ControlLaw::Constant(u) => ControlDraw {
            u: u.clone(),
            weights: None,
        },
        ControlLaw::StrictFeedback(a) => {
            let mut u = vec![0.0; u_dim];
            a.control(t, x, &mut u);
            ControlDraw { u, weights: None }
        }
        ControlLaw::Table(tab) => ControlDraw {
            u: tab.controls.atom(tab.atom_at(t, x)).to_vec(),
            weights: None,
        },
        ControlLaw::StrictOpenLoop(s) => ControlDraw {
            u: s.controls.atom(s.atom_at(t)).to_vec(),
            weights: None,
        },
        ControlLaw::RelaxedFeedback(q) => {
            let mut w = vec![0.0; q.grid().len()];
            q.weights(t, x, &mut w);
            let j = categorical(&w, rng.random::<f64>());
            ControlDraw {
                u: q.grid().atom(j).to_vec(),
                weights: Some(w),
            }
        }
        ControlLaw::RelaxedOpenLoop(q) => {
            let w = q.cell_weights(q.cell_at(t)).to_vec();
            let j = categorical(&w, rng.random::<f64>());
            ControlDraw {
                u: q.grid().atom(j).to_vec(),
                weights: Some(w),
            }
        }
        ControlLaw::Chattered {
            base,
            period,
            dt,
            horizon,
        } => {
            let j = chattered_feedback_atom(base.as_ref(), *period, *dt, *horizon, t, x)?;
            ControlDraw {
                u: base.grid().atom(j).to_vec(),
                weights: None,
            }
        }
    };
    if draw.u.len() != u_dim || !controls.contains(&draw.u) {
        return Err(Error::ContractViolation(format!(
            "control law emitted {:?} outside the control set",
            draw.u
        )));
    }
    Ok(draw)
}

/// Inverse-CDF draw from normalized weights.
pub(crate) fn categorical(w: &[f64], uniform: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (j, &p) in w.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = j;
            if uniform < acc {
                return j;
            }
        }
    }
    last
}

/// Number of `dt` cells in one chattering block.
fn block_cells(period: f64, dt: f64) -> Result<usize> {
    if !(period.is_finite() && dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidInput("chattering needs finite positive period and step".into()));
    }
    if period < dt * (1.0 - 1e-12) {
        return Err(Error::InvalidInput(format!(
            "switching period {period} is shorter than the time step {dt}"
        )));
    }
    let k = (period / dt).round();
    if ((period / dt) - k).abs() > 1e-9 * k.max(1.0) {
        return Err(Error::InvalidInput(format!(
            "switching period {period} is not a multiple of the time step {dt}"
        )));
    }
    Ok(k as usize)
}

/// Largest-remainder split of `cells` lattice cells between atoms in
/// proportion to `weights`; leftover cells go to the largest remainders,
/// smaller atom index first on ties.
pub fn allocate_cells(weights: &[f64], cells: usize) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    let ideal: Vec<f64> = weights.iter().map(|w| w / total * cells as f64).collect();
    let mut counts: Vec<usize> = ideal.iter().map(|v| v.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = ideal[a] - ideal[a].floor();
        let rb = ideal[b] - ideal[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &j in order.iter().take(cells.saturating_sub(assigned)) {
        counts[j] += 1;
    }
    counts
}

/// Fill one block's cells with atoms in grid order according to `counts`.
fn fill_block(counts: &[usize], out: &mut Vec<usize>) {
    for (j, &c) in counts.iter().enumerate() {
        out.extend(std::iter::repeat_n(j, c));
    }
}

/// Chatter an open-loop relaxed control with switching period `period`.
/// The lattice is the control measure's own time cells.
pub fn chattering(q: &TimedControlMeasure, period: f64) -> Result<StrictSchedule> {
    let k = block_cells(period, q.dt())?;
    let cells = q.cells();
    let atoms_n = q.grid().len();
    let mut atoms = Vec::with_capacity(cells);
    let mut start = 0;
    while start < cells {
        let end = (start + k).min(cells);
        let mut avg = vec![0.0; atoms_n];
        for c in start..end {
            for (a, w) in avg.iter_mut().zip(q.cell_weights(c)) {
                *a += w;
            }
        }
        fill_block(&allocate_cells(&avg, end - start), &mut atoms);
        start = end;
    }
    Ok(StrictSchedule {
        horizon: q.horizon(),
        controls: q.grid().clone(),
        atoms,
    })
}

/// Atom active at time `t` when chattering a relaxed feedback at fixed `x`.
fn chattered_feedback_atom(
    base: &dyn RelaxedFeedback,
    period: f64,
    dt: f64,
    horizon: f64,
    t: f64,
    x: &[f64],
) -> Result<usize> {
    let k = block_cells(period, dt)?;
    let cells = (horizon / dt).round() as usize;
    let c = cell_index(t, dt, cells);
    let start = (c / k) * k;
    let end = (start + k).min(cells);
    let mut avg = vec![0.0; base.grid().len()];
    let mut w = vec![0.0; avg.len()];
    for cc in start..end {
        base.weights(cc as f64 * dt, x, &mut w);
        for (a, v) in avg.iter_mut().zip(&w) {
            *a += v;
        }
    }
    let counts = allocate_cells(&avg, end - start);
    let mut pos = c - start;
    for (j, &n) in counts.iter().enumerate() {
        if pos < n {
            return Ok(j);
        }
        pos -= n;
    }
    Ok(counts.len() - 1)
}

/// Binning used by [`markovian_projection`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BinSpec {
    pub per_axis: usize,
}

impl Default for BinSpec {
    fn default() -> Self {
        Self { per_axis: 32 }
    }
}

/// Estimate `q̂(t, x) = E[Q_t | X_t = x]` by averaging the applied control
/// weights of the particles in each state bin, per time cell. Bins span
/// the empirical state range of that cell; empty bins copy the nearest
/// nonempty bin.
pub fn markovian_projection(paths: &PathBundle, controls: &ControlGrid, bins: BinSpec) -> Result<RelaxedTable> {
    let d = paths.dim();
    if d > 2 {
        return Err(Error::InvalidInput("markovian projection supports d <= 2".into()));
    }
    if paths.particles() == 0 {
        return Err(Error::InvalidInput("no particles to project".into()));
    }
    if bins.per_axis == 0 {
        return Err(Error::InvalidInput("need at least one bin per axis".into()));
    }
    let k_atoms = controls.len();
    let weights_of = |step: usize, i: usize, out: &mut [f64]| -> Result<()> {
        out.fill(0.0);
        match paths.controls() {
            AppliedControls::Constant(u) => out[controls.nearest(u)] = 1.0,
            AppliedControls::Strict { .. } => {
                out[controls.nearest(paths.control(step, i).unwrap_or(&[]))] = 1.0
            }
            AppliedControls::Relaxed { grid, .. } => {
                if grid != controls {
                    return Err(Error::GridMismatch("path weights use another control grid".into()));
                }
                out.copy_from_slice(paths.relaxed_weights(step, i).unwrap_or(&[]));
            }
        }
        Ok(())
    };

    let mut all_bins = Vec::with_capacity(paths.steps());
    let mut all_weights = Vec::with_capacity(paths.steps());
    let mut w = vec![0.0; k_atoms];
    for step in 0..paths.steps() {
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for i in 0..paths.particles() {
            for (a, &v) in paths.x(step, i).iter().enumerate() {
                lo[a] = lo[a].min(v);
                hi[a] = hi[a].max(v);
            }
        }
        let width: Vec<f64> = (0..d)
            .map(|a| {
                let span = hi[a] - lo[a];
                if span > 0.0 {
                    span / bins.per_axis as f64
                } else {
                    1.0
                }
            })
            .collect();
        let counts: Vec<usize> = (0..d)
            .map(|a| if hi[a] > lo[a] { bins.per_axis } else { 1 })
            .collect();
        let centers: Vec<f64> = (0..d).map(|a| lo[a] + 0.5 * width[a]).collect();
        let grid = StateGrid::new(centers, width, counts)?;
        let nb = grid.len();
        let mut sums = vec![0.0; nb * k_atoms];
        let mut mass = vec![0usize; nb];
        for i in 0..paths.particles() {
            let b = grid.nearest(paths.x(step, i));
            weights_of(step, i, &mut w)?;
            for (s, v) in sums[b * k_atoms..(b + 1) * k_atoms].iter_mut().zip(&w) {
                *s += v;
            }
            mass[b] += 1;
        }
        for b in 0..nb {
            if mass[b] > 0 {
                let row = &mut sums[b * k_atoms..(b + 1) * k_atoms];
                let total: f64 = row.iter().sum();
                row.iter_mut().for_each(|v| *v /= total);
            }
        }
        // Empty bins inherit the nearest nonempty bin (index distance).
        let filled: Vec<usize> = (0..nb).filter(|&b| mass[b] > 0).collect();
        for b in 0..nb {
            if mass[b] == 0 {
                let ib = grid.unflat(b);
                let src = *filled
                    .iter()
                    .min_by_key(|&&f| {
                        grid.unflat(f)
                            .iter()
                            .zip(&ib)
                            .map(|(a, c)| a.abs_diff(*c).pow(2))
                            .sum::<usize>()
                    })
                    .expect("at least one particle per step");
                let (lo_b, hi_b) = (src * k_atoms, (src + 1) * k_atoms);
                let copy: Vec<f64> = sums[lo_b..hi_b].to_vec();
                sums[b * k_atoms..(b + 1) * k_atoms].copy_from_slice(&copy);
            }
        }
        all_bins.push(grid);
        all_weights.push(sums);
    }
    Ok(RelaxedTable {
        horizon: paths.horizon(),
        controls: controls.clone(),
        bins: all_bins,
        weights: all_weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Lane};

    fn pm_one() -> ControlGrid {
        ControlGrid::from_points(1, vec![-1.0, 1.0]).unwrap()
    }

    #[test]
    fn strict_and_dirac_laws() {
        let set = ControlSet::Finite(pm_one());
        let mut rng = stream(1, 0, 0, Lane::Control);
        let c = ControlLaw::Constant(vec![1.0]);
        for _ in 0..10 {
            assert_eq!(sample_control(&c, &set, 0.3, &[0.0], &mut rng).unwrap().u, vec![1.0]);
        }
        let q = TimedControlMeasure::stationary(1.0, 4, pm_one(), &[0.0, 1.0]).unwrap();
        let law = ControlLaw::RelaxedOpenLoop(Arc::new(q));
        for _ in 0..100 {
            assert_eq!(sample_control(&law, &set, 0.7, &[0.0], &mut rng).unwrap().u, vec![1.0]);
        }
    }

    #[test]
    fn relaxed_half_half_frequency() {
        let set = ControlSet::Finite(pm_one());
        let q = TimedControlMeasure::stationary(1.0, 1, pm_one(), &[0.5, 0.5]).unwrap();
        let law = ControlLaw::RelaxedOpenLoop(Arc::new(q));
        let draws = 100_000;
        let mut plus = 0;
        for i in 0..draws {
            let mut rng = stream(5, i, 0, Lane::Control);
            if sample_control(&law, &set, 0.5, &[0.0], &mut rng).unwrap().u[0] > 0.0 {
                plus += 1;
            }
        }
        let freq = plus as f64 / draws as f64;
        // binomial sd is 0.0016; ±0.01 is more than 6 sd
        assert!((freq - 0.5).abs() <= 0.01, "{freq}");
    }

    #[test]
    fn out_of_set_feedback_is_rejected() {
        let set = ControlSet::Finite(pm_one());
        let f = |_t: f64, _x: &[f64], out: &mut [f64]| out[0] = 0.5;
        let law = ControlLaw::StrictFeedback(Arc::new(f));
        let mut rng = stream(1, 0, 0, Lane::Control);
        assert!(matches!(
            sample_control(&law, &set, 0.0, &[0.0], &mut rng),
            Err(Error::ContractViolation(_))
        ));
    }

    #[test]
    fn chattering_examples() {
        let q = TimedControlMeasure::stationary(1.0, 20, pm_one(), &[0.5, 0.5]).unwrap();
        let s = chattering(&q, 0.2).unwrap();
        assert_eq!(&s.atoms[..8], &[0, 0, 1, 1, 0, 0, 1, 1]);
        let dirac = TimedControlMeasure::stationary(1.0, 20, pm_one(), &[0.0, 1.0]).unwrap();
        for period in [0.05, 0.1, 0.25, 1.0] {
            assert!(chattering(&dirac, period).unwrap().atoms.iter().all(|&a| a == 1));
        }
        assert!(chattering(&q, 0.01).is_err());
        assert!(chattering(&q, 0.07).is_err());
    }

    #[test]
    fn largest_remainder_allocation() {
        assert_eq!(allocate_cells(&[0.5, 0.5], 4), vec![2, 2]);
        assert_eq!(allocate_cells(&[0.5, 0.5], 3), vec![2, 1]);
        assert_eq!(allocate_cells(&[0.2, 0.3, 0.5], 3), vec![1, 1, 1]);
        assert_eq!(allocate_cells(&[0.1, 0.0, 0.9], 5), vec![1, 0, 4]);
        assert_eq!(allocate_cells(&[0.1, 0.0, 0.9], 10), vec![1, 0, 9]);
    }

    #[test]
    fn nearest_node_lookup() {
        let g = StateGrid::new(vec![0.0, -1.0], vec![0.5, 1.0], vec![3, 3]).unwrap();
        assert_eq!(g.len(), 9);
        assert_eq!(g.nearest(&[0.6, 0.2]), g.flat(&[1, 1]));
        assert_eq!(g.nearest(&[-5.0, 9.0]), g.flat(&[0, 2]));
        assert_eq!(g.node(g.flat(&[2, 0])), vec![1.0, -1.0]);
    }
}
