//! Empirical measures, measure flows and the Wasserstein-2 distances used
//! for fixed-point residuals and the relaxed-control metric.

use crate::error::{ensure_finite, Error, Result};
use crate::geometry::dist_sq;
use crate::model::ControlGrid;
use crate::transport::{assignment, exact_transport, sinkhorn, CostMatrix, SinkhornSettings};

/// Largest `N_μ · N_ν` for which distances are solved exactly.
pub const EXACT_PAIR_LIMIT: usize = 40_000;

const WEIGHT_TOL: f64 = 1e-12;

/// A finitely supported probability measure on `R^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    dim: usize,
    samples: Vec<f64>,
    weights: Option<Vec<f64>>,
}

impl EmpiricalMeasure {
    /// Uniform measure over `samples`, stored row-major with `dim` columns.
    pub fn uniform(dim: usize, samples: Vec<f64>) -> Result<Self> {
        if dim == 0 || samples.is_empty() || !samples.len().is_multiple_of(dim) {
            return Err(Error::InvalidInput(format!(
                "empirical measure needs N >= 1 points of dimension {dim}, got {} values",
                samples.len()
            )));
        }
        ensure_finite("empirical samples", &samples)?;
        Ok(Self {
            dim,
            samples,
            weights: None,
        })
    }

    pub fn weighted(dim: usize, samples: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let mut m = Self::uniform(dim, samples)?;
        if weights.len() != m.len() {
            return Err(Error::InvalidInput(format!(
                "{} weights for {} samples",
                weights.len(),
                m.len()
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidInput("weights must be finite and nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_TOL {
            return Err(Error::InvalidInput(format!("weights sum to {total}, not 1")));
        }
        m.weights = Some(weights);
        Ok(m)
    }

    pub fn dirac(point: &[f64]) -> Result<Self> {
        Self::uniform(point.len(), point.to_vec())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.samples.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.samples[i * self.dim..(i + 1) * self.dim]
    }

    pub fn weight(&self, i: usize) -> f64 {
        match &self.weights {
            Some(w) => w[i],
            None => 1.0 / self.len() as f64,
        }
    }

    pub fn is_uniform(&self) -> bool {
        self.weights.is_none()
    }

    fn weight_vec(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.weight(i)).collect()
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for i in 0..self.len() {
            let w = self.weight(i);
            for (mk, xk) in m.iter_mut().zip(self.point(i)) {
                *mk += w * xk;
            }
        }
        m
    }

    /// `∫ |z|^2 μ(dz)`.
    pub fn second_moment(&self) -> f64 {
        (0..self.len())
            .map(|i| self.weight(i) * self.point(i).iter().map(|v| v * v).sum::<f64>())
            .sum()
    }

    /// Scale every sample by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        Self {
            dim: self.dim,
            samples: self.samples.iter().map(|v| v * s).collect(),
            weights: self.weights.clone(),
        }
    }
}

/// How a W2 value was obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum W2Method {
    /// Quantile coupling on the line.
    Quantile,
    /// Exact discrete transport.
    Exact,
    /// Debiased entropic approximation at the given absolute regularization.
    Entropic { epsilon: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct W2Estimate {
    pub value: f64,
    pub method: W2Method,
}

/// Solver selection for [`w2_with`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum W2Solver {
    /// Quantile coupling in 1D, exact up to [`EXACT_PAIR_LIMIT`], entropic above.
    #[default]
    Auto,
    ForceExact,
    ForceEntropic,
}

fn canonical_order(a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> bool {
    let key = |m: &EmpiricalMeasure| (m.samples.len(), m.weights.as_ref().map_or(0, |w| w.len()));
    match key(a).cmp(&key(b)) {
        std::cmp::Ordering::Equal => {}
        o => return o.is_lt(),
    }
    let lex = |x: &[f64], y: &[f64]| {
        x.iter()
            .zip(y)
            .map(|(p, q)| p.total_cmp(q))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    };
    match lex(&a.samples, &b.samples) {
        std::cmp::Ordering::Equal => {}
        o => return o.is_lt(),
    }
    match (&a.weights, &b.weights) {
        (Some(x), Some(y)) => lex(x, y).is_le(),
        _ => true,
    }
}

/// Wasserstein-2 distance between two empirical measures.
pub fn w2(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<f64> {
    w2_with(mu, nu, W2Solver::Auto).map(|e| e.value)
}

pub fn w2_with(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, solver: W2Solver) -> Result<W2Estimate> {
    if mu.dim != nu.dim {
        return Err(Error::InvalidInput(format!(
            "dimension mismatch: {} vs {}",
            mu.dim, nu.dim
        )));
    }
    if mu.is_empty() || nu.is_empty() {
        return Err(Error::InvalidInput("empty support".into()));
    }
    // canonical argument order makes the result exactly symmetric
    let (mu, nu) = if canonical_order(mu, nu) { (mu, nu) } else { (nu, mu) };
    match solver {
        W2Solver::Auto if mu.dim == 1 => Ok(W2Estimate {
            value: w2_line(mu, nu),
            method: W2Method::Quantile,
        }),
        W2Solver::Auto if mu.len() * nu.len() <= EXACT_PAIR_LIMIT => Ok(exact_w2(mu, nu)),
        W2Solver::ForceExact => Ok(exact_w2(mu, nu)),
        _ => Ok(entropic_w2(mu, nu, SinkhornSettings::default())),
    }
}

/// Exact W2 on the line through the quantile functions; handles unequal
/// sizes and weights by merging the two step quantile functions.
pub fn w2_line(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> f64 {
    let sorted = |m: &EmpiricalMeasure| {
        let mut v: Vec<(f64, f64)> = (0..m.len()).map(|i| (m.samples[i], m.weight(i))).collect();
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
        v
    };
    let a = sorted(mu);
    let b = sorted(nu);
    if mu.is_uniform() && nu.is_uniform() && a.len() == b.len() {
        let s: f64 = a.iter().zip(&b).map(|(x, y)| (x.0 - y.0).powi(2)).sum();
        return (s / a.len() as f64).sqrt();
    }
    let (mut i, mut j) = (0, 0);
    let (mut ra, mut rb) = (a[0].1, b[0].1);
    let mut total = 0.0;
    while i < a.len() && j < b.len() {
        let m = ra.min(rb);
        total += m * (a[i].0 - b[j].0).powi(2);
        ra -= m;
        rb -= m;
        if ra <= 0.0 {
            i += 1;
            if i < a.len() {
                ra = a[i].1;
            }
        }
        if rb <= 0.0 {
            j += 1;
            if j < b.len() {
                rb = b[j].1;
            }
        }
    }
    total.max(0.0).sqrt()
}

fn cost_between(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> CostMatrix {
    CostMatrix::from_fn(mu.len(), nu.len(), |i, j| dist_sq(mu.point(i), nu.point(j)))
}

fn exact_w2(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> W2Estimate {
    let c = cost_between(mu, nu);
    let sq = if mu.is_uniform() && nu.is_uniform() && mu.len() == nu.len() {
        assignment(&c).1 / mu.len() as f64
    } else {
        exact_transport(&c, &mu.weight_vec(), &nu.weight_vec())
    };
    W2Estimate {
        value: sq.max(0.0).sqrt(),
        method: W2Method::Exact,
    }
}

/// Debiased entropic estimate: `OT_ε(μ,ν) − ½OT_ε(μ,μ) − ½OT_ε(ν,ν)`, each
/// term the transport cost of the entropic plan.
pub fn entropic_w2(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, s: SinkhornSettings) -> W2Estimate {
    let (wa, wb) = (mu.weight_vec(), nu.weight_vec());
    let cross = sinkhorn(&cost_between(mu, nu), &wa, &wb, s);
    let self_a = sinkhorn(&cost_between(mu, mu), &wa, &wa, s);
    let self_b = sinkhorn(&cost_between(nu, nu), &wb, &wb, s);
    let sq = cross.cost - 0.5 * (self_a.cost + self_b.cost);
    W2Estimate {
        value: sq.max(0.0).sqrt(),
        method: W2Method::Entropic {
            epsilon: cross.epsilon,
        },
    }
}

/// Time-indexed empirical measures on the uniform grid `t_k = k·T/M`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureFlow {
    horizon: f64,
    frames: Vec<EmpiricalMeasure>,
}

impl MeasureFlow {
    /// `frames[k]` is the measure at `t_k`; there must be `M + 1 >= 2` frames.
    pub fn new(horizon: f64, frames: Vec<EmpiricalMeasure>) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidInput(format!("horizon must be > 0, got {horizon}")));
        }
        if frames.len() < 2 {
            return Err(Error::InvalidInput("a flow needs at least two frames (M >= 1)".into()));
        }
        let d = frames[0].dim();
        if frames.iter().any(|f| f.dim() != d) {
            return Err(Error::InvalidInput("flow frames differ in dimension".into()));
        }
        Ok(Self { horizon, frames })
    }

    /// Flow that is `λ` at every node.
    pub fn constant(horizon: f64, steps: usize, frame: EmpiricalMeasure) -> Result<Self> {
        Self::new(horizon, vec![frame; steps + 1])
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.frames.len() - 1
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps() as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        self.horizon * k as f64 / self.steps() as f64
    }

    pub fn dim(&self) -> usize {
        self.frames[0].dim()
    }

    pub fn frame(&self, k: usize) -> &EmpiricalMeasure {
        &self.frames[k]
    }

    pub fn frames(&self) -> &[EmpiricalMeasure] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<EmpiricalMeasure> {
        self.frames
    }

    /// Particle count, when every frame has the same number of samples.
    pub fn particles(&self) -> Option<usize> {
        let n = self.frames[0].len();
        self.frames.iter().all(|f| f.len() == n).then_some(n)
    }

    pub fn same_grid(&self, other: &MeasureFlow) -> bool {
        self.steps() == other.steps() && (self.horizon - other.horizon).abs() <= 1e-12 * self.horizon
    }
}

/// Per-node W2 between two flows on the same grid.
pub fn w2_flow_profile(a: &MeasureFlow, b: &MeasureFlow) -> Result<Vec<f64>> {
    if !a.same_grid(b) {
        return Err(Error::GridMismatch(format!(
            "flows on different grids: (T={}, M={}) vs (T={}, M={})",
            a.horizon,
            a.steps(),
            b.horizon,
            b.steps()
        )));
    }
    if a.particles().is_none() || a.particles() != b.particles() {
        return Err(Error::GridMismatch("flows differ in particle count".into()));
    }
    a.frames.iter().zip(&b.frames).map(|(x, y)| w2(x, y)).collect()
}

/// Sup over grid nodes of the marginal W2 distance.
pub fn w2_flow(a: &MeasureFlow, b: &MeasureFlow) -> Result<f64> {
    Ok(w2_flow_profile(a, b)?.into_iter().fold(0.0, f64::max))
}

/// A measure on `[0,T] × U` with Lebesgue time marginal, stored as one
/// probability vector over a finite control grid per time cell.
#[derive(Debug, Clone, PartialEq)]
pub struct TimedControlMeasure {
    horizon: f64,
    grid: ControlGrid,
    /// `[cells][atoms]`
    weights: Vec<f64>,
}

impl TimedControlMeasure {
    pub fn new(horizon: f64, grid: ControlGrid, weights: Vec<f64>) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidInput(format!("horizon must be > 0, got {horizon}")));
        }
        let k = grid.len();
        if weights.is_empty() || !weights.len().is_multiple_of(k) {
            return Err(Error::InvalidInput(format!(
                "{} weights do not tile {} atoms",
                weights.len(),
                k
            )));
        }
        for (c, row) in weights.chunks(k).enumerate() {
            if row.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
                return Err(Error::InvalidInput(format!("cell {c} has invalid weights")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > WEIGHT_TOL {
                return Err(Error::InvalidInput(format!("cell {c} weights sum to {s}")));
            }
        }
        Ok(Self {
            horizon,
            grid,
            weights,
        })
    }

    /// The same weight vector in every one of `cells` time cells.
    pub fn stationary(horizon: f64, cells: usize, grid: ControlGrid, weights: &[f64]) -> Result<Self> {
        let mut all = Vec::with_capacity(cells * weights.len());
        for _ in 0..cells {
            all.extend_from_slice(weights);
        }
        Self::new(horizon, grid, all)
    }

    /// Strict control given by one atom index per cell.
    pub fn strict(horizon: f64, grid: ControlGrid, atoms: &[usize]) -> Result<Self> {
        let k = grid.len();
        let mut w = vec![0.0; atoms.len() * k];
        for (c, &a) in atoms.iter().enumerate() {
            if a >= k {
                return Err(Error::InvalidInput(format!("atom {a} out of range")));
            }
            w[c * k + a] = 1.0;
        }
        Self::new(horizon, grid, w)
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn cells(&self) -> usize {
        self.weights.len() / self.grid.len()
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.cells() as f64
    }

    pub fn grid(&self) -> &ControlGrid {
        &self.grid
    }

    pub fn cell_weights(&self, c: usize) -> &[f64] {
        let k = self.grid.len();
        &self.weights[c * k..(c + 1) * k]
    }

    /// Cell index containing time `t` (right end belongs to the last cell).
    pub fn cell_at(&self, t: f64) -> usize {
        ((t / self.dt()).floor().max(0.0) as usize).min(self.cells() - 1)
    }

    /// Joint support `(t_c, u_j)` with masses `w_cj / M` (zero masses dropped).
    fn joint_support(&self) -> (Vec<Vec<f64>>, Vec<f64>) {
        let dt = self.dt();
        let m = self.cells() as f64;
        let mut pts = Vec::new();
        let mut mass = Vec::new();
        for c in 0..self.cells() {
            let t = (c as f64 + 0.5) * dt;
            for (j, &w) in self.cell_weights(c).iter().enumerate() {
                if w > 0.0 {
                    let mut p = vec![t];
                    p.extend_from_slice(self.grid.atom(j));
                    pts.push(p);
                    mass.push(w / m);
                }
            }
        }
        let total: f64 = mass.iter().sum();
        mass.iter_mut().for_each(|w| *w /= total);
        (pts, mass)
    }
}

/// The relaxed-control metric: W2 on `[0,T] × U` between `q1/T` and `q2/T`
/// with ground cost `|Δt|² + |Δu|²`.
pub fn d_u(q1: &TimedControlMeasure, q2: &TimedControlMeasure) -> Result<f64> {
    if q1.cells() != q2.cells() || (q1.horizon - q2.horizon).abs() > 1e-12 * q1.horizon {
        return Err(Error::GridMismatch("relaxed controls on different time grids".into()));
    }
    if q1.grid != q2.grid {
        return Err(Error::GridMismatch("relaxed controls on different control grids".into()));
    }
    let (pa, wa) = q1.joint_support();
    let (pb, wb) = q2.joint_support();
    let c = CostMatrix::from_fn(pa.len(), pb.len(), |i, j| dist_sq(&pa[i], &pb[j]));
    let sq = if pa.len() * pb.len() <= EXACT_PAIR_LIMIT {
        exact_transport(&c, &wa, &wb)
    } else {
        let s = SinkhornSettings::default();
        let cross = sinkhorn(&c, &wa, &wb, s).cost;
        let ca = CostMatrix::from_fn(pa.len(), pa.len(), |i, j| dist_sq(&pa[i], &pa[j]));
        let cb = CostMatrix::from_fn(pb.len(), pb.len(), |i, j| dist_sq(&pb[i], &pb[j]));
        cross - 0.5 * (sinkhorn(&ca, &wa, &wa, s).cost + sinkhorn(&cb, &wb, &wb, s).cost)
    };
    Ok(sq.max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(xs: &[f64]) -> EmpiricalMeasure {
        EmpiricalMeasure::uniform(1, xs.to_vec()).unwrap()
    }

    #[test]
    fn dirac_distance() {
        assert_eq!(w2(&line(&[0.0]), &line(&[1.0])).unwrap(), 1.0);
        let m = line(&[0.3, -1.0, 2.0]);
        assert_eq!(w2(&m, &m).unwrap(), 0.0);
    }

    #[test]
    fn two_point_sets() {
        // Both pairings enumerated: identity gives (1 + 1)/2, swap gives (9 + 1)/2.
        let d = w2(&line(&[0.0, 2.0]), &line(&[1.0, 3.0])).unwrap();
        assert!((d - 1.0).abs() < 1e-15);
    }

    #[test]
    fn unequal_sizes_on_the_line() {
        // δ0 against {-1, 1}: each half moves distance 1.
        let d = w2(&line(&[0.0]), &line(&[-1.0, 1.0])).unwrap();
        assert!((d - 1.0).abs() < 1e-15);
        // weighted quantile path agrees with transport
        let mu = EmpiricalMeasure::weighted(1, vec![0.0, 1.0, 4.0], vec![0.2, 0.5, 0.3]).unwrap();
        let nu = line(&[0.5, 3.0]);
        let q = w2_line(&mu, &nu);
        let e = w2_with(&mu, &nu, W2Solver::ForceExact).unwrap().value;
        assert!((q - e).abs() < 1e-12, "{q} vs {e}");
    }

    #[test]
    fn input_errors() {
        let a = line(&[0.0]);
        let b = EmpiricalMeasure::uniform(2, vec![0.0, 0.0]).unwrap();
        assert!(matches!(w2(&a, &b), Err(Error::InvalidInput(_))));
        assert!(EmpiricalMeasure::uniform(1, vec![]).is_err());
        assert!(EmpiricalMeasure::weighted(1, vec![0.0, 1.0], vec![0.5, 0.6]).is_err());
        assert!(EmpiricalMeasure::uniform(1, vec![f64::NAN]).is_err());
    }

    #[test]
    fn flow_distance_is_sup_of_marginals() {
        let f0 = MeasureFlow::new(1.0, vec![line(&[0.0]), line(&[0.0]), line(&[0.0])]).unwrap();
        let f1 = MeasureFlow::new(1.0, vec![line(&[0.0]), line(&[0.0]), line(&[1.0])]).unwrap();
        assert_eq!(w2_flow(&f0, &f0).unwrap(), 0.0);
        assert_eq!(w2_flow(&f0, &f1).unwrap(), 1.0);
        let f2 = MeasureFlow::new(2.0, vec![line(&[0.0]), line(&[0.0]), line(&[1.0])]).unwrap();
        assert!(matches!(w2_flow(&f0, &f2), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn relaxed_metric_examples() {
        let grid = ControlGrid::from_points(1, vec![-1.0, 0.0, 1.0]).unwrap();
        let mixed = TimedControlMeasure::stationary(1.0, 4, grid.clone(), &[0.5, 0.0, 0.5]).unwrap();
        let zero = TimedControlMeasure::stationary(1.0, 4, grid.clone(), &[0.0, 1.0, 0.0]).unwrap();
        let plus = TimedControlMeasure::stationary(1.0, 4, grid.clone(), &[0.0, 0.0, 1.0]).unwrap();
        assert_eq!(d_u(&mixed, &mixed).unwrap(), 0.0);
        assert!((d_u(&mixed, &zero).unwrap() - 1.0).abs() < 1e-12);
        assert!((d_u(&zero, &plus).unwrap() - 1.0).abs() < 1e-12);
        let coarse = TimedControlMeasure::stationary(1.0, 2, grid, &[0.0, 1.0, 0.0]).unwrap();
        assert!(matches!(d_u(&zero, &coarse), Err(Error::GridMismatch(_))));
    }
}
