//! Discrete optimal transport solvers on dense cost matrices.
//!
//! * [`assignment`]: exact Hungarian algorithm (shortest augmenting paths
//!   with potentials) for equal-size uniform measures.
//! * [`exact_transport`]: successive shortest paths for general weighted
//!   marginals.
//! * [`sinkhorn`]: log-domain entropic solver with ε-annealing.

/// Row-major dense cost matrix.
#[derive(Debug, Clone)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len().max(1) as f64
    }
}

/// Minimum-cost perfect matching of a square cost matrix. Returns the
/// column assigned to each row and the total cost.
pub fn assignment(cost: &CostMatrix) -> (Vec<usize>, f64) {
    let n = cost.rows;
    assert_eq!(n, cost.cols, "assignment needs a square matrix");
    if n == 0 {
        return (Vec::new(), 0.0);
    }
    // 1-based arrays; index 0 is the virtual root column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost.get(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col_of_row = vec![0usize; n];
    for j in 1..=n {
        col_of_row[row_of[j] - 1] = j - 1;
    }
    let total = col_of_row
        .iter()
        .enumerate()
        .map(|(i, &j)| cost.get(i, j))
        .sum();
    (col_of_row, total)
}

/// Exact transport cost between weighted discrete marginals `a` (rows) and
/// `b` (columns), by successive shortest augmenting paths.
pub fn exact_transport(cost: &CostMatrix, a: &[f64], b: &[f64]) -> f64 {
    let (n, m) = (cost.rows, cost.cols);
    assert_eq!(a.len(), n);
    assert_eq!(b.len(), m);
    const EPS_MASS: f64 = 1e-15;

    let mut supply = a.to_vec();
    let mut demand = b.to_vec();
    let mut flow = vec![0.0; n * m];
    // Node potentials: rows 0..n, columns n..n+m.
    let mut pot = vec![0.0; n + m];
    let mut dist = vec![0.0; n + m];
    let mut done = vec![false; n + m];
    let mut pred = vec![usize::MAX; n + m];

    loop {
        let remaining: f64 = supply.iter().filter(|&&s| s > EPS_MASS).sum();
        if remaining <= 1e-13 || demand.iter().all(|&d| d <= EPS_MASS) {
            break;
        }
        // Dijkstra over the dense residual graph, all open sources at distance 0.
        for k in 0..n + m {
            dist[k] = f64::INFINITY;
            done[k] = false;
            pred[k] = usize::MAX;
        }
        for i in 0..n {
            if supply[i] > EPS_MASS {
                dist[i] = 0.0;
            }
        }
        let mut target = usize::MAX;
        loop {
            let mut best = f64::INFINITY;
            let mut node = usize::MAX;
            for k in 0..n + m {
                if !done[k] && dist[k] < best {
                    best = dist[k];
                    node = k;
                }
            }
            if node == usize::MAX {
                break;
            }
            done[node] = true;
            if node >= n && demand[node - n] > EPS_MASS {
                target = node;
                break;
            }
            if node < n {
                let i = node;
                for j in 0..m {
                    let col = n + j;
                    if done[col] {
                        continue;
                    }
                    let rc = (cost.get(i, j) + pot[i] - pot[col]).max(0.0);
                    if dist[i] + rc < dist[col] {
                        dist[col] = dist[i] + rc;
                        pred[col] = i;
                    }
                }
            } else {
                let j = node - n;
                for i in 0..n {
                    if done[i] || flow[i * m + j] <= EPS_MASS {
                        continue;
                    }
                    let rc = (-cost.get(i, j) + pot[node] - pot[i]).max(0.0);
                    if dist[node] + rc < dist[i] {
                        dist[i] = dist[node] + rc;
                        pred[i] = node;
                    }
                }
            }
        }
        if target == usize::MAX {
            break;
        }
        let reach = dist[target];
        for k in 0..n + m {
            pot[k] += dist[k].min(reach);
        }
        // Bottleneck along the path.
        let mut delta = demand[target - n];
        let mut node = target;
        loop {
            let p = pred[node];
            if p == usize::MAX {
                delta = delta.min(supply[node]);
                break;
            }
            if node < n {
                // reverse edge column p -> row node
                delta = delta.min(flow[node * m + (p - n)]);
            }
            node = p;
        }
        let mut node = target;
        loop {
            let p = pred[node];
            if p == usize::MAX {
                supply[node] -= delta;
                break;
            }
            if node >= n {
                flow[p * m + (node - n)] += delta;
            } else {
                flow[node * m + (p - n)] -= delta;
            }
            node = p;
        }
        demand[target - n] -= delta;
    }
    flow.iter()
        .enumerate()
        .filter(|(_, &f)| f > 0.0)
        .map(|(k, &f)| f * cost.get(k / m, k % m))
        .sum()
}

/// Settings for the entropic solver.
#[derive(Debug, Clone, Copy)]
pub struct SinkhornSettings {
    /// Initial regularization relative to the mean ground cost.
    pub eps_start: f64,
    /// Final regularization relative to the mean ground cost.
    pub eps_end: f64,
    pub max_sweeps: usize,
    /// L1 marginal violation below which a stage stops early.
    pub tol: f64,
}

impl Default for SinkhornSettings {
    fn default() -> Self {
        Self {
            eps_start: 1e-1,
            eps_end: 1e-3,
            max_sweeps: 500,
            tol: 1e-8,
        }
    }
}

/// Result of an entropic solve: transport cost of the final plan, the final
/// absolute regularization and its marginal violation.
#[derive(Debug, Clone, Copy)]
pub struct SinkhornOutcome {
    pub cost: f64,
    pub epsilon: f64,
    pub violation: f64,
    pub sweeps: usize,
}

fn log_sum_exp(vals: impl Iterator<Item = f64> + Clone) -> f64 {
    let mx = vals.clone().fold(f64::NEG_INFINITY, f64::max);
    if !mx.is_finite() {
        return mx;
    }
    mx + vals.map(|v| (v - mx).exp()).sum::<f64>().ln()
}

/// Log-domain Sinkhorn with geometric ε-annealing from
/// `eps_start·mean(C)` to `eps_end·mean(C)`.
pub fn sinkhorn(cost: &CostMatrix, a: &[f64], b: &[f64], s: SinkhornSettings) -> SinkhornOutcome {
    let (n, m) = (cost.rows, cost.cols);
    let scale = cost.mean().max(f64::MIN_POSITIVE);
    let log_a: Vec<f64> = a.iter().map(|w| w.ln()).collect();
    let log_b: Vec<f64> = b.iter().map(|w| w.ln()).collect();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];

    let stages = ((s.eps_start / s.eps_end).log2().ceil() as usize).max(1) + 1;
    let ratio = (s.eps_end / s.eps_start).powf(1.0 / (stages - 1).max(1) as f64);
    // Early stages get a small share; the final ε gets what remains.
    let per_stage = (s.max_sweeps / (2 * stages)).max(1);

    let mut sweeps = 0;
    let mut eps = s.eps_start * scale;
    let mut violation = f64::INFINITY;
    for stage in 0..stages {
        eps = s.eps_start * scale * ratio.powi(stage as i32);
        let last = stage + 1 == stages;
        let budget = if last { s.max_sweeps - sweeps } else { per_stage };
        for _ in 0..budget {
            for i in 0..n {
                let lse = log_sum_exp((0..m).map(|j| (g[j] - cost.get(i, j)) / eps + log_b[j]));
                f[i] = -eps * lse;
            }
            for j in 0..m {
                let lse = log_sum_exp((0..n).map(|i| (f[i] - cost.get(i, j)) / eps + log_a[i]));
                g[j] = -eps * lse;
            }
            sweeps += 1;
            violation = (0..n)
                .map(|i| {
                    let row: f64 = (0..m)
                        .map(|j| {
                            ((f[i] + g[j] - cost.get(i, j)) / eps + log_a[i] + log_b[j]).exp()
                        })
                        .sum();
                    (row - a[i]).abs()
                })
                .sum();
            if violation < s.tol {
                break;
            }
        }
        if sweeps >= s.max_sweeps {
            break;
        }
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..m {
            let p = ((f[i] + g[j] - cost.get(i, j)) / eps + log_a[i] + log_b[j]).exp();
            total += p * cost.get(i, j);
        }
    }
    SinkhornOutcome {
        cost: total,
        epsilon: eps,
        violation,
        sweeps,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_force_assignment(c: &CostMatrix) -> f64 {
        fn rec(c: &CostMatrix, row: usize, used: &mut Vec<bool>) -> f64 {
            if row == c.rows() {
                return 0.0;
            }
            let mut best = f64::INFINITY;
            for j in 0..c.cols() {
                if !used[j] {
                    used[j] = true;
                    best = best.min(c.get(row, j) + rec(c, row + 1, used));
                    used[j] = false;
                }
            }
            best
        }
        rec(c, 0, &mut vec![false; c.cols()])
    }

    #[test]
    fn hungarian_matches_permutation_enumeration() {
        let mut state = 7u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for n in 1..=6 {
            let vals: Vec<f64> = (0..n * n).map(|_| next()).collect();
            let c = CostMatrix::from_fn(n, n, |i, j| vals[i * n + j]);
            let (perm, total) = assignment(&c);
            let mut seen = perm.clone();
            seen.sort_unstable();
            assert_eq!(seen, (0..n).collect::<Vec<_>>());
            assert!((total - brute_force_assignment(&c)).abs() < 1e-12);
        }
    }

    #[test]
    fn transport_agrees_with_assignment_on_uniform() {
        let n = 7;
        let xs: Vec<f64> = (0..n).map(|i| ((i * 37) % 11) as f64 * 0.3).collect();
        let ys: Vec<f64> = (0..n).map(|i| ((i * 13) % 7) as f64 * 0.5 - 1.0).collect();
        let c = CostMatrix::from_fn(n, n, |i, j| (xs[i] - ys[j]).powi(2));
        let w = vec![1.0 / n as f64; n];
        let (_, total) = assignment(&c);
        let t = exact_transport(&c, &w, &w);
        assert!((t - total / n as f64).abs() < 1e-12, "{t} vs {}", total / n as f64);
    }

    #[test]
    fn transport_splits_mass() {
        // one atom at 0 against two atoms at ±1 with weight 1/2
        let c = CostMatrix::from_fn(1, 2, |_, j| (2.0 * j as f64 - 1.0).powi(2));
        assert!((exact_transport(&c, &[1.0], &[0.5, 0.5]) - 1.0).abs() < 1e-15);
        // weighted 1D: {0: 0.75, 1: 0.25} vs {0: 0.25, 1: 0.75} moves 0.5 mass by 1
        let c = CostMatrix::from_fn(2, 2, |i, j| (i as f64 - j as f64).powi(2));
        let t = exact_transport(&c, &[0.75, 0.25], &[0.25, 0.75]);
        assert!((t - 0.5).abs() < 1e-15);
    }
}
