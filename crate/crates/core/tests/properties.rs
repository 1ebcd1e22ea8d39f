use std::sync::Arc;

use proptest::prelude::*;

use rmfg::controls::{chattering, markovian_projection, BinSpec, ControlLaw, RelaxedFeedback};
use rmfg::geometry::{ConvexDomain, HalfSpace};
use rmfg::measures::{d_u, w2, w2_line, w2_with, EmpiricalMeasure, TimedControlMeasure, W2Solver};
use rmfg::model::{
    Coefficients, ControlGrid, ControlSet, InitialLaw, MeasureSummary, ModelSpec, PenaltyLevel, QuadraticTest,
    TestFunction,
};
use rmfg::presets::{builtin, PresetKind, PresetParams};
use rmfg::simulator::{simulate, Scheme, SimConfig};

fn coords(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-4.0f64..4.0, d)
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn norm(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn pentagon() -> ConvexDomain {
    let faces = (0..5)
        .map(|k| {
            let a = 2.0 * std::f64::consts::PI * k as f64 / 5.0 + 0.3;
            HalfSpace::new(vec![a.cos(), a.sin()], -1.0 - 0.2 * k as f64).unwrap()
        })
        .collect();
    ConvexDomain::polytope(faces).unwrap()
}

/// Nearest feasible point among `x`, its projections onto each face line
/// and all pairwise face intersections.
fn polygon_projection_oracle(faces: &[(Vec<f64>, f64)], x: &[f64]) -> Vec<f64> {
    let feasible = |p: &[f64]| faces.iter().all(|(a, c)| a[0] * p[0] + a[1] * p[1] - c >= -1e-12);
    if feasible(x) {
        return x.to_vec();
    }
    let mut cands = Vec::new();
    for (a, c) in faces {
        let s = a[0] * x[0] + a[1] * x[1] - c;
        cands.push(vec![x[0] - s * a[0], x[1] - s * a[1]]);
    }
    for i in 0..faces.len() {
        for j in i + 1..faces.len() {
            let (a, c) = &faces[i];
            let (b, e) = &faces[j];
            let det = a[0] * b[1] - a[1] * b[0];
            if det.abs() > 1e-12 {
                cands.push(vec![(c * b[1] - e * a[1]) / det, (a[0] * e - b[0] * c) / det]);
            }
        }
    }
    cands
        .into_iter()
        .filter(|p| feasible(p))
        .min_by(|p, q| norm(&sub(p, x)).total_cmp(&norm(&sub(q, x))))
        .unwrap()
}

fn pentagon_faces() -> Vec<(Vec<f64>, f64)> {
    (0..5)
        .map(|k| {
            let a = 2.0 * std::f64::consts::PI * k as f64 / 5.0 + 0.3;
            (vec![a.cos(), a.sin()], -1.0 - 0.2 * k as f64)
        })
        .collect()
}

fn domains() -> Vec<(ConvexDomain, f64)> {
    let s = 0.6;
    vec![
        (ConvexDomain::half_space(vec![s, 0.8], -0.5).unwrap(), 1e-12),
        (ConvexDomain::ball(vec![0.2, -0.1], 1.5).unwrap(), 1e-12),
        (ConvexDomain::cuboid(vec![-1.0, -0.5], vec![1.0, 2.0]).unwrap(), 1e-12),
        (pentagon(), 1e-9),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn projection_invariants(x in coords(2), z in coords(2)) {
        for (dom, tol) in domains() {
            let px = dom.project(&x).unwrap();
            let y = dom.project(&z).unwrap();
            prop_assert!(dom.contains(&px));
            prop_assert!(norm(&sub(&dom.project(&px).unwrap(), &px)) <= tol);
            prop_assert!(norm(&sub(&px, &y)) <= norm(&sub(&x, &z)) + tol);
            let r = sub(&x, &px);
            let lhs: f64 = sub(&x, &y).iter().zip(&r).map(|(a, b)| 2.0 * a * b).sum();
            let d2 = dom.dist2(&x).unwrap();
            prop_assert!(d2 >= 0.0);
            prop_assert!(lhs >= d2 - tol);
            prop_assert!((d2 - r.iter().map(|v| v * v).sum::<f64>()).abs() <= tol);
        }
    }

    #[test]
    fn polytope_projection_matches_vertex_enumeration(x in coords(2)) {
        let got = pentagon().project(&x).unwrap();
        let want = polygon_projection_oracle(&pentagon_faces(), &x);
        prop_assert!(norm(&sub(&got, &want)) <= 1e-9, "{got:?} vs {want:?}");
    }

    #[test]
    fn squared_distance_gradient(x in coords(2)) {
        for (dom, _) in domains() {
            let d2 = dom.dist2(&x).unwrap();
            if d2 <= 1e-4 {
                continue;
            }
            let px = dom.project(&x).unwrap();
            let h = 1e-5;
            for i in 0..2 {
                let mut a = x.clone();
                let mut b = x.clone();
                a[i] += h;
                b[i] -= h;
                let fd = (dom.dist2(&a).unwrap() - dom.dist2(&b).unwrap()) / (2.0 * h);
                let exact = 2.0 * (x[i] - px[i]);
                prop_assert!((fd - exact).abs() <= 1e-6 * exact.abs().max(1.0), "{fd} vs {exact}");
            }
        }
    }
}

// ---------------------------------------------------------------- model

fn params(list: &[(&str, f64)]) -> PresetParams {
    list.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

fn model(kind: PresetKind, domain: ConvexDomain, p: &[(&str, f64)]) -> ModelSpec {
    let d = domain.dim();
    let c = builtin(kind, d, &params(p)).unwrap();
    let udim = if kind == PresetKind::LqControl { d } else { 1 };
    let controls = ControlGrid::box_grid(&vec![-1.0; udim], &vec![1.0; udim], 3).unwrap();
    ModelSpec::new(domain, 1.0, d, ControlSet::Finite(controls), Arc::new(c), InitialLaw::Dirac(vec![0.0; d])).unwrap()
}

fn n(v: u64) -> PenaltyLevel {
    PenaltyLevel::new(v).unwrap()
}

#[test]
fn penalized_coefficient_examples() {
    let mu = MeasureSummary::dirac(&[0.0]);
    let line = model(PresetKind::ReflectedBm, ConvexDomain::half_line(0.0).unwrap(), &[("h", 1.0)]);
    assert_eq!(line.penalized_drift(n(4), 0.0, &[-0.5], &mu, &[0.0]).unwrap(), vec![2.0]);
    assert_eq!(line.penalized_running_cost(n(4), 0.0, &[-0.5], &mu, &[0.0]).unwrap(), 2.0);
    assert_eq!(line.penalized_running_cost(n(4), 0.0, &[0.7], &mu, &[0.0]).unwrap(), 0.0);

    let mu2 = MeasureSummary::dirac(&[0.0, 0.0]);
    let ball = model(PresetKind::ReflectedBm, ConvexDomain::ball(vec![0.0, 0.0], 1.0).unwrap(), &[]);
    let b = ball.penalized_drift(n(2), 0.0, &[2.0, 0.0], &mu2, &[0.0]).unwrap();
    assert!((b[0] + 2.0).abs() < 1e-15 && b[1].abs() < 1e-15);

    let no_h = model(PresetKind::ReflectedBm, ConvexDomain::half_line(0.0).unwrap(), &[("c", 1.0)]);
    for level in [1, 8, 512] {
        let f = no_h.running_cost(0.0, &[-0.5], &mu, &[0.0]).unwrap();
        assert_eq!(no_h.penalized_running_cost(n(level), 0.0, &[-0.5], &mu, &[0.0]).unwrap(), f);
    }
}

proptest! {
    #[test]
    fn penalty_vanishes_inside_and_scales_with_distance(
        x in coords(2), level in 1u64..1000, u in coords(2), h in 0.0f64..3.0,
    ) {
        let u: Vec<f64> = u.iter().map(|v| v.clamp(-1.0, 1.0)).collect();
        let ms = model(PresetKind::LqControl, ConvexDomain::ball(vec![0.0, 0.0], 1.0).unwrap(), &[("h", h)]);
        let mu = MeasureSummary::dirac(&[0.3, -0.2]);
        let b = ms.drift(0.0, &x, &mu, &u).unwrap();
        let bn = ms.penalized_drift(n(level), 0.0, &x, &mu, &u).unwrap();
        let dist = ms.domain().dist(&x).unwrap();
        let gap = norm(&sub(&bn, &b));
        prop_assert!((gap - level as f64 * dist).abs() <= 1e-9 * (1.0 + gap));
        let f = ms.running_cost(0.0, &x, &mu, &u).unwrap();
        let fnv = ms.penalized_running_cost(n(level), 0.0, &x, &mu, &u).unwrap();
        prop_assert!(fnv >= f);
        if ms.domain().contains(&x) {
            prop_assert_eq!(bn, b);
            prop_assert_eq!(fnv, f);
        }
    }
}

/// `φ(x) = sin(<w, x>) + 0.3·x₁²·x₂`, outside the quadratic family.
struct Wavy(Vec<f64>);

impl TestFunction for Wavy {
    fn dim(&self) -> usize {
        2
    }
    fn value(&self, x: &[f64]) -> f64 {
        (self.0[0] * x[0] + self.0[1] * x[1]).sin() + 0.3 * x[0] * x[0] * x[1]
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let c = (self.0[0] * x[0] + self.0[1] * x[1]).cos();
        out[0] = self.0[0] * c + 0.6 * x[0] * x[1];
        out[1] = self.0[1] * c + 0.3 * x[0] * x[0];
    }
    fn hessian(&self, x: &[f64], out: &mut [f64]) {
        let s = (self.0[0] * x[0] + self.0[1] * x[1]).sin();
        out[0] = -self.0[0] * self.0[0] * s + 0.6 * x[1];
        out[1] = -self.0[0] * self.0[1] * s + 0.6 * x[0];
        out[2] = out[1];
        out[3] = -self.0[1] * self.0[1] * s;
    }
}

/// Drift `(1, -x₁)` and a full, state-dependent diffusion matrix.
struct Skewed;

impl Coefficients for Skewed {
    fn drift(&self, _t: f64, x: &[f64], _m: &MeasureSummary, u: &[f64], o: &mut [f64]) {
        o[0] = 1.0 + u[0];
        o[1] = -x[0];
    }
    fn diffusion(&self, _t: f64, x: &[f64], _m: &MeasureSummary, _u: &[f64], o: &mut [f64]) {
        o.copy_from_slice(&[1.0, 0.2 * x[1], 0.3, 0.8]);
    }
    fn running_cost(&self, _t: f64, _x: &[f64], _m: &MeasureSummary, _u: &[f64]) -> f64 {
        0.0
    }
    fn boundary_cost(&self, _t: f64, _x: &[f64], _m: &MeasureSummary) -> f64 {
        0.0
    }
    fn terminal_cost(&self, _x: &[f64], _m: &MeasureSummary) -> f64 {
        0.0
    }
}

fn generator_fd(ms: &ModelSpec, phi: &dyn TestFunction, x: &[f64], mu: &MeasureSummary, u: &[f64]) -> f64 {
    let h = 1e-4;
    let b = ms.drift(0.0, x, mu, u).unwrap();
    let a = ms.covariance(0.0, x, mu, u).unwrap();
    let at = |dx: [f64; 2]| phi.value(&[x[0] + dx[0], x[1] + dx[1]]);
    let mut out = 0.0;
    for i in 0..2 {
        let mut e = [0.0; 2];
        e[i] = h;
        let ne = [-e[0], -e[1]];
        out += b[i] * (at(e) - at(ne)) / (2.0 * h);
        for j in 0..2 {
            let mut f = [0.0; 2];
            f[j] = h;
            let d2 = (at([e[0] + f[0], e[1] + f[1]]) - at([e[0] - f[0], e[1] - f[1]])
                - at([f[0] - e[0], f[1] - e[1]])
                + at([-e[0] - f[0], -e[1] - f[1]]))
                / (4.0 * h * h);
            out += 0.5 * a[i * 2 + j] * d2;
        }
    }
    out
}

#[test]
fn generator_examples() {
    let mu = MeasureSummary::dirac(&[0.0, 0.0]);
    let bm = model(PresetKind::ReflectedBm, ConvexDomain::ball(vec![0.0, 0.0], 1.0).unwrap(), &[]);
    let sq = QuadraticTest::squared_norm(2);
    assert!((bm.generator_apply(&sq, 0.0, &[0.3, 0.1], &mu, &[0.0]).unwrap() - 2.0).abs() < 1e-14);

    let lq = model(PresetKind::LqControl, ConvexDomain::ball(vec![0.0, 0.0], 1.0).unwrap(), &[("sigma", 0.7)]);
    let x1 = QuadraticTest::coordinate(2, 0);
    assert!((lq.generator_apply(&x1, 0.0, &[0.3, 0.1], &mu, &[1.0, 0.0]).unwrap() - 1.0).abs() < 1e-14);
}

proptest! {
    #[test]
    fn generator_matches_finite_differences(
        x in prop::collection::vec(-0.6f64..0.6, 2), w in coords(2), u in -1.0f64..1.0,
    ) {
        let base = model(PresetKind::ReflectedBm, ConvexDomain::ball(vec![0.0, 0.0], 1.0).unwrap(), &[]);
        let ms = base.with_coefficients(Arc::new(Skewed));
        let w: Vec<f64> = w.iter().map(|v| v * 0.5).collect();
        let phi = Wavy(w);
        let mu = MeasureSummary::dirac(&[0.0, 0.0]);
        let exact = ms.generator_apply(&phi, 0.0, &x, &mu, &[u]).unwrap();
        let fd = generator_fd(&ms, &phi, &x, &mu, &[u]);
        prop_assert!((exact - fd).abs() <= 1e-5 * exact.abs().max(1.0), "{exact} vs {fd}");
    }

    #[test]
    fn generator_is_linear_in_phi(x in coords(2), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let ms = model(PresetKind::LqControl, ConvexDomain::half_space(vec![0.0, 1.0], -5.0).unwrap(), &[("sigma", 0.4)]);
        let mu = MeasureSummary::dirac(&[0.1, 0.2]);
        let u = [0.5, -1.0];
        let p = QuadraticTest { linear: vec![1.0, -2.0], quadratic: vec![1.0, 0.5, 0.5, 2.0], constant: 0.3 };
        let q = QuadraticTest::squared_norm(2);
        let combo = QuadraticTest {
            linear: p.linear.iter().zip(&q.linear).map(|(s, t)| a * s + b * t).collect(),
            quadratic: p.quadratic.iter().zip(&q.quadratic).map(|(s, t)| a * s + b * t).collect(),
            constant: a * p.constant + b * q.constant,
        };
        let l = |f: &QuadraticTest| ms.generator_apply(f, 0.0, &x, &mu, &u).unwrap();
        let lhs = l(&combo);
        let rhs = a * l(&p) + b * l(&q);
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
    }
}

// ---------------------------------------------------------------- measures

fn cloud(d: usize, max: usize) -> impl Strategy<Value = EmpiricalMeasure> {
    (1..=max).prop_flat_map(move |n| {
        prop::collection::vec(-3.0f64..3.0, n * d).prop_map(move |v| EmpiricalMeasure::uniform(d, v).unwrap())
    })
}

#[test]
fn w2_examples() {
    let a = EmpiricalMeasure::uniform(1, vec![0.0, 2.0]).unwrap();
    let b = EmpiricalMeasure::uniform(1, vec![1.0, 3.0]).unwrap();
    assert!((w2(&a, &b).unwrap() - 1.0).abs() < 1e-12);
    assert!((w2_with(&a, &b, W2Solver::ForceExact).unwrap().value - 1.0).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn w2_metric_axioms(mu in cloud(2, 12), nu in cloud(2, 12), rho in cloud(2, 12)) {
        let d = |a: &EmpiricalMeasure, b: &EmpiricalMeasure| w2_with(a, b, W2Solver::ForceExact).unwrap().value;
        prop_assert!(d(&mu, &mu) <= 1e-12);
        prop_assert_eq!(d(&mu, &nu), d(&nu, &mu));
        prop_assert!(d(&mu, &rho) <= d(&mu, &nu) + d(&nu, &rho) + 1e-9);
    }

    #[test]
    fn w2_scales_linearly(mu in cloud(2, 20), nu in cloud(2, 20), s in -4.0f64..4.0) {
        let base = w2_with(&mu, &nu, W2Solver::ForceExact).unwrap().value;
        let scaled = w2_with(&mu.scaled(s), &nu.scaled(s), W2Solver::ForceExact).unwrap().value;
        prop_assert!((scaled - s.abs() * base).abs() <= 1e-9 * (1.0 + base));
    }

    #[test]
    fn line_and_assignment_agree(n in 1usize..200, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_xoshiro::Xoshiro256PlusPlus::seed_from_u64(seed);
        let a = EmpiricalMeasure::uniform(1, (0..n).map(|_| rng.random::<f64>() * 4.0).collect()).unwrap();
        let b = EmpiricalMeasure::uniform(1, (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()).unwrap();
        let exact = w2_with(&a, &b, W2Solver::ForceExact).unwrap().value;
        prop_assert!((w2_line(&a, &b) - exact).abs() <= 1e-9);
    }
}

#[test]
fn entropic_close_to_exact() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_xoshiro::Xoshiro256PlusPlus::seed_from_u64(11);
    for n in [20usize, 80, 200] {
        let a = EmpiricalMeasure::uniform(2, (0..2 * n).map(|_| rng.random::<f64>()).collect()).unwrap();
        let b = EmpiricalMeasure::uniform(2, (0..2 * n).map(|_| rng.random::<f64>() + 0.5).collect()).unwrap();
        let exact = w2_with(&a, &b, W2Solver::ForceExact).unwrap().value;
        let ent = w2_with(&a, &b, W2Solver::ForceEntropic).unwrap().value;
        assert!((ent - exact).abs() <= 0.02 * exact, "n={n}: {ent} vs {exact}");
    }
}

// ---------------------------------------------------------------- controls

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// Weights in quarters keep every block allocation exact, so the only
    /// error left is the in-block time shift.
    #[test]
    fn chattering_distance_decreases_as_period_halves(k in prop::collection::vec(0u32..5, 3)) {
        prop_assume!(k.iter().sum::<u32>() > 0);
        let total: u32 = k.iter().sum();
        let raw: Vec<f64> = k.iter().map(|&v| v as f64 / total as f64).collect();
        // round to quarters, keeping a probability vector
        let mut w: Vec<f64> = raw.iter().map(|v| (v * 4.0).floor() / 4.0).collect();
        let short = 1.0 - w.iter().sum::<f64>();
        let imax = (0..3).max_by(|&a, &b| raw[a].total_cmp(&raw[b])).unwrap();
        w[imax] += short;
        let grid = ControlGrid::from_points(1, vec![-1.0, 0.0, 1.0]).unwrap();
        let q = TimedControlMeasure::stationary(1.0, 80, grid, &w).unwrap();
        let d: Vec<f64> = [0.4, 0.2, 0.1, 0.05]
            .iter()
            .map(|&p| d_u(&chattering(&q, p).unwrap().as_measure().unwrap(), &q).unwrap())
            .collect();
        for pair in d.windows(2) {
            prop_assert!(pair[1] < pair[0] || pair[0] < 1e-12, "{d:?} for {w:?}");
        }
    }

    #[test]
    fn chattering_block_allocation_within_one_cell(
        raw in prop::collection::vec(prop::collection::vec(0.01f64..1.0, 3), 40),
        period_cells in 1usize..9,
    ) {
        let grid = ControlGrid::from_points(1, vec![-1.0, 0.0, 1.0]).unwrap();
        let weights: Vec<f64> = raw
            .iter()
            .flat_map(|r| {
                let s: f64 = r.iter().sum();
                r.iter().map(move |v| v / s)
            })
            .collect();
        let q = TimedControlMeasure::new(1.0, grid, weights).unwrap();
        let dt = q.dt();
        let period = period_cells as f64 * dt;
        let sched = chattering(&q, period).unwrap();
        let blocks = (0..q.cells()).step_by(period_cells).map(|s| s..(s + period_cells).min(q.cells()));
        for block in blocks {
            let len = block.len() as f64;
            for a in 0..3 {
                let want: f64 = block.clone().map(|c| q.cell_weights(c)[a]).sum::<f64>() * dt;
                let got = block.clone().filter(|&c| sched.atom_at((c as f64 + 0.5) * dt) == a).count() as f64 * dt;
                prop_assert!((got - want).abs() < dt + 1e-12, "block len {len}: {got} vs {want}");
            }
        }
    }
}

fn relaxed_run(law: ControlLaw, particles: usize, steps: usize) -> rmfg::simulator::PathBundle {
    let ms = ModelSpec::new(
        ConvexDomain::cuboid(vec![-3.0], vec![3.0]).unwrap(),
        1.0,
        1,
        ControlSet::Finite(ControlGrid::from_points(1, vec![-1.0, 1.0]).unwrap()),
        Arc::new(builtin(PresetKind::LqControl, 1, &params(&[("sigma", 1.0)])).unwrap()),
        InitialLaw::UniformBox { lower: vec![-1.0], upper: vec![1.0] },
    )
    .unwrap();
    simulate(&ms, &SimConfig::new(particles, steps, Scheme::ReflectedProjected, 5), &law, None).unwrap()
}

#[test]
fn projection_of_open_loop_strict_control() {
    let law = ControlLaw::StrictFeedback(Arc::new(|t: f64, _x: &[f64], out: &mut [f64]| {
        out[0] = if t < 0.5 { -1.0 } else { 1.0 };
    }));
    let paths = relaxed_run(law, 300, 10);
    let grid = ControlGrid::from_points(1, vec![-1.0, 1.0]).unwrap();
    let table = markovian_projection(&paths, &grid, BinSpec::default()).unwrap();
    for cell in 0..table.cells() {
        let want = if cell < 5 { [1.0, 0.0] } else { [0.0, 1.0] };
        for b in 0..table.bins(cell).len() {
            assert_eq!(table.bin_weights(cell, b), &want);
        }
    }
}

#[test]
fn projection_of_sign_feedback() {
    let law = ControlLaw::StrictFeedback(Arc::new(|_t: f64, x: &[f64], out: &mut [f64]| {
        out[0] = if x[0] < 0.0 { -1.0 } else { 1.0 };
    }));
    let paths = relaxed_run(law, 500, 8);
    let grid = ControlGrid::from_points(1, vec![-1.0, 1.0]).unwrap();
    let table = markovian_projection(&paths, &grid, BinSpec::default()).unwrap();
    for cell in 0..table.cells() {
        let bins = table.bins(cell);
        let half = 0.5 * bins.spacing()[0];
        for b in 0..bins.len() {
            let c = bins.node(b)[0];
            let w = table.bin_weights(cell, b);
            assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            if c + half < 0.0 {
                assert_eq!(w, &[1.0, 0.0]);
            } else if c - half > 0.0 {
                assert_eq!(w, &[0.0, 1.0]);
            }
        }
    }
}

/// Relaxed feedback whose weights depend on the state.
struct Tilt(ControlGrid);

impl RelaxedFeedback for Tilt {
    fn grid(&self) -> &ControlGrid {
        &self.0
    }
    fn weights(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        let p = 0.5 + 0.4 * (x[0] / 3.0).clamp(-1.0, 1.0);
        out[0] = 1.0 - p;
        out[1] = p;
    }
}

#[test]
fn projection_of_mixed_population_matches_bin_averages() {
    let grid = ControlGrid::from_points(1, vec![-1.0, 1.0]).unwrap();
    let paths = relaxed_run(ControlLaw::RelaxedFeedback(Arc::new(Tilt(grid.clone()))), 10, 3);
    let table = markovian_projection(&paths, &grid, BinSpec { per_axis: 2 }).unwrap();
    for step in 0..3 {
        let xs: Vec<f64> = (0..10).map(|i| paths.x(step, i)[0]).collect();
        let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mid = 0.5 * (lo + hi);
        for side in [false, true] {
            let members: Vec<usize> = (0..10).filter(|&i| (xs[i] >= mid) == side).collect();
            if members.is_empty() {
                continue;
            }
            let mut avg = [0.0; 2];
            for &i in &members {
                let w = paths.relaxed_weights(step, i).unwrap();
                avg[0] += w[0] / members.len() as f64;
                avg[1] += w[1] / members.len() as f64;
            }
            let probe = if side { hi } else { lo };
            let bin = table.bins(step).nearest(&[probe]);
            let got = table.bin_weights(step, bin);
            assert!((got[0] - avg[0]).abs() < 1e-12 && (got[1] - avg[1]).abs() < 1e-12, "{got:?} vs {avg:?}");
        }
    }
}
