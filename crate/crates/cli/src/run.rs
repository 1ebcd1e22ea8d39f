//! Command execution and artifact writing.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use sha2::{Digest, Sha256};

use rmfg::best_response::solve_dp;
use rmfg::controls::ControlLaw;
use rmfg::fixed_point::{penalization_sweep, solve_equilibrium, strict_approximation_run};
use rmfg::io::{write_flow, write_paths, write_value};
use rmfg::measures::TimedControlMeasure;
use rmfg::model::{check_growth, ModelSpec, PenaltyLevel, QuadraticTest};
use rmfg::rng::derive_seed;
use rmfg::simulator::{evaluate_cost, martingale_residual, path_moments, simulate, PathBundle};

use crate::config::{Command, RunConfig};

/// Exit status of a run: 0 success, 2 flagged non-convergence, 1 error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    NotConverged,
}

impl Status {
    pub fn code(self) -> u8 {
        match self {
            Status::Ok => 0,
            Status::NotConverged => 2,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Solver(#[from] rmfg::Error),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: io::Error },
}

type Result<T> = std::result::Result<T, RunError>;

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write_file(dir: &Path, name: &str, f: impl FnOnce(&mut BufWriter<File>) -> io::Result<()>) -> Result<()> {
    let path = dir.join(name);
    let file = File::create(&path).map_err(io_err(&path))?;
    let mut w = BufWriter::new(file);
    f(&mut w).and_then(|_| w.flush()).map_err(io_err(&path))
}

fn write_text(dir: &Path, name: &str, text: &str) -> Result<()> {
    write_file(dir, name, |w| w.write_all(text.as_bytes()))
}

/// Hex SHA-256 of the canonical config text.
pub fn config_hash(cfg: &RunConfig) -> String {
    Sha256::digest(cfg.serialize().as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn manifest(cfg: &RunConfig) -> String {
    format!(
        "command = {}\nseed = {}\nversion = {}\nconfig_sha256 = {}\n\n{}",
        cfg.command.name(),
        cfg.seed,
        env!("CARGO_PKG_VERSION"),
        config_hash(cfg),
        cfg.serialize()
    )
}

fn constant_law(cfg: &RunConfig, ms: &ModelSpec) -> Result<ControlLaw> {
    let u = match &cfg.constant {
        Some(u) => u.clone(),
        None => {
            let grid = ms.control_grid();
            grid.atom(grid.nearest_to_origin()).to_vec()
        }
    };
    if !ms.controls().contains(&u) {
        return Err(rmfg::Error::Configuration(format!("controls.constant {u:?} is not in the control set")).into());
    }
    Ok(ControlLaw::Constant(u))
}

fn moments_text(s: &mut String, paths: &PathBundle) {
    let m = path_moments(paths);
    let _ = writeln!(s, "sup_sq_mean = {}", m.sup_sq.mean);
    let _ = writeln!(s, "sup_sq_se = {}", m.sup_sq.se);
    let _ = writeln!(s, "kvar_terminal_mean = {}", m.kvar_terminal.mean);
    let _ = writeln!(s, "kvar_terminal_se = {}", m.kvar_terminal.se);
    let _ = writeln!(s, "min_boundary_work = {}", m.min_boundary_work);
}

fn header(cfg: &RunConfig) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "command = {}", cfg.command.name());
    let _ = writeln!(s, "scheme = {}", cfg.scheme.name());
    if let Some(n) = cfg.penalty {
        let _ = writeln!(s, "penalty = {n}");
    }
    let _ = writeln!(s, "seed = {}", cfg.seed);
    let _ = writeln!(s, "particles = {}", cfg.particles);
    let _ = writeln!(s, "steps = {}", cfg.steps);
    s
}

/// Execute `cfg.command`, writing artifacts under `cfg.out`.
pub fn run(cfg: &RunConfig) -> Result<Status> {
    let out = cfg.out.as_path();
    fs::create_dir_all(out).map_err(io_err(out))?;
    write_text(out, "manifest.txt", &manifest(cfg))?;
    let ms = cfg.model()?;
    let sim = cfg.sim_config()?;
    let mut report = header(cfg);
    let status = match cfg.command {
        Command::Simulate | Command::Cost => {
            let law = constant_law(cfg, &ms)?;
            let paths = simulate(&ms, &sim, &law, None)?;
            moments_text(&mut report, &paths);
            if cfg.command == Command::Simulate {
                write_file(out, "paths.csv", |w| write_paths(&paths, w))?;
            } else {
                let j = evaluate_cost(&ms, &paths, paths.flow())?;
                let _ = writeln!(report, "cost = {}", j.mean());
                let _ = writeln!(report, "cost_se = {}", j.se());
            }
            write_file(out, "flow.csv", |w| write_flow(paths.flow(), w))?;
            Status::Ok
        }
        Command::Dp => {
            let law = constant_law(cfg, &ms)?;
            let mu = simulate(&ms, &sim, &law, None)?.into_flow();
            let sol = solve_dp(&ms, &mu, cfg.penalty_level()?, &cfg.dp_config())?;
            let _ = writeln!(report, "value_at_initial = {}", sol.value.expected_initial(mu.frame(0)));
            let _ = writeln!(report, "nodes = {}", sol.value.grid().len());
            let _ = writeln!(report, "max_substeps = {}", sol.value.substeps().iter().max().copied().unwrap_or(0));
            let _ = writeln!(report, "clamped_moves = {}", sol.clamped);
            if let Some(p) = &sol.probe {
                let _ = writeln!(report, "probe_gain_at_initial = {}", p.gain_at_initial);
                let _ = writeln!(report, "probe_max_gain = {}", p.max_gain);
                let _ = writeln!(report, "probe_mixed_share = {}", p.mixed_share);
            }
            write_file(out, "value.csv", |w| write_value(&sol.value, &sol.table, w))?;
            Status::Ok
        }
        Command::Equilibrium => {
            let eq = solve_equilibrium(&ms, &cfg.fixed_point_config()?)?;
            report = eq.to_text();
            write_file(out, "flow.csv", |w| write_flow(&eq.flow, w))?;
            if eq.converged && !eq.exploit_flagged {
                Status::Ok
            } else {
                Status::NotConverged
            }
        }
        Command::SweepN => {
            let levels = cfg
                .levels
                .iter()
                .map(|&n| PenaltyLevel::new(n))
                .collect::<rmfg::Result<Vec<_>>>()?;
            let sweep = penalization_sweep(&ms, &cfg.fixed_point_config()?, &levels)?;
            write_text(out, "sweep.csv", &sweep.to_csv())?;
            let _ = writeln!(report, "reference_cost = {}", sweep.reference.cost().mean());
            let _ = writeln!(report, "reference_converged = {}", sweep.reference.converged);
            for r in &sweep.rows {
                let _ = writeln!(report, "n{} = flow_gap {} cost_gap {} converged {}", r.n.get(), r.flow_gap, r.cost_gap.mean, r.converged);
            }
            if sweep.reference.converged && sweep.rows.iter().all(|r| r.converged && r.error.is_none()) {
                Status::Ok
            } else {
                Status::NotConverged
            }
        }
        Command::Chatter => {
            let grid = ms.control_grid().clone();
            let weights = cfg.weights.clone().unwrap_or_else(|| vec![1.0 / grid.len() as f64; grid.len()]);
            let q = TimedControlMeasure::stationary(ms.horizon(), cfg.steps, grid, &weights)?;
            let rep = strict_approximation_run(&ms, &sim, &q, &cfg.periods, cfg.n0)?;
            write_text(out, "sweep.csv", &rep.to_csv())?;
            let _ = writeln!(report, "reference_cost = {}", rep.reference_cost.mean);
            let _ = writeln!(report, "reference_cost_se = {}", rep.reference_cost.se);
            for r in &rep.rows {
                let _ = writeln!(
                    report,
                    "period {} = n {} d_u {} cost_gap {}",
                    r.period,
                    r.n.get(),
                    r.control_distance,
                    r.cost_gap.mean
                );
            }
            Status::Ok
        }
        Command::Diagnose => {
            diagnose(cfg, &ms, &mut report)?;
            Status::Ok
        }
    };
    write_text(out, "report.txt", &report)?;
    Ok(status)
}

fn diagnose(cfg: &RunConfig, ms: &ModelSpec, report: &mut String) -> Result<()> {
    let dom = ms.domain();
    let d = ms.dim();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(derive_seed(cfg.seed, 0xD1A6));
    let mut worst = [0.0f64; 3];
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    for _ in 0..cfg.samples {
        let x: Vec<f64> = (0..d).map(|_| 6.0 * rng.random::<f64>() - 3.0).collect();
        let z: Vec<f64> = (0..d).map(|_| 6.0 * rng.random::<f64>() - 3.0).collect();
        let px = dom.project(&x)?;
        let y = dom.project(&z)?;
        let ppx = dom.project(&px)?;
        worst[0] = worst[0].max(norm(&ppx.iter().zip(&px).map(|(a, b)| a - b).collect::<Vec<_>>()));
        let dp = norm(&px.iter().zip(&y).map(|(a, b)| a - b).collect::<Vec<_>>());
        let dxz = norm(&x.iter().zip(&z).map(|(a, b)| a - b).collect::<Vec<_>>());
        worst[1] = worst[1].max(dp - dxz);
        let lhs: f64 = x.iter().zip(&y).zip(&px).map(|((a, b), p)| 2.0 * (a - b) * (a - p)).sum();
        let dist2: f64 = x.iter().zip(&px).map(|(a, p)| (a - p) * (a - p)).sum();
        worst[2] = worst[2].max(dist2 - lhs);
    }
    let _ = writeln!(report, "projection_idempotence_max = {}", worst[0]);
    let _ = writeln!(report, "projection_expansion_max = {}", worst[1]);
    let _ = writeln!(report, "distance_inequality_violation_max = {}", worst[2]);

    let growth = check_growth(ms, cfg.samples.min(2000), 4.0, &mut rng)?;
    let _ = writeln!(report, "growth_drift = {}", growth.drift);
    let _ = writeln!(report, "growth_covariance = {}", growth.covariance);
    let _ = writeln!(report, "growth_running_cost = {}", growth.running_cost);
    let _ = writeln!(report, "growth_boundary_cost = {}", growth.boundary_cost);
    let _ = writeln!(report, "growth_terminal_cost = {}", growth.terminal_cost);
    for w in &growth.warnings {
        let _ = writeln!(report, "growth_warning = {w}");
    }

    let law = constant_law(cfg, ms)?;
    let paths = simulate(ms, &cfg.sim_config()?, &law, None)?;
    moments_text(report, &paths);
    for (name, phi) in [("x1", QuadraticTest::coordinate(d, 0)), ("norm_sq", QuadraticTest::squared_norm(d))] {
        let r = martingale_residual(ms, &paths, paths.flow(), &phi)?;
        let _ = writeln!(report, "residual_{name}_mean = {}", r.total.mean);
        let _ = writeln!(report, "residual_{name}_se = {}", r.total.se);
        let _ = writeln!(report, "residual_{name}_z = {}", r.z);
    }
    Ok(())
}
