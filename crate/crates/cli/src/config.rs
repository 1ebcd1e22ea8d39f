//! Flat sectioned `key = value` run configuration.
//!
//! ```text
//! [run]
//! command = simulate
//! seed = 1
//!
//! [model]
//! preset = reflected_bm
//!
//! [domain]
//! kind = half_line
//! lower = 0
//! ```
//!
//! `#` starts a comment. Lists are comma separated; polytope faces are
//! `a1 a2 .. ad b` groups separated by `;`, each meaning `<a, x> >= b`
//! with `|a| = 1`.
//! Every key has a documented default except the domain parameters of the
//! chosen kind. Unknown keys are rejected with their line number.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::PathBuf;
use std::str::FromStr;

use rmfg::best_response::DpConfig;
use rmfg::fixed_point::FixedPointConfig;
use rmfg::geometry::{ConvexDomain, HalfSpace};
use rmfg::model::{BoundaryConvention, ControlGrid, ControlSet, InitialLaw, ModelSpec, PenaltyLevel};
use rmfg::presets::{PresetRegistry, BUILTIN_PARAMS};
use rmfg::simulator::{Scheme, SimConfig};

/// Parse failure, with the offending line when one exists.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(0) => write!(f, "override: {}", self.message),
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

fn err(line: Option<usize>, message: impl Into<String>) -> ConfigError {
    ConfigError {
        line,
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Cost,
    Dp,
    Equilibrium,
    SweepN,
    Chatter,
    Diagnose,
}

impl Command {
    pub const ALL: [Command; 7] = [
        Command::Simulate,
        Command::Cost,
        Command::Dp,
        Command::Equilibrium,
        Command::SweepN,
        Command::Chatter,
        Command::Diagnose,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Cost => "cost",
            Command::Dp => "dp",
            Command::Equilibrium => "equilibrium",
            Command::SweepN => "sweep-n",
            Command::Chatter => "chatter",
            Command::Diagnose => "diagnose",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DomainSpec {
    HalfLine { lower: f64 },
    HalfSpace { normal: Vec<f64>, offset: f64 },
    Ball { center: Vec<f64>, radius: f64 },
    Box { lower: Vec<f64>, upper: Vec<f64> },
    Polytope { faces: Vec<(Vec<f64>, f64)> },
}

impl DomainSpec {
    fn kind(&self) -> &'static str {
        match self {
            DomainSpec::HalfLine { .. } => "half_line",
            DomainSpec::HalfSpace { .. } => "half_space",
            DomainSpec::Ball { .. } => "ball",
            DomainSpec::Box { .. } => "box",
            DomainSpec::Polytope { .. } => "polytope",
        }
    }

    pub fn build(&self) -> rmfg::Result<ConvexDomain> {
        match self {
            DomainSpec::HalfLine { lower } => ConvexDomain::half_line(*lower),
            DomainSpec::HalfSpace { normal, offset } => ConvexDomain::half_space(normal.clone(), *offset),
            DomainSpec::Ball { center, radius } => ConvexDomain::ball(center.clone(), *radius),
            DomainSpec::Box { lower, upper } => ConvexDomain::cuboid(lower.clone(), upper.clone()),
            DomainSpec::Polytope { faces } => ConvexDomain::polytope(
                faces
                    .iter()
                    .map(|(a, b)| HalfSpace::new(a.clone(), *b))
                    .collect::<rmfg::Result<Vec<_>>>()?,
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ControlSpec {
    Points { dim: usize, points: Vec<f64> },
    Grid { lower: Vec<f64>, upper: Vec<f64>, resolution: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialSpec {
    Dirac(Vec<f64>),
    Uniform { lower: Vec<f64>, upper: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub seed: u64,
    pub out: PathBuf,
    pub preset: String,
    pub dim: usize,
    pub horizon: f64,
    /// Preset parameters given explicitly; the rest take preset defaults.
    pub params: BTreeMap<String, f64>,
    pub convention: BoundaryConvention,
    pub domain: DomainSpec,
    pub controls: ControlSpec,
    /// Control used by `simulate`, `cost`, `dp` (for `μ`) and `diagnose`;
    /// the atom nearest the origin when absent.
    pub constant: Option<Vec<f64>>,
    pub initial: InitialSpec,
    pub particles: usize,
    pub steps: usize,
    pub scheme: Scheme,
    pub penalty: Option<u64>,
    pub hx: f64,
    pub dp_lower: Option<Vec<f64>>,
    pub dp_upper: Option<Vec<f64>>,
    pub relaxed_probe: bool,
    pub damping: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub exploit_tol: f64,
    pub levels: Vec<u64>,
    pub periods: Vec<f64>,
    pub n0: f64,
    /// Stationary relaxed control for `chatter`; uniform when absent.
    pub weights: Option<Vec<f64>>,
    pub samples: usize,
}

/// Keys accepted in each section.
const SCHEMA: &[(&str, &[&str])] = &[
    ("run", &["command", "seed", "out"]),
    (
        "model",
        &["preset", "dim", "horizon", "convention", "sigma", "kappa", "r", "c", "gamma", "h", "g"],
    ),
    ("domain", &["kind", "lower", "upper", "normal", "offset", "center", "radius", "faces"]),
    ("controls", &["kind", "points", "lower", "upper", "resolution", "constant"]),
    ("initial", &["kind", "point", "lower", "upper"]),
    ("sim", &["particles", "steps", "scheme", "penalty"]),
    ("dp", &["hx", "lower", "upper", "relaxed_probe"]),
    ("fixed_point", &["damping", "max_iters", "tol", "exploit_tol"]),
    ("sweep", &["levels"]),
    ("chatter", &["periods", "n0", "weights"]),
    ("diagnose", &["samples"]),
];

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    line: usize,
    used: bool,
}

/// Raw entries keyed by `section.key`. Line 0 marks an override.
#[derive(Debug, Clone, Default)]
pub struct RawConfig {
    entries: BTreeMap<String, Entry>,
}

fn known(section: &str, key: &str) -> bool {
    SCHEMA
        .iter()
        .any(|(s, keys)| *s == section && keys.contains(&key))
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut raw = RawConfig::default();
        let mut section: Option<String> = None;
        for (i, line) in text.lines().enumerate() {
            let no = i + 1;
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| err(Some(no), "unterminated section header"))?
                    .trim();
                if !SCHEMA.iter().any(|(s, _)| *s == name) {
                    return Err(err(Some(no), format!("unknown section [{name}]")));
                }
                section = Some(name.to_string());
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(Some(no), "expected 'key = value'"))?;
            let sec = section
                .as_deref()
                .ok_or_else(|| err(Some(no), "key outside any section"))?;
            raw.insert(sec, key.trim(), value.trim(), no)?;
        }
        Ok(raw)
    }

    fn insert(&mut self, section: &str, key: &str, value: &str, line: usize) -> Result<(), ConfigError> {
        if !known(section, key) {
            return Err(err(Some(line), format!("unknown key '{key}' in [{section}]")));
        }
        let full = format!("{section}.{key}");
        if line > 0 {
            if let Some(prev) = self.entries.get(&full) {
                if prev.line > 0 {
                    return Err(err(Some(line), format!("duplicate key '{full}' (first on line {})", prev.line)));
                }
            }
        }
        self.entries.insert(
            full,
            Entry {
                value: value.to_string(),
                line,
                used: false,
            },
        );
        Ok(())
    }

    /// Apply `section.key=value`, replacing any value from the file.
    pub fn set_override(&mut self, spec: &str) -> Result<(), ConfigError> {
        let (lhs, value) = spec
            .split_once('=')
            .ok_or_else(|| err(Some(0), format!("expected section.key=value, got '{spec}'")))?;
        let (section, key) = lhs
            .trim()
            .split_once('.')
            .ok_or_else(|| err(Some(0), format!("override key '{}' needs a section prefix", lhs.trim())))?;
        self.insert(section, key, value.trim(), 0)
    }

    fn take(&mut self, full: &str) -> Option<(String, usize)> {
        self.entries.get_mut(full).map(|e| {
            e.used = true;
            (e.value.clone(), e.line)
        })
    }

    fn line_of(&self, full: &str) -> Option<usize> {
        self.entries.get(full).map(|e| e.line)
    }
}

/// Typed reader that records every default it applies.
struct Reader {
    raw: RawConfig,
    defaults: Vec<String>,
}

fn parse_list<T: FromStr>(s: &str) -> Option<Vec<T>> {
    if s.trim().is_empty() {
        return Some(Vec::new());
    }
    s.split(',').map(|v| v.trim().parse().ok()).collect()
}

fn parse_bool(s: &str) -> Option<bool> {
    match s {
        "true" => Some(true),
        "false" => Some(false),
        _ => None,
    }
}

impl Reader {
    fn typed<T>(&mut self, key: &str, what: &str, parse: impl Fn(&str) -> Option<T>) -> Result<Option<T>, ConfigError> {
        match self.raw.take(key) {
            None => Ok(None),
            Some((v, line)) => parse(&v)
                .map(Some)
                .ok_or_else(|| err(Some(line), format!("{key}: expected {what}, got '{v}'"))),
        }
    }

    fn or_default<T: fmt::Display>(&mut self, key: &str, v: Option<T>, default: T) -> T {
        v.unwrap_or_else(|| {
            self.defaults.push(format!("{key} = {default}"));
            default
        })
    }

    fn num<T: FromStr + fmt::Display>(&mut self, key: &str, default: T) -> Result<T, ConfigError> {
        let v = self.typed(key, "a number", |s| s.parse().ok())?;
        Ok(self.or_default(key, v, default))
    }

    fn required<T>(&mut self, key: &str, what: &str, parse: impl Fn(&str) -> Option<T>) -> Result<T, ConfigError> {
        self.typed(key, what, parse)?
            .ok_or_else(|| err(None, format!("missing required key {key}")))
    }

    fn floats(&mut self, key: &str) -> Result<Option<Vec<f64>>, ConfigError> {
        self.typed(key, "a comma-separated list of numbers", parse_list::<f64>)
    }

    fn range(&self, key: &str, ok: bool, msg: &str) -> Result<(), ConfigError> {
        if ok {
            Ok(())
        } else {
            Err(err(self.raw.line_of(key), format!("range violation: {key} {msg}")))
        }
    }
}

fn fmt_list<T: fmt::Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Parse and validate; also returns the `key = value` defaults applied.
    pub fn parse_with_defaults(text: &str, overrides: &[String]) -> Result<(Self, Vec<String>), ConfigError> {
        let mut raw = RawConfig::parse(text)?;
        for o in overrides {
            raw.set_override(o)?;
        }
        Self::from_raw(raw)
    }

    /// Parse and validate, logging each applied default.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let (cfg, defaults) = Self::parse_with_defaults(text, &[])?;
        for d in defaults {
            log::info!("default {d}");
        }
        Ok(cfg)
    }

    fn from_raw(raw: RawConfig) -> Result<(Self, Vec<String>), ConfigError> {
        let mut r = Reader {
            raw,
            defaults: Vec::new(),
        };
        let command = r.typed("run.command", "a command name", Command::parse)?;
        let command = match command {
            Some(c) => c,
            None => {
                r.defaults.push("run.command = simulate".into());
                Command::Simulate
            }
        };
        let seed = r.num("run.seed", 0u64)?;
        let out = r.typed("run.out", "a path", |s| Some(PathBuf::from(s)))?;
        let out = match out {
            Some(p) => p,
            None => {
                r.defaults.push("run.out = out".into());
                PathBuf::from("out")
            }
        };

        let preset = r.typed("model.preset", "a preset name", |s| Some(s.to_string()))?;
        let preset = r.or_default("model.preset", preset, "reflected_bm".to_string());
        let registry = PresetRegistry::with_builtins();
        r.range("model.preset", registry.contains(&preset), &format!("'{preset}' is not a known preset ({})", registry.names().join(", ")))?;
        let dim = r.num("model.dim", 1usize)?;
        r.range("model.dim", dim >= 1, "must be >= 1")?;
        let horizon = r.num("model.horizon", 1.0f64)?;
        r.range("model.horizon", horizon.is_finite() && horizon > 0.0, "must be > 0")?;
        let convention = r.typed("model.convention", "total_variation or inner_product", |s| match s {
            "total_variation" => Some(BoundaryConvention::TotalVariation),
            "inner_product" => Some(BoundaryConvention::InnerProduct),
            _ => None,
        })?;
        let convention = match convention {
            Some(c) => c,
            None => {
                r.defaults.push("model.convention = total_variation".into());
                BoundaryConvention::TotalVariation
            }
        };
        let mut params = BTreeMap::new();
        for p in BUILTIN_PARAMS {
            let key = format!("model.{p}");
            if let Some(v) = r.typed(&key, "a number", |s| s.parse::<f64>().ok())? {
                params.insert(p.to_string(), v);
            }
        }

        let domain = Self::read_domain(&mut r, dim)?;
        let udim = if preset == "lq_control" { dim } else { 1 };
        let (controls, constant) = Self::read_controls(&mut r, udim)?;
        let initial = Self::read_initial(&mut r, dim)?;

        let particles = r.num("sim.particles", 1000usize)?;
        r.range("sim.particles", particles >= 1, "must be >= 1")?;
        let steps = r.num("sim.steps", 100usize)?;
        r.range("sim.steps", steps >= 1, "must be >= 1")?;
        let scheme = r.typed("sim.scheme", "a scheme name", Scheme::parse)?;
        let scheme = match scheme {
            Some(s) => s,
            None => {
                r.defaults.push("sim.scheme = penalized_splitting".into());
                Scheme::PenalizedSplitting
            }
        };
        let penalty = r.typed("sim.penalty", "a positive integer", |s| s.parse::<u64>().ok())?;
        let penalty = match (scheme.is_penalized(), penalty) {
            (true, None) => {
                r.defaults.push("sim.penalty = 64".into());
                Some(64)
            }
            (_, p) => p,
        };
        if let Some(n) = penalty {
            r.range("sim.penalty", n >= 1, "must be >= 1")?;
            r.range("sim.penalty", scheme.is_penalized(), "is only valid with a penalized scheme")?;
            let dt = horizon / steps as f64;
            if scheme == Scheme::PenalizedExplicit {
                r.range(
                    "sim.penalty",
                    n as f64 * dt <= 0.5,
                    &format!("violates the penalized_explicit stability guard n*dt <= 1/2 (n*dt = {})", n as f64 * dt),
                )?;
            }
        }

        let hx = r.num("dp.hx", 0.05f64)?;
        r.range("dp.hx", hx.is_finite() && hx > 0.0, "must be > 0")?;
        let dp_lower = r.floats("dp.lower")?;
        let dp_upper = r.floats("dp.upper")?;
        for (key, b) in [("dp.lower", &dp_lower), ("dp.upper", &dp_upper)] {
            if let Some(b) = b {
                r.range(key, b.len() == dim, &format!("needs {dim} entries"))?;
            }
        }
        let probe = r.typed("dp.relaxed_probe", "true or false", parse_bool)?;
        let relaxed_probe = r.or_default("dp.relaxed_probe", probe, false);

        let damping = r.num("fixed_point.damping", 0.5f64)?;
        r.range("fixed_point.damping", damping > 0.0 && damping <= 1.0, "must lie in (0, 1]")?;
        let max_iters = r.num("fixed_point.max_iters", 30usize)?;
        let tol = r.num("fixed_point.tol", 5e-2f64)?;
        r.range("fixed_point.tol", tol > 0.0, "must be > 0")?;
        let exploit_tol = r.num("fixed_point.exploit_tol", 5e-2f64)?;
        r.range("fixed_point.exploit_tol", exploit_tol > 0.0, "must be > 0")?;

        let levels = r.typed("sweep.levels", "a comma-separated list of integers", parse_list::<u64>)?;
        let levels = match levels {
            Some(l) => l,
            None => {
                r.defaults.push("sweep.levels = 8,32,128,512".into());
                vec![8, 32, 128, 512]
            }
        };
        r.range("sweep.levels", !levels.is_empty() && levels.iter().all(|&n| n >= 1), "must be a nonempty list of levels >= 1")?;

        let periods = r.floats("chatter.periods")?;
        let periods = match periods {
            Some(p) => p,
            None => {
                r.defaults.push("chatter.periods = 0.2,0.1,0.05,0.025".into());
                vec![0.2, 0.1, 0.05, 0.025]
            }
        };
        r.range("chatter.periods", !periods.is_empty() && periods.iter().all(|&p| p > 0.0), "must be a nonempty list of positive periods")?;
        let n0 = r.num("chatter.n0", 12.8f64)?;
        r.range("chatter.n0", n0 > 0.0, "must be > 0")?;
        let weights = r.floats("chatter.weights")?;

        let samples = r.num("diagnose.samples", 10_000usize)?;
        r.range("diagnose.samples", samples >= 1, "must be >= 1")?;

        if let Some((key, e)) = r.raw.entries.iter().find(|(_, e)| !e.used) {
            return Err(err(Some(e.line), format!("key '{key}' does not apply to this configuration")));
        }

        let cfg = RunConfig {
            command,
            seed,
            out,
            preset,
            dim,
            horizon,
            params,
            convention,
            domain,
            controls,
            constant,
            initial,
            particles,
            steps,
            scheme,
            penalty,
            hx,
            dp_lower,
            dp_upper,
            relaxed_probe,
            damping,
            max_iters,
            tol,
            exploit_tol,
            levels,
            periods,
            n0,
            weights,
            samples,
        };
        cfg.model().map_err(|e| err(None, e.to_string()))?;
        Ok((cfg, r.defaults))
    }

    fn read_domain(r: &mut Reader, dim: usize) -> Result<DomainSpec, ConfigError> {
        let kind = r.typed("domain.kind", "a domain kind", |s| Some(s.to_string()))?;
        let kind = r.or_default("domain.kind", kind, "half_line".to_string());
        let line = r.raw.line_of("domain.kind");
        let need = |r: &mut Reader, key: &str| -> Result<Vec<f64>, ConfigError> {
            let v = r
                .floats(key)?
                .ok_or_else(|| err(line, format!("domain kind {kind} needs {key}")))?;
            r.range(key, v.len() == dim, &format!("needs {dim} entries"))?;
            Ok(v)
        };
        let spec = match kind.as_str() {
            "half_line" => {
                r.range("domain.kind", dim == 1, "half_line needs model.dim = 1")?;
                DomainSpec::HalfLine {
                    lower: r.num("domain.lower", 0.0)?,
                }
            }
            "half_space" => DomainSpec::HalfSpace {
                normal: need(r, "domain.normal")?,
                offset: r.num("domain.offset", 0.0)?,
            },
            "ball" => DomainSpec::Ball {
                center: need(r, "domain.center")?,
                radius: r.required("domain.radius", "a number", |s| s.parse().ok())?,
            },
            "box" => DomainSpec::Box {
                lower: need(r, "domain.lower")?,
                upper: need(r, "domain.upper")?,
            },
            "polytope" => {
                let (text, fl) = r
                    .raw
                    .take("domain.faces")
                    .ok_or_else(|| err(line, "domain kind polytope needs domain.faces"))?;
                let faces = text
                    .split(';')
                    .map(|f| {
                        let v: Option<Vec<f64>> = f.split_whitespace().map(|t| t.parse().ok()).collect();
                        match v {
                            Some(mut v) if v.len() == dim + 1 => {
                                let b = v.pop().unwrap_or_default();
                                Ok((v, b))
                            }
                            _ => Err(err(Some(fl), format!("domain.faces: each face needs {} numbers, got '{}'", dim + 1, f.trim()))),
                        }
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                DomainSpec::Polytope { faces }
            }
            other => return Err(err(line, format!("unknown domain kind '{other}'"))),
        };
        Ok(spec)
    }

    /// `udim`: control dimension, `d` for `lq_control` and 1 otherwise.
    fn read_controls(r: &mut Reader, udim: usize) -> Result<(ControlSpec, Option<Vec<f64>>), ConfigError> {
        let kind = r.typed("controls.kind", "points or grid", |s| Some(s.to_string()))?;
        let kind = r.or_default("controls.kind", kind, "points".to_string());
        let line = r.raw.line_of("controls.kind");
        let spec = match kind.as_str() {
            "points" => {
                let pts = r.floats("controls.points")?;
                let points = match pts {
                    Some(p) => p,
                    None => {
                        let z = vec![0.0; udim];
                        r.defaults.push(format!("controls.points = {}", fmt_list(&z)));
                        z
                    }
                };
                ControlSpec::Points { dim: udim, points }
            }
            "grid" => {
                let lower = r
                    .floats("controls.lower")?
                    .ok_or_else(|| err(line, "controls kind grid needs controls.lower"))?;
                let upper = r
                    .floats("controls.upper")?
                    .ok_or_else(|| err(line, "controls kind grid needs controls.upper"))?;
                let resolution = r.num("controls.resolution", 9usize)?;
                r.range("controls.resolution", resolution >= 1, "must be >= 1")?;
                ControlSpec::Grid {
                    lower,
                    upper,
                    resolution,
                }
            }
            other => return Err(err(line, format!("unknown controls kind '{other}'"))),
        };
        let constant = r.floats("controls.constant")?;
        Ok((spec, constant))
    }

    fn read_initial(r: &mut Reader, dim: usize) -> Result<InitialSpec, ConfigError> {
        let kind = r.typed("initial.kind", "dirac or uniform", |s| Some(s.to_string()))?;
        let kind = r.or_default("initial.kind", kind, "dirac".to_string());
        let line = r.raw.line_of("initial.kind");
        match kind.as_str() {
            "dirac" => {
                let p = r.floats("initial.point")?;
                let p = match p {
                    Some(p) => p,
                    None => {
                        let z = vec![0.0; dim];
                        r.defaults.push(format!("initial.point = {}", fmt_list(&z)));
                        z
                    }
                };
                r.range("initial.point", p.len() == dim, &format!("needs {dim} entries"))?;
                Ok(InitialSpec::Dirac(p))
            }
            "uniform" => {
                let lower = r
                    .floats("initial.lower")?
                    .ok_or_else(|| err(line, "initial kind uniform needs initial.lower"))?;
                let upper = r
                    .floats("initial.upper")?
                    .ok_or_else(|| err(line, "initial kind uniform needs initial.upper"))?;
                r.range("initial.lower", lower.len() == dim && upper.len() == dim, &format!("and initial.upper need {dim} entries"))?;
                Ok(InitialSpec::Uniform { lower, upper })
            }
            other => Err(err(line, format!("unknown initial kind '{other}'"))),
        }
    }

    /// Canonical text form with every key spelled out.
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "[run]\ncommand = {}\nseed = {}\nout = {}", self.command.name(), self.seed, self.out.display());
        let _ = writeln!(s, "\n[model]\npreset = {}\ndim = {}\nhorizon = {}", self.preset, self.dim, self.horizon);
        let _ = writeln!(
            s,
            "convention = {}",
            match self.convention {
                BoundaryConvention::TotalVariation => "total_variation",
                BoundaryConvention::InnerProduct => "inner_product",
            }
        );
        for (k, v) in &self.params {
            let _ = writeln!(s, "{k} = {v}");
        }
        let _ = writeln!(s, "\n[domain]\nkind = {}", self.domain.kind());
        match &self.domain {
            DomainSpec::HalfLine { lower } => {
                let _ = writeln!(s, "lower = {lower}");
            }
            DomainSpec::HalfSpace { normal, offset } => {
                let _ = writeln!(s, "normal = {}\noffset = {offset}", fmt_list(normal));
            }
            DomainSpec::Ball { center, radius } => {
                let _ = writeln!(s, "center = {}\nradius = {radius}", fmt_list(center));
            }
            DomainSpec::Box { lower, upper } => {
                let _ = writeln!(s, "lower = {}\nupper = {}", fmt_list(lower), fmt_list(upper));
            }
            DomainSpec::Polytope { faces } => {
                let f: Vec<String> = faces
                    .iter()
                    .map(|(a, b)| {
                        let mut v: Vec<String> = a.iter().map(|x| x.to_string()).collect();
                        v.push(b.to_string());
                        v.join(" ")
                    })
                    .collect();
                let _ = writeln!(s, "faces = {}", f.join("; "));
            }
        }
        let _ = writeln!(s, "\n[controls]");
        match &self.controls {
            ControlSpec::Points { points, .. } => {
                let _ = writeln!(s, "kind = points\npoints = {}", fmt_list(points));
            }
            ControlSpec::Grid {
                lower,
                upper,
                resolution,
            } => {
                let _ = writeln!(
                    s,
                    "kind = grid\nlower = {}\nupper = {}\nresolution = {resolution}",
                    fmt_list(lower),
                    fmt_list(upper)
                );
            }
        }
        if let Some(c) = &self.constant {
            let _ = writeln!(s, "constant = {}", fmt_list(c));
        }
        let _ = writeln!(s, "\n[initial]");
        match &self.initial {
            InitialSpec::Dirac(p) => {
                let _ = writeln!(s, "kind = dirac\npoint = {}", fmt_list(p));
            }
            InitialSpec::Uniform { lower, upper } => {
                let _ = writeln!(s, "kind = uniform\nlower = {}\nupper = {}", fmt_list(lower), fmt_list(upper));
            }
        }
        let _ = writeln!(
            s,
            "\n[sim]\nparticles = {}\nsteps = {}\nscheme = {}",
            self.particles,
            self.steps,
            self.scheme.name()
        );
        if let Some(n) = self.penalty {
            let _ = writeln!(s, "penalty = {n}");
        }
        let _ = writeln!(s, "\n[dp]\nhx = {}", self.hx);
        if let Some(l) = &self.dp_lower {
            let _ = writeln!(s, "lower = {}", fmt_list(l));
        }
        if let Some(u) = &self.dp_upper {
            let _ = writeln!(s, "upper = {}", fmt_list(u));
        }
        let _ = writeln!(s, "relaxed_probe = {}", self.relaxed_probe);
        let _ = writeln!(
            s,
            "\n[fixed_point]\ndamping = {}\nmax_iters = {}\ntol = {}\nexploit_tol = {}",
            self.damping, self.max_iters, self.tol, self.exploit_tol
        );
        let _ = writeln!(s, "\n[sweep]\nlevels = {}", fmt_list(&self.levels));
        let _ = writeln!(s, "\n[chatter]\nperiods = {}\nn0 = {}", fmt_list(&self.periods), self.n0);
        if let Some(w) = &self.weights {
            let _ = writeln!(s, "weights = {}", fmt_list(w));
        }
        let _ = writeln!(s, "\n[diagnose]\nsamples = {}", self.samples);
        s
    }

    pub fn control_set(&self) -> rmfg::Result<ControlSet> {
        Ok(match &self.controls {
            ControlSpec::Points { dim, points } => ControlSet::Finite(ControlGrid::from_points(*dim, points.clone())?),
            ControlSpec::Grid {
                lower,
                upper,
                resolution,
            } => ControlSet::Box {
                lower: lower.clone(),
                upper: upper.clone(),
                resolution: *resolution,
            },
        })
    }

    pub fn model(&self) -> rmfg::Result<ModelSpec> {
        let domain = self.domain.build()?;
        let coefficients = PresetRegistry::with_builtins().build(&self.preset, self.dim, &self.params)?;
        let initial = match &self.initial {
            InitialSpec::Dirac(p) => InitialLaw::Dirac(p.clone()),
            InitialSpec::Uniform { lower, upper } => InitialLaw::UniformBox {
                lower: lower.clone(),
                upper: upper.clone(),
            },
        };
        let ms = ModelSpec::new(domain, self.horizon, self.dim, self.control_set()?, coefficients, initial)?
            .with_convention(self.convention);
        Ok(ms)
    }

    pub fn penalty_level(&self) -> rmfg::Result<Option<PenaltyLevel>> {
        self.penalty.map(PenaltyLevel::new).transpose()
    }

    pub fn sim_config(&self) -> rmfg::Result<SimConfig> {
        let mut sim = SimConfig::new(self.particles, self.steps, self.scheme, self.seed);
        if let Some(n) = self.penalty_level()? {
            sim = sim.with_penalty(n);
        }
        Ok(sim)
    }

    pub fn dp_config(&self) -> DpConfig {
        DpConfig {
            hx: self.hx,
            lower: self.dp_lower.clone(),
            upper: self.dp_upper.clone(),
            relaxed_probe: self.relaxed_probe,
        }
    }

    pub fn fixed_point_config(&self) -> rmfg::Result<FixedPointConfig> {
        let mut fp = FixedPointConfig::new(self.sim_config()?, self.dp_config());
        fp.damping = self.damping;
        fp.max_iters = self.max_iters;
        fp.tol = self.tol;
        fp.exploit_tol = self.exploit_tol;
        Ok(fp)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[model]\npreset = reflected_bm\n";

    #[test]
    fn minimal_config_takes_documented_defaults() {
        let (cfg, defaults) = RunConfig::parse_with_defaults(MINIMAL, &[]).unwrap();
        assert_eq!(cfg.command, Command::Simulate);
        assert_eq!(cfg.domain, DomainSpec::HalfLine { lower: 0.0 });
        assert_eq!(cfg.particles, 1000);
        assert_eq!(cfg.steps, 100);
        assert_eq!(cfg.scheme, Scheme::PenalizedSplitting);
        assert_eq!(cfg.penalty, Some(64));
        assert_eq!(cfg.initial, InitialSpec::Dirac(vec![0.0]));
        assert!(defaults.iter().any(|d| d == "sim.particles = 1000"));
        assert!(defaults.iter().any(|d| d == "sim.penalty = 64"));
        assert!(!defaults.iter().any(|d| d.starts_with("model.preset")));
    }

    #[test]
    fn unknown_key_is_cited_with_line() {
        let e = RunConfig::parse("[model]\npreset = reflected_bm\nfoo = 1\n").unwrap_err();
        assert_eq!(e.line, Some(3));
        assert!(e.message.contains("'foo'"), "{e}");
    }

    #[test]
    fn explicit_scheme_stability_guard() {
        let text = "[sim]\nsteps = 10\nscheme = penalized_explicit\npenalty = 8\n";
        let e = RunConfig::parse(text).unwrap_err();
        assert_eq!(e.line, Some(4));
        assert!(e.message.contains("range violation") && e.message.contains("stability guard"), "{e}");
        assert!(RunConfig::parse("[sim]\nsteps = 16\nscheme = penalized_explicit\npenalty = 8\n").is_ok());
    }

    #[test]
    fn type_mismatch_names_line() {
        let e = RunConfig::parse("[sim]\n\nparticles = many\n").unwrap_err();
        assert_eq!(e.line, Some(3));
        assert!(e.to_string().starts_with("line 3:"));
    }

    #[test]
    fn keys_of_another_domain_kind_are_rejected() {
        let e = RunConfig::parse("[domain]\nkind = half_line\nradius = 2\n").unwrap_err();
        assert_eq!(e.line, Some(3));
    }

    #[test]
    fn penalty_with_reflected_scheme_is_rejected() {
        assert!(RunConfig::parse("[sim]\nscheme = reflected_projected\npenalty = 4\n").is_err());
    }

    #[test]
    fn duplicates_and_unknown_presets_fail() {
        assert_eq!(RunConfig::parse("[sim]\nsteps = 1\nsteps = 2\n").unwrap_err().line, Some(3));
        assert!(RunConfig::parse("[model]\npreset = nope\n").is_err());
    }

    #[test]
    fn overrides_replace_file_values() {
        let (cfg, _) = RunConfig::parse_with_defaults("[sim]\nparticles = 5\n", &["sim.particles=7".into()]).unwrap();
        assert_eq!(cfg.particles, 7);
        let e = RunConfig::parse_with_defaults("", &["sim.bogus=1".into()]).unwrap_err();
        assert!(e.to_string().starts_with("override:"), "{e}");
    }

    #[test]
    fn polytope_faces_parse() {
        let text = "[model]\ndim = 2\n[domain]\nkind = polytope\nfaces = 1 0 0; 0 1 0; -0.6 -0.8 -2\n";
        let cfg = RunConfig::parse(text).unwrap();
        match &cfg.domain {
            DomainSpec::Polytope { faces } => {
                assert_eq!(faces.len(), 3);
                assert_eq!(faces[2], (vec![-0.6, -0.8], -2.0));
            }
            d => panic!("{d:?}"),
        }
        let back = RunConfig::parse(&cfg.serialize()).unwrap();
        assert_eq!(back, cfg);
    }
}
