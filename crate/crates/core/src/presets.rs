//! Named coefficient families addressable from configuration files.
//!
//! | preset            | drift              | running cost                         |
//! |-------------------|--------------------|--------------------------------------|
//! | `reflected_bm`    | `0`                | `c|x|² + γ|x − m|²`                  |
//! | `reflected_ou_mf` | `−κ(x − m)`        | `c|x|² + γ|x − m|²`                  |
//! | `lq_control`      | `u`                | `½r|u|² + c|x|² + γ|x − m|²`         |
//!
//! All presets use `σ = sigma·I`, a constant boundary cost `h` and terminal
//! cost `g|x|²`; `m` is the mean of the measure argument.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::model::{Coefficients, MeasureSummary};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PresetKind {
    ReflectedBm,
    ReflectedOuMf,
    LqControl,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PresetCoefficients {
    pub kind: PresetKind,
    pub dim: usize,
    pub sigma: f64,
    pub kappa: f64,
    pub r: f64,
    pub c: f64,
    pub gamma: f64,
    pub h: f64,
    pub g: f64,
}

impl PresetCoefficients {
    pub fn new(kind: PresetKind, dim: usize) -> Self {
        let (sigma, kappa, r, c, gamma) = match kind {
            PresetKind::ReflectedBm => (1.0, 0.0, 0.0, 0.0, 0.0),
            PresetKind::ReflectedOuMf => (1.0, 1.0, 0.0, 0.0, 0.0),
            PresetKind::LqControl => (0.5, 0.0, 1.0, 0.5, 1.0),
        };
        Self {
            kind,
            dim,
            sigma,
            kappa,
            r,
            c,
            gamma,
            h: 0.0,
            g: 0.0,
        }
    }

    /// Control dimension the preset expects.
    pub fn control_dim(&self) -> usize {
        match self.kind {
            PresetKind::LqControl => self.dim,
            _ => 1,
        }
    }
}

impl Coefficients for PresetCoefficients {
    fn drift(&self, _t: f64, x: &[f64], mu: &MeasureSummary, u: &[f64], out: &mut [f64]) {
        match self.kind {
            PresetKind::ReflectedBm => out.fill(0.0),
            PresetKind::ReflectedOuMf => {
                for ((o, xi), mi) in out.iter_mut().zip(x).zip(&mu.mean) {
                    *o = -self.kappa * (xi - mi);
                }
            }
            PresetKind::LqControl => out.copy_from_slice(u),
        }
    }

    fn diffusion(&self, _t: f64, _x: &[f64], _mu: &MeasureSummary, _u: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for i in 0..self.dim {
            out[i * self.dim + i] = self.sigma;
        }
    }

    fn running_cost(&self, _t: f64, x: &[f64], mu: &MeasureSummary, u: &[f64]) -> f64 {
        let x2: f64 = x.iter().map(|v| v * v).sum();
        let dev: f64 = x.iter().zip(&mu.mean).map(|(a, b)| (a - b) * (a - b)).sum();
        let mut f = self.c * x2 + self.gamma * dev;
        if self.kind == PresetKind::LqControl {
            f += 0.5 * self.r * u.iter().map(|v| v * v).sum::<f64>();
        }
        f
    }

    fn boundary_cost(&self, _t: f64, _x: &[f64], _mu: &MeasureSummary) -> f64 {
        self.h
    }

    fn terminal_cost(&self, x: &[f64], _mu: &MeasureSummary) -> f64 {
        self.g * x.iter().map(|v| v * v).sum::<f64>()
    }
}

/// Numeric preset parameters by name.
pub type PresetParams = BTreeMap<String, f64>;

type Factory = Box<dyn Fn(usize, &PresetParams) -> Result<Arc<dyn Coefficients>> + Send + Sync>;

/// Name → coefficient factory. Factories receive the state dimension and
/// the numeric parameters, and must reject keys they do not know.
pub struct PresetRegistry {
    factories: HashMap<String, Factory>,
}

impl PresetRegistry {
    pub fn empty() -> Self {
        Self {
            factories: HashMap::new(),
        }
    }

    pub fn with_builtins() -> Self {
        let mut reg = Self::empty();
        for (name, kind) in [
            ("reflected_bm", PresetKind::ReflectedBm),
            ("reflected_ou_mf", PresetKind::ReflectedOuMf),
            ("lq_control", PresetKind::LqControl),
        ] {
            reg.register(name, move |dim, params| {
                Ok(Arc::new(builtin(kind, dim, params)?) as Arc<dyn Coefficients>)
            });
        }
        reg
    }

    pub fn register<F>(&mut self, name: &str, factory: F)
    where
        F: Fn(usize, &PresetParams) -> Result<Arc<dyn Coefficients>> + Send + Sync + 'static,
    {
        self.factories.insert(name.to_string(), Box::new(factory));
    }

    pub fn contains(&self, name: &str) -> bool {
        self.factories.contains_key(name)
    }

    pub fn names(&self) -> Vec<String> {
        let mut v: Vec<String> = self.factories.keys().cloned().collect();
        v.sort();
        v
    }

    pub fn build(&self, name: &str, dim: usize, params: &PresetParams) -> Result<Arc<dyn Coefficients>> {
        let f = self
            .factories
            .get(name)
            .ok_or_else(|| Error::Configuration(format!("unknown model preset '{name}'")))?;
        f(dim, params)
    }
}

/// Parameter names accepted by the built-in presets.
pub const BUILTIN_PARAMS: [&str; 7] = ["sigma", "kappa", "r", "c", "gamma", "h", "g"];

/// Build a built-in preset with parameter overrides.
pub fn builtin(kind: PresetKind, dim: usize, params: &PresetParams) -> Result<PresetCoefficients> {
    if dim == 0 {
        return Err(Error::Configuration("state dimension must be >= 1".into()));
    }
    let mut p = PresetCoefficients::new(kind, dim);
    for (key, &value) in params {
        if !value.is_finite() {
            return Err(Error::Configuration(format!("parameter {key} is not finite")));
        }
        let slot = match key.as_str() {
            "sigma" => &mut p.sigma,
            "kappa" => &mut p.kappa,
            "r" => &mut p.r,
            "c" => &mut p.c,
            "gamma" => &mut p.gamma,
            "h" => &mut p.h,
            "g" => &mut p.g,
            other => {
                return Err(Error::Configuration(format!(
                    "unknown parameter '{other}' for preset {kind:?}"
                )))
            }
        };
        *slot = value;
    }
    if p.sigma < 0.0 {
        return Err(Error::Configuration("sigma must be >= 0".into()));
    }
    Ok(p)
}
