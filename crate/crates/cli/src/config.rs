//! Flat `key=value` run configuration.

use std::fmt;
use std::str::FromStr;

use zakharov_core::continuation::ParamName;
use zakharov_core::model::{Forcing, ModelParams};
use zakharov_core::spectral::Grid;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Stationary,
    Spectrum,
    ContinueEq,
    FindOrbit,
    ContinueOrbit,
    Verify,
    Diagram,
}

impl Command {
    pub const ALL: [Command; 8] = [
        Command::Simulate,
        Command::Stationary,
        Command::Spectrum,
        Command::ContinueEq,
        Command::FindOrbit,
        Command::ContinueOrbit,
        Command::Verify,
        Command::Diagram,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Stationary => "stationary",
            Command::Spectrum => "spectrum",
            Command::ContinueEq => "continue-eq",
            Command::FindOrbit => "find-orbit",
            Command::ContinueOrbit => "continue-orbit",
            Command::Verify => "verify",
            Command::Diagram => "diagram",
        }
    }
}

impl FromStr for Command {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Command::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Command::ALL.iter().map(|c| c.as_str()).collect();
                format!("unknown command `{s}` (expected one of {})", names.join(", "))
            })
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Initial data for `simulate`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Initial {
    Zero,
    /// Band-limited random data with `‖u₀‖₂ = initial_norm`.
    Random,
    /// The stationary solution for the run parameters.
    Equilibrium,
}

impl Initial {
    fn as_str(self) -> &'static str {
        match self {
            Initial::Zero => "zero",
            Initial::Random => "random",
            Initial::Equilibrium => "equilibrium",
        }
    }
}

impl FromStr for Initial {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "zero" => Ok(Initial::Zero),
            "random" => Ok(Initial::Random),
            "equilibrium" => Ok(Initial::Equilibrium),
            _ => Err(format!("`{s}` is not one of zero, random, equilibrium")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub command: Option<Command>,
    pub modes: usize,
    pub dealias: bool,
    pub h: f64,
    pub t_final: f64,
    pub gamma: f64,
    pub delta: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub forcing: String,
    pub contour_points: usize,
    pub sample_every: usize,
    pub snapshot_stride: usize,
    pub initial: Initial,
    pub initial_norm: f64,
    pub seed: u64,
    pub tol: f64,
    pub max_iter: usize,
    pub sweep_param: ParamName,
    pub sweep_from: f64,
    pub sweep_to: f64,
    pub ds: f64,
    pub ds_max: f64,
    pub max_points: usize,
    pub event_accuracy: f64,
    pub anchor_gamma: f64,
    pub hopf_index: usize,
    pub hopf_eps: f64,
    pub orbit_h: f64,
    pub orbit_samples: usize,
    pub max_orbit_branches: usize,
    pub period_doubling: bool,
    pub ensemble_size: usize,
    pub out: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            command: None,
            modes: 32,
            dealias: false,
            h: 1e-4,
            t_final: 50.0,
            gamma: 0.4,
            delta: 1.0,
            alpha1: 1.0,
            alpha2: 1.0,
            forcing: "sin".into(),
            contour_points: 64,
            sample_every: 100,
            snapshot_stride: 0,
            initial: Initial::Zero,
            initial_norm: 1.0,
            seed: 0,
            tol: 1e-10,
            max_iter: 200,
            sweep_param: ParamName::Gamma,
            sweep_from: 2.0,
            sweep_to: 0.01,
            ds: 0.02,
            ds_max: 0.1,
            max_points: 2000,
            event_accuracy: 1e-4,
            anchor_gamma: 3.0,
            hopf_index: 0,
            hopf_eps: 1e-3,
            orbit_h: 2.5e-3,
            orbit_samples: 64,
            max_orbit_branches: 2,
            period_doubling: true,
            ensemble_size: 5,
            out: "out".into(),
        }
    }
}

/// One documented key: name, help text.
pub const KEYS: &[(&str, &str)] = &[
    ("command", "simulate | stationary | spectrum | continue-eq | find-orbit | continue-orbit | verify | diagram"),
    ("modes", "Fourier modes per component (even, >= 8)"),
    ("dealias", "dealias products by 3/2 zero padding"),
    ("h", "time step"),
    ("t_final", "integration horizon"),
    ("gamma", "Schrodinger damping"),
    ("delta", "density damping (alias: eta)"),
    ("alpha1", "coupling in the envelope equation"),
    ("alpha2", "coupling in the density equation"),
    ("forcing", "sin | zero | modes:k,c;k,c;..."),
    ("contour_points", "contour points for the ETD coefficients"),
    ("sample_every", "steps between recorded samples"),
    ("snapshot_stride", "samples between stored snapshots (0 = none)"),
    ("initial", "simulate initial data: zero | random | equilibrium"),
    ("initial_norm", "L2 norm of random initial data, H1 norm for verify ensembles"),
    ("seed", "random seed"),
    ("tol", "stationary solver tolerance"),
    ("max_iter", "stationary solver iteration cap"),
    ("sweep_param", "continuation parameter: gamma | delta | eta"),
    ("sweep_from", "sweep start value"),
    ("sweep_to", "sweep end value"),
    ("ds", "initial arclength step"),
    ("ds_max", "largest arclength step"),
    ("max_points", "branch point cap"),
    ("event_accuracy", "bisection accuracy for bifurcation events"),
    ("anchor_gamma", "reach the sweep start by gamma-continuation from this gamma (0 = solve directly)"),
    ("hopf_index", "Hopf event used by find-orbit and continue-orbit"),
    ("hopf_eps", "initial orbit amplitude at a Hopf point"),
    ("orbit_h", "largest time step of the shooting flow map"),
    ("orbit_samples", "samples per period in orbit output"),
    ("max_orbit_branches", "periodic branches followed by diagram"),
    ("period_doubling", "diagram also follows doubled orbits from period-doubling events"),
    ("ensemble_size", "random initial states for verify"),
    ("out", "output directory"),
];

#[derive(Clone, Debug, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub key: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: `{}`: {}", self.key, self.message),
            None => write!(f, "`{}`: {}", self.key, self.message),
        }
    }
}

fn num<T: FromStr>(v: &str) -> Result<T, String> {
    v.parse().map_err(|_| format!("malformed value `{v}`"))
}

fn boolean(v: &str) -> Result<bool, String> {
    match v {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(format!("malformed boolean `{v}`")),
    }
}

impl RunConfig {
    /// Applies one `key=value` assignment.
    pub fn set(&mut self, key: &str, v: &str) -> Result<(), String> {
        match key {
            "command" => self.command = Some(v.parse()?),
            "modes" => self.modes = num(v)?,
            "dealias" => self.dealias = boolean(v)?,
            "h" => self.h = num(v)?,
            "t_final" => self.t_final = num(v)?,
            "gamma" => self.gamma = num(v)?,
            "delta" | "eta" => self.delta = num(v)?,
            "alpha1" => self.alpha1 = num(v)?,
            "alpha2" => self.alpha2 = num(v)?,
            "forcing" => self.forcing = v.to_string(),
            "contour_points" => self.contour_points = num(v)?,
            "sample_every" => self.sample_every = num(v)?,
            "snapshot_stride" => self.snapshot_stride = num(v)?,
            "initial" => self.initial = v.parse()?,
            "initial_norm" => self.initial_norm = num(v)?,
            "seed" => self.seed = num(v)?,
            "tol" => self.tol = num(v)?,
            "max_iter" => self.max_iter = num(v)?,
            "sweep_param" => self.sweep_param = v.parse().map_err(|e| format!("{e}"))?,
            "sweep_from" => self.sweep_from = num(v)?,
            "sweep_to" => self.sweep_to = num(v)?,
            "ds" => self.ds = num(v)?,
            "ds_max" => self.ds_max = num(v)?,
            "max_points" => self.max_points = num(v)?,
            "event_accuracy" => self.event_accuracy = num(v)?,
            "anchor_gamma" => self.anchor_gamma = num(v)?,
            "hopf_index" => self.hopf_index = num(v)?,
            "hopf_eps" => self.hopf_eps = num(v)?,
            "orbit_h" => self.orbit_h = num(v)?,
            "orbit_samples" => self.orbit_samples = num(v)?,
            "max_orbit_branches" => self.max_orbit_branches = num(v)?,
            "period_doubling" => self.period_doubling = boolean(v)?,
            "ensemble_size" => self.ensemble_size = num(v)?,
            "out" => self.out = v.to_string(),
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    fn value_of(&self, key: &str) -> String {
        match key {
            "command" => self.command.map(|c| c.to_string()).unwrap_or_default(),
            "modes" => self.modes.to_string(),
            "dealias" => self.dealias.to_string(),
            "h" => self.h.to_string(),
            "t_final" => self.t_final.to_string(),
            "gamma" => self.gamma.to_string(),
            "delta" => self.delta.to_string(),
            "alpha1" => self.alpha1.to_string(),
            "alpha2" => self.alpha2.to_string(),
            "forcing" => self.forcing.clone(),
            "contour_points" => self.contour_points.to_string(),
            "sample_every" => self.sample_every.to_string(),
            "snapshot_stride" => self.snapshot_stride.to_string(),
            "initial" => self.initial.as_str().into(),
            "initial_norm" => self.initial_norm.to_string(),
            "seed" => self.seed.to_string(),
            "tol" => self.tol.to_string(),
            "max_iter" => self.max_iter.to_string(),
            "sweep_param" => self.sweep_param.to_string(),
            "sweep_from" => self.sweep_from.to_string(),
            "sweep_to" => self.sweep_to.to_string(),
            "ds" => self.ds.to_string(),
            "ds_max" => self.ds_max.to_string(),
            "max_points" => self.max_points.to_string(),
            "event_accuracy" => self.event_accuracy.to_string(),
            "anchor_gamma" => self.anchor_gamma.to_string(),
            "hopf_index" => self.hopf_index.to_string(),
            "hopf_eps" => self.hopf_eps.to_string(),
            "orbit_h" => self.orbit_h.to_string(),
            "orbit_samples" => self.orbit_samples.to_string(),
            "max_orbit_branches" => self.max_orbit_branches.to_string(),
            "period_doubling" => self.period_doubling.to_string(),
            "ensemble_size" => self.ensemble_size.to_string(),
            "out" => self.out.clone(),
            _ => unreachable!("key table and accessor disagree on `{key}`"),
        }
    }

    pub fn params(&self) -> ModelParams<f64> {
        ModelParams {
            gamma: self.gamma,
            delta: self.delta,
            alpha1: self.alpha1,
            alpha2: self.alpha2,
        }
    }

    /// Grid and forcing; valid once [`validate`](Self::validate) passed.
    pub fn grid(&self) -> Grid<f64> {
        Grid::new(self.modes)
            .expect("validated grid")
            .with_dealias(self.dealias)
    }

    pub fn forcing(&self) -> Forcing<f64> {
        Forcing::from_spec(&self.grid(), &self.forcing).expect("validated forcing")
    }

    /// Collects every invalid value.
    pub fn validate(&self) -> Vec<ConfigError> {
        let mut errs = Vec::new();
        let mut bad = |key: &str, msg: &str| {
            errs.push(ConfigError {
                line: None,
                key: key.into(),
                message: msg.into(),
            })
        };
        let pos = [
            ("h", self.h),
            ("t_final", self.t_final),
            ("initial_norm", self.initial_norm),
            ("tol", self.tol),
            ("ds", self.ds),
            ("ds_max", self.ds_max),
            ("event_accuracy", self.event_accuracy),
            ("hopf_eps", self.hopf_eps),
            ("orbit_h", self.orbit_h),
        ];
        for (k, v) in pos {
            if !(v > 0.0 && v.is_finite()) {
                bad(k, "must be positive and finite");
            }
        }
        for (k, v) in [("gamma", self.gamma), ("delta", self.delta), ("anchor_gamma", self.anchor_gamma)] {
            if !(v >= 0.0 && v.is_finite()) {
                bad(k, "must be nonnegative and finite");
            }
        }
        for (k, v) in [
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
            ("sweep_from", self.sweep_from),
            ("sweep_to", self.sweep_to),
        ] {
            if !v.is_finite() {
                bad(k, "must be finite");
            }
        }
        for (k, v) in [
            ("contour_points", self.contour_points),
            ("sample_every", self.sample_every),
            ("max_iter", self.max_iter),
            ("max_points", self.max_points),
            ("orbit_samples", self.orbit_samples),
            ("ensemble_size", self.ensemble_size),
        ] {
            if v == 0 {
                bad(k, "must be at least 1");
            }
        }
        if self.ds_max < self.ds {
            bad("ds_max", "must not be smaller than ds");
        }
        if self.out.trim().is_empty() {
            bad("out", "must not be empty");
        }
        match Grid::<f64>::new(self.modes) {
            Err(e) => bad("modes", &e.to_string()),
            Ok(g) => {
                if let Err(e) = Forcing::from_spec(&g, &self.forcing) {
                    bad("forcing", &e.to_string());
                }
            }
        }
        errs
    }

    /// Canonical text form: every key, in table order.
    pub fn emit(&self) -> String {
        let mut s = String::new();
        for (key, help) in KEYS {
            if *key == "command" && self.command.is_none() {
                s.push_str(&format!("# {help}\n# command=\n"));
                continue;
            }
            s.push_str(&format!("# {help}\n{key}={}\n", self.value_of(key)));
        }
        s
    }
}

/// Splits `key=value`, trimming both sides.
pub fn split_assignment(line: &str) -> Option<(&str, &str)> {
    let (k, v) = line.split_once('=')?;
    let k = k.trim();
    (!k.is_empty()).then_some((k, v.trim()))
}

/// Applies `text` on top of `base`, reporting all problems at once. Later
/// assignments override earlier ones.
pub fn parse_onto(base: RunConfig, text: &str) -> Result<RunConfig, Vec<ConfigError>> {
    let mut cfg = base;
    let mut errs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = split_assignment(line) else {
            errs.push(ConfigError {
                line: Some(i + 1),
                key: line.into(),
                message: "expected key=value".into(),
            });
            continue;
        };
        if let Err(message) = cfg.set(k, v) {
            errs.push(ConfigError {
                line: Some(i + 1),
                key: k.into(),
                message,
            });
        }
    }
    errs.extend(cfg.validate());
    if errs.is_empty() {
        Ok(cfg)
    } else {
        Err(errs)
    }
}

/// Parses a full configuration; the command is required.
pub fn parse_config(text: &str) -> Result<RunConfig, Vec<ConfigError>> {
    let cfg = parse_onto(RunConfig::default(), text);
    match cfg {
        Ok(c) if c.command.is_none() => Err(vec![missing_command()]),
        Err(mut errs) => {
            if !text.lines().any(|l| {
                split_assignment(l.split('#').next().unwrap_or(""))
                    .is_some_and(|(k, _)| k == "command")
            }) {
                errs.push(missing_command());
            }
            Err(errs)
        }
        ok => ok,
    }
}

pub fn missing_command() -> ConfigError {
    ConfigError {
        line: None,
        key: "command".into(),
        message: "missing required command".into(),
    }
}

pub fn emit_config(cfg: &RunConfig) -> String {
    cfg.emit()
}
