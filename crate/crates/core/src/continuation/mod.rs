//! Pseudo-arclength continuation of equilibria and periodic orbits in the
//! damping parameters, with Hopf, fold, period-doubling and torus detection.

mod equilibria;
mod orbits;

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::stability::StabilityReport;
use crate::stationary::Equilibrium;

pub use equilibria::{continue_equilibria, refine_equilibrium};
pub use orbits::{
    continue_orbits, double_period_branch, flow_map, orbit_from_hopf, shoot_orbit, FlowSettings,
    OrbitClass, OrbitPoint, ShootingSettings,
};

/// Continuation parameter. `eta` is accepted as a synonym for `delta`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamName {
    Gamma,
    Delta,
}

impl ParamName {
    pub fn as_str(self) -> &'static str {
        match self {
            ParamName::Gamma => "gamma",
            ParamName::Delta => "delta",
        }
    }

    pub fn get(self, p: &ModelParams<f64>) -> f64 {
        match self {
            ParamName::Gamma => p.gamma,
            ParamName::Delta => p.delta,
        }
    }

    pub fn with(self, p: &ModelParams<f64>, value: f64) -> ModelParams<f64> {
        let mut q = *p;
        match self {
            ParamName::Gamma => q.gamma = value,
            ParamName::Delta => q.delta = value,
        }
        q
    }
}

impl FromStr for ParamName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gamma" => Ok(ParamName::Gamma),
            "delta" | "eta" => Ok(ParamName::Delta),
            _ => Err(Error::invalid(
                "param",
                format!("unknown continuation parameter `{s}` (gamma, delta or eta)"),
            )),
        }
    }
}

impl fmt::Display for ParamName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EventKind {
    None,
    Hopf,
    PeriodDoubling,
    Torus,
    Fold,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::None => "none",
            EventKind::Hopf => "hopf",
            EventKind::PeriodDoubling => "pd",
            EventKind::Torus => "torus",
            EventKind::Fold => "fold",
        }
    }
}

/// A detected bifurcation, bracketed in the parameter.
#[derive(Clone, Debug)]
pub struct BifurcationEvent {
    pub kind: EventKind,
    pub param_value: f64,
    pub bracket: (f64, f64),
    /// Index of the branch point recorded at the event.
    pub point: usize,
}

impl BifurcationEvent {
    pub fn accuracy(&self) -> f64 {
        self.bracket.1 - self.bracket.0
    }
}

#[derive(Clone, Debug)]
pub enum Solution {
    Equilibrium(Box<Equilibrium>),
    Orbit(Box<OrbitPoint>),
}

#[derive(Clone, Debug)]
pub enum Stability {
    Spectrum(StabilityReport),
    /// Nontrivial Floquet multipliers.
    Floquet(Vec<Complex64>),
}

impl Stability {
    /// Largest real part, or largest nontrivial multiplier modulus.
    pub fn metric(&self) -> f64 {
        match self {
            Stability::Spectrum(r) => r.max_real_part,
            Stability::Floquet(m) => m.iter().map(|z| z.norm()).fold(0.0, f64::max),
        }
    }
}

#[derive(Clone, Debug)]
pub struct BranchPoint {
    pub param_name: ParamName,
    pub param_value: f64,
    pub solution: Solution,
    pub norm_stat: f64,
    pub stability: Stability,
    pub event: EventKind,
}

impl BranchPoint {
    pub fn equilibrium(&self) -> Option<&Equilibrium> {
        match &self.solution {
            Solution::Equilibrium(e) => Some(e),
            Solution::Orbit(_) => None,
        }
    }

    pub fn orbit(&self) -> Option<&OrbitPoint> {
        match &self.solution {
            Solution::Orbit(o) => Some(o),
            Solution::Equilibrium(_) => None,
        }
    }

    fn solution_type(&self) -> &'static str {
        match &self.solution {
            Solution::Equilibrium(_) => "eq",
            Solution::Orbit(o) if o.doubled => "orbit2T",
            Solution::Orbit(_) => "orbit",
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct Branch {
    pub points: Vec<BranchPoint>,
    pub events: Vec<BifurcationEvent>,
    /// Why continuation stopped before the end of the range, if it did.
    pub truncated: Option<String>,
}

impl Branch {
    pub fn events_of(&self, kind: EventKind) -> impl Iterator<Item = &BifurcationEvent> {
        self.events.iter().filter(move |e| e.kind == kind)
    }
}

/// Step control and tolerances shared by both continuation drivers.
#[derive(Clone, Debug)]
pub struct ContinuationSettings {
    /// Initial arclength step.
    pub ds: f64,
    pub ds_min: f64,
    pub ds_max: f64,
    pub max_points: usize,
    pub newton_tol: f64,
    pub max_newton: usize,
    /// Parameter accuracy for bisection refinement of events.
    pub event_accuracy: f64,
    pub stability_threshold: f64,
}

impl Default for ContinuationSettings {
    fn default() -> Self {
        Self {
            ds: 0.01,
            ds_min: 1e-6,
            ds_max: 0.1,
            max_points: 2000,
            newton_tol: 1e-10,
            max_newton: 8,
            event_accuracy: 1e-4,
            stability_threshold: crate::stability::DEFAULT_THRESHOLD,
        }
    }
}

impl ContinuationSettings {
    pub fn with_ds(mut self, ds: f64) -> Self {
        self.ds = ds;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.ds > 0.0) || !(self.ds_min > 0.0) || self.ds_max < self.ds_min {
            return Err(Error::invalid("ds", "need 0 < ds_min <= ds_max and ds > 0"));
        }
        Ok(())
    }
}

/// Writes the branch CSV. Rows of several branches may share one file.
pub fn write_branch_csv<W: Write>(mut w: W, branches: &[(usize, &Branch)]) -> Result<()> {
    writeln!(
        w,
        "param_name,param_value,branch_id,solution_type,norm_stat,period,stability_metric,event_flag"
    )?;
    for (id, b) in branches {
        for p in &b.points {
            let period = p.orbit().map(|o| o.period.to_string()).unwrap_or_default();
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                p.param_name,
                p.param_value,
                id,
                p.solution_type(),
                p.norm_stat,
                period,
                p.stability.metric(),
                p.event.as_str()
            )?;
        }
    }
    Ok(())
}

/// Orders `range` so that continuation starting at `start` moves toward the
/// far end; returns `(target, direction)`.
fn sweep_target(start: f64, range: (f64, f64)) -> Result<(f64, f64)> {
    let (lo, hi) = (range.0.min(range.1), range.0.max(range.1));
    let tol = 1e-12 * (1.0 + start.abs());
    if start < lo - tol || start > hi + tol {
        return Err(Error::invalid(
            "range",
            format!("start value {start} lies outside [{lo}, {hi}]"),
        ));
    }
    // prefer the direction named by the range order
    let target = range.1;
    if (target - start).abs() <= tol {
        let other = range.0;
        return Ok((other, (other - start).signum()));
    }
    Ok((target, (target - start).signum()))
}
