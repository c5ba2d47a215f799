//! Numerical checks of the analytic results: convergence to the equilibrium
//! for large damping, decay of the Lyapunov functional, entry into the
//! absorbing ball, and conservation in the undamped, unforced limit.
//!
//! Checks outside their regime are reported but never fail.

use std::fmt;
use std::io::Write;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::etdrk4::{integrate, CoefficientCache, IntegrateConfig, TrajectoryRecord};
use crate::model::{energy_distance, lyapunov_epsilon, Forcing, ModelParams, ZakharovState};
use crate::spectral::{Grid, SpectralField};
use crate::stationary::{fixed_point_solve, Equilibrium};

type State = ZakharovState<f64>;

/// Size of the random initial data.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InitialNorm {
    /// `‖u₀‖_{H¹}`; the density gets the same L² norm.
    H1(f64),
    /// `‖u₀‖₂`; the density gets the same L² norm.
    L2(f64),
}

#[derive(Clone, Debug)]
pub struct Tolerances {
    /// Energy-space distance to the equilibrium at `T`.
    pub distance: f64,
    /// Relative drifts in the conservative check.
    pub mass_drift: f64,
    pub energy_drift: f64,
    /// Factor applied to the Lyapunov rate (`H` must decay at least like
    /// `e^{-εt/slack}`).
    pub lyapunov_slack: f64,
    /// Samples with `H` below this fraction of `H(0)` are treated as
    /// converged and excluded from the monotonicity test.
    pub lyapunov_floor: f64,
    /// Added to the ball radius.
    pub ball_slack: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            distance: 1e-6,
            mass_drift: 1e-8,
            energy_drift: 1e-6,
            lyapunov_slack: 2.0,
            lyapunov_floor: 1e-20,
            ball_slack: 0.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct VerificationConfig {
    pub params: ModelParams<f64>,
    pub forcing: Forcing<f64>,
    pub ensemble_size: usize,
    pub seed: u64,
    pub t_final: f64,
    pub h: f64,
    pub initial: InitialNorm,
    /// Time between recorded samples.
    pub sample_interval: f64,
    pub tolerances: Tolerances,
}

impl VerificationConfig {
    /// Large-damping defaults: `γ = 5`, `δ = 1`, `f = sin x`, five members,
    /// `T = 50`, `h = 1e-3`.
    pub fn new(grid: &Grid<f64>) -> Self {
        Self {
            params: ModelParams::new(5.0, 1.0, 1.0, 1.0).expect("valid defaults"),
            forcing: Forcing::sine(grid),
            ensemble_size: 5,
            seed: 0,
            t_final: 50.0,
            h: 1e-3,
            initial: InitialNorm::H1(1.0),
            sample_interval: 0.1,
            tolerances: Tolerances::default(),
        }
    }

    pub fn grid(&self) -> &Grid<f64> {
        self.forcing.profile.grid()
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.ensemble_size == 0 {
            return Err(Error::invalid("ensemble_size", "must be at least 1"));
        }
        if !(self.t_final > 0.0) {
            return Err(Error::invalid("T", "must be positive"));
        }
        if !(self.h > 0.0) || self.h > self.t_final {
            return Err(Error::invalid("h", "must be positive and at most T"));
        }
        if !(self.sample_interval > 0.0) {
            return Err(Error::invalid("sample_interval", "must be positive"));
        }
        let size = match self.initial {
            InitialNorm::H1(x) | InitialNorm::L2(x) => x,
        };
        if !(size >= 0.0) || !size.is_finite() {
            return Err(Error::invalid("initial_norm", "must be finite and non-negative"));
        }
        Ok(())
    }

    fn sample_every(&self) -> usize {
        ((self.sample_interval / self.h).round() as usize).max(1)
    }
}

/// Band-limited random field: modes `0 < |k| ≤ N/4` get independent complex
/// Gaussian coefficients.
fn random_field(grid: &Grid<f64>, rng: &mut ChaCha8Rng) -> SpectralField<f64> {
    let kmax = (grid.num_modes() / 4) as i64;
    let mut f = SpectralField::zeros(grid);
    for k in -kmax..=kmax {
        if k == 0 {
            continue;
        }
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        f.set_coeff(k, Complex64::new(re, im));
    }
    f
}

/// Random initial state of the given size. Successive calls with one `rng`
/// give the ensemble members.
pub fn random_initial_state(grid: &Grid<f64>, rng: &mut ChaCha8Rng, size: InitialNorm) -> Result<State> {
    let u = random_field(grid, rng);
    let n = random_field(grid, rng);
    let (target, norm) = match size {
        InitialNorm::H1(x) => (x, u.sobolev_norm(1.0)?),
        InitialNorm::L2(x) => (x, u.l2_norm()),
    };
    State::new(u.scale_real(target / norm), n.scale_real(target / n.l2_norm()))
}

/// Ensemble of seeded initial states.
pub fn ensemble_states(cfg: &VerificationConfig) -> Result<Vec<State>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..cfg.ensemble_size)
        .map(|_| random_initial_state(cfg.grid(), &mut rng, cfg.initial))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regime {
    /// Hypotheses of the result being checked hold (as far as can be
    /// tested numerically).
    Inside,
    Outside,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Inside => "in_regime",
            Regime::Outside => "out_of_regime",
        }
    }
}

/// One line of the verification report.
#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: &'static str,
    pub regime: Regime,
    pub value: f64,
    pub bound: f64,
    /// `None` for informational results (outside the regime).
    pub pass: Option<bool>,
    /// Per-member values in ensemble order.
    pub members: Vec<f64>,
    pub note: String,
}

impl CheckResult {
    fn new(name: &'static str, regime: Regime, value: f64, bound: f64, members: Vec<f64>, note: String) -> Self {
        let pass = (regime == Regime::Inside).then(|| value.is_finite() && value <= bound);
        Self {
            name,
            regime,
            value,
            bound,
            pass,
            members,
            note,
        }
    }

    pub fn passed(&self) -> bool {
        self.pass != Some(false)
    }
}

#[derive(Clone, Debug, Default)]
pub struct VerificationReport {
    pub checks: Vec<CheckResult>,
}

impl VerificationReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(CheckResult::passed)
    }

    /// CSV with columns `check_name,regime,value,bound,pass`; `pass` is
    /// `true`, `false` or `na`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "check_name,regime,value,bound,pass")?;
        for c in &self.checks {
            let pass = match c.pass {
                Some(true) => "true",
                Some(false) => "false",
                None => "na",
            };
            writeln!(w, "{},{},{:e},{:e},{}", c.name, c.regime.as_str(), c.value, c.bound, pass)?;
        }
        Ok(())
    }
}

impl fmt::Display for VerificationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            let verdict = match c.pass {
                Some(true) => "PASS",
                Some(false) => "FAIL",
                None => "INFO",
            };
            writeln!(
                f,
                "{verdict:4}  {:<18} {:<13} value {:.3e}  bound {:.3e}",
                c.name,
                c.regime.as_str(),
                c.value,
                c.bound
            )?;
            if !c.note.is_empty() {
                writeln!(f, "      {}", c.note)?;
            }
        }
        Ok(())
    }
}

/// The equilibrium by fixed-point iteration, or `None` when the iteration
/// does not converge (outside the large-damping regime).
fn regime_equilibrium(cfg: &VerificationConfig) -> (Option<Equilibrium>, String) {
    match fixed_point_solve(&cfg.forcing, &cfg.params, 1e-13, 2000) {
        Ok(eq) => (Some(eq), String::new()),
        Err(e) => (None, format!("fixed-point iteration failed: {e}")),
    }
}

fn run_member(
    cfg: &VerificationConfig,
    state0: &State,
    params: &ModelParams<f64>,
    forcing: &Forcing<f64>,
    reference: Option<&Equilibrium>,
    cache: &mut CoefficientCache<f64>,
) -> Result<TrajectoryRecord<f64>> {
    let mut ic = IntegrateConfig::new(cfg.h, cfg.t_final);
    ic.sample_every = cfg.sample_every();
    ic.reference = reference.map(|eq| (eq.v.clone(), eq.m.clone()));
    integrate(state0, forcing, params, &ic, Some(cache), None)
}

fn ensemble_runs(cfg: &VerificationConfig, reference: Option<&Equilibrium>) -> Result<Vec<TrajectoryRecord<f64>>> {
    let mut cache = CoefficientCache::default();
    ensemble_states(cfg)?
        .iter()
        .map(|s| run_member(cfg, s, &cfg.params, &cfg.forcing, reference, &mut cache))
        .collect()
}

fn trivial_attractor_check(
    cfg: &VerificationConfig,
    eq: Option<&Equilibrium>,
    runs: &[TrajectoryRecord<f64>],
    note: String,
) -> Result<CheckResult> {
    let Some(eq) = eq else {
        return Ok(CheckResult::new(
            "trivial_attractor",
            Regime::Outside,
            f64::NAN,
            cfg.tolerances.distance,
            Vec::new(),
            note,
        ));
    };
    let members = runs
        .iter()
        .map(|r| energy_distance(&r.final_state, eq.reference(), cfg.params.delta))
        .collect::<Result<Vec<_>>>()?;
    let max = members.iter().copied().fold(0.0, f64::max);
    Ok(CheckResult::new(
        "trivial_attractor",
        Regime::Inside,
        max,
        cfg.tolerances.distance,
        members,
        note,
    ))
}

/// Ratio `H(T') / (H(t*) e^{-ε(T'-t*)/slack})` for one trajectory, where `t*`
/// starts the final nonincreasing stretch of `H` and `T'` is the last sample
/// above the noise floor. Values `≤ 1` pass. Also returns `t*`.
fn lyapunov_ratio(record: &TrajectoryRecord<f64>, eps: f64, tol: &Tolerances) -> (f64, f64) {
    let hs: Vec<(f64, f64)> = record
        .samples
        .iter()
        .filter_map(|s| s.report.lyapunov_h.map(|h| (s.report.time, h)))
        .collect();
    let Some(&(_, h0)) = hs.first() else {
        return (f64::NAN, f64::NAN);
    };
    // H is quadratic in the distance, so round-off sits far below this
    const H_ROUNDOFF: f64 = 1e-24;
    if h0 <= H_ROUNDOFF {
        return (0.0, 0.0);
    }
    let floor = (tol.lyapunov_floor * h0).max(H_ROUNDOFF);
    let end = hs.iter().position(|&(_, h)| h < floor).unwrap_or(hs.len() - 1);
    let hs = &hs[..=end];
    let mut start = hs.len() - 1;
    while start > 0 && hs[start - 1].1 >= hs[start].1 {
        start -= 1;
    }
    let (t_star, h_star) = hs[start];
    let (t_end, h_end) = hs[hs.len() - 1];
    if t_end == t_star {
        // no decreasing stretch at all
        return (if h_end <= floor { 0.0 } else { f64::INFINITY }, t_star);
    }
    let envelope = h_star * (-eps * (t_end - t_star) / tol.lyapunov_slack).exp();
    (h_end / envelope, t_star)
}

fn lyapunov_check(
    cfg: &VerificationConfig,
    eq: Option<&Equilibrium>,
    runs: &[TrajectoryRecord<f64>],
) -> Result<CheckResult> {
    let eps = lyapunov_epsilon(&cfg.params)?;
    let regime = if eq.is_some() { Regime::Inside } else { Regime::Outside };
    if runs.is_empty() {
        return Ok(CheckResult::new("lyapunov_decay", regime, f64::NAN, 1.0, Vec::new(), String::new()));
    }
    let pairs: Vec<(f64, f64)> = runs.iter().map(|r| lyapunov_ratio(r, eps, &cfg.tolerances)).collect();
    let members: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let worst = members.iter().copied().fold(0.0, f64::max);
    let t_star = pairs.iter().map(|p| p.1).fold(0.0, f64::max);
    Ok(CheckResult::new(
        "lyapunov_decay",
        regime,
        worst,
        1.0,
        members,
        format!("eps = {eps}, latest monotone onset t* = {t_star:.3}"),
    ))
}

fn ball_check(cfg: &VerificationConfig, runs: &[TrajectoryRecord<f64>]) -> CheckResult {
    let radius = 2.0 * cfg.forcing.profile.l2_norm() / cfg.params.gamma;
    let bound = radius + cfg.tolerances.ball_slack;
    let members: Vec<f64> = runs.iter().map(|r| r.final_state.u.l2_norm()).collect();
    let worst = members.iter().copied().fold(0.0, f64::max);
    let entry = runs
        .iter()
        .map(|r| {
            r.samples
                .iter()
                .find(|s| s.report.mass.sqrt() <= bound)
                .map_or(f64::INFINITY, |s| s.report.time)
        })
        .fold(0.0, f64::max);
    let regime = if cfg.params.gamma > 0.0 { Regime::Inside } else { Regime::Outside };
    CheckResult::new(
        "absorbing_ball",
        regime,
        worst,
        bound,
        members,
        format!("radius {radius:.6}, latest entry time {entry}"),
    )
}

/// Convergence of every ensemble member to the equilibrium in the energy
/// space. Outside the fixed-point regime the result is informational.
pub fn verify_trivial_attractor(cfg: &VerificationConfig) -> Result<CheckResult> {
    cfg.validate()?;
    let (eq, note) = regime_equilibrium(cfg);
    let runs = match &eq {
        Some(e) => ensemble_runs(cfg, Some(e))?,
        None => Vec::new(),
    };
    trivial_attractor_check(cfg, eq.as_ref(), &runs, note)
}

/// Eventual monotone decay of the Lyapunov functional at a rate consistent
/// with `ε`.
pub fn verify_lyapunov_decay(cfg: &VerificationConfig) -> Result<CheckResult> {
    cfg.validate()?;
    let (eq, _) = regime_equilibrium(cfg);
    let Some(eq) = eq else {
        return Ok(CheckResult::new(
            "lyapunov_decay",
            Regime::Outside,
            f64::NAN,
            1.0,
            Vec::new(),
            "no reference equilibrium".into(),
        ));
    };
    let runs = ensemble_runs(cfg, Some(&eq))?;
    lyapunov_check(cfg, Some(&eq), &runs)
}

/// Terminal `‖u‖₂` against `2‖f‖₂/γ` and the latest entry time.
pub fn verify_absorbing_ball(cfg: &VerificationConfig) -> Result<CheckResult> {
    cfg.validate()?;
    let runs = ensemble_runs(cfg, None)?;
    Ok(ball_check(cfg, &runs))
}

/// Relative drift of mass and energy with damping and forcing removed.
/// Returns one result per quantity. Energy is only conserved by the
/// dealiased discretisation; without it aliasing leaves a drift that does
/// not shrink with `h`.
pub fn verify_conservation(cfg: &VerificationConfig) -> Result<[CheckResult; 2]> {
    cfg.validate()?;
    let params = ModelParams {
        gamma: 0.0,
        delta: 0.0,
        ..cfg.params
    };
    let forcing = Forcing::zero(cfg.grid());
    let mut cache = CoefficientCache::default();
    let mut mass = Vec::new();
    let mut energy = Vec::new();
    for s in ensemble_states(cfg)? {
        let r = run_member(cfg, &s, &params, &forcing, None, &mut cache)?;
        let first = r.samples[0].report;
        let drift = |f: &dyn Fn(&crate::model::EnergyReport<f64>) -> f64| {
            let base = f(&first).abs().max(f64::MIN_POSITIVE);
            r.samples.iter().map(|s| (f(&s.report) - f(&first)).abs() / base).fold(0.0, f64::max)
        };
        mass.push(drift(&|e| e.mass));
        energy.push(drift(&|e| e.full_energy));
    }
    let mk = |name, members: Vec<f64>, bound| {
        let worst = members.iter().copied().fold(0.0, f64::max);
        CheckResult::new(name, Regime::Inside, worst, bound, members, String::new())
    };
    Ok([
        mk("mass_conservation", mass, cfg.tolerances.mass_drift),
        mk("energy_conservation", energy, cfg.tolerances.energy_drift),
    ])
}

/// All checks; the damped ones share one ensemble of trajectories.
pub fn verify_all(cfg: &VerificationConfig) -> Result<VerificationReport> {
    cfg.validate()?;
    let (eq, note) = regime_equilibrium(cfg);
    let runs = ensemble_runs(cfg, eq.as_ref())?;
    let mut checks = vec![trivial_attractor_check(cfg, eq.as_ref(), &runs, note)?];
    checks.push(if eq.is_some() {
        lyapunov_check(cfg, eq.as_ref(), &runs)?
    } else {
        CheckResult::new(
            "lyapunov_decay",
            Regime::Outside,
            f64::NAN,
            1.0,
            Vec::new(),
            "no reference equilibrium".into(),
        )
    });
    checks.push(ball_check(cfg, &runs));
    checks.extend(verify_conservation(cfg)?);
    Ok(VerificationReport { checks })
}
