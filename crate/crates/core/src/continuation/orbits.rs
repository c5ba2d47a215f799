//! Periodic orbits by single shooting.
//!
//! Unknowns are `z = (x0, T, p)` with `x0` in the real `4N` coordinates.
//! Equations: `Φ_T(x0; p) - x0 = 0`, the phase condition
//! `⟨x0 - x_ref, F(x_ref)⟩ = 0`, and, when `p` is free, one linear
//! constraint (pseudo-arclength or a pinned amplitude). The flow is the
//! ETDRK4 map with `n` uniform steps of `T/n`; the monodromy matrix is built
//! from forward differences of trajectories.

use std::cell::Cell;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::{
    sweep_target, BifurcationEvent, Branch, BranchPoint, ContinuationSettings, EventKind,
    ParamName, Solution, Stability,
};
use crate::error::{Error, Result};
use crate::etdrk4::{EtdCoefficients, Stepper};
use crate::model::{full_rhs, Forcing, ModelParams, ZakharovState};
use crate::spectral::Grid;
use crate::stability::{assemble_jacobian, eigenvector, spectrum};

type State = ZakharovState<f64>;

/// Time discretisation of the flow map.
#[derive(Clone, Debug)]
pub struct FlowSettings {
    /// Largest step; the step count is rounded up to a multiple of
    /// `step_multiple`.
    pub h_max: f64,
    pub step_multiple: usize,
}

impl Default for FlowSettings {
    fn default() -> Self {
        Self {
            h_max: 2.5e-3,
            step_multiple: 64,
        }
    }
}

impl FlowSettings {
    pub fn steps_for(&self, period: f64) -> usize {
        let m = self.step_multiple.max(1);
        let raw = (period / self.h_max).ceil().max(1.0) as usize;
        raw.div_ceil(m) * m
    }
}

/// Tolerances for the shooting Newton iteration.
#[derive(Clone, Debug)]
pub struct ShootingSettings {
    pub flow: FlowSettings,
    /// Target for `‖Φ_T(x0) - x0‖₂`.
    pub tol: f64,
    pub max_iter: usize,
    /// Forward-difference step for monodromy columns.
    pub fd_step: f64,
    /// Orbits whose amplitude falls below this are rejected.
    pub min_amplitude: f64,
    pub max_period: f64,
    /// Continuation stops at the first orbit whose half-step re-integration
    /// residual or trivial-multiplier error exceeds these.
    pub verify_tol: f64,
    pub trivial_tol: f64,
}

impl Default for ShootingSettings {
    fn default() -> Self {
        Self {
            flow: FlowSettings::default(),
            tol: 1e-9,
            max_iter: 12,
            fd_step: 1e-6,
            min_amplitude: 1e-8,
            max_period: 500.0,
            verify_tol: 1e-7,
            trivial_tol: 1e-3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OrbitClass {
    Stable,
    PeriodDoublingCritical,
    TorusCritical,
    Unstable,
}

impl OrbitClass {
    pub fn as_str(self) -> &'static str {
        match self {
            OrbitClass::Stable => "stable",
            OrbitClass::PeriodDoublingCritical => "period_doubling_critical",
            OrbitClass::TorusCritical => "torus_critical",
            OrbitClass::Unstable => "unstable",
        }
    }
}

/// Imaginary parts below this count as real multipliers.
const REAL_FLOOR: f64 = 1e-6;
/// Distance to −1 or to the unit circle that marks a critical orbit.
const CRITICAL_BAND: f64 = 0.05;

#[derive(Clone, Debug)]
pub struct OrbitPoint {
    pub x0: State,
    pub period: f64,
    pub params: ModelParams<f64>,
    pub forcing: Forcing<f64>,
    /// All multipliers, sorted by modulus descending.
    pub multipliers: Vec<Complex64>,
    /// Index in `multipliers` of the one attached to the flow direction.
    pub trivial_index: usize,
    pub orbit_class: OrbitClass,
    /// `‖Φ_T(x0) - x0‖₂` at the shooting step.
    pub residual: f64,
    /// Same quantity recomputed with half the step.
    pub verified_residual: f64,
    pub steps: usize,
    /// Period average of `(‖u‖² + ‖ñ‖²)^{1/2}`.
    pub norm_stat: f64,
    /// Largest distance of the sampled orbit from its period mean.
    pub amplitude: f64,
    pub doubled: bool,
    pub monodromy: DMatrix<f64>,
}

impl OrbitPoint {
    pub fn trivial_multiplier(&self) -> Complex64 {
        self.multipliers[self.trivial_index]
    }

    /// Whether the orbit passes the re-integration and trivial-multiplier
    /// checks.
    pub fn is_accurate(&self, s: &ShootingSettings) -> bool {
        self.verified_residual < s.verify_tol && (self.trivial_multiplier() - 1.0).norm() < s.trivial_tol
    }

    pub fn floquet_multipliers(&self) -> Vec<Complex64> {
        self.multipliers
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != self.trivial_index)
            .map(|(_, m)| *m)
            .collect()
    }

    /// Smallest real nontrivial multiplier, if any.
    pub fn min_real_multiplier(&self) -> Option<f64> {
        self.floquet_multipliers()
            .iter()
            .filter(|m| m.im.abs() < REAL_FLOOR)
            .map(|m| m.re)
            .min_by(f64::total_cmp)
    }

    /// Largest modulus among genuinely complex multipliers.
    pub fn max_complex_modulus(&self) -> Option<f64> {
        self.floquet_multipliers()
            .iter()
            .filter(|m| m.im.abs() > 1e-3)
            .map(|m| m.norm())
            .max_by(f64::total_cmp)
    }

    /// Samples of the orbit at `samples` equally spaced times (first sample
    /// is `x0`).
    pub fn trace(&self, samples: usize) -> Result<Vec<(f64, State)>> {
        let steps = self.steps.div_ceil(samples.max(1)) * samples.max(1);
        let coeffs = EtdCoefficients::new(&self.params, self.x0.grid(), self.period / steps as f64)?;
        let mut stepper = Stepper::new(self.x0.grid());
        let mut x = self.x0.clone();
        let stride = steps / samples.max(1);
        let mut out = vec![(0.0, x.clone())];
        for s in 1..steps {
            stepper.step(&mut x, 0.0, &coeffs, &self.forcing)?;
            if s % stride == 0 {
                out.push((s as f64 * coeffs.h, x.clone()));
            }
        }
        Ok(out)
    }
}

/// `Φ_T(x0)` with `steps` uniform steps.
pub fn flow_map(
    x0: &State,
    forcing: &Forcing<f64>,
    params: &ModelParams<f64>,
    period: f64,
    steps: usize,
) -> Result<State> {
    let coeffs = EtdCoefficients::new(params, x0.grid(), period / steps as f64)?;
    run(x0, forcing, &coeffs, steps, &mut Stepper::new(x0.grid()))
}

fn run(
    x0: &State,
    forcing: &Forcing<f64>,
    coeffs: &EtdCoefficients<f64>,
    steps: usize,
    stepper: &mut Stepper<f64>,
) -> Result<State> {
    let mut x = x0.clone();
    for _ in 0..steps {
        stepper.step(&mut x, 0.0, coeffs, forcing)?;
    }
    if !x.is_finite() {
        return Err(Error::BlowUp {
            time: coeffs.h * steps as f64,
            reason: "non-finite state in shooting".into(),
            last_mass: f64::NAN,
            last_energy: f64::NAN,
        });
    }
    Ok(x)
}

fn vector_field(x: &State, forcing: &Forcing<f64>, params: &ModelParams<f64>) -> Result<DVector<f64>> {
    Ok(DVector::from_vec(full_rhs(x, &forcing.profile, params)?.to_real_vec()))
}

/// Turns the Euclidean norm of a real coefficient vector into the L² norm.
const L2_SCALE: f64 = 2.5066282746310002; // sqrt(2π)

/// Shooting problem at fixed grid, forcing and base parameters.
struct Shooting<'a> {
    grid: Grid<f64>,
    forcing: &'a Forcing<f64>,
    base: ModelParams<f64>,
    param: Option<ParamName>,
    settings: &'a ShootingSettings,
    /// Current step bound; continuation may lower it.
    h_max: Cell<f64>,
}

/// Linear side condition `c · z = c0`.
struct Constraint {
    c: DVector<f64>,
    c0: f64,
}

struct Solved {
    z: DVector<f64>,
    steps: usize,
    residual: f64,
    iterations: usize,
}

impl<'a> Shooting<'a> {
    fn new(
        grid: &Grid<f64>,
        forcing: &'a Forcing<f64>,
        base: ModelParams<f64>,
        param: Option<ParamName>,
        settings: &'a ShootingSettings,
    ) -> Self {
        Self {
            grid: grid.clone(),
            forcing,
            base,
            param,
            settings,
            h_max: Cell::new(settings.flow.h_max),
        }
    }

    fn steps_for(&self, period: f64) -> usize {
        FlowSettings {
            h_max: self.h_max.get(),
            ..self.settings.flow.clone()
        }
        .steps_for(period)
    }

    fn dim(&self) -> usize {
        4 * self.grid.num_modes()
    }

    fn unknowns(&self) -> usize {
        self.dim() + 1 + usize::from(self.param.is_some())
    }

    fn params_of(&self, z: &DVector<f64>) -> ModelParams<f64> {
        match self.param {
            Some(p) => p.with(&self.base, z[self.dim() + 1]),
            None => self.base,
        }
    }

    fn state_of(&self, z: &DVector<f64>) -> Result<State> {
        State::from_real_vec(&self.grid, &z.as_slice()[..self.dim()])
    }

    fn pack(&self, x: &State, period: f64, p: Option<f64>) -> DVector<f64> {
        let mut v = x.to_real_vec();
        v.push(period);
        if let Some(p) = p {
            v.push(p);
        }
        DVector::from_vec(v)
    }

    /// `Φ_T(x0) - x0` in real coordinates and the end point.
    fn periodicity(&self, z: &DVector<f64>, steps: usize) -> Result<(DVector<f64>, State)> {
        let d = self.dim();
        let period = z[d];
        if !(period > 0.0) {
            return Err(Error::PeriodCollapse { period });
        }
        let params = self.params_of(z);
        params.validate()?;
        let x0 = self.state_of(z)?;
        let end = flow_map(&x0, self.forcing, &params, period, steps)?;
        let r = DVector::from_vec(end.to_real_vec()) - z.rows(0, d);
        Ok((r, end))
    }

    /// Monodromy `DΦ_T(x0)` by forward differences, or central ones when
    /// `end` is `None`.
    fn monodromy(&self, z: &DVector<f64>, steps: usize, end: Option<&State>) -> Result<DMatrix<f64>> {
        let d = self.dim();
        let params = self.params_of(z);
        let coeffs = EtdCoefficients::new(&params, &self.grid, z[d] / steps as f64)?;
        let mut stepper = Stepper::new(&self.grid);
        let eps = self.settings.fd_step;
        let mut m = DMatrix::zeros(d, d);
        let mut x = z.rows(0, d).into_owned();
        let shifted = |x: &mut DVector<f64>, c: usize, by: f64, stepper: &mut Stepper<f64>| {
            x[c] += by;
            let xs = State::from_real_vec(&self.grid, x.as_slice());
            x[c] -= by;
            run(&xs?, self.forcing, &coeffs, steps, stepper).map(|e| DVector::from_vec(e.to_real_vec()))
        };
        for c in 0..d {
            let col = match end {
                Some(end) => (shifted(&mut x, c, eps, &mut stepper)? - DVector::from_vec(end.to_real_vec())) / eps,
                None => {
                    (shifted(&mut x, c, eps, &mut stepper)? - shifted(&mut x, c, -eps, &mut stepper)?)
                        / (2.0 * eps)
                }
            };
            m.set_column(c, &col);
        }
        Ok(m)
    }

    /// Full Jacobian of `[periodicity; phase; constraint]` given `M`.
    fn jacobian(
        &self,
        z: &DVector<f64>,
        steps: usize,
        m: &DMatrix<f64>,
        end: &State,
        f_ref: &DVector<f64>,
        constraint: Option<&Constraint>,
    ) -> Result<DMatrix<f64>> {
        let d = self.dim();
        let k = self.unknowns();
        let params = self.params_of(z);
        let mut j = DMatrix::zeros(k, k);
        let mut mi = m.clone();
        for i in 0..d {
            mi[(i, i)] -= 1.0;
        }
        j.view_mut((0, 0), (d, d)).copy_from(&mi);
        // dΦ/dT is the vector field at the end point (the step count is fixed)
        let ft = vector_field(end, self.forcing, &params)?;
        j.view_mut((0, d), (d, 1)).copy_from(&ft);
        j.view_mut((d, 0), (1, d)).copy_from(&f_ref.transpose());
        if let Some(pn) = self.param {
            let p = z[d + 1];
            let hp = 1e-7 * p.abs().max(1.0);
            let mut zp = z.clone();
            zp[d + 1] = p + hp;
            let (rp, _) = self.periodicity(&zp, steps)?;
            let (r0, _) = self.periodicity(z, steps)?;
            let _ = pn;
            j.view_mut((0, d + 1), (d, 1)).copy_from(&((rp - r0) / hp));
            let c = constraint.ok_or_else(|| Error::invalid("constraint", "free parameter needs a side condition"))?;
            j.row_mut(d + 1).copy_from(&c.c.transpose());
        }
        Ok(j)
    }

    fn residual_vector(
        &self,
        z: &DVector<f64>,
        r_per: &DVector<f64>,
        x_ref: &DVector<f64>,
        f_ref: &DVector<f64>,
        constraint: Option<&Constraint>,
    ) -> DVector<f64> {
        let d = self.dim();
        let mut r = DVector::zeros(self.unknowns());
        r.rows_mut(0, d).copy_from(r_per);
        r[d] = f_ref.dot(&(z.rows(0, d) - x_ref));
        if let Some(c) = constraint {
            r[d + 1] = c.c.dot(z) - c.c0;
        }
        r
    }

    /// Newton (with monodromy reuse) on the shooting system. `jac0` seeds the
    /// first iteration.
    fn solve(
        &self,
        z0: &DVector<f64>,
        x_ref: &DVector<f64>,
        constraint: Option<&Constraint>,
        jac0: Option<DMatrix<f64>>,
    ) -> Result<(Solved, DMatrix<f64>)> {
        let d = self.dim();
        let params0 = self.params_of(z0);
        let f_ref = vector_field(&State::from_real_vec(&self.grid, x_ref.as_slice())?, self.forcing, &params0)?;
        let f_ref = &f_ref / f_ref.norm().max(1e-300);
        let steps = self.steps_for(z0[d]);
        let mut z = z0.clone();
        let (mut rp, mut end) = self.periodicity(&z, steps)?;
        let mut m = match jac0 {
            Some(m) => m,
            None => self.monodromy(&z, steps, Some(&end))?,
        };
        let mut fresh = true;
        let mut prev_norm = f64::INFINITY;
        for it in 1..=self.settings.max_iter {
            let r = self.residual_vector(&z, &rp, x_ref, &f_ref, constraint);
            let rn = r.norm();
            if rp.norm() * L2_SCALE < self.settings.tol && r.rows(d, r.len() - d).norm() < 1e-9 {
                return Ok((
                    Solved {
                        z,
                        steps,
                        residual: rp.norm() * L2_SCALE,
                        iterations: it - 1,
                    },
                    m,
                ));
            }
            if !fresh && rn > 0.3 * prev_norm {
                m = self.monodromy(&z, steps, Some(&end))?;
                fresh = true;
            } else {
                fresh = false;
            }
            prev_norm = rn;
            let j = self.jacobian(&z, steps, &m, &end, &f_ref, constraint)?;
            let dz = j.lu().solve(&(-&r)).ok_or(Error::Singular {
                context: "shooting Newton",
                condition: f64::INFINITY,
            })?;
            // keep the period positive
            let mut lambda = 1.0;
            while z[d] + lambda * dz[d] <= 0.5 * z[d] && lambda > 1e-3 {
                lambda *= 0.5;
            }
            z += &dz * lambda;
            if z[d] < 10.0 * self.h_max.get().min(1e-3) {
                return Err(Error::PeriodCollapse { period: z[d] });
            }
            if z[d] > self.settings.max_period {
                return Err(Error::NonConvergence {
                    method: "shooting Newton (period diverged)",
                    iterations: it,
                    residual: rn,
                });
            }
            (rp, end) = self.periodicity(&z, steps)?;
        }
        let r = self.residual_vector(&z, &rp, x_ref, &f_ref, constraint);
        if rp.norm() * L2_SCALE < self.settings.tol && r.rows(d, r.len() - d).norm() < 1e-9 {
            return Ok((
                Solved {
                    z,
                    steps,
                    residual: rp.norm() * L2_SCALE,
                    iterations: self.settings.max_iter,
                },
                m,
            ));
        }
        Err(Error::NonConvergence {
            method: "shooting Newton",
            iterations: self.settings.max_iter,
            residual: rp.norm() * L2_SCALE,
        })
    }

    /// Builds the orbit record, with a fresh monodromy at the solution.
    fn finish(&self, s: &Solved, doubled: bool) -> Result<OrbitPoint> {
        let d = self.dim();
        let params = self.params_of(&s.z);
        let x0 = self.state_of(&s.z)?;
        let period = s.z[d];
        let m = self.monodromy(&s.z, s.steps, None)?;
        let sp = spectrum(&m, 0.0)?;
        let mut multipliers = sp.eigenvalues;
        multipliers.sort_by(|a, b| b.norm().total_cmp(&a.norm()));
        let trivial_index = multipliers
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - 1.0).norm().total_cmp(&(b.1 - 1.0).norm()))
            .map(|(i, _)| i)
            .unwrap_or(0);
        let verify = flow_map(&x0, self.forcing, &params, period, 2 * s.steps)?;
        let verified_residual = verify.sub(&x0).l2_norm();

        // period samples for the norm statistic and amplitude
        let coeffs = EtdCoefficients::new(&params, &self.grid, period / s.steps as f64)?;
        let mut stepper = Stepper::new(&self.grid);
        let mut x = x0.clone();
        let mut norms = Vec::with_capacity(s.steps + 1);
        let mut mean = DVector::<f64>::zeros(d);
        let mut traj = Vec::with_capacity(s.steps);
        norms.push(x.l2_norm());
        for _ in 0..s.steps {
            let v = DVector::from_vec(x.to_real_vec());
            mean += &v;
            traj.push(v);
            stepper.step(&mut x, 0.0, &coeffs, self.forcing)?;
            norms.push(x.l2_norm());
        }
        mean /= s.steps as f64;
        let amplitude = traj
            .iter()
            .map(|v| (v - &mean).norm() * L2_SCALE)
            .fold(0.0, f64::max);
        let trapezoid: f64 = norms.windows(2).map(|w| 0.5 * (w[0] + w[1])).sum::<f64>() / s.steps as f64;

        let mut orbit = OrbitPoint {
            x0,
            period,
            params,
            forcing: self.forcing.clone(),
            multipliers,
            trivial_index,
            orbit_class: OrbitClass::Stable,
            residual: s.residual,
            verified_residual,
            steps: s.steps,
            norm_stat: trapezoid,
            amplitude,
            doubled,
            monodromy: m,
        };
        orbit.orbit_class = classify(&orbit);
        if orbit.amplitude < self.settings.min_amplitude {
            return Err(Error::OrbitCollapsed {
                amplitude: orbit.amplitude,
            });
        }
        Ok(orbit)
    }
}

fn classify(o: &OrbitPoint) -> OrbitClass {
    let others = o.floquet_multipliers();
    if others
        .iter()
        .any(|m| m.im.abs() < REAL_FLOOR && (m.re + 1.0).abs() < CRITICAL_BAND)
    {
        return OrbitClass::PeriodDoublingCritical;
    }
    if others
        .iter()
        .any(|m| m.im.abs() > 1e-3 && (m.norm() - 1.0).abs() < CRITICAL_BAND)
    {
        return OrbitClass::TorusCritical;
    }
    if others.iter().all(|m| m.norm() < 1.0) {
        OrbitClass::Stable
    } else {
        OrbitClass::Unstable
    }
}

/// Newton shooting at fixed parameters from `(guess_x0, guess_t)`.
pub fn shoot_orbit(
    guess_x0: &State,
    guess_t: f64,
    forcing: &Forcing<f64>,
    params: &ModelParams<f64>,
    settings: &ShootingSettings,
) -> Result<OrbitPoint> {
    if !(guess_t > 0.0) {
        return Err(Error::invalid("period", "guess must be positive"));
    }
    let sh = Shooting::new(guess_x0.grid(), forcing, *params, None, settings);
    let z0 = sh.pack(guess_x0, guess_t, None);
    let x_ref = z0.rows(0, sh.dim()).into_owned();
    let (solved, _) = sh.solve(&z0, &x_ref, None, None)?;
    sh.finish(&solved, false)
}

/// Branch switching at a Hopf point: pins the amplitude along the critical
/// eigenvector to `eps` and frees the parameter. Both signs of `eps` are
/// tried.
pub fn orbit_from_hopf(
    hopf: &BranchPoint,
    eps: f64,
    settings: &ShootingSettings,
) -> Result<OrbitPoint> {
    if !(eps > 0.0) {
        return Err(Error::invalid("eps", "amplitude must be positive"));
    }
    let eq = hopf
        .equilibrium()
        .ok_or_else(|| Error::invalid("hopf", "branch point is not an equilibrium"))?;
    let j = assemble_jacobian(eq)?;
    let report = spectrum(&j, 0.0)?;
    let lambda = report
        .critical_pair()
        .ok_or_else(|| Error::invalid("hopf", "no complex critical pair"))?;
    let v = eigenvector(&j, lambda)?;
    let mut dir = DVector::from_iterator(v.len(), v.iter().map(|c| c.re));
    dir /= dir.norm();
    let t0 = 2.0 * std::f64::consts::PI / lambda.im.abs();
    let sh = Shooting::new(eq.grid(), &eq.forcing, eq.params, Some(hopf.param_name), settings);
    let xeq = DVector::from_vec(eq.state().to_real_vec());
    let p0 = hopf.param_name.get(&eq.params);
    let mut last_err = None;
    for sign in [1.0, -1.0] {
        let a = sign * eps / L2_SCALE;
        let x0 = &xeq + &dir * a;
        let mut z0 = x0.clone().push(t0);
        z0 = z0.push(p0);
        let mut c = DVector::zeros(sh.unknowns());
        c.rows_mut(0, sh.dim()).copy_from(&dir);
        let constraint = Constraint {
            c,
            c0: dir.dot(&xeq) + a,
        };
        match sh
            .solve(&z0, &x0, Some(&constraint), None)
            .and_then(|(s, _)| sh.finish(&s, false))
        {
            Ok(o) => return Ok(o),
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.unwrap())
}

/// Restarts shooting with twice the period from `orbit` displaced by `kick`
/// along the eigenvector of the multiplier nearest −1, with the displacement
/// pinned and the parameter free.
pub fn double_period_branch(
    pd: &BranchPoint,
    kick: f64,
    settings: &ShootingSettings,
) -> Result<OrbitPoint> {
    let orbit = pd
        .orbit()
        .ok_or_else(|| Error::invalid("pd_event", "branch point is not an orbit"))?;
    let mu = orbit
        .floquet_multipliers()
        .into_iter()
        .min_by(|a, b| (a + 1.0).norm().total_cmp(&(b + 1.0).norm()))
        .ok_or_else(|| Error::invalid("pd_event", "orbit has no multipliers"))?;
    let w = eigenvector(&orbit.monodromy, mu)?;
    let mut dir = DVector::from_iterator(w.len(), w.iter().map(|c| c.re));
    dir /= dir.norm();
    let sh = Shooting::new(orbit.x0.grid(), &orbit.forcing, orbit.params, Some(pd.param_name), settings);
    let x_orbit = DVector::from_vec(orbit.x0.to_real_vec());
    let a = kick / L2_SCALE;
    let x0 = &x_orbit + &dir * a;
    let p0 = pd.param_name.get(&orbit.params);
    let z0 = x0.clone().push(2.0 * orbit.period).push(p0);
    let mut c = DVector::zeros(sh.unknowns());
    c.rows_mut(0, sh.dim()).copy_from(&dir);
    let constraint = Constraint {
        c,
        c0: dir.dot(&x_orbit) + a,
    };
    let (solved, _) = sh.solve(&z0, &x0, Some(&constraint), None)?;
    let doubled = sh.finish(&solved, true)?;
    let half = flow_map(
        &doubled.x0,
        &doubled.forcing,
        &doubled.params,
        0.5 * doubled.period,
        doubled.steps / 2,
    )?;
    let difference = half.sub(&doubled.x0).l2_norm();
    if difference < 1e-6 {
        return Err(Error::DoubledCover { difference });
    }
    Ok(doubled)
}

fn orbit_point(param: ParamName, o: OrbitPoint, event: EventKind) -> BranchPoint {
    BranchPoint {
        param_name: param,
        param_value: param.get(&o.params),
        norm_stat: o.norm_stat,
        stability: Stability::Floquet(o.floquet_multipliers()),
        solution: Solution::Orbit(Box::new(o)),
        event,
    }
}

/// Nontrivial multipliers outside the unit circle: `(real positive, real
/// negative, complex)`.
fn outside_counts(o: &OrbitPoint) -> (usize, usize, usize) {
    let mut c = (0, 0, 0);
    for m in o.floquet_multipliers().iter().filter(|m| m.norm() > 1.0) {
        if m.im.abs() > REAL_FLOOR {
            c.2 += 1;
        } else if m.re > 0.0 {
            c.0 += 1;
        } else {
            c.1 += 1;
        }
    }
    c
}

/// The count whose change defines `kind`: negative real multipliers for
/// period doubling, complex ones for a torus.
fn event_count(o: &OrbitPoint, kind: EventKind) -> usize {
    let (_, neg, cx) = outside_counts(o);
    if kind == EventKind::PeriodDoubling {
        neg
    } else {
        cx
    }
}

/// A multiplier leaves through −1 (period doubling) or a complex pair
/// crosses the unit circle (torus), while the other counts stay fixed so
/// that collisions on the real axis are not mistaken for either.
fn crossed_event(a: &OrbitPoint, b: &OrbitPoint, kind: EventKind) -> bool {
    let (pa, na, ca) = outside_counts(a);
    let (pb, nb, cb) = outside_counts(b);
    match kind {
        EventKind::PeriodDoubling => na != nb && ca == cb && pa == pb,
        _ => ca != cb && pa + na == pb + nb,
    }
}

/// Pseudo-arclength continuation of a periodic orbit in `(x0, T, p)`.
pub fn continue_orbits(
    start: &OrbitPoint,
    param: ParamName,
    range: (f64, f64),
    settings: &ContinuationSettings,
    shooting: &ShootingSettings,
) -> Result<Branch> {
    settings.validate()?;
    let p0 = param.get(&start.params);
    let (target, dir) = sweep_target(p0, range)?;
    let (lo, hi) = (range.0.min(range.1), range.0.max(range.1));
    let sh = Shooting::new(start.x0.grid(), &start.forcing, start.params, Some(param), shooting);
    let d = sh.dim();
    let k = sh.unknowns();
    let mut branch = Branch::default();
    let mut z = sh.pack(&start.x0, start.period, Some(p0));
    let mut orbit = start.clone();
    branch.points.push(orbit_point(param, start.clone(), EventKind::None));
    if (target - p0).abs() <= 1e-12 * (1.0 + p0.abs()) {
        return Ok(branch);
    }

    // tangent from the null vector of the bordered Jacobian with a seed row
    let tangent = |z: &DVector<f64>, m: &DMatrix<f64>, prev: &DVector<f64>| -> Result<DVector<f64>> {
        let x_ref = z.rows(0, d).into_owned();
        let params = sh.params_of(z);
        let f_ref = vector_field(&sh.state_of(z)?, sh.forcing, &params)?;
        let f_ref = &f_ref / f_ref.norm().max(1e-300);
        let steps = sh.steps_for(z[d]);
        let (_, end) = sh.periodicity(z, steps)?;
        let c = Constraint {
            c: prev.clone(),
            c0: 0.0,
        };
        let j = sh.jacobian(z, steps, m, &end, &f_ref, Some(&c))?;
        let _ = x_ref;
        let mut b = DVector::zeros(k);
        b[k - 1] = 1.0;
        let t = j.lu().solve(&b).ok_or(Error::Singular {
            context: "orbit tangent",
            condition: f64::INFINITY,
        })?;
        Ok(t.normalize())
    };

    let mut seed = DVector::zeros(k);
    seed[k - 1] = dir;
    let mut t = tangent(&z, &orbit.monodromy, &seed)?;
    if t[k - 1] * dir < 0.0 {
        t = -t;
    }
    let mut ds = settings.ds;
    let mut easy = 0;
    while branch.points.len() < settings.max_points {
        let z_pred = &z + &t * ds;
        let x_ref = z.rows(0, d).into_owned();
        let constraint = Constraint {
            c: t.clone(),
            c0: t.dot(&z_pred),
        };
        let attempt = sh
            .solve(&z_pred, &x_ref, Some(&constraint), Some(orbit.monodromy.clone()))
            .and_then(|(s, _)| {
                let o = sh.finish(&s, start.doubled)?;
                Ok((s, o))
            });
        let accepted = match attempt {
            // refine the time step before the residual reaches the tolerance
            Ok((_, o))
                if o.verified_residual > 0.25 * shooting.verify_tol
                    && sh.h_max.get() > shooting.flow.h_max / 8.0 =>
            {
                sh.h_max.set(0.5 * sh.h_max.get());
                continue;
            }
            Ok((_, o)) if !o.is_accurate(shooting) => {
                branch.truncated = Some(format!(
                    "orbit accuracy lost at {} = {} (re-integration residual {:e}, trivial multiplier {})",
                    param,
                    param.get(&o.params),
                    o.verified_residual,
                    o.trivial_multiplier()
                ));
                break;
            }
            Ok((s, o)) => {
                let jump = (o.norm_stat - orbit.norm_stat).abs();
                let ok = jump <= 5.0 * ds * L2_SCALE.max(1.0) && s.z[d + 1] > 0.0;
                ok.then_some((s, o))
            }
            Err(Error::OrbitCollapsed { amplitude }) => {
                branch.truncated = Some(format!("orbit collapsed (amplitude {amplitude:e})"));
                break;
            }
            Err(_) => None,
        };
        let Some((solved, new_orbit)) = accepted else {
            ds *= 0.5;
            easy = 0;
            if ds < settings.ds_min {
                branch.truncated = Some(format!(
                    "shooting corrector failed at {} = {}",
                    param,
                    z[d + 1]
                ));
                break;
            }
            continue;
        };
        let p_prev = z[d + 1];
        let z_new = solved.z.clone();
        let p_new = z_new[d + 1];
        let t_new = tangent(&z_new, &new_orbit.monodromy, &t)?;

        if t_new[k - 1] * t[k - 1] < 0.0 {
            branch.events.push(BifurcationEvent {
                kind: EventKind::Fold,
                param_value: p_new,
                bracket: (p_prev.min(p_new), p_prev.max(p_new)),
                point: branch.points.len(),
            });
        }
        for kind in [EventKind::PeriodDoubling, EventKind::Torus] {
            if !crossed_event(&orbit, &new_orbit, kind) {
                continue;
            }
            let refined = refine_orbit_event(&sh, &z, &t, &orbit, &z_new, kind, settings);
            let (lo, hi, at) = match refined {
                Ok((lo, hi, o)) => (lo, hi, o.is_accurate(shooting).then_some(o)),
                Err(_) => (p_prev.min(p_new), p_prev.max(p_new), None),
            };
            let value = at.as_ref().map_or(0.5 * (lo + hi), |o| param.get(&o.params));
            branch.events.push(BifurcationEvent {
                kind,
                param_value: value,
                bracket: (lo, hi),
                point: branch.points.len(),
            });
            if let Some(o) = at {
                branch.points.push(orbit_point(param, o, kind));
            } else {
                branch.points.last_mut().unwrap().event = kind;
            }
        }

        if p_new > hi || p_new < lo {
            break;
        }
        branch.points.push(orbit_point(param, new_orbit.clone(), EventKind::None));
        z = z_new;
        t = t_new;
        orbit = new_orbit;
        // chord iterations converge linearly, so allow more before calling a
        // step easy
        if solved.iterations <= 5 {
            easy += 1;
            if easy >= 3 {
                ds = (2.0 * ds).min(settings.ds_max);
                easy = 0;
            }
        } else {
            easy = 0;
        }
    }
    Ok(branch)
}

/// Bisection in arclength on the event count between two orbit points.
fn refine_orbit_event(
    sh: &Shooting<'_>,
    za: &DVector<f64>,
    ta: &DVector<f64>,
    oa: &OrbitPoint,
    zb: &DVector<f64>,
    kind: EventKind,
    settings: &ContinuationSettings,
) -> Result<(f64, f64, OrbitPoint)> {
    let d = sh.dim();
    let count_a = event_count(oa, kind);
    let mut s_lo = 0.0;
    let mut s_hi = ta.dot(&(zb - za));
    let mut p_lo = za[d + 1];
    let mut p_hi = zb[d + 1];
    let mut best: Option<OrbitPoint> = None;
    let x_ref = za.rows(0, d).into_owned();
    for _ in 0..30 {
        if (p_hi - p_lo).abs() < settings.event_accuracy {
            break;
        }
        let s = 0.5 * (s_lo + s_hi);
        let z_pred = za + ta * s;
        let c = Constraint {
            c: ta.clone(),
            c0: ta.dot(&z_pred),
        };
        let (solved, _) = sh.solve(&z_pred, &x_ref, Some(&c), Some(oa.monodromy.clone()))?;
        let o = sh.finish(&solved, oa.doubled)?;
        if event_count(&o, kind) == count_a {
            s_lo = s;
            p_lo = solved.z[d + 1];
        } else {
            s_hi = s;
            p_hi = solved.z[d + 1];
        }
        best = Some(o);
    }
    let o = best.ok_or_else(|| Error::Eigen("no refinement step taken".into()))?;
    Ok((p_lo.min(p_hi), p_lo.max(p_hi), o))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::continuation::{continue_equilibria, ContinuationSettings};
    use crate::stationary::fixed_point_solve;

    fn hopf_point() -> BranchPoint {
        let g = Grid::new(8).unwrap();
        let f = Forcing::sine(&g);
        let p = ModelParams::new(0.6, 1.0, 1.0, 1.0).unwrap();
        let eq = fixed_point_solve(&f, &p, 1e-12, 2000).unwrap();
        let s = ContinuationSettings::default();
        let b = continue_equilibria(&eq, ParamName::Gamma, (0.6, 0.45), &s).unwrap();
        let e = b.events_of(EventKind::Hopf).next().expect("hopf in range");
        b.points[e.point].clone()
    }

    fn hopf_orbit() -> OrbitPoint {
        orbit_from_hopf(&hopf_point(), 1e-3, &ShootingSettings::default()).unwrap()
    }

    #[test]
    fn equilibrium_guess_collapses() {
        let g = Grid::new(8).unwrap();
        let f = Forcing::sine(&g);
        let p = ModelParams::new(1.0, 1.0, 1.0, 1.0).unwrap();
        let eq = fixed_point_solve(&f, &p, 1e-12, 2000).unwrap();
        let err = shoot_orbit(&eq.state(), 3.0, &f, &p, &ShootingSettings::default()).unwrap_err();
        assert!(matches!(err, Error::OrbitCollapsed { .. }), "{err}");
        let err = shoot_orbit(&eq.state(), 0.0, &f, &p, &ShootingSettings::default()).unwrap_err();
        assert!(matches!(err, Error::InvalidParameter { .. }));
    }

    #[test]
    fn hopf_orbit_is_accurate() {
        let sh = ShootingSettings::default();
        let o = hopf_orbit();
        assert!(o.period > 0.0 && o.amplitude > 1e-4);
        assert!(o.residual < sh.tol);
        assert!(o.is_accurate(&sh), "{} {}", o.verified_residual, o.trivial_multiplier());
        assert!((o.trivial_multiplier() - 1.0).norm() < 1e-3);
        assert_eq!(o.floquet_multipliers().len(), o.multipliers.len() - 1);
    }

    #[test]
    fn trace_closes_up() {
        let o = hopf_orbit();
        let tr = o.trace(16).unwrap();
        assert_eq!(tr.len(), 16);
        assert!(tr.windows(2).all(|w| w[1].0 > w[0].0));
        let end = flow_map(&o.x0, &o.forcing, &o.params, o.period, o.steps).unwrap();
        assert!(end.sub(&o.x0).l2_norm() * L2_SCALE < 1e-7);
    }

    #[test]
    fn orbit_branch_basics_and_reconvergence() {
        let o = hopf_orbit();
        let p = o.params.gamma;
        let s = ContinuationSettings::default();
        let sh = ShootingSettings::default();
        let single = continue_orbits(&o, ParamName::Gamma, (p, p), &s, &sh).unwrap();
        assert_eq!(single.points.len(), 1);

        let b = continue_orbits(&o, ParamName::Gamma, (p, p - 0.02), &s, &sh).unwrap();
        assert!(b.points.len() > 2);
        for bp in &b.points {
            let orbit = bp.orbit().unwrap();
            assert!(orbit.is_accurate(&sh));
            assert!(bp.norm_stat > 0.0);
            assert!(bp.param_value <= p + 1e-9 && bp.param_value >= p - 0.02 - 1e-9);
        }

        // away from the Hopf point the orbit is isolated at fixed parameter
        let far = b.points.last().unwrap().orbit().unwrap();
        let tight = ShootingSettings {
            tol: 1e-11,
            ..sh.clone()
        };
        let again = shoot_orbit(&far.x0, far.period, &far.forcing, &far.params, &tight).unwrap();
        assert!(again.residual < 1e-10);
        assert!((again.period - far.period).abs() < 1e-6 * far.period);
        let d = again.x0.sub(&far.x0).l2_norm();
        assert!(d < 1e-6 * far.x0.l2_norm(), "{d}");
    }

    #[test]
    fn zero_kick_gives_doubled_cover() {
        let o = hopf_orbit();
        let bp = orbit_point(ParamName::Gamma, o, EventKind::None);
        let err = double_period_branch(&bp, 0.0, &ShootingSettings::default()).unwrap_err();
        assert!(matches!(err, Error::DoubledCover { .. }), "{err}");
    }

    #[test]
    fn event_counts_ignore_real_axis_collisions() {
        let mut o = hopf_orbit();
        let set = |o: &mut OrbitPoint, m: &[Complex64]| {
            o.multipliers = std::iter::once(Complex64::new(1.0, 0.0)).chain(m.iter().copied()).collect();
            o.trivial_index = 0;
        };
        let mut a = o.clone();
        set(&mut a, &[Complex64::new(3.0, 0.0), Complex64::new(2.0, 0.0)]);
        set(&mut o, &[Complex64::new(1.5, 1.5), Complex64::new(1.5, -1.5)]);
        assert!(!crossed_event(&a, &o, EventKind::Torus));
        let mut b = o.clone();
        set(&mut b, &[Complex64::new(0.5, 0.5), Complex64::new(0.5, -0.5)]);
        assert!(crossed_event(&o, &b, EventKind::Torus));
        let mut c = o.clone();
        set(&mut c, &[Complex64::new(-0.9, 0.0)]);
        let mut d = o.clone();
        set(&mut d, &[Complex64::new(-1.1, 0.0)]);
        assert!(crossed_event(&c, &d, EventKind::PeriodDoubling));
        assert!(!crossed_event(&c, &d, EventKind::Torus));
    }
}
