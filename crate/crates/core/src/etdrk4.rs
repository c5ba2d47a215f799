//! Fourth-order exponential time differencing (Cox–Matthews) with
//! contour-averaged coefficients (Kassam–Trefethen).
//!
//! For the diagonal linear part `L` and step `h`, with `z = Lh`:
//!
//! ```text
//! a   = e^{z/2} u + Q N(u)
//! b   = e^{z/2} u + Q N(a)
//! c   = e^{z/2} a + Q (2N(b) - N(u))
//! u⁺  = e^{z} u + f1 N(u) + 2 f2 (N(a) + N(b)) + f3 N(c)
//!
//! Q  = h (e^{z/2} - 1)/z
//! f1 = h (-4 - z + e^z (4 - 3z + z²))/z³
//! f2 = h (2 + z + e^z (z - 2))/z³
//! f3 = h (-4 - 3z - z² + e^z (4 - z))/z³
//! ```
//!
//! Each scalar function is evaluated as the mean over `M` points on a circle
//! around `z`, which removes the cancellation near `z = 0`.

use std::collections::HashMap;
use std::io::Write;
use std::sync::Arc;

use num_complex::Complex;
use num_traits::Zero;

use crate::error::{Error, Result};
use crate::model::{
    energy_report, linear_symbol, EnergyReport, EquilibriumRef, ForcingSource, ModelParams,
    NonlinearEvaluator, ZakharovState,
};
use crate::scalar::Real;
use crate::spectral::{Grid, SpectralField};

type C<T> = Complex<T>;

pub const DEFAULT_CONTOUR_POINTS: usize = 64;
pub const DEFAULT_CONTOUR_RADIUS: f64 = 1.0;
pub const DEFAULT_BLOWUP_NORM: f64 = 1e6;
pub const DEFAULT_HEALTH_THRESHOLD: f64 = 1e-6;

/// Per-mode weights for one component.
#[derive(Clone, Debug)]
pub struct ComponentWeights<T> {
    pub e: Vec<C<T>>,
    pub e2: Vec<C<T>>,
    pub q: Vec<C<T>>,
    pub f1: Vec<C<T>>,
    pub f2: Vec<C<T>>,
    pub f3: Vec<C<T>>,
}

/// Precomputed step weights for both components.
#[derive(Clone, Debug)]
pub struct EtdCoefficients<T: Real> {
    pub h: T,
    pub contour_points: usize,
    pub contour_radius: T,
    pub u: ComponentWeights<T>,
    pub n: ComponentWeights<T>,
    grid: Grid<T>,
    params: ModelParams<T>,
}

/// Contour-averaged values at `z` of
/// `((e^{z/2}-1)/z, (-4-z+e^z(4-3z+z²))/z³, (2+z+e^z(z-2))/z³, (-4-3z-z²+e^z(4-z))/z³)`.
///
/// Evaluated in `f64`. The radius is doubled while the circle passes within
/// `r/2` of the origin.
pub fn phi_functions(z: C<f64>, m: usize, r: f64) -> [C<f64>; 4] {
    let mut rad = r;
    while (z.norm() - rad).abs() < 0.5 * r {
        rad *= 2.0;
    }
    let mut acc = [C::zero(); 4];
    for j in 0..m {
        let theta = std::f64::consts::TAU * (j as f64 + 0.5) / m as f64;
        let w = z + C::from_polar(rad, theta);
        let ew = w.exp();
        let w3 = w * w * w;
        acc[0] += ((w * 0.5).exp() - 1.0) / w;
        acc[1] += (-4.0 - w + ew * (4.0 - 3.0 * w + w * w)) / w3;
        acc[2] += (2.0 + w + ew * (w - 2.0)) / w3;
        acc[3] += (-4.0 - 3.0 * w - w * w + ew * (4.0 - w)) / w3;
    }
    acc.map(|a| a / m as f64)
}

fn component_weights<T: Real>(l: &[C<T>], h: T, m: usize, r: T) -> ComponentWeights<T> {
    let hf = h.as_f64();
    let cast = |c: C<f64>| C::new(T::lit(c.re), T::lit(c.im));
    let mut w = ComponentWeights {
        e: Vec::with_capacity(l.len()),
        e2: Vec::with_capacity(l.len()),
        q: Vec::with_capacity(l.len()),
        f1: Vec::with_capacity(l.len()),
        f2: Vec::with_capacity(l.len()),
        f3: Vec::with_capacity(l.len()),
    };
    for lk in l {
        let z = C::new(lk.re.as_f64(), lk.im.as_f64()) * hf;
        let [q, f1, f2, f3] = phi_functions(z, m, r.as_f64());
        w.e.push(cast(z.exp()));
        w.e2.push(cast((z * 0.5).exp()));
        w.q.push(cast(q * hf));
        w.f1.push(cast(f1 * hf));
        w.f2.push(cast(f2 * hf));
        w.f3.push(cast(f3 * hf));
    }
    w
}

impl<T: Real> EtdCoefficients<T> {
    /// Weights for `grid`, `params` and step `h` with `m` contour points of
    /// radius `r`.
    pub fn precompute(
        params: &ModelParams<T>,
        grid: &Grid<T>,
        h: T,
        m: usize,
        r: T,
    ) -> Result<Self> {
        params.validate()?;
        if !(h > T::zero()) || !h.is_finite() {
            return Err(Error::invalid("h", "step size must be positive"));
        }
        if m < 16 {
            return Err(Error::invalid("contour_points", "need at least 16"));
        }
        if !(r > T::zero()) {
            return Err(Error::invalid("contour_radius", "must be positive"));
        }
        let (lu, ln) = linear_symbol(params, grid);
        Ok(Self {
            h,
            contour_points: m,
            contour_radius: r,
            u: component_weights(&lu, h, m, r),
            n: component_weights(&ln, h, m, r),
            grid: grid.clone(),
            params: *params,
        })
    }

    /// Default contour (64 points, radius 1).
    pub fn new(params: &ModelParams<T>, grid: &Grid<T>, h: T) -> Result<Self> {
        Self::precompute(
            params,
            grid,
            h,
            DEFAULT_CONTOUR_POINTS,
            T::lit(DEFAULT_CONTOUR_RADIUS),
        )
    }

    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    pub fn params(&self) -> &ModelParams<T> {
        &self.params
    }

    pub fn is_finite(&self) -> bool {
        [&self.u, &self.n].iter().all(|w| {
            [&w.e, &w.e2, &w.q, &w.f1, &w.f2, &w.f3]
                .iter()
                .all(|v| v.iter().all(|c| c.re.is_finite() && c.im.is_finite()))
        })
    }
}

type CacheKey = (usize, bool, [u64; 4], u64, usize, u64);

/// Memoises coefficients by grid, linear parameters, step and contour.
#[derive(Default)]
pub struct CoefficientCache<T: Real> {
    map: HashMap<CacheKey, Arc<EtdCoefficients<T>>>,
}

impl<T: Real> CoefficientCache<T> {
    pub fn new() -> Self {
        Self {
            map: HashMap::new(),
        }
    }

    pub fn get(
        &mut self,
        params: &ModelParams<T>,
        grid: &Grid<T>,
        h: T,
        m: usize,
        r: T,
    ) -> Result<Arc<EtdCoefficients<T>>> {
        let bits = |x: T| x.as_f64().to_bits();
        let key = (
            grid.num_modes(),
            grid.dealias(),
            [
                bits(params.gamma),
                bits(params.delta),
                bits(params.alpha1),
                bits(params.alpha2),
            ],
            bits(h),
            m,
            bits(r),
        );
        if let Some(c) = self.map.get(&key) {
            return Ok(c.clone());
        }
        let c = Arc::new(EtdCoefficients::precompute(params, grid, h, m, r)?);
        self.map.insert(key, c.clone());
        Ok(c)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Reusable stage buffers for [`Stepper::step`].
pub struct Stepper<T: Real> {
    eval: NonlinearEvaluator<T>,
    f0: Vec<C<T>>,
    fh: Vec<C<T>>,
    f1: Vec<C<T>>,
    nu: [Vec<C<T>>; 4],
    nn: [Vec<C<T>>; 4],
    au: Vec<C<T>>,
    an: Vec<C<T>>,
    bu: Vec<C<T>>,
    bn: Vec<C<T>>,
    cu: Vec<C<T>>,
    cn: Vec<C<T>>,
}

impl<T: Real> Stepper<T> {
    pub fn new(grid: &Grid<T>) -> Self {
        let z = || vec![C::zero(); grid.num_modes()];
        Self {
            eval: NonlinearEvaluator::new(grid),
            f0: z(),
            fh: z(),
            f1: z(),
            nu: [z(), z(), z(), z()],
            nn: [z(), z(), z(), z()],
            au: z(),
            an: z(),
            bu: z(),
            bn: z(),
            cu: z(),
            cn: z(),
        }
    }

    /// Advances `state` from `t` to `t + h` in place.
    pub fn step<F: ForcingSource<T> + ?Sized>(
        &mut self,
        state: &mut ZakharovState<T>,
        t: T,
        coeffs: &EtdCoefficients<T>,
        forcing: &F,
    ) -> Result<()> {
        if state.grid() != coeffs.grid() {
            return Err(Error::GridMismatch);
        }
        let h = coeffs.h;
        let p = &coeffs.params;
        forcing.write_at(t, &mut self.f0);
        if forcing.is_time_dependent() {
            forcing.write_at(t + T::lit(0.5) * h, &mut self.fh);
            forcing.write_at(t + h, &mut self.f1);
        } else {
            self.fh.copy_from_slice(&self.f0);
            self.f1.copy_from_slice(&self.f0);
        }
        let (wu, wn) = (&coeffs.u, &coeffs.n);
        let [nu0, nua, nub, nuc] = &mut self.nu;
        let [nn0, nna, nnb, nnc] = &mut self.nn;
        let u = state.u.coeffs_mut();
        let n = state.n_dirac.coeffs_mut();

        self.eval.eval(p, u, n, &self.f0, nu0, nn0);
        for j in 0..u.len() {
            self.au[j] = wu.e2[j] * u[j] + wu.q[j] * nu0[j];
            self.an[j] = wn.e2[j] * n[j] + wn.q[j] * nn0[j];
        }
        self.eval.eval(p, &self.au, &self.an, &self.fh, nua, nna);
        for j in 0..u.len() {
            self.bu[j] = wu.e2[j] * u[j] + wu.q[j] * nua[j];
            self.bn[j] = wn.e2[j] * n[j] + wn.q[j] * nna[j];
        }
        self.eval.eval(p, &self.bu, &self.bn, &self.fh, nub, nnb);
        let two = T::lit(2.0);
        for j in 0..u.len() {
            self.cu[j] = wu.e2[j] * self.au[j] + wu.q[j] * (nub[j].scale(two) - nu0[j]);
            self.cn[j] = wn.e2[j] * self.an[j] + wn.q[j] * (nnb[j].scale(two) - nn0[j]);
        }
        self.eval.eval(p, &self.cu, &self.cn, &self.f1, nuc, nnc);
        for j in 0..u.len() {
            u[j] = wu.e[j] * u[j]
                + wu.f1[j] * nu0[j]
                + (wu.f2[j] * (nua[j] + nub[j])).scale(two)
                + wu.f3[j] * nuc[j];
            n[j] = wn.e[j] * n[j]
                + wn.f1[j] * nn0[j]
                + (wn.f2[j] * (nna[j] + nnb[j])).scale(two)
                + wn.f3[j] * nnc[j];
        }
        n[0] = C::zero();
        Ok(())
    }
}

/// One step with freshly allocated buffers.
pub fn step<T: Real, F: ForcingSource<T> + ?Sized>(
    state: &ZakharovState<T>,
    t: T,
    coeffs: &EtdCoefficients<T>,
    forcing: &F,
) -> Result<ZakharovState<T>> {
    let mut out = state.clone();
    Stepper::new(state.grid()).step(&mut out, t, coeffs, forcing)?;
    Ok(out)
}

/// Fraction of `‖u‖² + ‖ñ‖²` carried by wavenumbers `|k| > N/3`; zero for
/// the zero state.
pub fn spectral_health<T: Real>(state: &ZakharovState<T>) -> T {
    let g = state.grid();
    let cutoff = g.num_modes() as i64 / 3;
    let mut high = T::zero();
    let mut total = T::zero();
    for (j, (a, b)) in state
        .u
        .coeffs()
        .iter()
        .zip(state.n_dirac.coeffs())
        .enumerate()
    {
        let e = a.norm_sqr() + b.norm_sqr();
        total += e;
        if g.wavenumber(j).abs() > cutoff {
            high += e;
        }
    }
    if total > T::zero() {
        high / total
    } else {
        T::zero()
    }
}

/// Settings for [`integrate`].
#[derive(Clone, Debug)]
pub struct IntegrateConfig<T: Real> {
    pub h: T,
    pub t0: T,
    pub t_final: T,
    /// Record diagnostics every this many steps (the final time is always
    /// recorded).
    pub sample_every: usize,
    /// Keep a full state every this many samples; 0 disables snapshots.
    pub snapshot_every: usize,
    pub contour_points: usize,
    pub contour_radius: T,
    pub blowup_norm: T,
    pub health_threshold: T,
    /// Equilibrium `(v, m)` against which the Lyapunov functional is logged.
    pub reference: Option<(SpectralField<T>, SpectralField<T>)>,
    pub lyapunov_eps: Option<T>,
}

impl<T: Real> IntegrateConfig<T> {
    pub fn new(h: T, t_final: T) -> Self {
        Self {
            h,
            t0: T::zero(),
            t_final,
            sample_every: 1,
            snapshot_every: 0,
            contour_points: DEFAULT_CONTOUR_POINTS,
            contour_radius: T::lit(DEFAULT_CONTOUR_RADIUS),
            blowup_norm: T::lit(DEFAULT_BLOWUP_NORM),
            health_threshold: T::lit(DEFAULT_HEALTH_THRESHOLD),
            reference: None,
            lyapunov_eps: None,
        }
    }
}

/// Diagnostics recorded at one sample time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sample<T> {
    pub report: EnergyReport<T>,
    pub spectral_health: T,
    /// Set when `spectral_health` exceeded the configured threshold.
    pub under_resolved: bool,
}

#[derive(Clone, Debug)]
pub struct TrajectoryRecord<T: Real> {
    pub samples: Vec<Sample<T>>,
    pub snapshots: Vec<(T, ZakharovState<T>)>,
    pub final_state: ZakharovState<T>,
    pub final_time: T,
    pub steps: usize,
}

impl<T: Real> TrajectoryRecord<T> {
    pub fn times(&self) -> impl Iterator<Item = T> + '_ {
        self.samples.iter().map(|s| s.report.time)
    }

    pub fn any_under_resolved(&self) -> bool {
        self.samples.iter().any(|s| s.under_resolved)
    }

    /// Writes the trajectory CSV.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "t,mass,schrodinger_energy,dirac_energy,full_energy,lyapunov_H,spectral_health"
        )?;
        for s in &self.samples {
            let r = &s.report;
            let h = r.lyapunov_h.map(|h| format!("{h:e}")).unwrap_or_default();
            writeln!(
                w,
                "{:e},{:e},{:e},{:e},{:e},{},{:e}",
                r.time,
                r.mass,
                r.schrodinger_energy,
                r.dirac_energy,
                r.full_energy,
                h,
                s.spectral_health
            )?;
        }
        Ok(())
    }
}

struct Recorder<'a, T: Real> {
    params: &'a ModelParams<T>,
    cfg: &'a IntegrateConfig<T>,
    record: Vec<Sample<T>>,
    snapshots: Vec<(T, ZakharovState<T>)>,
}

impl<T: Real> Recorder<'_, T> {
    fn sample(&mut self, t: T, state: &ZakharovState<T>) -> Result<()> {
        let reference = self
            .cfg
            .reference
            .as_ref()
            .map(|(v, m)| EquilibriumRef { v, m });
        let report = energy_report(state, self.params, t, reference, self.cfg.lyapunov_eps)?;
        let health = spectral_health(state);
        if self.cfg.snapshot_every > 0 && self.record.len().is_multiple_of(self.cfg.snapshot_every) {
            self.snapshots.push((t, state.clone()));
        }
        self.record.push(Sample {
            report,
            spectral_health: health,
            under_resolved: health > self.cfg.health_threshold,
        });
        Ok(())
    }
}

/// Callback invoked after every accepted step with the time and state.
pub type Observer<'a, T> = &'a mut dyn FnMut(T, &ZakharovState<T>);

/// Integrates from `cfg.t0` to `cfg.t_final`, landing exactly on the final
/// time with a shortened last step. `observer` sees every accepted step.
pub fn integrate<T: Real, F: ForcingSource<T> + ?Sized>(
    state0: &ZakharovState<T>,
    forcing: &F,
    params: &ModelParams<T>,
    cfg: &IntegrateConfig<T>,
    cache: Option<&mut CoefficientCache<T>>,
    mut observer: Option<Observer<'_, T>>,
) -> Result<TrajectoryRecord<T>> {
    let span = cfg.t_final - cfg.t0;
    if span < T::zero() || !span.is_finite() {
        return Err(Error::invalid("t_final", "must not precede the initial time"));
    }
    if cfg.sample_every == 0 {
        return Err(Error::invalid("sample_every", "must be positive"));
    }
    let grid = state0.grid().clone();
    let mut local = CoefficientCache::new();
    let cache = cache.unwrap_or(&mut local);
    let full = cache.get(params, &grid, cfg.h, cfg.contour_points, cfg.contour_radius)?;

    // whole steps plus a remainder, tolerant to rounding in span / h
    let ratio = span / cfg.h;
    let slack = T::lit(1e-9);
    let mut whole = ratio.floor().to_usize().unwrap_or(0);
    if ratio - T::from_usize_lossy(whole) > T::one() - slack {
        whole += 1;
    }
    let remainder = span - T::from_usize_lossy(whole) * cfg.h;
    let tail = if remainder > slack * cfg.h {
        Some(cache.get(params, &grid, remainder, cfg.contour_points, cfg.contour_radius)?)
    } else {
        None
    };

    let mut rec = Recorder {
        params,
        cfg,
        record: Vec::new(),
        snapshots: Vec::new(),
    };
    let mut state = state0.clone();
    rec.sample(cfg.t0, &state)?;
    let mut stepper = Stepper::new(&grid);
    let total = whole + usize::from(tail.is_some());
    let mut last = rec.record[0].report;
    for s in 0..total {
        let coeffs = if s < whole { &full } else { tail.as_ref().unwrap() };
        let t = cfg.t0 + T::from_usize_lossy(s) * cfg.h;
        stepper.step(&mut state, t, coeffs, forcing)?;
        let t_new = if s + 1 == total {
            cfg.t_final
        } else {
            cfg.t0 + T::from_usize_lossy(s + 1) * cfg.h
        };
        let norm = state.u.l2_norm();
        if !state.is_finite() || !(norm <= cfg.blowup_norm) {
            let reason = if state.is_finite() {
                format!("‖u‖₂ = {:e} exceeds {:e}", norm.as_f64(), cfg.blowup_norm.as_f64())
            } else {
                "non-finite coefficients".to_string()
            };
            return Err(Error::BlowUp {
                time: t_new.as_f64(),
                reason,
                last_mass: last.mass.as_f64(),
                last_energy: last.full_energy.as_f64(),
            });
        }
        if let Some(obs) = observer.as_mut() {
            obs(t_new, &state);
        }
        if (s + 1).is_multiple_of(cfg.sample_every) || s + 1 == total {
            rec.sample(t_new, &state)?;
            last = rec.record.last().unwrap().report;
        }
    }
    Ok(TrajectoryRecord {
        samples: rec.record,
        snapshots: rec.snapshots,
        final_state: state,
        final_time: cfg.t_final,
        steps: total,
    })
}

/// Final state only, without diagnostics.
pub fn flow<T: Real, F: ForcingSource<T> + ?Sized>(
    state0: &ZakharovState<T>,
    forcing: &F,
    coeffs: &EtdCoefficients<T>,
    steps: usize,
    stepper: &mut Stepper<T>,
) -> Result<ZakharovState<T>> {
    let mut s = state0.clone();
    let mut t = T::zero();
    for _ in 0..steps {
        stepper.step(&mut s, t, coeffs, forcing)?;
        t += coeffs.h;
    }
    if !s.is_finite() {
        return Err(Error::BlowUp {
            time: t.as_f64(),
            reason: "non-finite coefficients".into(),
            last_mass: f64::NAN,
            last_energy: f64::NAN,
        });
    }
    Ok(s)
}
