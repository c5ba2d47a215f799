//! The damped, forced Zakharov system in first-order Schrödinger–Dirac form
//!
//! ```text
//! u_t = (i∂ₓₓ - γ) u - i α₁ Re(ñ) u - i f
//! ñ_t = (-i d - δ) ñ - i α₂ d(|u|²),      d = (-∂ₓₓ)^{1/2}
//! ```
//!
//! The physical density is `n = Re ñ`. Along this flow
//! `n_t = d(Im ñ) - δ Re ñ` exactly; at `δ = 0` the pair `(n, n_t)` solves
//! `n_tt - n_xx = α₂ (|u|²)_xx`. The parameter called η in some
//! experiments is the same wave damping δ.

use num_complex::Complex;
use num_traits::Zero;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::spectral::{Grid, SpectralField, Workspace};

type C<T> = Complex<T>;

/// Physical and coupling parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelParams<T> {
    /// Schrödinger damping γ ≥ 0.
    pub gamma: T,
    /// Wave/Dirac damping δ ≥ 0.
    pub delta: T,
    pub alpha1: T,
    pub alpha2: T,
}

impl<T: Real> Default for ModelParams<T> {
    fn default() -> Self {
        Self {
            gamma: T::lit(0.4),
            delta: T::one(),
            alpha1: T::one(),
            alpha2: T::one(),
        }
    }
}

impl<T: Real> ModelParams<T> {
    pub fn new(gamma: T, delta: T, alpha1: T, alpha2: T) -> Result<Self> {
        let p = Self {
            gamma,
            delta,
            alpha1,
            alpha2,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let check = |name, v: T| {
            if !v.is_finite() {
                return Err(Error::invalid(name, "must be finite"));
            }
            Ok(())
        };
        check("gamma", self.gamma)?;
        check("delta", self.delta)?;
        check("alpha1", self.alpha1)?;
        check("alpha2", self.alpha2)?;
        if self.gamma < T::zero() {
            return Err(Error::invalid("gamma", "must be >= 0"));
        }
        if self.delta < T::zero() {
            return Err(Error::invalid("delta", "must be >= 0"));
        }
        Ok(())
    }

    /// Converts between scalar types.
    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            gamma: U::lit(self.gamma.as_f64()),
            delta: U::lit(self.delta.as_f64()),
            alpha1: U::lit(self.alpha1.as_f64()),
            alpha2: U::lit(self.alpha2.as_f64()),
        }
    }
}

/// Time-dependent forcing hook. Only constant profiles ship.
pub trait ForcingSource<T: Real> {
    /// Writes the forcing coefficients at time `t` into `out`.
    fn write_at(&self, t: T, out: &mut [C<T>]);

    fn is_time_dependent(&self) -> bool {
        false
    }
}

/// Time-independent forcing profile `f ∈ H¹`.
#[derive(Clone, Debug, PartialEq)]
pub struct Forcing<T: Real> {
    pub profile: SpectralField<T>,
    pub description: String,
}

impl<T: Real> ForcingSource<T> for Forcing<T> {
    fn write_at(&self, _t: T, out: &mut [C<T>]) {
        out.copy_from_slice(self.profile.coeffs());
    }
}

impl<T: Real> Forcing<T> {
    pub fn zero(grid: &Grid<T>) -> Self {
        Self {
            profile: SpectralField::zeros(grid),
            description: "zero".into(),
        }
    }

    /// `f = sin x`.
    pub fn sine(grid: &Grid<T>) -> Self {
        let half = T::lit(0.5);
        let mut profile = SpectralField::zeros(grid);
        profile.set_coeff(1, C::new(T::zero(), -half));
        profile.set_coeff(-1, C::new(T::zero(), half));
        Self {
            profile,
            description: "sin".into(),
        }
    }

    /// Parses `"sin"`, `"zero"` or `"modes:k1,c1;k2,c2;…"` where each `c` is
    /// a real or complex literal such as `0.5`, `-0.5i` or `1+2i`.
    pub fn from_spec(grid: &Grid<T>, spec: &str) -> Result<Self> {
        let spec = spec.trim();
        match spec {
            "sin" => return Ok(Self::sine(grid)),
            "zero" => return Ok(Self::zero(grid)),
            _ => {}
        }
        let Some(body) = spec.strip_prefix("modes:") else {
            return Err(Error::invalid(
                "forcing",
                format!("unknown profile `{spec}` (expected sin, zero or modes:k,c;...)"),
            ));
        };
        let mut profile = SpectralField::zeros(grid);
        for item in body.split(';').map(str::trim).filter(|s| !s.is_empty()) {
            let (k, c) = item
                .split_once(',')
                .ok_or_else(|| Error::invalid("forcing", format!("`{item}` is not `k,c`")))?;
            let k: i64 = k
                .trim()
                .parse()
                .map_err(|_| Error::invalid("forcing", format!("bad wavenumber `{k}`")))?;
            if grid.index(k).is_none() {
                return Err(Error::invalid(
                    "forcing",
                    format!("wavenumber {k} outside the grid"),
                ));
            }
            let (re, im) = parse_complex(c.trim())
                .ok_or_else(|| Error::invalid("forcing", format!("bad coefficient `{c}`")))?;
            profile.set_coeff(k, C::new(T::lit(re), T::lit(im)));
        }
        Ok(Self {
            profile,
            description: spec.to_string(),
        })
    }

    pub fn is_zero(&self) -> bool {
        self.profile.max_abs_coeff() == T::zero()
    }
}

/// Parses `a`, `bi`, `a+bi`, `a-bi`, `i`, `-i`.
pub fn parse_complex(s: &str) -> Option<(f64, f64)> {
    let s: String = s.chars().filter(|c| !c.is_whitespace()).collect();
    if s.is_empty() {
        return None;
    }
    let Some(body) = s.strip_suffix('i') else {
        return s.parse().ok().map(|re| (re, 0.0));
    };
    // split at the last sign that is not part of an exponent
    let bytes = body.as_bytes();
    let split = (1..bytes.len())
        .rev()
        .find(|&j| (bytes[j] == b'+' || bytes[j] == b'-') && !matches!(bytes[j - 1], b'e' | b'E'));
    let (re_part, im_part) = match split {
        Some(j) => (&body[..j], &body[j..]),
        None => ("", body),
    };
    let re = if re_part.is_empty() { 0.0 } else { re_part.parse().ok()? };
    let im = match im_part {
        "" | "+" => 1.0,
        "-" => -1.0,
        v => v.parse().ok()?,
    };
    Some((re, im))
}

/// The state `(u, ñ)`; `ñ` is kept mean-zero.
#[derive(Clone, Debug, PartialEq)]
pub struct ZakharovState<T: Real> {
    pub u: SpectralField<T>,
    pub n_dirac: SpectralField<T>,
}

impl<T: Real> ZakharovState<T> {
    /// Builds a state, projecting `ñ` onto mean zero.
    pub fn new(u: SpectralField<T>, n_dirac: SpectralField<T>) -> Result<Self> {
        if u.grid() != n_dirac.grid() {
            return Err(Error::GridMismatch);
        }
        let n_dirac = n_dirac.mean_zero_project();
        Ok(Self { u, n_dirac })
    }

    pub fn zeros(grid: &Grid<T>) -> Self {
        Self {
            u: SpectralField::zeros(grid),
            n_dirac: SpectralField::zeros(grid),
        }
    }

    pub fn grid(&self) -> &Grid<T> {
        self.u.grid()
    }

    /// `(‖u‖² + ‖ñ‖²)^{1/2}`.
    pub fn l2_norm(&self) -> T {
        (self.u.l2_norm_sq() + self.n_dirac.l2_norm_sq()).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.n_dirac.is_finite()
    }

    /// Real coordinates `(Re û, Im û, Re n̂, Im n̂)`, each block in FFT order.
    pub fn to_real_vec(&self) -> Vec<T> {
        let n = self.grid().num_modes();
        let mut out = Vec::with_capacity(4 * n);
        out.extend(self.u.coeffs().iter().map(|c| c.re));
        out.extend(self.u.coeffs().iter().map(|c| c.im));
        out.extend(self.n_dirac.coeffs().iter().map(|c| c.re));
        out.extend(self.n_dirac.coeffs().iter().map(|c| c.im));
        out
    }

    /// Inverse of [`ZakharovState::to_real_vec`]. Does not project `ñ`.
    pub fn from_real_vec(grid: &Grid<T>, x: &[T]) -> Result<Self> {
        let n = grid.num_modes();
        if x.len() != 4 * n {
            return Err(Error::LengthMismatch {
                expected: 4 * n,
                found: x.len(),
            });
        }
        let u = (0..n).map(|j| C::new(x[j], x[n + j])).collect();
        let nd = (0..n).map(|j| C::new(x[2 * n + j], x[3 * n + j])).collect();
        Ok(Self {
            u: SpectralField::from_coeffs(grid, u)?,
            n_dirac: SpectralField::from_coeffs(grid, nd)?,
        })
    }

    pub fn axpy(&mut self, a: T, x: &Self) {
        let a = C::new(a, T::zero());
        self.u.axpy(a, &x.u);
        self.n_dirac.axpy(a, &x.n_dirac);
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self {
            u: &self.u - &other.u,
            n_dirac: &self.n_dirac - &other.n_dirac,
        }
    }
}

/// Per-mode diagonal of the linear part: `(-ik² - γ, -i|k| - δ)`.
pub fn linear_symbol<T: Real>(params: &ModelParams<T>, grid: &Grid<T>) -> (Vec<C<T>>, Vec<C<T>>) {
    grid.wavenumbers()
        .map(|k| {
            let kf = T::from_i64_lossy(k);
            (
                C::new(-params.gamma, -kf * kf),
                C::new(-params.delta, -kf.mag()),
            )
        })
        .unzip()
}

/// Allocation-free evaluator of the nonlinear term for the time stepper.
pub struct NonlinearEvaluator<T: Real> {
    grid: Grid<T>,
    ws: Workspace<T>,
    phys_u: Vec<C<T>>,
    abs_k: Vec<T>,
}

impl<T: Real> NonlinearEvaluator<T> {
    pub fn new(grid: &Grid<T>) -> Self {
        let q = grid.quadrature_len();
        Self {
            grid: grid.clone(),
            ws: grid.workspace(),
            phys_u: vec![C::zero(); q],
            abs_k: grid.wavenumbers().map(|k| T::from_i64_lossy(k.abs())).collect(),
        }
    }

    /// Writes `N(u, ñ, f)` into `(out_u, out_n)`.
    pub fn eval(
        &mut self,
        params: &ModelParams<T>,
        u: &[C<T>],
        n_dirac: &[C<T>],
        forcing: &[C<T>],
        out_u: &mut [C<T>],
        out_n: &mut [C<T>],
    ) {
        let q = self.grid.quadrature_len();
        let g = &self.grid;
        g.to_quadrature(u, &mut self.phys_u, &mut self.ws.fft);
        g.to_quadrature(n_dirac, &mut self.ws.a, &mut self.ws.fft);
        for ((a, b), uv) in self.ws.a[..q]
            .iter_mut()
            .zip(self.ws.b[..q].iter_mut())
            .zip(&self.phys_u[..q])
        {
            // a <- Re(ñ)·u, b <- |u|²
            *a = uv.scale(a.re);
            *b = C::new(uv.norm_sqr(), T::zero());
        }
        g.from_quadrature(&mut self.ws.a, out_u, &mut self.ws.fft);
        g.from_quadrature(&mut self.ws.b, out_n, &mut self.ws.fft);
        let a1 = params.alpha1;
        let a2 = params.alpha2;
        for (o, f) in out_u.iter_mut().zip(forcing) {
            // -i α₁ (Re ñ u) - i f
            let s = o.scale(a1) + f;
            *o = C::new(s.im, -s.re);
        }
        for (o, k) in out_n.iter_mut().zip(&self.abs_k) {
            let s = o.scale(a2 * *k);
            *o = C::new(s.im, -s.re);
        }
        out_n[0] = C::zero();
    }
}

/// `N(u, ñ, f) = (-i α₁ Re(ñ) u - i f, -i α₂ d(|u|²))`.
pub fn nonlinear_rhs<T: Real>(
    state: &ZakharovState<T>,
    forcing: &SpectralField<T>,
    params: &ModelParams<T>,
) -> Result<ZakharovState<T>> {
    if state.u.grid() != state.n_dirac.grid() || state.u.grid() != forcing.grid() {
        return Err(Error::GridMismatch);
    }
    let grid = state.grid();
    let mut eval = NonlinearEvaluator::new(grid);
    let mut out = ZakharovState::zeros(grid);
    eval.eval(
        params,
        state.u.coeffs(),
        state.n_dirac.coeffs(),
        forcing.coeffs(),
        out.u.coeffs_mut(),
        out.n_dirac.coeffs_mut(),
    );
    Ok(out)
}

/// Full right-hand side `L x + N(x)`.
pub fn full_rhs<T: Real>(
    state: &ZakharovState<T>,
    forcing: &SpectralField<T>,
    params: &ModelParams<T>,
) -> Result<ZakharovState<T>> {
    let mut out = nonlinear_rhs(state, forcing, params)?;
    let (lu, ln) = linear_symbol(params, state.grid());
    for ((o, l), x) in out.u.coeffs_mut().iter_mut().zip(&lu).zip(state.u.coeffs()) {
        *o += l * x;
    }
    for ((o, l), x) in out
        .n_dirac
        .coeffs_mut()
        .iter_mut()
        .zip(&ln)
        .zip(state.n_dirac.coeffs())
    {
        *o += l * x;
    }
    Ok(out)
}

/// Physical density and its time derivative from the Dirac variable:
/// `n = Re ñ`, `n_t = d(Im ñ) - δ Re ñ`.
pub fn recover_wave_pair<T: Real>(
    n_dirac: &SpectralField<T>,
    delta: T,
) -> Result<(SpectralField<T>, SpectralField<T>)> {
    let scale = n_dirac.max_abs_coeff().max(T::one());
    let mean = n_dirac.coeffs()[0].norm();
    if mean > T::eps() * T::lit(1e4) * scale {
        return Err(Error::NonzeroMean {
            value: mean.as_f64(),
        });
    }
    let n = n_dirac.real_part().mean_zero_project();
    let mut n_t = n_dirac.imag_part().half_laplacian();
    n_t.axpy(C::new(-delta, T::zero()), &n);
    Ok((n, n_t))
}

/// Equilibrium `(v, m)` against which the Lyapunov functional is measured;
/// its recovered `n_t` is zero.
#[derive(Clone, Copy, Debug)]
pub struct EquilibriumRef<'a, T: Real> {
    pub v: &'a SpectralField<T>,
    pub m: &'a SpectralField<T>,
}

/// Scalar diagnostics of a state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyReport<T> {
    pub time: T,
    /// `‖u‖₂²`
    pub mass: T,
    /// `‖u‖_{H¹}`
    pub schrodinger_energy: T,
    /// `‖Re ñ‖₂`, the physical density.
    pub dirac_energy: T,
    /// `‖ñ‖₂`, logged alongside for comparison.
    pub dirac_energy_complex: T,
    pub full_energy: T,
    pub lyapunov_h: Option<T>,
}

/// `ε = min(1/(2δ), δ/2, γ)`.
pub fn lyapunov_epsilon<T: Real>(params: &ModelParams<T>) -> Result<T> {
    if params.delta <= T::zero() {
        return Err(Error::invalid("delta", "Lyapunov rate needs delta > 0"));
    }
    if params.gamma <= T::zero() {
        return Err(Error::invalid("gamma", "Lyapunov rate needs gamma > 0"));
    }
    let half = T::lit(0.5);
    Ok((half / params.delta).min(half * params.delta).min(params.gamma))
}

fn homogeneous_minus_one_sq<T: Real>(f: &SpectralField<T>) -> T {
    let g = f.grid();
    T::TAU()
        * f.coeffs()
            .iter()
            .enumerate()
            .skip(1)
            .map(|(j, c)| {
                let k = T::from_i64_lossy(g.wavenumber(j));
                c.norm_sqr() / (k * k)
            })
            .fold(T::zero(), |a, b| a + b)
}

/// Energy-space distance `‖u - v‖_{H¹} + ‖n - m‖₂ + ‖n_t‖_{Ḣ⁻¹}` from
/// `state` to the equilibrium `reference`.
pub fn energy_distance<T: Real>(
    state: &ZakharovState<T>,
    reference: EquilibriumRef<'_, T>,
    delta: T,
) -> Result<T> {
    let (n, n_t) = recover_wave_pair(&state.n_dirac, delta)?;
    let w = &state.u - reference.v;
    let z = &n - reference.m;
    Ok(w.sobolev_norm(T::one())? + z.l2_norm() + homogeneous_minus_one_sq(&n_t).sqrt())
}

/// Mass, component energies, the conserved energy `E` and optionally the
/// Lyapunov functional
///
/// ```text
/// H = ‖∂ₓ⁻¹(z_t + εz)‖² + ‖z‖² + 2‖w_x‖² + 2∫z(|w+v|² - |v|²) + ‖w‖²
/// ```
///
/// with `w = u - v`, `z = n - m`, `z_t = n_t`. `ε` defaults to
/// [`lyapunov_epsilon`].
pub fn energy_report<T: Real>(
    state: &ZakharovState<T>,
    params: &ModelParams<T>,
    time: T,
    reference: Option<EquilibriumRef<'_, T>>,
    eps: Option<T>,
) -> Result<EnergyReport<T>> {
    if eps.is_some() && reference.is_none() {
        return Err(Error::invalid(
            "reference",
            "an equilibrium is required to evaluate the Lyapunov functional",
        ));
    }
    let u = &state.u;
    let (n, n_t) = recover_wave_pair(&state.n_dirac, params.delta)?;
    let mass = u.l2_norm_sq();
    let h1 = u.sobolev_norm(T::one())?;
    let ux_sq = u.derivative(1).l2_norm_sq();
    let u_sq = u.abs_squared();
    let coupling = n.inner(&u_sq).re;
    let nu_sq = homogeneous_minus_one_sq(&n_t);
    let weight = if params.alpha2 == T::zero() {
        T::lit(0.5)
    } else {
        params.alpha1 / (params.alpha2 + params.alpha2)
    };
    let alpha1 = if params.alpha2 == T::zero() {
        T::one()
    } else {
        params.alpha1
    };
    let full_energy = ux_sq + weight * (n.l2_norm_sq() + nu_sq) + alpha1 * coupling;

    let lyapunov_h = match reference {
        None => None,
        Some(r) => {
            let eps = match eps {
                Some(e) => e,
                None => lyapunov_epsilon(params)?,
            };
            let w = u - r.v;
            let z = &n - r.m;
            let mut zt_eps = n_t.clone();
            zt_eps.axpy(C::new(eps, T::zero()), &z);
            let dv = &u_sq - &r.v.abs_squared();
            let two = T::lit(2.0);
            Some(
                homogeneous_minus_one_sq(&zt_eps)
                    + z.l2_norm_sq()
                    + two * w.derivative(1).l2_norm_sq()
                    + two * z.inner(&dv).re
                    + w.l2_norm_sq(),
            )
        }
    };

    Ok(EnergyReport {
        time,
        mass,
        schrodinger_energy: h1,
        dirac_energy: n.l2_norm(),
        dirac_energy_complex: state.n_dirac.l2_norm(),
        full_energy,
        lyapunov_h,
    })
}
