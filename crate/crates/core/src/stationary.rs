//! Time-independent solutions.
//!
//! At an equilibrium the Dirac component is slaved to the envelope:
//!
//! ```text
//! ñ_k = -α₂ ρ_k (k² + iδ|k|) / (k² + δ²),   ρ = |v|²,  ñ_0 = 0
//! ```
//!
//! so the physical density is `m = -α₂ Q_δ(|v|²)` with `Q_δ` the multiplier
//! `k²/(k²+δ²)` (the mean-removal projection when `δ = 0`). The envelope
//! solves
//!
//! ```text
//! v_xx + iγ v + V v = f,   V = -α₁ m = α₁α₂ Q_δ(|v|²),
//! ```
//!
//! whose linear part `R = ∂ₓₓ + iγ + V` has a real potential and therefore
//! `‖R⁻¹‖ ≤ 1/γ`.

use std::fmt;
use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::{full_rhs, EquilibriumRef, Forcing, ModelParams, ZakharovState};
use crate::spectral::{Grid, SpectralField};
use crate::stability::Linearization;

type Field = SpectralField<f64>;
type State = ZakharovState<f64>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolveMethod {
    FixedPoint,
    Newton,
    Hybrid,
}

impl SolveMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            SolveMethod::FixedPoint => "fixed_point",
            SolveMethod::Newton => "newton",
            SolveMethod::Hybrid => "hybrid",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "fixed_point" => Some(SolveMethod::FixedPoint),
            "newton" => Some(SolveMethod::Newton),
            "hybrid" => Some(SolveMethod::Hybrid),
            _ => None,
        }
    }
}

impl fmt::Display for SolveMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug)]
pub struct Equilibrium {
    pub v: Field,
    /// Physical density `Re ñ`.
    pub m: Field,
    /// Full Dirac variable at the equilibrium.
    pub n_dirac: Field,
    pub params: ModelParams<f64>,
    pub forcing: Forcing<f64>,
    /// `‖L x + N(x)‖₂` at `x = (v, ñ)`.
    pub residual_norm: f64,
    pub iterations: usize,
    pub method: SolveMethod,
    /// H¹ increments (fixed point) or residuals (Newton) per iteration.
    pub history: Vec<f64>,
}

impl Equilibrium {
    /// Completes an envelope `v` into an equilibrium record.
    pub fn from_envelope(
        v: Field,
        forcing: &Forcing<f64>,
        params: &ModelParams<f64>,
        method: SolveMethod,
        iterations: usize,
        history: Vec<f64>,
    ) -> Result<Self> {
        let n_dirac = dirac_density(&v, params);
        let m = n_dirac.real_part();
        let state = State {
            u: v.clone(),
            n_dirac: n_dirac.clone(),
        };
        let residual_norm = full_rhs(&state, &forcing.profile, params)?.l2_norm();
        Ok(Self {
            v,
            m,
            n_dirac,
            params: *params,
            forcing: forcing.clone(),
            residual_norm,
            iterations,
            method,
            history,
        })
    }

    pub fn grid(&self) -> &Grid<f64> {
        self.v.grid()
    }

    pub fn state(&self) -> State {
        State {
            u: self.v.clone(),
            n_dirac: self.n_dirac.clone(),
        }
    }

    pub fn reference(&self) -> EquilibriumRef<'_, f64> {
        EquilibriumRef {
            v: &self.v,
            m: &self.m,
        }
    }

    /// `(‖v‖² + ‖ñ‖²)^{1/2}`, the branch-diagram norm.
    pub fn norm_stat(&self) -> f64 {
        self.state().l2_norm()
    }

    /// Writes the plain-text equilibrium format; `extra` adds header keys.
    pub fn write_to<W: Write>(&self, mut w: W, extra: &[(&str, String)]) -> Result<()> {
        let p = &self.params;
        writeln!(w, "# zakharov equilibrium")?;
        writeln!(w, "# modes = {}", self.grid().num_modes())?;
        writeln!(w, "# dealias = {}", self.grid().dealias())?;
        writeln!(w, "# gamma = {}", p.gamma)?;
        writeln!(w, "# delta = {}", p.delta)?;
        writeln!(w, "# alpha1 = {}", p.alpha1)?;
        writeln!(w, "# alpha2 = {}", p.alpha2)?;
        writeln!(w, "# forcing = {}", self.forcing.description)?;
        writeln!(w, "# residual = {}", self.residual_norm)?;
        writeln!(w, "# iterations = {}", self.iterations)?;
        writeln!(w, "# method = {}", self.method)?;
        for (k, v) in extra {
            writeln!(w, "# {k} = {v}")?;
        }
        writeln!(w, "k,re_v,im_v,re_m,im_m")?;
        for j in 0..self.grid().num_modes() {
            let (v, m) = (self.v.coeffs()[j], self.m.coeffs()[j]);
            writeln!(w, "{},{},{},{},{}", self.grid().wavenumber(j), v.re, v.im, m.re, m.im)?;
        }
        Ok(())
    }

    /// Reads the format written by [`Equilibrium::write_to`]. Returns the
    /// header keys it does not interpret.
    pub fn read_from<R: BufRead>(r: R) -> Result<(Self, Vec<(String, String)>)> {
        let mut header = Vec::new();
        let mut rows = Vec::new();
        let mut seen_columns = false;
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let lineno = i + 1;
            let t = line.trim();
            if t.is_empty() {
                continue;
            }
            if let Some(rest) = t.strip_prefix('#') {
                if let Some((k, v)) = rest.split_once('=') {
                    header.push((k.trim().to_string(), v.trim().to_string()));
                }
                continue;
            }
            if !seen_columns {
                if t != "k,re_v,im_v,re_m,im_m" {
                    return Err(Error::Parse {
                        line: lineno,
                        message: format!("unexpected column header `{t}`"),
                    });
                }
                seen_columns = true;
                continue;
            }
            let cols: Vec<&str> = t.split(',').collect();
            let bad = |message: String| Error::Parse {
                line: lineno,
                message,
            };
            if cols.len() != 5 {
                return Err(bad(format!("expected 5 columns, found {}", cols.len())));
            }
            let k: i64 = cols[0].parse().map_err(|_| bad(format!("bad k `{}`", cols[0])))?;
            let mut vals = [0.0; 4];
            for (x, s) in vals.iter_mut().zip(&cols[1..]) {
                *x = s.parse().map_err(|_| bad(format!("bad number `{s}`")))?;
            }
            rows.push((k, vals));
        }
        let take = |key: &str| -> Result<String> {
            header
                .iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.clone())
                .ok_or_else(|| Error::Parse {
                    line: 0,
                    message: format!("missing header `{key}`"),
                })
        };
        let num = |key: &str| -> Result<f64> {
            take(key)?.parse().map_err(|_| Error::Parse {
                line: 0,
                message: format!("header `{key}` is not a number"),
            })
        };
        let modes: usize = take("modes")?.parse().map_err(|_| Error::Parse {
            line: 0,
            message: "header `modes` is not an integer".into(),
        })?;
        let dealias = take("dealias")? == "true";
        let grid = Grid::new(modes)?.with_dealias(dealias);
        let params = ModelParams::new(num("gamma")?, num("delta")?, num("alpha1")?, num("alpha2")?)?;
        let forcing = Forcing::from_spec(&grid, &take("forcing")?)?;
        let method = SolveMethod::parse(&take("method")?).ok_or_else(|| Error::Parse {
            line: 0,
            message: "unknown method".into(),
        })?;
        let iterations: usize = take("iterations")?.parse().map_err(|_| Error::Parse {
            line: 0,
            message: "header `iterations` is not an integer".into(),
        })?;
        if rows.len() != modes {
            return Err(Error::LengthMismatch {
                expected: modes,
                found: rows.len(),
            });
        }
        let mut v = Field::zeros(&grid);
        let mut m = Field::zeros(&grid);
        for (k, [vr, vi, mr, mi]) in rows {
            if grid.index(k).is_none() {
                return Err(Error::Parse {
                    line: 0,
                    message: format!("wavenumber {k} outside the grid"),
                });
            }
            v.set_coeff(k, Complex64::new(vr, vi));
            m.set_coeff(k, Complex64::new(mr, mi));
        }
        let n_dirac = dirac_density(&v, &params);
        let eq = Equilibrium {
            v,
            m,
            n_dirac,
            params,
            forcing,
            residual_norm: num("residual")?,
            iterations,
            method,
            history: Vec::new(),
        };
        let known = [
            "modes", "dealias", "gamma", "delta", "alpha1", "alpha2", "forcing", "residual",
            "iterations", "method",
        ];
        let extra = header
            .into_iter()
            .filter(|(k, _)| !known.contains(&k.as_str()))
            .collect();
        Ok((eq, extra))
    }
}

/// Slaved Dirac variable `ñ(v)` at an equilibrium.
pub fn dirac_density(v: &Field, params: &ModelParams<f64>) -> Field {
    let d = params.delta;
    v.abs_squared().apply_multiplier(|k| {
        if k == 0 {
            return Complex64::new(0.0, 0.0);
        }
        let kf = k as f64;
        let ka = kf.abs();
        Complex64::new(kf * kf, d * ka) * (-params.alpha2 / (kf * kf + d * d))
    })
}

/// Physical density `m = Re ñ(v) = -α₂ Q_δ(|v|²)`; real and mean-zero.
pub fn reconstruct_density(v: &Field, params: &ModelParams<f64>) -> Field {
    dirac_density(v, params).real_part()
}

fn check_gamma(params: &ModelParams<f64>) -> Result<()> {
    params.validate()?;
    if params.gamma <= 0.0 {
        return Err(Error::invalid("gamma", "stationary solvers need gamma > 0"));
    }
    Ok(())
}

/// Dense coefficient matrix of `w ↦ -k² w + iγ w + P[V w]`.
fn resolvent_matrix(potential: &Field, gamma: f64) -> Result<DMatrix<Complex64>> {
    let g = potential.grid();
    let n = g.num_modes();
    let mut a = DMatrix::zeros(n, n);
    for c in 0..n {
        let e = Field::mode(g, g.wavenumber(c), Complex64::new(1.0, 0.0));
        let col = potential.pointwise_product(&e)?;
        for (r, x) in col.coeffs().iter().enumerate() {
            a[(r, c)] = *x;
        }
        let k = g.wavenumber(c) as f64;
        a[(c, c)] += Complex64::new(-k * k, gamma);
    }
    Ok(a)
}

/// Applies `R_{γ,v}⁻¹` to `rhs`, with `R = ∂ₓₓ + iγ + α₁α₂ Q_δ(|v|²)`.
pub fn solve_resolvent(v: &Field, rhs: &Field, params: &ModelParams<f64>) -> Result<Field> {
    check_gamma(params)?;
    if v.grid() != rhs.grid() {
        return Err(Error::GridMismatch);
    }
    let potential = reconstruct_density(v, params).scale_real(-params.alpha1);
    let a = resolvent_matrix(&potential, params.gamma)?;
    let b = DVector::from_column_slice(rhs.coeffs());
    let x = a.clone().lu().solve(&b).ok_or(Error::Singular {
        context: "resolvent",
        condition: f64::INFINITY,
    })?;
    let res = (&a * &x - &b).norm();
    if res > 1e-10 * b.norm().max(f64::MIN_POSITIVE) && b.norm() > 0.0 {
        let sv = a.singular_values();
        return Err(Error::Singular {
            context: "resolvent",
            condition: sv.max() / sv.min(),
        });
    }
    Field::from_coeffs(rhs.grid(), x.iter().copied().collect())
}

/// Iterates `v ← R_{γ,v}⁻¹ f` from `v = 0` until the H¹ increment is below
/// `tol`.
pub fn fixed_point_solve(
    forcing: &Forcing<f64>,
    params: &ModelParams<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<Equilibrium> {
    check_gamma(params)?;
    let mut v = Field::zeros(forcing.profile.grid());
    let mut history = Vec::new();
    for it in 1..=max_iter {
        let next = solve_resolvent(&v, &forcing.profile, params)?;
        let inc = (&next - &v).sobolev_norm(1.0)?;
        history.push(inc);
        v = next;
        if !inc.is_finite() {
            break;
        }
        if inc < tol {
            return Equilibrium::from_envelope(v, forcing, params, SolveMethod::FixedPoint, it, history);
        }
    }
    Err(Error::NonConvergence {
        method: "fixed-point iteration",
        iterations: max_iter,
        residual: history.last().copied().unwrap_or(f64::NAN),
    })
}

pub(crate) fn envelope_to_real(v: &Field) -> DVector<f64> {
    let c = v.coeffs();
    DVector::from_iterator(2 * c.len(), c.iter().map(|z| z.re).chain(c.iter().map(|z| z.im)))
}

pub(crate) fn envelope_from_real(grid: &Grid<f64>, x: &[f64]) -> Result<Field> {
    let n = grid.num_modes();
    Field::from_coeffs(grid, (0..n).map(|j| Complex64::new(x[j], x[n + j])).collect())
}

/// Stationary map `G(v)`: the envelope component of the right-hand side with
/// `ñ` slaved to `v`.
pub fn stationary_residual(
    v: &Field,
    forcing: &Forcing<f64>,
    params: &ModelParams<f64>,
) -> Result<Field> {
    let s = State {
        u: v.clone(),
        n_dirac: dirac_density(v, params),
    };
    Ok(full_rhs(&s, &forcing.profile, params)?.u)
}

/// Real `2N × 2N` Jacobian of [`stationary_residual`], obtained from the full
/// linearisation by slaving `δñ` to `δv`.
pub fn stationary_jacobian(v: &Field, params: &ModelParams<f64>) -> Result<DMatrix<f64>> {
    let grid = v.grid();
    let n = grid.num_modes();
    let state = State {
        u: v.clone(),
        n_dirac: dirac_density(v, params),
    };
    let lin = Linearization::new(&state, params);
    let d = params.delta;
    let slave = |k: i64| {
        if k == 0 {
            return Complex64::new(0.0, 0.0);
        }
        let kf = k as f64;
        Complex64::new(kf * kf, d * kf.abs()) * (-params.alpha2 / (kf * kf + d * d))
    };
    let conj_v = v.conjugate();
    let mut j = DMatrix::zeros(2 * n, 2 * n);
    let mut e = vec![0.0; 2 * n];
    for c in 0..2 * n {
        e[c] = 1.0;
        let dv = envelope_from_real(grid, &e)?;
        e[c] = 0.0;
        let drho = conj_v.pointwise_product(&dv)?.real_part().scale_real(2.0);
        let dn = drho.apply_multiplier(slave);
        let out = lin.apply(&State { u: dv, n_dirac: dn })?;
        j.column_mut(c).copy_from_slice(envelope_to_real(&out.u).as_slice());
    }
    Ok(j)
}

/// Damped Newton iteration on the stationary map from `v0`.
pub fn newton_solve(
    v0: &Field,
    forcing: &Forcing<f64>,
    params: &ModelParams<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<Equilibrium> {
    check_gamma(params)?;
    if v0.grid() != forcing.profile.grid() {
        return Err(Error::GridMismatch);
    }
    let grid = v0.grid().clone();
    let mut v = v0.clone();
    let mut g = stationary_residual(&v, forcing, params)?;
    let mut res = g.l2_norm();
    let mut history = vec![res];
    for it in 0..max_iter {
        if res < tol {
            return Equilibrium::from_envelope(v, forcing, params, SolveMethod::Newton, it, history);
        }
        let j = stationary_jacobian(&v, params)?;
        let rhs = -envelope_to_real(&g);
        let step = j.clone().lu().solve(&rhs).ok_or_else(|| {
            let sv = j.singular_values();
            Error::Singular {
                context: "stationary Newton",
                condition: sv.max() / sv.min(),
            }
        })?;
        let x = envelope_to_real(&v);
        let mut lambda = 1.0;
        loop {
            let trial = envelope_from_real(&grid, (&x + &step * lambda).as_slice())?;
            let gt = stationary_residual(&trial, forcing, params)?;
            let rt = gt.l2_norm();
            if rt.is_finite() && (rt < res || lambda < 1e-3) {
                v = trial;
                g = gt;
                res = rt;
                break;
            }
            lambda *= 0.5;
        }
        history.push(res);
        if !res.is_finite() {
            break;
        }
    }
    if res < tol {
        return Equilibrium::from_envelope(v, forcing, params, SolveMethod::Newton, max_iter, history);
    }
    Err(Error::NonConvergence {
        method: "stationary Newton",
        iterations: max_iter,
        residual: res,
    })
}

/// Fixed-point iteration to a loose tolerance, then Newton; falls back to
/// Newton from zero when the contraction fails.
pub fn hybrid_solve(
    forcing: &Forcing<f64>,
    params: &ModelParams<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<Equilibrium> {
    let start = match fixed_point_solve(forcing, params, 1e-6, max_iter) {
        Ok(eq) => eq.v,
        Err(Error::NonConvergence { .. }) => Field::zeros(forcing.profile.grid()),
        Err(e) => return Err(e),
    };
    let mut eq = newton_solve(&start, forcing, params, tol, max_iter)?;
    eq.method = SolveMethod::Hybrid;
    Ok(eq)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundCheck {
    pub name: &'static str,
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AprioriReport {
    pub checks: Vec<BoundCheck>,
    /// `‖v‖_{H³}`, printed for information only.
    pub h3_norm: f64,
}

impl AprioriReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

impl fmt::Display for AprioriReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(
                f,
                "{:<10} {:>14.6e} <= {:>14.6e}  {}",
                c.name,
                c.lhs,
                c.rhs,
                if c.pass { "pass" } else { "FAIL" }
            )?;
        }
        write!(f, "{:<10} {:>14.6e}", "h3_norm", self.h3_norm)
    }
}

/// Constant used in the gradient bound.
pub const GRADIENT_CONSTANT: f64 = 10.0;

/// Checks `‖v‖₂ ≤ ‖f‖₂/γ` and
/// `‖v_x‖₂ ≤ C max(γ⁻³‖f‖³, γ⁻²‖f‖², γ^{-1/2}‖f‖)` with `C = 10`.
pub fn verify_apriori(eq: &Equilibrium) -> AprioriReport {
    let gamma = eq.params.gamma;
    let fnorm = eq.forcing.profile.l2_norm();
    let slack = 1e-10;
    let l2 = eq.v.l2_norm();
    let l2_bound = fnorm / gamma;
    let grad = eq.v.derivative(1).l2_norm();
    let grad_bound = GRADIENT_CONSTANT
        * (fnorm.powi(3) / gamma.powi(3))
            .max(fnorm * fnorm / (gamma * gamma))
            .max(fnorm / gamma.sqrt());
    AprioriReport {
        checks: vec![
            BoundCheck {
                name: "l2",
                lhs: l2,
                rhs: l2_bound,
                pass: l2 <= l2_bound + slack,
            },
            BoundCheck {
                name: "gradient",
                lhs: grad,
                rhs: grad_bound,
                pass: grad <= grad_bound + slack,
            },
        ],
        h3_norm: eq.v.sobolev_norm(3.0).unwrap_or(f64::NAN),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn grid() -> Grid<f64> {
        Grid::new(32).unwrap()
    }

    fn params(gamma: f64, delta: f64, a1: f64, a2: f64) -> ModelParams<f64> {
        ModelParams::new(gamma, delta, a1, a2).unwrap()
    }

    fn random_field(g: &Grid<f64>, rng: &mut ChaCha8Rng, amp: f64) -> Field {
        let mut f = Field::zeros(g);
        for k in -8i64..=8 {
            let a = amp / (1.0 + (k * k) as f64);
            f.set_coeff(k, Complex64::new(rng.random_range(-a..a), rng.random_range(-a..a)));
        }
        f
    }

    fn max_diff(a: &Field, b: &Field) -> f64 {
        a.coeffs()
            .iter()
            .zip(b.coeffs())
            .map(|(x, y)| (x - y).norm())
            .fold(0.0, f64::max)
    }

    #[test]
    fn density_examples() {
        let g = grid();
        let p = params(1.0, 0.0, 1.0, 1.0);
        assert_eq!(reconstruct_density(&Field::zeros(&g), &p).max_abs_coeff(), 0.0);
        let v = Forcing::sine(&g).profile.scale_real(-1.0);
        let m = reconstruct_density(&v, &p);
        let expect = Field::sample_real(&g, |x| 0.5 * (2.0 * x).cos());
        assert!(max_diff(&m, &expect) < 1e-15);
        let c = Field::mode(&g, 0, Complex64::new(0.7, -0.2));
        assert!(reconstruct_density(&c, &p).max_abs_coeff() < 1e-16);
        // with wave damping the k = 2 response is scaled by 4/(4 + δ²)
        let m1 = reconstruct_density(&v, &params(1.0, 1.0, 1.0, 1.0));
        assert!(max_diff(&m1, &expect.scale_real(0.8)) < 1e-15);
        assert!(m1.is_conjugate_symmetric(1e-15));
        assert_eq!(m1.coeff(0), Complex64::new(0.0, 0.0));
    }

    #[test]
    fn slaved_density_is_stationary() {
        let g = grid();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = random_field(&g, &mut rng, 1.0);
        let p = params(0.4, 0.7, 1.0, 1.3);
        let s = State {
            u: v.clone(),
            n_dirac: dirac_density(&v, &p),
        };
        let r = full_rhs(&s, &Forcing::sine(&g).profile, &p).unwrap();
        assert!(r.n_dirac.max_abs_coeff() < 1e-14);
    }

    #[test]
    fn resolvent_examples() {
        let g = grid();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = params(0.5, 1.0, 1.0, 1.0);
        let rhs = random_field(&g, &mut rng, 1.0);
        let w = solve_resolvent(&Field::zeros(&g), &rhs, &p).unwrap();
        for j in 0..g.num_modes() {
            let k = g.wavenumber(j) as f64;
            let expect = rhs.coeffs()[j] / Complex64::new(-k * k, 0.5);
            assert!((w.coeffs()[j] - expect).norm() < 1e-15);
        }
        let v = random_field(&g, &mut rng, 1.0);
        assert_eq!(solve_resolvent(&v, &Field::zeros(&g), &p).unwrap().max_abs_coeff(), 0.0);
        assert!(solve_resolvent(&v, &rhs, &params(0.0, 1.0, 1.0, 1.0)).is_err());
    }

    #[test]
    fn resolvent_bound() {
        let g = grid();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for gamma in [0.05, 0.5, 5.0] {
            let p = params(gamma, 1.0, 1.0, 1.0);
            for _ in 0..10 {
                let v = random_field(&g, &mut rng, 3.0);
                let f = random_field(&g, &mut rng, 1.0);
                let w = solve_resolvent(&v, &f, &p).unwrap();
                assert!(w.l2_norm() <= f.l2_norm() / gamma * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn fixed_point_examples() {
        let g = grid();
        let zero = Forcing::zero(&g);
        let eq = fixed_point_solve(&zero, &params(1.0, 1.0, 1.0, 1.0), 1e-12, 50).unwrap();
        assert_eq!(eq.iterations, 1);
        assert_eq!(eq.v.max_abs_coeff(), 0.0);

        let f = Forcing::sine(&g);
        let eq = fixed_point_solve(&f, &params(5.0, 1.0, 1.0, 1.0), 1e-12, 200).unwrap();
        assert!(eq.v.l2_norm() <= PI.sqrt() / 5.0);
        assert!(eq.residual_norm < 1e-11, "{}", eq.residual_norm);
        let h1 = eq.v.sobolev_norm(1.0).unwrap();
        assert!(h1 <= 2.0 * f.profile.sobolev_norm(1.0).unwrap() / 5.0);
        assert!(eq.history.windows(2).all(|w| w[1] < w[0]));

        match fixed_point_solve(&f, &params(0.05, 1.0, 1.0, 1.0), 1e-12, 30) {
            Ok(eq) => assert!(eq.residual_norm < 1e-9),
            Err(e) => assert!(matches!(e, Error::NonConvergence { .. })),
        }
    }

    #[test]
    fn stationary_jacobian_matches_differences() {
        let g = grid();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = params(0.3, 0.8, 0.9, 1.1);
        let f = Forcing::sine(&g);
        let v = random_field(&g, &mut rng, 1.0);
        let j = stationary_jacobian(&v, &p).unwrap();
        let eps = 1e-6;
        for _ in 0..5 {
            let d = random_field(&g, &mut rng, 1.0);
            let mut vp = v.clone();
            vp.axpy(Complex64::new(eps, 0.0), &d);
            let mut vm = v.clone();
            vm.axpy(Complex64::new(-eps, 0.0), &d);
            let gp = envelope_to_real(&stationary_residual(&vp, &f, &p).unwrap());
            let gm = envelope_to_real(&stationary_residual(&vm, &f, &p).unwrap());
            let fd = (gp - gm) / (2.0 * eps);
            let jd = &j * envelope_to_real(&d);
            assert!((&fd - &jd).norm() < 1e-7 * jd.norm());
        }
    }

    #[test]
    fn newton_polishes_fixed_point() {
        let g = grid();
        let f = Forcing::sine(&g);
        let p = params(5.0, 1.0, 1.0, 1.0);
        let fp = fixed_point_solve(&f, &p, 1e-6, 200).unwrap();
        let eq = newton_solve(&fp.v, &f, &p, 1e-12, 20).unwrap();
        assert!(eq.iterations <= 3, "{}", eq.iterations);
        assert!(eq.residual_norm < 1e-12);
        assert!(newton_solve(&fp.v, &f, &params(0.0, 1.0, 1.0, 1.0), 1e-12, 20).is_err());
    }

    #[test]
    fn newton_follows_small_gamma_from_neighbour() {
        let g = grid();
        let f = Forcing::sine(&g);
        // walk down in gamma, seeding each solve with the previous solution;
        // at this coupling the branch has no fold
        let mut v = fixed_point_solve(&f, &params(2.0, 1.0, 0.5, 1.0), 1e-10, 500).unwrap().v;
        let mut gamma: f64 = 2.0;
        while gamma > 0.011 {
            gamma = (gamma * 0.8).max(0.01);
            v = newton_solve(&v, &f, &params(gamma, 1.0, 0.5, 1.0), 1e-11, 40).unwrap().v;
        }
        let eq = newton_solve(&v, &f, &params(0.01, 1.0, 0.5, 1.0), 1e-10, 40).unwrap();
        assert!(eq.residual_norm < 1e-10);
    }

    #[test]
    fn hybrid_solver() {
        let g = grid();
        let f = Forcing::sine(&g);
        let eq = hybrid_solve(&f, &params(1.0, 1.0, 1.0, 1.0), 1e-12, 200).unwrap();
        assert_eq!(eq.method, SolveMethod::Hybrid);
        assert!(eq.residual_norm < 1e-12);
    }

    #[test]
    fn apriori_report() {
        let g = grid();
        let zero = Forcing::zero(&g);
        let p = params(1.0, 1.0, 1.0, 1.0);
        let eq0 = Equilibrium::from_envelope(Field::zeros(&g), &zero, &p, SolveMethod::Newton, 0, vec![])
            .unwrap();
        assert!(verify_apriori(&eq0).all_pass());

        let f = Forcing::sine(&g);
        let p5 = params(5.0, 1.0, 1.0, 1.0);
        let eq = fixed_point_solve(&f, &p5, 1e-12, 200).unwrap();
        let r = verify_apriori(&eq);
        assert!(r.all_pass());
        assert!((r.checks[0].rhs - PI.sqrt() / 5.0).abs() < 1e-12);

        let mut bad = eq.clone();
        bad.v = bad.v.scale_real(100.0);
        let r = verify_apriori(&bad);
        assert!(!r.checks[0].pass);
        assert!(r.to_string().contains("FAIL"));
    }

    #[test]
    fn file_round_trip() {
        let g = grid();
        let f = Forcing::from_spec(&g, "modes:1,-0.5i;-1,0.5i;2,0.1").unwrap();
        let eq = newton_solve(&Field::zeros(&g), &f, &params(0.7, 1.2, 0.5, 1.0), 1e-12, 40).unwrap();
        let mut buf = Vec::new();
        eq.write_to(&mut buf, &[("period", "2.5".into())]).unwrap();
        let (back, extra) = Equilibrium::read_from(buf.as_slice()).unwrap();
        assert_eq!(back.v, eq.v);
        assert_eq!(back.m, eq.m);
        assert_eq!(back.params, eq.params);
        assert_eq!(back.forcing, eq.forcing);
        assert_eq!(back.residual_norm, eq.residual_norm);
        assert_eq!(back.iterations, eq.iterations);
        assert_eq!(back.method, eq.method);
        assert_eq!(extra, vec![("period".to_string(), "2.5".to_string())]);

        let text = String::from_utf8(buf).unwrap().replace("k,re_v", "q,re_v");
        assert!(matches!(Equilibrium::read_from(text.as_bytes()), Err(Error::Parse { .. })));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn resolvent_never_amplifies(seed in any::<u64>(), gamma in 0.01f64..10.0, amp in 0.0f64..5.0) {
                let g = grid();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let v = random_field(&g, &mut rng, amp);
                let f = random_field(&g, &mut rng, 1.0);
                let w = solve_resolvent(&v, &f, &params(gamma, 1.0, 1.0, 1.0)).unwrap();
                prop_assert!(w.l2_norm() <= f.l2_norm() / gamma * (1.0 + 1e-12));
            }
        }
    }
}
