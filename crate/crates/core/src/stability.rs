//! Linearisation of the full right-hand side in real coordinates
//! `(Re û, Im û, Re n̂, Im n̂)`, dense spectra and Hopf indicators.
//!
//! `Re(ñ)·u` is not complex-differentiable, so the Jacobian is a real
//! `4N × 4N` matrix. Its action on a direction `(δu, δñ)` is
//!
//! ```text
//! δu' = L_u δu - i α₁ P[Re(δñ) u + Re(ñ) δu]
//! δñ' = L_n δñ - i α₂ d P[2 Re(ū δu)]
//! ```

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::{linear_symbol, ModelParams, ZakharovState};
use crate::spectral::SpectralField;
use crate::stationary::Equilibrium;

type Field = SpectralField<f64>;
type State = ZakharovState<f64>;

/// Default tolerance on the leading real part for classification.
pub const DEFAULT_THRESHOLD: f64 = 1e-8;
/// Imaginary parts below this are treated as real eigenvalues.
pub const HOPF_IMAG_FLOOR: f64 = 1e-4;

/// Linearisation point with the products that do not depend on the
/// direction precomputed.
pub struct Linearization {
    state: State,
    params: ModelParams<f64>,
    re_n: Field,
    conj_u: Field,
    lu: Vec<Complex64>,
    ln: Vec<Complex64>,
    abs_k: Vec<f64>,
}

impl Linearization {
    pub fn new(state: &State, params: &ModelParams<f64>) -> Self {
        let grid = state.grid();
        let (lu, ln) = linear_symbol(params, grid);
        Self {
            state: state.clone(),
            params: *params,
            re_n: state.n_dirac.real_part(),
            conj_u: state.u.conjugate(),
            lu,
            ln,
            abs_k: grid.wavenumbers().map(|k| k.abs() as f64).collect(),
        }
    }

    /// Directional derivative of `L x + N(x)`.
    pub fn apply(&self, dir: &State) -> Result<State> {
        let a1 = self.params.alpha1;
        let a2 = self.params.alpha2;
        let mut prod = dir.n_dirac.real_part().pointwise_product(&self.state.u)?;
        prod += &self.re_n.pointwise_product(&dir.u)?;
        let drho = self.conj_u.pointwise_product(&dir.u)?.real_part();

        let mut du = Field::zeros(dir.grid());
        for (j, o) in du.coeffs_mut().iter_mut().enumerate() {
            let p = prod.coeffs()[j] * a1;
            *o = self.lu[j] * dir.u.coeffs()[j] + Complex64::new(p.im, -p.re);
        }
        let mut dn = Field::zeros(dir.grid());
        for (j, o) in dn.coeffs_mut().iter_mut().enumerate() {
            let p = drho.coeffs()[j] * (2.0 * a2 * self.abs_k[j]);
            *o = self.ln[j] * dir.n_dirac.coeffs()[j] + Complex64::new(p.im, -p.re);
        }
        Ok(State {
            u: du,
            n_dirac: dn,
        })
    }

    /// Dense `4N × 4N` real Jacobian, assembled column by column.
    pub fn matrix(&self) -> Result<DMatrix<f64>> {
        let grid = self.state.grid();
        let dim = 4 * grid.num_modes();
        let mut j = DMatrix::zeros(dim, dim);
        let mut e = vec![0.0; dim];
        for c in 0..dim {
            e[c] = 1.0;
            let dir = State::from_real_vec(grid, &e)?;
            e[c] = 0.0;
            let col = self.apply(&dir)?.to_real_vec();
            j.column_mut(c).copy_from_slice(&col);
        }
        Ok(j)
    }
}

/// Jacobian of the full right-hand side at `state`.
pub fn rhs_jacobian(state: &State, params: &ModelParams<f64>) -> Result<DMatrix<f64>> {
    Linearization::new(state, params).matrix()
}

/// Jacobian at an equilibrium.
pub fn assemble_jacobian(eq: &Equilibrium) -> Result<DMatrix<f64>> {
    rhs_jacobian(&eq.state(), &eq.params)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Classification {
    Stable,
    HopfCritical,
    Unstable,
}

impl Classification {
    pub fn as_str(self) -> &'static str {
        match self {
            Classification::Stable => "stable",
            Classification::HopfCritical => "hopf_critical",
            Classification::Unstable => "unstable",
        }
    }
}

#[derive(Clone, Debug)]
pub struct StabilityReport {
    /// Sorted by real part, descending.
    pub eigenvalues: Vec<Complex64>,
    pub max_real_part: f64,
    /// Rightmost eigenvalue with `Im > HOPF_IMAG_FLOOR` (the upper member of
    /// its conjugate pair).
    pub leading_pair: Option<Complex64>,
    pub classification: Classification,
}

/// Eigenvalues of `j`, sorted by real part descending, and classification.
pub fn spectrum(j: &DMatrix<f64>, threshold: f64) -> Result<StabilityReport> {
    if j.iter().any(|x| !x.is_finite()) {
        return Err(Error::Eigen("matrix has non-finite entries".into()));
    }
    let schur = nalgebra::linalg::Schur::try_new(j.clone(), f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Eigen("Schur iteration did not converge".into()))?;
    let mut eigenvalues: Vec<Complex64> = schur.complex_eigenvalues().iter().copied().collect();
    eigenvalues.sort_by(|a, b| b.re.total_cmp(&a.re).then(b.im.total_cmp(&a.im)));
    let max_real_part = eigenvalues.first().map_or(f64::NEG_INFINITY, |l| l.re);
    let leading_pair = eigenvalues.iter().copied().find(|l| l.im > HOPF_IMAG_FLOOR);
    let classification = if max_real_part > threshold {
        Classification::Unstable
    } else if leading_pair.is_some_and(|l| l.re.abs() <= threshold) {
        Classification::HopfCritical
    } else {
        Classification::Stable
    };
    Ok(StabilityReport {
        eigenvalues,
        max_real_part,
        leading_pair,
        classification,
    })
}

impl StabilityReport {
    /// Numbers of eigenvalues with positive real part that are real and
    /// complex (`|Im| > HOPF_IMAG_FLOOR`).
    pub fn unstable_counts(&self) -> (usize, usize) {
        let unstable = self.eigenvalues.iter().filter(|l| l.re > 0.0);
        let complex = unstable.clone().filter(|l| l.im.abs() > HOPF_IMAG_FLOOR).count();
        (unstable.count() - complex, complex)
    }

    /// Complex eigenvalue (upper half plane) closest to the imaginary axis.
    pub fn critical_pair(&self) -> Option<Complex64> {
        self.eigenvalues
            .iter()
            .copied()
            .filter(|l| l.im > HOPF_IMAG_FLOOR)
            .min_by(|a, b| a.re.abs().total_cmp(&b.re.abs()))
    }
}

/// Bracket `(p_lo, p_hi)` when a complex pair crosses the imaginary axis
/// between two consecutive branch points: the number of unstable complex
/// eigenvalues changes while the number of unstable real ones does not.
pub fn hopf_test(
    param_before: f64,
    before: &StabilityReport,
    param_after: f64,
    after: &StabilityReport,
) -> Option<(f64, f64)> {
    let (ra, ca) = before.unstable_counts();
    let (rb, cb) = after.unstable_counts();
    if ca == cb || ra != rb {
        return None;
    }
    Some((param_before.min(param_after), param_before.max(param_after)))
}

/// Eigenvector for the eigenvalue `lambda` by shifted inverse iteration.
pub fn eigenvector(j: &DMatrix<f64>, lambda: Complex64) -> Result<DVector<Complex64>> {
    let n = j.nrows();
    let shift = lambda + Complex64::new(1e-10 * (1.0 + lambda.norm()), 0.0);
    let mut a: DMatrix<Complex64> = j.map(|x| Complex64::new(x, 0.0));
    for i in 0..n {
        a[(i, i)] -= shift;
    }
    let lu = a.lu();
    let mut x = DVector::from_fn(n, |i, _| Complex64::new(1.0 + (i % 7) as f64 * 0.1, 0.3));
    for _ in 0..4 {
        x = lu.solve(&x).ok_or(Error::Singular {
            context: "inverse iteration",
            condition: f64::INFINITY,
        })?;
        let norm = x.norm();
        if !norm.is_finite() || norm == 0.0 {
            return Err(Error::Eigen("inverse iteration produced a degenerate vector".into()));
        }
        x /= Complex64::new(norm, 0.0);
    }
    // fix the phase: largest entry real and positive
    let (imax, _) = x
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
        .unwrap();
    let phase = x[imax] / x[imax].norm();
    x /= phase;
    Ok(x)
}

/// Spectrum CSV: one row per eigenvalue.
pub fn write_spectrum_csv<W: Write>(mut w: W, rows: &[(f64, &StabilityReport)]) -> Result<()> {
    writeln!(w, "param_value,re,im")?;
    for (p, r) in rows {
        for l in &r.eigenvalues {
            writeln!(w, "{p},{:e},{:e}", l.re, l.im)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{full_rhs, Forcing};
    use crate::spectral::Grid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid() -> Grid<f64> {
        Grid::new(16).unwrap()
    }

    fn random_state(g: &Grid<f64>, rng: &mut ChaCha8Rng, amp: f64) -> State {
        let mut v = vec![0.0; 4 * g.num_modes()];
        for (i, x) in v.iter_mut().enumerate() {
            let k = g.wavenumber(i % g.num_modes()).abs() as f64;
            *x = rng.random_range(-amp..amp) / (1.0 + k * k);
        }
        let s = State::from_real_vec(g, &v).unwrap();
        State::new(s.u, s.n_dirac).unwrap()
    }

    #[test]
    fn linearization_at_zero_is_linear_symbol() {
        let g = grid();
        let p = ModelParams::new(0.4, 1.0, 1.0, 1.0).unwrap();
        let j = rhs_jacobian(&State::zeros(&g), &p).unwrap();
        let r = spectrum(&j, DEFAULT_THRESHOLD).unwrap();
        assert_eq!(r.eigenvalues.len(), 4 * g.num_modes());
        assert!((r.max_real_part + 0.4).abs() < 1e-10);
        assert_eq!(r.classification, Classification::Stable);
        let (lu, ln) = linear_symbol(&p, &g);
        let expected: Vec<Complex64> = lu
            .iter()
            .chain(&ln)
            .flat_map(|l| [*l, l.conj()])
            .collect();
        let mut unused = r.eigenvalues.clone();
        for e in &expected {
            let (i, d) = unused
                .iter()
                .enumerate()
                .map(|(i, l)| (i, (l - e).norm()))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap();
            assert!(d < 1e-10, "{e} missing");
            unused.swap_remove(i);
        }
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let g = grid();
        let p = ModelParams::new(0.3, 0.8, 0.7, 1.2).unwrap();
        let f = Forcing::sine(&g);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_state(&g, &mut rng, 1.0);
        let j = rhs_jacobian(&x, &p).unwrap();
        let eps = 1e-6;
        for _ in 0..20 {
            let d = random_state(&g, &mut rng, 1.0);
            let mut xp = x.clone();
            xp.axpy(eps, &d);
            let mut xm = x.clone();
            xm.axpy(-eps, &d);
            let fp = full_rhs(&xp, &f.profile, &p).unwrap().to_real_vec();
            let fm = full_rhs(&xm, &f.profile, &p).unwrap().to_real_vec();
            let fd = DVector::from_iterator(fp.len(), fp.iter().zip(&fm).map(|(a, b)| (a - b) / (2.0 * eps)));
            let jd = &j * DVector::from_vec(d.to_real_vec());
            let rel = (&fd - &jd).norm() / jd.norm();
            assert!(rel < 1e-6, "{rel}");
        }
    }

    #[test]
    fn spectrum_is_conjugation_closed() {
        let g = grid();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_state(&g, &mut rng, 1.0);
        let j = rhs_jacobian(&x, &ModelParams::default()).unwrap();
        let r = spectrum(&j, DEFAULT_THRESHOLD).unwrap();
        for l in &r.eigenvalues {
            let partner = r
                .eigenvalues
                .iter()
                .map(|m| (m - l.conj()).norm())
                .fold(f64::INFINITY, f64::min);
            assert!(partner < 1e-8 * (1.0 + l.norm()));
        }
    }

    #[test]
    fn hopf_test_rules() {
        let mk = |re: f64, im: f64| {
            let l = Complex64::new(re, im);
            StabilityReport {
                eigenvalues: vec![l, l.conj()],
                max_real_part: re,
                leading_pair: (im > HOPF_IMAG_FLOOR).then_some(l),
                classification: if re > 0.0 {
                    Classification::Unstable
                } else {
                    Classification::Stable
                },
            }
        };
        assert_eq!(hopf_test(0.3, &mk(-0.1, 1.0), 0.2, &mk(-0.05, 1.0)), None);
        assert_eq!(hopf_test(0.3, &mk(-0.01, 1.3), 0.2, &mk(0.02, 1.3)), Some((0.2, 0.3)));
        assert_eq!(hopf_test(0.3, &mk(-0.01, 0.0), 0.2, &mk(0.02, 0.0)), None);
        // a second pair crossing while another is already unstable
        let two = |re: f64| {
            let mut r = mk(0.4, 1.2);
            let l = Complex64::new(re, 2.0);
            r.eigenvalues.extend([l, l.conj()]);
            r
        };
        assert_eq!(two(-0.01).unstable_counts(), (0, 2));
        assert_eq!(hopf_test(0.4, &two(-0.01), 0.39, &two(0.01)), Some((0.39, 0.4)));
        assert_eq!(two(0.01).critical_pair(), Some(Complex64::new(0.01, 2.0)));
    }

    #[test]
    fn eigenvector_satisfies_eigen_equation() {
        let g = grid();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_state(&g, &mut rng, 1.0);
        let j = rhs_jacobian(&x, &ModelParams::default()).unwrap();
        let r = spectrum(&j, DEFAULT_THRESHOLD).unwrap();
        let l = r.leading_pair.unwrap();
        let v = eigenvector(&j, l).unwrap();
        let jc = j.map(|x| Complex64::new(x, 0.0));
        let res = (&jc * &v - &v * l).norm();
        assert!(res < 1e-8, "{res}");
    }

    #[test]
    fn spectrum_csv_rows() {
        let g = grid();
        let j = rhs_jacobian(&State::zeros(&g), &ModelParams::default()).unwrap();
        let r = spectrum(&j, DEFAULT_THRESHOLD).unwrap();
        let mut buf = Vec::new();
        write_spectrum_csv(&mut buf, &[(0.4, &r)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 4 * g.num_modes());
        assert!(text.starts_with("param_value,re,im\n0.4,"));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(16))]

            #[test]
            fn spectra_are_conjugation_closed(seed in any::<u64>(), gamma in 0.0f64..2.0) {
                let g = Grid::new(8).unwrap();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let x = random_state(&g, &mut rng, 1.0);
                let p = ModelParams::new(gamma, 1.0, 1.0, 1.0).unwrap();
                let r = spectrum(&rhs_jacobian(&x, &p).unwrap(), DEFAULT_THRESHOLD).unwrap();
                for l in &r.eigenvalues {
                    let partner = r
                        .eigenvalues
                        .iter()
                        .map(|m| (m - l.conj()).norm())
                        .fold(f64::INFINITY, f64::min);
                    prop_assert!(partner < 1e-8 * (1.0 + l.norm()));
                }
            }
        }
    }
}
