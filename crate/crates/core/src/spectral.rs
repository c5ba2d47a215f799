//! Fourier representation of 2π-periodic fields.
//!
//! Coefficients are the analytic Fourier coefficients
//!
//! ```text
//! c_k = (1/N) Σ_j u(x_j) e^{-i k x_j},   x_j = 2π j / N,
//! u(x) = Σ_k c_k e^{i k x},              k ∈ {-N/2, …, N/2 - 1}
//! ```
//!
//! so `sin x` has `c_1 = -i/2`, `c_{-1} = i/2`, and `‖u‖²_{L²} = 2π Σ |c_k|²`.
//! Storage follows FFT order: slot `j < N/2` holds wavenumber `j`, slot
//! `j ≥ N/2` holds `j - N`; slot `N/2` is the unpaired Nyquist mode `-N/2`.
//!
//! Products are formed by collocation. With dealiasing off the collocation
//! grid is the N-point grid itself; with it on, inputs are zero-padded to a
//! `3N/2` grid, which makes every retained mode of the product exact.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};
use std::sync::Arc;

use num_complex::Complex;
use num_traits::{Float, Zero};
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::scalar::Real;

type C<T> = Complex<T>;

struct Plans<T: Real> {
    forward: Arc<dyn Fft<T>>,
    inverse: Arc<dyn Fft<T>>,
    pad_forward: Arc<dyn Fft<T>>,
    pad_inverse: Arc<dyn Fft<T>>,
    scratch_len: usize,
}

/// Uniform grid of `N` collocation points on `[0, 2π)`.
#[derive(Clone)]
pub struct Grid<T: Real> {
    n: usize,
    dealias: bool,
    plans: Arc<Plans<T>>,
}

impl<T: Real> fmt::Debug for Grid<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid")
            .field("num_modes", &self.n)
            .field("dealias", &self.dealias)
            .finish()
    }
}

impl<T: Real> PartialEq for Grid<T> {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n && self.dealias == other.dealias
    }
}

impl<T: Real> Grid<T> {
    /// Grid with `n` retained modes. `n` must be even and at least 8.
    pub fn new(n: usize) -> Result<Self> {
        if n < 8 || !n.is_multiple_of(2) {
            return Err(Error::InvalidGrid(format!(
                "number of modes must be even and >= 8, got {n}"
            )));
        }
        let m = Self::padded_len(n);
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let pad_forward = planner.plan_fft_forward(m);
        let pad_inverse = planner.plan_fft_inverse(m);
        let scratch_len = [&forward, &inverse, &pad_forward, &pad_inverse]
            .iter()
            .map(|p| p.get_inplace_scratch_len())
            .max()
            .unwrap_or(0);
        Ok(Self {
            n,
            dealias: false,
            plans: Arc::new(Plans {
                forward,
                inverse,
                pad_forward,
                pad_inverse,
                scratch_len,
            }),
        })
    }

    /// Same grid with products dealiased (3/2 padding) or not.
    pub fn with_dealias(mut self, dealias: bool) -> Self {
        self.dealias = dealias;
        self
    }

    fn padded_len(n: usize) -> usize {
        3 * n / 2
    }

    pub fn num_modes(&self) -> usize {
        self.n
    }

    pub fn dealias(&self) -> bool {
        self.dealias
    }

    /// Wavenumber stored in slot `idx`.
    #[inline]
    pub fn wavenumber(&self, idx: usize) -> i64 {
        if idx < self.n / 2 {
            idx as i64
        } else {
            idx as i64 - self.n as i64
        }
    }

    /// Slot holding wavenumber `k`, if retained.
    #[inline]
    pub fn index(&self, k: i64) -> Option<usize> {
        let half = (self.n / 2) as i64;
        if k < -half || k >= half {
            None
        } else {
            Some(k.rem_euclid(self.n as i64) as usize)
        }
    }

    #[inline]
    pub fn nyquist_index(&self) -> usize {
        self.n / 2
    }

    pub fn wavenumbers(&self) -> impl Iterator<Item = i64> + '_ {
        (0..self.n).map(move |j| self.wavenumber(j))
    }

    pub fn collocation_points(&self) -> Vec<T> {
        let step = T::TAU() / T::from_usize_lossy(self.n);
        (0..self.n).map(|j| T::from_usize_lossy(j) * step).collect()
    }

    /// Length of the collocation grid used for products.
    pub fn quadrature_len(&self) -> usize {
        if self.dealias {
            Self::padded_len(self.n)
        } else {
            self.n
        }
    }

    pub fn workspace(&self) -> Workspace<T> {
        let q = Self::padded_len(self.n);
        Workspace {
            a: vec![C::zero(); q],
            b: vec![C::zero(); q],
            fft: vec![C::zero(); self.plans.scratch_len],
        }
    }

    /// Collocation values to coefficients, in place.
    pub fn forward(&self, buf: &mut [C<T>], scratch: &mut [C<T>]) {
        debug_assert_eq!(buf.len(), self.n);
        self.plans.forward.process_with_scratch(buf, scratch);
        let scale = T::one() / T::from_usize_lossy(self.n);
        buf.iter_mut().for_each(|c| *c = c.scale(scale));
    }

    /// Coefficients to collocation values, in place.
    pub fn inverse(&self, buf: &mut [C<T>], scratch: &mut [C<T>]) {
        debug_assert_eq!(buf.len(), self.n);
        self.plans.inverse.process_with_scratch(buf, scratch);
    }

    /// Evaluates `coeffs` on the product grid; writes `quadrature_len()` values.
    pub fn to_quadrature(&self, coeffs: &[C<T>], vals: &mut [C<T>], scratch: &mut [C<T>]) {
        if !self.dealias {
            vals[..self.n].copy_from_slice(coeffs);
            self.inverse(&mut vals[..self.n], scratch);
            return;
        }
        let m = Self::padded_len(self.n);
        let vals = &mut vals[..m];
        vals.iter_mut().for_each(|v| *v = C::zero());
        let nyq = self.nyquist_index();
        for (j, c) in coeffs.iter().enumerate() {
            if j == nyq {
                continue;
            }
            let k = self.wavenumber(j);
            vals[k.rem_euclid(m as i64) as usize] = *c;
        }
        self.plans.pad_inverse.process_with_scratch(vals, scratch);
    }

    /// Inverse of [`Grid::to_quadrature`], truncating to the retained modes.
    /// `vals` is used as scratch and left in an unspecified state.
    pub fn from_quadrature(&self, vals: &mut [C<T>], coeffs: &mut [C<T>], scratch: &mut [C<T>]) {
        if !self.dealias {
            self.forward(&mut vals[..self.n], scratch);
            coeffs.copy_from_slice(&vals[..self.n]);
            return;
        }
        let m = Self::padded_len(self.n);
        let vals = &mut vals[..m];
        self.plans.pad_forward.process_with_scratch(vals, scratch);
        let scale = T::one() / T::from_usize_lossy(m);
        let nyq = self.nyquist_index();
        for (j, c) in coeffs.iter_mut().enumerate() {
            *c = if j == nyq {
                C::zero()
            } else {
                vals[self.wavenumber(j).rem_euclid(m as i64) as usize].scale(scale)
            };
        }
    }
}

/// Reusable buffers for allocation-free transforms in hot loops.
pub struct Workspace<T: Real> {
    pub a: Vec<C<T>>,
    pub b: Vec<C<T>>,
    pub fft: Vec<C<T>>,
}

/// A 2π-periodic function held by its Fourier coefficients.
#[derive(Clone)]
pub struct SpectralField<T: Real> {
    grid: Grid<T>,
    coeffs: Vec<C<T>>,
}

impl<T: Real> fmt::Debug for SpectralField<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpectralField")
            .field("grid", &self.grid)
            .field("coeffs", &self.coeffs)
            .finish()
    }
}

impl<T: Real> PartialEq for SpectralField<T> {
    fn eq(&self, other: &Self) -> bool {
        self.grid == other.grid && self.coeffs == other.coeffs
    }
}

impl<T: Real> SpectralField<T> {
    pub fn zeros(grid: &Grid<T>) -> Self {
        Self {
            grid: grid.clone(),
            coeffs: vec![C::zero(); grid.num_modes()],
        }
    }

    pub fn from_coeffs(grid: &Grid<T>, coeffs: Vec<C<T>>) -> Result<Self> {
        if coeffs.len() != grid.num_modes() {
            return Err(Error::LengthMismatch {
                expected: grid.num_modes(),
                found: coeffs.len(),
            });
        }
        Ok(Self {
            grid: grid.clone(),
            coeffs,
        })
    }

    /// A single Fourier mode `c·e^{ikx}`.
    pub fn mode(grid: &Grid<T>, k: i64, c: C<T>) -> Self {
        let mut f = Self::zeros(grid);
        f.set_coeff(k, c);
        f
    }

    /// Spectral coefficients of the collocation values `values[j] = u(x_j)`.
    pub fn to_spectral(grid: &Grid<T>, values: &[C<T>]) -> Result<Self> {
        if values.len() != grid.num_modes() {
            return Err(Error::LengthMismatch {
                expected: grid.num_modes(),
                found: values.len(),
            });
        }
        let mut coeffs = values.to_vec();
        let mut ws = grid.workspace();
        grid.forward(&mut coeffs, &mut ws.fft);
        Ok(Self {
            grid: grid.clone(),
            coeffs,
        })
    }

    /// Interpolates `f` at the collocation points.
    pub fn sample(grid: &Grid<T>, f: impl Fn(T) -> C<T>) -> Self {
        let values: Vec<_> = grid.collocation_points().into_iter().map(f).collect();
        Self::to_spectral(grid, &values).expect("length matches by construction")
    }

    pub fn sample_real(grid: &Grid<T>, f: impl Fn(T) -> T) -> Self {
        Self::sample(grid, |x| C::new(f(x), T::zero()))
    }

    /// Values at the N collocation points.
    pub fn to_physical(&self) -> Vec<C<T>> {
        let mut vals = self.coeffs.clone();
        let mut ws = self.grid.workspace();
        self.grid.inverse(&mut vals, &mut ws.fft);
        vals
    }

    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    pub fn coeffs(&self) -> &[C<T>] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [C<T>] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<C<T>> {
        self.coeffs
    }

    /// Coefficient of wavenumber `k` (zero outside the retained band).
    pub fn coeff(&self, k: i64) -> C<T> {
        self.grid
            .index(k)
            .map(|j| self.coeffs[j])
            .unwrap_or_else(C::zero)
    }

    /// Sets the coefficient of wavenumber `k`. Out-of-band `k` is ignored.
    pub fn set_coeff(&mut self, k: i64, c: C<T>) {
        if let Some(j) = self.grid.index(k) {
            self.coeffs[j] = c;
        }
    }

    fn ensure_same_grid(&self, other: &Self) -> Result<()> {
        if self.grid == other.grid {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }

    /// Applies the Fourier multiplier `symbol(k)`.
    pub fn apply_multiplier(&self, symbol: impl Fn(i64) -> C<T>) -> Self {
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(j, c)| c * symbol(self.grid.wavenumber(j)))
            .collect();
        Self {
            grid: self.grid.clone(),
            coeffs,
        }
    }

    /// `∂ₓ^order`, i.e. multiplication by `(ik)^order`. Odd orders zero the
    /// Nyquist mode so that real fields stay real.
    pub fn derivative(&self, order: u32) -> Self {
        let nyq = -((self.grid.num_modes() / 2) as i64);
        self.apply_multiplier(|k| {
            if order % 2 == 1 && k == nyq {
                return C::zero();
            }
            C::new(T::zero(), T::from_i64_lossy(k)).powu(order)
        })
    }

    /// `d = (-∂ₓₓ)^{1/2}`, multiplication by `|k|`.
    pub fn half_laplacian(&self) -> Self {
        self.apply_multiplier(|k| C::new(T::from_i64_lossy(k.abs()), T::zero()))
    }

    /// Removes the zero mode.
    pub fn mean_zero_project(&self) -> Self {
        let mut out = self.clone();
        out.coeffs[0] = C::zero();
        out
    }

    pub fn l2_norm_sq(&self) -> T {
        T::TAU() * self.coeffs.iter().map(|c| c.norm_sqr()).fold(T::zero(), |a, b| a + b)
    }

    pub fn l2_norm(&self) -> T {
        self.l2_norm_sq().sqrt()
    }

    /// `H^s` norm: inhomogeneous weights `(1+k²)^s` for `s ≥ 0`, homogeneous
    /// `|k|^{2s}` for `s < 0` (mean-zero fields only).
    pub fn sobolev_norm(&self, s: T) -> Result<T> {
        let two_s = s + s;
        let sum = if s >= T::zero() {
            self.coeffs
                .iter()
                .enumerate()
                .map(|(j, c)| {
                    let k = T::from_i64_lossy(self.grid.wavenumber(j));
                    (T::one() + k * k).powf(s) * c.norm_sqr()
                })
                .fold(T::zero(), |a, b| a + b)
        } else {
            let scale = self
                .coeffs
                .iter()
                .map(|c| c.norm())
                .fold(T::one(), Float::max);
            let mean = self.coeffs[0].norm();
            if mean > T::eps() * T::lit(1e4) * scale {
                return Err(Error::NonzeroMean {
                    value: mean.as_f64(),
                });
            }
            self.coeffs
                .iter()
                .enumerate()
                .skip(1)
                .map(|(j, c)| {
                    let k = T::from_i64_lossy(self.grid.wavenumber(j).abs());
                    k.powf(two_s) * c.norm_sqr()
                })
                .fold(T::zero(), |a, b| a + b)
        };
        Ok((T::TAU() * sum).sqrt())
    }

    /// `L²` inner product `∫ conj(self) · other dx`.
    pub fn inner(&self, other: &Self) -> C<T> {
        self.coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| a.conj() * b)
            .fold(C::zero(), |a, b| a + b)
            .scale(T::TAU())
    }

    /// Coefficients of the collocation product `a(x_j)·b(x_j)` (dealiased
    /// when the grid says so).
    pub fn pointwise_product(&self, other: &Self) -> Result<Self> {
        self.ensure_same_grid(other)?;
        let mut ws = self.grid.workspace();
        let q = self.grid.quadrature_len();
        self.grid.to_quadrature(&self.coeffs, &mut ws.a, &mut ws.fft);
        self.grid.to_quadrature(&other.coeffs, &mut ws.b, &mut ws.fft);
        for (a, b) in ws.a[..q].iter_mut().zip(&ws.b[..q]) {
            *a *= *b;
        }
        let mut out = Self::zeros(&self.grid);
        self.grid.from_quadrature(&mut ws.a, &mut out.coeffs, &mut ws.fft);
        Ok(out)
    }

    /// `|u|²` formed on the product grid.
    pub fn abs_squared(&self) -> Self {
        let mut ws = self.grid.workspace();
        let q = self.grid.quadrature_len();
        self.grid.to_quadrature(&self.coeffs, &mut ws.a, &mut ws.fft);
        for a in ws.a[..q].iter_mut() {
            *a = C::new(a.norm_sqr(), T::zero());
        }
        let mut out = Self::zeros(&self.grid);
        self.grid.from_quadrature(&mut ws.a, &mut out.coeffs, &mut ws.fft);
        out
    }

    fn conj_partner(&self, j: usize) -> C<T> {
        let n = self.grid.num_modes();
        self.coeffs[(n - j) % n].conj()
    }

    /// Field of the pointwise real part of the collocation values.
    pub fn real_part(&self) -> Self {
        let half = T::lit(0.5);
        let coeffs = (0..self.coeffs.len())
            .map(|j| (self.coeffs[j] + self.conj_partner(j)).scale(half))
            .collect();
        Self {
            grid: self.grid.clone(),
            coeffs,
        }
    }

    /// Field of the pointwise complex conjugate.
    pub fn conjugate(&self) -> Self {
        Self {
            grid: self.grid.clone(),
            coeffs: (0..self.coeffs.len()).map(|j| self.conj_partner(j)).collect(),
        }
    }

    /// Field of the pointwise imaginary part of the collocation values.
    pub fn imag_part(&self) -> Self {
        let half = T::lit(0.5);
        let coeffs = (0..self.coeffs.len())
            .map(|j| {
                let d = self.coeffs[j] - self.conj_partner(j);
                // d / (2i)
                C::new(d.im, -d.re).scale(half)
            })
            .collect();
        Self {
            grid: self.grid.clone(),
            coeffs,
        }
    }

    /// Whether `c(-k) = conj(c(k))` holds within `tol` (absolute), i.e. the
    /// field represents a real function.
    pub fn is_conjugate_symmetric(&self, tol: T) -> bool {
        (0..self.coeffs.len()).all(|j| (self.coeffs[j] - self.conj_partner(j)).norm() <= tol)
    }

    pub fn max_abs_coeff(&self) -> T {
        self.coeffs.iter().map(|c| c.norm()).fold(T::zero(), Float::max)
    }

    pub fn scale(&self, s: C<T>) -> Self {
        Self {
            grid: self.grid.clone(),
            coeffs: self.coeffs.iter().map(|c| c * s).collect(),
        }
    }

    pub fn scale_real(&self, s: T) -> Self {
        Self {
            grid: self.grid.clone(),
            coeffs: self.coeffs.iter().map(|c| c.scale(s)).collect(),
        }
    }

    /// `self += a · x`.
    pub fn axpy(&mut self, a: C<T>, x: &Self) {
        for (y, xv) in self.coeffs.iter_mut().zip(&x.coeffs) {
            *y += a * xv;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }
}

impl<T: Real> Add<&SpectralField<T>> for &SpectralField<T> {
    type Output = SpectralField<T>;
    fn add(self, rhs: &SpectralField<T>) -> SpectralField<T> {
        debug_assert!(self.grid == rhs.grid);
        let mut out = self.clone();
        out += rhs;
        out
    }
}

impl<T: Real> Sub<&SpectralField<T>> for &SpectralField<T> {
    type Output = SpectralField<T>;
    fn sub(self, rhs: &SpectralField<T>) -> SpectralField<T> {
        debug_assert!(self.grid == rhs.grid);
        let mut out = self.clone();
        out -= rhs;
        out
    }
}

impl<T: Real> AddAssign<&SpectralField<T>> for SpectralField<T> {
    fn add_assign(&mut self, rhs: &SpectralField<T>) {
        for (a, b) in self.coeffs.iter_mut().zip(&rhs.coeffs) {
            *a += *b;
        }
    }
}

impl<T: Real> SubAssign<&SpectralField<T>> for SpectralField<T> {
    fn sub_assign(&mut self, rhs: &SpectralField<T>) {
        for (a, b) in self.coeffs.iter_mut().zip(&rhs.coeffs) {
            *a -= *b;
        }
    }
}

impl<T: Real> Neg for &SpectralField<T> {
    type Output = SpectralField<T>;
    fn neg(self) -> SpectralField<T> {
        self.scale_real(-T::one())
    }
}

impl<T: Real> Mul<T> for &SpectralField<T> {
    type Output = SpectralField<T>;
    fn mul(self, rhs: T) -> SpectralField<T> {
        self.scale_real(rhs)
    }
}
