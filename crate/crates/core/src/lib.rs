//! Forced, damped Zakharov system on the circle: Fourier–Galerkin
//! discretisation, fourth-order exponential time differencing, equilibria,
//! linear stability, continuation of equilibria and periodic orbits, and
//! numerical checks of the long-time behaviour.
//!
//! The spectral kernels, the model and the time stepper are generic over the
//! scalar type (`f32` or `f64`). The solvers built on dense linear algebra
//! work in `f64`; the aliases below name the `f64` instances.

// `!(x > 0.0)` is used on purpose to reject NaN along with non-positive values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod continuation;
pub mod etdrk4;
pub mod model;
pub mod scalar;
pub mod spectral;
pub mod stability;
pub mod stationary;
pub mod verify;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Grid = spectral::Grid<f64>;
pub type Field = spectral::SpectralField<f64>;
pub type State = model::ZakharovState<f64>;
pub type Params = model::ModelParams<f64>;
pub type Forcing = model::Forcing<f64>;
