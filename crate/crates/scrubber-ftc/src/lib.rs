//! Pressure-control simulation for a gas scrubber vessel.
//!
//! The crate models a first-order scrubber/valve loop under PI control,
//! estimates additive sensor faults with a filter-augmented observer, and
//! reconfigures the feedback path online (active fault-tolerant control).
//! Scenario execution is a deterministic fixed-step simulation producing
//! complete per-step signal traces.
//!
//! Core math is generic over the scalar type (`f32`/`f64`) through the
//! [`Real`] trait; every public type defaults its scalar parameter to `f64`,
//! so `StateSpace`, `Scenario`, `Trace`, ... name the double-precision
//! versions unless written as e.g. `StateSpace<f32>`.

// `!(x > zero)` deliberately treats NaN as a violation; the suggested
// `x <= zero` would let NaN through every guard.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod control;
pub mod error;
pub mod ftc;
pub mod model;
pub mod observer;
pub mod report;
pub mod scenario_file;
pub mod sim;
pub mod trace_csv;

pub mod cli;

pub use error::{Error, Result};

use num_traits::{FromPrimitive, ToPrimitive};

/// Scalar type the toolkit is generic over.
///
/// `nalgebra::RealField` supplies the field operations and elementary
/// functions, the `num-traits` conversions bridge to and from `f64`
/// constants and serialized values. Implemented by `f32` and `f64`.
pub trait Real: nalgebra::RealField + Copy + FromPrimitive + ToPrimitive {}

impl<T: nalgebra::RealField + Copy + FromPrimitive + ToPrimitive> Real for T {}

/// Lossy conversion from an `f64` constant into the working scalar.
pub(crate) fn r64<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("scalar must convert from f64")
}
