//! Reflected backward equations with irregular obstacles on finite
//! Brownian-Poisson lattices, with optimal stopping and Monte Carlo
//! cross-checks.
//!
//! Everything is generic over the scalar type ([`Real`], implemented for
//! `f32` and `f64`); the aliases at the crate root fix `f64`.

pub mod barrier;
pub mod bsde;
pub mod driver;
pub mod error;
pub mod experiments;
pub mod lattice;
pub mod mc;
pub mod process;
pub mod rbsde;
pub mod scalar;
pub mod scenario;
pub mod stopping;

pub use error::{LabError, Result};
pub use process::Slot;
pub use scalar::Real;

pub type Lattice = lattice::LatticeModel<f64>;
pub type Grid = lattice::TimeGrid<f64>;
pub type Adapted = process::AdaptedProcess<f64>;
pub type Slots = process::SlotProcess<f64>;
