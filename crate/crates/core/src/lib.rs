//! Simulation and calibration toolkit for forced-motion-sideband qubit control.
//!
//! A trapped ion is driven by a spin-dependent gradient detuned from the qubit
//! by `δ` together with an oscillating electric field at `ω_e` close to a
//! motional mode `ω_m`. The driven motion converts the gradient into an
//! effective spin rotation whose amplitude and phase follow the electric field.
//!
//! * [`statespace`]: truncated spin ⊗ Fock space, ladder/Pauli operators, thermal weights.
//! * [`dynamics`]: interaction-picture Hamiltonian, pulse envelopes, propagation.
//! * [`effective`]: closed-form rotation rate, displacement trajectory, lineshapes.
//! * [`trapmodel`]: gapless-plane surface-trap electrostatics and localization.
//! * [`analysis`]: deterministic curve fitting built on a Nelder–Mead minimizer.
//!
//! All numerical code is generic over [`Real`]; the aliases below fix the
//! scalar to `f64`, which is what the tolerances in the test-suite assume.

// `!(x > 0)` style checks are kept on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// index loops mirror the matrix formulas
#![allow(clippy::needless_range_loop)]

pub mod analysis;
pub mod constants;
pub mod dynamics;
pub mod effective;
mod error;
mod scalar;
pub mod statespace;
pub mod trapmodel;

pub use error::{Error, Result};
pub use num_complex::Complex;
pub use scalar::Real;

pub type C64 = Complex<f64>;

pub type FockSpace = statespace::FockSpace<f64>;
pub type SpinMotionState = statespace::SpinMotionState<f64>;
pub type SparseOperator = statespace::SparseOperator<f64>;
pub type OperatorSet = statespace::OperatorSet<f64>;
pub type ThermalDistribution = statespace::ThermalDistribution<f64>;

pub type Envelope = dynamics::Envelope<f64>;
pub type GradientDrive = dynamics::GradientDrive<f64>;
pub type ElectricDrive = dynamics::ElectricDrive<f64>;
pub type PulseSequence = dynamics::PulseSequence<f64>;
pub type IntegratorConfig = dynamics::IntegratorConfig<f64>;
pub type Evolution = dynamics::Evolution<f64>;
pub type ThermalFlipReport = dynamics::ThermalFlipReport<f64>;

pub type EffectiveRotation = effective::EffectiveRotation<f64>;
pub type ModeResponse = effective::ModeResponse<f64>;
pub type SpinUnitary = effective::SpinUnitary<f64>;

pub type ElectrodePatch = trapmodel::ElectrodePatch<f64>;
pub type TrapLayout = trapmodel::TrapLayout<f64>;
pub type ElectrodeDrive = trapmodel::ElectrodeDrive<f64>;

pub type DataSeries = analysis::DataSeries<f64>;
pub type FitResult = analysis::FitResult<f64>;

/// Single-precision aliases for the closed-form layers.
pub mod f32 {
    pub type FockSpace = crate::statespace::FockSpace<f32>;
    pub type ModeResponse = crate::effective::ModeResponse<f32>;
    pub type ElectrodePatch = crate::trapmodel::ElectrodePatch<f32>;
    pub type TrapLayout = crate::trapmodel::TrapLayout<f32>;
}
