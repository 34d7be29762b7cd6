//! Physical constants (CODATA 2018), SI units.

use crate::Real;

/// Reduced Planck constant, J·s.
pub const HBAR: f64 = 1.054_571_817e-34;
/// Elementary charge, C.
pub const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;
/// Atomic mass unit, kg.
pub const AMU: f64 = 1.660_539_066_60e-27;

/// Mass of a ⁴⁰Ca⁺ ion in the nominal-mass convention used by the scenarios, kg.
pub const CA40_MASS_AMU: f64 = 40.0;

#[inline]
pub fn hbar<T: Real>() -> T {
    T::c(HBAR)
}

#[inline]
pub fn elementary_charge<T: Real>() -> T {
    T::c(ELEMENTARY_CHARGE)
}

#[inline]
pub fn amu<T: Real>() -> T {
    T::c(AMU)
}
