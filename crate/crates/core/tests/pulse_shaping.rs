//! Residual motion after sin²-ramped off-resonant drives.
//!
//! Integrating `α = −i(Ω_e/2)∫f(s)e^{−iΔs}ds` by parts for a ramp of length τ,
//! a plateau P and a ramp down gives, in the rotating-wave limit,
//! `|α| = (Ω_e/2|Δ|)·(π²/2τ²)·|1 + e^{−iΔτ}|·|1 − e^{−iΔ(τ+P)}| / |Δ² − π²/τ²|`.

use std::f64::consts::{PI, TAU};

use fmsb::dynamics::{evolve, residual_excitation};
use fmsb::effective::displacement;
use fmsb::statespace::Spin;
use fmsb::{ElectricDrive, Envelope, FockSpace, IntegratorConfig, PulseSequence, SpinMotionState, C64};

fn oracle(omega_e: f64, delta: f64, ramp: f64, plateau: f64) -> f64 {
    let phase = |x: f64| C64::new(x.cos(), -x.sin());
    let up = (C64::new(1.0, 0.0) + phase(delta * ramp)).norm();
    let down = (C64::new(1.0, 0.0) - phase(delta * (ramp + plateau))).norm();
    omega_e / (2.0 * delta.abs()) * PI * PI / (2.0 * ramp * ramp) * up * down
        / (delta * delta - PI * PI / (ramp * ramp)).abs()
}

fn analytic_residual(omega_e: f64, delta: f64, ramp: f64, plateau: f64) -> f64 {
    let wm = TAU * 2.6e6;
    let env = Envelope::sin2(0.0, ramp, plateau);
    let e = ElectricDrive::new(omega_e, wm + delta, 0.0, env).unwrap();
    displacement(&[e], wm, env.end()).norm()
}

#[test]
fn displacement_matches_the_ramp_oracle() {
    let oe = TAU * 100e3;
    for (dk, ramp, plateau) in [(100.0, 300e-6, 105e-6), (50.0, 73e-6, 20e-6), (-200.0, 41e-6, 9.5e-6)] {
        let d = TAU * dk * 1e3;
        let a = analytic_residual(oe, d, ramp, plateau);
        let o = oracle(oe, d, ramp, plateau);
        // the counter-rotating term adds a relative ~|Δ|/2ω_m correction
        assert!((a / o - 1.0).abs() < 0.05, "{dk} kHz: {a} vs {o}");
    }
}

#[test]
fn integer_cycle_ramps_cancel() {
    let oe = TAU * 100e3;
    let d = TAU * 100e3;
    // half-integer beats per ramp: the ramp-up term vanishes
    assert!(analytic_residual(oe, d, 305e-6, 105e-6) < 1e-8);
    // whole beats from ramp start to ramp-down start: up and down cancel
    assert!(analytic_residual(oe, d, 300e-6, 100e-6) < 1e-8);
    assert!(analytic_residual(oe, d, 300e-6, 105e-6) > 1e-5);
}

#[test]
fn ramps_suppress_motion_and_scale_with_detuning() {
    let oe = TAU * 100e3;
    let mut normalized = Vec::new();
    for dk in [50.0, 100.0, 200.0] {
        let d = TAU * dk * 1e3;
        let scale = 100.0 / dk;
        let r = analytic_residual(oe, d, 300e-6 * scale, 105e-6 * scale);
        normalized.push(r * d / oe);
    }
    let hi = normalized.iter().copied().fold(f64::MIN, f64::max);
    let lo = normalized.iter().copied().fold(f64::MAX, f64::min);
    assert!(hi / lo - 1.0 < 0.1, "{normalized:?}");
    // the square-pulse worst case is Ω_e/|Δ|
    assert!(1.0 / hi >= 100.0);
}

#[test]
fn full_numerics_reproduce_the_ramped_residual() {
    let wm = TAU * 2.6e6;
    let oe = TAU * 100e3;
    let d = TAU * 100e3;
    let env = Envelope::sin2(0.0, 300e-6, 105e-6);
    let e = ElectricDrive::new(oe, wm + d, 0.0, env).unwrap();
    let seq = PulseSequence::new(vec![e], Vec::new(), env.end()).unwrap();
    let space = FockSpace::for_ion(20, wm, 40.0).unwrap();
    let up = SpinMotionState::basis(20, Spin::Up, 0).unwrap();
    let ev = evolve(&up, &seq, &space, &IntegratorConfig::new(2e-9), &[]).unwrap();
    let numeric = residual_excitation(&ev.final_state).0.norm();
    let o = oracle(oe, d, 300e-6, 105e-6);
    assert!((numeric / o - 1.0).abs() < 0.05, "{numeric} vs {o}");
    assert!(oe / d / numeric >= 100.0);
}
