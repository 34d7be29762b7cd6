//! Full numerics against closed-form and frame-transformed results.

use std::f64::consts::{PI, TAU};

use fmsb::dynamics::{displace_state, evolve, evolve_transformed, residual_excitation, IntegratorMethod};
use fmsb::effective::{displacement, omega_eff, sequence_unitary};
use fmsb::statespace::Spin;
use fmsb::{ElectricDrive, Envelope, FockSpace, GradientDrive, IntegratorConfig, PulseSequence, SpinMotionState, C64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn square_pulse(omega_e: f64, we: f64, phi: f64, omega_g: f64, delta: f64, duration: f64) -> PulseSequence {
    let e = ElectricDrive::new(omega_e, we, phi, Envelope::square(0.0, duration)).unwrap();
    let g = GradientDrive::new(omega_g, delta, 0.0, duration).unwrap();
    PulseSequence::new(vec![e], vec![g], duration).unwrap()
}

#[test]
fn lab_and_displaced_frames_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut checked = 0;
    while checked < 3 {
        let wm = TAU * rng.gen_range(1.5e6..3.0e6);
        let d = TAU * rng.gen_range(100e3..400e3) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let we = wm + d;
        let oe = d.abs() * rng.gen_range(0.3..1.2);
        let og = TAU * rng.gen_range(1e3..10e3);
        let w = omega_eff(og, oe, wm, we).unwrap();
        if d.abs() < 10.0 * w.abs() {
            continue;
        }
        let delta = if rng.gen_bool(0.5) { we } else { -we };
        let seq = square_pulse(oe, we, rng.gen_range(0.0..TAU), og, delta, 10e-6);
        let space = FockSpace::for_ion(40, wm, 40.0).unwrap();
        let (c, s) = (rng.gen_range(0.0..PI).cos(), rng.gen_range(0.0..PI).sin());
        let mut vac = vec![C64::new(0.0, 0.0); 40];
        vac[0] = C64::new(1.0, 0.0);
        let psi0 = SpinMotionState::product([C64::new(c, 0.0), C64::new(0.0, s)], &vac).unwrap();
        let times: Vec<f64> = (1..=5).map(|k| 2e-6 * k as f64).collect();
        let cfg = IntegratorConfig::new(1e-9);
        let full = evolve(&psi0, &seq, &space, &cfg, &times).unwrap();
        let moved = evolve_transformed(&psi0, &seq, &space, &cfg, &times).unwrap();
        for ((t, a), (_, b)) in full.samples.iter().zip(&moved.samples) {
            let back = displace_state(b, displacement(&seq.electric, wm, *t));
            let dist = a.distance_up_to_phase(&back).unwrap();
            assert!(dist < 1e-6, "t = {t}: distance {dist}");
        }
        checked += 1;
    }
}

#[test]
fn driven_motion_follows_the_displacement() {
    let wm = TAU * 2.6e6;
    let space = FockSpace::for_ion(40, wm, 40.0).unwrap();
    for (we, phi) in [(TAU * 2.5e6, 0.3), (TAU * 2.75e6, -1.2)] {
        let oe = TAU * 0.4e6;
        let e = ElectricDrive::new(oe, we, phi, Envelope::sin2(0.0, 10e-6, 5e-6)).unwrap();
        let seq = PulseSequence::new(vec![e], Vec::new(), 25e-6).unwrap();
        let times: Vec<f64> = (1..=10).map(|k| 2.5e-6 * k as f64).collect();
        let down = SpinMotionState::basis(40, Spin::Down, 0).unwrap();
        let ev = evolve(&down, &seq, &space, &IntegratorConfig::new(1e-9), &times).unwrap();
        for (t, state) in &ev.samples {
            let (a, excess) = residual_excitation(state);
            let alpha = displacement(&seq.electric, wm, *t);
            assert!((a - alpha).norm() < 1e-4, "t = {t}: {a} vs {alpha}");
            assert!(excess.abs() < 1e-6);
        }
    }
}

#[test]
fn main_text_rabi_flop_follows_the_effective_model() {
    let wm = TAU * 2.6e6;
    let we = TAU * 2.5e6;
    let space = FockSpace::for_ion(12, wm, 40.0).unwrap();
    let oe = space.omega_e_rabi(1.2);
    let og = TAU * 500.0;
    let w = omega_eff(og, oe, wm, we).unwrap();
    // Ω_g Ω_e ω_m / (ω_e² − ω_m²) with Ω_e/2π ≈ 2.02 MHz gives about −5.2 kHz
    assert!((w.abs() / TAU - 5156.0).abs() < 10.0);
    let pi_time = PI / w.abs();
    let seq = square_pulse(oe, we, 0.0, og, we, pi_time);
    let times: Vec<f64> = (1..=8).map(|k| pi_time * k as f64 / 8.0).collect();
    let up = SpinMotionState::basis(12, Spin::Up, 0).unwrap();
    let ev = evolve_transformed(&up, &seq, &space, &IntegratorConfig::new(2e-9), &times).unwrap();
    // the secular model misses beat terms of relative size Ω_eff/|ω_e − ω_m|
    let beat = w.abs() / (we - wm).abs();
    for (t, state) in &ev.samples {
        let expected = (w * t / 2.0).cos().powi(2);
        assert!((state.spin_population(Spin::Up) - expected).abs() < beat, "t = {t}");
    }
    assert!(ev.final_state.spin_population(Spin::Up) < 1e-2);
    let u = sequence_unitary(&seq, wm).unwrap();
    assert!(u.matrix()[1][1].norm_sqr() < 1e-12);
}

#[test]
fn benchmark_pi_time_and_ground_state_error() {
    let wm = TAU * 7e6;
    let we = TAU * 5e6;
    let og = TAU * 15e3;
    let oe = TAU * 1e6;
    let w = omega_eff(og, oe, wm, we).unwrap();
    // 15 kHz · 1 MHz · 7 / (25 − 49) = −4.375 kHz
    assert!((w / TAU + 4375.0).abs() < 1e-6);
    let pi_time = PI / w.abs();
    assert!((pi_time * 1e6 / 114.3 - 1.0).abs() < 0.005);

    let space = FockSpace::for_ion(20, wm, 40.0).unwrap();
    let seq = square_pulse(oe, we, 0.0, og, we, pi_time);
    let up = SpinMotionState::basis(20, Spin::Up, 0).unwrap();
    let ev = evolve_transformed(&up, &seq, &space, &IntegratorConfig::new(1.25e-9), &[]).unwrap();
    let error = ev.final_state.spin_population(Spin::Up);
    assert!(error < 1e-4, "ground-state flip error {error}");
}

#[test]
fn step_size_and_truncation_converge() {
    let wm = TAU * 2.6e6;
    let we = TAU * 2.45e6;
    let seq = square_pulse(TAU * 0.3e6, we, 0.4, TAU * 5e3, -we, 20e-6);
    let up = SpinMotionState::basis(16, Spin::Up, 0).unwrap();
    let space = FockSpace::for_ion(16, wm, 40.0).unwrap();
    let run = |dt: f64, method| {
        let cfg = IntegratorConfig::new(dt).with_method(method);
        evolve_transformed(&up, &seq, &space, &cfg, &[]).unwrap().final_state
    };
    let coarse = run(3.2e-9, IntegratorMethod::Magnus4);
    let fine = run(1.6e-9, IntegratorMethod::Magnus4);
    let ref_state = run(0.8e-9, IntegratorMethod::Magnus4);
    let (e1, e2) = (coarse.distance(&ref_state).unwrap(), fine.distance(&ref_state).unwrap());
    assert!(e2 < 1e-8, "{e2}");
    // fourth order: halving the step cuts the error by ~16
    assert!(e1 / e2 > 8.0, "{e1} / {e2}");
    let midpoint = run(0.8e-9, IntegratorMethod::MidpointExponential);
    assert!(midpoint.distance(&ref_state).unwrap() < 1e-3);

    let bigger = FockSpace::for_ion(24, wm, 40.0).unwrap();
    let up24 = SpinMotionState::basis(24, Spin::Up, 0).unwrap();
    let wide = evolve_transformed(&up24, &seq, &bigger, &IntegratorConfig::new(0.8e-9), &[]).unwrap().final_state;
    for spin in [Spin::Down, Spin::Up] {
        for n in 0..16 {
            assert!((wide.amplitude(spin, n) - ref_state.amplitude(spin, n)).norm() < 1e-8);
        }
    }
}
