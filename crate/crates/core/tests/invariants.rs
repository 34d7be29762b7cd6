use std::f64::consts::{PI, TAU};

use fmsb::analysis::{fit_linear, fit_rabi_lineshape};
use fmsb::dynamics::{evolve, hamiltonian_at};
use fmsb::effective::{
    alpha_trajectory, displacement, effective_unitary, omega_eff, rabi_lineshape, resonant_slope, two_mode_response,
    Branch,
};
use fmsb::statespace::{coherent_amplitudes, thermal_weights, Spin};
use fmsb::trapmodel::{field_from_slope, omega_eff_profile, suppression_ratio, ProfileTarget};
use fmsb::{
    DataSeries, ElectricDrive, ElectrodeDrive, Envelope, FockSpace, GradientDrive, IntegratorConfig, ModeResponse,
    PulseSequence, SpinMotionState, SpinUnitary, TrapLayout, C64,
};
use proptest::prelude::*;

fn signed(detuning: f64, up: bool) -> f64 {
    if up {
        detuning
    } else {
        -detuning
    }
}

fn driven_sequence(we: f64, omega_e: f64, omega_g: f64, phi: f64, duration: f64) -> PulseSequence {
    let e = ElectricDrive::new(omega_e, we, phi, Envelope::square(0.0, duration)).unwrap();
    let g = GradientDrive::new(omega_g, we, 0.0, duration).unwrap();
    PulseSequence::new(vec![e], vec![g], duration).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn hamiltonian_is_hermitian(
        fm in 1.0e6..5.0e6f64,
        detuning in 50e3..500e3f64,
        above in any::<bool>(),
        fe in 1e4..2e6f64,
        fg in 1e2..2e4f64,
        phi in 0.0..TAU,
        frac in 0.0..1.0f64,
    ) {
        let wm = TAU * fm;
        let we = wm + TAU * signed(detuning, above);
        let space = FockSpace::for_ion(8, wm, 40.0).unwrap();
        let seq = driven_sequence(we, TAU * fe, TAU * fg, phi, 10e-6);
        let h = hamiltonian_at(frac * 10e-6, &seq, &space).unwrap().to_dense();
        let scale = h.iter().flatten().map(|v| v.norm()).fold(0.0, f64::max).max(1.0);
        for (i, row) in h.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                prop_assert!((*v - h[j][i].conj()).norm() <= 1e-12 * scale);
            }
        }
    }

    #[test]
    fn evolution_keeps_the_norm(
        fm in 1.5e6..3.0e6f64,
        detuning in 100e3..400e3f64,
        above in any::<bool>(),
        fg in 1e3..2e4f64,
        phi in 0.0..TAU,
    ) {
        let wm = TAU * fm;
        let we = wm + TAU * signed(detuning, above);
        let space = FockSpace::for_ion(10, wm, 40.0).unwrap();
        let seq = driven_sequence(we, TAU * 20e3, TAU * fg, phi, 2e-6);
        let up = SpinMotionState::basis(10, Spin::Up, 0).unwrap();
        let ev = evolve(&up, &seq, &space, &IntegratorConfig::new(2e-9), &[]).unwrap();
        prop_assert!((ev.final_state.norm() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn omega_eff_scales_and_flips_sign_across_the_mode(
        fm in 0.5e6..10e6f64,
        detuning in 1e3..1e6f64,
        above in any::<bool>(),
        fg in 1.0..1e5f64,
        fe in 1.0..1e7f64,
    ) {
        let wm = TAU * fm;
        let d = TAU * signed(detuning, above);
        let w = omega_eff(TAU * fg, TAU * fe, wm, wm + d).unwrap();
        prop_assert_eq!(w > 0.0, above);
        let doubled = omega_eff(2.0 * TAU * fg, TAU * fe, wm, wm + d).unwrap();
        prop_assert!((doubled / w - 2.0).abs() < 1e-12);
        // near the mode the response is Ω_g Ω_e / 2Δ
        let near = TAU * fg * TAU * fe / (2.0 * d);
        let rel = (d / wm).abs();
        prop_assert!((w / near - 1.0).abs() <= rel);
    }

    #[test]
    fn rotations_about_one_axis_compose(a in -PI..PI, b in -PI..PI, axis in 0.0..TAU) {
        let lhs = SpinUnitary::rotation(a, axis).mul(&SpinUnitary::rotation(b, axis));
        let rhs = SpinUnitary::rotation(a + b, axis);
        for i in 0..2 {
            for j in 0..2 {
                prop_assert!((lhs.matrix()[i][j] - rhs.matrix()[i][j]).norm() < 1e-12);
            }
        }
        prop_assert!(lhs.unitarity_error() < 1e-12);
    }

    #[test]
    fn effective_axis_follows_the_electric_phase(phi in -3.0..3.0f64, theta in 0.2..3.0f64, plus in any::<bool>()) {
        let branch = if plus { Branch::Plus } else { Branch::Minus };
        let u = effective_unitary(phi, theta, 1.0, branch);
        let expected = if plus { -phi } else { phi };
        let diff = (u.axis_angle() - expected).rem_euclid(TAU);
        prop_assert!(diff.min(TAU - diff) < 1e-9);
        prop_assert!((u.rotation_angle() - theta).abs() < 1e-9);
    }

    #[test]
    fn lineshape_matches_the_generalized_rabi_formula(w in 1e2..1e5f64, detuning in -1e6..1e6f64, t in 1e-6..1e-3f64) {
        let g2 = w * w + detuning * detuning;
        let expected = w * w / g2 * (g2.sqrt() * t / 2.0).sin().powi(2);
        let p = rabi_lineshape(w, detuning, t);
        prop_assert!((p - expected).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&p));
        prop_assert!((p - rabi_lineshape(w, -detuning, t)).abs() < 1e-12);
    }

    #[test]
    fn thermal_weights_are_geometric(nbar in 0.01..5.0f64, cut in 5usize..80) {
        let dist = thermal_weights(nbar, cut).unwrap();
        let w = dist.weights();
        let total: f64 = w.iter().sum();
        prop_assert!((total + dist.tail_mass() - 1.0).abs() < 1e-12);
        for pair in w.windows(2) {
            prop_assert!((pair[1] / pair[0] - nbar / (nbar + 1.0)).abs() < 1e-12);
        }
        prop_assert!((w[0] - 1.0 / (nbar + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn coherent_amplitudes_have_mean_alpha(re in -2.0..2.0f64, im in -2.0..2.0f64) {
        let alpha = C64::new(re, im);
        let amps = coherent_amplitudes(60, alpha);
        let norm: f64 = amps.iter().map(|c| c.norm_sqr()).sum();
        prop_assert!((norm - 1.0).abs() < 1e-12);
        let mean: C64 = (1..60).map(|n| amps[n - 1].conj() * amps[n] * (n as f64).sqrt()).sum();
        prop_assert!((mean - alpha).norm() < 1e-10);
    }

    #[test]
    fn square_displacement_matches_the_closed_form_trajectory(
        fm in 1.0e6..5.0e6f64,
        detuning in 10e3..1e6f64,
        above in any::<bool>(),
        phi in 0.0..TAU,
        frac in 0.0..1.0f64,
    ) {
        let wm = TAU * fm;
        let we = wm + TAU * signed(detuning, above);
        let oe = TAU * 100e3;
        let e = ElectricDrive::new(oe, we, phi, Envelope::square(0.0, 50e-6)).unwrap();
        let t = frac * 50e-6;
        let a = displacement(&[e], wm, t);
        let b = alpha_trajectory(t, oe, we, phi, wm).unwrap();
        prop_assert!((a - b).norm() < 1e-9 * (1.0 + b.norm()));
    }

    #[test]
    fn two_positive_products_cross_zero_once_between_modes(p1 in 0.1..10.0f64, p2 in 0.1..10.0f64) {
        let (w1, w2) = (TAU * 2.6e6, TAU * 2.8e6);
        let model = ModeResponse::new(vec![(w1, p1 * 1e12), (w2, p2 * 1e12)]).unwrap();
        let xs: Vec<f64> = (1..1000).map(|k| w1 + (w2 - w1) * k as f64 / 1000.0).collect();
        let r: Vec<f64> = xs.iter().map(|x| two_mode_response(*x, &model).unwrap()).collect();
        let changes = r.windows(2).filter(|p| p[0].signum() != p[1].signum()).count();
        prop_assert_eq!(changes, 1);
    }

    #[test]
    fn field_and_resonant_slope_invert(e in 1e-3..10.0f64, fm in 0.5e6..10e6f64) {
        let space = FockSpace::for_ion(2, TAU * fm, 40.0).unwrap();
        let back = field_from_slope(resonant_slope(e, &space), &space);
        prop_assert!((back / e - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fit_linear_recovers_exact_lines(slope in -1e3..1e3f64, intercept in -1e3..1e3f64) {
        let xs: Vec<f64> = (0..12).map(|k| k as f64 * 0.37 - 1.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| slope * x + intercept).collect();
        let fit = fit_linear(&DataSeries::from_xy(&xs, &ys).unwrap(), false).unwrap();
        prop_assert!((fit.value("slope").unwrap() - slope).abs() < 1e-9 * (1.0 + slope.abs() + intercept.abs()));
        prop_assert!((fit.value("intercept").unwrap() - intercept).abs() < 1e-9 * (1.0 + slope.abs() + intercept.abs()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn lineshape_fit_finds_the_center(shift in -0.3..0.3f64, w_hz in 500.0..5e3f64) {
        let w = TAU * w_hz;
        let t = PI / w;
        let center = TAU * 2.1e6 + shift * w;
        let xs: Vec<f64> = (0..31).map(|k| TAU * 2.1e6 + (k as f64 - 15.0) * 0.2 * w).collect();
        let ys: Vec<f64> = xs.iter().map(|x| rabi_lineshape(w, x - center, t)).collect();
        let fit = fit_rabi_lineshape(&DataSeries::from_xy(&xs, &ys).unwrap(), t).unwrap();
        prop_assert!((fit.value("center_frequency").unwrap() - center).abs() < 1e-4 * w);
    }

    #[test]
    fn pickup_lowers_the_suppression_ratio(p1 in 0.0..0.4f64, step in 0.01..0.3f64) {
        let modes = [TAU * 1e6, TAU * 2.6e6, TAU * 2.8e6];
        let layout = TrapLayout::linear_surface_trap(11, 100e-6, (40e-6, 240e-6), 80e-6, modes, PI / 4.0).unwrap();
        let target = ProfileTarget::for_ion(1, TAU * 500.0, 40.0);
        let xs = [0.0, 450e-6];
        let ratio = |p: f64| {
            let drive = ElectrodeDrive::single(11, 5, 0.01).unwrap().with_neighbour_pickup(p).unwrap();
            let profile = omega_eff_profile(&layout, &drive, &target, TAU * 2.5e6, &xs).unwrap();
            suppression_ratio(&profile, xs[0], xs[1]).unwrap()
        };
        prop_assert!(ratio(p1 + step) < ratio(p1));
    }
}
