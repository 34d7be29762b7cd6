//! Scenarios built on the driven spin rotation: Rabi flopping and the scans
//! over field amplitude, frequency and phase.

use std::f64::consts::{PI, TAU};

use fmsb::analysis::{fit_decaying_sinusoid, fit_fringe, fit_linear, fit_rabi_lineshape, fit_two_mode_response};
use fmsb::dynamics::PulseSequence;
use fmsb::effective::{self, Branch};
use fmsb::statespace::{Spin, ThermalDistribution};
use fmsb::{DataSeries, ModeResponse, SpinMotionState};

use super::{khz, mhz, relative_linearity_residual, HZ, THERMAL_TAIL};
use crate::config::Scenario;
use crate::output::Table;
use crate::probe::{
    axis_angle_from_up, evolve, gradient_delta, integrator, mode_space, probe_duration, rotation_rate, sample_times,
    unwrap, Pulse,
};
use crate::{scan_points, RunError, ScenarioData};

fn branch_weights(nbar: f64) -> fmsb::Result<Vec<(usize, f64)>> {
    if nbar == 0.0 {
        return Ok(vec![(0, 1.0)]);
    }
    let dist = ThermalDistribution::with_tail_below(nbar, THERMAL_TAIL)?;
    let total: f64 = dist.weights().iter().sum();
    Ok(dist.weights().iter().enumerate().map(|(n, w)| (n, w / total)).collect())
}

fn target_pulse(s: &Scenario, e_field: f64, omega_e: f64, omega_e_rabi_per_field: f64) -> Pulse {
    Pulse {
        omega_g_rabi: s.gradient.omega_g_rabi,
        delta: gradient_delta(s, omega_e),
        omega_e_rabi: omega_e_rabi_per_field * e_field,
        omega_e,
        phi_e: s.efield.phi_e,
    }
}

pub(super) fn rabi_flop(s: &Scenario) -> Result<ScenarioData, RunError> {
    let wm = s.modes.target_frequency();
    let space = mode_space(s, wm)?;
    let we = s.efield.omega_e.expect("checked at parse");
    let e_field = s.efield.amplitude.expect("checked at parse");
    let pulse = target_pulse(s, e_field, we, space.omega_e_rabi(1.0));
    let duration = s.sim.duration.expect("checked at parse");
    let seq = pulse.sequence(duration)?;
    let times = sample_times(duration, s.sim.samples);
    let branches = branch_weights(s.sim.nbar)?;
    if let Some((n, _)) = branches.last() {
        if *n >= space.n_max() {
            return Err(fmsb::Error::Domain(format!("thermal cut {n} does not fit n_fock = {}", space.n_max())).into());
        }
    }
    let cfg = integrator(s);
    let runs = scan_points(s.sim.parallel, branches.len(), |k| {
        let initial = SpinMotionState::basis(space.n_max(), Spin::Up, branches[k].0)?;
        evolve(s.sim.frame, &initial, &seq, &space, &cfg, &times)
    })?;

    let omega_eff = effective::omega_eff(pulse.omega_g_rabi, pulse.omega_e_rabi, wm, we)?;
    let detuning = pulse.delta.abs() - we;
    let mut p_up = vec![0.0; times.len()];
    let mut data = ScenarioData::new(Vec::new());
    for (k, (ev, (_, w))) in runs.iter().zip(&branches).enumerate() {
        data.validity.record_point(k, ev.valid, ev.max_top_population);
        for (acc, (_, st)) in p_up.iter_mut().zip(&ev.samples) {
            *acc += w * st.spin_population(Spin::Up);
        }
    }
    let mut table = Table::new("rabi_flop.csv", &["t_us", "p_up_numeric", "p_up_effective"]);
    for (t, p) in times.iter().zip(&p_up) {
        table.push(vec![t * 1e6, *p, 1.0 - effective::rabi_lineshape(omega_eff, detuning, *t)]);
    }
    data.tables.push(table);
    let analytic = omega_eff.abs() * HZ;
    data.set("omega_e_rabi_mhz", mhz(pulse.omega_e_rabi));
    data.set("omega_eff_hz_analytic", analytic);
    if let Some(fit) = data.fit(fit_decaying_sinusoid(&DataSeries::from_xy(&times, &p_up)?)) {
        let fitted = fit.value("frequency")?;
        data.set("fitted_frequency_hz", fitted);
        data.set("fitted_decay_time_us", fit.value("decay_time")? * 1e6);
        data.set("relative_deviation", (fitted - analytic) / analytic);
    }
    data.set("r0_nm", space.r0() * 1e9);
    Ok(data)
}

pub(super) fn amp_scan(s: &Scenario) -> Result<ScenarioData, RunError> {
    let wm = s.modes.target_frequency();
    let space = mode_space(s, wm)?;
    let we = s.efield.omega_e.expect("checked at parse");
    let fields = s.scan.as_ref().expect("checked at parse").values();
    let per_field = space.omega_e_rabi(1.0);
    let duration = probe_duration(s, we, wm);
    let axis = Branch::from_delta(gradient_delta(s, we)).axis_angle(s.efield.phi_e);
    let probes = scan_points(s.sim.parallel, fields.len(), |k| {
        let pulse = target_pulse(s, fields[k], we, per_field);
        let analytic = effective::omega_eff(pulse.omega_g_rabi, pulse.omega_e_rabi, wm, we)?;
        Ok((analytic, rotation_rate(s, &space, &pulse, axis, duration)?))
    })?;

    let mut table =
        Table::new("amp_scan.csv", &["e_v_per_m", "omega_e_rabi_mhz", "omega_eff_hz_analytic", "omega_eff_hz_numeric"]);
    let mut data = ScenarioData::new(Vec::new());
    let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
    for (k, (e, (a, p))) in fields.iter().zip(&probes).enumerate() {
        data.validity.record_point(k, p.valid, p.max_top_population);
        analytic.push(a * HZ);
        numeric.push(p.omega * HZ);
        table.push(vec![*e, mhz(per_field * e), a * HZ, p.omega * HZ]);
    }
    data.tables.push(table);
    for (name, ys) in [("analytic", &analytic), ("numeric", &numeric)] {
        let fit = fit_linear(&DataSeries::from_xy(&fields, ys)?, true)?;
        let slope = fit.value("slope")?;
        data.set(&format!("slope_hz_per_v_per_m_{name}"), slope);
        data.set(&format!("linearity_residual_{name}"), relative_linearity_residual(&fields, ys, slope));
    }
    let worst =
        analytic.iter().zip(&numeric).filter(|(a, _)| **a != 0.0).map(|(a, n)| ((n - a) / a).abs()).fold(0.0, f64::max);
    data.set("numeric_vs_analytic_max_relative", worst);
    data.set("probe_duration_us", duration * 1e6);
    Ok(data)
}

pub(super) fn detuning_scan(s: &Scenario) -> Result<ScenarioData, RunError> {
    let w1 = s.modes.radial1.expect("checked at parse");
    let w2 = s.modes.radial2.expect("checked at parse");
    let e_field = s.efield.amplitude.expect("checked at parse");
    let spaces = [mode_space(s, w1)?, mode_space(s, w2)?];
    let fields = [e_field, e_field * s.efield.radial2_field_ratio];
    let products: Vec<f64> =
        spaces.iter().zip(&fields).map(|(sp, e)| s.gradient.omega_g_rabi * sp.omega_e_rabi(*e)).collect();
    let response = ModeResponse::new(vec![(w1, products[0]), (w2, products[1])])?;
    let freqs: Vec<f64> = s.scan.as_ref().expect("checked at parse").values().iter().map(|f| TAU * 1e6 * f).collect();

    let points = scan_points(s.sim.parallel, freqs.len(), |k| {
        let we = freqs[k];
        let analytic = effective::two_mode_response(we, &response)?;
        let axis = Branch::from_delta(gradient_delta(s, we)).axis_angle(s.efield.phi_e);
        let mut terms = [0.0; 2];
        let mut numeric = 0.0;
        let mut valid = true;
        let mut top: f64 = 0.0;
        for m in 0..2 {
            let wm = spaces[m].omega_m();
            let pulse = target_pulse(s, fields[m], we, spaces[m].omega_e_rabi(1.0));
            terms[m] = effective::omega_eff(pulse.omega_g_rabi, pulse.omega_e_rabi, wm, we)?;
            let p = rotation_rate(s, &spaces[m], &pulse, axis, probe_duration(s, we, wm))?;
            numeric += p.omega;
            valid &= p.valid;
            top = top.max(p.max_top_population);
        }
        Ok((analytic, numeric, terms, valid, top))
    })?;

    let mut table = Table::new(
        "detuning_scan.csv",
        &["omega_e_mhz", "omega_eff_hz_analytic", "omega_eff_hz_numeric", "radial1_term_hz", "radial2_term_hz"],
    );
    let mut data = ScenarioData::new(Vec::new());
    for (k, (we, (a, n, terms, valid, top))) in freqs.iter().zip(&points).enumerate() {
        data.validity.record_point(k, *valid, *top);
        table.push(vec![mhz(*we), a * HZ, n * HZ, terms[0] * HZ, terms[1] * HZ]);
    }
    data.tables.push(table);

    // sign changes of the model strictly between the modes
    let grid = 4001;
    let mut crossings = Vec::new();
    let mut prev: Option<f64> = None;
    for k in 1..grid {
        let we = w1 + (w2 - w1) * k as f64 / grid as f64;
        let r = effective::two_mode_response(we, &response)?;
        if let Some(p) = prev {
            if p.signum() != r.signum() {
                crossings.push(we);
            }
        }
        prev = Some(r);
    }
    data.set("zero_crossings_between_modes", crossings.len() as f64);
    if let Some(w) = crossings.first() {
        data.set("zero_crossing_mhz", mhz(*w));
    }
    data.set("product_0_model_hz2", products[0] * HZ * HZ);
    data.set("product_1_model_hz2", products[1] * HZ * HZ);
    if freqs.len() >= 4 {
        let ys: Vec<f64> = points.iter().map(|p| p.1.abs()).collect();
        if let Some(fit) = data.fit(fit_two_mode_response(&DataSeries::from_xy(&freqs, &ys)?, &[w1, w2])) {
            for (k, model) in products.iter().enumerate() {
                let fitted = fit.value(&format!("product_{k}"))?;
                data.set(&format!("product_{k}_fit_hz2"), fitted * HZ * HZ);
                data.set(&format!("product_{k}_relative_error"), (fitted - model) / model);
            }
        }
    }
    Ok(data)
}

pub(super) fn phase_scan(s: &Scenario) -> Result<ScenarioData, RunError> {
    let wm = s.modes.target_frequency();
    let space = mode_space(s, wm)?;
    let we = s.efield.omega_e.expect("checked at parse");
    let e_field = s.efield.amplitude.expect("checked at parse");
    let first = target_pulse(s, e_field, we, space.omega_e_rabi(1.0));
    let omega_eff = effective::omega_eff(first.omega_g_rabi, first.omega_e_rabi, wm, we)?;
    let half_pi = s.sim.duration.unwrap_or(PI / (2.0 * omega_eff.abs()));
    let branch = Branch::from_delta(first.delta);
    // a negative rate rotates about the opposite axis
    let flip = if omega_eff < 0.0 { PI } else { 0.0 };
    let phases_deg = s.scan.as_ref().expect("checked at parse").values();
    let cfg = integrator(s);

    let points = scan_points(s.sim.parallel, phases_deg.len(), |k| {
        let second = Pulse { phi_e: phases_deg[k].to_radians(), ..first };
        let (e1, g1) = first.drives(0.0, half_pi)?;
        let (e2, g2) = second.drives(half_pi, half_pi)?;
        let seq = PulseSequence::new(vec![e1, e2], vec![g1, g2], 2.0 * half_pi)?;
        let up = SpinMotionState::basis(space.n_max(), Spin::Up, 0)?;
        let ramsey = evolve(s.sim.frame, &up, &seq, &space, &cfg, &[])?;
        let u = effective::sequence_unitary(&seq, wm)?;
        let p_eff = u.matrix()[1][1].norm_sqr();
        let single = evolve(s.sim.frame, &up, &second.sequence(half_pi)?, &space, &cfg, &[])?;
        Ok((
            ramsey.final_state.spin_population(Spin::Up),
            p_eff,
            axis_angle_from_up(&single.final_state),
            ramsey.valid && single.valid,
            ramsey.max_top_population.max(single.max_top_population),
        ))
    })?;

    let phases: Vec<f64> = phases_deg.iter().map(|p| p.to_radians()).collect();
    let model_axis: Vec<f64> = phases.iter().map(|p| branch.axis_angle(*p) + flip).collect();
    let mut axis = unwrap(&points.iter().map(|p| p.2).collect::<Vec<_>>());
    // put the numeric branch on the model's sheet
    let shift = TAU * ((model_axis[0] - axis[0]) / TAU).round();
    axis.iter_mut().for_each(|a| *a += shift);

    let mut table = Table::new(
        "phase_scan.csv",
        &["phi_e_deg", "p_up_numeric", "p_up_effective", "axis_angle_numeric_rad", "axis_angle_effective_rad"],
    );
    let mut data = ScenarioData::new(Vec::new());
    let mut max_axis_dev: f64 = 0.0;
    for (k, (deg, p)) in phases_deg.iter().zip(&points).enumerate() {
        data.validity.record_point(k, p.3, p.4);
        max_axis_dev = max_axis_dev.max((axis[k] - model_axis[k]).abs());
        table.push(vec![*deg, p.0, p.1, axis[k], model_axis[k]]);
    }
    data.tables.push(table);
    let p_up: Vec<f64> = points.iter().map(|p| p.0).collect();
    if phases.len() >= 3 {
        if let Some(fringe) = data.fit(fit_fringe(&DataSeries::from_xy(&phases, &p_up)?)) {
            data.set("fringe_contrast", fringe.value("contrast")?);
            data.set("fringe_offset", fringe.value("offset")?);
            data.set("fringe_phase_rad", fringe.value("phase")?);
        }
    }
    if phases.len() >= 2 {
        let line = fit_linear(&DataSeries::from_xy(&phases, &axis)?, false)?;
        let slope = line.value("slope")?;
        let intercept = line.value("intercept")?;
        let residual = phases.iter().zip(&axis).map(|(p, a)| (a - intercept - slope * p).abs()).fold(0.0, f64::max);
        let expected = match branch {
            Branch::Plus => -1.0,
            Branch::Minus => 1.0,
        };
        data.set("axis_slope", slope);
        data.set("axis_slope_expected", expected);
        data.set("axis_slope_error", (slope - expected).abs());
        data.set("axis_offset_rad", intercept - model_axis[0]);
        data.set("max_axis_residual_rad", residual);
    }
    data.set("max_axis_deviation_rad", max_axis_dev);
    data.set("half_pi_pulse_us", half_pi * 1e6);
    data.set("omega_eff_hz_analytic", omega_eff * HZ);
    Ok(data)
}

pub(super) fn freq_compensation_scan(s: &Scenario) -> Result<ScenarioData, RunError> {
    let wm = s.modes.target_frequency();
    let space = mode_space(s, wm)?;
    let delta = s.gradient.delta.expect("checked at parse");
    let e_field = s.efield.amplitude.expect("checked at parse");
    let per_field = space.omega_e_rabi(1.0);
    let center = delta.abs();
    let reference = effective::omega_eff(s.gradient.omega_g_rabi, per_field * e_field, wm, center)?;
    let duration = s.sim.duration.unwrap_or(PI / reference.abs());
    let freqs: Vec<f64> = s.scan.as_ref().expect("checked at parse").values().iter().map(|f| TAU * 1e6 * f).collect();
    let cfg = integrator(s);

    let points = scan_points(s.sim.parallel, freqs.len(), |k| {
        let pulse = target_pulse(s, e_field, freqs[k], per_field);
        let w_eff = effective::omega_eff(pulse.omega_g_rabi, pulse.omega_e_rabi, wm, freqs[k])?;
        let up = SpinMotionState::basis(space.n_max(), Spin::Up, 0)?;
        let ev = evolve(s.sim.frame, &up, &pulse.sequence(duration)?, &space, &cfg, &[])?;
        Ok((
            ev.final_state.spin_population(Spin::Down),
            effective::rabi_lineshape(w_eff, freqs[k] - center, duration),
            ev.valid,
            ev.max_top_population,
        ))
    })?;

    let mut table = Table::new("freq_compensation_scan.csv", &["omega_e_mhz", "p_flip_numeric", "p_flip_effective"]);
    let mut data = ScenarioData::new(Vec::new());
    for (k, (w, p)) in freqs.iter().zip(&points).enumerate() {
        data.validity.record_point(k, p.2, p.3);
        table.push(vec![mhz(*w), p.0, p.1]);
    }
    data.tables.push(table);
    let p_flip: Vec<f64> = points.iter().map(|p| p.0).collect();
    if let Some(fit) = data.fit(fit_rabi_lineshape(&DataSeries::from_xy(&freqs, &p_flip)?, duration)) {
        let fitted_center = fit.value("center_frequency")?;
        data.set("center_mhz_fit", mhz(fitted_center));
        data.set("center_error_over_omega_eff", (fitted_center - center).abs() / reference.abs());
        data.set("omega_eff_hz_fit", fit.value("omega_eff")? * HZ);
    }
    data.set("center_mhz_expected", mhz(center));
    data.set("omega_eff_hz_analytic", reference.abs() * HZ);
    data.set("pulse_us", duration * 1e6);
    data.set("gradient_detuning_khz", khz(delta));
    Ok(data)
}
