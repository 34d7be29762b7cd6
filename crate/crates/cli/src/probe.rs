//! Shared pieces for scenarios that drive a spin rotation and measure it.

use std::f64::consts::TAU;

use fmsb::dynamics::{self, IntegratorMethod};
use fmsb::statespace::Spin;
use fmsb::{
    DataSeries, ElectricDrive, Envelope, Evolution, FockSpace, GradientDrive, IntegratorConfig, PulseSequence,
    SpinMotionState,
};

use crate::config::{BranchSetting, FrameSetting, Scenario};

pub fn mode_space(s: &Scenario, omega_m: f64) -> fmsb::Result<FockSpace> {
    FockSpace::new(
        s.sim.n_fock,
        omega_m,
        s.ion.mass_amu * fmsb::constants::amu::<f64>(),
        s.ion.charge_e * fmsb::constants::elementary_charge::<f64>(),
    )
}

pub fn integrator(s: &Scenario) -> IntegratorConfig {
    let method = match s.sim.method.as_str() {
        "rk4_fixed" => IntegratorMethod::Rk4Fixed,
        "midpoint_exponential" => IntegratorMethod::MidpointExponential,
        _ => IntegratorMethod::Magnus4,
    };
    let mut cfg = IntegratorConfig::new(s.sim.dt).with_method(method);
    cfg.norm_check_every = s.sim.norm_check_every;
    cfg
}

pub fn evolve(
    frame: FrameSetting,
    initial: &SpinMotionState,
    seq: &PulseSequence,
    space: &FockSpace,
    cfg: &IntegratorConfig,
    samples: &[f64],
) -> fmsb::Result<Evolution> {
    match frame {
        FrameSetting::Full => dynamics::evolve(initial, seq, space, cfg, samples),
        FrameSetting::Displaced => dynamics::evolve_transformed(initial, seq, space, cfg, samples),
    }
}

/// Gradient detuning: the configured fixed value, or `±ω_e` by branch.
pub fn gradient_delta(s: &Scenario, omega_e: f64) -> f64 {
    s.gradient.delta.unwrap_or(match s.gradient.branch {
        BranchSetting::Plus => omega_e,
        BranchSetting::Minus => -omega_e,
    })
}

/// Square electric drive and gradient, both on over `[start, start + duration)`.
#[derive(Debug, Clone, Copy)]
pub struct Pulse {
    pub omega_g_rabi: f64,
    pub delta: f64,
    pub omega_e_rabi: f64,
    pub omega_e: f64,
    pub phi_e: f64,
}

impl Pulse {
    pub fn drives(&self, start: f64, duration: f64) -> fmsb::Result<(ElectricDrive, GradientDrive)> {
        Ok((
            ElectricDrive::new(self.omega_e_rabi, self.omega_e, self.phi_e, Envelope::square(start, duration))?,
            GradientDrive::new(self.omega_g_rabi, self.delta, start, start + duration)?,
        ))
    }

    pub fn sequence(&self, duration: f64) -> fmsb::Result<PulseSequence> {
        let (e, g) = self.drives(0.0, duration)?;
        PulseSequence::new(vec![e], vec![g], duration)
    }
}

/// Rotation angle from `|↑⟩` about the equator axis `axis_angle`, recovered
/// from the reduced spin state on the full circle.
pub fn rotation_angle(state: &SpinMotionState, axis_angle: f64) -> f64 {
    let rho = state.spin_density_matrix();
    // for R(θ, a)|↑⟩: ρ_↓↑ = −(i/2) sin θ e^{ia}, ρ_↑↑ − ρ_↓↓ = cos θ
    let turned = rho[0][1] * fmsb::C64::new(axis_angle.sin(), axis_angle.cos());
    (2.0 * turned.re).atan2(rho[1][1].re - rho[0][0].re)
}

/// Equator angle of the axis that took `|↑⟩` to the current state.
pub fn axis_angle_from_up(state: &SpinMotionState) -> f64 {
    let v = state.spin_density_matrix()[0][1] * fmsb::C64::new(0.0, 1.0);
    v.im.atan2(v.re)
}

pub fn unwrap(angles: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(angles.len());
    let mut offset = 0.0;
    for (k, &a) in angles.iter().enumerate() {
        if k > 0 {
            let prev = angles[k - 1];
            let jump = a - prev;
            offset -= TAU * (jump / TAU).round();
        }
        out.push(a + offset);
    }
    out
}

pub fn sample_times(duration: f64, samples: usize) -> Vec<f64> {
    (0..samples).map(|k| (duration * k as f64 / (samples - 1) as f64).min(duration)).collect()
}

#[derive(Debug, Clone, Copy)]
pub struct RateProbe {
    /// Signed rotation rate about the effective-model axis, rad/s.
    pub omega: f64,
    pub valid: bool,
    pub max_top_population: f64,
}

/// Measures the rotation rate of `pulse` from `|↑, 0⟩` as the slope of the
/// unwrapped rotation angle over `duration`.
pub fn rotation_rate(
    s: &Scenario,
    space: &FockSpace,
    pulse: &Pulse,
    axis_angle: f64,
    duration: f64,
) -> fmsb::Result<RateProbe> {
    let seq = pulse.sequence(duration)?;
    let times = sample_times(duration, s.sim.samples);
    let initial = SpinMotionState::basis(space.n_max(), Spin::Up, 0)?;
    let ev = evolve(s.sim.frame, &initial, &seq, space, &integrator(s), &times)?;
    let angles: Vec<f64> = ev.samples.iter().map(|(_, st)| rotation_angle(st, axis_angle)).collect();
    let fit = fmsb::analysis::fit_linear(&DataSeries::from_xy(&times, &unwrap(&angles))?, false)?;
    Ok(RateProbe { omega: fit.value("slope")?, valid: ev.valid, max_top_population: ev.max_top_population })
}

/// Default probe window: 20 beat periods of the drive against the mode.
pub fn probe_duration(s: &Scenario, omega_e: f64, omega_m: f64) -> f64 {
    s.sim.duration.unwrap_or(20.0 * TAU / (omega_e - omega_m).abs())
}
