mod motion;
mod rotation;
mod trap;

use crate::config::{Scenario, ScenarioKind};
use crate::{RunError, ScenarioData};

pub(crate) fn compute(s: &Scenario) -> Result<ScenarioData, RunError> {
    match s.kind {
        ScenarioKind::RabiFlop => rotation::rabi_flop(s),
        ScenarioKind::AmpScan => rotation::amp_scan(s),
        ScenarioKind::DetuningScan => rotation::detuning_scan(s),
        ScenarioKind::PhaseScan => rotation::phase_scan(s),
        ScenarioKind::FreqCompensationScan => rotation::freq_compensation_scan(s),
        ScenarioKind::LocalizationScan => trap::localization_scan(s),
        ScenarioKind::FidelityVsNbar => motion::fidelity_vs_nbar(s),
        ScenarioKind::PulseShapingSweep => motion::pulse_shaping_sweep(s),
        ScenarioKind::CalibrateEfield => motion::calibrate_efield(s),
        ScenarioKind::FrameEquivalenceCheck => motion::frame_equivalence_check(s),
    }
}

/// Tail mass left out of thermal averages.
const THERMAL_TAIL: f64 = 1e-6;

const HZ: f64 = 1.0 / std::f64::consts::TAU;

fn mhz(omega: f64) -> f64 {
    omega * HZ * 1e-6
}

fn khz(omega: f64) -> f64 {
    omega * HZ * 1e-3
}

/// `max |y − slope·x| / max |y|` for a fit through the origin.
fn relative_linearity_residual(xs: &[f64], ys: &[f64], slope: f64) -> f64 {
    let worst = xs.iter().zip(ys).map(|(x, y)| (y - slope * x).abs()).fold(0.0, f64::max);
    let scale = ys.iter().map(|y| y.abs()).fold(0.0, f64::max);
    worst / scale
}
