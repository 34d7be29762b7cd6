use fmsb::trapmodel::{omega_eff_profile, suppression_ratio, ProfileTarget};
use fmsb::{ElectrodeDrive, ElectrodePatch, TrapLayout};

use super::HZ;
use crate::config::Scenario;
use crate::output::Table;
use crate::{RunError, ScenarioData};

fn layout_and_drive(s: &Scenario) -> fmsb::Result<(TrapLayout, ElectrodeDrive)> {
    let t = &s.trap;
    let target = s.modes.target_frequency();
    // only the target mode enters the profile; unset modes just need a valid value
    let freqs = [s.modes.axial.unwrap_or(target), s.modes.radial1.unwrap_or(target), s.modes.radial2.unwrap_or(target)];
    if t.electrodes.is_empty() {
        let layout = TrapLayout::linear_surface_trap(
            t.n_electrodes,
            t.pitch,
            (t.y1, t.y2),
            t.ion_height,
            freqs,
            s.modes.radial_angle,
        )?;
        let driven = t.driven.unwrap_or(t.n_electrodes / 2);
        let drive = ElectrodeDrive::single(t.n_electrodes, driven, t.drive_voltage)?;
        return Ok((layout, drive));
    }
    let mut layout =
        TrapLayout::linear_surface_trap(1, t.pitch, (t.y1, t.y2), t.ion_height, freqs, s.modes.radial_angle)?;
    layout.patches = t
        .electrodes
        .iter()
        .map(|e| ElectrodePatch::new(e.x1, e.x2, e.y1, e.y2, e.name.clone()))
        .collect::<fmsb::Result<_>>()?;
    layout.validate()?;
    let drive = ElectrodeDrive::direct(t.electrodes.iter().map(|e| (e.voltage, e.phase)).collect());
    Ok((layout, drive))
}

pub(super) fn localization_scan(s: &Scenario) -> Result<ScenarioData, RunError> {
    let (layout, drive) = layout_and_drive(s)?;
    let with_pickup = drive.clone().with_neighbour_pickup(s.trap.pickup_neighbor)?;
    let target = ProfileTarget {
        mode: s.modes.target.index(),
        omega_g_rabi: s.gradient.omega_g_rabi,
        mass: s.ion.mass_amu * fmsb::constants::amu::<f64>(),
        charge: s.ion.charge_e * fmsb::constants::elementary_charge::<f64>(),
    };
    let we = s.efield.omega_e.expect("checked at parse");
    let xs: Vec<f64> = s.scan.as_ref().expect("checked at parse").values().iter().map(|x| x * 1e-6).collect();
    let model = omega_eff_profile(&layout, &drive, &target, we, &xs)?;
    let picked = omega_eff_profile(&layout, &with_pickup, &target, we, &xs)?;

    let mut table = Table::new("localization_scan.csv", &["x_um", "omega_eff_hz_model", "omega_eff_hz_with_pickup"]);
    for ((x, m), (_, p)) in model.iter().zip(&picked) {
        table.push(vec![x * 1e6, m * HZ, p * HZ]);
    }
    let mut data = ScenarioData::new(vec![table]);
    let refs = [s.trap.x_ref, s.trap.x_far];
    for (name, d) in [("model", &drive), ("with_pickup", &with_pickup)] {
        let profile = omega_eff_profile(&layout, d, &target, we, &refs)?;
        data.set(&format!("suppression_ratio_{name}"), suppression_ratio(&profile, refs[0], refs[1])?);
        data.set(&format!("omega_eff_hz_at_ref_{name}"), profile[0].1 * HZ);
    }
    if let Some((x, _)) = model.iter().max_by(|a, b| a.1.total_cmp(&b.1)) {
        data.set("peak_x_um_model", x * 1e6);
    }
    data.set("x_ref_um", s.trap.x_ref * 1e6);
    data.set("x_far_um", s.trap.x_far * 1e6);
    Ok(data)
}
