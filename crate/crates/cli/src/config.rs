//! Scenario configuration files.
//!
//! Flat `key = value` sections. Values are in experimentalist units (MHz and
//! kHz meaning ω/2π, µs, ns, V/m, degrees) and are converted to rad/s, seconds
//! and radians here, once.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use ini::Ini;
use serde::Serialize;

/// Everything that can go wrong before computation starts.
#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed config: {0}")]
    Syntax(String),
    #[error("unknown section [{0}]")]
    UnknownSection(String),
    #[error("unknown key \"{key}\" in [{section}]")]
    UnknownKey { section: String, key: String },
    #[error("key \"{key}\" in [{section}] given more than once")]
    Duplicate { section: String, key: String },
    #[error("missing key \"{key}\" in [{section}] (expected {expected})")]
    Missing { section: String, key: String, expected: String },
    #[error("key \"{key}\" in [{section}] = \"{value}\": expected {expected}")]
    Invalid { section: String, key: String, value: String, expected: String },
    #[error("resonance: {0}")]
    Resonance(String),
}

type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    RabiFlop,
    AmpScan,
    DetuningScan,
    PhaseScan,
    FreqCompensationScan,
    LocalizationScan,
    FidelityVsNbar,
    PulseShapingSweep,
    CalibrateEfield,
    FrameEquivalenceCheck,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 10] = [
        ScenarioKind::RabiFlop,
        ScenarioKind::AmpScan,
        ScenarioKind::DetuningScan,
        ScenarioKind::PhaseScan,
        ScenarioKind::FreqCompensationScan,
        ScenarioKind::LocalizationScan,
        ScenarioKind::FidelityVsNbar,
        ScenarioKind::PulseShapingSweep,
        ScenarioKind::CalibrateEfield,
        ScenarioKind::FrameEquivalenceCheck,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::RabiFlop => "rabi-flop",
            ScenarioKind::AmpScan => "amp-scan",
            ScenarioKind::DetuningScan => "detuning-scan",
            ScenarioKind::PhaseScan => "phase-scan",
            ScenarioKind::FreqCompensationScan => "freq-compensation-scan",
            ScenarioKind::LocalizationScan => "localization-scan",
            ScenarioKind::FidelityVsNbar => "fidelity-vs-nbar",
            ScenarioKind::PulseShapingSweep => "pulse-shaping-sweep",
            ScenarioKind::CalibrateEfield => "calibrate-efield",
            ScenarioKind::FrameEquivalenceCheck => "frame-equivalence-check",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    /// Whether the scenario drives the target mode with a fixed `omega_e`.
    fn needs_efield_frequency(self) -> bool {
        !matches!(
            self,
            ScenarioKind::DetuningScan
                | ScenarioKind::CalibrateEfield
                | ScenarioKind::FrameEquivalenceCheck
                | ScenarioKind::PulseShapingSweep
                | ScenarioKind::FreqCompensationScan
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BranchSetting {
    Plus,
    Minus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameSetting {
    /// Lab-frame interaction picture, `H_g + H_e`.
    Full,
    /// Displaced frame: the driven coherent motion is factored out exactly.
    Displaced,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeSetting {
    Axial,
    Radial1,
    Radial2,
}

impl ModeSetting {
    pub fn index(self) -> usize {
        match self {
            ModeSetting::Axial => 0,
            ModeSetting::Radial1 => 1,
            ModeSetting::Radial2 => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Ion {
    pub mass_amu: f64,
    pub charge_e: f64,
}

/// Mode frequencies in rad/s; `None` where not configured.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Modes {
    pub axial: Option<f64>,
    pub radial1: Option<f64>,
    pub radial2: Option<f64>,
    pub radial_angle: f64,
    pub target: ModeSetting,
}

impl Modes {
    pub fn get(&self, mode: ModeSetting) -> Option<f64> {
        match mode {
            ModeSetting::Axial => self.axial,
            ModeSetting::Radial1 => self.radial1,
            ModeSetting::Radial2 => self.radial2,
        }
    }

    pub fn target_frequency(&self) -> f64 {
        self.get(self.target).expect("validated at parse time")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Gradient {
    pub omega_g_rabi: f64,
    pub branch: BranchSetting,
    /// Fixed `δ` overriding `±ω_e`, rad/s.
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Efield {
    /// V/m along the target mode.
    pub amplitude: Option<f64>,
    pub omega_e: Option<f64>,
    pub phi_e: f64,
    /// Field on radial 2 relative to radial 1.
    pub radial2_field_ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeSetting {
    Square,
    Sin2,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnvelopeSettings {
    pub shape: ShapeSetting,
    pub ramp: f64,
    pub plateau: f64,
    /// Detuning at which `ramp`/`plateau` apply when they are rescaled ∝ 1/Δ, rad/s.
    pub ramp_reference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sim {
    pub n_fock: usize,
    pub dt: f64,
    pub nbar: f64,
    pub duration: Option<f64>,
    pub samples: usize,
    pub method: String,
    pub frame: FrameSetting,
    pub seed: u64,
    pub parallel: bool,
    pub norm_check_every: usize,
    /// Random parameter sets drawn by the frame-equivalence check.
    pub parameter_sets: usize,
}

/// Scan values in the scenario's scan unit (see README), either an explicit
/// list or an evenly spaced range.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scan {
    values: Vec<f64>,
}

impl Scan {
    pub fn linear(start: f64, stop: f64, points: usize) -> Self {
        let values = if points == 1 {
            vec![start]
        } else {
            (0..points).map(|k| start + (stop - start) * k as f64 / (points - 1) as f64).collect()
        };
        Self { values }
    }

    pub fn list(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn values(&self) -> Vec<f64> {
        self.values.clone()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ElectrodeSpec {
    pub name: String,
    pub x1: f64,
    pub x2: f64,
    pub y1: f64,
    pub y2: f64,
    pub voltage: f64,
    pub phase: f64,
}

/// Lengths in meters.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trap {
    pub ion_height: f64,
    pub n_electrodes: usize,
    pub pitch: f64,
    pub y1: f64,
    pub y2: f64,
    pub driven: Option<usize>,
    pub drive_voltage: f64,
    pub pickup_neighbor: f64,
    pub x_ref: f64,
    pub x_far: f64,
    pub electrodes: Vec<ElectrodeSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Calibration {
    pub bsb_rabi: f64,
    pub bsb_points: usize,
    pub bsb_max: f64,
    /// Projective measurements per synthetic point; 0 gives noiseless data.
    pub shots: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub output_dir: PathBuf,
    /// Every key as written, for the manifest.
    pub parameters: BTreeMap<String, BTreeMap<String, String>>,
    pub ion: Ion,
    pub modes: Modes,
    pub gradient: Gradient,
    pub efield: Efield,
    pub envelope: EnvelopeSettings,
    pub sim: Sim,
    pub scan: Option<Scan>,
    pub trap: Trap,
    pub calibration: Calibration,
}

const SECTIONS: &[(&str, &[&str])] = &[
    ("scenario", &["name", "output_dir"]),
    ("ion", &["mass_amu", "charge_e"]),
    ("modes", &["axial_mhz", "radial1_mhz", "radial2_mhz", "radial_angle_deg", "target"]),
    ("gradient", &["omega_g_khz", "branch", "delta_mhz"]),
    (
        "efield",
        &[
            "amplitude_v_per_m",
            "awg_amplitude",
            "volts_per_unit",
            "omega_e_rabi_mhz",
            "omega_e_mhz",
            "phi_e_deg",
            "radial2_field_ratio",
        ],
    ),
    ("envelope", &["shape", "ramp_us", "plateau_us", "ramp_reference_khz"]),
    (
        "sim",
        &[
            "n_fock",
            "dt_ns",
            "nbar",
            "duration_us",
            "samples",
            "method",
            "frame",
            "seed",
            "parallel",
            "norm_check_every",
            "parameter_sets",
        ],
    ),
    ("scan", &["start", "stop", "points", "values"]),
    (
        "trap",
        &[
            "ion_height_um",
            "n_electrodes",
            "pitch_um",
            "y1_um",
            "y2_um",
            "driven",
            "drive_voltage_v",
            "pickup_neighbor",
            "x_ref_um",
            "x_far_um",
        ],
    ),
    ("calibration", &["bsb_rabi_khz", "bsb_points", "bsb_max_us", "shots"]),
];
const ELECTRODE_KEYS: &[&str] = &["x1_um", "x2_um", "y1_um", "y2_um", "voltage_v", "phase_deg"];

/// Section/key lookup with unit-aware typed getters.
struct Raw {
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl Raw {
    fn str(&self, section: &str, key: &str) -> Option<&str> {
        self.sections.get(section).and_then(|s| s.get(key)).map(|s| s.as_str())
    }

    fn parse<T: std::str::FromStr>(&self, section: &str, key: &str, expected: &str) -> Result<Option<T>> {
        match self.str(section, key) {
            None => Ok(None),
            Some(v) => v.trim().parse::<T>().map(Some).map_err(|_| ConfigError::Invalid {
                section: section.into(),
                key: key.into(),
                value: v.into(),
                expected: expected.into(),
            }),
        }
    }

    fn real(&self, section: &str, key: &str, unit: &str) -> Result<Option<f64>> {
        let v: Option<f64> = self.parse(section, key, &format!("a number in {unit}"))?;
        if let Some(x) = v {
            if !x.is_finite() {
                return Err(self.invalid(section, key, &format!("a finite number in {unit}")));
            }
        }
        Ok(v)
    }

    fn real_or(&self, section: &str, key: &str, unit: &str, default: f64) -> Result<f64> {
        Ok(self.real(section, key, unit)?.unwrap_or(default))
    }

    fn required(&self, section: &str, key: &str, unit: &str) -> Result<f64> {
        self.real(section, key, unit)?.ok_or_else(|| ConfigError::Missing {
            section: section.into(),
            key: key.into(),
            expected: unit.into(),
        })
    }

    fn count(&self, section: &str, key: &str, default: usize) -> Result<usize> {
        Ok(self.parse(section, key, "a non-negative integer")?.unwrap_or(default))
    }

    fn invalid(&self, section: &str, key: &str, expected: &str) -> ConfigError {
        ConfigError::Invalid {
            section: section.into(),
            key: key.into(),
            value: self.str(section, key).unwrap_or("").into(),
            expected: expected.into(),
        }
    }

    fn positive(&self, section: &str, key: &str, value: f64, unit: &str) -> Result<f64> {
        if value > 0.0 {
            Ok(value)
        } else {
            Err(self.invalid(section, key, &format!("a positive number in {unit}")))
        }
    }
}

pub fn parse_config(path: &Path) -> Result<Scenario> {
    let text =
        std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<Scenario> {
    let ini = Ini::load_from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
    let mut sections: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
    for (name, props) in ini.iter() {
        let name = match name {
            Some(n) => n.trim().to_string(),
            None if props.is_empty() => continue,
            None => {
                let key = props.iter().next().map(|(k, _)| k.to_string()).unwrap_or_default();
                return Err(ConfigError::UnknownKey { section: "(top level)".into(), key });
            }
        };
        let allowed: &[&str] = if let Some(label) = name.strip_prefix("electrode.") {
            if label.is_empty() {
                return Err(ConfigError::UnknownSection(name));
            }
            ELECTRODE_KEYS
        } else {
            SECTIONS
                .iter()
                .find(|(s, _)| *s == name)
                .map(|(_, keys)| *keys)
                .ok_or_else(|| ConfigError::UnknownSection(name.clone()))?
        };
        let entry = sections.entry(name.clone()).or_default();
        for (key, value) in props.iter() {
            let key = key.trim();
            if !allowed.contains(&key) {
                return Err(ConfigError::UnknownKey { section: name.clone(), key: key.into() });
            }
            if entry.insert(key.to_string(), value.trim().to_string()).is_some() {
                return Err(ConfigError::Duplicate { section: name.clone(), key: key.into() });
            }
        }
    }
    build(Raw { sections })
}

fn build(raw: Raw) -> Result<Scenario> {
    let name = raw.str("scenario", "name").ok_or_else(|| ConfigError::Missing {
        section: "scenario".into(),
        key: "name".into(),
        expected: "a scenario name".into(),
    })?;
    let kind = ScenarioKind::parse(name).ok_or_else(|| ConfigError::Invalid {
        section: "scenario".into(),
        key: "name".into(),
        value: name.into(),
        expected: format!("one of {}", ScenarioKind::ALL.iter().map(|k| k.name()).collect::<Vec<_>>().join(", ")),
    })?;
    let output_dir = PathBuf::from(raw.str("scenario", "output_dir").unwrap_or("out"));

    let ion = Ion {
        mass_amu: raw.positive("ion", "mass_amu", raw.real_or("ion", "mass_amu", "amu", 40.0)?, "amu")?,
        charge_e: raw.positive(
            "ion",
            "charge_e",
            raw.real_or("ion", "charge_e", "elementary charges", 1.0)?,
            "elementary charges",
        )?,
    };

    let mhz = |section: &str, key: &str| -> Result<Option<f64>> {
        match raw.real(section, key, "MHz")? {
            Some(v) => Ok(Some(TAU * 1e6 * raw.positive(section, key, v, "MHz")?)),
            None => Ok(None),
        }
    };
    let target = match raw.str("modes", "target").unwrap_or("radial1") {
        "axial" => ModeSetting::Axial,
        "radial1" => ModeSetting::Radial1,
        "radial2" => ModeSetting::Radial2,
        _ => return Err(raw.invalid("modes", "target", "axial, radial1 or radial2")),
    };
    let modes = Modes {
        axial: mhz("modes", "axial_mhz")?,
        radial1: mhz("modes", "radial1_mhz")?,
        radial2: mhz("modes", "radial2_mhz")?,
        radial_angle: raw.real_or("modes", "radial_angle_deg", "degrees", 45.0)?.to_radians(),
        target,
    };
    let target_key = match target {
        ModeSetting::Axial => "axial_mhz",
        ModeSetting::Radial1 => "radial1_mhz",
        ModeSetting::Radial2 => "radial2_mhz",
    };
    if modes.get(target).is_none() {
        return Err(ConfigError::Missing {
            section: "modes".into(),
            key: target_key.into(),
            expected: "MHz (target mode frequency)".into(),
        });
    }

    let branch = match raw.str("gradient", "branch").unwrap_or("plus") {
        "plus" => BranchSetting::Plus,
        "minus" => BranchSetting::Minus,
        _ => return Err(raw.invalid("gradient", "branch", "plus or minus")),
    };
    let omega_g_khz = raw.real_or("gradient", "omega_g_khz", "kHz", 0.0)?;
    if omega_g_khz < 0.0 {
        return Err(raw.invalid("gradient", "omega_g_khz", "a number >= 0 in kHz"));
    }
    let gradient = Gradient {
        omega_g_rabi: TAU * 1e3 * omega_g_khz,
        branch,
        delta: raw.real("gradient", "delta_mhz", "MHz")?.map(|v| TAU * 1e6 * v),
    };

    let direct = raw.real("efield", "amplitude_v_per_m", "V/m")?;
    let awg = raw.real("efield", "awg_amplitude", "AWG units")?;
    let per_unit = raw.real("efield", "volts_per_unit", "V/m per AWG unit")?;
    let rabi = raw.real("efield", "omega_e_rabi_mhz", "MHz")?;
    if [direct.is_some(), awg.is_some(), rabi.is_some()].iter().filter(|x| **x).count() > 1 {
        return Err(raw.invalid(
            "efield",
            "amplitude_v_per_m",
            "only one of amplitude_v_per_m, awg_amplitude, omega_e_rabi_mhz",
        ));
    }
    if per_unit.is_some() && awg.is_none() {
        return Err(raw.invalid("efield", "volts_per_unit", "only together with awg_amplitude"));
    }
    let amplitude = if let Some(a) = awg {
        let scale = per_unit.ok_or_else(|| ConfigError::Missing {
            section: "efield".into(),
            key: "volts_per_unit".into(),
            expected: "V/m per AWG unit".into(),
        })?;
        Some(a * scale)
    } else if let Some(r) = rabi {
        // field that gives this coupling on the target mode
        let space = fmsb::FockSpace::new(
            2,
            modes.target_frequency(),
            ion.mass_amu * fmsb::constants::amu::<f64>(),
            ion.charge_e * fmsb::constants::elementary_charge::<f64>(),
        )
        .map_err(|_| raw.invalid("efield", "omega_e_rabi_mhz", "a coupling in MHz for a valid ion and mode"))?;
        Some(space.field_for_omega_e(TAU * 1e6 * r))
    } else {
        direct
    };
    if matches!(amplitude, Some(a) if a < 0.0) {
        return Err(raw.invalid("efield", "amplitude_v_per_m", "a field amplitude >= 0 in V/m"));
    }
    let efield = Efield {
        amplitude,
        omega_e: mhz("efield", "omega_e_mhz")?,
        phi_e: raw.real_or("efield", "phi_e_deg", "degrees", 0.0)?.to_radians(),
        radial2_field_ratio: raw.real_or("efield", "radial2_field_ratio", "dimensionless", 175.0 / 614.0)?,
    };

    let shape = match raw.str("envelope", "shape").unwrap_or("square") {
        "square" => ShapeSetting::Square,
        "sin2" | "sin2_ramp" => ShapeSetting::Sin2,
        _ => return Err(raw.invalid("envelope", "shape", "square or sin2")),
    };
    let ramp = raw.real_or("envelope", "ramp_us", "µs", 0.0)? * 1e-6;
    if shape == ShapeSetting::Sin2 && (ramp.is_nan() || ramp <= 0.0) {
        return Err(ConfigError::Missing {
            section: "envelope".into(),
            key: "ramp_us".into(),
            expected: "µs (positive, required for sin2)".into(),
        });
    }
    let plateau = raw.real_or("envelope", "plateau_us", "µs", 0.0)? * 1e-6;
    if plateau < 0.0 {
        return Err(raw.invalid("envelope", "plateau_us", "a duration >= 0 in µs"));
    }
    let envelope = EnvelopeSettings {
        shape,
        ramp,
        plateau,
        ramp_reference: TAU * 1e3 * raw.real_or("envelope", "ramp_reference_khz", "kHz", 100.0)?,
    };

    let dt_ns = raw.real_or("sim", "dt_ns", "ns", 1.0)?;
    let n_fock = raw.count("sim", "n_fock", 60)?;
    if n_fock < 2 {
        return Err(raw.invalid("sim", "n_fock", "an integer >= 2"));
    }
    let nbar = raw.real_or("sim", "nbar", "quanta", 0.0)?;
    if nbar < 0.0 {
        return Err(raw.invalid("sim", "nbar", "a mean occupation >= 0"));
    }
    let method = raw.str("sim", "method").unwrap_or("magnus4").to_string();
    if !["magnus4", "midpoint_exponential", "rk4_fixed"].contains(&method.as_str()) {
        return Err(raw.invalid("sim", "method", "magnus4, midpoint_exponential or rk4_fixed"));
    }
    let frame = match raw.str("sim", "frame").unwrap_or("displaced") {
        "full" => FrameSetting::Full,
        "displaced" => FrameSetting::Displaced,
        _ => return Err(raw.invalid("sim", "frame", "full or displaced")),
    };
    let parallel = match raw.str("sim", "parallel").unwrap_or("false") {
        "true" => true,
        "false" => false,
        _ => return Err(raw.invalid("sim", "parallel", "true or false")),
    };
    let sim = Sim {
        n_fock,
        dt: raw.positive("sim", "dt_ns", dt_ns, "ns")? * 1e-9,
        nbar,
        duration: match raw.real("sim", "duration_us", "µs")? {
            Some(v) => Some(raw.positive("sim", "duration_us", v, "µs")? * 1e-6),
            None => None,
        },
        samples: raw.count("sim", "samples", 101)?,
        method,
        frame,
        seed: raw.parse("sim", "seed", "a non-negative integer")?.unwrap_or(1),
        parallel,
        norm_check_every: raw.count("sim", "norm_check_every", 1000)?.max(1),
        parameter_sets: raw.count("sim", "parameter_sets", 20)?,
    };
    if sim.samples < 2 {
        return Err(raw.invalid("sim", "samples", "an integer >= 2"));
    }

    let scan = if !raw.sections.contains_key("scan") {
        None
    } else if let Some(list) = raw.str("scan", "values") {
        if ["start", "stop", "points"].iter().any(|k| raw.str("scan", k).is_some()) {
            return Err(raw.invalid("scan", "values", "either values or start/stop/points, not both"));
        }
        let values = list
            .split(',')
            .map(|v| v.trim().parse::<f64>().ok().filter(|x| x.is_finite()))
            .collect::<Option<Vec<f64>>>()
            .filter(|v| !v.is_empty())
            .ok_or_else(|| raw.invalid("scan", "values", "a comma-separated list of numbers"))?;
        Some(Scan::list(values))
    } else {
        let points = raw.count("scan", "points", 0)?;
        if points == 0 {
            return Err(ConfigError::Missing {
                section: "scan".into(),
                key: "points".into(),
                expected: "a positive integer".into(),
            });
        }
        Some(Scan::linear(
            raw.required("scan", "start", "scan units")?,
            raw.required("scan", "stop", "scan units")?,
            points,
        ))
    };

    let um = 1e-6;
    let mut electrodes = Vec::new();
    for (section, _) in raw.sections.iter().filter(|(s, _)| s.starts_with("electrode.")) {
        let name = section["electrode.".len()..].to_string();
        let e = ElectrodeSpec {
            name,
            x1: raw.required(section, "x1_um", "µm")? * um,
            x2: raw.required(section, "x2_um", "µm")? * um,
            y1: raw.required(section, "y1_um", "µm")? * um,
            y2: raw.required(section, "y2_um", "µm")? * um,
            voltage: raw.real_or(section, "voltage_v", "V", 0.0)?,
            phase: raw.real_or(section, "phase_deg", "degrees", 0.0)?.to_radians(),
        };
        if !(e.x1 < e.x2 && e.y1 < e.y2) {
            return Err(raw.invalid(section, "x2_um", "x1_um < x2_um and y1_um < y2_um"));
        }
        electrodes.push(e);
    }
    let pickup = raw.real_or("trap", "pickup_neighbor", "fraction", 0.1)?;
    if !(0.0..1.0).contains(&pickup) {
        return Err(raw.invalid("trap", "pickup_neighbor", "a fraction in [0, 1)"));
    }
    let trap = Trap {
        ion_height: raw.positive("trap", "ion_height_um", raw.real_or("trap", "ion_height_um", "µm", 80.0)?, "µm")?
            * um,
        n_electrodes: raw.count("trap", "n_electrodes", 11)?,
        pitch: raw.positive("trap", "pitch_um", raw.real_or("trap", "pitch_um", "µm", 100.0)?, "µm")? * um,
        y1: raw.real_or("trap", "y1_um", "µm", 40.0)? * um,
        y2: raw.real_or("trap", "y2_um", "µm", 240.0)? * um,
        driven: raw.parse("trap", "driven", "an electrode index")?,
        drive_voltage: raw.real_or("trap", "drive_voltage_v", "V", 1.0)?,
        pickup_neighbor: pickup,
        x_ref: raw.real_or("trap", "x_ref_um", "µm", 0.0)? * um,
        x_far: raw.real_or("trap", "x_far_um", "µm", 450.0)? * um,
        electrodes,
    };
    let calibration = Calibration {
        bsb_rabi: TAU
            * 1e3
            * raw.positive(
                "calibration",
                "bsb_rabi_khz",
                raw.real_or("calibration", "bsb_rabi_khz", "kHz", 20.0)?,
                "kHz",
            )?,
        bsb_points: raw.count("calibration", "bsb_points", 60)?,
        bsb_max: raw.positive(
            "calibration",
            "bsb_max_us",
            raw.real_or("calibration", "bsb_max_us", "µs", 150.0)?,
            "µs",
        )? * 1e-6,
        shots: raw.count("calibration", "shots", 0)?,
    };

    let scenario = Scenario {
        kind,
        output_dir,
        parameters: raw.sections,
        ion,
        modes,
        gradient,
        efield,
        envelope,
        sim,
        scan,
        trap,
        calibration,
    };
    check_required(&scenario)?;
    Ok(scenario)
}

fn missing(section: &str, key: &str, expected: &str) -> ConfigError {
    ConfigError::Missing { section: section.into(), key: key.into(), expected: expected.into() }
}

/// Scenario-specific required keys and the resonance precondition.
fn check_required(s: &Scenario) -> Result<()> {
    use ScenarioKind::*;
    let k = s.kind;
    if k.needs_efield_frequency() {
        let we = s.efield.omega_e.ok_or_else(|| missing("efield", "omega_e_mhz", "MHz"))?;
        let wm = s.modes.target_frequency();
        if we == wm {
            return Err(ConfigError::Resonance(format!(
                "omega_e_mhz = {} equals the target mode frequency; the effective model is singular there",
                we / TAU / 1e6
            )));
        }
    }
    if matches!(
        k,
        RabiFlop | AmpScan | PhaseScan | FreqCompensationScan | FidelityVsNbar | LocalizationScan | DetuningScan
    ) && s.gradient.omega_g_rabi == 0.0
    {
        return Err(missing("gradient", "omega_g_khz", "kHz (positive)"));
    }
    if matches!(k, RabiFlop | PhaseScan | FreqCompensationScan | FidelityVsNbar | CalibrateEfield | DetuningScan)
        && s.efield.amplitude.is_none()
    {
        return Err(missing("efield", "amplitude_v_per_m", "V/m"));
    }
    if k == RabiFlop && s.sim.duration.is_none() {
        return Err(missing("sim", "duration_us", "µs"));
    }
    if k == FreqCompensationScan && s.gradient.delta.is_none() {
        return Err(missing("gradient", "delta_mhz", "MHz (fixed gradient detuning from the qubit)"));
    }
    if k == DetuningScan && s.modes.radial2.is_none() {
        return Err(missing("modes", "radial2_mhz", "MHz"));
    }
    if k == PulseShapingSweep {
        if s.efield.amplitude.is_none() {
            return Err(missing("efield", "amplitude_v_per_m", "V/m"));
        }
        if s.envelope.shape != ShapeSetting::Sin2 {
            return Err(ConfigError::Invalid {
                section: "envelope".into(),
                key: "shape".into(),
                value: "square".into(),
                expected: "sin2 for the pulse-shaping sweep".into(),
            });
        }
    }
    let needs_scan = !matches!(k, RabiFlop | FrameEquivalenceCheck);
    if needs_scan && s.scan.is_none() {
        return Err(missing("scan", "points", "a [scan] section with start, stop, points or values"));
    }
    if k == CalibrateEfield && s.calibration.bsb_points < 4 {
        return Err(ConfigError::Invalid {
            section: "calibration".into(),
            key: "bsb_points".into(),
            value: s.calibration.bsb_points.to_string(),
            expected: "an integer >= 4".into(),
        });
    }
    Ok(())
}
