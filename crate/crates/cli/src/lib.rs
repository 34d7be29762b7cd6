//! Scenario runner for the `fmsb` toolkit: one configuration file in, CSV
//! datasets and a `manifest.json` out.

pub mod config;
pub mod output;
mod probe;
mod scenarios;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;

pub use config::{parse_config, parse_config_str, ConfigError, Scenario, ScenarioKind};
use output::{Constants, IntegratorSettings, RunManifest, Table, Validity};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_VALIDITY: i32 = 3;
pub const EXIT_SINGULARITY: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("{}{source}", point.map(|p| format!("scan point {p}: ")).unwrap_or_default())]
    Core { point: Option<usize>, source: fmsb::Error },
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("writing output: {0}")]
    Io(#[from] std::io::Error),
}

impl From<fmsb::Error> for RunError {
    fn from(source: fmsb::Error) -> Self {
        RunError::Core { point: None, source }
    }
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Core { source, .. } => match source {
                fmsb::Error::Singularity(_) => EXIT_SINGULARITY,
                fmsb::Error::Domain(_) => EXIT_CONFIG,
                _ => EXIT_VALIDITY,
            },
            RunError::Config(ConfigError::Resonance(_)) => EXIT_SINGULARITY,
            RunError::Config(ConfigError::Io { .. }) => EXIT_IO,
            RunError::Config(_) => EXIT_CONFIG,
            RunError::Io(_) => EXIT_IO,
        }
    }

    fn point(&self) -> Option<usize> {
        match self {
            RunError::Core { point, .. } => *point,
            _ => None,
        }
    }
}

/// What a scenario computed, before anything is written.
#[derive(Debug, Clone)]
pub struct ScenarioData {
    pub tables: Vec<Table>,
    pub summary: BTreeMap<String, f64>,
    pub validity: Validity,
}

impl ScenarioData {
    fn new(tables: Vec<Table>) -> Self {
        Self { tables, summary: BTreeMap::new(), validity: Validity::clean() }
    }

    fn set(&mut self, key: &str, value: f64) {
        self.summary.insert(key.to_string(), value);
    }

    /// A failed fit keeps the data and marks the run invalid instead of aborting it.
    fn fit(&mut self, result: fmsb::Result<fmsb::FitResult>) -> Option<fmsb::FitResult> {
        match result {
            Ok(fit) => {
                self.validity.record_fit(fit.converged);
                Some(fit)
            }
            Err(e) => {
                self.validity.record_fit_error(e.to_string());
                None
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub exit_code: i32,
    pub status: String,
    pub error: Option<String>,
    pub failed_point: Option<usize>,
    /// Empty when the run failed before producing data.
    pub tables: Vec<Table>,
    pub summary: BTreeMap<String, f64>,
    pub validity: Validity,
    pub outputs: Vec<PathBuf>,
    pub manifest: Option<PathBuf>,
}

impl RunOutcome {
    pub fn table(&self, file: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.file == file)
    }

    pub fn value(&self, key: &str) -> Option<f64> {
        self.summary.get(key).copied()
    }
}

/// Computes every scan point (in parallel when asked), returning results in
/// index order. The first failing index is reported.
pub(crate) fn scan_points<R, F>(parallel: bool, n: usize, f: F) -> Result<Vec<R>, RunError>
where
    R: Send,
    F: Fn(usize) -> fmsb::Result<R> + Sync,
{
    let results: Vec<fmsb::Result<R>> =
        if parallel { (0..n).into_par_iter().map(&f).collect() } else { (0..n).map(&f).collect() };
    results
        .into_iter()
        .enumerate()
        .map(|(i, r)| r.map_err(|source| RunError::Core { point: Some(i), source }))
        .collect()
}

fn integrator_settings(s: &Scenario) -> IntegratorSettings {
    IntegratorSettings {
        method: s.sim.method.clone(),
        dt_s: s.sim.dt,
        n_fock: s.sim.n_fock,
        frame: match s.kind {
            // these scenarios always integrate in the lab frame
            ScenarioKind::FidelityVsNbar | ScenarioKind::PulseShapingSweep | ScenarioKind::CalibrateEfield => {
                "full".into()
            }
            ScenarioKind::FrameEquivalenceCheck => "full+displaced".into(),
            ScenarioKind::LocalizationScan => "none".into(),
            _ => format!("{:?}", s.sim.frame).to_lowercase(),
        },
        norm_check_every: s.sim.norm_check_every,
    }
}

/// Runs the scenario, writes its CSVs and manifest into `s.output_dir`, and
/// reports the exit status. The manifest is written on failure as well.
pub fn run_scenario(s: &Scenario) -> RunOutcome {
    let start = Instant::now();
    let computed = scenarios::compute(s);
    let mut outcome = RunOutcome {
        exit_code: EXIT_OK,
        status: "ok".into(),
        error: None,
        failed_point: None,
        tables: Vec::new(),
        summary: BTreeMap::new(),
        validity: Validity::clean(),
        outputs: Vec::new(),
        manifest: None,
    };
    let written = std::fs::create_dir_all(&s.output_dir).map_err(RunError::from).and_then(|_| match computed {
        Ok(data) => {
            for t in &data.tables {
                outcome.outputs.push(t.write(&s.output_dir)?);
            }
            if !data.validity.is_clean() {
                outcome.exit_code = EXIT_VALIDITY;
                outcome.status = "invalid".into();
                outcome.failed_point = data.validity.invalid_points.first().copied();
                outcome.error = Some(if data.validity.truncation_ok {
                    match data.validity.fit_errors.first() {
                        Some(e) => e.clone(),
                        None => "a fit did not converge".into(),
                    }
                } else {
                    format!("truncation limit reached at scan points {:?}", data.validity.invalid_points)
                });
            }
            outcome.tables = data.tables;
            outcome.summary = data.summary;
            outcome.validity = data.validity;
            Ok(())
        }
        Err(e) => {
            outcome.exit_code = e.exit_code();
            outcome.status = "error".into();
            outcome.failed_point = e.point();
            outcome.error = Some(e.to_string());
            Ok(())
        }
    });
    if let Err(e) = written {
        outcome.exit_code = e.exit_code();
        outcome.status = "error".into();
        outcome.error = Some(e.to_string());
        return outcome;
    }
    let manifest = RunManifest {
        toolkit: "fmsb",
        version: env!("CARGO_PKG_VERSION"),
        scenario: Some(s.kind.name().into()),
        parameters: s.parameters.clone(),
        constants: Constants::resolved(),
        integrator: Some(integrator_settings(s)),
        wall_clock_s: start.elapsed().as_secs_f64(),
        validity: outcome.validity.clone(),
        results: outcome.summary.clone(),
        outputs: outcome
            .outputs
            .iter()
            .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
            .collect(),
        status: outcome.status.clone(),
        exit_code: outcome.exit_code,
        failed_point: outcome.failed_point,
        error: outcome.error.clone(),
    };
    match manifest.write(&s.output_dir) {
        Ok(p) => outcome.manifest = Some(p),
        Err(e) => {
            outcome.exit_code = EXIT_IO;
            outcome.status = "error".into();
            outcome.error = Some(format!("writing manifest: {e}"));
        }
    }
    outcome
}

/// Manifest for a run that never got past configuration.
pub fn write_failure_manifest(dir: &std::path::Path, err: &RunError) -> std::io::Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    RunManifest {
        toolkit: "fmsb",
        version: env!("CARGO_PKG_VERSION"),
        scenario: None,
        parameters: BTreeMap::new(),
        constants: Constants::resolved(),
        integrator: None,
        wall_clock_s: 0.0,
        validity: Validity::default(),
        results: BTreeMap::new(),
        outputs: Vec::new(),
        status: "error".into(),
        exit_code: err.exit_code(),
        failed_point: None,
        error: Some(err.to_string()),
    }
    .write(dir)
}
