//! CSV tables and the run manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

/// One CSV file: fixed columns (name plus unit suffix) and numeric rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub file: String,
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(file: impl Into<String>, columns: &[&'static str]) -> Self {
        Self { file: file.into(), columns: columns.to_vec(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        assert_eq!(row.len(), self.columns.len(), "row width for {}", self.file);
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.columns.iter().position(|c| *c == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }

    pub fn write(&self, dir: &Path) -> std::io::Result<PathBuf> {
        let path = dir.join(&self.file);
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|v| format_value(*v)))?;
        }
        w.flush()?;
        Ok(path)
    }
}

/// Shortest round-trip decimal form, so identical values give identical bytes.
pub fn format_value(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else if v == 0.0 {
        "0".into()
    } else {
        format!("{v:e}")
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Constants {
    pub hbar_j_s: f64,
    pub elementary_charge_c: f64,
    pub amu_kg: f64,
}

impl Constants {
    pub fn resolved() -> Self {
        Self {
            hbar_j_s: fmsb::constants::hbar(),
            elementary_charge_c: fmsb::constants::elementary_charge(),
            amu_kg: fmsb::constants::amu(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct IntegratorSettings {
    pub method: String,
    pub dt_s: f64,
    pub n_fock: usize,
    pub frame: String,
    pub norm_check_every: usize,
}

#[derive(Debug, Clone, Default, Serialize, PartialEq)]
pub struct Validity {
    /// Top-Fock population stayed below the truncation limit everywhere.
    pub truncation_ok: bool,
    pub max_top_population: f64,
    /// Every fit reported convergence.
    pub fits_converged: bool,
    /// Scan points whose evolution was flagged invalid.
    pub invalid_points: Vec<usize>,
    pub fit_errors: Vec<String>,
}

impl Validity {
    pub fn clean() -> Self {
        Self {
            truncation_ok: true,
            max_top_population: 0.0,
            fits_converged: true,
            invalid_points: Vec::new(),
            fit_errors: Vec::new(),
        }
    }

    pub fn record_point(&mut self, index: usize, valid: bool, top: f64) {
        self.max_top_population = self.max_top_population.max(top);
        if !valid {
            self.truncation_ok = false;
            self.invalid_points.push(index);
        }
    }

    pub fn record_fit(&mut self, converged: bool) {
        self.fits_converged &= converged;
    }

    pub fn record_fit_error(&mut self, message: String) {
        self.fits_converged = false;
        self.fit_errors.push(message);
    }

    pub fn is_clean(&self) -> bool {
        self.truncation_ok && self.fits_converged
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub toolkit: &'static str,
    pub version: &'static str,
    pub scenario: Option<String>,
    pub parameters: BTreeMap<String, BTreeMap<String, String>>,
    pub constants: Constants,
    pub integrator: Option<IntegratorSettings>,
    pub wall_clock_s: f64,
    pub validity: Validity,
    pub results: BTreeMap<String, f64>,
    pub outputs: Vec<String>,
    pub status: String,
    pub exit_code: i32,
    pub failed_point: Option<usize>,
    pub error: Option<String>,
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> std::io::Result<PathBuf> {
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        std::fs::write(&path, text + "\n")?;
        Ok(path)
    }
}
