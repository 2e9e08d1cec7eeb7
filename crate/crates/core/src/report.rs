//! Structured run results: a versioned JSON report and two CSV tables
//! (root value per radius; simulated cost statistics per radius).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridCase;
use crate::sim::{PolicyStats, SamplingModel};

/// Version of the `report.json` layout.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseSummary {
    pub name: String,
    pub horizon: usize,
    pub buses: usize,
    pub generators: usize,
    pub lines: usize,
    pub renewables: usize,
}

impl CaseSummary {
    pub fn of(case: &GridCase) -> Self {
        CaseSummary {
            name: case.name.clone(),
            horizon: case.horizon,
            buses: case.num_buses(),
            generators: case.num_generators(),
            lines: case.num_lines(),
            renewables: case.renewables.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub gammas: Vec<f64>,
    pub pieces: usize,
    pub bins: usize,
    pub n_fit: usize,
    pub n_eval: usize,
    pub seed: u64,
    pub model: SamplingModel,
    pub open_loop: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub gamma: f64,
    pub root_value: f64,
    /// Largest absolute residual of any value-function fit ($).
    pub max_fit_residual: f64,
    /// Smallest eigenvalue over all fitted quadratic terms.
    pub min_eigenvalue: f64,
    /// Simulated total cost; absent when no simulation was run.
    pub simulation: Option<PolicyStats>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub command: String,
    pub case: CaseSummary,
    pub settings: RunSettings,
    pub fit_pool_digest: String,
    /// Digest of the evaluation pool shared by every row.
    pub eval_pool_digest: Option<String>,
    pub rows: Vec<ReportRow>,
}

impl Report {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let version = value.get("schema_version").and_then(serde_json::Value::as_u64);
        if version != Some(u64::from(SCHEMA_VERSION)) {
            return Err(Error::Domain(format!(
                "unsupported report schema version {version:?}, expected {SCHEMA_VERSION}"
            )));
        }
        Ok(serde_json::from_value(value)?)
    }

    /// `gamma,root_value`.
    pub fn table1_csv(&self) -> String {
        let mut s = String::from("gamma,root_value\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{}", r.gamma, r.root_value);
        }
        s
    }

    /// `gamma,mean,std_dev,p90,n`; rows without a simulation are skipped.
    pub fn table2_csv(&self) -> String {
        let mut s = String::from("gamma,mean,std_dev,p90,n\n");
        for r in &self.rows {
            if let Some(st) = &r.simulation {
                let _ = writeln!(s, "{},{},{},{},{}", r.gamma, st.mean, st.std_dev, st.p90, st.n);
            }
        }
        s
    }

    /// Writes `report.json`, `table1.csv` and, when any row was simulated,
    /// `table2.csv` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_file(&dir.join("report.json"), &self.to_json()?)?;
        write_file(&dir.join("table1.csv"), &self.table1_csv())?;
        if self.rows.iter().any(|r| r.simulation.is_some()) {
            write_file(&dir.join("table2.csv"), &self.table2_csv())?;
        }
        Ok(())
    }

    pub fn read_from(dir: &Path) -> Result<Self> {
        let path = dir.join("report.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Report::from_json(&text)
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
