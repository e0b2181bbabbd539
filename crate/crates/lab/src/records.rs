//! Persistent experiment records.
//!
//! Every run emits one JSON line; a sweep's lines are written in a fixed
//! order so that reruns with the same seed produce byte-identical files no
//! matter how many worker threads executed the runs.  Wall-clock timings go
//! to a separate file that is excluded from any byte comparison.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::LabError;

/// Outcome of the per-run stability certificate, flattened for records.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct CertificateSummary {
    pub passed: bool,
    pub constant: f64,
    pub checked: usize,
    pub first_violation: Option<usize>,
    pub horizon: f64,
    pub uniform_threshold: Option<f64>,
    pub uniform_bound_held: Option<bool>,
}

/// One simulated run: identity, measured series, and derived diagnostics.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct RunRecord {
    pub config_hash: String,
    pub code_version: String,
    pub kind: String,
    pub model: String,
    pub n_particles: usize,
    pub replicate: usize,
    pub seed: u64,
    pub metric_name: String,
    /// Initial distance to the reference measure.
    pub m0: f64,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub certificate: Option<CertificateSummary>,
    pub departure_time: Option<f64>,
    /// Reference value the metric series is measured against, when the
    /// metric is a mean error (posterior demos).
    #[serde(default)]
    pub oracle_mean: Option<Vec<f64>>,
    /// Named scalar diagnostics (step sizes, drifts, moments).
    #[serde(default)]
    pub extras: BTreeMap<String, f64>,
    /// Per-stage solver or integrator statuses, keyed by stage name.
    pub statuses: BTreeMap<String, String>,
    pub notes: Vec<String>,
}

impl RunRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("record serialises")
    }

    pub fn from_json_line(line: &str) -> Result<Self, LabError> {
        serde_json::from_str(line).map_err(|e| LabError::Config(format!("record parse: {e}")))
    }
}

/// Writes records as JSON lines in the order given.
pub fn write_records(path: &Path, records: &[RunRecord]) -> Result<(), LabError> {
    let mut out = String::new();
    for r in records {
        out.push_str(&r.to_json_line());
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

pub fn read_records(path: &Path) -> Result<Vec<RunRecord>, LabError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| LabError::Io(format!("cannot read {}: {e}", path.display())))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(RunRecord::from_json_line)
        .collect()
}

/// A named scalar series for CSV export (bound curves, norm histories,
/// KL/dissipation traces).
pub struct SeriesCsv<'a> {
    pub header: &'a str,
    pub rows: Vec<Vec<f64>>,
}

impl SeriesCsv<'_> {
    pub fn to_string(&self) -> String {
        let mut s = String::from(self.header);
        s.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        s
    }
}

pub fn write_series_csv(path: &Path, csv: &SeriesCsv) -> Result<(), LabError> {
    write_atomic(path, csv.to_string().as_bytes())
}

/// Wall-clock timings, kept apart from the deterministic outputs.
pub fn write_timings(path: &Path, rows: &[(String, f64)]) -> Result<(), LabError> {
    let mut s = String::from("stage,seconds\n");
    for (name, secs) in rows {
        s.push_str(&format!("{name},{secs:.3}\n"));
    }
    write_atomic(path, s.as_bytes())
}

pub fn write_text(path: &Path, text: &str) -> Result<(), LabError> {
    write_atomic(path, text.as_bytes())
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), LabError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| LabError::Io(format!("cannot create {}: {e}", parent.display())))?;
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)
            .map_err(|e| LabError::Io(format!("cannot create {}: {e}", tmp.display())))?;
        f.write_all(bytes)
            .map_err(|e| LabError::Io(format!("cannot write {}: {e}", tmp.display())))?;
    }
    std::fs::rename(&tmp, path)
        .map_err(|e| LabError::Io(format!("cannot move into {}: {e}", path.display())))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> RunRecord {
        RunRecord {
            config_hash: "abc".into(),
            code_version: "0.1.0".into(),
            kind: "stability-sweep".into(),
            model: "quadratic+gaussian(h=1)".into(),
            n_particles: 50,
            replicate: 3,
            seed: 99,
            metric_name: "weighted-bl".into(),
            m0: 0.25,
            times: vec![0.0, 1.0],
            values: vec![0.25, 0.125],
            certificate: Some(CertificateSummary {
                passed: true,
                constant: 1.0,
                checked: 2,
                first_violation: None,
                horizon: 4.0,
                uniform_threshold: Some(0.1),
                uniform_bound_held: Some(true),
            }),
            departure_time: None,
            oracle_mean: None,
            extras: BTreeMap::new(),
            statuses: BTreeMap::from([("integrate".into(), "ok".into())]),
            notes: vec![],
        }
    }

    #[test]
    fn record_round_trips_through_json() {
        let r = sample();
        let back = RunRecord::from_json_line(&r.to_json_line()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn files_round_trip_and_are_line_ordered() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("runs.jsonl");
        let mut a = sample();
        let mut b = sample();
        a.replicate = 0;
        b.replicate = 1;
        write_records(&path, &[a.clone(), b.clone()]).unwrap();
        let back = read_records(&path).unwrap();
        assert_eq!(back, vec![a, b]);
    }

    #[test]
    fn series_csv_uses_shortest_float_form() {
        let csv = SeriesCsv {
            header: "t,value",
            rows: vec![vec![0.0, 0.5], vec![0.1, 0.25]],
        };
        assert_eq!(csv.to_string(), "t,value\n0,0.5\n0.1,0.25\n");
    }
}
