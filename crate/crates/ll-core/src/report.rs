//! Run manifests and text serialization helpers shared by the CLI and the
//! study drivers.

use serde::{Deserialize, Serialize};

/// How a run ended.
///
/// `GuardAborted` is a *successful* outcome: a regime guard (e.g. the
/// easy-plane factor 1 − ε²U² dropping below ½) stopped the run early and the
/// partial data up to that time is valid and reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    GuardAborted,
}

/// Summary of a CLI run, serialized as `manifest.json` next to the data
/// files. Field order is the serialization order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    /// Which experiment recipe produced this run (e.g. "profile-panel").
    pub recipe: String,
    pub status: RunStatus,
    /// Echo of the fully-resolved configuration.
    pub config: serde_json::Value,
    /// Seed used for any stochastic ingredient (0 when unused).
    pub seed: u64,
    /// Data files written, relative to the manifest.
    pub outputs: Vec<String>,
    /// Headline scalars of the run (energy drifts, fitted slopes, angles...).
    pub metrics: serde_json::Map<String, serde_json::Value>,
    /// Human-readable notes (guard events, warnings).
    pub notes: Vec<String>,
}

impl RunManifest {
    pub fn new(recipe: &str, config: serde_json::Value, seed: u64) -> Self {
        RunManifest {
            recipe: recipe.to_string(),
            status: RunStatus::Completed,
            config,
            seed,
            outputs: Vec::new(),
            metrics: serde_json::Map::new(),
            notes: Vec::new(),
        }
    }

    pub fn metric(&mut self, key: &str, value: f64) {
        self.metrics
            .insert(key.to_string(), serde_json::json!(value));
    }
}

/// Formats a float with 17 significant digits, enough to round-trip f64.
pub fn g17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes a CSV file with the given header and rows of f64 cells, each
/// formatted to round-trip exactly.
pub fn write_csv(
    path: &std::path::Path,
    header: &[&str],
    rows: impl Iterator<Item = Vec<f64>>,
) -> std::io::Result<()> {
    use std::io::Write;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{}", header.join(","))?;
    for row in rows {
        let cells: Vec<String> = row.iter().map(|&v| g17(v)).collect();
        writeln!(f, "{}", cells.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn g17_roundtrips() {
        for &x in &[
            0.1,
            std::f64::consts::PI,
            1.0 / 3.0,
            6.02e23,
            -1.2345678901234567e-300,
        ] {
            let s = g17(x);
            let back: f64 = s.parse().unwrap();
            assert_eq!(x, back, "{s}");
        }
    }

    #[test]
    fn manifest_serializes_with_stable_field_order() {
        let mut m = RunManifest::new("profile-panel", serde_json::json!({"c": 0.5}), 0);
        m.metric("angle", 1.5951);
        let s = serde_json::to_string(&m).unwrap();
        let recipe_pos = s.find("recipe").unwrap();
        let status_pos = s.find("status").unwrap();
        let metrics_pos = s.find("metrics").unwrap();
        assert!(recipe_pos < status_pos && status_pos < metrics_pos);
    }
}
