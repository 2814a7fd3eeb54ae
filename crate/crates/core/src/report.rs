//! CSV rows for experiment results.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

pub const CSV_HEADER: [&str; 13] = [
    "experiment",
    "policy",
    "K",
    "gamma",
    "N",
    "avg_cost",
    "ci95",
    "avg_commands",
    "commands_ci95",
    "episodes",
    "slots",
    "seed",
    "wall_seconds",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub experiment: String,
    pub policy: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub gamma: f64,
    #[serde(rename = "N")]
    pub n: usize,
    pub avg_cost: f64,
    pub ci95: f64,
    pub avg_commands: f64,
    pub commands_ci95: f64,
    pub episodes: usize,
    pub slots: u64,
    pub seed: u64,
    pub wall_seconds: f64,
}

/// Writes the header and then `rows` in the given order.
pub fn write_csv<W: Write>(rows: &[Row], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn emit_csv<P: AsRef<Path>>(rows: &[Row], path: P) -> Result<()> {
    write_csv(rows, File::create(path)?)
}

pub fn read_csv<P: AsRef<Path>>(path: P) -> Result<Vec<Row>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row() -> Row {
        Row {
            experiment: "fig2".into(),
            policy: "greedy".into(),
            k: 100,
            gamma: 0.02,
            n: 2,
            avg_cost: 12.345678901234,
            ci95: 0.1,
            avg_commands: 0.019999,
            commands_ci95: 1e-5,
            episodes: 3,
            slots: 1_000_000,
            seed: 7,
            wall_seconds: 1.5,
        }
    }

    #[test]
    fn header_only_when_empty() {
        let mut buf = Vec::new();
        write_csv(&[], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "experiment,policy,K,gamma,N,avg_cost,ci95,avg_commands,commands_ci95,episodes,slots,seed,wall_seconds\n"
        );
    }

    #[test]
    fn round_trip_keeps_order_and_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rows.csv");
        let mut second = row();
        second.policy = "relax-truncate".into();
        emit_csv(&[row(), second.clone()], &path).unwrap();
        let back = read_csv(&path).unwrap();
        assert_eq!(back, vec![row(), second]);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(!text.contains('\r'));
    }
}
