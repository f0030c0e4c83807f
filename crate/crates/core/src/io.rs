//! The observation CSV interchange format.
//!
//! One header line `world,score`, then one row per observation with world 0
//! (without the differing record) or 1 (with it). Scores are written with 17
//! significant digits so 64-bit floats round-trip exactly; rows end with a
//! bare newline. Any DP-SGD implementation that can export this file can be
//! audited by the CLI.

use crate::error::{Error, Result};
use crate::mechanisms::{ObservationSet, RngSeed, World};
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

pub const OBSERVATION_HEADER: &str = "world,score";

/// Serialize one score with 17 significant digits.
pub fn format_score(x: f64) -> String {
    format!("{x:.16e}")
}

/// Write a pair of observation sets as CSV.
pub fn write_observations(path: &Path, d: &ObservationSet, d_prime: &ObservationSet) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{OBSERVATION_HEADER}")?;
    for s in &d.scores {
        writeln!(w, "0,{}", format_score(*s))?;
    }
    for s in &d_prime.scores {
        writeln!(w, "1,{}", format_score(*s))?;
    }
    w.flush()?;
    Ok(())
}

/// Read an observation CSV into (D scores, D' scores). Malformed rows are
/// reported with their line number.
pub fn read_observations(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
    let reader = std::io::BufReader::new(file);
    let mut d = Vec::new();
    let mut dp = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if idx == 0 {
            if line.trim() != OBSERVATION_HEADER {
                return Err(Error::InvalidInput(format!(
                    "line {lineno}: expected header '{OBSERVATION_HEADER}', got '{line}'"
                )));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let (world, score) = line.split_once(',').ok_or_else(|| {
            Error::InvalidInput(format!("line {lineno}: expected 'world,score', got '{line}'"))
        })?;
        let score: f64 = score.trim().parse().map_err(|_| {
            Error::InvalidInput(format!("line {lineno}: unparseable score '{score}'"))
        })?;
        if !score.is_finite() {
            return Err(Error::InvalidInput(format!("line {lineno}: non-finite score")));
        }
        match world.trim() {
            "0" => d.push(score),
            "1" => dp.push(score),
            other => {
                return Err(Error::InvalidInput(format!(
                    "line {lineno}: world must be 0 or 1, got '{other}'"
                )))
            }
        }
    }
    if d.is_empty() || dp.is_empty() {
        return Err(Error::InvalidInput(
            "observation file must contain rows for both worlds".into(),
        ));
    }
    Ok((d, dp))
}

/// Convenience: wrap raw score vectors as observation sets.
pub fn to_observation_sets(d: Vec<f64>, dp: Vec<f64>, seed: RngSeed) -> (ObservationSet, ObservationSet) {
    (
        ObservationSet { world: World::D, seed, scores: d },
        ObservationSet { world: World::Dprime, seed, scores: dp },
    )
}
