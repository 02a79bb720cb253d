//! CSV exports: simulator traces, Argoverse-style history files and the
//! error table.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use trajfals_core::falsify::ErrorTableRow;
use trajfals_core::predict::PredictionRequest;
use trajfals_core::sim::Trace;

use crate::error::{Error, Result};

/// Columns `timestep, agent_id, x, y, heading, speed`; one row per agent per step.
pub fn write_trace_csv<W: Write>(trace: &Trace, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["timestep", "agent_id", "x", "y", "heading", "speed"])?;
    for (t, states) in trace.steps.iter().enumerate() {
        for (name, s) in trace.agents.iter().zip(states) {
            w.write_record([
                t.to_string(),
                name.clone(),
                s.position.x.to_string(),
                s.position.y.to_string(),
                s.heading.to_string(),
                s.speed.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Argoverse-style history: `timestep, agent_id, x, y`, rows ordered by
/// timestep then agent id.
pub fn write_argoverse_csv<W: Write>(request: &PredictionRequest, out: W) -> Result<()> {
    if request.history.is_empty() {
        return Err(Error::Config(format!(
            "request `{}` has no agents",
            request.scenario_id
        )));
    }
    let steps = request.history.values().map(Vec::len).max().unwrap_or(0);
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["timestep", "agent_id", "x", "y"])?;
    for t in 0..steps {
        for (agent, poses) in &request.history {
            if let Some(p) = poses.get(t) {
                w.write_record([
                    t.to_string(),
                    agent.clone(),
                    p.position.x.to_string(),
                    p.position.y.to_string(),
                ])?;
            }
        }
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Writes `<dir>/<scenario_id>.csv` and returns its path.
pub fn export_argoverse_csv(request: &PredictionRequest, dir: &Path) -> Result<PathBuf> {
    let safe: String = request
        .scenario_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect();
    let path = dir.join(format!("{safe}.csv"));
    let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
    write_argoverse_csv(request, file)?;
    Ok(path)
}

/// Error table as CSV. Fixed columns, then one `score:<name>` column per
/// metric entry, then one `feature:<name>` column per feature seen in any row.
pub fn write_error_table_csv<W: Write>(
    rows: &[ErrorTableRow],
    score_names: &[String],
    out: W,
) -> Result<()> {
    let features: BTreeSet<&str> = rows
        .iter()
        .flat_map(|r| r.assignment.keys().map(String::as_str))
        .collect();
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = [
        "program_id",
        "program_hash",
        "timepoint",
        "index",
        "seed",
        "min_ade",
        "min_fde",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend(score_names.iter().map(|n| format!("score:{n}")));
    header.extend(features.iter().map(|f| format!("feature:{f}")));
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.program_id.clone(),
            r.program_hash.clone(),
            r.timepoint.to_string(),
            r.index.to_string(),
            r.seed.to_string(),
            r.min_ade.to_string(),
            r.min_fde.to_string(),
        ];
        rec.extend(r.scores.iter().map(f64::to_string));
        rec.extend(
            features
                .iter()
                .map(|f| r.assignment.get(*f).map(f64::to_string).unwrap_or_default()),
        );
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}
