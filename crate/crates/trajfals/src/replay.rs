//! Replays error-table rows and checks the recomputed scores.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use trajfals_core::falsify::ErrorTableRow;
use trajfals_core::lang::{concretize, Concretized};
use trajfals_core::metrics::MetricSpec;
use trajfals_core::pipeline::{evaluate, EvalConfig};
use trajfals_core::predict::Predictor;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::library::{load_program, LoadedProgram};
use crate::runner::{read_error_rows, read_report, ERRORS_FILE, REPORT_FILE};

/// Largest score difference accepted as a faithful replay.
pub const REPLAY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayOutcome {
    pub program_id: String,
    pub index: usize,
    pub timepoint: u32,
    pub recorded: Vec<f64>,
    pub replayed: Vec<f64>,
    pub max_diff: f64,
}

impl ReplayOutcome {
    pub fn matches(&self) -> bool {
        self.recorded.len() == self.replayed.len() && self.max_diff <= REPLAY_TOLERANCE
    }
}

/// Re-runs one row against `program`, which must hash to the recorded value.
pub fn replay_row(
    program: &LoadedProgram,
    row: &ErrorTableRow,
    model: &mut dyn Predictor,
    spec: &MetricSpec,
    cfg: EvalConfig,
) -> Result<ReplayOutcome> {
    if program.hash != row.program_hash {
        return Err(Error::HashMismatch {
            program_id: row.program_id.clone(),
            recorded: row.program_hash.clone(),
            current: program.hash.clone(),
        });
    }
    let scenario = match concretize(&program.program, &row.assignment, row.seed) {
        Ok(Concretized::Accepted(s)) => s,
        Ok(Concretized::Rejected { requirement }) => {
            return Err(Error::Replay(format!(
                "row {} of `{}` now fails requirement {requirement}",
                row.index, row.program_id
            )))
        }
        Err(e) => return Err(Error::Replay(format!("row {}: {e}", row.index))),
    };
    let out = evaluate(&scenario, model, spec, cfg)
        .map_err(|e| Error::Replay(format!("row {}: {e}", row.index)))?;
    let replayed = out.evaluation.rho.scores;
    let max_diff = row
        .scores
        .iter()
        .zip(&replayed)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(ReplayOutcome {
        program_id: row.program_id.clone(),
        index: row.index,
        timepoint: row.timepoint,
        recorded: row.scores.clone(),
        replayed,
        max_diff,
    })
}

/// Replays every row of a run directory using the config echoed in its
/// report. `scenario_override` maps program ids to replacement paths.
pub fn replay_run(
    run_dir: &Path,
    scenario_override: &BTreeMap<String, PathBuf>,
) -> Result<Vec<ReplayOutcome>> {
    let report = read_report(&run_dir.join(REPORT_FILE))?;
    let mut echo = report.config.clone();
    if let Some(o) = echo.as_object_mut() {
        o.remove("metric_spec");
    }
    let config: RunConfig = serde_json::from_value(echo)?;
    let spec = config.metric_spec();
    let rows = read_error_rows(&run_dir.join(ERRORS_FILE))?;
    let mut programs = BTreeMap::new();
    for s in &report.scenarios {
        let path = scenario_override
            .get(&s.id)
            .cloned()
            .unwrap_or_else(|| PathBuf::from(&s.path));
        programs.insert(s.id.clone(), path);
    }
    let mut loaded: BTreeMap<String, LoadedProgram> = BTreeMap::new();
    let mut model = config.make_predictor()?;
    let mut out = Vec::new();
    for row in &rows {
        if !loaded.contains_key(&row.program_id) {
            let path = programs.get(&row.program_id).ok_or_else(|| {
                Error::Replay(format!("no scenario recorded for `{}`", row.program_id))
            })?;
            loaded.insert(row.program_id.clone(), load_program(path)?);
        }
        let program = &loaded[&row.program_id];
        out.push(replay_row(
            program,
            row,
            model.as_mut(),
            &spec,
            config.eval_config(),
        )?);
    }
    Ok(out)
}
