//! Falsification runs: scenario x timepoint batches over the worker pool,
//! run reports and output files.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use trajfals_core::falsify::{
    score_names, splitmix64, ErrorTableRow, Falsifier, FalsifyConfig, FalsifyResult, SampleRecord,
};
use trajfals_core::lang::{feature_space, timepoint_feature, Feature};
use trajfals_core::metrics::{
    counterexample_rate, miss_rate, scenario_diversity, MetricSpec, RunStats,
};
use trajfals_core::pipeline::{evaluate, EvalError};
use trajfals_core::predict::{PredictError, Predictor};

use crate::canonical::to_canonical_string;
use crate::config::RunConfig;
use crate::csv_io::write_error_table_csv;
use crate::error::{Error, Result};
use crate::library::{load_program, LoadedProgram};
use crate::pool::run_pool;

pub const REPORT_FILE: &str = "report.json";
pub const SAMPLES_FILE: &str = "samples.jsonl";
pub const ERRORS_FILE: &str = "errors.jsonl";
pub const ERRORS_CSV: &str = "errors.csv";
pub const TIMINGS_FILE: &str = "timings.json";

/// Metric means and rates over a set of samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    /// Samples with a successful evaluation.
    pub n_samples: usize,
    pub n_failed: usize,
    pub rejected: usize,
    pub n_counterexamples: usize,
    pub min_ade: Option<f64>,
    pub min_fde: Option<f64>,
    pub miss_rate: Option<f64>,
    pub cr: Option<f64>,
    pub sd: Option<f64>,
}

impl Summary {
    pub fn from_results(results: &[&FalsifyResult], features: &[Feature], d: f64) -> Self {
        let mut stats = RunStats::default();
        let mut fdes = Vec::new();
        let mut ades = Vec::new();
        let (mut failed, mut rejected) = (0, 0);
        for r in results {
            stats.merge(&r.stats);
            failed += r.failed;
            rejected += r.rejected;
            for s in &r.samples {
                if let (Some(a), Some(f)) = (s.min_ade, s.min_fde) {
                    ades.push(a);
                    fdes.push(f);
                }
            }
        }
        let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
        Summary {
            n_samples: stats.n_samples,
            n_failed: failed,
            rejected,
            n_counterexamples: stats.n_counterexamples,
            min_ade: mean(&ades),
            min_fde: mean(&fdes),
            miss_rate: miss_rate(&fdes, d).ok(),
            cr: counterexample_rate(&stats).ok(),
            sd: scenario_diversity(&stats, features).ok(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    /// Pinned timepoint; `None` when the program fixes its own.
    pub timepoint: Option<u32>,
    pub summary: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub id: String,
    pub path: String,
    pub program_hash: String,
    pub batches: Vec<BatchReport>,
    pub overall: Summary,
}

/// Byte-reproducible run summary; wall-clock data lives in [`Timings`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: serde_json::Value,
    pub score_names: Vec<String>,
    pub scenarios: Vec<ScenarioReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchTiming {
    pub scenario: String,
    pub timepoint: Option<u32>,
    pub wall_s: f64,
    pub mean_sample_s: f64,
    pub guard_trips: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub workers: usize,
    pub total_s: f64,
    pub batches: Vec<BatchTiming>,
}

impl Timings {
    pub fn guard_trips(&self) -> usize {
        self.batches.iter().map(|b| b.guard_trips).sum()
    }
}

#[derive(Debug, Clone)]
pub struct BatchResult {
    pub scenario: String,
    pub timepoint: Option<u32>,
    pub result: FalsifyResult,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: RunReport,
    pub timings: Timings,
    pub batches: Vec<BatchResult>,
}

impl RunOutcome {
    pub fn error_rows(&self) -> impl Iterator<Item = &ErrorTableRow> {
        self.batches.iter().flat_map(|b| &b.result.error_table)
    }

    pub fn samples(&self) -> impl Iterator<Item = &SampleRecord> {
        self.batches.iter().flat_map(|b| &b.result.samples)
    }
}

/// Seed of one batch; depends only on the run seed, program id and timepoint.
pub fn batch_seed(run_seed: u64, program_id: &str, timepoint: Option<u32>) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in program_id.bytes() {
        h = (h ^ b as u64).wrapping_mul(0x0100_0000_01b3);
    }
    splitmix64(run_seed ^ splitmix64(h ^ timepoint.map_or(u64::MAX, u64::from)))
}

/// A worker's predictor; relaunched after a crash or timeout.
pub struct PredictorSlot<'f> {
    factory: &'f (dyn Fn() -> Result<Box<dyn Predictor>> + Sync),
    predictor: Option<Box<dyn Predictor>>,
}

impl<'f> PredictorSlot<'f> {
    pub fn launch(factory: &'f (dyn Fn() -> Result<Box<dyn Predictor>> + Sync)) -> Result<Self> {
        Ok(PredictorSlot {
            factory,
            predictor: Some(factory()?),
        })
    }

    pub fn get(&mut self) -> std::result::Result<&mut dyn Predictor, String> {
        if self.predictor.is_none() {
            self.predictor = Some((self.factory)().map_err(|e| e.to_string())?);
        }
        Ok(self.predictor.as_deref_mut().expect("just set"))
    }

    fn after_error(&mut self, e: &EvalError) {
        if matches!(
            e,
            EvalError::Predict(PredictError::Crashed { .. } | PredictError::Timeout { .. })
        ) {
            self.predictor = None;
        }
    }
}

/// Loads every scenario in `config` and runs with the configured predictor.
pub fn run_falsification(config: &RunConfig) -> Result<RunOutcome> {
    config.validate()?;
    if config.scenarios.is_empty() {
        return Err(Error::Config("no scenario files given".into()));
    }
    let programs = config
        .scenarios
        .iter()
        .map(|p| load_program(p))
        .collect::<Result<Vec<_>>>()?;
    let factory = || config.make_predictor();
    run_with(config, &programs, &factory)
}

/// Runs every program in `programs` with predictors built by `factory`
/// (one per worker).
pub fn run_with(
    config: &RunConfig,
    programs: &[LoadedProgram],
    factory: &(dyn Fn() -> Result<Box<dyn Predictor>> + Sync),
) -> Result<RunOutcome> {
    config.validate()?;
    let spec = config.metric_spec();
    let eval_cfg = config.eval_config();
    let started = Instant::now();
    let mut batches = Vec::new();
    let mut timings = Timings {
        workers: config.workers,
        ..Timings::default()
    };
    let mut slots: Vec<PredictorSlot<'_>> = (0..config.workers)
        .map(|_| PredictorSlot::launch(factory))
        .collect::<Result<_>>()?;

    for lp in programs {
        let id = lp.program.id.clone();
        let tp_feature = timepoint_feature(&lp.program);
        let plan: Vec<Option<u32>> = match &tp_feature {
            Some(_) => config.timepoints.iter().copied().map(Some).collect(),
            None => vec![None],
        };
        for tp in plan {
            let mut fc = FalsifyConfig::new(
                config.sampler,
                config.n_samples,
                batch_seed(config.seed, &id, tp),
            );
            fc.program_hash = lp.hash.clone();
            if let (Some(name), Some(tp)) = (&tp_feature, tp) {
                fc.pinned.insert(name.clone(), f64::from(tp));
            }
            let falsify_err = |source| Error::Falsify {
                scenario: id.clone(),
                source,
            };
            let mut f = Falsifier::new(&lp.program, spec.clone(), fc).map_err(falsify_err)?;
            let workers: Vec<&mut PredictorSlot<'_>> = slots.iter_mut().collect();
            let stats = run_pool(&mut f, workers, |slot, p| {
                let model = slot.get()?;
                match evaluate(&p.scenario, model, &spec, eval_cfg) {
                    Ok(out) => Ok(out.evaluation),
                    Err(e) => {
                        slot.after_error(&e);
                        Err(e.to_string())
                    }
                }
            })
            .map_err(falsify_err)?;
            let n = stats.sample_times.len().max(1) as f64;
            timings.batches.push(BatchTiming {
                scenario: id.clone(),
                timepoint: tp,
                wall_s: stats.wall.as_secs_f64(),
                mean_sample_s: stats
                    .sample_times
                    .iter()
                    .map(|d| d.as_secs_f64())
                    .sum::<f64>()
                    / n,
                guard_trips: stats.guard_trips,
            });
            batches.push(BatchResult {
                scenario: id.clone(),
                timepoint: tp,
                result: f.finish(),
            });
        }
    }
    timings.total_s = started.elapsed().as_secs_f64();

    let scenarios = programs
        .iter()
        .map(|lp| {
            let features = feature_space(&lp.program);
            let mine: Vec<&BatchResult> = batches
                .iter()
                .filter(|b| b.scenario == lp.program.id)
                .collect();
            let d = spec.mr_distance;
            ScenarioReport {
                id: lp.program.id.clone(),
                path: lp.path.display().to_string(),
                program_hash: lp.hash.clone(),
                batches: mine
                    .iter()
                    .map(|b| BatchReport {
                        timepoint: b.timepoint,
                        summary: Summary::from_results(&[&b.result], &features, d),
                    })
                    .collect(),
                overall: Summary::from_results(
                    &mine.iter().map(|b| &b.result).collect::<Vec<_>>(),
                    &features,
                    d,
                ),
            }
        })
        .collect();
    Ok(RunOutcome {
        report: RunReport {
            config: config_echo(config, &spec)?,
            score_names: score_names(&spec),
            scenarios,
        },
        timings,
        batches,
    })
}

/// Config as recorded in the report: everything but the output directory.
fn config_echo(config: &RunConfig, spec: &MetricSpec) -> Result<serde_json::Value> {
    let mut v = serde_json::to_value(config)?;
    if let Some(o) = v.as_object_mut() {
        o.remove("output");
        o.insert("metric_spec".into(), serde_json::to_value(spec)?);
    }
    Ok(v)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    File::create(&path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn finish(mut w: BufWriter<File>, dir: &Path, name: &str) -> Result<()> {
    w.flush().map_err(|e| Error::io(dir.join(name), e))
}

fn write_jsonl<'a, T: Serialize + 'a>(
    dir: &Path,
    name: &str,
    items: impl Iterator<Item = &'a T>,
) -> Result<()> {
    let mut w = create(dir, name)?;
    for item in items {
        writeln!(w, "{}", to_canonical_string(item)?).map_err(|e| Error::io(dir.join(name), e))?;
    }
    finish(w, dir, name)
}

fn write_pretty<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(dir.join(name), text).map_err(|e| Error::io(dir.join(name), e))
}

/// Writes report, per-sample log, error table (JSONL and CSV) and timings.
pub fn write_outputs(outcome: &RunOutcome, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_pretty(dir, REPORT_FILE, &outcome.report)?;
    write_pretty(dir, TIMINGS_FILE, &outcome.timings)?;
    write_jsonl(dir, SAMPLES_FILE, outcome.samples())?;
    write_jsonl(dir, ERRORS_FILE, outcome.error_rows())?;
    let rows: Vec<ErrorTableRow> = outcome.error_rows().cloned().collect();
    let w = create(dir, ERRORS_CSV)?;
    write_error_table_csv(&rows, &outcome.report.score_names, w)?;
    Ok(())
}

/// Reads an error table written by [`write_outputs`].
pub fn read_error_rows(path: &Path) -> Result<Vec<ErrorTableRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

pub fn read_report(path: &Path) -> Result<RunReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Per-scenario mean minFDE keyed by program id.
pub fn mean_min_fde(report: &RunReport) -> BTreeMap<String, Option<f64>> {
    report
        .scenarios
        .iter()
        .map(|s| (s.id.clone(), s.overall.min_fde))
        .collect()
}
