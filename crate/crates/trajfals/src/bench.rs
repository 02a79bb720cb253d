//! Wall-clock benchmark of the worker pool.

use std::io::Write;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use trajfals_core::falsify::{Falsifier, FalsifyConfig, SamplerKind};
use trajfals_core::lang::{timepoint_feature, ScenarioProgram};
use trajfals_core::metrics::MetricSpec;
use trajfals_core::pipeline::{evaluate, EvalConfig};
use trajfals_core::predict::ConstantVelocity;

use crate::error::{Error, Result};
use crate::pool::{run_pool, SyntheticWork};

pub const DEFAULT_WORKERS: &[usize] = &[1, 2, 5];
pub const DEFAULT_ITERATIONS: &[usize] = &[25, 50, 75, 100];
pub const DEFAULT_WORK: Duration = Duration::from_millis(200);

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub workers: Vec<usize>,
    pub iterations: Vec<usize>,
    /// Single-thread duration of the fixed compute added to every sample.
    pub work: Duration,
    pub seed: u64,
    /// Time the evaluation alone, without the synthetic work.
    pub real: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            workers: DEFAULT_WORKERS.to_vec(),
            iterations: DEFAULT_ITERATIONS.to_vec(),
            work: DEFAULT_WORK,
            seed: 0,
            real: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub iterations: usize,
    /// Wall seconds per worker count, in `BenchConfig::workers` order.
    pub seconds: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub workers: Vec<usize>,
    pub rows: Vec<BenchRow>,
    pub guard_trips: usize,
}

impl BenchReport {
    /// `t(1 worker) / t(workers)` for the largest iteration count.
    pub fn speedup(&self, workers: usize) -> Option<f64> {
        let base = self.workers.iter().position(|&w| w == 1)?;
        let col = self.workers.iter().position(|&w| w == workers)?;
        let row = self.rows.last()?;
        Some(row.seconds[base] / row.seconds[col])
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["iter".to_string()];
        header.extend(self.workers.iter().map(|n| format!("w{n}")));
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![r.iterations.to_string()];
            rec.extend(r.seconds.iter().map(|s| format!("{s:.3}")));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<benchmark csv>", e))?;
        Ok(())
    }
}

/// Times full falsification batches over `program` with the constant
/// velocity predictor plus a fixed compute load per sample, calibrated to
/// take `cfg.work` on one thread (none when `cfg.real`).
pub fn run_benchmark(program: &ScenarioProgram, cfg: &BenchConfig) -> Result<BenchReport> {
    let spec = MetricSpec::default();
    let eval_cfg = EvalConfig::default();
    let work = SyntheticWork::calibrate(cfg.work);
    let mut rows = Vec::new();
    let mut trips = 0;
    for &n in &cfg.iterations {
        let mut seconds = Vec::new();
        for &w in &cfg.workers {
            let mut fc = FalsifyConfig::new(SamplerKind::Uniform, n, cfg.seed);
            if let Some(name) = timepoint_feature(program) {
                fc.pinned.insert(name, 20.0);
            }
            let scenario = program.id.clone();
            let mut f =
                Falsifier::new(program, spec.clone(), fc).map_err(|source| Error::Falsify {
                    scenario: scenario.clone(),
                    source,
                })?;
            let stats = run_pool(&mut f, vec![ConstantVelocity; w.max(1)], |model, p| {
                if !cfg.real {
                    work.run();
                }
                evaluate(&p.scenario, model, &spec, eval_cfg)
                    .map(|o| o.evaluation)
                    .map_err(|e| e.to_string())
            })
            .map_err(|source| Error::Falsify {
                scenario: scenario.clone(),
                source,
            })?;
            trips += stats.guard_trips;
            seconds.push(stats.wall.as_secs_f64());
        }
        rows.push(BenchRow {
            iterations: n,
            seconds,
        });
    }
    Ok(BenchReport {
        workers: cfg.workers.clone(),
        rows,
        guard_trips: trips,
    })
}
