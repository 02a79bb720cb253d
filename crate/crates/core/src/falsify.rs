//! Sampler-driven falsification search.
//!
//! [`Falsifier`] is a single-owner state machine: [`Falsifier::next`]
//! proposes and concretizes the next sample (resampling rejected ones),
//! [`Falsifier::complete`] consumes its evaluation. Callers may complete
//! samples in any order; [`falsify`] drives it sequentially.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::f64::consts::SQRT_2;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lang::{
    check_assignment, concretize, feature_space, ConcreteScenario, ConcretizeError, Concretized,
    Distribution, Feature, ScenarioProgram,
};
use crate::metrics::{rho, MetricError, MetricKind, MetricSpec, RhoTuple, RunStats};

/// Concretization attempts per sample before giving up.
pub const MAX_ATTEMPTS: usize = 100;
/// Bins per Range feature in the bandit sampler.
pub const DEFAULT_BINS: usize = 10;
const UCB_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Uniform,
    Halton,
    Mab,
}

impl SamplerKind {
    pub fn name(self) -> &'static str {
        match self {
            SamplerKind::Uniform => "uniform",
            SamplerKind::Halton => "halton",
            SamplerKind::Mab => "mab",
        }
    }
}

impl core::str::FromStr for SamplerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "uniform" => Ok(SamplerKind::Uniform),
            "halton" => Ok(SamplerKind::Halton),
            "mab" => Ok(SamplerKind::Mab),
            _ => Err(alloc::format!(
                "unknown sampler `{s}` (expected uniform, halton or mab)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FalsifyError {
    #[error("sampler expects {expected} features, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("no accepted sample after {attempts} attempts (requirement rejections {by_requirement:?}); last assignment {last:?}")]
    RejectionCap {
        attempts: usize,
        by_requirement: BTreeMap<usize, usize>,
        last: BTreeMap<String, f64>,
    },
    #[error("concretization failed for {assignment:?}: {source}")]
    Concretize {
        assignment: BTreeMap<String, f64>,
        source: ConcretizeError,
    },
    #[error("pinned feature: {0}")]
    Pinned(ConcretizeError),
    #[error("n_samples must be at least 1")]
    NoSamples,
    #[error("invalid metric spec: {0}")]
    Spec(MetricError),
    #[error("unknown sample index {0}")]
    UnknownSample(usize),
}

fn unit(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn support(dist: &Distribution) -> (f64, f64, &[crate::lang::Literal]) {
    match dist {
        Distribution::Range { lo, hi } => (lo.value, hi.value, &[]),
        Distribution::Choice { values } => (0.0, 0.0, values),
        Distribution::Constant { value } => {
            (value.value, value.value, core::slice::from_ref(value))
        }
    }
}

/// Van der Corput radical inverse of `i` in `base`.
pub fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += (i % base) as f64 * f;
        i /= base;
        f *= inv;
    }
    r
}

/// The first `n` primes.
pub fn primes(n: usize) -> Vec<u64> {
    let mut out: Vec<u64> = Vec::with_capacity(n);
    let mut c = 2u64;
    while out.len() < n {
        if out
            .iter()
            .take_while(|&&p| p * p <= c)
            .all(|&p| !c.is_multiple_of(p))
        {
            out.push(c);
        }
        c += 1;
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Arm {
    /// Rewards received.
    pub n: u64,
    /// Proposals awaiting feedback.
    pub pending: u64,
    pub reward_sum: f64,
}

impl Arm {
    pub fn mean(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.reward_sum / self.n as f64
        }
    }

    fn pulls(&self) -> u64 {
        self.n + self.pending
    }
}

/// Per-feature independent UCB1 bandits.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MabState {
    pub bins: usize,
    pub c: f64,
    /// One arm list per feature: `bins` for Range, one per value for Choice.
    pub arms: Vec<Vec<Arm>>,
    pub total: u64,
}

impl MabState {
    fn new(features: &[Feature], bins: usize, c: f64) -> Self {
        let arms = features
            .iter()
            .map(|f| match &f.distribution {
                Distribution::Choice { values } => alloc::vec![Arm::default(); values.len()],
                Distribution::Range { .. } => alloc::vec![Arm::default(); bins],
                Distribution::Constant { .. } => alloc::vec![Arm::default()],
            })
            .collect();
        MabState {
            bins,
            c,
            arms,
            total: 0,
        }
    }

    /// Arm with the highest UCB score; never-pulled arms first, lowest index on ties.
    pub fn select(&self, feature: usize) -> usize {
        let arms = &self.arms[feature];
        if let Some(i) = arms.iter().position(|a| a.pulls() == 0) {
            return i;
        }
        let ln = libm::log(self.total as f64 + 1.0);
        let mut best = (f64::NEG_INFINITY, 0);
        for (i, a) in arms.iter().enumerate() {
            let ucb = a.mean() + self.c * libm::sqrt(ln / (a.pulls() as f64 + UCB_EPS));
            if ucb > best.0 {
                best = (ucb, i);
            }
        }
        best.1
    }

    /// Arm that `value` of `feature` falls into.
    pub fn arm_of(&self, feature: &Feature, value: f64) -> usize {
        match &feature.distribution {
            Distribution::Range { lo, hi } => {
                let b = libm::floor((value - lo.value) / (hi.value - lo.value) * self.bins as f64);
                (b.max(0.0) as usize).min(self.bins - 1)
            }
            Distribution::Choice { values } => {
                values.iter().position(|v| v.value == value).unwrap_or(0)
            }
            Distribution::Constant { .. } => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SamplerState {
    Uniform {
        rng: ChaCha8Rng,
    },
    /// `index` is the next Halton index, starting at 1.
    Halton {
        index: u64,
    },
    Mab {
        state: MabState,
        rng: ChaCha8Rng,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sampler {
    dim: usize,
    pub state: SamplerState,
}

impl Sampler {
    pub fn new(kind: SamplerKind, features: &[Feature], seed: u64) -> Self {
        Self::with_bins(kind, features, seed, DEFAULT_BINS, SQRT_2)
    }

    pub fn with_bins(
        kind: SamplerKind,
        features: &[Feature],
        seed: u64,
        bins: usize,
        c: f64,
    ) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(seed);
        let state = match kind {
            SamplerKind::Uniform => SamplerState::Uniform { rng },
            SamplerKind::Halton => SamplerState::Halton { index: 1 },
            SamplerKind::Mab => SamplerState::Mab {
                state: MabState::new(features, bins.max(1), c),
                rng,
            },
        };
        Sampler {
            dim: features.len(),
            state,
        }
    }

    pub fn kind(&self) -> SamplerKind {
        match self.state {
            SamplerState::Uniform { .. } => SamplerKind::Uniform,
            SamplerState::Halton { .. } => SamplerKind::Halton,
            SamplerState::Mab { .. } => SamplerKind::Mab,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mab(&self) -> Option<&MabState> {
        match &self.state {
            SamplerState::Mab { state, .. } => Some(state),
            _ => None,
        }
    }

    fn check_dim(&self, features: &[Feature]) -> Result<(), FalsifyError> {
        if features.len() != self.dim {
            return Err(FalsifyError::Dimension {
                expected: self.dim,
                got: features.len(),
            });
        }
        Ok(())
    }

    /// Next assignment over `features`.
    pub fn propose(&mut self, features: &[Feature]) -> Result<BTreeMap<String, f64>, FalsifyError> {
        self.check_dim(features)?;
        let mut out = BTreeMap::new();
        match &mut self.state {
            SamplerState::Uniform { rng } => {
                for f in features {
                    let (lo, hi, values) = support(&f.distribution);
                    let v = if values.is_empty() {
                        lo + unit(rng) * (hi - lo)
                    } else {
                        let i = (unit(rng) * values.len() as f64) as usize;
                        values[i.min(values.len() - 1)].value
                    };
                    out.insert(f.name.clone(), v);
                }
            }
            SamplerState::Halton { index } => {
                let i = *index;
                *index += 1;
                for (f, base) in features.iter().zip(primes(features.len())) {
                    let (lo, hi, values) = support(&f.distribution);
                    let v = if values.is_empty() {
                        lo + radical_inverse(i, base) * (hi - lo)
                    } else {
                        values[((i - 1) % values.len() as u64) as usize].value
                    };
                    out.insert(f.name.clone(), v);
                }
            }
            SamplerState::Mab { state, rng } => {
                for (fi, f) in features.iter().enumerate() {
                    let arm = state.select(fi);
                    state.arms[fi][arm].pending += 1;
                    let v = match &f.distribution {
                        Distribution::Range { lo, hi } => {
                            let w = (hi.value - lo.value) / state.bins as f64;
                            (lo.value + (arm as f64 + unit(rng)) * w).min(hi.value)
                        }
                        Distribution::Choice { values } => values[arm].value,
                        Distribution::Constant { value } => value.value,
                    };
                    out.insert(f.name.clone(), v);
                }
                state.total += 1;
            }
        }
        Ok(out)
    }

    /// Withdraws a proposal that will never be fed back (e.g. rejected).
    pub fn cancel(&mut self, features: &[Feature], assignment: &BTreeMap<String, f64>) {
        if let SamplerState::Mab { state, .. } = &mut self.state {
            for (fi, f) in features.iter().enumerate() {
                if let Some(&v) = assignment.get(&f.name) {
                    let arm = state.arm_of(f, v);
                    let a = &mut state.arms[fi][arm];
                    a.pending = a.pending.saturating_sub(1);
                }
            }
            state.total = state.total.saturating_sub(1);
        }
    }

    /// Feeds the outcome of `assignment` back; Uniform and Halton ignore it.
    pub fn feed(
        &mut self,
        features: &[Feature],
        assignment: &BTreeMap<String, f64>,
        reward_value: f64,
    ) {
        if let SamplerState::Mab { state, .. } = &mut self.state {
            for (fi, f) in features.iter().enumerate() {
                if let Some(&v) = assignment.get(&f.name) {
                    let arm = state.arm_of(f, v);
                    let a = &mut state.arms[fi][arm];
                    a.pending = a.pending.saturating_sub(1);
                    a.n += 1;
                    a.reward_sum += reward_value;
                }
            }
        }
    }
}

/// Bandit reward in [0, 1]: priority-weighted mean of `(1 - s_i) / 2` with
/// `s_i = clamp(score_i / threshold_i, -1, 1)` and weights `2^-level`.
pub fn reward(spec: &MetricSpec, rho: &RhoTuple) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (e, &score) in spec.entries.iter().zip(&rho.scores) {
        let s = if score.is_nan() {
            -1.0
        } else {
            (score / e.threshold).clamp(-1.0, 1.0)
        };
        let w = libm::exp2(-(e.level as f64));
        num += w * (1.0 - s) / 2.0;
        den += w;
    }
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// SplitMix64 finalizer; derives per-sample seeds.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn sample_seed(run_seed: u64, index: usize) -> u64 {
    splitmix64(run_seed ^ splitmix64(index as u64))
}

/// Metric values and rho of one evaluated sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub min_ade: f64,
    pub min_fde: f64,
    pub rho: RhoTuple,
}

impl Evaluation {
    pub fn from_metrics(
        spec: &MetricSpec,
        min_ade: f64,
        min_fde: f64,
    ) -> Result<Self, MetricError> {
        Ok(Evaluation {
            min_ade,
            min_fde,
            rho: rho(spec, min_ade, min_fde)?,
        })
    }
}

/// A concretized sample handed to the evaluator.
#[derive(Debug, Clone)]
pub struct Proposal {
    pub index: usize,
    pub assignment: BTreeMap<String, f64>,
    pub scenario: ConcreteScenario,
    /// Requirement rejections before this sample was accepted.
    pub rejections: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorTableRow {
    pub index: usize,
    pub program_id: String,
    pub program_hash: String,
    pub timepoint: u32,
    pub seed: u64,
    pub assignment: BTreeMap<String, f64>,
    pub scores: Vec<f64>,
    pub min_ade: f64,
    pub min_fde: f64,
}

/// One line of the per-sample log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub index: usize,
    pub program_id: String,
    pub timepoint: u32,
    pub seed: u64,
    pub assignment: BTreeMap<String, f64>,
    pub rejections: usize,
    pub min_ade: Option<f64>,
    pub min_fde: Option<f64>,
    pub scores: Option<Vec<f64>>,
    pub is_counterexample: bool,
    pub reward: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FalsifyConfig {
    pub sampler: SamplerKind,
    pub n_samples: usize,
    pub seed: u64,
    /// Features held fixed for the whole run (e.g. the timepoint of a batch).
    pub pinned: BTreeMap<String, f64>,
    /// Recorded in error-table rows to detect replay against edited programs.
    pub program_hash: String,
}

impl FalsifyConfig {
    pub fn new(sampler: SamplerKind, n_samples: usize, seed: u64) -> Self {
        FalsifyConfig {
            sampler,
            n_samples,
            seed,
            pinned: BTreeMap::new(),
            program_hash: String::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct FalsifyResult {
    pub stats: RunStats,
    /// Sorted by sample index.
    pub error_table: Vec<ErrorTableRow>,
    /// Sorted by sample index.
    pub samples: Vec<SampleRecord>,
    pub rejected: usize,
    pub failed: usize,
}

impl FalsifyResult {
    /// Means of minADE and minFDE over evaluated samples.
    pub fn means(&self) -> Option<(f64, f64)> {
        let ok: Vec<_> = self
            .samples
            .iter()
            .filter_map(|s| Some((s.min_ade?, s.min_fde?)))
            .collect();
        if ok.is_empty() {
            return None;
        }
        let n = ok.len() as f64;
        Some((
            ok.iter().map(|p| p.0).sum::<f64>() / n,
            ok.iter().map(|p| p.1).sum::<f64>() / n,
        ))
    }

    pub fn min_fdes(&self) -> Vec<f64> {
        self.samples.iter().filter_map(|s| s.min_fde).collect()
    }
}

pub struct Falsifier<'p> {
    program: &'p ScenarioProgram,
    spec: MetricSpec,
    config: FalsifyConfig,
    /// Searchable features (feature space minus pinned ones).
    features: Vec<Feature>,
    all_features: Vec<Feature>,
    sampler: Sampler,
    issued: usize,
    in_flight: BTreeMap<usize, (BTreeMap<String, f64>, u32, u64, usize)>,
    result: FalsifyResult,
}

impl<'p> Falsifier<'p> {
    pub fn new(
        program: &'p ScenarioProgram,
        spec: MetricSpec,
        config: FalsifyConfig,
    ) -> Result<Self, FalsifyError> {
        if config.n_samples == 0 {
            return Err(FalsifyError::NoSamples);
        }
        spec.validate().map_err(FalsifyError::Spec)?;
        let all_features = feature_space(program);
        let pinned_features: Vec<Feature> = all_features
            .iter()
            .filter(|f| config.pinned.contains_key(&f.name))
            .cloned()
            .collect();
        check_assignment(&pinned_features, &config.pinned).map_err(FalsifyError::Pinned)?;
        let features: Vec<Feature> = all_features
            .iter()
            .filter(|f| !config.pinned.contains_key(&f.name))
            .cloned()
            .collect();
        let sampler = Sampler::new(config.sampler, &features, config.seed);
        Ok(Falsifier {
            program,
            spec,
            config,
            features,
            all_features,
            sampler,
            issued: 0,
            in_flight: BTreeMap::new(),
            result: FalsifyResult::default(),
        })
    }

    /// Features the sampler searches over.
    pub fn features(&self) -> &[Feature] {
        &self.features
    }

    pub fn all_features(&self) -> &[Feature] {
        &self.all_features
    }

    pub fn sampler(&self) -> &Sampler {
        &self.sampler
    }

    pub fn spec(&self) -> &MetricSpec {
        &self.spec
    }

    pub fn issued(&self) -> usize {
        self.issued
    }

    pub fn in_flight(&self) -> usize {
        self.in_flight.len()
    }

    pub fn is_done(&self) -> bool {
        self.issued == self.config.n_samples && self.in_flight.is_empty()
    }

    /// Proposes and concretizes the next sample; `None` once all are issued.
    pub fn next(&mut self) -> Result<Option<Proposal>, FalsifyError> {
        if self.issued >= self.config.n_samples {
            return Ok(None);
        }
        let index = self.issued;
        let seed = sample_seed(self.config.seed, index);
        let mut by_requirement = BTreeMap::new();
        let mut last = BTreeMap::new();
        for attempt in 0..MAX_ATTEMPTS {
            let mut assignment = self.sampler.propose(&self.features)?;
            let searched = assignment.clone();
            assignment.extend(self.config.pinned.iter().map(|(k, v)| (k.clone(), *v)));
            match concretize(self.program, &assignment, seed) {
                Ok(Concretized::Accepted(scenario)) => {
                    self.issued += 1;
                    self.result.rejected += attempt;
                    self.in_flight
                        .insert(index, (searched, scenario.timepoint, seed, attempt));
                    return Ok(Some(Proposal {
                        index,
                        assignment,
                        scenario,
                        rejections: attempt,
                    }));
                }
                Ok(Concretized::Rejected { requirement }) => {
                    self.sampler.cancel(&self.features, &searched);
                    *by_requirement.entry(requirement).or_insert(0) += 1;
                    last = assignment;
                }
                Err(source) => {
                    self.sampler.cancel(&self.features, &searched);
                    return Err(FalsifyError::Concretize { assignment, source });
                }
            }
        }
        Err(FalsifyError::RejectionCap {
            attempts: MAX_ATTEMPTS,
            by_requirement,
            last,
        })
    }

    /// Records the evaluation of sample `index`; errors are logged, not fatal.
    pub fn complete(
        &mut self,
        index: usize,
        outcome: Result<Evaluation, String>,
    ) -> Result<(), FalsifyError> {
        let (searched, timepoint, seed, rejections) = self
            .in_flight
            .remove(&index)
            .ok_or(FalsifyError::UnknownSample(index))?;
        let mut assignment = searched.clone();
        assignment.extend(self.config.pinned.iter().map(|(k, v)| (k.clone(), *v)));
        let mut record = SampleRecord {
            index,
            program_id: self.program.id.clone(),
            timepoint,
            seed,
            assignment: assignment.clone(),
            rejections,
            min_ade: None,
            min_fde: None,
            scores: None,
            is_counterexample: false,
            reward: None,
            error: None,
        };
        match outcome {
            Ok(eval) => {
                let r = reward(&self.spec, &eval.rho);
                self.sampler.feed(&self.features, &searched, r);
                if eval.rho.is_counterexample {
                    self.result.error_table.push(ErrorTableRow {
                        index,
                        program_id: self.program.id.clone(),
                        program_hash: self.config.program_hash.clone(),
                        timepoint,
                        seed,
                        assignment,
                        scores: eval.rho.scores.clone(),
                        min_ade: eval.min_ade,
                        min_fde: eval.min_fde,
                    });
                }
                record.min_ade = Some(eval.min_ade);
                record.min_fde = Some(eval.min_fde);
                record.is_counterexample = eval.rho.is_counterexample;
                record.scores = Some(eval.rho.scores);
                record.reward = Some(r);
            }
            Err(e) => {
                self.sampler.cancel(&self.features, &searched);
                self.result.failed += 1;
                record.error = Some(e);
            }
        }
        self.result.samples.push(record);
        Ok(())
    }

    /// Final result with rows, samples and observations ordered by index,
    /// so it does not depend on completion order.
    pub fn finish(mut self) -> FalsifyResult {
        self.result.error_table.sort_by_key(|r| r.index);
        self.result.samples.sort_by_key(|s| s.index);
        for s in self.result.samples.iter().filter(|s| s.error.is_none()) {
            self.result.stats.record(&s.assignment, s.is_counterexample);
        }
        self.result
    }
}

/// Runs `config.n_samples` samples sequentially through `evaluate`.
pub fn falsify(
    program: &ScenarioProgram,
    spec: &MetricSpec,
    config: FalsifyConfig,
    mut evaluate: impl FnMut(&Proposal) -> Result<Evaluation, String>,
) -> Result<FalsifyResult, FalsifyError> {
    let mut f = Falsifier::new(program, spec.clone(), config)?;
    while let Some(p) = f.next()? {
        let outcome = evaluate(&p);
        f.complete(p.index, outcome)?;
    }
    Ok(f.finish())
}

/// Human-readable names of the spec entries, aligned with rho scores.
pub fn score_names(spec: &MetricSpec) -> Vec<String> {
    spec.entries
        .iter()
        .map(|e| e.metric.name().to_string())
        .collect()
}

/// Whether `spec` contains an entry for `kind`.
pub fn has_metric(spec: &MetricSpec, kind: MetricKind) -> bool {
    spec.entries.iter().any(|e| e.metric == kind)
}
