//! Experiment orchestration.
//!
//! A run plans one request per (run, scenario, target, polarity, sample),
//! sends them through a bounded worker pool, and streams every raw completion
//! to a JSONL log through a single writer. Metrics are computed only after the
//! log is sealed, from records sorted by key, so the same log always yields
//! the same report regardless of arrival order or concurrency.

mod config;
mod log;

pub use config::{AblationGrid, BackendSpec, Mode, RunConfig};
pub use log::{read_log_file, read_run_logs, run_log_path, LogRecord, SampleKey};

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backend::{Backend, BackendError, RawCompletion, SamplingParams};
use crate::consistency::{self, DecisionSample, Polarity, VoteTally};
use crate::dataset::{load_dataset, Dataset, DatasetError, Level, LoadOptions, Scenario};
use crate::metrics::{
    aggregate_runs, DecisionOutcome, Diagnostics, MetricsError, MetricsReport, RunMetrics,
    ScoredDecision,
};
use crate::parsing::{parse, ParseOutcome};
use crate::prompts::{assemble, AlignmentMode, AlignmentTarget, PromptBundle};
use log::LogSink;

pub const CONFIG_FILE: &str = "config.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const DECISIONS_FILE: &str = "decisions.jsonl";

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("backend setup failed: {0}")]
    BackendSetup(#[source] BackendError),
    #[error("request for {key} failed: {source}")]
    Backend {
        key: SampleKey,
        #[source]
        source: BackendError,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: bad log record: {message}")]
    LogFormat {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("run log is incomplete: missing {key}")]
    IncompleteLog { key: SampleKey },
    #[error("run log has more than one record for {key}")]
    DuplicateRecord { key: SampleKey },
    #[error("no scenarios in the dataset match the selected attributes")]
    NoScenarios,
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Which records an evaluation reads and how it combines them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalPlan {
    pub mode: Mode,
    pub targets: Vec<AlignmentTarget>,
    pub n_pos: u32,
    pub n_neg: u32,
    pub runs: u32,
    pub base_seed: u64,
}

impl EvalPlan {
    pub fn from_config(config: &RunConfig) -> Self {
        EvalPlan {
            mode: config.mode,
            targets: config.targets.clone(),
            n_pos: config.n_pos,
            n_neg: config.n_neg,
            runs: config.runs,
            base_seed: config.base_seed,
        }
    }

    /// Targets each decision is scored against. Unaligned decisions are
    /// scored against both levels of every selected attribute.
    pub fn scored_targets(&self) -> Vec<AlignmentTarget> {
        match self.mode {
            Mode::Unaligned => {
                let attrs: BTreeSet<_> = self.targets.iter().map(|t| t.attribute).collect();
                attrs
                    .into_iter()
                    .flat_map(|a| Level::ALL.iter().map(move |&l| AlignmentTarget::new(a, l)))
                    .collect()
            }
            Mode::Aligned | Mode::AlignedSc => self.targets.clone(),
        }
    }

    fn scenarios<'d>(&self, dataset: &'d Dataset) -> Vec<&'d Scenario> {
        let attrs: BTreeSet<_> = self.targets.iter().map(|t| t.attribute).collect();
        dataset
            .scenarios
            .iter()
            .filter(|s| attrs.contains(&s.primary_attribute))
            .collect()
    }

    /// (target, polarity, sample_index, prompt mode) of every sample behind
    /// one decision on `target`.
    fn samples_for(
        &self,
        target: AlignmentTarget,
    ) -> Vec<(Option<AlignmentTarget>, Polarity, u32, AlignmentMode)> {
        match self.mode {
            Mode::Unaligned => vec![(None, Polarity::Positive, 0, AlignmentMode::Unaligned)],
            Mode::Aligned => vec![(
                Some(target),
                Polarity::Positive,
                0,
                AlignmentMode::Aligned { target },
            )],
            Mode::AlignedSc => {
                let pos = (0..self.n_pos).map(|i| {
                    (
                        Some(target),
                        Polarity::Positive,
                        i,
                        AlignmentMode::Aligned { target },
                    )
                });
                let neg = (0..self.n_neg).map(|i| {
                    (
                        Some(target),
                        Polarity::Negative,
                        i,
                        AlignmentMode::Aligned {
                            target: target.opposite(),
                        },
                    )
                });
                pos.chain(neg).collect()
            }
        }
    }
}

/// Per-request seed: the first 8 bytes of a SHA-256 over the identifying fields.
pub fn derive_seed(
    base_seed: u64,
    run_index: u32,
    scenario_id: &str,
    polarity: Polarity,
    sample_index: u32,
) -> u64 {
    let mut h = Sha256::new();
    h.update(b"sample");
    h.update(base_seed.to_le_bytes());
    h.update(run_index.to_le_bytes());
    h.update((scenario_id.len() as u64).to_le_bytes());
    h.update(scenario_id.as_bytes());
    h.update([polarity as u8]);
    h.update(sample_index.to_le_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

fn trace_seed(base_seed: u64, run_index: u32, scenario_id: &str, target: AlignmentTarget) -> u64 {
    let mut h = Sha256::new();
    h.update(b"trace");
    h.update(base_seed.to_le_bytes());
    h.update(run_index.to_le_bytes());
    h.update((scenario_id.len() as u64).to_le_bytes());
    h.update(scenario_id.as_bytes());
    h.update(target.to_string().as_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

pub fn prompt_hash(bundle: &PromptBundle) -> String {
    let mut h = Sha256::new();
    h.update(bundle.system.as_bytes());
    h.update([0]);
    h.update(bundle.user.as_bytes());
    hex::encode(h.finalize())
}

/// A request ready to send.
#[derive(Debug, Clone)]
pub struct PlannedRequest {
    pub key: SampleKey,
    pub bundle: PromptBundle,
    pub params: SamplingParams,
    pub n_choices: usize,
}

/// Every request a configuration needs, in key order.
pub fn plan_requests(
    config: &RunConfig,
    dataset: &Dataset,
) -> Result<Vec<PlannedRequest>, RunError> {
    let plan = EvalPlan::from_config(config);
    let temperature = config.temperature();
    let mut requests = BTreeMap::new();
    for run_index in 0..config.runs {
        for scenario in plan.scenarios(dataset) {
            for target in plan.scored_targets() {
                if target.attribute != scenario.primary_attribute {
                    continue;
                }
                for (key_target, polarity, sample_index, mode) in plan.samples_for(target) {
                    let key = SampleKey {
                        run_index,
                        scenario_id: scenario.id.clone(),
                        target: key_target,
                        polarity,
                        sample_index,
                    };
                    if requests.contains_key(&key) {
                        continue;
                    }
                    let seed = derive_seed(
                        config.base_seed,
                        run_index,
                        &scenario.id,
                        polarity,
                        sample_index,
                    );
                    let params = SamplingParams::new(temperature, config.max_tokens, Some(seed))
                        .map_err(|e| RunError::Config(e.to_string()))?;
                    requests.insert(
                        key.clone(),
                        PlannedRequest {
                            key,
                            bundle: assemble(scenario, mode),
                            params,
                            n_choices: scenario.choices.len(),
                        },
                    );
                }
            }
        }
    }
    Ok(requests.into_values().collect())
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn record_for(req: &PlannedRequest, mode: Mode, completion: RawCompletion) -> LogRecord {
    LogRecord {
        run_index: req.key.run_index,
        scenario_id: req.key.scenario_id.clone(),
        prompt_mode: mode,
        target: req.key.target,
        polarity: req.key.polarity,
        sample_index: req.key.sample_index,
        fingerprint: completion.request_fingerprint,
        prompt_hash: prompt_hash(&req.bundle),
        params: req.params,
        backend_id: completion.backend_id,
        latency_ms: completion.latency_ms,
        parse_outcome: parse(&completion.text, req.n_choices).into(),
        raw_text: completion.text,
        timestamp_ms: now_ms(),
    }
}

/// Sends `requests` through `concurrency` workers. Completed records are
/// handed, in arrival order, to `sink` on the calling thread. The first
/// backend error stops new requests from being issued and is returned once
/// in-flight ones drain.
fn execute(
    backend: &dyn Backend,
    requests: &[PlannedRequest],
    mode: Mode,
    concurrency: usize,
    mut sink: impl FnMut(LogRecord) -> Result<(), RunError>,
) -> Result<(), RunError> {
    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let workers = concurrency.clamp(1, requests.len().max(1));
    let (tx, rx) = mpsc::channel::<(usize, Result<RawCompletion, BackendError>)>();
    let mut first_error = None;
    std::thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let (next, abort) = (&next, &abort);
            scope.spawn(move || loop {
                if abort.load(Ordering::Relaxed) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(req) = requests.get(i) else { break };
                let result = backend.complete(&req.bundle, &req.params, req.key.sample_index);
                if tx.send((i, result)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for (i, result) in rx {
            if first_error.is_some() {
                continue;
            }
            let req = &requests[i];
            let outcome = result
                .map_err(|source| RunError::Backend {
                    key: req.key.clone(),
                    source,
                })
                .and_then(|c| sink(record_for(req, mode, c)));
            if let Err(e) = outcome {
                abort.store(true, Ordering::Relaxed);
                first_error = Some(e);
            }
        }
    });
    first_error.map_or(Ok(()), Err)
}

/// A scored decision plus the evidence behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub run_index: u32,
    pub scenario_id: String,
    pub target: AlignmentTarget,
    pub chosen_index: Option<usize>,
    pub score: u8,
    pub outcome: DecisionOutcome,
    /// Present for self-consistency decisions with at least one valid sample.
    pub tally: Option<VoteTally>,
    /// Reasoning of a sample that chose the winner.
    pub trace: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub runs: Vec<RunMetrics>,
    pub decisions: Vec<DecisionRecord>,
}

impl Evaluation {
    pub fn decisions_jsonl(&self) -> String {
        self.decisions
            .iter()
            .map(|d| serde_json::to_string(d).expect("decision serializes") + "\n")
            .collect()
    }
}

/// Scores a sealed log. Reads only the records `plan` needs; anything extra
/// (such as the rest of a larger sample pool) is ignored.
pub fn evaluate(
    records: &[LogRecord],
    dataset: &Dataset,
    plan: &EvalPlan,
) -> Result<Evaluation, RunError> {
    let mut index: BTreeMap<SampleKey, &LogRecord> = BTreeMap::new();
    for r in records {
        if index.insert(r.key(), r).is_some() {
            return Err(RunError::DuplicateRecord { key: r.key() });
        }
    }
    let scenarios = plan.scenarios(dataset);
    if scenarios.is_empty() {
        return Err(RunError::NoScenarios);
    }
    let targets = plan.scored_targets();
    let mut runs = Vec::new();
    let mut decisions = Vec::new();
    for run_index in 0..plan.runs {
        let mut scored = Vec::new();
        let mut diagnostics = Diagnostics::default();
        // Unaligned decisions share one sample across both levels; count its
        // parse failure once.
        let mut counted = BTreeSet::new();
        for scenario in &scenarios {
            let n = scenario.choices.len();
            for &target in targets
                .iter()
                .filter(|t| t.attribute == scenario.primary_attribute)
            {
                let mut samples = Vec::new();
                for (key_target, polarity, sample_index, _) in plan.samples_for(target) {
                    let key = SampleKey {
                        run_index,
                        scenario_id: scenario.id.clone(),
                        target: key_target,
                        polarity,
                        sample_index,
                    };
                    let record = index
                        .get(&key)
                        .ok_or_else(|| RunError::IncompleteLog { key: key.clone() })?;
                    let decision: ParseOutcome = parse(&record.raw_text, n).into();
                    if let ParseOutcome::Failed(e) = &decision {
                        if counted.insert(key) {
                            *diagnostics
                                .parse_failures
                                .entry(e.kind.as_str().to_string())
                                .or_default() += 1;
                        }
                    }
                    samples.push(DecisionSample {
                        polarity,
                        decision,
                        sample_index,
                    });
                }
                let (chosen, tally, trace) = match consistency::tally(&samples, n) {
                    Ok(t) => {
                        let winner = consistency::select(&t);
                        let trace = consistency::select_trace(
                            &samples,
                            winner,
                            trace_seed(plan.base_seed, run_index, &scenario.id, target),
                        );
                        (Some(winner), Some(t), trace)
                    }
                    Err(_) => (None, None, String::new()),
                };
                let d = match chosen {
                    Some(i) => ScoredDecision::new(&scenario.id, target, i, &scenario.choices[i]),
                    None => ScoredDecision::unparseable(&scenario.id, target),
                };
                decisions.push(DecisionRecord {
                    run_index,
                    scenario_id: scenario.id.clone(),
                    target,
                    chosen_index: d.chosen_index,
                    score: d.score,
                    outcome: d.outcome,
                    tally: if plan.mode == Mode::AlignedSc {
                        tally
                    } else {
                        None
                    },
                    trace,
                });
                scored.push(d);
            }
        }
        runs.push(RunMetrics::from_scored(&scored, diagnostics)?);
    }
    let report = aggregate_runs(&runs)?;
    Ok(Evaluation {
        report,
        runs,
        decisions,
    })
}

/// Recomputes an evaluation from stored records without touching a backend.
pub fn replay(
    records: &[LogRecord],
    dataset: &Dataset,
    plan: &EvalPlan,
) -> Result<Evaluation, RunError> {
    evaluate(records, dataset, plan)
}

/// Replays an output directory written by [`run`]. `dataset` overrides the
/// path recorded in its `config.json`.
pub fn replay_dir(out: &Path, dataset: Option<&Path>) -> Result<(RunConfig, Evaluation), RunError> {
    let config = RunConfig::load(&out.join(CONFIG_FILE))?;
    let path = dataset.unwrap_or(&config.dataset);
    let data = load_dataset(
        path,
        LoadOptions {
            lenient: config.lenient,
        },
    )?;
    let records = read_run_logs(out)?;
    let eval = replay(&records, &data, &EvalPlan::from_config(&config))?;
    Ok((config, eval))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub records: Vec<LogRecord>,
    pub evaluation: Evaluation,
    pub backend_id: String,
    pub started_ms: u64,
    pub finished_ms: u64,
}

fn write_file(path: &Path, contents: &str) -> Result<(), RunError> {
    std::fs::write(path, contents).map_err(|source| RunError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Draws every sample `config` needs, logging as it goes.
fn collect(
    config: &RunConfig,
    dataset: &Dataset,
    backend: &dyn Backend,
) -> Result<Vec<LogRecord>, RunError> {
    let requests = plan_requests(config, dataset)?;
    if requests.is_empty() {
        return Err(RunError::NoScenarios);
    }
    let mut sinks: BTreeMap<u32, LogSink> = BTreeMap::new();
    if let Some(out) = &config.out {
        let runs_dir = out.join("runs");
        std::fs::create_dir_all(&runs_dir).map_err(|source| RunError::Io {
            path: runs_dir,
            source,
        })?;
        write_file(&out.join(CONFIG_FILE), &config.to_json())?;
        for r in 0..config.runs {
            sinks.insert(
                r,
                LogSink::create(&run_log_path(out, r, config.gzip), config.gzip)?,
            );
        }
    }
    let mut records = Vec::with_capacity(requests.len());
    let result = execute(
        backend,
        &requests,
        config.mode,
        config.concurrency,
        |record| {
            if let (Some(out), Some(sink)) = (&config.out, sinks.get_mut(&record.run_index)) {
                sink.append(&record).map_err(|source| RunError::Io {
                    path: run_log_path(out, record.run_index, config.gzip),
                    source,
                })?;
            }
            records.push(record);
            Ok(())
        },
    );
    // Seal the logs even after a failure so completed samples survive.
    for (r, sink) in sinks {
        let out = config.out.as_deref().expect("sinks imply an output dir");
        sink.finish().map_err(|source| RunError::Io {
            path: run_log_path(out, r, config.gzip),
            source,
        })?;
    }
    result?;
    Ok(records)
}

fn load_for(config: &RunConfig) -> Result<Dataset, RunError> {
    config.validate()?;
    Ok(load_dataset(
        &config.dataset,
        LoadOptions {
            lenient: config.lenient,
        },
    )?)
}

/// Runs an experiment against an already loaded dataset and backend.
pub fn run_with(
    config: &RunConfig,
    dataset: &Dataset,
    backend: &dyn Backend,
) -> Result<RunOutcome, RunError> {
    config.validate()?;
    let started_ms = now_ms();
    let records = collect(config, dataset, backend)?;
    let evaluation = evaluate(&records, dataset, &EvalPlan::from_config(config))?;
    if let Some(out) = &config.out {
        write_file(&out.join(METRICS_FILE), &evaluation.report.to_json())?;
        write_file(&out.join(DECISIONS_FILE), &evaluation.decisions_jsonl())?;
    }
    Ok(RunOutcome {
        records,
        evaluation,
        backend_id: backend.backend_id(),
        started_ms,
        finished_ms: now_ms(),
    })
}

/// Loads the dataset, builds the backend and runs the experiment.
pub fn run(config: &RunConfig) -> Result<RunOutcome, RunError> {
    let dataset = load_for(config)?;
    let backend = config
        .backend
        .build(&dataset)
        .map_err(RunError::BackendSetup)?;
    run_with(config, &dataset, backend.as_ref())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationOutcome {
    /// The superset pool that every cell reads from.
    pub pool: RunOutcome,
    pub cells: Vec<((u32, u32), MetricsReport)>,
}

/// The configuration `ablate` actually draws: self-consistency with the
/// largest positive and negative counts in the grid.
pub fn pool_config(config: &RunConfig, grid: &AblationGrid) -> RunConfig {
    RunConfig {
        mode: Mode::AlignedSc,
        n_pos: grid.max_pos(),
        n_neg: grid.max_neg(),
        ..config.clone()
    }
}

/// Evaluates every grid cell on prefixes of one shared sample pool.
pub fn ablate_with(
    config: &RunConfig,
    grid: &AblationGrid,
    dataset: &Dataset,
    backend: &dyn Backend,
) -> Result<AblationOutcome, RunError> {
    let pool_cfg = pool_config(config, grid);
    let pool = run_with(&pool_cfg, dataset, backend)?;
    let cells = grid
        .cells()
        .iter()
        .map(|&(n_pos, n_neg)| {
            let plan = EvalPlan {
                n_pos,
                n_neg,
                ..EvalPlan::from_config(&pool_cfg)
            };
            Ok((
                (n_pos, n_neg),
                evaluate(&pool.records, dataset, &plan)?.report,
            ))
        })
        .collect::<Result<Vec<_>, RunError>>()?;
    Ok(AblationOutcome { pool, cells })
}

pub fn ablate(config: &RunConfig, grid: &AblationGrid) -> Result<AblationOutcome, RunError> {
    let pool_cfg = pool_config(config, grid);
    let dataset = load_for(&pool_cfg)?;
    let backend = config
        .backend
        .build(&dataset)
        .map_err(RunError::BackendSetup)?;
    ablate_with(config, grid, &dataset, backend.as_ref())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{MockBackend, MockPolicy};
    use crate::dataset::{parse_dataset, Attribute};

    const DATA: &str = r#"{"scenarios": [
      {"id": "f1", "context": "c", "question": "q", "attribute": "fairness",
       "choices": [{"text": "a", "labels": {"fairness": "high"}},
                   {"text": "b", "labels": {"fairness": "low"}}]},
      {"id": "f2", "context": "c", "question": "q", "attribute": "fairness",
       "choices": [{"text": "a", "labels": {"fairness": "low"}},
                   {"text": "b", "labels": {"fairness": "high"}},
                   {"text": "c", "labels": {}}]},
      {"id": "r1", "context": "c", "question": "q", "attribute": "risk_aversion",
       "choices": [{"text": "a", "labels": {"risk_aversion": "low"}},
                   {"text": "b", "labels": {"risk_aversion": "high"}}]}]}"#;

    fn dataset() -> Dataset {
        parse_dataset(DATA, LoadOptions::default()).unwrap()
    }

    fn config(mode: Mode, policy: MockPolicy) -> RunConfig {
        RunConfig::new("unused.json", BackendSpec::Mock { policy }, mode)
    }

    fn run_mock(config: &RunConfig) -> RunOutcome {
        let d = dataset();
        let backend = config.backend.build(&d).unwrap();
        run_with(config, &d, backend.as_ref()).unwrap()
    }

    #[test]
    fn seeds_differ_by_every_field() {
        let base = derive_seed(1, 0, "s", Polarity::Positive, 0);
        assert_eq!(base, derive_seed(1, 0, "s", Polarity::Positive, 0));
        for other in [
            derive_seed(2, 0, "s", Polarity::Positive, 0),
            derive_seed(1, 1, "s", Polarity::Positive, 0),
            derive_seed(1, 0, "t", Polarity::Positive, 0),
            derive_seed(1, 0, "s", Polarity::Negative, 0),
            derive_seed(1, 0, "s", Polarity::Positive, 1),
        ] {
            assert_ne!(base, other);
        }
    }

    #[test]
    fn request_counts_per_mode() {
        let d = dataset();
        let mut c = config(Mode::AlignedSc, MockPolicy::Oracle);
        c.runs = 2;
        // 3 scenarios x 2 levels x (5 + 5) samples x 2 runs
        assert_eq!(plan_requests(&c, &d).unwrap().len(), 120);
        c.mode = Mode::Aligned;
        assert_eq!(plan_requests(&c, &d).unwrap().len(), 12);
        c.mode = Mode::Unaligned;
        assert_eq!(plan_requests(&c, &d).unwrap().len(), 6);
        c.targets = vec![AlignmentTarget::new(Attribute::Fairness, Level::Low)];
        assert_eq!(plan_requests(&c, &d).unwrap().len(), 4);
    }

    #[test]
    fn negative_samples_use_opposite_prompt() {
        let d = dataset();
        let mut c = config(Mode::AlignedSc, MockPolicy::Oracle);
        c.targets = vec![AlignmentTarget::new(Attribute::Fairness, Level::High)];
        for req in plan_requests(&c, &d).unwrap() {
            let prompted = req.bundle.mode.target().unwrap();
            match req.key.polarity {
                Polarity::Positive => assert_eq!(prompted.level, Level::High),
                Polarity::Negative => assert_eq!(prompted.level, Level::Low),
            }
            assert_eq!(req.params.temperature, 0.7);
        }
    }

    #[test]
    fn oracle_scores_perfectly() {
        for mode in [Mode::Aligned, Mode::AlignedSc] {
            let out = run_mock(&config(mode, MockPolicy::Oracle));
            let r = &out.evaluation.report;
            assert_eq!(r.overall_high.unwrap().mean, 1.0);
            assert_eq!(r.overall_low.unwrap().mean, 1.0);
            assert_eq!(r.f1.unwrap().mean, 1.0);
        }
        let out = run_mock(&config(Mode::AlignedSc, MockPolicy::Adversarial));
        assert_eq!(out.evaluation.report.overall_high.unwrap().mean, 0.0);
        assert_eq!(out.evaluation.report.overall_low.unwrap().mean, 0.0);
    }

    #[test]
    fn unaligned_scores_both_levels() {
        let out = run_mock(&config(Mode::Unaligned, MockPolicy::FixedIndex(0)));
        let r = &out.evaluation.report;
        for t in r.per_target.chunks(2) {
            assert_eq!(t[0].accuracy.mean + t[1].accuracy.mean, 1.0);
        }
        assert_eq!(r.per_target.len(), 4);
    }

    #[test]
    fn unparseable_and_unlabeled_are_flagged() {
        // Index 2 only exists in f2, where it is unlabeled.
        let out = run_mock(&config(Mode::Aligned, MockPolicy::FixedIndex(2)));
        let diag = &out.evaluation.report.diagnostics;
        assert_eq!(diag.unlabeled_choices, 2);
        assert_eq!(diag.unparseable_decisions, 4);
        assert_eq!(diag.parse_failures.get("index_out_of_range"), Some(&4));
        assert_eq!(out.evaluation.report.overall_high.unwrap().mean, 0.0);
    }

    #[test]
    fn missing_record_is_named() {
        let d = dataset();
        let c = config(Mode::AlignedSc, MockPolicy::Oracle);
        let mut records = run_mock(&c).records;
        records.sort_by_key(|r| r.key());
        let removed = records.remove(7);
        match evaluate(&records, &d, &EvalPlan::from_config(&c)) {
            Err(RunError::IncompleteLog { key }) => assert_eq!(key, removed.key()),
            other => panic!("expected IncompleteLog, got {other:?}"),
        }
        records.push(removed.clone());
        records.push(removed);
        assert!(matches!(
            evaluate(&records, &d, &EvalPlan::from_config(&c)),
            Err(RunError::DuplicateRecord { .. })
        ));
    }

    #[test]
    fn arrival_order_does_not_matter() {
        let d = dataset();
        let c = config(Mode::AlignedSc, MockPolicy::SeededRandom(5));
        let out = run_mock(&c);
        let mut shuffled = out.records.clone();
        shuffled.reverse();
        let again = evaluate(&shuffled, &d, &EvalPlan::from_config(&c)).unwrap();
        assert_eq!(again, out.evaluation);
    }

    #[test]
    fn backend_error_stops_the_run() {
        let d = dataset();
        let c = config(Mode::Aligned, MockPolicy::Oracle);
        // No labels revealed, so every oracle call fails.
        let backend = MockBackend::new(MockPolicy::Oracle);
        assert!(matches!(
            run_with(&c, &d, &backend),
            Err(RunError::Backend { .. })
        ));
    }

    #[test]
    fn logs_written_and_replayed() {
        let dir = tempfile::tempdir().unwrap();
        let data_path = dir.path().join("data.json");
        std::fs::write(&data_path, DATA).unwrap();
        for gzip in [false, true] {
            let out_dir = dir.path().join(format!("out-{gzip}"));
            let mut c = RunConfig::new(
                &data_path,
                BackendSpec::Mock {
                    policy: MockPolicy::SeededRandom(1),
                },
                Mode::AlignedSc,
            );
            c.runs = 2;
            c.out = Some(out_dir.clone());
            c.gzip = gzip;
            let live = run(&c).unwrap();
            assert!(run_log_path(&out_dir, 1, gzip).exists());
            let (cfg, replayed) = replay_dir(&out_dir, None).unwrap();
            assert_eq!(cfg, c);
            assert_eq!(replayed.report.to_json(), live.evaluation.report.to_json());
            assert_eq!(
                std::fs::read_to_string(out_dir.join(METRICS_FILE)).unwrap(),
                live.evaluation.report.to_json()
            );
        }
    }

    #[test]
    fn ablation_cells_match_independent_runs() {
        let d = dataset();
        let c = config(Mode::AlignedSc, MockPolicy::SeededRandom(3));
        let grid = AblationGrid::new(vec![(1, 0), (3, 1), (5, 5)]).unwrap();
        let backend = c.backend.build(&d).unwrap();
        let ab = ablate_with(&c, &grid, &d, backend.as_ref()).unwrap();
        for ((p, n), report) in &ab.cells {
            let single = RunConfig {
                n_pos: *p,
                n_neg: *n,
                ..c.clone()
            };
            assert_eq!(
                &run_with(&single, &d, backend.as_ref())
                    .unwrap()
                    .evaluation
                    .report,
                report
            );
        }
    }
}
