//! Greedy block-by-block split search with pluggable accuracy evaluators.

mod evaluators;

pub use evaluators::{
    parse_accuracy_line, reference_resnet18_table, AccuracyTable, ExternalEvaluator, InternalEvaluator, TableMock,
    TableScale,
};

use crate::arch::{validate, Architecture};
use crate::tensor::{TensorError, WeightStore};
use crate::transform::{split_transform, TransformError};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

/// A network to score: the full candidate architecture, its plan and the
/// block currently being decided.
#[derive(Debug, Clone, Copy)]
pub struct Candidate<'a> {
    pub arch: &'a Architecture,
    pub factors: &'a [usize],
    pub block: usize,
    pub warm_start: Option<&'a WeightStore>,
    /// Training budget in epochs.
    pub budget: usize,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    /// Top-1 accuracy in `[0, 1]`.
    pub accuracy: f64,
    pub weights: Option<WeightStore>,
}

#[derive(Debug, thiserror::Error)]
pub enum EvaluatorError {
    #[error("no accuracy stored for block {block} factor {factor}")]
    MissingCell { block: usize, factor: usize },
    #[error("invalid accuracy table: {0}")]
    InvalidTable(String),
    #[error("empty evaluator command")]
    EmptyCommand,
    #[error("failed to start `{program}`: {source}")]
    Spawn { program: String, source: std::io::Error },
    #[error("evaluator exited with status {code:?}; stderr: {stderr}")]
    NonZeroExit { code: Option<i32>, stderr: String },
    #[error("evaluator output `{0}` is not an accuracy in [0, 1]")]
    UnparseableOutput(String),
    #[error("evaluator timed out after {seconds} s")]
    Timeout { seconds: f64 },
    #[error("accuracy {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Train(#[from] TensorError),
}

pub trait Evaluator {
    fn name(&self) -> &str;
    fn evaluate(&mut self, candidate: &Candidate) -> Result<Evaluation, EvaluatorError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    /// Largest ladder factor whose drop stays under the threshold.
    MaxWithinThreshold,
    /// Stop at the first factor that breaks the threshold and keep the one
    /// before it.
    #[default]
    FirstViolationRevert,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMode {
    /// Re-evaluate with the current block at factor 1 before each block.
    #[default]
    Remeasured,
    /// Measure once before the first block.
    Global,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchConfig {
    pub ladder: Vec<usize>,
    /// Allowed accuracy drop in percentage points.
    pub threshold: f64,
    pub policy: Policy,
    pub baseline_mode: BaselineMode,
    pub baseline_budget: usize,
    pub candidate_budget: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            ladder: vec![2, 4, 6, 8],
            threshold: 0.5,
            policy: Policy::default(),
            baseline_mode: BaselineMode::default(),
            baseline_budget: 3,
            candidate_budget: 3,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), SearchError> {
        if !(self.threshold >= 0.0) {
            return Err(SearchError::InvalidConfig(format!("threshold must be >= 0, got {}", self.threshold)));
        }
        if self.ladder.iter().any(|&f| f < 2) {
            return Err(SearchError::InvalidConfig("ladder factors must be >= 2".into()));
        }
        if self.ladder.windows(2).any(|w| w[0] >= w[1]) {
            return Err(SearchError::InvalidConfig(format!("ladder {:?} is not strictly ascending", self.ladder)));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SearchError {
    #[error("invalid search config: {0}")]
    InvalidConfig(String),
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error("evaluator failed at block {block} factor {factor}: {source}")]
    Evaluator { block: usize, factor: usize, source: EvaluatorError },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Baseline,
    Continue,
    Reject,
    SkipNondivisible,
}

impl Decision {
    pub fn name(self) -> &'static str {
        match self {
            Decision::Baseline => "baseline",
            Decision::Continue => "continue",
            Decision::Reject => "reject",
            Decision::SkipNondivisible => "skip_nondivisible",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub block: usize,
    pub factor: usize,
    /// Candidate accuracy in `[0, 1]`; absent for skipped factors.
    pub accuracy: Option<f64>,
    pub baseline: Option<f64>,
    /// `baseline - accuracy` in percentage points.
    pub delta: Option<f64>,
    pub decision: Decision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchTrace {
    pub evaluator: String,
    pub config: SearchConfig,
    pub records: Vec<TraceRecord>,
    pub plan: Vec<usize>,
    pub final_accuracy: Option<f64>,
    pub evaluations: usize,
}

/// Accuracy drop in percentage points, rounded to 1e-9 so that decimal
/// table values compare as written.
pub fn delta_points(baseline: f64, accuracy: f64) -> f64 {
    ((baseline - accuracy) * 100.0 * 1e9).round() / 1e9
}

impl SearchTrace {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace serializes")
    }

    /// One row per record.
    pub fn records_csv(&self) -> String {
        let mut out = String::from("block,factor,accuracy,baseline,delta,decision\n");
        let opt = |v: Option<f64>| v.map(|v| format!("{v}")).unwrap_or_default();
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.block,
                r.factor,
                opt(r.accuracy),
                opt(r.baseline),
                opt(r.delta),
                r.decision.name()
            );
        }
        out
    }

    /// Blocks by factors grid of accuracies in percent; factor 1 holds the
    /// block's baseline. Cells never evaluated stay empty.
    pub fn table_csv(&self) -> String {
        let mut factors = vec![1];
        factors.extend(&self.config.ladder);
        let mut out = String::from("block");
        for f in &factors {
            let _ = write!(out, ",{f}");
        }
        out.push('\n');
        for block in 0..self.plan.len() {
            let _ = write!(out, "{block}");
            for &f in &factors {
                let cell = self.records.iter().find(|r| {
                    r.block == block
                        && r.accuracy.is_some()
                        && (r.factor == f && r.decision != Decision::Baseline
                            || f == 1 && r.decision == Decision::Baseline)
                });
                match cell.and_then(|r| r.accuracy) {
                    Some(a) => write!(out, ",{:.2}", a * 100.0),
                    None => write!(out, ","),
                }
                .expect("write to string");
            }
            out.push('\n');
        }
        out
    }
}

struct Scored {
    accuracy: f64,
    weights: Option<WeightStore>,
}

/// Greedy block-by-block search.
///
/// Blocks are decided first to last. For each block a baseline is taken
/// with that block unsplit, then the ladder factors are tried in ascending
/// order with all earlier blocks frozen at their selected factors. A factor
/// passes while `baseline - accuracy` (percentage points) is strictly below
/// the threshold.
pub fn greedy_split_search(
    arch: &Architecture,
    cfg: &SearchConfig,
    ev: &mut dyn Evaluator,
) -> Result<(Vec<usize>, SearchTrace), SearchError> {
    cfg.validate()?;
    if let Some(issue) = validate(arch).issues.first() {
        return Err(SearchError::InvalidArchitecture(issue.to_string()));
    }
    let blocks = arch.blocks.len();
    let mut plan = vec![1; blocks];
    let mut records = Vec::new();
    let mut evaluations = 0;
    let mut frozen: Option<WeightStore> = None;
    let mut global: Option<f64> = None;
    let mut final_accuracy = None;

    let mut run = |plan: &[usize], block: usize, budget: usize, warm: Option<&WeightStore>| -> Result<Scored, SearchError> {
        let candidate = split_transform(arch, plan)?;
        evaluations += 1;
        let wrap = |source| SearchError::Evaluator { block, factor: plan[block], source };
        let e = ev
            .evaluate(&Candidate { arch: &candidate, factors: plan, block, warm_start: warm, budget })
            .map_err(wrap)?;
        if !(0.0..=1.0).contains(&e.accuracy) {
            return Err(wrap(EvaluatorError::OutOfRange(e.accuracy)));
        }
        Ok(Scored { accuracy: e.accuracy, weights: e.weights })
    };

    for block in 0..blocks {
        let (baseline, mut chosen) = match (cfg.baseline_mode, global) {
            (BaselineMode::Global, Some(g)) => (g, None),
            _ => {
                let s = run(&plan, block, cfg.baseline_budget, frozen.as_ref())?;
                records.push(TraceRecord {
                    block,
                    factor: 1,
                    accuracy: Some(s.accuracy),
                    baseline: Some(s.accuracy),
                    delta: Some(0.0),
                    decision: Decision::Baseline,
                });
                global = Some(s.accuracy);
                (s.accuracy, Some(s))
            }
        };
        let mut selected = 1;
        for &factor in &cfg.ladder {
            let mut trial = plan.clone();
            trial[block] = factor;
            match split_transform(arch, &trial) {
                Err(TransformError::NonDivisible { .. }) => {
                    records.push(TraceRecord {
                        block,
                        factor,
                        accuracy: None,
                        baseline: Some(baseline),
                        delta: None,
                        decision: Decision::SkipNondivisible,
                    });
                    continue;
                }
                Err(e) => return Err(e.into()),
                Ok(_) => {}
            }
            let s = run(&trial, block, cfg.candidate_budget, frozen.as_ref())?;
            let delta = delta_points(baseline, s.accuracy);
            let pass = delta < cfg.threshold;
            records.push(TraceRecord {
                block,
                factor,
                accuracy: Some(s.accuracy),
                baseline: Some(baseline),
                delta: Some(delta),
                decision: if pass { Decision::Continue } else { Decision::Reject },
            });
            if pass {
                selected = factor;
                chosen = Some(s);
            } else if cfg.policy == Policy::FirstViolationRevert {
                break;
            }
        }
        plan[block] = selected;
        final_accuracy = chosen.as_ref().map(|s| s.accuracy).or(final_accuracy);
        if let Some(w) = chosen.and_then(|s| s.weights) {
            frozen = Some(w);
        }
    }
    let trace = SearchTrace {
        evaluator: ev.name().to_string(),
        config: cfg.clone(),
        records,
        plan: plan.clone(),
        final_accuracy,
        evaluations,
    };
    Ok((plan, trace))
}
