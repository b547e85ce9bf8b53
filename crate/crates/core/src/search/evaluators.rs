use super::{Candidate, Evaluation, Evaluator, EvaluatorError};
use crate::arch::serialize_architecture;
use crate::data::Dataset;
use crate::tensor::{train_and_test, TrainConfig};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::process::{Command, Stdio};
use std::time::Duration;
use wait_timeout::ChildExt;

/// Replays stored accuracies keyed by (focus block, its factor).
#[derive(Debug, Clone, PartialEq)]
pub struct TableMock {
    /// Accuracies in percent.
    cells: BTreeMap<(usize, usize), f64>,
    queries: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableScale {
    Percent,
    Fraction,
}

/// On-disk accuracy table: one row per block, one column per factor;
/// `null` marks a missing cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AccuracyTable {
    pub scale: TableScale,
    pub factors: Vec<usize>,
    pub rows: Vec<Vec<Option<f64>>>,
}

impl AccuracyTable {
    pub fn from_json(text: &str) -> Result<Self, EvaluatorError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let table: Self = serde_path_to_error::deserialize(de).map_err(|e| EvaluatorError::InvalidTable(e.to_string()))?;
        if let Some((i, row)) = table.rows.iter().enumerate().find(|(_, r)| r.len() != table.factors.len()) {
            return Err(EvaluatorError::InvalidTable(format!(
                "row {i} has {} cells for {} factors",
                row.len(),
                table.factors.len()
            )));
        }
        Ok(table)
    }
}

/// Per-block accuracies (percent) of a five-block ResNet18 split sweep over
/// factors 1, 2, 4, 6 and 8.
pub fn reference_resnet18_table() -> AccuracyTable {
    let rows = [
        [93.57, 93.64, 93.55, 93.41, 93.46],
        [93.46, 93.36, 93.38, 93.03, 93.03],
        [93.38, 93.06, 92.78, 92.95, 92.75],
        [93.06, 93.21, 92.89, 92.71, 92.34],
        [93.21, 93.16, 93.20, 93.45, 93.14],
    ];
    AccuracyTable {
        scale: TableScale::Percent,
        factors: vec![1, 2, 4, 6, 8],
        rows: rows.iter().map(|r| r.iter().map(|&v| Some(v)).collect()).collect(),
    }
}

impl TableMock {
    pub fn new(cells: BTreeMap<(usize, usize), f64>) -> Self {
        Self { cells, queries: Vec::new() }
    }

    pub fn from_table(table: &AccuracyTable) -> Self {
        let to_pct = match table.scale {
            TableScale::Percent => 1.0,
            TableScale::Fraction => 100.0,
        };
        let mut cells = BTreeMap::new();
        for (block, row) in table.rows.iter().enumerate() {
            for (&factor, cell) in table.factors.iter().zip(row) {
                if let Some(v) = cell {
                    cells.insert((block, factor), v * to_pct);
                }
            }
        }
        Self::new(cells)
    }

    /// Stored accuracy in percent.
    pub fn lookup(&self, block: usize, factor: usize) -> Result<f64, EvaluatorError> {
        self.cells.get(&(block, factor)).copied().ok_or(EvaluatorError::MissingCell { block, factor })
    }

    pub fn queries(&self) -> &[(usize, usize)] {
        &self.queries
    }
}

impl Evaluator for TableMock {
    fn name(&self) -> &str {
        "table_mock"
    }

    fn evaluate(&mut self, c: &Candidate) -> Result<Evaluation, EvaluatorError> {
        let factor = c.factors[c.block];
        self.queries.push((c.block, factor));
        let pct = self.lookup(c.block, factor)?;
        Ok(Evaluation { accuracy: pct / 100.0, weights: None })
    }
}

/// Trains each candidate with the built-in engine for `budget` epochs and
/// reports its test accuracy (train accuracy when no test set is given).
#[derive(Debug, Clone)]
pub struct InternalEvaluator {
    pub train: Dataset,
    pub test: Option<Dataset>,
    pub config: TrainConfig,
}

impl Evaluator for InternalEvaluator {
    fn name(&self) -> &str {
        "internal"
    }

    fn evaluate(&mut self, c: &Candidate) -> Result<Evaluation, EvaluatorError> {
        let cfg = TrainConfig { epochs: c.budget, ..self.config.clone() };
        let out = train_and_test(c.arch, &self.train, self.test.as_ref(), &cfg, c.warm_start)?;
        let accuracy = match out.final_test_accuracy() {
            Some(a) => a,
            None => out.final_train_accuracy(),
        };
        Ok(Evaluation { accuracy, weights: Some(out.weights) })
    }
}

/// Runs `program args... <arch-file> <budget>` per candidate and reads the
/// accuracy from the last line of its standard output.
#[derive(Debug, Clone)]
pub struct ExternalEvaluator {
    pub program: String,
    pub args: Vec<String>,
    pub timeout: Duration,
}

const STDERR_EXCERPT: usize = 2000;

impl ExternalEvaluator {
    pub fn new(command: &[String], timeout: Duration) -> Result<Self, EvaluatorError> {
        let (program, args) = command.split_first().ok_or(EvaluatorError::EmptyCommand)?;
        Ok(Self { program: program.clone(), args: args.to_vec(), timeout })
    }
}

fn drain<R: Read + Send + 'static>(r: Option<R>) -> std::thread::JoinHandle<Vec<u8>> {
    std::thread::spawn(move || {
        let mut buf = Vec::new();
        if let Some(mut r) = r {
            let _ = r.read_to_end(&mut buf);
        }
        buf
    })
}

pub fn parse_accuracy_line(stdout: &str) -> Result<f64, EvaluatorError> {
    let line = stdout.lines().rev().map(str::trim).find(|l| !l.is_empty()).unwrap_or("");
    match line.parse::<f64>() {
        Ok(v) if (0.0..=1.0).contains(&v) => Ok(v),
        _ => Err(EvaluatorError::UnparseableOutput(line.chars().take(200).collect())),
    }
}

impl Evaluator for ExternalEvaluator {
    fn name(&self) -> &str {
        "external"
    }

    fn evaluate(&mut self, c: &Candidate) -> Result<Evaluation, EvaluatorError> {
        let mut file = tempfile::Builder::new().prefix("splitforge-arch-").suffix(".json").tempfile()?;
        file.write_all(serialize_architecture(c.arch).as_bytes())?;
        file.flush()?;
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .arg(file.path())
            .arg(c.budget.to_string())
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| EvaluatorError::Spawn { program: self.program.clone(), source: e })?;
        let out = drain(child.stdout.take());
        let err = drain(child.stderr.take());
        let status = match child.wait_timeout(self.timeout)? {
            Some(status) => status,
            None => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(EvaluatorError::Timeout { seconds: self.timeout.as_secs_f64() });
            }
        };
        let stdout = String::from_utf8_lossy(&out.join().unwrap_or_default()).into_owned();
        let stderr = String::from_utf8_lossy(&err.join().unwrap_or_default()).into_owned();
        if !status.success() {
            let excerpt: String = stderr.chars().take(STDERR_EXCERPT).collect();
            return Err(EvaluatorError::NonZeroExit { code: status.code(), stderr: excerpt });
        }
        Ok(Evaluation { accuracy: parse_accuracy_line(&stdout)?, weights: None })
    }
}
