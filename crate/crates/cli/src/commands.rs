use crate::manifest::{beside, Recorder};
use crate::{
    AnalyzeArgs, BaselineArg, BuiltinArgs, DataArgs, Failure, PolicyArg, ScheduleArg, SearchArgs, SweepArgs, TrainArgs,
    TrainFlags, TransformArgs, VerifyArgs, EXIT_DIVERGED, EXIT_EVALUATOR, EXIT_ORACLE, EXIT_TRANSFORM,
};
use serde::Serialize;
use serde_json::json;
use splitforge::arch::{builtin as builtin_arch, builtin_architectures, parse_architecture, serialize_architecture, validate};
use splitforge::cost::{cost_report, sweep_csv, sweep_params, MemoryOptions};
use splitforge::data::{data_dir, parse_cifar10, split_train_test, synth_quadrant_dataset};
use splitforge::graph::{Graph, OpKind};
use splitforge::oracle::{
    check_equivalence, embed_block_diagonal, finite_diff_check, random_weights, smooth_inputs_with_margin, OracleError,
};
use splitforge::search::{
    greedy_split_search, reference_resnet18_table, AccuracyTable, BaselineMode, Evaluator, ExternalEvaluator,
    InternalEvaluator, Policy, SearchError, TableMock,
};
use splitforge::tensor::{init_weights, train_and_test, Element, Model, TensorError};
use splitforge::{Architecture, Dataset, Schedule, SearchConfig, SplitPlan, TrainConfig, WeightStore};
use std::path::{Path, PathBuf};
use std::time::Duration;

type Outcome = Result<(), Failure>;

fn read(path: &Path, rec: &mut Recorder) -> Result<Vec<u8>, Failure> {
    let bytes = std::fs::read(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    rec.input(path, &bytes);
    Ok(bytes)
}

fn read_text(path: &Path, rec: &mut Recorder) -> Result<String, Failure> {
    String::from_utf8(read(path, rec)?).map_err(|_| Failure::usage(format!("{}: not UTF-8", path.display())))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>, rec: &mut Recorder) -> Outcome {
    std::fs::write(path, bytes).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    rec.output(path);
    Ok(())
}

fn load_arch(source: &str, rec: &mut Recorder) -> Result<Architecture, Failure> {
    let arch = match source.strip_prefix("builtin:") {
        Some(name) => builtin_arch(name).ok_or_else(|| {
            let known: Vec<_> = builtin_architectures().into_keys().collect();
            Failure::usage(format!("unknown builtin `{name}` (known: {})", known.join(", ")))
        })?,
        None => {
            let text = read_text(Path::new(source), rec)?;
            parse_architecture(&text).map_err(|e| Failure::usage(format!("{source}: {e}")))?
        }
    };
    check_valid(&arch)?;
    Ok(arch)
}

fn check_valid(arch: &Architecture) -> Outcome {
    let report = validate(arch);
    match report.issues.first() {
        None => Ok(()),
        Some(issue) => Err(Failure::usage(format!("{} is invalid: {issue}", arch.name))),
    }
}

fn emit(payload: &impl Serialize) {
    println!("{}", serde_json::to_string_pretty(payload).expect("payload serializes"));
}

/// Explicit path, else next to the first output, else the working directory.
fn finish(rec: Recorder, explicit: Option<&Path>, first_output: Option<&Path>, command: &str) -> Outcome {
    let path = match (explicit, first_output) {
        (Some(p), _) => p.to_path_buf(),
        (None, Some(out)) => beside(out),
        (None, None) => PathBuf::from(format!("splitforge-{command}.manifest.json")),
    };
    rec.write(&path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    Ok(())
}

pub fn transform(a: &TransformArgs) -> Outcome {
    let mut rec = Recorder::new("transform", None, a);
    let arch = load_arch(&a.arch, &mut rec)?;
    let plan = match (&a.plan, &a.factors) {
        (Some(path), _) => {
            let text = read_text(path, &mut rec)?;
            SplitPlan::from_json(&text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?
        }
        (None, Some(f)) => SplitPlan::proposed(f.clone()),
        (None, None) => return Err(Failure::usage("one of --plan or --factors is required")),
    };
    let split = plan.apply(&arch).map_err(|e| Failure::new(EXIT_TRANSFORM, e))?;
    write(&a.out, serialize_architecture(&split) + "\n", &mut rec)?;
    emit(&json!({
        "name": split.name,
        "plan": plan,
        "blocks": split.blocks.len(),
        "fusion_blocks": split.fusion_count(),
        "out": a.out,
    }));
    finish(rec, None, Some(&a.out), "transform")
}

pub fn analyze(a: &AnalyzeArgs) -> Outcome {
    let mut rec = Recorder::new("analyze", None, a);
    let mut arch = load_arch(&a.arch, &mut rec)?;
    if let Some(s) = &a.input_shape {
        arch.input_shape = splitforge::Shape::new(s[0], s[1], s[2]);
        check_valid(&arch)?;
    }
    let schedules: Vec<Schedule> = if a.schedule.is_empty() {
        Schedule::ALL.to_vec()
    } else {
        a.schedule
            .iter()
            .map(|s| match s {
                ScheduleArg::AllParallel => Schedule::AllParallel,
                ScheduleArg::BranchSequential => Schedule::BranchSequential,
            })
            .collect()
    };
    let opts = MemoryOptions { concat_aliasing: a.concat_aliasing };
    let report = cost_report(&arch, &schedules, opts).map_err(Failure::usage)?;
    let mut payload = json!({ "name": arch.name, "input_shape": arch.input_shape, "report": report });
    if let Some(b) = a.bytes_per_element {
        let memory: Vec<_> = report
            .memory
            .iter()
            .map(|m| {
                json!({
                    "schedule": m.schedule,
                    "peak_bytes": m.peak_elements * b,
                    "static_weight_bytes": m.static_weight_elements * b,
                })
            })
            .collect();
        payload["bytes"] = json!({
            "bytes_per_element": b,
            "params_bytes": report.totals.params * b,
            "memory": memory,
        });
    }
    let mut outputs = Vec::new();
    if let Some(p) = &a.csv {
        write(p, report.layers_csv(), &mut rec)?;
        outputs.push(p.as_path());
    }
    if let Some(p) = &a.memory_csv {
        write(p, report.memory_csv(), &mut rec)?;
        outputs.push(p.as_path());
    }
    emit(&payload);
    finish(rec, a.manifest.as_deref(), outputs.first().copied(), "analyze")
}

pub fn sweep(a: &SweepArgs) -> Outcome {
    let mut rec = Recorder::new("sweep", None, a);
    if a.factors.is_empty() || a.factors.contains(&0) {
        return Err(Failure::usage("--factors needs at least one positive factor"));
    }
    if a.l0 == 0 || a.l1 == 0 || a.l2 == 0 {
        return Err(Failure::usage("layer widths must be positive"));
    }
    let cells = sweep_params(a.l0, a.l1, a.l2, &a.factors);
    if let Some(out) = &a.out {
        write(out, sweep_csv(&cells), &mut rec)?;
    }
    emit(&json!({ "l0": a.l0, "l1": a.l1, "l2": a.l2, "cells": cells }));
    finish(rec, a.manifest.as_deref(), a.out.as_deref(), "sweep")
}

fn oracle_failure(e: OracleError) -> Failure {
    Failure::new(EXIT_ORACLE, e)
}

/// Adds 1 to the final dense weight reading the input feature with the
/// largest magnitude, so the fault shows up in every logit row 0.
fn inject_fault<T: Element>(arch: &Architecture, w: &mut WeightStore<T>, x: &splitforge::TensorBuffer<T>) -> Outcome {
    let model = Model::new(arch).map_err(Failure::usage)?;
    let (op, in_features) = model
        .graph()
        .ops
        .iter()
        .rev()
        .find_map(|op| match op.kind {
            OpKind::Dense { in_features, .. } => Some((op.clone(), in_features)),
            _ => None,
        })
        .ok_or_else(|| Failure::usage("no dense layer to corrupt"))?;
    let fwd = model.forward(w, x).map_err(Failure::usage)?;
    let feats = fwd.value(op.inputs[0]);
    let mut mass = vec![0.0f64; in_features];
    for n in 0..feats.batch() {
        for (m, v) in mass.iter_mut().zip(feats.sample(n)) {
            *m += v.as_f64().abs();
        }
    }
    let col = mass
        .iter()
        .enumerate()
        .fold((0, f64::MIN), |best, (i, &m)| if m > best.1 { (i, m) } else { best })
        .0;
    let p = w.get_mut(&op.id).ok_or_else(|| Failure::usage(format!("missing weight {}", op.id)))?;
    p.data[col] = p.data[col] + T::one();
    Ok(())
}

#[derive(Debug, Serialize)]
struct PrecisionSummary {
    tolerance: f64,
    worst_abs_diff: f64,
    worst_trial: usize,
    pass: bool,
}

fn equivalence_trials<T: Element>(
    a: &VerifyArgs,
    split: &Architecture,
    first: Option<&WeightStore<f32>>,
    tol: f64,
) -> Result<(PrecisionSummary, Option<splitforge::EmbeddingReport>), Failure> {
    let mut summary = PrecisionSummary { tolerance: tol, worst_abs_diff: 0.0, worst_trial: 0, pass: true };
    let mut first_report = None;
    for t in 0..a.trials {
        let seed = a.seed.wrapping_add(t as u64);
        let w: WeightStore<T> = match (t, first) {
            (0, Some(w)) => w.cast(),
            _ => random_weights(split, seed).map_err(oracle_failure)?,
        };
        let mut e = embed_block_diagonal(split, &w).map_err(oracle_failure)?;
        if a.inject_fault {
            let x = splitforge::oracle::random_inputs::<T>(split, a.inputs, seed);
            inject_fault(&e.baseline, &mut e.weights, &x)?;
        }
        let eq = check_equivalence(split, &w, &e.baseline, &e.weights, a.inputs, seed, tol).map_err(oracle_failure)?;
        if eq.max_abs_diff > summary.worst_abs_diff || eq.max_abs_diff.is_nan() {
            summary.worst_abs_diff = eq.max_abs_diff;
            summary.worst_trial = t;
        }
        summary.pass &= eq.pass;
        if first_report.is_none() {
            e.report.max_abs_diff = Some(eq.max_abs_diff);
            first_report = Some(e.report);
        }
    }
    Ok((summary, first_report))
}

pub fn verify(a: &VerifyArgs) -> Outcome {
    let mut rec = Recorder::new("verify", Some(a.seed), a);
    let split = load_arch(&a.arch, &mut rec)?;
    if a.trials == 0 || a.inputs == 0 {
        return Err(Failure::usage("--trials and --inputs must be positive"));
    }
    let first = match &a.weights {
        Some(path) => {
            let bytes = read(path, &mut rec)?;
            let w = WeightStore::<f32>::from_bytes(&bytes).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
            let graph = Graph::lower(&split).map_err(Failure::usage)?;
            w.check_against(&graph.params()).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
            Some(w)
        }
        None => None,
    };
    let (f32s, embedding) = equivalence_trials::<f32>(a, &split, first.as_ref(), a.tol)?;
    let (f64s, _) = equivalence_trials::<f64>(a, &split, first.as_ref(), a.tol64)?;

    let gradient = if a.grad_weights > 0 {
        // fan-in scaled weights keep deep nets' activations near unit scale,
        // where central differences stay accurate
        let graph = Graph::lower(&split).map_err(Failure::usage)?;
        let w = init_weights(&graph, a.seed).cast::<f64>();
        let x = smooth_inputs_with_margin(&split, &w, 1, a.seed, a.kink_attempts, a.kink_margin)
            .map_err(oracle_failure)?;
        let classes = Model::new(&split).map_err(Failure::usage)?.classes();
        let labels: Vec<usize> = (0..x.batch()).map(|i| i % classes).collect();
        let r = finite_diff_check(&split, &w, &x, &labels, a.perturbation, a.grad_tol, a.grad_weights, a.seed)
            .map_err(oracle_failure)?;
        Some(r)
    } else {
        None
    };
    let pass = f32s.pass && f64s.pass && gradient.as_ref().map_or(true, |g| g.pass);
    emit(&json!({
        "name": split.name,
        "trials": a.trials,
        "f32": f32s,
        "f64": f64s,
        "embedding": embedding,
        "gradient": gradient,
        "pass": pass,
    }));
    finish(rec, a.manifest.as_deref(), None, "verify")?;
    if pass {
        Ok(())
    } else {
        Err(Failure::new(EXIT_ORACLE, "oracle checks failed"))
    }
}

fn cifar_files(dir: &Path) -> PathBuf {
    let nested = dir.join("cifar-10-batches-bin");
    if nested.is_dir() {
        nested
    } else {
        dir.to_path_buf()
    }
}

fn load_cifar_split(paths: &[PathBuf], limit: Option<usize>, rec: &mut Recorder) -> Result<Option<Dataset>, Failure> {
    let mut bytes = Vec::new();
    for p in paths.iter().filter(|p| p.is_file()) {
        bytes.extend(read(p, rec)?);
    }
    if bytes.is_empty() {
        return Ok(None);
    }
    parse_cifar10(&bytes, limit).map(Some).map_err(Failure::usage)
}

/// Training set plus optional test set.
fn load_data(d: &DataArgs, seed: u64, rec: &mut Recorder) -> Result<(Dataset, Option<Dataset>), Failure> {
    let (full, test) = match d.dataset.as_str() {
        "synth" => (synth_quadrant_dataset(seed, d.samples, d.size, d.classes).map_err(Failure::usage)?, None),
        spec if spec == "cifar" || spec.starts_with("cifar:") => {
            let dir = cifar_files(&spec.strip_prefix("cifar:").map_or_else(data_dir, PathBuf::from));
            let train: Vec<PathBuf> = (1..=5).map(|i| dir.join(format!("data_batch_{i}.bin"))).collect();
            let train = load_cifar_split(&train, d.limit, rec)?
                .ok_or_else(|| Failure::usage(format!("no CIFAR-10 batches under {}", dir.display())))?;
            let test = load_cifar_split(&[dir.join("test_batch.bin")], d.limit, rec)?;
            (train, test)
        }
        other => return Err(Failure::usage(format!("unknown dataset `{other}`"))),
    };
    if test.is_some() || d.test_fraction == 0.0 {
        return Ok((full, test));
    }
    let (train, test) = split_train_test(&full, 1.0 - d.test_fraction, seed).map_err(Failure::usage)?;
    Ok((train, Some(test)))
}

fn check_data_fits(arch: &Architecture, ds: &Dataset) -> Outcome {
    if arch.input_shape != ds.sample_shape() {
        return Err(Failure::usage(format!(
            "{} expects input {} but the dataset has {}",
            arch.name,
            arch.input_shape,
            ds.sample_shape()
        )));
    }
    let classes = Model::new(arch).map_err(Failure::usage)?.classes();
    if classes < ds.class_count {
        return Err(Failure::usage(format!("{} has {classes} outputs for {} classes", arch.name, ds.class_count)));
    }
    Ok(())
}

fn train_config(t: &TrainFlags, epochs: usize, fine_tune_epochs: usize) -> Result<TrainConfig, Failure> {
    let cfg = TrainConfig { epochs, batch_size: t.batch_size, learning_rate: t.learning_rate, seed: t.seed, fine_tune_epochs };
    cfg.validate().map_err(Failure::usage)?;
    Ok(cfg)
}

fn history_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".history.csv");
    out.with_file_name(name)
}

pub fn train(a: &TrainArgs) -> Outcome {
    let mut rec = Recorder::new("train", Some(a.train.seed), a);
    let arch = load_arch(&a.arch, &mut rec)?;
    let cfg = train_config(&a.train, a.epochs, a.fine_tune_epochs)?;
    let (train_set, test_set) = load_data(&a.data, cfg.seed, &mut rec)?;
    check_data_fits(&arch, &train_set)?;
    let warm = match &a.init {
        Some(p) => {
            let bytes = read(p, &mut rec)?;
            Some(WeightStore::<f32>::from_bytes(&bytes).map_err(|e| Failure::usage(format!("{}: {e}", p.display())))?)
        }
        None => None,
    };
    let outcome = train_and_test(&arch, &train_set, test_set.as_ref(), &cfg, warm.as_ref()).map_err(|e| match e {
        TensorError::DivergedLoss { .. } => Failure::new(EXIT_DIVERGED, e),
        other => Failure::usage(other),
    })?;
    write(&a.out, outcome.weights.to_bytes(), &mut rec)?;

    let history = a.history.clone().unwrap_or_else(|| history_path(&a.out));
    let mut csv = csv::Writer::from_writer(Vec::new());
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    let io = |e: csv::Error| Failure::usage(e);
    csv.write_record(["epoch", "train_acc", "test_acc", "loss"]).map_err(io)?;
    for r in &outcome.history {
        csv.write_record([r.epoch.to_string(), r.train_accuracy.to_string(), opt(r.test_accuracy), opt(r.loss)])
            .map_err(io)?;
    }
    let bytes = csv.into_inner().map_err(|e| Failure::usage(e.to_string()))?;
    write(&history, bytes, &mut rec)?;

    emit(&json!({
        "name": arch.name,
        "train_samples": train_set.len(),
        "test_samples": test_set.as_ref().map(Dataset::len),
        "final_train_accuracy": outcome.final_train_accuracy(),
        "final_test_accuracy": outcome.final_test_accuracy(),
        "history": outcome.history,
        "weights": a.out,
        "history_csv": history,
    }));
    finish(rec, None, Some(&a.out), "train")
}

fn search_failure(e: SearchError) -> Failure {
    match e {
        SearchError::InvalidConfig(_) | SearchError::InvalidArchitecture(_) => Failure::usage(e),
        SearchError::Transform(_) => Failure::new(EXIT_TRANSFORM, e),
        SearchError::Evaluator { .. } => Failure::new(EXIT_EVALUATOR, e),
    }
}

pub fn search(a: &SearchArgs) -> Outcome {
    let mut rec = Recorder::new("search", Some(a.train.seed), a);
    let arch = load_arch(&a.arch, &mut rec)?;
    let cfg = SearchConfig {
        ladder: a.ladder.clone(),
        threshold: a.threshold,
        policy: match a.policy {
            PolicyArg::MaxWithinThreshold => Policy::MaxWithinThreshold,
            PolicyArg::FirstViolationRevert => Policy::FirstViolationRevert,
        },
        baseline_mode: match a.baseline_mode {
            BaselineArg::Remeasured => BaselineMode::Remeasured,
            BaselineArg::Global => BaselineMode::Global,
        },
        baseline_budget: a.baseline_budget,
        candidate_budget: a.candidate_budget,
    };
    cfg.validate().map_err(search_failure)?;

    let mut evaluator: Box<dyn Evaluator> = match a.evaluator.as_str() {
        "internal" => {
            let train_cfg = train_config(&a.train, a.baseline_budget, a.candidate_budget)?;
            let (train, test) = load_data(&a.data, train_cfg.seed, &mut rec)?;
            check_data_fits(&arch, &train)?;
            Box::new(InternalEvaluator { train, test, config: train_cfg })
        }
        spec if spec.starts_with("table:") => {
            let path = Path::new(&spec["table:".len()..]);
            let text = read_text(path, &mut rec)?;
            let table = AccuracyTable::from_json(&text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
            Box::new(TableMock::from_table(&table))
        }
        spec if spec.starts_with("external:") => {
            let words: Vec<String> = spec["external:".len()..].split_whitespace().map(String::from).collect();
            Box::new(ExternalEvaluator::new(&words, Duration::from_secs(a.timeout)).map_err(Failure::usage)?)
        }
        other => return Err(Failure::usage(format!("unknown evaluator `{other}`"))),
    };

    std::fs::create_dir_all(&a.out_dir).map_err(|e| Failure::usage(format!("{}: {e}", a.out_dir.display())))?;
    let (plan, trace) = greedy_split_search(&arch, &cfg, evaluator.as_mut()).map_err(search_failure)?;
    let plan_json = serde_json::to_string_pretty(&SplitPlan::proposed(plan.clone())).expect("plan serializes");
    write(&a.out_dir.join("plan.json"), plan_json + "\n", &mut rec)?;
    write(&a.out_dir.join("trace.json"), trace.to_json() + "\n", &mut rec)?;
    write(&a.out_dir.join("trace.csv"), trace.records_csv(), &mut rec)?;
    write(&a.out_dir.join("table.csv"), trace.table_csv(), &mut rec)?;
    emit(&json!({
        "name": arch.name,
        "evaluator": trace.evaluator,
        "plan": plan,
        "final_accuracy": trace.final_accuracy,
        "evaluations": trace.evaluations,
        "out_dir": a.out_dir,
    }));
    finish(rec, Some(&a.out_dir.join("manifest.json")), None, "search")
}

pub fn builtin(a: &BuiltinArgs) -> Outcome {
    let mut rec = Recorder::new("builtin", None, a);
    let text = if a.name == "resnet18-table" {
        serde_json::to_string_pretty(&reference_resnet18_table()).expect("table serializes")
    } else {
        let arch = builtin_arch(&a.name).ok_or_else(|| {
            let known: Vec<_> = builtin_architectures().into_keys().collect();
            Failure::usage(format!("unknown builtin `{}` (known: {}, resnet18-table)", a.name, known.join(", ")))
        })?;
        serialize_architecture(&arch)
    };
    match &a.out {
        Some(out) => {
            write(out, text + "\n", &mut rec)?;
            emit(&json!({ "name": a.name, "out": out }));
        }
        None => println!("{text}"),
    }
    finish(rec, None, a.out.as_deref(), "builtin")
}
