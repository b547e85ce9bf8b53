//! Acceptance suite: one `[PASS]`/`[FAIL]` line per criterion A1..A9.
//! Runs without the libtest harness so the lines always reach stdout.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splitforge::arch::{
    builtin_architectures, parse_architecture, serialize_architecture, tiny_quadrant, two_layer_demo, Architecture,
    Block, ClassifierSpec, ConvSpec, Layer, PoolMode, PoolSpec, Shape,
};
use splitforge::cost::{analyze, params_closed_form_original, params_closed_form_split, peak_memory, sweep_params};
use splitforge::data::{parse_cifar10, split_train_test, synth_quadrant_dataset, write_cifar10_binary, Dataset};
use splitforge::graph::{Graph, OpKind};
use splitforge::oracle::trials::{gradient_network, random_ideal, random_proposed};
use splitforge::oracle::{embed_and_check, finite_diff_check, random_weights, smooth_inputs};
use splitforge::search::{
    delta_points, greedy_split_search, reference_resnet18_table, Decision, InternalEvaluator, SearchConfig, TableMock,
};
use splitforge::tensor::{train, Element, TrainConfig, WeightStore};
use splitforge::transform::{ideal_split, split_transform, SplitPlan};
use splitforge::{Schedule, TensorBuffer};
use std::collections::BTreeSet;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)*) => {
        if !$cond {
            return Err(format!($($fmt)*));
        }
    };
}

fn conv_params(arch: &Architecture) -> Result<usize, String> {
    analyze(arch).map(|r| r.totals.conv_params).map_err(|e| e.to_string())
}

fn a1() -> Check {
    ensure!(params_closed_form_original(3, 64, 64) == 38_592, "original closed form");
    let orig = two_layer_demo(3, 64, 64);
    ensure!(conv_params(&orig)? == 38_592, "enumerated original != 38,592");
    for (k, want) in [(2, 20_160), (4, 10_944), (8, 6_336)] {
        let cf = params_closed_form_split(3, 64, 64, k, k).map_err(|e| e.to_string())?;
        let split = ideal_split(&orig, k, k).map_err(|e| e.to_string())?;
        let en = conv_params(&split)?;
        ensure!(cf == want && en == want, "k={k}: closed {cf}, enumerated {en}, want {want}");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2026);
    for t in 0..200 {
        let l0 = rng.gen_range(1..=8);
        let k1 = [1usize, 2, 4, 8][rng.gen_range(0..4)];
        let k2 = k1 * [1usize, 2][rng.gen_range(0..2)];
        let (l1, l2) = (k1 * rng.gen_range(1..=4), k2 * rng.gen_range(1..=4));
        let arch = two_layer_demo(l0, l1, l2);
        let cf = params_closed_form_split(l0, l1, l2, k1, k2).map_err(|e| e.to_string())?;
        let en = conv_params(&ideal_split(&arch, k1, k2).map_err(|e| e.to_string())?)?;
        ensure!(cf == en, "tuple {t} ({l0},{l1},{l2},{k1},{k2}): closed {cf} != enumerated {en}");
        ensure!(params_closed_form_original(l0, l1, l2) == conv_params(&arch)?, "tuple {t} original");
    }
    Ok("38,592 / 20,160 / 10,944 / 6,336; 200 random tuples exact".into())
}

fn a2() -> Check {
    let cells = sweep_params(3, 64, 64, &[1, 2, 4, 8]);
    ensure!(cells.len() == 16, "{} cells", cells.len());
    let mut per_k1 = Vec::new();
    for k1 in [1, 2, 4, 8] {
        let vals: BTreeSet<_> = cells.iter().filter(|c| c.k1 == k1).map(|c| c.params_split).collect();
        ensure!(vals.len() == 1, "k1={k1}: params vary with k2: {vals:?}");
        let v = vals.into_iter().next().flatten().ok_or(format!("k1={k1} nondivisible"))?;
        per_k1.push(v);
        // enumerate the cells the ideal transform can build (k1 | k2)
        for k2 in [1, 2, 4, 8].into_iter().filter(|k2| k2 % k1 == 0) {
            let split = ideal_split(&two_layer_demo(3, 64, 64), k1, k2).map_err(|e| e.to_string())?;
            ensure!(conv_params(&split)? == v, "enumeration at ({k1},{k2})");
        }
    }
    ensure!(per_k1.windows(2).all(|w| w[0] > w[1]), "params not decreasing in k1: {per_k1:?}");
    Ok(format!("params by k1 = {per_k1:?}, constant in k2"))
}

fn embedding_worst<T: Element>(pairs: &[(Architecture, Architecture)], tol: f64) -> Result<f64, String> {
    let mut worst = 0.0f64;
    for (t, (_, split)) in pairs.iter().enumerate() {
        let w = random_weights::<T>(split, 100 + t as u64).map_err(|e| e.to_string())?;
        let (_, eq) = embed_and_check(split, &w, 4, t as u64, tol).map_err(|e| format!("trial {t}: {e}"))?;
        ensure!(eq.pass, "trial {t} ({}): diff {:e} > {tol:e}", split.name, eq.max_abs_diff);
        worst = worst.max(eq.max_abs_diff);
    }
    Ok(worst)
}

fn a3() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let proposed: Vec<_> = (0..100).map(|_| random_proposed(&mut rng)).collect();
    let ideal: Vec<_> = (0..100).map(|_| random_ideal(&mut rng)).collect();
    let mut parts = Vec::new();
    for (mode, set) in [("proposed", &proposed), ("ideal", &ideal)] {
        let w32 = embedding_worst::<f32>(set, 1e-5)?;
        let w64 = embedding_worst::<f64>(set, 1e-10)?;
        parts.push(format!("{mode}: f32 {w32:.1e}, f64 {w64:.1e}"));
    }
    Ok(format!("100 trials/mode; {}", parts.join("; ")))
}

fn a4() -> Check {
    let arch = gradient_network();
    let graph = Graph::lower(&arch).map_err(|e| e.to_string())?;
    let mut kinds = BTreeSet::new();
    for op in &graph.ops {
        kinds.insert(match &op.kind {
            OpKind::Conv { spec, .. } if spec.groups > 1 => "grouped_conv".to_string(),
            OpKind::Pool(p) if p.mode == PoolMode::Max => "max_pool".into(),
            OpKind::Pool(_) => "avg_pool".into(),
            k => k.name().into(),
        });
    }
    let want = [
        "conv",
        "grouped_conv",
        "fusion_conv",
        "max_pool",
        "avg_pool",
        "relu",
        "concat",
        "channel_slice",
        "residual_add",
        "dense",
    ];
    for k in want {
        ensure!(kinds.contains(k), "gradient net lacks {k}");
    }
    let w = random_weights::<f64>(&arch, 4).map_err(|e| e.to_string())?;
    let x = smooth_inputs(&arch, &w, 2, 4, 500).map_err(|e| e.to_string())?;
    let classes = graph.classes();
    let labels: Vec<usize> = (0..2).map(|i| i % classes).collect();
    let all = w.element_count();
    let r = finite_diff_check(&arch, &w, &x, &labels, 1e-5, 1e-4, all, 4).map_err(|e| e.to_string())?;
    ensure!(r.checked == all, "checked {} of {all}", r.checked);
    ensure!(r.pass, "worst relative error {:e} at {:?}", r.worst_relative_error, r.offending);
    Ok(format!("{} op kinds, all {all} weights, worst rel err {:.2e}", kinds.len(), r.worst_relative_error))
}

/// Five pooled blocks of width 48, so every ladder factor including 6
/// divides; the table mock ignores everything but block and factor.
fn table_surrogate() -> Architecture {
    Architecture {
        name: "table-surrogate".into(),
        input_shape: Shape::new(3, 32, 32),
        blocks: (0..5)
            .map(|_| Block { layers: vec![Layer::Conv(ConvSpec::same3x3(48)), Layer::Relu], pool: Some(PoolSpec::max2()) })
            .collect(),
        classifier: ClassifierSpec::linear(10),
    }
}

fn a5() -> Check {
    let table = reference_resnet18_table();
    let arch = table_surrogate();
    let cfg = SearchConfig::default();
    let mut mock = TableMock::from_table(&table);
    let (plan, trace) = greedy_split_search(&arch, &cfg, &mut mock).map_err(|e| e.to_string())?;
    ensure!(plan == [8, 8, 2, 6, 8], "plan {plan:?}");
    let col = |f: usize| table.factors.iter().position(|&g| g == f).expect("factor in table");
    for r in &trace.records {
        let (Some(d), Some(_)) = (r.delta, r.accuracy) else { continue };
        let base = table.rows[r.block][0].expect("full table");
        let acc = table.rows[r.block][col(r.factor)].expect("full table");
        let hand = ((base - acc) * 1e9).round() / 1e9;
        ensure!((d - hand).abs() < 1e-9, "block {} factor {}: delta {d} vs hand {hand}", r.block, r.factor);
        let want = if r.decision == Decision::Baseline {
            Decision::Baseline
        } else if hand < cfg.threshold {
            Decision::Continue
        } else {
            Decision::Reject
        };
        ensure!(r.decision == want, "block {} factor {}: {:?}", r.block, r.factor, r.decision);
    }
    let key = trace
        .records
        .iter()
        .find(|r| r.block == 2 && r.factor == 4)
        .ok_or("no record for block 3 factor 4")?;
    ensure!(key.delta == Some(0.6) && key.decision == Decision::Reject, "block 3 factor 4: {key:?}");
    ensure!(delta_points(0.9338, 0.9278) == 0.6, "delta_points rounding");
    let bound = arch.blocks.len() * (cfg.ladder.len() + 1);
    ensure!(trace.evaluations <= bound, "{} evaluations > {bound}", trace.evaluations);
    Ok(format!("plan (8,8,2,6,8); block 3 x4 delta 0.60 reject; {} <= {bound} evaluations", trace.evaluations))
}

fn first_epoch_at(history: &[splitforge::tensor::EpochRecord], target: f64) -> Option<usize> {
    history.iter().find(|r| r.train_accuracy >= target).map(|r| r.epoch)
}

fn a6() -> Check {
    let ds = synth_quadrant_dataset(0, 800, 16, 4).map_err(|e| e.to_string())?;
    let base = tiny_quadrant();
    let split = split_transform(&base, &[2, 2]).map_err(|e| e.to_string())?;
    let cfg = TrainConfig::default();
    let mut reached = Vec::new();
    for arch in [&base, &split] {
        let out = train(arch, &ds, &cfg, None).map_err(|e| e.to_string())?;
        let at = first_epoch_at(&out.history, 0.90).ok_or(format!("{} never reached 0.90", arch.name))?;
        ensure!(out.final_train_accuracy() >= 0.90, "{} final {}", arch.name, out.final_train_accuracy());
        reached.push(at);
    }
    let (tr, te) = split_train_test(&ds, 0.8, 0).map_err(|e| e.to_string())?;
    let mut ev = InternalEvaluator { train: tr, test: Some(te), config: cfg.clone() };
    let scfg = SearchConfig::default();
    let (plan, trace) = greedy_split_search(&base, &scfg, &mut ev).map_err(|e| e.to_string())?;
    ensure!(plan.len() == base.blocks.len(), "plan length");
    let chosen = split_transform(&base, &plan).map_err(|e| format!("plan {plan:?}: {e}"))?;
    ensure!(splitforge::arch::validate(&chosen).is_valid(), "plan {plan:?} invalid");
    Ok(format!(
        "seed 0: base >= 0.90 at epoch {}, K=2 split at epoch {}; search plan {plan:?} ({} evaluations)",
        reached[0], reached[1], trace.evaluations
    ))
}

fn a7() -> Check {
    let base = Architecture {
        name: "conv-pool".into(),
        input_shape: Shape::new(3, 32, 32),
        blocks: vec![Block { layers: vec![Layer::Conv(ConvSpec::same3x3(64))], pool: Some(PoolSpec::max2()) }],
        classifier: ClassifierSpec::linear(10),
    };
    let peak = |a: &Architecture, s| peak_memory(a, s).map(|m| m.peak_elements).map_err(|e| e.to_string());
    let fused = split_transform(&base, &[1]).map_err(|e| e.to_string())?;
    let split = split_transform(&base, &[2]).map_err(|e| e.to_string())?;
    let par = peak(&fused, Schedule::AllParallel)?;
    let seq = peak(&split, Schedule::BranchSequential)?;
    ensure!(par == 81_920 && seq == 49_152, "peaks {seq} / {par}");
    let reduction = 1.0 - seq as f64 / par as f64;
    ensure!(reduction >= 0.40, "reduction {reduction}");
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for t in 0..100 {
        let (_, s) = random_proposed(&mut rng);
        let (a, b) = (peak(&s, Schedule::BranchSequential)?, peak(&s, Schedule::AllParallel)?);
        ensure!(a <= b, "trial {t}: branch_sequential {a} > all_parallel {b}");
    }
    Ok(format!("49,152 vs 81,920 ({:.1}% lower); dominance over 100 random splits", reduction * 100.0))
}

fn a8() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let n = 12;
    let pixels: Vec<f32> = (0..n * 3072).map(|_| rng.gen_range(0..=255u8) as f32 / 255.0).collect();
    let labels: Vec<usize> = (0..n).map(|i| i % 10).collect();
    let images = TensorBuffer::from_vec([n, 3, 32, 32], pixels).map_err(|e| e.to_string())?;
    let ds = Dataset::new(images, labels, 10).map_err(|e| e.to_string())?;
    let bytes = write_cifar10_binary(&ds).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("data_batch_1.bin");
    std::fs::write(&path, &bytes).map_err(|e| e.to_string())?;
    let back = splitforge::data::load_cifar10_binary(&path, None).map_err(|e| e.to_string())?;
    ensure!(back == ds, "CIFAR dataset differs after round trip");
    ensure!(write_cifar10_binary(&back).map_err(|e| e.to_string())? == bytes, "CIFAR bytes differ");
    ensure!(parse_cifar10(&bytes[..bytes.len() - 1], None).is_err(), "truncated fixture accepted");

    for (t, arch) in builtin_architectures().into_values().enumerate() {
        let w = random_weights::<f32>(&arch, t as u64).map_err(|e| e.to_string())?;
        let wb = w.to_bytes();
        let back = WeightStore::from_bytes(&wb).map_err(|e| e.to_string())?;
        ensure!(back == w && back.to_bytes() == wb, "{}: weight round trip", arch.name);
        let bits = |s: &WeightStore| -> Vec<u32> { s.iter().flat_map(|(_, p)| p.data.iter().map(|v| v.to_bits())).collect() };
        ensure!(bits(&back) == bits(&w), "{}: weight bits", arch.name);
    }

    let mut archs: Vec<Architecture> = builtin_architectures().into_values().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(88);
    for _ in 0..25 {
        let (a, s) = random_proposed(&mut rng);
        let (_, i) = random_ideal(&mut rng);
        archs.extend([a, s, i]);
    }
    for a in &archs {
        let back = parse_architecture(&serialize_architecture(a)).map_err(|e| format!("{}: {e}", a.name))?;
        ensure!(&back == a, "{}: config round trip", a.name);
    }
    let plan = SplitPlan::shared(2, 4);
    ensure!(SplitPlan::from_json(&plan.to_json()).map_err(|e| e.to_string())? == plan, "plan round trip");
    let cfg = TrainConfig::default();
    let text = serde_json::to_string(&cfg).map_err(|e| e.to_string())?;
    ensure!(serde_json::from_str::<TrainConfig>(&text).map_err(|e| e.to_string())? == cfg, "train config round trip");
    Ok(format!("CIFAR {n} records, {} weight stores, {} configs bit/structure exact", builtin_architectures().len(), archs.len()))
}

const BIN: &str = env!("CARGO_BIN_EXE_splitforge");

struct Run {
    status: Option<i32>,
    stdout: Vec<u8>,
    files: Vec<(String, Vec<u8>)>,
}

/// Files under `dir`, sorted, manifests with their clock fields removed.
fn snapshot(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).map_err(|e| e.to_string())? {
            let p = entry.map_err(|e| e.to_string())?.path();
            if p.is_dir() {
                stack.push(p);
                continue;
            }
            let rel = p.strip_prefix(dir).expect("under dir").display().to_string();
            let mut bytes = std::fs::read(&p).map_err(|e| e.to_string())?;
            if rel.ends_with("manifest.json") {
                let mut v: serde_json::Value = serde_json::from_slice(&bytes).map_err(|e| format!("{rel}: {e}"))?;
                let obj = v.as_object_mut().ok_or("manifest is not an object")?;
                obj.remove("started_unix");
                obj.remove("duration_seconds");
                bytes = serde_json::to_vec(&v).expect("value serializes");
            }
            out.push((rel, bytes));
        }
    }
    out.sort();
    Ok(out)
}

fn run_in(dir: &Path, args: &[&str]) -> Result<Run, String> {
    let out = Command::new(BIN).args(args).current_dir(dir).output().map_err(|e| e.to_string())?;
    Ok(Run { status: out.status.code(), stdout: out.stdout, files: snapshot(dir)? })
}

fn a9() -> Check {
    let fixture = tempfile::tempdir().map_err(|e| e.to_string())?;
    let arch_file = fixture.path().join("surrogate.json");
    std::fs::write(&arch_file, serialize_architecture(&table_surrogate())).map_err(|e| e.to_string())?;
    let table_file = fixture.path().join("table.json");
    std::fs::write(&table_file, serde_json::to_string(&reference_resnet18_table()).expect("table")).map_err(|e| e.to_string())?;
    let (arch_s, table_s) = (arch_file.display().to_string(), format!("table:{}", table_file.display()));

    let commands: Vec<Vec<&str>> = vec![
        vec!["builtin", "vgg16_cifar", "-o", "vgg.json"],
        vec!["transform", "builtin:vgg16_cifar", "--factors", "8,2,2,4,4", "-o", "split.json"],
        vec!["analyze", "builtin:resnet18_cifar", "--bytes-per-element", "4", "--csv", "layers.csv", "--memory-csv", "mem.csv"],
        vec!["sweep", "--L0", "3", "--L1", "64", "--L2", "64", "--factors", "1,2,4,8", "-o", "sweep.csv"],
        vec!["verify", "builtin:two_layer_demo", "--trials", "1"],
        vec!["train", "builtin:tiny_quadrant", "--samples", "160", "--epochs", "2", "--seed", "5", "-o", "w.bin"],
        vec!["search", &arch_s, "--evaluator", &table_s, "--out-dir", "out"],
        vec![
            "search",
            "builtin:tiny_quadrant",
            "--samples",
            "160",
            "--ladder",
            "2,4",
            "--baseline-budget",
            "1",
            "--candidate-budget",
            "1",
            "--out-dir",
            "out",
        ],
    ];
    let mut summary = Vec::new();
    for args in &commands {
        let name = args[0];
        // verify needs a split net: transform one first in each run directory
        let runs: Vec<Run> = (0..2)
            .map(|_| -> Result<Run, String> {
                let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
                if name == "verify" {
                    let st = Command::new(BIN)
                        .args(["transform", "builtin:tiny_quadrant", "--factors", "2,4", "-o", "net.json"])
                        .current_dir(dir.path())
                        .output()
                        .map_err(|e| e.to_string())?;
                    ensure!(st.status.success(), "verify fixture transform failed");
                    let mut a = args.clone();
                    a[1] = "net.json";
                    return run_in(dir.path(), &a);
                }
                run_in(dir.path(), args)
            })
            .collect::<Result<_, _>>()?;
        ensure!(runs[0].status == Some(0), "{name}: exit {:?}", runs[0].status);
        ensure!(runs[0].status == runs[1].status, "{name}: exit codes differ");
        ensure!(runs[0].stdout == runs[1].stdout, "{name}: stdout differs");
        ensure!(runs[0].files.len() == runs[1].files.len(), "{name}: file sets differ");
        for ((pa, ba), (pb, bb)) in runs[0].files.iter().zip(&runs[1].files) {
            ensure!(pa == pb && ba == bb, "{name}: {pa} differs");
        }
        let manifests = runs[0].files.iter().filter(|(p, _)| p.ends_with("manifest.json")).count();
        let fixtures = usize::from(name == "verify");
        ensure!(manifests == 1 + fixtures, "{name}: {manifests} manifests");
        if args.contains(&table_s.as_str()) {
            let plan = runs[0].files.iter().find(|(p, _)| p.ends_with("plan.json")).ok_or("no plan.json")?;
            let plan: SplitPlan = serde_json::from_slice(&plan.1).map_err(|e| e.to_string())?;
            ensure!(plan.factors == [8, 8, 2, 6, 8], "cli table search plan {:?}", plan.factors);
        }
        summary.push(name);
    }
    Ok(format!("{} runs byte-identical: {}", commands.len(), summary.join(", ")))
}

fn main() {
    let criteria: [(&str, fn() -> Check, Duration); 9] = [
        ("A1 closed-form parameter counts", a1, Duration::from_secs(1)),
        ("A2 k2-independence", a2, Duration::from_secs(1)),
        ("A3 embedding soundness", a3, Duration::from_secs(60)),
        ("A4 gradient correctness", a4, Duration::from_secs(120)),
        ("A5 search trace on reference table", a5, Duration::from_secs(1)),
        ("A6 end-to-end trainability", a6, Duration::from_secs(600)),
        ("A7 memory model", a7, Duration::from_secs(60)),
        ("A8 format fidelity", a8, Duration::from_secs(1)),
        ("A9 CLI determinism", a9, Duration::MAX),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check, budget) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let result = check();
        let took = start.elapsed();
        let result = match result {
            Ok(d) if took > budget => Err(format!("{d}; took {took:.2?} > {budget:?}")),
            r => r,
        };
        match result {
            Ok(detail) => println!("[PASS] {name}: {detail} ({took:.2?})"),
            Err(why) => {
                failed += 1;
                println!("[FAIL] {name}: {why} ({took:.2?})");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
