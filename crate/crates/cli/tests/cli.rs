use serde_json::Value;
use splitforge::arch::{serialize_architecture, tiny_quadrant};
use splitforge::graph::Graph;
use splitforge::tensor::init_weights;
use splitforge::{Architecture, Block, ClassifierSpec, ConvSpec, Layer, PoolSpec, Shape};
use std::path::Path;
use std::process::{Command, Output};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_splitforge")).args(args).current_dir(dir).output().expect("binary runs")
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited")
}

fn write_arch(dir: &Path, name: &str, arch: &Architecture) -> String {
    std::fs::write(dir.join(name), serialize_architecture(arch)).unwrap();
    name.to_string()
}

#[test]
fn transform_vgg16_plan() {
    let d = tempfile::tempdir().unwrap();
    let v = json(&run(d.path(), &["transform", "builtin:vgg16_cifar", "--factors", "8,2,2,4,4", "-o", "s.json"]));
    assert_eq!(v["fusion_blocks"], 5);
    assert!(d.path().join("s.json.manifest.json").is_file());
    // the emitted file is a valid input again
    let a = json(&run(d.path(), &["analyze", "s.json", "--manifest", "m.json"]));
    assert!(a["report"]["totals"]["params_fusion_only"].as_u64().unwrap() > 0);
}

#[test]
fn transform_errors() {
    let d = tempfile::tempdir().unwrap();
    let out = run(d.path(), &["transform", "builtin:vgg16_cifar", "--factors", "8,2,2,4", "-o", "s.json"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("4 factors"));
    assert!(out.stdout.is_empty());
    assert_eq!(code(&run(d.path(), &["transform", "builtin:vgg16_cifar", "--factors", "3,1,1,1,1", "-o", "s.json"])), 2);
    assert_eq!(code(&run(d.path(), &["transform", "builtin:vgg16_cifar", "-o", "s.json"])), 1);
    assert_eq!(code(&run(d.path(), &["transform", "missing.json", "--factors", "1", "-o", "s.json"])), 1);
    std::fs::write(d.path().join("bad.json"), "{\"name\": 3}").unwrap();
    assert_eq!(code(&run(d.path(), &["transform", "bad.json", "--factors", "1", "-o", "s.json"])), 1);
    std::fs::write(d.path().join("plan.json"), r#"{"mode":"ideal","factors":[4,2]}"#).unwrap();
    assert_eq!(code(&run(d.path(), &["transform", "builtin:two_layer_demo", "--plan", "plan.json", "-o", "s.json"])), 2);
}

#[test]
fn all_ones_plan_is_fused_baseline() {
    let d = tempfile::tempdir().unwrap();
    let v = json(&run(d.path(), &["transform", "builtin:resnet18_cifar", "--factors", "1,1,1,1,1", "-o", "f.json"]));
    assert_eq!(v["fusion_blocks"], 5);
    let v = json(&run(d.path(), &["verify", "f.json", "--trials", "2", "--grad-weights", "0"]));
    assert_eq!(v["pass"], true);
    assert_eq!(v["f64"]["worst_abs_diff"], 0.0);
    json(&run(d.path(), &["transform", "builtin:tiny_quadrant", "--factors", "1,1", "-o", "t.json"]));
    let v = json(&run(d.path(), &["verify", "t.json", "--trials", "5"]));
    assert_eq!(v["gradient"]["pass"], true);
}

#[test]
fn analyze_reports() {
    let d = tempfile::tempdir().unwrap();
    let v = json(&run(d.path(), &["analyze", "builtin:two_layer_demo", "--bytes-per-element", "4", "--csv", "l.csv"]));
    assert_eq!(v["report"]["totals"]["conv_params"], 38_592);
    for (m, b) in v["report"]["memory"].as_array().unwrap().iter().zip(v["bytes"]["memory"].as_array().unwrap()) {
        assert_eq!(m["peak_elements"].as_u64().unwrap() * 4, b["peak_bytes"].as_u64().unwrap());
    }
    assert!(std::fs::read_to_string(d.path().join("l.csv")).unwrap().starts_with("id,kind,params,macs"));
    assert!(d.path().join("l.csv.manifest.json").is_file());

    let base = Architecture {
        name: "conv-pool".into(),
        input_shape: Shape::new(3, 32, 32),
        blocks: vec![Block { layers: vec![Layer::Conv(ConvSpec::same3x3(64))], pool: Some(PoolSpec::max2()) }],
        classifier: ClassifierSpec::linear(10),
    };
    let f = write_arch(d.path(), "cp.json", &base);
    let peak = |file: &str, sched: &str| -> u64 {
        let v = json(&run(d.path(), &["analyze", file, "--schedule", sched, "--manifest", "m.json"]));
        v["report"]["memory"][0]["peak_elements"].as_u64().unwrap()
    };
    json(&run(d.path(), &["transform", &f, "--factors", "1", "-o", "fused.json"]));
    json(&run(d.path(), &["transform", &f, "--factors", "2", "-o", "k2.json"]));
    assert_eq!(peak("fused.json", "all-parallel"), 81_920);
    assert_eq!(peak("k2.json", "branch-sequential"), 49_152);
    assert_eq!(code(&run(d.path(), &["analyze", &f, "--input-shape", "3,0,0"])), 1);
}

#[test]
fn sweep_grid() {
    let d = tempfile::tempdir().unwrap();
    let v = json(&run(d.path(), &["sweep", "--L0", "3", "--L1", "64", "--L2", "64", "--factors", "1,2,4,8", "-o", "s.csv"]));
    assert_eq!(v["cells"].as_array().unwrap().len(), 16);
    let csv = std::fs::read_to_string(d.path().join("s.csv")).unwrap();
    assert_eq!(csv.lines().count(), 17);
    assert_eq!(csv.lines().nth(1), Some("1,1,38592,38592"));
    let mut rows = csv::Reader::from_reader(csv.as_bytes());
    let rows: Vec<(String, String)> =
        rows.records().map(|r| r.unwrap()).map(|r| (r[0].to_string(), r[2].to_string())).collect();
    for (k1, p) in &rows {
        assert!(rows.iter().filter(|(k, _)| k == k1).all(|(_, q)| q == p));
    }
    assert_eq!(code(&run(d.path(), &["sweep", "--L0", "3", "--L1", "64", "--L2", "64", "--factors", ""])), 1);
    assert_eq!(code(&run(d.path(), &["sweep", "--L0", "3", "--L1", "64", "--L2", "64"])), 1);
}

#[test]
fn verify_exit_codes() {
    let d = tempfile::tempdir().unwrap();
    json(&run(d.path(), &["transform", "builtin:tiny_quadrant", "--factors", "2,4", "-o", "s.json"]));
    let v = json(&run(d.path(), &["verify", "s.json", "--trials", "100", "--inputs", "2"]));
    assert_eq!(v["pass"], true);
    assert!(v["gradient"]["checked"].as_u64().unwrap() >= 200);
    let out = run(d.path(), &["verify", "s.json", "--trials", "2", "--inject-fault", "--grad-weights", "0"]);
    assert_eq!(code(&out), 3);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["f32"]["pass"], false);
    assert_eq!(code(&run(d.path(), &["verify", "builtin:tiny_quadrant"])), 3);
}

#[test]
fn train_outputs_and_errors() {
    let d = tempfile::tempdir().unwrap();
    let seed = "9";
    json(&run(d.path(), &["train", "builtin:tiny_quadrant", "--epochs", "0", "--seed", seed, "-o", "w.bin"]));
    let init = init_weights(&Graph::lower(&tiny_quadrant()).unwrap(), 9);
    assert_eq!(std::fs::read(d.path().join("w.bin")).unwrap(), init.to_bytes());
    let hist = std::fs::read_to_string(d.path().join("w.bin.history.csv")).unwrap();
    assert!(hist.starts_with("epoch,train_acc,test_acc,loss\n0,"));

    let v = json(&run(d.path(), &["train", "builtin:tiny_quadrant", "--epochs", "2", "--init", "w.bin", "-o", "w2.bin"]));
    assert_eq!(v["history"].as_array().unwrap().len(), 3);

    let out = run(d.path(), &["train", "builtin:tiny_quadrant", "--epochs", "2", "--lr", "1e30", "-o", "x.bin"]);
    assert_eq!(code(&out), 5);
    assert!(String::from_utf8_lossy(&out.stderr).contains("epoch 1"));
    assert_eq!(code(&run(d.path(), &["train", "builtin:vgg16_cifar", "--epochs", "1", "-o", "x.bin"])), 1);
    assert_eq!(code(&run(d.path(), &["train", "builtin:tiny_quadrant", "--dataset", "mnist", "-o", "x.bin"])), 1);
    assert_eq!(code(&run(d.path(), &["train", "builtin:vgg16_cifar", "--dataset", "cifar:nowhere", "-o", "x.bin"])), 1);
}

#[test]
fn train_reads_cifar_directory() {
    let d = tempfile::tempdir().unwrap();
    let mut bytes = Vec::new();
    for i in 0..6u8 {
        bytes.push(i % 10);
        bytes.extend(std::iter::repeat(i * 40).take(3072));
    }
    std::fs::create_dir(d.path().join("c")).unwrap();
    std::fs::write(d.path().join("c/data_batch_1.bin"), &bytes).unwrap();
    std::fs::write(d.path().join("c/test_batch.bin"), &bytes[..2 * 3073]).unwrap();
    let v = json(&run(d.path(), &["train", "builtin:resnet18_cifar", "--dataset", "cifar:c", "--epochs", "0", "-o", "w.bin"]));
    assert_eq!(v["train_samples"], 6);
    assert_eq!(v["test_samples"], 2);
}

#[test]
fn search_outputs_and_errors() {
    let d = tempfile::tempdir().unwrap();
    json(&run(d.path(), &["builtin", "resnet18-table", "-o", "t.json"]));
    let v = json(&run(d.path(), &["search", "builtin:resnet18_cifar", "--evaluator", "table:t.json", "--out-dir", "o"]));
    // factor 6 divides none of the power-of-two widths
    assert_eq!(v["plan"], serde_json::json!([8, 8, 2, 4, 8]));
    for f in ["plan.json", "trace.json", "trace.csv", "table.csv", "manifest.json"] {
        assert!(d.path().join("o").join(f).is_file(), "{f}");
    }
    let trace = std::fs::read_to_string(d.path().join("o/trace.csv")).unwrap();
    assert!(trace.contains("skip_nondivisible"));
    let v = json(&run(
        d.path(),
        &["search", "builtin:resnet18_cifar", "--evaluator", "table:t.json", "--policy", "max-within-threshold", "--out-dir", "p"],
    ));
    assert_eq!(v["plan"], serde_json::json!([8, 8, 2, 4, 8]));

    let bad = |args: &[&str]| code(&run(d.path(), args));
    assert_eq!(bad(&["search", "builtin:resnet18_cifar", "--threshold", "-1", "--evaluator", "table:t.json", "--out-dir", "o"]), 1);
    assert_eq!(bad(&["search", "builtin:resnet18_cifar", "--evaluator", "table:none.json", "--out-dir", "o"]), 1);
    assert_eq!(bad(&["search", "builtin:resnet18_cifar", "--evaluator", "magic", "--out-dir", "o"]), 1);
    let out = run(d.path(), &["search", "builtin:resnet18_cifar", "--evaluator", "external:false", "--out-dir", "o"]);
    assert_eq!(code(&out), 4);
    assert!(String::from_utf8_lossy(&out.stderr).contains("block 0"));
    std::fs::write(d.path().join("short.json"), r#"{"scale":"percent","factors":[1,2],"rows":[[93.0,92.0]]}"#).unwrap();
    assert_eq!(bad(&["search", "builtin:resnet18_cifar", "--evaluator", "table:short.json", "--out-dir", "o"]), 4);
}

#[test]
fn internal_search_on_synth() {
    let d = tempfile::tempdir().unwrap();
    let v = json(&run(
        d.path(),
        &["search", "builtin:tiny_quadrant", "--samples", "200", "--ladder", "2,4", "--baseline-budget", "1", "--candidate-budget", "1", "--out-dir", "o"],
    ));
    assert_eq!(v["plan"].as_array().unwrap().len(), 2);
    assert_eq!(v["evaluator"], "internal");
}

#[test]
fn usage_and_help() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(d.path(), &["--help"])), 0);
    assert_eq!(code(&run(d.path(), &["--version"])), 0);
    assert_eq!(code(&run(d.path(), &[])), 1);
    assert_eq!(code(&run(d.path(), &["frobnicate"])), 1);
    assert_eq!(code(&run(d.path(), &["builtin", "lenet"])), 1);
    let out = run(d.path(), &["builtin", "tiny_quadrant"]);
    assert!(out.status.success());
    assert!(splitforge::arch::parse_architecture(std::str::from_utf8(&out.stdout).unwrap()).is_ok());
}
