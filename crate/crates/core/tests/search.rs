use splitforge::arch::{Architecture, Block, ClassifierSpec, ConvSpec, Layer, PoolSpec, Shape};
use splitforge::data::{split_train_test, synth_quadrant_dataset};
use splitforge::search::{
    greedy_split_search, reference_resnet18_table, AccuracyTable, Candidate, Decision, Evaluation, Evaluator,
    EvaluatorError, ExternalEvaluator, InternalEvaluator, SearchConfig, SearchError, TableMock,
};
use splitforge::tensor::TrainConfig;
use std::io::Write;
use std::time::Duration;

fn blocks(widths: &[usize]) -> Architecture {
    let side = 1 << widths.len().max(4);
    Architecture {
        name: "net".into(),
        input_shape: Shape::new(3, side, side),
        blocks: widths
            .iter()
            .map(|&w| Block { layers: vec![Layer::Conv(ConvSpec::same3x3(w)), Layer::Relu], pool: Some(PoolSpec::max2()) })
            .collect(),
        classifier: ClassifierSpec::linear(4),
    }
}

struct Constant(f64);

impl Evaluator for Constant {
    fn name(&self) -> &str {
        "constant"
    }
    fn evaluate(&mut self, _: &Candidate) -> Result<Evaluation, EvaluatorError> {
        Ok(Evaluation { accuracy: self.0, weights: None })
    }
}

#[test]
fn constant_evaluator_takes_largest_divisible_factor() {
    // 8 does not divide 12 and 6 does not divide 32
    let arch = blocks(&[48, 48, 12, 12]);
    let (plan, trace) = greedy_split_search(&arch, &SearchConfig::default(), &mut Constant(0.7)).unwrap();
    assert_eq!(plan, vec![8, 8, 6, 6]);
    assert_eq!(greedy_split_search(&blocks(&[32, 32]), &SearchConfig::default(), &mut Constant(0.7)).unwrap().0, vec![8, 8]);
    assert_eq!(greedy_split_search(&blocks(&[48, 32, 12]), &SearchConfig::default(), &mut Constant(0.7)).unwrap().0, vec![8, 8, 4]);
    assert!(trace.evaluations <= arch.blocks.len() * 5);
    let huge = SearchConfig { threshold: 101.0, ..SearchConfig::default() };
    assert_eq!(greedy_split_search(&arch, &huge, &mut Constant(0.1)).unwrap().0, vec![8, 8, 6, 6]);
}

#[test]
fn trace_invariants_on_reference_table() {
    let arch = blocks(&[48; 5]);
    let mut mock = TableMock::from_table(&reference_resnet18_table());
    let (plan, trace) = greedy_split_search(&arch, &SearchConfig::default(), &mut mock).unwrap();
    let mut last_block = 0;
    for r in &trace.records {
        assert!(r.block >= last_block);
        last_block = r.block;
        if let (Some(a), Some(b), Some(d)) = (r.accuracy, r.baseline, r.delta) {
            assert!((d - (b - a) * 100.0).abs() < 1e-6);
        }
    }
    for (block, &f) in plan.iter().enumerate() {
        assert!(f == 1 || trace.records.iter().any(|r| r.block == block && r.factor == f && r.decision == Decision::Continue));
    }
    // nothing is evaluated after a rejection within a block
    for block in 0..5 {
        let recs: Vec<_> = trace.records.iter().filter(|r| r.block == block).collect();
        if let Some(pos) = recs.iter().position(|r| r.decision == Decision::Reject) {
            assert_eq!(pos + 1, recs.len());
        }
    }
    let again = greedy_split_search(&arch, &SearchConfig::default(), &mut TableMock::from_table(&reference_resnet18_table())).unwrap();
    assert_eq!(again.1, trace);
    assert!(trace.table_csv().starts_with("block,1,2,4,6,8\n0,93.57,93.64,93.55,93.41,93.46\n"));
}

#[test]
fn table_mock_lookups() {
    let mock = TableMock::from_table(&reference_resnet18_table());
    assert_eq!(mock.lookup(0, 2).unwrap(), 93.64);
    assert_eq!(mock.lookup(0, 1).unwrap(), 93.57);
    assert!(matches!(mock.lookup(0, 3), Err(EvaluatorError::MissingCell { block: 0, factor: 3 })));
    let t = AccuracyTable::from_json(r#"{"scale":"fraction","factors":[1,2],"rows":[[0.9,null]]}"#).unwrap();
    let m = TableMock::from_table(&t);
    assert!((m.lookup(0, 1).unwrap() - 90.0).abs() < 1e-12);
    assert!(m.lookup(0, 2).is_err());
    assert!(AccuracyTable::from_json(r#"{"scale":"percent","factors":[1,2],"rows":[[1]]}"#).is_err());
}

fn stub(body: &str) -> tempfile::TempPath {
    let mut f = tempfile::Builder::new().suffix(".sh").tempfile().unwrap();
    writeln!(f, "#!/bin/sh\n{body}").unwrap();
    f.into_temp_path()
}

fn external(script: &tempfile::TempPath, secs: u64) -> ExternalEvaluator {
    ExternalEvaluator::new(&["sh".into(), script.to_string_lossy().into_owned()], Duration::from_secs(secs)).unwrap()
}

fn one_block_search(ev: &mut dyn Evaluator) -> Result<(Vec<usize>, splitforge::SearchTrace), SearchError> {
    greedy_split_search(&blocks(&[8]), &SearchConfig { ladder: vec![2], ..SearchConfig::default() }, ev)
}

#[test]
fn external_protocol() {
    let ok = stub("test -s \"$1\" || exit 3\ntest \"$2\" = 3 || exit 4\necho noise\necho 0.5");
    let (plan, trace) = one_block_search(&mut external(&ok, 30)).unwrap();
    assert_eq!(plan, vec![2]);
    assert_eq!(trace.records[0].accuracy, Some(0.5));

    let big = stub("echo 1.5");
    match one_block_search(&mut external(&big, 30)) {
        Err(SearchError::Evaluator { source: EvaluatorError::UnparseableOutput(s), .. }) => assert_eq!(s, "1.5"),
        other => panic!("{other:?}"),
    }
    let fail = stub("echo broken >&2\nexit 2");
    match one_block_search(&mut external(&fail, 30)) {
        Err(SearchError::Evaluator { block: 0, factor: 1, source: EvaluatorError::NonZeroExit { code, stderr } }) => {
            assert_eq!(code, Some(2));
            assert!(stderr.contains("broken"));
        }
        other => panic!("{other:?}"),
    }
    let slow = stub("sleep 5\necho 0.5");
    assert!(matches!(
        one_block_search(&mut external(&slow, 1)),
        Err(SearchError::Evaluator { source: EvaluatorError::Timeout { .. }, .. })
    ));
}

#[test]
fn internal_search_emits_valid_plan() {
    let ds = synth_quadrant_dataset(0, 200, 16, 4).unwrap();
    let (tr, te) = split_train_test(&ds, 0.75, 0).unwrap();
    let cfg = TrainConfig { epochs: 2, batch_size: 32, learning_rate: 0.05, seed: 0, fine_tune_epochs: 1 };
    let mut ev = InternalEvaluator { train: tr, test: Some(te), config: cfg };
    let search = SearchConfig { ladder: vec![2, 4], baseline_budget: 2, candidate_budget: 1, ..SearchConfig::default() };
    let arch = blocks(&[8, 16]);
    let (plan, trace) = greedy_split_search(&arch, &search, &mut ev).unwrap();
    assert!(splitforge::transform::split_transform(&arch, &plan).is_ok());
    assert_eq!(trace.evaluations, trace.records.len());
}
