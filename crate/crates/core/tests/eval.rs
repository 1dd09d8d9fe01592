use adaptgemm::dataset::{gen_po2, ClassIndex, Dataset, DatasetRecord, Provenance};
use adaptgemm::eval::{
    accuracy, baseline_select, dtpr, dttr, overhead_bench, peak_ratios, perf_of_class, perf_of_config,
    score_model, select_best_model, write_scores_csv, BaselinePolicy, ModelScore, OverheadOptions, PerfSource,
    Selector, TableArgmax, TreeModel, DEFAULT_THRESHOLD, SCORE_COLUMNS,
};
use adaptgemm::kernels::{DeviceCaps, KernelConfig, KernelFamily, ProblemShape};
use adaptgemm::model::{DecisionTree, Feature, Node, TreeStats};
use adaptgemm::rng::SplitMix64;
use adaptgemm::tuner::{modeled_table, TableSet, TuningTable};
use adaptgemm::Error;

const D: KernelConfig = KernelConfig::from_parts(KernelFamily::Direct, 16, 16, 8, 2, 2, 1);
const I: KernelConfig = KernelConfig::from_parts(KernelFamily::Indirect, 64, 64, 16, 4, 4, 2);

fn shape(m: usize, n: usize, k: usize) -> ProblemShape {
    ProblemShape::new(m, n, k).unwrap()
}

fn policy() -> BaselinePolicy {
    BaselinePolicy::new(D, I, DEFAULT_THRESHOLD).unwrap()
}

/// Modeled table with the GFLOPS of selected configs overwritten.
fn table(s: ProblemShape, overrides: &[(KernelConfig, f64)]) -> TuningTable {
    let mut t = modeled_table(&s, &DeviceCaps::default(), 1).unwrap();
    for m in &mut t.measurements {
        m.gflops = m.gflops.min(1.0);
        if let Some((_, g)) = overrides.iter().find(|(c, _)| *c == m.config) {
            m.gflops = *g;
        }
    }
    TuningTable::new(s, t.measurements, t.meta).unwrap()
}

fn record(t: &TuningTable, classes: &mut ClassIndex) -> DatasetRecord {
    let best = t.best();
    DatasetRecord {
        input: t.shape,
        label: best.config,
        class_id: classes.intern(best.config),
        peak_gflops: best.gflops,
        table_ref: None,
    }
}

struct Fixed(KernelConfig);

impl Selector for Fixed {
    fn select(&self, _: &ProblemShape) -> adaptgemm::Result<KernelConfig> {
        Ok(self.0)
    }
}

fn modeled_set(seed: u64) -> (Dataset, TableSet) {
    let caps = DeviceCaps::default();
    let tables: Vec<_> = gen_po2(64, 1024).unwrap().iter().map(|s| modeled_table(s, &caps, seed).unwrap()).collect();
    let d = Dataset::from_tables(&tables, Provenance::Po2).unwrap();
    (d, tables.into_iter().collect())
}

#[test]
fn accuracy_examples() {
    let mut classes = ClassIndex::new();
    let tables: Vec<_> = [(64, D), (128, D), (512, I), (1024, I)]
        .iter()
        .map(|&(e, c)| table(shape(e, e, e), &[(c, 5.0)]))
        .collect();
    let records: Vec<_> = tables.iter().map(|t| record(t, &mut classes)).collect();
    assert_eq!(accuracy(&policy(), &records).unwrap(), 1.0);
    // Threshold 100 sends 128^3 to the Indirect default.
    let p = BaselinePolicy::new(D, I, 100).unwrap();
    assert_eq!(accuracy(&p, &records).unwrap(), 0.75);
    assert_eq!(accuracy(&Fixed(D), &records).unwrap(), 0.5);
    assert!(matches!(accuracy(&Fixed(D), &[]), Err(Error::Argument(_))));
}

#[test]
fn dtpr_and_dttr_are_means_of_ratios() {
    let s1 = shape(64, 64, 64);
    let s2 = shape(1024, 1024, 1024);
    let mut classes = ClassIndex::new();
    // Model picks I everywhere. Shape 1: I at half of peak. Shape 2: I is the peak.
    let t1 = table(s1, &[(D, 4.0), (I, 2.0)]);
    let t2 = table(s2, &[(I, 8.0), (D, 2.0)]);
    let records = vec![record(&t1, &mut classes), record(&t2, &mut classes)];
    let tables: TableSet = [t1, t2].into_iter().collect();
    assert_eq!(dtpr(&Fixed(I), &records, &tables).unwrap(), 0.75);
    assert_eq!(peak_ratios(&Fixed(I), &records, &tables).unwrap(), vec![0.5, 1.0]);

    // Baseline picks D on s1 (ratio 2/4) and I on s2 (ratio 1).
    assert_eq!(dttr(&Fixed(I), &records, &tables, &policy()).unwrap(), 0.75);
    // Per-record ratios {2.0, 1.0}.
    let t1 = table(s1, &[(D, 2.0), (I, 4.0)]);
    let t2 = table(s2, &[(I, 8.0)]);
    let tables: TableSet = [t1, t2].into_iter().collect();
    assert_eq!(dttr(&Fixed(I), &records, &tables, &policy()).unwrap(), 1.5);
}

#[test]
fn missing_tables_and_configs_are_errors() {
    let (d, tables) = modeled_set(2);
    let stranger = record(&table(shape(3, 3, 3), &[]), &mut ClassIndex::new());
    assert!(matches!(dtpr(&TableArgmax(&tables), std::slice::from_ref(&stranger), &tables), Err(Error::Evaluation(_))));
    let absent = KernelConfig::direct(8, 8, 8, 8, 8);
    assert!(matches!(perf_of_config(&d.records[0].input, &absent, &tables), Err(Error::Lookup(_))));
    assert!(matches!(perf_of_class(&d.records[0].input, 999, &d.classes, &tables), Err(Error::Consistency(_))));
}

#[test]
fn perf_of_class_reads_table_rows() {
    let (d, tables) = modeled_set(3);
    let dir = tempfile::tempdir().unwrap();
    for r in &d.records {
        let t = tables.get(&r.input).unwrap();
        assert_eq!(perf_of_class(&r.input, r.class_id, &d.classes, &tables).unwrap(), r.peak_gflops);
        let worst = t.measurements.iter().min_by(|a, b| a.gflops.total_cmp(&b.gflops)).unwrap();
        assert_eq!(perf_of_config(&r.input, &worst.config, &tables).unwrap(), worst.gflops);

        // Values survive the CSV round trip bit for bit.
        let path = dir.path().join("t.csv");
        t.write_csv(&path).unwrap();
        let back: TableSet = [TuningTable::read_csv(&path).unwrap()].into_iter().collect();
        for m in t.measurements.iter().step_by(37) {
            assert_eq!(perf_of_config(&r.input, &m.config, &back).unwrap(), m.gflops);
        }
    }
}

#[test]
fn table_mode_dtpr_is_at_most_one() {
    let (d, tables) = modeled_set(4);
    let mut rng = SplitMix64::new(4);
    let space = adaptgemm::kernels::full_search_space(&DeviceCaps::default());
    for _ in 0..50 {
        let pick = space[rng.below(space.len() as u64) as usize];
        let v = dtpr(&Fixed(pick), &d.records, &tables).unwrap();
        assert!(v > 0.0 && v <= 1.0);
        assert!(v < 1.0 || d.records.iter().all(|r| r.label == pick));
    }
    assert_eq!(dtpr(&TableArgmax(&tables), &d.records, &tables).unwrap(), 1.0);
    assert_eq!(dttr(&policy(), &d.records, &tables, &policy()).unwrap(), 1.0);
}

#[test]
fn baseline_policy_validation() {
    assert!(BaselinePolicy::new(I, D, 384).is_err());
    assert!(BaselinePolicy::new(D, I, 0).is_err());
    let illegal = KernelConfig::direct(32, 32, 16, 4, 4);
    let p = BaselinePolicy::new(illegal, I, 384).unwrap();
    assert!(p.validate(&DeviceCaps::default()).is_err());
    assert!(policy().validate(&DeviceCaps::default()).is_ok());

    let t = modeled_table(&shape(256, 256, 256), &DeviceCaps::default(), 1).unwrap();
    let u = modeled_table(&shape(1024, 1024, 1024), &DeviceCaps::default(), 1).unwrap();
    let p = BaselinePolicy::from_tables(&t, &u, 384).unwrap();
    assert_eq!(p.default_direct, t.best_of(KernelFamily::Direct).unwrap().config);
    assert_eq!(p.default_indirect, u.best_of(KernelFamily::Indirect).unwrap().config);

    // Geometric mean of 2048*64*64 is about 203.2.
    assert_eq!(baseline_select(&p, &shape(2048, 64, 64)), p.default_direct);
    assert_eq!(baseline_select(&p, &shape(u32::MAX as usize, u32::MAX as usize, 1)), p.default_indirect);
}

fn score(name: &str, accuracy: f64, dtpr: f64, leaves: usize) -> ModelScore {
    ModelScore {
        name: name.into(),
        accuracy,
        dtpr,
        dttr: 1.0,
        min_samples_leaf: "1".into(),
        stats: TreeStats {
            height: 1,
            total_leaves: leaves,
            leaves_per_family: [leaves, 0],
            unique_configs_per_family: [1, 0],
        },
    }
}

#[test]
fn best_model_tie_rules() {
    let single = [score("a", 0.5, 0.9, 3)];
    assert_eq!(select_best_model(&single).unwrap().name, "a");
    let by_acc = [score("a", 0.5, 0.9, 3), score("b", 0.6, 0.9, 30)];
    assert_eq!(select_best_model(&by_acc).unwrap().name, "b");
    let by_leaves = [score("a", 0.6, 0.9, 30), score("b", 0.6, 0.9, 3)];
    assert_eq!(select_best_model(&by_leaves).unwrap().name, "b");
    let by_name = [score("z", 0.6, 0.9, 3), score("m", 0.6, 0.9, 3)];
    assert_eq!(select_best_model(&by_name).unwrap().name, "m");
    assert!(select_best_model(&[]).is_err());
}

#[test]
fn score_csv_schema() {
    let (d, tables) = modeled_set(5);
    let model = TreeModel::new(
        DecisionTree::from_nodes(vec![
            Node::Split { feature: Feature::M, threshold: 300.0, left: 1, right: 2, samples: 0 },
            Node::Leaf { class_id: 0, samples: 0 },
            Node::Leaf { class_id: (d.classes.len() - 1) as u32, samples: 0 },
        ])
        .unwrap(),
        d.classes.clone(),
    );
    let s = score_model("h1-L1", "1", &model, &d.records, &tables, &policy()).unwrap();
    assert_eq!(s.stats.total_leaves, 2);
    assert_eq!(s.accuracy, accuracy(&model, &d.records).unwrap());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scores.csv");
    write_scores_csv(&path, std::slice::from_ref(&s), Some("config_hash=1")).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("# config_hash=1"));
    assert_eq!(lines.next().unwrap(), SCORE_COLUMNS.join(","));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row.len(), SCORE_COLUMNS.len());
    assert_eq!(row[0], "h1-L1");
    assert_eq!(row[2], format!("{:.3}", s.dtpr));
}

#[test]
fn overhead_of_single_leaf_is_negligible() {
    let mut classes = ClassIndex::new();
    classes.intern(D);
    let model = TreeModel::new(DecisionTree::leaf(0), classes);
    let opts = OverheadOptions {
        dispatch_trials: 5,
        calls_per_trial: 100,
        kernel_trials: 1,
    };
    let out = overhead_bench(&model, &[shape(96, 96, 96)], &DeviceCaps::default(), &opts).unwrap();
    assert_eq!(out.len(), 1);
    assert_eq!(out[0].config, D);
    assert!(out[0].overhead_fraction < 0.01, "{:?}", out[0]);
    let zero = OverheadOptions { dispatch_trials: 0, ..opts };
    assert!(overhead_bench(&model, &[shape(1, 1, 1)], &DeviceCaps::default(), &zero).is_err());
}

#[test]
fn table_peak_source() {
    let (d, tables) = modeled_set(6);
    for r in &d.records {
        assert_eq!(PerfSource::peak(&tables, &r.input).unwrap(), r.peak_gflops);
    }
}
