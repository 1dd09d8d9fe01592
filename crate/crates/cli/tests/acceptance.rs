//! Acceptance criteria for the toolkit, run in order on one thread so the
//! timing-sensitive checks do not compete for the CPU.
//!
//! Usage: `cargo test -p adaptgemm-cli --test acceptance [-- N ...]` runs
//! every criterion, or only the listed numbers.

use std::collections::{BTreeMap, BTreeSet};
use std::error::Error as StdError;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use adaptgemm::codegen::{
    emit_dispatcher, probe_shapes, roundtrip_check, CompiledDispatcher, RoundTrip, Syntax,
};
use adaptgemm::dataset::{gen_go2, gen_po2, split, split_indices, table_file_name, ClassIndex, Dataset, Provenance};
use adaptgemm::eval::{
    accuracy, dtpr, dttr, overhead_bench, select_best_model, BaselinePolicy, ModelScore, OverheadOptions,
    TableArgmax, TreeModel, DEFAULT_THRESHOLD,
};
use adaptgemm::kernels::{
    enumerate_search_space, full_search_space, gemm_execute, gemm_reference, DeviceCaps, KernelConfig, KernelFamily,
    Matrix, ProblemShape,
};
use adaptgemm::model::{
    default_heights, default_min_leaves, features_of, grid_train, train, DecisionTree, Feature, MaxHeight, MinLeaf,
    Node, Sample, TrainConfig, TreeStats,
};
use adaptgemm::rng::SplitMix64;
use adaptgemm::tuner::{modeled_table, TableSet, TuningTable, DEFAULT_SEED};
use num_rational::Ratio;

type Outcome = Result<String, Box<dyn StdError>>;

macro_rules! fail {
    ($($t:tt)*) => { return Err(format!($($t)*).into()) };
}

fn shape(m: usize, n: usize, k: usize) -> ProblemShape {
    ProblemShape::new(m, n, k).unwrap()
}

fn within(limit: Duration, start: Instant, what: &str) -> Result<Duration, Box<dyn StdError>> {
    let took = start.elapsed();
    if took > limit {
        fail!("{what} took {took:.1?}, limit {limit:?}");
    }
    Ok(took)
}

// ---------------------------------------------------------------------------

fn kernel_correctness() -> Outcome {
    let start = Instant::now();
    let caps = DeviceCaps::default();
    let spaces = [
        enumerate_search_space(KernelFamily::Direct, &caps),
        enumerate_search_space(KernelFamily::Indirect, &caps),
    ];
    let mut rng = SplitMix64::new(0xC0FFEE);
    let mut worst = 0.0f64;
    let mut runs = 0usize;
    for i in 0..200u64 {
        let mut d = [0usize; 3];
        for x in &mut d {
            *x = 1 + rng.below(96) as usize;
        }
        match i % 10 {
            0 => d[0] = 1,
            1 => d[1] = 1,
            2 => d[2] = 1,
            3 => d = [1, 1, 1],
            _ => {}
        }
        let t = (i / 10) % 4;
        let alpha = if i % 7 == 0 { 1.0 } else { rng.next_f64() * 4.0 - 2.0 };
        let beta = if i % 5 == 0 { 0.0 } else { rng.next_f64() * 4.0 - 2.0 };
        let s = shape(d[0], d[1], d[2])
            .with_transposes(t & 1 == 1, t & 2 == 2)
            .with_scalars(alpha, beta);
        let (ar, ac) = s.a_dims();
        let (br, bc) = s.b_dims();
        let a = Matrix::<f32>::random(ar, ac, 3 * i);
        let b = Matrix::<f32>::random(br, bc, 3 * i + 1);
        let c = Matrix::<f32>::random(s.m, s.n, 3 * i + 2);
        let reference = gemm_reference(&s, &a, &b, &c)?;
        for space in &spaces {
            let mut order: Vec<usize> = (0..space.len()).collect();
            rng.shuffle(&mut order);
            for &j in &order[..20] {
                let (out, _) = gemm_execute(&s, &space[j], &caps, &a, &b, &c)?;
                let diff = out.max_rel_diff(&reference);
                worst = worst.max(diff);
                runs += 1;
                if diff.is_nan() || diff > 1e-6 {
                    fail!("{} on {s}: relative difference {diff:e}", space[j]);
                }
            }
        }
    }
    let took = within(Duration::from_secs(120), start, "kernel sweep")?;
    Ok(format!("{runs} executions, worst relative difference {worst:e}, {took:.1?}"))
}

/// Legal configurations by direct application of the rules, over the
/// parameter domains of each family.
fn brute_force_space(family: KernelFamily, caps: &DeviceCaps) -> BTreeSet<KernelConfig> {
    let (wg, kwg, wi, kwi, cap): (&[usize], &[usize], &[usize], &[usize], usize) = match family {
        KernelFamily::Direct => (&[8, 16, 32], &[8, 16], &[1, 2, 4], &[1, 2], caps.register_tile_cap_direct),
        KernelFamily::Indirect => (&[16, 32, 64], &[8, 16, 32], &[2, 4, 8], &[1, 2], caps.register_tile_cap_indirect),
    };
    let mut out = BTreeSet::new();
    for &mwg in wg {
        for &nwg in wg {
            for &kwg in kwg {
                for &mwi in wi {
                    for &nwi in wi {
                        for &kwi in kwi {
                            let ok = mwg % mwi == 0
                                && nwg % nwi == 0
                                && kwg % kwi == 0
                                && (family == KernelFamily::Indirect || kwi == 1)
                                && mwi * nwi <= cap
                                && (mwg + nwg) * kwg * caps.element_size <= caps.tile_memory_cap;
                            if ok {
                                out.insert(KernelConfig {
                                    family,
                                    mwg,
                                    nwg,
                                    kwg,
                                    mwi,
                                    nwi,
                                    kwi,
                                });
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn search_space_counts() -> Outcome {
    let caps = DeviceCaps::default();
    let mut counts = Vec::new();
    for (family, expected) in [(KernelFamily::Direct, 144), (KernelFamily::Indirect, 432)] {
        let got = enumerate_search_space(family, &caps);
        let set: BTreeSet<KernelConfig> = got.iter().copied().collect();
        if set.len() != got.len() {
            fail!("{family}: duplicates in the enumeration");
        }
        if got.len() != expected {
            fail!("{family}: {} configs, expected {expected}", got.len());
        }
        if set != brute_force_space(family, &caps) {
            fail!("{family}: enumeration differs from the brute-force filter");
        }
        counts.push(got.len());
    }
    let relaxed = DeviceCaps {
        register_tile_cap_direct: 16,
        ..caps
    };
    let direct16 = enumerate_search_space(KernelFamily::Direct, &relaxed);
    if direct16.len() != 162 || direct16.iter().copied().collect::<BTreeSet<_>>() != brute_force_space(KernelFamily::Direct, &relaxed) {
        fail!("Direct with register cap 16: {} configs, expected 162", direct16.len());
    }
    Ok(format!("Direct {}, Indirect {}, Direct at cap 16: 162", counts[0], counts[1]))
}

fn dataset_cardinalities() -> Outcome {
    let po2 = gen_po2(64, 2048)?;
    let go2 = gen_go2(256, 3840, 256)?;
    for (name, shapes, expected) in [("po2", &po2, 216), ("go2", &go2, 3375)] {
        let unique: BTreeSet<_> = shapes.iter().map(|s| s.dims()).collect();
        if shapes.len() != expected || unique.len() != expected {
            fail!("{name}: {} shapes ({} unique), expected {expected}", shapes.len(), unique.len());
        }
    }
    Ok("po2(64, 2048) 216 shapes, go2(256, 3840, 256) 3375 shapes".into())
}

// ---------------------------------------------------------------------------

type Q = Ratio<i64>;

fn exact_gini(labels: &[u32]) -> Q {
    let n = labels.len() as i64;
    let mut counts = BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_insert(0i64) += 1;
    }
    Q::from_integer(1) - counts.values().map(|&c| Q::new(c * c, n * n)).sum::<Q>()
}

/// Exhaustive weighted-Gini search: candidate thresholds are midpoints of
/// adjacent distinct values; ties keep M before N before K, then the lower
/// threshold; the winner must beat the parent strictly.
fn oracle_root(samples: &[Sample], min_leaf: usize) -> Option<(Feature, f64)> {
    let labels: Vec<u32> = samples.iter().map(|s| s.class).collect();
    let parent = exact_gini(&labels);
    let n = samples.len() as i64;
    let mut best: Option<(Feature, f64, Q)> = None;
    for feature in [Feature::M, Feature::N, Feature::K] {
        let f = feature.index();
        let values: BTreeSet<i64> = samples.iter().map(|s| s.features[f] as i64).collect();
        let values: Vec<i64> = values.into_iter().collect();
        for w in values.windows(2) {
            let t = (w[0] + w[1]) as f64 / 2.0;
            let left: Vec<u32> = samples.iter().filter(|s| s.features[f] <= t).map(|s| s.class).collect();
            let right: Vec<u32> = samples.iter().filter(|s| s.features[f] > t).map(|s| s.class).collect();
            if left.len() < min_leaf || right.len() < min_leaf {
                continue;
            }
            let w = (exact_gini(&left) * left.len() as i64 + exact_gini(&right) * right.len() as i64) / n;
            if best.as_ref().is_none_or(|b| w < b.2) {
                best = Some((feature, t, w));
            }
        }
    }
    best.filter(|b| b.2 < parent).map(|(f, t, _)| (f, t))
}

fn oracle_majority(samples: &[Sample]) -> u32 {
    let mut counts = BTreeMap::new();
    for s in samples {
        *counts.entry(s.class).or_insert(0usize) += 1;
    }
    // Strictly greater keeps the smallest id on ties.
    let mut best = (0u32, 0usize);
    for (&c, &k) in &counts {
        if k > best.1 {
            best = (c, k);
        }
    }
    best.0
}

fn cart_oracle() -> Outcome {
    let start = Instant::now();
    let mut cube = Vec::new();
    for m in [1.0, 2.0, 4.0] {
        for n in [1.0, 2.0, 4.0] {
            for k in [1.0, 2.0, 4.0] {
                cube.push([m, n, k]);
            }
        }
    }
    // Feature layouts: three strides through the cube and one with
    // duplicated inputs.
    let layouts: [fn(usize) -> usize; 4] = [|i| i % 27, |i| (5 * i + 3) % 27, |i| (7 * i + 11) % 27, |i| (13 * (i / 2) + 4) % 27];
    let mut cases = 0usize;
    let mut splits = 0usize;
    for layout in layouts {
        for n in 1..=8usize {
            for code in 0..3usize.pow(n as u32) {
                let mut c = code;
                let samples: Vec<Sample> = (0..n)
                    .map(|i| {
                        let class = (c % 3) as u32;
                        c /= 3;
                        Sample {
                            features: cube[layout(i)],
                            class,
                        }
                    })
                    .collect();
                for min_leaf in [1usize, 2] {
                    let tree = train(&samples, &TrainConfig::new(MaxHeight::Unbounded, MinLeaf::Count(min_leaf))?)?;
                    let expected = oracle_root(&samples, min_leaf);
                    let ok = match (expected, tree.root()) {
                        (Some((f, t)), Node::Split { feature, threshold, .. }) => *feature == f && *threshold == t,
                        (None, Node::Leaf { class_id, .. }) => *class_id == oracle_majority(&samples),
                        _ => false,
                    };
                    if !ok {
                        fail!("root mismatch for {samples:?} with min leaf {min_leaf}: oracle {expected:?}, got {:?}", tree.root());
                    }
                    cases += 1;
                    splits += expected.is_some() as usize;
                }
            }
        }
    }
    let took = within(Duration::from_secs(60), start, "oracle sweep")?;
    Ok(format!("{cases} datasets ({splits} with a root split), {took:.1?}"))
}

// ---------------------------------------------------------------------------

/// Modeled tables for po2(64, 2048), written to disk and read back.
fn stored_po2_tables(dir: &Path) -> Result<Vec<TuningTable>, Box<dyn StdError>> {
    let caps = DeviceCaps::default();
    let mut tables = Vec::new();
    for s in gen_po2(64, 2048)? {
        let path = dir.join(table_file_name(&s));
        modeled_table(&s, &caps, DEFAULT_SEED)?.write_csv(&path)?;
        tables.push(TuningTable::read_csv(&path)?);
    }
    Ok(tables)
}

fn samples_of(dataset: &Dataset) -> Vec<Sample> {
    dataset
        .records
        .iter()
        .map(|r| Sample {
            features: features_of(&r.input),
            class: r.class_id,
        })
        .collect()
}

fn leaf_of(tree: &DecisionTree, x: &[f64; 3]) -> usize {
    let mut idx = 0;
    while let Node::Split {
        feature,
        threshold,
        left,
        right,
        ..
    } = tree.node(idx)
    {
        idx = if x[feature.index()] <= *threshold { *left } else { *right };
    }
    idx
}

fn tree_invariants() -> Outcome {
    let dir = tempfile::tempdir()?;
    let tables = stored_po2_tables(dir.path())?;
    let start = Instant::now();
    let dataset = Dataset::from_tables(&tables, Provenance::Po2)?;
    let samples = samples_of(&dataset);
    let n = samples.len();
    if n != 216 {
        fail!("dataset has {n} records");
    }
    let grid = grid_train(&samples, &default_heights(), &default_min_leaves())?;
    if grid.len() != 40 {
        fail!("grid has {} trees", grid.len());
    }
    let mut leaves_total = 0;
    for named in &grid {
        let tree = &named.tree;
        if let MaxHeight::Bounded(h) = named.config.max_height {
            if tree.height() > h as usize {
                fail!("{}: height {} above {h}", named.name, tree.height());
            }
        }
        // Integer ceil of L * n, with L in tenths for the fractional values.
        let need = match named.config.min_samples_leaf {
            MinLeaf::Count(c) => c,
            MinLeaf::Fraction(f) => (((f * 10.0).round() as usize) * n).div_ceil(10),
        };
        let mut support: BTreeMap<usize, usize> = BTreeMap::new();
        for s in &samples {
            *support.entry(leaf_of(tree, &s.features)).or_default() += 1;
        }
        if support.len() != tree.leaf_count() {
            fail!("{}: {} leaves, {} reached by training samples", named.name, tree.leaf_count(), support.len());
        }
        if let Some((leaf, &k)) = support.iter().find(|(_, &k)| k < need) {
            fail!("{}: leaf {leaf} holds {k} samples, minimum {need}", named.name);
        }
        leaves_total += tree.leaf_count();
    }
    let full = grid.iter().find(|t| t.name == "hMax-L1").ok_or("no hMax-L1 in the grid")?;
    let unique: BTreeSet<_> = dataset.records.iter().map(|r| r.input.dims()).collect();
    if unique.len() != n {
        fail!("inputs are not unique");
    }
    let model = TreeModel::new(full.tree.clone(), dataset.classes.clone());
    let acc = accuracy(&model, &dataset.records)?;
    if acc != 1.0 {
        fail!("hMax-L1 training accuracy {acc}");
    }
    let took = within(Duration::from_secs(60), start, "grid training")?;
    Ok(format!(
        "40 trees, {leaves_total} leaves in total, {} classes, hMax-L1 fits all {n} shapes, {took:.1?}",
        dataset.classes.len()
    ))
}

fn metric_identities() -> Outcome {
    let dir = tempfile::tempdir()?;
    let caps = DeviceCaps::default();
    let stored = stored_po2_tables(dir.path())?;
    let dataset = Dataset::from_tables(&stored, Provenance::Po2)?;
    let mut tables: TableSet = stored.into_iter().collect();
    let direct = modeled_table(&shape(256, 256, 256), &caps, DEFAULT_SEED)?;
    let indirect = modeled_table(&shape(1024, 1024, 1024), &caps, DEFAULT_SEED)?;
    let policy = BaselinePolicy::from_tables(&direct, &indirect, DEFAULT_THRESHOLD)?;
    tables.insert(direct);
    tables.insert(indirect);

    let all = &dataset.records;
    let argmax = dtpr(&TableArgmax(&tables), all, &tables)?;
    if argmax != 1.0 {
        fail!("argmax DTPR {argmax}");
    }
    let base = dttr(&policy, all, &tables, &policy)?;
    if base != 1.0 {
        fail!("baseline DTTR {base}");
    }

    let s = split(&dataset, 0.8, DEFAULT_SEED)?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| all[i].clone()).collect::<Vec<_>>();
    let train_set = samples_of(&dataset);
    let train_set: Vec<Sample> = s.train.iter().map(|&i| train_set[i]).collect();
    let tree = train(&train_set, &TrainConfig::new(MaxHeight::Bounded(4), MinLeaf::Count(1))?)?;
    let model = TreeModel::new(tree, dataset.classes.clone());
    let mut test = pick(&s.test);
    let metrics = |records: &[adaptgemm::dataset::DatasetRecord]| -> Result<[u64; 3], Box<dyn StdError>> {
        Ok([
            accuracy(&model, records)?.to_bits(),
            dtpr(&model, records, &tables)?.to_bits(),
            dttr(&model, records, &tables, &policy)?.to_bits(),
        ])
    };
    let reference = metrics(&test)?;
    let mut rng = SplitMix64::new(0x5EED);
    for round in 0..50 {
        rng.shuffle(&mut test);
        if metrics(&test)? != reference {
            fail!("metrics changed after shuffle {round}");
        }
    }
    let [a, p, t] = reference.map(f64::from_bits);
    Ok(format!(
        "argmax DTPR 1, baseline DTTR 1, h4-L1 on {} test shapes stable over 50 shuffles (acc {a:.3}, DTPR {p:.3}, DTTR {t:.3})",
        test.len()
    ))
}

// ---------------------------------------------------------------------------

type GridRow = (&'static str, f64, f64, f64, usize, usize, [usize; 2], [usize; 2]);

/// Reference scores of a 40-model grid trained on go2: name, accuracy (%),
/// DTPR, DTTR, leaves, height, unique configs and leaves per family
/// (Direct, Indirect).
const REFERENCE_GRID: [GridRow; 40] = [
    ("h1-L1", 62.0, 0.376, 0.637, 2, 1, [1, 1], [1, 1]),
    ("h1-L2", 62.0, 0.376, 0.637, 2, 1, [1, 1], [1, 1]),
    ("h1-L4", 62.0, 0.376, 0.637, 2, 1, [1, 1], [1, 1]),
    ("h1-L0.1", 62.0, 0.376, 0.637, 2, 1, [1, 1], [1, 1]),
    ("h1-L0.2", 62.0, 0.376, 0.637, 2, 1, [1, 1], [1, 1]),
    ("h1-L0.3", 59.0, 0.436, 0.736, 2, 1, [2, 0], [2, 0]),
    ("h1-L0.4", 56.0, 0.444, 0.735, 2, 1, [1, 1], [1, 1]),
    ("h1-L0.5", 51.5, 0.433, 0.734, 1, 0, [1, 0], [1, 0]),
    ("h2-L1", 62.0, 0.433, 0.734, 4, 2, [2, 1], [2, 2]),
    ("h2-L2", 62.0, 0.416, 0.703, 4, 2, [2, 1], [2, 2]),
    ("h2-L4", 62.0, 0.415, 0.702, 4, 2, [2, 1], [2, 2]),
    ("h2-L0.1", 62.0, 0.415, 0.702, 4, 2, [2, 1], [2, 2]),
    ("h2-L0.2", 62.0, 0.416, 0.703, 3, 2, [2, 1], [2, 1]),
    ("h2-L0.3", 59.0, 0.416, 0.982, 3, 2, [3, 0], [3, 0]),
    ("h2-L0.4", 56.0, 0.606, 0.736, 2, 1, [1, 1], [1, 1]),
    ("h2-L0.5", 51.5, 0.445, 0.734, 1, 0, [1, 0], [1, 0]),
    ("h4-L1", 67.0, 0.687, 1.120, 16, 4, [5, 1], [14, 2]),
    ("h4-L2", 67.0, 0.688, 1.122, 16, 4, [5, 1], [14, 2]),
    ("h4-L4", 67.0, 0.686, 1.119, 16, 4, [5, 1], [14, 2]),
    ("h4-L0.1", 65.5, 0.576, 0.931, 8, 4, [4, 1], [6, 2]),
    ("h4-L0.2", 62.0, 0.506, 0.845, 4, 3, [3, 1], [3, 1]),
    ("h4-L0.3", 59.0, 0.605, 0.981, 3, 2, [3, 0], [3, 0]),
    ("h4-L0.4", 56.0, 0.445, 0.737, 2, 1, [1, 1], [1, 1]),
    ("h4-L0.5", 51.5, 0.434, 0.735, 1, 0, [1, 0], [1, 0]),
    ("h8-L1", 67.0, 0.806, 1.340, 215, 8, [9, 1], [211, 4]),
    ("h8-L2", 66.5, 0.807, 1.341, 201, 8, [8, 1], [197, 4]),
    ("h8-L4", 66.0, 0.806, 1.304, 175, 8, [6, 1], [171, 4]),
    ("h8-L0.1", 65.5, 0.576, 0.931, 8, 4, [4, 1], [6, 2]),
    ("h8-L0.2", 62.0, 0.506, 0.845, 4, 3, [3, 1], [3, 1]),
    ("h8-L0.3", 59.0, 0.606, 0.982, 3, 2, [3, 0], [3, 0]),
    ("h8-L0.4", 56.0, 0.445, 0.736, 2, 1, [1, 1], [1, 1]),
    ("h8-L0.5", 51.5, 0.433, 0.734, 1, 0, [1, 0], [1, 0]),
    ("hMax-L1", 60.0, 0.852, 1.424, 1290, 19, [11, 1], [1286, 4]),
    ("hMax-L2", 58.5, 0.848, 1.418, 790, 18, [8, 1], [786, 4]),
    ("hMax-L4", 64.0, 0.846, 1.412, 430, 15, [6, 1], [426, 4]),
    ("hMax-L0.1", 65.5, 0.574, 0.927, 8, 4, [4, 1], [6, 2]),
    ("hMax-L0.2", 62.0, 0.506, 0.844, 4, 3, [3, 1], [3, 1]),
    ("hMax-L0.3", 59.0, 0.606, 0.982, 3, 2, [3, 0], [3, 0]),
    ("hMax-L0.4", 56.0, 0.445, 0.737, 2, 1, [1, 1], [1, 1]),
    ("hMax-L0.5", 51.5, 0.433, 0.734, 1, 0, [1, 0], [1, 0]),
];

fn reference_selection() -> Outcome {
    let scores: Vec<ModelScore> = REFERENCE_GRID
        .iter()
        .map(|&(name, acc, dtpr, dttr, leaves, height, unique, per_family)| ModelScore {
            name: name.into(),
            accuracy: acc / 100.0,
            dtpr,
            dttr,
            min_samples_leaf: name.split("-L").nth(1).unwrap().into(),
            stats: TreeStats {
                height,
                total_leaves: leaves,
                leaves_per_family: per_family,
                unique_configs_per_family: unique,
            },
        })
        .collect();
    let best = select_best_model(&scores)?;
    let most_accurate = scores.iter().map(|s| s.accuracy).fold(0.0, f64::max);
    let h8 = scores.iter().find(|s| s.name == "h8-L1").unwrap();
    if best.name != "hMax-L1" || best.dtpr != 0.852 || best.accuracy != 0.60 {
        fail!("selected {} (DTPR {}, accuracy {})", best.name, best.dtpr, best.accuracy);
    }
    if !(h8.accuracy > best.accuracy && h8.accuracy == most_accurate) {
        fail!("fixture does not contain a more accurate competitor");
    }
    Ok(format!(
        "hMax-L1 (DTPR {}, accuracy {:.0}%) chosen over h8-L1 (DTPR {}, accuracy {:.0}%) among 40 rows",
        best.dtpr,
        best.accuracy * 100.0,
        h8.dtpr,
        h8.accuracy * 100.0
    ))
}

// ---------------------------------------------------------------------------

/// Tree over `[1, 4096]^3` with integer-plus-half thresholds and a distinct
/// configuration per leaf. One root-to-leaf path is forced to `max_depth`
/// while the region allows it.
fn random_model(rng: &mut SplitMix64, max_depth: usize) -> TreeModel {
    let space = full_search_space(&DeviceCaps::default());
    let mut classes = ClassIndex::new();
    let mut nodes: Vec<Node> = Vec::new();

    struct Grow<'a> {
        rng: &'a mut SplitMix64,
        nodes: &'a mut Vec<Node>,
        classes: &'a mut ClassIndex,
        space: &'a [KernelConfig],
        max_depth: usize,
    }

    impl Grow<'_> {
        fn node(&mut self, lo: [usize; 3], hi: [usize; 3], depth: usize, spine: bool) -> usize {
            let slot = self.nodes.len();
            self.nodes.push(Node::Leaf {
                class_id: 0,
                samples: 0,
            });
            let splittable: Vec<usize> = (0..3).filter(|&f| hi[f] > lo[f]).collect();
            let p = if spine { 1.0 } else { 0.35 };
            let budget = self.classes.len() + depth + 2 < self.space.len();
            if depth < self.max_depth && !splittable.is_empty() && budget && self.rng.next_f64() < p {
                let f = splittable[self.rng.below(splittable.len() as u64) as usize];
                let v = lo[f] + self.rng.below((hi[f] - lo[f]) as u64) as usize;
                let (mut lhi, mut rlo) = (hi, lo);
                lhi[f] = v;
                rlo[f] = v + 1;
                let spine_left = spine && self.rng.below(2) == 0;
                let left = self.node(lo, lhi, depth + 1, spine_left);
                let right = self.node(rlo, hi, depth + 1, spine && !spine_left);
                self.nodes[slot] = Node::Split {
                    feature: [Feature::M, Feature::N, Feature::K][f],
                    threshold: v as f64 + 0.5,
                    left,
                    right,
                    samples: 0,
                };
            } else {
                let id = self.classes.intern(self.space[self.classes.len()]);
                self.nodes[slot] = Node::Leaf {
                    class_id: id,
                    samples: 0,
                };
            }
            slot
        }
    }

    Grow {
        rng,
        nodes: &mut nodes,
        classes: &mut classes,
        space: &space,
        max_depth,
    }
    .node([1; 3], [4096; 3], 0, true);
    TreeModel::new(DecisionTree::from_nodes(nodes).unwrap(), classes)
}

/// The trees used by the round-trip and overhead criteria, with the
/// shapes each one is checked on.
fn roundtrip_trees() -> Vec<(TreeModel, Vec<ProblemShape>)> {
    let mut rng = SplitMix64::new(0x7EE5);
    (0..100)
        .map(|i| {
            let model = random_model(&mut rng, 1 + i % 20);
            let training: Vec<ProblemShape> = (0..50)
                .map(|_| {
                    let mut d = || 1 + rng.below(4096) as usize;
                    shape(d(), d(), d())
                })
                .collect();
            (model, training)
        })
        .collect()
}

/// Moves the `which`-th emitted threshold by `delta`.
fn mutate_threshold(text: &str, which: usize, delta: f64) -> String {
    let start = text.match_indices("<= ").nth(which).unwrap().0 + 3;
    let end = start + text[start..].find([')', ' ']).unwrap();
    let value: f64 = text[start..end].parse().unwrap();
    format!("{}{:?}{}", &text[..start], value + delta, &text[end..])
}

fn codegen_roundtrip() -> Outcome {
    let start = Instant::now();
    let trees = roundtrip_trees();
    let mut rng = SplitMix64::new(0xD1FF);
    let (mut probes_total, mut deepest) = (0usize, 0usize);
    for (i, (model, training)) in trees.iter().enumerate() {
        deepest = deepest.max(model.tree.height());
        let probes = probe_shapes(&model.tree, training);
        for syntax in [Syntax::CLike, Syntax::Rust] {
            let src = emit_dispatcher(&model.tree, &model.classes, syntax, Some("acceptance"))?;
            match roundtrip_check(model, &src, &probes) {
                RoundTrip::Equivalent { probes } => probes_total += probes,
                other => fail!("tree {i} ({syntax:?}): {other:?}"),
            }
            let branches = CompiledDispatcher::parse(&src)?.branch_count();
            if branches != model.tree.split_count() {
                fail!("tree {i}: {branches} emitted branches for {} splits", model.tree.split_count());
            }
            if branches == 0 {
                continue;
            }
            let which = rng.below(branches as u64) as usize;
            let delta = if rng.below(2) == 0 { 1.0 } else { -1.0 };
            let mut mutated = src.clone();
            mutated.text = mutate_threshold(&src.text, which, delta);
            if !matches!(roundtrip_check(model, &mutated, &probes), RoundTrip::Counterexample { .. }) {
                fail!("tree {i} ({syntax:?}): moving threshold {which} by {delta} went unnoticed");
            }
        }
    }
    if deepest != 20 {
        fail!("deepest tree has height {deepest}");
    }
    let took = within(Duration::from_secs(60), start, "round trips")?;
    Ok(format!("100 trees x 2 syntaxes, {probes_total} probes, every mutation caught, deepest height {deepest}, {took:.1?}"))
}

fn dispatch_overhead() -> Outcome {
    let start = Instant::now();
    let (model, _) = roundtrip_trees()
        .into_iter()
        .max_by_key(|(m, _)| m.tree.height())
        .unwrap();
    let caps = DeviceCaps::default();
    let big = [shape(1024, 1024, 1024)];
    let opts = OverheadOptions {
        dispatch_trials: 100,
        calls_per_trial: 1000,
        kernel_trials: 3,
    };
    let tree = &overhead_bench(&model, &big, &caps, &opts)?[0];
    let src = emit_dispatcher(&model.tree, &model.classes, Syntax::Rust, None)?;
    let compiled = CompiledDispatcher::parse(&src)?;
    // The kernel is unchanged, so one kernel trial is enough here.
    let emitted = &overhead_bench(&compiled, &big, &caps, &OverheadOptions { kernel_trials: 1, ..opts })?[0];
    for (route, s) in [("tree", tree), ("emitted source", emitted)] {
        if s.overhead_fraction.is_nan() || s.overhead_fraction >= 0.01 {
            fail!("{route}: dispatch {:.0} ns vs kernel {:.0} ns", s.dispatch_ns, s.kernel_ns);
        }
    }
    let took = within(Duration::from_secs(120), start, "overhead bench")?;
    Ok(format!(
        "height {} tree, {}: dispatch {:.0} ns (source {:.0} ns) vs kernel {:.3} s, fraction {:.1e}, {took:.1?}",
        model.tree.height(),
        tree.config,
        tree.dispatch_ns,
        emitted.dispatch_ns,
        tree.kernel_ns * 1e-9,
        tree.overhead_fraction
    ))
}

// ---------------------------------------------------------------------------

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_adaptgemm"))
}

fn run_cli(args: &[&str]) -> Result<String, Box<dyn StdError>> {
    let out = cli().args(args).output()?;
    if !out.status.success() {
        fail!(
            "`adaptgemm {}` exited with {}:\n{}",
            args.join(" "),
            out.status,
            String::from_utf8_lossy(&out.stderr)
        );
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn write_config(dir: &Path, json: &str) -> Result<PathBuf, Box<dyn StdError>> {
    let path = dir.join("pipeline.json");
    std::fs::write(&path, json)?;
    Ok(path)
}

fn split_determinism() -> Outcome {
    let dir = tempfile::tempdir()?;
    let cfg = write_config(
        dir.path(),
        r#"{"dataset": {"strategy": "po2", "min": 64, "max": 2048}, "tuning": {"mode": "modeled"}, "out": "out"}"#,
    )?;
    let cfg = cfg.to_str().unwrap();
    run_cli(&["tune", "-q", "--config", cfg])?;
    let split_path = dir.path().join("out/split.json");
    let mut files = Vec::new();
    for _ in 0..2 {
        run_cli(&["dataset", "-q", "--config", cfg, "--force"])?;
        files.push(std::fs::read(&split_path)?);
    }
    if files[0] != files[1] {
        fail!("split.json differs between processes");
    }
    let on_disk: serde_json::Value = serde_json::from_slice(&files[0])?;

    let dataset = Dataset::read(&dir.path().join("out/dataset.csv"), &dir.path().join("out/dataset.json"))?;
    let first = serde_json::to_vec(&split(&dataset, 0.8, DEFAULT_SEED)?)?;
    for run in 1..10 {
        if serde_json::to_vec(&split(&dataset, 0.8, DEFAULT_SEED)?)? != first {
            fail!("run {run} serialized differently");
        }
    }
    let here: serde_json::Value = serde_json::from_slice(&first)?;
    if here["train"] != on_disk["train"] || here["test"] != on_disk["test"] {
        fail!("in-process split differs from the CLI's");
    }

    let mut sizes = Vec::new();
    for n in [2usize, 10, 216, 3375] {
        let s = split_indices(n, 0.8, DEFAULT_SEED)?;
        let expected = n * 4 / 5;
        let mut all: Vec<usize> = s.train.iter().chain(&s.test).copied().collect();
        all.sort_unstable();
        if s.train.len() != expected || all != (0..n).collect::<Vec<_>>() {
            fail!("n = {n}: {} train of {} indices, expected {expected}", s.train.len(), all.len());
        }
        sizes.push(format!("{n}->{expected}"));
    }
    Ok(format!(
        "10 in-process runs and 2 processes agree on {} records, |train| {}",
        dataset.len(),
        sizes.join(", ")
    ))
}

fn end_to_end() -> Outcome {
    let dir = tempfile::tempdir()?;
    let cfg = write_config(
        dir.path(),
        r#"{
  "dataset": {"strategy": "po2", "min": 64, "max": 512},
  "tuning": {"mode": "exhaustive"},
  "timing": {"warmup": 0, "repetitions": 1},
  "out": "out"
}"#,
    )?;
    let start = Instant::now();
    run_cli(&["pipeline", "-q", "--config", cfg.to_str().unwrap()])?;
    let took = within(Duration::from_secs(30 * 60), start, "pipeline")?;

    let out = dir.path().join("out");
    // Four edge values per dimension: 4^3 shapes.
    let expected_tables = gen_po2(64, 512)?.len();
    let tables_written = std::fs::read_dir(out.join("tables"))?.count();
    if expected_tables != 64 || tables_written != expected_tables {
        fail!("{tables_written} tables written, expected {expected_tables}");
    }
    for f in ["dataset.csv", "split.json", "scores.csv", "best_model.json", "dispatcher.c", "dispatcher.rs", "bench.csv", "bench.json"] {
        if !out.join(f).is_file() {
            fail!("{f} missing");
        }
    }
    let score_rows = std::fs::read_to_string(out.join("scores.csv"))?
        .lines()
        .filter(|l| !l.starts_with('#'))
        .count();
    if score_rows != 41 {
        fail!("scores.csv has {score_rows} lines, expected header plus 40");
    }

    // Recompute both on-train DTPRs from the files on disk.
    let dataset = Dataset::read(&out.join("dataset.csv"), &out.join("dataset.json"))?;
    let split: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("split.json"))?)?;
    let train_idx: Vec<usize> = serde_json::from_value(split["train"].clone())?;
    let train_set: Vec<_> = train_idx.iter().map(|&i| dataset.records[i].clone()).collect();
    let tables: TableSet = dataset
        .records
        .iter()
        .map(|r| TuningTable::read_csv(&out.join("tables").join(table_file_name(&r.input))))
        .collect::<Result<_, _>>()?;
    let best: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("best_model.json"))?)?;
    let model_file: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join(best["model"].as_str().unwrap()))?)?;
    let tree = DecisionTree::from_json(&model_file["tree"].to_string())?;
    let model = TreeModel::new(tree, dataset.classes.clone());
    let policy: BaselinePolicy = serde_json::from_str(&std::fs::read_to_string(out.join("baseline.json"))?)?;

    let model_dtpr = dtpr(&model, &train_set, &tables)?;
    let baseline_dtpr = dtpr(&policy, &train_set, &tables)?;
    if model_dtpr.is_nan() || model_dtpr < baseline_dtpr {
        fail!("best model {} has on-train DTPR {model_dtpr:.4} below the baseline's {baseline_dtpr:.4}", best["name"]);
    }
    Ok(format!(
        "{expected_tables} shapes, best {} with on-train DTPR {model_dtpr:.3} vs baseline {baseline_dtpr:.3} (test DTPR {:.3}), {:.1} min",
        best["name"].as_str().unwrap(),
        best["test"]["dtpr"].as_f64().unwrap(),
        took.as_secs_f64() / 60.0
    ))
}

// ---------------------------------------------------------------------------

type Criterion = (u32, &'static str, fn() -> Outcome);

const CRITERIA: [Criterion; 11] = [
    (1, "kernel correctness", kernel_correctness),
    (2, "search-space counts", search_space_counts),
    (3, "dataset cardinalities", dataset_cardinalities),
    (4, "CART oracle equivalence", cart_oracle),
    (5, "tree invariants", tree_invariants),
    (6, "metric identities", metric_identities),
    (7, "best-model selection on a reference grid", reference_selection),
    (8, "codegen round trip", codegen_roundtrip),
    (9, "dispatch overhead", dispatch_overhead),
    (10, "split determinism", split_determinism),
    (11, "end-to-end pipeline", end_to_end),
];

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        for (n, _, _) in CRITERIA {
            println!("criterion_{n:02}: test");
        }
        return;
    }
    let wanted: Vec<u32> = args.iter().filter_map(|a| a.parse().ok()).collect();
    let mut failed = Vec::new();
    for (n, title, check) in CRITERIA {
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        let result = std::panic::catch_unwind(check)
            .unwrap_or_else(|p| Err(p.downcast_ref::<String>().cloned().unwrap_or_else(|| "panicked".into()).into()));
        match result {
            Ok(detail) => println!("criterion {n:>2} {title}: PASS ({detail})"),
            Err(e) => {
                println!("criterion {n:>2} {title}: FAIL ({e})");
                failed.push(n);
            }
        }
    }
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
