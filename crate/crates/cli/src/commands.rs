//! Pipeline stages. Each stage reads and writes documented files under the
//! output directory, so any stage can be re-run on its own.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use adaptgemm::codegen::{emit_dispatcher, probe_shapes, roundtrip_check, RoundTrip, Syntax};
use adaptgemm::dataset::{split, table_file_name, Dataset, DatasetRecord, Split};
use adaptgemm::eval::{
    baseline_select, dtpr, overhead_bench, score_model, select_best_model, write_scores_csv, BaselinePolicy,
    ModelScore, OverheadOptions, OverheadSample, Selector, TreeModel,
};
use adaptgemm::kernels::{enumerate_search_space, full_search_space, KernelConfig, KernelFamily, ProblemShape};
use adaptgemm::model::{features_of, grid_train, DecisionTree, Sample};
use adaptgemm::tuner::{modeled_table, tune_configs, tune_random, TableSet, TuningTable};
use adaptgemm::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::config::{BenchShapes, PipelineConfig, TuningMode};

/// Resolved configuration plus per-invocation flags.
pub struct Context {
    pub cfg: PipelineConfig,
    pub hash: String,
    pub force: bool,
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.into(),
        source,
    }
}

/// Writes via a temporary file so an interrupted run never leaves a
/// truncated output that a resumed run would trust.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(io(&tmp))?;
    fs::rename(&tmp, path).map_err(io(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, (serde_json::to_string_pretty(value)? + "\n").as_bytes())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io(path))?;
    Ok(serde_json::from_str(&text)?)
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(io(path))
}

impl Context {
    fn out(&self) -> &Path {
        &self.cfg.out
    }

    fn tables_dir(&self) -> PathBuf {
        self.out().join("tables")
    }

    fn table_path(&self, shape: &ProblemShape) -> PathBuf {
        self.tables_dir().join(table_file_name(shape))
    }

    fn baseline_table_path(&self, family: KernelFamily, edge: usize) -> PathBuf {
        self.out()
            .join("baseline")
            .join(format!("{}-{edge}x{edge}x{edge}.csv", family.as_str()))
    }

    fn dataset_paths(&self) -> (PathBuf, PathBuf) {
        (self.out().join("dataset.csv"), self.out().join("dataset.json"))
    }

    fn model_path(&self, name: &str) -> PathBuf {
        self.out().join("models").join(format!("{name}.json"))
    }

    fn shapes(&self) -> Result<Vec<ProblemShape>> {
        self.cfg.dataset.shapes(Path::new("."))
    }

    fn tune_one(&self, shape: &ProblemShape, configs: Option<&[KernelConfig]>) -> Result<TuningTable> {
        let (caps, timing, seed) = (&self.cfg.caps, &self.cfg.timing, self.cfg.seed);
        let mut table = match (self.cfg.tuning, configs) {
            (TuningMode::Modeled, _) => modeled_table(shape, caps, seed)?,
            (_, Some(configs)) => tune_configs(shape, caps, timing, configs, seed)?,
            (TuningMode::Exhaustive, None) => tune_configs(shape, caps, timing, &full_search_space(caps), seed)?,
            (TuningMode::Random { samples }, None) => tune_random(shape, caps, samples, seed, timing)?.table,
        };
        table.meta.config_hash = Some(self.hash.clone());
        Ok(table)
    }

    fn load_tables(&self, shapes: impl IntoIterator<Item = ProblemShape>) -> Result<TableSet> {
        let mut set = TableSet::new();
        let mut missing = Vec::new();
        for s in shapes {
            let path = self.table_path(&s);
            if path.exists() {
                set.insert(TuningTable::read_csv(&path)?);
            } else {
                missing.push(s.to_string());
            }
        }
        if missing.is_empty() {
            Ok(set)
        } else {
            Err(Error::Lookup(format!(
                "missing tuning tables for {} shape(s) under {}: {}",
                missing.len(),
                self.tables_dir().display(),
                missing.join(", ")
            )))
        }
    }

    fn load_dataset(&self) -> Result<Dataset> {
        let (csv, json) = self.dataset_paths();
        Dataset::read(&csv, &json)
    }

    fn load_split(&self) -> Result<Split> {
        Ok(read_json::<SplitFile>(&self.out().join("split.json"))?.split)
    }

    fn load_baseline(&self) -> Result<BaselinePolicy> {
        let file: BaselineFile = read_json(&self.out().join("baseline.json"))?;
        file.policy.validate(&self.cfg.caps)?;
        Ok(file.policy)
    }
}

#[derive(Serialize, Deserialize)]
struct SplitFile {
    config_hash: String,
    #[serde(flatten)]
    split: Split,
}

#[derive(Serialize, Deserialize)]
struct BaselineFile {
    config_hash: String,
    #[serde(flatten)]
    policy: BaselinePolicy,
    direct_table: String,
    indirect_table: String,
}

#[derive(Serialize, Deserialize)]
pub struct ModelFile {
    pub config_hash: String,
    pub name: String,
    pub min_samples_leaf: String,
    pub tree: serde_json::Value,
}

impl ModelFile {
    pub fn load(path: &Path) -> Result<(Self, DecisionTree)> {
        let file: ModelFile = read_json(path)?;
        let tree = DecisionTree::from_json(&file.tree.to_string())?;
        Ok((file, tree))
    }
}

#[derive(Serialize, Deserialize)]
pub struct BestModelFile {
    pub config_hash: String,
    pub name: String,
    pub model: String,
    pub test: ModelScore,
    pub train_dtpr: f64,
    pub baseline_train_dtpr: f64,
    pub baseline_test_dtpr: f64,
}

/// Parses `i/n` as used by `--shard`.
pub fn parse_shard(s: &str) -> std::result::Result<(usize, usize), String> {
    let (i, n) = s.split_once('/').ok_or("expected i/n")?;
    let (i, n): (usize, usize) = (i.parse().map_err(|_| "bad i")?, n.parse().map_err(|_| "bad n")?);
    if n == 0 || i >= n {
        return Err(format!("shard {i}/{n} out of range"));
    }
    Ok((i, n))
}

pub struct TuneSummary {
    pub tuned: usize,
    pub skipped: usize,
    pub failed: Vec<String>,
}

/// Tunes every dataset shape plus the two baseline shapes. Existing tables
/// are kept unless `force` is set.
pub fn tune(ctx: &Context, jobs: usize, shard: Option<(usize, usize)>) -> Result<TuneSummary> {
    mkdir(&ctx.tables_dir())?;
    mkdir(&ctx.out().join("baseline"))?;
    let shapes = ctx.shapes()?;
    let mut summary = TuneSummary {
        tuned: 0,
        skipped: 0,
        failed: Vec::new(),
    };

    if jobs > 1 && shard.is_none() {
        run_shards(ctx, jobs, &mut summary)?;
    } else {
        let (index, count) = shard.unwrap_or((0, 1));
        for (i, shape) in shapes.iter().enumerate() {
            if i % count != index {
                continue;
            }
            let path = ctx.table_path(shape);
            if path.exists() && !ctx.force {
                summary.skipped += 1;
                continue;
            }
            log::info!("tuning {shape} ({}/{})", i + 1, shapes.len());
            match ctx.tune_one(shape, None) {
                Ok(t) => {
                    write_table(&t, &path)?;
                    summary.tuned += 1;
                }
                Err(e) => {
                    log::error!("tuning {shape} failed: {e}");
                    summary.failed.push(format!("{shape}: {e}"));
                }
            }
        }
    }
    if shard.is_none() {
        tune_baseline(ctx, &mut summary)?;
    }
    log::info!(
        "tune: {} tuned, {} skipped, {} failed",
        summary.tuned,
        summary.skipped,
        summary.failed.len()
    );
    Ok(summary)
}

fn write_table(table: &TuningTable, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    table.write_csv(&tmp)?;
    fs::rename(&tmp, path).map_err(io(path))
}

fn run_shards(ctx: &Context, jobs: usize, summary: &mut TuneSummary) -> Result<()> {
    let cfg_path = ctx.out().join("config.json");
    write_json(&cfg_path, &ctx.cfg)?;
    let exe = std::env::current_exe().map_err(io(Path::new("current executable")))?;
    let mut children = Vec::new();
    for i in 0..jobs {
        let mut cmd = Command::new(&exe);
        cmd.arg("tune")
            .arg("--config")
            .arg(&cfg_path)
            .arg("--out")
            .arg(ctx.out())
            .arg("--shard")
            .arg(format!("{i}/{jobs}"));
        if ctx.force {
            cmd.arg("--force");
        }
        children.push((i, cmd.spawn().map_err(io(&exe))?));
    }
    for (i, mut child) in children {
        let status = child.wait().map_err(io(&exe))?;
        if !status.success() {
            summary.failed.push(format!("shard {i}/{jobs} exited with {status}"));
        }
    }
    // Shards report through their own logs; count results from disk.
    for s in ctx.shapes()? {
        if ctx.table_path(&s).exists() {
            summary.tuned += 1;
        }
    }
    Ok(())
}

fn tune_baseline(ctx: &Context, summary: &mut TuneSummary) -> Result<()> {
    let b = ctx.cfg.baseline;
    let mut tables = Vec::new();
    for (family, edge) in [(KernelFamily::Direct, b.direct_edge), (KernelFamily::Indirect, b.indirect_edge)] {
        let path = ctx.baseline_table_path(family, edge);
        if !path.exists() || ctx.force {
            let shape = ProblemShape::new(edge, edge, edge)?;
            log::info!("tuning {family} default at {shape}");
            let table = ctx.tune_one(&shape, Some(&enumerate_search_space(family, &ctx.cfg.caps)))?;
            write_table(&table, &path)?;
            summary.tuned += 1;
        } else {
            summary.skipped += 1;
        }
        tables.push(TuningTable::read_csv(&path)?);
    }
    let policy = BaselinePolicy::from_tables(&tables[0], &tables[1], b.threshold)?;
    policy.validate(&ctx.cfg.caps)?;
    let rel = |f, e| {
        ctx.baseline_table_path(f, e)
            .strip_prefix(ctx.out())
            .unwrap()
            .display()
            .to_string()
    };
    write_json(
        &ctx.out().join("baseline.json"),
        &BaselineFile {
            config_hash: ctx.hash.clone(),
            policy,
            direct_table: rel(KernelFamily::Direct, b.direct_edge),
            indirect_table: rel(KernelFamily::Indirect, b.indirect_edge),
        },
    )
}

/// Labels every shape from its stored table and writes the dataset and split.
pub fn dataset(ctx: &Context) -> Result<Dataset> {
    let shapes = ctx.shapes()?;
    let tables = ctx.load_tables(shapes.iter().copied())?;
    let ordered: Vec<&TuningTable> = shapes.iter().map(|s| tables.get(s).unwrap()).collect();
    let dataset = Dataset::from_tables(ordered, ctx.cfg.dataset.provenance())?;
    let (csv, json) = ctx.dataset_paths();
    dataset.write(&csv, &json, Some(&ctx.hash))?;

    let split = split(&dataset, ctx.cfg.split.fraction, ctx.cfg.seed)?;
    write_json(
        &ctx.out().join("split.json"),
        &SplitFile {
            config_hash: ctx.hash.clone(),
            split,
        },
    )?;
    let [direct, indirect] = dataset.unique_configs_per_family();
    log::info!(
        "dataset: {} records, {} classes ({direct} direct, {indirect} indirect)",
        dataset.len(),
        dataset.classes.len()
    );
    Ok(dataset)
}

fn samples(records: &[DatasetRecord], idx: &[usize]) -> Vec<Sample> {
    idx.iter()
        .map(|&i| Sample {
            features: features_of(&records[i].input),
            class: records[i].class_id,
        })
        .collect()
}

fn subset(records: &[DatasetRecord], idx: &[usize]) -> Vec<DatasetRecord> {
    idx.iter().map(|&i| records[i].clone()).collect()
}

/// Trains the `H x L` grid on the training split.
pub fn train(ctx: &Context) -> Result<Vec<String>> {
    let dataset = ctx.load_dataset()?;
    let split = ctx.load_split()?;
    let grid = grid_train(
        &samples(&dataset.records, &split.train),
        &ctx.cfg.heights()?,
        &ctx.cfg.min_leaves()?,
    )?;
    mkdir(&ctx.out().join("models"))?;
    let mut names = Vec::new();
    for m in grid {
        let file = ModelFile {
            config_hash: ctx.hash.clone(),
            name: m.name.clone(),
            min_samples_leaf: m.config.min_samples_leaf.to_string(),
            tree: serde_json::from_str(&m.tree.to_json()?)?,
        };
        write_json(&ctx.model_path(&m.name), &file)?;
        log::info!("{}: height {}, {} leaves", m.name, m.tree.height(), m.tree.leaf_count());
        names.push(m.name);
    }
    Ok(names)
}

fn grid_names(ctx: &Context) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for h in ctx.cfg.heights()? {
        for l in ctx.cfg.min_leaves()? {
            names.push(adaptgemm::model::TrainConfig::new(h, l)?.name());
        }
    }
    Ok(names)
}

/// Scores every grid model on the test split (table mode) and records the
/// best one.
pub fn eval(ctx: &Context) -> Result<(Vec<ModelScore>, BestModelFile)> {
    let dataset = ctx.load_dataset()?;
    let split = ctx.load_split()?;
    let policy = ctx.load_baseline()?;
    let tables = ctx.load_tables(dataset.records.iter().map(|r| r.input))?;
    let test = subset(&dataset.records, &split.test);
    let train = subset(&dataset.records, &split.train);
    if test.is_empty() {
        return Err(Error::Validation("test split is empty".into()));
    }

    let mut scores = Vec::new();
    for name in grid_names(ctx)? {
        let path = ctx.model_path(&name);
        if !path.exists() {
            return Err(Error::Lookup(format!("model {} not found; run `train` first", path.display())));
        }
        let (file, tree) = ModelFile::load(&path)?;
        let model = TreeModel::new(tree, dataset.classes.clone());
        scores.push(score_model(&name, &file.min_samples_leaf, &model, &test, &tables, &policy)?);
    }
    write_scores_csv(
        &ctx.out().join("scores.csv"),
        &scores,
        Some(&format!("config_hash={} table-mode test-split", ctx.hash)),
    )?;
    let best = select_best_model(&scores)?.clone();
    let (_, tree) = ModelFile::load(&ctx.model_path(&best.name))?;
    let model = TreeModel::new(tree, dataset.classes.clone());
    let file = BestModelFile {
        config_hash: ctx.hash.clone(),
        name: best.name.clone(),
        model: format!("models/{}.json", best.name),
        train_dtpr: if train.is_empty() { f64::NAN } else { dtpr(&model, &train, &tables)? },
        baseline_train_dtpr: if train.is_empty() { f64::NAN } else { dtpr(&policy, &train, &tables)? },
        baseline_test_dtpr: dtpr(&policy, &test, &tables)?,
        test: best,
    };
    write_json(&ctx.out().join("best_model.json"), &file)?;
    print!("{}", scores_table(&scores, &file.name));
    Ok((scores, file))
}

fn scores_table(scores: &[ModelScore], best: &str) -> String {
    let mut s = format!(
        "{:<12} {:>8} {:>7} {:>7} {:>7} {:>7}\n",
        "model", "acc%", "dtpr", "dttr", "leaves", "height"
    );
    for sc in scores {
        let _ = writeln!(
            s,
            "{:<12} {:>8.1} {:>7.3} {:>7.3} {:>7} {:>7}{}",
            sc.name,
            sc.accuracy * 100.0,
            sc.dtpr,
            sc.dttr,
            sc.stats.total_leaves,
            sc.stats.height,
            if sc.name == best { "  <- best" } else { "" }
        );
    }
    s
}

fn load_model(ctx: &Context, model: Option<&Path>, dataset: &Dataset) -> Result<(String, TreeModel)> {
    let path = match model {
        Some(p) => p.to_path_buf(),
        None => {
            let best: BestModelFile = read_json(&ctx.out().join("best_model.json"))?;
            ctx.out().join(best.model)
        }
    };
    let (file, tree) = ModelFile::load(&path)?;
    Ok((file.name, TreeModel::new(tree, dataset.classes.clone())))
}

/// Emits both dispatcher syntaxes for the chosen model and verifies them
/// against the tree.
pub fn codegen(ctx: &Context, model: Option<&Path>) -> Result<Vec<PathBuf>> {
    let dataset = ctx.load_dataset()?;
    let (name, model) = load_model(ctx, model, &dataset)?;
    let training: Vec<ProblemShape> = dataset.records.iter().map(|r| r.input).collect();
    let probes = probe_shapes(&model.tree, &training);
    let provenance = format!("{} dataset, model {name}, config {}", dataset.provenance, ctx.hash);
    let mut written = Vec::new();
    for syntax in [Syntax::CLike, Syntax::Rust] {
        let src = emit_dispatcher(&model.tree, &model.classes, syntax, Some(&provenance))?;
        match roundtrip_check(&model, &src, &probes) {
            RoundTrip::Equivalent { probes } => log::info!("{syntax:?} dispatcher verified on {probes} probes"),
            other => return Err(Error::Generation(format!("{syntax:?} dispatcher disagrees with the tree: {other:?}"))),
        }
        let path = ctx.out().join(format!("dispatcher.{}", syntax.extension()));
        write_atomic(&path, src.text.as_bytes())?;
        written.push(path);
    }
    Ok(written)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchRow {
    pub shape: String,
    pub model_config: String,
    pub model_gflops: f64,
    pub baseline_config: String,
    pub baseline_gflops: f64,
    pub peak_gflops: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchSummary {
    pub config_hash: String,
    pub model: String,
    pub mode: String,
    pub shapes: usize,
    /// Mean of per-shape model / peak.
    pub mean_model_over_peak: f64,
    /// Mean of per-shape model / baseline.
    pub mean_model_over_baseline: f64,
    pub mean_baseline_over_peak: f64,
    pub mean_overhead_fraction: f64,
    pub max_overhead_fraction: f64,
    pub rows: Vec<BenchRow>,
}

pub struct BenchOptions<'a> {
    pub model: Option<&'a Path>,
    pub table_mode: bool,
    pub gnuplot: bool,
}

/// Compares model-driven selection with the baseline and the table peak.
pub fn bench(ctx: &Context, opts: &BenchOptions) -> Result<BenchSummary> {
    let dataset = ctx.load_dataset()?;
    let split = ctx.load_split()?;
    let policy = ctx.load_baseline()?;
    let (name, model) = load_model(ctx, opts.model, &dataset)?;
    let idx: Vec<usize> = match ctx.cfg.bench.shapes {
        BenchShapes::Train => split.train.clone(),
        BenchShapes::Test => split.test.clone(),
        BenchShapes::All => (0..dataset.len()).collect(),
    };
    let shapes: Vec<ProblemShape> = idx.iter().map(|&i| dataset.records[i].input).collect();
    let tables = ctx.load_tables(shapes.iter().copied())?;
    let live = ctx.cfg.bench.live && !opts.table_mode;

    let measure = |shape: &ProblemShape, cfg: &KernelConfig| -> Result<f64> {
        if live {
            Ok(tune_configs(shape, &ctx.cfg.caps, &ctx.cfg.timing, &[*cfg], ctx.cfg.seed)?.best().gflops)
        } else {
            adaptgemm::eval::perf_of_config(shape, cfg, &tables)
        }
    };
    let mut rows = Vec::new();
    for shape in &shapes {
        let chosen = model.select(shape)?;
        let base = baseline_select(&policy, shape);
        let model_gflops = measure(shape, &chosen)?;
        // One measurement when both pick the same kernel keeps the columns equal.
        let baseline_gflops = if base == chosen { model_gflops } else { measure(shape, &base)? };
        rows.push(BenchRow {
            shape: shape.to_string(),
            model_config: chosen.canonical_id(),
            model_gflops,
            baseline_config: base.canonical_id(),
            baseline_gflops,
            peak_gflops: tables.get(shape).unwrap().peak_gflops(),
        });
        log::info!("bench {shape}: model {model_gflops:.3} GFLOPS, baseline {baseline_gflops:.3} GFLOPS");
    }

    let b = ctx.cfg.bench;
    let overhead = overhead_bench(
        &model,
        &shapes,
        &ctx.cfg.caps,
        &OverheadOptions {
            dispatch_trials: b.dispatch_trials,
            calls_per_trial: b.calls_per_trial,
            kernel_trials: b.kernel_trials,
        },
    )?;

    let mean = |f: &dyn Fn(&BenchRow) -> f64| rows.iter().map(f).sum::<f64>() / rows.len().max(1) as f64;
    let fractions: Vec<f64> = overhead.iter().map(|o| o.overhead_fraction).collect();
    let summary = BenchSummary {
        config_hash: ctx.hash.clone(),
        model: name,
        mode: if live { "live" } else { "table" }.into(),
        shapes: rows.len(),
        mean_model_over_peak: mean(&|r| r.model_gflops / r.peak_gflops),
        mean_model_over_baseline: mean(&|r| r.model_gflops / r.baseline_gflops),
        mean_baseline_over_peak: mean(&|r| r.baseline_gflops / r.peak_gflops),
        mean_overhead_fraction: fractions.iter().sum::<f64>() / fractions.len().max(1) as f64,
        max_overhead_fraction: fractions.iter().copied().fold(0.0, f64::max),
        rows,
    };
    write_bench(ctx, &summary, &overhead, opts.gnuplot)?;
    Ok(summary)
}

fn write_bench(ctx: &Context, s: &BenchSummary, overhead: &[OverheadSample], gnuplot: bool) -> Result<()> {
    let out = ctx.out();
    let mut csv = format!("# config_hash={} mode={} model={}\n", s.config_hash, s.mode, s.model);
    csv.push_str("M,N,K,model_config,model_gflops,baseline_config,baseline_gflops,peak_gflops,dispatch_ns,kernel_ns,overhead_fraction\n");
    for (r, o) in s.rows.iter().zip(overhead) {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{},{}",
            o.shape.m,
            o.shape.n,
            o.shape.k,
            r.model_config,
            r.model_gflops,
            r.baseline_config,
            r.baseline_gflops,
            r.peak_gflops,
            o.dispatch_ns,
            o.kernel_ns,
            o.overhead_fraction
        );
    }
    write_atomic(&out.join("bench.csv"), csv.as_bytes())?;
    write_json(&out.join("bench.json"), s)?;

    let mut txt = format!("model {} ({} mode, {} shapes)\n\n", s.model, s.mode, s.shapes);
    let _ = writeln!(
        txt,
        "{:<16} {:>10} {:>10} {:>10} {:>9} {:>9}",
        "shape", "model", "baseline", "peak", "m/peak", "overhead"
    );
    for (r, o) in s.rows.iter().zip(overhead) {
        let _ = writeln!(
            txt,
            "{:<16} {:>10.3} {:>10.3} {:>10.3} {:>9.3} {:>8.4}%",
            r.shape,
            r.model_gflops,
            r.baseline_gflops,
            r.peak_gflops,
            r.model_gflops / r.peak_gflops,
            o.overhead_fraction * 100.0
        );
    }
    let _ = writeln!(txt, "\nmean model/peak      {:.4}", s.mean_model_over_peak);
    let _ = writeln!(txt, "mean model/baseline  {:.4}", s.mean_model_over_baseline);
    let _ = writeln!(txt, "mean baseline/peak   {:.4}", s.mean_baseline_over_peak);
    let _ = writeln!(
        txt,
        "dispatch overhead    mean {:.4}%, max {:.4}%",
        s.mean_overhead_fraction * 100.0,
        s.max_overhead_fraction * 100.0
    );
    write_atomic(&out.join("bench.txt"), txt.as_bytes())?;
    print!("{txt}");

    if gnuplot {
        let mut dat = String::from("# index M N K model_gflops baseline_gflops peak_gflops\n");
        for (i, (r, o)) in s.rows.iter().zip(overhead).enumerate() {
            let _ = writeln!(
                dat,
                "{i} {} {} {} {} {} {}",
                o.shape.m, o.shape.n, o.shape.k, r.model_gflops, r.baseline_gflops, r.peak_gflops
            );
        }
        write_atomic(&out.join("bench.dat"), dat.as_bytes())?;
    }
    Ok(())
}
