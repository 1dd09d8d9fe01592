//! Model quality metrics against tuned tables.
//!
//! Accuracy counts exact class matches. DTPR (peak ratio) and DTTR (tuned
//! ratio) weigh each prediction by the performance it actually delivers,
//! relative to the table peak and to the threshold-switched default
//! baseline respectively. Both are means of per-record ratios.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataset::{ClassIndex, DatasetRecord};
use crate::error::{Error, Result};
use crate::kernels::{
    gemm_execute_into, DeviceCaps, GemmWorkspace, KernelConfig, KernelFamily, Matrix, ProblemShape,
};
use crate::model::{features_of, DecisionTree, TreeStats};
use crate::tuner::{tune_configs, TableSet, TimingPolicy, TuningTable, DEFAULT_SEED};

/// Anything that picks a kernel configuration for a shape.
pub trait Selector {
    fn select(&self, shape: &ProblemShape) -> Result<KernelConfig>;
}

/// A trained tree plus the class mapping that turns leaves into configs.
#[derive(Debug, Clone)]
pub struct TreeModel {
    pub tree: DecisionTree,
    pub classes: ClassIndex,
}

impl TreeModel {
    pub fn new(tree: DecisionTree, classes: ClassIndex) -> Self {
        Self { tree, classes }
    }
}

impl Selector for TreeModel {
    fn select(&self, shape: &ProblemShape) -> Result<KernelConfig> {
        let class = self.tree.predict(&features_of(shape));
        self.classes.resolve(class).copied()
    }
}

impl<S: Selector + ?Sized> Selector for &S {
    fn select(&self, shape: &ProblemShape) -> Result<KernelConfig> {
        (**self).select(shape)
    }
}

/// Always returns the table's best configuration.
pub struct TableArgmax<'a>(pub &'a TableSet);

impl Selector for TableArgmax<'_> {
    fn select(&self, shape: &ProblemShape) -> Result<KernelConfig> {
        Ok(lookup_table(self.0, shape)?.best().config)
    }
}

/// The library tuned once per family at a fixed size, switching family by
/// problem size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselinePolicy {
    /// Tuned at M = N = K = 1024.
    pub default_indirect: KernelConfig,
    /// Tuned at M = N = K = 256.
    pub default_direct: KernelConfig,
    /// Edge length compared with the geometric mean of `(M, N, K)`.
    pub threshold: u64,
}

pub const DEFAULT_THRESHOLD: u64 = 384;
pub const DEFAULT_INDIRECT_EDGE: usize = 1024;
pub const DEFAULT_DIRECT_EDGE: usize = 256;

impl BaselinePolicy {
    pub fn new(default_direct: KernelConfig, default_indirect: KernelConfig, threshold: u64) -> Result<Self> {
        let policy = Self {
            default_indirect,
            default_direct,
            threshold,
        };
        policy.validate(&DeviceCaps {
            register_tile_cap_direct: usize::MAX,
            register_tile_cap_indirect: usize::MAX,
            tile_memory_cap: usize::MAX,
            element_size: 1,
        })?;
        Ok(policy)
    }

    /// Defaults are each family's best entry of the given tables.
    pub fn from_tables(direct_table: &TuningTable, indirect_table: &TuningTable, threshold: u64) -> Result<Self> {
        let best = |t: &TuningTable, fam: KernelFamily| {
            t.best_of(fam).map(|m| m.config).ok_or_else(|| {
                Error::Lookup(format!("table for {} has no {fam} measurements", t.shape))
            })
        };
        Self::new(
            best(direct_table, KernelFamily::Direct)?,
            best(indirect_table, KernelFamily::Indirect)?,
            threshold,
        )
    }

    pub fn validate(&self, caps: &DeviceCaps) -> Result<()> {
        if self.threshold == 0 {
            return Err(Error::Validation("baseline threshold must be >= 1".into()));
        }
        for (cfg, fam) in [
            (&self.default_direct, KernelFamily::Direct),
            (&self.default_indirect, KernelFamily::Indirect),
        ] {
            if cfg.family != fam {
                return Err(Error::Validation(format!("{cfg} is not a {fam} config")));
            }
            crate::kernels::check_legal(cfg, caps)?;
        }
        Ok(())
    }
}

/// Direct default below the threshold, Indirect default at or above it.
/// `cbrt(M*N*K) < t` is evaluated exactly as `M*N*K < t^3`.
pub fn baseline_select(policy: &BaselinePolicy, shape: &ProblemShape) -> KernelConfig {
    let volume = shape.m as u128 * shape.n as u128 * shape.k as u128;
    let t = policy.threshold as u128;
    if volume < t * t * t {
        policy.default_direct
    } else {
        policy.default_indirect
    }
}

impl Selector for BaselinePolicy {
    fn select(&self, shape: &ProblemShape) -> Result<KernelConfig> {
        Ok(baseline_select(self, shape))
    }
}

/// Where performance numbers come from.
pub trait PerfSource {
    fn gflops(&self, shape: &ProblemShape, config: &KernelConfig) -> Result<f64>;
    fn peak(&self, shape: &ProblemShape) -> Result<f64>;
}

fn lookup_table<'a>(tables: &'a TableSet, shape: &ProblemShape) -> Result<&'a TuningTable> {
    tables
        .get(shape)
        .ok_or_else(|| Error::Evaluation(format!("no tuning table for {shape}")))
}

/// Table mode: stored measurements, no re-benchmarking.
impl PerfSource for TableSet {
    fn gflops(&self, shape: &ProblemShape, config: &KernelConfig) -> Result<f64> {
        perf_of_config(shape, config, self)
    }

    fn peak(&self, shape: &ProblemShape) -> Result<f64> {
        Ok(lookup_table(self, shape)?.peak_gflops())
    }
}

/// Live mode: re-executes the selected kernel; peaks still come from the
/// stored tables.
pub struct LivePerf<'a> {
    pub tables: &'a TableSet,
    pub caps: DeviceCaps,
    pub timing: TimingPolicy,
}

impl PerfSource for LivePerf<'_> {
    fn gflops(&self, shape: &ProblemShape, config: &KernelConfig) -> Result<f64> {
        Ok(tune_configs(shape, &self.caps, &self.timing, &[*config], DEFAULT_SEED)?
            .best()
            .gflops)
    }

    fn peak(&self, shape: &ProblemShape) -> Result<f64> {
        self.tables.peak(shape)
    }
}

/// Stored GFLOPS of `config` on `shape`.
pub fn perf_of_config(shape: &ProblemShape, config: &KernelConfig, tables: &TableSet) -> Result<f64> {
    lookup_table(tables, shape)?
        .find(config)
        .map(|m| m.gflops)
        .ok_or_else(|| Error::Lookup(format!("{config} is not in the table for {shape}")))
}

pub fn perf_of_class(shape: &ProblemShape, class_id: u32, classes: &ClassIndex, tables: &TableSet) -> Result<f64> {
    perf_of_config(shape, classes.resolve(class_id)?, tables)
}

fn non_empty(records: &[DatasetRecord]) -> Result<()> {
    if records.is_empty() {
        Err(Error::Argument("evaluation needs at least one record".into()))
    } else {
        Ok(())
    }
}

pub fn accuracy(model: &dyn Selector, test: &[DatasetRecord]) -> Result<f64> {
    non_empty(test)?;
    let mut right = 0usize;
    for r in test {
        if model.select(&r.input)? == r.label {
            right += 1;
        }
    }
    Ok(right as f64 / test.len() as f64)
}

/// Sums in ascending order so the result does not depend on record order.
fn mean(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.iter().sum::<f64>() / sorted.len() as f64
}

/// Per-record `perf(predicted) / peak`.
pub fn peak_ratios(model: &dyn Selector, test: &[DatasetRecord], perf: &dyn PerfSource) -> Result<Vec<f64>> {
    test.iter()
        .map(|r| {
            let cfg = model.select(&r.input)?;
            Ok(perf.gflops(&r.input, &cfg)? / perf.peak(&r.input)?)
        })
        .collect()
}

/// Per-record `perf(predicted) / perf(baseline)`.
pub fn tuned_ratios(
    model: &dyn Selector,
    test: &[DatasetRecord],
    perf: &dyn PerfSource,
    policy: &BaselinePolicy,
) -> Result<Vec<f64>> {
    test.iter()
        .map(|r| {
            let cfg = model.select(&r.input)?;
            let base = baseline_select(policy, &r.input);
            Ok(perf.gflops(&r.input, &cfg)? / perf.gflops(&r.input, &base)?)
        })
        .collect()
}

pub fn dtpr(model: &dyn Selector, test: &[DatasetRecord], perf: &dyn PerfSource) -> Result<f64> {
    non_empty(test)?;
    Ok(mean(&peak_ratios(model, test, perf)?))
}

pub fn dttr(
    model: &dyn Selector,
    test: &[DatasetRecord],
    perf: &dyn PerfSource,
    policy: &BaselinePolicy,
) -> Result<f64> {
    non_empty(test)?;
    Ok(mean(&tuned_ratios(model, test, perf, policy)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelScore {
    pub name: String,
    pub accuracy: f64,
    pub dtpr: f64,
    pub dttr: f64,
    /// Min-samples-per-leaf setting as written in the model name.
    pub min_samples_leaf: String,
    pub stats: TreeStats,
}

pub fn score_model(
    name: &str,
    min_samples_leaf: &str,
    model: &TreeModel,
    test: &[DatasetRecord],
    tables: &TableSet,
    policy: &BaselinePolicy,
) -> Result<ModelScore> {
    Ok(ModelScore {
        name: name.to_string(),
        accuracy: accuracy(model, test)?,
        dtpr: dtpr(model, test, tables)?,
        dttr: dttr(model, test, tables, policy)?,
        min_samples_leaf: min_samples_leaf.to_string(),
        stats: crate::model::stats(&model.tree, &model.classes)?,
    })
}

/// Highest DTPR; ties go to higher accuracy, then fewer leaves, then name.
pub fn select_best_model(scores: &[ModelScore]) -> Result<&ModelScore> {
    scores
        .iter()
        .min_by(|a, b| {
            b.dtpr
                .total_cmp(&a.dtpr)
                .then(b.accuracy.total_cmp(&a.accuracy))
                .then(a.stats.total_leaves.cmp(&b.stats.total_leaves))
                .then(a.name.cmp(&b.name))
        })
        .ok_or_else(|| Error::Argument("no model scores to choose from".into()))
}

pub const SCORE_COLUMNS: [&str; 11] = [
    "name",
    "accuracy_pct",
    "dtpr",
    "dttr",
    "total_leaves",
    "height",
    "min_samples_leaf",
    "unique_configs_direct",
    "unique_configs_indirect",
    "leaves_direct",
    "leaves_indirect",
];

pub fn write_scores_csv(path: &Path, scores: &[ModelScore], header_comment: Option<&str>) -> Result<()> {
    let mut buf = Vec::new();
    if let Some(c) = header_comment {
        writeln!(buf, "# {c}").unwrap();
    }
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(SCORE_COLUMNS)?;
        for s in scores {
            let st = &s.stats;
            w.write_record([
                s.name.clone(),
                format!("{:.1}", s.accuracy * 100.0),
                format!("{:.3}", s.dtpr),
                format!("{:.3}", s.dttr),
                st.total_leaves.to_string(),
                st.height.to_string(),
                s.min_samples_leaf.clone(),
                st.unique_configs_per_family[0].to_string(),
                st.unique_configs_per_family[1].to_string(),
                st.leaves_per_family[0].to_string(),
                st.leaves_per_family[1].to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverheadSample {
    pub shape: ProblemShape,
    pub config: KernelConfig,
    pub dispatch_ns: f64,
    pub kernel_ns: f64,
    /// `dispatch / (dispatch + kernel)`
    pub overhead_fraction: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct OverheadOptions {
    /// Timed trials of the selection step; the median is reported.
    pub dispatch_trials: usize,
    /// Selection calls per trial, averaged to get below timer resolution.
    pub calls_per_trial: usize,
    pub kernel_trials: usize,
}

impl Default for OverheadOptions {
    fn default() -> Self {
        Self {
            dispatch_trials: 100,
            calls_per_trial: 1000,
            kernel_trials: 3,
        }
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Times the selection step against the selected kernel for each shape.
pub fn overhead_bench(
    model: &dyn Selector,
    shapes: &[ProblemShape],
    caps: &DeviceCaps,
    opts: &OverheadOptions,
) -> Result<Vec<OverheadSample>> {
    if opts.dispatch_trials == 0 || opts.calls_per_trial == 0 || opts.kernel_trials == 0 {
        return Err(Error::Argument("overhead trials must be positive".into()));
    }
    let mut out = Vec::with_capacity(shapes.len());
    for shape in shapes {
        let config = model.select(shape)?;
        let dispatch = (0..opts.dispatch_trials)
            .map(|_| {
                let start = Instant::now();
                for _ in 0..opts.calls_per_trial {
                    std::hint::black_box(model.select(std::hint::black_box(shape)))?;
                }
                Ok(start.elapsed().as_nanos() as f64 / opts.calls_per_trial as f64)
            })
            .collect::<Result<Vec<_>>>()?;

        let (ar, ac) = shape.a_dims();
        let (br, bc) = shape.b_dims();
        let a = Matrix::<f32>::random(ar, ac, 1);
        let b = Matrix::<f32>::random(br, bc, 2);
        let c = Matrix::<f32>::zeros(shape.m, shape.n);
        let mut o = Matrix::zeros(shape.m, shape.n);
        let mut ws = GemmWorkspace::new();
        let kernel = (0..opts.kernel_trials)
            .map(|_| {
                Ok(gemm_execute_into(shape, &config, caps, &a, &b, &c, &mut o, &mut ws)?.as_nanos() as f64)
            })
            .collect::<Result<Vec<_>>>()?;

        let dispatch_ns = median(dispatch);
        let kernel_ns = median(kernel);
        out.push(OverheadSample {
            shape: *shape,
            config,
            dispatch_ns,
            kernel_ns,
            overhead_fraction: dispatch_ns / (dispatch_ns + kernel_ns),
        });
    }
    Ok(out)
}
