//! Pipeline configuration: one JSON file drives every stage.

use std::path::{Path, PathBuf};

use adaptgemm::dataset::{dedup_shapes, gen_go2, gen_po2, load_workload_shapes, Provenance};
use adaptgemm::eval::{DEFAULT_DIRECT_EDGE, DEFAULT_INDIRECT_EDGE, DEFAULT_THRESHOLD};
use adaptgemm::kernels::{DeviceCaps, ProblemShape};
use adaptgemm::model::{default_heights, default_min_leaves, MaxHeight, MinLeaf};
use adaptgemm::tuner::{TimingPolicy, DEFAULT_SEED};
use adaptgemm::{Error, Result};
use serde::{Deserialize, Serialize};

/// Environment variables that override [`DeviceCaps`] fields.
pub const CAPS_ENV: [&str; 4] = [
    "ADAPTGEMM_TILE_MEMORY_CAP",
    "ADAPTGEMM_REGISTER_TILE_CAP_DIRECT",
    "ADAPTGEMM_REGISTER_TILE_CAP_INDIRECT",
    "ADAPTGEMM_ELEMENT_SIZE",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "lowercase")]
pub enum DatasetSpec {
    Po2 { min: usize, max: usize },
    Go2 { start: usize, end: usize, step: usize },
    Workload { path: PathBuf },
    /// Concatenation of other specs, deduplicated.
    Hybrid { parts: Vec<DatasetSpec> },
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Po2 { min: 64, max: 2048 }
    }
}

impl DatasetSpec {
    pub fn provenance(&self) -> Provenance {
        match self {
            DatasetSpec::Po2 { .. } => Provenance::Po2,
            DatasetSpec::Go2 { .. } => Provenance::Go2,
            DatasetSpec::Workload { .. } => Provenance::Workload,
            DatasetSpec::Hybrid { .. } => Provenance::Hybrid,
        }
    }

    /// Relative workload paths resolve against `base`.
    pub fn shapes(&self, base: &Path) -> Result<Vec<ProblemShape>> {
        match self {
            DatasetSpec::Po2 { min, max } => gen_po2(*min, *max),
            DatasetSpec::Go2 { start, end, step } => gen_go2(*start, *end, *step),
            DatasetSpec::Workload { path } => Ok(load_workload_shapes(&base.join(path))?.shapes),
            DatasetSpec::Hybrid { parts } => {
                let mut all = Vec::new();
                for p in parts {
                    all.extend(p.shapes(base)?);
                }
                Ok(dedup_shapes(all))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum TuningMode {
    /// Every legal configuration.
    Exhaustive,
    /// Seeded sample of `samples` configurations per shape.
    Random { samples: usize },
    /// Analytic stand-in tables; no kernels are timed.
    Modeled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub fraction: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { fraction: 0.8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineSpec {
    pub threshold: u64,
    /// Edge of the cube on which the Indirect default is tuned.
    pub indirect_edge: usize,
    /// Edge of the cube on which the Direct default is tuned.
    pub direct_edge: usize,
}

impl Default for BaselineSpec {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            indirect_edge: DEFAULT_INDIRECT_EDGE,
            direct_edge: DEFAULT_DIRECT_EDGE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchShapes {
    Train,
    Test,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchSpec {
    pub shapes: BenchShapes,
    /// Re-execute kernels (`true`) or read stored tables (`false`).
    pub live: bool,
    pub dispatch_trials: usize,
    pub calls_per_trial: usize,
    pub kernel_trials: usize,
}

impl Default for BenchSpec {
    fn default() -> Self {
        Self {
            shapes: BenchShapes::Test,
            live: true,
            dispatch_trials: 100,
            calls_per_trial: 1000,
            kernel_trials: 3,
        }
    }
}

/// `H` entries are positive integers or `"Max"`; `L` entries are integers
/// (counts) or fractions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HeightValue {
    Bounded(u32),
    Named(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub caps: DeviceCaps,
    pub timing: TimingPolicy,
    pub tuning: TuningMode,
    pub dataset: DatasetSpec,
    pub split: SplitSpec,
    /// Seeds splits, config sampling and operand fill.
    pub seed: u64,
    pub heights: Vec<HeightValue>,
    pub min_leaves: Vec<serde_json::Number>,
    pub baseline: BaselineSpec,
    pub bench: BenchSpec,
    pub out: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            caps: DeviceCaps::default(),
            timing: TimingPolicy::default(),
            tuning: TuningMode::Exhaustive,
            dataset: DatasetSpec::default(),
            split: SplitSpec::default(),
            seed: DEFAULT_SEED,
            heights: default_heights()
                .into_iter()
                .map(|h| match h {
                    MaxHeight::Bounded(h) => HeightValue::Bounded(h),
                    MaxHeight::Unbounded => HeightValue::Named("Max".into()),
                })
                .collect(),
            min_leaves: default_min_leaves()
                .into_iter()
                .map(|l| match l {
                    MinLeaf::Count(c) => serde_json::Number::from(c),
                    MinLeaf::Fraction(f) => serde_json::Number::from_f64(f).unwrap(),
                })
                .collect(),
            baseline: BaselineSpec::default(),
            bench: BenchSpec::default(),
            out: PathBuf::from("adaptgemm-out"),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.into(),
            source: e,
        })?;
        let mut cfg: Self = serde_json::from_str(&text)?;
        // Relative paths in the file are relative to the file.
        let base = path.parent().unwrap_or(Path::new("."));
        if cfg.out.is_relative() {
            cfg.out = base.join(&cfg.out);
        }
        relocate(&mut cfg.dataset, base);
        Ok(cfg)
    }

    /// Applies the `ADAPTGEMM_*` cap overrides.
    pub fn apply_env(&mut self) -> Result<()> {
        let fields = [
            &mut self.caps.tile_memory_cap,
            &mut self.caps.register_tile_cap_direct,
            &mut self.caps.register_tile_cap_indirect,
            &mut self.caps.element_size,
        ];
        for (name, slot) in CAPS_ENV.iter().zip(fields) {
            if let Ok(v) = std::env::var(name) {
                *slot = v
                    .trim()
                    .parse()
                    .map_err(|_| Error::Argument(format!("{name}={v:?} is not a positive integer")))?;
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.caps.validate()?;
        if self.timing.repetitions == 0 {
            return Err(Error::Argument("timing.repetitions must be >= 1".into()));
        }
        if !(self.split.fraction > 0.0 && self.split.fraction < 1.0) {
            return Err(Error::Argument(format!("split.fraction {} not in (0, 1)", self.split.fraction)));
        }
        if self.baseline.threshold == 0 || self.baseline.direct_edge == 0 || self.baseline.indirect_edge == 0 {
            return Err(Error::Argument("baseline threshold and edges must be >= 1".into()));
        }
        if let TuningMode::Random { samples: 0 } = self.tuning {
            return Err(Error::Argument("tuning.samples must be >= 1".into()));
        }
        self.heights()?;
        self.min_leaves()?;
        Ok(())
    }

    pub fn heights(&self) -> Result<Vec<MaxHeight>> {
        let hs: Vec<MaxHeight> = self
            .heights
            .iter()
            .map(|h| match h {
                HeightValue::Bounded(0) => Err(Error::Argument("heights must be positive".into())),
                HeightValue::Bounded(h) => Ok(MaxHeight::Bounded(*h)),
                HeightValue::Named(s) if s.eq_ignore_ascii_case("max") => Ok(MaxHeight::Unbounded),
                HeightValue::Named(s) => Err(Error::Argument(format!("unknown height {s:?}"))),
            })
            .collect::<Result<_>>()?;
        if hs.is_empty() {
            return Err(Error::Argument("heights must not be empty".into()));
        }
        Ok(hs)
    }

    pub fn min_leaves(&self) -> Result<Vec<MinLeaf>> {
        let ls: Vec<MinLeaf> = self
            .min_leaves
            .iter()
            .map(|n| match (n.as_u64(), n.as_f64()) {
                (Some(0), _) => Err(Error::Argument("min_leaves counts must be >= 1".into())),
                (Some(c), _) => Ok(MinLeaf::Count(c as usize)),
                (None, Some(f)) if f > 0.0 && f <= 0.5 => Ok(MinLeaf::Fraction(f)),
                _ => Err(Error::Argument(format!("min_leaves entry {n} is neither a count nor a fraction in (0, 0.5]"))),
            })
            .collect::<Result<_>>()?;
        if ls.is_empty() {
            return Err(Error::Argument("min_leaves must not be empty".into()));
        }
        Ok(ls)
    }

    /// Hash of the effective configuration, embedded in every output.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        // The output location does not change any result.
        canonical.out = PathBuf::new();
        let json = serde_json::to_string(&canonical).expect("config serializes");
        adaptgemm::content_hash(json.as_bytes())[..16].to_string()
    }
}

fn relocate(spec: &mut DatasetSpec, base: &Path) {
    match spec {
        DatasetSpec::Workload { path } if path.is_relative() => *path = base.join(&*path),
        DatasetSpec::Hybrid { parts } => parts.iter_mut().for_each(|p| relocate(p, base)),
        _ => {}
    }
}
