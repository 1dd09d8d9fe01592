//! Input generation, labeling by exhaustive tuning, and train/test splits.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{DeviceCaps, KernelConfig, ProblemShape};
use crate::rng::SplitMix64;
use crate::tuner::{tune_exhaustive, TimingPolicy, TuningTable};

pub const SIDECAR_VERSION: u32 = 1;

/// Every `(M, N, K)` whose coordinates are powers of two in `[min, max]`.
pub fn gen_po2(min: usize, max: usize) -> Result<Vec<ProblemShape>> {
    if !min.is_power_of_two() || !max.is_power_of_two() || min > max {
        return Err(Error::Argument(format!(
            "po2 bounds must be powers of two with min <= max, got ({min}, {max})"
        )));
    }
    let axis: Vec<usize> = std::iter::successors(Some(min), |&v| Some(v * 2))
        .take_while(|&v| v <= max)
        .collect();
    cube(&axis)
}

/// Every `(M, N, K)` on the progression `start, start + step, ... <= end`.
pub fn gen_go2(start: usize, end: usize, step: usize) -> Result<Vec<ProblemShape>> {
    if start == 0 || step == 0 || start > end {
        return Err(Error::Argument(format!(
            "empty grid progression ({start}, {end}, {step})"
        )));
    }
    let axis: Vec<usize> = (start..=end).step_by(step).collect();
    cube(&axis)
}

fn cube(axis: &[usize]) -> Result<Vec<ProblemShape>> {
    let mut out = Vec::with_capacity(axis.len().pow(3));
    for &m in axis {
        for &n in axis {
            for &k in axis {
                out.push(ProblemShape::new(m, n, k)?);
            }
        }
    }
    Ok(out)
}

/// Removes repeated `(M, N, K)` triples, keeping first occurrences in order.
pub fn dedup_shapes(shapes: impl IntoIterator<Item = ProblemShape>) -> Vec<ProblemShape> {
    let mut seen = HashSet::new();
    shapes
        .into_iter()
        .filter(|s| seen.insert(s.dims()))
        .collect()
}

#[derive(Debug, Clone, Default)]
pub struct WorkloadShapes {
    pub shapes: Vec<ProblemShape>,
    pub warnings: Vec<String>,
}

/// Parses a workload file: one `M N K` or `M,N,K` per line, `#` comments.
pub fn parse_workload(text: &str, path: &Path) -> Result<WorkloadShapes> {
    let mut shapes = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|f| !f.is_empty())
            .collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                path: path.into(),
                line: line_no,
                msg: format!("expected 3 fields, got {}", fields.len()),
            });
        }
        let mut dims = [0i64; 3];
        for (slot, f) in dims.iter_mut().zip(&fields) {
            *slot = f.parse().map_err(|_| Error::Parse {
                path: path.into(),
                line: line_no,
                msg: format!("{f:?} is not an integer"),
            })?;
        }
        if dims.iter().any(|&d| d <= 0) {
            return Err(Error::Validation(format!(
                "{}:{line_no}: dimensions must be positive, got {dims:?}",
                path.display()
            )));
        }
        shapes.push(ProblemShape::new(dims[0] as usize, dims[1] as usize, dims[2] as usize)?);
    }
    let mut warnings = Vec::new();
    if shapes.is_empty() {
        let msg = format!("{}: no shapes found", path.display());
        log::warn!("{msg}");
        warnings.push(msg);
    }
    Ok(WorkloadShapes {
        shapes: dedup_shapes(shapes),
        warnings,
    })
}

pub fn load_workload_shapes(path: &Path) -> Result<WorkloadShapes> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_workload(&text, path)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Po2,
    Go2,
    Workload,
    Hybrid,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Po2 => "po2",
            Provenance::Go2 => "go2",
            Provenance::Workload => "workload",
            Provenance::Hybrid => "hybrid",
        })
    }
}

/// Dense class ids for configurations, assigned in first-appearance order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClassIndex {
    configs: Vec<KernelConfig>,
    ids: HashMap<KernelConfig, u32>,
}

impl ClassIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intern(&mut self, config: KernelConfig) -> u32 {
        if let Some(&id) = self.ids.get(&config) {
            return id;
        }
        let id = self.configs.len() as u32;
        self.configs.push(config);
        self.ids.insert(config, id);
        id
    }

    pub fn id_of(&self, config: &KernelConfig) -> Option<u32> {
        self.ids.get(config).copied()
    }

    pub fn id_of_canonical(&self, canonical: &str) -> Option<u32> {
        KernelConfig::from_str(canonical).ok().and_then(|c| self.id_of(&c))
    }

    pub fn config(&self, id: u32) -> Option<&KernelConfig> {
        self.configs.get(id as usize)
    }

    pub fn resolve(&self, id: u32) -> Result<&KernelConfig> {
        self.config(id)
            .ok_or_else(|| Error::Consistency(format!("unknown class id {id}")))
    }

    pub fn len(&self) -> usize {
        self.configs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.configs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &KernelConfig)> {
        self.configs.iter().enumerate().map(|(i, c)| (i as u32, c))
    }
}

#[derive(Serialize, Deserialize)]
struct ClassEntry {
    class_id: u32,
    #[serde(flatten)]
    config: KernelConfig,
}

impl Serialize for ClassIndex {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let entries: Vec<ClassEntry> = self
            .iter()
            .map(|(class_id, &config)| ClassEntry { class_id, config })
            .collect();
        entries.serialize(s)
    }
}

impl<'de> Deserialize<'de> for ClassIndex {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let mut entries = Vec::<ClassEntry>::deserialize(d)?;
        entries.sort_by_key(|e| e.class_id);
        let mut index = ClassIndex::new();
        for (expect, e) in entries.into_iter().enumerate() {
            if e.class_id as usize != expect || index.id_of(&e.config).is_some() {
                return Err(serde::de::Error::custom(format!(
                    "class ids must be dense and unique (at {})",
                    e.class_id
                )));
            }
            index.intern(e.config);
        }
        Ok(index)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub input: ProblemShape,
    pub label: KernelConfig,
    pub class_id: u32,
    pub peak_gflops: f64,
    /// File name of the stored tuning table, when known.
    pub table_ref: Option<String>,
}

impl DatasetRecord {
    pub fn features(&self) -> [f64; 3] {
        [self.input.m as f64, self.input.n as f64, self.input.k as f64]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub records: Vec<DatasetRecord>,
    pub classes: ClassIndex,
    pub provenance: Provenance,
    /// Shapes that could not be labeled, with the reason.
    pub failures: Vec<String>,
}

/// Canonical file name of the stored table for a shape.
pub fn table_file_name(shape: &ProblemShape) -> String {
    format!("{}x{}x{}.csv", shape.m, shape.n, shape.k)
}

impl Dataset {
    /// Labels each shape with the best overall configuration of its table.
    /// Later tables for an already-seen `(M, N, K)` are ignored.
    pub fn from_tables<'a>(
        tables: impl IntoIterator<Item = &'a TuningTable>,
        provenance: Provenance,
    ) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut classes = ClassIndex::new();
        let mut records = Vec::new();
        for table in tables {
            if !seen.insert(table.shape.dims()) {
                continue;
            }
            let best = table.best();
            if best.gflops.is_nan() || best.gflops <= 0.0 {
                return Err(Error::Validation(format!(
                    "table for {} has non-positive peak",
                    table.shape
                )));
            }
            records.push(DatasetRecord {
                input: table.shape,
                label: best.config,
                class_id: classes.intern(best.config),
                peak_gflops: best.gflops,
                table_ref: Some(table_file_name(&table.shape)),
            });
        }
        Ok(Self {
            records,
            classes,
            provenance,
            failures: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Distinct label configurations per family, indexed by
    /// [`KernelFamily::index`].
    pub fn unique_configs_per_family(&self) -> [usize; 2] {
        let mut seen = HashSet::new();
        let mut counts = [0; 2];
        for r in &self.records {
            if seen.insert(r.label) {
                counts[r.label.family.index()] += 1;
            }
        }
        counts
    }

    pub fn write(&self, csv_path: &Path, sidecar_path: &Path, config_hash: Option<&str>) -> Result<()> {
        let mut buf = Vec::new();
        if let Some(h) = config_hash {
            writeln!(buf, "# config_hash={h}").unwrap();
        }
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            w.write_record(["M", "N", "K", "class_id", "canonical_config", "peak_gflops"])?;
            for r in &self.records {
                w.write_record([
                    r.input.m.to_string(),
                    r.input.n.to_string(),
                    r.input.k.to_string(),
                    r.class_id.to_string(),
                    r.label.canonical_id(),
                    r.peak_gflops.to_string(),
                ])?;
            }
            w.flush().map_err(|e| Error::io(csv_path, e))?;
        }
        fs::write(csv_path, buf).map_err(|e| Error::io(csv_path, e))?;

        let sidecar = Sidecar {
            format_version: SIDECAR_VERSION,
            provenance: self.provenance,
            config_hash: config_hash.map(str::to_string),
            toolkit_version: crate::VERSION.to_string(),
            failures: self.failures.clone(),
            classes: self.classes.clone(),
        };
        let json = serde_json::to_string_pretty(&sidecar)?;
        fs::write(sidecar_path, json + "\n").map_err(|e| Error::io(sidecar_path, e))
    }

    pub fn read(csv_path: &Path, sidecar_path: &Path) -> Result<Self> {
        let text = fs::read_to_string(sidecar_path).map_err(|e| Error::io(sidecar_path, e))?;
        let sidecar: Sidecar = serde_json::from_str(&text)?;
        if sidecar.format_version != SIDECAR_VERSION {
            return Err(Error::Format(format!(
                "unsupported dataset sidecar version {}",
                sidecar.format_version
            )));
        }
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_path(csv_path)?;
        let mut records = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = rec.position().map_or(row + 2, |p| p.line() as usize);
            let parse_err = |msg: String| Error::Parse {
                path: csv_path.into(),
                line,
                msg,
            };
            if rec.len() != 6 {
                return Err(parse_err(format!("expected 6 fields, got {}", rec.len())));
            }
            let int = |i: usize| -> Result<usize> {
                rec[i].parse().map_err(|_| parse_err(format!("bad integer {:?}", &rec[i])))
            };
            let input = ProblemShape::new(int(0)?, int(1)?, int(2)?)?;
            let class_id = int(3)? as u32;
            let label: KernelConfig = rec[4].parse().map_err(|e: Error| parse_err(e.to_string()))?;
            if sidecar.classes.config(class_id) != Some(&label) {
                return Err(Error::Consistency(format!(
                    "{}:{line}: class {class_id} does not map to {label} in the sidecar",
                    csv_path.display(),
                )));
            }
            let peak_gflops: f64 = rec[5]
                .parse()
                .map_err(|_| parse_err(format!("bad number {:?}", &rec[5])))?;
            records.push(DatasetRecord {
                table_ref: Some(table_file_name(&input)),
                input,
                label,
                class_id,
                peak_gflops,
            });
        }
        Ok(Self {
            records,
            classes: sidecar.classes,
            provenance: sidecar.provenance,
            failures: sidecar.failures,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    format_version: u32,
    provenance: Provenance,
    #[serde(default)]
    config_hash: Option<String>,
    toolkit_version: String,
    #[serde(default)]
    failures: Vec<String>,
    classes: ClassIndex,
}

/// Tunes every shape exhaustively and labels it with its fastest config.
/// Shapes whose tuning fails are skipped and listed in `failures`.
pub fn build_dataset(
    shapes: &[ProblemShape],
    caps: &DeviceCaps,
    timing: &TimingPolicy,
    provenance: Provenance,
) -> Result<(Dataset, Vec<TuningTable>)> {
    if shapes.is_empty() {
        return Err(Error::Argument("no shapes to build a dataset from".into()));
    }
    let mut tables = Vec::new();
    let mut failures = Vec::new();
    for shape in dedup_shapes(shapes.iter().copied()) {
        match tune_exhaustive(&shape, caps, timing) {
            Ok(t) => tables.push(t),
            Err(e) => {
                log::error!("tuning {shape} failed: {e}");
                failures.push(format!("{shape}: {e}"));
            }
        }
    }
    let mut dataset = Dataset::from_tables(&tables, provenance)?;
    dataset.failures = failures;
    Ok((dataset, tables))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub fraction: f64,
    pub seed: u64,
}

/// Seeded Fisher-Yates partition of `0..n`; the first `floor(fraction * n)`
/// shuffled indices train.
pub fn split_indices(n: usize, fraction: f64, seed: u64) -> Result<Split> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Argument(format!("split fraction {fraction} not in (0, 1)")));
    }
    if n < 2 {
        return Err(Error::Argument(format!("need at least 2 records to split, got {n}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    SplitMix64::new(seed).shuffle(&mut idx);
    let n_train = (fraction * n as f64).floor() as usize;
    let test = idx.split_off(n_train);
    Ok(Split {
        train: idx,
        test,
        fraction,
        seed,
    })
}

pub fn split(dataset: &Dataset, fraction: f64, seed: u64) -> Result<Split> {
    split_indices(dataset.len(), fraction, seed)
}
