//! Exhaustive and sampled benchmarking of the kernel search space.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{
    enumerate_search_space, full_search_space, gemm_execute_into, DeviceCaps, GemmWorkspace,
    KernelConfig, KernelFamily, Matrix, ProblemShape,
};
use crate::rng::SplitMix64;

/// Seed used for operand contents when the caller does not supply one.
pub const DEFAULT_SEED: u64 = 0x005E_ED0F_6E44;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TimingPolicy {
    /// Untimed runs before measuring.
    pub warmup: u32,
    /// Timed runs; the median is reported.
    pub repetitions: u32,
}

impl Default for TimingPolicy {
    fn default() -> Self {
        Self {
            warmup: 1,
            repetitions: 5,
        }
    }
}

pub fn flops_of(shape: &ProblemShape) -> u64 {
    2 * shape.m as u64 * shape.n as u64 * shape.k as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub config: KernelConfig,
    pub elapsed_s: f64,
    pub gflops: f64,
}

impl Measurement {
    pub fn new(shape: &ProblemShape, config: KernelConfig, elapsed_s: f64) -> Self {
        let elapsed_s = elapsed_s.max(1e-9);
        Self {
            config,
            elapsed_s,
            gflops: flops_of(shape) as f64 / elapsed_s / 1e9,
        }
    }
}

/// Provenance recorded alongside a table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableMeta {
    pub seed: u64,
    pub timing: TimingPolicy,
    pub caps: DeviceCaps,
    pub version: String,
    #[serde(default)]
    pub config_hash: Option<String>,
    /// Requested sample size when the table came from random sampling.
    #[serde(default)]
    pub sampled: Option<usize>,
    /// "measured" or "modeled".
    #[serde(default = "default_source")]
    pub source: String,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub beta: f64,
    #[serde(default)]
    pub trans_a: bool,
    #[serde(default)]
    pub trans_b: bool,
}

fn default_source() -> String {
    "measured".into()
}

fn default_alpha() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuningTable {
    pub shape: ProblemShape,
    pub measurements: Vec<Measurement>,
    pub best_direct: Option<usize>,
    pub best_indirect: Option<usize>,
    pub best_overall: usize,
    pub meta: TableMeta,
}

fn argmax_by<'a>(items: impl Iterator<Item = (usize, &'a Measurement)>) -> Option<usize> {
    // First index wins ties so the choice is stable under re-reads.
    let mut best: Option<(usize, f64)> = None;
    for (i, m) in items {
        if best.is_none_or(|(_, g)| m.gflops > g) {
            best = Some((i, m.gflops));
        }
    }
    best.map(|(i, _)| i)
}

impl TuningTable {
    pub fn new(shape: ProblemShape, measurements: Vec<Measurement>, meta: TableMeta) -> Result<Self> {
        let best_overall = argmax_by(measurements.iter().enumerate()).ok_or_else(|| {
            Error::Validation(format!("tuning table for {shape} has no measurements"))
        })?;
        let family_best = |fam: KernelFamily| {
            argmax_by(
                measurements
                    .iter()
                    .enumerate()
                    .filter(|(_, m)| m.config.family == fam),
            )
        };
        Ok(Self {
            best_direct: family_best(KernelFamily::Direct),
            best_indirect: family_best(KernelFamily::Indirect),
            best_overall,
            shape,
            measurements,
            meta,
        })
    }

    pub fn best(&self) -> &Measurement {
        &self.measurements[self.best_overall]
    }

    pub fn best_of(&self, family: KernelFamily) -> Option<&Measurement> {
        match family {
            KernelFamily::Direct => self.best_direct,
            KernelFamily::Indirect => self.best_indirect,
        }
        .map(|i| &self.measurements[i])
    }

    pub fn peak_gflops(&self) -> f64 {
        self.best().gflops
    }

    pub fn find(&self, config: &KernelConfig) -> Option<&Measurement> {
        self.measurements.iter().find(|m| &m.config == config)
    }

    /// Writes the table as CSV preceded by a `# meta {json}` comment line.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        writeln!(buf, "# meta {}", serde_json::to_string(&self.meta)?).unwrap();
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            w.write_record([
                "M", "N", "K", "family", "Mwg", "Nwg", "Kwg", "Mwi", "Nwi", "Kwi", "elapsed_s",
                "gflops",
            ])?;
            let (m, n, k) = self.shape.dims();
            for meas in &self.measurements {
                let c = &meas.config;
                w.write_record([
                    m.to_string(),
                    n.to_string(),
                    k.to_string(),
                    c.family.to_string(),
                    c.mwg.to_string(),
                    c.nwg.to_string(),
                    c.kwg.to_string(),
                    c.mwi.to_string(),
                    c.nwi.to_string(),
                    c.kwi.to_string(),
                    meas.elapsed_s.to_string(),
                    meas.gflops.to_string(),
                ])?;
            }
            w.flush().map_err(|e| Error::io(path, e))?;
        }
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut meta = None;
        for line in BufReader::new(file).lines() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if let Some(json) = line.strip_prefix("# meta ") {
                meta = Some(serde_json::from_str::<TableMeta>(json)?);
                break;
            }
            if !line.starts_with('#') {
                break;
            }
        }
        let meta = meta.ok_or_else(|| Error::Parse {
            path: path.into(),
            line: 1,
            msg: "missing `# meta` line".into(),
        })?;

        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_path(path)?;
        let mut dims = None;
        let mut measurements = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = row + 3;
            let parse_err = |msg: String| Error::Parse {
                path: path.into(),
                line,
                msg,
            };
            if rec.len() != 12 {
                return Err(parse_err(format!("expected 12 fields, got {}", rec.len())));
            }
            let int = |i: usize| -> Result<usize> {
                rec[i]
                    .trim()
                    .parse()
                    .map_err(|_| parse_err(format!("bad integer {:?}", &rec[i])))
            };
            let float = |i: usize| -> Result<f64> {
                rec[i]
                    .trim()
                    .parse()
                    .map_err(|_| parse_err(format!("bad number {:?}", &rec[i])))
            };
            let row_dims = (int(0)?, int(1)?, int(2)?);
            match dims {
                None => dims = Some(row_dims),
                Some(d) if d != row_dims => {
                    return Err(parse_err("rows describe different shapes".into()))
                }
                _ => {}
            }
            let family: KernelFamily = rec[3].parse().map_err(|e: Error| parse_err(e.to_string()))?;
            let config =
                KernelConfig::from_parts(family, int(4)?, int(5)?, int(6)?, int(7)?, int(8)?, int(9)?);
            measurements.push(Measurement {
                config,
                elapsed_s: float(10)?,
                gflops: float(11)?,
            });
        }
        let (m, n, k) = dims.ok_or_else(|| Error::Parse {
            path: path.into(),
            line: 2,
            msg: "table has no rows".into(),
        })?;
        let shape = ProblemShape::new(m, n, k)?
            .with_scalars(meta.alpha, meta.beta)
            .with_transposes(meta.trans_a, meta.trans_b);
        Self::new(shape, measurements, meta)
    }
}

fn meta_for(shape: &ProblemShape, caps: &DeviceCaps, timing: &TimingPolicy, seed: u64) -> TableMeta {
    TableMeta {
        seed,
        timing: *timing,
        caps: *caps,
        version: crate::VERSION.to_string(),
        config_hash: None,
        sampled: None,
        source: default_source(),
        alpha: shape.alpha,
        beta: shape.beta,
        trans_a: shape.trans_a,
        trans_b: shape.trans_b,
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Benchmarks each of `configs` on `shape`, serially, with f32 operands
/// generated from `seed`.
pub fn tune_configs(
    shape: &ProblemShape,
    caps: &DeviceCaps,
    timing: &TimingPolicy,
    configs: &[KernelConfig],
    seed: u64,
) -> Result<TuningTable> {
    shape.validate()?;
    if timing.repetitions == 0 {
        return Err(Error::Argument("timing needs at least one repetition".into()));
    }
    let (ar, ac) = shape.a_dims();
    let (br, bc) = shape.b_dims();
    let a = Matrix::<f32>::random(ar, ac, seed);
    let b = Matrix::<f32>::random(br, bc, seed.wrapping_add(1));
    let c = Matrix::<f32>::random(shape.m, shape.n, seed.wrapping_add(2));
    let mut out = Matrix::zeros(shape.m, shape.n);
    let mut first: Option<Matrix<f32>> = None;
    let mut ws = GemmWorkspace::new();
    let mut samples = vec![0.0; timing.repetitions as usize];

    let mut measurements = Vec::with_capacity(configs.len());
    for config in configs {
        let fail = |e: Error| Error::Measurement {
            config: *config,
            reason: e.to_string(),
        };
        for _ in 0..timing.warmup {
            gemm_execute_into(shape, config, caps, &a, &b, &c, &mut out, &mut ws).map_err(fail)?;
        }
        for slot in samples.iter_mut() {
            *slot = gemm_execute_into(shape, config, caps, &a, &b, &c, &mut out, &mut ws)
                .map_err(fail)?
                .as_secs_f64();
        }
        // All kernels share one summation order, so any disagreement is a bug.
        match &first {
            None => first = Some(out.clone()),
            Some(expected) if expected != &out => {
                return Err(Error::Measurement {
                    config: *config,
                    reason: "result differs from the other configurations".into(),
                })
            }
            _ => {}
        }
        measurements.push(Measurement::new(shape, *config, median(&mut samples)));
        log::trace!("{shape} {config}: {:.3} GFLOPS", measurements.last().unwrap().gflops);
    }
    TuningTable::new(*shape, measurements, meta_for(shape, caps, timing, seed))
}

/// Benchmarks every legal configuration of both families.
pub fn tune_exhaustive(
    shape: &ProblemShape,
    caps: &DeviceCaps,
    timing: &TimingPolicy,
) -> Result<TuningTable> {
    tune_configs(shape, caps, timing, &full_search_space(caps), DEFAULT_SEED)
}

#[derive(Debug, Clone)]
pub struct RandomTuning {
    pub table: TuningTable,
    /// The request exceeded the legal space and was clamped to exhaustive.
    pub clamped: bool,
}

/// Seeded, without-replacement sample of `samples` legal configurations,
/// split across families in proportion to their space sizes.
pub fn sample_configs(caps: &DeviceCaps, samples: usize, seed: u64) -> Result<(Vec<KernelConfig>, bool)> {
    if samples == 0 {
        return Err(Error::Argument("samples must be at least 1".into()));
    }
    let spaces: Vec<Vec<KernelConfig>> = KernelFamily::ALL
        .iter()
        .map(|&f| enumerate_search_space(f, caps))
        .collect();
    let total: usize = spaces.iter().map(Vec::len).sum();
    if samples >= total {
        let clamped = samples > total;
        if clamped {
            log::warn!("requested {samples} samples but only {total} legal configs; tuning exhaustively");
        }
        return Ok((spaces.concat(), clamped));
    }
    // Round the Direct share to nearest, give the rest to Indirect.
    let direct = ((samples * spaces[0].len() + total / 2) / total).min(spaces[0].len());
    let indirect = (samples - direct).min(spaces[1].len());
    let direct = samples - indirect;

    let mut rng = SplitMix64::new(seed);
    let mut picked = Vec::with_capacity(samples);
    for (space, take) in spaces.into_iter().zip([direct, indirect]) {
        let mut idx: Vec<usize> = (0..space.len()).collect();
        // Partial Fisher-Yates: the first `take` slots are the sample.
        for i in 0..take {
            let j = i + rng.below((idx.len() - i) as u64) as usize;
            idx.swap(i, j);
        }
        picked.extend(idx[..take].iter().map(|&i| space[i]));
    }
    Ok((picked, false))
}

pub fn tune_random(
    shape: &ProblemShape,
    caps: &DeviceCaps,
    samples: usize,
    seed: u64,
    timing: &TimingPolicy,
) -> Result<RandomTuning> {
    let (configs, clamped) = sample_configs(caps, samples, seed)?;
    let mut table = tune_configs(shape, caps, timing, &configs, seed)?;
    table.meta.sampled = Some(samples);
    Ok(RandomTuning { table, clamped })
}

/// Deterministic analytic stand-in for a measured table.
///
/// Models the Direct/Indirect trade-off (edge waste and strided access
/// against padding plus O(n^2) helper passes) with seeded per-row jitter.
/// Used for pipeline dry runs and fixtures where real timing is too slow or
/// too noisy.
pub fn modeled_table(shape: &ProblemShape, caps: &DeviceCaps, seed: u64) -> Result<TuningTable> {
    shape.validate()?;
    let (m, n) = (shape.m as f64, shape.n as f64);
    let flops = flops_of(shape) as f64;
    let up = |x: usize, t: usize| (x.div_ceil(t) * t) as f64;

    let mut measurements = Vec::new();
    for config in full_search_space(caps) {
        let reg = (config.mwi * config.nwi) as f64;
        let reg_eff = reg / (reg + 0.5 * (config.mwi + config.nwi) as f64);
        let tile_eff = ((config.mwg * config.nwg) as f64).ln() / 12.0;
        let mut h = SplitMix64::new(
            seed ^ (shape.m as u64).wrapping_mul(0x9E37_79B9)
                ^ (shape.n as u64).wrapping_mul(0x85EB_CA6B)
                ^ (shape.k as u64).wrapping_mul(0xC2B2_AE35)
                ^ fnv(config.canonical_id().as_bytes()),
        );
        let jitter = 0.9 + 0.2 * h.next_f64();
        let seconds = match config.family {
            KernelFamily::Direct => {
                let edge = (m * n) / (up(shape.m, config.mwg) * up(shape.n, config.nwg));
                let rate = 4e9 * reg_eff * (0.6 + 0.4 * tile_eff) * edge.powf(0.5);
                flops / rate
            }
            KernelFamily::Indirect => {
                let (mp, np, kp) = (
                    up(shape.m, config.mwg),
                    up(shape.n, config.nwg),
                    up(shape.k, config.kwg),
                );
                let rate = 7e9 * reg_eff * (0.5 + 0.5 * tile_eff) * (1.0 + 0.05 * config.kwi as f64);
                let helpers = (mp * kp + kp * np + 2.0 * mp * np) / 1.5e9 + 20e-6;
                2.0 * mp * np * kp / rate + helpers
            }
        };
        measurements.push(Measurement::new(shape, config, seconds * jitter));
    }
    let mut meta = meta_for(shape, caps, &TimingPolicy::default(), seed);
    meta.source = "modeled".into();
    TuningTable::new(*shape, measurements, meta)
}

/// Tables keyed by `(M, N, K)`.
#[derive(Debug, Clone, Default)]
pub struct TableSet {
    tables: std::collections::HashMap<(usize, usize, usize), TuningTable>,
}

impl TableSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, table: TuningTable) {
        self.tables.insert(table.shape.dims(), table);
    }

    pub fn get(&self, shape: &ProblemShape) -> Option<&TuningTable> {
        self.tables.get(&shape.dims())
    }

    pub fn len(&self) -> usize {
        self.tables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tables.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &TuningTable> {
        self.tables.values()
    }
}

impl FromIterator<TuningTable> for TableSet {
    fn from_iter<I: IntoIterator<Item = TuningTable>>(iter: I) -> Self {
        let mut set = Self::new();
        for t in iter {
            set.insert(t);
        }
        set
    }
}

fn fnv(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}
