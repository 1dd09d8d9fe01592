//! `adaptgemm`: off-line pipeline and on-line demo for input-adaptive GEMM.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or format error,
//! 3 execution failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use adaptgemm::Error;
use clap::{Args, Parser, Subcommand};

use commands::{BenchOptions, Context};
use config::{PipelineConfig, CAPS_ENV};

#[derive(Parser)]
#[command(name = "adaptgemm", version, about = "Input-adaptive GEMM toolkit")]
#[command(after_help = "Device caps can be overridden with ADAPTGEMM_TILE_MEMORY_CAP, \
ADAPTGEMM_REGISTER_TILE_CAP_DIRECT, ADAPTGEMM_REGISTER_TILE_CAP_INDIRECT and ADAPTGEMM_ELEMENT_SIZE.")]
struct Cli {
    /// Only log warnings and errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// Pipeline configuration (JSON). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; overrides the config's `out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for splits, config sampling and operands; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Recompute outputs that already exist.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Benchmark every configuration for each dataset shape and the baseline shapes.
    Tune {
        #[command(flatten)]
        common: Common,
        /// Worker processes; shapes are sharded round-robin.
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
        jobs: u16,
        #[arg(long, hide = true, value_parser = commands::parse_shard)]
        shard: Option<(usize, usize)>,
    },
    /// Label shapes from stored tables and write the train/test split.
    Dataset {
        #[command(flatten)]
        common: Common,
    },
    /// Train the height x min-samples-leaf grid of trees.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Score every model on the test split and pick the best.
    Eval {
        #[command(flatten)]
        common: Common,
    },
    /// Emit the chosen model as C-like and Rust dispatchers.
    Codegen {
        #[command(flatten)]
        common: Common,
        /// Model file; defaults to the best model from `eval`.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Compare model-driven selection with the baseline and the tuned peak.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Read stored tables instead of re-running kernels.
        #[arg(long)]
        table_mode: bool,
        /// Also write whitespace-separated columns to bench.dat.
        #[arg(long)]
        emit_gnuplot_data: bool,
    },
    /// Run tune, dataset, train, eval, codegen and bench in order.
    Pipeline {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
        jobs: u16,
        #[arg(long)]
        table_mode: bool,
        #[arg(long)]
        emit_gnuplot_data: bool,
    },
    /// Print the effective configuration as JSON.
    ShowConfig {
        #[command(flatten)]
        common: Common,
    },
}

impl Cmd {
    fn common(&self) -> &Common {
        match self {
            Cmd::Tune { common, .. }
            | Cmd::Dataset { common }
            | Cmd::Train { common }
            | Cmd::Eval { common }
            | Cmd::Codegen { common, .. }
            | Cmd::Bench { common, .. }
            | Cmd::Pipeline { common, .. }
            | Cmd::ShowConfig { common } => common,
        }
    }
}

fn context(common: &Common) -> adaptgemm::Result<Context> {
    let mut cfg = match &common.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(out) = &common.out {
        cfg.out = out.clone();
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.apply_env()?;
    cfg.validate()?;
    let hash = cfg.hash();
    Ok(Context {
        cfg,
        hash,
        force: common.force,
    })
}

fn run(cmd: Cmd) -> anyhow::Result<()> {
    let ctx = context(cmd.common())?;
    match cmd {
        Cmd::Tune { jobs, shard, .. } => {
            let summary = commands::tune(&ctx, jobs as usize, shard)?;
            println!(
                "tuned {}, skipped {}, failed {}",
                summary.tuned,
                summary.skipped,
                summary.failed.len()
            );
            if !summary.failed.is_empty() {
                anyhow::bail!("{} shape(s) failed to tune: {}", summary.failed.len(), summary.failed.join("; "));
            }
        }
        Cmd::Dataset { .. } => {
            let d = commands::dataset(&ctx)?;
            println!("{} records, {} classes", d.len(), d.classes.len());
        }
        Cmd::Train { .. } => {
            let names = commands::train(&ctx)?;
            println!("trained {} models", names.len());
        }
        Cmd::Eval { .. } => {
            commands::eval(&ctx)?;
        }
        Cmd::Codegen { model, .. } => {
            for p in commands::codegen(&ctx, model.as_deref())? {
                println!("wrote {}", p.display());
            }
        }
        Cmd::Bench {
            model,
            table_mode,
            emit_gnuplot_data,
            ..
        } => {
            commands::bench(
                &ctx,
                &BenchOptions {
                    model: model.as_deref(),
                    table_mode,
                    gnuplot: emit_gnuplot_data,
                },
            )?;
        }
        Cmd::Pipeline {
            jobs,
            table_mode,
            emit_gnuplot_data,
            ..
        } => {
            std::fs::create_dir_all(&ctx.cfg.out).map_err(|e| Error::Io {
                path: ctx.cfg.out.clone(),
                source: e,
            })?;
            let cfg_json = serde_json::to_string_pretty(&ctx.cfg)? + "\n";
            std::fs::write(ctx.cfg.out.join("config.json"), cfg_json).map_err(|e| Error::Io {
                path: ctx.cfg.out.join("config.json"),
                source: e,
            })?;
            let summary = commands::tune(&ctx, jobs as usize, None)?;
            if !summary.failed.is_empty() {
                anyhow::bail!("{} shape(s) failed to tune: {}", summary.failed.len(), summary.failed.join("; "));
            }
            commands::dataset(&ctx)?;
            commands::train(&ctx)?;
            commands::eval(&ctx)?;
            commands::codegen(&ctx, None)?;
            commands::bench(
                &ctx,
                &BenchOptions {
                    model: None,
                    table_mode,
                    gnuplot: emit_gnuplot_data,
                },
            )?;
        }
        Cmd::ShowConfig { .. } => {
            println!("{}", serde_json::to_string_pretty(&ctx.cfg)?);
            println!("# config hash {}", ctx.hash);
            for name in CAPS_ENV {
                if let Ok(v) = std::env::var(name) {
                    println!("# {name}={v}");
                }
            }
        }
    }
    Ok(())
}

fn exit_code(e: &anyhow::Error) -> u8 {
    let Some(e) = e.downcast_ref::<Error>() else {
        return 3;
    };
    match e {
        Error::Argument(_) => 1,
        Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 2,
        e if e.is_data_error() => 2,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(if cli.quiet {
        "warn"
    } else {
        "info"
    }))
    .format_timestamp(None)
    .init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
