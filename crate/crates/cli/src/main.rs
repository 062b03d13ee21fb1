mod cmd;
mod config;
mod dataset;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ccrank_core::eval::PoolMode;
use ccrank_core::synth::{SynthConfig, SynthKind};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

/// Candidate-conditioned next-POI ranking.
///
/// Settings come from defaults, then `--config` (key = value lines), then
/// `CCRANK_<KEY>` environment variables, then flags.
#[derive(Parser, Debug)]
#[command(name = "ccrank", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Configuration file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse, filter and split a check-in file into a dataset cache.
    Ingest {
        /// Check-in file (`user,poi,timestamp,lat,lon` per line).
        data: Option<PathBuf>,
        /// Cache file to write.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Train a model and write a checkpoint directory.
    Train {
        /// Dataset cache or raw check-in file.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Checkpoint directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        k_negatives: Option<usize>,
        #[arg(long)]
        no_temporal_bias: bool,
        #[arg(long)]
        no_spatial_bias: bool,
        #[arg(long)]
        no_history_attn: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Rank held-out check-ins with a trained checkpoint.
    Eval {
        /// Checkpoint file (default: `<checkpoint_dir>/model.ckpt`).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Dataset cache or raw check-in file.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Report directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        pool: Option<PoolArg>,
        #[arg(long)]
        pool_size: Option<usize>,
        /// Comma-separated sampled pool sizes for an HR@10 curve.
        #[arg(long, value_delimiter = ',')]
        sweep: Vec<usize>,
        /// Write attention weights for the first evaluation instance.
        #[arg(long)]
        dump_attention: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Run gradient checks, bucket and distance oracles and masking checks.
    Verify {
        #[arg(long, hide = true)]
        corrupt_grad: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Generate a synthetic check-in file.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        kind: Option<KindArg>,
        #[arg(long)]
        users: Option<usize>,
        #[arg(long)]
        pois: Option<usize>,
        /// Check-ins per user.
        #[arg(long)]
        length: Option<usize>,
        /// Side of the square region POIs are scattered over, in degrees.
        #[arg(long)]
        span_deg: Option<f64>,
        /// Anchored corpora: radius around each anchor that POIs are drawn from.
        #[arg(long)]
        radius_km: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
enum PoolArg {
    Sampled,
    Full,
}

impl From<PoolArg> for PoolMode {
    fn from(p: PoolArg) -> Self {
        match p {
            PoolArg::Sampled => PoolMode::Sampled,
            PoolArg::Full => PoolMode::Full,
        }
    }
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
enum KindArg {
    Routine,
    Anchored,
}

impl From<KindArg> for SynthKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Routine => SynthKind::Routine,
            KindArg::Anchored => SynthKind::Anchored,
        }
    }
}

fn load_config(common: &Common) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        cfg.set_seed(seed);
    }
    Ok(cfg)
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Ingest { data, out, common } => {
            let mut cfg = load_config(&common)?;
            cfg.data = data.or(cfg.data);
            cfg.cache = out.or(cfg.cache);
            cmd::ingest::run(&cfg)
        }
        Command::Train {
            data,
            out,
            epochs,
            k_negatives,
            no_temporal_bias,
            no_spatial_bias,
            no_history_attn,
            common,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(d) = data {
                cfg.data = Some(d);
                cfg.cache = None;
            }
            if let Some(o) = out {
                cfg.checkpoint_dir = o;
            }
            if let Some(e) = epochs {
                cfg.train.max_epochs = e;
            }
            if let Some(k) = k_negatives {
                cfg.train.negatives = k;
            }
            cfg.model.use_temporal_bias &= !no_temporal_bias;
            cfg.model.use_spatial_bias &= !no_spatial_bias;
            cfg.model.use_history_attn &= !no_history_attn;
            cmd::train::run(&cfg)
        }
        Command::Eval {
            checkpoint,
            data,
            out,
            pool,
            pool_size,
            sweep,
            dump_attention,
            common,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(d) = data {
                cfg.data = Some(d);
                cfg.cache = None;
            }
            if let Some(o) = out {
                cfg.report_dir = o;
            }
            if let Some(p) = pool {
                cfg.pool.mode = p.into();
            }
            if let Some(s) = pool_size {
                cfg.pool.size = s;
            }
            let checkpoint = checkpoint.unwrap_or_else(|| cfg.checkpoint_dir.join(cmd::train::CHECKPOINT));
            cmd::eval::run(&cfg, &checkpoint, &sweep, dump_attention)
        }
        Command::Verify { corrupt_grad, common } => {
            let cfg = load_config(&common)?;
            cmd::verify::run(cfg.seed, corrupt_grad)
        }
        Command::Synth {
            out,
            kind,
            users,
            pois,
            length,
            span_deg,
            radius_km,
            common,
        } => {
            let cfg = load_config(&common)?;
            let d = SynthConfig::default();
            let synth = SynthConfig {
                kind: kind.map_or(d.kind, SynthKind::from),
                users: users.unwrap_or(d.users),
                pois: pois.unwrap_or(d.pois),
                length: length.unwrap_or(d.length),
                span_deg: span_deg.unwrap_or(d.span_deg),
                radius_km: radius_km.unwrap_or(d.radius_km),
                seed: cfg.seed,
            };
            cmd::synth::run(&synth, &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            let err = CliError::Usage(first.trim_start_matches("error: ").to_string());
            eprintln!("{}", err.line());
            return ExitCode::from(err.exit_code() as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.line());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
