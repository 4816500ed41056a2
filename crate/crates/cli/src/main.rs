use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use mcrn::checkpoint::Checkpoint;
use mcrn::config::ExperimentConfig;
use mcrn::datasim::export_flat;
use mcrn::experiment::Experiment;
use mcrn::sweep::{ablate, sweep, to_csv, AblationPreset, SweepParam};

#[derive(Parser)]
#[command(name = "mcrn", version, about = "Multi-centroid contrastive domain adaptation on synthetic re-ID data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model, writing one JSON metrics object per epoch.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for metrics.jsonl, config.toml and checkpoint.bin.
        /// Metrics go to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue from a checkpoint instead of starting fresh.
        #[arg(long, conflicts_with_all = ["config", "seed"])]
        resume: Option<PathBuf>,
        /// Stop after this many epochs (counted from the start of training).
        #[arg(long)]
        stop_after: Option<usize>,
        /// Include wall-clock seconds in the metrics.
        #[arg(long)]
        wall_clock: bool,
    },
    /// One run per value of K or alpha; prints a CSV table.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        param: SweepParam,
        #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
        values: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Runs the variants of a comparison preset and prints median final metrics.
    Ablate {
        /// table2 (selection strategies), table3 (interpolation methods),
        /// dscl (loss scope) or components.
        #[arg(long)]
        preset: AblationPreset,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 5)]
        seeds: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluates the encoder stored in a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Writes the generated dataset in the flat-text import format.
    ExportData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut config = match path {
        Some(p) => ExperimentConfig::from_file(p).with_context(|| format!("reading {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = seed {
        config.seed = s;
    }
    Ok(config)
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn run(
    mut exp: Experiment,
    out: Option<&Path>,
    stop_after: Option<usize>,
    wall_clock: bool,
) -> Result<()> {
    let mut sink: Box<dyn Write> = match out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            fs::write(dir.join("config.toml"), exp.config().to_toml_string())?;
            let file = fs::OpenOptions::new()
                .create(true)
                .append(exp.epochs_done() > 0)
                .write(true)
                .truncate(exp.epochs_done() == 0)
                .open(dir.join("metrics.jsonl"))?;
            Box::new(BufWriter::new(file))
        }
        None => Box::new(io::stdout().lock()),
    };
    let last = stop_after.unwrap_or(usize::MAX).min(exp.config().training.epochs);
    if exp.epochs_done() == 0 {
        writeln!(sink, "{}", exp.snapshot_record()?.to_json_line(wall_clock))?;
    }
    while exp.epochs_done() < last {
        let record = exp.run_epoch()?;
        log::info!(
            "epoch {}: loss {:.4} mAP {:.4} R1 {:.4}",
            record.epoch,
            record.mean_loss.unwrap_or(f64::NAN),
            record.map,
            record.cmc1
        );
        writeln!(sink, "{}", record.to_json_line(wall_clock))?;
        sink.flush()?;
        if let Some(dir) = out {
            exp.checkpoint().save(&dir.join("checkpoint.bin"))?;
        }
    }
    sink.flush()?;
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            seed,
            out,
            resume,
            stop_after,
            wall_clock,
        } => {
            let exp = match resume {
                Some(path) => {
                    let ck = Checkpoint::load(&path).with_context(|| format!("loading {}", path.display()))?;
                    log::info!("resuming at epoch {} (config hash {:016x})", ck.epochs_done, ck.config_hash);
                    Experiment::resume(ck)?
                }
                None => Experiment::new(load_config(config.as_deref(), seed)?)?,
            };
            run(exp, out.as_deref(), stop_after, wall_clock)?;
        }
        Command::Sweep {
            config,
            seed,
            param,
            values,
            out,
        } => {
            let base = load_config(config.as_deref(), seed)?;
            emit(out.as_deref(), &to_csv(&sweep(&base, param, &values)?))?;
        }
        Command::Ablate {
            preset,
            config,
            seed,
            seeds,
            out,
        } => {
            let base = load_config(config.as_deref(), seed)?;
            emit(out.as_deref(), &to_csv(&ablate(&base, preset, seeds)?))?;
        }
        Command::Eval { checkpoint } => {
            let ck = Checkpoint::load(&checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
            println!("config_hash = {:016x}", ck.config_hash);
            let exp = Experiment::resume(ck)?;
            println!("{}", exp.snapshot_record()?.to_json_line(false));
        }
        Command::ExportData { config, seed, out } => {
            let config = load_config(config.as_deref(), seed)?;
            if config.data.import.is_some() {
                bail!("the config imports its data already");
            }
            let exp = Experiment::new(config)?;
            let file = BufWriter::new(File::create(&out)?);
            export_flat(exp.source_data(), exp.target_data(), file)?;
        }
    }
    Ok(())
}
