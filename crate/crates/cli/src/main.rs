use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use neurons::eval::{format_table, read_report};
use neurons::harness::{
    self, layout, BackendKind, ExperimentConfig, InferRequest, PipelineOptions, RunManifest, BACKEND_CMD_ENV,
    BACKEND_ENV,
};
use neurons::tasks::DatasetSpec;

const EXIT_CONFIG: u8 = 2;
const EXIT_STAGE: u8 = 3;

#[derive(Parser)]
#[command(name = "neurons", version, about = "Decoupled fMRI-to-video reconstruction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset.
    PrepareData {
        /// Dataset spec (TOML); its `seed` is honored.
        #[arg(long, conflicts_with = "config")]
        spec: Option<PathBuf>,
        /// Experiment config; its `[data]` section and root seed are used.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pretrain the brain model.
    TrainBrain {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the decoupler heads on a pretrained brain model.
    TrainDecoupler {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        brain: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Training log; defaults to `<out>.log.csv`.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Reconstruct videos for every clip of a dataset.
    Infer {
        #[arg(long)]
        data: PathBuf,
        /// Only checked against the brain stored in the decoupler checkpoint.
        #[arg(long)]
        brain: Option<PathBuf>,
        #[arg(long)]
        decoupler: PathBuf,
        /// `stub` or `external`; overrides the environment and the config.
        #[arg(long)]
        backend: Option<String>,
        /// Command of the external backend.
        #[arg(long)]
        backend_cmd: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score reconstructions against ground truth.
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Report path; `.csv`, `.txt` and `.json` siblings are written.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Trials per N-way test.
        #[arg(long)]
        repeats: Option<usize>,
    },
    /// Run every stage into one directory, reusing completed stages.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Stop after this stage.
        #[arg(long, value_parser = harness::STAGES)]
        stop_after: Option<String>,
    },
    /// Print the metric table of a finished run.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<ExperimentConfig> {
    let config = match path {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    Ok(match seed {
        Some(s) => config.with_seed(s),
        None => config,
    })
}

fn env(name: &str) -> Option<String> {
    std::env::var(name).ok()
}

fn backend_for(config: &ExperimentConfig, flag: Option<&str>, flag_cmd: Option<&str>) -> Result<(BackendKind, Option<String>)> {
    let kind = flag.map(String::from).or_else(|| env(BACKEND_ENV));
    let cmd = flag_cmd.map(String::from).or_else(|| env(BACKEND_CMD_ENV));
    Ok(config.resolved_backend(kind.as_deref(), cmd.as_deref())?)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::PrepareData { spec, config, seed, out } => {
            let mut spec = match (spec, config) {
                (Some(p), _) => {
                    let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
                    toml::from_str::<DatasetSpec>(&text)
                        .map_err(|e| neurons::Error::config("spec", e.message().to_string()))
                        .with_context(|| format!("parsing {}", p.display()))?
                }
                (None, c) => load_config(c.as_deref(), None)?.data,
            };
            if let Some(s) = seed {
                spec.seed = s;
            }
            let dataset = harness::prepare_data(&spec, &out)?;
            println!("wrote {} clips to {}", dataset.len(), out.display());
        }
        Command::TrainBrain { data, config, seed, out } => {
            let config = load_config(config.as_deref(), seed)?;
            let ckpt = harness::train_brain(&config, &data, &out)?;
            let history: Vec<neurons::brain::BrainEpoch> = ckpt.meta("history")?;
            if let (Some(a), Some(b)) = (history.first(), history.last()) {
                println!("brain loss {:.4} -> {:.4} over {} epochs", a.total, b.total, history.len());
            }
            println!("saved {}", out.display());
        }
        Command::TrainDecoupler {
            data,
            brain,
            config,
            seed,
            out,
            log,
        } => {
            let config = load_config(config.as_deref(), seed)?;
            let log = log.unwrap_or_else(|| {
                let mut name = out.file_name().unwrap_or_default().to_os_string();
                name.push(".log.csv");
                out.with_file_name(name)
            });
            harness::train_decoupler(&config, &data, &brain, &out, Some(&log))?;
            println!("saved {} and {}", out.display(), log.display());
        }
        Command::Infer {
            data,
            brain,
            decoupler,
            backend,
            backend_cmd,
            config,
            seed,
            out,
        } => {
            let config = load_config(config.as_deref(), seed)?;
            let (kind, cmd) = backend_for(&config, backend.as_deref(), backend_cmd.as_deref())?;
            let backend = harness::make_backend(kind, cmd.as_deref())?;
            let summary = harness::infer(&InferRequest {
                data_dir: &data,
                brain_ckpt: brain.as_deref(),
                decoupler_ckpt: &decoupler,
                backend: backend.as_ref(),
                seed: config.seed,
                config: config.inference_config(),
                encoders: config.encoder_spec(),
                config_hash: None,
                out: &out,
            })?;
            println!("reconstructed {} clips into {}", summary.completed.len(), out.display());
            if !summary.failed.is_empty() {
                for (id, msg) in &summary.failed {
                    eprintln!("clip {id}: {msg}");
                }
                bail!(StageFailure(format!("{} clips failed", summary.failed.len())));
            }
        }
        Command::Eval {
            run,
            gt,
            out,
            config,
            seed,
            repeats,
        } => {
            let mut config = load_config(config.as_deref(), seed)?;
            if let Some(r) = repeats {
                config.eval.repeats = r;
            }
            config.validate()?;
            let report = harness::evaluate(&config, &run, &gt, &out)?;
            print!("{}", format_table(&report));
        }
        Command::Run {
            config,
            seed,
            out,
            stop_after,
        } => {
            let config = load_config(config.as_deref(), seed)?;
            let (kind, cmd) = backend_for(&config, None, None)?;
            let backend = harness::make_backend(kind, cmd.as_deref())?;
            let outcome = harness::run_pipeline(
                &config,
                &out,
                &PipelineOptions {
                    backend: backend.as_ref(),
                    stop_after: stop_after.as_deref(),
                },
            )?;
            for s in &outcome.manifest.stages {
                let how = if outcome.ran.contains(&s.name) { "ran" } else { "reused" };
                println!("{:<16} {how:<7} {:>8.2}s", s.name, s.seconds);
            }
            if let Some(r) = &outcome.report {
                print!("{}", format_table(r));
            }
        }
        Command::Report { run } => {
            if let Ok(m) = RunManifest::load(&run) {
                m.verify(&run)?;
            }
            let report = read_report(&run.join(layout::REPORT_JSON))?;
            print!("{}", format_table(&report));
        }
    }
    Ok(())
}

#[derive(Debug)]
struct StageFailure(String);

impl std::fmt::Display for StageFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for StageFailure {}

fn exit_code(err: &anyhow::Error) -> u8 {
    let is_config = err
        .chain()
        .any(|e| matches!(e.downcast_ref::<neurons::Error>(), Some(neurons::Error::Config { .. })));
    if is_config {
        EXIT_CONFIG
    } else {
        EXIT_STAGE
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
