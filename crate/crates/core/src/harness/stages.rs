//! Pipeline stages and the resumable orchestrator.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use super::config::{BackendKind, ExperimentConfig};
use super::manifest::{Artifact, RunManifest, StageRecord, StageStatus};
use crate::brain::{BrainModel, BrainTrainer};
use crate::checkpoint::{write_atomic, Checkpoint};
use crate::data::{clip_dir, read_dataset, write_dataset};
use crate::decoupler::{write_log_csv, DecouplerTrainer};
use crate::encoders::EncoderSpec;
use crate::error::{Error, Result};
use crate::eval::{emit_report, write_report, EvalBackends, LemmaEmbedder, LexiconTagger, MetricReport, StubClassifier};
use crate::inference::{
    reconstruct_video, save_failure, save_reconstruction, ExternalT2V, InferenceConfig, Reconstructor,
    StubImageGenerator, StubT2V, T2VBackend,
};
use crate::rng::derive_seed;
use crate::tasks::{generate_synthetic_dataset, Dataset, DatasetSpec};

pub const PREPARE_DATA: &str = "prepare-data";
pub const TRAIN_BRAIN: &str = "train-brain";
pub const TRAIN_DECOUPLER: &str = "train-decoupler";
pub const INFER: &str = "infer";
pub const EVAL: &str = "eval";
pub const STAGES: [&str; 5] = [PREPARE_DATA, TRAIN_BRAIN, TRAIN_DECOUPLER, INFER, EVAL];

/// Paths inside a run directory.
pub mod layout {
    pub const CONFIG: &str = "config.toml";
    pub const DATA: &str = "data";
    pub const BRAIN: &str = "brain.ckpt";
    pub const DECOUPLER: &str = "decoupler.ckpt";
    pub const DECOUPLER_LOG: &str = "decoupler_log.csv";
    pub const RECON: &str = "recon";
    pub const REPORT_STEM: &str = "report";
    pub const REPORT_CSV: &str = "report.csv";
    pub const REPORT_TXT: &str = "report.txt";
    pub const REPORT_JSON: &str = "report.json";
}

fn partial_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".partial");
    out.with_file_name(name)
}

fn stamp(ckpt: &mut Checkpoint, config_hash: &str, encoders: &EncoderSpec) -> Result<()> {
    ckpt.set_meta("config_hash", config_hash)?;
    ckpt.set_meta("encoders", encoders)
}

/// Loads a partial checkpoint written under the same configuration.
fn load_partial(path: &Path, config_hash: &str) -> Option<Checkpoint> {
    let ckpt = Checkpoint::load(path).ok()?;
    match ckpt.meta::<String>("config_hash") {
        Ok(h) if h == config_hash => Some(ckpt),
        _ => {
            log::warn!("ignoring stale partial checkpoint {}", path.display());
            None
        }
    }
}

/// Encoders recorded in a checkpoint, else the configured ones.
pub fn checkpoint_encoders(ckpt: &Checkpoint, config: &ExperimentConfig) -> EncoderSpec {
    ckpt.meta("encoders").unwrap_or_else(|_| config.encoder_spec())
}

pub fn prepare_data(spec: &DatasetSpec, out: &Path) -> Result<Dataset> {
    spec.validate()?;
    let dataset = generate_synthetic_dataset(spec)?;
    write_dataset(&dataset, Some(spec), out)?;
    log::info!("wrote {} clips to {}", dataset.len(), out.display());
    Ok(dataset)
}

/// Trains the brain model, checkpointing after every epoch to
/// `<out>.partial` and resuming from it when present.
pub fn train_brain(config: &ExperimentConfig, data_dir: &Path, out: &Path) -> Result<Checkpoint> {
    let hash = config.hash()?;
    let encoders = config.encoder_spec();
    let encoder = encoders.clip()?;
    let dataset = read_dataset(data_dir)?;
    let partial = partial_path(out);
    let mut trainer = match load_partial(&partial, &hash) {
        Some(c) => {
            log::info!("resuming brain training from {}", partial.display());
            BrainTrainer::resume(&dataset, &encoder, &c)?
        }
        None => BrainTrainer::new(&dataset, &encoder, config.brain.clone(), config.seed)?,
    };
    let snapshot = |t: &BrainTrainer| -> Result<Checkpoint> {
        let mut c = t.checkpoint()?;
        stamp(&mut c, &hash, &encoders)?;
        Ok(c)
    };
    while trainer.epoch < config.brain.epochs {
        trainer.run_epoch()?;
        snapshot(&trainer)?.save(&partial)?;
    }
    let ckpt = snapshot(&trainer)?;
    ckpt.save(out)?;
    remove_if_exists(&partial)?;
    Ok(ckpt)
}

/// Trains the decoupler on top of a trained brain model; the log CSV is
/// rewritten after every epoch.
pub fn train_decoupler(
    config: &ExperimentConfig,
    data_dir: &Path,
    brain_ckpt: &Path,
    out: &Path,
    log_csv: Option<&Path>,
) -> Result<Checkpoint> {
    let hash = config.hash()?;
    let brain_ckpt = Checkpoint::load(brain_ckpt)?;
    let encoders = checkpoint_encoders(&brain_ckpt, config);
    let encoder = encoders.clip()?;
    let codec = encoders.codec()?;
    let dataset = read_dataset(data_dir)?;
    let partial = partial_path(out);
    let mut trainer = match load_partial(&partial, &hash) {
        Some(c) => {
            log::info!("resuming decoupler training from {}", partial.display());
            DecouplerTrainer::resume(&dataset, &encoder, &codec, &c)?
        }
        None => {
            let brain = BrainModel::from_checkpoint(&brain_ckpt)?;
            DecouplerTrainer::new(&dataset, brain, &encoder, &codec, config.decoupler.clone(), config.seed)?
        }
    };
    let snapshot = |t: &DecouplerTrainer| -> Result<Checkpoint> {
        let mut c = t.checkpoint()?;
        stamp(&mut c, &hash, &encoders)?;
        Ok(c)
    };
    while trainer.epoch < trainer.model.config.epochs {
        trainer.run_epoch()?;
        snapshot(&trainer)?.save(&partial)?;
        if let Some(p) = log_csv {
            write_log_csv(&trainer.log, p)?;
        }
    }
    let ckpt = snapshot(&trainer)?;
    ckpt.save(out)?;
    remove_if_exists(&partial)?;
    Ok(ckpt)
}

pub fn make_backend(kind: BackendKind, command: Option<&str>) -> Result<Box<dyn T2VBackend>> {
    Ok(match kind {
        BackendKind::Stub => Box::new(StubT2V::default()),
        BackendKind::External => Box::new(ExternalT2V::from_command(
            command.ok_or_else(|| Error::config("inference.backend_command", "the external backend needs a command"))?,
        )?),
    })
}

/// Generation seed of one clip, derived from the run seed.
pub fn sample_seed(seed: u64, clip_id: usize) -> u64 {
    let bytes = derive_seed(seed, &format!("infer/clip_{clip_id:04}"));
    u64::from_le_bytes(bytes[..8].try_into().expect("32-byte seed"))
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct InferSummary {
    pub completed: Vec<usize>,
    /// Clip id and error; the conditioning bundle is saved for each.
    pub failed: Vec<(usize, String)>,
}

/// Reconstructs every clip of the dataset into `out/clip_XXXX/`.
pub struct InferRequest<'a> {
    pub data_dir: &'a Path,
    pub brain_ckpt: Option<&'a Path>,
    pub decoupler_ckpt: &'a Path,
    pub backend: &'a dyn T2VBackend,
    pub seed: u64,
    pub config: InferenceConfig,
    /// Used when the checkpoint records no encoders.
    pub encoders: EncoderSpec,
    pub config_hash: Option<String>,
    pub out: &'a Path,
}

pub fn infer(req: &InferRequest) -> Result<InferSummary> {
    let dec = Checkpoint::load(req.decoupler_ckpt)?;
    let brain = req.brain_ckpt.map(Checkpoint::load).transpose()?;
    let encoders: EncoderSpec = dec.meta("encoders").unwrap_or(req.encoders);
    let encoder = encoders.clip()?;
    let codec = encoders.codec()?;
    let image_gen = StubImageGenerator;
    let models = Reconstructor::from_checkpoints(brain.as_ref(), &dec, &encoder, &codec, &image_gen, req.config)?;
    let hash = req
        .config_hash
        .clone()
        .or_else(|| dec.meta::<String>("config_hash").ok());
    let dataset = read_dataset(req.data_dir)?;
    fs::create_dir_all(req.out).map_err(|e| Error::io(req.out, e))?;
    let mut summary = InferSummary::default();
    for s in &dataset.samples {
        let id = s.fmri.clip_id;
        let seed = sample_seed(req.seed, id);
        let dir = clip_dir(req.out, id);
        match reconstruct_video(&s.fmri, &models, req.backend, seed) {
            Ok(rec) => {
                save_reconstruction(&rec, req.backend.name(), hash.as_deref(), &dir)?;
                summary.completed.push(id);
            }
            Err(e) => {
                log::error!("clip {id}: {e}");
                save_failure(id, seed, &e, req.backend.name(), hash.as_deref(), &dir)?;
                summary.failed.push((id, e.to_string()));
            }
        }
    }
    Ok(summary)
}

/// Scores reconstructions against ground truth and writes
/// `<out_stem>.{csv,txt,json}`.
pub fn evaluate(config: &ExperimentConfig, run_dir: &Path, gt_dir: &Path, out_stem: &Path) -> Result<MetricReport> {
    let classifier = StubClassifier::new(config.eval.classifier_labels, config.seed)?;
    let embedder = config.encoder_spec().clip()?;
    let backends = EvalBackends {
        classifier: &classifier,
        embedder: &embedder,
        tagger: &LexiconTagger,
        words: &LemmaEmbedder::default(),
    };
    let report = emit_report(run_dir, gt_dir, &backends, &config.eval_config())?;
    if let Some(parent) = out_stem.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    write_report(&report, out_stem)?;
    Ok(report)
}

fn remove_if_exists(path: &Path) -> Result<()> {
    let res = if path.is_dir() {
        fs::remove_dir_all(path)
    } else {
        fs::remove_file(path)
    };
    match res {
        Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(Error::io(path, e)),
        _ => Ok(()),
    }
}

/// Options of [`run_pipeline`].
pub struct PipelineOptions<'a> {
    pub backend: &'a dyn T2VBackend,
    /// Stops after the named stage completes.
    pub stop_after: Option<&'a str>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineOutcome {
    pub manifest: RunManifest,
    /// Stages executed by this call; the others were reused.
    pub ran: Vec<String>,
    pub report: Option<MetricReport>,
}

struct StageIo {
    inputs: &'static [&'static str],
    outputs: &'static [&'static str],
}

fn stage_io(name: &str) -> StageIo {
    use layout::*;
    match name {
        PREPARE_DATA => StageIo {
            inputs: &[CONFIG],
            outputs: &[DATA],
        },
        TRAIN_BRAIN => StageIo {
            inputs: &[CONFIG, DATA],
            outputs: &[BRAIN],
        },
        TRAIN_DECOUPLER => StageIo {
            inputs: &[CONFIG, DATA, BRAIN],
            outputs: &[DECOUPLER, DECOUPLER_LOG],
        },
        INFER => StageIo {
            inputs: &[CONFIG, DATA, DECOUPLER],
            outputs: &[RECON],
        },
        _ => StageIo {
            inputs: &[CONFIG, DATA, RECON],
            outputs: &[REPORT_CSV, REPORT_TXT, REPORT_JSON],
        },
    }
}

/// Runs prepare-data, train-brain, train-decoupler, infer and eval in
/// `run_dir`. Stages whose recorded inputs and outputs still verify are
/// reused; once one stage reruns, every later stage reruns too. The
/// manifest is rewritten atomically after each stage.
pub fn run_pipeline(config: &ExperimentConfig, run_dir: &Path, opts: &PipelineOptions) -> Result<PipelineOutcome> {
    config.validate()?;
    let hash = config.hash()?;
    fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;
    let mut manifest = match RunManifest::load(run_dir) {
        Ok(m) if m.config_hash != hash => {
            return Err(Error::config(
                "config",
                format!("{} holds a run with config hash {}", run_dir.display(), m.config_hash),
            ))
        }
        Ok(m) => m,
        Err(_) => RunManifest::new(hash.clone(), config.seed),
    };
    let config_path = run_dir.join(layout::CONFIG);
    let text = config.to_toml()?;
    if fs::read_to_string(&config_path).ok().as_deref() != Some(text.as_str()) {
        write_atomic(&config_path, text.as_bytes())?;
    }

    let mut ran = Vec::new();
    let mut report = None;
    let mut dirty = false;
    for (i, &name) in STAGES.iter().enumerate() {
        let reusable = !dirty && manifest.stage(name).is_some_and(|s| s.is_valid(run_dir));
        if reusable {
            log::info!("stage {name}: up to date");
        } else {
            dirty = true;
            manifest.invalidate(&STAGES[i..]);
            manifest.report = None;
            let io = stage_io(name);
            for out in io.outputs {
                remove_if_exists(&run_dir.join(out))?;
            }
            log::info!("stage {name}: running");
            let start = Instant::now();
            let result = run_stage(name, config, &hash, run_dir, opts.backend);
            let seconds = start.elapsed().as_secs_f64();
            let inputs = io
                .inputs
                .iter()
                .map(|p| Artifact::hash(run_dir, p))
                .collect::<Result<Vec<_>>>()?;
            match result {
                Ok(r) => {
                    let outputs = io
                        .outputs
                        .iter()
                        .map(|p| Artifact::hash(run_dir, p))
                        .collect::<Result<Vec<_>>>()?;
                    manifest.record(StageRecord {
                        name: name.to_string(),
                        status: StageStatus::Completed,
                        inputs,
                        outputs,
                        seconds,
                        error: None,
                    });
                    if r.is_some() {
                        report = r;
                    }
                    ran.push(name.to_string());
                }
                Err(e) => {
                    let outputs = io
                        .outputs
                        .iter()
                        .filter(|p| run_dir.join(p).exists())
                        .map(|p| Artifact::hash(run_dir, p))
                        .collect::<Result<Vec<_>>>()?;
                    manifest.record(StageRecord {
                        name: name.to_string(),
                        status: StageStatus::Failed,
                        inputs,
                        outputs,
                        seconds,
                        error: Some(e.to_string()),
                    });
                    manifest.save(run_dir)?;
                    return Err(e);
                }
            }
        }
        if name == EVAL && manifest.stage(EVAL).is_some() {
            manifest.report = Some(layout::REPORT_JSON.to_string());
        }
        manifest.save(run_dir)?;
        if opts.stop_after == Some(name) {
            break;
        }
    }
    if report.is_none() && manifest.report.is_some() {
        report = Some(crate::eval::read_report(&run_dir.join(layout::REPORT_JSON))?);
    }
    Ok(PipelineOutcome { manifest, ran, report })
}

fn run_stage(
    name: &str,
    config: &ExperimentConfig,
    hash: &str,
    run_dir: &Path,
    backend: &dyn T2VBackend,
) -> Result<Option<MetricReport>> {
    use layout::*;
    let p = |rel: &str| run_dir.join(rel);
    match name {
        PREPARE_DATA => {
            prepare_data(&config.data, &p(DATA))?;
        }
        TRAIN_BRAIN => {
            train_brain(config, &p(DATA), &p(BRAIN))?;
        }
        TRAIN_DECOUPLER => {
            train_decoupler(config, &p(DATA), &p(BRAIN), &p(DECOUPLER), Some(&p(DECOUPLER_LOG)))?;
        }
        INFER => {
            let summary = infer(&InferRequest {
                data_dir: &p(DATA),
                brain_ckpt: None,
                decoupler_ckpt: &p(DECOUPLER),
                backend,
                seed: config.seed,
                config: config.inference_config(),
                encoders: config.encoder_spec(),
                config_hash: Some(hash.to_string()),
                out: &p(RECON),
            })?;
            if let Some((id, msg)) = summary.failed.first() {
                return Err(Error::Backend(format!(
                    "{} of {} clips failed; first, clip {id}: {msg}",
                    summary.failed.len(),
                    summary.failed.len() + summary.completed.len()
                )));
            }
        }
        _ => {
            return evaluate(config, &p(RECON), &p(DATA), &p(REPORT_STEM)).map(Some);
        }
    }
    Ok(None)
}
