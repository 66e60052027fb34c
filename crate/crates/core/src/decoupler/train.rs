//! Decoupler training with per-batch scheduled task weights.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::brain::{stack_rows, BrainModel};
use crate::checkpoint::Checkpoint;
use crate::encoders::{FrozenEncoderTargets, LatentCodec};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::losses::{bce_with_logits, cls_loss, loss_node, rec_loss, token_nll};
use crate::nn::{AdamW, Bound, OneCycle};
use crate::rng::{stream, Rng, RngState};
use crate::tasks::Dataset;
use crate::tensor::Tensor;
use crate::text::{Tokenizer, EOS};
use crate::video::FRAMES_PER_CLIP;

use super::model::{DecoderDims, Decoupler, DecouplerConfig};
use super::schedule::{total_loss, ProgressiveSchedule, Task};

/// Segmentation grids are this many times coarser than the frames.
pub const SEG_FACTOR: usize = 4;

/// Per-sample supervision for the four heads.
#[derive(Clone, Debug)]
pub struct DecouplerTargets {
    /// Per sample `[F, H·W]` in {0, 1}.
    pub masks: Vec<Tensor>,
    /// Per sample `[F, latent_len]`.
    pub latents: Vec<Tensor>,
    pub concepts: Vec<Vec<f64>>,
    pub tokens: Vec<Vec<u32>>,
    /// Text embedding of the key object's concept name; conditions the
    /// segmentation path.
    pub key_text: Vec<Vec<f64>>,
}

impl DecouplerTargets {
    pub fn compute(
        dataset: &Dataset,
        encoder: &dyn FrozenEncoderTargets,
        codec: &dyn LatentCodec,
        max_caption_len: usize,
    ) -> Result<Self> {
        let mut t = Self {
            masks: Vec::new(),
            latents: Vec::new(),
            concepts: Vec::new(),
            tokens: Vec::new(),
            key_text: Vec::new(),
        };
        for s in &dataset.samples {
            let mut m = Vec::new();
            for mask in &s.annotations.key_masks {
                m.extend(mask.as_f64());
            }
            t.masks.push(Tensor::new([FRAMES_PER_CLIP, m.len() / FRAMES_PER_CLIP], m)?);
            let mut l = Vec::new();
            for f in &s.clip.frames {
                l.extend(codec.encode(f)?);
            }
            t.latents.push(Tensor::new([FRAMES_PER_CLIP, l.len() / FRAMES_PER_CLIP], l)?);
            t.concepts.push(s.annotations.concepts.clone());
            let mut tok = s.annotations.caption_tokens.clone();
            tok.truncate(max_caption_len);
            t.tokens.push(tok);
            t.key_text.push(encoder.text_embed(&s.annotations.key_object)?);
        }
        Ok(t)
    }
}

pub fn decoder_dims(
    brain: &BrainModel,
    frame: (usize, usize),
    codec: &dyn LatentCodec,
    tokenizer: &Tokenizer,
) -> Result<DecoderDims> {
    let (h, w) = frame;
    let f = codec.factor();
    if h % f != 0 || w % f != 0 || f != 2 * SEG_FACTOR {
        return Err(Error::config(
            "latent",
            format!("frames of {h}x{w} need a latent factor of {} dividing both sides", 2 * SEG_FACTOR),
        ));
    }
    Ok(DecoderDims {
        tokens: brain.config.tokens,
        width: brain.config.width,
        text_tokens: brain.config.text_tokens,
        seg_h: h / SEG_FACTOR,
        seg_w: w / SEG_FACTOR,
        latent_h: h / f,
        latent_w: w / f,
        latent_channels: codec.channels(),
        vocab: tokenizer.vocab_size(),
    })
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub epoch: usize,
    pub batch: usize,
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub w4: f64,
    #[serde(rename = "L_seg")]
    pub l_seg: f64,
    #[serde(rename = "L_cls")]
    pub l_cls: f64,
    #[serde(rename = "L_txt")]
    pub l_txt: f64,
    #[serde(rename = "L_rec")]
    pub l_rec: f64,
    #[serde(rename = "L_total")]
    pub l_total: f64,
}

impl LogRow {
    pub fn losses(&self) -> [f64; 4] {
        [self.l_seg, self.l_cls, self.l_txt, self.l_rec]
    }
}

/// Epoch means of the four task losses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecouplerEpoch {
    pub epoch: usize,
    pub losses: [f64; 4],
}

pub struct DecouplerTrainer<'a> {
    pub brain: BrainModel,
    pub model: Decoupler,
    pub brain_opt: AdamW,
    pub opt: AdamW,
    pub schedule: ProgressiveSchedule,
    pub epoch: usize,
    pub log: Vec<LogRow>,
    pub history: Vec<DecouplerEpoch>,
    pub seed: u64,
    rng: Rng,
    dataset: &'a Dataset,
    targets: DecouplerTargets,
}

struct BatchGraph {
    g: Graph,
    brain_p: Bound,
    dec_p: Bound,
    root: Var,
    losses: [f64; 4],
    weights: [f64; 4],
    total: f64,
}

impl<'a> DecouplerTrainer<'a> {
    pub fn new(
        dataset: &'a Dataset,
        brain: BrainModel,
        encoder: &dyn FrozenEncoderTargets,
        codec: &dyn LatentCodec,
        config: DecouplerConfig,
        seed: u64,
    ) -> Result<Self> {
        if dataset.is_empty() {
            return Err(Error::domain("cannot train on an empty dataset"));
        }
        if dataset.voxel_dim() != brain.voxels {
            return Err(Error::shape("dataset voxel count differs from the brain model"));
        }
        let dims = decoder_dims(&brain, dataset.frame_size(), codec, &Tokenizer::standard())?;
        let model = Decoupler::init(config, dims, seed)?;
        let schedule = schedule_for(&model.config);
        Ok(Self {
            targets: DecouplerTargets::compute(dataset, encoder, codec, model.config.max_caption_len)?,
            brain_opt: AdamW::new(model.config.weight_decay),
            opt: AdamW::new(model.config.weight_decay),
            brain,
            model,
            schedule,
            epoch: 0,
            log: Vec::new(),
            history: Vec::new(),
            seed,
            rng: stream(seed, "shuffle/decoupler"),
            dataset,
        })
    }

    pub fn resume(
        dataset: &'a Dataset,
        encoder: &dyn FrozenEncoderTargets,
        codec: &dyn LatentCodec,
        ckpt: &Checkpoint,
    ) -> Result<Self> {
        let brain = BrainModel::from_checkpoint(ckpt)?;
        let model = decoupler_from_checkpoint(ckpt)?;
        let seed: u64 = ckpt.meta("seed")?;
        let mut brain_opt = AdamW::new(model.config.weight_decay);
        brain_opt.step = ckpt.meta("brain_opt_step")?;
        brain_opt.m = ckpt.params("brain_adam.m/");
        brain_opt.v = ckpt.params("brain_adam.v/");
        let mut opt = AdamW::new(model.config.weight_decay);
        opt.step = ckpt.meta("opt_step")?;
        opt.m = ckpt.params("adam.m/");
        opt.v = ckpt.params("adam.v/");
        let rng = match &ckpt.rng {
            Some(s) => s
                .restore()
                .ok_or_else(|| Error::Format("unreadable RNG state in checkpoint".into()))?,
            None => stream(seed, "shuffle/decoupler"),
        };
        Ok(Self {
            targets: DecouplerTargets::compute(dataset, encoder, codec, model.config.max_caption_len)?,
            schedule: schedule_for(&model.config),
            epoch: ckpt.meta("epoch")?,
            log: ckpt.meta("log")?,
            history: ckpt.meta("history")?,
            brain,
            model,
            brain_opt,
            opt,
            seed,
            rng,
            dataset,
        })
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.dataset.len().div_ceil(self.model.config.batch_size)
    }

    fn batch_graph(&self, idx: &[usize], epoch: usize, batch: usize) -> Result<BatchGraph> {
        let cfg = &self.model.config;
        let dims = self.model.dims;
        let raw = stack_rows(idx.iter().map(|&i| self.dataset.samples[i].fmri.voxels.as_slice()))?;
        let x = self.brain.normalize(&raw)?;
        let mut g = Graph::new();
        let brain_p = self.brain.params.bind(&mut g, |n| n.starts_with("prior."));
        let dec_p = self.model.params.bind(&mut g, |_| true);
        let xv = g.constant(x);
        let out = self.brain.forward(&mut g, &brain_p, xv)?;
        let b = idx.len();

        let mut weights = self.schedule.weights(epoch, batch, self.batches_per_epoch()).w;
        let mut nodes: Vec<(Var, f64)> = Vec::new();
        let mut losses = [0.0; 4];
        for task in Task::ALL {
            if !cfg.is_enabled(task) {
                weights[task.index()] = 0.0;
                continue;
            }
            let node = match task {
                Task::Seg => {
                    let cond = stack_rows(idx.iter().map(|&i| self.targets.key_text[i].as_slice()))?
                        .reshape([b * dims.text_tokens, dims.width])?;
                    let cond = g.constant(cond);
                    let logits = self.model.mask_logits(&mut g, &dec_p, out.e_vid, cond)?;
                    let gt = stack_rows(idx.iter().flat_map(|&i| {
                        let t = &self.targets.masks[i];
                        (0..FRAMES_PER_CLIP).map(move |f| t.row(f))
                    }))?;
                    let l = bce_with_logits(g.value(logits), &gt)?;
                    loss_node(&mut g, logits, l)?
                }
                Task::Cls => {
                    let logits = self.model.cls_logits(&mut g, &dec_p, out.e_vid)?;
                    let gt = stack_rows(idx.iter().map(|&i| self.targets.concepts[i].as_slice()))?;
                    let l = cls_loss(g.value(logits), &gt)?;
                    loss_node(&mut g, logits, l)?
                }
                Task::Txt => {
                    let mut parts = Vec::with_capacity(b);
                    for (k, &i) in idx.iter().enumerate() {
                        let row = g.gather(out.e_txt, &[k])?;
                        let tokens = &self.targets.tokens[i];
                        let logits = self.model.txt_logits(&mut g, &dec_p, row, tokens)?;
                        let targets: Vec<u32> = tokens.iter().copied().chain([EOS]).collect();
                        let l = token_nll(g.value(logits), &targets)?;
                        parts.push((loss_node(&mut g, logits, l)?, 1.0 / b as f64));
                    }
                    g.combine(&parts)
                }
                Task::Rec => {
                    let cond = g.reshape(out.e_txt, [b * dims.text_tokens, dims.width])?;
                    let pred = self.model.rec_latents(&mut g, &dec_p, out.e_vid, cond)?;
                    let gt = stack_rows(idx.iter().flat_map(|&i| {
                        let t = &self.targets.latents[i];
                        (0..FRAMES_PER_CLIP).map(move |f| t.row(f))
                    }))?;
                    let l = rec_loss(g.value(pred), &gt)?;
                    loss_node(&mut g, pred, l)?
                }
            };
            losses[task.index()] = g.value(node).item();
            nodes.push((node, weights[task.index()]));
        }
        let total = total_loss(losses, weights).map_err(|e| Error::NonFinite {
            epoch,
            batch,
            detail: e.to_string(),
        })?;
        let root = g.combine(&nodes);
        Ok(BatchGraph {
            g,
            brain_p,
            dec_p,
            root,
            losses,
            weights,
            total,
        })
    }

    /// Task losses of one batch under current parameters, without updating.
    pub fn batch_losses(&self, idx: &[usize]) -> Result<[f64; 4]> {
        Ok(self.batch_graph(idx, self.epoch, 0)?.losses)
    }

    pub fn run_epoch(&mut self) -> Result<DecouplerEpoch> {
        let cfg = self.model.config.clone();
        let mut order: Vec<usize> = (0..self.dataset.len()).collect();
        order.shuffle(&mut self.rng);
        let batches: Vec<Vec<usize>> = order.chunks(cfg.batch_size).map(<[usize]>::to_vec).collect();
        let sched = OneCycle::new(cfg.lr, cfg.epochs * batches.len());
        let mut sums = [0.0; 4];
        let mut rows = Vec::with_capacity(batches.len());
        for (bi, idx) in batches.iter().enumerate() {
            let bg = self.batch_graph(idx, self.epoch, bi)?;
            let grads = bg.g.backward(bg.root);
            let lr = sched.lr(self.opt.step as usize);
            self.opt.update(&mut self.model.params, &bg.dec_p, &grads, lr, |_| 1.0)?;
            self.brain_opt
                .update(&mut self.brain.params, &bg.brain_p, &grads, lr * cfg.prior_lr_scale, |_| 1.0)?;
            for k in 0..4 {
                sums[k] += bg.losses[k];
            }
            rows.push(LogRow {
                epoch: self.epoch,
                batch: bi,
                w1: bg.weights[0],
                w2: bg.weights[1],
                w3: bg.weights[2],
                w4: bg.weights[3],
                l_seg: bg.losses[0],
                l_cls: bg.losses[1],
                l_txt: bg.losses[2],
                l_rec: bg.losses[3],
                l_total: bg.total,
            });
        }
        let n = batches.len() as f64;
        let rec = DecouplerEpoch {
            epoch: self.epoch,
            losses: sums.map(|s| s / n),
        };
        log::info!(
            "decoupler epoch {}: seg {:.4} cls {:.4} txt {:.4} rec {:.4}",
            rec.epoch,
            rec.losses[0],
            rec.losses[1],
            rec.losses[2],
            rec.losses[3]
        );
        self.log.extend(rows);
        self.history.push(rec.clone());
        self.epoch += 1;
        Ok(rec)
    }

    /// Runs the remaining epochs. With `save_to`, a checkpoint is written
    /// after every epoch, so a failure leaves the last good one in place.
    pub fn train(&mut self, save_to: Option<&Path>) -> Result<()> {
        while self.epoch < self.model.config.epochs {
            self.run_epoch()?;
            if let Some(path) = save_to {
                self.checkpoint()?.save(path)?;
            }
        }
        Ok(())
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let mut c = Checkpoint::new();
        c.set_meta("kind", "decoupler")?;
        c.set_meta("seed", self.seed)?;
        c.set_meta("epoch", self.epoch)?;
        c.set_meta("opt_step", self.opt.step)?;
        c.set_meta("brain_opt_step", self.brain_opt.step)?;
        c.set_meta("log", &self.log)?;
        c.set_meta("history", &self.history)?;
        c.set_meta("decoupler_config", &self.model.config)?;
        c.set_meta("decoder_dims", self.model.dims)?;
        self.brain.to_checkpoint(&mut c)?;
        c.insert_params("dec/", &self.model.params);
        c.insert_params("adam.m/", &self.opt.m);
        c.insert_params("adam.v/", &self.opt.v);
        c.insert_params("brain_adam.m/", &self.brain_opt.m);
        c.insert_params("brain_adam.v/", &self.brain_opt.v);
        c.rng = Some(RngState::capture(&self.rng));
        Ok(c)
    }
}

fn schedule_for(cfg: &DecouplerConfig) -> ProgressiveSchedule {
    match cfg.period_starts {
        Some(starts) => ProgressiveSchedule {
            period_epochs: cfg.period_epochs,
            period_starts: starts,
        },
        None => ProgressiveSchedule::staggered(cfg.period_epochs),
    }
}

pub fn decoupler_from_checkpoint(ckpt: &Checkpoint) -> Result<Decoupler> {
    let params = ckpt.params("dec/");
    if params.is_empty() {
        return Err(Error::State("checkpoint holds no decoupler parameters".into()));
    }
    Ok(Decoupler {
        config: ckpt.meta("decoupler_config")?,
        dims: ckpt.meta("decoder_dims")?,
        params,
    })
}

/// Writes log rows as CSV with the header
/// `epoch,batch,w1,w2,w3,w4,L_seg,L_cls,L_txt,L_rec,L_total`.
pub fn write_log_csv(rows: &[LogRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_log_csv(path: &Path) -> Result<Vec<LogRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::Format(e.to_string())))
        .collect()
}
