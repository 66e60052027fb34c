//! fMRI → video/text embeddings, pre-aligned to frozen encoder targets.
//!
//! ridge map → residual MLP → backbone head gives `e_x`; a residual prior
//! MLP maps it to the keyframe image embedding `e_img`; a motion projection
//! with per-frame weights and tokens lifts `e_img` to `F` frame embeddings
//! `e_vid`; the frame mean goes through a linear text head to `e_txt`.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::encoders::FrozenEncoderTargets;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::losses::{contrastive_node, loss_node, mixco_mix, prior_loss, MixState};
use crate::nn::{init_residual_block, linear, residual_block, AdamW, Bound, OneCycle, ParamStore};
use crate::rng::{stream, Rng, RngState};
use crate::tasks::Dataset;
use crate::tensor::Tensor;
use crate::video::FRAMES_PER_CLIP;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BrainConfig {
    pub hidden: usize,
    /// `N`, tokens per embedding.
    pub tokens: usize,
    /// `C`, channels per token.
    pub width: usize,
    /// `N_t`, tokens of the text embedding.
    pub text_tokens: usize,
    pub mlp_blocks: usize,
    pub prior_blocks: usize,
    pub tau: f64,
    pub mixco_alpha: f64,
    /// Share of epochs (from the start) trained with MixCo; the rest use
    /// plain contrastive targets.
    pub mixco_fraction: f64,
    /// Explicit L2 penalty on the ridge weights.
    pub ridge_l2: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
}

impl Default for BrainConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            tokens: 4,
            width: 32,
            text_tokens: 4,
            mlp_blocks: 2,
            prior_blocks: 1,
            tau: 0.006,
            mixco_alpha: 0.15,
            mixco_fraction: 0.33,
            ridge_l2: 1e-4,
            epochs: 60,
            batch_size: 4,
            lr: 3e-3,
            weight_decay: 1e-2,
        }
    }
}

impl BrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("hidden", self.hidden),
            ("tokens", self.tokens),
            ("width", self.width),
            ("text_tokens", self.text_tokens),
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
        ] {
            if v == 0 {
                return Err(Error::config(format!("brain.{field}"), "must be positive"));
            }
        }
        if !(self.tau > 0.0) {
            return Err(Error::config("brain.tau", "must be positive"));
        }
        if !(self.mixco_alpha > 0.0) {
            return Err(Error::config("brain.mixco_alpha", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.mixco_fraction) {
            return Err(Error::config("brain.mixco_fraction", "must lie in [0, 1]"));
        }
        if !(self.lr > 0.0) || self.weight_decay < 0.0 || self.ridge_l2 < 0.0 {
            return Err(Error::config("brain.lr", "learning rate must be positive, penalties non-negative"));
        }
        Ok(())
    }

    pub fn embed_dim(&self) -> usize {
        self.tokens * self.width
    }

    pub fn text_dim(&self) -> usize {
        self.text_tokens * self.width
    }

    pub fn mixco_epochs(&self) -> usize {
        (self.mixco_fraction * self.epochs as f64).ceil() as usize
    }
}

/// Embeddings for a batch of `B` samples.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingBundle {
    /// `[B, N, C]`
    pub e_img: Tensor,
    /// `[B, F, N, C]`
    pub e_vid: Tensor,
    /// `[B, N_t, C]`
    pub e_txt: Tensor,
}

/// Graph handles of one forward pass. `e_vid` rows are ordered `b·F + f`.
#[derive(Clone, Copy, Debug)]
pub struct BrainVars {
    pub e_x: Var,
    pub e_img: Var,
    pub e_vid: Var,
    pub e_txt: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BrainModel {
    pub config: BrainConfig,
    pub voxels: usize,
    pub params: ParamStore,
}

/// Affine ridge map `x·W + b` using `ridge.w`, `ridge.b`.
pub fn ridge_map(params: &ParamStore, x: &Tensor) -> Result<Tensor> {
    let w = params.get("ridge.w")?;
    let b = params.get("ridge.b")?;
    let (_, v) = x.dims2()?;
    if w.shape()[0] != v {
        return Err(Error::shape(format!("ridge map expects {} voxels, got {v}", w.shape()[0])));
    }
    let mut y = x.matmul(w)?;
    let n = b.len();
    for (i, o) in y.data_mut().iter_mut().enumerate() {
        *o += b.data()[i % n];
    }
    Ok(y)
}

impl BrainModel {
    pub fn init(config: BrainConfig, voxels: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if voxels == 0 {
            return Err(Error::config("voxels", "must be positive"));
        }
        let mut rng = stream(seed, "init/brain");
        let mut p = ParamStore::new();
        let (h, d, c) = (config.hidden, config.embed_dim(), config.width);
        p.insert("norm.mean", Tensor::zeros([voxels]));
        p.insert("norm.std", Tensor::ones([voxels]));
        p.init_linear("ridge", voxels, h, &mut rng);
        for i in 0..config.mlp_blocks {
            init_residual_block(&mut p, &format!("mlp.{i}"), h, &mut rng);
        }
        p.init_linear("backbone", h, d, &mut rng);
        for i in 0..config.prior_blocks {
            init_residual_block(&mut p, &format!("prior.{i}"), d, &mut rng);
        }
        for f in 0..FRAMES_PER_CLIP {
            let noise = Tensor::randn([c, c], 0.02, &mut rng);
            let w = Tensor::eye(c, c).zip_map(&noise, |a, b| a + b)?;
            p.insert(format!("motion.{f}.w"), w);
            p.insert(format!("motion.{f}.b"), Tensor::randn([d], 0.02, &mut rng));
        }
        p.init_linear("text", d, config.text_dim(), &mut rng);
        Ok(Self {
            config,
            voxels,
            params: p,
        })
    }

    /// Sets the per-voxel z-scoring statistics.
    pub fn fit_normalization(&mut self, rows: &[&[f64]]) -> Result<()> {
        if rows.is_empty() {
            return Err(Error::domain("cannot fit normalization on zero samples"));
        }
        let v = self.voxels;
        if rows.iter().any(|r| r.len() != v) {
            return Err(Error::shape(format!("voxel vectors must have length {v}")));
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; v];
        for r in rows {
            mean.iter_mut().zip(r.iter()).for_each(|(m, x)| *m += x / n);
        }
        let mut var = vec![0.0; v];
        for r in rows {
            var.iter_mut()
                .zip(r.iter().zip(&mean))
                .for_each(|(s, (x, m))| *s += (x - m) * (x - m) / n);
        }
        let std = var.into_iter().map(|s| s.sqrt().max(1e-6)).collect();
        self.params.insert("norm.mean", Tensor::new([v], mean)?);
        self.params.insert("norm.std", Tensor::new([v], std)?);
        Ok(())
    }

    /// Z-scores raw voxel rows.
    pub fn normalize(&self, x: &Tensor) -> Result<Tensor> {
        let (b, v) = x.dims2()?;
        if v != self.voxels {
            return Err(Error::shape(format!("expected {} voxels, got {v}", self.voxels)));
        }
        let mean = self.params.get("norm.mean")?;
        let std = self.params.get("norm.std")?;
        Tensor::new(
            [b, v],
            x.data()
                .iter()
                .enumerate()
                .map(|(i, x)| (x - mean.data()[i % v]) / std.data()[i % v])
                .collect(),
        )
    }

    /// Forward pass on z-scored voxels `[B, V]`.
    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<BrainVars> {
        let cfg = &self.config;
        let (b, v) = g.value(x).dims2()?;
        if v != self.voxels {
            return Err(Error::shape(format!("expected {} voxels, got {v}", self.voxels)));
        }
        let mut h = linear(g, p, "ridge", x)?;
        for i in 0..cfg.mlp_blocks {
            h = residual_block(g, p, &format!("mlp.{i}"), h)?;
        }
        let e_x = linear(g, p, "backbone", h)?;
        let mut e_img = e_x;
        for i in 0..cfg.prior_blocks {
            e_img = residual_block(g, p, &format!("prior.{i}"), e_img)?;
        }

        let (n, c, d) = (cfg.tokens, cfg.width, cfg.embed_dim());
        let tokens = g.reshape(e_img, [b * n, c])?;
        let mut frames = Vec::with_capacity(FRAMES_PER_CLIP);
        for f in 0..FRAMES_PER_CLIP {
            let w = p.get(&format!("motion.{f}.w"))?;
            let y = g.matmul(tokens, w)?;
            let y = g.reshape(y, [b, d])?;
            let pos = p.get(&format!("motion.{f}.b"))?;
            frames.push(g.add_bias(y, pos)?);
        }
        let stacked = g.concat(&frames)?;
        let order: Vec<usize> = (0..b * FRAMES_PER_CLIP)
            .map(|r| (r % FRAMES_PER_CLIP) * b + r / FRAMES_PER_CLIP)
            .collect();
        let e_vid = g.gather(stacked, &order)?;
        let pooled = g.group_mean(e_vid, FRAMES_PER_CLIP)?;
        let e_txt = linear(g, p, "text", pooled)?;
        Ok(BrainVars {
            e_x,
            e_img,
            e_vid,
            e_txt,
        })
    }

    /// Inference on raw voxel rows.
    pub fn embed(&self, voxels: &Tensor) -> Result<EmbeddingBundle> {
        let x = self.normalize(voxels)?;
        let b = x.rows();
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, |_| false);
        let xv = g.constant(x);
        let out = self.forward(&mut g, &p, xv)?;
        let (n, c, nt) = (self.config.tokens, self.config.width, self.config.text_tokens);
        Ok(EmbeddingBundle {
            e_img: g.value(out.e_img).clone().reshape([b, n, c])?,
            e_vid: g.value(out.e_vid).clone().reshape([b, FRAMES_PER_CLIP, n, c])?,
            e_txt: g.value(out.e_txt).clone().reshape([b, nt, c])?,
        })
    }

    pub fn to_checkpoint(&self, ckpt: &mut Checkpoint) -> Result<()> {
        ckpt.set_meta("brain_config", &self.config)?;
        ckpt.set_meta("voxels", self.voxels)?;
        ckpt.insert_params("brain/", &self.params);
        Ok(())
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let config: BrainConfig = ckpt.meta("brain_config")?;
        let voxels: usize = ckpt.meta("voxels")?;
        let params = ckpt.params("brain/");
        if params.is_empty() {
            return Err(Error::State("checkpoint holds no brain parameters".into()));
        }
        Ok(Self { config, voxels, params })
    }
}

/// Frozen-encoder targets for every sample of a dataset.
#[derive(Clone, Debug)]
pub struct BrainTargets {
    /// Per sample, `[F, N·C]`.
    pub video: Vec<Tensor>,
    /// Per sample, the keyframe (middle frame) embedding.
    pub keyframe: Vec<Vec<f64>>,
    /// Per sample, the caption embedding.
    pub text: Vec<Vec<f64>>,
}

impl BrainTargets {
    pub fn compute(dataset: &Dataset, encoder: &dyn FrozenEncoderTargets) -> Result<Self> {
        let mut video = Vec::new();
        let mut keyframe = Vec::new();
        let mut text = Vec::new();
        for s in &dataset.samples {
            let v = encoder.video_embed(&s.clip)?;
            keyframe.push(v.row(s.clip.middle_index()).to_vec());
            video.push(v);
            text.push(encoder.text_embed(&s.annotations.caption_text)?);
        }
        Ok(Self { video, keyframe, text })
    }
}

/// Stacks selected per-sample vectors into `[len, d]`.
pub fn stack_rows<'a>(rows: impl IntoIterator<Item = &'a [f64]>) -> Result<Tensor> {
    let mut data = Vec::new();
    let mut n = 0;
    let mut d = None;
    for r in rows {
        if *d.get_or_insert(r.len()) != r.len() {
            return Err(Error::shape("rows differ in length"));
        }
        data.extend_from_slice(r);
        n += 1;
    }
    Tensor::new([n, d.unwrap_or(0)], data)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BrainEpoch {
    pub epoch: usize,
    pub clip_v: f64,
    pub clip_t: f64,
    pub prior: f64,
    pub total: f64,
}

/// Batch losses, returned by [`BrainTrainer::batch_losses`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BrainLosses {
    pub clip_v: f64,
    pub clip_t: f64,
    pub prior: f64,
}

impl BrainLosses {
    pub fn total(&self) -> f64 {
        self.clip_v + self.clip_t + self.prior
    }
}

/// Optimizer, schedule and RNG around a [`BrainModel`].
pub struct BrainTrainer<'a> {
    pub model: BrainModel,
    pub opt: AdamW,
    pub epoch: usize,
    pub history: Vec<BrainEpoch>,
    pub seed: u64,
    rng: Rng,
    dataset: &'a Dataset,
    targets: BrainTargets,
}

impl<'a> BrainTrainer<'a> {
    pub fn new(dataset: &'a Dataset, encoder: &dyn FrozenEncoderTargets, config: BrainConfig, seed: u64) -> Result<Self> {
        if dataset.is_empty() {
            return Err(Error::domain("cannot train on an empty dataset"));
        }
        check_encoder(&config, encoder)?;
        let mut model = BrainModel::init(config, dataset.voxel_dim(), seed)?;
        let rows: Vec<&[f64]> = dataset.samples.iter().map(|s| s.fmri.voxels.as_slice()).collect();
        model.fit_normalization(&rows)?;
        let opt = AdamW::new(model.config.weight_decay);
        Ok(Self {
            model,
            opt,
            epoch: 0,
            history: Vec::new(),
            seed,
            rng: stream(seed, "mixco/brain"),
            dataset,
            targets: BrainTargets::compute(dataset, encoder)?,
        })
    }

    /// Restores model, optimizer, RNG position and history.
    pub fn resume(dataset: &'a Dataset, encoder: &dyn FrozenEncoderTargets, ckpt: &Checkpoint) -> Result<Self> {
        let model = BrainModel::from_checkpoint(ckpt)?;
        check_encoder(&model.config, encoder)?;
        if dataset.voxel_dim() != model.voxels {
            return Err(Error::shape("dataset voxel count differs from the checkpoint"));
        }
        let seed: u64 = ckpt.meta("seed")?;
        let mut opt = AdamW::new(model.config.weight_decay);
        opt.step = ckpt.meta("opt_step")?;
        opt.m = ckpt.params("adam.m/");
        opt.v = ckpt.params("adam.v/");
        let rng = match &ckpt.rng {
            Some(state) => state
                .restore()
                .ok_or_else(|| Error::Format("unreadable RNG state in checkpoint".into()))?,
            None => stream(seed, "mixco/brain"),
        };
        Ok(Self {
            epoch: ckpt.meta("epoch")?,
            history: ckpt.meta("history")?,
            seed,
            opt,
            rng,
            targets: BrainTargets::compute(dataset, encoder)?,
            model,
            dataset,
        })
    }

    fn schedule(&self) -> OneCycle {
        let per_epoch = self.dataset.len().div_ceil(self.model.config.batch_size);
        OneCycle::new(self.model.config.lr, self.model.config.epochs * per_epoch)
    }

    /// Builds the loss graph for one batch and returns the losses, the graph
    /// and the root; parameters are bound by `bound`.
    fn batch_graph(&self, idx: &[usize], state: &MixState) -> Result<(Graph, Bound, Var, BrainLosses)> {
        let cfg = &self.model.config;
        let raw = stack_rows(idx.iter().map(|&i| self.dataset.samples[i].fmri.voxels.as_slice()))?;
        let x = mixco_mix(&self.model.normalize(&raw)?, state)?;
        let mut g = Graph::new();
        let p = self.model.params.bind(&mut g, |n| !n.starts_with("norm."));
        let xv = g.constant(x);
        let out = self.model.forward(&mut g, &p, xv)?;

        let video = stack_rows(idx.iter().flat_map(|&i| {
            let t = &self.targets.video[i];
            (0..t.rows()).map(move |f| t.row(f))
        }))?;
        let clip_v = contrastive_node(&mut g, out.e_vid, &video, &state.expand(FRAMES_PER_CLIP), cfg.tau)?;
        let text = stack_rows(idx.iter().map(|&i| self.targets.text[i].as_slice()))?;
        let clip_t = contrastive_node(&mut g, out.e_txt, &text, state, cfg.tau)?;
        let key = stack_rows(idx.iter().map(|&i| self.targets.keyframe[i].as_slice()))?;
        let pl = prior_loss(g.value(out.e_img), &key)?;
        let prior = loss_node(&mut g, out.e_img, pl)?;

        let w = p.get("ridge.w")?;
        let wv = g.value(w);
        let l2 = cfg.ridge_l2 * wv.data().iter().map(|v| v * v).sum::<f64>();
        let l2_grad = wv.scale(2.0 * cfg.ridge_l2);
        let l2 = g.fused(&[w], l2, vec![l2_grad])?;

        let losses = BrainLosses {
            clip_v: g.value(clip_v).item(),
            clip_t: g.value(clip_t).item(),
            prior: g.value(prior).item(),
        };
        let root = g.combine(&[(clip_v, 1.0), (clip_t, 1.0), (prior, 1.0), (l2, 1.0)]);
        Ok((g, p, root, losses))
    }

    /// Losses of one batch under the current parameters without updating.
    pub fn batch_losses(&self, idx: &[usize]) -> Result<BrainLosses> {
        Ok(self.batch_graph(idx, &MixState::identity(idx.len()))?.3)
    }

    pub fn run_epoch(&mut self) -> Result<BrainEpoch> {
        let cfg = self.model.config.clone();
        let mut order: Vec<usize> = (0..self.dataset.len()).collect();
        order.shuffle(&mut self.rng);
        let mixing = self.epoch < cfg.mixco_epochs();
        let sched = self.schedule();
        let mut sums = BrainLosses {
            clip_v: 0.0,
            clip_t: 0.0,
            prior: 0.0,
        };
        let batches: Vec<Vec<usize>> = order.chunks(cfg.batch_size).map(<[usize]>::to_vec).collect();
        for (bi, idx) in batches.iter().enumerate() {
            let state = if mixing {
                MixState::sample(idx.len(), cfg.mixco_alpha, &mut self.rng)?
            } else {
                MixState::identity(idx.len())
            };
            let (g, p, root, l) = self.batch_graph(idx, &state)?;
            if !g.value(root).item().is_finite() {
                return Err(Error::NonFinite {
                    epoch: self.epoch,
                    batch: bi,
                    detail: format!("clip_v={} clip_t={} prior={}", l.clip_v, l.clip_t, l.prior),
                });
            }
            let grads = g.backward(root);
            let lr = sched.lr(self.opt.step as usize);
            self.opt.update(&mut self.model.params, &p, &grads, lr, |_| 1.0)?;
            sums.clip_v += l.clip_v;
            sums.clip_t += l.clip_t;
            sums.prior += l.prior;
        }
        let n = batches.len() as f64;
        let rec = BrainEpoch {
            epoch: self.epoch,
            clip_v: sums.clip_v / n,
            clip_t: sums.clip_t / n,
            prior: sums.prior / n,
            total: (sums.clip_v + sums.clip_t + sums.prior) / n,
        };
        log::info!(
            "brain epoch {}: clip_v {:.4} clip_t {:.4} prior {:.5} total {:.4}",
            rec.epoch,
            rec.clip_v,
            rec.clip_t,
            rec.prior,
            rec.total
        );
        self.history.push(rec.clone());
        self.epoch += 1;
        Ok(rec)
    }

    /// Runs the remaining configured epochs.
    pub fn train(&mut self) -> Result<()> {
        while self.epoch < self.model.config.epochs {
            self.run_epoch()?;
        }
        Ok(())
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let mut c = Checkpoint::new();
        c.set_meta("kind", "brain")?;
        c.set_meta("seed", self.seed)?;
        c.set_meta("epoch", self.epoch)?;
        c.set_meta("opt_step", self.opt.step)?;
        c.set_meta("history", &self.history)?;
        self.model.to_checkpoint(&mut c)?;
        c.insert_params("adam.m/", &self.opt.m);
        c.insert_params("adam.v/", &self.opt.v);
        c.rng = Some(RngState::capture(&self.rng));
        Ok(c)
    }
}

fn check_encoder(config: &BrainConfig, encoder: &dyn FrozenEncoderTargets) -> Result<()> {
    if encoder.tokens() != config.tokens || encoder.width() != config.width || encoder.text_tokens() != config.text_tokens {
        return Err(Error::config(
            "brain",
            format!(
                "encoder produces {}x{} video and {}x{} text tokens; model expects {}x{} and {}x{}",
                encoder.tokens(),
                encoder.width(),
                encoder.text_tokens(),
                encoder.width(),
                config.tokens,
                config.width,
                config.text_tokens,
                config.width
            ),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::StubClipEncoder;
    use crate::tasks::{generate_synthetic_dataset, DatasetSpec};

    fn tiny() -> BrainConfig {
        BrainConfig {
            hidden: 16,
            tokens: 2,
            width: 8,
            text_tokens: 2,
            epochs: 4,
            ..BrainConfig::default()
        }
    }

    #[test]
    fn ridge_identity_and_zero() {
        let mut p = ParamStore::new();
        p.insert("ridge.w", Tensor::eye(3, 3));
        p.insert("ridge.b", Tensor::zeros([3]));
        let x = Tensor::new([1, 3], vec![1.0, -2.0, 0.5]).unwrap();
        assert_eq!(ridge_map(&p, &x).unwrap(), x);
        assert_eq!(ridge_map(&p, &Tensor::zeros([1, 3])).unwrap(), Tensor::zeros([1, 3]));
        assert!(ridge_map(&p, &Tensor::zeros([1, 4])).is_err());
    }

    #[test]
    fn embedding_shapes_and_determinism() {
        let m = BrainModel::init(tiny(), 10, 1).unwrap();
        let x = Tensor::from_fn([2, 10], |i| (i as f64).sin());
        let a = m.embed(&x).unwrap();
        assert_eq!(a.e_vid.shape(), [2, 6, 2, 8]);
        assert_eq!(a.e_img.shape(), [2, 2, 8]);
        assert_eq!(a.e_txt.shape(), [2, 2, 8]);
        assert_eq!(a, m.embed(&x).unwrap());
        let mut y = x.clone();
        y.data_mut()[3] += 1e-3;
        assert_ne!(a.e_vid, m.embed(&y).unwrap().e_vid);
    }

    #[test]
    fn uninitialized_model_is_a_state_error() {
        let m = BrainModel {
            config: tiny(),
            voxels: 10,
            params: ParamStore::new(),
        };
        let mut g = Graph::new();
        let p = m.params.bind(&mut g, |_| true);
        let x = g.constant(Tensor::zeros([1, 10]));
        assert!(matches!(m.forward(&mut g, &p, x), Err(Error::State(_))));
    }

    #[test]
    fn resume_matches_uninterrupted_training() {
        let spec = DatasetSpec {
            num_clips: 4,
            voxels: 24,
            ..DatasetSpec::default()
        };
        let data = generate_synthetic_dataset(&spec).unwrap();
        let enc = StubClipEncoder::new(2, 2, 8, 0).unwrap();
        let cfg = BrainConfig { batch_size: 2, ..tiny() };
        let mut a = BrainTrainer::new(&data, &enc, cfg.clone(), 5).unwrap();
        a.run_epoch().unwrap();
        let ck = a.checkpoint().unwrap();
        let bytes = ck.to_bytes().unwrap();
        let ck = Checkpoint::from_bytes(&bytes, std::path::Path::new("mem")).unwrap();
        let mut b = BrainTrainer::resume(&data, &enc, &ck).unwrap();
        let ea = a.run_epoch().unwrap();
        let eb = b.run_epoch().unwrap();
        assert_eq!(ea, eb);
        assert_eq!(a.model.params, b.model.params);
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let enc = StubClipEncoder::new(2, 2, 8, 0).unwrap();
        let data = Dataset { samples: vec![] };
        assert!(BrainTrainer::new(&data, &enc, tiny(), 0).is_err());
    }
}
