//! The four decoupled heads on top of brain embeddings.
//!
//! Segmentation and blurry-video reconstruction share a text-driven video
//! decoder: `e_vid` tokens attend to conditioning text tokens, the result is
//! added back and decoded by a dense trunk into a feature map at `H/4 × W/4`.
//! The segmentation head reads that map per pixel and its logits are
//! upsampled bilinearly to `H × W`; the reconstruction head
//! pools it to `H/8 × W/8` and maps it to latent channels. The concept head
//! reads the frame-mean of `e_vid`; the caption head is a small causal
//! decoder with `e_txt` as its prefix.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{softmax_rows, Graph, Var};
use crate::nn::{init_residual_block, linear, residual_block, Bound, ParamStore};
use crate::rng::stream;
use crate::tasks::NUM_CONCEPTS;
use crate::tensor::Tensor;
use crate::text::{BOS, EOS};
use crate::video::{bilinear_matrix, FRAMES_PER_CLIP};

use super::schedule::Task;
use super::train::SEG_FACTOR;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecouplerConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub period_epochs: usize,
    /// Defaults to quarter-period stagger in task order.
    pub period_starts: Option<[usize; 4]>,
    pub trunk_hidden: usize,
    pub feat_channels: usize,
    pub text_dim: usize,
    pub max_caption_len: usize,
    /// Learning-rate multiplier for the co-trained prior.
    pub prior_lr_scale: f64,
    /// Tasks whose weight is forced to zero.
    pub disabled: Vec<Task>,
}

impl Default for DecouplerConfig {
    fn default() -> Self {
        Self {
            epochs: 120,
            batch_size: 2,
            lr: 1e-2,
            weight_decay: 1e-2,
            period_epochs: 20,
            period_starts: None,
            trunk_hidden: 256,
            feat_channels: 8,
            text_dim: 64,
            max_caption_len: 32,
            prior_lr_scale: 0.1,
            disabled: Vec::new(),
        }
    }
}

impl DecouplerConfig {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("period_epochs", self.period_epochs),
            ("trunk_hidden", self.trunk_hidden),
            ("feat_channels", self.feat_channels),
            ("text_dim", self.text_dim),
            ("max_caption_len", self.max_caption_len),
        ] {
            if v == 0 {
                return Err(Error::config(format!("decoupler.{field}"), "must be positive"));
            }
        }
        if !(self.lr > 0.0) || self.weight_decay < 0.0 || self.prior_lr_scale < 0.0 {
            return Err(Error::config("decoupler.lr", "learning rate must be positive, other rates non-negative"));
        }
        Ok(())
    }

    pub fn is_enabled(&self, task: Task) -> bool {
        !self.disabled.contains(&task)
    }
}

/// Sizes fixed by the data and the brain model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoderDims {
    pub tokens: usize,
    pub width: usize,
    pub text_tokens: usize,
    pub seg_h: usize,
    pub seg_w: usize,
    pub latent_h: usize,
    pub latent_w: usize,
    pub latent_channels: usize,
    pub vocab: usize,
}

impl DecoderDims {
    pub fn seg_pixels(&self) -> usize {
        self.seg_h * self.seg_w
    }

    /// Frame `(height, width)` the segmentation grid upsamples to.
    pub fn frame_size(&self) -> (usize, usize) {
        (self.seg_h * SEG_FACTOR, self.seg_w * SEG_FACTOR)
    }

    pub fn latent_len(&self) -> usize {
        self.latent_h * self.latent_w * self.latent_channels
    }

    /// Positions the caption decoder can hold: prefix, `<bos>` and tokens.
    pub fn max_positions(&self, max_caption_len: usize) -> usize {
        self.text_tokens + 1 + max_caption_len
    }
}

/// Scaled dot-product attention: `softmax(Q Kᵀ / √d) V`, also returning
/// the attention matrix.
pub fn attention(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<(Tensor, Tensor)> {
    let (_, d) = q.dims2()?;
    let (nk, dk) = k.dims2()?;
    let (nv, _) = v.dims2()?;
    if dk != d || nk != nv {
        return Err(Error::shape(format!(
            "attention widths: q {:?}, k {:?}, v {:?}",
            q.shape(),
            k.shape(),
            v.shape()
        )));
    }
    let scores = q.matmul(&k.transpose()?)?.scale(1.0 / (d as f64).sqrt());
    let a = softmax_rows(&scores, false)?;
    Ok((a.matmul(v)?, a))
}

/// Graph version of [`attention`].
pub fn attention_node(g: &mut Graph, q: Var, k: Var, v: Var, causal: bool) -> Result<Var> {
    let d = g.value(q).row_len();
    if g.value(k).row_len() != d {
        return Err(Error::shape("query and key widths differ"));
    }
    let kt = g.transpose(k)?;
    let s = g.matmul(q, kt)?;
    let s = g.scale(s, 1.0 / (d as f64).sqrt());
    let a = g.softmax(s, causal)?;
    g.matmul(a, v)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decoupler {
    pub config: DecouplerConfig,
    pub dims: DecoderDims,
    pub params: ParamStore,
}

impl Decoupler {
    pub fn init(config: DecouplerConfig, dims: DecoderDims, seed: u64) -> Result<Self> {
        config.validate()?;
        if dims.seg_h != 2 * dims.latent_h || dims.seg_w != 2 * dims.latent_w {
            return Err(Error::config("decoupler", "segmentation grid must be twice the latent grid"));
        }
        let mut rng = stream(seed, "init/decoupler");
        let mut p = ParamStore::new();
        let (c, d) = (dims.width, dims.tokens * dims.width);
        let fc = config.feat_channels;
        for name in ["attn.q", "attn.k", "attn.v"] {
            p.init_linear(name, c, c, &mut rng);
        }
        p.init_linear("trunk.fc1", d, config.trunk_hidden, &mut rng);
        p.init_linear("trunk.fc2", config.trunk_hidden, dims.seg_pixels() * fc, &mut rng);
        p.init_linear("seg", fc, 1, &mut rng);
        p.init_linear("rec", fc, dims.latent_channels, &mut rng);
        p.init_linear("cls", d, NUM_CONCEPTS, &mut rng);

        let td = config.text_dim;
        p.init_linear("txt.prefix", c, td, &mut rng);
        p.insert("txt.embed", Tensor::randn([dims.vocab, td], 0.1, &mut rng));
        p.insert(
            "txt.pos",
            Tensor::randn([dims.max_positions(config.max_caption_len), td], 0.1, &mut rng),
        );
        for name in ["txt.attn.q", "txt.attn.k", "txt.attn.v", "txt.attn.o"] {
            p.init_linear(name, td, td, &mut rng);
        }
        init_residual_block(&mut p, "txt.mlp", td, &mut rng);
        p.init_linear("txt.out", td, dims.vocab, &mut rng);
        Ok(Self {
            config,
            dims,
            params: p,
        })
    }

    /// Parameter-name prefixes that only the given task's loss reaches.
    pub fn head_prefixes(task: Task) -> &'static [&'static str] {
        match task {
            Task::Seg => &["seg."],
            Task::Cls => &["cls."],
            Task::Txt => &["txt."],
            Task::Rec => &["rec."],
        }
    }

    /// Cross-attention of `e_vid` tokens (`[B·F, N·C]`) over conditioning
    /// tokens (`[B·N_t, C]`); returns `e_seg` in the layout of `e_vid`.
    pub fn cross_attend(&self, g: &mut Graph, p: &Bound, e_vid: Var, cond: Var) -> Result<Var> {
        let dims = &self.dims;
        let (n, c, nt) = (dims.tokens, dims.width, dims.text_tokens);
        let rows = g.value(e_vid).rows();
        if !rows.is_multiple_of(FRAMES_PER_CLIP) || g.value(e_vid).row_len() != n * c {
            return Err(Error::shape(format!("e_vid {:?} does not match {n} tokens of width {c}", g.value(e_vid).shape())));
        }
        let b = rows / FRAMES_PER_CLIP;
        if g.value(cond).shape() != [b * nt, c] {
            return Err(Error::shape(format!(
                "conditioning {:?}, expected [{}, {c}]",
                g.value(cond).shape(),
                b * nt
            )));
        }
        let tokens = g.reshape(e_vid, [rows * n, c])?;
        let q = linear(g, p, "attn.q", tokens)?;
        let k = linear(g, p, "attn.k", cond)?;
        let v = linear(g, p, "attn.v", cond)?;
        let per = FRAMES_PER_CLIP * n;
        let mut outs = Vec::with_capacity(b);
        for i in 0..b {
            let qi = g.gather(q, &(i * per..(i + 1) * per).collect::<Vec<_>>())?;
            let kv_rows: Vec<usize> = (i * nt..(i + 1) * nt).collect();
            let ki = g.gather(k, &kv_rows)?;
            let vi = g.gather(v, &kv_rows)?;
            outs.push(attention_node(g, qi, ki, vi, false)?);
        }
        let out = g.concat(&outs)?;
        g.reshape(out, [rows, n * c])
    }

    /// Shared decoder trunk: `[B·F, seg_h·seg_w·feat]` feature maps.
    pub fn trunk(&self, g: &mut Graph, p: &Bound, e_vid: Var, cond: Var) -> Result<Var> {
        let e_seg = self.cross_attend(g, p, e_vid, cond)?;
        let h = g.add(e_vid, e_seg)?;
        let h = linear(g, p, "trunk.fc1", h)?;
        let h = g.gelu(h);
        let h = linear(g, p, "trunk.fc2", h)?;
        Ok(g.gelu(h))
    }

    /// Segmentation logits `[B·F, seg_h·seg_w]`.
    pub fn seg_logits(&self, g: &mut Graph, p: &Bound, e_vid: Var, cond: Var) -> Result<Var> {
        let feat = self.trunk(g, p, e_vid, cond)?;
        let rows = g.value(feat).rows();
        let px = self.dims.seg_pixels();
        let flat = g.reshape(feat, [rows * px, self.config.feat_channels])?;
        let y = linear(g, p, "seg", flat)?;
        g.reshape(y, [rows, px])
    }

    /// Segmentation logits upsampled bilinearly to frame resolution,
    /// `[B·F, H·W]`.
    pub fn mask_logits(&self, g: &mut Graph, p: &Bound, e_vid: Var, cond: Var) -> Result<Var> {
        let logits = self.seg_logits(g, p, e_vid, cond)?;
        let (h, w) = self.dims.frame_size();
        let up = g.constant(bilinear_matrix(self.dims.seg_h, self.dims.seg_w, h, w)?);
        g.matmul(logits, up)
    }

    /// Latent predictions `[B·F, latent_h·latent_w·latent_channels]`.
    pub fn rec_latents(&self, g: &mut Graph, p: &Bound, e_vid: Var, cond: Var) -> Result<Var> {
        let feat = self.trunk(g, p, e_vid, cond)?;
        let rows = g.value(feat).rows();
        let d = &self.dims;
        let fc = self.config.feat_channels;
        let pooled = g.avg_pool2(feat, d.seg_h, d.seg_w, fc)?;
        let cells = d.latent_h * d.latent_w;
        let flat = g.reshape(pooled, [rows * cells, fc])?;
        let y = linear(g, p, "rec", flat)?;
        g.reshape(y, [rows, d.latent_len()])
    }

    /// Concept logits `[B, 51]` from the frame-mean of `e_vid`.
    pub fn cls_logits(&self, g: &mut Graph, p: &Bound, e_vid: Var) -> Result<Var> {
        let pooled = g.group_mean(e_vid, FRAMES_PER_CLIP)?;
        linear(g, p, "cls", pooled)
    }

    /// Next-token logits for one caption: row `i` predicts token `i` of
    /// `tokens ++ [<eos>]` from the `e_txt` prefix, `<bos>` and `tokens[..i]`.
    /// `e_txt` is a `[1, N_t·C]` row.
    pub fn txt_logits(&self, g: &mut Graph, p: &Bound, e_txt: Var, tokens: &[u32]) -> Result<Var> {
        let d = &self.dims;
        if tokens.len() > self.config.max_caption_len {
            return Err(Error::shape(format!(
                "caption of {} tokens exceeds the decoder limit of {}",
                tokens.len(),
                self.config.max_caption_len
            )));
        }
        if let Some(t) = tokens.iter().find(|&&t| t as usize >= d.vocab) {
            return Err(Error::domain(format!("token id {t} outside vocabulary of {}", d.vocab)));
        }
        let prefix = g.reshape(e_txt, [d.text_tokens, d.width])?;
        let prefix = linear(g, p, "txt.prefix", prefix)?;
        let ids: Vec<usize> = std::iter::once(BOS).chain(tokens.iter().copied()).map(|t| t as usize).collect();
        let emb = g.gather(p.get("txt.embed")?, &ids)?;
        let x = g.concat(&[prefix, emb])?;
        let len = d.text_tokens + ids.len();
        let pos = g.gather(p.get("txt.pos")?, &(0..len).collect::<Vec<_>>())?;
        let x = g.add(x, pos)?;

        let q = linear(g, p, "txt.attn.q", x)?;
        let k = linear(g, p, "txt.attn.k", x)?;
        let v = linear(g, p, "txt.attn.v", x)?;
        let a = attention_node(g, q, k, v, true)?;
        let a = linear(g, p, "txt.attn.o", a)?;
        let x = g.add(x, a)?;
        let x = residual_block(g, p, "txt.mlp", x)?;
        let out_rows: Vec<usize> = (d.text_tokens..len).collect();
        let h = g.gather(x, &out_rows)?;
        linear(g, p, "txt.out", h)
    }

    /// Greedy decoding; stops at `<eos>` or after `max_len` tokens. The flag
    /// reports truncation.
    pub fn decode_greedy(&self, e_txt: &[f64], max_len: usize) -> Result<(Vec<u32>, bool)> {
        let max_len = max_len.min(self.config.max_caption_len);
        let mut tokens: Vec<u32> = Vec::new();
        loop {
            let mut g = Graph::new();
            let p = self.params.bind(&mut g, |_| false);
            let e = g.constant(Tensor::new([1, e_txt.len()], e_txt.to_vec())?);
            let logits = self.txt_logits(&mut g, &p, e, &tokens)?;
            let last = g.value(logits).row(tokens.len());
            let next = argmax(last) as u32;
            if next == EOS {
                return Ok((tokens, false));
            }
            if tokens.len() == max_len {
                return Ok((tokens, true));
            }
            tokens.push(next);
        }
    }
}

/// Index of the largest value; the first one on ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
