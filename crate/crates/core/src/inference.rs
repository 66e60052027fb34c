//! Turns decoupled head outputs into conditioning signals and drives a
//! text-to-video backend.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::brain::BrainModel;
use crate::checkpoint::{write_atomic, Checkpoint};
use crate::data::{load_frame_png, numbered_pngs, save_frame_png, save_gray_png, save_mask_png};
use crate::decoupler::model::argmax;
use crate::decoupler::{decoupler_from_checkpoint, Decoupler};
use crate::encoders::{FrozenEncoderTargets, LatentCodec};
use crate::error::{Error, Result};
use crate::graph::{sigmoid, Graph};
use crate::rng::stream;
use crate::tasks::synth::FmriSample;
use crate::tasks::ConceptTaxonomy;
use crate::tensor::Tensor;
use crate::text::Tokenizer;
use crate::video::{Frame, Mask, FRAMES_PER_CLIP, SOURCE_FPS, TARGET_FPS};

/// Longest prompt the caption head may emit.
pub const MAX_PROMPT_TOKENS: usize = 32;

/// Affine map of a `[0, 1]` mask onto `[0.5, 1]`.
pub fn rescale_mask(mask: &[f64]) -> Result<Vec<f64>> {
    if let Some(v) = mask.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::domain(format!("mask value {v} outside [0, 1]")));
    }
    Ok(mask.iter().map(|m| 0.5 + 0.5 * m).collect())
}

/// Multiplies every channel of `frame` by the per-pixel mask value.
pub fn apply_mask_condition(frame: &Frame, mask: &[f64]) -> Result<Frame> {
    if mask.len() != frame.height * frame.width {
        return Err(Error::shape(format!(
            "mask of {} values does not match a {}x{} frame",
            mask.len(),
            frame.height,
            frame.width
        )));
    }
    let data = frame
        .data
        .chunks_exact(3)
        .zip(mask)
        .flat_map(|(px, m)| px.iter().map(move |v| v * m))
        .collect();
    Frame::new(frame.height, frame.width, data)
}

/// Pixelwise linear interpolation at fractional frame index `s`.
pub fn sample_at(frames: &[Frame], s: f64) -> Result<Frame> {
    let last = frames.len().checked_sub(1).ok_or(Error::InsufficientFrames { needed: 1, got: 0 })?;
    if !(0.0..=last as f64).contains(&s) {
        return Err(Error::domain(format!("timestamp {s} outside [0, {last}]")));
    }
    let i0 = (s.floor() as usize).min(last);
    let t = s - i0 as f64;
    if t == 0.0 {
        return Ok(frames[i0].clone());
    }
    let (a, b) = (&frames[i0], &frames[i0 + 1]);
    a.same_size(b)?;
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x * (1.0 - t) + y * t).collect();
    Frame::new(a.height, a.width, data)
}

/// Resamples a clip from `src_fps` to `dst_fps` over the same duration,
/// keeping the first and last frames.
pub fn interpolate_fps(frames: &[Frame], src_fps: f64, dst_fps: f64) -> Result<Vec<Frame>> {
    if frames.len() < 2 {
        return Err(Error::InsufficientFrames {
            needed: 2,
            got: frames.len(),
        });
    }
    if !(src_fps > 0.0 && dst_fps > 0.0) {
        return Err(Error::domain("frame rates must be positive"));
    }
    let n = frames.len();
    let m = ((n as f64 / src_fps) * dst_fps).round() as usize;
    if m < 2 {
        return Err(Error::domain(format!("{dst_fps} FPS leaves fewer than two frames")));
    }
    (0..m)
        .map(|j| sample_at(frames, j as f64 * (n - 1) as f64 / (m - 1) as f64))
        .collect()
}

/// Autoregressive caption decoder.
pub trait CaptionDecoder {
    /// Greedy tokens for one `e_txt` row, and whether `max_len` cut it short.
    fn decode(&self, e_txt: &[f64], max_len: usize) -> Result<(Vec<u32>, bool)>;
}

impl CaptionDecoder for Decoupler {
    fn decode(&self, e_txt: &[f64], max_len: usize) -> Result<(Vec<u32>, bool)> {
        self.decode_greedy(e_txt, max_len)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prompt {
    pub top_concept: String,
    pub text: String,
    pub truncated: bool,
}

/// Top-1 concept from the classifier logits and a greedy caption.
pub fn build_prompt(
    cls_logits: &[f64],
    taxonomy: &ConceptTaxonomy,
    decoder: &dyn CaptionDecoder,
    e_txt: &[f64],
    tokenizer: &Tokenizer,
    max_len: usize,
) -> Result<Prompt> {
    if cls_logits.len() != taxonomy.len() {
        return Err(Error::shape(format!(
            "{} concept logits for a taxonomy of {}",
            cls_logits.len(),
            taxonomy.len()
        )));
    }
    let top_concept = taxonomy.name(argmax(cls_logits)).to_string();
    let (tokens, truncated) = decoder.decode(e_txt, max_len)?;
    Ok(Prompt {
        top_concept,
        text: tokenizer.decode(&tokens),
        truncated,
    })
}

/// Highest-scoring concept that can be a key object, i.e. outside the
/// background set; the overall top-1 when every concept is background.
pub fn key_concept(cls_logits: &[f64], taxonomy: &ConceptTaxonomy) -> Result<String> {
    if cls_logits.len() != taxonomy.len() {
        return Err(Error::shape(format!(
            "{} concept logits for a taxonomy of {}",
            cls_logits.len(),
            taxonomy.len()
        )));
    }
    let best = (0..cls_logits.len())
        .filter(|&i| !taxonomy.is_background(taxonomy.name(i)))
        .fold(None, |best: Option<usize>, i| match best {
            Some(b) if cls_logits[b] >= cls_logits[i] => Some(b),
            _ => Some(i),
        })
        .unwrap_or_else(|| argmax(cls_logits));
    Ok(taxonomy.name(best).to_string())
}

/// Signals handed to the video backend.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditioningBundle {
    pub control_image: Frame,
    pub blurry_video: Vec<Frame>,
    /// One `height·width` map per frame, values in `[0.5, 1]`.
    pub rescaled_masks: Vec<Vec<f64>>,
    pub prompt: String,
    pub top_concept: String,
    /// Concept whose text embedding conditioned the masks.
    pub seg_concept: String,
    pub prompt_truncated: bool,
    /// The caption head produced nothing and the prompt is the top concept.
    pub prompt_fallback: bool,
}

impl ConditioningBundle {
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let (h, w) = (self.control_image.height, self.control_image.width);
        write_text(&dir.join("prompt.txt"), &self.prompt)?;
        write_text(&dir.join("top_concept.txt"), &self.top_concept)?;
        write_text(&dir.join("seg_concept.txt"), &self.seg_concept)?;
        save_frame_png(&self.control_image, &dir.join("control.png"))?;
        for (i, m) in self.rescaled_masks.iter().enumerate() {
            save_gray_png(m, h, w, &dir.join(format!("mask_{i:03}.png")))?;
        }
        for (i, f) in self.blurry_video.iter().enumerate() {
            save_frame_png(f, &dir.join(format!("blurry_{i:03}.png")))?;
        }
        Ok(())
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Text-to-video generator guided by a control image and a blurry video.
pub trait T2VBackend: Send + Sync {
    fn name(&self) -> &str;
    /// Whether concurrent `generate` calls are safe without external locking.
    fn is_stateless(&self) -> bool;
    fn generate(
        &self,
        prompt: &str,
        control_image: &Frame,
        blurry_video: &[Frame],
        num_frames: usize,
        seed: u64,
    ) -> Result<Vec<Frame>>;
}

/// Blends each blurry frame toward the control image and adds seeded noise.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StubT2V {
    pub control_weight: f64,
    pub noise_std: f64,
}

impl Default for StubT2V {
    fn default() -> Self {
        Self {
            control_weight: 0.3,
            noise_std: 0.02,
        }
    }
}

impl T2VBackend for StubT2V {
    fn name(&self) -> &str {
        "stub"
    }

    fn is_stateless(&self) -> bool {
        true
    }

    fn generate(
        &self,
        prompt: &str,
        control_image: &Frame,
        blurry_video: &[Frame],
        num_frames: usize,
        seed: u64,
    ) -> Result<Vec<Frame>> {
        if prompt.trim().is_empty() {
            return Err(Error::Backend("empty prompt".into()));
        }
        if num_frames == 0 || blurry_video.is_empty() {
            return Err(Error::Backend("nothing to generate".into()));
        }
        let guide = if num_frames == blurry_video.len() {
            blurry_video.to_vec()
        } else if blurry_video.len() == 1 {
            vec![blurry_video[0].clone(); num_frames]
        } else {
            let n = blurry_video.len();
            (0..num_frames)
                .map(|j| sample_at(blurry_video, j as f64 * (n - 1) as f64 / (num_frames - 1).max(1) as f64))
                .collect::<Result<_>>()?
        };
        let noise = Normal::new(0.0, self.noise_std).map_err(|e| Error::Backend(e.to_string()))?;
        let mut rng = stream(seed, "t2v/stub");
        let a = self.control_weight;
        guide
            .iter()
            .map(|f| {
                f.same_size(control_image)?;
                let data = f
                    .data
                    .iter()
                    .zip(&control_image.data)
                    .map(|(b, c)| ((1.0 - a) * b + a * c + noise.sample(&mut rng)).clamp(0.0, 1.0))
                    .collect();
                Frame::new(f.height, f.width, data)
            })
            .collect()
    }
}

/// Runs an external program once per request.
///
/// The program receives a request directory as its last argument holding
/// `prompt.txt`, `control.png`, `blurry/NNN.png` and `request.json`
/// (`num_frames`, `seed`), and must write `num_frames` PNGs to `output/`.
#[derive(Clone, Debug, PartialEq)]
pub struct ExternalT2V {
    pub program: PathBuf,
    pub args: Vec<String>,
}

impl ExternalT2V {
    /// Splits a command line on whitespace.
    pub fn from_command(command: &str) -> Result<Self> {
        let mut parts = command.split_whitespace();
        let program = parts
            .next()
            .ok_or_else(|| Error::config("backend", "external backend needs a command"))?;
        Ok(Self {
            program: program.into(),
            args: parts.map(String::from).collect(),
        })
    }
}

#[derive(Serialize)]
struct ExternalRequest {
    num_frames: usize,
    seed: u64,
}

impl T2VBackend for ExternalT2V {
    fn name(&self) -> &str {
        "external"
    }

    fn is_stateless(&self) -> bool {
        false
    }

    fn generate(
        &self,
        prompt: &str,
        control_image: &Frame,
        blurry_video: &[Frame],
        num_frames: usize,
        seed: u64,
    ) -> Result<Vec<Frame>> {
        let dir = tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))?;
        let root = dir.path();
        write_text(&root.join("prompt.txt"), prompt)?;
        save_frame_png(control_image, &root.join("control.png"))?;
        let blurry = root.join("blurry");
        fs::create_dir_all(&blurry).map_err(|e| Error::io(&blurry, e))?;
        for (i, f) in blurry_video.iter().enumerate() {
            save_frame_png(f, &blurry.join(format!("{i:03}.png")))?;
        }
        let req = serde_json::to_string(&ExternalRequest { num_frames, seed }).map_err(|e| Error::Format(e.to_string()))?;
        write_text(&root.join("request.json"), &req)?;
        let output = root.join("output");
        fs::create_dir_all(&output).map_err(|e| Error::io(&output, e))?;

        let status = Command::new(&self.program)
            .args(&self.args)
            .arg(root)
            .status()
            .map_err(|e| Error::Backend(format!("cannot run {}: {e}", self.program.display())))?;
        if !status.success() {
            return Err(Error::Backend(format!("{} exited with {status}", self.program.display())));
        }
        let frames = numbered_pngs(&output)?
            .iter()
            .map(|p| load_frame_png(p))
            .collect::<Result<Vec<_>>>()?;
        if frames.len() != num_frames {
            return Err(Error::Backend(format!(
                "external backend wrote {} frames, expected {num_frames}",
                frames.len()
            )));
        }
        Ok(frames)
    }
}

/// Image generator that turns the keyframe into the control image.
pub trait ImageGenerator: Send + Sync {
    fn generate(&self, keyframe: &Frame, seed: u64) -> Result<Frame>;
}

/// Passes the (already upsampled) blurry keyframe through.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StubImageGenerator;

impl ImageGenerator for StubImageGenerator {
    fn generate(&self, keyframe: &Frame, _seed: u64) -> Result<Frame> {
        Ok(keyframe.clone())
    }
}

/// Control image from the middle frame of the blurry video, conditioned on
/// that frame's mask.
pub fn control_image(
    generator: &dyn ImageGenerator,
    blurry_video: &[Frame],
    rescaled_masks: &[Vec<f64>],
    seed: u64,
) -> Result<Frame> {
    if blurry_video.is_empty() || blurry_video.len() != rescaled_masks.len() {
        return Err(Error::shape("blurry video and masks differ in frame count"));
    }
    let mid = blurry_video.len() / 2;
    let raw = generator.generate(&blurry_video[mid], seed)?;
    apply_mask_condition(&raw, &rescaled_masks[mid])
}

/// Final video and everything that conditioned it.
#[derive(Clone, Debug, PartialEq)]
pub struct Reconstruction {
    pub clip_id: usize,
    pub seed: u64,
    pub fps: f64,
    pub frames: Vec<Frame>,
    /// Thresholded key-object masks at frame resolution, one per input frame.
    pub masks: Vec<Mask>,
    pub bundle: ConditioningBundle,
}

/// A failure after the conditioning signals were built keeps them for
/// inspection.
#[derive(Debug, thiserror::Error)]
#[error("{source}")]
pub struct ReconstructError {
    #[source]
    pub source: Error,
    pub bundle: Option<Box<ConditioningBundle>>,
}

impl From<Error> for ReconstructError {
    fn from(source: Error) -> Self {
        Self { source, bundle: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferenceConfig {
    /// Sigmoid threshold that binarizes segmentation outputs.
    pub mask_threshold: f64,
    pub max_prompt_tokens: usize,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            mask_threshold: 0.5,
            max_prompt_tokens: MAX_PROMPT_TOKENS,
        }
    }
}

/// Trained models plus the frozen encoders they were trained against.
pub struct Reconstructor<'a> {
    pub brain: BrainModel,
    pub decoupler: Decoupler,
    pub encoder: &'a dyn FrozenEncoderTargets,
    pub codec: &'a dyn LatentCodec,
    pub image_generator: &'a dyn ImageGenerator,
    pub taxonomy: ConceptTaxonomy,
    pub tokenizer: Tokenizer,
    pub config: InferenceConfig,
}

/// Raw head outputs for one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadOutputs {
    pub cls_logits: Vec<f64>,
    pub top_concept: String,
    /// See [`key_concept`].
    pub seg_concept: String,
    /// `[F, H·W]` probabilities at frame resolution.
    pub seg_probs: Tensor,
    /// `[F, latent_len]`.
    pub latents: Tensor,
    pub e_txt: Vec<f64>,
}

impl<'a> Reconstructor<'a> {
    /// The brain comes from the decoupler checkpoint when it carries one,
    /// since its prior was co-trained there; otherwise from `brain_ckpt`.
    pub fn from_checkpoints(
        brain_ckpt: Option<&Checkpoint>,
        decoupler_ckpt: &Checkpoint,
        encoder: &'a dyn FrozenEncoderTargets,
        codec: &'a dyn LatentCodec,
        image_generator: &'a dyn ImageGenerator,
        config: InferenceConfig,
    ) -> Result<Self> {
        let brain = match BrainModel::from_checkpoint(decoupler_ckpt) {
            Ok(b) => b,
            Err(_) => BrainModel::from_checkpoint(
                brain_ckpt.ok_or_else(|| Error::State("decoupler checkpoint carries no brain model".into()))?,
            )?,
        };
        if let Some(b) = brain_ckpt {
            let other = BrainModel::from_checkpoint(b)?;
            if other.voxels != brain.voxels || other.config != brain.config {
                return Err(Error::State("brain checkpoint does not match the decoupler's brain".into()));
            }
        }
        let decoupler = decoupler_from_checkpoint(decoupler_ckpt)?;
        if encoder.width() != brain.config.width || codec.channels() != decoupler.dims.latent_channels {
            return Err(Error::config("encoders", "frozen encoders do not match the trained models"));
        }
        Ok(Self {
            brain,
            decoupler,
            encoder,
            codec,
            image_generator,
            taxonomy: ConceptTaxonomy::standard(),
            tokenizer: Tokenizer::standard(),
            config,
        })
    }

    pub fn frame_size(&self) -> (usize, usize) {
        self.decoupler.dims.frame_size()
    }

    pub fn heads(&self, sample: &FmriSample) -> Result<HeadOutputs> {
        if sample.voxels.len() != self.brain.voxels {
            return Err(Error::shape(format!(
                "sample has {} voxels, model expects {}",
                sample.voxels.len(),
                self.brain.voxels
            )));
        }
        let dims = self.decoupler.dims;
        let x = self.brain.normalize(&Tensor::new([1, sample.voxels.len()], sample.voxels.clone())?)?;
        let mut g = Graph::new();
        let bp = self.brain.params.bind(&mut g, |_| false);
        let dp = self.decoupler.params.bind(&mut g, |_| false);
        let xv = g.constant(x);
        let out = self.brain.forward(&mut g, &bp, xv)?;

        let cls = self.decoupler.cls_logits(&mut g, &dp, out.e_vid)?;
        let cls_logits = g.value(cls).row(0).to_vec();
        let top_concept = self.taxonomy.name(argmax(&cls_logits)).to_string();
        let seg_concept = key_concept(&cls_logits, &self.taxonomy)?;

        let concept = Tensor::new([dims.text_tokens, dims.width], self.encoder.text_embed(&seg_concept)?)?;
        let concept = g.constant(concept);
        let seg = self.decoupler.mask_logits(&mut g, &dp, out.e_vid, concept)?;
        let seg_probs = g.value(seg).map(sigmoid);

        let cond = g.reshape(out.e_txt, [dims.text_tokens, dims.width])?;
        let rec = self.decoupler.rec_latents(&mut g, &dp, out.e_vid, cond)?;
        Ok(HeadOutputs {
            cls_logits,
            top_concept,
            seg_concept,
            seg_probs,
            latents: g.value(rec).clone(),
            e_txt: g.value(out.e_txt).row(0).to_vec(),
        })
    }

    /// Binary masks from frame-resolution segmentation probabilities.
    pub fn masks(&self, seg_probs: &Tensor) -> Result<Vec<Mask>> {
        let (h, w) = self.frame_size();
        if seg_probs.row_len() != h * w {
            return Err(Error::shape(format!("{} mask probabilities for a {h}x{w} frame", seg_probs.row_len())));
        }
        (0..seg_probs.rows())
            .map(|f| {
                let bits = seg_probs.row(f).iter().map(|&p| u8::from(p >= self.config.mask_threshold)).collect();
                Mask::new(h, w, bits)
            })
            .collect()
    }

    pub fn conditioning(&self, heads: &HeadOutputs, seed: u64) -> Result<(ConditioningBundle, Vec<Mask>)> {
        let (h, w) = self.frame_size();
        let masks = self.masks(&heads.seg_probs)?;
        let rescaled = masks
            .iter()
            .map(|m| rescale_mask(&m.as_f64()))
            .collect::<Result<Vec<_>>>()?;
        let blurry = (0..heads.latents.rows())
            .map(|f| self.codec.decode(heads.latents.row(f), h, w))
            .collect::<Result<Vec<_>>>()?;
        let control = control_image(self.image_generator, &blurry, &rescaled, seed)?;
        let blurry_video = blurry
            .iter()
            .zip(&rescaled)
            .map(|(f, m)| apply_mask_condition(f, m))
            .collect::<Result<Vec<_>>>()?;
        let prompt = build_prompt(
            &heads.cls_logits,
            &self.taxonomy,
            &self.decoupler,
            &heads.e_txt,
            &self.tokenizer,
            self.config.max_prompt_tokens,
        )?;
        let fallback = prompt.text.trim().is_empty();
        let bundle = ConditioningBundle {
            control_image: control,
            blurry_video,
            rescaled_masks: rescaled,
            prompt: if fallback { prompt.top_concept.clone() } else { prompt.text },
            top_concept: prompt.top_concept,
            seg_concept: heads.seg_concept.clone(),
            prompt_truncated: prompt.truncated,
            prompt_fallback: fallback,
        };
        Ok((bundle, masks))
    }
}

/// Brain and decoupler forward passes, conditioning, generation at the
/// source rate, then interpolation to the target rate.
pub fn reconstruct_video(
    sample: &FmriSample,
    models: &Reconstructor,
    backend: &dyn T2VBackend,
    seed: u64,
) -> std::result::Result<Reconstruction, ReconstructError> {
    let heads = models.heads(sample)?;
    let (bundle, masks) = models.conditioning(&heads, seed)?;
    let generated = backend
        .generate(&bundle.prompt, &bundle.control_image, &bundle.blurry_video, FRAMES_PER_CLIP, seed)
        .and_then(|frames| {
            check_generated(&frames, &bundle.control_image)?;
            interpolate_fps(&frames, SOURCE_FPS, TARGET_FPS)
        });
    match generated {
        Ok(frames) => Ok(Reconstruction {
            clip_id: sample.clip_id,
            seed,
            fps: TARGET_FPS,
            frames,
            masks,
            bundle,
        }),
        Err(source) => Err(ReconstructError {
            source,
            bundle: Some(Box::new(bundle)),
        }),
    }
}

fn check_generated(frames: &[Frame], like: &Frame) -> Result<()> {
    if frames.len() != FRAMES_PER_CLIP {
        return Err(Error::Backend(format!(
            "backend returned {} frames, expected {FRAMES_PER_CLIP}",
            frames.len()
        )));
    }
    for f in frames {
        f.same_size(like).map_err(|e| Error::Backend(e.to_string()))?;
        if f.data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Backend("backend output outside [0, 1]".into()));
        }
    }
    Ok(())
}

/// Per-sample metadata written next to the outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferenceMeta {
    pub clip_id: usize,
    pub seed: u64,
    pub backend: String,
    pub fps: f64,
    pub num_frames: usize,
    pub top_concept: String,
    pub seg_concept: String,
    pub prompt_truncated: bool,
    pub prompt_fallback: bool,
    pub config_hash: Option<String>,
    /// Set when generation failed; only the bundle was written.
    pub error: Option<String>,
}

/// Output layout of one sample:
///
/// ```text
/// frames/NNN.png   reconstructed video at the target rate
/// masks/NNN.png    binary key-object masks, one per input frame
/// caption.txt      prompt used for generation
/// bundle/          prompt, top concept, control image, rescaled masks, blurry video
/// meta.json
/// ```
pub fn save_reconstruction(rec: &Reconstruction, backend: &str, config_hash: Option<&str>, dir: &Path) -> Result<()> {
    let frames = dir.join("frames");
    let masks = dir.join("masks");
    fs::create_dir_all(&frames).map_err(|e| Error::io(&frames, e))?;
    fs::create_dir_all(&masks).map_err(|e| Error::io(&masks, e))?;
    for (i, f) in rec.frames.iter().enumerate() {
        save_frame_png(f, &frames.join(format!("{i:03}.png")))?;
    }
    for (i, m) in rec.masks.iter().enumerate() {
        save_mask_png(m, &masks.join(format!("{i:03}.png")))?;
    }
    write_text(&dir.join("caption.txt"), &rec.bundle.prompt)?;
    rec.bundle.save(&dir.join("bundle"))?;
    let meta = InferenceMeta {
        clip_id: rec.clip_id,
        seed: rec.seed,
        backend: backend.to_string(),
        fps: rec.fps,
        num_frames: rec.frames.len(),
        top_concept: rec.bundle.top_concept.clone(),
        seg_concept: rec.bundle.seg_concept.clone(),
        prompt_truncated: rec.bundle.prompt_truncated,
        prompt_fallback: rec.bundle.prompt_fallback,
        config_hash: config_hash.map(String::from),
        error: None,
    };
    write_meta(&meta, dir)
}

/// Keeps the conditioning signals of a failed generation.
pub fn save_failure(
    clip_id: usize,
    seed: u64,
    err: &ReconstructError,
    backend: &str,
    config_hash: Option<&str>,
    dir: &Path,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    if let Some(b) = &err.bundle {
        b.save(&dir.join("bundle"))?;
    }
    let meta = InferenceMeta {
        clip_id,
        seed,
        backend: backend.to_string(),
        fps: TARGET_FPS,
        num_frames: 0,
        top_concept: err.bundle.as_ref().map(|b| b.top_concept.clone()).unwrap_or_default(),
        seg_concept: err.bundle.as_ref().map(|b| b.seg_concept.clone()).unwrap_or_default(),
        prompt_truncated: err.bundle.as_ref().is_some_and(|b| b.prompt_truncated),
        prompt_fallback: err.bundle.as_ref().is_some_and(|b| b.prompt_fallback),
        config_hash: config_hash.map(String::from),
        error: Some(err.to_string()),
    };
    write_meta(&meta, dir)
}

fn write_meta(meta: &InferenceMeta, dir: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(meta).map_err(|e| Error::Format(e.to_string()))?;
    write_atomic(&dir.join("meta.json"), text.as_bytes())
}
