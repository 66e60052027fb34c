//! Frozen target encoders behind interfaces, with deterministic stubs.
//!
//! The stubs stand in for pretrained vision/text encoders and a latent
//! autoencoder. They are fixed seeded projections, so they give consistent
//! alignment targets without any weights to download.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, Rng};
use crate::tensor::Tensor;
use crate::video::{resize_bilinear, Frame, VideoClip};

/// Side of the pixel grid the stub vision encoder reads.
const VISION_GRID: usize = 8;

/// Per-frame and per-caption target embeddings.
///
/// Embeddings are flat `tokens * width` vectors; each `width`-long token is
/// unit-normalized.
pub trait FrozenEncoderTargets: Send + Sync {
    fn tokens(&self) -> usize;
    fn text_tokens(&self) -> usize;
    fn width(&self) -> usize;
    fn frame_embed(&self, frame: &Frame) -> Result<Vec<f64>>;
    fn text_embed(&self, caption: &str) -> Result<Vec<f64>>;

    /// `[frames, tokens * width]`.
    fn video_embed(&self, clip: &VideoClip) -> Result<Tensor> {
        let d = self.tokens() * self.width();
        let mut data = Vec::with_capacity(clip.frames.len() * d);
        for f in &clip.frames {
            data.extend(self.frame_embed(f)?);
        }
        Tensor::new([clip.frames.len(), d], data)
    }
}

fn normalize_tokens(v: &mut [f64], width: usize) {
    for tok in v.chunks_mut(width) {
        let n = tok.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            tok.iter_mut().for_each(|x| *x /= n);
        }
    }
}

/// Columns of a seeded Gaussian matrix made orthonormal by Gram-Schmidt.
fn orthonormal_columns(rows: usize, cols: usize, rng: &mut Rng) -> Result<Tensor> {
    if cols > rows {
        return Err(Error::config(
            "encoder",
            format!("cannot build {cols} orthonormal columns in dimension {rows}"),
        ));
    }
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(cols);
    while basis.len() < cols {
        let mut v: Vec<f64> = (0..rows).map(|_| StandardNormal.sample(rng)).collect();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-8 {
            v.iter_mut().for_each(|x| *x /= n);
            basis.push(v);
        }
    }
    Ok(Tensor::from_fn([rows, cols], |i| basis[i % cols][i / cols]))
}

/// Seeded stand-in for a frozen vision/text encoder pair.
#[derive(Clone, Debug)]
pub struct StubClipEncoder {
    tokens: usize,
    text_tokens: usize,
    width: usize,
    seed: u64,
    /// `[VISION_GRID² · 3, tokens · width]`, orthonormal columns.
    vision: Tensor,
}

impl StubClipEncoder {
    pub fn new(tokens: usize, text_tokens: usize, width: usize, seed: u64) -> Result<Self> {
        if tokens == 0 || text_tokens == 0 || width == 0 {
            return Err(Error::config("encoder", "token counts and width must be positive"));
        }
        let mut rng = stream(seed, "encoder/vision");
        let vision = orthonormal_columns(VISION_GRID * VISION_GRID * 3, tokens * width, &mut rng)?;
        Ok(Self {
            tokens,
            text_tokens,
            width,
            seed,
            vision,
        })
    }

    fn word_vector(&self, word: &str) -> Vec<f64> {
        let mut rng = stream(self.seed, &format!("encoder/word/{word}"));
        (0..self.text_tokens * self.width)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect()
    }
}

/// Frame resampled to the encoder grid, centred on mid-gray.
fn grid_features(frame: &Frame) -> Result<Vec<f64>> {
    let small = if frame.height.is_multiple_of(VISION_GRID) && frame.width.is_multiple_of(VISION_GRID) && frame.height == frame.width {
        frame.downsample(frame.height / VISION_GRID)?
    } else {
        let mut data = vec![0.0; VISION_GRID * VISION_GRID * 3];
        for c in 0..3 {
            let plane = resize_bilinear(&frame.channel(c), frame.height, frame.width, VISION_GRID, VISION_GRID);
            for (i, v) in plane.into_iter().enumerate() {
                data[i * 3 + c] = v;
            }
        }
        Frame::new(VISION_GRID, VISION_GRID, data)?
    };
    Ok(small.data.iter().map(|v| v - 0.5).collect())
}

impl FrozenEncoderTargets for StubClipEncoder {
    fn tokens(&self) -> usize {
        self.tokens
    }

    fn text_tokens(&self) -> usize {
        self.text_tokens
    }

    fn width(&self) -> usize {
        self.width
    }

    fn frame_embed(&self, frame: &Frame) -> Result<Vec<f64>> {
        let x = Tensor::new([1, VISION_GRID * VISION_GRID * 3], grid_features(frame)?)?;
        let mut e = x.matmul(&self.vision)?.into_data();
        normalize_tokens(&mut e, self.width);
        Ok(e)
    }

    /// Bag of words: the sum of per-word seeded vectors.
    fn text_embed(&self, caption: &str) -> Result<Vec<f64>> {
        let mut e = vec![0.0; self.text_tokens * self.width];
        for w in caption.split_whitespace() {
            for (o, v) in e.iter_mut().zip(self.word_vector(&w.to_lowercase())) {
                *o += v;
            }
        }
        normalize_tokens(&mut e, self.width);
        Ok(e)
    }
}

/// Image autoencoder whose latent grid the blurry-video head predicts.
///
/// Latents are laid out cell-major, channel-minor: `[(h/f)·(w/f)·channels]`.
pub trait LatentCodec: Send + Sync {
    fn channels(&self) -> usize;
    /// Spatial reduction factor.
    fn factor(&self) -> usize;
    fn encode(&self, frame: &Frame) -> Result<Vec<f64>>;
    fn decode(&self, latent: &[f64], height: usize, width: usize) -> Result<Frame>;
}

/// Strided average pool followed by a seeded per-cell linear map.
/// Decoding applies the pseudo-inverse and bilinear upsampling.
#[derive(Clone, Debug)]
pub struct StubLatentCodec {
    channels: usize,
    factor: usize,
    /// `[3, channels]`.
    w: Tensor,
    /// `[channels, 3]`, left pseudo-inverse of `w`.
    w_pinv: Tensor,
}

fn invert3(m: &[f64; 9]) -> Option<[f64; 9]> {
    let [a, b, c, d, e, f, g, h, i] = *m;
    let det = a * (e * i - f * h) - b * (d * i - f * g) + c * (d * h - e * g);
    if det.abs() < 1e-12 {
        return None;
    }
    let inv = [
        e * i - f * h,
        c * h - b * i,
        b * f - c * e,
        f * g - d * i,
        a * i - c * g,
        c * d - a * f,
        d * h - e * g,
        b * g - a * h,
        a * e - b * d,
    ];
    Some(inv.map(|v| v / det))
}

impl StubLatentCodec {
    pub fn new(channels: usize, factor: usize, seed: u64) -> Result<Self> {
        if channels < 3 || factor == 0 {
            return Err(Error::config("latent", "need at least 3 channels and a positive factor"));
        }
        let mut rng = stream(seed, "encoder/latent");
        loop {
            let w = Tensor::randn([3, channels], 1.0, &mut rng);
            // pinv = Wᵀ (W Wᵀ)⁻¹
            let wwt = w.matmul(&w.transpose()?)?;
            let Some(inv) = invert3(wwt.data().try_into().unwrap()) else {
                continue;
            };
            let inv = Tensor::new([3, 3], inv.to_vec())?;
            let w_pinv = w.transpose()?.matmul(&inv)?;
            return Ok(Self {
                channels,
                factor,
                w,
                w_pinv,
            });
        }
    }
}

impl LatentCodec for StubLatentCodec {
    fn channels(&self) -> usize {
        self.channels
    }

    fn factor(&self) -> usize {
        self.factor
    }

    fn encode(&self, frame: &Frame) -> Result<Vec<f64>> {
        let small = frame.downsample(self.factor)?;
        let cells = small.height * small.width;
        let x = Tensor::new([cells, 3], small.data.iter().map(|v| v - 0.5).collect())?;
        Ok(x.matmul(&self.w)?.into_data())
    }

    fn decode(&self, latent: &[f64], height: usize, width: usize) -> Result<Frame> {
        let (h, w) = (height / self.factor, width / self.factor);
        if h * w * self.channels != latent.len() || h * self.factor != height || w * self.factor != width {
            return Err(Error::shape(format!(
                "latent of {} values does not decode to {height}x{width}",
                latent.len()
            )));
        }
        let z = Tensor::new([h * w, self.channels], latent.to_vec())?;
        let rgb = z.matmul(&self.w_pinv)?;
        let mut data = vec![0.0; height * width * 3];
        for c in 0..3 {
            let plane: Vec<f64> = (0..h * w).map(|i| rgb.data()[i * 3 + c] + 0.5).collect();
            let up = resize_bilinear(&plane, h, w, height, width);
            for (i, v) in up.into_iter().enumerate() {
                data[i * 3 + c] = v.clamp(0.0, 1.0);
            }
        }
        Frame::new(height, width, data)
    }
}

/// Everything needed to rebuild the stub encoders; stored in checkpoints so
/// later stages use the same targets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub seed: u64,
    pub tokens: usize,
    pub text_tokens: usize,
    pub width: usize,
    pub latent_channels: usize,
    pub latent_factor: usize,
}

impl EncoderSpec {
    pub fn clip(&self) -> Result<StubClipEncoder> {
        StubClipEncoder::new(self.tokens, self.text_tokens, self.width, self.seed)
    }

    pub fn codec(&self) -> Result<StubLatentCodec> {
        StubLatentCodec::new(self.latent_channels, self.latent_factor, self.seed)
    }
}
