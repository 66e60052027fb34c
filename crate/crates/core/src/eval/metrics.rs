//! Pixel, mask and retrieval metrics.

use rand::seq::index::sample as sample_indices;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::encoders::FrozenEncoderTargets;
use crate::error::{Error, Result};
use crate::rng::{stream, Rng};
use crate::tensor::Tensor;
use crate::video::{Frame, Mask};

/// PSNR reported for identical inputs.
pub const PSNR_CAP: f64 = 100.0;

/// Probability vector over a fixed label set.
pub trait ClassifierBackend: Send + Sync {
    fn num_labels(&self) -> usize;
    fn frame_probs(&self, frame: &Frame) -> Result<Vec<f64>>;
    fn video_probs(&self, frames: &[Frame]) -> Result<Vec<f64>>;
}

/// Seeded linear classifier over an 8×8 colour thumbnail.
#[derive(Clone, Debug)]
pub struct StubClassifier {
    labels: usize,
    temperature: f64,
    /// `[8·8·3, labels]`.
    w: Tensor,
}

const THUMB: usize = 8;

impl StubClassifier {
    pub fn new(labels: usize, seed: u64) -> Result<Self> {
        if labels < 2 {
            return Err(Error::config("classifier", "need at least two labels"));
        }
        let mut rng = stream(seed, "eval/classifier");
        let d = THUMB * THUMB * 3;
        Ok(Self {
            labels,
            temperature: 0.1,
            w: Tensor::randn([d, labels], 1.0 / (d as f64).sqrt(), &mut rng),
        })
    }

    fn features(frame: &Frame) -> Result<Vec<f64>> {
        if !frame.height.is_multiple_of(THUMB) || !frame.width.is_multiple_of(THUMB) || frame.height != frame.width {
            return Err(Error::shape(format!(
                "stub classifier reads square frames divisible by {THUMB}, got {}x{}",
                frame.height, frame.width
            )));
        }
        Ok(frame.downsample(frame.height / THUMB)?.data.iter().map(|v| v - 0.5).collect())
    }

    fn probs(&self, features: Vec<f64>) -> Result<Vec<f64>> {
        let x = Tensor::new([1, features.len()], features)?;
        let logits = x.matmul(&self.w)?.scale(1.0 / self.temperature);
        Ok(softmax(logits.data()))
    }
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

impl ClassifierBackend for StubClassifier {
    fn num_labels(&self) -> usize {
        self.labels
    }

    fn frame_probs(&self, frame: &Frame) -> Result<Vec<f64>> {
        self.probs(Self::features(frame)?)
    }

    /// Classifies the frame-mean thumbnail.
    fn video_probs(&self, frames: &[Frame]) -> Result<Vec<f64>> {
        let first = frames.first().ok_or(Error::InsufficientFrames { needed: 1, got: 0 })?;
        let mut acc = Self::features(first)?;
        for f in &frames[1..] {
            for (a, v) in acc.iter_mut().zip(Self::features(f)?) {
                *a += v;
            }
        }
        let n = frames.len() as f64;
        self.probs(acc.into_iter().map(|v| v / n).collect())
    }
}

/// N-way top-K success rate: the ground-truth class (argmax of `gt_probs`)
/// competes with `n − 1` distinct random distractors; a trial succeeds when
/// it ranks within the top `k` predicted probabilities. Ties are broken
/// uniformly at random.
pub fn nway_topk(gt_probs: &[f64], pred_probs: &[f64], n: usize, k: usize, repeats: usize, rng: &mut Rng) -> Result<f64> {
    let labels = gt_probs.len();
    if pred_probs.len() != labels {
        return Err(Error::shape(format!("{} vs {} class probabilities", labels, pred_probs.len())));
    }
    if n < 2 || n > labels {
        return Err(Error::domain(format!("{n}-way test over {labels} labels")));
    }
    if k == 0 || k >= n {
        return Err(Error::domain(format!("top-{k} must lie in 1..{n}")));
    }
    if repeats == 0 {
        return Err(Error::domain("need at least one repeat"));
    }
    let gt = crate::decoupler::model::argmax(gt_probs);
    let target = pred_probs[gt];
    let mut hits = 0usize;
    for _ in 0..repeats {
        let (mut above, mut tied) = (0usize, 0usize);
        for i in sample_indices(rng, labels - 1, n - 1) {
            let c = if i >= gt { i + 1 } else { i };
            let p = pred_probs[c];
            if p > target {
                above += 1;
            } else if p == target {
                tied += 1;
            }
        }
        let rank = above + rng.random_range(0..=tied);
        if rank < k {
            hits += 1;
        }
    }
    Ok(hits as f64 / repeats as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PccScore {
    pub score: f64,
    /// Adjacent pairs skipped because an embedding had zero norm.
    pub excluded_pairs: usize,
}

fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some((a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)).clamp(-1.0, 1.0))
}

/// Mean cosine similarity of adjacent embeddings.
pub fn pcc_of_embeddings(embeddings: &[Vec<f64>]) -> Result<PccScore> {
    if embeddings.len() < 2 {
        return Err(Error::InsufficientFrames {
            needed: 2,
            got: embeddings.len(),
        });
    }
    let sims: Vec<Option<f64>> = embeddings.windows(2).map(|w| cosine(&w[0], &w[1])).collect();
    let kept: Vec<f64> = sims.iter().flatten().copied().collect();
    if kept.is_empty() {
        return Err(Error::domain("every adjacent pair has a zero-norm embedding"));
    }
    Ok(PccScore {
        score: kept.iter().sum::<f64>() / kept.len() as f64,
        excluded_pairs: sims.len() - kept.len(),
    })
}

pub fn clip_pcc(frames: &[Frame], embedder: &dyn FrozenEncoderTargets) -> Result<PccScore> {
    let e = frames.iter().map(|f| embedder.frame_embed(f)).collect::<Result<Vec<_>>>()?;
    pcc_of_embeddings(&e)
}

fn check_pair(a: &Frame, b: &Frame) -> Result<()> {
    a.same_size(b)?;
    if a.data.iter().chain(&b.data).any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::domain("pixel values outside [0, 1]"));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsnrScore {
    pub db: f64,
    /// The MSE was zero or the value exceeded the cap.
    pub capped: bool,
}

pub fn psnr(a: &Frame, b: &Frame) -> Result<PsnrScore> {
    check_pair(a, b)?;
    let mse = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.data.len() as f64;
    let db = if mse == 0.0 { f64::INFINITY } else { 10.0 * (1.0 / mse).log10() };
    Ok(PsnrScore {
        db: db.min(PSNR_CAP),
        capped: db >= PSNR_CAP,
    })
}

const SSIM_WIN: usize = 11;
const SSIM_SIGMA: f64 = 1.5;

fn gaussian_kernel() -> [f64; SSIM_WIN] {
    let mut k = [0.0; SSIM_WIN];
    let c = (SSIM_WIN / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Separable Gaussian filter, valid region only.
fn filter_valid(src: &[f64], h: usize, w: usize, k: &[f64; SSIM_WIN]) -> Vec<f64> {
    let (oh, ow) = (h - SSIM_WIN + 1, w - SSIM_WIN + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..SSIM_WIN).map(|i| k[i] * src[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WIN).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Gaussian-window SSIM (11×11, σ = 1.5, K1 = 0.01, K2 = 0.03, range 1),
/// averaged over the valid window positions and the three channels.
pub fn ssim(a: &Frame, b: &Frame) -> Result<f64> {
    check_pair(a, b)?;
    let (h, w) = (a.height, a.width);
    if h < SSIM_WIN || w < SSIM_WIN {
        return Err(Error::shape(format!("SSIM needs frames of at least {SSIM_WIN}x{SSIM_WIN}")));
    }
    let k = gaussian_kernel();
    let c1 = 0.01f64.powi(2);
    let c2 = 0.03f64.powi(2);
    let mut total = 0.0;
    for c in 0..3 {
        let x = a.channel(c);
        let y = b.channel(c);
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let mx = filter_valid(&x, h, w, &k);
        let my = filter_valid(&y, h, w, &k);
        let sxx = filter_valid(&xx, h, w, &k);
        let syy = filter_valid(&yy, h, w, &k);
        let sxy = filter_valid(&xy, h, w, &k);
        let mut sum = 0.0;
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            sum += ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
        }
        total += sum / mx.len() as f64;
    }
    Ok(total / 3.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiceScore {
    pub value: f64,
    /// Both masks were empty; the value is 1 by convention.
    pub both_empty: bool,
}

/// `2|A∩B| / (|A| + |B|)` over binary maps.
pub fn dice_values(pred: &[f64], gt: &[f64]) -> Result<DiceScore> {
    if pred.len() != gt.len() {
        return Err(Error::shape(format!("masks of {} and {} pixels", pred.len(), gt.len())));
    }
    if let Some(v) = pred.iter().chain(gt).find(|&&v| v != 0.0 && v != 1.0) {
        return Err(Error::domain(format!("mask value {v} is not binary")));
    }
    let a: f64 = pred.iter().sum();
    let b: f64 = gt.iter().sum();
    if a + b == 0.0 {
        return Ok(DiceScore {
            value: 1.0,
            both_empty: true,
        });
    }
    let inter: f64 = pred.iter().zip(gt).map(|(p, g)| p * g).sum();
    Ok(DiceScore {
        value: 2.0 * inter / (a + b),
        both_empty: false,
    })
}

pub fn dice(pred: &Mask, gt: &Mask) -> Result<DiceScore> {
    if (pred.height, pred.width) != (gt.height, gt.width) {
        return Err(Error::shape(format!(
            "masks {}x{} and {}x{}",
            pred.height, pred.width, gt.height, gt.width
        )));
    }
    dice_values(&pred.as_f64(), &gt.as_f64())
}

/// Seeded standard-normal vector, used by stub embedders.
pub(crate) fn seeded_unit(seed: u64, name: &str, dim: usize) -> Vec<f64> {
    let mut rng = stream(seed, name);
    let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nway_perfect_and_hopeless() {
        let mut rng = stream(1, "t");
        let mut gt = vec![0.0; 64];
        gt[7] = 1.0;
        for (n, k) in [(2, 1), (50, 1), (50, 5), (64, 63)] {
            assert_eq!(nway_topk(&gt, &gt, n, k, 100, &mut rng).unwrap(), 1.0);
        }
        // With 50 labels every class is a candidate in a 50-way test.
        let mut gt50 = vec![0.0; 50];
        gt50[7] = 1.0;
        let mut wrong = vec![0.0; 50];
        wrong[8] = 1.0;
        assert_eq!(nway_topk(&gt50, &wrong, 50, 1, 100, &mut rng).unwrap(), 0.0);
        let wrong = vec![0.0; 64];
        assert!(nway_topk(&gt, &wrong, 65, 1, 1, &mut rng).is_err());
        assert!(nway_topk(&gt, &wrong, 2, 2, 1, &mut rng).is_err());
    }

    #[test]
    fn pcc_cases() {
        let a = vec![1.0, 0.0];
        let b = vec![0.0, 1.0];
        assert_eq!(pcc_of_embeddings(&[a.clone(), a.clone(), a.clone()]).unwrap().score, 1.0);
        assert_eq!(pcc_of_embeddings(&[a.clone(), b.clone(), a.clone(), b.clone()]).unwrap().score, 0.0);
        let z = pcc_of_embeddings(&[a.clone(), vec![0.0, 0.0], a.clone(), a.clone()]).unwrap();
        assert_eq!((z.score, z.excluded_pairs), (1.0, 2));
        assert!(pcc_of_embeddings(&[a]).is_err());
    }

    #[test]
    fn psnr_of_constant_offset_is_twenty() {
        let a = Frame::filled(16, 16, [0.4; 3]);
        let b = Frame::filled(16, 16, [0.5; 3]);
        let p = psnr(&a, &b).unwrap();
        assert!((p.db - 20.0).abs() < 1e-6);
        assert!(!p.capped);
        let same = psnr(&a, &a).unwrap();
        assert_eq!((same.db, same.capped), (PSNR_CAP, true));
    }

    #[test]
    fn ssim_identity_and_symmetry() {
        let mut rng = stream(2, "ssim");
        let a = Frame::new(16, 16, (0..768).map(|_| rng.random::<f64>()).collect()).unwrap();
        let b = Frame::new(16, 16, (0..768).map(|_| rng.random::<f64>()).collect()).unwrap();
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
        assert_eq!(ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
        assert!(ssim(&a, &b).unwrap() < 0.5);
        assert!(ssim(&Frame::filled(8, 8, [0.0; 3]), &Frame::filled(8, 8, [0.0; 3])).is_err());
    }

    #[test]
    fn dice_cases() {
        let a = Mask::from_fn(10, 20, |_, x| x < 10);
        let b = Mask::from_fn(10, 20, |_, x| (5..15).contains(&x));
        assert_eq!(dice(&a, &b).unwrap().value, 0.5);
        assert_eq!(dice(&a, &a).unwrap().value, 1.0);
        let c = Mask::from_fn(10, 20, |_, x| x >= 10);
        assert_eq!(dice(&a, &c).unwrap().value, 0.0);
        let e = dice(&Mask::empty(2, 2), &Mask::empty(2, 2)).unwrap();
        assert!(e.both_empty && e.value == 1.0);
        assert!(dice_values(&[0.5], &[1.0]).is_err());
    }

    #[test]
    fn classifier_probs_sum_to_one() {
        let c = StubClassifier::new(64, 3).unwrap();
        let f = Frame::filled(32, 32, [0.1, 0.8, 0.3]);
        let p = c.frame_probs(&f).unwrap();
        assert_eq!(p.len(), 64);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert_eq!(c.video_probs(&[f.clone(), f.clone()]).unwrap(), p);
    }
}
