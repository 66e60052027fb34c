//! Frames, binary masks and clips, plus the few resampling helpers the
//! pipeline needs.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Frames per clip: one fMRI sample covers 2 s at 3 FPS.
pub const FRAMES_PER_CLIP: usize = 6;
/// Sampling rate of the stimulus clips.
pub const SOURCE_FPS: f64 = 3.0;
/// Output rate of reconstructed videos.
pub const TARGET_FPS: f64 = 8.0;

/// RGB frame with interleaved channels in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Frame {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(Error::shape(format!(
                "frame {height}x{width}x3 needs {} values, got {}",
                height * width * 3,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for _ in 0..height * width {
            data.extend_from_slice(&rgb);
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Pixel as 8-bit RGB, rounding to nearest.
    pub fn pixel_u8(&self, y: usize, x: usize) -> [u8; 3] {
        let p = self.pixel(y, x);
        p.map(to_u8)
    }

    pub fn same_size(&self, other: &Frame) -> Result<()> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(Error::shape(format!(
                "frame sizes differ: {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(())
    }

    /// Box-filter downsampling by an integer factor.
    pub fn downsample(&self, factor: usize) -> Result<Frame> {
        if factor == 0 || !self.height.is_multiple_of(factor) || !self.width.is_multiple_of(factor) {
            return Err(Error::shape(format!(
                "{}x{} frame not divisible by {factor}",
                self.height, self.width
            )));
        }
        let (h, w) = (self.height / factor, self.width / factor);
        let mut out = vec![0.0; h * w * 3];
        let norm = 1.0 / (factor * factor) as f64;
        for y in 0..self.height {
            for x in 0..self.width {
                let o = ((y / factor) * w + x / factor) * 3;
                let i = (y * self.width + x) * 3;
                for c in 0..3 {
                    out[o + c] += self.data[i + c] * norm;
                }
            }
        }
        Frame::new(h, w, out)
    }

    /// Per-channel plane of `height * width` values.
    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.data.iter().skip(c).step_by(3).copied().collect()
    }
}

pub fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Binary mask with values in {0, 1}.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl Mask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::shape(format!(
                "mask {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::domain("mask values must be 0 or 1"));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let data = (0..height * width)
            .map(|i| u8::from(f(i / width, i % width)))
            .collect();
        Self {
            height,
            width,
            data,
        }
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x] == 1
    }

    pub fn count(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    /// Fraction of the image covered.
    pub fn area(&self) -> f64 {
        self.count() as f64 / (self.height * self.width) as f64
    }

    /// Mean `(x, y)` of set pixels; `None` for an empty mask.
    pub fn centroid(&self) -> Option<[f64; 2]> {
        let n = self.count();
        if n == 0 {
            return None;
        }
        let (mut sx, mut sy) = (0.0, 0.0);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(y, x) {
                    sx += x as f64;
                    sy += y as f64;
                }
            }
        }
        Some([sx / n as f64, sy / n as f64])
    }

    /// Majority-vote downsampling (cell set iff at least half its pixels are).
    pub fn downsample(&self, factor: usize) -> Result<Mask> {
        if factor == 0 || !self.height.is_multiple_of(factor) || !self.width.is_multiple_of(factor) {
            return Err(Error::shape(format!(
                "{}x{} mask not divisible by {factor}",
                self.height, self.width
            )));
        }
        let (h, w) = (self.height / factor, self.width / factor);
        let mut counts = vec![0usize; h * w];
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(y, x) {
                    counts[(y / factor) * w + x / factor] += 1;
                }
            }
        }
        let half = factor * factor;
        Ok(Mask {
            height: h,
            width: w,
            data: counts.into_iter().map(|c| u8::from(2 * c >= half)).collect(),
        })
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }
}

/// A fixed-length stimulus clip.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoClip {
    pub id: usize,
    pub frames: Vec<Frame>,
}

impl VideoClip {
    pub fn height(&self) -> usize {
        self.frames.first().map_or(0, |f| f.height)
    }

    pub fn width(&self) -> usize {
        self.frames.first().map_or(0, |f| f.width)
    }

    /// Index of the keyframe used for captions and the control image.
    pub fn middle_index(&self) -> usize {
        self.frames.len() / 2
    }
}

/// Bilinear resampling of a single-channel map (align-corners = false).
pub fn resize_bilinear(src: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    let mut out = vec![0.0; out_h * out_w];
    let sy = h as f64 / out_h as f64;
    let sx = w as f64 / out_w as f64;
    for oy in 0..out_h {
        let fy = ((oy as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let ty = fy - y0 as f64;
        for ox in 0..out_w {
            let fx = ((ox as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let tx = fx - x0 as f64;
            let top = src[y0 * w + x0] * (1.0 - tx) + src[y0 * w + x1] * tx;
            let bot = src[y1 * w + x0] * (1.0 - tx) + src[y1 * w + x1] * tx;
            out[oy * out_w + ox] = top * (1.0 - ty) + bot * ty;
        }
    }
    out
}

/// Matrix `M` of shape `[h·w, out_h·out_w]` with `src · M` equal to
/// [`resize_bilinear`] of `src`.
pub fn bilinear_matrix(h: usize, w: usize, out_h: usize, out_w: usize) -> Result<Tensor> {
    if h == 0 || w == 0 || out_h == 0 || out_w == 0 {
        return Err(Error::shape("bilinear resize needs non-empty grids"));
    }
    let n = h * w;
    let mut data = vec![0.0; n * out_h * out_w];
    let mut basis = vec![0.0; n];
    for i in 0..n {
        basis[i] = 1.0;
        let col = resize_bilinear(&basis, h, w, out_h, out_w);
        data[i * out_h * out_w..(i + 1) * out_h * out_w].copy_from_slice(&col);
        basis[i] = 0.0;
    }
    Tensor::new([n, out_h * out_w], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_matrix_matches_resize() {
        let src: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).sin()).collect();
        let m = bilinear_matrix(3, 4, 12, 16).unwrap();
        let row = Tensor::new([1, 12], src.clone()).unwrap();
        let via = row.matmul(&m).unwrap();
        let direct = resize_bilinear(&src, 3, 4, 12, 16);
        for (a, b) in via.data().iter().zip(&direct) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn mask_area_and_centroid() {
        let m = Mask::from_fn(4, 4, |y, x| y < 2 && x < 2);
        assert_eq!(m.count(), 4);
        assert!((m.area() - 0.25).abs() < 1e-12);
        assert_eq!(m.centroid(), Some([0.5, 0.5]));
        assert_eq!(Mask::empty(3, 3).centroid(), None);
    }

    #[test]
    fn mask_rejects_non_binary() {
        assert!(Mask::new(1, 2, vec![0, 2]).is_err());
    }

    #[test]
    fn majority_downsample() {
        let m = Mask::from_fn(4, 4, |y, x| y < 2 && x < 3);
        let d = m.downsample(2).unwrap();
        assert_eq!(d.data, vec![1, 1, 0, 0]);
    }

    #[test]
    fn bilinear_preserves_constants() {
        let out = resize_bilinear(&[0.3; 4], 2, 2, 8, 8);
        assert!(out.iter().all(|v| (v - 0.3).abs() < 1e-12));
    }

    #[test]
    fn frame_downsample_averages() {
        let mut f = Frame::filled(2, 2, [0.0; 3]);
        f.set_pixel(0, 0, [1.0, 1.0, 1.0]);
        let d = f.downsample(2).unwrap();
        assert_eq!(d.data, vec![0.25; 3]);
    }
}
