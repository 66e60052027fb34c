//! Synthetic stand-in for a paired fMRI/video corpus.
//!
//! Clips show coloured squares and discs moving in straight lines over a
//! two-region background, so every track, mask and caption is known exactly.
//! Voxels are a fixed random linear read-out of the downsampled clip plus
//! Gaussian noise, which guarantees a decodable signal.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::annotate::{build_annotations, PaletteClient, TaskAnnotations};
use super::key_object::{KeyObjectRules, ObjectTrack};
use super::scene::{background_kind, describe_motion, object_kind, BACKGROUND_KINDS, OBJECT_KINDS};
use super::taxonomy::ConceptTaxonomy;
use crate::error::{Error, Result};
use crate::rng::{stream, Rng};
use crate::text::Tokenizer;
use crate::video::{Frame, Mask, VideoClip, FRAMES_PER_CLIP};

/// Spatial size of the pixel features the voxels read out.
pub const FEATURE_GRID: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSpec {
    pub num_clips: usize,
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub voxels: usize,
    pub noise_std: f64,
    pub max_objects: usize,
    pub min_object_size: usize,
    pub max_object_size: usize,
    pub max_speed: i32,
    pub subject_id: u32,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            num_clips: 8,
            seed: 7,
            height: 32,
            width: 32,
            frames: FRAMES_PER_CLIP,
            voxels: 2048,
            noise_std: 0.1,
            max_objects: 3,
            min_object_size: 7,
            max_object_size: 12,
            max_speed: 3,
            subject_id: 1,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_clips", self.num_clips),
            ("height", self.height),
            ("width", self.width),
            ("voxels", self.voxels),
            ("max_objects", self.max_objects),
            ("min_object_size", self.min_object_size),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if self.frames != FRAMES_PER_CLIP {
            return Err(Error::config(
                "frames",
                format!("clips have exactly {FRAMES_PER_CLIP} frames, got {}", self.frames),
            ));
        }
        for (field, v) in [("height", self.height), ("width", self.width)] {
            if v % FEATURE_GRID != 0 || v < 16 {
                return Err(Error::config(field, "must be a multiple of 8 and at least 16"));
            }
        }
        if self.max_object_size < self.min_object_size || self.max_object_size >= self.height.min(self.width) {
            return Err(Error::config("max_object_size", "must lie in [min_object_size, frame size)"));
        }
        if self.max_speed < 0 {
            return Err(Error::config("max_speed", "must be non-negative"));
        }
        if !self.noise_std.is_finite() || self.noise_std < 0.0 {
            return Err(Error::config("noise_std", "must be finite and non-negative"));
        }
        Ok(())
    }

    /// Length of the pixel feature vector the voxels are read out from.
    pub fn feature_dim(&self) -> usize {
        self.frames * FEATURE_GRID * FEATURE_GRID * 3
    }
}

/// One preprocessed fMRI sample.
#[derive(Clone, Debug, PartialEq)]
pub struct FmriSample {
    pub voxels: Vec<f64>,
    pub clip_id: usize,
    pub subject_id: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub fmri: FmriSample,
    pub clip: VideoClip,
    pub annotations: TaskAnnotations,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn voxel_dim(&self) -> usize {
        self.samples.first().map_or(0, |s| s.fmri.voxels.len())
    }

    pub fn frame_size(&self) -> (usize, usize) {
        self.samples
            .first()
            .map_or((0, 0), |s| (s.clip.height(), s.clip.width()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    Square,
    Disc,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlacedObject {
    pub kind: &'static str,
    pub shape: Shape,
    pub size: usize,
    /// Top-left corner `(x, y)` in the first frame.
    pub start: [i32; 2],
    /// Pixels per frame.
    pub velocity: [i32; 2],
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub top: &'static str,
    pub bottom: &'static str,
    /// First row of the bottom region.
    pub horizon: usize,
    /// Drawn in order; later objects occlude earlier ones.
    pub objects: Vec<PlacedObject>,
}

/// Ground truth produced alongside the rendered frames.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedScene {
    pub clip: VideoClip,
    /// `(name, track)` for every visible background region and object.
    pub tracks: Vec<(String, ObjectTrack)>,
    pub caption: String,
}

fn color(rgb: [u8; 3]) -> [f64; 3] {
    rgb.map(|c| c as f64 / 255.0)
}

pub fn render_scene(scene: &SceneSpec, height: usize, width: usize, frames: usize, id: usize) -> Result<RenderedScene> {
    let top = background_kind(scene.top).ok_or_else(|| Error::domain(format!("unknown background `{}`", scene.top)))?;
    let bottom =
        background_kind(scene.bottom).ok_or_else(|| Error::domain(format!("unknown background `{}`", scene.bottom)))?;
    let kinds = scene
        .objects
        .iter()
        .map(|o| object_kind(o.kind).ok_or_else(|| Error::domain(format!("unknown object `{}`", o.kind))))
        .collect::<Result<Vec<_>>>()?;

    let mut clip_frames = Vec::with_capacity(frames);
    // owner[f][pixel] = region index: 0 top, 1 bottom, 2.. objects
    let mut owners = Vec::with_capacity(frames);
    for f in 0..frames {
        let mut owner: Vec<usize> = (0..height * width)
            .map(|i| if i / width < scene.horizon { 0 } else { 1 })
            .collect();
        for (k, obj) in scene.objects.iter().enumerate() {
            let x0 = obj.start[0] + obj.velocity[0] * f as i32;
            let y0 = obj.start[1] + obj.velocity[1] * f as i32;
            let s = obj.size as i32;
            let r = s as f64 / 2.0;
            for y in y0.max(0)..(y0 + s).min(height as i32) {
                for x in x0.max(0)..(x0 + s).min(width as i32) {
                    let inside = match obj.shape {
                        Shape::Square => true,
                        Shape::Disc => {
                            let dx = (x - x0) as f64 + 0.5 - r;
                            let dy = (y - y0) as f64 + 0.5 - r;
                            dx * dx + dy * dy <= r * r
                        }
                    };
                    if inside {
                        owner[y as usize * width + x as usize] = k + 2;
                    }
                }
            }
        }
        let mut frame = Frame::filled(height, width, [0.0; 3]);
        for (i, &o) in owner.iter().enumerate() {
            let rgb = match o {
                0 => top.color,
                1 => bottom.color,
                k => kinds[k - 2].color,
            };
            frame.set_pixel(i / width, i % width, color(rgb));
        }
        clip_frames.push(frame);
        owners.push(owner);
    }

    let mut tracks = Vec::new();
    let regions = [(top.name, top.concept), (bottom.name, bottom.concept)]
        .into_iter()
        .chain(kinds.iter().map(|k| (k.name, k.concept)));
    for (region, (name, concept)) in regions.enumerate() {
        let masks: Vec<Mask> = owners
            .iter()
            .map(|owner| Mask::from_fn(height, width, |y, x| owner[y * width + x] == region))
            .collect();
        if masks.iter().all(|m| m.count() == 0) {
            continue;
        }
        tracks.push((name.to_string(), ObjectTrack::from_masks(concept, masks)?));
    }

    let parts: Vec<String> = scene
        .objects
        .iter()
        .zip(&kinds)
        .map(|(o, k)| {
            let (verb, dir) = describe_motion(k, o.velocity);
            match dir {
                Some(d) => format!("a {} {verb} {d}", k.name),
                None => format!("a {} {verb}", k.name),
            }
        })
        .collect();
    let mut caption = if parts.is_empty() {
        "a scene".to_string()
    } else {
        parts.join(" and ")
    };
    caption.push_str(&format!(" {} the {} {} the {}", bottom.preposition, bottom.name, top.preposition, top.name));

    Ok(RenderedScene {
        clip: VideoClip {
            id,
            frames: clip_frames,
        },
        tracks,
        caption,
    })
}

/// Draws a random scene whose objects stay fully inside the frame.
pub fn sample_scene(spec: &DatasetSpec, rng: &mut Rng) -> SceneSpec {
    let tops: Vec<_> = BACKGROUND_KINDS.iter().filter(|b| b.top).collect();
    let bottoms: Vec<_> = BACKGROUND_KINDS.iter().filter(|b| !b.top).collect();
    let top = if rng.random_bool(0.8) { tops[0] } else { tops[rng.random_range(0..tops.len())] };
    let bottom = bottoms[rng.random_range(0..bottoms.len())];
    let horizon = rng.random_range(spec.height / 3..=2 * spec.height / 3);

    let n = rng.random_range(1..=spec.max_objects.min(OBJECT_KINDS.len()));
    let mut kinds: Vec<&_> = OBJECT_KINDS.iter().collect();
    kinds.shuffle(rng);
    let span = spec.frames.saturating_sub(1) as i32;
    let objects = kinds
        .into_iter()
        .take(n)
        .map(|k| {
            let size = rng.random_range(spec.min_object_size..=spec.max_object_size);
            let mut velocity = if rng.random_bool(0.25) {
                [0, 0]
            } else {
                [
                    rng.random_range(-spec.max_speed..=spec.max_speed),
                    rng.random_range(-spec.max_speed..=spec.max_speed),
                ]
            };
            let mut start = [0i32; 2];
            for (axis, extent) in [spec.width, spec.height].into_iter().enumerate() {
                let room = extent as i32 - size as i32;
                while velocity[axis].abs() * span > room {
                    velocity[axis] -= velocity[axis].signum();
                }
                let travel = velocity[axis] * span;
                let lo = (-travel).max(0);
                let hi = room - travel.max(0);
                start[axis] = rng.random_range(lo..=hi);
            }
            PlacedObject {
                kind: k.name,
                shape: if rng.random_bool(0.5) { Shape::Square } else { Shape::Disc },
                size,
                start,
                velocity,
            }
        })
        .collect();
    SceneSpec {
        top: top.name,
        bottom: bottom.name,
        horizon,
        objects,
    }
}

/// Fixed read-out from clip pixels to voxels for one subject.
#[derive(Clone, Debug)]
pub struct VoxelReadout {
    /// `[feature_dim, voxels]`, row-major.
    weights: Vec<f64>,
    feature_dim: usize,
    voxels: usize,
}

impl VoxelReadout {
    pub fn new(spec: &DatasetSpec) -> Self {
        let feature_dim = spec.feature_dim();
        let mut rng = stream(spec.seed, &format!("voxel-map/{}", spec.subject_id));
        let std = (1.0 / feature_dim as f64).sqrt();
        let weights = (0..feature_dim * spec.voxels)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * std
            })
            .collect();
        Self {
            weights,
            feature_dim,
            voxels: spec.voxels,
        }
    }

    /// Downsampled frames mapped to `[-1, 1]`, concatenated.
    pub fn features(clip: &VideoClip) -> Result<Vec<f64>> {
        let mut out = Vec::new();
        for f in &clip.frames {
            let d = f.downsample(f.height / FEATURE_GRID)?;
            out.extend(d.data.iter().map(|v| 2.0 * v - 1.0));
        }
        Ok(out)
    }

    pub fn read(&self, clip: &VideoClip, noise_std: f64, rng: &mut Rng) -> Result<Vec<f64>> {
        let feat = Self::features(clip)?;
        if feat.len() != self.feature_dim {
            return Err(Error::shape("clip does not match the read-out feature size"));
        }
        let mut v = vec![0.0; self.voxels];
        for (i, &x) in feat.iter().enumerate() {
            let row = &self.weights[i * self.voxels..(i + 1) * self.voxels];
            for (o, w) in v.iter_mut().zip(row) {
                *o += x * w;
            }
        }
        for o in &mut v {
            let z: f64 = StandardNormal.sample(rng);
            // Stored on disk as f32; keep the in-memory value identical.
            *o = (*o + noise_std * z) as f32 as f64;
        }
        Ok(v)
    }
}

pub fn generate_synthetic_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let taxonomy = ConceptTaxonomy::standard();
    let tokenizer = Tokenizer::standard();
    let rules = KeyObjectRules::default();
    let readout = VoxelReadout::new(spec);
    let mut scene_rng = stream(spec.seed, "data/scenes");
    let mut noise_rng = stream(spec.seed, "data/noise");

    let mut samples = Vec::with_capacity(spec.num_clips);
    for id in 0..spec.num_clips {
        let scene = sample_scene(spec, &mut scene_rng);
        let rendered = render_scene(&scene, spec.height, spec.width, spec.frames, id)?;
        let mut client = PaletteClient::new();
        let mid = rendered.clip.middle_index();
        client.register_caption(&rendered.clip.frames[mid], rendered.caption.clone());
        let annotations = build_annotations(&rendered.clip, &client, &taxonomy, &tokenizer, &rules)?;
        let voxels = readout.read(&rendered.clip, spec.noise_std, &mut noise_rng)?;
        samples.push(Sample {
            fmri: FmriSample {
                voxels,
                clip_id: id,
                subject_id: spec.subject_id,
            },
            clip: rendered.clip,
            annotations,
        });
    }
    Ok(Dataset { samples })
}
