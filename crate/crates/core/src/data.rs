//! On-disk dataset layout.
//!
//! ```text
//! <root>/dataset.toml
//! <root>/clip_0000/frames/000.png .. 005.png   8-bit RGB
//! <root>/clip_0000/masks/000.png  .. 005.png   8-bit gray, 0 or 255
//! <root>/clip_0000/annotations                 TOML
//! <root>/clip_0000/voxels                      "NVOX", u32 version, u64 len, f32 LE
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tasks::synth::{Dataset, DatasetSpec, FmriSample, Sample};
use crate::tasks::{ConceptTaxonomy, TaskAnnotations};
use crate::text::Tokenizer;
use crate::video::{to_u8, Frame, Mask, VideoClip};

pub const VOXEL_MAGIC: [u8; 4] = *b"NVOX";
pub const VOXEL_VERSION: u32 = 1;
const VOXEL_HEADER: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnnotationFile {
    clip_id: usize,
    subject_id: u32,
    key_object: String,
    concepts: Vec<String>,
    caption: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IndexFile {
    num_clips: usize,
    spec: Option<DatasetSpec>,
}

pub fn clip_dir(root: &Path, id: usize) -> PathBuf {
    root.join(format!("clip_{id:04}"))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn image_err(path: &Path) -> impl FnOnce(image::ImageError) -> Error + '_ {
    move |source| Error::Image {
        path: path.to_path_buf(),
        source,
    }
}

pub fn save_frame_png(frame: &Frame, path: &Path) -> Result<()> {
    let bytes: Vec<u8> = frame.data.iter().map(|&v| to_u8(v)).collect();
    let img = image::RgbImage::from_raw(frame.width as u32, frame.height as u32, bytes)
        .ok_or_else(|| Error::shape("frame buffer size"))?;
    img.save(path).map_err(image_err(path))
}

pub fn load_frame_png(path: &Path) -> Result<Frame> {
    let img = image::open(path).map_err(image_err(path))?.to_rgb8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(|b| b as f64 / 255.0).collect();
    Frame::new(h as usize, w as usize, data)
}

pub fn save_mask_png(mask: &Mask, path: &Path) -> Result<()> {
    save_gray_png(&mask.as_f64(), mask.height, mask.width, path)
}

/// Writes a `[0, 1]` map as 8-bit grayscale.
pub fn save_gray_png(values: &[f64], height: usize, width: usize, path: &Path) -> Result<()> {
    let bytes: Vec<u8> = values.iter().map(|&v| to_u8(v)).collect();
    let img = image::GrayImage::from_raw(width as u32, height as u32, bytes)
        .ok_or_else(|| Error::shape("mask buffer size"))?;
    img.save(path).map_err(image_err(path))
}

/// Pixels at or above mid-gray are foreground.
pub fn load_mask_png(path: &Path) -> Result<Mask> {
    let img = image::open(path).map_err(image_err(path))?.to_luma8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(|b| u8::from(b >= 128)).collect();
    Mask::new(h as usize, w as usize, data)
}

pub fn encode_voxels(voxels: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(VOXEL_HEADER + 4 * voxels.len());
    out.extend_from_slice(&VOXEL_MAGIC);
    out.extend_from_slice(&VOXEL_VERSION.to_le_bytes());
    out.extend_from_slice(&(voxels.len() as u64).to_le_bytes());
    for &v in voxels {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_voxels(bytes: &[u8]) -> Result<Vec<f64>> {
    if bytes.len() < VOXEL_HEADER || bytes[..4] != VOXEL_MAGIC {
        return Err(Error::Format("voxel file lacks the NVOX header".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VOXEL_VERSION {
        return Err(Error::Format(format!("unsupported voxel file version {version}")));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = &bytes[VOXEL_HEADER..];
    if body.len() != len * 4 {
        return Err(Error::Format(format!(
            "voxel file declares {len} values but holds {} bytes",
            body.len()
        )));
    }
    Ok(body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect())
}

pub fn write_sample(sample: &Sample, taxonomy: &ConceptTaxonomy, dir: &Path) -> Result<()> {
    let frames_dir = dir.join("frames");
    let masks_dir = dir.join("masks");
    create_dir(&frames_dir)?;
    create_dir(&masks_dir)?;
    for (i, f) in sample.clip.frames.iter().enumerate() {
        save_frame_png(f, &frames_dir.join(format!("{i:03}.png")))?;
    }
    for (i, m) in sample.annotations.key_masks.iter().enumerate() {
        save_mask_png(m, &masks_dir.join(format!("{i:03}.png")))?;
    }
    let ann = AnnotationFile {
        clip_id: sample.fmri.clip_id,
        subject_id: sample.fmri.subject_id,
        key_object: sample.annotations.key_object.clone(),
        concepts: taxonomy
            .decode(&sample.annotations.concepts)?
            .into_iter().collect(),
        caption: sample.annotations.caption_text.clone(),
    };
    let text = toml::to_string(&ann).map_err(|e| Error::Format(e.to_string()))?;
    write(&dir.join("annotations"), text)?;
    write(&dir.join("voxels"), encode_voxels(&sample.fmri.voxels))
}

pub fn write_dataset(dataset: &Dataset, spec: Option<&DatasetSpec>, root: &Path) -> Result<()> {
    create_dir(root)?;
    let taxonomy = ConceptTaxonomy::standard();
    for s in &dataset.samples {
        write_sample(s, &taxonomy, &clip_dir(root, s.fmri.clip_id))?;
    }
    let index = IndexFile {
        num_clips: dataset.len(),
        spec: spec.cloned(),
    };
    let text = toml::to_string(&index).map_err(|e| Error::Format(e.to_string()))?;
    write(&root.join("dataset.toml"), text)
}

/// `*.png` files directly under `dir`, sorted by name.
pub fn numbered_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "png"))
        .collect();
    files.sort();
    Ok(files)
}

pub fn read_sample(dir: &Path, taxonomy: &ConceptTaxonomy, tokenizer: &Tokenizer) -> Result<Sample> {
    let text = String::from_utf8(read(&dir.join("annotations"))?)
        .map_err(|e| Error::Format(format!("{}: {e}", dir.display())))?;
    let ann: AnnotationFile =
        toml::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", dir.join("annotations").display())))?;

    let frames = numbered_pngs(&dir.join("frames"))?
        .iter()
        .map(|p| load_frame_png(p))
        .collect::<Result<Vec<_>>>()?;
    let masks = numbered_pngs(&dir.join("masks"))?
        .iter()
        .map(|p| load_mask_png(p))
        .collect::<Result<Vec<_>>>()?;
    if frames.len() != crate::video::FRAMES_PER_CLIP || masks.len() != frames.len() {
        return Err(Error::Format(format!(
            "{}: expected {} frames and masks, found {} and {}",
            dir.display(),
            crate::video::FRAMES_PER_CLIP,
            frames.len(),
            masks.len()
        )));
    }
    for f in &frames[1..] {
        f.same_size(&frames[0])?;
    }

    let names: Vec<&str> = ann.concepts.iter().map(String::as_str).collect();
    let annotations = TaskAnnotations {
        concepts: taxonomy.encode(&names)?,
        caption_tokens: tokenizer.encode(&ann.caption),
        caption_text: ann.caption,
        key_object: ann.key_object,
        key_masks: masks,
    };
    let voxels = decode_voxels(&read(&dir.join("voxels"))?)?;
    Ok(Sample {
        fmri: FmriSample {
            voxels,
            clip_id: ann.clip_id,
            subject_id: ann.subject_id,
        },
        clip: VideoClip {
            id: ann.clip_id,
            frames,
        },
        annotations,
    })
}

/// Reads every `clip_*` directory under `root`, in name order.
pub fn read_dataset(root: &Path) -> Result<Dataset> {
    let taxonomy = ConceptTaxonomy::standard();
    let tokenizer = Tokenizer::standard();
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_dir()
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("clip_"))
        })
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Format(format!("{}: no clip directories", root.display())));
    }
    let samples = dirs
        .iter()
        .map(|d| read_sample(d, &taxonomy, &tokenizer))
        .collect::<Result<Vec<_>>>()?;
    let v = samples[0].fmri.voxels.len();
    if samples.iter().any(|s| s.fmri.voxels.len() != v) {
        return Err(Error::Format("voxel vectors differ in length".into()));
    }
    Ok(Dataset { samples })
}
