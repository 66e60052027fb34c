//! Per-clip supervision targets built from an annotation client.

use std::collections::HashMap;

use sha2::{Digest, Sha256};

use super::key_object::{discover_key_object, KeyObjectRules, ObjectTrack};
use super::scene::{BACKGROUND_KINDS, OBJECT_KINDS};
use super::taxonomy::ConceptTaxonomy;
use crate::error::{Error, Result};
use crate::text::Tokenizer;
use crate::video::{Frame, Mask, VideoClip};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DetectedObject {
    pub name: String,
    pub concept: String,
}

/// Captioner, object detector and grounded segmenter behind one interface.
///
/// Real vision-language and segmentation backends are not deterministic; the
/// bundled [`PaletteClient`] is.
pub trait AnnotationClient: Send + Sync {
    fn caption(&self, frame: &Frame) -> Result<String>;
    fn detect_objects(&self, frame: &Frame) -> Result<Vec<DetectedObject>>;
    fn segment(&self, frame: &Frame, name: &str) -> Result<Mask>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskAnnotations {
    /// Concept name of the key object.
    pub key_object: String,
    pub key_masks: Vec<Mask>,
    /// Multi-hot over the taxonomy.
    pub concepts: Vec<f64>,
    pub caption_tokens: Vec<u32>,
    pub caption_text: String,
}

/// Exact-colour client for the synthetic renderer: every object and
/// background kind has a unique palette colour, so detection and
/// segmentation are colour lookups. Captions come from a registry keyed by
/// frame content, filled by whoever rendered the frame.
#[derive(Clone, Debug, Default)]
pub struct PaletteClient {
    captions: HashMap<[u8; 32], String>,
}

impl PaletteClient {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register_caption(&mut self, frame: &Frame, caption: impl Into<String>) {
        self.captions.insert(frame_digest(frame), caption.into());
    }

    fn palette() -> impl Iterator<Item = (&'static str, &'static str, [u8; 3])> {
        BACKGROUND_KINDS
            .iter()
            .map(|b| (b.name, b.concept, b.color))
            .chain(OBJECT_KINDS.iter().map(|k| (k.name, k.concept, k.color)))
    }
}

fn frame_digest(frame: &Frame) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update((frame.height as u64).to_le_bytes());
    h.update((frame.width as u64).to_le_bytes());
    for y in 0..frame.height {
        for x in 0..frame.width {
            h.update(frame.pixel_u8(y, x));
        }
    }
    h.finalize().into()
}

impl AnnotationClient for PaletteClient {
    fn caption(&self, frame: &Frame) -> Result<String> {
        if let Some(c) = self.captions.get(&frame_digest(frame)) {
            return Ok(c.clone());
        }
        let objects = self.detect_objects(frame)?;
        let things: Vec<String> = objects
            .iter()
            .filter(|o| OBJECT_KINDS.iter().any(|k| k.name == o.name))
            .map(|o| format!("a {}", o.name))
            .collect();
        let ground = objects
            .iter()
            .find_map(|o| BACKGROUND_KINDS.iter().find(|b| b.name == o.name && !b.top));
        let mut text = if things.is_empty() {
            "a scene".to_string()
        } else {
            things.join(" and ")
        };
        if let Some(g) = ground {
            text.push_str(&format!(" {} the {}", g.preposition, g.name));
        }
        Ok(text)
    }

    fn detect_objects(&self, frame: &Frame) -> Result<Vec<DetectedObject>> {
        let mut present = std::collections::HashSet::new();
        for y in 0..frame.height {
            for x in 0..frame.width {
                present.insert(frame.pixel_u8(y, x));
            }
        }
        Ok(Self::palette()
            .filter(|(_, _, c)| present.contains(c))
            .map(|(name, concept, _)| DetectedObject {
                name: name.to_string(),
                concept: concept.to_string(),
            })
            .collect())
    }

    fn segment(&self, frame: &Frame, name: &str) -> Result<Mask> {
        let (_, _, color) = Self::palette()
            .find(|(n, _, _)| *n == name)
            .ok_or_else(|| Error::Backend(format!("segmenter has no prompt `{name}`")))?;
        Ok(Mask::from_fn(frame.height, frame.width, |y, x| {
            frame.pixel_u8(y, x) == color
        }))
    }
}

/// Runs caption → detection → segmentation → key-object discovery for one
/// clip. The caption comes from the middle frame.
pub fn build_annotations(
    clip: &VideoClip,
    client: &dyn AnnotationClient,
    taxonomy: &ConceptTaxonomy,
    tokenizer: &Tokenizer,
    rules: &KeyObjectRules,
) -> Result<TaskAnnotations> {
    if clip.frames.is_empty() {
        return Err(Error::InsufficientFrames { needed: 1, got: 0 });
    }
    let wrap = |frame: usize| move |e: Error| Error::Client {
        frame,
        message: e.to_string(),
    };

    let mid = clip.middle_index();
    let caption_text = client.caption(&clip.frames[mid]).map_err(wrap(mid))?;

    // Union of detections across frames, in order of first appearance.
    let mut objects: Vec<DetectedObject> = Vec::new();
    for (i, frame) in clip.frames.iter().enumerate() {
        for obj in client.detect_objects(frame).map_err(wrap(i))? {
            if !objects.iter().any(|o| o.name == obj.name) {
                objects.push(obj);
            }
        }
    }
    if objects.is_empty() {
        return Err(Error::NoObjects);
    }
    let concept_names: Vec<&str> = objects.iter().map(|o| o.concept.as_str()).collect();
    let concepts = taxonomy.encode(&concept_names)?;

    let mut tracks = Vec::with_capacity(objects.len());
    for obj in &objects {
        let mut masks = Vec::with_capacity(clip.frames.len());
        for (i, frame) in clip.frames.iter().enumerate() {
            masks.push(client.segment(frame, &obj.name).map_err(wrap(i))?);
        }
        tracks.push(ObjectTrack::from_masks(obj.concept.clone(), masks)?);
    }
    let key = discover_key_object(&tracks, taxonomy, rules)?;
    let key_masks = tracks.swap_remove(key.track_index).per_frame_masks;

    Ok(TaskAnnotations {
        key_object: key.concept,
        key_masks,
        concepts,
        caption_tokens: tokenizer.encode(&caption_text),
        caption_text,
    })
}
