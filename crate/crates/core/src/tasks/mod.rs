//! Per-clip decoupled supervision: key object, masks, concepts, caption.

pub mod annotate;
pub mod key_object;
pub mod scene;
pub mod synth;
pub mod taxonomy;

pub use annotate::{build_annotations, AnnotationClient, DetectedObject, PaletteClient, TaskAnnotations};
pub use key_object::{discover_key_object, weighted_displacement, KeyObjectRules, KeySelection, ObjectTrack};
pub use synth::{generate_synthetic_dataset, Dataset, DatasetSpec, FmriSample, Sample};
pub use taxonomy::{ConceptTaxonomy, NUM_CONCEPTS};
