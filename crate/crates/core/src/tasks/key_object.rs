//! Rule-based key-object discovery.
//!
//! Tracks are ranked by inter-frame centroid displacement, boosted for
//! priority concepts (people, animals). Background concepts and tracks
//! covering more than half the image are never chosen while any other
//! candidate exists; when nothing survives the filters the largest background
//! track is the fallback.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::taxonomy::ConceptTaxonomy;
use crate::error::{Error, Result};
use crate::video::Mask;

/// One object's masks, centroids and areas across the frames of a clip.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectTrack {
    pub concept: String,
    pub per_frame_masks: Vec<Mask>,
    /// `(x, y)` in pixels.
    pub per_frame_centroids: Vec<[f64; 2]>,
    /// Fraction of the image area, in `[0, 1]`.
    pub per_frame_areas: Vec<f64>,
}

impl ObjectTrack {
    /// Derives centroids and areas from the masks. A frame where the object
    /// is fully hidden reuses the nearest visible centroid.
    pub fn from_masks(concept: impl Into<String>, masks: Vec<Mask>) -> Result<Self> {
        let raw: Vec<Option<[f64; 2]>> = masks.iter().map(Mask::centroid).collect();
        let Some(first) = raw.iter().flatten().next().copied() else {
            return Err(Error::domain("object is not visible in any frame"));
        };
        let mut last = first;
        let centroids = raw
            .iter()
            .map(|c| {
                if let Some(c) = c {
                    last = *c;
                }
                last
            })
            .collect();
        let areas = masks.iter().map(Mask::area).collect();
        Ok(Self {
            concept: concept.into(),
            per_frame_masks: masks,
            per_frame_centroids: centroids,
            per_frame_areas: areas,
        })
    }

    pub fn frames(&self) -> usize {
        self.per_frame_centroids.len()
    }

    pub fn mean_area(&self) -> f64 {
        if self.per_frame_areas.is_empty() {
            return 0.0;
        }
        self.per_frame_areas.iter().sum::<f64>() / self.per_frame_areas.len() as f64
    }

    /// Sum of Euclidean centroid steps between consecutive frames.
    pub fn path_length(&self) -> f64 {
        self.per_frame_centroids
            .windows(2)
            .map(|w| ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt())
            .sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KeyObjectRules {
    /// Displacement multiplier for priority concepts.
    pub priority_multiplier: f64,
    /// Tracks with a larger mean area are filtered out.
    pub max_area: f64,
}

impl Default for KeyObjectRules {
    fn default() -> Self {
        Self {
            priority_multiplier: 2.0,
            max_area: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeySelection {
    pub concept: String,
    pub track_index: usize,
}

pub fn weighted_displacement(
    track: &ObjectTrack,
    taxonomy: &ConceptTaxonomy,
    rules: &KeyObjectRules,
) -> Result<f64> {
    if track.frames() < 2 {
        return Err(Error::InsufficientFrames {
            needed: 2,
            got: track.frames(),
        });
    }
    let mult = if taxonomy.is_priority(&track.concept) {
        rules.priority_multiplier
    } else {
        1.0
    };
    Ok(track.path_length() * mult)
}

pub fn discover_key_object(
    tracks: &[ObjectTrack],
    taxonomy: &ConceptTaxonomy,
    rules: &KeyObjectRules,
) -> Result<KeySelection> {
    if tracks.is_empty() {
        return Err(Error::NoObjects);
    }
    let tax_index = |t: &ObjectTrack| taxonomy.index_of(&t.concept).unwrap_or(usize::MAX);

    let mut survivors = Vec::new();
    for (i, t) in tracks.iter().enumerate() {
        if taxonomy.is_background(&t.concept) || t.mean_area() > rules.max_area {
            continue;
        }
        let score = weighted_displacement(t, taxonomy, rules)?;
        survivors.push((i, score, taxonomy.is_priority(&t.concept)));
    }

    let chosen = if survivors.is_empty() {
        // Fallback: largest background track, else largest track of any kind.
        let pool: Vec<usize> = {
            let bg: Vec<usize> = (0..tracks.len())
                .filter(|&i| taxonomy.is_background(&tracks[i].concept))
                .collect();
            if bg.is_empty() {
                (0..tracks.len()).collect()
            } else {
                bg
            }
        };
        pool.into_iter()
            .min_by(|&a, &b| {
                descending(tracks[a].mean_area(), tracks[b].mean_area())
                    .then(tax_index(&tracks[a]).cmp(&tax_index(&tracks[b])))
                    .then(a.cmp(&b))
            })
            .expect("non-empty pool")
    } else {
        let any_priority = survivors.iter().any(|s| s.2);
        survivors
            .into_iter()
            .filter(|s| s.2 || !any_priority)
            .min_by(|a, b| {
                descending(a.1, b.1)
                    .then(tax_index(&tracks[a.0]).cmp(&tax_index(&tracks[b.0])))
                    .then(a.0.cmp(&b.0))
            })
            .map(|s| s.0)
            .expect("non-empty survivors")
    };

    Ok(KeySelection {
        concept: tracks[chosen].concept.clone(),
        track_index: chosen,
    })
}

fn descending(a: f64, b: f64) -> Ordering {
    b.partial_cmp(&a).unwrap_or(Ordering::Equal)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Square of side `side` with top-left corners following `corners`.
    fn square_track(concept: &str, corners: &[(usize, usize)], side: usize, size: usize) -> ObjectTrack {
        let masks = corners
            .iter()
            .map(|&(x0, y0)| {
                Mask::from_fn(size, size, |y, x| {
                    (x0..x0 + side).contains(&x) && (y0..y0 + side).contains(&y)
                })
            })
            .collect();
        ObjectTrack::from_masks(concept, masks).unwrap()
    }

    fn rules() -> KeyObjectRules {
        KeyObjectRules::default()
    }

    #[test]
    fn static_object_has_zero_displacement() {
        let tax = ConceptTaxonomy::standard();
        let t = square_track("human", &[(2, 2), (2, 2), (2, 2)], 3, 16);
        assert_eq!(weighted_displacement(&t, &tax, &rules()).unwrap(), 0.0);
    }

    #[test]
    fn three_four_five_displacement_and_priority_boost() {
        let tax = ConceptTaxonomy::standard();
        let car = square_track("vehicle", &[(0, 0), (3, 4)], 1, 16);
        assert_eq!(weighted_displacement(&car, &tax, &rules()).unwrap(), 5.0);
        let person = square_track("human", &[(0, 0), (3, 4)], 1, 16);
        assert_eq!(weighted_displacement(&person, &tax, &rules()).unwrap(), 10.0);
    }

    #[test]
    fn single_frame_track_is_rejected() {
        let tax = ConceptTaxonomy::standard();
        let t = square_track("human", &[(0, 0)], 1, 8);
        assert!(matches!(
            weighted_displacement(&t, &tax, &rules()),
            Err(Error::InsufficientFrames { .. })
        ));
    }

    #[test]
    fn priority_beats_faster_non_priority() {
        let tax = ConceptTaxonomy::standard();
        let person = square_track("human", &[(0, 0), (1, 0), (2, 0)], 2, 32);
        let car = square_track("vehicle", &[(0, 10), (8, 10), (16, 10)], 2, 32);
        let sel = discover_key_object(&[car, person], &tax, &rules()).unwrap();
        assert_eq!(sel.concept, "human");
        assert_eq!(sel.track_index, 1);
    }

    #[test]
    fn oversized_objects_are_filtered() {
        let tax = ConceptTaxonomy::standard();
        // 60% coverage on a 10x10 image: a 10x6 block.
        let dog_masks = (0..3)
            .map(|_| Mask::from_fn(10, 10, |y, _| y < 6))
            .collect();
        let dog = ObjectTrack::from_masks("animal", dog_masks).unwrap();
        let chair = square_track("furniture", &[(0, 7), (1, 7), (2, 7)], 3, 10);
        assert!((chair.mean_area() - 0.09).abs() < 1e-12);
        let sel = discover_key_object(&[dog, chair], &tax, &rules()).unwrap();
        assert_eq!(sel.concept, "furniture");
    }

    #[test]
    fn all_background_falls_back_to_largest() {
        let tax = ConceptTaxonomy::standard();
        let sky = ObjectTrack::from_masks(
            "climate/atmosphere component",
            (0..2).map(|_| Mask::from_fn(10, 10, |y, _| y < 3)).collect(),
        )
        .unwrap();
        let ocean = ObjectTrack::from_masks(
            "water body",
            (0..2).map(|_| Mask::from_fn(10, 10, |y, _| y >= 3)).collect(),
        )
        .unwrap();
        let sel = discover_key_object(&[sky, ocean], &tax, &rules()).unwrap();
        assert_eq!(sel.concept, "water body");
        assert_eq!(sel.track_index, 1);
    }

    #[test]
    fn empty_track_list_is_an_error() {
        let tax = ConceptTaxonomy::standard();
        assert!(matches!(
            discover_key_object(&[], &tax, &rules()),
            Err(Error::NoObjects)
        ));
    }

    #[test]
    fn ties_prefer_lower_taxonomy_index() {
        let tax = ConceptTaxonomy::standard();
        let plant = square_track("plant", &[(0, 0), (2, 0)], 2, 16);
        let vehicle = square_track("vehicle", &[(0, 8), (2, 8)], 2, 16);
        let sel = discover_key_object(&[plant.clone(), vehicle.clone()], &tax, &rules()).unwrap();
        assert_eq!(sel.concept, "vehicle");
        let sel = discover_key_object(&[vehicle, plant], &tax, &rules()).unwrap();
        assert_eq!(sel.concept, "vehicle");
    }

    #[test]
    fn hidden_frame_reuses_previous_centroid() {
        let masks = vec![
            Mask::from_fn(4, 4, |y, x| y == 1 && x == 1),
            Mask::empty(4, 4),
            Mask::from_fn(4, 4, |y, x| y == 1 && x == 3),
        ];
        let t = ObjectTrack::from_masks("toy", masks).unwrap();
        assert_eq!(t.per_frame_centroids[1], [1.0, 1.0]);
        assert_eq!(t.path_length(), 2.0);
    }
}
