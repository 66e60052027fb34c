//! Object kinds, backgrounds and the caption grammar of the synthetic scenes.

/// A foreground object kind the renderer can draw.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectKind {
    pub name: &'static str,
    pub concept: &'static str,
    pub color: [u8; 3],
    pub slow_verb: &'static str,
    pub fast_verb: &'static str,
    pub still_verb: &'static str,
}

/// A background region kind; `top` regions sit above the horizon.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BackgroundKind {
    pub name: &'static str,
    pub concept: &'static str,
    pub color: [u8; 3],
    pub top: bool,
    pub preposition: &'static str,
}

const fn obj(
    name: &'static str,
    concept: &'static str,
    color: [u8; 3],
    slow_verb: &'static str,
    fast_verb: &'static str,
    still_verb: &'static str,
) -> ObjectKind {
    ObjectKind {
        name,
        concept,
        color,
        slow_verb,
        fast_verb,
        still_verb,
    }
}

pub const OBJECT_KINDS: &[ObjectKind] = &[
    obj("person", "human", [230, 57, 70], "walking", "running", "standing"),
    obj("child", "human", [255, 150, 110], "walking", "running", "sitting"),
    obj("dog", "animal", [150, 90, 40], "walking", "running", "sitting"),
    obj("cat", "animal", [240, 160, 30], "walking", "running", "sitting"),
    obj("bird", "animal", [250, 230, 60], "flying", "flying", "perching"),
    obj("fish", "fish", [255, 110, 200], "swimming", "swimming", "floating"),
    obj("turtle", "reptile", [70, 130, 60], "crawling", "crawling", "resting"),
    obj("car", "vehicle", [30, 30, 200], "driving", "speeding", "parked"),
    obj("boat", "vehicle", [210, 210, 255], "sailing", "sailing", "floating"),
    obj("airplane", "flying vehicle", [160, 160, 160], "flying", "flying", "parked"),
    obj("chair", "furniture", [120, 60, 140], "sliding", "sliding", "standing"),
    obj("tree", "plant", [20, 120, 20], "swaying", "swaying", "standing"),
    obj("flower", "plant", [255, 0, 255], "swaying", "swaying", "blooming"),
    obj("ball", "sports equipment", [255, 255, 255], "rolling", "bouncing", "resting"),
    obj("house", "building", [170, 80, 60], "moving", "moving", "standing"),
    obj("cup", "container", [0, 200, 200], "sliding", "sliding", "resting"),
    obj("lamp", "light source", [255, 255, 160], "swinging", "swinging", "glowing"),
    obj("phone", "device", [60, 60, 60], "sliding", "sliding", "resting"),
];

pub const BACKGROUND_KINDS: &[BackgroundKind] = &[
    BackgroundKind {
        name: "sky",
        concept: "climate/atmosphere component",
        color: [135, 206, 235],
        top: true,
        preposition: "under",
    },
    BackgroundKind {
        name: "snow",
        concept: "weather phenomenon",
        color: [240, 240, 250],
        top: true,
        preposition: "under",
    },
    BackgroundKind {
        name: "ocean",
        concept: "water body",
        color: [0, 70, 140],
        top: false,
        preposition: "in",
    },
    BackgroundKind {
        name: "grass",
        concept: "landscape feature",
        color: [90, 170, 80],
        top: false,
        preposition: "on",
    },
    BackgroundKind {
        name: "sand",
        concept: "soil/substrate",
        color: [220, 200, 150],
        top: false,
        preposition: "on",
    },
    BackgroundKind {
        name: "rock",
        concept: "rock/mineral",
        color: [110, 100, 95],
        top: false,
        preposition: "on",
    },
    BackgroundKind {
        name: "road",
        concept: "roadway",
        color: [80, 80, 80],
        top: false,
        preposition: "on",
    },
];

pub const DIRECTIONS: &[&str] = &["left", "right", "up", "down"];
pub const FUNCTION_WORDS: &[&str] = &["a", "and", "the", "in", "on", "under"];

/// Verb lemmas with the surface forms the lexicon tagger recognises.
pub const VERB_FORMS: &[(&str, &[&str])] = &[
    ("walk", &["walk", "walks", "walking", "walked"]),
    ("run", &["run", "runs", "running", "ran"]),
    ("stand", &["stand", "stands", "standing", "stood"]),
    ("sit", &["sit", "sits", "sitting", "sat"]),
    ("fly", &["fly", "flies", "flying", "flew"]),
    ("perch", &["perch", "perches", "perching", "perched"]),
    ("swim", &["swim", "swims", "swimming", "swam"]),
    ("float", &["float", "floats", "floating", "floated"]),
    ("crawl", &["crawl", "crawls", "crawling", "crawled"]),
    ("rest", &["rest", "rests", "resting", "rested"]),
    ("drive", &["drive", "drives", "driving", "drove"]),
    ("speed", &["speed", "speeds", "speeding", "sped"]),
    ("park", &["park", "parks", "parking", "parked"]),
    ("sail", &["sail", "sails", "sailing", "sailed"]),
    ("slide", &["slide", "slides", "sliding", "slid"]),
    ("sway", &["sway", "sways", "swaying", "swayed"]),
    ("bloom", &["bloom", "blooms", "blooming", "bloomed"]),
    ("roll", &["roll", "rolls", "rolling", "rolled"]),
    ("bounce", &["bounce", "bounces", "bouncing", "bounced"]),
    ("move", &["move", "moves", "moving", "moved"]),
    ("swing", &["swing", "swings", "swinging", "swung"]),
    ("glow", &["glow", "glows", "glowing", "glowed"]),
];

pub fn object_kind(name: &str) -> Option<&'static ObjectKind> {
    OBJECT_KINDS.iter().find(|k| k.name == name)
}

pub fn background_kind(name: &str) -> Option<&'static BackgroundKind> {
    BACKGROUND_KINDS.iter().find(|k| k.name == name)
}

pub fn verb_lemma(word: &str) -> Option<&'static str> {
    VERB_FORMS
        .iter()
        .find(|(_, forms)| forms.contains(&word))
        .map(|(lemma, _)| *lemma)
}

/// Verb and optional direction describing a per-frame velocity.
pub fn describe_motion(kind: &ObjectKind, velocity: [i32; 2]) -> (&'static str, Option<&'static str>) {
    let [vx, vy] = velocity;
    if vx == 0 && vy == 0 {
        return (kind.still_verb, None);
    }
    let speed = ((vx * vx + vy * vy) as f64).sqrt();
    let verb = if speed > 2.0 {
        kind.fast_verb
    } else {
        kind.slow_verb
    };
    let dir = if vx.abs() >= vy.abs() {
        if vx > 0 {
            "right"
        } else {
            "left"
        }
    } else if vy > 0 {
        "down"
    } else {
        "up"
    };
    (verb, Some(dir))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::taxonomy::ConceptTaxonomy;
    use std::collections::HashSet;

    #[test]
    fn palette_is_consistent_with_taxonomy() {
        let tax = ConceptTaxonomy::standard();
        let mut colors = HashSet::new();
        for k in OBJECT_KINDS {
            assert!(tax.index_of(k.concept).is_some(), "{}", k.concept);
            assert!(colors.insert(k.color), "duplicate color for {}", k.name);
            for v in [k.slow_verb, k.fast_verb, k.still_verb] {
                assert!(verb_lemma(v).is_some(), "{v} missing from lexicon");
            }
        }
        for b in BACKGROUND_KINDS {
            assert!(tax.index_of(b.concept).is_some());
            assert!(colors.insert(b.color), "duplicate color for {}", b.name);
        }
    }

    #[test]
    fn motion_words() {
        let dog = object_kind("dog").unwrap();
        assert_eq!(describe_motion(dog, [0, 0]), ("sitting", None));
        assert_eq!(describe_motion(dog, [1, 0]), ("walking", Some("right")));
        assert_eq!(describe_motion(dog, [0, -3]), ("running", Some("up")));
    }
}
