//! Whitespace tokenizer over the closed vocabulary of the synthetic caption
//! grammar and the concept taxonomy.

use std::collections::{BTreeSet, HashMap};

use crate::tasks::scene::{BACKGROUND_KINDS, DIRECTIONS, FUNCTION_WORDS, OBJECT_KINDS, VERB_FORMS};
use crate::tasks::taxonomy::ConceptTaxonomy;

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
const RESERVED: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

/// Upper bound on the vocabulary size.
pub const MAX_VOCAB: usize = 512;

#[derive(Clone, Debug, PartialEq)]
pub struct Tokenizer {
    words: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Tokenizer {
    /// Reserved ids, then every grammar and taxonomy word in sorted order.
    pub fn standard() -> Self {
        let mut words: BTreeSet<String> = BTreeSet::new();
        let mut add = |s: &str| {
            for w in s.split_whitespace() {
                words.insert(w.to_string());
            }
        };
        FUNCTION_WORDS.iter().for_each(|w| add(w));
        DIRECTIONS.iter().for_each(|w| add(w));
        for k in OBJECT_KINDS {
            add(k.name);
        }
        for b in BACKGROUND_KINDS {
            add(b.name);
        }
        for (_, forms) in VERB_FORMS {
            forms.iter().for_each(|w| add(w));
        }
        for n in ConceptTaxonomy::standard().names() {
            add(n);
        }
        Self::from_words(words)
    }

    fn from_words(words: impl IntoIterator<Item = String>) -> Self {
        let words: Vec<String> = RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain(words)
            .take(MAX_VOCAB)
            .collect();
        let ids = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as u32))
            .collect();
        Self { words, ids }
    }

    pub fn vocab_size(&self) -> usize {
        self.words.len()
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        text.split_whitespace()
            .map(|w| self.ids.get(&w.to_lowercase()).copied().unwrap_or(UNK))
            .collect()
    }

    /// Joins non-reserved tokens with single spaces; stops at `EOS`.
    pub fn decode(&self, ids: &[u32]) -> String {
        let mut out: Vec<&str> = Vec::new();
        for &id in ids {
            if id == EOS {
                break;
            }
            if id == PAD || id == BOS {
                continue;
            }
            out.push(self.words.get(id as usize).map_or("<unk>", |s| s.as_str()));
        }
        out.join(" ")
    }

    pub fn word(&self, id: u32) -> Option<&str> {
        self.words.get(id as usize).map(String::as_str)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_ids_are_fixed() {
        let t = Tokenizer::standard();
        assert_eq!(t.word(PAD), Some("<pad>"));
        assert_eq!(t.word(BOS), Some("<bos>"));
        assert_eq!(t.word(EOS), Some("<eos>"));
        assert!(t.vocab_size() <= MAX_VOCAB);
    }

    #[test]
    fn caption_round_trip() {
        let t = Tokenizer::standard();
        let text = "a dog running right and a tree standing on the grass under the sky";
        let ids = t.encode(text);
        assert!(!ids.contains(&UNK));
        assert_eq!(t.decode(&ids), text);
    }

    #[test]
    fn concept_names_are_in_vocabulary() {
        let t = Tokenizer::standard();
        for n in ConceptTaxonomy::standard().names() {
            assert!(!t.encode(n).contains(&UNK), "{n}");
        }
    }

    #[test]
    fn decode_stops_at_eos() {
        let t = Tokenizer::standard();
        let mut ids = t.encode("a cat");
        ids.push(EOS);
        ids.extend(t.encode("a dog"));
        assert_eq!(t.decode(&ids), "a cat");
    }
}
