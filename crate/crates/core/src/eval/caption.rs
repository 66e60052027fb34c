//! Sentence-level caption metrics and verb accuracy.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tasks::scene::{verb_lemma, VERB_FORMS};

use super::metrics::seeded_unit;

fn tokens(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_lowercase).collect()
}

fn ngram_counts(words: &[String], n: usize) -> BTreeMap<&[String], usize> {
    let mut m = BTreeMap::new();
    if words.len() >= n {
        for g in words.windows(n) {
            *m.entry(g).or_insert(0) += 1;
        }
    }
    m
}

/// BLEU-1 through BLEU-4: geometric mean of clipped n-gram precisions up to
/// each order, times the brevity penalty against the closest reference
/// length. An order with no candidate n-grams, or no matches, scores 0.
pub fn bleu(pred: &str, refs: &[&str]) -> Result<[f64; 4]> {
    let c = tokens(pred);
    if c.is_empty() || refs.is_empty() {
        return Err(Error::domain("BLEU needs a non-empty prediction and references"));
    }
    let refs: Vec<Vec<String>> = refs.iter().map(|r| tokens(r)).collect();
    if refs.iter().any(Vec::is_empty) {
        return Err(Error::domain("empty reference caption"));
    }
    let mut precisions = [0.0; 4];
    for (i, p) in precisions.iter_mut().enumerate() {
        let n = i + 1;
        let cand = ngram_counts(&c, n);
        let total: usize = cand.values().sum();
        if total == 0 {
            continue;
        }
        let ref_counts: Vec<_> = refs.iter().map(|r| ngram_counts(r, n)).collect();
        let clipped: usize = cand
            .iter()
            .map(|(g, &cnt)| cnt.min(ref_counts.iter().map(|m| m.get(g).copied().unwrap_or(0)).max().unwrap_or(0)))
            .sum();
        *p = clipped as f64 / total as f64;
    }
    // Closest reference length; shorter wins ties.
    let r = refs
        .iter()
        .map(Vec::len)
        .min_by_key(|&l| (l.abs_diff(c.len()), l))
        .unwrap();
    let bp = if c.len() >= r { 1.0 } else { (1.0 - r as f64 / c.len() as f64).exp() };
    let mut out = [0.0; 4];
    let mut log_sum = 0.0;
    for n in 0..4 {
        if precisions[n] == 0.0 {
            break;
        }
        log_sum += precisions[n].ln();
        out[n] = bp * (log_sum / (n + 1) as f64).exp();
    }
    Ok(out)
}

/// CIDEr-D with document frequencies over a reference corpus: per-order
/// TF-IDF vectors, clipped cosine, Gaussian length penalty (σ = 6), averaged
/// over orders 1–4 and references, scaled by 10.
#[derive(Clone, Debug)]
pub struct Cider {
    df: BTreeMap<Vec<String>, f64>,
    log_docs: f64,
}

const CIDER_SIGMA: f64 = 6.0;

struct TfIdf {
    vecs: [BTreeMap<Vec<String>, f64>; 4],
    norms: [f64; 4],
    len: usize,
}

impl Cider {
    /// `corpus[i]` holds the references of sample `i`.
    pub fn new(corpus: &[Vec<String>]) -> Result<Self> {
        if corpus.is_empty() || corpus.iter().all(Vec::is_empty) {
            return Err(Error::domain("CIDEr needs a non-empty reference corpus"));
        }
        let mut df: BTreeMap<Vec<String>, f64> = BTreeMap::new();
        for refs in corpus {
            let mut seen = BTreeSet::new();
            for r in refs {
                let w = tokens(r);
                for n in 1..=4 {
                    for g in ngram_counts(&w, n).into_keys() {
                        seen.insert(g.to_vec());
                    }
                }
            }
            for g in seen {
                *df.entry(g).or_insert(0.0) += 1.0;
            }
        }
        Ok(Self {
            df,
            log_docs: (corpus.len() as f64).ln(),
        })
    }

    fn vectorize(&self, s: &str) -> TfIdf {
        let w = tokens(s);
        let mut vecs: [BTreeMap<Vec<String>, f64>; 4] = Default::default();
        let mut norms = [0.0; 4];
        for n in 0..4 {
            for (g, tf) in ngram_counts(&w, n + 1) {
                let df = self.df.get(g).copied().unwrap_or(0.0).max(1.0);
                let v = tf as f64 * (self.log_docs - df.ln());
                norms[n] += v * v;
                vecs[n].insert(g.to_vec(), v);
            }
            norms[n] = norms[n].sqrt();
        }
        TfIdf { vecs, norms, len: w.len() }
    }

    pub fn score(&self, pred: &str, refs: &[&str]) -> Result<f64> {
        if refs.is_empty() || pred.trim().is_empty() {
            return Err(Error::domain("CIDEr needs a prediction and references"));
        }
        let c = self.vectorize(pred);
        let mut total = 0.0;
        for r in refs {
            let r = self.vectorize(r);
            let delta = c.len as f64 - r.len as f64;
            let penalty = (-(delta * delta) / (2.0 * CIDER_SIGMA * CIDER_SIGMA)).exp();
            for n in 0..4 {
                let mut val: f64 = c.vecs[n]
                    .iter()
                    .filter_map(|(g, &v)| r.vecs[n].get(g).map(|&rv| v.min(rv) * rv))
                    .sum();
                if c.norms[n] != 0.0 && r.norms[n] != 0.0 {
                    val /= c.norms[n] * r.norms[n];
                }
                total += val * penalty;
            }
        }
        Ok(10.0 * total / 4.0 / refs.len() as f64)
    }
}

/// Extracts verbs from a caption.
pub trait PosTagger: Send + Sync {
    fn verbs(&self, text: &str) -> Vec<String>;
}

/// Tags every inflected form listed in the caption grammar as a verb.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LexiconTagger;

impl PosTagger for LexiconTagger {
    fn verbs(&self, text: &str) -> Vec<String> {
        tokens(text).into_iter().filter(|w| verb_lemma(w).is_some()).collect()
    }
}

pub trait WordEmbedder: Send + Sync {
    fn embed(&self, word: &str) -> Option<Vec<f64>>;
}

/// Seeded vectors where inflections of one lemma share a common component,
/// so their cosine similarity is close to `lemma_share`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LemmaEmbedder {
    pub seed: u64,
    pub dim: usize,
    pub lemma_share: f64,
}

impl Default for LemmaEmbedder {
    fn default() -> Self {
        Self {
            seed: 0,
            dim: 256,
            lemma_share: 0.9,
        }
    }
}

impl WordEmbedder for LemmaEmbedder {
    fn embed(&self, word: &str) -> Option<Vec<f64>> {
        let w = word.to_lowercase();
        let own = seeded_unit(self.seed, &format!("eval/word/{w}"), self.dim);
        let Some(lemma) = verb_lemma(&w) else {
            return Some(own);
        };
        if w == lemma {
            return Some(seeded_unit(self.seed, &format!("eval/lemma/{lemma}"), self.dim));
        }
        let shared = seeded_unit(self.seed, &format!("eval/lemma/{lemma}"), self.dim);
        let (a, b) = (self.lemma_share.sqrt(), (1.0 - self.lemma_share).sqrt());
        Some(shared.iter().zip(own).map(|(s, o)| a * s + b * o).collect())
    }
}

/// Fixed embedding table.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TableEmbedder(pub HashMap<String, Vec<f64>>);

impl WordEmbedder for TableEmbedder {
    fn embed(&self, word: &str) -> Option<Vec<f64>> {
        self.0.get(&word.to_lowercase()).cloned()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerbScore {
    pub accuracy: f64,
    /// The prediction had no verbs; accuracy is 0.
    pub no_verbs: bool,
}

pub const VERB_THRESHOLD: f64 = 0.8;

/// Fraction of predicted verbs whose best cosine similarity to a reference
/// verb exceeds `threshold`.
pub fn verb_accuracy(
    pred: &str,
    reference: &str,
    tagger: &dyn PosTagger,
    embedder: &dyn WordEmbedder,
    threshold: f64,
) -> VerbScore {
    let pv = tagger.verbs(pred);
    if pv.is_empty() {
        return VerbScore {
            accuracy: 0.0,
            no_verbs: true,
        };
    }
    let rv: Vec<Vec<f64>> = tagger.verbs(reference).iter().filter_map(|v| embedder.embed(v)).collect();
    let correct = pv
        .iter()
        .filter(|v| {
            embedder.embed(v).is_some_and(|e| {
                rv.iter()
                    .filter_map(|r| cosine(&e, r))
                    .any(|s| s > threshold)
            })
        })
        .count();
    VerbScore {
        accuracy: correct as f64 / pv.len() as f64,
        no_verbs: false,
    }
}

fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (na > 0.0 && nb > 0.0).then(|| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb))
}

/// Every verb form the lexicon tagger knows.
pub fn known_verbs() -> impl Iterator<Item = &'static str> {
    VERB_FORMS.iter().flat_map(|(_, forms)| forms.iter().copied())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bleu_identity_disjoint_and_brevity() {
        let s = "a red ball rolling left on the grass";
        assert_eq!(bleu(s, &[s]).unwrap(), [1.0; 4]);
        assert_eq!(bleu("x y z", &["a b c"]).unwrap()[0], 0.0);
        let b = bleu("a b c d", &["a b c d e"]).unwrap();
        assert!((b[0] - (1.0f64 - 5.0 / 4.0).exp()).abs() < 1e-12);
        assert!(bleu("", &["a"]).is_err());
    }

    #[test]
    fn bleu_clips_repeated_words() {
        // "the the the" against "the cat": one clipped match of three.
        let b = bleu("the the the", &["the cat"]).unwrap();
        assert!((b[0] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn cider_prefers_the_matching_caption() {
        let corpus = vec![
            vec!["a dog running on the grass".to_string()],
            vec!["a car driving on the road".to_string()],
            vec!["a fish swimming in the water".to_string()],
        ];
        let c = Cider::new(&corpus).unwrap();
        let good = c.score("a dog running on the grass", &["a dog running on the grass"]).unwrap();
        let bad = c.score("a car driving on the road", &["a dog running on the grass"]).unwrap();
        assert!(good > bad);
        assert!(bad >= 0.0);
        assert!(Cider::new(&[]).is_err());
    }

    #[test]
    fn verb_accuracy_cases() {
        let emb = LemmaEmbedder::default();
        let t = LexiconTagger;
        assert_eq!(verb_accuracy("a dog running", "a dog running", &t, &emb, VERB_THRESHOLD).accuracy, 1.0);
        assert_eq!(verb_accuracy("a dog swimming", "a dog running", &t, &emb, VERB_THRESHOLD).accuracy, 0.0);
        let none = verb_accuracy("a dog", "a dog running", &t, &emb, VERB_THRESHOLD);
        assert!(none.no_verbs && none.accuracy == 0.0);

        let mut table = HashMap::new();
        table.insert("running".to_string(), vec![1.0, 0.0]);
        table.insert("runs".to_string(), vec![0.9, (1.0f64 - 0.81).sqrt()]);
        let fixture = TableEmbedder(table);
        let s = verb_accuracy("a dog running", "the dog runs", &t, &fixture, VERB_THRESHOLD);
        assert_eq!(s.accuracy, 1.0);
    }

    #[test]
    fn inflections_share_a_lemma_direction() {
        let emb = LemmaEmbedder::default();
        let a = emb.embed("running").unwrap();
        let b = emb.embed("runs").unwrap();
        let c = emb.embed("swimming").unwrap();
        assert!(cosine(&a, &b).unwrap() > VERB_THRESHOLD);
        assert!(cosine(&a, &c).unwrap().abs() < 0.5);
    }
}
