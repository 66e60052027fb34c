use std::collections::HashMap;

use crate::error::{Error, Result};

pub const NUM_CONCEPTS: usize = 51;

const BUILTIN: &str = include_str!("../../data/concepts.tsv");

/// The fixed, ordered concept label set used for multi-label recognition.
#[derive(Clone, Debug, PartialEq)]
pub struct ConceptTaxonomy {
    names: Vec<String>,
    index: HashMap<String, usize>,
    priority: Vec<bool>,
    background: Vec<bool>,
}

impl ConceptTaxonomy {
    /// The shipped 51-concept list with its priority and background tags.
    pub fn standard() -> Self {
        Self::parse(BUILTIN).expect("bundled taxonomy is valid")
    }

    /// Parses `index<TAB>name[<TAB>priority|background]` lines; `#` starts a
    /// comment line.
    pub fn parse(text: &str) -> Result<Self> {
        let mut names = Vec::new();
        let mut priority = Vec::new();
        let mut background = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            let bad = || Error::Format(format!("taxonomy line {}: `{line}`", lineno + 1));
            let idx: usize = cols.first().and_then(|c| c.parse().ok()).ok_or_else(bad)?;
            if idx != names.len() {
                return Err(bad());
            }
            let name = cols.get(1).ok_or_else(bad)?.to_string();
            let role = cols.get(2).copied().unwrap_or("");
            priority.push(role == "priority");
            background.push(role == "background");
            if !matches!(role, "" | "priority" | "background") {
                return Err(bad());
            }
            names.push(name);
        }
        Self::from_parts(names, priority, background)
    }

    pub fn from_parts(names: Vec<String>, priority: Vec<bool>, background: Vec<bool>) -> Result<Self> {
        if names.len() != NUM_CONCEPTS {
            return Err(Error::Format(format!(
                "taxonomy must have {NUM_CONCEPTS} names, got {}",
                names.len()
            )));
        }
        let mut index = HashMap::new();
        for (i, n) in names.iter().enumerate() {
            if index.insert(n.clone(), i).is_some() {
                return Err(Error::Format(format!("duplicate concept `{n}`")));
            }
        }
        if priority.iter().zip(&background).any(|(&p, &b)| p && b) {
            return Err(Error::Format("priority and background sets overlap".into()));
        }
        Ok(Self {
            names,
            index,
            priority,
            background,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.names[idx]
    }

    pub fn is_priority(&self, name: &str) -> bool {
        self.index_of(name).is_some_and(|i| self.priority[i])
    }

    pub fn is_background(&self, name: &str) -> bool {
        self.index_of(name).is_some_and(|i| self.background[i])
    }

    pub fn priority_set(&self) -> impl Iterator<Item = &str> {
        self.names
            .iter()
            .zip(&self.priority)
            .filter(|(_, &p)| p)
            .map(|(n, _)| n.as_str())
    }

    pub fn background_set(&self) -> impl Iterator<Item = &str> {
        self.names
            .iter()
            .zip(&self.background)
            .filter(|(_, &b)| b)
            .map(|(n, _)| n.as_str())
    }

    /// Multi-hot vector with a 1 at each named concept.
    pub fn encode(&self, names: &[impl AsRef<str>]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.len()];
        let mut unknown = Vec::new();
        for n in names {
            match self.index_of(n.as_ref()) {
                Some(i) => out[i] = 1.0,
                None => unknown.push(n.as_ref().to_string()),
            }
        }
        if !unknown.is_empty() {
            return Err(Error::UnknownConcept(unknown));
        }
        Ok(out)
    }

    /// Concept names set in a multi-hot vector, in taxonomy order.
    pub fn decode(&self, multi_hot: &[f64]) -> Result<Vec<String>> {
        if multi_hot.len() != self.len() {
            return Err(Error::shape(format!(
                "concept vector has {} entries, expected {}",
                multi_hot.len(),
                self.len()
            )));
        }
        Ok(multi_hot
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > 0.5)
            .map(|(i, _)| self.names[i].clone())
            .collect())
    }
}
