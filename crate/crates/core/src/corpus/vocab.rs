use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::ExampleBundle;
use crate::error::{Error, Result};

pub const UNK: &str = "<unk>";

/// Token inventory; index 0 is reserved for unknown tokens.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new(words: impl IntoIterator<Item = String>) -> Self {
        let set: BTreeSet<String> = words.into_iter().filter(|w| w != UNK).collect();
        let words: Vec<String> = std::iter::once(UNK.to_string()).chain(set).collect();
        Vocabulary::from(words)
    }

    pub fn from_corpus(corpus: &[ExampleBundle]) -> Self {
        Vocabulary::new(corpus.iter().flat_map(|b| b.tokens.iter().flatten().cloned()))
    }

    fn reindex(&mut self) {
        self.index = self.words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn get(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    /// Maps unseen tokens to the unknown id.
    pub fn encode_lenient(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.get(t).unwrap_or(0)).collect()
    }

    pub fn encode_strict(&self, tokens: &[String]) -> Result<Vec<usize>> {
        tokens
            .iter()
            .map(|t| self.get(t).ok_or_else(|| Error::Data(format!("token {t:?} is not in the vocabulary"))))
            .collect()
    }
}

impl From<Vec<String>> for Vocabulary {
    fn from(words: Vec<String>) -> Self {
        let mut v = Vocabulary {
            words,
            index: HashMap::new(),
        };
        v.reindex();
        v
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.words
    }
}
