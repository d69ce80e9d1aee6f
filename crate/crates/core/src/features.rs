//! Word vocabulary plus hashed word n-gram units.
//!
//! A sentence maps to a list of row indices into an input table whose first
//! `vocab.len()` rows are words and the remaining `bucket_count` rows are
//! n-gram hash buckets. N-grams are formed over the in-vocabulary words only,
//! so an all-OOV sentence has no units at all.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::Sentence;
use crate::util::fnv1a;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocab {
    words: Vec<String>,
    counts: Vec<u64>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Keeps words seen at least `min_count` times, ordered by descending
    /// frequency and then by the word itself.
    pub fn build<'a>(sentences: impl IntoIterator<Item = &'a Sentence>, min_count: u64) -> Self {
        let mut freq: HashMap<&str, u64> = HashMap::new();
        for s in sentences {
            for t in s.tokens() {
                *freq.entry(t.as_str()).or_default() += 1;
            }
        }
        let mut entries: Vec<(&str, u64)> = freq.into_iter().filter(|&(_, c)| c >= min_count).collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let mut vocab = Vocab {
            words: entries.iter().map(|(w, _)| w.to_string()).collect(),
            counts: entries.iter().map(|&(_, c)| c).collect(),
            index: HashMap::new(),
        };
        vocab.reindex();
        vocab
    }

    pub(crate) fn reindex(&mut self) {
        self.index = self
            .words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn word(&self, i: usize) -> &str {
        &self.words[i]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }
}

pub fn ngram_bucket(words: &[&str], bucket_count: usize) -> usize {
    (fnv1a(words.join(" ").as_bytes()) % bucket_count as u64) as usize
}

/// The units of a sentence: word rows followed by n-gram rows.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Units {
    /// Vocabulary indices of the in-vocabulary words, in sentence order.
    pub words: Vec<usize>,
    /// (start position in `words`, length, input-table row) per n-gram.
    pub ngrams: Vec<(usize, usize, usize)>,
}

impl Units {
    pub fn rows(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().copied().chain(self.ngrams.iter().map(|&(_, _, r)| r))
    }

    pub fn len(&self) -> usize {
        self.words.len() + self.ngrams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Rows of the units that remain once word position `held_out` is
    /// removed: every other word and every n-gram not covering it.
    pub fn context_rows(&self, held_out: usize) -> Vec<usize> {
        let mut rows: Vec<usize> = self
            .words
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != held_out)
            .map(|(_, &w)| w)
            .collect();
        rows.extend(
            self.ngrams
                .iter()
                .filter(|&&(start, len, _)| held_out < start || held_out >= start + len)
                .map(|&(_, _, r)| r),
        );
        rows
    }
}

pub fn units(vocab: &Vocab, sentence: &Sentence, ngram_order: usize, bucket_count: usize) -> Units {
    let known: Vec<&str> = sentence
        .tokens()
        .iter()
        .filter(|t| vocab.get(t).is_some())
        .map(String::as_str)
        .collect();
    let words: Vec<usize> = known.iter().map(|t| vocab.get(t).unwrap()).collect();
    let mut ngrams = Vec::new();
    if bucket_count > 0 {
        for n in 2..=ngram_order {
            for start in 0..known.len().saturating_sub(n - 1) {
                let row = vocab.len() + ngram_bucket(&known[start..start + n], bucket_count);
                ngrams.push((start, n, row));
            }
        }
    }
    Units { words, ngrams }
}

/// Averages the given rows of a row-major table into `out`; leaves `out` at
/// zero when `rows` is empty.
pub fn average_rows(table: &[f64], dim: usize, rows: &[usize], out: &mut [f64]) {
    out.iter_mut().for_each(|x| *x = 0.0);
    if rows.is_empty() {
        return;
    }
    for &r in rows {
        for (o, v) in out.iter_mut().zip(&table[r * dim..(r + 1) * dim]) {
            *o += v;
        }
    }
    let scale = 1.0 / rows.len() as f64;
    out.iter_mut().for_each(|x| *x *= scale);
}
