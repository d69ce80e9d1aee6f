//! Joint byte-pair-encoding over both sides of a parallel corpus.
//!
//! Words are split into characters with an end-of-word marker glued to the
//! final character, and the most frequent adjacent symbol pair is merged
//! repeatedly. Output uses the `@@` continuation suffix on every non-final
//! subword; tokens with a protected prefix (domain tags) are never split.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Sentence, TAG_SIGIL};
use crate::error::{Error, Result};
use crate::util::{read_json, write_json};

pub const END_OF_WORD: &str = "</w>";
pub const CONTINUATION: &str = "@@";
pub const DEFAULT_VOCAB_LIMIT: usize = 1_000;
const FORMAT_VERSION: u32 = 1;
const MIN_PAIR_FREQUENCY: u64 = 2;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BpeModelFile {
    version: u32,
    vocab_limit: usize,
    end_of_word_marker: String,
    protected_prefixes: Vec<String>,
    merges: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BpeModel {
    vocab_limit: usize,
    protected_prefixes: Vec<String>,
    merges: Vec<(String, String)>,
    ranks: HashMap<(String, String), usize>,
}

type Pair = (String, String);

fn word_symbols(word: &str) -> Vec<String> {
    let mut symbols: Vec<String> = word.chars().map(String::from).collect();
    if let Some(last) = symbols.last_mut() {
        last.push_str(END_OF_WORD);
    }
    symbols
}

fn is_protected(token: &str, prefixes: &[String]) -> bool {
    prefixes.iter().any(|p| token.starts_with(p.as_str()))
}

fn merge_symbols(symbols: &[String], pair: &Pair) -> Vec<String> {
    let mut out = Vec::with_capacity(symbols.len());
    let mut i = 0;
    while i < symbols.len() {
        if i + 1 < symbols.len() && symbols[i] == pair.0 && symbols[i + 1] == pair.1 {
            out.push(format!("{}{}", pair.0, pair.1));
            i += 2;
        } else {
            out.push(symbols[i].clone());
            i += 1;
        }
    }
    out
}

impl BpeModel {
    pub fn new(merges: Vec<(String, String)>, vocab_limit: usize, protected_prefixes: Vec<String>) -> Self {
        let ranks = merges
            .iter()
            .enumerate()
            .map(|(i, p)| (p.clone(), i))
            .collect();
        BpeModel {
            vocab_limit,
            protected_prefixes,
            merges,
            ranks,
        }
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn vocab_limit(&self) -> usize {
        self.vocab_limit
    }

    pub fn protected_prefixes(&self) -> &[String] {
        &self.protected_prefixes
    }

    /// Segments a single word into subwords (marker stripped, no `@@`).
    pub fn segment_word(&self, word: &str) -> Vec<String> {
        let mut symbols = word_symbols(word);
        loop {
            let best = symbols
                .windows(2)
                .filter_map(|w| {
                    self.ranks
                        .get(&(w[0].clone(), w[1].clone()))
                        .map(|&r| (r, w[0].clone(), w[1].clone()))
                })
                .min();
            match best {
                Some((_, l, r)) => symbols = merge_symbols(&symbols, &(l, r)),
                None => break,
            }
        }
        if let Some(last) = symbols.last_mut() {
            let stripped = last.strip_suffix(END_OF_WORD).unwrap_or(last).to_owned();
            *last = stripped;
        }
        symbols
    }

    pub fn apply(&self, sentence: &Sentence) -> Sentence {
        let mut out = Vec::new();
        for token in sentence.tokens() {
            if is_protected(token, &self.protected_prefixes) {
                out.push(token.clone());
                continue;
            }
            let pieces = self.segment_word(token);
            let n = pieces.len();
            for (i, piece) in pieces.into_iter().enumerate() {
                if i + 1 < n {
                    out.push(format!("{piece}{CONTINUATION}"));
                } else {
                    out.push(piece);
                }
            }
        }
        Sentence::from_tokens(out).expect("subwords are non-empty and whitespace-free")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(
            path,
            &BpeModelFile {
                version: FORMAT_VERSION,
                vocab_limit: self.vocab_limit,
                end_of_word_marker: END_OF_WORD.into(),
                protected_prefixes: self.protected_prefixes.clone(),
                merges: self.merges.clone(),
            },
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: BpeModelFile = read_json(path)?;
        if file.end_of_word_marker != END_OF_WORD {
            return Err(Error::Format(format!(
                "unsupported end-of-word marker {:?}",
                file.end_of_word_marker
            )));
        }
        Ok(BpeModel::new(file.merges, file.vocab_limit, file.protected_prefixes))
    }
}

/// Learns merges over the combined word-frequency table of both sides.
///
/// Merging stops once `inventory + merges == vocab_limit` or when no pair
/// occurs at least twice. Ties in pair frequency go to the lexicographically
/// smallest (left, right) pair.
pub fn learn_joint<'a>(
    source_side: impl IntoIterator<Item = &'a Sentence>,
    target_side: impl IntoIterator<Item = &'a Sentence>,
    vocab_limit: usize,
) -> Result<BpeModel> {
    let protected = vec![TAG_SIGIL.to_owned()];
    let mut freqs: BTreeMap<&str, u64> = BTreeMap::new();
    for sentence in source_side.into_iter().chain(target_side) {
        for token in sentence.tokens() {
            if !is_protected(token, &protected) {
                *freqs.entry(token.as_str()).or_default() += 1;
            }
        }
    }

    let mut words: Vec<(Vec<String>, u64)> = freqs
        .iter()
        .map(|(w, &f)| (word_symbols(w), f))
        .collect();
    let inventory: BTreeSet<&String> = words.iter().flat_map(|(s, _)| s.iter()).collect();
    let inventory = inventory.len();
    if vocab_limit < inventory {
        return Err(Error::Argument(format!(
            "vocab_limit {vocab_limit} is smaller than the character inventory ({inventory} symbols)"
        )));
    }

    let mut counts: HashMap<Pair, u64> = HashMap::new();
    let mut occurs: HashMap<Pair, BTreeSet<usize>> = HashMap::new();
    for (idx, (symbols, f)) in words.iter().enumerate() {
        for w in symbols.windows(2) {
            let p = (w[0].clone(), w[1].clone());
            *counts.entry(p.clone()).or_default() += f;
            occurs.entry(p).or_default().insert(idx);
        }
    }
    let mut queue: BTreeSet<(Reverse<u64>, Pair)> =
        counts.iter().map(|(p, &c)| (Reverse(c), p.clone())).collect();

    let mut merges = Vec::new();
    while inventory + merges.len() < vocab_limit {
        let Some((Reverse(count), best)) = queue.pop_first() else {
            break;
        };
        if count < MIN_PAIR_FREQUENCY {
            break;
        }
        let mut delta: HashMap<Pair, i64> = HashMap::new();
        let affected = occurs.remove(&best).unwrap_or_default();
        for idx in affected {
            let (symbols, f) = &words[idx];
            let f = *f as i64;
            for w in symbols.windows(2) {
                *delta.entry((w[0].clone(), w[1].clone())).or_default() -= f;
            }
            let merged = merge_symbols(symbols, &best);
            for w in merged.windows(2) {
                let p = (w[0].clone(), w[1].clone());
                *delta.entry(p.clone()).or_default() += f;
                occurs.entry(p).or_default().insert(idx);
            }
            words[idx].0 = merged;
        }
        for (pair, d) in delta {
            if d == 0 || pair == best {
                continue;
            }
            let old = counts.get(&pair).copied().unwrap_or(0);
            let new = (old as i64 + d) as u64;
            queue.remove(&(Reverse(old), pair.clone()));
            if new > 0 {
                queue.insert((Reverse(new), pair.clone()));
                counts.insert(pair, new);
            } else {
                counts.remove(&pair);
                occurs.remove(&pair);
            }
        }
        counts.remove(&best);
        merges.push(best);
    }
    Ok(BpeModel::new(merges, vocab_limit, protected))
}

/// Joins `@@`-continued subwords back into words.
pub fn revert(sentence: &Sentence) -> Result<Sentence> {
    let mut out = Vec::new();
    let mut pending = String::new();
    for token in sentence.tokens() {
        match token.strip_suffix(CONTINUATION) {
            Some(stem) => pending.push_str(stem),
            None => {
                pending.push_str(token);
                out.push(std::mem::take(&mut pending));
            }
        }
    }
    if !pending.is_empty() || sentence.tokens().last().is_some_and(|t| t.ends_with(CONTINUATION)) {
        return Err(Error::Format(format!(
            "dangling continuation marker at end of sentence {sentence:?}"
        )));
    }
    Sentence::from_tokens(out)
}
