//! Line-aligned bilingual corpora: loading, validation, hold-out splits and
//! token statistics.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Add;
use std::path::Path;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::seeded_rng;

/// Prefix reserved for domain tag tokens.
pub const TAG_SIGIL: &str = "__";

/// A whitespace-tokenized sentence.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Sentence(Vec<String>);

impl Sentence {
    pub fn parse(line: &str) -> Self {
        Sentence(line.split_whitespace().map(str::to_owned).collect())
    }

    /// Builds a sentence from tokens. Tokens must be non-empty and free of
    /// whitespace.
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        if let Some(bad) = tokens
            .iter()
            .find(|t| t.is_empty() || t.chars().any(char::is_whitespace))
        {
            return Err(Error::Format(format!("invalid token {bad:?}")));
        }
        Ok(Sentence(tokens))
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn into_tokens(self) -> Vec<String> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for Sentence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join(" "))
    }
}

/// Identifier of a text domain, e.g. `OpenSubs` or `c3`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct DomainLabel(String);

impl DomainLabel {
    pub fn new(id: impl Into<String>) -> Result<Self> {
        let id = id.into();
        if id.is_empty() {
            return Err(Error::Argument("domain label must not be empty".into()));
        }
        if !id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_') {
            return Err(Error::Argument(format!(
                "domain label {id:?} must match [A-Za-z0-9_]+"
            )));
        }
        if id.starts_with(TAG_SIGIL) {
            return Err(Error::Argument(format!(
                "domain label {id:?} must not begin with the reserved sigil {TAG_SIGIL:?}"
            )));
        }
        Ok(DomainLabel(id))
    }

    /// The label given to sentences whose domain is unknown or unwanted.
    pub fn other() -> Self {
        DomainLabel("other".into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for DomainLabel {
    type Error = Error;
    fn try_from(value: String) -> Result<Self> {
        DomainLabel::new(value)
    }
}

impl From<DomainLabel> for String {
    fn from(value: DomainLabel) -> Self {
        value.0
    }
}

impl fmt::Display for DomainLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentencePair {
    pub source: Sentence,
    pub target: Sentence,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<DomainLabel>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ParallelCorpus {
    pub name: String,
    pub pairs: Vec<SentencePair>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    pub allow_empty: bool,
}

impl ParallelCorpus {
    pub fn new(name: impl Into<String>, pairs: Vec<SentencePair>) -> Self {
        ParallelCorpus {
            name: name.into(),
            pairs,
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn sources(&self) -> impl Iterator<Item = &Sentence> {
        self.pairs.iter().map(|p| &p.source)
    }

    pub fn targets(&self) -> impl Iterator<Item = &Sentence> {
        self.pairs.iter().map(|p| &p.target)
    }

    pub fn with_label(mut self, label: &DomainLabel) -> Self {
        for pair in &mut self.pairs {
            pair.label = Some(label.clone());
        }
        self
    }

    /// Concatenates corpora in order under a new name.
    pub fn concat<'a>(name: impl Into<String>, parts: impl IntoIterator<Item = &'a ParallelCorpus>) -> Self {
        ParallelCorpus {
            name: name.into(),
            pairs: parts.into_iter().flat_map(|c| c.pairs.iter().cloned()).collect(),
        }
    }
}

fn read_lines(path: &Path, options: LoadOptions) -> Result<Vec<String>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut lines = Vec::new();
    let mut empty = Vec::new();
    if bytes.is_empty() {
        return Ok(lines);
    }
    let body = bytes.strip_suffix(b"\n").unwrap_or(&bytes);
    for (i, raw) in body.split(|&b| b == b'\n').enumerate() {
        let raw = raw.strip_suffix(b"\r").unwrap_or(raw);
        let line = std::str::from_utf8(raw).map_err(|_| Error::Encoding {
            path: path.to_owned(),
            line: i + 1,
        })?;
        if line.trim().is_empty() {
            empty.push(i + 1);
        }
        lines.push(line.to_owned());
    }
    if !empty.is_empty() && !options.allow_empty {
        return Err(Error::EmptyLines {
            path: path.to_owned(),
            lines: empty,
        });
    }
    Ok(lines)
}

/// Reads a sentence-per-line file (LF or CRLF) into sentences.
pub fn load_sentences(path: &Path, options: LoadOptions) -> Result<Vec<Sentence>> {
    Ok(read_lines(path, options)?
        .iter()
        .map(|l| Sentence::parse(l))
        .collect())
}

pub fn load_parallel(
    src_path: &Path,
    tgt_path: &Path,
    label: Option<&DomainLabel>,
    options: LoadOptions,
) -> Result<ParallelCorpus> {
    let src = read_lines(src_path, options)?;
    let tgt = read_lines(tgt_path, options)?;
    if src.len() != tgt.len() {
        return Err(Error::Alignment {
            source_lines: src.len(),
            target_lines: tgt.len(),
        });
    }
    let mut pairs = Vec::with_capacity(src.len());
    for (i, (s, t)) in src.iter().zip(&tgt).enumerate() {
        let source = Sentence::parse(s);
        if let Some(tok) = source.tokens().iter().find(|t| t.starts_with(TAG_SIGIL)) {
            return Err(Error::Format(format!(
                "{}: line {}: token {tok:?} uses the reserved tag sigil {TAG_SIGIL:?}",
                src_path.display(),
                i + 1
            )));
        }
        pairs.push(SentencePair {
            source,
            target: Sentence::parse(t),
            label: label.cloned(),
        });
    }
    let name = src_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(ParallelCorpus::new(name, pairs))
}

pub fn write_sentences<'a>(path: &Path, sentences: impl IntoIterator<Item = &'a Sentence>) -> Result<()> {
    let mut out = String::new();
    for s in sentences {
        out.push_str(&s.to_string());
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn save_parallel(corpus: &ParallelCorpus, src_path: &Path, tgt_path: &Path) -> Result<()> {
    write_sentences(src_path, corpus.sources())?;
    write_sentences(tgt_path, corpus.targets())
}

/// Membership mask of a seeded `n_test`-out-of-`len` holdout draw.
pub fn holdout_mask(len: usize, n_test: usize, seed: u64) -> Result<Vec<bool>> {
    if n_test == 0 || n_test >= len {
        return Err(Error::Argument(format!(
            "n_test must satisfy 0 < n_test < {len} (got {n_test})"
        )));
    }
    let mut rng = seeded_rng(seed);
    let mut in_test = vec![false; len];
    for i in index::sample(&mut rng, len, n_test) {
        in_test[i] = true;
    }
    Ok(in_test)
}

/// Draws `n_test` pairs without replacement as a held-out test set. Both
/// halves keep the original relative order.
pub fn split_holdout(
    corpus: &ParallelCorpus,
    n_test: usize,
    seed: u64,
) -> Result<(ParallelCorpus, ParallelCorpus)> {
    let in_test = holdout_mask(corpus.len(), n_test, seed)?;
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (pair, &t) in corpus.pairs.iter().zip(&in_test) {
        if t {
            test.push(pair.clone());
        } else {
            train.push(pair.clone());
        }
    }
    Ok((
        ParallelCorpus::new(format!("{}.train", corpus.name), train),
        ParallelCorpus::new(format!("{}.test", corpus.name), test),
    ))
}

/// Token counts are whitespace tokens before subword segmentation.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub sentence_count: usize,
    pub source_tokens: usize,
    pub target_tokens: usize,
    pub label_histogram: BTreeMap<String, usize>,
}

impl Add for CorpusStats {
    type Output = CorpusStats;

    fn add(mut self, rhs: CorpusStats) -> CorpusStats {
        self.sentence_count += rhs.sentence_count;
        self.source_tokens += rhs.source_tokens;
        self.target_tokens += rhs.target_tokens;
        for (label, n) in rhs.label_histogram {
            *self.label_histogram.entry(label).or_default() += n;
        }
        self
    }
}

pub fn stats(corpus: &ParallelCorpus) -> CorpusStats {
    let mut out = CorpusStats {
        sentence_count: corpus.len(),
        ..Default::default()
    };
    for pair in &corpus.pairs {
        out.source_tokens += pair.source.len();
        out.target_tokens += pair.target.len();
        if let Some(label) = &pair.label {
            *out.label_histogram.entry(label.to_string()).or_default() += 1;
        }
    }
    out
}
