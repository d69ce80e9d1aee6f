//! Small attention encoder-decoder for translation with domain conditioning.
//!
//! Three source modes are supported: `plain` (no conditioning), `tag` (the
//! first source token is a `__<label>` tag, embedded like any other word) and
//! `feat` (every source token carries a `|<label>` factor whose embedding is
//! concatenated to the word embedding).

mod network;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::annotate::{parse_factored, strip_tag, tag_token};
use crate::corpus::{ParallelCorpus, Sentence, TAG_SIGIL};
use crate::error::{Error, Result};
use crate::util::{read_json, relative_error, seeded_rng, write_json, Rng};
use network::{backward, decoder_step, encode, forward, Dims, Layout};

const FORMAT_VERSION: u32 = 1;
pub const UNK: &str = "<unk>";
pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
const UNK_ID: usize = 0;
const BOS_ID: usize = 1;
const EOS_ID: usize = 2;
const INIT_SCALE: f64 = 0.1;
const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const FD_STEP: f64 = 1e-5;
const FD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceMode {
    Plain,
    Tag,
    Feat,
}

impl fmt::Display for SourceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SourceMode::Plain => "plain",
            SourceMode::Tag => "tag",
            SourceMode::Feat => "feat",
        })
    }
}

impl FromStr for SourceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(SourceMode::Plain),
            "tag" => Ok(SourceMode::Tag),
            "feat" => Ok(SourceMode::Feat),
            _ => Err(Error::Argument(format!("unknown source mode {s:?} (expected plain, tag or feat)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NmtConfig {
    pub embed_dim: usize,
    /// Only used in `feat` mode; 0 disables factors.
    pub factor_dim: usize,
    pub hidden_dim: usize,
    pub batch_size: usize,
    pub max_steps: usize,
    pub lr: f64,
    pub clip_norm: f64,
    pub seed: u64,
    pub max_len: usize,
    pub beam: usize,
}

impl Default for NmtConfig {
    fn default() -> Self {
        NmtConfig {
            embed_dim: 32,
            factor_dim: 8,
            hidden_dim: 64,
            batch_size: 16,
            max_steps: 2000,
            lr: 0.005,
            clip_norm: 5.0,
            seed: 1,
            max_len: 50,
            beam: 1,
        }
    }
}

impl NmtConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.hidden_dim == 0 || self.batch_size == 0 || self.max_len == 0 || self.beam == 0 {
            return Err(Error::Config(
                "embed_dim, hidden_dim, batch_size, max_len and beam must be positive".into(),
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.clip_norm > 0.0) {
            return Err(Error::Config("lr and clip_norm must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TokenVocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl TokenVocab {
    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let index: HashMap<String, usize> = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        if index.len() != tokens.len() {
            return Err(Error::Format("duplicate entries in vocabulary".into()));
        }
        Ok(TokenVocab { tokens, index })
    }

    /// Specials first, then tokens by descending count, ties alphabetical.
    fn build<'a>(specials: &[&str], words: impl Iterator<Item = &'a str>) -> Self {
        let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
        for w in words {
            *counts.entry(w).or_default() += 1;
        }
        let mut entries: Vec<(&str, u64)> = counts.into_iter().filter(|(w, _)| !specials.contains(w)).collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let tokens = specials.iter().copied().chain(entries.into_iter().map(|(w, _)| w)).map(str::to_owned).collect();
        TokenVocab::from_tokens(tokens).expect("specials are distinct from counted words")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub mode: SourceMode,
    /// Mean token cross-entropy of each step's minibatch.
    pub losses: Vec<f64>,
    pub steps: usize,
    pub wall_clock_secs: f64,
    /// Sentences cut to `max_len` (source and target counted separately).
    pub truncated: usize,
    pub optimizer: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Translation {
    pub tokens: Sentence,
    /// One distribution over source positions per emitted token (including
    /// the end-of-sequence step).
    pub attention: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
struct Example {
    src: Vec<usize>,
    factors: Vec<usize>,
    tgt: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Seq2SeqModel {
    pub config: NmtConfig,
    pub mode: SourceMode,
    pub source_vocab: TokenVocab,
    pub factor_vocab: Option<TokenVocab>,
    pub target_vocab: TokenVocab,
    pub params: Vec<f64>,
    layout: Layout,
}

impl PartialEq for Seq2SeqModel {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.mode == other.mode
            && self.source_vocab == other.source_vocab
            && self.factor_vocab == other.factor_vocab
            && self.target_vocab == other.target_vocab
            && self.params == other.params
    }
}

/// Splits a serialized source line into tokens and factors according to the
/// conditioning mode, rejecting lines prepared for another mode.
pub fn parse_source(line: &str, mode: SourceMode) -> Result<(Vec<String>, Vec<String>)> {
    let first = line.split_whitespace().next();
    let tagged = first.is_some_and(|t| t.starts_with(TAG_SIGIL));
    let factored = first.is_some_and(|t| t.contains(crate::annotate::FACTOR_DELIMITER));
    match mode {
        SourceMode::Plain => {
            if tagged || factored {
                return Err(Error::Format(format!("line looks conditioned but the model is plain: {line:?}")));
            }
            Ok((line.split_whitespace().map(str::to_owned).collect(), Vec::new()))
        }
        SourceMode::Tag => {
            if factored {
                return Err(Error::Format(format!("factored line given to a tag model: {line:?}")));
            }
            let (label, rest) = strip_tag(line)?;
            let tokens = std::iter::once(tag_token(&label)).chain(rest.into_tokens()).collect();
            Ok((tokens, Vec::new()))
        }
        SourceMode::Feat => {
            if tagged {
                return Err(Error::Format(format!("tagged line given to a factored model: {line:?}")));
            }
            let f = parse_factored(line)?;
            Ok(f.tokens.into_iter().map(|(s, l)| (s, l.as_str().to_owned())).unzip())
        }
    }
}

fn effective_config(config: &NmtConfig, mode: SourceMode) -> NmtConfig {
    let mut c = config.clone();
    if mode != SourceMode::Feat {
        c.factor_dim = 0;
    }
    c
}

impl Seq2SeqModel {
    fn dims(config: &NmtConfig, s: &TokenVocab, f: Option<&TokenVocab>, t: &TokenVocab) -> Dims {
        Dims {
            src_vocab: s.len(),
            tgt_vocab: t.len(),
            factor_vocab: f.map_or(0, TokenVocab::len),
            embed: config.embed_dim,
            factor: config.factor_dim,
            hidden: config.hidden_dim,
        }
    }

    fn initialize(
        config: NmtConfig,
        mode: SourceMode,
        source_vocab: TokenVocab,
        factor_vocab: Option<TokenVocab>,
        target_vocab: TokenVocab,
    ) -> Self {
        let layout = Layout::new(Self::dims(&config, &source_vocab, factor_vocab.as_ref(), &target_vocab));
        let mut rng = seeded_rng(config.seed);
        let mut params = vec![0.0; layout.total];
        for (_, m, is_bias) in &layout.tensors {
            if !is_bias {
                for p in m.of_mut(&mut params) {
                    *p = rng.random_range(-INIT_SCALE..INIT_SCALE);
                }
            }
        }
        Seq2SeqModel {
            config,
            mode,
            source_vocab,
            factor_vocab,
            target_vocab,
            params,
            layout,
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    fn source_ids(&self, line: &str) -> Result<(Vec<usize>, Vec<usize>)> {
        let (tokens, factors) = parse_source(line, self.mode)?;
        let src = tokens.iter().map(|t| self.source_vocab.id(t)).collect();
        let fac = match &self.factor_vocab {
            Some(v) => factors.iter().map(|f| v.id(f)).collect(),
            None => Vec::new(),
        };
        Ok((src, fac))
    }

    fn examples(&self, corpus: &ParallelCorpus, truncated: &mut usize) -> Result<Vec<Example>> {
        let max_len = self.config.max_len;
        corpus
            .pairs
            .iter()
            .map(|pair| {
                let (mut src, mut factors) = self.source_ids(&pair.source.to_string())?;
                if src.len() > max_len {
                    src.truncate(max_len);
                    factors.truncate(max_len);
                    *truncated += 1;
                }
                let mut tgt: Vec<usize> = pair.target.tokens().iter().map(|t| self.target_vocab.id(t)).collect();
                if tgt.len() > max_len {
                    tgt.truncate(max_len);
                    *truncated += 1;
                }
                tgt.push(EOS_ID);
                Ok(Example { src, factors, tgt })
            })
            .collect()
    }

    /// Summed negative log-likelihood and token count over the examples, with
    /// gradients of the mean accumulated into `grads` when given.
    fn batch_loss(&self, batch: &[&Example], grads: Option<&mut [f64]>) -> (f64, usize) {
        let tokens: usize = batch.iter().map(|e| e.tgt.len()).sum();
        let mut total = 0.0;
        let scale = 1.0 / tokens.max(1) as f64;
        let mut grads = grads;
        for ex in batch {
            let (nll, enc, steps) = forward(&self.params, &self.layout, &ex.src, &ex.factors, &ex.tgt, BOS_ID);
            total += nll;
            if let Some(g) = grads.as_deref_mut() {
                backward(&self.params, g, &self.layout, &enc, &steps, &ex.tgt, scale);
            }
        }
        (total, tokens)
    }

    /// Mean token cross-entropy (teacher forced) over a corpus.
    pub fn loss(&self, corpus: &ParallelCorpus) -> Result<f64> {
        let mut truncated = 0;
        let examples = self.examples(corpus, &mut truncated)?;
        let refs: Vec<&Example> = examples.iter().collect();
        let (nll, tokens) = self.batch_loss(&refs, None);
        Ok(if tokens == 0 { 0.0 } else { nll / tokens as f64 })
    }

    pub fn translate(&self, line: &str) -> Result<Sentence> {
        Ok(self.translate_with_attention(line)?.tokens)
    }

    pub fn translate_with_attention(&self, line: &str) -> Result<Translation> {
        let (mut src, mut fac) = self.source_ids(line)?;
        src.truncate(self.config.max_len);
        fac.truncate(self.config.max_len);
        let (ids, attention) = if self.config.beam <= 1 {
            self.greedy(&src, &fac)
        } else {
            self.beam_search(&src, &fac, self.config.beam)
        };
        let tokens = Sentence::from_tokens(ids.iter().map(|&i| self.target_vocab.token(i).to_owned()))?;
        Ok(Translation { tokens, attention })
    }

    fn greedy(&self, src: &[usize], fac: &[usize]) -> (Vec<usize>, Vec<Vec<f64>>) {
        let enc = encode(&self.params, &self.layout, src, fac);
        let mut state = enc.s0.clone();
        let mut prev = BOS_ID;
        let mut out = Vec::new();
        let mut attention = Vec::new();
        for _ in 0..=self.config.max_len {
            let step = decoder_step(&self.params, &self.layout, &enc, &state, prev);
            let next = argmax_output(&step.probs);
            attention.push(step.alpha.clone());
            if next == EOS_ID {
                break;
            }
            if out.len() == self.config.max_len {
                break;
            }
            out.push(next);
            state = step.gru.h;
            prev = next;
        }
        (out, attention)
    }

    fn beam_search(&self, src: &[usize], fac: &[usize], width: usize) -> (Vec<usize>, Vec<Vec<f64>>) {
        struct Hyp {
            tokens: Vec<usize>,
            attention: Vec<Vec<f64>>,
            state: Vec<f64>,
            score: f64,
        }
        let enc = encode(&self.params, &self.layout, src, fac);
        let mut live = vec![Hyp {
            tokens: Vec::new(),
            attention: Vec::new(),
            state: enc.s0.clone(),
            score: 0.0,
        }];
        let mut done: Vec<Hyp> = Vec::new();
        for len in 0..=self.config.max_len {
            let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
            let mut steps = Vec::with_capacity(live.len());
            for (h, hyp) in live.iter().enumerate() {
                let prev = hyp.tokens.last().copied().unwrap_or(BOS_ID);
                let step = decoder_step(&self.params, &self.layout, &enc, &hyp.state, prev);
                for (tok, &p) in step.probs.iter().enumerate() {
                    if tok == BOS_ID || (tok != EOS_ID && len == self.config.max_len) {
                        continue;
                    }
                    candidates.push((hyp.score + p.max(f64::MIN_POSITIVE).ln(), h, tok));
                }
                steps.push(step);
            }
            candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
            let mut next = Vec::new();
            for (score, h, tok) in candidates.into_iter().take(width) {
                let mut attention = live[h].attention.clone();
                attention.push(steps[h].alpha.clone());
                let mut tokens = live[h].tokens.clone();
                if tok == EOS_ID {
                    done.push(Hyp { tokens, attention, state: Vec::new(), score });
                } else {
                    tokens.push(tok);
                    next.push(Hyp { tokens, attention, state: steps[h].gru.h.clone(), score });
                }
            }
            if next.is_empty() || done.len() >= width {
                break;
            }
            live = next;
        }
        let norm = |h: &Hyp| h.score / (h.tokens.len() + 1) as f64;
        let best = done
            .into_iter()
            .reduce(|a, b| if norm(&b) > norm(&a) { b } else { a })
            .expect("beam always finishes at max_len");
        (best.tokens, best.attention)
    }

    /// Largest relative error between the analytic gradient of the mean token
    /// cross-entropy on `batch` and central finite differences, over
    /// `samples` coordinates drawn round-robin from the parameter tensors.
    /// A batch without target tokens has an empty gradient and scores 0.
    pub fn gradient_check(&self, batch: &ParallelCorpus, samples: usize, seed: u64) -> Result<f64> {
        if batch.pairs.iter().all(|p| p.target.is_empty()) {
            return Ok(0.0);
        }
        let mut truncated = 0;
        let examples = self.examples(batch, &mut truncated)?;
        let refs: Vec<&Example> = examples.iter().collect();
        let mut grads = vec![0.0; self.params.len()];
        self.batch_loss(&refs, Some(&mut grads));
        let mut probe = self.clone();
        let mut rng = seeded_rng(seed);
        let tensors = &self.layout.tensors;
        let mut worst = 0.0f64;
        for i in 0..samples {
            let (_, m, _) = tensors[i % tensors.len()];
            let range = m.range();
            // Untouched embedding rows have exactly zero gradient; prefer
            // coordinates the batch actually reaches.
            let live: Vec<usize> = range.clone().filter(|&k| grads[k] != 0.0).collect();
            let k = if live.is_empty() {
                rng.random_range(range)
            } else {
                live[rng.random_range(0..live.len())]
            };
            let original = probe.params[k];
            probe.params[k] = original + FD_STEP;
            let (plus, tokens) = probe.batch_loss(&refs, None);
            probe.params[k] = original - FD_STEP;
            let (minus, _) = probe.batch_loss(&refs, None);
            probe.params[k] = original;
            let numeric = (plus - minus) / (2.0 * FD_STEP * tokens as f64);
            worst = worst.max(relative_error(grads[k], numeric, FD_FLOOR));
        }
        Ok(worst)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tensors = self
            .layout
            .tensors
            .iter()
            .map(|(name, m, _)| NamedTensor {
                name: (*name).to_owned(),
                rows: m.rows,
                cols: m.cols,
                values: m.of(&self.params).to_vec(),
            })
            .collect();
        write_json(
            path,
            &ModelFile {
                version: FORMAT_VERSION,
                config: self.config.clone(),
                mode: self.mode,
                source_vocab: self.source_vocab.tokens.clone(),
                factor_vocab: self.factor_vocab.as_ref().map(|v| v.tokens.clone()),
                target_vocab: self.target_vocab.tokens.clone(),
                tensors,
            },
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: ModelFile = read_json(path)?;
        if file.version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported model version {}", file.version)));
        }
        file.config.validate()?;
        let source_vocab = TokenVocab::from_tokens(file.source_vocab)?;
        let factor_vocab = file.factor_vocab.map(TokenVocab::from_tokens).transpose()?;
        let target_vocab = TokenVocab::from_tokens(file.target_vocab)?;
        if (file.config.factor_dim > 0) != factor_vocab.is_some() {
            return Err(Error::Format("factor vocabulary present iff factor_dim > 0".into()));
        }
        let layout = Layout::new(Self::dims(&file.config, &source_vocab, factor_vocab.as_ref(), &target_vocab));
        if file.tensors.len() != layout.tensors.len() {
            return Err(Error::Format("model file has the wrong number of tensors".into()));
        }
        let mut params = vec![0.0; layout.total];
        for (t, (name, m, _)) in file.tensors.iter().zip(&layout.tensors) {
            if t.name != *name || t.rows != m.rows || t.cols != m.cols || t.values.len() != m.len() {
                return Err(Error::Format(format!("tensor {} does not match the expected shape of {name}", t.name)));
            }
            if t.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Format(format!("tensor {name} has non-finite values")));
            }
            m.of_mut(&mut params).copy_from_slice(&t.values);
        }
        Ok(Seq2SeqModel {
            config: file.config,
            mode: file.mode,
            source_vocab,
            factor_vocab,
            target_vocab,
            params,
            layout,
        })
    }
}

fn argmax_output(probs: &[f64]) -> usize {
    let mut best = EOS_ID;
    for (i, &p) in probs.iter().enumerate() {
        if i != BOS_ID && p > probs[best] {
            best = i;
        }
    }
    best
}

#[derive(Serialize, Deserialize)]
struct NamedTensor {
    name: String,
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    config: NmtConfig,
    mode: SourceMode,
    source_vocab: Vec<String>,
    factor_vocab: Option<Vec<String>>,
    target_vocab: Vec<String>,
    tensors: Vec<NamedTensor>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.t);
        let c2 = 1.0 - ADAM_BETA2.powi(self.t);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
        }
    }
}

/// Cycles through the examples in a fresh random order each pass.
struct Batcher {
    order: Vec<usize>,
    pos: usize,
    rng: Rng,
}

impl Batcher {
    fn new(n: usize, seed: u64) -> Self {
        let mut rng = seeded_rng(seed.wrapping_add(1));
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        Batcher { order, pos: 0, rng }
    }

    fn next(&mut self, size: usize) -> Vec<usize> {
        (0..size)
            .map(|_| {
                if self.pos == self.order.len() {
                    self.order.shuffle(&mut self.rng);
                    self.pos = 0;
                }
                self.pos += 1;
                self.order[self.pos - 1]
            })
            .collect()
    }
}

fn optimizer_description(config: &NmtConfig) -> String {
    format!(
        "adam(lr={}, beta1={ADAM_BETA1}, beta2={ADAM_BETA2}, eps={ADAM_EPS}, clip_norm={})",
        config.lr, config.clip_norm
    )
}

fn run_training(mut model: Seq2SeqModel, examples: &[Example], steps: usize, truncated: usize) -> Result<(Seq2SeqModel, TrainLog)> {
    let start = Instant::now();
    let config = model.config.clone();
    let mut adam = Adam::new(model.params.len());
    let mut batcher = Batcher::new(examples.len(), config.seed);
    let mut grads = vec![0.0; model.params.len()];
    let mut losses = Vec::with_capacity(steps);
    for step in 0..steps {
        grads.iter_mut().for_each(|g| *g = 0.0);
        let batch: Vec<&Example> = batcher.next(config.batch_size).into_iter().map(|i| &examples[i]).collect();
        let (nll, tokens) = model.batch_loss(&batch, Some(&mut grads));
        let loss = nll / tokens as f64;
        if !loss.is_finite() {
            return Err(Error::Data(format!("training diverged at step {step} (loss {loss})")));
        }
        losses.push(loss);
        let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm > config.clip_norm {
            let s = config.clip_norm / norm;
            grads.iter_mut().for_each(|g| *g *= s);
        }
        adam.step(&mut model.params, &grads, config.lr);
    }
    let log = TrainLog {
        mode: model.mode,
        losses,
        steps,
        wall_clock_secs: start.elapsed().as_secs_f64(),
        truncated,
        optimizer: optimizer_description(&config),
    };
    Ok((model, log))
}

/// Builds vocabularies from `corpus`, initializes from `config.seed` and
/// trains for `config.max_steps` minibatches.
pub fn train(corpus: &ParallelCorpus, mode: SourceMode, config: &NmtConfig) -> Result<(Seq2SeqModel, TrainLog)> {
    config.validate()?;
    if mode == SourceMode::Feat && config.factor_dim == 0 {
        return Err(Error::Config("factored training data needs factor_dim > 0".into()));
    }
    if corpus.is_empty() {
        return Err(Error::Data(format!("corpus {} is empty", corpus.name)));
    }
    let parsed: Vec<(Vec<String>, Vec<String>)> = corpus
        .pairs
        .iter()
        .map(|p| parse_source(&p.source.to_string(), mode))
        .collect::<Result<_>>()?;
    let source_vocab = TokenVocab::build(&[UNK], parsed.iter().flat_map(|(s, _)| s.iter().map(String::as_str)));
    let factor_vocab = (mode == SourceMode::Feat)
        .then(|| TokenVocab::build(&[UNK], parsed.iter().flat_map(|(_, f)| f.iter().map(String::as_str))));
    let target_vocab = TokenVocab::build(
        &[UNK, BOS, EOS],
        corpus.pairs.iter().flat_map(|p| p.target.tokens().iter().map(String::as_str)),
    );
    let model = Seq2SeqModel::initialize(effective_config(config, mode), mode, source_vocab, factor_vocab, target_vocab);
    let mut truncated = 0;
    let examples = model.examples(corpus, &mut truncated)?;
    if truncated > 0 {
        log::warn!("{truncated} sentences truncated to {} tokens", config.max_len);
    }
    run_training(model, &examples, config.max_steps, truncated)
}

/// Continues training on `corpus` alone for `steps` minibatches with a fresh
/// optimizer state and the model's original batch schedule seed, so that
/// fine-tuning an untrained model reproduces `train` exactly.
pub fn fine_tune(model: &Seq2SeqModel, corpus: &ParallelCorpus, steps: usize) -> Result<(Seq2SeqModel, TrainLog)> {
    if corpus.is_empty() {
        return Err(Error::Data(format!("corpus {} is empty", corpus.name)));
    }
    let mut truncated = 0;
    let examples = model.examples(corpus, &mut truncated)?;
    run_training(model.clone(), &examples, steps, truncated)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::SentencePair;

    fn corpus(pairs: &[(&str, &str)]) -> ParallelCorpus {
        ParallelCorpus::new(
            "t",
            pairs
                .iter()
                .map(|(s, t)| SentencePair {
                    source: Sentence::parse(s),
                    target: Sentence::parse(t),
                    label: None,
                })
                .collect(),
        )
    }

    fn small() -> NmtConfig {
        NmtConfig {
            embed_dim: 6,
            factor_dim: 3,
            hidden_dim: 5,
            batch_size: 2,
            max_steps: 0,
            ..Default::default()
        }
    }

    #[test]
    fn mode_parsing() {
        assert!(parse_source("__A x y", SourceMode::Plain).is_err());
        assert!(parse_source("x|A y|A", SourceMode::Tag).is_err());
        assert!(parse_source("__A x", SourceMode::Feat).is_err());
        assert_eq!(parse_source("__A x", SourceMode::Tag).unwrap().0, vec!["__A", "x"]);
        let (t, f) = parse_source("x|A y|A", SourceMode::Feat).unwrap();
        assert_eq!((t, f), (vec!["x".to_owned(), "y".into()], vec!["A".to_owned(), "A".into()]));
    }

    #[test]
    fn zero_steps_is_initialization() {
        let c = corpus(&[("__A a b", "x y"), ("__B b", "z")]);
        let (m, log) = train(&c, SourceMode::Tag, &small()).unwrap();
        assert_eq!(log.steps, 0);
        assert!(log.losses.is_empty());
        let (again, _) = train(&c, SourceMode::Tag, &small()).unwrap();
        assert_eq!(m, again);
        assert!(m.factor_vocab.is_none());
        assert!(m.source_vocab.contains("__A"));
        let (tuned, _) = fine_tune(&m, &c, 0).unwrap();
        assert_eq!(tuned.params, m.params);
    }

    #[test]
    fn factored_needs_factor_dim() {
        let c = corpus(&[("a|A b|A", "x")]);
        let cfg = NmtConfig { factor_dim: 0, ..small() };
        assert!(matches!(train(&c, SourceMode::Feat, &cfg), Err(Error::Config(_))));
        let (m, _) = train(&c, SourceMode::Feat, &small()).unwrap();
        assert!(m.factor_vocab.is_some());
    }

    #[test]
    fn truncation_is_counted() {
        let c = corpus(&[("a b c d", "x y z w v")]);
        let cfg = NmtConfig { max_len: 3, max_steps: 1, ..small() };
        let (_, log) = train(&c, SourceMode::Plain, &cfg).unwrap();
        assert_eq!(log.truncated, 2);
        assert_eq!(log.losses.len(), 1);
    }

    #[test]
    fn gradient_check_small() {
        let c = corpus(&[("a|A b|A", "x y"), ("b|B c|B a|B", "y z"), ("c|A", "z z x")]);
        let (m, _) = train(&c, SourceMode::Feat, &small()).unwrap();
        let e = m.gradient_check(&c, 60, 3).unwrap();
        assert!(e <= 1e-4, "relative error {e}");
        assert_eq!(e, m.gradient_check(&c, 60, 3).unwrap());
        assert_eq!(m.gradient_check(&corpus(&[("a|A", "")]), 30, 1).unwrap(), 0.0);
    }

    #[test]
    fn decoding_contracts() {
        let c = corpus(&[("__A a b", "x y"), ("__B b", "z")]);
        let (m, _) = train(&c, SourceMode::Tag, &NmtConfig { max_steps: 3, ..small() }).unwrap();
        let t = m.translate_with_attention("__A a b a").unwrap();
        for a in &t.attention {
            assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert_eq!(a.len(), 4);
        }
        assert!(m.translate("__A").unwrap().len() <= m.config.max_len);
        assert!(matches!(m.translate("a b"), Err(Error::Format(_))));
        let beam = Seq2SeqModel { config: NmtConfig { beam: 3, ..m.config.clone() }, ..m.clone() };
        assert!(beam.translate("__B b").unwrap().len() <= m.config.max_len);
    }

    #[test]
    fn save_load_round_trip() {
        let c = corpus(&[("a|A b|A", "x y"), ("b|B", "z")]);
        let (m, _) = train(&c, SourceMode::Feat, &NmtConfig { max_steps: 2, ..small() }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        m.save(&p).unwrap();
        assert_eq!(Seq2SeqModel::load(&p).unwrap(), m);
    }
}
