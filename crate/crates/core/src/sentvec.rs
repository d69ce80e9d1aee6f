//! Unsupervised compositional sentence embeddings.
//!
//! A sentence vector is the mean of the input vectors of its words and hashed
//! word n-grams. Training predicts each word from the rest of its sentence
//! with a logistic loss against the true word and sampled negatives.

use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::Sentence;
use crate::error::{Error, Result};
use crate::features::{average_rows, units, Units, Vocab};
use crate::util::{dot, read_json, seeded_rng, sigmoid, write_json};

const FORMAT_VERSION: u32 = 1;
const NOISE_EXPONENT: f64 = 0.75;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingConfig {
    pub dim: usize,
    pub ngram_order: usize,
    pub bucket_count: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub lr_start: f64,
    pub min_count: u64,
    pub seed: u64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            dim: 64,
            ngram_order: 2,
            bucket_count: 1 << 18,
            negatives: 5,
            epochs: 5,
            lr_start: 0.1,
            min_count: 2,
            seed: 1,
        }
    }
}

impl EmbeddingConfig {
    fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.ngram_order == 0 || self.negatives == 0 || self.min_count == 0 {
            return Err(Error::Config("embedding dim, ngram_order, negatives and min_count must be positive".into()));
        }
        if self.ngram_order > 1 && self.bucket_count == 0 {
            return Err(Error::Config("bucket_count must be positive when ngram_order > 1".into()));
        }
        if !(self.lr_start > 0.0) {
            return Err(Error::Config("lr_start must be positive".into()));
        }
        Ok(())
    }

    fn buckets(&self) -> usize {
        if self.ngram_order > 1 {
            self.bucket_count
        } else {
            0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    pub config: EmbeddingConfig,
    pub vocab: Vocab,
    /// `(vocab + buckets) x dim`, row-major.
    pub input_table: Vec<f64>,
    /// `vocab x dim`, row-major.
    pub output_table: Vec<f64>,
}

/// Loss and sparse gradient for one (context, target, negatives) example.
#[derive(Debug, Clone, Default)]
pub struct ExampleGradient {
    pub loss: f64,
    /// Gradient with respect to the mean context vector.
    pub context: Vec<f64>,
    /// (output row, gradient) for the target and each negative, in order.
    pub output: Vec<(usize, Vec<f64>)>,
}

fn initial_input_table(config: &EmbeddingConfig, vocab_len: usize) -> Vec<f64> {
    let rows = vocab_len + config.buckets();
    let bound = 1.0 / config.dim as f64;
    let mut rng = seeded_rng(config.seed);
    (0..rows * config.dim)
        .map(|_| rng.random_range(-bound..bound))
        .collect()
}

impl EmbeddingModel {
    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn units(&self, sentence: &Sentence) -> Units {
        units(&self.vocab, sentence, self.config.ngram_order, self.config.buckets())
    }

    pub fn mean_of_rows(&self, rows: &[usize]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        average_rows(&self.input_table, self.dim(), rows, &mut out);
        out
    }

    /// Mean input vector of the sentence's known words and n-grams; the zero
    /// vector when nothing is known.
    pub fn embed_sentence(&self, sentence: &Sentence) -> Vec<f64> {
        let rows: Vec<usize> = self.units(sentence).rows().collect();
        self.mean_of_rows(&rows)
    }

    pub fn output_row(&self, word: usize) -> &[f64] {
        &self.output_table[word * self.dim()..(word + 1) * self.dim()]
    }

    /// Logistic loss of the context against the target (label 1) and each
    /// negative (label 0), with the gradient of that loss.
    pub fn example_gradient(&self, context_rows: &[usize], target: usize, negatives: &[usize]) -> ExampleGradient {
        let context = self.mean_of_rows(context_rows);
        let mut grad = ExampleGradient {
            loss: 0.0,
            context: vec![0.0; self.dim()],
            output: Vec::with_capacity(1 + negatives.len()),
        };
        let add = |row: usize, label: f64, grad: &mut ExampleGradient| {
            let out = self.output_row(row);
            let score = dot(&context, out);
            let p = sigmoid(score);
            grad.loss -= if label > 0.5 { p.max(f64::MIN_POSITIVE).ln() } else { (1.0 - p).max(f64::MIN_POSITIVE).ln() };
            let g = p - label;
            for (gc, o) in grad.context.iter_mut().zip(out) {
                *gc += g * o;
            }
            grad.output.push((row, context.iter().map(|c| g * c).collect()));
        };
        add(target, 1.0, &mut grad);
        for &n in negatives {
            add(n, 0.0, &mut grad);
        }
        grad
    }

    fn apply_gradient(&mut self, context_rows: &[usize], grad: &ExampleGradient, lr: f64) {
        let dim = self.dim();
        for (row, g) in &grad.output {
            for (w, gi) in self.output_table[row * dim..(row + 1) * dim].iter_mut().zip(g) {
                *w -= lr * gi;
            }
        }
        let scale = lr / context_rows.len() as f64;
        for &row in context_rows {
            for (w, gi) in self.input_table[row * dim..(row + 1) * dim].iter_mut().zip(&grad.context) {
                *w -= scale * gi;
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let dim = self.dim();
        let init = initial_input_table(&self.config, self.vocab.len());
        let rows = |table: &[f64], range: std::ops::Range<usize>| -> Vec<Vec<f64>> {
            range.map(|r| table[r * dim..(r + 1) * dim].to_vec()).collect()
        };
        let v = self.vocab.len();
        let bucket_rows = (v..v + self.config.buckets())
            .filter(|&r| self.input_table[r * dim..(r + 1) * dim] != init[r * dim..(r + 1) * dim])
            .map(|r| (r - v, self.input_table[r * dim..(r + 1) * dim].to_vec()))
            .collect();
        write_json(
            path,
            &EmbeddingFile {
                version: FORMAT_VERSION,
                config: self.config.clone(),
                vocab: self.vocab.clone(),
                word_rows: rows(&self.input_table, 0..v),
                bucket_rows,
                output_rows: rows(&self.output_table, 0..v),
            },
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut file: EmbeddingFile = read_json(path)?;
        file.vocab.reindex();
        let dim = file.config.dim;
        let v = file.vocab.len();
        let mut input_table = initial_input_table(&file.config, v);
        for (r, row) in file.word_rows.iter().enumerate() {
            input_table[r * dim..(r + 1) * dim].copy_from_slice(row);
        }
        for (b, row) in &file.bucket_rows {
            let r = v + b;
            input_table[r * dim..(r + 1) * dim].copy_from_slice(row);
        }
        Ok(EmbeddingModel {
            config: file.config,
            vocab: file.vocab,
            input_table,
            output_table: file.output_rows.concat(),
        })
    }
}

/// On-disk form. Bucket rows still equal to their seeded initialization are
/// regenerated from the seed instead of stored.
#[derive(Serialize, Deserialize)]
struct EmbeddingFile {
    version: u32,
    config: EmbeddingConfig,
    vocab: Vocab,
    word_rows: Vec<Vec<f64>>,
    bucket_rows: Vec<(usize, Vec<f64>)>,
    output_rows: Vec<Vec<f64>>,
}

/// Builds the vocabulary and the seeded initial tables without training.
pub fn initialize(sentences: &[Sentence], config: &EmbeddingConfig) -> Result<EmbeddingModel> {
    config.validate()?;
    let vocab = Vocab::build(sentences, config.min_count);
    Ok(EmbeddingModel {
        input_table: initial_input_table(config, vocab.len()),
        output_table: vec![0.0; vocab.len() * config.dim],
        config: config.clone(),
        vocab,
    })
}

pub fn train_embeddings(sentences: &[Sentence], config: &EmbeddingConfig) -> Result<EmbeddingModel> {
    let mut model = initialize(sentences, config)?;
    let trainable: Vec<Units> = sentences
        .iter()
        .map(|s| model.units(s))
        .filter(|u| u.words.len() >= 2)
        .collect();
    if trainable.is_empty() {
        return Err(Error::Data(
            "no sentence has two or more in-vocabulary tokens to train on".into(),
        ));
    }
    if config.epochs == 0 {
        return Ok(model);
    }
    let noise = WeightedIndex::new(
        model
            .vocab
            .counts()
            .iter()
            .map(|&c| (c as f64).powf(NOISE_EXPONENT)),
    )
    .map_err(|e| Error::Data(format!("negative sampling table: {e}")))?;
    let mut rng = seeded_rng(config.seed.wrapping_add(1));
    let per_epoch: usize = trainable.iter().map(|u| u.words.len()).sum();
    let total = (per_epoch * config.epochs) as f64;
    let mut processed = 0usize;
    let vocab_len = model.vocab.len();
    let mut negatives = Vec::with_capacity(config.negatives);

    for _ in 0..config.epochs {
        for u in &trainable {
            for (pos, &target) in u.words.iter().enumerate() {
                let lr = config.lr_start * (1.0 - processed as f64 / total);
                processed += 1;
                let context = u.context_rows(pos);
                negatives.clear();
                if vocab_len > 1 {
                    while negatives.len() < config.negatives {
                        let n = noise.sample(&mut rng);
                        if n != target {
                            negatives.push(n);
                        }
                    }
                }
                let grad = model.example_gradient(&context, target, &negatives);
                model.apply_gradient(&context, &grad, lr);
            }
        }
    }
    Ok(model)
}
