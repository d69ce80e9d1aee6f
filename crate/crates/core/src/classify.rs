//! Linear bag-of-words-and-n-grams sentence classifier with a softmax output.
//!
//! Used to label dev/test sentences with the clusters found on the training
//! side, and to spread a partial seed labeling over a whole corpus.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::{DomainLabel, Sentence};
use crate::error::{Error, Result};
use crate::features::{average_rows, units, Units, Vocab};
use crate::util::{read_json, seeded_rng, softmax_in_place, write_json};

const FORMAT_VERSION: u32 = 1;
pub const LABEL_PREFIX: &str = "__label__";

/// Bigrams are on by default because cluster labels tend to reflect style
/// rather than topic words alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub dim: usize,
    pub ngram_order: usize,
    pub bucket_count: usize,
    pub epochs: usize,
    pub lr_start: f64,
    pub min_count: u64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            dim: 16,
            ngram_order: 2,
            bucket_count: 1 << 18,
            epochs: 5,
            lr_start: 0.1,
            min_count: 1,
            seed: 1,
        }
    }
}

impl ClassifierConfig {
    fn buckets(&self) -> usize {
        if self.ngram_order > 1 {
            self.bucket_count
        } else {
            0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    pub config: ClassifierConfig,
    pub vocab: Vocab,
    pub labels: Vec<DomainLabel>,
    /// `(vocab + buckets) x dim`.
    pub input_table: Vec<f64>,
    /// `labels x dim`.
    pub output_weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub label: DomainLabel,
    pub probability: f64,
    pub probabilities: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ExampleGradient {
    pub loss: f64,
    /// Gradient with respect to the hidden (mean input) vector.
    pub hidden: Vec<f64>,
    /// Gradient with respect to `output_weights`, dense `labels x dim`.
    pub output: Vec<f64>,
}

fn initial_input_table(config: &ClassifierConfig, vocab_len: usize) -> Vec<f64> {
    let bound = 1.0 / config.dim as f64;
    let mut rng = seeded_rng(config.seed);
    (0..(vocab_len + config.buckets()) * config.dim)
        .map(|_| rng.random_range(-bound..bound))
        .collect()
}

impl ClassifierModel {
    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn units(&self, sentence: &Sentence) -> Units {
        units(&self.vocab, sentence, self.config.ngram_order, self.config.buckets())
    }

    pub fn hidden(&self, rows: &[usize]) -> Vec<f64> {
        let mut h = vec![0.0; self.dim()];
        average_rows(&self.input_table, self.dim(), rows, &mut h);
        h
    }

    fn probabilities(&self, hidden: &[f64]) -> Vec<f64> {
        let dim = self.dim();
        let mut logits: Vec<f64> = self
            .output_weights
            .chunks(dim)
            .map(|w| w.iter().zip(hidden).map(|(a, b)| a * b).sum())
            .collect();
        softmax_in_place(&mut logits);
        logits
    }

    pub fn label_index(&self, label: &DomainLabel) -> Option<usize> {
        self.labels.binary_search(label).ok()
    }

    pub fn predict(&self, sentence: &Sentence) -> Prediction {
        let rows: Vec<usize> = self.units(sentence).rows().collect();
        let probabilities = self.probabilities(&self.hidden(&rows));
        let mut best = 0;
        for (i, &p) in probabilities.iter().enumerate() {
            if p > probabilities[best] {
                best = i;
            }
        }
        Prediction {
            label: self.labels[best].clone(),
            probability: probabilities[best],
            probabilities,
        }
    }

    /// Softmax cross-entropy of one example and its gradient.
    pub fn example_gradient(&self, rows: &[usize], label: usize) -> ExampleGradient {
        let dim = self.dim();
        let hidden = self.hidden(rows);
        let probs = self.probabilities(&hidden);
        let mut grad_hidden = vec![0.0; dim];
        let mut grad_output = vec![0.0; self.output_weights.len()];
        for (l, &p) in probs.iter().enumerate() {
            let g = p - if l == label { 1.0 } else { 0.0 };
            let w = &self.output_weights[l * dim..(l + 1) * dim];
            for k in 0..dim {
                grad_hidden[k] += g * w[k];
                grad_output[l * dim + k] = g * hidden[k];
            }
        }
        ExampleGradient {
            loss: -probs[label].max(f64::MIN_POSITIVE).ln(),
            hidden: grad_hidden,
            output: grad_output,
        }
    }

    fn step(&mut self, rows: &[usize], label: usize, lr: f64) {
        let grad = self.example_gradient(rows, label);
        let dim = self.dim();
        for (w, g) in self.output_weights.iter_mut().zip(&grad.output) {
            *w -= lr * g;
        }
        let scale = lr / rows.len() as f64;
        for &r in rows {
            for (w, g) in self.input_table[r * dim..(r + 1) * dim].iter_mut().zip(&grad.hidden) {
                *w -= scale * g;
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let dim = self.dim();
        let v = self.vocab.len();
        let init = initial_input_table(&self.config, v);
        let row = |r: usize| self.input_table[r * dim..(r + 1) * dim].to_vec();
        write_json(
            path,
            &ClassifierFile {
                version: FORMAT_VERSION,
                config: self.config.clone(),
                vocab: self.vocab.clone(),
                label_set: self.labels.clone(),
                word_rows: (0..v).map(row).collect(),
                bucket_rows: (v..v + self.config.buckets())
                    .filter(|&r| self.input_table[r * dim..(r + 1) * dim] != init[r * dim..(r + 1) * dim])
                    .map(|r| (r - v, row(r)))
                    .collect(),
                output_weights: self.output_weights.chunks(dim).map(<[f64]>::to_vec).collect(),
            },
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut file: ClassifierFile = read_json(path)?;
        file.vocab.reindex();
        let dim = file.config.dim;
        let v = file.vocab.len();
        let mut input_table = initial_input_table(&file.config, v);
        for (r, row) in file.word_rows.iter().enumerate() {
            input_table[r * dim..(r + 1) * dim].copy_from_slice(row);
        }
        for (b, row) in &file.bucket_rows {
            input_table[(v + b) * dim..(v + b + 1) * dim].copy_from_slice(row);
        }
        Ok(ClassifierModel {
            config: file.config,
            vocab: file.vocab,
            labels: file.label_set,
            input_table,
            output_weights: file.output_weights.concat(),
        })
    }
}

#[derive(Serialize, Deserialize)]
struct ClassifierFile {
    version: u32,
    config: ClassifierConfig,
    vocab: Vocab,
    label_set: Vec<DomainLabel>,
    word_rows: Vec<Vec<f64>>,
    bucket_rows: Vec<(usize, Vec<f64>)>,
    output_weights: Vec<Vec<f64>>,
}

/// Seeded initial model: random input table, zero output weights. The label
/// set is sorted.
pub fn initialize(examples: &[(Sentence, DomainLabel)], config: &ClassifierConfig) -> Result<ClassifierModel> {
    if config.dim == 0 || config.ngram_order == 0 || config.min_count == 0 || !(config.lr_start > 0.0) {
        return Err(Error::Config("classifier dim, ngram_order, min_count and lr_start must be positive".into()));
    }
    let labels: Vec<DomainLabel> = examples
        .iter()
        .map(|(_, l)| l.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if labels.len() < 2 {
        return Err(Error::Data(format!(
            "classifier training needs at least 2 distinct labels, found {}",
            labels.len()
        )));
    }
    let vocab = Vocab::build(examples.iter().map(|(s, _)| s), config.min_count);
    Ok(ClassifierModel {
        input_table: initial_input_table(config, vocab.len()),
        output_weights: vec![0.0; labels.len() * config.dim],
        config: config.clone(),
        vocab,
        labels,
    })
}

pub fn train_classifier(examples: &[(Sentence, DomainLabel)], config: &ClassifierConfig) -> Result<ClassifierModel> {
    let mut model = initialize(examples, config)?;
    let data: Vec<(Vec<usize>, usize)> = examples
        .iter()
        .map(|(s, l)| {
            let rows: Vec<usize> = model.units(s).rows().collect();
            (rows, model.label_index(l).expect("label in set"))
        })
        .filter(|(rows, _)| !rows.is_empty())
        .collect();
    let total = (data.len() * config.epochs) as f64;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut rng = seeded_rng(config.seed.wrapping_add(1));
    let mut processed = 0usize;
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let lr = config.lr_start * (1.0 - processed as f64 / total);
            processed += 1;
            let (rows, label) = &data[i];
            model.step(rows, *label, lr);
        }
    }
    Ok(model)
}

/// Trains on the seed labeling and labels every unlabeled sentence. Seed
/// examples come first in the output, unchanged.
pub fn propagate_labels(
    seed_labeled: &[(Sentence, DomainLabel)],
    unlabeled: &[Sentence],
    config: &ClassifierConfig,
) -> Result<Vec<(Sentence, DomainLabel)>> {
    let model = train_classifier(seed_labeled, config)?;
    let mut out = seed_labeled.to_vec();
    out.extend(unlabeled.iter().map(|s| (s.clone(), model.predict(s).label)));
    Ok(out)
}

pub fn format_labeled_line(sentence: &Sentence, label: &DomainLabel) -> String {
    if sentence.is_empty() {
        format!("{LABEL_PREFIX}{label}")
    } else {
        format!("{LABEL_PREFIX}{label} {sentence}")
    }
}

/// Parses `__label__<id> tokens...`.
pub fn parse_labeled_line(line: &str) -> Result<(Sentence, DomainLabel)> {
    let mut tokens = line.split_whitespace();
    let head = tokens.next().unwrap_or("");
    let id = head
        .strip_prefix(LABEL_PREFIX)
        .ok_or_else(|| Error::Format(format!("line does not start with {LABEL_PREFIX}: {line:?}")))?;
    let label = DomainLabel::new(id)?;
    Ok((Sentence::from_tokens(tokens)?, label))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn l(s: &str) -> DomainLabel {
        DomainLabel::new(s).unwrap()
    }

    #[test]
    fn single_label_is_a_data_error() {
        let ex = vec![(Sentence::parse("a"), l("A"))];
        assert!(matches!(train_classifier(&ex, &ClassifierConfig::default()), Err(Error::Data(_))));
    }

    #[test]
    fn zero_epochs_predicts_earliest_label() {
        let ex = vec![(Sentence::parse("a"), l("B")), (Sentence::parse("b"), l("A"))];
        let cfg = ClassifierConfig { epochs: 0, bucket_count: 32, ..Default::default() };
        let m = train_classifier(&ex, &cfg).unwrap();
        assert_eq!(m.predict(&Sentence::parse("a")).label, l("A"));
        assert_eq!(m, initialize(&ex, &cfg).unwrap());
    }

    #[test]
    fn all_oov_ties_to_first_label() {
        let ex = vec![(Sentence::parse("x x"), l("A")), (Sentence::parse("y y"), l("B"))];
        let cfg = ClassifierConfig { bucket_count: 32, ..Default::default() };
        let m = train_classifier(&ex, &cfg).unwrap();
        let p = m.predict(&Sentence::parse("never seen"));
        assert_eq!(p.label, l("A"));
        assert!((p.probability - 0.5).abs() < 1e-12);
    }

    #[test]
    fn labeled_line_format() {
        let (s, lab) = parse_labeled_line("__label__c3 How you doin' ?").unwrap();
        assert_eq!(lab, l("c3"));
        assert_eq!(s.len(), 4);
        assert_eq!(format_labeled_line(&s, &lab), "__label__c3 How you doin' ?");
        assert!(parse_labeled_line("c3 no prefix").is_err());
    }

    #[test]
    fn propagate_with_no_unlabeled_returns_seed() {
        let ex = vec![(Sentence::parse("a"), l("A")), (Sentence::parse("b"), l("B"))];
        let cfg = ClassifierConfig { bucket_count: 32, ..Default::default() };
        assert_eq!(propagate_labels(&ex, &[], &cfg).unwrap(), ex);
    }

    #[test]
    fn save_load_round_trip() {
        let ex = vec![(Sentence::parse("a b"), l("A")), (Sentence::parse("b c"), l("B"))];
        let cfg = ClassifierConfig { bucket_count: 64, ..Default::default() };
        let m = train_classifier(&ex, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("clf.json");
        m.save(&p).unwrap();
        assert_eq!(ClassifierModel::load(&p).unwrap(), m);
    }
}
