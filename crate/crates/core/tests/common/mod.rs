//! Reference computations shared by the oracle tests and the acceptance run.
//! Each check returns what it measured so callers pick the threshold.
#![allow(dead_code)]

use domainforge::annotate::{inject_feature, inject_tag, parse_factored, strip_tag};
use domainforge::bpe::{learn_joint, revert};
use domainforge::classify::{self, train_classifier, ClassifierConfig};
use domainforge::cluster::{fit_kmeans, KMeansParams};
use domainforge::corpus::{DomainLabel, ParallelCorpus, Sentence, SentencePair};
use domainforge::eval::{bleu, paired_bootstrap};
use domainforge::nmt::{train, NmtConfig, SourceMode};
use domainforge::sentvec::{train_embeddings, EmbeddingConfig, EmbeddingModel};
use domainforge::synthetic::{generate_synthetic, SyntheticSpec};
use domainforge::util::seeded_rng;
use rand::Rng;

pub fn s(line: &str) -> Sentence {
    Sentence::parse(line)
}

pub fn label(id: &str) -> DomainLabel {
    DomainLabel::new(id).unwrap()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn rel(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

pub fn toy_sentences(n: usize, seed: u64) -> Vec<Sentence> {
    let mut rng = seeded_rng(seed);
    let words = ["red", "green", "blue", "cat", "dog", "runs", "sleeps", "the", "a", "fast", "slow", "big"];
    (0..n)
        .map(|_| {
            let len = rng.random_range(3..8);
            Sentence::from_tokens((0..len).map(|_| words[rng.random_range(0..words.len())])).unwrap()
        })
        .collect()
}

// ---------- sentence embeddings ----------

/// Negative-sampling loss of one example from the raw tables.
pub fn embedding_loss(model: &EmbeddingModel, context: &[usize], target: usize, negatives: &[usize]) -> f64 {
    let dim = model.config.dim;
    let mut c = vec![0.0; dim];
    for &r in context {
        for k in 0..dim {
            c[k] += model.input_table[r * dim + k] / context.len() as f64;
        }
    }
    let score = |w: usize| (0..dim).map(|k| c[k] * model.output_table[w * dim + k]).sum::<f64>();
    let mut loss = -sigmoid(score(target)).ln();
    for &n in negatives {
        loss -= (1.0 - sigmoid(score(n))).ln();
    }
    loss
}

/// Worst relative error of the embedding gradient over random coordinates.
/// Also checks that the library's loss equals the reference loss.
pub fn sentvec_fd_error() -> f64 {
    let sentences = toy_sentences(50, 3);
    let config = EmbeddingConfig { dim: 16, bucket_count: 128, epochs: 2, ..Default::default() };
    let mut model = train_embeddings(&sentences, &config).unwrap();
    let units = model.units(&sentences[0]);
    let context = units.context_rows(1);
    let target = units.words[1];
    let negatives = [0usize, 3, 5];
    let grad = model.example_gradient(&context, target, &negatives);
    assert!((grad.loss - embedding_loss(&model, &context, target, &negatives)).abs() < 1e-12);

    let dim = config.dim;
    let mut rng = seeded_rng(9);
    let h = 1e-6;
    let mut worst = 0.0f64;
    for i in 0..20 {
        let k = rng.random_range(0..dim);
        let (analytic, numeric) = if i % 2 == 0 {
            let row = context[rng.random_range(0..context.len())];
            let mult = context.iter().filter(|&&r| r == row).count() as f64;
            let idx = row * dim + k;
            let orig = model.input_table[idx];
            model.input_table[idx] = orig + h;
            let plus = embedding_loss(&model, &context, target, &negatives);
            model.input_table[idx] = orig - h;
            let minus = embedding_loss(&model, &context, target, &negatives);
            model.input_table[idx] = orig;
            (grad.context[k] * mult / context.len() as f64, (plus - minus) / (2.0 * h))
        } else {
            let (row, _) = grad.output[rng.random_range(0..grad.output.len())];
            let analytic: f64 = grad.output.iter().filter(|(r, _)| *r == row).map(|(_, g)| g[k]).sum();
            let idx = row * dim + k;
            let orig = model.output_table[idx];
            model.output_table[idx] = orig + h;
            let plus = embedding_loss(&model, &context, target, &negatives);
            model.output_table[idx] = orig - h;
            let minus = embedding_loss(&model, &context, target, &negatives);
            model.output_table[idx] = orig;
            (analytic, (plus - minus) / (2.0 * h))
        };
        worst = worst.max(rel(analytic, numeric));
    }
    worst
}

// ---------- classifier ----------

/// 200 sentences, each holding one marker word (`aaa` for A, `bbb` for B)
/// among filler.
pub fn separable() -> Vec<(Sentence, DomainLabel)> {
    let mut rng = seeded_rng(5);
    let filler = ["x", "y", "z", "w"];
    (0..200)
        .map(|i| {
            let (word, l) = if i % 2 == 0 { ("aaa", "A") } else { ("bbb", "B") };
            let mut tokens = vec![word.to_owned()];
            for _ in 0..rng.random_range(1..4) {
                tokens.push(filler[rng.random_range(0..4)].to_owned());
            }
            let pos = rng.random_range(0..tokens.len());
            tokens.swap(0, pos);
            (Sentence::from_tokens(tokens).unwrap(), label(l))
        })
        .collect()
}

/// Forward pass written from the model tables alone.
pub fn classifier_probs(model: &classify::ClassifierModel, rows: &[usize]) -> Vec<f64> {
    let dim = model.config.dim;
    let mut hidden = vec![0.0; dim];
    for &r in rows {
        for k in 0..dim {
            hidden[k] += model.input_table[r * dim + k] / rows.len() as f64;
        }
    }
    let logits: Vec<f64> = (0..model.labels.len())
        .map(|l| (0..dim).map(|k| model.output_weights[l * dim + k] * hidden[k]).sum())
        .collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|x| (x - max).exp()).sum();
    logits.iter().map(|x| (x - max).exp() / z).collect()
}

pub fn classifier_fd_error() -> f64 {
    let data = separable();
    let config = ClassifierConfig { bucket_count: 64, epochs: 1, ..Default::default() };
    let mut model = train_classifier(&data, &config).unwrap();
    let rows: Vec<usize> = model.units(&data[3].0).rows().collect();
    let target = model.label_index(&data[3].1).unwrap();
    let grad = model.example_gradient(&rows, target);
    let loss = |m: &classify::ClassifierModel| -classifier_probs(m, &rows)[target].ln();
    assert!((grad.loss - loss(&model)).abs() < 1e-12);
    let dim = config.dim;
    let mut rng = seeded_rng(2);
    let h = 1e-6;
    let mut worst = 0.0f64;
    for i in 0..20 {
        let (analytic, numeric) = if i % 2 == 0 {
            let row = rows[rng.random_range(0..rows.len())];
            let k = rng.random_range(0..dim);
            let mult = rows.iter().filter(|&&r| r == row).count() as f64;
            let idx = row * dim + k;
            let orig = model.input_table[idx];
            model.input_table[idx] = orig + h;
            let plus = loss(&model);
            model.input_table[idx] = orig - h;
            let minus = loss(&model);
            model.input_table[idx] = orig;
            (grad.hidden[k] * mult / rows.len() as f64, (plus - minus) / (2.0 * h))
        } else {
            let idx = rng.random_range(0..model.output_weights.len());
            let orig = model.output_weights[idx];
            model.output_weights[idx] = orig + h;
            let plus = loss(&model);
            model.output_weights[idx] = orig - h;
            let minus = loss(&model);
            model.output_weights[idx] = orig;
            (grad.output[idx], (plus - minus) / (2.0 * h))
        };
        worst = worst.max(rel(analytic, numeric));
    }
    worst
}

// ---------- NMT ----------

/// Synthetic pairs conditioned for `mode`.
pub fn conditioned(domains: &[ParallelCorpus], mode: SourceMode) -> ParallelCorpus {
    let parts: Vec<ParallelCorpus> = domains
        .iter()
        .map(|c| {
            let pairs = c
                .pairs
                .iter()
                .map(|p| {
                    let label = p.label.clone().unwrap();
                    let line = match mode {
                        SourceMode::Plain => p.source.to_string(),
                        SourceMode::Tag => inject_tag(&p.source, &label).unwrap().to_string(),
                        SourceMode::Feat => inject_feature(&p.source, &label).unwrap().to_string(),
                    };
                    SentencePair { source: Sentence::parse(&line), ..p.clone() }
                })
                .collect();
            ParallelCorpus::new(c.name.clone(), pairs)
        })
        .collect();
    ParallelCorpus::concat("mixed", &parts)
}

/// Worst gradient-check error over fresh models in every source mode.
pub fn nmt_fd_error() -> f64 {
    let spec = SyntheticSpec { pairs_per_domain: 4, seed: 5, ..Default::default() };
    let domains = generate_synthetic(&spec).unwrap().domains;
    let mut worst = 0.0f64;
    for mode in [SourceMode::Plain, SourceMode::Tag, SourceMode::Feat] {
        let corpus = conditioned(&domains, mode);
        let batch = ParallelCorpus::new("b", corpus.pairs[..4].to_vec());
        let (model, _) = train(&corpus, mode, &NmtConfig { max_steps: 0, ..Default::default() }).unwrap();
        worst = worst.max(model.gradient_check(&batch, 60, 7).unwrap());
    }
    worst
}

// ---------- clustering ----------

pub fn inertia_of(points: &[Vec<f64>], labels: &[usize], k: usize) -> Option<f64> {
    let dim = points[0].len();
    let mut total = 0.0;
    for c in 0..k {
        let members: Vec<&Vec<f64>> = points.iter().zip(labels).filter(|(_, &l)| l == c).map(|(p, _)| p).collect();
        if members.is_empty() {
            return None;
        }
        let mean: Vec<f64> = (0..dim).map(|d| members.iter().map(|p| p[d]).sum::<f64>() / members.len() as f64).collect();
        total += members.iter().map(|p| p.iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()).sum::<f64>();
    }
    Some(total)
}

/// Minimum inertia over every assignment with no empty cluster.
pub fn brute_force(points: &[Vec<f64>], k: usize) -> f64 {
    let n = points.len();
    let mut best = f64::INFINITY;
    let mut labels = vec![0usize; n];
    for code in 0..k.pow(n as u32) {
        let mut c = code;
        for l in labels.iter_mut() {
            *l = c % k;
            c /= k;
        }
        if let Some(i) = inertia_of(points, &labels, k) {
            best = best.min(i);
        }
    }
    best
}

#[derive(Debug, Default)]
pub struct KMeansCheck {
    pub fits: usize,
    /// (instance, k, fitted inertia, optimum) for fits off by more than 1e-9.
    pub misses: Vec<(u64, usize, f64, f64)>,
    /// Fits whose inertia trace ever increased.
    pub trace_violations: usize,
    /// Fits whose histogram or refit disagreed with the model.
    pub inconsistent: usize,
}

/// Random instances of 1..=8 points in 1..=3 dimensions, every k <= 3.
pub fn kmeans_brute_force(instances: u64) -> KMeansCheck {
    let mut rng = seeded_rng(77);
    let params = KMeansParams { restarts: 10, ..Default::default() };
    let mut check = KMeansCheck::default();
    for instance in 0..instances {
        let n = rng.random_range(1..=8);
        let dim = rng.random_range(1..=3);
        let points: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| rng.random_range(-5.0..5.0)).collect()).collect();
        for k in 1..=3.min(n) {
            check.fits += 1;
            let model = fit_kmeans(&points, k, instance, &params).unwrap();
            let optimum = brute_force(&points, k);
            if (model.inertia - optimum).abs() > 1e-9 {
                check.misses.push((instance, k, model.inertia, optimum));
            }
            if model.inertia_trace.windows(2).any(|w| w[1] > w[0] * (1.0 + 1e-12)) {
                check.trace_violations += 1;
            }
            let mut hist = vec![0; k];
            for p in &points {
                hist[model.assign(p).unwrap()] += 1;
            }
            if hist != model.train_histogram || model != fit_kmeans(&points, k, instance, &params).unwrap() {
                check.inconsistent += 1;
            }
        }
    }
    check
}

// ---------- BLEU and significance ----------

/// Largest deviation from the hand-computed BLEU fixtures.
pub fn bleu_fixture_error() -> f64 {
    // "the the the" vs "the cat sat": clipped unigram matches 1 of 3, equal lengths.
    let a = bleu(&[s("the the the")], &[s("the cat sat")], 1).unwrap().score;
    // Two sentences, max_n = 2: 1-grams 5/6 matched, 2-grams 3/4 matched,
    // hyp 6 tokens vs ref 7.
    let expected = (1.0f64 - 7.0 / 6.0).exp() * ((5.0f64 / 6.0).ln() / 2.0 + (3.0f64 / 4.0).ln() / 2.0).exp() * 100.0;
    let b = bleu(&[s("a b c d"), s("e f")], &[s("a b c x y"), s("e f")], 2).unwrap().score;
    (a - 100.0 / 3.0).abs().max((b - expected).abs())
}

/// Largest deviation of bleu(h, h) from 100 over assorted fixtures.
pub fn bleu_identity_error() -> f64 {
    let fixtures: [&[&str]; 5] = [&["a b c"], &["x y z w"], &["p"], &["the cat sat on the mat"], &["a a a a", "b"]];
    fixtures
        .iter()
        .map(|h| {
            let hyp: Vec<Sentence> = h.iter().map(|x| s(x)).collect();
            (bleu(&hyp, &hyp, 4).unwrap().score - 100.0).abs()
        })
        .fold(0.0, f64::max)
}

/// p-values for (perfect vs zero-overlap, identical systems) on 200 sentences.
pub fn bootstrap_fixture() -> (f64, f64) {
    let refs: Vec<Sentence> = (0..200).map(|i| s(&format!("r{i} a b c d"))).collect();
    let zero: Vec<Sentence> = (0..200).map(|i| s(&format!("z{i} v w x y"))).collect();
    let distinct = paired_bootstrap(&refs, &zero, &refs, 1000, 1).unwrap().p_value;
    let same = paired_bootstrap(&zero, &zero, &refs, 1000, 1).unwrap().p_value;
    (distinct, same)
}

// ---------- BPE and annotation ----------

/// Number of random sentences that do not survive apply then revert.
pub fn bpe_round_trip_failures(n: usize) -> usize {
    let mut rng = seeded_rng(12);
    let alphabet: Vec<char> = "abcdefghij".chars().collect();
    let word = |rng: &mut domainforge::util::Rng| -> String {
        (0..rng.random_range(1..9)).map(|_| alphabet[rng.random_range(0..alphabet.len())]).collect()
    };
    let training: Vec<Sentence> = (0..300)
        .map(|_| Sentence::from_tokens((0..rng.random_range(1..8)).map(|_| word(&mut rng))).unwrap())
        .collect();
    let model = learn_joint(&training, &training, 200).unwrap();
    assert!(!model.merges().is_empty());
    (0..n)
        .filter(|_| {
            let sent = Sentence::from_tokens((0..rng.random_range(0..10)).map(|_| word(&mut rng))).unwrap();
            revert(&model.apply(&sent)).ok() != Some(sent)
        })
        .count()
}

/// Number of random sentences whose tag or factor annotation does not
/// strip back to the original sentence and label.
pub fn annotate_round_trip_failures(n: usize) -> usize {
    let mut rng = seeded_rng(31);
    let chars: Vec<char> = "abcxyz.?'@-".chars().collect();
    (0..n)
        .filter(|i| {
            let tokens: Vec<String> = (0..rng.random_range(0..8))
                .map(|_| (0..rng.random_range(1..6)).map(|_| chars[rng.random_range(0..chars.len())]).collect())
                .collect();
            let sent = Sentence::from_tokens(tokens).unwrap();
            let l = label(&format!("dom{}", i % 5));
            let tagged = inject_tag(&sent, &l).unwrap().to_string();
            let tag_ok = strip_tag(&tagged).ok() == Some((l.clone(), sent.clone()));
            let factored = parse_factored(&inject_feature(&sent, &l).unwrap().to_string()).unwrap();
            let feat_ok = factored.surfaces() == sent && (sent.is_empty() || factored.factor() == Some(&l));
            !(tag_ok && feat_ok)
        })
        .count()
}
