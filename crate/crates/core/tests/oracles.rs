//! Independent reference computations checked against the library.

mod common;

use common::*;
use domainforge::classify::{propagate_labels, train_classifier, ClassifierConfig};
use domainforge::cluster::{fit_kmeans, sweep_k, KMeansParams};
use domainforge::corpus::{DomainLabel, Sentence};
use domainforge::eval::{bleu, paired_bootstrap};
use domainforge::sentvec::{self, train_embeddings, EmbeddingConfig, EmbeddingModel};
use domainforge::util::seeded_rng;
use rand::Rng;

// ---------- sentence embeddings ----------

#[test]
fn sentvec_gradient_matches_finite_differences() {
    let worst = sentvec_fd_error();
    assert!(worst <= 1e-4, "max relative error {worst}");
}

#[test]
fn sentvec_training_lowers_the_loss() {
    let sentences = toy_sentences(50, 4);
    let config = EmbeddingConfig { dim: 16, bucket_count: 256, epochs: 5, ..Default::default() };
    let before = sentvec::initialize(&sentences, &config).unwrap();
    let after = train_embeddings(&sentences, &config).unwrap();
    let mut rng = seeded_rng(21);
    let v = before.vocab.len();
    let mut examples = Vec::new();
    for sent in &sentences {
        let u = before.units(sent);
        if u.words.len() < 2 {
            continue;
        }
        for pos in 0..u.words.len() {
            let target = u.words[pos];
            let negatives: Vec<usize> = (0..5)
                .map(|_| loop {
                    let n = rng.random_range(0..v);
                    if n != target {
                        break n;
                    }
                })
                .collect();
            examples.push((u.context_rows(pos), target, negatives));
        }
    }
    let mean = |m: &EmbeddingModel| {
        examples.iter().map(|(c, t, n)| embedding_loss(m, c, *t, n)).sum::<f64>() / examples.len() as f64
    };
    assert!(mean(&after) < mean(&before), "{} -> {}", mean(&before), mean(&after));
}

// ---------- classifier ----------

#[test]
fn classifier_separable_data() {
    let data = separable();
    let model = train_classifier(&data, &ClassifierConfig::default()).unwrap();
    for (sent, l) in &data {
        let rows: Vec<usize> = model.units(sent).rows().collect();
        let probs = classifier_probs(&model, &rows);
        let best = (0..probs.len()).fold(0, |b, i| if probs[i] > probs[b] { i } else { b });
        assert_eq!(&model.labels[best], l, "{sent}");
        let p = model.predict(sent);
        assert!((p.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
    let p = model.predict(&s("aaa aaa"));
    assert_eq!(p.label, label("A"));
    assert!(p.probability > 0.9, "{}", p.probability);
}

#[test]
fn classifier_gradient_matches_finite_differences() {
    let worst = classifier_fd_error();
    assert!(worst <= 1e-4, "max relative error {worst}");
}

#[test]
fn propagation_labels_seed_duplicates() {
    let seed = separable();
    let unlabeled: Vec<Sentence> = seed.iter().map(|(s, _)| s.clone()).collect();
    let out = propagate_labels(&seed, &unlabeled, &ClassifierConfig::default()).unwrap();
    assert_eq!(out.len(), 2 * seed.len());
    for (i, (_, l)) in seed.iter().enumerate() {
        assert_eq!(&out[seed.len() + i].1, l);
    }
    assert_eq!(propagate_labels(&seed, &[], &ClassifierConfig::default()).unwrap(), seed);
}

#[test]
fn propagation_smoke_10k_seed_90k_unlabeled() {
    let start = std::time::Instant::now();
    let mut rng = seeded_rng(8);
    let make = |rng: &mut domainforge::util::Rng, i: usize| {
        let l = i % 3;
        let tokens: Vec<String> = (0..6).map(|_| format!("{}{}", ["p", "q", "r"][l], rng.random_range(0..50))).collect();
        (Sentence::from_tokens(tokens).unwrap(), label(["A", "B", "C"][l]))
    };
    let seed: Vec<_> = (0..10_000).map(|i| make(&mut rng, i)).collect();
    let unlabeled: Vec<(Sentence, DomainLabel)> = (0..90_000).map(|i| make(&mut rng, i)).collect();
    let sentences: Vec<Sentence> = unlabeled.iter().map(|(s, _)| s.clone()).collect();
    let out = propagate_labels(&seed, &sentences, &ClassifierConfig::default()).unwrap();
    let agree = out[10_000..].iter().zip(&unlabeled).filter(|(a, b)| a.1 == b.1).count();
    assert!(agree as f64 >= 0.95 * 90_000.0);
    assert!(start.elapsed().as_secs() < 300);
}

// ---------- clustering ----------

#[test]
fn kmeans_matches_brute_force_on_small_instances() {
    let check = kmeans_brute_force(1000);
    assert!(check.misses.is_empty(), "{:?}", check.misses);
    assert_eq!(check.trace_violations, 0);
    assert_eq!(check.inconsistent, 0);
    assert!(check.fits > 2000);
}

#[test]
fn kmeans_line_example() {
    let pts: Vec<Vec<f64>> = [0.0, 1.0, 10.0, 11.0].iter().map(|&x| vec![x]).collect();
    assert_eq!(brute_force(&pts, 2), 1.0);
    let m = fit_kmeans(&pts, 2, 1, &KMeansParams::default()).unwrap();
    let mut c: Vec<f64> = m.centroids.iter().map(|c| c[0]).collect();
    c.sort_by(f64::total_cmp);
    assert_eq!(c, vec![0.5, 10.5]);
    assert!((m.inertia - 1.0).abs() < 1e-12);
}

fn silhouette_oracle(points: &[Vec<f64>], labels: &[usize]) -> f64 {
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let k = labels.iter().max().unwrap() + 1;
    let mut total = 0.0;
    for i in 0..points.len() {
        let mut mean_to = vec![(0.0, 0usize); k];
        for j in 0..points.len() {
            if i != j {
                mean_to[labels[j]].0 += dist(&points[i], &points[j]);
                mean_to[labels[j]].1 += 1;
            }
        }
        if mean_to[labels[i]].1 == 0 {
            continue;
        }
        let a = mean_to[labels[i]].0 / mean_to[labels[i]].1 as f64;
        let b = (0..k)
            .filter(|&c| c != labels[i] && mean_to[c].1 > 0)
            .map(|c| mean_to[c].0 / mean_to[c].1 as f64)
            .fold(f64::INFINITY, f64::min);
        total += (b - a) / a.max(b);
    }
    total / points.len() as f64
}

#[test]
fn silhouette_prefers_the_true_blob_count() {
    let mut rng = seeded_rng(4);
    let points: Vec<Vec<f64>> = (0..60)
        .map(|i| {
            let c = if i % 2 == 0 { 0.0 } else { 20.0 };
            vec![c + rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]
        })
        .collect();
    let sweep = sweep_k(&points, &[1, 2, 3], 1, &KMeansParams::default(), 1000).unwrap();
    assert_eq!(sweep[0].silhouette, 0.0);
    for e in &sweep[1..] {
        let labels: Vec<usize> = points.iter().map(|p| e.model.assign(p).unwrap()).collect();
        assert!((e.silhouette - silhouette_oracle(&points, &labels)).abs() < 1e-12);
    }
    assert!(sweep[1].silhouette > sweep[2].silhouette);
}

#[test]
fn sweep_smoke_10k_vectors() {
    let start = std::time::Instant::now();
    let mut rng = seeded_rng(6);
    let points: Vec<Vec<f64>> = (0..10_000).map(|_| (0..16).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let sweep = sweep_k(&points, &[4, 8, 16, 32], 1, &KMeansParams::default(), 2000).unwrap();
    assert_eq!(sweep.len(), 4);
    assert!(start.elapsed().as_secs() < 300);
}

// ---------- BLEU and significance ----------

#[test]
fn bleu_hand_fixture() {
    assert!(bleu_fixture_error() < 1e-9);
    assert_eq!(bleu(&[s("the the the")], &[s("the cat sat")], 1).unwrap().brevity_penalty, 1.0);
}

#[test]
fn bleu_identity_and_monotone_fixtures() {
    assert!(bleu_identity_error() < 1e-9);
    let fixtures: [(&[&str], &[&str]); 5] = [
        (&["a b c"], &["a b d"]),
        (&["x y z w"], &["x y"]),
        (&["p"], &["q r s"]),
        (&["the cat sat on the mat"], &["the cat is on the mat"]),
        (&["a a a a", "b"], &["a b a b", "c"]),
    ];
    for (h, r) in fixtures {
        let hyp: Vec<Sentence> = h.iter().map(|x| s(x)).collect();
        let refs: Vec<Sentence> = r.iter().map(|x| s(x)).collect();
        let base = bleu(&hyp, &refs, 4).unwrap().score;
        let mut h2 = hyp.clone();
        let mut r2 = refs.clone();
        h2.push(s("m n o p q"));
        r2.push(s("m n o p q"));
        assert!(bleu(&h2, &r2, 4).unwrap().score >= base);
    }
}

#[test]
fn bootstrap_perfect_versus_zero_overlap() {
    let (distinct, same) = bootstrap_fixture();
    assert!(distinct <= 0.01);
    assert_eq!(same, 1.0);
    let refs: Vec<Sentence> = (0..200).map(|i| s(&format!("r{i} a b c d"))).collect();
    let zero: Vec<Sentence> = (0..200).map(|i| s(&format!("z{i} v w x y"))).collect();
    let ab = paired_bootstrap(&refs, &zero, &refs, 1000, 1).unwrap();
    let ba = paired_bootstrap(&zero, &refs, &refs, 1000, 1).unwrap();
    assert_eq!(ab.p_value, ba.p_value);
    assert_eq!(ab.observed_delta, -ba.observed_delta);
}

// ---------- BPE and annotation ----------

#[test]
fn bpe_round_trip_on_random_sentences() {
    assert_eq!(bpe_round_trip_failures(1000), 0);
}

#[test]
fn annotate_round_trips_on_random_sentences() {
    assert_eq!(annotate_round_trip_failures(1000), 0);
}
