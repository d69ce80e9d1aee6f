//! WebAssembly bindings for the browser demo.
//!
//! Each operation has a plain Rust function returning JSON (tested natively)
//! and a thin `#[wasm_bindgen]` wrapper that turns errors into JS exceptions.

use domainforge::bpe;
use domainforge::cluster::{fit_kmeans, silhouette, KMeansParams};
use domainforge::corpus::Sentence;
use domainforge::eval::{self, BleuResult};
use domainforge::util::seeded_rng;
use domainforge::{Error, Result};
use rand::Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Debug, Serialize)]
pub struct KMeansView {
    pub labels: Vec<usize>,
    pub centroids: Vec<[f64; 2]>,
    pub inertia: f64,
    pub inertia_trace: Vec<f64>,
    pub silhouette: f64,
}

#[derive(Debug, Serialize)]
pub struct BpeView {
    pub merges: Vec<(String, String)>,
    pub segmented: Vec<String>,
    pub words: usize,
    pub subwords: usize,
}

#[derive(Debug, Serialize)]
pub struct SentenceBleu {
    pub score: f64,
    pub matches: Vec<usize>,
    pub totals: Vec<usize>,
}

#[derive(Debug, Serialize)]
pub struct BleuView {
    pub corpus: BleuResult,
    pub matches: Vec<usize>,
    pub totals: Vec<usize>,
    pub sentences: Vec<SentenceBleu>,
}

/// Gaussian blobs in the unit square, flattened as x0, y0, x1, y1, ...
pub fn blobs(k: usize, per_cluster: usize, spread: f64, seed: u64) -> Vec<f64> {
    let mut rng = seeded_rng(seed);
    let mut out = Vec::with_capacity(2 * k * per_cluster);
    for _ in 0..k {
        let cx = rng.random_range(0.2..0.8);
        let cy = rng.random_range(0.2..0.8);
        for _ in 0..per_cluster {
            // Box-Muller
            let r = (-2.0 * (1.0 - rng.random::<f64>()).ln()).sqrt() * spread;
            let theta = std::f64::consts::TAU * rng.random::<f64>();
            out.push((cx + r * theta.cos()).clamp(0.0, 1.0));
            out.push((cy + r * theta.sin()).clamp(0.0, 1.0));
        }
    }
    out
}

pub fn kmeans_view(points: &[f64], k: usize, seed: u64, restarts: usize) -> Result<KMeansView> {
    if !points.len().is_multiple_of(2) {
        return Err(Error::Argument("points must be flattened (x, y) pairs".into()));
    }
    let vectors: Vec<Vec<f64>> = points.chunks(2).map(<[f64]>::to_vec).collect();
    let params = KMeansParams { restarts, ..Default::default() };
    let model = fit_kmeans(&vectors, k, seed, &params)?;
    let labels = vectors.iter().map(|v| model.assign(v)).collect::<Result<Vec<_>>>()?;
    Ok(KMeansView {
        silhouette: silhouette(&vectors, &labels),
        labels,
        centroids: model.centroids.iter().map(|c| [c[0], c[1]]).collect(),
        inertia: model.inertia,
        inertia_trace: model.inertia_trace,
    })
}

fn lines(text: &str) -> Vec<Sentence> {
    text.lines().map(Sentence::parse).filter(|s| !s.is_empty()).collect()
}

/// Learns merges on `corpus` and segments every line of `text`.
pub fn bpe_view(corpus: &str, vocab_limit: usize, text: &str) -> Result<BpeView> {
    let training = lines(corpus);
    if training.is_empty() {
        return Err(Error::Argument("training corpus is empty".into()));
    }
    let model = bpe::learn_joint(&training, &[], vocab_limit)?;
    let input: Vec<Sentence> = text.lines().map(Sentence::parse).collect();
    let segmented: Vec<Sentence> = input.iter().map(|s| model.apply(s)).collect();
    Ok(BpeView {
        merges: model.merges().to_vec(),
        words: input.iter().map(Sentence::len).sum(),
        subwords: segmented.iter().map(Sentence::len).sum(),
        segmented: segmented.iter().map(|s| s.tokens().join(" ")).collect(),
    })
}

/// Corpus BLEU plus per-sentence scores and n-gram counts. Blank lines count
/// as empty sentences so the two sides stay aligned.
pub fn bleu_view(hypotheses: &str, references: &str, max_n: usize) -> Result<BleuView> {
    let hyp: Vec<Sentence> = hypotheses.lines().map(Sentence::parse).collect();
    let reference: Vec<Sentence> = references.lines().map(Sentence::parse).collect();
    let stats = eval::corpus_stats(&hyp, &reference, max_n)?;
    let corpus = eval::bleu(&hyp, &reference, max_n)?;
    let sum = |f: fn(&eval::BleuStats) -> &Vec<usize>| -> Vec<usize> {
        (0..max_n).map(|n| stats.iter().map(|s| f(s)[n]).sum()).collect()
    };
    Ok(BleuView {
        matches: sum(|s| &s.matches),
        totals: sum(|s| &s.totals),
        corpus,
        sentences: stats
            .iter()
            .map(|s| SentenceBleu {
                score: s.result().score,
                matches: s.matches.clone(),
                totals: s.totals.clone(),
            })
            .collect(),
    })
}

fn to_js<T: Serialize>(value: Result<T>) -> std::result::Result<String, JsError> {
    let value = value.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&value).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = sampleBlobs)]
pub fn sample_blobs(k: usize, per_cluster: usize, spread: f64, seed: u32) -> Vec<f64> {
    blobs(k, per_cluster, spread, seed.into())
}

/// Returns a JSON-encoded [`KMeansView`].
#[wasm_bindgen]
pub fn kmeans(points: &[f64], k: usize, seed: u32, restarts: usize) -> std::result::Result<String, JsError> {
    to_js(kmeans_view(points, k, seed.into(), restarts))
}

/// Returns a JSON-encoded [`BpeView`].
#[wasm_bindgen(js_name = bpeSegment)]
pub fn bpe_segment(corpus: &str, vocab_limit: usize, text: &str) -> std::result::Result<String, JsError> {
    to_js(bpe_view(corpus, vocab_limit, text))
}

/// Returns a JSON-encoded [`BleuView`].
#[wasm_bindgen(js_name = bleuBreakdown)]
pub fn bleu_breakdown(hypotheses: &str, references: &str, max_n: usize) -> std::result::Result<String, JsError> {
    to_js(bleu_view(hypotheses, references, max_n))
}
