use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::config::{PipelineMode, Preset, ResolvedScale};
use crate::cluster::ClusterReport;
use crate::eval::ScoreTable;

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub name: String,
    pub label: Option<String>,
    pub train: usize,
    pub dev: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub steps: usize,
    pub first_loss: Option<f64>,
    /// Mean minibatch loss over the last 50 steps.
    pub final_loss: Option<f64>,
    pub truncated: usize,
    pub optimizer: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FineTuneSummary {
    pub domain: String,
    pub steps: usize,
    pub dev_loss_before: BTreeMap<String, f64>,
    pub dev_loss_after: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringSummary {
    pub k: usize,
    pub inertia: f64,
    pub silhouette: f64,
    pub train_histogram: Vec<usize>,
    /// Against the latent labels of the training pairs, when known.
    pub nmi: Option<f64>,
    pub purity: Option<f64>,
    /// Share of test sentences where the classifier agrees with the nearest
    /// centroid of the sentence's own embedding.
    pub classifier_agreement: f64,
    /// Test accuracy of classifier labels mapped to latent labels through the
    /// majority latent label of each training cluster.
    pub classifier_latent_accuracy: Option<f64>,
    pub dev_bleu: f64,
    /// One histogram of predicted clusters per test set.
    pub test_reports: Vec<ClusterReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagationSummary {
    pub seed_pairs: usize,
    pub propagated_pairs: usize,
    pub labels: Vec<String>,
    /// Agreement of propagated labels with ground truth, when known.
    pub agreement: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub version: u32,
    pub mode: PipelineMode,
    pub preset: Preset,
    pub config_hash: String,
    pub scale: ResolvedScale,
    pub artifacts: BTreeMap<String, String>,
    pub corpora: Vec<CorpusSummary>,
    pub scores: ScoreTable,
    /// Share of test outputs written in the expected target style, for
    /// synthetic data.
    pub style_accuracy: BTreeMap<String, f64>,
    pub training: BTreeMap<String, TrainSummary>,
    pub fine_tune: Vec<FineTuneSummary>,
    pub clustering: Vec<ClusteringSummary>,
    pub best_k: Option<usize>,
    pub propagation: Option<PropagationSummary>,
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "-".to_owned(), |v| format!("{v:.4}"))
}

impl Report {
    pub fn render(&self) -> String {
        let mut out = String::new();
        let mode = serde_json::to_string(&self.mode).unwrap_or_default();
        let _ = writeln!(out, "mode {} preset {} config {}", mode.trim_matches('"'), self.preset, &self.config_hash[..12]);
        out.push('\n');
        for c in &self.corpora {
            let _ = writeln!(
                out,
                "corpus {:<12} label {:<10} train {:>6} dev {:>5} test {:>5}",
                c.name,
                c.label.as_deref().unwrap_or("-"),
                c.train,
                c.dev,
                c.test
            );
        }
        out.push('\n');
        out.push_str(&self.scores.render());
        if !self.style_accuracy.is_empty() {
            out.push_str("\nstyle accuracy\n");
            for (system, acc) in &self.style_accuracy {
                let _ = writeln!(out, "  {system:<12} {acc:.4}");
            }
        }
        if !self.fine_tune.is_empty() {
            out.push_str("\nfine-tuning dev loss (before -> after)\n");
            for f in &self.fine_tune {
                let _ = write!(out, "  tuned on {:<10}", f.domain);
                for (d, before) in &f.dev_loss_before {
                    let after = f.dev_loss_after.get(d).copied().unwrap_or(f64::NAN);
                    let _ = write!(out, "  {d}: {before:.4} -> {after:.4}");
                }
                out.push('\n');
            }
        }
        if !self.clustering.is_empty() {
            out.push_str("\nclustering\n");
            let _ = writeln!(
                out,
                "  {:>4} {:>10} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}",
                "k", "inertia", "silh", "nmi", "purity", "agree", "latent", "dev"
            );
            for c in &self.clustering {
                let _ = writeln!(
                    out,
                    "  {:>4} {:>10.3} {:>8.4} {:>8} {:>8} {:>8.4} {:>8} {:>8.2}",
                    c.k,
                    c.inertia,
                    c.silhouette,
                    opt(c.nmi),
                    opt(c.purity),
                    c.classifier_agreement,
                    opt(c.classifier_latent_accuracy),
                    c.dev_bleu
                );
                for r in &c.test_reports {
                    let sizes: Vec<String> = r.sizes.iter().map(usize::to_string).collect();
                    let _ = writeln!(out, "       {:<12} {}", r.source_name, sizes.join(" "));
                }
            }
            if let Some(k) = self.best_k {
                let _ = writeln!(out, "  best k by dev BLEU: {k}");
            }
        }
        if let Some(p) = &self.propagation {
            let _ = writeln!(
                out,
                "\npropagation: {} seed pairs, {} propagated, labels {}, agreement {}",
                p.seed_pairs,
                p.propagated_pairs,
                p.labels.join(","),
                opt(p.agreement)
            );
        }
        out.push_str("\ntraining\n");
        for (name, t) in &self.training {
            let _ = writeln!(
                out,
                "  {name:<14} steps {:>7}  loss {} -> {}  truncated {}",
                t.steps,
                opt(t.first_loss),
                opt(t.final_loss),
                t.truncated
            );
        }
        out
    }
}
