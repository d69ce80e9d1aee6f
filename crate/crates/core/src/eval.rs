//! Corpus BLEU, paired-bootstrap significance and system-by-domain score
//! tables.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::Sentence;
use crate::error::{Error, Result};
use crate::util::seeded_rng;

/// Stand-in for a zero n-gram match count.
pub const SMOOTHING_EPSILON: f64 = 1e-9;
pub const DEFAULT_MAX_N: usize = 4;
const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleuResult {
    pub score: f64,
    pub n_gram_precisions: Vec<f64>,
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
}

/// Sufficient statistics of one sentence pair.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BleuStats {
    pub matches: Vec<usize>,
    pub totals: Vec<usize>,
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl BleuStats {
    fn zero(max_n: usize) -> Self {
        BleuStats {
            matches: vec![0; max_n],
            totals: vec![0; max_n],
            hyp_len: 0,
            ref_len: 0,
        }
    }

    fn add(&mut self, other: &BleuStats) {
        for (a, b) in self.matches.iter_mut().zip(&other.matches) {
            *a += b;
        }
        for (a, b) in self.totals.iter_mut().zip(&other.totals) {
            *a += b;
        }
        self.hyp_len += other.hyp_len;
        self.ref_len += other.ref_len;
    }

    /// Orders with no hypothesis n-grams anywhere in the corpus are left out
    /// of the geometric mean, so a system always scores 100 against itself.
    pub fn result(&self) -> BleuResult {
        let mut precisions = Vec::new();
        let mut log_sum = 0.0;
        let mut orders = 0;
        for (&m, &t) in self.matches.iter().zip(&self.totals) {
            if t == 0 {
                continue;
            }
            let p = if m == 0 { SMOOTHING_EPSILON } else { m as f64 } / t as f64;
            precisions.push(p);
            log_sum += p.ln();
            orders += 1;
        }
        let brevity_penalty = if self.hyp_len == 0 {
            if self.ref_len == 0 { 1.0 } else { 0.0 }
        } else if self.hyp_len < self.ref_len {
            (1.0 - self.ref_len as f64 / self.hyp_len as f64).exp()
        } else {
            1.0
        };
        let score = if orders == 0 {
            if self.ref_len == 0 { 100.0 } else { 0.0 }
        } else {
            brevity_penalty * (log_sum / orders as f64).exp() * 100.0
        };
        BleuResult {
            score,
            n_gram_precisions: precisions,
            brevity_penalty,
            hyp_len: self.hyp_len,
            ref_len: self.ref_len,
        }
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_default() += 1;
        }
    }
    counts
}

pub fn sentence_stats(hyp: &Sentence, reference: &Sentence, max_n: usize) -> BleuStats {
    let mut stats = BleuStats::zero(max_n);
    stats.hyp_len = hyp.len();
    stats.ref_len = reference.len();
    for n in 1..=max_n {
        let h = ngram_counts(hyp.tokens(), n);
        let r = ngram_counts(reference.tokens(), n);
        stats.totals[n - 1] = hyp.len().saturating_sub(n - 1);
        stats.matches[n - 1] = h
            .iter()
            .map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0)))
            .sum();
    }
    stats
}

fn check_lengths(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::Data(format!("{what}: {a} vs {b} sentences")));
    }
    Ok(())
}

pub fn corpus_stats(hypotheses: &[Sentence], references: &[Sentence], max_n: usize) -> Result<Vec<BleuStats>> {
    check_lengths(hypotheses.len(), references.len(), "hypothesis/reference length mismatch")?;
    if hypotheses.is_empty() {
        return Err(Error::Argument("BLEU needs at least one sentence".into()));
    }
    if max_n == 0 {
        return Err(Error::Argument("max_n must be at least 1".into()));
    }
    Ok(hypotheses
        .iter()
        .zip(references)
        .map(|(h, r)| sentence_stats(h, r, max_n))
        .collect())
}

fn aggregate<'a>(stats: impl IntoIterator<Item = &'a BleuStats>, max_n: usize) -> BleuStats {
    let mut total = BleuStats::zero(max_n);
    for s in stats {
        total.add(s);
    }
    total
}

pub fn bleu(hypotheses: &[Sentence], references: &[Sentence], max_n: usize) -> Result<BleuResult> {
    let stats = corpus_stats(hypotheses, references, max_n)?;
    Ok(aggregate(&stats, max_n).result())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceResult {
    pub p_value: f64,
    pub n_resamples: usize,
    pub observed_delta: f64,
}

fn resample(n: usize, seed: u64, i: usize) -> Vec<usize> {
    let mut rng = seeded_rng(seed.wrapping_add(i as u64));
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

/// Paired bootstrap over sentence indices. Resample `i` uses the generator
/// seeded with `seed + i`. The p-value is the fraction of resamples whose
/// BLEU delta does not share the sign of the observed delta (a zero delta
/// counts as disagreement); identical observed scores give p = 1.
pub fn paired_bootstrap(
    hyp_a: &[Sentence],
    hyp_b: &[Sentence],
    references: &[Sentence],
    n_resamples: usize,
    seed: u64,
) -> Result<SignificanceResult> {
    check_lengths(hyp_a.len(), hyp_b.len(), "system length mismatch")?;
    if n_resamples == 0 {
        return Err(Error::Argument("n_resamples must be at least 1".into()));
    }
    let max_n = DEFAULT_MAX_N;
    let sa = corpus_stats(hyp_a, references, max_n)?;
    let sb = corpus_stats(hyp_b, references, max_n)?;
    let observed_delta = aggregate(&sa, max_n).result().score - aggregate(&sb, max_n).result().score;
    if observed_delta == 0.0 {
        return Ok(SignificanceResult {
            p_value: 1.0,
            n_resamples,
            observed_delta,
        });
    }
    let n = sa.len();
    let mut disagreements = 0usize;
    for i in 0..n_resamples {
        let idx = resample(n, seed, i);
        let a = aggregate(idx.iter().map(|&j| &sa[j]), max_n).result().score;
        let b = aggregate(idx.iter().map(|&j| &sb[j]), max_n).result().score;
        let delta = a - b;
        if delta == 0.0 || delta.signum() != observed_delta.signum() {
            disagreements += 1;
        }
    }
    Ok(SignificanceResult {
        p_value: disagreements as f64 / n_resamples as f64,
        n_resamples,
        observed_delta,
    })
}

/// Percentile bootstrap interval of corpus BLEU at the given coverage.
pub fn bootstrap_ci(
    hypotheses: &[Sentence],
    references: &[Sentence],
    n_resamples: usize,
    seed: u64,
    coverage: f64,
) -> Result<(f64, f64)> {
    if n_resamples == 0 {
        return Err(Error::Argument("n_resamples must be at least 1".into()));
    }
    let stats = corpus_stats(hypotheses, references, DEFAULT_MAX_N)?;
    let mut scores: Vec<f64> = (0..n_resamples)
        .map(|i| {
            let idx = resample(stats.len(), seed, i);
            aggregate(idx.iter().map(|&j| &stats[j]), DEFAULT_MAX_N).result().score
        })
        .collect();
    scores.sort_by(f64::total_cmp);
    let tail = (1.0 - coverage) / 2.0;
    let at = |q: f64| {
        let pos = (q * (scores.len() - 1) as f64).round() as usize;
        scores[pos.min(scores.len() - 1)]
    };
    Ok((at(tail), at(1.0 - tail)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemOutput {
    pub name: String,
    /// Hypotheses per domain, in the same order as the table's domains.
    pub hypotheses: Vec<Vec<Sentence>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainRefs {
    pub name: String,
    pub references: Vec<Sentence>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableOptions {
    /// Systems every other system is tested against.
    pub reference_systems: Vec<String>,
    pub n_resamples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreCell {
    pub bleu: f64,
    /// 95% percentile-bootstrap interval (a toolkit convention).
    pub ci95: (f64, f64),
    /// (reference system, p-value) for every designated reference system
    /// other than this one.
    pub p_values: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub version: u32,
    pub systems: Vec<String>,
    pub domains: Vec<String>,
    /// `cells[domain][system]`.
    pub cells: Vec<Vec<ScoreCell>>,
}

pub fn score_table(systems: &[SystemOutput], domains: &[DomainRefs], options: &TableOptions) -> Result<ScoreTable> {
    for s in systems {
        check_lengths(s.hypotheses.len(), domains.len(), &format!("system {} domain count", s.name))?;
    }
    let refs: Vec<&SystemOutput> = options
        .reference_systems
        .iter()
        .map(|r| {
            systems
                .iter()
                .find(|s| &s.name == r)
                .ok_or_else(|| Error::Argument(format!("unknown reference system {r:?}")))
        })
        .collect::<Result<_>>()?;
    let mut cells = Vec::with_capacity(domains.len());
    for (d, dom) in domains.iter().enumerate() {
        let mut row = Vec::with_capacity(systems.len());
        for sys in systems {
            let hyps = &sys.hypotheses[d];
            let score = bleu(hyps, &dom.references, DEFAULT_MAX_N)?.score;
            let ci95 = bootstrap_ci(hyps, &dom.references, options.n_resamples, options.seed, 0.95)?;
            let mut p_values = Vec::new();
            for r in &refs {
                if r.name == sys.name {
                    continue;
                }
                let sig = paired_bootstrap(hyps, &r.hypotheses[d], &dom.references, options.n_resamples, options.seed)?;
                p_values.push((r.name.clone(), sig.p_value));
            }
            row.push(ScoreCell { bleu: score, ci95, p_values });
        }
        cells.push(row);
    }
    Ok(ScoreTable {
        version: REPORT_VERSION,
        systems: systems.iter().map(|s| s.name.clone()).collect(),
        domains: domains.iter().map(|d| d.name.clone()).collect(),
        cells,
    })
}

impl ScoreTable {
    pub fn cell(&self, domain: &str, system: &str) -> Option<&ScoreCell> {
        let d = self.domains.iter().position(|x| x == domain)?;
        let s = self.systems.iter().position(|x| x == system)?;
        Some(&self.cells[d][s])
    }

    /// Aligned plain-text rendering: a BLEU block followed by a p-value block
    /// (`-` where a system is its own reference).
    pub fn render(&self) -> String {
        let refs: Vec<String> = {
            let mut seen: Vec<String> = Vec::new();
            for row in &self.cells {
                for cell in row {
                    for (r, _) in &cell.p_values {
                        if !seen.contains(r) {
                            seen.push(r.clone());
                        }
                    }
                }
            }
            self.systems.iter().filter(|s| seen.contains(s)).cloned().collect()
        };
        let mut header = vec!["Corp".to_owned()];
        header.extend(self.systems.iter().cloned());
        let mut rows = vec![header.clone()];
        for (d, name) in self.domains.iter().enumerate() {
            let mut r = vec![name.clone()];
            for cell in &self.cells[d] {
                let half = (cell.ci95.1 - cell.ci95.0) / 2.0;
                r.push(format!("{:.2}±{:.2}", cell.bleu, half));
            }
            rows.push(r);
        }
        let mut out = render_rows(&rows);
        if !refs.is_empty() {
            let _ = writeln!(out, "\np-values vs {}", refs.join(" / "));
            let mut prows = vec![header];
            for (d, name) in self.domains.iter().enumerate() {
                let mut r = vec![name.clone()];
                for (s, cell) in self.cells[d].iter().enumerate() {
                    let parts: Vec<String> = refs
                        .iter()
                        .map(|rname| {
                            if *rname == self.systems[s] {
                                "-".to_owned()
                            } else {
                                cell.p_values
                                    .iter()
                                    .find(|(n, _)| n == rname)
                                    .map(|(_, p)| format!("{p:.4}"))
                                    .unwrap_or_else(|| "-".into())
                            }
                        })
                        .collect();
                    r.push(parts.join(" / "));
                }
                prows.push(r);
            }
            out.push_str(&render_rows(&prows));
        }
        out
    }
}

fn render_rows(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for r in rows {
        let line: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(c, s)| format!("{s:<w$}", w = widths[c]))
            .collect();
        let _ = writeln!(out, "{}", line.join(" | ").trim_end());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ss(lines: &[&str]) -> Vec<Sentence> {
        lines.iter().map(|l| Sentence::parse(l)).collect()
    }

    #[test]
    fn identical_is_100() {
        let h = ss(&["the cat sat on the mat", "a b"]);
        let r = bleu(&h, &h, 4).unwrap();
        assert!((r.score - 100.0).abs() < 1e-9);
        assert_eq!(r.brevity_penalty, 1.0);
    }

    #[test]
    fn unigram_clipping_example() {
        let r = bleu(&ss(&["the the the"]), &ss(&["the cat sat"]), 1).unwrap();
        assert!((r.n_gram_precisions[0] - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.brevity_penalty, 1.0);
        assert!((r.score - 100.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn zero_overlap_hits_the_floor() {
        let r = bleu(&ss(&["a b c d"]), &ss(&["w x y z"]), 4).unwrap();
        assert!(r.score < 1e-3);
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(bleu(&ss(&["a"]), &ss(&["a", "b"]), 4), Err(Error::Data(_))));
    }

    #[test]
    fn brevity_penalty_applies() {
        let r = bleu(&ss(&["a b"]), &ss(&["a b c d"]), 1).unwrap();
        assert!((r.brevity_penalty - (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn bootstrap_identical_systems() {
        let h = ss(&["a b c", "d e"]);
        let r = ss(&["a b x", "d e"]);
        let s = paired_bootstrap(&h, &h, &r, 100, 3).unwrap();
        assert_eq!(s.p_value, 1.0);
        assert_eq!(s.observed_delta, 0.0);
    }

    #[test]
    fn single_cell_table_has_no_p_values() {
        let refs = vec![DomainRefs { name: "Eu".into(), references: ss(&["a b"]) }];
        let sys = vec![SystemOutput { name: "Tag".into(), hypotheses: vec![ss(&["a b"])] }];
        let t = score_table(&sys, &refs, &TableOptions { reference_systems: vec!["Tag".into()], n_resamples: 10, seed: 0 }).unwrap();
        assert_eq!(t.cells.len(), 1);
        assert_eq!(t.cells[0].len(), 1);
        assert!(t.cells[0][0].p_values.is_empty());
        assert!(!t.render().contains("p-values"));
    }
}
