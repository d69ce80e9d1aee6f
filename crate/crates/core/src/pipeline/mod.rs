//! End-to-end experiment protocols: known domains, unsupervised domains
//! from clustering (one heterogeneous corpus or several corpora), and
//! supervised label propagation from a partial seed labeling.
//!
//! Stages run sequentially inside a work directory. Each expensive stage
//! leaves an artifact whose hash goes into the report; with `resume` a stage
//! whose inputs are unchanged is reloaded from disk.

mod config;
mod report;
mod workspace;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::index;

pub use config::{
    Conditioning, CorpusEntry, NmtOverrides, PipelineConfig, PipelineMode, Preset, ResolvedScale, CONFIG_VERSION,
};
pub use report::{
    ClusteringSummary, CorpusSummary, FineTuneSummary, PropagationSummary, Report, TrainSummary, REPORT_VERSION,
};
pub use crate::synthetic::generate_synthetic;

use crate::annotate::{inject_feature, inject_tag};
use crate::bpe::{self, BpeModel};
use crate::classify::{train_classifier, ClassifierModel};
use crate::cluster::{cluster_report, fit_kmeans, majority_mapping, nmi, purity, sampled_silhouette, ClusterModel};
use crate::corpus::{holdout_mask, load_parallel, load_sentences, DomainLabel, LoadOptions, ParallelCorpus, Sentence, SentencePair};
use crate::error::{Error, Result};
use crate::eval::{bleu, score_table, DomainRefs, SystemOutput, TableOptions, DEFAULT_MAX_N};
use crate::nmt::{self, NmtConfig, Seq2SeqModel, SourceMode, TrainLog};
use crate::sentvec::{train_embeddings, EmbeddingModel};
use crate::synthetic::{domain_correct_rate, domain_name};
use crate::util::{l2_normalize, read_json, seeded_rng, write_json};
use workspace::Workspace;

const SILHOUETTE_CAP: usize = 2_000;
const FINAL_LOSS_WINDOW: usize = 50;
pub const ALL_DOMAINS: &str = "all";

#[derive(Debug, Clone)]
struct Split {
    corpus: ParallelCorpus,
    latent: Option<Vec<DomainLabel>>,
}

#[derive(Debug, Clone)]
struct Domain {
    name: String,
    label: Option<DomainLabel>,
    /// Target style of synthetic data.
    style: Option<usize>,
    train: Split,
    dev: Split,
    test: Split,
}

/// A corpus as loaded, before splitting.
#[derive(Debug, Clone)]
struct Input {
    name: String,
    label: Option<DomainLabel>,
    style: Option<usize>,
    corpus: ParallelCorpus,
    latent: Option<Vec<DomainLabel>>,
    seed_labels: Option<Vec<Option<DomainLabel>>>,
}

fn sentences_text<'a>(sentences: impl IntoIterator<Item = &'a Sentence>) -> String {
    let mut out = String::new();
    for s in sentences {
        out.push_str(&s.to_string());
        out.push('\n');
    }
    out
}

fn labels_text(labels: &[DomainLabel]) -> String {
    labels.iter().map(|l| format!("{l}\n")).collect()
}

fn read_label_file(path: &Path, expected: usize, allow_empty: bool) -> Result<Vec<Option<DomainLabel>>> {
    let lines = load_sentences(path, LoadOptions { allow_empty })?;
    if lines.len() != expected {
        return Err(Error::Alignment {
            source_lines: expected,
            target_lines: lines.len(),
        });
    }
    lines
        .iter()
        .map(|s| match s.tokens() {
            [] => Ok(None),
            [l] => DomainLabel::new(l.as_str()).map(Some),
            _ => Err(Error::Format(format!("{}: label lines hold one label", path.display()))),
        })
        .collect()
}

fn load_inputs(config: &PipelineConfig, ws: &mut Workspace) -> Result<Vec<Input>> {
    if let Some(spec) = &config.synthetic {
        let data = generate_synthetic(spec)?;
        let mut inputs = Vec::new();
        for (d, (corpus, latent)) in data.domains.iter().zip(&data.latent).enumerate() {
            let name = domain_name(d);
            ws.write(&format!("synthetic.{name}.src"), &format!("data/synthetic/{name}.src"), &sentences_text(corpus.sources()))?;
            ws.write(&format!("synthetic.{name}.tgt"), &format!("data/synthetic/{name}.tgt"), &sentences_text(corpus.targets()))?;
            let latent = vec![latent.clone(); corpus.len()];
            ws.write(&format!("synthetic.{name}.latent"), &format!("data/synthetic/{name}.latent"), &labels_text(&latent))?;
            inputs.push(Input {
                label: Some(DomainLabel::new(name.clone())?),
                name,
                style: Some(spec.style(d)),
                corpus: corpus.clone(),
                latent: Some(latent),
                seed_labels: None,
            });
        }
        return Ok(inputs);
    }
    let mut names = BTreeSet::new();
    config
        .corpora
        .iter()
        .map(|entry| {
            if !names.insert(entry.name.clone()) {
                return Err(Error::Config(format!("duplicate corpus name {:?}", entry.name)));
            }
            let label = entry
                .label
                .as_deref()
                .map(DomainLabel::new)
                .transpose()
                .map_err(|e| Error::Config(format!("corpus {}: {e}", entry.name)))?;
            let mut corpus = load_parallel(&entry.src, &entry.tgt, label.as_ref(), LoadOptions::default())?;
            corpus.name = entry.name.clone();
            let latent = entry
                .latent
                .as_deref()
                .map(|p| {
                    read_label_file(p, corpus.len(), false)?
                        .into_iter()
                        .map(|l| l.ok_or_else(|| Error::Format(format!("{}: empty latent label", p.display()))))
                        .collect::<Result<Vec<_>>>()
                })
                .transpose()?;
            let seed_labels = entry
                .labels
                .as_deref()
                .map(|p| read_label_file(p, corpus.len(), true))
                .transpose()?;
            Ok(Input {
                name: entry.name.clone(),
                label,
                style: None,
                corpus,
                latent,
                seed_labels,
            })
        })
        .collect()
}

fn pick<T: Clone>(items: &[T], mask: &[bool], keep: bool) -> Vec<T> {
    items.iter().zip(mask).filter(|(_, &m)| m == keep).map(|(x, _)| x.clone()).collect()
}

fn split_input(input: Input, config: &PipelineConfig, ws: &mut Workspace) -> Result<Domain> {
    let n = input.corpus.len();
    if n <= config.n_test + config.n_dev {
        return Err(Error::Data(format!(
            "corpus {} has {n} pairs, fewer than n_test + n_dev + 1",
            input.name
        )));
    }
    let test_mask = holdout_mask(n, config.n_test, config.seed)?;
    let rest_pairs = pick(&input.corpus.pairs, &test_mask, false);
    let rest_latent = input.latent.as_ref().map(|l| pick(l, &test_mask, false));
    let dev_mask = holdout_mask(rest_pairs.len(), config.n_dev, config.seed.wrapping_add(1))?;
    let make = |pairs: Vec<SentencePair>, latent: Option<Vec<DomainLabel>>, part: &str| Split {
        corpus: ParallelCorpus::new(format!("{}.{part}", input.name), pairs),
        latent,
    };
    let domain = Domain {
        name: input.name.clone(),
        label: input.label.clone(),
        style: input.style,
        test: make(
            pick(&input.corpus.pairs, &test_mask, true),
            input.latent.as_ref().map(|l| pick(l, &test_mask, true)),
            "test",
        ),
        dev: make(pick(&rest_pairs, &dev_mask, true), rest_latent.as_ref().map(|l| pick(l, &dev_mask, true)), "dev"),
        train: make(pick(&rest_pairs, &dev_mask, false), rest_latent.as_ref().map(|l| pick(l, &dev_mask, false)), "train"),
    };
    for split in [&domain.train, &domain.dev, &domain.test] {
        let c = &split.corpus;
        ws.write(&format!("split.{}.src", c.name), &format!("data/{}.src", c.name), &sentences_text(c.sources()))?;
        ws.write(&format!("split.{}.tgt", c.name), &format!("data/{}.tgt", c.name), &sentences_text(c.targets()))?;
    }
    Ok(domain)
}

/// Joint BPE over all training sides, or identity when disabled.
struct Segmenter(Option<BpeModel>);

impl Segmenter {
    fn apply(&self, s: &Sentence) -> Sentence {
        self.0.as_ref().map_or_else(|| s.clone(), |m| m.apply(s))
    }

    /// Reverts segmentation, dropping a dangling continuation marker that a
    /// decoder may emit on its last token.
    fn revert(&self, s: &Sentence) -> Sentence {
        if self.0.is_none() {
            return s.clone();
        }
        bpe::revert(s).unwrap_or_else(|_| {
            let mut tokens = s.tokens().to_vec();
            if let Some(last) = tokens.last_mut() {
                if let Some(stem) = last.strip_suffix(bpe::CONTINUATION) {
                    *last = stem.to_owned();
                }
            }
            tokens.retain(|t| !t.is_empty());
            let s = Sentence::from_tokens(tokens).expect("tokens stay valid");
            bpe::revert(&s).unwrap_or(s)
        })
    }
}

fn learn_bpe(config: &PipelineConfig, scale: &ResolvedScale, domains: &[Domain], ws: &mut Workspace) -> Result<Segmenter> {
    if !config.bpe {
        return Ok(Segmenter(None));
    }
    let key = format!(
        "{}\n{}",
        scale.bpe_vocab_limit,
        domains
            .iter()
            .map(|d| format!("{} {}", ws.hash_of(&format!("split.{}.src", d.train.corpus.name)), ws.hash_of(&format!("split.{}.tgt", d.train.corpus.name))))
            .collect::<Vec<_>>()
            .join("\n")
    );
    let model = ws.stage(
        "bpe",
        &key,
        "models/bpe.json",
        || {
            bpe::learn_joint(
                domains.iter().flat_map(|d| d.train.corpus.sources()),
                domains.iter().flat_map(|d| d.train.corpus.targets()),
                scale.bpe_vocab_limit,
            )
        },
        |m, p| m.save(p),
        BpeModel::load,
    )?;
    Ok(Segmenter(Some(model)))
}

fn source_line(seg: &Segmenter, source: &Sentence, label: Option<&DomainLabel>, mode: SourceMode) -> Result<String> {
    let s = seg.apply(source);
    let label = || label.ok_or_else(|| Error::Data(format!("missing domain label for {source:?}")));
    Ok(match mode {
        SourceMode::Plain => s.to_string(),
        SourceMode::Tag => inject_tag(&s, label()?)?.to_string(),
        SourceMode::Feat => inject_feature(&s, label()?)?.to_string(),
    })
}

/// NMT training data: segmented target, segmented and conditioned source.
fn nmt_corpus(seg: &Segmenter, name: &str, pairs: &[&SentencePair], labels: &[Option<&DomainLabel>], mode: SourceMode) -> Result<ParallelCorpus> {
    let pairs = pairs
        .iter()
        .zip(labels)
        .map(|(p, l)| {
            Ok(SentencePair {
                source: Sentence::parse(&source_line(seg, &p.source, *l, mode)?),
                target: seg.apply(&p.target),
                label: l.cloned(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ParallelCorpus::new(name, pairs))
}

fn summarize(log: &TrainLog) -> TrainSummary {
    let tail = &log.losses[log.losses.len().saturating_sub(FINAL_LOSS_WINDOW)..];
    TrainSummary {
        steps: log.steps,
        first_loss: log.losses.first().copied(),
        final_loss: (!tail.is_empty()).then(|| tail.iter().sum::<f64>() / tail.len() as f64),
        truncated: log.truncated,
        optimizer: log.optimizer.clone(),
    }
}

fn write_corpus_artifact(ws: &mut Workspace, stage: &str, corpus: &ParallelCorpus) -> Result<String> {
    let text = corpus
        .pairs
        .iter()
        .map(|p| format!("{}\t{}\n", p.source, p.target))
        .collect::<String>();
    ws.write(stage, &format!("nmt/{stage}.tsv"), &text)?;
    Ok(ws.hash_of(stage).to_owned())
}

fn save_with_summary(model: &Seq2SeqModel, summary: &TrainSummary, path: &Path) -> Result<()> {
    write_json(&path.with_extension("log.json"), summary)?;
    model.save(path)
}

fn load_with_summary(path: &Path) -> Result<(Seq2SeqModel, TrainSummary)> {
    Ok((Seq2SeqModel::load(path)?, read_json(&path.with_extension("log.json"))?))
}

fn train_nmt(ws: &mut Workspace, name: &str, corpus: &ParallelCorpus, mode: SourceMode, cfg: &NmtConfig) -> Result<(Seq2SeqModel, TrainSummary)> {
    let data_hash = write_corpus_artifact(ws, &format!("data.{name}"), corpus)?;
    let key = format!("{}\n{mode}\n{data_hash}", serde_json::to_string(cfg)?);
    ws.stage(
        &format!("nmt.{name}"),
        &key,
        &format!("models/nmt.{name}.json"),
        || {
            let (model, log) = nmt::train(corpus, mode, cfg)?;
            Ok((model, summarize(&log)))
        },
        |(m, s), p| save_with_summary(m, s, p),
        load_with_summary,
    )
}

fn fine_tune_nmt(ws: &mut Workspace, name: &str, base: &str, model: &Seq2SeqModel, corpus: &ParallelCorpus, steps: usize) -> Result<(Seq2SeqModel, TrainSummary)> {
    let data_hash = write_corpus_artifact(ws, &format!("data.{name}"), corpus)?;
    let key = format!("{steps}\n{}\n{data_hash}", ws.hash_of(&format!("nmt.{base}")));
    ws.stage(
        &format!("nmt.{name}"),
        &key,
        &format!("models/nmt.{name}.json"),
        || {
            let (model, log) = nmt::fine_tune(model, corpus, steps)?;
            Ok((model, summarize(&log)))
        },
        |(m, s), p| save_with_summary(m, s, p),
        load_with_summary,
    )
}

fn translate_all(model: &Seq2SeqModel, seg: &Segmenter, lines: &[String]) -> Result<Vec<Sentence>> {
    lines.iter().map(|l| Ok(seg.revert(&model.translate(l)?))).collect()
}

/// Source lines of a split conditioned with per-pair labels.
fn lines_for(seg: &Segmenter, split: &Split, labels: &[Option<&DomainLabel>], mode: SourceMode) -> Result<Vec<String>> {
    split
        .corpus
        .pairs
        .iter()
        .zip(labels)
        .map(|(p, l)| source_line(seg, &p.source, *l, mode))
        .collect()
}

fn pair_labels(split: &Split) -> Vec<Option<&DomainLabel>> {
    split.corpus.pairs.iter().map(|p| p.label.as_ref()).collect()
}

struct Evaluation {
    systems: Vec<SystemOutput>,
}

impl Evaluation {
    fn add(&mut self, ws: &mut Workspace, name: &str, domains: &[Domain], hyps: Vec<Vec<Sentence>>) -> Result<()> {
        for (d, h) in domains.iter().zip(&hyps) {
            ws.write(&format!("hyp.{name}.{}", d.name), &format!("hyp/{name}.{}.txt", d.name), &sentences_text(h))?;
        }
        self.systems.push(SystemOutput {
            name: name.to_owned(),
            hypotheses: hyps,
        });
        Ok(())
    }

    /// Adds the concatenation of all test sets as an extra column when there
    /// is more than one domain.
    fn table(&self, domains: &[Domain], references: &[&str], config: &PipelineConfig) -> Result<crate::eval::ScoreTable> {
        let mut refs: Vec<DomainRefs> = domains
            .iter()
            .map(|d| DomainRefs {
                name: d.name.clone(),
                references: d.test.corpus.targets().cloned().collect(),
            })
            .collect();
        let mut systems = self.systems.clone();
        if domains.len() > 1 {
            refs.push(DomainRefs {
                name: ALL_DOMAINS.to_owned(),
                references: refs.iter().flat_map(|r| r.references.iter().cloned()).collect(),
            });
            for s in &mut systems {
                let all = s.hypotheses.concat();
                s.hypotheses.push(all);
            }
        }
        score_table(
            &systems,
            &refs,
            &TableOptions {
                reference_systems: references.iter().map(|s| s.to_string()).collect(),
                n_resamples: config.resamples,
                seed: config.seed,
            },
        )
    }

    fn style_accuracy(&self, domains: &[Domain]) -> BTreeMap<String, f64> {
        let Some(styles) = domains
            .iter()
            .map(|d| d.style.map(|s| vec![s; d.test.corpus.len()]))
            .collect::<Option<Vec<_>>>()
        else {
            return BTreeMap::new();
        };
        let styles = styles.concat();
        self.systems
            .iter()
            .map(|s| (s.name.clone(), domain_correct_rate(&s.hypotheses.concat(), &styles)))
            .collect()
    }
}

fn corpus_summaries(domains: &[Domain]) -> Vec<CorpusSummary> {
    domains
        .iter()
        .map(|d| CorpusSummary {
            name: d.name.clone(),
            label: d.label.as_ref().map(ToString::to_string),
            train: d.train.corpus.len(),
            dev: d.dev.corpus.len(),
            test: d.test.corpus.len(),
        })
        .collect()
}

fn mode_name(c: Conditioning) -> (SourceMode, &'static str) {
    match c {
        Conditioning::Tag => (SourceMode::Tag, "Tag"),
        Conditioning::Feat => (SourceMode::Feat, "Feat"),
    }
}

fn finish(config: &PipelineConfig, ws: &mut Workspace, mut report: Report) -> Result<Report> {
    report.artifacts = ws.artifacts.clone();
    let path = ws.path("report.json")?;
    write_json(&path, &report)?;
    std::fs::write(ws.path("report.txt")?, report.render()).map_err(|e| Error::io(&path, e))?;
    log::info!("report written to {}", config.work_dir.display());
    Ok(report)
}

fn empty_report(config: &PipelineConfig, domains: &[Domain], scores: crate::eval::ScoreTable) -> Report {
    Report {
        version: REPORT_VERSION,
        mode: config.mode,
        preset: config.preset,
        config_hash: config.hash(),
        scale: config.scale(),
        artifacts: BTreeMap::new(),
        corpora: corpus_summaries(domains),
        scores,
        style_accuracy: BTreeMap::new(),
        training: BTreeMap::new(),
        fine_tune: Vec::new(),
        clustering: Vec::new(),
        best_k: None,
        propagation: None,
    }
}

/// Baseline, per-domain Tuned, and the Tag/Feat systems over domains whose
/// pairs all carry a label.
fn known_protocol(config: &PipelineConfig, ws: &mut Workspace, domains: Vec<Domain>, propagation: Option<PropagationSummary>) -> Result<Report> {
    let scale = config.scale();
    let seg = learn_bpe(config, &scale, &domains, ws)?;
    let mut training = BTreeMap::new();
    let mut eval = Evaluation { systems: Vec::new() };

    let train_pairs: Vec<&SentencePair> = domains.iter().flat_map(|d| &d.train.corpus.pairs).collect();
    let train_labels: Vec<Option<&DomainLabel>> = train_pairs.iter().map(|p| p.label.as_ref()).collect();
    let plain = nmt_corpus(&seg, "mixed", &train_pairs, &train_labels, SourceMode::Plain)?;
    let (baseline, summary) = train_nmt(ws, "baseline", &plain, SourceMode::Plain, &scale.nmt)?;
    training.insert("Baseline".to_owned(), summary);

    let test_plain: Vec<Vec<String>> = domains
        .iter()
        .map(|d| lines_for(&seg, &d.test, &pair_labels(&d.test), SourceMode::Plain))
        .collect::<Result<_>>()?;
    let hyps = test_plain.iter().map(|l| translate_all(&baseline, &seg, l)).collect::<Result<Vec<_>>>()?;
    eval.add(ws, "Baseline", &domains, hyps)?;

    let dev_sets: Vec<ParallelCorpus> = domains
        .iter()
        .map(|d| {
            let pairs: Vec<&SentencePair> = d.dev.corpus.pairs.iter().collect();
            nmt_corpus(&seg, &d.dev.corpus.name, &pairs, &pair_labels(&d.dev), SourceMode::Plain)
        })
        .collect::<Result<_>>()?;
    let dev_losses = |m: &Seq2SeqModel| -> Result<BTreeMap<String, f64>> {
        domains.iter().zip(&dev_sets).map(|(d, c)| Ok((d.name.clone(), m.loss(c)?))).collect()
    };
    let before = dev_losses(&baseline)?;
    let mut fine_tune = Vec::new();
    let mut tuned_hyps = Vec::new();
    for (d, lines) in domains.iter().zip(&test_plain) {
        let pairs: Vec<&SentencePair> = d.train.corpus.pairs.iter().collect();
        let in_domain = nmt_corpus(&seg, &d.train.corpus.name, &pairs, &pair_labels(&d.train), SourceMode::Plain)?;
        let name = format!("tuned.{}", d.name);
        let (tuned, summary) = fine_tune_nmt(ws, &name, "baseline", &baseline, &in_domain, scale.fine_tune_steps)?;
        training.insert(format!("Tuned.{}", d.name), summary);
        fine_tune.push(FineTuneSummary {
            domain: d.name.clone(),
            steps: scale.fine_tune_steps,
            dev_loss_before: before.clone(),
            dev_loss_after: dev_losses(&tuned)?,
        });
        tuned_hyps.push(translate_all(&tuned, &seg, lines)?);
    }
    eval.add(ws, "Tuned", &domains, tuned_hyps)?;

    for &c in &config.conditioning {
        let (mode, system) = mode_name(c);
        let corpus = nmt_corpus(&seg, "mixed", &train_pairs, &train_labels, mode)?;
        let (model, summary) = train_nmt(ws, &system.to_lowercase(), &corpus, mode, &scale.nmt)?;
        training.insert(system.to_owned(), summary);
        let hyps = domains
            .iter()
            .map(|d| translate_all(&model, &seg, &lines_for(&seg, &d.test, &pair_labels(&d.test), mode)?))
            .collect::<Result<Vec<_>>>()?;
        eval.add(ws, system, &domains, hyps)?;
    }

    let scores = eval.table(&domains, &["Baseline"], config)?;
    let mut report = empty_report(config, &domains, scores);
    report.style_accuracy = eval.style_accuracy(&domains);
    report.training = training;
    report.fine_tune = fine_tune;
    report.propagation = propagation;
    finish(config, ws, report)
}

/// Every corpus gets its own label; corpora without one are "other".
pub fn run_known(config: &PipelineConfig, resume: bool) -> Result<Report> {
    let mut ws = Workspace::open(&config.work_dir, resume)?;
    let inputs = load_inputs(config, &mut ws)?;
    let domains = inputs
        .into_iter()
        .map(|mut input| {
            let label = input.label.clone().unwrap_or_else(DomainLabel::other);
            input.corpus = input.corpus.with_label(&label);
            input.label = Some(label);
            split_input(input, config, &mut ws)
        })
        .collect::<Result<Vec<_>>>()?;
    known_protocol(config, &mut ws, domains, None)
}

fn embed_all(model: &EmbeddingModel, sentences: &[&Sentence]) -> Vec<Vec<f64>> {
    sentences
        .iter()
        .map(|s| {
            let mut v = model.embed_sentence(s);
            l2_normalize(&mut v);
            v
        })
        .collect()
}

fn cluster_label(id: usize) -> DomainLabel {
    DomainLabel::new(format!("c{id}")).expect("valid label")
}

fn fraction(hits: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}

fn unsup_protocol(config: &PipelineConfig, ws: &mut Workspace, domains: Vec<Domain>, multi: bool) -> Result<Report> {
    let scale = config.scale();
    let seg = learn_bpe(config, &scale, &domains, ws)?;
    let mut training = BTreeMap::new();
    let mut eval = Evaluation { systems: Vec::new() };

    let train_pairs: Vec<&SentencePair> = domains.iter().flat_map(|d| &d.train.corpus.pairs).collect();
    let no_labels = vec![None; train_pairs.len()];
    let plain = nmt_corpus(&seg, "mixed", &train_pairs, &no_labels, SourceMode::Plain)?;
    let (reference, summary) = train_nmt(ws, "ref", &plain, SourceMode::Plain, &scale.nmt)?;
    training.insert("Ref".to_owned(), summary);
    let hyps = domains
        .iter()
        .map(|d| translate_all(&reference, &seg, &lines_for(&seg, &d.test, &vec![None; d.test.corpus.len()], SourceMode::Plain)?))
        .collect::<Result<Vec<_>>>()?;
    eval.add(ws, "Ref", &domains, hyps)?;

    if multi {
        let known: Vec<Option<&DomainLabel>> = domains
            .iter()
            .flat_map(|d| std::iter::repeat_n(d.label.as_ref(), d.train.corpus.len()))
            .collect();
        let corpus = nmt_corpus(&seg, "mixed", &train_pairs, &known, SourceMode::Tag)?;
        let (model, summary) = train_nmt(ws, "tag", &corpus, SourceMode::Tag, &scale.nmt)?;
        training.insert("Tag".to_owned(), summary);
        let hyps = domains
            .iter()
            .map(|d| {
                let labels = vec![d.label.as_ref(); d.test.corpus.len()];
                translate_all(&model, &seg, &lines_for(&seg, &d.test, &labels, SourceMode::Tag)?)
            })
            .collect::<Result<Vec<_>>>()?;
        eval.add(ws, "Tag", &domains, hyps)?;
    }

    // Sentence embeddings of the raw source side.
    let train_sources: Vec<&Sentence> = train_pairs.iter().map(|p| &p.source).collect();
    let key = format!(
        "{}\n{}",
        serde_json::to_string(&config.embedding)?,
        domains.iter().map(|d| ws.hash_of(&format!("split.{}.src", d.train.corpus.name)).to_owned()).collect::<Vec<_>>().join(" ")
    );
    let owned: Vec<Sentence> = train_sources.iter().map(|s| (*s).clone()).collect();
    let embedder = ws.stage(
        "sentvec",
        &key,
        "models/sentvec.json",
        || train_embeddings(&owned, &config.embedding),
        |m, p| m.save(p),
        EmbeddingModel::load,
    )?;
    let train_vectors = embed_all(&embedder, &train_sources);
    let train_latent: Option<Vec<DomainLabel>> = domains
        .iter()
        .map(|d| d.train.latent.clone())
        .collect::<Option<Vec<_>>>()
        .map(|v| v.concat());
    let test_latent: Option<Vec<DomainLabel>> = domains
        .iter()
        .map(|d| d.test.latent.clone())
        .collect::<Option<Vec<_>>>()
        .map(|v| v.concat());

    let mut clustering = Vec::new();
    let mut best: Option<(f64, usize, Vec<Vec<Sentence>>)> = None;
    for &k in &config.ks {
        let kmeans = ws.stage(
            &format!("kmeans.k{k}"),
            &format!("{k}\n{}\n{}\n{}", config.seed, serde_json::to_string(&config.kmeans)?, ws.hash_of("sentvec")),
            &format!("models/kmeans.k{k}.json"),
            || fit_kmeans(&train_vectors, k, config.seed, &config.kmeans),
            |m, p| m.save(p),
            ClusterModel::load,
        )?;
        let train_clusters: Vec<usize> = train_vectors.iter().map(|v| kmeans.assign(v)).collect::<Result<_>>()?;
        let examples: Vec<(Sentence, DomainLabel)> = train_sources
            .iter()
            .zip(&train_clusters)
            .map(|(s, &c)| ((*s).clone(), cluster_label(c)))
            .collect();
        let classifier = ws.stage(
            &format!("classifier.k{k}"),
            &format!("{}\n{}", serde_json::to_string(&config.classifier)?, ws.hash_of(&format!("kmeans.k{k}"))),
            &format!("models/classifier.k{k}.json"),
            || train_classifier(&examples, &config.classifier),
            |m, p| m.save(p),
            ClassifierModel::load,
        )?;
        let predict = |split: &Split| -> Vec<DomainLabel> { split.corpus.sources().map(|s| classifier.predict(s).label).collect() };

        let train_labels: Vec<DomainLabel> = train_clusters.iter().map(|&c| cluster_label(c)).collect();
        let train_label_refs: Vec<Option<&DomainLabel>> = train_labels.iter().map(Some).collect();
        let name = format!("c{k}");
        let corpus = nmt_corpus(&seg, "mixed", &train_pairs, &train_label_refs, SourceMode::Tag)?;
        let (model, summary) = train_nmt(ws, &name, &corpus, SourceMode::Tag, &scale.nmt)?;
        training.insert(format!("C{k}"), summary);

        let mut dev_hyps = Vec::new();
        let mut dev_refs = Vec::new();
        for d in &domains {
            let labels = predict(&d.dev);
            let refs: Vec<Option<&DomainLabel>> = labels.iter().map(Some).collect();
            dev_hyps.extend(translate_all(&model, &seg, &lines_for(&seg, &d.dev, &refs, SourceMode::Tag)?)?);
            dev_refs.extend(d.dev.corpus.targets().cloned());
        }
        let dev_bleu = bleu(&dev_hyps, &dev_refs, DEFAULT_MAX_N)?.score;

        let mut test_hyps = Vec::new();
        let mut test_reports = Vec::new();
        let mut test_predicted = Vec::new();
        let mut agree = 0;
        for d in &domains {
            let labels = predict(&d.test);
            let test_vectors = embed_all(&embedder, &d.test.corpus.sources().collect::<Vec<_>>());
            for (l, v) in labels.iter().zip(&test_vectors) {
                agree += usize::from(*l == cluster_label(kmeans.assign(v)?));
            }
            test_reports.push(cluster_report(&labels, &d.name));
            let refs: Vec<Option<&DomainLabel>> = labels.iter().map(Some).collect();
            test_hyps.push(translate_all(&model, &seg, &lines_for(&seg, &d.test, &refs, SourceMode::Tag)?)?);
            test_predicted.extend(labels);
        }
        let (nmi_score, purity_score, latent_accuracy) = match (&train_latent, &test_latent) {
            (Some(tl), Some(sl)) => {
                let mapping = majority_mapping(&train_labels, tl);
                let hits = test_predicted.iter().zip(sl).filter(|(p, l)| mapping.get(*p) == Some(*l)).count();
                (Some(nmi(&train_clusters, tl)), Some(purity(&train_clusters, tl)), Some(fraction(hits, sl.len())))
            }
            _ => (None, None, None),
        };
        clustering.push(ClusteringSummary {
            k,
            inertia: kmeans.inertia,
            silhouette: sampled_silhouette(&train_vectors, &kmeans, SILHOUETTE_CAP, config.seed),
            train_histogram: kmeans.train_histogram.clone(),
            nmi: nmi_score,
            purity: purity_score,
            classifier_agreement: fraction(agree, test_predicted.len()),
            classifier_latent_accuracy: latent_accuracy,
            dev_bleu,
            test_reports,
        });
        eval.add(ws, &format!("C{k}"), &domains, test_hyps.clone())?;
        if best.as_ref().is_none_or(|(b, _, _)| dev_bleu > *b) {
            best = Some((dev_bleu, k, test_hyps));
        }
    }
    let (_, best_k, best_hyps) = best.expect("ks is non-empty");
    eval.add(ws, "Unsup", &domains, best_hyps)?;

    let references: &[&str] = if multi { &["Ref", "Tag"] } else { &["Ref"] };
    let scores = eval.table(&domains, references, config)?;
    let mut report = empty_report(config, &domains, scores);
    report.style_accuracy = eval.style_accuracy(&domains);
    report.training = training;
    report.clustering = clustering;
    report.best_k = Some(best_k);
    finish(config, ws, report)
}

/// Clusters one heterogeneous corpus; several inputs are merged into one.
pub fn run_unsup_single(config: &PipelineConfig, resume: bool) -> Result<Report> {
    let mut ws = Workspace::open(&config.work_dir, resume)?;
    let inputs = load_inputs(config, &mut ws)?;
    let latent = inputs.iter().map(|i| i.latent.clone()).collect::<Option<Vec<_>>>().map(|v| v.concat());
    let merged = Input {
        name: "mixed".to_owned(),
        label: None,
        style: None,
        corpus: ParallelCorpus::concat("mixed", inputs.iter().map(|i| &i.corpus)),
        latent,
        seed_labels: None,
    };
    let domain = split_input(merged, config, &mut ws)?;
    unsup_protocol(config, &mut ws, vec![domain], false)
}

/// Clusters the union of several corpora; their labels are used only for
/// the known-Tag comparison system and per-corpus reporting.
pub fn run_unsup_multi(config: &PipelineConfig, resume: bool) -> Result<Report> {
    let mut ws = Workspace::open(&config.work_dir, resume)?;
    let inputs = load_inputs(config, &mut ws)?;
    let domains = inputs
        .into_iter()
        .map(|mut input| {
            let label = input.label.clone().unwrap_or_else(DomainLabel::other);
            input.corpus = input.corpus.with_label(&label);
            input.label = Some(label);
            split_input(input, config, &mut ws)
        })
        .collect::<Result<Vec<_>>>()?;
    unsup_protocol(config, &mut ws, domains, true)
}

/// Keeps `seed_fraction` of the available labels as a seed, labels every
/// other pair with a classifier trained on the seed, then runs the known
/// protocol on the propagated labels.
pub fn run_supervised_propagate(config: &PipelineConfig, resume: bool) -> Result<Report> {
    let mut ws = Workspace::open(&config.work_dir, resume)?;
    let mut inputs = load_inputs(config, &mut ws)?;
    // Candidate label per pair: the per-line file, else the corpus label.
    let candidates: Vec<Vec<Option<DomainLabel>>> = inputs
        .iter()
        .map(|i| i.seed_labels.clone().unwrap_or_else(|| vec![i.label.clone(); i.corpus.len()]))
        .collect();
    let flat: Vec<(usize, usize)> = candidates
        .iter()
        .enumerate()
        .flat_map(|(c, labels)| labels.iter().enumerate().filter(|(_, l)| l.is_some()).map(move |(i, _)| (c, i)))
        .collect();
    let fraction_kept = config.seed_fraction.unwrap_or(1.0);
    let n_seed = (fraction_kept * flat.len() as f64).round() as usize;
    let mut chosen: Vec<(usize, usize)> = index::sample(&mut seeded_rng(config.seed.wrapping_add(7)), flat.len(), n_seed)
        .into_iter()
        .map(|i| flat[i])
        .collect();
    chosen.sort_unstable();
    let seed_set: BTreeSet<(usize, usize)> = chosen.iter().copied().collect();
    let seed_examples: Vec<(Sentence, DomainLabel)> = chosen
        .iter()
        .map(|&(c, i)| (inputs[c].corpus.pairs[i].source.clone(), candidates[c][i].clone().expect("seed pairs are labeled")))
        .collect();
    let labels: BTreeSet<&DomainLabel> = seed_examples.iter().map(|(_, l)| l).collect();
    if labels.len() < 2 {
        return Err(Error::Data(format!(
            "the seed labeling has {} distinct label(s); propagation needs at least 2",
            labels.len()
        )));
    }
    let label_names: Vec<String> = labels.iter().map(|l| l.to_string()).collect();
    let total: usize = inputs.iter().map(|i| i.corpus.len()).sum();
    let classifier = if seed_examples.len() < total {
        let body: String = seed_examples.iter().map(|(s, l)| crate::classify::format_labeled_line(s, l) + "\n").collect();
        ws.write("seed_labels", "data/seed.labeled.txt", &body)?;
        Some(ws.stage(
            "classifier.propagate",
            &format!("{}\n{}", serde_json::to_string(&config.classifier)?, ws.hash_of("seed_labels")),
            "models/classifier.propagate.json",
            || train_classifier(&seed_examples, &config.classifier),
            |m, p| m.save(p),
            ClassifierModel::load,
        )?)
    } else {
        None
    };
    let mut hits = 0;
    let mut checked = 0;
    for (c, input) in inputs.iter_mut().enumerate() {
        for (i, pair) in input.corpus.pairs.iter_mut().enumerate() {
            let label = if seed_set.contains(&(c, i)) {
                candidates[c][i].clone().expect("seed pairs are labeled")
            } else {
                classifier.as_ref().expect("some pairs need propagation").predict(&pair.source).label
            };
            if let (false, Some(truth)) = (seed_set.contains(&(c, i)), &candidates[c][i]) {
                checked += 1;
                hits += usize::from(*truth == label);
            }
            pair.label = Some(label);
        }
        if input.label.is_none() {
            input.label = Some(DomainLabel::other());
        }
    }
    let propagation = PropagationSummary {
        seed_pairs: seed_examples.len(),
        propagated_pairs: total - seed_examples.len(),
        labels: label_names,
        agreement: (checked > 0).then(|| fraction(hits, checked)),
    };
    let domains = inputs.into_iter().map(|i| split_input(i, config, &mut ws)).collect::<Result<Vec<_>>>()?;
    known_protocol(config, &mut ws, domains, Some(propagation))
}

pub fn run(config: &PipelineConfig, resume: bool) -> Result<Report> {
    match config.mode {
        PipelineMode::Known => run_known(config, resume),
        PipelineMode::UnsupSingle => run_unsup_single(config, resume),
        PipelineMode::UnsupMulti => run_unsup_multi(config, resume),
        PipelineMode::SupervisedPropagate => run_supervised_propagate(config, resume),
    }
}
