use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use domainforge::annotate::{inject_feature, inject_tag, parse_factored, strip_tag};
use domainforge::bpe::{self, BpeModel};
use domainforge::classify::{self, format_labeled_line, parse_labeled_line, train_classifier, ClassifierConfig, ClassifierModel};
use domainforge::cluster::{self, fit_kmeans, sweep_k, ClusterModel, KMeansParams};
use domainforge::corpus::{self, load_parallel, DomainLabel, LoadOptions, ParallelCorpus, Sentence, SentencePair};
use domainforge::eval::{self, paired_bootstrap, ScoreTable};
use domainforge::nmt::{self, NmtConfig, Seq2SeqModel, SourceMode};
use domainforge::pipeline::{self, PipelineConfig, Preset, Report};
use domainforge::sentvec::{train_embeddings, EmbeddingConfig, EmbeddingModel};
use domainforge::synthetic::{generate_synthetic, SyntheticSpec};
use domainforge::util::l2_normalize;
use domainforge::{Error, Result};

/// Multi-domain translation data preparation, domain discovery and
/// evaluation.
#[derive(Parser)]
#[command(name = "domainforge", version)]
struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parallel corpus statistics and splits.
    #[command(subcommand)]
    Corpus(CorpusCmd),
    /// Byte-pair-encoding subword segmentation.
    #[command(subcommand)]
    Bpe(BpeCmd),
    /// Unsupervised sentence embeddings.
    #[command(subcommand)]
    Embed(EmbedCmd),
    /// KMeans over sentence vectors.
    #[command(subcommand)]
    Cluster(ClusterCmd),
    /// Supervised domain classifier.
    #[command(subcommand)]
    Classify(ClassifyCmd),
    /// Domain tags and source factors.
    #[command(subcommand)]
    Annotate(AnnotateCmd),
    /// Attention-based sequence-to-sequence translation.
    #[command(subcommand)]
    Nmt(NmtCmd),
    /// BLEU, significance and score tables.
    #[command(subcommand)]
    Eval(EvalCmd),
    /// Run an experiment pipeline from a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        preset: Option<Preset>,
        /// Reuse stages whose inputs are unchanged.
        #[arg(long)]
        resume: bool,
    },
    /// Write a synthetic multi-domain corpus.
    Synth {
        #[arg(long, default_value_t = 2)]
        n_domains: usize,
        #[arg(long, default_value_t = 2000)]
        pairs: usize,
        #[arg(long, default_value_t = 1.0)]
        overlap: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Style index per domain, comma separated.
        #[arg(long, value_delimiter = ',')]
        styles: Option<Vec<usize>>,
        #[arg(short, long)]
        out_dir: PathBuf,
    },
}

// Text input and output; stdin and stdout when omitted.
#[derive(Args, Clone)]
struct Io {
    #[arg(short, long)]
    input: Option<PathBuf>,
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Accept empty lines.
    #[arg(long)]
    allow_empty: bool,
}

#[derive(Args, Clone)]
struct Pair {
    #[arg(long)]
    src: PathBuf,
    #[arg(long)]
    tgt: PathBuf,
    #[arg(long)]
    allow_empty: bool,
}

#[derive(Subcommand)]
enum CorpusCmd {
    /// Sentence and token counts as JSON.
    Stats {
        #[command(flatten)]
        pair: Pair,
        #[arg(long)]
        label: Option<String>,
    },
    /// Hold out a random test set; writes <prefix>.{train,test}.{src,tgt}.
    Split {
        #[command(flatten)]
        pair: Pair,
        #[arg(long)]
        n_test: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        prefix: PathBuf,
    },
}

#[derive(Subcommand)]
enum BpeCmd {
    /// Learn joint merges over a source and a target file.
    Learn {
        #[arg(long, default_value_t = bpe::DEFAULT_VOCAB_LIMIT)]
        vocab_limit: usize,
        #[arg(long, num_args = 2, value_names = ["SRC", "TGT"])]
        joint: Vec<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Segment text with a learned model, marking non-final pieces with `@@`.
    Apply {
        #[arg(short, long)]
        model: PathBuf,
        #[command(flatten)]
        io: Io,
    },
    /// Undo segmentation by joining `@@` pieces.
    Revert {
        #[command(flatten)]
        io: Io,
    },
}

#[derive(Args)]
struct EmbedOpts {
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum EmbedCmd {
    /// Train sentence embeddings on one sentence per line.
    Train {
        #[arg(short, long)]
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[command(flatten)]
        opts: EmbedOpts,
    },
    /// One L2-normalized vector per input line.
    Infer {
        #[arg(short, long)]
        model: PathBuf,
        #[command(flatten)]
        io: Io,
        /// Keep raw vector lengths.
        #[arg(long)]
        raw: bool,
    },
}

#[derive(Subcommand)]
enum ClusterCmd {
    /// Fit KMeans on vectors (one per line).
    Fit {
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        restarts: Option<usize>,
        #[arg(short, long)]
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Nearest-centroid id per vector.
    Assign {
        #[arg(short, long)]
        model: PathBuf,
        #[command(flatten)]
        io: Io,
    },
    /// Fit several k and report inertia and silhouette.
    Sweep {
        #[arg(long, value_delimiter = ',', required = true)]
        ks: Vec<usize>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(short, long)]
        input: PathBuf,
        /// Save one model per k as <dir>/k<k>.json.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Cluster-size histogram of each label file, largest first.
    Report {
        #[arg(required = true)]
        labels: Vec<PathBuf>,
    },
}

#[derive(Args)]
struct ClassifyOpts {
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum ClassifyCmd {
    /// Train on `__label__<id> sentence` lines.
    Train {
        #[arg(short, long)]
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[command(flatten)]
        opts: ClassifyOpts,
    },
    /// One label per input sentence.
    Predict {
        #[arg(short, long)]
        model: PathBuf,
        #[command(flatten)]
        io: Io,
        /// Append the probability of the predicted label.
        #[arg(long)]
        probability: bool,
    },
    /// Label unlabeled sentences with a classifier trained on a seed set;
    /// prints the seed followed by the propagated lines.
    Propagate {
        #[arg(long)]
        seed_file: PathBuf,
        #[arg(long)]
        unlabeled: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        opts: ClassifyOpts,
    },
}

#[derive(Args, Clone)]
#[group(required = true, multiple = false)]
struct LabelSource {
    #[arg(long)]
    label: Option<String>,
    /// One label per input line.
    #[arg(long)]
    labels_file: Option<PathBuf>,
}

#[derive(Subcommand)]
enum AnnotateCmd {
    /// Prepend a `__<label>` tag.
    Tag {
        #[command(flatten)]
        labels: LabelSource,
        #[command(flatten)]
        io: Io,
    },
    /// Attach `|<label>` to every token.
    Feat {
        #[command(flatten)]
        labels: LabelSource,
        #[command(flatten)]
        io: Io,
    },
    /// Remove tags or factors.
    Strip {
        #[arg(long, default_value = "tag")]
        format: StripFormat,
        /// Write the removed labels here.
        #[arg(long)]
        labels_out: Option<PathBuf>,
        #[command(flatten)]
        io: Io,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum StripFormat {
    Tag,
    Feat,
}

#[derive(Args)]
struct NmtOpts {
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    factor_dim: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    beam: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

impl NmtOpts {
    fn config(&self) -> NmtConfig {
        let d = NmtConfig::default();
        NmtConfig {
            max_steps: self.steps.unwrap_or(d.max_steps),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            embed_dim: self.embed_dim.unwrap_or(d.embed_dim),
            factor_dim: self.factor_dim.unwrap_or(d.factor_dim),
            hidden_dim: self.hidden_dim.unwrap_or(d.hidden_dim),
            lr: self.lr.unwrap_or(d.lr),
            max_len: self.max_len.unwrap_or(d.max_len),
            beam: self.beam.unwrap_or(d.beam),
            seed: self.seed.unwrap_or(d.seed),
            ..d
        }
    }
}

#[derive(Subcommand)]
enum NmtCmd {
    /// Train from scratch on already annotated source lines.
    Train {
        #[arg(long)]
        mode: SourceMode,
        #[command(flatten)]
        pair: Pair,
        #[arg(short, long)]
        output: PathBuf,
        /// Write the per-step loss log as JSON.
        #[arg(long)]
        log: Option<PathBuf>,
        #[command(flatten)]
        opts: NmtOpts,
    },
    /// Continue training a model on in-domain data.
    Finetune {
        #[arg(short, long)]
        model: PathBuf,
        #[command(flatten)]
        pair: Pair,
        #[arg(long)]
        steps: usize,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Beam-search translation, one output line per input line.
    Translate {
        #[arg(short, long)]
        model: PathBuf,
        /// Must match the mode the model was trained in.
        #[arg(long)]
        mode: SourceMode,
        #[command(flatten)]
        io: Io,
    },
    /// Compare analytic gradients with finite differences on a batch.
    Gradcheck {
        /// Check this model; a fresh one is built from the data otherwise.
        #[arg(short, long)]
        model: Option<PathBuf>,
        #[arg(long, default_value = "plain")]
        mode: SourceMode,
        #[command(flatten)]
        pair: Pair,
        #[arg(long, default_value_t = 4)]
        batch: usize,
        #[arg(long, default_value_t = 60)]
        samples: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
}

#[derive(Subcommand)]
enum EvalCmd {
    /// Corpus BLEU of hypotheses against one reference per line.
    Bleu {
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long, default_value_t = eval::DEFAULT_MAX_N)]
        max_n: usize,
        #[arg(long)]
        json: bool,
    },
    /// Paired bootstrap test of system A against system B.
    Significance {
        #[arg(long)]
        hyp_a: PathBuf,
        #[arg(long)]
        hyp_b: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long, default_value_t = 1000)]
        resamples: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Render the score table of a pipeline report.
    Table {
        #[arg(long)]
        config: PathBuf,
    },
}

fn read_lines(path: Option<&Path>, allow_empty: bool) -> Result<Vec<Sentence>> {
    let options = LoadOptions { allow_empty };
    match path {
        Some(p) => corpus::load_sentences(p, options),
        None => {
            let stdin = std::io::stdin();
            let mut out = Vec::new();
            let mut empty = Vec::new();
            for (i, line) in stdin.lock().lines().enumerate() {
                let line = line.map_err(|e| Error::io("<stdin>", e))?;
                let s = Sentence::parse(&line);
                if s.is_empty() {
                    empty.push(i + 1);
                }
                out.push(s);
            }
            if !allow_empty && !empty.is_empty() {
                return Err(Error::EmptyLines { path: "<stdin>".into(), lines: empty });
            }
            Ok(out)
        }
    }
}

fn read_raw(path: Option<&Path>) -> Result<Vec<String>> {
    match path {
        Some(p) => Ok(std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?.lines().map(str::to_owned).collect()),
        None => std::io::stdin()
            .lock()
            .lines()
            .collect::<std::io::Result<_>>()
            .map_err(|e| Error::io("<stdin>", e)),
    }
}

fn write_out(path: Option<&Path>, lines: impl IntoIterator<Item = String>) -> Result<()> {
    let mut body = String::new();
    for l in lines {
        body.push_str(&l);
        body.push('\n');
    }
    match path {
        Some(p) => std::fs::write(p, body).map_err(|e| Error::io(p, e)),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(body.as_bytes()).and_then(|_| out.flush()).map_err(|e| Error::io("<stdout>", e))
        }
    }
}

fn read_vectors(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let vectors: Vec<Vec<f64>> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.split_whitespace()
                .map(|x| x.parse::<f64>().map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), i + 1))))
                .collect()
        })
        .collect::<Result<_>>()?;
    if let Some(first) = vectors.first() {
        if let Some((i, v)) = vectors.iter().enumerate().find(|(_, v)| v.len() != first.len()) {
            return Err(Error::Format(format!(
                "{}: vector {} has {} components, expected {}",
                path.display(),
                i + 1,
                v.len(),
                first.len()
            )));
        }
    }
    Ok(vectors)
}

fn format_vector(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

fn label(id: &str) -> Result<DomainLabel> {
    DomainLabel::new(id).map_err(|e| Error::Argument(e.to_string()))
}

fn labels_for(source: &LabelSource, n: usize) -> Result<Vec<DomainLabel>> {
    if let Some(l) = &source.label {
        return Ok(vec![label(l)?; n]);
    }
    let path = source.labels_file.as_deref().expect("clap requires one label source");
    let labels: Vec<DomainLabel> = read_raw(Some(path))?
        .iter()
        .map(|l| DomainLabel::new(l.trim()).map_err(|e| Error::Format(format!("{}: {e}", path.display()))))
        .collect::<Result<_>>()?;
    if labels.len() != n {
        return Err(Error::Alignment { source_lines: n, target_lines: labels.len() });
    }
    Ok(labels)
}

fn load_pair(pair: &Pair) -> Result<ParallelCorpus> {
    load_parallel(&pair.src, &pair.tgt, None, LoadOptions { allow_empty: pair.allow_empty })
}

/// Parallel files whose source side may already carry tags or factors.
fn load_prepared(pair: &Pair) -> Result<ParallelCorpus> {
    let opts = LoadOptions { allow_empty: pair.allow_empty };
    let src = corpus::load_sentences(&pair.src, opts)?;
    let tgt = corpus::load_sentences(&pair.tgt, opts)?;
    if src.len() != tgt.len() {
        return Err(Error::Alignment { source_lines: src.len(), target_lines: tgt.len() });
    }
    let pairs = src.into_iter().zip(tgt).map(|(source, target)| SentencePair { source, target, label: None }).collect();
    Ok(ParallelCorpus::new("prepared", pairs))
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    write_out(None, [serde_json::to_string_pretty(value)?])
}

fn corpus_cmd(cmd: CorpusCmd) -> Result<()> {
    match cmd {
        CorpusCmd::Stats { pair, label: l } => {
            let mut c = load_pair(&pair)?;
            if let Some(l) = l {
                c = c.with_label(&label(&l)?);
            }
            print_json(&corpus::stats(&c))
        }
        CorpusCmd::Split { pair, n_test, seed, prefix } => {
            let c = load_pair(&pair)?;
            let (train, test) = corpus::split_holdout(&c, n_test, seed)?;
            let p = prefix.display();
            corpus::save_parallel(&train, Path::new(&format!("{p}.train.src")), Path::new(&format!("{p}.train.tgt")))?;
            corpus::save_parallel(&test, Path::new(&format!("{p}.test.src")), Path::new(&format!("{p}.test.tgt")))?;
            eprintln!("train {} test {}", train.len(), test.len());
            Ok(())
        }
    }
}

fn bpe_cmd(cmd: BpeCmd) -> Result<()> {
    match cmd {
        BpeCmd::Learn { vocab_limit, joint, output } => {
            let opts = LoadOptions { allow_empty: true };
            let src = corpus::load_sentences(&joint[0], opts)?;
            let tgt = corpus::load_sentences(&joint[1], opts)?;
            bpe::learn_joint(&src, &tgt, vocab_limit)?.save(&output)
        }
        BpeCmd::Apply { model, io } => {
            let model = BpeModel::load(&model)?;
            let lines = read_lines(io.input.as_deref(), io.allow_empty)?;
            write_out(io.output.as_deref(), lines.iter().map(|s| model.apply(s).to_string()))
        }
        BpeCmd::Revert { io } => {
            let lines = read_lines(io.input.as_deref(), io.allow_empty)?;
            let out = lines.iter().map(|s| bpe::revert(s).map(|r| r.to_string())).collect::<Result<Vec<_>>>()?;
            write_out(io.output.as_deref(), out)
        }
    }
}

fn embed_cmd(cmd: EmbedCmd) -> Result<()> {
    match cmd {
        EmbedCmd::Train { input, output, opts } => {
            let sentences = corpus::load_sentences(&input, LoadOptions::default())?;
            let d = EmbeddingConfig::default();
            let config = EmbeddingConfig {
                dim: opts.dim.unwrap_or(d.dim),
                epochs: opts.epochs.unwrap_or(d.epochs),
                seed: opts.seed.unwrap_or(d.seed),
                ..d
            };
            train_embeddings(&sentences, &config)?.save(&output)
        }
        EmbedCmd::Infer { model, io, raw } => {
            let model = EmbeddingModel::load(&model)?;
            let lines = read_lines(io.input.as_deref(), io.allow_empty)?;
            write_out(
                io.output.as_deref(),
                lines.iter().map(|s| {
                    let mut v = model.embed_sentence(s);
                    if !raw {
                        l2_normalize(&mut v);
                    }
                    format_vector(&v)
                }),
            )
        }
    }
}

fn cluster_cmd(cmd: ClusterCmd) -> Result<()> {
    match cmd {
        ClusterCmd::Fit { k, seed, restarts, input, output } => {
            let d = KMeansParams::default();
            let params = KMeansParams { restarts: restarts.unwrap_or(d.restarts), ..d };
            let model = fit_kmeans(&read_vectors(&input)?, k, seed, &params)?;
            eprintln!("k {k} inertia {:.6} sizes {:?}", model.inertia, model.train_histogram);
            model.save(&output)
        }
        ClusterCmd::Assign { model, io } => {
            let model = ClusterModel::load(&model)?;
            let path = io.input.clone().unwrap_or_else(|| PathBuf::from("/dev/stdin"));
            let ids = read_vectors(&path)?.iter().map(|v| model.assign(v).map(|c| c.to_string())).collect::<Result<Vec<_>>>()?;
            write_out(io.output.as_deref(), ids)
        }
        ClusterCmd::Sweep { ks, seed, input, out_dir } => {
            let vectors = read_vectors(&input)?;
            let sweep = sweep_k(&vectors, &ks, seed, &KMeansParams::default(), 2_000)?;
            let mut lines = vec![format!("{:>5} {:>14} {:>10}", "k", "inertia", "silhouette")];
            for e in &sweep {
                lines.push(format!("{:>5} {:>14.6} {:>10.4}", e.k, e.model.inertia, e.silhouette));
                if let Some(dir) = &out_dir {
                    std::fs::create_dir_all(dir).map_err(|err| Error::io(dir, err))?;
                    e.model.save(&dir.join(format!("k{}.json", e.k)))?;
                }
            }
            write_out(None, lines)
        }
        ClusterCmd::Report { labels } => {
            let mut lines = Vec::new();
            for path in &labels {
                let ids: Vec<String> = read_raw(Some(path))?.into_iter().map(|l| l.trim().to_owned()).collect();
                let name = path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned());
                let report = cluster::cluster_report(&ids, &name);
                let sizes: Vec<String> = report.sizes.iter().map(usize::to_string).collect();
                lines.push(format!("{} {}", report.source_name, sizes.join(" ")));
            }
            write_out(None, lines)
        }
    }
}

fn classifier_config(opts: &ClassifyOpts) -> ClassifierConfig {
    let d = ClassifierConfig::default();
    ClassifierConfig {
        dim: opts.dim.unwrap_or(d.dim),
        epochs: opts.epochs.unwrap_or(d.epochs),
        seed: opts.seed.unwrap_or(d.seed),
        ..d
    }
}

fn read_labeled(path: &Path) -> Result<Vec<(Sentence, DomainLabel)>> {
    read_raw(Some(path))?
        .iter()
        .enumerate()
        .map(|(i, l)| parse_labeled_line(l).map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), i + 1))))
        .collect()
}

fn classify_cmd(cmd: ClassifyCmd) -> Result<()> {
    match cmd {
        ClassifyCmd::Train { input, output, opts } => {
            train_classifier(&read_labeled(&input)?, &classifier_config(&opts))?.save(&output)
        }
        ClassifyCmd::Predict { model, io, probability } => {
            let model = ClassifierModel::load(&model)?;
            let lines = read_lines(io.input.as_deref(), io.allow_empty)?;
            write_out(
                io.output.as_deref(),
                lines.iter().map(|s| {
                    let p = model.predict(s);
                    if probability {
                        format!("{} {:.6}", p.label, p.probability)
                    } else {
                        p.label.to_string()
                    }
                }),
            )
        }
        ClassifyCmd::Propagate { seed_file, unlabeled, output, opts } => {
            let seed = read_labeled(&seed_file)?;
            let rest = corpus::load_sentences(&unlabeled, LoadOptions { allow_empty: true })?;
            let out = classify::propagate_labels(&seed, &rest, &classifier_config(&opts))?;
            write_out(output.as_deref(), out.iter().map(|(s, l)| format_labeled_line(s, l)))
        }
    }
}

fn annotate_cmd(cmd: AnnotateCmd) -> Result<()> {
    match cmd {
        AnnotateCmd::Tag { labels, io } => {
            let lines = read_lines(io.input.as_deref(), io.allow_empty)?;
            let labels = labels_for(&labels, lines.len())?;
            let out = lines.iter().zip(&labels).map(|(s, l)| inject_tag(s, l).map(|t| t.to_string())).collect::<Result<Vec<_>>>()?;
            write_out(io.output.as_deref(), out)
        }
        AnnotateCmd::Feat { labels, io } => {
            let lines = read_lines(io.input.as_deref(), io.allow_empty)?;
            let labels = labels_for(&labels, lines.len())?;
            let out = lines
                .iter()
                .zip(&labels)
                .map(|(s, l)| inject_feature(s, l).map(|f| f.to_string()))
                .collect::<Result<Vec<_>>>()?;
            write_out(io.output.as_deref(), out)
        }
        AnnotateCmd::Strip { format, labels_out, io } => {
            let mut sentences = Vec::new();
            let mut labels = Vec::new();
            for line in read_raw(io.input.as_deref())? {
                let (l, s) = match format {
                    StripFormat::Tag => {
                        let (l, s) = strip_tag(&line)?;
                        (Some(l), s)
                    }
                    StripFormat::Feat => {
                        let f = parse_factored(&line)?;
                        (f.factor().cloned(), f.surfaces())
                    }
                };
                sentences.push(s.to_string());
                labels.push(l.map_or_else(String::new, |l| l.to_string()));
            }
            if let Some(p) = labels_out {
                write_out(Some(&p), labels)?;
            }
            write_out(io.output.as_deref(), sentences)
        }
    }
}

fn save_log(path: Option<&Path>, log: &nmt::TrainLog) -> Result<()> {
    if let Some(p) = path {
        std::fs::write(p, serde_json::to_string_pretty(log)?).map_err(|e| Error::io(p, e))?;
    }
    eprintln!(
        "steps {} loss {:.4} -> {:.4} ({:.1}s)",
        log.steps,
        log.losses.first().copied().unwrap_or(f64::NAN),
        log.losses.last().copied().unwrap_or(f64::NAN),
        log.wall_clock_secs
    );
    Ok(())
}

fn nmt_cmd(cmd: NmtCmd) -> Result<()> {
    match cmd {
        NmtCmd::Train { mode, pair, output, log, opts } => {
            let (model, train_log) = nmt::train(&load_prepared(&pair)?, mode, &opts.config())?;
            save_log(log.as_deref(), &train_log)?;
            model.save(&output)
        }
        NmtCmd::Finetune { model, pair, steps, output, log } => {
            let base = Seq2SeqModel::load(&model)?;
            let (model, train_log) = nmt::fine_tune(&base, &load_prepared(&pair)?, steps)?;
            save_log(log.as_deref(), &train_log)?;
            model.save(&output)
        }
        NmtCmd::Translate { model, mode, io } => {
            let model = Seq2SeqModel::load(&model)?;
            if model.mode != mode {
                return Err(Error::Format(format!("model was trained in {} mode, not {mode}", model.mode)));
            }
            let out = read_raw(io.input.as_deref())?
                .iter()
                .map(|l| model.translate(l).map(|s| s.to_string()))
                .collect::<Result<Vec<_>>>()?;
            write_out(io.output.as_deref(), out)
        }
        NmtCmd::Gradcheck { model, mode, pair, batch, samples, seed, tolerance } => {
            let corpus = load_prepared(&pair)?;
            let model = match model {
                Some(p) => Seq2SeqModel::load(&p)?,
                None => nmt::train(&corpus, mode, &NmtConfig { max_steps: 0, seed, ..Default::default() })?.0,
            };
            let batch = ParallelCorpus::new("batch", corpus.pairs.iter().take(batch).cloned().collect());
            let err = model.gradient_check(&batch, samples, seed)?;
            write_out(None, [format!("max relative error {err:.3e} (tolerance {tolerance:.0e})")])?;
            if err > tolerance {
                return Err(Error::Consistency(format!("gradient check failed: {err:.3e} > {tolerance:.0e}")));
            }
            Ok(())
        }
    }
}

fn eval_cmd(cmd: EvalCmd) -> Result<()> {
    match cmd {
        EvalCmd::Bleu { hyp, reference, max_n, json } => {
            let opts = LoadOptions { allow_empty: true };
            let r = eval::bleu(&corpus::load_sentences(&hyp, opts)?, &corpus::load_sentences(&reference, opts)?, max_n)?;
            if json {
                return print_json(&r);
            }
            let p: Vec<String> = r.n_gram_precisions.iter().map(|x| format!("{:.1}", 100.0 * x)).collect();
            write_out(
                None,
                [format!(
                    "BLEU = {:.2} {} (BP = {:.3}, hyp_len = {}, ref_len = {})",
                    r.score,
                    p.join("/"),
                    r.brevity_penalty,
                    r.hyp_len,
                    r.ref_len
                )],
            )
        }
        EvalCmd::Significance { hyp_a, hyp_b, reference, resamples, seed } => {
            let opts = LoadOptions { allow_empty: true };
            let load = |p: &Path| corpus::load_sentences(p, opts);
            let r = paired_bootstrap(&load(&hyp_a)?, &load(&hyp_b)?, &load(&reference)?, resamples, seed)?;
            print_json(&r)
        }
        EvalCmd::Table { config } => {
            let text = std::fs::read_to_string(&config).map_err(|e| Error::io(&config, e))?;
            let table = match serde_json::from_str::<Report>(&text) {
                Ok(report) => report.scores,
                Err(_) => serde_json::from_str::<ScoreTable>(&text)
                    .map_err(|e| Error::Format(format!("{}: neither a report nor a score table: {e}", config.display())))?,
            };
            write_out(None, [table.render()])
        }
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Corpus(c) => corpus_cmd(c),
        Command::Bpe(c) => bpe_cmd(c),
        Command::Embed(c) => embed_cmd(c),
        Command::Cluster(c) => cluster_cmd(c),
        Command::Classify(c) => classify_cmd(c),
        Command::Annotate(c) => annotate_cmd(c),
        Command::Nmt(c) => nmt_cmd(c),
        Command::Eval(c) => eval_cmd(c),
        Command::Run { config, preset, resume } => {
            let mut config = PipelineConfig::load(&config)?;
            if let Some(p) = preset {
                config.preset = p;
                config.validate()?;
            }
            let report = pipeline::run(&config, resume)?;
            write_out(None, [report.render()])
        }
        Command::Synth { n_domains, pairs, overlap, seed, styles, out_dir } => {
            let spec = SyntheticSpec {
                n_domains,
                pairs_per_domain: pairs,
                vocab_overlap: overlap,
                seed,
                styles,
                ..Default::default()
            };
            generate_synthetic(&spec)?.save(&out_dir)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
