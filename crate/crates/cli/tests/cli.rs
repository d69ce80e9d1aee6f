use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_domainforge"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} exited {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    run(dir, args).status.code().unwrap()
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

fn synth(dir: &Path, pairs: &str, overlap: &str) {
    ok(dir, &["synth", "--pairs", pairs, "--overlap", overlap, "--seed", "4", "-o", "data"]);
}

#[test]
fn corpus_stats_and_split() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "50", "1");
    let stats: serde_json::Value =
        serde_json::from_str(&ok(d, &["corpus", "stats", "--src", "data/d0.src", "--tgt", "data/d0.tgt", "--label", "x"])).unwrap();
    assert_eq!(stats["sentence_count"], 50);
    assert_eq!(stats["label_histogram"]["x"], 50);
    ok(d, &["corpus", "split", "--src", "data/d0.src", "--tgt", "data/d0.tgt", "--n-test", "10", "--seed", "2", "--prefix", "s"]);
    assert_eq!(read(d, "s.test.src").lines().count(), 10);
    assert_eq!(read(d, "s.train.tgt").lines().count(), 40);
}

#[test]
fn bpe_learn_apply_revert_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "100", "1");
    ok(d, &["bpe", "learn", "--vocab-limit", "60", "--joint", "data/d0.src", "data/d0.tgt", "-o", "bpe.json"]);
    let model: serde_json::Value = serde_json::from_str(&read(d, "bpe.json")).unwrap();
    assert!(model["merges"].as_array().unwrap().len() > 0);
    ok(d, &["bpe", "apply", "-m", "bpe.json", "-i", "data/d1.tgt", "-o", "seg.txt"]);
    assert!(read(d, "seg.txt").contains("@@"));
    ok(d, &["bpe", "revert", "-i", "seg.txt", "-o", "back.txt"]);
    assert_eq!(read(d, "back.txt"), read(d, "data/d1.tgt"));
    write(d, "dangling.txt", "a@@\n");
    assert_eq!(code(d, &["bpe", "revert", "-i", "dangling.txt"]), 3);
}

#[test]
fn annotate_round_trips_and_collisions() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "in.txt", "the cat\na dog runs\n");
    write(d, "labels.txt", "news\nlaw\n");
    ok(d, &["annotate", "tag", "--labels-file", "labels.txt", "-i", "in.txt", "-o", "tagged.txt"]);
    assert_eq!(read(d, "tagged.txt"), "__news the cat\n__law a dog runs\n");
    ok(d, &["annotate", "strip", "-i", "tagged.txt", "-o", "plain.txt", "--labels-out", "got.txt"]);
    assert_eq!(read(d, "plain.txt"), read(d, "in.txt"));
    assert_eq!(read(d, "got.txt"), read(d, "labels.txt"));

    ok(d, &["annotate", "feat", "--label", "news", "-i", "in.txt", "-o", "feat.txt"]);
    assert_eq!(read(d, "feat.txt").lines().next().unwrap(), "the|news cat|news");
    ok(d, &["annotate", "strip", "--format", "feat", "-i", "feat.txt", "-o", "plain2.txt"]);
    assert_eq!(read(d, "plain2.txt"), read(d, "in.txt"));

    write(d, "bad.txt", "a __x b\n");
    assert_eq!(code(d, &["annotate", "tag", "--label", "news", "-i", "bad.txt"]), 3);
    write(d, "short.txt", "news\n");
    assert_eq!(code(d, &["annotate", "tag", "--labels-file", "short.txt", "-i", "in.txt"]), 3);
    // Exactly one label source is required.
    assert_eq!(code(d, &["annotate", "tag", "-i", "in.txt"]), 2);
}

#[test]
fn embed_cluster_classify_chain() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "80", "0");
    let both = read(d, "data/d0.src") + &read(d, "data/d1.src");
    write(d, "all.src", &both);
    ok(d, &["embed", "train", "-i", "all.src", "-o", "emb.json", "--dim", "16", "--epochs", "10"]);
    ok(d, &["embed", "infer", "-m", "emb.json", "-i", "all.src", "-o", "vec.txt"]);
    let vectors = read(d, "vec.txt");
    assert_eq!(vectors.lines().count(), 160);
    let first: Vec<f64> = vectors.lines().next().unwrap().split(' ').map(|x| x.parse().unwrap()).collect();
    assert_eq!(first.len(), 16);
    assert!((first.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-9);

    ok(d, &["cluster", "fit", "--k", "2", "--seed", "3", "-i", "vec.txt", "-o", "km.json"]);
    ok(d, &["cluster", "assign", "-m", "km.json", "-i", "vec.txt", "-o", "ids.txt"]);
    let ids: Vec<String> = read(d, "ids.txt").lines().map(str::to_owned).collect();
    assert_eq!(ids.len(), 160);
    // Disjoint vocabularies: each corpus lands in its own cluster.
    assert!(ids[..80].iter().all(|i| *i == ids[0]) && ids[80..].iter().all(|i| *i == ids[80]) && ids[0] != ids[80]);
    let sweep = ok(d, &["cluster", "sweep", "--ks", "1,2,3", "-i", "vec.txt", "--out-dir", "sweep"]);
    assert_eq!(sweep.lines().count(), 4);
    assert!(d.join("sweep/k3.json").exists());
    let report = ok(d, &["cluster", "report", "ids.txt"]);
    assert_eq!(report.trim(), "ids 80 80");

    let labeled: String = read(d, "all.src")
        .lines()
        .zip(&ids)
        .map(|(s, c)| format!("__label__c{c} {s}\n"))
        .collect();
    write(d, "labeled.txt", &labeled);
    ok(d, &["classify", "train", "-i", "labeled.txt", "-o", "cls.json", "--epochs", "10"]);
    let predicted = ok(d, &["classify", "predict", "-m", "cls.json", "-i", "all.src"]);
    let agree = predicted.lines().zip(&ids).filter(|(p, c)| **p == format!("c{c}")).count();
    assert!(agree >= 150, "{agree}");
    let seed: String = labeled.lines().step_by(8).map(|l| format!("{l}\n")).collect();
    write(d, "seed.txt", &seed);
    ok(d, &["classify", "propagate", "--seed-file", "seed.txt", "--unlabeled", "all.src", "-o", "prop.txt", "--epochs", "10"]);
    assert_eq!(read(d, "prop.txt").lines().count(), 20 + 160);
    assert!(read(d, "prop.txt").lines().all(|l| l.starts_with("__label__c")));
}

#[test]
fn nmt_train_translate_gradcheck() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "30", "1");
    ok(d, &["annotate", "tag", "--label", "d0", "-i", "data/d0.src", "-o", "tag.src"]);
    let small = ["--steps", "20", "--hidden-dim", "8", "--embed-dim", "8", "--batch-size", "4"];
    let mut args = vec!["nmt", "train", "--mode", "tag", "--src", "tag.src", "--tgt", "data/d0.tgt", "-o", "m.json", "--log", "log.json"];
    args.extend(small);
    ok(d, &args);
    let log: serde_json::Value = serde_json::from_str(&read(d, "log.json")).unwrap();
    assert_eq!(log["losses"].as_array().unwrap().len(), 20);
    let out = ok(d, &["nmt", "translate", "-m", "m.json", "--mode", "tag", "-i", "tag.src"]);
    assert_eq!(out.lines().count(), 30);
    // A model used in the wrong mode is a format error.
    assert_eq!(code(d, &["nmt", "translate", "-m", "m.json", "--mode", "feat", "-i", "tag.src"]), 3);
    assert_eq!(code(d, &["nmt", "translate", "-m", "m.json", "--mode", "tag", "-i", "data/d0.src"]), 3);
    ok(d, &["nmt", "finetune", "-m", "m.json", "--src", "tag.src", "--tgt", "data/d0.tgt", "--steps", "5", "-o", "ft.json"]);
    assert!(d.join("ft.json").exists());
    let gc = ok(d, &["nmt", "gradcheck", "--mode", "tag", "--src", "tag.src", "--tgt", "data/d0.tgt", "--samples", "30"]);
    assert!(gc.starts_with("max relative error"));
    assert_eq!(code(d, &["nmt", "train", "--mode", "bogus", "--src", "tag.src", "--tgt", "data/d0.tgt", "-o", "x.json"]), 2);
}

#[test]
fn eval_commands() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "hyp.txt", "the the the\n");
    write(d, "ref.txt", "the cat sat\n");
    let out = ok(d, &["eval", "bleu", "--hyp", "hyp.txt", "--ref", "ref.txt", "--max-n", "1"]);
    assert!(out.starts_with("BLEU = 33.33"), "{out}");
    let json: serde_json::Value =
        serde_json::from_str(&ok(d, &["eval", "bleu", "--hyp", "hyp.txt", "--ref", "ref.txt", "--max-n", "1", "--json"])).unwrap();
    assert!((json["score"].as_f64().unwrap() - 100.0 / 3.0).abs() < 1e-9);

    let refs: String = (0..50).map(|i| format!("r{i} a b c d\n")).collect();
    let zero: String = (0..50).map(|i| format!("z{i} v w x y\n")).collect();
    write(d, "refs.txt", &refs);
    write(d, "zero.txt", &zero);
    let sig: serde_json::Value = serde_json::from_str(&ok(
        d,
        &["eval", "significance", "--hyp-a", "refs.txt", "--hyp-b", "zero.txt", "--ref", "refs.txt", "--resamples", "200"],
    ))
    .unwrap();
    assert!(sig["p_value"].as_f64().unwrap() <= 0.01);
    write(d, "short.txt", "x\n");
    assert_eq!(code(d, &["eval", "bleu", "--hyp", "short.txt", "--ref", "refs.txt"]), 3);
}

fn tiny_config(dir: &Path, extra: &str) -> PathBuf {
    write(
        dir,
        "pipeline.json",
        &format!(
            r#"{{
  "version": 1,
  "mode": "known",
  "work_dir": "work",
  "synthetic": {{"pairs_per_domain": 120, "lemmas": 10}},
  "conditioning": ["tag"],
  "n_dev": 10,
  "n_test": 20,
  "resamples": 20,
  "bpe_vocab_limit": 80,
  "nmt": {{"embed_dim": 8, "hidden_dim": 8, "max_steps": 20, "batch_size": 8, "fine_tune_steps": 5, "max_len": 12}}{extra}
}}"#
        ),
    )
}

#[test]
fn run_pipeline_and_render_table() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    tiny_config(d, "");
    let out = ok(d, &["run", "--config", "pipeline.json", "--resume"]);
    assert!(out.contains("Baseline") && out.contains("Tag"));
    let report = read(d, "work/report.json");
    ok(d, &["run", "--config", "pipeline.json", "--resume"]);
    assert_eq!(read(d, "work/report.json"), report);
    let table = ok(d, &["eval", "table", "--config", "work/report.json"]);
    assert!(table.contains("Tuned"));
    let _ = ok(d, &["run", "--config", "pipeline.json", "--preset", "desk"]);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    // Config errors exit 2.
    tiny_config(d, r#", "ks": [0]"#);
    assert_eq!(code(d, &["run", "--config", "pipeline.json"]), 2);
    write(d, "broken.json", "{");
    assert_eq!(code(d, &["run", "--config", "broken.json"]), 2);
    assert_eq!(code(d, &["run", "--config", "pipeline.json", "--preset", "huge"]), 2);
    assert_eq!(code(d, &["synth", "--overlap", "2", "-o", "x"]), 2);
    // Data errors exit 3.
    write(d, "a.txt", "x\n\ny\n");
    write(d, "b.txt", "x\ny\nz\n");
    assert_eq!(code(d, &["corpus", "stats", "--src", "a.txt", "--tgt", "b.txt"]), 3);
    assert_eq!(code(d, &["corpus", "stats", "--src", "a.txt", "--tgt", "b.txt", "--allow-empty"]), 0);
    assert_eq!(code(d, &["corpus", "stats", "--src", "missing.txt", "--tgt", "b.txt"]), 3);
    let stderr = String::from_utf8(run(d, &["corpus", "stats", "--src", "a.txt", "--tgt", "b.txt"]).stderr).unwrap();
    assert!(stderr.contains("[2]"), "{stderr}");
    // Unknown subcommands are usage errors.
    assert_eq!(code(d, &["frobnicate"]), 2);
}
