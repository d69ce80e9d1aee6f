use std::path::Path;

use domainforge::pipeline::{run, PipelineConfig, Report};
use domainforge::synthetic::{generate_synthetic, SyntheticSpec};
use domainforge::Error;
use serde_json::{json, Value};

fn tiny(mode: &str, work_dir: &Path, extra: Value) -> PipelineConfig {
    let mut base = json!({
        "version": 1,
        "mode": mode,
        "work_dir": work_dir,
        "synthetic": {"n_domains": 2, "pairs_per_domain": 160, "lemmas": 12, "seed": 3},
        "n_dev": 20,
        "n_test": 30,
        "bpe_vocab_limit": 150,
        "resamples": 50,
        "nmt": {"embed_dim": 8, "factor_dim": 4, "hidden_dim": 12, "max_steps": 40, "batch_size": 8, "fine_tune_steps": 10, "max_len": 12},
        "embedding": {"dim": 8, "epochs": 2, "bucket_count": 256},
        "classifier": {"dim": 8, "epochs": 3, "bucket_count": 256}
    });
    let obj = base.as_object_mut().unwrap();
    for (k, v) in extra.as_object().unwrap() {
        obj.insert(k.clone(), v.clone());
    }
    let config: PipelineConfig = serde_json::from_value(base).unwrap();
    config.validate().unwrap();
    config
}

fn systems(r: &Report) -> Vec<&str> {
    r.scores.systems.iter().map(String::as_str).collect()
}

#[test]
fn known_mode_reports_every_system_and_column() {
    let dir = tempfile::tempdir().unwrap();
    let report = run(&tiny("known", dir.path(), json!({})), false).unwrap();
    assert_eq!(systems(&report), ["Baseline", "Tuned", "Tag", "Feat"]);
    assert_eq!(report.scores.domains, ["d0", "d1", "all"]);
    assert_eq!(report.fine_tune.len(), 2);
    for f in &report.fine_tune {
        assert_eq!(f.dev_loss_before.len(), 2);
        assert_eq!(f.dev_loss_after.len(), 2);
    }
    assert_eq!(report.style_accuracy.len(), 4);
    assert!(report.corpora.iter().all(|c| c.test == 30 && c.dev == 20 && c.train == 110));
    for file in ["report.json", "report.txt", "manifest.json", "hyp/Tag.d1.txt", "models/bpe.json"] {
        assert!(dir.path().join(file).exists(), "{file}");
    }
    let p = &report.scores.cell("d0", "Tag").unwrap().p_values;
    assert_eq!(p.len(), 1);
    assert_eq!(p[0].0, "Baseline");
    let text = std::fs::read_to_string(dir.path().join("report.txt")).unwrap();
    assert!(text.contains("Baseline") && text.contains("fine-tuning"));
}

#[test]
fn tag_only_conditioning_omits_feat() {
    let dir = tempfile::tempdir().unwrap();
    let report = run(&tiny("known", dir.path(), json!({"conditioning": ["tag"], "bpe": false})), false).unwrap();
    assert_eq!(systems(&report), ["Baseline", "Tuned", "Tag"]);
    assert!(!report.training.contains_key("Feat"));
}

#[test]
fn resume_reuses_artifacts_and_reproduces_report() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny("known", dir.path(), json!({"conditioning": ["tag"]}));
    let first = run(&config, true).unwrap();
    let model = dir.path().join("models/nmt.baseline.json");
    let stamp = std::fs::metadata(&model).unwrap().modified().unwrap();
    let bytes = std::fs::read(dir.path().join("report.json")).unwrap();
    let second = run(&config, true).unwrap();
    assert_eq!(first, second);
    assert_eq!(std::fs::metadata(&model).unwrap().modified().unwrap(), stamp);
    assert_eq!(std::fs::read(dir.path().join("report.json")).unwrap(), bytes);

    // A changed setting invalidates the dependent stages.
    let mut changed = config.clone();
    changed.nmt.max_steps = Some(41);
    let third = run(&changed, true).unwrap();
    assert_eq!(third.training["Baseline"].steps, 41);
    assert_ne!(third.config_hash, first.config_hash);
}

#[test]
fn config_hash_ignores_work_dir() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(
        tiny("known", a.path(), json!({})).hash(),
        tiny("known", b.path(), json!({})).hash()
    );
}

#[test]
fn empty_seed_labeling_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny("supervised_propagate", dir.path(), json!({"seed_fraction": 0.0}));
    assert!(matches!(run(&config, false), Err(Error::Data(_))));
}

#[test]
fn propagation_labels_the_rest_and_runs_known_protocol() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny("supervised_propagate", dir.path(), json!({
        "seed_fraction": 0.25,
        "conditioning": ["tag"],
        "synthetic": {"n_domains": 2, "pairs_per_domain": 160, "lemmas": 12, "seed": 3, "vocab_overlap": 0.0},
        "classifier": {"dim": 16, "epochs": 25, "bucket_count": 256}
    }));
    let report = run(&config, false).unwrap();
    let p = report.propagation.as_ref().unwrap();
    assert_eq!(p.seed_pairs, 80);
    assert_eq!(p.propagated_pairs, 240);
    assert_eq!(p.labels, ["d0", "d1"]);
    // Disjoint source vocabularies make the domains separable.
    assert!(p.agreement.unwrap() > 0.9, "{:?}", p.agreement);
    assert!(systems(&report).contains(&"Tag"));
}

#[test]
fn unsup_multi_reports_one_histogram_per_test_set() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny("unsup_multi", dir.path(), json!({"ks": [2, 3]}));
    let report = run(&config, false).unwrap();
    assert_eq!(systems(&report), ["Ref", "Tag", "C2", "C3", "Unsup"]);
    assert_eq!(report.clustering.len(), 2);
    for c in &report.clustering {
        assert_eq!(c.test_reports.len(), 2);
        assert_eq!(c.test_reports[0].source_name, "d0");
        assert_eq!(c.test_reports.iter().flat_map(|r| &r.sizes).sum::<usize>(), 60);
        assert_eq!(c.train_histogram.iter().sum::<usize>(), 220);
        assert!(c.nmi.is_some() && c.classifier_latent_accuracy.is_some());
    }
    let best = report.best_k.unwrap();
    let best_row = report.scores.cell("all", &format!("C{best}")).unwrap();
    assert_eq!(report.scores.cell("all", "Unsup").unwrap().bleu, best_row.bleu);
    assert_eq!(report.scores.cell("d0", "C2").unwrap().p_values.len(), 2);
}

#[test]
fn unsup_single_reads_corpora_from_files() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate_synthetic(&SyntheticSpec {
        pairs_per_domain: 100,
        lemmas: 12,
        ..Default::default()
    })
    .unwrap();
    data.save(dir.path()).unwrap();
    let config_path = dir.path().join("config.json");
    let config = json!({
        "version": 1,
        "mode": "unsup_single",
        "work_dir": "work",
        "corpora": [
            {"name": "a", "src": "d0.src", "tgt": "d0.tgt", "latent": "d0.latent"},
            {"name": "b", "src": "d1.src", "tgt": "d1.tgt", "latent": "d1.latent"}
        ],
        "ks": [2],
        "n_dev": 20,
        "n_test": 30,
        "bpe": false,
        "resamples": 20,
        "nmt": {"embed_dim": 8, "hidden_dim": 8, "max_steps": 20, "batch_size": 8, "max_len": 10},
        "embedding": {"dim": 8, "epochs": 1, "bucket_count": 128},
        "classifier": {"dim": 8, "epochs": 2, "bucket_count": 128}
    });
    std::fs::write(&config_path, config.to_string()).unwrap();
    let config = PipelineConfig::load(&config_path).unwrap();
    assert_eq!(config.work_dir, dir.path().join("work"));
    let report = run(&config, false).unwrap();
    assert_eq!(report.scores.domains, ["mixed"]);
    assert_eq!(systems(&report), ["Ref", "C2", "Unsup"]);
    assert_eq!(report.corpora[0].train, 150);
    assert!(dir.path().join("work/report.json").exists());
}

#[test]
fn invalid_configs_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let bad = |extra: Value, mode: &str| {
        let mut v = json!({"version": 1, "mode": mode, "work_dir": dir.path(), "synthetic": {}});
        for (k, x) in extra.as_object().unwrap() {
            v[k] = x.clone();
        }
        let c: PipelineConfig = serde_json::from_value(v).unwrap();
        matches!(c.validate(), Err(Error::Config(_)))
    };
    assert!(bad(json!({}), "unsup_multi"));
    assert!(bad(json!({"ks": [0]}), "unsup_single"));
    assert!(bad(json!({"seed_fraction": 1.5}), "supervised_propagate"));
    assert!(bad(json!({"version": 9}), "known"));
    assert!(bad(json!({"conditioning": []}), "known"));
    assert!(bad(json!({"nmt": {"hidden_dim": 0}}), "known"));
    assert!(!bad(json!({}), "known"));
}

#[test]
fn shipped_configs_are_valid() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        let config = PipelineConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        config.validate().unwrap();
        assert!(config.work_dir.starts_with(&dir));
        n += 1;
    }
    assert!(n >= 3);
}
