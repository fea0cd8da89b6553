use std::path::Path;
use std::time::Instant;

use actorid::cli::{persist_run, read_run, run_command, RunEntry, RunRecord};
use actorid::corpus::Partition;
use actorid::eval::{AliasTable, Setting};
use actorid::Error;
use serde_json::Value;

fn cli(args: &[&str]) -> i32 {
    run_command(std::iter::once("actorid").chain(args.iter().copied()))
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).display().to_string()
}

/// Full synth → train → predict → evaluate sequence in `dir`.
fn end_to_end(dir: &Path, hash_space: &str) {
    let data = p(dir, "data");
    let corpus = format!("{data}/corpus.jsonl");
    let split = format!("{data}/split.json");
    let fixture = format!("{data}/llm_fixture.jsonl");
    let aliases = format!("{data}/aliases.json");
    let hs = ["--hash-space", hash_space];
    let d = ["--corpus", corpus.as_str(), "--split", split.as_str()];
    let (crf, canon, hybrid) = (p(dir, "crf.json"), p(dir, "canon.json"), p(dir, "hybrid.json"));
    let (llm_train, llm_test) = (p(dir, "llm_train.json"), p(dir, "llm_test.json"));
    let (pipe, hyb) = (p(dir, "pipeline.json"), p(dir, "hybrid_run.json"));

    assert_eq!(cli(&["synth", "--out", &data, "--n-claims", "500"]), 0);
    assert_eq!(cli(&cat(&[&["train-extractor"], &d, &hs, &["--out", &crf]])), 0);
    assert_eq!(cli(&cat(&[&["train-canonicalizer"], &d, &hs, &["--out", &canon]])), 0);
    for (part, out) in [("train", &llm_train), ("test", &llm_test)] {
        let args = ["llm-predict", "--partition", part, "--llm-fixture", &fixture, "--out", out];
        assert_eq!(cli(&cat(&[&args, &d])), 0);
    }
    assert_eq!(cli(&cat(&[&["train-hybrid"], &d, &hs, &["--llm-run", &llm_train, "--out", &hybrid]])), 0);
    let predict = ["predict", "--extractor", &crf, "--canonicalizer", &canon, "--out", &pipe];
    assert_eq!(cli(&cat(&[&predict, &d, &hs])), 0);
    let predict = ["predict", "--extractor", &crf, "--hybrid", &hybrid, "--llm-run", &llm_test, "--out", &hyb];
    assert_eq!(cli(&cat(&[&predict, &d, &hs])), 0);
    for run in [&pipe, &hyb, &llm_test] {
        assert_eq!(cli(&["evaluate", "--pred", run, "--aliases", &aliases, "--gold", &corpus]), 0);
    }
    assert_eq!(cli(&["report", "--run", &pipe, "--run", &hyb]), 0);
}

fn cat<'a>(parts: &[&[&'a str]]) -> Vec<&'a str> {
    parts.concat()
}

fn strip_volatile(path: &Path) -> Value {
    let mut v: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    let obj = v.as_object_mut().unwrap();
    obj.remove("run_id");
    obj.remove("created_at");
    v
}

#[test]
fn full_run_is_fast_and_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let t = Instant::now();
    end_to_end(a.path(), "65536");
    assert!(t.elapsed().as_secs() < 60, "{:?}", t.elapsed());
    end_to_end(b.path(), "65536");

    for f in ["llm_train.json", "llm_test.json", "pipeline.json", "hybrid_run.json"] {
        assert_eq!(strip_volatile(&a.path().join(f)), strip_volatile(&b.path().join(f)), "{f}");
    }
    for f in ["crf.json", "canon.json", "hybrid.json", "data/corpus.jsonl"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }

    let pipe = read_run(a.path().join("pipeline.json")).unwrap();
    let hyb = read_run(a.path().join("hybrid_run.json")).unwrap();
    let llm = read_run(a.path().join("llm_test.json")).unwrap();
    assert_eq!(pipe.entries.len(), hyb.entries.len());
    assert_eq!(pipe.kind, "pipeline");
    assert_eq!(hyb.kind, "hybrid");
    let exact = |r: &RunRecord| r.scores(Setting::Exact).unwrap().f1;
    assert!(exact(&hyb) > exact(&llm));
    assert!(pipe.entries.iter().all(|e| !e.predictions.is_empty()));

    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(a.path().join("pipeline.report.json")).unwrap()).unwrap();
    assert_eq!(report["run_id"], pipe.run_id.as_str());
    assert_eq!(report["settings"].as_array().unwrap().len(), 3);

    // outputs exist, so a second run without --force must refuse
    let data = p(a.path(), "data");
    assert_eq!(cli(&["synth", "--out", &data, "--n-claims", "500"]), 1);
    assert_eq!(cli(&["--force", "synth", "--out", &data, "--n-claims", "500"]), 0);
}

#[test]
fn hash_space_mismatch_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let data = p(dir.path(), "data");
    assert_eq!(cli(&["synth", "--out", &data, "--n-claims", "80"]), 0);
    let corpus = format!("{data}/corpus.jsonl");
    let split = format!("{data}/split.json");
    let crf = p(dir.path(), "crf.json");
    let canon = p(dir.path(), "canon.json");
    let d = ["--corpus", corpus.as_str(), "--split", split.as_str()];
    assert_eq!(cli(&[&["train-extractor", "--hash-space", "4096", "--epochs", "1", "--out", &crf][..], &d].concat()), 0);
    assert_eq!(cli(&[&["train-canonicalizer", "--hash-space", "4096", "--epochs", "1", "--out", &canon][..], &d].concat()), 0);
    let out = p(dir.path(), "pred.json");
    let predict = ["predict", "--extractor", crf.as_str(), "--canonicalizer", canon.as_str(), "--out", out.as_str()];
    assert_eq!(cli(&[&predict[..], &d, &["--hash-space", "8192"]].concat()), 1);
    assert!(!Path::new(&out).exists());
    assert_eq!(cli(&[&predict[..], &d, &["--hash-space", "4096"]].concat()), 0);
}

#[test]
fn bad_inputs_exit_nonzero() {
    assert_ne!(cli(&["predict", "--corpus", "/nope.jsonl", "--extractor", "x", "--canonicalizer", "y"]), 0);
    assert_ne!(cli(&["predict", "--corpus", "c", "--extractor", "x"]), 0);
    assert_ne!(cli(&["llm-predict", "--corpus", "c", "--exemplar-order", "sideways"]), 0);
}

fn record(n: usize) -> RunRecord {
    let entries = (0..n)
        .map(|i| RunEntry {
            claim_id: format!("c{i:04}"),
            predictions: vec![format!("Akteur {}", i % 7)],
            gold: vec![format!("Akteur {}", i % 5), "CSU".into()],
            llm_raw: (i % 3 == 0).then(|| format!("Answer: Akteur {i}")),
            llm_cleaned: (i % 3 == 0).then(|| format!("Akteur {i}")),
            latency_ms: Some(i as u64),
            error: (i % 11 == 0).then(|| "timeout".to_string()),
        })
        .collect();
    let config = serde_json::json!({ "seed": 13, "n": n });
    RunRecord::new("pipeline", Some(Partition::Test), config, entries, &Setting::ALL, &AliasTable::default()).unwrap()
}

#[test]
fn records_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    for n in [1, 207] {
        let r = record(n);
        let path = dir.path().join(format!("nested/run{n}.json"));
        persist_run(&r, &path, false).unwrap();
        let back = read_run(&path).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.entries.len(), n);
        assert!(matches!(persist_run(&r, &path, false), Err(Error::Exists(_))));
        persist_run(&r, &path, true).unwrap();
    }
}

#[test]
fn tampered_config_fails_verification() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.json");
    persist_run(&record(3), &path, false).unwrap();
    let text = std::fs::read_to_string(&path).unwrap().replace("\"seed\": 13", "\"seed\": 14");
    std::fs::write(&path, text).unwrap();
    assert!(read_run(&path).is_err());
    assert_eq!(cli(&["evaluate", "--pred", path.to_str().unwrap()]), 1);
}
