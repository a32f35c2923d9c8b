use std::path::{Path, PathBuf};

use serde_json::Value;
use synthrad::imaging::{DatasetManifest, TriageStatus};
use synthrad::jsonl;
use synthrad::pipeline::{cli_dispatch, RunLedger, SampleCursor, StageRecord, CURSOR_FILE, LEDGER_FILE, LOCK_FILE};
use synthrad::turing::{load_quartets, ResponseRecord};

struct Work {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Work {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        Self { _dir: dir, root }
    }

    fn p(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    /// Runs the CLI with the work dir's paths and a tiny model and schedule.
    fn run(&self, args: &[&str]) -> i32 {
        let dirs = [
            format!("paths.data_dir={}", self.p("data").display()),
            format!("paths.checkpoint_dir={}", self.p("ckpt").display()),
            format!("paths.output_dir={}", self.p("out").display()),
        ];
        let fixed = [
            "diffusion.max_steps=30",
            "diffusion.checkpoint_interval=10",
            "diffusion.batch_size=4",
            "diffusion.lr=1e-3",
            "schedule.steps=20",
            "model.base_channels=4",
            "study.n_quartets=5",
            "metrics.embedder_dim=16",
        ];
        let mut argv = vec!["synthrad".to_string()];
        argv.extend(args.iter().map(|s| s.to_string()));
        for kv in dirs.iter().map(String::as_str).chain(fixed) {
            argv.push("--set".into());
            argv.push(kv.into());
        }
        cli_dispatch(argv)
    }

    fn ledger(&self) -> Vec<StageRecord> {
        RunLedger::new(self.p("out").join(LEDGER_FILE)).records().unwrap()
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_exit_codes() {
    assert_eq!(cli_dispatch(["synthrad"]), 2);
    assert_eq!(cli_dispatch(["synthrad", "--help"]), 0);
    assert_eq!(cli_dispatch(["synthrad", "--version"]), 0);
    assert_eq!(cli_dispatch(["synthrad", "frobnicate"]), 2);
    assert_eq!(cli_dispatch(["synthrad", "phantom-gen", "--n", "x", "--size", "16"]), 2);
    assert_eq!(cli_dispatch(["synthrad", "--set", "no.such.key=1", "phantom-gen", "--n", "1", "--size", "16"]), 2);
    assert_eq!(cli_dispatch(["synthrad", "--set", "diffusion.lr", "phantom-gen", "--n", "1", "--size", "16"]), 2);
}

#[test]
fn phantom_gen_is_deterministic() {
    let w = Work::new();
    for out in ["a", "b"] {
        let out = w.p(out);
        assert_eq!(w.run(&["phantom-gen", "--n", "12", "--size", "16", "--seed", "3", "--out", s(&out)]), 0);
    }
    let files = |d: &str| {
        let mut v: Vec<(String, Vec<u8>)> = std::fs::read_dir(w.p(d))
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
            })
            .collect();
        v.sort();
        v
    };
    assert_eq!(files("a").len(), 13);
    assert_eq!(files("a"), files("b"));
    let ledger = w.ledger();
    assert_eq!(ledger.len(), 2);
    assert_eq!(ledger[0].outputs_digest.len(), 64);
}

#[test]
fn triage_counts_reach_the_ledger() {
    let w = Work::new();
    let gen = w.p("gen");
    assert_eq!(w.run(&["phantom-gen", "--n", "100", "--size", "16", "--seed", "5", "--out", s(&gen)]), 0);
    let verdicts: String = (0..100)
        .map(|i| {
            if i % 5 < 2 {
                format!("{{\"source_id\":\"phantom-{i:05}\",\"decision\":\"reject\",\"reason\":\"implausible anatomy\"}}\n")
            } else {
                format!("{{\"source_id\":\"phantom-{i:05}\",\"decision\":\"accept\"}}\n")
            }
        })
        .collect();
    let vpath = w.p("verdicts.jsonl");
    std::fs::write(&vpath, verdicts).unwrap();
    let manifest = gen.join("manifest.jsonl");
    assert_eq!(w.run(&["triage-apply", "--manifest", s(&manifest), "--verdicts", s(&vpath)]), 0);

    let m = DatasetManifest::load(&manifest).unwrap();
    assert_eq!((m.count(TriageStatus::Accepted), m.count(TriageStatus::Rejected)), (60, 40));
    let counts = w.ledger().last().unwrap().counts.unwrap();
    assert_eq!((counts.generated, counts.accepted, counts.rejected), (100, 60, 40));

    // An unknown id fails the whole batch and leaves the manifest alone.
    let before = std::fs::read(&manifest).unwrap();
    std::fs::write(&vpath, "{\"source_id\":\"ghost\",\"decision\":\"accept\"}\n").unwrap();
    assert_eq!(w.run(&["triage-apply", "--manifest", s(&manifest), "--verdicts", s(&vpath)]), 1);
    assert_eq!(std::fs::read(&manifest).unwrap(), before);
}

#[test]
fn held_lock_blocks_stages() {
    let w = Work::new();
    std::fs::create_dir_all(w.p("out")).unwrap();
    std::fs::write(w.p("out").join(LOCK_FILE), "train 1\n").unwrap();
    assert_eq!(w.run(&["phantom-gen", "--n", "2", "--size", "16"]), 1);
    std::fs::remove_file(w.p("out").join(LOCK_FILE)).unwrap();
    assert_eq!(w.run(&["phantom-gen", "--n", "2", "--size", "16"]), 0);
    assert!(!w.p("out").join(LOCK_FILE).exists());
}

#[test]
fn end_to_end_small_run() {
    let w = Work::new();
    let raw = w.p("raw");
    let processed = w.p("processed");
    assert_eq!(w.run(&["phantom-gen", "--n", "40", "--size", "24", "--seed", "1", "--out", s(&raw)]), 0);
    assert_eq!(
        w.run(&["preprocess", "--manifest", s(&raw.join("manifest.jsonl")), "--out", s(&processed)]),
        0
    );
    let real = processed.join("manifest.jsonl");
    let pm = DatasetManifest::load(&real).unwrap();
    assert_eq!(pm.entries.len(), 40);
    assert_eq!((pm.load_image(&pm.entries[0]).unwrap().width()), 16);

    assert_eq!(w.run(&["split", "--manifest", s(&real)]), 0);
    let val: Vec<Value> = jsonl::read(processed.join("val_manifest.jsonl")).unwrap();
    assert_eq!(val.len(), 6);

    assert_eq!(w.run(&["train", "--manifest", s(&real)]), 0);
    assert!(w.p("ckpt/ckpt_0003.bin").exists());
    // A second run refuses to mix logs.
    assert_eq!(w.run(&["train", "--manifest", s(&real)]), 1);

    // Budget of zero pauses before any work; resuming matches an uninterrupted run.
    let resumed = w.p("samples/resumed");
    let args = |out: &Path, extra: &[&str]| {
        let mut v = vec!["sample", "--checkpoint", "3", "--count", "40", "--out"];
        v.push(Box::leak(out.to_str().unwrap().to_string().into_boxed_str()));
        v.extend_from_slice(extra);
        v.into_iter().map(String::from).collect::<Vec<_>>()
    };
    let run_owned = |a: Vec<String>| w.run(&a.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(run_owned(args(&resumed, &["--budget-secs", "0"])), 0);
    let cursor: SampleCursor =
        serde_json::from_str(&std::fs::read_to_string(resumed.join(CURSOR_FILE)).unwrap()).unwrap();
    assert_eq!((cursor.next_index, cursor.count), (0, 40));
    assert_eq!(run_owned(args(&resumed, &[])), 0);
    let straight = w.p("samples/straight");
    assert_eq!(run_owned(args(&straight, &[])), 0);
    for i in [0, 17, 39] {
        let name = format!("synth-c0003-{i:06}.png");
        assert_eq!(std::fs::read(resumed.join(&name)).unwrap(), std::fs::read(straight.join(&name)).unwrap());
    }
    assert_eq!(
        std::fs::read(resumed.join("manifest.jsonl")).unwrap(),
        std::fs::read(straight.join("manifest.jsonl")).unwrap()
    );

    let fid_csv = w.p("out/fid.csv");
    assert_eq!(w.run(&["fid-curve", "--real", s(&real), "--n-synth", "20", "--out", s(&fid_csv)]), 0);
    let fid = std::fs::read_to_string(&fid_csv).unwrap();
    assert_eq!(fid.lines().count(), 4);
    assert!(fid.starts_with("checkpoint_index,step,fid\n1,10,"));

    let feats = w.p("out/features.csv");
    assert_eq!(w.run(&["embed", "--manifest", s(&real), "--out", s(&feats)]), 0);
    assert_eq!(std::fs::read_to_string(&feats).unwrap().lines().count(), 41);

    let synth = straight.join("manifest.jsonl");
    let audit = w.p("out/audit");
    assert_eq!(w.run(&["audit", "--real", s(&real), "--synth", s(&synth), "--k", "5", "--out", s(&audit)]), 0);
    assert_eq!(std::fs::read_to_string(audit.join("review_index.jsonl")).unwrap().lines().count(), 5);

    let mut pools = Vec::new();
    for c in ["1", "2"] {
        let out = w.p(&format!("samples/c{c}"));
        assert_eq!(w.run(&["sample", "--checkpoint", c, "--count", "10", "--out", s(&out)]), 0);
        pools.push(out.join("manifest.jsonl"));
    }
    let study = w.p("out/study");
    assert_eq!(
        w.run(&[
            "quartets", "--real", s(&real), "--synth", s(&pools[0]), s(&pools[1]), s(&synth), "--out", s(&study)
        ]),
        0
    );
    let (public, key) = (study.join("quartets.jsonl"), study.join("quartets_key.jsonl"));
    let quartets = load_quartets(&public, &key).unwrap();
    assert_eq!(quartets.len(), 5);

    let responses: Vec<ResponseRecord> = ["r1", "r2", "r3"]
        .iter()
        .enumerate()
        .flat_map(|(r, rater)| {
            quartets.iter().enumerate().map(move |(i, q)| ResponseRecord {
                rater_id: rater.to_string(),
                quartet_id: q.quartet_id.clone(),
                chosen_slot: ((i + r) % 4 + 1) as u8,
                ratings: [((i + r) % 4 + 1) as u8, 2, 3, (r % 4 + 1) as u8],
                timestamp: "2026-01-01T00:00:00Z".into(),
            })
        })
        .collect();
    let rpath = w.p("responses.jsonl");
    jsonl::write(&rpath, &responses).unwrap();
    let analysis = w.p("out/analysis");
    assert_eq!(
        w.run(&["analyze", "--responses", s(&rpath), "--quartets", s(&public), "--key", s(&key), "--out", s(&analysis)]),
        0
    );
    let report: Value = serde_json::from_str(&std::fs::read_to_string(analysis.join("report.json")).unwrap()).unwrap();
    for field in ["accuracy", "kappa", "tests", "group_means", "rating_distribution"] {
        assert!(report.get(field).is_some(), "report lacks {field}");
    }
    assert_eq!(report["tests"].as_array().unwrap().len(), 3);
    assert_eq!(std::fs::read_to_string(analysis.join("ratings.csv")).unwrap().lines().count(), 17);

    let stages: Vec<String> = w.ledger().into_iter().map(|r| r.stage).collect();
    for expected in ["phantom-gen", "preprocess", "split", "train", "sample", "fid-curve", "embed", "audit", "quartets", "analyze"] {
        assert!(stages.iter().any(|s| s == expected), "ledger lacks {expected}");
    }
}
