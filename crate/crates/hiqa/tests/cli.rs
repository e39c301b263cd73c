use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use hiqa_core::dataset::{make_synthetic_corpus, AnnotationRecord, DatasetConfig, SyntheticConfig};
use hiqa_core::metrics::{plcc, srcc, PairedSeries};
use serde_json::Value;
use tempfile::TempDir;

fn hiqa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hiqa")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SMALL: [&str; 8] = [
    "--set",
    "data.synthetic_count=12",
    "--set",
    "data.heldout_count=6",
    "--set",
    "rollout.batch_size=2",
    "--set",
    "train.log_every=0",
];

fn synthetic_records(n: usize) -> Vec<AnnotationRecord> {
    make_synthetic_corpus(n, 4, &SyntheticConfig::default(), &DatasetConfig::default())
        .unwrap()
        .samples
        .into_iter()
        .flat_map(|s| s.raters)
        .collect()
}

fn write_jsonl(path: &Path, records: &[AnnotationRecord]) {
    let text: String = records
        .iter()
        .map(|r| serde_json::to_string(r).unwrap() + "\n")
        .collect();
    fs::write(path, text).unwrap();
}

#[test]
fn validate_exit_codes() {
    let dir = TempDir::new().unwrap();
    let clean = dir.path().join("clean.jsonl");
    write_jsonl(&clean, &synthetic_records(3));
    let o = hiqa(&["validate", p(&clean)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("accepted: 9"));

    let bad = dir.path().join("bad.jsonl");
    let mut text = fs::read_to_string(&clean).unwrap();
    text = text.replacen('\n', "\n{\"image_id\": \"x\"}\n", 1);
    fs::write(&bad, text).unwrap();
    let o = hiqa(&["validate", p(&bad)]);
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).contains("line 2:"), "{}", stdout(&o));

    let o = hiqa(&["validate", p(&dir.path().join("missing.jsonl"))]);
    assert_eq!(code(&o), 2);
}

#[test]
fn stats_matches_metric_oracle() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("data.jsonl");
    let records = synthetic_records(30);
    write_jsonl(&data, &records);
    let csv = dir.path().join("cells.csv");
    let o = hiqa(&["stats", p(&data), "--json", "--csv", p(&csv)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let xs: Vec<f64> = records.iter().map(|r| r.good_scale).collect();
    let ys: Vec<f64> = records.iter().map(|r| r.overall_quality).collect();
    let s = PairedSeries::new(&xs, &ys).unwrap();
    let cell = &report["cells"][0];
    assert_eq!(cell["scale"], "good");
    assert_eq!(cell["target"], "overall");
    assert_eq!(cell["plcc"].as_f64().unwrap(), plcc(&s).unwrap());
    assert_eq!(cell["srcc"].as_f64().unwrap(), srcc(&s).unwrap());
    assert_eq!(fs::read_to_string(&csv).unwrap().lines().count(), 5);

    let text = hiqa(&["stats", p(&data)]);
    assert!(stdout(&text).contains("good_scale"));
}

#[test]
fn stats_without_samples_fails() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("empty.jsonl");
    fs::write(&data, "not json\n\n").unwrap();
    let o = hiqa(&["stats", p(&data)]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("no samples"));
}

#[test]
fn rouge_and_reward_commands() {
    let dir = TempDir::new().unwrap();
    let reference = dir.path().join("ref.txt");
    let candidate = dir.path().join("cand.txt");
    fs::write(&reference, "The sky is blurry, the sky is dark.").unwrap();
    fs::write(&candidate, "dark sky").unwrap();
    let o = hiqa(&["rouge", p(&reference), p(&candidate)]);
    assert_eq!(code(&o), 0);
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    // matched: sky 1, dark 1 of 8 reference tokens
    assert!((v["score"].as_f64().unwrap() - 0.25).abs() < 1e-15);

    let transcript = dir.path().join("t.txt");
    let caption_only = dir.path().join("c.txt");
    fs::write(
        &transcript,
        "<caption>the sky is blurry</caption><think>the sky is dark</think><answer>3.5</answer>",
    )
    .unwrap();
    fs::write(&caption_only, "<think>dark</think><answer>3.5</answer>").unwrap();
    let o = hiqa(&[
        "reward",
        "--transcript",
        p(&transcript),
        "--reference",
        p(&reference),
        "--truth",
        "3.5",
        "--caption-only",
        p(&caption_only),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["well_formed"], true);
    for (k, want) in [("reasoning", 1.0), ("prediction", 1.0), ("self_consistency", 1.0), ("format", 0.5), ("total", 3.5)] {
        assert!((v[k].as_f64().unwrap() - want).abs() < 1e-12, "{k}: {v}");
    }
}

#[test]
fn config_failures_exit_three() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[grpo]\nclip_epsilonn = 0.3\n").unwrap();
    let out = dir.path().join("run");
    let o = hiqa(&["train", "--config", p(&cfg), "--out", p(&out)]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("clip_epsilonn"), "{}", stderr(&o));

    let o = hiqa(&["train", "--out", p(&out), "--set", "grpo.clip_epsilon=-1"]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("clip_epsilon"));

    let o = hiqa(&["train", "--out", p(&out), "--set", "grpo.group_size=\"four\""]);
    assert_eq!(code(&o), 3);

    fs::write(&cfg, "seed = = 3\n").unwrap();
    assert_eq!(code(&hiqa(&["train", "--config", p(&cfg), "--out", p(&out)])), 3);
    assert_eq!(code(&hiqa(&["train", "--no-such-flag"])), 3);
    assert_eq!(code(&hiqa(&["train"])), 3);
    assert_eq!(code(&hiqa(&["--help"])), 0);
}

#[test]
fn zero_iterations_keep_the_initial_snapshot() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("run");
    let mut args = vec!["train", "--out", p(&out), "--set", "iterations=0"];
    args.extend(SMALL);
    let o = hiqa(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["config.toml", "diagnostics.jsonl", "final.bin", "init.bin"] {
        assert!(out.join(f).exists(), "{f}");
    }
    assert_eq!(fs::read(out.join("final.bin")).unwrap(), fs::read(out.join("init.bin")).unwrap());
    assert!(fs::read_to_string(out.join("diagnostics.jsonl")).unwrap().is_empty());
}

#[test]
fn reruns_from_echoed_config_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let mut args = vec!["train", "--out", p(&a), "--set", "iterations=3", "--set", "train.trace=true"];
    args.extend(SMALL);
    assert_eq!(code(&hiqa(&args)), 0);
    let echoed = a.join("config.toml");
    let o = hiqa(&["train", "--config", p(&echoed), "--out", p(&b)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["config.toml", "diagnostics.jsonl", "trace.jsonl", "final.bin"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_eq!(fs::read_to_string(a.join("diagnostics.jsonl")).unwrap().lines().count(), 3);

    let snap = a.join("final.bin");
    let (ea, eb) = (dir.path().join("ea"), dir.path().join("eb"));
    for e in [&ea, &eb] {
        let o = hiqa(&["eval", "--config", p(&echoed), "--snapshot", p(&snap), "--out", p(e)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    for f in ["predictions.jsonl", "metrics.json"] {
        assert_eq!(fs::read(ea.join(f)).unwrap(), fs::read(eb.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn stage_two_records_carry_no_image_features() {
    let dir = TempDir::new().unwrap();
    let run = dir.path().join("run");
    let mut args = vec!["train", "--out", p(&run), "--set", "iterations=1", "--set", "train.trace=true"];
    args.extend(SMALL);
    assert_eq!(code(&hiqa(&args)), 0);
    let trace = fs::read_to_string(run.join("trace.jsonl")).unwrap();
    let mut checked = 0;
    for line in trace.lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        assert!(v["episode"]["stage1"]["group"]["context"]["features"].is_array());
        for g in v["episode"]["stage2"].as_array().unwrap() {
            let ctx = &g["group"]["context"];
            assert_eq!(ctx["stage"], "caption");
            assert!(ctx.get("features").is_none());
            assert!(!serde_json::to_string(ctx).unwrap().contains("features"));
            checked += 1;
        }
    }
    assert!(checked > 0);

    let ev = dir.path().join("eval");
    let o = hiqa(&[
        "eval", "--config", p(&run.join("config.toml")), "--snapshot", p(&run.join("final.bin")), "--out", p(&ev),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for line in fs::read_to_string(ev.join("predictions.jsonl")).unwrap().lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        assert!(!serde_json::to_string(&v["stage2_context"]).unwrap().contains("features"));
        assert!(v["stage2_context"]["caption_tokens"].is_array());
    }
}

#[test]
fn eval_rejects_mismatched_snapshots() {
    let dir = TempDir::new().unwrap();
    let run = dir.path().join("run");
    let mut args = vec!["train", "--out", p(&run), "--set", "iterations=0"];
    args.extend(SMALL);
    assert_eq!(code(&hiqa(&args)), 0);
    let snap = run.join("final.bin");
    let o = hiqa(&["eval", "--snapshot", p(&snap), "--set", "rollout.max_len=40"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    let junk = dir.path().join("junk.bin");
    fs::write(&junk, b"HIQA").unwrap();
    assert_eq!(code(&hiqa(&["eval", "--snapshot", p(&junk)])), 3);
    assert_eq!(code(&hiqa(&["eval", "--snapshot", p(&dir.path().join("none.bin"))])), 2);
}

#[test]
fn perfect_predictions_score_one() {
    let dir = TempDir::new().unwrap();
    let preds = dir.path().join("preds.jsonl");
    let lines: String = (0..20)
        .map(|i| {
            let gt = 1.0 + 0.2 * i as f64;
            format!(
                "{{\"sample_id\":\"s{i}\",\"ground_truth\":{gt},\"predicted\":{},\"caption_only_predicted\":{},\"candidate_text\":\"sharp clean\",\"reference_text\":\"sharp clean\"}}\n",
                2.0 * gt + 1.0,
                gt.ln()
            )
        })
        .collect();
    fs::write(&preds, lines).unwrap();
    let csv = dir.path().join("m.csv");
    let o = hiqa(&["eval", "--predictions", p(&preds), "--json", "--csv", p(&csv)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!((m["image"]["plcc"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert!((m["image"]["srcc"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert!((m["caption_only"]["srcc"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(m["rouge1"].as_f64().unwrap(), 1.0);
    assert!(fs::read_to_string(&csv).unwrap().starts_with("condition,plcc,srcc"));

    fs::write(&preds, "{\"sample_id\": 3}\n").unwrap();
    assert_eq!(code(&hiqa(&["eval", "--predictions", p(&preds)])), 1);
}
