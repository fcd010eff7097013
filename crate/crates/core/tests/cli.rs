use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};
use wisa_lab::synthphys::{read_manifest, Split};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wisa-lab")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn gen(dir: &Path, count: usize, seed: u64) {
    let o = run(&[
        "gen-data",
        "--out",
        dir.to_str().unwrap(),
        "--count",
        &count.to_string(),
        "--seed",
        &seed.to_string(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for sub in ["", "clips", "annotations"] {
        for e in std::fs::read_dir(dir.join(sub)).unwrap() {
            let p = e.unwrap().path();
            if p.is_file() {
                out.insert(p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn help_lists_commands_and_flags() {
    let o = run(&["--help"]);
    assert!(o.status.success());
    let text = stdout(&o);
    for cmd in ["gen-data", "train", "evaluate", "sample", "classify", "inspect-attn", "validate", "stats"] {
        assert!(text.contains(cmd), "missing {cmd}");
    }
    let text = stdout(&run(&["train", "--help"]));
    for flag in ["--config", "--seed", "--data", "--out", "--steps", "--lambda", "--perturb-prob", "--lr", "--gate"] {
        assert!(text.contains(flag), "missing {flag}");
    }
}

#[test]
fn gen_data_is_deterministic_and_valid() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    gen(&a, 12, 3);
    gen(&b, 12, 3);
    gen(&c, 12, 4);
    assert_eq!(files(&a), files(&b));
    assert_ne!(files(&a)["manifest.json"], files(&c)["manifest.json"]);

    let mut args = vec!["validate".to_string()];
    for e in std::fs::read_dir(a.join("annotations")).unwrap() {
        args.push(e.unwrap().path().display().to_string());
    }
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    let o = run(&args);
    assert!(o.status.success(), "{}", stdout(&o));
    assert_eq!(stdout(&o).lines().last(), Some("0 violations"));
    assert_eq!(stdout(&o).lines().count(), 13);
}

#[test]
fn stats_agree_with_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), 20, 1);
    let o = run(&["stats", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let m = read_manifest(dir.path()).unwrap();
    assert!(text.lines().any(|l| l == "clips 20"));
    let train = m.entries.iter().filter(|e| e.split == Split::Train).count();
    assert!(text.lines().any(|l| l == format!("split train {train}")));
    assert!(text.lines().any(|l| l == format!("split val {}", 20 - train)));
    let mut kinds: BTreeMap<&str, usize> = BTreeMap::new();
    for e in &m.entries {
        *kinds.entry(e.kind.name()).or_default() += 1;
    }
    for (k, c) in kinds {
        assert!(text.lines().any(|l| l.starts_with(&format!("kind {k} {c} "))), "{k} {c}\n{text}");
    }
    let branch_total: usize = text
        .lines()
        .filter(|l| l.starts_with("branch "))
        .map(|l| l.split_whitespace().nth(2).unwrap().parse::<usize>().unwrap())
        .sum();
    assert_eq!(branch_total, 20);
}

#[test]
fn validate_reports_failures() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"caption\": 3}").unwrap();
    let o = run(&["validate", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("bad.json"));

    let o = run(&["validate", "--strict", "--lenient", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_errors_name_every_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"train": {"steps": "many", "bogus": 1}, "model": {"model_dim": -4}}"#).unwrap();
    let o = run(&["gen-data", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("d").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    for path in ["train.steps", "bogus", "model.model_dim"] {
        assert!(err.contains(path), "missing {path} in {err}");
    }
    assert!(!dir.path().join("d").exists());
}

#[test]
fn missing_inputs_are_io_errors() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["stats", dir.path().join("nowhere").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).starts_with("error: "));
}

#[test]
fn train_then_classify_and_sample() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let cfg = dir.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{
  "seed": 2,
  "data": {"count": 10},
  "model": {"n_blocks": 1, "model_dim": 16, "n_heads": 2},
  "train": {"steps": 2, "batch_size": 2, "val_every": 2, "val_limit": 2},
  "eval": {"limit": 2}
}"#,
    )
    .unwrap();
    let c = cfg.to_str().unwrap();
    let o = run(&["gen-data", "--config", c, "--out", data.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let runs = dir.path().join("run");
    let o = run(&["train", "--config", c, "--data", data.to_str().unwrap(), "--out", runs.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let ckpt = runs.join("best.ckpt");
    for f in ["metrics.jsonl", "val.jsonl", "best.ckpt", "final.ckpt", "config.json", "eval.json"] {
        assert!(runs.join(f).exists(), "{f}");
    }

    let m = read_manifest(&data).unwrap();
    let id = &m.entries[0].id;
    let clip = std::fs::read_dir(data.join("clips"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.file_stem().unwrap().to_str() == Some(id.as_str()))
        .unwrap();
    let ann = data.join("annotations").join(format!("{id}.json"));
    let o = run(&["classify", "--checkpoint", ckpt.to_str().unwrap(), "--clip", clip.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let scores: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(scores.is_array() || scores.is_object());

    let out = dir.path().join("gen.clip");
    let o = run(&[
        "sample",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--prompt",
        ann.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--steps",
        "3",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.exists());

    let o = run(&[
        "inspect-attn",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--clip-id",
        id,
        "--out",
        dir.path().join("attn").to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("attn/attention.pgm").exists());
}
