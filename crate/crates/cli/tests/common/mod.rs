#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

pub const QUICK: [&str; 6] = ["--set", "model=tiny", "--set", "epochs=2", "--set", "optimizer=adam"];

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_domainsum"))
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

pub fn ok(args: &[&str]) {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

pub fn pipeline(root: &Path) {
    let p = |rel: &str| root.join(rel);
    ok(&["synth", "--spec", "demo", "--seed", "7", "--docs", "30", "--features-dim", "8", "--out", s(&p("synth"))]);
    ok(&["ingest", "--corpus", s(&p("synth/corpus.jsonl")), "--out", s(&p("ingest"))]);
    ok(&["stats", "--corpus", s(&p("ingest/corpus.jsonl")), "--out", s(&p("stats"))]);
    ok(&["label", "--corpus", s(&p("ingest/corpus.jsonl")), "--out", s(&p("label"))]);
    let corpus = p("label/corpus.jsonl");
    let c = s(&corpus);
    for (name, extra) in [
        ("joint", vec!["--strategy", "joint"]),
        ("tag", vec!["--strategy", "tag", "--relabel-prob", "0.2"]),
        ("meta", vec!["--strategy", "meta", "--gamma", "0.5", "--inner-step", "0.05"]),
        ("meta2", vec!["--strategy", "meta", "--second-order", "--set", "epochs=1"]),
        ("pre", vec!["--strategy", "pretrained", "--features", s(&p("synth/features.jsonl"))]),
    ] {
        let out = p(&format!("train-{name}"));
        let mut args = vec!["train", "--corpus", c, "--seed", "7", "--out", s(&out)];
        args.extend(QUICK);
        args.extend(extra);
        ok(&args);
    }
    ok(&["eval", "--corpus", c, "--model", s(&p("train-tag/model.ckpt")), "--cross", s(&p("synth/corpus.jsonl")), "--out", s(&p("eval-tag"))]);
    ok(&[
        "eval", "--corpus", c, "--model", s(&p("train-pre/model.ckpt")), "--features", s(&p("synth/features.jsonl")),
        "--workers", "2", "--out", s(&p("eval-pre")),
    ]);
    let (mdir, sdir) = (p("matrix"), p("sweep"));
    let mut m = vec!["matrix", "--corpus", c, "--seed", "7", "--out", s(&mdir)];
    m.extend(QUICK);
    ok(&m);
    let mut g = vec!["sweep-gamma", "--corpus", c, "--seed", "7", "--gamma", "0.25,1", "--out", s(&sdir)];
    g.extend(QUICK);
    ok(&g);
    ok(&["report", "--corpus", c, "--seed", "7", "--model", s(&p("train-joint/model.ckpt")), "--out", s(&p("report"))]);
}

pub fn digests(root: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                let hash = Sha256::digest(std::fs::read(&path).unwrap());
                out.insert(rel, hash.iter().map(|b| format!("{b:02x}")).collect());
            }
        }
    }
    out
}

