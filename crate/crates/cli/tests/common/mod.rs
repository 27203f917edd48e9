#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dmlm_core::corpus::synthetic::{random_projective_sentence, red_figures};
use dmlm_core::ParsedSentence;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn dmlm(args: &[&str]) -> Output {
    dmlm_env(args, &[])
}

pub fn dmlm_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_dmlm"));
    cmd.args(args).env_remove("DMLM_THREADS");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("dmlm runs")
}

pub fn ok(args: &[&str]) -> Output {
    let out = dmlm(args);
    assert!(
        out.status.success(),
        "dmlm {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn to_conllu(sentences: &[ParsedSentence]) -> String {
    let mut text = String::new();
    for s in sentences {
        for t in s.tokens() {
            text.push_str(&format!("{}\t{}\t_\t_\t_\t_\t{}\t_\t_\t_\n", t.position, t.surface, t.head));
        }
        text.push('\n');
    }
    text
}

/// The example sentence followed by `n` random projective sentences.
pub fn fixture_sentences(n: usize, seed: u64) -> Vec<ParsedSentence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![red_figures()];
    for _ in 0..n {
        let len = rng.gen_range(3..=9);
        out.push(random_projective_sentence(&mut rng, len, 25));
    }
    out
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// A prepared fixture dataset inside `dir`.
pub fn prepared(dir: &Path) -> PathBuf {
    let conllu = dir.join("toy.conllu");
    std::fs::write(&conllu, to_conllu(&fixture_sentences(40, 3))).unwrap();
    let data = dir.join("toy.data");
    ok(&["prepare", "--conllu", path_str(&conllu), "--out", path_str(&data)]);
    data
}

/// Trains a small model; `extra` is appended to the train flags.
pub fn train(dir: &Path, data: &Path, name: &str, extra: &[&str]) -> (PathBuf, Output) {
    let out = dir.join(name);
    let mut args = vec![
        "train",
        "--data",
        path_str(data),
        "--out",
        path_str(&out),
        "--hidden",
        "16",
        "--layers",
        "1",
        "--epochs",
        "2",
        "--batch-size",
        "8",
    ];
    args.extend_from_slice(extra);
    let o = dmlm(&args);
    (out, o)
}

pub fn log_rows(ckpt: &Path) -> Vec<serde_json::Value> {
    let mut name = ckpt.file_name().unwrap().to_os_string();
    name.push(".log.jsonl");
    std::fs::read_to_string(ckpt.with_file_name(name))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}
