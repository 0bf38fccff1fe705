//! The binary end to end on a tiny configuration.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_perimeter-guard"))
        .args(args)
        .env_remove("PERIMETER_GUARD_SEED")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = bin(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// generate → train → eval → sweep → grid, all files returned by name.
fn pipeline(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let data = dir.join("data.bin");
    let ckpt_dir = dir.join("ckpt");
    ok(&[
        "generate", "--out", s(&data), "--seed", "5", "--max-size", "2", "--count", "40",
        "--shard-size", "20",
    ]);
    ok(&[
        "train", "--data", s(&data), "--out-dir", s(&ckpt_dir), "--seed", "5", "--iterations",
        "12", "--batch-size", "16", "--hidden", "8", "--feature", "8", "--decoded", "8",
        "--checkpoint-every", "6", "--log-every", "4",
    ]);
    let ckpt = ckpt_dir.join("final.ckpt");
    ok(&[
        "eval", "--checkpoint", s(&ckpt), "--out", s(&dir.join("eval.csv")), "--sizes", "1,2",
        "--games", "3",
    ]);
    fs::copy(&ckpt, ckpt_dir.join("policy_w1_fov360.ckpt")).unwrap();
    ok(&[
        "sweep", "--checkpoint-dir", s(&ckpt_dir), "--widths", "1", "--out",
        s(&dir.join("sweep.csv")), "--sizes", "2", "--games", "2",
    ]);
    ok(&[
        "grid", "--checkpoint", s(&ckpt), "--kind", "message", "--resolution", "9", "--out",
        s(&dir.join("grid.csv")), "--team-size", "2",
    ]);
    let mut files: Vec<_> = walk(dir)
        .into_iter()
        .map(|p| {
            let name = p.strip_prefix(dir).unwrap().display().to_string();
            (name, fs::read(&p).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

#[test]
fn pipeline_is_byte_deterministic() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let fa = pipeline(a.path());
    let fb = pipeline(b.path());
    let names: Vec<&str> = fa.iter().map(|(n, _)| n.as_str()).collect();
    for expected in [
        "data.bin",
        "data.bin.config",
        "ckpt/final.ckpt",
        "ckpt/checkpoint_0000006.ckpt",
        "ckpt/metrics.csv",
        "ckpt/train.config",
        "eval.csv",
        "sweep.csv",
        "grid.csv",
    ] {
        assert!(names.contains(&expected), "missing {expected} in {names:?}");
    }
    assert_eq!(fa.len(), fb.len());
    for ((na, da), (nb, db)) in fa.iter().zip(&fb) {
        assert_eq!(na, nb);
        // resolved configs record the paths they were given
        if !na.ends_with(".config") {
            assert!(da == db, "{na} differs between runs");
        }
    }
}

#[test]
fn csv_headers_are_stable() {
    let dir = TempDir::new().unwrap();
    pipeline(dir.path());
    let head = |f: &str| {
        fs::read_to_string(dir.path().join(f))
            .unwrap()
            .lines()
            .next()
            .unwrap()
            .to_string()
    };
    assert_eq!(head("eval.csv"), "policy,fov,width,team_size,game_seed,captures,breaches,duration");
    assert_eq!(head("sweep.csv"), "policy,fov,width,team_size,game_seed,captures,breaches,duration");
    assert_eq!(head("grid.csv"), "x,y,value,visible");
    assert_eq!(head("ckpt/metrics.csv"), "iteration,lr,loss,masked_accuracy,val_accuracy");
    let eval = fs::read_to_string(dir.path().join("eval.csv")).unwrap();
    // expert and pin rows for sizes 1 and 2, three games each
    assert_eq!(eval.lines().count(), 1 + 2 * 2 * 3);
    let grid = fs::read_to_string(dir.path().join("grid.csv")).unwrap();
    assert_eq!(grid.lines().count(), 1 + 81);
}

#[test]
fn config_file_is_read_and_flags_win() {
    let dir = TempDir::new().unwrap();
    let conf = dir.path().join("gen.conf");
    let data = dir.path().join("d.bin");
    fs::write(&conf, format!("# tiny\nout = {}\nmax-size = 1\ncount = 30\nfov = 180\n", s(&data))).unwrap();
    let text = ok(&["generate", "--config", s(&conf), "--count", "10"]);
    assert!(text.contains("examples: 10"), "{text}");
    let resolved = fs::read_to_string(dir.path().join("d.bin.config")).unwrap();
    assert!(resolved.contains("count = 10"), "{resolved}");
    assert!(resolved.contains("fov = 180"), "{resolved}");
}

#[test]
fn seed_falls_back_to_the_environment() {
    let dir = TempDir::new().unwrap();
    let run = |name: &str, env: Option<&str>| {
        let out = dir.path().join(name);
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_perimeter-guard"));
        cmd.args(["generate", "--out", s(&out), "--max-size", "1", "--count", "5"]);
        cmd.env_remove("PERIMETER_GUARD_SEED");
        if let Some(v) = env {
            cmd.env("PERIMETER_GUARD_SEED", v);
        }
        assert!(cmd.output().unwrap().status.success());
        fs::read(out).unwrap()
    };
    let env7 = run("a.bin", Some("7"));
    let flag7 = {
        let out = dir.path().join("b.bin");
        ok(&["generate", "--out", s(&out), "--max-size", "1", "--count", "5", "--seed", "7"]);
        fs::read(out).unwrap()
    };
    let default = run("c.bin", None);
    assert_eq!(env7, flag7);
    assert_ne!(env7, default);
}

#[test]
fn exit_codes_follow_the_error_kind() {
    let dir = TempDir::new().unwrap();
    let code = |args: &[&str]| bin(args).status.code().unwrap();

    // bad value and missing required key are configuration errors
    assert_eq!(code(&["generate", "--out", s(&dir.path().join("x")), "--fov", "90"]), 2);
    assert_eq!(code(&["generate"]), 2);
    // missing input
    let missing = dir.path().join("nope.bin");
    assert_eq!(code(&["train", "--data", s(&missing), "--out-dir", s(dir.path())]), 3);
    // damaged input
    let junk = dir.path().join("junk.bin");
    fs::write(&junk, b"not a dataset").unwrap();
    assert_eq!(code(&["train", "--data", s(&junk), "--out-dir", s(dir.path())]), 4);
    assert_eq!(code(&["eval", "--checkpoint", s(&junk)]), 4);
    // unwritable output
    let blocker = dir.path().join("file");
    fs::write(&blocker, b"").unwrap();
    let under_file = blocker.join("out.bin");
    assert_eq!(code(&["generate", "--out", s(&under_file), "--max-size", "1", "--count", "2"]), 5);

    let out = bin(&["generate", "--out", s(&dir.path().join("y")), "--fov", "90"]);
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.starts_with("perimeter-guard generate:"), "{err}");
}
