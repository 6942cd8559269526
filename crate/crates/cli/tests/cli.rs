use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn posrec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_posrec"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path) {
    let o = posrec(&[
        "synth",
        "--m",
        "15",
        "--n",
        "120",
        "--len-max",
        "6",
        "--test-n",
        "20",
        "--out-dir",
        path(dir),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn help_for_every_verb() {
    for verb in [
        "check-encodings",
        "heatmap",
        "preprocess",
        "synth",
        "train",
        "eval",
        "sweep-encodings",
        "ablate-anchors",
        "sweep-lambda2",
    ] {
        let o = posrec(&[verb, "--help"]);
        assert_eq!(code(&o), 0, "{verb}");
        assert!(String::from_utf8_lossy(&o.stdout).contains("--out-dir"), "{verb}");
    }
}

#[test]
fn check_encodings_table() {
    let dir = tempfile::tempdir().unwrap();
    let o = posrec(&["check-encodings", "--out-dir", path(dir.path())]);
    assert_eq!(code(&o), 0);
    let csv = fs::read_to_string(dir.path().join("awareness.csv")).unwrap();
    assert!(csv.contains("DPE,true,true,"));
    assert!(csv.contains("SPE,true,false,"));
    assert!(csv.contains("ASPE,false,false,"));
    assert!(String::from_utf8_lossy(&o.stdout).contains("manifest_hash: "));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.tsv");
    let o = posrec(&["train", "--data", path(&missing), "--out-dir", path(dir.path())]);
    assert_eq!(code(&o), 2);

    assert_eq!(code(&posrec(&["train", "--data", "x", "--no-such-flag", "1"])), 1);
    assert_eq!(code(&posrec(&["train"])), 1);
    assert_eq!(
        code(&posrec(&["synth", "--m", "ten", "--out-dir", path(dir.path())])),
        1
    );
    assert_eq!(code(&posrec(&["synth", "--m", "3", "--out-dir", path(dir.path())])), 2);

    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "unknown-key = 1\n").unwrap();
    assert_eq!(
        code(&posrec(&[
            "synth",
            "--config",
            path(&cfg),
            "--out-dir",
            path(dir.path())
        ])),
        1
    );
}

#[test]
fn config_file_then_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# synthetic\nm = 12\nn = 40\n").unwrap();
    let out = dir.path().join("o");
    let o = posrec(&["synth", "--config", path(&cfg), "--n", "25", "--out-dir", path(&out)]);
    assert_eq!(code(&o), 0);
    let m = fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert!(m.contains("opt.m = 12\n"));
    assert!(m.contains("opt.n = 25\n"));
    assert!(m.contains("opt.seed = 42\n"));
}

#[test]
fn synth_is_byte_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    synth(a.path());
    synth(b.path());
    for f in ["sessions.tsv", "train.tsv", "test.tsv", "sessions.tsv.manifest"] {
        assert_eq!(
            fs::read(a.path().join(f)).unwrap(),
            fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
}

fn train(data: &Path, out: &Path, threads: &str) -> Output {
    posrec(&[
        "train",
        "--data",
        path(&data.join("train.tsv")),
        "--test",
        path(&data.join("test.tsv")),
        "--dim",
        "8",
        "--epochs",
        "2",
        "--batch-size",
        "16",
        "--threads",
        threads,
        "--out-dir",
        path(out),
    ])
}

#[test]
fn train_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(code(&train(dir.path(), &a, "1")), 0);
    assert_eq!(code(&train(dir.path(), &b, "3")), 0);
    let results = fs::read_to_string(a.join("results.csv")).unwrap();
    assert!(results.starts_with("scheme,R@5,R@10,M@5,M@10,N,seed,manifest_hash\nLDPE,"));
    assert_eq!(
        fs::read(a.join("model.ckpt")).unwrap(),
        fs::read(b.join("model.ckpt")).unwrap()
    );
    assert_eq!(
        fs::read(a.join("epochs.csv")).unwrap(),
        fs::read(b.join("epochs.csv")).unwrap()
    );

    let e = dir.path().join("e");
    let o = posrec(&[
        "eval",
        "--checkpoint",
        path(&a.join("model.ckpt")),
        "--data",
        path(&dir.path().join("test.tsv")),
        "--out-dir",
        path(&e),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let metrics = |s: &str| {
        s.lines()
            .nth(1)
            .unwrap()
            .split(',')
            .take(6)
            .collect::<Vec<_>>()
            .join(",")
    };
    assert_eq!(
        metrics(&results),
        metrics(&fs::read_to_string(e.join("results.csv")).unwrap())
    );
}

#[test]
fn lambda_sweep_rows() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let out = dir.path().join("s");
    let o = posrec(&[
        "sweep-lambda2",
        "--data",
        path(&dir.path().join("train.tsv")),
        "--test",
        path(&dir.path().join("test.tsv")),
        "--values",
        "0,1",
        "--dim",
        "8",
        "--epochs",
        "1",
        "--out-dir",
        path(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("results.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("lambda2=0,") && rows[1].starts_with("lambda2=1,"));
    let hash = |r: &str| r.rsplit(',').next().unwrap().to_owned();
    assert_eq!(hash(rows[0]), hash(rows[1]));
}

#[test]
fn heatmap_files() {
    let dir = tempfile::tempdir().unwrap();
    let o = posrec(&[
        "heatmap",
        "--scheme",
        "SPE",
        "--dims",
        "8",
        "--out-dir",
        path(dir.path()),
    ]);
    assert_eq!(code(&o), 0);
    let csv = fs::read_to_string(dir.path().join("heatmap_SPE.csv")).unwrap();
    assert_eq!(csv.lines().count(), 11);
    assert!(csv.starts_with("l1\\l2,0,1,"));
    assert!(!dir.path().join("heatmap_SPE_forward.csv").exists());
    assert_eq!(
        code(&posrec(&["heatmap", "--scheme", "LPE", "--out-dir", path(dir.path())])),
        2
    );
}
