use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn anglekit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_anglekit"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = anglekit(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_lists_every_subcommand_and_flag() {
    let out = ok(&["--help"]);
    let text = String::from_utf8(out.stdout).unwrap();
    for sub in ["synth", "prepare", "train-cls", "train-loc", "predict", "eval", "report"] {
        assert!(text.contains(sub), "{sub} missing from help");
    }
    for flag in ["--seed", "--workers", "--config", "--set", "--preset", "--out"] {
        assert!(text.contains(flag), "{flag} missing from help");
    }
    let loc = String::from_utf8(ok(&["train-loc", "--help"]).stdout).unwrap();
    for flag in ["--stage", "--stage1", "--train", "--val", "--images", "--resume"] {
        assert!(loc.contains(flag), "{flag} missing from train-loc help");
    }
}

#[test]
fn exit_codes_separate_validation_from_runtime_errors() {
    assert_eq!(anglekit(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(anglekit(&["synth", "--set", "no.such.key=1"]).status.code(), Some(1));
    assert_eq!(anglekit(&["synth", "--set", "classifier.train.seed=3"]).status.code(), Some(1));
    assert_eq!(anglekit(&["train-loc", "--stage", "3"]).status.code(), Some(1));
    assert_eq!(anglekit(&["train-cls"]).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("manifest.csv");
    fs::write(&bad, "image_id,label,left_x,left_y,right_x,right_y\nx,1,1,1,2,2\n").unwrap();
    // The manifest parses but its image cannot be read.
    let code = anglekit(&["prepare", "--manifest", s(&bad)]).status.code();
    assert_eq!(code, Some(1));
    let ckpt = dir.path().join("broken.ckpt");
    fs::write(&ckpt, b"not a checkpoint").unwrap();
    let code = anglekit(&["predict", "--manifest", s(&bad), "--cls", s(&ckpt)]).status.code();
    assert!(matches!(code, Some(1 | 2)));
}

#[test]
fn synth_is_byte_identical_across_reruns() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&["synth", "--count", "4", "--seed", "7", "--out", s(out)]);
    }
    let mut names: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 6);
    for n in names {
        assert_eq!(fs::read(a.join(&n)).unwrap(), fs::read(b.join(&n)).unwrap(), "{n:?}");
    }
}

#[test]
fn identity_predictions_score_zero_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["synth", "--count", "3", "--out", s(&data)]);
    let manifest = fs::read_to_string(data.join("manifest.csv")).unwrap();
    let mut pred = String::from("image_id,side,score,pred_x,pred_y\n");
    for line in manifest.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        pred += &format!("{},left,,{},{}\n{},right,,{},{}\n", f[0], f[2], f[3], f[0], f[4], f[5]);
    }
    let pred_path = dir.path().join("predictions.csv");
    fs::write(&pred_path, pred).unwrap();
    let out = dir.path().join("eval");
    ok(&[
        "eval",
        "--pred",
        s(&pred_path),
        "--gt",
        s(&data.join("manifest.csv")),
        "--task",
        "localization",
        "--out",
        s(&out),
    ]);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("eval.json")).unwrap()).unwrap();
    let ed = &report["localization"][0]["ed"];
    assert_eq!(ed["left"], 0.0);
    assert_eq!(ed["right"], 0.0);
    assert_eq!(ed["avg"], 0.0);
    assert!(out.join("report.md").exists() && out.join("report.csv").exists() && out.join("ed_hist.png").exists());
}

#[test]
fn end_to_end_pipeline_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name);
    let cfg = p("run.cfg");
    fs::write(
        &cfg,
        "# tiny run\npreset = desk\nsynth.closed_prior = 0.5\nclassifier.train.batch_size = 72\nclassifier.optim.lr0 = 0.001\nclassifier.train.epochs = 1\n",
    )
    .unwrap();
    let common = [
        "--config",
        s(&cfg),
        "--seed",
        "3",
        "--set",
        "localizer.stage1.epochs=1",
        "--set",
        "localizer.stage2.epochs=1",
    ];
    let run = |args: &[&str]| {
        let mut all: Vec<&str> = args.to_vec();
        all.extend_from_slice(&common);
        ok(&all)
    };
    run(&["synth", "--count", "10", "--out", s(&p("data"))]);
    run(&["prepare", "--manifest", s(&p("data/manifest.csv"))]);
    let train = p("data/train.csv");
    let test = p("data/test.csv");
    let rows = |f: &Path| fs::read_to_string(f).unwrap().lines().count() - 1;
    assert_eq!(rows(&train) + rows(&test), 10);
    assert!(rows(&test) > 0);
    let all = p("data/manifest.csv");

    run(&["train-cls", "--train", s(&train), "--val", s(&test), "--out", s(&p("cls"))]);
    let echo = fs::read_to_string(p("cls/config.txt")).unwrap();
    assert!(echo.contains("classifier.train.batch_size = 72"));
    assert!(echo.contains("classifier.optim.lr0 = 0.001"));
    assert!(echo.contains("seed = 3"));
    for f in ["config.json", "history.csv", "last.ckpt", "best.ckpt", "model.ckpt"] {
        assert!(p("cls").join(f).exists(), "cls/{f}");
    }

    run(&["train-loc", "--stage", "1", "--train", s(&train), "--out", s(&p("s1"))]);
    let s1 = p("s1/model.ckpt");
    run(&[
        "train-loc",
        "--stage",
        "2",
        "--stage1",
        s(&s1),
        "--train",
        s(&train),
        "--val",
        s(&test),
        "--out",
        s(&p("s2")),
    ]);
    // Resuming a finished run trains nothing further and still succeeds.
    run(&[
        "train-loc",
        "--stage",
        "2",
        "--stage1",
        s(&s1),
        "--train",
        s(&train),
        "--val",
        s(&test),
        "--resume",
        s(&p("s2/last.ckpt")),
        "--out",
        s(&p("s2b")),
    ]);

    run(&[
        "predict",
        "--manifest",
        s(&all),
        "--cls",
        s(&p("cls/model.ckpt")),
        "--stage1",
        s(&s1),
        "--stage2",
        s(&p("s2/model.ckpt")),
        "--out",
        s(&p("pred")),
    ]);
    let pred = fs::read_to_string(p("pred/predictions.csv")).unwrap();
    assert!(pred.starts_with("image_id,side,score,pred_x,pred_y"));
    assert_eq!(pred.lines().count(), 1 + 20);

    let eval_out = run(&[
        "eval",
        "--pred",
        s(&p("pred/predictions.csv")),
        "--gt",
        s(&all),
        "--ablation",
        s(&p("s2/model.ckpt")),
        "--out",
        s(&p("eval")),
    ]);
    let md = String::from_utf8(eval_out.stdout).unwrap();
    assert!(md.contains("AUC") && md.contains("PPM"), "{md}");
    for f in ["report.md", "report.csv", "eval.json", "roc.png", "ed_hist.png"] {
        assert!(p("eval").join(f).exists(), "eval/{f}");
    }
    run(&["report", "--input", s(&p("eval")), s(&p("eval")), "--out", s(&p("merged"))]);
    let merged: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(p("merged/eval.json")).unwrap()).unwrap();
    assert_eq!(merged["ablation"].as_array().unwrap().len(), 2);
}
