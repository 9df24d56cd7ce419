use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use tempfile::TempDir;

const TINY: &str = r#"
max_steps = 4
batch_size = 3
val_every = 2
eval_batch_size = 4
lr_start = 0.001
lr_floor = 0.000001

[model]
backbone_stage_channels = [8, 8, 16, 16]
erb_channels = 4
da_reduced_channels = 4
input_size = 32
norm_groups = 2
seed = 1
"#;

fn mvss(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mvss"))
        .args(args)
        .env("MVSS_NUM_WORKERS", "2")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = mvss(args);
    assert!(
        out.status.success(),
        "mvss {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Dataset and trained checkpoint shared by the tests.
struct Fixture {
    _dir: TempDir,
    root: PathBuf,
    data: PathBuf,
    ckpt: PathBuf,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let data = root.join("data");
        ok(&[
            "gen-data", "--out", s(&data), "--size", "32", "--seed", "3",
            "--split", "train:6:3", "--split", "val:2:2", "--split", "test:3:2",
        ]);
        fs::write(root.join("tiny.toml"), TINY).unwrap();
        let run = root.join("run");
        ok(&[
            "train", "--manifest", s(&data.join("manifest.txt")), "--out", s(&run),
            "--config", s(&root.join("tiny.toml")),
        ]);
        Fixture {
            _dir: dir,
            ckpt: run.join("last.ckpt"),
            root,
            data,
        }
    })
}

fn csv_value(report: &str, metric: &str) -> String {
    report
        .lines()
        .find_map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[2] == metric).then(|| f[3].to_string())
        })
        .unwrap()
}

#[test]
fn gen_data_and_train_are_repeatable() {
    let f = fixture();
    let again = f.root.join("data2");
    ok(&[
        "gen-data", "--out", s(&again), "--size", "32", "--seed", "3",
        "--split", "train:6:3", "--split", "val:2:2", "--split", "test:3:2",
    ]);
    for name in ["manifest.txt", "params.txt", "images/train_00000.png", "masks/test_00001.png"] {
        assert_eq!(fs::read(f.data.join(name)).unwrap(), fs::read(again.join(name)).unwrap(), "{name}");
    }

    let run2 = f.root.join("run2");
    ok(&[
        "train", "--manifest", s(&f.data.join("manifest.txt")), "--out", s(&run2),
        "--config", s(&f.root.join("tiny.toml")),
    ]);
    let run = f.ckpt.parent().unwrap();
    for name in ["last.ckpt", "best.ckpt", "train.log", "val_report.csv", "train_report.csv", "config.toml"] {
        assert_eq!(fs::read(run.join(name)).unwrap(), fs::read(run2.join(name)).unwrap(), "{name}");
    }
    let log = fs::read_to_string(run.join("train.log")).unwrap();
    assert_eq!(log.lines().filter(|l| l.contains("\"event\":\"step\"")).count(), 4);
    assert_eq!(log.lines().filter(|l| l.contains("\"event\":\"validation\"")).count(), 2);
}

#[test]
fn resuming_matches_a_straight_run() {
    let f = fixture();
    let manifest = f.data.join("manifest.txt");
    let tiny = f.root.join("tiny.toml");
    let part = f.root.join("part");
    ok(&["train", "--manifest", s(&manifest), "--out", s(&part), "--config", s(&tiny), "--max-steps", "2"]);
    let rest = f.root.join("rest");
    ok(&[
        "train", "--manifest", s(&manifest), "--out", s(&rest),
        "--resume", s(&part.join("last.ckpt")), "--max-steps", "4",
    ]);
    assert_eq!(fs::read(rest.join("last.ckpt")).unwrap(), fs::read(&f.ckpt).unwrap());
}

fn mask_positives(path: &Path) -> usize {
    image::open(path).unwrap().to_luma8().pixels().filter(|p| p.0[0] > 0).count()
}

#[test]
fn infer_outputs_are_deterministic_and_threshold_monotone() {
    let f = fixture();
    let a = f.data.join("images/test_00000.png");
    let b = f.data.join("images/test_00003.png");
    let bad = f.root.join("broken.png");
    fs::write(&bad, b"not an image").unwrap();

    let out1 = f.root.join("infer1");
    let out2 = f.root.join("infer2");
    for out in [&out1, &out2] {
        ok(&["infer", "--checkpoint", s(&f.ckpt), "--out", s(out), s(&a), s(&b)]);
    }
    for name in ["test_00000.prob.png", "test_00000.mask.png", "test_00003.mask.png", "records.csv"] {
        assert_eq!(fs::read(out1.join(name)).unwrap(), fs::read(out2.join(name)).unwrap(), "{name}");
    }
    let prob = image::open(out1.join("test_00000.prob.png")).unwrap();
    assert_eq!((prob.width(), prob.height()), (32, 32));
    let records = fs::read_to_string(out1.join("records.csv")).unwrap();
    assert_eq!(records.lines().count(), 3);

    let strict = f.root.join("infer_strict");
    let loose = f.root.join("infer_loose");
    ok(&["infer", "--checkpoint", s(&f.ckpt), "--out", s(&strict), "--threshold", "0.9", s(&a)]);
    ok(&["infer", "--checkpoint", s(&f.ckpt), "--out", s(&loose), "--threshold", "0.1", s(&a)]);
    let counts = [
        mask_positives(&loose.join("test_00000.mask.png")),
        mask_positives(&out1.join("test_00000.mask.png")),
        mask_positives(&strict.join("test_00000.mask.png")),
    ];
    assert!(counts[0] >= counts[1] && counts[1] >= counts[2], "{counts:?}");
    assert_eq!(
        fs::read(strict.join("test_00000.prob.png")).unwrap(),
        fs::read(out1.join("test_00000.prob.png")).unwrap()
    );

    let mixed = f.root.join("infer_mixed");
    let out = mvss(&["infer", "--checkpoint", s(&f.ckpt), "--out", s(&mixed), s(&bad), s(&a)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(mixed.join("test_00000.mask.png").exists());
    let records = fs::read_to_string(mixed.join("records.csv")).unwrap();
    let broken = records.lines().find(|l| l.contains("broken.png")).unwrap();
    assert!(broken.ends_with(|c: char| c != ','), "{broken}");
}

#[test]
fn eval_modes_and_missing_authentic_images() {
    let f = fixture();
    let manifest = f.data.join("manifest.txt");
    let run = |name: &str, mode: &str| {
        let out = f.root.join(name);
        ok(&[
            "eval", "--checkpoint", s(&f.ckpt), "--manifest", s(&manifest), "--out", s(&out),
            "--split", "test", "--mode", mode,
        ]);
        fs::read_to_string(out.join("report.csv")).unwrap()
    };
    let fixed = run("eval_fixed", "fixed");
    let optimal = run("eval_optimal", "optimal");
    assert_eq!(fixed, run("eval_fixed_again", "fixed"));
    assert!(fixed.starts_with("testset,mode,metric,value\n"));
    let pf = |r: &str| csv_value(r, "pixel_f1").parse::<f64>().unwrap();
    assert!(pf(&optimal) >= pf(&fixed));
    assert!(csv_value(&fixed, "com_f1") != "undefined");

    let forged_only: String = fs::read_to_string(&manifest)
        .unwrap()
        .lines()
        .filter(|l| l.contains(",test") && !l.contains("AUTH"))
        .map(|l| format!("{l}\n"))
        .collect();
    let nist_like = f.data.join("forged_only.txt");
    fs::write(&nist_like, forged_only).unwrap();
    let out = f.root.join("eval_nist");
    ok(&["eval", "--checkpoint", s(&f.ckpt), "--manifest", s(&nist_like), "--out", s(&out)]);
    let report = fs::read_to_string(out.join("report.csv")).unwrap();
    assert_eq!(csv_value(&report, "specificity"), "undefined");
    assert_eq!(csv_value(&report, "pixel_f1"), csv_value(&fixed, "pixel_f1"));
}

#[test]
fn robustness_curve_has_one_record_per_level() {
    let f = fixture();
    let manifest = f.data.join("manifest.txt");
    let out = f.root.join("robust");
    ok(&[
        "robustness", "--checkpoint", s(&f.ckpt), "--manifest", s(&manifest), "--out", s(&out),
        "--split", "test", "--levels", "jpeg:100,90,70,50",
    ]);
    let curve = fs::read_to_string(out.join("robustness_jpeg.csv")).unwrap();
    let rows: Vec<(f64, f64)> = curve
        .lines()
        .map(|l| {
            let (a, b) = l.split_once(',').unwrap();
            (a.parse().unwrap(), b.parse().unwrap())
        })
        .collect();
    assert_eq!(rows.iter().map(|r| r.0).collect::<Vec<_>>(), [100.0, 90.0, 70.0, 50.0]);

    let ev = f.root.join("robust_eval");
    ok(&[
        "eval", "--checkpoint", s(&f.ckpt), "--manifest", s(&manifest), "--out", s(&ev), "--split", "test",
    ]);
    let clean: f64 = csv_value(&fs::read_to_string(ev.join("report.csv")).unwrap(), "pixel_f1").parse().unwrap();
    assert!((rows[0].1 - clean).abs() < 1e-6);
}

#[test]
fn configuration_errors_exit_with_two() {
    let f = fixture();
    let manifest = f.data.join("manifest.txt");
    let bad_cfg = f.root.join("bad.toml");
    fs::write(&bad_cfg, "lr_start = 0.001\nlr_floor = 0.01\n").unwrap();
    let out = f.root.join("never");
    let cases: Vec<Vec<&str>> = vec![
        vec!["train", "--manifest", s(&manifest), "--out", s(&out), "--config", s(&bad_cfg)],
        vec!["gen-data", "--out", s(&out), "--split", "train:x:1"],
        vec!["gen-data", "--out", s(&out), "--size", "40"],
        vec!["infer", "--checkpoint", s(&f.ckpt), "--out", s(&out), "--threshold", "1.5", "x.png"],
        vec!["eval", "--checkpoint", s(&f.ckpt), "--manifest", s(&manifest), "--out", s(&out), "--bogus"],
        vec!["robustness", "--checkpoint", s(&f.ckpt), "--manifest", s(&manifest), "--out", s(&out), "--levels", "jpeg:0"],
        vec!["eval", "--checkpoint", s(&manifest), "--manifest", s(&manifest), "--out", s(&out)],
    ];
    for args in cases {
        assert_eq!(mvss(&args).status.code(), Some(2), "{args:?}");
    }
    assert!(!out.exists());
    let env = Command::new(env!("CARGO_BIN_EXE_mvss"))
        .args(["gen-data", "--out", s(&out)])
        .env("MVSS_NUM_WORKERS", "zero")
        .output()
        .unwrap();
    assert_eq!(env.status.code(), Some(2));
}
