use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gcnseg::dataset::{decode_pnm, write_source_dir, RasterImage, Source};
use gcnseg::synthetic::RectangleCorpus;

fn gcnseg(args: &[&str]) -> Output {
    gcnseg_env(args, &[])
}

fn gcnseg_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_gcnseg"));
    cmd.args(args).env_remove("GCN_SEED").env("RUST_LOG", "warn");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn plain_source(id: &str, h: usize, w: usize) -> Source {
    let pixels = (0..h * w * 3).map(|i| (i * 7 % 256) as u8).collect();
    let mask = (0..h * w).map(|i| if i % 3 == 0 { 255 } else { 0 }).collect();
    Source::new(
        id,
        RasterImage::new(w, h, 3, pixels).unwrap(),
        RasterImage::new(w, h, 1, mask).unwrap(),
    )
    .unwrap()
}

fn small_corpus(dir: &Path, count: usize, seed: u64) -> PathBuf {
    let corpus = RectangleCorpus {
        count,
        size: 16,
        min_side: 4,
        max_side: 8,
        seed,
        ..RectangleCorpus::default()
    };
    let path = dir.join(format!("corpus{seed}"));
    write_source_dir(&path, &corpus.generate().unwrap()).unwrap();
    path
}

const SMALL_MODEL: &[&str] = &[
    "--patch-size",
    "16",
    "--conv-channels",
    "4",
    "--gcn-dims",
    "4,2",
];

fn train_small(data: &Path, ckpt: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--data", s(data), "--checkpoint", s(ckpt), "--epochs", "1"];
    args.extend_from_slice(SMALL_MODEL);
    args.extend_from_slice(extra);
    gcnseg(&args)
}

#[test]
fn slice_counts_and_writes_patches() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("src");
    write_source_dir(&src, &[plain_source("one", 64, 64)]).unwrap();
    let out = dir.path().join("out");
    let o = gcnseg(&[
        "slice",
        "--images",
        s(&src.join("images")),
        "--masks",
        s(&src.join("masks")),
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "1");

    let big = dir.path().join("big");
    write_source_dir(&big, &[plain_source("tile", 256, 256)]).unwrap();
    let out = dir.path().join("out_big");
    let o = gcnseg(&[
        "slice",
        "--images",
        s(&big.join("images")),
        "--masks",
        s(&big.join("masks")),
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "121");
    let index = fs::read_to_string(out.join("index.tsv")).unwrap();
    assert_eq!(index.lines().count(), 122);
    assert!(index.contains("tile_r00019_c00038\ttile\t19\t38"));
    let patch = decode_pnm(&fs::read(out.join("images/tile_r00019_c00038.ppm")).unwrap()).unwrap();
    assert_eq!((patch.height(), patch.width(), patch.channels()), (64, 64, 3));
    let original = plain_source("tile", 256, 256).image;
    assert_eq!(patch.pixel(0, 0, 1), original.pixel(19, 38, 1));
    assert_eq!(fs::read_dir(out.join("masks")).unwrap().count(), 121);
}

#[test]
fn slice_missing_mask_names_the_stem() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("src");
    write_source_dir(&src, &[plain_source("lonely_tile", 64, 64)]).unwrap();
    fs::remove_file(src.join("masks/lonely_tile.pgm")).unwrap();
    let o = gcnseg(&[
        "slice",
        "--images",
        s(&src.join("images")),
        "--masks",
        s(&src.join("masks")),
        "--out",
        s(&dir.path().join("out")),
    ]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("lonely_tile"), "{}", stderr(&o));
}

#[test]
fn train_one_epoch_writes_one_history_record() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_corpus(dir.path(), 4, 1);
    let ckpt = dir.path().join("run/model.ckpt");
    let o = train_small(&data, &ckpt, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(ckpt.is_file());
    let history = fs::read_to_string(dir.path().join("run/model.history.tsv")).unwrap();
    assert_eq!(history.lines().count(), 2, "{history}");
    assert!(stdout(&o).contains("epoch 1 loss="));
}

#[test]
fn train_reads_config_file_and_evaluates() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_corpus(dir.path(), 4, 1);
    let eval = small_corpus(dir.path(), 2, 2);
    let cfg = dir.path().join("run.cfg");
    fs::write(
        &cfg,
        format!(
            "# toy run\nepochs=2\nlearning_rate=0.05\ndata={}\neval_data={}\ncheckpoint_path={}\n\
             patch_size=16\nconv_channels=4\ngcn_dims=4,2\n",
            data.display(),
            eval.display(),
            dir.path().join("m.ckpt").display()
        ),
    )
    .unwrap();
    let o = gcnseg(&["train", "--config", s(&cfg)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert_eq!(out.matches("epoch ").count(), 2, "{out}");
    assert!(out.contains("IoU="), "{out}");
    assert!(dir.path().join("m.best.ckpt").is_file());
}

#[test]
fn train_config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "epochs=3\nwarmup=10\n").unwrap();
    let o = gcnseg(&["train", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("warmup"));

    let o = gcnseg(&["train", "--epochs", "1"]);
    assert_eq!(o.status.code(), Some(2), "missing data should be a config error");

    let o = gcnseg(&["train", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn train_numerical_failure_exits_3_with_step() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_corpus(dir.path(), 4, 1);
    // a purely linear model cannot saturate into dead units, so the huge
    // step overflows instead
    let o = gcnseg(&[
        "train",
        "--data",
        s(&data),
        "--checkpoint",
        s(&dir.path().join("m.ckpt")),
        "--patch-size",
        "16",
        "--conv-channels",
        "",
        "--gcn-dims",
        "2",
        "--lr",
        "1e308",
        "--batch-size",
        "1",
        "--epochs",
        "3",
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("step"), "{}", stderr(&o));
}

#[test]
fn seed_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_corpus(dir.path(), 3, 1);
    let flag = dir.path().join("flag.ckpt");
    let env = dir.path().join("env.ckpt");
    let other = dir.path().join("other.ckpt");
    assert!(train_small(&data, &flag, &["--seed", "5"]).status.success());
    let mut args = vec!["train", "--data", s(&data), "--checkpoint", s(&env), "--epochs", "1"];
    args.extend_from_slice(SMALL_MODEL);
    assert!(gcnseg_env(&args, &[("GCN_SEED", "5")]).status.success());
    assert!(train_small(&data, &other, &["--seed", "6"]).status.success());
    assert_eq!(fs::read(&flag).unwrap(), fs::read(&env).unwrap());
    assert_ne!(fs::read(&flag).unwrap(), fs::read(&other).unwrap());
}

#[test]
fn predict_and_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_corpus(dir.path(), 3, 1);
    let ckpt = dir.path().join("m.ckpt");
    assert!(train_small(&data, &ckpt, &["--lr", "0.05"]).status.success());

    // rewrite every mask with the model's own prediction → perfect scores
    let own = dir.path().join("own");
    fs::create_dir_all(own.join("masks")).unwrap();
    fs::create_dir_all(own.join("images")).unwrap();
    for entry in fs::read_dir(data.join("images")).unwrap() {
        let img = entry.unwrap().path();
        let stem = img.file_stem().unwrap().to_str().unwrap().to_string();
        fs::copy(&img, own.join("images").join(img.file_name().unwrap())).unwrap();
        let out = own.join("masks").join(format!("{stem}.pgm"));
        let o = gcnseg(&["predict", "--model", s(&ckpt), "--image", s(&img), "--out", s(&out)]);
        assert!(o.status.success(), "{}", stderr(&o));
        let mask = decode_pnm(&fs::read(&out).unwrap()).unwrap();
        assert_eq!((mask.height(), mask.width(), mask.channels()), (16, 16, 1));
        assert!(mask.pixels().iter().all(|&v| v == 0 || v == 255));
    }
    let o = gcnseg(&["eval", "--model", s(&ckpt), "--data", s(&own)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "OA=1.0000 F1=1.0000 IoU=1.0000");
    assert!(stderr(&o).contains("neither mask"));

    let o = gcnseg(&["eval", "--model", s(&ckpt), "--data", s(&data)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("OA="));
}

#[test]
fn predict_is_byte_stable_and_handles_other_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_corpus(dir.path(), 2, 1);
    let ckpt = dir.path().join("m.ckpt");
    assert!(train_small(&data, &ckpt, &[]).status.success());

    let big = dir.path().join("big");
    write_source_dir(&big, &[plain_source("wide", 20, 30)]).unwrap();
    let img = big.join("images/wide.ppm");
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = gcnseg(&["predict", "--model", s(&ckpt), "--image", s(&img), "--out", s(&out)]);
        assert!(o.status.success(), "{}", stderr(&o));
        fs::read(out).unwrap()
    };
    let (a, b) = (run("a.pgm"), run("b.pgm"));
    assert_eq!(a, b);
    let mask = decode_pnm(&a).unwrap();
    assert_eq!((mask.height(), mask.width()), (20, 30));
}

#[test]
fn eval_errors() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_corpus(dir.path(), 2, 1);
    let ckpt = dir.path().join("m.ckpt");
    assert!(train_small(&data, &ckpt, &[]).status.success());

    let empty = dir.path().join("empty");
    fs::create_dir_all(empty.join("images")).unwrap();
    fs::create_dir_all(empty.join("masks")).unwrap();
    let o = gcnseg(&["eval", "--model", s(&ckpt), "--data", s(&empty)]);
    assert_eq!(o.status.code(), Some(2));

    let junk = dir.path().join("junk.ckpt");
    fs::write(&junk, b"not a checkpoint").unwrap();
    let o = gcnseg(&["eval", "--model", s(&junk), "--data", s(&data)]);
    assert!(!o.status.success());
}

#[test]
fn verify_contract() {
    let o = gcnseg(&["verify"]);
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
    assert_eq!(stdout(&o).lines().filter(|l| l.starts_with("PASS")).count(), 6);

    let o = gcnseg(&["verify", "--trials", "0"]);
    assert_eq!(o.status.code(), Some(2));

    let o = gcnseg(&["verify", "--trials", "3", "--corrupt-eigensolver"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("eigensolver_fidelity"), "{}", stderr(&o));
    assert!(stdout(&o).contains("FAIL eigensolver_fidelity"));
}

#[test]
fn synth_writes_dataset_layout() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("synth");
    let o = gcnseg(&["synth", "--out", s(&out), "--count", "3", "--size", "32"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "3");
    assert!(out.join("images/synth_0002.ppm").is_file());
    assert!(out.join("masks/synth_0002.pgm").is_file());
}
