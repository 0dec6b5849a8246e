//! Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
//! criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gcnseg::dataset::{patch_count, slice_patches, RasterImage, Sample};
use gcnseg::metrics::ConfusionMatrix;
use gcnseg::model::{init_model, Architecture};
use gcnseg::synthetic::RectangleCorpus;
use gcnseg::training::{evaluate, nll_loss, train, TrainConfig};
use gcnseg::verify::{self, VerifyOptions};
use gcnseg::DenseMatrix;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn within(elapsed: Duration, limit_secs: u64) -> bool {
    elapsed <= Duration::from_secs(limit_secs)
}

fn suite(
    f: fn(&VerifyOptions) -> gcnseg::Result<verify::SuiteResult>,
    opts: &VerifyOptions,
    limit_secs: u64,
) -> Outcome {
    let start = Instant::now();
    let r = f(opts).expect("suite runs");
    let elapsed = start.elapsed();
    outcome(
        r.passed && within(elapsed, limit_secs),
        format!(
            "{} cases, worst {:.3e} (tol {:.0e}), {:.2}s (limit {limit_secs}s){}",
            r.cases,
            r.worst,
            r.tolerance,
            elapsed.as_secs_f64(),
            if r.detail.is_empty() { String::new() } else { format!(", {}", r.detail) }
        ),
    )
}

fn opts(max_n: usize) -> VerifyOptions {
    VerifyOptions {
        max_n,
        max_order: 8,
        trials: 20,
        seed: 2024,
        corrupt_eigensolver: false,
    }
}

fn chebyshev_equivalence() -> Outcome {
    suite(verify::chebyshev_vs_spectral, &opts(32), 10)
}

fn eigensolver_fidelity() -> Outcome {
    suite(verify::eigensolver_fidelity, &opts(64), 10)
}

fn renormalized_spectrum() -> Outcome {
    suite(verify::renormalized_spectrum, &opts(32), 5)
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let arch = verify::tiny_architecture();
    let m = init_model(4, &arch).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let image = gcnseg::FeatureMap::from_vec(
        3,
        8,
        8,
        (0..3 * 64).map(|_| rng.gen_range(0.0..1.0)).collect(),
    )
    .unwrap();
    let labels: Vec<usize> = (0..64).map(|_| rng.gen_range(0..2)).collect();
    let r = verify::gradient_check(&m, &image, &labels).unwrap();
    let elapsed = start.elapsed();
    outcome(
        r.parameters == m.param_count()
            && r.max_rel_error < verify::GRADIENT_REL_TOL
            && within(elapsed, 60),
        format!(
            "{} of {} parameters, max relative error {:.3e} (tol 1e-5), {:.2}s",
            r.parameters,
            m.param_count(),
            r.max_rel_error,
            elapsed.as_secs_f64()
        ),
    )
}

fn metric_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    let mut checked = 0;
    while checked < 1000 {
        let cm = ConfusionMatrix::new(
            rng.gen_range(0..100_000),
            rng.gen_range(0..100_000),
            rng.gen_range(0..100_000),
            rng.gen_range(0..100_000),
        );
        if cm.tp + cm.fp + cm.fn_ == 0 {
            continue;
        }
        let (f1, iou) = (cm.f1().unwrap(), cm.iou().unwrap());
        worst = worst.max((f1 - 2.0 * iou / (1.0 + iou)).abs());
        checked += 1;
    }
    let hand = ConfusionMatrix::new(6, 2, 2, 90).report().unwrap();
    let exact = hand.overall_accuracy == 0.96 && hand.f1 == 0.75 && hand.iou == 0.6;
    outcome(
        worst <= 1e-12 && exact,
        format!(
            "{checked} matrices, worst |F1 − 2·IoU/(1+IoU)| = {worst:.3e}; hand example {}",
            hand.machine_line()
        ),
    )
}

fn enumerate_windows(h: usize, w: usize, size: usize, stride: usize) -> usize {
    let mut n = 0;
    for r in 0..h {
        for c in 0..w {
            if r % stride == 0 && c % stride == 0 && r + size <= h && c + size <= w {
                n += 1;
            }
        }
    }
    n
}

fn blank_pair(h: usize, w: usize) -> (RasterImage, RasterImage) {
    (
        RasterImage::new(w, h, 3, vec![0; h * w * 3]).unwrap(),
        RasterImage::new(w, h, 1, vec![0; h * w]).unwrap(),
    )
}

fn patch_counts() -> Outcome {
    let (size, stride) = (64, 19);
    let mut mismatches = Vec::new();
    // the formula against brute-force enumeration of every top-left corner
    for h in 64..=300 {
        let rows = (0..h).filter(|r| r % stride == 0 && r + size <= h).count();
        for w in 64..=300 {
            let cols = (0..w).filter(|c| c % stride == 0 && c + size <= w).count();
            if patch_count(h, w, size, stride) != rows * cols {
                mismatches.push((h, w));
            }
        }
    }
    // slice_patches itself along a sweep covering every height and width
    let mut sliced = 0;
    for h in 64..=300 {
        for w in [h, 364 - h] {
            let (img, mask) = blank_pair(h, w);
            let got = slice_patches(&img, &mask, "s", size, stride).unwrap().len();
            if got != enumerate_windows(h, w, size, stride) {
                mismatches.push((h, w));
            }
            sliced += 1;
        }
    }
    let (img, mask) = blank_pair(256, 256);
    let n256 = slice_patches(&img, &mask, "s", size, stride).unwrap().len();
    outcome(
        mismatches.is_empty() && n256 == 121,
        format!(
            "237x237 size pairs by formula, {sliced} rasters sliced, mismatches {:?}, 256x256 → {n256}",
            &mismatches[..mismatches.len().min(5)]
        ),
    )
}

struct SyntheticRun {
    first_loss: f64,
    last_loss: f64,
    iou: f64,
    report: String,
    elapsed: Duration,
}

fn synthetic_run() -> SyntheticRun {
    let start = Instant::now();
    let sources = RectangleCorpus::default().generate().unwrap();
    let samples: Vec<Sample> = sources
        .iter()
        .flat_map(|s| s.patches(64, 19).unwrap())
        .collect();
    assert_eq!(samples.len(), 200);
    let (train_set, held_out) = samples.split_at(160);
    let model = init_model(0, &Architecture::default()).unwrap();
    let cfg = TrainConfig::default();
    let (model, history) = train(&cfg, model, train_set, None).unwrap();
    let report = evaluate(&model, held_out).unwrap().report().unwrap();
    let losses = history.losses();
    SyntheticRun {
        first_loss: losses[0],
        last_loss: *losses.last().unwrap(),
        iou: report.iou,
        report: report.machine_line(),
        elapsed: start.elapsed(),
    }
}

fn synthetic_task(run: &SyntheticRun) -> Outcome {
    outcome(
        run.iou >= 0.90 && within(run.elapsed, 15 * 60),
        format!(
            "held-out 40 patches: {} (need IoU ≥ 0.90), {:.1}s",
            run.report,
            run.elapsed.as_secs_f64()
        ),
    )
}

fn run_cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_gcnseg"))
        .args(args)
        .env_remove("GCN_SEED")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let data = root.join("data");
    let data_s = data.to_str().unwrap();
    let synth = run_cli(&["synth", "--out", data_s, "--count", "6", "--size", "32", "--seed", "3"]);
    if !synth.status.success() {
        return outcome(false, format!("synth failed: {}", String::from_utf8_lossy(&synth.stderr)));
    }
    let train_once = |name: &str| -> Result<Vec<u8>, String> {
        let ckpt = root.join(name);
        let out = run_cli(&[
            "train",
            "--data",
            data_s,
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--epochs",
            "2",
            "--lr",
            "0.01",
            "--patch-size",
            "32",
            "--conv-channels",
            "4",
            "--gcn-dims",
            "8,2",
            "--seed",
            "11",
        ]);
        if !out.status.success() {
            return Err(String::from_utf8_lossy(&out.stderr).into_owned());
        }
        std::fs::read(&ckpt).map_err(|e| e.to_string())
    };
    let (a, b) = match (train_once("a.ckpt"), train_once("b.ckpt")) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => return outcome(false, format!("train failed: {e}")),
    };
    let predict_once = |name: &str| -> Vec<u8> {
        let out = root.join(name);
        let image = data.join("images").join("synth_0000.ppm");
        let status = run_cli(&[
            "predict",
            "--model",
            root.join("a.ckpt").to_str().unwrap(),
            "--image",
            image.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
        std::fs::read(Path::new(&out)).unwrap()
    };
    let (p, q) = (predict_once("p.pgm"), predict_once("q.pgm"));
    outcome(
        a == b && p == q,
        format!(
            "checkpoints {} bytes, identical: {}; predictions identical: {}",
            a.len(),
            a == b,
            p == q
        ),
    )
}

fn loss_sanity(run: &SyntheticRun) -> Outcome {
    let half = 0.5f64.ln();
    let lp = DenseMatrix::from_vec(4, 2, vec![half; 8]).unwrap();
    let uniform = nll_loss(&lp, &[0, 1, 1, 0]).unwrap();
    let err = (uniform - std::f64::consts::LN_2).abs();
    outcome(
        err <= 1e-12 && run.last_loss < run.first_loss,
        format!(
            "uniform NLL error {err:.1e}; synthetic epoch loss {:.6} → {:.6}",
            run.first_loss, run.last_loss
        ),
    )
}

fn main() {
    let mut failed = 0;
    let mut report = |id: u32, name: &str, o: Outcome| {
        println!(
            "{} [{id}] {name}: {}",
            if o.passed { "PASS" } else { "FAIL" },
            o.detail
        );
        failed += usize::from(!o.passed);
    };
    report(1, "spectral-Chebyshev equivalence", chebyshev_equivalence());
    report(2, "eigensolver fidelity", eigensolver_fidelity());
    report(3, "renormalized adjacency spectrum", renormalized_spectrum());
    report(4, "gradient check", gradient_check());
    report(5, "metric identities", metric_identities());
    report(6, "patch-count formula", patch_counts());
    let run = synthetic_run();
    report(7, "synthetic end-to-end task", synthetic_task(&run));
    report(8, "determinism", determinism());
    report(9, "loss sanity", loss_sanity(&run));
    println!("{failed} of 9 criteria failed");
    if failed > 0 {
        std::process::exit(1);
    }
}
