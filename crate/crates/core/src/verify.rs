//! Numerical self-checks that need no data: every suite compares a fast
//! code path against an independent oracle on random inputs.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::chebyshev::{cheb_apply, lambda_max, scaled_laplacian, ChebCoeffs};
use crate::error::{Error, Result};
use crate::graph::{build_grid_graph, Connectivity, Graph};
use crate::matrix::{DenseMatrix, FeatureMap};
use crate::metrics::ConfusionMatrix;
use crate::model::{init_model, model_backward, model_forward, Architecture, GcnModel};
use crate::spectral::{eig_sym, spectral_filter_columns, SpectralDecomposition};

pub const EIG_TOL: f64 = 1e-12;
pub const RECONSTRUCTION_TOL: f64 = 1e-10;
pub const PSD_TOL: f64 = 1e-10;
pub const CHEBYSHEV_TOL: f64 = 1e-8;
pub const A_HAT_SPECTRUM_TOL: f64 = 1e-12;
pub const GRADIENT_REL_TOL: f64 = 1e-5;
pub const METRIC_IDENTITY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOptions {
    pub max_n: usize,
    pub max_order: usize,
    pub trials: usize,
    pub seed: u64,
    /// Test hook: perturbs every eigendecomposition so the oracle suites
    /// have something to catch.
    pub corrupt_eigensolver: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            max_n: 32,
            max_order: 8,
            trials: 20,
            seed: 0,
            corrupt_eigensolver: false,
        }
    }
}

impl VerifyOptions {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("--trials 0 verifies nothing".into()));
        }
        if self.max_n < 2 {
            return Err(Error::Config("--max-n must be at least 2".into()));
        }
        if self.max_order == 0 {
            return Err(Error::Config("--max-order must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: bool,
    pub cases: usize,
    /// Worst observed error, in the suite's own metric.
    pub worst: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl fmt::Display for SuiteResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<24} cases={:<5} worst={:.3e} tol={:.0e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.cases,
            self.worst,
            self.tolerance
        )?;
        if !self.detail.is_empty() {
            write!(f, "  ({})", self.detail)?;
        }
        Ok(())
    }
}

struct Tracker {
    name: &'static str,
    tolerance: f64,
    cases: usize,
    worst: f64,
    failure: Option<String>,
}

impl Tracker {
    fn new(name: &'static str, tolerance: f64) -> Self {
        Self {
            name,
            tolerance,
            cases: 0,
            worst: 0.0,
            failure: None,
        }
    }

    /// Records a case whose error must stay below the tolerance.
    fn observe(&mut self, err: f64, what: impl FnOnce() -> String) {
        self.cases += 1;
        if err.is_nan() || err > self.worst {
            self.worst = if err.is_nan() { f64::INFINITY } else { err };
        }
        if !(err < self.tolerance) && self.failure.is_none() {
            self.failure = Some(what());
        }
    }

    fn fail(&mut self, what: String) {
        self.cases += 1;
        self.failure.get_or_insert(what);
    }

    fn finish(self) -> SuiteResult {
        SuiteResult {
            name: self.name,
            passed: self.failure.is_none() && self.cases > 0,
            cases: self.cases,
            worst: self.worst,
            tolerance: self.tolerance,
            detail: self.failure.unwrap_or_default(),
        }
    }
}

fn decompose(m: &DenseMatrix, opts: &VerifyOptions) -> Result<SpectralDecomposition> {
    let mut dec = eig_sym(m, EIG_TOL)?;
    if opts.corrupt_eigensolver {
        for l in &mut dec.lambda {
            *l += 1e-3;
        }
    }
    Ok(dec)
}

/// Random connected graph: a random spanning tree plus extra edges, weights
/// in `[0.1, 2)`.
pub fn random_connected_graph(rng: &mut impl Rng, n: usize) -> Graph {
    let mut edges: Vec<(usize, usize, f64)> = (1..n)
        .map(|v| (rng.gen_range(0..v), v, rng.gen_range(0.1..2.0)))
        .collect();
    let density = rng.gen_range(0.0..0.3);
    let mut seen: std::collections::HashSet<(usize, usize)> =
        edges.iter().map(|&(a, b, _)| (a.min(b), a.max(b))).collect();
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(density) && seen.insert((i, j)) {
                edges.push((i, j, rng.gen_range(0.1..2.0)));
            }
        }
    }
    Graph::new(n, edges).expect("generated edges are valid")
}

pub fn random_symmetric(rng: &mut impl Rng, n: usize) -> DenseMatrix {
    let mut m = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = rng.gen_range(-1.0..1.0);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> DenseMatrix {
    DenseMatrix::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .expect("length matches")
}

pub fn laplacian_psd(opts: &VerifyOptions) -> Result<SuiteResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x1A9);
    let mut t = Tracker::new("laplacian_psd", PSD_TOL);
    for trial in 0..opts.trials {
        let n = rng.gen_range(2..=opts.max_n);
        let g = random_connected_graph(&mut rng, n);
        let l = g.laplacian();
        let row_sum = (0..n)
            .map(|i| l.row(i).iter().sum::<f64>().abs())
            .fold(0.0, f64::max);
        t.observe(row_sum.max(l.asymmetry()), || {
            format!("trial {trial}: Laplacian rows do not sum to zero or it is asymmetric")
        });
        let dec = decompose(&l, opts)?;
        let min = dec.lambda.iter().cloned().fold(f64::INFINITY, f64::min);
        t.observe((-min).max(0.0), || {
            format!("trial {trial}: smallest eigenvalue {min:e} (n={n})")
        });
        // constant vector is in the null space
        t.observe(dec.lambda[0].abs(), || {
            format!("trial {trial}: connected graph has no zero eigenvalue (got {:e})", dec.lambda[0])
        });
    }
    Ok(t.finish())
}

/// Reconstruction and orthonormality on random symmetric matrices with
/// `n ≤ max_n`, plus non-negativity of Laplacian spectra.
pub fn eigensolver_fidelity(opts: &VerifyOptions) -> Result<SuiteResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0xE16);
    let mut t = Tracker::new("eigensolver_fidelity", RECONSTRUCTION_TOL);
    for trial in 0..opts.trials {
        let n = rng.gen_range(1..=opts.max_n);
        let m = random_symmetric(&mut rng, n);
        let dec = decompose(&m, opts)?;
        let recon = dec.reconstruct().max_abs_diff(&m);
        t.observe(recon, || format!("trial {trial}: ‖ΦΛΦᵀ − M‖∞ = {recon:e} (n={n})"));
        let orth = dec.orthonormality_error();
        t.observe(orth, || format!("trial {trial}: ‖ΦᵀΦ − I‖∞ = {orth:e} (n={n})"));

        let g = random_connected_graph(&mut rng, n.max(2));
        let l = g.laplacian();
        let dec = decompose(&l, opts)?;
        let recon = dec.reconstruct().max_abs_diff(&l);
        t.observe(recon, || format!("trial {trial}: Laplacian reconstruction {recon:e}"));
        let min = dec.lambda.iter().cloned().fold(f64::INFINITY, f64::min);
        t.observe((-min).max(0.0), || format!("trial {trial}: Laplacian eigenvalue {min:e}"));
    }
    Ok(t.finish())
}

/// Chebyshev recurrence on the scaled Laplacian against exact filtering with
/// the same polynomial evaluated on the spectrum.
pub fn chebyshev_vs_spectral(opts: &VerifyOptions) -> Result<SuiteResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0xC4E);
    let mut t = Tracker::new("chebyshev_vs_spectral", CHEBYSHEV_TOL);
    for trial in 0..opts.trials {
        let n = rng.gen_range(2..=opts.max_n);
        let g = random_connected_graph(&mut rng, n);
        let order = rng.gen_range(1..=opts.max_order);
        let coeffs = ChebCoeffs::new((0..order).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
        let d = rng.gen_range(1..=3);
        let f = random_matrix(&mut rng, n, d);

        let lam_max = lambda_max(&g, 1e-7, 10_000)?;
        let l_tilde = scaled_laplacian(g.laplacian_sparse(), lam_max)?;
        let fast = cheb_apply(&l_tilde, &coeffs, &f)?;

        let dec = decompose(&g.laplacian(), opts)?;
        let g_hat = coeffs.spectral_response(&dec.lambda, lam_max);
        let exact = spectral_filter_columns(&dec, &g_hat, &f)?;
        let err = fast.max_abs_diff(&exact);
        t.observe(err, || {
            format!("trial {trial}: n={n} order={order} ‖cheb − spectral‖∞ = {err:e}")
        });
    }
    Ok(t.finish())
}

/// Eigenvalues of `D̃^{-1/2}(A+I)D̃^{-1/2}` lie in `[−1, 1]` for all grids up to
/// 8×8 (both connectivities) and for random graphs.
pub fn renormalized_spectrum(opts: &VerifyOptions) -> Result<SuiteResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0xA4A);
    let mut t = Tracker::new("renormalized_spectrum", A_HAT_SPECTRUM_TOL);
    let check = |t: &mut Tracker, g: &Graph, label: String| -> Result<()> {
        let dec = decompose(&g.renormalized_adjacency(), opts)?;
        let excess = dec
            .lambda
            .iter()
            .map(|l| l.abs() - 1.0)
            .fold(0.0, f64::max);
        t.observe(excess, || format!("{label}: eigenvalue outside [−1, 1] by {excess:e}"));
        Ok(())
    };
    for conn in [Connectivity::Four, Connectivity::Eight] {
        for h in 1..=8 {
            for w in 1..=8 {
                let g = build_grid_graph(h, w, conn)?;
                check(&mut t, &g, format!("{h}x{w} grid, {conn}-connected"))?;
            }
        }
    }
    for trial in 0..opts.trials {
        let n = rng.gen_range(2..=opts.max_n);
        let g = random_connected_graph(&mut rng, n);
        check(&mut t, &g, format!("random graph trial {trial}"))?;
    }
    Ok(t.finish())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientCheck {
    pub parameters: usize,
    pub max_rel_error: f64,
}

/// Central differences over every parameter with step `1e-5·max(1, |w|)`;
/// relative error is `|a − n| / max(|a|, |n|, 1e-6)`.
pub fn gradient_check(m: &GcnModel, image: &FeatureMap, labels: &[usize]) -> Result<GradientCheck> {
    let pass = model_forward(m, image)?;
    let (_, grads) = model_backward(m, &pass, labels)?;
    let analytic: Vec<f64> = grads.slices().iter().flat_map(|s| s.iter().copied()).collect();
    let mut probe = m.clone();
    let mut k = 0;
    let mut worst = 0.0f64;
    for t in 0..m.param_slices().len() {
        for j in 0..m.param_slices()[t].len() {
            let w = m.param_slices()[t][j];
            let step = 1e-5 * w.abs().max(1.0);
            probe.param_slices_mut()[t][j] = w + step;
            let up = probe.loss(image, labels)?;
            probe.param_slices_mut()[t][j] = w - step;
            let down = probe.loss(image, labels)?;
            probe.param_slices_mut()[t][j] = w;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic[k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = if rel.is_nan() { f64::INFINITY } else { worst.max(rel) };
            k += 1;
        }
    }
    Ok(GradientCheck {
        parameters: k,
        max_rel_error: worst,
    })
}

/// 8×8 patch, one 3→4 convolution, GCN 4→4→2.
pub fn tiny_architecture() -> Architecture {
    Architecture {
        in_channels: 3,
        conv_channels: vec![4],
        gcn_dims: vec![4, 2],
        height: 8,
        width: 8,
        connectivity: Connectivity::Four,
    }
}

pub fn gradient_suite(opts: &VerifyOptions) -> Result<SuiteResult> {
    let mut t = Tracker::new("gradient_check", GRADIENT_REL_TOL);
    let arch = tiny_architecture();
    // every parameter of the tiny model is probed; a handful of seeds suffices
    for trial in 0..opts.trials.min(5) {
        let seed = opts.seed.wrapping_add(trial as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6AD);
        let m = init_model(seed, &arch)?;
        let n = arch.height * arch.width;
        let image = FeatureMap::from_vec(
            3,
            arch.height,
            arch.width,
            (0..3 * n).map(|_| rng.gen_range(0.0..1.0)).collect(),
        )?;
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        let r = gradient_check(&m, &image, &labels)?;
        if r.parameters != m.param_count() {
            t.fail(format!("trial {trial}: only {} parameters probed", r.parameters));
        }
        t.observe(r.max_rel_error, || {
            format!("trial {trial}: max relative error {:e}", r.max_rel_error)
        });
    }
    Ok(t.finish())
}

/// Random confusion matrices satisfy `F1 = 2·IoU / (1 + IoU)`, and the
/// hand-counted 6/2/2/90 case gives exactly 0.96 / 0.75 / 0.6.
pub fn metric_identities(opts: &VerifyOptions) -> Result<SuiteResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x3E7);
    let mut t = Tracker::new("metric_identities", METRIC_IDENTITY_TOL);
    for _ in 0..opts.trials * 50 {
        let cm = ConfusionMatrix::new(
            rng.gen_range(0..10_000),
            rng.gen_range(0..10_000),
            rng.gen_range(0..10_000),
            rng.gen_range(0..10_000),
        );
        if cm.total() == 0 {
            continue;
        }
        let (f1, iou) = (cm.f1()?, cm.iou()?);
        let err = (f1 - 2.0 * iou / (1.0 + iou)).abs();
        t.observe(err, || format!("{cm:?}: F1 {f1} vs IoU {iou}"));
    }
    let hand = ConfusionMatrix::new(6, 2, 2, 90).report()?;
    if (hand.overall_accuracy, hand.f1, hand.iou) != (0.96, 0.75, 0.6) {
        t.fail(format!("hand example gave {}", hand.machine_line()));
    }
    Ok(t.finish())
}

/// Runs every suite in a fixed order.
pub fn run_all(opts: &VerifyOptions) -> Result<Vec<SuiteResult>> {
    opts.validate()?;
    let suites: [fn(&VerifyOptions) -> Result<SuiteResult>; 6] = [
        laplacian_psd,
        eigensolver_fidelity,
        chebyshev_vs_spectral,
        renormalized_spectrum,
        gradient_suite,
        metric_identities,
    ];
    suites.iter().map(|s| s(opts)).collect()
}
