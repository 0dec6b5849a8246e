//! Chebyshev polynomial graph filters.
//!
//! A filter `g(λ) = Σ_k α_k T_k(λ̃)` with `λ̃ = 2λ/λ_max − 1` is applied to a
//! signal through the three-term recurrence on the scaled Laplacian
//! `L̃ = (2/λ_max) L − I`, so no eigendecomposition and no matrix powers are
//! ever formed.

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::matrix::{dot, norm2, DenseMatrix, LinearOperator};

/// Coefficients `α_0..α_r` of a Chebyshev filter.
#[derive(Debug, Clone, PartialEq)]
pub struct ChebCoeffs {
    alpha: Vec<f64>,
}

impl ChebCoeffs {
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        if alpha.is_empty() {
            return Err(Error::InvalidArgument(
                "Chebyshev filter needs at least one coefficient".into(),
            ));
        }
        if let Some(bad) = alpha.iter().find(|a| !a.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite Chebyshev coefficient {bad}"
            )));
        }
        Ok(Self { alpha })
    }

    /// Polynomial order `r`.
    pub fn order(&self) -> usize {
        self.alpha.len() - 1
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    /// Evaluates `Σ α_k T_k(x)` by the scalar recurrence.
    pub fn eval(&self, x: f64) -> f64 {
        let mut prev = 1.0;
        let mut cur = x;
        let mut sum = self.alpha[0];
        for (k, &a) in self.alpha.iter().enumerate().skip(1) {
            if k > 1 {
                let next = 2.0 * x * cur - prev;
                prev = cur;
                cur = next;
            }
            sum += a * cur;
        }
        sum
    }

    /// Spectral multipliers `ĝ_i = Σ α_k T_k(2λ_i/λ_max − 1)`.
    pub fn spectral_response(&self, lambda: &[f64], lam_max: f64) -> Vec<f64> {
        lambda
            .iter()
            .map(|&l| self.eval(2.0 * l / lam_max - 1.0))
            .collect()
    }
}

/// `T_k(x)` for a single `k`.
pub fn chebyshev_t(k: usize, x: f64) -> f64 {
    let mut alpha = vec![0.0; k + 1];
    alpha[k] = 1.0;
    ChebCoeffs { alpha }.eval(x)
}

#[derive(Debug, Clone, Copy)]
pub struct PowerIterationOptions {
    /// Stop when the Rayleigh residual `‖Lx − ρx‖` falls below `tol · ρ`.
    pub tol: f64,
    pub max_iter: usize,
    /// Multiplier applied to the converged estimate. `1.0` keeps it exact;
    /// `1.0 + 1e-6` guards against underestimation.
    pub inflation: f64,
}

impl Default for PowerIterationOptions {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            max_iter: 10_000,
            inflation: 1.0,
        }
    }
}

/// Largest Laplacian eigenvalue by power iteration.
pub fn lambda_max(g: &Graph, tol: f64, max_iter: usize) -> Result<f64> {
    lambda_max_with(
        g,
        PowerIterationOptions {
            tol,
            max_iter,
            ..PowerIterationOptions::default()
        },
    )
}

pub fn lambda_max_with(g: &Graph, opts: PowerIterationOptions) -> Result<f64> {
    let n = g.node_count();
    if n == 0 {
        return Err(Error::InvalidDimension("graph has no nodes".into()));
    }
    if g.edges().iter().all(|&(_, _, w)| w == 0.0) {
        return Err(Error::DegenerateSpectrum(
            "Laplacian is zero; 2/λ_max is undefined".into(),
        ));
    }
    if !(opts.tol > 0.0) || !(opts.inflation >= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "power iteration needs tol > 0 and inflation >= 1, got {} and {}",
            opts.tol, opts.inflation
        )));
    }
    let l = g.laplacian_sparse();

    // All-ones lies in the null space of L, so the start vector carries an
    // index-dependent perturbation to reach the top eigenvector.
    let mut x: Vec<f64> = (0..n).map(|i| 1.0 + 1e-3 * ((i + 1) as f64).sin()).collect();
    let mut lx = l.matvec(&x)?;
    if norm2(&lx) == 0.0 {
        // start vector happened to lie in the null space; fall back to a ramp
        x = (0..n).map(|i| (i as f64 + 1.0).sqrt()).collect();
        lx = l.matvec(&x)?;
    }
    for _ in 0..opts.max_iter {
        let nx = norm2(&x);
        x.iter_mut().for_each(|v| *v /= nx);
        lx.iter_mut().for_each(|v| *v /= nx);
        let rho = dot(&x, &lx);
        let residual = lx
            .iter()
            .zip(&x)
            .map(|(a, b)| (a - rho * b).powi(2))
            .sum::<f64>()
            .sqrt();
        if !rho.is_finite() {
            return Err(Error::NumericalFailure(
                "power iteration produced a non-finite estimate".into(),
            ));
        }
        if residual <= opts.tol * rho {
            return Ok(rho * opts.inflation);
        }
        x = lx;
        lx = l.matvec(&x)?;
    }
    Err(Error::NumericalFailure(format!(
        "power iteration did not converge in {} iterations",
        opts.max_iter
    )))
}

/// The operator `(2/λ_max) L − I` built around any Laplacian operator.
#[derive(Debug, Clone)]
pub struct ScaledLaplacian<O> {
    laplacian: O,
    scale: f64,
}

impl<O: LinearOperator> ScaledLaplacian<O> {
    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let n = self.laplacian.dim();
        self.apply(&DenseMatrix::identity(n))
            .expect("identity has matching dimension")
    }
}

impl<O: LinearOperator> LinearOperator for ScaledLaplacian<O> {
    fn dim(&self) -> usize {
        self.laplacian.dim()
    }

    fn apply_into(&self, x: &DenseMatrix, out: &mut DenseMatrix) {
        self.laplacian.apply_into(x, out);
        for (o, &v) in out.as_mut_slice().iter_mut().zip(x.as_slice()) {
            *o = self.scale * *o - v;
        }
    }
}

pub fn scaled_laplacian<O: LinearOperator>(laplacian: O, lam_max: f64) -> Result<ScaledLaplacian<O>> {
    if !(lam_max > 0.0) || !lam_max.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "λ_max must be positive and finite, got {lam_max}"
        )));
    }
    Ok(ScaledLaplacian {
        laplacian,
        scale: 2.0 / lam_max,
    })
}

/// `Σ_k α_k T_k(L̃) f` via `T_0 f = f`, `T_1 f = L̃ f`,
/// `T_k f = 2 L̃ T_{k−1} f − T_{k−2} f`.
pub fn cheb_apply<O: LinearOperator>(
    l_tilde: &O,
    coeffs: &ChebCoeffs,
    f: &DenseMatrix,
) -> Result<DenseMatrix> {
    if f.rows() != l_tilde.dim() {
        return Err(Error::InvalidDimension(format!(
            "signal has {} rows, operator dimension is {}",
            f.rows(),
            l_tilde.dim()
        )));
    }
    let alpha = coeffs.alpha();
    let mut out = f.scale(alpha[0]);
    if alpha.len() == 1 {
        return Ok(out);
    }
    let mut prev = f.clone();
    let mut cur = l_tilde.apply(f)?;
    axpy(&mut out, alpha[1], &cur);
    let mut next = DenseMatrix::zeros(f.rows(), f.cols());
    for &a in &alpha[2..] {
        l_tilde.apply_into(&cur, &mut next);
        for (nv, &pv) in next.as_mut_slice().iter_mut().zip(prev.as_slice()) {
            *nv = 2.0 * *nv - pv;
        }
        axpy(&mut out, a, &next);
        std::mem::swap(&mut prev, &mut cur);
        std::mem::swap(&mut cur, &mut next);
    }
    Ok(out)
}

fn axpy(y: &mut DenseMatrix, a: f64, x: &DenseMatrix) {
    for (yv, &xv) in y.as_mut_slice().iter_mut().zip(x.as_slice()) {
        *yv += a * xv;
    }
}
