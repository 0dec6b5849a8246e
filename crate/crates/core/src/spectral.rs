//! Exact spectral machinery: symmetric eigendecomposition, the graph Fourier
//! transform and filtering by per-frequency multipliers.
//!
//! This is the slow path. It exists so the Chebyshev and GCN operators can be
//! checked against something that does not share their arithmetic.

use crate::error::{Error, Result};
use crate::matrix::{dot, DenseMatrix};

/// Largest matrix the dense eigensolver accepts by default.
pub const DEFAULT_ORACLE_LIMIT: usize = 4096;

/// `m = Φ diag(λ) Φᵀ` with orthonormal columns in `phi` and `lambda` ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDecomposition {
    pub phi: DenseMatrix,
    pub lambda: Vec<f64>,
}

impl SpectralDecomposition {
    pub fn dim(&self) -> usize {
        self.lambda.len()
    }

    /// `Φ diag(values) Φᵀ` as a dense matrix.
    pub fn reconstruct_with(&self, values: &[f64]) -> DenseMatrix {
        let n = self.dim();
        let mut scaled = self.phi.clone();
        for i in 0..n {
            for (x, &v) in scaled.row_mut(i).iter_mut().zip(values) {
                *x *= v;
            }
        }
        scaled
            .matmul_t(&self.phi)
            .expect("square factors have matching shapes")
    }

    pub fn reconstruct(&self) -> DenseMatrix {
        self.reconstruct_with(&self.lambda)
    }

    /// `‖ΦᵀΦ − I‖∞`.
    pub fn orthonormality_error(&self) -> f64 {
        let gram = self.phi.t_matmul(&self.phi).expect("square");
        gram.max_abs_diff(&DenseMatrix::identity(self.dim()))
    }

    pub fn largest(&self) -> f64 {
        self.lambda.last().copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EigOptions {
    /// Convergence when the off-diagonal Frobenius norm drops below
    /// `tol * max(1, ‖m‖_F)`.
    pub tol: f64,
    pub max_sweeps: usize,
    pub max_n: usize,
}

impl Default for EigOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_sweeps: 100,
            max_n: DEFAULT_ORACLE_LIMIT,
        }
    }
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
pub fn eig_sym(m: &DenseMatrix, tol: f64) -> Result<SpectralDecomposition> {
    eig_sym_with(
        m,
        EigOptions {
            tol,
            ..EigOptions::default()
        },
    )
}

pub fn eig_sym_with(m: &DenseMatrix, opts: EigOptions) -> Result<SpectralDecomposition> {
    if !m.is_square() {
        return Err(Error::InvalidDimension(format!(
            "eigensolver needs a square matrix, got {}x{}",
            m.rows(),
            m.cols()
        )));
    }
    let n = m.rows();
    if n > opts.max_n {
        return Err(Error::InvalidDimension(format!(
            "matrix of order {n} exceeds the oracle limit {}",
            opts.max_n
        )));
    }
    if !m.is_finite() {
        return Err(Error::ContractViolation(
            "matrix has non-finite entries".into(),
        ));
    }
    let asym = m.asymmetry();
    if asym > 1e-12 {
        return Err(Error::ContractViolation(format!(
            "matrix is not symmetric (max |m_ij - m_ji| = {asym:e})"
        )));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "tolerance must be positive, got {}",
            opts.tol
        )));
    }

    // symmetrize exactly so rotations see a symmetric matrix
    let mut a = m.clone();
    for i in 0..n {
        for j in i + 1..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    let mut v = DenseMatrix::identity(n);
    let threshold = opts.tol * m.frobenius_norm().max(1.0);

    let mut converged = false;
    for _ in 0..opts.max_sweeps {
        if off_diagonal_norm(&a) < threshold {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                rotate(&mut a, &mut v, p, q);
            }
        }
    }
    if !converged && off_diagonal_norm(&a) >= threshold {
        return Err(Error::NumericalFailure(format!(
            "Jacobi eigensolver did not converge in {} sweeps",
            opts.max_sweeps
        )));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]));

    let lambda: Vec<f64> = order.iter().map(|&i| a[(i, i)]).collect();
    let mut phi = DenseMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let sign = column_sign(&v, src);
        for r in 0..n {
            phi[(r, dst)] = sign * v[(r, src)];
        }
    }
    Ok(SpectralDecomposition { phi, lambda })
}

fn off_diagonal_norm(a: &DenseMatrix) -> f64 {
    let n = a.rows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[(i, j)] * a[(i, j)];
            }
        }
    }
    s.sqrt()
}

/// One Jacobi rotation annihilating `a[p][q]`, accumulated into `v`.
fn rotate(a: &mut DenseMatrix, v: &mut DenseMatrix, p: usize, q: usize) {
    let apq = a[(p, q)];
    if apq == 0.0 {
        return;
    }
    let app = a[(p, p)];
    let aqq = a[(q, q)];
    let theta = (aqq - app) / (2.0 * apq);
    let t = if theta.abs() > 1e150 {
        0.5 / theta
    } else {
        theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
    };
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;
    let n = a.rows();

    for k in 0..n {
        if k == p || k == q {
            continue;
        }
        let akp = a[(k, p)];
        let akq = a[(k, q)];
        let new_kp = c * akp - s * akq;
        let new_kq = s * akp + c * akq;
        a[(k, p)] = new_kp;
        a[(p, k)] = new_kp;
        a[(k, q)] = new_kq;
        a[(q, k)] = new_kq;
    }
    a[(p, p)] = app - t * apq;
    a[(q, q)] = aqq + t * apq;
    a[(p, q)] = 0.0;
    a[(q, p)] = 0.0;

    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = c * vkp - s * vkq;
        v[(k, q)] = s * vkp + c * vkq;
    }
}

/// +1 or −1 so that the first component of column `j` with magnitude above
/// 1e−12 becomes positive.
fn column_sign(v: &DenseMatrix, j: usize) -> f64 {
    for r in 0..v.rows() {
        let x = v[(r, j)];
        if x.abs() > 1e-12 {
            return if x < 0.0 { -1.0 } else { 1.0 };
        }
    }
    1.0
}

fn check_len(what: &str, len: usize, n: usize) -> Result<()> {
    if len != n {
        return Err(Error::InvalidDimension(format!(
            "{what} has length {len}, expected {n}"
        )));
    }
    Ok(())
}

/// Graph Fourier transform `f̂ = Φᵀ f`.
pub fn graph_fourier(dec: &SpectralDecomposition, f: &[f64]) -> Result<Vec<f64>> {
    let n = dec.dim();
    check_len("signal", f.len(), n)?;
    let mut out = vec![0.0; n];
    for (r, &fr) in f.iter().enumerate() {
        for (o, &p) in out.iter_mut().zip(dec.phi.row(r)) {
            *o += p * fr;
        }
    }
    Ok(out)
}

/// Inverse transform `Φ f̂`.
pub fn inverse_graph_fourier(dec: &SpectralDecomposition, f_hat: &[f64]) -> Result<Vec<f64>> {
    check_len("spectrum", f_hat.len(), dec.dim())?;
    dec.phi.matvec(f_hat)
}

/// Exact spectral filtering `Φ diag(ĝ) Φᵀ f`.
pub fn spectral_filter(dec: &SpectralDecomposition, g_hat: &[f64], f: &[f64]) -> Result<Vec<f64>> {
    check_len("filter", g_hat.len(), dec.dim())?;
    let mut f_hat = graph_fourier(dec, f)?;
    for (x, &g) in f_hat.iter_mut().zip(g_hat) {
        *x *= g;
    }
    inverse_graph_fourier(dec, &f_hat)
}

/// Applies [`spectral_filter`] to every column of an `n × d` signal.
pub fn spectral_filter_columns(
    dec: &SpectralDecomposition,
    g_hat: &[f64],
    f: &DenseMatrix,
) -> Result<DenseMatrix> {
    check_len("signal", f.rows(), dec.dim())?;
    let mut out = DenseMatrix::zeros(f.rows(), f.cols());
    for j in 0..f.cols() {
        let col = spectral_filter(dec, g_hat, &f.col(j))?;
        for (i, v) in col.into_iter().enumerate() {
            out[(i, j)] = v;
        }
    }
    Ok(out)
}

/// Euclidean norm of `Φᵀ f`, used for Parseval checks.
pub fn spectral_energy(dec: &SpectralDecomposition, f: &[f64]) -> Result<f64> {
    let f_hat = graph_fourier(dec, f)?;
    Ok(dot(&f_hat, &f_hat).sqrt())
}
