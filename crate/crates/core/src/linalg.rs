//! Ridge-regularized Gram kernels.
//!
//! Every inverse in the recomputation scheme has the form
//! `((1/C)·I + M·Mᵀ)^{-1}`, where `M` is either an activation matrix
//! (samples as columns) or a weight matrix. The ridge term bounds the
//! smallest eigenvalue below by `1/C`, so a plain Cholesky factorization
//! never hits a pivot failure on finite input.

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{Error, Result};

/// Dense `f64` matrix. Samples are columns throughout the crate.
pub type Matrix = DMatrix<f64>;

/// Cholesky factor of `(1/C)·I + M·Mᵀ`.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
}

impl SpdFactor {
    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    /// Solves `G·X = B`.
    pub fn solve(&self, b: &Matrix) -> Result<Matrix> {
        if b.nrows() != self.dim() {
            return Err(Error::shape(
                "SpdFactor::solve",
                format!("factor is {0}x{0}, rhs has {1} rows", self.dim(), b.nrows()),
            ));
        }
        Ok(self.chol.solve(b))
    }
}

pub(crate) fn ensure_finite(m: &Matrix, what: &'static str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

fn ensure_ridge(c: f64) -> Result<()> {
    if c.is_finite() && c > 0.0 {
        Ok(())
    } else {
        Err(Error::param(
            "C",
            format!("must be finite and > 0, got {c}"),
        ))
    }
}

/// Factors `G = (1/C)·I_d + M·Mᵀ` for `M` of shape `d×N`.
pub fn gram_ridge_factor(m: &Matrix, c: f64) -> Result<SpdFactor> {
    ensure_ridge(c)?;
    if m.nrows() == 0 {
        return Err(Error::Empty("gram_ridge_factor: matrix has no rows"));
    }
    ensure_finite(m, "gram_ridge_factor input")?;

    let mut g = m * m.transpose();
    let ridge = 1.0 / c;
    for i in 0..g.nrows() {
        g[(i, i)] += ridge;
    }
    Cholesky::new(g)
        .map(|chol| SpdFactor { chol })
        .ok_or(Error::NonFinite("Gram factorization"))
}

/// Weight-update form: `E·Hᵀ·((1/C)·I + H·Hᵀ)^{-1}`.
///
/// The result is the minimizer of `‖Δ·H − E‖² + (1/C)·‖Δ‖²`. Only the
/// `d×d` Gram of `H` is ever formed.
pub fn ridge_right_solve(e: &Matrix, h: &Matrix, c: f64) -> Result<Matrix> {
    if e.ncols() != h.ncols() {
        return Err(Error::shape(
            "ridge_right_solve",
            format!("E has {} columns, H has {} columns", e.ncols(), h.ncols()),
        ));
    }
    ensure_finite(e, "ridge_right_solve residual")?;
    let factor = gram_ridge_factor(h, c)?;
    // G symmetric: Δᵀ = G^{-1}·H·Eᵀ
    let rhs = h * e.transpose();
    Ok(factor.solve(&rhs)?.transpose())
}

/// Pull-back form: `Wᵀ·((1/C)·I_c + W·Wᵀ)^{-1}·E`.
///
/// The result is the minimizer of `‖W·P − E‖² + (1/C)·‖P‖²`.
pub fn ridge_pullback(w: &Matrix, e: &Matrix, c: f64) -> Result<Matrix> {
    if w.nrows() != e.nrows() {
        return Err(Error::shape(
            "ridge_pullback",
            format!("W has {} rows, E has {} rows", w.nrows(), e.nrows()),
        ));
    }
    ensure_finite(e, "ridge_pullback residual")?;
    let factor = gram_ridge_factor(w, c)?;
    let x = factor.solve(e)?;
    Ok(w.transpose() * x)
}

pub fn relu(m: &Matrix) -> Matrix {
    m.map(|v| v.max(0.0))
}

pub fn relu_in_place(m: &mut Matrix) {
    m.apply(|v| *v = v.max(0.0));
}

/// `‖a − b‖_F / ‖b‖_F`, falling back to the absolute error when `b` is zero.
pub fn relative_error(a: &Matrix, b: &Matrix) -> f64 {
    let diff = (a - b).norm();
    let scale = b.norm();
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}
