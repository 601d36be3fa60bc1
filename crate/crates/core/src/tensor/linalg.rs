//! Cholesky solves, SVD conditioning and symmetric eigendecomposition.

use nalgebra::DMatrix;

use super::Tensor;
use crate::error::{Error, Result};

fn to_dmatrix(a: &Tensor) -> Result<DMatrix<f64>> {
    let (r, c) = a.dims2()?;
    Ok(DMatrix::from_row_slice(r, c, a.data()))
}

fn square(op: &'static str, a: &Tensor) -> Result<usize> {
    let (r, c) = a.dims2()?;
    if r != c {
        return Err(Error::dim(op, format!("expected square, got {r}x{c}")));
    }
    Ok(r)
}

/// Lower-triangular Cholesky factor `l` (row-major) with `a = l lᵀ`.
pub fn cholesky(a: &Tensor) -> Result<Tensor> {
    let n = square("cholesky", a)?;
    let ad = a.data();
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut d = ad[j * n + j];
        for p in 0..j {
            d -= l[j * n + p] * l[j * n + p];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::Singular { pivot: j, value: d });
        }
        let djj = d.sqrt();
        l[j * n + j] = djj;
        for i in j + 1..n {
            let mut s = ad[i * n + j];
            for p in 0..j {
                s -= l[i * n + p] * l[j * n + p];
            }
            l[i * n + j] = s / djj;
        }
    }
    Tensor::new(vec![n, n], l)
}

/// Solves `a x = b` for symmetric positive definite `a`. `b` may be a
/// vector `[n]` or a matrix `[n, c]`; the result has the same shape.
pub fn solve_spd(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let n = square("solve_spd", a)?;
    let cols = match b.shape() {
        [m] if *m == n => 1,
        [m, c] if *m == n => *c,
        s => return Err(Error::dim("solve_spd", format!("{n}x{n} system, rhs {s:?}"))),
    };
    let l = cholesky(a)?;
    let ld = l.data();
    let mut x = b.data().to_vec();
    for c in 0..cols {
        // forward: l y = b
        for i in 0..n {
            let mut s = x[i * cols + c];
            for p in 0..i {
                s -= ld[i * n + p] * x[p * cols + c];
            }
            x[i * cols + c] = s / ld[i * n + i];
        }
        // backward: lᵀ x = y
        for i in (0..n).rev() {
            let mut s = x[i * cols + c];
            for p in i + 1..n {
                s -= ld[p * n + i] * x[p * cols + c];
            }
            x[i * cols + c] = s / ld[i * n + i];
        }
    }
    Tensor::new(b.shape().to_vec(), x)
}

/// Solves `a x = b` for a general nonsingular square `a` by LU with
/// partial pivoting. `b` is `[n]` or `[n, c]`.
pub fn solve(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let n = square("solve", a)?;
    let cols = match b.shape() {
        [m] if *m == n => 1,
        [m, c] if *m == n => *c,
        s => return Err(Error::dim("solve", format!("{n}x{n} system, rhs {s:?}"))),
    };
    let lu = to_dmatrix(a)?.lu();
    let rhs = DMatrix::from_row_slice(n, cols, b.data());
    let x = lu.solve(&rhs).ok_or(Error::Singular { pivot: 0, value: 0.0 })?;
    let mut out = Vec::with_capacity(n * cols);
    for i in 0..n {
        for c in 0..cols {
            out.push(x[(i, c)]);
        }
    }
    Tensor::new(b.shape().to_vec(), out)
}

/// Singular values in descending order.
pub fn singular_values(a: &Tensor) -> Result<Vec<f64>> {
    let m = to_dmatrix(a)?;
    let mut s: Vec<f64> = m.singular_values().iter().copied().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    Ok(s)
}

/// σ_max / σ_min, or +∞ once σ_min falls below 1e-14·σ_max.
pub fn condition_number(a: &Tensor) -> Result<f64> {
    square("condition_number", a)?;
    let s = singular_values(a)?;
    let (mx, mn) = (s[0], *s.last().unwrap());
    if mx == 0.0 || mn < 1e-14 * mx {
        return Ok(f64::INFINITY);
    }
    Ok(mx / mn)
}

pub fn determinant(a: &Tensor) -> Result<f64> {
    square("determinant", a)?;
    Ok(to_dmatrix(a)?.determinant())
}

/// Eigenvalues (ascending) and matching unit eigenvectors (as columns of
/// the returned `[n, n]` tensor) of a symmetric matrix.
pub fn symmetric_eigen(a: &Tensor) -> Result<(Vec<f64>, Tensor)> {
    let n = square("symmetric_eigen", a)?;
    let m = to_dmatrix(a)?;
    let sym = (&m + m.transpose()) * 0.5;
    let e = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| e.eigenvalues[i].total_cmp(&e.eigenvalues[j]));
    let vals = order.iter().map(|&i| e.eigenvalues[i]).collect();
    let mut vecs = Tensor::zeros(&[n, n]);
    for (c, &i) in order.iter().enumerate() {
        for r in 0..n {
            vecs.set(&[r, c], e.eigenvectors[(r, i)]);
        }
    }
    Ok((vals, vecs))
}
