//! Dense least squares via Householder QR on a column-equilibrated design.

use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("design matrix is rank deficient (column {column} of {cols})")]
    RankDeficient { column: usize, cols: usize },
    #[error("need at least {needed} observations, have {available}")]
    TooFewObservations { needed: usize, available: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<T>) -> Result<Self, LinalgError> {
        if data.len() != rows * cols {
            return Err(LinalgError::DimensionMismatch(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Result<Self, LinalgError> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(LinalgError::DimensionMismatch("ragged rows".into()));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<T> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn mul_vec(&self, v: &[T]) -> Vec<T> {
        (0..self.rows)
            .map(|r| {
                self.row(r)
                    .iter()
                    .zip(v)
                    .fold(T::zero(), |acc, (&a, &b)| acc + a * b)
            })
            .collect()
    }
}

/// Single-response OLS solution.
#[derive(Debug, Clone, PartialEq)]
pub struct LeastSquares<T> {
    pub coefficients: Vec<T>,
    pub residuals: Vec<T>,
    pub rss: T,
    pub n: usize,
    /// Classical homoskedastic standard errors; `None` when there are no
    /// residual degrees of freedom.
    pub std_errors: Option<Vec<T>>,
}

/// Multi-response OLS solution sharing one design.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiLeastSquares<T> {
    /// `cols(X) x cols(Y)` coefficient matrix.
    pub coefficients: Matrix<T>,
    /// `rows x cols(Y)` residual matrix.
    pub residuals: Matrix<T>,
    pub n: usize,
}

struct QrFactor<T> {
    /// Householder-reduced, column-scaled design (R in the upper triangle).
    a: Matrix<T>,
    /// Householder vectors, one per column, stored with their leading entry.
    vs: Vec<Vec<T>>,
    scale: Vec<T>,
}

fn factor<T: Scalar>(x: &Matrix<T>) -> Result<QrFactor<T>, LinalgError> {
    let (n, p) = (x.rows, x.cols);
    if n < p {
        return Err(LinalgError::TooFewObservations {
            needed: p,
            available: n,
        });
    }
    let mut a = x.clone();
    let mut scale = Vec::with_capacity(p);
    for c in 0..p {
        let norm = (0..n).map(|r| a.get(r, c) * a.get(r, c)).sum::<T>().sqrt();
        if !(norm > T::zero()) || !norm.is_finite() {
            return Err(LinalgError::RankDeficient { column: c, cols: p });
        }
        for r in 0..n {
            a.set(r, c, a.get(r, c) / norm);
        }
        scale.push(norm);
    }

    let tol = T::rank_tolerance();
    let mut vs = Vec::with_capacity(p);
    for k in 0..p {
        let alpha_norm = (k..n).map(|r| a.get(r, k) * a.get(r, k)).sum::<T>().sqrt();
        if alpha_norm < tol {
            return Err(LinalgError::RankDeficient { column: k, cols: p });
        }
        let x0 = a.get(k, k);
        let alpha = if x0 >= T::zero() { -alpha_norm } else { alpha_norm };
        let mut v: Vec<T> = (k..n).map(|r| a.get(r, k)).collect();
        v[0] = v[0] - alpha;
        let vnorm2: T = v.iter().map(|&e| e * e).sum();
        if vnorm2 > T::zero() {
            for c in k..p {
                let dot: T = v
                    .iter()
                    .enumerate()
                    .map(|(i, &vi)| vi * a.get(k + i, c))
                    .sum();
                let f = (dot + dot) / vnorm2;
                for (i, &vi) in v.iter().enumerate() {
                    let val = a.get(k + i, c) - f * vi;
                    a.set(k + i, c, val);
                }
            }
        }
        vs.push(v);
        if a.get(k, k).abs() < tol {
            return Err(LinalgError::RankDeficient { column: k, cols: p });
        }
    }
    Ok(QrFactor { a, vs, scale })
}

impl<T: Scalar> QrFactor<T> {
    fn apply_qt(&self, y: &mut [T]) {
        for (k, v) in self.vs.iter().enumerate() {
            let vnorm2: T = v.iter().map(|&e| e * e).sum();
            if vnorm2 == T::zero() {
                continue;
            }
            let dot: T = v.iter().enumerate().map(|(i, &vi)| vi * y[k + i]).sum();
            let f = (dot + dot) / vnorm2;
            for (i, &vi) in v.iter().enumerate() {
                y[k + i] = y[k + i] - f * vi;
            }
        }
    }

    fn back_substitute(&self, qty: &[T]) -> Vec<T> {
        let p = self.a.cols;
        let mut b = vec![T::zero(); p];
        for i in (0..p).rev() {
            let mut s = qty[i];
            for j in i + 1..p {
                s = s - self.a.get(i, j) * b[j];
            }
            b[i] = s / self.a.get(i, i);
        }
        b.iter().zip(&self.scale).map(|(&bi, &si)| bi / si).collect()
    }

    /// Row norms of R^{-1}, unscaled: sqrt(diag((X'X)^{-1})).
    fn inverse_diag_sqrt(&self) -> Vec<T> {
        let p = self.a.cols;
        let mut rinv = Matrix::zeros(p, p);
        for j in 0..p {
            rinv.set(j, j, T::one() / self.a.get(j, j));
            for i in (0..j).rev() {
                let mut s = T::zero();
                for k in i + 1..=j {
                    s = s + self.a.get(i, k) * rinv.get(k, j);
                }
                rinv.set(i, j, -s / self.a.get(i, i));
            }
        }
        (0..p)
            .map(|i| {
                let norm = (i..p).map(|j| rinv.get(i, j) * rinv.get(i, j)).sum::<T>().sqrt();
                norm / self.scale[i]
            })
            .collect()
    }
}

/// Ordinary least squares `min ||y - X b||²`.
pub fn least_squares<T: Scalar>(x: &Matrix<T>, y: &[T]) -> Result<LeastSquares<T>, LinalgError> {
    if y.len() != x.rows {
        return Err(LinalgError::DimensionMismatch(format!(
            "{} responses for {} rows",
            y.len(),
            x.rows
        )));
    }
    let qr = factor(x)?;
    let mut qty = y.to_vec();
    qr.apply_qt(&mut qty);
    let coefficients = qr.back_substitute(&qty);
    let fitted = x.mul_vec(&coefficients);
    let residuals: Vec<T> = y.iter().zip(&fitted).map(|(&a, &b)| a - b).collect();
    let rss: T = residuals.iter().map(|&e| e * e).sum();
    let dof = x.rows - x.cols;
    let std_errors = (dof > 0).then(|| {
        let s = (rss / T::lit(dof as f64)).sqrt();
        qr.inverse_diag_sqrt().into_iter().map(|d| d * s).collect()
    });
    Ok(LeastSquares {
        coefficients,
        residuals,
        rss,
        n: x.rows,
        std_errors,
    })
}

/// OLS for several responses sharing one design matrix.
pub fn least_squares_multi<T: Scalar>(
    x: &Matrix<T>,
    y: &Matrix<T>,
) -> Result<MultiLeastSquares<T>, LinalgError> {
    if y.rows != x.rows {
        return Err(LinalgError::DimensionMismatch(format!(
            "{} response rows for {} design rows",
            y.rows, x.rows
        )));
    }
    let qr = factor(x)?;
    let mut coefficients = Matrix::zeros(x.cols, y.cols);
    let mut residuals = Matrix::zeros(y.rows, y.cols);
    for c in 0..y.cols {
        let col = y.column(c);
        let mut qty = col.clone();
        qr.apply_qt(&mut qty);
        let b = qr.back_substitute(&qty);
        let fitted = x.mul_vec(&b);
        for (r, (&yv, &fv)) in col.iter().zip(&fitted).enumerate() {
            residuals.set(r, c, yv - fv);
        }
        for (r, &bv) in b.iter().enumerate() {
            coefficients.set(r, c, bv);
        }
    }
    Ok(MultiLeastSquares {
        coefficients,
        residuals,
        n: x.rows,
    })
}

/// Ridge-regularised multi-response regression `(X'X + penalty·I) B = X'Y`
/// on the column-equilibrated design.
pub fn ridge_multi<T: Scalar>(
    x: &Matrix<T>,
    y: &Matrix<T>,
    penalty: T,
) -> Result<MultiLeastSquares<T>, LinalgError> {
    let (n, p) = (x.rows, x.cols);
    let scale: Vec<T> = (0..p)
        .map(|c| {
            let s = (0..n).map(|r| x.get(r, c) * x.get(r, c)).sum::<T>().sqrt();
            if s > T::zero() {
                s
            } else {
                T::one()
            }
        })
        .collect();
    let mut gram = Matrix::zeros(p, p);
    for i in 0..p {
        for j in 0..=i {
            let v: T = (0..n).map(|r| x.get(r, i) * x.get(r, j)).sum::<T>() / (scale[i] * scale[j]);
            gram.set(i, j, v);
            gram.set(j, i, v);
        }
        gram.set(i, i, gram.get(i, i) + penalty);
    }
    let chol = cholesky(&gram).ok_or(LinalgError::RankDeficient { column: 0, cols: p })?;
    let mut coefficients = Matrix::zeros(p, y.cols);
    let mut residuals = Matrix::zeros(n, y.cols);
    for c in 0..y.cols {
        let rhs: Vec<T> = (0..p)
            .map(|i| (0..n).map(|r| x.get(r, i) * y.get(r, c)).sum::<T>() / scale[i])
            .collect();
        let z = cholesky_solve(&chol, &rhs);
        let b: Vec<T> = z.iter().zip(&scale).map(|(&zi, &si)| zi / si).collect();
        let fitted = x.mul_vec(&b);
        for r in 0..n {
            residuals.set(r, c, y.get(r, c) - fitted[r]);
        }
        for (r, &bv) in b.iter().enumerate() {
            coefficients.set(r, c, bv);
        }
    }
    Ok(MultiLeastSquares {
        coefficients,
        residuals,
        n,
    })
}

/// Lower Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky<T: Scalar>(a: &Matrix<T>) -> Option<Matrix<T>> {
    let p = a.rows;
    let mut l = Matrix::zeros(p, p);
    for j in 0..p {
        let mut d = a.get(j, j);
        for k in 0..j {
            d = d - l.get(j, k) * l.get(j, k);
        }
        if !(d > T::zero()) {
            return None;
        }
        let djj = d.sqrt();
        l.set(j, j, djj);
        for i in j + 1..p {
            let mut s = a.get(i, j);
            for k in 0..j {
                s = s - l.get(i, k) * l.get(j, k);
            }
            l.set(i, j, s / djj);
        }
    }
    Some(l)
}

fn cholesky_solve<T: Scalar>(l: &Matrix<T>, b: &[T]) -> Vec<T> {
    let p = l.rows;
    let mut z = vec![T::zero(); p];
    for i in 0..p {
        let mut s = b[i];
        for k in 0..i {
            s = s - l.get(i, k) * z[k];
        }
        z[i] = s / l.get(i, i);
    }
    for i in (0..p).rev() {
        let mut s = z[i];
        for k in i + 1..p {
            s = s - l.get(k, i) * z[k];
        }
        z[i] = s / l.get(i, i);
    }
    z
}

/// `ln det(S)` for the residual covariance `S = E'E / n`, with the Cholesky
/// pivots floored at `floor` (itself at least 1e-300) so that exact fits
/// yield a finite value.
pub fn log_det_covariance(residuals: &Matrix<f64>, floor: f64) -> f64 {
    let (n, k) = (residuals.rows(), residuals.cols());
    let mut cov = Matrix::zeros(k, k);
    for i in 0..k {
        for j in 0..=i {
            let v = (0..n)
                .map(|r| residuals.get(r, i) * residuals.get(r, j))
                .sum::<f64>()
                / n as f64;
            cov.set(i, j, v);
            cov.set(j, i, v);
        }
    }
    let floor = floor.max(1e-300);
    let mut logdet = 0.0;
    let mut l = Matrix::<f64>::zeros(k, k);
    for j in 0..k {
        let mut d = cov.get(j, j);
        for m in 0..j {
            d -= l.get(j, m) * l.get(j, m);
        }
        let d = d.max(floor);
        let djj = d.sqrt();
        l.set(j, j, djj);
        logdet += d.ln();
        for i in j + 1..k {
            let mut s = cov.get(i, j);
            for m in 0..j {
                s -= l.get(i, m) * l.get(j, m);
            }
            l.set(i, j, s / djj);
        }
    }
    logdet
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn normal_equations(x: &Matrix<f64>, y: &[f64]) -> Vec<f64> {
        // Gaussian elimination with partial pivoting on X'X b = X'y.
        let p = x.cols();
        let mut a = vec![vec![0.0; p + 1]; p];
        for i in 0..p {
            for j in 0..p {
                a[i][j] = (0..x.rows()).map(|r| x.get(r, i) * x.get(r, j)).sum();
            }
            a[i][p] = (0..x.rows()).map(|r| x.get(r, i) * y[r]).sum();
        }
        for c in 0..p {
            let piv = (c..p).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
            a.swap(c, piv);
            for r in c + 1..p {
                let f = a[r][c] / a[c][c];
                for k in c..=p {
                    a[r][k] -= f * a[c][k];
                }
            }
        }
        let mut b = vec![0.0; p];
        for i in (0..p).rev() {
            let s: f64 = (i + 1..p).map(|k| a[i][k] * b[k]).sum();
            b[i] = (a[i][p] - s) / a[i][i];
        }
        b
    }

    #[test]
    fn matches_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|_| vec![1.0, rng.gen_range(-1.0..1.0), rng.gen_range(0.0..2.0)])
            .collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let y: Vec<f64> = (0..40).map(|_| rng.gen_range(0.0..1.0)).collect();
        let ls = least_squares(&x, &y).unwrap();
        let ne = normal_equations(&x, &y);
        for (a, b) in ls.coefficients.iter().zip(&ne) {
            assert!((a - b).abs() <= 1e-8 * b.abs().max(1.0));
        }
        // residuals orthogonal to every regressor
        for c in 0..3 {
            let dot: f64 = (0..40).map(|r| x.get(r, c) * ls.residuals[r]).sum();
            assert!(dot.abs() < 1e-10);
        }
        assert!(ls.std_errors.unwrap().iter().all(|s| *s > 0.0));
    }

    #[test]
    fn detects_collinear_columns() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![1.0, i as f64, 2.0 * i as f64]).collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let y = vec![1.0; 10];
        assert!(matches!(least_squares(&x, &y), Err(LinalgError::RankDeficient { .. })));
    }

    #[test]
    fn zero_column_is_rank_deficient() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![1.0, 0.0, i as f64]).collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let err = least_squares(&x, &[0.5; 10]).unwrap_err();
        assert_eq!(err, LinalgError::RankDeficient { column: 1, cols: 3 });
    }

    #[test]
    fn standard_errors_match_textbook_formula() {
        // simple regression: se(slope) = s / sqrt(Sxx)
        let xs = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0];
        let ys = [0.1, 0.9, 2.2, 2.8, 4.1, 5.0];
        let rows: Vec<Vec<f64>> = xs.iter().map(|&v| vec![1.0, v]).collect();
        let ls = least_squares(&Matrix::from_rows(&rows).unwrap(), &ys).unwrap();
        let mean = xs.iter().sum::<f64>() / 6.0;
        let sxx: f64 = xs.iter().map(|v| (v - mean).powi(2)).sum();
        let s = (ls.rss / 4.0).sqrt();
        let se = ls.std_errors.unwrap();
        assert!((se[1] - s / sxx.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn ridge_approaches_ols_for_tiny_penalty() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rows: Vec<Vec<f64>> = (0..30).map(|_| vec![1.0, rng.gen_range(-1.0..1.0)]).collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let ycol: Vec<Vec<f64>> = (0..30).map(|r| vec![0.5 + 2.0 * x.get(r, 1)]).collect();
        let y = Matrix::from_rows(&ycol).unwrap();
        let ridge = ridge_multi(&x, &y, 1e-12).unwrap();
        assert!((ridge.coefficients.get(1, 0) - 2.0).abs() < 1e-8);
        let ols = least_squares_multi(&x, &y).unwrap();
        assert!((ols.coefficients.get(0, 0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn f32_solves_small_system() {
        let rows: Vec<Vec<f32>> = (0..8).map(|i| vec![1.0, i as f32 * 0.25]).collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let y: Vec<f32> = (0..8).map(|i| 0.2 + 0.1 * i as f32 * 0.25).collect();
        let ls = least_squares(&x, &y).unwrap();
        assert!((ls.coefficients[0] - 0.2).abs() < 1e-5);
        assert!((ls.coefficients[1] - 0.1).abs() < 1e-5);
    }
}
