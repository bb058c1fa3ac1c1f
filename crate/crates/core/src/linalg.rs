//! Small dense linear algebra: row-major matrices, Householder QR,
//! one-sided Jacobi SVD, truncated-SVD ridge least squares, LU solves and
//! Cholesky factors.
//!
//! Sizes in this crate stay modest (at most a few hundred columns against
//! tens of thousands of rows), so everything is plain loops over contiguous
//! rows, deterministic and single-threaded.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
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

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |x| x.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Self::from_vec(r, c, data)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn diag(d: &[T]) -> Self {
        let mut m = Self::zeros(d.len(), d.len());
        for (i, &x) in d.iter().enumerate() {
            m[(i, i)] = x;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "matmul shapes");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let a = self.row(i);
            let o = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &aik) in a.iter().enumerate() {
                if aik == T::zero() {
                    continue;
                }
                for (oj, &bkj) in o.iter_mut().zip(other.row(k)) {
                    *oj += aik * bkj;
                }
            }
        }
        out
    }

    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(self.cols, x.len(), "matvec shapes");
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// `self^T x`.
    pub fn tr_matvec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(self.rows, x.len(), "tr_matvec shapes");
        let mut out = vec![T::zero(); self.cols];
        for (i, &xi) in x.iter().enumerate() {
            axpy(xi, self.row(i), &mut out);
        }
        out
    }

    /// `self^T self`.
    pub fn gram(&self) -> Self {
        let k = self.cols;
        let mut g = Self::zeros(k, k);
        for i in 0..self.rows {
            let r = self.row(i);
            for a in 0..k {
                let ra = r[a];
                if ra == T::zero() {
                    continue;
                }
                let ga = &mut g.data[a * k..(a + 1) * k];
                for b in a..k {
                    ga[b] += ra * r[b];
                }
            }
        }
        for a in 0..k {
            for b in 0..a {
                g.data[a * k + b] = g.data[b * k + a];
            }
        }
        g
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
    }

    pub fn scale(&mut self, s: T) {
        for x in &mut self.data {
            *x *= s;
        }
    }
}

impl<T> std::ops::Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

#[inline]
pub fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn norm2<T: Scalar>(x: &[T]) -> T {
    dot(x, x).sqrt()
}

/// Householder reduction of `a` (m x n, m >= n) to upper-triangular `R`
/// (returned n x n), applying the same reflections to each right-hand side.
pub fn householder_r<T: Scalar>(a: &Matrix<T>, rhs: &mut [Vec<T>]) -> Matrix<T> {
    let (m, n) = (a.rows(), a.cols());
    assert!(m >= n, "householder_r needs rows >= cols");
    // Column-major working copy: reflections touch columns.
    let mut cols: Vec<Vec<T>> = (0..n).map(|j| a.col(j)).collect();
    for k in 0..n {
        let x = &cols[k][k..];
        let alpha = norm2(x);
        if alpha == T::zero() {
            continue;
        }
        let alpha = if x[0] > T::zero() { -alpha } else { alpha };
        let mut v: Vec<T> = x.to_vec();
        v[0] -= alpha;
        let vnorm2 = dot(&v, &v);
        if vnorm2 == T::zero() {
            continue;
        }
        let two = T::of(2.0);
        for col in cols.iter_mut().skip(k) {
            let s = two * dot(&v, &col[k..]) / vnorm2;
            axpy(-s, &v, &mut col[k..]);
        }
        for r in rhs.iter_mut() {
            let s = two * dot(&v, &r[k..]) / vnorm2;
            axpy(-s, &v, &mut r[k..]);
        }
    }
    Matrix::from_fn(n, n, |i, j| if i <= j { cols[j][i] } else { T::zero() })
}

/// Thin SVD `A = U diag(s) V^T` with `s` sorted descending.
#[derive(Clone, Debug)]
pub struct Svd<T> {
    pub u: Matrix<T>,
    pub s: Vec<T>,
    pub v: Matrix<T>,
}

/// One-sided Jacobi SVD of a matrix with rows >= cols.
fn jacobi_svd<T: Scalar>(a: &Matrix<T>) -> Svd<T> {
    let (m, n) = (a.rows(), a.cols());
    let mut w: Vec<Vec<T>> = (0..n).map(|j| a.col(j)).collect();
    let mut v: Vec<Vec<T>> = (0..n)
        .map(|j| (0..n).map(|i| if i == j { T::one() } else { T::zero() }).collect())
        .collect();
    let eps = T::epsilon();
    for _sweep in 0..80 {
        let mut rotated = false;
        for i in 0..n {
            for j in (i + 1)..n {
                let alpha = dot(&w[i], &w[i]);
                let beta = dot(&w[j], &w[j]);
                let gamma = dot(&w[i], &w[j]);
                if gamma == T::zero() || gamma.abs() <= eps * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (T::of(2.0) * gamma);
                let t = zeta.signum() / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = c * t;
                let (lo, hi) = w.split_at_mut(j);
                rotate(&mut lo[i], &mut hi[0], c, s);
                let (lo, hi) = v.split_at_mut(j);
                rotate(&mut lo[i], &mut hi[0], c, s);
            }
        }
        if !rotated {
            break;
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    let norms: Vec<T> = w.iter().map(|c| norm2(c)).collect();
    order.sort_by(|&x, &y| norms[y].partial_cmp(&norms[x]).unwrap_or(std::cmp::Ordering::Equal));
    let s: Vec<T> = order.iter().map(|&k| norms[k]).collect();
    let u = Matrix::from_fn(m, n, |i, j| {
        let k = order[j];
        if norms[k] > T::zero() {
            w[k][i] / norms[k]
        } else {
            T::zero()
        }
    });
    let vm = Matrix::from_fn(n, n, |i, j| v[order[j]][i]);
    Svd { u, s, v: vm }
}

#[inline]
fn rotate<T: Scalar>(x: &mut [T], y: &mut [T], c: T, s: T) {
    for (a, b) in x.iter_mut().zip(y.iter_mut()) {
        let (xa, yb) = (*a, *b);
        *a = c * xa - s * yb;
        *b = s * xa + c * yb;
    }
}

/// Thin SVD of any matrix.
pub fn svd<T: Scalar>(a: &Matrix<T>) -> Svd<T> {
    if a.rows() >= a.cols() {
        jacobi_svd(a)
    } else {
        let t = jacobi_svd(&a.transpose());
        Svd {
            u: t.v,
            s: t.s,
            v: t.u,
        }
    }
}

/// 2-norm condition number; infinite for singular input.
pub fn condition_number<T: Scalar>(a: &Matrix<T>) -> T {
    let s = svd(a).s;
    match (s.first(), s.last()) {
        (Some(&hi), Some(&lo)) if lo > T::zero() => hi / lo,
        _ => T::infinity(),
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LstsqOptions<T> {
    /// Absolute ridge weight added to the squared-error objective.
    pub ridge: T,
    /// Ridge weight relative to the mean squared singular value (trace of
    /// the Gram matrix over the column count). Added to `ridge`.
    pub ridge_rel: T,
    /// Singular values below `rcond * s_max` are discarded.
    pub rcond: T,
    pub std_errors: bool,
}

impl<T: Scalar> Default for LstsqOptions<T> {
    fn default() -> Self {
        Self {
            ridge: T::zero(),
            ridge_rel: T::of(1e-8),
            rcond: T::of(1e-10),
            std_errors: false,
        }
    }
}

impl<T: Scalar> LstsqOptions<T> {
    pub fn plain() -> Self {
        Self {
            ridge: T::zero(),
            ridge_rel: T::zero(),
            rcond: T::of(1e-10),
            std_errors: false,
        }
    }

    pub fn with_std_errors(mut self) -> Self {
        self.std_errors = true;
        self
    }
}

#[derive(Clone, Debug)]
pub struct LstsqSolution<T> {
    pub coef: Vec<T>,
    /// Slope standard errors, `sigma^2 V diag(s^2/(s^2+l)^2) V^T` diagonal
    /// with residual variance `sigma^2 = RSS/(m - rank)`.
    pub std_errors: Option<Vec<T>>,
    pub rank: usize,
    pub singular_values: Vec<T>,
    pub residual_ss: T,
    pub lambda: T,
}

/// Minimizes `|A b - y|^2 + lambda |b|^2` by truncated SVD (no intercept).
pub fn lstsq<T: Scalar>(a: &Matrix<T>, y: &[T], opts: &LstsqOptions<T>) -> Result<LstsqSolution<T>> {
    let (m, n) = (a.rows(), a.cols());
    if y.len() != m {
        return Err(Error::Dimension(format!(
            "lstsq: {m} rows against {} labels",
            y.len()
        )));
    }
    if n == 0 {
        return Ok(LstsqSolution {
            coef: vec![],
            std_errors: opts.std_errors.then(Vec::new),
            rank: 0,
            singular_values: vec![],
            residual_ss: dot(y, y),
            lambda: T::zero(),
        });
    }
    // Reduce tall problems to the n x n triangular factor first.
    let (core, qty) = if m > n {
        let mut rhs = vec![y.to_vec()];
        let r = householder_r(a, &mut rhs);
        let mut qty = rhs.pop().unwrap();
        qty.truncate(n);
        (r, qty)
    } else {
        (a.clone(), y.to_vec())
    };
    let Svd { u, s, v } = svd(&core);
    let smax = s.first().copied().unwrap_or(T::zero());
    let cutoff = opts.rcond * smax;
    let trace: T = s.iter().map(|&x| x * x).sum();
    let lambda = opts.ridge + opts.ridge_rel * trace / T::of_usize(n);
    let utb = u.tr_matvec(&qty);
    let mut coef = vec![T::zero(); n];
    let mut rank = 0;
    for (j, &sj) in s.iter().enumerate() {
        if sj <= cutoff || sj == T::zero() {
            continue;
        }
        rank += 1;
        let f = sj / (sj * sj + lambda) * utb[j];
        for (i, c) in coef.iter_mut().enumerate() {
            *c += v[(i, j)] * f;
        }
    }
    let fitted = a.matvec(&coef);
    let residual_ss: T = fitted
        .iter()
        .zip(y)
        .map(|(&f, &yy)| (yy - f) * (yy - f))
        .sum();
    let std_errors = if opts.std_errors {
        let dof = m.saturating_sub(rank).max(1);
        let sigma2 = residual_ss / T::of_usize(dof);
        let mut se = vec![T::zero(); n];
        for (i, e) in se.iter_mut().enumerate() {
            let mut acc = T::zero();
            for (j, &sj) in s.iter().enumerate() {
                if sj <= cutoff || sj == T::zero() {
                    continue;
                }
                let g = sj / (sj * sj + lambda);
                acc += v[(i, j)] * v[(i, j)] * g * g;
            }
            *e = (sigma2 * acc).sqrt();
        }
        Some(se)
    } else {
        None
    };
    Ok(LstsqSolution {
        coef,
        std_errors,
        rank,
        singular_values: s,
        residual_ss,
        lambda,
    })
}

/// LU factorization with partial pivoting of a square matrix.
#[derive(Clone, Debug)]
pub struct Lu<T> {
    lu: Matrix<T>,
    perm: Vec<usize>,
}

pub fn lu<T: Scalar>(a: &Matrix<T>) -> Result<Lu<T>> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::Dimension("lu: matrix not square".into()));
    }
    let mut lu = a.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    for k in 0..n {
        let mut p = k;
        let mut best = lu[(k, k)].abs();
        for i in (k + 1)..n {
            if lu[(i, k)].abs() > best {
                best = lu[(i, k)].abs();
                p = i;
            }
        }
        if best == T::zero() {
            return Err(Error::Singular(format!("lu: zero pivot in column {k}")));
        }
        if p != k {
            perm.swap(p, k);
            for j in 0..n {
                let tmp = lu[(k, j)];
                lu[(k, j)] = lu[(p, j)];
                lu[(p, j)] = tmp;
            }
        }
        let pivot = lu[(k, k)];
        for i in (k + 1)..n {
            let f = lu[(i, k)] / pivot;
            lu[(i, k)] = f;
            if f != T::zero() {
                for j in (k + 1)..n {
                    let u = lu[(k, j)];
                    lu[(i, j)] -= f * u;
                }
            }
        }
    }
    Ok(Lu { lu, perm })
}

impl<T: Scalar> Lu<T> {
    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.perm.len();
        let mut x: Vec<T> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut s = x[i];
            for j in 0..i {
                s -= self.lu[(i, j)] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in (i + 1)..n {
                s -= self.lu[(i, j)] * x[j];
            }
            x[i] = s / self.lu[(i, i)];
        }
        x
    }

    /// Solves for every column of `b`.
    pub fn solve_matrix(&self, b: &Matrix<T>) -> Matrix<T> {
        let n = self.perm.len();
        let mut out = Matrix::zeros(n, b.cols());
        for j in 0..b.cols() {
            let x = self.solve(&b.col(j));
            for i in 0..n {
                out[(i, j)] = x[i];
            }
        }
        out
    }
}

pub fn solve<T: Scalar>(a: &Matrix<T>, b: &[T]) -> Result<Vec<T>> {
    Ok(lu(a)?.solve(b))
}

/// Lower Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky<T: Scalar>(a: &Matrix<T>) -> Result<Matrix<T>> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::Dimension("cholesky: matrix not square".into()));
    }
    let mut l = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            if i == j {
                if s <= T::zero() {
                    return Err(Error::Singular(format!(
                        "cholesky: matrix not positive definite at row {i}"
                    )));
                }
                l[(i, i)] = s.sqrt();
            } else {
                l[(i, j)] = s / l[(j, j)];
            }
        }
    }
    Ok(l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::make_stream;

    fn random_matrix(r: usize, c: usize, seed: u64) -> Matrix<f64> {
        let mut s = make_stream(seed, 0);
        Matrix::from_fn(r, c, |_, _| s.normal())
    }

    #[test]
    fn svd_reconstructs() {
        for &(r, c) in &[(6, 4), (4, 6), (5, 5), (30, 3)] {
            let a = random_matrix(r, c, 3);
            let Svd { u, s, v } = svd(&a);
            let back = u.matmul(&Matrix::diag(&s)).matmul(&v.transpose());
            for i in 0..r {
                for j in 0..c {
                    assert!((back[(i, j)] - a[(i, j)]).abs() < 1e-12);
                }
            }
            assert!(s.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn svd_f32() {
        let a: Matrix<f32> = Matrix::from_rows(&[vec![3.0, 0.0], vec![0.0, 4.0], vec![0.0, 0.0]]);
        let s = svd(&a).s;
        assert!((s[0] - 4.0).abs() < 1e-6 && (s[1] - 3.0).abs() < 1e-6);
    }

    #[test]
    fn lstsq_exact_fit() {
        // y = 2 x, no ridge.
        let a: Matrix<f64> = Matrix::from_rows(&[vec![1.0], vec![2.0], vec![3.0]]);
        let sol = lstsq(&a, &[2.0, 4.0, 6.0], &LstsqOptions::plain()).unwrap();
        assert!((sol.coef[0] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn lstsq_matches_normal_equations() {
        let a = random_matrix(50, 4, 5);
        let mut s = make_stream(6, 0);
        let y: Vec<f64> = (0..50).map(|_| s.normal()).collect();
        let sol = lstsq(&a, &y, &LstsqOptions::plain()).unwrap();
        let direct = solve(&a.gram(), &a.tr_matvec(&y)).unwrap();
        for (x, z) in sol.coef.iter().zip(&direct) {
            assert!((x - z).abs() < 1e-10);
        }
    }

    #[test]
    fn ridge_splits_collinear_columns() {
        // Two identical columns: the ridge solution of the 2x2 system
        // (G + l I) b = A^T y is symmetric, b1 = b2 = g/(2g + l) with g = x.y / x.x.
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [1.1, 1.9, 3.2, 3.9];
        let a = Matrix::from_fn(4, 2, |i, _| x[i]);
        let opts = LstsqOptions {
            ridge: 1e-6,
            ridge_rel: 0.0,
            rcond: 1e-12,
            std_errors: false,
        };
        let sol = lstsq(&a, &y, &opts).unwrap();
        let xx: f64 = x.iter().map(|v| v * v).sum();
        let xy: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        let expect = xy / (2.0 * xx + 1e-6);
        assert!((sol.coef[0] - expect).abs() < 1e-9);
        assert!((sol.coef[1] - expect).abs() < 1e-9);
    }

    #[test]
    fn std_errors_match_ols_formula() {
        let a = random_matrix(40, 3, 8);
        let mut s = make_stream(9, 0);
        let y: Vec<f64> = (0..40).map(|_| s.normal()).collect();
        let sol = lstsq(&a, &y, &LstsqOptions::plain().with_std_errors()).unwrap();
        let g = a.gram();
        let ginv = lu(&g).unwrap().solve_matrix(&Matrix::identity(3));
        let sigma2 = sol.residual_ss / 37.0;
        let se = sol.std_errors.unwrap();
        for k in 0..3 {
            assert!((se[k] - (sigma2 * ginv[(k, k)]).sqrt()).abs() < 1e-10);
        }
    }

    #[test]
    fn lu_solves_and_detects_singularity() {
        let a: Matrix<f64> = Matrix::from_rows(&[vec![0.0, 2.0], vec![3.0, 1.0]]);
        let x = solve(&a, &[4.0, 5.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-14 && (x[1] - 2.0).abs() < 1e-14);
        let sing: Matrix<f64> = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]);
        assert!(lu(&sing).is_err());
    }

    #[test]
    fn cholesky_roundtrip() {
        let a = random_matrix(5, 5, 10);
        let spd = {
            let mut g = a.gram();
            for i in 0..5 {
                g[(i, i)] += 1.0;
            }
            g
        };
        let l = cholesky(&spd).unwrap();
        let back = l.matmul(&l.transpose());
        for i in 0..5 {
            for j in 0..5 {
                assert!((back[(i, j)] - spd[(i, j)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn condition_number_of_diagonal() {
        let a: Matrix<f64> = Matrix::diag(&[10.0, 1.0, 0.5]);
        assert!((condition_number(&a) - 20.0).abs() < 1e-12);
        assert!(condition_number(&Matrix::<f64>::diag(&[1.0, 0.0])).is_infinite());
    }
}
