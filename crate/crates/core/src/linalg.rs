//! Small dense vector helpers with a fixed summation order.
//!
//! Every reduction runs over indices in ascending order, so results are
//! bit-reproducible across runs and platforms.

use nalgebra::{DMatrix, SymmetricEigen};

/// Inner product, accumulated in index order.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// Squared Euclidean norm.
pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

/// Euclidean norm.
pub fn norm(a: &[f64]) -> f64 {
    norm_sq(a).sqrt()
}

/// Squared Euclidean distance.
pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut s = 0.0;
    for i in 0..a.len() {
        let t = a[i] - b[i];
        s += t * t;
    }
    s
}

/// `y += a * x`.
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for i in 0..x.len() {
        y[i] += a * x[i];
    }
}

/// `a - b`.
pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// `a + b`.
pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// `s * a`.
pub fn scale(s: f64, a: &[f64]) -> Vec<f64> {
    a.iter().map(|x| s * x).collect()
}

/// Whether every entry is finite.
pub fn all_finite(a: &[f64]) -> bool {
    a.iter().all(|x| x.is_finite())
}

/// Dense row-major matrix times vector, `out[i] = sum_j m[i*cols + j] v[j]`.
pub fn matvec(m: &[f64], rows: usize, cols: usize, v: &[f64]) -> Vec<f64> {
    debug_assert_eq!(m.len(), rows * cols);
    debug_assert_eq!(v.len(), cols);
    let mut out = vec![0.0; rows];
    for (i, o) in out.iter_mut().enumerate() {
        let row = &m[i * cols..(i + 1) * cols];
        *o = dot(row, v);
    }
    out
}

/// Transposed row-major matrix times vector, `out[j] = sum_i m[i*cols + j] u[i]`.
pub fn matvec_t(m: &[f64], rows: usize, cols: usize, u: &[f64]) -> Vec<f64> {
    debug_assert_eq!(m.len(), rows * cols);
    debug_assert_eq!(u.len(), rows);
    let mut out = vec![0.0; cols];
    for i in 0..rows {
        let row = &m[i * cols..(i + 1) * cols];
        let ui = u[i];
        for j in 0..cols {
            out[j] += row[j] * ui;
        }
    }
    out
}

/// Smallest and largest eigenvalue of a symmetric matrix.
pub fn sym_eig_extremes(m: &DMatrix<f64>) -> (f64, f64) {
    let eig = SymmetricEigen::new(m.clone());
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in eig.eigenvalues.iter() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (lo, hi)
}

/// Singular values of a matrix in descending order.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    let mut s: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap());
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matvec_and_transpose_agree_with_nalgebra() {
        let m = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let a = DMatrix::from_row_slice(2, 3, &m);
        let v = [1.0, -1.0, 2.0];
        let u = [0.5, -2.0];
        let mv = matvec(&m, 2, 3, &v);
        let mtu = matvec_t(&m, 2, 3, &u);
        let r1 = &a * nalgebra::DVector::from_row_slice(&v);
        let r2 = a.transpose() * nalgebra::DVector::from_row_slice(&u);
        assert_eq!(mv, r1.as_slice());
        assert_eq!(mtu, r2.as_slice());
    }

    #[test]
    fn eigen_extremes_of_diagonal() {
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![3.0, 1.0, 2.0]));
        let (lo, hi) = sym_eig_extremes(&m);
        assert!((lo - 1.0).abs() < 1e-14 && (hi - 3.0).abs() < 1e-14);
    }
}
