//! Small dense linear-algebra helpers shared by the estimator, the tests and
//! the tuning rule.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Reciprocal-condition threshold below which a symmetric matrix is treated
/// as singular.
pub const RCOND_TOL: f64 = 1e-12;

/// Inverse of a symmetric matrix, or `Err(rcond)` when the reciprocal
/// condition number `min|eig| / max|eig|` is below [`RCOND_TOL`].
pub fn symmetric_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>, f64> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(f64::NAN);
    }
    let sym = symmetrize(m);
    let eig = SymmetricEigen::new(sym);
    let max = eig.eigenvalues.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let min = eig
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |a, v| a.min(v.abs()));
    let rcond = if max > 0.0 { min / max } else { 0.0 };
    if !(rcond >= RCOND_TOL) {
        return Err(rcond);
    }
    let inv_vals = eig.eigenvalues.map(|v| 1.0 / v);
    let v = &eig.eigenvectors;
    Ok(symmetrize(&(v * DMatrix::from_diagonal(&inv_vals) * v.transpose())))
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Adds `weight · (a ⊗ x xᵀ)` to `target`, with the category-major layout
/// `[(j,u),(l,v)] = a_{jl} x_u x_v`.
pub fn add_kron_outer(target: &mut DMatrix<f64>, a: &DMatrix<f64>, x: &[f64], weight: f64) {
    let p = x.len();
    for j in 0..a.nrows() {
        for l in 0..a.ncols() {
            let ajl = weight * a[(j, l)];
            if ajl == 0.0 {
                continue;
            }
            for (u, &xu) in x.iter().enumerate() {
                let row = j * p + u;
                let scaled = ajl * xu;
                for (v, &xv) in x.iter().enumerate() {
                    target[(row, l * p + v)] += scaled * xv;
                }
            }
        }
    }
}

/// `a ⊗ x` for a length-`d` vector `a`.
pub fn kron_vec(a: &[f64], x: &[f64]) -> DVector<f64> {
    let p = x.len();
    DVector::from_fn(a.len() * p, |idx, _| a[idx / p] * x[idx % p])
}

/// Largest absolute entry.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |a, v| a.max(v.abs()))
}

/// Neumaier compensated summation.
#[derive(Debug, Default, Clone, Copy)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.compensation += (self.sum - t) + value;
        } else {
            self.compensation += (value - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = CompensatedSum::default();
        for v in iter {
            acc.add(v);
        }
        acc
    }
}
