//! Small dense linear-algebra helpers shared by the light estimators.

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen, SVD};

/// Thin SVD with singular values in descending order.
pub(crate) struct ThinSvd {
    pub u: Option<DMatrix<f64>>,
    pub singular_values: DVector<f64>,
    pub v_t: Option<DMatrix<f64>>,
}

pub(crate) fn thin_svd(m: &DMatrix<f64>, want_u: bool, want_v: bool) -> ThinSvd {
    let svd = SVD::new(m.clone(), want_u, want_v);
    ThinSvd {
        u: svd.u,
        singular_values: svd.singular_values,
        v_t: svd.v_t,
    }
}

/// Upper-triangular factor of a Householder QR of a tall matrix.
///
/// For any column subset `S`, the singular values and right singular vectors
/// of `M[:, S]` coincide with those of `R[:, S]`, since `M = QR` with `Q`
/// having orthonormal columns.
pub(crate) fn triangular_factor(m: &DMatrix<f64>) -> DMatrix<f64> {
    if m.nrows() <= m.ncols() {
        return m.clone();
    }
    m.clone().qr().r()
}

/// Minimum-norm least-squares solution via SVD, dropping singular values
/// below `rel_cutoff * sigma_max`. Returns the solution, the numerical rank
/// and the singular values of `a`.
pub(crate) fn lstsq_min_norm(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    rel_cutoff: f64,
) -> (DVector<f64>, usize, DVector<f64>) {
    let svd = SVD::new(a.clone(), true, true);
    let sigma = svd.singular_values.clone();
    let smax = sigma.iter().cloned().fold(0.0_f64, f64::max);
    let cutoff = rel_cutoff * smax;
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v requested");
    let mut x = DVector::zeros(a.ncols());
    let mut rank = 0;
    for (k, &s) in sigma.iter().enumerate() {
        if s > cutoff && s > 0.0 {
            rank += 1;
            let coeff = u.column(k).dot(b) / s;
            x += v_t.row(k).transpose() * coeff;
        }
    }
    (x, rank, sigma)
}

/// Eigenvalues of a symmetric 3×3 matrix in ascending order.
pub(crate) fn sym3_eigenvalues(g: &Matrix3<f64>) -> [f64; 3] {
    let eig = SymmetricEigen::new(*g);
    let mut ev = [eig.eigenvalues[0], eig.eigenvalues[1], eig.eigenvalues[2]];
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

pub(crate) fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Index of the largest value, ties resolved toward the smallest index.
/// NaN never wins.
pub(crate) fn argmax_first(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if v.is_nan() {
            continue;
        }
        match best {
            Some(b) if v <= values[b] => {}
            _ => best = Some(i),
        }
    }
    best
}
