//! Light estimation by rank-3 factorization of the data matrix.
//!
//! `M ~ W^T Z` from the truncated SVD; the mixing factor `B` with
//! `|B z_t| = 1` is recovered from the Gram matrix `G = B^T B`, fitted by
//! linear least squares and factored by Cholesky.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix3xX};
use serde::{Deserialize, Serialize};

use crate::error::{PsError, Result};
use crate::linalg::{lstsq_min_norm, median, sym3_eigenvalues, thin_svd};
use crate::model::DataMatrix;

/// Relative singular-value threshold for the numerical rank of `H`.
pub const H_RANK_TOLERANCE: f64 = 1e-10;
/// `G` counts as positive definite when `lambda_3 > tol * |G|_2`.
pub const CHOLESKY_TOLERANCE: f64 = 1e-12;

pub const MIN_IMAGES: usize = 6;

#[derive(Debug, Clone)]
pub struct Rank3Factorization {
    /// Rows `sigma_i u_i^T`, i = 1..3 (3 x p).
    pub w: Matrix3xX<f64>,
    /// Rows `v_i^T`, i = 1..3 (3 x q).
    pub z: Matrix3xX<f64>,
    /// All singular values of `M`, descending.
    pub singular_values: DVector<f64>,
}

impl Rank3Factorization {
    pub fn sigma(&self, i: usize) -> f64 {
        self.singular_values.get(i - 1).copied().unwrap_or(0.0)
    }

    /// `sigma_4 / sigma_3`, the distance of `M` from rank 3.
    pub fn rank_gap(&self) -> f64 {
        let s3 = self.sigma(3);
        if s3 > 0.0 {
            self.sigma(4) / s3
        } else {
            f64::INFINITY
        }
    }

    /// `W^T Z`.
    pub fn approximation(&self) -> DMatrix<f64> {
        let wt = self.w.transpose();
        let prod = wt * &self.z;
        DMatrix::from_iterator(prod.nrows(), prod.ncols(), prod.iter().cloned())
    }
}

pub fn rank3_factor(data: &DataMatrix) -> Result<Rank3Factorization> {
    let (p, q) = (data.p(), data.q());
    if q < 3 {
        return Err(PsError::TooFewImages { got: q, needed: 3 });
    }
    if p < q {
        return Err(PsError::Shape(format!("need at least as many pixels as images, got {p}x{q}")));
    }
    let svd = thin_svd(data.matrix(), true, true);
    let sigma = svd.singular_values;
    if sigma[0] == 0.0 {
        return Err(PsError::DegenerateData);
    }
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v requested");
    let mut w = Matrix3xX::zeros(p);
    let mut z = Matrix3xX::zeros(q);
    for i in 0..3 {
        w.row_mut(i).copy_from(&(u.column(i).transpose() * sigma[i]));
        z.row_mut(i).copy_from(&v_t.row(i));
    }
    Ok(Rank3Factorization { w, z, singular_values: sigma })
}

/// Top three right singular vectors of `m`, as rows of a 3 x q matrix.
pub(crate) fn leading_right_vectors(m: &DMatrix<f64>) -> Matrix3xX<f64> {
    let v_t = thin_svd(m, false, true).v_t.expect("v requested");
    let mut z = Matrix3xX::zeros(m.ncols());
    for i in 0..3.min(v_t.nrows()) {
        z.row_mut(i).copy_from(&v_t.row(i));
    }
    z
}

/// `q x 6` matrix with rows `[z1^2, z2^2, z3^2, 2 z1 z2, 2 z1 z3, 2 z2 z3]`.
pub fn build_h(z: &Matrix3xX<f64>) -> DMatrix<f64> {
    let q = z.ncols();
    let mut h = DMatrix::zeros(q, 6);
    for (t, zt) in z.column_iter().enumerate() {
        let (a, b, c) = (zt[0], zt[1], zt[2]);
        h.row_mut(t).copy_from_slice(&[a * a, b * b, c * c, 2.0 * a * b, 2.0 * a * c, 2.0 * b * c]);
    }
    h
}

/// Least-squares fit of the symmetric matrix `G` with `z_t^T G z_t = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GramCandidate {
    /// `[g11, g22, g33, g12, g13, g23]`
    pub g: [f64; 6],
    pub matrix: Matrix3<f64>,
    /// Smallest eigenvalue of `G`.
    pub lambda3: f64,
    /// `|H g - 1|_2`
    pub residual: f64,
    /// Numerical rank of `H`.
    pub rank: usize,
    /// `H` had numerical rank below 6; `g` is the minimum-norm solution.
    pub degenerate: bool,
}

impl GramCandidate {
    fn from_params(g: [f64; 6], residual: f64, rank: usize) -> Self {
        let matrix = gram_from_params(&g);
        let lambda3 = sym3_eigenvalues(&matrix)[0];
        Self { g, matrix, lambda3, residual, rank, degenerate: rank < 6 }
    }

    pub fn spectral_norm(&self) -> f64 {
        let ev = sym3_eigenvalues(&self.matrix);
        ev[0].abs().max(ev[2].abs())
    }
}

pub(crate) fn gram_from_params(g: &[f64; 6]) -> Matrix3<f64> {
    Matrix3::new(g[0], g[3], g[4], g[3], g[1], g[5], g[4], g[5], g[2])
}

pub fn solve_gram(h: &DMatrix<f64>) -> Result<GramCandidate> {
    if h.nrows() < MIN_IMAGES {
        return Err(PsError::Underdetermined { rows: h.nrows() });
    }
    Ok(fit_gram(h))
}

/// Like [`solve_gram`] but accepts fewer than six rows (minimum-norm fit).
pub(crate) fn fit_gram(h: &DMatrix<f64>) -> GramCandidate {
    let ones = DVector::from_element(h.nrows(), 1.0);
    let (x, rank, _) = lstsq_min_norm(h, &ones, H_RANK_TOLERANCE);
    let residual = (h * &x - &ones).norm();
    let g = [x[0], x[1], x[2], x[3], x[4], x[5]];
    GramCandidate::from_params(g, residual, rank)
}

/// Upper-triangular `R` with `R^T R = G`, or a breakdown carrying `lambda_3`.
pub fn cholesky_factor(g: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    let ev = sym3_eigenvalues(g);
    let norm = ev[0].abs().max(ev[2].abs());
    let lambda3 = ev[0];
    if !(lambda3 > CHOLESKY_TOLERANCE * norm) {
        return Err(PsError::Breakdown { lambda3 });
    }
    let chol = g.cholesky().ok_or(PsError::Breakdown { lambda3 })?;
    Ok(chol.l().transpose())
}

/// Output of the linear procedure before orientation is fixed.
#[derive(Debug, Clone)]
pub struct LinearEstimate {
    pub factorization: Rank3Factorization,
    pub gram: GramCandidate,
    pub r: Matrix3<f64>,
    /// `L_0 = R Z`; columns have unit norm up to the Gram residual.
    pub lights: Matrix3xX<f64>,
    /// `N~_0 = R^{-T} W`.
    pub scaled_normals: Matrix3xX<f64>,
}

pub fn estimate_lights_linear(data: &DataMatrix) -> Result<LinearEstimate> {
    if data.q() < MIN_IMAGES {
        return Err(PsError::TooFewImages { got: data.q(), needed: MIN_IMAGES });
    }
    let factorization = rank3_factor(data)?;
    let gram = solve_gram(&build_h(&factorization.z))?;
    let r = cholesky_factor(&gram.matrix)?;
    let (lights, scaled_normals) = mix_factors(&r, &factorization)?;
    Ok(LinearEstimate { factorization, gram, r, lights, scaled_normals })
}

/// `(R Z, R^{-T} W)` for an invertible upper-triangular `R`.
pub(crate) fn mix_factors(
    r: &Matrix3<f64>,
    factorization: &Rank3Factorization,
) -> Result<(Matrix3xX<f64>, Matrix3xX<f64>)> {
    let r_inv_t = r
        .try_inverse()
        .ok_or(PsError::Breakdown { lambda3: 0.0 })?
        .transpose();
    Ok((r * &factorization.z, r_inv_t * &factorization.w))
}

/// Orthogonal transform fixing the residual ambiguity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    pub q: Matrix3<f64>,
    /// `det Q = -1`.
    pub reflection: bool,
}

impl Alignment {
    pub fn identity() -> Self {
        Self { q: Matrix3::identity(), reflection: false }
    }
}

/// Orthogonal Procrustes: `Q` minimizing `|Q L_0 - reference|_F`.
/// Reflections are permitted.
pub fn align_lights(l0: &Matrix3xX<f64>, reference: &Matrix3xX<f64>) -> Result<Alignment> {
    if l0.ncols() != reference.ncols() {
        return Err(PsError::Shape(format!(
            "{} estimated lights vs {} reference lights",
            l0.ncols(),
            reference.ncols()
        )));
    }
    let k = reference * l0.transpose();
    let svd = k.svd(true, true);
    let q = svd.u.expect("u requested") * svd.v_t.expect("v requested");
    Ok(Alignment { q, reflection: q.determinant() < 0.0 })
}

/// Aligned lights and scaled normals: `(Q L_0, Q N~_0)`, with both negated
/// when the median third normal component is negative. Returns whether the
/// flip was applied.
pub fn apply_alignment(
    alignment: &Alignment,
    l0: &Matrix3xX<f64>,
    n0: &Matrix3xX<f64>,
) -> (Matrix3xX<f64>, Matrix3xX<f64>, bool) {
    let mut lights = alignment.q * l0;
    let mut normals = alignment.q * n0;
    let mut third: Vec<f64> = normals
        .column_iter()
        .filter(|c| c.norm() > 0.0)
        .map(|c| c[2] / c.norm())
        .collect();
    let flip = median(&mut third) < 0.0;
    if flip {
        lights.neg_mut();
        normals.neg_mut();
    }
    (lights, normals, flip)
}
