//! Nonlinear light estimation: solve `|R z_t|^2 = 1` for the six entries of
//! an upper-triangular `R` by damped Gauss-Newton.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix3xX};
use serde::{Deserialize, Serialize};

use crate::error::{PsError, Result};
use crate::linear::MIN_IMAGES;

/// Entries `[r11, r12, r13, r22, r23, r33]` of an upper-triangular `R`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriangularParams(pub [f64; 6]);

impl TriangularParams {
    pub fn identity() -> Self {
        Self([1.0, 0.0, 0.0, 1.0, 0.0, 1.0])
    }

    pub fn upper(&self) -> Matrix3<f64> {
        let r = &self.0;
        Matrix3::new(r[0], r[1], r[2], 0.0, r[3], r[4], 0.0, 0.0, r[5])
    }

    pub fn from_upper(r: &Matrix3<f64>) -> Self {
        Self([r[(0, 0)], r[(0, 1)], r[(0, 2)], r[(1, 1)], r[(1, 2)], r[(2, 2)]])
    }

    /// `G = R^T R`.
    pub fn gram(&self) -> Matrix3<f64> {
        let r = self.upper();
        r.transpose() * r
    }

    fn as_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.0)
    }

    fn from_vector(v: &DVector<f64>) -> Self {
        Self([v[0], v[1], v[2], v[3], v[4], v[5]])
    }

    fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// `f_t(r) = z_t^T R^T R z_t - 1`, written out in the entries of `R`.
pub fn residual(r: &TriangularParams, z: &Matrix3xX<f64>) -> DVector<f64> {
    let [r11, r12, r13, r22, r23, r33] = r.0;
    DVector::from_iterator(
        z.ncols(),
        z.column_iter().map(|zt| {
            let (z1, z2, z3) = (zt[0], zt[1], zt[2]);
            z1 * z1 * r11 * r11
                + 2.0 * z1 * z2 * r11 * r12
                + 2.0 * z1 * z3 * r11 * r13
                + z2 * z2 * (r12 * r12 + r22 * r22)
                + 2.0 * z2 * z3 * (r12 * r13 + r22 * r23)
                + z3 * z3 * (r13 * r13 + r23 * r23 + r33 * r33)
                - 1.0
        }),
    )
}

/// Row `t` is `2 [ (r11, r12, r13) z_t z_t^T, (r22, r23) (z2, z3)^T (z2, z3), r33 z3^2 ]`.
pub fn jacobian(r: &TriangularParams, z: &Matrix3xX<f64>) -> DMatrix<f64> {
    let [r11, r12, r13, r22, r23, r33] = r.0;
    let mut j = DMatrix::zeros(z.ncols(), 6);
    for (t, zt) in z.column_iter().enumerate() {
        let (z1, z2, z3) = (zt[0], zt[1], zt[2]);
        let a = r11 * z1 + r12 * z2 + r13 * z3;
        let b = r22 * z2 + r23 * z3;
        let c = r33 * z3;
        j.row_mut(t).copy_from_slice(&[
            2.0 * a * z1,
            2.0 * a * z2,
            2.0 * a * z3,
            2.0 * b * z2,
            2.0 * b * z3,
            2.0 * c * z3,
        ]);
    }
    j
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussNewtonOptions {
    pub max_iterations: usize,
    /// Stop when `|s| <= step_tolerance * (1 + |r|)`.
    pub step_tolerance: f64,
    /// Converged when `|F|_inf` falls below this.
    pub residual_tolerance: f64,
    /// Backtracking gives up below this step length.
    pub min_step: f64,
    /// Singular values of `J` below `cutoff * gamma_1` are dropped from `J^+`.
    pub pinv_cutoff: f64,
}

impl Default for GaussNewtonOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            step_tolerance: 1e-10,
            residual_tolerance: 1e-8,
            min_step: 2f64.powi(-20),
            pinv_cutoff: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnResult {
    pub solution: TriangularParams,
    /// Accepted steps.
    pub iterations: usize,
    /// `|F(r)|_2` at the final iterate.
    pub residual_norm: f64,
    /// `|F(r)|_2` after each accepted step, starting with the initial value.
    pub residual_trace: Vec<f64>,
    /// Singular values `gamma_1 >= ... >= gamma_6` of `J` at the final iterate,
    /// zero-padded when `J` has fewer than six rows.
    pub gammas: [f64; 6],
    /// `gamma_6 / gamma_5`.
    pub eta: f64,
    /// `gamma_5 = 0`, so `eta` was set to 0.
    pub eta_degenerate: bool,
    pub converged: bool,
}

impl GnResult {
    pub fn gram(&self) -> Matrix3<f64> {
        self.solution.gram()
    }
}

/// Damped Gauss-Newton from `r0`; requires at least six columns in `z`.
pub fn gauss_newton_solve(z: &Matrix3xX<f64>, r0: TriangularParams) -> Result<GnResult> {
    if z.ncols() < MIN_IMAGES {
        return Err(PsError::Underdetermined { rows: z.ncols() });
    }
    gauss_newton_with(z, r0, &GaussNewtonOptions::default())
}

/// Same iteration without the row-count guard; used for screening candidates
/// that are left with fewer than six images.
pub fn gauss_newton_with(
    z: &Matrix3xX<f64>,
    r0: TriangularParams,
    opts: &GaussNewtonOptions,
) -> Result<GnResult> {
    let mut r = r0;
    let mut f = residual(&r, z);
    let mut fnorm2 = f.norm_squared();
    let mut trace = vec![fnorm2.sqrt()];
    let mut iterations = 0;
    let mut diverged = !(r.is_finite() && fnorm2.is_finite() && z.iter().all(|v| v.is_finite()));

    while !diverged && iterations < opts.max_iterations {
        let j = jacobian(&r, z);
        let step = pinv_step(&j, &f, opts.pinv_cutoff);
        let rv = r.as_vector();
        if step.norm() <= opts.step_tolerance * (1.0 + rv.norm()) {
            break;
        }
        let mut alpha = 1.0;
        let mut accepted = None;
        while alpha >= opts.min_step {
            let trial = TriangularParams::from_vector(&(&rv + &step * alpha));
            let ft = residual(&trial, z);
            let n2 = ft.norm_squared();
            if !(trial.is_finite() && n2.is_finite()) {
                diverged = true;
                break;
            }
            if n2 < fnorm2 {
                accepted = Some((trial, ft, n2));
                break;
            }
            alpha *= 0.5;
        }
        match accepted {
            Some((trial, ft, n2)) => {
                r = trial;
                f = ft;
                fnorm2 = n2;
                iterations += 1;
                trace.push(fnorm2.sqrt());
            }
            None => break,
        }
    }

    let gammas = jacobian_singular_values(&jacobian(&r, z));
    let (eta, eta_degenerate) = eta_from_gammas(&gammas);
    let result = GnResult {
        solution: r,
        iterations,
        residual_norm: fnorm2.sqrt(),
        residual_trace: trace,
        gammas,
        eta,
        eta_degenerate,
        converged: !diverged && f.amax() < opts.residual_tolerance,
    };
    if diverged {
        return Err(PsError::Divergence { last: Box::new(result) });
    }
    Ok(result)
}

/// `s = -J^+ F` through the SVD of `J`.
fn pinv_step(j: &DMatrix<f64>, f: &DVector<f64>, cutoff: f64) -> DVector<f64> {
    let svd = j.clone().svd(true, true);
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v requested");
    let gmax = svd.singular_values.max();
    let mut s = DVector::zeros(6);
    for (k, &g) in svd.singular_values.iter().enumerate() {
        if g > cutoff * gmax && g > 0.0 {
            s -= v_t.row(k).transpose() * (u.column(k).dot(f) / g);
        }
    }
    s
}

fn jacobian_singular_values(j: &DMatrix<f64>) -> [f64; 6] {
    let mut gammas = [0.0; 6];
    // the SVD iteration does not terminate on NaN input
    if j.nrows() == 0 || j.iter().any(|v| !v.is_finite()) {
        return gammas;
    }
    let sv = j.clone().svd(false, false).singular_values;
    let mut sorted: Vec<f64> = sv.iter().cloned().collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    for (g, s) in gammas.iter_mut().zip(sorted) {
        *g = s;
    }
    gammas
}

fn eta_from_gammas(gammas: &[f64; 6]) -> (f64, bool) {
    if gammas[4] > 0.0 {
        (gammas[5] / gammas[4], false)
    } else {
        (0.0, true)
    }
}

/// `eta = gamma_6 / gamma_5`, the rank-gap indicator of the final Jacobian.
/// Returns 0 with the degenerate flag when `gamma_5 = 0`.
pub fn eta_indicator(result: &GnResult) -> (f64, bool) {
    eta_from_gammas(&result.gammas)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_params(rng: &mut ChaCha8Rng) -> TriangularParams {
        TriangularParams(std::array::from_fn(|_| rng.random_range(-2.0..2.0)))
    }

    fn random_z(rng: &mut ChaCha8Rng, q: usize) -> Matrix3xX<f64> {
        Matrix3xX::from_fn(q, |_, _| rng.random_range(-1.0..1.0))
    }

    fn unit_z(q: usize) -> Matrix3xX<f64> {
        let cols: Vec<Vector3<f64>> = (0..q)
            .map(|t| {
                let a = t as f64 * 0.9 + 0.2;
                let b = (t as f64 * 1.7).cos() * 0.8;
                Vector3::new(a.cos() * b.cos(), a.sin() * b.cos(), b.sin())
            })
            .collect();
        Matrix3xX::from_columns(&cols)
    }

    #[test]
    fn residual_examples() {
        let z = unit_z(7);
        assert!(residual(&TriangularParams::identity(), &z).amax() < 1e-15);
        let zero = residual(&TriangularParams([0.0; 6]), &z);
        assert!(zero.iter().all(|&v| v == -1.0));
    }

    #[test]
    fn residual_matches_matrix_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let r = random_params(&mut rng);
            let z = random_z(&mut rng, 8);
            let f = residual(&r, &z);
            let rm = r.upper();
            for (t, zt) in z.column_iter().enumerate() {
                let expect = (zt.transpose() * rm.transpose() * rm * zt)[0] - 1.0;
                assert!((f[t] - expect).abs() < 1e-12 * (1.0 + expect.abs()));
            }
        }
    }

    #[test]
    fn jacobian_structural_zeros() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut r = random_params(&mut rng);
        r.0[3] = 0.0;
        r.0[4] = 0.0;
        r.0[5] = 0.0;
        let j = jacobian(&r, &random_z(&mut rng, 6));
        for t in 0..6 {
            assert_eq!(j[(t, 3)], 0.0);
            assert_eq!(j[(t, 4)], 0.0);
            assert_eq!(j[(t, 5)], 0.0);
        }
    }

    #[test]
    fn jacobian_hand_evaluated_at_e3() {
        // R = I, z = e3: a = r13 = 0, b = r23 = 0, c = r33 = 1
        let z = Matrix3xX::from_columns(&[Vector3::z()]);
        let j = jacobian(&TriangularParams::identity(), &z);
        assert_eq!(j.row(0).iter().cloned().collect::<Vec<_>>(), vec![0.0, 0.0, 0.0, 0.0, 0.0, 2.0]);
    }

    #[test]
    fn starts_at_solution() {
        let res = gauss_newton_solve(&unit_z(9), TriangularParams::identity()).unwrap();
        assert!(res.iterations <= 2);
        assert!(res.residual_norm < 1e-12);
        assert!(res.converged);
    }

    #[test]
    fn recovers_a_known_gram() {
        let b = Matrix3::new(1.2, 0.1, -0.2, 0.0, 0.8, 0.3, 0.1, -0.1, 1.1);
        let z = b.try_inverse().unwrap() * unit_z(10);
        let res = gauss_newton_solve(&z, TriangularParams::identity()).unwrap();
        assert!(res.converged, "{res:?}");
        let g = b.transpose() * b;
        assert!((res.gram() - g).norm() < 1e-8 * g.norm());
        assert!(res.residual_trace.windows(2).all(|w| w[1] <= w[0]));
        assert!(res.eta > 0.0 && res.eta <= 1.0);
    }

    #[test]
    fn too_few_columns() {
        assert!(matches!(
            gauss_newton_solve(&unit_z(5), TriangularParams::identity()),
            Err(PsError::Underdetermined { rows: 5 })
        ));
        // the unguarded variant pads gamma_6 with zero
        let res = gauss_newton_with(&unit_z(5), TriangularParams::identity(), &Default::default()).unwrap();
        assert_eq!(res.gammas[5], 0.0);
        assert_eq!(res.eta, 0.0);
    }

    #[test]
    fn eta_examples() {
        let mut res = gauss_newton_solve(&unit_z(9), TriangularParams::identity()).unwrap();
        res.gammas = [3.0, 2.0, 1.5, 1.2, 1.0, 1.0];
        assert_eq!(eta_indicator(&res), (1.0, false));
        res.gammas = [3.0, 2.0, 1.5, 1.2, 1.0, 0.0];
        assert_eq!(eta_indicator(&res), (0.0, false));
        res.gammas = [3.0, 2.0, 1.5, 1.2, 0.0, 0.0];
        assert_eq!(eta_indicator(&res), (0.0, true));
    }

    #[test]
    fn non_finite_start_diverges() {
        let mut r = TriangularParams::identity();
        r.0[0] = f64::NAN;
        assert!(matches!(gauss_newton_solve(&unit_z(8), r), Err(PsError::Divergence { .. })));
    }
}
