//! Dataset ideality indicators and greedy removal of non-ideal images.
//!
//! Both removal procedures work on the `q x q` triangular factor of `M`
//! rather than `M` itself: any column subset of `M` has the same singular
//! values and right singular vectors as the matching columns of that factor,
//! so re-factoring a reduced dataset never touches the `p`-long pixel axis.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, Matrix3xX};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{PsError, Result};
use crate::linalg::{argmax_first, thin_svd, triangular_factor};
use crate::linear::{build_h, cholesky_factor, fit_gram, leading_right_vectors, solve_gram, MIN_IMAGES};
use crate::model::DataMatrix;
use crate::nonlinear::{gauss_newton_with, GaussNewtonOptions, GnResult, TriangularParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScreeningMethod {
    /// Linear screening, SVD recomputed after every removal.
    Algo1,
    /// Linear screening reusing the initial factor.
    Algo1Fast,
    /// Nonlinear screening, one SVD per candidate.
    Algo2,
    /// Nonlinear screening, one SVD per outer iteration.
    Algo2Fast,
}

impl ScreeningMethod {
    pub const ALL: [ScreeningMethod; 4] = [
        ScreeningMethod::Algo1,
        ScreeningMethod::Algo1Fast,
        ScreeningMethod::Algo2,
        ScreeningMethod::Algo2Fast,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ScreeningMethod::Algo1 => "algo1",
            ScreeningMethod::Algo1Fast => "algo1-fast",
            ScreeningMethod::Algo2 => "algo2",
            ScreeningMethod::Algo2Fast => "algo2-fast",
        }
    }

    pub fn is_fast(&self) -> bool {
        matches!(self, ScreeningMethod::Algo1Fast | ScreeningMethod::Algo2Fast)
    }

    pub fn run(&self, data: &DataMatrix) -> Result<IdealityReport> {
        match self {
            ScreeningMethod::Algo1 | ScreeningMethod::Algo1Fast => screen_linear(data, self.is_fast()),
            ScreeningMethod::Algo2 | ScreeningMethod::Algo2Fast => screen_nonlinear(data, self.is_fast()),
        }
    }
}

impl fmt::Display for ScreeningMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScreeningMethod {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown screening method `{s}`"))
    }
}

/// Ideality indicators of one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Indicators {
    pub sigma4: f64,
    /// `sigma_4 / sigma_3`
    pub rank_gap: f64,
    /// Smallest eigenvalue of the fitted Gram matrix.
    pub lambda3: f64,
    /// `gamma_6 / gamma_5` of the Gauss-Newton Jacobian at its last iterate.
    pub eta: f64,
    /// Cholesky of `G` is impossible.
    pub breakdown: bool,
    pub gn_converged: bool,
}

/// One image removal: the image chosen and the score that chose it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemovalStep {
    /// 1-based original image index.
    pub image: usize,
    /// `mu_k` (largest candidate `lambda_3`) or `rho_k` (largest candidate `eta`).
    pub score: f64,
    /// Put back by the final stopping rule.
    pub restored: bool,
    /// Every candidate evaluated in this round as `(image, score)`.
    pub candidates: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdealityReport {
    pub method: ScreeningMethod,
    pub images: usize,
    pub indicators: Option<Indicators>,
    pub trace: Vec<RemovalStep>,
    /// 1-based indices kept, ascending.
    pub kept: Vec<usize>,
    /// 1-based indices excluded, in removal order.
    pub excluded: Vec<usize>,
    pub breakdown: bool,
    pub failure: Option<String>,
}

impl IdealityReport {
    /// Report for a variant that could not run.
    pub fn failed(method: ScreeningMethod, images: usize, indicators: Option<Indicators>, err: &PsError) -> Self {
        let breakdown = matches!(err, PsError::UnrecoverableBreakdown { .. })
            || indicators.as_ref().is_some_and(|i| i.breakdown);
        Self {
            method,
            images,
            indicators,
            trace: Vec::new(),
            kept: (1..=images).collect(),
            excluded: Vec::new(),
            breakdown,
            failure: Some(err.to_string()),
        }
    }

    /// Renumbers images after screening a column subset: image `t` of the
    /// subset becomes `labels[t - 1]`. `kept` stays sorted.
    pub fn relabel(mut self, labels: &[usize]) -> Result<Self> {
        if labels.len() != self.images {
            return Err(PsError::Shape(format!("{} labels for {} images", labels.len(), self.images)));
        }
        let map = |t: usize| labels[t - 1];
        for step in &mut self.trace {
            step.image = map(step.image);
            step.candidates.iter_mut().for_each(|c| c.0 = map(c.0));
        }
        self.kept = self.kept.iter().map(|&t| map(t)).collect();
        self.kept.sort_unstable();
        self.excluded = self.excluded.iter().map(|&t| map(t)).collect();
        Ok(self)
    }
}

fn check_images(data: &DataMatrix) -> Result<()> {
    if data.q() < MIN_IMAGES {
        return Err(PsError::TooFewImages { got: data.q(), needed: MIN_IMAGES });
    }
    if data.p() < data.q() {
        return Err(PsError::Shape(format!(
            "need at least as many pixels as images, got {}x{}",
            data.p(),
            data.q()
        )));
    }
    Ok(())
}

/// `(sigma_4, sigma_4/sigma_3, lambda_3(G), eta)` from one SVD, one Gram fit
/// and one Gauss-Newton solve.
pub fn indicators(data: &DataMatrix) -> Result<Indicators> {
    check_images(data)?;
    indicators_of(&triangular_factor(data.matrix()))
}

fn indicators_of(factor: &DMatrix<f64>) -> Result<Indicators> {
    let svd = thin_svd(factor, false, true);
    let sigma = &svd.singular_values;
    if sigma[0] == 0.0 {
        return Err(PsError::DegenerateData);
    }
    let v_t = svd.v_t.expect("v requested");
    let mut z = Matrix3xX::zeros(factor.ncols());
    for i in 0..3 {
        z.row_mut(i).copy_from(&v_t.row(i));
    }
    let gram = solve_gram(&build_h(&z))?;
    let breakdown = cholesky_factor(&gram.matrix).is_err();
    let gn = run_gn(&z);
    let s3 = sigma[2];
    let s4 = sigma.get(3).copied().unwrap_or(0.0);
    Ok(Indicators {
        sigma4: s4,
        rank_gap: if s3 > 0.0 { s4 / s3 } else { f64::INFINITY },
        lambda3: gram.lambda3,
        eta: gn.eta,
        breakdown,
        gn_converged: gn.converged,
    })
}

/// Gauss-Newton from the identity; a diverged run still reports its last
/// iterate.
fn run_gn(z: &Matrix3xX<f64>) -> GnResult {
    match gauss_newton_with(z, TriangularParams::identity(), &GaussNewtonOptions::default()) {
        Ok(res) => res,
        Err(PsError::Divergence { last }) => *last,
        Err(other) => unreachable!("unguarded Gauss-Newton only fails by divergence: {other}"),
    }
}

fn drop_column(m: &Matrix3xX<f64>, i: usize) -> Matrix3xX<f64> {
    m.clone().remove_column(i)
}

struct Removal {
    trace: Vec<RemovalStep>,
    kept: Vec<usize>,
}

/// Shared outer loop: score every candidate, remove the argmax, stop when
/// the score decreases or six images remain, then restore the last removal.
fn greedy_removal(
    q: usize,
    fatal_first: bool,
    mut score_round: impl FnMut(&[usize]) -> Vec<f64>,
) -> Result<Removal> {
    let mut kept: Vec<usize> = (0..q).collect();
    let mut trace: Vec<RemovalStep> = Vec::new();
    let mut previous = 0.0;
    loop {
        let scores = score_round(&kept);
        let best = argmax_first(&scores);
        let best_score = best.map(|l| scores[l]).unwrap_or(f64::NAN);
        if fatal_first && trace.is_empty() && !(best_score > 0.0) {
            return Err(PsError::UnrecoverableBreakdown { lambda_max: best_score });
        }
        // all-NaN rounds only happen for pathological data; fall back to the first candidate
        let l = best.unwrap_or(0);
        let candidates = kept.iter().zip(&scores).map(|(&t, &s)| (t + 1, s)).collect();
        let t = kept.remove(l);
        trace.push(RemovalStep { image: t + 1, score: best_score, restored: false, candidates });
        if best_score < previous || kept.len() <= MIN_IMAGES || best.is_none() {
            break;
        }
        previous = best_score;
    }
    let last = trace.last_mut().expect("at least one round");
    last.restored = true;
    kept.push(last.image - 1);
    kept.sort_unstable();
    Ok(Removal { trace, kept })
}

fn finish(
    method: ScreeningMethod,
    q: usize,
    indicators: Option<Indicators>,
    removal: Removal,
) -> IdealityReport {
    let breakdown = indicators.as_ref().is_some_and(|i| i.breakdown);
    IdealityReport {
        method,
        images: q,
        indicators,
        excluded: removal.trace.iter().filter(|s| !s.restored).map(|s| s.image).collect(),
        kept: removal.kept.iter().map(|t| t + 1).collect(),
        trace: removal.trace,
        breakdown,
        failure: None,
    }
}

/// Linear screening: drop each row of `H` in turn, score by the smallest
/// eigenvalue of the refitted `G`, and remove the best-scoring image.
pub fn screen_linear(data: &DataMatrix, fast: bool) -> Result<IdealityReport> {
    check_images(data)?;
    let method = if fast { ScreeningMethod::Algo1Fast } else { ScreeningMethod::Algo1 };
    let factor = triangular_factor(data.matrix());
    let indicators = indicators_of(&factor).ok();
    let initial = leading_right_vectors(&factor);
    let removal = greedy_removal(data.q(), true, |kept| {
        let lights = if fast || kept.len() == data.q() {
            initial.select_columns(kept)
        } else {
            leading_right_vectors(&factor.select_columns(kept))
        };
        let h = build_h(&lights);
        (0..kept.len())
            .into_par_iter()
            .map(|i| fit_gram(&h.clone().remove_row(i)).lambda3)
            .collect()
    })?;
    Ok(finish(method, data.q(), indicators, removal))
}

/// Nonlinear screening: for each candidate, rerun Gauss-Newton without it
/// and score by `eta = gamma_6 / gamma_5`.
pub fn screen_nonlinear(data: &DataMatrix, fast: bool) -> Result<IdealityReport> {
    check_images(data)?;
    let method = if fast { ScreeningMethod::Algo2Fast } else { ScreeningMethod::Algo2 };
    let factor = triangular_factor(data.matrix());
    let indicators = indicators_of(&factor).ok();
    let removal = greedy_removal(data.q(), false, |kept| {
        let shared = fast.then(|| leading_right_vectors(&factor.select_columns(kept)));
        (0..kept.len())
            .into_par_iter()
            .map(|i| {
                let lights = match &shared {
                    Some(l) => drop_column(l, i),
                    None => {
                        let mut rest = kept.to_vec();
                        rest.remove(i);
                        leading_right_vectors(&factor.select_columns(&rest))
                    }
                };
                run_gn(&lights).eta
            })
            .collect()
    })?;
    Ok(finish(method, data.q(), indicators, removal))
}

/// All four screening variants; a failing variant yields a report with
/// `failure` set instead of aborting the batch.
pub fn compare_methods(data: &DataMatrix) -> Vec<IdealityReport> {
    let indicators = indicators(data).ok();
    ScreeningMethod::ALL
        .iter()
        .map(|m| m.run(data).unwrap_or_else(|e| IdealityReport::failed(*m, data.q(), indicators.clone(), &e)))
        .collect()
}
