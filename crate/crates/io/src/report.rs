//! Serializable summaries of pipeline results.

use psideal_core::{relative_error_inf, LightEstimate, LightMethod, Reconstruction, Result, SurfaceGrid};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LightReport {
    pub method: LightMethod,
    /// 1-based image indices, one per light.
    pub images: Vec<usize>,
    /// Unit light directions after alignment.
    pub lights: Vec<[f64; 3]>,
    pub flipped: bool,
    pub reflection: bool,
    pub lambda3: f64,
    pub singular_values: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gauss_newton_iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    /// Gauss-Newton drove every unit-norm residual below tolerance.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gauss_newton_converged: Option<bool>,
}

impl LightReport {
    /// `images` are the 1-based indices of the columns the estimate used.
    pub fn new(est: &LightEstimate, images: Vec<usize>) -> Self {
        Self {
            method: est.method,
            images,
            lights: est.lights.directions().column_iter().map(|c| [c[0], c[1], c[2]]).collect(),
            flipped: est.flipped,
            reflection: est.alignment.reflection,
            lambda3: est.gram.lambda3,
            singular_values: est.singular_values.clone(),
            gauss_newton_iterations: est.gauss_newton.as_ref().map(|g| g.iterations),
            eta: est.gauss_newton.as_ref().map(|g| g.eta),
            gauss_newton_converged: est.gauss_newton.as_ref().map(|g| g.converged),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionReport {
    /// 1-based indices of the images used, ascending.
    pub kept: Vec<usize>,
    pub estimate: LightReport,
    /// Nodes with near-grazing normals, integrated with a zero gradient.
    pub masked: usize,
    /// `|u - truth|_inf / |truth|_inf` after mean alignment, when the true
    /// surface is known.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub relative_error: Option<f64>,
}

impl ReconstructionReport {
    pub fn new(rec: &Reconstruction, truth: Option<&SurfaceGrid>) -> Result<Self> {
        let kept: Vec<usize> = rec.kept.iter().map(|t| t + 1).collect();
        Ok(Self {
            estimate: LightReport::new(&rec.estimate, kept.clone()),
            kept,
            masked: rec.masked,
            relative_error: truth.map(|t| relative_error_inf(&rec.surface, t)).transpose()?,
        })
    }
}
