//! Data matrix to height field: light estimation, alignment, normals and
//! integration.

use std::fmt;
use std::str::FromStr;

use nalgebra::Matrix3xX;
use serde::{Deserialize, Serialize};

use crate::error::{PsError, Result};
use crate::integrate::{gradients_from_normals, integrate_poisson};
use crate::linear::{
    align_lights, apply_alignment, build_h, estimate_lights_linear, fit_gram, mix_factors, rank3_factor,
    Alignment, GramCandidate, MIN_IMAGES,
};
use crate::model::{DataMatrix, GridSpec, LightSet, NormalAlbedoField, SurfaceGrid};
use crate::nonlinear::{gauss_newton_solve, GnResult, TriangularParams};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LightMethod {
    #[default]
    Linear,
    Nonlinear,
}

impl LightMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            LightMethod::Linear => "linear",
            LightMethod::Nonlinear => "nonlinear",
        }
    }
}

impl fmt::Display for LightMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LightMethod {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "linear" => Ok(LightMethod::Linear),
            "nonlinear" => Ok(LightMethod::Nonlinear),
            other => Err(format!("unknown light method `{other}`")),
        }
    }
}

/// Estimated lights and normals after orientation is fixed.
#[derive(Debug, Clone)]
pub struct LightEstimate {
    pub method: LightMethod,
    /// Aligned lights `Q L_0` (not renormalized).
    pub raw_lights: Matrix3xX<f64>,
    pub lights: LightSet,
    pub field: NormalAlbedoField,
    pub alignment: Alignment,
    /// Lights and normals were negated to make the surface face the camera.
    pub flipped: bool,
    pub gram: GramCandidate,
    pub gauss_newton: Option<GnResult>,
    pub singular_values: Vec<f64>,
}

/// Estimates lights with the chosen method, aligns them to `reference` when
/// given (orthogonal Procrustes) and splits the scaled normals.
pub fn estimate_lights(
    data: &DataMatrix,
    method: LightMethod,
    reference: Option<&Matrix3xX<f64>>,
) -> Result<LightEstimate> {
    if data.q() < MIN_IMAGES {
        return Err(PsError::TooFewImages { got: data.q(), needed: MIN_IMAGES });
    }
    let (l0, n0, gram, gn, sv) = match method {
        LightMethod::Linear => {
            let est = estimate_lights_linear(data)?;
            let sv = est.factorization.singular_values.iter().cloned().collect();
            (est.lights, est.scaled_normals, est.gram, None, sv)
        }
        LightMethod::Nonlinear => {
            let fac = rank3_factor(data)?;
            let gram = fit_gram(&build_h(&fac.z));
            // on noisy data the residual cannot vanish; the stationary point
            // is still the least-squares estimate, flagged by `converged`
            let gn = gauss_newton_solve(&fac.z, TriangularParams::identity())?;
            let (l0, n0) = mix_factors(&gn.solution.upper(), &fac)?;
            let sv = fac.singular_values.iter().cloned().collect();
            (l0, n0, gram, Some(gn), sv)
        }
    };
    let alignment = match reference {
        Some(r) => align_lights(&l0, r)?,
        None => Alignment::identity(),
    };
    let (raw_lights, scaled, flipped) = apply_alignment(&alignment, &l0, &n0);
    Ok(LightEstimate {
        method,
        lights: LightSet::new(raw_lights.clone())?,
        raw_lights,
        field: NormalAlbedoField::from_scaled(&scaled)?,
        alignment,
        flipped,
        gram,
        gauss_newton: gn,
        singular_values: sv,
    })
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    /// 0-based indices of the images used.
    pub kept: Vec<usize>,
    pub estimate: LightEstimate,
    pub surface: SurfaceGrid,
    /// Nodes whose normal was too close to grazing to invert.
    pub masked: usize,
}

/// Full pipeline on the columns `kept` (0-based; `None` keeps all).
/// `reference` holds one reference light per column of `data`.
pub fn reconstruct(
    data: &DataMatrix,
    spec: &GridSpec,
    kept: Option<&[usize]>,
    method: LightMethod,
    reference: Option<&Matrix3xX<f64>>,
) -> Result<Reconstruction> {
    if data.p() != spec.node_count() {
        return Err(PsError::Shape(format!(
            "data has {} pixels, grid has {} nodes",
            data.p(),
            spec.node_count()
        )));
    }
    let kept: Vec<usize> = kept.map(<[usize]>::to_vec).unwrap_or_else(|| (0..data.q()).collect());
    let subset = data.select_columns(&kept)?;
    let reference = match reference {
        Some(r) if r.ncols() != data.q() => {
            return Err(PsError::Shape(format!("{} reference lights for {} images", r.ncols(), data.q())));
        }
        Some(r) => Some(r.select_columns(&kept)),
        None => None,
    };
    let estimate = estimate_lights(&subset, method, reference.as_ref())?;
    let (gradient, mask) = gradients_from_normals(&estimate.field);
    let surface = integrate_poisson(&gradient, spec)?;
    Ok(Reconstruction {
        kept,
        estimate,
        surface,
        masked: mask.iter().filter(|m| **m).count(),
    })
}

/// Angle in radians between two vectors.
pub fn angle_between(a: &nalgebra::Vector3<f64>, b: &nalgebra::Vector3<f64>) -> f64 {
    a.cross(b).norm().atan2(a.dot(b))
}
