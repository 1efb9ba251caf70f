//! Job parameters, validation and the blocking work each job performs.

use std::collections::BTreeMap;
use std::fmt;
use std::time::Duration;

use psideal_core::{
    indicators, reconstruct, screening::IdealityReport, GridSpec, LightMethod, LightSet, PsError,
    ScreeningMethod, SurfaceGrid,
};
use psideal_io::{albedo_map, normal_map, obj_string, raster::png_bytes, surface_csv, to_json, ReconstructionReport};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::MIN_KEPT;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobKind {
    Screen,
    Reconstruct,
    Indicators,
}

impl fmt::Display for JobKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            JobKind::Screen => "screen",
            JobKind::Reconstruct => "reconstruct",
            JobKind::Indicators => "indicators",
        })
    }
}

/// Body of `POST /jobs`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobRequest {
    pub kind: JobKind,
    /// `algo1 | algo1-fast | algo2 | algo2-fast | all` for screening (default
    /// `all`), `linear | nonlinear` for reconstruction (default `linear`).
    #[serde(default)]
    pub method: Option<String>,
    /// 1-based image indices; all images when absent.
    #[serde(default)]
    pub kept: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    None,
    Screen(Option<ScreeningMethod>),
    Light(LightMethod),
}

impl Method {
    pub fn label(&self) -> Option<String> {
        match self {
            Method::None => None,
            Method::Screen(None) => Some("all".into()),
            Method::Screen(Some(m)) => Some(m.to_string()),
            Method::Light(m) => Some(m.to_string()),
        }
    }
}

/// Validated parameters; also the cache key.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct JobParams {
    pub kind: JobKind,
    pub method: Method,
    /// 1-based, ascending, distinct.
    pub kept: Vec<usize>,
}

impl JobParams {
    pub fn validate(req: JobRequest, images: usize) -> Result<Self, String> {
        let mut kept = req.kept.unwrap_or_else(|| (1..=images).collect());
        if let Some(bad) = kept.iter().find(|&&t| t < 1 || t > images) {
            return Err(format!("image {bad} is outside 1..{images}"));
        }
        kept.sort_unstable();
        if kept.windows(2).any(|w| w[0] == w[1]) {
            return Err("kept images must be distinct".into());
        }
        if kept.len() < MIN_KEPT {
            return Err(format!(
                "at least six images are needed to estimate the lights, {} kept",
                kept.len()
            ));
        }
        let method = match (req.kind, req.method.as_deref()) {
            (JobKind::Indicators, None) => Method::None,
            (JobKind::Indicators, Some(m)) => return Err(format!("indicators take no method, got `{m}`")),
            (JobKind::Screen, None | Some("all")) => Method::Screen(None),
            (JobKind::Screen, Some(m)) => Method::Screen(Some(m.parse()?)),
            (JobKind::Reconstruct, None) => Method::Light(LightMethod::Linear),
            (JobKind::Reconstruct, Some(m)) => Method::Light(m.parse()?),
        };
        Ok(Self { kind: req.kind, method, kept })
    }

    fn columns(&self) -> Vec<usize> {
        self.kept.iter().map(|t| t - 1).collect()
    }
}

/// Read-only inputs shared by all jobs.
pub struct Workspace {
    pub data: psideal_core::DataMatrix,
    pub grid: Option<GridSpec>,
    pub lights: Option<LightSet>,
    pub truth: Option<SurfaceGrid>,
}

#[derive(Debug, Clone, Serialize)]
pub struct JobFailure {
    pub message: String,
    /// Smallest Gram eigenvalue when the failure is a Cholesky breakdown.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda3: Option<f64>,
}

impl From<PsError> for JobFailure {
    fn from(e: PsError) -> Self {
        let lambda3 = match e {
            PsError::Breakdown { lambda3 } => Some(lambda3),
            PsError::UnrecoverableBreakdown { lambda_max } => Some(lambda_max),
            _ => None,
        };
        Self { message: e.to_string(), lambda3 }
    }
}

pub struct Artifact {
    pub content_type: &'static str,
    pub bytes: Vec<u8>,
}

pub struct JobOutput {
    pub result: Value,
    pub artifacts: BTreeMap<&'static str, Artifact>,
}

pub struct Finished {
    pub outcome: Result<JobOutput, JobFailure>,
    pub elapsed: Duration,
}

pub fn run(ws: &Workspace, params: &JobParams) -> Result<JobOutput, JobFailure> {
    let cols = params.columns();
    let subset = ws.data.select_columns(&cols)?;
    let result = match params.method {
        Method::None => json!({ "indicators": indicators(&subset)? }),
        Method::Screen(choice) => {
            let methods = choice.map_or(ScreeningMethod::ALL.to_vec(), |m| vec![m]);
            let shared = indicators(&subset).ok();
            let mut reports = Vec::with_capacity(methods.len());
            for m in methods {
                let report = match m.run(&subset) {
                    Ok(r) => r,
                    Err(e) if choice.is_some() => return Err(e.into()),
                    Err(e) => IdealityReport::failed(m, subset.q(), shared.clone(), &e),
                };
                reports.push(report.relabel(&params.kept)?);
            }
            json!({ "reports": reports })
        }
        Method::Light(method) => return reconstruct_job(ws, params, &cols, method),
    };
    Ok(finish(params, result, BTreeMap::new()))
}

fn reconstruct_job(ws: &Workspace, params: &JobParams, cols: &[usize], method: LightMethod) -> Result<JobOutput, JobFailure> {
    let grid = ws.grid.ok_or_else(|| JobFailure {
        message: "images are too small to form a grid".into(),
        lambda3: None,
    })?;
    let reference = ws.lights.as_ref().map(|l| l.directions());
    let rec = reconstruct(&ws.data, &grid, Some(cols), method, reference)?;
    let report = ReconstructionReport::new(&rec, ws.truth.as_ref())?;
    let field = &rec.estimate.field;
    let png = |bytes| Artifact { content_type: "image/png", bytes };
    let text = |s: String| Artifact { content_type: "text/plain; charset=utf-8", bytes: s.into_bytes() };
    let to_failure = |e: psideal_io::IoError| JobFailure { message: e.to_string(), lambda3: None };
    let mut artifacts = BTreeMap::new();
    artifacts.insert("normals.png", png(png_bytes(&normal_map(field, &grid).map_err(to_failure)?)));
    artifacts.insert("albedo.png", png(png_bytes(&albedo_map(field, &grid).map_err(to_failure)?)));
    artifacts.insert("surface.obj", text(obj_string(&rec.surface)));
    artifacts.insert("heights.csv", text(surface_csv(&rec.surface)));
    Ok(finish(params, serde_json::to_value(report).expect("plain report"), artifacts))
}

/// Stamps the job parameters into the result and adds the `report` artifact.
fn finish(params: &JobParams, mut result: Value, mut artifacts: BTreeMap<&'static str, Artifact>) -> JobOutput {
    let obj = result.as_object_mut().expect("results are objects");
    obj.insert("kind".into(), json!(params.kind));
    obj.insert("method".into(), json!(params.method.label()));
    obj.insert("kept".into(), json!(params.kept));
    artifacts.insert(
        "report",
        Artifact { content_type: "application/json", bytes: to_json(&result).into_bytes() },
    );
    JobOutput { result, artifacts }
}
