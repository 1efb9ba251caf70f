//! Domain types, grid geometry and the Lambertian image-formation model.
//!
//! Pixels are stacked lexicographically with the `x` index running slowest:
//! node `(i, j)` lives at `k = i * (s + 2) + j` (0-based).

use nalgebra::{DMatrix, DVector, Matrix3xX, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{PsError, Result};

/// Pixels whose scaled normal is shorter than this are treated as dark.
pub const DARK_PIXEL_TOLERANCE: f64 = 1e-12;

const UNIT_TOLERANCE: f64 = 1e-9;

/// Rectangular domain `[-A/2, A/2] x [-B/2, B/2]` sampled on an
/// `(r + 2) x (s + 2)` node grid with spacing `h = A / (r + 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGridSpec", into = "RawGridSpec")]
pub struct GridSpec {
    width: f64,
    r: usize,
    s: usize,
}

#[derive(Serialize, Deserialize)]
struct RawGridSpec {
    width: f64,
    r: usize,
    s: usize,
}

impl TryFrom<RawGridSpec> for GridSpec {
    type Error = PsError;

    fn try_from(raw: RawGridSpec) -> Result<Self> {
        GridSpec::new(raw.width, raw.r, raw.s)
    }
}

impl From<GridSpec> for RawGridSpec {
    fn from(g: GridSpec) -> Self {
        RawGridSpec { width: g.width, r: g.r, s: g.s }
    }
}

impl GridSpec {
    pub fn new(width: f64, r: usize, s: usize) -> Result<Self> {
        if !(width.is_finite() && width > 0.0) {
            return Err(PsError::InvalidSpec(format!("width must be positive, got {width}")));
        }
        if r < 1 || s < 1 {
            return Err(PsError::InvalidSpec(format!(
                "interior counts must be at least 1, got r={r}, s={s}"
            )));
        }
        Ok(Self { width, r, s })
    }

    /// Grid for an image of `cols x rows` pixels with unit spacing.
    pub fn for_image(cols: usize, rows: usize) -> Result<Self> {
        if cols < 3 || rows < 3 {
            return Err(PsError::InvalidSpec(format!("image {cols}x{rows} is smaller than 3x3")));
        }
        Self::new((cols - 1) as f64, cols - 2, rows - 2)
    }

    /// Same pixel layout, different physical width.
    pub fn with_width(self, width: f64) -> Result<Self> {
        Self::new(width, self.r, self.s)
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn height(&self) -> f64 {
        (self.s + 1) as f64 * self.spacing()
    }

    pub fn spacing(&self) -> f64 {
        self.width / (self.r + 1) as f64
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn s(&self) -> usize {
        self.s
    }

    /// Number of nodes along `x`.
    pub fn nx(&self) -> usize {
        self.r + 2
    }

    /// Number of nodes along `y`.
    pub fn ny(&self) -> usize {
        self.s + 2
    }

    pub fn node_count(&self) -> usize {
        self.nx() * self.ny()
    }

    pub fn x(&self, i: usize) -> f64 {
        -self.width / 2.0 + i as f64 * self.spacing()
    }

    pub fn y(&self, j: usize) -> f64 {
        -self.height() / 2.0 + j as f64 * self.spacing()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.ny() + j
    }

    #[inline]
    pub fn node(&self, k: usize) -> (usize, usize) {
        (k / self.ny(), k % self.ny())
    }
}

/// Node coordinates `(x_i, y_j)` in lexicographic order.
pub fn grid_coordinates(spec: &GridSpec) -> Vec<(f64, f64)> {
    (0..spec.node_count())
        .map(|k| {
            let (i, j) = spec.node(k);
            (spec.x(i), spec.y(j))
        })
        .collect()
}

/// `p x q` matrix of nonnegative intensities, one column per image.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    values: DMatrix<f64>,
}

impl DataMatrix {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if let Some(bad) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(PsError::InvalidField(format!(
                "intensities must be finite and nonnegative, found {bad}"
            )));
        }
        Ok(Self { values })
    }

    pub fn from_columns(columns: &[DVector<f64>]) -> Result<Self> {
        if columns.is_empty() {
            return Err(PsError::Shape("no image columns".into()));
        }
        let p = columns[0].len();
        if columns.iter().any(|c| c.len() != p) {
            return Err(PsError::Shape("image columns differ in length".into()));
        }
        Self::new(DMatrix::from_columns(columns))
    }

    pub fn p(&self) -> usize {
        self.values.nrows()
    }

    pub fn q(&self) -> usize {
        self.values.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.values
    }

    /// Columns at the given 0-based indices, in the given order.
    pub fn select_columns(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&t| t >= self.q()) {
            return Err(PsError::Shape(format!("column {bad} out of range for q={}", self.q())));
        }
        Ok(Self { values: self.values.select_columns(indices) })
    }
}

/// Unit light directions, one column per image, with optional source distances
/// in units of the domain width (`None` means a source at infinity).
#[derive(Debug, Clone, PartialEq)]
pub struct LightSet {
    directions: Matrix3xX<f64>,
    distances: Vec<Option<f64>>,
}

impl LightSet {
    /// Normalizes every column; zero or non-finite columns are rejected.
    pub fn new(directions: Matrix3xX<f64>) -> Result<Self> {
        let mut directions = directions;
        for (t, mut col) in directions.column_iter_mut().enumerate() {
            let n = col.norm();
            if !(n.is_finite() && n > 0.0) {
                return Err(PsError::InvalidField(format!("light {} has no direction", t + 1)));
            }
            col /= n;
        }
        let q = directions.ncols();
        Ok(Self { directions, distances: vec![None; q] })
    }

    pub fn from_vectors(vectors: &[[f64; 3]]) -> Result<Self> {
        let cols: Vec<Vector3<f64>> = vectors.iter().map(|v| Vector3::new(v[0], v[1], v[2])).collect();
        Self::new(Matrix3xX::from_columns(&cols))
    }

    pub fn with_distances(mut self, distances: Vec<Option<f64>>) -> Result<Self> {
        if distances.len() != self.len() {
            return Err(PsError::Shape(format!(
                "{} distances for {} lights",
                distances.len(),
                self.len()
            )));
        }
        if let Some(d) = distances.iter().flatten().find(|d| !(d.is_finite() && **d > 0.0)) {
            return Err(PsError::InvalidField(format!("light distance must be positive, got {d}")));
        }
        self.distances = distances;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.directions.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn directions(&self) -> &Matrix3xX<f64> {
        &self.directions
    }

    pub fn direction(&self, t: usize) -> Vector3<f64> {
        self.directions.column(t).into_owned()
    }

    pub fn distance(&self, t: usize) -> Option<f64> {
        self.distances[t]
    }

    pub fn distances(&self) -> &[Option<f64>] {
        &self.distances
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            directions: self.directions.select_columns(indices),
            distances: indices.iter().map(|&t| self.distances[t]).collect(),
        }
    }
}

/// Per-pixel unit normals `N` (3 x p) and albedo `D = diag(rho)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalAlbedoField {
    normals: Matrix3xX<f64>,
    albedo: DVector<f64>,
}

impl NormalAlbedoField {
    pub fn new(normals: Matrix3xX<f64>, albedo: DVector<f64>) -> Result<Self> {
        if normals.ncols() != albedo.len() {
            return Err(PsError::Shape(format!(
                "{} normals but {} albedo values",
                normals.ncols(),
                albedo.len()
            )));
        }
        for (k, n) in normals.column_iter().enumerate() {
            if !((n.norm() - 1.0).abs() <= UNIT_TOLERANCE) {
                return Err(PsError::InvalidField(format!("normal {k} is not unit length")));
            }
        }
        if let Some(a) = albedo.iter().find(|a| !(a.is_finite() && **a >= 0.0)) {
            return Err(PsError::InvalidField(format!("albedo must be nonnegative, got {a}")));
        }
        Ok(Self { normals, albedo })
    }

    /// Splits `N~ = N D` into unit normals and albedo. Dark pixels get
    /// albedo 0 and the normal `[0, 0, 1]`.
    pub fn from_scaled(scaled: &Matrix3xX<f64>) -> Result<Self> {
        let p = scaled.ncols();
        let mut normals = Matrix3xX::zeros(p);
        let mut albedo = DVector::zeros(p);
        for (k, col) in scaled.column_iter().enumerate() {
            let rho = col.norm();
            if !rho.is_finite() {
                return Err(PsError::InvalidField(format!("scaled normal {k} is not finite")));
            }
            if rho < DARK_PIXEL_TOLERANCE {
                normals.set_column(k, &Vector3::z());
            } else {
                normals.set_column(k, &(col / rho));
                albedo[k] = rho;
            }
        }
        Ok(Self { normals, albedo })
    }

    /// Uniform albedo over the given normals.
    pub fn with_uniform_albedo(normals: Matrix3xX<f64>, rho: f64) -> Result<Self> {
        let p = normals.ncols();
        Self::new(normals, DVector::from_element(p, rho))
    }

    pub fn p(&self) -> usize {
        self.normals.ncols()
    }

    pub fn normals(&self) -> &Matrix3xX<f64> {
        &self.normals
    }

    pub fn albedo(&self) -> &DVector<f64> {
        &self.albedo
    }

    /// `N~ = N D`.
    pub fn scaled(&self) -> Matrix3xX<f64> {
        let mut out = self.normals.clone();
        for (k, mut col) in out.column_iter_mut().enumerate() {
            col *= self.albedo[k];
        }
        out
    }

    pub fn with_albedo(&self, albedo: DVector<f64>) -> Result<Self> {
        Self::new(self.normals.clone(), albedo)
    }
}

/// Partial derivatives `u_x`, `u_y` sampled at the grid nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    pub ux: Vec<f64>,
    pub uy: Vec<f64>,
}

impl GradientField {
    pub fn new(ux: Vec<f64>, uy: Vec<f64>) -> Result<Self> {
        if ux.len() != uy.len() {
            return Err(PsError::Shape(format!("ux has {} nodes, uy has {}", ux.len(), uy.len())));
        }
        if ux.iter().chain(uy.iter()).any(|v| !v.is_finite()) {
            return Err(PsError::InvalidField("gradient contains non-finite values".into()));
        }
        Ok(Self { ux, uy })
    }

    pub fn zeros(len: usize) -> Self {
        Self { ux: vec![0.0; len], uy: vec![0.0; len] }
    }

    pub fn len(&self) -> usize {
        self.ux.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ux.is_empty()
    }
}

/// Height field `u(x_i, y_j)` on the grid nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceGrid {
    spec: GridSpec,
    heights: DVector<f64>,
}

impl SurfaceGrid {
    pub fn new(spec: GridSpec, heights: DVector<f64>) -> Result<Self> {
        if heights.len() != spec.node_count() {
            return Err(PsError::Shape(format!(
                "{} heights for a grid of {} nodes",
                heights.len(),
                spec.node_count()
            )));
        }
        if heights.iter().any(|v| !v.is_finite()) {
            return Err(PsError::InvalidField("heights contain non-finite values".into()));
        }
        Ok(Self { spec, heights })
    }

    pub fn from_fn(spec: GridSpec, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let heights = DVector::from_iterator(
            spec.node_count(),
            (0..spec.node_count()).map(|k| {
                let (i, j) = spec.node(k);
                f(spec.x(i), spec.y(j))
            }),
        );
        Self::new(spec, heights)
    }

    pub fn flat(spec: GridSpec) -> Self {
        Self { spec, heights: DVector::zeros(spec.node_count()) }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn heights(&self) -> &DVector<f64> {
        &self.heights
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.heights[self.spec.index(i, j)]
    }

    pub fn mean(&self) -> f64 {
        self.heights.mean()
    }

    pub fn max_abs(&self) -> f64 {
        self.heights.amax()
    }
}

/// Unit normals `[-u_x, -u_y, 1] / sqrt(1 + |grad u|^2)`.
pub fn normals_from_gradient(ux: &[f64], uy: &[f64]) -> Result<Matrix3xX<f64>> {
    if ux.len() != uy.len() {
        return Err(PsError::Shape(format!("ux has {} nodes, uy has {}", ux.len(), uy.len())));
    }
    let mut normals = Matrix3xX::zeros(ux.len());
    for (k, (&gx, &gy)) in ux.iter().zip(uy).enumerate() {
        if !(gx.is_finite() && gy.is_finite()) {
            return Err(PsError::InvalidField(format!("non-finite gradient at node {k}")));
        }
        let n = Vector3::new(-gx, -gy, 1.0);
        normals.set_column(k, &(n / n.norm()));
    }
    Ok(normals)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RenderOptions {
    /// Inverse-square intensity falloff for near sources, normalized to 1 at
    /// the domain origin. Off by default.
    #[serde(default)]
    pub falloff: bool,
}

/// Lambertian forward model `m_kt = max(0, rho_k n_k . l_t)`.
///
/// Lights with a finite distance `delta` sit at `delta * A * l_t`; each pixel
/// then sees the unit direction from its surface point `(x_i, y_j, u_ij)`
/// toward the source.
pub fn render_lambertian(
    field: &NormalAlbedoField,
    lights: &LightSet,
    surface: &SurfaceGrid,
    options: RenderOptions,
) -> Result<DataMatrix> {
    let spec = surface.spec();
    if field.p() != spec.node_count() {
        return Err(PsError::Shape(format!(
            "field has {} pixels, grid has {} nodes",
            field.p(),
            spec.node_count()
        )));
    }
    let columns: Vec<DVector<f64>> = (0..lights.len())
        .into_par_iter()
        .map(|t| render_column(field, lights, t, surface, options))
        .collect();
    DataMatrix::new(DMatrix::from_columns(&columns))
}

fn render_column(
    field: &NormalAlbedoField,
    lights: &LightSet,
    t: usize,
    surface: &SurfaceGrid,
    options: RenderOptions,
) -> DVector<f64> {
    let spec = surface.spec();
    let dir = lights.direction(t);
    let normals = field.normals();
    let albedo = field.albedo();
    match lights.distance(t) {
        None => DVector::from_iterator(
            field.p(),
            (0..field.p()).map(|k| (albedo[k] * normals.column(k).dot(&dir)).max(0.0)),
        ),
        Some(delta) => {
            let reach = delta * spec.width();
            let source = dir * reach;
            DVector::from_iterator(
                field.p(),
                (0..field.p()).map(|k| {
                    let (i, j) = spec.node(k);
                    let point = Vector3::new(spec.x(i), spec.y(j), surface.get(i, j));
                    let to_light = source - point;
                    let dist = to_light.norm();
                    let cosine = normals.column(k).dot(&to_light) / dist;
                    let gain = if options.falloff { (reach / dist).powi(2) } else { 1.0 };
                    (albedo[k] * cosine * gain).max(0.0)
                }),
            )
        }
    }
}

/// Known-light solve `N~^T = M L^+`, followed by column normalization.
pub fn normals_from_lights(data: &DataMatrix, lights: &LightSet) -> Result<NormalAlbedoField> {
    let q = data.q();
    if lights.len() != q {
        return Err(PsError::Shape(format!("{} lights for {} images", lights.len(), q)));
    }
    if q < 3 {
        return Err(PsError::TooFewImages { got: q, needed: 3 });
    }
    let l = DMatrix::from_iterator(3, q, lights.directions().iter().cloned());
    let svd = l.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let rank = svd.rank(1e-10 * smax);
    if rank < 3 {
        return Err(PsError::RankDeficientLights { rank });
    }
    // N~ = (L L^T)^{-1} L M^T, the transpose of M L^+ for full-rank L
    let gram = &l * l.transpose();
    let chol = gram
        .cholesky()
        .ok_or(PsError::RankDeficientLights { rank: 2 })?;
    let rhs = &l * data.matrix().transpose();
    let scaled = chol.solve(&rhs);
    let scaled = Matrix3xX::from_iterator(data.p(), scaled.iter().cloned());
    NormalAlbedoField::from_scaled(&scaled)
}
