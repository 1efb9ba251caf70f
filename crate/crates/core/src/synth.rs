//! Synthetic photometric-stereo datasets with controlled non-idealities.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{DVector, Matrix3xX, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{PsError, Result};
use crate::model::{
    normals_from_gradient, render_lambertian, DataMatrix, GradientField, GridSpec, LightSet,
    NormalAlbedoField, RenderOptions, SurfaceGrid,
};

/// Closed-form height functions `u(x, y)` with analytic gradients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SurfaceKind {
    Plane {
        slope_x: f64,
        slope_y: f64,
    },
    /// `xx x^2 + yy y^2 + xy x y`
    Quadratic {
        xx: f64,
        yy: f64,
        xy: f64,
    },
    GaussianBump {
        amplitude: f64,
        width: f64,
        #[serde(default)]
        center_x: f64,
        #[serde(default)]
        center_y: f64,
    },
    /// Two Gaussian bumps of equal width centred at `(-separation/2, 0)` and
    /// `(separation/2, 0)`; the second one is 60% as tall.
    TwoBumps {
        amplitude: f64,
        width: f64,
        separation: f64,
    },
    /// `amplitude sin(k x) cos(k y)` with `k = 2 pi / wavelength`
    Sinusoid {
        amplitude: f64,
        wavelength: f64,
    },
}

fn gaussian(x: f64, y: f64, cx: f64, cy: f64, width: f64) -> f64 {
    (-((x - cx).powi(2) + (y - cy).powi(2)) / (2.0 * width * width)).exp()
}

impl SurfaceKind {
    /// Looks up a surface by name. Missing parameters take defaults scaled to
    /// the domain width; unknown parameter names are rejected.
    pub fn from_name(name: &str, params: &BTreeMap<String, f64>, spec: &GridSpec) -> Result<Self> {
        let a = spec.width();
        let allowed: &[&str] = match name {
            "plane" => &["slope_x", "slope_y"],
            "quadratic" => &["xx", "yy", "xy"],
            "gaussian_bump" => &["amplitude", "width", "center_x", "center_y"],
            "two_bumps" => &["amplitude", "width", "separation"],
            "sinusoid" => &["amplitude", "wavelength"],
            other => return Err(PsError::UnknownSurface(other.to_string())),
        };
        if let Some(key) = params.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(PsError::InvalidScenario(format!("surface `{name}` has no parameter `{key}`")));
        }
        let get = |key: &str, default: f64| params.get(key).copied().unwrap_or(default);
        let kind = match name {
            "plane" => SurfaceKind::Plane { slope_x: get("slope_x", 0.0), slope_y: get("slope_y", 0.0) },
            "quadratic" => SurfaceKind::Quadratic {
                xx: get("xx", 0.35 / a),
                yy: get("yy", 0.35 / a),
                xy: get("xy", 0.0),
            },
            "gaussian_bump" => SurfaceKind::GaussianBump {
                amplitude: get("amplitude", 1.0),
                width: get("width", a / 4.0),
                center_x: get("center_x", 0.0),
                center_y: get("center_y", 0.0),
            },
            "two_bumps" => SurfaceKind::TwoBumps {
                amplitude: get("amplitude", a / 8.0),
                width: get("width", a / 8.0),
                separation: get("separation", a / 2.0),
            },
            _ => SurfaceKind::Sinusoid {
                amplitude: get("amplitude", a / 20.0),
                wavelength: get("wavelength", a / 2.0),
            },
        };
        kind.validate()?;
        Ok(kind)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            SurfaceKind::Plane { slope_x, slope_y } => slope_x.is_finite() && slope_y.is_finite(),
            SurfaceKind::Quadratic { xx, yy, xy } => xx.is_finite() && yy.is_finite() && xy.is_finite(),
            SurfaceKind::GaussianBump { amplitude, width, center_x, center_y } => {
                amplitude.is_finite() && width > 0.0 && center_x.is_finite() && center_y.is_finite()
            }
            SurfaceKind::TwoBumps { amplitude, width, separation } => {
                amplitude.is_finite() && width > 0.0 && separation.is_finite()
            }
            SurfaceKind::Sinusoid { amplitude, wavelength } => amplitude.is_finite() && wavelength > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(PsError::InvalidScenario(format!("invalid surface parameters: {self:?}")))
        }
    }

    pub fn height(&self, x: f64, y: f64) -> f64 {
        match *self {
            SurfaceKind::Plane { slope_x, slope_y } => slope_x * x + slope_y * y,
            SurfaceKind::Quadratic { xx, yy, xy } => xx * x * x + yy * y * y + xy * x * y,
            SurfaceKind::GaussianBump { amplitude, width, center_x, center_y } => {
                amplitude * gaussian(x, y, center_x, center_y, width)
            }
            SurfaceKind::TwoBumps { amplitude, width, separation } => {
                let d = separation / 2.0;
                amplitude * (gaussian(x, y, -d, 0.0, width) + 0.6 * gaussian(x, y, d, 0.0, width))
            }
            SurfaceKind::Sinusoid { amplitude, wavelength } => {
                let k = 2.0 * PI / wavelength;
                amplitude * (k * x).sin() * (k * y).cos()
            }
        }
    }

    pub fn gradient(&self, x: f64, y: f64) -> (f64, f64) {
        match *self {
            SurfaceKind::Plane { slope_x, slope_y } => (slope_x, slope_y),
            SurfaceKind::Quadratic { xx, yy, xy } => (2.0 * xx * x + xy * y, 2.0 * yy * y + xy * x),
            SurfaceKind::GaussianBump { amplitude, width, center_x, center_y } => {
                let u = amplitude * gaussian(x, y, center_x, center_y, width);
                let w2 = width * width;
                (-u * (x - center_x) / w2, -u * (y - center_y) / w2)
            }
            SurfaceKind::TwoBumps { amplitude, width, separation } => {
                let d = separation / 2.0;
                let w2 = width * width;
                let left = amplitude * gaussian(x, y, -d, 0.0, width);
                let right = 0.6 * amplitude * gaussian(x, y, d, 0.0, width);
                (
                    -(left * (x + d) + right * (x - d)) / w2,
                    -(left + right) * y / w2,
                )
            }
            SurfaceKind::Sinusoid { amplitude, wavelength } => {
                let k = 2.0 * PI / wavelength;
                (
                    amplitude * k * (k * x).cos() * (k * y).cos(),
                    -amplitude * k * (k * x).sin() * (k * y).sin(),
                )
            }
        }
    }

    pub fn sample(&self, spec: &GridSpec) -> Result<SurfaceGrid> {
        SurfaceGrid::from_fn(*spec, |x, y| self.height(x, y))
    }

    pub fn gradient_field(&self, spec: &GridSpec) -> Result<GradientField> {
        let (ux, uy): (Vec<f64>, Vec<f64>) = (0..spec.node_count())
            .map(|k| {
                let (i, j) = spec.node(k);
                self.gradient(spec.x(i), spec.y(j))
            })
            .unzip();
        GradientField::new(ux, uy)
    }
}

/// Samples a named analytic surface on the grid.
pub fn builtin_surface(name: &str, params: &BTreeMap<String, f64>, spec: &GridSpec) -> Result<SurfaceGrid> {
    SurfaceKind::from_name(name, params, spec)?.sample(spec)
}

pub const TWO_TONE_LIGHT: f64 = 1.0;
pub const TWO_TONE_DARK: f64 = 0.55;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AlbedoPattern {
    Constant { value: f64 },
    /// Checkerboard of square blocks, `block` nodes wide, alternating
    /// between 1.0 and 0.55.
    TwoTone { block: usize },
}

impl Default for AlbedoPattern {
    fn default() -> Self {
        AlbedoPattern::Constant { value: 1.0 }
    }
}

impl AlbedoPattern {
    fn validate(&self) -> Result<()> {
        match *self {
            AlbedoPattern::Constant { value } if value > 0.0 && value <= 1.0 => Ok(()),
            AlbedoPattern::TwoTone { block } if block > 0 => Ok(()),
            other => Err(PsError::InvalidScenario(format!("invalid albedo pattern {other:?}"))),
        }
    }

    pub fn sample(&self, spec: &GridSpec) -> DVector<f64> {
        DVector::from_iterator(
            spec.node_count(),
            (0..spec.node_count()).map(|k| match *self {
                AlbedoPattern::Constant { value } => value,
                AlbedoPattern::TwoTone { block } => {
                    let (i, j) = spec.node(k);
                    if (i / block + j / block) % 2 == 0 {
                        TWO_TONE_LIGHT
                    } else {
                        TWO_TONE_DARK
                    }
                }
            }),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LightConfig {
    DefaultNine,
    Explicit { directions: Vec<[f64; 3]> },
}

impl Default for LightConfig {
    fn default() -> Self {
        LightConfig::DefaultNine
    }
}

impl LightConfig {
    pub fn build(&self) -> Result<LightSet> {
        match self {
            LightConfig::DefaultNine => Ok(default_nine_lights()),
            LightConfig::Explicit { directions } => LightSet::from_vectors(directions),
        }
    }
}

/// One non-ideal image: re-rendered with a near source and/or perturbed by
/// Gaussian noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Corruption {
    /// 1-based image index.
    pub image: usize,
    /// Source distance in units of the domain width; absent means infinity.
    #[serde(default)]
    pub distance: Option<f64>,
    #[serde(default)]
    pub noise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScenario {
    pub grid: GridSpec,
    pub surface: SurfaceKind,
    #[serde(default)]
    pub albedo: AlbedoPattern,
    #[serde(default)]
    pub lights: LightConfig,
    #[serde(default)]
    pub corruptions: Vec<Corruption>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub render: RenderOptions,
}

impl SyntheticScenario {
    /// Near-light experiment: 101x101 nodes on `[-1, 1]^2`, the default nine
    /// lights over a two-bump surface with a two-tone texture, and image 3
    /// replaced by a render from distance `delta` (`None` keeps it at
    /// infinity) plus noise of standard deviation `noise`.
    pub fn near_light(delta: Option<f64>, noise: f64) -> Self {
        Self {
            grid: GridSpec::new(2.0, 99, 99).expect("valid grid"),
            surface: SurfaceKind::TwoBumps { amplitude: 0.25, width: 0.25, separation: 0.9 },
            albedo: AlbedoPattern::TwoTone { block: 20 },
            lights: LightConfig::DefaultNine,
            corruptions: vec![Corruption { image: 3, distance: delta, noise }],
            seed: 2024,
            render: RenderOptions::default(),
        }
    }

    /// Same setup with no corrupted image.
    pub fn clean(surface: SurfaceKind) -> Self {
        Self { surface, corruptions: Vec::new(), ..Self::near_light(None, 0.0) }
    }

    pub fn validate(&self) -> Result<LightSet> {
        self.surface.validate()?;
        self.albedo.validate()?;
        let lights = self.lights.build()?;
        let q = lights.len();
        let mut seen = vec![false; q];
        for c in &self.corruptions {
            if c.image < 1 || c.image > q {
                return Err(PsError::InvalidScenario(format!(
                    "corrupted image {} outside 1..{q}",
                    c.image
                )));
            }
            if std::mem::replace(&mut seen[c.image - 1], true) {
                return Err(PsError::InvalidScenario(format!("image {} corrupted twice", c.image)));
            }
            if !(c.noise.is_finite() && c.noise >= 0.0) {
                return Err(PsError::InvalidScenario(format!("noise must be >= 0, got {}", c.noise)));
            }
            if let Some(d) = c.distance {
                if !(d.is_finite() && d > 0.0) {
                    return Err(PsError::InvalidScenario(format!("distance must be > 0, got {d}")));
                }
            }
        }
        Ok(lights)
    }
}

/// Rendered data together with the ground truth it came from.
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub data: DataMatrix,
    pub surface: SurfaceGrid,
    pub field: NormalAlbedoField,
    /// True directions; corrupted images carry their source distance.
    pub lights: LightSet,
}

pub fn generate_dataset(scn: &SyntheticScenario) -> Result<SyntheticDataset> {
    let lights = scn.validate()?;
    let spec = scn.grid;
    let surface = scn.surface.sample(&spec)?;
    let gradient = scn.surface.gradient_field(&spec)?;
    let normals = normals_from_gradient(&gradient.ux, &gradient.uy)?;
    let field = NormalAlbedoField::new(normals, scn.albedo.sample(&spec))?;

    let clean = render_lambertian(&field, &lights, &surface, scn.render)?;
    let mut values = clean.into_matrix();
    let mut distances = vec![None; lights.len()];
    for c in &scn.corruptions {
        let t = c.image - 1;
        distances[t] = c.distance;
        let single = lights.select(&[t]).with_distances(vec![c.distance])?;
        let rendered = render_lambertian(&field, &single, &surface, scn.render)?;
        let mut column = rendered.matrix().column(0).into_owned();
        if c.noise > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(scn.seed);
            rng.set_stream(c.image as u64);
            let normal = Normal::new(0.0, c.noise).map_err(|e| PsError::InvalidScenario(e.to_string()))?;
            for v in column.iter_mut() {
                *v += normal.sample(&mut rng);
            }
        }
        column.apply(|v| *v = v.clamp(0.0, 1.0));
        values.set_column(t, &column);
    }
    Ok(SyntheticDataset {
        data: DataMatrix::new(values)?,
        surface,
        field,
        lights: lights.with_distances(distances)?,
    })
}

/// Elevation (from the horizontal) of the odd-numbered ring lights.
const HIGH_RING_ELEVATION_DEG: f64 = 60.0;
/// Elevation of the even-numbered ring lights.
const LOW_RING_ELEVATION_DEG: f64 = 45.0;

/// Eight ring lights at azimuths `0, 45, ..., 315` degrees alternating
/// between two elevations, followed by the frontal light `[0, 0, 1]`.
pub fn default_nine_lights() -> LightSet {
    let mut cols: Vec<Vector3<f64>> = (0..8)
        .map(|t| {
            let azimuth = t as f64 * PI / 4.0;
            let elevation = if t % 2 == 0 { HIGH_RING_ELEVATION_DEG } else { LOW_RING_ELEVATION_DEG }.to_radians();
            Vector3::new(
                elevation.cos() * azimuth.cos(),
                elevation.cos() * azimuth.sin(),
                elevation.sin(),
            )
        })
        .collect();
    cols.push(Vector3::z());
    LightSet::new(Matrix3xX::from_columns(&cols)).expect("unit directions")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn spec101() -> GridSpec {
        GridSpec::new(100.0, 99, 99).unwrap()
    }

    #[test]
    fn flat_plane_is_zero() {
        let params = BTreeMap::from([("slope_x".to_string(), 0.0), ("slope_y".to_string(), 0.0)]);
        let s = builtin_surface("plane", &params, &spec101()).unwrap();
        assert!(s.heights().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bump_peaks_at_center() {
        let spec = spec101();
        let params = BTreeMap::from([("amplitude".to_string(), 1.0), ("width".to_string(), 25.0)]);
        let s = builtin_surface("gaussian_bump", &params, &spec).unwrap();
        assert_eq!(s.get(50, 50), 1.0);
        assert!(s.heights().iter().all(|&v| v <= 1.0));
    }

    #[test]
    fn sinusoid_matches_direct_evaluation() {
        let spec = spec101();
        let params = BTreeMap::from([("amplitude".to_string(), 3.0), ("wavelength".to_string(), 40.0)]);
        let s = builtin_surface("sinusoid", &params, &spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let i = rng.random_range(0..spec.nx());
            let j = rng.random_range(0..spec.ny());
            let x = -50.0 + i as f64;
            let y = -50.0 + j as f64;
            let expect = 3.0 * (2.0 * PI * x / 40.0).sin() * (2.0 * PI * y / 40.0).cos();
            assert!((s.get(i, j) - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn unknown_surface_and_parameter() {
        let spec = spec101();
        assert!(matches!(
            builtin_surface("teapot", &BTreeMap::new(), &spec),
            Err(PsError::UnknownSurface(_))
        ));
        let params = BTreeMap::from([("radius".to_string(), 1.0)]);
        assert!(matches!(
            builtin_surface("plane", &params, &spec),
            Err(PsError::InvalidScenario(_))
        ));
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        let spec = GridSpec::new(2.0, 20, 20).unwrap();
        let kinds = [
            SurfaceKind::Quadratic { xx: 0.3, yy: -0.2, xy: 0.1 },
            SurfaceKind::GaussianBump { amplitude: 0.4, width: 0.3, center_x: 0.1, center_y: -0.2 },
            SurfaceKind::TwoBumps { amplitude: 0.25, width: 0.25, separation: 0.9 },
            SurfaceKind::Sinusoid { amplitude: 0.1, wavelength: 0.7 },
        ];
        let step = 1e-6;
        for kind in kinds {
            kind.validate().unwrap();
            for &(x, y) in &[(0.13, -0.41), (-0.7, 0.2), (0.0, 0.0)] {
                let (gx, gy) = kind.gradient(x, y);
                let fx = (kind.height(x + step, y) - kind.height(x - step, y)) / (2.0 * step);
                let fy = (kind.height(x, y + step) - kind.height(x, y - step)) / (2.0 * step);
                assert!((gx - fx).abs() < 1e-7, "{kind:?}");
                assert!((gy - fy).abs() < 1e-7, "{kind:?}");
            }
        }
        let _ = spec;
    }

    #[test]
    fn nine_lights_are_unit_full_rank_with_frontal_member() {
        let l = default_nine_lights();
        assert_eq!(l.len(), 9);
        for col in l.directions().column_iter() {
            assert!((col.norm() - 1.0).abs() < 1e-15);
            assert!(col[2] > 0.0);
        }
        let sv = l.directions().clone().svd(false, false).singular_values;
        assert!(sv.iter().all(|&s| s > 1e-3 * sv.max()));
        assert!(l.directions().column_iter().any(|c| c == Vector3::z()));
    }

    fn small_scenario(corruptions: Vec<Corruption>) -> SyntheticScenario {
        SyntheticScenario {
            grid: GridSpec::new(2.0, 29, 29).unwrap(),
            corruptions,
            ..SyntheticScenario::clean(SurfaceKind::GaussianBump {
                amplitude: 0.3,
                width: 0.4,
                center_x: 0.0,
                center_y: 0.0,
            })
        }
    }

    #[test]
    fn clean_dataset_equals_direct_renders() {
        let scn = small_scenario(Vec::new());
        let ds = generate_dataset(&scn).unwrap();
        assert_eq!(ds.data.q(), 9);
        let lights = default_nine_lights();
        for t in 0..9 {
            let single = render_lambertian(&ds.field, &lights.select(&[t]), &ds.surface, RenderOptions::default())
                .unwrap();
            assert_eq!(ds.data.matrix().column(t), single.matrix().column(0));
        }
    }

    #[test]
    fn corruption_touches_only_its_column() {
        let clean = generate_dataset(&small_scenario(Vec::new())).unwrap();
        let dirty = generate_dataset(&small_scenario(vec![Corruption {
            image: 3,
            distance: Some(2.0),
            noise: 0.1,
        }]))
        .unwrap();
        for t in 0..9 {
            let same = clean.data.matrix().column(t) == dirty.data.matrix().column(t);
            assert_eq!(same, t != 2, "column {}", t + 1);
        }
        assert!(dirty.data.matrix().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(dirty.lights.distance(2), Some(2.0));
    }

    #[test]
    fn same_seed_is_bitwise_identical() {
        let c = vec![Corruption { image: 3, distance: Some(2.0), noise: 0.1 }];
        let a = generate_dataset(&small_scenario(c.clone())).unwrap();
        let b = generate_dataset(&small_scenario(c.clone())).unwrap();
        assert_eq!(a.data, b.data);
        let mut other = small_scenario(c);
        other.seed += 1;
        assert_ne!(generate_dataset(&other).unwrap().data, a.data);
    }

    #[test]
    fn invalid_corruptions_rejected() {
        for c in [
            Corruption { image: 0, distance: None, noise: 0.0 },
            Corruption { image: 10, distance: None, noise: 0.0 },
            Corruption { image: 2, distance: Some(0.0), noise: 0.0 },
            Corruption { image: 2, distance: None, noise: -1.0 },
        ] {
            assert!(generate_dataset(&small_scenario(vec![c])).is_err(), "{c:?}");
        }
    }
}
