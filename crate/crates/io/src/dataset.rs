//! Dataset manifests and image stack loading.

use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageReader};
use nalgebra::DMatrix;
use psideal_core::{DataMatrix, GridSpec, LightSet, SurfaceGrid};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{IoError, Result};
use crate::export::read_surface_csv;
use crate::lights::read_lights_csv;
use crate::raster::pixel_to_node;

/// Ordered list of images plus optional calibration and ground truth.
/// Relative paths are resolved against the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    #[serde(default)]
    pub name: String,
    /// Physical width `A` of the imaged domain; defaults to one unit per pixel.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<f64>,
    /// Image files in light order.
    pub images: Vec<PathBuf>,
    /// CSV of known light directions, one row per image.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lights: Option<PathBuf>,
    /// CSV height grid of the true surface.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<PathBuf>,
}

impl DatasetManifest {
    pub fn from_toml(text: &str) -> Result<Self> {
        let manifest: Self = toml::from_str(text).map_err(|e| IoError::Manifest(e.to_string()))?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| IoError::file(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            IoError::Manifest(msg) => IoError::parse(path, msg),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest fields always serialize")
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml()).map_err(|e| IoError::file(path, e))
    }

    fn validate(&self) -> Result<()> {
        if self.images.is_empty() {
            return Err(IoError::Manifest("no images listed".into()));
        }
        if let Some(w) = self.width {
            if !(w.is_finite() && w > 0.0) {
                return Err(IoError::Manifest(format!("width must be positive, got {w}")));
            }
        }
        Ok(())
    }
}

/// A loaded image stack. Column `t` of `data` is image `t + 1`.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub base_dir: PathBuf,
    /// Image width in pixels.
    pub cols: usize,
    /// Image height in pixels.
    pub rows: usize,
    pub data: DataMatrix,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.data.q()
    }

    pub fn is_empty(&self) -> bool {
        self.data.q() == 0
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        self.base_dir.join(path)
    }

    /// Grid with one node per pixel.
    pub fn grid(&self) -> Result<GridSpec> {
        let spec = GridSpec::for_image(self.cols, self.rows)?;
        Ok(match self.manifest.width {
            Some(w) => spec.with_width(w)?,
            None => spec,
        })
    }

    pub fn lights(&self) -> Result<Option<LightSet>> {
        let Some(path) = &self.manifest.lights else { return Ok(None) };
        let lights = read_lights_csv(&self.resolve(path))?;
        if lights.len() != self.len() {
            return Err(IoError::Manifest(format!("{} lights for {} images", lights.len(), self.len())));
        }
        Ok(Some(lights))
    }

    pub fn ground_truth(&self) -> Result<Option<SurfaceGrid>> {
        let Some(path) = &self.manifest.ground_truth else { return Ok(None) };
        let surface = read_surface_csv(&self.resolve(path), self.grid()?.width())?;
        if surface.spec().nx() != self.cols || surface.spec().ny() != self.rows {
            return Err(IoError::Manifest("ground truth grid differs from the images".into()));
        }
        Ok(Some(surface))
    }
}

/// Grayscale intensities in `[0, 1]` in node order, with the image size.
pub fn load_image(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let img = ImageReader::open(path)
        .map_err(|e| IoError::file(path, e))?
        .with_guessed_format()
        .map_err(|e| IoError::file(path, e))?
        .decode()
        .map_err(|e| IoError::image(path, e))?;
    let (cols, rows) = (img.width() as usize, img.height() as usize);
    let mut out = vec![0.0; cols * rows];
    let mut put = |c: u32, r: u32, v: f64| out[pixel_to_node(cols, rows, c as usize, r as usize)] = v;
    match img {
        DynamicImage::ImageLuma8(_) | DynamicImage::ImageLumaA8(_) | DynamicImage::ImageRgb8(_) | DynamicImage::ImageRgba8(_) => {
            for (c, r, p) in img.to_luma8().enumerate_pixels() {
                put(c, r, p[0] as f64 / 255.0);
            }
        }
        DynamicImage::ImageLuma16(_)
        | DynamicImage::ImageLumaA16(_)
        | DynamicImage::ImageRgb16(_)
        | DynamicImage::ImageRgba16(_) => {
            for (c, r, p) in img.to_luma16().enumerate_pixels() {
                put(c, r, p[0] as f64 / 65535.0);
            }
        }
        _ => {
            for (c, r, p) in img.to_luma32f().enumerate_pixels() {
                put(c, r, (p[0] as f64).clamp(0.0, 1.0));
            }
        }
    }
    Ok((cols, rows, out))
}

/// Reads the manifest at `path` and decodes its images in parallel.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let manifest = DatasetManifest::read(path)?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let images: Vec<(usize, usize, Vec<f64>)> = manifest
        .images
        .par_iter()
        .map(|p| load_image(&base_dir.join(p)))
        .collect::<Result<_>>()?;
    let (cols, rows) = (images[0].0, images[0].1);
    for (t, (c, r, _)) in images.iter().enumerate() {
        if (*c, *r) != (cols, rows) {
            return Err(IoError::Manifest(format!(
                "image {} ({}) is {c}x{r}, image 1 is {cols}x{rows}",
                t + 1,
                manifest.images[t].display()
            )));
        }
    }
    let p = cols * rows;
    let mut m = DMatrix::zeros(p, images.len());
    for (t, (_, _, v)) in images.iter().enumerate() {
        m.column_mut(t).copy_from_slice(v);
    }
    Ok(Dataset { manifest, base_dir, cols, rows, data: DataMatrix::new(m)? })
}
