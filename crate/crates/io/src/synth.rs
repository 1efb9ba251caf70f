//! Scenario files and on-disk synthetic datasets.

use std::fs;
use std::path::{Path, PathBuf};

use psideal_core::{SyntheticDataset, SyntheticScenario};

use crate::dataset::DatasetManifest;
use crate::error::{IoError, Result};
use crate::export::write_surface_csv;
use crate::lights::write_lights_csv;
use crate::raster::{gray16, png_bytes, quantize16};

pub fn parse_scenario(text: &str) -> std::result::Result<SyntheticScenario, String> {
    let scn: SyntheticScenario = toml::from_str(text).map_err(|e| e.to_string())?;
    scn.validate().map_err(|e| e.to_string())?;
    Ok(scn)
}

pub fn read_scenario(path: &Path) -> Result<SyntheticScenario> {
    let text = fs::read_to_string(path).map_err(|e| IoError::file(path, e))?;
    parse_scenario(&text).map_err(|e| IoError::parse(path, e))
}

pub fn scenario_toml(scn: &SyntheticScenario) -> String {
    toml::to_string(scn).expect("scenario fields always serialize")
}

/// Writes 16-bit PNGs `image_01.png, ...`, `lights.csv`, `truth.csv` and
/// `manifest.toml` into `dir`; returns the manifest path.
pub fn write_synthetic(ds: &SyntheticDataset, name: &str, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| IoError::file(dir, e))?;
    let spec = *ds.surface.spec();
    let q = ds.data.q();
    let digits = q.to_string().len().max(2);
    let mut images = Vec::with_capacity(q);
    for t in 0..q {
        let file = PathBuf::from(format!("image_{:0digits$}.png", t + 1));
        let column = ds.data.matrix().column(t);
        let img = gray16(&spec, |k| quantize16(column[k]));
        let path = dir.join(&file);
        fs::write(&path, png_bytes(&img)).map_err(|e| IoError::file(&path, e))?;
        images.push(file);
    }
    write_lights_csv(&ds.lights, &dir.join("lights.csv"))?;
    write_surface_csv(&ds.surface, &dir.join("truth.csv"))?;
    let manifest = DatasetManifest {
        name: name.to_string(),
        width: Some(spec.width()),
        images,
        lights: Some("lights.csv".into()),
        ground_truth: Some("truth.csv".into()),
    };
    let path = dir.join("manifest.toml");
    manifest.write(&path)?;
    Ok(path)
}
