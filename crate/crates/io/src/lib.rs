//! File formats for psideal: image stack manifests, light tables, meshes,
//! heightmaps, normal maps and JSON reports.

pub mod dataset;
pub mod error;
pub mod export;
pub mod lights;
pub mod raster;
pub mod report;
pub mod synth;

use std::path::Path;

use serde::Serialize;

pub use dataset::{load_dataset, load_image, Dataset, DatasetManifest};
pub use error::{IoError, Result};
pub use export::{
    albedo_map, decode_normal, encode_normal, heightmap, normal_map, obj_string, parse_surface_csv, ply_string,
    read_surface_csv, surface_csv, write_albedo_map, write_heightmap, write_normal_map, write_obj, write_ply,
    write_surface_csv, HeightmapMeta,
};
pub use lights::{lights_csv, parse_lights_csv, read_lights_csv, write_lights_csv};
pub use report::{LightReport, ReconstructionReport};
pub use synth::{parse_scenario, read_scenario, scenario_toml, write_synthetic};

/// Pretty JSON with shortest round-trip float formatting; identical values
/// give identical bytes.
pub fn to_json<T: Serialize + ?Sized>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report types serialize");
    s.push('\n');
    s
}

pub fn write_json<T: Serialize + ?Sized>(value: &T, path: &Path) -> Result<()> {
    std::fs::write(path, to_json(value)).map_err(|e| IoError::file(path, e))
}
