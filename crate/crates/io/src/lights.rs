//! Light directions as CSV: a `x,y,z` header and one row per image, with an
//! optional `distance` column (empty means infinitely far).

use std::path::Path;

use nalgebra::Vector3;
use psideal_core::LightSet;
use serde::{Deserialize, Serialize};

use crate::error::{IoError, Result};

#[derive(Debug, Serialize, Deserialize)]
struct LightRow {
    x: f64,
    y: f64,
    z: f64,
    #[serde(default)]
    distance: Option<f64>,
}

pub fn parse_lights_csv(text: &str) -> std::result::Result<LightSet, String> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let rows: Vec<LightRow> = reader.deserialize().collect::<std::result::Result<_, _>>().map_err(|e| e.to_string())?;
    if rows.is_empty() {
        return Err("no light rows".into());
    }
    let cols: Vec<Vector3<f64>> = rows.iter().map(|r| Vector3::new(r.x, r.y, r.z)).collect();
    let lights = LightSet::new(nalgebra::Matrix3xX::from_columns(&cols)).map_err(|e| e.to_string())?;
    lights.with_distances(rows.iter().map(|r| r.distance).collect()).map_err(|e| e.to_string())
}

pub fn read_lights_csv(path: &Path) -> Result<LightSet> {
    let text = std::fs::read_to_string(path).map_err(|e| IoError::file(path, e))?;
    parse_lights_csv(&text).map_err(|e| IoError::parse(path, e))
}

pub fn lights_csv(lights: &LightSet) -> String {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for t in 0..lights.len() {
        let d = lights.direction(t);
        writer
            .serialize(LightRow { x: d[0], y: d[1], z: d[2], distance: lights.distance(t) })
            .expect("in-memory CSV");
    }
    String::from_utf8(writer.into_inner().expect("in-memory CSV")).expect("CSV is UTF-8")
}

pub fn write_lights_csv(lights: &LightSet, path: &Path) -> Result<()> {
    std::fs::write(path, lights_csv(lights)).map_err(|e| IoError::file(path, e))
}
