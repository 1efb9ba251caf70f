//! Surface, normal and albedo artifacts.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageBuffer, Luma, RgbImage};
use nalgebra::{DVector, Vector3};
use psideal_core::{GridSpec, NormalAlbedoField, SurfaceGrid};
use serde::{Deserialize, Serialize};

use crate::error::{IoError, Result};
use crate::raster::{gray16, gray8, png_bytes, quantize16, quantize8, rgb8};

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| IoError::file(path, e))
}

/// Two counter-clockwise triangles per grid cell, as 0-based node indices.
fn triangles(spec: &GridSpec) -> impl Iterator<Item = [usize; 3]> + '_ {
    (0..spec.nx() - 1).flat_map(move |i| {
        (0..spec.ny() - 1).flat_map(move |j| {
            let a = spec.index(i, j);
            let b = spec.index(i + 1, j);
            let c = spec.index(i + 1, j + 1);
            let d = spec.index(i, j + 1);
            [[a, b, c], [a, c, d]]
        })
    })
}

fn vertices(u: &SurfaceGrid) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
    let spec = *u.spec();
    (0..spec.node_count()).map(move |k| {
        let (i, j) = spec.node(k);
        (spec.x(i), spec.y(j), u.heights()[k])
    })
}

/// Wavefront OBJ with one vertex per node.
pub fn obj_string(u: &SurfaceGrid) -> String {
    let mut out = String::new();
    for (x, y, z) in vertices(u) {
        writeln!(out, "v {x:?} {y:?} {z:?}").unwrap();
    }
    for [a, b, c] in triangles(u.spec()) {
        writeln!(out, "f {} {} {}", a + 1, b + 1, c + 1).unwrap();
    }
    out
}

/// ASCII PLY with one vertex per node.
pub fn ply_string(u: &SurfaceGrid) -> String {
    let spec = u.spec();
    let faces = 2 * (spec.nx() - 1) * (spec.ny() - 1);
    let mut out = format!(
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\n\
         element face {faces}\nproperty list uchar int vertex_indices\nend_header\n",
        spec.node_count()
    );
    for (x, y, z) in vertices(u) {
        writeln!(out, "{x:?} {y:?} {z:?}").unwrap();
    }
    for [a, b, c] in triangles(spec) {
        writeln!(out, "3 {a} {b} {c}").unwrap();
    }
    out
}

pub fn write_obj(u: &SurfaceGrid, path: &Path) -> Result<()> {
    write_file(path, obj_string(u))
}

pub fn write_ply(u: &SurfaceGrid, path: &Path) -> Result<()> {
    write_file(path, ply_string(u))
}

/// Height grid as CSV, laid out like the images: first line is the top row.
pub fn surface_csv(u: &SurfaceGrid) -> String {
    let spec = u.spec();
    let mut out = String::new();
    for j in (0..spec.ny()).rev() {
        let row: Vec<String> = (0..spec.nx()).map(|i| format!("{:?}", u.get(i, j))).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn write_surface_csv(u: &SurfaceGrid, path: &Path) -> Result<()> {
    write_file(path, surface_csv(u))
}

/// Parses [`surface_csv`] output for a domain of physical width `width`.
pub fn parse_surface_csv(text: &str, width: f64) -> std::result::Result<SurfaceGrid, String> {
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split(',').map(|v| v.trim().parse::<f64>().map_err(|e| format!("`{v}`: {e}"))).collect())
        .collect::<std::result::Result<_, _>>()?;
    let ny = rows.len();
    let nx = rows.first().map_or(0, Vec::len);
    if let Some(bad) = rows.iter().position(|r| r.len() != nx) {
        return Err(format!("row {} has {} values, expected {nx}", bad + 1, rows[bad].len()));
    }
    let spec = GridSpec::for_image(nx, ny).and_then(|s| s.with_width(width)).map_err(|e| e.to_string())?;
    let heights = DVector::from_fn(spec.node_count(), |k, _| {
        let (i, j) = spec.node(k);
        rows[ny - 1 - j][i]
    });
    SurfaceGrid::new(spec, heights).map_err(|e| e.to_string())
}

pub fn read_surface_csv(path: &Path, width: f64) -> Result<SurfaceGrid> {
    let text = fs::read_to_string(path).map_err(|e| IoError::file(path, e))?;
    parse_surface_csv(&text, width).map_err(|e| IoError::parse(path, e))
}

/// Scale that maps a 16-bit heightmap back to heights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeightmapMeta {
    /// Height of level 0.
    pub min: f64,
    /// Height of level 65535.
    pub max: f64,
    pub width: f64,
    pub spacing: f64,
    pub nx: usize,
    pub ny: usize,
}

impl HeightmapMeta {
    pub fn height(&self, level: u16) -> f64 {
        self.min + (self.max - self.min) * level as f64 / 65535.0
    }
}

/// Min-max normalized 16-bit heightmap.
pub fn heightmap(u: &SurfaceGrid) -> (ImageBuffer<Luma<u16>, Vec<u16>>, HeightmapMeta) {
    let spec = *u.spec();
    let h = u.heights();
    let (min, max) = (h.min(), h.max());
    let range = max - min;
    let img = gray16(&spec, |k| if range > 0.0 { quantize16((h[k] - min) / range) } else { 0 });
    let meta = HeightmapMeta { min, max, width: spec.width(), spacing: spec.spacing(), nx: spec.nx(), ny: spec.ny() };
    (img, meta)
}

/// Writes the heightmap PNG and its scale to `<path>.json`; returns the
/// sidecar path.
pub fn write_heightmap(u: &SurfaceGrid, path: &Path) -> Result<PathBuf> {
    let (img, meta) = heightmap(u);
    write_file(path, png_bytes(&img))?;
    let sidecar = path.with_extension("json");
    write_file(&sidecar, serde_json::to_string_pretty(&meta).expect("plain struct"))?;
    Ok(sidecar)
}

/// `(n + 1) / 2` per channel, rounded to 8 bits.
pub fn encode_normal(n: &Vector3<f64>) -> [u8; 3] {
    [0, 1, 2].map(|c| quantize8((n[c] + 1.0) / 2.0))
}

pub fn decode_normal(rgb: [u8; 3]) -> Vector3<f64> {
    Vector3::from_fn(|c, _| rgb[c] as f64 / 255.0 * 2.0 - 1.0).normalize()
}

pub fn normal_map(field: &NormalAlbedoField, spec: &GridSpec) -> Result<RgbImage> {
    check_nodes(field, spec)?;
    Ok(rgb8(spec, |k| encode_normal(&field.normals().column(k).into_owned())))
}

/// Albedo as 8-bit gray; divided by the largest albedo when that exceeds 1.
pub fn albedo_map(field: &NormalAlbedoField, spec: &GridSpec) -> Result<GrayImage> {
    check_nodes(field, spec)?;
    let rho = field.albedo();
    let scale = rho.max().max(1.0);
    Ok(gray8(spec, |k| quantize8(rho[k] / scale)))
}

fn check_nodes(field: &NormalAlbedoField, spec: &GridSpec) -> Result<()> {
    if field.p() != spec.node_count() {
        return Err(psideal_core::PsError::Shape(format!(
            "field has {} pixels, grid has {} nodes",
            field.p(),
            spec.node_count()
        ))
        .into());
    }
    Ok(())
}

pub fn write_normal_map(field: &NormalAlbedoField, spec: &GridSpec, path: &Path) -> Result<()> {
    write_file(path, png_bytes(&normal_map(field, spec)?))
}

pub fn write_albedo_map(field: &NormalAlbedoField, spec: &GridSpec, path: &Path) -> Result<()> {
    write_file(path, png_bytes(&albedo_map(field, spec)?))
}
