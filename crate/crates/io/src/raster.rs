//! Mapping between image pixels and grid nodes.
//!
//! Image column `c` is grid index `i = c`; image row `r` (top row 0) is grid
//! index `j = rows - 1 - r`, so `y` grows upwards as in the height field.

use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};
use psideal_core::GridSpec;

/// Node index of pixel `(c, r)` in an image of `cols x rows` pixels.
#[inline]
pub fn pixel_to_node(cols: usize, rows: usize, c: usize, r: usize) -> usize {
    debug_assert!(c < cols && r < rows);
    c * rows + (rows - 1 - r)
}

/// Image of `spec.nx() x spec.ny()` pixels whose pixel at node `k` is
/// `f(k)`.
pub fn node_image<P, F>(spec: &GridSpec, f: F) -> ImageBuffer<P, Vec<P::Subpixel>>
where
    P: image::Pixel,
    F: Fn(usize) -> P,
{
    let (cols, rows) = (spec.nx(), spec.ny());
    ImageBuffer::from_fn(cols as u32, rows as u32, |c, r| f(pixel_to_node(cols, rows, c as usize, r as usize)))
}

pub fn gray8(spec: &GridSpec, f: impl Fn(usize) -> u8) -> GrayImage {
    node_image(spec, |k| Luma([f(k)]))
}

pub fn gray16(spec: &GridSpec, f: impl Fn(usize) -> u16) -> ImageBuffer<Luma<u16>, Vec<u16>> {
    node_image(spec, |k| Luma([f(k)]))
}

pub fn rgb8(spec: &GridSpec, f: impl Fn(usize) -> [u8; 3]) -> RgbImage {
    node_image(spec, |k| Rgb(f(k)))
}

/// `v` in `[0, 1]` to the nearest 16-bit level.
#[inline]
pub fn quantize16(v: f64) -> u16 {
    (v.clamp(0.0, 1.0) * 65535.0).round() as u16
}

#[inline]
pub fn quantize8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// PNG bytes of any encodable buffer.
pub fn png_bytes<P>(img: &ImageBuffer<P, Vec<P::Subpixel>>) -> Vec<u8>
where
    P: image::PixelWithColorType,
    [P::Subpixel]: image::EncodableLayout,
{
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png).expect("PNG encoding to memory cannot fail");
    out.into_inner()
}
