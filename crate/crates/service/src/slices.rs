//! Orthogonal mid-slices as 8-bit images.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use simreg_core::volgeom::Volume3D;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Plane {
    /// z = const, width along x, height along y.
    Axial,
    /// y = const, width along x, height along z.
    Coronal,
    /// x = const, width along y, height along z.
    Sagittal,
}

impl Plane {
    pub const ALL: [Plane; 3] = [Plane::Axial, Plane::Coronal, Plane::Sagittal];
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Slice {
    pub width: usize,
    pub height: usize,
    /// Row-major, one byte per pixel.
    pub pixels: Vec<u8>,
}

/// Per-volume min-max window to 0..=255. A constant volume maps to 0.
pub fn window(v: &Volume3D) -> Vec<u8> {
    let (lo, hi) = v.min_max();
    let range = hi as f64 - lo as f64;
    v.data()
        .iter()
        .map(|&x| if range > 0.0 { ((x as f64 - lo as f64) / range * 255.0).round() as u8 } else { 0 })
        .collect()
}

/// Middle slice of a windowed volume with dimensions `dims` (x, y, z).
pub fn mid_slice(bytes: &[u8], dims: [usize; 3], plane: Plane) -> Slice {
    let [nx, ny, nz] = dims;
    let at = |i: usize, j: usize, k: usize| bytes[(k * ny + j) * nx + i];
    let (width, height) = match plane {
        Plane::Axial => (nx, ny),
        Plane::Coronal => (nx, nz),
        Plane::Sagittal => (ny, nz),
    };
    let mut pixels = Vec::with_capacity(width * height);
    for row in 0..height {
        for col in 0..width {
            pixels.push(match plane {
                Plane::Axial => at(col, row, nz / 2),
                Plane::Coronal => at(col, ny / 2, row),
                Plane::Sagittal => at(nx / 2, col, row),
            });
        }
    }
    Slice { width, height, pixels }
}

/// 50% blend, rounding half up.
pub fn blend(a: &Slice, b: &Slice) -> Slice {
    debug_assert_eq!((a.width, a.height), (b.width, b.height));
    let pixels = a.pixels.iter().zip(&b.pixels).map(|(&x, &y)| (x as u16 + y as u16).div_ceil(2) as u8).collect();
    Slice { width: a.width, height: a.height, pixels }
}

pub fn encode_png(s: &Slice) -> Vec<u8> {
    let mut out = Vec::new();
    let mut enc = png::Encoder::new(&mut out, s.width as u32, s.height as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    // Writing into a Vec with matching dimensions cannot fail.
    let mut w = enc.write_header().expect("png header");
    w.write_image_data(&s.pixels).expect("png data");
    w.finish().expect("png finish");
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Encoding {
    /// Base64 PNG strings.
    #[default]
    Png,
    /// Arrays of byte values.
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Image {
    Png(String),
    Raw(Vec<u8>),
}

impl Image {
    pub fn new(s: &Slice, encoding: Encoding) -> Self {
        match encoding {
            Encoding::Png => Image::Png(STANDARD.encode(encode_png(s))),
            Encoding::Raw => Image::Raw(s.pixels.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlicePair {
    pub plane: Plane,
    pub width: usize,
    pub height: usize,
    pub fixed: Image,
    pub moving: Image,
    pub blend: Image,
}

/// Axial, coronal and sagittal mid-slices of `fixed` and `moving`.
pub fn slice_pairs(fixed: &Volume3D, moving: &Volume3D, encoding: Encoding) -> Vec<SlicePair> {
    let dims = fixed.dims();
    let (f, m) = (window(fixed), window(moving));
    Plane::ALL
        .iter()
        .map(|&plane| {
            let a = mid_slice(&f, dims, plane);
            let b = mid_slice(&m, dims, plane);
            let c = blend(&a, &b);
            SlicePair {
                plane,
                width: a.width,
                height: a.height,
                fixed: Image::new(&a, encoding),
                moving: Image::new(&b, encoding),
                blend: Image::new(&c, encoding),
            }
        })
        .collect()
}
