//! Volume files: a JSON sidecar describing the grid next to a raw file of
//! little-endian `f32` intensities, x-fastest. `case.json` pairs with
//! `case.raw`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Geometry, Volume3D};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeHeader {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
    pub dtype: String,
    pub byte_order: String,
}

impl VolumeHeader {
    fn for_geometry(g: &Geometry) -> Self {
        VolumeHeader {
            dims: g.dims,
            spacing: g.spacing,
            origin: g.origin,
            dtype: "f32".into(),
            byte_order: "little".into(),
        }
    }
}

fn raw_path(sidecar: &Path) -> PathBuf {
    sidecar.with_extension("raw")
}

pub fn write_volume(sidecar: impl AsRef<Path>, volume: &Volume3D) -> Result<()> {
    let sidecar = sidecar.as_ref();
    let header = VolumeHeader::for_geometry(volume.geometry());
    fs::write(sidecar, serde_json::to_vec_pretty(&header)?)?;
    let mut bytes = Vec::with_capacity(volume.data().len() * 4);
    for v in volume.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(raw_path(sidecar), bytes)?;
    Ok(())
}

pub fn read_volume(sidecar: impl AsRef<Path>) -> Result<Volume3D> {
    let sidecar = sidecar.as_ref();
    let header: VolumeHeader = serde_json::from_slice(&fs::read(sidecar)?)?;
    if header.dtype != "f32" || header.byte_order != "little" {
        return Err(Error::format(
            sidecar,
            format!("unsupported dtype/byte order {}/{}", header.dtype, header.byte_order),
        ));
    }
    let geometry = Geometry::new(header.dims, header.spacing, header.origin)?;
    let raw = raw_path(sidecar);
    let bytes = fs::read(&raw)?;
    if bytes.len() != geometry.len() * 4 {
        return Err(Error::format(raw, format!("expected {} bytes, found {}", geometry.len() * 4, bytes.len())));
    }
    let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    Volume3D::new(geometry, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let g = Geometry::new([5, 3, 2], [0.7, 1.1, 2.9], [-1.25, 3.0, 0.1]).unwrap();
        let v = Volume3D::from_world_fn(g, |p| (p[0] * 1.37).sin() + p[1] * 1e-3 + p[2]).unwrap();
        let path = dir.path().join("vol.json");
        write_volume(&path, &v).unwrap();
        let back = read_volume(&path).unwrap();
        assert_eq!(back.geometry(), v.geometry());
        let a: Vec<u32> = v.data().iter().map(|x| x.to_bits()).collect();
        let b: Vec<u32> = back.data().iter().map(|x| x.to_bits()).collect();
        assert_eq!(a, b);

        let header: serde_json::Value = serde_json::from_slice(&fs::read(&path).unwrap()).unwrap();
        assert_eq!(header["dtype"], "f32");
        assert_eq!(header["byte_order"], "little");
    }

    #[test]
    fn truncated_raw_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let g = Geometry::new([2, 2, 2], [1.0; 3], [0.0; 3]).unwrap();
        let path = dir.path().join("v.json");
        write_volume(&path, &Volume3D::zeros(g)).unwrap();
        fs::write(dir.path().join("v.raw"), [0u8; 12]).unwrap();
        assert!(matches!(read_volume(&path), Err(Error::Format { .. })));
    }
}
