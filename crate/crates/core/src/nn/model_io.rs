//! Model file: `b"RFNN"`, `u32` version, `u32` byte length of the JSON
//! [`NetworkSpec`], the JSON itself, then every tensor as little-endian
//! `f32` in layer order (trainable tensors first, then batch-norm running
//! mean and variance). All integers are little-endian.

use std::fs;
use std::path::Path;

use super::network::LayerParams;
use super::{Network, NetworkSpec, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"RFNN";
pub const VERSION: u32 = 1;

pub fn encode_model(net: &Network) -> Result<Vec<u8>> {
    let spec_json = serde_json::to_vec(net.spec())?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(spec_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&spec_json);
    let mut put = |vals: &[f64]| {
        for &v in vals {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    };
    for layer in net.layers() {
        for t in &layer.trainable {
            put(t.data());
        }
        if let Some((m, v)) = &layer.running {
            put(m);
            put(v);
        }
    }
    Ok(out)
}

pub fn decode_model(bytes: &[u8], origin: &Path) -> Result<Network> {
    let truncated = || Error::format(origin, "truncated model file");
    if bytes.len() < 12 {
        return Err(truncated());
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Version { found: 0, expected: VERSION });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Version { found: version, expected: VERSION });
    }
    let spec_len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let spec_bytes = bytes.get(12..12 + spec_len).ok_or_else(truncated)?;
    let spec: NetworkSpec =
        serde_json::from_slice(spec_bytes).map_err(|e| Error::format(origin, format!("bad network spec: {e}")))?;
    let spec = NetworkSpec::relaxed(spec.input, spec.layers, spec.label_scale)?;
    let template = Network::new(spec.clone(), 0)?;

    let mut cursor = 12 + spec_len;
    let mut take = |n: usize| -> Result<Vec<f64>> {
        let end = cursor + 4 * n;
        let chunk = bytes.get(cursor..end).ok_or_else(truncated)?;
        cursor = end;
        Ok(chunk.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect())
    };
    let mut layers = Vec::with_capacity(template.layers().len());
    for layer in template.layers() {
        let mut trainable = Vec::with_capacity(layer.trainable.len());
        for t in &layer.trainable {
            trainable.push(Tensor::new(t.shape().to_vec(), take(t.len())?)?);
        }
        let running = match &layer.running {
            Some((m, _)) => Some((take(m.len())?, take(m.len())?)),
            None => None,
        };
        layers.push(LayerParams { trainable, running });
    }
    if cursor != bytes.len() {
        return Err(Error::format(origin, "trailing bytes after parameters"));
    }
    Network::from_parts(spec, layers)
}

pub fn save_model(path: impl AsRef<Path>, net: &Network) -> Result<()> {
    fs::write(path, encode_model(net)?)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Network> {
    let path = path.as_ref();
    decode_model(&fs::read(path)?, path)
}
