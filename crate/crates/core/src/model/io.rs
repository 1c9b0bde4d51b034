//! Dense model files.
//!
//! Layout (little-endian): magic `WPDN`, version u16, layer count u16, then per layer
//! `in_dim u32, out_dim u32, activation u8`, row-major f32 weights and f32 biases.

use std::fs;
use std::path::Path;

use super::matrix::Matrix;
use super::network::{Activation, Layer, Network};
use crate::error::{Error, Result};
use crate::wire::{ByteReader, ByteWriter};

pub const DENSE_MAGIC: &[u8; 4] = b"WPDN";
pub const DENSE_VERSION: u16 = 1;

pub fn encode_network(network: &Network) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.bytes(DENSE_MAGIC);
    w.u16(DENSE_VERSION);
    w.u16(network.layers().len() as u16);
    for layer in network.layers() {
        w.u32(layer.in_dim() as u32);
        w.u32(layer.out_dim() as u32);
        w.u8(layer.activation.code());
        w.f32s(layer.weights.as_slice());
        w.f32s(&layer.bias);
    }
    w.into_inner()
}

pub fn decode_network(bytes: &[u8]) -> Result<Network> {
    let mut r = ByteReader::new(bytes);
    let magic = r.take(4, "magic")?;
    if magic != DENSE_MAGIC {
        return Err(Error::Format(format!(
            "expected dense model magic WPDN, found {magic:?}"
        )));
    }
    let version = r.u16("version")?;
    if version != DENSE_VERSION {
        return Err(Error::Format(format!("unsupported dense model version {version}")));
    }
    let count = r.u16("layer count")? as usize;
    let mut layers = Vec::with_capacity(count);
    for i in 0..count {
        let ctx = format!("layer {i}");
        let in_dim = r.u32(&ctx)? as usize;
        let out_dim = r.u32(&ctx)? as usize;
        let activation = Activation::from_code(r.u8(&ctx)?).map_err(|e| e.context(&ctx))?;
        let weights = r.f32s(in_dim * out_dim, &format!("{ctx} weights"))?;
        let bias = r.f32s(out_dim, &format!("{ctx} bias"))?;
        let weights = Matrix::from_vec(out_dim, in_dim, weights).map_err(|e| e.context(&ctx))?;
        layers.push(Layer::new(weights, bias, activation).map_err(|e| e.context(&ctx))?);
    }
    if r.remaining() != 0 {
        return Err(Error::Corruption(format!(
            "{} trailing bytes after dense model",
            r.remaining()
        )));
    }
    Network::new(layers)
}

pub fn save_network(network: &Network, path: &Path) -> Result<()> {
    fs::write(path, encode_network(network))?;
    Ok(())
}

pub fn load_network(path: &Path) -> Result<Network> {
    decode_network(&fs::read(path)?).map_err(|e| e.context(path.display().to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::network::init_network;

    #[test]
    fn round_trip_and_layout() {
        let net = init_network(&[3, 2, 2], 5).unwrap();
        let bytes = encode_network(&net);
        assert_eq!(&bytes[..4], b"WPDN");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
        assert_eq!(u16::from_le_bytes([bytes[6], bytes[7]]), 2);
        // header + per layer (9 bytes + weights + bias)
        assert_eq!(bytes.len(), 8 + (9 + 24 + 8) + (9 + 16 + 8));
        assert_eq!(decode_network(&bytes).unwrap(), net);
    }

    #[test]
    fn truncated_file_rejected() {
        let bytes = encode_network(&init_network(&[3, 2], 5).unwrap());
        let err = decode_network(&bytes[..bytes.len() - 1]).unwrap_err();
        assert!(matches!(err, Error::Corruption(_)), "{err}");
    }
}
