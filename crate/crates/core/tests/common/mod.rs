#![allow(dead_code)]

pub mod oracles;

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use weightpress::container::{CompressedModel, LayerPayload, QuantizedLayer};
use weightpress::huffman::{build_code, build_histogram, decode, encode};
use weightpress::model::{init_network, Matrix, Network};
use weightpress::prune::{decode_relative, encode_relative};
use weightpress::quant::{quantize_values, Codebook, QuantConfig};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// MNIST directory from `WEIGHTPRESS_MNIST_DIR` or `<workspace>/data/mnist`.
pub fn mnist_dir() -> Option<PathBuf> {
    let dir = std::env::var_os("WEIGHTPRESS_MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"));
    dir.join("train-images-idx3-ubyte").exists().then_some(dir)
}

/// Random matrix and a 0/1 mask keeping each entry with probability `density`.
/// Kept entries are never exactly zero.
pub fn random_sparse(rng: &mut impl Rng, rows: usize, cols: usize, density: f64) -> (Matrix, Matrix) {
    let mut w = Vec::with_capacity(rows * cols);
    let mut m = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        let keep = rng.random_bool(density);
        let mut v: f32 = rng.random_range(-1.0..1.0);
        if v == 0.0 {
            v = 0.5;
        }
        w.push(v);
        m.push(if keep { 1.0 } else { 0.0 });
    }
    (
        Matrix::from_vec(rows, cols, w).unwrap(),
        Matrix::from_vec(rows, cols, m).unwrap(),
    )
}

pub fn masked(w: &Matrix, mask: &Matrix) -> Matrix {
    w.hadamard(mask).unwrap()
}

/// Small network whose weights are zeroed outside a random mask.
pub fn random_pruned_network(rng: &mut impl Rng, dims: &[usize], density: f64) -> Network {
    let mut net = init_network(dims, rng.random()).unwrap();
    for i in 0..net.layers().len() {
        let (r, c) = net.layer(i).weights.shape();
        let (_, mask) = random_sparse(rng, r, c, density);
        let w = masked(&net.layer(i).weights, &mask);
        net.set_weights(i, w).unwrap();
        let b = (0..r).map(|_| rng.random_range(-0.1..0.1)).collect();
        net.set_bias(i, b).unwrap();
    }
    net
}

/// Random container at stage 0 (dense) to 3 (Huffman).
pub fn random_model(rng: &mut impl Rng, stage: u8) -> CompressedModel {
    let layers = rng.random_range(1..=3);
    let mut dims = vec![rng.random_range(1..=24)];
    for _ in 0..layers {
        dims.push(rng.random_range(1..=24));
    }
    let density = rng.random_range(0.02..1.0);
    let net = random_pruned_network(rng, &dims, density);
    if stage == 0 {
        return CompressedModel::from_network(&net).unwrap();
    }
    let bits = rng.random_range(1..=8u8);
    let qbits = rng.random_range(1..=6u8);
    let unpruned = stage >= 2 && rng.random_bool(0.2);
    let model = CompressedModel::from_records(&net, |_, layer| {
        let (r, c) = layer.weights.shape();
        let mask = Matrix::from_vec(
            r,
            c,
            layer.weights.as_slice().iter().map(|w| if *w != 0.0 { 1.0 } else { 0.0 }).collect(),
        )?;
        let sparse = encode_relative(&layer.weights, &mask, bits)?;
        if stage == 1 {
            return Ok(LayerPayload::Pruned(sparse));
        }
        let cfg = QuantConfig {
            bits: qbits,
            ..QuantConfig::default()
        };
        let q = if unpruned {
            let k = 1usize << qbits;
            let book = Codebook::new((0..k).map(|i| i as f32 * 0.01 - 0.3).collect())?;
            let idx = (0..r * c).map(|_| rng.random_range(0..k) as u16).collect();
            QuantizedLayer::unpruned(r, c, book, idx)?
        } else if sparse.nnz() == 0 {
            let book = Codebook::new(vec![0.25])?;
            QuantizedLayer::from_parts(&sparse, &weightpress::quant::QuantizedWeights {
                codebook: book,
                assignment: weightpress::quant::IndexAssignment::new(vec![], 1)?,
                wcss: 0.0,
                iterations_run: 0,
                note: None,
            })?
        } else {
            let qw = quantize_values(&sparse.values(), &cfg)?;
            QuantizedLayer::from_parts(&sparse, &qw)?
        };
        Ok(LayerPayload::Quantized(q))
    })
    .unwrap();
    if stage == 3 {
        model.entropy_coded().unwrap()
    } else {
        model
    }
}

/// Encode/decode identity of the relative index on random sparse matrices.
pub fn relative_roundtrip_suite(cases: usize, seed: u64) -> Result<(), String> {
    let mut rng = rng(seed);
    for case in 0..cases {
        let rows = rng.random_range(1..=40);
        let cols = rng.random_range(1..=40);
        let density = [0.0, 0.01, 0.08, 0.5, 1.0][rng.random_range(0..5)];
        let bits = rng.random_range(1..=16u8);
        let (w, mask) = random_sparse(&mut rng, rows, cols, density);
        let layer = encode_relative(&w, &mask, bits).map_err(|e| format!("case {case}: {e}"))?;
        let back = decode_relative(&layer).map_err(|e| format!("case {case}: {e}"))?;
        if back != masked(&w, &mask) {
            return Err(format!("case {case}: {rows}x{cols} density {density} bits {bits} differs"));
        }
    }
    Ok(())
}

/// Encode/decode identity of canonical Huffman codes on random symbol streams.
pub fn huffman_roundtrip_suite(cases: usize, seed: u64) -> Result<(), String> {
    let mut rng = rng(seed);
    for case in 0..cases {
        let alphabet: u16 = rng.random_range(1..=300);
        let len = rng.random_range(1..=400);
        let skew = rng.random_range(0.0..3.0f64);
        let symbols: Vec<u16> = (0..len)
            .map(|_| {
                let u: f64 = rng.random();
                ((u.powf(1.0 + skew)) * alphabet as f64) as u16 % alphabet
            })
            .collect();
        let code = build_code(&build_histogram(&symbols).unwrap()).map_err(|e| format!("case {case}: {e}"))?;
        let stream = encode(&symbols, &code).map_err(|e| format!("case {case}: {e}"))?;
        let back = decode(&stream, &code, symbols.len()).map_err(|e| format!("case {case}: {e}"))?;
        if back != symbols {
            return Err(format!("case {case}: decoded stream differs"));
        }
    }
    Ok(())
}

/// Serialize/deserialize bit-exactness of random containers at every stage.
pub fn container_roundtrip_suite(cases: usize, seed: u64) -> Result<(), String> {
    let mut rng = rng(seed);
    for case in 0..cases {
        let stage = (case % 4) as u8;
        let model = random_model(&mut rng, stage);
        let bytes = model.to_bytes().map_err(|e| format!("case {case}: {e}"))?;
        let back = CompressedModel::from_bytes(&bytes).map_err(|e| format!("case {case}: {e}"))?;
        if back != model {
            return Err(format!("case {case}: stage {stage} model differs after load"));
        }
        if back.to_bytes().map_err(|e| format!("case {case}: {e}"))? != bytes {
            return Err(format!("case {case}: stage {stage} bytes differ after reload"));
        }
    }
    Ok(())
}
