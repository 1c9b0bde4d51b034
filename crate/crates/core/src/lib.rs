//! Deep-compression toolkit for fully connected networks: magnitude pruning with
//! relative sparse indices, trained k-means weight sharing, canonical Huffman coding,
//! a compressed container format and kernels that run the compressed layers directly.

pub mod cli;
pub mod container;
pub mod engine;
pub mod error;
pub mod huffman;
pub mod model;
pub mod prune;
pub mod quant;
mod wire;

pub use error::{Error, Result};
