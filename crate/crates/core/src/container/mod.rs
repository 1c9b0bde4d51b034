//! Compressed-model container: per-layer stage records, the `WPCM` wire format and
//! storage statistics.

pub mod format;
pub mod layer;
pub mod stats;

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Activation, Layer, Network};

pub use format::{deserialize, serialize, Category, EncodedRecord, PayloadKind};
pub use layer::{
    reconstruct_dense, sparse_layer, HuffmanLayer, LayerPayload, LayerRecord, QuantizedLayer, SparseIndex, Stage,
};
pub use stats::{compute_stats, Breakdown, LayerStats, StatsReport};

/// Ordered layer records plus dense biases.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedModel {
    layers: Vec<LayerRecord>,
    biases: Vec<Vec<f32>>,
}

/// Conventional names for fully connected layers: `ip1`, `ip2`, ...
pub fn default_layer_names(count: usize) -> Vec<String> {
    (1..=count).map(|i| format!("ip{i}")).collect()
}

impl CompressedModel {
    pub fn new(layers: Vec<LayerRecord>, biases: Vec<Vec<f32>>) -> Result<Self> {
        if layers.len() != biases.len() {
            return Err(Error::Consistency(format!(
                "{} layers but {} bias arrays",
                layers.len(),
                biases.len()
            )));
        }
        for (l, b) in layers.iter().zip(&biases) {
            if l.shape().0 != b.len() {
                return Err(Error::Shape(format!(
                    "layer {} has {} rows but {} biases",
                    l.name,
                    l.shape().0,
                    b.len()
                )));
            }
        }
        Ok(Self { layers, biases })
    }

    pub fn empty() -> Self {
        Self {
            layers: Vec::new(),
            biases: Vec::new(),
        }
    }

    /// Every layer stored as raw dense weights.
    pub fn from_network(network: &Network) -> Result<Self> {
        Self::from_records(network, |_, layer| Ok(LayerPayload::Dense(layer.weights.clone())))
    }

    /// Builds one record per network layer with names from [`default_layer_names`].
    pub fn from_records(
        network: &Network,
        mut payload: impl FnMut(usize, &Layer) -> Result<LayerPayload>,
    ) -> Result<Self> {
        let names = default_layer_names(network.layers().len());
        let mut layers = Vec::new();
        for (i, (layer, name)) in network.layers().iter().zip(names).enumerate() {
            layers.push(LayerRecord::new(name, payload(i, layer)?)?);
        }
        let biases = network.layers().iter().map(|l| l.bias.clone()).collect();
        Self::new(layers, biases)
    }

    pub fn layers(&self) -> &[LayerRecord] {
        &self.layers
    }

    pub fn biases(&self) -> &[Vec<f32>] {
        &self.biases
    }

    /// The common stage of all layers, if they agree.
    pub fn stage(&self) -> Option<Stage> {
        let first = self.layers.first()?.stage();
        self.layers.iter().all(|l| l.stage() == first).then_some(first)
    }

    pub fn map_layers(&self, f: impl Fn(&LayerRecord) -> Result<LayerRecord>) -> Result<Self> {
        Self::new(
            self.layers.iter().map(f).collect::<Result<Vec<_>>>()?,
            self.biases.clone(),
        )
    }

    /// Huffman-codes every quantized layer.
    pub fn entropy_coded(&self) -> Result<Self> {
        self.map_layers(LayerRecord::entropy_coded)
    }

    /// Decodes every Huffman layer back to its quantized form.
    pub fn unentropy(&self) -> Result<Self> {
        self.map_layers(LayerRecord::unentropy)
    }

    /// Dense network with reconstructed weights: ReLU hidden layers, softmax output.
    pub fn to_network(&self) -> Result<Network> {
        let depth = self.layers.len();
        let mut layers = Vec::with_capacity(depth);
        for (i, (record, bias)) in self.layers.iter().zip(&self.biases).enumerate() {
            let activation = if i + 1 == depth {
                Activation::SoftmaxOutput
            } else {
                Activation::Relu
            };
            layers.push(Layer::new(reconstruct_dense(record)?, bias.clone(), activation)?);
        }
        Network::new(layers)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        serialize(self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        deserialize(bytes)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::Io(e).context(path.display().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::Io(e).context(path.display().to_string()))?;
        Self::from_bytes(&bytes).map_err(|e| e.context(path.display().to_string()))
    }
}
