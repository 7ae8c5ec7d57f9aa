//! VGG feature extractors, mirrored decoders and their weights.

mod forward;
mod network;
pub mod synthetic;
mod weights;

pub use forward::{
    backward_to_input, decode, encode, encode_all_levels, encode_levels, forward_collect, forward_features,
    forward_output, FeatureMaps,
};
pub use network::{canonical_layer_name, Layer, NetworkSpec, ReluPoint, VGG16_BLOCKS, VGG19_BLOCKS};
pub use weights::{
    dims_string, load_weight_files, load_weights, manifest_path, ChannelOrder, Manifest,
    ManifestEntry, Preprocess, StoredTensor, WeightStore, MAGIC, VERSION,
};
