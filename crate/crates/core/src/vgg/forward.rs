use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::tensor::{
    conv2d_backward, conv2d_forward, maxpool2x2, maxpool2x2_backward, relu, relu_backward,
    upsample_nearest2x, PoolIndices, Shape3, Tensor,
};

use super::network::{canonical_layer_name, Layer, NetworkSpec};
use super::weights::WeightStore;

/// What the backward pass needs from each executed layer.
#[derive(Clone, Debug)]
enum TapeEntry {
    Conv { input_shape: Shape3 },
    Relu { input: Tensor },
    MaxPool { indices: PoolIndices, input_shape: Shape3 },
    Upsample { input_shape: Shape3 },
}

/// Activations captured during one forward pass, plus the tape for backward.
#[derive(Clone, Debug)]
pub struct FeatureMaps {
    acts: BTreeMap<String, Tensor>,
    tape: Vec<TapeEntry>,
    input_shape: Shape3,
}

impl FeatureMaps {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.acts.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.acts.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.acts.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.acts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.acts.is_empty()
    }

    pub fn input_shape(&self) -> Shape3 {
        self.input_shape
    }

    pub fn into_map(self) -> BTreeMap<String, Tensor> {
        self.acts
    }
}

fn resolve_captures(net: &NetworkSpec, capture: &[&str]) -> Result<(BTreeSet<String>, usize)> {
    let mut names = BTreeSet::new();
    let mut deepest = 0;
    for raw in capture {
        let name = canonical_layer_name(raw);
        let idx = net.layer_index(&name).ok_or_else(|| {
            Error::argument(format!("unknown capture layer {raw} in {}", net.name()))
        })?;
        deepest = deepest.max(idx + 1);
        names.insert(name);
    }
    Ok((names, deepest))
}

fn run(
    net: &NetworkSpec,
    weights: &WeightStore,
    image: &Tensor,
    capture: &BTreeSet<String>,
    stop: usize,
    record: bool,
) -> Result<(Tensor, FeatureMaps)> {
    if image.channels() != net.in_channels() {
        return Err(Error::shape(format!(
            "{} expects {} input channels, got {}",
            net.name(),
            net.in_channels(),
            image.channels()
        )));
    }
    let mut fm = FeatureMaps {
        acts: BTreeMap::new(),
        tape: Vec::new(),
        input_shape: image.shape(),
    };
    let mut x = image.clone();
    for layer in &net.layers()[..stop] {
        let (out, entry) = match layer {
            Layer::Conv { name, in_c, out_c } => {
                let k = weights.kernel(name, *in_c, *out_c)?;
                let b = weights.bias(name, *out_c)?;
                let out = conv2d_forward(&x, &k, b)?;
                (out, TapeEntry::Conv { input_shape: x.shape() })
            }
            Layer::Relu { .. } => {
                let out = relu(&x);
                (out, TapeEntry::Relu { input: x })
            }
            Layer::MaxPool { .. } => {
                let (out, indices) = maxpool2x2(&x)?;
                (
                    out,
                    TapeEntry::MaxPool {
                        indices,
                        input_shape: x.shape(),
                    },
                )
            }
            Layer::Upsample { .. } => {
                let out = upsample_nearest2x(&x);
                (out, TapeEntry::Upsample { input_shape: x.shape() })
            }
        };
        if record {
            fm.tape.push(entry);
        }
        if capture.contains(layer.name()) {
            fm.acts.insert(layer.name().to_string(), out.clone());
        }
        x = out;
    }
    Ok((x, fm))
}

/// Runs `net` on `image` up to the deepest requested layer and returns the
/// requested activations together with the tape for [`backward_to_input`].
pub fn forward_collect(
    net: &NetworkSpec,
    weights: &WeightStore,
    image: &Tensor,
    capture: &[&str],
) -> Result<FeatureMaps> {
    let (names, stop) = resolve_captures(net, capture)?;
    Ok(run(net, weights, image, &names, stop, true)?.1)
}

/// Like [`forward_collect`] but keeps no tape.
pub fn forward_features(
    net: &NetworkSpec,
    weights: &WeightStore,
    image: &Tensor,
    capture: &[&str],
) -> Result<FeatureMaps> {
    let (names, stop) = resolve_captures(net, capture)?;
    Ok(run(net, weights, image, &names, stop, false)?.1)
}

/// Output of the whole network.
pub fn forward_output(net: &NetworkSpec, weights: &WeightStore, input: &Tensor) -> Result<Tensor> {
    Ok(run(net, weights, input, &BTreeSet::new(), net.layers().len(), false)?.0)
}

/// Gradient of a loss with respect to the network input, given the loss
/// gradient at each captured activation. Linear in `grads`.
pub fn backward_to_input(
    net: &NetworkSpec,
    weights: &WeightStore,
    features: &FeatureMaps,
    grads: &BTreeMap<String, Tensor>,
) -> Result<Tensor> {
    let mut deepest = 0;
    for (name, g) in grads {
        let act = features.get(name).ok_or_else(|| {
            Error::argument(format!("gradient given for {name}, which was not captured"))
        })?;
        g.expect_shape(act.shape(), &format!("gradient for {name}"))?;
        let idx = net.layer_index(name).ok_or_else(|| {
            Error::argument(format!("unknown layer {name} in {}", net.name()))
        })?;
        deepest = deepest.max(idx + 1);
    }
    if deepest > features.tape.len() {
        return Err(Error::argument(
            "feature maps carry no tape for this layer; use forward_collect",
        ));
    }
    if deepest == 0 {
        return Ok(Tensor::zeros(features.input_shape));
    }

    let layers = &net.layers()[..deepest];
    let out_shape = features
        .get(layers[deepest - 1].name())
        .map(Tensor::shape)
        .expect("deepest gradient layer is captured");
    let mut g = Tensor::zeros(out_shape);
    for (layer, entry) in layers.iter().zip(&features.tape).rev() {
        if let Some(extra) = grads.get(layer.name()) {
            g.add_scaled(extra, 1.0)?;
        }
        g = match (layer, entry) {
            (Layer::Conv { name, in_c, out_c }, TapeEntry::Conv { input_shape }) => {
                let k = weights.kernel(name, *in_c, *out_c)?;
                conv2d_backward(&Tensor::zeros(*input_shape), &k, &g)?
            }
            (Layer::Relu { .. }, TapeEntry::Relu { input }) => relu_backward(input, &g)?,
            (Layer::MaxPool { .. }, TapeEntry::MaxPool { indices, input_shape }) => {
                maxpool2x2_backward(indices, &g, *input_shape)?
            }
            (Layer::Upsample { .. }, TapeEntry::Upsample { input_shape }) => {
                crate::tensor::avgpool2x2(&g)?.scale(4.0).reshape(*input_shape)?
            }
            _ => return Err(Error::argument("tape does not match network layers")),
        };
    }
    Ok(g)
}

/// VGG-19 encoding of a network-space image at `relu{level}_1`.
pub fn encode(level: usize, weights: &WeightStore, image: &Tensor) -> Result<Tensor> {
    check_level(level)?;
    let net = NetworkSpec::vgg19_encoder(level);
    let name = format!("relu{level}_1");
    let mut fm = forward_features(&net, weights, image, &[&name])?;
    Ok(fm.acts.remove(&name).expect("captured"))
}

/// All five `relu{X}_1` encodings from one pass.
pub fn encode_all_levels(weights: &WeightStore, image: &Tensor) -> Result<BTreeMap<usize, Tensor>> {
    encode_levels(weights, image, 5)
}

/// `relu{X}_1` encodings for `X = 1..=max_level` from one pass.
pub fn encode_levels(
    weights: &WeightStore,
    image: &Tensor,
    max_level: usize,
) -> Result<BTreeMap<usize, Tensor>> {
    check_level(max_level)?;
    let net = NetworkSpec::vgg19_encoder(max_level);
    let names: Vec<String> = (1..=max_level).map(|l| format!("relu{l}_1")).collect();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let fm = forward_features(&net, weights, image, &refs)?.into_map();
    Ok((1..=max_level)
        .map(|l| (l, fm[&format!("relu{l}_1")].clone()))
        .collect())
}

/// Decodes `relu{level}_1` features back to a 3-channel network-space image.
pub fn decode(level: usize, weights: &WeightStore, features: &Tensor) -> Result<Tensor> {
    check_level(level)?;
    let enc_c = NetworkSpec::vgg19_encoder(level).output_channels();
    if features.channels() != enc_c {
        return Err(Error::shape(format!(
            "level {level} decoder expects {enc_c} channels, got {}",
            features.channels()
        )));
    }
    forward_output(&NetworkSpec::vgg19_decoder(level), weights, features)
}

fn check_level(level: usize) -> Result<()> {
    if !(1..=5).contains(&level) {
        return Err(Error::argument(format!("level must be in 1..=5, got {level}")));
    }
    Ok(())
}
