use std::fmt;

/// One step of a feed-forward network.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Layer {
    /// 3x3 convolution, stride 1, padding 1; weights at `{name}.weight` / `{name}.bias`.
    Conv {
        name: String,
        in_c: usize,
        out_c: usize,
    },
    Relu {
        name: String,
    },
    MaxPool {
        name: String,
    },
    Upsample {
        name: String,
    },
}

impl Layer {
    pub fn name(&self) -> &str {
        match self {
            Layer::Conv { name, .. }
            | Layer::Relu { name }
            | Layer::MaxPool { name }
            | Layer::Upsample { name } => name,
        }
    }
}

/// Ordered layer list of a VGG-style network or decoder.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetworkSpec {
    name: String,
    in_channels: usize,
    layers: Vec<Layer>,
}

/// A ReLU output that follows a convolution, with its 1-based conv depth.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReluPoint {
    pub name: String,
    pub depth: usize,
    /// Position of the conv within its block (1 for `reluX_1`).
    pub index_in_block: usize,
    /// Number of pools applied before this point.
    pub pools_before: usize,
    pub channels: usize,
}

pub const VGG16_BLOCKS: [(usize, usize); 5] = [(2, 64), (2, 128), (3, 256), (3, 512), (3, 512)];
pub const VGG19_BLOCKS: [(usize, usize); 5] = [(2, 64), (2, 128), (4, 256), (4, 512), (4, 512)];

impl NetworkSpec {
    pub fn new(name: impl Into<String>, in_channels: usize, layers: Vec<Layer>) -> Self {
        NetworkSpec {
            name: name.into(),
            in_channels,
            layers,
        }
    }

    /// VGG-style encoder from `(convs per block, channels)` pairs, with a max
    /// pool between consecutive blocks. Layers are named `conv{b}_{i}`,
    /// `relu{b}_{i}` and `pool{b}`, each prefixed by `prefix`.
    pub fn from_blocks(name: &str, prefix: &str, in_channels: usize, blocks: &[(usize, usize)]) -> Self {
        let mut layers = Vec::new();
        let mut c = in_channels;
        for (b, &(convs, out_c)) in blocks.iter().enumerate() {
            let b = b + 1;
            if b > 1 {
                layers.push(Layer::MaxPool {
                    name: format!("{prefix}pool{}", b - 1),
                });
            }
            for i in 1..=convs {
                layers.push(Layer::Conv {
                    name: format!("{prefix}conv{b}_{i}"),
                    in_c: c,
                    out_c,
                });
                layers.push(Layer::Relu {
                    name: format!("{prefix}relu{b}_{i}"),
                });
                c = out_c;
            }
        }
        NetworkSpec::new(name, in_channels, layers)
    }

    /// VGG-16 feature extractor: 13 convolutions in a 2-2-3-3-3 pattern.
    pub fn vgg16() -> Self {
        NetworkSpec::from_blocks("vgg16", "", 3, &VGG16_BLOCKS)
    }

    /// Full VGG-19 feature stack through `relu5_4`.
    pub fn vgg19() -> Self {
        NetworkSpec::from_blocks("vgg19", "", 3, &VGG19_BLOCKS)
    }

    /// VGG-19 encoder slice ending at `relu{level}_1`.
    pub fn vgg19_encoder(level: usize) -> Self {
        assert!((1..=5).contains(&level), "encoder level must be 1..=5");
        let full = NetworkSpec::vgg19();
        let mut net = full
            .truncated(&format!("relu{level}_1"))
            .expect("vgg19 contains every reluX_1");
        net.name = format!("vgg19_enc{level}");
        net
    }

    /// Decoder inverting [`NetworkSpec::vgg19_encoder`] for `level`: the
    /// encoder's layers in reverse with each conv's channels swapped, pools
    /// replaced by nearest upsampling and no ReLU after the final conv.
    pub fn vgg19_decoder(level: usize) -> Self {
        let enc = NetworkSpec::vgg19_encoder(level);
        let prefix = format!("dec{level}.");
        let mut layers = Vec::new();
        let convs: Vec<&Layer> = enc.layers.iter().rev().collect();
        let n_convs = convs.iter().filter(|l| matches!(l, Layer::Conv { .. })).count();
        let mut seen = 0;
        for layer in convs {
            match layer {
                Layer::Conv { name, in_c, out_c } => {
                    seen += 1;
                    layers.push(Layer::Conv {
                        name: format!("{prefix}{name}"),
                        in_c: *out_c,
                        out_c: *in_c,
                    });
                    if seen < n_convs {
                        layers.push(Layer::Relu {
                            name: format!("{prefix}{}", name.replace("conv", "relu")),
                        });
                    }
                }
                Layer::MaxPool { name } => layers.push(Layer::Upsample {
                    name: format!("{prefix}{}", name.replace("pool", "up")),
                }),
                Layer::Relu { .. } | Layer::Upsample { .. } => {}
            }
        }
        let in_c = enc.output_channels();
        NetworkSpec::new(format!("vgg19_dec{level}"), in_c, layers)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layer_index(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.name() == name)
    }

    pub fn convs(&self) -> impl Iterator<Item = (&str, usize, usize)> {
        self.layers.iter().filter_map(|l| match l {
            Layer::Conv { name, in_c, out_c } => Some((name.as_str(), *in_c, *out_c)),
            _ => None,
        })
    }

    pub fn conv_count(&self) -> usize {
        self.convs().count()
    }

    pub fn output_channels(&self) -> usize {
        self.convs().last().map_or(self.in_channels, |(_, _, o)| o)
    }

    /// Prefix of the network ending at (and including) `name`.
    pub fn truncated(&self, name: &str) -> Option<NetworkSpec> {
        let idx = self.layer_index(name)?;
        Some(NetworkSpec {
            name: self.name.clone(),
            in_channels: self.in_channels,
            layers: self.layers[..=idx].to_vec(),
        })
    }

    /// Every ReLU that directly follows a conv, in network order.
    pub fn relu_points(&self) -> Vec<ReluPoint> {
        let mut out = Vec::new();
        let mut depth = 0;
        let mut pools = 0;
        let mut in_block = 0;
        let mut last_conv_c = self.in_channels;
        for layer in &self.layers {
            match layer {
                Layer::Conv { out_c, .. } => {
                    depth += 1;
                    in_block += 1;
                    last_conv_c = *out_c;
                }
                Layer::MaxPool { .. } => {
                    pools += 1;
                    in_block = 0;
                }
                Layer::Upsample { .. } => in_block = 0,
                Layer::Relu { name } => out.push(ReluPoint {
                    name: name.clone(),
                    depth,
                    index_in_block: in_block,
                    pools_before: pools,
                    channels: last_conv_c,
                }),
            }
        }
        out
    }

    /// Spatial downsampling factor at the output of layer `name`.
    pub fn stride_at(&self, name: &str) -> Option<usize> {
        let idx = self.layer_index(name)?;
        let mut f = 1;
        for layer in &self.layers[..=idx] {
            match layer {
                Layer::MaxPool { .. } => f *= 2,
                Layer::Upsample { .. } => f /= 2,
                _ => {}
            }
        }
        Some(f)
    }

    /// Number of max pools, which fixes the input-size multiple the network needs.
    pub fn pool_count(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| matches!(l, Layer::MaxPool { .. }))
            .count()
    }
}

impl fmt::Display for NetworkSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({} convs)", self.name, self.conv_count())
    }
}

/// Accepts `Relu_4_1`-style names as aliases for `relu4_1`.
pub fn canonical_layer_name(name: &str) -> String {
    let lower = name.to_ascii_lowercase();
    for kind in ["relu", "conv", "pool"] {
        if let Some(rest) = lower.strip_prefix(kind) {
            if let Some(stripped) = rest.strip_prefix('_') {
                return format!("{kind}{stripped}");
            }
        }
    }
    lower
}
