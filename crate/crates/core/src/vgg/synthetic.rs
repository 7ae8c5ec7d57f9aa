//! Generated weight sets for tests, demos and benchmarks.
//!
//! Values are rounded to `f32` on creation so a store behaves identically
//! before and after a round trip through an SFW1 file.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::tensor::Kernel;

use super::network::{Layer, NetworkSpec};
use super::weights::WeightStore;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Zero-mean Gaussian with standard deviation `sqrt(2 / fan_in)`.
    He,
    /// Rows of the `out x (in*9)` kernel matrix orthonormal (or columns, when
    /// there are more rows than columns), scaled by `gain`.
    Orthogonal { gain: f64 },
}

fn round_f32(v: f64) -> f64 {
    v as f32 as f64
}

/// Random weights for every conv in `net`; biases are zero.
pub fn random_weights(net: &NetworkSpec, init: Init, seed: u64) -> WeightStore {
    let mut store = WeightStore::new();
    add_random_weights(&mut store, net, init, seed);
    store.arch = Some(net.name().to_string());
    store
}

pub fn add_random_weights(store: &mut WeightStore, net: &NetworkSpec, init: Init, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for layer in net.layers() {
        if let Layer::Conv { name, in_c, out_c } = layer {
            let k = match init {
                Init::He => he_kernel(&mut rng, *out_c, *in_c),
                Init::Orthogonal { gain } => orthogonal_kernel(&mut rng, *out_c, *in_c, gain),
            };
            store.insert_conv(name, &k, &vec![0.0; *out_c]);
        }
    }
}

fn he_kernel(rng: &mut ChaCha8Rng, out_c: usize, in_c: usize) -> Kernel {
    let std = (2.0 / (in_c * 9) as f64).sqrt();
    let data = (0..out_c * in_c * 9)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            round_f32(std * z)
        })
        .collect();
    Kernel::new(out_c, in_c, data).expect("sized")
}

fn orthogonal_kernel(rng: &mut ChaCha8Rng, out_c: usize, in_c: usize, gain: f64) -> Kernel {
    let cols = in_c * 9;
    // orthonormalize along the shorter side with modified Gram-Schmidt
    let (n_vec, len) = if out_c <= cols { (out_c, cols) } else { (cols, out_c) };
    let mut vecs: Vec<Vec<f64>> = Vec::with_capacity(n_vec);
    while vecs.len() < n_vec {
        let mut v: Vec<f64> = (0..len).map(|_| StandardNormal.sample(rng)).collect();
        for u in &vecs {
            let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= d * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm < 1e-8 {
            continue;
        }
        v.iter_mut().for_each(|a| *a /= norm);
        vecs.push(v);
    }
    let mut data = vec![0.0; out_c * cols];
    for o in 0..out_c {
        for i in 0..cols {
            let v = if out_c <= cols { vecs[o][i] } else { vecs[i][o] };
            data[o * cols + i] = round_f32(gain * v);
        }
    }
    Kernel::new(out_c, in_c, data).expect("sized")
}

/// Number of pass-through channels: each RGB value split into `max(x, 0)`
/// and `max(-x, 0)`.
const SPLIT: usize = 6;

/// VGG-19 encoder and level 1..=5 decoders built from exact pass-through
/// taps, for use as reference weights when no trained decoders exist.
///
/// The first conv sends each input channel to a `(+x, -x)` pair so the ReLU
/// keeps both signs; later convs copy those six channels; each decoder's last
/// conv recombines `plus - minus`. The level-1 pair reconstructs its input
/// exactly, deeper pairs up to the blockwise loss of max pooling.
pub fn passthrough_autoencoder() -> WeightStore {
    let mut store = WeightStore::new();
    add_passthrough(&mut store, &NetworkSpec::vgg19(), false);
    for level in 1..=5 {
        add_passthrough(&mut store, &NetworkSpec::vgg19_decoder(level), true);
    }
    store.arch = Some("vgg19-passthrough".into());
    store
}

fn add_passthrough(store: &mut WeightStore, net: &NetworkSpec, decoder: bool) {
    for layer in net.layers() {
        let Layer::Conv { name, in_c, out_c } = layer else {
            continue;
        };
        let mut k = Kernel::zeros(*out_c, *in_c);
        if !decoder && *in_c == 3 {
            for c in 0..3 {
                k.set(2 * c, c, 1, 1, 1.0);
                k.set(2 * c + 1, c, 1, 1, -1.0);
            }
        } else if decoder && *out_c == 3 {
            for c in 0..3 {
                k.set(c, 2 * c, 1, 1, 1.0);
                k.set(c, 2 * c + 1, 1, 1, -1.0);
            }
        } else {
            for c in 0..SPLIT.min(*in_c).min(*out_c) {
                k.set(c, c, 1, 1, 1.0);
            }
        }
        store.insert_conv(name, &k, &vec![0.0; *out_c]);
    }
}
