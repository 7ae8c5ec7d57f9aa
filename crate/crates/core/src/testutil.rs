//! Helpers shared by the unit tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::tensor::{Shape3, Tensor};

pub(crate) use crate::gradcheck::rel_err;

pub(crate) struct TestRng(ChaCha8Rng);

impl TestRng {
    pub(crate) fn new(seed: u64) -> Self {
        TestRng(ChaCha8Rng::seed_from_u64(seed))
    }

    pub(crate) fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.0.random_range(lo..hi)
    }

    pub(crate) fn normal(&mut self) -> f64 {
        self.0.sample(StandardNormal)
    }
}

pub(crate) fn random_tensor(rng: &mut TestRng, shape: Shape3) -> Tensor {
    Tensor::new(shape, (0..shape.len()).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap()
}
