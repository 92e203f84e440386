//! Seeded stochastic optimization: parameter initialization, per-epoch
//! mini-batch shuffling, and the SGD / Adam update rules.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::net::{Architecture, Parameters};
use crate::{Error, Result};

/// Random generator used for every stochastic choice in the crate.
pub type TrainRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> TrainRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub const DEFAULT_BATCH_SIZE: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(Self::Sgd),
            "adam" => Ok(Self::Adam),
            other => Err(Error::Config(format!("unknown optimizer '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    #[default]
    GlorotUniform,
}

/// Everything that determines one training run besides the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default)]
    pub init: Init,
}

fn default_batch_size() -> usize {
    DEFAULT_BATCH_SIZE
}

impl TrainConfig {
    pub fn new(optimizer: OptimizerKind, learning_rate: f64, epochs: usize, seed: u64) -> Self {
        Self {
            optimizer,
            learning_rate,
            epochs,
            batch_size: DEFAULT_BATCH_SIZE,
            seed,
            init: Init::GlorotUniform,
        }
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// `learning_rate = 0` is accepted: it leaves parameters at initialization.
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        Ok(())
    }

    /// True when `self` and `other` agree on everything but the seed.
    pub fn same_settings(&self, other: &TrainConfig) -> bool {
        self.optimizer == other.optimizer
            && self.learning_rate.to_bits() == other.learning_rate.to_bits()
            && self.epochs == other.epochs
            && self.batch_size == other.batch_size
            && self.init == other.init
    }
}

/// Glorot-uniform weights, zero biases.
pub fn init_params(arch: &Architecture, rng: &mut impl Rng) -> Parameters {
    let mut params = Parameters::zeros(arch);
    let values = params.as_mut_slice();
    for layer in arch.layers() {
        let limit = (6.0 / (layer.fan_in + layer.fan_out) as f64).sqrt();
        for w in &mut values[layer.weight_range()] {
            *w = rng.random_range(-limit..limit);
        }
    }
    params
}

/// A fresh random permutation of `0..n_samples` split into consecutive
/// batches of `batch_size` (the last one may be short).
pub fn shuffle_batches(n_samples: usize, batch_size: usize, rng: &mut impl Rng) -> Vec<Vec<usize>> {
    assert!(batch_size > 0, "batch_size must be positive");
    let mut order: Vec<usize> = (0..n_samples).collect();
    order.shuffle(rng);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

/// `params -= lr * grad`
pub fn sgd_step(params: &mut Parameters, grad: &[f64], lr: f64) {
    debug_assert_eq!(params.len(), grad.len());
    for (p, g) in params.as_mut_slice().iter_mut().zip(grad) {
        *p -= lr * g;
    }
}

/// Adam moment buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n_params: usize) -> Self {
        Self {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One bias-corrected Adam update, in place.
    pub fn step(&mut self, params: &mut Parameters, grad: &[f64], lr: f64) {
        debug_assert_eq!(params.len(), grad.len());
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        for (((p, &g), m), v) in params
            .as_mut_slice()
            .iter_mut()
            .zip(grad)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Optimizer state owned by a single training run.
#[derive(Debug, Clone)]
pub enum Optimizer {
    Sgd,
    Adam(AdamState),
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, n_params: usize) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd,
            OptimizerKind::Adam => Optimizer::Adam(AdamState::new(n_params)),
        }
    }

    pub fn step(&mut self, params: &mut Parameters, grad: &[f64], lr: f64) {
        match self {
            Optimizer::Sgd => sgd_step(params, grad, lr),
            Optimizer::Adam(state) => state.step(params, grad, lr),
        }
    }
}
