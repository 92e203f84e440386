//! Ensemble-averaged flow-map learning for unknown dynamical systems.
//!
//! A dense `tanh` network `N` is trained to approximate the one-step
//! increment of a dynamical system, so that the learned model advances a
//! state (plus an optional window of past states) by
//!
//! ```text
//! v[n+1] = v[n] + N(v[n], v[n-1], ..., v[n-n_M])
//! ```
//!
//! Training is stochastic, so retraining with a different seed yields a
//! different network. An [`Ensemble`] of `K` independently trained networks
//! predicts by letting every member step from the *same* state and
//! averaging the `K` outputs; the average becomes the input of the next
//! step. The one-step error of the averaged model keeps the bias of a single
//! model while its variance shrinks roughly like `1/K`, which the
//! [`stats`] module measures directly.
//!
//! Module map:
//!
//! - [`net`]: architectures, flat parameter vectors, forward and reverse-mode passes.
//! - [`optim`]: seeded initialization, mini-batch shuffling, SGD and Adam.
//! - [`systems`]: reference ODEs, RK4 integration, domain sampling.
//! - [`training`]: datasets, the mean-squared flow-map loss, ensemble training, model files.
//! - [`predict`]: ensemble-averaged stepping and rollouts.
//! - [`stats`]: local truncation error statistics, bootstrap ensembles, chi-square tests.
//! - [`experiment`]: configuration presets and the commands behind the `flowmap` binary.

pub mod error;
pub mod experiment;
pub mod net;
pub mod optim;
pub mod predict;
pub mod stats;
pub mod systems;
pub mod training;

mod numeric;

pub use error::{Error, Result};
pub use net::{Activation, Architecture, Gradient, MemoryWindow, Parameters};
pub use numeric::derive_seed;
pub use optim::{AdamState, Init, OptimizerKind, TrainConfig};
pub use predict::{ensemble_step, rollout, rollout_individual, RolloutResult, Stepper};
pub use stats::{GofResult, LteStats, VarianceConvention};
pub use systems::{DomainBox, SystemKind, SystemModel};
pub use training::{Dataset, DatasetMeta, Ensemble};
