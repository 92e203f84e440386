//! Flow-map datasets, the mean-squared one-step loss, and training of
//! single models and ensembles of independently seeded models.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::net::{Architecture, BatchWorkspace, Parameters};
use crate::numeric::{compensated_sum, derive_seed, sha256_hex};
use crate::optim::{
    init_params, rng_from_seed, shuffle_batches, Init, Optimizer, OptimizerKind, TrainConfig,
};
use crate::systems::{sample_point, DomainBox, SystemKind, SystemModel};
use crate::{Error, Result};

pub const DATASET_FORMAT_VERSION: u32 = 1;
pub const MODEL_FORMAT_VERSION: u32 = 1;

const DATASET_KIND: &str = "flowmap-dataset";
const MODEL_KIND: &str = "flowmap-model";

/// How the sequences of a [`Dataset`] were generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub system: SystemKind,
    pub dt: f64,
    pub memory_len: usize,
    pub domain: DomainBox,
    pub seed: u64,
    pub substeps: usize,
    pub observed_dim: usize,
    /// Initial conditions that blew up during integration and were redrawn.
    pub resampled: usize,
}

/// `M` sequences of `memory_len + 2` consecutive observed states, oldest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub sequences: Vec<Vec<Vec<f64>>>,
}

#[derive(Serialize, Deserialize)]
struct DatasetFile {
    format_version: u32,
    kind: String,
    meta: DatasetMeta,
    sequences: Vec<Vec<Vec<f64>>>,
}

/// Samples `m` initial conditions in `domain`, integrates each for
/// `memory_len + 1` macro steps and records the observed components.
/// Initial conditions whose trajectories blow up are redrawn; the count is
/// kept in [`DatasetMeta::resampled`].
#[allow(clippy::too_many_arguments)]
pub fn build_dataset(
    system: &SystemModel,
    domain: &DomainBox,
    m: usize,
    dt: f64,
    memory_len: usize,
    substeps: usize,
    seed: u64,
) -> Result<Dataset> {
    if m == 0 {
        return Err(Error::InvalidArgument(
            "dataset needs at least one sequence".into(),
        ));
    }
    domain.validate()?;
    if domain.dim() != system.full_dim() {
        return Err(Error::dim(
            "domain dimension",
            system.full_dim(),
            domain.dim(),
        ));
    }
    let mut rng = rng_from_seed(seed);
    let mut sequences = Vec::with_capacity(m);
    let mut resampled = 0usize;
    let max_failures = 10 * m + 100;
    while sequences.len() < m {
        let x0 = sample_point(domain, &mut rng);
        match system.integrate(&x0, dt, memory_len + 1, substeps) {
            Ok(traj) => sequences.push(traj.iter().map(|x| system.observe(x)).collect()),
            Err(Error::Integration { .. }) => {
                resampled += 1;
                if resampled > max_failures {
                    return Err(Error::InvalidArgument(format!(
                        "{resampled} trajectories blew up; domain or time step is unusable"
                    )));
                }
            }
            Err(e) => return Err(e),
        }
    }
    Ok(Dataset {
        meta: DatasetMeta {
            system: system.kind(),
            dt,
            memory_len,
            domain: domain.clone(),
            seed,
            substeps,
            observed_dim: system.observed_dim(),
            resampled,
        },
        sequences,
    })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let want_len = self.meta.memory_len + 2;
        let d = self.meta.observed_dim;
        if self.sequences.is_empty() {
            return Err(Error::InvalidArgument("dataset has no sequences".into()));
        }
        for seq in &self.sequences {
            if seq.len() != want_len {
                return Err(Error::dim("sequence length", want_len, seq.len()));
            }
            if let Some(bad) = seq.iter().find(|s| s.len() != d) {
                return Err(Error::dim("sequence state dimension", d, bad.len()));
            }
            if seq.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(
                    "dataset contains non-finite values".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let file = DatasetFile {
            format_version: DATASET_FORMAT_VERSION,
            kind: DATASET_KIND.into(),
            meta: self.meta.clone(),
            sequences: self.sequences.clone(),
        };
        serde_json::to_string(&file).map_err(|e| Error::InvalidArgument(e.to_string()))
    }

    /// SHA-256 of the serialized dataset.
    pub fn content_hash(&self) -> Result<String> {
        Ok(sha256_hex(self.to_json()?.as_bytes()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, path)
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        let file: DatasetFile = parse_versioned(text, path, DATASET_FORMAT_VERSION, DATASET_KIND)?;
        let ds = Dataset {
            meta: file.meta,
            sequences: file.sequences,
        };
        ds.validate().map_err(|e| Error::CorruptFile {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Ok(ds)
    }
}

fn parse_versioned<T: serde::de::DeserializeOwned>(
    text: &str,
    path: &Path,
    expected: u32,
    kind: &str,
) -> Result<T> {
    let corrupt = |reason: String| Error::CorruptFile {
        path: path.to_path_buf(),
        reason,
    };
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| corrupt(e.to_string()))?;
    let found = value
        .get("format_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| corrupt("missing format_version".into()))?;
    if found != u64::from(expected) {
        return Err(Error::VersionMismatch {
            found: found as u32,
            expected,
        });
    }
    match value.get("kind").and_then(serde_json::Value::as_str) {
        Some(k) if k == kind => {}
        other => return Err(corrupt(format!("expected kind '{kind}', found {other:?}"))),
    }
    serde_json::from_value(value).map_err(|e| corrupt(e.to_string()))
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Dataset laid out for training: network inputs (newest state first) and
/// the one-step increments the network has to reproduce.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    inputs: Vec<f64>,
    increments: Vec<f64>,
    input_dim: usize,
    state_dim: usize,
    provenance: String,
}

impl TrainingSet {
    pub fn from_dataset(dataset: &Dataset, arch: &Architecture) -> Result<Self> {
        dataset.validate()?;
        if dataset.meta.observed_dim != arch.state_dim() {
            return Err(Error::dim(
                "dataset state dimension",
                arch.state_dim(),
                dataset.meta.observed_dim,
            ));
        }
        if dataset.meta.memory_len != arch.memory_len() {
            return Err(Error::dim(
                "dataset memory length",
                arch.memory_len(),
                dataset.meta.memory_len,
            ));
        }
        let n_m = arch.memory_len();
        let mut inputs = Vec::with_capacity(dataset.len() * arch.input_dim());
        let mut increments = Vec::with_capacity(dataset.len() * arch.state_dim());
        for seq in &dataset.sequences {
            for state in seq[..=n_m].iter().rev() {
                inputs.extend_from_slice(state);
            }
            let (newest, target) = (&seq[n_m], &seq[n_m + 1]);
            increments.extend(target.iter().zip(newest).map(|(t, v)| t - v));
        }
        Ok(Self {
            inputs,
            increments,
            input_dim: arch.input_dim(),
            state_dim: arch.state_dim(),
            provenance: dataset.content_hash()?,
        })
    }

    pub fn len(&self) -> usize {
        self.increments.len() / self.state_dim
    }

    pub fn is_empty(&self) -> bool {
        self.increments.is_empty()
    }

    /// Content hash of the dataset this set was built from.
    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.input_dim..(i + 1) * self.input_dim]
    }

    fn increment(&self, i: usize) -> &[f64] {
        &self.increments[i * self.state_dim..(i + 1) * self.state_dim]
    }

    fn check(&self, arch: &Architecture) -> Result<()> {
        if arch.input_dim() != self.input_dim || arch.state_dim() != self.state_dim {
            return Err(Error::dim(
                "training set input",
                arch.input_dim(),
                self.input_dim,
            ));
        }
        Ok(())
    }
}

const EVAL_CHUNK: usize = 256;

/// Forward (and optionally backward) over `indices`. Returns the sum of
/// squared residuals; when `grad` is given, accumulates
/// `grad_scale * d(sum)/d(params)` into it.
fn accumulate(
    arch: &Architecture,
    params: &[f64],
    data: &TrainingSet,
    indices: &[usize],
    ws: &mut BatchWorkspace,
    mut grad: Option<(&mut [f64], f64)>,
) -> f64 {
    let batch = indices.len();
    let input = ws.input_mut(batch);
    for (dst, &i) in input.chunks_exact_mut(data.input_dim).zip(indices) {
        dst.copy_from_slice(data.input(i));
    }
    arch.forward_batch(params, ws, batch);
    let d = data.state_dim;
    let scale = grad.as_ref().map_or(0.0, |(_, s)| *s);
    let (out, cot) = ws.output_and_cotangent_mut(batch);
    let mut sq = Vec::with_capacity(batch);
    for ((o, c), &i) in out
        .chunks_exact(d)
        .zip(cot.chunks_exact_mut(d))
        .zip(indices)
    {
        let mut s = 0.0;
        for ((oj, cj), rj) in o.iter().zip(c.iter_mut()).zip(data.increment(i)) {
            let r = oj - rj;
            s += r * r;
            *cj = 2.0 * scale * r;
        }
        sq.push(s);
    }
    if let Some((g, _)) = grad.as_mut() {
        arch.backward_batch(params, ws, batch, g, None);
    }
    compensated_sum(sq)
}

/// Mean squared one-step loss `(1/M) sum_m |target_m - residual_step(inputs_m)|^2`.
pub fn mse_loss(arch: &Architecture, params: &Parameters, data: &TrainingSet) -> Result<f64> {
    arch.check_params(params)?;
    data.check(arch)?;
    let mut ws = BatchWorkspace::new(arch, EVAL_CHUNK);
    Ok(full_loss(arch, params.as_slice(), data, &mut ws))
}

fn full_loss(
    arch: &Architecture,
    params: &[f64],
    data: &TrainingSet,
    ws: &mut BatchWorkspace,
) -> f64 {
    let idx: Vec<usize> = (0..data.len()).collect();
    let partial: Vec<f64> = idx
        .chunks(EVAL_CHUNK)
        .map(|chunk| accumulate(arch, params, data, chunk, ws, None))
        .collect();
    compensated_sum(partial) / data.len() as f64
}

/// Loss and its exact gradient over the whole training set.
pub fn mse_loss_and_grad(
    arch: &Architecture,
    params: &Parameters,
    data: &TrainingSet,
) -> Result<(f64, Vec<f64>)> {
    arch.check_params(params)?;
    data.check(arch)?;
    let mut ws = BatchWorkspace::new(arch, EVAL_CHUNK);
    let mut grad = vec![0.0; arch.param_count()];
    let m = data.len() as f64;
    let idx: Vec<usize> = (0..data.len()).collect();
    let partial: Vec<f64> = idx
        .chunks(EVAL_CHUNK)
        .map(|chunk| {
            accumulate(
                arch,
                params.as_slice(),
                data,
                chunk,
                &mut ws,
                Some((&mut grad, 1.0 / m)),
            )
        })
        .collect();
    Ok((compensated_sum(partial) / m, grad))
}

/// Reported to observers after every epoch.
#[derive(Debug)]
pub struct EpochReport<'a> {
    pub epoch: usize,
    pub loss: f64,
    pub params: &'a Parameters,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: Parameters,
    /// Full-dataset loss after each epoch.
    pub loss_history: Vec<f64>,
}

pub fn train_one(
    arch: &Architecture,
    data: &TrainingSet,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    train_one_observed(arch, data, config, |_| {})
}

/// [`train_one`] with a callback after each epoch.
pub fn train_one_observed(
    arch: &Architecture,
    data: &TrainingSet,
    config: &TrainConfig,
    mut observer: impl FnMut(&EpochReport<'_>),
) -> Result<TrainOutcome> {
    config.validate()?;
    data.check(arch)?;
    let mut rng = rng_from_seed(config.seed);
    let mut params = match config.init {
        Init::GlorotUniform => init_params(arch, &mut rng),
    };
    let mut optimizer = Optimizer::new(config.optimizer, params.len());
    let batch_cap = config.batch_size.min(data.len());
    let mut ws = BatchWorkspace::new(arch, batch_cap);
    let mut eval_ws = BatchWorkspace::new(arch, EVAL_CHUNK.min(data.len()));
    let mut grad = vec![0.0; params.len()];
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        for batch in shuffle_batches(data.len(), config.batch_size, &mut rng) {
            grad.fill(0.0);
            let scale = 1.0 / batch.len() as f64;
            accumulate(
                arch,
                params.as_slice(),
                data,
                &batch,
                &mut ws,
                Some((&mut grad, scale)),
            );
            optimizer.step(&mut params, &grad, config.learning_rate);
        }
        let loss = full_loss(arch, params.as_slice(), data, &mut eval_ws);
        if !loss.is_finite() || !params.is_finite() {
            return Err(Error::TrainingDiverged { epoch });
        }
        history.push(loss);
        observer(&EpochReport {
            epoch,
            loss,
            params: &params,
        });
    }
    Ok(TrainOutcome {
        params,
        loss_history: history,
    })
}

/// `K` parameter sets for one architecture, trained with identical settings
/// and different seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    arch: Architecture,
    members: Vec<Parameters>,
    configs: Vec<TrainConfig>,
    provenance: String,
}

impl Ensemble {
    pub fn new(
        arch: Architecture,
        members: Vec<Parameters>,
        configs: Vec<TrainConfig>,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::InvalidModel(
                "an ensemble needs at least one member".into(),
            ));
        }
        if members.len() != configs.len() {
            return Err(Error::InvalidModel(format!(
                "{} members but {} training configs",
                members.len(),
                configs.len()
            )));
        }
        for (i, p) in members.iter().enumerate() {
            if p.len() != arch.param_count() {
                return Err(Error::InvalidModel(format!(
                    "member {i} has {} parameters, architecture needs {}",
                    p.len(),
                    arch.param_count()
                )));
            }
            if !p.is_finite() {
                return Err(Error::InvalidModel(format!(
                    "member {i} has non-finite parameters"
                )));
            }
        }
        if configs.iter().any(|c| !c.same_settings(&configs[0])) {
            return Err(Error::InvalidModel(
                "members must share all training settings except the seed".into(),
            ));
        }
        Ok(Self {
            arch,
            members,
            configs,
            provenance: provenance.into(),
        })
    }

    /// Wraps parameters that did not come out of [`train_ensemble`] (zero
    /// or hand-built networks, tests).
    pub fn from_params(arch: Architecture, members: Vec<Parameters>) -> Result<Self> {
        let configs = (0..members.len())
            .map(|i| TrainConfig::new(OptimizerKind::Sgd, 0.0, 1, i as u64))
            .collect();
        Self::new(arch, members, configs, "")
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn k(&self) -> usize {
        self.members.len()
    }

    pub fn members(&self) -> &[Parameters] {
        &self.members
    }

    pub fn configs(&self) -> &[TrainConfig] {
        &self.configs
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    /// New ensemble made of the given member indices (repeats allowed).
    pub fn select(&self, indices: &[usize]) -> Result<Ensemble> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.k()) {
            return Err(Error::InvalidArgument(format!(
                "member index {bad} out of range for ensemble of {}",
                self.k()
            )));
        }
        Ensemble::new(
            self.arch.clone(),
            indices.iter().map(|&i| self.members[i].clone()).collect(),
            indices.iter().map(|&i| self.configs[i].clone()).collect(),
            self.provenance.clone(),
        )
    }

    /// Appends members trained with the same settings.
    pub fn extend(&mut self, more: Vec<(TrainConfig, Parameters)>) -> Result<()> {
        let mut members = std::mem::take(&mut self.members);
        let mut configs = std::mem::take(&mut self.configs);
        for (c, p) in more {
            configs.push(c);
            members.push(p);
        }
        *self = Ensemble::new(self.arch.clone(), members, configs, self.provenance.clone())?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let c0 = &self.configs[0];
        let file = ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            kind: MODEL_KIND.into(),
            architecture: self.arch.clone(),
            k: self.k(),
            train_settings: TrainSettings {
                optimizer: c0.optimizer,
                learning_rate: c0.learning_rate,
                epochs: c0.epochs,
                batch_size: c0.batch_size,
                init: c0.init,
            },
            members: self
                .members
                .iter()
                .zip(&self.configs)
                .map(|(p, c)| MemberRecord {
                    seed: c.seed,
                    parameters: p.as_slice().to_vec(),
                })
                .collect(),
            provenance: self.provenance.clone(),
        };
        serde_json::to_string(&file).map_err(|e| Error::InvalidArgument(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, path)
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        let file: ModelFile = parse_versioned(text, path, MODEL_FORMAT_VERSION, MODEL_KIND)?;
        if file.k != file.members.len() {
            return Err(Error::InvalidModel(format!(
                "header declares K = {} but file holds {} members",
                file.k,
                file.members.len()
            )));
        }
        let s = file.train_settings;
        let configs = file
            .members
            .iter()
            .map(|m| TrainConfig {
                optimizer: s.optimizer,
                learning_rate: s.learning_rate,
                epochs: s.epochs,
                batch_size: s.batch_size,
                seed: m.seed,
                init: s.init,
            })
            .collect();
        let members = file
            .members
            .into_iter()
            .map(|m| Parameters::from_vec_unchecked(m.parameters))
            .collect();
        Ensemble::new(file.architecture, members, configs, file.provenance)
    }
}

#[derive(Serialize, Deserialize)]
struct TrainSettings {
    optimizer: OptimizerKind,
    learning_rate: f64,
    epochs: usize,
    batch_size: usize,
    init: Init,
}

#[derive(Serialize, Deserialize)]
struct MemberRecord {
    seed: u64,
    parameters: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    kind: String,
    architecture: Architecture,
    k: usize,
    train_settings: TrainSettings,
    members: Vec<MemberRecord>,
    provenance: String,
}

/// Seed used for ensemble member `index` on retry `attempt` (0 = first try).
pub fn member_seed(base_seed: u64, index: usize, attempt: usize) -> u64 {
    let seed = derive_seed(base_seed, index as u64);
    if attempt == 0 {
        seed
    } else {
        derive_seed(seed, attempt as u64)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EnsembleOptions {
    /// Retrains a diverged member with a fresh derived seed up to this many times.
    pub retries: usize,
    /// Worker threads; `None` uses the global rayon pool.
    pub jobs: Option<usize>,
}

impl Default for EnsembleOptions {
    fn default() -> Self {
        Self {
            retries: 2,
            jobs: None,
        }
    }
}

/// Trains the members with the given indices. Results come back in the
/// order of `indices` regardless of scheduling.
pub fn train_members(
    arch: &Architecture,
    data: &TrainingSet,
    base: &TrainConfig,
    indices: &[usize],
    options: &EnsembleOptions,
    progress: &(dyn Fn(usize, &EpochReport<'_>) + Sync),
) -> Result<Vec<(TrainConfig, Parameters)>> {
    base.validate()?;
    let run_one = |&index: &usize| -> Option<(TrainConfig, Parameters)> {
        (0..=options.retries).find_map(|attempt| {
            let config = base
                .clone()
                .with_seed(member_seed(base.seed, index, attempt));
            train_one_observed(arch, data, &config, |r| progress(index, r))
                .ok()
                .map(|o| (config, o.params))
        })
    };
    let results: Vec<Option<(TrainConfig, Parameters)>> = match options.jobs {
        Some(jobs) => rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build()
            .map_err(|e| Error::Config(e.to_string()))?
            .install(|| indices.par_iter().map(run_one).collect()),
        None => indices.par_iter().map(run_one).collect(),
    };
    let failed: Vec<usize> = indices
        .iter()
        .zip(&results)
        .filter(|(_, r)| r.is_none())
        .map(|(&i, _)| i)
        .collect();
    if !failed.is_empty() {
        return Err(Error::EnsembleDiverged { indices: failed });
    }
    Ok(results.into_iter().flatten().collect())
}

/// Trains `k` members with seeds derived from `base.seed` and the member index.
pub fn train_ensemble(
    arch: &Architecture,
    data: &TrainingSet,
    base: &TrainConfig,
    k: usize,
) -> Result<Ensemble> {
    train_ensemble_with(arch, data, base, k, &EnsembleOptions::default())
}

pub fn train_ensemble_with(
    arch: &Architecture,
    data: &TrainingSet,
    base: &TrainConfig,
    k: usize,
    options: &EnsembleOptions,
) -> Result<Ensemble> {
    if k == 0 {
        return Err(Error::InvalidArgument(
            "ensemble size must be at least 1".into(),
        ));
    }
    let indices: Vec<usize> = (0..k).collect();
    let trained = train_members(arch, data, base, &indices, options, &|_, _| {})?;
    let (configs, members) = trained.into_iter().unzip();
    Ensemble::new(arch.clone(), members, configs, data.provenance())
}
