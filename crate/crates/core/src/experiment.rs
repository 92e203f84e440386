//! Reproducible experiment recipes: configuration, presets, and the
//! `generate` / `train` / `analyze` / `predict` / `report` commands.
//!
//! All randomness is derived from `base_seed`, so a resolved configuration
//! file fully determines every artifact. Output layout under `output_dir`:
//!
//! ```text
//! config.toml            resolved configuration
//! dataset/dataset.json
//! models/pool.json
//! reports/lte.csv, gof.json, histogram_x*.csv, provenance.json, rollout*.csv, summary.txt
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::net::{Architecture, MemoryWindow};
use crate::numeric::{derive_seed, sha256_hex};
use crate::optim::{rng_from_seed, OptimizerKind, TrainConfig, DEFAULT_BATCH_SIZE};
use crate::predict::{rollout, rollout_individual};
use crate::stats::{
    chi2_gof_gaussian, default_bins, histogram, variance_scaling_report, write_histogram_csv,
    GofRecord, ScalingReport, VarianceConvention,
};
use crate::systems::{DomainBox, SystemKind, SystemModel};
use crate::training::{
    build_dataset, train_members, write_atomic, Dataset, Ensemble, EnsembleOptions, EpochReport,
    TrainingSet,
};
use crate::{Error, Result};

const STREAM_DATASET: u64 = 1;
const STREAM_TRAIN: u64 = 2;
const STREAM_BOOTSTRAP: u64 = 3;

/// Environment variable naming the default output directory.
pub const OUTPUT_DIR_ENV: &str = "FLOWMAP_OUTPUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Damped pendulum, plain residual network.
    Pendulum,
    /// Partially observed chaotic system with memory length 60.
    Chaotic,
}

impl Preset {
    fn for_system(system: SystemKind) -> Option<Self> {
        match system {
            SystemKind::Pendulum => Some(Preset::Pendulum),
            SystemKind::Chaotic4d => Some(Preset::Chaotic),
            SystemKind::Custom => None,
        }
    }
}

/// Every setting of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemKind,
    pub dt: f64,
    pub substeps: usize,
    pub memory_len: usize,
    pub hidden: Vec<usize>,
    /// Number of training sequences `M`.
    pub n_sequences: usize,
    pub pool_size: usize,
    pub epochs: usize,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub k_list: Vec<usize>,
    pub n_ensembles: usize,
    /// Observed state at which one-step errors are measured and rollouts start.
    pub eval_point: Vec<f64>,
    pub base_seed: u64,
    pub horizon: usize,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    /// Desk-scale defaults for a preset.
    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Pendulum => Self {
                system: SystemKind::Pendulum,
                dt: 0.02,
                substeps: 10,
                memory_len: 0,
                hidden: vec![40, 40],
                n_sequences: 5000,
                pool_size: 100,
                epochs: 500,
                optimizer: OptimizerKind::Sgd,
                learning_rate: 1e-3,
                batch_size: DEFAULT_BATCH_SIZE,
                k_list: vec![1, 5, 10, 50],
                n_ensembles: 200,
                eval_point: vec![-1.193, -3.876],
                base_seed: 2024,
                horizon: 50,
                output_dir: PathBuf::from("flowmap-out/pendulum"),
            },
            Preset::Chaotic => Self {
                system: SystemKind::Chaotic4d,
                dt: 0.02,
                substeps: 20,
                memory_len: 60,
                hidden: vec![30, 30, 30],
                n_sequences: 5000,
                pool_size: 60,
                epochs: 100,
                optimizer: OptimizerKind::Adam,
                learning_rate: 1e-3,
                batch_size: DEFAULT_BATCH_SIZE,
                k_list: vec![1, 10, 50],
                n_ensembles: 200,
                eval_point: vec![-3.7634, 7.1463, 13.1806],
                base_seed: 2024,
                horizon: 100,
                output_dir: PathBuf::from("flowmap-out/chaotic"),
            },
        }
    }

    /// Large-pool variant of a preset: 1000 models, 500 bootstrap ensembles,
    /// and 2000 epochs for the pendulum.
    pub fn paper_scale(preset: Preset) -> Self {
        let mut c = Self::preset(preset);
        c.pool_size = 1000;
        c.n_ensembles = 500;
        if preset == Preset::Pendulum {
            c.epochs = 2000;
        }
        c
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return fail(format!("dt must be positive, got {}", self.dt));
        }
        if self.substeps == 0 || self.n_sequences == 0 || self.pool_size == 0 || self.epochs == 0 {
            return fail("substeps, n_sequences, pool_size and epochs must be positive".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return fail(format!(
                "learning_rate must be non-negative, got {}",
                self.learning_rate
            ));
        }
        if self.k_list.is_empty() || self.k_list.contains(&0) {
            return fail("k_list must be non-empty with positive entries".into());
        }
        if self.n_ensembles < 2 {
            return fail("n_ensembles must be at least 2".into());
        }
        let system = self.system_model()?;
        if self.eval_point.len() != system.observed_dim() {
            return fail(format!(
                "eval_point needs {} components, got {}",
                system.observed_dim(),
                self.eval_point.len()
            ));
        }
        self.architecture()?;
        Ok(())
    }

    pub fn system_model(&self) -> Result<SystemModel> {
        SystemModel::from_kind(self.system)
    }

    pub fn domain(&self) -> Result<DomainBox> {
        match self.system {
            SystemKind::Pendulum => Ok(DomainBox::pendulum()),
            SystemKind::Chaotic4d => Ok(DomainBox::chaotic4d()),
            SystemKind::Custom => Err(Error::Config("custom systems have no preset domain".into())),
        }
    }

    pub fn architecture(&self) -> Result<Architecture> {
        let observed = self.system_model()?.observed_dim();
        Architecture::new(observed, self.memory_len, self.hidden.clone())
            .map_err(|e| Error::Config(e.to_string()))
    }

    /// Shared training settings; member seeds are derived from this seed.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig::new(
            self.optimizer,
            self.learning_rate,
            self.epochs,
            derive_seed(self.base_seed, STREAM_TRAIN),
        )
        .with_batch_size(self.batch_size)
    }

    pub fn dataset_seed(&self) -> u64 {
        derive_seed(self.base_seed, STREAM_DATASET)
    }

    pub fn bootstrap_seed(&self) -> u64 {
        derive_seed(self.base_seed, STREAM_BOOTSTRAP)
    }

    pub fn dataset_path(&self) -> PathBuf {
        self.output_dir.join("dataset").join("dataset.json")
    }

    pub fn pool_path(&self) -> PathBuf {
        self.output_dir.join("models").join("pool.json")
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.output_dir.join("reports")
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    fn write_resolved(&self) -> Result<()> {
        write_atomic(
            &self.output_dir.join("config.toml"),
            self.to_toml()?.as_bytes(),
        )
    }

    /// Exact memory window ending at the evaluation point's trajectory, the
    /// exact next state, and the observed oracle trajectory `horizon` steps on.
    pub fn exact_start(&self, horizon: usize) -> Result<ExactStart> {
        exact_start(
            &self.system_model()?,
            &self.eval_point,
            self.memory_len,
            self.dt,
            self.substeps,
            horizon,
        )
    }
}

/// Partially specified configuration: a config file or command-line overrides.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigLayer {
    pub preset: Option<Preset>,
    pub paper_scale: Option<bool>,
    pub system: Option<SystemKind>,
    pub dt: Option<f64>,
    pub substeps: Option<usize>,
    pub memory_len: Option<usize>,
    pub hidden: Option<Vec<usize>>,
    pub n_sequences: Option<usize>,
    pub pool_size: Option<usize>,
    pub epochs: Option<usize>,
    pub optimizer: Option<OptimizerKind>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub k_list: Option<Vec<usize>>,
    pub n_ensembles: Option<usize>,
    pub eval_point: Option<Vec<f64>>,
    pub base_seed: Option<u64>,
    pub horizon: Option<usize>,
    pub output_dir: Option<PathBuf>,
}

impl ConfigLayer {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    fn apply(&self, c: &mut ExperimentConfig) {
        macro_rules! take {
            ($($f:ident),*) => { $( if let Some(v) = &self.$f { c.$f = v.clone(); } )* };
        }
        take!(
            system,
            dt,
            substeps,
            memory_len,
            hidden,
            n_sequences,
            pool_size,
            epochs,
            optimizer,
            learning_rate,
            batch_size,
            k_list,
            n_ensembles,
            eval_point,
            base_seed,
            horizon,
            output_dir
        );
    }
}

/// Resolves `flags > file > preset defaults`. The preset comes from the
/// flags, then the file, then the file's `system`.
pub fn resolve_config(file: Option<&ConfigLayer>, flags: &ConfigLayer) -> Result<ExperimentConfig> {
    let empty = ConfigLayer::default();
    let file = file.unwrap_or(&empty);
    let preset = flags
        .preset
        .or(file.preset)
        .or_else(|| flags.system.or(file.system).and_then(Preset::for_system))
        .ok_or_else(|| Error::Config("no preset given (use --preset or a config file)".into()))?;
    let paper = flags.paper_scale.or(file.paper_scale).unwrap_or(false);
    let mut config = if paper {
        ExperimentConfig::paper_scale(preset)
    } else {
        ExperimentConfig::preset(preset)
    };
    file.apply(&mut config);
    flags.apply(&mut config);
    config.validate()?;
    Ok(config)
}

/// Exact initial data for one-step error experiments and rollouts.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactStart {
    pub window: MemoryWindow,
    pub next: Vec<f64>,
    /// Observed states from the oldest window entry through `horizon` steps
    /// past the window.
    pub trajectory: Vec<Vec<f64>>,
}

/// Lifts `eval_point` to a full state, integrates it forward, and uses the
/// first `memory_len + 1` observed states as the window. For systems without
/// memory the window is just the evaluation point.
pub fn exact_start(
    system: &SystemModel,
    eval_point: &[f64],
    memory_len: usize,
    dt: f64,
    substeps: usize,
    horizon: usize,
) -> Result<ExactStart> {
    let x0 = system.lift(eval_point)?;
    let steps = memory_len + horizon.max(1);
    let traj: Vec<Vec<f64>> = system
        .integrate(&x0, dt, steps, substeps)?
        .iter()
        .map(|x| system.observe(x))
        .collect();
    let window = MemoryWindow::from_chronological(&traj[..=memory_len])?;
    let next = traj[memory_len + 1].clone();
    let trajectory = traj[..=memory_len + horizon].to_vec();
    Ok(ExactStart {
        window,
        next,
        trajectory,
    })
}

#[derive(Debug, Clone)]
pub struct GenerateSummary {
    pub path: PathBuf,
    pub n_sequences: usize,
    pub dt: f64,
    pub memory_len: usize,
    pub resampled: usize,
}

pub fn cmd_generate(config: &ExperimentConfig) -> Result<GenerateSummary> {
    config.validate()?;
    let system = config.system_model()?;
    let dataset = build_dataset(
        &system,
        &config.domain()?,
        config.n_sequences,
        config.dt,
        config.memory_len,
        config.substeps,
        config.dataset_seed(),
    )?;
    let path = config.dataset_path();
    dataset.save(&path)?;
    config.write_resolved()?;
    Ok(GenerateSummary {
        path,
        n_sequences: dataset.len(),
        dt: dataset.meta.dt,
        memory_len: dataset.meta.memory_len,
        resampled: dataset.meta.resampled,
    })
}

fn load_matching_dataset(config: &ExperimentConfig) -> Result<Dataset> {
    let path = config.dataset_path();
    if !path.exists() {
        return Err(Error::io(
            &path,
            std::io::Error::new(
                std::io::ErrorKind::NotFound,
                "dataset missing; run `generate` first",
            ),
        ));
    }
    let dataset = Dataset::load(&path)?;
    let m = &dataset.meta;
    if m.system != config.system
        || m.dt.to_bits() != config.dt.to_bits()
        || m.memory_len != config.memory_len
        || m.seed != config.dataset_seed()
        || dataset.len() != config.n_sequences
    {
        return Err(Error::Config(format!(
            "dataset at {} was generated with a different configuration",
            path.display()
        )));
    }
    Ok(dataset)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct TrainOptions {
    /// Keep members already present in the pool file and train only the rest.
    pub resume: bool,
    pub jobs: Option<usize>,
}

/// Trains `pool_size` members and writes the pool file, checkpointing after
/// each group of `jobs` members. `progress` receives lines of the form
/// `model i/N epoch e loss L`.
pub fn cmd_train(
    config: &ExperimentConfig,
    options: TrainOptions,
    progress: &(dyn Fn(&str) + Sync),
) -> Result<PathBuf> {
    config.validate()?;
    let dataset = load_matching_dataset(config)?;
    let arch = config.architecture()?;
    let data = TrainingSet::from_dataset(&dataset, &arch)?;
    let base = config.train_config();
    let path = config.pool_path();

    let mut pool: Option<Ensemble> = None;
    if options.resume && path.exists() {
        let existing = Ensemble::load(&path)?;
        let consistent = existing.arch() == &arch
            && existing.provenance() == data.provenance()
            && existing.k() <= config.pool_size
            && existing.configs().iter().all(|c| c.same_settings(&base));
        if !consistent {
            return Err(Error::Config(format!(
                "existing pool at {} does not match this configuration",
                path.display()
            )));
        }
        pool = Some(existing);
    }
    let done = pool.as_ref().map_or(0, Ensemble::k);
    let n = config.pool_size;
    let every = (config.epochs / 10).max(1);
    let report = |i: usize, r: &EpochReport<'_>| {
        if r.epoch.is_multiple_of(every) || r.epoch == config.epochs {
            progress(&format!(
                "model {}/{} epoch {} loss {:.6e}",
                i + 1,
                n,
                r.epoch,
                r.loss
            ));
        }
    };
    let chunk = options
        .jobs
        .unwrap_or_else(rayon::current_num_threads)
        .max(1);
    let ensemble_options = EnsembleOptions {
        jobs: options.jobs,
        ..EnsembleOptions::default()
    };
    let remaining: Vec<usize> = (done..n).collect();
    for group in remaining.chunks(chunk) {
        let trained = train_members(&arch, &data, &base, group, &ensemble_options, &report)?;
        match pool.as_mut() {
            Some(p) => p.extend(trained)?,
            None => {
                let (configs, members) = trained.into_iter().unzip();
                pool = Some(Ensemble::new(
                    arch.clone(),
                    members,
                    configs,
                    data.provenance(),
                )?);
            }
        }
        pool.as_ref().expect("pool initialized").save(&path)?;
    }
    if pool.is_none() {
        return Err(Error::Config("pool_size is zero".into()));
    }
    config.write_resolved()?;
    Ok(path)
}

#[derive(Debug, Clone)]
pub struct AnalyzeSummary {
    pub report: ScalingReport,
    pub gof_k: usize,
    pub gof: Vec<GofRecord>,
    pub reports_dir: PathBuf,
}

fn load_pool(config: &ExperimentConfig) -> Result<Ensemble> {
    let path = config.pool_path();
    let pool = Ensemble::load(&path)?;
    if pool.arch() != &config.architecture()? {
        return Err(Error::Config(format!(
            "pool at {} has a different architecture than the configuration",
            path.display()
        )));
    }
    Ok(pool)
}

fn file_hash(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path).map_err(|e| Error::io(path, e))?))
}

fn write_csv_file(path: &Path, write: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    write(&mut buf)?;
    write_atomic(path, &buf)
}

/// Variance-scaling table at the evaluation point, plus chi-square tests
/// and histograms of the errors of the largest ensemble size.
pub fn cmd_analyze(config: &ExperimentConfig) -> Result<AnalyzeSummary> {
    config.validate()?;
    let pool = load_pool(config)?;
    let start = config.exact_start(1)?;
    let mut rng = rng_from_seed(config.bootstrap_seed());
    let report = variance_scaling_report(
        &pool,
        &config.k_list,
        &start.window,
        &start.next,
        config.n_ensembles,
        &mut rng,
        VarianceConvention::UnbiasedNMinus1,
    )?;
    let dir = config.reports_dir();
    write_csv_file(&dir.join("lte.csv"), |b| report.write_csv(b))?;

    let largest = report
        .rows
        .iter()
        .max_by_key(|r| r.k)
        .expect("k_list is non-empty");
    let mut gof = Vec::new();
    for c in 0..largest.stats.bias.len() {
        let samples: Vec<f64> = largest.errors.iter().map(|e| e.values[c]).collect();
        let (mean, var) = (largest.stats.bias[c], largest.stats.variance[c]);
        if var > 0.0 {
            let r = chi2_gof_gaussian(&samples, mean, var, 0.05, default_bins(samples.len()))?;
            gof.push(GofRecord::new(c, &r));
            let bins = histogram(&samples, 20, mean, var)?;
            write_csv_file(&dir.join(format!("histogram_x{}.csv", c + 1)), |b| {
                write_histogram_csv(b, &bins)
            })?;
        }
    }
    let gof_json =
        serde_json::to_string_pretty(&gof).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    write_atomic(&dir.join("gof.json"), gof_json.as_bytes())?;

    let mut prov = BTreeMap::new();
    prov.insert(
        "dataset_sha256",
        file_hash(&config.dataset_path()).unwrap_or_default(),
    );
    prov.insert("pool_sha256", file_hash(&config.pool_path())?);
    prov.insert("pool_dataset_hash", pool.provenance().to_string());
    prov.insert("config_sha256", sha256_hex(config.to_toml()?.as_bytes()));
    let prov_json =
        serde_json::to_string_pretty(&prov).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    write_atomic(&dir.join("provenance.json"), prov_json.as_bytes())?;

    Ok(AnalyzeSummary {
        gof_k: largest.k,
        report,
        gof,
        reports_dir: dir,
    })
}

#[derive(Debug, Clone, Default)]
pub struct PredictOptions {
    /// Steps past the initial window; `None` uses the config's horizon.
    pub horizon: Option<usize>,
    /// Use only the first `members` pool members as the ensemble.
    pub members: Option<usize>,
    /// Also write the rollout of this single member.
    pub individual: Option<usize>,
    /// Append oracle columns `u1..ud`.
    pub compare_oracle: bool,
    /// Also write every member's prediction at every step.
    pub per_member: bool,
}

pub fn cmd_predict(config: &ExperimentConfig, options: &PredictOptions) -> Result<Vec<PathBuf>> {
    config.validate()?;
    let pool = load_pool(config)?;
    let horizon = options.horizon.unwrap_or(config.horizon);
    let ensemble = match options.members {
        Some(k) if k == 0 || k > pool.k() => {
            return Err(Error::Config(format!(
                "--members must be in 1..={}",
                pool.k()
            )))
        }
        Some(k) => pool.select(&(0..k).collect::<Vec<_>>())?,
        None => pool.clone(),
    };
    let start = config.exact_start(horizon)?;
    let result = rollout(&ensemble, &start.window, horizon, options.per_member)?;
    let dir = config.reports_dir();
    let oracle = options
        .compare_oracle
        .then_some(start.trajectory.as_slice());
    let mut written = Vec::new();

    let path = dir.join("rollout.csv");
    write_csv_file(&path, |b| {
        write_rollout_csv(b, &result.states, oracle, config.dt)
    })?;
    written.push(path);

    if options.per_member {
        let path = dir.join("rollout_members.csv");
        write_csv_file(&path, |b| result.write_member_csv(b, 0.0, config.dt))?;
        written.push(path);
    }
    if let Some(i) = options.individual {
        let params = pool.members().get(i).ok_or_else(|| {
            Error::Config(format!(
                "--individual {i} out of range (pool has {})",
                pool.k()
            ))
        })?;
        let single = rollout_individual(pool.arch(), params, &start.window, horizon)?;
        let path = dir.join(format!("rollout_individual_{i}.csv"));
        write_csv_file(&path, |b| {
            write_rollout_csv(b, &single.states, oracle, config.dt)
        })?;
        written.push(path);
    }
    Ok(written)
}

/// `step,t,v1..vd[,u1..ud]`
fn write_rollout_csv(
    out: &mut Vec<u8>,
    states: &[Vec<f64>],
    oracle: Option<&[Vec<f64>]>,
    dt: f64,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let d = states[0].len();
    let mut header = vec!["step".to_string(), "t".to_string()];
    header.extend((1..=d).map(|i| format!("v{i}")));
    if oracle.is_some() {
        header.extend((1..=d).map(|i| format!("u{i}")));
    }
    w.write_record(&header)?;
    for (n, s) in states.iter().enumerate() {
        let mut row = vec![n.to_string(), (n as f64 * dt).to_string()];
        row.extend(s.iter().map(f64::to_string));
        if let Some(o) = oracle {
            row.extend(o[n].iter().map(f64::to_string));
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<rollout csv>", e))?;
    Ok(())
}

/// Renders `reports/lte.csv` as a table with one column per ensemble size
/// and writes it to `reports/summary.txt`.
pub fn cmd_report(config: &ExperimentConfig) -> Result<String> {
    let path = config.reports_dir().join("lte.csv");
    let mut reader = csv::Reader::from_path(&path)?;
    // (statistic, component) -> K -> value
    let mut table: BTreeMap<(usize, String), BTreeMap<usize, f64>> = BTreeMap::new();
    let mut ks = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let parse_err = || Error::CorruptFile {
            path: path.clone(),
            reason: format!("bad row {rec:?}"),
        };
        let k: usize = rec
            .get(0)
            .and_then(|s| s.parse().ok())
            .ok_or_else(parse_err)?;
        let comp = rec.get(1).ok_or_else(parse_err)?.to_string();
        if !ks.contains(&k) {
            ks.push(k);
        }
        for (stat, col) in [(0usize, 2usize), (1, 3), (2, 4)] {
            let v: f64 = rec
                .get(col)
                .and_then(|s| s.parse().ok())
                .ok_or_else(parse_err)?;
            table.entry((stat, comp.clone())).or_default().insert(k, v);
        }
    }
    let names = ["Bias", "Var", "MSE"];
    let mut out = String::new();
    let _ = write!(out, "{:<12}", "K");
    for k in &ks {
        let _ = write!(out, "{k:>14}");
    }
    out.push('\n');
    for ((stat, comp), row) in &table {
        let _ = write!(out, "{:<12}", format!("{}({comp})", names[*stat]));
        for k in &ks {
            match row.get(k) {
                Some(v) => {
                    let _ = write!(out, "{v:>14.4e}");
                }
                None => {
                    let _ = write!(out, "{:>14}", "-");
                }
            }
        }
        out.push('\n');
    }
    write_atomic(&config.reports_dir().join("summary.txt"), out.as_bytes())?;
    Ok(out)
}

/// Process exit code for an error: 2 configuration, 3 divergence, 4 I/O.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::TrainingDiverged { .. }
        | Error::EnsembleDiverged { .. }
        | Error::RolloutDiverged { .. }
        | Error::Integration { .. } => 3,
        Error::Io { .. }
        | Error::Csv(_)
        | Error::CorruptFile { .. }
        | Error::VersionMismatch { .. } => 4,
        Error::Config(_)
        | Error::InvalidArgument(_)
        | Error::DimensionMismatch { .. }
        | Error::InvalidModel(_)
        | Error::NotEnoughSamples { .. } => 2,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_encode_reference_settings() {
        let p = ExperimentConfig::preset(Preset::Pendulum);
        assert_eq!(p.hidden, vec![40, 40]);
        assert_eq!(p.memory_len, 0);
        assert_eq!(p.optimizer, OptimizerKind::Sgd);
        assert_eq!(p.learning_rate, 1e-3);
        assert_eq!(p.eval_point, vec![-1.193, -3.876]);
        assert_eq!(p.architecture().unwrap().param_count(), 1842);

        let c = ExperimentConfig::preset(Preset::Chaotic);
        assert_eq!(c.hidden, vec![30, 30, 30]);
        assert_eq!(c.memory_len, 60);
        assert_eq!(c.optimizer, OptimizerKind::Adam);
        assert_eq!(c.epochs, 100);
        assert_eq!(c.eval_point, vec![-3.7634, 7.1463, 13.1806]);
        assert_eq!(c.architecture().unwrap().param_count(), 7473);
        assert_eq!(c.domain().unwrap(), DomainBox::chaotic4d());

        assert_eq!(
            ExperimentConfig::paper_scale(Preset::Chaotic).pool_size,
            1000
        );
    }

    #[test]
    fn precedence_flags_over_file_over_preset() {
        let file =
            ConfigLayer::from_toml("preset = \"pendulum\"\nepochs = 7\npool_size = 3\n").unwrap();
        let flags = ConfigLayer {
            epochs: Some(9),
            ..Default::default()
        };
        let c = resolve_config(Some(&file), &flags).unwrap();
        assert_eq!(c.epochs, 9);
        assert_eq!(c.pool_size, 3);
        assert_eq!(c.n_sequences, 5000);
    }

    #[test]
    fn resolved_config_round_trips_through_toml() {
        let c = ExperimentConfig::preset(Preset::Chaotic);
        let layer = ConfigLayer::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(
            resolve_config(Some(&layer), &ConfigLayer::default()).unwrap(),
            c
        );
    }

    #[test]
    fn config_errors() {
        assert!(matches!(
            resolve_config(None, &ConfigLayer::default()),
            Err(Error::Config(_))
        ));
        assert!(ConfigLayer::from_toml("bogus = 1").is_err());
        let flags = ConfigLayer {
            preset: Some(Preset::Pendulum),
            eval_point: Some(vec![1.0]),
            ..Default::default()
        };
        assert!(resolve_config(None, &flags).is_err());
    }

    #[test]
    fn pendulum_start_is_the_eval_point() {
        let c = ExperimentConfig::preset(Preset::Pendulum);
        let s = c.exact_start(3).unwrap();
        assert_eq!(s.window.states(), std::slice::from_ref(&c.eval_point));
        assert_eq!(s.trajectory.len(), 4);
        assert_eq!(s.trajectory[1], s.next);
    }

    #[test]
    fn chaotic_start_has_full_memory() {
        let c = ExperimentConfig::preset(Preset::Chaotic);
        let s = c.exact_start(1).unwrap();
        assert_eq!(s.window.len(), 61);
        assert_eq!(s.window.states()[60], c.eval_point);
        assert_eq!(s.trajectory.len(), 62);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(exit_code(&Error::EnsembleDiverged { indices: vec![1] }), 3);
        assert_eq!(exit_code(&Error::io("p", std::io::Error::other("x"))), 4);
    }
}
