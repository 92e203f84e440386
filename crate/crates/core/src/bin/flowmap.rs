use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use flowmap_ensemble::experiment::{
    cmd_analyze, cmd_generate, cmd_predict, cmd_report, cmd_train, exit_code, resolve_config,
    ConfigLayer, ExperimentConfig, PredictOptions, Preset, TrainOptions, OUTPUT_DIR_ENV,
};
use flowmap_ensemble::{OptimizerKind, Result};

#[derive(Parser)]
#[command(
    name = "flowmap",
    version,
    about = "Ensemble-averaged ResNet flow maps",
    args_override_self = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample trajectories and write the training dataset.
    Generate(Common),
    /// Train the model pool.
    Train {
        #[command(flatten)]
        common: Common,
        /// Keep members already in the pool file.
        #[arg(long)]
        resume: bool,
    },
    /// One-step error statistics, chi-square tests, and histograms.
    Analyze(Common),
    /// Roll the ensemble forward from the evaluation point.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        horizon: Option<usize>,
        /// Use only the first N pool members.
        #[arg(long)]
        members: Option<usize>,
        /// Also write the rollout of member i.
        #[arg(long)]
        individual: Option<usize>,
        /// Add columns with the exact trajectory.
        #[arg(long)]
        compare_oracle: bool,
        /// Also write each member's prediction at each step.
        #[arg(long)]
        per_member: bool,
    },
    /// Print the error table from `analyze`.
    Report(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    #[arg(long)]
    paper_scale: bool,
    #[arg(long, env = OUTPUT_DIR_ENV)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_sequences: Option<usize>,
    #[arg(long)]
    pool_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    optimizer: Option<OptimizerKind>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    k_list: Option<Vec<usize>>,
    #[arg(long)]
    n_ensembles: Option<usize>,
    /// Worker threads for training.
    #[arg(long)]
    jobs: Option<usize>,
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let file = self.config.as_deref().map(ConfigLayer::load).transpose()?;
        let flags = ConfigLayer {
            preset: self.preset,
            paper_scale: self.paper_scale.then_some(true),
            output_dir: self.output_dir.clone(),
            base_seed: self.seed,
            n_sequences: self.n_sequences,
            pool_size: self.pool_size,
            epochs: self.epochs,
            optimizer: self.optimizer,
            learning_rate: self.lr,
            batch_size: self.batch_size,
            k_list: self.k_list.clone(),
            n_ensembles: self.n_ensembles,
            ..ConfigLayer::default()
        };
        resolve_config(file.as_ref(), &flags)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(common) => {
            let s = cmd_generate(&common.resolve()?)?;
            println!(
                "wrote {} sequences (dt {}, memory {}, {} redrawn) to {}",
                s.n_sequences,
                s.dt,
                s.memory_len,
                s.resampled,
                s.path.display()
            );
        }
        Command::Train { common, resume } => {
            let config = common.resolve()?;
            let options = TrainOptions {
                resume,
                jobs: common.jobs,
            };
            let path = cmd_train(&config, options, &|line| eprintln!("{line}"))?;
            println!("wrote {}", path.display());
        }
        Command::Analyze(common) => {
            let s = cmd_analyze(&common.resolve()?)?;
            for r in &s.gof {
                println!(
                    "K={} {}: chi2 {:.3} dof {} p {:.4} {}",
                    s.gof_k,
                    r.component,
                    r.statistic,
                    r.dof,
                    r.p_value,
                    if r.reject { "reject" } else { "accept" }
                );
            }
            println!("wrote reports to {}", s.reports_dir.display());
        }
        Command::Predict {
            common,
            horizon,
            members,
            individual,
            compare_oracle,
            per_member,
        } => {
            let options = PredictOptions {
                horizon,
                members,
                individual,
                compare_oracle,
                per_member,
            };
            for p in cmd_predict(&common.resolve()?, &options)? {
                println!("wrote {}", p.display());
            }
        }
        Command::Report(common) => print!("{}", cmd_report(&common.resolve()?)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
