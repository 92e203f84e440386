//! The `generate`, `train`, `analyze`, `predict` and `report` commands run
//! from code on a scaled-down pendulum configuration.
//!
//! cargo run --release --example experiment_pipeline -- [output_dir]

use flowmap_ensemble::experiment::{
    cmd_analyze, cmd_generate, cmd_predict, cmd_report, cmd_train, ExperimentConfig,
    PredictOptions, Preset, TrainOptions,
};

fn main() -> flowmap_ensemble::Result<()> {
    let mut config = ExperimentConfig::preset(Preset::Pendulum);
    config.output_dir = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "flowmap-out/demo".into())
        .into();
    config.n_sequences = 1000;
    config.pool_size = 12;
    config.epochs = 20;
    config.k_list = vec![1, 2, 4];
    config.n_ensembles = 100;
    println!("{}", config.to_toml()?);

    let g = cmd_generate(&config)?;
    println!(
        "dataset: {} sequences at {}",
        g.n_sequences,
        g.path.display()
    );
    cmd_train(&config, TrainOptions::default(), &|line| {
        eprintln!("{line}")
    })?;
    let a = cmd_analyze(&config)?;
    for r in &a.gof {
        println!("K={} {}: p = {:.3}", a.gof_k, r.component, r.p_value);
    }
    let options = PredictOptions {
        compare_oracle: true,
        individual: Some(0),
        ..PredictOptions::default()
    };
    for p in cmd_predict(&config, &options)? {
        println!("wrote {}", p.display());
    }
    print!("{}", cmd_report(&config)?);
    Ok(())
}
