//! Partially observed chaotic system: the fast variable `y` is hidden and a
//! memory of 60 past states stands in for it.
//!
//! cargo run --release --example chaotic_memory -- [epochs] [n_sequences]

use std::time::Instant;

use flowmap_ensemble::experiment::exact_start;
use flowmap_ensemble::training::{build_dataset, train_one_observed, TrainingSet};
use flowmap_ensemble::{
    rollout_individual, Architecture, DomainBox, OptimizerKind, SystemModel, TrainConfig,
};

fn main() -> flowmap_ensemble::Result<()> {
    let mut args = std::env::args()
        .skip(1)
        .map(|a| a.parse::<usize>().expect("integer argument"));
    let epochs = args.next().unwrap_or(20);
    let m = args.next().unwrap_or(5000);
    let (dt, memory, substeps) = (0.02, 60, 20);

    let system = SystemModel::chaotic4d();
    let dataset = build_dataset(&system, &DomainBox::chaotic4d(), m, dt, memory, substeps, 1)?;
    println!(
        "{} sequences of {} observed states ({} redrawn)",
        dataset.len(),
        memory + 2,
        dataset.meta.resampled
    );

    let arch = Architecture::new(3, memory, vec![30, 30, 30])?;
    let data = TrainingSet::from_dataset(&dataset, &arch)?;
    let start = Instant::now();
    let config = TrainConfig::new(OptimizerKind::Adam, 1e-3, epochs, 7);
    let outcome = train_one_observed(&arch, &data, &config, |r| {
        println!("epoch {:>4}  loss {:.4e}", r.epoch, r.loss);
    })?;
    println!("{} parameters, {:.1?}", arch.param_count(), start.elapsed());

    // The memory window ends 60 steps after z0; compare the next 100 steps.
    let horizon = 100;
    let exact = exact_start(
        &system,
        &[-3.7634, 7.1463, 13.1806],
        memory,
        dt,
        substeps,
        horizon,
    )?;
    let model = rollout_individual(&arch, &outcome.params, &exact.window, horizon)?;
    for n in (memory..=memory + horizon).step_by(25) {
        let (v, u) = (&model.states[n], &exact.trajectory[n]);
        let err: f64 = v
            .iter()
            .zip(u)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        println!(
            "step {:>3}  model {:+8.3?}  exact {:+8.3?}  |err| {:.3e}",
            n - memory,
            v,
            u,
            err
        );
    }
    Ok(())
}
