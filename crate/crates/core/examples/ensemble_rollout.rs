//! Train a small ensemble on the pendulum and compare the step-averaged
//! rollout against each member's own rollout.
//!
//! cargo run --release --example ensemble_rollout -- [k] [epochs]

use flowmap_ensemble::training::{build_dataset, train_ensemble, TrainingSet};
use flowmap_ensemble::{
    rollout, rollout_individual, Architecture, DomainBox, MemoryWindow, OptimizerKind, SystemModel,
    TrainConfig,
};

fn l2(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(v, u)| v.iter().zip(u).map(|(x, y)| (x - y).powi(2)).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

fn main() -> flowmap_ensemble::Result<()> {
    let mut args = std::env::args()
        .skip(1)
        .map(|a| a.parse::<usize>().expect("integer argument"));
    let k = args.next().unwrap_or(8);
    let epochs = args.next().unwrap_or(60);

    let system = SystemModel::pendulum();
    let dt = 0.02;
    let dataset = build_dataset(&system, &DomainBox::pendulum(), 2000, dt, 0, 10, 3)?;
    let arch = Architecture::new(2, 0, vec![40, 40])?;
    let data = TrainingSet::from_dataset(&dataset, &arch)?;
    let base = TrainConfig::new(OptimizerKind::Adam, 1e-3, epochs, 99);
    let ensemble = train_ensemble(&arch, &data, &base, k)?;

    let x0 = vec![-1.193, -3.876];
    let horizon = 100;
    let exact = system.integrate(&x0, dt, horizon, 10)?;
    let init = MemoryWindow::single(x0)?;

    let averaged = rollout(&ensemble, &init, horizon, false)?;
    println!(
        "ensemble of {k}: trajectory error {:.4}",
        l2(&averaged.states, &exact)
    );
    for (i, m) in ensemble.members().iter().enumerate() {
        let single = rollout_individual(&arch, m, &init, horizon)?;
        println!(
            "member {i}: trajectory error {:.4}",
            l2(&single.states, &exact)
        );
    }
    averaged.write_csv(std::io::stdout().lock(), 0.0, dt)?;
    Ok(())
}
