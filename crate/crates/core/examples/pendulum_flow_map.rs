//! Learn the flow map of the damped pendulum with a single network and
//! compare its rollout with the exact trajectory.
//!
//! cargo run --release --example pendulum_flow_map -- [epochs] [n_sequences]

use std::time::Instant;

use flowmap_ensemble::training::{build_dataset, train_one_observed, TrainingSet};
use flowmap_ensemble::{
    rollout_individual, Architecture, DomainBox, MemoryWindow, OptimizerKind, SystemModel,
    TrainConfig,
};

fn main() -> flowmap_ensemble::Result<()> {
    let mut args = std::env::args()
        .skip(1)
        .map(|a| a.parse::<usize>().expect("integer argument"));
    let epochs = args.next().unwrap_or(200);
    let m = args.next().unwrap_or(5000);

    let system = SystemModel::pendulum();
    let dt = 0.02;
    let dataset = build_dataset(&system, &DomainBox::pendulum(), m, dt, 0, 10, 1)?;
    let arch = Architecture::new(2, 0, vec![40, 40])?;
    let data = TrainingSet::from_dataset(&dataset, &arch)?;

    let config = TrainConfig::new(OptimizerKind::Sgd, 1e-3, epochs, 42);
    let start = Instant::now();
    let every = (epochs / 10).max(1);
    let outcome = train_one_observed(&arch, &data, &config, |r| {
        if r.epoch % every == 0 {
            println!("epoch {:>5}  loss {:.4e}", r.epoch, r.loss);
        }
    })?;
    println!(
        "trained {} epochs on {} pairs in {:.1?}",
        epochs,
        m,
        start.elapsed()
    );

    let x0 = vec![-1.193, -3.876];
    let horizon = 200;
    let exact = system.integrate(&x0, dt, horizon, 10)?;
    let model = rollout_individual(&arch, &outcome.params, &MemoryWindow::single(x0)?, horizon)?;
    for n in (0..=horizon).step_by(40) {
        let (v, u) = (&model.states[n], &exact[n]);
        println!(
            "t={:5.2}  model ({:+.4}, {:+.4})  exact ({:+.4}, {:+.4})",
            n as f64 * dt,
            v[0],
            v[1],
            u[0],
            u[1]
        );
    }
    Ok(())
}
