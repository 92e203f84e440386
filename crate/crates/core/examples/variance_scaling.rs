//! One-step error statistics of bootstrap ensembles drawn from a pool of
//! independently trained pendulum models.
//!
//! cargo run --release --example variance_scaling -- [pool] [epochs]

use flowmap_ensemble::optim::rng_from_seed;
use flowmap_ensemble::stats::variance_scaling_report;
use flowmap_ensemble::training::{build_dataset, train_ensemble, TrainingSet};
use flowmap_ensemble::{
    Architecture, DomainBox, MemoryWindow, OptimizerKind, SystemModel, TrainConfig,
    VarianceConvention,
};

fn main() -> flowmap_ensemble::Result<()> {
    let mut args = std::env::args()
        .skip(1)
        .map(|a| a.parse::<usize>().expect("integer argument"));
    let pool_size = args.next().unwrap_or(40);
    let epochs = args.next().unwrap_or(30);

    let system = SystemModel::pendulum();
    let dt = 0.02;
    let dataset = build_dataset(&system, &DomainBox::pendulum(), 2000, dt, 0, 10, 5)?;
    let arch = Architecture::new(2, 0, vec![40, 40])?;
    let data = TrainingSet::from_dataset(&dataset, &arch)?;
    let pool = train_ensemble(
        &arch,
        &data,
        &TrainConfig::new(OptimizerKind::Sgd, 1e-3, epochs, 17),
        pool_size,
    )?;

    let x0 = vec![-1.193, -3.876];
    let next = system.integrate(&x0, dt, 1, 10)?.pop().expect("one step");
    let window = MemoryWindow::single(x0)?;
    let mut rng = rng_from_seed(1);
    let report = variance_scaling_report(
        &pool,
        &[1, 2, 5, 10, 20],
        &window,
        &next,
        200,
        &mut rng,
        VarianceConvention::UnbiasedNMinus1,
    )?;

    let var1 = report.row(1).expect("K=1 row").stats.variance.clone();
    println!(
        "{:>4} {:>12} {:>12} {:>10} {:>10}",
        "K", "bias x1", "var x1", "K*ratio1", "K*ratio2"
    );
    for row in &report.rows {
        let s = &row.stats;
        println!(
            "{:>4} {:>12.4e} {:>12.4e} {:>10.3} {:>10.3}",
            row.k,
            s.bias[0],
            s.variance[0],
            row.k as f64 * s.variance[0] / var1[0],
            row.k as f64 * s.variance[1] / var1[1]
        );
    }
    Ok(())
}
