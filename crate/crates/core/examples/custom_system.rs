//! Flow-map learning for a user-defined ODE (a Van der Pol oscillator), with
//! a two-state memory window and a short ensemble rollout.

use flowmap_ensemble::training::{build_dataset, train_ensemble, TrainingSet};
use flowmap_ensemble::{
    rollout, Architecture, DomainBox, MemoryWindow, OptimizerKind, SystemModel, TrainConfig,
};

fn main() -> flowmap_ensemble::Result<()> {
    let mu = 1.0;
    let system = SystemModel::custom(2, 2, move |x, dx| {
        dx[0] = x[1];
        dx[1] = mu * (1.0 - x[0] * x[0]) * x[1] - x[0];
    })?;
    let domain = DomainBox::new(vec![-3.0, -3.0], vec![3.0, 3.0])?;
    let (dt, memory) = (0.05, 1);
    let dataset = build_dataset(&system, &domain, 1500, dt, memory, 10, 8)?;
    let arch = Architecture::new(2, memory, vec![32, 32])?;
    let data = TrainingSet::from_dataset(&dataset, &arch)?;
    let ensemble = train_ensemble(
        &arch,
        &data,
        &TrainConfig::new(OptimizerKind::Adam, 2e-3, 40, 1),
        4,
    )?;

    let exact = system.integrate(&[2.0, 0.0], dt, 60, 10)?;
    let window = MemoryWindow::from_chronological(&exact[..=memory])?;
    let predicted = rollout(&ensemble, &window, 60 - memory, false)?;
    for n in (0..=60).step_by(10) {
        println!(
            "t={:4.2}  model {:+.3?}  exact {:+.3?}",
            n as f64 * dt,
            predicted.states[n],
            exact[n]
        );
    }
    Ok(())
}
