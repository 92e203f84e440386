use flowmap_ensemble::optim::rng_from_seed;
use flowmap_ensemble::training::{
    build_dataset, member_seed, mse_loss, train_ensemble, train_one, TrainingSet,
};
use flowmap_ensemble::{
    Architecture, DomainBox, OptimizerKind, Parameters, SystemModel, TrainConfig,
};

fn pendulum_sets(m: usize) -> (Architecture, TrainingSet, TrainingSet) {
    let sys = SystemModel::pendulum();
    let arch = Architecture::new(2, 0, vec![16, 16]).unwrap();
    let train = build_dataset(&sys, &DomainBox::pendulum(), m, 0.02, 0, 10, 11).unwrap();
    let held_out = build_dataset(&sys, &DomainBox::pendulum(), 100, 0.02, 0, 10, 12).unwrap();
    (
        arch.clone(),
        TrainingSet::from_dataset(&train, &arch).unwrap(),
        TrainingSet::from_dataset(&held_out, &arch).unwrap(),
    )
}

#[test]
fn trained_members_beat_their_initialization_on_held_out_data() {
    let (arch, train, held_out) = pendulum_sets(500);
    let base = TrainConfig::new(OptimizerKind::Adam, 1e-3, 15, 3);
    let ens = train_ensemble(&arch, &train, &base, 3).unwrap();
    for (member, config) in ens.members().iter().zip(ens.configs()) {
        let init = flowmap_ensemble::optim::init_params(&arch, &mut rng_from_seed(config.seed));
        let after = mse_loss(&arch, member, &held_out).unwrap();
        let before = mse_loss(&arch, &init, &held_out).unwrap();
        assert!(after.is_finite() && after < before, "{after} vs {before}");
    }
}

#[test]
fn longer_training_does_not_raise_the_loss() {
    let (arch, train, _) = pendulum_sets(300);
    let losses: Vec<f64> = [5, 20, 80]
        .iter()
        .map(|&e| {
            let c = TrainConfig::new(OptimizerKind::Sgd, 1e-3, e, 7);
            *train_one(&arch, &train, &c)
                .unwrap()
                .loss_history
                .last()
                .unwrap()
        })
        .collect();
    assert!(
        losses[1] <= losses[0] && losses[2] <= losses[1],
        "{losses:?}"
    );
}

#[test]
fn single_member_ensemble_is_train_one() {
    let (arch, train, _) = pendulum_sets(100);
    let base = TrainConfig::new(OptimizerKind::Sgd, 1e-3, 3, 21);
    let ens = train_ensemble(&arch, &train, &base, 1).unwrap();
    let direct = train_one(
        &arch,
        &train,
        &base.clone().with_seed(member_seed(21, 0, 0)),
    )
    .unwrap();
    assert_eq!(ens.members()[0], direct.params);
}

#[test]
fn members_are_pairwise_distinct() {
    let (arch, train, _) = pendulum_sets(100);
    let ens = train_ensemble(
        &arch,
        &train,
        &TrainConfig::new(OptimizerKind::Sgd, 1e-3, 1, 5),
        4,
    )
    .unwrap();
    let m: &[Parameters] = ens.members();
    for i in 0..m.len() {
        for j in i + 1..m.len() {
            assert_ne!(m[i], m[j]);
        }
    }
}

#[test]
fn constant_trajectories_are_fit_by_the_identity() {
    let sys = SystemModel::custom(1, 1, |_, dx| dx[0] = 0.0).unwrap();
    let arch = Architecture::new(1, 0, vec![3]).unwrap();
    let ds = build_dataset(
        &sys,
        &DomainBox::new(vec![-1.0], vec![1.0]).unwrap(),
        10,
        0.1,
        0,
        1,
        0,
    )
    .unwrap();
    let data = TrainingSet::from_dataset(&ds, &arch).unwrap();
    assert_eq!(
        mse_loss(&arch, &Parameters::zeros(&arch), &data).unwrap(),
        0.0
    );
}
