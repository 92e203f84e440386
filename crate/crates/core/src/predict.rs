//! Ensemble-averaged time stepping.
//!
//! Every member steps from the *same* window, the `K` predictions are
//! averaged, and the average is pushed into the window for the next step.
//! This is not the same as averaging `K` independent rollouts once the
//! dynamics are nonlinear.

use std::io::Write;

use crate::net::{Architecture, MemoryWindow, Parameters};
use crate::numeric::mean_of_vectors;
use crate::training::Ensemble;
use crate::{Error, Result};

/// Anything that advances a memory window by one step.
pub trait Stepper {
    fn arch(&self) -> &Architecture;
    fn step(&self, window: &MemoryWindow) -> Result<Vec<f64>>;
}

/// A single trained network used as a stepper.
#[derive(Debug, Clone, Copy)]
pub struct Individual<'a> {
    pub arch: &'a Architecture,
    pub params: &'a Parameters,
}

impl<'a> Individual<'a> {
    pub fn new(arch: &'a Architecture, params: &'a Parameters) -> Self {
        Self { arch, params }
    }
}

impl Stepper for Individual<'_> {
    fn arch(&self) -> &Architecture {
        self.arch
    }

    fn step(&self, window: &MemoryWindow) -> Result<Vec<f64>> {
        let next = self.arch.residual_step(self.params, window)?;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::RolloutDiverged {
                step: None,
                member: 0,
            });
        }
        Ok(next)
    }
}

impl Stepper for Ensemble {
    fn arch(&self) -> &Architecture {
        Ensemble::arch(self)
    }

    fn step(&self, window: &MemoryWindow) -> Result<Vec<f64>> {
        ensemble_step(self, window).map(|s| s.mean)
    }
}

/// Output of [`ensemble_step`].
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStep {
    pub mean: Vec<f64>,
    /// `v^(i) = newest + N(window; theta_i)` for every member, in member order.
    pub members: Vec<Vec<f64>>,
}

pub fn ensemble_step(ensemble: &Ensemble, window: &MemoryWindow) -> Result<EnsembleStep> {
    let arch = ensemble.arch();
    arch.check_window(window)?;
    let members = ensemble
        .members()
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let v = arch.residual_step(p, window)?;
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::RolloutDiverged {
                    step: None,
                    member: i,
                });
            }
            Ok(v)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EnsembleStep {
        mean: average_states(&members),
        members,
    })
}

/// Arithmetic mean of member predictions, as used by every ensemble step.
pub fn average_states(states: &[Vec<f64>]) -> Vec<f64> {
    mean_of_vectors(states)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutResult {
    /// All states in time order; the first `memory_len + 1` are the initial window.
    pub states: Vec<Vec<f64>>,
    pub memory_len: usize,
    /// For step `j`, the `K` member predictions that were averaged into
    /// `states[memory_len + 1 + j]`. Only kept when requested.
    pub member_predictions: Option<Vec<Vec<Vec<f64>>>>,
}

impl RolloutResult {
    /// Predicted states after the initial window.
    pub fn predicted(&self) -> &[Vec<f64>] {
        &self.states[self.memory_len + 1..]
    }

    pub fn horizon(&self) -> usize {
        self.states.len() - self.memory_len - 1
    }

    /// CSV with header `step,t,v1..vd`; `step` counts from the oldest window state.
    pub fn write_csv<W: Write>(&self, out: W, t0: f64, dt: f64) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let d = self.states[0].len();
        let mut header = vec!["step".to_string(), "t".to_string()];
        header.extend((1..=d).map(|i| format!("v{i}")));
        w.write_record(&header)?;
        for (n, s) in self.states.iter().enumerate() {
            let mut row = vec![n.to_string(), (t0 + n as f64 * dt).to_string()];
            row.extend(s.iter().map(f64::to_string));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("<rollout csv>", e))?;
        Ok(())
    }

    /// CSV with header `step,t,member,v1..vd` for the retained member predictions.
    pub fn write_member_csv<W: Write>(&self, out: W, t0: f64, dt: f64) -> Result<()> {
        let Some(preds) = &self.member_predictions else {
            return Err(Error::InvalidArgument(
                "rollout did not keep member predictions".into(),
            ));
        };
        let mut w = csv::Writer::from_writer(out);
        let d = self.states[0].len();
        let mut header = vec!["step".to_string(), "t".to_string(), "member".to_string()];
        header.extend((1..=d).map(|i| format!("v{i}")));
        w.write_record(&header)?;
        for (j, step) in preds.iter().enumerate() {
            let n = self.memory_len + 1 + j;
            for (i, s) in step.iter().enumerate() {
                let mut row = vec![
                    n.to_string(),
                    (t0 + n as f64 * dt).to_string(),
                    i.to_string(),
                ];
                row.extend(s.iter().map(f64::to_string));
                w.write_record(&row)?;
            }
        }
        w.flush().map_err(|e| Error::io("<member csv>", e))?;
        Ok(())
    }
}

fn with_step(err: Error, step: usize) -> Error {
    match err {
        Error::RolloutDiverged { member, .. } => Error::RolloutDiverged {
            step: Some(step),
            member,
        },
        other => other,
    }
}

/// Ensemble-averaged rollout for `horizon` steps from an exact initial window.
pub fn rollout(
    ensemble: &Ensemble,
    init: &MemoryWindow,
    horizon: usize,
    keep_members: bool,
) -> Result<RolloutResult> {
    let arch = ensemble.arch();
    arch.check_window(init)?;
    let mut window = init.clone();
    let mut states: Vec<Vec<f64>> = init.states().iter().rev().cloned().collect();
    let mut kept = keep_members.then(Vec::new);
    for j in 0..horizon {
        let step = ensemble_step(ensemble, &window).map_err(|e| with_step(e, j + 1))?;
        window.push_newest(step.mean.clone())?;
        states.push(step.mean);
        if let Some(k) = kept.as_mut() {
            k.push(step.members);
        }
    }
    Ok(RolloutResult {
        states,
        memory_len: arch.memory_len(),
        member_predictions: kept,
    })
}

/// Rollout of one network feeding back its own predictions.
pub fn rollout_individual(
    arch: &Architecture,
    params: &Parameters,
    init: &MemoryWindow,
    horizon: usize,
) -> Result<RolloutResult> {
    arch.check_params(params)?;
    arch.check_window(init)?;
    let model = Individual::new(arch, params);
    let mut window = init.clone();
    let mut states: Vec<Vec<f64>> = init.states().iter().rev().cloned().collect();
    for j in 0..horizon {
        let next = model.step(&window).map_err(|e| with_step(e, j + 1))?;
        window.push_newest(next.clone())?;
        states.push(next);
    }
    Ok(RolloutResult {
        states,
        memory_len: arch.memory_len(),
        member_predictions: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_params(arch: &Architecture, seed: u64) -> Parameters {
        let mut rng = crate::optim::rng_from_seed(seed);
        crate::optim::init_params(arch, &mut rng)
    }

    /// Single hidden unit `N(x) = c * tanh(x)` on a scalar state.
    fn scaled_tanh(c: f64) -> Parameters {
        Parameters::from_vec_unchecked(vec![1.0, 0.0, c, 0.0])
    }

    #[test]
    fn single_member_matches_residual_step() {
        let arch = Architecture::new(2, 1, vec![5]).unwrap();
        let p = random_params(&arch, 1);
        let ens = Ensemble::from_params(arch.clone(), vec![p.clone()]).unwrap();
        let w = MemoryWindow::new(vec![vec![0.1, 0.2], vec![0.3, -0.4]]).unwrap();
        let s = ensemble_step(&ens, &w).unwrap();
        assert_eq!(s.mean, arch.residual_step(&p, &w).unwrap());
        assert_eq!(s.members.len(), 1);
    }

    #[test]
    fn identical_members_match_single_model() {
        let arch = Architecture::new(2, 0, vec![6]).unwrap();
        let p = random_params(&arch, 2);
        let ens = Ensemble::from_params(arch.clone(), vec![p.clone(); 7]).unwrap();
        let w = MemoryWindow::single(vec![0.7, -1.3]).unwrap();
        assert_eq!(
            ensemble_step(&ens, &w).unwrap().mean,
            arch.residual_step(&p, &w).unwrap()
        );
    }

    #[test]
    fn opposite_increments_cancel() {
        let arch = Architecture::new(1, 0, vec![1]).unwrap();
        // tanh(1) * (+-1): exact negatives of each other
        let ens = Ensemble::from_params(arch, vec![scaled_tanh(1.0), scaled_tanh(-1.0)]).unwrap();
        let w = MemoryWindow::single(vec![1.0]).unwrap();
        assert_eq!(ensemble_step(&ens, &w).unwrap().mean, vec![1.0]);
    }

    #[test]
    fn rollout_horizon_zero_is_initial_window() {
        let arch = Architecture::new(1, 2, vec![3]).unwrap();
        let ens = Ensemble::from_params(arch.clone(), vec![random_params(&arch, 3)]).unwrap();
        let w = MemoryWindow::from_chronological(&[vec![0.0], vec![0.5], vec![1.0]]).unwrap();
        let r = rollout(&ens, &w, 0, false).unwrap();
        assert_eq!(r.states, vec![vec![0.0], vec![0.5], vec![1.0]]);
        assert_eq!(r.horizon(), 0);
    }

    #[test]
    fn zero_params_rollout_is_constant() {
        let arch = Architecture::new(2, 1, vec![3]).unwrap();
        let ens = Ensemble::from_params(arch.clone(), vec![Parameters::zeros(&arch); 3]).unwrap();
        let w = MemoryWindow::from_chronological(&[vec![9.0, 9.0], vec![1.0, 2.0]]).unwrap();
        let r = rollout(&ens, &w, 5, true).unwrap();
        assert!(r.predicted().iter().all(|s| s == &vec![1.0, 2.0]));
        assert_eq!(r.member_predictions.as_ref().unwrap().len(), 5);
    }

    #[test]
    fn k1_rollout_equals_individual_rollout() {
        let arch = Architecture::new(2, 2, vec![4, 4]).unwrap();
        let p = random_params(&arch, 4);
        let ens = Ensemble::from_params(arch.clone(), vec![p.clone()]).unwrap();
        let w = MemoryWindow::from_chronological(&[vec![0.1, 0.0], vec![0.2, 0.1], vec![0.3, 0.3]])
            .unwrap();
        let a = rollout(&ens, &w, 25, false).unwrap();
        let b = rollout_individual(&arch, &p, &w, 25).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn window_shift_order_after_one_step() {
        let arch = Architecture::new(1, 2, vec![2]).unwrap();
        let p = random_params(&arch, 5);
        let ens = Ensemble::from_params(arch.clone(), vec![p]).unwrap();
        let w = MemoryWindow::from_chronological(&[vec![0.0], vec![1.0], vec![2.0]]).unwrap();
        let r = rollout(&ens, &w, 1, false).unwrap();
        let next = ensemble_step(&ens, &w).unwrap().mean;
        assert_eq!(r.states[3], next);
        let mut shifted = w.clone();
        shifted.push_newest(next.clone()).unwrap();
        assert_eq!(shifted.states(), &[next, vec![2.0], vec![1.0]]);
    }

    #[test]
    fn stepwise_average_differs_from_averaged_rollouts() {
        let arch = Architecture::new(1, 0, vec![1]).unwrap();
        let members = vec![scaled_tanh(0.5), scaled_tanh(-0.2)];
        let ens = Ensemble::from_params(arch.clone(), members.clone()).unwrap();
        let w = MemoryWindow::single(vec![0.8]).unwrap();
        let averaged = rollout(&ens, &w, 2, false).unwrap().states[2][0];
        let naive = members
            .iter()
            .map(|p| rollout_individual(&arch, p, &w, 2).unwrap().states[2][0])
            .sum::<f64>()
            / 2.0;
        assert!((averaged - naive).abs() > 1e-6, "{averaged} vs {naive}");
    }

    #[test]
    fn divergent_member_is_identified() {
        let arch = Architecture::new(1, 0, vec![1]).unwrap();
        let huge = Parameters::from_vec_unchecked(vec![1.0, 0.0, f64::MAX, 0.0]);
        let ens = Ensemble::from_params(arch.clone(), vec![Parameters::zeros(&arch)]).unwrap();
        // Ensemble::new rejects non-finite params, but finite params can still overflow.
        let ens = {
            let mut e = ens;
            e.extend(vec![(e.configs()[0].clone(), huge)]).unwrap();
            e
        };
        let w = MemoryWindow::single(vec![f64::MAX]).unwrap();
        match rollout(&ens, &w, 3, false) {
            Err(Error::RolloutDiverged { step, member }) => {
                assert_eq!(step, Some(1));
                assert_eq!(member, 1);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn rollout_csv_layout() {
        let r = RolloutResult {
            states: vec![vec![1.0, 2.0], vec![3.0, 4.0]],
            memory_len: 0,
            member_predictions: Some(vec![vec![vec![3.0, 4.0]]]),
        };
        let mut buf = Vec::new();
        r.write_csv(&mut buf, 0.0, 0.5).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "step,t,v1,v2\n0,0,1,2\n1,0.5,3,4\n"
        );
        let mut buf = Vec::new();
        r.write_member_csv(&mut buf, 0.0, 0.5).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "step,t,member,v1,v2\n1,0.5,0,3,4\n"
        );
    }
}
