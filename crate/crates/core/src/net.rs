//! Dense `tanh` networks over flat parameter vectors, and the residual
//! (flow-map) steppers built on top of them.
//!
//! Parameter layout: layers in order, each contributing its weight matrix
//! followed by its bias vector. A weight matrix of a layer with `fan_in`
//! inputs and `fan_out` outputs is stored row-major as `fan_in x fan_out`,
//! i.e. entry `(i, o)` lives at `offset + i * fan_out + o`.
//!
//! Hidden layers apply the activation; the output layer is purely affine so
//! the learned increment can take either sign.

use serde::{Deserialize, Serialize};

use crate::numeric::{axpy, dot};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
}

impl Activation {
    #[inline]
    fn apply_in_place(self, z: &mut [f64]) {
        match self {
            Activation::Tanh => z.iter_mut().for_each(|v| *v = tanh(*v)),
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

/// `tanh` via one `exp`/`exp_m1` call; within 1e-15 relative of `f64::tanh`
/// and about twice as fast, which matters because activations dominate training.
#[inline]
pub(crate) fn tanh(x: f64) -> f64 {
    let a = x.abs();
    if a > 19.0 {
        return 1f64.copysign(x);
    }
    if a < 0.55 {
        let e = (2.0 * x).exp_m1();
        return e / (e + 2.0);
    }
    let e = (2.0 * a).exp();
    (1.0 - 2.0 / (e + 1.0)).copysign(x)
}

/// Network shape: state dimension, memory length and hidden widths.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawArchitecture")]
pub struct Architecture {
    state_dim: usize,
    memory_len: usize,
    hidden: Vec<usize>,
    activation: Activation,
}

#[derive(Deserialize)]
struct RawArchitecture {
    state_dim: usize,
    memory_len: usize,
    hidden: Vec<usize>,
    #[serde(default)]
    activation: Activation,
}

impl TryFrom<RawArchitecture> for Architecture {
    type Error = Error;

    fn try_from(raw: RawArchitecture) -> Result<Self> {
        Architecture::new(raw.state_dim, raw.memory_len, raw.hidden)
            .map(|a| a.with_activation(raw.activation))
    }
}

/// Position of one dense layer inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weight_offset: usize,
    pub bias_offset: usize,
}

impl LayerShape {
    pub fn weight_range(&self) -> std::ops::Range<usize> {
        self.weight_offset..self.weight_offset + self.fan_in * self.fan_out
    }

    pub fn bias_range(&self) -> std::ops::Range<usize> {
        self.bias_offset..self.bias_offset + self.fan_out
    }
}

impl Architecture {
    pub fn new(state_dim: usize, memory_len: usize, hidden: Vec<usize>) -> Result<Self> {
        if state_dim == 0 {
            return Err(Error::InvalidArgument("state_dim must be positive".into()));
        }
        if hidden.is_empty() {
            return Err(Error::InvalidArgument(
                "at least one hidden layer is required".into(),
            ));
        }
        if hidden.contains(&0) {
            return Err(Error::InvalidArgument(
                "hidden widths must be positive".into(),
            ));
        }
        Ok(Self {
            state_dim,
            memory_len,
            hidden,
            activation: Activation::Tanh,
        })
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn memory_len(&self) -> usize {
        self.memory_len
    }

    pub fn hidden(&self) -> &[usize] {
        &self.hidden
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// Width of the network input: `state_dim * (memory_len + 1)`.
    pub fn input_dim(&self) -> usize {
        self.state_dim * (self.memory_len + 1)
    }

    pub fn output_dim(&self) -> usize {
        self.state_dim
    }

    /// Number of states in a memory window.
    pub fn window_len(&self) -> usize {
        self.memory_len + 1
    }

    pub fn layers(&self) -> Vec<LayerShape> {
        let mut widths = Vec::with_capacity(self.hidden.len() + 2);
        widths.push(self.input_dim());
        widths.extend_from_slice(&self.hidden);
        widths.push(self.output_dim());
        let mut offset = 0;
        widths
            .windows(2)
            .map(|w| {
                let shape = LayerShape {
                    fan_in: w[0],
                    fan_out: w[1],
                    weight_offset: offset,
                    bias_offset: offset + w[0] * w[1],
                };
                offset += w[0] * w[1] + w[1];
                shape
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers()
            .iter()
            .map(|l| l.fan_in * l.fan_out + l.fan_out)
            .sum()
    }

    pub fn check_params(&self, params: &Parameters) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::dim("parameters", self.param_count(), params.len()));
        }
        Ok(())
    }

    /// Evaluates the dense network on one input vector.
    pub fn forward(&self, params: &Parameters, input: &[f64]) -> Result<Vec<f64>> {
        self.check_params(params)?;
        if input.len() != self.input_dim() {
            return Err(Error::dim("network input", self.input_dim(), input.len()));
        }
        let mut ws = BatchWorkspace::new(self, 1);
        ws.input_mut(1).copy_from_slice(input);
        self.forward_batch(params.as_slice(), &mut ws, 1);
        Ok(ws.output(1).to_vec())
    }

    /// Reverse-mode gradient of `<cotangent, forward(input)>` with respect to
    /// the parameters and the input.
    pub fn backward(
        &self,
        params: &Parameters,
        input: &[f64],
        cotangent: &[f64],
    ) -> Result<Gradient> {
        self.check_params(params)?;
        if input.len() != self.input_dim() {
            return Err(Error::dim("network input", self.input_dim(), input.len()));
        }
        if cotangent.len() != self.output_dim() {
            return Err(Error::dim(
                "output cotangent",
                self.output_dim(),
                cotangent.len(),
            ));
        }
        let mut ws = BatchWorkspace::new(self, 1);
        ws.input_mut(1).copy_from_slice(input);
        self.forward_batch(params.as_slice(), &mut ws, 1);
        ws.output_cotangent_mut(1).copy_from_slice(cotangent);
        let mut grad = vec![0.0; self.param_count()];
        let mut input_grad = vec![0.0; self.input_dim()];
        self.backward_batch(
            params.as_slice(),
            &mut ws,
            1,
            &mut grad,
            Some(&mut input_grad),
        );
        Ok(Gradient {
            params: grad,
            input: input_grad,
        })
    }

    /// One flow-map step: `window.newest() + N(window)`.
    pub fn residual_step(&self, params: &Parameters, window: &MemoryWindow) -> Result<Vec<f64>> {
        self.check_window(window)?;
        let increment = self.forward(params, &window.concat())?;
        Ok(window
            .newest()
            .iter()
            .zip(&increment)
            .map(|(v, n)| v + n)
            .collect())
    }

    pub fn check_window(&self, window: &MemoryWindow) -> Result<()> {
        if window.len() != self.window_len() {
            return Err(Error::dim(
                "memory window length",
                self.window_len(),
                window.len(),
            ));
        }
        if window.state_dim() != self.state_dim {
            return Err(Error::dim(
                "window state dimension",
                self.state_dim,
                window.state_dim(),
            ));
        }
        Ok(())
    }

    /// Batched forward pass. Inputs must already be in `ws.input_mut(batch)`.
    pub(crate) fn forward_batch(&self, params: &[f64], ws: &mut BatchWorkspace, batch: usize) {
        let layers = ws.layers.clone();
        let last = layers.len() - 1;
        for (l, shape) in layers.iter().enumerate() {
            let (head, tail) = ws.acts.split_at_mut(l + 1);
            let prev = &head[l][..batch * shape.fan_in];
            let cur = &mut tail[0][..batch * shape.fan_out];
            let w = &params[shape.weight_range()];
            let b = &params[shape.bias_range()];
            for (x, z) in prev
                .chunks_exact(shape.fan_in)
                .zip(cur.chunks_exact_mut(shape.fan_out))
            {
                z.copy_from_slice(b);
                for (&xi, row) in x.iter().zip(w.chunks_exact(shape.fan_out)) {
                    axpy(xi, row, z);
                }
                if l != last {
                    self.activation.apply_in_place(z);
                }
            }
        }
    }

    /// Batched reverse pass after [`Self::forward_batch`]. The output cotangent
    /// must be in `ws.output_cotangent_mut(batch)`; parameter gradients are
    /// *accumulated* into `grad`.
    pub(crate) fn backward_batch(
        &self,
        params: &[f64],
        ws: &mut BatchWorkspace,
        batch: usize,
        grad: &mut [f64],
        mut input_grad: Option<&mut [f64]>,
    ) {
        let layers = ws.layers.clone();
        for (l, shape) in layers.iter().enumerate().rev() {
            let prev = &ws.acts[l][..batch * shape.fan_in];
            let delta = &ws.delta[..batch * shape.fan_out];
            let w = &params[shape.weight_range()];

            let (gw, gb) = grad[shape.weight_offset..shape.bias_offset + shape.fan_out]
                .split_at_mut(shape.fan_in * shape.fan_out);
            for (x, d) in prev
                .chunks_exact(shape.fan_in)
                .zip(delta.chunks_exact(shape.fan_out))
            {
                axpy(1.0, d, gb);
                for (&xi, grow) in x.iter().zip(gw.chunks_exact_mut(shape.fan_out)) {
                    axpy(xi, d, grow);
                }
            }

            let need_prev_delta = l > 0 || input_grad.is_some();
            if !need_prev_delta {
                continue;
            }
            let delta_prev = &mut ws.delta_prev[..batch * shape.fan_in];
            for ((x, d), dp) in prev
                .chunks_exact(shape.fan_in)
                .zip(delta.chunks_exact(shape.fan_out))
                .zip(delta_prev.chunks_exact_mut(shape.fan_in))
            {
                for ((dpi, row), &xi) in dp.iter_mut().zip(w.chunks_exact(shape.fan_out)).zip(x) {
                    let back = dot(row, d);
                    *dpi = if l > 0 {
                        back * self.activation.derivative_from_output(xi)
                    } else {
                        back
                    };
                }
            }
            if l == 0 {
                if let Some(ig) = input_grad.as_deref_mut() {
                    ig[..batch * shape.fan_in].copy_from_slice(delta_prev);
                }
            } else {
                std::mem::swap(&mut ws.delta, &mut ws.delta_prev);
            }
        }
    }
}

/// Reusable activation and cotangent buffers for batched passes.
#[derive(Debug, Clone)]
pub(crate) struct BatchWorkspace {
    layers: Vec<LayerShape>,
    /// `acts[0]` is the input; `acts[l + 1]` is the output of layer `l`.
    acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl BatchWorkspace {
    pub(crate) fn new(arch: &Architecture, max_batch: usize) -> Self {
        let layers = arch.layers();
        let mut acts = vec![vec![0.0; max_batch * arch.input_dim()]];
        acts.extend(layers.iter().map(|l| vec![0.0; max_batch * l.fan_out]));
        let widest = layers
            .iter()
            .map(|l| l.fan_in.max(l.fan_out))
            .max()
            .unwrap_or(0);
        Self {
            layers,
            acts,
            delta: vec![0.0; max_batch * widest],
            delta_prev: vec![0.0; max_batch * widest],
        }
    }

    pub(crate) fn input_mut(&mut self, batch: usize) -> &mut [f64] {
        let n = batch * self.layers[0].fan_in;
        &mut self.acts[0][..n]
    }

    pub(crate) fn output(&self, batch: usize) -> &[f64] {
        let last = self.layers.last().expect("non-empty layers");
        &self.acts[self.layers.len()][..batch * last.fan_out]
    }

    /// Output buffer and cotangent buffer at once, for loss evaluation.
    pub(crate) fn output_and_cotangent_mut(&mut self, batch: usize) -> (&[f64], &mut [f64]) {
        let n = batch * self.layers.last().expect("non-empty layers").fan_out;
        (&self.acts[self.layers.len()][..n], &mut self.delta[..n])
    }

    pub(crate) fn output_cotangent_mut(&mut self, batch: usize) -> &mut [f64] {
        let n = batch * self.layers.last().expect("non-empty layers").fan_out;
        &mut self.delta[..n]
    }
}

/// Flat vector of all weights and biases of one network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Parameters {
    values: Vec<f64>,
}

impl Parameters {
    pub fn zeros(arch: &Architecture) -> Self {
        Self {
            values: vec![0.0; arch.param_count()],
        }
    }

    pub fn from_vec(arch: &Architecture, values: Vec<f64>) -> Result<Self> {
        if values.len() != arch.param_count() {
            return Err(Error::dim("parameters", arch.param_count(), values.len()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "parameter {i} is not finite"
            )));
        }
        Ok(Self { values })
    }

    pub(crate) fn from_vec_unchecked(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Result of [`Architecture::backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    /// Same layout as [`Parameters`].
    pub params: Vec<f64>,
    pub input: Vec<f64>,
}

/// The current state and `memory_len` past states, newest first.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryWindow {
    states: Vec<Vec<f64>>,
}

impl MemoryWindow {
    /// Builds a window from states ordered newest first.
    pub fn new(states: Vec<Vec<f64>>) -> Result<Self> {
        let Some(first) = states.first() else {
            return Err(Error::InvalidArgument(
                "memory window cannot be empty".into(),
            ));
        };
        let d = first.len();
        if d == 0 {
            return Err(Error::InvalidArgument(
                "window states cannot be empty".into(),
            ));
        }
        if let Some(bad) = states.iter().find(|s| s.len() != d) {
            return Err(Error::dim("window state dimension", d, bad.len()));
        }
        Ok(Self { states })
    }

    /// Builds a window from states ordered oldest first (time order).
    pub fn from_chronological(states: &[Vec<f64>]) -> Result<Self> {
        Self::new(states.iter().rev().cloned().collect())
    }

    /// Window holding a single state (no memory).
    pub fn single(state: Vec<f64>) -> Result<Self> {
        Self::new(vec![state])
    }

    pub fn newest(&self) -> &[f64] {
        &self.states[0]
    }

    /// States ordered newest first.
    pub fn states(&self) -> &[Vec<f64>] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.states[0].len()
    }

    /// Concatenation `(v_n; v_{n-1}; ...; v_{n-n_M})`.
    pub fn concat(&self) -> Vec<f64> {
        self.states.concat()
    }

    /// Drops the oldest state and makes `state` the newest.
    pub fn push_newest(&mut self, state: Vec<f64>) -> Result<()> {
        if state.len() != self.state_dim() {
            return Err(Error::dim(
                "window state dimension",
                self.state_dim(),
                state.len(),
            ));
        }
        self.states.pop();
        self.states.insert(0, state);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    #[test]
    fn fast_tanh_matches_std() {
        for i in 0..400_001 {
            let x = (i as f64) * 1e-4 - 20.0;
            let r = x.tanh();
            assert!((tanh(x) - r).abs() <= 1e-15 * r.abs(), "{x}");
        }
        assert!(tanh(-0.0).is_sign_negative());
    }

    use super::*;

    fn tiny() -> Architecture {
        Architecture::new(1, 0, vec![1]).unwrap()
    }

    #[test]
    fn param_counts() {
        assert_eq!(
            Architecture::new(2, 0, vec![40, 40]).unwrap().param_count(),
            1842
        );
        assert_eq!(
            Architecture::new(3, 60, vec![30, 30, 30])
                .unwrap()
                .param_count(),
            7473
        );
        assert_eq!(tiny().param_count(), 4);
    }

    #[test]
    fn rejects_bad_architectures() {
        assert!(Architecture::new(0, 0, vec![4]).is_err());
        assert!(Architecture::new(2, 0, vec![]).is_err());
        assert!(Architecture::new(2, 0, vec![3, 0]).is_err());
    }

    #[test]
    fn dims_follow_memory() {
        let a = Architecture::new(3, 60, vec![30]).unwrap();
        assert_eq!(a.input_dim(), 183);
        assert_eq!(a.output_dim(), 3);
        let layers = a.layers();
        assert_eq!(layers[0].fan_in, 183);
        assert_eq!(layers.last().unwrap().fan_out, 3);
    }

    #[test]
    fn zero_params_give_zero_output() {
        let a = Architecture::new(2, 1, vec![5, 3]).unwrap();
        let p = Parameters::zeros(&a);
        assert_eq!(
            a.forward(&p, &[1.0, -2.0, 0.5, 3.0]).unwrap(),
            vec![0.0, 0.0]
        );
    }

    #[test]
    fn tiny_net_hand_values() {
        let a = tiny();
        let p = Parameters::from_vec(&a, vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        assert_eq!(a.forward(&p, &[0.0]).unwrap(), vec![0.0]);
        let y = a.forward(&p, &[1.0]).unwrap()[0];
        assert!((y - 0.761_594_155_955_764_9).abs() < 1e-15);
    }

    #[test]
    fn forward_rejects_wrong_input() {
        let a = tiny();
        let p = Parameters::zeros(&a);
        assert!(matches!(
            a.forward(&p, &[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        let short = Parameters::from_vec_unchecked(vec![0.0; 3]);
        assert!(a.forward(&short, &[1.0]).is_err());
    }

    #[test]
    fn zero_cotangent_gives_zero_gradient() {
        let a = Architecture::new(2, 0, vec![3]).unwrap();
        let p = Parameters::from_vec(&a, (0..a.param_count()).map(|i| (i as f64).sin()).collect())
            .unwrap();
        let g = a.backward(&p, &[0.3, -0.2], &[0.0, 0.0]).unwrap();
        assert!(g.params.iter().all(|&v| v == 0.0));
        assert!(g.input.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tiny_net_hand_gradient() {
        let a = tiny();
        let p = Parameters::zeros(&a);
        let g = a.backward(&p, &[0.7], &[1.0]).unwrap();
        // [w1, b1, w2, b2]
        assert_eq!(g.params, vec![0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn residual_step_with_zero_params_is_identity() {
        let a = Architecture::new(2, 2, vec![4]).unwrap();
        let p = Parameters::zeros(&a);
        let w = MemoryWindow::new(vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        assert_eq!(a.residual_step(&p, &w).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn residual_step_is_newest_plus_forward() {
        let a = Architecture::new(2, 0, vec![3]).unwrap();
        let p = Parameters::from_vec(
            &a,
            (0..a.param_count()).map(|i| 0.1 * i as f64 - 0.7).collect(),
        )
        .unwrap();
        let x = vec![0.4, -1.1];
        let n = a.forward(&p, &x).unwrap();
        let w = MemoryWindow::single(x.clone()).unwrap();
        assert_eq!(
            a.residual_step(&p, &w).unwrap(),
            vec![x[0] + n[0], x[1] + n[1]]
        );
    }

    #[test]
    fn residual_step_checks_window() {
        let a = Architecture::new(2, 1, vec![3]).unwrap();
        let p = Parameters::zeros(&a);
        let w = MemoryWindow::single(vec![1.0, 2.0]).unwrap();
        assert!(a.residual_step(&p, &w).is_err());
    }

    #[test]
    fn window_shift_keeps_order() {
        let mut w = MemoryWindow::from_chronological(&[vec![0.0], vec![1.0], vec![2.0]]).unwrap();
        assert_eq!(w.newest(), &[2.0]);
        assert_eq!(w.concat(), vec![2.0, 1.0, 0.0]);
        w.push_newest(vec![3.0]).unwrap();
        assert_eq!(w.concat(), vec![3.0, 2.0, 1.0]);
        assert!(w.push_newest(vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn parameters_reject_non_finite() {
        let a = tiny();
        assert!(Parameters::from_vec(&a, vec![0.0, f64::NAN, 0.0, 0.0]).is_err());
        assert!(Parameters::from_vec(&a, vec![0.0; 5]).is_err());
    }

    #[test]
    fn architecture_serde_validates() {
        let bad = r#"{"state_dim":2,"memory_len":0,"hidden":[]}"#;
        assert!(serde_json::from_str::<Architecture>(bad).is_err());
        let good = r#"{"state_dim":2,"memory_len":0,"hidden":[4]}"#;
        let a: Architecture = serde_json::from_str(good).unwrap();
        assert_eq!(a.activation(), Activation::Tanh);
    }
}
