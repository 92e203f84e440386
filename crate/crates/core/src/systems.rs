//! Reference dynamical systems, the RK4 integrator that stands in for the
//! exact flow map, and uniform sampling of initial conditions.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Any state component beyond this magnitude is treated as a blow-up.
pub const BLOWUP_THRESHOLD: f64 = 1e12;

pub const PENDULUM_ALPHA: f64 = 0.05;
pub const PENDULUM_BETA: f64 = 8.91;
pub const CHAOTIC_EPSILON: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    /// Damped pendulum `x1' = x2`, `x2' = -alpha x2 - beta sin x1`.
    Pendulum,
    /// Four-variable chaotic system observed through `(x1, x2, x3)`; the fast
    /// variable `y` is hidden.
    Chaotic4d,
    Custom,
}

impl std::str::FromStr for SystemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pendulum" => Ok(Self::Pendulum),
            "chaotic4d" | "chaotic" => Ok(Self::Chaotic4d),
            other => Err(Error::Config(format!("unknown system '{other}'"))),
        }
    }
}

impl fmt::Display for SystemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SystemKind::Pendulum => "pendulum",
            SystemKind::Chaotic4d => "chaotic4d",
            SystemKind::Custom => "custom",
        })
    }
}

type RhsFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;

/// An autonomous ODE `x' = f(x)` together with which leading components are
/// observed.
#[derive(Clone)]
pub struct SystemModel {
    kind: SystemKind,
    full_dim: usize,
    observed_dim: usize,
    params: Vec<(&'static str, f64)>,
    rhs: Arc<RhsFn>,
}

impl fmt::Debug for SystemModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SystemModel")
            .field("kind", &self.kind)
            .field("full_dim", &self.full_dim)
            .field("observed_dim", &self.observed_dim)
            .field("params", &self.params)
            .finish()
    }
}

impl SystemModel {
    pub fn pendulum() -> Self {
        let (alpha, beta) = (PENDULUM_ALPHA, PENDULUM_BETA);
        Self {
            kind: SystemKind::Pendulum,
            full_dim: 2,
            observed_dim: 2,
            params: vec![("alpha", alpha), ("beta", beta)],
            rhs: Arc::new(move |x, dx| {
                dx[0] = x[1];
                dx[1] = -alpha * x[1] - beta * x[0].sin();
            }),
        }
    }

    pub fn chaotic4d() -> Self {
        let eps = CHAOTIC_EPSILON;
        Self {
            kind: SystemKind::Chaotic4d,
            full_dim: 4,
            observed_dim: 3,
            params: vec![("epsilon", eps)],
            rhs: Arc::new(move |x, dx| {
                let (x1, x2, x3, y) = (x[0], x[1], x[2], x[3]);
                dx[0] = -x2 - x3;
                dx[1] = x1 + 0.2 * x2;
                dx[2] = 0.2 + y - 5.0 * x3;
                dx[3] = -y / eps + x1 * x2 / eps;
            }),
        }
    }

    /// A user-supplied system; the first `observed_dim` components are observed.
    pub fn custom<F>(full_dim: usize, observed_dim: usize, rhs: F) -> Result<Self>
    where
        F: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        if full_dim == 0 || observed_dim == 0 || observed_dim > full_dim {
            return Err(Error::InvalidArgument(format!(
                "need 0 < observed_dim <= full_dim, got {observed_dim} and {full_dim}"
            )));
        }
        Ok(Self {
            kind: SystemKind::Custom,
            full_dim,
            observed_dim,
            params: Vec::new(),
            rhs: Arc::new(rhs),
        })
    }

    pub fn from_kind(kind: SystemKind) -> Result<Self> {
        match kind {
            SystemKind::Pendulum => Ok(Self::pendulum()),
            SystemKind::Chaotic4d => Ok(Self::chaotic4d()),
            SystemKind::Custom => Err(Error::Config(
                "custom systems must be built in code with SystemModel::custom".into(),
            )),
        }
    }

    pub fn kind(&self) -> SystemKind {
        self.kind
    }

    pub fn full_dim(&self) -> usize {
        self.full_dim
    }

    pub fn observed_dim(&self) -> usize {
        self.observed_dim
    }

    pub fn param(&self, name: &str) -> Option<f64> {
        self.params
            .iter()
            .find(|(n, _)| *n == name)
            .map(|&(_, v)| v)
    }

    pub fn rhs_eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_state(x)?;
        let mut dx = vec![0.0; self.full_dim];
        (self.rhs)(x, &mut dx);
        Ok(dx)
    }

    /// Observed components of a full state, in order.
    pub fn observe(&self, x: &[f64]) -> Vec<f64> {
        x[..self.observed_dim].to_vec()
    }

    /// Full state for an observed state. Hidden components are placed on the
    /// slow manifold where one is known (`y = x1 x2` for the chaotic system)
    /// and set to zero otherwise.
    pub fn lift(&self, observed: &[f64]) -> Result<Vec<f64>> {
        if observed.len() != self.observed_dim {
            return Err(Error::dim(
                "observed state",
                self.observed_dim,
                observed.len(),
            ));
        }
        let mut full = observed.to_vec();
        match self.kind {
            SystemKind::Chaotic4d => full.push(observed[0] * observed[1]),
            _ => full.resize(self.full_dim, 0.0),
        }
        Ok(full)
    }

    fn check_state(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.full_dim {
            return Err(Error::dim("system state", self.full_dim, x.len()));
        }
        Ok(())
    }

    /// One classical fourth-order Runge-Kutta step.
    pub fn rk4_step(&self, x: &[f64], dt: f64) -> Result<Vec<f64>> {
        self.check_state(x)?;
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "time step must be positive, got {dt}"
            )));
        }
        let mut buf = Rk4Buffers::new(self.full_dim);
        let mut out = x.to_vec();
        self.rk4_in_place(&mut out, dt, &mut buf);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Integration {
                step: 0,
                reason: "non-finite state".into(),
            });
        }
        Ok(out)
    }

    #[allow(clippy::needless_range_loop)]
    fn rk4_in_place(&self, x: &mut [f64], h: f64, b: &mut Rk4Buffers) {
        let n = x.len();
        (self.rhs)(x, &mut b.k1);
        for i in 0..n {
            b.tmp[i] = x[i] + 0.5 * h * b.k1[i];
        }
        (self.rhs)(&b.tmp, &mut b.k2);
        for i in 0..n {
            b.tmp[i] = x[i] + 0.5 * h * b.k2[i];
        }
        (self.rhs)(&b.tmp, &mut b.k3);
        for i in 0..n {
            b.tmp[i] = x[i] + h * b.k3[i];
        }
        (self.rhs)(&b.tmp, &mut b.k4);
        for i in 0..n {
            x[i] += h / 6.0 * (b.k1[i] + 2.0 * b.k2[i] + 2.0 * b.k3[i] + b.k4[i]);
        }
    }

    /// States at `t_0, t_0 + dt, ..., t_0 + n_steps dt`, each macro step made of
    /// `substeps` RK4 steps.
    pub fn integrate(
        &self,
        x0: &[f64],
        dt: f64,
        n_steps: usize,
        substeps: usize,
    ) -> Result<Vec<Vec<f64>>> {
        self.check_state(x0)?;
        if substeps == 0 {
            return Err(Error::InvalidArgument("substeps must be at least 1".into()));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "time step must be positive, got {dt}"
            )));
        }
        let h = dt / substeps as f64;
        let mut buf = Rk4Buffers::new(self.full_dim);
        let mut x = x0.to_vec();
        let mut traj = Vec::with_capacity(n_steps + 1);
        traj.push(x.clone());
        for step in 1..=n_steps {
            for _ in 0..substeps {
                self.rk4_in_place(&mut x, h, &mut buf);
            }
            if x.iter()
                .any(|v| !v.is_finite() || v.abs() > BLOWUP_THRESHOLD)
            {
                return Err(Error::Integration {
                    step,
                    reason: format!("state left the finite range (|x| > {BLOWUP_THRESHOLD:e})"),
                });
            }
            traj.push(x.clone());
        }
        Ok(traj)
    }
}

struct Rk4Buffers {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4Buffers {
    fn new(n: usize) -> Self {
        Self {
            k1: vec![0.0; n],
            k2: vec![0.0; n],
            k3: vec![0.0; n],
            k4: vec![0.0; n],
            tmp: vec![0.0; n],
        }
    }
}

/// Axis-aligned sampling box over the full state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl DomainBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let b = Self { lower, upper };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lower.len() != self.upper.len() || self.lower.is_empty() {
            return Err(Error::InvalidArgument(
                "domain bounds must be non-empty and of equal length".into(),
            ));
        }
        if self
            .lower
            .iter()
            .zip(&self.upper)
            .any(|(l, u)| !l.is_finite() || !u.is_finite() || l >= u)
        {
            return Err(Error::InvalidArgument(
                "domain requires finite lower < upper in every component".into(),
            ));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| l <= v && v <= u)
    }

    pub fn midpoint(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| 0.5 * (l + u))
            .collect()
    }

    /// `[-pi, pi] x [-2pi, 2pi]`
    pub fn pendulum() -> Self {
        use std::f64::consts::PI;
        Self {
            lower: vec![-PI, -2.0 * PI],
            upper: vec![PI, 2.0 * PI],
        }
    }

    /// `[-7.5, 10] x [-10, 7.5] x [0, 18] x [-1, 100]`, hidden `y` last.
    pub fn chaotic4d() -> Self {
        Self {
            lower: vec![-7.5, -10.0, 0.0, -1.0],
            upper: vec![10.0, 7.5, 18.0, 100.0],
        }
    }
}

pub fn sample_initial_conditions(
    domain: &DomainBox,
    n: usize,
    rng: &mut impl Rng,
) -> Vec<Vec<f64>> {
    (0..n).map(|_| sample_point(domain, rng)).collect()
}

pub(crate) fn sample_point(domain: &DomainBox, rng: &mut impl Rng) -> Vec<f64> {
    domain
        .lower
        .iter()
        .zip(&domain.upper)
        .map(|(&l, &u)| rng.random_range(l..u))
        .collect()
}

/// Writes a trajectory as CSV with header `t,x1,...,xd`.
pub fn write_trajectory_csv<W: Write>(out: W, t0: f64, dt: f64, states: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let d = states.first().map_or(0, Vec::len);
    let mut header = vec!["t".to_string()];
    header.extend((1..=d).map(|i| format!("x{i}")));
    w.write_record(&header)?;
    for (n, s) in states.iter().enumerate() {
        let mut row = vec![(t0 + n as f64 * dt).to_string()];
        row.extend(s.iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<trajectory csv>", e))?;
    Ok(())
}
