//! Transmitter-side queuing policies. Each step the policy picks the age
//! `η_k ∈ [0, η_{k-1} + 1]`: `η_k = j <= η_{k-1}` delivers the queued
//! measurement `x_{k-j}`, `η_k = η_{k-1} + 1` transmits nothing.
//!
//! Policies see only past noise (the part of the state the controller
//! cannot predict), kept in [`QueueState::noise_window`].

mod dp;

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{Age, CostWeights, PlantModel};
use crate::riccati::{gamma_at, RiccatiSolution};

pub use dp::{dp_oracle_build, expected_queue_cost, DpLimits, DpOracle, NoiseGrid};

/// Queue information at decision time `k`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QueueState {
    pub prev_age: Age,
    /// `w_{k-1}, w_{k-2}, ...`, most recent first; holds at least
    /// `prev_age + 1` entries for `k >= 1`.
    pub noise_window: VecDeque<DVector<f64>>,
}

impl QueueState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records the decision `chosen` at time `k` and the noise `w_k`.
    /// Noise older than `w_{k-chosen}` can no longer enter any future
    /// estimation error and is dropped.
    pub fn advance(&mut self, chosen: Age, w: DVector<f64>) {
        self.noise_window.truncate(chosen.get());
        self.noise_window.push_front(w);
        self.prev_age = chosen;
    }
}

/// A rule choosing the age at each step.
pub trait QueuingPolicy: Send + Sync {
    fn choose(&self, state: &QueueState, k: usize) -> Result<Age>;

    fn name(&self) -> String;
}

/// Always deliver the fresh measurement.
pub fn zero_wait(_state: &QueueState, _k: usize) -> Age {
    Age::ZERO
}

/// Greedy age choice minimizing `-θ_k η + e(η)' Γ_k e(η)` over
/// `η ∈ [0, η_{k-1} + 1]`, where `e(η) = Σ_{t=1..η} A^{t-1} w_{k-t}`.
/// Ties go to the largest age.
pub fn greedy_choose(
    state: &QueueState,
    k: usize,
    sol: &RiccatiSolution,
    theta: &[f64],
    a: &DMatrix<f64>,
) -> Result<Age> {
    greedy_over(state, k, sol, theta, a, state.prev_age.get() + 1)
}

/// [`greedy_choose`] restricted to ages `<= kbar` (finite queue memory).
pub fn greedy_bounded(
    state: &QueueState,
    k: usize,
    sol: &RiccatiSolution,
    theta: &[f64],
    a: &DMatrix<f64>,
    kbar: usize,
) -> Result<Age> {
    greedy_over(state, k, sol, theta, a, (state.prev_age.get() + 1).min(kbar))
}

fn greedy_over(
    state: &QueueState,
    k: usize,
    sol: &RiccatiSolution,
    theta: &[f64],
    a: &DMatrix<f64>,
    max_age: usize,
) -> Result<Age> {
    let gamma = gamma_at(sol, k)?;
    let theta_k = *theta.get(k).ok_or(Error::IndexOutOfRange {
        k,
        max: theta.len().saturating_sub(1),
    })?;
    let needed = state.prev_age.get() + 1;
    if k > 0 && state.noise_window.len() < needed {
        return Err(Error::InsufficientWindow {
            window: state.noise_window.len(),
            needed,
        });
    }
    if k == 0 {
        return Ok(Age::ZERO);
    }

    let n = a.nrows();
    let mut err = DVector::<f64>::zeros(n);
    let mut power = DMatrix::<f64>::identity(n, n);
    let mut best = (Age::ZERO, 0.0);
    for (j, w) in state.noise_window.iter().take(max_age).enumerate() {
        err += &power * w;
        power = a * power;
        let eta = j + 1;
        let cost = -theta_k * eta as f64 + err.dot(&(gamma * &err));
        if cost <= best.1 {
            best = (Age(eta), cost);
        }
    }
    Ok(best.0)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroWait;

impl QueuingPolicy for ZeroWait {
    fn choose(&self, state: &QueueState, k: usize) -> Result<Age> {
        Ok(zero_wait(state, k))
    }

    fn name(&self) -> String {
        PolicySpec::ZeroWait.to_string()
    }
}

/// Greedy policy bound to one Riccati solution and age-reward sequence,
/// optionally with a memory bound.
#[derive(Debug, Clone)]
pub struct Greedy<'a> {
    sol: &'a RiccatiSolution,
    a: &'a DMatrix<f64>,
    theta: Vec<f64>,
    kbar: Option<usize>,
}

impl<'a> Greedy<'a> {
    pub fn new(model: &'a PlantModel, weights: &CostWeights, sol: &'a RiccatiSolution) -> Self {
        Self {
            sol,
            a: model.a(),
            theta: weights.thetas(),
            kbar: None,
        }
    }

    pub fn bounded(mut self, kbar: usize) -> Self {
        self.kbar = Some(kbar);
        self
    }
}

impl QueuingPolicy for Greedy<'_> {
    fn choose(&self, state: &QueueState, k: usize) -> Result<Age> {
        match self.kbar {
            None => greedy_choose(state, k, self.sol, &self.theta, self.a),
            Some(kbar) => greedy_bounded(state, k, self.sol, &self.theta, self.a, kbar),
        }
    }

    fn name(&self) -> String {
        match self.kbar {
            None => PolicySpec::Greedy.to_string(),
            Some(kbar) => PolicySpec::GreedyBounded(kbar).to_string(),
        }
    }
}

/// Policy selector as written on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicySpec {
    ZeroWait,
    Greedy,
    GreedyBounded(usize),
    DpOracle,
}

impl PolicySpec {
    pub const ALL_KINDS: &'static str = "zero-wait | greedy | greedy-bounded:<kbar> | dp-oracle";

    /// Instantiates the policy. The dp oracle is solved here, which needs
    /// a scalar plant and a small horizon.
    pub fn build<'a>(
        &self,
        model: &'a PlantModel,
        weights: &CostWeights,
        sol: &'a RiccatiSolution,
        grid: &NoiseGrid,
        limits: &DpLimits,
    ) -> Result<Box<dyn QueuingPolicy + 'a>> {
        Ok(match *self {
            PolicySpec::ZeroWait => Box::new(ZeroWait),
            PolicySpec::Greedy => Box::new(Greedy::new(model, weights, sol)),
            PolicySpec::GreedyBounded(kbar) => Box::new(Greedy::new(model, weights, sol).bounded(kbar)),
            PolicySpec::DpOracle => Box::new(dp_oracle_build(model, weights, sol, grid, limits)?),
        })
    }
}

impl fmt::Display for PolicySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicySpec::ZeroWait => write!(f, "zero-wait"),
            PolicySpec::Greedy => write!(f, "greedy"),
            PolicySpec::GreedyBounded(kbar) => write!(f, "greedy-bounded:{kbar}"),
            PolicySpec::DpOracle => write!(f, "dp-oracle"),
        }
    }
}

impl FromStr for PolicySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "zero-wait" => return Ok(PolicySpec::ZeroWait),
            "greedy" => return Ok(PolicySpec::Greedy),
            "dp-oracle" => return Ok(PolicySpec::DpOracle),
            _ => {}
        }
        if let Some(kbar) = s.strip_prefix("greedy-bounded:") {
            return kbar
                .parse()
                .map(PolicySpec::GreedyBounded)
                .map_err(|_| Error::InvalidInput(format!("bad memory bound in policy `{s}`")));
        }
        Err(Error::InvalidInput(format!(
            "unknown policy `{s}` (expected {})",
            Self::ALL_KINDS
        )))
    }
}
