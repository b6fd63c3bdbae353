//! Exact optimal queuing policy for scalar plants with noise restricted to
//! a finite grid, by backward induction over
//!
//! ```text
//! V_k(η_{k-1}, w_{k-1..k-1-η_{k-1}}) =
//!     min_η { -θ_k η + Γ_k e(η)^2 + E_w[ V_{k+1}(η, (w, w_{k-1..k-η})) ] },
//! V_{N+1} = 0.
//! ```
//!
//! The last `η_{k-1} + 1` noise values are a sufficient statistic: no
//! older noise can enter a future estimation error.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::estimator::estimation_error;
use crate::model::{Age, CostWeights, PlantModel};
use crate::queuing::{QueueState, QueuingPolicy};
use crate::riccati::RiccatiSolution;

use nalgebra::DVector;

/// Finite noise law with atoms and probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseGrid {
    atoms: Vec<f64>,
    probs: Vec<f64>,
}

impl NoiseGrid {
    pub fn new(atoms: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        if atoms.is_empty() || atoms.len() != probs.len() {
            return Err(Error::InvalidInput(format!(
                "noise grid needs matching nonempty atoms/probabilities (got {} and {})",
                atoms.len(),
                probs.len()
            )));
        }
        if probs.iter().any(|p| p.is_nan() || *p < 0.0) || atoms.iter().any(|a| !a.is_finite()) {
            return Err(Error::InvalidInput(
                "noise grid probabilities must be nonnegative".into(),
            ));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!(
                "noise grid probabilities sum to {total}, not 1"
            )));
        }
        Ok(Self { atoms, probs })
    }

    /// Symmetric two-point law `±sqrt(variance)`, each with probability 1/2.
    pub fn two_atom(variance: f64) -> Self {
        let s = variance.max(0.0).sqrt();
        Self {
            atoms: vec![-s, s],
            probs: vec![0.5, 0.5],
        }
    }

    /// Point mass at zero.
    pub fn degenerate() -> Self {
        Self {
            atoms: vec![0.0],
            probs: vec![1.0],
        }
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn variance(&self) -> f64 {
        let mean: f64 = self.atoms.iter().zip(&self.probs).map(|(a, p)| a * p).sum();
        self.atoms
            .iter()
            .zip(&self.probs)
            .map(|(a, p)| p * (a - mean).powi(2))
            .sum()
    }

    /// Index of the atom closest to `w`.
    pub fn nearest(&self, w: f64) -> u8 {
        let mut best = 0;
        for (i, a) in self.atoms.iter().enumerate() {
            if (a - w).abs() < (self.atoms[best] - w).abs() {
                best = i;
            }
        }
        best as u8
    }

    /// Samples an atom index from a uniform draw in `[0, 1)`.
    pub fn index_for(&self, u: f64) -> usize {
        let mut acc = 0.0;
        for (i, p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        self.atoms.len() - 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DpLimits {
    pub max_horizon: usize,
    pub max_atoms: usize,
    pub state_cap: u64,
}

impl Default for DpLimits {
    fn default() -> Self {
        Self {
            max_horizon: 8,
            max_atoms: 5,
            state_cap: 1_000_000,
        }
    }
}

type StateKey = (usize, Vec<u8>);

/// Solved optimal policy: for each reachable `(k, noise window)` the
/// optimal age, plus the optimal expected queuing cost
/// `E[Σ -θ_k η_k + Γ_k e_k^2]`.
#[derive(Debug, Clone)]
pub struct DpOracle {
    grid: NoiseGrid,
    horizon: usize,
    table: HashMap<StateKey, (Age, f64)>,
    value: f64,
}

impl DpOracle {
    pub fn expected_cost(&self) -> f64 {
        self.value
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn state_count(&self) -> usize {
        self.table.len()
    }

    pub fn grid(&self) -> &NoiseGrid {
        &self.grid
    }

    /// Optimal age at `k >= 1` given atom indices `w_{k-1}, w_{k-2}, ...`
    /// of length `η_{k-1} + 1`.
    pub fn decision(&self, k: usize, window: &[u8]) -> Option<Age> {
        self.table.get(&(k, window.to_vec())).map(|(age, _)| *age)
    }

    /// Optimal cost-to-go at the same state.
    pub fn value_at(&self, k: usize, window: &[u8]) -> Option<f64> {
        self.table.get(&(k, window.to_vec())).map(|(_, v)| *v)
    }
}

impl QueuingPolicy for DpOracle {
    fn choose(&self, state: &QueueState, k: usize) -> Result<Age> {
        if k == 0 {
            return Ok(Age::ZERO);
        }
        let needed = state.prev_age.get() + 1;
        if state.noise_window.len() < needed {
            return Err(Error::InsufficientWindow {
                window: state.noise_window.len(),
                needed,
            });
        }
        let key: Vec<u8> = state
            .noise_window
            .iter()
            .take(needed)
            .map(|w| self.grid.nearest(w[0]))
            .collect();
        self.decision(k, &key).ok_or_else(|| {
            Error::InvalidInput(format!(
                "dp oracle has no entry for k={k}, window {key:?} (horizon {})",
                self.horizon
            ))
        })
    }

    fn name(&self) -> String {
        "dp-oracle".into()
    }
}

/// Upper bound on the number of `(k, window)` states the recursion may
/// visit: windows at time `k` have length `1..=k`.
pub fn dp_state_bound(atoms: usize, horizon: usize) -> u64 {
    let atoms = atoms as u64;
    let mut total: u64 = 0;
    for k in 1..=horizon {
        let mut pow: u64 = 1;
        for _ in 1..=k {
            pow = pow.saturating_mul(atoms);
            total = total.saturating_add(pow);
        }
    }
    total
}

struct DpSolver<'a> {
    atoms: &'a [f64],
    probs: &'a [f64],
    a: f64,
    gamma: Vec<f64>,
    theta: Vec<f64>,
    horizon: usize,
    table: HashMap<StateKey, (Age, f64)>,
}

impl DpSolver<'_> {
    fn value(&mut self, k: usize, window: &[u8]) -> f64 {
        if let Some((_, v)) = self.table.get(&(k, window.to_vec())) {
            return *v;
        }
        let mut best = (Age::ZERO, f64::INFINITY);
        let mut err = 0.0;
        let mut power = 1.0;
        let mut next = Vec::with_capacity(window.len() + 1);
        for eta in 0..=window.len() {
            if eta > 0 {
                err += power * self.atoms[window[eta - 1] as usize];
                power *= self.a;
            }
            let stage = -self.theta[k] * eta as f64 + self.gamma[k] * err * err;
            let mut cont = 0.0;
            if k < self.horizon {
                for i in 0..self.atoms.len() {
                    next.clear();
                    next.push(i as u8);
                    next.extend_from_slice(&window[..eta]);
                    cont += self.probs[i] * self.value(k + 1, &next);
                }
            }
            let total = stage + cont;
            if total <= best.1 {
                best = (Age(eta), total);
            }
        }
        self.table.insert((k, window.to_vec()), best);
        best.1
    }
}

fn check_scalar(model: &PlantModel) -> Result<()> {
    if model.state_dim() != 1 {
        return Err(Error::InvalidInput(format!(
            "dp oracle needs a scalar plant (state dimension {})",
            model.state_dim()
        )));
    }
    Ok(())
}

/// Solves the optimal queuing problem exactly on the noise grid over the
/// horizon of `weights`.
pub fn dp_oracle_build(
    model: &PlantModel,
    weights: &CostWeights,
    sol: &RiccatiSolution,
    grid: &NoiseGrid,
    limits: &DpLimits,
) -> Result<DpOracle> {
    check_scalar(model)?;
    let horizon = weights.horizon();
    if horizon > limits.max_horizon {
        return Err(Error::InvalidInput(format!(
            "dp oracle horizon {horizon} exceeds limit {}",
            limits.max_horizon
        )));
    }
    if grid.len() > limits.max_atoms || grid.len() > u8::MAX as usize {
        return Err(Error::InvalidInput(format!(
            "noise grid has {} atoms, limit {}",
            grid.len(),
            limits.max_atoms
        )));
    }
    if sol.horizon() != horizon {
        return Err(Error::InvalidInput(format!(
            "riccati solution horizon {} differs from weights horizon {horizon}",
            sol.horizon()
        )));
    }
    let states = dp_state_bound(grid.len(), horizon);
    if states > limits.state_cap {
        return Err(Error::StateSpaceTooLarge {
            states,
            cap: limits.state_cap,
        });
    }

    let mut solver = DpSolver {
        atoms: grid.atoms(),
        probs: grid.probs(),
        a: model.a()[(0, 0)],
        gamma: sol.gamma_seq().iter().map(|g| g[(0, 0)]).collect(),
        theta: weights.thetas(),
        horizon,
        table: HashMap::new(),
    };
    // η_0 = 0 with zero error, so stage 0 costs nothing.
    let mut value = 0.0;
    if horizon >= 1 {
        for i in 0..grid.len() {
            value += grid.probs()[i] * solver.value(1, &[i as u8]);
        }
    }
    Ok(DpOracle {
        grid: grid.clone(),
        horizon,
        table: solver.table,
        value,
    })
}

/// Exact expected queuing cost `E[Σ_k -θ_k η_k + e_k' Γ_k e_k]` of any
/// policy on a scalar plant with grid noise, by enumerating every noise
/// path `w_0..w_{N-1}`.
pub fn expected_queue_cost(
    policy: &dyn QueuingPolicy,
    model: &PlantModel,
    weights: &CostWeights,
    sol: &RiccatiSolution,
    grid: &NoiseGrid,
    limits: &DpLimits,
) -> Result<f64> {
    check_scalar(model)?;
    let horizon = weights.horizon();
    let paths = (grid.len() as u64)
        .checked_pow(horizon as u32)
        .unwrap_or(u64::MAX);
    if paths > limits.state_cap {
        return Err(Error::StateSpaceTooLarge {
            states: paths,
            cap: limits.state_cap,
        });
    }
    let theta = weights.thetas();
    let mut total = 0.0;
    let mut idx = vec![0usize; horizon];
    for _ in 0..paths {
        let prob: f64 = idx.iter().map(|i| grid.probs()[*i]).product();
        let mut state = QueueState::new();
        let mut cost = 0.0;
        for k in 0..=horizon {
            let eta = if k == 0 {
                Age::ZERO
            } else {
                policy.choose(&state, k)?
            };
            if !state.prev_age.admits(eta) {
                return Err(Error::InadmissibleAge {
                    k,
                    age: eta.get(),
                    max: state.prev_age.get() + 1,
                });
            }
            let e = estimation_error(&state.noise_window, model.a(), eta)?;
            cost += -theta[k] * eta.get() as f64 + e.dot(&(&sol.gamma_seq()[k] * &e));
            if k < horizon {
                state.advance(eta, DVector::from_element(1, grid.atoms()[idx[k]]));
            }
        }
        total += prob * cost;
        // odometer over noise paths
        for slot in idx.iter_mut() {
            *slot += 1;
            if *slot < grid.len() {
                break;
            }
            *slot = 0;
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::queuing::{Greedy, ZeroWait};
    use crate::riccati::solve_riccati;
    use nalgebra::DMatrix;

    fn instance(horizon: usize, theta_check: f64, lambda: f64) -> (PlantModel, CostWeights, RiccatiSolution) {
        let model = PlantModel::scalar(1.5, 0.5, 4.0, 0.0);
        let weights = CostWeights::constant(
            horizon,
            DMatrix::from_element(1, 1, 5.0),
            DMatrix::from_element(1, 1, 0.1),
            DMatrix::from_element(1, 1, 10.0),
            theta_check,
            lambda,
        )
        .unwrap();
        let sol = solve_riccati(&model, &weights).unwrap();
        (model, weights, sol)
    }

    #[test]
    fn grid_validation() {
        assert!(NoiseGrid::new(vec![1.0], vec![0.5]).is_err());
        assert!(NoiseGrid::new(vec![1.0, 2.0], vec![0.5]).is_err());
        assert!(NoiseGrid::new(vec![], vec![]).is_err());
        let g = NoiseGrid::two_atom(4.0);
        assert_eq!(g.atoms(), &[-2.0, 2.0]);
        assert_eq!(g.variance(), 4.0);
        assert_eq!(g.nearest(1.9), 1);
        assert_eq!(g.index_for(0.49), 0);
        assert_eq!(g.index_for(0.5), 1);
    }

    #[test]
    fn noiseless_grid_never_transmits() {
        let (model, weights, sol) = instance(5, 1.0, 0.1);
        let dp = dp_oracle_build(
            &model,
            &weights,
            &sol,
            &NoiseGrid::degenerate(),
            &DpLimits::default(),
        )
        .unwrap();
        // ages 1,2,...,N with zero error
        let expected: f64 = -(1..=5).map(|k| 10.0 * k as f64).sum::<f64>();
        assert!((dp.expected_cost() - expected).abs() < 1e-12);
        let mut window = vec![0u8];
        for k in 1..=5 {
            assert_eq!(dp.decision(k, &window), Some(Age(k)));
            window.push(0);
        }
    }

    #[test]
    fn zero_age_reward_has_zero_value() {
        let (model, weights, sol) = instance(4, 0.0, 1.0);
        let grid = NoiseGrid::two_atom(4.0);
        let dp = dp_oracle_build(&model, &weights, &sol, &grid, &DpLimits::default()).unwrap();
        assert_eq!(dp.expected_cost(), 0.0);
        let zw = expected_queue_cost(&ZeroWait, &model, &weights, &sol, &grid, &DpLimits::default()).unwrap();
        assert_eq!(zw, 0.0);
    }

    #[test]
    fn refuses_oversized_state_space() {
        let (model, weights, sol) = instance(8, 1.0, 0.1);
        let grid = NoiseGrid::new(vec![-2.0, -1.0, 0.0, 1.0, 2.0], vec![0.2; 5]).unwrap();
        let limits = DpLimits {
            state_cap: 1000,
            ..DpLimits::default()
        };
        let err = dp_oracle_build(&model, &weights, &sol, &grid, &limits).unwrap_err();
        assert!(matches!(err, Error::StateSpaceTooLarge { cap: 1000, .. }));
        let (model, weights, sol) = instance(9, 1.0, 0.1);
        assert!(dp_oracle_build(&model, &weights, &sol, &grid, &DpLimits::default()).is_err());
    }

    #[test]
    fn policy_value_matches_dp_value() {
        let (model, weights, sol) = instance(5, 1.0, 0.1);
        let grid = NoiseGrid::new(vec![-3.0, 0.5, 2.0], vec![0.25, 0.5, 0.25]).unwrap();
        let limits = DpLimits::default();
        let dp = dp_oracle_build(&model, &weights, &sol, &grid, &limits).unwrap();
        let replay = expected_queue_cost(&dp, &model, &weights, &sol, &grid, &limits).unwrap();
        assert!((replay - dp.expected_cost()).abs() <= 1e-10 * dp.expected_cost().abs().max(1.0));
        let greedy = Greedy::new(&model, &weights, &sol);
        let g = expected_queue_cost(&greedy, &model, &weights, &sol, &grid, &limits).unwrap();
        assert!(replay <= g);
        assert!(g <= 0.0);
    }

    #[test]
    fn state_bound() {
        assert_eq!(dp_state_bound(2, 1), 2);
        assert_eq!(dp_state_bound(2, 2), 2 + 2 + 4);
        assert!(dp_state_bound(5, 8) < 1_000_000);
    }
}
