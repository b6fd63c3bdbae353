//! Test-side reference implementations, written without the library's
//! recursions so that they can act as oracles.

#![allow(dead_code)]

use aoi_control::queuing::NoiseGrid;
use aoi_control::{solve_riccati, CostWeights, PlantModel, RiccatiSolution};
use nalgebra::{DMatrix, DVector};

pub const EXAMPLE_CONFIG: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/configs/example.toml");

/// Scalar plant `x+ = a x + 0.5 u + w`, `W = 4`, with `Q = 5`, `R = 0.1`,
/// terminal weight 10 and `θ̌ = 1`.
pub fn scalar_instance(a: f64, horizon: usize, lambda: f64) -> (PlantModel, CostWeights, RiccatiSolution) {
    let model = PlantModel::scalar(a, 0.5, 4.0, 0.0);
    let weights = CostWeights::constant(
        horizon,
        DMatrix::from_element(1, 1, 5.0),
        DMatrix::from_element(1, 1, 0.1),
        DMatrix::from_element(1, 1, 10.0),
        1.0,
        lambda,
    )
    .unwrap();
    let sol = solve_riccati(&model, &weights).unwrap();
    (model, weights, sol)
}

pub fn example(lambda: f64) -> (PlantModel, CostWeights, RiccatiSolution) {
    scalar_instance(1.5, 100, lambda)
}

pub fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1.0)
}

/// Optimal expected queuing cost by recursion over the full noise history
/// `w_0..w_{k-1}`, with no state reduction and no memoization. The error
/// for age `η` at time `k` is recomputed from scratch as
/// `Σ_{t=1..η} a^{t-1} w_{k-t}`.
pub struct BruteForce<'a> {
    pub a: f64,
    pub atoms: &'a [f64],
    pub probs: &'a [f64],
    pub gamma: Vec<f64>,
    pub theta: Vec<f64>,
    pub horizon: usize,
}

impl BruteForce<'_> {
    fn error(&self, history: &[f64], eta: usize) -> f64 {
        let k = history.len();
        (1..=eta)
            .map(|t| self.a.powi(t as i32 - 1) * history[k - t])
            .sum()
    }

    /// Cost-to-go at time `k = history.len()` with previous age `prev`.
    pub fn value(&self, history: &mut Vec<f64>, prev: usize) -> f64 {
        let k = history.len();
        let candidates: Vec<usize> = if k == 0 { vec![0] } else { (0..=prev + 1).collect() };
        let mut best = f64::INFINITY;
        for eta in candidates {
            let e = self.error(history, eta);
            let mut total = -self.theta[k] * eta as f64 + self.gamma[k] * e * e;
            if k < self.horizon {
                for (w, p) in self.atoms.iter().zip(self.probs) {
                    history.push(*w);
                    total += p * self.value(history, eta);
                    history.pop();
                }
            }
            best = best.min(total);
        }
        best
    }
}

pub fn brute_force(model: &PlantModel, weights: &CostWeights, grid: &NoiseGrid) -> f64 {
    let (gamma, _) = scalar_riccati(model, weights);
    let bf = BruteForce {
        a: model.a()[(0, 0)],
        atoms: grid.atoms(),
        probs: grid.probs(),
        gamma,
        theta: weights.thetas(),
        horizon: weights.horizon(),
    };
    bf.value(&mut Vec::new(), 0)
}

/// Scalar Riccati in closed form per step: returns `(Γ_k, K_k)` for
/// `k = 0..=N`.
pub fn scalar_riccati(model: &PlantModel, weights: &CostWeights) -> (Vec<f64>, Vec<f64>) {
    let (a, b) = (model.a()[(0, 0)], model.b()[(0, 0)]);
    let horizon = weights.horizon();
    let mut s = weights.q_terminal()[(0, 0)];
    let mut gamma = vec![0.0; horizon + 1];
    let mut gain = vec![0.0; horizon + 1];
    for k in (0..=horizon).rev() {
        let h = weights.r(k)[(0, 0)] + b * b * s;
        gain[k] = a * b * s / h;
        gamma[k] = a * a * b * b * s * s / h;
        s = weights.q(k)[(0, 0)] + a * a * s - gamma[k];
    }
    (gamma, gain)
}

/// Plain finite-horizon LQ state feedback. Gains come from
/// `S_k = Q_k + A'S_{k+1}(A - B K_k)` with `K_k` from an explicit inverse,
/// and the loop applies `u_k = -K_k x_k`.
pub struct LqReference {
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    pub cost: f64,
}

pub fn lq_reference(
    model: &PlantModel,
    weights: &CostWeights,
    x0: &DVector<f64>,
    ws: &[DVector<f64>],
) -> LqReference {
    let (a, b) = (model.a(), model.b());
    let horizon = weights.horizon();
    let mut s = weights.q_terminal().clone();
    let mut gains = vec![DMatrix::zeros(b.ncols(), a.nrows()); horizon + 1];
    for k in (0..=horizon).rev() {
        let h = weights.r(k) + b.transpose() * &s * b;
        let k_gain = h.try_inverse().expect("invertible") * b.transpose() * &s * a;
        s = weights.q(k) + a.transpose() * &s * (a - b * &k_gain);
        gains[k] = k_gain;
    }
    let mut x = x0.clone();
    let mut states = Vec::with_capacity(horizon + 2);
    let mut inputs = Vec::with_capacity(horizon + 1);
    let mut cost = 0.0;
    for k in 0..=horizon {
        let u = -(&gains[k] * &x);
        cost += (x.transpose() * weights.q(k) * &x)[(0, 0)] + (u.transpose() * weights.r(k) * &u)[(0, 0)];
        let next = a * &x + b * &u + &ws[k];
        states.push(x);
        inputs.push(u);
        x = next;
    }
    cost += (x.transpose() * weights.q_terminal() * &x)[(0, 0)];
    states.push(x);
    LqReference { states, inputs, cost }
}

/// Sample mean and standard error of the mean.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let m = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / m;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0);
    (mean, (var / m).sqrt())
}
