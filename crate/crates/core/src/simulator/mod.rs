//! Closed-loop trajectory engine.
//!
//! Each step `k`: the queuing policy picks `η_k`, the controller forms
//! `x̂_k` from `x_{k-η_k}` and the inputs since, applies
//! `u_k = -K_k x̂_k`, and the plant moves to `x_{k+1} = A x_k + B u_k + w_k`.
//! All noise is drawn before the loop so that policies compared under the
//! same stream see identical realizations.

mod output;
mod rng;

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::controller::control_input;
use crate::error::{dim_err, Error, Result};
use crate::estimator::{estimate, estimation_error, ControllerInfo};
use crate::linalg::psd_factor;
use crate::model::{Age, CostWeights, PlantModel};
use crate::queuing::{NoiseGrid, QueueState, QueuingPolicy};
use crate::riccati::RiccatiSolution;

pub use output::{
    trajectory_header, write_long_format, write_long_format_file, write_trajectory, write_trajectory_file,
};
pub use rng::RngStream;

#[derive(Debug, Clone, PartialEq)]
pub struct StepRow {
    pub k: usize,
    pub x: DVector<f64>,
    pub xhat: DVector<f64>,
    pub u: DVector<f64>,
    pub eta: Age,
    pub w: DVector<f64>,
    pub e: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub trajectory_index: u64,
    /// Rows `k = 0..=N`.
    pub steps: Vec<StepRow>,
    /// `x_{N+1}`.
    pub terminal_state: DVector<f64>,
    /// `Σ θ̌_k η_k`.
    pub age_sum: f64,
    /// `x_{N+1}' Q_{N+1} x_{N+1} + Σ x_k' Q_k x_k + u_k' R_k u_k`.
    pub quad_sum: f64,
    /// `Σ -θ_k η_k + quad_sum`.
    pub chi_realized: f64,
}

impl TrajectoryRecord {
    pub fn ages(&self) -> impl Iterator<Item = Age> + '_ {
        self.steps.iter().map(|s| s.eta)
    }

    pub fn peak_age(&self) -> Age {
        self.ages().max().unwrap_or_default()
    }

    pub fn state(&self, k: usize) -> &DVector<f64> {
        if k == self.steps.len() {
            &self.terminal_state
        } else {
            &self.steps[k].x
        }
    }

    pub fn summary(&self) -> TrajectorySummary {
        TrajectorySummary {
            age_sum: self.age_sum,
            quad_sum: self.quad_sum,
            chi: self.chi_realized,
            ages: self.ages().map(Age::get).collect(),
        }
    }
}

/// The scalars of a record that the metrics need.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySummary {
    pub age_sum: f64,
    pub quad_sum: f64,
    pub chi: f64,
    pub ages: Vec<usize>,
}

/// How the process noise is drawn.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseSource {
    /// `w = L z` with `L L' = W`, `z` standard normal.
    Gaussian { factor: DMatrix<f64> },
    /// i.i.d. draws from a scalar grid.
    Grid(NoiseGrid),
}

#[derive(Debug, Clone)]
pub struct Simulator<'a> {
    model: &'a PlantModel,
    weights: &'a CostWeights,
    sol: &'a RiccatiSolution,
    noise: NoiseSource,
    x0_factor: DMatrix<f64>,
}

impl<'a> Simulator<'a> {
    /// Gaussian noise with the model's covariance.
    pub fn new(model: &'a PlantModel, weights: &'a CostWeights, sol: &'a RiccatiSolution) -> Result<Self> {
        let factor = model
            .noise_cov()
            .clone()
            .cholesky()
            .ok_or(Error::NotPositiveDefinite("W"))?
            .l();
        Self::with_noise(model, weights, sol, NoiseSource::Gaussian { factor })
    }

    pub fn with_noise(
        model: &'a PlantModel,
        weights: &'a CostWeights,
        sol: &'a RiccatiSolution,
        noise: NoiseSource,
    ) -> Result<Self> {
        if sol.horizon() != weights.horizon() {
            return Err(dim_err("riccati horizon", weights.horizon(), sol.horizon()));
        }
        if matches!(noise, NoiseSource::Grid(_)) && model.state_dim() != 1 {
            return Err(Error::InvalidInput("grid noise needs a scalar plant".into()));
        }
        Ok(Self {
            model,
            weights,
            sol,
            noise,
            x0_factor: psd_factor(model.initial_cov()),
        })
    }

    pub fn model(&self) -> &PlantModel {
        self.model
    }

    pub fn weights(&self) -> &CostWeights {
        self.weights
    }

    pub fn solution(&self) -> &RiccatiSolution {
        self.sol
    }

    /// Initial state and `w_0..w_N` for one stream. Draw order is fixed:
    /// `n` normals for `x_0`, then the noise sequence.
    pub fn sample_noise(&self, rng: &mut ChaCha8Rng) -> (DVector<f64>, Vec<DVector<f64>>) {
        let n = self.model.state_dim();
        let z0 = DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let x0 = self.model.initial_mean() + &self.x0_factor * z0;
        let ws = (0..=self.weights.horizon())
            .map(|_| match &self.noise {
                NoiseSource::Gaussian { factor } => {
                    let z = DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
                    factor * z
                }
                NoiseSource::Grid(grid) => {
                    let i = grid.index_for(rng.random::<f64>());
                    DVector::from_element(1, grid.atoms()[i])
                }
            })
            .collect();
        (x0, ws)
    }

    pub fn run_trajectory(&self, policy: &dyn QueuingPolicy, stream: RngStream) -> Result<TrajectoryRecord> {
        let (x0, ws) = self.sample_noise(&mut stream.rng());
        self.run_on_noise(policy, None, x0, &ws, stream.trajectory_index)
    }

    /// Closed loop with `u_k = -G_k x̂_k` for arbitrary gains `G_k`; with
    /// the Riccati gains this is [`Self::run_trajectory`].
    pub fn run_with_gains(
        &self,
        policy: &dyn QueuingPolicy,
        gains: &[DMatrix<f64>],
        stream: RngStream,
    ) -> Result<TrajectoryRecord> {
        let (x0, ws) = self.sample_noise(&mut stream.rng());
        self.run_on_noise(policy, Some(gains), x0, &ws, stream.trajectory_index)
    }

    /// Runs the loop on given `x_0` and `w_0..w_N`, with the Riccati gains
    /// unless `gains` overrides them.
    pub fn run_on_noise(
        &self,
        policy: &dyn QueuingPolicy,
        gains: Option<&[DMatrix<f64>]>,
        x0: DVector<f64>,
        ws: &[DVector<f64>],
        trajectory_index: u64,
    ) -> Result<TrajectoryRecord> {
        let horizon = self.weights.horizon();
        if let Some(g) = gains {
            if g.len() != horizon + 1 {
                return Err(dim_err("gain sequence", horizon + 1, g.len()));
            }
        }
        if ws.len() != horizon + 1 {
            return Err(dim_err("noise sequence", horizon + 1, ws.len()));
        }
        let (a, b) = (self.model.a(), self.model.b());
        let mut xs: Vec<DVector<f64>> = Vec::with_capacity(horizon + 2);
        let mut us: Vec<DVector<f64>> = Vec::with_capacity(horizon + 1);
        let mut steps = Vec::with_capacity(horizon + 1);
        let mut queue = QueueState::new();
        let (mut age_sum, mut quad_sum, mut reward) = (0.0, 0.0, 0.0);
        xs.push(x0);

        for k in 0..=horizon {
            let eta = if k == 0 {
                Age::ZERO
            } else {
                policy.choose(&queue, k)?
            };
            if !queue.prev_age.admits(eta) {
                return Err(Error::InadmissibleAge {
                    k,
                    age: eta.get(),
                    max: queue.prev_age.get() + 1,
                });
            }
            let info = ControllerInfo {
                latest_measurement: xs[k - eta.get()].clone(),
                age: eta,
                control_history: us.iter().rev().take(eta.get()).cloned().collect::<VecDeque<_>>(),
            };
            let xhat = estimate(&info, a, b)?;
            let u = match gains {
                None => control_input(self.sol, k, &xhat)?,
                Some(g) => -(&g[k] * &xhat),
            };
            let x = &xs[k];
            let next = a * x + b * &u + &ws[k];

            age_sum += self.weights.theta_check()[k] * eta.get() as f64;
            reward += self.weights.theta(k) * eta.get() as f64;
            quad_sum += x.dot(&(self.weights.q(k) * x)) + u.dot(&(self.weights.r(k) * &u));

            steps.push(StepRow {
                k,
                x: x.clone(),
                e: x - &xhat,
                xhat,
                u: u.clone(),
                eta,
                w: ws[k].clone(),
            });
            us.push(u);
            xs.push(next);
            queue.advance(eta, ws[k].clone());
        }
        let terminal = xs.pop().expect("terminal state");
        quad_sum += terminal.dot(&(self.weights.q_terminal() * &terminal));
        Ok(TrajectoryRecord {
            trajectory_index,
            steps,
            terminal_state: terminal,
            age_sum,
            quad_sum,
            chi_realized: quad_sum - reward,
        })
    }

    /// `m` trajectories on streams `0..m` of `master_seed`, run on a pool
    /// of `workers` threads. Output order is by trajectory index.
    pub fn run_batch(
        &self,
        policy: &dyn QueuingPolicy,
        m: usize,
        master_seed: u64,
        workers: usize,
    ) -> Result<Vec<TrajectoryRecord>> {
        self.map_batch(m, master_seed, workers, |s| self.run_trajectory(policy, s))
    }

    /// Like [`Self::run_batch`] but keeps only per-trajectory summaries.
    pub fn run_summaries(
        &self,
        policy: &dyn QueuingPolicy,
        m: usize,
        master_seed: u64,
        workers: usize,
    ) -> Result<Vec<TrajectorySummary>> {
        self.map_batch(m, master_seed, workers, |s| {
            self.run_trajectory(policy, s).map(|r| r.summary())
        })
    }

    fn map_batch<T, F>(&self, m: usize, master_seed: u64, workers: usize, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(RngStream) -> Result<T> + Sync,
    {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .build()
            .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
        pool.install(|| {
            (0..m as u64)
                .into_par_iter()
                .map(|i| f(RngStream::new(master_seed, i)))
                .collect()
        })
    }
}

/// Monte Carlo estimates of the average age `A`, the average quadratic
/// cost `J` (both divided by `N`) and the relaxed objective `χ`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMetrics {
    pub m: usize,
    pub a_hat: f64,
    pub se_a: f64,
    pub j_hat: f64,
    pub se_j: f64,
    pub chi_hat: f64,
    pub se_chi: f64,
    /// Mean of `η_k` across trajectories, `k = 0..=N`.
    pub mean_age_path: Vec<f64>,
}

pub fn empirical_metrics(records: &[TrajectoryRecord], weights: &CostWeights) -> Result<EmpiricalMetrics> {
    let summaries: Vec<_> = records.iter().map(TrajectoryRecord::summary).collect();
    metrics_from_summaries(&summaries, weights)
}

pub fn metrics_from_summaries(
    summaries: &[TrajectorySummary],
    weights: &CostWeights,
) -> Result<EmpiricalMetrics> {
    if summaries.is_empty() {
        return Err(Error::InvalidInput("no trajectories to aggregate".into()));
    }
    let horizon = weights.horizon();
    if horizon == 0 {
        return Err(Error::InvalidInput(
            "averaged metrics need a horizon N >= 1".into(),
        ));
    }
    let n = horizon as f64;
    let (a_hat, se_a) = mean_se(summaries.iter().map(|s| s.age_sum / n));
    let (j_hat, se_j) = mean_se(summaries.iter().map(|s| s.quad_sum / n));
    let (chi_hat, se_chi) = mean_se(summaries.iter().map(|s| s.chi));
    let mut mean_age_path = vec![0.0; horizon + 1];
    for s in summaries {
        for (acc, age) in mean_age_path.iter_mut().zip(&s.ages) {
            *acc += *age as f64;
        }
    }
    mean_age_path
        .iter_mut()
        .for_each(|v| *v /= summaries.len() as f64);
    Ok(EmpiricalMetrics {
        m: summaries.len(),
        a_hat,
        se_a,
        j_hat,
        se_j,
        chi_hat,
        se_chi,
        mean_age_path,
    })
}

/// Sample mean and its standard error `s / sqrt(M)` (zero for `M = 1`).
pub fn mean_se(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = values.collect();
    let m = v.len() as f64;
    let mean = v.iter().sum::<f64>() / m;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0);
    (mean, (var / m).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentityResidual {
    pub left: f64,
    pub right: f64,
    pub abs: f64,
    /// `abs / |left|`, or `abs` when `left = 0`.
    pub rel: f64,
}

/// Evaluates both sides of the completion-of-squares cost identity on one
/// realized path:
///
/// ```text
/// x_{N+1}'Q_{N+1}x_{N+1} + Σ x_k'Q_k x_k + u_k'R_k u_k
///   = x_0'S_0x_0 + Σ w_k'S_{k+1}w_k + 2(Ax_k+Bu_k)'S_{k+1}w_k
///                   + (u_k+K_k x_k)'(B'S_{k+1}B+R_k)(u_k+K_k x_k)
/// ```
///
/// The cross term vanishes only in expectation, so it is kept here.
pub fn cost_identity_check(
    record: &TrajectoryRecord,
    sol: &RiccatiSolution,
    model: &PlantModel,
    weights: &CostWeights,
) -> Result<IdentityResidual> {
    let (a, b) = (model.a(), model.b());
    let horizon = weights.horizon();
    if record.steps.len() != horizon + 1 {
        return Err(dim_err("record length", horizon + 1, record.steps.len()));
    }
    let s = sol.s_seq();
    let xt = &record.terminal_state;
    let mut left = xt.dot(&(weights.q_terminal() * xt));
    let x0 = &record.steps[0].x;
    let mut right = x0.dot(&(&s[0] * x0));
    for row in &record.steps {
        let k = row.k;
        let (x, u, w) = (&row.x, &row.u, &row.w);
        left += x.dot(&(weights.q(k) * x)) + u.dot(&(weights.r(k) * u));
        let s_next = &s[k + 1];
        let h = b.transpose() * s_next * b + weights.r(k);
        let dev = u + sol.gain(k)? * x;
        right += w.dot(&(s_next * w)) + 2.0 * (a * x + b * u).dot(&(s_next * w)) + dev.dot(&(h * &dev));
    }
    let abs = (left - right).abs();
    let rel = if left == 0.0 { abs } else { abs / left.abs() };
    Ok(IdentityResidual {
        left,
        right,
        abs,
        rel,
    })
}

/// Worst gap between the recorded error `x_k - x̂_k` and the noise-only
/// expression `Σ_{t=1..η_k} A^{t-1} w_{k-t}` over a record, relative to
/// the largest operand magnitude: `|x_k|`, `|x̂_k|` or `Σ |A^{t-1} w_{k-t}|`.
/// Greedy ages are chosen where that sum nearly cancels, so the size of the
/// result alone is not a usable scale.
pub fn estimator_consistency(record: &TrajectoryRecord, a: &DMatrix<f64>) -> Result<f64> {
    let n = a.nrows();
    let mut worst: f64 = 0.0;
    for (k, row) in record.steps.iter().enumerate() {
        let window = record.steps[..k].iter().rev().map(|s| &s.w);
        let e = estimation_error(window.clone(), a, row.eta)?;
        let mut power = DMatrix::<f64>::identity(n, n);
        let mut operands = 0.0;
        for w in window.take(row.eta.get()) {
            operands += (&power * w).amax();
            power = a * power;
        }
        let scale = row.x.amax().max(row.xhat.amax()).max(operands);
        let gap = (&row.e - &e).amax();
        if gap > 0.0 {
            worst = worst.max(gap / scale);
        }
    }
    Ok(worst)
}

/// `η_0 = 0` and `η_k <= η_{k-1} + 1` throughout.
pub fn ages_admissible(record: &TrajectoryRecord) -> bool {
    let mut prev = None;
    record.ages().all(|eta| {
        let ok = match prev {
            None => eta == Age::ZERO,
            Some(p) => Age::admits(p, eta),
        };
        prev = Some(eta);
        ok
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::queuing::{Greedy, ZeroWait};
    use crate::riccati::solve_riccati;

    fn example(lambda: f64) -> (PlantModel, CostWeights) {
        let model = PlantModel::scalar(1.5, 0.5, 4.0, 0.0);
        let weights = CostWeights::constant(
            100,
            DMatrix::from_element(1, 1, 5.0),
            DMatrix::from_element(1, 1, 0.1),
            DMatrix::from_element(1, 1, 10.0),
            1.0,
            lambda,
        )
        .unwrap();
        (model, weights)
    }

    #[test]
    fn zero_wait_estimates_are_exact() {
        let (model, weights) = example(0.1);
        let sol = solve_riccati(&model, &weights).unwrap();
        let sim = Simulator::new(&model, &weights, &sol).unwrap();
        let rec = sim.run_trajectory(&ZeroWait, RngStream::new(1, 0)).unwrap();
        for s in &rec.steps {
            assert_eq!(s.x, s.xhat);
            assert_eq!(s.eta, Age(0));
        }
        assert_eq!(rec.age_sum, 0.0);
    }

    #[test]
    fn record_invariants_hold() {
        let (model, weights) = example(0.01);
        let sol = solve_riccati(&model, &weights).unwrap();
        let sim = Simulator::new(&model, &weights, &sol).unwrap();
        let greedy = Greedy::new(&model, &weights, &sol);
        let rec = sim.run_trajectory(&greedy, RngStream::new(3, 9)).unwrap();
        assert_eq!(rec.steps[0].eta, Age(0));
        for k in 0..=100 {
            let s = &rec.steps[k];
            let next = rec.state(k + 1);
            let expect = model.a() * &s.x + model.b() * &s.u + &s.w;
            assert_eq!(&expect, next);
            assert_eq!(s.e, &s.x - &s.xhat);
            if k > 0 {
                assert!(rec.steps[k - 1].eta.admits(s.eta));
            }
        }
        assert!(rec.peak_age() > Age(1));
    }

    #[test]
    fn inadmissible_policy_is_a_hard_fault() {
        struct Jump;
        impl QueuingPolicy for Jump {
            fn choose(&self, state: &QueueState, _k: usize) -> Result<Age> {
                Ok(Age(state.prev_age.get() + 2))
            }
            fn name(&self) -> String {
                "jump".into()
            }
        }
        let (model, weights) = example(0.1);
        let sol = solve_riccati(&model, &weights).unwrap();
        let sim = Simulator::new(&model, &weights, &sol).unwrap();
        assert_eq!(
            sim.run_trajectory(&Jump, RngStream::new(0, 0)).unwrap_err(),
            Error::InadmissibleAge { k: 1, age: 2, max: 1 }
        );
    }

    #[test]
    fn metrics_examples() {
        let (model, weights) = example(0.1);
        let sol = solve_riccati(&model, &weights).unwrap();
        let sim = Simulator::new(&model, &weights, &sol).unwrap();
        let rec = sim.run_trajectory(&ZeroWait, RngStream::new(5, 0)).unwrap();
        let m1 = empirical_metrics(std::slice::from_ref(&rec), &weights).unwrap();
        assert_eq!(m1.a_hat, 0.0);
        assert_eq!(m1.se_j, 0.0);
        let same = vec![rec.clone(); 5];
        let m5 = empirical_metrics(&same, &weights).unwrap();
        assert_eq!((m5.se_a, m5.se_j, m5.se_chi), (0.0, 0.0, 0.0));
        assert!(empirical_metrics(&[], &weights).is_err());
    }

    #[test]
    fn null_trajectory_identity() {
        let (model, weights) = example(0.1);
        let sol = solve_riccati(&model, &weights).unwrap();
        let sim = Simulator::new(&model, &weights, &sol).unwrap();
        let ws = vec![DVector::zeros(1); 101];
        let rec = sim
            .run_on_noise(&ZeroWait, None, DVector::zeros(1), &ws, 0)
            .unwrap();
        let r = cost_identity_check(&rec, &sol, &model, &weights).unwrap();
        assert_eq!((r.left, r.right, r.abs), (0.0, 0.0, 0.0));
    }

    #[test]
    fn corrupted_record_breaks_identity() {
        let (model, weights) = example(0.1);
        let sol = solve_riccati(&model, &weights).unwrap();
        let sim = Simulator::new(&model, &weights, &sol).unwrap();
        let mut rec = sim.run_trajectory(&ZeroWait, RngStream::new(2, 1)).unwrap();
        assert!(cost_identity_check(&rec, &sol, &model, &weights).unwrap().rel < 1e-7);
        rec.steps[40].u[0] += 1.0;
        assert!(cost_identity_check(&rec, &sol, &model, &weights).unwrap().rel > 1e-3);
    }

    #[test]
    fn mean_se_basics() {
        let (m, se) = mean_se([1.0, 3.0].into_iter());
        assert_eq!(m, 2.0);
        assert!((se - 1.0).abs() < 1e-15);
    }
}
