//! Finite-horizon backward Riccati recursion.
//!
//! Starting from `S_{N+1} = Q_{N+1}`, for `k = N, ..., 0`:
//!
//! ```text
//! H_k = R_k + B' S_{k+1} B
//! K_k = H_k^{-1} B' S_{k+1} A
//! S_k = Q_k + A' S_{k+1} A - K_k' H_k K_k
//! Γ_k = K_k' H_k K_k
//! ```
//!
//! `Γ_k` weighs the estimation error in the queuing objective.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::symmetrize;
use crate::model::{check_stage, CostWeights, PlantModel};

/// Relative tolerance for the recursion residual.
pub const RICCATI_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    s: Vec<DMatrix<f64>>,
    k: Vec<DMatrix<f64>>,
    gamma: Vec<DMatrix<f64>>,
}

impl RiccatiSolution {
    pub fn horizon(&self) -> usize {
        self.k.len() - 1
    }

    /// `S_k` for `k = 0..=N+1`.
    pub fn s(&self, k: usize) -> Result<&DMatrix<f64>> {
        check_stage(k, self.horizon() + 1)?;
        Ok(&self.s[k])
    }

    /// Feedback gain `K_k` for `k = 0..=N`.
    pub fn gain(&self, k: usize) -> Result<&DMatrix<f64>> {
        check_stage(k, self.horizon())?;
        Ok(&self.k[k])
    }

    pub fn gains(&self) -> &[DMatrix<f64>] {
        &self.k
    }

    pub fn s_seq(&self) -> &[DMatrix<f64>] {
        &self.s
    }

    pub fn gamma_seq(&self) -> &[DMatrix<f64>] {
        &self.gamma
    }

    /// Worst relative residual of the recursion over all stages, with the
    /// gain recomputed through an explicit inverse.
    pub fn recursion_residual(&self, model: &PlantModel, weights: &CostWeights) -> f64 {
        let (a, b) = (model.a(), model.b());
        let mut worst: f64 = 0.0;
        for k in 0..=self.horizon() {
            let next = &self.s[k + 1];
            let h = weights.r(k) + b.transpose() * next * b;
            let gain = match h.clone().try_inverse() {
                Some(inv) => inv * b.transpose() * next * a,
                None => return f64::INFINITY,
            };
            let rhs = weights.q(k) + a.transpose() * next * a - gain.transpose() * &h * &gain;
            let scale = rhs.amax().max(self.s[k].amax()).max(1.0);
            worst = worst.max((&rhs - &self.s[k]).amax() / scale);
            worst = worst.max((&gain - &self.k[k]).amax() / gain.amax().max(1.0));
        }
        worst
    }
}

/// `Γ_k`, the error weight at stage `k`.
pub fn gamma_at(sol: &RiccatiSolution, k: usize) -> Result<&DMatrix<f64>> {
    check_stage(k, sol.horizon())?;
    Ok(&sol.gamma[k])
}

/// Runs the backward recursion. The gain is obtained from a Cholesky
/// solve of `R_k + B'S_{k+1}B`; failure of that factorization means the
/// inputs bypassed validation.
pub fn solve_riccati(model: &PlantModel, weights: &CostWeights) -> Result<RiccatiSolution> {
    let (a, b) = (model.a(), model.b());
    let n = model.state_dim();
    let horizon = weights.horizon();
    if weights.q(0).nrows() != n || weights.r(0).nrows() != model.input_dim() {
        return Err(Error::Dimension {
            what: "weights vs model".into(),
            expected: format!("Q {n}x{n}, R {m}x{m}", m = model.input_dim()),
            got: format!("Q {}, R {}", weights.q(0).nrows(), weights.r(0).nrows()),
        });
    }

    let mut s = vec![DMatrix::zeros(n, n); horizon + 2];
    let mut k_seq = vec![DMatrix::zeros(model.input_dim(), n); horizon + 1];
    let mut gamma = vec![DMatrix::zeros(n, n); horizon + 1];
    s[horizon + 1] = weights.q_terminal().clone();

    for k in (0..=horizon).rev() {
        let next = &s[k + 1];
        let bt_s = b.transpose() * next;
        let h = symmetrize(&(weights.r(k) + &bt_s * b));
        let chol = h.clone().cholesky().ok_or(Error::SingularGainSystem { k })?;
        let gain = chol.solve(&(&bt_s * a));
        let g = symmetrize(&(gain.transpose() * &h * &gain));
        let sk = symmetrize(&(weights.q(k) + a.transpose() * next * a - &g));
        s[k] = sk;
        k_seq[k] = gain;
        gamma[k] = g;
    }
    Ok(RiccatiSolution { s, k: k_seq, gamma })
}
