//! Plant, cost weights and horizon, with checks of the structural
//! assumptions the control and queuing results rely on.

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{dim_err, Error, Result};
use crate::linalg::{asymmetry, check_definite, numerical_rank, PSD_TOL, RANK_TOL};

/// Linear plant `x_{k+1} = A x_k + B u_k + w_k`, `w_k ~ N(0, W)`,
/// `x_0 ~ N(m0, M0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantModel {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    w: DMatrix<f64>,
    m0: DVector<f64>,
    m0_cov: DMatrix<f64>,
}

impl PlantModel {
    /// Builds a plant after checking that all shapes agree. Definiteness
    /// and controllability are left to [`validate_model`].
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        w: DMatrix<f64>,
        m0: DVector<f64>,
        m0_cov: DMatrix<f64>,
    ) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || a.ncols() != n {
            return Err(dim_err("A", "square n x n with n >= 1", shape(&a)));
        }
        if b.nrows() != n || b.ncols() == 0 {
            return Err(dim_err("B", format!("{n} x m with m >= 1"), shape(&b)));
        }
        if w.shape() != (n, n) {
            return Err(dim_err("W", format!("{n}x{n}"), shape(&w)));
        }
        if m0.len() != n {
            return Err(dim_err("m0", n, m0.len()));
        }
        if m0_cov.shape() != (n, n) {
            return Err(dim_err("M0", format!("{n}x{n}"), shape(&m0_cov)));
        }
        Ok(Self { a, b, w, m0, m0_cov })
    }

    /// Scalar plant with deterministic initial state `x0`.
    pub fn scalar(a: f64, b: f64, w: f64, x0: f64) -> Self {
        Self::new(
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, b),
            DMatrix::from_element(1, 1, w),
            DVector::from_element(1, x0),
            DMatrix::zeros(1, 1),
        )
        .expect("scalar shapes are consistent")
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn noise_cov(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn initial_mean(&self) -> &DVector<f64> {
        &self.m0
    }

    pub fn initial_cov(&self) -> &DMatrix<f64> {
        &self.m0_cov
    }
}

/// Quadratic state/input weights over `k = 0..=N` (plus terminal state
/// weight), age weights and the Lagrange multiplier.
#[derive(Debug, Clone, PartialEq)]
pub struct CostWeights {
    horizon: usize,
    q: Vec<DMatrix<f64>>,
    r: Vec<DMatrix<f64>>,
    theta_check: Vec<f64>,
    lambda: f64,
}

impl CostWeights {
    /// Time-varying weights. `q` has `N + 2` entries (the last is the
    /// terminal weight), `r` and `theta_check` have `N + 1`.
    pub fn new(
        horizon: usize,
        q: Vec<DMatrix<f64>>,
        r: Vec<DMatrix<f64>>,
        theta_check: Vec<f64>,
        lambda: f64,
    ) -> Result<Self> {
        if q.len() != horizon + 2 {
            return Err(dim_err("Q sequence length", horizon + 2, q.len()));
        }
        if r.len() != horizon + 1 {
            return Err(dim_err("R sequence length", horizon + 1, r.len()));
        }
        if theta_check.len() != horizon + 1 {
            return Err(dim_err("theta_check length", horizon + 1, theta_check.len()));
        }
        for (k, qk) in q.iter().enumerate() {
            if !qk.is_square() || qk.nrows() != q[0].nrows() {
                return Err(dim_err(
                    &format!("Q[{k}]"),
                    "square, same size as Q[0]",
                    shape(qk),
                ));
            }
        }
        for (k, rk) in r.iter().enumerate() {
            if !rk.is_square() || rk.nrows() != r[0].nrows() {
                return Err(dim_err(
                    &format!("R[{k}]"),
                    "square, same size as R[0]",
                    shape(rk),
                ));
            }
        }
        Ok(Self {
            horizon,
            q,
            r,
            theta_check,
            lambda,
        })
    }

    /// Time-invariant weights broadcast over the horizon.
    pub fn constant(
        horizon: usize,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
        q_terminal: DMatrix<f64>,
        theta_check: f64,
        lambda: f64,
    ) -> Result<Self> {
        let mut qs = vec![q; horizon + 1];
        qs.push(q_terminal);
        Self::new(
            horizon,
            qs,
            vec![r; horizon + 1],
            vec![theta_check; horizon + 1],
            lambda,
        )
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// State weight `Q_k`, `k = 0..=N+1`.
    pub fn q(&self, k: usize) -> &DMatrix<f64> {
        &self.q[k]
    }

    pub fn q_terminal(&self) -> &DMatrix<f64> {
        &self.q[self.horizon + 1]
    }

    pub fn r(&self, k: usize) -> &DMatrix<f64> {
        &self.r[k]
    }

    pub fn theta_check(&self) -> &[f64] {
        &self.theta_check
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Age reward in the relaxed objective, `theta_check_k / lambda`.
    pub fn theta(&self, k: usize) -> f64 {
        self.theta_check[k] / self.lambda
    }

    pub fn thetas(&self) -> Vec<f64> {
        self.theta_check.iter().map(|t| t / self.lambda).collect()
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        Self {
            lambda,
            ..self.clone()
        }
    }

    /// Same weights truncated (or extended with the last stage weights)
    /// to a different horizon, keeping the terminal weight.
    pub fn with_horizon(&self, horizon: usize) -> Self {
        let stage = |k: usize| k.min(self.horizon);
        let mut q: Vec<_> = (0..=horizon).map(|k| self.q[stage(k)].clone()).collect();
        q.push(self.q_terminal().clone());
        Self {
            horizon,
            q,
            r: (0..=horizon).map(|k| self.r[stage(k)].clone()).collect(),
            theta_check: (0..=horizon).map(|k| self.theta_check[stage(k)]).collect(),
            lambda: self.lambda,
        }
    }
}

/// Age of information: how many steps old the controller's latest
/// measurement is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Age(pub usize);

impl Age {
    pub const ZERO: Age = Age(0);

    pub fn get(self) -> usize {
        self.0
    }

    /// Largest admissible successor age (nothing transmitted).
    pub fn next_max(self) -> Age {
        Age(self.0 + 1)
    }

    /// Whether `next` may follow `self`: `next <= self + 1`.
    pub fn admits(self, next: Age) -> bool {
        next.0 <= self.0 + 1
    }
}

impl fmt::Display for Age {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A violated modelling assumption.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NoiseNotPositiveDefinite { min_eigenvalue: f64 },
    NoiseNotSymmetric { asymmetry: f64 },
    InitialCovNotPsd { min_eigenvalue: f64 },
    NotControllable { rank: usize, state_dim: usize },
    StateWeightNotPsd { k: usize, min_eigenvalue: f64 },
    InputWeightNotPositiveDefinite { k: usize, min_eigenvalue: f64 },
    InvalidLambda { lambda: f64 },
    InvalidAgeWeight { k: usize, theta: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NoiseNotPositiveDefinite { min_eigenvalue } => {
                write!(f, "W not positive definite (min eigenvalue {min_eigenvalue:e})")
            }
            Violation::NoiseNotSymmetric { asymmetry } => {
                write!(f, "W not symmetric (relative asymmetry {asymmetry:e})")
            }
            Violation::InitialCovNotPsd { min_eigenvalue } => {
                write!(
                    f,
                    "M0 not positive semi-definite (min eigenvalue {min_eigenvalue:e})"
                )
            }
            Violation::NotControllable { rank, state_dim } => {
                write!(
                    f,
                    "(A,B) not controllable (controllability rank {rank} < {state_dim})"
                )
            }
            Violation::StateWeightNotPsd { k, min_eigenvalue } => {
                write!(
                    f,
                    "Q_{k} not positive semi-definite (min eigenvalue {min_eigenvalue:e})"
                )
            }
            Violation::InputWeightNotPositiveDefinite { k, min_eigenvalue } => {
                write!(
                    f,
                    "R_{k} not positive definite (min eigenvalue {min_eigenvalue:e})"
                )
            }
            Violation::InvalidLambda { lambda } => {
                write!(f, "lambda must be positive and finite (got {lambda})")
            }
            Violation::InvalidAgeWeight { k, theta } => {
                write!(f, "theta_{k} must be finite and nonnegative (got {theta})")
            }
        }
    }
}

/// Every violated assumption found by [`validate_model`]; empty when valid.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<(), ValidationReport> {
        if self.is_valid() {
            Ok(())
        } else {
            Err(self)
        }
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "model valid");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ValidationReport {}

/// Checks every assumption on the plant and weights. Shape mismatches
/// between model and weights are returned as `Err`; assumption failures
/// are collected into the report.
pub fn validate_model(model: &PlantModel, weights: &CostWeights) -> Result<ValidationReport> {
    let n = model.state_dim();
    let m = model.input_dim();
    if weights.q[0].nrows() != n {
        return Err(dim_err("Q", format!("{n}x{n}"), shape(&weights.q[0])));
    }
    if weights.r[0].nrows() != m {
        return Err(dim_err("R", format!("{m}x{m}"), shape(&weights.r[0])));
    }

    let mut violations = Vec::new();
    let asym = asymmetry(model.noise_cov());
    if asym > PSD_TOL {
        violations.push(Violation::NoiseNotSymmetric { asymmetry: asym });
    }
    if let Err(min_eigenvalue) = check_definite(model.noise_cov(), true, PSD_TOL) {
        violations.push(Violation::NoiseNotPositiveDefinite { min_eigenvalue });
    }
    if let Err(min_eigenvalue) = check_definite(model.initial_cov(), false, PSD_TOL) {
        violations.push(Violation::InitialCovNotPsd { min_eigenvalue });
    }
    let rank = controllability_rank(model.a(), model.b())?;
    if rank < n {
        violations.push(Violation::NotControllable { rank, state_dim: n });
    }
    for (k, q) in weights.q.iter().enumerate() {
        if let Err(min_eigenvalue) = check_definite(q, false, PSD_TOL) {
            violations.push(Violation::StateWeightNotPsd { k, min_eigenvalue });
        }
    }
    for (k, r) in weights.r.iter().enumerate() {
        if let Err(min_eigenvalue) = check_definite(r, true, PSD_TOL) {
            violations.push(Violation::InputWeightNotPositiveDefinite { k, min_eigenvalue });
        }
    }
    let lambda = weights.lambda;
    if !(lambda > 0.0 && lambda.is_finite()) {
        violations.push(Violation::InvalidLambda { lambda });
    } else {
        for k in 0..=weights.horizon {
            let theta = weights.theta(k);
            if !(theta.is_finite() && theta >= 0.0) {
                violations.push(Violation::InvalidAgeWeight { k, theta });
            }
        }
    }
    Ok(ValidationReport { violations })
}

/// Rank of `[B, AB, ..., A^{n-1}B]`.
pub fn controllability_rank(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<usize> {
    Ok(numerical_rank(&controllability_matrix(a, b)?, RANK_TOL))
}

pub fn controllability_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if !a.is_square() {
        return Err(dim_err("A", "square", shape(a)));
    }
    if b.nrows() != n {
        return Err(dim_err("B rows", n, b.nrows()));
    }
    let m = b.ncols();
    let mut c = DMatrix::zeros(n, n * m);
    let mut block = b.clone();
    for i in 0..n {
        c.view_mut((0, i * m), (n, m)).copy_from(&block);
        block = a * block;
    }
    Ok(c)
}

pub(crate) fn shape(m: &DMatrix<f64>) -> String {
    format!("{}x{}", m.nrows(), m.ncols())
}

/// Errors from an out-of-range stage index.
pub(crate) fn check_stage(k: usize, horizon: usize) -> Result<()> {
    if k > horizon {
        Err(Error::IndexOutOfRange { k, max: horizon })
    } else {
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example_weights(n: usize, m: usize, horizon: usize) -> CostWeights {
        CostWeights::constant(
            horizon,
            DMatrix::identity(n, n) * 5.0,
            DMatrix::identity(m, m) * 0.1,
            DMatrix::identity(n, n) * 10.0,
            1.0,
            0.1,
        )
        .unwrap()
    }

    #[test]
    fn scalar_example_is_valid() {
        let model = PlantModel::scalar(1.5, 0.5, 4.0, 0.0);
        let report = validate_model(&model, &example_weights(1, 1, 100)).unwrap();
        assert!(report.is_valid(), "{report}");
    }

    #[test]
    fn zero_noise_is_rejected() {
        let model = PlantModel::scalar(1.5, 0.5, 0.0, 0.0);
        let report = validate_model(&model, &example_weights(1, 1, 10)).unwrap();
        assert_eq!(report.violations.len(), 1);
        assert!(matches!(
            report.violations[0],
            Violation::NoiseNotPositiveDefinite { .. }
        ));
        assert!(report.to_string().contains("W not positive definite"));
    }

    #[test]
    fn uncontrollable_pair_is_rejected() {
        let model = PlantModel::new(
            DMatrix::identity(2, 2),
            DMatrix::from_column_slice(2, 1, &[1.0, 0.0]),
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            DMatrix::zeros(2, 2),
        )
        .unwrap();
        let report = validate_model(&model, &example_weights(2, 1, 5)).unwrap();
        assert_eq!(
            report.violations,
            vec![Violation::NotControllable {
                rank: 1,
                state_dim: 2
            }]
        );
        assert!(report.to_string().contains("(A,B) not controllable"));
    }

    #[test]
    fn weight_violations_are_all_listed() {
        let model = PlantModel::scalar(1.5, 0.5, 4.0, 0.0);
        let mut w = example_weights(1, 1, 3);
        w.q[2] = DMatrix::from_element(1, 1, -1.0);
        w.r[1] = DMatrix::zeros(1, 1);
        w.theta_check[0] = -2.0;
        let report = validate_model(&model, &w).unwrap();
        assert_eq!(report.violations.len(), 3, "{report}");
        let bad_lambda = example_weights(1, 1, 3).with_lambda(0.0);
        let report = validate_model(&model, &bad_lambda).unwrap();
        assert!(matches!(report.violations[0], Violation::InvalidLambda { .. }));
    }

    #[test]
    fn weight_shape_mismatch_is_structural() {
        let model = PlantModel::scalar(1.5, 0.5, 4.0, 0.0);
        assert!(matches!(
            validate_model(&model, &example_weights(2, 1, 3)),
            Err(Error::Dimension { .. })
        ));
        assert!(PlantModel::new(
            DMatrix::identity(2, 2),
            DMatrix::zeros(3, 1),
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            DMatrix::zeros(2, 2)
        )
        .is_err());
    }

    #[test]
    fn controllability_rank_examples() {
        let r = |a: &[f64], b: &[f64], n: usize| {
            controllability_rank(
                &DMatrix::from_row_slice(n, n, a),
                &DMatrix::from_row_slice(n, b.len() / n, b),
            )
            .unwrap()
        };
        assert_eq!(r(&[1.5], &[0.5], 1), 1);
        assert_eq!(r(&[1.0, 0.0, 0.0, 1.0], &[1.0, 0.0], 2), 1);
        assert_eq!(r(&[0.0, 1.0, 0.0, 0.0], &[0.0, 1.0], 2), 2);
        assert_eq!(r(&[1.0], &[0.0], 1), 0);
    }

    #[test]
    fn with_horizon_keeps_terminal_weight() {
        let w = example_weights(1, 1, 100).with_horizon(4);
        assert_eq!(w.horizon(), 4);
        assert_eq!(w.q_terminal()[(0, 0)], 10.0);
        assert_eq!(w.q(4)[(0, 0)], 5.0);
        assert_eq!(w.theta_check().len(), 5);
    }

    #[test]
    fn age_admissibility() {
        assert!(Age(3).admits(Age(4)));
        assert!(Age(3).admits(Age(0)));
        assert!(!Age(3).admits(Age(5)));
    }
}
