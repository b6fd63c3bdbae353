//! Controller-side estimate of the current state from the latest
//! delivered measurement and the inputs applied since it was taken:
//!
//! ```text
//! x̂_k = A^η x_{k-η} + Σ_{t=1..η} A^{t-1} B u_{k-t}
//! e_k = x_k - x̂_k = Σ_{t=1..η} A^{t-1} w_{k-t}
//! ```

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use crate::error::{dim_err, Error, Result};
use crate::model::Age;

/// What the controller knows at time `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerInfo {
    /// `x_{k-η}`.
    pub latest_measurement: DVector<f64>,
    pub age: Age,
    /// `u_{k-1}, u_{k-2}, ..., u_{k-η}`, most recent first.
    pub control_history: VecDeque<DVector<f64>>,
}

impl ControllerInfo {
    /// Information right after a fresh delivery.
    pub fn fresh(x: DVector<f64>) -> Self {
        Self {
            latest_measurement: x,
            age: Age::ZERO,
            control_history: VecDeque::new(),
        }
    }
}

pub fn estimate(info: &ControllerInfo, a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DVector<f64>> {
    let eta = info.age.get();
    if info.control_history.len() != eta {
        return Err(Error::HistoryMismatch {
            history: info.control_history.len(),
            age: eta,
        });
    }
    let n = a.nrows();
    if info.latest_measurement.len() != n {
        return Err(dim_err("latest measurement", n, info.latest_measurement.len()));
    }
    // running power A^{t-1}
    let mut power = DMatrix::<f64>::identity(n, n);
    let mut drive = DVector::<f64>::zeros(n);
    for u in &info.control_history {
        if u.len() != b.ncols() {
            return Err(dim_err("control input", b.ncols(), u.len()));
        }
        drive += &power * (b * u);
        power = a * power;
    }
    Ok(power * &info.latest_measurement + drive)
}

/// `Σ_{t=1..η} A^{t-1} w_{k-t}`; `noise_window` is ordered `w_{k-1}, w_{k-2}, ...`.
pub fn estimation_error<'a, I>(noise_window: I, a: &DMatrix<f64>, eta: Age) -> Result<DVector<f64>>
where
    I: IntoIterator<Item = &'a DVector<f64>>,
{
    let n = a.nrows();
    let mut power = DMatrix::<f64>::identity(n, n);
    let mut err = DVector::<f64>::zeros(n);
    let mut taken = 0;
    for w in noise_window.into_iter().take(eta.get()) {
        err += &power * w;
        power = a * power;
        taken += 1;
    }
    if taken < eta.get() {
        return Err(Error::InsufficientWindow {
            window: taken,
            needed: eta.get(),
        });
    }
    Ok(err)
}
