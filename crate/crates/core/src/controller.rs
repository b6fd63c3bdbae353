//! Certainty-equivalence control: the full-information LQ gain applied
//! to the controller's estimate, `u_k = -K_k x̂_k`.

use nalgebra::DVector;

use crate::error::{dim_err, Result};
use crate::riccati::RiccatiSolution;

pub fn control_input(sol: &RiccatiSolution, k: usize, xhat: &DVector<f64>) -> Result<DVector<f64>> {
    let gain = sol.gain(k)?;
    if xhat.len() != gain.ncols() {
        return Err(dim_err("state estimate", gain.ncols(), xhat.len()));
    }
    Ok(-(gain * xhat))
}
