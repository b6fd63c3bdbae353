//! Multiplier sweep tracing the staleness/performance trade-off.
//!
//! For each λ the age reward is `θ_k = θ̌_k / λ`, the policy is rebuilt
//! and `M` trajectories are run on the same master seed, so every λ sees
//! the same noise. Since the queuing policy is suboptimal and the
//! information sets are restricted, the traced `(J, A)` pairs are a lower
//! bound on the best achievable staleness at each performance level.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{CostWeights, PlantModel};
use crate::queuing::{DpLimits, NoiseGrid, PolicySpec};
use crate::riccati::solve_riccati;
use crate::simulator::{metrics_from_summaries, Simulator};

#[derive(Debug, Clone, PartialEq)]
pub struct TradeoffPoint {
    pub lambda: f64,
    pub a_hat: f64,
    pub se_a: f64,
    pub j_hat: f64,
    pub se_j: f64,
    pub m: usize,
    /// Largest age seen in any trajectory.
    pub peak_age: usize,
}

/// Everything a sweep needs besides the model and weights.
#[derive(Debug, Clone)]
pub struct SweepSettings {
    pub policy: PolicySpec,
    pub trajectories: usize,
    pub master_seed: u64,
    pub workers: usize,
    pub grid: NoiseGrid,
    pub dp_limits: DpLimits,
}

/// `count` log-spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..count)
                .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
                .collect()
        }
    }
}

/// Default multiplier grid: 20 points in `[0.005, 5]`.
pub fn default_lambdas() -> Vec<f64> {
    log_grid(0.005, 5.0, 20)
}

pub fn sweep(
    model: &PlantModel,
    weights_base: &CostWeights,
    lambdas: &[f64],
    settings: &SweepSettings,
) -> Result<Vec<TradeoffPoint>> {
    if lambdas.is_empty() {
        return Err(Error::InvalidInput("empty lambda grid".into()));
    }
    if let Some(bad) = lambdas.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
        return Err(Error::InvalidInput(format!("lambda must be positive, got {bad}")));
    }
    if settings.trajectories == 0 {
        return Err(Error::InvalidInput(
            "need at least one trajectory per point".into(),
        ));
    }
    let mut points = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let weights = weights_base.with_lambda(lambda);
        // the gains do not depend on λ, but the solve is cheap
        let sol = solve_riccati(model, &weights)?;
        let policy = settings
            .policy
            .build(model, &weights, &sol, &settings.grid, &settings.dp_limits)?;
        let sim = if settings.policy == PolicySpec::DpOracle {
            Simulator::with_noise(
                model,
                &weights,
                &sol,
                crate::simulator::NoiseSource::Grid(settings.grid.clone()),
            )?
        } else {
            Simulator::new(model, &weights, &sol)?
        };
        let summaries = sim.run_summaries(
            policy.as_ref(),
            settings.trajectories,
            settings.master_seed,
            settings.workers,
        )?;
        let metrics = metrics_from_summaries(&summaries, &weights)?;
        let peak_age = summaries
            .iter()
            .flat_map(|s| s.ages.iter().copied())
            .max()
            .unwrap_or(0);
        points.push(TradeoffPoint {
            lambda,
            a_hat: metrics.a_hat,
            se_a: metrics.se_a,
            j_hat: metrics.j_hat,
            se_j: metrics.se_j,
            m: metrics.m,
            peak_age,
        });
    }
    sort_points(&mut points);
    Ok(points)
}

/// Canonical order: λ descending.
pub fn sort_points(points: &mut [TradeoffPoint]) {
    points.sort_by(|a, b| b.lambda.total_cmp(&a.lambda));
}

pub fn curve_csv(points: &[TradeoffPoint]) -> String {
    let mut sorted = points.to_vec();
    sort_points(&mut sorted);
    let mut out = String::from("lambda,A_hat,se_A,J_hat,se_J,M\n");
    for p in &sorted {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            p.lambda, p.a_hat, p.se_a, p.j_hat, p.se_j, p.m
        );
    }
    out
}

/// Writes the curve CSV to `path`, refusing an empty curve before any
/// file is created.
pub fn emit_curve(points: &[TradeoffPoint], path: &Path) -> io::Result<()> {
    if points.is_empty() {
        return Err(io::Error::new(
            io::ErrorKind::InvalidInput,
            "no trade-off points to write",
        ));
    }
    fs::write(path, curve_csv(points))
}

/// Standalone SVG scatter of `A_hat` against `J_hat` with ±1 standard
/// error bars in both directions.
pub fn curve_svg(points: &[TradeoffPoint]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 480.0;
    const L: f64 = 80.0;
    const R: f64 = 20.0;
    const T: f64 = 20.0;
    const B: f64 = 60.0;

    let span = |lo: f64, hi: f64| if hi > lo { (lo, hi) } else { (lo - 0.5, hi + 0.5) };
    let (j_lo, j_hi) = span(
        points
            .iter()
            .map(|p| p.j_hat - p.se_j)
            .fold(f64::INFINITY, f64::min),
        points
            .iter()
            .map(|p| p.j_hat + p.se_j)
            .fold(f64::NEG_INFINITY, f64::max),
    );
    let (a_lo, a_hi) = span(
        points
            .iter()
            .map(|p| p.a_hat - p.se_a)
            .fold(f64::INFINITY, f64::min)
            .min(0.0),
        points
            .iter()
            .map(|p| p.a_hat + p.se_a)
            .fold(f64::NEG_INFINITY, f64::max),
    );
    let px = |j: f64| L + (j - j_lo) / (j_hi - j_lo) * (W - L - R);
    let py = |a: f64| H - B - (a - a_lo) / (a_hi - a_lo) * (H - T - B);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<path d="M{L},{T} V{y0} H{x1}" fill="none" stroke="black"/>"#,
        y0 = H - B,
        x1 = W - R
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let (j, a) = (j_lo + f * (j_hi - j_lo), a_lo + f * (a_hi - a_lo));
        let _ = writeln!(
            s,
            r#"<text x="{x:.1}" y="{y:.1}" text-anchor="middle">{j:.3}</text>"#,
            x = px(j),
            y = H - B + 18.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{x:.1}" y="{y:.1}" text-anchor="end">{a:.3}</text>"#,
            x = L - 6.0,
            y = py(a) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{x:.1}" y="{y:.1}" text-anchor="middle">control performance J</text>"#,
        x = (L + W - R) / 2.0,
        y = H - 15.0
    );
    let _ = writeln!(
        s,
        r#"<text x="20" y="{y:.1}" text-anchor="middle" transform="rotate(-90 20 {y:.1})">average age A</text>"#,
        y = (T + H - B) / 2.0
    );
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.j_hat.total_cmp(&b.j_hat));
    let line: Vec<String> = sorted
        .iter()
        .map(|p| format!("{:.2},{:.2}", px(p.j_hat), py(p.a_hat)))
        .collect();
    let _ = writeln!(
        s,
        r#"<polyline points="{}" fill="none" stroke="steelblue"/>"#,
        line.join(" ")
    );
    for p in &sorted {
        let (x, y) = (px(p.j_hat), py(p.a_hat));
        let _ = writeln!(
            s,
            r#"<path d="M{:.2},{y:.2} H{:.2} M{x:.2},{:.2} V{:.2}" stroke="gray"/>"#,
            px(p.j_hat - p.se_j),
            px(p.j_hat + p.se_j),
            py(p.a_hat - p.se_a),
            py(p.a_hat + p.se_a),
        );
        let _ = writeln!(
            s,
            r#"<circle cx="{x:.2}" cy="{y:.2}" r="3" fill="steelblue"><title>lambda={}</title></circle>"#,
            p.lambda
        );
    }
    s.push_str("</svg>\n");
    s
}
