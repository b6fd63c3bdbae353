//! TOML run configuration.
//!
//! ```toml
//! [model]
//! n = 1
//! m = 1
//! A = [1.5]            # row-major
//! B = [0.5]
//! W = [4.0]
//! m0 = [0.0]           # optional, default 0
//! M0 = [0.0]           # optional, default 0
//!
//! [weights]
//! N = 100
//! Q = 5.0              # scalar (times I), row-major array, or one array per stage
//! R = 0.1
//! Q_terminal = 10.0
//! theta_check = 1.0    # scalar or N+1 values
//! lambda = 0.1
//!
//! [run]
//! policy = "greedy"
//! trajectories = 1
//! seed = 42
//!
//! [dp]
//! atoms = [-2.0, 2.0]
//! probs = [0.5, 0.5]
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::model::{CostWeights, PlantModel};
use crate::queuing::{DpLimits, NoiseGrid, PolicySpec};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelBlock,
    pub weights: WeightsBlock,
    #[serde(default)]
    pub run: RunBlock,
    #[serde(default)]
    pub dp: DpBlock,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    pub n: usize,
    pub m: usize,
    #[serde(rename = "A")]
    pub a: Vec<f64>,
    #[serde(rename = "B")]
    pub b: Vec<f64>,
    #[serde(rename = "W")]
    pub w: MatrixSpec,
    #[serde(default)]
    pub m0: Option<Vec<f64>>,
    #[serde(rename = "M0", default)]
    pub m0_cov: Option<MatrixSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    /// `c I`.
    Scalar(f64),
    /// Row-major entries.
    Flat(Vec<f64>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum StageMatrices {
    Constant(MatrixSpec),
    /// One row-major matrix per stage `k = 0..=N`.
    PerStage(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum StageScalars {
    Constant(f64),
    PerStage(Vec<f64>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsBlock {
    #[serde(rename = "N")]
    pub horizon: usize,
    #[serde(rename = "Q")]
    pub q: StageMatrices,
    #[serde(rename = "R")]
    pub r: StageMatrices,
    #[serde(rename = "Q_terminal")]
    pub q_terminal: MatrixSpec,
    pub theta_check: StageScalars,
    pub lambda: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunBlock {
    pub policy: String,
    pub kbar: Option<usize>,
    pub trajectories: usize,
    pub seed: u64,
    pub workers: usize,
    pub lambda_grid: Vec<f64>,
    pub out: Option<PathBuf>,
    pub plot: bool,
    pub long_format: bool,
}

impl Default for RunBlock {
    fn default() -> Self {
        Self {
            policy: "greedy".into(),
            kbar: None,
            trajectories: 1,
            seed: 42,
            workers: 1,
            lambda_grid: Vec::new(),
            out: None,
            plot: false,
            long_format: false,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DpBlock {
    /// Defaults to the two-point law `±sqrt(W)`.
    pub atoms: Option<Vec<f64>>,
    pub probs: Option<Vec<f64>>,
    /// Horizon used for oracle checks when the configured one is too long.
    pub horizon: usize,
    pub state_cap: u64,
}

impl Default for DpBlock {
    fn default() -> Self {
        Self {
            atoms: None,
            probs: None,
            horizon: 4,
            state_cap: DpLimits::default().state_cap,
        }
    }
}

/// Configuration problems, each naming the file, line or field at fault.
#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("bad override `{0}` (expected key.path=value)")]
    Override(String),
    #[error("field {field}: {message}")]
    Field { field: String, message: String },
}

fn field(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Field {
        field: field.into(),
        message: message.into(),
    }
}

impl RunConfig {
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, overrides).map_err(|e| match e {
            ConfigError::Parse { message, .. } => ConfigError::Parse {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })
    }

    pub fn parse(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let parse_err = |e: toml::de::Error| ConfigError::Parse {
            path: PathBuf::from("<config>"),
            message: e.to_string(),
        };
        if overrides.is_empty() {
            return toml::from_str(text).map_err(parse_err);
        }
        let mut table: toml::Table = toml::from_str(text).map_err(parse_err)?;
        for ov in overrides {
            apply_override(&mut table, ov)?;
        }
        toml::Value::Table(table).try_into().map_err(parse_err)
    }

    pub fn plant(&self) -> Result<PlantModel, ConfigError> {
        let b = &self.model;
        let (n, m) = (b.n, b.m);
        if n == 0 || m == 0 {
            return Err(field("model.n/model.m", "dimensions must be positive"));
        }
        let a = row_major("model.A", &b.a, n, n)?;
        let bm = row_major("model.B", &b.b, n, m)?;
        let w = matrix_spec("model.W", &b.w, n)?;
        let m0 = match &b.m0 {
            None => DVector::zeros(n),
            Some(v) if v.len() == n => DVector::from_row_slice(v),
            Some(v) => {
                return Err(field(
                    "model.m0",
                    format!("expected {n} entries, got {}", v.len()),
                ))
            }
        };
        let m0_cov = match &b.m0_cov {
            None => DMatrix::zeros(n, n),
            Some(spec) => matrix_spec("model.M0", spec, n)?,
        };
        PlantModel::new(a, bm, w, m0, m0_cov).map_err(|e| field("model", e.to_string()))
    }

    pub fn weights(&self) -> Result<CostWeights, ConfigError> {
        let w = &self.weights;
        let (n, m, horizon) = (self.model.n, self.model.m, w.horizon);
        let mut q = stage_matrices("weights.Q", &w.q, n, horizon)?;
        q.push(matrix_spec("weights.Q_terminal", &w.q_terminal, n)?);
        let r = stage_matrices("weights.R", &w.r, m, horizon)?;
        let theta = match &w.theta_check {
            StageScalars::Constant(t) => vec![*t; horizon + 1],
            StageScalars::PerStage(v) if v.len() == horizon + 1 => v.clone(),
            StageScalars::PerStage(v) => {
                return Err(field(
                    "weights.theta_check",
                    format!("expected {} entries, got {}", horizon + 1, v.len()),
                ))
            }
        };
        CostWeights::new(horizon, q, r, theta, w.lambda).map_err(|e| field("weights", e.to_string()))
    }

    pub fn policy(&self) -> Result<PolicySpec, ConfigError> {
        parse_policy(&self.run.policy, self.run.kbar)
    }

    /// Noise grid for the dp oracle.
    pub fn noise_grid(&self, model: &PlantModel) -> Result<NoiseGrid, ConfigError> {
        match (&self.dp.atoms, &self.dp.probs) {
            (None, None) => Ok(NoiseGrid::two_atom(model.noise_cov()[(0, 0)])),
            (Some(a), Some(p)) => {
                NoiseGrid::new(a.clone(), p.clone()).map_err(|e| field("dp", e.to_string()))
            }
            (Some(a), None) => {
                let p = vec![1.0 / a.len() as f64; a.len()];
                NoiseGrid::new(a.clone(), p).map_err(|e| field("dp.atoms", e.to_string()))
            }
            (None, Some(_)) => Err(field("dp.probs", "given without dp.atoms")),
        }
    }

    pub fn dp_limits(&self) -> DpLimits {
        DpLimits {
            state_cap: self.dp.state_cap,
            ..DpLimits::default()
        }
    }
}

/// Accepts `greedy-bounded` with the bound taken from `run.kbar`.
pub fn parse_policy(s: &str, kbar: Option<usize>) -> Result<PolicySpec, ConfigError> {
    if s.trim() == "greedy-bounded" {
        return kbar
            .map(PolicySpec::GreedyBounded)
            .ok_or_else(|| field("run.kbar", "required for policy greedy-bounded"));
    }
    s.parse()
        .map_err(|e: crate::error::Error| field("policy", e.to_string()))
}

fn apply_override(table: &mut toml::Table, ov: &str) -> Result<(), ConfigError> {
    let (key, raw) = ov
        .split_once('=')
        .ok_or_else(|| ConfigError::Override(ov.to_string()))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(ConfigError::Override(ov.to_string()));
    }
    // parse the value as TOML, falling back to a bare string
    let value = format!("v = {}", raw.trim())
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let (last, parents) = path.split_last().expect("nonempty path");
    let mut cursor = table;
    for p in parents {
        let entry = cursor
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cursor = entry
            .as_table_mut()
            .ok_or_else(|| ConfigError::Override(format!("{ov} ({p} is not a table)")))?;
    }
    cursor.insert(last.to_string(), value);
    Ok(())
}

fn row_major(name: &str, v: &[f64], rows: usize, cols: usize) -> Result<DMatrix<f64>, ConfigError> {
    if v.len() != rows * cols {
        return Err(field(
            name,
            format!(
                "expected {} row-major entries ({rows}x{cols}), got {}",
                rows * cols,
                v.len()
            ),
        ));
    }
    Ok(DMatrix::from_row_slice(rows, cols, v))
}

fn matrix_spec(name: &str, spec: &MatrixSpec, dim: usize) -> Result<DMatrix<f64>, ConfigError> {
    match spec {
        MatrixSpec::Scalar(c) => Ok(DMatrix::identity(dim, dim) * *c),
        MatrixSpec::Flat(v) => row_major(name, v, dim, dim),
    }
}

fn stage_matrices(
    name: &str,
    spec: &StageMatrices,
    dim: usize,
    horizon: usize,
) -> Result<Vec<DMatrix<f64>>, ConfigError> {
    match spec {
        StageMatrices::Constant(m) => Ok(vec![matrix_spec(name, m, dim)?; horizon + 1]),
        StageMatrices::PerStage(seq) => {
            if seq.len() != horizon + 1 {
                return Err(field(
                    name,
                    format!("expected {} stages, got {}", horizon + 1, seq.len()),
                ));
            }
            seq.iter()
                .enumerate()
                .map(|(k, v)| row_major(&format!("{name}[{k}]"), v, dim, dim))
                .collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: &str = include_str!("../../configs/example.toml");

    #[test]
    fn bundled_example_parses() {
        let cfg = RunConfig::parse(EXAMPLE, &[]).unwrap();
        let model = cfg.plant().unwrap();
        let weights = cfg.weights().unwrap();
        assert_eq!(model.a()[(0, 0)], 1.5);
        assert_eq!(model.b()[(0, 0)], 0.5);
        assert_eq!(model.noise_cov()[(0, 0)], 4.0);
        assert_eq!(weights.horizon(), 100);
        assert_eq!(weights.q(3)[(0, 0)], 5.0);
        assert_eq!(weights.r(3)[(0, 0)], 0.1);
        assert_eq!(weights.q_terminal()[(0, 0)], 10.0);
        assert_eq!(weights.theta_check()[7], 1.0);
        assert_eq!(cfg.noise_grid(&model).unwrap().atoms(), &[-2.0, 2.0]);
    }

    #[test]
    fn overrides_apply() {
        let cfg = RunConfig::parse(
            EXAMPLE,
            &[
                "weights.lambda=0.01".into(),
                "run.policy=zero-wait".into(),
                "weights.N=4".into(),
                "model.W=[9.0]".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.weights.lambda, 0.01);
        assert_eq!(cfg.policy().unwrap(), PolicySpec::ZeroWait);
        assert_eq!(cfg.weights().unwrap().horizon(), 4);
        assert_eq!(cfg.plant().unwrap().noise_cov()[(0, 0)], 9.0);
        assert!(RunConfig::parse(EXAMPLE, &["nonsense".into()]).is_err());
    }

    #[test]
    fn errors_name_the_field() {
        let err = RunConfig::parse(EXAMPLE, &["model.A=[1.0, 2.0]".into()])
            .unwrap()
            .plant()
            .unwrap_err();
        assert!(err.to_string().contains("model.A"), "{err}");
        let err = RunConfig::parse("[model]\nn = 1\nm = 1\nA = [1.0]\n", &[]).unwrap_err();
        assert!(err.to_string().contains("line"), "{err}");
    }

    #[test]
    fn per_stage_weights() {
        let text = EXAMPLE
            .replace("N = 100", "N = 2")
            .replace("Q = 5.0", "Q = [[1.0], [2.0], [3.0]]");
        let w = RunConfig::parse(&text, &[]).unwrap().weights().unwrap();
        assert_eq!(w.q(1)[(0, 0)], 2.0);
        assert_eq!(w.q_terminal()[(0, 0)], 10.0);
    }

    #[test]
    fn bounded_policy_from_kbar() {
        assert_eq!(
            parse_policy("greedy-bounded", Some(3)).unwrap(),
            PolicySpec::GreedyBounded(3)
        );
        assert!(parse_policy("greedy-bounded", None).is_err());
    }
}
