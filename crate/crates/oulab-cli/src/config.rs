//! Run-config schema. The TOML surface is normative: block names, field
//! names, units and defaults are documented in the README; unknown keys are
//! rejected, and every defaulted value is echoed into the run manifest.

use oulab::coeffs::{CoefficientProcessSpec, DiffusionModel, PerturbationModel};
use oulab::flows::H0Flow;
use oulab::linalg::{PsdMatrix, SquareMatrix};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub flow: FlowConfig,
    pub perturbation: PerturbationConfig,
    #[serde(default)]
    pub diffusion: DiffusionConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub estimation: EstimationConfig,
    #[serde(default)]
    pub certification: CertificationConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    /// Limit matrix `A_inf` (rows of equal length).
    pub a_inf: Vec<Vec<f64>>,
    /// Transient direction `M`; normalized to unit spectral norm on load.
    #[serde(default)]
    pub m: Option<Vec<Vec<f64>>>,
    /// Transient amplitude `a >= 0`.
    #[serde(default)]
    pub a: f64,
    /// Transient decay rate `b > 0`.
    #[serde(default = "one")]
    pub b: f64,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationConfig {
    /// One of `entrywise-ou`, `piecewise-constant-jump`, `frozen-gaussian`.
    pub kind: String,
    /// Entry scale: OU volatility, jump entry std, or frozen entry std.
    pub sigma: f64,
    /// Mean-reversion rate (entrywise-ou only).
    #[serde(default = "one")]
    pub theta: f64,
    /// Jump rate (piecewise-constant-jump only).
    #[serde(default = "one")]
    pub lambda: f64,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionConfig {
    /// `constant-psd` or `drift-coupled`.
    #[serde(default = "default_diffusion_kind")]
    pub kind: String,
    /// Constant PSD diffusion matrix (defaults to the identity).
    #[serde(default)]
    pub b0: Option<Vec<Vec<f64>>>,
    #[serde(default = "one")]
    pub beta: f64,
    #[serde(default)]
    pub gamma: f64,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            kind: default_diffusion_kind(),
            b0: None,
            beta: 1.0,
            gamma: 0.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Fluctuation parameter in [0, 1].
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Sweep values used by the `sweep` subcommand.
    #[serde(default)]
    pub epsilon_sweep: Vec<f64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            epsilon: default_epsilon(),
            epsilon_sweep: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_num_traj")]
    pub num_traj: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// `euler-maruyama` or `solution-formula`.
    #[serde(default = "default_method")]
    pub method: String,
    /// Initial state; zero vector when omitted.
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            dt: default_dt(),
            horizon: default_horizon(),
            num_traj: default_num_traj(),
            seed: default_seed(),
            method: default_method(),
            x0: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct EstimationConfig {
    /// Moment orders for the constants table and the certificates.
    #[serde(default = "default_n_list")]
    pub n_list: Vec<u32>,
    #[serde(default = "default_est_samples")]
    pub samples: usize,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        Self {
            n_list: default_n_list(),
            samples: default_est_samples(),
            grid_points: default_grid_points(),
            horizon: default_horizon(),
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct CertificationConfig {
    /// Which certificates to run; see README for the vocabulary.
    #[serde(default = "default_certificates")]
    pub certificates: Vec<String>,
    #[serde(default = "default_nu")]
    pub nu: f64,
    #[serde(default)]
    pub s: f64,
    #[serde(default = "default_cert_samples")]
    pub samples: usize,
    /// Horizon for the averaged-flow / mean-log bounds.
    #[serde(default = "default_cert_t")]
    pub t: f64,
    /// Increasing horizons for the event surrogates.
    #[serde(default = "default_t_list")]
    pub t_list: Vec<f64>,
    /// Grid points placed inside [T_n, T_n^eps].
    #[serde(default = "default_window_points")]
    pub window_points: usize,
    /// Horizons for the raw moment bound.
    #[serde(default = "default_lemma_grid")]
    pub lemma_t_grid: Vec<f64>,
    /// Fluctuation parameters for the coupled certificates.
    #[serde(default = "default_eps_list")]
    pub eps_list: Vec<f64>,
    /// Relaxation knob gating the event bounds; `4a/(b c0)` when omitted.
    #[serde(default)]
    pub h: Option<f64>,
    /// Coupled-pair starting points (contraction bound).
    #[serde(default)]
    pub x1: Option<Vec<f64>>,
    #[serde(default)]
    pub x2: Option<Vec<f64>>,
    /// Step for the state-level certificates.
    #[serde(default = "default_contraction_dt")]
    pub dt: f64,
}

impl Default for CertificationConfig {
    fn default() -> Self {
        Self {
            certificates: default_certificates(),
            nu: default_nu(),
            s: 0.0,
            samples: default_cert_samples(),
            t: default_cert_t(),
            t_list: default_t_list(),
            window_points: default_window_points(),
            lemma_t_grid: default_lemma_grid(),
            eps_list: default_eps_list(),
            h: None,
            x1: None,
            x2: None,
            dt: default_contraction_dt(),
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_out_dir")]
    pub dir: String,
    #[serde(default)]
    pub svg: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: default_out_dir(),
            svg: false,
        }
    }
}

fn one() -> f64 {
    1.0
}
fn default_diffusion_kind() -> String {
    "constant-psd".into()
}
fn default_epsilon() -> f64 {
    0.05
}
fn default_dt() -> f64 {
    1e-3
}
fn default_horizon() -> f64 {
    10.0
}
fn default_num_traj() -> usize {
    1000
}
fn default_seed() -> u64 {
    42
}
fn default_method() -> String {
    "euler-maruyama".into()
}
fn default_n_list() -> Vec<u32> {
    vec![1, 2, 4]
}
fn default_est_samples() -> usize {
    2000
}
fn default_grid_points() -> usize {
    32
}
fn default_certificates() -> Vec<String> {
    vec![
        "averaged-flow".into(),
        "mean-log".into(),
        "event-probability".into(),
        "moment-window".into(),
        "lemma".into(),
        "contraction".into(),
    ]
}
fn default_nu() -> f64 {
    0.5
}
fn default_cert_samples() -> usize {
    2000
}
fn default_cert_t() -> f64 {
    4.0
}
fn default_t_list() -> Vec<f64> {
    vec![2.0, 4.0, 8.0]
}
fn default_window_points() -> usize {
    5
}
fn default_lemma_grid() -> Vec<f64> {
    vec![0.5, 1.0, 2.0]
}
fn default_eps_list() -> Vec<f64> {
    vec![0.1, 0.01, 0.001]
}
fn default_contraction_dt() -> f64 {
    0.01
}
fn default_out_dir() -> String {
    "out".into()
}

/// Configuration or schema failure (maps to exit code 2).
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn matrix_from(rows: &[Vec<f64>], what: &str) -> Result<SquareMatrix, ConfigError> {
    let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
    SquareMatrix::from_nested(&refs).map_err(|e| ConfigError(format!("{what}: {e}")))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn flow(&self) -> Result<H0Flow, ConfigError> {
        let a_inf = matrix_from(&self.flow.a_inf, "flow.a_inf")?;
        let dim = a_inf.dim();
        let m = match &self.flow.m {
            Some(rows) => matrix_from(rows, "flow.m")?,
            None => SquareMatrix::zeros(dim),
        };
        H0Flow::new(a_inf, m, self.flow.a, self.flow.b)
            .map_err(|e| ConfigError(format!("flow: {e}")))
    }

    pub fn perturbation(&self) -> Result<PerturbationModel, ConfigError> {
        let p = &self.perturbation;
        let model = match p.kind.as_str() {
            "entrywise-ou" => PerturbationModel::EntrywiseOu {
                theta: p.theta,
                sigma: p.sigma,
            },
            "piecewise-constant-jump" => PerturbationModel::PiecewiseConstantJump {
                lambda: p.lambda,
                sigma_j: p.sigma,
            },
            "frozen-gaussian" => PerturbationModel::FrozenGaussian { sigma_f: p.sigma },
            other => return Err(ConfigError(format!("unknown perturbation kind `{other}`"))),
        };
        model.validate().map_err(|e| ConfigError(e.to_string()))?;
        Ok(model)
    }

    pub fn diffusion(&self, dim: usize) -> Result<DiffusionModel, ConfigError> {
        let d = &self.diffusion;
        let model = match d.kind.as_str() {
            "constant-psd" => {
                let b0 = match &d.b0 {
                    Some(rows) => {
                        let m = matrix_from(rows, "diffusion.b0")?;
                        PsdMatrix::new(m).map_err(|e| ConfigError(format!("diffusion.b0: {e}")))?
                    }
                    None => PsdMatrix::identity(dim),
                };
                if b0.dim() != dim {
                    return Err(ConfigError("diffusion.b0 dimension mismatch".into()));
                }
                DiffusionModel::ConstantPsd { b0 }
            }
            "drift-coupled" => DiffusionModel::DriftCoupled {
                beta: d.beta,
                gamma: d.gamma,
            },
            other => return Err(ConfigError(format!("unknown diffusion kind `{other}`"))),
        };
        model.validate().map_err(|e| ConfigError(e.to_string()))?;
        Ok(model)
    }

    pub fn spec(&self, epsilon: f64) -> Result<CoefficientProcessSpec, ConfigError> {
        let flow = self.flow()?;
        let dim = {
            use oulab::flows::MatrixFlow;
            flow.dim()
        };
        CoefficientProcessSpec::new(flow, self.perturbation()?, self.diffusion(dim)?, epsilon)
            .map_err(|e| ConfigError(e.to_string()))
    }

    /// Moment orders needed by estimation: requested orders, their doubles
    /// and quadruples (window constants need `c_2n` and `c_4n`), and {2, 4}
    /// for the mean-log gate.
    pub fn estimation_orders(&self) -> Vec<u32> {
        let mut orders: Vec<u32> = self
            .estimation
            .n_list
            .iter()
            .flat_map(|&n| [n, 2 * n, 4 * n])
            .chain([2u32, 4])
            .collect();
        orders.sort_unstable();
        orders.dedup();
        orders
    }
}
