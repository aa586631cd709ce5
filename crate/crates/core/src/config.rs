//! Scenario configuration: the fixed simulation parameters plus the
//! scenario-specific outcome coefficients.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::cholesky;

/// The bundled default scenario file.
pub const DEFAULT_SCENARIO_FILE: &str = include_str!("../config/scenarios.toml");

/// Mean of one of the proxies (or the latent confounder) given (A, X):
/// `intercept + treat * (1 + A) / 2 + slope' X`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProxyMean {
    pub intercept: f64,
    pub treat: f64,
    pub slope: [f64; 2],
}

impl ProxyMean {
    /// Mean with the treated share `t` in place of (1 + A) / 2.
    #[inline]
    pub fn at(&self, t: f64, x: [f64; 2]) -> f64 {
        self.intercept + self.treat * t + self.slope[0] * x[0] + self.slope[1] * x[1]
    }

    /// `intercept + slope' X`, i.e. the mean without its treatment shift.
    #[inline]
    pub fn base(&self, x: [f64; 2]) -> f64 {
        self.intercept + self.slope[0] * x[0] + self.slope[1] * x[1]
    }
}

/// Joint normal law of (Z, W, U) given (A, X).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProxyLaw {
    pub z: ProxyMean,
    pub w: ProxyMean,
    pub u: ProxyMean,
    /// Standard deviations.
    pub sigma_z: f64,
    pub sigma_w: f64,
    pub sigma_u: f64,
    /// Covariances.
    pub sigma_zw: f64,
    pub sigma_zu: f64,
    pub sigma_wu: f64,
}

impl ProxyLaw {
    pub fn cov(&self) -> [[f64; 3]; 3] {
        [
            [self.sigma_z * self.sigma_z, self.sigma_zw, self.sigma_zu],
            [self.sigma_zw, self.sigma_w * self.sigma_w, self.sigma_wu],
            [self.sigma_zu, self.sigma_wu, self.sigma_u * self.sigma_u],
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutcomeParams {
    pub b0: f64,
    pub b_a: f64,
    pub b_w: f64,
    pub omega: f64,
    pub sigma_y: f64,
}

/// Constants of the treatment bridge
/// `q(z, a, x) = 1 + exp(a t0 + a t_z z + t_a (1 + a) / 2 + a t_x' x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreatmentBridgeParams {
    pub t0: f64,
    pub t_z: f64,
    pub t_a: f64,
    pub t_x: [f64; 2],
}

/// Estimation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tuning {
    pub rho_grid: Vec<f64>,
    pub folds: usize,
    /// Penalty candidates of the treatment bridges, and of the outcome bridge
    /// unless `outcome_lambda_grid` is given.
    pub lambda_grid: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome_lambda_grid: Option<Vec<f64>>,
    #[serde(default = "default_holdout")]
    pub holdout_fraction: f64,
    /// Refit the bridges on every cross-validation training split.
    #[serde(default = "default_true")]
    pub per_fold_bridges: bool,
    /// Fixed Nadaraya-Watson bandwidth; the rule of thumb is used when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<f64>,
}

fn default_holdout() -> f64 {
    0.2
}

fn default_true() -> bool {
    true
}

/// Every constant of one simulation scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub scenario: u32,
    pub covariate_mean: [f64; 2],
    pub covariate_cov: [[f64; 2]; 2],
    pub propensity_coef: [f64; 2],
    pub proxies: ProxyLaw,
    pub outcome: OutcomeParams,
    pub treatment_bridge: TreatmentBridgeParams,
    pub tuning: Tuning,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    covariates: CovariateSection,
    propensity: PropensitySection,
    proxies: ProxyLaw,
    outcome: OutcomeSection,
    treatment_bridge: TreatmentBridgeParams,
    tuning: Tuning,
    scenarios: BTreeMap<String, ScenarioRow>,
}

#[derive(Debug, Deserialize)]
struct CovariateSection {
    mean: [f64; 2],
    cov: [[f64; 2]; 2],
}

#[derive(Debug, Deserialize)]
struct PropensitySection {
    coef: [f64; 2],
}

#[derive(Debug, Deserialize)]
struct OutcomeSection {
    b0: f64,
    omega: f64,
    sigma_y: f64,
}

#[derive(Debug, Deserialize)]
struct ScenarioRow {
    b_a: f64,
    b_w: f64,
}

/// Read a scenario file and select one scenario row.
pub fn load_scenario(path: impl AsRef<Path>, scenario_id: u32) -> Result<ScenarioConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    ScenarioConfig::from_toml_str(&text, scenario_id)
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str, scenario_id: u32) -> Result<ScenarioConfig> {
        if !(1..=6).contains(&scenario_id) {
            return Err(Error::UnknownScenario(scenario_id));
        }
        let file: ScenarioFile =
            toml::from_str(text).map_err(|e| Error::ConfigParse(e.to_string()))?;
        let row = file
            .scenarios
            .get(&scenario_id.to_string())
            .ok_or(Error::UnknownScenario(scenario_id))?;
        let cfg = ScenarioConfig {
            scenario: scenario_id,
            covariate_mean: file.covariates.mean,
            covariate_cov: file.covariates.cov,
            propensity_coef: file.propensity.coef,
            proxies: file.proxies,
            outcome: OutcomeParams {
                b0: file.outcome.b0,
                b_a: row.b_a,
                b_w: row.b_w,
                omega: file.outcome.omega,
                sigma_y: file.outcome.sigma_y,
            },
            treatment_bridge: file.treatment_bridge,
            tuning: file.tuning,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Scenario `id` from the bundled default file.
    pub fn builtin(scenario_id: u32) -> Result<ScenarioConfig> {
        Self::from_toml_str(DEFAULT_SCENARIO_FILE, scenario_id)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |v: f64| v.is_finite();
        let p = &self.proxies;
        for (name, sd) in [("sigma_z", p.sigma_z), ("sigma_w", p.sigma_w), ("sigma_u", p.sigma_u)] {
            if !(sd > 0.0 && finite(sd)) {
                return Err(Error::InvalidConfig(format!(
                    "invalid variance: {name} must be a positive standard deviation, got {sd}"
                )));
            }
        }
        if !(self.outcome.sigma_y > 0.0 && finite(self.outcome.sigma_y)) {
            return Err(Error::InvalidConfig(format!(
                "sigma_y must be positive, got {}",
                self.outcome.sigma_y
            )));
        }
        cholesky(&self.covariate_cov).ok_or(Error::NotPositiveDefinite("covariate covariance"))?;
        cholesky(&p.cov()).ok_or(Error::NotPositiveDefinite("(Z, W, U) covariance"))?;
        let t = &self.tuning;
        if t.folds < 2 {
            return Err(Error::InvalidConfig(format!("folds must be at least 2, got {}", t.folds)));
        }
        if t.rho_grid.is_empty() || t.rho_grid.iter().any(|&r| !(r > 0.0 && finite(r))) {
            return Err(Error::InvalidConfig("rho_grid must be nonempty and positive".into()));
        }
        let bad_grid = |g: &[f64]| g.is_empty() || g.iter().any(|&l| !(l >= 0.0 && finite(l)));
        if bad_grid(&t.lambda_grid) || t.outcome_lambda_grid.as_deref().is_some_and(bad_grid) {
            return Err(Error::InvalidConfig("lambda grids must be nonempty and nonnegative".into()));
        }
        if !(t.holdout_fraction > 0.0 && t.holdout_fraction < 1.0) {
            return Err(Error::InvalidConfig("holdout_fraction must lie in (0, 1)".into()));
        }
        if let Some(bw) = t.bandwidth {
            if !(bw > 0.0 && finite(bw)) {
                return Err(Error::InvalidConfig("bandwidth override must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn covariate_cholesky(&self) -> [[f64; 2]; 2] {
        cholesky(&self.covariate_cov).expect("validated at load")
    }

    pub fn proxy_cholesky(&self) -> [[f64; 3]; 3] {
        cholesky(&self.proxies.cov()).expect("validated at load")
    }

    /// P(A = 1 | X = x).
    #[inline]
    pub fn propensity(&self, x: [f64; 2]) -> f64 {
        let c = self.propensity_coef;
        1.0 / (1.0 + (c[0] * x[0] + c[1] * x[1]).exp())
    }

    /// Baseline treatment effect b1(x).
    pub fn b1(&self, x: [f64; 2]) -> f64 {
        let [x1, x2] = x;
        match self.scenario {
            1 | 2 => 0.5 + 3.0 * x1 - 5.0 * x2,
            3 => 2.3 + (x1 - 1.0).abs() - (x2 + 1.0).abs(),
            4 => 0.25 - 6.0 * x1 * x2,
            5 => 0.1 - 2.0 * x1 * x1,
            6 => -0.5 + x1.exp() - 3.0 * x2,
            _ => unreachable!("scenario validated at load"),
        }
    }

    /// The main covariate term b2(x)' x.
    pub fn b2_dot_x(&self, x: [f64; 2]) -> f64 {
        let [x1, x2] = x;
        match self.scenario {
            1 | 2 | 6 => 0.25 * x1 + 0.25 * x2,
            3..=5 => x1 * x1 + x2 * x2,
            _ => unreachable!("scenario validated at load"),
        }
    }

    /// Effect modification of the confounder path, b3(x).
    pub fn b3(&self, x: [f64; 2]) -> f64 {
        let [x1, x2] = x;
        match self.scenario {
            3 => x1.sin() - 2.0 * x2.cos(),
            5 => 4.0 * x2 * x2,
            _ => 0.0,
        }
    }
}
