//! Decision rules mapping (x, z, w) to a treatment arm.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arm::Arm;
use crate::combine::PiEstimator;
use crate::config::ScenarioConfig;
use crate::data::TestRow;
use crate::dgp::{oracle_score_w, oracle_score_z, ConditionalSampler};

/// Feature names of the linear scores, in coefficient order.
pub const Z_FEATURES: [&str; 4] = ["1", "x1", "x2", "z"];
pub const W_FEATURES: [&str; 4] = ["1", "x1", "x2", "w"];

#[inline]
pub fn z_features(x: [f64; 2], z: f64) -> [f64; 4] {
    [1.0, x[0], x[1], z]
}

#[inline]
pub fn w_features(x: [f64; 2], w: f64) -> [f64; 4] {
    [1.0, x[0], x[1], w]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum Regime {
    Constant { arm: Arm },
    /// sign(beta' (1, x1, x2, z)).
    LinearZ { beta: [f64; 4] },
    /// sign(beta' (1, x1, x2, w)).
    LinearW { beta: [f64; 4] },
    OracleZ { config: Box<ScenarioConfig> },
    OracleW { config: Box<ScenarioConfig> },
    Combined(Box<CombinedRegime>),
}

/// pi(x) d_z(x, z) + (1 - pi(x)) d_w(x, w), evaluated as a selection.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CombinedRegime {
    pub regime_z: Regime,
    pub regime_w: Regime,
    pub switch: Switch,
}

/// The covariate-indexed rule choosing between the two component regimes.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Switch {
    /// pi(x) constant: `true` always follows the Z-side regime.
    Fixed { z_side: bool },
    /// pi-hat from Nadaraya-Watson regression of the branch contrast.
    Estimated(PiEstimator),
    /// pi-bar evaluated by Monte Carlo under the simulation law.
    Oracle(OraclePi),
}

impl Switch {
    /// pi(x) as a boolean: `true` selects the Z-side regime.
    pub fn z_side(&self, x: [f64; 2]) -> bool {
        match self {
            Switch::Fixed { z_side } => *z_side,
            Switch::Estimated(pi) => pi.pi(x),
            Switch::Oracle(pi) => pi.pi(x),
        }
    }
}

/// pi-bar(x; d_z, d_w) = 1{E[h(W, d_z(x,Z), x) | x] >= E[Y q(Z,A,x) 1{d_w(x,W)=A} | x]}
/// with both conditional expectations taken by Monte Carlo under the true
/// bridges. The same base draws are reused at every query point.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(from = "OraclePiSpec", into = "OraclePiSpec")]
pub struct OraclePi {
    spec: OraclePiSpec,
    sampler: ConditionalSampler,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OraclePiSpec {
    pub config: ScenarioConfig,
    pub regime_z: Regime,
    pub regime_w: Regime,
    pub n_mc: usize,
    pub seed: u64,
}

impl From<OraclePiSpec> for OraclePi {
    fn from(spec: OraclePiSpec) -> Self {
        let sampler = ConditionalSampler::new(&spec.config, spec.n_mc, spec.seed);
        OraclePi { spec, sampler }
    }
}

impl From<OraclePi> for OraclePiSpec {
    fn from(o: OraclePi) -> Self {
        o.spec
    }
}

impl OraclePi {
    pub fn new(config: &ScenarioConfig, regime_z: &Regime, regime_w: &Regime, n_mc: usize, seed: u64) -> Self {
        OraclePiSpec {
            config: config.clone(),
            regime_z: regime_z.clone(),
            regime_w: regime_w.clone(),
            n_mc,
            seed,
        }
        .into()
    }

    pub fn pi(&self, x: [f64; 2]) -> bool {
        self.sampler.branches(x, &self.spec.regime_z, &self.spec.regime_w).pi_bar()
    }
}

/// A regime with the covariate fixed, so that decisions depend on the
/// proxies only. Linear and oracle scores are affine in the proxy.
#[derive(Debug, Clone, Copy)]
pub enum RegimeAt<'a> {
    Fixed(Arm),
    /// sign(intercept + slope * z)
    Z { intercept: f64, slope: f64 },
    /// sign(intercept + slope * w)
    W { intercept: f64, slope: f64 },
    General { regime: &'a Regime, x: [f64; 2] },
}

impl RegimeAt<'_> {
    #[inline]
    pub fn decide(&self, z: f64, w: f64) -> Arm {
        match *self {
            RegimeAt::Fixed(a) => a,
            RegimeAt::Z { intercept, slope } => Arm::from_score(intercept + slope * z),
            RegimeAt::W { intercept, slope } => Arm::from_score(intercept + slope * w),
            RegimeAt::General { regime, x } => regime.decide(x, z, w),
        }
    }
}

impl Regime {
    /// Specialize the decision rule to covariate `x`.
    pub fn at(&self, x: [f64; 2]) -> RegimeAt<'_> {
        match self {
            Regime::Constant { arm } => RegimeAt::Fixed(*arm),
            Regime::LinearZ { beta } => {
                RegimeAt::Z { intercept: beta[0] + beta[1] * x[0] + beta[2] * x[1], slope: beta[3] }
            }
            Regime::LinearW { beta } => {
                RegimeAt::W { intercept: beta[0] + beta[1] * x[0] + beta[2] * x[1], slope: beta[3] }
            }
            Regime::OracleZ { config } => {
                let c0 = oracle_score_z(config, x, 0.0);
                RegimeAt::Z { intercept: c0, slope: oracle_score_z(config, x, 1.0) - c0 }
            }
            Regime::OracleW { config } => {
                let c0 = oracle_score_w(config, x, 0.0);
                RegimeAt::W { intercept: c0, slope: oracle_score_w(config, x, 1.0) - c0 }
            }
            Regime::Combined(_) => RegimeAt::General { regime: self, x },
        }
    }

    pub fn oracle_z(cfg: &ScenarioConfig) -> Regime {
        Regime::OracleZ { config: Box::new(cfg.clone()) }
    }

    pub fn oracle_w(cfg: &ScenarioConfig) -> Regime {
        Regime::OracleW { config: Box::new(cfg.clone()) }
    }

    pub fn combined(regime_z: Regime, regime_w: Regime, switch: Switch) -> Regime {
        Regime::Combined(Box::new(CombinedRegime { regime_z, regime_w, switch }))
    }

    /// The arm assigned at (x, z, w); sign(0) is +1.
    pub fn decide(&self, x: [f64; 2], z: f64, w: f64) -> Arm {
        match self {
            Regime::Constant { arm } => *arm,
            Regime::LinearZ { beta } => Arm::from_score(crate::linalg::dot(beta, &z_features(x, z))),
            Regime::LinearW { beta } => Arm::from_score(crate::linalg::dot(beta, &w_features(x, w))),
            Regime::OracleZ { config } => Arm::from_score(oracle_score_z(config, x, z)),
            Regime::OracleW { config } => Arm::from_score(oracle_score_w(config, x, w)),
            Regime::Combined(c) => {
                // The switch only matters where the components disagree.
                let (az, aw) = (c.regime_z.decide(x, z, w), c.regime_w.decide(x, z, w));
                if az == aw || c.switch.z_side(x) {
                    az
                } else {
                    aw
                }
            }
        }
    }

    /// Decisions for every test row, evaluated in parallel.
    pub fn decide_rows(&self, rows: &[TestRow]) -> Vec<Arm> {
        match self {
            Regime::Combined(_) => rows.par_iter().map(|r| self.decide(r.x, r.z, r.w)).collect(),
            _ => rows.iter().map(|r| self.decide(r.x, r.z, r.w)).collect(),
        }
    }

    /// Which identification formula applies: `Some(true)` for the outcome
    /// bridge, `Some(false)` for the treatment bridge, `None` for a mixture.
    pub fn uses_outcome_branch(&self) -> Option<bool> {
        match self {
            Regime::Constant { .. } | Regime::LinearZ { .. } | Regime::OracleZ { .. } => Some(true),
            Regime::LinearW { .. } | Regime::OracleW { .. } => Some(false),
            Regime::Combined(_) => None,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Regime::Constant { arm: Arm::Pos } => "constant_pos",
            Regime::Constant { arm: Arm::Neg } => "constant_neg",
            Regime::LinearZ { .. } => "linear_z",
            Regime::LinearW { .. } => "linear_w",
            Regime::OracleZ { .. } => "oracle_z",
            Regime::OracleW { .. } => "oracle_w",
            Regime::Combined(_) => "combined",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_scores_use_sign_zero_positive() {
        let r = Regime::LinearZ { beta: [0.0; 4] };
        assert_eq!(r.decide([1.0, 2.0], 3.0, 4.0), Arm::Pos);
        let r = Regime::LinearW { beta: [1.0, 0.0, 0.0, -1.0] };
        assert_eq!(r.decide([0.0, 0.0], 100.0, 1.0), Arm::Pos);
        assert_eq!(r.decide([0.0, 0.0], 100.0, 1.5), Arm::Neg);
    }

    #[test]
    fn combined_selects_component() {
        let z = Regime::Constant { arm: Arm::Pos };
        let w = Regime::Constant { arm: Arm::Neg };
        let on = Regime::combined(z.clone(), w.clone(), Switch::Fixed { z_side: true });
        let off = Regime::combined(z, w, Switch::Fixed { z_side: false });
        assert_eq!(on.decide([0.0, 0.0], 0.0, 0.0), Arm::Pos);
        assert_eq!(off.decide([0.0, 0.0], 0.0, 0.0), Arm::Neg);
    }

    #[test]
    fn serde_round_trip() {
        let cfg = ScenarioConfig::builtin(1).unwrap();
        let r = Regime::combined(
            Regime::oracle_z(&cfg),
            Regime::LinearW { beta: [0.5, -1.0, 2.0, 0.25] },
            Switch::Fixed { z_side: false },
        );
        let s = serde_json::to_string(&r).unwrap();
        let back: Regime = serde_json::from_str(&s).unwrap();
        for x in [[0.0, 0.1], [0.7, -0.4]] {
            assert_eq!(r.decide(x, 0.3, -0.2), back.decide(x, 0.3, -0.2));
        }
    }
}
