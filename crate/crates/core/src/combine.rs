//! The estimated switching rule and the identified values of every regime
//! class.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bridge::{Bridges, BridgesAt};
use crate::data::{Dataset, Observation};
use crate::error::{Error, Result};
use crate::regime::{Regime, RegimeAt, Switch};
use crate::stats::{sample_sd, Estimate};

/// Kernel weights below this count as underflow.
pub const UNDERFLOW: f64 = 1e-300;

fn covariate_sds(data: &Dataset) -> Result<[f64; 2]> {
    if data.len() < 2 {
        return Err(Error::InsufficientData("bandwidth needs at least two rows".into()));
    }
    // A constant column has SD 0 even when the mean rounds.
    let sd = |k: usize| {
        let col: Vec<f64> = data.rows.iter().map(|o| o.x[k]).collect();
        if col.iter().all(|&v| v == col[0]) {
            0.0
        } else {
            sample_sd(&col)
        }
    };
    Ok([sd(0), sd(1)])
}

/// 1.06 * sigma * n^(-1/5) with sigma the mean of the per-coordinate sample
/// standard deviations of X.
pub fn scott_bandwidth(data: &Dataset) -> Result<f64> {
    let sds = covariate_sds(data)?;
    let sigma = 0.5 * (sds[0] + sds[1]);
    if !(sigma > 0.0) {
        return Err(Error::ZeroVariance);
    }
    Ok(1.06 * sigma * (data.len() as f64).powf(-0.2))
}

/// The rule of thumb applied to each coordinate separately.
pub fn scott_bandwidth_per_coordinate(data: &Dataset) -> Result<[f64; 2]> {
    let sds = covariate_sds(data)?;
    if !(sds[0] > 0.0 && sds[1] > 0.0) {
        return Err(Error::ZeroVariance);
    }
    let f = 1.06 * (data.len() as f64).powf(-0.2);
    Ok([f * sds[0], f * sds[1]])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Bandwidth {
    /// K(|x - X_i| / gamma)
    Scalar { gamma: f64 },
    /// Each coordinate divided by its own bandwidth before the norm.
    PerCoordinate { gamma: [f64; 2] },
}

impl Bandwidth {
    pub fn scott(data: &Dataset) -> Result<Bandwidth> {
        Ok(Bandwidth::Scalar { gamma: scott_bandwidth(data)? })
    }

    pub fn scott_per_coordinate(data: &Dataset) -> Result<Bandwidth> {
        Ok(Bandwidth::PerCoordinate { gamma: scott_bandwidth_per_coordinate(data)? })
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            Bandwidth::Scalar { gamma } => *gamma > 0.0 && gamma.is_finite(),
            Bandwidth::PerCoordinate { gamma } => gamma.iter().all(|g| *g > 0.0 && g.is_finite()),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Invalid(format!("bandwidth must be positive: {self:?}")))
        }
    }

    /// Squared scaled distance |x - y|^2 / gamma^2.
    #[inline]
    fn scaled_sq(&self, x: [f64; 2], y: [f64; 2]) -> f64 {
        let (d0, d1) = (x[0] - y[0], x[1] - y[1]);
        match self {
            Bandwidth::Scalar { gamma } => (d0 * d0 + d1 * d1) / (gamma * gamma),
            Bandwidth::PerCoordinate { gamma } => (d0 / gamma[0]).powi(2) + (d1 / gamma[1]).powi(2),
        }
    }
}

/// A value of the regressed contrast at one query point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaEstimate {
    pub value: f64,
    /// Every kernel weight underflowed and the nearest row was used alone.
    pub nearest_fallback: bool,
}

/// Contribution of training row `o` to the contrast at query `x`:
/// h(W_i, d_z(x, Z_i), x) - Y_i q(Z_i, A_i, x) 1{d_w(x, W_i) = A_i}.
#[inline]
pub fn delta_term(x: [f64; 2], o: &Observation, bridges: &Bridges, regime_z: &Regime, regime_w: &Regime) -> f64 {
    delta_term_at(o, &bridges.at(x), &regime_z.at(x), &regime_w.at(x))
}

#[inline]
fn delta_term_at(o: &Observation, b: &BridgesAt, dz: &RegimeAt, dw: &RegimeAt) -> f64 {
    let h = b.h(o.w, dz.decide(o.z, o.w));
    let q = if dw.decide(o.z, o.w) == o.a { o.y * b.q(o.z, o.a) } else { 0.0 };
    h - q
}

/// Nadaraya-Watson estimate of the branch contrast at `x` with a Gaussian
/// kernel K(u) = exp(-u^2 / 2).
pub fn estimate_delta(
    x: [f64; 2],
    data: &Dataset,
    bridges: &Bridges,
    regime_z: &Regime,
    regime_w: &Regime,
    bandwidth: &Bandwidth,
) -> Result<DeltaEstimate> {
    bandwidth.validate()?;
    if data.is_empty() {
        return Err(Error::InsufficientData("contrast regression needs at least one row".into()));
    }
    Ok(delta_unchecked(x, data, bridges, regime_z, regime_w, bandwidth))
}

fn delta_unchecked(
    x: [f64; 2],
    data: &Dataset,
    bridges: &Bridges,
    regime_z: &Regime,
    regime_w: &Regime,
    bandwidth: &Bandwidth,
) -> DeltaEstimate {
    let (b, dz, dw) = (bridges.at(x), regime_z.at(x), regime_w.at(x));
    let mut num = 0.0;
    let mut den = 0.0;
    let mut underflow = true;
    let mut nearest = (f64::INFINITY, 0);
    for (i, o) in data.rows.iter().enumerate() {
        let d2 = bandwidth.scaled_sq(x, o.x);
        if d2 < nearest.0 {
            nearest = (d2, i);
        }
        let k = (-0.5 * d2).exp();
        if k >= UNDERFLOW {
            underflow = false;
        }
        if k > 0.0 {
            num += k * delta_term_at(o, &b, &dz, &dw);
            den += k;
        }
    }
    if underflow {
        let o = &data.rows[nearest.1];
        DeltaEstimate { value: delta_term_at(o, &b, &dz, &dw), nearest_fallback: true }
    } else {
        DeltaEstimate { value: num / den, nearest_fallback: false }
    }
}

/// pi-hat(x) = 1{delta-hat(x) >= 0}, recomputed at every query.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PiEstimator {
    pub data: Arc<Dataset>,
    pub bridges: Arc<Bridges>,
    pub regime_z: Regime,
    pub regime_w: Regime,
    pub bandwidth: Bandwidth,
    pub kernel: String,
}

impl PiEstimator {
    pub fn delta(&self, x: [f64; 2]) -> DeltaEstimate {
        delta_unchecked(x, &self.data, &self.bridges, &self.regime_z, &self.regime_w, &self.bandwidth)
    }

    /// `true` selects the Z-side regime.
    pub fn pi(&self, x: [f64; 2]) -> bool {
        self.delta(x).value >= 0.0
    }
}

pub fn make_pi_hat(
    data: Arc<Dataset>,
    bridges: Arc<Bridges>,
    regime_z: &Regime,
    regime_w: &Regime,
    bandwidth: Bandwidth,
) -> Result<PiEstimator> {
    bandwidth.validate()?;
    if data.is_empty() {
        return Err(Error::InsufficientData("contrast regression needs at least one row".into()));
    }
    Ok(PiEstimator {
        data,
        bridges,
        regime_z: regime_z.clone(),
        regime_w: regime_w.clone(),
        bandwidth,
        kernel: "gaussian".into(),
    })
}

/// pi(x) d_z(x, z) + (1 - pi(x)) d_w(x, w).
pub fn combine(regime_z: Regime, regime_w: Regime, switch: Switch) -> Regime {
    Regime::combined(regime_z, regime_w, switch)
}

/// Identification integrand of `regime` at one observed row.
pub fn value_term(regime: &Regime, o: &Observation, bridges: &Bridges) -> f64 {
    match regime.uses_outcome_branch() {
        Some(true) => bridges.h(o.w, regime.decide(o.x, o.z, o.w), o.x),
        Some(false) => {
            if regime.decide(o.x, o.z, o.w) == o.a {
                o.y * bridges.q(o.z, o.a, o.x)
            } else {
                0.0
            }
        }
        None => {
            let Regime::Combined(c) = regime else { unreachable!("only combined regimes mix branches") };
            if c.switch.z_side(o.x) {
                value_term(&c.regime_z, o, bridges)
            } else {
                value_term(&c.regime_w, o, bridges)
            }
        }
    }
}

/// Sample mean (with standard error) of the identification integrand.
pub fn identified_value(regime: &Regime, data: &Dataset, bridges: &Bridges) -> Estimate {
    let terms: Vec<f64> = data.rows.par_iter().map(|o| value_term(regime, o, bridges)).collect();
    Estimate::of(&terms)
}

/// The better of two regimes by identified value; ties go to the Z side.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UnionChoice {
    pub regime: Regime,
    pub z_side: bool,
    pub value_z: Estimate,
    pub value_w: Estimate,
    pub value: f64,
}

pub fn union_select(regime_z: &Regime, regime_w: &Regime, data: &Dataset, bridges: &Bridges) -> UnionChoice {
    let value_z = identified_value(regime_z, data, bridges);
    let value_w = identified_value(regime_w, data, bridges);
    let z_side = value_z.value >= value_w.value;
    UnionChoice {
        regime: if z_side { regime_z.clone() } else { regime_w.clone() },
        z_side,
        value_z,
        value_w,
        value: value_z.value.max(value_w.value),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arm::Arm;
    use crate::config::ScenarioConfig;
    use crate::dgp::sample_training;

    #[test]
    fn scott_rule_hand_value() {
        let cfg = ScenarioConfig::builtin(1).unwrap();
        let data = sample_training(&cfg, 1000, 3);
        let sds = covariate_sds(&data).unwrap();
        let g = scott_bandwidth(&data).unwrap();
        assert!((g - 1.06 * 0.5 * (sds[0] + sds[1]) * 1000f64.powf(-0.2)).abs() < 1e-15);
        assert!((1.06 * 0.25 * 1000f64.powf(-0.2) - 0.066565).abs() < 1e-6);
    }

    #[test]
    fn zero_variance_rejected() {
        let o = Observation { x: [0.1, 0.2], a: Arm::Pos, z: 0.0, w: 0.0, y: 1.0, u: None };
        let data = Dataset::new(vec![o; 5]).unwrap();
        assert!(matches!(scott_bandwidth(&data), Err(Error::ZeroVariance)));
        assert!(scott_bandwidth(&Dataset::new(vec![o]).unwrap()).is_err());
    }

    #[test]
    fn single_row_and_fallback() {
        let cfg = ScenarioConfig::builtin(1).unwrap();
        let b = Bridges::oracle(&cfg);
        let rz = Regime::Constant { arm: Arm::Pos };
        let rw = Regime::Constant { arm: Arm::Neg };
        let o = Observation { x: [0.1, 0.2], a: Arm::Neg, z: 0.3, w: -0.4, y: 1.5, u: None };
        let data = Dataset::new(vec![o]).unwrap();
        let bw = Bandwidth::Scalar { gamma: 0.05 };
        for x in [[0.1, 0.2], [0.4, -0.1]] {
            let d = estimate_delta(x, &data, &b, &rz, &rw, &bw).unwrap();
            assert_eq!(d.value, delta_term(x, &o, &b, &rz, &rw));
            assert!(!d.nearest_fallback);
        }
        let far = estimate_delta([100.0, 0.0], &data, &b, &rz, &rw, &bw).unwrap();
        assert!(far.nearest_fallback);
        assert_eq!(far.value, delta_term([100.0, 0.0], &o, &b, &rz, &rw));
        assert!(estimate_delta([0.0, 0.0], &data, &b, &rz, &rw, &Bandwidth::Scalar { gamma: 0.0 }).is_err());
    }
}
