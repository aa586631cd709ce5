//! Monte Carlo oracles for conditional expectations given X = x, and the
//! empirical value of a regime on a test set.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::AtCovariate;
use crate::arm::Arm;
use crate::config::ScenarioConfig;
use crate::data::TestSet;
use crate::error::{Error, Result};
use crate::linalg::lower_mul;
use crate::regime::Regime;
use crate::rng::{rng, Stream};
use crate::stats::Estimate;

/// The two identification branches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    /// E[h(W, d(X, Z), X) | X = x]
    Outcome,
    /// E[Y q(Z, A, X) 1{d(X, W) = A} | X = x]
    Treatment,
}

#[derive(Debug, Clone, Copy)]
struct BaseDraw {
    uniform: f64,
    /// Correlated (Z, W, U) noise, already multiplied by the Cholesky factor.
    proxy_noise: [f64; 3],
    outcome_noise: f64,
}

/// Draws of (A, Z, W, U, Y) given X = x from the training law. The standard
/// draws are made once; each query point shifts and thresholds them, so
/// queries at different x share common random numbers.
#[derive(Debug, Clone)]
pub struct ConditionalSampler {
    cfg: ScenarioConfig,
    draws: Arc<Vec<BaseDraw>>,
}

/// Branch means at one covariate value, with the paired difference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchPair {
    pub outcome: Estimate,
    pub treatment: Estimate,
    /// outcome minus treatment branch, per draw.
    pub difference: Estimate,
}

impl BranchPair {
    /// pi-bar: the Z side is preferred when its branch is at least as large.
    pub fn pi_bar(&self) -> bool {
        self.outcome.value >= self.treatment.value
    }
}

#[derive(Default)]
struct Welford {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Welford {
    #[inline]
    fn push(&mut self, v: f64) {
        self.n += 1;
        let d = v - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (v - self.mean);
    }

    fn estimate(&self) -> Estimate {
        let se = if self.n > 1 {
            (self.m2 / (self.n - 1) as f64 / self.n as f64).sqrt()
        } else {
            0.0
        };
        Estimate { value: self.mean, se }
    }
}

impl ConditionalSampler {
    pub fn new(cfg: &ScenarioConfig, n_mc: usize, seed: u64) -> Self {
        assert!(n_mc >= 1, "n_mc must be at least 1");
        let l = cfg.proxy_cholesky();
        let mut r = rng(seed, Stream::MonteCarlo);
        let draws = (0..n_mc)
            .map(|_| {
                let uniform = r.random::<f64>();
                let xi: [f64; 3] =
                    [r.sample(StandardNormal), r.sample(StandardNormal), r.sample(StandardNormal)];
                BaseDraw {
                    uniform,
                    proxy_noise: lower_mul(&l, &xi),
                    outcome_noise: cfg.outcome.sigma_y * r.sample::<f64, _>(StandardNormal),
                }
            })
            .collect();
        ConditionalSampler { cfg: cfg.clone(), draws: Arc::new(draws) }
    }

    pub fn n_mc(&self) -> usize {
        self.draws.len()
    }

    /// Both branch means at `x` for the regime pair, using the true bridges.
    pub fn branches(&self, x: [f64; 2], regime_z: &Regime, regime_w: &Regime) -> BranchPair {
        let at = AtCovariate::new(&self.cfg, x);
        let means = [at.proxy_means(0.0), at.proxy_means(1.0)];
        let (dz, dw) = (regime_z.at(x), regime_w.at(x));
        let (mut h_acc, mut q_acc, mut d_acc) = (Welford::default(), Welford::default(), Welford::default());
        for d in self.draws.iter() {
            let a = if d.uniform < at.p { Arm::Pos } else { Arm::Neg };
            let m = &means[a.treated() as usize];
            let z = m[0] + d.proxy_noise[0];
            let w = m[1] + d.proxy_noise[1];
            let u = m[2] + d.proxy_noise[2];
            let h = at.h(w, dz.decide(z, w));
            let q = if dw.decide(z, w) == a {
                let y = at.outcome_mean(a, w, u) + d.outcome_noise;
                y * at.q(z, a)
            } else {
                0.0
            };
            h_acc.push(h);
            q_acc.push(q);
            d_acc.push(h - q);
        }
        BranchPair { outcome: h_acc.estimate(), treatment: q_acc.estimate(), difference: d_acc.estimate() }
    }

    pub fn branch(&self, x: [f64; 2], branch: Branch, regime: &Regime) -> Estimate {
        let pair = self.branches(x, regime, regime);
        match branch {
            Branch::Outcome => pair.outcome,
            Branch::Treatment => pair.treatment,
        }
    }
}

/// Monte Carlo estimate of one branch's conditional expectation at X = x.
pub fn mc_conditional(
    cfg: &ScenarioConfig,
    x: [f64; 2],
    branch: Branch,
    regime: &Regime,
    n_mc: usize,
    seed: u64,
) -> Estimate {
    ConditionalSampler::new(cfg, n_mc, seed).branch(x, branch, regime)
}

/// pi-bar(x; d_z, d_w) by Monte Carlo.
pub fn oracle_pi_bar(
    cfg: &ScenarioConfig,
    x: [f64; 2],
    regime_z: &Regime,
    regime_w: &Regime,
    n_mc: usize,
    seed: u64,
) -> bool {
    ConditionalSampler::new(cfg, n_mc, seed).branches(x, regime_z, regime_w).pi_bar()
}

/// Mean of Y(d) over the test rows, with its standard error.
pub fn empirical_value(regime: &Regime, test: &TestSet) -> Result<Estimate> {
    if test.is_empty() {
        return Err(Error::InsufficientData("empirical value needs a nonempty test set".into()));
    }
    Ok(empirical_values(&regime.decide_rows(&test.rows), test))
}

/// Empirical value of precomputed decisions, one per test row.
pub fn empirical_values(decisions: &[Arm], test: &TestSet) -> Estimate {
    let ys: Vec<f64> = test.rows.iter().zip(decisions).map(|(r, &a)| r.outcome(a)).collect();
    Estimate::of(&ys)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{sample_testing, TestLaw};

    fn cfg(id: u32) -> ScenarioConfig {
        ScenarioConfig::builtin(id).unwrap()
    }

    #[test]
    fn constant_regime_outcome_branch_matches_closed_form() {
        // h(W, 1, x) is linear in W, and W | X = x is a two-component normal
        // mixture with mean mu0 + mu_a p + mu_x'x.
        let c = cfg(1);
        let x = [0.3, 0.1];
        let est = mc_conditional(&c, x, Branch::Outcome, &Regime::Constant { arm: Arm::Pos }, 100_000, 3);
        let p = c.propensity(x);
        let ew = c.proxies.w.at(p, x);
        let exact = true_h_expect(&c, x, ew);
        assert!((est.value - exact).abs() < 3.0 * est.se, "{est:?} vs {exact}");
    }

    fn true_h_expect(c: &ScenarioConfig, x: [f64; 2], ew: f64) -> f64 {
        let o = &c.outcome;
        o.b0 + c.b1(x) + c.b2_dot_x(x) + (o.b_w + o.b_a + c.b3(x)) * ew
    }

    #[test]
    fn branches_are_finite_for_oracle_pair() {
        for id in 1..=6 {
            let c = cfg(id);
            let s = ConditionalSampler::new(&c, 2_000, 1);
            let pair = s.branches([0.2, 0.4], &Regime::oracle_z(&c), &Regime::oracle_w(&c));
            assert!(pair.outcome.value.is_finite() && pair.treatment.value.is_finite());
        }
    }

    #[test]
    fn se_scales_with_root_n() {
        let c = cfg(1);
        let r = Regime::oracle_w(&c);
        let a = mc_conditional(&c, [0.25, 0.25], Branch::Treatment, &r, 20_000, 4);
        let b = mc_conditional(&c, [0.25, 0.25], Branch::Treatment, &r, 40_000, 5);
        let ratio = b.se / a.se;
        let target = std::f64::consts::FRAC_1_SQRT_2;
        assert!((ratio / target - 1.0).abs() < 0.2, "ratio {ratio}");
    }

    #[test]
    fn pi_bar_is_deterministic() {
        let c = cfg(1);
        let (z, w) = (Regime::oracle_z(&c), Regime::oracle_w(&c));
        assert_eq!(
            oracle_pi_bar(&c, [0.0, 0.0], &z, &w, 5_000, 8),
            oracle_pi_bar(&c, [0.0, 0.0], &z, &w, 5_000, 8)
        );
    }

    #[test]
    fn empirical_value_bounds_and_constants() {
        let c = cfg(1);
        let t = sample_testing(&c, 2_000, 2, TestLaw::Propensity);
        let ys_pos: Vec<f64> = t.rows.iter().map(|r| r.y_pos).collect();
        let ys_neg: Vec<f64> = t.rows.iter().map(|r| r.y_neg).collect();
        let vp = empirical_value(&Regime::Constant { arm: Arm::Pos }, &t).unwrap();
        let vn = empirical_value(&Regime::Constant { arm: Arm::Neg }, &t).unwrap();
        assert_eq!(vp, Estimate::of(&ys_pos));
        assert_eq!(vn, Estimate::of(&ys_neg));
        let m = t.len() as f64;
        let best: f64 = t.rows.iter().map(|r| r.y_pos.max(r.y_neg)).sum::<f64>() / m;
        let worst: f64 = t.rows.iter().map(|r| r.y_pos.min(r.y_neg)).sum::<f64>() / m;
        for r in [Regime::oracle_z(&c), Regime::oracle_w(&c), Regime::LinearZ { beta: [0.1, -1.0, 2.0, 0.3] }] {
            let v = empirical_value(&r, &t).unwrap().value;
            assert!(v >= worst - 1e-12 && v <= best + 1e-12);
        }
        // the optimal Z-side rule does no worse than the worse constant arm
        let vz = empirical_value(&Regime::oracle_z(&c), &t).unwrap().value;
        assert!(vz >= vp.value.min(vn.value));
        assert!(empirical_value(&Regime::Constant { arm: Arm::Pos }, &TestSet::default()).is_err());
    }
}
