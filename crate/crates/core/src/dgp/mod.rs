//! The simulation law: training and test samplers, the true confounding
//! bridges, and the closed-form oracle regimes.

mod mc;

pub use mc::{
    empirical_value, empirical_values, mc_conditional, oracle_pi_bar, Branch, BranchPair,
    ConditionalSampler,
};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::arm::Arm;
use crate::config::ScenarioConfig;
use crate::data::{Dataset, Observation, TestRow, TestSet};
use crate::linalg::lower_mul;
use crate::rng::{rng, SimRng, Stream};

/// Law used to draw (Z, W, U) in a test set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestLaw {
    /// (Z, W, U) | X normal with the propensity in place of (1 + A) / 2.
    #[default]
    Propensity,
    /// (Z, W, U) drawn exactly as in training: A is drawn and then discarded.
    Training,
}

/// Quantities of the simulation law that depend only on the covariates.
#[derive(Debug, Clone, Copy)]
pub(crate) struct AtCovariate<'a> {
    cfg: &'a ScenarioConfig,
    pub x: [f64; 2],
    pub p: f64,
    b1: f64,
    b2x: f64,
    b3: f64,
    w_base: f64,
    u_base: f64,
    wu_slope: f64,
    q_lin: f64,
}

impl<'a> AtCovariate<'a> {
    pub fn new(cfg: &'a ScenarioConfig, x: [f64; 2]) -> Self {
        let pr = &cfg.proxies;
        let tb = &cfg.treatment_bridge;
        AtCovariate {
            cfg,
            x,
            p: cfg.propensity(x),
            b1: cfg.b1(x),
            b2x: cfg.b2_dot_x(x),
            b3: cfg.b3(x),
            w_base: pr.w.base(x),
            u_base: pr.u.base(x),
            wu_slope: pr.sigma_wu / (pr.sigma_u * pr.sigma_u),
            q_lin: tb.t0 + tb.t_x[0] * x[0] + tb.t_x[1] * x[1],
        }
    }

    /// Means of (Z, W, U) with treated share `t`.
    #[inline]
    pub fn proxy_means(&self, t: f64) -> [f64; 3] {
        let pr = &self.cfg.proxies;
        [pr.z.at(t, self.x), pr.w.at(t, self.x), pr.u.at(t, self.x)]
    }

    /// E[Y | X, A, Z, W, U].
    #[inline]
    pub fn outcome_mean(&self, a: Arm, w: f64, u: f64) -> f64 {
        let o = &self.cfg.outcome;
        let t = a.treated();
        let w_given_u = self.w_base + self.wu_slope * (u - self.u_base);
        o.b0 + self.b1 * t
            + self.b2x
            + (o.b_w + o.b_a * t + self.b3 * a.sign() - o.omega) * w_given_u
            + o.omega * w
    }

    #[inline]
    pub fn h(&self, w: f64, a: Arm) -> f64 {
        let o = &self.cfg.outcome;
        let t = a.treated();
        o.b0 + self.b1 * t + self.b2x + (o.b_w + o.b_a * t + self.b3 * a.sign()) * w
    }

    #[inline]
    pub fn q(&self, z: f64, a: Arm) -> f64 {
        let tb = &self.cfg.treatment_bridge;
        1.0 + (a.sign() * (self.q_lin + tb.t_z * z) + tb.t_a * a.treated()).exp()
    }
}

fn normal(r: &mut SimRng) -> f64 {
    r.sample(StandardNormal)
}

fn draw_covariates(cfg: &ScenarioConfig, lx: &[[f64; 2]; 2], r: &mut SimRng) -> [f64; 2] {
    let e = lower_mul(lx, &[normal(r), normal(r)]);
    [cfg.covariate_mean[0] + e[0], cfg.covariate_mean[1] + e[1]]
}

fn draw_proxies(means: [f64; 3], l: &[[f64; 3]; 3], r: &mut SimRng) -> [f64; 3] {
    let e = lower_mul(l, &[normal(r), normal(r), normal(r)]);
    [means[0] + e[0], means[1] + e[1], means[2] + e[2]]
}

/// Draw `n` observations from the training law. The latent U is retained.
pub fn sample_training(cfg: &ScenarioConfig, n: usize, seed: u64) -> Dataset {
    let lx = cfg.covariate_cholesky();
    let l = cfg.proxy_cholesky();
    let mut r = rng(seed, Stream::Training);
    let rows = (0..n)
        .map(|_| {
            let x = draw_covariates(cfg, &lx, &mut r);
            let at = AtCovariate::new(cfg, x);
            let a = if r.random::<f64>() < at.p { Arm::Pos } else { Arm::Neg };
            let [z, w, u] = draw_proxies(at.proxy_means(a.treated()), &l, &mut r);
            let y = at.outcome_mean(a, w, u) + cfg.outcome.sigma_y * normal(&mut r);
            Observation { x, a, z, w, y, u: Some(u) }
        })
        .collect();
    Dataset { rows }
}

/// Draw `m` rows with both potential outcomes. One noise draw per row is
/// shared by Y(1) and Y(-1).
pub fn sample_testing(cfg: &ScenarioConfig, m: usize, seed: u64, law: TestLaw) -> TestSet {
    let lx = cfg.covariate_cholesky();
    let l = cfg.proxy_cholesky();
    let mut r = rng(seed, Stream::Testing);
    let rows = (0..m)
        .map(|_| {
            let x = draw_covariates(cfg, &lx, &mut r);
            let at = AtCovariate::new(cfg, x);
            let t = match law {
                TestLaw::Propensity => at.p,
                TestLaw::Training => {
                    if r.random::<f64>() < at.p {
                        1.0
                    } else {
                        0.0
                    }
                }
            };
            let [z, w, u] = draw_proxies(at.proxy_means(t), &l, &mut r);
            let eps = cfg.outcome.sigma_y * normal(&mut r);
            TestRow {
                x,
                z,
                w,
                u,
                y_pos: at.outcome_mean(Arm::Pos, w, u) + eps,
                y_neg: at.outcome_mean(Arm::Neg, w, u) + eps,
            }
        })
        .collect();
    TestSet { rows }
}

/// The outcome confounding bridge of the simulation law,
/// `b0 + b1(x)(1+a)/2 + b2(x)'x + (b_w + b_a (1+a)/2 + b3(x) a) w`.
pub fn true_h(cfg: &ScenarioConfig, w: f64, a: Arm, x: [f64; 2]) -> f64 {
    AtCovariate::new(cfg, x).h(w, a)
}

/// The treatment confounding bridge,
/// `1 + exp(a t0 + a t_z z + t_a (1+a)/2 + a t_x' x)`.
pub fn true_q(cfg: &ScenarioConfig, z: f64, a: Arm, x: [f64; 2]) -> f64 {
    AtCovariate::new(cfg, x).q(z, a)
}

/// E[h(W,1,X) - h(W,-1,X) | X = x, Z = z] in closed form; its sign is the
/// optimal Z-side regime.
pub fn oracle_score_z(cfg: &ScenarioConfig, x: [f64; 2], z: f64) -> f64 {
    let pr = &cfg.proxies;
    let p = cfg.propensity(x);
    let u_shift = pr.u.treat * p + pr.sigma_zu / (pr.sigma_z * pr.sigma_z) * (z - pr.z.at(p, x));
    contrast_given_u_shift(cfg, x, u_shift)
}

/// E[Y q(Z,1,X) 1{A=1} - Y q(Z,-1,X) 1{A=-1} | X = x, W = w] in closed form.
pub fn oracle_score_w(cfg: &ScenarioConfig, x: [f64; 2], w: f64) -> f64 {
    let pr = &cfg.proxies;
    let p = cfg.propensity(x);
    let u_shift = pr.u.treat * p + pr.sigma_wu / (pr.sigma_w * pr.sigma_w) * (w - pr.w.at(p, x));
    contrast_given_u_shift(cfg, x, u_shift)
}

// b1(x) + (b_a + 2 b3(x)) (mu0 + mu_x'x + sigma_wu / sigma_u^2 * (E[U|..] - kappa0 - kappa_x'x))
fn contrast_given_u_shift(cfg: &ScenarioConfig, x: [f64; 2], u_shift: f64) -> f64 {
    let pr = &cfg.proxies;
    let o = &cfg.outcome;
    let w_given_u = pr.w.base(x) + pr.sigma_wu / (pr.sigma_u * pr.sigma_u) * u_shift;
    cfg.b1(x) + (o.b_a + 2.0 * cfg.b3(x)) * w_given_u
}

pub fn oracle_dz_star(cfg: &ScenarioConfig, x: [f64; 2], z: f64) -> Arm {
    Arm::from_score(oracle_score_z(cfg, x, z))
}

pub fn oracle_dw_star(cfg: &ScenarioConfig, x: [f64; 2], w: f64) -> Arm {
    Arm::from_score(oracle_score_w(cfg, x, w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{mean, Estimate};

    fn cfg(id: u32) -> ScenarioConfig {
        ScenarioConfig::builtin(id).unwrap()
    }

    #[test]
    fn true_h_hand_values() {
        let c = cfg(1);
        assert_eq!(true_h(&c, 0.0, Arm::Neg, [0.0, 0.0]), 2.0);
        assert!((true_h(&c, 1.0, Arm::Pos, [0.0, 0.0]) - 10.75).abs() < 1e-12);
    }

    #[test]
    fn true_h_contrast() {
        for id in 1..=6 {
            let c = cfg(id);
            for &(w, x) in &[(0.3, [0.1, 0.4]), (-1.7, [0.6, -0.2]), (2.2, [0.0, 0.9])] {
                let d = true_h(&c, w, Arm::Pos, x) - true_h(&c, w, Arm::Neg, x);
                let expect = c.b1(x) + (c.outcome.b_a + 2.0 * c.b3(x)) * w;
                assert!((d - expect).abs() < 1e-12, "scenario {id}");
            }
        }
    }

    #[test]
    fn true_q_hand_values() {
        let c = cfg(1);
        let q_pos = true_q(&c, 0.0, Arm::Pos, [0.0, 0.0]);
        let q_neg = true_q(&c, 0.0, Arm::Neg, [0.0, 0.0]);
        assert!((q_pos - (1.0 + 0.125f64.exp())).abs() < 1e-14);
        assert!((q_pos - 2.13315).abs() < 1e-5);
        assert!((q_neg - (1.0 + (-0.25f64).exp())).abs() < 1e-14);
        assert!((q_neg - 1.77880).abs() < 1e-5);
        for z in [-20.0, -3.0, 0.0, 4.0, 20.0] {
            assert!(true_q(&c, z, Arm::Pos, [1.0, -1.0]) > 1.0);
            assert!(true_q(&c, z, Arm::Neg, [1.0, -1.0]) > 1.0);
        }
    }

    #[test]
    fn oracle_z_hand_values() {
        let c = cfg(1);
        assert!((oracle_score_z(&c, [0.0, 0.0], 0.0) - 0.5546875).abs() < 1e-14);
        assert!((oracle_score_z(&c, [0.0, 0.0], 1.0) - 0.6171875).abs() < 1e-14);
        assert!(oracle_score_z(&c, [0.0, 0.0], -8.875).abs() < 1e-14);
        assert_eq!(oracle_dz_star(&c, [0.0, 0.0], 0.0), Arm::Pos);
        assert_eq!(oracle_dz_star(&c, [0.0, 0.0], -10.0), Arm::Neg);
        // the zero crossing is assigned +1
        assert_eq!(oracle_dz_star(&c, [0.0, 0.0], -8.875), Arm::Pos);
    }

    #[test]
    fn scenario_two_oracle_ignores_proxies() {
        let c = cfg(2);
        for x in [[0.1, 0.2], [0.5, -0.3], [-0.2, 0.05]] {
            let want = Arm::from_score(c.b1(x));
            for v in [-5.0, 0.0, 3.0] {
                assert_eq!(oracle_dz_star(&c, x, v), want);
                assert_eq!(oracle_dw_star(&c, x, v), want);
            }
        }
    }

    #[test]
    fn training_sample_moments() {
        let c = cfg(1);
        let d = sample_training(&c, 100_000, 11);
        for j in 0..2 {
            let xs: Vec<f64> = d.rows.iter().map(|r| r.x[j]).collect();
            let e = Estimate::of(&xs);
            assert!((e.value - 0.25).abs() < 3.0 * e.se, "coordinate {j}: {e:?}");
        }
        assert!(d.has_latent());
    }

    #[test]
    fn z_regression_recovers_mean_coefficients() {
        // OLS of Z on (1, (1+A)/2, X1, X2) with classical standard errors.
        let c = cfg(1);
        let d = sample_training(&c, 100_000, 12);
        let n = d.len();
        let design: Vec<[f64; 4]> =
            d.rows.iter().map(|r| [1.0, r.a.treated(), r.x[0], r.x[1]]).collect();
        let mut xtx = nalgebra::Matrix4::<f64>::zeros();
        let mut xty = nalgebra::Vector4::<f64>::zeros();
        for (f, r) in design.iter().zip(&d.rows) {
            let v = nalgebra::Vector4::from_row_slice(f);
            xtx += v * v.transpose();
            xty += v * r.z;
        }
        let inv = xtx.try_inverse().unwrap();
        let beta = inv * xty;
        let rss: f64 = design
            .iter()
            .zip(&d.rows)
            .map(|(f, r)| {
                let fit: f64 = (0..4).map(|k| f[k] * beta[k]).sum();
                (r.z - fit).powi(2)
            })
            .sum();
        let s2 = rss / (n - 4) as f64;
        for k in 0..4 {
            let se = (s2 * inv[(k, k)]).sqrt();
            assert!((beta[k] - 0.25).abs() < 3.0 * se, "coef {k}: {} (se {se})", beta[k]);
        }
    }

    #[test]
    fn test_set_shares_noise() {
        let c = cfg(3);
        let t = sample_testing(&c, 500, 5, TestLaw::Propensity);
        for r in &t.rows {
            let at = AtCovariate::new(&c, r.x);
            let diff = at.outcome_mean(Arm::Pos, r.w, r.u) - at.outcome_mean(Arm::Neg, r.w, r.u);
            assert!(((r.y_pos - r.y_neg) - diff).abs() < 1e-12);
        }
    }

    #[test]
    fn test_set_is_deterministic() {
        let c = cfg(1);
        assert_eq!(
            sample_testing(&c, 100, 9, TestLaw::Propensity),
            sample_testing(&c, 100, 9, TestLaw::Propensity)
        );
        assert_eq!(sample_training(&c, 100, 9), sample_training(&c, 100, 9));
    }

    #[test]
    fn scenario_two_effect_is_b1() {
        let c = cfg(2);
        let t = sample_testing(&c, 100_000, 21, TestLaw::Propensity);
        let diffs: Vec<f64> = t.rows.iter().map(|r| r.y_pos - r.y_neg).collect();
        let b1s: Vec<f64> = t.rows.iter().map(|r| c.b1(r.x)).collect();
        let e = Estimate::of(&diffs);
        assert!((e.value - mean(&b1s)).abs() <= 3.0 * e.se.max(1e-12));
    }
}
