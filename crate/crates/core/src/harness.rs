//! End-to-end pipeline runs: single replications, replicated experiments,
//! the excess-value decomposition and the consistency sweep.

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arm::Arm;
use crate::bridge::{fit_bridges, BridgeSettings, Bridges, FittedBridges};
use crate::combine::{make_pi_hat, union_select, Bandwidth, PiEstimator, UnionChoice};
use crate::config::ScenarioConfig;
use crate::data::{Dataset, TestSet};
use crate::dgp::{empirical_value, empirical_values, sample_testing, sample_training, true_h, TestLaw};
use crate::error::{Error, Result, StageExt};
use crate::policy::{learn_regimes, FoldPlan, LearnedRegime, PolicySettings};
use crate::regime::{OraclePi, Regime, Switch};
use crate::rng::derive_seed;
use crate::stats::{BoxSummary, Estimate};

/// Report labels of the compared regimes, in emission order.
pub const REGIME_LABELS: [&str; 6] = ["d_z", "d_w", "d_union", "d_zw", "const_pos", "const_neg"];

/// Size and law settings of one pipeline run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub n_train: usize,
    pub n_test: usize,
    /// Skip estimation and use the true bridges.
    pub use_oracle_bridges: bool,
    pub test_law: TestLaw,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { n_train: 1000, n_test: 10_000, use_oracle_bridges: false, test_law: TestLaw::Propensity }
    }
}

/// Everything estimated from one training sample.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FittedPipeline {
    pub bridges: Arc<Bridges>,
    pub dz: LearnedRegime,
    pub dw: LearnedRegime,
    pub union: UnionChoice,
    pub pi_hat: PiEstimator,
}

impl FittedPipeline {
    /// pi-hat d_z + (1 - pi-hat) d_w.
    pub fn combined(&self) -> Regime {
        Regime::combined(self.dz.regime.clone(), self.dw.regime.clone(), Switch::Estimated(self.pi_hat.clone()))
    }

    /// The combined regime with the switching rule replaced by pi-bar.
    pub fn combined_oracle(&self, cfg: &ScenarioConfig, n_mc: usize, seed: u64) -> Regime {
        let pi = OraclePi::new(cfg, &self.dz.regime, &self.dw.regime, n_mc, seed);
        Regime::combined(self.dz.regime.clone(), self.dw.regime.clone(), Switch::Oracle(pi))
    }

    /// Regimes in [`REGIME_LABELS`] order.
    pub fn regimes(&self) -> [Regime; 6] {
        [
            self.dz.regime.clone(),
            self.dw.regime.clone(),
            self.union.regime.clone(),
            self.combined(),
            Regime::Constant { arm: Arm::Pos },
            Regime::Constant { arm: Arm::Neg },
        ]
    }
}

/// Estimate bridges (unless `bridges` is given), both preliminary regimes,
/// the switching rule and the union selector from `train`.
pub fn fit_pipeline(cfg: &ScenarioConfig, train: &Dataset, bridges: Option<Bridges>, seed: u64) -> Result<FittedPipeline> {
    let data = Arc::new(train.without_latent());
    let settings = BridgeSettings::from_tuning(&cfg.tuning);
    let bridges = match bridges {
        Some(b) => b,
        None => Bridges::Fitted(fit_bridges(&data, &settings, seed).stage("bridge estimation")?),
    };
    let plan = FoldPlan::seeded(data.len(), cfg.tuning.folds, seed).stage("policy learning")?;
    let policy = PolicySettings::from_tuning(&cfg.tuning);
    let (dz, dw) = learn_regimes(&data, &bridges, Some(&settings), &policy, &plan).stage("policy learning")?;
    let bandwidth = match cfg.tuning.bandwidth {
        Some(gamma) => Bandwidth::Scalar { gamma },
        None => Bandwidth::scott(&data).stage("regime combination")?,
    };
    let bridges = Arc::new(bridges);
    let pi_hat = make_pi_hat(data.clone(), bridges.clone(), &dz.regime, &dw.regime, bandwidth)
        .stage("regime combination")?;
    let union = union_select(&dz.regime, &dw.regime, &data, &bridges);
    Ok(FittedPipeline { bridges, dz, dw, union, pi_hat })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeValue {
    pub regime: String,
    pub value: f64,
    pub stderr: f64,
}

/// Test-set values of every compared regime in one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueReport {
    pub seed: u64,
    pub values: Vec<RegimeValue>,
    pub rho_z: f64,
    pub rho_w: f64,
    pub union_z_side: bool,
    /// Share of test points where pi-hat selected the Z-side regime.
    pub pi_hat_z_share: f64,
}

impl ValueReport {
    pub fn get(&self, label: &str) -> Option<&RegimeValue> {
        self.values.iter().find(|v| v.regime == label)
    }
}

/// Values of `regimes` on `test`, each with its standard error.
pub fn evaluate(regimes: &[Regime], test: &TestSet) -> Result<Vec<Estimate>> {
    regimes.iter().map(|r| empirical_value(r, test)).collect()
}

/// One pass of the full procedure on fresh training and test samples.
pub fn run_replication(cfg: &ScenarioConfig, opts: &RunOptions, seed: u64) -> Result<ValueReport> {
    let train = sample_training(cfg, opts.n_train, seed);
    let oracle = opts.use_oracle_bridges.then(|| Bridges::oracle(cfg));
    let fitted = fit_pipeline(cfg, &train, oracle, seed)?;
    let test = sample_testing(cfg, opts.n_test, seed, opts.test_law);
    let regimes = fitted.regimes();
    let combined = &regimes[3];
    let decisions = combined.decide_rows(&test.rows);
    let switch_share = {
        let Regime::Combined(c) = combined else { unreachable!() };
        let z: Vec<bool> = test.rows.par_iter().map(|r| c.switch.z_side(r.x)).collect();
        z.iter().filter(|&&b| b).count() as f64 / z.len().max(1) as f64
    };
    let mut values = Vec::with_capacity(regimes.len());
    for (label, regime) in REGIME_LABELS.iter().zip(&regimes) {
        let est = if std::ptr::eq(regime, combined) {
            if test.is_empty() {
                return Err(Error::InsufficientData("empty test set".into())).stage("evaluation");
            }
            empirical_values(&decisions, &test)
        } else {
            empirical_value(regime, &test).stage("evaluation")?
        };
        values.push(RegimeValue { regime: label.to_string(), value: est.value, stderr: est.se });
    }
    Ok(ValueReport {
        seed,
        values,
        rho_z: fitted.dz.rho,
        rho_w: fitted.dw.rho,
        union_z_side: fitted.union.z_side,
        pi_hat_z_share: switch_share,
    })
}

/// A replication that did not complete.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub replication: usize,
    pub seed: u64,
    pub stage: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResults {
    pub scenario: u32,
    pub replications: usize,
    /// (replication index, report), sorted by index.
    pub reports: Vec<(usize, ValueReport)>,
    pub failures: Vec<Failure>,
}

/// `reps` replications with seeds base_seed + 1 ..= base_seed + reps on a
/// pool of `parallelism` threads. The output does not depend on the pool size.
pub fn run_experiment(
    cfg: &ScenarioConfig,
    reps: usize,
    opts: &RunOptions,
    base_seed: u64,
    parallelism: usize,
) -> Result<ExperimentResults> {
    if reps == 0 {
        return Err(Error::InvalidConfig("at least one replication is required".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| Error::Invalid(format!("thread pool: {e}")))?;
    let outcomes: Vec<(usize, u64, Result<ValueReport>)> = pool.install(|| {
        (1..=reps)
            .into_par_iter()
            .map(|r| {
                let seed = base_seed.wrapping_add(r as u64);
                (r, seed, run_replication(cfg, opts, seed))
            })
            .collect()
    });
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for (replication, seed, out) in outcomes {
        match out {
            Ok(rep) => reports.push((replication, rep)),
            Err(e) => failures.push(Failure {
                replication,
                seed,
                stage: e.stage().unwrap_or("unknown").to_string(),
                error: match &e {
                    Error::Stage { source, .. } => source.to_string(),
                    e => e.to_string(),
                },
            }),
        }
    }
    Ok(ExperimentResults { scenario: cfg.scenario, replications: reps, reports, failures })
}

impl ExperimentResults {
    /// Per-replication values of one regime, in replication order.
    pub fn values_of(&self, label: &str) -> Vec<f64> {
        self.reports.iter().filter_map(|(_, r)| r.get(label).map(|v| v.value)).collect()
    }

    /// Per-replication max(V(d_z), V(d_w)).
    pub fn best_single(&self) -> Vec<f64> {
        self.values_of("d_z").iter().zip(self.values_of("d_w")).map(|(a, b)| a.max(b)).collect()
    }

    pub fn summary(&self) -> Vec<(String, BoxSummary)> {
        REGIME_LABELS
            .iter()
            .map(|l| (l.to_string(), self.values_of(l)))
            .filter(|(_, v)| !v.is_empty())
            .map(|(l, v)| (l, BoxSummary::of(&v)))
            .collect()
    }

    /// Long format: scenario, replication, regime, value, stderr.
    pub fn write_values_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["scenario", "replication", "regime", "value", "stderr"])?;
        for (rep, report) in &self.reports {
            for v in &report.values {
                w.write_record([
                    self.scenario.to_string(),
                    rep.to_string(),
                    v.regime.clone(),
                    v.value.to_string(),
                    v.stderr.to_string(),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::Invalid(format!("write failed: {e}")))?;
        Ok(())
    }

    pub fn write_summary_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["scenario", "regime", "n", "median", "q1", "q3", "iqr"])?;
        for (label, s) in self.summary() {
            w.write_record([
                self.scenario.to_string(),
                label,
                s.n.to_string(),
                s.median.to_string(),
                s.q1.to_string(),
                s.q3.to_string(),
                s.iqr().to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::Invalid(format!("write failed: {e}")))?;
        Ok(())
    }

    pub fn write_failures_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["scenario", "replication", "seed", "stage", "error"])?;
        for f in &self.failures {
            w.write_record([
                self.scenario.to_string(),
                f.replication.to_string(),
                f.seed.to_string(),
                f.stage.clone(),
                f.error.clone(),
            ])?;
        }
        w.flush().map_err(|e| Error::Invalid(format!("write failed: {e}")))?;
        Ok(())
    }
}

/// Paired difference mean(a - b) with its standard error.
fn paired(a: &[f64], b: &[f64]) -> Estimate {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    Estimate::of(&d)
}

/// The excess value of the estimated combined regime split into the loss
/// from estimating the switch and the gain of the oracle switch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub v_hat: Estimate,
    pub v_bar: Estimate,
    pub v_z: Estimate,
    pub v_w: Estimate,
    /// V(d_zw with pi-bar) - V(d_zw with pi-hat).
    pub k_hat: Estimate,
    /// V(d_zw with pi-bar) - max(V(d_z), V(d_w)).
    pub g_bar: Estimate,
    /// V(pi-hat) - (max(V(d_z), V(d_w)) - k_hat + g_bar).
    pub residual: f64,
    pub residual_se: f64,
}

/// Decompose on `n_mc` fresh draws of the training law; pi-bar uses `n_pi`
/// inner Monte Carlo draws per query point.
pub fn excess_value_decomposition(
    cfg: &ScenarioConfig,
    fitted: &FittedPipeline,
    n_mc: usize,
    n_pi: usize,
    seed: u64,
) -> Result<Decomposition> {
    if n_mc < 2 {
        return Err(Error::InsufficientData("decomposition needs at least two test draws".into()));
    }
    let test = sample_testing(cfg, n_mc, derive_seed(seed, 1), TestLaw::Training);
    let outcomes = |r: &Regime| -> Vec<f64> {
        r.decide_rows(&test.rows).iter().zip(&test.rows).map(|(&a, row)| row.outcome(a)).collect()
    };
    let y_hat = outcomes(&fitted.combined());
    let y_bar = outcomes(&fitted.combined_oracle(cfg, n_pi, derive_seed(seed, 2)));
    let y_z = outcomes(&fitted.dz.regime);
    let y_w = outcomes(&fitted.dw.regime);
    let (v_hat, v_bar, v_z, v_w) = (Estimate::of(&y_hat), Estimate::of(&y_bar), Estimate::of(&y_z), Estimate::of(&y_w));
    let best = if v_z.value >= v_w.value { &y_z } else { &y_w };
    let k_hat = paired(&y_bar, &y_hat);
    let g_bar = paired(&y_bar, best);
    let residual = v_hat.value - (v_z.value.max(v_w.value) - k_hat.value + g_bar.value);
    let best_se = if v_z.value >= v_w.value { v_z.se } else { v_w.se };
    let residual_se = (v_hat.se.powi(2) + best_se.powi(2) + k_hat.se.powi(2) + g_bar.se.powi(2)).sqrt();
    Ok(Decomposition { v_hat, v_bar, v_z, v_w, k_hat, g_bar, residual, residual_se })
}

/// Mean optimality gap at one training size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: usize,
    pub gaps: Vec<f64>,
    pub mean_gap: f64,
    pub se: f64,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub v_star: Estimate,
    pub rows: Vec<SweepRow>,
}

impl Sweep {
    /// Gap at the largest size is below the gap at the smallest.
    pub fn decreasing(&self) -> bool {
        match (self.rows.first(), self.rows.last()) {
            (Some(a), Some(b)) => b.mean_gap < a.mean_gap,
            _ => false,
        }
    }
}

/// V(d_zw*) - V(d_zw-hat) for every n in `n_list`, averaged over `reps`
/// replications, all evaluated on one common test sample of the training law.
/// Replication r at size n uses seed derive_seed(base_seed, n) + r.
pub fn consistency_sweep(
    cfg: &ScenarioConfig,
    n_list: &[usize],
    reps: usize,
    n_test: usize,
    n_pi: usize,
    base_seed: u64,
) -> Result<Sweep> {
    if n_list.len() < 3 || n_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidConfig("n_list must be strictly ascending with at least three sizes".into()));
    }
    if reps == 0 {
        return Err(Error::InvalidConfig("at least one replication is required".into()));
    }
    let test = sample_testing(cfg, n_test, derive_seed(base_seed, 0), TestLaw::Training);
    let star = Regime::combined(
        Regime::oracle_z(cfg),
        Regime::oracle_w(cfg),
        Switch::Oracle(OraclePi::new(cfg, &Regime::oracle_z(cfg), &Regime::oracle_w(cfg), n_pi, derive_seed(base_seed, 1))),
    );
    let v_star = empirical_value(&star, &test)?;
    let mut rows = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let mut gaps = Vec::with_capacity(reps);
        let mut failures = 0;
        for r in 1..=reps {
            let seed = derive_seed(base_seed, n as u64).wrapping_add(r as u64);
            let train = sample_training(cfg, n, seed);
            match fit_pipeline(cfg, &train, None, seed).and_then(|f| empirical_value(&f.combined(), &test)) {
                Ok(v) => gaps.push(v_star.value - v.value),
                Err(_) => failures += 1,
            }
        }
        let est = Estimate::of(&gaps);
        rows.push(SweepRow { n, gaps, mean_gap: est.value, se: est.se, failures });
    }
    Ok(Sweep { v_star, rows })
}

/// Fixed evaluation grid of the bridge-recovery check: x2 = 0.25 and
/// (x1, w) over a 5 x 5 lattice.
pub const RECOVERY_X1: [f64; 5] = [-0.25, 0.0, 0.25, 0.5, 0.75];
pub const RECOVERY_W: [f64; 5] = [-1.5, -0.5, 0.5, 1.5, 2.5];
pub const RECOVERY_X2: f64 = 0.25;

/// How well fitted bridges reproduce the true ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgeRecovery {
    pub n: usize,
    pub seed: u64,
    /// Max over the grid of |fitted contrast - true contrast| in a.
    pub max_contrast_error: f64,
    /// Per arm (+1, -1): |eta-hat - eta| for (1, z, x1, x2).
    pub q_coef_error_pos: [f64; 4],
    pub q_coef_error_neg: [f64; 4],
}

impl BridgeRecovery {
    pub fn max_q_coef_error(&self) -> f64 {
        self.q_coef_error_pos.iter().chain(&self.q_coef_error_neg).fold(0.0, |m, v| m.max(*v))
    }
}

/// Exponent coefficients of the true treatment bridge for `arm` on (1, z, x1, x2).
pub fn true_q_coefficients(cfg: &ScenarioConfig, arm: Arm) -> [f64; 4] {
    let tb = &cfg.treatment_bridge;
    let s = arm.sign();
    [s * tb.t0 + tb.t_a * arm.treated(), s * tb.t_z, s * tb.t_x[0], s * tb.t_x[1]]
}

pub fn recovery_of(cfg: &ScenarioConfig, fb: &FittedBridges, n: usize, seed: u64) -> BridgeRecovery {
    let mut max_err: f64 = 0.0;
    for &x1 in &RECOVERY_X1 {
        for &w in &RECOVERY_W {
            let x = [x1, RECOVERY_X2];
            let fitted = fb.h.eval(w, Arm::Pos, x) - fb.h.eval(w, Arm::Neg, x);
            let truth = true_h(cfg, w, Arm::Pos, x) - true_h(cfg, w, Arm::Neg, x);
            max_err = max_err.max((fitted - truth).abs());
        }
    }
    let err = |arm: Arm| {
        let t = true_q_coefficients(cfg, arm);
        let c = &fb.q_for(arm).coef;
        [0, 1, 2, 3].map(|k| (c[k] - t[k]).abs())
    };
    BridgeRecovery {
        n,
        seed,
        max_contrast_error: max_err,
        q_coef_error_pos: err(Arm::Pos),
        q_coef_error_neg: err(Arm::Neg),
    }
}

/// Fit the bridges on a fresh training sample of size `n` and compare them
/// with the truth.
pub fn bridge_recovery(cfg: &ScenarioConfig, n: usize, seed: u64) -> Result<BridgeRecovery> {
    let data = sample_training(cfg, n, seed).without_latent();
    let fb = fit_bridges(&data, &BridgeSettings::from_tuning(&cfg.tuning), seed)?;
    Ok(recovery_of(cfg, &fb, n, seed))
}
