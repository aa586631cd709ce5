//! One test per acceptance criterion. Each prints a PASS or FAIL line with
//! the measured quantities and then asserts the criterion.

use std::time::Instant;

use proxregime::bridge::{treatment_linear_basis, MmrProblem, QObjective, Statistic, Target};
use proxregime::combine::union_select;
use proxregime::harness::{bridge_recovery, run_experiment};
use proxregime::regime::OraclePi;
use proxregime::stats::{median, quantile};
use proxregime::{
    combine, consistency_sweep, empirical_value, excess_value_decomposition, fit_pipeline, learn_dw, learn_dz,
    oracle_dw_star, oracle_dz_star, sample_testing, sample_training, true_h, true_q, Arm, Bridges, Estimate, Regime,
    RunOptions, ScenarioConfig, Switch, TestLaw,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(criterion: u32, pass: bool, detail: String, start: Instant) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!("criterion {criterion:>2}: {verdict} ({:.1} s) {detail}", start.elapsed().as_secs_f64());
    assert!(pass, "criterion {criterion} failed: {detail}");
}

fn scenario(id: u32) -> ScenarioConfig {
    ScenarioConfig::builtin(id).unwrap()
}

fn threads() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1).min(8)
}

#[test]
fn criterion_01_outcome_branch_identification() {
    let start = Instant::now();
    let cfg = scenario(1);
    let train = sample_training(&cfg, 100_000, 101);
    let terms: Vec<f64> =
        train.rows.iter().map(|o| true_h(&cfg, o.w, oracle_dz_star(&cfg, o.x, o.z), o.x)).collect();
    let ident = Estimate::of(&terms);
    let v = empirical_value(&Regime::oracle_z(&cfg), &sample_testing(&cfg, 100_000, 102, TestLaw::Training)).unwrap();
    let gap = (ident.value - v.value).abs();
    let se = ident.combined_se(&v);
    report(1, gap <= 4.0 * se, format!("identified {:.4} vs empirical {:.4}, gap {gap:.4} <= 4 x {se:.4}", ident.value, v.value), start);
}

#[test]
fn criterion_02_treatment_branch_identification() {
    let start = Instant::now();
    let cfg = scenario(1);
    let train = sample_training(&cfg, 100_000, 201);
    let terms: Vec<f64> = train
        .rows
        .iter()
        .map(|o| if oracle_dw_star(&cfg, o.x, o.w) == o.a { o.y * true_q(&cfg, o.z, o.a, o.x) } else { 0.0 })
        .collect();
    let ident = Estimate::of(&terms);
    let v = empirical_value(&Regime::oracle_w(&cfg), &sample_testing(&cfg, 100_000, 202, TestLaw::Training)).unwrap();
    let gap = (ident.value - v.value).abs();
    let se = ident.combined_se(&v);
    report(2, gap <= 4.0 * se, format!("identified {:.4} vs empirical {:.4}, gap {gap:.4} <= 4 x {se:.4}", ident.value, v.value), start);
}

#[test]
fn criterion_03_treatment_bridge_moment() {
    let start = Instant::now();
    let cfg = scenario(1);
    let train = sample_training(&cfg, 100_000, 301);
    let mut pass = true;
    let mut detail = Vec::new();
    for arm in Arm::BOTH {
        let terms: Vec<f64> =
            train.rows.iter().map(|o| if o.a == arm { true_q(&cfg, o.z, arm, o.x) } else { 0.0 }).collect();
        let e = Estimate::of(&terms);
        pass &= (e.value - 1.0).abs() <= 4.0 * e.se;
        detail.push(format!("arm {:+}: {:.4} (se {:.4})", arm.sign(), e.value, e.se));
    }
    report(3, pass, detail.join(", "), start);
}

#[test]
fn criterion_04_bridge_recovery() {
    let start = Instant::now();
    let cfg = scenario(1);
    let r = bridge_recovery(&cfg, 4000, 401).unwrap();
    let pass = r.max_contrast_error <= 0.15 && r.max_q_coef_error() <= 0.2;
    report(
        4,
        pass,
        format!(
            "max contrast error {:.3} (<= 0.15), max q coefficient error {:.3} (<= 0.2); q+ {:.3?}, q- {:.3?}",
            r.max_contrast_error,
            r.max_q_coef_error(),
            r.q_coef_error_pos,
            r.q_coef_error_neg
        ),
        start,
    );
}

#[test]
fn criterion_05_treatment_risk_gradient() {
    let start = Instant::now();
    let cfg = scenario(1);
    let data = sample_training(&cfg, 1000, 501).without_latent();
    let mut draws = ChaCha8Rng::seed_from_u64(502);
    let mut worst: f64 = 0.0;
    for arm in Arm::BOTH {
        let problem = MmrProblem::new(Target::Treatment(arm), &data, 1e-3, Statistic::U).unwrap();
        let gram = problem.gram(&data);
        let obj = QObjective::new(&data, &treatment_linear_basis(), arm, 1e-3, Statistic::U, &gram).unwrap();
        for _ in 0..10 {
            let eta: Vec<f64> = (0..4).map(|_| draws.random_range(-1.0..1.0)).collect();
            let (_, g) = obj.value_and_grad(&eta);
            let mut num = 0.0;
            for k in 0..4 {
                let (mut up, mut down) = (eta.clone(), eta.clone());
                up[k] += 1e-5;
                down[k] -= 1e-5;
                let fd = (obj.value(&up) - obj.value(&down)) / 2e-5;
                num += (fd - g[k]).powi(2);
            }
            let den = g.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            worst = worst.max(num.sqrt() / den);
        }
    }
    report(5, worst < 1e-4, format!("worst relative error {worst:.2e} over 20 points (< 1e-4)"), start);
}

#[test]
fn criterion_06_oracle_regime_recovery() {
    let start = Instant::now();
    let cfg = scenario(1);
    let data = sample_training(&cfg, 4000, 601).without_latent();
    let bridges = Bridges::oracle(&cfg);
    let dz = learn_dz(&data, &bridges, &cfg.tuning.rho_grid, cfg.tuning.folds, 601).unwrap();
    let dw = learn_dw(&data, &bridges, &cfg.tuning.rho_grid, cfg.tuning.folds, 601).unwrap();
    let test = sample_testing(&cfg, 10_000, 602, TestLaw::Propensity);
    let agree = |learned: &Regime, oracle: &Regime| {
        let a = learned.decide_rows(&test.rows);
        let b = oracle.decide_rows(&test.rows);
        a.iter().zip(&b).filter(|(x, y)| x == y).count() as f64 / test.len() as f64
    };
    let az = agree(&dz.regime, &Regime::oracle_z(&cfg));
    let aw = agree(&dw.regime, &Regime::oracle_w(&cfg));
    report(6, az >= 0.9 && aw >= 0.9, format!("agreement d_z {az:.3}, d_w {aw:.3} (>= 0.90)"), start);
}

#[test]
fn criterion_07_oracle_switch_dominance() {
    let start = Instant::now();
    let mut pass = true;
    let mut detail = Vec::new();
    for id in 1..=6 {
        let cfg = scenario(id);
        let test = sample_testing(&cfg, 100_000, 700 + id as u64, TestLaw::Training);
        let (oz, ow) = (Regime::oracle_z(&cfg), Regime::oracle_w(&cfg));
        let pi = OraclePi::new(&cfg, &oz, &ow, 100_000, 710 + id as u64);
        let star = empirical_value(&combine(oz.clone(), ow.clone(), Switch::Oracle(pi)), &test).unwrap();
        let vz = empirical_value(&oz, &test).unwrap();
        let vw = empirical_value(&ow, &test).unwrap();
        let train = sample_training(&cfg, 100_000, 720 + id as u64).without_latent();
        let union = union_select(&oz, &ow, &train, &Bridges::oracle(&cfg));
        let vu = if union.z_side { vz } else { vw };
        let best = if vz.value >= vw.value { vz } else { vw };
        let ok = star.value >= best.value - 4.0 * star.combined_se(&best) && star.value >= vu.value - 4.0 * star.combined_se(&vu);
        pass &= ok;
        detail.push(format!(
            "s{id}: star {:.4} z {:.4} w {:.4} union {:.4}{}",
            star.value,
            vz.value,
            vw.value,
            vu.value,
            if ok { "" } else { " <-" }
        ));
    }
    report(7, pass, detail.join("; "), start);
}

fn iqr(xs: &[f64]) -> f64 {
    quantile(xs, 0.75) - quantile(xs, 0.25)
}

#[test]
fn criterion_08_estimated_pipeline_direction() {
    let start = Instant::now();
    let reps = 20;
    let mut pass = true;
    let mut detail = Vec::new();
    for id in 1..=6 {
        let cfg = scenario(id);
        let res = run_experiment(&cfg, reps, &RunOptions::default(), 800 + 100 * id as u64, threads()).unwrap();
        let best = res.best_single();
        let zw = res.values_of("d_zw");
        let tol = 2.0 * iqr(&best) / (reps as f64).sqrt();
        let mut ok = res.failures.is_empty() && median(&zw) >= median(&best) - tol;
        let mut line = format!(
            "s{id}: median d_zw {:.3} vs best single {:.3} - {tol:.3}",
            median(&zw),
            median(&best)
        );
        if !res.failures.is_empty() {
            line.push_str(&format!(", {} failed replications", res.failures.len()));
        }
        if [1, 3, 6].contains(&id) {
            let constants = median(&res.values_of("const_pos")).max(median(&res.values_of("const_neg")));
            let proximal: Vec<f64> = ["d_z", "d_w", "d_union", "d_zw"].iter().map(|l| median(&res.values_of(l))).collect();
            ok &= proximal.iter().all(|&m| m >= constants);
            line.push_str(&format!(", proximal medians {proximal:.3?} vs constants {constants:.3}"));
        }
        if !ok {
            line.push_str(" <-");
        }
        pass &= ok;
        detail.push(line);
    }
    report(8, pass, detail.join("; "), start);
}

#[test]
fn criterion_09_decomposition_identity() {
    let start = Instant::now();
    let cfg = scenario(1);
    let train = sample_training(&cfg, 1000, 901);
    let fitted = fit_pipeline(&cfg, &train, None, 901).unwrap();
    let d = excess_value_decomposition(&cfg, &fitted, 100_000, 4000, 902).unwrap();
    let pass = d.residual.abs() < 4.0 * d.residual_se && d.g_bar.value >= -4.0 * d.g_bar.se;
    report(
        9,
        pass,
        format!(
            "V(pi-hat) {:.4}, max branch {:.4}, K {:.4} (se {:.4}), G {:.4} (se {:.4}), residual {:.2e} < 4 x {:.4}",
            d.v_hat.value,
            d.v_z.value.max(d.v_w.value),
            d.k_hat.value,
            d.k_hat.se,
            d.g_bar.value,
            d.g_bar.se,
            d.residual,
            d.residual_se
        ),
        start,
    );
}

#[test]
fn criterion_10_consistency_trend() {
    let start = Instant::now();
    let cfg = scenario(1);
    let sweep = consistency_sweep(&cfg, &[500, 1000, 4000], 10, 100_000, 10_000, 1001).unwrap();
    let gaps: Vec<f64> = sweep.rows.iter().map(|r| r.mean_gap).collect();
    let strictly = gaps.windows(2).all(|w| w[1] < w[0]);
    let rows: Vec<String> = sweep
        .rows
        .iter()
        .map(|r| format!("n={} gap {:.4} (se {:.4}, {} failed)", r.n, r.mean_gap, r.se, r.failures))
        .collect();
    report(10, strictly, format!("V* {:.4}; {}", sweep.v_star.value, rows.join(", ")), start);
}

#[test]
fn criterion_11_experiment_determinism() {
    let start = Instant::now();
    let cfg = scenario(1);
    let csv = |parallelism| {
        let res = run_experiment(&cfg, 5, &RunOptions::default(), 7, parallelism).unwrap();
        let mut out = Vec::new();
        res.write_values_csv(&mut out).unwrap();
        out
    };
    let one = csv(1);
    let eight = csv(8);
    report(11, one == eight, format!("values.csv {} bytes at parallelism 1, {} at 8", one.len(), eight.len()), start);
}
