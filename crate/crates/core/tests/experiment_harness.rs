use proxregime::harness::{run_experiment, REGIME_LABELS};
use proxregime::{
    consistency_sweep, excess_value_decomposition, fit_pipeline, run_replication, sample_testing, sample_training,
    Bridges, Regime, RunOptions, ScenarioConfig,
};

fn small(n_train: usize, n_test: usize) -> RunOptions {
    RunOptions { n_train, n_test, ..RunOptions::default() }
}

#[test]
fn replications_are_reproducible() {
    let cfg = ScenarioConfig::builtin(1).unwrap();
    let opts = small(300, 2000);
    let a = run_replication(&cfg, &opts, 42).unwrap();
    let b = run_replication(&cfg, &opts, 42).unwrap();
    assert_eq!(a, b);
    let labels: Vec<&str> = a.values.iter().map(|v| v.regime.as_str()).collect();
    assert_eq!(labels, REGIME_LABELS);
    assert!(a.values.iter().all(|v| v.stderr > 0.0));
}

#[test]
fn values_respect_the_pointwise_bounds() {
    let cfg = ScenarioConfig::builtin(2).unwrap();
    let opts = small(400, 5000);
    let seed = 3;
    let report = run_replication(&cfg, &opts, seed).unwrap();
    let test = sample_testing(&cfg, opts.n_test, seed, opts.test_law);
    let upper = test.rows.iter().map(|r| r.y_pos.max(r.y_neg)).sum::<f64>() / test.len() as f64;
    let pos = report.get("const_pos").unwrap();
    let neg = report.get("const_neg").unwrap();
    let low = if pos.value < neg.value { pos } else { neg };
    for v in &report.values {
        assert!(v.value >= low.value - 4.0 * low.stderr.hypot(v.stderr), "{v:?}");
        assert!(v.value <= upper + 1e-12, "{v:?}");
    }
}

#[test]
fn standard_error_halves_when_the_test_set_quadruples() {
    let cfg = ScenarioConfig::builtin(1).unwrap();
    let oracle = |n_test| RunOptions { n_train: 500, n_test, use_oracle_bridges: true, ..RunOptions::default() };
    let a = run_replication(&cfg, &oracle(25_000), 5).unwrap();
    let b = run_replication(&cfg, &oracle(100_000), 5).unwrap();
    for label in REGIME_LABELS {
        let ratio = b.get(label).unwrap().stderr / a.get(label).unwrap().stderr;
        assert!((ratio - 0.5).abs() <= 0.1, "{label}: {ratio}");
    }
}

#[test]
fn one_replication_experiment_is_a_replication() {
    let cfg = ScenarioConfig::builtin(3).unwrap();
    let opts = small(300, 2000);
    let res = run_experiment(&cfg, 1, &opts, 100, 2).unwrap();
    assert_eq!(res.reports.len(), 1);
    assert_eq!(res.reports[0].0, 1);
    assert_eq!(res.reports[0].1, run_replication(&cfg, &opts, 101).unwrap());
}

#[test]
fn experiment_output_is_independent_of_thread_count() {
    let cfg = ScenarioConfig::builtin(1).unwrap();
    let opts = small(250, 1000);
    let csv = |threads| {
        let res = run_experiment(&cfg, 3, &opts, 7, threads).unwrap();
        let mut out = Vec::new();
        res.write_values_csv(&mut out).unwrap();
        out
    };
    let one = csv(1);
    assert_eq!(one, csv(4));
    let text = String::from_utf8(one).unwrap();
    assert_eq!(text.lines().next().unwrap(), "scenario,replication,regime,value,stderr");
    assert_eq!(text.lines().count(), 1 + 3 * REGIME_LABELS.len());
}

#[test]
fn failed_replications_are_counted() {
    let cfg = ScenarioConfig::builtin(1).unwrap();
    let res = run_experiment(&cfg, 4, &small(6, 100), 0, 2).unwrap();
    assert_eq!(res.reports.len() + res.failures.len(), 4);
    assert!(!res.failures.is_empty());
    for f in &res.failures {
        assert!(["bridge estimation", "policy learning", "regime combination", "evaluation"].contains(&f.stage.as_str()));
        assert!(!f.error.starts_with(&f.stage));
    }
    let mut out = Vec::new();
    res.write_failures_csv(&mut out).unwrap();
    assert_eq!(String::from_utf8(out).unwrap().lines().count(), 1 + res.failures.len());
    assert!(run_experiment(&cfg, 0, &small(6, 100), 0, 1).is_err());
}

#[test]
fn summary_reports_quartiles_per_regime() {
    let cfg = ScenarioConfig::builtin(1).unwrap();
    let res = run_experiment(&cfg, 3, &RunOptions { use_oracle_bridges: true, ..small(300, 1000) }, 9, 2).unwrap();
    let summary = res.summary();
    assert_eq!(summary.len(), REGIME_LABELS.len());
    for (label, s) in &summary {
        let v = res.values_of(label);
        assert_eq!(s.n, v.len());
        assert!(s.q1 <= s.median && s.median <= s.q3);
    }
}

#[test]
fn identical_components_have_no_switching_loss() {
    let cfg = ScenarioConfig::builtin(1).unwrap();
    let train = sample_training(&cfg, 400, 11);
    let mut fitted = fit_pipeline(&cfg, &train, Some(Bridges::oracle(&cfg)), 11).unwrap();
    fitted.dz.regime = Regime::LinearZ { beta: [0.3, 1.0, -1.0, 0.0] };
    fitted.dw.regime = Regime::LinearW { beta: [0.3, 1.0, -1.0, 0.0] };
    let d = excess_value_decomposition(&cfg, &fitted, 5000, 200, 12).unwrap();
    assert_eq!(d.k_hat.value, 0.0);
    assert_eq!(d.g_bar.value, 0.0);
    assert_eq!(d.residual, 0.0);
}

#[test]
fn decomposition_identity_holds_on_a_small_pipeline() {
    let cfg = ScenarioConfig::builtin(1).unwrap();
    let train = sample_training(&cfg, 500, 13);
    let fitted = fit_pipeline(&cfg, &train, None, 13).unwrap();
    let d = excess_value_decomposition(&cfg, &fitted, 20_000, 1000, 14).unwrap();
    assert!(d.residual.abs() < 4.0 * d.residual_se, "{d:?}");
    assert!(d.g_bar.value >= -4.0 * d.g_bar.se, "{d:?}");
    assert!(excess_value_decomposition(&cfg, &fitted, 1, 10, 14).is_err());
}

#[test]
fn sweep_rejects_short_or_unsorted_size_lists() {
    let cfg = ScenarioConfig::builtin(1).unwrap();
    assert!(consistency_sweep(&cfg, &[500, 1000], 2, 100, 10, 1).is_err());
    assert!(consistency_sweep(&cfg, &[500, 400, 1000], 2, 100, 10, 1).is_err());
    assert!(consistency_sweep(&cfg, &[200, 300, 400], 0, 100, 10, 1).is_err());
}

#[test]
fn sweep_gaps_are_not_significantly_negative() {
    let cfg = ScenarioConfig::builtin(1).unwrap();
    let sweep = consistency_sweep(&cfg, &[200, 300, 400], 3, 5000, 500, 2).unwrap();
    assert_eq!(sweep.rows.len(), 3);
    for row in &sweep.rows {
        assert_eq!(row.gaps.len() + row.failures, 3);
        let se = row.se.hypot(sweep.v_star.se);
        assert!(row.mean_gap >= -4.0 * se, "{row:?}");
    }
}
