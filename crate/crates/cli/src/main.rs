use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use proxregime::bridge::{fit_bridges, BridgeSettings, Bridges, FittedBridges};
use proxregime::config::DEFAULT_SCENARIO_FILE;
use proxregime::harness::{
    bridge_recovery, consistency_sweep, evaluate, excess_value_decomposition, fit_pipeline, run_experiment,
    BridgeRecovery, RunOptions, REGIME_LABELS,
};
use proxregime::{sample_testing, sample_training, Dataset, ScenarioConfig, TestLaw};

#[derive(Parser)]
#[command(name = "proxregime", version, about = "Proximal learning of individualized treatment regimes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a training sample (and optionally a test sample) as CSV.
    Simulate(Common),
    /// Fit the outcome and treatment bridges.
    FitBridges(DataArgs),
    /// Learn d_z, d_w, the switching rule and the union selector.
    Learn(DataArgs),
    /// One replication: fit everything and report test-set values.
    Evaluate(Common),
    /// Replicated experiment with per-replication values and a summary.
    Experiment(Common),
    /// Excess-value decomposition of one fitted pipeline.
    Decompose(DecomposeArgs),
    /// Optimality gap of the estimated combined regime across sample sizes.
    Consistency(ConsistencyArgs),
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long, default_value_t = 1)]
    scenario: u32,
    #[arg(long, default_value_t = 1000)]
    n_train: usize,
    #[arg(long, default_value_t = 10_000)]
    n_test: usize,
    #[arg(long, default_value_t = 20)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    parallelism: usize,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Use the true bridges instead of estimating them.
    #[arg(long)]
    use_oracle_bridges: bool,
    /// Scenario file; the built-in one is used when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Draw test sets from the training law instead of the default test law.
    #[arg(long)]
    training_law: bool,
    /// Training size of the bridge-recovery pilot recorded in run.json (0 skips it).
    #[arg(long, default_value_t = 4000)]
    pilot_n: usize,
}

#[derive(Args)]
struct DataArgs {
    #[command(flatten)]
    common: Common,
    /// Training CSV (x1,x2,a,z,w,y); simulated from --seed when absent.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Args)]
struct DecomposeArgs {
    #[command(flatten)]
    common: Common,
    /// Test draws for the four values.
    #[arg(long, default_value_t = 100_000)]
    n_mc: usize,
    /// Inner Monte Carlo draws of the oracle switch per query point.
    #[arg(long, default_value_t = 4000)]
    n_pi: usize,
}

#[derive(Args)]
struct ConsistencyArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_delimiter = ',', default_value = "500,1000,4000")]
    n_list: Vec<usize>,
    #[arg(long, default_value_t = 4000)]
    n_pi: usize,
}

struct Loaded {
    cfg: ScenarioConfig,
    config_sha256: String,
    config_source: String,
}

impl Common {
    fn load(&self) -> Result<Loaded> {
        let (text, source) = match &self.config {
            Some(p) => (
                fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
                p.display().to_string(),
            ),
            None => (DEFAULT_SCENARIO_FILE.to_string(), "built-in".to_string()),
        };
        let cfg = ScenarioConfig::from_toml_str(&text, self.scenario)?;
        Ok(Loaded { cfg, config_sha256: hex::encode(Sha256::digest(text.as_bytes())), config_source: source })
    }

    fn options(&self) -> RunOptions {
        RunOptions {
            n_train: self.n_train,
            n_test: self.n_test,
            use_oracle_bridges: self.use_oracle_bridges,
            test_law: if self.training_law { TestLaw::Training } else { TestLaw::Propensity },
        }
    }

    fn out_dir(&self) -> Result<&Path> {
        fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;
        Ok(&self.out)
    }

    fn install_pool(&self) -> Result<()> {
        rayon::ThreadPoolBuilder::new().num_threads(self.parallelism.max(1)).build_global()?;
        Ok(())
    }
}

#[derive(Serialize)]
struct RunInfo<'a> {
    command: &'a str,
    args: Vec<String>,
    version: &'a str,
    scenario: u32,
    config_source: &'a str,
    config_sha256: &'a str,
    seed: u64,
    replication_seeds: Vec<u64>,
    n_train: usize,
    n_test: usize,
    reps: usize,
    use_oracle_bridges: bool,
    test_law: TestLaw,
    bridge_recovery: Option<BridgeRecovery>,
}

fn write_run_json(command: &str, c: &Common, l: &Loaded, replication_seeds: Vec<u64>) -> Result<()> {
    let bridge_recovery = if c.pilot_n > 0 { Some(bridge_recovery(&l.cfg, c.pilot_n, c.seed)?) } else { None };
    let info = RunInfo {
        command,
        args: std::env::args().skip(1).collect(),
        version: env!("CARGO_PKG_VERSION"),
        scenario: l.cfg.scenario,
        config_source: &l.config_source,
        config_sha256: &l.config_sha256,
        seed: c.seed,
        replication_seeds,
        n_train: c.n_train,
        n_test: c.n_test,
        reps: c.reps,
        use_oracle_bridges: c.use_oracle_bridges,
        test_law: c.options().test_law,
        bridge_recovery,
    };
    write_json(&c.out.join("run.json"), &info)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn training_data(a: &DataArgs, cfg: &ScenarioConfig) -> Result<Dataset> {
    Ok(match &a.data {
        Some(p) => Dataset::read_path(p)?.without_latent(),
        None => sample_training(cfg, a.common.n_train, a.common.seed).without_latent(),
    })
}

fn bridges_for(c: &Common, cfg: &ScenarioConfig, data: &Dataset) -> Result<Bridges> {
    Ok(if c.use_oracle_bridges {
        Bridges::oracle(cfg)
    } else {
        Bridges::Fitted(fit_bridges(data, &BridgeSettings::from_tuning(&cfg.tuning), c.seed)?)
    })
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Simulate(c) => {
            let l = c.load()?;
            let out = c.out_dir()?;
            sample_training(&l.cfg, c.n_train, c.seed).without_latent().write_path(out.join("train.csv"))?;
            let test = sample_testing(&l.cfg, c.n_test, c.seed, c.options().test_law);
            test.write_csv(fs::File::create(out.join("test.csv"))?)?;
            println!("wrote {} training and {} test rows to {}", c.n_train, c.n_test, out.display());
        }
        Command::FitBridges(a) => {
            a.common.install_pool()?;
            let l = a.common.load()?;
            let data = training_data(&a, &l.cfg)?;
            let fb: FittedBridges = fit_bridges(&data, &BridgeSettings::from_tuning(&l.cfg.tuning), a.common.seed)?;
            let out = a.common.out_dir()?;
            write_json(&out.join("bridges.json"), &fb)?;
            for b in [&fb.h, &fb.q_pos, &fb.q_neg] {
                let m = b.meta.as_ref().expect("fitted bridges carry metadata");
                println!("{:?} {:?} lambda={} risk={:.6} coef={:?}", b.kind, b.arm, m.lambda, m.risk, b.coef);
            }
        }
        Command::Learn(a) => {
            a.common.install_pool()?;
            let l = a.common.load()?;
            let data = training_data(&a, &l.cfg)?;
            let bridges = bridges_for(&a.common, &l.cfg, &data)?;
            let fitted = fit_pipeline(&l.cfg, &data, Some(bridges), a.common.seed)?;
            let dir = a.common.out_dir()?.join("regimes");
            fs::create_dir_all(&dir)?;
            write_json(&dir.join("d_z.json"), &fitted.dz)?;
            write_json(&dir.join("d_w.json"), &fitted.dw)?;
            write_json(&dir.join("d_union.json"), &fitted.union)?;
            write_json(&dir.join("d_zw.json"), &fitted.combined())?;
            println!("d_z beta={:?} rho={}", fitted.dz.beta, fitted.dz.rho);
            println!("d_w beta={:?} rho={}", fitted.dw.beta, fitted.dw.rho);
            println!("union picks {}", if fitted.union.z_side { "d_z" } else { "d_w" });
        }
        Command::Evaluate(c) => {
            c.install_pool()?;
            let l = c.load()?;
            let train = sample_training(&l.cfg, c.n_train, c.seed);
            let bridges = bridges_for(&c, &l.cfg, &train.without_latent())?;
            let fitted = fit_pipeline(&l.cfg, &train, Some(bridges), c.seed)?;
            let test = sample_testing(&l.cfg, c.n_test, c.seed, c.options().test_law);
            let values = evaluate(&fitted.regimes(), &test)?;
            let out = c.out_dir()?;
            let mut csv = String::from("scenario,replication,regime,value,stderr\n");
            for (label, v) in REGIME_LABELS.iter().zip(&values) {
                csv.push_str(&format!("{},1,{},{},{}\n", l.cfg.scenario, label, v.value, v.se));
                println!("{label:>10} {:.4} ({:.4})", v.value, v.se);
            }
            fs::write(out.join("values.csv"), csv)?;
            let dir = out.join("regimes");
            fs::create_dir_all(&dir)?;
            write_json(&dir.join("d_z.json"), &fitted.dz)?;
            write_json(&dir.join("d_w.json"), &fitted.dw)?;
            write_run_json("evaluate", &c, &l, vec![c.seed])?;
        }
        Command::Experiment(c) => {
            if c.reps == 0 {
                bail!("--reps must be at least 1");
            }
            let l = c.load()?;
            let res = run_experiment(&l.cfg, c.reps, &c.options(), c.seed, c.parallelism)?;
            let out = c.out_dir()?;
            res.write_values_csv(fs::File::create(out.join("values.csv"))?)?;
            res.write_summary_csv(fs::File::create(out.join("summary.csv"))?)?;
            res.write_failures_csv(fs::File::create(out.join("failures.csv"))?)?;
            for (label, s) in res.summary() {
                println!("{label:>10} median {:.4} [{:.4}, {:.4}]", s.median, s.q1, s.q3);
            }
            println!("{} completed, {} failed", res.reports.len(), res.failures.len());
            let seeds = (1..=c.reps as u64).map(|r| c.seed.wrapping_add(r)).collect();
            write_run_json("experiment", &c, &l, seeds)?;
        }
        Command::Decompose(a) => {
            a.common.install_pool()?;
            let l = a.common.load()?;
            let train = sample_training(&l.cfg, a.common.n_train, a.common.seed);
            let bridges = bridges_for(&a.common, &l.cfg, &train.without_latent())?;
            let fitted = fit_pipeline(&l.cfg, &train, Some(bridges), a.common.seed)?;
            let d = excess_value_decomposition(&l.cfg, &fitted, a.n_mc, a.n_pi, a.common.seed)?;
            let out = a.common.out_dir()?;
            write_json(&out.join("decomposition.json"), &d)?;
            println!("V(pi-hat) {:.4}  V(pi-bar) {:.4}  V(d_z) {:.4}  V(d_w) {:.4}", d.v_hat.value, d.v_bar.value, d.v_z.value, d.v_w.value);
            println!("K(pi-hat) {:.4} ({:.4})  G(pi-bar) {:.4} ({:.4})  residual {:.2e}", d.k_hat.value, d.k_hat.se, d.g_bar.value, d.g_bar.se, d.residual);
            write_run_json("decompose", &a.common, &l, vec![a.common.seed])?;
        }
        Command::Consistency(a) => {
            a.common.install_pool()?;
            let l = a.common.load()?;
            let sweep = consistency_sweep(&l.cfg, &a.n_list, a.common.reps, a.common.n_test, a.n_pi, a.common.seed)?;
            let out = a.common.out_dir()?;
            let mut csv = String::from("n,mean_gap,se,replications,failures\n");
            for r in &sweep.rows {
                csv.push_str(&format!("{},{},{},{},{}\n", r.n, r.mean_gap, r.se, r.gaps.len(), r.failures));
                println!("n={:>6} gap {:.4} ({:.4})", r.n, r.mean_gap, r.se);
            }
            fs::write(out.join("consistency.csv"), csv)?;
            write_json(&out.join("consistency.json"), &sweep)?;
            println!("V* = {:.4}; gap decreasing: {}", sweep.v_star.value, sweep.decreasing());
            write_run_json("consistency", &a.common, &l, vec![a.common.seed])?;
        }
    }
    Ok(())
}
