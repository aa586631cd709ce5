//! Confounding-bridge estimation by kernel moment-restriction risks over
//! finite basis expansions.

pub mod basis;
pub mod kernel;
pub mod mmr;

pub use basis::{
    design, outcome_linear_basis, parse_basis, treatment_linear_basis, BridgeFn, BridgeKind, FitMeta, Link, Term,
};
pub use kernel::{median_pairwise_distance, Gram};
pub use mmr::{
    empirical_risk, fit_h, fit_h_with_gram, fit_q, fit_q_with_gram, risk_from_residuals, GdSettings, MmrProblem,
    QObjective, Statistic, Target, LAMBDA_CAP,
};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::arm::Arm;
use crate::config::{ScenarioConfig, Tuning};
use crate::data::Dataset;
use crate::dgp::AtCovariate;
use crate::error::{Error, Result};
use crate::rng::{rng, Stream};

/// How the bridges are fitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgeSettings {
    pub outcome_basis: Vec<Term>,
    pub treatment_basis: Vec<Term>,
    pub treatment_link: Link,
    pub outcome_lambda_grid: Vec<f64>,
    pub treatment_lambda_grid: Vec<f64>,
    pub holdout_fraction: f64,
    pub statistic: Statistic,
    pub gd: GdSettings,
}

impl BridgeSettings {
    pub fn from_tuning(t: &Tuning) -> BridgeSettings {
        BridgeSettings {
            outcome_basis: outcome_linear_basis(),
            treatment_basis: treatment_linear_basis(),
            treatment_link: Link::OnePlusExp,
            outcome_lambda_grid: t.outcome_lambda_grid.clone().unwrap_or_else(|| t.lambda_grid.clone()),
            treatment_lambda_grid: t.lambda_grid.clone(),
            holdout_fraction: t.holdout_fraction,
            statistic: Statistic::U,
            gd: GdSettings::default(),
        }
    }
}

/// Estimated h and per-arm q.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedBridges {
    pub h: BridgeFn,
    pub q_pos: BridgeFn,
    pub q_neg: BridgeFn,
}

impl FittedBridges {
    pub fn q_for(&self, a: Arm) -> &BridgeFn {
        match a {
            Arm::Pos => &self.q_pos,
            Arm::Neg => &self.q_neg,
        }
    }

    /// Refit on `data` keeping each bridge's penalty and lengthscale.
    pub fn refit(&self, data: &Dataset, settings: &BridgeSettings) -> Result<FittedBridges> {
        let fixed = |b: &BridgeFn| {
            let m = b.meta.as_ref().ok_or_else(|| Error::Invalid("bridge carries no fit metadata".into()))?;
            Ok::<_, Error>((m.lambda, m.lengthscale))
        };
        let (lh, sh) = fixed(&self.h)?;
        let h = fit_h(data, &settings.outcome_basis, &MmrProblem::with_lengthscale(Target::Outcome, sh, lh, settings.statistic)?)?;
        let (_, sq) = fixed(&self.q_pos)?;
        let gram = Gram::gaussian(&Target::Treatment(Arm::Pos).instruments(data).0, 3, sq);
        let mut qs = Vec::with_capacity(2);
        for arm in [Arm::Pos, Arm::Neg] {
            let (lq, sq) = fixed(self.q_for(arm))?;
            let problem = MmrProblem::with_lengthscale(Target::Treatment(arm), sq, lq, settings.statistic)?;
            qs.push(fit_q_with_gram(data, &settings.treatment_basis, settings.treatment_link, &problem, &settings.gd, &gram)?);
        }
        let q_neg = qs.pop().expect("two arms");
        let q_pos = qs.pop().expect("two arms");
        Ok(FittedBridges { h, q_pos, q_neg })
    }
}

/// Split indices into (fit, holdout) by a seeded permutation.
fn holdout_split(n: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let n_hold = ((n as f64) * fraction).round() as usize;
    if n_hold < 2 || n - n_hold < 2 {
        return Err(Error::InsufficientData(format!("cannot hold out {fraction} of {n} rows for penalty selection")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng(seed, Stream::Holdout));
    let hold = idx.split_off(n - n_hold);
    Ok((idx, hold))
}

/// Fit h, q(., +1, .) and q(., -1, .). With more than one candidate penalty,
/// each bridge's penalty minimizes the U-statistic risk on a seeded holdout;
/// the final fits use all rows.
pub fn fit_bridges(data: &Dataset, settings: &BridgeSettings, seed: u64) -> Result<FittedBridges> {
    let (grid_h, grid_q) = (&settings.outcome_lambda_grid, &settings.treatment_lambda_grid);
    if grid_h.is_empty() || grid_q.is_empty() {
        return Err(Error::InvalidConfig("lambda grid is empty".into()));
    }
    let (hp, hd) = Target::Outcome.instruments(data);
    let len_h = median_pairwise_distance(&hp, hd)?;
    let (qp, qd) = Target::Treatment(Arm::Pos).instruments(data);
    let len_q = median_pairwise_distance(&qp, qd)?;

    let mut chosen_h = (grid_h[0], Vec::new());
    let mut chosen_q = [(grid_q[0], Vec::new()), (grid_q[0], Vec::new())];
    if grid_h.len() > 1 || grid_q.len() > 1 {
        let (fit_idx, hold_idx) = holdout_split(data.len(), settings.holdout_fraction, seed)?;
        let train = data.subset(&fit_idx);
        let hold = data.subset(&hold_idx);
        let stat = settings.statistic;

        if grid_h.len() > 1 {
            let g_train = Gram::gaussian(&Target::Outcome.instruments(&train).0, hd, len_h);
            let g_hold = Gram::gaussian(&Target::Outcome.instruments(&hold).0, hd, len_h);
            chosen_h = select(grid_h, |lam| {
                let p = MmrProblem::with_lengthscale(Target::Outcome, len_h, lam, stat)?;
                let h = fit_h_with_gram(&train, &settings.outcome_basis, &p, &g_train)?;
                risk_from_residuals(&g_hold, &Target::Outcome.residuals(&h, &hold), stat)
            })?;
        }

        if grid_q.len() > 1 {
            let g_train = Gram::gaussian(&Target::Treatment(Arm::Pos).instruments(&train).0, qd, len_q);
            let g_hold = Gram::gaussian(&Target::Treatment(Arm::Pos).instruments(&hold).0, qd, len_q);
            for (slot, arm) in chosen_q.iter_mut().zip([Arm::Pos, Arm::Neg]) {
                let target = Target::Treatment(arm);
                *slot = select(grid_q, |lam| {
                    let p = MmrProblem::with_lengthscale(target, len_q, lam, stat)?;
                    let q = fit_q_with_gram(
                        &train,
                        &settings.treatment_basis,
                        settings.treatment_link,
                        &p,
                        &settings.gd,
                        &g_train,
                    )?;
                    risk_from_residuals(&g_hold, &target.residuals(&q, &hold), stat)
                })?;
            }
        }
    }

    let p = MmrProblem::with_lengthscale(Target::Outcome, len_h, chosen_h.0, settings.statistic)?;
    let mut h = fit_h(data, &settings.outcome_basis, &p)?;
    if let Some(m) = h.meta.as_mut() {
        m.selection = chosen_h.1;
    }
    let gram = Gram::gaussian(&qp, qd, len_q);
    let mut qs = Vec::with_capacity(2);
    for ((lam, sel), arm) in chosen_q.into_iter().zip([Arm::Pos, Arm::Neg]) {
        let p = MmrProblem::with_lengthscale(Target::Treatment(arm), len_q, lam, settings.statistic)?;
        let mut q = fit_q_with_gram(data, &settings.treatment_basis, settings.treatment_link, &p, &settings.gd, &gram)?;
        if let Some(m) = q.meta.as_mut() {
            m.selection = sel;
        }
        qs.push(q);
    }
    let q_neg = qs.pop().expect("two arms");
    let q_pos = qs.pop().expect("two arms");
    Ok(FittedBridges { h, q_pos, q_neg })
}

/// Grid point with the smallest held-out risk (first on ties); candidates
/// whose fit fails are skipped.
fn select(grid: &[f64], mut score: impl FnMut(f64) -> Result<f64>) -> Result<(f64, Vec<(f64, f64)>)> {
    let mut table = Vec::with_capacity(grid.len());
    let mut best: Option<(f64, f64)> = None;
    let mut last_err = None;
    for &lam in grid {
        match score(lam) {
            Ok(r) => {
                table.push((lam, r));
                if best.is_none_or(|(_, b)| r < b) {
                    best = Some((lam, r));
                }
            }
            Err(e) => {
                table.push((lam, f64::INFINITY));
                last_err = Some(e);
            }
        }
    }
    match best {
        Some((lam, _)) => Ok((lam, table)),
        None => Err(last_err.unwrap_or_else(|| Error::InvalidConfig("lambda grid is empty".into()))),
    }
}

/// Either the true bridges of a scenario or fitted ones.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum Bridges {
    Oracle { config: Box<ScenarioConfig> },
    Fitted(FittedBridges),
}

impl Bridges {
    pub fn oracle(cfg: &ScenarioConfig) -> Bridges {
        Bridges::Oracle { config: Box::new(cfg.clone()) }
    }

    /// Both bridges with the covariate fixed at `x`.
    pub fn at(&self, x: [f64; 2]) -> BridgesAt<'_> {
        BridgesAt(match self {
            Bridges::Oracle { config } => AtInner::Oracle(AtCovariate::new(config, x)),
            Bridges::Fitted(f) => AtInner::Fitted(f, x),
        })
    }

    pub fn h(&self, w: f64, a: Arm, x: [f64; 2]) -> f64 {
        self.at(x).h(w, a)
    }

    pub fn q(&self, z: f64, a: Arm, x: [f64; 2]) -> f64 {
        self.at(x).q(z, a)
    }
}

/// [`Bridges`] at a fixed covariate value.
#[derive(Debug, Clone, Copy)]
pub struct BridgesAt<'a>(AtInner<'a>);

#[derive(Debug, Clone, Copy)]
enum AtInner<'a> {
    Oracle(AtCovariate<'a>),
    Fitted(&'a FittedBridges, [f64; 2]),
}

impl BridgesAt<'_> {
    #[inline]
    pub fn h(&self, w: f64, a: Arm) -> f64 {
        match &self.0 {
            AtInner::Oracle(c) => c.h(w, a),
            AtInner::Fitted(f, x) => f.h.eval(w, a, *x),
        }
    }

    #[inline]
    pub fn q(&self, z: f64, a: Arm) -> f64 {
        match &self.0 {
            AtInner::Oracle(c) => c.q(z, a),
            AtInner::Fitted(f, x) => f.q_for(a).eval(z, a, *x),
        }
    }
}
