//! Preliminary regimes by weighted hinge-loss classification.
//!
//! A weight Delta_i of either sign is turned into the cost |Delta_i| and the
//! label sign(Delta_i); the learner minimizes
//! `(1/n) sum_i |Delta_i| max(0, 1 - s_i beta'f_i) + rho |beta|^2`.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arm::Arm;
use crate::bridge::{BridgeSettings, Bridges};
use crate::data::{Dataset, Observation};
use crate::error::{Error, Result};
use crate::linalg::dot;
use crate::regime::{w_features, z_features, Regime, W_FEATURES, Z_FEATURES};
use crate::rng::{rng, Stream};

/// Which proxy the regime reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Z,
    W,
}

impl Side {
    pub fn features(self, o: &Observation) -> [f64; 4] {
        match self {
            Side::Z => z_features(o.x, o.z),
            Side::W => w_features(o.x, o.w),
        }
    }

    pub fn feature_names(self) -> [&'static str; 4] {
        match self {
            Side::Z => Z_FEATURES,
            Side::W => W_FEATURES,
        }
    }

    pub fn regime(self, beta: [f64; 4]) -> Regime {
        match self {
            Side::Z => Regime::LinearZ { beta },
            Side::W => Regime::LinearW { beta },
        }
    }

    /// Per-row identified value of `d` under this side's identification formula.
    pub fn value_terms(self, data: &Dataset, bridges: &Bridges, d: &Regime) -> Vec<f64> {
        data.rows
            .iter()
            .map(|o| {
                let arm = d.decide(o.x, o.z, o.w);
                match self {
                    Side::Z => bridges.h(o.w, arm, o.x),
                    Side::W if arm == o.a => o.y * bridges.q(o.z, o.a, o.x),
                    Side::W => 0.0,
                }
            })
            .collect()
    }
}

/// h(W, 1, X) - h(W, -1, X) per row.
pub fn build_weights_z(data: &Dataset, bridges: &Bridges) -> Vec<f64> {
    data.rows
        .iter()
        .map(|o| {
            let b = bridges.at(o.x);
            b.h(o.w, Arm::Pos) - b.h(o.w, Arm::Neg)
        })
        .collect()
}

/// Y q(Z, 1, X) 1{A = 1} - Y q(Z, -1, X) 1{A = -1} per row.
pub fn build_weights_w(data: &Dataset, bridges: &Bridges) -> Vec<f64> {
    data.rows.iter().map(|o| o.a.sign() * o.y * bridges.q(o.z, o.a, o.x)).collect()
}

pub fn build_weights(side: Side, data: &Dataset, bridges: &Bridges) -> Vec<f64> {
    match side {
        Side::Z => build_weights_z(data, bridges),
        Side::W => build_weights_w(data, bridges),
    }
}

/// Result of one weighted hinge minimization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HingeFit {
    pub beta: Vec<f64>,
    pub objective: f64,
    /// Objective at beta = 0.
    pub initial_objective: f64,
    /// Coordinate-descent sweeps performed.
    pub sweeps: usize,
}

/// `(1/n) sum_i |w_i| max(0, 1 - sign(w_i) beta'f_i) + rho |beta|^2`, with
/// `features` row-major of width `dim`.
pub fn hinge_objective(features: &[f64], dim: usize, weights: &[f64], rho: f64, beta: &[f64]) -> f64 {
    let n = weights.len();
    let loss: f64 = features
        .chunks(dim)
        .zip(weights)
        .map(|(f, &w)| w.abs() * (1.0 - label(w) * dot(beta, f)).max(0.0))
        .sum();
    loss / n as f64 + rho * dot(beta, beta)
}

#[inline]
fn label(w: f64) -> f64 {
    if w >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

const MAX_SWEEPS: usize = 50_000;
const DUAL_TOL: f64 = 1e-10;
/// Upper bound on the number of candidate vertices examined when rho = 0.
const MAX_VERTICES: u128 = 5_000_000;

/// Minimize the weighted hinge objective. For rho > 0 the dual is solved by
/// coordinate descent and the support-vector system is then solved exactly;
/// rho = 0 is solved by enumerating the vertices of the piecewise-linear
/// objective and is restricted to small problems.
pub fn solve_weighted_hinge(features: &[f64], dim: usize, weights: &[f64], rho: f64) -> Result<HingeFit> {
    let n = weights.len();
    if dim == 0 || features.len() != n * dim {
        return Err(Error::Arity { expected: n * dim, got: features.len() });
    }
    if n == 0 {
        return Err(Error::InsufficientData("no rows to classify".into()));
    }
    if !weights.iter().chain(features).all(|v| v.is_finite()) {
        return Err(Error::Invalid("non-finite classification weights or features".into()));
    }
    if !(rho >= 0.0 && rho.is_finite()) {
        return Err(Error::Invalid(format!("rho must be non-negative, got {rho}")));
    }
    let initial_objective = hinge_objective(features, dim, weights, rho, &vec![0.0; dim]);
    let (beta, sweeps) = if rho > 0.0 {
        dual_solve(features, dim, weights, rho)
    } else {
        (vertex_solve(features, dim, weights)?, 0)
    };
    let objective = hinge_objective(features, dim, weights, rho, &beta);
    Ok(HingeFit { beta, objective, initial_objective, sweeps })
}

fn dual_solve(features: &[f64], dim: usize, weights: &[f64], rho: f64) -> (Vec<f64>, usize) {
    let n = weights.len();
    let cap: Vec<f64> = weights.iter().map(|w| w.abs() / (2.0 * n as f64 * rho)).collect();
    let y: Vec<f64> = weights.iter().map(|&w| label(w)).collect();
    let qii: Vec<f64> = features.chunks(dim).map(|f| dot(f, f)).collect();
    let mut alpha = vec![0.0; n];
    let mut beta = vec![0.0; dim];
    let mut sweeps = 0;
    while sweeps < MAX_SWEEPS {
        sweeps += 1;
        let mut max_violation: f64 = 0.0;
        for i in 0..n {
            if cap[i] == 0.0 || qii[i] == 0.0 {
                continue;
            }
            let f = &features[i * dim..(i + 1) * dim];
            let g = y[i] * dot(&beta, f) - 1.0;
            let pg = if alpha[i] <= 0.0 {
                g.min(0.0)
            } else if alpha[i] >= cap[i] {
                g.max(0.0)
            } else {
                g
            };
            max_violation = max_violation.max(pg.abs());
            if pg != 0.0 {
                let next = (alpha[i] - g / qii[i]).clamp(0.0, cap[i]);
                let step = (next - alpha[i]) * y[i];
                for (b, fk) in beta.iter_mut().zip(f) {
                    *b += step * fk;
                }
                alpha[i] = next;
            }
        }
        if max_violation < DUAL_TOL {
            break;
        }
    }
    let polished = polish(features, dim, &y, &cap, &alpha);
    (polished.unwrap_or(beta), sweeps)
}

/// Solve the KKT system for the free support vectors exactly and keep the
/// result if it satisfies every optimality condition.
fn polish(features: &[f64], dim: usize, y: &[f64], cap: &[f64], alpha: &[f64]) -> Option<Vec<f64>> {
    let n = y.len();
    let eps = 1e-9;
    let row = |i: usize| &features[i * dim..(i + 1) * dim];
    let at_cap = |i: usize| cap[i] > 0.0 && alpha[i] >= cap[i] * (1.0 - eps);
    let free: Vec<usize> = (0..n).filter(|&i| alpha[i] > cap[i] * eps && !at_cap(i)).collect();
    if free.len() > dim {
        return None;
    }
    let mut base = vec![0.0; dim];
    for i in (0..n).filter(|&i| at_cap(i)) {
        for (b, f) in base.iter_mut().zip(row(i)) {
            *b += cap[i] * y[i] * f;
        }
    }
    let s = free.len();
    let mut a_free = vec![0.0; s];
    if s > 0 {
        let g = DMatrix::from_fn(s, s, |r, c| y[free[r]] * y[free[c]] * dot(row(free[r]), row(free[c])));
        let rhs = DVector::from_fn(s, |r, _| 1.0 - y[free[r]] * dot(row(free[r]), &base));
        let sol = g.lu().solve(&rhs)?;
        a_free = sol.iter().copied().collect();
    }
    let mut beta = base;
    for (k, &i) in free.iter().enumerate() {
        if !(a_free[k] >= -1e-9 * cap[i] && a_free[k] <= cap[i] * (1.0 + 1e-9)) {
            return None;
        }
        for (b, f) in beta.iter_mut().zip(row(i)) {
            *b += a_free[k] * y[i] * f;
        }
    }
    let tol = 1e-7;
    for i in 0..n {
        if cap[i] == 0.0 {
            continue;
        }
        let m = y[i] * dot(&beta, row(i));
        let ok = if free.contains(&i) {
            (m - 1.0).abs() <= tol
        } else if at_cap(i) {
            m <= 1.0 + tol
        } else {
            m >= 1.0 - tol
        };
        if !ok {
            return None;
        }
    }
    beta.iter().all(|b| b.is_finite()).then_some(beta)
}

fn binomial(n: usize, k: usize) -> u128 {
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// Minimizer of the unpenalized objective over the points where `dim`
/// independent hinges are simultaneously at their kink.
fn vertex_solve(features: &[f64], dim: usize, weights: &[f64]) -> Result<Vec<f64>> {
    let active: Vec<usize> = (0..weights.len()).filter(|&i| weights[i] != 0.0).collect();
    if active.len() < dim {
        return Ok(vec![0.0; dim]);
    }
    if binomial(active.len(), dim) > MAX_VERTICES {
        return Err(Error::Invalid(format!(
            "rho = 0 is only supported for small problems ({} weighted rows given)",
            active.len()
        )));
    }
    let row = |i: usize| &features[i * dim..(i + 1) * dim];
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut idx: Vec<usize> = (0..dim).collect();
    loop {
        let m = DMatrix::from_fn(dim, dim, |r, c| row(active[idx[r]])[c]);
        let rhs = DVector::from_fn(dim, |r, _| label(weights[active[idx[r]]]));
        if m.determinant().abs() > 1e-12 {
            if let Some(b) = m.lu().solve(&rhs) {
                let b: Vec<f64> = b.iter().copied().collect();
                let obj = hinge_objective(features, dim, weights, 0.0, &b);
                if best.as_ref().map_or(true, |(o, _)| obj < o - 1e-12 * o.abs().max(1.0)) {
                    best = Some((obj, b));
                }
            }
        }
        // next combination in lexicographic order
        let mut k = dim;
        loop {
            if k == 0 {
                return best
                    .map(|(_, b)| b)
                    .ok_or_else(|| Error::Invalid("features do not span the score space".into()));
            }
            k -= 1;
            if idx[k] < active.len() - dim + k {
                idx[k] += 1;
                for j in k + 1..dim {
                    idx[j] = idx[j - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Assignment of rows to cross-validation folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub fold_of: Vec<usize>,
}

impl FoldPlan {
    /// Seeded uniform permutation cut into `k` contiguous blocks.
    pub fn seeded(n: usize, k: usize, seed: u64) -> Result<FoldPlan> {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng(seed, Stream::Folds));
        let mut fold_of = vec![0; n];
        for (pos, &i) in perm.iter().enumerate() {
            fold_of[i] = pos * k / n.max(1);
        }
        FoldPlan::from_ids(fold_of, k)
    }

    /// Explicit fold ids in `0..k`.
    pub fn from_ids(fold_of: Vec<usize>, k: usize) -> Result<FoldPlan> {
        if k < 2 {
            return Err(Error::InvalidConfig(format!("need at least 2 folds, got {k}")));
        }
        if let Some(&bad) = fold_of.iter().find(|&&f| f >= k) {
            return Err(Error::Invalid(format!("fold id {bad} out of range for {k} folds")));
        }
        let plan = FoldPlan { k, fold_of };
        for f in 0..k {
            let (train, test) = plan.split(f);
            if train.len() < 2 || test.len() < 2 {
                return Err(Error::InsufficientData(format!(
                    "fold {f} leaves {} training and {} held-out rows",
                    train.len(),
                    test.len()
                )));
            }
        }
        Ok(plan)
    }

    /// (training, held-out) row indices for fold `f`.
    pub fn split(&self, f: usize) -> (Vec<usize>, Vec<usize>) {
        (0..self.fold_of.len()).partition(|&i| self.fold_of[i] != f)
    }
}

/// Policy-learning settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySettings {
    pub rho_grid: Vec<f64>,
    pub folds: usize,
    /// Refit fitted bridges on each fold's training rows.
    pub per_fold_bridges: bool,
}

impl PolicySettings {
    pub fn from_tuning(t: &crate::config::Tuning) -> PolicySettings {
        PolicySettings { rho_grid: t.rho_grid.clone(), folds: t.folds, per_fold_bridges: t.per_fold_bridges }
    }
}

/// Held-out values for one candidate rho.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    pub rho: f64,
    pub fold_values: Vec<f64>,
    pub mean_value: f64,
}

/// A linear regime together with how it was tuned.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LearnedRegime {
    pub side: Side,
    pub regime: Regime,
    pub beta: [f64; 4],
    pub features: [String; 4],
    pub rho: f64,
    pub objective: f64,
    pub cv: Vec<CvRow>,
}

/// Bridges to use on each fold's training rows.
pub fn fold_bridges(
    data: &Dataset,
    bridges: &Bridges,
    settings: Option<&BridgeSettings>,
    plan: &FoldPlan,
) -> Result<Vec<Bridges>> {
    match (bridges, settings) {
        (Bridges::Fitted(fb), Some(s)) => (0..plan.k)
            .map(|f| Ok(Bridges::Fitted(fb.refit(&data.subset(&plan.split(f).0), s)?)))
            .collect(),
        _ => Ok(vec![bridges.clone(); plan.k]),
    }
}

fn fit_side(side: Side, data: &Dataset, bridges: &Bridges, rho: f64) -> Result<HingeFit> {
    let feats: Vec<f64> = data.rows.iter().flat_map(|o| side.features(o)).collect();
    let weights = build_weights(side, data, bridges);
    solve_weighted_hinge(&feats, 4, &weights, rho)
}

fn to_beta(v: &[f64]) -> [f64; 4] {
    [v[0], v[1], v[2], v[3]]
}

/// Cross-validated choice of rho followed by a full-data refit.
/// `per_fold[f]` are the bridges used for fold `f`'s training and scoring.
pub fn learn_side(
    side: Side,
    data: &Dataset,
    bridges: &Bridges,
    per_fold: &[Bridges],
    rho_grid: &[f64],
    plan: &FoldPlan,
) -> Result<LearnedRegime> {
    if rho_grid.is_empty() {
        return Err(Error::InvalidConfig("rho grid is empty".into()));
    }
    if plan.fold_of.len() != data.len() || per_fold.len() != plan.k {
        return Err(Error::Invalid("fold plan does not match the data".into()));
    }
    let mut grid = rho_grid.to_vec();
    grid.sort_by(f64::total_cmp);
    grid.dedup();

    let cv = if grid.len() == 1 {
        vec![CvRow { rho: grid[0], fold_values: Vec::new(), mean_value: f64::NAN }]
    } else {
        let splits: Vec<(Dataset, Dataset)> = (0..plan.k)
            .map(|f| {
                let (tr, te) = plan.split(f);
                (data.subset(&tr), data.subset(&te))
            })
            .collect();
        let jobs: Vec<(usize, usize)> = (0..grid.len()).flat_map(|r| (0..plan.k).map(move |f| (r, f))).collect();
        let scores: Vec<f64> = jobs
            .par_iter()
            .map(|&(r, f)| {
                let (train, test) = &splits[f];
                let fit = fit_side(side, train, &per_fold[f], grid[r])?;
                let d = side.regime(to_beta(&fit.beta));
                let terms = side.value_terms(test, &per_fold[f], &d);
                Ok(terms.iter().sum::<f64>() / terms.len() as f64)
            })
            .collect::<Result<_>>()?;
        grid.iter()
            .enumerate()
            .map(|(r, &rho)| {
                let fold_values = scores[r * plan.k..(r + 1) * plan.k].to_vec();
                let mean_value = fold_values.iter().sum::<f64>() / plan.k as f64;
                CvRow { rho, fold_values, mean_value }
            })
            .collect()
    };
    let mut best = 0;
    for (r, row) in cv.iter().enumerate() {
        if row.mean_value > cv[best].mean_value {
            best = r;
        }
    }
    let rho = cv[best].rho;
    let fit = fit_side(side, data, bridges, rho)?;
    let beta = to_beta(&fit.beta);
    Ok(LearnedRegime {
        side,
        regime: side.regime(beta),
        beta,
        features: side.feature_names().map(String::from),
        rho,
        objective: fit.objective,
        cv,
    })
}

/// Learn both preliminary regimes, sharing the per-fold bridge refits.
pub fn learn_regimes(
    data: &Dataset,
    bridges: &Bridges,
    bridge_settings: Option<&BridgeSettings>,
    policy: &PolicySettings,
    plan: &FoldPlan,
) -> Result<(LearnedRegime, LearnedRegime)> {
    let per_fold = if policy.per_fold_bridges && policy.rho_grid.len() > 1 {
        fold_bridges(data, bridges, bridge_settings, plan)?
    } else {
        vec![bridges.clone(); plan.k]
    };
    let dz = learn_side(Side::Z, data, bridges, &per_fold, &policy.rho_grid, plan)?;
    let dw = learn_side(Side::W, data, bridges, &per_fold, &policy.rho_grid, plan)?;
    Ok((dz, dw))
}

/// d_z with the bridges held fixed across folds.
pub fn learn_dz(data: &Dataset, bridges: &Bridges, rho_grid: &[f64], folds: usize, seed: u64) -> Result<LearnedRegime> {
    let plan = FoldPlan::seeded(data.len(), folds, seed)?;
    learn_side(Side::Z, data, bridges, &vec![bridges.clone(); folds], rho_grid, &plan)
}

/// d_w with the bridges held fixed across folds.
pub fn learn_dw(data: &Dataset, bridges: &Bridges, rho_grid: &[f64], folds: usize, seed: u64) -> Result<LearnedRegime> {
    let plan = FoldPlan::seeded(data.len(), folds, seed)?;
    learn_side(Side::W, data, bridges, &vec![bridges.clone(); folds], rho_grid, &plan)
}
