//! Kernel-weighted moment-restriction risks and their minimizers.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::basis::{design, BridgeFn, BridgeKind, FitMeta, Link, Term};
use super::kernel::{median_pairwise_distance, Gram};
use crate::arm::Arm;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{dot, solve_spd};

/// Largest penalty tried before a normal-equation system is declared singular.
pub const LAMBDA_CAP: f64 = 1e3;

/// Exponent magnitude beyond which a treatment-bridge descent is treated as
/// diverging (q would exceed e^30).
pub const ETA_LIMIT: f64 = 30.0;

/// Whether the diagonal i = j enters the double sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Statistic {
    /// Diagonal excluded, normalized by n(n - 1).
    #[default]
    U,
    /// Diagonal included, normalized by n^2.
    V,
}

/// Which conditional moment the risk targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    /// E[Y - h(W, A, X) | Z, A, X] = 0
    Outcome,
    /// E[1 - 1{A = a} q(Z, a, X) | W, X] = 0
    Treatment(Arm),
}

impl Target {
    pub fn kind(self) -> BridgeKind {
        match self {
            Target::Outcome => BridgeKind::OutcomeH,
            Target::Treatment(_) => BridgeKind::TreatmentQ,
        }
    }

    /// Kernel inputs: (z, a, x1, x2) for the outcome bridge, (w, x1, x2) for
    /// the treatment bridge. Returns the row-major points and their dimension.
    pub fn instruments(self, data: &Dataset) -> (Vec<f64>, usize) {
        match self {
            Target::Outcome => {
                (data.rows.iter().flat_map(|o| [o.z, o.a.sign(), o.x[0], o.x[1]]).collect(), 4)
            }
            Target::Treatment(_) => (data.rows.iter().flat_map(|o| [o.w, o.x[0], o.x[1]]).collect(), 3),
        }
    }

    /// Residuals r_i of `bridge` on `data`.
    pub fn residuals(self, bridge: &BridgeFn, data: &Dataset) -> Vec<f64> {
        match self {
            Target::Outcome => data.rows.iter().map(|o| o.y - bridge.eval(o.w, o.a, o.x)).collect(),
            Target::Treatment(arm) => data
                .rows
                .iter()
                .map(|o| if o.a == arm { 1.0 - bridge.eval(o.z, arm, o.x) } else { 1.0 })
                .collect(),
        }
    }
}

/// One penalized empirical risk minimization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MmrProblem {
    pub target: Target,
    pub lengthscale: f64,
    pub lambda: f64,
    pub statistic: Statistic,
}

impl MmrProblem {
    /// Problem with the median-heuristic lengthscale of `data`'s instruments.
    pub fn new(target: Target, data: &Dataset, lambda: f64, statistic: Statistic) -> Result<MmrProblem> {
        let (pts, dim) = target.instruments(data);
        let lengthscale = median_pairwise_distance(&pts, dim)?;
        MmrProblem::with_lengthscale(target, lengthscale, lambda, statistic)
    }

    pub fn with_lengthscale(target: Target, lengthscale: f64, lambda: f64, statistic: Statistic) -> Result<MmrProblem> {
        if !(lengthscale > 0.0 && lengthscale.is_finite()) {
            return Err(Error::Invalid(format!("kernel lengthscale must be positive, got {lengthscale}")));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::Invalid(format!("penalty must be non-negative, got {lambda}")));
        }
        Ok(MmrProblem { target, lengthscale, lambda, statistic })
    }

    pub fn gram(&self, data: &Dataset) -> Gram {
        let (pts, dim) = self.target.instruments(data);
        Gram::gaussian(&pts, dim, self.lengthscale)
    }

    fn meta(&self, risk: f64) -> FitMeta {
        FitMeta {
            lambda: self.lambda,
            lengthscale: self.lengthscale,
            statistic: self.statistic,
            risk,
            lambda_escalations: 0,
            iterations: 0,
            grad_norm: 0.0,
            selection: Vec::new(),
        }
    }
}

fn normalizer(n: usize, statistic: Statistic) -> Result<f64> {
    match statistic {
        Statistic::U if n < 2 => Err(Error::InsufficientData(format!(
            "the U-statistic risk needs at least two rows, got {n}"
        ))),
        Statistic::U => Ok((n * (n - 1)) as f64),
        Statistic::V if n == 0 => Err(Error::InsufficientData("empty dataset".into())),
        Statistic::V => Ok((n * n) as f64),
    }
}

/// K0 r, where K0 is the Gram matrix with its diagonal removed under U.
fn k0_mul(gram: &Gram, r: &[f64], statistic: Statistic) -> Vec<f64> {
    let mut kr = gram.matvec(r);
    if statistic == Statistic::U {
        for (i, v) in kr.iter_mut().enumerate() {
            *v -= gram.get(i, i) * r[i];
        }
    }
    kr
}

/// Double-sum risk of residuals `r` under `gram`.
pub fn risk_from_residuals(gram: &Gram, r: &[f64], statistic: Statistic) -> Result<f64> {
    let norm = normalizer(r.len(), statistic)?;
    Ok(dot(r, &k0_mul(gram, r, statistic)) / norm)
}

/// Empirical risk of `bridge` (without penalty).
pub fn empirical_risk(problem: &MmrProblem, bridge: &BridgeFn, data: &Dataset) -> Result<f64> {
    normalizer(data.len(), problem.statistic)?;
    let r = problem.target.residuals(bridge, data);
    risk_from_residuals(&problem.gram(data), &r, problem.statistic)
}

struct QuadSolution {
    theta: Vec<f64>,
    lambda: f64,
    escalations: u32,
    grad_norm: f64,
}

/// Minimize (t - M theta)' K0 (t - M theta) / N + lambda |theta|^2 with M row-major n x p.
fn solve_quadratic(gram: &Gram, m: &[f64], p: usize, t: &[f64], statistic: Statistic, lambda: f64) -> Result<QuadSolution> {
    let n = t.len();
    let norm = normalizer(n, statistic)?;
    let mut k0m = gram.matmat(m, p);
    if statistic == Statistic::U {
        for i in 0..n {
            let kii = gram.get(i, i);
            for c in 0..p {
                k0m[i * p + c] -= kii * m[i * p + c];
            }
        }
    }
    let mut a = DMatrix::<f64>::zeros(p, p);
    let mut b = DVector::<f64>::zeros(p);
    for i in 0..n {
        let mi = &m[i * p..(i + 1) * p];
        let ki = &k0m[i * p..(i + 1) * p];
        for r in 0..p {
            b[r] += ki[r] * t[i];
            for c in 0..p {
                a[(r, c)] += mi[r] * ki[c];
            }
        }
    }
    a /= norm;
    b /= norm;
    a = (&a + a.transpose()) * 0.5;

    let mut lam = lambda;
    let mut escalations = 0;
    loop {
        let mut sys = a.clone();
        for d in 0..p {
            sys[(d, d)] += lam;
        }
        if let Some(theta) = solve_spd(&sys, &b) {
            let g = (&sys * &theta - &b) * 2.0;
            return Ok(QuadSolution {
                theta: theta.iter().copied().collect(),
                lambda: lam,
                escalations,
                grad_norm: g.amax(),
            });
        }
        lam = if lam > 0.0 { lam * 10.0 } else { 1e-8 };
        escalations += 1;
        if lam > LAMBDA_CAP {
            return Err(Error::Singular { lambda: lam / 10.0 });
        }
    }
}

/// Outcome bridge with a linear link by closed-form solve.
pub fn fit_h(data: &Dataset, basis: &[Term], problem: &MmrProblem) -> Result<BridgeFn> {
    fit_h_with_gram(data, basis, problem, &problem.gram(data))
}

/// As [`fit_h`] with a precomputed Gram matrix over `data`'s outcome instruments.
pub fn fit_h_with_gram(data: &Dataset, basis: &[Term], problem: &MmrProblem, gram: &Gram) -> Result<BridgeFn> {
    if problem.target != Target::Outcome {
        return Err(Error::Invalid("fit_h needs an outcome problem".into()));
    }
    let mut h = BridgeFn::new(BridgeKind::OutcomeH, Link::Linear, basis.to_vec(), vec![0.0; basis.len()], None)?;
    let m = design(basis, data.rows.iter().map(|o| (o.w, o.a, o.x)));
    let y: Vec<f64> = data.rows.iter().map(|o| o.y).collect();
    let sol = solve_quadratic(gram, &m, basis.len(), &y, problem.statistic, problem.lambda)?;
    h.coef = sol.theta;
    let risk = risk_from_residuals(gram, &Target::Outcome.residuals(&h, data), problem.statistic)?;
    h.meta = Some(FitMeta {
        lambda: sol.lambda,
        lambda_escalations: sol.escalations,
        grad_norm: sol.grad_norm,
        ..problem.meta(risk)
    });
    Ok(h)
}

/// Gradient-descent settings for the exponential treatment-bridge link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GdSettings {
    pub max_iter: usize,
    pub tol: f64,
    pub armijo: f64,
}

impl Default for GdSettings {
    fn default() -> Self {
        GdSettings { max_iter: 2000, tol: 1e-6, armijo: 1e-4 }
    }
}

/// Penalized treatment-bridge risk for the 1 + exp link as a function of eta.
pub struct QObjective<'a> {
    gram: &'a Gram,
    psi: Vec<f64>,
    p: usize,
    in_arm: Vec<bool>,
    lambda: f64,
    statistic: Statistic,
    norm: f64,
}

impl<'a> QObjective<'a> {
    pub fn new(data: &Dataset, basis: &[Term], arm: Arm, lambda: f64, statistic: Statistic, gram: &'a Gram) -> Result<Self> {
        let norm = normalizer(data.len(), statistic)?;
        Ok(QObjective {
            gram,
            psi: design(basis, data.rows.iter().map(|o| (o.z, arm, o.x))),
            p: basis.len(),
            in_arm: data.rows.iter().map(|o| o.a == arm).collect(),
            lambda,
            statistic,
            norm,
        })
    }

    fn exps(&self, eta: &[f64]) -> Vec<f64> {
        self.psi.chunks(self.p).zip(&self.in_arm).map(|(row, &i)| if i { dot(row, eta).exp() } else { 0.0 }).collect()
    }

    fn residuals(e: &[f64], in_arm: &[bool]) -> Vec<f64> {
        e.iter().zip(in_arm).map(|(e, &i)| if i { -e } else { 1.0 }).collect()
    }

    /// Unpenalized risk at eta.
    pub fn risk(&self, eta: &[f64]) -> f64 {
        let r = Self::residuals(&self.exps(eta), &self.in_arm);
        dot(&r, &k0_mul(self.gram, &r, self.statistic)) / self.norm
    }

    /// Penalized objective.
    pub fn value(&self, eta: &[f64]) -> f64 {
        self.risk(eta) + self.lambda * dot(eta, eta)
    }

    /// Penalized objective and its analytic gradient.
    pub fn value_and_grad(&self, eta: &[f64]) -> (f64, Vec<f64>) {
        let e = self.exps(eta);
        let r = Self::residuals(&e, &self.in_arm);
        let kr = k0_mul(self.gram, &r, self.statistic);
        let value = dot(&r, &kr) / self.norm + self.lambda * dot(eta, eta);
        let mut g: Vec<f64> = eta.iter().map(|v| 2.0 * self.lambda * v).collect();
        for (i, row) in self.psi.chunks(self.p).enumerate() {
            if self.in_arm[i] {
                let s = -2.0 * kr[i] * e[i] / self.norm;
                for (gk, f) in g.iter_mut().zip(row) {
                    *gk += s * f;
                }
            }
        }
        (value, g)
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Treatment bridge for `problem.target`'s arm.
pub fn fit_q(data: &Dataset, basis: &[Term], link: Link, problem: &MmrProblem, gd: &GdSettings) -> Result<BridgeFn> {
    fit_q_with_gram(data, basis, link, problem, gd, &problem.gram(data))
}

/// As [`fit_q`] with a precomputed Gram matrix over `data`'s treatment instruments.
pub fn fit_q_with_gram(
    data: &Dataset,
    basis: &[Term],
    link: Link,
    problem: &MmrProblem,
    gd: &GdSettings,
    gram: &Gram,
) -> Result<BridgeFn> {
    let Target::Treatment(arm) = problem.target else {
        return Err(Error::Invalid("fit_q needs a treatment problem".into()));
    };
    let p = basis.len();
    let mut q = BridgeFn::new(BridgeKind::TreatmentQ, link, basis.to_vec(), vec![0.0; p], Some(arm))?;
    match link {
        Link::Linear => {
            let m: Vec<f64> = data
                .rows
                .iter()
                .flat_map(|o| {
                    let ind = if o.a == arm { 1.0 } else { 0.0 };
                    basis.iter().map(move |t| ind * t.eval(o.z, arm, o.x)).collect::<Vec<_>>()
                })
                .collect();
            let ones = vec![1.0; data.len()];
            let sol = solve_quadratic(gram, &m, p, &ones, problem.statistic, problem.lambda)?;
            q.coef = sol.theta;
            let risk = risk_from_residuals(gram, &problem.target.residuals(&q, data), problem.statistic)?;
            q.meta = Some(FitMeta {
                lambda: sol.lambda,
                lambda_escalations: sol.escalations,
                grad_norm: sol.grad_norm,
                ..problem.meta(risk)
            });
        }
        Link::OnePlusExp => {
            // The U-statistic risk can be unbounded below along some
            // directions; a diverging descent is retried with a larger penalty.
            let mut lam = problem.lambda;
            let mut escalations = 0;
            loop {
                let obj = QObjective::new(data, basis, arm, lam, problem.statistic, gram)?;
                match descend(&obj, p, gd) {
                    Ok((eta, iterations, grad_norm)) => {
                        q.coef = eta;
                        q.meta = Some(FitMeta {
                            lambda: lam,
                            lambda_escalations: escalations,
                            iterations,
                            grad_norm,
                            ..problem.meta(obj.risk(&q.coef))
                        });
                        break;
                    }
                    Err(e) => {
                        lam = if lam > 0.0 { lam * 10.0 } else { 1e-8 };
                        escalations += 1;
                        if lam > LAMBDA_CAP {
                            return Err(e);
                        }
                    }
                }
            }
        }
    }
    Ok(q)
}

/// Gradient descent from zero with Armijo backtracking; trial steps start
/// from the Barzilai-Borwein length.
fn descend(obj: &QObjective<'_>, p: usize, gd: &GdSettings) -> Result<(Vec<f64>, usize, f64)> {
    let mut eta = vec![0.0; p];
    let (mut f, mut g) = obj.value_and_grad(&eta);
    let mut step = 1.0 / inf_norm(&g).max(1.0);
    for it in 0..gd.max_iter {
        let gn = inf_norm(&g);
        if gn < gd.tol {
            return Ok((eta, it, gn));
        }
        let g2 = dot(&g, &g);
        let mut t = step;
        let (cand, fc, gc) = loop {
            let cand: Vec<f64> = eta.iter().zip(&g).map(|(e, gk)| e - t * gk).collect();
            let (fc, gc) = obj.value_and_grad(&cand);
            if fc.is_finite() && fc <= f - gd.armijo * t * g2 {
                break (cand, fc, gc);
            }
            t *= 0.5;
            if t * gn < 1e-300 || t < 1e-30 {
                // no representable decrease remains along -g
                return Ok((eta, it, gn));
            }
        };
        if inf_norm(&cand) > ETA_LIMIT {
            return Err(Error::NonConvergence { iterations: it + 1, grad_norm: inf_norm(&gc) });
        }
        let s: Vec<f64> = cand.iter().zip(&eta).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gc.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        step = if sy > 0.0 { dot(&s, &s) / sy } else { 2.0 * t };
        eta = cand;
        f = fc;
        g = gc;
    }
    let gn = inf_norm(&g);
    if gn < gd.tol {
        Ok((eta, gd.max_iter, gn))
    } else {
        Err(Error::NonConvergence { iterations: gd.max_iter, grad_norm: gn })
    }
}
