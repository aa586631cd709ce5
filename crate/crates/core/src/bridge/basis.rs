//! Finite basis expansions for the confounding bridges.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::arm::Arm;
use crate::error::{Error, Result};

/// An input variable a basis term may multiply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Var {
    W,
    Z,
    X1,
    X2,
    /// (1 + a) / 2
    Treat,
    /// a itself, -1 or +1
    Sign,
}

impl Var {
    fn name(self) -> &'static str {
        match self {
            Var::W => "w",
            Var::Z => "z",
            Var::X1 => "x1",
            Var::X2 => "x2",
            Var::Treat => "treat",
            Var::Sign => "sign",
        }
    }
}

/// A product of input variables; the empty product is the intercept.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Term(pub Vec<Var>);

impl Term {
    pub fn intercept() -> Term {
        Term(Vec::new())
    }

    /// Value at (proxy, a, x); `proxy` is w for an outcome bridge, z for a
    /// treatment bridge.
    #[inline]
    pub fn eval(&self, proxy: f64, a: Arm, x: [f64; 2]) -> f64 {
        self.0.iter().fold(1.0, |acc, v| {
            acc * match v {
                Var::W | Var::Z => proxy,
                Var::X1 => x[0],
                Var::X2 => x[1],
                Var::Treat => a.treated(),
                Var::Sign => a.sign(),
            }
        })
    }

    fn check(&self, kind: BridgeKind) -> Result<()> {
        let ok = self.0.iter().all(|v| match kind {
            BridgeKind::OutcomeH => !matches!(v, Var::Z),
            BridgeKind::TreatmentQ => matches!(v, Var::Z | Var::X1 | Var::X2),
        });
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidBasis { term: self.to_string(), kind: kind.name() })
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("1");
        }
        let names: Vec<&str> = self.0.iter().map(|v| v.name()).collect();
        f.write_str(&names.join("*"))
    }
}

impl FromStr for Term {
    type Err = Error;

    fn from_str(s: &str) -> Result<Term> {
        let s = s.trim();
        if s == "1" {
            return Ok(Term::intercept());
        }
        s.split('*')
            .map(|p| match p.trim() {
                "w" => Ok(Var::W),
                "z" => Ok(Var::Z),
                "x1" => Ok(Var::X1),
                "x2" => Ok(Var::X2),
                "treat" => Ok(Var::Treat),
                "sign" => Ok(Var::Sign),
                other => Err(Error::Invalid(format!("unknown basis variable `{other}`"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(Term)
    }
}

impl TryFrom<String> for Term {
    type Error = Error;

    fn try_from(s: String) -> Result<Term> {
        s.parse()
    }
}

impl From<Term> for String {
    fn from(t: Term) -> String {
        t.to_string()
    }
}

pub fn parse_basis(terms: &[&str]) -> Result<Vec<Term>> {
    terms.iter().map(|t| t.parse()).collect()
}

/// {1, w, x1, x2, treat, w*treat, x1*treat, x2*treat}: exact for the outcome
/// bridge whenever b1 is affine, b2 constant and b3 zero.
pub fn outcome_linear_basis() -> Vec<Term> {
    parse_basis(&["1", "w", "x1", "x2", "treat", "w*treat", "x1*treat", "x2*treat"]).expect("static basis")
}

/// {1, z, x1, x2}: the exponent of the treatment bridge, fitted per arm.
pub fn treatment_linear_basis() -> Vec<Term> {
    parse_basis(&["1", "z", "x1", "x2"]).expect("static basis")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BridgeKind {
    /// h(w, a, x)
    OutcomeH,
    /// q(z, a, x) for a fixed arm a
    TreatmentQ,
}

impl BridgeKind {
    pub fn name(self) -> &'static str {
        match self {
            BridgeKind::OutcomeH => "outcome_h",
            BridgeKind::TreatmentQ => "treatment_q",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    /// theta' phi
    Linear,
    /// 1 + exp(eta' psi)
    OnePlusExp,
}

/// Record of how a bridge was fitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitMeta {
    /// Penalty actually used (after any escalation).
    pub lambda: f64,
    pub lengthscale: f64,
    pub statistic: super::Statistic,
    /// Empirical risk (without the penalty) at the returned coefficients.
    pub risk: f64,
    /// Number of decade increases applied to the penalty.
    pub lambda_escalations: u32,
    /// Gradient-descent iterations (0 for closed-form fits).
    pub iterations: usize,
    /// Final gradient inf-norm of the penalized risk.
    pub grad_norm: f64,
    /// (lambda, held-out risk) pairs when the penalty was selected.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub selection: Vec<(f64, f64)>,
}

/// A fitted confounding bridge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgeFn {
    pub kind: BridgeKind,
    pub link: Link,
    pub basis: Vec<Term>,
    pub coef: Vec<f64>,
    /// The arm a treatment bridge was fitted for.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arm: Option<Arm>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<FitMeta>,
}

impl BridgeFn {
    pub fn new(kind: BridgeKind, link: Link, basis: Vec<Term>, coef: Vec<f64>, arm: Option<Arm>) -> Result<BridgeFn> {
        if basis.len() != coef.len() {
            return Err(Error::Invalid(format!(
                "basis has {} terms but {} coefficients were given",
                basis.len(),
                coef.len()
            )));
        }
        for t in &basis {
            t.check(kind)?;
        }
        if kind == BridgeKind::TreatmentQ && arm.is_none() {
            return Err(Error::Invalid("a treatment bridge needs its target arm".into()));
        }
        Ok(BridgeFn { kind, link, basis, coef, arm, meta: None })
    }

    /// Linear predictor sum_k coef_k * term_k(proxy, a, x).
    #[inline]
    pub fn predictor(&self, proxy: f64, a: Arm, x: [f64; 2]) -> f64 {
        self.basis.iter().zip(&self.coef).map(|(t, c)| c * t.eval(proxy, a, x)).sum()
    }

    #[inline]
    pub fn eval(&self, proxy: f64, a: Arm, x: [f64; 2]) -> f64 {
        let s = self.predictor(proxy, a, x);
        match self.link {
            Link::Linear => s,
            Link::OnePlusExp => 1.0 + s.exp(),
        }
    }

    /// Checked evaluation from a flat input `[proxy, a, x1, x2]`.
    pub fn evaluate(&self, inputs: &[f64]) -> Result<f64> {
        if inputs.len() != 4 {
            return Err(Error::Arity { expected: 4, got: inputs.len() });
        }
        let a = Arm::from_value(inputs[1])
            .ok_or_else(|| Error::Invalid(format!("treatment must be -1 or 1, got {}", inputs[1])))?;
        Ok(self.eval(inputs[0], a, [inputs[2], inputs[3]]))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<BridgeFn> {
        let b: BridgeFn = serde_json::from_str(s)?;
        BridgeFn::new(b.kind, b.link, b.basis.clone(), b.coef.clone(), b.arm)?;
        Ok(b)
    }
}

/// Row-major design matrix of `basis` over (proxy, a, x) rows.
pub fn design<'a>(basis: &[Term], rows: impl Iterator<Item = (f64, Arm, [f64; 2])> + 'a) -> Vec<f64> {
    rows.flat_map(|(p, a, x)| basis.iter().map(move |t| t.eval(p, a, x)).collect::<Vec<_>>()).collect()
}
