use serde::{Deserialize, Serialize};

/// A treatment arm, encoded as -1 / +1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "i8", into = "i8")]
pub enum Arm {
    Neg,
    Pos,
}

impl Arm {
    pub const BOTH: [Arm; 2] = [Arm::Pos, Arm::Neg];

    /// sign(score) with sign(0) = +1.
    #[inline]
    pub fn from_score(score: f64) -> Arm {
        if score >= 0.0 {
            Arm::Pos
        } else {
            Arm::Neg
        }
    }

    /// -1.0 or +1.0.
    #[inline]
    pub fn sign(self) -> f64 {
        match self {
            Arm::Pos => 1.0,
            Arm::Neg => -1.0,
        }
    }

    /// (1 + a) / 2, the treated indicator.
    #[inline]
    pub fn treated(self) -> f64 {
        match self {
            Arm::Pos => 1.0,
            Arm::Neg => 0.0,
        }
    }

    pub fn flip(self) -> Arm {
        match self {
            Arm::Pos => Arm::Neg,
            Arm::Neg => Arm::Pos,
        }
    }

    pub fn from_value(v: f64) -> Option<Arm> {
        if v == 1.0 {
            Some(Arm::Pos)
        } else if v == -1.0 {
            Some(Arm::Neg)
        } else {
            None
        }
    }
}

impl From<Arm> for i8 {
    fn from(a: Arm) -> i8 {
        match a {
            Arm::Pos => 1,
            Arm::Neg => -1,
        }
    }
}

impl TryFrom<i8> for Arm {
    type Error = String;

    fn try_from(v: i8) -> Result<Arm, String> {
        match v {
            1 => Ok(Arm::Pos),
            -1 => Ok(Arm::Neg),
            other => Err(format!("treatment arm must be -1 or 1, got {other}")),
        }
    }
}

impl std::fmt::Display for Arm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", i8::from(*self))
    }
}
