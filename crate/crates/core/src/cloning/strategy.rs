use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// How a source weight's mass is split among its destination clone blocks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Every block gets `W_S / n`.
    Symmetric,
    /// `W_S` on blocks whose row and column copy numbers match, zero elsewhere.
    Diagonal,
    NoisySymmetric,
    NoisyDiagonal,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::Symmetric, Strategy::Diagonal, Strategy::NoisySymmetric, Strategy::NoisyDiagonal];

    pub fn is_noisy(self) -> bool {
        matches!(self, Strategy::NoisySymmetric | Strategy::NoisyDiagonal)
    }

    pub fn is_diagonal(self) -> bool {
        matches!(self, Strategy::Diagonal | Strategy::NoisyDiagonal)
    }

    /// Substitute used where a diagonal split is impossible (unequal folds).
    pub fn fallback(self) -> Strategy {
        match self {
            Strategy::Diagonal => Strategy::Symmetric,
            Strategy::NoisyDiagonal => Strategy::NoisySymmetric,
            s => s,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Symmetric => "symmetric",
            Strategy::Diagonal => "diagonal",
            Strategy::NoisySymmetric => "noisy_symmetric",
            Strategy::NoisyDiagonal => "noisy_diagonal",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "symmetric" => Ok(Strategy::Symmetric),
            "diagonal" => Ok(Strategy::Diagonal),
            "noisy_symmetric" => Ok(Strategy::NoisySymmetric),
            "noisy_diagonal" => Ok(Strategy::NoisyDiagonal),
            _ => Err(format!("unknown strategy `{s}` (expected symmetric, diagonal, noisy_symmetric or noisy_diagonal)")),
        }
    }
}
