//! Transmit power selection under an unobserved channel state.

pub mod belief;
pub mod heuristics;
pub mod mdp;
pub mod table;
pub mod vi;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use belief::{belief_update, observation_likelihood, BeliefTracker, BeliefVector};
pub use heuristics::{equal_action, expected_cost, greedy_action, mlph_action, MlphPolicy};
pub use mdp::{build_mdp, CostModel, MdpModel, MdpParams};
pub use table::{quantize_and_tabulate, PolicyTable};
pub use vi::{bellman_residual, evaluate_policy, policy_gains, relative_value_iteration, ValueIterationResult, ViOptions};

use crate::error::{invalid, Error};

/// Policy selector as written on the command line and in config files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PolicyKind {
    Greedy,
    Mlph,
    /// Equal power; `Some(mW)` overrides the configured transmit power.
    Equal(Option<f64>),
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicyKind::Greedy => write!(f, "greedy"),
            PolicyKind::Mlph => write!(f, "mlph"),
            PolicyKind::Equal(None) => write!(f, "equal"),
            PolicyKind::Equal(Some(mw)) => write!(f, "equal:{mw}"),
        }
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.trim() {
            "greedy" => Ok(PolicyKind::Greedy),
            "mlph" => Ok(PolicyKind::Mlph),
            "equal" => Ok(PolicyKind::Equal(None)),
            other => {
                let mw = other
                    .strip_prefix("equal:")
                    .and_then(|v| v.parse::<f64>().ok())
                    .filter(|v| *v > 0.0 && v.is_finite())
                    .ok_or_else(|| invalid(format!("unknown policy `{other}` (greedy, mlph, equal:<mW>)")))?;
                Ok(PolicyKind::Equal(Some(mw)))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn policy_names_round_trip() {
        for p in [PolicyKind::Greedy, PolicyKind::Mlph, PolicyKind::Equal(None), PolicyKind::Equal(Some(15.0))] {
            assert_eq!(p.to_string().parse::<PolicyKind>().unwrap(), p);
        }
        assert!("equal:-1".parse::<PolicyKind>().is_err());
        assert!("optimal".parse::<PolicyKind>().is_err());
    }
}
