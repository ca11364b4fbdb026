//! Per-slot action rules: equal power, greedy and MLPH.

use serde::{Deserialize, Serialize};

use crate::pep::PepTable;
use crate::policy::belief::BeliefVector;
use crate::policy::mdp::{CostModel, MdpModel};
use crate::policy::vi::ValueIterationResult;

/// Expected immediate cost `Σ_g ϖ(g)·r(g, a)`; the idle action costs as
/// a certain failure.
pub fn expected_cost(belief: &BeliefVector, a: u32, pep: &PepTable, cost_model: CostModel, rho_rx: f64) -> f64 {
    belief
        .probs()
        .iter()
        .enumerate()
        .map(|(g, &w)| {
            let p_err = if a == 0 { 1.0 } else { pep.get(g, a) };
            w * cost_model.cost(p_err, rho_rx)
        })
        .sum()
}

/// Minimizes the expected immediate cost over `0..=max_action`; ties go to
/// the smallest action.
pub fn greedy_action(
    belief: &BeliefVector,
    max_action: u32,
    pep: &PepTable,
    cost_model: CostModel,
    rho_rx: f64,
) -> u32 {
    let top = max_action.min(pep.a_max());
    let mut best = (f64::INFINITY, 0);
    for a in 0..=top {
        let c = expected_cost(belief, a, pep, cost_model, rho_rx);
        if c < best.0 {
            best = (c, a);
        }
    }
    best.1
}

/// Full-packet action of the equal-power policy: `β` units whenever the
/// pending parts are affordable, otherwise nothing.
pub fn equal_action(beta: u32, battery: u32, pending_parts: u32) -> u32 {
    if pending_parts <= battery {
        beta
    } else {
        0
    }
}

/// Stationary policy of the fully observed MDP, indexed by `(b, g, k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlphPolicy {
    pub capacity: u32,
    pub num_channel_states: usize,
    pub max_k: u32,
    pub actions: Vec<u32>,
}

impl MlphPolicy {
    pub fn from_solution(mdp: &MdpModel, result: &ValueIterationResult) -> Self {
        Self {
            capacity: mdp.params.capacity,
            num_channel_states: mdp.num_channel_states,
            max_k: mdp.params.max_k,
            actions: result.policy.clone(),
        }
    }

    /// `π*(b, g, k)` with the battery clamped to the modelled range.
    pub fn action(&self, b: u32, g: usize, k: u32) -> u32 {
        let b = b.min(self.capacity);
        let s = (b as usize * self.num_channel_states + g) * self.max_k as usize + (k as usize - 1);
        self.actions[s].min(b)
    }
}

/// `π*(b, g_ML, k)` with `g_ML` the most likely channel state.
pub fn mlph_action(belief: &BeliefVector, battery: u32, k: u32, policy: &MlphPolicy) -> u32 {
    policy.action(battery, belief.argmax(), k).min(battery)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pep() -> PepTable {
        PepTable::from_rows(vec![
            vec![1.0, 1.0, 0.9, 0.5, 0.5],
            vec![1.0, 0.4, 0.2, 0.1, 0.05],
        ])
        .unwrap()
    }

    fn brute_force(belief: &BeliefVector, max_action: u32, pep: &PepTable) -> u32 {
        let costs: Vec<f64> = (0..=max_action).map(|a| expected_cost(belief, a, pep, CostModel::Pep, 0.5)).collect();
        let min = costs.iter().cloned().fold(f64::INFINITY, f64::min);
        costs.iter().position(|&c| c == min).unwrap() as u32
    }

    #[test]
    fn empty_battery_idles() {
        let b = BeliefVector::uniform(2);
        assert_eq!(greedy_action(&b, 0, &pep(), CostModel::Pep, 0.5), 0);
    }

    #[test]
    fn strictly_decreasing_errors_use_everything() {
        let p = PepTable::from_rows(vec![vec![1.0, 0.5, 0.25, 0.125]]).unwrap();
        let b = BeliefVector::uniform(1);
        for max in 0..=3 {
            assert_eq!(greedy_action(&b, max, &p, CostModel::Pep, 0.5), max);
            assert_eq!(brute_force(&b, max, &p), max);
        }
    }

    #[test]
    fn concentrated_belief_uses_that_column() {
        let p = pep();
        let certain_bad = BeliefVector::new(vec![1.0, 0.0]).unwrap();
        // flat between 3 and 4, so the cheaper action wins
        assert_eq!(greedy_action(&certain_bad, 4, &p, CostModel::Pep, 0.5), 3);
        let certain_good = BeliefVector::new(vec![0.0, 1.0]).unwrap();
        assert_eq!(greedy_action(&certain_good, 4, &p, CostModel::Pep, 0.5), 4);
    }

    #[test]
    fn equal_power_rule() {
        assert_eq!(equal_action(4, 10, 4), 4);
        assert_eq!(equal_action(4, 1, 1), 4);
        assert_eq!(equal_action(4, 3, 4), 0);
    }

    #[test]
    fn mlph_uses_most_likely_state() {
        // b ∈ {0,1,2}, two channel states, K = 1; action = b in state 0, 0 in state 1
        let policy = MlphPolicy {
            capacity: 2,
            num_channel_states: 2,
            max_k: 1,
            actions: vec![0, 0, 1, 0, 2, 0],
        };
        let b = BeliefVector::new(vec![0.7, 0.3]).unwrap();
        assert_eq!(mlph_action(&b, 2, 1, &policy), 2);
        let b = BeliefVector::new(vec![0.3, 0.7]).unwrap();
        assert_eq!(mlph_action(&b, 2, 1, &policy), 0);
        let tie = BeliefVector::new(vec![0.5, 0.5]).unwrap();
        assert_eq!(mlph_action(&tie, 1, 1, &policy), 1);
        let single = MlphPolicy { capacity: 2, num_channel_states: 1, max_k: 1, actions: vec![0, 1, 1] };
        assert_eq!(mlph_action(&BeliefVector::uniform(1), 2, 1, &single), 1);
    }

    proptest! {
        #[test]
        fn greedy_equals_enumeration(w in 0.0f64..=1.0, max in 0u32..=4) {
            let b = BeliefVector::new(vec![w, 1.0 - w]).unwrap();
            let p = pep();
            let a = greedy_action(&b, max, &p, CostModel::Pep, 0.5);
            prop_assert!(a <= max);
            prop_assert_eq!(a, brute_force(&b, max, &p));
        }
    }
}
