//! Relative value iteration for average-cost MDPs.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::markov::{self, SparseStochastic};
use crate::policy::mdp::MdpModel;

/// Self-loop weight of the aperiodicity transform `P̃ = τP + (1 − τ)I`.
const TAU: f64 = 0.5;

/// Actions within this margin of the minimum count as ties.
const TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for ViOptions {
    fn default() -> Self {
        Self { tolerance: 1e-8, max_iterations: 100_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueIterationResult {
    pub average_cost: f64,
    pub relative_values: Vec<f64>,
    pub policy: Vec<u32>,
    pub iterations: usize,
    pub span: f64,
}

impl ValueIterationResult {
    pub fn action(&self, state: usize) -> u32 {
        self.policy[state]
    }
}

/// Solves `λ + h(s) = min_a [r(s,a) + Σ p(s'|s,a) h(s')]`.
///
/// Iterates on the transformed kernel with Jacobi sweeps, normalizing at
/// state 0, until the span of successive differences drops below the
/// tolerance. The returned `h` is for the original kernel.
pub fn relative_value_iteration(mdp: &MdpModel, options: ViOptions) -> Result<ValueIterationResult> {
    check_unichain(mdp)?;
    let n = mdp.num_states();
    let mut h = vec![0.0; n];
    let mut span = f64::INFINITY;
    for it in 1..=options.max_iterations {
        let next: Vec<f64> = (0..n).into_par_iter().map(|s| bellman_min(mdp, &h, s).0).collect();
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for (a, b) in next.iter().zip(&h) {
            let d = a - b;
            lo = lo.min(d);
            hi = hi.max(d);
        }
        span = hi - lo;
        let offset = next[0];
        h = next.into_iter().map(|v| v - offset).collect();
        if span < options.tolerance {
            let average_cost = 0.5 * (hi + lo);
            let policy = (0..n).map(|s| bellman_min(mdp, &h, s).1).collect();
            let relative_values = h.iter().map(|v| TAU * v).collect();
            return Ok(ValueIterationResult { average_cost, relative_values, policy, iterations: it, span });
        }
    }
    Err(Error::Convergence { iterations: options.max_iterations, span })
}

/// `(min value, argmin)` of the transformed Bellman operator; ties go to the
/// smallest action.
fn bellman_min(mdp: &MdpModel, h: &[f64], s: usize) -> (f64, u32) {
    let mut best = (f64::INFINITY, 0u32);
    for a in 0..mdp.num_actions(s) {
        let expect: f64 = mdp.transitions(s, a).iter().map(|&(j, p)| p * h[j]).sum();
        let v = mdp.cost(s, a) + TAU * expect + (1.0 - TAU) * h[s];
        if v < best.0 - TIE_TOL {
            best = (v, a as u32);
        }
    }
    best
}

/// `max_s |λ + h(s) − min_a [r + P h]|` on the original kernel.
pub fn bellman_residual(mdp: &MdpModel, result: &ValueIterationResult) -> f64 {
    let h = &result.relative_values;
    (0..mdp.num_states())
        .map(|s| {
            let rhs = (0..mdp.num_actions(s))
                .map(|a| {
                    mdp.cost(s, a) + mdp.transitions(s, a).iter().map(|&(j, p)| p * h[j]).sum::<f64>()
                })
                .fold(f64::INFINITY, f64::min);
            (result.average_cost + h[s] - rhs).abs()
        })
        .fold(0.0, f64::max)
}

/// Long-run average cost of a stationary deterministic policy.
pub fn evaluate_policy(mdp: &MdpModel, policy: &[u32]) -> Result<f64> {
    let rows = (0..mdp.num_states()).map(|s| mdp.transitions(s, policy[s] as usize).to_vec()).collect();
    let chain = SparseStochastic::new(rows, 1e-9)?;
    let pi = markov::stationary(&chain)?;
    Ok(pi.iter().enumerate().map(|(s, p)| p * mdp.cost(s, policy[s] as usize)).sum())
}

/// Long-run average cost of a stationary deterministic policy from each
/// start state; differs across states only when the policy is multichain.
pub fn policy_gains(mdp: &MdpModel, policy: &[u32]) -> Result<Vec<f64>> {
    let rows = (0..mdp.num_states()).map(|s| mdp.transitions(s, policy[s] as usize).to_vec()).collect();
    let chain = SparseStochastic::new(rows, 1e-9)?;
    let cost: Vec<f64> = (0..mdp.num_states()).map(|s| mdp.cost(s, policy[s] as usize)).collect();
    (0..mdp.num_states())
        .map(|start| {
            let mut init = vec![0.0; mdp.num_states()];
            init[start] = 1.0;
            let pi = markov::limiting_distribution(&chain, &init)?;
            Ok(pi.iter().zip(&cost).map(|(p, c)| p * c).sum())
        })
        .collect()
}

/// Requires a single closed class in the graph joining every action's
/// successors.
fn check_unichain(mdp: &MdpModel) -> Result<()> {
    let rows: Vec<Vec<(usize, f64)>> = (0..mdp.num_states())
        .map(|s| {
            let mut row: Vec<(usize, f64)> = Vec::new();
            let na = mdp.num_actions(s);
            for a in 0..na {
                row.extend(mdp.transitions(s, a).iter().map(|&(j, p)| (j, p / na as f64)));
            }
            row
        })
        .collect();
    let union = SparseStochastic::new(rows, 1e-9)?;
    let closed = union.closed_classes();
    if closed.len() != 1 {
        return Err(Error::NotUnichain(format!("{} closed classes under the union of actions", closed.len())));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pep::PepTable;
    use crate::policy::mdp::{build_mdp, CostModel, MdpParams};

    fn params(capacity: u32, harvest: u32, max_k: u32, rho_tx: f64, rho_rx: f64) -> MdpParams {
        MdpParams { capacity, harvest, max_k, rho_tx, rho_rx, cost_model: CostModel::Pep, state_cap: 100_000 }
    }

    #[test]
    fn single_state_single_action() {
        let m = MdpModel::from_raw(vec![vec![vec![(0, 1.0)]]], vec![vec![0.2]]).unwrap();
        let r = relative_value_iteration(&m, ViOptions::default()).unwrap();
        assert!((r.average_cost - 0.2).abs() < 1e-12);
    }

    #[test]
    fn cheaper_action_wins() {
        let m = MdpModel::from_raw(vec![vec![vec![(0, 1.0)], vec![(0, 1.0)]]], vec![vec![0.3, 0.1]]).unwrap();
        let r = relative_value_iteration(&m, ViOptions::default()).unwrap();
        assert!((r.average_cost - 0.1).abs() < 1e-12);
        assert_eq!(r.action(0), 1);
    }

    #[test]
    fn idle_battery_is_charged_full_cost() {
        let pep = PepTable::constant(1, 0, 0.2).unwrap();
        let m = build_mdp(params(0, 0, 1, 0.0, 0.0), &[vec![1.0]], &pep).unwrap();
        let r = relative_value_iteration(&m, ViOptions::default()).unwrap();
        assert!((r.average_cost - 1.0).abs() < 1e-8);
    }

    #[test]
    fn two_state_chain_matches_enumeration() {
        // state 0: stay (cost 0.5) or jump (cost 0.9); state 1: stay (cost 0.2) or return (cost 0)
        let m = MdpModel::from_raw(
            vec![
                vec![vec![(0, 1.0)], vec![(0, 0.3), (1, 0.7)]],
                vec![vec![(0, 0.1), (1, 0.9)], vec![(0, 1.0)]],
            ],
            vec![vec![0.5, 0.9], vec![0.2, 0.0]],
        )
        .unwrap();
        let r = relative_value_iteration(&m, ViOptions::default()).unwrap();
        let (best, count) = enumerate_best(&m);
        assert_eq!(count, 4);
        assert!((r.average_cost - best).abs() < 1e-8);
        assert!(bellman_residual(&m, &r) < 1e-7);
    }

    fn enumerate_best(m: &MdpModel) -> (f64, usize) {
        let n = m.num_states();
        let mut policy = vec![0u32; n];
        let mut best = f64::INFINITY;
        let mut count = 0;
        loop {
            count += 1;
            if let Ok(c) = evaluate_policy(m, &policy) {
                best = best.min(c);
            }
            let mut s = 0;
            loop {
                if s == n {
                    return (best, count);
                }
                policy[s] += 1;
                if (policy[s] as usize) < m.num_actions(s) {
                    break;
                }
                policy[s] = 0;
                s += 1;
            }
        }
    }

    #[test]
    fn matches_policy_enumeration() {
        let pep = PepTable::from_rows(vec![vec![1.0, 0.4, 0.15]]).unwrap();
        for &(rt, rr) in &[(0.3, 0.6), (0.7, 0.9), (0.5, 0.2)] {
            let m = build_mdp(params(2, 1, 2, rt, rr), &[vec![1.0]], &pep).unwrap();
            let r = relative_value_iteration(&m, ViOptions::default()).unwrap();
            let (best, count) = enumerate_best(&m);
            assert_eq!(count, 36);
            assert!((r.average_cost - best).abs() < 1e-7, "{} vs {best}", r.average_cost);
            let own = evaluate_policy(&m, &r.policy).unwrap();
            assert!((own - best).abs() < 1e-7);
            assert!(bellman_residual(&m, &r) < 1e-7);
        }
    }

    #[test]
    fn two_channel_states() {
        let pep = PepTable::from_rows(vec![vec![1.0, 0.9, 0.6], vec![1.0, 0.2, 0.05]]).unwrap();
        let omega = vec![vec![0.8, 0.2], vec![0.3, 0.7]];
        let m = build_mdp(params(2, 2, 2, 0.4, 0.8), &omega, &pep).unwrap();
        let r = relative_value_iteration(&m, ViOptions::default()).unwrap();
        assert!(bellman_residual(&m, &r) < 1e-7);
        let own = evaluate_policy(&m, &r.policy).unwrap();
        assert!((own - r.average_cost).abs() < 1e-7);
    }

    #[test]
    fn reports_non_convergence() {
        let pep = PepTable::from_rows(vec![vec![1.0, 0.4, 0.15]]).unwrap();
        let m = build_mdp(params(2, 1, 2, 0.3, 0.6), &[vec![1.0]], &pep).unwrap();
        let opts = ViOptions { tolerance: 1e-14, max_iterations: 3 };
        assert!(matches!(relative_value_iteration(&m, opts), Err(Error::Convergence { iterations: 3, .. })));
    }
}
