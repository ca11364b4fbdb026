//! Fully observed transmit-power MDP over `(battery, channel, k)`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::pep::PepTable;

/// Row-sum tolerance of the assembled kernel.
pub const KERNEL_TOL: f64 = 1e-10;

/// How the immediate cost of a transmission is charged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum CostModel {
    /// `r(s, a) = P_err(g, a)`, with an idle slot costing 1.
    #[default]
    Pep,
    /// `r(s, a) = ρ_Rx · P_err(g, a)`: the cost only accrues when the
    /// receiver decodes and reports NAK.
    NakWeighted,
}

impl CostModel {
    pub fn cost(self, p_err: f64, rho_rx: f64) -> f64 {
        match self {
            CostModel::Pep => p_err,
            CostModel::NakWeighted => rho_rx * p_err,
        }
    }
}

/// Parameters of the MDP, all in transmitter battery units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpParams {
    pub capacity: u32,
    pub harvest: u32,
    pub max_k: u32,
    pub rho_tx: f64,
    pub rho_rx: f64,
    pub cost_model: CostModel,
    /// Refuse to build models with more states than this.
    pub state_cap: usize,
}

/// Sparse kernel and costs for every `(state, action)` pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpModel {
    pub params: MdpParams,
    pub num_channel_states: usize,
    /// `transitions[s][a]` lists `(s', p)`; `a` ranges over `0..=b(s)`.
    transitions: Vec<Vec<Vec<(usize, f64)>>>,
    costs: Vec<Vec<f64>>,
}

impl MdpModel {
    /// Generic model from explicit rows; `transitions[s][a]` and
    /// `costs[s][a]` must agree in shape and every row must be stochastic.
    pub fn from_raw(transitions: Vec<Vec<Vec<(usize, f64)>>>, costs: Vec<Vec<f64>>) -> Result<Self> {
        let n = transitions.len();
        if n == 0 || costs.len() != n {
            return Err(invalid("transition and cost tables must cover the same states"));
        }
        for (s, (acts, cs)) in transitions.iter().zip(&costs).enumerate() {
            if acts.is_empty() || acts.len() != cs.len() {
                return Err(invalid(format!("state {s}: actions and costs disagree")));
            }
            for (a, row) in acts.iter().enumerate() {
                let total: f64 = row.iter().map(|&(_, p)| p).sum();
                if row.iter().any(|&(j, p)| j >= n || p < 0.0) || (total - 1.0).abs() > KERNEL_TOL {
                    return Err(Error::Inconsistent(format!("row (s={s}, a={a}) is not a distribution")));
                }
            }
        }
        let params = MdpParams {
            capacity: 0,
            harvest: 0,
            max_k: n as u32,
            rho_tx: 0.0,
            rho_rx: 0.0,
            cost_model: CostModel::Pep,
            state_cap: n,
        };
        Ok(Self { params, num_channel_states: 1, transitions, costs })
    }

    pub fn num_states(&self) -> usize {
        self.costs.len()
    }

    pub fn index(&self, b: u32, g: usize, k: u32) -> usize {
        state_index(b, g, k, self.num_channel_states, self.params.max_k)
    }

    /// `(b, g, k)` of a state index.
    pub fn decode(&self, s: usize) -> (u32, usize, u32) {
        let kk = self.params.max_k as usize;
        let k = (s % kk) as u32 + 1;
        let rest = s / kk;
        let g = rest % self.num_channel_states;
        let b = (rest / self.num_channel_states) as u32;
        (b, g, k)
    }

    pub fn num_actions(&self, s: usize) -> usize {
        self.costs[s].len()
    }

    pub fn cost(&self, s: usize, a: usize) -> f64 {
        self.costs[s][a]
    }

    pub fn transitions(&self, s: usize, a: usize) -> &[(usize, f64)] {
        &self.transitions[s][a]
    }

    /// Largest `|Σ_{s'} p(s'|s,a) − 1|` over all pairs.
    pub fn max_row_error(&self) -> f64 {
        self.transitions
            .iter()
            .flat_map(|acts| acts.iter())
            .map(|row| (row.iter().map(|&(_, p)| p).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

fn state_index(b: u32, g: usize, k: u32, num_g: usize, max_k: u32) -> usize {
    (b as usize * num_g + g) * max_k as usize + (k as usize - 1)
}

/// Assembles the kernel: the battery moves by `−a` and, with probability
/// `ρ_Tx`, gains `L` clamped at capacity; the channel follows `Ω`; the
/// index resets on ACK (probability `ρ_Rx(1 − P_err)` when transmitting)
/// and advances otherwise.
pub fn build_mdp(params: MdpParams, transition: &[Vec<f64>], pep: &PepTable) -> Result<MdpModel> {
    let num_g = transition.len();
    if num_g == 0 || pep.num_states() != num_g {
        return Err(invalid("channel and error table disagree on the number of states"));
    }
    if params.max_k == 0 {
        return Err(invalid("K must be at least 1"));
    }
    for (name, p) in [("rho_tx", params.rho_tx), ("rho_rx", params.rho_rx)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(invalid(format!("{name} = {p} is not a probability")));
        }
    }
    if params.capacity > pep.a_max() {
        return Err(invalid(format!(
            "error table covers actions up to {} but the battery holds {}",
            pep.a_max(),
            params.capacity
        )));
    }
    let num_states = (params.capacity as usize + 1) * num_g * params.max_k as usize;
    if num_states > params.state_cap {
        return Err(Error::Capacity { states: num_states, cap: params.state_cap });
    }

    let mut transitions = Vec::with_capacity(num_states);
    let mut costs = Vec::with_capacity(num_states);
    for b in 0..=params.capacity {
        for g in 0..num_g {
            for k in 1..=params.max_k {
                let mut acts = Vec::with_capacity(b as usize + 1);
                let mut cost = Vec::with_capacity(b as usize + 1);
                for a in 0..=b {
                    let p_err = if a == 0 { 1.0 } else { pep.get(g, a) };
                    let p_ack = if a == 0 { 0.0 } else { params.rho_rx * (1.0 - p_err) };
                    let rest = b - a;
                    let charged = (rest + params.harvest).min(params.capacity);
                    let mut row = Vec::with_capacity(4 * num_g);
                    let k_fail = k % params.max_k + 1;
                    for (b_next, p_b) in [(charged, params.rho_tx), (rest, 1.0 - params.rho_tx)] {
                        for (k_next, p_k) in [(1, p_ack), (k_fail, 1.0 - p_ack)] {
                            for (g_next, &p_g) in transition[g].iter().enumerate() {
                                let p = p_b * p_k * p_g;
                                if p > 0.0 {
                                    row.push((state_index(b_next, g_next, k_next, num_g, params.max_k), p));
                                }
                            }
                        }
                    }
                    merge_row(&mut row);
                    let total: f64 = row.iter().map(|&(_, p)| p).sum();
                    if (total - 1.0).abs() > KERNEL_TOL {
                        return Err(Error::Inconsistent(format!(
                            "kernel row (b={b}, g={g}, k={k}, a={a}) sums to {total}"
                        )));
                    }
                    acts.push(row);
                    cost.push(params.cost_model.cost(p_err, params.rho_rx));
                }
                transitions.push(acts);
                costs.push(cost);
            }
        }
    }
    Ok(MdpModel { params, num_channel_states: num_g, transitions, costs })
}

fn merge_row(row: &mut Vec<(usize, f64)>) {
    row.sort_by_key(|&(j, _)| j);
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(row.len());
    for &(j, p) in row.iter() {
        match out.last_mut() {
            Some(last) if last.0 == j => last.1 += p,
            _ => out.push((j, p)),
        }
    }
    *row = out;
}
