//! Packet drop probability of the fixed-power policy.
//!
//! Within a frame the channel state is constant; the slot-level chain over
//! `(i, j, z, k)` is assembled per channel state from the four harvest
//! outcomes. Two averages are offered:
//!
//! * chain mode: the exact frame-start chain over `(i, j, g)` obtained by
//!   running each frame to completion, `P̄_drop = Σ ψ(i,j,g) P_drop(i,j,g)`;
//! * bound mode: the one-slot battery kernel mixed over `ω_o`, its
//!   stationary `ψ(i, j)` and the per-attempt closed form.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelModel;
use crate::energy::{EnergyGrid, HarvestProcess};
use crate::error::{invalid, Error, Result};
use crate::markov::{self, SparseStochastic};
use crate::pep::PepTable;
use crate::protocol::{receiver_decision, Feedback, RxDecision};

/// How `x` in `NAKx` evolves over successive sampling slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum XAccumulation {
    /// `x` is the total stored so far.
    #[default]
    Cumulative,
    /// `x` is what was sampled in the last slot only.
    NewlySampled,
}

/// Battery update when only the receiver harvests and the packet is
/// acknowledged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum CaseIII {
    /// No transmitter harvest.
    #[default]
    Semantic,
    /// `q = min(i + L_Tx − a, B^max)` on acknowledged rows.
    LiteralTable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PdpMode {
    Chain,
    Bound,
}

/// Probabilities of the joint harvest outcomes `(tx, rx)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HarvestWeights {
    pub w00: f64,
    pub w01: f64,
    pub w10: f64,
    pub w11: f64,
}

impl HarvestWeights {
    pub fn independent(rho_tx: f64, rho_rx: f64) -> Self {
        Self {
            w00: (1.0 - rho_tx) * (1.0 - rho_rx),
            w01: (1.0 - rho_tx) * rho_rx,
            w10: rho_tx * (1.0 - rho_rx),
            w11: rho_tx * rho_rx,
        }
    }

    pub fn from_process(process: &HarvestProcess) -> Result<Self> {
        match *process {
            HarvestProcess::Bernoulli { rho_tx, rho_rx, .. } => Ok(Self::independent(rho_tx, rho_rx)),
            HarvestProcess::CorrelatedBernoulli { p00, p01, p10, p11, .. } => {
                Ok(Self { w00: p00, w01: p01, w10: p10, w11: p11 })
            }
            HarvestProcess::CompoundPoisson { .. } => {
                Err(invalid("the chain analysis needs a two-point harvest process"))
            }
        }
    }

    /// `(ρ_Tx, ρ_Rx)`.
    pub fn marginals(&self) -> (f64, f64) {
        (self.w10 + self.w11, self.w01 + self.w11)
    }

    fn outcomes(&self) -> [(bool, bool, f64); 4] {
        [(false, false, self.w00), (false, true, self.w01), (true, false, self.w10), (true, true, self.w11)]
    }
}

/// Everything the chain needs, in grid units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainModel {
    pub grid: EnergyGrid,
    pub max_k: u32,
    /// Full-packet action of the fixed policy.
    pub action: u32,
    pub weights: HarvestWeights,
    /// `P_err(g, action)` per channel state.
    pub p_err: Vec<f64>,
    pub transition: Vec<Vec<f64>>,
    pub steady_state: Vec<f64>,
    pub x_accumulation: XAccumulation,
    pub case3: CaseIII,
}

impl ChainModel {
    /// Equal-power model (`action = β`) read off a PEP table and channel.
    pub fn equal_power(
        grid: EnergyGrid,
        max_k: u32,
        weights: HarvestWeights,
        pep: &PepTable,
        channel: &ChannelModel,
    ) -> Result<Self> {
        let action = grid.beta;
        Self {
            p_err: (0..channel.num_states()).map(|g| pep.get(g, action)).collect(),
            grid,
            max_k,
            action,
            weights,
            transition: channel.transition().to_vec(),
            steady_state: channel.steady_state().to_vec(),
            x_accumulation: XAccumulation::default(),
            case3: CaseIII::default(),
        }
        .validated()
    }

    pub fn validated(self) -> Result<Self> {
        if self.max_k == 0 {
            return Err(invalid("K must be at least 1"));
        }
        if self.action == 0 || self.action > self.grid.tx_capacity {
            return Err(invalid(format!(
                "fixed action {} must lie in 1..={}",
                self.action, self.grid.tx_capacity
            )));
        }
        let g = self.p_err.len();
        if g == 0 || self.transition.len() != g || self.steady_state.len() != g {
            return Err(invalid("channel description and error table disagree on the number of states"));
        }
        if self.p_err.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(invalid("error probabilities must lie in [0, 1]"));
        }
        let w = self.weights;
        let total = w.w00 + w.w01 + w.w10 + w.w11;
        if [w.w00, w.w01, w.w10, w.w11].iter().any(|p| !(0.0..=1.0).contains(p)) || (total - 1.0).abs() > 1e-12 {
            return Err(invalid("harvest outcome weights must form a distribution"));
        }
        Ok(self)
    }

    pub fn num_channel_states(&self) -> usize {
        self.p_err.len()
    }

    fn tx_levels(&self) -> usize {
        self.grid.tx_capacity as usize + 1
    }

    fn rx_levels(&self) -> usize {
        self.grid.rx_capacity as usize + 1
    }

    fn z_levels(&self) -> usize {
        Feedback::alphabet_size(self.grid.beta) as usize
    }

    /// Number of `(i, j, z, k)` states for one channel state.
    pub fn num_slot_states(&self) -> usize {
        self.tx_levels() * self.rx_levels() * self.z_levels() * self.max_k as usize
    }

    pub fn index(&self, s: FullChainState) -> usize {
        let z = match s.z {
            Feedback::Ack => 0,
            Feedback::Nak => 1,
            Feedback::NakX(x) => 2 + x as usize,
        };
        ((s.i as usize * self.rx_levels() + s.j as usize) * self.z_levels() + z) * self.max_k as usize
            + (s.k as usize - 1)
    }

    pub fn state(&self, index: usize) -> FullChainState {
        let k = (index % self.max_k as usize) as u32 + 1;
        let rest = index / self.max_k as usize;
        let z = rest % self.z_levels();
        let rest = rest / self.z_levels();
        let j = (rest % self.rx_levels()) as u32;
        let i = (rest / self.rx_levels()) as u32;
        let z = match z {
            0 => Feedback::Ack,
            1 => Feedback::Nak,
            x => Feedback::NakX(x as u32 - 2),
        };
        FullChainState { i, j, z, k }
    }
}

/// Slot-level state for a fixed channel state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FullChainState {
    pub i: u32,
    pub j: u32,
    pub z: Feedback,
    pub k: u32,
}

impl FullChainState {
    pub fn frame_start(i: u32, j: u32) -> Self {
        Self { i, j, z: Feedback::Ack, k: 1 }
    }
}

/// How a slot ended for the frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SlotEvent {
    Continue,
    Success,
    Drop,
}

/// Row-stochastic slot kernel for one channel state. Each entry carries the
/// frame event so that frame-level quantities can be read off directly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Xi {
    pub channel_state: usize,
    pub rows: Vec<Vec<(usize, f64, SlotEvent)>>,
}

impl Xi {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn max_row_error(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| (r.iter().map(|e| e.1).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Plain kernel with duplicate targets merged.
    pub fn to_stochastic(&self) -> Result<SparseStochastic> {
        let rows = self
            .rows
            .iter()
            .map(|r| {
                let mut merged: Vec<(usize, f64)> = Vec::with_capacity(r.len());
                for &(to, p, _) in r {
                    match merged.iter_mut().find(|e| e.0 == to) {
                        Some(e) => e.1 += p,
                        None => merged.push((to, p)),
                    }
                }
                merged
            })
            .collect();
        SparseStochastic::new(rows, 1e-9)
    }
}

/// All successors of `s` in one slot under channel state `g`.
pub fn slot_transitions(model: &ChainModel, g: usize, s: FullChainState) -> Result<Vec<(FullChainState, f64, SlotEvent)>> {
    let grid = &model.grid;
    let beta = grid.beta;
    let p_err = model.p_err[g];
    let held = s.z.stored_parts();
    let pending = beta - held;
    let last = s.k == model.max_k;
    let mut out = Vec::with_capacity(8);
    for (h_tx, h_rx, w) in model.weights.outcomes() {
        if w == 0.0 {
            continue;
        }
        let i1 = if h_tx { (s.i + grid.tx_harvest).min(grid.tx_capacity) } else { s.i };
        let j1 = if h_rx { (s.j + grid.rx_harvest).min(grid.rx_capacity) } else { s.j };
        // the trigger after NAKβ is free; otherwise the missing parts must be affordable
        let spend = grid.spend_for(model.action, pending);
        let transmitted = pending == 0 || spend <= i1;
        let tx_spent = if transmitted { spend } else { 0 };
        if tx_spent > i1 {
            return Err(Error::Inconsistent(format!("transmitter spends {tx_spent} of {i1} units")));
        }
        let q = i1 - tx_spent;
        let next = |z: Feedback, r: u32| {
            if last {
                (FullChainState::frame_start(q, r), SlotEvent::Drop)
            } else {
                (FullChainState { i: q, j: r, z, k: s.k + 1 }, SlotEvent::Continue)
            }
        };
        if !transmitted {
            let (t, e) = next(s.z, j1);
            out.push((t, w, e));
            continue;
        }
        match receiver_decision(held, pending, j1, grid)? {
            RxDecision::Decode { spent } => {
                let r = j1 - spent;
                let q_ack = match model.case3 {
                    CaseIII::LiteralTable if !h_tx && h_rx => (s.i + grid.tx_harvest - tx_spent).min(grid.tx_capacity),
                    _ => q,
                };
                if p_err < 1.0 {
                    out.push((FullChainState::frame_start(q_ack, r), w * (1.0 - p_err), SlotEvent::Success));
                }
                if p_err > 0.0 {
                    let (t, e) = next(Feedback::Nak, r);
                    out.push((t, w * p_err, e));
                }
            }
            RxDecision::Sample { sampled, spent } => {
                let x = match model.x_accumulation {
                    XAccumulation::Cumulative => held + sampled,
                    XAccumulation::NewlySampled => sampled,
                };
                let (t, e) = next(Feedback::NakX(x), j1 - spent);
                out.push((t, w, e));
            }
            RxDecision::Waste { spent } => {
                let (t, e) = next(Feedback::Nak, j1 - spent);
                out.push((t, w, e));
            }
        }
    }
    Ok(out)
}

/// Slot kernel `Ξ` for channel state `g`.
pub fn build_xi(model: &ChainModel, g: usize) -> Result<Xi> {
    if g >= model.num_channel_states() {
        return Err(invalid(format!("channel state {g} out of range")));
    }
    let rows = (0..model.num_slot_states())
        .into_par_iter()
        .map(|idx| {
            let succ = slot_transitions(model, g, model.state(idx))?;
            Ok(succ.into_iter().map(|(t, p, e)| (model.index(t), p, e)).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    let xi = Xi { channel_state: g, rows };
    let err = xi.max_row_error();
    if err > 1e-9 {
        return Err(Error::Inconsistent(format!("slot kernel row sums off by {err:e}")));
    }
    Ok(xi)
}

/// Frame outcome from a frame start: distribution of the battery pair at
/// the next frame start (index `q·(B^max_Rx+1) + r`) and the drop
/// probability.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameOutcome {
    pub end: Vec<(usize, f64)>,
    pub drop: f64,
}

/// Runs a frame through `xi` from `(i, j, ACK, 1)`.
pub fn frame_outcome(model: &ChainModel, xi: &Xi, i: u32, j: u32) -> FrameOutcome {
    let rx_levels = model.rx_levels();
    let mut frontier: Vec<(usize, f64)> = vec![(model.index(FullChainState::frame_start(i, j)), 1.0)];
    let mut end: HashMap<usize, f64> = HashMap::new();
    let mut drop = 0.0;
    for _ in 0..model.max_k {
        let mut next: HashMap<usize, f64> = HashMap::new();
        for &(s, mass) in &frontier {
            for &(t, p, e) in &xi.rows[s] {
                let m = mass * p;
                match e {
                    SlotEvent::Continue => *next.entry(t).or_default() += m,
                    SlotEvent::Success | SlotEvent::Drop => {
                        let st = model.state(t);
                        *end.entry(st.i as usize * rx_levels + st.j as usize).or_default() += m;
                        if e == SlotEvent::Drop {
                            drop += m;
                        }
                    }
                }
            }
        }
        let mut v: Vec<(usize, f64)> = next.into_iter().collect();
        v.sort_unstable_by_key(|e| e.0);
        frontier = v;
        if frontier.is_empty() {
            break;
        }
    }
    let mut end: Vec<(usize, f64)> = end.into_iter().collect();
    end.sort_unstable_by_key(|e| e.0);
    FrameOutcome { end, drop }
}

/// Long-run distribution of `chain` started from `init` and the average of
/// `reward` under it.
fn long_run_average(chain: &SparseStochastic, reward: &[f64], init: &[f64]) -> Result<(Vec<f64>, f64)> {
    let pi = markov::limiting_distribution(chain, init)?;
    let value = pi.iter().zip(reward).map(|(p, r)| p * r).sum();
    Ok((pi, value))
}

/// Exact frame-level quantities of the chain, for batteries that start full.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSolution {
    /// Frame-start distribution over `(i, j, g)`, index `(i·(B^max_Rx+1) + j)·G + g`.
    pub psi: Vec<f64>,
    /// Conditional drop probability per `(i, j, g)`.
    pub drop: Vec<f64>,
    pub pdp: f64,
}

pub fn solve_chain(model: &ChainModel) -> Result<ChainSolution> {
    let n_g = model.num_channel_states();
    let tx = model.tx_levels();
    let rx = model.rx_levels();
    let pairs = tx * rx;
    let per_g: Vec<Vec<FrameOutcome>> = (0..n_g)
        .map(|g| {
            let xi = build_xi(model, g)?;
            Ok((0..pairs)
                .into_par_iter()
                .map(|p| frame_outcome(model, &xi, (p / rx) as u32, (p % rx) as u32))
                .collect())
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::with_capacity(pairs * n_g);
    let mut drop = Vec::with_capacity(pairs * n_g);
    for p in 0..pairs {
        for g in 0..n_g {
            let out = &per_g[g][p];
            let mut row = Vec::with_capacity(out.end.len() * n_g);
            for &(qr, m) in &out.end {
                for (g2, &w) in model.transition[g].iter().enumerate() {
                    if w > 0.0 {
                        row.push((qr * n_g + g2, m * w));
                    }
                }
            }
            rows.push(row);
            drop.push(out.drop);
        }
    }
    let chain = SparseStochastic::new(rows, 1e-9)?;
    let mut init = vec![0.0; chain.len()];
    let full = model.grid.tx_capacity as usize * rx + model.grid.rx_capacity as usize;
    for (g, &w) in model.steady_state.iter().enumerate() {
        init[full * n_g + g] = w;
    }
    let (psi, pdp) = long_run_average(&chain, &drop, &init)?;
    Ok(ChainSolution { psi, drop, pdp: pdp.clamp(0.0, 1.0) })
}

/// One-slot battery kernel from frame starts, mixed over `ω_o` and
/// marginalized over `(w, y)`; index `i·(B^max_Rx+1) + j`.
pub fn battery_kernel(model: &ChainModel) -> Result<SparseStochastic> {
    let rx = model.rx_levels();
    let pairs = model.tx_levels() * rx;
    let mut acc: Vec<HashMap<usize, f64>> = vec![HashMap::new(); pairs];
    for g in 0..model.num_channel_states() {
        let w = model.steady_state[g];
        if w == 0.0 {
            continue;
        }
        for (p, row) in acc.iter_mut().enumerate() {
            let start = FullChainState::frame_start((p / rx) as u32, (p % rx) as u32);
            for (t, m, _) in slot_transitions(model, g, start)? {
                *row.entry(t.i as usize * rx + t.j as usize).or_default() += w * m;
            }
        }
    }
    let rows = acc
        .into_iter()
        .map(|m| {
            let mut v: Vec<(usize, f64)> = m.into_iter().collect();
            v.sort_unstable_by_key(|e| e.0);
            v
        })
        .collect();
    SparseStochastic::new(rows, 1e-9)
}

/// Stationary `ψ(i, j)` of a battery kernel.
pub fn stationary_psi(kernel: &SparseStochastic) -> Result<Vec<f64>> {
    markov::stationary(kernel)
}

/// Failure bracket of the per-attempt closed form at frame-start battery
/// `(i, j)` in channel state `g`, clamped to `[0, 1]`.
pub fn bound_bracket(model: &ChainModel, i: u32, j: u32, g: usize) -> f64 {
    let grid = &model.grid;
    let p = model.p_err[g];
    let (rho_tx, rho_rx) = model.weights.marginals();
    let ind = |c: bool| if c { 1.0 } else { 0.0 };
    let phi_tx = ind(i >= model.action);
    let phi_rx = ind(j >= grid.rx_full());
    let phi_dec = ind(j >= grid.rx_decode);
    let c_s = grid.rx_sample;
    let phi_partial: f64 = (0..=grid.beta).map(|x| ind(j >= x * c_s && j < (x + 1) * c_s)).sum();
    let f = rho_tx * rho_rx * p
        + (1.0 - rho_tx) * rho_rx * phi_tx * p
        + rho_tx * (1.0 - rho_rx) * (p * (phi_rx + phi_dec) + phi_partial)
        + (1.0 - rho_tx) * (1.0 - rho_rx) * (phi_tx * p * (phi_rx + phi_dec) + phi_partial);
    f.clamp(0.0, 1.0)
}

/// `P_suc,k = (1 − F)(1 − Σ_{l<k} P_suc,l)` with `P_suc,0 = 0`.
pub fn p_suc_k(k: u32, bracket: f64) -> f64 {
    let mut cumulative = 0.0;
    let mut last = 0.0;
    for _ in 0..k {
        last = (1.0 - bracket) * (1.0 - cumulative);
        cumulative += last;
    }
    last
}

/// `1 − Σ_{k=1}^{K} P_suc,k`.
pub fn p_drop_bound(max_k: u32, bracket: f64) -> f64 {
    let p_suc: f64 = (1..=max_k).map(|k| p_suc_k(k, bracket)).sum();
    (1.0 - p_suc).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundSolution {
    /// `ψ(i, j)`, index `i·(B^max_Rx+1) + j`.
    pub psi: Vec<f64>,
    /// `E_g[P_drop | i, j]` per battery pair.
    pub drop: Vec<f64>,
    pub pdp: f64,
}

pub fn solve_bound(model: &ChainModel) -> Result<BoundSolution> {
    let rx = model.rx_levels();
    let kernel = battery_kernel(model)?;
    let drop: Vec<f64> = (0..kernel.len())
        .map(|p| {
            let (i, j) = ((p / rx) as u32, (p % rx) as u32);
            (0..model.num_channel_states())
                .map(|g| model.steady_state[g] * p_drop_bound(model.max_k, bound_bracket(model, i, j, g)))
                .sum()
        })
        .collect();
    let mut init = vec![0.0; kernel.len()];
    init[model.grid.tx_capacity as usize * rx + model.grid.rx_capacity as usize] = 1.0;
    let (psi, pdp) = long_run_average(&kernel, &drop, &init)?;
    Ok(BoundSolution { psi, drop, pdp: pdp.clamp(0.0, 1.0) })
}

/// Average packet drop probability in the requested mode.
pub fn average_pdp(model: &ChainModel, mode: PdpMode) -> Result<f64> {
    match mode {
        PdpMode::Chain => Ok(solve_chain(model)?.pdp),
        PdpMode::Bound => Ok(solve_bound(model)?.pdp),
    }
}
