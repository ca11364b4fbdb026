//! ACK/NAK/NAKx retransmission state machines.
//!
//! A packet is split into `β` parts. The receiver samples as many parts as
//! its battery allows, stores them and reports the stored count `x` with
//! `NAKx`; the transmitter then sends only the `β − x` missing parts. With
//! `β = 1` the receiver behaves as a conventional ACK/NAK node that discards
//! partial samples.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::energy::EnergyGrid;
use crate::error::{Error, Result};
use crate::pep::PepTable;

/// Feedback message returned at the end of a slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Feedback {
    Ack,
    Nak,
    /// `x` parts are stored at the receiver. `NakX(0)` is distinct from
    /// [`Feedback::Nak`]: nothing was sampled, no decode was attempted.
    NakX(u32),
}

impl Feedback {
    pub fn is_ack(self) -> bool {
        self == Feedback::Ack
    }

    /// Parts already held by the receiver according to this message.
    pub fn stored_parts(self) -> u32 {
        match self {
            Feedback::NakX(x) => x,
            _ => 0,
        }
    }

    /// Number of distinct messages for a given `β`.
    pub fn alphabet_size(beta: u32) -> u32 {
        if beta > 1 {
            beta + 3
        } else {
            2
        }
    }
}

impl fmt::Display for Feedback {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Feedback::Ack => write!(f, "ACK"),
            Feedback::Nak => write!(f, "NAK"),
            Feedback::NakX(x) => write!(f, "NAK{x}"),
        }
    }
}

/// Transmitter view of the current frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxFrameState {
    /// Retransmission index `k ∈ 1..=K`.
    pub retrans_index: u32,
    /// Parts of the packet still to be delivered.
    pub pending_parts: u32,
    pub last_feedback: Feedback,
}

impl TxFrameState {
    pub fn new_frame(beta: u32) -> Self {
        Self { retrans_index: 1, pending_parts: beta, last_feedback: Feedback::Ack }
    }
}

/// Channel state and action of a group of parts that travelled together.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartRecord {
    pub state: usize,
    pub action: u32,
    pub parts: u32,
}

/// Samples held by the receiver for the current packet.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RxSampleStore {
    records: Vec<PartRecord>,
}

impl RxSampleStore {
    pub fn stored_parts(&self) -> u32 {
        self.records.iter().map(|r| r.parts).sum()
    }

    pub fn records(&self) -> &[PartRecord] {
        &self.records
    }

    pub fn clear(&mut self) {
        self.records.clear();
    }

    fn push(&mut self, record: PartRecord) {
        if record.parts > 0 {
            self.records.push(record);
        }
    }
}

/// What reached the receiver in a slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Incoming {
    /// Parts carried; zero for a bare decode request after `NAKβ`.
    pub parts: u32,
    pub state: usize,
    pub action: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RxOutcome {
    pub feedback: Feedback,
    pub spent: u32,
    /// Error probability used for the decode attempt, if one was made.
    pub decode_pep: Option<f64>,
}

/// Energy-driven receiver choice for one slot, independent of the decode
/// outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RxDecision {
    /// Sample the incoming parts and decode the complete packet.
    Decode { spent: u32 },
    /// Sample and store `sampled` parts, report `NAKx` with the new total.
    Sample { sampled: u32, spent: u32 },
    /// Conventional receiver: partial samples are taken and discarded.
    Waste { spent: u32 },
}

/// Receiver choice given `held` stored parts, `incoming` parts and the
/// available battery. With `β = 1` the conventional rule applies.
pub fn receiver_decision(held: u32, incoming: u32, battery: u32, grid: &EnergyGrid) -> Result<RxDecision> {
    let beta = grid.beta;
    if held + incoming > beta {
        return Err(Error::Protocol(format!("{held} stored parts plus {incoming} incoming exceed β = {beta}")));
    }
    let sample_cost = incoming * grid.rx_sample;
    if beta == 1 {
        if incoming == 0 {
            return Err(Error::Protocol("empty transmission under the conventional scheme".into()));
        }
        if battery >= sample_cost + grid.rx_decode {
            return Ok(RxDecision::Decode { spent: sample_cost + grid.rx_decode });
        }
        // samples until the battery runs out and throws them away
        return Ok(RxDecision::Waste { spent: battery.min(sample_cost) });
    }
    if held + incoming == beta && battery >= sample_cost + grid.rx_decode {
        return Ok(RxDecision::Decode { spent: sample_cost + grid.rx_decode });
    }
    let affordable = if grid.rx_sample == 0 { incoming } else { battery / grid.rx_sample };
    let sampled = incoming.min(affordable);
    Ok(RxDecision::Sample { sampled, spent: sampled * grid.rx_sample })
}

/// Receiver reaction to one transmission.
///
/// `battery` is the level available in this slot and `u` a uniform draw
/// deciding the decode outcome (ACK when `u < 1 − P_err`).
pub fn receiver_step(
    store: &mut RxSampleStore,
    incoming: Incoming,
    battery: u32,
    grid: &EnergyGrid,
    pep: &PepTable,
    u: f64,
) -> Result<RxOutcome> {
    let held = store.stored_parts();
    match receiver_decision(held, incoming.parts, battery, grid)? {
        RxDecision::Decode { spent } => {
            let mut p_err = if incoming.parts > 0 { pep.get(incoming.state, incoming.action) } else { 0.0 };
            for r in store.records() {
                p_err = p_err.max(pep.get(r.state, r.action));
            }
            Ok(decode(store, spent, p_err, u))
        }
        RxDecision::Sample { sampled, spent } => {
            store.push(PartRecord { state: incoming.state, action: incoming.action, parts: sampled });
            Ok(RxOutcome { feedback: Feedback::NakX(held + sampled), spent, decode_pep: None })
        }
        RxDecision::Waste { spent } => Ok(RxOutcome { feedback: Feedback::Nak, spent, decode_pep: None }),
    }
}

fn decode(store: &mut RxSampleStore, spent: u32, p_err: f64, u: f64) -> RxOutcome {
    store.clear();
    let feedback = if u < 1.0 - p_err { Feedback::Ack } else { Feedback::Nak };
    RxOutcome { feedback, spent, decode_pep: Some(p_err) }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TxOutcome {
    /// Parts put on the air; zero with `transmitted` set is a decode request.
    pub sent_parts: u32,
    pub spent: u32,
    pub transmitted: bool,
}

/// Transmitter reaction to the last feedback with full-packet action `a`.
///
/// When every part is already stored (`NAKβ`) a zero-energy decode request
/// is sent regardless of `a`. Otherwise `a = 0` sends nothing and the
/// remaining parts cost `⌈a·parts/β⌉` units.
pub fn transmitter_step(state: &TxFrameState, battery: u32, a: u32, grid: &EnergyGrid) -> Result<TxOutcome> {
    let parts = state.pending_parts;
    if parts == 0 {
        return Ok(TxOutcome { sent_parts: 0, spent: 0, transmitted: true });
    }
    if a == 0 {
        return Ok(TxOutcome { sent_parts: 0, spent: 0, transmitted: false });
    }
    let spent = grid.spend_for(a, parts);
    if spent > battery {
        return Err(Error::Causality { spent, available: battery });
    }
    Ok(TxOutcome { sent_parts: parts, spent, transmitted: true })
}

/// Parts the transmitter owes after receiving `feedback`.
pub fn pending_after(feedback: Feedback, beta: u32) -> u32 {
    beta - feedback.stored_parts().min(beta)
}

/// `k₊ = (k mod K)·1{Z ≠ ACK} + 1`.
pub fn advance_retrans_index(k: u32, max_k: u32, feedback: Feedback) -> u32 {
    if feedback.is_ack() {
        1
    } else {
        k % max_k + 1
    }
}
