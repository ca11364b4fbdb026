//! Channel belief tracking from ACK/NAK/NAKx observations.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::pep::PepTable;
use crate::protocol::Feedback;

const NORM_TOL: f64 = 1e-12;

/// Probability vector over channel states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefVector(Vec<f64>);

impl BeliefVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(invalid("belief over zero states"));
        }
        if probs.iter().any(|p| !(0.0..=1.0 + NORM_TOL).contains(p)) {
            return Err(invalid(format!("belief entries outside [0,1]: {probs:?}")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > NORM_TOL {
            return Err(invalid(format!("belief sums to {sum}")));
        }
        Ok(Self(probs))
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Most likely state; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.0.iter().enumerate() {
            if p > self.0[best] {
                best = i;
            }
        }
        best
    }

    /// `max |Σ − 1|`, for invariant checks.
    pub fn normalization_error(&self) -> f64 {
        (self.0.iter().sum::<f64>() - 1.0).abs()
    }
}

/// `p(Z | a, g)`. With `a = 0` the previous slot's likelihood is repeated;
/// without one the observation carries no information.
pub fn observation_likelihood(
    feedback: Feedback,
    action: u32,
    state: usize,
    pep: &PepTable,
    rho_rx: f64,
    previous: Option<f64>,
) -> f64 {
    if action == 0 {
        return previous.unwrap_or(1.0);
    }
    let p_err = pep.get(state, action);
    match feedback {
        Feedback::Nak => rho_rx * p_err,
        Feedback::Ack => rho_rx * (1.0 - p_err),
        Feedback::NakX(_) => 1.0 - rho_rx,
    }
}

/// Likelihood of `feedback` in every channel state.
pub fn likelihood_vector(
    feedback: Feedback,
    action: u32,
    pep: &PepTable,
    rho_rx: f64,
    previous: Option<&[f64]>,
) -> Vec<f64> {
    (0..pep.num_states())
        .map(|g| observation_likelihood(feedback, action, g, pep, rho_rx, previous.map(|p| p[g])))
        .collect()
}

/// Bayes correction `ϖ' ∝ L ⊙ ϖ`.
pub fn correct(belief: &BeliefVector, likelihood: &[f64]) -> Result<BeliefVector> {
    if likelihood.len() != belief.len() {
        return Err(invalid("likelihood length does not match the belief"));
    }
    let mut post: Vec<f64> = belief.0.iter().zip(likelihood).map(|(b, l)| b * l).collect();
    let mass: f64 = post.iter().sum();
    if !(mass > 0.0) {
        return Err(Error::DegenerateObservation);
    }
    post.iter_mut().for_each(|p| *p /= mass);
    Ok(BeliefVector(post))
}

/// Markov prediction `ϖ' = ϖ·Ω`, renormalized against rounding drift.
pub fn predict(belief: &BeliefVector, transition: &[Vec<f64>]) -> BeliefVector {
    let n = belief.len();
    let mut out = vec![0.0; n];
    for (i, &b) in belief.0.iter().enumerate() {
        for (j, &p) in transition[i].iter().enumerate() {
            out[j] += b * p;
        }
    }
    let mass: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= mass);
    BeliefVector(out)
}

/// Correction followed by prediction.
pub fn belief_update(belief: &BeliefVector, likelihood: &[f64], transition: &[Vec<f64>]) -> Result<BeliefVector> {
    Ok(predict(&correct(belief, likelihood)?, transition))
}

/// Per-trial belief state with the likelihood memory needed for idle slots.
#[derive(Debug, Clone)]
pub struct BeliefTracker {
    belief: BeliefVector,
    last_likelihood: Option<Vec<f64>>,
    degenerate: u64,
}

impl BeliefTracker {
    /// Starts from the channel's steady state.
    pub fn new(steady_state: &[f64]) -> Result<Self> {
        Ok(Self { belief: BeliefVector::new(steady_state.to_vec())?, last_likelihood: None, degenerate: 0 })
    }

    pub fn belief(&self) -> &BeliefVector {
        &self.belief
    }

    /// Observations whose likelihood vanished in every state.
    pub fn degenerate_count(&self) -> u64 {
        self.degenerate
    }

    /// Folds in the feedback of a slot. `informative` is false when nothing
    /// carrying energy was sent, in which case the last likelihood is
    /// reused. `advance` applies the Markov prediction step; pass false
    /// while the channel is held fixed.
    pub fn observe(
        &mut self,
        feedback: Feedback,
        action: u32,
        informative: bool,
        pep: &PepTable,
        rho_rx: f64,
        transition: &[Vec<f64>],
        advance: bool,
    ) {
        let effective = if informative { action } else { 0 };
        let lik = likelihood_vector(feedback, effective, pep, rho_rx, self.last_likelihood.as_deref());
        let corrected = match correct(&self.belief, &lik) {
            Ok(b) => b,
            Err(_) => {
                // the observation is impossible under the model; keep the prior
                self.degenerate += 1;
                self.belief.clone()
            }
        };
        self.belief = if advance { predict(&corrected, transition) } else { corrected };
        self.last_likelihood = Some(lik);
    }
}
