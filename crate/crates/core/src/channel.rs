//! Finite-state Markov abstraction of a Rayleigh fading link.
//!
//! The exponential power-gain range is split into intervals
//! `[γ_{i-1}, γ_i)`; each interval is one channel state. The state is fixed
//! within a slot and moves according to a row-stochastic matrix.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::markov::{self, SparseStochastic};

/// Tolerance on row sums of a user-supplied or generated transition matrix.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// Equal-probability boundaries `[0, γ_1, …, γ_{n-1}, ∞]` for an exponential
/// gain with the given mean: `γ_k = −μ ln(1 − k/n)`.
pub fn partition_rayleigh(num_states: usize, mean_gain: f64) -> Result<Vec<f64>> {
    if num_states == 0 {
        return Err(invalid("number of channel states must be positive"));
    }
    if !(mean_gain > 0.0 && mean_gain.is_finite()) {
        return Err(invalid(format!("mean channel gain must be positive, got {mean_gain}")));
    }
    let n = num_states as f64;
    let mut bounds = Vec::with_capacity(num_states + 1);
    bounds.push(0.0);
    for k in 1..num_states {
        bounds.push(-mean_gain * (-(k as f64) / n).ln_1p());
    }
    bounds.push(f64::INFINITY);
    Ok(bounds)
}

/// Conditional mean of the exponential gain on interval `index`
/// (zero-based, i.e. `[γ_index, γ_{index+1})`).
pub fn mean_power_gain(boundaries: &[f64], index: usize, mean_gain: f64) -> Result<f64> {
    if index + 1 >= boundaries.len() {
        return Err(invalid(format!(
            "interval {index} out of range for {} boundaries",
            boundaries.len()
        )));
    }
    if !(mean_gain > 0.0) {
        return Err(invalid("mean channel gain must be positive"));
    }
    let (lo, hi) = (boundaries[index], boundaries[index + 1]);
    if !(hi > lo) {
        return Err(invalid(format!("empty interval [{lo}, {hi})")));
    }
    if hi.is_infinite() {
        // memoryless tail
        return Ok(lo + mean_gain);
    }
    let (elo, ehi) = ((-lo / mean_gain).exp(), (-hi / mean_gain).exp());
    let mass = elo - ehi;
    if !(mass > 0.0) {
        return Err(invalid(format!("interval [{lo}, {hi}) carries no probability mass")));
    }
    Ok(((lo + mean_gain) * elo - (hi + mean_gain) * ehi) / mass)
}

/// Stationary distribution of a row-stochastic matrix.
pub fn steady_state(transition: &[Vec<f64>]) -> Result<Vec<f64>> {
    let m = SparseStochastic::from_dense(transition, ROW_SUM_TOL)?;
    markov::stationary(&m)
}

/// Tridiagonal slow-fading matrix from level-crossing rates of a Rayleigh
/// envelope. `fd_ts` is the normalized Doppler `f_d·T_s`.
///
/// Crossing rate of the power threshold `γ`:
/// `N(γ) = √(2πγ/μ) · f_d · exp(−γ/μ)`, and
/// `p(i→i±1) = N(γ_boundary)·T_s / π_i`.
pub fn doppler_transition_matrix(boundaries: &[f64], mean_gain: f64, fd_ts: f64) -> Result<Vec<Vec<f64>>> {
    if !(fd_ts >= 0.0) {
        return Err(invalid("normalized Doppler must be non-negative"));
    }
    let n = boundaries.len() - 1;
    let mass = |i: usize| {
        let lo = (-boundaries[i] / mean_gain).exp();
        let hi = if boundaries[i + 1].is_infinite() {
            0.0
        } else {
            (-boundaries[i + 1] / mean_gain).exp()
        };
        lo - hi
    };
    let crossing = |g: f64| (2.0 * std::f64::consts::PI * g / mean_gain).sqrt() * fd_ts * (-g / mean_gain).exp();
    let mut matrix = vec![vec![0.0; n]; n];
    for i in 0..n {
        let pi = mass(i);
        let down = if i > 0 { crossing(boundaries[i]) / pi } else { 0.0 };
        let up = if i + 1 < n { crossing(boundaries[i + 1]) / pi } else { 0.0 };
        if down + up > 1.0 {
            return Err(invalid(format!(
                "Doppler {fd_ts} too fast for {n} states: state {i} leaves with probability {}",
                down + up
            )));
        }
        if i > 0 {
            matrix[i][i - 1] = down;
        }
        if i + 1 < n {
            matrix[i][i + 1] = up;
        }
        matrix[i][i] = 1.0 - down - up;
    }
    Ok(matrix)
}

/// Immutable finite-state Markov channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    boundaries: Vec<f64>,
    transition: Vec<Vec<f64>>,
    steady_state: Vec<f64>,
    mean_gains: Vec<f64>,
    mean_channel_gain: f64,
}

impl ChannelModel {
    /// Equal-probability partition with the level-crossing transition matrix.
    pub fn rayleigh(num_states: usize, mean_gain: f64, fd_ts: f64) -> Result<Self> {
        let boundaries = partition_rayleigh(num_states, mean_gain)?;
        let transition = doppler_transition_matrix(&boundaries, mean_gain, fd_ts)?;
        Self::new(boundaries, transition, mean_gain)
    }

    /// Model with caller-supplied boundaries and transition matrix.
    pub fn new(boundaries: Vec<f64>, transition: Vec<Vec<f64>>, mean_gain: f64) -> Result<Self> {
        let n = boundaries.len().checked_sub(1).filter(|&n| n > 0).ok_or_else(|| invalid("need at least two boundaries"))?;
        if boundaries[0] != 0.0 || !boundaries[n].is_infinite() {
            return Err(invalid("boundaries must start at 0 and end at infinity"));
        }
        if boundaries.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid("boundaries must be strictly increasing"));
        }
        if transition.len() != n {
            return Err(invalid(format!("transition matrix has {} rows for {n} states", transition.len())));
        }
        let steady_state = steady_state(&transition)?;
        let mean_gains = (0..n)
            .map(|i| mean_power_gain(&boundaries, i, mean_gain))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            boundaries,
            transition,
            steady_state,
            mean_gains,
            mean_channel_gain: mean_gain,
        })
    }

    pub fn num_states(&self) -> usize {
        self.mean_gains.len()
    }

    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    pub fn transition(&self) -> &[Vec<f64>] {
        &self.transition
    }

    pub fn steady_state(&self) -> &[f64] {
        &self.steady_state
    }

    pub fn mean_gains(&self) -> &[f64] {
        &self.mean_gains
    }

    pub fn mean_channel_gain(&self) -> f64 {
        self.mean_channel_gain
    }

    /// Samples the successor of `state`. Consumes exactly one uniform draw.
    pub fn step<R: Rng + ?Sized>(&self, state: usize, rng: &mut R) -> Result<usize> {
        let row = self
            .transition
            .get(state)
            .ok_or_else(|| Error::InvalidArgument(format!("channel state {state} out of range")))?;
        Ok(sample_index(row, rng.random::<f64>()))
    }

    /// Draws a state from the steady-state distribution.
    pub fn sample_steady<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_index(&self.steady_state, rng.random::<f64>())
    }
}

/// Inverse-CDF lookup; zero-probability entries are never returned.
pub(crate) fn sample_index(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}
