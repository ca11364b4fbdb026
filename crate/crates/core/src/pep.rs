//! Packet error probability of a convolutionally coded BPSK packet.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::channel::ChannelModel;
use crate::energy::EnergyGrid;
use crate::error::{invalid, Error, Result};

/// Weight spectrum of the default rate-1/2, constraint-length-7 code.
pub const DEFAULT_SPECTRUM: &str = include_str!("../data/k7_r12.spectrum");

/// Tolerance for monotonicity checks on a built table.
const MONOTONE_TOL: f64 = 1e-15;

/// Code and modulation parameters entering the union bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeSpec {
    pub info_bits: u32,
    pub coded_bits: u32,
    pub d_free: u32,
    /// `(d, A_d)` sorted by `d`.
    pub weight_spectrum: Vec<(u32, f64)>,
    /// Largest distance present in the truncated spectrum.
    pub truncation: u32,
    pub noise_power: f64,
    pub modulation_order: u32,
}

impl CodeSpec {
    /// Builds a code from a spectrum listing. `rate` must divide `info_bits`
    /// into an integer number of coded bits.
    pub fn new(
        info_bits: u32,
        rate: f64,
        spectrum: Vec<(u32, f64)>,
        noise_power: f64,
        modulation_order: u32,
    ) -> Result<Self> {
        if !(rate > 0.0 && rate <= 1.0) {
            return Err(invalid(format!("code rate {rate} outside (0, 1]")));
        }
        let m = info_bits as f64 / rate;
        if (m - m.round()).abs() > 1e-9 || info_bits == 0 {
            return Err(invalid(format!("{info_bits} bits at rate {rate} do not give an integer codeword")));
        }
        if !(noise_power > 0.0) {
            return Err(invalid("noise power must be positive"));
        }
        if modulation_order < 2 || !modulation_order.is_power_of_two() {
            return Err(invalid(format!("modulation order {modulation_order} must be a power of two ≥ 2")));
        }
        if spectrum.is_empty() {
            return Err(invalid("weight spectrum is empty"));
        }
        if spectrum.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(invalid("weight spectrum distances must be strictly increasing"));
        }
        if spectrum.iter().any(|&(d, a)| d == 0 || !(a >= 0.0)) {
            return Err(invalid("weight spectrum needs d ≥ 1 and A_d ≥ 0"));
        }
        let d_free = spectrum[0].0;
        let truncation = spectrum[spectrum.len() - 1].0;
        Ok(Self {
            info_bits,
            coded_bits: m.round() as u32,
            d_free,
            weight_spectrum: spectrum,
            truncation,
            noise_power,
            modulation_order,
        })
    }

    /// Default code with `c` information bits at rate 1/2.
    pub fn default_k7(info_bits: u32, noise_power: f64, modulation_order: u32) -> Result<Self> {
        Self::new(info_bits, 0.5, parse_spectrum(DEFAULT_SPECTRUM)?, noise_power, modulation_order)
    }

    pub fn rate(&self) -> f64 {
        self.info_bits as f64 / self.coded_bits as f64
    }

    /// Packet length in symbols, `⌈m / log₂M⌉`.
    pub fn symbols_per_packet(&self) -> u32 {
        self.coded_bits.div_ceil(self.modulation_order.trailing_zeros())
    }
}

/// Parses lines of `d A_d`; blank lines and `#` comments are skipped.
pub fn parse_spectrum(text: &str) -> Result<Vec<(u32, f64)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let parse_err = || invalid(format!("spectrum line {}: expected `d A_d`, got `{raw}`", n + 1));
        let d: u32 = it.next().and_then(|s| s.parse().ok()).ok_or_else(parse_err)?;
        let a: f64 = it.next().and_then(|s| s.parse().ok()).ok_or_else(parse_err)?;
        if it.next().is_some() {
            return Err(parse_err());
        }
        out.push((d, a));
    }
    Ok(out)
}

pub fn load_spectrum(path: &Path) -> Result<Vec<(u32, f64)>> {
    parse_spectrum(&std::fs::read_to_string(path)?)
}

/// `0.5·erfc(√(d·γ̃·P_out/σ²))`.
pub fn bep_bpsk(d: u32, mean_gain: f64, p_out: f64, noise_power: f64) -> f64 {
    let snr = d as f64 * mean_gain * p_out / noise_power;
    0.5 * libm::erfc(snr.max(0.0).sqrt())
}

/// Union bound `1 − (1 − min(1, Σ A_d P₂(d)))^m`.
pub fn packet_error_prob(code: &CodeSpec, mean_gain: f64, p_out: f64) -> f64 {
    let inner: f64 = code
        .weight_spectrum
        .iter()
        .filter(|&&(d, _)| d >= code.d_free && d <= code.coded_bits)
        .map(|&(d, a)| a * bep_bpsk(d, mean_gain, p_out, code.noise_power))
        .sum();
    union_bound_from_sum(inner, code.coded_bits)
}

pub(crate) fn union_bound_from_sum(inner: f64, coded_bits: u32) -> f64 {
    let inner = inner.clamp(0.0, 1.0);
    // 1 − (1 − s)^m without cancellation for small s
    -((coded_bits as f64) * (-inner).ln_1p()).exp_m1()
}

/// Error probability of a packet assembled from parts: the worst part.
pub fn pep_adaptive(part_peps: &[f64]) -> Result<f64> {
    part_peps
        .iter()
        .copied()
        .reduce(f64::max)
        .ok_or_else(|| invalid("no parts to combine"))
}

/// `P_e(g, a)` for every channel state and action `0..=a_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PepTable {
    /// `rows[g][a]`.
    rows: Vec<Vec<f64>>,
}

impl PepTable {
    /// Wraps a precomputed matrix after checking the table invariants.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.is_empty() || rows[0].is_empty() {
            return Err(invalid("empty error table"));
        }
        let width = rows[0].len();
        for (g, row) in rows.iter().enumerate() {
            if row.len() != width {
                return Err(invalid("ragged error table"));
            }
            if row[0] != 1.0 {
                return Err(Error::Inconsistent(format!("state {g}: P_e at zero energy is {}", row[0])));
            }
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::Inconsistent(format!("state {g}: entry outside [0,1]")));
            }
            if row.windows(2).any(|w| w[1] > w[0] + MONOTONE_TOL) {
                return Err(Error::Inconsistent(format!("state {g}: P_e increases with energy")));
            }
        }
        Ok(Self { rows })
    }

    /// Evaluates the union bound on the action grid.
    pub fn build(code: &CodeSpec, channel: &ChannelModel, grid: &EnergyGrid, a_max: u32) -> Result<Self> {
        let rows = channel
            .mean_gains()
            .iter()
            .map(|&gain| {
                (0..=a_max)
                    .map(|a| if a == 0 { 1.0 } else { packet_error_prob(code, gain, grid.p_out_for_action(a)) })
                    .collect()
            })
            .collect();
        Self::from_rows(rows)
    }

    /// Same error probability for every state and every positive action.
    pub fn constant(num_states: usize, a_max: u32, p: f64) -> Result<Self> {
        let row: Vec<f64> = (0..=a_max).map(|a| if a == 0 { 1.0 } else { p }).collect();
        Self::from_rows(vec![row; num_states])
    }

    pub fn num_states(&self) -> usize {
        self.rows.len()
    }

    pub fn a_max(&self) -> u32 {
        (self.rows[0].len() - 1) as u32
    }

    /// `P_e(g, a)`; actions beyond the table saturate at its last column.
    pub fn get(&self, g: usize, a: u32) -> f64 {
        let row = &self.rows[g];
        row[(a as usize).min(row.len() - 1)]
    }

    pub fn row(&self, g: usize) -> &[f64] {
        &self.rows[g]
    }
}
