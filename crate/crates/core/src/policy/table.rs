//! Precomputed MLPH lookup table over quantized beliefs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::policy::belief::BeliefVector;
use crate::policy::heuristics::MlphPolicy;

pub const TABLE_VERSION: u32 = 1;

/// Actions for every `(ρ grid point, battery, k, belief bucket)`.
///
/// A bucket is the belief rounded coordinate-wise to multiples of `1/κ`;
/// buckets are stored densely in mixed radix `κ + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyTable {
    pub version: u32,
    pub kappa: u32,
    pub num_channel_states: usize,
    pub capacity: u32,
    pub max_k: u32,
    pub rho_grid: Vec<f64>,
    actions: Vec<u16>,
}

/// Rounded coordinates `round(κ·ϖ(g))`.
pub fn bucket(belief: &BeliefVector, kappa: u32) -> Vec<u32> {
    belief.probs().iter().map(|p| (p * kappa as f64).round() as u32).collect()
}

/// Renormalized belief of a bucket; `None` when every coordinate is zero.
pub fn bucket_belief(coords: &[u32]) -> Option<BeliefVector> {
    let total: u32 = coords.iter().sum();
    if total == 0 {
        return None;
    }
    let probs: Vec<f64> = coords.iter().map(|&c| c as f64 / total as f64).collect();
    BeliefVector::new(probs).ok()
}

/// Tabulates one solved policy per ρ grid point.
pub fn quantize_and_tabulate(solutions: &[(f64, MlphPolicy)], kappa: u32) -> Result<PolicyTable> {
    let first = &solutions.first().ok_or_else(|| invalid("no solved policies to tabulate"))?.1;
    if kappa == 0 {
        return Err(invalid("kappa must be positive"));
    }
    if solutions.windows(2).any(|w| !(w[1].0 > w[0].0)) {
        return Err(invalid("rho grid must be strictly increasing"));
    }
    for (_, p) in solutions {
        if p.capacity != first.capacity || p.num_channel_states != first.num_channel_states || p.max_k != first.max_k {
            return Err(invalid("solved policies disagree on the state space"));
        }
    }
    let g = first.num_channel_states;
    let buckets = (kappa as usize + 1).pow(g as u32);
    let mut actions = Vec::with_capacity(solutions.len() * (first.capacity as usize + 1) * first.max_k as usize * buckets);
    for (_, policy) in solutions {
        for b in 0..=first.capacity {
            for k in 1..=first.max_k {
                for code in 0..buckets {
                    let coords = decode_bucket(code, kappa, g);
                    let a = match bucket_belief(&coords) {
                        Some(belief) => policy.action(b, belief.argmax(), k),
                        None => 0,
                    };
                    actions.push(a as u16);
                }
            }
        }
    }
    Ok(PolicyTable {
        version: TABLE_VERSION,
        kappa,
        num_channel_states: g,
        capacity: first.capacity,
        max_k: first.max_k,
        rho_grid: solutions.iter().map(|(r, _)| *r).collect(),
        actions,
    })
}

fn decode_bucket(mut code: usize, kappa: u32, g: usize) -> Vec<u32> {
    let radix = kappa as usize + 1;
    let mut coords = vec![0; g];
    for c in coords.iter_mut() {
        *c = (code % radix) as u32;
        code /= radix;
    }
    coords
}

fn encode_bucket(coords: &[u32], kappa: u32) -> usize {
    let radix = kappa as usize + 1;
    coords.iter().rev().fold(0, |acc, &c| acc * radix + c.min(kappa) as usize)
}

impl PolicyTable {
    pub fn entry_count(&self) -> usize {
        self.actions.len()
    }

    /// `κ·|U|·|S|²` bits with `|S| = (B^max + 1)·|G|·K` and `|U| = B^max + 1`.
    pub fn memory_formula_bits(&self) -> u128 {
        let s = (self.capacity as u128 + 1) * self.num_channel_states as u128 * self.max_k as u128;
        let u = self.capacity as u128 + 1;
        self.kappa as u128 * u * s * s
    }

    fn rho_index(&self, rho: f64) -> usize {
        let mut best = 0;
        for (i, r) in self.rho_grid.iter().enumerate() {
            if (r - rho).abs() < (self.rho_grid[best] - rho).abs() {
                best = i;
            }
        }
        best
    }

    /// Action for the nearest ρ grid point and the belief's bucket.
    pub fn lookup(&self, rho: f64, belief: &BeliefVector, battery: u32, k: u32) -> u32 {
        let b = battery.min(self.capacity);
        let buckets = (self.kappa as usize + 1).pow(self.num_channel_states as u32);
        let per_rho = (self.capacity as usize + 1) * self.max_k as usize * buckets;
        let idx = self.rho_index(rho) * per_rho
            + (b as usize * self.max_k as usize + (k as usize - 1)) * buckets
            + encode_bucket(&bucket(belief, self.kappa), self.kappa);
        (self.actions[idx] as u32).min(battery)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let table: Self = serde_json::from_slice(&std::fs::read(path)?)?;
        if table.version != TABLE_VERSION {
            return Err(invalid(format!("policy table version {} is not supported", table.version)));
        }
        Ok(table)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::heuristics::mlph_action;

    fn policy() -> MlphPolicy {
        // b ∈ {0,1,2}, G = 2, K = 2
        MlphPolicy {
            capacity: 2,
            num_channel_states: 2,
            max_k: 2,
            actions: vec![0, 0, 0, 0, 1, 1, 0, 1, 2, 1, 1, 2],
        }
    }

    #[test]
    fn rounding_bucket() {
        let b = BeliefVector::new(vec![0.94, 0.06]).unwrap();
        let coords = bucket(&b, 10);
        assert_eq!(coords, vec![9, 1]);
        let back = bucket_belief(&coords).unwrap();
        assert!((back.probs()[0] - 0.9).abs() < 1e-15 && (back.probs()[1] - 0.1).abs() < 1e-15);
        assert_eq!(encode_bucket(&coords, 10), 9 + 11);
        assert_eq!(decode_bucket(20, 10, 2), coords);
    }

    #[test]
    fn grid_beliefs_match_direct_mlph() {
        let p = policy();
        let table = quantize_and_tabulate(&[(0.5, p.clone())], 10).unwrap();
        for i in 0..=10 {
            let w = i as f64 / 10.0;
            let belief = BeliefVector::new(vec![w, 1.0 - w]).unwrap();
            for b in 0..=2 {
                for k in 1..=2 {
                    assert_eq!(table.lookup(0.5, &belief, b, k), mlph_action(&belief, b, k, &p));
                }
            }
        }
    }

    #[test]
    fn size_accounting() {
        let table = quantize_and_tabulate(&[(0.2, policy()), (0.8, policy())], 10).unwrap();
        assert_eq!(table.entry_count(), 2 * 3 * 2 * 121);
        // |S| = 12, |U| = 3
        assert_eq!(table.memory_formula_bits(), 10 * 3 * 144);
    }

    #[test]
    fn file_round_trip() {
        let table = quantize_and_tabulate(&[(0.2, policy()), (0.8, policy())], 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("policy.json");
        table.save(&path).unwrap();
        let loaded = PolicyTable::load(&path).unwrap();
        assert_eq!(loaded, table);
        let belief = BeliefVector::new(vec![0.3, 0.7]).unwrap();
        assert_eq!(loaded.lookup(0.75, &belief, 2, 1), table.lookup(0.75, &belief, 2, 1));
    }
}
