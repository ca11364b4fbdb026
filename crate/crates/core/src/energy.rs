//! Harvesting processes, integer battery dynamics and node power draw.
//!
//! Energies are kept in Joules at the interface and converted to integer
//! battery units through an [`EnergyGrid`]. One transmitter unit is
//! `E_Tx/β` at the reference transmit power; one receiver unit is
//! `E_C,Rx/β`, refined when needed so that the decode cost is integral.

use rand::Rng;
use rand_distr::{Distribution, Exp, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Relative slack used when converting Joules to integer units.
const UNIT_EPS: f64 = 1e-9;

/// Power-consumption parameters of both nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkEnergyConfig {
    /// Reference transmit power `P_out` (W).
    pub p_out: f64,
    /// Amplifier overhead `α`.
    pub alpha: f64,
    pub p_circuit_tx: f64,
    pub p_circuit_rx: f64,
    pub p_dec: f64,
    pub p_fb: f64,
    pub slot_seconds: f64,
    /// Packet divisions `β`.
    pub beta: u32,
}

impl LinkEnergyConfig {
    pub fn validate(&self, symbols_per_packet: u32) -> Result<()> {
        for (name, v) in [
            ("p_out", self.p_out),
            ("alpha", self.alpha),
            ("p_circuit_tx", self.p_circuit_tx),
            ("p_circuit_rx", self.p_circuit_rx),
            ("p_dec", self.p_dec),
            ("p_fb", self.p_fb),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(format!("{name} must be a non-negative number, got {v}")));
            }
        }
        if !(self.slot_seconds > 0.0) {
            return Err(invalid("slot duration must be positive"));
        }
        if !self.beta.is_power_of_two() {
            return Err(invalid(format!("beta must be a power of two, got {}", self.beta)));
        }
        if self.beta > symbols_per_packet {
            return Err(invalid(format!(
                "beta {} exceeds the packet length of {symbols_per_packet} symbols",
                self.beta
            )));
        }
        Ok(())
    }

    /// `P_Tx` at the reference transmit power.
    pub fn p_tx(&self) -> f64 {
        self.p_tx_at(self.p_out)
    }

    pub fn p_tx_at(&self, p_out: f64) -> f64 {
        (1.0 + self.alpha) * p_out + self.p_circuit_tx
    }

    pub fn p_rx(&self) -> f64 {
        self.p_dec + self.p_circuit_rx + self.p_fb
    }

    pub fn e_tx(&self) -> f64 {
        self.p_tx() * self.slot_seconds
    }

    pub fn e_rx(&self) -> f64 {
        self.p_rx() * self.slot_seconds
    }

    pub fn e_min_tx(&self) -> f64 {
        self.e_tx() / self.beta as f64
    }

    pub fn e_min_rx(&self) -> f64 {
        self.e_rx() / self.beta as f64
    }
}

/// `(P_Tx, P_Rx)` for the configured reference power.
pub fn node_powers(config: &LinkEnergyConfig) -> (f64, f64) {
    (config.p_tx(), config.p_rx())
}

/// Energy arrival process for the two nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum HarvestProcess {
    /// Independent arrivals with per-node probabilities.
    Bernoulli {
        rho_tx: f64,
        rho_rx: f64,
        amount_tx: f64,
        amount_rx: f64,
    },
    /// One joint draw over the four outcomes `(tx, rx) ∈ {0,1}²`.
    CorrelatedBernoulli {
        p00: f64,
        p01: f64,
        p10: f64,
        p11: f64,
        amount_tx: f64,
        amount_rx: f64,
    },
    /// Poisson number of arrivals per slot, exponential amounts.
    CompoundPoisson {
        intensity: f64,
        mean_tx: f64,
        mean_rx: f64,
    },
}

impl HarvestProcess {
    pub fn validate(&self) -> Result<()> {
        let prob = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(invalid(format!("{name} = {p} is not a probability")))
            }
        };
        let amount = |name: &str, a: f64| {
            if a >= 0.0 && a.is_finite() {
                Ok(())
            } else {
                Err(invalid(format!("{name} = {a} must be a non-negative amount")))
            }
        };
        match *self {
            HarvestProcess::Bernoulli { rho_tx, rho_rx, amount_tx, amount_rx } => {
                prob("rho_tx", rho_tx)?;
                prob("rho_rx", rho_rx)?;
                amount("amount_tx", amount_tx)?;
                amount("amount_rx", amount_rx)
            }
            HarvestProcess::CorrelatedBernoulli { p00, p01, p10, p11, amount_tx, amount_rx } => {
                for (n, p) in [("p00", p00), ("p01", p01), ("p10", p10), ("p11", p11)] {
                    prob(n, p)?;
                }
                let total = p00 + p01 + p10 + p11;
                if (total - 1.0).abs() > 1e-12 {
                    return Err(invalid(format!("joint harvest probabilities sum to {total}")));
                }
                amount("amount_tx", amount_tx)?;
                amount("amount_rx", amount_rx)
            }
            HarvestProcess::CompoundPoisson { intensity, mean_tx, mean_rx } => {
                amount("intensity", intensity)?;
                amount("mean_tx", mean_tx)?;
                amount("mean_rx", mean_rx)
            }
        }
    }

    /// Marginal probability that each node receives energy in a slot.
    pub fn arrival_probabilities(&self, slot_seconds: f64) -> (f64, f64) {
        match *self {
            HarvestProcess::Bernoulli { rho_tx, rho_rx, .. } => (rho_tx, rho_rx),
            HarvestProcess::CorrelatedBernoulli { p01, p10, p11, .. } => (p10 + p11, p01 + p11),
            HarvestProcess::CompoundPoisson { intensity, .. } => {
                let p = -(-intensity * slot_seconds).exp_m1();
                (p, p)
            }
        }
    }
}

/// Draws the energy `(tx, rx)` in Joules arriving in one slot.
///
/// Bernoulli uses two uniforms, the correlated model one, and compound
/// Poisson a variable number depending on the arrival counts.
pub fn sample_arrivals<R: Rng + ?Sized>(process: &HarvestProcess, rng: &mut R, slot_seconds: f64) -> (f64, f64) {
    match *process {
        HarvestProcess::Bernoulli { rho_tx, rho_rx, amount_tx, amount_rx } => {
            let tx = rng.random::<f64>() < rho_tx;
            let rx = rng.random::<f64>() < rho_rx;
            (if tx { amount_tx } else { 0.0 }, if rx { amount_rx } else { 0.0 })
        }
        HarvestProcess::CorrelatedBernoulli { p00, p01, p10, amount_tx, amount_rx, .. } => {
            let u = rng.random::<f64>();
            let (tx, rx) = if u < p00 {
                (false, false)
            } else if u < p00 + p01 {
                (false, true)
            } else if u < p00 + p01 + p10 {
                (true, false)
            } else {
                (true, true)
            };
            (if tx { amount_tx } else { 0.0 }, if rx { amount_rx } else { 0.0 })
        }
        HarvestProcess::CompoundPoisson { intensity, mean_tx, mean_rx } => {
            let mean_count = intensity * slot_seconds;
            let mut draw = |mean: f64| -> f64 {
                if mean_count <= 0.0 {
                    return 0.0;
                }
                let n = Poisson::new(mean_count).map(|d| d.sample(rng)).unwrap_or(0.0) as u64;
                if mean <= 0.0 {
                    return 0.0;
                }
                let exp = Exp::new(1.0 / mean).expect("positive rate");
                (0..n).map(|_| exp.sample(rng)).sum()
            };
            let tx = draw(mean_tx);
            let rx = draw(mean_rx);
            (tx, rx)
        }
    }
}

/// Integer battery with a harvest quantum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Battery {
    pub level: u32,
    pub capacity: u32,
    pub harvest_quantum: u32,
}

impl Battery {
    pub fn new(level: u32, capacity: u32, harvest_quantum: u32) -> Result<Self> {
        if level > capacity {
            return Err(invalid(format!("battery level {level} exceeds capacity {capacity}")));
        }
        Ok(Self { level, capacity, harvest_quantum })
    }

    /// Level after adding `units`, clamped at capacity.
    pub fn charged(&self, units: u32) -> u32 {
        self.level.saturating_add(units).min(self.capacity)
    }
}

/// One slot of battery evolution. Harvested energy arrives at the start of
/// the slot and is clamped at capacity before `spent` is drawn from it.
///
/// `harvested` is the number of units that arrived this slot (use
/// `harvest_quantum` or zero for the Bernoulli models).
pub fn battery_step(battery: Battery, spent: u32, harvested: u32) -> Result<Battery> {
    let available = battery.charged(harvested);
    if spent > available {
        return Err(Error::Causality { spent, available });
    }
    Ok(Battery { level: available - spent, ..battery })
}

/// Integer unit system shared by the simulator, the MDP and the chain
/// analysis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyGrid {
    pub beta: u32,
    /// Joules per transmitter unit.
    pub q_tx: f64,
    /// Joules per receiver unit.
    pub q_rx: f64,
    pub tx_harvest: u32,
    pub tx_capacity: u32,
    /// Receiver units to sample one part of `1/β` of a packet.
    pub rx_sample: u32,
    /// Receiver units for decoding plus feedback.
    pub rx_decode: u32,
    pub rx_harvest: u32,
    pub rx_capacity: u32,
    pub slot_seconds: f64,
    pub alpha: f64,
    pub p_circuit_tx: f64,
}

impl EnergyGrid {
    /// Builds the grid from the power model, per-slot harvest amounts and
    /// battery capacities (all in Joules).
    pub fn new(
        cfg: &LinkEnergyConfig,
        harvest_tx: f64,
        harvest_rx: f64,
        capacity_tx: f64,
        capacity_rx: f64,
    ) -> Result<Self> {
        let beta = cfg.beta;
        let q_tx = cfg.e_min_tx();
        if !(q_tx > 0.0) {
            return Err(invalid("transmit energy per slot must be positive"));
        }
        let e_circuit_rx = cfg.p_circuit_rx * cfg.slot_seconds;
        let e_decode = (cfg.p_dec + cfg.p_fb) * cfg.slot_seconds;
        let base = if e_circuit_rx > 0.0 { e_circuit_rx / beta as f64 } else { cfg.e_min_rx() };
        if !(base > 0.0) {
            return Err(invalid("receiver energy per slot must be positive"));
        }
        let mut refine = None;
        for s in 1..=64u32 {
            let q = base / s as f64;
            let ratio = e_decode / q;
            if (ratio - ratio.round()).abs() <= UNIT_EPS * ratio.max(1.0) {
                refine = Some(s);
                break;
            }
        }
        let s = refine.ok_or_else(|| {
            invalid(format!(
                "decode energy {e_decode} J is not a rational multiple of the sampling energy {base} J"
            ))
        })?;
        let q_rx = base / s as f64;
        let rx_sample = if e_circuit_rx > 0.0 { s } else { 0 };
        let rx_decode = (e_decode / q_rx).round() as u32;
        let grid = Self {
            beta,
            q_tx,
            q_rx,
            tx_harvest: floor_units(harvest_tx, q_tx),
            tx_capacity: floor_units(capacity_tx, q_tx),
            rx_sample,
            rx_decode,
            rx_harvest: floor_units(harvest_rx, q_rx),
            rx_capacity: floor_units(capacity_rx, q_rx),
            slot_seconds: cfg.slot_seconds,
            alpha: cfg.alpha,
            p_circuit_tx: cfg.p_circuit_tx,
        };
        if grid.tx_capacity < beta {
            return Err(invalid(format!(
                "transmitter capacity of {} units cannot hold one full packet ({beta} units)",
                grid.tx_capacity
            )));
        }
        if grid.rx_capacity < grid.rx_full() {
            return Err(invalid(format!(
                "receiver capacity of {} units cannot cover sampling and decoding ({} units)",
                grid.rx_capacity,
                grid.rx_full()
            )));
        }
        Ok(grid)
    }

    /// Units needed to sample and decode a whole packet in one slot.
    pub fn rx_full(&self) -> u32 {
        self.beta * self.rx_sample + self.rx_decode
    }

    /// Transmit power implied by spending `a` units on a full packet.
    pub fn p_out_for_action(&self, a: u32) -> f64 {
        let p_tx = a as f64 * self.q_tx / self.slot_seconds;
        ((p_tx - self.p_circuit_tx) / (1.0 + self.alpha)).max(0.0)
    }

    /// Units actually drawn when `a` is the full-packet action and `parts`
    /// of the `β` parts are sent.
    pub fn spend_for(&self, a: u32, parts: u32) -> u32 {
        (a * parts).div_ceil(self.beta)
    }

    /// Largest full-packet action affordable with `battery` units when
    /// `parts` parts must be sent.
    pub fn max_action(&self, battery: u32, parts: u32) -> u32 {
        if parts == 0 {
            return battery;
        }
        // ceil(a·p/β) ≤ b  ⇔  a·p ≤ b·β
        (battery * self.beta) / parts
    }

    pub fn tx_units(&self, joules: f64) -> u32 {
        floor_units(joules, self.q_tx)
    }

    pub fn rx_units(&self, joules: f64) -> u32 {
        floor_units(joules, self.q_rx)
    }
}

fn floor_units(joules: f64, quantum: f64) -> u32 {
    if joules <= 0.0 {
        return 0;
    }
    let r = joules / quantum;
    (r + UNIT_EPS * r.max(1.0)).floor() as u32
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn table_defaults() -> LinkEnergyConfig {
        LinkEnergyConfig {
            p_out: 0.005,
            alpha: 1.0,
            p_circuit_tx: 0.1,
            p_circuit_rx: 0.1,
            p_dec: 0.7,
            p_fb: 0.0,
            slot_seconds: 1.0,
            beta: 4,
        }
    }

    #[test]
    fn node_power_examples() {
        let cfg = table_defaults();
        let (p_tx, p_rx) = node_powers(&cfg);
        assert!((p_tx - 0.11).abs() < 1e-15);
        assert!((p_rx - 0.8).abs() < 1e-15);
        let idle = LinkEnergyConfig { p_out: 0.0, alpha: 7.3, ..cfg };
        assert_eq!(node_powers(&idle).0, 0.1);
    }

    #[test]
    fn battery_examples() {
        let b = Battery::new(3, 6, 3).unwrap();
        assert_eq!(battery_step(b, 1, 3).unwrap().level, 5);
        let full = Battery::new(6, 6, 3).unwrap();
        assert_eq!(battery_step(full, 0, 3).unwrap().level, 6);
        let b = Battery::new(2, 6, 3).unwrap();
        assert_eq!(battery_step(b, 2, 0).unwrap().level, 0);
        assert!(matches!(battery_step(b, 3, 0), Err(Error::Causality { spent: 3, available: 2 })));
        assert!(Battery::new(7, 6, 1).is_err());
    }

    #[test]
    fn arrival_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let always = HarvestProcess::Bernoulli { rho_tx: 1.0, rho_rx: 1.0, amount_tx: 0.33, amount_rx: 1.2 };
        let both = HarvestProcess::CorrelatedBernoulli {
            p00: 0.0,
            p01: 0.0,
            p10: 0.0,
            p11: 1.0,
            amount_tx: 0.33,
            amount_rx: 1.2,
        };
        let silent = HarvestProcess::CompoundPoisson { intensity: 0.0, mean_tx: 1.0, mean_rx: 1.0 };
        for _ in 0..1000 {
            assert_eq!(sample_arrivals(&always, &mut rng, 1.0), (0.33, 1.2));
            assert_eq!(sample_arrivals(&both, &mut rng, 1.0), (0.33, 1.2));
            assert_eq!(sample_arrivals(&silent, &mut rng, 1.0), (0.0, 0.0));
        }
    }

    #[test]
    fn bernoulli_frequency() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = HarvestProcess::Bernoulli { rho_tx: 0.3, rho_rx: 0.7, amount_tx: 1.0, amount_rx: 1.0 };
        let n = 1_000_000;
        let (mut tx, mut rx) = (0u32, 0u32);
        for _ in 0..n {
            let (a, b) = sample_arrivals(&p, &mut rng, 1.0);
            tx += (a > 0.0) as u32;
            rx += (b > 0.0) as u32;
        }
        assert!((tx as f64 / n as f64 - 0.3).abs() < 0.003);
        assert!((rx as f64 / n as f64 - 0.7).abs() < 0.003);
    }

    #[test]
    fn correlated_histogram() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let probs = [0.1, 0.2, 0.3, 0.4];
        let p = HarvestProcess::CorrelatedBernoulli {
            p00: probs[0],
            p01: probs[1],
            p10: probs[2],
            p11: probs[3],
            amount_tx: 1.0,
            amount_rx: 1.0,
        };
        let n = 1_000_000;
        let mut hist = [0u32; 4];
        for _ in 0..n {
            let (a, b) = sample_arrivals(&p, &mut rng, 1.0);
            hist[2 * (a > 0.0) as usize + (b > 0.0) as usize] += 1;
        }
        for (h, p) in hist.iter().zip(probs) {
            assert!((*h as f64 / n as f64 - p).abs() < 0.005);
        }
    }

    #[test]
    fn perfectly_correlated_indicators() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let p = HarvestProcess::CorrelatedBernoulli {
            p00: 0.5,
            p01: 0.0,
            p10: 0.0,
            p11: 0.5,
            amount_tx: 1.0,
            amount_rx: 2.0,
        };
        for _ in 0..100_000 {
            let (a, b) = sample_arrivals(&p, &mut rng, 1.0);
            assert_eq!(a > 0.0, b > 0.0);
        }
    }

    #[test]
    fn compound_poisson_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let p = HarvestProcess::CompoundPoisson { intensity: 0.8, mean_tx: 0.5, mean_rx: 2.0 };
        let n = 200_000;
        let (mut tx, mut rx) = (0.0, 0.0);
        for _ in 0..n {
            let (a, b) = sample_arrivals(&p, &mut rng, 1.0);
            tx += a;
            rx += b;
        }
        assert!((tx / n as f64 - 0.4).abs() < 0.01);
        assert!((rx / n as f64 - 1.6).abs() < 0.04);
        let (pt, pr) = p.arrival_probabilities(1.0);
        assert!((pt - (1.0 - (-0.8f64).exp())).abs() < 1e-15 && pt == pr);
    }

    #[test]
    fn process_validation() {
        let bad = HarvestProcess::CorrelatedBernoulli {
            p00: 0.5,
            p01: 0.5,
            p10: 0.1,
            p11: 0.0,
            amount_tx: 1.0,
            amount_rx: 1.0,
        };
        assert!(bad.validate().is_err());
        let bad = HarvestProcess::Bernoulli { rho_tx: 1.2, rho_rx: 0.0, amount_tx: 1.0, amount_rx: 1.0 };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn default_grid() {
        let cfg = table_defaults();
        let (p_tx, p_rx) = node_powers(&cfg);
        let g = EnergyGrid::new(&cfg, 3.0 * p_tx, 1.5 * p_rx, 6.0 * p_tx, 3.0 * p_rx).unwrap();
        assert!((g.q_tx - 0.0275).abs() < 1e-15);
        assert!((g.q_rx - 0.025).abs() < 1e-15);
        assert_eq!((g.tx_harvest, g.tx_capacity), (12, 24));
        assert_eq!((g.rx_sample, g.rx_decode, g.rx_full()), (1, 28, 32));
        assert_eq!((g.rx_harvest, g.rx_capacity), (48, 96));
        assert!((g.p_out_for_action(4) - 0.005).abs() < 1e-15);
        assert_eq!(g.p_out_for_action(3), 0.0);
    }

    #[test]
    fn grid_refines_receiver_quantum() {
        // decode costs 0.7 of the circuit power at β = 2: 0.05 J parts,
        // 0.07 J decode, so the part must be split in five.
        let cfg = LinkEnergyConfig { p_dec: 0.07, beta: 2, ..table_defaults() };
        let g = EnergyGrid::new(&cfg, 1.0, 1.0, 2.0, 2.0).unwrap();
        assert_eq!(g.rx_sample, 5);
        assert_eq!(g.rx_decode, 7);
        assert!((g.q_rx - 0.01).abs() < 1e-15);
    }

    #[test]
    fn action_spend_and_bounds() {
        let cfg = table_defaults();
        let g = EnergyGrid::new(&cfg, 0.33, 1.2, 0.66, 2.4).unwrap();
        assert_eq!(g.spend_for(4, 4), 4);
        assert_eq!(g.spend_for(4, 1), 1);
        assert_eq!(g.spend_for(5, 1), 2);
        assert_eq!(g.spend_for(7, 0), 0);
        for b in 0..30 {
            for parts in 1..=4 {
                let a = g.max_action(b, parts);
                assert!(g.spend_for(a, parts) <= b);
                assert!(g.spend_for(a + 1, parts) > b);
            }
        }
    }

    #[test]
    fn beta_validation() {
        let cfg = LinkEnergyConfig { beta: 3, ..table_defaults() };
        assert!(cfg.validate(256).is_err());
        let cfg = LinkEnergyConfig { beta: 512, ..table_defaults() };
        assert!(cfg.validate(256).is_err());
        assert!(table_defaults().validate(256).is_ok());
    }
}
