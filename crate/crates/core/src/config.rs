//! Flat `key = value` configuration files.
//!
//! Keys carry their unit in the name (`p_out_mw`, `slot_s`). Blank lines and
//! `#` comments are ignored, unknown keys are rejected and every error
//! reports its line number.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::analysis::{CaseIII, XAccumulation};
use crate::energy::LinkEnergyConfig;
use crate::error::{Error, Result};
use crate::policy::{CostModel, PolicyKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HarvestModel {
    Bernoulli,
    Correlated,
    Poisson,
}

/// When the fading state changes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChannelMode {
    /// A new channel state every slot.
    PerSlot,
    /// Constant within a frame, stepped once when a frame ends.
    PerFrame,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InitialBattery {
    Full,
    Empty,
}

/// Every tunable of a simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub num_channel_states: usize,
    pub mean_channel_gain: f64,
    pub doppler_fd_ts: f64,
    pub channel_mode: ChannelMode,

    pub info_bits: u32,
    pub code_rate: f64,
    pub modulation_order: u32,
    /// `d A_d` listing; the built-in K=7 spectrum when absent.
    pub spectrum_file: Option<PathBuf>,
    pub noise_mw: f64,

    pub max_k: u32,
    pub beta: u32,
    pub slot_s: f64,
    pub horizon_slots: u32,

    pub alpha: f64,
    pub p_circuit_tx_mw: f64,
    pub p_circuit_rx_mw: f64,
    pub p_dec_mw: f64,
    pub p_fb_mw: f64,
    pub p_out_mw: f64,

    pub harvest_model: HarvestModel,
    pub rho_tx: f64,
    pub rho_rx: f64,
    /// Joint outcome probabilities `(tx, rx)` of the correlated model.
    pub p00: f64,
    pub p01: f64,
    pub p10: f64,
    pub p11: f64,
    /// Poisson arrivals per slot per unit of `ρ`.
    pub poisson_arrivals_per_rho: f64,
    /// Harvest amounts and capacities in multiples of `P_Tx·T_s` and
    /// `P_Rx·T_s`.
    pub harvest_tx_ptx: f64,
    pub harvest_rx_prx: f64,
    pub capacity_tx_ptx: f64,
    pub capacity_rx_prx: f64,
    pub initial_battery: InitialBattery,

    pub policy: PolicyKind,
    pub cost_model: CostModel,
    pub kappa: u32,
    pub vi_tolerance: f64,
    pub vi_max_iterations: usize,
    pub state_cap: usize,

    pub seed: u64,
    pub replications: u32,
    /// Completed frames per trial.
    pub frames: u64,
    pub rho_grid: Vec<f64>,

    pub x_accumulation: XAccumulation,
    pub case3: CaseIII,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            num_channel_states: 3,
            mean_channel_gain: 1.0,
            doppler_fd_ts: 0.05,
            channel_mode: ChannelMode::PerSlot,
            info_bits: 128,
            code_rate: 0.5,
            modulation_order: 2,
            spectrum_file: None,
            noise_mw: 5.0,
            max_k: 4,
            beta: 4,
            slot_s: 1.0,
            horizon_slots: 150,
            alpha: 1.0,
            p_circuit_tx_mw: 100.0,
            p_circuit_rx_mw: 100.0,
            p_dec_mw: 700.0,
            p_fb_mw: 0.0,
            p_out_mw: 5.0,
            harvest_model: HarvestModel::Bernoulli,
            rho_tx: 0.5,
            rho_rx: 0.5,
            p00: 0.25,
            p01: 0.25,
            p10: 0.25,
            p11: 0.25,
            poisson_arrivals_per_rho: 2.0,
            harvest_tx_ptx: 3.0,
            harvest_rx_prx: 1.5,
            capacity_tx_ptx: 6.0,
            capacity_rx_prx: 3.0,
            initial_battery: InitialBattery::Full,
            policy: PolicyKind::Greedy,
            cost_model: CostModel::Pep,
            kappa: 10,
            vi_tolerance: 1e-8,
            vi_max_iterations: 100_000,
            state_cap: 1_000_000,
            seed: 42,
            replications: 4,
            frames: 100_000,
            rho_grid: (1..=9).map(|i| i as f64 / 10.0).collect(),
            x_accumulation: XAccumulation::Cumulative,
            case3: CaseIII::Semantic,
        }
    }
}

macro_rules! named_enum {
    ($ty:ty { $($name:literal => $variant:expr),+ $(,)? }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                $(if *self == $variant { return f.write_str($name); })+
                unreachable!()
            }
        }

        impl FromStr for $ty {
            type Err = String;

            fn from_str(s: &str) -> std::result::Result<Self, String> {
                match s {
                    $($name => Ok($variant),)+
                    _ => Err(format!("expected one of: {}", [$($name),+].join(", "))),
                }
            }
        }
    };
}

named_enum!(HarvestModel { "bernoulli" => HarvestModel::Bernoulli, "correlated" => HarvestModel::Correlated, "poisson" => HarvestModel::Poisson });
named_enum!(ChannelMode { "per_slot" => ChannelMode::PerSlot, "per_frame" => ChannelMode::PerFrame });
named_enum!(InitialBattery { "full" => InitialBattery::Full, "empty" => InitialBattery::Empty });
named_enum!(CostModel { "pep" => CostModel::Pep, "nak_weighted" => CostModel::NakWeighted });
named_enum!(XAccumulation { "cumulative" => XAccumulation::Cumulative, "newly_sampled" => XAccumulation::NewlySampled });
named_enum!(CaseIII { "semantic" => CaseIII::Semantic, "literal_table" => CaseIII::LiteralTable });

fn num<T: FromStr>(value: &str) -> std::result::Result<T, String> {
    value.parse::<T>().map_err(|_| format!("cannot parse `{value}`"))
}

fn probability(value: &str) -> std::result::Result<f64, String> {
    let p: f64 = num(value)?;
    if (0.0..=1.0).contains(&p) {
        Ok(p)
    } else {
        Err(format!("{p} is outside [0, 1]"))
    }
}

fn positive(value: &str) -> std::result::Result<f64, String> {
    let v: f64 = num(value)?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{v} must be positive"))
    }
}

fn non_negative(value: &str) -> std::result::Result<f64, String> {
    let v: f64 = num(value)?;
    if v >= 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{v} must be non-negative"))
    }
}

fn at_least_one<T: FromStr + PartialOrd + From<u8>>(value: &str) -> std::result::Result<T, String> {
    let v: T = num(value)?;
    if v >= T::from(1u8) {
        Ok(v)
    } else {
        Err(format!("`{value}` must be at least 1"))
    }
}

fn format_list(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

impl SimConfig {
    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let v = value.trim();
        match key {
            "num_channel_states" => {
                let g: usize = at_least_one(v)?;
                if g < 2 {
                    return Err("at least two channel states are needed".into());
                }
                self.num_channel_states = g;
            }
            "mean_channel_gain" => self.mean_channel_gain = positive(v)?,
            "doppler_fd_ts" => self.doppler_fd_ts = positive(v)?,
            "channel_mode" => self.channel_mode = v.parse()?,
            "info_bits" => self.info_bits = at_least_one(v)?,
            "code_rate" => {
                let r = positive(v)?;
                if r > 1.0 {
                    return Err(format!("code rate {r} exceeds 1"));
                }
                self.code_rate = r;
            }
            "modulation_order" => {
                let m: u32 = num(v)?;
                if m < 2 || !m.is_power_of_two() {
                    return Err(format!("modulation order {m} must be a power of two, at least 2"));
                }
                self.modulation_order = m;
            }
            "spectrum_file" => self.spectrum_file = Some(PathBuf::from(v)),
            "noise_mw" => self.noise_mw = positive(v)?,
            "max_k" => self.max_k = at_least_one(v)?,
            "beta" => {
                let b: u32 = num(v)?;
                if !b.is_power_of_two() {
                    return Err(format!("beta = {b} is not a power of two"));
                }
                self.beta = b;
            }
            "slot_s" => self.slot_s = positive(v)?,
            "horizon_slots" => self.horizon_slots = at_least_one(v)?,
            "alpha" => self.alpha = non_negative(v)?,
            "p_circuit_tx_mw" => self.p_circuit_tx_mw = non_negative(v)?,
            "p_circuit_rx_mw" => self.p_circuit_rx_mw = non_negative(v)?,
            "p_dec_mw" => self.p_dec_mw = non_negative(v)?,
            "p_fb_mw" => self.p_fb_mw = non_negative(v)?,
            "p_out_mw" => self.p_out_mw = positive(v)?,
            "harvest_model" => self.harvest_model = v.parse()?,
            "rho" => {
                let p = probability(v)?;
                self.rho_tx = p;
                self.rho_rx = p;
            }
            "rho_tx" => self.rho_tx = probability(v)?,
            "rho_rx" => self.rho_rx = probability(v)?,
            "p00" => self.p00 = probability(v)?,
            "p01" => self.p01 = probability(v)?,
            "p10" => self.p10 = probability(v)?,
            "p11" => self.p11 = probability(v)?,
            "poisson_arrivals_per_rho" => self.poisson_arrivals_per_rho = non_negative(v)?,
            "harvest_tx_ptx" => self.harvest_tx_ptx = non_negative(v)?,
            "harvest_rx_prx" => self.harvest_rx_prx = non_negative(v)?,
            "capacity_tx_ptx" => self.capacity_tx_ptx = positive(v)?,
            "capacity_rx_prx" => self.capacity_rx_prx = positive(v)?,
            "initial_battery" => self.initial_battery = v.parse()?,
            "policy" => self.policy = v.parse().map_err(|e: Error| e.to_string())?,
            "cost_model" => self.cost_model = v.parse()?,
            "kappa" => self.kappa = at_least_one(v)?,
            "vi_tolerance" => self.vi_tolerance = positive(v)?,
            "vi_max_iterations" => self.vi_max_iterations = at_least_one(v)?,
            "state_cap" => self.state_cap = at_least_one(v)?,
            "seed" => self.seed = num(v)?,
            "replications" => self.replications = at_least_one(v)?,
            "frames" => self.frames = at_least_one(v)?,
            "rho_grid" => {
                let grid = v
                    .split(',')
                    .map(|p| probability(p.trim()))
                    .collect::<std::result::Result<Vec<f64>, String>>()?;
                if grid.is_empty() {
                    return Err("rho grid is empty".into());
                }
                self.rho_grid = grid;
            }
            "x_accumulation" => self.x_accumulation = v.parse()?,
            "case3" => self.case3 = v.parse()?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Checks relations between keys.
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.harvest_model == HarvestModel::Correlated {
            let total = self.p00 + self.p01 + self.p10 + self.p11;
            if (total - 1.0).abs() > 1e-9 {
                return Err(format!("p00 + p01 + p10 + p11 = {total}, expected 1"));
            }
        }
        let coded = self.info_bits as f64 / self.code_rate;
        if (coded - coded.round()).abs() > 1e-9 {
            return Err(format!("{} bits at rate {} is not an integer codeword", self.info_bits, self.code_rate));
        }
        let symbols = (coded.round() as u32).div_ceil(self.modulation_order.trailing_zeros());
        if self.beta > symbols {
            return Err(format!("beta = {} exceeds the packet length of {symbols} symbols", self.beta));
        }
        if let PolicyKind::Equal(Some(mw)) = self.policy {
            if !(mw > 0.0) {
                return Err("equal power must be positive".into());
            }
        }
        Ok(())
    }

    /// Parses configuration text on top of the defaults.
    pub fn parse_str(text: &str, origin: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let err = |line: usize, msg: String| Error::Config { path: origin.to_string(), line, msg };
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(n + 1, format!("expected `key = value`, got `{line}`")))?;
            let key = key.trim();
            if value.trim().is_empty() {
                return Err(err(n + 1, format!("missing value for `{key}`")));
            }
            cfg.set(key, value).map_err(|m| err(n + 1, format!("{key}: {m}")))?;
        }
        cfg.validate().map_err(|m| err(0, m))?;
        Ok(cfg)
    }

    pub fn parse_file(path: &Path) -> Result<Self> {
        let origin = path.display().to_string();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config { path: origin.clone(), line: 0, msg: e.to_string() })?;
        Self::parse_str(&text, &origin)
    }

    /// Every key with its current value, in file order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let mut out = vec![
            ("num_channel_states", self.num_channel_states.to_string()),
            ("mean_channel_gain", self.mean_channel_gain.to_string()),
            ("doppler_fd_ts", self.doppler_fd_ts.to_string()),
            ("channel_mode", self.channel_mode.to_string()),
            ("info_bits", self.info_bits.to_string()),
            ("code_rate", self.code_rate.to_string()),
            ("modulation_order", self.modulation_order.to_string()),
        ];
        if let Some(p) = &self.spectrum_file {
            out.push(("spectrum_file", p.display().to_string()));
        }
        out.extend([
            ("noise_mw", self.noise_mw.to_string()),
            ("max_k", self.max_k.to_string()),
            ("beta", self.beta.to_string()),
            ("slot_s", self.slot_s.to_string()),
            ("horizon_slots", self.horizon_slots.to_string()),
            ("alpha", self.alpha.to_string()),
            ("p_circuit_tx_mw", self.p_circuit_tx_mw.to_string()),
            ("p_circuit_rx_mw", self.p_circuit_rx_mw.to_string()),
            ("p_dec_mw", self.p_dec_mw.to_string()),
            ("p_fb_mw", self.p_fb_mw.to_string()),
            ("p_out_mw", self.p_out_mw.to_string()),
            ("harvest_model", self.harvest_model.to_string()),
            ("rho_tx", self.rho_tx.to_string()),
            ("rho_rx", self.rho_rx.to_string()),
            ("p00", self.p00.to_string()),
            ("p01", self.p01.to_string()),
            ("p10", self.p10.to_string()),
            ("p11", self.p11.to_string()),
            ("poisson_arrivals_per_rho", self.poisson_arrivals_per_rho.to_string()),
            ("harvest_tx_ptx", self.harvest_tx_ptx.to_string()),
            ("harvest_rx_prx", self.harvest_rx_prx.to_string()),
            ("capacity_tx_ptx", self.capacity_tx_ptx.to_string()),
            ("capacity_rx_prx", self.capacity_rx_prx.to_string()),
            ("initial_battery", self.initial_battery.to_string()),
            ("policy", self.policy.to_string()),
            ("cost_model", self.cost_model.to_string()),
            ("kappa", self.kappa.to_string()),
            ("vi_tolerance", self.vi_tolerance.to_string()),
            ("vi_max_iterations", self.vi_max_iterations.to_string()),
            ("state_cap", self.state_cap.to_string()),
            ("seed", self.seed.to_string()),
            ("replications", self.replications.to_string()),
            ("frames", self.frames.to_string()),
            ("rho_grid", format_list(&self.rho_grid)),
            ("x_accumulation", self.x_accumulation.to_string()),
            ("case3", self.case3.to_string()),
        ]);
        out
    }

    /// Text that parses back to an identical configuration.
    pub fn emit(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Transmit power actually used as the grid reference (W).
    pub fn reference_p_out(&self) -> f64 {
        match self.policy {
            PolicyKind::Equal(Some(mw)) => mw * 1e-3,
            _ => self.p_out_mw * 1e-3,
        }
    }

    pub fn energy_config(&self) -> LinkEnergyConfig {
        LinkEnergyConfig {
            p_out: self.reference_p_out(),
            alpha: self.alpha,
            p_circuit_tx: self.p_circuit_tx_mw * 1e-3,
            p_circuit_rx: self.p_circuit_rx_mw * 1e-3,
            p_dec: self.p_dec_mw * 1e-3,
            p_fb: self.p_fb_mw * 1e-3,
            slot_seconds: self.slot_s,
            beta: self.beta,
        }
    }

    /// Same configuration with `ρ_Tx = ρ_Rx = rho`.
    pub fn with_rho(&self, rho: f64) -> Self {
        Self { rho_tx: rho, rho_rx: rho, ..self.clone() }
    }
}
