//! Slot-level Monte Carlo engine, metrics and sweeps.
//!
//! Each trial owns three ChaCha8 streams (channel, harvest, decode outcome)
//! derived from the trial seed, so schemes run with the same seed see the
//! same channel and energy arrivals.

use std::io::Write;

use rand::SeedableRng;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{ChainModel, HarvestWeights};
use crate::channel::ChannelModel;
use crate::config::{ChannelMode, HarvestModel, InitialBattery, SimConfig};
use crate::energy::{EnergyGrid, HarvestProcess, LinkEnergyConfig};
use crate::error::{invalid, Error, Result};
use crate::pep::{load_spectrum, parse_spectrum, CodeSpec, PepTable, DEFAULT_SPECTRUM};
use crate::policy::{
    build_mdp, equal_action, greedy_action, mlph_action, relative_value_iteration, BeliefTracker, MdpModel,
    MdpParams, MlphPolicy, PolicyKind, ValueIterationResult, ViOptions,
};
use crate::protocol::{
    pending_after, receiver_step, transmitter_step, Feedback, Incoming, RxSampleStore,
    TxFrameState,
};

const CHANNEL_STREAM: u64 = 1;
const HARVEST_STREAM: u64 = 2;
const DECODE_STREAM: u64 = 3;

/// Configuration resolved into the models every trial shares.
#[derive(Debug, Clone)]
pub struct LinkModel {
    pub config: SimConfig,
    pub energy: LinkEnergyConfig,
    pub grid: EnergyGrid,
    pub channel: ChannelModel,
    pub code: CodeSpec,
    pub pep: PepTable,
    pub harvest: HarvestProcess,
    /// Per-slot arrival probabilities seen by the MDP and belief filter.
    pub rho_tx: f64,
    pub rho_rx: f64,
    /// Harvest quantum the MDP assumes per arrival.
    pub mdp_harvest: u32,
    pub mlph: Option<MlphPolicy>,
}

impl LinkModel {
    pub fn from_config(config: &SimConfig) -> Result<Self> {
        config.validate().map_err(invalid)?;
        let energy = config.energy_config();
        let noise = config.noise_mw * 1e-3;
        let spectrum = match &config.spectrum_file {
            Some(path) => load_spectrum(path)?,
            None => parse_spectrum(DEFAULT_SPECTRUM)?,
        };
        let code = CodeSpec::new(config.info_bits, config.code_rate, spectrum, noise, config.modulation_order)?;
        energy.validate(code.symbols_per_packet())?;
        let e_tx = energy.e_tx();
        let e_rx = energy.e_rx();
        let harvest_tx = config.harvest_tx_ptx * e_tx;
        let harvest_rx = config.harvest_rx_prx * e_rx;
        let grid = EnergyGrid::new(
            &energy,
            harvest_tx,
            harvest_rx,
            config.capacity_tx_ptx * e_tx,
            config.capacity_rx_prx * e_rx,
        )?;
        let channel = ChannelModel::rayleigh(config.num_channel_states, config.mean_channel_gain, config.doppler_fd_ts)?;
        let pep = PepTable::build(&code, &channel, &grid, grid.tx_capacity)?;
        let harvest = match config.harvest_model {
            HarvestModel::Bernoulli => HarvestProcess::Bernoulli {
                rho_tx: config.rho_tx,
                rho_rx: config.rho_rx,
                amount_tx: harvest_tx,
                amount_rx: harvest_rx,
            },
            HarvestModel::Correlated => HarvestProcess::CorrelatedBernoulli {
                p00: config.p00,
                p01: config.p01,
                p10: config.p10,
                p11: config.p11,
                amount_tx: harvest_tx,
                amount_rx: harvest_rx,
            },
            HarvestModel::Poisson => {
                let k = config.poisson_arrivals_per_rho;
                if !(k > 0.0) {
                    return Err(invalid("poisson_arrivals_per_rho must be positive for Poisson harvesting"));
                }
                HarvestProcess::CompoundPoisson {
                    intensity: k * config.rho_tx / config.slot_s,
                    mean_tx: harvest_tx / k,
                    mean_rx: harvest_rx / k,
                }
            }
        };
        harvest.validate()?;
        let (rho_tx, rho_rx) = harvest.arrival_probabilities(config.slot_s);
        let mdp_harvest = match harvest {
            HarvestProcess::CompoundPoisson { .. } if rho_tx > 0.0 => {
                // mean energy per slot spread over the arrival probability
                let units = config.rho_tx * harvest_tx / rho_tx / grid.q_tx;
                (units.round() as u32).min(grid.tx_capacity)
            }
            _ => grid.tx_harvest,
        };
        let mut model = Self {
            config: config.clone(),
            energy,
            grid,
            channel,
            code,
            pep,
            harvest,
            rho_tx,
            rho_rx,
            mdp_harvest,
            mlph: None,
        };
        if config.policy == PolicyKind::Mlph {
            let (mdp, solution) = model.solve_mdp()?;
            model.mlph = Some(MlphPolicy::from_solution(&mdp, &solution));
        }
        Ok(model)
    }

    pub fn mdp_params(&self) -> MdpParams {
        MdpParams {
            capacity: self.grid.tx_capacity,
            harvest: self.mdp_harvest,
            max_k: self.config.max_k,
            rho_tx: self.rho_tx,
            rho_rx: self.rho_rx,
            cost_model: self.config.cost_model,
            state_cap: self.config.state_cap,
        }
    }

    /// Builds and solves the fully observed MDP.
    pub fn solve_mdp(&self) -> Result<(MdpModel, ValueIterationResult)> {
        let mdp = build_mdp(self.mdp_params(), self.channel.transition(), &self.pep)?;
        let options = ViOptions { tolerance: self.config.vi_tolerance, max_iterations: self.config.vi_max_iterations };
        let solution = relative_value_iteration(&mdp, options)?;
        Ok((mdp, solution))
    }

    /// Fixed-power chain for the analytical drop probability.
    pub fn chain_model(&self) -> Result<ChainModel> {
        let weights = HarvestWeights::from_process(&self.harvest)?;
        let mut chain = ChainModel::equal_power(self.grid, self.config.max_k, weights, &self.pep, &self.channel)?;
        chain.x_accumulation = self.config.x_accumulation;
        chain.case3 = self.config.case3;
        Ok(chain)
    }

    /// Units harvested by each node for a draw in Joules.
    fn harvest_units(&self, tx_j: f64, rx_j: f64) -> (u32, u32) {
        match self.harvest {
            HarvestProcess::CompoundPoisson { .. } => (self.grid.tx_units(tx_j), self.grid.rx_units(rx_j)),
            _ => (
                if tx_j > 0.0 { self.grid.tx_harvest } else { 0 },
                if rx_j > 0.0 { self.grid.rx_harvest } else { 0 },
            ),
        }
    }
}

/// Trial outcome.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Slots per successfully delivered packet; infinite without successes.
    pub avg_packet_time: f64,
    pub pdp: f64,
    pub spectral_efficiency: f64,
    /// Mean immediate cost over decision slots.
    pub avg_cost: f64,
    pub slot_count: u64,
    pub frame_count: u64,
    pub success_count: u64,
    pub drop_count: u64,
    pub decision_count: u64,
    /// Sum of completed frame lengths.
    pub frame_slots: u64,
    pub degenerate_beliefs: u64,
}

/// Snapshot of one slot handed to a [`SlotObserver`].
#[derive(Debug, Clone, Copy)]
pub struct SlotRecord<'a> {
    pub slot: u64,
    pub channel_state: usize,
    pub retrans_index: u32,
    pub pending_parts: u32,
    /// Whether the policy was consulted (false for decode requests).
    pub decision: bool,
    pub action: u32,
    /// Largest action the policy could choose.
    pub max_action: u32,
    pub sent_parts: u32,
    pub transmitted: bool,
    pub feedback: Feedback,
    pub tx_available: u32,
    pub tx_spent: u32,
    pub rx_available: u32,
    pub rx_spent: u32,
    /// Belief the decision was based on, when the policy tracks one.
    pub belief: Option<&'a [f64]>,
}

pub trait SlotObserver {
    fn on_slot(&mut self, record: &SlotRecord<'_>);
}

/// Writes one CSV line per slot.
pub struct TraceWriter<W: Write> {
    out: W,
    header: bool,
    error: Option<std::io::Error>,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(out: W) -> Self {
        Self { out, header: false, error: None }
    }

    pub fn finish(self) -> Result<W> {
        match self.error {
            Some(e) => Err(e.into()),
            None => Ok(self.out),
        }
    }
}

impl<W: Write> SlotObserver for TraceWriter<W> {
    fn on_slot(&mut self, r: &SlotRecord<'_>) {
        if self.error.is_some() {
            return;
        }
        let mut write = || -> std::io::Result<()> {
            if !self.header {
                writeln!(self.out, "slot,g,k,pending,action,sent,feedback,tx_available,tx_spent,rx_available,rx_spent")?;
                self.header = true;
            }
            writeln!(
                self.out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.slot,
                r.channel_state,
                r.retrans_index,
                r.pending_parts,
                r.action,
                r.sent_parts,
                r.feedback,
                r.tx_available,
                r.tx_spent,
                r.rx_available,
                r.rx_spent
            )
        };
        if let Err(e) = write() {
            self.error = Some(e);
        }
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Runs until `config.frames` frames have completed.
pub fn run_trial(model: &LinkModel, seed: u64) -> Result<Metrics> {
    run_trial_observed(model, seed, None)
}

pub fn run_trial_observed(model: &LinkModel, seed: u64, mut observer: Option<&mut dyn SlotObserver>) -> Result<Metrics> {
    let cfg = &model.config;
    let grid = &model.grid;
    let beta = grid.beta;
    let per_frame = cfg.channel_mode == ChannelMode::PerFrame;
    let mut channel_rng = stream(seed, CHANNEL_STREAM);
    let mut harvest_rng = stream(seed, HARVEST_STREAM);
    let mut decode_rng = stream(seed, DECODE_STREAM);

    let mut g = model.channel.sample_steady(&mut channel_rng);
    let (mut tx_battery, mut rx_battery) = match cfg.initial_battery {
        InitialBattery::Full => (grid.tx_capacity, grid.rx_capacity),
        InitialBattery::Empty => (0, 0),
    };
    let mut tracker = match cfg.policy {
        PolicyKind::Equal(_) => None,
        _ => Some(BeliefTracker::new(model.channel.steady_state())?),
    };
    let mlph = match cfg.policy {
        PolicyKind::Mlph => Some(model.mlph.as_ref().ok_or_else(|| invalid("MLPH policy has not been solved"))?),
        _ => None,
    };

    let mut frame = TxFrameState::new_frame(beta);
    let mut store = RxSampleStore::default();
    let mut frame_start: u64 = 1;
    let horizon = cfg.horizon_slots as u64;
    let mut window = Window::default();
    let mut windows: Vec<f64> = Vec::new();

    let mut m = Metrics {
        avg_packet_time: 0.0,
        pdp: 0.0,
        spectral_efficiency: 0.0,
        avg_cost: 0.0,
        slot_count: 0,
        frame_count: 0,
        success_count: 0,
        drop_count: 0,
        decision_count: 0,
        frame_slots: 0,
        degenerate_beliefs: 0,
    };
    let mut cost_sum = 0.0;

    while m.frame_count < cfg.frames {
        let slot = m.slot_count + 1;
        let (g0, k0, tx0, rx0) = (g, frame.retrans_index, tx_battery, rx_battery);
        let fail = move |e: Error, what: &str| Error::Trial {
            slot,
            state: format!("g={g0} k={k0} tx={tx0} rx={rx0} {what}"),
            source: Box::new(e),
        };

        let (tx_j, rx_j) = crate::energy::sample_arrivals(&model.harvest, &mut harvest_rng, cfg.slot_s);
        let (h_tx, h_rx) = model.harvest_units(tx_j, rx_j);
        let tx_available = (tx_battery + h_tx).min(grid.tx_capacity);
        let rx_available = (rx_battery + h_rx).min(grid.rx_capacity);

        let pending = frame.pending_parts;
        let decision = pending > 0;
        let max_action = if decision { grid.max_action(tx_available, pending).min(model.pep.a_max()) } else { 0 };
        let action = if !decision {
            0
        } else {
            match cfg.policy {
                PolicyKind::Equal(_) => equal_action(beta, tx_available, pending),
                PolicyKind::Greedy => {
                    let belief = tracker.as_ref().map(|t| t.belief()).expect("tracked");
                    greedy_action(belief, max_action, &model.pep, cfg.cost_model, model.rho_rx)
                }
                PolicyKind::Mlph => {
                    let belief = tracker.as_ref().map(|t| t.belief()).expect("tracked");
                    mlph_action(belief, tx_available, frame.retrans_index, mlph.expect("solved")).min(max_action)
                }
            }
        };

        let tx = transmitter_step(&frame, tx_available, action, grid).map_err(|e| fail(e, "transmitter"))?;
        let u: f64 = decode_rng.random();
        let (feedback, rx_spent, success) = if tx.transmitted {
            let incoming = Incoming { parts: tx.sent_parts, state: g, action };
            let out = receiver_step(&mut store, incoming, rx_available, grid, &model.pep, u)
                .map_err(|e| fail(e, "receiver"))?;
            (out.feedback, out.spent, out.feedback.is_ack())
        } else {
            (frame.last_feedback, 0, false)
        };

        tx_battery = tx_available
            .checked_sub(tx.spent)
            .ok_or_else(|| fail(Error::Causality { spent: tx.spent, available: tx_available }, "transmitter"))?;
        rx_battery = rx_available
            .checked_sub(rx_spent)
            .ok_or_else(|| fail(Error::Causality { spent: rx_spent, available: rx_available }, "receiver"))?;

        if decision {
            m.decision_count += 1;
            let p_err = if action == 0 { 1.0 } else { model.pep.get(g, action) };
            cost_sum += cfg.cost_model.cost(p_err, model.rho_rx);
        }

        if let Some(obs) = observer.as_deref_mut() {
            obs.on_slot(&SlotRecord {
                slot,
                channel_state: g,
                retrans_index: frame.retrans_index,
                pending_parts: pending,
                decision,
                action,
                max_action,
                sent_parts: tx.sent_parts,
                transmitted: tx.transmitted,
                feedback,
                tx_available,
                tx_spent: tx.spent,
                rx_available,
                rx_spent,
                belief: tracker.as_ref().map(|t| t.belief().probs()),
            });
        }

        m.slot_count = slot;
        let frame_over = success || frame.retrans_index >= cfg.max_k;
        if let Some(t) = tracker.as_mut() {
            let informative = tx.transmitted && tx.sent_parts > 0;
            t.observe(
                feedback,
                action,
                informative,
                &model.pep,
                model.rho_rx,
                model.channel.transition(),
                !per_frame || frame_over,
            );
        }

        if frame_over {
            m.frame_count += 1;
            m.frame_slots += slot + 1 - frame_start;
            if success {
                m.success_count += 1;
            } else {
                m.drop_count += 1;
            }
            if (frame_start - 1) / horizon == (slot - 1) / horizon {
                window.frames += 1;
                window.successes += success as u64;
            }
            frame = TxFrameState::new_frame(beta);
            store.clear();
            frame_start = slot + 1;
            if per_frame {
                g = model.channel.step(g, &mut channel_rng)?;
            }
        } else {
            frame = TxFrameState {
                retrans_index: frame.retrans_index + 1,
                pending_parts: pending_after(feedback, beta),
                last_feedback: feedback,
            };
        }
        if !per_frame {
            g = model.channel.step(g, &mut channel_rng)?;
        }
        if slot % horizon == 0 {
            if window.frames > 0 {
                windows.push(window.successes as f64 / window.frames as f64);
            }
            window = Window::default();
        }
    }

    if windows.is_empty() && window.frames > 0 {
        windows.push(window.successes as f64 / window.frames as f64);
    }
    m.avg_packet_time =
        if m.success_count > 0 { m.slot_count as f64 / m.success_count as f64 } else { f64::INFINITY };
    m.pdp = if m.frame_count > 0 { m.drop_count as f64 / m.frame_count as f64 } else { 0.0 };
    m.spectral_efficiency = if windows.is_empty() { 0.0 } else { windows.iter().sum::<f64>() / windows.len() as f64 };
    m.avg_cost = if m.decision_count > 0 { cost_sum / m.decision_count as f64 } else { 0.0 };
    m.degenerate_beliefs = tracker.map(|t| t.degenerate_count()).unwrap_or(0);
    Ok(m)
}

#[derive(Debug, Default, Clone, Copy)]
struct Window {
    frames: u64,
    successes: u64,
}

/// Metric selector for tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Metric {
    AvgPacketTime,
    Pdp,
    SpectralEfficiency,
    AvgCost,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::AvgPacketTime, Metric::Pdp, Metric::SpectralEfficiency, Metric::AvgCost];

    pub fn name(self) -> &'static str {
        match self {
            Metric::AvgPacketTime => "avg_packet_time",
            Metric::Pdp => "pdp",
            Metric::SpectralEfficiency => "spectral_efficiency",
            Metric::AvgCost => "avg_cost",
        }
    }

    pub fn of(self, m: &Metrics) -> f64 {
        match self {
            Metric::AvgPacketTime => m.avg_packet_time,
            Metric::Pdp => m.pdp,
            Metric::SpectralEfficiency => m.spectral_efficiency,
            Metric::AvgCost => m.avg_cost,
        }
    }
}

/// Mean and standard error of the mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

pub fn summarize(values: &[f64]) -> Summary {
    let n = values.len();
    if n == 0 {
        return Summary { mean: f64::NAN, stderr: f64::NAN, n };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let stderr = if n > 1 {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    } else {
        0.0
    };
    Summary { mean, stderr, n }
}

/// One transmission scheme of a comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scheme {
    pub beta: u32,
    pub policy: PolicyKind,
}

impl Scheme {
    pub fn label(&self) -> &'static str {
        if self.beta == 1 {
            "ACK/NAK"
        } else {
            "ACK/NAKx"
        }
    }

    pub fn apply(&self, config: &SimConfig) -> SimConfig {
        SimConfig { beta: self.beta, policy: self.policy, ..config.clone() }
    }
}

/// One line of the result CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub rho: f64,
    pub scheme: String,
    pub policy: String,
    pub beta: u32,
    pub max_k: u32,
    pub metric: Metric,
    pub summary: Summary,
}

pub const CSV_HEADER: &str = "rho,scheme,policy,beta,K,metric,mean,stderr,n";

pub fn write_csv<W: Write>(rows: &[SweepRow], mut out: W) -> Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.rho,
            r.scheme,
            r.policy,
            r.beta,
            r.max_k,
            r.metric.name(),
            r.summary.mean,
            r.summary.stderr,
            r.summary.n
        )?;
    }
    Ok(())
}

/// Metrics of every replication for every `(ρ, scheme)`, with common seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rhos: Vec<f64>,
    pub schemes: Vec<Scheme>,
    pub max_k: u32,
    /// `samples[rho][scheme][replication]`.
    pub samples: Vec<Vec<Vec<Metrics>>>,
}

impl Comparison {
    pub fn summary(&self, rho: usize, scheme: usize, metric: Metric) -> Summary {
        let v: Vec<f64> = self.samples[rho][scheme].iter().map(|m| metric.of(m)).collect();
        summarize(&v)
    }

    /// Paired differences `a − b` over replications sharing a seed.
    pub fn paired(&self, rho: usize, a: usize, b: usize, metric: Metric) -> Summary {
        let d: Vec<f64> = self.samples[rho][a]
            .iter()
            .zip(&self.samples[rho][b])
            .map(|(x, y)| metric.of(x) - metric.of(y))
            .collect();
        summarize(&d)
    }

    pub fn rows(&self) -> Vec<SweepRow> {
        let mut rows = Vec::new();
        for (ri, &rho) in self.rhos.iter().enumerate() {
            for (si, s) in self.schemes.iter().enumerate() {
                for metric in Metric::ALL {
                    rows.push(SweepRow {
                        rho,
                        scheme: s.label().to_string(),
                        policy: s.policy.to_string(),
                        beta: s.beta,
                        max_k: self.max_k,
                        metric,
                        summary: self.summary(ri, si, metric),
                    });
                }
            }
        }
        rows
    }
}

/// Runs every scheme at every `ρ` for `replications` seeds starting at
/// `config.seed`.
pub fn compare_schemes(config: &SimConfig, schemes: &[Scheme], rhos: &[f64], replications: u32) -> Result<Comparison> {
    if replications == 0 {
        return Err(invalid("replications must be at least 1"));
    }
    if schemes.is_empty() || rhos.is_empty() {
        return Err(invalid("nothing to compare"));
    }
    let cells: Vec<(usize, usize)> =
        (0..rhos.len()).flat_map(|r| (0..schemes.len()).map(move |s| (r, s))).collect();
    let models: Vec<LinkModel> = cells
        .par_iter()
        .map(|&(r, s)| LinkModel::from_config(&schemes[s].apply(&config.with_rho(rhos[r]))))
        .collect::<Result<_>>()?;
    let tasks: Vec<(usize, u32)> =
        (0..cells.len()).flat_map(|c| (0..replications).map(move |i| (c, i))).collect();
    let results: Vec<Metrics> = tasks
        .par_iter()
        .map(|&(c, i)| run_trial(&models[c], config.seed.wrapping_add(i as u64)))
        .collect::<Result<_>>()?;
    let mut samples = vec![vec![Vec::with_capacity(replications as usize); schemes.len()]; rhos.len()];
    for (&(c, _), m) in tasks.iter().zip(results) {
        let (r, s) = cells[c];
        samples[r][s].push(m);
    }
    Ok(Comparison { rhos: rhos.to_vec(), schemes: schemes.to_vec(), max_k: config.max_k, samples })
}

/// Aggregated metrics of the configured scheme over a `ρ` grid.
pub fn sweep(config: &SimConfig, rhos: &[f64], replications: u32) -> Result<Vec<SweepRow>> {
    let scheme = Scheme { beta: config.beta, policy: config.policy };
    Ok(compare_schemes(config, &[scheme], rhos, replications)?.rows())
}
