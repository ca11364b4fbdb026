//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits non-zero if any fails.

use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use ehlink::analysis::{average_pdp, battery_kernel, build_xi, stationary_psi, PdpMode};
use ehlink::channel::ChannelModel;
use ehlink::config::{HarvestModel, SimConfig};
use ehlink::experiments::{reduced_config, RHO_GRID};
use ehlink::markov::{stationary_residual, SparseStochastic};
use ehlink::policy::{
    bellman_residual, build_mdp, expected_cost, policy_gains, relative_value_iteration, BeliefVector,
    CostModel, MdpParams, PolicyKind, ViOptions,
};
use ehlink::pep::PepTable;
use ehlink::sim::{compare_schemes, run_trial, run_trial_observed, LinkModel, Metric, Scheme, SlotObserver, SlotRecord};

type Outcome = Result<String, String>;

fn check(cond: bool, ok: String, bad: String) -> Outcome {
    if cond {
        Ok(ok)
    } else {
        Err(bad)
    }
}

fn fail<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

/// Chain-mode PDP against 10^6 simulated frames on the reduced config.
fn chain_matches_simulation() -> Outcome {
    let start = Instant::now();
    let mut worst = (0.0_f64, 0.0, 0.0);
    for mw in [5.0, 15.0] {
        for &rho in &RHO_GRID {
            let cfg = SimConfig { frames: 1_000_000, ..reduced_config(&SimConfig::default(), mw).with_rho(rho) };
            let model = LinkModel::from_config(&cfg).map_err(fail)?;
            let chain = average_pdp(&model.chain_model().map_err(fail)?, PdpMode::Chain).map_err(fail)?;
            let sim = run_trial(&model, cfg.seed).map_err(fail)?.pdp;
            if (sim - chain).abs() > worst.0.abs() {
                worst = (sim - chain, mw, rho);
            }
        }
    }
    let elapsed = start.elapsed();
    let msg = format!(
        "max |sim - chain| = {:.4} (at {} mW, rho {}) over 18 points in {:.1?}",
        worst.0.abs(),
        worst.1,
        worst.2,
        elapsed
    );
    check(worst.0.abs() <= 0.01 && elapsed < Duration::from_secs(300), msg.clone(), msg)
}

/// Bound-mode PDP must not fall below chain-mode PDP.
fn bound_above_chain() -> Outcome {
    let mut violations = Vec::new();
    for mw in [5.0, 15.0] {
        for &rho in &RHO_GRID {
            let cfg = reduced_config(&SimConfig::default(), mw).with_rho(rho);
            let chain_model = LinkModel::from_config(&cfg).and_then(|m| m.chain_model()).map_err(fail)?;
            let bound = average_pdp(&chain_model, PdpMode::Bound).map_err(fail)?;
            let chain = average_pdp(&chain_model, PdpMode::Chain).map_err(fail)?;
            if bound < chain {
                violations.push(format!("{mw}mW rho={rho}: bound {bound:.4} < chain {chain:.4}"));
            }
        }
    }
    check(
        violations.is_empty(),
        "bound >= chain at all 18 points".into(),
        format!("{} of 18 points violate; first: {}", violations.len(), violations.first().cloned().unwrap_or_default()),
    )
}

/// Perpetual harvesting with constant error probability gives p^K.
fn closed_form_perpetual() -> Outcome {
    let cfg = SimConfig::default().with_rho(1.0);
    let model = LinkModel::from_config(&cfg).map_err(fail)?;
    let mut worst = 0.0_f64;
    for k in 1..=4 {
        for p in [0.1, 0.5, 0.9] {
            let mut chain = model.chain_model().map_err(fail)?;
            chain.max_k = k;
            chain.p_err = vec![p; chain.num_channel_states()];
            for mode in [PdpMode::Chain, PdpMode::Bound] {
                let pdp = average_pdp(&chain, mode).map_err(fail)?;
                worst = worst.max((pdp - p.powi(k as i32)).abs());
            }
        }
    }
    let msg = format!("max |PDP - p^K| = {worst:.2e} over K in 1..4, p in {{0.1, 0.5, 0.9}}, both modes");
    check(worst <= 1e-12, msg.clone(), msg)
}

/// Paired check that scheme `a` is no worse than `b` at every grid point.
/// `lower_is_better` selects the direction.
fn no_worse(
    cfg: &SimConfig,
    a: Scheme,
    b: Scheme,
    rhos: &[f64],
    replications: u32,
    metrics: &[(Metric, bool)],
) -> Result<(Vec<String>, ehlink::sim::Comparison), String> {
    let cmp = compare_schemes(cfg, &[a, b], rhos, replications).map_err(fail)?;
    let mut bad = Vec::new();
    for (i, rho) in rhos.iter().enumerate() {
        for &(metric, lower_is_better) in metrics {
            let d = cmp.paired(i, 0, 1, metric);
            let margin = if lower_is_better { d.mean } else { -d.mean };
            if margin > 2.0 * d.stderr {
                bad.push(format!("rho={rho} {}: diff {:+.4} stderr {:.4}", metric.name(), d.mean, d.stderr));
            }
        }
    }
    Ok((bad, cmp))
}

fn nakx_packet_time() -> Outcome {
    let start = Instant::now();
    let cfg = SimConfig { frames: 10_000, ..SimConfig::default() };
    let policy = PolicyKind::Equal(Some(15.0));
    let (bad, _) = no_worse(
        &cfg,
        Scheme { beta: 4, policy },
        Scheme { beta: 1, policy },
        &RHO_GRID,
        16,
        &[(Metric::AvgPacketTime, true)],
    )?;
    let elapsed = start.elapsed();
    check(
        bad.is_empty() && elapsed < Duration::from_secs(120),
        format!("ACK/NAKx packet time <= ACK/NAK at all rho ({elapsed:.1?})"),
        format!("{} violations ({elapsed:.1?}): {}", bad.len(), bad.join("; ")),
    )
}

fn greedy_nakx_beats_equal_nak(harvest_model: HarvestModel) -> Outcome {
    let cfg = SimConfig { frames: 20_000, harvest_model, ..SimConfig::default() };
    let (bad, cmp) = no_worse(
        &cfg,
        Scheme { beta: 4, policy: PolicyKind::Greedy },
        Scheme { beta: 1, policy: PolicyKind::Equal(None) },
        &RHO_GRID,
        8,
        &[(Metric::Pdp, true), (Metric::SpectralEfficiency, false)],
    )?;
    let mean_se = |s: usize| {
        (0..RHO_GRID.len()).map(|i| cmp.summary(i, s, Metric::SpectralEfficiency).mean).sum::<f64>()
            / RHO_GRID.len() as f64
    };
    let gain = mean_se(0) / mean_se(1) - 1.0;
    check(
        bad.is_empty() && gain >= 0.05,
        format!("PDP and SE ordering hold at all rho; mean SE gain {:.1}%", 100.0 * gain),
        format!("{} ordering violations, mean SE gain {:.1}%: {}", bad.len(), 100.0 * gain, bad.join("; ")),
    )
}

fn mlph_beats_greedy() -> Outcome {
    let mut bad = Vec::new();
    for k in [2, 3] {
        let cfg = SimConfig { max_k: k, frames: 20_000, ..SimConfig::default() };
        let (b, _) = no_worse(
            &cfg,
            Scheme { beta: 4, policy: PolicyKind::Mlph },
            Scheme { beta: 4, policy: PolicyKind::Greedy },
            &[0.6, 0.7, 0.8, 0.9],
            8,
            &[(Metric::Pdp, true)],
        )?;
        bad.extend(b.into_iter().map(|s| format!("K={k} {s}")));
    }
    check(
        bad.is_empty(),
        "MLPH PDP <= greedy PDP for K in {2, 3}, rho >= 0.6".into(),
        format!("{} violations: {}", bad.len(), bad.join("; ")),
    )
}

struct Invariants<'a> {
    model: &'a LinkModel,
    belief_error: f64,
    greedy_mismatches: u64,
    decisions: u64,
    causality_violations: u64,
    slots: u64,
}

impl SlotObserver for Invariants<'_> {
    fn on_slot(&mut self, r: &SlotRecord<'_>) {
        self.slots += 1;
        let grid = &self.model.grid;
        if r.tx_spent > r.tx_available
            || r.rx_spent > r.rx_available
            || r.tx_available > grid.tx_capacity
            || r.rx_available > grid.rx_capacity
        {
            self.causality_violations += 1;
        }
        let Some(probs) = r.belief else { return };
        self.belief_error = self.belief_error.max((probs.iter().sum::<f64>() - 1.0).abs());
        if !r.decision {
            return;
        }
        self.decisions += 1;
        let belief = BeliefVector::new(probs.to_vec()).expect("valid belief");
        let cfg = &self.model.config;
        let mut best = (f64::INFINITY, 0);
        for a in 0..=r.max_action {
            let c = expected_cost(&belief, a, &self.model.pep, cfg.cost_model, self.model.rho_rx);
            if c < best.0 {
                best = (c, a);
            }
        }
        if best.1 != r.action {
            self.greedy_mismatches += 1;
        }
    }
}

fn numerical_invariants() -> Outcome {
    let start = Instant::now();
    let mut problems = Vec::new();

    let mut omega_err = 0.0_f64;
    let mut steady_err = 0.0_f64;
    for (states, fds) in [(1..=4, [0.01, 0.05, 0.1]), (5..=8, [0.005, 0.01, 0.02])] {
        for (g, fd) in states.flat_map(|g| fds.map(|fd| (g, fd))) {
            let ch = ChannelModel::rayleigh(g, 1.0, fd).map_err(fail)?;
            for row in ch.transition() {
                omega_err = omega_err.max((row.iter().sum::<f64>() - 1.0).abs());
            }
            let m = SparseStochastic::from_dense(ch.transition(), 1e-9).map_err(fail)?;
            steady_err = steady_err.max(stationary_residual(&m, ch.steady_state()));
        }
    }
    if omega_err > 1e-9 {
        problems.push(format!("channel row error {omega_err:e}"));
    }

    let mut xi_err = 0.0_f64;
    for beta in [1, 4] {
        for rho in [0.2, 0.5, 0.8] {
            let cfg = SimConfig { beta, ..reduced_config(&SimConfig::default(), 15.0).with_rho(rho) };
            let chain = LinkModel::from_config(&cfg).and_then(|m| m.chain_model()).map_err(fail)?;
            for g in 0..chain.num_channel_states() {
                xi_err = xi_err.max(build_xi(&chain, g).map_err(fail)?.max_row_error());
            }
            if rho == 0.5 {
                let kernel = battery_kernel(&chain).map_err(fail)?;
                let psi = stationary_psi(&kernel).map_err(fail)?;
                steady_err = steady_err.max(stationary_residual(&kernel, &psi));
            }
        }
    }
    if xi_err > 1e-9 {
        problems.push(format!("slot kernel row error {xi_err:e}"));
    }
    if steady_err > 1e-10 {
        problems.push(format!("steady-state residual {steady_err:e}"));
    }

    let mut pep_violations = 0;
    for mw in [5.0, 15.0, 50.0] {
        for g in [2, 3, 5] {
            let cfg = SimConfig { num_channel_states: g, p_out_mw: mw, ..SimConfig::default() };
            let pep: PepTable = LinkModel::from_config(&cfg).map_err(fail)?.pep;
            for s in 0..pep.num_states() {
                for a in 1..=pep.a_max() {
                    if pep.get(s, a) > pep.get(s, a - 1) || (s > 0 && pep.get(s, a) > pep.get(s - 1, a)) {
                        pep_violations += 1;
                    }
                }
            }
        }
    }
    if pep_violations > 0 {
        problems.push(format!("{pep_violations} error-probability monotonicity violations"));
    }

    let cfg = SimConfig { frames: 5_000, policy: PolicyKind::Greedy, rho_tx: 0.4, rho_rx: 0.4, ..SimConfig::default() };
    let model = LinkModel::from_config(&cfg).map_err(fail)?;
    let mut obs = Invariants {
        model: &model,
        belief_error: 0.0,
        greedy_mismatches: 0,
        decisions: 0,
        causality_violations: 0,
        slots: 0,
    };
    run_trial_observed(&model, cfg.seed, Some(&mut obs)).map_err(fail)?;
    if obs.slots < 10_000 {
        problems.push(format!("trace has only {} slots", obs.slots));
    }
    if obs.belief_error > 1e-12 {
        problems.push(format!("belief normalization error {:e}", obs.belief_error));
    }
    if obs.greedy_mismatches > 0 {
        problems.push(format!("{} of {} greedy decisions differ from enumeration", obs.greedy_mismatches, obs.decisions));
    }
    if obs.causality_violations > 0 {
        problems.push(format!("{} battery causality violations", obs.causality_violations));
    }
    let elapsed = start.elapsed();
    if elapsed > Duration::from_secs(60) {
        problems.push(format!("took {elapsed:.1?}"));
    }
    check(
        problems.is_empty(),
        format!(
            "row sums, residuals, belief norm, monotonicity, {} greedy decisions over {} slots, causality ({elapsed:.1?})",
            obs.decisions, obs.slots
        ),
        problems.join("; "),
    )
}

fn value_iteration() -> Outcome {
    let cfg = SimConfig { max_k: 2, policy: PolicyKind::Mlph, ..SimConfig::default() };
    let model = LinkModel::from_config(&cfg).map_err(fail)?;
    let (mdp, solution) = model.solve_mdp().map_err(fail)?;
    let residual = bellman_residual(&mdp, &solution);

    // small instance: 2 channel states, capacity 2, K = 1 -> 36 policies
    let pep = PepTable::from_rows(vec![vec![1.0, 0.6, 0.3], vec![1.0, 0.2, 0.05]]).map_err(fail)?;
    let params = MdpParams {
        capacity: 2,
        harvest: 1,
        max_k: 1,
        rho_tx: 0.5,
        rho_rx: 0.9,
        cost_model: CostModel::Pep,
        state_cap: 1_000,
    };
    let small = build_mdp(params, &[vec![0.8, 0.2], vec![0.3, 0.7]], &pep).map_err(fail)?;
    let opt = relative_value_iteration(&small, ViOptions { tolerance: 1e-12, max_iterations: 100_000 }).map_err(fail)?;
    let counts: Vec<usize> = (0..small.num_states()).map(|s| small.num_actions(s)).collect();
    let total: usize = counts.iter().product();
    if total > 200 {
        return Err(format!("enumeration instance has {total} policies"));
    }
    // no policy does better than pi* from any start state
    let mut best = f64::INFINITY;
    let mut policy = vec![0u32; counts.len()];
    for mut code in 0..total {
        for (s, &n) in counts.iter().enumerate() {
            policy[s] = (code % n) as u32;
            code /= n;
        }
        let gains = policy_gains(&small, &policy).map_err(fail)?;
        best = gains.into_iter().fold(best, f64::min);
    }
    let chosen = policy_gains(&small, &opt.policy).map_err(fail)?;
    let spread = chosen.iter().map(|g| (g - best).abs()).fold(0.0, f64::max);
    let msg = format!(
        "Bellman residual {residual:.2e} on {} states; pi* gain within {spread:.1e} of the best of {total} policies ({best:.10})",
        mdp.num_states()
    );
    check(residual < 1e-7 && spread < 1e-9 && (opt.average_cost - best).abs() < 1e-7, msg.clone(), msg)
}

fn deterministic_cli() -> Outcome {
    let run = || -> Result<Vec<u8>, String> {
        let dir = tempfile::tempdir().map_err(fail)?;
        let status = Command::new(env!("CARGO_BIN_EXE_ehlink"))
            .args(["run", "fig4", "--seed", "42", "--out"])
            .arg(dir.path())
            .output()
            .map_err(fail)?;
        if !status.status.success() {
            return Err(String::from_utf8_lossy(&status.stderr).into_owned());
        }
        std::fs::read(dir.path().join("fig4.csv")).map_err(fail)
    };
    let a = run()?;
    let b = run()?;
    check(
        a == b && !a.is_empty(),
        format!("two runs wrote identical fig4.csv ({} bytes)", a.len()),
        "fig4.csv differs between runs".into(),
    )
}

fn main() -> ExitCode {
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("chain vs simulation", Box::new(chain_matches_simulation)),
        ("bound ordering", Box::new(bound_above_chain)),
        ("perpetual-harvest closed form", Box::new(closed_form_perpetual)),
        ("NAKx packet time", Box::new(nakx_packet_time)),
        ("greedy NAKx vs equal NAK", Box::new(|| greedy_nakx_beats_equal_nak(HarvestModel::Bernoulli))),
        ("MLPH vs greedy", Box::new(mlph_beats_greedy)),
        ("Poisson harvesting ordering", Box::new(|| greedy_nakx_beats_equal_nak(HarvestModel::Poisson))),
        ("numerical invariants", Box::new(numerical_invariants)),
        ("value iteration", Box::new(value_iteration)),
        ("CLI determinism", Box::new(deterministic_cli)),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        match f() {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {detail}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
