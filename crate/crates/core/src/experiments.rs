//! Named experiment plans and their on-disk artifacts.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{average_pdp, PdpMode};
use crate::config::{ChannelMode, HarvestModel, SimConfig};
use crate::error::{invalid, Error, Result};
use crate::policy::PolicyKind;
use crate::sim::{compare_schemes, write_csv, LinkModel, Metric, Scheme, SweepRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Experiment {
    /// PDP of MLPH against greedy for short frames.
    Fig2,
    /// Average packet transmission time, equal power.
    Fig3,
    /// PDP of greedy and equal power with both feedback schemes.
    Fig4,
    /// Spectral efficiency over a fixed horizon.
    Fig5,
    /// Simulated against analytical PDP on the reduced configuration.
    Fig6,
    /// Fig4 schemes under compound Poisson harvesting.
    Fig7,
    /// The configured scheme as is.
    Custom,
}

impl Experiment {
    pub const ALL: [Experiment; 7] = [
        Experiment::Fig2,
        Experiment::Fig3,
        Experiment::Fig4,
        Experiment::Fig5,
        Experiment::Fig6,
        Experiment::Fig7,
        Experiment::Custom,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Fig2 => "fig2",
            Experiment::Fig3 => "fig3",
            Experiment::Fig4 => "fig4",
            Experiment::Fig5 => "fig5",
            Experiment::Fig6 => "fig6",
            Experiment::Fig7 => "fig7",
            Experiment::Custom => "custom",
        }
    }

    /// Metric the plot script draws.
    pub fn headline_metric(self) -> Metric {
        match self {
            Experiment::Fig3 => Metric::AvgPacketTime,
            Experiment::Fig5 => Metric::SpectralEfficiency,
            _ => Metric::Pdp,
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s.trim())
            .ok_or_else(|| invalid(format!("unknown experiment `{s}` (fig2..fig7, custom)")))
    }
}

pub const RHO_GRID: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

/// Overrides that shrink the battery ranges enough for the frame-level chain.
pub fn reduced_config(base: &SimConfig, p_out_mw: f64) -> SimConfig {
    SimConfig {
        harvest_tx_ptx: 2.0,
        capacity_tx_ptx: 3.0,
        harvest_rx_prx: 1.2,
        capacity_rx_prx: 2.0,
        p_dec_mw: 5.0 * base.p_circuit_rx_mw,
        channel_mode: ChannelMode::PerFrame,
        beta: 4,
        policy: PolicyKind::Equal(Some(p_out_mw)),
        ..base.clone()
    }
}

/// Everything needed to run one comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct Study {
    pub config: SimConfig,
    pub schemes: Vec<Scheme>,
}

/// Fully resolved experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    pub experiment: Experiment,
    pub rhos: Vec<f64>,
    pub replications: u32,
    pub studies: Vec<Study>,
}

fn four_schemes() -> Vec<Scheme> {
    let mut v = Vec::new();
    for policy in [PolicyKind::Equal(None), PolicyKind::Greedy] {
        for beta in [1, 4] {
            v.push(Scheme { beta, policy });
        }
    }
    v
}

impl ExperimentPlan {
    /// Applies the experiment's settings on top of `base`. `rhos` replaces
    /// the default grid when given.
    pub fn new(experiment: Experiment, base: &SimConfig, rhos: Option<Vec<f64>>) -> Result<Self> {
        let mut rho_grid = rhos.unwrap_or_else(|| base.rho_grid.clone());
        if rho_grid.is_empty() {
            rho_grid = RHO_GRID.to_vec();
        }
        let studies = match experiment {
            Experiment::Fig2 => [2, 3]
                .into_iter()
                .map(|k| Study {
                    config: SimConfig { max_k: k, beta: 4, ..base.clone() },
                    schemes: vec![
                        Scheme { beta: 4, policy: PolicyKind::Mlph },
                        Scheme { beta: 4, policy: PolicyKind::Greedy },
                    ],
                })
                .collect(),
            Experiment::Fig3 => vec![Study {
                config: base.clone(),
                schemes: [1, 4].map(|beta| Scheme { beta, policy: PolicyKind::Equal(Some(15.0)) }).to_vec(),
            }],
            Experiment::Fig4 | Experiment::Fig5 => vec![Study { config: base.clone(), schemes: four_schemes() }],
            Experiment::Fig6 => [5.0, 15.0]
                .into_iter()
                .map(|mw| {
                    let config = reduced_config(base, mw);
                    Study { schemes: vec![Scheme { beta: 4, policy: config.policy }], config }
                })
                .collect(),
            Experiment::Fig7 => vec![Study {
                config: SimConfig { harvest_model: HarvestModel::Poisson, ..base.clone() },
                schemes: four_schemes(),
            }],
            Experiment::Custom => {
                vec![Study { config: base.clone(), schemes: vec![Scheme { beta: base.beta, policy: base.policy }] }]
            }
        };
        for s in &studies {
            s.config.validate().map_err(invalid)?;
        }
        Ok(Self { experiment, rhos: rho_grid, replications: base.replications, studies })
    }

    /// Simulated rows for every study.
    pub fn simulate(&self) -> Result<Vec<SweepRow>> {
        let mut rows = Vec::new();
        for s in &self.studies {
            let cmp = compare_schemes(&s.config, &s.schemes, &self.rhos, self.replications)?;
            rows.extend(cmp.rows());
        }
        Ok(rows)
    }

    /// Chain and bound PDP for each study and `ρ`.
    pub fn analytical(&self) -> Result<Vec<AnalyticalRow>> {
        let cells: Vec<(&Study, f64)> =
            self.studies.iter().flat_map(|s| self.rhos.iter().map(move |&r| (s, r))).collect();
        cells
            .par_iter()
            .map(|&(s, rho)| {
                let cfg = s.config.with_rho(rho);
                let chain = LinkModel::from_config(&cfg)?.chain_model()?;
                Ok(AnalyticalRow {
                    rho,
                    policy: cfg.policy.to_string(),
                    beta: cfg.beta,
                    max_k: cfg.max_k,
                    bound: average_pdp(&chain, PdpMode::Bound)?,
                    chain: average_pdp(&chain, PdpMode::Chain)?,
                })
            })
            .collect()
    }
}

/// Analytical PDP at one grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticalRow {
    pub rho: f64,
    pub policy: String,
    pub beta: u32,
    pub max_k: u32,
    pub bound: f64,
    pub chain: f64,
}

pub const ANALYTICAL_HEADER: &str = "rho,policy,beta,K,bound_pdp,chain_pdp";

pub fn write_analytical<W: Write>(rows: &[AnalyticalRow], mut out: W) -> Result<()> {
    writeln!(out, "{ANALYTICAL_HEADER}")?;
    for r in rows {
        writeln!(out, "{},{},{},{},{},{}", r.rho, r.policy, r.beta, r.max_k, r.bound, r.chain)?;
    }
    Ok(())
}

/// Gnuplot script drawing `metric` against `ρ` for every curve in `rows`.
pub fn plot_script(experiment: Experiment, csv_name: &str, rows: &[SweepRow], analytical: Option<&str>) -> String {
    let metric = experiment.headline_metric();
    let mut curves: Vec<(String, u32, u32)> = Vec::new();
    for r in rows.iter().filter(|r| r.metric == metric) {
        let key = (r.policy.clone(), r.beta, r.max_k);
        if !curves.contains(&key) {
            curves.push(key);
        }
    }
    let mut s = String::new();
    s.push_str("set datafile separator \",\"\n");
    s.push_str(&format!("set terminal pngcairo size 800,600\nset output \"{}.png\"\n", experiment.name()));
    s.push_str("set xlabel \"probability of energy harvesting\"\n");
    s.push_str(&format!("set ylabel \"{}\"\n", metric.name()));
    s.push_str("set key outside\n");
    if metric == Metric::Pdp {
        s.push_str("set logscale y\n");
    }
    let mut plots: Vec<String> = curves
        .iter()
        .map(|(policy, beta, k)| {
            let scheme = if *beta == 1 { "ACK/NAK" } else { "ACK/NAKx" };
            format!(
                "\"< awk -F, '$3==\\\"{policy}\\\" && $4=={beta} && $5=={k} && $6==\\\"{m}\\\"' {csv_name}\" \
                 using 1:7:8 with yerrorlines title \"{scheme} {policy} K={k}\"",
                m = metric.name()
            )
        })
        .collect();
    if let Some(file) = analytical {
        let mut policies: Vec<&str> = Vec::new();
        for r in rows {
            if !policies.contains(&r.policy.as_str()) {
                policies.push(&r.policy);
            }
        }
        for p in policies {
            for (col, mode) in [(5, "bound"), (6, "chain")] {
                plots.push(format!(
                    "\"< awk -F, '$2==\\\"{p}\\\"' {file}\" using 1:{col} with lines dashtype 2 title \"{p} {mode}\""
                ));
            }
        }
    }
    s.push_str("plot ");
    s.push_str(&plots.join(", \\\n     "));
    s.push('\n');
    s
}

/// Runs `experiment` and writes `<name>.csv`, `<name>.gp` and, for fig6,
/// `analytical.csv` into `out_dir`. Returns the written paths.
pub fn run_experiment(plan: &ExperimentPlan, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let name = plan.experiment.name();
    let context = |e: Error| invalid(format!("{name}: {e}"));
    fs::create_dir_all(out_dir)?;
    let rows = plan.simulate().map_err(context)?;
    let csv_name = format!("{name}.csv");
    let csv_path = out_dir.join(&csv_name);
    let mut written = vec![csv_path.clone()];
    let mut out = BufWriter::new(File::create(&csv_path)?);
    write_csv(&rows, &mut out)?;
    out.flush()?;

    let analytical = if plan.experiment == Experiment::Fig6 {
        let a = plan.analytical().map_err(context)?;
        let path = out_dir.join("analytical.csv");
        let mut out = BufWriter::new(File::create(&path)?);
        write_analytical(&a, &mut out)?;
        out.flush()?;
        written.push(path);
        Some("analytical.csv")
    } else {
        None
    };

    let gp = out_dir.join(format!("{name}.gp"));
    fs::write(&gp, plot_script(plan.experiment, &csv_name, &rows, analytical))?;
    written.push(gp);
    Ok(written)
}
