use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ehlink::analysis::{average_pdp, PdpMode};
use ehlink::config::SimConfig;
use ehlink::error::Error;
use ehlink::experiments::{run_experiment, Experiment, ExperimentPlan};
use ehlink::policy::{quantize_and_tabulate, PolicyKind};
use ehlink::sim::{compare_schemes, sweep, write_csv, LinkModel, Metric, Scheme};

#[derive(Parser)]
#[command(name = "ehlink", version, about = "Energy-harvesting link simulator and analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a named experiment and write its CSV and plot script.
    Run {
        /// fig2..fig7 or custom.
        experiment: String,
        #[command(flatten)]
        common: Common,
    },
    /// Sweep the configured scheme over the rho grid.
    Sweep(Common),
    /// Solve the MDP on the rho grid and save the quantized policy table.
    Solve(Common),
    /// Print the analytical drop probability of the equal-power chain at the
    /// configured rho.
    Analyze(Common),
    /// Compare ACK/NAK against ACK/NAKx with paired seeds.
    Compare(Common),
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for `run`, output file otherwise.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    replications: Option<u32>,
    #[arg(long)]
    policy: Option<String>,
    #[arg(long)]
    beta: Option<u32>,
    /// Single rho instead of the configured grid.
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    horizon: Option<u32>,
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. } | Error::InvalidArgument(_) => Failure::Config(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl Common {
    fn load(&self) -> Result<SimConfig, Failure> {
        let mut cfg = match &self.config {
            Some(path) => SimConfig::parse_file(path)?,
            None => SimConfig::default(),
        };
        let flag = |name: &str, value: String, cfg: &mut SimConfig| {
            cfg.set(name, &value).map_err(|msg| Failure::Config(format!("--{name}: {msg}")))
        };
        flag("seed", self.seed.to_string(), &mut cfg)?;
        if let Some(n) = self.replications {
            flag("replications", n.to_string(), &mut cfg)?;
        }
        if let Some(p) = &self.policy {
            flag("policy", p.clone(), &mut cfg)?;
        }
        if let Some(b) = self.beta {
            flag("beta", b.to_string(), &mut cfg)?;
        }
        if let Some(r) = self.rho {
            flag("rho", r.to_string(), &mut cfg)?;
            cfg.rho_grid = vec![r];
        }
        if let Some(h) = self.horizon {
            flag("horizon_slots", h.to_string(), &mut cfg)?;
        }
        cfg.validate().map_err(Failure::Config)?;
        Ok(cfg)
    }

    fn output(&self) -> Result<Box<dyn Write>, Failure> {
        Ok(match &self.out {
            Some(path) => Box::new(BufWriter::new(File::create(path)?)),
            None => Box::new(BufWriter::new(io::stdout())),
        })
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run { experiment, common } => {
            let experiment: Experiment = experiment.parse()?;
            let cfg = common.load()?;
            let plan = ExperimentPlan::new(experiment, &cfg, None)?;
            let dir = common.out.clone().unwrap_or_else(|| PathBuf::from("results"));
            for path in run_experiment(&plan, &dir)? {
                println!("{}", path.display());
            }
        }
        Command::Sweep(common) => {
            let cfg = common.load()?;
            let rows = sweep(&cfg, &cfg.rho_grid, cfg.replications)?;
            let mut out = common.output()?;
            write_csv(&rows, &mut out)?;
            out.flush()?;
        }
        Command::Solve(common) => {
            let cfg = SimConfig { policy: PolicyKind::Mlph, ..common.load()? };
            let mut solutions = Vec::new();
            for &rho in &cfg.rho_grid {
                let model = LinkModel::from_config(&cfg.with_rho(rho))?;
                let policy = model.mlph.ok_or_else(|| Failure::Runtime("policy was not solved".into()))?;
                solutions.push((rho, policy));
            }
            let table = quantize_and_tabulate(&solutions, cfg.kappa)?;
            let path = common.out.clone().unwrap_or_else(|| PathBuf::from("policy.json"));
            table.save(&path)?;
            println!("{} entries written to {}", table.entry_count(), path.display());
        }
        Command::Analyze(common) => {
            let cfg = common.load()?;
            let mut out = common.output()?;
            writeln!(out, "rho,bound_pdp,chain_pdp")?;
            let chain = LinkModel::from_config(&cfg)?.chain_model()?;
            let bound = average_pdp(&chain, PdpMode::Bound)?;
            let exact = average_pdp(&chain, PdpMode::Chain)?;
            writeln!(out, "{},{bound},{exact}", cfg.rho_tx)?;
            out.flush()?;
        }
        Command::Compare(common) => {
            let cfg = common.load()?;
            let schemes = [1, cfg.beta.max(2)].map(|beta| Scheme { beta, policy: cfg.policy });
            let cmp = compare_schemes(&cfg, &schemes, &cfg.rho_grid, cfg.replications)?;
            let mut out = common.output()?;
            write_csv(&cmp.rows(), &mut out)?;
            out.flush()?;
            eprintln!("rho,metric,nakx_minus_nak,stderr");
            for (i, rho) in cmp.rhos.iter().enumerate() {
                for metric in Metric::ALL {
                    let d = cmp.paired(i, 1, 0, metric);
                    eprintln!("{rho},{},{},{}", metric.name(), d.mean, d.stderr);
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("configuration error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
