use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ucrl_vtr::config::{Algorithm, ExperimentConfig};
use ucrl_vtr::harness::{run_experiment, write_outputs, Environment};
use ucrl_vtr::vtr::Bonus;
use ucrl_vtr::Result;

#[derive(Parser)]
#[command(name = "ucrl-vtr", version, about = "Regret experiments for optimistic learning in linear mixture MDPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured experiment and write CSV/JSON outputs.
    Run(Overrides),
    /// Check a configuration and the model it describes.
    Validate(Overrides),
    /// Print the optimal gain, policy and stationary distribution.
    Oracle(Overrides),
}

#[derive(Args)]
struct Overrides {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated algorithm ids.
    #[arg(long, value_delimiter = ',')]
    algo: Option<Vec<Algorithm>>,
    #[arg(long = "T")]
    horizon: Option<u64>,
    #[arg(long)]
    replications: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    bonus: Option<Bonus>,
    #[arg(long)]
    stride: Option<u64>,
    /// Run replications one after another.
    #[arg(long)]
    serial: bool,
}

impl Overrides {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        let run = &mut cfg.run;
        if let Some(a) = &self.algo {
            run.algorithms = a.clone();
        }
        if let Some(t) = self.horizon {
            run.horizon = t;
        }
        if let Some(r) = self.replications {
            run.replications = r;
        }
        if let Some(s) = self.seed {
            run.seed = s;
        }
        if let Some(d) = &self.out_dir {
            run.out_dir = d.clone();
        }
        if let Some(s) = self.stride {
            run.stride = s;
        }
        if self.serial {
            run.parallel = false;
        }
        if let Some(b) = self.bonus {
            cfg.agent.bonus = b;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(o: &Overrides) -> Result<bool> {
    let cfg = o.resolve()?;
    let out = run_experiment(&cfg)?;
    let written = write_outputs(&cfg.run.out_dir, &cfg, &out)?;
    let s = &out.summary;
    println!("rho* = {} ({}), diameter = {}", s.rho_star, s.rho_star_source, s.diameter);
    for a in &s.algorithms {
        match &a.final_regret {
            Some(r) => println!(
                "{:<14} final regret {:>12.3} +- {:<10.3} ({} ok, {} failed)",
                a.id.id(),
                r.mean,
                r.std,
                a.n_success,
                a.n_failed
            ),
            None => println!("{:<14} no successful runs ({} failed)", a.id.id(), a.n_failed),
        }
    }
    println!("wrote {} files to {}", written.len(), cfg.run.out_dir.display());
    Ok(s.failures.is_empty())
}

fn validate(o: &Overrides) -> Result<bool> {
    let cfg = o.resolve()?;
    let env = Environment::from_config(&cfg)?;
    let mdp = &env.mdp;
    println!(
        "states {}, actions {}, d {}, rho* = {} ({})",
        mdp.n_states(),
        mdp.n_actions(),
        mdp.dim(),
        env.rho_star,
        env.rho_source
    );
    let mut ok = true;
    let rvi = mdp.optimal_gain()?.rho;
    let gain_ok = (rvi - env.rho_star).abs() <= 1e-8;
    println!("optimal gain by value iteration {rvi}: {}", if gain_ok { "ok" } else { "MISMATCH" });
    ok &= gain_ok;
    let diameter = env.diameter;
    let d_ok = diameter <= mdp.diameter_bound() * (1.0 + 1e-9);
    println!(
        "diameter {diameter} vs configured bound {}: {}",
        mdp.diameter_bound(),
        if d_ok { "ok" } else { "EXCEEDS" }
    );
    ok &= d_ok;
    if let Some(h) = &env.hard {
        println!("gap {} (formula {}), alpha {}, beta {}", h.gap, h.gap_formula, h.alpha, h.beta);
    }
    Ok(ok)
}

fn oracle(o: &Overrides) -> Result<bool> {
    let cfg = o.resolve()?;
    let env = Environment::from_config(&cfg)?;
    let g = env.mdp.optimal_gain()?;
    let mu = env.mdp.stationary_distribution(&g.policy)?;
    println!("rho* = {} ({})", env.rho_star, env.rho_source);
    println!("policy {:?}", g.policy.actions());
    println!("bias {:?}", g.bias);
    println!("stationary distribution {mu:?}");
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(o) => run(o),
        Command::Validate(o) => validate(o),
        Command::Oracle(o) => oracle(o),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
