use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::error;

use stvar::io::pipeline::find_draw_stores;
use stvar::io::{dry_run, estimate, irf_from_stores, run_sbc, run_studies, RunConfig};
use stvar::ShockTag;

/// Bayesian smooth-transition VAR with external instruments.
#[derive(Parser, Debug)]
#[command(name = "stvar", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Run configuration (`key = value` file, or a previous run's manifest.json).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base RNG seed (chain i uses seed + i on stream i).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Number of chains.
    #[arg(long, global = true)]
    chains: Option<usize>,
    /// Shock whose instrument identifies the model.
    #[arg(long, global = true, value_parser = ["tg", "fg", "qe"])]
    shock: Option<String>,
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Validate inputs and print the resolved model without sampling.
    #[arg(long, global = true)]
    dry_run: bool,
    /// Override any config key, e.g. `--set chain.n_iter=4000`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample the posterior and write draws, impulse responses and diagnostics.
    Estimate,
    /// Recompute impulse responses from saved draw stores.
    Irf {
        /// Draw store files; defaults to every draws_chain<i>.csv in the output directory.
        #[arg(long, num_args = 1..)]
        draws: Vec<PathBuf>,
    },
    /// Simulation-based calibration on synthetic data.
    Sbc,
    /// Check the configuration and data; optionally run the synthetic validation studies.
    Validate {
        #[arg(long)]
        studies: bool,
        /// Size of the studies relative to the acceptance-suite settings.
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
    },
}

fn resolve(c: &Common) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => RunConfig::default(),
    };
    for kv in &c.overrides {
        let (k, v) = kv
            .split_once('=')
            .with_context(|| format!("--set expects KEY=VALUE, got `{kv}`"))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(s) = c.seed {
        cfg.chain.seed = s;
        cfg.sbc.seed = s;
    }
    if let Some(n) = c.chains {
        cfg.chains = n;
    }
    if let Some(s) = &c.shock {
        cfg.shock = s.parse::<ShockTag>()?;
    }
    if let Some(d) = &c.output_dir {
        cfg.output_dir = d.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = resolve(&cli.common)?;
    match cli.command {
        Command::Sbc if cli.common.dry_run => {
            print_json(&cfg.sbc)?;
        }
        Command::Validate { studies, scale } => {
            if cli.common.config.is_none() && !studies {
                bail!("nothing to validate: pass --config for the data, --studies for the validation studies");
            }
            if cli.common.config.is_some() {
                let (data, summary) = dry_run(&cfg)?;
                print_json(&summary)?;
                print_json(&data.provenance)?;
            }
            if studies && !cli.common.dry_run {
                let v = run_studies(&cfg, scale)?;
                print_json(&v)?;
            }
        }
        _ if cli.common.dry_run => {
            let (_, summary) = dry_run(&cfg)?;
            print_json(&summary)?;
        }
        Command::Estimate => {
            let out = estimate(&cfg)?;
            for c in &out.diagnostics.chains {
                println!(
                    "chain {}: {} draws, acceptance {:.3} (burn-in {:.3})",
                    c.chain,
                    c.draws,
                    c.acceptance_post.unwrap_or(f64::NAN),
                    c.acceptance_burn.unwrap_or(f64::NAN)
                );
            }
            let s = out.diagnostics.stability;
            println!(
                "explosive draws: regime 1 {}, regime 0 {}, average {} of {}",
                s.explosive_regime1, s.explosive_regime0, s.explosive_average, s.draws
            );
            for (name, hash) in &out.files {
                println!("{hash}  {}", out.dir.join(name).display());
            }
        }
        Command::Irf { draws } => {
            let stores = if draws.is_empty() { find_draw_stores(&cfg.output_dir)? } else { draws };
            let surface = irf_from_stores(&cfg, &stores)?;
            println!(
                "wrote {} ({} dates x {} horizons x {} variables)",
                cfg.output_dir.join("irf.csv").display(),
                surface.dates.len(),
                surface.horizons.len(),
                surface.variables.len()
            );
        }
        Command::Sbc => {
            let report = run_sbc(&cfg)?;
            println!("{} of {} replicates completed, {} faults", report.completed, report.requested, report.faults.len());
            for p in &report.parameters {
                println!("{:>24}  chi2 {:8.2}  p {:.4}", p.name, p.chi_square, p.p_value);
            }
            println!("uniformity at the 1% level: {}", if report.all_uniform(0.01) { "not rejected" } else { "rejected" });
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e:#}");
            ExitCode::FAILURE
        }
    }
}
