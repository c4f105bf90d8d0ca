//! `hpro`: generate synthetic hierarchies, run selection experiments, study
//! objective/test correlation and check the bound properties.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use hpro::experiment::{
    cmd_correlate, cmd_generate, cmd_reselect, cmd_run, cmd_verify, ReselectOutcome, RunOptions, VerifyOptions,
};

#[derive(Parser, Debug)]
#[command(name = "hpro", version, about = "Proxy-guided hyperparameter selection for hierarchical forecasts")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Replace the configured seed list with this single seed.
    #[arg(long, global = true)]
    seed_override: Option<u64>,
    /// Upper bound on concurrent trial evaluations.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory (overrides `[run] out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

impl Global {
    fn options(&self) -> RunOptions {
        RunOptions { seed_override: self.seed_override, jobs: self.jobs, out: self.out.clone() }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the synthetic dataset described by a config.
    Generate {
        #[arg(long, short)]
        config: PathBuf,
    },
    /// Run every configured method over every seed.
    Run {
        #[arg(long, short)]
        config: PathBuf,
        /// Re-select from a saved store instead of running the full pipeline.
        #[arg(long, value_name = "STORE")]
        reselect: Option<PathBuf>,
        /// History length for `--reselect` (default: the store's own).
        #[arg(long, requires = "reselect")]
        history: Option<usize>,
    },
    /// Emit objective/test scatter data and Pearson summaries for a run directory.
    Correlate {
        /// A directory written by `run`.
        run_dir: PathBuf,
    },
    /// Check the bound sweep, the perfect-proxy identity and the variance demo.
    Verify {
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Feed mislabeled proxies to the bound sweep.
        #[arg(long)]
        inject_fault: bool,
    },
    /// Re-score a saved trial store on a new window and select again.
    Reselect {
        #[arg(long, short)]
        config: PathBuf,
        #[arg(long)]
        store: PathBuf,
        /// Run seed the store belongs to (default: inferred from `seed_<n>`).
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        history: Option<usize>,
    },
}

fn print_reselect(r: &ReselectOutcome) {
    let original = r.original.map_or_else(|| "none".to_string(), |i| i.to_string());
    println!(
        "{} seed {} T={}: trial {} selected (was {original}) over {} trials; written to {}",
        r.store_name,
        r.seed,
        r.history,
        r.reselected,
        r.trials,
        r.written_to.display()
    );
}

fn run(cli: Cli) -> Result<ExitCode> {
    let opts = cli.global.options();
    match cli.command {
        Command::Generate { config } => {
            let dir = cmd_generate(&config, &opts).with_context(|| format!("generating from {}", config.display()))?;
            println!("dataset written to {}", dir.display());
        }
        Command::Run { config, reselect: Some(store), history } => {
            print_reselect(&cmd_reselect(&config, &opts, &store, opts.seed_override, history)?);
        }
        Command::Run { config, reselect: None, .. } => {
            let (run, out) = cmd_run(&config, &opts).with_context(|| format!("running {}", config.display()))?;
            for method in &run.methods {
                let values: Vec<String> =
                    run.r_h(method).iter().map(|v| v.map_or_else(|| "failed".into(), |x| format!("{x:.4}"))).collect();
                println!("{method:<20} {}", values.join(" "));
            }
            for seed in &run.seeds {
                for m in &seed.methods {
                    if let Err(e) = &m.result {
                        eprintln!("seed {} {}: {e}", seed.seed, m.name);
                    }
                }
            }
            println!("results written to {}", out.display());
            let failed = run.failed_checks();
            if !failed.is_empty() {
                for (seed, check, detail) in &failed {
                    eprintln!("check failed: seed {seed} {check}: {detail}");
                }
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Correlate { run_dir } => {
            let summary = cmd_correlate(&run_dir).with_context(|| format!("correlating {}", run_dir.display()))?;
            for row in &summary.rows {
                println!("{:<20} {:<10} {:>8.4} ± {:.4}", row.method, row.family, row.mean, row.std);
            }
        }
        Command::Verify { n, seed, inject_fault } => {
            let report = cmd_verify(&VerifyOptions { n, seed, inject_fault, out: opts.out.clone() })?;
            let violations = report.violations();
            println!("bound sweep: {}/{} instances hold", report.sweep.len() - violations.len(), report.sweep.len());
            for r in &violations {
                println!("  violation at seed {}: lhs {:e} > rhs {:e}", r.seed, r.lhs, r.rhs);
            }
            let lemma_ok = report.lemma1.iter().filter(|r| r.holds).count();
            println!("perfect-proxy identity: {lemma_ok}/{} instances hold", report.lemma1.len());
            for (cfg, demo, ok) in &report.variance {
                println!(
                    "variance rho={}: sample {:.4}, theoretical {:.4} [{}]",
                    cfg.rho,
                    demo.sample,
                    demo.theoretical,
                    if *ok { "ok" } else { "FAIL" }
                );
            }
            if !report.passed() {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Reselect { config, store, seed, history } => {
            print_reselect(&cmd_reselect(&config, &opts, &store, seed, history)?);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
