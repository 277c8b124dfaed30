use anyhow::Result;
use ccbo_cli::commands::{self, Session};
use ccbo_cli::config::{resolve_out_dir, ConfigError, ExperimentConfig, OUT_ENV};
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

/// Controlled consensus-based optimization experiments.
#[derive(Debug, Parser)]
#[command(name = "ccbo", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// Overrides `cbo.seed` (the base seed for batches).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to `out_dir`, then `$CCBO_OUT/<name>`, then `out/<name>`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the discounted HJB equation and write the coefficient file.
    SolveHjb(Common),
    /// One particle simulation.
    Run(Common),
    /// `n_runs` simulations with consecutive seeds and a summary.
    Batch {
        #[command(flatten)]
        common: Common,
        /// Worker threads (default: all cores).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Deterministic feedback and gradient flows.
    Flow(Common),
}

fn session(c: &Common) -> Result<Session> {
    let mut cfg = ExperimentConfig::load(&c.config)?;
    if let Some(seed) = c.seed {
        cfg.cbo.seed = seed;
    }
    let env_root = std::env::var(OUT_ENV).ok();
    let out = resolve_out_dir(c.out.as_deref(), &cfg, &c.config, env_root.as_deref());
    Ok(Session::new(cfg, out))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.3e}"))
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SolveHjb(c) => {
            let s = session(&c)?;
            let (vfa, report) = commands::solve_hjb(&s)?;
            for st in &report.stages {
                println!("mu={:<8} iterations={:<3} residual={:.3e}", st.mu, st.inner_iterations, st.residual_norm);
            }
            println!(
                "{} basis functions, mass condition {:.2e}, wrote {}",
                vfa.basis().len(),
                report.mass_condition,
                s.out.join(commands::VALUE_FUNCTION_FILE).display()
            );
        }
        Command::Run(c) => {
            let s = session(&c)?;
            let doc = commands::run(&s)?;
            println!(
                "{} seed {}: {} steps, W2^2 {}, variance {:.3e}, consensus {:?}",
                doc.variant.name(),
                doc.seed,
                doc.steps,
                fmt_opt(doc.final_w2sq),
                doc.final_variance,
                doc.final_consensus
            );
            println!("wrote {}", s.out.join(&doc.run_file).display());
        }
        Command::Batch { common, jobs } => {
            let s = session(&common)?;
            let doc = commands::batch(&s, jobs)?;
            let m = &doc.summary;
            println!(
                "{} x{} ({} failed): mean W2^2 {}, median {}, success rate {}",
                doc.variant.name(),
                m.n_runs,
                m.failed,
                fmt_opt(m.mean_final_w2sq),
                fmt_opt(m.median_final_w2sq),
                m.success_rate.map_or_else(|| "n/a".into(), |r| format!("{r:.2}"))
            );
            println!("wrote {}", s.out.join(commands::BATCH_SUMMARY_FILE).display());
        }
        Command::Flow(c) => {
            let s = session(&c)?;
            for o in commands::flow(&s)? {
                let status = o.diverged_at.map_or_else(|| "completed".to_string(), |k| format!("diverged at step {k}"));
                println!("{}: {status}, endpoint {:?} -> {}", o.kind.name(), o.endpoint, o.file.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
