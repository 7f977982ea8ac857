use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sc_amp_harness::experiments::{
    default_uncoupled_grid, experiment_agreement, experiment_amp, experiment_phase_diagram, experiment_profile,
    experiment_se, experiment_uncoupled, parse_grid, write_se,
};
use sc_amp_harness::manifest::RunManifest;
use sc_amp_harness::validate::run_validation;
use sc_amp_harness::{ExperimentConfig, HarnessError, Result};

/// Spatially coupled compressed sensing with Bayes-optimal AMP.
///
/// Exit status: 0 on success, 1 on a failed check, 2 on a configuration
/// error, 3 on numeric divergence.
#[derive(Debug, Parser)]
#[command(name = "sc-amp", version)]
struct Cli {
    /// JSON configuration; the built-in desk config when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run state evolution and write the trajectory.
    Se,
    /// Run Monte Carlo AMP trials.
    Amp,
    /// Profile of phi across the band at the configured iterations.
    Profile {
        /// Overlay empirical profiles from one AMP run.
        #[arg(long)]
        overlay: bool,
    },
    /// Mean AMP error against the state-evolution prediction.
    Agreement,
    /// Noiseless success rate over an (eps, delta) grid with logistic fits.
    Phase(PhaseArgs),
    /// Uncoupled against coupled state-evolution limits.
    Uncoupled {
        /// Rates as start:stop:step; defaults to a grid spanning the
        /// information dimension to past the uncoupled threshold.
        #[arg(long)]
        deltas: Option<String>,
    },
    /// Run the invariant suite.
    Validate,
    /// Print the effective configuration as JSON.
    Config,
}

#[derive(Debug, Args)]
struct PhaseArgs {
    /// Sparsity levels; repeat or separate with commas.
    #[arg(long, value_delimiter = ',', required = true)]
    eps: Vec<f64>,
    /// Rates as start:stop:step.
    #[arg(long)]
    deltas: String,
}

fn load(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.master_seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn finish(name: &str, cfg: &ExperimentConfig, outputs: Vec<String>) -> Result<()> {
    RunManifest::new(name, cfg, outputs).write(&cfg.out_dir)?;
    eprintln!("wrote {}", cfg.out_dir.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load(cli)?;
    let out: &Path = &cfg.out_dir;
    match &cli.command {
        Command::Config => println!("{}", cfg.to_json()),
        Command::Se => {
            let traj = experiment_se(&cfg)?;
            println!(
                "iterations {}  converged {}  final MSE_SE {:.4e}",
                traj.len() - 1,
                traj.converged,
                traj.predicted_mse(traj.len() - 1)
            );
            finish("se", &cfg, write_se(&traj, out)?)?;
        }
        Command::Amp => {
            let report = experiment_amp(&cfg)?;
            for o in &report.outcomes {
                println!("trial {:>3}  iterations {:>5}  final MSE {:.4e}", o.trial, o.iterations, o.final_mse());
            }
            if let Some(r) = report.mismatch_inflation() {
                println!("mismatched-prior MSE inflation {r:.3}");
            }
            finish("amp", &cfg, report.write(out)?)?;
            if report.diverged() > 0 {
                return Err(HarnessError::Divergence(format!("{} trial(s) diverged", report.diverged())));
            }
        }
        Command::Profile { overlay } => {
            let report = experiment_profile(&cfg, *overlay)?;
            println!(
                "final max phi {:.4e}  fronts nondecreasing {}  seed bounds from t0 = {:?} ({} violations)",
                report.final_max_phi,
                report.fronts_nondecreasing(),
                report.seed_bounds.t0,
                report.seed_bounds.violations.len()
            );
            finish("profile", &cfg, report.write(out)?)?;
        }
        Command::Agreement => {
            let report = experiment_agreement(&cfg)?;
            for r in &report.rows {
                println!(
                    "t {:>4}  SE {:.4e}  AMP {:.4e} +- {:.1e}  {}",
                    r.t,
                    r.mse_se,
                    r.mse_amp,
                    r.std_err,
                    if r.within { "ok" } else { "off" }
                );
            }
            finish("agreement", &cfg, report.write(out)?)?;
            if report.diverged() > 0 {
                return Err(HarnessError::Divergence(format!("{} trial(s) diverged", report.diverged())));
            }
        }
        Command::Phase(args) => {
            let deltas = parse_grid(&args.deltas)?;
            let report = experiment_phase_diagram(&cfg, &args.eps, &deltas)?;
            for f in &report.fits {
                match (&f.fit, &f.advisory) {
                    (Some(fit), _) => println!("eps {}  delta_50 {:.4}", f.eps, fit.delta_50),
                    (None, Some(a)) => println!("eps {}  no fit: {a}", f.eps),
                    (None, None) => unreachable!("a fit or an advisory"),
                }
            }
            finish("phase", &cfg, report.write(out)?)?;
        }
        Command::Uncoupled { deltas } => {
            let grid = match deltas {
                Some(spec) => parse_grid(spec)?,
                None => default_uncoupled_grid(&cfg.signal_prior()?)?,
            };
            let report = experiment_uncoupled(&cfg, &grid)?;
            for r in &report.rows {
                println!(
                    "delta {:.4}  uncoupled phi {:.4e}  coupled interior phi {:.4e}",
                    r.delta, r.uncoupled_phi, r.coupled_phi
                );
            }
            finish("uncoupled", &cfg, report.write(out)?)?;
        }
        Command::Validate => {
            let report = run_validation(&cfg)?;
            for c in &report.checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            report.into_result()?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
