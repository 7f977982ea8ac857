//! Desk-scale acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails. The phase diagram dominates the runtime
//! (about twenty minutes on one core).

use std::process::ExitCode;
use std::time::Instant;

use sc_amp_harness::experiments::{
    experiment_agreement, experiment_amp, experiment_phase_diagram, experiment_profile, experiment_uncoupled,
    AgreementReport,
};
use sc_amp_harness::validate::run_validation;
use sc_amp_harness::{ExperimentConfig, Result};

/// Agreement: `|mean − SE| ≤ max(2 standard errors, 10% of SE)`; built into
/// `AgreementRow::within`.
const AGREEMENT_TRIALS: usize = 10;
/// Final profile ceiling in units of `(1 + 2/(δL0)) σ²`.
const PROFILE_CEILING: f64 = 5.0;
const PHASE_EPS: [f64; 3] = [0.1, 0.3, 0.5];
/// Accepted window for `δ_50` around `ε`.
const PHASE_BELOW: f64 = 0.05;
const PHASE_ABOVE: f64 = 0.1;
const PHASE_STEP: f64 = 0.025;
const PHASE_T_MAX: usize = 1500;
const UNCOUPLED_DELTA: f64 = 0.15;
const UNCOUPLED_SIGMA: f64 = 1e-3;
const UNCOUPLED_BAD_FLOOR: f64 = 0.01;
/// Coupled interior average ceiling in units of `(1 + 2/(δL0)) σ²`.
const COUPLED_CEILING: f64 = 10.0;
const ABLATION_HORIZON: usize = 10;
const ROBUST_SIGMAS: [f64; 3] = [0.1, 0.03, 0.01];
const ROBUST_DELTA: f64 = 0.3;
const ROBUST_TRIALS: usize = 5;
const ROBUST_SPREAD: f64 = 3.0;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { passed, detail })
}

fn desk() -> ExperimentConfig {
    ExperimentConfig {
        trials: AGREEMENT_TRIALS,
        ..ExperimentConfig::default()
    }
}

fn worst_gap(r: &AgreementReport) -> (usize, f64) {
    r.rows
        .iter()
        .map(|row| (row.t, (row.mse_amp - row.mse_se).abs() / row.mse_se))
        .fold((0, 0.0), |a, b| if b.1 > a.1 { b } else { a })
}

fn se_amp_agreement() -> Result<Outcome> {
    let r = experiment_agreement(&desk())?;
    let bad = r.rows.iter().filter(|row| !row.within).count();
    let (t, gap) = worst_gap(&r);
    outcome(
        r.holds(),
        format!(
            "t = 1..{}: {} of {} iterations outside the band, first at t = {:?}; worst relative gap {:.2} at t = {}",
            r.rows.len(),
            bad,
            r.rows.len(),
            r.first_violation(),
            gap,
            t
        ),
    )
}

fn traveling_wave() -> Result<Outcome> {
    let cfg = desk();
    let r = experiment_profile(&cfg, false)?;
    let ceiling = PROFILE_CEILING * (1.0 + 2.0 / (cfg.realized_delta() * cfg.l0 as f64)) * cfg.sigma2();
    let seeds = r.seed_bounds.t0.is_some() && r.seed_bounds.violations.is_empty();
    outcome(
        r.fronts_nondecreasing() && r.final_max_phi <= ceiling && seeds,
        format!(
            "front nondecreasing: {}; final max phi {:.3e} <= {:.3e}; seed bounds from t0 = {:?} with {} violations",
            r.fronts_nondecreasing(),
            r.final_max_phi,
            ceiling,
            r.seed_bounds.t0,
            r.seed_bounds.violations.len()
        ),
    )
}

fn phase_diagram() -> Result<Outcome> {
    let cfg = ExperimentConfig {
        sigma: 0.0,
        l: 100,
        n: 50,
        trials: 10,
        t_max: PHASE_T_MAX,
        stop_tol: 1e-9,
        ..ExperimentConfig::default()
    };
    let mut passed = true;
    let mut parts = Vec::new();
    for eps in PHASE_EPS {
        let steps = ((PHASE_BELOW + PHASE_ABOVE) / PHASE_STEP).round() as usize;
        let grid: Vec<f64> = (0..=steps).map(|k| eps - PHASE_BELOW + k as f64 * PHASE_STEP).collect();
        let report = experiment_phase_diagram(&cfg, &[eps], &grid)?;
        match (&report.fits[0].fit, &report.fits[0].advisory) {
            (Some(fit), _) => {
                let ok = (eps - PHASE_BELOW..=eps + PHASE_ABOVE).contains(&fit.delta_50);
                passed &= ok;
                parts.push(format!("eps {eps}: delta_50 {:.3}{}", fit.delta_50, if ok { "" } else { " (out)" }));
            }
            (None, advisory) => {
                passed = false;
                parts.push(format!("eps {eps}: no fit ({})", advisory.clone().unwrap_or_default()));
            }
        }
    }
    outcome(passed, parts.join("; "))
}

fn uncoupled_dichotomy() -> Result<Outcome> {
    let cfg = ExperimentConfig {
        sigma: UNCOUPLED_SIGMA,
        t_max: 5000,
        ..ExperimentConfig::default()
    };
    let r = experiment_uncoupled(&cfg, &[UNCOUPLED_DELTA])?;
    let row = r.rows[0];
    let ceiling = COUPLED_CEILING * (1.0 + 2.0 / (UNCOUPLED_DELTA * cfg.l0 as f64)) * cfg.sigma2();
    outcome(
        row.uncoupled_psi > UNCOUPLED_BAD_FLOOR && row.coupled_phi <= ceiling,
        format!(
            "uncoupled limit psi {:.3e} (phi {:.3e}) > {UNCOUPLED_BAD_FLOOR}; coupled interior phi {:.3e} <= {:.3e}",
            row.uncoupled_psi, row.uncoupled_phi, row.coupled_phi, ceiling
        ),
    )
}

fn onsager_ablation() -> Result<Outcome> {
    let r = experiment_agreement(&ExperimentConfig { naive: true, ..desk() })?;
    let first = r.first_violation();
    let (t, gap) = worst_gap(&r);
    outcome(
        first.is_some_and(|t| t <= ABLATION_HORIZON),
        format!(
            "naive AMP leaves the band first at t = {first:?}; worst relative gap {gap:.2} at t = {t}; {} diverged",
            r.diverged()
        ),
    )
}

fn robustness_scaling() -> Result<Outcome> {
    let mut ratios = Vec::new();
    for sigma in ROBUST_SIGMAS {
        let cfg = ExperimentConfig {
            augmented: true,
            delta: Some(ROBUST_DELTA),
            sigma,
            trials: ROBUST_TRIALS,
            t_max: 300,
            ..ExperimentConfig::default()
        };
        let r = experiment_amp(&cfg)?;
        ratios.push(r.mean_final_mse() / cfg.sigma2());
    }
    let hi = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    outcome(
        hi / lo < ROBUST_SPREAD,
        format!(
            "MSE/sigma^2 = {} over sigma = {ROBUST_SIGMAS:?}; spread {:.2} < {ROBUST_SPREAD}",
            ratios.iter().map(|r| format!("{r:.3}")).collect::<Vec<_>>().join(", "),
            hi / lo
        ),
    )
}

fn property_suites() -> Result<Outcome> {
    let r = run_validation(&ExperimentConfig::default())?;
    let passed = r.checks.iter().filter(|c| c.passed).count();
    let failed: Vec<&str> = r.checks.iter().filter(|c| !c.passed).map(|c| c.name).collect();
    outcome(
        r.passed(),
        format!("{passed}/{} checks pass{}", r.checks.len(), if failed.is_empty() { String::new() } else { format!("; failing: {}", failed.join(", ")) }),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Result<Outcome>); 7] = [
        ("SE-AMP agreement", se_amp_agreement),
        ("traveling wave", traveling_wave),
        ("phase diagram", phase_diagram),
        ("uncoupled dichotomy", uncoupled_dichotomy),
        ("Onsager ablation", onsager_ablation),
        ("robustness scaling", robustness_scaling),
        ("property suites", property_suites),
    ];
    let mut failures = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let (passed, detail) = match run() {
            Ok(o) => (o.passed, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        failures += usize::from(!passed);
        println!(
            "{} {}. {name}: {detail} [{:.0}s]",
            if passed { "PASS" } else { "FAIL" },
            k + 1,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} passed, {failures} failed", criteria.len() - failures);
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
