//! The experiments: state evolution alone, Monte Carlo AMP, the wave
//! profile, SE/AMP agreement, the phase diagram and the uncoupled
//! comparison. Each returns a report; `write` methods persist it as CSV
//! (and SVG where a picture helps) and return the file names.

use std::path::Path;

use rayon::prelude::*;
use sc_amp::amp::{reconstruct_augmented, run_amp, PhiSource};
use sc_amp::coupling::{BaseMatrix, SensingMatrix};
use sc_amp::priors::SignalPrior;
use sc_amp::state_evolution::{
    evaluate_seed_bounds, run_state_evolution, run_uncoupled_se, wave_front, SeedBoundReport, Trajectory,
};

use crate::config::{ExperimentConfig, PhiSourceKind};
use crate::error::{HarnessError, Result};
use crate::instance::generate_instance;
use crate::logit::{fit_logit, LogitFit};
use crate::seeds::{splitmix64, task_seed, Stream};
use crate::svg::{LineChart, Series};

/// Everything derived once from a config.
#[derive(Debug, Clone)]
pub struct Setup {
    pub base: BaseMatrix,
    pub prior: SignalPrior,
    pub denoiser: SignalPrior,
    pub sigma2: f64,
    /// `M/N`.
    pub delta: f64,
}

impl Setup {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Setup {
            base: cfg.base_matrix()?,
            prior: cfg.signal_prior()?,
            denoiser: cfg.denoising_prior()?,
            sigma2: cfg.sigma2(),
            delta: cfg.realized_delta(),
        })
    }

    pub fn state_evolution(&self, cfg: &ExperimentConfig) -> Result<Trajectory> {
        Ok(run_state_evolution(&self.base, &self.prior, self.sigma2, self.delta, cfg.se_options())?)
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))
}

fn csv_writer(dir: &Path, name: &str) -> Result<csv::Writer<std::fs::File>> {
    create_dir(dir)?;
    let path = dir.join(name);
    let file = std::fs::File::create(&path).map_err(|e| HarnessError::io(&path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn write_svg(dir: &Path, name: &str, chart: &LineChart) -> Result<()> {
    create_dir(dir)?;
    let path = dir.join(name);
    std::fs::write(&path, chart.render()).map_err(|e| HarnessError::io(&path, e))
}

/// One Monte Carlo run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    pub trial: usize,
    pub matrix_seed: u64,
    pub signal_seed: u64,
    /// `MSE_AMP(t)` at index `t - 1`; shorter than requested if the run
    /// stopped early or diverged.
    pub mse: Vec<f64>,
    /// `φ̂(t)` at index `t - 1`.
    pub phi_hat: Vec<Vec<f64>>,
    pub iterations: usize,
    /// The divergence message, if the run blew up.
    pub diverged: Option<String>,
}

impl TrialOutcome {
    pub fn final_mse(&self) -> f64 {
        if self.diverged.is_some() {
            f64::INFINITY
        } else {
            self.mse.last().copied().unwrap_or(f64::INFINITY)
        }
    }

    /// `MSE_AMP(t)`, holding the last value after an early stop and
    /// infinite after a divergence.
    pub fn mse_at(&self, t: usize) -> f64 {
        match self.mse.get(t - 1) {
            Some(&v) => v,
            None if self.diverged.is_some() => f64::INFINITY,
            None => self.final_mse(),
        }
    }
}

/// Samples trial `index` of `cfg` and runs AMP on it with `denoiser`.
/// A numeric divergence is recorded in the outcome rather than returned.
pub fn run_trial(
    cfg: &ExperimentConfig,
    setup: &Setup,
    denoiser: &SignalPrior,
    traj: Option<&Trajectory>,
    master: u64,
    index: usize,
) -> Result<TrialOutcome> {
    let matrix_seed = task_seed(master, index as u64, Stream::Matrix);
    let signal_seed = task_seed(master, index as u64, Stream::Signal);
    let mut a = SensingMatrix::sample(&setup.base, cfg.m_per_group(), cfg.n, matrix_seed, false)?;
    if cfg.augmented {
        a = a.augment_identity()?;
    }
    let inst = generate_instance(&a, &setup.prior, cfg.sigma, signal_seed)?;
    let source = match (cfg.phi_source, traj) {
        (PhiSourceKind::StateEvolution, Some(t)) => PhiSource::StateEvolution(t),
        (PhiSourceKind::StateEvolution, None) => {
            return Err(HarnessError::Config("state_evolution phi source needs a trajectory".into()))
        }
        (PhiSourceKind::Empirical, _) => PhiSource::Empirical,
        (PhiSourceKind::Robust, _) => PhiSource::Robust,
    };
    let opts = cfg.amp_options();
    let result = if cfg.augmented {
        reconstruct_augmented(&a, &inst.y, denoiser, source, opts, Some(&inst.x)).map(|r| (r.mse, r.amp))
    } else {
        run_amp(&a, &inst.y, denoiser, source, opts, Some(&inst.x)).map(|r| (r.mse.clone(), r))
    };
    match result {
        Ok((mse, run)) => Ok(TrialOutcome {
            trial: index,
            matrix_seed,
            signal_seed,
            mse,
            phi_hat: run.phi_hat,
            iterations: run.iterations,
            diverged: None,
        }),
        Err(sc_amp::Error::Divergence { iteration, reason }) => Ok(TrialOutcome {
            trial: index,
            matrix_seed,
            signal_seed,
            mse: Vec::new(),
            phi_hat: Vec::new(),
            iterations: iteration,
            diverged: Some(reason),
        }),
        Err(e) => Err(e.into()),
    }
}

/// Runs `cfg.trials` independent trials in parallel, in trial order.
pub fn run_trials(
    cfg: &ExperimentConfig,
    setup: &Setup,
    denoiser: &SignalPrior,
    traj: Option<&Trajectory>,
) -> Result<Vec<TrialOutcome>> {
    (0..cfg.trials)
        .into_par_iter()
        .map(|i| run_trial(cfg, setup, denoiser, traj, cfg.master_seed, i))
        .collect()
}

fn needs_trajectory(cfg: &ExperimentConfig) -> bool {
    cfg.phi_source == PhiSourceKind::StateEvolution
}

/// State evolution on its own.
pub fn experiment_se(cfg: &ExperimentConfig) -> Result<Trajectory> {
    Setup::new(cfg)?.state_evolution(cfg)
}

pub fn write_se(traj: &Trajectory, dir: &Path) -> Result<Vec<String>> {
    create_dir(dir)?;
    let path = dir.join("se.csv");
    let file = std::fs::File::create(&path).map_err(|e| HarnessError::io(&path, e))?;
    traj.write_csv(file)?;
    let mut chart = LineChart::new("State evolution", "t", "predicted MSE").log_y();
    chart.push(Series::line(
        "MSE_SE",
        (1..traj.len()).map(|t| (t as f64, traj.predicted_mse(t))).collect(),
    ));
    write_svg(dir, "se.svg", &chart)?;
    Ok(vec!["se.csv".into(), "se.svg".into()])
}

/// Monte Carlo AMP. With a mismatched prior the same instances are also
/// solved with the true prior, to measure the cost of the mismatch.
#[derive(Debug, Clone, PartialEq)]
pub struct AmpReport {
    pub outcomes: Vec<TrialOutcome>,
    pub matched: Option<Vec<TrialOutcome>>,
}

impl AmpReport {
    pub fn mean_final_mse(&self) -> f64 {
        mean(self.outcomes.iter().map(TrialOutcome::final_mse))
    }

    /// Mean final MSE with the mismatched prior over that with the true one.
    pub fn mismatch_inflation(&self) -> Option<f64> {
        self.matched
            .as_ref()
            .map(|m| self.mean_final_mse() / mean(m.iter().map(TrialOutcome::final_mse)))
    }

    pub fn diverged(&self) -> usize {
        self.outcomes.iter().filter(|o| o.diverged.is_some()).count()
    }

    pub fn write(&self, dir: &Path) -> Result<Vec<String>> {
        let mut w = csv_writer(dir, "amp.csv")?;
        w.write_record(["trial", "t", "mse"])?;
        for o in &self.outcomes {
            for (k, v) in o.mse.iter().enumerate() {
                w.write_record([o.trial.to_string(), (k + 1).to_string(), v.to_string()])?;
            }
        }
        w.flush().map_err(|e| HarnessError::io(dir.join("amp.csv"), e))?;
        let mut w = csv_writer(dir, "amp_summary.csv")?;
        w.write_record([
            "trial",
            "matrix_seed",
            "signal_seed",
            "iterations",
            "final_mse",
            "matched_final_mse",
            "diverged",
        ])?;
        for (k, o) in self.outcomes.iter().enumerate() {
            let matched = self.matched.as_ref().map_or(String::new(), |m| m[k].final_mse().to_string());
            w.write_record([
                o.trial.to_string(),
                o.matrix_seed.to_string(),
                o.signal_seed.to_string(),
                o.iterations.to_string(),
                o.final_mse().to_string(),
                matched,
                o.diverged.clone().unwrap_or_default(),
            ])?;
        }
        w.flush().map_err(|e| HarnessError::io(dir.join("amp_summary.csv"), e))?;
        Ok(vec!["amp.csv".into(), "amp_summary.csv".into()])
    }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    s / n as f64
}

pub fn experiment_amp(cfg: &ExperimentConfig) -> Result<AmpReport> {
    let setup = Setup::new(cfg)?;
    let traj = if needs_trajectory(cfg) { Some(setup.state_evolution(cfg)?) } else { None };
    let outcomes = run_trials(cfg, &setup, &setup.denoiser, traj.as_ref())?;
    let matched = if cfg.mismatched_prior.is_some() {
        Some(run_trials(cfg, &setup, &setup.prior, traj.as_ref())?)
    } else {
        None
    };
    Ok(AmpReport { outcomes, matched })
}

/// The traveling-wave picture: `φ_a(t)` across the band.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileReport {
    pub trajectory: Trajectory,
    /// Band row labels `a = -ρ⁻¹, …, L-1+ρ⁻¹`.
    pub labels: Vec<i64>,
    /// Requested iterations, clamped to the trajectory.
    pub times: Vec<usize>,
    /// Threshold separating reconstructed rows from the rest: midway between
    /// the seed-level bound `(1 + 2/(δL0))σ²` and the uncoupled fixed point.
    pub front_threshold: f64,
    /// Wave-front position for every `t ≥ 1`.
    pub fronts: Vec<usize>,
    pub seed_bounds: SeedBoundReport,
    /// Largest `φ` over all rows of the final profile.
    pub final_max_phi: f64,
    /// `φ̂` band profiles from one AMP run at the requested times.
    pub empirical: Option<Vec<Vec<f64>>>,
}

impl ProfileReport {
    pub fn fronts_nondecreasing(&self) -> bool {
        self.fronts.windows(2).all(|w| w[1] >= w[0])
    }

    pub fn write(&self, dir: &Path) -> Result<Vec<String>> {
        let g = self.trajectory.profiles[0].phi.len() - self.labels.len();
        let mut w = csv_writer(dir, "profile.csv")?;
        w.write_record(["t", "a", "phi", "phi_hat"])?;
        for (k, &t) in self.times.iter().enumerate() {
            let p = self.trajectory.at(t);
            for (j, &a) in self.labels.iter().enumerate() {
                let hat = self.empirical.as_ref().map_or(String::new(), |e| e[k][j].to_string());
                w.write_record([t.to_string(), a.to_string(), p.phi[g + j].value().to_string(), hat])?;
            }
        }
        w.flush().map_err(|e| HarnessError::io(dir.join("profile.csv"), e))?;
        let mut w = csv_writer(dir, "wave_front.csv")?;
        w.write_record(["t", "front"])?;
        for (k, f) in self.fronts.iter().enumerate() {
            w.write_record([(k + 1).to_string(), f.to_string()])?;
        }
        w.flush().map_err(|e| HarnessError::io(dir.join("wave_front.csv"), e))?;

        let mut chart = LineChart::new("Profile of phi across the band", "a", "phi_a(t)").log_y();
        for (k, &t) in self.times.iter().enumerate() {
            let p = self.trajectory.at(t);
            let pts = self.labels.iter().enumerate().map(|(j, &a)| (a as f64, p.phi[g + j].value())).collect();
            chart.push(Series::line(format!("t = {t}"), pts));
            if let Some(e) = &self.empirical {
                let pts = self.labels.iter().zip(&e[k]).map(|(&a, &v)| (a as f64, v)).collect();
                chart.push(Series::line(format!("AMP t = {t}"), pts).markers());
            }
        }
        write_svg(dir, "profile.svg", &chart)?;
        Ok(vec!["profile.csv".into(), "wave_front.csv".into(), "profile.svg".into()])
    }
}

/// Runs SE and summarizes the wave. With `overlay`, one AMP run supplies
/// empirical profiles at the same times.
pub fn experiment_profile(cfg: &ExperimentConfig, overlay: bool) -> Result<ProfileReport> {
    let setup = Setup::new(cfg)?;
    let traj = setup.state_evolution(cfg)?;
    let g = *setup.base.geometry().expect("coupled base");
    let labels: Vec<i64> = (-(g.rho_inv as i64)..=g.l as i64 - 1 + g.rho_inv as i64).collect();
    let good = (1.0 + 2.0 / (setup.delta * g.l0 as f64)) * setup.sigma2;
    let bad = run_uncoupled_se(&setup.prior, setup.sigma2, setup.delta, cfg.se_options())?.limit_phi();
    let front_threshold = 0.5 * (good + bad.max(good));
    let fronts = traj.profiles[1..]
        .iter()
        .map(|p| wave_front(p, &setup.base, front_threshold))
        .collect::<sc_amp::Result<Vec<_>>>()?;
    let seed_bounds = evaluate_seed_bounds(&traj, &setup.base, &setup.prior)?;
    if cfg.check_seed_bounds && !seed_bounds.holds() {
        let mut v = seed_bounds.violations.clone();
        if seed_bounds.t0.is_none() {
            v.push("seed bounds never hold".into());
        }
        return Err(HarnessError::Validation(v));
    }
    let final_max_phi = traj.last().phi.iter().map(|p| p.value()).fold(0.0, f64::max);
    let times: Vec<usize> = cfg.profile_times.iter().map(|&t| t.clamp(1, traj.len() - 1)).collect();
    let empirical = if overlay {
        let t_last = *times.iter().max().unwrap_or(&1);
        let run_cfg = ExperimentConfig {
            t_max: t_last,
            stop_tol: 0.0,
            ..cfg.clone()
        };
        let o = run_trial(&run_cfg, &setup, &setup.denoiser, Some(&traj), cfg.master_seed, 0)?;
        if let Some(reason) = o.diverged {
            return Err(HarnessError::Divergence(reason));
        }
        let band = g.band_rows();
        Some(times.iter().map(|&t| o.phi_hat[t - 1][band.clone()].to_vec()).collect())
    } else {
        None
    };
    Ok(ProfileReport {
        trajectory: traj,
        labels,
        times,
        front_threshold,
        fronts,
        seed_bounds,
        final_max_phi,
        empirical,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgreementRow {
    pub t: usize,
    pub mse_se: f64,
    pub mse_amp: f64,
    /// Standard error of the mean over trials.
    pub std_err: f64,
    /// `|mean - MSE_SE| ≤ max(2 SE, 0.1 MSE_SE)`.
    pub within: bool,
}

/// SE prediction against the trial mean of AMP, iteration by iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct AgreementReport {
    pub rows: Vec<AgreementRow>,
    pub outcomes: Vec<TrialOutcome>,
}

impl AgreementReport {
    pub fn first_violation(&self) -> Option<usize> {
        self.rows.iter().find(|r| !r.within).map(|r| r.t)
    }

    pub fn holds(&self) -> bool {
        self.first_violation().is_none()
    }

    pub fn diverged(&self) -> usize {
        self.outcomes.iter().filter(|o| o.diverged.is_some()).count()
    }

    pub fn write(&self, dir: &Path) -> Result<Vec<String>> {
        let mut w = csv_writer(dir, "agreement.csv")?;
        w.write_record(["t", "mse_se", "mse_amp_mean", "mse_amp_stderr", "within"])?;
        for r in &self.rows {
            w.write_record([
                r.t.to_string(),
                r.mse_se.to_string(),
                r.mse_amp.to_string(),
                r.std_err.to_string(),
                r.within.to_string(),
            ])?;
        }
        w.flush().map_err(|e| HarnessError::io(dir.join("agreement.csv"), e))?;
        let mut chart = LineChart::new("AMP against state evolution", "t", "MSE").log_y();
        chart.push(Series::line("MSE_SE", self.rows.iter().map(|r| (r.t as f64, r.mse_se)).collect()));
        chart.push(
            Series::line("MSE_AMP", self.rows.iter().map(|r| (r.t as f64, r.mse_amp)).collect())
                .with_errors(self.rows.iter().map(|r| r.std_err).collect())
                .markers(),
        );
        write_svg(dir, "agreement.svg", &chart)?;
        Ok(vec!["agreement.csv".into(), "agreement.svg".into()])
    }
}

/// Last iteration compared: the SE prediction is followed until it drops
/// below `1e-5` or converges.
pub fn agreement_horizon(traj: &Trajectory, t_max: usize) -> usize {
    let last = (traj.len() - 1).min(t_max).max(1);
    (1..=last).find(|&t| traj.predicted_mse(t) < 1e-5).map_or(last, |t| t.saturating_sub(1).max(1))
}

/// Compares per-iteration AMP means with the SE prediction.
pub fn agreement_from(traj: &Trajectory, outcomes: Vec<TrialOutcome>, horizon: usize) -> AgreementReport {
    let n = outcomes.len() as f64;
    let rows = (1..=horizon)
        .map(|t| {
            let vals: Vec<f64> = outcomes.iter().map(|o| o.mse_at(t)).collect();
            let m = vals.iter().sum::<f64>() / n;
            let var = if n > 1.0 {
                vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                f64::INFINITY
            };
            let std_err = (var / n).sqrt();
            let mse_se = traj.predicted_mse(t);
            let within = m.is_finite() && (m - mse_se).abs() <= (2.0 * std_err).max(0.1 * mse_se);
            AgreementRow {
                t,
                mse_se,
                mse_amp: m,
                std_err,
                within,
            }
        })
        .collect();
    AgreementReport { rows, outcomes }
}

pub fn experiment_agreement(cfg: &ExperimentConfig) -> Result<AgreementReport> {
    if cfg.trials < 2 {
        return Err(HarnessError::Config("agreement needs at least 2 trials".into()));
    }
    let setup = Setup::new(cfg)?;
    let traj = setup.state_evolution(cfg)?;
    let horizon = agreement_horizon(&traj, cfg.t_max);
    let run_cfg = ExperimentConfig {
        t_max: horizon,
        stop_tol: 0.0,
        ..cfg.clone()
    };
    let outcomes = run_trials(&run_cfg, &setup, &setup.denoiser, Some(&traj))?;
    Ok(agreement_from(&traj, outcomes, horizon))
}

/// One trial of the phase diagram.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseTrial {
    pub eps: f64,
    /// Requested rate.
    pub delta_nominal: f64,
    /// `M/N`, the rate the fit uses.
    pub delta: f64,
    pub m: usize,
    pub trial: usize,
    pub final_mse: f64,
    pub iterations: usize,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseFit {
    pub eps: f64,
    /// `d̄(p_X)`, the information-theoretic limit.
    pub info_dimension: f64,
    pub fit: Option<LogitFit>,
    /// Why the fit failed, when it did.
    pub advisory: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseReport {
    pub trials: Vec<PhaseTrial>,
    pub fits: Vec<PhaseFit>,
}

impl PhaseReport {
    pub fn write(&self, dir: &Path) -> Result<Vec<String>> {
        let mut w = csv_writer(dir, "phase.csv")?;
        w.write_record(["eps", "delta_nominal", "delta", "m", "trial", "final_mse", "iterations", "success"])?;
        for r in &self.trials {
            w.write_record([
                r.eps.to_string(),
                r.delta_nominal.to_string(),
                r.delta.to_string(),
                r.m.to_string(),
                r.trial.to_string(),
                r.final_mse.to_string(),
                r.iterations.to_string(),
                r.success.to_string(),
            ])?;
        }
        w.flush().map_err(|e| HarnessError::io(dir.join("phase.csv"), e))?;
        let mut w = csv_writer(dir, "phase_fit.csv")?;
        w.write_record(["eps", "info_dimension", "delta_50", "beta0", "beta1", "advisory"])?;
        for f in &self.fits {
            let (d, b0, b1) = f.fit.map_or((String::new(), String::new(), String::new()), |x| {
                (x.delta_50.to_string(), x.beta0.to_string(), x.beta1.to_string())
            });
            w.write_record([
                f.eps.to_string(),
                f.info_dimension.to_string(),
                d,
                b0,
                b1,
                f.advisory.clone().unwrap_or_default(),
            ])?;
        }
        w.flush().map_err(|e| HarnessError::io(dir.join("phase_fit.csv"), e))?;
        let mut chart = LineChart::new("Empirical phase transition", "eps", "delta");
        let fitted: Vec<(f64, f64)> = self.fits.iter().filter_map(|f| f.fit.map(|x| (f.eps, x.delta_50))).collect();
        chart.push(Series::line("delta_50", fitted).markers());
        chart.push(Series::line("delta = d(p_X)", self.fits.iter().map(|f| (f.eps, f.info_dimension)).collect()).dashed());
        write_svg(dir, "phase.svg", &chart)?;
        Ok(vec!["phase.csv".into(), "phase_fit.csv".into(), "phase.svg".into()])
    }
}

/// Parses `start:stop:step` into an inclusive grid.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let bad = || HarnessError::Config(format!("grid `{spec}` is not start:stop:step"));
    let parts: Vec<f64> = spec
        .split(':')
        .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<_>>()?;
    let [start, stop, step] = parts[..] else { return Err(bad()) };
    if !(step > 0.0 && start.is_finite() && stop >= start) {
        return Err(bad());
    }
    let count = ((stop - start) / step + 1e-9).floor() as usize;
    Ok((0..=count).map(|k| start + k as f64 * step).collect())
}

/// Noiseless recovery rate over an `(ε, δ)` grid, with a logistic fit of
/// success against `δ` for each `ε`.
///
/// Each trial's seed depends on `(master, ε, M, trial)` only, so points can
/// be added to a grid without changing the others. Grid values that round
/// to the same `M` are run once.
pub fn experiment_phase_diagram(cfg: &ExperimentConfig, eps_list: &[f64], deltas: &[f64]) -> Result<PhaseReport> {
    if cfg.sigma > 1e-6 {
        return Err(HarnessError::Config(format!(
            "the phase diagram needs sigma <= 1e-6, got {}",
            cfg.sigma
        )));
    }
    if eps_list.is_empty() || deltas.is_empty() {
        return Err(HarnessError::Config("empty eps list or delta grid".into()));
    }
    let mut tasks = Vec::new();
    for &eps in eps_list {
        let eps_cfg = cfg.with_eps(eps)?;
        let mut seen = Vec::new();
        for &d in deltas {
            let point = eps_cfg.with_delta(d)?;
            let m = point.m_per_group();
            if seen.contains(&m) {
                continue;
            }
            seen.push(m);
            for trial in 0..cfg.trials {
                tasks.push((eps, d, point.clone(), trial));
            }
        }
    }
    let trials: Vec<PhaseTrial> = tasks
        .par_iter()
        .map(|(eps, d, point, trial)| {
            let setup = Setup::new(point)?;
            let traj = if needs_trajectory(point) { Some(setup.state_evolution(point)?) } else { None };
            let m = point.m_per_group();
            let master = splitmix64(point.master_seed ^ eps.to_bits()).wrapping_add(m as u64);
            let o = run_trial(point, &setup, &setup.denoiser, traj.as_ref(), master, *trial)?;
            let final_mse = o.final_mse();
            Ok(PhaseTrial {
                eps: *eps,
                delta_nominal: *d,
                delta: point.realized_delta(),
                m,
                trial: *trial,
                final_mse,
                iterations: o.iterations,
                success: final_mse < point.success_threshold * setup.prior.variance(),
            })
        })
        .collect::<Result<_>>()?;
    let fits = eps_list
        .iter()
        .map(|&eps| {
            let info_dimension = cfg.with_eps(eps)?.signal_prior()?.info_dimension();
            let data: Vec<(f64, bool)> = trials
                .iter()
                .filter(|r| r.eps == eps)
                .map(|r| (r.delta, r.success))
                .collect();
            Ok(match fit_logit(&data) {
                Ok(fit) => PhaseFit {
                    eps,
                    info_dimension,
                    fit: Some(fit),
                    advisory: None,
                },
                Err(e) => PhaseFit {
                    eps,
                    info_dimension,
                    fit: None,
                    advisory: Some(e.to_string()),
                },
            })
        })
        .collect::<Result<_>>()?;
    Ok(PhaseReport { trials, fits })
}

/// Limits of the uncoupled and coupled recursions at one rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UncoupledRow {
    pub delta: f64,
    pub uncoupled_phi: f64,
    pub uncoupled_psi: f64,
    /// Mean `φ` over band rows `a = 0, …, L-1`.
    pub coupled_phi: f64,
    /// Mean `ψ` over column groups `0, …, L-1`.
    pub coupled_psi: f64,
    pub coupled_converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UncoupledReport {
    pub sigma2: f64,
    pub l0: usize,
    pub rows: Vec<UncoupledRow>,
}

impl UncoupledReport {
    pub fn write(&self, dir: &Path) -> Result<Vec<String>> {
        let mut w = csv_writer(dir, "uncoupled.csv")?;
        w.write_record([
            "delta",
            "uncoupled_phi",
            "uncoupled_psi",
            "coupled_phi_interior",
            "coupled_psi_interior",
            "coupled_converged",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.delta.to_string(),
                r.uncoupled_phi.to_string(),
                r.uncoupled_psi.to_string(),
                r.coupled_phi.to_string(),
                r.coupled_psi.to_string(),
                r.coupled_converged.to_string(),
            ])?;
        }
        w.flush().map_err(|e| HarnessError::io(dir.join("uncoupled.csv"), e))?;
        Ok(vec!["uncoupled.csv".into()])
    }
}

/// Default rates for the comparison: from `d̄(p_X)` to past `δ̃(p_X)`.
pub fn default_uncoupled_grid(prior: &SignalPrior) -> Result<Vec<f64>> {
    let lo = prior.info_dimension().max(0.01);
    let hi = prior.amp_threshold()?.max(lo) * 1.25;
    Ok((0..=8).map(|k| lo + (hi - lo) * (k as f64 + 0.5) / 9.0).collect())
}

pub fn experiment_uncoupled(cfg: &ExperimentConfig, deltas: &[f64]) -> Result<UncoupledReport> {
    let setup = Setup::new(cfg)?;
    let g = *setup.base.geometry().expect("coupled base");
    let rows = deltas
        .par_iter()
        .map(|&delta| {
            let unc = run_uncoupled_se(&setup.prior, setup.sigma2, delta, cfg.se_options())?;
            let traj = run_state_evolution(&setup.base, &setup.prior, setup.sigma2, delta, cfg.se_options())?;
            let last = traj.last();
            let rows = g.band_row_index(0)..=g.band_row_index(g.l as i64 - 1);
            let coupled_phi = mean(rows.map(|r| last.phi[r].value()));
            let coupled_psi = mean(g.interior_cols().map(|c| last.psi[c].value()));
            Ok(UncoupledRow {
                delta,
                uncoupled_phi: unc.limit_phi(),
                uncoupled_psi: unc.limit_psi(),
                coupled_phi,
                coupled_psi,
                coupled_converged: traj.converged,
            })
        })
        .collect::<Result<_>>()?;
    Ok(UncoupledReport {
        sigma2: setup.sigma2,
        l0: g.l0,
        rows,
    })
}
