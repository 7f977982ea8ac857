//! The invariant suite behind `sc-amp validate`: scalar-channel identities,
//! state-evolution monotonicity, the continuum free energy, and run
//! determinism, each reported as a named pass/fail check.

use sc_amp::amp::compute_q;
use sc_amp::continuum::ContinuumModel;
use sc_amp::coupling::{build_base_matrix, ShapeFunction};
use sc_amp::priors::SignalPrior;
use sc_amp::state_evolution::{evaluate_seed_bounds, run_modified_se, run_state_evolution, SeOptions};

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::experiments::{run_trial, AmpReport, Setup};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<String> {
        self.checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| format!("{}: {}", c.name, c.detail))
            .collect()
    }

    pub fn into_result(self) -> Result<Self> {
        if self.passed() {
            Ok(self)
        } else {
            Err(HarnessError::Validation(self.failures()))
        }
    }

    fn record(&mut self, name: &'static str, outcome: Result<String, String>) {
        let (passed, detail) = match outcome {
            Ok(d) => (true, d),
            Err(d) => (false, d),
        };
        self.checks.push(Check { name, passed, detail });
    }
}

/// The three priors the scalar checks run on: sparse Gaussian, a discrete
/// three-point law, and a mixture with atoms.
pub fn reference_priors() -> Vec<SignalPrior> {
    vec![
        SignalPrior::bernoulli_gaussian(0.1, 0.0, 1.0).expect("valid"),
        SignalPrior::discrete_atoms(vec![(-1.0, 0.25), (0.0, 0.5), (1.0, 0.25)]).expect("valid"),
        SignalPrior::mixture_with_atoms(vec![(0.0, 0.6), (2.0, 0.1)], 0.3, 0.5, 2.0).expect("valid"),
    ]
}

fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| 10f64.powf(lo + (hi - lo) * k as f64 / (n - 1) as f64))
        .collect()
}

fn ok_if(cond: bool, detail: String) -> Result<String, String> {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn core<T>(r: sc_amp::Result<T>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn mmse_bounds() -> Result<String, String> {
    let grid = log_grid(-3.0, 6.0, 200);
    let mut worst = 0.0f64;
    for prior in reference_priors() {
        for &s in &grid {
            let m = core(prior.mmse_at(s))?;
            let cap = prior.variance().min(1.0 / s);
            if !(m >= 0.0 && m <= cap * (1.0 + 1e-12)) {
                return Err(format!("mmse({s}) = {m} outside [0, {cap}]"));
            }
            worst = worst.max(m / cap);
        }
    }
    Ok(format!("600 points, max mmse/min(Var, 1/s) = {worst:.4}"))
}

fn information_derivative() -> Result<String, String> {
    let mut worst = 0.0f64;
    for prior in reference_priors() {
        for &s in &[0.1, 1.0, 5.0, 30.0] {
            let h = 1e-3 * s;
            let fd = (core(prior.mutual_information(s + h))? - core(prior.mutual_information(s - h))?) / (2.0 * h);
            let half = 0.5 * core(prior.mmse_at(s))?;
            let err = (fd - half).abs();
            worst = worst.max(err);
            if err > 1e-5 {
                return Err(format!("at s = {s}: dI/ds = {fd}, mmse/2 = {half}"));
            }
        }
    }
    Ok(format!("max |dI/ds - mmse/2| = {worst:.2e}"))
}

fn denoiser_derivative() -> Result<String, String> {
    let mut worst = 0.0f64;
    for prior in reference_priors() {
        for &s in &[0.5, 4.0, 40.0] {
            for k in 0..=16 {
                let v = -4.0 + 0.5 * k as f64;
                let h = 1e-5;
                let fd = (core(prior.denoise(v + h, s))? - core(prior.denoise(v - h, s))?) / (2.0 * h);
                let d = core(prior.denoise_derivative(v, s))?;
                let rel = (fd - d).abs() / d.abs().max(1e-3);
                worst = worst.max(rel);
                if rel > 1e-6 {
                    return Err(format!("v = {v}, s = {s}: difference {fd} vs derivative {d}"));
                }
            }
        }
    }
    Ok(format!("max relative error {worst:.2e}"))
}

fn se_monotone(cfg: &ExperimentConfig, setup: &Setup) -> Result<String, String> {
    let opts = SeOptions {
        t_max: cfg.t_max.min(400),
        stop_tol: cfg.stop_tol,
    };
    let sigma2 = setup.sigma2.max(1e-8);
    let lo = core(run_state_evolution(&setup.base, &setup.prior, sigma2, setup.delta, opts))?;
    let hi = core(run_state_evolution(&setup.base, &setup.prior, 4.0 * sigma2, setup.delta, opts))?;
    for pair in lo.profiles.windows(2) {
        for (i, (a, b)) in pair[1].psi.iter().zip(&pair[0].psi).enumerate() {
            if a.value() > b.value() * (1.0 + 1e-12) {
                return Err(format!("psi[{i}] rises at t = {}", pair[1].t));
            }
        }
    }
    for t in 0..lo.len().max(hi.len()) {
        for (r, (a, b)) in lo.at(t).phi.iter().zip(&hi.at(t).phi).enumerate() {
            if a.value() > b.value() * (1.0 + 1e-12) {
                return Err(format!("phi[{r}] at t = {t} falls when sigma^2 grows"));
            }
        }
    }
    Ok(format!("{} iterations at sigma^2 and 4 sigma^2", lo.len() - 1))
}

fn modified_monotone(setup: &Setup) -> Result<String, String> {
    let opts = SeOptions { t_max: 300, stop_tol: 1e-12 };
    let traj = core(run_modified_se(&setup.base, &setup.prior, setup.sigma2, setup.delta, opts))?;
    for p in &traj.profiles {
        for w in p.psi.windows(2).chain(p.phi.windows(2)) {
            if w[0].value() > w[1].value() * (1.0 + 1e-12) {
                return Err(format!("profile decreases in space at t = {}", p.t));
            }
        }
    }
    Ok(format!("{} profiles nondecreasing", traj.len()))
}

fn modified_dominates() -> Result<String, String> {
    // δL0 = 4 > 3 so that the seed bounds take hold.
    let prior = SignalPrior::bernoulli_gaussian(0.1, 0.0, 1.0).expect("valid");
    let (delta, sigma2) = (0.8, 1e-4);
    let base = core(build_base_matrix(12, 5, 2, ShapeFunction::RaisedCosine))?;
    let opts = SeOptions { t_max: 80, stop_tol: 0.0 };
    let coupled = core(run_state_evolution(&base, &prior, sigma2, delta, opts))?;
    let modified = core(run_modified_se(&base, &prior, sigma2, delta, opts))?;
    let report = core(evaluate_seed_bounds(&coupled, &base, &prior))?;
    let t0 = report.t0.ok_or("seed bounds never hold")?;
    let g = base.geometry().expect("coupled");
    for t in t0..=80 {
        for i in 0..g.l {
            let c = coupled.profiles[t].psi[g.col_index(i as i64)].value();
            let m = modified.profiles[t - t0].psi[i].value();
            if m < c * (1.0 - 1e-9) {
                return Err(format!("t = {t}, i = {i}: modified {m} < coupled {c}"));
            }
        }
    }
    Ok(format!("holds from t0 = {t0} to 80"))
}

fn q_identity(setup: &Setup) -> Result<String, String> {
    let traj = core(run_state_evolution(
        &setup.base,
        &setup.prior,
        setup.sigma2,
        setup.delta,
        SeOptions { t_max: 30, stop_tol: 0.0 },
    ))?;
    let mut worst = 0.0f64;
    for p in &traj.profiles {
        let q = core(compute_q(&setup.base, &p.phi))?;
        for u in 0..setup.base.n_cols() {
            let s: f64 = (0..setup.base.n_rows()).map(|r| setup.base.get(r, u) * q.get(r, u)).sum();
            worst = worst.max((s - 1.0).abs());
        }
    }
    ok_if(worst <= 1e-12, format!("max |sum_r W Q - 1| = {worst:.2e}"))
}

fn continuum_model() -> Result<ContinuumModel, String> {
    let prior = SignalPrior::bernoulli_gaussian(0.1, 0.0, 1.0).expect("valid");
    core(ContinuumModel::new(prior, ShapeFunction::RaisedCosine, 3.0, 0.02, 1e-2, 0.5, 20.0))
}

fn free_energy_identity() -> Result<String, String> {
    let m = continuum_model()?;
    let mut p = core(m.initial())?;
    for _ in 0..4 {
        p = core(m.step(&p))?;
    }
    let t = core(m.free_energy_terms(&p.phi))?;
    let e1 = (t.potential + t.seed + t.tilde - t.total).abs() / t.total.abs();
    let e2 = (t.potential_rob + t.seed + t.coupling - t.total).abs() / t.total.abs();
    ok_if(e1.max(e2) <= 1e-8, format!("relative residuals {e1:.1e}, {e2:.1e}"))
}

fn stationary_fixed_point() -> Result<String, String> {
    let m = continuum_model()?;
    let traj = core(m.run(5000, 1e-13))?;
    if !traj.converged {
        return Err("continuum recursion did not converge".into());
    }
    let g = core(m.normalized_gradient_norm(&traj.last().phi))?;
    ok_if(g <= 1e-6, format!("normalized gradient {g:.2e}"))
}

fn frechet_gradient() -> Result<String, String> {
    let m = continuum_model()?;
    let mut p = core(m.initial())?;
    for _ in 0..3 {
        p = core(m.step(&p))?;
    }
    let xi: Vec<f64> = m
        .mesh()
        .iter()
        .map(|&x| {
            let u = x - 0.5;
            if u.abs() < 1.0 {
                (-1.0 / (1.0 - u * u)).exp()
            } else {
                0.0
            }
        })
        .collect();
    let grad = core(m.energy_gradient(&p.phi))?;
    let pairing: f64 = m.gradient_weights().iter().zip(&grad).zip(&xi).map(|((w, g), x)| w * g * x).sum();
    let e0 = core(m.free_energy(&p.phi))?;
    let err = |eps: f64| -> Result<f64, String> {
        let moved: Vec<f64> = p.phi.iter().zip(&xi).map(|(f, x)| f + eps * x).collect();
        Ok(((core(m.free_energy(&moved))? - e0) / eps - pairing).abs())
    };
    let (e1, e2) = (err(1e-4)?, err(5e-5)?);
    ok_if(
        e1 < 1e-2 * pairing.abs() && (1.6..2.4).contains(&(e1 / e2)),
        format!("errors {e1:.2e}, {e2:.2e} (ratio {:.2})", e1 / e2),
    )
}

fn row_sums(setup: &Setup) -> Result<String, String> {
    let v = setup.base.row_sum_violations();
    ok_if(v.is_empty(), format!("{} rows outside [1/2, 2]", v.len()))
}

/// Two identical small runs must write identical bytes.
fn determinism(cfg: &ExperimentConfig) -> Result<String, String> {
    let small = ExperimentConfig {
        l: cfg.l.min(8),
        n: cfg.n.min(40),
        t_max: 8,
        trials: 2,
        ..cfg.clone()
    };
    let setup = Setup::new(&small).map_err(|e| e.to_string())?;
    let render = || -> Result<Vec<u8>, String> {
        let traj = core(run_state_evolution(&setup.base, &setup.prior, setup.sigma2, setup.delta, small.se_options()))?;
        let outcomes = (0..2)
            .map(|i| run_trial(&small, &setup, &setup.denoiser, Some(&traj), small.master_seed, i))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| e.to_string())?;
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        AmpReport { outcomes, matched: None }.write(dir.path()).map_err(|e| e.to_string())?;
        let mut bytes = std::fs::read(dir.path().join("amp.csv")).map_err(|e| e.to_string())?;
        bytes.extend(std::fs::read(dir.path().join("amp_summary.csv")).map_err(|e| e.to_string())?);
        Ok(bytes)
    };
    let (a, b) = (render()?, render()?);
    ok_if(a == b, format!("{} bytes", a.len()))
}

/// Runs every check; failures are reported, not returned as errors.
pub fn run_validation(cfg: &ExperimentConfig) -> Result<ValidationReport> {
    let setup = Setup::new(cfg)?;
    let mut report = ValidationReport::default();
    report.record("mmse bounds", mmse_bounds());
    report.record("dI/ds = mmse/2", information_derivative());
    report.record("denoiser derivative", denoiser_derivative());
    report.record("base row sums", row_sums(&setup));
    report.record("SE monotone in t and sigma^2", se_monotone(cfg, &setup));
    report.record("modified profile monotone in space", modified_monotone(&setup));
    report.record("modified SE dominates coupled SE", modified_dominates());
    report.record("Q weighted-average identity", q_identity(&setup));
    report.record("free-energy decomposition", free_energy_identity());
    report.record("stationary continuum fixed point", stationary_fixed_point());
    report.record("Frechet gradient", frechet_gradient());
    report.record("determinism", determinism(cfg));
    Ok(report)
}
