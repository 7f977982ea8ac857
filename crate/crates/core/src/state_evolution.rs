//! State evolution: the deterministic recursion that tracks, block by block,
//! the effective noise variance `φ` seen by AMP and the resulting
//! reconstruction error `ψ`.
//!
//! ```text
//! φ_a(t)   = σ² + δ⁻¹ Σ_i W_{a,i} ψ_i(t)
//! ψ_i(t+1) = mmse(Σ_b W_{b,i} / φ_b(t))
//! ```
//!
//! started from `ψ(0) ≡ ∞`. Infinite entries follow `1/∞ = 0`, and entries
//! of `W` equal to zero are skipped, so `0·∞` never arises.

use std::io::Write;

use crate::coupling::{BaseMatrix, Geometry};
use crate::error::{Error, Result};
use crate::priors::{ExtNonNeg, SignalPrior};

/// The pair `(φ(t), ψ(t))` with `φ(t) = T''(ψ(t))`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateProfile {
    pub t: usize,
    /// One entry per row group.
    pub phi: Vec<ExtNonNeg>,
    /// One entry per column group.
    pub psi: Vec<ExtNonNeg>,
    pub sigma2: f64,
    pub delta: f64,
}

impl StateProfile {
    pub fn phi_values(&self) -> Vec<f64> {
        self.phi.iter().map(|v| v.value()).collect()
    }

    pub fn psi_values(&self) -> Vec<f64> {
        self.psi.iter().map(|v| v.value()).collect()
    }

    /// `(1/L_c) Σ_i ψ_i`, the predicted per-coordinate MSE.
    pub fn mean_psi(&self) -> f64 {
        self.psi.iter().map(|v| v.value()).sum::<f64>() / self.psi.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeOptions {
    pub t_max: usize,
    /// Stop once no entry of `φ` or `ψ` moves by this much.
    pub stop_tol: f64,
}

impl Default for SeOptions {
    fn default() -> Self {
        SeOptions {
            t_max: 2000,
            stop_tol: 1e-10,
        }
    }
}

/// Profiles for `t = 0, 1, …`; entry `t` holds `ψ(t)` and `φ(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub profiles: Vec<StateProfile>,
    pub converged: bool,
    /// The recursion was run at `σ = 0` with its boundary substituted.
    pub degenerate_boundary: bool,
}

impl Trajectory {
    pub fn last(&self) -> &StateProfile {
        self.profiles.last().expect("trajectory is never empty")
    }

    /// Profile at iteration `t`; past the end the fixed point is returned.
    pub fn at(&self, t: usize) -> &StateProfile {
        &self.profiles[t.min(self.profiles.len() - 1)]
    }

    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }

    /// `MSE_SE(t) = (1/L_c) Σ_i ψ_i(t)` for `t ≥ 1`.
    pub fn predicted_mse(&self, t: usize) -> f64 {
        self.at(t).mean_psi()
    }

    /// CSV with columns `t, group, phi, psi`; a cell is blank where the
    /// group index exceeds that vector's length.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["t", "group", "phi", "psi"])?;
        let cell = |v: Option<&ExtNonNeg>| v.map_or(String::new(), |x| x.value().to_string());
        for p in &self.profiles {
            for g in 0..p.phi.len().max(p.psi.len()) {
                wtr.write_record([p.t.to_string(), g.to_string(), cell(p.phi.get(g)), cell(p.psi.get(g))])?;
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

fn check_params(sigma2: f64, delta: f64) -> Result<()> {
    if !(sigma2 >= 0.0 && sigma2.is_finite()) {
        return Err(Error::Domain {
            what: "noise variance",
            expected: "finite and nonnegative",
            value: sigma2,
        });
    }
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::Domain {
            what: "undersampling rate delta",
            expected: "positive and finite",
            value: delta,
        });
    }
    Ok(())
}

fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::Dimension(format!("{what} has {got} entries, expected {want}")));
    }
    Ok(())
}

/// `s_i = Σ_b W_{b,i} / φ_b` for every column group.
pub fn effective_snr(base: &BaseMatrix, phi: &[ExtNonNeg]) -> Result<Vec<ExtNonNeg>> {
    check_len("phi", phi.len(), base.n_rows())?;
    let mut s = vec![0.0; base.n_cols()];
    for (b, p) in phi.iter().enumerate() {
        let inv = p.reciprocal().value();
        for (si, &w) in s.iter_mut().zip(base.row(b)) {
            if w != 0.0 {
                *si += w * inv;
            }
        }
    }
    Ok(s.into_iter().map(|v| ExtNonNeg::new(v).expect("sum of nonnegative terms")).collect())
}

/// `T'_W(φ)_i = mmse(Σ_b W_{b,i} φ_b⁻¹)`.
pub fn se_map_psi(base: &BaseMatrix, prior: &SignalPrior, phi: &[ExtNonNeg]) -> Result<Vec<ExtNonNeg>> {
    effective_snr(base, phi)?
        .into_iter()
        .map(|s| Ok(ExtNonNeg::new(prior.mmse(s)?)?))
        .collect()
}

/// `T''_W(ψ)_a = σ² + δ⁻¹ Σ_i W_{a,i} ψ_i`.
pub fn se_map_phi(base: &BaseMatrix, psi: &[ExtNonNeg], sigma2: f64, delta: f64) -> Result<Vec<ExtNonNeg>> {
    check_params(sigma2, delta)?;
    check_len("psi", psi.len(), base.n_cols())?;
    Ok((0..base.n_rows())
        .map(|a| {
            let acc: f64 = base
                .row(a)
                .iter()
                .zip(psi)
                .filter(|(w, _)| **w != 0.0)
                .map(|(w, p)| w * p.value())
                .sum();
            ExtNonNeg::new(sigma2 + acc / delta).expect("nonnegative")
        })
        .collect())
}

/// Largest entrywise change, with `∞ → ∞` counting as no change.
fn max_change(a: &[ExtNonNeg], b: &[ExtNonNeg]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            if x == y {
                0.0
            } else {
                (x.value() - y.value()).abs()
            }
        })
        .fold(0.0, f64::max)
}

fn iterate(
    mut step: impl FnMut(&[ExtNonNeg]) -> Result<Vec<ExtNonNeg>>,
    mut to_phi: impl FnMut(&[ExtNonNeg]) -> Result<Vec<ExtNonNeg>>,
    psi0: Vec<ExtNonNeg>,
    sigma2: f64,
    delta: f64,
    opts: SeOptions,
) -> Result<(Vec<StateProfile>, bool)> {
    if opts.t_max == 0 {
        return Err(Error::Precondition("t_max must be at least 1".into()));
    }
    let phi0 = to_phi(&psi0)?;
    let mut profiles = vec![StateProfile {
        t: 0,
        phi: phi0,
        psi: psi0,
        sigma2,
        delta,
    }];
    for t in 1..=opts.t_max {
        let prev = profiles.last().expect("nonempty");
        let psi = step(&prev.phi)?;
        let phi = to_phi(&psi)?;
        let change = max_change(&psi, &prev.psi).max(max_change(&phi, &prev.phi));
        profiles.push(StateProfile {
            t,
            phi,
            psi,
            sigma2,
            delta,
        });
        if change < opts.stop_tol {
            return Ok((profiles, true));
        }
    }
    Ok((profiles, false))
}

/// Coupled state evolution from `ψ(0) ≡ ∞`.
pub fn run_state_evolution(
    base: &BaseMatrix,
    prior: &SignalPrior,
    sigma2: f64,
    delta: f64,
    opts: SeOptions,
) -> Result<Trajectory> {
    check_params(sigma2, delta)?;
    let psi0 = vec![ExtNonNeg::INFINITY; base.n_cols()];
    let (profiles, converged) = iterate(
        |phi| se_map_psi(base, prior, phi),
        |psi| se_map_phi(base, psi, sigma2, delta),
        psi0,
        sigma2,
        delta,
        opts,
    )?;
    Ok(Trajectory {
        profiles,
        converged,
        degenerate_boundary: false,
    })
}

/// Per-column-group prediction `mmse(Σ_a W_{a,i} φ_a(t-1)⁻¹)` and its mean
/// over all column groups.
pub fn predicted_mse(base: &BaseMatrix, prior: &SignalPrior, phi_prev: &[ExtNonNeg]) -> Result<(Vec<f64>, f64)> {
    let psi: Vec<f64> = se_map_psi(base, prior, phi_prev)?.iter().map(|v| v.value()).collect();
    let mean = psi.iter().sum::<f64>() / psi.len() as f64;
    Ok((psi, mean))
}

/// The scalar recursion of AMP on an i.i.d. matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct UncoupledTrajectory {
    /// `φ(t)` for `t = 0, 1, …`; `φ(0) = ∞`.
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
    pub converged: bool,
}

impl UncoupledTrajectory {
    pub fn limit_phi(&self) -> f64 {
        *self.phi.last().expect("nonempty")
    }

    pub fn limit_psi(&self) -> f64 {
        *self.psi.last().expect("nonempty")
    }
}

/// `φ = σ² + ψ/δ`, `ψ' = mmse(1/φ)` from `ψ(0) = ∞`.
pub fn run_uncoupled_se(prior: &SignalPrior, sigma2: f64, delta: f64, opts: SeOptions) -> Result<UncoupledTrajectory> {
    let single = BaseMatrix::from_dense(1, 1, vec![1.0])?;
    let traj = run_state_evolution(&single, prior, sigma2, delta, opts)?;
    Ok(UncoupledTrajectory {
        phi: traj.profiles.iter().map(|p| p.phi[0].value()).collect(),
        psi: traj.profiles.iter().map(|p| p.psi[0].value()).collect(),
        converged: traj.converged,
    })
}

fn geometry(base: &BaseMatrix) -> Result<Geometry> {
    base.geometry()
        .copied()
        .ok_or_else(|| Error::Precondition("a coupled base matrix is required".into()))
}

/// Outcome of the seed-block bound checks.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedBoundReport {
    /// First `t ≥ 1` at which both seed bounds hold.
    pub t0: Option<usize>,
    /// `mmse(L0/(2σ²))`, the bound on `ψ` over seed columns.
    pub psi_seed_bound: f64,
    /// `(1 + 2/(δL0)) σ²`, the bound on `φ` over seed rows.
    pub phi_seed_bound: f64,
    /// `mmse(2/σ²)`, the floor on `ψ` over `C_0`.
    pub psi_floor: f64,
    /// Offending entries, as `t=…: …` strings.
    pub violations: Vec<String>,
}

impl SeedBoundReport {
    pub fn holds(&self) -> bool {
        self.t0.is_some() && self.violations.is_empty()
    }
}

/// Evaluates the seed bounds along a coupled trajectory without insisting
/// on `δL0 > 3`: the seed bounds from the detected `t0` on, the `C_0` floor
/// at every `t ≥ 1`.
pub fn evaluate_seed_bounds(traj: &Trajectory, base: &BaseMatrix, prior: &SignalPrior) -> Result<SeedBoundReport> {
    let g = geometry(base)?;
    let first = traj.profiles.first().expect("nonempty");
    let (sigma2, delta) = (first.sigma2, first.delta);
    let l0 = g.l0 as f64;
    let psi_seed_bound = if sigma2 == 0.0 {
        0.0
    } else {
        prior.mmse_at(l0 / (2.0 * sigma2))?
    };
    let phi_seed_bound = (1.0 + 2.0 / (delta * l0)) * sigma2;
    let psi_floor = if sigma2 == 0.0 { 0.0 } else { prior.mmse_at(2.0 / sigma2)? };
    // Relative slack for quadrature noise in the compared mmse values.
    let slack = 1.0 + 1e-9;
    let seed_ok = |p: &StateProfile| {
        (0..g.seed_cols()).all(|c| p.psi[c].value() <= psi_seed_bound * slack)
            && (0..g.n_seed_rows()).all(|r| p.phi[r].value() <= phi_seed_bound * slack)
    };
    let t0 = traj.profiles.iter().skip(1).find(|p| seed_ok(p)).map(|p| p.t);
    let mut violations = Vec::new();
    for p in traj.profiles.iter().skip(1) {
        if t0.is_some_and(|t0| p.t >= t0) {
            for c in 0..g.seed_cols() {
                if p.psi[c].value() > psi_seed_bound * slack {
                    violations.push(format!(
                        "t={}: psi[{}] = {} > {psi_seed_bound}",
                        p.t,
                        g.col_label(c),
                        p.psi[c].value()
                    ));
                }
            }
            for r in 0..g.n_seed_rows() {
                if p.phi[r].value() > phi_seed_bound * slack {
                    violations.push(format!("t={}: seed row {r} phi = {} > {phi_seed_bound}", p.t, p.phi[r].value()));
                }
            }
        }
        for c in g.interior_cols() {
            if p.psi[c].value() < psi_floor / slack {
                violations.push(format!(
                    "t={}: psi[{}] = {} below floor {psi_floor}",
                    p.t,
                    g.col_label(c),
                    p.psi[c].value()
                ));
            }
        }
    }
    Ok(SeedBoundReport {
        t0,
        psi_seed_bound,
        phi_seed_bound,
        psi_floor,
        violations,
    })
}

/// [`evaluate_seed_bounds`] under its hypothesis `δL0 > 3`, failing with the
/// list of offending entries when a bound breaks.
pub fn check_seed_bounds(traj: &Trajectory, base: &BaseMatrix, prior: &SignalPrior) -> Result<SeedBoundReport> {
    let g = geometry(base)?;
    let delta = traj.profiles[0].delta;
    if delta * g.l0 as f64 <= 3.0 {
        return Err(Error::Precondition(format!(
            "seed bounds need delta * L0 > 3, got {}",
            delta * g.l0 as f64
        )));
    }
    let report = evaluate_seed_bounds(traj, base, prior)?;
    if report.t0.is_none() {
        return Err(Error::BoundViolation(vec!["seed bounds never hold".into()]));
    }
    if !report.violations.is_empty() {
        return Err(Error::BoundViolation(report.violations));
    }
    Ok(report)
}

/// The modified recursion on `(R_0, C_0)`: `ψ` lives on `i = 0, …, L-1`,
/// `φ` on band rows `a = -ρ⁻¹, …, L-1+ρ⁻¹`, with `ψ_i` pinned to
/// `mmse(L0/(2σ²))` for `i < 0` and to `∞` for `i ≥ L`.
///
/// At `σ = 0` the pinned value is taken as `0` and the trajectory is
/// flagged `degenerate_boundary`.
pub fn run_modified_se(
    base: &BaseMatrix,
    prior: &SignalPrior,
    sigma2: f64,
    delta: f64,
    opts: SeOptions,
) -> Result<Trajectory> {
    check_params(sigma2, delta)?;
    let g = geometry(base)?;
    let boundary = if sigma2 == 0.0 {
        0.0
    } else {
        prior.mmse_at(g.l0 as f64 / (2.0 * sigma2))?
    };
    let r = g.rho_inv as i64;
    let l = g.l as i64;
    let weight = |a: i64, i: i64| -> f64 {
        if (a - i).abs() >= r {
            0.0
        } else {
            g.shape.eval((a - i) as f64 / r as f64) / r as f64
        }
    };
    let band: Vec<i64> = (-r..=l - 1 + r).collect();
    let to_phi = |psi: &[ExtNonNeg]| -> Result<Vec<ExtNonNeg>> {
        Ok(band
            .iter()
            .map(|&a| {
                let mut acc = 0.0;
                for i in (a - r + 1)..=(a + r - 1) {
                    let w = weight(a, i);
                    if w == 0.0 {
                        continue;
                    }
                    let p = if i < 0 {
                        boundary
                    } else if i >= l {
                        f64::INFINITY
                    } else {
                        psi[i as usize].value()
                    };
                    acc += w * p;
                }
                ExtNonNeg::new(sigma2 + acc / delta).expect("nonnegative")
            })
            .collect())
    };
    let step = |phi: &[ExtNonNeg]| -> Result<Vec<ExtNonNeg>> {
        (0..l)
            .map(|i| {
                let s: f64 = (i - r + 1..=i + r - 1)
                    .map(|b| weight(b, i) * phi[(b + r) as usize].reciprocal().value())
                    .sum();
                Ok(ExtNonNeg::new(prior.mmse(ExtNonNeg::new(s)?)?)?)
            })
            .collect()
    };
    let (profiles, converged) = iterate(
        step,
        to_phi,
        vec![ExtNonNeg::INFINITY; g.l],
        sigma2,
        delta,
        opts,
    )?;
    Ok(Trajectory {
        profiles,
        converged,
        degenerate_boundary: sigma2 == 0.0,
    })
}

/// Position of the reconstruction front along the band: the number of band
/// rows, counted from `a = -ρ⁻¹`, before `φ` first exceeds `threshold`.
/// Equals the band length once the whole band is below the threshold.
pub fn wave_front(profile: &StateProfile, base: &BaseMatrix, threshold: f64) -> Result<usize> {
    let g = geometry(base)?;
    let band = &profile.phi[g.band_rows()];
    Ok(band
        .iter()
        .position(|p| p.value() > threshold)
        .unwrap_or(band.len()))
}
