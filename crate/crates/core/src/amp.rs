//! Bayes-optimal approximate message passing for spatially coupled matrices.
//!
//! Starting from `x¹ = E{X}` and `r⁰ = 0`, each iteration computes
//!
//! ```text
//! r^t     = y - A x^t + b^t ⊙ r^{t-1}
//! x^{t+1} = η_t(x^t + (Q^t ⊙ A)ᵀ r^t)
//! ```
//!
//! where `Q^t` and the Onsager coefficients `b^t` are constant on blocks and
//! `η_t` is the posterior-mean denoiser at the column group's effective SNR
//! `s_u = Σ_r W_{r,u}/φ_r(t)`. The profile `φ(t)` normally comes from state
//! evolution; the empirical and robust residual estimators are available as
//! alternatives.

use crate::coupling::{BaseMatrix, SensingMatrix};
use crate::error::{Error, Result};
use crate::priors::{ExtNonNeg, SignalPrior};
use crate::state_evolution::Trajectory;

pub use crate::state_evolution::effective_snr;

/// `Φ⁻¹(3/4)`, the median of `|Z|`.
pub const HALF_NORMAL_MEDIAN: f64 = 0.674_489_750_196_081_7;

const DIVERGENCE_LIMIT: f64 = 1e12;

/// Block values `Q̃_{r,u}` of the matched-filter weights.
#[derive(Debug, Clone, PartialEq)]
pub struct QMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    /// Some column had no finite `φ` among its rows; those columns got
    /// `Q̃ = 1/Σ_k W_{k,u}`.
    pub degenerate: bool,
}

impl QMatrix {
    pub fn get(&self, r: usize, u: usize) -> f64 {
        self.values[r * self.cols + u]
    }

    pub fn n_rows(&self) -> usize {
        self.rows
    }

    pub fn n_cols(&self) -> usize {
        self.cols
    }
}

/// `Q̃_{r,u} = φ_r⁻¹ / Σ_k W_{k,u} φ_k⁻¹`.
///
/// Rows with `φ = 0` take all of a column's weight when present. A column
/// whose rows all have `φ = ∞` is filled uniformly with `1/Σ_k W_{k,u}`.
pub fn compute_q(base: &BaseMatrix, phi: &[ExtNonNeg]) -> Result<QMatrix> {
    let (rows, cols) = (base.n_rows(), base.n_cols());
    if phi.len() != rows {
        return Err(Error::Dimension(format!("phi has {} entries, expected {rows}", phi.len())));
    }
    let mut values = vec![0.0; rows * cols];
    let mut degenerate = false;
    for u in 0..cols {
        let mut total_w = 0.0;
        let mut denom = 0.0;
        let mut zero_w = 0.0;
        for (k, p) in phi.iter().enumerate() {
            let w = base.get(k, u);
            if w == 0.0 {
                continue;
            }
            total_w += w;
            if p.value() == 0.0 {
                zero_w += w;
            } else {
                denom += w * p.reciprocal().value();
            }
        }
        if total_w == 0.0 {
            return Err(Error::Precondition(format!("column group {u} has zero total weight")));
        }
        for (r, p) in phi.iter().enumerate() {
            if base.get(r, u) == 0.0 {
                continue;
            }
            values[r * cols + u] = if zero_w > 0.0 {
                if p.value() == 0.0 {
                    1.0 / zero_w
                } else {
                    0.0
                }
            } else if denom == 0.0 {
                1.0 / total_w
            } else {
                p.reciprocal().value() / denom
            };
        }
        degenerate |= zero_w == 0.0 && denom == 0.0;
    }
    Ok(QMatrix {
        rows,
        cols,
        values,
        degenerate,
    })
}

/// `b_r = δ⁻¹ Σ_u W_{r,u} Q̃_{r,u} ⟨η'⟩_u`, one value per row group.
pub fn onsager(base: &BaseMatrix, q_prev: &QMatrix, eta_prime_avgs: &[f64], delta: f64) -> Result<Vec<f64>> {
    if eta_prime_avgs.len() != base.n_cols() || q_prev.rows != base.n_rows() || q_prev.cols != base.n_cols() {
        return Err(Error::Dimension("Onsager inputs do not match the base matrix".into()));
    }
    Ok((0..base.n_rows())
        .map(|r| {
            base.row(r)
                .iter()
                .enumerate()
                .filter(|(_, w)| **w != 0.0)
                .map(|(u, w)| w * q_prev.get(r, u) * eta_prime_avgs[u])
                .sum::<f64>()
                / delta
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AmpMode {
    /// With the Onsager correction.
    #[default]
    Full,
    /// `b^t ≡ 0`: plain iterative matched filtering plus denoising.
    Naive,
}

/// Where the per-iteration profile `φ(t)` comes from.
#[derive(Debug, Clone, Copy)]
pub enum PhiSource<'a> {
    /// Precomputed state evolution; iteration `t` uses `φ(t)`.
    StateEvolution(&'a Trajectory),
    /// `φ̂_a = ‖r_{R(a)}‖² / M`.
    Empirical,
    /// `φ̂_a^{1/2} = |r_{R(a)}|_{(M/2)} / Φ⁻¹(3/4)`.
    Robust,
}

/// Iteration state: `x^t`, the previous residual, and what the Onsager term
/// needs from the previous denoising step.
#[derive(Debug, Clone, PartialEq)]
pub struct AmpState {
    pub t: usize,
    pub x: Vec<f64>,
    /// `r^{t-1}`, zero before the first step.
    pub r_prev: Vec<f64>,
    /// `⟨η'_{t-1}⟩_u`.
    pub eta_prime_avgs: Vec<f64>,
    pub q_prev: Option<QMatrix>,
}

impl AmpState {
    /// `x¹_i = E{X}`.
    pub fn initial(a: &SensingMatrix, prior: &SignalPrior) -> Self {
        AmpState {
            t: 1,
            x: vec![prior.mean(); a.n_cols()],
            r_prev: vec![0.0; a.n_main_rows()],
            eta_prime_avgs: vec![0.0; a.base().n_cols()],
            q_prev: None,
        }
    }
}

/// What one step produced besides the next state.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    /// `r^t`.
    pub residual: Vec<f64>,
    /// The profile used for `Q^t` and the SNRs.
    pub phi: Vec<f64>,
    pub snr: Vec<f64>,
}

fn check_finite(t: usize, what: &str, v: &[f64]) -> Result<()> {
    let mut worst = 0.0f64;
    for &x in v {
        if !x.is_finite() {
            return Err(Error::Divergence {
                iteration: t,
                reason: format!("non-finite entry in {what}"),
            });
        }
        worst = worst.max(x.abs());
    }
    if worst > DIVERGENCE_LIMIT {
        return Err(Error::Divergence {
            iteration: t,
            reason: format!("|{what}|_inf = {worst:e} exceeds {DIVERGENCE_LIMIT:e}"),
        });
    }
    Ok(())
}

/// Per-row-group residual energy estimate of `φ`.
pub fn estimate_phi_empirical(residual: &[f64], a: &SensingMatrix, robust: bool) -> Result<Vec<f64>> {
    if residual.len() != a.n_main_rows() {
        return Err(Error::Dimension(format!(
            "residual has {} entries, expected {}",
            residual.len(),
            a.n_main_rows()
        )));
    }
    let m = a.m_per_group();
    if robust && m < 2 {
        return Err(Error::Precondition("the robust estimator needs M >= 2".into()));
    }
    Ok((0..a.base().n_rows())
        .map(|g| {
            let vals = a.row_members(g).iter().map(|&i| residual[i]);
            if robust {
                let mut abs: Vec<f64> = vals.map(f64::abs).collect();
                abs.sort_by(|x, y| y.total_cmp(x));
                let r = abs[m / 2 - 1] / HALF_NORMAL_MEDIAN;
                r * r
            } else {
                vals.map(|v| v * v).sum::<f64>() / m as f64
            }
        })
        .collect())
}

/// One AMP iteration from `x^t` to `x^{t+1}`.
///
/// `phi` is `φ(t)` when the profile is precomputed; pass `None` to estimate it
/// from `r^t` (`robust` selects the estimator).
pub fn amp_step(
    state: &AmpState,
    a: &SensingMatrix,
    y: &[f64],
    prior: &SignalPrior,
    phi: Option<&[ExtNonNeg]>,
    robust: bool,
    mode: AmpMode,
) -> Result<(AmpState, StepReport)> {
    let base = a.base();
    if y.len() != a.n_main_rows() {
        return Err(Error::Dimension(format!("y has {} entries, expected {}", y.len(), a.n_main_rows())));
    }
    let t = state.t;
    let ax = a.mul_main(&state.x)?;
    let b = match (&state.q_prev, mode) {
        (Some(q), AmpMode::Full) => Some(onsager(base, q, &state.eta_prime_avgs, a.delta())?),
        _ => None,
    };
    let residual: Vec<f64> = (0..y.len())
        .map(|i| {
            let memory = b.as_ref().map_or(0.0, |b| b[a.row_group(i)] * state.r_prev[i]);
            y[i] - ax[i] + memory
        })
        .collect();
    check_finite(t, "residual", &residual)?;

    let phi: Vec<ExtNonNeg> = match phi {
        Some(p) => p.to_vec(),
        None => estimate_phi_empirical(&residual, a, robust)?
            .into_iter()
            // A zero estimate means a vanishing residual; keep s finite.
            .map(|v| ExtNonNeg::new(v.max(f64::MIN_POSITIVE)))
            .collect::<Result<_>>()?,
    };
    let q = compute_q(base, &phi)?;
    let snr: Vec<f64> = effective_snr(base, &phi)?.iter().map(|s| s.value()).collect();
    let corr = a.tmul_scaled(&residual, |r, c| q.get(r, c))?;
    let n = a.n_per_group();
    let mut x = vec![0.0; a.n_cols()];
    let mut eta_prime_avgs = vec![0.0; base.n_cols()];
    for (u, (avg, &s)) in eta_prime_avgs.iter_mut().zip(&snr).enumerate() {
        let mut acc = 0.0;
        for &j in a.col_members(u) {
            let post = prior.posterior(state.x[j] + corr[j], s);
            x[j] = post.mean;
            acc += s.min(f64::MAX) * post.var;
        }
        *avg = acc / n as f64;
    }
    check_finite(t, "estimate", &x)?;
    Ok((
        AmpState {
            t: t + 1,
            x,
            r_prev: residual.clone(),
            eta_prime_avgs,
            q_prev: Some(q),
        },
        StepReport {
            residual,
            phi: phi.iter().map(|p| p.value()).collect(),
            snr,
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmpOptions {
    /// Number of iterations; the run produces `x¹, …, x^{t_max+1}`.
    pub t_max: usize,
    pub mode: AmpMode,
    /// Keep every iterate, not only the last.
    pub keep_estimates: bool,
    /// Stop once `‖x^{t+1} - x^t‖_∞ ≤ stop_tol`; `0` runs all iterations.
    pub stop_tol: f64,
}

impl Default for AmpOptions {
    fn default() -> Self {
        AmpOptions {
            t_max: 100,
            mode: AmpMode::Full,
            keep_estimates: false,
            stop_tol: 0.0,
        }
    }
}

/// The record of a run. Index `k` of the per-iteration vectors refers to
/// `x^{k+1}` (MSE) or to step `t = k+1` (`φ̂`, `⟨η'⟩`).
#[derive(Debug, Clone, PartialEq)]
pub struct AmpRun {
    pub estimates: Vec<Vec<f64>>,
    pub final_estimate: Vec<f64>,
    /// `(1/n)‖x^t - x‖²`, when the truth was supplied.
    pub mse: Vec<f64>,
    /// `(1/N)‖x^t_{C(u)} - x_{C(u)}‖²` per column group.
    pub block_mse: Vec<Vec<f64>>,
    /// Empirical `φ̂(t)` from the residual, whatever the profile source.
    pub phi_hat: Vec<Vec<f64>>,
    pub eta_prime_avgs: Vec<Vec<f64>>,
    /// Block averages of `η'` that left `[0, 1]`.
    pub eta_prime_out_of_range: usize,
    /// Steps actually taken.
    pub iterations: usize,
}

impl AmpRun {
    /// `MSE_AMP(t)` for `t ≥ 1`.
    pub fn mse_at(&self, t: usize) -> Option<f64> {
        t.checked_sub(1).and_then(|k| self.mse.get(k).copied())
    }
}

fn block_errors(a: &SensingMatrix, x: &[f64], truth: &[f64]) -> (f64, Vec<f64>) {
    let n = a.n_per_group() as f64;
    let blocks: Vec<f64> = (0..a.base().n_cols())
        .map(|u| a.col_members(u).iter().map(|&j| (x[j] - truth[j]).powi(2)).sum::<f64>() / n)
        .collect();
    let total = blocks.iter().sum::<f64>() / blocks.len() as f64;
    (total, blocks)
}

/// Runs AMP on the coupled rows of `a`. `truth` enables the MSE records.
pub fn run_amp(
    a: &SensingMatrix,
    y: &[f64],
    prior: &SignalPrior,
    source: PhiSource<'_>,
    opts: AmpOptions,
    truth: Option<&[f64]>,
) -> Result<AmpRun> {
    if let Some(x) = truth {
        if x.len() != a.n_cols() {
            return Err(Error::Dimension(format!("truth has {} entries, expected {}", x.len(), a.n_cols())));
        }
    }
    if let PhiSource::StateEvolution(traj) = source {
        let rows = traj.profiles[0].phi.len();
        if rows != a.base().n_rows() {
            return Err(Error::Dimension(format!(
                "state evolution has {rows} row groups, matrix has {}",
                a.base().n_rows()
            )));
        }
    }
    let mut state = AmpState::initial(a, prior);
    let mut run = AmpRun {
        estimates: Vec::new(),
        final_estimate: Vec::new(),
        mse: Vec::new(),
        block_mse: Vec::new(),
        phi_hat: Vec::new(),
        eta_prime_avgs: Vec::new(),
        eta_prime_out_of_range: 0,
        iterations: 0,
    };
    let record = |run: &mut AmpRun, x: &[f64]| {
        if let Some(truth) = truth {
            let (total, blocks) = block_errors(a, x, truth);
            run.mse.push(total);
            run.block_mse.push(blocks);
        }
    };
    record(&mut run, &state.x);
    if opts.keep_estimates {
        run.estimates.push(state.x.clone());
    }
    for _ in 0..opts.t_max {
        let (phi, robust) = match source {
            PhiSource::StateEvolution(traj) => (Some(traj.at(state.t).phi.as_slice()), false),
            PhiSource::Empirical => (None, false),
            PhiSource::Robust => (None, true),
        };
        let (next, report) = amp_step(&state, a, y, prior, phi, robust, opts.mode)?;
        run.phi_hat.push(estimate_phi_empirical(&report.residual, a, false)?);
        run.eta_prime_out_of_range += next
            .eta_prime_avgs
            .iter()
            .filter(|v| !(0.0..=1.0).contains(*v))
            .count();
        run.eta_prime_avgs.push(next.eta_prime_avgs.clone());
        let change = next
            .x
            .iter()
            .zip(&state.x)
            .map(|(p, q)| (p - q).abs())
            .fold(0.0, f64::max);
        state = next;
        run.iterations += 1;
        record(&mut run, &state.x);
        if opts.keep_estimates {
            run.estimates.push(state.x.clone());
        }
        if change <= opts.stop_tol {
            break;
        }
    }
    run.final_estimate = state.x;
    Ok(run)
}

/// Output of the robust scheme: AMP on `y₁`, then `y₂` spliced in.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedRun {
    pub estimate: Vec<f64>,
    /// MSE of the spliced estimate at every iteration, when the truth is known.
    pub mse: Vec<f64>,
    pub amp: AmpRun,
}

/// Replaces the coordinates observed by identity rows with their direct
/// measurements `y₂`.
pub fn splice(a: &SensingMatrix, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    let cols = a.augmented_columns().ok_or(Error::NotAugmented)?;
    let main = a.n_main_rows();
    let mut out = x.to_vec();
    for (k, &j) in cols.iter().enumerate() {
        out[j] = y[main + k];
    }
    Ok(out)
}

/// Runs the robust scheme on an augmented matrix with `y = (y₁, y₂)`.
pub fn reconstruct_augmented(
    a: &SensingMatrix,
    y: &[f64],
    prior: &SignalPrior,
    source: PhiSource<'_>,
    opts: AmpOptions,
    truth: Option<&[f64]>,
) -> Result<AugmentedRun> {
    if !a.is_augmented() {
        return Err(Error::NotAugmented);
    }
    if y.len() != a.n_rows() {
        return Err(Error::Dimension(format!("y has {} entries, expected {}", y.len(), a.n_rows())));
    }
    let y1 = &y[..a.n_main_rows()];
    let amp = run_amp(a, y1, prior, source, AmpOptions { keep_estimates: true, ..opts }, None)?;
    let mut mse = Vec::new();
    if let Some(truth) = truth {
        for x in &amp.estimates {
            let s = splice(a, x, y)?;
            mse.push(s.iter().zip(truth).map(|(p, q)| (p - q).powi(2)).sum::<f64>() / s.len() as f64);
        }
    }
    let estimate = splice(a, &amp.final_estimate, y)?;
    let amp = if opts.keep_estimates {
        amp
    } else {
        AmpRun {
            estimates: Vec::new(),
            ..amp
        }
    };
    Ok(AugmentedRun { estimate, mse, amp })
}
