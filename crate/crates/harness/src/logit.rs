//! Logistic regression of success on `δ` and the 50% point `δ_50`.
//!
//! The fit maximises the Jeffreys-penalized likelihood (Firth's
//! correction), which stays finite when the data separate perfectly, as
//! they do whenever a grid point sits cleanly on each side of a sharp
//! transition. The plain maximum-likelihood slope would run off to infinity
//! there. Trials are aggregated into per-`δ` counts in a fixed order first,
//! so the result does not depend on the order trials arrive in.

use std::collections::BTreeMap;

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogitFit {
    /// `P(success | δ) = 1 / (1 + exp(-(β0 + β1 δ)))`.
    pub beta0: f64,
    pub beta1: f64,
    /// `-β0/β1`.
    pub delta_50: f64,
    pub iterations: usize,
}

impl LogitFit {
    pub fn probability(&self, delta: f64) -> f64 {
        1.0 / (1.0 + (-(self.beta0 + self.beta1 * delta)).exp())
    }
}

/// `(δ, successes, trials)` per distinct `δ`, sorted by `δ`.
pub fn aggregate(outcomes: &[(f64, bool)]) -> Vec<(f64, usize, usize)> {
    let mut counts: BTreeMap<u64, (usize, usize)> = BTreeMap::new();
    for &(d, ok) in outcomes {
        // Order-preserving key for finite f64.
        let bits = d.to_bits();
        let key = if d.is_sign_negative() { !bits } else { bits | (1 << 63) };
        let c = counts.entry(key).or_default();
        c.0 += ok as usize;
        c.1 += 1;
    }
    counts
        .into_iter()
        .map(|(key, (s, n))| {
            let bits = if key >> 63 == 1 { key & !(1 << 63) } else { !key };
            (f64::from_bits(bits), s, n)
        })
        .collect()
}

/// Firth-penalized fit of success against `δ`.
///
/// Errors when every trial succeeded or every trial failed, since the data
/// then say nothing about where the transition is.
pub fn fit_logit(outcomes: &[(f64, bool)]) -> Result<LogitFit> {
    if outcomes.iter().any(|(d, _)| !d.is_finite()) {
        return Err(HarnessError::DegenerateFit("non-finite delta".into()));
    }
    let groups = aggregate(outcomes);
    let successes: usize = groups.iter().map(|g| g.1).sum();
    let total: usize = groups.iter().map(|g| g.2).sum();
    if successes == 0 || successes == total {
        return Err(HarnessError::DegenerateFit(format!(
            "{successes} of {total} trials succeeded"
        )));
    }
    if groups.len() < 2 {
        return Err(HarnessError::DegenerateFit("a single delta value".into()));
    }
    // Centre and scale δ so the 2×2 information matrix is well conditioned.
    let mean = groups.iter().map(|g| g.0 * g.2 as f64).sum::<f64>() / total as f64;
    let spread = groups.iter().map(|g| (g.0 - mean).abs()).fold(0.0, f64::max);
    let u = |d: f64| (d - mean) / spread;

    let (mut b0, mut b1) = (0.0f64, 0.0f64);
    let mut iterations = 0;
    for it in 1..=200 {
        iterations = it;
        let (mut i00, mut i01, mut i11) = (0.0, 0.0, 0.0);
        let rows: Vec<(f64, f64, f64, f64)> = groups
            .iter()
            .map(|&(d, s, n)| {
                let x = u(d);
                let p = 1.0 / (1.0 + (-(b0 + b1 * x)).exp());
                let w = n as f64 * p * (1.0 - p);
                (x, p, w, s as f64 - n as f64 * p)
            })
            .collect();
        for &(x, _, w, _) in &rows {
            i00 += w;
            i01 += w * x;
            i11 += w * x * x;
        }
        let det = i00 * i11 - i01 * i01;
        if !(det > 0.0) {
            return Err(HarnessError::DegenerateFit("singular information matrix".into()));
        }
        let (j00, j01, j11) = (i11 / det, -i01 / det, i00 / det);
        let (mut g0, mut g1) = (0.0, 0.0);
        for &(x, p, w, resid) in &rows {
            // Leverage of the aggregated row in the weighted hat matrix.
            let h = w * (j00 + 2.0 * j01 * x + j11 * x * x);
            let score = resid + h * (0.5 - p);
            g0 += score;
            g1 += score * x;
        }
        let (s0, s1) = (j00 * g0 + j01 * g1, j01 * g0 + j11 * g1);
        // Damp steps so the early iterations cannot overshoot into saturation.
        let scale = (5.0 / s0.abs().max(s1.abs())).min(1.0);
        b0 += scale * s0;
        b1 += scale * s1;
        if (s0.abs() + s1.abs()) * scale < 1e-12 {
            break;
        }
    }
    // Undo the change of variable.
    let beta1 = b1 / spread;
    let beta0 = b0 - beta1 * mean;
    if !(beta1 > 0.0) {
        return Err(HarnessError::DegenerateFit(format!(
            "success does not increase with delta (slope {beta1})"
        )));
    }
    Ok(LogitFit {
        beta0,
        beta1,
        delta_50: -beta0 / beta1,
        iterations,
    })
}
