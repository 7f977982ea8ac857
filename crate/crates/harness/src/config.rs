//! Experiment configuration, read from JSON.
//!
//! Every field has a default, so `{}` is a complete file describing the
//! desk-scale setup: BG(0.1) signal, σ = 0.01, ρ⁻¹ = 10, L = 50, L0 = 5,
//! N = 100, δ = 0.2, ten trials, empirical φ̂. Unknown keys are rejected.
//!
//! ```json
//! {
//!   "prior": {"kind": "bernoulli_gaussian", "eps": 0.1, "mu": 0.0, "var": 1.0},
//!   "sigma": 0.01,
//!   "rho_inv": 10, "l": 50, "l0": 5, "n": 100,
//!   "delta": 0.2,
//!   "trials": 10,
//!   "phi_source": "empirical"
//! }
//! ```
//!
//! With `delta` the group height is `M = round(Nδ)`; `m` sets it directly
//! and takes precedence. The realized rate `M/N` is what the experiments use.

use std::path::{Path, PathBuf};

use sc_amp::amp::{AmpMode, AmpOptions};
use sc_amp::coupling::{build_base_matrix, BaseMatrix, ShapeFunction};
use sc_amp::priors::{PriorSpec, SignalPrior};
use sc_amp::state_evolution::SeOptions;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

/// Which profile AMP uses at each step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhiSourceKind {
    /// Precomputed state evolution. Exact in the large-N limit, but at desk
    /// sizes a run that falls behind its prediction is denoised with too
    /// much confidence and can diverge.
    StateEvolution,
    /// `‖r_{R(a)}‖²/M` from the current residual.
    #[default]
    Empirical,
    /// Median-based residual scale.
    Robust,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub prior: PriorSpec,
    pub sigma: f64,
    pub rho_inv: usize,
    pub l: usize,
    pub l0: usize,
    pub n: usize,
    pub delta: Option<f64>,
    pub m: Option<usize>,
    pub shape: ShapeFunction,
    pub t_max: usize,
    /// AMP and SE stop once nothing moves by more than this; `0` disables.
    pub stop_tol: f64,
    pub trials: usize,
    pub master_seed: u64,
    /// Drop the Onsager term.
    pub naive: bool,
    /// Append identity rows on the last `2ρ⁻¹` column groups.
    pub augmented: bool,
    pub phi_source: PhiSourceKind,
    /// Denoise with this prior instead of the generating one.
    pub mismatched_prior: Option<PriorSpec>,
    pub out_dir: PathBuf,
    /// Iterations at which `profile` reports `φ(t)`.
    pub profile_times: Vec<usize>,
    /// Exact recovery means final MSE below this multiple of `Var(X)`.
    pub success_threshold: f64,
    /// Check the seed-block bounds, which needs `δL0 > 3`.
    pub check_seed_bounds: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            prior: PriorSpec::BernoulliGaussian {
                eps: 0.1,
                mu: 0.0,
                var: 1.0,
            },
            sigma: 0.01,
            rho_inv: 10,
            l: 50,
            l0: 5,
            n: 100,
            delta: Some(0.2),
            m: None,
            shape: ShapeFunction::RaisedCosine,
            t_max: 200,
            stop_tol: 1e-10,
            trials: 10,
            master_seed: 20_100_712,
            naive: false,
            augmented: false,
            phi_source: PhiSourceKind::Empirical,
            mismatched_prior: None,
            out_dir: PathBuf::from("out"),
            profile_times: vec![5, 20, 40],
            success_threshold: 1e-4,
            check_seed_bounds: false,
        }
    }
}

fn config_error(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| config_error(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            HarnessError::Config(msg) => config_error(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(config_error("trials must be at least 1"));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(config_error(format!("sigma must be finite and nonnegative, got {}", self.sigma)));
        }
        for (name, v) in [("rho_inv", self.rho_inv), ("l", self.l), ("l0", self.l0), ("n", self.n)] {
            if v == 0 {
                return Err(config_error(format!("{name} must be positive")));
            }
        }
        match (self.delta, self.m) {
            (None, None) => return Err(config_error("one of delta or m is required")),
            (Some(d), None) if !(d > 0.0 && d.is_finite()) => {
                return Err(config_error(format!("delta must be positive, got {d}")))
            }
            _ => {}
        }
        if self.m_per_group() == 0 {
            return Err(config_error("the group height M must be positive"));
        }
        if !(self.success_threshold > 0.0) {
            return Err(config_error("success_threshold must be positive"));
        }
        if !(self.stop_tol >= 0.0) {
            return Err(config_error("stop_tol must be nonnegative"));
        }
        if self.t_max == 0 {
            return Err(config_error("t_max must be positive"));
        }
        self.signal_prior()?;
        self.denoising_prior()?;
        if self.check_seed_bounds && self.realized_delta() * self.l0 as f64 <= 3.0 {
            return Err(config_error(format!(
                "seed-bound checks need delta * l0 > 3, got {}",
                self.realized_delta() * self.l0 as f64
            )));
        }
        Ok(())
    }

    /// Rows per group `M`.
    pub fn m_per_group(&self) -> usize {
        match (self.m, self.delta) {
            (Some(m), _) => m,
            (None, Some(d)) => (self.n as f64 * d).round() as usize,
            (None, None) => 0,
        }
    }

    /// `M/N`, the rate the sampled matrices actually have.
    pub fn realized_delta(&self) -> f64 {
        self.m_per_group() as f64 / self.n as f64
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma * self.sigma
    }

    pub fn signal_prior(&self) -> Result<SignalPrior> {
        SignalPrior::try_from(self.prior.clone()).map_err(|e| config_error(e.to_string()))
    }

    /// The prior AMP denoises with.
    pub fn denoising_prior(&self) -> Result<SignalPrior> {
        match &self.mismatched_prior {
            Some(spec) => SignalPrior::try_from(spec.clone()).map_err(|e| config_error(format!("mismatched prior: {e}"))),
            None => self.signal_prior(),
        }
    }

    pub fn base_matrix(&self) -> Result<BaseMatrix> {
        Ok(build_base_matrix(self.l, self.l0, self.rho_inv, self.shape)?)
    }

    pub fn se_options(&self) -> SeOptions {
        SeOptions {
            t_max: self.t_max,
            stop_tol: self.stop_tol,
        }
    }

    pub fn amp_options(&self) -> AmpOptions {
        AmpOptions {
            t_max: self.t_max,
            mode: if self.naive { AmpMode::Naive } else { AmpMode::Full },
            keep_estimates: false,
            stop_tol: self.stop_tol,
        }
    }

    /// Copy with the Bernoulli–Gaussian sparsity replaced.
    pub fn with_eps(&self, eps: f64) -> Result<Self> {
        match self.prior {
            PriorSpec::BernoulliGaussian { mu, var, .. } => {
                let mut cfg = self.clone();
                cfg.prior = PriorSpec::BernoulliGaussian { eps, mu, var };
                cfg.validate()?;
                Ok(cfg)
            }
            _ => Err(config_error("sweeping eps needs a bernoulli_gaussian prior")),
        }
    }

    /// Copy with `M = round(Nδ)`.
    pub fn with_delta(&self, delta: f64) -> Result<Self> {
        let mut cfg = self.clone();
        cfg.delta = Some(delta);
        cfg.m = None;
        cfg.validate()?;
        Ok(cfg)
    }
}
