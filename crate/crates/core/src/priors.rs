//! Scalar signal priors and their Bayes-optimal denoisers.
//!
//! All supported families are finite mixtures of Gaussians and point masses,
//! so the posterior of `X` given `V = X + s^{-1/2} Z` is again such a mixture
//! and both its mean and variance are available in closed form. The
//! minimum mean-square error curve is obtained by integrating the posterior
//! variance against each mixture component of the observation density.

use std::cmp::Ordering;
use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{integrate, integrate_fallible, Tolerance};

/// A value in the completed half-line `[0, ∞]`.
///
/// `reciprocal` maps `0 ↔ ∞`, which is what lets the all-infinite initial
/// condition of state evolution flow through the `mmse(Σ W φ^{-1})` maps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct ExtNonNeg(f64);

impl ExtNonNeg {
    pub const ZERO: ExtNonNeg = ExtNonNeg(0.0);
    pub const INFINITY: ExtNonNeg = ExtNonNeg(f64::INFINITY);

    pub fn new(value: f64) -> Result<Self> {
        if value.is_nan() || value < 0.0 {
            return Err(Error::Domain {
                what: "extended non-negative value",
                expected: "in [0, ∞]",
                value,
            });
        }
        Ok(ExtNonNeg(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_infinite(self) -> bool {
        self.0.is_infinite()
    }

    pub fn reciprocal(self) -> Self {
        // IEEE already gives 1/0 = ∞ and 1/∞ = 0.
        ExtNonNeg(1.0 / self.0)
    }
}

impl TryFrom<f64> for ExtNonNeg {
    type Error = Error;
    fn try_from(value: f64) -> Result<Self> {
        ExtNonNeg::new(value)
    }
}

impl From<ExtNonNeg> for f64 {
    fn from(v: ExtNonNeg) -> f64 {
        v.0
    }
}

impl Eq for ExtNonNeg {}

impl PartialOrd for ExtNonNeg {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for ExtNonNeg {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Serializable description of a prior, as it appears in config files:
/// `{"kind":"bernoulli_gaussian","eps":0.1,"mu":0.0,"var":1.0}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorSpec {
    /// `(1-eps) δ_0 + eps N(mu, var)`.
    BernoulliGaussian { eps: f64, mu: f64, var: f64 },
    /// `Σ mass_k δ_{location_k}`; atoms are `[location, mass]` pairs.
    DiscreteAtoms { atoms: Vec<(f64, f64)> },
    /// Atoms carrying total mass `1-eps` plus `eps N(mu, var)`.
    MixtureWithAtoms {
        atoms: Vec<(f64, f64)>,
        eps: f64,
        mu: f64,
        var: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Component {
    weight: f64,
    ln_weight: f64,
    mean: f64,
    var: f64,
}

/// A validated scalar prior `p_X`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PriorSpec", into = "PriorSpec")]
pub struct SignalPrior {
    spec: PriorSpec,
    components: Vec<Component>,
    mean: f64,
    second_moment: f64,
}

const MASS_TOL: f64 = 1e-12;
// Standardised observation range; Gaussian mass beyond ±11 is below 1e-27.
const Z_RANGE: f64 = 11.0;
const MMSE_ABS_TOL: f64 = 1e-9;
const MI_TOL: f64 = 1e-12;
// Stand-in for s = ∞ when a denoiser is evaluated at zero noise.
const S_CAP: f64 = 1e280;

fn check_probability(what: &'static str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain {
            what,
            expected: "a probability in [0, 1]",
            value: p,
        });
    }
    Ok(())
}

fn check_atoms(atoms: &[(f64, f64)]) -> Result<f64> {
    let mut total = 0.0;
    for &(loc, mass) in atoms {
        if !loc.is_finite() {
            return Err(Error::InvalidPrior(format!("atom location {loc} is not finite")));
        }
        check_probability("atom mass", mass)?;
        total += mass;
    }
    Ok(total)
}

fn check_gaussian(mu: f64, var: f64) -> Result<()> {
    if !mu.is_finite() {
        return Err(Error::InvalidPrior(format!("Gaussian mean {mu} is not finite")));
    }
    if !(var > 0.0 && var.is_finite()) {
        return Err(Error::Domain {
            what: "Gaussian component variance",
            expected: "positive and finite",
            value: var,
        });
    }
    Ok(())
}

impl TryFrom<PriorSpec> for SignalPrior {
    type Error = Error;

    fn try_from(spec: PriorSpec) -> Result<Self> {
        let mut parts: Vec<(f64, f64, f64)> = Vec::new();
        match &spec {
            PriorSpec::BernoulliGaussian { eps, mu, var } => {
                check_probability("eps", *eps)?;
                check_gaussian(*mu, *var)?;
                parts.push((1.0 - eps, 0.0, 0.0));
                parts.push((*eps, *mu, *var));
            }
            PriorSpec::DiscreteAtoms { atoms } => {
                if atoms.is_empty() {
                    return Err(Error::InvalidPrior("no atoms given".into()));
                }
                let total = check_atoms(atoms)?;
                if (total - 1.0).abs() > MASS_TOL {
                    return Err(Error::InvalidPrior(format!("atom masses sum to {total}, not 1")));
                }
                parts.extend(atoms.iter().map(|&(loc, mass)| (mass, loc, 0.0)));
            }
            PriorSpec::MixtureWithAtoms { atoms, eps, mu, var } => {
                check_probability("eps", *eps)?;
                check_gaussian(*mu, *var)?;
                let total = check_atoms(atoms)?;
                if (total + eps - 1.0).abs() > MASS_TOL {
                    return Err(Error::InvalidPrior(format!(
                        "atom mass {total} plus continuous mass {eps} is not 1"
                    )));
                }
                parts.extend(atoms.iter().map(|&(loc, mass)| (mass, loc, 0.0)));
                parts.push((*eps, *mu, *var));
            }
        }
        let components: Vec<Component> = parts
            .into_iter()
            .filter(|&(w, _, _)| w > 0.0)
            .map(|(weight, mean, var)| Component {
                weight,
                ln_weight: weight.ln(),
                mean,
                var,
            })
            .collect();
        let mean = components.iter().map(|c| c.weight * c.mean).sum();
        let second_moment = components
            .iter()
            .map(|c| c.weight * (c.var + c.mean * c.mean))
            .sum();
        Ok(SignalPrior {
            spec,
            components,
            mean,
            second_moment,
        })
    }
}

impl From<SignalPrior> for PriorSpec {
    fn from(p: SignalPrior) -> PriorSpec {
        p.spec
    }
}

/// Posterior mean and variance of `X` given one noisy observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Posterior {
    pub mean: f64,
    pub var: f64,
}

/// Result of [`SignalPrior::amp_threshold_detail`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmpThreshold {
    /// Largest `s·mmse(s)` over the log grid.
    pub grid_sup: f64,
    /// After golden-section refinement around the grid argmax.
    pub refined_sup: f64,
    pub argmax: f64,
}

/// Numerical and closed-form MMSE dimension.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MmseDimension {
    /// `s·mmse(s)` at the largest grid point.
    pub numeric: f64,
    /// Closed-form value for the supported families (equal to the
    /// information dimension).
    pub analytic: f64,
}

fn check_snr(s: f64) -> Result<()> {
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::Domain {
            what: "signal-to-noise ratio s",
            expected: "positive and finite",
            value: s,
        });
    }
    Ok(())
}

impl SignalPrior {
    pub fn bernoulli_gaussian(eps: f64, mu: f64, var: f64) -> Result<Self> {
        PriorSpec::BernoulliGaussian { eps, mu, var }.try_into()
    }

    pub fn discrete_atoms(atoms: Vec<(f64, f64)>) -> Result<Self> {
        PriorSpec::DiscreteAtoms { atoms }.try_into()
    }

    pub fn mixture_with_atoms(atoms: Vec<(f64, f64)>, eps: f64, mu: f64, var: f64) -> Result<Self> {
        PriorSpec::MixtureWithAtoms { atoms, eps, mu, var }.try_into()
    }

    pub fn point_mass(location: f64) -> Result<Self> {
        Self::discrete_atoms(vec![(location, 1.0)])
    }

    pub fn spec(&self) -> &PriorSpec {
        &self.spec
    }

    /// `E{X}`.
    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// `E{X²}`.
    pub fn second_moment(&self) -> f64 {
        self.second_moment
    }

    pub fn variance(&self) -> f64 {
        // Computed around the mean so that point masses give exactly zero.
        self.components
            .iter()
            .map(|c| c.weight * (c.var + (c.mean - self.mean).powi(2)))
            .sum()
    }

    /// True when the prior has no continuous part.
    pub fn is_discrete(&self) -> bool {
        self.components.iter().all(|c| c.var == 0.0)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut chosen = self.components.last().expect("prior has a component");
        for c in &self.components {
            acc += c.weight;
            if u < acc {
                chosen = c;
                break;
            }
        }
        if chosen.var > 0.0 {
            let z: f64 = rng.sample(StandardNormal);
            chosen.mean + chosen.var.sqrt() * z
        } else {
            chosen.mean
        }
    }

    /// Posterior moments for `V = X + s^{-1/2} Z` observed at `v`.
    ///
    /// `s` may be `+∞` (noiseless observation); `s = 0` returns the prior
    /// moments. Callers on hot paths use this directly to skip validation.
    pub fn posterior(&self, v: f64, s: f64) -> Posterior {
        if s <= 0.0 {
            return Posterior {
                mean: self.mean,
                var: self.variance(),
            };
        }
        let noise = 1.0 / s.min(S_CAP);
        let mut max_log = f64::NEG_INFINITY;
        for c in &self.components {
            let tot = c.var + noise;
            let d = v - c.mean;
            let lw = c.ln_weight - 0.5 * (2.0 * PI * tot).ln() - d * d / (2.0 * tot);
            max_log = max_log.max(lw);
        }
        if !max_log.is_finite() {
            // Every likelihood underflowed: fall back to the closest component.
            let c = self
                .components
                .iter()
                .min_by(|a, b| (v - a.mean).abs().total_cmp(&(v - b.mean).abs()))
                .expect("prior has a component");
            return Posterior {
                mean: if c.var > 0.0 { v } else { c.mean },
                var: 0.0,
            };
        }
        let mut norm = 0.0;
        let mut m1 = 0.0;
        let mut within = 0.0;
        for c in &self.components {
            let tot = c.var + noise;
            let d = v - c.mean;
            let r = (c.ln_weight - 0.5 * (2.0 * PI * tot).ln() - d * d / (2.0 * tot) - max_log).exp();
            let m = c.mean + c.var / tot * d;
            norm += r;
            m1 += r * m;
            within += r * c.var * noise / tot;
        }
        let mean = m1 / norm;
        let mut between = 0.0;
        for c in &self.components {
            let tot = c.var + noise;
            let d = v - c.mean;
            let r = (c.ln_weight - 0.5 * (2.0 * PI * tot).ln() - d * d / (2.0 * tot) - max_log).exp();
            let m = c.mean + c.var / tot * d;
            between += r * (m - mean) * (m - mean);
        }
        Posterior {
            mean,
            var: (within + between) / norm,
        }
    }

    /// `E[X | X + s^{-1/2} Z = v]`.
    pub fn denoise(&self, v: f64, s: f64) -> Result<f64> {
        check_snr(s)?;
        Ok(self.posterior(v, s).mean)
    }

    /// `∂/∂v E[X | v]`, via the identity `η'(v) = s·Var[X | v]`.
    pub fn denoise_derivative(&self, v: f64, s: f64) -> Result<f64> {
        check_snr(s)?;
        Ok(s * self.posterior(v, s).var)
    }

    /// Minimum mean-square error of estimating `X` from `√s X + Z`.
    pub fn mmse(&self, s: ExtNonNeg) -> Result<f64> {
        let s = s.value();
        let var = self.variance();
        if s == 0.0 {
            return Ok(var);
        }
        if s.is_infinite() || var == 0.0 {
            return Ok(0.0);
        }
        let noise = 1.0 / s;
        let abs_tol = MMSE_ABS_TOL * var.min(noise) / self.components.len() as f64;
        let tol = Tolerance::new(abs_tol, 1e-12);
        let mut total = 0.0;
        for c in &self.components {
            let scale = (c.var + noise).sqrt();
            let inner = integrate(
                |z| {
                    let g = (-0.5 * z * z).exp() / (2.0 * PI).sqrt();
                    if g == 0.0 {
                        return 0.0;
                    }
                    g * self.posterior(c.mean + scale * z, s).var
                },
                -Z_RANGE,
                Z_RANGE,
                8,
                tol,
            )
            .map_err(|nc| Error::quadrature("mmse", nc))?;
            total += c.weight * inner;
        }
        // Quadrature noise must not push the value outside the provable band.
        Ok(total.clamp(0.0, var.min(noise)))
    }

    /// Convenience for finite, non-negative `s`.
    pub fn mmse_at(&self, s: f64) -> Result<f64> {
        self.mmse(ExtNonNeg::new(s)?)
    }

    // ∫_a^b mmse(u)/2 du, integrating in log u above u = 1 where the
    // integrand u·mmse(u) stays bounded.
    fn mi_segment(&self, a: f64, b: f64) -> Result<f64> {
        if b <= a {
            return Ok(0.0);
        }
        if a < 1.0 && b > 1.0 {
            return Ok(self.mi_segment(a, 1.0)? + self.mi_segment(1.0, b)?);
        }
        let tol = Tolerance::new(MI_TOL, MI_TOL);
        let out = if b <= 1.0 {
            integrate_fallible(|u| Ok::<_, Error>(0.5 * self.mmse_at(u)?), a, b, 2, tol)?
        } else {
            integrate_fallible(
                |tau: f64| {
                    let u = tau.exp();
                    Ok::<_, Error>(0.5 * u * self.mmse_at(u)?)
                },
                a.ln(),
                b.ln(),
                2,
                tol,
            )?
        };
        out.map_err(|nc| Error::quadrature("mutual information", nc))
    }

    /// `I(s) = I(X; √s X + Z)` in nats, as `∫_0^s mmse(u)/2 du`.
    pub fn mutual_information(&self, s: f64) -> Result<f64> {
        if !(s >= 0.0 && s.is_finite()) {
            return Err(Error::Domain {
                what: "signal-to-noise ratio s",
                expected: "finite and non-negative",
                value: s,
            });
        }
        if self.variance() == 0.0 {
            return Ok(0.0);
        }
        self.mi_segment(0.0, s)
    }

    /// `I(s)` at many points, integrating once along the sorted values.
    pub fn mutual_information_many(&self, s: &[f64]) -> Result<Vec<f64>> {
        for &v in s {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Domain {
                    what: "signal-to-noise ratio s",
                    expected: "finite and non-negative",
                    value: v,
                });
            }
        }
        let mut out = vec![0.0; s.len()];
        if self.variance() == 0.0 {
            return Ok(out);
        }
        let mut order: Vec<usize> = (0..s.len()).collect();
        order.sort_by(|&a, &b| s[a].total_cmp(&s[b]));
        let mut last_s = 0.0;
        let mut acc = 0.0;
        for idx in order {
            acc += self.mi_segment(last_s, s[idx])?;
            last_s = s[idx];
            out[idx] = acc;
        }
        Ok(out)
    }

    /// Rényi information dimension: the mass of the absolutely continuous part.
    pub fn info_dimension(&self) -> f64 {
        self.components
            .iter()
            .filter(|c| c.var > 0.0)
            .map(|c| c.weight)
            .sum()
    }

    /// `s·mmse(s)` at the top of an increasing grid reaching at least `1e6`.
    pub fn mmse_dimension_estimate(&self, s_grid: &[f64]) -> Result<MmseDimension> {
        let last = *s_grid
            .last()
            .ok_or_else(|| Error::Precondition("empty SNR grid".into()))?;
        if s_grid.windows(2).any(|w| w[1] <= w[0]) || s_grid[0] <= 0.0 {
            return Err(Error::Precondition("SNR grid must be positive and increasing".into()));
        }
        if last < 1e6 {
            return Err(Error::Precondition(format!("SNR grid must reach 1e6, stops at {last}")));
        }
        Ok(MmseDimension {
            numeric: last * self.mmse_at(last)?,
            analytic: self.info_dimension(),
        })
    }

    /// `sup_s s·mmse(s)`, the undersampling rate below which AMP on an
    /// i.i.d. matrix stalls.
    pub fn amp_threshold(&self) -> Result<f64> {
        Ok(self.amp_threshold_detail()?.refined_sup)
    }

    pub fn amp_threshold_detail(&self) -> Result<AmpThreshold> {
        const POINTS: usize = 400;
        let (lo, hi) = (1e-4f64.ln(), 1e8f64.ln());
        let f = |tau: f64| -> Result<f64> {
            let s = tau.exp();
            Ok(s * self.mmse_at(s)?)
        };
        let taus: Vec<f64> = (0..POINTS)
            .map(|k| lo + (hi - lo) * k as f64 / (POINTS - 1) as f64)
            .collect();
        let mut best = (0usize, f64::NEG_INFINITY);
        for (k, &tau) in taus.iter().enumerate() {
            let v = f(tau)?;
            if v > best.1 {
                best = (k, v);
            }
        }
        let (k, grid_sup) = best;
        let mut a = taus[k.saturating_sub(1)];
        let mut b = taus[(k + 1).min(POINTS - 1)];
        let ratio = (5f64.sqrt() - 1.0) / 2.0;
        let mut c = b - ratio * (b - a);
        let mut d = a + ratio * (b - a);
        let (mut fc, mut fd) = (f(c)?, f(d)?);
        for _ in 0..60 {
            if fc > fd {
                b = d;
                d = c;
                fd = fc;
                c = b - ratio * (b - a);
                fc = f(c)?;
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + ratio * (b - a);
                fd = f(d)?;
            }
        }
        let (tau_star, refined) = if fc > fd { (c, fc) } else { (d, fd) };
        let (argmax, refined_sup) = if refined >= grid_sup {
            (tau_star.exp(), refined)
        } else {
            (taus[k].exp(), grid_sup)
        };
        Ok(AmpThreshold {
            grid_sup,
            refined_sup,
            argmax,
        })
    }
}
