//! Continuum state evolution on a uniform mesh, with the free-energy
//! functional, the scalar potentials and the Fréchet gradient.
//!
//! As the coupling window `ρ⁻¹` grows with `ℓ = Lρ` fixed, the modified
//! recursion approaches a pair of integral maps on functions of
//! `x ∈ [-1, ℓ+1]`:
//!
//! ```text
//! ψ(x) = mmse(∫ 𝒲(x-z) φ(z)⁻¹ dz)            x ∈ [0, ℓ]
//! φ(y) = σ² + δ⁻¹ ∫ 𝒲(y-x) ψ(x) dx           y ∈ [-1, ℓ+1]
//! ```
//!
//! with `ψ` pinned to `mmse(L0/(2σ²))` left of `0` and to `∞` right of `ℓ`.
//! The seed half-line is integrated exactly through the kernel's CDF, so
//! `φ = ∞` precisely for `y > ℓ-1`. Everything else uses the trapezoid rule,
//! and a trapezoid segment with an infinite `φ` endpoint contributes `0`.
//!
//! The discrete free energy is built from the same quadrature, which makes
//! its exact derivative equal to the trapezoid-weighted discrete gradient and
//! puts the gradient's zeros at the discrete fixed points.

use crate::coupling::ShapeFunction;
use crate::error::{Error, Result};
use crate::priors::{ExtNonNeg, SignalPrior};

/// Parameters of the continuum recursion and its mesh.
#[derive(Debug, Clone)]
pub struct ContinuumModel {
    prior: SignalPrior,
    shape: ShapeFunction,
    ell: f64,
    h: f64,
    sigma2: f64,
    delta: f64,
    l0: f64,
    // Mesh steps per unit length, 1/h.
    per_unit: usize,
    // Nodes k = 0..=k_max at x_k = -1 + k h.
    k_max: usize,
    psi_boundary: f64,
    // kernel[j + per_unit] = 𝒲(j h) for |j| ≤ per_unit.
    kernel: Vec<f64>,
}

/// Profiles on the mesh at one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuumProfile {
    pub t: usize,
    /// `φ` at every node of `[-1, ℓ+1]`; `∞` for `y > ℓ-1`.
    pub phi: Vec<f64>,
    /// `ψ` at the nodes of `[0, ℓ]`.
    pub psi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuumTrajectory {
    pub profiles: Vec<ContinuumProfile>,
    pub converged: bool,
}

impl ContinuumTrajectory {
    pub fn last(&self) -> &ContinuumProfile {
        self.profiles.last().expect("trajectory is never empty")
    }
}

/// The pieces of the free energy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FreeEnergyTerms {
    pub total: f64,
    /// `(δ/2) ∫_{-1}^{ℓ-1} {ς²/φ + log φ}`.
    pub local: f64,
    /// `∫_0^ℓ I(𝒲 ∗ φ⁻¹)`.
    pub coupling: f64,
    /// `∫_{-1}^{ℓ-1} V(φ)`.
    pub potential: f64,
    /// `∫_{-1}^{ℓ-1} V_rob(φ)`.
    pub potential_rob: f64,
    /// `(δ/2) ∫_{-1}^{ℓ-1} (ς² - σ²)/φ`.
    pub seed: f64,
    /// `∫_0^ℓ {I(𝒲 ∗ φ⁻¹(y)) - I(φ(y-1)⁻¹)}`.
    pub tilde: f64,
}

fn close_to_integer(v: f64) -> Option<usize> {
    let r = v.round();
    ((v - r).abs() < 1e-9 * v.abs().max(1.0) && r >= 0.0).then_some(r as usize)
}

/// `V(φ) = (δ/2)(σ²/φ + log φ) + I(φ⁻¹)`.
pub fn potential(phi: f64, sigma2: f64, delta: f64, prior: &SignalPrior) -> Result<f64> {
    Ok(potential_rob(phi, sigma2, delta)? + prior.mutual_information(1.0 / phi)?)
}

/// `V_rob(φ) = (δ/2)(σ²/φ + log φ)`.
pub fn potential_rob(phi: f64, sigma2: f64, delta: f64) -> Result<f64> {
    if !(phi > 0.0 && phi.is_finite()) {
        return Err(Error::Domain {
            what: "phi",
            expected: "positive and finite",
            value: phi,
        });
    }
    Ok(0.5 * delta * (sigma2 / phi + phi.ln()))
}

/// `ς²(x) = σ² + δ⁻¹ (∫_{y≤0} 𝒲(y-x) dy) mmse(L0/(2σ²))`.
pub fn sigma_eff(x: f64, sigma2: f64, delta: f64, l0: f64, shape: ShapeFunction, prior: &SignalPrior) -> Result<f64> {
    let boundary = prior.mmse_at(l0 / (2.0 * sigma2))?;
    Ok(sigma2 + (1.0 - shape.cdf(x)) * boundary / delta)
}

/// `φ* = σ² + δ⁻¹ mmse(L0/(2σ²))`, the seed-level plateau.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhiStar {
    pub value: f64,
    /// `φ* = σ²` exactly, so the strict lower bound fails (prior without
    /// uncertainty at the seed SNR).
    pub degenerate: bool,
}

/// Evaluates `φ*` under `δL0 > 3` and checks `σ² < φ* ≤ (1 + 2/(δL0))σ²`.
pub fn phi_star(sigma2: f64, delta: f64, l0: f64, prior: &SignalPrior) -> Result<PhiStar> {
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(Error::Domain {
            what: "noise variance",
            expected: "positive and finite",
            value: sigma2,
        });
    }
    if delta * l0 <= 3.0 {
        return Err(Error::Precondition(format!("phi* needs delta * L0 > 3, got {}", delta * l0)));
    }
    let value = sigma2 + prior.mmse_at(l0 / (2.0 * sigma2))? / delta;
    let upper = (1.0 + 2.0 / (delta * l0)) * sigma2;
    if value > upper * (1.0 + 1e-12) {
        return Err(Error::BoundViolation(vec![format!("phi* = {value} exceeds {upper}")]));
    }
    Ok(PhiStar {
        value,
        degenerate: value <= sigma2,
    })
}

impl ContinuumModel {
    /// Builds the mesh `x_k = -1 + kh` over `[-1, ℓ+1]`. Requires `h ≤ 0.05`
    /// with `1/h` and `ℓ/h` integers, and `σ² > 0`.
    pub fn new(
        prior: SignalPrior,
        shape: ShapeFunction,
        ell: f64,
        h: f64,
        sigma2: f64,
        delta: f64,
        l0: f64,
    ) -> Result<Self> {
        if !(h > 0.0 && h <= 0.05) {
            return Err(Error::Domain {
                what: "mesh step h",
                expected: "in (0, 0.05]",
                value: h,
            });
        }
        let per_unit = close_to_integer(1.0 / h)
            .ok_or_else(|| Error::Precondition(format!("1/h must be an integer, h = {h}")))?;
        let ell_steps = close_to_integer(ell / h)
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Precondition(format!("ell/h must be a positive integer, ell = {ell}")))?;
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::Domain {
                what: "noise variance",
                expected: "positive and finite",
                value: sigma2,
            });
        }
        if !(delta > 0.0 && delta.is_finite()) || !(l0 > 0.0 && l0.is_finite()) {
            return Err(Error::Precondition("delta and L0 must be positive".into()));
        }
        let h = 1.0 / per_unit as f64;
        let kernel = (-(per_unit as i64)..=per_unit as i64)
            .map(|j| shape.eval(j as f64 / per_unit as f64))
            .collect();
        Ok(ContinuumModel {
            psi_boundary: prior.mmse_at(l0 / (2.0 * sigma2))?,
            prior,
            shape,
            ell: ell_steps as f64 * h,
            h,
            sigma2,
            delta,
            l0,
            per_unit,
            k_max: ell_steps + 2 * per_unit,
            kernel,
        })
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn ell(&self) -> f64 {
        self.ell
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn prior(&self) -> &SignalPrior {
        &self.prior
    }

    /// `mmse(L0/(2σ²))`, the value of `ψ` left of the origin.
    pub fn psi_boundary(&self) -> f64 {
        self.psi_boundary
    }

    /// `Φ_M = 1 + Var(X)/δ`.
    pub fn phi_max(&self) -> f64 {
        1.0 + self.prior.variance() / self.delta
    }

    /// All mesh nodes of `[-1, ℓ+1]`.
    pub fn mesh(&self) -> Vec<f64> {
        (0..=self.k_max).map(|k| self.x(k)).collect()
    }

    /// Nodes of `[0, ℓ]`, where `ψ` lives.
    pub fn psi_mesh(&self) -> Vec<f64> {
        (self.origin()..=self.ell_node()).map(|k| self.x(k)).collect()
    }

    /// Number of nodes of `[-1, ℓ-1]`, the leading part of `φ` that is finite.
    pub fn n_finite_phi(&self) -> usize {
        self.last_finite() + 1
    }

    fn x(&self, k: usize) -> f64 {
        -1.0 + k as f64 * self.h
    }

    fn origin(&self) -> usize {
        self.per_unit
    }

    fn ell_node(&self) -> usize {
        self.k_max - self.per_unit
    }

    fn last_finite(&self) -> usize {
        self.k_max - 2 * self.per_unit
    }

    fn kern(&self, diff: i64) -> f64 {
        if diff.unsigned_abs() as usize > self.per_unit {
            0.0
        } else {
            self.kernel[(diff + self.per_unit as i64) as usize]
        }
    }

    // Trapezoid weight of node k inside [lo, hi].
    fn trap(&self, k: usize, lo: usize, hi: usize) -> f64 {
        if k == lo || k == hi {
            0.5 * self.h
        } else {
            self.h
        }
    }

    /// `ς²` at a point.
    pub fn sigma_eff_at(&self, x: f64) -> f64 {
        self.sigma2 + (1.0 - self.shape.cdf(x)) * self.psi_boundary / self.delta
    }

    /// `ς²` at every node.
    pub fn sigma_eff(&self) -> Vec<f64> {
        self.mesh().into_iter().map(|x| self.sigma_eff_at(x)).collect()
    }

    fn check_phi(&self, phi: &[f64]) -> Result<()> {
        if phi.len() != self.k_max + 1 {
            return Err(Error::Dimension(format!(
                "phi has {} mesh values, expected {}",
                phi.len(),
                self.k_max + 1
            )));
        }
        Ok(())
    }

    /// `ℱ''(ψ)` at every node.
    pub fn phi_from_psi(&self, psi: &[f64]) -> Result<Vec<f64>> {
        let (lo, hi) = (self.origin(), self.ell_node());
        if psi.len() != hi - lo + 1 {
            return Err(Error::Dimension(format!(
                "psi has {} mesh values, expected {}",
                psi.len(),
                hi - lo + 1
            )));
        }
        Ok((0..=self.k_max)
            .map(|k| {
                if k > self.last_finite() {
                    return f64::INFINITY;
                }
                let mut acc = (1.0 - self.shape.cdf(self.x(k))) * self.psi_boundary;
                let from = k.saturating_sub(self.per_unit).max(lo);
                let to = (k + self.per_unit).min(hi);
                for m in from..=to {
                    let w = self.kern(k as i64 - m as i64);
                    if w != 0.0 {
                        acc += self.trap(m, lo, hi) * w * psi[m - lo];
                    }
                }
                self.sigma2 + acc / self.delta
            })
            .collect())
    }

    /// `∫ 𝒲(x - z) φ(z)⁻¹ dz` at the nodes of `[0, ℓ]`.
    pub fn snr_profile(&self, phi: &[f64]) -> Result<Vec<f64>> {
        self.check_phi(phi)?;
        Ok((self.origin()..=self.ell_node())
            .map(|k| {
                let mut s = 0.0;
                for z in k - self.per_unit..k + self.per_unit {
                    let (p0, p1) = (phi[z], phi[z + 1]);
                    if p0.is_infinite() || p1.is_infinite() {
                        continue;
                    }
                    let f0 = self.kern(k as i64 - z as i64) / p0;
                    let f1 = self.kern(k as i64 - z as i64 - 1) / p1;
                    s += 0.5 * self.h * (f0 + f1);
                }
                s
            })
            .collect())
    }

    /// `ℱ'(φ)` at the nodes of `[0, ℓ]`.
    pub fn psi_from_phi(&self, phi: &[f64]) -> Result<Vec<f64>> {
        self.snr_profile(phi)?
            .into_iter()
            .map(|s| self.prior.mmse(ExtNonNeg::new(s)?))
            .collect()
    }

    /// The profile at `t = 0`: `ψ ≡ ∞` on `[0, ℓ]`.
    pub fn initial(&self) -> Result<ContinuumProfile> {
        let psi = vec![f64::INFINITY; self.ell_node() - self.origin() + 1];
        Ok(ContinuumProfile {
            t: 0,
            phi: self.phi_from_psi(&psi)?,
            psi,
        })
    }

    /// One step `ψ ← ℱ'(φ)`, `φ ← ℱ''(ψ)`.
    pub fn step(&self, profile: &ContinuumProfile) -> Result<ContinuumProfile> {
        let psi = self.psi_from_phi(&profile.phi)?;
        Ok(ContinuumProfile {
            t: profile.t + 1,
            phi: self.phi_from_psi(&psi)?,
            psi,
        })
    }

    /// Iterates from `t = 0` until no finite value moves by `stop_tol`.
    pub fn run(&self, t_max: usize, stop_tol: f64) -> Result<ContinuumTrajectory> {
        let mut profiles = vec![self.initial()?];
        for _ in 0..t_max {
            let prev = profiles.last().expect("nonempty");
            let next = self.step(prev)?;
            let change = next
                .phi
                .iter()
                .zip(&prev.phi)
                .chain(next.psi.iter().zip(&prev.psi))
                .map(|(a, b)| if a == b { 0.0 } else { (a - b).abs() })
                .fold(0.0, f64::max);
            profiles.push(next);
            if change < stop_tol {
                return Ok(ContinuumTrajectory {
                    profiles,
                    converged: true,
                });
            }
        }
        Ok(ContinuumTrajectory {
            profiles,
            converged: false,
        })
    }

    fn check_finite_part(&self, phi: &[f64]) -> Result<()> {
        self.check_phi(phi)?;
        if let Some(bad) = phi[..=self.last_finite()].iter().find(|p| !(**p > 0.0 && p.is_finite())) {
            return Err(Error::Domain {
                what: "phi on [-1, ell-1]",
                expected: "positive and finite",
                value: *bad,
            });
        }
        Ok(())
    }

    /// The free energy and the pieces of its two decompositions.
    pub fn free_energy_terms(&self, phi: &[f64]) -> Result<FreeEnergyTerms> {
        self.check_finite_part(phi)?;
        let (a, b) = (0, self.last_finite());
        let sig = self.sigma_eff();
        let mut local = 0.0;
        let mut seed = 0.0;
        let mut rob = 0.0;
        for k in a..=b {
            let w = self.trap(k, a, b);
            local += w * (sig[k] / phi[k] + phi[k].ln());
            seed += w * (sig[k] - self.sigma2) / phi[k];
            rob += w * potential_rob(phi[k], self.sigma2, self.delta)?;
        }
        local *= 0.5 * self.delta;
        seed *= 0.5 * self.delta;

        let s = self.snr_profile(phi)?;
        let i_s = self.prior.mutual_information_many(&s)?;
        let inv: Vec<f64> = phi[a..=b].iter().map(|p| 1.0 / p).collect();
        let i_phi = self.prior.mutual_information_many(&inv)?;
        let (lo, hi) = (self.origin(), self.ell_node());
        let mut coupling = 0.0;
        let mut tilde = 0.0;
        for k in lo..=hi {
            let w = self.trap(k, lo, hi);
            coupling += w * i_s[k - lo];
            // φ(y - 1) sits exactly per_unit nodes to the left.
            tilde += w * (i_s[k - lo] - i_phi[k - lo]);
        }
        let mut mi_local = 0.0;
        for k in a..=b {
            mi_local += self.trap(k, a, b) * i_phi[k];
        }
        Ok(FreeEnergyTerms {
            total: local + coupling,
            local,
            coupling,
            potential: rob + mi_local,
            potential_rob: rob,
            seed,
            tilde,
        })
    }

    /// `ℰ_𝒲(φ)`; only the values on `[-1, ℓ-1]` enter.
    pub fn free_energy(&self, phi: &[f64]) -> Result<f64> {
        Ok(self.free_energy_terms(phi)?.total)
    }

    /// `∇ℰ_𝒲(φ)` at the nodes of `[-1, ℓ-1]`.
    pub fn energy_gradient(&self, phi: &[f64]) -> Result<Vec<f64>> {
        self.check_finite_part(phi)?;
        let mm = self.psi_from_phi(phi)?;
        let (lo, hi) = (self.origin(), self.ell_node());
        Ok((0..=self.last_finite())
            .map(|k| {
                let mut conv = 0.0;
                let from = k.saturating_sub(self.per_unit).max(lo);
                for m in from..=(k + self.per_unit).min(hi) {
                    conv += self.trap(m, lo, hi) * self.kern(m as i64 - k as i64) * mm[m - lo];
                }
                let p = phi[k];
                self.delta / (2.0 * p * p) * (p - self.sigma_eff_at(self.x(k)) - conv / self.delta)
            })
            .collect())
    }

    /// `max |∇ℰ| · 2σ⁴/δ`.
    pub fn normalized_gradient_norm(&self, phi: &[f64]) -> Result<f64> {
        let scale = 2.0 * self.sigma2 * self.sigma2 / self.delta;
        Ok(self
            .energy_gradient(phi)?
            .into_iter()
            .map(|g| (g * scale).abs())
            .fold(0.0, f64::max))
    }

    /// Trapezoid weights of the nodes of `[-1, ℓ-1]`, pairing the gradient
    /// with a direction.
    pub fn gradient_weights(&self) -> Vec<f64> {
        let b = self.last_finite();
        (0..=b).map(|k| self.trap(k, 0, b)).collect()
    }

    pub fn l0(&self) -> f64 {
        self.l0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bg() -> SignalPrior {
        SignalPrior::bernoulli_gaussian(0.1, 0.0, 1.0).unwrap()
    }

    fn model(prior: SignalPrior, h: f64) -> ContinuumModel {
        ContinuumModel::new(prior, ShapeFunction::RaisedCosine, 3.0, h, 1e-2, 0.5, 20.0).unwrap()
    }

    #[test]
    fn mesh_validation() {
        let p = bg();
        assert!(ContinuumModel::new(p.clone(), ShapeFunction::RaisedCosine, 3.0, 0.1, 1e-2, 0.5, 20.0).is_err());
        assert!(ContinuumModel::new(p.clone(), ShapeFunction::RaisedCosine, 3.0, 0.03, 1e-2, 0.5, 20.0).is_err());
        assert!(ContinuumModel::new(p.clone(), ShapeFunction::RaisedCosine, 3.005, 0.01, 1e-2, 0.5, 20.0).is_err());
        let m = model(p, 0.05);
        assert_eq!(m.mesh().len(), 101);
        assert_eq!(m.psi_mesh().len(), 61);
        assert_eq!(m.n_finite_phi(), 61);
    }

    #[test]
    fn sigma_eff_values() {
        let p = bg();
        let s2 = 1e-4;
        let phi_s = sigma2_plus(&p, s2);
        assert_eq!(sigma_eff(2.0, s2, 0.2, 50.0, ShapeFunction::RaisedCosine, &p).unwrap(), s2);
        let at_minus_one = sigma_eff(-1.0, s2, 0.2, 50.0, ShapeFunction::RaisedCosine, &p).unwrap();
        assert!((at_minus_one - phi_s).abs() < 1e-18);
        for k in 0..=60 {
            let x = -1.5 + 0.05 * k as f64;
            let v = sigma_eff(x, s2, 0.2, 50.0, ShapeFunction::RaisedCosine, &p).unwrap();
            assert!(v >= s2 && v < 2.0 * s2);
        }
    }

    fn sigma2_plus(p: &SignalPrior, s2: f64) -> f64 {
        s2 + p.mmse_at(50.0 / (2.0 * s2)).unwrap() / 0.2
    }

    #[test]
    fn phi_star_values() {
        let p = bg();
        let v = phi_star(1e-4, 0.2, 50.0, &p).unwrap();
        assert!(v.value > 1e-4 && v.value < 2e-4 && !v.degenerate);
        assert!(v.value / 1e-4 <= 1.0 + 2.0 / 10.0);
        let pm = phi_star(1e-4, 0.2, 50.0, &SignalPrior::point_mass(0.0).unwrap()).unwrap();
        assert!(pm.degenerate && pm.value == 1e-4);
        assert!(matches!(phi_star(1e-4, 0.2, 5.0, &p), Err(Error::Precondition(_))));
    }

    #[test]
    fn zero_psi_gives_sigma_eff() {
        let m = model(bg(), 0.01);
        let phi = m.phi_from_psi(&vec![0.0; m.psi_mesh().len()]).unwrap();
        for (k, x) in m.mesh().into_iter().enumerate().take(m.n_finite_phi()) {
            assert!((phi[k] - m.sigma_eff_at(x)).abs() < 1e-15);
        }
        assert!(phi[m.n_finite_phi()].is_infinite());
    }

    #[test]
    fn point_mass_interior_is_exact_after_one_step() {
        let m = model(SignalPrior::point_mass(1.0).unwrap(), 0.02);
        let p1 = m.step(&m.initial().unwrap()).unwrap();
        assert!(p1.psi.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn potentials() {
        let pm = SignalPrior::point_mass(0.0).unwrap();
        for phi in [1e-3, 0.1, 2.0] {
            assert_eq!(potential(phi, 1e-2, 0.3, &pm).unwrap(), potential_rob(phi, 1e-2, 0.3).unwrap());
            let gap = potential(phi, 1e-2, 0.3, &bg()).unwrap() - potential_rob(phi, 1e-2, 0.3).unwrap();
            assert!((gap - bg().mutual_information(1.0 / phi).unwrap()).abs() < 1e-15);
        }
        assert!(potential_rob(0.0, 1e-2, 0.3).is_err());
    }

    #[test]
    fn constant_profile_energy_for_point_mass() {
        let m = model(SignalPrior::point_mass(0.0).unwrap(), 0.01);
        let c = 0.3;
        let e = m.free_energy(&vec![c; m.mesh().len()]).unwrap();
        let want = 3.0 * 0.5 * 0.5 * (1e-2 / c + c.ln());
        assert!((e - want).abs() < 1e-12, "{e} vs {want}");
        assert!(m.free_energy(&vec![0.0; m.mesh().len()]).is_err());
    }

    #[test]
    fn gradient_vanishes_for_point_mass_on_flat_region() {
        let m = model(SignalPrior::point_mass(0.0).unwrap(), 0.01);
        let phi = m.phi_from_psi(&vec![0.0; m.psi_mesh().len()]).unwrap();
        let g = m.energy_gradient(&phi).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-9));
    }
}
