//! Random problem instances `y = A x + w`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sc_amp::coupling::SensingMatrix;
use sc_amp::priors::SignalPrior;

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub x: Vec<f64>,
    /// One entry per row of `A`, identity rows included.
    pub w: Vec<f64>,
    pub y: Vec<f64>,
    pub seed: u64,
}

/// Draws `x` i.i.d. from `prior` and `w` i.i.d. `N(0, σ²)`. At `σ = 0` the
/// noise is exactly zero.
pub fn generate_instance(a: &SensingMatrix, prior: &SignalPrior, sigma: f64, seed: u64) -> Result<Instance> {
    let noise = Normal::new(0.0, sigma).map_err(|e| HarnessError::Config(format!("noise level: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..a.n_cols()).map(|_| prior.sample(&mut rng)).collect();
    let w: Vec<f64> = (0..a.n_rows()).map(|_| noise.sample(&mut rng)).collect();
    let y = a.mul(&x)?.iter().zip(&w).map(|(ax, wi)| ax + wi).collect();
    Ok(Instance { x, w, y, seed })
}

/// Empirical second moment of `x` against `E[X²]`, in standard errors of
/// the sample mean of `x²`.
pub fn second_moment_z(x: &[f64], prior: &SignalPrior) -> f64 {
    let n = x.len() as f64;
    let sq: Vec<f64> = x.iter().map(|v| v * v).collect();
    let mean = sq.iter().sum::<f64>() / n;
    let var = sq.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let se = (var / n).sqrt();
    let diff = mean - prior.second_moment();
    if diff == 0.0 {
        0.0
    } else {
        diff.abs() / se
    }
}

/// Fails when the second moment is more than five standard errors off.
pub fn check_moments(x: &[f64], prior: &SignalPrior) -> Result<()> {
    let z = second_moment_z(x, prior);
    if z > 5.0 {
        return Err(HarnessError::Validation(vec![format!(
            "empirical second moment is {z:.2} standard errors from E[X^2] = {}",
            prior.second_moment()
        )]));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use sc_amp::coupling::{build_base_matrix, ShapeFunction};

    fn matrix(n: usize, seed: u64) -> SensingMatrix {
        let base = build_base_matrix(4, 2, 2, ShapeFunction::RaisedCosine).unwrap();
        SensingMatrix::sample(&base, n / 2, n, seed, false).unwrap()
    }

    #[test]
    fn noiseless_instances_are_exact() {
        let a = matrix(50, 1);
        let prior = SignalPrior::bernoulli_gaussian(0.1, 0.0, 1.0).unwrap();
        let inst = generate_instance(&a, &prior, 0.0, 9).unwrap();
        assert!(inst.w.iter().all(|&w| w == 0.0));
        assert_eq!(inst.y, a.mul(&inst.x).unwrap());
    }

    #[test]
    fn sparsity_and_moments_concentrate() {
        // 8 column groups of 3125 give n = 25000.
        let a = matrix(3125, 2);
        assert_eq!(a.n_cols(), 25_000);
        let prior = SignalPrior::bernoulli_gaussian(0.1, 0.0, 1.0).unwrap();
        let inst = generate_instance(&a, &prior, 0.01, 3).unwrap();
        let frac = inst.x.iter().filter(|&&v| v != 0.0).count() as f64 / 25_000.0;
        assert!((frac - 0.1).abs() <= 0.01, "nonzero fraction {frac}");
        check_moments(&inst.x, &prior).unwrap();
        let noise = inst.w.iter().map(|w| w * w).sum::<f64>() / inst.w.len() as f64;
        assert!((noise / 1e-4 - 1.0).abs() < 0.1);
    }

    #[test]
    fn same_seed_same_instance() {
        let a = matrix(40, 5);
        let prior = SignalPrior::bernoulli_gaussian(0.3, 0.0, 1.0).unwrap();
        assert_eq!(
            generate_instance(&a, &prior, 0.1, 11).unwrap(),
            generate_instance(&a, &prior, 0.1, 11).unwrap()
        );
        assert_ne!(
            generate_instance(&a, &prior, 0.1, 11).unwrap().x,
            generate_instance(&a, &prior, 0.1, 12).unwrap().x
        );
    }

    #[test]
    fn moment_check_flags_a_wrong_prior() {
        let x = vec![1.0; 10_000];
        let prior = SignalPrior::bernoulli_gaussian(0.1, 0.0, 1.0).unwrap();
        assert!(check_moments(&x, &prior).is_err());
    }
}
