//! Adaptive Gauss–Kronrod (7/15) quadrature on finite intervals.
//!
//! Every smooth one-dimensional integral in the crate goes through here: the
//! Gaussian-weighted posterior-variance integrals behind `mmse`, the
//! `I(s) = ∫ mmse/2` integrals, and the shape-function normalisation checks.

use std::cmp::Ordering;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_224,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];

// Gauss weights for the odd Kronrod nodes XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Outcome of an adaptive integration that ran out of subdivisions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NonConvergence {
    pub estimate: f64,
    pub achieved: f64,
    pub requested: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
    pub max_intervals: usize,
}

impl Tolerance {
    pub fn new(abs: f64, rel: f64) -> Self {
        Tolerance {
            abs,
            rel,
            max_intervals: 400,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Panel {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

fn kronrod<E>(f: &mut impl FnMut(f64) -> Result<f64, E>, a: f64, b: f64) -> Result<Panel, E> {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center)?;
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for (j, (&x, &w)) in XGK.iter().zip(WGK.iter()).take(7).enumerate() {
        let dx = half * x;
        let pair = f(center - dx)? + f(center + dx)?;
        kronrod += w * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    Ok(Panel {
        a,
        b,
        value: kronrod * half,
        error: ((kronrod - gauss) * half).abs(),
    })
}

/// Integrates a fallible integrand over `[a, b]`, starting from `initial`
/// equal panels and bisecting the worst panel until the summed error estimate
/// drops below `max(tol.abs, tol.rel * |I|)`.
///
/// The outer `Result` carries integrand failures; the inner one reports a
/// subdivision budget that ran out before the tolerance was met.
pub fn integrate_fallible<E>(
    mut f: impl FnMut(f64) -> Result<f64, E>,
    a: f64,
    b: f64,
    initial: usize,
    tol: Tolerance,
) -> Result<Result<f64, NonConvergence>, E> {
    if a == b {
        return Ok(Ok(0.0));
    }
    let initial = initial.max(1);
    let step = (b - a) / initial as f64;
    let mut panels = Vec::with_capacity(initial + 32);
    for k in 0..initial {
        let lo = a + step * k as f64;
        let hi = if k + 1 == initial { b } else { lo + step };
        panels.push(kronrod(&mut f, lo, hi)?);
    }
    loop {
        let total: f64 = panels.iter().map(|p| p.value).sum();
        let error: f64 = panels.iter().map(|p| p.error).sum();
        let target = tol.abs.max(tol.rel * total.abs());
        if error <= target {
            return Ok(Ok(total));
        }
        if panels.len() >= tol.max_intervals {
            return Ok(Err(NonConvergence {
                estimate: total,
                achieved: error,
                requested: target,
            }));
        }
        let worst = panels
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.error.partial_cmp(&y.1.error).unwrap_or(Ordering::Equal))
            .map(|(i, _)| i)
            .unwrap_or(0);
        let p = panels.swap_remove(worst);
        let mid = 0.5 * (p.a + p.b);
        if mid <= p.a || mid >= p.b {
            // Panel can no longer be split in floating point; accept it.
            panels.push(Panel { error: 0.0, ..p });
            continue;
        }
        panels.push(kronrod(&mut f, p.a, mid)?);
        panels.push(kronrod(&mut f, mid, p.b)?);
    }
}

/// Infallible convenience wrapper around [`integrate_fallible`].
pub fn integrate(
    mut f: impl FnMut(f64) -> f64,
    a: f64,
    b: f64,
    initial: usize,
    tol: Tolerance,
) -> Result<f64, NonConvergence> {
    match integrate_fallible(|x| Ok::<f64, ()>(f(x)), a, b, initial, tol) {
        Ok(r) => r,
        Err(()) => unreachable!(),
    }
}
