use proptest::prelude::*;
use sc_amp::amp::compute_q;
use sc_amp::coupling::{build_base_matrix, BaseMatrix, ShapeFunction};
use sc_amp::priors::{ExtNonNeg, SignalPrior};
use sc_amp::state_evolution::{
    effective_snr, evaluate_seed_bounds, run_modified_se, run_state_evolution, se_map_phi, se_map_psi, SeOptions,
};

fn ext(v: &[f64]) -> Vec<ExtNonNeg> {
    v.iter().map(|&x| ExtNonNeg::new(x).unwrap()).collect()
}

fn bg() -> SignalPrior {
    SignalPrior::bernoulli_gaussian(0.1, 0.0, 1.0).unwrap()
}

/// Random 10×12 base with about a third of the entries zero.
fn sparse_base() -> impl Strategy<Value = BaseMatrix> {
    prop::collection::vec(prop_oneof![Just(0.0), 0.01f64..2.0, 0.01f64..2.0], 120).prop_filter_map(
        "every column needs weight",
        |w| {
            let ok = (0..12).all(|c| (0..10).any(|r| w[r * 12 + c] > 0.0));
            ok.then(|| BaseMatrix::from_dense(10, 12, w).unwrap())
        },
    )
}

fn extended() -> impl Strategy<Value = ExtNonNeg> {
    prop_oneof![
        4 => (0.0f64..1e3).prop_map(|v| ExtNonNeg::new(v).unwrap()),
        1 => Just(ExtNonNeg::INFINITY),
        1 => Just(ExtNonNeg::ZERO),
    ]
}

fn bg_prior() -> impl Strategy<Value = SignalPrior> {
    (0.05f64..0.95, -1.0f64..1.0, 0.2f64..3.0)
        .prop_map(|(eps, mu, var)| SignalPrior::bernoulli_gaussian(eps, mu, var).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn extended_order_and_reciprocal(a in extended(), b in extended()) {
        let back = a.reciprocal().reciprocal();
        if a.is_infinite() || a.value() == 0.0 {
            prop_assert_eq!(back, a);
        } else {
            prop_assert!((back.value() - a.value()).abs() <= 4.0 * f64::EPSILON * a.value());
        }
        prop_assert_eq!(a <= b, a.value() <= b.value());
        prop_assert!(ExtNonNeg::INFINITY >= a);
        if a <= b {
            prop_assert!(a.reciprocal() >= b.reciprocal());
        }
    }

    #[test]
    fn denoiser_derivative_matches_central_difference(prior in bg_prior(), v in -4.0f64..4.0, s in 0.1f64..50.0) {
        let h = 1e-4;
        let fd = (prior.denoise(v + h, s).unwrap() - prior.denoise(v - h, s).unwrap()) / (2.0 * h);
        let d = prior.denoise_derivative(v, s).unwrap();
        prop_assert!((fd - d).abs() <= 1e-6 * d.abs() + 1e-9, "fd {} vs {}", fd, d);
    }

    #[test]
    fn discrete_denoiser_stays_in_hull(
        locs in prop::collection::vec(-3.0f64..3.0, 2..5),
        v in -10.0f64..10.0,
        s in 0.01f64..1e4,
    ) {
        let mass = 1.0 / locs.len() as f64;
        let prior = SignalPrior::discrete_atoms(locs.iter().map(|&l| (l, mass)).collect()).unwrap();
        let x = prior.denoise(v, s).unwrap();
        let lo = locs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = locs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(x >= lo - 1e-12 && x <= hi + 1e-12);
    }

    #[test]
    fn mmse_respects_bounds(prior in bg_prior(), log_s in -3.0f64..5.0) {
        let s = 10f64.powf(log_s);
        let m = prior.mmse_at(s).unwrap();
        prop_assert!(m >= 0.0 && m <= prior.variance().min(1.0 / s) * (1.0 + 1e-12));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn se_maps_match_naive_reference(base in sparse_base(), phi in prop::collection::vec(extended(), 10), psi in prop::collection::vec(extended(), 12)) {
        let prior = bg();
        let got = se_map_psi(&base, &prior, &phi).unwrap();
        for i in 0..12 {
            let mut s = 0.0;
            for b in 0..10 {
                let w = base.get(b, i);
                if w > 0.0 {
                    s += w * if phi[b].is_infinite() { 0.0 } else if phi[b].value() == 0.0 { f64::INFINITY } else { 1.0 / phi[b].value() };
                }
            }
            let want = prior.mmse(ExtNonNeg::new(s).unwrap()).unwrap();
            prop_assert!((got[i].value() - want).abs() <= 1e-12 || got[i].value() == want);
        }
        let got = se_map_phi(&base, &psi, 0.01, 0.4).unwrap();
        for a in 0..10 {
            let mut acc = 0.0;
            for i in 0..12 {
                let w = base.get(a, i);
                if w > 0.0 {
                    acc += w * psi[i].value();
                }
            }
            let want = 0.01 + acc / 0.4;
            prop_assert!(got[a].value() == want || (got[a].value() - want).abs() <= 1e-12 * want);
        }
    }

    #[test]
    fn se_maps_are_monotone(
        base in sparse_base(),
        lo in prop::collection::vec(0.01f64..5.0, 10),
        bump in prop::collection::vec(0.0f64..5.0, 10),
    ) {
        let prior = bg();
        let hi: Vec<f64> = lo.iter().zip(&bump).map(|(a, b)| a + b).collect();
        let t_lo = se_map_psi(&base, &prior, &ext(&lo)).unwrap();
        let t_hi = se_map_psi(&base, &prior, &ext(&hi)).unwrap();
        for (a, b) in t_lo.iter().zip(&t_hi) {
            prop_assert!(a.value() <= b.value() * (1.0 + 1e-12));
        }
        let psi_lo = &lo[..10];
        let psi_lo: Vec<f64> = psi_lo.iter().chain(&[0.1, 0.2]).copied().collect();
        let psi_hi: Vec<f64> = psi_lo.iter().enumerate().map(|(i, v)| v + bump[i % 10]).collect();
        let p_lo = se_map_phi(&base, &ext(&psi_lo), 0.0, 0.3).unwrap();
        let p_hi = se_map_phi(&base, &ext(&psi_hi), 0.0, 0.3).unwrap();
        for (a, b) in p_lo.iter().zip(&p_hi) {
            prop_assert!(a <= b);
        }
    }

    #[test]
    fn q_is_a_weighted_average(base in sparse_base(), phi in prop::collection::vec(extended(), 10)) {
        let q = compute_q(&base, &phi).unwrap();
        for u in 0..12 {
            let total: f64 = (0..10).map(|r| base.get(r, u) * q.get(r, u)).sum();
            prop_assert!((total - 1.0).abs() <= 1e-12, "column {} sums to {}", u, total);
        }
    }

    #[test]
    fn effective_snr_matches_naive_sum(base in sparse_base(), phi in prop::collection::vec(0.001f64..10.0, 10)) {
        let s = effective_snr(&base, &ext(&phi)).unwrap();
        for u in 0..12 {
            let want: f64 = (0..10).map(|r| base.get(r, u) / phi[r]).sum();
            prop_assert!((s[u].value() - want).abs() <= 1e-12 * want);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn band_rows_vanish_outside_the_band(l in 2usize..12, l0 in 1usize..4, rho_inv in 2usize..6) {
        let base = build_base_matrix(l, l0, rho_inv, ShapeFunction::RaisedCosine).unwrap();
        let g = base.geometry().unwrap().clone();
        let r = rho_inv as i64;
        for a in -r..=(l as i64 - 1 + r) {
            let row = g.band_row_index(a);
            for c in 0..base.n_cols() {
                let i = g.col_label(c);
                if (a - i).abs() > r {
                    prop_assert_eq!(base.get(row, c), 0.0);
                }
            }
        }
        for row in base.row_sum_checked_rows() {
            let s = base.row_sum(row);
            prop_assert!((0.5..=2.0).contains(&s), "row {} sums to {}", row, s);
        }
    }

    #[test]
    fn coupled_se_is_monotone_in_t_and_sigma(sig_lo in 1e-3f64..0.05, factor in 1.0f64..4.0, delta in 0.2f64..0.8) {
        let base = build_base_matrix(6, 3, 2, ShapeFunction::RaisedCosine).unwrap();
        let opts = SeOptions { t_max: 30, stop_tol: 0.0 };
        let sig_hi = sig_lo * factor;
        let lo = run_state_evolution(&base, &bg(), sig_lo * sig_lo, delta, opts).unwrap();
        let hi = run_state_evolution(&base, &bg(), sig_hi * sig_hi, delta, opts).unwrap();
        for pair in lo.profiles.windows(2) {
            for (a, b) in pair[1].psi.iter().zip(&pair[0].psi) {
                prop_assert!(a.value() <= b.value() * (1.0 + 1e-12));
            }
        }
        for (p, q) in lo.profiles.iter().zip(&hi.profiles) {
            for (a, b) in p.phi.iter().zip(&q.phi) {
                prop_assert!(a.value() <= b.value() * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn modified_profiles_are_spatially_nondecreasing(sigma in 1e-3f64..0.1, delta in 0.2f64..0.8) {
        let base = build_base_matrix(10, 3, 3, ShapeFunction::RaisedCosine).unwrap();
        let traj = run_modified_se(&base, &bg(), sigma * sigma, delta, SeOptions { t_max: 40, stop_tol: 0.0 }).unwrap();
        for p in &traj.profiles {
            for w in p.psi.windows(2) {
                prop_assert!(w[0].value() <= w[1].value() * (1.0 + 1e-12));
            }
            for w in p.phi.windows(2) {
                prop_assert!(w[0].value() <= w[1].value() * (1.0 + 1e-12));
            }
        }
        for pair in traj.profiles.windows(2) {
            for (a, b) in pair[1].psi.iter().zip(&pair[0].psi) {
                prop_assert!(a.value() <= b.value() * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn modified_se_dominates_coupled_se(sigma in 1e-3f64..0.05) {
        // δL0 = 4 > 3, so the seed bounds eventually hold.
        let (delta, l0) = (0.8, 5);
        let base = build_base_matrix(12, l0, 2, ShapeFunction::RaisedCosine).unwrap();
        let opts = SeOptions { t_max: 60, stop_tol: 0.0 };
        let coupled = run_state_evolution(&base, &bg(), sigma * sigma, delta, opts).unwrap();
        let modified = run_modified_se(&base, &bg(), sigma * sigma, delta, opts).unwrap();
        let report = evaluate_seed_bounds(&coupled, &base, &bg()).unwrap();
        let t0 = report.t0.expect("seed bounds hold eventually");
        let g = base.geometry().unwrap();
        for t in t0..=60 {
            let c = &coupled.profiles[t].psi;
            let m = &modified.profiles[t - t0].psi;
            for i in 0..g.l {
                let ci = c[g.col_index(i as i64)].value();
                prop_assert!(m[i].value() >= ci * (1.0 - 1e-9), "t={} i={}: {} < {}", t, i, m[i].value(), ci);
            }
        }
    }
}
