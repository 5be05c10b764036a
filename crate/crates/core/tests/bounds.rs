use gcnstab_core::bounds::{
    drift_bound, drift_coefficient, gap_bound, kappa1, kappa1_single_layer, kappa2, lemma3_coefficient,
    per_step_drift_recursion, rho_k, stability_mu, width_to_b, AssumptionConstants, BoundReport, BoundValue,
    Provenance, Source, check_loss_ceiling,
};
use gcnstab_core::loss::{loss_constants, Loss, LossKind};
use gcnstab_oracles::exact::{self, Exact, Inputs};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn close(a: f64, b: f64, rel: f64) -> bool {
    a == b || ((a - b) / b.abs().max(a.abs())).abs() <= rel
}

fn unit(k: usize) -> AssumptionConstants {
    AssumptionConstants::unit(k, 0.1, 3, 100)
}

#[test]
fn kappa1_examples() {
    assert_eq!(kappa1(&unit(1)).unwrap().value(), 3.0);
    let mut c = unit(1);
    c.c_g = 2.0;
    assert_eq!(kappa1(&c).unwrap().value(), 36.0);
    assert!(kappa1(&unit(0)).is_err());
    // Doubling B at K = 2: first term x 2^4, second term x 2^1.
    let mut c = unit(2);
    c.c_g = 1.5;
    c.c_x = 0.7;
    let mut d = c;
    d.b = 2.0;
    let e = Exact::new(&inputs(&c));
    let first = exact::to_f64(&(e.kappa1() - second_term(&c)));
    let second = exact::to_f64(&second_term(&c));
    assert!(close(kappa1(&d).unwrap().value(), 16.0 * first + 2.0 * second, 1e-14));
    assert!(close(kappa1(&d).unwrap().value(), exact::to_f64(&Exact::new(&inputs(&d)).kappa1()), 1e-14));
}

fn second_term(c: &AssumptionConstants) -> exact::BigRational {
    let e = Exact::new(&inputs(c));
    let a = &e.b * &e.alpha_sigma * &e.c_g;
    let mut p = exact::rat(1.0);
    for _ in 0..c.k - 1 {
        p *= &a;
    }
    &e.alpha_ell * p * &e.alpha_sigma * &e.alpha_sigma * &e.c_g * &e.c_g * &e.c_x
}

#[test]
fn kappa2_and_rho_examples() {
    assert_eq!(kappa2(&unit(0)).value(), 0.0);
    assert_eq!(kappa2(&unit(1)).value(), 1.0);
    let mut c = unit(2);
    c.b = 2.0;
    assert_eq!(kappa2(&c).value(), 20.0);
    assert_eq!(rho_k(&c, 1).unwrap().value(), 12.0);
    assert_eq!(rho_k(&unit(1), 1).unwrap().value(), 1.0);
    let u2 = unit(2);
    assert_eq!(rho_k(&u2, 1).unwrap().value(), 2.0);
    assert_eq!(rho_k(&u2, 2).unwrap().value(), 1.0);
    assert_eq!(kappa2(&u2).value(), 3.0);
    assert!(rho_k(&u2, 0).is_err());
    assert!(rho_k(&u2, 3).is_err());
}

#[test]
fn stability_mu_examples() {
    let mut c = unit(1);
    c.eta = 0.0;
    assert_eq!(stability_mu(&c).value(), 0.0);
    let mut c = unit(1);
    c.t = 0;
    assert_eq!(stability_mu(&c).value(), 0.0);
    // C = 0.2, ratio 1.7, sum 5.59
    assert!(close(stability_mu(&unit(1)).value(), 0.01118, 1e-13));
}

#[test]
fn gap_bound_examples() {
    let g = gap_bound(0.0, 4.0, 100, 0.1).unwrap();
    assert!(close(g, 4.0 * (10f64.ln() / 200.0).sqrt(), 1e-15));
    assert!((g - 0.4291932).abs() < 5e-8);
    let mu = 0.1;
    assert!((gap_bound(mu, 4.0, 100, 1.0 - 1e-12).unwrap() - 2.0 * mu).abs() < 1e-5);
    assert!(gap_bound(2.0 * mu, 4.0, 100, 0.1).unwrap() > gap_bound(mu, 4.0, 100, 0.1).unwrap());
    for bad in [0.0, 1.0, 1.5, -0.2] {
        assert!(gap_bound(mu, 4.0, 100, bad).is_err());
    }
}

#[test]
fn drift_and_lemma3_examples() {
    let mut c = unit(1);
    c.t = 0;
    assert_eq!(drift_bound(&c).value(), 0.0);
    c.t = 1;
    assert_eq!(drift_bound(&c).value(), drift_coefficient(&c).value());
    c.t = 2;
    assert!(close(drift_bound(&c).value(), 0.0108, 1e-14));

    assert_eq!(lemma3_coefficient(&unit(0)).value(), 1.0);
    let mut c = unit(2);
    c.b = 0.0;
    assert_eq!(lemma3_coefficient(&c).value(), 0.0);
    let mut c = unit(2);
    c.alpha_ell = 4.0;
    c.b = 1.5;
    c.c_x = 3.0;
    assert_eq!(lemma3_coefficient(&c).value(), 27.0);
}

#[test]
fn drift_recursion_examples() {
    let mut c = unit(1);
    c.t = 5;
    let zeros = per_step_drift_recursion(&c, &[false; 5]).unwrap();
    assert_eq!(zeros, vec![0.0; 6]);
    let mut c2 = unit(1);
    c2.t = 2;
    let b = per_step_drift_recursion(&c2, &[true, false]).unwrap();
    assert!(close(b[1], 0.4, 1e-15) && close(b[2], 0.68, 1e-15), "{b:?}");
    let jump = b[1];
    c.t = 4;
    let all = per_step_drift_recursion(&c, &[true; 4]).unwrap();
    assert!(close(all[4], 4.0 * jump, 1e-15));
    assert!(per_step_drift_recursion(&c, &[true; 3]).is_err());
    // Exact recursion agrees.
    let hits = [false, true, false, false];
    let ex = Exact::new(&inputs(&c)).drift_recursion(&hits);
    for (a, b) in per_step_drift_recursion(&c, &hits).unwrap().iter().zip(&ex) {
        assert!(close(*a, exact::to_f64(b), 1e-14));
    }
}

#[test]
fn drift_recursion_expectation_is_dominated() {
    let mut c = AssumptionConstants::unit(1, 0.02, 30, 10);
    c.c_g = 1.2;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let n = 10_000;
    let (mut sum, mut sum2) = (0.0, 0.0);
    for _ in 0..n {
        let hits: Vec<bool> = (0..c.t).map(|_| rng.random_range(0..c.m) == 0).collect();
        let b = *per_step_drift_recursion(&c, &hits).unwrap().last().unwrap();
        sum += b;
        sum2 += b * b;
    }
    let mean = sum / n as f64;
    let se = ((sum2 / n as f64 - mean * mean) / n as f64).sqrt();
    assert!(mean <= drift_bound(&c).value() + 3.0 * se, "{mean} > {}", drift_bound(&c).value());
}

#[test]
fn width_to_b_examples() {
    assert_eq!(width_to_b(1.0, &[1]).unwrap(), 1.0);
    assert_eq!(width_to_b(0.5, &[4, 9]).unwrap(), 3.0);
    let a = width_to_b(0.3, &[16, 8, 8]).unwrap();
    let b = width_to_b(0.3, &[16, 16, 16]).unwrap();
    // Hidden 8x8 block dominates only after doubling; compare hidden-block values directly.
    assert!(close(0.3 * ((16 * 16) as f64).sqrt(), 2.0 * 0.3 * ((8 * 8) as f64).sqrt(), 1e-15));
    assert!(b >= a);
    assert!(width_to_b(0.0, &[2]).is_err());
}

#[test]
fn loss_constants_match_grid_maximization() {
    for kind in [LossKind::Squared, LossKind::Logistic, LossKind::SmoothedHinge] {
        for (lo, hi) in [(-1.0, 1.0), (-0.5, 2.0), (-3.0, 1.0)] {
            let loss = Loss::new(kind, lo, hi).unwrap();
            let c = loss_constants(kind, lo, hi).unwrap();
            let n = 400;
            let step = (hi - lo) / n as f64;
            let (mut alpha, mut nu, mut m): (f64, f64, f64) = (0.0, 0.0, 0.0);
            for j in 0..=n {
                let y = lo + j as f64 * step;
                for i in 0..n {
                    let a = lo + i as f64 * step;
                    let b = a + step;
                    alpha = alpha.max((loss.value(b, y) - loss.value(a, y)).abs() / step);
                    nu = nu.max((loss.derivative(b, y) - loss.derivative(a, y)).abs() / step);
                    m = m.max(loss.value(a, y)).max(loss.value(b, y));
                }
            }
            for (name, got, grid) in [("alpha", c.alpha_ell, alpha), ("nu", c.nu_ell, nu), ("M", c.m, m)] {
                assert!(grid <= got * (1.0 + 1e-9), "{kind} [{lo},{hi}] {name}: grid {grid} > {got}");
                assert!(close(got, grid, 0.01), "{kind} [{lo},{hi}] {name}: {got} vs grid {grid}");
            }
            check_loss_ceiling(&loss, c.m).unwrap();
            assert!(check_loss_ceiling(&loss, 0.9 * c.m).is_err());
        }
    }
}

fn inputs(c: &AssumptionConstants) -> Inputs {
    Inputs {
        alpha_sigma: c.alpha_sigma,
        nu_sigma: c.nu_sigma,
        alpha_ell: c.alpha_ell,
        nu_ell: c.nu_ell,
        loss_ceiling: c.loss_ceiling,
        b: c.b,
        c_g: c.c_g,
        c_x: c.c_x,
        k: c.k as u32,
        eta: c.eta,
        t: c.t as u32,
        m: c.m as u64,
    }
}

fn random_constants(rng: &mut ChaCha8Rng) -> AssumptionConstants {
    AssumptionConstants {
        alpha_sigma: rng.random_range(0.5..1.5),
        nu_sigma: rng.random_range(0.0..2.0),
        alpha_ell: rng.random_range(0.1..4.0),
        nu_ell: rng.random_range(0.0..2.0),
        loss_ceiling: rng.random_range(0.5..4.0),
        b: rng.random_range(0.2..2.0),
        c_g: rng.random_range(1.0..3.0),
        c_x: rng.random_range(0.5..10.0),
        k: rng.random_range(1..=6),
        eta: rng.random_range(1e-4..0.05),
        t: rng.random_range(0..=60),
        m: rng.random_range(1..=500),
    }
}

/// Linear comparison when the oracle is representable, log comparison otherwise.
fn agrees(got: &BoundValue, oracle: &exact::BigRational) -> bool {
    let o = exact::to_f64(oracle);
    if o.is_finite() && !got.overflow() {
        close(got.value(), o, 1e-12)
    } else {
        let lo = exact::to_f64(&exact::ln(oracle));
        close(got.ln, lo, 1e-12)
    }
}

#[test]
fn formulas_match_exact_arithmetic() {
    let mut rng = ChaCha8Rng::seed_from_u64(1234);
    for _ in 0..100 {
        let c = random_constants(&mut rng);
        let e = Exact::new(&inputs(&c));
        assert!(agrees(&kappa1(&c).unwrap(), &e.kappa1()), "kappa1 {c:?}");
        assert!(agrees(&kappa2(&c), &e.kappa2()), "kappa2 {c:?}");
        for k in 1..=c.k {
            assert!(agrees(&rho_k(&c, k).unwrap(), &e.rho(k as u32)), "rho {c:?}");
        }
        assert!(agrees(&stability_mu(&c), &e.mu()), "mu {c:?}");
        assert!(agrees(&drift_bound(&c), &e.drift()), "drift {c:?}");
        assert!(agrees(&lemma3_coefficient(&c), &e.lemma3()), "lemma3 {c:?}");
        let r = BoundReport::evaluate(&c, 0.05, Provenance::all(Source::UserSupplied)).unwrap();
        let g = exact::gap_bound(&e.mu(), &e.loss_ceiling, c.m as u64, 0.05);
        assert!(agrees(&r.gap_bound, &g), "gap {c:?}");
    }
}

#[test]
fn single_layer_kappa1_matches_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..20 {
        let mut c = random_constants(&mut rng);
        c.k = 0;
        let e = Exact::new(&inputs(&c));
        assert!(agrees(&kappa1_single_layer(&c), &e.kappa1_single_layer()));
        assert!(agrees(&stability_mu(&c), &e.mu()));
        let r = BoundReport::evaluate(&c, 0.1, Provenance::all(Source::Measured)).unwrap();
        assert!(r.kappa1_single_layer);
        assert!(r.rho.is_empty());
        assert_eq!(r.kappa2.value(), 0.0);
    }
}

#[test]
fn report_composes_lemma2_with_mu() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let c = random_constants(&mut rng);
        let r = BoundReport::evaluate(&c, 0.1, Provenance::all(Source::Measured)).unwrap();
        if let Some(mu) = r.mu_m.linear {
            let g = gap_bound(mu, c.loss_ceiling, c.m, 0.1).unwrap();
            if g.is_finite() {
                assert_eq!(r.gap_bound.value(), g);
            }
        }
        let kv = r.to_key_value();
        assert!(kv.starts_with("alpha_sigma="));
        assert!(kv.contains("\nmu_m=") && kv.contains("\ndrift_bound="));
        let json: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(json["constants"]["K"], c.k);
    }
    let mut bad = AssumptionConstants::unit(1, 0.1, 3, 100);
    bad.c_g = -1.0;
    assert!(BoundReport::evaluate(&bad, 0.1, Provenance::all(Source::Measured)).is_err());
    assert!(BoundReport::evaluate(&unit(1), 1.5, Provenance::all(Source::Measured)).is_err());
}

#[test]
fn unit_report_text() {
    let r = BoundReport::evaluate(&unit(1), 0.1, Provenance::all(Source::UserSupplied)).unwrap();
    let kv = r.to_key_value();
    assert!(kv.contains("\nkappa1=3\n"), "{kv}");
    assert!(kv.contains("\nkappa2=1\n"));
    assert!(kv.contains("\noverflow=none\n"));
}

fn arb_constants() -> impl Strategy<Value = AssumptionConstants> {
    (
        0.5f64..1.5,
        0.0f64..2.0,
        0.1f64..4.0,
        0.0f64..2.0,
        0.2f64..2.0,
        1.0f64..3.0,
        0.5f64..5.0,
        1usize..=6,
        1e-4f64..0.05,
        0usize..=40,
        1usize..=300,
    )
        .prop_map(|(a_s, n_s, a_l, n_l, b, cg, cx, k, eta, t, m)| AssumptionConstants {
            alpha_sigma: a_s,
            nu_sigma: n_s,
            alpha_ell: a_l,
            nu_ell: n_l,
            loss_ceiling: 1.0,
            b,
            c_g: cg,
            c_x: cx,
            k,
            eta,
            t,
            m,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn kappa2_is_sum_of_rho(c in arb_constants()) {
        let sum: f64 = (1..=c.k).map(|k| rho_k(&c, k).unwrap().value()).sum();
        let k2 = kappa2(&c).value();
        prop_assert!(close(sum, k2, 1e-9) || (sum == 0.0 && k2 == 0.0));
    }

    #[test]
    fn bounds_grow_with_cg_and_b(c in arb_constants(), f in 1.0f64..2.0) {
        let mut bigger_cg = c;
        bigger_cg.c_g *= f;
        let mut bigger_b = c;
        bigger_b.b *= f;
        for d in [bigger_cg, bigger_b] {
            prop_assert!(stability_mu(&d).ln >= stability_mu(&c).ln);
            prop_assert!(drift_bound(&d).ln >= drift_bound(&c).ln);
            let g = |x: &AssumptionConstants| BoundReport::evaluate(x, 0.1, Provenance::all(Source::Measured)).unwrap().gap_bound.ln;
            prop_assert!(g(&d) >= g(&c));
        }
    }

    #[test]
    fn bounds_grow_with_depth_when_a_at_least_one(mut c in arb_constants()) {
        // a = B alpha_sigma C_g >= 1 makes every power of a non-decreasing.
        c.b = c.b.max(1.0 / (c.alpha_sigma * c.c_g));
        prop_assume!(c.k < 6);
        let mut d = c;
        d.k += 1;
        prop_assert!(stability_mu(&d).ln >= stability_mu(&c).ln);
        prop_assert!(drift_bound(&d).ln >= drift_bound(&c).ln);
    }
}
