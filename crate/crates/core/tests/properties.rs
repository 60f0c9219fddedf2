//! Property-based invariants across modules.

use chrono::NaiveDate;
use proptest::prelude::*;

use rangequant::benchmark::{HarxGjrParams, Innovation, Nig};
use rangequant::density::{self, QuantileCurve};
use rangequant::evaluate::{self, Weight};
use rangequant::features::{self, QuantDesign};
use rangequant::ingest::IntradayDay;
use rangequant::quantreg;
use rangequant::rangevol;
use rangequant::simulate::business_days;

fn config() -> ProptestConfig {
    ProptestConfig {
        cases: 64,
        ..ProptestConfig::default()
    }
}

fn design(names: &[&str], x: Vec<f64>, y: Vec<f64>) -> QuantDesign {
    let dates = business_days(NaiveDate::from_ymd_opt(2010, 1, 4).unwrap(), y.len());
    QuantDesign::from_parts(dates, names.iter().map(|s| s.to_string()).collect(), x, y).unwrap()
}

/// `n` rows of `[1, x1, x2]` plus a response.
fn regression(n: usize) -> impl Strategy<Value = (Vec<[f64; 2]>, Vec<f64>)> {
    (
        prop::collection::vec(prop::array::uniform2(-3.0f64..3.0), n),
        prop::collection::vec(-5.0f64..5.0, n),
    )
}

fn tau() -> impl Strategy<Value = f64> {
    prop::sample::select(vec![0.1, 0.25, 0.5, 0.75, 0.9])
}

fn strictly_increasing(len: usize) -> impl Strategy<Value = Vec<f64>> {
    (-5.0f64..5.0, prop::collection::vec(0.01f64..2.0, len - 1)).prop_map(|(start, gaps)| {
        let mut q = vec![start];
        for g in gaps {
            let last = *q.last().unwrap();
            q.push(last + g);
        }
        q
    })
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn qr_objective_scales_under_affine_response((rows, y) in regression(40), t in tau(), a in 0.1f64..10.0, c in -5.0f64..5.0) {
        let x: Vec<f64> = rows.iter().flat_map(|r| [1.0, r[0], r[1]]).collect();
        let d = design(&["const", "x1", "x2"], x.clone(), y.clone());
        let d2 = design(&["const", "x1", "x2"], x, y.iter().map(|v| a * v + c).collect());
        let f = quantreg::fit(&d, t).unwrap();
        let f2 = quantreg::fit(&d2, t).unwrap();
        prop_assert!((f2.objective - a * f.objective).abs() <= 1e-7 * (1.0 + a * f.objective));
        if !f.degenerate && !f2.degenerate {
            prop_assert!((f2.beta[0] - (a * f.beta[0] + c)).abs() <= 1e-6 * (1.0 + a * f.beta[0].abs() + c.abs()));
            for j in 1..3 {
                prop_assert!((f2.beta[j] - a * f.beta[j]).abs() <= 1e-6 * (1.0 + a * f.beta[j].abs()));
            }
        }
    }

    #[test]
    fn qr_adding_a_column_never_raises_the_objective((rows, y) in regression(40), t in tau()) {
        let x_full: Vec<f64> = rows.iter().flat_map(|r| [1.0, r[0], r[1]]).collect();
        let x_part: Vec<f64> = rows.iter().flat_map(|r| [1.0, r[0]]).collect();
        let full = quantreg::fit(&design(&["const", "x1", "x2"], x_full, y.clone()), t).unwrap();
        let part = quantreg::fit(&design(&["const", "x1"], x_part, y.clone()), t).unwrap();
        prop_assert!(full.objective <= part.objective + 1e-9 * (1.0 + part.objective));
        let r_full = quantreg::pseudo_r1(&full, &y, t).unwrap();
        let r_part = quantreg::pseudo_r1(&part, &y, t).unwrap();
        prop_assert!((0.0..=1.0).contains(&r_full) && r_full >= r_part - 1e-12);
    }

    #[test]
    fn qr_objective_matches_best_line_through_two_points((rows, y) in regression(10), t in tau()) {
        let x: Vec<f64> = rows.iter().flat_map(|r| [1.0, r[0]]).collect();
        let d = design(&["const", "x"], x, y.clone());
        let fit = quantreg::fit(&d, t).unwrap();
        let mut best = f64::INFINITY;
        for i in 0..rows.len() {
            for j in i + 1..rows.len() {
                let dx = rows[j][0] - rows[i][0];
                if dx.abs() < 1e-12 {
                    continue;
                }
                let b = (y[j] - y[i]) / dx;
                let a = y[i] - b * rows[i][0];
                best = best.min(quantreg::objective(&d, &[a, b], t));
            }
        }
        prop_assert!((fit.objective - best).abs() <= 1e-8 * (1.0 + best));
    }

    #[test]
    fn rearrange_sorts_a_permutation(q in prop::collection::vec(-10.0f64..10.0, 2..60)) {
        let (sorted, _) = density::rearrange(&q);
        prop_assert!(sorted.windows(2).all(|w| w[0] <= w[1]));
        let mut expect = q.clone();
        expect.sort_by(f64::total_cmp);
        prop_assert_eq!(sorted, expect);
    }

    #[test]
    fn curve_cdf_hits_knots_and_inverts(q in strictly_increasing(49), probes in prop::collection::vec(-20.0f64..20.0, 20)) {
        let taus = density::density_grid();
        let c = QuantileCurve::new(&taus, &q).unwrap();
        for (t, v) in taus.iter().zip(&q) {
            prop_assert!((c.cdf(*v) - t).abs() <= 1e-12);
        }
        let mut v = probes.clone();
        v.sort_by(f64::total_cmp);
        for w in v.windows(2) {
            if w[1] > w[0] + 1e-9 {
                prop_assert!(c.cdf(w[1]) > c.cdf(w[0]));
            }
        }
        for p in [0.001, 0.01, 0.3, 0.55, 0.99, 0.999] {
            prop_assert!((c.cdf(c.quantile(p).unwrap()) - p).abs() <= 1e-10);
        }
        for x in &probes {
            prop_assert!(c.log_density(*x).is_finite());
            let u = c.pit(*x);
            prop_assert!(u > 0.0 && u < 1.0);
        }
    }

    #[test]
    fn curve_shift_moves_cdf_exactly(q in strictly_increasing(19), shift in -3.0f64..3.0, v in -10.0f64..10.0) {
        let taus = density::estimation_grid();
        let c = QuantileCurve::new(&taus, &q).unwrap();
        let moved = QuantileCurve::new(&taus, &q.iter().map(|x| x + shift).collect::<Vec<_>>()).unwrap();
        prop_assert!((moved.cdf(v + shift) - c.cdf(v)).abs() <= 1e-9);
    }

    #[test]
    fn berkowitz_lr_is_nonnegative(z in prop::collection::vec(-4.0f64..4.0, 30..200)) {
        let b = evaluate::berkowitz(&z).unwrap();
        prop_assert!(b.lr >= -1e-9);
        prop_assert!((0.0..=1.0).contains(&b.p_value));
    }

    #[test]
    fn comparison_tests_are_antisymmetric_and_shift_invariant(
        a in prop::collection::vec(-3.0f64..3.0, 40..120),
        noise in prop::collection::vec(-1.0f64..1.0, 120),
        c in -5.0f64..5.0,
    ) {
        let b: Vec<f64> = a.iter().zip(&noise).map(|(x, e)| x + e).collect();
        let ys: Vec<f64> = a.iter().map(|x| x / 3.0).collect();
        let d1 = evaluate::dm_test(&a, &b).unwrap();
        let d2 = evaluate::dm_test(&b, &a).unwrap();
        prop_assert!((d1.stat + d2.stat).abs() <= 1e-9 * (1.0 + d1.stat.abs()));
        let shifted = |v: &[f64]| v.iter().map(|x| x + c).collect::<Vec<_>>();
        let d3 = evaluate::dm_test(&shifted(&a), &shifted(&b)).unwrap();
        prop_assert!((d1.stat - d3.stat).abs() <= 1e-6 * (1.0 + d1.stat.abs()));
        for w in Weight::ALL {
            let g1 = evaluate::ag_test(&a, &b, &ys, w).unwrap();
            let g2 = evaluate::ag_test(&shifted(&a), &shifted(&b), &ys, w).unwrap();
            prop_assert!((g1.stat - g2.stat).abs() <= 1e-6 * (1.0 + g1.stat.abs()));
        }
        let nw = evaluate::ag_test(&a, &b, &ys, Weight::Nw).unwrap();
        prop_assert_eq!(nw.stat, evaluate::dm_test(&a, &b).unwrap().stat);
    }

    #[test]
    fn newey_west_is_nonnegative_and_reduces_to_variance(x in prop::collection::vec(-5.0f64..5.0, 5..100), lags in 0usize..4) {
        let lags = lags.min(x.len() - 1);
        prop_assert!(evaluate::newey_west(&x, lags).unwrap() >= 0.0);
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
        prop_assert!((evaluate::newey_west(&x, 0).unwrap() - var).abs() <= 1e-12 * (1.0 + var));
    }

    #[test]
    fn pit_to_z_is_finite_and_monotone(mut u in prop::collection::vec(0.0f64..=1.0, 1..50)) {
        u.sort_by(f64::total_cmp);
        let z = evaluate::pit_to_z(&u);
        prop_assert!(z.iter().all(|v| v.is_finite()));
        prop_assert!(z.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn realized_measures_scale_quadratically(
        steps in prop::collection::vec(-0.01f64..0.01, 40),
        k in 0.1f64..10.0,
    ) {
        let date = NaiveDate::from_ymd_opt(2012, 3, 1).unwrap();
        let path = |s: f64| {
            let mut p = vec![4.6];
            for d in &steps {
                let last = *p.last().unwrap();
                p.push(last + s * d);
            }
            p
        };
        let lt = rangevol::lambda_table(5, 2000, 3, 0.0).unwrap();
        let a = IntradayDay::new(date, path(1.0), 5).unwrap();
        let b = IntradayDay::new(date, path(k), 5).unwrap();
        let k2 = k * k;
        let rv = rangevol::realized_variance(&a);
        prop_assert!((rangevol::realized_variance(&b) - k2 * rv).abs() <= 1e-9 * (1e-12 + k2 * rv));
        let rrv = rangevol::realized_range_variance(&a, &lt).unwrap();
        prop_assert!(rrv >= 0.0);
        prop_assert!((rangevol::realized_range_variance(&b, &lt).unwrap() - k2 * rrv).abs() <= 1e-9 * (1e-12 + k2 * rrv));
        let rbv = rangevol::range_bipower(&a, &lt).unwrap();
        prop_assert!((rangevol::range_bipower(&b, &lt).unwrap() - k2 * rbv).abs() <= 1e-9 * (1e-12 + k2 * rbv));
    }

    #[test]
    fn har_mean_lies_between_window_extremes(y in prop::collection::vec(-10.0f64..10.0, 21..60), m in 1usize..22) {
        let t = y.len();
        let v = features::har_mean(&y, t, m).unwrap();
        let w = &y[t - m..t];
        let lo = w.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        prop_assert!(features::har_mean(&y, m - 1, m).is_err());
    }

    #[test]
    fn symmetric_nig_density_is_even(alpha in 0.3f64..20.0, z in -8.0f64..8.0) {
        let nig = Nig::standardized(alpha, 0.0).unwrap();
        prop_assert!((nig.logpdf(z) - nig.logpdf(-z)).abs() <= 1e-10 * (1.0 + nig.logpdf(z).abs()));
    }

    #[test]
    fn gjr_without_dynamics_has_constant_variance(
        e in prop::collection::vec(-3.0f64..3.0, 30),
        omega in 0.01f64..5.0,
    ) {
        let p = HarxGjrParams {
            names: vec!["const".into()],
            mean_coefs: vec![0.0],
            omega,
            alpha: 0.0,
            gamma: 0.0,
            beta: 0.0,
            innov: Innovation::Gaussian,
            loglik: f64::NAN,
        };
        let d = design(&["const"], vec![1.0; e.len()], e);
        let (_, h) = p.filter(&d).unwrap();
        prop_assert!(h[1..].iter().all(|v| *v == omega));
        prop_assert_eq!(p.next_variance(&d).unwrap(), omega);
    }
}
