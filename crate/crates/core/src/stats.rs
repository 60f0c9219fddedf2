//! Small statistical helpers shared by the estimators and tests.
//!
//! Reference distributions come from `statrs`; everything else here is
//! elementary sample arithmetic.

use statrs::distribution::{ChiSquared, Continuous, ContinuousCDF, FisherSnedecor, Normal};

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal parameters are valid")
}

/// Standard normal density.
pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Standard normal distribution function.
pub fn norm_cdf(x: f64) -> f64 {
    std_normal().cdf(x)
}

/// Upper tail `1 - Φ(x)`, accurate in the far right tail.
pub fn norm_sf(x: f64) -> f64 {
    std_normal().sf(x)
}

/// Standard normal quantile function.
pub fn norm_quantile(p: f64) -> f64 {
    std_normal().inverse_cdf(p)
}

/// Two-sided p-value of a standard-normal referenced statistic.
pub fn two_sided_normal_p(z: f64) -> f64 {
    (2.0 * norm_sf(z.abs())).clamp(0.0, 1.0)
}

/// Upper tail probability of a chi-square variable with `df` degrees of freedom.
pub fn chi2_sf(x: f64, df: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    ChiSquared::new(df)
        .map(|d| d.sf(x))
        .unwrap_or(f64::NAN)
        .clamp(0.0, 1.0)
}

/// Upper tail probability of an F(d1, d2) variable.
pub fn f_sf(x: f64, d1: f64, d2: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    FisherSnedecor::new(d1, d2)
        .map(|d| d.sf(x))
        .unwrap_or(f64::NAN)
        .clamp(0.0, 1.0)
}

/// Density of the chi-square law; used by a few tests.
pub fn chi2_pdf(x: f64, df: f64) -> f64 {
    ChiSquared::new(df).map(|d| d.pdf(x)).unwrap_or(f64::NAN)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance with the `n - 1` divisor.
pub fn sample_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

pub fn sample_sd(xs: &[f64]) -> f64 {
    sample_variance(xs).sqrt()
}

/// Linear-interpolation quantile (Hyndman–Fan type 7) of an ascending slice.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Lower empirical quantile `inf{y : F_n(y) >= tau}`, the minimiser of the
/// pinball sum that sits on an observation.
pub fn lower_quantile(values: &[f64], tau: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    // ceil(n * tau) with a guard against representation error such as 0.1 * 30.
    let pos = n as f64 * tau;
    let rounded = pos.round();
    let k = if (pos - rounded).abs() < 1e-9 * n as f64 {
        rounded as usize
    } else {
        pos.ceil() as usize
    };
    sorted[k.clamp(1, n) - 1]
}

/// One-sample Kolmogorov–Smirnov test against U(0,1).
///
/// Returns `(D, p_value)`; the p-value uses the asymptotic Kolmogorov law with
/// Stephens' small-sample modification.
pub fn ks_uniform(values: &[f64]) -> (f64, f64) {
    let mut u = values.to_vec();
    u.sort_by(f64::total_cmp);
    let n = u.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in u.iter().enumerate() {
        let x = x.clamp(0.0, 1.0);
        d = d.max((i as f64 + 1.0) / n - x).max(x - i as f64 / n);
    }
    let sn = n.sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    (d, kolmogorov_sf(lambda))
}

/// `P(K > lambda)` for the Kolmogorov distribution.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = 2.0 * (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_quantiles() {
        assert!((norm_quantile(0.975) - 1.959963984540054).abs() < 1e-9);
        assert!(norm_quantile(0.5).abs() < 1e-12);
        assert!((norm_cdf(1.959963984540054) - 0.975).abs() < 1e-9);
    }

    #[test]
    fn lower_quantile_convention() {
        let y = [5.0, 1.0, 4.0, 2.0, 3.0];
        assert_eq!(lower_quantile(&y, 0.5), 3.0);
        assert_eq!(lower_quantile(&y, 0.4), 2.0);
        assert_eq!(lower_quantile(&y, 0.41), 3.0);
        assert_eq!(lower_quantile(&y, 0.01), 1.0);
        assert_eq!(lower_quantile(&y, 0.99), 5.0);
    }

    #[test]
    fn type7_quantile() {
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&s, 0.5), 2.5);
        assert_eq!(quantile_sorted(&s, 0.25), 1.75);
    }

    #[test]
    fn ks_accepts_uniform_grid_and_rejects_shifted() {
        let n = 1000;
        let grid: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        assert!(ks_uniform(&grid).1 > 0.99);
        let shifted: Vec<f64> = grid.iter().map(|u| u * u).collect();
        assert!(ks_uniform(&shifted).1 < 1e-6);
    }

    #[test]
    fn chi2_tail_matches_known_value() {
        // P(chi2_3 > 7.814728) = 0.05
        assert!((chi2_sf(7.814727903251178, 3.0) - 0.05).abs() < 1e-9);
    }
}
