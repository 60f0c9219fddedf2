//! HARX mean with GJR-GARCH(1,1) variance and Gaussian or standardized
//! normal-inverse-Gaussian innovations, fitted by maximum likelihood.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, InverseGaussian, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{build_design, DesignOptions, QuantDesign};
use crate::optim::{self, BfgsOptions};
use crate::stats;

/// `e^x K_1(x)` for `x > 0`, by the trapezoid rule on
/// `∫_0^∞ exp(-x (cosh t - 1)) cosh t dt`.
pub fn bessel_k1_scaled(x: f64) -> f64 {
    assert!(x > 0.0, "K1 needs a positive argument");
    let h = (0.7 / x.sqrt()).min(0.25);
    let mut sum = 0.5;
    let mut k = 1;
    loop {
        let t = k as f64 * h;
        let c = t.cosh();
        let term = (-x * (c - 1.0)).exp() * c;
        sum += term;
        if term < 1e-18 * sum {
            break;
        }
        k += 1;
    }
    sum * h
}

pub fn ln_bessel_k1(x: f64) -> f64 {
    bessel_k1_scaled(x).ln() - x
}

/// NIG law standardized to mean 0 and variance 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Nig {
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
    pub mu: f64,
    gamma: f64,
}

impl Nig {
    pub fn standardized(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > beta.abs()) || !alpha.is_finite() || !beta.is_finite() {
            return Err(Error::Domain(format!(
                "NIG needs alpha > |beta|, got alpha {alpha}, beta {beta}"
            )));
        }
        let gamma = (alpha * alpha - beta * beta).sqrt();
        let delta = gamma.powi(3) / (alpha * alpha);
        Ok(Self {
            alpha,
            beta,
            delta,
            mu: -delta * beta / gamma,
            gamma,
        })
    }

    pub fn logpdf(&self, z: f64) -> f64 {
        let d = z - self.mu;
        let q = (self.delta * self.delta + d * d).sqrt();
        self.alpha.ln() + self.delta.ln() - std::f64::consts::PI.ln() - q.ln()
            + ln_bessel_k1(self.alpha * q)
            + self.delta * self.gamma
            + self.beta * d
    }

    /// Draw via the normal variance-mean mixture with inverse Gaussian mixing.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let ig = InverseGaussian::new(self.delta / self.gamma, self.delta * self.delta)
            .expect("valid inverse Gaussian parameters");
        let v: f64 = ig.sample(rng);
        let z: f64 = StandardNormal.sample(rng);
        self.mu + self.beta * v + v.sqrt() * z
    }
}

pub fn nig_logpdf(z: f64, alpha: f64, beta: f64) -> Result<f64> {
    Ok(Nig::standardized(alpha, beta)?.logpdf(z))
}

/// Standardized NIG with a cached CDF grid (cubic Hermite between nodes).
#[derive(Debug, Clone, PartialEq)]
pub struct NigLaw {
    pub nig: Nig,
    lo: f64,
    h: f64,
    f: Vec<f64>,
    cum: Vec<f64>,
}

impl NigLaw {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        let nig = Nig::standardized(alpha, beta)?;
        let lo = (nig.mu - 40.0 / (alpha + beta) - 10.0).min(-12.0);
        let hi = (nig.mu + 40.0 / (alpha - beta) + 10.0).max(12.0);
        let h = (0.005f64).min(nig.delta / 20.0).max((hi - lo) / 200_000.0);
        let n = ((hi - lo) / h).ceil() as usize + 1;
        let pdf = |z: f64| nig.logpdf(z).exp();
        let f: Vec<f64> = (0..n).map(|k| pdf(lo + k as f64 * h)).collect();
        let mut cum = Vec::with_capacity(n);
        cum.push(0.0);
        for k in 1..n {
            let mid = pdf(lo + (k as f64 - 0.5) * h);
            cum.push(cum[k - 1] + h / 6.0 * (f[k - 1] + 4.0 * mid + f[k]));
        }
        let total = cum[n - 1];
        for c in cum.iter_mut() {
            *c /= total;
        }
        let f = f.into_iter().map(|v| v / total).collect();
        Ok(Self { nig, lo, h, f, cum })
    }

    pub fn logpdf(&self, z: f64) -> f64 {
        self.nig.logpdf(z)
    }

    fn hermite(&self, k: usize, s: f64) -> f64 {
        let (h00, h10, h01, h11) = (
            (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s),
            s * (1.0 - s) * (1.0 - s),
            s * s * (3.0 - 2.0 * s),
            s * s * (s - 1.0),
        );
        h00 * self.cum[k] + h10 * self.h * self.f[k] + h01 * self.cum[k + 1] + h11 * self.h * self.f[k + 1]
    }

    pub fn cdf(&self, z: f64) -> f64 {
        let n = self.cum.len();
        let pos = (z - self.lo) / self.h;
        if pos <= 0.0 {
            return 0.0;
        }
        if pos >= (n - 1) as f64 {
            return 1.0;
        }
        let k = pos.floor() as usize;
        self.hermite(k, pos - k as f64).clamp(0.0, 1.0)
    }

    /// Inverse CDF by bracketing on the grid and safeguarded Newton steps.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Domain(format!("probability must lie in (0, 1), got {p}")));
        }
        let n = self.cum.len();
        let k = self.cum.partition_point(|c| *c < p).clamp(1, n - 1) - 1;
        let (mut a, mut b) = (0.0f64, 1.0f64);
        let mut s = 0.5;
        for _ in 0..100 {
            let val = self.hermite(k, s) - p;
            if val.abs() < 1e-15 {
                break;
            }
            if val > 0.0 {
                b = s;
            } else {
                a = s;
            }
            let dens = {
                let (d00, d10, d01, d11) = (
                    6.0 * s * s - 6.0 * s,
                    3.0 * s * s - 4.0 * s + 1.0,
                    -6.0 * s * s + 6.0 * s,
                    3.0 * s * s - 2.0 * s,
                );
                d00 * self.cum[k] + d10 * self.h * self.f[k] + d01 * self.cum[k + 1] + d11 * self.h * self.f[k + 1]
            };
            let newton = s - val / dens;
            s = if dens > 0.0 && newton > a && newton < b {
                newton
            } else {
                0.5 * (a + b)
            };
            if b - a < 1e-15 {
                break;
            }
        }
        Ok(self.lo + (k as f64 + s) * self.h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Innovation {
    Gaussian,
    Nig { alpha: f64, beta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(rename_all = "snake_case")]
pub enum InnovKind {
    Gaussian,
    Nig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarxGjrParams {
    pub names: Vec<String>,
    pub mean_coefs: Vec<f64>,
    pub omega: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub beta: f64,
    pub innov: Innovation,
    pub loglik: f64,
}

impl HarxGjrParams {
    pub fn persistence(&self) -> f64 {
        self.alpha + self.gamma / 2.0 + self.beta
    }

    fn garch_valid(&self) -> bool {
        self.omega > 0.0
            && self.alpha >= 0.0
            && self.beta >= 0.0
            && self.alpha + self.gamma >= 0.0
            && self.persistence() < 1.0
    }

    /// Residuals and conditional variances over the design; the first
    /// variance is the sample mean of squared residuals.
    pub fn filter(&self, design: &QuantDesign) -> Result<(Vec<f64>, Vec<f64>)> {
        if design.n_cols() != self.mean_coefs.len() {
            return Err(Error::Alignment("parameter and design columns differ".into()));
        }
        let n = design.n_obs();
        let e: Vec<f64> = (0..n)
            .map(|i| design.y[i] - design.row(i).iter().zip(&self.mean_coefs).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        let mut h = Vec::with_capacity(n);
        h.push(e.iter().map(|v| v * v).sum::<f64>() / n as f64);
        for t in 1..n {
            h.push(self.next_h(e[t - 1], h[t - 1]));
        }
        if h.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::Recursion("conditional variance is not positive".into()));
        }
        Ok((e, h))
    }

    fn next_h(&self, e: f64, h: f64) -> f64 {
        let neg = if e < 0.0 { self.gamma } else { 0.0 };
        self.omega + (self.alpha + neg) * e * e + self.beta * h
    }

    /// One-step-ahead variance after the last design row.
    pub fn next_variance(&self, design: &QuantDesign) -> Result<f64> {
        let (e, h) = self.filter(design)?;
        let n = e.len();
        let v = self.next_h(e[n - 1], h[n - 1]);
        if !(v > 0.0) {
            return Err(Error::Recursion(format!("next variance {v} is not positive")));
        }
        Ok(v)
    }

    pub fn loglik(&self, design: &QuantDesign) -> Result<f64> {
        let (e, h) = self.filter(design)?;
        let law = match self.innov {
            Innovation::Gaussian => None,
            Innovation::Nig { alpha, beta } => Some(Nig::standardized(alpha, beta)?),
        };
        Ok(loglik_terms(&e, &h, law.as_ref()))
    }
}

fn loglik_terms(e: &[f64], h: &[f64], law: Option<&Nig>) -> f64 {
    let ln2pi = (2.0 * std::f64::consts::PI).ln();
    e.iter()
        .zip(h)
        .map(|(ei, hi)| match law {
            None => -0.5 * (ln2pi + hi.ln() + ei * ei / hi),
            Some(n) => n.logpdf(ei / hi.sqrt()) - 0.5 * hi.ln(),
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HarxGjrFit {
    pub params: HarxGjrParams,
    /// Standard errors of `[mean_coefs.., omega, alpha, gamma, beta]`.
    pub se: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Persistence above 0.999 or a GARCH coefficient at zero.
    pub near_boundary: bool,
}

struct Standardizer {
    y_mean: f64,
    y_sd: f64,
    x_mean: Vec<f64>,
    x_sd: Vec<f64>,
}

impl Standardizer {
    fn new(design: &QuantDesign) -> Result<(Self, Vec<f64>, Vec<f64>)> {
        let n = design.n_obs();
        let p = design.n_cols();
        let has_const = design.names.iter().any(|c| c == "const");
        let centre = |v: &[f64]| if has_const { stats::mean(v) } else { 0.0 };
        let y_mean = centre(&design.y);
        let y_sd = (design.y.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        if !(y_sd > 0.0) {
            return Err(Error::Degenerate("response is constant".into()));
        }
        let mut x_mean = vec![0.0; p];
        let mut x_sd = vec![1.0; p];
        for j in 0..p {
            if design.names[j] == "const" {
                continue;
            }
            let col: Vec<f64> = (0..n).map(|i| design.row(i)[j]).collect();
            x_mean[j] = centre(&col);
            x_sd[j] = (col.iter().map(|v| (v - x_mean[j]).powi(2)).sum::<f64>() / n as f64).sqrt();
            if !(x_sd[j] > 0.0) {
                return Err(Error::SingularDesign(format!("column `{}` is constant", design.names[j])));
            }
        }
        let xs: Vec<f64> = (0..n * p)
            .map(|k| (design.x[k] - x_mean[k % p]) / x_sd[k % p])
            .collect();
        let ys: Vec<f64> = design.y.iter().map(|v| (v - y_mean) / y_sd).collect();
        Ok((Self { y_mean, y_sd, x_mean, x_sd }, xs, ys))
    }

    /// Jacobian of natural mean coefficients w.r.t. standardized ones, and
    /// the offset added to the intercept.
    fn mean_map(&self, names: &[String]) -> (DMatrix<f64>, Option<usize>) {
        let p = names.len();
        let c = names.iter().position(|n| n == "const");
        let mut j = DMatrix::zeros(p, p);
        for k in 0..p {
            if Some(k) == c {
                j[(k, k)] = self.y_sd;
            } else {
                j[(k, k)] = self.y_sd / self.x_sd[k];
                if let Some(ci) = c {
                    j[(ci, k)] = -self.y_sd * self.x_mean[k] / self.x_sd[k];
                }
            }
        }
        (j, c)
    }
}

fn ols(x: &[f64], y: &[f64], p: usize) -> Result<Vec<f64>> {
    let n = y.len();
    let xm = DMatrix::from_row_slice(n, p, x);
    let xtx = xm.transpose() * &xm;
    let xty = xm.transpose() * nalgebra::DVector::from_column_slice(y);
    let chol = xtx
        .cholesky()
        .ok_or_else(|| Error::SingularDesign("X'X is not positive definite".into()))?;
    Ok(chol.solve(&xty).iter().copied().collect())
}

const MAX_PERSISTENCE: f64 = 0.9999;

/// Map `[ln omega, logit(persistence / cap), u1, u2]` to `[omega, alpha,
/// gamma, beta]`. Persistence is split between `alpha/2`, `(alpha+gamma)/2`
/// and `beta` by softmax weights `(u1, u2, 0)`, so `alpha`, `alpha + gamma`
/// and `beta` stay positive and persistence stays below the cap.
fn garch_to_natural(u: &[f64]) -> [f64; 4] {
    let pers = MAX_PERSISTENCE / (1.0 + (-u[1]).exp());
    let m = u[2].max(u[3]).max(0.0);
    let (e1, e2, e3) = ((u[2] - m).exp(), (u[3] - m).exp(), (-m).exp());
    let tot = e1 + e2 + e3;
    let (s1, s2, s3) = (e1 / tot, e2 / tot, e3 / tot);
    [u[0].exp(), 2.0 * pers * s1, 2.0 * pers * (s2 - s1), pers * s3]
}

fn garch_from_natural(g: &[f64; 4]) -> [f64; 4] {
    let [omega, alpha, gamma, beta] = *g;
    let pers = alpha + gamma / 2.0 + beta;
    let r = pers / MAX_PERSISTENCE;
    let (s1, s2, s3) = (alpha / (2.0 * pers), (alpha + gamma) / (2.0 * pers), beta / pers);
    [omega.ln(), (r / (1.0 - r)).ln(), (s1 / s3).ln(), (s2 / s3).ln()]
}

fn nig_from_raw(a: f64, b: f64) -> (f64, f64) {
    let alpha = a.exp();
    (alpha, alpha * b.tanh())
}

/// Maximum likelihood fit from a staged start (OLS mean, variance targeting).
pub fn fit_harx_gjr(design: &QuantDesign, innov: InnovKind) -> Result<HarxGjrFit> {
    let p = design.n_cols();
    let n = design.n_obs();
    if n < 10 * (p + 4) {
        return Err(Error::Length {
            what: "benchmark observations",
            needed: 10 * (p + 4),
            got: n,
        });
    }
    let (st, xs, ys) = Standardizer::new(design)?;
    let b0 = ols(&xs, &ys, p)?;
    let resid_var = (0..n)
        .map(|i| (ys[i] - xs[i * p..(i + 1) * p].iter().zip(&b0).map(|(a, b)| a * b).sum::<f64>()).powi(2))
        .sum::<f64>()
        / n as f64;

    let negll = |theta: &[f64], kind: InnovKind| -> f64 {
        let (omega, alpha, gamma, beta) = (theta[p], theta[p + 1], theta[p + 2], theta[p + 3]);
        if !(omega > 0.0 && alpha >= 0.0 && beta >= 0.0 && alpha + gamma >= 0.0 && alpha + gamma / 2.0 + beta < MAX_PERSISTENCE) {
            return f64::INFINITY;
        }
        let law = match kind {
            InnovKind::Gaussian => None,
            InnovKind::Nig => {
                let (a, b) = nig_from_raw(theta[p + 4], theta[p + 5]);
                match Nig::standardized(a, b) {
                    Ok(l) if a < 1e4 => Some(l),
                    _ => return f64::INFINITY,
                }
            }
        };
        let mut e = Vec::with_capacity(n);
        for i in 0..n {
            let fit: f64 = xs[i * p..(i + 1) * p].iter().zip(&theta[..p]).map(|(a, b)| a * b).sum();
            e.push(ys[i] - fit);
        }
        let mut h = Vec::with_capacity(n);
        h.push(e.iter().map(|v| v * v).sum::<f64>() / n as f64);
        for t in 1..n {
            let neg = if e[t - 1] < 0.0 { gamma } else { 0.0 };
            h.push(omega + (alpha + neg) * e[t - 1] * e[t - 1] + beta * h[t - 1]);
        }
        -loglik_terms(&e, &h, law.as_ref())
    };

    // The optimizer works on unconstrained coordinates; see `garch_to_natural`.
    let natural = |u: &[f64]| -> Vec<f64> {
        let mut t = u.to_vec();
        t[p..p + 4].copy_from_slice(&garch_to_natural(&u[p..p + 4]));
        t
    };
    let mut start: Vec<f64> = b0.clone();
    start.extend(garch_from_natural(&[resid_var * (1.0 - 0.05 - 0.025 - 0.85), 0.05, 0.05, 0.85]));
    let opts = BfgsOptions::default();
    let gauss = optim::bfgs(|u| negll(&natural(u), InnovKind::Gaussian), &start, opts);
    let best = match innov {
        InnovKind::Gaussian => gauss,
        InnovKind::Nig => {
            let mut candidates = Vec::new();
            for a0 in [100f64, 5.0, 1.5] {
                let mut s = gauss.x.clone();
                s.extend([a0.ln(), 0.0]);
                candidates.push(optim::bfgs(|u| negll(&natural(u), InnovKind::Nig), &s, opts));
            }
            candidates
                .into_iter()
                .min_by(|a, b| a.f.total_cmp(&b.f))
                .expect("three candidates")
        }
    };
    if !best.f.is_finite() {
        return Err(Error::Solver("likelihood is not finite at any visited point".into()));
    }
    let converged = best.converged || best.grad_norm < 1e-4 * (1.0 + best.f.abs());
    if !converged {
        return Err(Error::Solver(format!(
            "no convergence after {} iterations (negative log-likelihood {:.6}, gradient {:.3e})",
            best.iterations, best.f, best.grad_norm
        )));
    }

    // Covariance of the mean and GARCH parameters in natural units.
    let k = p + 4;
    let theta = natural(&best.x);
    let hess = optim::hessian(&|t: &[f64]| negll(t, innov), &theta);
    let cov_std = hess.clone().try_inverse();
    let (jmean, cidx) = st.mean_map(&design.names);
    let mut jac = DMatrix::<f64>::zeros(k, hess.nrows());
    jac.view_mut((0, 0), (p, p)).copy_from(&jmean);
    jac[(p, p)] = st.y_sd * st.y_sd;
    for r in 1..4 {
        jac[(p + r, p + r)] = 1.0;
    }
    let se = match cov_std {
        Some(c) if c.iter().all(|v| v.is_finite()) => {
            let cov = &jac * c * jac.transpose();
            (0..k).map(|i| if cov[(i, i)] >= 0.0 { cov[(i, i)].sqrt() } else { f64::NAN }).collect()
        }
        _ => vec![f64::NAN; k],
    };

    let bstd = DMatrix::from_column_slice(p, 1, &theta[..p]);
    let mut mean_coefs: Vec<f64> = (&jmean * bstd).iter().copied().collect();
    if let Some(ci) = cidx {
        mean_coefs[ci] += st.y_mean;
    }
    let innov_params = match innov {
        InnovKind::Gaussian => Innovation::Gaussian,
        InnovKind::Nig => {
            let (alpha, beta) = nig_from_raw(theta[p + 4], theta[p + 5]);
            Innovation::Nig { alpha, beta }
        }
    };
    let mut params = HarxGjrParams {
        names: design.names.clone(),
        mean_coefs,
        omega: theta[p] * st.y_sd * st.y_sd,
        alpha: theta[p + 1],
        gamma: theta[p + 2],
        beta: theta[p + 3],
        innov: innov_params,
        loglik: f64::NAN,
    };
    params.loglik = params.loglik(design)?;
    let near_boundary = params.persistence() > 0.999 || params.alpha < 1e-4 || params.beta < 1e-4;
    Ok(HarxGjrFit {
        params,
        se,
        converged,
        iterations: best.iterations,
        near_boundary,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum Law {
    Gaussian,
    Nig(Arc<NigLaw>),
}

impl Law {
    pub fn for_innovation(innov: Innovation) -> Result<Self> {
        Ok(match innov {
            Innovation::Gaussian => Law::Gaussian,
            Innovation::Nig { alpha, beta } => Law::Nig(Arc::new(NigLaw::new(alpha, beta)?)),
        })
    }
}

/// Location-scale predictive distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictive {
    pub loc: f64,
    pub scale: f64,
    pub law: Law,
}

impl Predictive {
    pub fn log_density(&self, v: f64) -> f64 {
        let z = (v - self.loc) / self.scale;
        let lz = match &self.law {
            Law::Gaussian => -0.5 * (2.0 * std::f64::consts::PI).ln() - 0.5 * z * z,
            Law::Nig(l) => l.logpdf(z),
        };
        lz - self.scale.ln()
    }

    pub fn cdf(&self, v: f64) -> f64 {
        let z = (v - self.loc) / self.scale;
        match &self.law {
            Law::Gaussian => stats::norm_cdf(z),
            Law::Nig(l) => l.cdf(z),
        }
    }

    pub fn quantile(&self, tau: f64) -> Result<f64> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::Domain(format!("tau must lie in (0, 1), got {tau}")));
        }
        let z = match &self.law {
            Law::Gaussian if tau == 0.5 => 0.0,
            Law::Gaussian => stats::norm_quantile(tau),
            Law::Nig(l) => l.quantile(tau)?,
        };
        Ok(self.loc + self.scale * z)
    }
}

/// Predictive distribution for the design row `x_next` with variance `h_next`.
pub fn forecast_density(params: &HarxGjrParams, x_next: &[f64], h_next: f64) -> Result<Predictive> {
    forecast_with_law(params, x_next, h_next, Law::for_innovation(params.innov)?)
}

/// As [`forecast_density`] with a prebuilt (shared) innovation law.
pub fn forecast_with_law(params: &HarxGjrParams, x_next: &[f64], h_next: f64, law: Law) -> Result<Predictive> {
    if !(h_next > 0.0) || !h_next.is_finite() {
        return Err(Error::Recursion(format!("forecast variance {h_next} is not positive")));
    }
    if x_next.len() != params.mean_coefs.len() {
        return Err(Error::Alignment("forecast row has the wrong number of columns".into()));
    }
    if !params.garch_valid() {
        return Err(Error::Recursion("GARCH parameters violate positivity or stationarity".into()));
    }
    Ok(Predictive {
        loc: x_next.iter().zip(&params.mean_coefs).map(|(a, b)| a * b).sum(),
        scale: h_next.sqrt(),
        law,
    })
}

/// Design with the response replaced by its logarithm.
pub fn log_response_variant(design: &QuantDesign) -> Result<QuantDesign> {
    if let Some(v) = design.y.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::Domain(format!("log response needs y > 0, found {v}")));
    }
    let mut out = design.clone();
    for v in out.y.iter_mut() {
        *v = v.ln();
    }
    Ok(out)
}

/// Level-scale view of a predictive distribution fitted to `log y`.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelPredictive(pub Predictive);

impl LevelPredictive {
    pub fn log_density(&self, v: f64) -> f64 {
        if !(v > 0.0) {
            return f64::NEG_INFINITY;
        }
        self.0.log_density(v.ln()) - v.ln()
    }

    pub fn cdf(&self, v: f64) -> f64 {
        if !(v > 0.0) {
            return 0.0;
        }
        self.0.cdf(v.ln())
    }

    pub fn quantile(&self, tau: f64) -> Result<f64> {
        Ok(self.0.quantile(tau)?.exp())
    }
}

/// Exogenous regressors used by [`simulate_harx_gjr`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExogSpec {
    /// AR(1) for vix: mean, persistence, innovation sd.
    pub vix: [f64; 3],
    pub sp500_sd: f64,
    pub jump_prob: f64,
    pub jump_mean: f64,
}

impl Default for ExogSpec {
    fn default() -> Self {
        Self {
            vix: [1.0, 0.9, 0.2],
            sp500_sd: 1.0,
            jump_prob: 0.2,
            jump_mean: 1.0,
        }
    }
}

/// Simulate the model with design columns `[const, lag1, mean5, vix, sp500, jump]`.
pub fn simulate_harx_gjr(params: &HarxGjrParams, n: usize, exog: ExogSpec, seed: u64) -> Result<QuantDesign> {
    if params.mean_coefs.len() != 6 {
        return Err(Error::Config("simulation expects the six standard design columns".into()));
    }
    if !params.garch_valid() {
        return Err(Error::Config("GARCH parameters violate positivity or stationarity".into()));
    }
    let law = match params.innov {
        Innovation::Gaussian => None,
        Innovation::Nig { alpha, beta } => Some(Nig::standardized(alpha, beta)?),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let burn = 500;
    let total = n + 5 + burn;
    let b = &params.mean_coefs;
    let ar = b[1] + b[2];
    let y0 = (b[0] + b[3] * exog.vix[0] + b[5] * exog.jump_prob * exog.jump_mean) / (1.0 - ar).max(0.05);
    let mut y = vec![y0; 5];
    let mut vix = vec![exog.vix[0]; 5];
    let mut sp = vec![0.0; 5];
    let mut jump = vec![0.0; 5];
    let mut h = params.omega / (1.0 - params.persistence());
    let mut e_prev = 0.0;
    for t in 5..total {
        if t > 5 {
            h = params.next_h(e_prev, h);
        }
        let z = match &law {
            None => StandardNormal.sample(&mut rng),
            Some(l) => l.sample(&mut rng),
        };
        let e = h.sqrt() * z;
        let mean5 = y[t - 5..t].iter().sum::<f64>() / 5.0;
        y.push(b[0] + b[1] * y[t - 1] + b[2] * mean5 + b[3] * vix[t - 1] + b[4] * sp[t - 1] + b[5] * jump[t - 1] + e);
        e_prev = e;
        let zv: f64 = StandardNormal.sample(&mut rng);
        vix.push(exog.vix[0] + exog.vix[1] * (vix[t - 1] - exog.vix[0]) + exog.vix[2] * zv);
        let zs: f64 = StandardNormal.sample(&mut rng);
        sp.push(exog.sp500_sd * zs);
        jump.push(if rng.random::<f64>() < exog.jump_prob {
            let x: f64 = Exp1.sample(&mut rng);
            exog.jump_mean * x
        } else {
            0.0
        });
    }
    let keep = burn..total;
    let dates = crate::simulate::business_days(
        chrono::NaiveDate::from_ymd_opt(2000, 1, 3).expect("valid date"),
        total - burn,
    );
    build_design(
        &dates,
        &y[keep.clone()],
        &vix[keep.clone()],
        &sp[keep.clone()],
        &jump[keep],
        DesignOptions::default(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k1_series(x: f64) -> f64 {
        // K1(x) = 1/x + I1(x) ln(x/2) - (x/4) Σ [ψ(k+1) + ψ(k+2)] (x²/4)^k / (k!(k+1)!)
        let euler = 0.5772156649015329;
        let q = x * x / 4.0;
        let (mut i1, mut rest) = (0.0, 0.0);
        let mut fact = 1.0; // k! (k+1)!
        let mut psi1 = -euler; // ψ(k+1)
        let mut pow = 1.0;
        for k in 0..40 {
            let kf = k as f64;
            if k > 0 {
                fact *= kf * (kf + 1.0);
                psi1 += 1.0 / kf;
                pow *= q;
            }
            let psi2 = psi1 + 1.0 / (kf + 1.0);
            i1 += (x / 2.0) * pow / fact;
            rest += (psi1 + psi2) * pow / fact;
        }
        1.0 / x + i1 * (x / 2.0).ln() - x / 4.0 * rest
    }

    fn k1_asymptotic_ln(x: f64) -> f64 {
        // mu = 4: terms (mu-1)(mu-9)...(mu-(2k-1)^2) / (k! (8x)^k)
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..8 {
            let odd = (2 * k - 1) as f64;
            term *= (4.0 - odd * odd) / (k as f64 * 8.0 * x);
            sum += term;
        }
        0.5 * (std::f64::consts::PI / (2.0 * x)).ln() - x + sum.ln()
    }

    #[test]
    fn k1_matches_series_and_asymptotics() {
        assert!((bessel_k1_scaled(1.0) * (-1f64).exp() - 0.6019072301972346).abs() < 1e-14);
        for x in [1e-3, 0.05, 0.3, 1.0, 2.0] {
            let s = k1_series(x);
            let ours = bessel_k1_scaled(x) * (-x).exp();
            assert!((ours / s - 1.0).abs() < 1e-12, "x {x}: {ours} vs {s}");
        }
        for x in [60.0, 200.0, 5000.0] {
            let a = k1_asymptotic_ln(x);
            let ours = ln_bessel_k1(x);
            assert!((ours - a).abs() < 1e-10, "x {x}: {ours} vs {a}");
        }
    }

    fn moments(alpha: f64, beta: f64) -> (f64, f64, f64) {
        let nig = Nig::standardized(alpha, beta).unwrap();
        let (lo, hi, steps) = (-30.0, 30.0, 600_000);
        let h = (hi - lo) / steps as f64;
        let (mut m0, mut m1, mut m2) = (0.0, 0.0, 0.0);
        for k in 0..=steps {
            let z = lo + k as f64 * h;
            let w = if k == 0 || k == steps { 0.5 } else { 1.0 };
            let f = nig.logpdf(z).exp() * w * h;
            m0 += f;
            m1 += f * z;
            m2 += f * z * z;
        }
        (m0, m1, m2)
    }

    #[test]
    fn nig_is_standardized() {
        for (a, b) in [(1.5, 0.0), (1.5, 0.5), (3.0, -1.0), (0.8, 0.3)] {
            let (m0, m1, m2) = moments(a, b);
            assert!((m0 - 1.0).abs() < 1e-6, "mass {m0} for {a},{b}");
            assert!(m1.abs() < 1e-6, "mean {m1}");
            assert!((m2 - 1.0).abs() < 1e-5, "variance {m2}");
        }
    }

    #[test]
    fn nig_symmetry_and_gaussian_limit() {
        for z in [0.3, 1.0, 2.5] {
            assert!((nig_logpdf(z, 2.0, 0.0).unwrap() - nig_logpdf(-z, 2.0, 0.0).unwrap()).abs() < 1e-12);
        }
        let gauss = -0.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((nig_logpdf(0.0, 200.0, 0.0).unwrap() - gauss).abs() < 1e-3);
        assert!(matches!(nig_logpdf(0.0, 1.0, 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn nig_cdf_and_quantile_are_consistent() {
        let law = NigLaw::new(1.5, 0.4).unwrap();
        let mut prev = 0.0;
        for k in -60..=60 {
            let v = k as f64 * 0.1;
            let c = law.cdf(v);
            assert!(c > prev, "cdf must increase at {v}");
            prev = c;
            assert!((law.quantile(c).unwrap() - v).abs() < 1e-8, "v {v}");
        }
        // Independent oracle: empirical CDF of mixture draws.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let draws: Vec<f64> = (0..20_000).map(|_| law.nig.sample(&mut rng)).collect();
        let u: Vec<f64> = draws.iter().map(|d| law.cdf(*d)).collect();
        assert!(stats::ks_uniform(&u).1 > 0.01);
    }

    fn true_params() -> HarxGjrParams {
        HarxGjrParams {
            names: crate::features::DESIGN_COLUMNS.iter().map(|s| s.to_string()).collect(),
            mean_coefs: vec![0.5, 0.4, 0.3, 0.5, -0.3, 0.2],
            omega: 0.05,
            alpha: 0.05,
            gamma: 0.1,
            beta: 0.8,
            innov: Innovation::Gaussian,
            loglik: f64::NAN,
        }
    }

    #[test]
    fn garch_transform_round_trips() {
        for g in [[0.1, 0.05, 0.1, 0.8], [2.0, 0.2, -0.1, 0.3], [1e-3, 0.01, 0.0, 0.98]] {
            let back = garch_to_natural(&garch_from_natural(&g));
            for k in 0..4 {
                assert!((back[k] - g[k]).abs() < 1e-12, "{g:?} -> {back:?}");
            }
        }
        let g = garch_to_natural(&[0.0, 50.0, -40.0, 30.0]);
        assert!(g[1] >= 0.0 && g[1] + g[2] >= 0.0 && g[3] >= 0.0 && g[1] + g[2] / 2.0 + g[3] < 1.0);
    }

    #[test]
    fn constant_variance_is_nested() {
        let mut p = true_params();
        p.alpha = 0.0;
        p.gamma = 0.0;
        p.beta = 0.0;
        let d = simulate_harx_gjr(&true_params(), 200, ExogSpec::default(), 1).unwrap();
        let (_, h) = p.filter(&d).unwrap();
        assert!(h[1..].iter().all(|v| *v == p.omega));
    }

    #[test]
    fn gaussian_fit_recovers_parameters() {
        let truth = true_params();
        let d = simulate_harx_gjr(&truth, 3000, ExogSpec::default(), 2).unwrap();
        let fit = fit_harx_gjr(&d, InnovKind::Gaussian).unwrap();
        let est: Vec<f64> = fit
            .params
            .mean_coefs
            .iter()
            .copied()
            .chain([fit.params.omega, fit.params.alpha, fit.params.gamma, fit.params.beta])
            .collect();
        let tru: Vec<f64> = truth
            .mean_coefs
            .iter()
            .copied()
            .chain([truth.omega, truth.alpha, truth.gamma, truth.beta])
            .collect();
        for i in 0..est.len() {
            assert!(
                (est[i] - tru[i]).abs() < 4.0 * fit.se[i],
                "param {i}: {} vs {} (se {})",
                est[i],
                tru[i],
                fit.se[i]
            );
        }
        let at_truth = HarxGjrParams { loglik: 0.0, ..truth }.loglik(&d).unwrap();
        assert!(fit.params.loglik >= at_truth - 1e-6);
    }

    #[test]
    fn nig_fit_does_not_lose_likelihood() {
        let d = simulate_harx_gjr(&true_params(), 600, ExogSpec::default(), 4).unwrap();
        let g = fit_harx_gjr(&d, InnovKind::Gaussian).unwrap();
        let n = fit_harx_gjr(&d, InnovKind::Nig).unwrap();
        assert!(n.params.loglik >= g.params.loglik - 1e-3);
    }

    #[test]
    fn forecast_density_properties() {
        let p = true_params();
        let row = [1.0, 0.5, 0.5, 1.0, 0.0, 0.0];
        let f = forecast_density(&p, &row, 0.3).unwrap();
        assert_eq!(f.quantile(0.5).unwrap(), f.loc);
        for v in [-1.0, 0.0, 0.7, 1.5, 3.0] {
            assert!((f.quantile(f.cdf(v)).unwrap() - v).abs() < 1e-8);
        }
        assert!(matches!(forecast_density(&p, &row, 0.0), Err(Error::Recursion(_))));
        let nig = HarxGjrParams {
            innov: Innovation::Nig { alpha: 1.2, beta: 0.3 },
            ..p
        };
        let f = forecast_density(&nig, &row, 0.3).unwrap();
        for v in [-1.0, 0.0, 0.7, 1.5, 3.0] {
            assert!((f.quantile(f.cdf(v)).unwrap() - v).abs() < 1e-8);
        }
    }

    #[test]
    fn self_simulated_pits_are_uniform() {
        let truth = true_params();
        let d = simulate_harx_gjr(&truth, 3000, ExogSpec::default(), 5).unwrap();
        let (e, h) = truth.filter(&d).unwrap();
        // Skip the initial variance guess.
        let u: Vec<f64> = (50..d.n_obs())
            .map(|i| {
                let f = forecast_density(&truth, d.row(i), h[i]).unwrap();
                f.cdf(d.y[i])
            })
            .collect();
        assert!(e.len() == d.n_obs());
        assert!(stats::ks_uniform(&u).1 > 0.01);
    }

    #[test]
    fn log_response_and_jacobian() {
        let mut d = simulate_harx_gjr(&true_params(), 100, ExogSpec::default(), 6).unwrap();
        d.y[0] = 1.0;
        for v in d.y.iter_mut() {
            *v = v.abs() + 0.1;
        }
        d.y[0] = 1.0;
        let l = log_response_variant(&d).unwrap();
        assert_eq!(l.y[0], 0.0);
        for (a, b) in l.y.iter().zip(&d.y) {
            assert!((a.exp() - b).abs() < 1e-12 * b);
        }
        let pred = Predictive {
            loc: 0.1,
            scale: 0.5,
            law: Law::Gaussian,
        };
        let lvl = LevelPredictive(pred.clone());
        let v = 1.7f64;
        assert!((lvl.log_density(v) - (pred.log_density(v.ln()) - v.ln())).abs() < 1e-15);
        d.y[3] = -1.0;
        assert!(matches!(log_response_variant(&d), Err(Error::Domain(_))));
    }
}
