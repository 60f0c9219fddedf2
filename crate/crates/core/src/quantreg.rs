//! Linear quantile regression.
//!
//! Fits minimize the pinball sum with a Frisch–Newton interior point method
//! on the dual LP, then pivot to an exact optimal vertex. Among optimal
//! vertices the one with the smallest mean fitted value is returned, which
//! reproduces the lower empirical quantile for intercept-only designs.
//! Inference is by xy-pair (or moving-block) bootstrap.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::QuantDesign;
use crate::stats;

pub fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("tau must lie in (0, 1), got {tau}")))
    }
}

/// Check loss `u (tau - 1[u < 0])`.
pub fn pinball(u: f64, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    Ok(rho(u, tau))
}

#[inline]
fn rho(u: f64, tau: f64) -> f64 {
    if u >= 0.0 {
        u * tau
    } else {
        u * (tau - 1.0)
    }
}

/// `Σ ρ_τ(y_i - x_i'β)`.
pub fn objective(design: &QuantDesign, beta: &[f64], tau: f64) -> f64 {
    objective_raw(&design.x, &design.y, beta, tau)
}

fn objective_raw(x: &[f64], y: &[f64], beta: &[f64], tau: f64) -> f64 {
    let p = beta.len();
    y.iter()
        .enumerate()
        .map(|(i, yi)| rho(yi - dot(&x[i * p..(i + 1) * p], beta), tau))
        .sum()
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QrFit {
    pub tau: f64,
    pub beta: Vec<f64>,
    pub objective: f64,
    pub n_obs: usize,
    pub column_names: Vec<String>,
    pub ipm_iterations: usize,
    pub pivots: usize,
    /// More than one coefficient vector attains the minimum.
    pub degenerate: bool,
}

impl QrFit {
    pub fn predict(&self, row: &[f64]) -> f64 {
        dot(row, &self.beta)
    }

    pub fn coef(&self, name: &str) -> Option<f64> {
        self.column_names
            .iter()
            .position(|n| n == name)
            .map(|j| self.beta[j])
    }
}

/// Fit the `tau` conditional quantile.
pub fn fit(design: &QuantDesign, tau: f64) -> Result<QrFit> {
    check_tau(tau)?;
    let p = design.n_cols();
    let n = design.n_obs();
    if n <= 2 * p {
        return Err(Error::Length {
            what: "quantile regression observations",
            needed: 2 * p + 1,
            got: n,
        });
    }
    let sol = solve(&design.x, &design.y, p, tau)?;
    Ok(QrFit {
        tau,
        objective: objective_raw(&design.x, &design.y, &sol.beta, tau),
        beta: sol.beta,
        n_obs: n,
        column_names: design.names.clone(),
        ipm_iterations: sol.iterations,
        pivots: sol.pivots,
        degenerate: sol.degenerate,
    })
}

struct Solution {
    beta: Vec<f64>,
    iterations: usize,
    pivots: usize,
    degenerate: bool,
}

fn solve(x: &[f64], y: &[f64], p: usize, tau: f64) -> Result<Solution> {
    if y.iter().chain(x).any(|v| !v.is_finite()) {
        return Err(Error::Domain("design contains non-finite values".into()));
    }
    let (start, iterations) = match interior_point(x, y, p, tau) {
        Ok((beta, it)) => (beta, it),
        Err(Error::SingularDesign(msg)) => return Err(Error::SingularDesign(msg)),
        Err(_) => (least_squares(x, y, p)?, 0),
    };
    let n = y.len();
    let resid: Vec<f64> = (0..n).map(|i| y[i] - dot(&x[i * p..(i + 1) * p], &start)).collect();
    let basis = initial_basis(x, p, &resid)?;
    let (beta, pivots, degenerate) = simplex(x, y, p, tau, basis)?;
    Ok(Solution {
        beta,
        iterations,
        pivots,
        degenerate,
    })
}

fn gram(x: &[f64], p: usize, weights: Option<&[f64]>) -> DMatrix<f64> {
    let n = x.len() / p;
    let mut m = DMatrix::<f64>::zeros(p, p);
    for i in 0..n {
        let row = &x[i * p..(i + 1) * p];
        let w = weights.map_or(1.0, |w| w[i]);
        for a in 0..p {
            let ra = row[a] * w;
            for b in 0..=a {
                m[(a, b)] += ra * row[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            m[(b, a)] = m[(a, b)];
        }
    }
    m
}

fn xt_times(x: &[f64], p: usize, v: impl Fn(usize) -> f64) -> DVector<f64> {
    let n = x.len() / p;
    let mut out = DVector::<f64>::zeros(p);
    for i in 0..n {
        let vi = v(i);
        for a in 0..p {
            out[a] += x[i * p + a] * vi;
        }
    }
    out
}

fn least_squares(x: &[f64], y: &[f64], p: usize) -> Result<Vec<f64>> {
    let g = gram(x, p, None);
    check_rank(&g)?;
    let rhs = xt_times(x, p, |i| y[i]);
    let chol = g
        .cholesky()
        .ok_or_else(|| Error::SingularDesign("X'X is not positive definite".into()))?;
    Ok(chol.solve(&rhs).iter().copied().collect())
}

fn check_rank(g: &DMatrix<f64>) -> Result<()> {
    // Scale to unit diagonal, then inspect the smallest eigenvalue.
    let p = g.nrows();
    let d: Vec<f64> = (0..p).map(|a| g[(a, a)].sqrt()).collect();
    if d.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::SingularDesign("design has an all-zero column".into()));
    }
    let scaled = DMatrix::from_fn(p, p, |a, b| g[(a, b)] / (d[a] * d[b]));
    let eig = scaled.symmetric_eigenvalues();
    let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
    if min < 1e-12 {
        return Err(Error::SingularDesign(format!(
            "design is rank deficient (smallest scaled eigenvalue {min:.3e})"
        )));
    }
    Ok(())
}

fn bound(v: &[f64], dv: &[f64]) -> f64 {
    v.iter()
        .zip(dv)
        .filter(|(_, d)| **d < 0.0)
        .map(|(a, d)| -a / d)
        .fold(1e20, f64::min)
}

/// Frisch–Newton predictor-corrector on
/// `max { y'd : X'd = (1-τ)X'1, 0 ≤ d ≤ 1 }` written as a minimization.
fn interior_point(x: &[f64], y: &[f64], p: usize, tau: f64) -> Result<(Vec<f64>, usize)> {
    const BETA: f64 = 0.99995;
    const MAX_IT: usize = 100;
    let n = y.len();
    let nf = n as f64;
    let g = gram(x, p, None);
    check_rank(&g)?;
    let c: Vec<f64> = y.iter().map(|v| -v).collect();
    let b = xt_times(x, p, |_| 1.0 - tau);
    let mut xp = vec![1.0 - tau; n];
    let mut s: Vec<f64> = xp.iter().map(|v| 1.0 - v).collect();
    let chol = g
        .clone()
        .cholesky()
        .ok_or_else(|| Error::SingularDesign("X'X is not positive definite".into()))?;
    let mut yd = chol.solve(&xt_times(x, p, |i| c[i]));
    let row = |i: usize| &x[i * p..(i + 1) * p];
    let xdot = |i: usize, v: &DVector<f64>| -> f64 { row(i).iter().zip(v.iter()).map(|(a, b)| a * b).sum() };
    let mut r: Vec<f64> = (0..n).map(|i| c[i] - xdot(i, &yd)).collect();
    for v in r.iter_mut() {
        if *v == 0.0 {
            *v = 0.001;
        }
    }
    let mut z: Vec<f64> = r.iter().map(|v| v.max(0.0)).collect();
    let mut w: Vec<f64> = z.iter().zip(&r).map(|(a, b)| a - b).collect();
    let scale = y.iter().map(|v| v.abs()).sum::<f64>().max(f64::MIN_POSITIVE);
    let gap_of = |xp: &[f64], yd: &DVector<f64>, w: &[f64]| -> f64 {
        dot(&c, xp) - yd.dot(&b) + w.iter().sum::<f64>()
    };
    let mut gap = gap_of(&xp, &yd, &w);
    let mut it = 0;
    let (mut dx, mut ds, mut dz, mut dw) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut q = vec![0.0; n];
    while gap > 1e-11 * scale && it < MAX_IT {
        it += 1;
        for i in 0..n {
            q[i] = 1.0 / (z[i] / xp[i] + w[i] / s[i]);
            r[i] = z[i] - w[i];
        }
        let m = gram(x, p, Some(&q));
        let chol = m
            .cholesky()
            .ok_or_else(|| Error::Solver(format!("normal equations lost definiteness at iteration {it}")))?;
        let mut dy = chol.solve(&xt_times(x, p, |i| q[i] * r[i]));
        for i in 0..n {
            dx[i] = q[i] * (xdot(i, &dy) - r[i]);
            ds[i] = -dx[i];
            dz[i] = -z[i] * (dx[i] / xp[i] + 1.0);
            dw[i] = -w[i] * (ds[i] / s[i] + 1.0);
        }
        let mut fp = (BETA * bound(&xp, &dx).min(bound(&s, &ds))).min(1.0);
        let mut fd = (BETA * bound(&w, &dw).min(bound(&z, &dz))).min(1.0);
        if fp.min(fd) < 1.0 {
            let mu0: f64 = (0..n).map(|i| z[i] * xp[i] + w[i] * s[i]).sum();
            let g: f64 = (0..n)
                .map(|i| {
                    (z[i] + fd * dz[i]) * (xp[i] + fp * dx[i]) + (w[i] + fd * dw[i]) * (s[i] + fp * ds[i])
                })
                .sum();
            let mu = mu0 * (g / mu0).powi(3) / (2.0 * nf);
            let dxdz: Vec<f64> = (0..n).map(|i| dx[i] * dz[i]).collect();
            let dsdw: Vec<f64> = (0..n).map(|i| ds[i] * dw[i]).collect();
            let xi: Vec<f64> = (0..n).map(|i| mu * (1.0 / xp[i] - 1.0 / s[i])).collect();
            dy = chol.solve(&xt_times(x, p, |i| q[i] * (r[i] + dxdz[i] - dsdw[i] - xi[i])));
            for i in 0..n {
                dx[i] = q[i] * (xdot(i, &dy) + xi[i] - r[i] - dxdz[i] + dsdw[i]);
                ds[i] = -dx[i];
                dz[i] = mu / xp[i] - z[i] - z[i] * dx[i] / xp[i] - dxdz[i];
                dw[i] = mu / s[i] - w[i] - w[i] * ds[i] / s[i] - dsdw[i];
            }
            fp = (BETA * bound(&xp, &dx).min(bound(&s, &ds))).min(1.0);
            fd = (BETA * bound(&w, &dw).min(bound(&z, &dz))).min(1.0);
        }
        for i in 0..n {
            xp[i] += fp * dx[i];
            s[i] += fp * ds[i];
            w[i] += fd * dw[i];
            z[i] += fd * dz[i];
        }
        yd += fd * dy;
        gap = gap_of(&xp, &yd, &w);
        if !gap.is_finite() {
            return Err(Error::Solver(format!("duality gap diverged at iteration {it}")));
        }
    }
    Ok((yd.iter().map(|v| -v).collect(), it))
}

/// Rows with the smallest absolute residuals that span the column space.
fn initial_basis(x: &[f64], p: usize, resid: &[f64]) -> Result<Vec<usize>> {
    let n = resid.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| resid[a].abs().total_cmp(&resid[b].abs()).then(a.cmp(&b)));
    let mut basis = Vec::with_capacity(p);
    let mut ortho: Vec<Vec<f64>> = Vec::with_capacity(p);
    for i in order {
        let row = &x[i * p..(i + 1) * p];
        let norm0 = dot(row, row).sqrt();
        if norm0 == 0.0 {
            continue;
        }
        let mut v: Vec<f64> = row.to_vec();
        for u in &ortho {
            let c = dot(&v, u);
            for (a, b) in v.iter_mut().zip(u) {
                *a -= c * b;
            }
        }
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-8 * norm0 {
            v.iter_mut().for_each(|a| *a /= norm);
            ortho.push(v);
            basis.push(i);
            if basis.len() == p {
                return Ok(basis);
            }
        }
    }
    Err(Error::SingularDesign("rows do not span the column space".into()))
}

fn basis_inverse(x: &[f64], p: usize, basis: &[usize]) -> Option<DMatrix<f64>> {
    let b = DMatrix::from_fn(p, p, |a, c| x[basis[a] * p + c]);
    b.try_inverse()
}

/// Vertex-to-vertex descent on the lexicographic objective
/// (pinball sum, then mean fitted value).
fn simplex(x: &[f64], y: &[f64], p: usize, tau: f64, mut basis: Vec<usize>) -> Result<(Vec<f64>, usize, bool)> {
    let n = y.len();
    let max_pivots = 50 * n + 1000;
    let ymax = y.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let ztol = 1e-12 * ymax;
    let mut in_basis = vec![false; n];
    for &h in &basis {
        in_basis[h] = true;
    }
    let mut a = vec![0.0; n * p];
    let mut pivots = 0;
    loop {
        let binv = basis_inverse(x, p, &basis)
            .ok_or_else(|| Error::Solver("basis matrix became singular".into()))?;
        let yb = DVector::from_fn(p, |k, _| y[basis[k]]);
        let beta: Vec<f64> = (&binv * yb).iter().copied().collect();
        let mut r: Vec<f64> = (0..n).map(|i| y[i] - dot(&x[i * p..(i + 1) * p], &beta)).collect();
        for (i, ri) in r.iter_mut().enumerate() {
            if in_basis[i] || ri.abs() <= ztol {
                *ri = 0.0;
            }
        }
        // a[i, j] = x_i' B^{-1} e_j
        for i in 0..n {
            let row = &x[i * p..(i + 1) * p];
            for j in 0..p {
                a[i * p + j] = (0..p).map(|k| row[k] * binv[(k, j)]).sum();
            }
        }
        let mut best: Option<(usize, f64, f64, f64)> = None; // (j, sign, primary, secondary)
        let mut degenerate = false;
        for j in 0..p {
            let mut abs_sum = 0.0;
            let mut base = 0.0;
            let mut secondary = 0.0;
            let mut zero_rows = Vec::new();
            for i in 0..n {
                if in_basis[i] {
                    continue;
                }
                let ai = a[i * p + j];
                abs_sum += ai.abs();
                secondary += ai;
                // residual rate for sign +1 is -ai
                if r[i] > 0.0 {
                    base += -ai * tau;
                } else if r[i] < 0.0 {
                    base += -ai * (tau - 1.0);
                } else if ai != 0.0 {
                    zero_rows.push(ai);
                }
            }
            secondary += 1.0; // the basis row itself: a = e_j
            secondary /= n as f64;
            let tol = 1e-10 * (1.0 + abs_sum);
            for sign in [1.0, -1.0] {
                let mut slope = sign * base + if sign > 0.0 { 1.0 - tau } else { tau };
                for &ai in &zero_rows {
                    let rate = -sign * ai;
                    slope += if rate > 0.0 { rate * tau } else { rate * (tau - 1.0) };
                }
                let sec = sign * secondary;
                if slope.abs() <= tol {
                    degenerate = true;
                }
                let improving = slope < -tol || (slope.abs() <= tol && sec < -1e-12 * (1.0 + abs_sum / n as f64));
                if improving {
                    let better = match best {
                        None => true,
                        Some((_, _, bp, bs)) => slope < bp - tol || ((slope - bp).abs() <= tol && sec < bs),
                    };
                    if better {
                        best = Some((j, sign, slope, sec));
                    }
                }
            }
        }
        let Some((j, sign, slope0, _)) = best else {
            return Ok((beta, pivots, degenerate));
        };
        if pivots >= max_pivots {
            return Err(Error::Solver(format!(
                "no optimal vertex after {pivots} pivots (objective {:.6e})",
                objective_raw(x, y, &beta, tau)
            )));
        }
        // Breakpoints where a nonbasic residual crosses zero.
        let mut bps: Vec<(f64, usize, f64)> = Vec::new();
        for i in 0..n {
            if in_basis[i] || r[i] == 0.0 {
                continue;
            }
            let ai = sign * a[i * p + j];
            if ai == 0.0 {
                continue;
            }
            let t = r[i] / ai;
            if t > 0.0 {
                bps.push((t, i, ai.abs()));
            }
        }
        bps.sort_by(|u, v| u.0.total_cmp(&v.0).then(u.1.cmp(&v.1)));
        let mut slope = slope0;
        let mut entering = None;
        for &(_, i, jump) in &bps {
            slope += jump;
            if slope >= 0.0 {
                entering = Some(i);
                break;
            }
        }
        let Some(i) = entering else {
            return Err(Error::Solver("objective unbounded along a pivot direction".into()));
        };
        in_basis[basis[j]] = false;
        basis[j] = i;
        in_basis[i] = true;
        pivots += 1;
    }
}

/// Resampling scheme for bootstrap inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Resample {
    #[default]
    Pairs,
    MovingBlock { block: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(deny_unknown_fields)]
pub struct BootOptions {
    pub b: usize,
    pub seed: u64,
    #[serde(default)]
    pub scheme: Resample,
}

impl BootOptions {
    pub fn new(b: usize, seed: u64) -> Self {
        Self {
            b,
            seed,
            scheme: Resample::Pairs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BootReport {
    pub tau: f64,
    pub estimate: Vec<f64>,
    pub se: Vec<f64>,
    pub p_values: Vec<f64>,
    pub b: usize,
    pub seed: u64,
    pub failures: usize,
    /// Successful replicate coefficient vectors.
    pub draws: Vec<Vec<f64>>,
}

impl BootReport {
    /// Bootstrap covariance of the coefficients with indices `idx`.
    pub fn covariance(&self, idx: &[usize]) -> DMatrix<f64> {
        covariance_of(&self.draws, idx)
    }
}

fn covariance_of(draws: &[Vec<f64>], idx: &[usize]) -> DMatrix<f64> {
    let k = idx.len();
    let b = draws.len() as f64;
    let means: Vec<f64> = idx.iter().map(|&j| draws.iter().map(|d| d[j]).sum::<f64>() / b).collect();
    let mut cov = DMatrix::zeros(k, k);
    for d in draws {
        for u in 0..k {
            for v in 0..=u {
                cov[(u, v)] += (d[idx[u]] - means[u]) * (d[idx[v]] - means[v]);
            }
        }
    }
    for u in 0..k {
        for v in 0..=u {
            cov[(u, v)] /= b - 1.0;
            cov[(v, u)] = cov[(u, v)];
        }
    }
    cov
}

/// Joint bootstrap: every replicate fits all taus on the same resample.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JointBoot {
    pub taus: Vec<f64>,
    pub fits: Vec<QrFit>,
    pub b: usize,
    pub seed: u64,
    pub failures: usize,
    /// `draws[rep]` is the stacked coefficient vector over taus.
    pub draws: Vec<Vec<f64>>,
}

impl JointBoot {
    pub fn report(&self, k: usize) -> BootReport {
        let p = self.fits[k].beta.len();
        let draws: Vec<Vec<f64>> = self.draws.iter().map(|d| d[k * p..(k + 1) * p].to_vec()).collect();
        make_report(&self.fits[k], draws, self.b, self.seed, self.failures)
    }
}

fn make_report(fit: &QrFit, draws: Vec<Vec<f64>>, b: usize, seed: u64, failures: usize) -> BootReport {
    let p = fit.beta.len();
    let idx: Vec<usize> = (0..p).collect();
    let cov = covariance_of(&draws, &idx);
    let se: Vec<f64> = (0..p).map(|j| cov[(j, j)].max(0.0).sqrt()).collect();
    let p_values = fit
        .beta
        .iter()
        .zip(&se)
        .map(|(b, s)| {
            if *s > 0.0 {
                stats::two_sided_normal_p(b / s)
            } else if *b == 0.0 {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    BootReport {
        tau: fit.tau,
        estimate: fit.beta.clone(),
        se,
        p_values,
        b,
        seed,
        failures,
        draws,
    }
}

fn resample_indices(n: usize, scheme: Resample, rng: &mut ChaCha8Rng) -> Vec<usize> {
    match scheme {
        Resample::Pairs => (0..n).map(|_| rng.random_range(0..n)).collect(),
        Resample::MovingBlock { block } => {
            let mut idx = Vec::with_capacity(n + block);
            while idx.len() < n {
                let start = rng.random_range(0..=n - block);
                idx.extend(start..start + block);
            }
            idx.truncate(n);
            idx
        }
    }
}

/// Bootstrap standard errors and normal p-values at one tau.
pub fn bootstrap(design: &QuantDesign, tau: f64, opts: BootOptions) -> Result<BootReport> {
    Ok(bootstrap_joint(design, &[tau], opts)?.report(0))
}

pub fn bootstrap_joint(design: &QuantDesign, taus: &[f64], opts: BootOptions) -> Result<JointBoot> {
    if opts.b < 200 {
        return Err(Error::Precondition(format!(
            "bootstrap needs at least 200 replications, got {}",
            opts.b
        )));
    }
    if taus.is_empty() {
        return Err(Error::Precondition("bootstrap needs at least one tau".into()));
    }
    let n = design.n_obs();
    if let Resample::MovingBlock { block } = opts.scheme {
        if block == 0 || block > n {
            return Err(Error::Config(format!("block length {block} must be in 1..={n}")));
        }
    }
    let fits: Vec<QrFit> = taus.iter().map(|&t| fit(design, t)).collect::<Result<_>>()?;
    let p = design.n_cols();
    let results: Vec<Option<Vec<f64>>> = (0..opts.b)
        .into_par_iter()
        .map(|rep| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(rep as u64);
            let idx = resample_indices(n, opts.scheme, &mut rng);
            let mut x = Vec::with_capacity(n * p);
            let mut y = Vec::with_capacity(n);
            for &i in &idx {
                x.extend_from_slice(design.row(i));
                y.push(design.y[i]);
            }
            let mut stacked = Vec::with_capacity(taus.len() * p);
            for &t in taus {
                stacked.extend(solve(&x, &y, p, t).ok()?.beta);
            }
            Some(stacked)
        })
        .collect();
    let failures = results.iter().filter(|r| r.is_none()).count();
    if failures * 10 > opts.b {
        return Err(Error::Bootstrap(format!(
            "{failures} of {} bootstrap refits failed",
            opts.b
        )));
    }
    Ok(JointBoot {
        taus: taus.to_vec(),
        fits,
        b: opts.b,
        seed: opts.seed,
        failures,
        draws: results.into_iter().flatten().collect(),
    })
}

/// `1 - RASW/TASW`, with TASW measured around the unconditional lower
/// empirical quantile.
pub fn pseudo_r1(fit: &QrFit, y: &[f64], tau: f64) -> Result<f64> {
    check_tau(tau)?;
    let q = stats::lower_quantile(y, tau);
    let tasw: f64 = y.iter().map(|v| rho(v - q, tau)).sum();
    if !(tasw > 0.0) {
        return Err(Error::Degenerate("total absolute sum of weighted deviations is zero".into()));
    }
    Ok((1.0 - fit.objective / tasw).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WaldResult {
    pub stat: f64,
    pub df: f64,
    pub p_value: f64,
}

fn quad_form_inv(v: &DVector<f64>, cov: DMatrix<f64>) -> Result<f64> {
    let k = v.len();
    let scale: f64 = (0..k).map(|i| cov[(i, i)]).fold(0.0, f64::max);
    if !(scale > 0.0) {
        return Err(Error::Covariance("bootstrap covariance is zero".into()));
    }
    let min_eig = (&cov / scale)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if min_eig < 1e-12 {
        return Err(Error::Covariance(format!(
            "bootstrap covariance is singular (scaled eigenvalue {min_eig:.3e})"
        )));
    }
    let chol = cov
        .cholesky()
        .ok_or_else(|| Error::Covariance("bootstrap covariance is not positive definite".into()))?;
    Ok(v.dot(&chol.solve(v)))
}

/// Wald test that the named coefficients are jointly zero.
pub fn xi_w_test(fit: &QrFit, boot: &BootReport, restriction: &[&str]) -> Result<WaldResult> {
    if restriction.is_empty() {
        return Err(Error::Precondition("restriction set is empty".into()));
    }
    let mut idx = Vec::with_capacity(restriction.len());
    for name in restriction {
        let j = fit
            .column_names
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::Precondition(format!("unknown coefficient `{name}`")))?;
        if fit.column_names[j] == "const" {
            return Err(Error::Precondition("the intercept cannot be restricted".into()));
        }
        if idx.contains(&j) {
            return Err(Error::Precondition(format!("coefficient `{name}` listed twice")));
        }
        idx.push(j);
    }
    let v = DVector::from_iterator(idx.len(), idx.iter().map(|&j| fit.beta[j]));
    let stat = quad_form_inv(&v, boot.covariance(&idx))?;
    let df = idx.len() as f64;
    Ok(WaldResult {
        stat,
        df,
        p_value: stats::chi2_sf(stat, df),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlopeEqualityResult {
    /// F statistic: Wald statistic divided by its numerator df.
    pub stat: f64,
    pub df1: f64,
    pub df2: f64,
    pub p_value: f64,
    /// Per-slope tests of equality across taus: (name, F, p).
    pub per_coefficient: Vec<(String, f64, f64)>,
}

/// Test that all non-intercept slopes are equal across the taus of `joint`.
pub fn slope_equality_test(joint: &JointBoot) -> Result<SlopeEqualityResult> {
    let q = joint.fits.len();
    if q < 2 {
        return Err(Error::Precondition("slope equality needs at least two taus".into()));
    }
    let names = &joint.fits[0].column_names;
    let p = names.len();
    let slopes: Vec<usize> = (0..p).filter(|&j| names[j] != "const").collect();
    if slopes.is_empty() {
        return Err(Error::Precondition("design has no slope coefficients".into()));
    }
    let n = joint.fits[0].n_obs as f64;
    let df2 = n - (q * p) as f64;
    let all_idx: Vec<usize> = (0..q * p).collect();
    let cov = covariance_of(&joint.draws, &all_idx);
    let stacked: Vec<f64> = joint.fits.iter().flat_map(|f| f.beta.iter().copied()).collect();

    let test = |coefs: &[usize]| -> Result<(f64, f64, f64)> {
        // Rows: beta_j(tau_l) - beta_j(tau_1), l = 2..q.
        let rows = coefs.len() * (q - 1);
        let mut r = DMatrix::<f64>::zeros(rows, q * p);
        let mut k = 0;
        for &j in coefs {
            for l in 1..q {
                r[(k, l * p + j)] = 1.0;
                r[(k, j)] = -1.0;
                k += 1;
            }
        }
        let diff = &r * DVector::from_column_slice(&stacked);
        let w = quad_form_inv(&diff, &r * &cov * r.transpose())?;
        let df1 = rows as f64;
        let f = w / df1;
        Ok((f, df1, stats::f_sf(f, df1, df2)))
    };
    let (stat, df1, p_value) = test(&slopes)?;
    let per_coefficient = slopes
        .iter()
        .map(|&j| test(&[j]).map(|(f, _, pv)| (names[j].clone(), f, pv)))
        .collect::<Result<_>>()?;
    Ok(SlopeEqualityResult {
        stat,
        df1,
        df2,
        p_value,
        per_coefficient,
    })
}

pub fn window_count(n_obs: usize, window: usize, step: usize) -> usize {
    if window == 0 || step == 0 || window > n_obs {
        0
    } else {
        (n_obs - window) / step + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RollWindow {
    pub start: usize,
    pub end_date: chrono::NaiveDate,
    /// One entry per tau; failures keep their error message.
    pub fits: Vec<std::result::Result<QrFit, String>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RollResult {
    pub taus: Vec<f64>,
    pub window: usize,
    pub step: usize,
    pub windows: Vec<RollWindow>,
}

impl RollResult {
    pub fn failures(&self) -> usize {
        self.windows
            .iter()
            .map(|w| w.fits.iter().filter(|f| f.is_err()).count())
            .sum()
    }
}

/// Fit every tau on windows `[k*step, k*step + window)`.
pub fn roll(design: &QuantDesign, taus: &[f64], window: usize, step: usize) -> Result<RollResult> {
    if step == 0 {
        return Err(Error::Precondition("roll step must be at least 1".into()));
    }
    if window == 0 || window > design.n_obs() {
        return Err(Error::Precondition(format!(
            "roll window {window} must be in 1..={}",
            design.n_obs()
        )));
    }
    for &t in taus {
        check_tau(t)?;
    }
    let count = window_count(design.n_obs(), window, step);
    let windows = (0..count)
        .into_par_iter()
        .map(|k| {
            let start = k * step;
            let sub = design.slice(start, start + window);
            let fits = taus
                .iter()
                .map(|&t| fit(&sub, t).map_err(|e| format!("window ending {}: {e}", sub.dates[window - 1])))
                .collect();
            RollWindow {
                start,
                end_date: sub.dates[window - 1],
                fits,
            }
        })
        .collect();
    Ok(RollResult {
        taus: taus.to_vec(),
        window,
        step,
        windows,
    })
}

/// One coefficient row `window_end,tau,coef_name,estimate,se,p_value`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefRow {
    pub window_end: String,
    pub tau: f64,
    pub coef_name: String,
    pub estimate: f64,
    pub se: f64,
    pub p_value: f64,
}

pub fn coef_rows(window_end: &str, fit: &QrFit, boot: Option<&BootReport>) -> Vec<CoefRow> {
    fit.column_names
        .iter()
        .enumerate()
        .map(|(j, name)| CoefRow {
            window_end: window_end.to_string(),
            tau: fit.tau,
            coef_name: name.clone(),
            estimate: fit.beta[j],
            se: boot.map_or(f64::NAN, |b| b.se[j]),
            p_value: boot.map_or(f64::NAN, |b| b.p_values[j]),
        })
        .collect()
}

pub fn roll_coef_rows(roll: &RollResult) -> Vec<CoefRow> {
    let mut out = Vec::new();
    for w in &roll.windows {
        for f in w.fits.iter().flatten() {
            out.extend(coef_rows(&w.end_date.to_string(), f, None));
        }
    }
    out
}

pub fn write_coefs<W: Write>(writer: W, rows: &[CoefRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["window_end", "tau", "coef_name", "estimate", "se", "p_value"])?;
    for r in rows {
        w.write_record([
            r.window_end.clone(),
            r.tau.to_string(),
            r.coef_name.clone(),
            r.estimate.to_string(),
            r.se.to_string(),
            r.p_value.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Parse the coefficient CSV written by [`write_coefs`].
pub fn read_coefs<R: std::io::Read>(reader: R) -> Result<Vec<CoefRow>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        let line = idx + 2;
        let rec = rec.map_err(|e| Error::Parse { line, msg: e.to_string() })?;
        if rec.len() != 6 {
            return Err(Error::Parse {
                line,
                msg: format!("expected 6 fields, found {}", rec.len()),
            });
        }
        let num = |j: usize| -> Result<f64> {
            rec[j].parse().map_err(|_| Error::Parse {
                line,
                msg: format!("bad number `{}`", &rec[j]),
            })
        };
        out.push(CoefRow {
            window_end: rec[0].to_string(),
            tau: num(1)?,
            coef_name: rec[2].to_string(),
            estimate: num(3)?,
            se: num(4)?,
            p_value: num(5)?,
        });
    }
    Ok(out)
}

/// One test row `test,stat,df,p_value`.
#[derive(Debug, Clone, PartialEq)]
pub struct TestRow {
    pub test: String,
    pub stat: f64,
    pub df: String,
    pub p_value: f64,
}

pub fn write_tests<W: Write>(writer: W, rows: &[TestRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["test", "stat", "df", "p_value"])?;
    for r in rows {
        w.write_record([
            r.test.clone(),
            r.stat.to_string(),
            r.df.clone(),
            r.p_value.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
