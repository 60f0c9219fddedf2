//! Quasi-Newton minimization with finite-difference derivatives.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub converged: bool,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Stop when `|g|_inf <= gtol * (1 + |f|)`.
    pub gtol: f64,
    /// Stop after three consecutive relative decreases below `ftol`.
    pub ftol: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            gtol: 1e-7,
            ftol: 1e-13,
        }
    }
}

fn step_size(x: f64) -> f64 {
    1e-5 * x.abs().max(1.0)
}

/// Central-difference gradient.
pub fn gradient<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64]) -> Vec<f64> {
    let mut xp = x.to_vec();
    let f0 = f(x);
    (0..x.len())
        .map(|i| {
            let h = step_size(x[i]);
            xp[i] = x[i] + h;
            let fp = f(&xp);
            xp[i] = x[i] - h;
            let fm = f(&xp);
            xp[i] = x[i];
            // One-sided difference next to an infinite barrier.
            match (fp.is_finite(), fm.is_finite()) {
                (true, true) => (fp - fm) / (2.0 * h),
                (true, false) => (fp - f0) / h,
                (false, true) => (f0 - fm) / h,
                (false, false) => f64::INFINITY,
            }
        })
        .collect()
}

/// Central-difference Hessian.
pub fn hessian<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64]) -> DMatrix<f64> {
    let k = x.len();
    let mut h = DMatrix::zeros(k, k);
    let f0 = f(x);
    let mut xp = x.to_vec();
    for i in 0..k {
        let hi = 10.0 * step_size(x[i]);
        xp[i] = x[i] + hi;
        let fp = f(&xp);
        xp[i] = x[i] - hi;
        let fm = f(&xp);
        xp[i] = x[i];
        h[(i, i)] = (fp - 2.0 * f0 + fm) / (hi * hi);
        for j in 0..i {
            let hj = 10.0 * step_size(x[j]);
            let mut eval = |si: f64, sj: f64| {
                xp[i] = x[i] + si * hi;
                xp[j] = x[j] + sj * hj;
                let v = f(&xp);
                xp[i] = x[i];
                xp[j] = x[j];
                v
            };
            let v = (eval(1.0, 1.0) - eval(1.0, -1.0) - eval(-1.0, 1.0) + eval(-1.0, -1.0)) / (4.0 * hi * hj);
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    h
}

/// BFGS with a backtracking Armijo line search. Non-finite objective values
/// are treated as +inf so constraints can be expressed by returning `inf`.
pub fn bfgs<F: Fn(&[f64]) -> f64>(f: F, x0: &[f64], opts: BfgsOptions) -> Minimum {
    let k = x0.len();
    let eval = |x: &[f64]| {
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let mut x = DVector::from_column_slice(x0);
    let mut fx = eval(x.as_slice());
    let mut g = DVector::from_vec(gradient(&eval, x.as_slice()));
    let mut hinv = DMatrix::<f64>::identity(k, k);
    let mut small_steps = 0;
    let mut it = 0;
    let mut converged = false;
    while it < opts.max_iter {
        if g.amax() <= opts.gtol * (1.0 + fx.abs()) {
            converged = true;
            break;
        }
        it += 1;
        let mut d = -(&hinv * &g);
        if d.dot(&g) >= 0.0 {
            hinv = DMatrix::identity(k, k);
            d = -g.clone();
        }
        let slope = d.dot(&g);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let xn = &x + t * &d;
            let fn_ = eval(xn.as_slice());
            if fn_ <= fx + 1e-4 * t * slope {
                accepted = Some((xn, fn_));
                break;
            }
            t *= 0.5;
        }
        let Some((xn, fn_)) = accepted else {
            // No descent along the quasi-Newton direction; retry once from steepest descent.
            if hinv != DMatrix::identity(k, k) {
                hinv = DMatrix::identity(k, k);
                continue;
            }
            break;
        };
        let gn = DVector::from_vec(gradient(&eval, xn.as_slice()));
        let s = &xn - &x;
        let yv = &gn - &g;
        let sy = s.dot(&yv);
        if sy > 1e-12 * s.norm() * yv.norm() {
            let rho = 1.0 / sy;
            let i = DMatrix::<f64>::identity(k, k);
            let a = &i - rho * &s * yv.transpose();
            hinv = &a * &hinv * a.transpose() + rho * &s * s.transpose();
        }
        let rel = (fx - fn_).abs() / (1.0 + fx.abs());
        x = xn;
        fx = fn_;
        g = gn;
        if rel < opts.ftol {
            small_steps += 1;
            if small_steps >= 3 {
                converged = true;
                break;
            }
        } else {
            small_steps = 0;
        }
    }
    Minimum {
        grad_norm: g.amax(),
        x: x.iter().copied().collect(),
        f: fx,
        iterations: it,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_rosenbrock() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let m = bfgs(f, &[-1.2, 1.0], BfgsOptions::default());
        assert!(m.converged);
        assert!((m.x[0] - 1.0).abs() < 1e-4 && (m.x[1] - 1.0).abs() < 1e-4, "{m:?}");
    }

    #[test]
    fn respects_infinite_barriers() {
        let f = |x: &[f64]| if x[0] <= 0.0 { f64::INFINITY } else { x[0] - x[0].ln() };
        let m = bfgs(f, &[5.0], BfgsOptions::default());
        assert!((m.x[0] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn hessian_of_quadratic() {
        let f = |x: &[f64]| 3.0 * x[0] * x[0] + 2.0 * x[0] * x[1] + x[1] * x[1];
        let h = hessian(&f, &[0.3, -0.2]);
        assert!((h[(0, 0)] - 6.0).abs() < 1e-5);
        assert!((h[(0, 1)] - 2.0).abs() < 1e-5);
        assert!((h[(1, 1)] - 2.0).abs() < 1e-5);
    }
}
