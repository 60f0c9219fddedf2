//! Monte Carlo moments of the discretely observed Brownian range.
//!
//! `lambda[r-1]` is `E[R^r]` where `R` is the high-low range of a standard
//! Brownian motion on `[0, 1]` observed on an `m`-step grid (`m + 1` points).
//! The noise-adjusted moments `lambda_tilde` are `E[|R~ - 2ρ|^r]`, where `R~`
//! is the range of the same grid after adding iid `N(0, ρ²)` noise to every
//! point and `ρ` is the noise scale relative to the subinterval diffusion
//! scale `σ√Δ`.

use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};

const CHUNK_PATHS: usize = 8192;

/// Default grid of noise ratios for per-day interpolation of `lambda_tilde`.
pub fn default_omega_grid() -> Vec<f64> {
    (0..=40).map(|i| i as f64 / 20.0).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TildeEntry {
    pub omega_ratio: f64,
    /// `E|R~ - 2ρ|` and `E|R~ - 2ρ|²`.
    pub lambda_tilde: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct LambdaTable {
    pub m: usize,
    /// `E[R^r]` for `r = 1..=4`.
    pub lambda: [f64; 4],
    /// Sorted by `omega_ratio`; a single entry means a fixed noise ratio.
    pub tilde: Vec<TildeEntry>,
    pub n_paths: usize,
    pub seed: u64,
}

/// Simulate the table for one noise ratio.
pub fn lambda_table(m: usize, n_paths: usize, seed: u64, omega_ratio: f64) -> Result<LambdaTable> {
    lambda_grid(m, n_paths, seed, &[omega_ratio])
}

/// Simulate the table for a grid of noise ratios with common random numbers.
pub fn lambda_grid(m: usize, n_paths: usize, seed: u64, omega_ratios: &[f64]) -> Result<LambdaTable> {
    if m == 0 || n_paths == 0 {
        return Err(Error::Domain(format!(
            "lambda table needs m > 0 and n_paths > 0 (m = {m}, n_paths = {n_paths})"
        )));
    }
    if omega_ratios.is_empty() || omega_ratios.iter().any(|r| !(*r >= 0.0) || !r.is_finite()) {
        return Err(Error::Domain("omega ratios must be finite and nonnegative".into()));
    }
    let mut ratios = omega_ratios.to_vec();
    ratios.sort_by(f64::total_cmp);
    ratios.dedup();
    let k = ratios.len();
    let needs_noise = ratios.iter().any(|&r| r > 0.0);

    let chunks = n_paths.div_ceil(CHUNK_PATHS);
    // Per chunk: [sum R, R^2, R^3, R^4, then (|d|, d^2) per ratio].
    let partial: Vec<Vec<f64>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let paths = CHUNK_PATHS.min(n_paths - c * CHUNK_PATHS);
            let mut acc = vec![0.0; 4 + 2 * k];
            let sd = (1.0 / m as f64).sqrt();
            let mut walk = vec![0.0; m + 1];
            let mut lo_noisy = vec![0.0; k];
            let mut hi_noisy = vec![0.0; k];
            for _ in 0..paths {
                let mut w = 0.0;
                let (mut lo, mut hi) = (0.0f64, 0.0f64);
                walk[0] = 0.0;
                for slot in walk.iter_mut().skip(1) {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    w += sd * z;
                    *slot = w;
                    lo = lo.min(w);
                    hi = hi.max(w);
                }
                let r = hi - lo;
                let r2 = r * r;
                acc[0] += r;
                acc[1] += r2;
                acc[2] += r2 * r;
                acc[3] += r2 * r2;
                if needs_noise {
                    lo_noisy.fill(f64::INFINITY);
                    hi_noisy.fill(f64::NEG_INFINITY);
                    for &wj in &walk {
                        let eta: f64 = StandardNormal.sample(&mut rng);
                        for (j, &rho) in ratios.iter().enumerate() {
                            let v = wj + rho * eta;
                            lo_noisy[j] = lo_noisy[j].min(v);
                            hi_noisy[j] = hi_noisy[j].max(v);
                        }
                    }
                    for (j, &rho) in ratios.iter().enumerate() {
                        let d = (hi_noisy[j] - lo_noisy[j] - 2.0 * rho).abs();
                        acc[4 + 2 * j] += d;
                        acc[5 + 2 * j] += d * d;
                    }
                } else {
                    for j in 0..k {
                        acc[4 + 2 * j] += r;
                        acc[5 + 2 * j] += r2;
                    }
                }
            }
            acc
        })
        .collect();

    let mut total = vec![0.0; 4 + 2 * k];
    for part in &partial {
        for (t, p) in total.iter_mut().zip(part) {
            *t += p;
        }
    }
    let np = n_paths as f64;
    let lambda = [total[0] / np, total[1] / np, total[2] / np, total[3] / np];
    let tilde = ratios
        .iter()
        .enumerate()
        .map(|(j, &omega_ratio)| TildeEntry {
            omega_ratio,
            lambda_tilde: [total[4 + 2 * j] / np, total[5 + 2 * j] / np],
        })
        .collect();
    Ok(LambdaTable {
        m,
        lambda,
        tilde,
        n_paths,
        seed,
    })
}

impl LambdaTable {
    /// `λ_{r,m}` for `r` in `1..=4`.
    pub fn lambda(&self, r: usize) -> f64 {
        self.lambda[r - 1]
    }

    /// `Λ_m = (λ4 - λ2²) / λ2²`, the range analogue of the RV variance factor 2.
    pub fn big_lambda(&self) -> f64 {
        let l2 = self.lambda(2);
        (self.lambda(4) - l2 * l2) / (l2 * l2)
    }

    /// Asymptotic variance factor of `√n (1 - RBV/RRV)` for unit quarticity
    /// ratio: `Λ^R + Λ^B - 2Λ^{RB}`.
    pub fn nu(&self) -> f64 {
        let (l1, l2, l3, l4) = (self.lambda(1), self.lambda(2), self.lambda(3), self.lambda(4));
        let l1sq = l1 * l1;
        let r = (l4 - l2 * l2) / (l2 * l2);
        let b = (l2 * l2 + 2.0 * l1sq * l2 - 3.0 * l1sq * l1sq) / (l1sq * l1sq);
        let rb = (2.0 * l3 * l1 - 2.0 * l2 * l1sq) / (l2 * l1sq);
        r + b - 2.0 * rb
    }

    /// `λ~_{1,m}` interpolated at a noise ratio (clamped to the grid).
    pub fn lambda_tilde1_at(&self, omega_ratio: f64) -> f64 {
        interp(
            &self.tilde.iter().map(|t| t.omega_ratio).collect::<Vec<_>>(),
            &self.tilde.iter().map(|t| t.lambda_tilde[0]).collect::<Vec<_>>(),
            omega_ratio,
        )
    }

    /// Noise ratio implied by the observed statistic
    /// `g = 2ω̂ / mean_i |s_i - 2ω̂|`, matched against `2ρ / λ~_1(ρ)` on the grid.
    pub fn implied_omega_ratio(&self, g: f64) -> f64 {
        if self.tilde.len() == 1 {
            return self.tilde[0].omega_ratio;
        }
        let curve: Vec<f64> = self
            .tilde
            .iter()
            .map(|t| 2.0 * t.omega_ratio / t.lambda_tilde[0])
            .collect();
        if !(g > curve[0]) {
            return self.tilde[0].omega_ratio;
        }
        for j in 1..curve.len() {
            if g <= curve[j] {
                let (a, b) = (curve[j - 1], curve[j]);
                let w = if b > a { (g - a) / (b - a) } else { 1.0 };
                let (ra, rb) = (self.tilde[j - 1].omega_ratio, self.tilde[j].omega_ratio);
                return ra + w * (rb - ra);
            }
        }
        self.tilde[self.tilde.len() - 1].omega_ratio
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_tables(writer, std::slice::from_ref(self))
    }
}

fn interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if xs.len() == 1 || x <= xs[0] {
        return ys[0];
    }
    let last = xs.len() - 1;
    if x >= xs[last] {
        return ys[last];
    }
    let j = xs.partition_point(|&v| v <= x);
    let (x0, x1) = (xs[j - 1], xs[j]);
    ys[j - 1] + (x - x0) / (x1 - x0) * (ys[j] - ys[j - 1])
}

/// Write tables in the cache schema `m,r,kind,value,n_paths,seed,omega_ratio`.
pub fn write_tables<W: Write>(writer: W, tables: &[LambdaTable]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["m", "r", "kind", "value", "n_paths", "seed", "omega_ratio"])?;
    for t in tables {
        for r in 1..=4 {
            w.write_record([
                t.m.to_string(),
                r.to_string(),
                "lambda".into(),
                t.lambda(r).to_string(),
                t.n_paths.to_string(),
                t.seed.to_string(),
                "0".into(),
            ])?;
        }
        for e in &t.tilde {
            for r in 1..=2 {
                w.write_record([
                    t.m.to_string(),
                    r.to_string(),
                    "lambda_tilde".into(),
                    e.lambda_tilde[r - 1].to_string(),
                    t.n_paths.to_string(),
                    t.seed.to_string(),
                    e.omega_ratio.to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Read every table stored in a cache file.
pub fn read_tables<R: Read>(reader: R) -> Result<Vec<LambdaTable>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut tables: Vec<LambdaTable> = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        let line = idx + 2;
        let rec = rec.map_err(|e| Error::Parse {
            line,
            msg: e.to_string(),
        })?;
        let bad = |what: &str| Error::Parse {
            line,
            msg: format!("bad {what}"),
        };
        let m: usize = rec[0].parse().map_err(|_| bad("m"))?;
        let r: usize = rec[1].parse().map_err(|_| bad("r"))?;
        let value: f64 = rec[3].parse().map_err(|_| bad("value"))?;
        let n_paths: usize = rec[4].parse().map_err(|_| bad("n_paths"))?;
        let seed: u64 = rec[5].parse().map_err(|_| bad("seed"))?;
        match &rec[2] {
            "lambda" => {
                if !(1..=4).contains(&r) {
                    return Err(bad("r"));
                }
                if r == 1 {
                    tables.push(LambdaTable {
                        m,
                        lambda: [0.0; 4],
                        tilde: Vec::new(),
                        n_paths,
                        seed,
                    });
                }
                let t = tables.last_mut().ok_or_else(|| bad("row order"))?;
                t.lambda[r - 1] = value;
            }
            "lambda_tilde" => {
                let ratio: f64 = rec[6].parse().map_err(|_| bad("omega_ratio"))?;
                let t = tables.last_mut().ok_or_else(|| bad("row order"))?;
                if r == 1 {
                    t.tilde.push(TildeEntry {
                        omega_ratio: ratio,
                        lambda_tilde: [value, 0.0],
                    });
                } else {
                    let e = t.tilde.last_mut().ok_or_else(|| bad("row order"))?;
                    e.lambda_tilde[1] = value;
                }
            }
            other => {
                return Err(Error::Parse {
                    line,
                    msg: format!("unknown kind `{other}`"),
                })
            }
        }
    }
    Ok(tables)
}

/// Load a table from the cache, or simulate it and append it to the cache.
pub fn load_or_compute(
    cache: impl AsRef<Path>,
    m: usize,
    n_paths: usize,
    seed: u64,
    omega_ratios: &[f64],
) -> Result<LambdaTable> {
    let path = cache.as_ref();
    let mut tables = if path.exists() {
        read_tables(std::fs::File::open(path)?)?
    } else {
        Vec::new()
    };
    let mut wanted = omega_ratios.to_vec();
    wanted.sort_by(f64::total_cmp);
    wanted.dedup();
    if let Some(t) = tables.iter().find(|t| {
        t.m == m
            && t.n_paths == n_paths
            && t.seed == seed
            && t.tilde.iter().map(|e| e.omega_ratio).eq(wanted.iter().copied())
    }) {
        return Ok(t.clone());
    }
    let table = lambda_grid(m, n_paths, seed, &wanted)?;
    tables.push(table.clone());
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    write_tables(std::fs::File::create(path)?, &tables)?;
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_step_moments_match_half_normal() {
        // With m = 1 the range is |N(0,1)|: E|Z| = sqrt(2/pi), E Z^2 = 1, E Z^4 = 3.
        let t = lambda_table(1, 400_000, 7, 0.0).unwrap();
        assert!((t.lambda(1) - (2.0 / std::f64::consts::PI).sqrt()).abs() < 0.005);
        assert!((t.lambda(2) - 1.0).abs() < 0.01);
        assert!((t.lambda(4) - 3.0).abs() < 0.06);
        assert!((t.big_lambda() - 2.0).abs() < 0.06);
    }

    #[test]
    fn reproducible_and_seed_sensitive() {
        let a = lambda_table(5, 20_000, 3, 0.5).unwrap();
        let b = lambda_table(5, 20_000, 3, 0.5).unwrap();
        assert_eq!(a, b);
        let c = lambda_table(5, 20_000, 4, 0.5).unwrap();
        assert_ne!(a.lambda, c.lambda);
    }

    #[test]
    fn zero_ratio_tilde_equals_lambda() {
        let t = lambda_grid(5, 20_000, 9, &[0.0, 0.5]).unwrap();
        assert_eq!(t.tilde[0].lambda_tilde[0], t.lambda(1));
        assert_eq!(t.tilde[0].lambda_tilde[1], t.lambda(2));
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(matches!(lambda_table(0, 10, 1, 0.0), Err(Error::Domain(_))));
        assert!(matches!(lambda_table(3, 0, 1, 0.0), Err(Error::Domain(_))));
        assert!(matches!(lambda_table(3, 10, 1, -0.1), Err(Error::Domain(_))));
    }

    #[test]
    fn big_lambda_decreases_with_m() {
        let values: Vec<f64> = [1, 2, 5, 20]
            .iter()
            .map(|&m| lambda_table(m, 200_000, 21, 0.0).unwrap().big_lambda())
            .collect();
        for w in values.windows(2) {
            assert!(w[1] < w[0], "{values:?}");
        }
    }

    #[test]
    fn implied_ratio_inverts_grid_curve() {
        let t = lambda_grid(5, 50_000, 5, &default_omega_grid()).unwrap();
        for &rho in &[0.0, 0.3, 0.75, 1.4] {
            let g = 2.0 * rho / t.lambda_tilde1_at(rho);
            let back = t.implied_omega_ratio(g);
            assert!((back - rho).abs() < 0.02, "rho {rho} -> {back}");
        }
    }

    #[test]
    fn cache_round_trip() {
        let t = lambda_grid(3, 5_000, 1, &[0.0, 0.25]).unwrap();
        let mut buf = Vec::new();
        write_tables(&mut buf, &[t.clone(), lambda_table(2, 1000, 2, 0.0).unwrap()]).unwrap();
        let back = read_tables(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0], t);
    }

    #[test]
    fn load_or_compute_reuses_cache() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lambda.csv");
        let a = load_or_compute(&path, 4, 4_000, 8, &[0.0]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let b = load_or_compute(&path, 4, 4_000, 8, &[0.0]).unwrap();
        assert_eq!(a, b);
        assert_eq!(text, std::fs::read_to_string(&path).unwrap());
    }
}
