//! Predictive distributions built from a grid of conditional quantiles.
//!
//! The CDF interpolates linearly between the (rearranged) quantile knots
//! and continues with exponential tails whose mass equals the outer tau
//! levels and whose density matches the adjacent knot interval.

use std::io::Write;

use chrono::NaiveDate;

use crate::error::{Error, Result};

/// Number of outer knot intervals used to set each tail's boundary density.
pub const TAIL_SPAN: usize = 5;

/// 49 levels 0.02, 0.04, ..., 0.98.
pub fn density_grid() -> Vec<f64> {
    (1..=49).map(|k| (2 * k) as f64 / 100.0).collect()
}

/// 19 levels 0.05, 0.10, ..., 0.95.
pub fn estimation_grid() -> Vec<f64> {
    (1..=19).map(|k| (5 * k) as f64 / 100.0).collect()
}

/// Ascending sort plus the number of adjacent pairs that were out of order.
pub fn rearrange(q_raw: &[f64]) -> (Vec<f64>, usize) {
    let crossings = q_raw.windows(2).filter(|w| w[1] < w[0]).count();
    let mut q = q_raw.to_vec();
    q.sort_by(f64::total_cmp);
    (q, crossings)
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantileCurve {
    pub taus: Vec<f64>,
    /// Rearranged (nondecreasing) quantiles.
    pub q: Vec<f64>,
    pub crossings: usize,
    /// Knots with tied runs spread by `eps` so the CDF is strictly increasing.
    knots: Vec<f64>,
    pub eps: f64,
    lower_rate: f64,
    upper_rate: f64,
}

impl QuantileCurve {
    pub fn new(taus: &[f64], q_raw: &[f64]) -> Result<Self> {
        if taus.len() != q_raw.len() {
            return Err(Error::Alignment(format!(
                "{} taus but {} quantiles",
                taus.len(),
                q_raw.len()
            )));
        }
        if taus.len() < 2 {
            return Err(Error::Length {
                what: "quantile curve knots",
                needed: 2,
                got: taus.len(),
            });
        }
        if taus.iter().any(|t| !(*t > 0.0 && *t < 1.0)) || taus.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Domain("taus must be strictly ascending in (0, 1)".into()));
        }
        if q_raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("quantiles must be finite".into()));
        }
        let (q, crossings) = rearrange(q_raw);
        let (lo, hi) = (q[0], q[q.len() - 1]);
        let mut scale = (hi - lo).max(lo.abs()).max(hi.abs());
        if scale == 0.0 {
            scale = 1.0;
        }
        let eps = 1e-10 * scale;
        let knots = spread_ties(&q, eps);
        let k = knots.len();
        // Boundary density: CDF secant across the outer `TAIL_SPAN` knot
        // intervals (extended past ties), so one narrow outer interval does
        // not produce an extreme tail rate.
        let tie = 1e-8 * scale;
        let span = TAIL_SPAN.min(k - 1);
        let f_first = match (span..k).find(|&j| q[j] - q[0] > tie) {
            Some(j) => (taus[j] - taus[0]) / (q[j] - q[0]),
            None => (taus[1] - taus[0]) / (knots[1] - knots[0]),
        };
        let f_last = match (0..k - span).rev().find(|&j| q[k - 1] - q[j] > tie) {
            Some(j) => (taus[k - 1] - taus[j]) / (q[k - 1] - q[j]),
            None => (taus[k - 1] - taus[k - 2]) / (knots[k - 1] - knots[k - 2]),
        };
        Ok(Self {
            taus: taus.to_vec(),
            q,
            crossings,
            knots,
            eps,
            lower_rate: f_first / taus[0],
            upper_rate: f_last / (1.0 - taus[k - 1]),
        })
    }

    /// Piecewise-linear CDF with exponential tails; strictly inside (0, 1).
    pub fn cdf(&self, v: f64) -> f64 {
        let k = self.knots.len();
        let t0 = self.taus[0];
        let tl = self.taus[k - 1];
        let raw = if v < self.knots[0] {
            t0 * (self.lower_rate * (v - self.knots[0])).exp()
        } else if v > self.knots[k - 1] {
            1.0 - (1.0 - tl) * (-self.upper_rate * (v - self.knots[k - 1])).exp()
        } else {
            let j = self.segment(v);
            let (a, b) = (self.knots[j], self.knots[j + 1]);
            self.taus[j] + (self.taus[j + 1] - self.taus[j]) * (v - a) / (b - a)
        };
        raw.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
    }

    pub fn pit(&self, realization: f64) -> f64 {
        self.cdf(realization)
    }

    /// Log of the piecewise-constant density; finite everywhere.
    pub fn log_density(&self, v: f64) -> f64 {
        let k = self.knots.len();
        if v < self.knots[0] {
            (self.taus[0] * self.lower_rate).ln() + self.lower_rate * (v - self.knots[0])
        } else if v > self.knots[k - 1] {
            ((1.0 - self.taus[k - 1]) * self.upper_rate).ln() - self.upper_rate * (v - self.knots[k - 1])
        } else {
            let j = self.segment(v);
            ((self.taus[j + 1] - self.taus[j]) / (self.knots[j + 1] - self.knots[j])).ln()
        }
    }

    /// Inverse of [`cdf`](Self::cdf).
    pub fn quantile(&self, tau: f64) -> Result<f64> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::Domain(format!("tau must lie in (0, 1), got {tau}")));
        }
        let k = self.knots.len();
        let t0 = self.taus[0];
        let tl = self.taus[k - 1];
        Ok(if tau < t0 {
            self.knots[0] + (tau / t0).ln() / self.lower_rate
        } else if tau > tl {
            self.knots[k - 1] - ((1.0 - tau) / (1.0 - tl)).ln() / self.upper_rate
        } else {
            let j = match self.taus.binary_search_by(|t| t.total_cmp(&tau)) {
                Ok(j) => return Ok(self.knots[j]),
                Err(j) => j - 1,
            };
            let w = (tau - self.taus[j]) / (self.taus[j + 1] - self.taus[j]);
            self.knots[j] + w * (self.knots[j + 1] - self.knots[j])
        })
    }

    /// Knot interval containing `v` (which lies inside the knot range).
    fn segment(&self, v: f64) -> usize {
        let k = self.knots.len();
        match self.knots.binary_search_by(|q| q.total_cmp(&v)) {
            Ok(j) => j.min(k - 2),
            Err(j) => (j - 1).min(k - 2),
        }
    }
}

/// Spread each run of equal values symmetrically around its common value.
fn spread_ties(q: &[f64], eps: f64) -> Vec<f64> {
    let mut out = q.to_vec();
    let mut i = 0;
    while i < q.len() {
        let mut j = i + 1;
        while j < q.len() && q[j] == q[i] {
            j += 1;
        }
        let len = j - i;
        if len > 1 {
            for (k, v) in out[i..j].iter_mut().enumerate() {
                *v = q[i] + (k as f64 - (len as f64 - 1.0) / 2.0) * eps;
            }
        }
        i = j;
    }
    for k in 1..out.len() {
        if out[k] <= out[k - 1] {
            out[k] = out[k - 1] + eps;
        }
    }
    out
}

/// Curve export rows `date,tau,quantile`.
pub fn write_curves<W: Write>(writer: W, curves: &[(NaiveDate, &QuantileCurve)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["date", "tau", "quantile"])?;
    for (date, c) in curves {
        for (t, q) in c.taus.iter().zip(&c.q) {
            w.write_record([date.to_string(), t.to_string(), q.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read curves written by [`write_curves`], one per date in file order.
pub fn read_curves<R: std::io::Read>(reader: R) -> Result<Vec<(NaiveDate, QuantileCurve)>> {
    let mut r = csv::Reader::from_reader(reader);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != ["date", "tau", "quantile"] {
        return Err(Error::Parse {
            line: 1,
            msg: "curve header must be date,tau,quantile".into(),
        });
    }
    let mut groups: Vec<(NaiveDate, Vec<f64>, Vec<f64>)> = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = k + 2;
        let bad = |msg: String| Error::Parse { line, msg };
        let date = NaiveDate::parse_from_str(&rec[0], "%Y-%m-%d").map_err(|e| bad(e.to_string()))?;
        let tau: f64 = rec[1].parse().map_err(|e| bad(format!("tau: {e}")))?;
        let q: f64 = rec[2].parse().map_err(|e| bad(format!("quantile: {e}")))?;
        match groups.last_mut() {
            Some((d, t, v)) if *d == date => {
                t.push(tau);
                v.push(q);
            }
            _ => groups.push((date, vec![tau], vec![q])),
        }
    }
    groups
        .into_iter()
        .map(|(d, t, q)| Ok((d, QuantileCurve::new(&t, &q)?)))
        .collect()
}

/// PIT export rows `date,pit,z`.
pub fn write_pits<W: Write>(writer: W, rows: &[(NaiveDate, f64, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["date", "pit", "z"])?;
    for (d, u, z) in rows {
        w.write_record([d.to_string(), u.to_string(), z.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
