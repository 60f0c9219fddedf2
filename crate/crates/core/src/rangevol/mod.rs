//! Realized estimators of daily integrated variance from one day's price grid.
//!
//! All range-based quantities work on `s_i`, the high-low range of the
//! `m + 1` log-prices of subinterval `i`. Normalising constants come from a
//! [`LambdaTable`].

mod lambda;

use std::io::Write;

use serde::Serialize;

pub use lambda::{
    default_omega_grid, lambda_grid, lambda_table, load_or_compute, read_tables, write_tables,
    LambdaTable, TildeEntry,
};

use crate::error::{Error, Result};
use crate::ingest::IntradayDay;

/// Sum of squared returns over the fine grid.
pub fn realized_variance(day: &IntradayDay) -> f64 {
    day.prices.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum()
}

/// Realized variance from the last price of each subinterval only (`n` returns).
pub fn sparse_realized_variance(day: &IntradayDay) -> f64 {
    day.prices
        .iter()
        .step_by(day.m)
        .collect::<Vec<_>>()
        .windows(2)
        .map(|w| (w[1] - w[0]).powi(2))
        .sum()
}

fn check_table(day: &IntradayDay, lt: &LambdaTable) -> Result<()> {
    if lt.m != day.m {
        return Err(Error::Config(format!(
            "lambda table built for m = {} but day {} has m = {}",
            lt.m, day.date, day.m
        )));
    }
    Ok(())
}

/// `(1/λ_{2,m}) Σ s_i²`.
pub fn realized_range_variance(day: &IntradayDay, lt: &LambdaTable) -> Result<f64> {
    check_table(day, lt)?;
    Ok(rrv_from_ranges(&day.ranges(), lt))
}

fn rrv_from_ranges(ranges: &[f64], lt: &LambdaTable) -> f64 {
    ranges.iter().map(|s| s * s).sum::<f64>() / lt.lambda(2)
}

/// Range bipower variation `(1/λ_{1,m}²) Σ s_i s_{i+1}`.
pub fn range_bipower(day: &IntradayDay, lt: &LambdaTable) -> Result<f64> {
    check_table(day, lt)?;
    if day.n() < 2 {
        return Err(Error::Length {
            what: "range bipower subintervals",
            needed: 2,
            got: day.n(),
        });
    }
    Ok(rbv_from_ranges(&day.ranges(), lt))
}

fn rbv_from_ranges(ranges: &[f64], lt: &LambdaTable) -> f64 {
    let l1 = lt.lambda(1);
    ranges.windows(2).map(|w| w[0] * w[1]).sum::<f64>() / (l1 * l1)
}

/// Range quad-power quarticity `(n/λ_{1,m}⁴) Σ s_i s_{i+1} s_{i+2} s_{i+3}`.
pub fn range_quadpower(day: &IntradayDay, lt: &LambdaTable) -> Result<f64> {
    check_table(day, lt)?;
    if day.n() < 4 {
        return Err(Error::Length {
            what: "range quad-power subintervals",
            needed: 4,
            got: day.n(),
        });
    }
    Ok(rqq_from_ranges(&day.ranges(), lt))
}

fn rqq_from_ranges(ranges: &[f64], lt: &LambdaTable) -> f64 {
    let n = ranges.len() as f64;
    let l1 = lt.lambda(1);
    n * ranges
        .windows(4)
        .map(|w| w[0] * w[1] * w[2] * w[3])
        .sum::<f64>()
        / l1.powi(4)
}

/// Noise variance `RV / (2N)` with `N` the number of fine-grid returns.
pub fn noise_variance(day: &IntradayDay) -> f64 {
    realized_variance(day) / (2.0 * day.n_returns() as f64)
}

/// Bias-corrected range bipower variation
/// `(1/λ~_{1,m}²) Σ |s_i - 2ω̂| |s_{i+1} - 2ω̂|`, floored at zero.
///
/// With a single-entry table the stored noise ratio is used; with a grid the
/// ratio is re-estimated from the day (see [`LambdaTable::implied_omega_ratio`]).
pub fn rrv_bvbc(day: &IntradayDay, lt: &LambdaTable, omega2: f64) -> Result<f64> {
    check_table(day, lt)?;
    if !(omega2 >= 0.0) {
        return Err(Error::Domain(format!("omega2 must be nonnegative, got {omega2}")));
    }
    if day.n() < 2 {
        return Err(Error::Length {
            what: "bias-corrected bipower subintervals",
            needed: 2,
            got: day.n(),
        });
    }
    Ok(bvbc_from_ranges(&day.ranges(), lt, omega2))
}

fn bvbc_from_ranges(ranges: &[f64], lt: &LambdaTable, omega2: f64) -> f64 {
    let shift = 2.0 * omega2.sqrt();
    let centred: Vec<f64> = ranges.iter().map(|s| (s - shift).abs()).collect();
    let mean_abs = centred.iter().sum::<f64>() / centred.len() as f64;
    let ratio = if mean_abs > 0.0 {
        lt.implied_omega_ratio(shift / mean_abs)
    } else {
        lt.tilde[0].omega_ratio
    };
    let lt1 = lt.lambda_tilde1_at(ratio);
    let total = centred.windows(2).map(|w| w[0] * w[1]).sum::<f64>() / (lt1 * lt1);
    total.max(0.0)
}

/// Ratio jump statistic `√n (1 - RBV/RRV) / √(ν_m max{RQQ/RBV², 1})`.
///
/// Returns `+∞` when `RBV = 0 < RRV`.
pub fn jump_stat(day: &IntradayDay, lt: &LambdaTable) -> Result<f64> {
    check_table(day, lt)?;
    if day.n() < 4 {
        return Err(Error::Length {
            what: "jump statistic subintervals",
            needed: 4,
            got: day.n(),
        });
    }
    let ranges = day.ranges();
    z_tp_from_parts(
        ranges.len(),
        rrv_from_ranges(&ranges, lt),
        rbv_from_ranges(&ranges, lt),
        rqq_from_ranges(&ranges, lt),
        lt,
    )
}

fn z_tp_from_parts(n: usize, rrv: f64, rbv: f64, rqq: f64, lt: &LambdaTable) -> Result<f64> {
    if !(rrv > 0.0) {
        return Err(Error::UndefinedStatistic(
            "jump statistic needs a positive realized range variance".into(),
        ));
    }
    if rbv <= 0.0 {
        return Ok(f64::INFINITY);
    }
    let ratio = (rqq / (rbv * rbv)).max(1.0);
    Ok((n as f64).sqrt() * (1.0 - rbv / rrv) / (lt.nu() * ratio).sqrt())
}

/// All estimators for one day.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DayEstimates {
    pub rv: f64,
    pub rrv: f64,
    pub rbv: f64,
    pub rqq: f64,
    pub omega2: f64,
    pub rrv_bvbc: f64,
    /// `NaN` when the statistic is undefined (zero realized range variance).
    pub z_tp: f64,
    /// `rrv - rrv_bvbc`; may be negative in finite samples.
    pub jump: f64,
}

impl DayEstimates {
    pub fn z_tp_defined(&self) -> bool {
        !self.z_tp.is_nan()
    }
}

pub fn day_estimates(day: &IntradayDay, lt: &LambdaTable) -> Result<DayEstimates> {
    check_table(day, lt)?;
    if day.n() < 4 {
        return Err(Error::Length {
            what: "subintervals per day",
            needed: 4,
            got: day.n(),
        });
    }
    let ranges = day.ranges();
    let rv = realized_variance(day);
    let rrv = rrv_from_ranges(&ranges, lt);
    let rbv = rbv_from_ranges(&ranges, lt);
    let rqq = rqq_from_ranges(&ranges, lt);
    let omega2 = rv / (2.0 * day.n_returns() as f64);
    let bvbc = bvbc_from_ranges(&ranges, lt, omega2);
    let z_tp = z_tp_from_parts(ranges.len(), rrv, rbv, rqq, lt).unwrap_or(f64::NAN);
    Ok(DayEstimates {
        rv,
        rrv,
        rbv,
        rqq,
        omega2,
        rrv_bvbc: bvbc,
        z_tp,
        jump: rrv - bvbc,
    })
}

/// Estimator output CSV: one row per `(asset, date)`.
pub fn write_estimates<W: Write>(
    writer: W,
    rows: &[(String, chrono::NaiveDate, DayEstimates)],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "asset", "date", "rv", "rrv", "rbv", "rqq", "omega2", "rrv_bvbc", "z_tp", "jump",
    ])?;
    for (asset, date, e) in rows {
        w.write_record([
            asset.clone(),
            date.to_string(),
            e.rv.to_string(),
            e.rrv.to_string(),
            e.rbv.to_string(),
            e.rqq.to_string(),
            e.omega2.to_string(),
            e.rrv_bvbc.to_string(),
            e.z_tp.to_string(),
            e.jump.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Parse the estimator CSV written by [`write_estimates`].
pub fn read_estimates<R: std::io::Read>(
    reader: R,
) -> Result<Vec<(String, chrono::NaiveDate, DayEstimates)>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        let line = idx + 2;
        let rec = rec.map_err(|e| Error::Parse {
            line,
            msg: e.to_string(),
        })?;
        let num = |j: usize| -> Result<f64> {
            rec[j].parse().map_err(|_| Error::Parse {
                line,
                msg: format!("bad number `{}`", &rec[j]),
            })
        };
        let date = chrono::NaiveDate::parse_from_str(&rec[1], "%Y-%m-%d").map_err(|_| {
            Error::Parse {
                line,
                msg: format!("bad date `{}`", &rec[1]),
            }
        })?;
        out.push((
            rec[0].to_string(),
            date,
            DayEstimates {
                rv: num(2)?,
                rrv: num(3)?,
                rbv: num(4)?,
                rqq: num(5)?,
                omega2: num(6)?,
                rrv_bvbc: num(7)?,
                z_tp: num(8)?,
                jump: num(9)?,
            },
        ));
    }
    Ok(out)
}
