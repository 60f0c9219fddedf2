//! Loading intraday bars and daily covariates, descriptive statistics and
//! calendar alignment.
//!
//! Intraday files are `date,time,price` CSVs, one row per bar, sorted by time
//! within each date. A day is accepted only if its bar count `N` satisfies
//! `(N - 1) % m == 0` (and matches the configured full grid when one is
//! given); incomplete days are rejected rather than imputed.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{NaiveDate, NaiveTime, Timelike};
use indexmap::IndexMap;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::stats;

/// One trading day of log-prices on an `n x m` grid plus the opening price.
#[derive(Debug, Clone, PartialEq)]
pub struct IntradayDay {
    pub date: NaiveDate,
    /// Log-prices, length `n * m + 1`.
    pub prices: Vec<f64>,
    /// Prices per subinterval.
    pub m: usize,
}

impl IntradayDay {
    pub fn new(date: NaiveDate, log_prices: Vec<f64>, m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::Domain("m must be positive".into()));
        }
        if log_prices.len() < 2 {
            return Err(Error::Length {
                what: "intraday prices",
                needed: 2,
                got: log_prices.len(),
            });
        }
        if log_prices.iter().any(|p| !p.is_finite()) {
            return Err(Error::Domain(format!("non-finite log-price on {date}")));
        }
        let returns = log_prices.len() - 1;
        if !returns.is_multiple_of(m) {
            return Err(Error::Config(format!(
                "{date}: {returns} returns not divisible by m = {m}"
            )));
        }
        Ok(Self {
            date,
            prices: log_prices,
            m,
        })
    }

    /// Build from raw (positive) price levels.
    pub fn from_levels(date: NaiveDate, levels: &[f64], m: usize) -> Result<Self> {
        if let Some(bad) = levels.iter().find(|p| !(**p > 0.0)) {
            return Err(Error::Domain(format!("non-positive price {bad} on {date}")));
        }
        Self::new(date, levels.iter().map(|p| p.ln()).collect(), m)
    }

    /// Number of subintervals.
    pub fn n(&self) -> usize {
        (self.prices.len() - 1) / self.m
    }

    /// Number of returns on the fine grid, `N = n * m`.
    pub fn n_returns(&self) -> usize {
        self.prices.len() - 1
    }

    /// The `m + 1` log-prices of subinterval `i` (zero-based), left endpoint included.
    pub fn subinterval(&self, i: usize) -> &[f64] {
        &self.prices[i * self.m..=(i + 1) * self.m]
    }

    /// High-low range of every subinterval.
    pub fn ranges(&self) -> Vec<f64> {
        (0..self.n())
            .map(|i| {
                let s = self.subinterval(i);
                let (lo, hi) = s
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &p| {
                        (lo.min(p), hi.max(p))
                    });
                hi - lo
            })
            .collect()
    }

    pub fn open(&self) -> f64 {
        self.prices[0].exp()
    }

    pub fn close(&self) -> f64 {
        self.prices[self.prices.len() - 1].exp()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LoadOptions {
    pub m: usize,
    /// Full-grid price count per day (`N + 1` with the opening price).
    /// Days with a different count are rejected. `None` only checks divisibility.
    pub expected_prices: Option<usize>,
}

impl LoadOptions {
    pub fn new(m: usize) -> Self {
        Self {
            m,
            expected_prices: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DayRejection {
    pub date: NaiveDate,
    pub bars: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct IntradayLoad {
    pub days: Vec<IntradayDay>,
    pub rejected: Vec<DayRejection>,
}

pub fn load_intraday(path: impl AsRef<Path>, opts: &LoadOptions) -> Result<IntradayLoad> {
    let file = std::fs::File::open(path.as_ref())?;
    read_intraday(file, opts)
}

/// Parse the intraday CSV format from any reader.
pub fn read_intraday<R: Read>(reader: R, opts: &LoadOptions) -> Result<IntradayLoad> {
    if opts.m == 0 {
        return Err(Error::Domain("m must be positive".into()));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let expected = ["date", "time", "price"];
    if headers.len() != 3 || headers.iter().zip(expected).any(|(h, e)| h != e) {
        return Err(Error::Parse {
            line: 1,
            msg: format!("expected header `date,time,price`, found `{}`", headers.iter().collect::<Vec<_>>().join(",")),
        });
    }

    let mut groups: Vec<(NaiveDate, Vec<f64>)> = Vec::new();
    let mut last_time: Option<NaiveTime> = None;
    let mut seen = std::collections::HashSet::new();
    for (idx, rec) in rdr.records().enumerate() {
        let line = idx + 2;
        let rec = rec.map_err(|e| Error::Parse {
            line,
            msg: e.to_string(),
        })?;
        if rec.len() != 3 {
            return Err(Error::Parse {
                line,
                msg: format!("expected 3 fields, found {}", rec.len()),
            });
        }
        let date = parse_date(&rec[0]).ok_or_else(|| Error::Parse {
            line,
            msg: format!("bad date `{}`", &rec[0]),
        })?;
        let time = parse_time(&rec[1]).ok_or_else(|| Error::Parse {
            line,
            msg: format!("bad time `{}`", &rec[1]),
        })?;
        let price: f64 = rec[2].parse().map_err(|_| Error::Parse {
            line,
            msg: format!("bad price `{}`", &rec[2]),
        })?;
        if !price.is_finite() {
            return Err(Error::Parse {
                line,
                msg: format!("non-finite price `{}`", &rec[2]),
            });
        }
        if price <= 0.0 {
            return Err(Error::Domain(format!(
                "non-positive price {price} at line {line}"
            )));
        }
        match groups.last_mut() {
            Some((d, prices)) if *d == date => {
                if last_time.is_some_and(|t| time <= t) {
                    return Err(Error::Parse {
                        line,
                        msg: format!("time {time} not after previous bar on {date}"),
                    });
                }
                prices.push(price.ln());
            }
            _ => {
                if !seen.insert(date) {
                    return Err(Error::Parse {
                        line,
                        msg: format!("date {date} appears in more than one block"),
                    });
                }
                groups.push((date, vec![price.ln()]));
            }
        }
        last_time = Some(time);
    }
    if groups.is_empty() {
        return Err(Error::EmptyInput("intraday file has no rows".into()));
    }

    let mut out = IntradayLoad::default();
    for (date, prices) in groups {
        let bars = prices.len();
        if let Some(full) = opts.expected_prices {
            if bars != full {
                out.rejected.push(DayRejection {
                    date,
                    bars,
                    reason: format!("incomplete day: {bars} bars, full grid has {full}"),
                });
                continue;
            }
        }
        if bars < 2 || (bars - 1) % opts.m != 0 {
            out.rejected.push(DayRejection {
                date,
                bars,
                reason: format!(
                    "{} returns not divisible by m = {}",
                    bars.saturating_sub(1),
                    opts.m
                ),
            });
            continue;
        }
        out.days.push(IntradayDay::new(date, prices, opts.m)?);
    }
    Ok(out)
}

fn parse_date(s: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d").ok()
}

fn parse_time(s: &str) -> Option<NaiveTime> {
    NaiveTime::parse_from_str(s, "%H:%M:%S")
        .or_else(|_| NaiveTime::parse_from_str(s, "%H:%M"))
        .ok()
}

/// Write days in the intraday CSV format on a 09:30–16:00 session grid.
pub fn write_intraday<W: Write>(writer: W, days: &[IntradayDay]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["date", "time", "price"])?;
    let open = NaiveTime::from_hms_opt(9, 30, 0).expect("valid time");
    for day in days {
        let steps = day.n_returns() as f64;
        let mut prev_secs: Option<u32> = None;
        for (i, p) in day.prices.iter().enumerate() {
            let secs = (i as f64 * 23_400.0 / steps).round() as u32;
            if prev_secs.is_some_and(|s| secs <= s) {
                return Err(Error::Domain(format!(
                    "{}: grid of {} returns is finer than one second",
                    day.date,
                    day.n_returns()
                )));
            }
            prev_secs = Some(secs);
            let t = open + chrono::Duration::seconds(secs as i64);
            let time = format!("{:02}:{:02}:{:02}", t.hour(), t.minute(), t.second());
            w.write_record([day.date.to_string(), time, p.exp().to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `log(close_{t+1}) - log(close_t)`.
pub fn daily_return(day_t_close: f64, day_t1_close: f64) -> Result<f64> {
    if !(day_t_close > 0.0) || !(day_t1_close > 0.0) {
        return Err(Error::Domain(format!(
            "closes must be positive, got {day_t_close} and {day_t1_close}"
        )));
    }
    Ok(day_t1_close.ln() - day_t_close.ln())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Description {
    pub mean: f64,
    pub sd: f64,
    pub median: f64,
    pub iqr: f64,
    pub skewness: f64,
    /// Raw fourth standardized moment (3 for a Gaussian).
    pub kurtosis: f64,
}

pub fn describe(series: &[f64]) -> Result<Description> {
    if series.len() < 4 {
        return Err(Error::Length {
            what: "describe",
            needed: 4,
            got: series.len(),
        });
    }
    let n = series.len() as f64;
    let mean = stats::mean(series);
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &x in series {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    let sd = (m2 / (n - 1.0)).sqrt();
    let (m2, m3, m4) = (m2 / n, m3 / n, m4 / n);
    let (skewness, kurtosis) = if m2 > 0.0 {
        (m3 / m2.powf(1.5), m4 / (m2 * m2))
    } else {
        (f64::NAN, f64::NAN)
    };
    let mut sorted = series.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(Description {
        mean,
        sd,
        median: stats::quantile_sorted(&sorted, 0.5),
        iqr: stats::quantile_sorted(&sorted, 0.75) - stats::quantile_sorted(&sorted, 0.25),
        skewness,
        kurtosis,
    })
}

/// A named daily series with its own date index.
#[derive(Debug, Clone, PartialEq)]
pub struct DailySeries {
    pub name: String,
    pub dates: Vec<NaiveDate>,
    pub values: Vec<f64>,
}

impl DailySeries {
    pub fn new(name: impl Into<String>, dates: Vec<NaiveDate>, values: Vec<f64>) -> Result<Self> {
        let name = name.into();
        if dates.len() != values.len() {
            return Err(Error::Alignment(format!(
                "series `{name}`: {} dates but {} values",
                dates.len(),
                values.len()
            )));
        }
        Ok(Self {
            name,
            dates,
            values,
        })
    }

    /// Natural logarithm of every value (used for the VIX level).
    pub fn ln(&self) -> Result<Self> {
        if let Some(v) = self.values.iter().find(|v| !(**v > 0.0)) {
            return Err(Error::Domain(format!(
                "series `{}` has non-positive value {v}",
                self.name
            )));
        }
        Ok(Self {
            name: self.name.clone(),
            dates: self.dates.clone(),
            values: self.values.iter().map(|v| v.ln()).collect(),
        })
    }

    /// Close-to-close log returns, dated at the later day.
    pub fn log_returns(&self) -> Result<Self> {
        let mut dates = Vec::with_capacity(self.dates.len().saturating_sub(1));
        let mut values = Vec::with_capacity(dates.capacity());
        for i in 1..self.values.len() {
            dates.push(self.dates[i]);
            values.push(daily_return(self.values[i - 1], self.values[i])?);
        }
        Self::new(self.name.clone(), dates, values)
    }
}

pub fn load_daily(path: impl AsRef<Path>, name: &str) -> Result<DailySeries> {
    let file = std::fs::File::open(path.as_ref())?;
    read_daily(file, name)
}

/// Parse a `date,value` CSV.
pub fn read_daily<R: Read>(reader: R, name: &str) -> Result<DailySeries> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.len() != 2 || &headers[0] != "date" || &headers[1] != "value" {
        return Err(Error::Parse {
            line: 1,
            msg: "expected header `date,value`".into(),
        });
    }
    let mut dates = Vec::new();
    let mut values = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        let line = idx + 2;
        let rec = rec.map_err(|e| Error::Parse {
            line,
            msg: e.to_string(),
        })?;
        let date = parse_date(&rec[0]).ok_or_else(|| Error::Parse {
            line,
            msg: format!("bad date `{}`", &rec[0]),
        })?;
        let value: f64 = rec[1].parse().map_err(|_| Error::Parse {
            line,
            msg: format!("bad value `{}`", &rec[1]),
        })?;
        dates.push(date);
        values.push(value);
    }
    if dates.is_empty() {
        return Err(Error::EmptyInput(format!("daily series `{name}` has no rows")));
    }
    DailySeries::new(name, dates, values)
}

pub fn write_daily<W: Write>(writer: W, series: &DailySeries) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["date", "value"])?;
    for (d, v) in series.dates.iter().zip(&series.values) {
        w.write_record([d.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Aligned daily series sharing one ascending date index.
#[derive(Debug, Clone, PartialEq)]
pub struct DailyPanel {
    pub dates: Vec<NaiveDate>,
    pub columns: IndexMap<String, Vec<f64>>,
}

impl DailyPanel {
    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn column(&self, name: &str) -> Result<&[f64]> {
        self.columns
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Config(format!("panel has no column `{name}`")))
    }

    pub fn to_series(&self) -> Vec<DailySeries> {
        self.columns
            .iter()
            .map(|(name, values)| DailySeries {
                name: name.clone(),
                dates: self.dates.clone(),
                values: values.clone(),
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["date".to_string()];
        header.extend(self.columns.keys().cloned());
        w.write_record(&header)?;
        for (i, d) in self.dates.iter().enumerate() {
            let mut row = vec![d.to_string()];
            row.extend(self.columns.values().map(|c| c[i].to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.is_empty() || &headers[0] != "date" {
            return Err(Error::Parse {
                line: 1,
                msg: "panel header must start with `date`".into(),
            });
        }
        let names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
        let mut dates = Vec::new();
        let mut cols: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
        for (idx, rec) in rdr.records().enumerate() {
            let line = idx + 2;
            let rec = rec.map_err(|e| Error::Parse {
                line,
                msg: e.to_string(),
            })?;
            dates.push(parse_date(&rec[0]).ok_or_else(|| Error::Parse {
                line,
                msg: format!("bad date `{}`", &rec[0]),
            })?);
            for (j, col) in cols.iter_mut().enumerate() {
                col.push(rec[j + 1].parse().map_err(|_| Error::Parse {
                    line,
                    msg: format!("bad value `{}` in column `{}`", &rec[j + 1], names[j]),
                })?);
            }
        }
        Ok(Self {
            dates,
            columns: names.into_iter().zip(cols).collect(),
        })
    }
}

/// Per-input record of dates dropped by [`align`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AlignReport {
    pub dropped: Vec<(String, Vec<NaiveDate>)>,
}

/// Inner join of the inputs on their dates. Rows where any series is missing
/// or non-finite are dropped.
pub fn align(series: &[DailySeries]) -> Result<(DailyPanel, AlignReport)> {
    if series.is_empty() {
        return Err(Error::EmptyInput("no series to align".into()));
    }
    let mut maps: Vec<BTreeMap<NaiveDate, f64>> = Vec::with_capacity(series.len());
    for s in series {
        if s.dates.len() != s.values.len() {
            return Err(Error::Alignment(format!(
                "series `{}` has mismatched lengths",
                s.name
            )));
        }
        let mut map = BTreeMap::new();
        for (&d, &v) in s.dates.iter().zip(&s.values) {
            if map.insert(d, v).is_some() {
                return Err(Error::Alignment(format!(
                    "series `{}` repeats date {d}",
                    s.name
                )));
            }
        }
        maps.push(map);
    }
    let dates: Vec<NaiveDate> = maps[0]
        .keys()
        .copied()
        .filter(|d| {
            maps.iter()
                .all(|m| m.get(d).is_some_and(|v| v.is_finite()))
        })
        .collect();
    if dates.is_empty() {
        return Err(Error::Alignment("date indices have an empty intersection".into()));
    }
    let keep: std::collections::BTreeSet<NaiveDate> = dates.iter().copied().collect();
    let mut columns = IndexMap::new();
    let mut report = AlignReport::default();
    for (s, map) in series.iter().zip(&maps) {
        columns.insert(s.name.clone(), dates.iter().map(|d| map[d]).collect());
        let dropped: Vec<NaiveDate> = map.keys().filter(|d| !keep.contains(d)).copied().collect();
        report.dropped.push((s.name.clone(), dropped));
    }
    if columns.len() != series.len() {
        return Err(Error::Alignment("duplicate series names".into()));
    }
    Ok((DailyPanel { dates, columns }, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    fn day_csv(date: &str, bars: usize, start: f64) -> String {
        let mut s = String::new();
        for i in 0..bars {
            let mins = 9 * 60 + 30 + i;
            s.push_str(&format!(
                "{date},{:02}:{:02},{}\n",
                mins / 60,
                mins % 60,
                start + 0.01 * (i % 7) as f64
            ));
        }
        s
    }

    #[test]
    fn full_session_one_minute_bars() {
        let csv = format!("date,time,price\n{}", day_csv("2010-01-04", 391, 100.0));
        let load = read_intraday(csv.as_bytes(), &LoadOptions::new(5)).unwrap();
        assert_eq!(load.days.len(), 1);
        assert!(load.rejected.is_empty());
        let day = &load.days[0];
        assert_eq!(day.n(), 78);
        assert_eq!(day.prices.len(), 391);
        assert_eq!(day.n_returns(), 390);
    }

    #[test]
    fn zero_price_is_domain_error() {
        let csv = "date,time,price\n2010-01-04,09:30,100\n2010-01-04,09:31,0\n";
        assert!(matches!(
            read_intraday(csv.as_bytes(), &LoadOptions::new(1)),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn indivisible_day_rejected_with_diagnostic() {
        // 386 bars -> 385 returns = 55 * 7; 390 bars -> 389 returns, not divisible.
        let csv = format!(
            "date,time,price\n{}{}",
            day_csv("2010-01-04", 386, 50.0),
            day_csv("2010-01-05", 390, 50.0)
        );
        let load = read_intraday(csv.as_bytes(), &LoadOptions::new(7)).unwrap();
        assert_eq!(load.days.len(), 1);
        assert_eq!(load.days[0].date, d("2010-01-04"));
        assert_eq!(load.rejected.len(), 1);
        assert_eq!(load.rejected[0].date, d("2010-01-05"));
        assert!(load.rejected[0].reason.contains("not divisible"));
    }

    #[test]
    fn incomplete_day_rejected_against_full_grid() {
        let csv = format!(
            "date,time,price\n{}{}",
            day_csv("2010-01-04", 391, 50.0),
            day_csv("2010-01-05", 386, 50.0)
        );
        let opts = LoadOptions {
            m: 5,
            expected_prices: Some(391),
        };
        let load = read_intraday(csv.as_bytes(), &opts).unwrap();
        assert_eq!(load.days.len(), 1);
        assert!(load.rejected[0].reason.contains("incomplete"));
    }

    #[test]
    fn malformed_row_names_line() {
        let csv = "date,time,price\n2010-01-04,09:30,100\n2010-01-04,09:31,abc\n";
        match read_intraday(csv.as_bytes(), &LoadOptions::new(1)) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_file_is_empty_input() {
        let csv = "date,time,price\n";
        assert!(matches!(
            read_intraday(csv.as_bytes(), &LoadOptions::new(1)),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn unsorted_times_rejected() {
        let csv = "date,time,price\n2010-01-04,09:31,100\n2010-01-04,09:30,101\n";
        assert!(matches!(
            read_intraday(csv.as_bytes(), &LoadOptions::new(1)),
            Err(Error::Parse { line: 3, .. })
        ));
    }

    #[test]
    fn daily_return_examples() {
        assert_eq!(daily_return(100.0, 100.0).unwrap(), 0.0);
        assert!((daily_return(100.0, 101.0).unwrap() - 1.01f64.ln()).abs() < 1e-15);
        assert!((daily_return(100.0, 101.0).unwrap() - 0.00995).abs() < 1e-5);
        assert!((daily_return(100.0, 99.0).unwrap() + 0.01005).abs() < 1e-5);
        assert!(matches!(daily_return(0.0, 1.0), Err(Error::Domain(_))));
        assert!(matches!(daily_return(1.0, -1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn describe_examples() {
        let c = describe(&[2.0; 6]).unwrap();
        assert_eq!(c.sd, 0.0);
        assert!(c.skewness.is_nan() && c.kurtosis.is_nan());

        let s = describe(&[-1.0, 0.0, 1.0, 0.0]).unwrap();
        assert_eq!(s.mean, 0.0);
        assert_eq!(s.median, 0.0);
        assert_eq!(s.skewness, 0.0);

        assert!(matches!(describe(&[-1.0, 0.0, 1.0]), Err(Error::Length { .. })));
    }

    #[test]
    fn describe_normal_sample_kurtosis() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let xs: Vec<f64> = (0..1_000_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let out = describe(&xs).unwrap();
        assert!((out.kurtosis - 3.0).abs() < 0.05, "kurtosis {}", out.kurtosis);
        assert!(out.skewness.abs() < 0.02);
        assert!((out.sd - 1.0).abs() < 0.01);
    }

    #[test]
    fn align_examples() {
        let a = DailySeries::new("a", vec![d("2020-01-01"), d("2020-01-02"), d("2020-01-03")], vec![1.0, 2.0, 3.0]).unwrap();
        let same = DailySeries::new("b", a.dates.clone(), vec![4.0, 5.0, 6.0]).unwrap();
        let (p, _) = align(&[a.clone(), same]).unwrap();
        assert_eq!(p.len(), 3);

        let shifted = DailySeries::new("c", vec![d("2020-01-02"), d("2020-01-03"), d("2020-01-04")], vec![1.0, 2.0, 3.0]).unwrap();
        let (p, rep) = align(&[a.clone(), shifted]).unwrap();
        assert_eq!(p.dates, vec![d("2020-01-02"), d("2020-01-03")]);
        assert_eq!(p.column("a").unwrap(), &[2.0, 3.0]);
        assert_eq!(rep.dropped[0].1, vec![d("2020-01-01")]);
        assert_eq!(rep.dropped[1].1, vec![d("2020-01-04")]);

        let disjoint = DailySeries::new("e", vec![d("2021-01-01")], vec![1.0]).unwrap();
        assert!(matches!(align(&[a, disjoint]), Err(Error::Alignment(_))));
    }

    #[test]
    fn align_drops_non_finite_rows_and_sorts() {
        let a = DailySeries::new("a", vec![d("2020-01-03"), d("2020-01-01"), d("2020-01-02")], vec![3.0, 1.0, f64::NAN]).unwrap();
        let (p, _) = align(&[a]).unwrap();
        assert_eq!(p.dates, vec![d("2020-01-01"), d("2020-01-03")]);
        assert_eq!(p.column("a").unwrap(), &[1.0, 3.0]);
    }

    #[test]
    fn intraday_write_read_round_trip() {
        let levels: Vec<f64> = (0..391).map(|i| 100.0 * (1.0 + 0.001 * (i as f64).sin())).collect();
        let day = IntradayDay::from_levels(d("2012-03-05"), &levels, 5).unwrap();
        let mut buf = Vec::new();
        write_intraday(&mut buf, std::slice::from_ref(&day)).unwrap();
        let back = read_intraday(buf.as_slice(), &LoadOptions::new(5)).unwrap();
        assert_eq!(back.days.len(), 1);
        for (a, b) in back.days[0].prices.iter().zip(&day.prices) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn panel_csv_round_trip() {
        let a = DailySeries::new("x", vec![d("2020-01-01"), d("2020-01-02")], vec![0.1, -0.25]).unwrap();
        let (p, _) = align(&[a]).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        assert_eq!(DailyPanel::read_csv(buf.as_slice()).unwrap(), p);
    }
}
