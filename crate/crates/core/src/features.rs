//! Model inputs: the first principal component of a cross-section of
//! volatility series, HAR averages, and lagged design matrices for the
//! conditional quantile models.

use std::io::{Read, Write};

use chrono::NaiveDate;
use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which second-moment matrix the principal components diagonalize.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(rename_all = "snake_case")]
pub enum PcaBasis {
    #[default]
    Covariance,
    Correlation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaResult {
    /// Unit-norm loadings with a nonnegative sum.
    pub loadings: Vec<f64>,
    pub scores: Vec<f64>,
    pub explained_fraction: f64,
    /// Column means removed before projection.
    pub center: Vec<f64>,
}

/// First principal component of the covariance matrix of `columns`.
pub fn first_pc(columns: &[&[f64]]) -> Result<PcaResult> {
    first_pc_with(columns, PcaBasis::Covariance)
}

pub fn first_pc_with(columns: &[&[f64]], basis: PcaBasis) -> Result<PcaResult> {
    let k = columns.len();
    if k < 2 {
        return Err(Error::Length {
            what: "principal components columns",
            needed: 2,
            got: k,
        });
    }
    let rows = columns[0].len();
    if rows < 3 {
        return Err(Error::Length {
            what: "principal components rows",
            needed: 3,
            got: rows,
        });
    }
    if columns.iter().any(|c| c.len() != rows) {
        return Err(Error::Alignment("principal components columns differ in length".into()));
    }
    if columns.iter().any(|c| c.iter().any(|v| !v.is_finite())) {
        return Err(Error::Domain("principal components input has missing values".into()));
    }

    let center: Vec<f64> = columns
        .iter()
        .map(|c| c.iter().sum::<f64>() / rows as f64)
        .collect();
    let mut scale = vec![1.0; k];
    let mut data = DMatrix::<f64>::zeros(rows, k);
    for (j, c) in columns.iter().enumerate() {
        for (i, v) in c.iter().enumerate() {
            data[(i, j)] = v - center[j];
        }
    }
    if basis == PcaBasis::Correlation {
        for (j, s) in scale.iter_mut().enumerate() {
            let sd = (data.column(j).norm_squared() / (rows as f64 - 1.0)).sqrt();
            if sd == 0.0 {
                return Err(Error::Degenerate(format!("column {j} is constant")));
            }
            *s = sd;
            data.column_mut(j).unscale_mut(sd);
        }
    }
    let cov = data.transpose() * &data / (rows as f64 - 1.0);
    let total: f64 = cov.trace();
    if !(total > 0.0) {
        return Err(Error::Degenerate("all columns are constant".into()));
    }
    let eig = SymmetricEigen::new(cov);
    let (top, &top_value) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("at least two eigenvalues");
    let mut loadings: Vec<f64> = eig.eigenvectors.column(top).iter().copied().collect();
    let norm = loadings.iter().map(|v| v * v).sum::<f64>().sqrt();
    let flip = if loadings.iter().sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
    for v in &mut loadings {
        *v *= flip / norm;
    }
    let scores: Vec<f64> = (0..rows)
        .map(|i| (0..k).map(|j| data[(i, j)] * loadings[j]).sum())
        .collect();
    Ok(PcaResult {
        loadings,
        scores,
        explained_fraction: (top_value / total).clamp(0.0, 1.0),
        center,
    })
}

/// Average of the `m` values ending at 1-based position `t`:
/// `(y_t + y_{t-1} + ... + y_{t-m+1}) / m`.
pub fn har_mean(y: &[f64], t: usize, m: usize) -> Result<f64> {
    if m == 0 || t < m || t > y.len() {
        return Err(Error::Index(format!(
            "har_mean needs m <= t <= {}, got t = {t}, m = {m}",
            y.len()
        )));
    }
    Ok(y[t - m..t].iter().sum::<f64>() / m as f64)
}

/// Options for [`build_design`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignOptions {
    /// Add the 21-day HAR average as column `mean21` after `mean5`.
    #[serde(default)]
    pub monthly: bool,
}

pub const DESIGN_COLUMNS: [&str; 6] = ["const", "lag1", "mean5", "vix", "sp500", "jump"];

/// Response plus lagged regressors, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantDesign {
    pub dates: Vec<NaiveDate>,
    pub names: Vec<String>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl QuantDesign {
    pub fn from_parts(dates: Vec<NaiveDate>, names: Vec<String>, x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        let n = y.len();
        if dates.len() != n || x.len() != n * names.len() {
            return Err(Error::Alignment(format!(
                "design parts disagree: {} dates, {} responses, {} cells for {} columns",
                dates.len(),
                n,
                x.len(),
                names.len()
            )));
        }
        Ok(Self { dates, names, x, y })
    }

    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    pub fn n_cols(&self) -> usize {
        self.names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.n_cols();
        &self.x[i * p..(i + 1) * p]
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Config(format!("design has no column `{name}`")))
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let j = self.column_index(name)?;
        Ok((0..self.n_obs()).map(|i| self.row(i)[j]).collect())
    }

    /// Keep the named columns, in the given order.
    pub fn select(&self, names: &[&str]) -> Result<QuantDesign> {
        let idx: Vec<usize> = names.iter().map(|n| self.column_index(n)).collect::<Result<_>>()?;
        let mut x = Vec::with_capacity(self.n_obs() * idx.len());
        for i in 0..self.n_obs() {
            let row = self.row(i);
            x.extend(idx.iter().map(|&j| row[j]));
        }
        Ok(QuantDesign {
            dates: self.dates.clone(),
            names: names.iter().map(|s| s.to_string()).collect(),
            x,
            y: self.y.clone(),
        })
    }

    /// Rows `start..end`.
    pub fn slice(&self, start: usize, end: usize) -> QuantDesign {
        let p = self.n_cols();
        QuantDesign {
            dates: self.dates[start..end].to_vec(),
            names: self.names.clone(),
            x: self.x[start * p..end * p].to_vec(),
            y: self.y[start..end].to_vec(),
        }
    }

    /// Rows in the order given by `idx` (repeats allowed).
    pub fn take_rows(&self, idx: &[usize]) -> QuantDesign {
        let p = self.n_cols();
        let mut x = Vec::with_capacity(idx.len() * p);
        for &i in idx {
            x.extend_from_slice(self.row(i));
        }
        QuantDesign {
            dates: idx.iter().map(|&i| self.dates[i]).collect(),
            names: self.names.clone(),
            x,
            y: idx.iter().map(|&i| self.y[i]).collect(),
        }
    }

    /// CSV `date,<columns...>,y`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["date".to_string()];
        header.extend(self.names.iter().cloned());
        header.push("y".into());
        w.write_record(&header)?;
        for i in 0..self.n_obs() {
            let mut rec = vec![self.dates[i].to_string()];
            rec.extend(self.row(i).iter().map(|v| v.to_string()));
            rec.push(self.y[i].to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<QuantDesign> {
        let mut r = csv::Reader::from_reader(reader);
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        if header.len() < 3 || header[0] != "date" || header[header.len() - 1] != "y" {
            return Err(Error::Parse {
                line: 1,
                msg: "design header must be date,<columns>,y".into(),
            });
        }
        let names = header[1..header.len() - 1].to_vec();
        let (mut dates, mut x, mut y) = (Vec::new(), Vec::new(), Vec::new());
        for (k, rec) in r.records().enumerate() {
            let rec = rec?;
            let line = k + 2;
            let bad = |msg: String| Error::Parse { line, msg };
            dates.push(
                NaiveDate::parse_from_str(&rec[0], "%Y-%m-%d").map_err(|e| bad(e.to_string()))?,
            );
            for j in 1..header.len() {
                let v: f64 = rec[j].parse().map_err(|e| bad(format!("column {}: {e}", header[j])))?;
                if j == header.len() - 1 {
                    y.push(v);
                } else {
                    x.push(v);
                }
            }
        }
        QuantDesign::from_parts(dates, names, x, y)
    }
}

/// Lagged design `[const, lag1, mean5, vix, sp500, jump]` with response `y_t`.
///
/// Row `t` only uses values dated `t-1` or earlier; the first five dates
/// (twenty-one with the monthly term) are dropped.
pub fn build_design(
    dates: &[NaiveDate],
    y: &[f64],
    vix: &[f64],
    sp500: &[f64],
    jump: &[f64],
    opts: DesignOptions,
) -> Result<QuantDesign> {
    let len = y.len();
    if [dates.len(), vix.len(), sp500.len(), jump.len()]
        .iter()
        .any(|&l| l != len)
    {
        return Err(Error::Alignment("design inputs differ in length".into()));
    }
    if dates.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Alignment("design dates must be strictly ascending".into()));
    }
    let lookback = if opts.monthly { 21 } else { 5 };
    if len < lookback + 2 {
        return Err(Error::Length {
            what: "design input dates",
            needed: lookback + 2,
            got: len,
        });
    }
    let mut names: Vec<String> = DESIGN_COLUMNS.iter().map(|s| s.to_string()).collect();
    if opts.monthly {
        names.insert(3, "mean21".into());
    }
    let rows = len - lookback;
    let mut x = Vec::with_capacity(rows * names.len());
    for t in lookback..len {
        x.push(1.0);
        x.push(y[t - 1]);
        x.push(har_mean(y, t, 5)?);
        if opts.monthly {
            x.push(har_mean(y, t, 21)?);
        }
        x.push(vix[t - 1]);
        x.push(sp500[t - 1]);
        x.push(jump[t - 1]);
    }
    QuantDesign::from_parts(dates[lookback..].to_vec(), names, x, y[lookback..].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn dates(n: usize) -> Vec<NaiveDate> {
        crate::simulate::business_days(NaiveDate::from_ymd_opt(2010, 1, 4).unwrap(), n)
    }

    fn normals(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn identical_columns_share_one_component() {
        let a = normals(50, 1);
        let r = first_pc(&[&a, &a]).unwrap();
        let h = 1.0 / 2f64.sqrt();
        assert!((r.loadings[0] - h).abs() < 1e-12 && (r.loadings[1] - h).abs() < 1e-12);
        assert!((r.explained_fraction - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uncorrelated_columns_split_variance() {
        let (a, b) = (normals(20_000, 2), normals(20_000, 3));
        let r = first_pc(&[&a, &b]).unwrap();
        assert!((r.explained_fraction - 0.5).abs() < 0.02, "{}", r.explained_fraction);
    }

    #[test]
    fn common_factor_share_is_recovered() {
        // Unit factor, loadings 1: factor share per column = 1 / (1 + s²).
        // Across 16 columns the top eigenvalue is 16 + s², total 16(1 + s²).
        let k = 16;
        let s2: f64 = 16.0 * (1.0 - 0.77) / (16.0 * 0.77 - 1.0);
        let f = normals(5000, 4);
        let cols: Vec<Vec<f64>> = (0..k)
            .map(|j| {
                let e = normals(5000, 100 + j as u64);
                f.iter().zip(&e).map(|(a, b)| a + s2.sqrt() * b).collect()
            })
            .collect();
        let refs: Vec<&[f64]> = cols.iter().map(|c| c.as_slice()).collect();
        let r = first_pc(&refs).unwrap();
        assert!((r.explained_fraction - 0.77).abs() < 0.03, "{}", r.explained_fraction);
        let norm: f64 = r.loadings.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-10);
        assert!(r.loadings.iter().sum::<f64>() >= 0.0);
    }

    #[test]
    fn scaling_the_panel_scales_scores() {
        let (a, b) = (normals(100, 5), normals(100, 6));
        let b: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + 0.5 * y).collect();
        let r1 = first_pc(&[&a, &b]).unwrap();
        let a3: Vec<f64> = a.iter().map(|v| 3.0 * v).collect();
        let b3: Vec<f64> = b.iter().map(|v| 3.0 * v).collect();
        let r3 = first_pc(&[&a3, &b3]).unwrap();
        assert!((r1.explained_fraction - r3.explained_fraction).abs() < 1e-12);
        for (s1, s3) in r1.scores.iter().zip(&r3.scores) {
            assert!((3.0 * s1 - s3).abs() < 1e-10);
        }
    }

    #[test]
    fn scores_follow_the_cross_sectional_mean() {
        let f = normals(300, 7);
        let cols: Vec<Vec<f64>> = (0..4)
            .map(|j| {
                let e = normals(300, 50 + j);
                f.iter().zip(&e).map(|(a, b)| -(a + 0.3 * b)).collect()
            })
            .collect();
        let refs: Vec<&[f64]> = cols.iter().map(|c| c.as_slice()).collect();
        let r = first_pc(&refs).unwrap();
        let avg: Vec<f64> = (0..300).map(|i| cols.iter().map(|c| c[i]).sum::<f64>() / 4.0).collect();
        let cov: f64 = r.scores.iter().zip(&avg).map(|(s, a)| s * a).sum();
        assert!(cov > 0.0);
    }

    #[test]
    fn constant_panel_is_degenerate() {
        let a = [1.0; 10];
        assert!(matches!(first_pc(&[&a, &a]), Err(Error::Degenerate(_))));
        assert!(matches!(first_pc(&[&a[..2], &a[..2]]), Err(Error::Length { .. })));
    }

    #[test]
    fn har_mean_examples() {
        assert_eq!(har_mean(&[1.0, 2.0, 3.0, 4.0, 5.0], 5, 5).unwrap(), 3.0);
        assert_eq!(har_mean(&[7.0; 9], 9, 5).unwrap(), 7.0);
        assert_eq!(har_mean(&[1.0, 2.0, 3.0], 2, 1).unwrap(), 2.0);
        assert!(matches!(har_mean(&[1.0, 2.0], 1, 2), Err(Error::Index(_))));
    }

    #[test]
    fn design_on_a_ramp_has_no_look_ahead() {
        let n = 30;
        let y: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let vix: Vec<f64> = (0..n).map(|i| 100.0 + i as f64).collect();
        let sp: Vec<f64> = (0..n).map(|i| -(i as f64)).collect();
        let jump: Vec<f64> = (0..n).map(|i| 0.5 * i as f64).collect();
        let d = build_design(&dates(n), &y, &vix, &sp, &jump, DesignOptions::default()).unwrap();
        assert_eq!(d.n_obs(), n - 5);
        assert_eq!(d.names, DESIGN_COLUMNS);
        for i in 0..d.n_obs() {
            let t = i + 5;
            let r = d.row(i);
            assert_eq!(d.y[i], y[t]);
            assert_eq!(r[1].to_bits(), y[t - 1].to_bits());
            assert_eq!(r[2], (t as f64 - 5.0 + t as f64 - 1.0) / 2.0);
            assert_eq!(r[3], vix[t - 1]);
            assert_eq!(r[4], sp[t - 1]);
            assert_eq!(r[5], jump[t - 1]);
            assert_eq!(d.dates[i], dates(n)[t]);
        }
    }

    #[test]
    fn seven_dates_give_two_rows() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0];
        let d = build_design(&dates(7), &v, &v, &v, &v, DesignOptions::default()).unwrap();
        assert_eq!(d.n_obs(), 2);
    }

    #[test]
    fn unsorted_or_misaligned_inputs_are_rejected() {
        let v = [1.0; 8];
        let mut ds = dates(8);
        ds.swap(2, 5);
        assert!(matches!(
            build_design(&ds, &v, &v, &v, &v, DesignOptions::default()),
            Err(Error::Alignment(_))
        ));
        assert!(matches!(
            build_design(&dates(8), &v, &v[..7], &v, &v, DesignOptions::default()),
            Err(Error::Alignment(_))
        ));
    }

    #[test]
    fn monthly_term_is_optional() {
        let n = 40;
        let y: Vec<f64> = (0..n).map(|i| (i * i) as f64).collect();
        let d = build_design(&dates(n), &y, &y, &y, &y, DesignOptions { monthly: true }).unwrap();
        assert_eq!(d.n_obs(), n - 21);
        let j = d.column_index("mean21").unwrap();
        assert_eq!(d.row(0)[j], har_mean(&y, 21, 21).unwrap());
    }

    #[test]
    fn select_and_csv_round_trip() {
        let n = 12;
        let y: Vec<f64> = (0..n).map(|i| (i as f64 * 0.3).sin()).collect();
        let d = build_design(&dates(n), &y, &y, &y, &y, DesignOptions::default()).unwrap();
        let r = d.select(&["const", "lag1", "sp500"]).unwrap();
        assert_eq!(r.n_cols(), 3);
        assert_eq!(r.column("sp500").unwrap(), d.column("sp500").unwrap());
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("date,const,lag1,mean5,vix,sp500,jump,y\n"));
        assert_eq!(QuantDesign::read_csv(buf.as_slice()).unwrap(), d);
        assert!(d.select(&["nope"]).is_err());
    }
}
