//! Density and quantile forecast evaluation: Berkowitz likelihood ratio,
//! weighted log-score comparisons, Diebold–Mariano tests on quantile loss,
//! and the Newey–West long-run variance.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;

const MIN_EVAL: usize = 30;

/// Clipping bound applied to PIT values before the normal inverse.
pub const PIT_CLIP: f64 = 1e-9;

pub fn pit_to_z(pit: &[f64]) -> Vec<f64> {
    pit.iter()
        .map(|u| stats::norm_quantile(u.clamp(PIT_CLIP, 1.0 - PIT_CLIP)))
        .collect()
}

/// Bartlett-kernel long-run variance about the sample mean, population divisor.
pub fn newey_west(series: &[f64], lags: usize) -> Result<f64> {
    let n = series.len();
    if n == 0 || lags >= n {
        return Err(Error::Precondition(format!(
            "newey_west needs lags < length, got lags {lags} for length {n}"
        )));
    }
    let mean = stats::mean(series);
    let d: Vec<f64> = series.iter().map(|v| v - mean).collect();
    let gamma = |l: usize| d[l..].iter().zip(&d[..n - l]).map(|(a, b)| a * b).sum::<f64>() / n as f64;
    let mut v = gamma(0);
    for l in 1..=lags {
        v += 2.0 * (1.0 - l as f64 / (lags as f64 + 1.0)) * gamma(l);
    }
    Ok(v.max(0.0))
}

/// `floor(4 (n/100)^(2/9))`.
pub fn default_lags(n: usize) -> usize {
    (4.0 * (n as f64 / 100.0).powf(2.0 / 9.0)).floor() as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Berkowitz {
    pub lr: f64,
    pub df: f64,
    pub p_value: f64,
    pub mu_hat: f64,
    pub sigma_hat: f64,
    pub rho_hat: f64,
}

/// Concentrated exact AR(1) log-likelihood at `rho`: returns (loglik, mu, sigma²).
fn ar1_profile(z: &[f64], rho: f64) -> (f64, f64, f64) {
    let n = z.len() as f64;
    let one_m = 1.0 - rho;
    let w1 = 1.0 - rho * rho;
    let tail: f64 = z.windows(2).map(|w| w[1] - rho * w[0]).sum();
    let mu = (w1 * z[0] + one_m * tail) / (w1 + (n - 1.0) * one_m * one_m);
    let mut ss = w1 * (z[0] - mu).powi(2);
    for w in z.windows(2) {
        ss += (w[1] - mu - rho * (w[0] - mu)).powi(2);
    }
    let s2 = ss / n;
    let ll = -0.5 * n * (2.0 * std::f64::consts::PI * s2).ln() + 0.5 * w1.ln() - 0.5 * n;
    (ll, mu, s2)
}

/// Likelihood ratio of a Gaussian AR(1) against iid N(0,1), chi-square(3).
pub fn berkowitz(z: &[f64]) -> Result<Berkowitz> {
    if z.len() < MIN_EVAL {
        return Err(Error::Length {
            what: "berkowitz observations",
            needed: MIN_EVAL,
            got: z.len(),
        });
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("berkowitz input contains non-finite values".into()));
    }
    let profile = |r: f64| ar1_profile(z, r).0;
    // Coarse scan then golden-section refinement of the profile likelihood.
    let grid = 400;
    let lim = 1.0 - 1e-6;
    let mut best = (f64::NEG_INFINITY, 0.0);
    for k in 0..=grid {
        let r = -lim + 2.0 * lim * k as f64 / grid as f64;
        let ll = profile(r);
        if ll > best.0 {
            best = (ll, r);
        }
    }
    let h = 2.0 * lim / grid as f64;
    let (mut a, mut b) = ((best.1 - h).max(-lim), (best.1 + h).min(lim));
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (profile(c), profile(d));
    for _ in 0..100 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = profile(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = profile(d);
        }
    }
    let rho = 0.5 * (a + b);
    let (ll1, mu, s2) = ar1_profile(z, rho);
    let n = z.len() as f64;
    let ll0 = -0.5 * n * (2.0 * std::f64::consts::PI).ln() - 0.5 * z.iter().map(|v| v * v).sum::<f64>();
    let lr = (2.0 * (ll1 - ll0)).max(0.0);
    Ok(Berkowitz {
        lr,
        df: 3.0,
        p_value: stats::chi2_sf(lr, 3.0),
        mu_hat: mu,
        sigma_hat: s2.sqrt(),
        rho_hat: rho,
    })
}

/// Weight functions of the weighted likelihood ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Weight {
    #[serde(rename = "NW")]
    Nw,
    #[serde(rename = "CE")]
    Ce,
    #[serde(rename = "TL")]
    Tl,
    #[serde(rename = "RT")]
    Rt,
    #[serde(rename = "LT")]
    Lt,
}

impl Weight {
    pub const ALL: [Weight; 5] = [Weight::Nw, Weight::Ce, Weight::Tl, Weight::Rt, Weight::Lt];

    pub fn apply(self, y: f64) -> f64 {
        match self {
            Weight::Nw => 1.0,
            Weight::Ce => stats::norm_pdf(y),
            Weight::Tl => 1.0 - stats::norm_pdf(y) / stats::norm_pdf(0.0),
            Weight::Rt => stats::norm_cdf(y),
            Weight::Lt => 1.0 - stats::norm_cdf(y),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Weight::Nw => "NW",
            Weight::Ce => "CE",
            Weight::Tl => "TL",
            Weight::Rt => "RT",
            Weight::Lt => "LT",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TestResult {
    pub stat: f64,
    pub p_value: f64,
    pub mean: f64,
}

fn studentized_mean(d: &[f64]) -> Result<TestResult> {
    let n = d.len();
    let mean = stats::mean(d);
    let var = newey_west(d, default_lags(n).min(n - 1))?;
    let scale = d.iter().map(|v| v * v).sum::<f64>() / n as f64;
    if !(var > 1e-24 * scale) || var == 0.0 {
        return Err(Error::DegenerateStatistic(
            "long-run variance of the differential is zero".into(),
        ));
    }
    let stat = mean / (var / n as f64).sqrt();
    Ok(TestResult {
        stat,
        p_value: stats::two_sided_normal_p(stat),
        mean,
    })
}

fn check_pair(a: &[f64], b: &[f64], what: &'static str) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Alignment(format!("{what}: lengths {} and {}", a.len(), b.len())));
    }
    if a.len() < MIN_EVAL {
        return Err(Error::Length {
            what,
            needed: MIN_EVAL,
            got: a.len(),
        });
    }
    Ok(())
}

/// Weighted log-score comparison of forecast `f` against `g`; positive
/// statistics favour `f`.
pub fn ag_test(logf: &[f64], logg: &[f64], y_std: &[f64], weight: Weight) -> Result<TestResult> {
    check_pair(logf, logg, "weighted likelihood ratio observations")?;
    check_pair(logf, y_std, "weighted likelihood ratio observations")?;
    let wlr: Vec<f64> = (0..logf.len())
        .map(|t| weight.apply(y_std[t]) * (logf[t] - logg[t]))
        .collect();
    studentized_mean(&wlr)
}

/// Test of equal expected loss; negative statistics favour `loss_i`.
pub fn dm_test(loss_i: &[f64], loss_j: &[f64]) -> Result<TestResult> {
    check_pair(loss_i, loss_j, "loss differential observations")?;
    let d: Vec<f64> = loss_i.iter().zip(loss_j).map(|(a, b)| a - b).collect();
    studentized_mean(&d)
}

/// Pinball loss of the quantile forecast `q` for realization `y`.
pub fn quantile_loss(y: f64, q: f64, tau: f64) -> f64 {
    let u = y - q;
    if u >= 0.0 {
        tau * u
    } else {
        (tau - 1.0) * u
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub model: String,
    pub berkowitz: Berkowitz,
    pub ag: Vec<(Weight, TestResult)>,
    pub dm: Vec<(f64, TestResult)>,
    pub n_eval: usize,
}

/// Flat rows `model,test,variant,stat,p_value,n`.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub model: String,
    pub test: String,
    pub variant: String,
    pub stat: f64,
    pub p_value: f64,
    pub n: usize,
}

pub fn write_eval<W: Write>(writer: W, rows: &[EvalRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["model", "test", "variant", "stat", "p_value", "n"])?;
    for r in rows {
        w.write_record([
            r.model.clone(),
            r.test.clone(),
            r.variant.clone(),
            r.stat.to_string(),
            r.p_value.to_string(),
            r.n.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Parse the report CSV written by [`write_eval`].
pub fn read_eval<R: std::io::Read>(reader: R) -> Result<Vec<EvalRow>> {
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
        let bad = |j: usize| Error::Parse {
            line,
            msg: format!("bad number `{}`", &rec[j]),
        };
        out.push(EvalRow {
            model: rec[0].to_string(),
            test: rec[1].to_string(),
            variant: rec[2].to_string(),
            stat: rec[3].parse().map_err(|_| bad(3))?,
            p_value: rec[4].parse().map_err(|_| bad(4))?,
            n: rec[5].parse().map_err(|_| bad(5))?,
        });
    }
    Ok(out)
}

impl EvalReport {
    pub fn rows(&self) -> Vec<EvalRow> {
        let mut out = vec![EvalRow {
            model: self.model.clone(),
            test: "berkowitz".into(),
            variant: "LR".into(),
            stat: self.berkowitz.lr,
            p_value: self.berkowitz.p_value,
            n: self.n_eval,
        }];
        for (w, r) in &self.ag {
            out.push(EvalRow {
                model: self.model.clone(),
                test: "ag".into(),
                variant: w.label().into(),
                stat: r.stat,
                p_value: r.p_value,
                n: self.n_eval,
            });
        }
        for (tau, r) in &self.dm {
            out.push(EvalRow {
                model: self.model.clone(),
                test: "dm".into(),
                variant: format!("{tau}"),
                stat: r.stat,
                p_value: r.p_value,
                n: self.n_eval,
            });
        }
        out
    }
}
