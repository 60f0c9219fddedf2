//! Ground-truth generators.
//!
//! Intraday paths follow a Brownian semimartingale on the unit day with
//! optional square-root stochastic variance, compound-Poisson jumps and iid
//! Gaussian microstructure noise. The true integrated variance of every day
//! is returned alongside the observed prices. A daily HAR location-scale
//! generator and a multi-asset market generator built on top of it feed the
//! modelling stages.

use std::io::Write;

use chrono::{Datelike, NaiveDate, Weekday};
use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{DailyPanel, DailySeries, IntradayDay};
use crate::rangevol::{self, LambdaTable};
use crate::stats;

/// Variance dynamics within and across days (time unit: one trading day).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VolModel {
    Constant { sigma2: f64 },
    SquareRoot { kappa: f64, theta: f64, xi: f64 },
}

impl VolModel {
    /// Square-root diffusion with mean reversion 5, long-run variance 1e-4 and
    /// a vol-of-vol inside the Feller bound.
    pub fn default_square_root() -> Self {
        VolModel::SquareRoot {
            kappa: 5.0,
            theta: 1e-4,
            xi: 0.03,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(deny_unknown_fields)]
pub struct JumpSpec {
    /// Expected jumps per day.
    pub intensity: f64,
    /// Standard deviation of a jump in log-return units.
    pub size_sd: f64,
}

impl JumpSpec {
    pub fn none() -> Self {
        Self {
            intensity: 0.0,
            size_sd: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    pub n: usize,
    pub m: usize,
    pub days: usize,
    pub vol: VolModel,
    pub jumps: JumpSpec,
    /// Standard deviation of the additive log-price noise.
    pub noise_omega: f64,
    pub drift: f64,
    pub seed: u64,
    #[serde(default = "default_start")]
    pub start: NaiveDate,
    /// Opening log-price of the first day.
    #[serde(default = "default_log_price")]
    pub log_price0: f64,
}

fn default_start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2003, 1, 2).expect("valid date")
}

fn default_log_price() -> f64 {
    100f64.ln()
}

impl SimSpec {
    pub fn constant(n: usize, m: usize, days: usize, sigma2: f64, seed: u64) -> Self {
        Self {
            n,
            m,
            days,
            vol: VolModel::Constant { sigma2 },
            jumps: JumpSpec::none(),
            noise_omega: 0.0,
            drift: 0.0,
            seed,
            start: default_start(),
            log_price0: default_log_price(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 {
            return Err(Error::Config("sim: n and m must be positive".into()));
        }
        let nonneg = [
            ("noise_omega", self.noise_omega),
            ("jumps.intensity", self.jumps.intensity),
            ("jumps.size_sd", self.jumps.size_sd),
        ];
        for (key, v) in nonneg {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("sim: `{key}` must be finite and >= 0")));
            }
        }
        match self.vol {
            VolModel::Constant { sigma2 } if !(sigma2 >= 0.0) => {
                Err(Error::Config("sim: `vol.sigma2` must be >= 0".into()))
            }
            VolModel::SquareRoot { kappa, theta, xi }
                if !(kappa > 0.0 && theta > 0.0 && xi >= 0.0) =>
            {
                Err(Error::Config(
                    "sim: square-root parameters must be positive".into(),
                ))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimDay {
    pub day: IntradayDay,
    /// Integrated variance of the day.
    pub iv_true: f64,
    pub jumps_sq_sum: f64,
    pub n_jumps: usize,
}

/// Consecutive weekdays starting at `start` (or the next weekday).
pub fn business_days(start: NaiveDate, count: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(count);
    let mut d = start;
    while out.len() < count {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d.succ_opt().expect("date in range");
    }
    out
}

fn day_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Simulate `spec.days` trading days.
pub fn simulate(spec: &SimSpec) -> Result<Vec<SimDay>> {
    spec.validate()?;
    let variances: Vec<f64> = match spec.vol {
        VolModel::Constant { sigma2 } => vec![sigma2; spec.days],
        // Square-root variance is carried across days; filled during the loop.
        VolModel::SquareRoot { theta, .. } => vec![theta; spec.days],
    };
    let dates = business_days(spec.start, spec.days);
    let big_n = spec.n * spec.m;
    let dt = 1.0 / big_n as f64;
    let mut out = Vec::with_capacity(spec.days);
    let mut log_price = spec.log_price0;
    let mut v = variances.first().copied().unwrap_or(0.0);
    for (k, date) in dates.into_iter().enumerate() {
        let mut rng = day_rng(spec.seed, k as u64);
        let mut efficient = Vec::with_capacity(big_n + 1);
        efficient.push(log_price);
        let mut iv = 0.0;
        for _ in 0..big_n {
            let sigma2 = match spec.vol {
                VolModel::Constant { sigma2 } => sigma2,
                VolModel::SquareRoot { kappa, theta, xi } => {
                    let cur = v.max(0.0);
                    let z: f64 = StandardNormal.sample(&mut rng);
                    v = v + kappa * (theta - cur) * dt + xi * (cur * dt).sqrt() * z;
                    cur
                }
            };
            iv += sigma2 * dt;
            let z: f64 = StandardNormal.sample(&mut rng);
            log_price += spec.drift * dt + (sigma2 * dt).sqrt() * z;
            efficient.push(log_price);
        }

        let n_jumps = if spec.jumps.intensity > 0.0 {
            Poisson::new(spec.jumps.intensity)
                .map_err(|e| Error::Config(format!("sim: jump intensity: {e}")))?
                .sample(&mut rng) as usize
        } else {
            0
        };
        let mut jumps_sq_sum = 0.0;
        for _ in 0..n_jumps {
            let at = rng.random_range(1..=big_n);
            let z: f64 = StandardNormal.sample(&mut rng);
            let size = spec.jumps.size_sd * z;
            jumps_sq_sum += size * size;
            for p in efficient.iter_mut().skip(at) {
                *p += size;
            }
        }
        log_price = efficient[big_n];

        let observed: Vec<f64> = if spec.noise_omega > 0.0 {
            efficient
                .iter()
                .map(|p| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    p + spec.noise_omega * z
                })
                .collect()
        } else {
            efficient
        };
        out.push(SimDay {
            day: IntradayDay::new(date, observed, spec.m)?,
            iv_true: iv,
            jumps_sq_sum,
            n_jumps,
        });
    }
    Ok(out)
}

/// Truth CSV `date,iv_true,n_jumps,jumps_sq_sum`.
pub fn write_truth<W: Write>(writer: W, days: &[SimDay]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["date", "iv_true", "n_jumps", "jumps_sq_sum"])?;
    for d in days {
        w.write_record([
            d.day.date.to_string(),
            d.iv_true.to_string(),
            d.n_jumps.to_string(),
            d.jumps_sq_sum.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Rv,
    Rrv,
    Rbv,
    RrvBvbc,
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Estimator::Rv => "rv",
            Estimator::Rrv => "rrv",
            Estimator::Rbv => "rbv",
            Estimator::RrvBvbc => "rrv_bvbc",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McRow {
    pub estimator: &'static str,
    pub days: usize,
    pub bias: f64,
    pub rmse: f64,
    /// Mean of `|estimate - iv| / iv`.
    pub mean_rel_error: f64,
    /// Share of days whose asymptotic 95% interval covers the truth
    /// (RV and RRV only, `NaN` otherwise).
    pub coverage: f64,
}

/// Bias / RMSE / coverage of each estimator against the simulated truth.
pub fn estimator_mc(days: &[SimDay], estimators: &[Estimator], lt: &LambdaTable) -> Result<Vec<McRow>> {
    if days.is_empty() {
        return Ok(Vec::new());
    }
    let est: Vec<rangevol::DayEstimates> = days
        .iter()
        .map(|d| rangevol::day_estimates(&d.day, lt))
        .collect::<Result<_>>()?;
    let mut rows = Vec::with_capacity(estimators.len());
    for &which in estimators {
        let (mut bias, mut sq, mut rel, mut covered) = (0.0, 0.0, 0.0, 0usize);
        for (d, e) in days.iter().zip(&est) {
            let value = match which {
                Estimator::Rv => e.rv,
                Estimator::Rrv => e.rrv,
                Estimator::Rbv => e.rbv,
                Estimator::RrvBvbc => e.rrv_bvbc,
            };
            let err = value - d.iv_true;
            bias += err;
            sq += err * err;
            rel += err.abs() / d.iv_true;
            let var = match which {
                Estimator::Rv => 2.0 * e.rqq / d.day.n_returns() as f64,
                Estimator::Rrv => lt.big_lambda() * e.rqq / d.day.n() as f64,
                _ => f64::NAN,
            };
            if err.abs() <= 1.959963984540054 * var.sqrt() {
                covered += 1;
            }
        }
        let k = days.len() as f64;
        let coverage = match which {
            Estimator::Rv | Estimator::Rrv => covered as f64 / k,
            _ => f64::NAN,
        };
        rows.push(McRow {
            estimator: which.name(),
            days: days.len(),
            bias: bias / k,
            rmse: (sq / k).sqrt(),
            mean_rel_error: rel / k,
            coverage,
        });
    }
    Ok(rows)
}

/// Standardized innovation law of the daily location-scale generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(rename_all = "snake_case")]
pub enum InnovationLaw {
    Normal,
    /// `Exp(1) - 1`: mean 0, variance 1, right-skewed.
    CenteredExponential,
}

impl InnovationLaw {
    pub fn sample<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        match self {
            InnovationLaw::Normal => StandardNormal.sample(rng),
            InnovationLaw::CenteredExponential => {
                let e: f64 = Exp1.sample(rng);
                e - 1.0
            }
        }
    }

    pub fn quantile(self, tau: f64) -> f64 {
        match self {
            InnovationLaw::Normal => stats::norm_quantile(tau),
            InnovationLaw::CenteredExponential => -(1.0 - tau).ln() - 1.0,
        }
    }
}

/// Daily HAR location-scale process
/// `y_t = x_{t-1}'b + (x_{t-1}'s) ε_t` with regressors
/// `[const, y_{t-1}, mean5(y)_{t-1}, vix_{t-1}, sp500_{t-1}, jump_{t-1}]`.
///
/// Quantiles are linear in the regressors:
/// `Q_τ(y_t | x) = x'b + (x's) F_ε^{-1}(τ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(deny_unknown_fields)]
pub struct HarPanelSpec {
    pub days: usize,
    pub burn_in: usize,
    pub location: [f64; 6],
    pub scale: [f64; 6],
    pub innovation: InnovationLaw,
    /// Log-VIX AR(1): mean, persistence, innovation sd.
    pub vix: [f64; 3],
    pub sp500_sd: f64,
    /// Probability of a jump day and mean jump size (exponential).
    pub jump_prob: f64,
    pub jump_mean: f64,
    /// Lower bound applied to `y_t` (keeps a variance-like series positive).
    pub floor: Option<f64>,
    pub seed: u64,
}

impl HarPanelSpec {
    pub fn true_quantile(&self, x: &[f64; 6], tau: f64) -> f64 {
        let loc: f64 = x.iter().zip(&self.location).map(|(a, b)| a * b).sum();
        let sc: f64 = x.iter().zip(&self.scale).map(|(a, b)| a * b).sum();
        loc + sc * self.innovation.quantile(tau)
    }
}

/// Simulate the daily generator. Columns: `y`, `vix`, `sp500`, `jump`.
pub fn simulate_har_panel(spec: &HarPanelSpec) -> Result<DailyPanel> {
    if spec.days < 7 {
        return Err(Error::Config("har panel: need at least 7 days".into()));
    }
    let mut rng = day_rng(spec.seed, 0);
    let total = spec.days + spec.burn_in;
    let mean_x = spec.location[0] / (1.0 - spec.location[1] - spec.location[2]).max(0.05);
    let mut y = vec![mean_x; 5];
    let mut vix = vec![spec.vix[0]; 1];
    let mut sp = vec![0.0; 1];
    let mut jump = vec![0.0; 1];
    for _ in 0..total {
        let t = y.len();
        let x = [
            1.0,
            y[t - 1],
            y[t - 5..t].iter().sum::<f64>() / 5.0,
            vix[vix.len() - 1],
            sp[sp.len() - 1],
            jump[jump.len() - 1],
        ];
        let loc: f64 = x.iter().zip(&spec.location).map(|(a, b)| a * b).sum();
        let sc: f64 = x.iter().zip(&spec.scale).map(|(a, b)| a * b).sum();
        if !(sc > 0.0) {
            return Err(Error::Config(format!("har panel: non-positive scale {sc}")));
        }
        let mut next = loc + sc * spec.innovation.sample(&mut rng);
        if let Some(f) = spec.floor {
            next = next.max(f);
        }
        y.push(next);
        let z: f64 = StandardNormal.sample(&mut rng);
        let v = spec.vix[0] + spec.vix[1] * (vix[vix.len() - 1] - spec.vix[0]) + spec.vix[2] * z;
        vix.push(v);
        let z: f64 = StandardNormal.sample(&mut rng);
        sp.push(spec.sp500_sd * z);
        let j = if rng.random::<f64>() < spec.jump_prob {
            let e: f64 = Exp1.sample(&mut rng);
            spec.jump_mean * e
        } else {
            0.0
        };
        jump.push(j);
    }
    // Align: y has 5 seed values, covariates 1; keep the last `days` rows.
    let y = &y[y.len() - spec.days..];
    let vix = &vix[vix.len() - spec.days..];
    let sp = &sp[sp.len() - spec.days..];
    let jump = &jump[jump.len() - spec.days..];
    let dates = business_days(default_start(), spec.days);
    let mut columns = IndexMap::new();
    columns.insert("y".to_string(), y.to_vec());
    columns.insert("vix".to_string(), vix.to_vec());
    columns.insert("sp500".to_string(), sp.to_vec());
    columns.insert("jump".to_string(), jump.to_vec());
    Ok(DailyPanel { dates, columns })
}

/// Multi-asset market: a common daily variance factor from a HAR
/// location-scale generator, asset-specific loadings, intraday paths.
///
/// The factor is in percent-squared units (daily variance times 1e4), its
/// `sp500` column is the index's percent log return and its `vix` column the
/// log index level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(deny_unknown_fields)]
pub struct MarketSpec {
    pub assets: usize,
    pub n: usize,
    pub m: usize,
    pub factor: HarPanelSpec,
    /// Asset variance loadings are drawn uniformly from this interval.
    pub loading_range: [f64; 2],
    /// Idiosyncratic log-variance noise sd.
    pub idio_sd: f64,
    pub jumps: JumpSpec,
    pub noise_omega: f64,
    pub seed: u64,
}

pub struct MarketSim {
    pub assets: Vec<(String, Vec<SimDay>)>,
    /// S&P 500 close levels.
    pub sp500_close: DailySeries,
    /// VIX index levels (not logged).
    pub vix_level: DailySeries,
}

pub fn simulate_market(spec: &MarketSpec) -> Result<MarketSim> {
    if spec.assets == 0 {
        return Err(Error::Config("market: need at least one asset".into()));
    }
    let factor = simulate_har_panel(&spec.factor)?;
    let f = factor.column("y")?;
    let vix = factor.column("vix")?;
    let dates = factor.dates.clone();
    let mut rng = day_rng(spec.seed, u64::MAX);
    let loadings: Vec<f64> = (0..spec.assets)
        .map(|_| rng.random_range(spec.loading_range[0]..=spec.loading_range[1]))
        .collect();

    let mut assets = Vec::with_capacity(spec.assets);
    for (a, load) in loadings.iter().enumerate() {
        let mut days = Vec::with_capacity(dates.len());
        let mut log_price = 100f64.ln();
        for (k, date) in dates.iter().enumerate() {
            let z: f64 = StandardNormal.sample(&mut rng);
            let sigma2 = (load * f[k] * 1e-4 * (spec.idio_sd * z).exp()).max(1e-12);
            let day_spec = SimSpec {
                n: spec.n,
                m: spec.m,
                days: 1,
                vol: VolModel::Constant { sigma2 },
                jumps: spec.jumps,
                noise_omega: spec.noise_omega,
                drift: 0.0,
                seed: spec.seed ^ ((a as u64 + 1) << 32) ^ k as u64,
                start: *date,
                log_price0: log_price,
            };
            let mut sim = simulate(&day_spec)?;
            let day = sim.pop().expect("one simulated day");
            log_price = *day.day.prices.last().expect("non-empty day");
            days.push(day);
        }
        assets.push((format!("A{:02}", a + 1), days));
    }

    let mut level = 1000.0f64;
    let closes: Vec<f64> = factor
        .column("sp500")?
        .iter()
        .map(|r| {
            level *= (r / 100.0).exp();
            level
        })
        .collect();
    Ok(MarketSim {
        assets,
        sp500_close: DailySeries::new("sp500", dates.clone(), closes)?,
        vix_level: DailySeries::new("vix", dates, vix.iter().map(|v| v.exp()).collect())?,
    })
}
