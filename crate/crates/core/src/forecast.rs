//! Rolling one-step-ahead density forecasts from the quantile model and the
//! HARX-GJR benchmark, with the inputs needed for their comparison.
//!
//! Each estimation window of `window` rows is followed by up to `step`
//! forecast rows, so forecast days never overlap and every model is refitted
//! once per block.

use std::io::Write;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::benchmark::{self, HarxGjrParams, InnovKind, Law, LevelPredictive, Predictive};
use crate::density::{self, QuantileCurve};
use crate::error::{Error, Result};
use crate::evaluate::{self, EvalReport, Weight};
use crate::features::QuantDesign;
use crate::quantreg;
use crate::stats;

/// Levels at which quantile forecasts are compared.
pub const DM_TAUS: [f64; 3] = [0.1, 0.5, 0.9];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(deny_unknown_fields)]
pub struct ForecastOptions {
    #[serde(default = "density::density_grid")]
    pub taus: Vec<f64>,
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default = "default_step")]
    pub step: usize,
    #[serde(default = "default_innov")]
    pub benchmark: InnovKind,
    /// Fit the benchmark to `ln y` and back-transform its density.
    #[serde(default)]
    pub benchmark_log_response: bool,
}

fn default_window() -> usize {
    100
}
fn default_step() -> usize {
    10
}
fn default_innov() -> InnovKind {
    InnovKind::Nig
}

impl Default for ForecastOptions {
    fn default() -> Self {
        Self {
            taus: density::density_grid(),
            window: default_window(),
            step: default_step(),
            benchmark: default_innov(),
            benchmark_log_response: false,
        }
    }
}

/// Benchmark predictive on the level scale.
#[derive(Debug, Clone, PartialEq)]
pub enum BenchPredictive {
    Level(Predictive),
    Log(LevelPredictive),
}

impl BenchPredictive {
    pub fn log_density(&self, v: f64) -> f64 {
        match self {
            Self::Level(p) => p.log_density(v),
            Self::Log(p) => p.log_density(v),
        }
    }

    pub fn cdf(&self, v: f64) -> f64 {
        match self {
            Self::Level(p) => p.cdf(v),
            Self::Log(p) => p.cdf(v),
        }
    }

    pub fn quantile(&self, tau: f64) -> Result<f64> {
        match self {
            Self::Level(p) => p.quantile(tau),
            Self::Log(p) => p.quantile(tau),
        }
    }
}

/// One forecast day.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastDay {
    pub date: NaiveDate,
    pub y: f64,
    /// Realization standardized by the estimation window's mean and sd.
    pub y_std: f64,
    pub curve: QuantileCurve,
    pub bench: BenchPredictive,
    /// Index of the estimation window whose benchmark parameters were used.
    pub bench_window: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowLog {
    pub start: usize,
    pub end_date: NaiveDate,
    pub qr_error: Option<String>,
    pub bench_error: Option<String>,
    pub bench_params: Option<HarxGjrParams>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastRun {
    pub options: ForecastOptions,
    pub days: Vec<ForecastDay>,
    pub windows: Vec<WindowLog>,
}

/// Number of forecast blocks for `n` rows.
pub fn block_count(n: usize, window: usize, step: usize) -> usize {
    if n <= window || step == 0 {
        0
    } else {
        (n - window).div_ceil(step)
    }
}

fn validate(design: &QuantDesign, opts: &ForecastOptions) -> Result<()> {
    if opts.step == 0 {
        return Err(Error::Config("forecast step must be at least 1".into()));
    }
    if opts.taus.len() < 2
        || opts.taus.iter().any(|t| !(*t > 0.0 && *t < 1.0))
        || opts.taus.windows(2).any(|w| w[1] <= w[0])
    {
        return Err(Error::Config("forecast taus must be ascending in (0, 1)".into()));
    }
    if design.n_obs() <= opts.window {
        return Err(Error::Length {
            what: "forecast rows",
            needed: opts.window + 1,
            got: design.n_obs(),
        });
    }
    Ok(())
}

struct Block {
    log: WindowLog,
    days: Vec<(usize, QuantileCurve, f64)>,
}

fn fit_block(design: &QuantDesign, opts: &ForecastOptions, b: usize) -> Block {
    let n = design.n_obs();
    let start = b * opts.step;
    let end = start + opts.window;
    let est = design.slice(start, end);
    let mut log = WindowLog {
        start,
        end_date: design.dates[end - 1],
        qr_error: None,
        bench_error: None,
        bench_params: None,
    };
    let bench_design = if opts.benchmark_log_response {
        benchmark::log_response_variant(&est)
    } else {
        Ok(est.clone())
    };
    match bench_design.and_then(|d| benchmark::fit_harx_gjr(&d, opts.benchmark)) {
        Ok(fit) => log.bench_params = Some(fit.params),
        Err(e) => log.bench_error = Some(e.to_string()),
    }
    let fits: Result<Vec<_>> = opts.taus.iter().map(|&t| quantreg::fit(&est, t)).collect();
    let mean = stats::mean(&est.y);
    let sd = stats::sample_sd(&est.y);
    let mut days = Vec::new();
    match fits {
        Ok(fits) => {
            for i in end..(end + opts.step).min(n) {
                let q: Vec<f64> = fits.iter().map(|f| f.predict(design.row(i))).collect();
                match QuantileCurve::new(&opts.taus, &q) {
                    Ok(c) => days.push((i, c, (design.y[i] - mean) / sd)),
                    Err(e) => log.qr_error = Some(e.to_string()),
                }
            }
        }
        Err(e) => log.qr_error = Some(e.to_string()),
    }
    Block { log, days }
}

fn bench_predictive(
    design: &QuantDesign,
    opts: &ForecastOptions,
    params: &HarxGjrParams,
    law: &Law,
    start: usize,
    i: usize,
) -> Result<BenchPredictive> {
    // Variance filtered from the window start through the day before `i`.
    let hist = design.slice(start, i);
    let hist = if opts.benchmark_log_response {
        benchmark::log_response_variant(&hist)?
    } else {
        hist
    };
    let h = params.next_variance(&hist)?;
    let pred = benchmark::forecast_with_law(params, design.row(i), h, law.clone())?;
    Ok(if opts.benchmark_log_response {
        BenchPredictive::Log(LevelPredictive(pred))
    } else {
        BenchPredictive::Level(pred)
    })
}

/// Rolling forecasts. A benchmark window that fails to fit reuses the most
/// recent successful parameters; days with no usable benchmark are dropped.
pub fn rolling_forecast(design: &QuantDesign, opts: &ForecastOptions) -> Result<ForecastRun> {
    validate(design, opts)?;
    let nb = block_count(design.n_obs(), opts.window, opts.step);
    let blocks: Vec<Block> = (0..nb).into_par_iter().map(|b| fit_block(design, opts, b)).collect();
    let mut days = Vec::new();
    let mut last: Option<(usize, HarxGjrParams, Law)> = None;
    for (b, block) in blocks.iter().enumerate() {
        if let Some(p) = &block.log.bench_params {
            last = Some((b, p.clone(), Law::for_innovation(p.innov)?));
        }
        let Some((wb, params, law)) = &last else { continue };
        for (i, curve, y_std) in &block.days {
            let start = blocks[*wb].log.start;
            let Ok(bench) = bench_predictive(design, opts, params, law, start, *i) else {
                continue;
            };
            days.push(ForecastDay {
                date: design.dates[*i],
                y: design.y[*i],
                y_std: *y_std,
                curve: curve.clone(),
                bench,
                bench_window: *wb,
            });
        }
    }
    Ok(ForecastRun {
        options: opts.clone(),
        days,
        windows: blocks.into_iter().map(|b| b.log).collect(),
    })
}

/// Per-day scores used by the evaluation stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub date: NaiveDate,
    pub y: f64,
    pub y_std: f64,
    pub qr_logf: f64,
    pub bench_logf: f64,
    pub qr_pit: f64,
    pub bench_pit: f64,
    pub qr_q10: f64,
    pub qr_q50: f64,
    pub qr_q90: f64,
    pub bench_q10: f64,
    pub bench_q50: f64,
    pub bench_q90: f64,
}

impl ForecastRun {
    pub fn scores(&self) -> Result<Vec<ScoreRow>> {
        self.days
            .iter()
            .map(|d| {
                let qq = |t| d.curve.quantile(t);
                let bq = |t| d.bench.quantile(t);
                Ok(ScoreRow {
                    date: d.date,
                    y: d.y,
                    y_std: d.y_std,
                    qr_logf: d.curve.log_density(d.y),
                    bench_logf: d.bench.log_density(d.y),
                    qr_pit: d.curve.pit(d.y),
                    bench_pit: d.bench.cdf(d.y),
                    qr_q10: qq(DM_TAUS[0])?,
                    qr_q50: qq(DM_TAUS[1])?,
                    qr_q90: qq(DM_TAUS[2])?,
                    bench_q10: bq(DM_TAUS[0])?,
                    bench_q50: bq(DM_TAUS[1])?,
                    bench_q90: bq(DM_TAUS[2])?,
                })
            })
            .collect()
    }

    /// Benchmark quantiles on the forecast tau grid, for export next to the
    /// quantile-model curves.
    pub fn bench_curve_rows(&self) -> Result<Vec<(NaiveDate, f64, f64)>> {
        let mut out = Vec::new();
        for d in &self.days {
            for &t in &self.options.taus {
                out.push((d.date, t, d.bench.quantile(t)?));
            }
        }
        Ok(out)
    }
}

pub fn write_scores<W: Write>(writer: W, rows: &[ScoreRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_scores<R: std::io::Read>(reader: R) -> Result<Vec<ScoreRow>> {
    let mut r = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for (i, row) in r.deserialize().enumerate() {
        out.push(row.map_err(|e| Error::Parse {
            line: i + 2,
            msg: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Benchmark quantiles in the `date,tau,quantile` curve schema.
pub fn write_quantile_rows<W: Write>(writer: W, rows: &[(NaiveDate, f64, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["date", "tau", "quantile"])?;
    for (d, t, q) in rows {
        w.write_record([d.to_string(), t.to_string(), q.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Both models' evaluation reports: Berkowitz on each, and the weighted
/// log-score and quantile-loss comparisons of the quantile model against
/// the benchmark (positive AG and negative DM favour the quantile model).
pub fn evaluate_scores(rows: &[ScoreRow], qr_name: &str, bench_name: &str) -> Result<(EvalReport, EvalReport)> {
    let col = |f: fn(&ScoreRow) -> f64| rows.iter().map(f).collect::<Vec<f64>>();
    let (qf, bf, ys) = (col(|r| r.qr_logf), col(|r| r.bench_logf), col(|r| r.y_std));
    let y = col(|r| r.y);
    let mut ag = Vec::new();
    for w in Weight::ALL {
        ag.push((w, evaluate::ag_test(&qf, &bf, &ys, w)?));
    }
    type Pick = fn(&ScoreRow) -> f64;
    let qcols: [(Pick, Pick); 3] = [
        (|r| r.qr_q10, |r| r.bench_q10),
        (|r| r.qr_q50, |r| r.bench_q50),
        (|r| r.qr_q90, |r| r.bench_q90),
    ];
    let mut dm = Vec::new();
    for (k, (fq, fb)) in qcols.iter().enumerate() {
        let tau = DM_TAUS[k];
        let li: Vec<f64> = rows.iter().zip(&y).map(|(r, v)| evaluate::quantile_loss(*v, fq(r), tau)).collect();
        let lj: Vec<f64> = rows.iter().zip(&y).map(|(r, v)| evaluate::quantile_loss(*v, fb(r), tau)).collect();
        dm.push((tau, evaluate::dm_test(&li, &lj)?));
    }
    let qr = EvalReport {
        model: qr_name.to_string(),
        berkowitz: evaluate::berkowitz(&evaluate::pit_to_z(&col(|r| r.qr_pit)))?,
        ag,
        dm,
        n_eval: rows.len(),
    };
    let bench = EvalReport {
        model: bench_name.to_string(),
        berkowitz: evaluate::berkowitz(&evaluate::pit_to_z(&col(|r| r.bench_pit)))?,
        ag: Vec::new(),
        dm: Vec::new(),
        n_eval: rows.len(),
    };
    Ok((qr, bench))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::{simulate_har_panel, HarPanelSpec, InnovationLaw};

    fn panel_design(days: usize, seed: u64) -> QuantDesign {
        let spec = HarPanelSpec {
            days,
            burn_in: 100,
            location: [0.2, 0.3, 0.2, 0.1, -0.5, 0.2],
            scale: [0.1, 0.0, 0.0, 0.05, 0.0, 0.0],
            innovation: InnovationLaw::Normal,
            vix: [1.0, 0.9, 0.1],
            sp500_sd: 0.5,
            jump_prob: 0.2,
            jump_mean: 0.5,
            floor: None,
            seed,
        };
        let p = simulate_har_panel(&spec).unwrap();
        crate::features::build_design(
            &p.dates,
            p.column("y").unwrap(),
            p.column("vix").unwrap(),
            p.column("sp500").unwrap(),
            p.column("jump").unwrap(),
            Default::default(),
        )
        .unwrap()
    }

    #[test]
    fn block_counts() {
        assert_eq!(block_count(600, 100, 10), 50);
        assert_eq!(block_count(605, 100, 10), 51);
        assert_eq!(block_count(100, 100, 10), 0);
    }

    #[test]
    fn forecasts_cover_every_post_window_day_once() {
        let d = panel_design(400, 1);
        let opts = ForecastOptions {
            benchmark: InnovKind::Gaussian,
            ..Default::default()
        };
        let run = rolling_forecast(&d, &opts).unwrap();
        let expect = d.n_obs() - opts.window;
        let fails = run.windows.iter().filter(|w| w.bench_error.is_some()).count();
        assert!(fails < run.windows.len(), "{:?}", run.windows.iter().map(|w| w.bench_error.clone()).collect::<Vec<_>>());
        assert!(run.days.len() <= expect && run.days.len() + opts.step * fails >= expect);
        assert!(run.days.windows(2).all(|w| w[0].date < w[1].date));
        let rows = run.scores().unwrap();
        assert!(rows.iter().all(|r| r.qr_pit > 0.0 && r.qr_pit < 1.0 && r.qr_logf.is_finite()));
        let mut buf = Vec::new();
        write_scores(&mut buf, &rows).unwrap();
        assert_eq!(read_scores(&buf[..]).unwrap(), rows);
    }

    #[test]
    fn forecasts_are_deterministic() {
        let d = panel_design(300, 2);
        let opts = ForecastOptions {
            benchmark: InnovKind::Gaussian,
            ..Default::default()
        };
        let a = rolling_forecast(&d, &opts).unwrap().scores().unwrap();
        let b = rolling_forecast(&d, &opts).unwrap().scores().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_short_designs_and_bad_options() {
        let d = panel_design(100, 3);
        assert!(matches!(
            rolling_forecast(&d, &ForecastOptions::default()),
            Err(Error::Length { .. })
        ));
        let opts = ForecastOptions {
            step: 0,
            window: 50,
            ..Default::default()
        };
        assert!(matches!(rolling_forecast(&d, &opts), Err(Error::Config(_))));
    }
}
