//! Pipeline stages. Every stage reads its inputs from the artifact directory
//! written by the stages before it, so any stage can be rerun on its own.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use anyhow::{anyhow, bail, Context, Result};
use chrono::NaiveDate;
use rangequant::benchmark::Innovation;
use rangequant::density;
use rangequant::evaluate::{self, EvalRow};
use rangequant::features::{self, DesignOptions, QuantDesign};
use rangequant::forecast::{self, ScoreRow};
use rangequant::ingest::{self, DailySeries, LoadOptions};
use rangequant::quantreg::{self, TestRow};
use rangequant::rangevol::{self, DayEstimates};
use rangequant::simulate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ConfigError, DataConfig, RunConfig, MARKET};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Simulate,
    Estimate,
    Fit,
    Roll,
    Forecast,
    Evaluate,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Simulate,
        Stage::Estimate,
        Stage::Fit,
        Stage::Roll,
        Stage::Forecast,
        Stage::Evaluate,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Simulate => "simulate",
            Stage::Estimate => "estimate",
            Stage::Fit => "fit",
            Stage::Roll => "roll",
            Stage::Forecast => "forecast",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        }
    }
}

/// Shared state of one invocation.
pub struct Ctx {
    pub cfg: RunConfig,
    pub out: PathBuf,
    written: Mutex<Vec<String>>,
}

impl Ctx {
    pub fn new(cfg: RunConfig, out: PathBuf) -> Self {
        Self {
            cfg,
            out,
            written: Mutex::new(Vec::new()),
        }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    /// Create an output file and record it for the manifest.
    pub fn create(&self, rel: &str) -> Result<BufWriter<File>> {
        let path = self.path(rel);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        self.written.lock().expect("output list lock").push(rel.to_string());
        Ok(BufWriter::new(file))
    }

    pub fn open(&self, rel: &str) -> Result<BufReader<File>> {
        let path = self.path(rel);
        let file = File::open(&path).with_context(|| {
            format!("missing input {} (run the stage that writes it first)", path.display())
        })?;
        Ok(BufReader::new(file))
    }

    /// Outputs recorded since the last call, sorted.
    pub fn take_written(&self) -> Vec<String> {
        let mut v = std::mem::take(&mut *self.written.lock().expect("output list lock"));
        v.sort();
        v.dedup();
        v
    }

    pub fn write_csv<T: Serialize>(&self, rel: &str, rows: &[T]) -> Result<()> {
        let mut w = csv::Writer::from_writer(self.create(rel)?);
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<T: for<'de> Deserialize<'de>>(&self, rel: &str) -> Result<Vec<T>> {
        let mut r = csv::Reader::from_reader(self.open(rel)?);
        r.deserialize()
            .enumerate()
            .map(|(i, row)| row.with_context(|| format!("{rel}: line {}", i + 2)))
            .collect()
    }
}

/// Seed metadata recorded for a stage.
pub type Seeds = Option<serde_json::Value>;

pub fn run_stage(ctx: &Ctx, stage: Stage) -> Result<Seeds> {
    match stage {
        Stage::Simulate => simulate_stage(ctx),
        Stage::Estimate => estimate_stage(ctx),
        Stage::Fit => fit_stage(ctx),
        Stage::Roll => roll_stage(ctx),
        Stage::Forecast => forecast_stage(ctx),
        Stage::Evaluate => evaluate_stage(ctx),
        Stage::Report => crate::report::report_stage(ctx).map(|()| None),
    }
}

fn simulate_stage(ctx: &Ctx) -> Result<Seeds> {
    let DataConfig::Simulate { market } = &ctx.cfg.data else {
        return Err(ConfigError::new("data.source", "the simulate stage needs source `simulate`").into());
    };
    let sim = simulate::simulate_market(market)?;
    sim.assets.par_iter().try_for_each(|(name, days)| -> Result<()> {
        let intraday: Vec<_> = days.iter().map(|d| d.day.clone()).collect();
        ingest::write_intraday(ctx.create(&format!("data/intraday_{name}.csv"))?, &intraday)?;
        simulate::write_truth(ctx.create(&format!("data/truth_{name}.csv"))?, days)?;
        Ok(())
    })?;
    ingest::write_daily(ctx.create("data/sp500.csv")?, &sim.sp500_close)?;
    ingest::write_daily(ctx.create("data/vix.csv")?, &sim.vix_level)?;
    Ok(Some(serde_json::json!({
        "market": market.seed,
        "factor": market.factor.seed,
    })))
}

struct Inputs {
    intraday: Vec<(String, PathBuf)>,
    sp500: PathBuf,
    vix: PathBuf,
}

fn inputs(ctx: &Ctx) -> Inputs {
    match &ctx.cfg.data {
        DataConfig::Simulate { .. } => Inputs {
            intraday: ctx
                .cfg
                .asset_names()
                .into_iter()
                .map(|a| {
                    let p = ctx.path(&format!("data/intraday_{a}.csv"));
                    (a, p)
                })
                .collect(),
            sp500: ctx.path("data/sp500.csv"),
            vix: ctx.path("data/vix.csv"),
        },
        DataConfig::Files {
            intraday,
            sp500,
            vix,
        } => Inputs {
            intraday: intraday.iter().map(|(a, p)| (a.clone(), p.clone())).collect(),
            sp500: sp500.clone(),
            vix: vix.clone(),
        },
    }
}

#[derive(Serialize)]
struct RejectedRow<'a> {
    asset: &'a str,
    date: NaiveDate,
    bars: usize,
    reason: &'a str,
}

#[derive(Serialize)]
struct PcaRow<'a> {
    factor: &'a str,
    asset: &'a str,
    loading: f64,
    center: f64,
    explained_fraction: f64,
}

#[derive(Serialize)]
struct DroppedRow<'a> {
    series: &'a str,
    date: NaiveDate,
}

/// Panel column holding an asset's daily variance measure.
pub fn rrv_column(asset: &str) -> String {
    format!("rrv_{asset}")
}

/// Panel column holding an asset's jump measure.
pub fn jump_column(asset: &str) -> String {
    format!("jump_{asset}")
}

pub fn design_path(unit: &str) -> String {
    format!("estimate/design_{unit}.csv")
}

fn load_daily(path: &Path, name: &str) -> Result<DailySeries> {
    ingest::load_daily(path, name).with_context(|| format!("reading {}", path.display()))
}

fn estimate_stage(ctx: &Ctx) -> Result<Seeds> {
    let cfg = &ctx.cfg;
    let (n, m) = cfg.grid();
    let est = &cfg.estimator;
    let lt = rangevol::load_or_compute(
        ctx.path("estimate/lambda_cache.csv"),
        m,
        est.lambda_paths,
        est.lambda_seed,
        &est.omega_grid,
    )?;
    ctx.written
        .lock()
        .expect("output list lock")
        .push("estimate/lambda_cache.csv".into());

    let inputs = inputs(ctx);
    let opts = LoadOptions {
        m,
        expected_prices: n.map(|n| n * m + 1),
    };
    type AssetOut = (String, Vec<(NaiveDate, DayEstimates)>, Vec<ingest::DayRejection>);
    let per_asset: Vec<AssetOut> = inputs
        .intraday
        .par_iter()
        .map(|(name, path)| -> Result<AssetOut> {
            let load = ingest::load_intraday(path, &opts)
                .with_context(|| format!("reading {}", path.display()))?;
            let mut rejected = load.rejected;
            let mut rows = Vec::with_capacity(load.days.len());
            for day in &load.days {
                match rangevol::day_estimates(day, &lt) {
                    Ok(e) => rows.push((day.date, e)),
                    Err(e) => rejected.push(ingest::DayRejection {
                        date: day.date,
                        bars: day.prices.len(),
                        reason: e.to_string(),
                    }),
                }
            }
            if rows.is_empty() {
                bail!("asset `{name}` has no usable days");
            }
            rejected.sort_by_key(|r| r.date);
            Ok((name.clone(), rows, rejected))
        })
        .collect::<Result<_>>()?;

    let flat: Vec<(String, NaiveDate, DayEstimates)> = per_asset
        .iter()
        .flat_map(|(a, rows, _)| rows.iter().map(move |(d, e)| (a.clone(), *d, *e)))
        .collect();
    rangevol::write_estimates(ctx.create("estimate/estimates.csv")?, &flat)?;
    let rejected: Vec<RejectedRow> = per_asset
        .iter()
        .flat_map(|(a, _, rej)| {
            rej.iter().map(move |r| RejectedRow {
                asset: a,
                date: r.date,
                bars: r.bars,
                reason: &r.reason,
            })
        })
        .collect();
    let mut w = csv::Writer::from_writer(ctx.create("estimate/rejected.csv")?);
    w.write_record(["asset", "date", "bars", "reason"])?;
    for r in &rejected {
        w.serialize(r)?;
    }
    w.flush()?;

    let (var_scale, ret_scale) = if cfg.model.percent_units { (1e4, 100.0) } else { (1.0, 1.0) };
    let mut series = Vec::with_capacity(2 + 2 * per_asset.len());
    let sp = load_daily(&inputs.sp500, "sp500")?.log_returns()?;
    series.push(DailySeries::new("sp500", sp.dates, sp.values.iter().map(|v| v * ret_scale).collect())?);
    series.push(load_daily(&inputs.vix, "vix")?.ln()?);
    for (a, rows, _) in &per_asset {
        let dates: Vec<NaiveDate> = rows.iter().map(|r| r.0).collect();
        series.push(DailySeries::new(
            rrv_column(a),
            dates.clone(),
            rows.iter().map(|r| r.1.rrv_bvbc * var_scale).collect(),
        )?);
        series.push(DailySeries::new(
            jump_column(a),
            dates,
            rows.iter().map(|r| r.1.jump * var_scale).collect(),
        )?);
    }
    let (mut panel, report) = ingest::align(&series)?;
    let mut w = csv::Writer::from_writer(ctx.create("estimate/dropped.csv")?);
    w.write_record(["series", "date"])?;
    for (name, dates) in &report.dropped {
        for &date in dates {
            w.serialize(DroppedRow { series: name, date })?;
        }
    }
    w.flush()?;

    let assets: Vec<&String> = per_asset.iter().map(|(a, _, _)| a).collect();
    if assets.len() >= 2 {
        let mut pca_rows = Vec::new();
        for (factor, col, out) in [("rrv", rrv_column as fn(&str) -> String, "fpc"), ("jump", jump_column, "fpc_jump")] {
            let cols: Vec<&[f64]> = assets
                .iter()
                .map(|a| panel.column(&col(a)))
                .collect::<rangequant::Result<_>>()?;
            let pc = features::first_pc_with(&cols, cfg.model.pca_basis)
                .with_context(|| format!("principal component of the {factor} panel"))?;
            for (j, a) in assets.iter().enumerate() {
                pca_rows.push(PcaRow {
                    factor,
                    asset: a,
                    loading: pc.loadings[j],
                    center: pc.center[j],
                    explained_fraction: pc.explained_fraction,
                });
            }
            panel.columns.insert(out.to_string(), pc.scores);
        }
        ctx.write_csv("estimate/pca.csv", &pca_rows)?;
    }
    panel.write_csv(ctx.create("estimate/panel.csv")?)?;

    let opts = DesignOptions {
        monthly: cfg.model.monthly,
    };
    for unit in cfg.units() {
        let (y, jump) = if unit == MARKET {
            ("fpc".to_string(), "fpc_jump".to_string())
        } else {
            (rrv_column(&unit), jump_column(&unit))
        };
        let design = features::build_design(
            &panel.dates,
            panel.column(&y)?,
            panel.column("vix")?,
            panel.column("sp500")?,
            panel.column(&jump)?,
            opts,
        )
        .with_context(|| format!("design for `{unit}`"))?;
        design.write_csv(ctx.create(&design_path(&unit))?)?;
    }
    Ok(Some(serde_json::json!({
        "lambda_seed": est.lambda_seed,
        "lambda_paths": est.lambda_paths,
    })))
}

pub fn read_design(ctx: &Ctx, unit: &str) -> Result<QuantDesign> {
    let rel = design_path(unit);
    QuantDesign::read_csv(ctx.open(&rel)?).with_context(|| format!("reading {rel}"))
}

/// One row of the restricted-versus-unrestricted comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestrictedRow {
    pub tau: f64,
    pub r1_unrestricted: f64,
    pub r1_restricted: f64,
    pub xi_w_stat: f64,
    pub xi_w_df: f64,
    pub xi_w_p_value: f64,
}

fn fit_stage(ctx: &Ctx) -> Result<Seeds> {
    let cfg = &ctx.cfg;
    let taus = &cfg.fit.taus;
    let kept: Vec<&str> = cfg.model.restricted.iter().map(String::as_str).collect();
    for unit in cfg.units() {
        let design = read_design(ctx, &unit)?;
        let joint = quantreg::bootstrap_joint(&design, taus, cfg.fit.bootstrap)
            .with_context(|| format!("`{unit}`: bootstrap"))?;
        let dropped: Vec<&str> = design
            .names
            .iter()
            .map(String::as_str)
            .filter(|c| !kept.contains(c))
            .collect();
        let small = design.select(&kept)?;
        let mut coefs = Vec::new();
        let mut tests = Vec::new();
        let mut restricted = Vec::new();
        for (k, &tau) in taus.iter().enumerate() {
            let full = &joint.fits[k];
            let boot = joint.report(k);
            coefs.extend(quantreg::coef_rows("full", full, Some(&boot)));
            let rfit = quantreg::fit(&small, tau).with_context(|| format!("`{unit}`: restricted fit at {tau}"))?;
            let xi = quantreg::xi_w_test(full, &boot, &dropped)
                .with_context(|| format!("`{unit}`: goodness-of-fit test at {tau}"))?;
            tests.push(TestRow {
                test: format!("xi_w_{tau}"),
                stat: xi.stat,
                df: xi.df.to_string(),
                p_value: xi.p_value,
            });
            restricted.push(RestrictedRow {
                tau,
                r1_unrestricted: quantreg::pseudo_r1(full, &design.y, tau)?,
                r1_restricted: quantreg::pseudo_r1(&rfit, &small.y, tau)?,
                xi_w_stat: xi.stat,
                xi_w_df: xi.df,
                xi_w_p_value: xi.p_value,
            });
        }
        if taus.len() >= 2 {
            let se = quantreg::slope_equality_test(&joint)
                .with_context(|| format!("`{unit}`: slope equality test"))?;
            tests.insert(
                0,
                TestRow {
                    test: "slope_equality".into(),
                    stat: se.stat,
                    df: format!("{}/{}", se.df1, se.df2),
                    p_value: se.p_value,
                },
            );
            for (k, (name, f, p)) in se.per_coefficient.iter().enumerate() {
                tests.insert(
                    k + 1,
                    TestRow {
                        test: format!("slope_equality_{name}"),
                        stat: *f,
                        df: format!("{}/{}", taus.len() - 1, se.df2),
                        p_value: *p,
                    },
                );
            }
        }
        quantreg::write_coefs(ctx.create(&format!("fit/{unit}/coefs.csv"))?, &coefs)?;
        quantreg::write_tests(ctx.create(&format!("fit/{unit}/tests.csv"))?, &tests)?;
        ctx.write_csv(&format!("fit/{unit}/restricted.csv"), &restricted)?;
    }
    Ok(Some(serde_json::json!({ "bootstrap": cfg.fit.bootstrap.seed })))
}

#[derive(Serialize)]
struct RollWindowRow {
    start: usize,
    end_date: NaiveDate,
    failed_taus: usize,
    errors: String,
}

fn check_window(key: &str, window: usize, rows: usize, strict: bool) -> Result<()> {
    if window > rows || (strict && window == rows) {
        return Err(ConfigError::new(key, format!("window {window} does not fit the {rows} design rows")).into());
    }
    Ok(())
}

fn roll_stage(ctx: &Ctx) -> Result<Seeds> {
    let rc = &ctx.cfg.roll;
    for unit in ctx.cfg.units() {
        let design = read_design(ctx, &unit)?;
        check_window("roll.window", rc.window, design.n_obs(), false)?;
        let roll = quantreg::roll(&design, &rc.taus, rc.window, rc.step)?;
        quantreg::write_coefs(
            ctx.create(&format!("roll/{unit}/coefs.csv"))?,
            &quantreg::roll_coef_rows(&roll),
        )?;
        let rows: Vec<RollWindowRow> = roll
            .windows
            .iter()
            .map(|w| {
                let errs: Vec<&str> = w.fits.iter().filter_map(|f| f.as_ref().err().map(String::as_str)).collect();
                RollWindowRow {
                    start: w.start,
                    end_date: w.end_date,
                    failed_taus: errs.len(),
                    errors: errs.join("; "),
                }
            })
            .collect();
        ctx.write_csv(&format!("roll/{unit}/windows.csv"), &rows)?;
    }
    Ok(None)
}

#[derive(Serialize)]
struct ForecastWindowRow {
    start: usize,
    end_date: NaiveDate,
    qr_error: String,
    bench_error: String,
    omega: Option<f64>,
    alpha: Option<f64>,
    gamma: Option<f64>,
    beta: Option<f64>,
    persistence: Option<f64>,
    nig_alpha: Option<f64>,
    nig_beta: Option<f64>,
    loglik: Option<f64>,
}

#[derive(Serialize)]
struct PitRow {
    date: NaiveDate,
    pit: f64,
    z: f64,
}

fn pit_rows(dates: &[NaiveDate], pits: Vec<f64>) -> Vec<PitRow> {
    let z = evaluate::pit_to_z(&pits);
    dates
        .iter()
        .zip(pits.into_iter().zip(z))
        .map(|(&date, (pit, z))| PitRow { date, pit, z })
        .collect()
}

fn forecast_stage(ctx: &Ctx) -> Result<Seeds> {
    let opts = &ctx.cfg.forecast;
    ctx.cfg.units().par_iter().try_for_each(|unit| -> Result<()> {
        let design = read_design(ctx, unit)?;
        check_window("forecast.window", opts.window, design.n_obs(), true)?;
        let run = forecast::rolling_forecast(&design, opts).with_context(|| format!("`{unit}`"))?;
        let dir = format!("forecast/{unit}");
        let curves: Vec<(NaiveDate, &density::QuantileCurve)> = run.days.iter().map(|d| (d.date, &d.curve)).collect();
        density::write_curves(ctx.create(&format!("{dir}/qr_curves.csv"))?, &curves)?;
        forecast::write_quantile_rows(ctx.create(&format!("{dir}/bench_curves.csv"))?, &run.bench_curve_rows()?)?;
        let scores = run.scores()?;
        forecast::write_scores(ctx.create(&format!("{dir}/scores.csv"))?, &scores)?;
        let dates: Vec<NaiveDate> = scores.iter().map(|r| r.date).collect();
        ctx.write_csv(&format!("{dir}/pits.csv"), &pit_rows(&dates, scores.iter().map(|r| r.qr_pit).collect()))?;
        ctx.write_csv(&format!("{dir}/bench_pits.csv"), &pit_rows(&dates, scores.iter().map(|r| r.bench_pit).collect()))?;
        let windows: Vec<ForecastWindowRow> = run
            .windows
            .iter()
            .map(|w| {
                let p = w.bench_params.as_ref();
                let (na, nb) = match p.map(|p| p.innov) {
                    Some(Innovation::Nig { alpha, beta }) => (Some(alpha), Some(beta)),
                    _ => (None, None),
                };
                ForecastWindowRow {
                    start: w.start,
                    end_date: w.end_date,
                    qr_error: w.qr_error.clone().unwrap_or_default(),
                    bench_error: w.bench_error.clone().unwrap_or_default(),
                    omega: p.map(|p| p.omega),
                    alpha: p.map(|p| p.alpha),
                    gamma: p.map(|p| p.gamma),
                    beta: p.map(|p| p.beta),
                    persistence: p.map(|p| p.persistence()),
                    nig_alpha: na,
                    nig_beta: nb,
                    loglik: p.map(|p| p.loglik),
                }
            })
            .collect();
        ctx.write_csv(&format!("{dir}/windows.csv"), &windows)?;
        Ok(())
    })?;
    Ok(None)
}

pub const QR_MODEL: &str = "qr";

pub fn bench_model(ctx: &Ctx) -> String {
    let kind = serde_json::to_value(ctx.cfg.forecast.benchmark)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default();
    format!("harx_gjr_{kind}")
}

fn eval_rows(rows: &[ScoreRow], bench: &str) -> Result<Vec<EvalRow>> {
    let (qr, b) = forecast::evaluate_scores(rows, QR_MODEL, bench)?;
    let mut out = qr.rows();
    out.extend(b.rows());
    Ok(out)
}

fn evaluate_stage(ctx: &Ctx) -> Result<Seeds> {
    let bench = bench_model(ctx);
    for unit in ctx.cfg.units() {
        let rel = format!("forecast/{unit}/scores.csv");
        let rows = forecast::read_scores(ctx.open(&rel)?).with_context(|| format!("reading {rel}"))?;
        let dir = format!("evaluate/{unit}");
        let all = eval_rows(&rows, &bench).with_context(|| format!("`{unit}`"))?;
        evaluate::write_eval(ctx.create(&format!("{dir}/eval.csv"))?, &all)?;
        if let Some(split) = ctx.cfg.evaluate.split_date {
            let (before, after): (Vec<ScoreRow>, Vec<ScoreRow>) = rows.iter().partition(|r| r.date < split);
            for (name, part) in [("before", before), ("after", after)] {
                let res = eval_rows(&part, &bench)
                    .with_context(|| format!("`{unit}`: forecasts {name} {split}"))?;
                evaluate::write_eval(ctx.create(&format!("{dir}/eval_{name}.csv"))?, &res)?;
            }
        }
    }
    Ok(None)
}

/// Error for a missing optional input of the report stage.
pub fn is_missing(ctx: &Ctx, rel: &str) -> bool {
    !ctx.path(rel).exists()
}

pub fn not_found(what: &str) -> anyhow::Error {
    anyhow!("no {what} found; run the stages that produce it first")
}
