//! Report tables assembled from persisted stage outputs: descriptive
//! statistics, jump tests, correlations, full-sample fits, the restricted
//! comparison, coefficient surfaces and forecast evaluation.

use std::collections::BTreeMap;

use anyhow::{bail, Context, Result};
use rangequant::evaluate::{self, Weight};
use rangequant::ingest::{self, DailyPanel};
use rangequant::quantreg;
use rangequant::rangevol;
use rangequant::stats;

use crate::pipeline::{self, Ctx, RestrictedRow, QR_MODEL};

fn fmt(v: f64) -> String {
    v.to_string()
}

fn write_table(ctx: &Ctx, rel: &str, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(ctx.create(rel)?);
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

pub fn report_stage(ctx: &Ctx) -> Result<()> {
    let mut produced = 0usize;
    if !pipeline::is_missing(ctx, "estimate/panel.csv") {
        describe_table(ctx)?;
        produced += 1;
    }
    if !pipeline::is_missing(ctx, "estimate/estimates.csv") {
        jump_table(ctx)?;
        produced += 1;
    }
    let units = ctx.cfg.units();
    let present = |dir: &str, file: &str| -> Vec<String> {
        units
            .iter()
            .filter(|u| !pipeline::is_missing(ctx, &format!("{dir}/{u}/{file}")))
            .cloned()
            .collect()
    };
    for unit in &units {
        if !pipeline::is_missing(ctx, &pipeline::design_path(unit)) {
            correlation_table(ctx, unit)?;
            produced += 1;
        }
    }
    let fitted = present("fit", "coefs.csv");
    if !fitted.is_empty() {
        fit_tables(ctx, &fitted)?;
        produced += 1;
    }
    for unit in &present("roll", "coefs.csv") {
        surfaces(ctx, unit)?;
        produced += 1;
    }
    let evaluated = present("evaluate", "eval.csv");
    if !evaluated.is_empty() {
        eval_tables(ctx, &evaluated)?;
        produced += 1;
    }
    if produced == 0 {
        return Err(pipeline::not_found("stage outputs to report on"));
    }
    Ok(())
}

fn describe_table(ctx: &Ctx) -> Result<()> {
    let panel = DailyPanel::read_csv(ctx.open("estimate/panel.csv")?).context("reading estimate/panel.csv")?;
    let header = strings(&["series", "n", "mean", "sd", "median", "iqr", "skewness", "kurtosis"]);
    let mut rows = Vec::new();
    for (name, values) in &panel.columns {
        let d = ingest::describe(values).with_context(|| format!("describing `{name}`"))?;
        rows.push(vec![
            name.clone(),
            values.len().to_string(),
            fmt(d.mean),
            fmt(d.sd),
            fmt(d.median),
            fmt(d.iqr),
            fmt(d.skewness),
            fmt(d.kurtosis),
        ]);
    }
    write_table(ctx, "report/table_describe.csv", &header, &rows)
}

/// Per-asset jump statistic summary at the 1% one-sided level.
fn jump_table(ctx: &Ctx) -> Result<()> {
    let est = rangevol::read_estimates(ctx.open("estimate/estimates.csv")?).context("reading estimate/estimates.csv")?;
    let crit = stats::norm_quantile(0.99);
    let mut by_asset: Vec<(String, Vec<f64>)> = Vec::new();
    for (asset, _, e) in &est {
        if by_asset.last().is_none_or(|(a, _)| a != asset) {
            by_asset.push((asset.clone(), Vec::new()));
        }
        if e.z_tp_defined() {
            by_asset.last_mut().expect("just pushed").1.push(e.z_tp);
        }
    }
    let header = strings(&["asset", "days", "mean_z", "median_z", "sd_z", "rejection_pct"]);
    let rows = by_asset
        .iter()
        .map(|(asset, z)| {
            let mut sorted = z.clone();
            sorted.sort_by(f64::total_cmp);
            let (mean, median, sd, pct) = if z.is_empty() {
                (f64::NAN, f64::NAN, f64::NAN, f64::NAN)
            } else {
                (
                    stats::mean(z),
                    stats::quantile_sorted(&sorted, 0.5),
                    if z.len() > 1 { stats::sample_sd(z) } else { f64::NAN },
                    100.0 * z.iter().filter(|v| **v > crit).count() as f64 / z.len() as f64,
                )
            };
            vec![asset.clone(), z.len().to_string(), fmt(mean), fmt(median), fmt(sd), fmt(pct)]
        })
        .collect::<Vec<_>>();
    write_table(ctx, "report/table_jumps.csv", &header, &rows)
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (stats::mean(a), stats::mean(b));
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    sab / (saa * sbb).sqrt()
}

/// Correlations of the response with its lagged regressors.
fn correlation_table(ctx: &Ctx, unit: &str) -> Result<()> {
    let design = pipeline::read_design(ctx, unit)?;
    let mut vars: Vec<(String, Vec<f64>)> = vec![("y".into(), design.y.clone())];
    for name in design.names.iter().filter(|n| *n != "const") {
        vars.push((name.clone(), design.column(name)?));
    }
    let mut header = vec!["variable".to_string()];
    header.extend(vars.iter().map(|v| v.0.clone()));
    let rows: Vec<Vec<String>> = vars
        .iter()
        .map(|(name, a)| {
            let mut r = vec![name.clone()];
            r.extend(vars.iter().map(|(_, b)| fmt(correlation(a, b))));
            r
        })
        .collect();
    write_table(ctx, &format!("report/table_correlation_{unit}.csv"), &header, &rows)
}

fn fit_tables(ctx: &Ctx, units: &[String]) -> Result<()> {
    let z = stats::norm_quantile(0.975);
    let mut coef_rows = Vec::new();
    let mut restricted_rows = Vec::new();
    let mut test_rows = Vec::new();
    for unit in units {
        let rel = format!("fit/{unit}/coefs.csv");
        for c in quantreg::read_coefs(ctx.open(&rel)?).with_context(|| format!("reading {rel}"))? {
            coef_rows.push(vec![
                unit.clone(),
                fmt(c.tau),
                c.coef_name,
                fmt(c.estimate),
                fmt(c.se),
                fmt(c.p_value),
                fmt(c.estimate - z * c.se),
                fmt(c.estimate + z * c.se),
            ]);
        }
        let rows: Vec<RestrictedRow> = ctx.read_csv(&format!("fit/{unit}/restricted.csv"))?;
        for r in rows {
            restricted_rows.push(vec![
                unit.clone(),
                fmt(r.tau),
                fmt(r.r1_unrestricted),
                fmt(r.r1_restricted),
                fmt(r.xi_w_stat),
                fmt(r.xi_w_p_value),
            ]);
        }
        let mut rdr = csv::Reader::from_reader(ctx.open(&format!("fit/{unit}/tests.csv"))?);
        for rec in rdr.records() {
            let rec = rec?;
            let mut row = vec![unit.clone()];
            row.extend(rec.iter().map(str::to_string));
            test_rows.push(row);
        }
    }
    write_table(
        ctx,
        "report/table_fit.csv",
        &strings(&["unit", "tau", "coef_name", "estimate", "se", "p_value", "ci_low", "ci_high"]),
        &coef_rows,
    )?;
    write_table(
        ctx,
        "report/table_restricted.csv",
        &strings(&["unit", "tau", "r1_unrestricted", "r1_restricted", "xi_w_stat", "xi_w_p_value"]),
        &restricted_rows,
    )?;
    write_table(
        ctx,
        "report/table_tests.csv",
        &strings(&["unit", "test", "stat", "df", "p_value"]),
        &test_rows,
    )
}

/// One `date x tau` table per coefficient from the rolling fits.
fn surfaces(ctx: &Ctx, unit: &str) -> Result<()> {
    let rel = format!("roll/{unit}/coefs.csv");
    let rows = quantreg::read_coefs(ctx.open(&rel)?).with_context(|| format!("reading {rel}"))?;
    let mut taus: Vec<f64> = rows.iter().map(|r| r.tau).collect();
    taus.sort_by(f64::total_cmp);
    taus.dedup();
    let mut names: Vec<String> = Vec::new();
    let mut cells: BTreeMap<(String, String), Vec<Option<f64>>> = BTreeMap::new();
    for r in &rows {
        if !names.contains(&r.coef_name) {
            names.push(r.coef_name.clone());
        }
        let k = taus.iter().position(|t| *t == r.tau).expect("tau collected above");
        cells
            .entry((r.coef_name.clone(), r.window_end.clone()))
            .or_insert_with(|| vec![None; taus.len()])[k] = Some(r.estimate);
    }
    if names.is_empty() {
        bail!("{rel} has no successful window fits");
    }
    let mut header = vec!["date".to_string()];
    header.extend(taus.iter().map(|t| fmt(*t)));
    for name in &names {
        let table: Vec<Vec<String>> = cells
            .range((name.clone(), String::new())..)
            .take_while(|((n, _), _)| n == name)
            .map(|((_, date), v)| {
                let mut row = vec![date.clone()];
                row.extend(v.iter().map(|c| c.map(fmt).unwrap_or_default()));
                row
            })
            .collect();
        write_table(ctx, &format!("report/surface_{unit}_{name}.csv"), &header, &table)?;
    }
    Ok(())
}

fn eval_tables(ctx: &Ctx, units: &[String]) -> Result<()> {
    let bench = pipeline::bench_model(ctx);
    let mut berk = Vec::new();
    let mut ag = Vec::new();
    let mut dm = Vec::new();
    let mut dm_taus: Vec<String> = Vec::new();
    for unit in units {
        let rel = format!("evaluate/{unit}/eval.csv");
        let rows = evaluate::read_eval(ctx.open(&rel)?).with_context(|| format!("reading {rel}"))?;
        let find = |model: &str, test: &str, variant: &str| {
            rows.iter()
                .find(|r| r.model == model && r.test == test && r.variant == variant)
                .map(|r| (fmt(r.stat), fmt(r.p_value)))
                .unwrap_or_default()
        };
        let n = rows.first().map(|r| r.n.to_string()).unwrap_or_default();
        let (lq, pq) = find(QR_MODEL, "berkowitz", "LR");
        let (lb, pb) = find(&bench, "berkowitz", "LR");
        berk.push(vec![unit.clone(), lq, pq, lb, pb, n]);
        let mut row = vec![unit.clone()];
        for w in Weight::ALL {
            let (s, p) = find(QR_MODEL, "ag", w.label());
            row.extend([s, p]);
        }
        ag.push(row);
        for r in rows.iter().filter(|r| r.model == QR_MODEL && r.test == "dm") {
            if !dm_taus.contains(&r.variant) {
                dm_taus.push(r.variant.clone());
            }
        }
        let mut row = vec![unit.clone()];
        for t in &dm_taus {
            let (s, p) = find(QR_MODEL, "dm", t);
            row.extend([s, p]);
        }
        dm.push(row);
    }
    write_table(
        ctx,
        "report/table_berkowitz.csv",
        &strings(&["unit", "lr_qr", "p_qr", "lr_bench", "p_bench", "n"]),
        &berk,
    )?;
    let mut header = vec!["unit".to_string()];
    for w in Weight::ALL {
        header.push(format!("ag_{}", w.label()));
        header.push(format!("p_{}", w.label()));
    }
    write_table(ctx, "report/table_ag.csv", &header, &ag)?;
    let mut header = vec!["unit".to_string()];
    for t in &dm_taus {
        header.push(format!("dm_{t}"));
        header.push(format!("p_{t}"));
    }
    write_table(ctx, "report/table_dm.csv", &header, &dm)
}
