//! Run configuration: one JSON document, checked for structure by serde and
//! for meaning by [`RunConfig::validate`] before any stage runs.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use indexmap::IndexMap;
use rangequant::density;
use rangequant::features::{PcaBasis, DESIGN_COLUMNS};
use rangequant::forecast::ForecastOptions;
use rangequant::quantreg::{BootOptions, Resample};
use rangequant::rangevol;
use rangequant::simulate::MarketSpec;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

/// Name of the first-component model unit.
pub const MARKET: &str = "market";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Artifact directory, relative to the config file; `--out` overrides it.
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub data: DataConfig,
    #[serde(default)]
    pub estimator: EstimatorConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default)]
    pub roll: RollConfig,
    #[serde(default)]
    pub forecast: ForecastOptions,
    #[serde(default)]
    pub evaluate: EvaluateConfig,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Where the intraday and daily inputs come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    /// Simulate a multi-asset market; the `simulate` stage writes its files.
    Simulate { market: MarketSpec },
    /// Read existing files; paths are relative to the config file.
    Files {
        /// Asset name to intraday CSV (`date,time,price`).
        intraday: IndexMap<String, PathBuf>,
        /// `date,value` CSV of S&P 500 closes.
        sp500: PathBuf,
        /// `date,value` CSV of VIX levels.
        vix: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    /// Subintervals per day; days with another count are rejected.
    /// Defaults to the simulated market's `n`.
    #[serde(default)]
    pub n: Option<usize>,
    /// Fine returns per subinterval. Defaults to the simulated market's `m`.
    #[serde(default)]
    pub m: Option<usize>,
    #[serde(default = "default_lambda_paths")]
    pub lambda_paths: usize,
    #[serde(default = "default_lambda_seed")]
    pub lambda_seed: u64,
    /// Noise ratios at which the noisy range moments are tabulated.
    #[serde(default = "rangevol::default_omega_grid")]
    pub omega_grid: Vec<f64>,
}

fn default_lambda_paths() -> usize {
    200_000
}
fn default_lambda_seed() -> u64 {
    1
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            n: None,
            m: None,
            lambda_paths: default_lambda_paths(),
            lambda_seed: default_lambda_seed(),
            omega_grid: rangevol::default_omega_grid(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Models to run: `market` for the first-component model, an asset name
    /// for that asset's own model, `*` for every asset.
    #[serde(default = "default_units")]
    pub units: Vec<String>,
    /// Add the 21-day HAR average.
    #[serde(default)]
    pub monthly: bool,
    /// Regressors of the restricted comparison model.
    #[serde(default = "default_restricted")]
    pub restricted: Vec<String>,
    /// Scale variance measures by 1e4 and returns by 100.
    #[serde(default = "default_true")]
    pub percent_units: bool,
    #[serde(default)]
    pub pca_basis: PcaBasis,
}

fn default_units() -> Vec<String> {
    vec![MARKET.to_string()]
}
fn default_restricted() -> Vec<String> {
    ["const", "lag1", "sp500"].map(String::from).to_vec()
}
fn default_true() -> bool {
    true
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            units: default_units(),
            monthly: false,
            restricted: default_restricted(),
            percent_units: true,
            pca_basis: PcaBasis::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    #[serde(default = "density::estimation_grid")]
    pub taus: Vec<f64>,
    #[serde(default = "default_bootstrap")]
    pub bootstrap: BootOptions,
}

fn default_bootstrap() -> BootOptions {
    BootOptions {
        b: 1000,
        seed: 2,
        scheme: Resample::Pairs,
    }
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            taus: density::estimation_grid(),
            bootstrap: default_bootstrap(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct RollConfig {
    #[serde(default = "density::estimation_grid")]
    pub taus: Vec<f64>,
    #[serde(default = "default_roll_window")]
    pub window: usize,
    #[serde(default = "default_roll_step")]
    pub step: usize,
}

fn default_roll_window() -> usize {
    500
}
fn default_roll_step() -> usize {
    1
}

impl Default for RollConfig {
    fn default() -> Self {
        Self {
            taus: density::estimation_grid(),
            window: default_roll_window(),
            step: default_roll_step(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct EvaluateConfig {
    /// Also evaluate the forecasts dated before and from this day separately.
    #[serde(default)]
    pub split_date: Option<NaiveDate>,
}

/// A configuration problem tied to one key.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub key: String,
    pub msg: String,
}

impl ConfigError {
    pub fn new(key: impl Into<String>, msg: impl Into<String>) -> Self {
        Self {
            key: key.into(),
            msg: msg.into(),
        }
    }
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.key.is_empty() {
            write!(f, "config: {}", self.msg)
        } else {
            write!(f, "config key `{}`: {}", self.key, self.msg)
        }
    }
}

impl std::error::Error for ConfigError {}

/// Parse a config document, reporting the path of the first offending key.
pub fn parse(text: &str) -> Result<RunConfig, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let key = e.path().to_string();
        let key = if key == "." { String::new() } else { key };
        ConfigError::new(key, e.inner().to_string())
    })?;
    cfg.validate()?;
    Ok(cfg)
}

/// JSON schema of [`RunConfig`].
pub fn schema_json() -> String {
    serde_json::to_string_pretty(&schemars::schema_for!(RunConfig)).expect("schema serializes")
}

/// A validated config with paths resolved, and the document as written
/// (defaults filled in) for the run manifest.
pub struct Loaded {
    pub config: RunConfig,
    pub as_written: RunConfig,
}

/// Read, parse and validate a config file; relative paths are resolved
/// against its directory.
pub fn load(path: &Path) -> Result<Loaded, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::new("", format!("cannot read {}: {e}", path.display())))?;
    let as_written = parse(&text)?;
    let mut cfg = as_written.clone();
    let base = path.parent().unwrap_or(Path::new(""));
    cfg.output_dir = base.join(&cfg.output_dir);
    if let DataConfig::Files {
        intraday,
        sp500,
        vix,
    } = &mut cfg.data
    {
        for p in intraday.values_mut() {
            *p = base.join(&*p);
        }
        *sp500 = base.join(&*sp500);
        *vix = base.join(&*vix);
    }
    Ok(Loaded {
        config: cfg,
        as_written,
    })
}

fn check_grid(key: &str, taus: &[f64], min_len: usize) -> Result<(), ConfigError> {
    if taus.len() < min_len {
        return Err(ConfigError::new(key, format!("needs at least {min_len} levels")));
    }
    if let Some(t) = taus.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
        return Err(ConfigError::new(key, format!("level {t} is outside (0, 1)")));
    }
    if taus.windows(2).any(|w| w[0] >= w[1]) {
        return Err(ConfigError::new(key, "levels must be strictly ascending"));
    }
    Ok(())
}

fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && name != MARKET
        && name != "*"
        && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

impl RunConfig {
    /// Asset names in input order.
    pub fn asset_names(&self) -> Vec<String> {
        match &self.data {
            DataConfig::Simulate { market } => {
                (1..=market.assets).map(|a| format!("A{a:02}")).collect()
            }
            DataConfig::Files { intraday, .. } => intraday.keys().cloned().collect(),
        }
    }

    /// Model units with `*` expanded, in configured order.
    pub fn units(&self) -> Vec<String> {
        let assets = self.asset_names();
        let mut out: Vec<String> = Vec::new();
        for u in &self.model.units {
            let add: Vec<String> = if u == "*" { assets.clone() } else { vec![u.clone()] };
            for a in add {
                if !out.contains(&a) {
                    out.push(a);
                }
            }
        }
        out
    }

    /// Subintervals per day and fine steps per subinterval.
    pub fn grid(&self) -> (Option<usize>, usize) {
        match &self.data {
            DataConfig::Simulate { market } => (
                Some(self.estimator.n.unwrap_or(market.n)),
                self.estimator.m.unwrap_or(market.m),
            ),
            DataConfig::Files { .. } => (self.estimator.n, self.estimator.m.unwrap_or(0)),
        }
    }

    /// Columns of the full design.
    pub fn design_columns(&self) -> Vec<String> {
        let mut names: Vec<String> = DESIGN_COLUMNS.iter().map(|s| s.to_string()).collect();
        if self.model.monthly {
            names.insert(3, "mean21".into());
        }
        names
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let assets = self.asset_names();
        match &self.data {
            DataConfig::Simulate { market } => {
                if market.assets == 0 {
                    return Err(ConfigError::new("data.market.assets", "must be at least 1"));
                }
                if market.n < 4 || market.m == 0 {
                    return Err(ConfigError::new(
                        "data.market",
                        "needs n >= 4 subintervals and m >= 1 steps",
                    ));
                }
                if market.factor.days < 30 {
                    return Err(ConfigError::new("data.market.factor.days", "must be at least 30"));
                }
                let [lo, hi] = market.loading_range;
                if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                    return Err(ConfigError::new(
                        "data.market.loading_range",
                        "must be an interval of positive numbers",
                    ));
                }
            }
            DataConfig::Files { intraday, .. } => {
                if intraday.is_empty() {
                    return Err(ConfigError::new("data.intraday", "lists no assets"));
                }
                if let Some(bad) = intraday.keys().find(|k| !valid_name(k)) {
                    return Err(ConfigError::new(
                        format!("data.intraday.{bad}"),
                        "asset names use letters, digits, `_` or `-`, and cannot be `market`",
                    ));
                }
                match self.estimator.m {
                    None => {
                        return Err(ConfigError::new(
                            "estimator.m",
                            "is required when reading files",
                        ))
                    }
                    Some(0) => return Err(ConfigError::new("estimator.m", "must be at least 1")),
                    _ => {}
                }
            }
        }
        if matches!(self.estimator.n, Some(n) if n < 4) {
            return Err(ConfigError::new("estimator.n", "must be at least 4"));
        }
        if self.estimator.m == Some(0) {
            return Err(ConfigError::new("estimator.m", "must be at least 1"));
        }
        if self.estimator.lambda_paths == 0 {
            return Err(ConfigError::new("estimator.lambda_paths", "must be at least 1"));
        }
        if self.estimator.omega_grid.is_empty()
            || self.estimator.omega_grid.iter().any(|r| !(r.is_finite() && *r >= 0.0))
        {
            return Err(ConfigError::new(
                "estimator.omega_grid",
                "must be a non-empty list of finite nonnegative ratios",
            ));
        }

        if self.model.units.is_empty() {
            return Err(ConfigError::new("model.units", "lists no models"));
        }
        let mut seen = HashSet::new();
        for (i, u) in self.model.units.iter().enumerate() {
            let key = format!("model.units[{i}]");
            if !seen.insert(u) {
                return Err(ConfigError::new(key, format!("`{u}` is listed twice")));
            }
            if u == MARKET {
                if assets.len() < 2 {
                    return Err(ConfigError::new(key, "the market model needs at least two assets"));
                }
            } else if u != "*" && !assets.contains(u) {
                return Err(ConfigError::new(key, format!("unknown asset `{u}`")));
            }
        }
        let columns = self.design_columns();
        let restricted = &self.model.restricted;
        if !restricted.iter().any(|c| c == "const") {
            return Err(ConfigError::new("model.restricted", "must keep `const`"));
        }
        let mut seen = HashSet::new();
        for (i, c) in restricted.iter().enumerate() {
            if !columns.contains(c) {
                return Err(ConfigError::new(
                    format!("model.restricted[{i}]"),
                    format!("unknown regressor `{c}`"),
                ));
            }
            if !seen.insert(c) {
                return Err(ConfigError::new(
                    format!("model.restricted[{i}]"),
                    format!("`{c}` is listed twice"),
                ));
            }
        }
        if restricted.len() == columns.len() {
            return Err(ConfigError::new("model.restricted", "must drop at least one regressor"));
        }

        check_grid("fit.taus", &self.fit.taus, 1)?;
        if self.fit.bootstrap.b < 200 {
            return Err(ConfigError::new("fit.bootstrap.b", "must be at least 200"));
        }
        if let Resample::MovingBlock { block: 0 } = self.fit.bootstrap.scheme {
            return Err(ConfigError::new("fit.bootstrap.scheme.block", "must be at least 1"));
        }
        check_grid("roll.taus", &self.roll.taus, 1)?;
        if self.roll.step == 0 {
            return Err(ConfigError::new("roll.step", "must be at least 1"));
        }
        check_grid("forecast.taus", &self.forecast.taus, 3)?;
        if self.forecast.step == 0 {
            return Err(ConfigError::new("forecast.step", "must be at least 1"));
        }
        let p = columns.len();
        if self.forecast.window < 10 * (p + 4) {
            return Err(ConfigError::new(
                "forecast.window",
                format!("must be at least {} for the benchmark fit", 10 * (p + 4)),
            ));
        }
        if self.roll.window <= p {
            return Err(ConfigError::new("roll.window", format!("must exceed the {p} regressors")));
        }
        if let Some(rows) = self.design_rows() {
            if self.roll.window > rows {
                return Err(ConfigError::new(
                    "roll.window",
                    format!("exceeds the {rows} design rows"),
                ));
            }
            if self.forecast.window >= rows {
                return Err(ConfigError::new(
                    "forecast.window",
                    format!("leaves no forecast days among the {rows} design rows"),
                ));
            }
        }
        Ok(())
    }

    /// Design rows when the sample length is known in advance.
    fn design_rows(&self) -> Option<usize> {
        match &self.data {
            DataConfig::Simulate { market } => {
                let lookback = if self.model.monthly { 21 } else { 5 };
                // The first day has no close-to-close return.
                Some(market.factor.days.saturating_sub(1 + lookback))
            }
            DataConfig::Files { .. } => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> serde_json::Value {
        serde_json::json!({
            "data": {
                "source": "files",
                "intraday": {"AAA": "a.csv", "BBB": "b.csv"},
                "sp500": "sp.csv",
                "vix": "vix.csv"
            },
            "estimator": {"m": 5}
        })
    }

    fn err(v: serde_json::Value) -> ConfigError {
        parse(&v.to_string()).unwrap_err()
    }

    #[test]
    fn defaults_follow_the_protocols() {
        let cfg = parse(&minimal().to_string()).unwrap();
        assert_eq!(cfg.roll.window, 500);
        assert_eq!(cfg.roll.step, 1);
        assert_eq!(cfg.roll.taus.len(), 19);
        assert_eq!(cfg.forecast.window, 100);
        assert_eq!(cfg.forecast.step, 10);
        assert_eq!(cfg.forecast.taus.len(), 49);
        assert_eq!(cfg.fit.bootstrap.b, 1000);
        assert_eq!(cfg.model.restricted, ["const", "lag1", "sp500"]);
        assert_eq!(cfg.units(), ["market"]);
    }

    #[test]
    fn unknown_keys_are_named() {
        let mut v = minimal();
        v["roll"] = serde_json::json!({"windw": 10});
        let e = err(v);
        assert_eq!(e.key, "roll.windw");
        assert!(e.msg.contains("windw"), "{e}");
    }

    #[test]
    fn type_errors_are_named() {
        let mut v = minimal();
        v["roll"] = serde_json::json!({"window": "big"});
        assert_eq!(err(v).key, "roll.window");
    }

    #[test]
    fn semantic_errors_are_named() {
        let cases = [
            (serde_json::json!({"fit": {"taus": [0.5, 0.1]}}), "fit.taus"),
            (serde_json::json!({"roll": {"taus": [0.0, 0.5]}}), "roll.taus"),
            (serde_json::json!({"roll": {"step": 0}}), "roll.step"),
            (serde_json::json!({"forecast": {"window": 50}}), "forecast.window"),
            (serde_json::json!({"model": {"units": ["CCC"]}}), "model.units[0]"),
            (serde_json::json!({"model": {"restricted": ["lag1"]}}), "model.restricted"),
            (serde_json::json!({"model": {"restricted": ["const", "vol"]}}), "model.restricted[1]"),
            (serde_json::json!({"fit": {"bootstrap": {"b": 10, "seed": 1}}}), "fit.bootstrap.b"),
        ];
        for (patch, key) in cases {
            let mut v = minimal();
            for (k, val) in patch.as_object().unwrap() {
                v[k] = val.clone();
            }
            assert_eq!(err(v).key, key);
        }
    }

    #[test]
    fn star_expands_to_every_asset() {
        let mut v = minimal();
        v["model"] = serde_json::json!({"units": ["market", "*", "BBB"]});
        let cfg = parse(&v.to_string()).unwrap();
        assert_eq!(cfg.units(), ["market", "AAA", "BBB"]);
    }

    #[test]
    fn files_need_the_step_count() {
        let mut v = minimal();
        v.as_object_mut().unwrap().remove("estimator");
        assert_eq!(err(v).key, "estimator.m");
    }

    #[test]
    fn paths_resolve_against_the_config_directory() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        std::fs::write(&path, minimal().to_string()).unwrap();
        let cfg = load(&path).unwrap().config;
        assert_eq!(cfg.output_dir, dir.path().join("out"));
        match cfg.data {
            DataConfig::Files { sp500, .. } => assert_eq!(sp500, dir.path().join("sp.csv")),
            _ => unreachable!(),
        }
    }
}
