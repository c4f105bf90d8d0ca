//! Forecasters behind a uniform fit/predict interface, with explicit
//! hyperparameter spaces. The same implementations serve as students and as
//! teachers.

pub mod ridge;
pub mod smoothing;
mod space;

use std::collections::BTreeMap;
use std::fmt;

pub use space::{Domain, ParamSpec, ParamValue, SearchSpace};

use crate::error::{Error, Result};
use crate::hierarchy::{ForecastGrid, NodeId};

/// One hyperparameter draw for a forecaster.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialConfig {
    pub kind: String,
    pub params: BTreeMap<String, ParamValue>,
    pub seed: u64,
}

impl TrialConfig {
    pub fn new(kind: impl Into<String>, seed: u64) -> Self {
        Self { kind: kind.into(), params: BTreeMap::new(), seed }
    }

    pub fn with(mut self, name: &str, value: ParamValue) -> Self {
        self.params.insert(name.into(), value);
        self
    }

    pub fn real(&self, name: &str) -> Result<f64> {
        match self.params.get(name) {
            Some(ParamValue::Real(v)) => Ok(*v),
            Some(ParamValue::Int(v)) => Ok(*v as f64),
            other => Err(Error::InvalidHyperparameter(format!("`{name}` must be real, got {other:?}"))),
        }
    }

    pub fn int(&self, name: &str) -> Result<i64> {
        match self.params.get(name) {
            Some(ParamValue::Int(v)) => Ok(*v),
            other => Err(Error::InvalidHyperparameter(format!("`{name}` must be an integer, got {other:?}"))),
        }
    }

    pub fn flag(&self, name: &str) -> Result<bool> {
        match self.params.get(name) {
            Some(ParamValue::Cat(v)) if v == "true" => Ok(true),
            Some(ParamValue::Cat(v)) if v == "false" => Ok(false),
            other => Err(Error::InvalidHyperparameter(format!("`{name}` must be true/false, got {other:?}"))),
        }
    }

    /// `name=value` pairs joined by `;`, in name order.
    pub fn params_string(&self) -> String {
        self.params.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(";")
    }

    /// Inverse of [`TrialConfig::params_string`]. Reals are always written
    /// with a decimal point or exponent, so integers and reals stay distinct.
    pub fn parse_params(text: &str) -> Result<BTreeMap<String, ParamValue>> {
        text.split(';')
            .filter(|s| !s.is_empty())
            .map(|pair| {
                let (k, v) = pair
                    .split_once('=')
                    .ok_or_else(|| Error::InvalidHyperparameter(format!("expected key=value, got `{pair}`")))?;
                Ok((k.to_string(), ParamValue::parse(v)))
            })
            .collect()
    }
}

/// Whether one model is fit across all series or one per series.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scope {
    Global,
    Local,
}

/// Training slices sharing a common last time index `end`.
#[derive(Clone, Debug)]
pub struct FitContext<'a> {
    pub series: Vec<(NodeId, &'a [f64])>,
    pub end: usize,
    pub horizon: usize,
    pub scope: Scope,
}

impl<'a> FitContext<'a> {
    pub fn new(series: Vec<(NodeId, &'a [f64])>, end: usize, horizon: usize, scope: Scope) -> Self {
        Self { series, end, horizon, scope }
    }

    pub fn shortest(&self) -> usize {
        self.series.iter().map(|(_, s)| s.len()).min().unwrap_or(0)
    }
}

/// Anything that maps training slices and a configuration to forecasts over
/// the `horizon` points after `end`.
pub trait Forecaster: Send + Sync {
    fn name(&self) -> String;

    /// The hyperparameter space searched by default.
    fn space(&self) -> SearchSpace;

    /// Whether a single fit should pool all series.
    fn scope(&self) -> Scope {
        Scope::Local
    }

    fn fit_predict(&self, config: &TrialConfig, ctx: &FitContext<'_>) -> Result<ForecastGrid>;
}

/// The built-in forecasters. `period` is the seasonal period used by the
/// seasonal kinds (`<= 1` disables seasonal handling).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ForecasterKind {
    Naive,
    SeasonalNaive { period: usize },
    Ses,
    Holt,
    Theta { period: usize },
    GlobalLagRidge { period: usize },
}

impl fmt::Display for ForecasterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ForecasterKind::Naive => "naive",
            ForecasterKind::SeasonalNaive { .. } => "seasonal_naive",
            ForecasterKind::Ses => "ses",
            ForecasterKind::Holt => "holt",
            ForecasterKind::Theta { .. } => "theta",
            ForecasterKind::GlobalLagRidge { .. } => "global_lag_ridge",
        })
    }
}

impl ForecasterKind {
    pub fn parse(name: &str, period: usize) -> Result<Self> {
        Ok(match name {
            "naive" => ForecasterKind::Naive,
            "seasonal_naive" => ForecasterKind::SeasonalNaive { period },
            "ses" => ForecasterKind::Ses,
            "holt" => ForecasterKind::Holt,
            "theta" => ForecasterKind::Theta { period },
            "global_lag_ridge" => ForecasterKind::GlobalLagRidge { period },
            other => return Err(Error::UnknownKind(other.to_string())),
        })
    }

    /// Fewest points each training slice needs under `config`.
    pub fn min_length(&self, config: &TrialConfig) -> Result<usize> {
        Ok(match self {
            ForecasterKind::Naive | ForecasterKind::Ses => 1,
            ForecasterKind::SeasonalNaive { .. } => positive(config.int("m")?, "m")?,
            ForecasterKind::Holt | ForecasterKind::Theta { .. } => 2,
            ForecasterKind::GlobalLagRidge { .. } => positive(config.int("p")?, "p")? + 2,
        })
    }
}

fn positive(v: i64, name: &str) -> Result<usize> {
    if v >= 1 {
        Ok(v as usize)
    } else {
        Err(Error::InvalidHyperparameter(format!("`{name}` must be >= 1, got {v}")))
    }
}

fn unit_interval(config: &TrialConfig, name: &str, allow_zero: bool) -> Result<f64> {
    let v = config.real(name)?;
    let ok = if allow_zero { (0.0..=1.0).contains(&v) } else { v > 0.0 && v <= 1.0 };
    if ok {
        Ok(v)
    } else {
        Err(Error::InvalidHyperparameter(format!("`{name}` = {v} outside (0, 1]")))
    }
}

/// The shipped search space for each kind.
pub fn default_space(kind: ForecasterKind) -> SearchSpace {
    let space = SearchSpace::empty();
    let built = match kind {
        ForecasterKind::Naive => Ok(space),
        ForecasterKind::SeasonalNaive { period } => space.int("m", 1, 2 * period.max(1) as i64),
        ForecasterKind::Ses | ForecasterKind::Theta { .. } => space.real("alpha", 0.01, 0.99, false),
        ForecasterKind::Holt => space.real("alpha", 0.01, 0.99, false).and_then(|s| s.real("beta", 0.01, 0.99, false)),
        ForecasterKind::GlobalLagRidge { period } => space
            .int("p", 1, 2 * period.max(1) as i64)
            .and_then(|s| s.real("ridge", 1e-4, 1e2, true))
            .and_then(|s| s.categorical("seasonal_dummies", &["true", "false"])),
    };
    built.expect("shipped spaces are valid")
}

/// Looks up a kind by name and returns its default space.
pub fn default_space_by_name(name: &str, period: usize) -> Result<SearchSpace> {
    Ok(default_space(ForecasterKind::parse(name, period)?))
}

impl Forecaster for ForecasterKind {
    fn name(&self) -> String {
        self.to_string()
    }

    fn space(&self) -> SearchSpace {
        default_space(*self)
    }

    fn scope(&self) -> Scope {
        match self {
            ForecasterKind::GlobalLagRidge { .. } => Scope::Global,
            _ => Scope::Local,
        }
    }

    fn fit_predict(&self, config: &TrialConfig, ctx: &FitContext<'_>) -> Result<ForecastGrid> {
        let needed = self.min_length(config)?;
        let have = ctx.shortest();
        if have < needed || ctx.series.is_empty() {
            return Err(Error::SeriesTooShort { needed, have });
        }
        if ctx.series.iter().any(|(_, s)| s.iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidHyperparameter("training data contains non-finite values".into()));
        }
        let h = ctx.horizon;
        let mut grid = ForecastGrid::new(ctx.end + 1, h);
        let local = |f: &dyn Fn(&[f64]) -> Vec<f64>| -> Result<ForecastGrid> {
            let mut grid = ForecastGrid::new(ctx.end + 1, h);
            for (node, s) in &ctx.series {
                grid.insert(*node, f(s))?;
            }
            Ok(grid)
        };
        match *self {
            ForecasterKind::Naive => local(&|s| smoothing::naive(s, h)),
            ForecasterKind::SeasonalNaive { .. } => {
                let m = config.int("m")? as usize;
                local(&|s| smoothing::seasonal_naive(s, m, h))
            }
            ForecasterKind::Ses => {
                let alpha = unit_interval(config, "alpha", false)?;
                local(&|s| smoothing::ses(s, alpha, h))
            }
            ForecasterKind::Holt => {
                let alpha = unit_interval(config, "alpha", false)?;
                let beta = unit_interval(config, "beta", true)?;
                local(&|s| smoothing::holt(s, alpha, beta, h))
            }
            ForecasterKind::Theta { period } => {
                let alpha = unit_interval(config, "alpha", false)?;
                local(&|s| smoothing::theta(s, alpha, period, h))
            }
            ForecasterKind::GlobalLagRidge { period } => {
                let features = ridge::LagFeatures {
                    lags: config.int("p")? as usize,
                    season_period: (config.flag("seasonal_dummies")? && period > 1).then_some(period),
                };
                let ridge_penalty = config.real("ridge")?;
                let with_start: Vec<(usize, &[f64])> =
                    ctx.series.iter().map(|(_, s)| (ctx.end + 1 - s.len(), *s)).collect();
                let models = match ctx.scope {
                    Scope::Global => vec![ridge::fit(features, &with_start, ridge_penalty)?; 1],
                    Scope::Local => with_start
                        .iter()
                        .map(|s| ridge::fit(features, std::slice::from_ref(s), ridge_penalty))
                        .collect::<Result<_>>()?,
                };
                for (i, (node, s)) in ctx.series.iter().enumerate() {
                    let model = &models[if ctx.scope == Scope::Global { 0 } else { i }];
                    let f = model.forecast(s, ctx.end, h);
                    grid.insert(*node, f).map_err(|_| {
                        Error::InvalidHyperparameter(format!("non-finite forecast for {node} under {}", config.params_string()))
                    })?;
                }
                Ok(grid)
            }
        }
    }
}

/// Fits `kind` under `config` on `ctx`.
pub fn fit_predict(kind: ForecasterKind, config: &TrialConfig, ctx: &FitContext<'_>) -> Result<ForecastGrid> {
    kind.fit_predict(config, ctx)
}
