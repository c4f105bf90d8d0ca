//! The HPO objectives: temporal cross-validation at the leaves or across the
//! hierarchy, the proxy objective, the perfect-teacher (OPT-BU) objective and
//! the test-set Gold objective.

use std::fmt;
use std::str::FromStr;

use crate::data::{SeriesPanel, SplitSpec};
use crate::error::{Error, Result};
use crate::forecasters::{FitContext, Forecaster, TrialConfig};
use crate::hierarchy::{aggregate_bottom_up, ForecastGrid, NodeId};
use crate::metrics::{self, LevelWeights};

/// Error measure applied to one node's window.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Loss {
    Mse,
    Rmsse,
}

impl fmt::Display for Loss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Loss::Mse => "mse",
            Loss::Rmsse => "rmsse",
        })
    }
}

impl FromStr for ObjectiveKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "tcv_lowest" => ObjectiveKind::TcvLowest,
            "tcv_hier" => ObjectiveKind::TcvHier,
            "hpro" => ObjectiveKind::HPro,
            "opt_bu" => ObjectiveKind::OptBu,
            "gold" => ObjectiveKind::Gold,
            other => return Err(Error::InvalidObjective(format!("unknown objective `{other}`"))),
        })
    }
}

impl FromStr for Loss {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(Loss::Mse),
            "rmsse" => Ok(Loss::Rmsse),
            other => Err(Error::InvalidObjective(format!("unknown loss `{other}`"))),
        }
    }
}

impl Loss {
    /// Window loss plus one loss per offset. For RMSSE the per-offset value is
    /// `|a_h - p_h| / sqrt(naive_scale)`. `None` when the node's history is
    /// constant and RMSSE is undefined.
    fn node_losses(&self, history: &[f64], actual: &[f64], predicted: &[f64]) -> Result<Option<(f64, Vec<f64>)>> {
        let sq: Vec<f64> = actual.iter().zip(predicted).map(|(a, p)| (a - p).powi(2)).collect();
        match self {
            Loss::Mse => Ok(Some((metrics::mse(actual, predicted)?, sq))),
            Loss::Rmsse => match metrics::naive_scale(history) {
                Ok(scale) => {
                    let window = (metrics::mse(actual, predicted)? / scale).sqrt();
                    Ok(Some((window, sq.iter().map(|e| (e / scale).sqrt()).collect())))
                }
                Err(Error::ConstantHistory) => Ok(None),
                Err(e) => Err(e),
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ObjectiveKind {
    TcvLowest,
    TcvHier,
    HPro,
    OptBu,
    Gold,
}

impl ObjectiveKind {
    /// True for the kinds scored on validation-window fits.
    pub fn needs_validation(self) -> bool {
        matches!(self, ObjectiveKind::TcvLowest | ObjectiveKind::TcvHier)
    }
}

impl fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ObjectiveKind::TcvLowest => "tcv_lowest",
            ObjectiveKind::TcvHier => "tcv_hier",
            ObjectiveKind::HPro => "hpro",
            ObjectiveKind::OptBu => "opt_bu",
            ObjectiveKind::Gold => "gold",
        })
    }
}

/// Which objective, with which loss, and (for H-Pro) the per-level teacher
/// weights `w(1..L-1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectiveSpec {
    pub kind: ObjectiveKind,
    pub loss: Loss,
    pub weights: Vec<f64>,
}

impl ObjectiveSpec {
    pub fn tcv_lowest(loss: Loss) -> Self {
        Self { kind: ObjectiveKind::TcvLowest, loss, weights: Vec::new() }
    }

    pub fn tcv_hier(loss: Loss) -> Self {
        Self { kind: ObjectiveKind::TcvHier, loss, weights: Vec::new() }
    }

    pub fn opt_bu(loss: Loss) -> Self {
        Self { kind: ObjectiveKind::OptBu, loss, weights: Vec::new() }
    }

    pub fn gold() -> Self {
        Self { kind: ObjectiveKind::Gold, loss: Loss::Rmsse, weights: Vec::new() }
    }

    pub fn hpro(loss: Loss, weights: Vec<f64>) -> Self {
        Self { kind: ObjectiveKind::HPro, loss, weights }
    }

    /// H-Pro-Top: all weight on the root.
    pub fn hpro_top(loss: Loss, num_levels: usize) -> Self {
        let mut w = vec![0.0; num_levels - 1];
        w[0] = 1.0;
        Self::hpro(loss, w)
    }

    /// H-Pro-Avg: `w(l) = 1/L_T` for `l <= L_T`.
    pub fn hpro_avg(loss: Loss, num_levels: usize, teacher_levels: usize) -> Self {
        let w = (1..num_levels).map(|l| if l <= teacher_levels { 1.0 / teacher_levels as f64 } else { 0.0 }).collect();
        Self::hpro(loss, w)
    }

    /// `w(l) = 1/(L-1)` on every non-leaf level.
    pub fn hpro_uniform(loss: Loss, num_levels: usize) -> Self {
        Self::hpro_avg(loss, num_levels, num_levels - 1)
    }

    /// Deepest level with positive weight.
    pub fn teacher_levels(&self) -> usize {
        self.weights.iter().rposition(|&w| w > 0.0).map_or(0, |i| i + 1)
    }

    pub fn validate(&self, num_levels: usize) -> Result<()> {
        if num_levels < 2 {
            return Err(Error::InvalidObjective(format!("need L >= 2, got {num_levels}")));
        }
        if self.kind == ObjectiveKind::HPro {
            if self.weights.len() != num_levels - 1 {
                return Err(Error::InvalidObjective(format!("H-Pro needs {} weights, got {}", num_levels - 1, self.weights.len())));
            }
            if self.weights.iter().any(|w| !(0.0..=1.0).contains(w)) || (self.weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidObjective("H-Pro weights must lie in [0,1] and sum to 1".into()));
            }
        }
        Ok(())
    }

    pub fn fingerprint(&self) -> String {
        let w: Vec<String> = self.weights.iter().map(|w| format!("{w:?}")).collect();
        format!("{}:{}:[{}]", self.kind, self.loss, w.join(","))
    }

    /// Inverse of [`ObjectiveSpec::fingerprint`].
    pub fn from_fingerprint(text: &str) -> Result<Self> {
        let bad = || Error::InvalidObjective(format!("malformed objective fingerprint `{text}`"));
        let mut parts = text.splitn(3, ':');
        let kind = parts.next().ok_or_else(bad)?.parse()?;
        let loss = parts.next().ok_or_else(bad)?.parse()?;
        let w = parts.next().and_then(|w| w.strip_prefix('[')?.strip_suffix(']')).ok_or_else(bad)?;
        let weights = w.split(',').filter(|s| !s.is_empty()).map(|s| s.parse().map_err(|_| bad())).collect::<Result<_>>()?;
        Ok(Self { kind, loss, weights })
    }
}

/// Teacher forecasts over the test window for every node of levels `1..=L_T`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProxySet {
    pub grid: ForecastGrid,
    pub levels: usize,
    /// Teacher name and chosen hyperparameters.
    pub provenance: String,
}

impl ProxySet {
    /// Ground truth as proxies: the perfect teacher.
    pub fn perfect(panel: &SeriesPanel, split: &SplitSpec, levels: usize) -> Result<Self> {
        let nodes: Vec<NodeId> = (1..=levels).flat_map(|l| panel.tree().nodes_at(l)).collect();
        let test = split.test_window();
        Ok(Self { grid: panel.truth_grid(nodes, test.start, test.len)?, levels, provenance: "perfect".into() })
    }

    pub fn covers(&self, panel: &SeriesPanel, level: usize) -> bool {
        level <= self.levels && panel.tree().nodes_at(level).all(|n| self.grid.get(n).is_some())
    }

    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for (node, values) in self.grid.iter() {
            h.update((node.level as u64).to_le_bytes());
            h.update((node.index as u64).to_le_bytes());
            for v in values {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

/// An objective value with its per-offset breakdown.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub objective: f64,
    pub per_offset: Vec<f64>,
}

/// Leaf forecasts for one configuration: trained on `1..=T` for the test
/// window, and on `1..=T-kH` for each validation window `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialFits {
    pub test: ForecastGrid,
    pub validation: Vec<ForecastGrid>,
}

/// Fits `model` on leaf histories `1..=end` and forecasts `horizon` steps.
pub fn fit_leaves(panel: &SeriesPanel, model: &dyn Forecaster, config: &TrialConfig, end: usize, horizon: usize) -> Result<ForecastGrid> {
    let series = panel.tree().leaves().map(|n| (n, panel.history(n, end))).collect();
    model.fit_predict(config, &FitContext::new(series, end, horizon, model.scope()))
}

impl TrialFits {
    pub fn fit(panel: &SeriesPanel, split: &SplitSpec, model: &dyn Forecaster, config: &TrialConfig, with_validation: bool) -> Result<Self> {
        split.validate(panel.length())?;
        let test = fit_leaves(panel, model, config, split.history, split.horizon)?;
        let validation = if with_validation {
            (1..=split.windows)
                .map(|k| fit_leaves(panel, model, config, split.validation_window(k).start - 1, split.horizon))
                .collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        Ok(Self { test, validation })
    }
}

/// `sum_l w_l * mean_j loss(target(l,j), forecast(l,j))` over `levels`,
/// with RMSSE scaled by each node's panel history before the window. Nodes
/// with undefined RMSSE are dropped from their level's mean.
pub fn weighted_level_loss(
    panel: &SeriesPanel,
    target: &ForecastGrid,
    forecast: &ForecastGrid,
    levels: &[(usize, f64)],
    loss: Loss,
) -> Result<Evaluation> {
    let h = forecast.len();
    let origin = forecast.start() - 1;
    let mut objective = 0.0;
    let mut per_offset = vec![0.0; h];
    for &(level, weight) in levels {
        if weight == 0.0 {
            continue;
        }
        let (mut acc, mut acc_h, mut count) = (0.0, vec![0.0; h], 0usize);
        for node in panel.tree().nodes_at(level) {
            let actual = target.get(node).ok_or(Error::MissingProxyLevel(level))?;
            let predicted = forecast.require(node)?;
            if let Some((w, offs)) = loss.node_losses(panel.history(node, origin), actual, predicted)? {
                acc += w;
                acc_h.iter_mut().zip(&offs).for_each(|(a, o)| *a += o);
                count += 1;
            }
        }
        if count > 0 {
            let c = count as f64;
            objective += weight * acc / c;
            per_offset.iter_mut().zip(&acc_h).for_each(|(p, a)| *p += weight * a / c);
        }
    }
    Ok(Evaluation { objective, per_offset })
}

fn mean_evaluations(evals: Vec<Evaluation>) -> Evaluation {
    let k = evals.len() as f64;
    let h = evals[0].per_offset.len();
    let objective = evals.iter().map(|e| e.objective).sum::<f64>() / k;
    let per_offset = (0..h).map(|i| evals.iter().map(|e| e.per_offset[i]).sum::<f64>() / k).collect();
    Evaluation { objective, per_offset }
}

/// Scores already-fitted leaf forecasts under `spec`.
pub fn score(
    panel: &SeriesPanel,
    split: &SplitSpec,
    spec: &ObjectiveSpec,
    proxies: Option<&ProxySet>,
    fits: &TrialFits,
) -> Result<Evaluation> {
    let tree = panel.tree();
    let big_l = tree.num_levels();
    spec.validate(big_l)?;
    let test = split.test_window();
    match spec.kind {
        ObjectiveKind::TcvLowest | ObjectiveKind::TcvHier => {
            if fits.validation.len() != split.windows {
                return Err(Error::InvalidObjective("validation fits missing".into()));
            }
            let evals = fits
                .validation
                .iter()
                .map(|leaves| {
                    let truth = panel.truth_all(leaves.start(), leaves.len())?;
                    if spec.kind == ObjectiveKind::TcvLowest {
                        weighted_level_loss(panel, &truth, leaves, &[(big_l, 1.0)], spec.loss)
                    } else {
                        let full = aggregate_bottom_up(tree, leaves)?;
                        let levels: Vec<(usize, f64)> = (1..=big_l).map(|l| (l, 1.0 / big_l as f64)).collect();
                        weighted_level_loss(panel, &truth, &full, &levels, spec.loss)
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(mean_evaluations(evals))
        }
        ObjectiveKind::HPro => {
            let proxies = proxies.ok_or(Error::MissingProxyLevel(1))?;
            let full = aggregate_bottom_up(tree, &fits.test)?;
            let levels: Vec<(usize, f64)> = spec.weights.iter().enumerate().map(|(i, &w)| (i + 1, w)).collect();
            for &(l, w) in &levels {
                if w > 0.0 && !proxies.covers(panel, l) {
                    return Err(Error::MissingProxyLevel(l));
                }
            }
            if proxies.grid.start() != test.start || proxies.grid.len() != test.len {
                return Err(Error::WindowMismatch("proxies do not span the test window".into()));
            }
            weighted_level_loss(panel, &proxies.grid, &full, &levels, spec.loss)
        }
        ObjectiveKind::OptBu => {
            let full = aggregate_bottom_up(tree, &fits.test)?;
            let truth = panel.truth_all(test.start, test.len)?;
            let levels: Vec<(usize, f64)> = (1..big_l).map(|l| (l, 1.0 / (big_l - 1) as f64)).collect();
            weighted_level_loss(panel, &truth, &full, &levels, spec.loss)
        }
        ObjectiveKind::Gold => {
            let full = aggregate_bottom_up(tree, &fits.test)?;
            let report = metrics::hierarchical_report(panel, &full, &LevelWeights::uniform(tree))?;
            let truth = panel.truth_all(test.start, test.len)?;
            let levels: Vec<(usize, f64)> = (1..=big_l).map(|l| (l, 1.0 / big_l as f64)).collect();
            let per_offset = weighted_level_loss(panel, &truth, &full, &levels, Loss::Rmsse)?.per_offset;
            Ok(Evaluation { objective: report.hierarchical, per_offset })
        }
    }
}

/// Fits and scores one configuration.
pub fn evaluate(
    panel: &SeriesPanel,
    split: &SplitSpec,
    model: &dyn Forecaster,
    config: &TrialConfig,
    spec: &ObjectiveSpec,
    proxies: Option<&ProxySet>,
) -> Result<(Evaluation, TrialFits)> {
    let fits = TrialFits::fit(panel, split, model, config, spec.kind.needs_validation())?;
    Ok((score(panel, split, spec, proxies, &fits)?, fits))
}

pub fn evaluate_tcv_lowest(panel: &SeriesPanel, split: &SplitSpec, model: &dyn Forecaster, config: &TrialConfig, loss: Loss) -> Result<Evaluation> {
    Ok(evaluate(panel, split, model, config, &ObjectiveSpec::tcv_lowest(loss), None)?.0)
}

pub fn evaluate_tcv_hier(panel: &SeriesPanel, split: &SplitSpec, model: &dyn Forecaster, config: &TrialConfig, loss: Loss) -> Result<Evaluation> {
    Ok(evaluate(panel, split, model, config, &ObjectiveSpec::tcv_hier(loss), None)?.0)
}

/// The proxy objective. Also returns the test-window leaf forecasts, which
/// are final: the student is already trained on `1..=T`.
pub fn evaluate_hpro(
    panel: &SeriesPanel,
    split: &SplitSpec,
    model: &dyn Forecaster,
    config: &TrialConfig,
    proxies: &ProxySet,
    weights: &[f64],
    loss: Loss,
) -> Result<(Evaluation, ForecastGrid)> {
    let spec = ObjectiveSpec::hpro(loss, weights.to_vec());
    let (eval, fits) = evaluate(panel, split, model, config, &spec, Some(proxies))?;
    Ok((eval, fits.test))
}

pub fn evaluate_opt_bu(panel: &SeriesPanel, split: &SplitSpec, model: &dyn Forecaster, config: &TrialConfig, loss: Loss) -> Result<f64> {
    Ok(evaluate(panel, split, model, config, &ObjectiveSpec::opt_bu(loss), None)?.0.objective)
}

pub fn evaluate_gold(panel: &SeriesPanel, split: &SplitSpec, model: &dyn Forecaster, config: &TrialConfig) -> Result<f64> {
    Ok(evaluate(panel, split, model, config, &ObjectiveSpec::gold(), None)?.0.objective)
}

/// Refits on `1..=T` and forecasts the test window.
pub fn refit_and_forecast(panel: &SeriesPanel, split: &SplitSpec, model: &dyn Forecaster, config: &TrialConfig) -> Result<ForecastGrid> {
    split.validate(panel.length())?;
    fit_leaves(panel, model, config, split.history, split.horizon)
}
