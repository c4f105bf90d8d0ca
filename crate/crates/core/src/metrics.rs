//! Point-forecast error metrics: MSE, RMSSE and its level-weighted and
//! hierarchical aggregates, plus Pearson correlation.

use std::collections::BTreeMap;

use crate::data::SeriesPanel;
use crate::error::{Error, Result};
use crate::hierarchy::{ForecastGrid, HierarchyTree, LabelMap, NodeId};

fn check_lengths(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(())
}

pub fn mse(actual: &[f64], predicted: &[f64]) -> Result<f64> {
    check_lengths(actual, predicted)?;
    Ok(actual.iter().zip(predicted).map(|(a, p)| (a - p).powi(2)).sum::<f64>() / actual.len() as f64)
}

/// Mean squared one-step change over the history: `(1/(T-1)) * sum (x_t - x_{t-1})^2`.
pub fn naive_scale(history: &[f64]) -> Result<f64> {
    if history.len() < 2 {
        return Err(Error::InsufficientHistory(format!("RMSSE needs T >= 2, got {}", history.len())));
    }
    let e = history.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum::<f64>() / (history.len() - 1) as f64;
    if e > 0.0 {
        Ok(e)
    } else {
        Err(Error::ConstantHistory)
    }
}

/// `sqrt(mse(actual, predicted) / naive_scale(history))`.
pub fn rmsse(history: &[f64], actual: &[f64], predicted: &[f64]) -> Result<f64> {
    let e = mse(actual, predicted)?;
    Ok((e / naive_scale(history)?).sqrt())
}

/// Per-node weights `alpha_j` within each level; each level sums to 1.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelWeights {
    // weights[l-1][j-1]
    weights: Vec<Vec<f64>>,
}

impl LevelWeights {
    /// `alpha_j = 1/N_l`.
    pub fn uniform(tree: &HierarchyTree) -> Self {
        Self { weights: tree.level_sizes().iter().map(|&n| vec![1.0 / n as f64; n]).collect() }
    }

    pub fn new(tree: &HierarchyTree, weights: Vec<Vec<f64>>) -> Result<Self> {
        if weights.len() != tree.num_levels() {
            return Err(Error::InvalidConfig("one weight vector per level required".into()));
        }
        for (l, (w, &n)) in weights.iter().zip(tree.level_sizes()).enumerate() {
            if w.len() != n || w.iter().any(|v| !(*v >= 0.0)) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidConfig(format!("level {} weights must be {n} non-negative values summing to 1", l + 1)));
            }
        }
        Ok(Self { weights })
    }

    pub fn get(&self, node: NodeId) -> f64 {
        self.weights[node.level - 1][node.index - 1]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    /// `r^{l,j}` for every node with a defined RMSSE.
    pub per_node: BTreeMap<NodeId, f64>,
    /// `r^l` for `l = 1..=L`.
    pub per_level: Vec<f64>,
    /// `R_H`: mean of `per_level`.
    pub hierarchical: f64,
    /// Nodes with constant history; their weight is spread over the rest of the level.
    pub excluded: Vec<NodeId>,
}

impl MetricReport {
    /// CSV with header `level,node_id,rmsse`: one row per node, then one
    /// `<level>,__level__,<r^l>` row per level and an `all,__R_H__,<R_H>` row.
    pub fn to_csv(&self, labels: &LabelMap) -> String {
        let mut out = String::from("level,node_id,rmsse\n");
        for (node, r) in &self.per_node {
            out.push_str(&format!("{},{},{r}\n", node.level, labels.label(*node)));
        }
        for (l, r) in self.per_level.iter().enumerate() {
            out.push_str(&format!("{},__level__,{r}\n", l + 1));
        }
        out.push_str(&format!("all,__R_H__,{}\n", self.hierarchical));
        out
    }
}

/// RMSSE of every node of `forecasts` against the panel, scaled by each
/// node's own history up to the forecast origin, combined per level with
/// `weights` and averaged over levels.
pub fn hierarchical_report(panel: &SeriesPanel, forecasts: &ForecastGrid, weights: &LevelWeights) -> Result<MetricReport> {
    let tree = panel.tree();
    let origin = forecasts.start() - 1;
    let h = forecasts.len();
    if origin + h > panel.length() {
        return Err(Error::InsufficientHistory("forecast window runs past the panel".into()));
    }
    let mut per_node = BTreeMap::new();
    let mut per_level = Vec::with_capacity(tree.num_levels());
    let mut excluded = Vec::new();
    for level in 1..=tree.num_levels() {
        let (mut acc, mut wsum) = (0.0, 0.0);
        for node in tree.nodes_at(level) {
            let predicted = forecasts.require(node)?;
            let history = panel.history(node, origin);
            let actual = panel.slice(node, origin + 1, origin + h);
            match rmsse(history, actual, predicted) {
                Ok(r) => {
                    per_node.insert(node, r);
                    acc += weights.get(node) * r;
                    wsum += weights.get(node);
                }
                Err(Error::ConstantHistory) => excluded.push(node),
                Err(e) => return Err(e),
            }
        }
        per_level.push(if wsum > 0.0 { acc / wsum } else { 0.0 });
    }
    let hierarchical = per_level.iter().sum::<f64>() / per_level.len() as f64;
    Ok(MetricReport { per_node, per_level, hierarchical, excluded })
}

/// Sample Pearson correlation.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    check_lengths(xs, ys)?;
    if xs.len() < 2 {
        return Err(Error::InsufficientHistory("Pearson needs at least 2 points".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}
