use crate::data::{SeriesPanel, SplitSpec};
use crate::error::{Error, Result};
use crate::forecasters::{FitContext, Forecaster, SearchSpace, TrialConfig};
use crate::hierarchy::{ForecastGrid, NodeId};

use super::objective::{weighted_level_loss, Evaluation, Loss, ProxySet};
use super::search::{random_search, select_best, TrialOutcome};

fn fit_nodes(panel: &SeriesPanel, teacher: &dyn Forecaster, config: &TrialConfig, nodes: &[NodeId], end: usize, horizon: usize) -> Result<ForecastGrid> {
    let series = nodes.iter().map(|&n| (n, panel.history(n, end))).collect();
    teacher.fit_predict(config, &FitContext::new(series, end, horizon, teacher.scope()))
}

/// Tunes `teacher` by temporal cross-validation on the series of levels
/// `1..=teacher_levels` (each level weighted equally), refits the winner on
/// `1..=T` and forecasts the test window for every node of those levels.
#[allow(clippy::too_many_arguments)]
pub fn make_proxies(
    panel: &SeriesPanel,
    split: &SplitSpec,
    teacher: &dyn Forecaster,
    space: &SearchSpace,
    n_trials: usize,
    teacher_levels: usize,
    loss: Loss,
    seed: u64,
) -> Result<ProxySet> {
    let big_l = panel.tree().num_levels();
    if teacher_levels == 0 || teacher_levels >= big_l {
        return Err(Error::EmptyLevelSet(teacher_levels));
    }
    split.validate(panel.length())?;
    let nodes: Vec<NodeId> = (1..=teacher_levels).flat_map(|l| panel.tree().nodes_at(l)).collect();
    let levels: Vec<(usize, f64)> = (1..=teacher_levels).map(|l| (l, 1.0 / teacher_levels as f64)).collect();

    let store = random_search(&teacher.name(), space, n_trials.max(1), seed, |config| {
        let mut objective = 0.0;
        let mut per_offset = vec![0.0; split.horizon];
        for k in 1..=split.windows {
            let window = split.validation_window(k);
            let forecast = fit_nodes(panel, teacher, config, &nodes, window.start - 1, split.horizon)?;
            let truth = panel.truth_grid(nodes.iter().copied(), window.start, window.len)?;
            let e = weighted_level_loss(panel, &truth, &forecast, &levels, loss)?;
            objective += e.objective / split.windows as f64;
            per_offset.iter_mut().zip(&e.per_offset).for_each(|(p, v)| *p += v / split.windows as f64);
        }
        Ok(TrialOutcome { evaluation: Evaluation { objective, per_offset }, leaf_forecasts: None, trained_on: (1, split.history) })
    });
    let best = &store.records[select_best(&store).map_err(|e| e.context("no teacher configuration could be fitted"))?];
    let grid = fit_nodes(panel, teacher, &best.config, &nodes, split.history, split.horizon)?;
    let provenance = format!("{}({})", teacher.name(), best.config.params_string());
    Ok(ProxySet { grid, levels: teacher_levels, provenance })
}
