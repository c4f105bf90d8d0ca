use crate::error::{Error, Result};
use crate::forecasters::{SearchSpace, TrialConfig};
use crate::hierarchy::ForecastGrid;
use crate::{par, seed};

use super::objective::Evaluation;

/// What an evaluator returns for one configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialOutcome {
    pub evaluation: Evaluation,
    /// Leaf forecasts for the target window, if the evaluator produced them.
    pub leaf_forecasts: Option<ForecastGrid>,
    /// Inclusive training range `(first, last)` behind `leaf_forecasts`.
    pub trained_on: (usize, usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrialRecord {
    pub index: usize,
    pub config: TrialConfig,
    pub leaf_forecasts: Option<ForecastGrid>,
    /// `+inf` for failed trials.
    pub objective_value: f64,
    pub per_offset_losses: Vec<f64>,
    pub trained_on: (usize, usize),
    pub error: Option<String>,
}

impl TrialRecord {
    pub fn succeeded(&self) -> bool {
        self.error.is_none() && self.objective_value.is_finite()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrialStore {
    pub records: Vec<TrialRecord>,
    /// `<panel hash>/<split>` of the data the trials were evaluated on.
    pub dataset_fingerprint: String,
    pub objective_fingerprint: String,
}

impl TrialStore {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn objectives(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.objective_value).collect()
    }

    /// The panel part of `dataset_fingerprint`.
    pub fn panel_fingerprint(&self) -> &str {
        self.dataset_fingerprint.split('/').next().unwrap_or("")
    }
}

/// Draws `n_trials` configurations from `space` (all draws happen before any
/// evaluation) and evaluates them, possibly in parallel. Records come back in
/// draw order; a failing evaluation is recorded with `+inf` objective.
pub fn random_search<F>(kind: &str, space: &SearchSpace, n_trials: usize, seed: u64, evaluator: F) -> TrialStore
where
    F: Fn(&TrialConfig) -> Result<TrialOutcome> + Sync + Send,
{
    let configs = draw_configs(kind, space, n_trials, seed);
    let outcomes = par::map(&configs, |c| evaluator(c));
    let records = configs
        .into_iter()
        .zip(outcomes)
        .enumerate()
        .map(|(index, (config, outcome))| record_from(index, config, outcome))
        .collect();
    TrialStore { records, ..Default::default() }
}

/// The configurations [`random_search`] evaluates, in draw order.
pub fn draw_configs(kind: &str, space: &SearchSpace, n_trials: usize, seed: u64) -> Vec<TrialConfig> {
    let mut rng = seed::rng(seed, "random_search");
    (0..n_trials)
        .map(|i| TrialConfig {
            kind: kind.to_string(),
            params: space.sample(&mut rng),
            seed: seed::derive(seed, &format!("trial/{i}")),
        })
        .collect()
}

/// Turns an evaluation result into a record; errors and non-finite
/// objectives become `+inf` with an error note.
pub fn record_from(index: usize, config: TrialConfig, outcome: Result<TrialOutcome>) -> TrialRecord {
    match outcome {
        Ok(o) if o.evaluation.objective.is_finite() => TrialRecord {
            index,
            config,
            leaf_forecasts: o.leaf_forecasts,
            objective_value: o.evaluation.objective,
            per_offset_losses: o.evaluation.per_offset,
            trained_on: o.trained_on,
            error: None,
        },
        Ok(o) => TrialRecord {
            index,
            config,
            leaf_forecasts: None,
            objective_value: f64::INFINITY,
            per_offset_losses: vec![f64::INFINITY; o.evaluation.per_offset.len()],
            trained_on: o.trained_on,
            error: Some("non-finite objective".into()),
        },
        Err(e) => TrialRecord {
            index,
            config,
            leaf_forecasts: None,
            objective_value: f64::INFINITY,
            per_offset_losses: Vec::new(),
            trained_on: (0, 0),
            error: Some(e.to_string()),
        },
    }
}

/// Index of the smallest value; ties go to the smallest index, non-finite
/// values are skipped.
pub fn argmin(values: &[f64]) -> Option<usize> {
    values
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_finite())
        .fold(None, |best: Option<(usize, f64)>, (i, &v)| match best {
            Some((_, b)) if b <= v => best,
            _ => Some((i, v)),
        })
        .map(|(i, _)| i)
}

/// The Standard selection: lowest objective over the whole horizon.
pub fn select_best(store: &TrialStore) -> Result<usize> {
    argmin(&store.objectives()).ok_or(Error::EmptyStore)
}

/// A per-offset composite.
#[derive(Clone, Debug, PartialEq)]
pub struct PerOffsetSelection {
    /// Trial chosen for each offset.
    pub chosen: Vec<usize>,
    /// Leaf forecasts stitched from the chosen trials.
    pub forecasts: ForecastGrid,
    /// The selection objective at each offset (the chosen trial's per-offset loss).
    pub objective_per_offset: Vec<f64>,
}

/// Per-offset (PO) selection: for each offset, the trial with the lowest
/// per-offset loss (ties to the smallest index), concatenated.
pub fn select_per_offset(store: &TrialStore) -> Result<PerOffsetSelection> {
    let usable: Vec<&TrialRecord> = store.records.iter().filter(|r| r.succeeded() && r.leaf_forecasts.is_some()).collect();
    let first = usable.first().ok_or(Error::EmptyStore)?;
    let template = first.leaf_forecasts.as_ref().expect("filtered");
    let h = template.len();
    for r in &usable {
        let f = r.leaf_forecasts.as_ref().expect("filtered");
        if r.per_offset_losses.len() != h || !f.same_shape(template) {
            return Err(Error::WindowMismatch(format!("trial {} does not share the target window", r.index)));
        }
    }
    let mut chosen = Vec::with_capacity(h);
    let mut objective_per_offset = Vec::with_capacity(h);
    for offset in 0..h {
        let losses: Vec<f64> = usable.iter().map(|r| r.per_offset_losses[offset]).collect();
        let pick = argmin(&losses).ok_or(Error::EmptyStore)?;
        chosen.push(usable[pick].index);
        objective_per_offset.push(losses[pick]);
    }
    let mut forecasts = ForecastGrid::new(template.start(), h);
    for node in template.nodes() {
        let values = chosen
            .iter()
            .enumerate()
            .map(|(offset, &i)| store.records[i].leaf_forecasts.as_ref().expect("usable").get(node).expect("same shape")[offset])
            .collect();
        forecasts.insert(node, values)?;
    }
    Ok(PerOffsetSelection { chosen, forecasts, objective_per_offset })
}

/// Elementwise arithmetic mean of at least two identically shaped grids.
pub fn ensemble_mean(grids: &[&ForecastGrid]) -> Result<ForecastGrid> {
    if grids.len() < 2 {
        return Err(Error::WindowMismatch(format!("ensemble needs at least 2 grids, got {}", grids.len())));
    }
    let first = grids[0];
    if let Some(bad) = grids.iter().position(|g| !g.same_shape(first)) {
        return Err(Error::WindowMismatch(format!("grid {bad} differs in window or nodes")));
    }
    let k = grids.len() as f64;
    let mut out = ForecastGrid::new(first.start(), first.len());
    for node in first.nodes() {
        let values = (0..first.len())
            .map(|i| grids.iter().map(|g| g.get(node).expect("same shape")[i]).sum::<f64>() / k)
            .collect();
        out.insert(node, values)?;
    }
    Ok(out)
}
