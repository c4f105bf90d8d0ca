use crate::data::{SeriesPanel, SplitSpec};
use crate::error::{Error, Result};
use crate::forecasters::Forecaster;
use crate::par;

use super::objective::{evaluate, ObjectiveSpec, ProxySet};
use super::search::{record_from, select_best, TrialOutcome, TrialStore};

/// A re-selection outcome: the re-scored store and its Standard pick.
#[derive(Clone, Debug, PartialEq)]
pub struct Reselection {
    pub store: TrialStore,
    pub best: usize,
}

/// Refits every stored configuration for `split` (typically a later test
/// window over the same panel), scores it under `spec` and selects again.
/// No new configurations are drawn.
pub fn reselect_for_new_window(
    store: &TrialStore,
    panel: &SeriesPanel,
    split: &SplitSpec,
    model: &dyn Forecaster,
    spec: &ObjectiveSpec,
    proxies: Option<&ProxySet>,
) -> Result<Reselection> {
    let actual = panel.fingerprint();
    if store.panel_fingerprint() != actual {
        return Err(Error::FingerprintMismatch { stored: store.panel_fingerprint().to_string(), actual });
    }
    let outcomes = par::map(&store.records, |r| {
        let (evaluation, fits) = evaluate(panel, split, model, &r.config, spec, proxies)?;
        Ok(TrialOutcome { evaluation, leaf_forecasts: Some(fits.test), trained_on: (1, split.history) })
    });
    let records = store
        .records
        .iter()
        .zip(outcomes)
        .map(|(r, o)| record_from(r.index, r.config.clone(), o))
        .collect();
    let rescored = TrialStore {
        records,
        dataset_fingerprint: format!("{actual}/{}", split.fingerprint()),
        objective_fingerprint: spec.fingerprint(),
    };
    let best = select_best(&rescored)?;
    Ok(Reselection { store: rescored, best })
}
