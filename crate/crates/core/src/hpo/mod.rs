//! Hyperparameter optimisation: objectives, random search, selection,
//! teacher proxies, ensembles and re-selection.

pub mod objective;
pub mod proxies;
pub mod reselect;
pub mod search;
pub mod store_io;

pub use objective::{
    evaluate, evaluate_gold, evaluate_hpro, evaluate_opt_bu, evaluate_tcv_hier, evaluate_tcv_lowest, fit_leaves,
    refit_and_forecast, score, weighted_level_loss, Evaluation, Loss, ObjectiveKind, ObjectiveSpec, ProxySet, TrialFits,
};
pub use proxies::make_proxies;
pub use reselect::{reselect_for_new_window, Reselection};
pub use search::{
    argmin, draw_configs, ensemble_mean, random_search, record_from, select_best, select_per_offset, PerOffsetSelection, TrialOutcome, TrialRecord,
    TrialStore,
};
pub use store_io::{read_store, write_store};

/// Default teacher depth: `L-1` for trees of at most five levels, else 5.
pub fn default_teacher_levels(num_levels: usize) -> usize {
    if num_levels <= 5 {
        num_levels - 1
    } else {
        5
    }
}
