//! One seed of an experiment: proxies, a shared trial pool scored under every
//! objective, selection, bottom-up aggregation and test metrics.

use crate::data::{SeriesPanel, SplitSpec};
use crate::error::{Error, Result};
use crate::forecasters::{Forecaster, SearchSpace};
use crate::hierarchy::{aggregate_bottom_up, check_coherence, ForecastGrid, LabelMap};
use crate::hpo::{
    default_teacher_levels, draw_configs, ensemble_mean, make_proxies, record_from, refit_and_forecast, score,
    select_best, select_per_offset, Loss, ObjectiveKind, ObjectiveSpec, ProxySet, TrialFits, TrialOutcome, TrialStore,
};
use crate::metrics::{hierarchical_report, LevelWeights, MetricReport};
use crate::{par, seed};

use super::config::ExperimentConfig;

/// Tolerance for the coherence check on every emitted forecast table.
pub const COHERENCE_TOL: f64 = 1e-9;

/// What one seed runs, independent of where the data and models come from.
#[derive(Clone, Debug, PartialEq)]
pub struct RunPlan {
    pub history: usize,
    pub horizon: usize,
    pub windows: Vec<usize>,
    pub loss: Loss,
    pub objectives: Vec<(String, bool)>,
    pub ensembles: Vec<(String, Vec<String>)>,
    pub n_trials: usize,
    pub teacher_trials: usize,
    pub teacher_levels: Option<usize>,
}

impl ExperimentConfig {
    pub fn plan(&self) -> RunPlan {
        RunPlan {
            history: self.history,
            horizon: self.horizon,
            windows: self.windows.clone(),
            loss: self.loss,
            objectives: self.objectives.clone(),
            ensembles: self.ensembles.clone(),
            n_trials: self.student.n_trials,
            teacher_trials: self.teacher.n_trials,
            teacher_levels: self.teacher_levels,
        }
    }
}

/// The student and teacher with the spaces searched for each.
pub struct Models<'a> {
    pub student: &'a dyn Forecaster,
    pub student_space: SearchSpace,
    pub teacher: &'a dyn Forecaster,
    pub teacher_space: SearchSpace,
}

/// A store together with the objective and split it was scored under.
#[derive(Clone, Debug)]
pub struct ScoredStore {
    pub name: String,
    pub spec: ObjectiveSpec,
    pub split: SplitSpec,
    pub store: TrialStore,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MethodForecast {
    pub leaves: ForecastGrid,
    pub all_levels: ForecastGrid,
    pub report: MetricReport,
    /// Selected trial, or one per offset for per-offset composites.
    pub selected: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct MethodOutcome {
    pub name: String,
    pub result: std::result::Result<MethodForecast, String>,
}

impl MethodOutcome {
    pub fn r_h(&self) -> Option<f64> {
        self.result.as_ref().ok().map(|f| f.report.hierarchical)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub check: String,
    pub method: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug)]
pub struct SeedRun {
    pub seed: u64,
    pub labels: LabelMap,
    pub proxies: std::result::Result<ProxySet, String>,
    pub stores: Vec<ScoredStore>,
    pub methods: Vec<MethodOutcome>,
    pub checks: Vec<CheckOutcome>,
}

impl SeedRun {
    pub fn method(&self, name: &str) -> Option<&MethodOutcome> {
        self.methods.iter().find(|m| m.name == name)
    }

    pub fn store(&self, name: &str) -> Option<&ScoredStore> {
        self.stores.iter().find(|s| s.name == name)
    }
}

fn objective_stores(panel: &SeriesPanel, plan: &RunPlan, teacher_levels: usize) -> Vec<(String, ObjectiveSpec, SplitSpec)> {
    let big_l = panel.tree().num_levels();
    let base = |k| SplitSpec::new(plan.history, plan.horizon, k);
    let test_split = base(1);
    let mut out = Vec::new();
    for (name, _) in &plan.objectives {
        match name.as_str() {
            "tcv_lowest" | "tcv_hier" => {
                for &k in &plan.windows {
                    let spec = if name == "tcv_lowest" { ObjectiveSpec::tcv_lowest(plan.loss) } else { ObjectiveSpec::tcv_hier(plan.loss) };
                    let store = if plan.windows.len() == 1 { name.clone() } else { format!("{name}_k{k}") };
                    out.push((store, spec, base(k)));
                }
            }
            "hpro_top" => out.push((name.clone(), ObjectiveSpec::hpro_top(plan.loss, big_l), test_split)),
            "hpro_avg" => out.push((name.clone(), ObjectiveSpec::hpro_avg(plan.loss, big_l, teacher_levels), test_split)),
            _ => {}
        }
    }
    out.push(("opt_bu".into(), ObjectiveSpec::opt_bu(plan.loss), test_split));
    out.push(("gold".into(), ObjectiveSpec::gold(), test_split));
    out
}

fn finish(panel: &SeriesPanel, leaves: ForecastGrid, selected: Vec<usize>) -> Result<MethodForecast> {
    let all_levels = aggregate_bottom_up(panel.tree(), &leaves)?;
    let coherence = check_coherence(panel.tree(), &all_levels, COHERENCE_TOL)?;
    if !coherence.coherent {
        return Err(Error::InvalidObjective(format!("incoherent forecasts: {:?}", coherence.worst)));
    }
    let report = hierarchical_report(panel, &all_levels, &LevelWeights::uniform(panel.tree()))?;
    Ok(MethodForecast { leaves, all_levels, report, selected })
}

/// Runs every requested method for one seed.
pub fn run_seed(panel: &SeriesPanel, plan: &RunPlan, models: &Models<'_>, run_seed: u64) -> Result<SeedRun> {
    let big_l = panel.tree().num_levels();
    let k_max = plan.windows.iter().copied().max().unwrap_or(1);
    let pool_split = SplitSpec::new(plan.history, plan.horizon, k_max);
    pool_split.validate(panel.length())?;
    let teacher_levels = plan.teacher_levels.unwrap_or_else(|| default_teacher_levels(big_l));
    let wants_proxies = plan.objectives.iter().any(|(o, _)| o.starts_with("hpro"));

    let proxies = if wants_proxies {
        make_proxies(
            panel,
            &SplitSpec::new(plan.history, plan.horizon, 1),
            models.teacher,
            &models.teacher_space,
            plan.teacher_trials,
            teacher_levels,
            plan.loss,
            seed::derive(run_seed, "teacher"),
        )
        .map_err(|e| e.to_string())
    } else {
        Err("no proxy objective requested".to_string())
    };

    // Shared pool: every trial is fitted once on 1..=T (test window) and on
    // each validation prefix, then scored under every objective.
    let configs = draw_configs(&models.student.name(), &models.student_space, plan.n_trials, seed::derive(run_seed, "student"));
    let needs_validation = plan.objectives.iter().any(|(o, _)| o.starts_with("tcv"));
    let fits: Vec<Result<TrialFits>> =
        par::map(&configs, |c| TrialFits::fit(panel, &pool_split, models.student, c, needs_validation));

    let panel_fp = panel.fingerprint();
    let mut stores = Vec::new();
    for (name, spec, split) in objective_stores(panel, plan, teacher_levels) {
        let proxy = proxies.as_ref().ok();
        let outcomes: Vec<Result<TrialOutcome>> = par::map_range(configs.len(), |i| {
            let fit = fits[i].as_ref().map_err(|e| Error::InvalidHyperparameter(e.to_string()))?;
            let evaluation = if matches!(spec.kind, ObjectiveKind::TcvLowest | ObjectiveKind::TcvHier) && split.windows != k_max {
                let truncated = TrialFits { test: fit.test.clone(), validation: fit.validation[..split.windows].to_vec() };
                score(panel, &split, &spec, proxy, &truncated)?
            } else {
                score(panel, &split, &spec, proxy, fit)?
            };
            Ok(TrialOutcome { evaluation, leaf_forecasts: Some(fit.test.clone()), trained_on: (1, plan.history) })
        });
        let records = configs.iter().zip(outcomes).enumerate().map(|(i, (c, o))| record_from(i, c.clone(), o)).collect();
        let store = TrialStore {
            records,
            dataset_fingerprint: format!("{panel_fp}/{}", split.fingerprint()),
            objective_fingerprint: spec.fingerprint(),
        };
        stores.push(ScoredStore { name, spec, split, store });
    }

    let mut methods: Vec<MethodOutcome> = Vec::new();
    let mut checks = Vec::new();
    let mut push = |name: String, result: Result<MethodForecast>| {
        methods.push(MethodOutcome { name, result: result.map_err(|e| e.to_string()) });
    };
    let mut po_pairs = Vec::new();
    for s in &stores {
        let po = plan.objectives.iter().any(|(o, po)| *po && s.name.starts_with(o.as_str()));
        let is_tcv = matches!(s.spec.kind, ObjectiveKind::TcvLowest | ObjectiveKind::TcvHier);
        let standard = select_best(&s.store).and_then(|i| {
            let record = &s.store.records[i];
            let leaves = if is_tcv {
                let refit = refit_and_forecast(panel, &s.split, models.student, &record.config)?;
                let pooled = record.leaf_forecasts.as_ref();
                checks.push(CheckOutcome {
                    check: "refit_matches_pool".into(),
                    method: s.name.clone(),
                    passed: pooled == Some(&refit),
                    detail: format!("trial {i}"),
                });
                refit
            } else {
                record.leaf_forecasts.clone().ok_or(Error::EmptyStore)?
            };
            finish(panel, leaves, vec![i])
        });
        push(s.name.clone(), standard);
        if po {
            let composite = select_per_offset(&s.store).and_then(|sel| {
                po_pairs.push((s.name.clone(), sel.objective_per_offset.clone()));
                finish(panel, sel.forecasts, sel.chosen)
            });
            push(format!("{}_po", s.name), composite);
        }
    }

    for (name, members) in &plan.ensembles {
        let grids: std::result::Result<Vec<&ForecastGrid>, String> = members
            .iter()
            .map(|m| match methods.iter().find(|x| &x.name == m) {
                Some(MethodOutcome { result: Ok(f), .. }) => Ok(&f.leaves),
                Some(MethodOutcome { result: Err(e), .. }) => Err(format!("member `{m}` failed: {e}")),
                None => Err(format!("member `{m}` was not run")),
            })
            .collect();
        let result = match grids {
            Ok(g) => ensemble_mean(&g).and_then(|mean| finish(panel, mean, Vec::new())),
            Err(e) => Err(Error::Config(e)),
        };
        let outcome = MethodOutcome { name: name.clone(), result: result.map_err(|e| e.to_string()) };
        if let Some(r) = outcome.r_h() {
            let worst = members.iter().filter_map(|m| methods.iter().find(|x| &x.name == m)?.r_h()).fold(f64::MIN, f64::max);
            checks.push(CheckOutcome {
                check: "ensemble_bound".into(),
                method: name.clone(),
                passed: r <= worst + 1e-9,
                detail: format!("ensemble {r} vs worst member {worst}"),
            });
        }
        methods.push(outcome);
    }

    // Gold floor over single-trial selections from the shared pool.
    if let Some(gold) = methods.iter().find(|m| m.name == "gold").and_then(MethodOutcome::r_h) {
        for s in &stores {
            if let Some(r) = methods.iter().find(|m| m.name == s.name).and_then(MethodOutcome::r_h) {
                checks.push(CheckOutcome {
                    check: "gold_floor".into(),
                    method: s.name.clone(),
                    passed: gold <= r,
                    detail: format!("gold {gold} vs {r}"),
                });
            }
        }
    }
    for (name, composite) in po_pairs {
        let s = stores.iter().find(|s| s.name == name).expect("per-offset store exists");
        if let Ok(i) = select_best(&s.store) {
            let standard = &s.store.records[i].per_offset_losses;
            let ok = composite.len() == standard.len() && composite.iter().zip(standard).all(|(c, s)| c <= s);
            checks.push(CheckOutcome {
                check: "per_offset_dominance".into(),
                method: format!("{name}_po"),
                passed: ok,
                detail: format!("composite {composite:?} vs standard {standard:?}"),
            });
        }
    }

    Ok(SeedRun { seed: run_seed, labels: panel.labels().clone(), proxies, stores, methods, checks })
}
