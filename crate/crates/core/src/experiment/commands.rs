use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::data::{generate_synthetic, load_csv, write_dataset, DatasetMeta, SeriesPanel, SplitSpec};
use crate::error::{Error, Result};
use crate::forecasters::{default_space, ForecasterKind};
use crate::hierarchy::{ForecastGrid, LabelMap};
use crate::hpo::{
    default_teacher_levels, make_proxies, random_search, read_store, reselect_for_new_window, score, select_best,
    write_store, Loss, ObjectiveKind, ObjectiveSpec, ProxySet, TrialFits, TrialOutcome, TrialStore,
};
use crate::metrics::pearson;
use crate::theory::{self, Lemma1Report, SweepRow, VarianceDemo, VarianceDemoConfig};
use crate::{par, seed};

use super::config::{DatasetSource, ExperimentConfig};
use super::pipeline::{run_seed, Models, SeedRun};
use super::write_atomic;

/// Command-line overrides applied on top of a config file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunOptions {
    pub seed_override: Option<u64>,
    pub jobs: Option<usize>,
    pub out: Option<PathBuf>,
}

impl RunOptions {
    pub fn apply(&self, config: &mut ExperimentConfig) {
        if let Some(s) = self.seed_override {
            config.seeds = vec![s];
        }
        if let Some(j) = self.jobs {
            config.jobs = j;
        }
        if let Some(o) = &self.out {
            config.out = o.clone();
        }
    }
}

fn load(config_path: &Path, opts: &RunOptions) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::load(config_path)?;
    opts.apply(&mut config);
    Ok(config)
}

/// The panel a given run seed works on.
pub fn load_panel(config: &ExperimentConfig, run_seed: u64) -> Result<SeriesPanel> {
    match &config.dataset {
        DatasetSource::Synthetic { .. } => generate_synthetic(&config.synthetic_for(run_seed).expect("synthetic source")),
        DatasetSource::Files { hierarchy, series } => load_csv(hierarchy, series),
    }
}

/// Writes the synthetic dataset for the first configured seed to `<out>/data`.
pub fn cmd_generate(config_path: &Path, opts: &RunOptions) -> Result<PathBuf> {
    let config = load(config_path, opts)?;
    let run_seed = config.seeds[0];
    let synth = config
        .synthetic_for(run_seed)
        .ok_or_else(|| Error::Config("`generate` needs a synthetic [dataset] section".into()))?;
    let panel = generate_synthetic(&synth)?;
    let dir = config.out.join("data");
    let meta = DatasetMeta { history: synth.history, horizon: synth.horizon, seed: synth.seed, shift_mode: synth.shift_mode.to_string() };
    write_dataset(&dir, &panel, Some(&meta))?;
    Ok(dir)
}

/// Every seed of a run, in configured seed order.
#[derive(Clone, Debug)]
pub struct ExperimentRun {
    pub methods: Vec<String>,
    pub seeds: Vec<SeedRun>,
}

impl ExperimentRun {
    /// R_H of `method` per seed; `None` where the method failed.
    pub fn r_h(&self, method: &str) -> Vec<Option<f64>> {
        self.seeds.iter().map(|s| s.method(method).and_then(|m| m.r_h())).collect()
    }

    pub fn failed_checks(&self) -> Vec<(u64, String, String)> {
        self.seeds
            .iter()
            .flat_map(|s| s.checks.iter().filter(|c| !c.passed).map(move |c| (s.seed, c.check.clone(), c.method.clone())))
            .collect()
    }
}

/// Runs all seeds with the config's own student and teacher.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentRun> {
    let student = config.student.kind;
    let teacher = config.teacher.kind;
    let models = Models {
        student: &student,
        student_space: config.student.space.clone(),
        teacher: &teacher,
        teacher_space: config.teacher.space.clone(),
    };
    let plan = config.plan();
    let seeds = par::map(&config.seeds, |&s| {
        let panel = load_panel(config, s)?;
        run_seed(&panel, &plan, &models, s)
    })
    .into_iter()
    .zip(&config.seeds)
    .map(|(r, s)| r.map_err(|e| e.context(format!("seed {s}"))))
    .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentRun { methods: config.method_names(), seeds })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub method: String,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single seed.
    pub std: f64,
    pub n: usize,
}

/// Mean and sample standard deviation of R_H per method over successful seeds.
pub fn summarize(results: &[(String, u64, f64)], methods: &[String]) -> Vec<SummaryRow> {
    methods
        .iter()
        .filter_map(|m| {
            let xs: Vec<f64> = results.iter().filter(|r| &r.0 == m).map(|r| r.2).collect();
            if xs.is_empty() {
                return None;
            }
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let std = if xs.len() > 1 { (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
            Some(SummaryRow { method: m.clone(), mean, std, n: xs.len() })
        })
        .collect()
}

fn csv_text(header: &str, rows: impl IntoIterator<Item = String>) -> String {
    let mut s = format!("{header}\n");
    for r in rows {
        s.push_str(&r);
        s.push('\n');
    }
    s
}

fn grid_csv(grid: &ForecastGrid, labels: &LabelMap) -> String {
    csv_text(
        "node_id,t,value",
        grid.iter().flat_map(|(node, values)| {
            values.iter().enumerate().map(move |(i, v)| format!("{},{},{v}", labels.label(node), grid.start() + i))
        }),
    )
}

/// Writes every artifact of a run under `out`.
pub fn write_outputs(out: &Path, run: &ExperimentRun) -> Result<()> {
    let mut results = Vec::new();
    let mut errors = Vec::new();
    for s in &run.seeds {
        for m in &s.methods {
            match &m.result {
                Ok(f) => results.push((m.name.clone(), s.seed, f.report.hierarchical)),
                Err(e) => errors.push(format!("{},{},\"{}\"", s.seed, m.name, e.replace('"', "'"))),
            }
        }
    }
    write_atomic(
        &out.join("results.csv"),
        csv_text("method,seed,R_H", results.iter().map(|(m, s, r)| format!("{m},{s},{r}"))).as_bytes(),
    )?;
    let summary = summarize(&results, &run.methods);
    write_atomic(
        &out.join("summary.csv"),
        csv_text("method,mean,std,n", summary.iter().map(|r| format!("{},{},{},{}", r.method, r.mean, r.std, r.n))).as_bytes(),
    )?;

    let mut levelwise = Vec::new();
    for m in &run.methods {
        let per_seed: Vec<&Vec<f64>> = run
            .seeds
            .iter()
            .filter_map(|s| s.method(m)?.result.as_ref().ok().map(|f| &f.report.per_level))
            .collect();
        if let Some(first) = per_seed.first() {
            for l in 0..first.len() {
                let mean = per_seed.iter().map(|v| v[l]).sum::<f64>() / per_seed.len() as f64;
                levelwise.push(format!("{m},{},{mean}", l + 1));
            }
        }
    }
    write_atomic(&out.join("levelwise.csv"), csv_text("method,level,mean_rmsse", levelwise).as_bytes())?;

    let checks = run.seeds.iter().flat_map(|s| {
        s.checks.iter().map(move |c| format!("{},{},{},{},\"{}\"", s.seed, c.check, c.method, c.passed, c.detail.replace('"', "'")))
    });
    write_atomic(&out.join("checks.csv"), csv_text("seed,check,method,passed,detail", checks).as_bytes())?;
    write_atomic(&out.join("errors.csv"), csv_text("seed,method,error", errors).as_bytes())?;

    for s in &run.seeds {
        let tag = format!("seed_{}", s.seed);
        for st in &s.stores {
            write_store(&out.join("stores").join(&tag).join(&st.name), &st.store, &s.labels)?;
        }
        for m in &s.methods {
            if let Ok(f) = &m.result {
                write_atomic(&out.join("forecasts").join(&tag).join(format!("{}.csv", m.name)), grid_csv(&f.all_levels, &s.labels).as_bytes())?;
                write_atomic(&out.join("metrics").join(&tag).join(format!("{}.csv", m.name)), f.report.to_csv(&s.labels).as_bytes())?;
            }
        }
        if let Ok(p) = &s.proxies {
            write_atomic(&out.join("proxies").join(format!("{tag}.csv")), grid_csv(&p.grid, &s.labels).as_bytes())?;
        }
    }
    Ok(())
}

/// Loads the config, runs every seed and writes the outputs.
pub fn cmd_run(config_path: &Path, opts: &RunOptions) -> Result<(ExperimentRun, PathBuf)> {
    let config = load(config_path, opts)?;
    let run = par::with_jobs(config.jobs, || run_experiment(&config))?;
    write_outputs(&config.out, &run)?;
    Ok((run, config.out.clone()))
}

/// Per-method correlation between each trial's selection objective and its
/// test R_H.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationRow {
    pub method: String,
    /// `proxy`, `validation` or `oracle`.
    pub family: String,
    pub per_seed: Vec<(u64, f64)>,
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationSummary {
    pub rows: Vec<CorrelationRow>,
}

impl CorrelationSummary {
    pub fn row(&self, method: &str) -> Option<&CorrelationRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    /// Mean correlation over all per-seed values of one family.
    pub fn family_mean(&self, family: &str) -> Option<f64> {
        let xs: Vec<f64> = self.rows.iter().filter(|r| r.family == family).flat_map(|r| r.per_seed.iter().map(|p| p.1)).collect();
        (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
    }
}

fn family(store: &str) -> &'static str {
    if store.starts_with("hpro") {
        "proxy"
    } else if store.starts_with("tcv") {
        "validation"
    } else {
        "oracle"
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = if xs.len() > 1 { (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
    (mean, std)
}

fn sorted_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    out.sort();
    Ok(out)
}

fn seed_of(dir: &Path) -> Option<u64> {
    dir.file_name()?.to_str()?.strip_prefix("seed_")?.parse().ok()
}

/// Reads the stores of a finished run from `run_dir` and writes
/// `scatter_<method>.csv` and `correlation_summary.csv` next to them.
pub fn cmd_correlate(run_dir: &Path) -> Result<CorrelationSummary> {
    let stores = run_dir.join("stores");
    if !stores.is_dir() {
        return Err(Error::MissingRun(format!("{} has no stores/ directory", run_dir.display())));
    }
    let mut seed_dirs: Vec<(u64, PathBuf)> = sorted_dirs(&stores)?.into_iter().filter_map(|d| Some((seed_of(&d)?, d))).collect();
    seed_dirs.sort_by_key(|(s, _)| *s);
    let mut scatter: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut per_method: BTreeMap<String, Vec<(u64, f64)>> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    for (seed, dir) in &seed_dirs {
        let gold = read_store(&dir.join("gold"), None).map_err(|e| e.context(format!("seed {seed}")))?;
        let test = gold.objectives();
        for sub in sorted_dirs(dir)? {
            let name = sub.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
            if name == "gold" {
                continue;
            }
            let store = read_store(&sub, None)?;
            if store.len() != test.len() {
                return Err(Error::MissingRun(format!("{name} and gold stores differ in size for seed {seed}")));
            }
            if !order.contains(&name) {
                order.push(name.clone());
            }
            let rows = scatter.entry(name.clone()).or_default();
            let (mut xs, mut ys) = (Vec::new(), Vec::new());
            for (r, t) in store.records.iter().zip(&test) {
                rows.push(format!("{seed},{},{},{t}", r.index, r.objective_value));
                if r.objective_value.is_finite() && t.is_finite() {
                    xs.push(r.objective_value);
                    ys.push(*t);
                }
            }
            if let Ok(rho) = pearson(&xs, &ys) {
                per_method.entry(name).or_default().push((*seed, rho));
            }
        }
    }
    if order.is_empty() {
        return Err(Error::MissingRun(format!("no stores under {}", stores.display())));
    }
    let mut rows = Vec::new();
    let mut lines = Vec::new();
    for name in &order {
        write_atomic(
            &run_dir.join(format!("scatter_{name}.csv")),
            csv_text("seed,trial,objective,test_R_H", scatter[name].iter().cloned()).as_bytes(),
        )?;
        let per_seed = per_method.get(name).cloned().unwrap_or_default();
        let values: Vec<f64> = per_seed.iter().map(|p| p.1).collect();
        let (mean, std) = if values.is_empty() { (f64::NAN, f64::NAN) } else { mean_std(&values) };
        lines.push(format!("{name},{},{mean},{std},{}", family(name), values.len()));
        rows.push(CorrelationRow { method: name.clone(), family: family(name).into(), per_seed, mean, std });
    }
    let summary = CorrelationSummary { rows };
    for fam in ["proxy", "validation"] {
        if let Some(m) = summary.family_mean(fam) {
            lines.push(format!("__{fam}__,{fam},{m},,"));
        }
    }
    write_atomic(&run_dir.join("correlation_summary.csv"), csv_text("method,family,mean_pearson,std_pearson,seeds", lines).as_bytes())?;
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerifyOptions {
    pub n: usize,
    pub seed: u64,
    /// Run the bound sweep with mislabeled proxies (a negative control).
    pub inject_fault: bool,
    pub out: Option<PathBuf>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { n: 1000, seed: 0, inject_fault: false, out: None }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerifyReport {
    pub sweep: Vec<SweepRow>,
    pub lemma1: Vec<Lemma1Report>,
    pub variance: Vec<(VarianceDemoConfig, VarianceDemo, bool)>,
}

impl VerifyReport {
    pub fn violations(&self) -> Vec<&SweepRow> {
        self.sweep.iter().filter(|r| !r.holds).collect()
    }

    pub fn passed(&self) -> bool {
        self.violations().is_empty() && self.lemma1.iter().all(|r| r.holds) && self.variance.iter().all(|v| v.2)
    }
}

/// A small random tree with 2..=5 levels for the identity checks.
fn lemma1_store(root_seed: u64, instance: u64, n_trials: usize) -> Result<(TrialStore, SeriesPanel)> {
    use rand::Rng;
    let mut rng = seed::rng(root_seed, &format!("lemma1/{instance}"));
    let depth = rng.random_range(1..=4usize);
    let branching: Vec<usize> = (0..depth).map(|_| rng.random_range(2..=3usize)).collect();
    let synth = crate::data::SyntheticConfig {
        branching,
        history: 30,
        horizon: 4,
        period: 4,
        seed: seed::derive(root_seed, &format!("lemma1/data/{instance}")),
        ..Default::default()
    };
    let panel = generate_synthetic(&synth)?;
    let split = SplitSpec::new(30, 4, 1);
    let student = ForecasterKind::Holt;
    let big_l = panel.tree().num_levels();
    let proxies = ProxySet::perfect(&panel, &split, big_l - 1)?;
    let spec = ObjectiveSpec::hpro_uniform(Loss::Mse, big_l);
    let store = random_search("holt", &default_space(student), n_trials, seed::derive(root_seed, &format!("lemma1/search/{instance}")), |c| {
        let fits = TrialFits::fit(&panel, &split, &student, c, false)?;
        let evaluation = score(&panel, &split, &spec, Some(&proxies), &fits)?;
        Ok(TrialOutcome { evaluation, leaf_forecasts: Some(fits.test), trained_on: (1, split.history) })
    });
    Ok((store, panel))
}

/// Stores for the identity check: `n` random hierarchies with `n_trials` trials each.
pub fn lemma1_instances(root_seed: u64, n: usize, n_trials: usize) -> Result<Vec<Lemma1Report>> {
    par::map_range(n, |i| {
        let (store, panel) = lemma1_store(root_seed, i as u64, n_trials)?;
        theory::lemma1_check(&store, &panel)
    })
    .into_iter()
    .collect()
}

/// Runs the bound sweep, the identity checks and the variance demo; writes
/// `theorem2_sweep.csv` when an output directory is given.
pub fn cmd_verify(opts: &VerifyOptions) -> Result<VerifyReport> {
    let sweep = theory::theorem2_sweep_with(opts.n, opts.seed, opts.inject_fault)?;
    let lemma1 = lemma1_instances(opts.seed, 10, 20)?;
    let mut variance = Vec::new();
    for (rho, check) in [(-0.5, (0.95, 1.05)), (-1.0, (0.0, 0.01)), (0.0, (1.9, 2.1))] {
        let cfg = VarianceDemoConfig { sigma1: 1.0, sigma2: 1.0, rho, n_samples: 100_000, seed: opts.seed };
        let demo = theory::variance_demo(&cfg)?;
        let ok = (check.0..=check.1).contains(&demo.sample);
        variance.push((cfg, demo, ok));
    }
    if let Some(out) = &opts.out {
        let rows = sweep.iter().map(|r| format!("{},{},{},{},{},{},{}", r.seed, r.lhs, r.rhs, r.holds, r.levels, r.horizon, r.magnitude));
        write_atomic(&out.join("theorem2_sweep.csv"), csv_text("seed,lhs,rhs,holds,levels,horizon,magnitude", rows).as_bytes())?;
    }
    Ok(VerifyReport { sweep, lemma1, variance })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReselectOutcome {
    pub store_name: String,
    pub seed: u64,
    pub history: usize,
    /// Standard selection in the saved store.
    pub original: Option<usize>,
    pub reselected: usize,
    pub trials: usize,
    pub written_to: PathBuf,
}

/// Re-scores a saved store on the window ending at `history` (default: the
/// store's own) and selects again without drawing new configurations.
pub fn cmd_reselect(
    config_path: &Path,
    opts: &RunOptions,
    store_dir: &Path,
    seed_arg: Option<u64>,
    history: Option<usize>,
) -> Result<ReselectOutcome> {
    let config = load(config_path, opts)?;
    let run_seed = seed_arg
        .or_else(|| store_dir.parent().and_then(seed_of))
        .ok_or_else(|| Error::Config("cannot infer the seed; pass it explicitly".into()))?;
    let panel = load_panel(&config, run_seed)?;
    let store = read_store(store_dir, Some(panel.labels()))?;
    let spec = ObjectiveSpec::from_fingerprint(&store.objective_fingerprint)?;
    let stored_split = store
        .dataset_fingerprint
        .split_once('/')
        .and_then(|(_, s)| SplitSpec::from_fingerprint(s))
        .ok_or_else(|| Error::Config(format!("malformed dataset fingerprint `{}`", store.dataset_fingerprint)))?;
    let split = SplitSpec { history: history.unwrap_or(stored_split.history), ..stored_split };
    let student = config.student.kind;
    let proxies = if spec.kind == ObjectiveKind::HPro {
        let teacher = config.teacher.kind;
        let levels = config.teacher_levels.unwrap_or_else(|| default_teacher_levels(panel.tree().num_levels()));
        Some(make_proxies(
            &panel,
            &SplitSpec::new(split.history, split.horizon, 1),
            &teacher,
            &config.teacher.space,
            config.teacher.n_trials,
            levels,
            config.loss,
            seed::derive(run_seed, "teacher"),
        )?)
    } else {
        None
    };
    let re = reselect_for_new_window(&store, &panel, &split, &student, &spec, proxies.as_ref())?;
    let store_name = store_dir.file_name().and_then(|n| n.to_str()).unwrap_or("store").to_string();
    let written_to = config.out.join("reselect").join(format!("seed_{run_seed}")).join(format!("{store_name}_T{}", split.history));
    write_store(&written_to, &re.store, panel.labels())?;
    Ok(ReselectOutcome {
        store_name,
        seed: run_seed,
        history: split.history,
        original: select_best(&store).ok(),
        reselected: re.best,
        trials: re.store.len(),
        written_to,
    })
}
