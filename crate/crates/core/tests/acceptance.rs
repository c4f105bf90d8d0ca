//! Acceptance suite. Runs without the libtest harness so that every
//! criterion prints exactly one PASS/FAIL line; exits non-zero if any fails.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use hpro::data::SeriesPanel;
use hpro::experiment::{cmd_correlate, cmd_run, lemma1_instances, ExperimentRun, RunOptions};
use hpro::hierarchy::{aggregate_bottom_up, check_coherence, HierarchyTree, LabelMap};
use hpro::hpo::{ensemble_mean, select_best, select_per_offset};
use hpro::metrics::{hierarchical_report, rmsse, LevelWeights};
use hpro::theory::{self, VarianceDemoConfig};
use hpro::{par, seed, ForecastGrid, NodeId};
use rand::Rng;

type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

struct Outcome {
    passed: bool,
    detail: String,
}

impl Outcome {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        Self { passed, detail: detail.into() }
    }
}

fn mismatch_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/mismatch.ini")
}

/// The shipped benchmark, run once and shared by several criteria.
struct Benchmark {
    run: ExperimentRun,
    out: PathBuf,
    elapsed: Duration,
    _dir: tempfile::TempDir,
}

fn run_benchmark() -> Benchmark {
    let dir = tempfile::tempdir().expect("tempdir");
    let opts = RunOptions { jobs: Some(4), out: Some(dir.path().join("mismatch")), ..Default::default() };
    let start = Instant::now();
    let (run, out) = cmd_run(&mismatch_config(), &opts).expect("benchmark run");
    Benchmark { run, out, elapsed: start.elapsed(), _dir: dir }
}

fn c1_coherence(bench: &Benchmark) -> Outcome {
    let mut checked = 0;
    let mut worst = 0.0f64;
    let tree = HierarchyTree::balanced(&[4, 4]).unwrap();
    for seed in &bench.run.seeds {
        for m in &seed.methods {
            if let Ok(f) = &m.result {
                let report = check_coherence(&tree, &f.all_levels, 1e-9).unwrap();
                if let Some(w) = report.worst {
                    worst = worst.max(w.relative_gap);
                }
                if !report.coherent {
                    return Outcome::new(false, format!("seed {} {} incoherent", seed.seed, m.name));
                }
                checked += 1;
            }
        }
    }
    Outcome::new(checked > 0, format!("{checked} all-level tables, worst relative gap {worst:e}"))
}

/// Rooted tree with 2..=4 levels and 1..=3 children per node.
fn random_tree(rng: &mut impl Rng) -> HierarchyTree {
    let depth = rng.random_range(1..=3);
    let mut children = Vec::new();
    let mut width = 1;
    for _ in 0..depth {
        let mut next = 0;
        let level: Vec<Vec<usize>> = (0..width)
            .map(|_| {
                let k = rng.random_range(1..=3);
                let kids = (next + 1..=next + k).collect();
                next += k;
                kids
            })
            .collect();
        children.push(level);
        width = next;
    }
    HierarchyTree::from_children(children).unwrap()
}

fn brute_rmsse(history: &[f64], actual: &[f64], predicted: &[f64]) -> Option<f64> {
    let mut scale = 0.0;
    for t in 1..history.len() {
        scale += (history[t] - history[t - 1]) * (history[t] - history[t - 1]);
    }
    scale /= (history.len() - 1) as f64;
    if scale == 0.0 {
        return None;
    }
    let mut err = 0.0;
    for i in 0..actual.len() {
        err += (actual[i] - predicted[i]) * (actual[i] - predicted[i]);
    }
    Some((err / actual.len() as f64 / scale).sqrt())
}

fn c2_metric_oracle() -> Outcome {
    let worked = rmsse(&[1.0, 2.0, 4.0, 3.0], &[4.0, 5.0], &[3.0, 4.0]).unwrap();
    if worked != 0.5f64.sqrt() {
        return Outcome::new(false, format!("worked example gave {worked}"));
    }
    let mut max_dev = 0.0f64;
    for instance in 0..100u64 {
        let mut rng = seed::rng(2024, &format!("acceptance/metric/{instance}"));
        let tree = random_tree(&mut rng);
        let (t, h) = (rng.random_range(2..=12usize), rng.random_range(1..=6usize));
        let leaves: Vec<Vec<f64>> = tree
            .leaves()
            .map(|_| {
                if rng.random_bool(0.15) {
                    vec![3.0; t + h]
                } else {
                    (0..t + h).map(|_| rng.random_range(-100.0..100.0)).collect()
                }
            })
            .collect();
        let labels = LabelMap::generated(&tree);
        let panel = SeriesPanel::from_leaves(tree.clone(), labels, leaves).unwrap();
        let mut forecasts = ForecastGrid::new(t + 1, h);
        for node in tree.nodes() {
            forecasts.insert(node, (0..h).map(|_| rng.random_range(-150.0..150.0)).collect()).unwrap();
        }
        let raw: Vec<Vec<f64>> = tree
            .level_sizes()
            .iter()
            .map(|&n| {
                let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
                let s: f64 = w.iter().sum();
                w.into_iter().map(|v| v / s).collect()
            })
            .collect();
        let weights = LevelWeights::new(&tree, raw.clone()).unwrap();
        let report = hierarchical_report(&panel, &forecasts, &weights).unwrap();

        let mut levels = Vec::new();
        for l in 1..=tree.num_levels() {
            let (mut acc, mut wsum) = (0.0, 0.0);
            for j in 1..=tree.level_size(l) {
                let node = NodeId::new(l, j);
                let s = panel.series(node);
                let r = brute_rmsse(&s[..t], &s[t..t + h], forecasts.get(node).unwrap());
                if let Some(r) = r {
                    let direct = rmsse(&s[..t], &s[t..t + h], forecasts.get(node).unwrap()).unwrap();
                    max_dev = max_dev.max((direct - r).abs() / r.max(1.0));
                    acc += raw[l - 1][j - 1] * r;
                    wsum += raw[l - 1][j - 1];
                }
            }
            levels.push(if wsum > 0.0 { acc / wsum } else { 0.0 });
        }
        let r_h = levels.iter().sum::<f64>() / levels.len() as f64;
        for (a, b) in report.per_level.iter().zip(&levels) {
            max_dev = max_dev.max((a - b).abs() / b.abs().max(1.0));
        }
        max_dev = max_dev.max((report.hierarchical - r_h).abs() / r_h.abs().max(1.0));
    }
    Outcome::new(max_dev <= 1e-12, format!("worked example exact, 100 instances, max relative deviation {max_dev:e}"))
}

fn c3_lemma1() -> Outcome {
    let reports = lemma1_instances(7, 50, 20).expect("lemma1 instances");
    let bad: Vec<usize> = reports
        .iter()
        .enumerate()
        .filter(|(_, r)| !(r.holds && r.proxies_perfect && r.argmin_hpro == r.argmin_opt_bu && r.max_gap <= 1e-9 && r.trials_checked == 20))
        .map(|(i, _)| i)
        .collect();
    let gap = reports.iter().map(|r| r.max_gap).fold(0.0, f64::max);
    Outcome::new(reports.len() == 50 && bad.is_empty(), format!("50 instances x 20 trials, failures {bad:?}, max gap {gap:e}"))
}

fn c4_bound_sweep() -> Outcome {
    let start = Instant::now();
    let rows = par::with_jobs(1, || theory::theorem2_sweep(1000, 11)).expect("sweep");
    let elapsed = start.elapsed();
    let violations: Vec<u64> = rows.iter().filter(|r| r.lhs > r.rhs + 1e-9 || r.lhs.is_nan()).map(|r| r.seed).collect();
    let tightest = rows.iter().map(|r| r.lhs - r.rhs).fold(f64::NEG_INFINITY, f64::max);
    Outcome::new(
        rows.len() == 1000 && violations.is_empty() && elapsed < Duration::from_secs(60),
        format!("1000 instances, violations {violations:?}, max lhs-rhs {tightest:e}, {:.1}s single-threaded", elapsed.as_secs_f64()),
    )
}

fn c5_variance() -> Outcome {
    let demo = |rho| {
        theory::variance_demo(&VarianceDemoConfig { sigma1: 1.0, sigma2: 1.0, rho, n_samples: 100_000, seed: 5 }).unwrap()
    };
    let (half, full) = (demo(-0.5), demo(-1.0));
    Outcome::new(
        (0.95..=1.05).contains(&half.sample) && half.theoretical <= 1.0 && full.sample <= 0.01,
        format!("rho=-0.5 sample {:.4} (theory {}), rho=-1 sample {:.2e}", half.sample, half.theoretical, full.sample),
    )
}

fn c6_mismatch(bench: &Benchmark) -> Outcome {
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let hpro: Vec<f64> = bench.run.r_h("hpro_avg").into_iter().map(|v| v.unwrap_or(f64::INFINITY)).collect();
    let tcv: Vec<f64> = bench.run.r_h("tcv_hier").into_iter().map(|v| v.unwrap_or(f64::INFINITY)).collect();
    let wins = hpro.iter().zip(&tcv).filter(|(a, b)| a < b).count();
    let n = hpro.len();
    let summary = cmd_correlate(&bench.out).expect("correlate");
    let rho_proxy = summary.family_mean("proxy").unwrap_or(f64::NAN);
    let rho_validation = summary.family_mean("validation").unwrap_or(f64::NAN);
    let (m_h, m_t) = (mean(&hpro), mean(&tcv));
    let passed = n == 30
        && m_h < m_t
        && wins as f64 >= 0.7 * n as f64
        && rho_proxy > rho_validation
        && bench.elapsed < Duration::from_secs(600);
    Outcome::new(
        passed,
        format!(
            "R_H hpro_avg {m_h:.4} vs tcv_hier {m_t:.4}, wins {wins}/{n}, pearson proxy {rho_proxy:.4} vs validation {rho_validation:.4}, {:.1}s",
            bench.elapsed.as_secs_f64()
        ),
    )
}

const SINGLE_TRIAL: [&str; 5] = ["tcv_lowest", "tcv_hier", "hpro_top", "hpro_avg", "opt_bu"];

fn c7_gold_floor(bench: &Benchmark) -> Outcome {
    let mut violations = Vec::new();
    for seed in &bench.run.seeds {
        let gold = seed.method("gold").and_then(|m| m.r_h()).unwrap_or(f64::INFINITY);
        for name in SINGLE_TRIAL {
            if let Some(r) = seed.method(name).and_then(|m| m.r_h()) {
                if gold > r {
                    violations.push(format!("seed {} {name}", seed.seed));
                }
            }
        }
    }
    Outcome::new(violations.is_empty(), format!("{} seeds x {} methods, violations {violations:?}", bench.run.seeds.len(), SINGLE_TRIAL.len()))
}

fn c8_per_offset(bench: &Benchmark) -> Outcome {
    let mut compared = 0;
    let mut violations = Vec::new();
    for seed in &bench.run.seeds {
        for base in ["tcv_hier", "hpro_avg"] {
            let Some(st) = seed.store(base) else { continue };
            let Some(_) = seed.method(&format!("{base}_po")) else { continue };
            let po = select_per_offset(&st.store).expect("per-offset selection");
            let standard = &st.store.records[select_best(&st.store).expect("standard selection")];
            for (h, (a, b)) in po.objective_per_offset.iter().zip(&standard.per_offset_losses).enumerate() {
                compared += 1;
                if a > b {
                    violations.push(format!("seed {} {base} offset {}", seed.seed, h + 1));
                }
            }
        }
    }
    Outcome::new(compared > 0 && violations.is_empty(), format!("{compared} offsets compared, violations {violations:?}"))
}

fn c9_ensemble(bench: &Benchmark) -> Outcome {
    let tree = HierarchyTree::balanced(&[4, 4]).unwrap();
    let mut worst_excess = f64::NEG_INFINITY;
    let mut worst_linearity = 0.0f64;
    let mut failures = Vec::new();
    for seed in &bench.run.seeds {
        let get = |name: &str| seed.method(name).and_then(|m| m.result.as_ref().ok());
        let (Some(avg), Some(top), Some(mix)) = (get("hpro_avg"), get("hpro_top"), get("hpro_mean")) else {
            failures.push(seed.seed);
            continue;
        };
        let excess = mix.report.hierarchical - avg.report.hierarchical.max(top.report.hierarchical);
        worst_excess = worst_excess.max(excess);
        if excess > 1e-9 {
            failures.push(seed.seed);
        }
        let mean_then_agg = aggregate_bottom_up(&tree, &ensemble_mean(&[&avg.leaves, &top.leaves]).unwrap()).unwrap();
        let agg_then_mean = ensemble_mean(&[&avg.all_levels, &top.all_levels]).unwrap();
        for (node, values) in agg_then_mean.iter() {
            for (a, b) in values.iter().zip(mean_then_agg.get(node).unwrap()) {
                worst_linearity = worst_linearity.max((a - b).abs() / a.abs().max(1.0));
            }
        }
    }
    Outcome::new(
        failures.is_empty() && worst_linearity <= 1e-12,
        format!("max(R_H mix - worse member) {worst_excess:e}, aggregation gap {worst_linearity:e}, failing seeds {failures:?}"),
    )
}

fn c10_determinism(bench: &Benchmark) -> Outcome {
    let dir = tempfile::tempdir().expect("tempdir");
    let opts = RunOptions { jobs: Some(1), out: Some(dir.path().join("again")), ..Default::default() };
    let (_, out) = cmd_run(&mismatch_config(), &opts).expect("second run");
    let a = std::fs::read(bench.out.join("summary.csv")).unwrap();
    let b = std::fs::read(out.join("summary.csv")).unwrap();
    Outcome::new(a == b, format!("summary.csv {} bytes, identical across --jobs 4 and --jobs 1: {}", a.len(), a == b))
}

fn main() -> ExitCode {
    let bench = run_benchmark();
    let criteria: Vec<Criterion<'_>> = vec![
        ("coherence", Box::new(|| c1_coherence(&bench))),
        ("metric oracle", Box::new(c2_metric_oracle)),
        ("perfect-proxy identity", Box::new(c3_lemma1)),
        ("bound sweep", Box::new(c4_bound_sweep)),
        ("variance reduction", Box::new(c5_variance)),
        ("mismatch benchmark", Box::new(|| c6_mismatch(&bench))),
        ("gold floor", Box::new(|| c7_gold_floor(&bench))),
        ("per-offset dominance", Box::new(|| c8_per_offset(&bench))),
        ("ensemble sanity", Box::new(|| c9_ensemble(&bench))),
        ("determinism", Box::new(|| c10_determinism(&bench))),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        println!("{} criterion {:>2} {name}: {}", if o.passed { "PASS" } else { "FAIL" }, i + 1, o.detail);
        failed += usize::from(!o.passed);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
