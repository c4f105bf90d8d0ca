mod common;

use std::fs;
use std::path::Path;

use common::Oracle;
use hpro::data::{generate_synthetic, load_csv, ShiftMode, SyntheticConfig};
use hpro::experiment::{cmd_generate, cmd_run, run_seed, summarize, ExperimentConfig, Models, RunOptions, RunPlan};
use hpro::forecasters::{default_space, ForecasterKind, SearchSpace};
use hpro::hierarchy::{check_coherence, ForecastGrid, HierarchyTree, LabelMap};
use hpro::hpo::Loss;
use hpro::NodeId;

const SMALL: &str = "\
[dataset]
branching = 2, 2
period = 4
sigma = 1
shift_mode = test_shift
shift_magnitude = 2

[split]
T = 40
H = 4
K = 1, 2

[student]
kind = holt
n_trials = 6

[teacher]
kind = theta
n_trials = 4

[objectives]
tcv_lowest = true
tcv_hier = true
tcv_hier_po = true
hpro_top = true
hpro_avg = true
hpro_avg_po = true

[ensembles]
blend = hpro_avg, tcv_hier_k1

[run]
seeds = 0-1
out = out
";

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let path = dir.join("exp.ini");
    fs::write(&path, text).unwrap();
    path
}

fn plan() -> RunPlan {
    RunPlan {
        history: 30,
        horizon: 5,
        windows: vec![1, 2],
        loss: Loss::Rmsse,
        objectives: ["tcv_lowest", "tcv_hier", "hpro_top", "hpro_avg"].iter().map(|o| (o.to_string(), true)).collect(),
        ensembles: vec![("mix".into(), vec!["hpro_avg".into(), "tcv_hier_k2".into()])],
        n_trials: 3,
        teacher_trials: 2,
        teacher_levels: None,
    }
}

#[test]
fn oracle_student_scores_zero_on_every_method() {
    let panel = generate_synthetic(&SyntheticConfig { branching: vec![3, 2], history: 30, horizon: 5, seed: 1, ..Default::default() })
        .unwrap();
    let oracle = Oracle::exact(&panel);
    let models = Models { student: &oracle, student_space: SearchSpace::empty(), teacher: &oracle, teacher_space: SearchSpace::empty() };
    let run = run_seed(&panel, &plan(), &models, 0).unwrap();
    assert!(!run.methods.is_empty());
    for m in &run.methods {
        assert_eq!(m.r_h(), Some(0.0), "{}", m.name);
    }
    assert!(run.checks.iter().all(|c| c.passed));
}

#[test]
fn seed_runs_are_deterministic() {
    let panel = generate_synthetic(&SyntheticConfig { branching: vec![2, 2], history: 30, horizon: 5, seed: 3, ..Default::default() })
        .unwrap();
    let student = ForecasterKind::Holt;
    let teacher = ForecasterKind::Theta { period: 12 };
    let models = Models { student: &student, student_space: default_space(student), teacher: &teacher, teacher_space: default_space(teacher) };
    let a = run_seed(&panel, &plan(), &models, 9).unwrap();
    let b = run_seed(&panel, &plan(), &models, 9).unwrap();
    let c = run_seed(&panel, &plan(), &models, 10).unwrap();
    let r_h = |run: &hpro::experiment::SeedRun| run.methods.iter().map(|m| m.r_h().map(f64::to_bits)).collect::<Vec<_>>();
    assert_eq!(r_h(&a), r_h(&b));
    assert_ne!(r_h(&a), r_h(&c));
}

#[test]
fn generate_writes_expected_shapes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "[dataset]\nbranching = 2, 2\n\n[split]\nT = 96\nH = 8\n\n[run]\nseeds = 4\n";
    let path = write_config(dir.path(), cfg);
    let data = cmd_generate(&path, &RunOptions::default()).unwrap();
    let panel = load_csv(&data.join("hierarchy.csv"), &data.join("series.csv")).unwrap();
    assert_eq!(panel.tree().num_nodes(), 7);
    assert_eq!(panel.length(), 104);
    let first = fs::read(data.join("series.csv")).unwrap();
    cmd_generate(&path, &RunOptions::default()).unwrap();
    assert_eq!(fs::read(data.join("series.csv")).unwrap(), first);
    let meta = fs::read_to_string(data.join("meta.txt")).unwrap();
    assert!(meta.contains("T=96") && meta.contains("H=8"), "{meta}");
}

#[test]
fn test_shift_moves_the_test_mean() {
    let base = SyntheticConfig {
        branching: vec![4],
        period: 1,
        trend_slope: (0.0, 0.0),
        sigma: 1.0,
        history: 2000,
        horizon: 2000,
        seed: 2,
        ..Default::default()
    };
    let shifted = SyntheticConfig { shift_mode: ShiftMode::TestShift, shift_magnitude: 2.0, ..base.clone() };
    let p = generate_synthetic(&shifted).unwrap();
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    for leaf in p.tree().leaves() {
        let diff = mean(p.slice(leaf, 2001, 4000)) - mean(p.history(leaf, 2000));
        assert!((diff - 2.0).abs() <= 0.2, "{leaf}: {diff}");
    }
}

fn read_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path).unwrap().lines().skip(1).map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn run_outputs_are_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), SMALL);
    let (run, out) = cmd_run(&path, &RunOptions::default()).unwrap();
    assert_eq!(out, dir.path().join("out"));
    assert!(run.failed_checks().is_empty(), "{:?}", run.failed_checks());
    assert!(read_rows(&out.join("errors.csv")).is_empty());

    // summary.csv recomputes exactly from results.csv
    let results: Vec<(String, u64, f64)> =
        read_rows(&out.join("results.csv")).into_iter().map(|r| (r[0].clone(), r[1].parse().unwrap(), r[2].parse().unwrap())).collect();
    assert_eq!(results.len(), run.methods.len() * 2);
    let expected: Vec<String> =
        summarize(&results, &run.methods).iter().map(|r| format!("{},{},{},{}", r.method, r.mean, r.std, r.n)).collect();
    let written: Vec<String> = fs::read_to_string(out.join("summary.csv")).unwrap().lines().skip(1).map(str::to_string).collect();
    assert_eq!(written, expected);

    // gold is a floor for every single-trial method
    for seed in &run.seeds {
        let gold = seed.method("gold").unwrap().r_h().unwrap();
        for name in ["tcv_lowest_k1", "tcv_lowest_k2", "tcv_hier_k1", "tcv_hier_k2", "hpro_top", "hpro_avg", "opt_bu"] {
            assert!(gold <= seed.method(name).unwrap().r_h().unwrap() + 1e-12, "{name}");
        }
    }

    // every written forecast table is coherent
    let tree = HierarchyTree::balanced(&[2, 2]).unwrap();
    let labels = LabelMap::generated(&tree);
    let mut tables = 0;
    for seed_dir in fs::read_dir(out.join("forecasts")).unwrap() {
        for file in fs::read_dir(seed_dir.unwrap().path()).unwrap() {
            let rows = read_rows(&file.unwrap().path());
            let mut grid = ForecastGrid::new(41, 4);
            for node in tree.nodes() {
                let values: Vec<f64> =
                    rows.iter().filter(|r| labels.id(&r[0]) == Some(node)).map(|r| r[2].parse().unwrap()).collect();
                grid.insert(node, values).unwrap();
            }
            assert!(check_coherence(&tree, &grid, 1e-9).unwrap().coherent);
            tables += 1;
        }
    }
    assert_eq!(tables, run.methods.len() * 2);
    assert!(out.join("stores/seed_0/hpro_avg/trials.csv").exists());
    assert!(out.join("proxies/seed_1.csv").exists());
    assert_eq!(labels.id("total"), Some(NodeId::new(1, 1)));
}

#[test]
fn unknown_method_in_ensemble_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), &SMALL.replace("tcv_hier_k1", "nope"));
    let err = ExperimentConfig::load(&path).unwrap_err();
    assert!(err.to_string().contains("nope"), "{err}");
}

#[test]
fn failing_method_does_not_abort_the_run() {
    let dir = tempfile::tempdir().unwrap();
    // seasonal naive with m >= 200 cannot be fitted on 40 points, so the
    // proxies fail and only the H-Pro methods drop out.
    let text = SMALL
        .replace("kind = theta\nn_trials = 4", "kind = seasonal_naive\nn_trials = 4\nspace.m = 200..300")
        .replace("[ensembles]\nblend = hpro_avg, tcv_hier_k1\n", "");
    let path = write_config(dir.path(), &text);
    let (run, out) = cmd_run(&path, &RunOptions::default()).unwrap();
    for seed in &run.seeds {
        assert!(seed.method("hpro_avg").unwrap().result.is_err());
        assert!(seed.method("tcv_hier_k1").unwrap().result.is_ok());
        assert!(seed.method("gold").unwrap().result.is_ok());
    }
    assert!(!read_rows(&out.join("errors.csv")).is_empty());
}
