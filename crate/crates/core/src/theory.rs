//! Numerical checks of the proxy-objective guarantees: the perfect-teacher
//! identity, the error bound relating the proxy objective to the optimal
//! bottom-up objective, and the variance of a sum of correlated normals.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::{SeriesPanel, SplitSpec};
use crate::error::{Error, Result};
use crate::hierarchy::{aggregate_bottom_up, ForecastGrid, HierarchyTree, LabelMap, NodeId};
use crate::hpo::{argmin, score, ObjectiveSpec, Loss, ProxySet, TrialFits, TrialStore};
use crate::{par, seed};

/// Absolute slack on the bound, absorbing rounding in the triple sums.
pub const BOUND_SLACK: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TheoremReport {
    /// Proxy objective (MSE, uniform weights over levels `1..L-1`).
    pub o: f64,
    /// Optimal bottom-up objective.
    pub o_star: f64,
    /// Teacher MSE against the truth, averaged like the objectives.
    pub e: f64,
    /// `(2/(L-1)) * sum_l (1/N_l) sum_j (1/H) sum_t eps*delta`.
    pub cross_term: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// Computes every term of the bound for one student from the definitions
/// `eps = |x - proxy|` and `delta = |x - bottom_up(student)|`.
pub fn theorem2_check(panel: &SeriesPanel, proxies: &ProxySet, student_leaves: &ForecastGrid) -> Result<TheoremReport> {
    bound_terms(panel, proxies, proxies, student_leaves)
}

fn proxy_of(p: &ProxySet, node: NodeId) -> Result<&[f64]> {
    p.grid.get(node).ok_or_else(|| Error::CoverageGap(format!("no proxy for {node}")))
}

/// `o_proxies` feed the proxy objective, `e_proxies` the teacher error and
/// cross term. They differ only in fault-injection runs.
fn bound_terms(panel: &SeriesPanel, o_proxies: &ProxySet, e_proxies: &ProxySet, student_leaves: &ForecastGrid) -> Result<TheoremReport> {
    let tree = panel.tree();
    let big_l = tree.num_levels();
    let (start, h) = (student_leaves.start(), student_leaves.len());
    for p in [o_proxies, e_proxies] {
        if p.grid.start() != start || p.grid.len() != h {
            return Err(Error::CoverageGap("proxy window differs from the student window".into()));
        }
    }
    let student = aggregate_bottom_up(tree, student_leaves)?;
    let truth = panel.truth_all(start, h)?;
    let (mut o, mut o_star, mut e, mut cross) = (0.0, 0.0, 0.0, 0.0);
    for level in 1..big_l {
        let n_l = tree.level_size(level) as f64;
        let (mut lo, mut lo_star, mut le, mut lc) = (0.0, 0.0, 0.0, 0.0);
        for node in tree.nodes_at(level) {
            let (o_proxy, proxy) = (proxy_of(o_proxies, node)?, proxy_of(e_proxies, node)?);
            let x = truth.require(node)?;
            let x_hat = student.require(node)?;
            for t in 0..h {
                let eps = x[t] - proxy[t];
                let delta = x[t] - x_hat[t];
                lo += (x_hat[t] - o_proxy[t]).powi(2);
                lo_star += delta * delta;
                le += eps * eps;
                lc += eps.abs() * delta.abs();
            }
        }
        let scale = n_l * h as f64;
        o += lo / scale;
        o_star += lo_star / scale;
        e += le / scale;
        cross += lc / scale;
    }
    let k = (big_l - 1) as f64;
    let (o, o_star, e, cross_term) = (o / k, o_star / k, e / k, 2.0 * cross / k);
    let lhs = (o - o_star).abs();
    let rhs = e + cross_term;
    Ok(TheoremReport { o, o_star, e, cross_term, lhs, rhs, holds: lhs <= rhs + BOUND_SLACK })
}

/// One row of the randomized sweep.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepRow {
    pub seed: u64,
    pub levels: usize,
    pub horizon: usize,
    pub magnitude: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// How the proxies of a sweep instance relate to the truth and the student.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum ProxyMode {
    Independent,
    Perfect,
    StudentCopy,
}

fn random_tree(rng: &mut impl Rng) -> HierarchyTree {
    let levels = rng.random_range(2..=5usize);
    let mut children = Vec::with_capacity(levels - 1);
    let mut width = 1usize;
    for _ in 1..levels {
        let mut next = 0usize;
        let level: Vec<Vec<usize>> = (0..width)
            .map(|_| {
                let b = rng.random_range(2..=4usize);
                let kids = (next + 1..=next + b).collect();
                next += b;
                kids
            })
            .collect();
        children.push(level);
        width = next;
    }
    HierarchyTree::from_children(children).expect("well-formed random tree")
}

fn gaussian(rng: &mut impl Rng, scale: f64) -> f64 {
    scale * rng.sample::<f64, _>(StandardNormal)
}

/// Builds one randomized instance and checks the bound on it. With
/// `mislabel`, the proxy objective reads each node's proxies from its next
/// sibling (a deliberately broken fixture).
pub fn theorem2_instance(root_seed: u64, instance: u64, mislabel: bool) -> Result<SweepRow> {
    let mut rng = seed::rng(root_seed, &format!("theorem2/{instance}"));
    let tree = random_tree(&mut rng);
    let horizon = rng.random_range(1..=8usize);
    let magnitude = [1e-3, 1.0, 1e3][rng.random_range(0..3)];
    let mode = [ProxyMode::Independent, ProxyMode::Perfect, ProxyMode::StudentCopy][rng.random_range(0..3)];
    let history = 2;
    let length = history + horizon;
    let n_leaves = tree.level_size(tree.num_levels());
    let leaves: Vec<Vec<f64>> = (0..n_leaves).map(|_| (0..length).map(|_| gaussian(&mut rng, magnitude)).collect()).collect();
    let panel = SeriesPanel::from_leaves(tree.clone(), LabelMap::generated(&tree), leaves)?;

    let start = history + 1;
    let mut student = ForecastGrid::new(start, horizon);
    for leaf in tree.leaves() {
        student.insert(leaf, (0..horizon).map(|_| gaussian(&mut rng, magnitude)).collect())?;
    }
    let aggregated = aggregate_bottom_up(&tree, &student)?;
    let mut grid = ForecastGrid::new(start, horizon);
    for level in 1..tree.num_levels() {
        for node in tree.nodes_at(level) {
            let values = match mode {
                ProxyMode::Independent => (0..horizon).map(|_| gaussian(&mut rng, magnitude)).collect(),
                ProxyMode::Perfect => panel.slice(node, start, start + horizon - 1).to_vec(),
                ProxyMode::StudentCopy => aggregated.require(node)?.to_vec(),
            };
            grid.insert(node, values)?;
        }
    }
    let proxies = ProxySet { grid, levels: tree.num_levels() - 1, provenance: format!("{mode:?}") };
    let report = if mislabel {
        let mut rotated = ForecastGrid::new(start, horizon);
        for level in 1..tree.num_levels() {
            let n = tree.level_size(level);
            for node in tree.nodes_at(level) {
                let from = NodeId::new(level, node.index % n + 1);
                rotated.insert(node, proxies.grid.require(from)?.to_vec())?;
            }
        }
        let wrong = ProxySet { grid: rotated, ..proxies.clone() };
        bound_terms(&panel, &wrong, &proxies, &student)?
    } else {
        theorem2_check(&panel, &proxies, &student)?
    };
    Ok(SweepRow {
        seed: instance,
        levels: tree.num_levels(),
        horizon,
        magnitude,
        lhs: report.lhs,
        rhs: report.rhs,
        holds: report.holds,
    })
}

/// Checks the bound on `n` randomized instances, in instance order.
pub fn theorem2_sweep(n: usize, root_seed: u64) -> Result<Vec<SweepRow>> {
    theorem2_sweep_with(n, root_seed, false)
}

pub fn theorem2_sweep_with(n: usize, root_seed: u64, mislabel: bool) -> Result<Vec<SweepRow>> {
    par::map_range(n, |i| theorem2_instance(root_seed, i as u64, mislabel)).into_iter().collect()
}

/// Outcome of the perfect-teacher identity check over a store.
#[derive(Clone, Debug, PartialEq)]
pub struct Lemma1Report {
    pub holds: bool,
    pub proxies_perfect: bool,
    pub argmin_hpro: Option<usize>,
    pub argmin_opt_bu: Option<usize>,
    /// Largest per-trial `|hpro - opt_bu|`.
    pub max_gap: f64,
    pub trials_checked: usize,
}

/// Scores every stored trial's test forecasts under the proxy objective with
/// perfect proxies and uniform weights, and under the optimal bottom-up
/// objective, both with MSE. Holds when the argmins agree and every per-trial
/// gap is at most `1e-9`.
pub fn lemma1_check(store: &TrialStore, panel: &SeriesPanel) -> Result<Lemma1Report> {
    lemma1_check_with(store, panel, None)
}

/// As [`lemma1_check`], but with caller-supplied proxies (for perturbation
/// probes). `proxies_perfect` reports whether they equal the truth.
pub fn lemma1_check_with(store: &TrialStore, panel: &SeriesPanel, proxies: Option<&ProxySet>) -> Result<Lemma1Report> {
    let big_l = panel.tree().num_levels();
    let scored: Vec<&ForecastGrid> = store.records.iter().filter_map(|r| r.leaf_forecasts.as_ref()).collect();
    let Some(first) = scored.first() else {
        return Err(Error::EmptyStore);
    };
    let split = SplitSpec::new(first.start() - 1, first.len(), 1);
    let perfect = ProxySet::perfect(panel, &split, big_l - 1)?;
    let proxies = proxies.unwrap_or(&perfect);
    let proxies_perfect = proxies.grid.iter().all(|(node, v)| perfect.grid.get(node) == Some(v));
    let hpro = ObjectiveSpec::hpro_uniform(Loss::Mse, big_l);
    let opt = ObjectiveSpec::opt_bu(Loss::Mse);
    let mut values_hpro = vec![f64::INFINITY; store.len()];
    let mut values_opt = vec![f64::INFINITY; store.len()];
    for (pos, r) in store.records.iter().enumerate() {
        let Some(leaves) = &r.leaf_forecasts else { continue };
        let fits = TrialFits { test: leaves.clone(), validation: Vec::new() };
        values_hpro[pos] = score(panel, &split, &hpro, Some(proxies), &fits)?.objective;
        values_opt[pos] = score(panel, &split, &opt, None, &fits)?.objective;
    }
    let max_gap = values_hpro
        .iter()
        .zip(&values_opt)
        .filter(|(a, _)| a.is_finite())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let argmin_hpro = argmin(&values_hpro);
    let argmin_opt_bu = argmin(&values_opt);
    Ok(Lemma1Report {
        holds: argmin_hpro == argmin_opt_bu && max_gap <= 1e-9,
        proxies_perfect,
        argmin_hpro,
        argmin_opt_bu,
        max_gap,
        trials_checked: scored.len(),
    })
}

/// Two jointly normal variables and their sum.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VarianceDemoConfig {
    pub sigma1: f64,
    pub sigma2: f64,
    pub rho: f64,
    pub n_samples: usize,
    pub seed: u64,
}

impl VarianceDemoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma1 > 0.0 && self.sigma2 > 0.0) {
            return Err(Error::InvalidConfig("sigma1 and sigma2 must be positive".into()));
        }
        if !(-1.0..=1.0).contains(&self.rho) {
            return Err(Error::InvalidCorrelation { rho: self.rho, group: 2 });
        }
        if self.n_samples < 2 {
            return Err(Error::InvalidConfig("need at least 2 samples".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VarianceDemo {
    /// `sigma1^2 + sigma2^2 + 2*rho*sigma1*sigma2`.
    pub theoretical: f64,
    pub sample: f64,
    /// Whether the sum is no more variable than the noisier summand.
    pub reduced: bool,
}

pub fn variance_demo(config: &VarianceDemoConfig) -> Result<VarianceDemo> {
    config.validate()?;
    let VarianceDemoConfig { sigma1: s1, sigma2: s2, rho, n_samples, seed } = *config;
    let theoretical = s1 * s1 + s2 * s2 + 2.0 * rho * s1 * s2;
    let mut rng = seed::rng(seed, "variance_demo");
    let c = (1.0 - rho * rho).max(0.0).sqrt();
    let ys: Vec<f64> = (0..n_samples)
        .map(|_| {
            let z1: f64 = rng.sample(StandardNormal);
            let z2: f64 = rng.sample(StandardNormal);
            s1 * z1 + s2 * (rho * z1 + c * z2)
        })
        .collect();
    let mean = ys.iter().sum::<f64>() / n_samples as f64;
    let sample = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n_samples - 1) as f64;
    Ok(VarianceDemo { theoretical, sample, reduced: theoretical <= (s1 * s1).max(s2 * s2) })
}
