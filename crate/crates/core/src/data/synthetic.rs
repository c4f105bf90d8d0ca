use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::hierarchy::{HierarchyTree, LabelMap};
use crate::seed;

use super::SeriesPanel;

/// How the generator makes the test or validation window behave differently
/// from the rest of history. Magnitudes are in units of the leaf noise `sigma`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ShiftMode {
    None,
    /// Level jump on every leaf over the last validation window `[T-H+1, T]` only.
    ValidationShift,
    /// Level jump on every leaf from `T+1-shift_lead` onward. With a positive
    /// lead the jump is already in the last points of history.
    TestShift,
    /// Extra slope on every leaf starting `shift_lead` points before `T+1`,
    /// accruing one shift magnitude per horizon. Aggregate-level models can
    /// see it in their history; validation fits on older data cannot.
    TrendShift,
}

impl fmt::Display for ShiftMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ShiftMode::None => "none",
            ShiftMode::ValidationShift => "validation_shift",
            ShiftMode::TestShift => "test_shift",
            ShiftMode::TrendShift => "trend_shift",
        })
    }
}

impl FromStr for ShiftMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(ShiftMode::None),
            "validation_shift" => Ok(ShiftMode::ValidationShift),
            "test_shift" => Ok(ShiftMode::TestShift),
            "trend_shift" => Ok(ShiftMode::TrendShift),
            other => Err(Error::InvalidConfig(format!("unknown shift_mode `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    /// Children per node at each non-leaf level; the tree has `branching.len() + 1` levels.
    pub branching: Vec<usize>,
    /// Leaf base level drawn uniformly from this range.
    pub base: (f64, f64),
    /// Leaf slope per step drawn uniformly from this range.
    pub trend_slope: (f64, f64),
    /// Seasonal period; `0` or `1` disables seasonality.
    pub period: usize,
    pub amplitude: (f64, f64),
    /// Draw each leaf's seasonal phase uniformly from `[0, 2*pi)`; otherwise 0.
    pub random_phase: bool,
    pub sigma: f64,
    /// Noise correlation between leaves sharing a parent.
    pub rho_leaf: f64,
    pub shift_mode: ShiftMode,
    pub shift_magnitude: f64,
    /// Points before `T+1` at which a test or trend shift starts.
    pub shift_lead: usize,
    pub history: usize,
    pub horizon: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            branching: vec![2, 2],
            base: (50.0, 100.0),
            trend_slope: (0.0, 0.2),
            period: 12,
            amplitude: (2.0, 5.0),
            random_phase: true,
            sigma: 1.0,
            rho_leaf: 0.0,
            shift_mode: ShiftMode::None,
            shift_magnitude: 0.0,
            shift_lead: 0,
            history: 96,
            horizon: 8,
            seed: 0,
        }
    }
}

/// Variance of the sum of a sibling group of `n` leaves with common noise
/// scale `sigma` and pairwise correlation `rho`: `n*sigma^2*(1 + (n-1)*rho)`.
/// For `n = 2` this is `2*sigma^2*(1 + rho)`.
pub fn group_noise_variance(n: usize, sigma: f64, rho: f64) -> f64 {
    let n = n as f64;
    n * sigma * sigma * (1.0 + (n - 1.0) * rho)
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<HierarchyTree> {
        let tree = HierarchyTree::balanced(&self.branching)?;
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::InvalidConfig("sigma must be finite and >= 0".into()));
        }
        if self.horizon == 0 || self.history < 2 {
            return Err(Error::InvalidConfig("need T >= 2 and H >= 1".into()));
        }
        if self.shift_mode == ShiftMode::ValidationShift && self.horizon > self.history {
            return Err(Error::InvalidConfig("validation shift needs T >= H".into()));
        }
        if matches!(self.shift_mode, ShiftMode::TestShift | ShiftMode::TrendShift) && self.shift_lead >= self.history {
            return Err(Error::InvalidConfig("shift_lead exceeds T".into()));
        }
        for (name, (lo, hi)) in [("base", self.base), ("trend_slope", self.trend_slope), ("amplitude", self.amplitude)] {
            if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} range must satisfy lo <= hi")));
            }
        }
        let group = *self.branching.last().unwrap_or(&1);
        let rho = self.rho_leaf;
        let lower = if group > 1 { -1.0 / (group as f64 - 1.0) } else { -1.0 };
        if !(rho >= lower - 1e-12 && rho <= 1.0) {
            return Err(Error::InvalidCorrelation { rho, group });
        }
        Ok(tree)
    }

    /// Offset added to every leaf at time `t`.
    pub fn shift_at(&self, t: usize) -> f64 {
        let jump = self.shift_magnitude * self.sigma;
        let (t_end, h) = (self.history, self.horizon);
        match self.shift_mode {
            ShiftMode::None => 0.0,
            ShiftMode::TestShift if t + self.shift_lead > t_end => jump,
            ShiftMode::ValidationShift if t + h > t_end && t <= t_end => jump,
            ShiftMode::TrendShift => {
                let first = t_end + 1 - self.shift_lead;
                if t >= first {
                    jump * (t + 1 - first) as f64 / h as f64
                } else {
                    0.0
                }
            }
            _ => 0.0,
        }
    }
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Generates a coherent panel of length `T + H`.
///
/// Leaf `i` at time `t` is
/// `base_i + slope_i*t + amp_i*sin(2*pi*t/m + phase_i) + noise_{i,t} + shift(t)`.
/// Noise is Gaussian, correlated within each sibling group through the
/// symmetric square root of the group covariance and independent across
/// groups and time. Aggregates are bottom-up sums.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<SeriesPanel> {
    let tree = config.validate()?;
    let mut rng = seed::rng(config.seed, "synthetic");
    let groups = tree.sibling_leaf_groups();
    let n_leaves = tree.level_size(tree.num_levels());
    let length = config.history + config.horizon;

    struct LeafShape {
        base: f64,
        slope: f64,
        amp: f64,
        phase: f64,
    }
    let shapes: Vec<LeafShape> = (0..n_leaves)
        .map(|_| LeafShape {
            base: uniform(&mut rng, config.base),
            slope: uniform(&mut rng, config.trend_slope),
            amp: uniform(&mut rng, config.amplitude),
            phase: if config.random_phase { rng.random_range(0.0..2.0 * PI) } else { 0.0 },
        })
        .collect();

    // Symmetric square root of sigma^2 * ((1-rho) I + rho 11'):
    // sqrt(a) (I - 11'/n) + sqrt(b) 11'/n with a = sigma^2 (1-rho), b = sigma^2 (1+(n-1) rho).
    let sigma2 = config.sigma * config.sigma;
    let rho = config.rho_leaf;

    let mut leaves = vec![vec![0.0; length]; n_leaves];
    for t in 1..=length {
        let shift = config.shift_at(t);
        for group in &groups {
            let n = group.len() as f64;
            let a = (sigma2 * (1.0 - rho)).max(0.0).sqrt();
            let b = (sigma2 * (1.0 + (n - 1.0) * rho)).max(0.0).sqrt();
            let z: Vec<f64> = group.iter().map(|_| StandardNormal.sample(&mut rng)).collect();
            let z_mean = z.iter().sum::<f64>() / n;
            for (leaf, zi) in group.iter().zip(&z) {
                let noise = a * (zi - z_mean) + b * z_mean;
                let s = &shapes[leaf.index - 1];
                let tf = t as f64;
                let seasonal = if config.period > 1 {
                    s.amp * (2.0 * PI * tf / config.period as f64 + s.phase).sin()
                } else {
                    0.0
                };
                leaves[leaf.index - 1][t - 1] = s.base + s.slope * tf + seasonal + noise + shift;
            }
        }
    }
    let labels = LabelMap::generated(&tree);
    SeriesPanel::from_leaves(tree, labels, leaves)
}
