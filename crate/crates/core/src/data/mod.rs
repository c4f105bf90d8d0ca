//! Hierarchical panels, chronological splits, CSV ingestion and synthetic
//! benchmark generation.

mod io;
mod synthetic;

use std::ops::RangeInclusive;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::hierarchy::{aggregate_bottom_up, ForecastGrid, HierarchyTree, LabelMap, NodeId};

pub use io::{load_csv, read_meta, write_dataset, DatasetMeta};
pub use synthetic::{generate_synthetic, group_noise_variance, ShiftMode, SyntheticConfig};

/// Relative tolerance applied when validating coherent ground truth.
pub const INPUT_COHERENCE_TOL: f64 = 1e-6;

/// Observed values for every node of a tree over `t = 1..=length`.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesPanel {
    tree: HierarchyTree,
    labels: LabelMap,
    length: usize,
    // values[level-1][index-1][t-1]
    values: Vec<Vec<Vec<f64>>>,
    coherent: bool,
}

impl SeriesPanel {
    /// Builds a panel from leaf rows (in leaf index order) and materializes the
    /// aggregates bottom-up.
    pub fn from_leaves(tree: HierarchyTree, labels: LabelMap, leaves: Vec<Vec<f64>>) -> Result<Self> {
        let n_leaves = tree.level_size(tree.num_levels());
        if leaves.len() != n_leaves {
            return Err(Error::LengthMismatch(leaves.len(), n_leaves));
        }
        let length = leaves.first().map_or(0, Vec::len);
        if let Some(bad) = leaves.iter().position(|s| s.len() != length) {
            return Err(Error::RaggedSeries(format!("leaf {} has {} points, expected {length}", bad + 1, leaves[bad].len())));
        }
        let mut grid = ForecastGrid::new(1, length);
        for (leaf, values) in tree.leaves().zip(leaves) {
            grid.insert(leaf, values)?;
        }
        let full = aggregate_bottom_up(&tree, &grid)?;
        let values = Self::grid_to_levels(&tree, &full);
        Ok(Self { tree, labels, length, values, coherent: true })
    }

    /// Builds a panel from a value sequence for every node and verifies that
    /// aggregates match their children within [`INPUT_COHERENCE_TOL`].
    pub fn from_all_levels(tree: HierarchyTree, labels: LabelMap, values: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        if values.len() != tree.num_levels()
            || values.iter().zip(tree.level_sizes()).any(|(level, &n)| level.len() != n)
        {
            return Err(Error::WindowMismatch("value table does not match the tree shape".into()));
        }
        let length = values[0][0].len();
        let mut grid = ForecastGrid::new(1, length);
        for node in tree.nodes() {
            let series = &values[node.level - 1][node.index - 1];
            if series.len() != length {
                return Err(Error::RaggedSeries(format!(
                    "`{}` has {} points, expected {length}",
                    labels.label(node),
                    series.len()
                )));
            }
            grid.insert(node, series.clone())?;
        }
        // Deepest aggregates first, so a corrupted value is blamed on its own node.
        for level in (1..tree.num_levels()).rev() {
            for node in tree.nodes_at(level) {
                let own = grid.require(node)?;
                let kids: Vec<&[f64]> = tree.children(node).map(|c| grid.require(c)).collect::<Result<_>>()?;
                for (i, &value) in own.iter().enumerate() {
                    let children_sum: f64 = kids.iter().map(|k| k[i]).sum();
                    if (value - children_sum).abs() > INPUT_COHERENCE_TOL * value.abs().max(1.0) {
                        return Err(Error::IncoherentInput {
                            node: labels.label(node).to_string(),
                            t: grid.start() + i,
                            value,
                            children_sum,
                        });
                    }
                }
            }
        }
        Ok(Self { tree, labels, length, values, coherent: true })
    }

    fn grid_to_levels(tree: &HierarchyTree, grid: &ForecastGrid) -> Vec<Vec<Vec<f64>>> {
        (1..=tree.num_levels())
            .map(|l| tree.nodes_at(l).map(|n| grid.get(n).expect("full grid").to_vec()).collect())
            .collect()
    }

    pub fn tree(&self) -> &HierarchyTree {
        &self.tree
    }

    pub fn labels(&self) -> &LabelMap {
        &self.labels
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn is_coherent(&self) -> bool {
        self.coherent
    }

    /// The full series of `node`, `t = 1..=length`.
    pub fn series(&self, node: NodeId) -> &[f64] {
        &self.values[node.level - 1][node.index - 1]
    }

    /// Values over the 1-based inclusive range `from..=to`.
    pub fn slice(&self, node: NodeId, from: usize, to: usize) -> &[f64] {
        &self.series(node)[from - 1..to]
    }

    /// History `1..=end` of `node`.
    pub fn history(&self, node: NodeId, end: usize) -> &[f64] {
        self.slice(node, 1, end)
    }

    /// Ground truth for `nodes` over `[start, start + len)`.
    pub fn truth_grid(&self, nodes: impl IntoIterator<Item = NodeId>, start: usize, len: usize) -> Result<ForecastGrid> {
        if start == 0 || start + len - 1 > self.length {
            return Err(Error::InsufficientHistory(format!(
                "window {start}..{} exceeds panel length {}",
                start + len - 1,
                self.length
            )));
        }
        let mut grid = ForecastGrid::new(start, len);
        for node in nodes {
            grid.insert(node, self.slice(node, start, start + len - 1).to_vec())?;
        }
        Ok(grid)
    }

    /// Ground truth for every node over `[start, start + len)`.
    pub fn truth_all(&self, start: usize, len: usize) -> Result<ForecastGrid> {
        self.truth_grid(self.tree.nodes().collect::<Vec<_>>(), start, len)
    }

    /// Hex SHA-256 over the tree shape and every value's bit pattern.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for &n in self.tree.level_sizes() {
            h.update((n as u64).to_le_bytes());
        }
        for node in self.tree.nodes() {
            for c in self.tree.children(node) {
                h.update((c.index as u64).to_le_bytes());
            }
            for v in self.series(node) {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// `T` history points, horizon `H`, and `K` validation windows.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SplitSpec {
    pub history: usize,
    pub horizon: usize,
    pub windows: usize,
}

/// Shortest training prefix any split may leave.
pub const MIN_TRAIN_LEN: usize = 2;

/// A contiguous 1-based window `[start, start + len)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TimeWindow {
    pub start: usize,
    pub len: usize,
}

impl TimeWindow {
    /// Last time index inside the window.
    pub fn end(&self) -> usize {
        self.start + self.len - 1
    }

    pub fn range(&self) -> RangeInclusive<usize> {
        self.start..=self.end()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitView {
    /// Points `1..=T-KH` seen by every validation fit.
    pub train: RangeInclusive<usize>,
    /// Validation windows, most recent first.
    pub validation: Vec<TimeWindow>,
    pub test: TimeWindow,
}

impl SplitSpec {
    pub fn new(history: usize, horizon: usize, windows: usize) -> Self {
        Self { history, horizon, windows }
    }

    /// Validation window `k` (1 = most recent): `[T-kH+1, T-(k-1)H]`.
    pub fn validation_window(&self, k: usize) -> TimeWindow {
        TimeWindow { start: self.history - k * self.horizon + 1, len: self.horizon }
    }

    pub fn test_window(&self) -> TimeWindow {
        TimeWindow { start: self.history + 1, len: self.horizon }
    }

    /// Checks the split against a series of `length` points.
    pub fn validate(&self, length: usize) -> Result<SplitView> {
        if self.horizon == 0 || self.windows == 0 {
            return Err(Error::InsufficientHistory("horizon and window count must be >= 1".into()));
        }
        let held_out = self.windows * self.horizon;
        if self.history < held_out + MIN_TRAIN_LEN {
            return Err(Error::InsufficientHistory(format!(
                "T={} leaves fewer than {MIN_TRAIN_LEN} training points after {} validation window(s) of {}",
                self.history, self.windows, self.horizon
            )));
        }
        if self.history + self.horizon > length {
            return Err(Error::InsufficientHistory(format!(
                "T+H={} exceeds panel length {length}",
                self.history + self.horizon
            )));
        }
        Ok(SplitView {
            train: 1..=self.history - held_out,
            validation: (1..=self.windows).map(|k| self.validation_window(k)).collect(),
            test: self.test_window(),
        })
    }

    pub fn fingerprint(&self) -> String {
        format!("T={};H={};K={}", self.history, self.horizon, self.windows)
    }

    /// Inverse of [`SplitSpec::fingerprint`].
    pub fn from_fingerprint(text: &str) -> Option<Self> {
        let mut fields = text.split(';').map(|f| f.split_once('='));
        let mut next = |key: &str| match fields.next()? {
            Some((k, v)) if k == key => v.parse().ok(),
            _ => None,
        };
        Some(Self { history: next("T")?, horizon: next("H")?, windows: next("K")? })
    }
}

pub fn split(panel: &SeriesPanel, spec: &SplitSpec) -> Result<SplitView> {
    spec.validate(panel.length())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn panel() -> SeriesPanel {
        let tree = HierarchyTree::balanced(&[2, 2]).unwrap();
        let labels = LabelMap::generated(&tree);
        let leaves = (0..4).map(|i| (1..=48).map(|t| (i * 10 + t) as f64).collect()).collect();
        SeriesPanel::from_leaves(tree, labels, leaves).unwrap()
    }

    #[test]
    fn leaves_are_aggregated() {
        let p = panel();
        assert_eq!(p.tree().num_nodes(), 7);
        assert_eq!(p.series(NodeId::new(1, 1))[0], 1.0 + 11.0 + 21.0 + 31.0);
        assert!(p.is_coherent());
    }

    #[test]
    fn split_windows() {
        let v = SplitSpec::new(28, 8, 1).validate(36).unwrap();
        assert_eq!(v.train, 1..=20);
        assert_eq!(v.validation[0].range(), 21..=28);
        assert_eq!(v.test.range(), 29..=36);

        let v = SplitSpec::new(40, 8, 2).validate(48).unwrap();
        assert_eq!(v.validation[0].range(), 33..=40);
        assert_eq!(v.validation[1].range(), 25..=32);
        assert_eq!(v.train, 1..=24);

        assert!(matches!(SplitSpec::new(8, 8, 1).validate(16), Err(Error::InsufficientHistory(_))));
        assert!(matches!(SplitSpec::new(40, 8, 1).validate(47), Err(Error::InsufficientHistory(_))));
    }

    #[test]
    fn incoherent_all_levels_rejected() {
        let p = panel();
        let mut values: Vec<Vec<Vec<f64>>> = (1..=3)
            .map(|l| p.tree().nodes_at(l).map(|n| p.series(n).to_vec()).collect())
            .collect();
        assert!(SeriesPanel::from_all_levels(p.tree().clone(), p.labels().clone(), values.clone()).is_ok());
        values[1][0][4] += 1.0;
        let err = SeriesPanel::from_all_levels(p.tree().clone(), p.labels().clone(), values).unwrap_err();
        assert!(matches!(err, Error::IncoherentInput { t: 5, .. }), "{err}");
    }

    #[test]
    fn fingerprint_tracks_values() {
        let a = panel();
        let tree = a.tree().clone();
        let labels = a.labels().clone();
        let mut leaves: Vec<Vec<f64>> = tree.leaves().map(|n| a.series(n).to_vec()).collect();
        assert_eq!(a.fingerprint(), SeriesPanel::from_leaves(tree.clone(), labels.clone(), leaves.clone()).unwrap().fingerprint());
        leaves[0][0] += 1e-9;
        assert_ne!(a.fingerprint(), SeriesPanel::from_leaves(tree, labels, leaves).unwrap().fingerprint());
    }
}
