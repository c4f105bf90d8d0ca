#![allow(dead_code)]

use hpro::data::SeriesPanel;
use hpro::forecasters::{FitContext, Forecaster, SearchSpace, TrialConfig};
use hpro::hierarchy::{HierarchyTree, LabelMap};
use hpro::{Error, ForecastGrid, NodeId, Result};

/// Looks the answer up in the panel and adds `offset`.
pub struct Oracle {
    pub panel: SeriesPanel,
    pub offset: f64,
}

impl Oracle {
    pub fn exact(panel: &SeriesPanel) -> Self {
        Self { panel: panel.clone(), offset: 0.0 }
    }
}

impl Forecaster for Oracle {
    fn name(&self) -> String {
        "oracle".into()
    }

    fn space(&self) -> SearchSpace {
        SearchSpace::empty()
    }

    fn fit_predict(&self, _config: &TrialConfig, ctx: &FitContext<'_>) -> Result<ForecastGrid> {
        let (from, to) = (ctx.end + 1, ctx.end + ctx.horizon);
        if to > self.panel.length() {
            return Err(Error::InsufficientHistory(format!("oracle asked for t={to}")));
        }
        let mut grid = ForecastGrid::new(from, ctx.horizon);
        for (node, _) in &ctx.series {
            grid.insert(*node, self.panel.slice(*node, from, to).iter().map(|v| v + self.offset).collect())?;
        }
        Ok(grid)
    }
}

pub fn panel(branching: &[usize], leaves: Vec<Vec<f64>>) -> SeriesPanel {
    let tree = HierarchyTree::balanced(branching).unwrap();
    let labels = LabelMap::generated(&tree);
    SeriesPanel::from_leaves(tree, labels, leaves).unwrap()
}

/// Leaf grid starting at `start` with one row per leaf, in leaf order.
pub fn leaf_grid(tree: &HierarchyTree, start: usize, rows: Vec<Vec<f64>>) -> ForecastGrid {
    let len = rows[0].len();
    let mut grid = ForecastGrid::new(start, len);
    for (leaf, row) in tree.leaves().zip(rows) {
        grid.insert(leaf, row).unwrap();
    }
    grid
}

/// Sum of `node`'s descendant leaves in `leaves` at offset `i`, computed
/// directly from the tree's child lists.
pub fn subtree_sum(tree: &HierarchyTree, leaves: &ForecastGrid, node: NodeId, i: usize) -> f64 {
    if tree.is_leaf(node) {
        leaves.get(node).unwrap()[i]
    } else {
        tree.children(node).map(|c| subtree_sum(tree, leaves, c, i)).sum()
    }
}
