//! The level tree, bottom-up aggregation and coherence checks.
//!
//! Levels are 1-based with level 1 holding the single root and level `L`
//! holding every leaf. Within a level, nodes are numbered `1..=N_l` in
//! breadth-first order, so the children of any node form a contiguous,
//! ascending run of indices at the next level.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::fmt;
use std::ops::Range;

use crate::error::{Error, Result};

/// Position of a node: `level` in `1..=L`, `index` in `1..=N_level`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId {
    pub level: usize,
    pub index: usize,
}

impl NodeId {
    pub const fn new(level: usize, index: usize) -> Self {
        Self { level, index }
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.level, self.index)
    }
}

/// An immutable rooted tree with all leaves at the bottom level.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HierarchyTree {
    level_sizes: Vec<usize>,
    // children[l-1][j-1]: ascending 1-based indices at level l+1
    children: Vec<Vec<Vec<usize>>>,
    // parents[l-1][j-1]: 1-based index at level l-1; 0 for the root
    parents: Vec<Vec<usize>>,
}

/// Bidirectional label <-> node dictionary kept alongside a tree.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LabelMap {
    labels: Vec<Vec<String>>,
    ids: HashMap<String, NodeId>,
}

impl LabelMap {
    pub fn label(&self, node: NodeId) -> &str {
        &self.labels[node.level - 1][node.index - 1]
    }

    pub fn id(&self, label: &str) -> Option<NodeId> {
        self.ids.get(label).copied()
    }

    /// Generated labels: `total` for the root, `n<level>_<index>` elsewhere.
    pub fn generated(tree: &HierarchyTree) -> Self {
        let labels: Vec<Vec<String>> = (1..=tree.num_levels())
            .map(|l| {
                (1..=tree.level_size(l))
                    .map(|j| if l == 1 { "total".to_string() } else { format!("n{l}_{j}") })
                    .collect()
            })
            .collect();
        Self::from_labels(labels)
    }

    fn from_labels(labels: Vec<Vec<String>>) -> Self {
        let mut ids = HashMap::new();
        for (l, level) in labels.iter().enumerate() {
            for (j, label) in level.iter().enumerate() {
                ids.insert(label.clone(), NodeId::new(l + 1, j + 1));
            }
        }
        Self { labels, ids }
    }
}

impl HierarchyTree {
    /// Builds a tree where every node at level `l` has `branching[l-1]` children.
    pub fn balanced(branching: &[usize]) -> Result<Self> {
        let mut children = Vec::with_capacity(branching.len());
        let mut width = 1usize;
        for &b in branching {
            if b == 0 {
                return Err(Error::InvalidConfig("branching factor must be >= 1".into()));
            }
            children.push((0..width).map(|j| ((j * b + 1)..=((j + 1) * b)).collect()).collect());
            width *= b;
        }
        Self::from_children(children)
    }

    /// Builds a tree from per-level child lists: `children[l-1][j-1]` lists the
    /// 1-based indices at level `l+1` under node `(l, j)`. Level 1 must have a
    /// single node.
    pub fn from_children(children: Vec<Vec<Vec<usize>>>) -> Result<Self> {
        if children.is_empty() {
            return Err(Error::TooFewLevels(1));
        }
        if children[0].len() != 1 {
            return Err(Error::MultipleRoots((1..=children[0].len()).map(|j| format!("(1,{j})")).collect()));
        }
        let mut level_sizes = vec![1usize];
        let mut parents = vec![vec![0usize]];
        for (l, level) in children.iter().enumerate() {
            if level.len() != level_sizes[l] {
                return Err(Error::InvalidConfig(format!(
                    "level {} lists {} child sets for {} nodes",
                    l + 1,
                    level.len(),
                    level_sizes[l]
                )));
            }
            let next_size: usize = level.iter().map(Vec::len).sum();
            let mut next_parents = vec![0usize; next_size];
            for (j, kids) in level.iter().enumerate() {
                if kids.is_empty() {
                    return Err(Error::LeafNotAtBottomLevel {
                        label: NodeId::new(l + 1, j + 1).to_string(),
                        level: l + 1,
                        bottom: children.len() + 1,
                    });
                }
                if kids.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::InvalidConfig(format!("children of ({},{}) not ascending", l + 1, j + 1)));
                }
                for &c in kids {
                    if c == 0 || c > next_size {
                        return Err(Error::InvalidNode(NodeId::new(l + 2, c)));
                    }
                    if next_parents[c - 1] != 0 {
                        return Err(Error::MultipleParents(NodeId::new(l + 2, c).to_string()));
                    }
                    next_parents[c - 1] = j + 1;
                }
            }
            level_sizes.push(next_size);
            parents.push(next_parents);
        }
        Ok(Self { level_sizes, children, parents })
    }

    /// Builds a tree from `(parent, child)` label pairs and each label's level.
    pub fn from_edge_list<S: AsRef<str>>(
        edges: &[(S, S)],
        level_of: &HashMap<String, usize>,
    ) -> Result<(Self, LabelMap)> {
        let mut parent_of: HashMap<&str, &str> = HashMap::new();
        let mut kids_of: HashMap<&str, Vec<&str>> = HashMap::new();
        for (p, c) in edges {
            let (p, c) = (p.as_ref(), c.as_ref());
            for label in [p, c] {
                if !level_of.contains_key(label) {
                    return Err(Error::UnknownLabel(label.to_string()));
                }
            }
            if parent_of.insert(c, p).is_some() {
                return Err(Error::MultipleParents(c.to_string()));
            }
            kids_of.entry(p).or_default().push(c);
        }

        // Parent pointers with a cycle never reach a parentless node.
        let mut labels: Vec<&str> = level_of.keys().map(String::as_str).collect();
        labels.sort_unstable();
        for &start in &labels {
            let mut seen = HashSet::new();
            let mut cur = start;
            while let Some(&p) = parent_of.get(cur) {
                if !seen.insert(cur) {
                    return Err(Error::Cycle(cur.to_string()));
                }
                cur = p;
            }
        }

        let roots: Vec<&str> = labels.iter().copied().filter(|l| !parent_of.contains_key(l)).collect();
        let root = match roots.as_slice() {
            [] => return Err(Error::NoRoot),
            [r] => *r,
            many => return Err(Error::MultipleRoots(many.iter().map(|s| s.to_string()).collect())),
        };
        if level_of[root] != 1 {
            return Err(Error::RootNotAtTop(level_of[root]));
        }
        for (p, c) in edges {
            let (p, c) = (p.as_ref(), c.as_ref());
            if level_of[c] != level_of[p] + 1 {
                return Err(Error::LevelSkip {
                    parent: p.to_string(),
                    child: c.to_string(),
                    parent_level: level_of[p],
                    child_level: level_of[c],
                });
            }
        }
        let bottom = level_of.values().copied().max().unwrap_or(1);
        for &label in &labels {
            if !kids_of.contains_key(label) && level_of[label] != bottom {
                return Err(Error::LeafNotAtBottomLevel {
                    label: label.to_string(),
                    level: level_of[label],
                    bottom,
                });
            }
        }
        if bottom < 2 {
            return Err(Error::TooFewLevels(bottom));
        }

        // Breadth-first numbering, children in edge order.
        let mut by_level: Vec<Vec<String>> = vec![Vec::new(); bottom];
        let mut index_of: HashMap<&str, usize> = HashMap::new();
        let mut queue = VecDeque::from([root]);
        while let Some(label) = queue.pop_front() {
            let level = level_of[label];
            by_level[level - 1].push(label.to_string());
            index_of.insert(label, by_level[level - 1].len());
            if let Some(kids) = kids_of.get(label) {
                queue.extend(kids.iter().copied());
            }
        }
        if let Some(&orphan) = labels.iter().find(|l| !index_of.contains_key(*l)) {
            return Err(Error::Disconnected(orphan.to_string()));
        }
        let children = by_level[..bottom - 1]
            .iter()
            .map(|level| {
                level
                    .iter()
                    .map(|label| {
                        kids_of[label.as_str()].iter().map(|k| index_of[k]).collect::<Vec<_>>()
                    })
                    .collect()
            })
            .collect();
        let tree = Self::from_children(children)?;
        Ok((tree, LabelMap::from_labels(by_level)))
    }

    pub fn num_levels(&self) -> usize {
        self.level_sizes.len()
    }

    pub fn level_sizes(&self) -> &[usize] {
        &self.level_sizes
    }

    pub fn level_size(&self, level: usize) -> usize {
        self.level_sizes[level - 1]
    }

    pub fn num_nodes(&self) -> usize {
        self.level_sizes.iter().sum()
    }

    pub fn contains(&self, node: NodeId) -> bool {
        node.level >= 1
            && node.level <= self.num_levels()
            && node.index >= 1
            && node.index <= self.level_sizes[node.level - 1]
    }

    pub fn is_leaf(&self, node: NodeId) -> bool {
        node.level == self.num_levels()
    }

    pub fn nodes_at(&self, level: usize) -> impl Iterator<Item = NodeId> + '_ {
        (1..=self.level_size(level)).map(move |j| NodeId::new(level, j))
    }

    pub fn leaves(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes_at(self.num_levels())
    }

    /// Every node, level by level, ascending index.
    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        (1..=self.num_levels()).flat_map(move |l| self.nodes_at(l))
    }

    /// Children of a non-leaf node, ascending. Empty for leaves.
    pub fn children(&self, node: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        let kids: &[usize] = if node.level < self.num_levels() {
            &self.children[node.level - 1][node.index - 1]
        } else {
            &[]
        };
        kids.iter().map(move |&c| NodeId::new(node.level + 1, c))
    }

    pub fn parent(&self, node: NodeId) -> Option<NodeId> {
        (node.level > 1).then(|| NodeId::new(node.level - 1, self.parents[node.level - 1][node.index - 1]))
    }

    /// Leaves below `node`, ascending.
    pub fn descendant_leaves(&self, node: NodeId) -> Vec<NodeId> {
        let mut frontier = vec![node];
        while frontier.first().is_some_and(|n| n.level < self.num_levels()) {
            frontier = frontier.iter().flat_map(|&n| self.children(n)).collect();
        }
        frontier
    }

    /// Groups of leaves sharing a parent, in parent order.
    pub fn sibling_leaf_groups(&self) -> Vec<Vec<NodeId>> {
        self.nodes_at(self.num_levels() - 1).map(|p| self.children(p).collect()).collect()
    }
}

/// Values for a set of nodes over the half-open window `[start, start + len)`.
/// Time indices are 1-based. Every stored value is finite.
#[derive(Clone, Debug, PartialEq)]
pub struct ForecastGrid {
    start: usize,
    len: usize,
    series: BTreeMap<NodeId, Vec<f64>>,
}

impl ForecastGrid {
    pub fn new(start: usize, len: usize) -> Self {
        Self { start, len, series: BTreeMap::new() }
    }

    pub fn insert(&mut self, node: NodeId, values: Vec<f64>) -> Result<()> {
        if values.len() != self.len {
            return Err(Error::LengthMismatch(values.len(), self.len));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { node, t: self.start + i });
        }
        self.series.insert(node, values);
        Ok(())
    }

    pub fn start(&self) -> usize {
        self.start
    }

    /// Number of time points (the horizon for a forecast window).
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    pub fn window(&self) -> Range<usize> {
        self.start..self.start + self.len
    }

    pub fn get(&self, node: NodeId) -> Option<&[f64]> {
        self.series.get(&node).map(Vec::as_slice)
    }

    pub fn require(&self, node: NodeId) -> Result<&[f64]> {
        self.get(node).ok_or(Error::MissingNode(node))
    }

    pub fn value(&self, node: NodeId, t: usize) -> Option<f64> {
        let s = self.series.get(&node)?;
        t.checked_sub(self.start).and_then(|i| s.get(i)).copied()
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.series.keys().copied()
    }

    pub fn num_nodes(&self) -> usize {
        self.series.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, &[f64])> {
        self.series.iter().map(|(k, v)| (*k, v.as_slice()))
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.start == other.start && self.len == other.len && self.series.keys().eq(other.series.keys())
    }

    /// Keeps only the nodes at `level`.
    pub fn level(&self, level: usize) -> Self {
        let series = self.series.iter().filter(|(k, _)| k.level == level).map(|(k, v)| (*k, v.clone())).collect();
        Self { start: self.start, len: self.len, series }
    }

    /// Keeps only nodes at levels `<= max_level`.
    pub fn up_to_level(&self, max_level: usize) -> Self {
        let series =
            self.series.iter().filter(|(k, _)| k.level <= max_level).map(|(k, v)| (*k, v.clone())).collect();
        Self { start: self.start, len: self.len, series }
    }

    /// Applies `f` elementwise. Fails if `f` produces a non-finite value.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        let mut out = Self::new(self.start, self.len);
        for (node, values) in &self.series {
            out.insert(*node, values.iter().map(|&v| f(v)).collect())?;
        }
        Ok(out)
    }

    /// Elementwise `a * self + b * other` over identical shapes.
    pub fn linear_combination(&self, a: f64, other: &Self, b: f64) -> Result<Self> {
        if !self.same_shape(other) {
            return Err(Error::WindowMismatch("linear combination of differently shaped grids".into()));
        }
        let mut out = Self::new(self.start, self.len);
        for ((node, x), y) in self.series.iter().zip(other.series.values()) {
            out.insert(*node, x.iter().zip(y).map(|(x, y)| a * x + b * y).collect())?;
        }
        Ok(out)
    }
}

/// Sums leaf values up the tree. Leaf values pass through unchanged; any
/// non-leaf entries in the input are ignored and recomputed.
pub fn aggregate_bottom_up(tree: &HierarchyTree, leaf_forecasts: &ForecastGrid) -> Result<ForecastGrid> {
    let mut out = ForecastGrid::new(leaf_forecasts.start(), leaf_forecasts.len());
    for leaf in tree.leaves() {
        let values = leaf_forecasts.get(leaf).ok_or(Error::IncompleteLeafCover(leaf))?;
        out.series.insert(leaf, values.to_vec());
    }
    for level in (1..tree.num_levels()).rev() {
        for node in tree.nodes_at(level) {
            let mut sum = vec![0.0; out.len];
            for child in tree.children(node) {
                for (s, v) in sum.iter_mut().zip(&out.series[&child]) {
                    *s += v;
                }
            }
            out.insert(node, sum)?;
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoherenceViolation {
    pub node: NodeId,
    pub t: usize,
    pub value: f64,
    pub children_sum: f64,
    /// `|value - children_sum|`.
    pub gap: f64,
    /// `gap / max(1, |value|)`.
    pub relative_gap: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoherenceReport {
    pub coherent: bool,
    /// The largest relative gap seen, if any non-leaf node exists.
    pub worst: Option<CoherenceViolation>,
}

/// Checks that every non-leaf value equals the sum of its children within
/// `rel_tol * max(1, |value|)`.
pub fn check_coherence(tree: &HierarchyTree, grid: &ForecastGrid, rel_tol: f64) -> Result<CoherenceReport> {
    let mut worst: Option<CoherenceViolation> = None;
    for level in 1..tree.num_levels() {
        for node in tree.nodes_at(level) {
            let values = grid.require(node)?;
            let kids: Vec<&[f64]> = tree.children(node).map(|c| grid.require(c)).collect::<Result<_>>()?;
            for (i, &value) in values.iter().enumerate() {
                let children_sum: f64 = kids.iter().map(|k| k[i]).sum();
                let gap = (value - children_sum).abs();
                let relative_gap = gap / value.abs().max(1.0);
                if worst.is_none_or(|w| relative_gap > w.relative_gap) {
                    worst = Some(CoherenceViolation { node, t: grid.start() + i, value, children_sum, gap, relative_gap });
                }
            }
        }
    }
    let coherent = worst.is_none_or(|w| w.relative_gap <= rel_tol);
    Ok(CoherenceReport { coherent, worst })
}
