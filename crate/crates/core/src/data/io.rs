use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::experiment::write_atomic;
use crate::hierarchy::{HierarchyTree, NodeId};

use super::SeriesPanel;

fn parse_err(path: &Path, line: u64, msg: impl Into<String>) -> Error {
    Error::Parse { path: path.to_path_buf(), line, msg: msg.into() }
}

fn reader(path: &Path, expected: &[&str]) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = rdr.headers().map_err(|e| parse_err(path, 1, e.to_string()))?;
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(parse_err(path, 1, format!("expected header `{}`, found `{}`", expected.join(","), headers.iter().collect::<Vec<_>>().join(","))));
    }
    Ok(rdr)
}

fn records(path: &Path, rdr: &mut csv::Reader<fs::File>) -> Result<Vec<(u64, csv::StringRecord)>> {
    rdr.records()
        .map(|r| {
            let r = r.map_err(|e| parse_err(path, e.position().map_or(0, |p| p.line()), e.to_string()))?;
            let line = r.position().map_or(0, |p| p.line());
            Ok((line, r))
        })
        .collect()
}

/// Reads `hierarchy.csv` (`node_id,level,parent_id`) and `series.csv`
/// (`node_id,t,value`). Leaves-only series are aggregated bottom-up; series
/// covering every node are validated for coherence.
pub fn load_csv(hierarchy_path: &Path, series_path: &Path) -> Result<SeriesPanel> {
    let mut rdr = reader(hierarchy_path, &["node_id", "level", "parent_id"])?;
    let mut level_of = HashMap::new();
    let mut edges = Vec::new();
    for (line, rec) in records(hierarchy_path, &mut rdr)? {
        let id = rec[0].to_string();
        if id.is_empty() {
            return Err(parse_err(hierarchy_path, line, "empty node_id"));
        }
        let level: usize = rec[1].parse().map_err(|_| parse_err(hierarchy_path, line, format!("bad level `{}`", &rec[1])))?;
        if level == 0 {
            return Err(parse_err(hierarchy_path, line, "levels are 1-based"));
        }
        if level_of.insert(id.clone(), level).is_some() {
            return Err(parse_err(hierarchy_path, line, format!("duplicate node `{id}`")));
        }
        if !rec[2].is_empty() {
            edges.push((rec[2].to_string(), id));
        }
    }
    let (tree, labels) = HierarchyTree::from_edge_list(&edges, &level_of)?;

    let mut rdr = reader(series_path, &["node_id", "t", "value"])?;
    let mut by_node: BTreeMap<NodeId, BTreeMap<usize, f64>> = BTreeMap::new();
    for (line, rec) in records(series_path, &mut rdr)? {
        let node = labels.id(&rec[0]).ok_or_else(|| parse_err(series_path, line, format!("unknown node `{}`", &rec[0])))?;
        let t: usize = rec[1].parse().map_err(|_| parse_err(series_path, line, format!("bad t `{}`", &rec[1])))?;
        if t == 0 {
            return Err(parse_err(series_path, line, "t is 1-based"));
        }
        let value: f64 = rec[2].parse().map_err(|_| parse_err(series_path, line, format!("bad value `{}`", &rec[2])))?;
        if !value.is_finite() {
            return Err(parse_err(series_path, line, "non-finite value"));
        }
        if by_node.entry(node).or_default().insert(t, value).is_some() {
            return Err(parse_err(series_path, line, format!("duplicate row for `{}` at t={t}", &rec[0])));
        }
    }

    let mut length = None;
    let mut dense: BTreeMap<NodeId, Vec<f64>> = BTreeMap::new();
    for (node, points) in by_node {
        let n = points.len();
        if points.keys().next_back() != Some(&n) {
            return Err(Error::RaggedSeries(format!("`{}` does not cover t=1..={n} contiguously", labels.label(node))));
        }
        match length {
            None => length = Some(n),
            Some(len) if len != n => {
                return Err(Error::RaggedSeries(format!("`{}` has {n} points, others have {len}", labels.label(node))))
            }
            _ => {}
        }
        dense.insert(node, points.into_values().collect());
    }

    let leaves_only = dense.keys().all(|n| tree.is_leaf(*n));
    if leaves_only {
        let leaves = tree
            .leaves()
            .map(|n| dense.remove(&n).ok_or_else(|| Error::RaggedSeries(format!("no rows for leaf `{}`", labels.label(n)))))
            .collect::<Result<Vec<_>>>()?;
        SeriesPanel::from_leaves(tree, labels, leaves)
    } else {
        let values = (1..=tree.num_levels())
            .map(|l| {
                tree.nodes_at(l)
                    .map(|n| {
                        dense.remove(&n).ok_or_else(|| {
                            Error::RaggedSeries(format!("series covers some aggregates but not `{}`", labels.label(n)))
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        SeriesPanel::from_all_levels(tree, labels, values)
    }
}

/// Key facts about a generated dataset, stored as `meta.txt`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetMeta {
    pub history: usize,
    pub horizon: usize,
    pub seed: u64,
    pub shift_mode: String,
}

/// Writes `hierarchy.csv`, `series.csv` (every node) and, when given, `meta.txt`.
pub fn write_dataset(dir: &Path, panel: &SeriesPanel, meta: Option<&DatasetMeta>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let tree = panel.tree();
    let labels = panel.labels();

    let mut h = String::from("node_id,level,parent_id\n");
    for node in tree.nodes() {
        let parent = tree.parent(node).map_or("", |p| labels.label(p));
        h.push_str(&format!("{},{},{}\n", labels.label(node), node.level, parent));
    }
    write_atomic(&dir.join("hierarchy.csv"), h.as_bytes())?;

    let mut s = String::from("node_id,t,value\n");
    for node in tree.nodes() {
        for (i, v) in panel.series(node).iter().enumerate() {
            s.push_str(&format!("{},{},{}\n", labels.label(node), i + 1, v));
        }
    }
    write_atomic(&dir.join("series.csv"), s.as_bytes())?;

    if let Some(m) = meta {
        let text = format!("T={}\nH={}\nseed={}\nshift_mode={}\n", m.history, m.horizon, m.seed, m.shift_mode);
        write_atomic(&dir.join("meta.txt"), text.as_bytes())?;
    }
    Ok(())
}

pub fn read_meta(path: &Path) -> Result<DatasetMeta> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut kv = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| parse_err(path, i as u64 + 1, "expected key=value"))?;
        kv.insert(k.trim().to_string(), v.trim().to_string());
    }
    let get = |k: &str| kv.get(k).cloned().ok_or_else(|| parse_err(path, 0, format!("missing `{k}`")));
    let num = |k: &str| -> Result<u64> { get(k)?.parse().map_err(|_| parse_err(path, 0, format!("bad `{k}`"))) };
    Ok(DatasetMeta {
        history: num("T")? as usize,
        horizon: num("H")? as usize,
        seed: num("seed")?,
        shift_mode: get("shift_mode")?,
    })
}
