//! On-disk trial stores: `trials.csv`, one `forecasts/trial_<i>.csv` per
//! trial with stored forecasts, and `fingerprint.txt`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::experiment::write_atomic;
use crate::forecasters::TrialConfig;
use crate::hierarchy::{ForecastGrid, LabelMap};

use super::search::{TrialRecord, TrialStore};

const TRIALS_HEADER: [&str; 9] =
    ["index", "kind", "seed", "params", "objective", "per_offset_losses", "train_start", "train_end", "error"];

fn parse_err(path: &Path, line: u64, msg: impl Into<String>) -> Error {
    Error::Parse { path: path.to_path_buf(), line, msg: msg.into() }
}

fn csv_bytes(rows: impl FnOnce(&mut csv::Writer<Vec<u8>>) -> csv::Result<()>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    rows(&mut w).expect("writing to memory");
    w.into_inner().expect("writing to memory")
}

fn join_floats(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";")
}

fn split_floats(text: &str) -> std::result::Result<Vec<f64>, std::num::ParseFloatError> {
    text.split(';').filter(|s| !s.is_empty()).map(str::parse).collect()
}

/// Writes `store` under `dir`. Node ids in forecast files use `labels`.
pub fn write_store(dir: &Path, store: &TrialStore, labels: &LabelMap) -> Result<()> {
    let fdir = dir.join("forecasts");
    fs::create_dir_all(&fdir).map_err(|e| Error::io(&fdir, e))?;
    let trials = csv_bytes(|w| {
        w.write_record(TRIALS_HEADER)?;
        for r in &store.records {
            w.write_record([
                r.index.to_string(),
                r.config.kind.clone(),
                r.config.seed.to_string(),
                r.config.params_string(),
                r.objective_value.to_string(),
                join_floats(&r.per_offset_losses),
                r.trained_on.0.to_string(),
                r.trained_on.1.to_string(),
                r.error.clone().unwrap_or_default(),
            ])?;
        }
        Ok(())
    });
    write_atomic(&dir.join("trials.csv"), &trials)?;
    for r in &store.records {
        if let Some(grid) = &r.leaf_forecasts {
            let bytes = csv_bytes(|w| {
                w.write_record(["node_id", "t", "value"])?;
                for (node, values) in grid.iter() {
                    for (i, v) in values.iter().enumerate() {
                        w.write_record([labels.label(node).to_string(), (grid.start() + i).to_string(), v.to_string()])?;
                    }
                }
                Ok(())
            });
            write_atomic(&fdir.join(format!("trial_{}.csv", r.index)), &bytes)?;
        }
    }
    let fp = format!("dataset={}\nobjective={}\n", store.dataset_fingerprint, store.objective_fingerprint);
    write_atomic(&dir.join("fingerprint.txt"), fp.as_bytes())
}

fn read_forecasts(path: &Path, labels: &LabelMap) -> Result<ForecastGrid> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| parse_err(path, 0, e.to_string()))?;
    let mut rows: Vec<(crate::hierarchy::NodeId, usize, f64)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| parse_err(path, 0, e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 3 {
            return Err(parse_err(path, line, "expected node_id,t,value"));
        }
        let node = labels.id(&rec[0]).ok_or_else(|| parse_err(path, line, format!("unknown node `{}`", &rec[0])))?;
        let t = rec[1].parse().map_err(|_| parse_err(path, line, "bad t"))?;
        let v = rec[2].parse().map_err(|_| parse_err(path, line, "bad value"))?;
        rows.push((node, t, v));
    }
    let start = rows.iter().map(|r| r.1).min().ok_or_else(|| parse_err(path, 1, "empty forecast file"))?;
    let end = rows.iter().map(|r| r.1).max().expect("non-empty");
    let len = end - start + 1;
    let mut by_node: std::collections::BTreeMap<_, Vec<Option<f64>>> = Default::default();
    for (node, t, v) in rows {
        by_node.entry(node).or_insert_with(|| vec![None; len])[t - start] = Some(v);
    }
    let mut grid = ForecastGrid::new(start, len);
    for (node, values) in by_node {
        let values: Option<Vec<f64>> = values.into_iter().collect();
        grid.insert(node, values.ok_or_else(|| parse_err(path, 0, format!("gaps in forecasts for {node}")))?)?;
    }
    Ok(grid)
}

/// Reads a store written by [`write_store`]. Without `labels` the forecast
/// files are skipped.
pub fn read_store(dir: &Path, labels: Option<&LabelMap>) -> Result<TrialStore> {
    let path = dir.join("trials.csv");
    let mut rdr = csv::Reader::from_path(&path).map_err(|e| parse_err(&path, 0, e.to_string()))?;
    let headers = rdr.headers().map_err(|e| parse_err(&path, 1, e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != TRIALS_HEADER {
        return Err(parse_err(&path, 1, format!("expected header `{}`", TRIALS_HEADER.join(","))));
    }
    let mut records = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| parse_err(&path, 0, e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |what: &str| parse_err(&path, line, format!("bad {what}"));
        let index: usize = rec[0].parse().map_err(|_| bad("index"))?;
        let config = TrialConfig {
            kind: rec[1].to_string(),
            seed: rec[2].parse().map_err(|_| bad("seed"))?,
            params: TrialConfig::parse_params(&rec[3])?,
        };
        let fpath = dir.join("forecasts").join(format!("trial_{index}.csv"));
        let leaf_forecasts = match labels {
            Some(labels) if fpath.exists() => Some(read_forecasts(&fpath, labels)?),
            _ => None,
        };
        records.push(TrialRecord {
            index,
            config,
            leaf_forecasts,
            objective_value: rec[4].parse().map_err(|_| bad("objective"))?,
            per_offset_losses: split_floats(&rec[5]).map_err(|_| bad("per_offset_losses"))?,
            trained_on: (rec[6].parse().map_err(|_| bad("train_start"))?, rec[7].parse().map_err(|_| bad("train_end"))?),
            error: (!rec[8].is_empty()).then(|| rec[8].to_string()),
        });
    }
    let fp_path = dir.join("fingerprint.txt");
    let text = fs::read_to_string(&fp_path).map_err(|e| Error::io(&fp_path, e))?;
    let field = |key: &str| {
        text.lines()
            .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
            .map(str::to_string)
            .ok_or_else(|| parse_err(&fp_path, 0, format!("missing `{key}`")))
    };
    Ok(TrialStore { records, dataset_fingerprint: field("dataset")?, objective_fingerprint: field("objective")? })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forecasters::ParamValue;
    use crate::hierarchy::{HierarchyTree, NodeId};
    use proptest::prelude::*;

    fn sample_store(values: Vec<f64>, alpha: f64, objective: f64) -> (TrialStore, LabelMap) {
        let tree = HierarchyTree::balanced(&[2]).unwrap();
        let labels = LabelMap::generated(&tree);
        let mut g = ForecastGrid::new(9, values.len());
        g.insert(NodeId::new(2, 1), values.clone()).unwrap();
        g.insert(NodeId::new(2, 2), values.iter().map(|v| -v).collect()).unwrap();
        let ok = TrialRecord {
            index: 0,
            config: TrialConfig::new("ses", 42).with("alpha", ParamValue::Real(alpha)),
            leaf_forecasts: Some(g),
            objective_value: objective,
            per_offset_losses: values.iter().map(|v| v.abs()).collect(),
            trained_on: (1, 8),
            error: None,
        };
        let failed = TrialRecord {
            index: 1,
            config: TrialConfig::new("ses", 43).with("alpha", ParamValue::Real(0.5)),
            leaf_forecasts: None,
            objective_value: f64::INFINITY,
            per_offset_losses: Vec::new(),
            trained_on: (0, 0),
            error: Some("bad, \"quoted\" failure".into()),
        };
        let store = TrialStore {
            records: vec![ok, failed],
            dataset_fingerprint: "abc/T=8;H=2;K=1".into(),
            objective_fingerprint: "hpro:mse:[1.0]".into(),
        };
        (store, labels)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn roundtrip_is_lossless(
            values in prop::collection::vec(-1e12f64..1e12, 1..6),
            alpha in 0.01f64..0.99,
            objective in 0f64..1e6,
        ) {
            let (store, labels) = sample_store(values, alpha, objective);
            let dir = tempfile::tempdir().unwrap();
            write_store(dir.path(), &store, &labels).unwrap();
            prop_assert_eq!(read_store(dir.path(), Some(&labels)).unwrap(), store);
        }
    }

    #[test]
    fn rejects_wrong_header() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("trials.csv"), "a,b\n").unwrap();
        let tree = HierarchyTree::balanced(&[2]).unwrap();
        assert!(matches!(read_store(dir.path(), Some(&LabelMap::generated(&tree))), Err(Error::Parse { .. })));
    }
}
