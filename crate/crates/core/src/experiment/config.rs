//! Experiment configuration: flat `[section]` blocks of `key = value` lines.
//! `#` and `;` start comments.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::data::{ShiftMode, SyntheticConfig};
use crate::error::{Error, Result};
use crate::forecasters::{default_space, Domain, ForecasterKind, ParamSpec, SearchSpace};
use crate::hpo::Loss;

/// A parsed INI file. Values keep their line numbers for diagnostics.
#[derive(Clone, Debug, Default)]
pub struct Ini {
    path: PathBuf,
    sections: BTreeMap<String, BTreeMap<String, (String, u64)>>,
}

impl Ini {
    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        let mut ini = Ini { path: path.to_path_buf(), sections: BTreeMap::new() };
        let mut current: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line_no = i as u64 + 1;
            let line = raw.split(['#', ';']).next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| ini.err(line_no, format!("unterminated section header `{line}`")))?
                    .trim()
                    .to_string();
                if ini.sections.contains_key(&name) {
                    return Err(ini.err(line_no, format!("duplicate section [{name}]")));
                }
                ini.sections.insert(name.clone(), BTreeMap::new());
                current = Some(name);
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ini.err(line_no, format!("expected `key = value`, got `{line}`")))?;
            let section = current.clone().ok_or_else(|| ini.err(line_no, "key outside of any section"))?;
            let key = k.trim().to_string();
            let entries = ini.sections.get_mut(&section).expect("inserted above");
            if entries.insert(key.clone(), (v.trim().to_string(), line_no)).is_some() {
                return Err(ini.err(line_no, format!("duplicate key `{key}` in [{section}]")));
            }
        }
        Ok(ini)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(path, &text)
    }

    fn err(&self, line: u64, msg: impl Into<String>) -> Error {
        Error::Parse { path: self.path.clone(), line, msg: msg.into() }
    }

    pub fn has_section(&self, section: &str) -> bool {
        self.sections.contains_key(section)
    }

    pub fn raw(&self, section: &str, key: &str) -> Option<(&str, u64)> {
        self.sections.get(section)?.get(key).map(|(v, l)| (v.as_str(), *l))
    }

    pub fn keys(&self, section: &str) -> Vec<(&str, &str, u64)> {
        self.sections
            .get(section)
            .map(|s| s.iter().map(|(k, (v, l))| (k.as_str(), v.as_str(), *l)).collect())
            .unwrap_or_default()
    }

    /// Parses `[section] key` with `f`, or returns `None` when absent.
    pub fn get<T>(&self, section: &str, key: &str, f: impl FnOnce(&str) -> Option<T>) -> Result<Option<T>> {
        match self.raw(section, key) {
            None => Ok(None),
            Some((v, line)) => f(v).map(Some).ok_or_else(|| self.err(line, format!("invalid value `{v}` for {section}.{key}"))),
        }
    }

    pub fn get_or<T>(&self, section: &str, key: &str, default: T, f: impl FnOnce(&str) -> Option<T>) -> Result<T> {
        Ok(self.get(section, key, f)?.unwrap_or(default))
    }

    /// Fails on keys outside `allowed` (catches typos).
    pub fn check_keys(&self, section: &str, allowed: &[&str], allow_prefix: Option<&str>) -> Result<()> {
        for (k, _, line) in self.keys(section) {
            let prefixed = allow_prefix.is_some_and(|p| k.starts_with(p));
            if !allowed.contains(&k) && !prefixed {
                return Err(self.err(line, format!("unknown key `{k}` in [{section}]")));
            }
        }
        Ok(())
    }

    pub fn check_sections(&self, allowed: &[&str]) -> Result<()> {
        for name in self.sections.keys() {
            if !allowed.contains(&name.as_str()) {
                return Err(Error::Parse { path: self.path.clone(), line: 0, msg: format!("unknown section [{name}]") });
            }
        }
        Ok(())
    }
}

fn parse_bool(v: &str) -> Option<bool> {
    match v {
        "true" | "yes" | "on" | "1" => Some(true),
        "false" | "no" | "off" | "0" => Some(false),
        _ => None,
    }
}

fn parse_num<T: std::str::FromStr>(v: &str) -> Option<T> {
    v.parse().ok()
}

fn parse_list<T: std::str::FromStr>(v: &str) -> Option<Vec<T>> {
    v.split(',').map(|s| s.trim().parse().ok()).collect()
}

fn parse_pair(v: &str) -> Option<(f64, f64)> {
    match parse_list::<f64>(v)?.as_slice() {
        [a] => Some((*a, *a)),
        [a, b] if a <= b => Some((*a, *b)),
        _ => None,
    }
}

/// Comma-separated seeds; `a-b` expands to the inclusive range.
pub fn parse_seeds(v: &str) -> Option<Vec<u64>> {
    let mut out = Vec::new();
    for item in v.split(',').map(str::trim) {
        match item.split_once('-') {
            Some((a, b)) => {
                let (a, b): (u64, u64) = (a.trim().parse().ok()?, b.trim().parse().ok()?);
                if a > b {
                    return None;
                }
                out.extend(a..=b);
            }
            None => out.push(item.parse().ok()?),
        }
    }
    (!out.is_empty()).then_some(out)
}

/// `lo..hi` (integers if both parse as integers), `log lo..hi`, or `a|b|c`.
pub fn parse_domain(v: &str) -> Option<Domain> {
    if v.contains('|') {
        return Some(Domain::Categorical(v.split('|').map(|s| s.trim().to_string()).collect()));
    }
    let (log, range) = match v.strip_prefix("log ") {
        Some(rest) => (true, rest.trim()),
        None => (false, v),
    };
    let (lo, hi) = range.split_once("..")?;
    let (lo, hi) = (lo.trim(), hi.trim());
    if !log {
        if let (Ok(lo), Ok(hi)) = (lo.parse::<i64>(), hi.parse::<i64>()) {
            return Some(Domain::Int { lo, hi });
        }
    }
    Some(Domain::Real { lo: lo.parse().ok()?, hi: hi.parse().ok()?, log })
}

#[derive(Clone, Debug, PartialEq)]
pub enum DatasetSource {
    /// `seed: None` ties the data seed to the run seed.
    Synthetic { config: SyntheticConfig, seed: Option<u64> },
    Files { hierarchy: PathBuf, series: PathBuf },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub kind: ForecasterKind,
    pub space: SearchSpace,
    pub n_trials: usize,
}

/// The four searchable objectives, by method name.
pub const OBJECTIVES: [&str; 4] = ["tcv_lowest", "tcv_hier", "hpro_top", "hpro_avg"];

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub history: usize,
    pub horizon: usize,
    /// Validation window counts to run TCV with.
    pub windows: Vec<usize>,
    pub student: ModelConfig,
    pub teacher: ModelConfig,
    /// `None` picks the default depth for the tree.
    pub teacher_levels: Option<usize>,
    pub loss: Loss,
    /// Searchable objectives to run, each with its per-offset flag.
    pub objectives: Vec<(String, bool)>,
    pub ensembles: Vec<(String, Vec<String>)>,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub jobs: usize,
}

fn model_config(ini: &Ini, section: &str, extra: &[&str], default_period: usize, default_kind: &str, default_trials: usize) -> Result<ModelConfig> {
    let allowed: Vec<&str> = ["kind", "period", "n_trials"].iter().chain(extra).copied().collect();
    ini.check_keys(section, &allowed, Some("space."))?;
    let name = ini.get_or(section, "kind", default_kind.to_string(), |v| Some(v.to_string()))?;
    let period = ini.get_or(section, "period", default_period, parse_num)?;
    let kind = ForecasterKind::parse(&name, period).map_err(|e| match ini.raw(section, "kind") {
        Some((_, line)) => ini.err(line, e.to_string()),
        None => e,
    })?;
    let n_trials = ini.get_or(section, "n_trials", default_trials, parse_num)?;
    if n_trials == 0 {
        return Err(ini.err(ini.raw(section, "n_trials").map_or(0, |r| r.1), "n_trials must be >= 1"));
    }
    let mut params: Vec<ParamSpec> = default_space(kind).params().to_vec();
    for (k, v, line) in ini.keys(section) {
        let Some(name) = k.strip_prefix("space.") else { continue };
        let domain = parse_domain(v).ok_or_else(|| ini.err(line, format!("bad domain `{v}`")))?;
        match params.iter_mut().find(|p| p.name == name) {
            Some(p) => p.domain = domain,
            None => return Err(ini.err(line, format!("`{}` has no hyperparameter `{name}`", kind))),
        }
    }
    let space = SearchSpace::new(params).map_err(|e| ini.err(0, e.to_string()))?;
    Ok(ModelConfig { kind, space, n_trials })
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let ini = Ini::load(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_ini(&ini, base)
    }

    /// Builds a config; relative paths resolve against `base`.
    pub fn from_ini(ini: &Ini, base: &Path) -> Result<Self> {
        ini.check_sections(&["dataset", "split", "student", "teacher", "objectives", "ensembles", "run"])?;
        ini.check_keys("split", &["T", "H", "K"], None)?;
        let history = ini.get("split", "T", parse_num)?.ok_or_else(|| ini.err(0, "[split] T is required"))?;
        let horizon: usize = ini.get("split", "H", parse_num)?.ok_or_else(|| ini.err(0, "[split] H is required"))?;
        let windows: Vec<usize> = ini.get_or("split", "K", vec![1], parse_list)?;
        if horizon == 0 || windows.is_empty() || windows.contains(&0) {
            return Err(ini.err(0, "[split] needs H >= 1 and every K >= 1"));
        }

        ini.check_keys(
            "dataset",
            &[
                "hierarchy", "series", "branching", "base", "trend_slope", "period", "amplitude", "random_phase", "sigma",
                "rho_leaf", "shift_mode", "shift_magnitude", "shift_lead", "seed",
            ],
            None,
        )?;
        let dataset = match (ini.raw("dataset", "hierarchy"), ini.raw("dataset", "series")) {
            (Some((h, _)), Some((s, _))) => DatasetSource::Files { hierarchy: base.join(h), series: base.join(s) },
            (None, None) => {
                let d = SyntheticConfig::default();
                let config = SyntheticConfig {
                    branching: ini.get_or("dataset", "branching", d.branching, parse_list)?,
                    base: ini.get_or("dataset", "base", d.base, parse_pair)?,
                    trend_slope: ini.get_or("dataset", "trend_slope", d.trend_slope, parse_pair)?,
                    period: ini.get_or("dataset", "period", d.period, parse_num)?,
                    amplitude: ini.get_or("dataset", "amplitude", d.amplitude, parse_pair)?,
                    random_phase: ini.get_or("dataset", "random_phase", d.random_phase, parse_bool)?,
                    sigma: ini.get_or("dataset", "sigma", d.sigma, parse_num)?,
                    rho_leaf: ini.get_or("dataset", "rho_leaf", d.rho_leaf, parse_num)?,
                    shift_mode: ini.get_or("dataset", "shift_mode", d.shift_mode, |v| v.parse::<ShiftMode>().ok())?,
                    shift_magnitude: ini.get_or("dataset", "shift_magnitude", d.shift_magnitude, parse_num)?,
                    shift_lead: ini.get_or("dataset", "shift_lead", d.shift_lead, parse_num)?,
                    history,
                    horizon,
                    seed: 0,
                };
                config.validate().map_err(|e| ini.err(0, e.to_string()))?;
                DatasetSource::Synthetic { config, seed: ini.get("dataset", "seed", parse_num)? }
            }
            _ => return Err(ini.err(0, "[dataset] needs both `hierarchy` and `series`, or neither")),
        };
        let period = match &dataset {
            DatasetSource::Synthetic { config, .. } => config.period,
            DatasetSource::Files { .. } => 1,
        };

        let student = model_config(ini, "student", &[], period, "global_lag_ridge", 20)?;
        let teacher = model_config(ini, "teacher", &["levels"], period, "theta", 10)?;
        let teacher_levels = ini.get("teacher", "levels", parse_num)?;

        let mut allowed: Vec<String> = vec!["loss".into()];
        for o in OBJECTIVES {
            allowed.push(o.into());
            allowed.push(format!("{o}_po"));
        }
        ini.check_keys("objectives", &allowed.iter().map(String::as_str).collect::<Vec<_>>(), None)?;
        let loss = ini.get_or("objectives", "loss", Loss::Rmsse, |v| v.parse().ok())?;
        let mut objectives = Vec::new();
        for o in OBJECTIVES {
            let on = ini.get_or("objectives", o, !ini.has_section("objectives"), parse_bool)?;
            let po = ini.get_or("objectives", &format!("{o}_po"), false, parse_bool)?;
            if on || po {
                objectives.push((o.to_string(), po));
            }
        }

        let mut ensembles = Vec::new();
        for (name, members, line) in ini.keys("ensembles") {
            let members: Vec<String> = members.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
            if members.len() < 2 {
                return Err(ini.err(line, format!("ensemble `{name}` needs at least 2 members")));
            }
            ensembles.push((name.to_string(), members));
        }

        ini.check_keys("run", &["seeds", "out", "jobs"], None)?;
        let seeds = ini.get_or("run", "seeds", vec![0, 1, 2], parse_seeds)?;
        let out = base.join(ini.get_or("run", "out", "results".to_string(), |v| Some(v.to_string()))?);
        let jobs = ini.get_or("run", "jobs", 0, parse_num)?;

        let config = Self {
            dataset,
            history,
            horizon,
            windows,
            student,
            teacher,
            teacher_levels,
            loss,
            objectives,
            ensembles,
            seeds,
            out,
            jobs,
        };
        config.check_method_names().map_err(|e| ini.err(0, e.to_string()))?;
        Ok(config)
    }

    /// Names of the TCV stores for each window count.
    pub fn tcv_name(&self, base: &str, k: usize) -> String {
        if self.windows.len() == 1 {
            base.to_string()
        } else {
            format!("{base}_k{k}")
        }
    }

    /// Every method a run reports, in output order.
    pub fn method_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (o, po) in &self.objectives {
            let variants: Vec<String> = if o.starts_with("tcv") {
                self.windows.iter().map(|&k| self.tcv_name(o, k)).collect()
            } else {
                vec![o.clone()]
            };
            for v in variants {
                names.push(v.clone());
                if *po {
                    names.push(format!("{v}_po"));
                }
            }
        }
        names.push("opt_bu".into());
        names.push("gold".into());
        names.extend(self.ensembles.iter().map(|(n, _)| n.clone()));
        names
    }

    fn check_method_names(&self) -> Result<()> {
        let known = self.method_names();
        for (name, members) in &self.ensembles {
            if OBJECTIVES.contains(&name.as_str()) || known.iter().filter(|k| *k == name).count() > 1 {
                return Err(Error::Config(format!("ensemble name `{name}` clashes with a method")));
            }
            for m in members {
                if !known.contains(m) || self.ensembles.iter().any(|(n, _)| n == m) {
                    return Err(Error::Config(format!("ensemble `{name}` references unknown method `{m}`")));
                }
            }
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("no seeds".into()));
        }
        Ok(())
    }

    /// The synthetic config for one run seed.
    pub fn synthetic_for(&self, run_seed: u64) -> Option<SyntheticConfig> {
        match &self.dataset {
            DatasetSource::Synthetic { config, seed } => Some(SyntheticConfig { seed: seed.unwrap_or(run_seed), ..config.clone() }),
            DatasetSource::Files { .. } => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "\
# mismatch benchmark
[dataset]
branching = 4, 4
shift_mode = test_shift
shift_magnitude = 2

[split]
T = 60
H = 6
K = 1, 2

[student]
kind = global_lag_ridge
n_trials = 8
space.p = 1..6

[teacher]
kind = theta
levels = 1

[objectives]
tcv_hier = true
tcv_hier_po = true
hpro_avg = true

[ensembles]
mix = hpro_avg, tcv_hier_k1

[run]
seeds = 0-2, 7
";

    #[test]
    fn parses_sample() {
        let ini = Ini::parse(Path::new("x.ini"), SAMPLE).unwrap();
        let c = ExperimentConfig::from_ini(&ini, Path::new("/tmp")).unwrap();
        assert_eq!(c.seeds, vec![0, 1, 2, 7]);
        assert_eq!(c.windows, vec![1, 2]);
        assert_eq!(c.student.space.get("p").unwrap().domain, Domain::Int { lo: 1, hi: 6 });
        assert_eq!(c.teacher_levels, Some(1));
        assert_eq!(
            c.method_names(),
            vec!["tcv_hier_k1", "tcv_hier_k1_po", "tcv_hier_k2", "tcv_hier_k2_po", "hpro_avg", "opt_bu", "gold", "mix"]
        );
        assert_eq!(c.synthetic_for(5).unwrap().seed, 5);
        assert_eq!(c.out, PathBuf::from("/tmp/results"));
    }

    #[test]
    fn reports_line_numbers() {
        let bad = SAMPLE.replace("n_trials = 8", "n_trails = 8");
        let ini = Ini::parse(Path::new("x.ini"), &bad).unwrap();
        match ExperimentConfig::from_ini(&ini, Path::new(".")) {
            Err(Error::Parse { line, msg, .. }) => {
                assert_eq!(line, 14);
                assert!(msg.contains("n_trails"));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(Ini::parse(Path::new("x"), "[a]\nnovalue\n"), Err(Error::Parse { line: 2, .. })));
        let unknown = SAMPLE.replace("mix = hpro_avg, tcv_hier_k1", "mix = hpro_avg, nope");
        let ini = Ini::parse(Path::new("x.ini"), &unknown).unwrap();
        assert!(ExperimentConfig::from_ini(&ini, Path::new(".")).is_err());
    }

    #[test]
    fn domains_and_seeds() {
        assert_eq!(parse_domain("log 1e-4..1e2"), Some(Domain::Real { lo: 1e-4, hi: 1e2, log: true }));
        assert_eq!(parse_domain("0.1..0.9"), Some(Domain::Real { lo: 0.1, hi: 0.9, log: false }));
        assert_eq!(parse_domain("a|b"), Some(Domain::Categorical(vec!["a".into(), "b".into()])));
        assert_eq!(parse_seeds("3"), Some(vec![3]));
        assert_eq!(parse_seeds("2-1"), None);
    }
}
