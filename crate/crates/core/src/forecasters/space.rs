use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;

use crate::error::{Error, Result};

/// A single hyperparameter value.
#[derive(Clone, Debug, PartialEq)]
pub enum ParamValue {
    Real(f64),
    Int(i64),
    Cat(String),
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Real(v) => write!(f, "{v:?}"),
            ParamValue::Int(v) => write!(f, "{v}"),
            ParamValue::Cat(v) => f.write_str(v),
        }
    }
}

impl ParamValue {
    /// Integers parse as `Int`, other numbers as `Real`, anything else as `Cat`.
    pub fn parse(text: &str) -> Self {
        if let Ok(i) = text.parse::<i64>() {
            ParamValue::Int(i)
        } else if let Ok(f) = text.parse::<f64>() {
            ParamValue::Real(f)
        } else {
            ParamValue::Cat(text.to_string())
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Domain {
    Real { lo: f64, hi: f64, log: bool },
    Int { lo: i64, hi: i64 },
    Categorical(Vec<String>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub domain: Domain,
}

/// The hyperparameter space searched for one forecaster.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct SearchSpace {
    params: Vec<ParamSpec>,
}

impl SearchSpace {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn new(params: Vec<ParamSpec>) -> Result<Self> {
        for p in &params {
            match &p.domain {
                Domain::Real { lo, hi, log } => {
                    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                        return Err(Error::InvalidSpace(format!("{}: need lo < hi", p.name)));
                    }
                    if *log && *lo <= 0.0 {
                        return Err(Error::InvalidSpace(format!("{}: log scale needs lo > 0", p.name)));
                    }
                }
                Domain::Int { lo, hi } => {
                    if lo > hi {
                        return Err(Error::InvalidSpace(format!("{}: need lo <= hi", p.name)));
                    }
                }
                Domain::Categorical(options) => {
                    if options.is_empty() {
                        return Err(Error::InvalidSpace(format!("{}: empty categorical list", p.name)));
                    }
                }
            }
        }
        Ok(Self { params })
    }

    pub fn real(mut self, name: &str, lo: f64, hi: f64, log: bool) -> Result<Self> {
        self.params.push(ParamSpec { name: name.into(), domain: Domain::Real { lo, hi, log } });
        Self::new(self.params)
    }

    pub fn int(mut self, name: &str, lo: i64, hi: i64) -> Result<Self> {
        self.params.push(ParamSpec { name: name.into(), domain: Domain::Int { lo, hi } });
        Self::new(self.params)
    }

    pub fn categorical(mut self, name: &str, options: &[&str]) -> Result<Self> {
        let options = options.iter().map(|s| s.to_string()).collect();
        self.params.push(ParamSpec { name: name.into(), domain: Domain::Categorical(options) });
        Self::new(self.params)
    }

    pub fn params(&self) -> &[ParamSpec] {
        &self.params
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&ParamSpec> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Draws one configuration: uniform on linear ranges, log-uniform on log
    /// ranges, uniform over integers and categories.
    pub fn sample(&self, rng: &mut impl Rng) -> BTreeMap<String, ParamValue> {
        self.params
            .iter()
            .map(|p| {
                let v = match &p.domain {
                    Domain::Real { lo, hi, log: false } => ParamValue::Real(rng.random_range(*lo..=*hi)),
                    Domain::Real { lo, hi, log: true } => {
                        ParamValue::Real(rng.random_range(lo.ln()..=hi.ln()).exp().clamp(*lo, *hi))
                    }
                    Domain::Int { lo, hi } => ParamValue::Int(rng.random_range(*lo..=*hi)),
                    Domain::Categorical(options) => ParamValue::Cat(options[rng.random_range(0..options.len())].clone()),
                };
                (p.name.clone(), v)
            })
            .collect()
    }

    /// True when every declared parameter is present and inside its domain.
    pub fn contains(&self, params: &BTreeMap<String, ParamValue>) -> bool {
        self.params.iter().all(|p| match (&p.domain, params.get(&p.name)) {
            (Domain::Real { lo, hi, .. }, Some(ParamValue::Real(v))) => lo <= v && v <= hi,
            (Domain::Int { lo, hi }, Some(ParamValue::Int(v))) => lo <= v && v <= hi,
            (Domain::Categorical(o), Some(ParamValue::Cat(v))) => o.contains(v),
            _ => false,
        })
    }
}
