//! Search-space definition and the mapping between the unit hypercube that
//! the optimizers evolve in and native parameter values.
//!
//! Every optimizer in this crate works on genomes in `[0, 1]^D`. A genome is
//! only translated into native values when it is handed to an objective:
//!
//! * float / integer: `a + (b - a) * u` (geometric interpolation when
//!   `log_scale` is set); integers are rounded half away from zero and
//!   clamped to `[a, b]`.
//! * ordinal / categorical: `[0, 1]` is cut into `n` equal bins and
//!   `u = 1.0` falls into the last bin.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    Float,
    Integer,
    Ordinal,
    Categorical,
}

/// Declaration of a single hyperparameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterSpec {
    pub name: String,
    pub kind: ParamKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<[f64; 2]>,
    #[serde(
        default,
        skip_serializing_if = "Option::is_none",
        deserialize_with = "de_choices"
    )]
    pub choices: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub log_scale: bool,
}

fn de_choices<'de, D>(deserializer: D) -> std::result::Result<Option<Vec<String>>, D::Error>
where
    D: serde::Deserializer<'de>,
{
    // Space files may list choices as strings, numbers or booleans.
    let raw: Option<Vec<serde_json::Value>> = Option::deserialize(deserializer)?;
    Ok(raw.map(|values| {
        values
            .into_iter()
            .map(|v| match v {
                serde_json::Value::String(s) => s,
                other => other.to_string(),
            })
            .collect()
    }))
}

impl ParameterSpec {
    pub fn float(name: impl Into<String>, lower: f64, upper: f64) -> Self {
        Self::ranged(name, ParamKind::Float, lower, upper)
    }

    pub fn integer(name: impl Into<String>, lower: i64, upper: i64) -> Self {
        Self::ranged(name, ParamKind::Integer, lower as f64, upper as f64)
    }

    pub fn categorical<S: ToString>(name: impl Into<String>, choices: &[S]) -> Self {
        Self::discrete(name, ParamKind::Categorical, choices)
    }

    pub fn ordinal<S: ToString>(name: impl Into<String>, choices: &[S]) -> Self {
        Self::discrete(name, ParamKind::Ordinal, choices)
    }

    pub fn with_log_scale(mut self) -> Self {
        self.log_scale = true;
        self
    }

    fn ranged(name: impl Into<String>, kind: ParamKind, lower: f64, upper: f64) -> Self {
        Self {
            name: name.into(),
            kind,
            bounds: Some([lower, upper]),
            choices: None,
            log_scale: false,
        }
    }

    fn discrete<S: ToString>(name: impl Into<String>, kind: ParamKind, choices: &[S]) -> Self {
        Self {
            name: name.into(),
            kind,
            bounds: None,
            choices: Some(choices.iter().map(ToString::to_string).collect()),
            log_scale: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |reason: &str| Error::InvalidSpec {
            name: self.name.clone(),
            reason: reason.to_string(),
        };
        if self.name.is_empty() {
            return Err(fail("empty name"));
        }
        match self.kind {
            ParamKind::Float | ParamKind::Integer => {
                let [a, b] = self.bounds.ok_or_else(|| fail("bounds required"))?;
                if self.choices.is_some() {
                    return Err(fail("choices not allowed for a ranged parameter"));
                }
                if !(a.is_finite() && b.is_finite()) || a >= b {
                    return Err(fail("bounds must be finite with lower < upper"));
                }
                if self.kind == ParamKind::Integer && (a.fract() != 0.0 || b.fract() != 0.0) {
                    return Err(fail("integer bounds must be whole numbers"));
                }
                if self.log_scale && a <= 0.0 {
                    return Err(fail("log scale requires a positive lower bound"));
                }
            }
            ParamKind::Ordinal | ParamKind::Categorical => {
                let choices = self.choices.as_ref().ok_or_else(|| fail("choices required"))?;
                if self.bounds.is_some() {
                    return Err(fail("bounds not allowed for a discrete parameter"));
                }
                if self.log_scale {
                    return Err(fail("log scale only applies to float and integer parameters"));
                }
                if choices.is_empty() {
                    return Err(fail("at least one choice required"));
                }
                let distinct: HashSet<&String> = choices.iter().collect();
                if distinct.len() != choices.len() {
                    return Err(fail("choices must be distinct"));
                }
            }
        }
        Ok(())
    }

    /// Number of bins for a discrete parameter.
    pub fn n_choices(&self) -> Option<usize> {
        self.choices.as_ref().map(Vec::len)
    }

    fn decode(&self, u: f64) -> ParamValue {
        match self.kind {
            ParamKind::Float => ParamValue::Float(self.interpolate(u)),
            ParamKind::Integer => {
                let [a, b] = self.bounds.expect("validated");
                let v = self.interpolate(u).round().clamp(a, b);
                ParamValue::Int(v as i64)
            }
            ParamKind::Ordinal | ParamKind::Categorical => {
                let n = self.n_choices().expect("validated");
                ParamValue::Choice(bin_index(u, n))
            }
        }
    }

    fn interpolate(&self, u: f64) -> f64 {
        let [a, b] = self.bounds.expect("validated");
        if self.log_scale {
            let (la, lb) = (a.ln(), b.ln());
            (la + (lb - la) * u).exp().clamp(a, b)
        } else {
            (a + (b - a) * u).clamp(a, b)
        }
    }

    fn accepts(&self, value: &ParamValue) -> bool {
        match (self.kind, value) {
            (ParamKind::Float, ParamValue::Float(v)) => {
                let [a, b] = self.bounds.expect("validated");
                (a..=b).contains(v)
            }
            (ParamKind::Integer, ParamValue::Int(v)) => {
                let [a, b] = self.bounds.expect("validated");
                (a..=b).contains(&(*v as f64))
            }
            (ParamKind::Ordinal | ParamKind::Categorical, ParamValue::Choice(i)) => {
                *i < self.n_choices().expect("validated")
            }
            _ => false,
        }
    }
}

/// Bin index for `u` in `[0, 1]` split into `n` equal bins, closed on the right.
pub fn bin_index(u: f64, n: usize) -> usize {
    ((u * n as f64).floor() as usize).min(n - 1)
}

/// An ordered, validated list of parameter specs.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ParameterSpace {
    specs: Vec<ParameterSpec>,
}

impl ParameterSpace {
    pub fn new(specs: Vec<ParameterSpec>) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::InvalidSpace("at least one parameter required".into()));
        }
        let mut names = HashSet::new();
        for spec in &specs {
            spec.validate()?;
            if !names.insert(spec.name.as_str()) {
                return Err(Error::InvalidSpace(format!(
                    "duplicate parameter name `{}`",
                    spec.name
                )));
            }
        }
        Ok(Self { specs })
    }

    /// `dim` floats on `[0, 1]`, named `x0..`; handy for synthetic objectives.
    pub fn unit_box(dim: usize) -> Result<Self> {
        Self::new(
            (0..dim)
                .map(|i| ParameterSpec::float(format!("x{i}"), 0.0, 1.0))
                .collect(),
        )
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let specs: Vec<ParameterSpec> = serde_json::from_str(text)?;
        Self::new(specs)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.specs).expect("specs serialize")
    }

    pub fn dim(&self) -> usize {
        self.specs.len()
    }

    pub fn specs(&self) -> &[ParameterSpec] {
        &self.specs
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.specs.iter().position(|s| s.name == name)
    }

    pub fn decode(&self, u: &UnitVector) -> Result<NativeConfig> {
        self.decode_slice(u.as_slice())
    }

    /// Decodes a raw slice, rejecting components outside `[0, 1]`.
    pub fn decode_slice(&self, u: &[f64]) -> Result<NativeConfig> {
        if u.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: u.len(),
            });
        }
        let values = self
            .specs
            .iter()
            .zip(u)
            .enumerate()
            .map(|(dim, (spec, &ui))| {
                if !(0.0..=1.0).contains(&ui) {
                    return Err(Error::OutsideUnitCube { dim, value: ui });
                }
                Ok(spec.decode(ui))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(NativeConfig { values })
    }

    pub fn validate_config(&self, config: &NativeConfig) -> Result<()> {
        if config.values.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: config.values.len(),
            });
        }
        for (spec, value) in self.specs.iter().zip(&config.values) {
            if !spec.accepts(value) {
                return Err(Error::InvalidSpec {
                    name: spec.name.clone(),
                    reason: format!("value {value} violates the declared domain"),
                });
            }
        }
        Ok(())
    }

    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> UnitVector {
        UnitVector::sample(self.dim(), rng)
    }

    /// Native values rendered as strings, in spec order. Discrete values
    /// use their declared label.
    pub fn labels(&self, config: &NativeConfig) -> Vec<String> {
        self.specs
            .iter()
            .zip(&config.values)
            .map(|(spec, value)| match value {
                ParamValue::Choice(i) => spec
                    .choices
                    .as_ref()
                    .and_then(|c| c.get(*i))
                    .cloned()
                    .unwrap_or_else(|| i.to_string()),
                other => other.to_string(),
            })
            .collect()
    }

    /// `{name: value}` object used by the worker protocol.
    pub fn to_json_object(&self, config: &NativeConfig) -> serde_json::Map<String, serde_json::Value> {
        self.specs
            .iter()
            .zip(&config.values)
            .map(|(spec, value)| {
                let json = match value {
                    ParamValue::Float(v) => serde_json::json!(v),
                    ParamValue::Int(v) => serde_json::json!(v),
                    ParamValue::Choice(i) => serde_json::json!(spec.choices.as_ref().expect("validated")[*i]),
                };
                (spec.name.clone(), json)
            })
            .collect()
    }

    /// Inverse of [`ParameterSpace::to_json_object`].
    pub fn from_json_object(&self, object: &serde_json::Map<String, serde_json::Value>) -> Result<NativeConfig> {
        let values = self
            .specs
            .iter()
            .map(|spec| {
                let missing = || Error::InvalidSpec {
                    name: spec.name.clone(),
                    reason: "missing or mistyped in configuration".into(),
                };
                let raw = object.get(&spec.name).ok_or_else(missing)?;
                Ok(match spec.kind {
                    ParamKind::Float => ParamValue::Float(raw.as_f64().ok_or_else(missing)?),
                    ParamKind::Integer => ParamValue::Int(raw.as_i64().ok_or_else(missing)?),
                    ParamKind::Ordinal | ParamKind::Categorical => {
                        let label = match raw {
                            serde_json::Value::String(s) => s.clone(),
                            other => other.to_string(),
                        };
                        let choices = spec.choices.as_ref().expect("validated");
                        ParamValue::Choice(choices.iter().position(|c| *c == label).ok_or_else(missing)?)
                    }
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let config = NativeConfig { values };
        self.validate_config(&config)?;
        Ok(config)
    }
}

/// A native value for one dimension. Discrete parameters carry the index
/// into their choice list.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ParamValue {
    Float(f64),
    Int(i64),
    Choice(usize),
}

impl ParamValue {
    /// Numeric view; choices map to their index.
    pub fn as_f64(&self) -> f64 {
        match *self {
            ParamValue::Float(v) => v,
            ParamValue::Int(v) => v as f64,
            ParamValue::Choice(i) => i as f64,
        }
    }
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Float(v) => write!(f, "{v}"),
            ParamValue::Int(v) => write!(f, "{v}"),
            ParamValue::Choice(i) => write!(f, "#{i}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NativeConfig {
    pub values: Vec<ParamValue>,
}

/// A point in `[0, 1]^D`.
#[derive(Clone, Debug, PartialEq)]
pub struct UnitVector(Vec<f64>);

impl UnitVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some((dim, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::OutsideUnitCube { dim, value });
        }
        Ok(Self(values))
    }

    pub fn sample<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        Self((0..dim).map(|_| rng.random::<f64>()).collect())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Index<usize> for UnitVector {
    type Output = f64;

    fn index(&self, index: usize) -> &f64 {
        &self.0[index]
    }
}
