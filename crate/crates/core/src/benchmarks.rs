//! Objective functions: stochastic counting ones, a deterministic
//! multi-fidelity quadratic, and table lookups.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use rand::Rng;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::hyperband::budgets_match;
use crate::objective::{Evaluation, Objective};
use crate::rng::evaluation_stream;
use crate::space::{NativeConfig, ParamValue, ParameterSpace, ParameterSpec};

/// Counting ones with `n_cat` binary and `n_cont` Bernoulli-estimated
/// dimensions. At budget `b` each continuous dimension contributes the mean
/// of `b` Bernoulli(`x_j`) draws. Cost equals the budget.
#[derive(Clone, Debug)]
pub struct CountingOnes {
    pub n_cat: usize,
    pub n_cont: usize,
    pub noise_seed: u64,
    space: ParameterSpace,
}

impl CountingOnes {
    pub fn new(n_cat: usize, n_cont: usize, noise_seed: u64) -> Result<Self> {
        let specs = (0..n_cat)
            .map(|i| ParameterSpec::categorical(format!("cat_{i}"), &["0", "1"]))
            .chain((0..n_cont).map(|j| ParameterSpec::float(format!("cont_{j}"), 0.0, 1.0)))
            .collect::<Vec<_>>();
        if specs.is_empty() {
            return Err(Error::config("counting_ones", "needs at least one dimension"));
        }
        Ok(Self {
            n_cat,
            n_cont,
            noise_seed,
            space: ParameterSpace::new(specs)?,
        })
    }

    pub fn space(&self) -> &ParameterSpace {
        &self.space
    }

    pub fn dim(&self) -> usize {
        self.n_cat + self.n_cont
    }

    fn split<'a>(&self, x: &'a NativeConfig) -> Result<(&'a [ParamValue], &'a [ParamValue])> {
        if x.values.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: x.values.len(),
            });
        }
        Ok(x.values.split_at(self.n_cat))
    }

    fn bit(value: &ParamValue) -> Result<f64> {
        match value {
            ParamValue::Choice(i @ (0 | 1)) => Ok(*i as f64),
            ParamValue::Int(i @ (0 | 1)) => Ok(*i as f64),
            other => Err(Error::Objective(format!("{other} is not a bit"))),
        }
    }

    fn probability(value: &ParamValue) -> Result<f64> {
        match value {
            ParamValue::Float(p) if (0.0..=1.0).contains(p) => Ok(*p),
            other => Err(Error::Objective(format!("{other} is not a probability"))),
        }
    }

    /// Stochastic evaluation with an explicit rng.
    pub fn eval_with<R: Rng + ?Sized>(&self, x: &NativeConfig, budget: u64, rng: &mut R) -> Result<f64> {
        if budget < 1 {
            return Err(Error::config("budget", "counting ones needs at least one sample"));
        }
        let (cat, cont) = self.split(x)?;
        let mut total = 0.0;
        for v in cat {
            total += Self::bit(v)?;
        }
        for v in cont {
            let p = Self::probability(v)?;
            let hits = (0..budget).filter(|_| rng.random::<f64>() < p).count();
            total += hits as f64 / budget as f64;
        }
        Ok(-total)
    }

    /// Expected fitness: `-(sum of bits + sum of probabilities)`.
    pub fn noiseless(&self, x: &NativeConfig) -> Result<f64> {
        let (cat, cont) = self.split(x)?;
        let bits: f64 = cat.iter().map(Self::bit).sum::<Result<f64>>()?;
        let probs: f64 = cont.iter().map(Self::probability).sum::<Result<f64>>()?;
        Ok(-(bits + probs))
    }
}

/// `(f + d) / d`: 0 at the optimum, 1 at all zeros.
pub fn normalized_regret(fitness_noiseless: f64, d: usize) -> f64 {
    (fitness_noiseless + d as f64) / d as f64
}

impl Objective for CountingOnes {
    fn evaluate(&self, config: &NativeConfig, budget: f64, job_id: u64) -> Result<Evaluation> {
        let samples = budget.round();
        if !(samples >= 1.0) {
            return Err(Error::config("budget", format!("{budget} rounds below one sample")));
        }
        let mut rng = evaluation_stream(self.noise_seed, job_id);
        let fitness = self.eval_with(config, samples as u64, &mut rng)?;
        Ok(Evaluation {
            fitness,
            cost: budget,
        })
    }

    fn regret(&self, config: &NativeConfig) -> Option<f64> {
        self.noiseless(config)
            .ok()
            .map(|f| normalized_regret(f, self.dim()))
    }
}

/// `f_b(x) = sum (x_i - 0.5)^2 + (1 - b / b_max) * 0.05 * sum sin(10 x_i)`.
/// Exact at `b = b_max` with its optimum 0 at `x = 0.5`.
#[derive(Clone, Debug)]
pub struct MfQuadratic {
    pub b_max: f64,
    space: ParameterSpace,
}

impl MfQuadratic {
    pub fn new(dim: usize, b_max: f64) -> Result<Self> {
        Ok(Self {
            b_max,
            space: ParameterSpace::unit_box(dim)?,
        })
    }

    pub fn space(&self) -> &ParameterSpace {
        &self.space
    }

    pub fn value(&self, x: &[f64], budget: f64) -> f64 {
        let bias = 1.0 - budget / self.b_max;
        let quad: f64 = x.iter().map(|v| (v - 0.5).powi(2)).sum();
        let wiggle: f64 = x.iter().map(|v| (10.0 * v).sin() * 0.05).sum();
        quad + bias * wiggle
    }

    fn floats(config: &NativeConfig) -> Vec<f64> {
        config.values.iter().map(ParamValue::as_f64).collect()
    }
}

impl Objective for MfQuadratic {
    fn evaluate(&self, config: &NativeConfig, budget: f64, _job_id: u64) -> Result<Evaluation> {
        Ok(Evaluation {
            fitness: self.value(&Self::floats(config), budget),
            cost: budget,
        })
    }

    fn regret(&self, config: &NativeConfig) -> Option<f64> {
        Some(self.value(&Self::floats(config), self.b_max))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct TableCell {
    budget: f64,
    fitness: f64,
    cost: f64,
}

/// A lookup benchmark: `(configuration labels, budget) -> (fitness, cost)`.
///
/// CSV layout: one column per parameter (named after it, in space order)
/// followed by `budget,fitness` and an optional `cost` column. Without a
/// cost column the cost of a row is its budget. Every configuration must
/// appear at every budget in the table.
#[derive(Clone, Debug)]
pub struct TabularBenchmark {
    space: ParameterSpace,
    budgets: Vec<f64>,
    table: HashMap<Vec<String>, Vec<TableCell>>,
    best_at_max: f64,
}

#[derive(Deserialize)]
struct JsonRow {
    config: serde_json::Map<String, serde_json::Value>,
    budget: f64,
    fitness: f64,
    #[serde(default)]
    cost: Option<f64>,
}

fn scalar_label(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

struct Row {
    labels: Vec<String>,
    budget: f64,
    fitness: f64,
    cost: f64,
}

impl TabularBenchmark {
    /// Loads a `.csv` or `.json` table. Without a `space`, every parameter
    /// becomes an ordinal over its distinct values (numeric order when all
    /// values parse as numbers).
    pub fn load(path: impl AsRef<Path>, space: Option<ParameterSpace>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let is_json = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("json"));
        if is_json {
            Self::from_json_str(&text, space)
        } else {
            Self::from_csv_reader(text.as_bytes(), space)
        }
    }

    pub fn from_csv_reader<R: std::io::Read>(reader: R, space: Option<ParameterSpace>) -> Result<Self> {
        let mut csv = csv::Reader::from_reader(reader);
        let header: Vec<String> = csv.headers()?.iter().map(|h| h.trim().to_string()).collect();
        let has_cost = header.last().is_some_and(|h| h == "cost");
        let tail = if has_cost { 3 } else { 2 };
        if header.len() < tail + 1
            || header[header.len() - tail] != "budget"
            || header[header.len() - tail + 1] != "fitness"
        {
            return Err(Error::Parse(
                "header must be <params...>,budget,fitness[,cost]".into(),
            ));
        }
        let names = header[..header.len() - tail].to_vec();
        let mut rows = Vec::new();
        for (line, record) in csv.records().enumerate() {
            let record = record?;
            if record.len() != header.len() {
                return Err(Error::Parse(format!("row {} has {} fields", line + 1, record.len())));
            }
            let num = |i: usize| {
                record[i]
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("row {}: `{}`: {e}", line + 1, &record[i])))
            };
            let d = names.len();
            let budget = num(d)?;
            rows.push(Row {
                labels: (0..d).map(|i| record[i].trim().to_string()).collect(),
                budget,
                fitness: num(d + 1)?,
                cost: if has_cost { num(d + 2)? } else { budget },
            });
        }
        Self::build(names, rows, space)
    }

    pub fn from_json_str(text: &str, space: Option<ParameterSpace>) -> Result<Self> {
        let raw: Vec<JsonRow> = serde_json::from_str(text)?;
        let names: Vec<String> = match &space {
            Some(s) => s.specs().iter().map(|p| p.name.clone()).collect(),
            None => raw
                .first()
                .map(|r| r.config.keys().cloned().collect())
                .unwrap_or_default(),
        };
        let rows = raw
            .into_iter()
            .enumerate()
            .map(|(i, r)| {
                if r.config.len() != names.len() {
                    return Err(Error::Parse(format!("row {i} has {} parameters", r.config.len())));
                }
                let labels = names
                    .iter()
                    .map(|n| {
                        r.config
                            .get(n)
                            .map(scalar_label)
                            .ok_or_else(|| Error::Parse(format!("row {i} lacks `{n}`")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Row {
                    labels,
                    budget: r.budget,
                    fitness: r.fitness,
                    cost: r.cost.unwrap_or(r.budget),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::build(names, rows, space)
    }

    fn build(names: Vec<String>, rows: Vec<Row>, space: Option<ParameterSpace>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Parse("table has no rows".into()));
        }
        let space = match space {
            Some(space) => {
                let declared: Vec<&str> = space.specs().iter().map(|s| s.name.as_str()).collect();
                if declared != names.iter().map(String::as_str).collect::<Vec<_>>() {
                    return Err(Error::Parse(format!(
                        "table columns {names:?} do not match the space {declared:?}"
                    )));
                }
                space
            }
            None => infer_space(&names, &rows)?,
        };

        let mut budgets: Vec<f64> = Vec::new();
        for row in &rows {
            if !(row.budget > 0.0) || !row.fitness.is_finite() || !(row.cost > 0.0) {
                return Err(Error::Parse(format!(
                    "row {:?}: budget and cost must be positive, fitness finite",
                    row.labels
                )));
            }
            if !budgets.iter().any(|&b| budgets_match(b, row.budget)) {
                budgets.push(row.budget);
            }
        }
        budgets.sort_by(f64::total_cmp);

        let mut table: HashMap<Vec<String>, Vec<TableCell>> = HashMap::new();
        for row in rows {
            let cells = table.entry(row.labels.clone()).or_default();
            if cells.iter().any(|c| budgets_match(c.budget, row.budget)) {
                return Err(Error::Parse(format!(
                    "duplicate entry for {:?} at budget {}",
                    row.labels, row.budget
                )));
            }
            cells.push(TableCell {
                budget: row.budget,
                fitness: row.fitness,
                cost: row.cost,
            });
        }
        for (labels, cells) in &table {
            if cells.len() != budgets.len() {
                return Err(Error::Parse(format!(
                    "configuration {labels:?} is missing budgets ({} of {})",
                    cells.len(),
                    budgets.len()
                )));
            }
        }
        let b_max = *budgets.last().expect("non-empty");
        let best_at_max = table
            .values()
            .flat_map(|cells| cells.iter().filter(|c| budgets_match(c.budget, b_max)))
            .map(|c| c.fitness)
            .fold(f64::INFINITY, f64::min);
        Ok(Self {
            space,
            budgets,
            table,
            best_at_max,
        })
    }

    pub fn space(&self) -> &ParameterSpace {
        &self.space
    }

    /// Distinct budgets, ascending.
    pub fn budgets(&self) -> &[f64] {
        &self.budgets
    }

    /// Number of distinct configurations.
    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn lookup(&self, config: &NativeConfig, budget: f64) -> Result<Evaluation> {
        let labels = self.space.labels(config);
        let cells = self
            .table
            .get(&labels)
            .ok_or_else(|| Error::Lookup(format!("configuration {labels:?} is not in the table")))?;
        let cell = cells
            .iter()
            .find(|c| budgets_match(c.budget, budget))
            .ok_or_else(|| Error::Lookup(format!("budget {budget} is not in the table")))?;
        Ok(Evaluation {
            fitness: cell.fitness,
            cost: cell.cost,
        })
    }
}

fn infer_space(names: &[String], rows: &[Row]) -> Result<ParameterSpace> {
    let specs = names
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let distinct: BTreeSet<&str> = rows.iter().map(|r| r.labels[i].as_str()).collect();
            let mut choices: Vec<&str> = distinct.into_iter().collect();
            let numeric: Option<BTreeMap<usize, f64>> = choices
                .iter()
                .enumerate()
                .map(|(k, c)| c.parse::<f64>().ok().map(|v| (k, v)))
                .collect();
            if let Some(values) = numeric {
                let mut order: Vec<usize> = (0..choices.len()).collect();
                order.sort_by(|a, b| values[a].total_cmp(&values[b]));
                choices = order.into_iter().map(|k| choices[k]).collect();
            }
            ParameterSpec::ordinal(name.clone(), &choices)
        })
        .collect();
    ParameterSpace::new(specs)
}

impl Objective for TabularBenchmark {
    fn evaluate(&self, config: &NativeConfig, budget: f64, _job_id: u64) -> Result<Evaluation> {
        self.lookup(config, budget)
    }

    fn regret(&self, config: &NativeConfig) -> Option<f64> {
        let b_max = *self.budgets.last()?;
        self.lookup(config, b_max)
            .ok()
            .map(|e| e.fitness - self.best_at_max)
    }
}
