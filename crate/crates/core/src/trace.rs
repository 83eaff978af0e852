//! Append-only evaluation log shared by every optimizer, and its CSV form.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Why a configuration was evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    InitRandom,
    Promotion,
    VanillaEvolution,
    AlteredEvolution,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::InitRandom => "init_random",
            Role::Promotion => "promotion",
            Role::VanillaEvolution => "vanilla_evolution",
            Role::AlteredEvolution => "altered_evolution",
        }
    }

    pub fn is_evolution(self) -> bool {
        matches!(self, Role::VanillaEvolution | Role::AlteredEvolution)
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "init_random" => Role::InitRandom,
            "promotion" => Role::Promotion,
            "vanilla_evolution" => Role::VanillaEvolution,
            "altered_evolution" => Role::AlteredEvolution,
            other => return Err(Error::Parse(format!("unknown role `{other}`"))),
        })
    }
}

/// One row of the trace. `bracket`, `sh_bracket` and `rung` locate the
/// evaluation in the Hyperband schedule; standalone DE stores its generation
/// in `bracket`. `started`/`finished` are on the run's clock, which is the
/// simulated cost clock unless real workers are used.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub index: usize,
    pub job_id: u64,
    pub budget: f64,
    pub fitness: f64,
    pub cost: f64,
    pub cumulative_cost: f64,
    pub role: Role,
    pub bracket: usize,
    pub sh_bracket: usize,
    pub rung: usize,
    pub started: f64,
    pub finished: f64,
    pub failed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IncumbentRecord {
    pub cumulative_cost: f64,
    pub fitness: f64,
    pub genome: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunTrace {
    pub entries: Vec<TraceEntry>,
    pub incumbent_history: Vec<IncumbentRecord>,
}

impl RunTrace {
    pub fn total_cost(&self) -> f64 {
        self.entries.last().map_or(0.0, |e| e.cumulative_cost)
    }

    pub fn incumbent(&self) -> Option<&IncumbentRecord> {
        self.incumbent_history.last()
    }

    /// Records `fitness` as the new incumbent if it strictly improves on
    /// the current one. Returns whether it did.
    pub fn offer_incumbent(&mut self, cumulative_cost: f64, fitness: f64, genome: &[f64]) -> bool {
        let improves = match self.incumbent() {
            None => fitness < f64::INFINITY,
            Some(inc) => fitness < inc.fitness,
        };
        if improves {
            self.incumbent_history.push(IncumbentRecord {
                cumulative_cost,
                fitness,
                genome: genome.to_vec(),
            });
        }
        improves
    }

    /// Incumbent in force once `cost` has been spent.
    pub fn incumbent_at(&self, cost: f64) -> Option<&IncumbentRecord> {
        self.incumbent_history
            .iter()
            .take_while(|r| r.cumulative_cost <= cost)
            .last()
    }

    pub fn write_entries_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut csv = csv::Writer::from_writer(writer);
        for entry in &self.entries {
            csv.serialize(entry)?;
        }
        csv.flush()?;
        Ok(())
    }

    pub fn write_incumbents_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut csv = csv::Writer::from_writer(writer);
        csv.write_record(["cumulative_cost", "fitness", "genome"])?;
        for rec in &self.incumbent_history {
            let genome = rec
                .genome
                .iter()
                .map(f64::to_string)
                .collect::<Vec<_>>()
                .join(";");
            csv.write_record([
                rec.cumulative_cost.to_string(),
                rec.fitness.to_string(),
                genome,
            ])?;
        }
        csv.flush()?;
        Ok(())
    }

    pub fn read_csv<R1: Read, R2: Read>(entries: R1, incumbents: R2) -> Result<Self> {
        let entries = csv::Reader::from_reader(entries)
            .deserialize()
            .collect::<std::result::Result<Vec<TraceEntry>, _>>()?;
        let mut incumbent_history = Vec::new();
        for record in csv::Reader::from_reader(incumbents).records() {
            let record = record?;
            let field = |i: usize| {
                record
                    .get(i)
                    .ok_or_else(|| Error::Parse(format!("incumbent row missing column {i}")))
            };
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| Error::Parse(format!("bad number `{s}`: {e}")))
            };
            let genome_text = field(2)?;
            let genome = if genome_text.is_empty() {
                Vec::new()
            } else {
                genome_text.split(';').map(parse).collect::<Result<Vec<_>>>()?
            };
            incumbent_history.push(IncumbentRecord {
                cumulative_cost: parse(field(0)?)?,
                fitness: parse(field(1)?)?,
                genome,
            });
        }
        Ok(Self {
            entries,
            incumbent_history,
        })
    }
}
