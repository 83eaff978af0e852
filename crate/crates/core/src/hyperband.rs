//! Hyperband's schedule of successive-halving brackets.
//!
//! Bracket `iteration` uses depth `s = s_max - (iteration mod (s_max + 1))`
//! and starts `N = ceil((s_max + 1) / (s + 1) * eta^s)` configurations. Rung
//! `i` keeps `max(1, floor(N * eta^-i))` of them at budget
//! `b_max * eta^(i - s)`, so every bracket ends at `b_max`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

// Slack for float round-off in floor/ceil of ratios that are integral in
// exact arithmetic.
const ROUNDING_SLACK: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HbConfig {
    pub b_min: f64,
    pub b_max: f64,
    pub eta: f64,
}

impl HbConfig {
    pub fn new(b_min: f64, b_max: f64, eta: f64) -> Result<Self> {
        let cfg = Self { b_min, b_max, eta };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.b_min > 0.0 && self.b_min.is_finite()) {
            return Err(Error::config("b_min", format!("{} must be positive", self.b_min)));
        }
        if !(self.b_max.is_finite() && self.b_min < self.b_max) {
            return Err(Error::config(
                "b_max",
                format!("{} must exceed b_min = {}", self.b_max, self.b_min),
            ));
        }
        if !(self.eta > 1.0 && self.eta.is_finite()) {
            return Err(Error::config("eta", format!("{} must be > 1", self.eta)));
        }
        Ok(())
    }

    /// `floor(log_eta(b_max / b_min))`.
    pub fn s_max(&self) -> usize {
        let ratio = self.b_max / self.b_min;
        let mut s = 0;
        while self.eta.powi(s as i32 + 1) <= ratio * (1.0 + ROUNDING_SLACK) {
            s += 1;
        }
        s
    }

    /// Number of SH brackets in one Hyperband cycle.
    pub fn brackets_per_cycle(&self) -> usize {
        self.s_max() + 1
    }

    /// Budget of ladder level `level` (0 = lowest budget any bracket uses).
    pub fn level_budget(&self, level: usize) -> f64 {
        let down = self.s_max() - level;
        self.b_max / self.eta.powi(down as i32)
    }

    /// Ascending budgets of all ladder levels.
    pub fn budget_levels(&self) -> Vec<f64> {
        (0..=self.s_max()).map(|l| self.level_budget(l)).collect()
    }

    /// Ladder level of `budget`, matched with relative tolerance.
    pub fn level_of(&self, budget: f64) -> Option<usize> {
        self.budget_levels()
            .iter()
            .position(|&b| budgets_match(b, budget))
    }
}

pub fn budgets_match(a: f64, b: f64) -> bool {
    (a - b).abs() <= ROUNDING_SLACK * a.abs().max(b.abs())
}

/// The rungs of one successive-halving bracket.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BracketPlan {
    pub iteration: usize,
    pub s: usize,
    pub budgets: Vec<f64>,
    pub n_configs: Vec<usize>,
}

impl BracketPlan {
    pub fn n_rungs(&self) -> usize {
        self.budgets.len()
    }

    /// Ladder level of rung 0.
    pub fn first_level(&self, s_max: usize) -> usize {
        s_max - self.s
    }

    pub fn total_configs(&self) -> usize {
        self.n_configs.iter().sum()
    }

    pub fn total_cost(&self) -> f64 {
        self.budgets
            .iter()
            .zip(&self.n_configs)
            .map(|(b, &n)| b * n as f64)
            .sum()
    }
}

pub fn plan_bracket(cfg: &HbConfig, iteration: usize) -> BracketPlan {
    let s_max = cfg.s_max();
    let s = s_max - (iteration % (s_max + 1));
    let eta_s = cfg.eta.powi(s as i32);
    let n = ((s_max + 1) as f64 * eta_s / (s + 1) as f64 - ROUNDING_SLACK).ceil();
    let mut budgets = Vec::with_capacity(s + 1);
    let mut n_configs = Vec::with_capacity(s + 1);
    for i in 0..=s {
        let n_i = (n / cfg.eta.powi(i as i32) + ROUNDING_SLACK).floor() as usize;
        n_configs.push(n_i.max(1));
        budgets.push(cfg.level_budget(s_max - s + i));
    }
    BracketPlan {
        iteration,
        s,
        budgets,
        n_configs,
    }
}

/// One plan per bracket of a Hyperband cycle.
pub fn cycle_plans(cfg: &HbConfig) -> Vec<BracketPlan> {
    (0..cfg.brackets_per_cycle())
        .map(|it| plan_bracket(cfg, it))
        .collect()
}

/// For every budget level, the largest rung any bracket runs there.
/// Returned as `(budget, size)` pairs in ascending budget order.
pub fn subpop_sizes(cfg: &HbConfig) -> Vec<(f64, usize)> {
    let s_max = cfg.s_max();
    let mut sizes = vec![0usize; s_max + 1];
    for plan in cycle_plans(cfg) {
        let first = plan.first_level(s_max);
        for (i, &n) in plan.n_configs.iter().enumerate() {
            sizes[first + i] = sizes[first + i].max(n);
        }
    }
    cfg.budget_levels().into_iter().zip(sizes).collect()
}
