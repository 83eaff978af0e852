use crate::error::Result;
use crate::space::NativeConfig;

/// Outcome of one evaluation. Lower fitness is better.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub fitness: f64,
    pub cost: f64,
}

/// A multi-fidelity black-box objective.
///
/// `job_id` identifies the evaluation; stochastic objectives key their noise
/// on it so results do not depend on the order in which jobs run.
pub trait Objective: Send + Sync {
    fn evaluate(&self, config: &NativeConfig, budget: f64, job_id: u64) -> Result<Evaluation>;

    /// Regret of a configuration against the known optimum, if the
    /// objective has one.
    fn regret(&self, _config: &NativeConfig) -> Option<f64> {
        None
    }
}

impl<F> Objective for F
where
    F: Fn(&NativeConfig, f64) -> Result<Evaluation> + Send + Sync,
{
    fn evaluate(&self, config: &NativeConfig, budget: f64, _job_id: u64) -> Result<Evaluation> {
        self(config, budget)
    }
}
