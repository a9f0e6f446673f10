//! Experiment drivers behind the command-line tool: the gap histogram, the
//! cache-size sweep, single-scenario solves and run manifests.

pub mod gap;
pub mod sweep;

use serde::{Deserialize, Serialize};

use crate::milp::{Method, MilpOptions};
use crate::model::{Scenario, SearchParams};
use crate::nlr::{expected_nlr_monte_carlo, EvalError};
use crate::search::{bisect_lower_bound, esa, LowerBoundSolver, SearchError, SolveOutcome};

pub const MANIFEST_VERSION: u32 = 1;

/// What produced a set of output files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub version: u32,
    pub tool_version: String,
    pub command: String,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    /// Output paths relative to the manifest.
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value, seeds: Vec<u64>, outputs: Vec<String>) -> Self {
        RunManifest {
            version: MANIFEST_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config,
            seeds,
            outputs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeSummary {
    pub producer: String,
    pub delay: f64,
    pub exact_nlr: f64,
    pub lb_nlr: f64,
    pub feasible: bool,
    pub proven: bool,
    pub iterations: usize,
    pub solver_calls: usize,
}

impl From<&SolveOutcome> for OutcomeSummary {
    fn from(o: &SolveOutcome) -> Self {
        OutcomeSummary {
            producer: o.producer.to_string(),
            delay: o.delay,
            exact_nlr: o.exact_nlr,
            lb_nlr: o.lb_nlr,
            feasible: o.feasible,
            proven: o.proven,
            iterations: o.iterations,
            solver_calls: o.solver_calls,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingCheck {
    pub estimate: f64,
    pub std_error: f64,
    pub samples: usize,
}

/// Output of a single-scenario solve. Holds no timing, so identical inputs
/// give identical reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub method: Method,
    pub seed: u64,
    pub params: SearchParams,
    pub node_limit: usize,
    pub nlr_limit: f64,
    /// `None` when even `t_max` cannot meet the cap under the bound.
    pub start: Option<OutcomeSummary>,
    pub refined: Option<OutcomeSummary>,
    pub feasible: bool,
    pub sampling: Option<SamplingCheck>,
}

#[derive(Debug, thiserror::Error)]
pub enum SolveError {
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Bisection on the bound followed by ESA with the same method. The refined
/// outcome is returned alongside the report so its placement can be saved.
pub fn solve_scenario(
    scenario: &Scenario,
    params: &SearchParams,
    method: Method,
    seed: u64,
    options: MilpOptions,
    samples: usize,
) -> Result<(SolveReport, Option<SolveOutcome>), SolveError> {
    let node_limit = options.branch.node_limit;
    let mut solver = LowerBoundSolver::new(scenario, options, seed);
    let start = bisect_lower_bound(&mut solver, params, method)?;
    let refined = match &start {
        Some(s) => Some(esa(&mut solver, params, s, method)?),
        None => None,
    };
    let sampling = match (&refined, samples) {
        (Some(o), n) if n > 0 => {
            let mc = expected_nlr_monte_carlo(scenario, &o.placement, o.delay, n, seed)?;
            Some(SamplingCheck { estimate: mc.estimate, std_error: mc.std_error, samples: mc.samples })
        }
        _ => None,
    };
    let report = SolveReport {
        method,
        seed,
        params: *params,
        node_limit,
        nlr_limit: scenario.nlr_limit(),
        start: start.as_ref().map(OutcomeSummary::from),
        refined: refined.as_ref().map(OutcomeSummary::from),
        feasible: refined.as_ref().is_some_and(|o| o.feasible),
        sampling,
    };
    Ok((report, refined))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::{scenario, uniform_rates};
    use crate::scenario::{generate, GeneratorConfig};

    #[test]
    fn vacuous_cap_is_met_at_once() {
        let s = scenario(vec![1, 1], 1, uniform_rates(2, 0.1), vec![vec![1.0, 1.0]], vec![1], vec![2])
            .with_nlr_limit(1.0)
            .unwrap();
        let (report, refined) =
            solve_scenario(&s, &SearchParams::default(), Method::Exact, 0, MilpOptions::default(), 0).unwrap();
        assert!(report.feasible);
        assert_eq!(report.refined.unwrap().delay, 0.0);
        assert_eq!(refined.unwrap().iterations, 0);
    }

    #[test]
    fn isolated_empty_caches_are_infeasible() {
        let s = scenario(vec![0, 0], 1, uniform_rates(2, 0.0), vec![vec![1.0, 1.0]], vec![1], vec![2]);
        let (report, refined) =
            solve_scenario(&s, &SearchParams::default(), Method::Exact, 0, MilpOptions::default(), 0).unwrap();
        assert!(!report.feasible);
        assert!(report.start.is_none() && refined.is_none());
    }

    #[test]
    fn reports_repeat_exactly() {
        let config = GeneratorConfig { num_users: 3, num_files: 4, gamma_scale: 0.01, seed: 5, ..Default::default() };
        let s = generate(&config).unwrap();
        let run = || {
            let (r, _) = solve_scenario(&s, &SearchParams::default(), Method::RelaxRound, 9, MilpOptions::default(), 500)
                .unwrap();
            serde_json::to_string(&r).unwrap()
        };
        assert_eq!(run(), run());
    }
}
