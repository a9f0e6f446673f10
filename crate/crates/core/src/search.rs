//! Delay searches: bisection on the optimized lower bound, the ESA refinement
//! toward a placement that meets the NLR cap under the exact evaluator, and
//! the conventional baselines.

use std::collections::HashMap;
use std::fmt;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::milp::{optimize_lower_bound, Method, MilpOptions, MilpSolution, SolverError};
use crate::model::{ModelError, Placement, Scenario, SearchParams};
use crate::nlr::{expected_nlr_unchecked, lower_bound_nlr_unchecked};

/// Slack on every comparison against the NLR cap.
pub const FEASIBILITY_SLACK: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SearchError {
    #[error(transparent)]
    Params(#[from] ModelError),
    #[error("solver failed at T = {window}: {source}")]
    Solver {
        window: f64,
        #[source]
        source: SolverError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineKind {
    Popularity,
    Random,
}

impl BaselineKind {
    pub fn label(self) -> &'static str {
        match self {
            BaselineKind::Popularity => "popularity",
            BaselineKind::Random => "random",
        }
    }
}

/// Which procedure produced an outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "stage", content = "method")]
pub enum Producer {
    LowerBound(Method),
    Esa(Method),
    Baseline(BaselineKind),
}

impl fmt::Display for Producer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Producer::LowerBound(Method::Exact) => f.write_str("lower-bound"),
            Producer::LowerBound(Method::RelaxRound) => f.write_str("lower-bound-rra"),
            Producer::Esa(Method::Exact) => f.write_str("esa-ilp"),
            Producer::Esa(Method::RelaxRound) => f.write_str("esa-rra"),
            Producer::Baseline(kind) => f.write_str(kind.label()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOutcome {
    pub delay: f64,
    pub placement: Placement,
    pub exact_nlr: f64,
    pub lb_nlr: f64,
    /// `exact_nlr ≤ R' + 1e-9`.
    pub feasible: bool,
    pub producer: Producer,
    /// Bisection probes (endpoints excluded) or ESA loop iterations.
    pub iterations: usize,
    /// Placement optimizations actually run, cache hits excluded.
    pub solver_calls: usize,
    /// False if any optimization behind this outcome stopped at its node budget.
    pub proven: bool,
}

impl SolveOutcome {
    fn assemble(
        scenario: &Scenario,
        delay: f64,
        placement: Placement,
        producer: Producer,
        iterations: usize,
        solver_calls: usize,
        proven: bool,
    ) -> Self {
        let exact_nlr = expected_nlr_unchecked(scenario, &placement, delay).total;
        let lb_nlr = lower_bound_nlr_unchecked(scenario, &placement, delay).total;
        SolveOutcome {
            delay,
            feasible: exact_nlr <= scenario.nlr_limit() + FEASIBILITY_SLACK,
            placement,
            exact_nlr,
            lb_nlr,
            producer,
            iterations,
            solver_calls,
            proven,
        }
    }
}

/// Result of [`bisect_threshold`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bisection {
    pub point: f64,
    /// Oracle calls strictly inside the interval.
    pub probes: usize,
    /// Oracle calls at `t_min` and `t_max`.
    pub endpoint_calls: usize,
}

/// Finds where a nonincreasing `oracle` crosses `limit` on `[t_min, t_max]`.
///
/// Returns `t_min` if the oracle already meets the limit there and `None` if
/// it fails at `t_max`. Otherwise the bracket `oracle(low) > limit ≥
/// oracle(high)` is halved until narrower than the tolerance, and its midpoint
/// is returned.
pub fn bisect_threshold<E>(
    params: &SearchParams,
    limit: f64,
    mut oracle: impl FnMut(f64) -> Result<f64, E>,
) -> Result<Option<Bisection>, E> {
    let meets = |v: f64| v <= limit + FEASIBILITY_SLACK;
    if meets(oracle(params.t_min)?) {
        return Ok(Some(Bisection { point: params.t_min, probes: 0, endpoint_calls: 1 }));
    }
    if !meets(oracle(params.t_max)?) {
        return Ok(None);
    }
    let (mut low, mut high) = (params.t_min, params.t_max);
    let mut probes = 0;
    while high - low > params.tolerance {
        let mid = 0.5 * (low + high);
        probes += 1;
        if meets(oracle(mid)?) {
            high = mid;
        } else {
            low = mid;
        }
    }
    Ok(Some(Bisection { point: 0.5 * (low + high), probes, endpoint_calls: 2 }))
}

/// Runs `optimize_lower_bound` for one scenario, caching exact results by
/// window and drawing a fresh rounding seed per relax-round call.
pub struct LowerBoundSolver<'a> {
    scenario: &'a Scenario,
    options: MilpOptions,
    seed: u64,
    memo: HashMap<u64, MilpSolution>,
    draws: u64,
    calls: usize,
}

impl<'a> LowerBoundSolver<'a> {
    pub fn new(scenario: &'a Scenario, options: MilpOptions, seed: u64) -> Self {
        LowerBoundSolver { scenario, options, seed, memo: HashMap::new(), draws: 0, calls: 0 }
    }

    pub fn scenario(&self) -> &'a Scenario {
        self.scenario
    }

    /// Optimizations run so far.
    pub fn calls(&self) -> usize {
        self.calls
    }

    pub fn solve(&mut self, window: f64, method: Method) -> Result<MilpSolution, SearchError> {
        if method == Method::Exact {
            if let Some(hit) = self.memo.get(&window.to_bits()) {
                return Ok(hit.clone());
            }
        }
        let seed = match method {
            Method::Exact => 0,
            Method::RelaxRound => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                rng.set_stream(self.draws);
                self.draws += 1;
                rng.next_u64()
            }
        };
        self.calls += 1;
        let solution = optimize_lower_bound(self.scenario, window, method, seed, &self.options)
            .map_err(|source| SearchError::Solver { window, source })?;
        if method == Method::Exact {
            self.memo.insert(window.to_bits(), solution.clone());
        }
        Ok(solution)
    }
}

/// Bisection for the smallest window whose optimized lower bound meets the
/// cap, `None` if even `t_max` fails.
pub fn bisect_lower_bound(
    solver: &mut LowerBoundSolver<'_>,
    params: &SearchParams,
    method: Method,
) -> Result<Option<SolveOutcome>, SearchError> {
    params.validate()?;
    let limit = solver.scenario.nlr_limit();
    let calls_before = solver.calls;
    let mut proven = true;
    let found = bisect_threshold(params, limit, |t| {
        let s = solver.solve(t, method)?;
        proven &= s.optimal;
        Ok::<_, SearchError>(s.objective)
    })?;
    let Some(found) = found else { return Ok(None) };
    let solution = solver.solve(found.point, method)?;
    Ok(Some(SolveOutcome::assemble(
        solver.scenario,
        found.point,
        solution.placement,
        Producer::LowerBound(method),
        found.probes,
        solver.calls - calls_before,
        proven && solution.optimal,
    )))
}

/// Advances the window from `start` in steps of η, re-optimizing at each new
/// window with `method`, until the exact NLR meets the cap or η ≤ ε. A step
/// past `t_max` is retracted and η halved.
pub fn esa(
    solver: &mut LowerBoundSolver<'_>,
    params: &SearchParams,
    start: &SolveOutcome,
    method: Method,
) -> Result<SolveOutcome, SearchError> {
    params.validate()?;
    let scenario = solver.scenario;
    let limit = scenario.nlr_limit() + FEASIBILITY_SLACK;
    let calls_before = solver.calls;
    let mut proven = start.proven;
    let mut window = start.delay;
    let mut placement = start.placement.clone();
    let mut step = params.step;
    let mut iterations = 0;
    while expected_nlr_unchecked(scenario, &placement, window).total > limit
        && step > params.tolerance
    {
        iterations += 1;
        window += step;
        if window > params.t_max {
            window -= step;
            step /= 2.0;
        }
        let solution = solver.solve(window, method)?;
        proven &= solution.optimal;
        placement = solution.placement;
    }
    Ok(SolveOutcome::assemble(
        scenario,
        window,
        placement,
        Producer::Esa(method),
        iterations,
        solver.calls - calls_before,
        proven,
    ))
}

/// Conventional placements: greedy by popularity, or uniformly random cells.
pub fn baseline_placement(scenario: &Scenario, kind: BaselineKind, seed: u64) -> Placement {
    let (files, users) = (scenario.num_files(), scenario.num_users());
    let mut rows = vec![vec![0u32; users]; files];
    let mut spare_budget: Vec<u32> = (0..files).map(|f| scenario.max_segments(f)).collect();
    match kind {
        BaselineKind::Popularity => {
            for i in 0..users {
                let mut order: Vec<usize> = (0..files).collect();
                order.sort_by(|&a, &b| {
                    scenario.popularity(b, i).total_cmp(&scenario.popularity(a, i)).then(a.cmp(&b))
                });
                let mut room = scenario.cache_capacity(i);
                for f in order {
                    let take = scenario.recover_segments(f).min(room).min(spare_budget[f]);
                    rows[f][i] = take;
                    room -= take;
                    spare_budget[f] -= take;
                }
            }
        }
        BaselineKind::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut room: Vec<u32> = (0..users).map(|i| scenario.cache_capacity(i)).collect();
            loop {
                let open: Vec<(usize, usize)> = (0..files)
                    .flat_map(|f| (0..users).map(move |i| (f, i)))
                    .filter(|&(f, i)| {
                        room[i] > 0 && spare_budget[f] > 0 && rows[f][i] < scenario.recover_segments(f)
                    })
                    .collect();
                if open.is_empty() {
                    break;
                }
                let (f, i) = open[rng.random_range(0..open.len())];
                rows[f][i] += 1;
                room[i] -= 1;
                spare_budget[f] -= 1;
            }
        }
    }
    Placement::from_rows(rows).expect("rows built with scenario dimensions")
}

/// Smallest window (within ε, on the feasible side) at which `placement`
/// meets the cap under the exact evaluator; `None` if `t_max` fails.
pub fn baseline_delay(
    scenario: &Scenario,
    placement: &Placement,
    params: &SearchParams,
    kind: BaselineKind,
) -> Result<Option<SolveOutcome>, SearchError> {
    params.validate()?;
    let limit = scenario.nlr_limit();
    let nlr = |t: f64| Ok::<_, SearchError>(expected_nlr_unchecked(scenario, placement, t).total);
    let Some(found) = bisect_threshold(params, limit, nlr)? else { return Ok(None) };
    let delay = if found.probes == 0 {
        found.point
    } else {
        // The midpoint may sit on the infeasible side; report the bracket top.
        (found.point + 0.5 * tolerance_width(params, found.probes)).min(params.t_max)
    };
    Ok(Some(SolveOutcome::assemble(
        scenario,
        delay,
        placement.clone(),
        Producer::Baseline(kind),
        found.probes,
        0,
        true,
    )))
}

/// Final bracket width after `probes` halvings of `[t_min, t_max]`.
fn tolerance_width(params: &SearchParams, probes: usize) -> f64 {
    (params.t_max - params.t_min) / 2f64.powi(probes as i32)
}
