//! Delay versus cache size: every method on every `(C, seed)` scenario.
//!
//! Each `(C, seed)` group is one scenario generated with that capacity and
//! seed; groups run concurrently and rows come back in `(C, seed, method)`
//! order whatever the worker count.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::milp::branch::BranchOptions;
use crate::milp::{Method, MilpOptions};
use crate::model::{ModelError, Scenario, SearchParams};
use crate::scenario::{generate, GeneratorConfig};
use crate::search::{
    baseline_delay, baseline_placement, bisect_lower_bound, esa, BaselineKind, LowerBoundSolver,
    SearchError, SolveOutcome,
};

/// Bumped whenever a results column changes meaning or position.
pub const RESULTS_CSV_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepMethod {
    LowerBound,
    EsaIlp,
    EsaRra,
    Popularity,
    Random,
}

impl SweepMethod {
    pub const ALL: [SweepMethod; 5] = [
        SweepMethod::LowerBound,
        SweepMethod::EsaIlp,
        SweepMethod::EsaRra,
        SweepMethod::Popularity,
        SweepMethod::Random,
    ];

    pub fn label(self) -> &'static str {
        match self {
            SweepMethod::LowerBound => "lower-bound",
            SweepMethod::EsaIlp => "esa-ilp",
            SweepMethod::EsaRra => "esa-rra",
            SweepMethod::Popularity => "popularity",
            SweepMethod::Random => "random",
        }
    }
}

impl fmt::Display for SweepMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for SweepMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SweepMethod::ALL
            .into_iter()
            .find(|m| m.label() == s)
            .ok_or_else(|| format!("unknown method {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub experiment: String,
    /// Capacity and seed are overridden per group.
    pub generator: GeneratorConfig,
    pub caches: Vec<u32>,
    pub seeds: Vec<u64>,
    pub methods: Vec<SweepMethod>,
    pub params: SearchParams,
    pub node_limit: usize,
}

impl SweepConfig {
    pub fn scenario_config(&self, cache: u32, seed: u64) -> GeneratorConfig {
        GeneratorConfig { cache_capacity: cache, seed, ..self.generator.clone() }
    }

    pub fn milp_options(&self) -> MilpOptions {
        MilpOptions { branch: BranchOptions { node_limit: self.node_limit, ..Default::default() } }
    }

    pub fn groups(&self) -> Vec<(u32, u64)> {
        self.caches.iter().flat_map(|&c| self.seeds.iter().map(move |&s| (c, s))).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    /// A delay meeting the method's own criterion was found.
    Solved,
    /// No window up to `t_max` works; an ESA row keeps its last window.
    Infeasible,
    Error,
}

/// One results row. Everything except `wall_ms` is reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub experiment: String,
    pub method: SweepMethod,
    pub cache: u32,
    pub seed: u64,
    pub status: RunStatus,
    pub delay: Option<f64>,
    pub exact_nlr: Option<f64>,
    pub lb_nlr: Option<f64>,
    pub feasible: Option<bool>,
    pub proven: Option<bool>,
    pub iterations: Option<usize>,
    pub solver_calls: Option<usize>,
    pub wall_ms: f64,
    pub detail: String,
}

impl RunRow {
    fn blank(config: &SweepConfig, method: SweepMethod, cache: u32, seed: u64) -> Self {
        RunRow {
            experiment: config.experiment.clone(),
            method,
            cache,
            seed,
            status: RunStatus::Infeasible,
            delay: None,
            exact_nlr: None,
            lb_nlr: None,
            feasible: None,
            proven: None,
            iterations: None,
            solver_calls: None,
            wall_ms: 0.0,
            detail: String::new(),
        }
    }

    fn fill(&mut self, outcome: &SolveOutcome, solved: bool) {
        self.status = if solved { RunStatus::Solved } else { RunStatus::Infeasible };
        self.delay = Some(outcome.delay);
        self.exact_nlr = Some(outcome.exact_nlr);
        self.lb_nlr = Some(outcome.lb_nlr);
        self.feasible = Some(outcome.feasible);
        self.proven = Some(outcome.proven);
        self.iterations = Some(outcome.iterations);
        self.solver_calls = Some(outcome.solver_calls);
    }

    /// Delay used in means: the recorded delay when solved, `t_max` when the
    /// method found nothing, `None` for errors.
    pub fn censored_delay(&self, t_max: f64) -> Option<f64> {
        match self.status {
            RunStatus::Solved => self.delay,
            RunStatus::Infeasible => Some(t_max),
            RunStatus::Error => None,
        }
    }

    /// The row with its timing column cleared.
    pub fn golden(&self) -> RunRow {
        RunRow { wall_ms: 0.0, ..self.clone() }
    }
}

type Stage = (Result<Option<SolveOutcome>, SearchError>, f64);

fn timed<T>(work: impl FnOnce() -> T) -> (T, f64) {
    let clock = Instant::now();
    let out = work();
    (out, clock.elapsed().as_secs_f64() * 1e3)
}

/// Runs the requested methods on one scenario.
///
/// Stages always run in the same order (exact bisection, its ESA, rounded
/// bisection, its ESA, baselines) so the rounding draws a row sees depend
/// only on the scenario and seed.
pub fn run_group(config: &SweepConfig, scenario: &Scenario, cache: u32, seed: u64) -> Vec<RunRow> {
    let wants = |m: SweepMethod| config.methods.contains(&m);
    let params = &config.params;
    let mut solver = LowerBoundSolver::new(scenario, config.milp_options(), seed);

    let mut chain = |method: Method, want_start: bool, want_esa: bool| -> (Option<Stage>, Option<Stage>) {
        if !(want_start || want_esa) {
            return (None, None);
        }
        let (start, start_ms) = timed(|| bisect_lower_bound(&mut solver, params, method));
        let refined = want_esa.then(|| {
            let (result, ms) = timed(|| match &start {
                Ok(Some(s)) => esa(&mut solver, params, s, method).map(Some),
                Ok(None) => Ok(None),
                Err(e) => Err(e.clone()),
            });
            (result, start_ms + ms)
        });
        (Some((start, start_ms)), refined)
    };
    let (lower, esa_ilp) = chain(Method::Exact, wants(SweepMethod::LowerBound), wants(SweepMethod::EsaIlp));
    let (_, esa_rra) = chain(Method::RelaxRound, false, wants(SweepMethod::EsaRra));
    let baseline = |kind| {
        timed(|| {
            let placement = baseline_placement(scenario, kind, seed);
            baseline_delay(scenario, &placement, params, kind)
        })
    };
    let popularity = wants(SweepMethod::Popularity).then(|| baseline(BaselineKind::Popularity));
    let random = wants(SweepMethod::Random).then(|| baseline(BaselineKind::Random));

    config
        .methods
        .iter()
        .map(|&method| {
            let stage = match method {
                SweepMethod::LowerBound => &lower,
                SweepMethod::EsaIlp => &esa_ilp,
                SweepMethod::EsaRra => &esa_rra,
                SweepMethod::Popularity => &popularity,
                SweepMethod::Random => &random,
            };
            let (result, ms) = stage.as_ref().expect("requested stages ran");
            let mut row = RunRow::blank(config, method, cache, seed);
            row.wall_ms = *ms;
            match result {
                Ok(Some(outcome)) => {
                    let esa_row = matches!(method, SweepMethod::EsaIlp | SweepMethod::EsaRra);
                    row.fill(outcome, !esa_row || outcome.feasible);
                }
                Ok(None) => row.detail = "no window up to t_max meets the cap".into(),
                Err(e) => {
                    row.status = RunStatus::Error;
                    row.detail = e.to_string();
                }
            }
            row
        })
        .collect()
}

/// Builds the scenario of one group.
pub fn group_scenario(config: &SweepConfig, cache: u32, seed: u64) -> Result<Scenario, ModelError> {
    generate(&config.scenario_config(cache, seed))
}

/// Runs every group concurrently; rows come back in group order.
pub fn run_sweep(config: &SweepConfig) -> Result<Vec<RunRow>, ModelError> {
    config.params.validate()?;
    config.generator.validate()?;
    let groups = config.groups();
    let scenarios: Vec<Scenario> = groups
        .iter()
        .map(|&(c, s)| group_scenario(config, c, s))
        .collect::<Result<_, _>>()?;
    let rows = groups
        .par_iter()
        .zip(&scenarios)
        .map(|(&(c, s), scenario)| run_group(config, scenario, c, s))
        .collect::<Vec<_>>();
    Ok(rows.into_iter().flatten().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub experiment: String,
    pub method: SweepMethod,
    pub cache: u32,
    pub runs: usize,
    pub solved: usize,
    pub errors: usize,
    /// Mean of [`RunRow::censored_delay`].
    pub mean_delay: Option<f64>,
    pub mean_exact_nlr: Option<f64>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Per `(C, method)` means, in config order.
pub fn aggregate(config: &SweepConfig, rows: &[RunRow]) -> Vec<AggregateRow> {
    let t_max = config.params.t_max;
    config
        .caches
        .iter()
        .flat_map(|&cache| config.methods.iter().map(move |&method| (cache, method)))
        .map(|(cache, method)| {
            let group: Vec<&RunRow> =
                rows.iter().filter(|r| r.cache == cache && r.method == method).collect();
            AggregateRow {
                experiment: config.experiment.clone(),
                method,
                cache,
                runs: group.len(),
                solved: group.iter().filter(|r| r.status == RunStatus::Solved).count(),
                errors: group.iter().filter(|r| r.status == RunStatus::Error).count(),
                mean_delay: mean(group.iter().filter_map(|r| r.censored_delay(t_max))),
                mean_exact_nlr: mean(group.iter().filter_map(|r| r.exact_nlr)),
            }
        })
        .collect()
}

pub fn write_csv<W: Write, T: Serialize>(rows: &[T], out: W) -> csv::Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_rows<R: Read>(input: R) -> csv::Result<Vec<RunRow>> {
    csv::Reader::from_reader(input).deserialize().collect()
}

/// A stored row that a rerun did not reproduce.
#[derive(Debug, Clone, PartialEq)]
pub struct Mismatch {
    pub stored: RunRow,
    pub recomputed: Option<RunRow>,
}

/// Reruns the groups that `stored` covers, using `load` to obtain each
/// group's scenario, and reports rows whose reproducible columns differ.
pub fn verify_rows<E>(
    config: &SweepConfig,
    stored: &[RunRow],
    load: impl Fn(u32, u64) -> Result<Scenario, E> + Sync,
) -> Result<Vec<Mismatch>, E>
where
    E: Send,
{
    let mut groups: Vec<(u32, u64)> = stored.iter().map(|r| (r.cache, r.seed)).collect();
    groups.dedup();
    let reruns: Vec<Vec<RunRow>> = groups
        .par_iter()
        .map(|&(c, s)| load(c, s).map(|scenario| run_group(config, &scenario, c, s)))
        .collect::<Result<_, E>>()?;
    let fresh: Vec<RunRow> = reruns.into_iter().flatten().collect();
    Ok(stored
        .iter()
        .filter_map(|row| {
            let twin = fresh
                .iter()
                .find(|r| r.cache == row.cache && r.seed == row.seed && r.method == row.method);
            match twin {
                Some(t) if t.golden() == row.golden() => None,
                _ => Some(Mismatch { stored: row.clone(), recomputed: twin.cloned() }),
            }
        })
        .collect())
}
