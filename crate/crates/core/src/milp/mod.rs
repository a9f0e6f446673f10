//! The linearized caching problem as a mixed-integer program.
//!
//! Level indicators `y^k_fi` (one-hot over `k = 0..=S^f_rec`) replace the
//! counts `x_fi`, which turns `E[min(B·M_ij, x_fj)]` into the linear form
//! `Σ_k e^k_ij y^k_fj`. Auxiliaries `N'_fi ≥ max(N_fi, 0)` carry the
//! objective.

pub mod branch;
mod local;
pub mod lp;

use std::fmt::{self, Write as _};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::contact::expected_truncated_transfer;
use crate::model::{Placement, Scenario};
use crate::nlr::lower_bound_nlr_unchecked;
use local::CountState;

pub use branch::{solve_ilp, BranchOptions, IlpOutcome};
pub use lp::{
    solve_lp, solve_lp_from, solve_lp_with_bounds, Basis, Bounds, LinearProgram, LpSolution, LpStatus, Row,
    SimplexOptions, SolverError,
};

/// Fractional level values below this are treated as zero when sampling.
const SAMPLE_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Exact,
    RelaxRound,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Exact => "exact",
            Method::RelaxRound => "relax-round",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exact" | "ilp" => Ok(Method::Exact),
            "relax-round" | "rra" => Ok(Method::RelaxRound),
            other => Err(format!("unknown method `{other}` (expected exact or relax-round)")),
        }
    }
}

/// `e^k_ij = E[min(B·M_ij, k)]` for every ordered pair and level.
#[derive(Debug, Clone)]
struct TransferTable {
    users: usize,
    levels: usize,
    values: Vec<f64>,
}

impl TransferTable {
    fn new(scenario: &Scenario, window: f64) -> Self {
        let users = scenario.num_users();
        let levels = scenario.max_recover_segments() as usize + 1;
        let mut values = vec![0.0; users * users * levels];
        for i in 0..users {
            for j in 0..users {
                if i == j {
                    continue;
                }
                let mean = scenario.contact_rate(i, j) * window;
                for k in 1..levels {
                    values[(i * users + j) * levels + k] =
                        expected_truncated_transfer(mean, scenario.contact_budget(), k as u32)
                            .expect("validated scenario and window");
                }
            }
        }
        TransferTable {
            users,
            levels,
            values,
        }
    }

    fn get(&self, i: usize, j: usize, k: u32) -> f64 {
        self.values[(i * self.users + j) * self.levels + k as usize]
    }
}

/// Formulation of the lower-bound placement problem at one window `T`.
#[derive(Debug, Clone)]
pub struct AnocpModel {
    program: LinearProgram,
    window: f64,
    num_files: usize,
    num_users: usize,
    recover: Vec<u32>,
    level_offset: Vec<usize>,
    aux_offset: usize,
    transfer: TransferTable,
}

/// Builds the model for `scenario` at window `window` (which must be ≥ 0).
pub fn build_anocp(scenario: &Scenario, window: f64) -> AnocpModel {
    assert!(window.is_finite() && window >= 0.0, "window must be finite and nonnegative");
    let files = scenario.num_files();
    let users = scenario.num_users();
    let recover: Vec<u32> = (0..files).map(|f| scenario.recover_segments(f)).collect();
    let transfer = TransferTable::new(scenario, window);

    let mut program = LinearProgram::new();
    let mut level_offset = Vec::with_capacity(files);
    for &rec in &recover {
        level_offset.push(program.num_columns());
        for _ in 0..users * (rec as usize + 1) {
            program.add_column(0.0, Bounds::unit(), true);
        }
    }
    let aux_offset = program.num_columns();
    for (f, &rec) in recover.iter().enumerate() {
        for i in 0..users {
            let weight = scenario.popularity(f, i) / (users as f64 * f64::from(rec));
            program.add_column(weight, Bounds::at_least(0.0), false);
        }
    }

    let mut model = AnocpModel {
        program,
        window,
        num_files: files,
        num_users: users,
        recover,
        level_offset,
        aux_offset,
        transfer,
    };

    // N'_fi − N_fi ≥ 0 written as N'_fi + Σ e·y + Σ k·y ≥ S_rec.
    for f in 0..files {
        let rec = model.recover[f];
        for i in 0..users {
            let mut entries = vec![(model.aux_column(f, i), 1.0)];
            for j in 0..users {
                for k in 1..=rec {
                    let coefficient = -model.n_coefficient(f, i, j, k);
                    entries.push((model.level_column(f, j, k), coefficient));
                }
            }
            model.program.add_row(entries, Bounds::at_least(f64::from(rec)));
        }
    }
    for f in 0..files {
        for i in 0..users {
            let entries = (0..=model.recover[f])
                .map(|k| (model.level_column(f, i, k), 1.0))
                .collect();
            model.program.add_row(entries, Bounds::exactly(1.0));
            let set = (0..=model.recover[f]).map(|k| model.level_column(f, i, k)).collect();
            model.program.add_level_set(set);
        }
    }
    for i in 0..users {
        let entries = (0..files)
            .flat_map(|f| (1..=model.recover[f]).map(move |k| (f, k)))
            .map(|(f, k)| (model.level_column(f, i, k), f64::from(k)))
            .collect();
        let cap = f64::from(scenario.cache_capacity(i));
        model.program.add_row(entries, Bounds::at_most(cap));
    }
    for f in 0..files {
        let entries = (0..users)
            .flat_map(|i| (1..=model.recover[f]).map(move |k| (i, k)))
            .map(|(i, k)| (model.level_column(f, i, k), f64::from(k)))
            .collect();
        let max = f64::from(scenario.max_segments(f));
        model.program.add_row(entries, Bounds::at_most(max));
    }
    model
}

impl AnocpModel {
    pub fn program(&self) -> &LinearProgram {
        &self.program
    }

    pub fn program_mut(&mut self) -> &mut LinearProgram {
        &mut self.program
    }

    /// Row index of the segment budget row for `file`.
    pub fn budget_row(&self, file: usize) -> usize {
        2 * self.num_files * self.num_users + self.num_users + file
    }

    pub fn window(&self) -> f64 {
        self.window
    }

    pub fn num_files(&self) -> usize {
        self.num_files
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_variables(&self) -> usize {
        self.program.num_columns()
    }

    /// Column of `y^k_fi`.
    pub fn level_column(&self, file: usize, user: usize, level: u32) -> usize {
        debug_assert!(level <= self.recover[file]);
        self.level_offset[file] + user * (self.recover[file] as usize + 1) + level as usize
    }

    /// Column of `N'_fi`.
    pub fn aux_column(&self, file: usize, user: usize) -> usize {
        self.aux_offset + file * self.num_users + user
    }

    /// Coefficient of `y^k_fj` inside `N_fi`: `−k` on the diagonal, `−e^k_ij` elsewhere.
    pub fn n_coefficient(&self, file: usize, user: usize, other: usize, level: u32) -> f64 {
        debug_assert!(level <= self.recover[file]);
        if user == other {
            -f64::from(level)
        } else {
            -self.transfer.get(user, other, level)
        }
    }

    /// Column values encoding `placement`, with each `N'_fi` at `max(N_fi, 0)`.
    pub fn encode(&self, placement: &Placement) -> Vec<f64> {
        let mut values = vec![0.0; self.num_variables()];
        for f in 0..self.num_files {
            let row = placement.file_row(f);
            for i in 0..self.num_users {
                values[self.level_column(f, i, row[i])] = 1.0;
                let mut n = f64::from(self.recover[f]);
                for (j, &x) in row.iter().enumerate() {
                    n += self.n_coefficient(f, i, j, x);
                }
                values[self.aux_column(f, i)] = n.max(0.0);
            }
        }
        values
    }

    /// Reads the placement off integral level values (largest `y^k` per pair).
    pub fn decode(&self, values: &[f64]) -> Placement {
        let mut counts = Vec::with_capacity(self.num_files * self.num_users);
        for f in 0..self.num_files {
            for i in 0..self.num_users {
                let best = (0..=self.recover[f])
                    .max_by(|&a, &b| {
                        values[self.level_column(f, i, a)]
                            .partial_cmp(&values[self.level_column(f, i, b)])
                            .unwrap()
                            .then(b.cmp(&a))
                    })
                    .unwrap_or(0);
                counts.push(best);
            }
        }
        Placement::from_flat(self.num_files, self.num_users, counts)
    }

    /// Writes the model in CPLEX LP text format.
    pub fn to_lp_format(&self) -> String {
        let mut names = vec![String::new(); self.num_variables()];
        for f in 0..self.num_files {
            for i in 0..self.num_users {
                for k in 0..=self.recover[f] {
                    names[self.level_column(f, i, k)] = format!("y_{f}_{i}_{k}");
                }
                names[self.aux_column(f, i)] = format!("n_{f}_{i}");
            }
        }
        let mut row_names = Vec::with_capacity(self.program.num_rows());
        for prefix in ["nlr", "sel"] {
            for f in 0..self.num_files {
                for i in 0..self.num_users {
                    row_names.push(format!("{prefix}_{f}_{i}"));
                }
            }
        }
        row_names.extend((0..self.num_users).map(|i| format!("cap_{i}")));
        row_names.extend((0..self.num_files).map(|f| format!("seg_{f}")));

        let mut out = String::new();
        let _ = writeln!(out, "\\ lower-bound placement model, window {}", self.window);
        out.push_str("Minimize\n obj:");
        let objective: Vec<(usize, f64)> = self
            .program
            .cost()
            .iter()
            .copied()
            .enumerate()
            .filter(|&(_, c)| c != 0.0)
            .collect();
        write_terms(&mut out, &objective, &names);
        out.push_str("\nSubject To\n");
        for (row, name) in self.program.rows().iter().zip(&row_names) {
            let _ = write!(out, " {name}:");
            write_terms(&mut out, &row.entries, &names);
            let b = row.bounds;
            if b.lower == b.upper {
                let _ = writeln!(out, " = {}", b.lower);
            } else if b.lower.is_finite() {
                let _ = writeln!(out, " >= {}", b.lower);
            } else {
                let _ = writeln!(out, " <= {}", b.upper);
            }
        }
        out.push_str("Bounds\n");
        for (j, b) in self.program.column_bounds().iter().enumerate() {
            if b.upper.is_finite() {
                let _ = writeln!(out, " {} <= {} <= {}", b.lower, names[j], b.upper);
            } else {
                let _ = writeln!(out, " {} >= {}", names[j], b.lower);
            }
        }
        out.push_str("Binary\n");
        for (j, name) in names.iter().enumerate() {
            if self.program.is_integer(j) {
                let _ = writeln!(out, " {name}");
            }
        }
        out.push_str("End\n");
        out
    }
}

fn write_terms(out: &mut String, terms: &[(usize, f64)], names: &[String]) {
    for (n, &(j, a)) in terms.iter().enumerate() {
        if n > 0 && n % 6 == 0 {
            out.push_str("\n   ");
        }
        let sign = if a < 0.0 { '-' } else { '+' };
        let _ = write!(out, " {sign} {} {}", a.abs(), names[j]);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MilpSolution {
    pub placement: Placement,
    /// `R*_lb(T)` as reported by the producing method.
    pub objective: f64,
    /// Objective of the LP relaxation at the root.
    pub relaxation_bound: f64,
    pub node_count: usize,
    /// Objective minus the best proven bound.
    pub gap: f64,
    /// False when the node budget cut the search short.
    pub optimal: bool,
    pub method: Method,
}

/// Samples a level per `(f, i)` with probabilities `y^k_fi`, then repairs
/// capacity and budget rows by greedy least-damage decrements.
pub fn round_relaxation(
    model: &AnocpModel,
    relaxation: &LpSolution,
    scenario: &Scenario,
    seed: u64,
) -> Placement {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = Vec::with_capacity(model.num_files * model.num_users);
    for f in 0..model.num_files {
        for i in 0..model.num_users {
            let weights: Vec<f64> = (0..=model.recover[f])
                .map(|k| {
                    let y = relaxation.values[model.level_column(f, i, k)];
                    if y > SAMPLE_FLOOR { y } else { 0.0 }
                })
                .collect();
            let total: f64 = weights.iter().sum();
            let draw = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut level = weights.iter().rposition(|&w| w > 0.0).unwrap_or(0);
            for (k, &w) in weights.iter().enumerate() {
                acc += w;
                if w > 0.0 && draw < acc {
                    level = k;
                    break;
                }
            }
            counts.push(level as u32);
        }
    }
    let mut state = CountState::new(model, scenario, counts);
    state.repair();
    Placement::from_flat(model.num_files, model.num_users, state.counts)
}

/// Greedy construction followed by local descent on `R_lb`; used to seed
/// branch-and-bound with a good incumbent.
pub fn heuristic_placement(model: &AnocpModel, scenario: &Scenario) -> Placement {
    let zeros = vec![0; model.num_files * model.num_users];
    let mut state = CountState::new(model, scenario, zeros);
    state.descend();
    Placement::from_flat(model.num_files, model.num_users, state.counts)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MilpOptions {
    pub branch: BranchOptions,
}

/// Minimizes `R_lb(x, T)` over feasible placements by `method`.
pub fn optimize_lower_bound(
    scenario: &Scenario,
    window: f64,
    method: Method,
    seed: u64,
    options: &MilpOptions,
) -> Result<MilpSolution, SolverError> {
    let model = build_anocp(scenario, window);
    match method {
        Method::Exact => {
            let start = model.encode(&heuristic_placement(&model, scenario));
            let outcome = solve_ilp(&model.program, &options.branch, Some(start))?;
            Ok(MilpSolution {
                placement: model.decode(&outcome.values),
                objective: outcome.objective,
                relaxation_bound: outcome.root_bound,
                node_count: outcome.nodes,
                gap: outcome.gap(),
                optimal: outcome.optimal,
                method,
            })
        }
        Method::RelaxRound => {
            let relaxation = solve_lp(&model.program, &options.branch.simplex)?;
            match relaxation.status {
                LpStatus::Optimal => {}
                LpStatus::Infeasible => return Err(SolverError::Infeasible),
                LpStatus::Unbounded => return Err(SolverError::Unbounded),
            }
            let placement = round_relaxation(&model, &relaxation, scenario, seed);
            let objective = lower_bound_nlr_unchecked(scenario, &placement, window).total;
            Ok(MilpSolution {
                placement,
                objective,
                relaxation_bound: relaxation.objective,
                node_count: 1,
                gap: (objective - relaxation.objective).max(0.0),
                optimal: false,
                method,
            })
        }
    }
}
