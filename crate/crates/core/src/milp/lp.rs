//! Sparse linear programs and a bounded-variable primal simplex.
//!
//! Every row `lo ≤ a·x ≤ hi` gets a logical variable `s = a·x` carrying the
//! row bounds, so the system is `A x − s = 0` and all constraints live in
//! variable bounds. The basis inverse is kept in product form on top of the
//! all-logical basis `−I` and rebuilt periodically.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("numerically singular basis after {iterations} iterations: {detail}")]
    SingularBasis { iterations: usize, detail: String },
    #[error("simplex iteration limit {0} reached")]
    IterationLimit(usize),
    #[error("model is infeasible")]
    Infeasible,
    #[error("model is unbounded")]
    Unbounded,
    #[error("no integral solution found within {nodes} nodes")]
    NoIncumbent { nodes: usize },
}

/// Bounds `lower ≤ value ≤ upper`; either side may be infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub lower: f64,
    pub upper: f64,
}

impl Bounds {
    pub fn new(lower: f64, upper: f64) -> Self {
        Bounds { lower, upper }
    }

    pub fn at_most(value: f64) -> Self {
        Bounds::new(f64::NEG_INFINITY, value)
    }

    pub fn at_least(value: f64) -> Self {
        Bounds::new(value, f64::INFINITY)
    }

    pub fn exactly(value: f64) -> Self {
        Bounds::new(value, value)
    }

    pub fn free() -> Self {
        Bounds::new(f64::NEG_INFINITY, f64::INFINITY)
    }

    pub fn unit() -> Self {
        Bounds::new(0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub entries: Vec<(usize, f64)>,
    pub bounds: Bounds,
}

/// Minimize `cost·x` subject to row and column bounds.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinearProgram {
    cost: Vec<f64>,
    columns: Vec<Bounds>,
    integer: Vec<bool>,
    rows: Vec<Row>,
    level_sets: Vec<Vec<usize>>,
    set_of: Vec<Option<(usize, usize)>>,
}

impl LinearProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_column(&mut self, cost: f64, bounds: Bounds, integer: bool) -> usize {
        self.cost.push(cost);
        self.columns.push(bounds);
        self.integer.push(integer);
        self.set_of.push(None);
        self.cost.len() - 1
    }

    /// Declares binary columns that sum to one and encode levels `0, 1, …`
    /// in the given order. Branching splits such a set by level.
    pub fn add_level_set(&mut self, columns: Vec<usize>) -> usize {
        let id = self.level_sets.len();
        for (position, &j) in columns.iter().enumerate() {
            assert!(self.set_of[j].is_none(), "column {j} already in a level set");
            self.set_of[j] = Some((id, position));
        }
        self.level_sets.push(columns);
        id
    }

    pub fn level_set(&self, id: usize) -> &[usize] {
        &self.level_sets[id]
    }

    /// The level set containing `column` and its position there.
    pub fn level_set_of(&self, column: usize) -> Option<(usize, usize)> {
        self.set_of[column]
    }

    /// Adds a row; zero coefficients are dropped.
    pub fn add_row(&mut self, entries: Vec<(usize, f64)>, bounds: Bounds) -> usize {
        let entries = entries.into_iter().filter(|&(_, a)| a != 0.0).collect();
        self.rows.push(Row { entries, bounds });
        self.rows.len() - 1
    }

    pub fn set_row_bounds(&mut self, row: usize, bounds: Bounds) {
        self.rows[row].bounds = bounds;
    }

    pub fn num_columns(&self) -> usize {
        self.cost.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn cost(&self) -> &[f64] {
        &self.cost
    }

    pub fn column_bounds(&self) -> &[Bounds] {
        &self.columns
    }

    pub fn is_integer(&self, column: usize) -> bool {
        self.integer[column]
    }

    pub fn rows(&self) -> &[Row] {
        &self.rows
    }

    pub fn objective_value(&self, values: &[f64]) -> f64 {
        self.cost.iter().zip(values).map(|(c, x)| c * x).sum()
    }

    pub fn row_activity(&self, row: usize, values: &[f64]) -> f64 {
        self.rows[row].entries.iter().map(|&(j, a)| a * values[j]).sum()
    }

    /// Largest violation of any row or column bound by `values`.
    pub fn max_violation(&self, values: &[f64]) -> f64 {
        let excess = |v: f64, b: &Bounds| (b.lower - v).max(v - b.upper).max(0.0);
        let rows = (0..self.rows.len())
            .map(|r| excess(self.row_activity(r, values), &self.rows[r].bounds))
            .fold(0.0, f64::max);
        let cols = values
            .iter()
            .zip(&self.columns)
            .map(|(&v, b)| excess(v, b))
            .fold(0.0, f64::max);
        rows.max(cols)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

impl fmt::Display for LpStatus {
    fn fmt(&self, out: &mut fmt::Formatter<'_>) -> fmt::Result {
        out.write_str(match self {
            LpStatus::Optimal => "optimal",
            LpStatus::Infeasible => "infeasible",
            LpStatus::Unbounded => "unbounded",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Structural column values (meaningful when optimal).
    pub values: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    /// Final basis, usable to warm-start a related solve.
    pub basis: Option<Basis>,
}

/// Basic set and nonbasic bound positions of a simplex solve.
#[derive(Debug, Clone, PartialEq)]
pub struct Basis {
    head: Vec<usize>,
    state: Vec<VarState>,
}

#[derive(Debug, Clone, Copy)]
pub struct SimplexOptions {
    pub max_iterations: usize,
    pub primal_tolerance: f64,
    pub dual_tolerance: f64,
    pub pivot_tolerance: f64,
    /// Eta vectors accumulated before the basis inverse is rebuilt.
    pub refactor_interval: usize,
    /// Consecutive degenerate pivots before switching to Bland's rule.
    pub degenerate_limit: usize,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        SimplexOptions {
            max_iterations: 200_000,
            primal_tolerance: 1e-9,
            dual_tolerance: 1e-9,
            pivot_tolerance: 1e-9,
            refactor_interval: 100,
            degenerate_limit: 50,
        }
    }
}

/// Solves the continuous relaxation (integrality flags are ignored).
pub fn solve_lp(lp: &LinearProgram, options: &SimplexOptions) -> Result<LpSolution, SolverError> {
    Simplex::new(lp, lp.column_bounds(), options).run()
}

/// Like [`solve_lp`] with the column bounds replaced.
pub fn solve_lp_with_bounds(
    lp: &LinearProgram,
    columns: &[Bounds],
    options: &SimplexOptions,
) -> Result<LpSolution, SolverError> {
    Simplex::new(lp, columns, options).run()
}

/// Like [`solve_lp_with_bounds`], starting from `start` instead of a crash
/// basis. Falls back to a cold start if that basis cannot be factored.
pub fn solve_lp_from(
    lp: &LinearProgram,
    columns: &[Bounds],
    options: &SimplexOptions,
    start: &Basis,
) -> Result<LpSolution, SolverError> {
    let mut simplex = Simplex::new(lp, columns, options);
    if simplex.install(start) {
        simplex.iterate()
    } else {
        Simplex::new(lp, columns, options).run()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum VarState {
    Basic,
    AtLower,
    AtUpper,
    /// Nonbasic free variable held at zero.
    Zero,
}

/// One elementary matrix of the product-form inverse.
struct Eta {
    pivot: usize,
    pivot_value: f64,
    entries: Vec<(usize, f64)>,
}

struct Simplex<'a> {
    options: &'a SimplexOptions,
    n: usize,
    m: usize,
    /// Column-major copy of A: `col_start[j]..col_start[j+1]` into rows/vals.
    col_start: Vec<usize>,
    col_rows: Vec<usize>,
    col_vals: Vec<f64>,
    /// Costs scaled so that the largest magnitude is one.
    cost: Vec<f64>,
    cost_scale: f64,
    lower: Vec<f64>,
    upper: Vec<f64>,
    x: Vec<f64>,
    state: Vec<VarState>,
    head: Vec<usize>,
    etas: Vec<Eta>,
    iterations: usize,
}

impl<'a> Simplex<'a> {
    fn new(lp: &LinearProgram, columns: &[Bounds], options: &'a SimplexOptions) -> Self {
        let n = lp.num_columns();
        let m = lp.num_rows();
        let mut counts = vec![0usize; n + 1];
        for row in &lp.rows {
            for &(j, _) in &row.entries {
                counts[j + 1] += 1;
            }
        }
        for j in 0..n {
            counts[j + 1] += counts[j];
        }
        let col_start = counts.clone();
        let mut fill = counts;
        let nnz = col_start[n];
        let mut col_rows = vec![0; nnz];
        let mut col_vals = vec![0.0; nnz];
        for (r, row) in lp.rows.iter().enumerate() {
            for &(j, a) in &row.entries {
                col_rows[fill[j]] = r;
                col_vals[fill[j]] = a;
                fill[j] += 1;
            }
        }

        let max_cost = lp.cost.iter().fold(0.0f64, |acc, c| acc.max(c.abs()));
        let cost_scale = if max_cost > 0.0 { 1.0 / max_cost } else { 1.0 };
        let mut cost: Vec<f64> = lp.cost.iter().map(|c| c * cost_scale).collect();
        cost.resize(n + m, 0.0);

        let mut lower = Vec::with_capacity(n + m);
        let mut upper = Vec::with_capacity(n + m);
        for b in columns {
            lower.push(b.lower);
            upper.push(b.upper);
        }
        for row in &lp.rows {
            lower.push(row.bounds.lower);
            upper.push(row.bounds.upper);
        }

        Simplex {
            options,
            n,
            m,
            col_start,
            col_rows,
            col_vals,
            cost,
            cost_scale,
            lower,
            upper,
            x: vec![0.0; n + m],
            state: vec![VarState::AtLower; n + m],
            head: Vec::new(),
            etas: Vec::new(),
            iterations: 0,
        }
    }

    fn column(&self, j: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.col_start[j]..self.col_start[j + 1];
        self.col_rows[range.clone()]
            .iter()
            .copied()
            .zip(self.col_vals[range].iter().copied())
    }

    fn column_len(&self, j: usize) -> usize {
        if j < self.n {
            self.col_start[j + 1] - self.col_start[j]
        } else {
            1
        }
    }

    /// Writes column `j` of `[A  −I]` into a dense vector.
    fn scatter_column(&self, j: usize, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        if j < self.n {
            for (r, a) in self.column(j) {
                out[r] = a;
            }
        } else {
            out[j - self.n] = -1.0;
        }
    }

    /// `v ← B⁻¹ v`.
    fn ftran(&self, v: &mut [f64]) {
        v.iter_mut().for_each(|x| *x = -*x);
        for eta in &self.etas {
            let vp = v[eta.pivot];
            if vp == 0.0 {
                continue;
            }
            v[eta.pivot] = vp * eta.pivot_value;
            for &(i, e) in &eta.entries {
                v[i] += e * vp;
            }
        }
    }

    /// `w ← wᵀ B⁻¹`.
    fn btran(&self, w: &mut [f64]) {
        for eta in self.etas.iter().rev() {
            let mut dot = w[eta.pivot] * eta.pivot_value;
            for &(i, e) in &eta.entries {
                dot += w[i] * e;
            }
            w[eta.pivot] = dot;
        }
        w.iter_mut().for_each(|x| *x = -*x);
    }

    fn push_eta(&mut self, pivot: usize, alpha: &[f64]) {
        let ap = alpha[pivot];
        let entries = alpha
            .iter()
            .enumerate()
            .filter(|&(i, &a)| i != pivot && a.abs() > 1e-14)
            .map(|(i, &a)| (i, -a / ap))
            .collect();
        self.etas.push(Eta {
            pivot,
            pivot_value: 1.0 / ap,
            entries,
        });
    }

    /// Rebuilds the product form for the current basic set.
    fn reinvert(&mut self) -> Result<(), SolverError> {
        self.etas.clear();
        let mut occupant: Vec<usize> = (0..self.m).map(|r| self.n + r).collect();
        let mut keeps_logical = vec![false; self.m];
        let mut structurals = Vec::new();
        for &b in &self.head {
            if b >= self.n {
                keeps_logical[b - self.n] = true;
            } else {
                structurals.push(b);
            }
        }
        structurals.sort_by_key(|&j| (self.column_len(j), j));

        let mut alpha = vec![0.0; self.m];
        for j in structurals {
            self.scatter_column(j, &mut alpha);
            self.ftran(&mut alpha);
            let mut best: Option<(usize, f64)> = None;
            for r in 0..self.m {
                if occupant[r] >= self.n && !keeps_logical[r] {
                    let mag = alpha[r].abs();
                    if mag > best.map_or(self.options.pivot_tolerance, |b| b.1) {
                        best = Some((r, mag));
                    }
                }
            }
            let Some((r, _)) = best else {
                return Err(SolverError::SingularBasis {
                    iterations: self.iterations,
                    detail: format!("column {j} is dependent on the other basic columns"),
                });
            };
            self.push_eta(r, &alpha);
            occupant[r] = j;
        }
        self.head = occupant;
        Ok(())
    }

    /// Recomputes basic values from the nonbasic ones: `B x_B = −N x_N`.
    fn recompute_basics(&mut self) {
        let mut rhs = vec![0.0; self.m];
        for j in 0..self.n + self.m {
            if self.state[j] == VarState::Basic || self.x[j] == 0.0 {
                continue;
            }
            if j < self.n {
                for (r, a) in self.column(j) {
                    rhs[r] -= a * self.x[j];
                }
            } else {
                rhs[j - self.n] += self.x[j];
            }
        }
        self.ftran(&mut rhs);
        for (r, &b) in self.head.iter().enumerate() {
            self.x[b] = rhs[r];
        }
    }

    /// Places nonbasic structurals at a bound and picks an initial basis of
    /// logicals, swapping in column singletons that absorb a violated row.
    fn crash(&mut self) {
        for j in 0..self.n {
            let (l, u) = (self.lower[j], self.upper[j]);
            let (state, value) = if l.is_finite() {
                (VarState::AtLower, l)
            } else if u.is_finite() {
                (VarState::AtUpper, u)
            } else {
                (VarState::Zero, 0.0)
            };
            self.state[j] = state;
            self.x[j] = value;
        }
        let mut activity = vec![0.0; self.m];
        for j in 0..self.n {
            if self.x[j] != 0.0 {
                for (r, a) in self.column(j) {
                    activity[r] += a * self.x[j];
                }
            }
        }
        let mut singletons: Vec<Vec<usize>> = vec![Vec::new(); self.m];
        for j in 0..self.n {
            if self.column_len(j) == 1 && self.lower[j] < self.upper[j] {
                singletons[self.col_rows[self.col_start[j]]].push(j);
            }
        }

        let tol = self.options.primal_tolerance;
        self.head = (0..self.m).map(|r| self.n + r).collect();
        for r in 0..self.m {
            let logical = self.n + r;
            let (lo, hi) = (self.lower[logical], self.upper[logical]);
            let act = activity[r];
            let target = act.clamp(lo, hi);
            if (act - target).abs() > tol {
                let fix = singletons[r].iter().copied().find_map(|j| {
                    let a = self.col_vals[self.col_start[j]];
                    let value = self.x[j] + (target - act) / a;
                    (value >= self.lower[j] - tol && value <= self.upper[j] + tol)
                        .then_some((j, value))
                });
                if let Some((j, value)) = fix {
                    self.x[j] = value;
                    self.state[j] = VarState::Basic;
                    self.head[r] = j;
                    self.x[logical] = target;
                    self.state[logical] = if target == lo {
                        VarState::AtLower
                    } else {
                        VarState::AtUpper
                    };
                    continue;
                }
            }
            self.state[logical] = VarState::Basic;
            self.x[logical] = act;
        }
    }

    fn bounds_conflict(&self) -> bool {
        (0..self.n + self.m).any(|j| self.lower[j] > self.upper[j])
    }

    fn run(mut self) -> Result<LpSolution, SolverError> {
        if self.bounds_conflict() {
            return Ok(self.finish(LpStatus::Infeasible));
        }
        self.crash();
        self.reinvert()?;
        self.recompute_basics();
        self.iterate()
    }

    /// Loads a previous basis, moving nonbasic variables onto the current
    /// bounds. Returns false if the basis does not fit or is singular.
    fn install(&mut self, start: &Basis) -> bool {
        if start.head.len() != self.m || start.state.len() != self.n + self.m {
            return false;
        }
        self.head = start.head.clone();
        self.state = start.state.clone();
        for j in 0..self.n + self.m {
            let (l, u) = (self.lower[j], self.upper[j]);
            let (state, value) = match self.state[j] {
                VarState::Basic => continue,
                VarState::AtUpper if u.is_finite() => (VarState::AtUpper, u),
                _ if l.is_finite() => (VarState::AtLower, l),
                _ if u.is_finite() => (VarState::AtUpper, u),
                _ => (VarState::Zero, 0.0),
            };
            self.state[j] = state;
            self.x[j] = value;
        }
        if self.reinvert().is_err() {
            return false;
        }
        self.recompute_basics();
        true
    }

    fn iterate(mut self) -> Result<LpSolution, SolverError> {
        if self.bounds_conflict() {
            return Ok(self.finish(LpStatus::Infeasible));
        }
        let mut degenerate_run = 0usize;
        let mut alpha = vec![0.0; self.m];
        let mut pi = vec![0.0; self.m];
        let mut since_refactor = 0usize;
        let mut verified = false;

        loop {
            if self.iterations >= self.options.max_iterations {
                return Err(SolverError::IterationLimit(self.options.max_iterations));
            }
            if since_refactor >= self.options.refactor_interval {
                self.reinvert()?;
                self.recompute_basics();
                since_refactor = 0;
            }

            let phase_one = self.load_costs(&mut pi);
            self.btran(&mut pi);
            let bland = degenerate_run >= self.options.degenerate_limit;
            let Some((entering, reduced)) = self.price(&pi, phase_one, bland) else {
                // Confirm on a fresh factorization before declaring a verdict.
                if !verified && since_refactor > 0 {
                    self.reinvert()?;
                    self.recompute_basics();
                    since_refactor = 0;
                    verified = true;
                    continue;
                }
                let status = if phase_one {
                    LpStatus::Infeasible
                } else {
                    LpStatus::Optimal
                };
                return Ok(self.finish(status));
            };
            verified = false;
            let direction = if reduced < 0.0 { 1.0 } else { -1.0 };

            self.scatter_column(entering, &mut alpha);
            self.ftran(&mut alpha);

            let step = self.ratio_test(entering, direction, &alpha, phase_one, bland);
            match step {
                Step::Unbounded => {
                    if phase_one {
                        return Err(SolverError::SingularBasis {
                            iterations: self.iterations,
                            detail: "phase one ray without a blocking variable".into(),
                        });
                    }
                    return Ok(self.finish(LpStatus::Unbounded));
                }
                Step::Flip(theta) => {
                    self.advance(entering, direction, theta, &alpha);
                    self.state[entering] = if self.state[entering] == VarState::AtLower {
                        VarState::AtUpper
                    } else {
                        VarState::AtLower
                    };
                    self.x[entering] = if self.state[entering] == VarState::AtLower {
                        self.lower[entering]
                    } else {
                        self.upper[entering]
                    };
                    degenerate_run = 0;
                }
                Step::Pivot {
                    position,
                    theta,
                    leaves_at_upper,
                } => {
                    self.advance(entering, direction, theta, &alpha);
                    let leaving = self.head[position];
                    self.state[leaving] = if leaves_at_upper {
                        VarState::AtUpper
                    } else {
                        VarState::AtLower
                    };
                    self.x[leaving] = if leaves_at_upper {
                        self.upper[leaving]
                    } else {
                        self.lower[leaving]
                    };
                    self.state[entering] = VarState::Basic;
                    self.head[position] = entering;
                    self.push_eta(position, &alpha);
                    since_refactor += 1;
                    if theta <= 1e-12 {
                        degenerate_run += 1;
                    } else {
                        degenerate_run = 0;
                    }
                }
            }
            self.iterations += 1;
        }
    }

    /// Loads basic costs into `pi`; returns whether phase one is active.
    fn load_costs(&self, pi: &mut [f64]) -> bool {
        let tol = self.options.primal_tolerance;
        let mut phase_one = false;
        for (r, &b) in self.head.iter().enumerate() {
            let v = self.x[b];
            pi[r] = if v < self.lower[b] - tol {
                phase_one = true;
                -1.0
            } else if v > self.upper[b] + tol {
                phase_one = true;
                1.0
            } else {
                0.0
            };
        }
        if !phase_one {
            for (r, &b) in self.head.iter().enumerate() {
                pi[r] = self.cost[b];
            }
        }
        phase_one
    }

    /// Picks an entering variable: largest reduced cost (Dantzig) or, in
    /// Bland mode, the lowest eligible index.
    fn price(&self, pi: &[f64], phase_one: bool, bland: bool) -> Option<(usize, f64)> {
        let tol = self.options.dual_tolerance;
        let mut best: Option<(usize, f64)> = None;
        for j in 0..self.n + self.m {
            let state = self.state[j];
            if state == VarState::Basic || self.lower[j] == self.upper[j] {
                continue;
            }
            let base = if phase_one { 0.0 } else { self.cost[j] };
            let d = if j < self.n {
                base - self.column(j).map(|(r, a)| pi[r] * a).sum::<f64>()
            } else {
                base + pi[j - self.n]
            };
            let eligible = match state {
                VarState::AtLower => d < -tol,
                VarState::AtUpper => d > tol,
                VarState::Zero => d.abs() > tol,
                VarState::Basic => false,
            };
            if !eligible {
                continue;
            }
            if bland {
                return Some((j, d));
            }
            if best.is_none_or(|(_, bd)| d.abs() > bd.abs()) {
                best = Some((j, d));
            }
        }
        best
    }

    fn ratio_test(
        &self,
        entering: usize,
        direction: f64,
        alpha: &[f64],
        phase_one: bool,
        bland: bool,
    ) -> Step {
        let tol = self.options.primal_tolerance;
        let piv = self.options.pivot_tolerance;

        // Candidate: (position, exact ratio, relaxed ratio, leaves at upper).
        let mut candidates: Vec<(usize, f64, f64, bool)> = Vec::new();
        for (r, &b) in self.head.iter().enumerate() {
            let rate = -direction * alpha[r];
            if rate.abs() <= piv {
                continue;
            }
            let v = self.x[b];
            let (l, u) = (self.lower[b], self.upper[b]);
            let below = phase_one && v < l - tol;
            let above = phase_one && v > u + tol;
            let (bound, at_upper) = if rate > 0.0 {
                if below {
                    (l, false)
                } else if above {
                    continue;
                } else {
                    (u, true)
                }
            } else if above {
                (u, true)
            } else if below {
                continue;
            } else {
                (l, false)
            };
            if !bound.is_finite() {
                continue;
            }
            let exact = ((bound - v) / rate).max(0.0);
            let slack = if rate > 0.0 { tol } else { -tol };
            let relaxed = ((bound + slack - v) / rate).max(0.0);
            candidates.push((r, exact, relaxed, at_upper));
        }

        let flip = self.upper[entering] - self.lower[entering];
        let choice = if bland {
            let min = candidates
                .iter()
                .map(|c| c.1)
                .fold(f64::INFINITY, f64::min);
            candidates
                .iter()
                .filter(|c| c.1 <= min + 1e-12)
                .min_by_key(|c| self.head[c.0])
                .copied()
        } else {
            let limit = candidates
                .iter()
                .map(|c| c.2)
                .fold(f64::INFINITY, f64::min);
            candidates
                .iter()
                .filter(|c| c.1 <= limit)
                .max_by(|a, b| {
                    alpha[a.0]
                        .abs()
                        .partial_cmp(&alpha[b.0].abs())
                        .unwrap()
                        .then(b.0.cmp(&a.0))
                })
                .copied()
        };

        match choice {
            Some((_, theta, _, _)) if flip.is_finite() && flip <= theta => Step::Flip(flip),
            Some((position, theta, _, leaves_at_upper)) => Step::Pivot {
                position,
                theta,
                leaves_at_upper,
            },
            None if flip.is_finite() => Step::Flip(flip),
            None => Step::Unbounded,
        }
    }

    fn advance(&mut self, entering: usize, direction: f64, theta: f64, alpha: &[f64]) {
        if theta == 0.0 {
            return;
        }
        self.x[entering] += direction * theta;
        for (r, &b) in self.head.iter().enumerate() {
            self.x[b] -= direction * theta * alpha[r];
        }
    }

    fn finish(self, status: LpStatus) -> LpSolution {
        let basis = (status == LpStatus::Optimal).then(|| Basis {
            head: self.head.clone(),
            state: self.state.clone(),
        });
        let values = self.x[..self.n].to_vec();
        let objective = self
            .cost
            .iter()
            .take(self.n)
            .zip(&values)
            .map(|(c, x)| c * x)
            .sum::<f64>()
            / self.cost_scale;
        LpSolution {
            status,
            values,
            objective,
            iterations: self.iterations,
            basis,
        }
    }
}

enum Step {
    Unbounded,
    Flip(f64),
    Pivot {
        position: usize,
        theta: f64,
        leaves_at_upper: bool,
    },
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solve(lp: &LinearProgram) -> LpSolution {
        solve_lp(lp, &SimplexOptions::default()).unwrap()
    }

    #[test]
    fn textbook_box_lp() {
        let mut lp = LinearProgram::new();
        let a = lp.add_column(-1.0, Bounds::unit(), false);
        let b = lp.add_column(-1.0, Bounds::unit(), false);
        lp.add_row(vec![(a, 1.0), (b, 1.0)], Bounds::at_most(1.0));
        let sol = solve(&lp);
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.objective + 1.0).abs() < 1e-12);
        assert!(lp.max_violation(&sol.values) < 1e-9);
    }

    #[test]
    fn contradictory_rows_are_infeasible() {
        let mut lp = LinearProgram::new();
        let a = lp.add_column(1.0, Bounds::free(), false);
        lp.add_row(vec![(a, 1.0)], Bounds::at_most(-1.0));
        lp.add_row(vec![(a, 1.0)], Bounds::at_least(0.0));
        assert_eq!(solve(&lp).status, LpStatus::Infeasible);
    }

    #[test]
    fn unbounded_ray_is_detected() {
        let mut lp = LinearProgram::new();
        let a = lp.add_column(-1.0, Bounds::at_least(0.0), false);
        let b = lp.add_column(0.0, Bounds::at_least(0.0), false);
        lp.add_row(vec![(a, 1.0), (b, -1.0)], Bounds::at_most(2.0));
        assert_eq!(solve(&lp).status, LpStatus::Unbounded);
    }

    #[test]
    fn classic_production_problem() {
        // max 3x + 5y, x ≤ 4, 2y ≤ 12, 3x + 2y ≤ 18 → 36 at (2, 6).
        let mut lp = LinearProgram::new();
        let x = lp.add_column(-3.0, Bounds::at_least(0.0), false);
        let y = lp.add_column(-5.0, Bounds::at_least(0.0), false);
        lp.add_row(vec![(x, 1.0)], Bounds::at_most(4.0));
        lp.add_row(vec![(y, 2.0)], Bounds::at_most(12.0));
        lp.add_row(vec![(x, 3.0), (y, 2.0)], Bounds::at_most(18.0));
        let sol = solve(&lp);
        assert!((sol.objective + 36.0).abs() < 1e-9);
        assert!((sol.values[x] - 2.0).abs() < 1e-9);
        assert!((sol.values[y] - 6.0).abs() < 1e-9);
    }

    #[test]
    fn equality_and_ge_rows_need_phase_one() {
        // min x + 2y + 3z, x + y + z = 3, y + z ≥ 2, x,y,z ∈ [0, 2] → 1 + 2·2 = 5.
        let mut lp = LinearProgram::new();
        let x = lp.add_column(1.0, Bounds::new(0.0, 2.0), false);
        let y = lp.add_column(2.0, Bounds::new(0.0, 2.0), false);
        let z = lp.add_column(3.0, Bounds::new(0.0, 2.0), false);
        lp.add_row(vec![(x, 1.0), (y, 1.0), (z, 1.0)], Bounds::exactly(3.0));
        lp.add_row(vec![(y, 1.0), (z, 1.0)], Bounds::at_least(2.0));
        let sol = solve(&lp);
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.objective - 5.0).abs() < 1e-9, "{sol:?}");
    }

    #[test]
    fn degenerate_cycling_example_terminates() {
        // Beale's example: cycles under naive Dantzig pricing without anti-cycling.
        let mut lp = LinearProgram::new();
        let x4 = lp.add_column(-0.75, Bounds::at_least(0.0), false);
        let x5 = lp.add_column(20.0, Bounds::at_least(0.0), false);
        let x6 = lp.add_column(-0.5, Bounds::at_least(0.0), false);
        let x7 = lp.add_column(6.0, Bounds::at_least(0.0), false);
        lp.add_row(
            vec![(x4, 0.25), (x5, -8.0), (x6, -1.0), (x7, 9.0)],
            Bounds::at_most(0.0),
        );
        lp.add_row(
            vec![(x4, 0.5), (x5, -12.0), (x6, -0.5), (x7, 3.0)],
            Bounds::at_most(0.0),
        );
        lp.add_row(vec![(x6, 1.0)], Bounds::at_most(1.0));
        let sol = solve(&lp);
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.objective + 1.25).abs() < 1e-9, "{sol:?}");
    }

    #[test]
    fn frequent_refactorization_gives_same_answer() {
        let mut lp = LinearProgram::new();
        let cols: Vec<usize> = (0..12)
            .map(|j| lp.add_column(-((j % 5) as f64 + 1.0), Bounds::unit(), false))
            .collect();
        for r in 0..6 {
            let entries = cols
                .iter()
                .filter(|&&j| (j + r) % 3 != 0)
                .map(|&j| (j, 1.0 + ((j * r) % 4) as f64))
                .collect();
            lp.add_row(entries, Bounds::at_most(3.0 + r as f64));
        }
        let base = solve(&lp);
        let eager = solve_lp(
            &lp,
            &SimplexOptions {
                refactor_interval: 1,
                ..SimplexOptions::default()
            },
        )
        .unwrap();
        assert_eq!(base.status, LpStatus::Optimal);
        assert!((base.objective - eager.objective).abs() < 1e-10);
        assert!(lp.max_violation(&base.values) < 1e-8);
    }
}
