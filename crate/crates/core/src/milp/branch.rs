//! Depth-first branch-and-bound over the integer columns of a [`LinearProgram`].

use super::lp::{
    solve_lp_from, solve_lp_with_bounds, Basis, Bounds, LinearProgram, LpStatus, SimplexOptions,
    SolverError,
};

#[derive(Debug, Clone, Copy)]
pub struct BranchOptions {
    pub node_limit: usize,
    pub integrality_tolerance: f64,
    /// Nodes whose bound is within this of the incumbent are pruned.
    pub prune_tolerance: f64,
    pub simplex: SimplexOptions,
}

impl Default for BranchOptions {
    fn default() -> Self {
        BranchOptions {
            node_limit: 1_000_000,
            integrality_tolerance: 1e-7,
            prune_tolerance: 1e-9,
            simplex: SimplexOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IlpOutcome {
    pub values: Vec<f64>,
    pub objective: f64,
    /// Smallest bound over unexplored nodes, or the objective when proven.
    pub best_bound: f64,
    /// Objective of the root relaxation.
    pub root_bound: f64,
    /// LP relaxations solved, the root included.
    pub nodes: usize,
    pub optimal: bool,
}

impl IlpOutcome {
    pub fn gap(&self) -> f64 {
        (self.objective - self.best_bound).max(0.0)
    }
}

struct Node {
    bounds: Vec<Bounds>,
    values: Vec<f64>,
    bound: f64,
    basis: Option<Basis>,
}

/// Minimizes `lp` with its integer columns restricted to integers.
///
/// `incumbent` seeds the search with a known integral point. When the node
/// limit is hit the best point found so far is returned with `optimal`
/// cleared.
pub fn solve_ilp(
    lp: &LinearProgram,
    options: &BranchOptions,
    incumbent: Option<Vec<f64>>,
) -> Result<IlpOutcome, SolverError> {
    let mut best: Option<(Vec<f64>, f64)> = incumbent.map(|v| {
        let obj = lp.objective_value(&v);
        (v, obj)
    });
    let mut nodes = 0usize;
    let solve_node = |bounds: Vec<Bounds>,
                      warm: Option<&Basis>,
                      nodes: &mut usize|
     -> Result<Option<Node>, SolverError> {
        *nodes += 1;
        let sol = match warm {
            Some(basis) => solve_lp_from(lp, &bounds, &options.simplex, basis)?,
            None => solve_lp_with_bounds(lp, &bounds, &options.simplex)?,
        };
        match sol.status {
            LpStatus::Optimal => Ok(Some(Node {
                bounds,
                values: sol.values,
                bound: sol.objective,
                basis: sol.basis,
            })),
            LpStatus::Infeasible => Ok(None),
            LpStatus::Unbounded => Err(SolverError::Unbounded),
        }
    };

    let Some(root) = solve_node(lp.column_bounds().to_vec(), None, &mut nodes)? else {
        return Err(SolverError::Infeasible);
    };
    let root_bound = root.bound;
    let mut stack = vec![root];
    let mut truncated = false;

    while let Some(node) = stack.pop() {
        if let Some((_, obj)) = &best {
            if node.bound >= obj - options.prune_tolerance {
                continue;
            }
        }
        let Some(column) = most_fractional(lp, &node.values, options.integrality_tolerance) else {
            let mut values = node.values;
            for (j, v) in values.iter_mut().enumerate() {
                if lp.is_integer(j) {
                    *v = v.round();
                }
            }
            let obj = lp.objective_value(&values);
            if best.as_ref().is_none_or(|(_, b)| obj < *b) {
                best = Some((values, obj));
            }
            continue;
        };
        if nodes + 2 > options.node_limit {
            stack.push(node);
            truncated = true;
            break;
        }

        let (down, up) = split(lp, &node, column);
        let mut children: Vec<Node> = Vec::with_capacity(2);
        for bounds in [down, up] {
            if let Some(child) = solve_node(bounds, node.basis.as_ref(), &mut nodes)? {
                let keep = best
                    .as_ref()
                    .is_none_or(|(_, b)| child.bound < b - options.prune_tolerance);
                if keep {
                    children.push(child);
                }
            }
        }
        // Better child explored first; on a tie the up branch wins.
        children.sort_by(|a, b| b.bound.partial_cmp(&a.bound).unwrap());
        stack.extend(children);
    }

    let Some((values, objective)) = best else {
        return if truncated {
            Err(SolverError::NoIncumbent { nodes })
        } else {
            Err(SolverError::Infeasible)
        };
    };
    let best_bound = if truncated {
        stack
            .iter()
            .map(|n| n.bound)
            .fold(objective, f64::min)
            .max(root_bound)
    } else {
        objective
    };
    Ok(IlpOutcome {
        values,
        objective,
        best_bound,
        root_bound,
        nodes,
        optimal: !truncated,
    })
}

/// Child bounds for branching on `column`. A column in a level set splits
/// the whole set at the mean level `r`: levels `≤ r` versus levels `> r`.
/// Any other column splits at floor and ceiling of its value.
fn split(lp: &LinearProgram, node: &Node, column: usize) -> (Vec<Bounds>, Vec<Bounds>) {
    let mut down = node.bounds.clone();
    let mut up = node.bounds.clone();
    match lp.level_set_of(column) {
        Some((set, _)) => {
            let members = lp.level_set(set);
            let mean: f64 = members
                .iter()
                .enumerate()
                .map(|(k, &j)| k as f64 * node.values[j])
                .sum();
            // The mean sits strictly inside the support when the set is fractional.
            let last_low = members
                .iter()
                .rposition(|&j| node.values[j] > 0.0)
                .unwrap_or(0)
                .saturating_sub(1);
            let cut = (mean.floor() as usize).min(last_low);
            for (k, &j) in members.iter().enumerate() {
                if k <= cut {
                    up[j].upper = 0.0;
                } else {
                    down[j].upper = 0.0;
                }
            }
        }
        None => {
            let value = node.values[column];
            down[column].upper = value.floor();
            up[column].lower = value.ceil();
        }
    }
    (down, up)
}

/// Integer column whose value is farthest from an integer; lowest index on ties.
fn most_fractional(lp: &LinearProgram, values: &[f64], tolerance: f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (j, &v) in values.iter().enumerate() {
        if !lp.is_integer(j) {
            continue;
        }
        let frac = (v - v.floor()).min(v.ceil() - v);
        if frac > tolerance && best.is_none_or(|(_, f)| frac > f) {
            best = Some((j, frac));
        }
    }
    best.map(|(j, _)| j)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn knapsack(weights: &[f64], values: &[f64], capacity: f64) -> LinearProgram {
        let mut lp = LinearProgram::new();
        let cols: Vec<usize> = values
            .iter()
            .map(|&v| lp.add_column(-v, Bounds::unit(), true))
            .collect();
        lp.add_row(
            cols.iter().zip(weights).map(|(&j, &w)| (j, w)).collect(),
            Bounds::at_most(capacity),
        );
        lp
    }

    fn brute_force_knapsack(weights: &[f64], values: &[f64], capacity: f64) -> f64 {
        let n = weights.len();
        (0u32..1 << n)
            .filter_map(|mask| {
                let pick = |k: usize| mask >> k & 1 == 1;
                let w: f64 = (0..n).filter(|&k| pick(k)).map(|k| weights[k]).sum();
                (w <= capacity).then(|| -(0..n).filter(|&k| pick(k)).map(|k| values[k]).sum::<f64>())
            })
            .fold(0.0, f64::min)
    }

    #[test]
    fn knapsack_matches_enumeration() {
        let weights = [5.0, 4.0, 6.0, 3.0, 7.0, 2.0, 4.5];
        let values = [10.0, 40.0, 30.0, 50.0, 35.0, 12.0, 21.0];
        let lp = knapsack(&weights, &values, 13.0);
        let out = solve_ilp(&lp, &BranchOptions::default(), None).unwrap();
        assert!(out.optimal);
        assert!((out.objective - brute_force_knapsack(&weights, &values, 13.0)).abs() < 1e-9);
        assert!(out.values.iter().all(|v| v.fract() == 0.0));
    }

    #[test]
    fn integral_relaxation_needs_no_branching() {
        let lp = knapsack(&[1.0, 1.0, 1.0], &[3.0, 2.0, 1.0], 2.0);
        let out = solve_ilp(&lp, &BranchOptions::default(), None).unwrap();
        assert_eq!(out.nodes, 1);
        assert!((out.objective + 5.0).abs() < 1e-12);
    }

    #[test]
    fn node_limit_returns_incumbent_flagged() {
        let weights: Vec<f64> = (0..14).map(|k| 3.0 + (k * 7 % 11) as f64).collect();
        let values: Vec<f64> = (0..14).map(|k| 5.0 + (k * 5 % 13) as f64).collect();
        let lp = knapsack(&weights, &values, 31.5);
        let seed = vec![0.0; 14];
        let opts = BranchOptions {
            node_limit: 3,
            ..BranchOptions::default()
        };
        let out = solve_ilp(&lp, &opts, Some(seed)).unwrap();
        assert!(!out.optimal);
        assert!(out.nodes <= 3);
        assert!(out.best_bound <= out.objective);
    }

    #[test]
    fn infeasible_integer_program_is_reported() {
        // 2x = 1 with x integral.
        let mut lp = LinearProgram::new();
        let x = lp.add_column(0.0, Bounds::new(0.0, 3.0), true);
        lp.add_row(vec![(x, 2.0)], Bounds::exactly(1.0));
        assert_eq!(
            solve_ilp(&lp, &BranchOptions::default(), None),
            Err(SolverError::Infeasible)
        );
    }
}
