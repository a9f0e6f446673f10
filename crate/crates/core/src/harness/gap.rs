//! Distribution of `R(x, T) − R_lb(x, T)` over every feasible placement.
//!
//! Both objectives are sums of per-file terms that depend only on that file's
//! row of counts, so each admissible row is evaluated once and placements are
//! walked file by file with the remaining cache room as state.

use std::collections::HashMap;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::model::Scenario;
use crate::nlr::{exact_file_weight, lower_bound_file_weight, EvalError};

/// Largest placement count the enumerator accepts.
pub const ENUMERATION_LIMIT: f64 = 1e8;

/// Gaps at or below this magnitude count as zero.
pub const ZERO_GAP: f64 = 1e-12;

/// Exact counting is skipped past this many distinct room vectors.
const COUNT_STATES_LIMIT: f64 = 1e6;

#[derive(Debug, Error)]
pub enum GapError {
    #[error("refusing to enumerate about {count:.3e} placements (limit {limit:.0e})")]
    TooMany { count: f64, limit: f64 },
    #[error("need at least one bin")]
    NoBins,
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapBin {
    pub bin: usize,
    pub lower: f64,
    pub upper: f64,
    pub count: u64,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapHistogram {
    pub window: f64,
    pub placements: u64,
    pub zero_gap: u64,
    pub min_gap: f64,
    pub max_gap: f64,
    /// Equal-width bins over `[0, max_gap]`.
    pub bins: Vec<GapBin>,
}

impl GapHistogram {
    pub fn zero_fraction(&self) -> f64 {
        self.zero_gap as f64 / self.placements as f64
    }

    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        for bin in &self.bins {
            writer.serialize(bin)?;
        }
        writer.flush()?;
        Ok(())
    }
}

/// Every count vector for `file` that respects the level range, each user's
/// capacity and the file's segment budget.
fn admissible_rows(scenario: &Scenario, file: usize) -> Vec<Vec<u32>> {
    let users = scenario.num_users();
    let top: Vec<u32> = (0..users)
        .map(|i| scenario.recover_segments(file).min(scenario.cache_capacity(i)))
        .collect();
    let budget = scenario.max_segments(file);
    let mut rows = Vec::new();
    let mut row = vec![0u32; users];
    loop {
        if row.iter().sum::<u32>() <= budget {
            rows.push(row.clone());
        }
        let Some(i) = (0..users).find(|&i| row[i] < top[i]) else { break };
        row[i] += 1;
        row[..i].fill(0);
    }
    rows
}

/// Number of feasible placements: exact when the room vectors stay few,
/// otherwise the product of per-file row counts, which bounds it from above.
pub fn count_placements(scenario: &Scenario) -> f64 {
    let rows: Vec<Vec<Vec<u32>>> =
        (0..scenario.num_files()).map(|f| admissible_rows(scenario, f)).collect();
    let states: f64 = scenario.cache_capacities().iter().map(|&c| f64::from(c) + 1.0).product();
    if states > COUNT_STATES_LIMIT {
        return rows.iter().map(|r| r.len() as f64).product();
    }
    let mut layer: HashMap<Vec<u32>, f64> = HashMap::from([(scenario.cache_capacities().to_vec(), 1.0)]);
    for file_rows in &rows {
        let mut next: HashMap<Vec<u32>, f64> = HashMap::new();
        for (room, ways) in &layer {
            for row in file_rows {
                if row.iter().zip(room).all(|(x, r)| x <= r) {
                    let left = room.iter().zip(row).map(|(r, x)| r - x).collect();
                    *next.entry(left).or_default() += ways;
                }
            }
        }
        layer = next;
    }
    layer.values().sum()
}

struct Walk<'a> {
    rows: &'a [Vec<(Vec<u32>, f64)>],
    users: f64,
}

#[derive(Clone)]
struct Tally {
    placements: u64,
    zero: u64,
    min: f64,
    max: f64,
    bins: Vec<u64>,
}

impl Tally {
    fn new(bins: usize) -> Self {
        Tally { placements: 0, zero: 0, min: f64::INFINITY, max: f64::NEG_INFINITY, bins: vec![0; bins] }
    }

    fn merge(mut self, other: Tally) -> Tally {
        self.placements += other.placements;
        self.zero += other.zero;
        self.min = self.min.min(other.min);
        self.max = self.max.max(other.max);
        for (a, b) in self.bins.iter_mut().zip(other.bins) {
            *a += b;
        }
        self
    }
}

impl Walk<'_> {
    fn visit(&self, file: usize, room: &mut [u32], acc: f64, width: f64, tally: &mut Tally) {
        if file == self.rows.len() {
            let gap = acc / self.users;
            tally.placements += 1;
            if gap.abs() <= ZERO_GAP {
                tally.zero += 1;
            }
            tally.min = tally.min.min(gap);
            tally.max = tally.max.max(gap);
            if !tally.bins.is_empty() {
                let last = tally.bins.len() - 1;
                let k = if width > 0.0 { (gap.max(0.0) / width) as usize } else { 0 };
                tally.bins[k.min(last)] += 1;
            }
            return;
        }
        for (row, gap) in &self.rows[file] {
            if row.iter().zip(room.iter()).any(|(x, r)| x > r) {
                continue;
            }
            room.iter_mut().zip(row).for_each(|(r, x)| *r -= x);
            self.visit(file + 1, room, acc + gap, width, tally);
            room.iter_mut().zip(row).for_each(|(r, x)| *r += x);
        }
    }

    fn run(&self, room: &[u32], bins: usize, width: f64) -> Tally {
        let Some(first) = self.rows.first() else {
            let mut tally = Tally::new(bins);
            self.visit(0, &mut room.to_vec(), 0.0, width, &mut tally);
            return tally;
        };
        first
            .par_iter()
            .map(|(row, gap)| {
                let mut tally = Tally::new(bins);
                if row.iter().zip(room).all(|(x, r)| x <= r) {
                    let mut left: Vec<u32> = room.iter().zip(row).map(|(r, x)| r - x).collect();
                    self.visit(1, &mut left, *gap, width, &mut tally);
                }
                tally
            })
            .reduce(|| Tally::new(bins), Tally::merge)
    }
}

/// Enumerates every feasible placement at `window` and bins its gap.
pub fn gap_histogram(scenario: &Scenario, window: f64, bins: usize) -> Result<GapHistogram, GapError> {
    if bins == 0 {
        return Err(GapError::NoBins);
    }
    if !(window.is_finite() && window >= 0.0) {
        return Err(EvalError::InvalidWindow(window).into());
    }
    let count = count_placements(scenario);
    if count > ENUMERATION_LIMIT {
        return Err(GapError::TooMany { count, limit: ENUMERATION_LIMIT });
    }
    let rows: Vec<Vec<(Vec<u32>, f64)>> = (0..scenario.num_files())
        .map(|f| {
            admissible_rows(scenario, f)
                .into_par_iter()
                .map(|row| {
                    let gap = exact_file_weight(scenario, &row, window, f)
                        - lower_bound_file_weight(scenario, &row, window, f);
                    (row, gap)
                })
                .collect()
        })
        .collect();
    let walk = Walk { rows: &rows, users: scenario.num_users() as f64 };
    let room = scenario.cache_capacities();

    let first = walk.run(room, 0, 0.0);
    let width = first.max.max(0.0) / bins as f64;
    let second = walk.run(room, bins, width);
    let total = second.placements as f64;
    let bins = second
        .bins
        .iter()
        .enumerate()
        .map(|(k, &c)| GapBin {
            bin: k,
            lower: k as f64 * width,
            upper: (k + 1) as f64 * width,
            count: c,
            fraction: c as f64 / total,
        })
        .collect();
    Ok(GapHistogram {
        window,
        placements: second.placements,
        zero_gap: second.zero,
        min_gap: second.min,
        max_gap: second.max,
        bins,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::{scenario, uniform_rates};
    use crate::model::{check_feasible, Placement};
    use crate::nlr::{expected_nlr, lower_bound_nlr};
    use crate::scenario::{generate, GeneratorConfig};

    /// Brute force over the full box, filtered by `check_feasible`.
    fn direct_gaps(s: &Scenario, window: f64) -> Vec<f64> {
        let (files, users) = (s.num_files(), s.num_users());
        let top: Vec<u32> = (0..files * users).map(|k| s.recover_segments(k / users)).collect();
        let mut counts = vec![0u32; files * users];
        let mut gaps = Vec::new();
        loop {
            let rows = counts.chunks(users).map(<[u32]>::to_vec).collect();
            let p = Placement::from_rows(rows).unwrap();
            if check_feasible(s, &p).unwrap().is_ok() {
                gaps.push(
                    expected_nlr(s, &p, window).unwrap().total - lower_bound_nlr(s, &p, window).unwrap().total,
                );
            }
            let Some(k) = (0..counts.len()).find(|&k| counts[k] < top[k]) else { break };
            counts[k] += 1;
            counts[..k].fill(0);
        }
        gaps
    }

    #[test]
    fn single_user_has_no_gap() {
        let s = scenario(vec![3], 2, vec![vec![0.0]], vec![vec![0.5], vec![0.3], vec![0.2]], vec![2, 1, 3], vec![2, 3, 3]);
        let h = gap_histogram(&s, 50.0, 4).unwrap();
        assert_eq!(h.zero_gap, h.placements);
        assert_eq!(h.max_gap, 0.0);
        assert_eq!(h.min_gap, 0.0);
        assert_eq!(h.placements as f64, count_placements(&s));
    }

    #[test]
    fn two_holders_leave_the_third_short() {
        let s = scenario(vec![1, 1, 1], 1, uniform_rates(3, 1.0), vec![vec![1.0; 3]], vec![1], vec![3]);
        let h = gap_histogram(&s, 1.0, 10).unwrap();
        assert_eq!(h.placements, 8);
        // Two of three users hold the segment in three placements.
        assert_eq!(h.zero_gap, 5);
        assert!((3.0 * h.max_gap - (-2.0f64).exp()).abs() < 1e-12, "{}", h.max_gap);
        assert_eq!(h.bins[9].count, 3);
    }

    #[test]
    fn matches_direct_enumeration() {
        let config = GeneratorConfig {
            num_users: 3,
            num_files: 3,
            cache_capacity: 2,
            seed: 11,
            ..Default::default()
        };
        let s = generate(&config).unwrap();
        let window = 150.0;
        let mut direct = direct_gaps(&s, window);
        let h = gap_histogram(&s, window, 5).unwrap();
        assert_eq!(h.placements as usize, direct.len());
        assert_eq!(count_placements(&s), direct.len() as f64);
        direct.sort_by(f64::total_cmp);
        assert!((h.max_gap - direct.last().unwrap()).abs() < 1e-12);
        assert!((h.min_gap - direct[0]).abs() < 1e-12);
        let zero = direct.iter().filter(|g| g.abs() <= ZERO_GAP).count();
        assert_eq!(h.zero_gap as usize, zero);
        assert_eq!(h.bins.iter().map(|b| b.count).sum::<u64>(), h.placements);
    }

    #[test]
    fn guard_refuses_large_instances() {
        let config = GeneratorConfig { num_users: 10, num_files: 50, ..Default::default() };
        let s = generate(&config).unwrap();
        match gap_histogram(&s, 100.0, 10) {
            Err(GapError::TooMany { count, .. }) => assert!(count > ENUMERATION_LIMIT),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        let s = scenario(vec![1], 1, vec![vec![0.0]], vec![vec![1.0]], vec![1], vec![1]);
        assert!(matches!(gap_histogram(&s, 1.0, 0), Err(GapError::NoBins)));
        assert!(matches!(gap_histogram(&s, -1.0, 3), Err(GapError::Eval(_))));
    }
}
