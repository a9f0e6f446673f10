//! Count-space moves on the lower-bound objective: rounding repair, a greedy
//! constructor and swap/transfer local search.
//!
//! All three work on a [`CountState`] that keeps `E[S_fi]` current so each
//! move is priced in `O(U)`.

use super::AnocpModel;
use crate::model::Scenario;

/// Improvements smaller than this are not taken.
const MIN_GAIN: f64 = 1e-12;

pub(crate) struct CountState<'a> {
    model: &'a AnocpModel,
    scenario: &'a Scenario,
    pub(crate) counts: Vec<u32>,
    collected: Vec<f64>,
    load: Vec<u64>,
    spread: Vec<u64>,
}

impl<'a> CountState<'a> {
    pub(crate) fn new(model: &'a AnocpModel, scenario: &'a Scenario, counts: Vec<u32>) -> Self {
        let (files, users) = (model.num_files, model.num_users);
        let mut load = vec![0; users];
        let mut spread = vec![0; files];
        let mut collected = vec![0.0; files * users];
        for f in 0..files {
            for j in 0..users {
                let c = counts[f * users + j];
                load[j] += u64::from(c);
                spread[f] += u64::from(c);
            }
            for i in 0..users {
                collected[f * users + i] = (0..users)
                    .map(|j| -model.n_coefficient(f, i, j, counts[f * users + j]))
                    .sum();
            }
        }
        CountState {
            model,
            scenario,
            counts,
            collected,
            load,
            spread,
        }
    }

    fn users(&self) -> usize {
        self.model.num_users
    }

    fn count(&self, f: usize, j: usize) -> u32 {
        self.counts[f * self.users() + j]
    }

    fn over_capacity(&self, j: usize) -> bool {
        self.load[j] > u64::from(self.scenario.cache_capacity(j))
    }

    fn over_budget(&self, f: usize) -> bool {
        self.spread[f] > u64::from(self.scenario.max_segments(f))
    }

    fn can_grow(&self, f: usize, j: usize) -> bool {
        self.count(f, j) < self.model.recover[f]
            && self.load[j] < u64::from(self.scenario.cache_capacity(j))
            && self.spread[f] < u64::from(self.scenario.max_segments(f))
    }

    /// `E[S_fi]` contribution of user `j` holding `c` segments of file `f`.
    fn gain(&self, f: usize, i: usize, j: usize, c: u32) -> f64 {
        -self.model.n_coefficient(f, i, j, c)
    }

    fn ratio(&self, f: usize, e: f64) -> f64 {
        let rec = f64::from(self.model.recover[f]);
        ((rec - e).max(0.0) / rec).min(1.0)
    }

    /// Change in `U · R_lb` from setting the counts of `(f, j)` for each listed `j`.
    fn delta(&self, f: usize, changes: &[(usize, u32)]) -> f64 {
        let users = self.users();
        (0..users)
            .map(|i| {
                let e = self.collected[f * users + i];
                let moved = changes.iter().fold(e, |acc, &(j, c)| {
                    acc + self.gain(f, i, j, c) - self.gain(f, i, j, self.count(f, j))
                });
                self.scenario.popularity(f, i) * (self.ratio(f, moved) - self.ratio(f, e))
            })
            .sum()
    }

    fn set(&mut self, f: usize, j: usize, c: u32) {
        let users = self.users();
        let old = self.count(f, j);
        for i in 0..users {
            self.collected[f * users + i] += self.gain(f, i, j, c) - self.gain(f, i, j, old);
        }
        self.load[j] = self.load[j] + u64::from(c) - u64::from(old);
        self.spread[f] = self.spread[f] + u64::from(c) - u64::from(old);
        self.counts[f * users + j] = c;
    }

    /// While a capacity or budget row is violated, decrement the count in a
    /// violated row whose removal raises `R_lb` the least (lowest file, then
    /// lowest user, on ties).
    pub(crate) fn repair(&mut self) {
        let (files, users) = (self.model.num_files, self.users());
        loop {
            let mut best: Option<(usize, usize, f64)> = None;
            for f in 0..files {
                let budget_hit = self.over_budget(f);
                for j in 0..users {
                    let c = self.count(f, j);
                    if c == 0 || !(budget_hit || self.over_capacity(j)) {
                        continue;
                    }
                    let damage = self.delta(f, &[(j, c - 1)]);
                    if best.is_none_or(|(_, _, d)| damage < d) {
                        best = Some((f, j, damage));
                    }
                }
            }
            let Some((f, j, _)) = best else { return };
            self.set(f, j, self.count(f, j) - 1);
        }
    }

    /// Adds single segments by largest decrease of `R_lb` until none helps.
    pub(crate) fn grow(&mut self) {
        let (files, users) = (self.model.num_files, self.users());
        loop {
            let mut best: Option<(usize, usize, f64)> = None;
            for f in 0..files {
                for j in 0..users {
                    if !self.can_grow(f, j) {
                        continue;
                    }
                    let d = self.delta(f, &[(j, self.count(f, j) + 1)]);
                    if d < -MIN_GAIN && best.is_none_or(|(_, _, b)| d < b) {
                        best = Some((f, j, d));
                    }
                }
            }
            let Some((f, j, _)) = best else { return };
            self.set(f, j, self.count(f, j) + 1);
        }
    }

    /// Best-improvement descent over single increments, in-cache swaps
    /// (one segment of `f` traded for one of `g` at the same user) and
    /// transfers (one segment of `f` moved between users).
    pub(crate) fn descend(&mut self) {
        let (files, users) = (self.model.num_files, self.users());
        loop {
            self.grow();
            // (gain, move) where a move is a list of (file, user, new count).
            let mut best: Option<(f64, [(usize, usize, u32); 2])> = None;
            let mut offer = |d: f64, mv: [(usize, usize, u32); 2]| {
                if d < -MIN_GAIN && best.is_none_or(|(b, _)| d < b) {
                    best = Some((d, mv));
                }
            };
            for f in 0..files {
                for j in 0..users {
                    let c = self.count(f, j);
                    if c == 0 {
                        continue;
                    }
                    let drop = self.delta(f, &[(j, c - 1)]);
                    for g in (0..files).filter(|&g| g != f) {
                        let cg = self.count(g, j);
                        if cg >= self.model.recover[g]
                            || self.spread[g] >= u64::from(self.scenario.max_segments(g))
                        {
                            continue;
                        }
                        let d = drop + self.delta(g, &[(j, cg + 1)]);
                        offer(d, [(f, j, c - 1), (g, j, cg + 1)]);
                    }
                    for k in (0..users).filter(|&k| k != j) {
                        let ck = self.count(f, k);
                        if ck >= self.model.recover[f]
                            || self.load[k] >= u64::from(self.scenario.cache_capacity(k))
                        {
                            continue;
                        }
                        let d = self.delta(f, &[(j, c - 1), (k, ck + 1)]);
                        offer(d, [(f, j, c - 1), (f, k, ck + 1)]);
                    }
                }
            }
            let Some((_, mv)) = best else { return };
            for (f, j, c) in mv {
                self.set(f, j, c);
            }
        }
    }
}
