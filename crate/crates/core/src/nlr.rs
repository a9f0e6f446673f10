//! Expected network load ratio: exact evaluation by truncated convolution,
//! a Monte Carlo estimator, and the linearizable lower bound.
//!
//! For a request of file `f` by user `i`, the collected segment count is
//! `S_fi = x_fi + Σ_{j≠i} min(B·M_ij, x_fj)`; the ratio fetched from the
//! network is `max(S^f_rec − S_fi, 0) / S^f_rec`. Only `P(S_fi = b)` for
//! `b < S^f_rec` matters, so mass at or above the threshold is lumped.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use thiserror::Error;

use crate::contact::{
    expected_truncated_transfer, transfer_distribution_of, KahanSum, PoissonParams,
};
use crate::model::{check_feasible, ModelError, Placement, Scenario, Violation};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("placement violates {} constraint(s), first: {}", .0.len(), .0[0])]
    InfeasiblePlacement(Vec<Violation>),
    #[error("delay window must be finite and nonnegative, got {0}")]
    InvalidWindow(f64),
    #[error("index out of range: file {file}, user {user}")]
    IndexOutOfRange { file: usize, user: usize },
    #[error("Monte Carlo estimate needs at least one sample")]
    NoSamples,
}

pub(crate) fn ensure_evaluable(
    scenario: &Scenario,
    placement: &Placement,
    window: f64,
) -> Result<(), EvalError> {
    if !(window.is_finite() && window >= 0.0) {
        return Err(EvalError::InvalidWindow(window));
    }
    let verdict = check_feasible(scenario, placement)?;
    if !verdict.is_ok() {
        return Err(EvalError::InfeasiblePlacement(verdict.violations));
    }
    Ok(())
}

/// Law of `S_fi` truncated at the recovery threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentDistribution {
    /// `P(S_fi = b)` for `b < S^f_rec`.
    pub mass_below: Vec<f64>,
    /// `P(S_fi ≥ S^f_rec)`.
    pub mass_at_or_above: f64,
}

impl SegmentDistribution {
    /// `E[max(S^f_rec − S_fi, 0)] / S^f_rec`.
    pub fn network_ratio(&self) -> f64 {
        network_ratio(&self.mass_below)
    }
}

fn network_ratio(mass_below: &[f64]) -> f64 {
    let rec = mass_below.len() as f64;
    let missing: f64 = mass_below
        .iter()
        .enumerate()
        .map(|(b, p)| (rec - b as f64) * p)
        .sum();
    (missing / rec).clamp(0.0, 1.0)
}

/// Totals and breakdown of an NLR evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct NlrReport {
    /// Mean over users of `per_user`.
    pub total: f64,
    /// `r_i = Σ_f P_fi r_fi`.
    pub per_user: Vec<f64>,
    /// `r_fi`, file-major.
    pub per_pair: Vec<Vec<f64>>,
}

impl NlrReport {
    fn assemble(scenario: &Scenario, per_pair: Vec<Vec<f64>>) -> Self {
        let users = scenario.num_users();
        let per_user: Vec<f64> = (0..users)
            .map(|i| {
                per_pair
                    .iter()
                    .enumerate()
                    .map(|(f, row)| scenario.popularity(f, i) * row[i])
                    .sum::<f64>()
                    .clamp(0.0, 1.0)
            })
            .collect();
        let total = (per_user.iter().sum::<f64>() / users as f64).clamp(0.0, 1.0);
        NlrReport {
            total,
            per_user,
            per_pair,
        }
    }
}

/// Scratch buffers for repeated convolutions.
#[derive(Default)]
pub(crate) struct Convolver {
    below: Vec<f64>,
    next: Vec<f64>,
}

impl Convolver {
    /// Fills `self.below` with the truncated law of `S_fi` and returns the lumped tail.
    pub(crate) fn run(
        &mut self,
        scenario: &Scenario,
        row: &[u32],
        window: f64,
        file: usize,
        user: usize,
    ) -> f64 {
        let rec = scenario.recover_segments(file) as usize;
        let budget = scenario.contact_budget();
        self.below.clear();
        self.below.resize(rec, 0.0);
        let own = row[user] as usize;
        if own >= rec {
            return 1.0;
        }
        self.below[own] = 1.0;
        let mut above = 0.0;

        for (j, &cached) in row.iter().enumerate() {
            if j == user || cached == 0 {
                continue;
            }
            let mean = scenario.contact_rate(user, j) * window;
            if mean == 0.0 {
                continue;
            }
            let law = PoissonParams::new(mean).expect("validated rate and window");
            let transfer = transfer_distribution_of(&law, budget, cached);
            self.next.clear();
            self.next.resize(rec, 0.0);
            for (b, &p) in self.below.iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                for (segments, q) in transfer.iter() {
                    let reached = b + segments as usize;
                    if reached < rec {
                        self.next[reached] += p * q;
                    } else {
                        above += p * q;
                    }
                }
            }
            std::mem::swap(&mut self.below, &mut self.next);
        }
        above
    }

    pub(crate) fn ratio(&self) -> f64 {
        network_ratio(&self.below)
    }
}

/// Exact truncated law of the segments user `user` holds for `file` after `window`.
pub fn collected_distribution(
    scenario: &Scenario,
    placement: &Placement,
    window: f64,
    file: usize,
    user: usize,
) -> Result<SegmentDistribution, EvalError> {
    ensure_evaluable(scenario, placement, window)?;
    if file >= scenario.num_files() || user >= scenario.num_users() {
        return Err(EvalError::IndexOutOfRange { file, user });
    }
    let mut conv = Convolver::default();
    let above = conv.run(scenario, placement.file_row(file), window, file, user);
    Ok(SegmentDistribution {
        mass_below: conv.below,
        mass_at_or_above: above,
    })
}

/// Expected NLR `R(x, T)`, evaluated exactly.
pub fn expected_nlr(
    scenario: &Scenario,
    placement: &Placement,
    window: f64,
) -> Result<NlrReport, EvalError> {
    ensure_evaluable(scenario, placement, window)?;
    Ok(expected_nlr_unchecked(scenario, placement, window))
}

pub(crate) fn expected_nlr_unchecked(
    scenario: &Scenario,
    placement: &Placement,
    window: f64,
) -> NlrReport {
    let mut conv = Convolver::default();
    let per_pair = (0..scenario.num_files())
        .map(|f| {
            let row = placement.file_row(f);
            (0..scenario.num_users())
                .map(|i| {
                    conv.run(scenario, row, window, f, i);
                    conv.ratio()
                })
                .collect()
        })
        .collect();
    NlrReport::assemble(scenario, per_pair)
}

/// `Σ_i P_fi · r_fi` for one file, given that file's counts across users.
pub(crate) fn exact_file_weight(scenario: &Scenario, row: &[u32], window: f64, file: usize) -> f64 {
    let mut conv = Convolver::default();
    (0..scenario.num_users())
        .map(|i| {
            conv.run(scenario, row, window, file, i);
            scenario.popularity(file, i) * conv.ratio()
        })
        .sum()
}

/// `E[S_fi]` under the truncated transfer law.
fn expected_collected(scenario: &Scenario, row: &[u32], window: f64, user: usize) -> f64 {
    let budget = scenario.contact_budget();
    let mut total = f64::from(row[user]);
    for (j, &cached) in row.iter().enumerate() {
        if j == user || cached == 0 {
            continue;
        }
        let mean = scenario.contact_rate(user, j) * window;
        total += expected_truncated_transfer(mean, budget, cached).expect("validated inputs");
    }
    total
}

pub(crate) fn lower_bound_pair(scenario: &Scenario, row: &[u32], window: f64, file: usize, user: usize) -> f64 {
    let rec = f64::from(scenario.recover_segments(file));
    ((rec - expected_collected(scenario, row, window, user)).max(0.0) / rec).min(1.0)
}

/// `Σ_i P_fi · r^lb_fi` for one file, given that file's counts across users.
pub(crate) fn lower_bound_file_weight(scenario: &Scenario, row: &[u32], window: f64, file: usize) -> f64 {
    (0..scenario.num_users())
        .map(|i| scenario.popularity(file, i) * lower_bound_pair(scenario, row, window, file, i))
        .sum()
}

/// Lower bound `R_lb(x, T)`, which replaces `E[max(S_rec − S, 0)]` by
/// `max(S_rec − E[S], 0)`.
pub fn lower_bound_nlr(
    scenario: &Scenario,
    placement: &Placement,
    window: f64,
) -> Result<NlrReport, EvalError> {
    ensure_evaluable(scenario, placement, window)?;
    Ok(lower_bound_nlr_unchecked(scenario, placement, window))
}

pub(crate) fn lower_bound_nlr_unchecked(
    scenario: &Scenario,
    placement: &Placement,
    window: f64,
) -> NlrReport {
    let per_pair = (0..scenario.num_files())
        .map(|f| {
            let row = placement.file_row(f);
            (0..scenario.num_users())
                .map(|i| lower_bound_pair(scenario, row, window, f, i))
                .collect()
        })
        .collect();
    NlrReport::assemble(scenario, per_pair)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarloEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub samples: usize,
}

const MC_CHUNK: usize = 2048;

/// Sampling estimate of `R(x, T)`.
///
/// Sample `k` draws from its own ChaCha stream (`seed`, stream `k`), and
/// chunk sums are reduced in index order, so the result does not depend on
/// how many worker threads run.
pub fn expected_nlr_monte_carlo(
    scenario: &Scenario,
    placement: &Placement,
    window: f64,
    samples: usize,
    seed: u64,
) -> Result<MonteCarloEstimate, EvalError> {
    ensure_evaluable(scenario, placement, window)?;
    if samples == 0 {
        return Err(EvalError::NoSamples);
    }
    let users = scenario.num_users();
    let mut pairs = Vec::new();
    for i in 0..users {
        for j in (i + 1)..users {
            let mean = scenario.contact_rate(i, j) * window;
            let sampler = (mean > 0.0).then(|| Poisson::new(mean).expect("positive finite mean"));
            pairs.push((i, j, sampler));
        }
    }

    let chunks = samples.div_ceil(MC_CHUNK);
    let partials: Vec<(f64, f64)> = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut contacts = vec![0u64; users * users];
            let mut sum = KahanSum::default();
            let mut sum_sq = KahanSum::default();
            let end = ((chunk + 1) * MC_CHUNK).min(samples);
            for sample in chunk * MC_CHUNK..end {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(sample as u64);
                for (i, j, sampler) in &pairs {
                    let m = sampler.as_ref().map_or(0, |s| s.sample(&mut rng) as u64);
                    contacts[i * users + j] = m;
                    contacts[j * users + i] = m;
                }
                let value = realized_nlr(scenario, placement, &contacts);
                sum.add(value);
                sum_sq.add(value * value);
            }
            (sum.value(), sum_sq.value())
        })
        .collect();

    let mut sum = KahanSum::default();
    let mut sum_sq = KahanSum::default();
    for (s, sq) in partials {
        sum.add(s);
        sum_sq.add(sq);
    }
    let n = samples as f64;
    let estimate = sum.value() / n;
    let std_error = if samples > 1 {
        let var = ((sum_sq.value() - n * estimate * estimate) / (n - 1.0)).max(0.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    Ok(MonteCarloEstimate {
        estimate,
        std_error,
        samples,
    })
}

/// The bracketed NLR expression for one draw of all contact counts.
fn realized_nlr(scenario: &Scenario, placement: &Placement, contacts: &[u64]) -> f64 {
    let users = scenario.num_users();
    let budget = u64::from(scenario.contact_budget());
    let mut total = 0.0;
    for f in 0..scenario.num_files() {
        let rec = u64::from(scenario.recover_segments(f));
        let row = placement.file_row(f);
        for i in 0..users {
            let p = scenario.popularity(f, i);
            if p == 0.0 {
                continue;
            }
            let mut collected = u64::from(row[i]);
            for (j, &cached) in row.iter().enumerate() {
                if j != i {
                    collected += (budget * contacts[i * users + j]).min(u64::from(cached));
                }
            }
            let missing = rec.saturating_sub(collected);
            total += p * (missing as f64 / rec as f64);
        }
    }
    total / users as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::{scenario, uniform_rates};

    const E: f64 = std::f64::consts::E;

    fn single_pair() -> Scenario {
        scenario(
            vec![1, 1],
            1,
            uniform_rates(2, 1.0),
            vec![vec![1.0, 1.0]],
            vec![1],
            vec![2],
        )
    }

    fn triangle() -> Scenario {
        scenario(
            vec![1, 1, 1],
            1,
            uniform_rates(3, 1.0),
            vec![vec![1.0, 1.0, 1.0]],
            vec![1],
            vec![3],
        )
    }

    #[test]
    fn empty_caches_without_time_collect_nothing() {
        let s = single_pair();
        let d = collected_distribution(&s, &Placement::zeros(1, 2), 0.0, 0, 0).unwrap();
        assert_eq!(d.mass_below, vec![1.0]);
        assert_eq!(d.mass_at_or_above, 0.0);
        let r = expected_nlr(&s, &Placement::zeros(1, 2), 0.0).unwrap();
        assert_eq!(r.total, 1.0);
    }

    #[test]
    fn self_cache_saturates() {
        let s = scenario(vec![3], 1, vec![vec![0.0]], vec![vec![1.0]], vec![3], vec![3]);
        let x = Placement::from_rows(vec![vec![3]]).unwrap();
        let d = collected_distribution(&s, &x, 5.0, 0, 0).unwrap();
        assert_eq!(d.mass_at_or_above, 1.0);
        assert_eq!(expected_nlr(&s, &x, 0.0).unwrap().total, 0.0);
    }

    #[test]
    fn single_neighbor_bernoulli() {
        let s = single_pair();
        let x = Placement::from_rows(vec![vec![0, 1]]).unwrap();
        let d = collected_distribution(&s, &x, 1.0, 0, 0).unwrap();
        assert!((d.mass_below[0] - 1.0 / E).abs() < 1e-15);
        assert!((d.mass_at_or_above - (1.0 - 1.0 / E)).abs() < 1e-15);

        let r = expected_nlr(&s, &x, 1.0).unwrap();
        assert!((r.per_user[0] - 1.0 / E).abs() < 1e-15);
        assert_eq!(r.per_user[1], 0.0);
        assert!((r.total - 0.5 / E).abs() < 1e-15);

        let lb = lower_bound_nlr(&s, &x, 1.0).unwrap();
        assert!((lb.total - r.total).abs() < 1e-15);
    }

    #[test]
    fn two_neighbors_open_a_gap() {
        let s = triangle();
        let x = Placement::from_rows(vec![vec![0, 1, 1]]).unwrap();
        let exact = expected_nlr(&s, &x, 1.0).unwrap();
        let lb = lower_bound_nlr(&s, &x, 1.0).unwrap();
        assert!((exact.per_pair[0][0] - E.powi(-2)).abs() < 1e-15);
        assert_eq!(lb.per_pair[0][0], 0.0);
        assert!((exact.per_user[0] - lb.per_user[0] - 0.1353353).abs() < 1e-7);
    }

    #[test]
    fn saturated_expectation_clamps_lower_bound() {
        let s = triangle();
        let x = Placement::from_rows(vec![vec![1, 1, 1]]).unwrap();
        assert_eq!(lower_bound_nlr(&s, &x, 3.0).unwrap().total, 0.0);
    }

    #[test]
    fn infeasible_placement_is_rejected() {
        let s = single_pair();
        let x = Placement::from_rows(vec![vec![2, 0]]).unwrap();
        assert!(matches!(
            expected_nlr(&s, &x, 1.0),
            Err(EvalError::InfeasiblePlacement(_))
        ));
        assert!(matches!(
            expected_nlr(&s, &Placement::zeros(1, 2), -1.0),
            Err(EvalError::InvalidWindow(_))
        ));
    }

    #[test]
    fn monte_carlo_trivial_cases() {
        let s = single_pair();
        let full = scenario(
            vec![1, 1],
            1,
            uniform_rates(2, 1.0),
            vec![vec![1.0, 1.0]],
            vec![1],
            vec![2],
        );
        let x = Placement::from_rows(vec![vec![1, 1]]).unwrap();
        let mc = expected_nlr_monte_carlo(&full, &x, 2.0, 500, 3).unwrap();
        assert_eq!((mc.estimate, mc.std_error), (0.0, 0.0));

        let mc = expected_nlr_monte_carlo(&s, &Placement::zeros(1, 2), 0.0, 300, 3).unwrap();
        assert_eq!(mc.estimate, 1.0);
        assert!(matches!(
            expected_nlr_monte_carlo(&s, &Placement::zeros(1, 2), 0.0, 0, 3),
            Err(EvalError::NoSamples)
        ));
    }

    #[test]
    fn monte_carlo_agrees_with_exact_single_pair() {
        let s = single_pair();
        let x = Placement::from_rows(vec![vec![0, 1]]).unwrap();
        let mc = expected_nlr_monte_carlo(&s, &x, 1.0, 1_000_000, 42).unwrap();
        assert!((mc.estimate - 0.5 / E).abs() <= 3.0 * mc.std_error, "{mc:?}");
    }

    #[test]
    fn monte_carlo_is_deterministic_across_thread_counts() {
        let s = triangle();
        let x = Placement::from_rows(vec![vec![0, 1, 1]]).unwrap();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| expected_nlr_monte_carlo(&s, &x, 0.7, 10_000, 9).unwrap())
        };
        assert_eq!(run(1), run(3));
    }

    #[test]
    fn report_total_is_user_mean() {
        let s = triangle();
        let x = Placement::from_rows(vec![vec![1, 0, 1]]).unwrap();
        for report in [
            expected_nlr(&s, &x, 0.4).unwrap(),
            lower_bound_nlr(&s, &x, 0.4).unwrap(),
        ] {
            let mean = report.per_user.iter().sum::<f64>() / 3.0;
            assert!((report.total - mean).abs() < 1e-15);
        }
    }
}
