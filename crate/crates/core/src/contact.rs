//! Poisson contact counts and the truncated per-neighbor transfer law.
//!
//! `M` is the number of contacts between two users in a window of length
//! `T`, Poisson with mean `λT`. A neighbor caching `x` segments hands over
//! `min(B·M, x)` of them.

use statrs::function::gamma::ln_gamma;
use thiserror::Error;

/// Above this mean or count the pmf is evaluated in log space.
const LOG_SPACE_THRESHOLD: f64 = 30.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("Poisson mean must be finite and nonnegative, got {0}")]
    InvalidMean(f64),
    #[error("contact budget must be positive")]
    ZeroBudget,
}

/// Kahan-compensated running sum.
#[derive(Debug, Default, Clone, Copy)]
pub(crate) struct KahanSum {
    sum: f64,
    compensation: f64,
}

impl KahanSum {
    pub(crate) fn add(&mut self, value: f64) {
        let y = value - self.compensation;
        let t = self.sum + y;
        self.compensation = (t - self.sum) - y;
        self.sum = t;
    }

    pub(crate) fn value(&self) -> f64 {
        self.sum
    }
}

/// Poisson law of the contact count over one window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoissonParams {
    mean: f64,
}

impl PoissonParams {
    pub fn new(mean: f64) -> Result<Self, DomainError> {
        if !mean.is_finite() || mean < 0.0 {
            return Err(DomainError::InvalidMean(mean));
        }
        Ok(PoissonParams { mean })
    }

    /// Contacts expected between users `i`, `j` within a window of length `window`.
    pub fn for_window(rate: f64, window: f64) -> Result<Self, DomainError> {
        Self::new(rate * window)
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// `P(M = m)`.
    pub fn pmf(&self, m: u64) -> f64 {
        let mu = self.mean;
        if mu == 0.0 {
            return if m == 0 { 1.0 } else { 0.0 };
        }
        if mu > LOG_SPACE_THRESHOLD || m as f64 > LOG_SPACE_THRESHOLD {
            let m = m as f64;
            return (-mu + m * mu.ln() - ln_gamma(m + 1.0)).exp().min(1.0);
        }
        let mut p = (-mu).exp();
        for t in 1..=m {
            p *= mu / t as f64;
        }
        p
    }

    /// `P(M < m)`, Kahan-summed.
    pub fn lower_mass(&self, m: u64) -> f64 {
        let mut acc = KahanSum::default();
        for k in 0..m {
            acc.add(self.pmf(k));
        }
        acc.value().min(1.0)
    }

    /// `P(M ≤ m)`.
    pub fn cdf(&self, m: u64) -> f64 {
        self.lower_mass(m + 1)
    }

    /// `P(M ≥ m)` as `1 − P(M < m)`.
    pub fn upper_tail(&self, m: u64) -> f64 {
        let mut acc = KahanSum::default();
        acc.add(1.0);
        for k in 0..m {
            acc.add(-self.pmf(k));
        }
        acc.value().max(0.0)
    }
}

pub fn poisson_pmf(mean: f64, m: u64) -> Result<f64, DomainError> {
    Ok(PoissonParams::new(mean)?.pmf(m))
}

/// Number of contacts needed to move `cap` segments at `budget` per contact.
#[inline]
fn contacts_to_saturate(budget: u32, cap: u32) -> u64 {
    u64::from(cap.div_ceil(budget))
}

/// `E[min(B·M, k)]` for `M ~ Poisson(mean)`.
pub fn expected_truncated_transfer(mean: f64, budget: u32, cap: u32) -> Result<f64, DomainError> {
    if budget == 0 {
        return Err(DomainError::ZeroBudget);
    }
    let law = PoissonParams::new(mean)?;
    if cap == 0 {
        return Ok(0.0);
    }
    let saturating = contacts_to_saturate(budget, cap);
    let mut partial = KahanSum::default();
    for m in 1..saturating {
        partial.add(f64::from(budget) * m as f64 * law.pmf(m));
    }
    Ok(partial.value() + f64::from(cap) * law.upper_tail(saturating))
}

/// Law of `min(B·M, x)`: atoms at `B·m` for `m < ⌈x/B⌉` and at `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferDistribution {
    support: Vec<u32>,
    mass: Vec<f64>,
}

impl TransferDistribution {
    /// Ascending segment counts.
    pub fn support(&self) -> &[u32] {
        &self.support
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.support.iter().copied().zip(self.mass.iter().copied())
    }

    pub fn expectation(&self) -> f64 {
        self.iter().map(|(s, p)| f64::from(s) * p).sum()
    }

    /// `P(S ≤ value)`.
    pub fn cdf(&self, value: u32) -> f64 {
        self.iter()
            .take_while(|&(s, _)| s <= value)
            .map(|(_, p)| p)
            .sum()
    }
}

pub fn transfer_distribution(
    mean: f64,
    budget: u32,
    cached: u32,
) -> Result<TransferDistribution, DomainError> {
    if budget == 0 {
        return Err(DomainError::ZeroBudget);
    }
    let law = PoissonParams::new(mean)?;
    Ok(transfer_distribution_of(&law, budget, cached))
}

pub(crate) fn transfer_distribution_of(
    law: &PoissonParams,
    budget: u32,
    cached: u32,
) -> TransferDistribution {
    let saturating = contacts_to_saturate(budget, cached);
    let mut support = Vec::with_capacity(saturating as usize + 1);
    let mut mass = Vec::with_capacity(saturating as usize + 1);
    for m in 0..saturating {
        // B·m < x for every m below the saturation count, so no atom coincides with x.
        support.push(budget * m as u32);
        mass.push(law.pmf(m));
    }
    support.push(cached);
    mass.push(law.upper_tail(saturating));
    TransferDistribution { support, mass }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Poisson};

    const E: f64 = std::f64::consts::E;

    /// ln m! by direct summation; independent of the pmf code path.
    fn ln_factorial(m: u64) -> f64 {
        (2..=m).map(|k| (k as f64).ln()).sum()
    }

    fn monte_carlo_truncated(mean: f64, budget: u32, cap: u32, draws: usize) -> (f64, f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let law = Poisson::new(mean).unwrap();
        let (mut sum, mut sq) = (0.0, 0.0);
        for _ in 0..draws {
            let m: f64 = law.sample(&mut rng);
            let v = (f64::from(budget) * m).min(f64::from(cap));
            sum += v;
            sq += v * v;
        }
        let n = draws as f64;
        let mean_est = sum / n;
        let var = (sq / n - mean_est * mean_est).max(0.0);
        (mean_est, (var / n).sqrt())
    }

    #[test]
    fn pmf_examples() {
        assert_eq!(poisson_pmf(0.0, 0).unwrap(), 1.0);
        assert_eq!(poisson_pmf(0.0, 3).unwrap(), 0.0);
        assert!((poisson_pmf(1.0, 0).unwrap() - 1.0 / E).abs() < 1e-15);
        let oracle = (-2.0 + 2f64.ln() - ln_factorial(1)).exp();
        assert!((poisson_pmf(2.0, 1).unwrap() - oracle).abs() < 1e-15);
        assert!((poisson_pmf(2.0, 1).unwrap() - 0.2706706).abs() < 1e-7);
    }

    #[test]
    fn pmf_rejects_negative_mean() {
        assert_eq!(poisson_pmf(-1.0, 0), Err(DomainError::InvalidMean(-1.0)));
        assert!(poisson_pmf(f64::NAN, 0).is_err());
    }

    #[test]
    fn pmf_log_space_agrees_with_direct_evaluation() {
        for &(mu, m) in &[(31.0, 25u64), (45.5, 40), (10.0, 35), (500.0, 480)] {
            let oracle = (-mu + m as f64 * f64::ln(mu) - ln_factorial(m)).exp();
            let got = poisson_pmf(mu, m).unwrap();
            assert!((got - oracle).abs() <= 1e-10 * oracle, "{mu} {m}: {got} vs {oracle}");
        }
    }

    #[test]
    fn pmf_mass_is_complete() {
        for &mu in &[0.0, 0.3, 1.0, 7.5, 29.9, 30.1, 150.0, 2_000.0, 10_000.0] {
            let top = (mu + 12.0 * f64::sqrt(mu) + 30.0).ceil() as u64;
            let mut acc = KahanSum::default();
            for m in 0..=top {
                acc.add(poisson_pmf(mu, m).unwrap());
            }
            assert!(acc.value() >= 1.0 - 1e-10, "mu={mu}: {}", acc.value());
            assert!(acc.value() <= 1.0 + 1e-10);
        }
    }

    #[test]
    fn truncated_transfer_examples() {
        assert_eq!(expected_truncated_transfer(3.7, 2, 0).unwrap(), 0.0);
        let got = expected_truncated_transfer(1.0, 1, 1).unwrap();
        assert!((got - (1.0 - 1.0 / E)).abs() < 1e-15);
        let got = expected_truncated_transfer(2.0, 2, 3).unwrap();
        let closed_form = 4.0 * E.powi(-2) + 3.0 * (1.0 - 3.0 * E.powi(-2));
        assert!((got - closed_form).abs() < 1e-14);
        assert!((got - 2.3233236).abs() < 1e-7);
    }

    #[test]
    fn truncated_transfer_matches_monte_carlo() {
        for &(mean, budget, cap) in &[(1.0, 1, 1), (2.0, 2, 3)] {
            let exact = expected_truncated_transfer(mean, budget, cap).unwrap();
            let (est, se) = monte_carlo_truncated(mean, budget, cap, 1_000_000);
            assert!((est - exact).abs() < 4.0 * se, "{exact} vs {est}±{se}");
        }
    }

    #[test]
    fn truncated_transfer_rejects_zero_budget() {
        assert_eq!(
            expected_truncated_transfer(1.0, 0, 2),
            Err(DomainError::ZeroBudget)
        );
    }

    #[test]
    fn transfer_distribution_examples() {
        let d = transfer_distribution(4.2, 3, 0).unwrap();
        assert_eq!(d.support(), &[0]);
        assert_eq!(d.mass(), &[1.0]);

        let d = transfer_distribution(1.0, 1, 1).unwrap();
        assert_eq!(d.support(), &[0, 1]);
        assert!((d.mass()[0] - 1.0 / E).abs() < 1e-15);
        assert!((d.mass()[1] - (1.0 - 1.0 / E)).abs() < 1e-15);

        let d = transfer_distribution(1.0, 2, 3).unwrap();
        assert_eq!(d.support(), &[0, 2, 3]);
        assert!((d.mass()[0] - 1.0 / E).abs() < 1e-15);
        assert!((d.mass()[1] - 1.0 / E).abs() < 1e-15);
        assert!((d.mass()[2] - (1.0 - 2.0 / E)).abs() < 1e-15);
    }

    #[test]
    fn transfer_distribution_matches_sampling() {
        let d = transfer_distribution(1.0, 1, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let law = Poisson::new(1.0).unwrap();
        let draws = 200_000;
        let zeros = (0..draws)
            .filter(|_| {
                let m: f64 = law.sample(&mut rng);
                m == 0.0
            })
            .count() as f64;
        let p = d.mass()[0];
        let se = (p * (1.0 - p) / draws as f64).sqrt();
        assert!((zeros / draws as f64 - p).abs() < 4.0 * se);
    }

    proptest! {
        #[test]
        fn distribution_mass_sums_to_one(mean in 0.0f64..60.0, budget in 1u32..4, cached in 0u32..10) {
            let d = transfer_distribution(mean, budget, cached).unwrap();
            let total: f64 = d.mass().iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            prop_assert!(d.support().windows(2).all(|w| w[0] < w[1]));
        }

        #[test]
        fn distribution_expectation_matches_direct_formula(mean in 0.0f64..40.0, budget in 1u32..4, cached in 0u32..10) {
            let d = transfer_distribution(mean, budget, cached).unwrap();
            let direct = expected_truncated_transfer(mean, budget, cached).unwrap();
            prop_assert!((d.expectation() - direct).abs() < 1e-10);
        }

        #[test]
        fn truncated_transfer_is_capped(mean in 0.0f64..50.0, budget in 1u32..4, cap in 0u32..10) {
            let e = expected_truncated_transfer(mean, budget, cap).unwrap();
            prop_assert!(e <= (f64::from(budget) * mean).min(f64::from(cap)) + 1e-12);
            prop_assert!(e >= 0.0);
        }

        #[test]
        fn truncated_transfer_is_monotone(mean in 0.0f64..20.0, dm in 0.0f64..5.0, budget in 1u32..4, cap in 0u32..8) {
            let lo = expected_truncated_transfer(mean, budget, cap).unwrap();
            let hi_mean = expected_truncated_transfer(mean + dm, budget, cap).unwrap();
            let hi_cap = expected_truncated_transfer(mean, budget, cap + 1).unwrap();
            prop_assert!(hi_mean >= lo - 1e-12);
            prop_assert!(hi_cap >= lo - 1e-12);
        }

        #[test]
        fn longer_windows_dominate_stochastically(mean in 0.0f64..10.0, dm in 0.0f64..5.0, budget in 1u32..4, cached in 0u32..8) {
            let short = transfer_distribution(mean, budget, cached).unwrap();
            let long = transfer_distribution(mean + dm, budget, cached).unwrap();
            for &v in short.support() {
                prop_assert!(long.cdf(v) <= short.cdf(v) + 1e-12);
            }
        }
    }
}
