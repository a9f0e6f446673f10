//! Synthetic scenarios: Zipf popularity, Gamma contact rates, random segment
//! counts.
//!
//! Randomness comes from one ChaCha8 generator per field family, all keyed by
//! the config seed and told apart by stream id ([`CONTACT_STREAM`],
//! [`RECOVER_STREAM`]). A new family gets a new stream, so existing draws
//! never shift.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::model::{ModelError, Scenario, ScenarioParts};

pub const CONTACT_STREAM: u64 = 1;
pub const RECOVER_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub num_users: usize,
    pub num_files: usize,
    pub cache_capacity: u32,
    pub contact_budget: u32,
    pub zipf_shape: f64,
    pub gamma_shape: f64,
    /// Scale (mean / shape) of the contact-rate Gamma law.
    pub gamma_scale: f64,
    pub recover_range: (u32, u32),
    pub max_multiplier: u32,
    pub nlr_limit: f64,
    pub delay_limit: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            num_users: 10,
            num_files: 50,
            cache_capacity: 3,
            contact_budget: 2,
            zipf_shape: 0.8,
            gamma_shape: 4.43,
            gamma_scale: 1.0 / 1088.0,
            recover_range: (1, 3),
            max_multiplier: 3,
            nlr_limit: 0.7,
            delay_limit: 400.0,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |field: &'static str, message: String| {
            Err(ModelError::Validation { field: field.into(), message })
        };
        if self.num_users == 0 {
            return bad("num_users", "must be positive".into());
        }
        if self.num_files == 0 {
            return bad("num_files", "must be positive".into());
        }
        if self.contact_budget == 0 {
            return bad("contact_budget", "must be positive".into());
        }
        if !(self.zipf_shape.is_finite() && self.zipf_shape >= 0.0) {
            return bad("zipf_shape", format!("{} is not a finite nonnegative number", self.zipf_shape));
        }
        if !(self.gamma_shape.is_finite() && self.gamma_shape > 0.0) {
            return bad("gamma_shape", format!("{} is not positive", self.gamma_shape));
        }
        if !(self.gamma_scale.is_finite() && self.gamma_scale > 0.0) {
            return bad("gamma_scale", format!("{} is not positive", self.gamma_scale));
        }
        let (lo, hi) = self.recover_range;
        if lo == 0 || lo > hi {
            return bad("recover_range", format!("[{lo}, {hi}] must satisfy 1 ≤ low ≤ high"));
        }
        if self.max_multiplier == 0 {
            return bad("max_multiplier", "must be positive".into());
        }
        Ok(())
    }
}

/// `P_f = f^{−γ} / Σ_k k^{−γ}` for `f = 1..=files`.
pub fn zipf_popularity(gamma: f64, files: usize) -> Vec<f64> {
    assert!(files >= 1, "need at least one file");
    let weights: Vec<f64> = (1..=files).map(|f| (f as f64).powf(-gamma)).collect();
    let total: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / total).collect()
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Draws one scenario; a pure function of `config`.
pub fn generate(config: &GeneratorConfig) -> Result<Scenario, ModelError> {
    config.validate()?;
    let users = config.num_users;
    let files = config.num_files;

    let zipf = zipf_popularity(config.zipf_shape, files);
    let popularity = zipf.iter().map(|&p| vec![p; users]).collect();

    let gamma = Gamma::new(config.gamma_shape, config.gamma_scale).map_err(|e| {
        ModelError::Validation { field: "gamma_shape".into(), message: e.to_string() }
    })?;
    let mut rng = stream(config.seed, CONTACT_STREAM);
    let mut rates = vec![vec![0.0; users]; users];
    for i in 0..users {
        for j in i + 1..users {
            let rate = gamma.sample(&mut rng);
            rates[i][j] = rate;
            rates[j][i] = rate;
        }
    }

    let mut rng = stream(config.seed, RECOVER_STREAM);
    let (lo, hi) = config.recover_range;
    let recover: Vec<u32> = (0..files).map(|_| rng.random_range(lo..=hi)).collect();
    let max = recover.iter().map(|&r| r * config.max_multiplier).collect();

    Scenario::new(ScenarioParts {
        cache_capacity: vec![config.cache_capacity; users],
        contact_budget: config.contact_budget,
        contact_rate: rates,
        popularity,
        recover_segments: recover,
        max_segments: max,
        nlr_limit: config.nlr_limit,
        delay_limit: config.delay_limit,
        zipf_shape: vec![config.zipf_shape; users],
    })
}
