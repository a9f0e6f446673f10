//! Problem instances, cache placements and the placement feasibility check.
//!
//! A [`Scenario`] is validated once at construction and never mutated
//! afterwards. The on-disk form is a JSON document with a fixed field order
//! and a `version` tag; see [`Scenario::to_text`].

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Current scenario/placement file schema version.
pub const FORMAT_VERSION: u32 = 1;

/// Tolerance on `Σ_f popularity[f][i] = 1`.
pub const POPULARITY_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: String,
        expected: usize,
        found: usize,
    },
    #[error("invalid field `{field}`: {message}")]
    Validation { field: String, message: String },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unsupported format version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> ModelError {
    ModelError::Validation {
        field: field.into(),
        message: message.into(),
    }
}

fn check_len(what: &str, expected: usize, found: usize) -> Result<(), ModelError> {
    if expected != found {
        return Err(ModelError::DimensionMismatch {
            what: what.to_string(),
            expected,
            found,
        });
    }
    Ok(())
}

impl From<serde_json::Error> for ModelError {
    fn from(err: serde_json::Error) -> Self {
        ModelError::Parse {
            line: err.line(),
            column: err.column(),
            message: err.to_string(),
        }
    }
}

/// An immutable problem instance.
///
/// Indices are zero-based: files `0..num_files`, users `0..num_users`.
/// `popularity[f][i]` is the probability that user `i` requests file `f`.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    num_users: usize,
    num_files: usize,
    cache_capacity: Vec<u32>,
    contact_budget: u32,
    contact_rate: Vec<Vec<f64>>,
    popularity: Vec<Vec<f64>>,
    recover_segments: Vec<u32>,
    max_segments: Vec<u32>,
    nlr_limit: f64,
    delay_limit: f64,
    zipf_shape: Vec<f64>,
}

/// Textual file form; field order here is the canonical order on disk.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioDocument {
    version: u32,
    num_users: usize,
    num_files: usize,
    cache_capacity: Vec<u32>,
    contact_budget: u32,
    contact_rate: Vec<Vec<f64>>,
    popularity: Vec<Vec<f64>>,
    recover_segments: Vec<u32>,
    max_segments: Vec<u32>,
    nlr_limit: f64,
    delay_limit: f64,
    zipf_shape: Vec<f64>,
}

/// Field-by-field inputs for [`Scenario::new`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioParts {
    pub cache_capacity: Vec<u32>,
    pub contact_budget: u32,
    pub contact_rate: Vec<Vec<f64>>,
    pub popularity: Vec<Vec<f64>>,
    pub recover_segments: Vec<u32>,
    pub max_segments: Vec<u32>,
    pub nlr_limit: f64,
    pub delay_limit: f64,
    pub zipf_shape: Vec<f64>,
}

impl Scenario {
    /// Builds a scenario, inferring `U` from `cache_capacity` and `F` from
    /// `recover_segments`, and validating every invariant.
    pub fn new(parts: ScenarioParts) -> Result<Self, ModelError> {
        let scenario = Scenario {
            num_users: parts.cache_capacity.len(),
            num_files: parts.recover_segments.len(),
            cache_capacity: parts.cache_capacity,
            contact_budget: parts.contact_budget,
            contact_rate: parts.contact_rate,
            popularity: parts.popularity,
            recover_segments: parts.recover_segments,
            max_segments: parts.max_segments,
            nlr_limit: parts.nlr_limit,
            delay_limit: parts.delay_limit,
            zipf_shape: parts.zipf_shape,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    fn validate(&self) -> Result<(), ModelError> {
        let (u, f) = (self.num_users, self.num_files);
        if u == 0 {
            return Err(invalid("num_users", "must be positive"));
        }
        if f == 0 {
            return Err(invalid("num_files", "must be positive"));
        }
        check_len("cache_capacity", u, self.cache_capacity.len())?;
        if self.contact_budget == 0 {
            return Err(invalid("contact_budget", "must be positive"));
        }

        check_len("contact_rate rows", u, self.contact_rate.len())?;
        for (i, row) in self.contact_rate.iter().enumerate() {
            check_len(&format!("contact_rate[{i}]"), u, row.len())?;
            for (j, &rate) in row.iter().enumerate() {
                if !rate.is_finite() || rate < 0.0 {
                    return Err(invalid(
                        format!("contact_rate[{i}][{j}]"),
                        format!("rate must be finite and nonnegative, got {rate}"),
                    ));
                }
            }
            if row[i] != 0.0 {
                return Err(invalid(
                    format!("contact_rate[{i}][{i}]"),
                    "diagonal must be zero",
                ));
            }
        }
        for i in 0..u {
            for j in (i + 1)..u {
                if self.contact_rate[i][j] != self.contact_rate[j][i] {
                    return Err(invalid(
                        format!("contact_rate[{i}][{j}]"),
                        format!(
                            "matrix not symmetric: {} vs {}",
                            self.contact_rate[i][j], self.contact_rate[j][i]
                        ),
                    ));
                }
            }
        }

        check_len("popularity rows", f, self.popularity.len())?;
        for (file, row) in self.popularity.iter().enumerate() {
            check_len(&format!("popularity[{file}]"), u, row.len())?;
            for (i, &p) in row.iter().enumerate() {
                if !(0.0..=1.0).contains(&p) {
                    return Err(invalid(
                        format!("popularity[{file}][{i}]"),
                        format!("probability outside [0,1]: {p}"),
                    ));
                }
            }
        }
        for i in 0..u {
            let sum: f64 = self.popularity.iter().map(|row| row[i]).sum();
            if (sum - 1.0).abs() > POPULARITY_SUM_TOLERANCE {
                return Err(invalid(
                    "popularity",
                    format!("request probabilities of user {i} sum to {sum}, expected 1"),
                ));
            }
        }

        check_len("recover_segments", f, self.recover_segments.len())?;
        check_len("max_segments", f, self.max_segments.len())?;
        for file in 0..f {
            if self.recover_segments[file] == 0 {
                return Err(invalid(
                    format!("recover_segments[{file}]"),
                    "must be positive",
                ));
            }
            if self.max_segments[file] < self.recover_segments[file] {
                return Err(invalid(
                    format!("max_segments[{file}]"),
                    format!(
                        "{} is below recover_segments {}",
                        self.max_segments[file], self.recover_segments[file]
                    ),
                ));
            }
        }

        if !(0.0..=1.0).contains(&self.nlr_limit) {
            return Err(invalid("nlr_limit", "must lie in [0,1]"));
        }
        if !(self.delay_limit.is_finite() && self.delay_limit > 0.0) {
            return Err(invalid("delay_limit", "must be positive and finite"));
        }
        check_len("zipf_shape", u, self.zipf_shape.len())?;
        if let Some(i) = self
            .zipf_shape
            .iter()
            .position(|g| !g.is_finite() || *g < 0.0)
        {
            return Err(invalid(
                format!("zipf_shape[{i}]"),
                "must be finite and nonnegative",
            ));
        }
        Ok(())
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_files(&self) -> usize {
        self.num_files
    }

    pub fn cache_capacity(&self, user: usize) -> u32 {
        self.cache_capacity[user]
    }

    pub fn cache_capacities(&self) -> &[u32] {
        &self.cache_capacity
    }

    /// Segments exchanged per contact (B).
    pub fn contact_budget(&self) -> u32 {
        self.contact_budget
    }

    pub fn contact_rate(&self, i: usize, j: usize) -> f64 {
        self.contact_rate[i][j]
    }

    pub fn contact_rates(&self) -> &[Vec<f64>] {
        &self.contact_rate
    }

    pub fn popularity(&self, file: usize, user: usize) -> f64 {
        self.popularity[file][user]
    }

    pub fn popularities(&self) -> &[Vec<f64>] {
        &self.popularity
    }

    pub fn recover_segments(&self, file: usize) -> u32 {
        self.recover_segments[file]
    }

    pub fn max_segments(&self, file: usize) -> u32 {
        self.max_segments[file]
    }

    /// Largest recovery threshold over all files.
    pub fn max_recover_segments(&self) -> u32 {
        self.recover_segments.iter().copied().max().unwrap_or(0)
    }

    /// The cap R′ on the expected network load ratio.
    pub fn nlr_limit(&self) -> f64 {
        self.nlr_limit
    }

    pub fn delay_limit(&self) -> f64 {
        self.delay_limit
    }

    pub fn zipf_shape(&self, user: usize) -> f64 {
        self.zipf_shape[user]
    }

    /// Copy of the scenario with a different NLR cap.
    pub fn with_nlr_limit(&self, nlr_limit: f64) -> Result<Self, ModelError> {
        let mut copy = self.clone();
        copy.nlr_limit = nlr_limit;
        copy.validate()?;
        Ok(copy)
    }

    /// Copy of the scenario with a uniform cache capacity.
    pub fn with_uniform_capacity(&self, capacity: u32) -> Self {
        let mut copy = self.clone();
        copy.cache_capacity = vec![capacity; self.num_users];
        copy
    }

    pub fn into_parts(self) -> ScenarioParts {
        ScenarioParts {
            cache_capacity: self.cache_capacity,
            contact_budget: self.contact_budget,
            contact_rate: self.contact_rate,
            popularity: self.popularity,
            recover_segments: self.recover_segments,
            max_segments: self.max_segments,
            nlr_limit: self.nlr_limit,
            delay_limit: self.delay_limit,
            zipf_shape: self.zipf_shape,
        }
    }

    /// Serializes to the canonical text form. Reals are written in
    /// shortest round-trip decimal, so parsing gives back identical bits.
    pub fn to_text(&self) -> String {
        let doc = ScenarioDocument {
            version: FORMAT_VERSION,
            num_users: self.num_users,
            num_files: self.num_files,
            cache_capacity: self.cache_capacity.clone(),
            contact_budget: self.contact_budget,
            contact_rate: self.contact_rate.clone(),
            popularity: self.popularity.clone(),
            recover_segments: self.recover_segments.clone(),
            max_segments: self.max_segments.clone(),
            nlr_limit: self.nlr_limit,
            delay_limit: self.delay_limit,
            zipf_shape: self.zipf_shape.clone(),
        };
        let mut text = serde_json::to_string_pretty(&doc).expect("scenario is always serializable");
        text.push('\n');
        text
    }

    /// Parses and validates the canonical text form.
    pub fn from_text(text: &str) -> Result<Self, ModelError> {
        let doc: ScenarioDocument = serde_json::from_str(text)?;
        if doc.version != FORMAT_VERSION {
            return Err(ModelError::UnsupportedVersion {
                found: doc.version,
                expected: FORMAT_VERSION,
            });
        }
        let scenario = Scenario {
            num_users: doc.num_users,
            num_files: doc.num_files,
            cache_capacity: doc.cache_capacity,
            contact_budget: doc.contact_budget,
            contact_rate: doc.contact_rate,
            popularity: doc.popularity,
            recover_segments: doc.recover_segments,
            max_segments: doc.max_segments,
            nlr_limit: doc.nlr_limit,
            delay_limit: doc.delay_limit,
            zipf_shape: doc.zipf_shape,
        };
        scenario.validate()?;
        Ok(scenario)
    }
}

/// Serialize then parse.
pub fn scenario_roundtrip(scenario: &Scenario) -> Result<Scenario, ModelError> {
    Scenario::from_text(&scenario.to_text())
}

/// Segment counts `x[f][i]` cached at each user, stored file-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Placement {
    num_files: usize,
    num_users: usize,
    counts: Vec<u32>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlacementDocument {
    version: u32,
    counts: Vec<Vec<u32>>,
}

impl Placement {
    pub fn zeros(num_files: usize, num_users: usize) -> Self {
        Placement {
            num_files,
            num_users,
            counts: vec![0; num_files * num_users],
        }
    }

    /// Builds a placement from file-major rows (`rows[f][i]`).
    pub fn from_rows(rows: Vec<Vec<u32>>) -> Result<Self, ModelError> {
        let num_files = rows.len();
        let num_users = rows.first().map_or(0, Vec::len);
        let mut counts = Vec::with_capacity(num_files * num_users);
        for (f, row) in rows.into_iter().enumerate() {
            check_len(&format!("placement row {f}"), num_users, row.len())?;
            counts.extend(row);
        }
        Ok(Placement {
            num_files,
            num_users,
            counts,
        })
    }

    pub(crate) fn from_flat(num_files: usize, num_users: usize, counts: Vec<u32>) -> Self {
        debug_assert_eq!(counts.len(), num_files * num_users);
        Placement {
            num_files,
            num_users,
            counts,
        }
    }

    pub fn num_files(&self) -> usize {
        self.num_files
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    #[inline]
    pub fn get(&self, file: usize, user: usize) -> u32 {
        self.counts[file * self.num_users + user]
    }

    /// Counts of one file across all users.
    pub fn file_row(&self, file: usize) -> &[u32] {
        &self.counts[file * self.num_users..(file + 1) * self.num_users]
    }

    pub fn rows(&self) -> Vec<Vec<u32>> {
        self.counts
            .chunks(self.num_users.max(1))
            .take(self.num_files)
            .map(<[u32]>::to_vec)
            .collect()
    }

    pub fn total_segments(&self) -> u64 {
        self.counts.iter().map(|&c| u64::from(c)).sum()
    }

    pub fn to_text(&self) -> String {
        let doc = PlacementDocument {
            version: FORMAT_VERSION,
            counts: self.rows(),
        };
        let mut text = serde_json::to_string(&doc).expect("placement is always serializable");
        text.push('\n');
        text
    }

    pub fn from_text(text: &str) -> Result<Self, ModelError> {
        let doc: PlacementDocument = serde_json::from_str(text)?;
        if doc.version != FORMAT_VERSION {
            return Err(ModelError::UnsupportedVersion {
                found: doc.version,
                expected: FORMAT_VERSION,
            });
        }
        Placement::from_rows(doc.counts)
    }
}

/// Which placement constraint a [`Violation`] refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ConstraintKind {
    /// `Σ_f x[f][i] ≤ C_i`.
    Capacity,
    /// `Σ_i x[f][i] ≤ S^f_max`.
    SegmentBudget,
    /// `x[f][i] ≤ S^f_rec`.
    LevelRange,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ConstraintKind,
    pub file: Option<usize>,
    pub user: Option<usize>,
    /// How far the left-hand side exceeds its bound, in segments.
    pub excess: u64,
}

impl fmt::Display for Violation {
    fn fmt(&self, out: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            ConstraintKind::Capacity => write!(
                out,
                "cache capacity of user {} exceeded by {}",
                self.user.unwrap_or_default(),
                self.excess
            ),
            ConstraintKind::SegmentBudget => write!(
                out,
                "segment budget of file {} exceeded by {}",
                self.file.unwrap_or_default(),
                self.excess
            ),
            ConstraintKind::LevelRange => write!(
                out,
                "file {} at user {} exceeds its recovery threshold by {}",
                self.file.unwrap_or_default(),
                self.user.unwrap_or_default(),
                self.excess
            ),
        }
    }
}

/// Result of [`check_feasible`]; empty means feasible.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Feasibility {
    pub violations: Vec<Violation>,
}

impl Feasibility {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks constraints (capacity, segment budget, level range) and lists
/// every violation. Dimension mismatches are reported as errors.
pub fn check_feasible(scenario: &Scenario, placement: &Placement) -> Result<Feasibility, ModelError> {
    check_len("placement files", scenario.num_files(), placement.num_files())?;
    check_len("placement users", scenario.num_users(), placement.num_users())?;

    let (nf, nu) = (scenario.num_files(), scenario.num_users());
    let mut violations = Vec::new();

    for f in 0..nf {
        let rec = scenario.recover_segments(f);
        for i in 0..nu {
            let x = placement.get(f, i);
            if x > rec {
                violations.push(Violation {
                    kind: ConstraintKind::LevelRange,
                    file: Some(f),
                    user: Some(i),
                    excess: u64::from(x - rec),
                });
            }
        }
    }
    for i in 0..nu {
        let used: u64 = (0..nf).map(|f| u64::from(placement.get(f, i))).sum();
        let cap = u64::from(scenario.cache_capacity(i));
        if used > cap {
            violations.push(Violation {
                kind: ConstraintKind::Capacity,
                file: None,
                user: Some(i),
                excess: used - cap,
            });
        }
    }
    for f in 0..nf {
        let stored: u64 = placement.file_row(f).iter().map(|&c| u64::from(c)).sum();
        let budget = u64::from(scenario.max_segments(f));
        if stored > budget {
            violations.push(Violation {
                kind: ConstraintKind::SegmentBudget,
                file: Some(f),
                user: None,
                excess: stored - budget,
            });
        }
    }
    Ok(Feasibility { violations })
}

/// Window search parameters: `[t_min, t_max]`, ESA step η and tolerance ε.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchParams {
    pub t_min: f64,
    pub t_max: f64,
    pub step: f64,
    pub tolerance: f64,
}

impl SearchParams {
    pub fn new(t_min: f64, t_max: f64, step: f64, tolerance: f64) -> Result<Self, ModelError> {
        let params = SearchParams {
            t_min,
            t_max,
            step,
            tolerance,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.t_min.is_finite() && self.t_min >= 0.0) {
            return Err(invalid("t_min", "must be finite and nonnegative"));
        }
        if !(self.t_max.is_finite() && self.t_max > self.t_min) {
            return Err(invalid("t_max", "must be finite and above t_min"));
        }
        if !(self.tolerance.is_finite() && self.tolerance > 0.0) {
            return Err(invalid("tolerance", "must be positive"));
        }
        if !(self.step.is_finite() && self.step > self.tolerance) {
            return Err(invalid("step", "must exceed the tolerance"));
        }
        Ok(())
    }
}

impl Default for SearchParams {
    /// `T_min = 0`, `T_max = 400`, `η = 1`, `ε = 1e-6`.
    fn default() -> Self {
        SearchParams {
            t_min: 0.0,
            t_max: 400.0,
            step: 1.0,
            tolerance: 1e-6,
        }
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    /// Symmetric rate matrix with a single constant off-diagonal value.
    pub fn uniform_rates(users: usize, rate: f64) -> Vec<Vec<f64>> {
        (0..users)
            .map(|i| (0..users).map(|j| if i == j { 0.0 } else { rate }).collect())
            .collect()
    }

    pub fn scenario(
        capacity: Vec<u32>,
        budget: u32,
        rates: Vec<Vec<f64>>,
        popularity: Vec<Vec<f64>>,
        recover: Vec<u32>,
        max: Vec<u32>,
    ) -> Scenario {
        let users = capacity.len();
        Scenario::new(ScenarioParts {
            cache_capacity: capacity,
            contact_budget: budget,
            contact_rate: rates,
            popularity,
            recover_segments: recover,
            max_segments: max,
            nlr_limit: 0.5,
            delay_limit: 400.0,
            zipf_shape: vec![0.0; users],
        })
        .unwrap()
    }
}
