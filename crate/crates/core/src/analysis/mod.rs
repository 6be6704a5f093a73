//! Quantitative survey analysis: subscale scores, rank tests, effect sizes,
//! post-hoc comparisons, reliability and workload summaries.

mod posthoc;
mod rank;
mod reliability;
mod report;
mod survey;

pub use posthoc::{games_howell, ptukey_cdf, ptukey_sf, GroupMoments, PairwiseComparison};
pub use rank::{chi_square_sf, cliffs_delta, epsilon_squared, kruskal_wallis, midranks};
pub use reliability::{cronbach_alpha, pearson_r, two_item_alpha};
pub use report::{analyze, AnalysisReport, PairwiseDelta, SubscaleRow, TlxRow};
pub use survey::{
    build_subscales, parse_survey_csv, tlx_summary, Subscale, SubscaleScore, SurveyRow, TlxScale, TlxSummary,
    LIKERT_RANGE, QUESTION_COLUMNS, TLX_RANGE,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("invalid counts: {0}")]
    InvalidCounts(String),
    #[error("zero variance: {0}")]
    ZeroVariance(String),
    #[error("missing items: {0}")]
    MissingItems(String),
    #[error("{column} = {value} for participant {participant} is outside {min}..={max}")]
    OutOfRangeValue {
        participant: String,
        column: String,
        value: i64,
        min: i64,
        max: i64,
    },
    #[error("survey csv: {0}")]
    Csv(String),
}

pub type Result<T, E = AnalysisError> = std::result::Result<T, E>;

/// n, mean and sample (n−1) standard deviation of one group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Descriptives {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
}

impl Descriptives {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { n, mean: f64::NAN, sd: f64::NAN };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = if n < 2 { 0.0 } else { sample_variance(values, mean).sqrt() };
        Self { n, mean, sd }
    }
}

pub(crate) fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

pub(crate) fn sample_variance(values: &[f64], mean: f64) -> f64 {
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (values.len() as f64 - 1.0)
}

/// Result of one test. `statistic` holds H, q, r, δ or α depending on `test`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatResult {
    pub test: String,
    pub statistic: f64,
    pub p_value: Option<f64>,
    pub effect_size: Option<f64>,
    pub group_descriptives: Vec<Descriptives>,
}

pub(crate) fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(AnalysisError::DegenerateInput(format!("{what} contains a non-finite value")))
    }
}
