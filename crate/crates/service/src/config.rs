//! Study configuration: calendar, reminder windows, caps and limits.

use std::path::Path;

use chrono::{Duration, FixedOffset, NaiveDate};
use reflect_core::model::RESPONSE_WORD_CAP;
use reflect_core::scheduler::{IntervalPlan, ScheduleConfig, SUPPORTED_INTERVALS};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("cannot read {path}: {reason}")]
    Read { path: String, reason: String },
}

/// What happens to a response above the word cap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CapMode {
    #[default]
    Reject,
    Warn,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyConfig {
    pub study_id: String,
    /// Date of the first meeting.
    pub start_date: NaiveDate,
    pub interval_days: u32,
    pub meeting_count: u32,
    pub schedule: ScheduleConfig,
    pub response_word_cap: usize,
    pub word_cap_mode: CapMode,
    pub transcript_max_bytes: usize,
    pub session_ttl_hours: i64,
    /// Forwarded to the provider with every request.
    pub llm_seed: u64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            study_id: "study".into(),
            start_date: NaiveDate::from_ymd_opt(2025, 3, 3).expect("valid date"),
            interval_days: 5,
            meeting_count: 2,
            schedule: ScheduleConfig::default(),
            response_word_cap: RESPONSE_WORD_CAP,
            word_cap_mode: CapMode::Reject,
            transcript_max_bytes: 256 * 1024,
            session_ttl_hours: 7 * 24,
            llm_seed: 0,
        }
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !SUPPORTED_INTERVALS.contains(&self.interval_days) {
            return Err(ConfigError::Invalid(format!(
                "interval_days must be one of {SUPPORTED_INTERVALS:?}, got {}",
                self.interval_days
            )));
        }
        if self.meeting_count < 2 {
            return Err(ConfigError::Invalid("meeting_count must be at least 2".into()));
        }
        if self.study_id.trim().is_empty() {
            return Err(ConfigError::Invalid("study_id is empty".into()));
        }
        if self.response_word_cap == 0 || self.transcript_max_bytes == 0 || self.session_ttl_hours <= 0 {
            return Err(ConfigError::Invalid("caps and session lifetime must be positive".into()));
        }
        Ok(())
    }

    pub fn plan(&self) -> IntervalPlan {
        IntervalPlan::for_interval(self.interval_days as i64).expect("validated interval")
    }

    /// Date of meeting `k` (1-based).
    pub fn meeting_date(&self, k: u32) -> NaiveDate {
        self.start_date + Duration::days(((k.max(1) - 1) * self.interval_days) as i64)
    }

    /// The interval (meeting index) and day index a local date falls in.
    pub fn locate(&self, date: NaiveDate) -> Option<(u32, u32)> {
        (1..self.meeting_count).find_map(|k| {
            let d = (date - self.meeting_date(k)).num_days();
            (1..=self.interval_days as i64).contains(&d).then_some((k, d as u32))
        })
    }

    pub fn set_timezone(&mut self, tz: &str) -> Result<(), ConfigError> {
        let offset: FixedOffset = tz
            .parse()
            .map_err(|_| ConfigError::Invalid(format!("timezone {tz:?} is not an offset like +09:00")))?;
        self.schedule.utc_offset = offset;
        Ok(())
    }

    /// Reads TOML (`.toml`) or JSON.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        let cfg: Self = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| ConfigError::Invalid(e.to_string()))?
        } else {
            serde_json::from_str(&text).map_err(|e| ConfigError::Invalid(e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
