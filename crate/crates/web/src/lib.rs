//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Each operation has a plain Rust form returning a serializable value (used
//! by the native tests) and a `#[wasm_bindgen]` wrapper returning JSON text.

use std::str::FromStr;

use chrono::NaiveDate;
use reflect_core::analysis::{cliffs_delta, cronbach_alpha, kruskal_wallis, pearson_r, two_item_alpha, AnalysisError};
use reflect_core::model::{ParticipantId, PreferredWindow, StudyCondition, TeamId};
use reflect_core::scheduler::{build_schedule, EventKind, Intensity, MemberPrefs, ScheduleConfig, ScheduleError};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Debug, thiserror::Error)]
pub enum DemoError {
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
}

pub type Result<T> = std::result::Result<T, DemoError>;

#[derive(Debug, Serialize, PartialEq)]
pub struct PlanDay {
    pub day: u32,
    pub date: NaiveDate,
    pub intensity: Option<Intensity>,
}

#[derive(Debug, Serialize, PartialEq)]
pub struct EventRow {
    /// Local wall-clock time, `YYYY-MM-DD HH:MM`.
    pub at: String,
    pub kind: EventKind,
    pub member: String,
    pub day: u32,
    pub depth: Option<String>,
}

#[derive(Debug, Serialize, PartialEq)]
pub struct ScheduleView {
    pub days: Vec<PlanDay>,
    pub events: Vec<EventRow>,
}

/// Schedule for a two-member team. `windows` names each member's preferred
/// window, comma separated (`"morning,evening"`).
pub fn schedule(interval: u32, condition: &str, windows: &str, anchor: &str) -> Result<ScheduleView> {
    let condition = StudyCondition::from_str(condition.trim()).map_err(|e| DemoError::Input(e.to_string()))?;
    let anchor = NaiveDate::parse_from_str(anchor.trim(), "%Y-%m-%d")
        .map_err(|e| DemoError::Input(format!("anchor date: {e}")))?;
    let prefs = windows
        .split(',')
        .map(str::trim)
        .filter(|w| !w.is_empty())
        .enumerate()
        .map(|(i, w)| {
            Ok(MemberPrefs {
                participant_id: ParticipantId::new(format!("member-{}", i + 1)),
                preferred_window: PreferredWindow::from_str(w).map_err(|e| DemoError::Input(e.to_string()))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if prefs.is_empty() {
        return Err(DemoError::Input("name at least one member window".into()));
    }
    let cfg = ScheduleConfig::default();
    let next = anchor + chrono::Duration::days(interval as i64);
    let s = build_schedule(TeamId::new("demo"), anchor, next, condition, &prefs, &cfg)?;
    let days = (1..=interval)
        .map(|d| PlanDay {
            day: d,
            date: ScheduleConfig::date_of_day(anchor, d),
            intensity: s.plan.intensity(d),
        })
        .collect();
    let events = s
        .events
        .iter()
        .map(|e| EventRow {
            at: e.fire_at.with_timezone(&cfg.utc_offset).format("%Y-%m-%d %H:%M").to_string(),
            kind: e.kind,
            member: e.participant_id.to_string(),
            day: e.day_index,
            depth: e.depth.map(|d| d.to_string()),
        })
        .collect();
    Ok(ScheduleView { days, events })
}

#[derive(Debug, Serialize, PartialEq)]
pub struct RankView {
    pub n: Vec<usize>,
    pub h: f64,
    pub p: f64,
    pub epsilon_squared: Option<f64>,
    /// Cliff's δ for each pair of groups, as `("A vs B", δ)`.
    pub deltas: Vec<(String, f64)>,
}

/// Parses whitespace- or comma-separated numbers.
pub fn parse_sample(text: &str) -> Result<Vec<f64>> {
    text.split(|c: char| c.is_whitespace() || c == ',' || c == ';')
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|_| DemoError::Input(format!("not a number: {t:?}"))))
        .collect()
}

/// Kruskal–Wallis across the non-empty groups plus pairwise Cliff's δ.
pub fn rank_tests(groups: &[&str]) -> Result<RankView> {
    const NAMES: [&str; 6] = ["A", "B", "C", "D", "E", "F"];
    let parsed = groups
        .iter()
        .map(|g| parse_sample(g))
        .collect::<Result<Vec<_>>>()?;
    let named: Vec<(&str, Vec<f64>)> = NAMES.iter().copied().zip(parsed).filter(|(_, g)| !g.is_empty()).collect();
    let samples: Vec<&[f64]> = named.iter().map(|(_, g)| g.as_slice()).collect();
    let kw = kruskal_wallis(&samples)?;
    let mut deltas = Vec::new();
    for i in 0..named.len() {
        for j in i + 1..named.len() {
            deltas.push((format!("{} vs {}", named[i].0, named[j].0), cliffs_delta(&named[i].1, &named[j].1)?));
        }
    }
    Ok(RankView {
        n: samples.iter().map(|g| g.len()).collect(),
        h: kw.statistic,
        p: kw.p_value.unwrap_or(1.0),
        epsilon_squared: kw.effect_size,
        deltas,
    })
}

#[derive(Debug, Serialize, PartialEq)]
pub struct ReliabilityView {
    pub r: f64,
    /// Spearman–Brown value from `r`.
    pub alpha: f64,
    /// Cronbach's α from the raw items; absent when only `r` was given.
    pub cronbach: Option<f64>,
}

/// Two-item reliability from paired item scores.
pub fn reliability(item1: &str, item2: &str) -> Result<ReliabilityView> {
    let (x, y) = (parse_sample(item1)?, parse_sample(item2)?);
    let r = pearson_r(&x, &y)?;
    Ok(ReliabilityView {
        r,
        alpha: two_item_alpha(r),
        cronbach: Some(cronbach_alpha(&[&x, &y])?),
    })
}

pub fn reliability_from_r(r: f64) -> Result<ReliabilityView> {
    if !(-1.0..=1.0).contains(&r) || r == -1.0 {
        return Err(DemoError::Input(format!("r must lie in (-1, 1], got {r}")));
    }
    Ok(ReliabilityView {
        r,
        alpha: two_item_alpha(r),
        cronbach: None,
    })
}

fn to_js<T: Serialize>(v: Result<T>) -> std::result::Result<String, JsError> {
    let v = v.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = schedule)]
pub fn schedule_js(interval: u32, condition: &str, windows: &str, anchor: &str) -> std::result::Result<String, JsError> {
    to_js(schedule(interval, condition, windows, anchor))
}

#[wasm_bindgen(js_name = rankTests)]
pub fn rank_tests_js(a: &str, b: &str, c: &str) -> std::result::Result<String, JsError> {
    to_js(rank_tests(&[a, b, c]))
}

#[wasm_bindgen(js_name = reliability)]
pub fn reliability_js(item1: &str, item2: &str) -> std::result::Result<String, JsError> {
    to_js(reliability(item1, item2))
}

#[wasm_bindgen(js_name = reliabilityFromR)]
pub fn reliability_from_r_js(r: f64) -> std::result::Result<String, JsError> {
    to_js(reliability_from_r(r))
}
