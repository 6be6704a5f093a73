use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;
use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use super::{kruskal_wallis, AnalysisError, Descriptives, Result, StatResult};
use crate::model::{ParticipantId, StudyCondition};

pub const LIKERT_RANGE: RangeInclusive<u8> = 1..=5;
pub const TLX_RANGE: RangeInclusive<u8> = 1..=10;
/// Questionnaire columns accepted in a survey CSV; the first 28 are required.
pub const QUESTION_COLUMNS: usize = 30;
const REQUIRED_QUESTION_COLUMNS: usize = 28;

/// One questionnaire. `q[i]` is item Q(i+1); open-ended and multiple-choice
/// items carry `None`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurveyRow {
    pub participant_id: ParticipantId,
    pub condition: StudyCondition,
    pub q: Vec<Option<u8>>,
    pub tlx: [Option<u8>; 6],
}

impl SurveyRow {
    pub fn item(&self, number: usize) -> Option<u8> {
        self.q.get(number.checked_sub(1)?).copied().flatten()
    }

    pub fn validate(&self) -> Result<()> {
        let check = |column: String, v: u8, range: &RangeInclusive<u8>| {
            if range.contains(&v) {
                Ok(())
            } else {
                Err(AnalysisError::OutOfRangeValue {
                    participant: self.participant_id.to_string(),
                    column,
                    value: v as i64,
                    min: *range.start() as i64,
                    max: *range.end() as i64,
                })
            }
        };
        for (i, v) in self.q.iter().enumerate() {
            if let Some(v) = v {
                check(format!("q{}", i + 1), *v, &LIKERT_RANGE)?;
            }
        }
        for (i, v) in self.tlx.iter().enumerate() {
            if let Some(v) = v {
                check(format!("tlx{}", i + 1), *v, &TLX_RANGE)?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Subscale {
    #[serde(rename = "CE-R")]
    CeRegular,
    #[serde(rename = "CE-D")]
    CeDeeper,
    #[serde(rename = "RO-R")]
    RoRegular,
    #[serde(rename = "RO-D")]
    RoDeeper,
    #[serde(rename = "AE-R")]
    AeRegular,
    #[serde(rename = "AE-D")]
    AeDeeper,
    #[serde(rename = "AC-D")]
    AcDeeper,
    #[serde(rename = "OverallEffect")]
    OverallEffect,
}

impl Subscale {
    pub const ALL: [Subscale; 8] = [
        Subscale::CeRegular,
        Subscale::CeDeeper,
        Subscale::RoRegular,
        Subscale::RoDeeper,
        Subscale::AeRegular,
        Subscale::AeDeeper,
        Subscale::AcDeeper,
        Subscale::OverallEffect,
    ];

    /// Questionnaire item numbers (1-based) averaged into the subscale.
    pub fn items(self) -> &'static [usize] {
        match self {
            Subscale::CeRegular => &[1, 2],
            Subscale::CeDeeper => &[3, 4],
            Subscale::RoRegular => &[5, 6],
            Subscale::RoDeeper => &[7, 8],
            Subscale::AeRegular => &[9, 10],
            Subscale::AeDeeper => &[11, 12],
            Subscale::AcDeeper => &[13, 14],
            Subscale::OverallEffect => &[15, 16, 17, 18],
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Subscale::CeRegular => "CE-R",
            Subscale::CeDeeper => "CE-D",
            Subscale::RoRegular => "RO-R",
            Subscale::RoDeeper => "RO-D",
            Subscale::AeRegular => "AE-R",
            Subscale::AeDeeper => "AE-D",
            Subscale::AcDeeper => "AC-D",
            Subscale::OverallEffect => "OverallEffect",
        }
    }
}

impl fmt::Display for Subscale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubscaleScore {
    pub name: Subscale,
    pub participant_id: ParticipantId,
    pub condition: StudyCondition,
    pub value: f64,
}

/// Per-participant subscale means, participant-major in input order.
pub fn build_subscales(rows: &[SurveyRow]) -> Result<Vec<SubscaleScore>> {
    if rows.is_empty() {
        return Err(AnalysisError::MissingItems("no survey rows".into()));
    }
    let mut out = Vec::with_capacity(rows.len() * Subscale::ALL.len());
    for row in rows {
        row.validate()?;
        for s in Subscale::ALL {
            let mut sum = 0.0;
            for &item in s.items() {
                let v = row.item(item).ok_or_else(|| {
                    AnalysisError::MissingItems(format!("participant {} has no answer for q{item}", row.participant_id))
                })?;
                sum += v as f64;
            }
            out.push(SubscaleScore {
                name: s,
                participant_id: row.participant_id.clone(),
                condition: row.condition,
                value: sum / s.items().len() as f64,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TlxScale {
    MentalDemand,
    PhysicalDemand,
    TemporalDemand,
    Performance,
    Effort,
    Frustration,
}

impl TlxScale {
    /// In `tlx1..tlx6` column order.
    pub const ALL: [TlxScale; 6] = [
        TlxScale::MentalDemand,
        TlxScale::PhysicalDemand,
        TlxScale::TemporalDemand,
        TlxScale::Performance,
        TlxScale::Effort,
        TlxScale::Frustration,
    ];

    pub fn label(self) -> &'static str {
        match self {
            TlxScale::MentalDemand => "Mental demand",
            TlxScale::PhysicalDemand => "Physical demand",
            TlxScale::TemporalDemand => "Temporal demand",
            TlxScale::Performance => "Performance",
            TlxScale::Effort => "Effort",
            TlxScale::Frustration => "Frustration",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TlxSummary {
    pub scale: TlxScale,
    pub conditions: Vec<StudyCondition>,
    /// Kruskal–Wallis across `conditions`; group descriptives follow the same order.
    pub test: StatResult,
}

/// Groups rows by condition (in `StudyCondition` order), skipping absent ones.
pub(crate) fn by_condition(rows: &[SurveyRow]) -> BTreeMap<StudyCondition, Vec<&SurveyRow>> {
    let mut m: BTreeMap<StudyCondition, Vec<&SurveyRow>> = BTreeMap::new();
    for r in rows {
        m.entry(r.condition).or_default().push(r);
    }
    m
}

/// TLX descriptives per condition and a Kruskal–Wallis test per scale.
pub fn tlx_summary(rows: &[SurveyRow]) -> Result<Vec<TlxSummary>> {
    if rows.is_empty() {
        return Err(AnalysisError::MissingItems("no survey rows".into()));
    }
    for r in rows {
        r.validate()?;
        if let Some(i) = r.tlx.iter().position(Option::is_none) {
            return Err(AnalysisError::MissingItems(format!(
                "participant {} has no tlx{} rating",
                r.participant_id,
                i + 1
            )));
        }
    }
    let groups = by_condition(rows);
    let conditions: Vec<StudyCondition> = groups.keys().copied().collect();
    TlxScale::ALL
        .iter()
        .enumerate()
        .map(|(i, &scale)| {
            let samples: Vec<Vec<f64>> = groups
                .values()
                .map(|g| g.iter().map(|r| r.tlx[i].expect("checked above") as f64).collect())
                .collect();
            let test = if samples.len() >= 2 {
                kruskal_wallis(&samples)?
            } else {
                StatResult {
                    test: "descriptives".into(),
                    statistic: f64::NAN,
                    p_value: None,
                    effect_size: None,
                    group_descriptives: samples.iter().map(|s| Descriptives::of(s)).collect(),
                }
            };
            Ok(TlxSummary {
                scale,
                conditions: conditions.clone(),
                test,
            })
        })
        .collect()
}

fn parse_cell(raw: &str) -> Option<i64> {
    raw.trim().parse::<i64>().ok()
}

/// Reads a survey CSV with columns `participant_id`, `condition`,
/// `q1..q28` (up to `q30`) and `tlx1..tlx6`. Non-numeric question cells
/// (open-ended answers) are read as missing.
pub fn parse_survey_csv<R: Read>(input: R) -> Result<Vec<SurveyRow>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = rdr.headers().map_err(|e| AnalysisError::Csv(e.to_string()))?.clone();
    let col = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let pid_col = col("participant_id").ok_or_else(|| AnalysisError::Csv("missing participant_id column".into()))?;
    let cond_col = col("condition").ok_or_else(|| AnalysisError::Csv("missing condition column".into()))?;
    let q_cols: Vec<Option<usize>> = (1..=QUESTION_COLUMNS).map(|i| col(&format!("q{i}"))).collect();
    if let Some(i) = q_cols[..REQUIRED_QUESTION_COLUMNS].iter().position(Option::is_none) {
        return Err(AnalysisError::Csv(format!("missing q{} column", i + 1)));
    }
    let last_q = q_cols.iter().rposition(Option::is_some).expect("q1 present") + 1;
    let tlx_cols: Vec<Option<usize>> = (1..=6).map(|i| col(&format!("tlx{i}"))).collect();

    let mut rows = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| AnalysisError::Csv(e.to_string()))?;
        let get = |c: Option<usize>| c.and_then(|c| rec.get(c)).unwrap_or("");
        let pid = get(Some(pid_col)).to_owned();
        if pid.is_empty() {
            return Err(AnalysisError::Csv(format!("row {} has no participant_id", line + 2)));
        }
        let condition: StudyCondition = get(Some(cond_col))
            .parse()
            .map_err(|e| AnalysisError::Csv(format!("row {}: {e}", line + 2)))?;
        let range_err = |column: String, value: i64, range: &RangeInclusive<u8>| AnalysisError::OutOfRangeValue {
            participant: pid.clone(),
            column,
            value,
            min: *range.start() as i64,
            max: *range.end() as i64,
        };
        let mut q = Vec::with_capacity(last_q);
        for (i, c) in q_cols[..last_q].iter().enumerate() {
            q.push(match parse_cell(get(*c)) {
                Some(v) if (1..=5).contains(&v) => Some(v as u8),
                Some(v) => return Err(range_err(format!("q{}", i + 1), v, &LIKERT_RANGE)),
                None => None,
            });
        }
        let mut tlx = [None; 6];
        for (i, c) in tlx_cols.iter().enumerate() {
            let cell = get(*c);
            tlx[i] = match parse_cell(cell) {
                Some(v) if (1..=10).contains(&v) => Some(v as u8),
                Some(v) => return Err(range_err(format!("tlx{}", i + 1), v, &TLX_RANGE)),
                None if cell.trim().is_empty() => None,
                None => return Err(AnalysisError::Csv(format!("tlx{} for {pid} is not a number", i + 1))),
            };
        }
        rows.push(SurveyRow {
            participant_id: ParticipantId::new(pid),
            condition,
            q,
            tlx,
        });
    }
    Ok(rows)
}
