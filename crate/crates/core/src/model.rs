//! Shared domain vocabulary: participants, conditions, Kolb stages, prompts,
//! entries, transcripts and collaboration summaries.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Hard cap on recap length, in whitespace-separated words.
pub const RECAP_WORD_CAP: usize = 150;

/// Default cap on a reflection response, in whitespace-separated words.
pub const RESPONSE_WORD_CAP: usize = 70;

/// Count of maximal whitespace-separated tokens.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

macro_rules! opaque_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                Self(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }
    };
}

opaque_id!(ParticipantId);
opaque_id!(TeamId);
opaque_id!(PromptId);
opaque_id!(EntryId);
opaque_id!(TranscriptId);
opaque_id!(
    /// Identifier of a cue row, e.g. `d3-regular`.
    CueId
);

/// Hands out fresh opaque identifiers. Implemented by the store so ids are
/// never derived from names.
pub trait IdSource: Send + Sync {
    fn next_id(&self, prefix: &str) -> String;
}

/// Counter-backed id source, `prefix-000001`, `prefix-000002`, ...
#[derive(Debug, Default)]
pub struct SequentialIds {
    counters: std::sync::Mutex<std::collections::BTreeMap<String, u64>>,
}

impl SequentialIds {
    pub fn new() -> Self {
        Self::default()
    }
}

impl IdSource for SequentialIds {
    fn next_id(&self, prefix: &str) -> String {
        let mut counters = self.counters.lock().expect("id counter poisoned");
        let n = counters.entry(prefix.to_owned()).or_insert(0);
        *n += 1;
        format!("{prefix}-{:06}", *n)
    }
}

/// Source of "now". Tests and simulations drive a [`ManualClock`].
pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

#[derive(Debug)]
pub struct ManualClock(std::sync::Mutex<DateTime<Utc>>);

impl ManualClock {
    pub fn new(at: DateTime<Utc>) -> Self {
        Self(std::sync::Mutex::new(at))
    }

    pub fn set(&self, at: DateTime<Utc>) {
        *self.0.lock().expect("clock poisoned") = at;
    }
}

impl Clock for ManualClock {
    fn now(&self) -> DateTime<Utc> {
        *self.0.lock().expect("clock poisoned")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unrecognized {what}: {value:?}")]
pub struct ParseEnumError {
    what: &'static str,
    value: String,
}

/// The four stages of the experiential learning cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum KolbStage {
    /// Concrete experience: doing.
    CE,
    /// Reflective observation: noticing.
    RO,
    /// Abstract conceptualization: thinking.
    AC,
    /// Active experimentation: planning.
    AE,
}

impl KolbStage {
    pub const ALL: [KolbStage; 4] = [KolbStage::CE, KolbStage::RO, KolbStage::AC, KolbStage::AE];

    pub fn label(self) -> &'static str {
        match self {
            KolbStage::CE => "Concrete Experience",
            KolbStage::RO => "Reflective Observation",
            KolbStage::AC => "Abstract Conceptualization",
            KolbStage::AE => "Active Experimentation",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyCondition {
    /// One structured regular prompt per scheduled day.
    Regular,
    /// One regular and one deeper prompt per scheduled day.
    Deeper,
    /// One fixed unstructured prompt per day; no recap, no partner sharing.
    Control,
}

impl StudyCondition {
    pub const ALL: [StudyCondition; 3] = [
        StudyCondition::Regular,
        StudyCondition::Deeper,
        StudyCondition::Control,
    ];

    /// Prompt depths issued on every scheduled day, in display order.
    pub fn depths(self) -> &'static [Depth] {
        match self {
            StudyCondition::Regular => &[Depth::Regular],
            StudyCondition::Deeper => &[Depth::Regular, Depth::Deeper],
            StudyCondition::Control => &[Depth::Unstructured],
        }
    }

    pub fn prompts_per_day(self) -> usize {
        self.depths().len()
    }

    /// Structured conditions see recaps and their partner's reflections.
    pub fn is_structured(self) -> bool {
        !matches!(self, StudyCondition::Control)
    }

    pub fn default_visibility(self) -> Visibility {
        if self.is_structured() {
            Visibility::Partner
        } else {
            Visibility::Private
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            StudyCondition::Regular => "regular",
            StudyCondition::Deeper => "deeper",
            StudyCondition::Control => "control",
        }
    }
}

impl fmt::Display for StudyCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StudyCondition {
    type Err = ParseEnumError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "regular" | "g1" => Ok(StudyCondition::Regular),
            "deeper" | "g2" => Ok(StudyCondition::Deeper),
            "control" | "g3" => Ok(StudyCondition::Control),
            _ => Err(ParseEnumError {
                what: "condition",
                value: s.to_owned(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Depth {
    Regular,
    Deeper,
    Unstructured,
    /// A single merged prompt standing in for several missed days.
    CatchUp,
}

impl Depth {
    pub fn is_structured(self) -> bool {
        matches!(self, Depth::Regular | Depth::Deeper)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Depth::Regular => "regular",
            Depth::Deeper => "deeper",
            Depth::Unstructured => "unstructured",
            Depth::CatchUp => "catch_up",
        }
    }
}

impl fmt::Display for Depth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NotificationChannel {
    #[default]
    InApp,
    Email,
    Sms,
    Calendar,
}

impl FromStr for NotificationChannel {
    type Err = ParseEnumError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "in_app" | "in-app" | "app" => Ok(Self::InApp),
            "email" => Ok(Self::Email),
            "sms" => Ok(Self::Sms),
            "calendar" => Ok(Self::Calendar),
            _ => Err(ParseEnumError {
                what: "notification channel",
                value: s.to_owned(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreferredWindow {
    #[default]
    Morning,
    Afternoon,
    Evening,
}

impl FromStr for PreferredWindow {
    type Err = ParseEnumError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "morning" => Ok(Self::Morning),
            "afternoon" => Ok(Self::Afternoon),
            "evening" | "night" => Ok(Self::Evening),
            _ => Err(ParseEnumError {
                what: "preferred window",
                value: s.to_owned(),
            }),
        }
    }
}

/// Ordered from narrowest to widest audience.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Visibility {
    Private,
    Partner,
    Team,
}

impl Visibility {
    pub fn shared(self) -> bool {
        self != Visibility::Private
    }
}

impl FromStr for Visibility {
    type Err = ParseEnumError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "private" => Ok(Self::Private),
            "partner" => Ok(Self::Partner),
            "team" => Ok(Self::Team),
            _ => Err(ParseEnumError {
                what: "visibility",
                value: s.to_owned(),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Participant {
    pub participant_id: ParticipantId,
    pub display_name: String,
    pub team_id: TeamId,
    pub condition: StudyCondition,
    #[serde(default)]
    pub notification_channel: NotificationChannel,
    #[serde(default)]
    pub preferred_window: PreferredWindow,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Team {
    pub team_id: TeamId,
    pub condition: StudyCondition,
    /// Free-text task name entered at upload, e.g. the poster topic.
    #[serde(default)]
    pub task_name: String,
}

/// Two participants of one team must share a condition.
pub fn check_team_conditions(members: &[Participant]) -> bool {
    let mut seen = std::collections::BTreeMap::new();
    members
        .iter()
        .all(|m| *seen.entry(&m.team_id).or_insert(m.condition) == m.condition)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeetingTranscript {
    pub transcript_id: TranscriptId,
    pub team_id: TeamId,
    pub meeting_index: u32,
    pub raw_text: String,
    pub normalized_text: String,
    pub uploaded_at: DateTime<Utc>,
}

/// A reference from a summary version back to what it was built from.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "type", content = "id", rename_all = "snake_case")]
pub enum SourceRef {
    Transcript(TranscriptId),
    Entry(EntryId),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollabSummary {
    pub participant_id: ParticipantId,
    pub version: u32,
    pub body: String,
    pub word_count: usize,
    #[serde(default)]
    pub source_refs: Vec<SourceRef>,
}

impl CollabSummary {
    /// The empty version-0 summary every participant starts from.
    pub fn initial(participant_id: ParticipantId) -> Self {
        Self {
            participant_id,
            version: 0,
            body: String::new(),
            word_count: 0,
            source_refs: Vec::new(),
        }
    }

    pub fn latest_transcript(&self) -> Option<&TranscriptId> {
        self.source_refs.iter().rev().find_map(|r| match r {
            SourceRef::Transcript(t) => Some(t),
            SourceRef::Entry(_) => None,
        })
    }

    pub fn entry_refs(&self) -> BTreeSet<&EntryId> {
        self.source_refs
            .iter()
            .filter_map(|r| match r {
                SourceRef::Entry(e) => Some(e),
                SourceRef::Transcript(_) => None,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("recap has {words} words, cap is {cap}")]
pub struct RecapTooLong {
    pub words: usize,
    pub cap: usize,
}

/// A short reminder paragraph of prior discussion, never over 150 words.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Recap {
    participant_id: ParticipantId,
    body: String,
    word_count: usize,
}

impl Recap {
    pub fn new(participant_id: ParticipantId, body: impl Into<String>) -> Result<Self, RecapTooLong> {
        let body = body.into();
        let words = word_count(&body);
        if words > RECAP_WORD_CAP {
            return Err(RecapTooLong {
                words,
                cap: RECAP_WORD_CAP,
            });
        }
        Ok(Self {
            participant_id,
            body,
            word_count: words,
        })
    }

    pub fn participant_id(&self) -> &ParticipantId {
        &self.participant_id
    }

    pub fn body(&self) -> &str {
        &self.body
    }

    pub fn word_count(&self) -> usize {
        self.word_count
    }
}

/// Which cue and which summary version a prompt was generated from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptOrigin {
    pub cue_id: CueId,
    pub cms_version: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReflectionPrompt {
    pub prompt_id: PromptId,
    pub participant_id: ParticipantId,
    /// Meeting that opened the interval this prompt belongs to.
    pub meeting_index: u32,
    pub day_index: u32,
    pub depth: Depth,
    pub question_text: String,
    pub derived_from: PromptOrigin,
    pub issued_at: DateTime<Utc>,
    /// For catch-up prompts: the missed prompts this one answers for.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub covers: Vec<PromptId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReflectionEntry {
    pub entry_id: EntryId,
    pub prompt_id: PromptId,
    pub participant_id: ParticipantId,
    pub body: String,
    pub word_count: usize,
    pub submitted_at: DateTime<Utc>,
    pub visibility: Visibility,
}

impl ReflectionEntry {
    pub fn new(
        entry_id: EntryId,
        prompt_id: PromptId,
        participant_id: ParticipantId,
        body: impl Into<String>,
        submitted_at: DateTime<Utc>,
        visibility: Visibility,
    ) -> Self {
        let body = body.into();
        Self {
            word_count: word_count(&body),
            entry_id,
            prompt_id,
            participant_id,
            body,
            submitted_at,
            visibility,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn word_count_basics() {
        assert_eq!(word_count(""), 0);
        assert_eq!(word_count("   \n\t "), 0);
        assert_eq!(word_count("finished draft of methods"), 4);
        assert_eq!(word_count("  two\n\nwords  "), 2);
    }

    #[test]
    fn word_count_matches_independent_splitter() {
        let body: String = (0..150)
            .map(|i| format!("w{i}"))
            .collect::<Vec<_>>()
            .join(" \n");
        // Independent tokenizer: scan characters and count transitions into non-space.
        let mut count = 0;
        let mut in_word = false;
        for c in body.chars() {
            if c.is_whitespace() {
                in_word = false;
            } else if !in_word {
                in_word = true;
                count += 1;
            }
        }
        assert_eq!(count, 150);
        assert_eq!(word_count(&body), count);
    }

    #[test]
    fn condition_prompt_counts() {
        assert_eq!(StudyCondition::Regular.prompts_per_day(), 1);
        assert_eq!(StudyCondition::Deeper.prompts_per_day(), 2);
        assert_eq!(StudyCondition::Control.prompts_per_day(), 1);
    }

    #[test]
    fn default_visibility_by_condition() {
        assert_eq!(StudyCondition::Regular.default_visibility(), Visibility::Partner);
        assert_eq!(StudyCondition::Deeper.default_visibility(), Visibility::Partner);
        assert_eq!(StudyCondition::Control.default_visibility(), Visibility::Private);
    }

    #[test]
    fn recap_rejects_over_cap() {
        let long = vec!["word"; 151].join(" ");
        assert!(Recap::new("p".into(), long).is_err());
        let ok = vec!["word"; 150].join(" ");
        assert_eq!(Recap::new("p".into(), ok).unwrap().word_count(), 150);
    }

    #[test]
    fn sequential_ids_are_distinct_per_prefix() {
        let ids = SequentialIds::new();
        assert_eq!(ids.next_id("entry"), "entry-000001");
        assert_eq!(ids.next_id("entry"), "entry-000002");
        assert_eq!(ids.next_id("prompt"), "prompt-000001");
    }

    #[test]
    fn team_condition_check() {
        let p = |id: &str, team: &str, c| Participant {
            participant_id: id.into(),
            display_name: id.into(),
            team_id: team.into(),
            condition: c,
            notification_channel: Default::default(),
            preferred_window: Default::default(),
        };
        assert!(check_team_conditions(&[
            p("a", "t1", StudyCondition::Regular),
            p("b", "t1", StudyCondition::Regular),
            p("c", "t2", StudyCondition::Control),
        ]));
        assert!(!check_team_conditions(&[
            p("a", "t1", StudyCondition::Regular),
            p("c", "t2", StudyCondition::Control),
            p("b", "t1", StudyCondition::Deeper),
        ]));
    }

    #[test]
    fn entry_word_count_is_computed() {
        let e = ReflectionEntry::new(
            "e".into(),
            "p".into(),
            "u".into(),
            "made good progress today",
            Utc::now(),
            Visibility::Partner,
        );
        assert_eq!(e.word_count, 4);
    }
}
