//! Prompt engine: transcript normalization, summary upkeep, recaps and
//! personalized daily prompts.

use std::path::Path;
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cues::{cue_for_day, CueError, ReflectionCue};
use crate::llm::{Completion, CompletionRequest, LlmError};
use crate::model::{
    word_count, Clock, CollabSummary, CueId, Depth, IdSource, MeetingTranscript, Participant, ParticipantId,
    PromptId, PromptOrigin, Recap, ReflectionEntry, ReflectionPrompt, SourceRef, RECAP_WORD_CAP,
};
use crate::scheduler::IntervalPlan;

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("transcript is empty after removing timestamps")]
    EmptyTranscript,
    #[error("collaboration history is empty")]
    EmptyHistory,
    #[error(transparent)]
    Provider(#[from] LlmError),
    #[error("provider returned {got} prompt(s), expected {expected}")]
    MalformedResponse { expected: usize, got: usize },
    #[error("summary version {given} is stale; latest is {latest}")]
    StaleVersion { given: u32, latest: u32 },
    #[error("missing context: {0}")]
    MissingContext(String),
    #[error("nothing to fold into the summary")]
    NothingToUpdate,
    #[error(transparent)]
    Cue(#[from] CueError),
    #[error("template error: {0}")]
    Template(String),
}

pub type Result<T, E = PromptError> = std::result::Result<T, E>;

/// Line-start timestamp patterns removed from transcripts.
#[derive(Debug, Clone)]
pub struct TimestampPatterns {
    res: Vec<Regex>,
}

impl TimestampPatterns {
    /// `[HH:MM:SS]`, bare `HH:MM:SS` and `(MM:SS)`.
    pub const DEFAULTS: [&'static str; 3] = [
        r"\[\d{1,2}:\d{2}(?::\d{2})?(?:[.,]\d+)?\]",
        r"\d{1,2}:\d{2}:\d{2}(?:[.,]\d+)?(?:\s|$)",
        r"\(\d{1,2}:\d{2}(?::\d{2})?\)",
    ];

    pub fn new<S: AsRef<str>>(patterns: &[S]) -> Result<Self, regex::Error> {
        let res = patterns
            .iter()
            .map(|p| Regex::new(&format!(r"^[ \t]*(?:{})[ \t]*", p.as_ref())))
            .collect::<Result<_, _>>()?;
        Ok(Self { res })
    }

    fn strip_line<'a>(&self, mut line: &'a str) -> &'a str {
        loop {
            let before = line.len();
            for re in &self.res {
                if let Some(m) = re.find(line) {
                    line = &line[m.end()..];
                }
            }
            if line.len() == before {
                return line;
            }
        }
    }
}

impl Default for TimestampPatterns {
    fn default() -> Self {
        Self::new(&Self::DEFAULTS).expect("default timestamp patterns compile")
    }
}

/// Strips line-start timestamps; speaker labels and content are kept.
pub fn normalize_transcript(raw: &str, patterns: &TimestampPatterns) -> Result<String> {
    let out = raw
        .split('\n')
        .map(|l| patterns.strip_line(l.strip_suffix('\r').unwrap_or(l)))
        .collect::<Vec<_>>()
        .join("\n");
    if out.trim().is_empty() {
        return Err(PromptError::EmptyTranscript);
    }
    Ok(out)
}

/// A text template with `{slot}` placeholders, filled in one pass so slot
/// values are never themselves expanded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template(String);

impl Template {
    pub fn new(text: impl Into<String>) -> Self {
        Self(text.into())
    }

    pub fn text(&self) -> &str {
        &self.0
    }

    pub fn render(&self, slots: &[(&str, &str)]) -> String {
        let src = self.0.as_str();
        let mut out = String::with_capacity(src.len());
        let mut rest = src;
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let after = &rest[open + 1..];
            let name_end = after.find('}');
            let value = name_end.and_then(|end| {
                let name = &after[..end];
                slots.iter().find(|(k, _)| *k == name).map(|(_, v)| (*v, end))
            });
            match value {
                Some((v, end)) => {
                    out.push_str(v);
                    rest = &after[end + 1..];
                }
                None => {
                    out.push('{');
                    rest = after;
                }
            }
        }
        out.push_str(rest);
        out.trim_end().to_owned()
    }
}

/// System and user templates for each request the engine sends. Defaults are
/// compiled in; [`Templates::load_dir`] overrides any file present on disk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Templates {
    pub personalize_system: Template,
    pub personalize_user: Template,
    pub recap_system: Template,
    pub recap_user: Template,
    pub summary_system: Template,
    pub summary_user: Template,
}

impl Default for Templates {
    fn default() -> Self {
        Self {
            personalize_system: Template::new(include_str!("../templates/personalize_system.txt")),
            personalize_user: Template::new(include_str!("../templates/personalize_user.txt")),
            recap_system: Template::new(include_str!("../templates/recap_system.txt")),
            recap_user: Template::new(include_str!("../templates/recap_user.txt")),
            summary_system: Template::new(include_str!("../templates/summary_system.txt")),
            summary_user: Template::new(include_str!("../templates/summary_user.txt")),
        }
    }
}

impl Templates {
    pub const FILES: [&'static str; 6] = [
        "personalize_system.txt",
        "personalize_user.txt",
        "recap_system.txt",
        "recap_user.txt",
        "summary_system.txt",
        "summary_user.txt",
    ];

    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut t = Self::default();
        for name in Self::FILES {
            let path = dir.join(name);
            if !path.exists() {
                continue;
            }
            let text = std::fs::read_to_string(&path)
                .map_err(|e| PromptError::Template(format!("{}: {e}", path.display())))?;
            let slot = match name {
                "personalize_system.txt" => &mut t.personalize_system,
                "personalize_user.txt" => &mut t.personalize_user,
                "recap_system.txt" => &mut t.recap_system,
                "recap_user.txt" => &mut t.recap_user,
                "summary_system.txt" => &mut t.summary_system,
                _ => &mut t.summary_user,
            };
            *slot = Template::new(text);
        }
        Ok(t)
    }
}

/// One request/response pair sent to the provider.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub at: DateTime<Utc>,
    pub purpose: String,
    pub participant_id: ParticipantId,
    pub system_prompt: String,
    pub user_prompt: String,
    /// Provider text, or the error that ended the call.
    pub response: std::result::Result<String, String>,
}

/// Append-only destination for [`AuditRecord`]s.
pub trait AuditSink: Send + Sync {
    fn record(&self, rec: AuditRecord);
}

#[derive(Debug, Default)]
pub struct MemoryAudit(Mutex<Vec<AuditRecord>>);

impl MemoryAudit {
    pub fn records(&self) -> Vec<AuditRecord> {
        self.0.lock().expect("audit poisoned").clone()
    }
}

impl AuditSink for MemoryAudit {
    fn record(&self, rec: AuditRecord) {
        self.0.lock().expect("audit poisoned").push(rec);
    }
}

/// Where summary versions live. Commits must be atomic compare-and-append:
/// a version that does not directly follow the latest one is rejected.
pub trait SummaryStore: Send + Sync {
    fn latest(&self, participant: &ParticipantId) -> CollabSummary;
    fn commit(&self, next: &CollabSummary) -> Result<()>;
}

/// In-memory version history for any number of participants.
#[derive(Debug, Default)]
pub struct SummaryHistory(Mutex<std::collections::BTreeMap<ParticipantId, Vec<CollabSummary>>>);

impl SummaryHistory {
    pub fn versions(&self, participant: &ParticipantId) -> Vec<CollabSummary> {
        self.0
            .lock()
            .expect("history poisoned")
            .get(participant)
            .cloned()
            .unwrap_or_default()
    }
}

impl SummaryStore for SummaryHistory {
    fn latest(&self, participant: &ParticipantId) -> CollabSummary {
        self.0
            .lock()
            .expect("history poisoned")
            .get(participant)
            .and_then(|v| v.last().cloned())
            .unwrap_or_else(|| CollabSummary::initial(participant.clone()))
    }

    fn commit(&self, next: &CollabSummary) -> Result<()> {
        let mut all = self.0.lock().expect("history poisoned");
        let versions = all.entry(next.participant_id.clone()).or_default();
        let latest = versions.last().map_or(0, |s| s.version);
        if next.version != latest + 1 {
            return Err(PromptError::StaleVersion {
                given: next.version.saturating_sub(1),
                latest,
            });
        }
        versions.push(next.clone());
        Ok(())
    }
}

/// Slot values for personalization.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptContext {
    pub poster_topic: String,
    pub participant_name: String,
    pub assigned_tasks: String,
    pub partner_name: String,
    pub day_index: u32,
    pub cms_version: u32,
}

impl PromptContext {
    fn check(&self) -> Result<()> {
        let missing: Vec<&str> = [
            ("poster_topic", &self.poster_topic),
            ("participant_name", &self.participant_name),
            ("assigned_tasks", &self.assigned_tasks),
            ("partner_name", &self.partner_name),
        ]
        .iter()
        .filter(|(_, v)| v.trim().is_empty())
        .map(|(k, _)| *k)
        .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(PromptError::MissingContext(missing.join(", ")))
        }
    }
}

/// Slot values for a summary update.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryContext {
    pub participant_name: String,
    pub task_name: String,
    pub responsibilities: String,
    pub meeting_count: u32,
    pub reflection_count: usize,
}

/// What personalization is grounded in: the fresh transcript on meeting
/// days, the running summary otherwise.
#[derive(Debug, Clone, Copy)]
pub enum PromptSource<'a> {
    Transcript(&'a str),
    Summary(&'a str),
}

fn strip_list_marker(line: &str) -> &str {
    let t = line.trim();
    if let Some((num, rest)) = t.split_once(['.', ')']) {
        if !num.is_empty() && num.len() <= 2 && num.chars().all(|c| c.is_ascii_digit()) {
            return rest.trim();
        }
    }
    t.trim_start_matches(['-', '*', '•']).trim()
}

fn ends_sentence(token: &str) -> bool {
    let t = token.trim_end_matches(['"', '\'', ')', ']', '\u{201d}', '\u{2019}']);
    t.ends_with(['.', '!', '?'])
}

/// Collapses `text` into one paragraph of at most `cap` words, cutting at the
/// last sentence end that fits. Falls back to a plain word cut when no
/// sentence ends inside the cap.
pub fn enforce_word_cap(text: &str, cap: usize) -> String {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    if tokens.len() <= cap {
        return tokens.join(" ");
    }
    let cut = (1..=cap).rev().find(|&n| ends_sentence(tokens[n - 1])).unwrap_or(cap);
    tokens[..cut].join(" ")
}

pub struct PromptEngine {
    llm: Arc<dyn Completion>,
    templates: Templates,
    patterns: TimestampPatterns,
    audit: Arc<dyn AuditSink>,
    clock: Arc<dyn Clock>,
    ids: Arc<dyn IdSource>,
    seed: Option<u64>,
}

impl PromptEngine {
    pub fn new(
        llm: Arc<dyn Completion>,
        audit: Arc<dyn AuditSink>,
        clock: Arc<dyn Clock>,
        ids: Arc<dyn IdSource>,
    ) -> Self {
        Self {
            llm,
            templates: Templates::default(),
            patterns: TimestampPatterns::default(),
            audit,
            clock,
            ids,
            seed: None,
        }
    }

    pub fn with_templates(mut self, templates: Templates) -> Self {
        self.templates = templates;
        self
    }

    pub fn with_patterns(mut self, patterns: TimestampPatterns) -> Self {
        self.patterns = patterns;
        self
    }

    /// Seed forwarded to the provider with every request.
    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        self.seed = seed;
        self
    }

    pub fn templates(&self) -> &Templates {
        &self.templates
    }

    pub fn normalize_transcript(&self, raw: &str) -> Result<String> {
        normalize_transcript(raw, &self.patterns)
    }

    fn call(&self, purpose: &str, participant: &ParticipantId, req: CompletionRequest) -> Result<String> {
        let req = req.with_seed(self.seed);
        let response = self.llm.complete(&req);
        self.audit.record(AuditRecord {
            at: self.clock.now(),
            purpose: purpose.to_owned(),
            participant_id: participant.clone(),
            system_prompt: req.system_prompt.clone(),
            user_prompt: req.user_prompt.clone(),
            response: response.clone().map_err(|e| e.to_string()),
        });
        Ok(response?)
    }

    /// A recap of at most 150 words. An over-long answer gets one
    /// regeneration request, then is cut at a sentence boundary.
    pub fn generate_recap(&self, cms: &CollabSummary, participant: &Participant) -> Result<Recap> {
        if cms.body.trim().is_empty() {
            return Err(PromptError::EmptyHistory);
        }
        let cap = RECAP_WORD_CAP.to_string();
        let user = self.templates.recap_user.render(&[
            ("participant_name", participant.display_name.as_str()),
            ("word_cap", cap.as_str()),
            ("history", cms.body.as_str()),
        ]);
        let system = self.templates.recap_system.render(&[]);
        let pid = &participant.participant_id;
        let mut text = self.call("recap", pid, CompletionRequest::new(&system, &user, RECAP_WORD_CAP))?;
        let words = word_count(&text);
        if words > RECAP_WORD_CAP {
            let retry = format!(
                "{user}\n\nYour previous summary was {words} words. Rewrite it as one paragraph of at most {cap} words."
            );
            text = self.call("recap-regenerate", pid, CompletionRequest::new(&system, retry, RECAP_WORD_CAP))?;
        }
        let body = enforce_word_cap(&text, RECAP_WORD_CAP);
        Ok(Recap::new(pid.clone(), body).expect("word cap enforced"))
    }

    /// Folds a transcript and/or new entries into the next summary version
    /// and commits it. Fails with `StaleVersion` if `base` is not the latest.
    pub fn update_cms(
        &self,
        store: &dyn SummaryStore,
        base: &CollabSummary,
        ctx: &SummaryContext,
        transcript: Option<&MeetingTranscript>,
        new_entries: &[ReflectionEntry],
    ) -> Result<CollabSummary> {
        if transcript.is_none() && new_entries.is_empty() {
            return Err(PromptError::NothingToUpdate);
        }
        let latest = store.latest(&base.participant_id);
        if latest.version != base.version {
            return Err(PromptError::StaleVersion {
                given: base.version,
                latest: latest.version,
            });
        }
        let mut material = Vec::new();
        let mut refs = base.source_refs.clone();
        if let Some(t) = transcript {
            material.push(format!("Meeting {} transcript:\n{}", t.meeting_index, t.normalized_text));
            refs.push(SourceRef::Transcript(t.transcript_id.clone()));
        }
        for e in new_entries {
            material.push(format!("Reflection ({}): {}", e.submitted_at.format("%Y-%m-%d"), e.body));
            refs.push(SourceRef::Entry(e.entry_id.clone()));
        }
        let meetings = ctx.meeting_count.to_string();
        let reflections = ctx.reflection_count.to_string();
        let summary = if base.body.is_empty() { "(none yet)" } else { base.body.as_str() };
        let new_material = material.join("\n\n");
        let user = self.templates.summary_user.render(&[
            ("participant_name", ctx.participant_name.as_str()),
            ("task_name", ctx.task_name.as_str()),
            ("responsibilities", ctx.responsibilities.as_str()),
            ("meeting_count", meetings.as_str()),
            ("reflection_count", reflections.as_str()),
            ("summary", summary),
            ("new_material", new_material.as_str()),
        ]);
        let system = self.templates.summary_system.render(&[]);
        let body = self.call("summary", &base.participant_id, CompletionRequest::new(system, user, 600))?;
        let next = CollabSummary {
            participant_id: base.participant_id.clone(),
            version: base.version + 1,
            word_count: word_count(&body),
            body: body.trim().to_owned(),
            source_refs: refs,
        };
        store.commit(&next)?;
        Ok(next)
    }

    /// Rewrites one or two structured cues for a participant.
    pub fn personalize(
        &self,
        cues: &[ReflectionCue],
        ctx: &PromptContext,
        participant: &ParticipantId,
        meeting_index: u32,
        source: PromptSource<'_>,
    ) -> Result<Vec<ReflectionPrompt>> {
        if cues.is_empty() || cues.len() > 2 {
            return Err(PromptError::MissingContext(format!("expected one or two cues, got {}", cues.len())));
        }
        if let Some(c) = cues.iter().find(|c| c.day_index != ctx.day_index) {
            return Err(PromptError::MissingContext(format!(
                "cue {} is for day {}, context is day {}",
                c.cue_id, c.day_index, ctx.day_index
            )));
        }
        if let Some(c) = cues.iter().find(|c| !c.depth.is_structured()) {
            return Err(PromptError::MissingContext(format!("cue {} is not structured", c.cue_id)));
        }
        ctx.check()?;
        let (heading, text) = match source {
            PromptSource::Transcript(t) => ("Transcript (timestamps may appear; ignore them):", t),
            PromptSource::Summary(s) => ("Collaboration summary so far:", s),
        };
        if text.trim().is_empty() {
            return Err(PromptError::MissingContext("empty transcript/summary".into()));
        }
        let generic = cues
            .iter()
            .enumerate()
            .map(|(i, c)| format!("{}. {}", i + 1, c.cue_text))
            .collect::<Vec<_>>()
            .join("\n");
        let (count_word, noun, target) = if cues.len() == 1 {
            ("one", "prompt", "the prompt so it is")
        } else {
            ("two", "prompts", "the two prompts so they are")
        };
        let system = self
            .templates
            .personalize_system
            .render(&[("count_word", count_word), ("prompt_noun", noun)]);
        let user = self.templates.personalize_user.render(&[
            ("poster_topic", ctx.poster_topic.as_str()),
            ("participant_name", ctx.participant_name.as_str()),
            ("partner_name", ctx.partner_name.as_str()),
            ("assigned_tasks", ctx.assigned_tasks.as_str()),
            ("source_heading", heading),
            ("source_text", text),
            ("generic_prompts", generic.as_str()),
            ("rewrite_target", target),
        ]);
        let out = self.call("personalize", participant, CompletionRequest::new(system, user, 120 * cues.len()))?;
        let lines: Vec<&str> = out
            .lines()
            .map(strip_list_marker)
            .filter(|l| !l.is_empty())
            .collect();
        if lines.len() != cues.len() {
            return Err(PromptError::MalformedResponse {
                expected: cues.len(),
                got: lines.len(),
            });
        }
        let issued_at = self.clock.now();
        Ok(cues
            .iter()
            .zip(lines)
            .map(|(cue, line)| {
                let question = if line.contains(&ctx.participant_name) {
                    line.to_owned()
                } else {
                    format!("{}, {line}", ctx.participant_name)
                };
                ReflectionPrompt {
                    prompt_id: PromptId::new(self.ids.next_id("prompt")),
                    participant_id: participant.clone(),
                    meeting_index,
                    day_index: ctx.day_index,
                    depth: cue.depth,
                    question_text: question,
                    derived_from: PromptOrigin {
                        cue_id: cue.cue_id.clone(),
                        cms_version: ctx.cms_version,
                    },
                    issued_at,
                    covers: Vec::new(),
                }
            })
            .collect())
    }

    /// The fixed unstructured statement for `day`; never calls the provider.
    pub fn unstructured_prompt(
        &self,
        plan: &IntervalPlan,
        day: u32,
        participant: &ParticipantId,
        meeting_index: u32,
    ) -> Result<ReflectionPrompt> {
        let cue = cue_for_day(plan, day, Depth::Unstructured)?;
        Ok(ReflectionPrompt {
            prompt_id: PromptId::new(self.ids.next_id("prompt")),
            participant_id: participant.clone(),
            meeting_index,
            day_index: day,
            depth: Depth::Unstructured,
            question_text: cue.cue_text,
            derived_from: PromptOrigin {
                cue_id: cue.cue_id,
                cms_version: 0,
            },
            issued_at: self.clock.now(),
            covers: Vec::new(),
        })
    }

    /// A catch-up prompt covering `missed` (all for the same participant).
    pub fn catch_up_prompt(
        &self,
        participant: &ParticipantId,
        meeting_index: u32,
        day: u32,
        missed: &[ReflectionPrompt],
    ) -> Result<ReflectionPrompt> {
        let pairs: Vec<(u32, String)> = missed.iter().map(|p| (p.day_index, p.question_text.clone())).collect();
        let digest = crate::scheduler::catchup_digest(&pairs)
            .map_err(|e| PromptError::MissingContext(e.to_string()))?;
        Ok(ReflectionPrompt {
            prompt_id: PromptId::new(self.ids.next_id("prompt")),
            participant_id: participant.clone(),
            meeting_index,
            day_index: day,
            depth: Depth::CatchUp,
            question_text: digest.text,
            derived_from: PromptOrigin {
                cue_id: CueId::new(format!(
                    "catch-up-{}",
                    digest.days.iter().map(u32::to_string).collect::<Vec<_>>().join("-")
                )),
                cms_version: missed.iter().map(|p| p.derived_from.cms_version).max().unwrap_or(0),
            },
            issued_at: self.clock.now(),
            covers: missed.iter().map(|p| p.prompt_id.clone()).collect(),
        })
    }
}
