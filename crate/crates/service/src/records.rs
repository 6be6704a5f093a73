//! Records kept by the store beyond the core domain types.

use chrono::{DateTime, Utc};
use reflect_core::analysis::SurveyRow;
use reflect_core::model::{
    CollabSummary, EntryId, MeetingTranscript, Participant, ParticipantId, ReflectionEntry, ReflectionPrompt, Team,
};
use reflect_core::prompt::AuditRecord;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::store::Collection;

/// A participant plus what the service needs to authenticate and prompt them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParticipantRecord {
    #[serde(flatten)]
    pub participant: Participant,
    /// Free-text responsibilities used to personalize prompts.
    #[serde(default)]
    pub responsibilities: String,
    /// SHA-256 of the access code, hex. Never exported.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub access_code_sha256: Option<String>,
}

impl ParticipantRecord {
    pub fn id(&self) -> &ParticipantId {
        &self.participant.participant_id
    }
}

/// The recap shown to a participant after meeting `meeting_index`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecapRecord {
    pub participant_id: ParticipantId,
    pub meeting_index: u32,
    pub body: String,
    pub word_count: usize,
    pub cms_version: u32,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NotificationKind {
    PromptReady,
    PartnerResponded,
    Reminder,
}

impl NotificationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NotificationKind::PromptReady => "prompt_ready",
            NotificationKind::PartnerResponded => "partner_responded",
            NotificationKind::Reminder => "reminder",
        }
    }
}

/// An in-app feed item. The id doubles as the fan-out dedup key.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Notification {
    pub notification_id: String,
    pub participant_id: ParticipantId,
    /// Serialized under its own name so it cannot clash with the export
    /// record discriminator.
    #[serde(rename = "notification_kind")]
    pub kind: NotificationKind,
    /// Id of the prompt or entry the notification is about, or a reminder tag.
    pub payload_ref: String,
    pub created_at: DateTime<Utc>,
    pub read: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum AuditEvent {
    LlmCall(AuditRecord),
    PartnerView {
        viewer: ParticipantId,
        entry_ids: Vec<EntryId>,
        at: DateTime<Utc>,
    },
    VisibilityChange {
        entry_id: EntryId,
        from: reflect_core::model::Visibility,
        to: reflect_core::model::Visibility,
        at: DateTime<Utc>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub audit_id: String,
    #[serde(flatten)]
    pub event: AuditEvent,
}

/// A typed record living in one store collection under a derived key.
pub trait Record: Serialize + DeserializeOwned {
    const COLLECTION: Collection;
    fn key(&self) -> String;
}

impl Record for Team {
    const COLLECTION: Collection = Collection::Teams;
    fn key(&self) -> String {
        self.team_id.to_string()
    }
}

impl Record for ParticipantRecord {
    const COLLECTION: Collection = Collection::Participants;
    fn key(&self) -> String {
        self.participant.participant_id.to_string()
    }
}

impl Record for MeetingTranscript {
    const COLLECTION: Collection = Collection::Transcripts;
    fn key(&self) -> String {
        self.transcript_id.to_string()
    }
}

/// Key of one summary version; zero-padded so versions sort in order.
pub fn summary_key(participant: &ParticipantId, version: u32) -> String {
    format!("{participant}-v{version:04}")
}

impl Record for CollabSummary {
    const COLLECTION: Collection = Collection::Summaries;
    fn key(&self) -> String {
        summary_key(&self.participant_id, self.version)
    }
}

impl Record for RecapRecord {
    const COLLECTION: Collection = Collection::Recaps;
    fn key(&self) -> String {
        format!("rc-{}-m{}", self.participant_id, self.meeting_index)
    }
}

impl Record for ReflectionPrompt {
    const COLLECTION: Collection = Collection::Prompts;
    fn key(&self) -> String {
        self.prompt_id.to_string()
    }
}

impl Record for ReflectionEntry {
    const COLLECTION: Collection = Collection::Entries;
    fn key(&self) -> String {
        self.entry_id.to_string()
    }
}

impl Record for Notification {
    const COLLECTION: Collection = Collection::Notifications;
    fn key(&self) -> String {
        self.notification_id.clone()
    }
}

impl Record for AuditEntry {
    const COLLECTION: Collection = Collection::Audit;
    fn key(&self) -> String {
        self.audit_id.clone()
    }
}

impl Record for SurveyRow {
    const COLLECTION: Collection = Collection::Surveys;
    fn key(&self) -> String {
        self.participant_id.to_string()
    }
}
