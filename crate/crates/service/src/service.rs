//! Request handling independent of HTTP: every operation takes the
//! authenticated caller and returns plain data or an [`ApiError`].

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::{Arc, Mutex, MutexGuard};

use chrono::{DateTime, Duration, Utc};
use reflect_core::cues::cue_for_day;
use reflect_core::llm::Completion;
use reflect_core::model::{
    word_count, Clock, CollabSummary, Depth, EntryId, MeetingTranscript, ParticipantId, PromptId, PromptOrigin,
    ReflectionEntry, ReflectionPrompt, SequentialIds, SourceRef, Team, TeamId, TranscriptId, Visibility,
};
use reflect_core::prompt::{PromptContext, PromptEngine, PromptError, PromptSource, SummaryContext, SummaryStore};
use reflect_core::scheduler::{build_schedule_with_plan, EventKind, MemberPrefs, Schedule, ScheduleConfig};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::{CapMode, StudyConfig};
use crate::notify::Dispatcher;
use crate::records::{AuditEvent, Notification, NotificationKind, ParticipantRecord, RecapRecord};
use crate::store::{Store, StoreAudit, StoreError, StoreSummaries};

/// Used when a team has not entered task metadata yet.
const DEFAULT_TASK: &str = "the team project";
const DEFAULT_RESPONSIBILITIES: &str = "shared team tasks";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: u16,
    pub code: &'static str,
    pub message: String,
    pub detail: Value,
}

impl ApiError {
    pub fn new(status: u16, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
            detail: Value::Null,
        }
    }

    pub fn with_detail(mut self, detail: Value) -> Self {
        self.detail = detail;
        self
    }

    fn unauthorized(msg: &str) -> Self {
        Self::new(401, "unauthorized", msg)
    }

    fn forbidden(code: &'static str, msg: impl Into<String>) -> Self {
        Self::new(403, code, msg)
    }

    fn not_found(what: &str, id: &str) -> Self {
        Self::new(404, "not_found", format!("{what} {id} not found"))
    }

    fn unprocessable(code: &'static str, msg: impl Into<String>) -> Self {
        Self::new(422, code, msg)
    }
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} {}: {}", self.status, self.code, self.message)
    }
}

impl std::error::Error for ApiError {}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match &e {
            StoreError::RevisionConflict { .. } => Self::new(409, "revision_conflict", e.to_string()),
            StoreError::UnknownTeam(_) => Self::new(404, "unknown_team", e.to_string()),
            StoreError::SchemaViolation { .. } => Self::new(422, "schema_violation", e.to_string()),
            _ => Self::new(500, "storage_error", e.to_string()),
        }
    }
}

impl From<PromptError> for ApiError {
    fn from(e: PromptError) -> Self {
        match &e {
            PromptError::EmptyTranscript => Self::unprocessable("empty_transcript", e.to_string()),
            PromptError::Provider(_) | PromptError::MalformedResponse { .. } => {
                Self::new(502, "provider_failure", e.to_string())
            }
            PromptError::StaleVersion { .. } => Self::new(409, "stale_summary", e.to_string()),
            _ => Self::new(500, "prompt_error", e.to_string()),
        }
    }
}

pub type ApiResult<T> = Result<T, ApiError>;

pub fn hash_access_code(code: &str) -> String {
    hex::encode(Sha256::digest(code.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub token: String,
    pub participant_id: ParticipantId,
    pub issued_at: DateTime<Utc>,
    pub expires_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct LoginRequest {
    pub participant_id: ParticipantId,
    pub access_code: String,
}

#[derive(Debug, Clone, Deserialize)]
pub struct TranscriptUpload {
    pub meeting_index: u32,
    pub transcript: String,
    #[serde(default)]
    pub task_name: Option<String>,
    #[serde(default)]
    pub responsibilities: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TranscriptResponse {
    pub transcript_id: TranscriptId,
    /// Omitted for the control condition.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recap: Option<String>,
    pub day1_prompts: Vec<ReflectionPrompt>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ResponseSubmission {
    pub prompt_id: PromptId,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubmittedEntry {
    #[serde(flatten)]
    pub entry: ReflectionEntry,
    /// Set when the word cap is in warn mode and was exceeded.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DayRef {
    pub meeting_index: u32,
    pub day_index: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Dashboard {
    pub participant_id: ParticipantId,
    pub display_name: String,
    pub condition: reflect_core::model::StudyCondition,
    pub today: Option<DayRef>,
    pub recaps: Vec<RecapRecord>,
    pub entries: Vec<ReflectionEntry>,
    pub pending_prompts: usize,
    pub unread_notifications: usize,
    /// Whether the partner has shared anything; never set for control.
    pub partner_available: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct TickReport {
    pub due_events: usize,
    pub prompts_generated: usize,
    pub notifications: usize,
}

fn prompt_key(p: &ParticipantId, k: u32, d: u32, depth: Depth) -> String {
    format!("pr-{p}-m{k}-d{d}-{depth}")
}

fn entry_key(prompt: &PromptId) -> String {
    format!("en-{prompt}")
}

pub struct Service {
    store: Arc<Store>,
    cfg: StudyConfig,
    engine: PromptEngine,
    clock: Arc<dyn Clock>,
    dispatcher: Arc<dyn Dispatcher>,
    sessions: Mutex<HashMap<String, Session>>,
    /// Entries a partner has been shown; narrowing them is refused.
    viewed: Mutex<BTreeSet<EntryId>>,
    locks: Mutex<BTreeMap<ParticipantId, Arc<Mutex<()>>>>,
    coverage: Mutex<BTreeSet<&'static str>>,
}

impl Service {
    pub fn new(
        store: Arc<Store>,
        cfg: StudyConfig,
        llm: Arc<dyn Completion>,
        clock: Arc<dyn Clock>,
        dispatcher: Arc<dyn Dispatcher>,
    ) -> ApiResult<Self> {
        cfg.validate().map_err(|e| ApiError::new(500, "invalid_config", e.to_string()))?;
        let engine = PromptEngine::new(
            llm,
            Arc::new(StoreAudit(store.clone())),
            clock.clone(),
            Arc::new(SequentialIds::new()),
        )
        .with_seed(Some(cfg.llm_seed));
        let mut viewed = BTreeSet::new();
        for a in store.all::<crate::records::AuditEntry>()? {
            if let AuditEvent::PartnerView { entry_ids, .. } = a.event {
                viewed.extend(entry_ids);
            }
        }
        Ok(Self {
            store,
            cfg,
            engine,
            clock,
            dispatcher,
            sessions: Mutex::default(),
            viewed: Mutex::new(viewed),
            locks: Mutex::default(),
            coverage: Mutex::default(),
        })
    }

    pub fn with_templates(mut self, templates: reflect_core::prompt::Templates) -> Self {
        self.engine = self.engine.with_templates(templates);
        self
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.store
    }

    pub fn config(&self) -> &StudyConfig {
        &self.cfg
    }

    pub fn now(&self) -> DateTime<Utc> {
        self.clock.now()
    }

    /// Endpoints served at least once since start-up.
    pub fn coverage(&self) -> BTreeSet<&'static str> {
        self.coverage.lock().expect("coverage poisoned").clone()
    }

    fn hit(&self, endpoint: &'static str) {
        self.coverage.lock().expect("coverage poisoned").insert(endpoint);
    }

    fn lock(&self, p: &ParticipantId) -> Arc<Mutex<()>> {
        self.locks
            .lock()
            .expect("lock table poisoned")
            .entry(p.clone())
            .or_default()
            .clone()
    }

    fn guard(m: &Mutex<()>) -> MutexGuard<'_, ()> {
        // A panic while holding the lock leaves no half-written state behind
        // (each store write is atomic), so a poisoned lock is still usable.
        m.lock().unwrap_or_else(|e| e.into_inner())
    }

    // ---- lookups -------------------------------------------------------

    pub fn participant(&self, id: &ParticipantId) -> ApiResult<ParticipantRecord> {
        self.store
            .load::<ParticipantRecord>(id.as_str())?
            .map(|(p, _)| p)
            .ok_or_else(|| ApiError::not_found("participant", id.as_str()))
    }

    fn team(&self, id: &TeamId) -> ApiResult<(Team, u64)> {
        self.store
            .load::<Team>(id.as_str())?
            .ok_or_else(|| ApiError::not_found("team", id.as_str()))
    }

    fn partners(&self, p: &ParticipantRecord) -> ApiResult<Vec<ParticipantRecord>> {
        Ok(self
            .store
            .team_members(&p.participant.team_id)?
            .into_iter()
            .filter(|m| m.id() != p.id())
            .collect())
    }

    fn entries_of(&self, p: &ParticipantId) -> ApiResult<Vec<ReflectionEntry>> {
        Ok(self
            .store
            .all::<ReflectionEntry>()?
            .into_iter()
            .filter(|e| &e.participant_id == p)
            .collect())
    }

    fn load_prompt(&self, id: &str) -> ApiResult<Option<ReflectionPrompt>> {
        Ok(self.store.load::<ReflectionPrompt>(id)?.map(|(p, _)| p))
    }

    /// Prompt ids the participant has dealt with, directly or through an
    /// answered catch-up prompt.
    fn answered(&self, p: &ParticipantId) -> ApiResult<BTreeSet<PromptId>> {
        let mut out = BTreeSet::new();
        for e in self.entries_of(p)? {
            if let Some(prompt) = self.load_prompt(e.prompt_id.as_str())? {
                out.extend(prompt.covers);
            }
            out.insert(e.prompt_id);
        }
        Ok(out)
    }

    fn prompts_for(&self, p: &ParticipantRecord, k: u32, d: u32) -> ApiResult<Vec<ReflectionPrompt>> {
        let mut out = Vec::new();
        for &depth in p.participant.condition.depths() {
            if let Some(prompt) = self.load_prompt(&prompt_key(p.id(), k, d, depth))? {
                out.push(prompt);
            }
        }
        Ok(out)
    }

    /// (meeting, day) of the current local date, if inside an interval.
    pub fn today(&self) -> Option<DayRef> {
        let date = self.cfg.schedule.local_date(self.now());
        self.cfg.locate(date).map(|(meeting_index, day_index)| DayRef {
            meeting_index,
            day_index,
        })
    }

    fn schedule(&self, team: &Team, members: &[ParticipantRecord], k: u32) -> ApiResult<Schedule> {
        let prefs: Vec<MemberPrefs> = members
            .iter()
            .map(|m| MemberPrefs {
                participant_id: m.id().clone(),
                preferred_window: m.participant.preferred_window,
            })
            .collect();
        build_schedule_with_plan(
            team.team_id.clone(),
            self.cfg.meeting_date(k),
            team.condition,
            &prefs,
            self.cfg.plan(),
            &self.cfg.schedule,
        )
        .map_err(|e| ApiError::new(500, "schedule_error", e.to_string()))
    }

    fn released(&self, p: &ParticipantRecord, k: u32, d: u32) -> ApiResult<bool> {
        let (team, _) = self.team(&p.participant.team_id)?;
        let schedule = self.schedule(&team, std::slice::from_ref(p), k)?;
        let now = self.now();
        let released = schedule
            .events_of(EventKind::PromptDue)
            .any(|e| e.day_index == d && e.fire_at <= now);
        Ok(released)
    }

    // ---- notifications -------------------------------------------------

    /// Stores a notification under its dedup id and forwards it. Returns
    /// false when it already existed. Partner notifications are never
    /// created for control participants.
    fn notify(&self, to: &ParticipantRecord, kind: NotificationKind, payload_ref: String, id: String) -> ApiResult<bool> {
        if kind == NotificationKind::PartnerResponded && !to.participant.condition.is_structured() {
            return Ok(false);
        }
        let n = Notification {
            notification_id: id,
            participant_id: to.id().clone(),
            kind,
            payload_ref,
            created_at: self.now(),
            read: false,
        };
        match self.store.insert(&n) {
            Ok(_) => {
                self.dispatcher.dispatch(&n, to.participant.notification_channel);
                Ok(true)
            }
            Err(StoreError::RevisionConflict { .. }) => Ok(false),
            Err(e) => Err(e.into()),
        }
    }

    fn notify_partners_of(&self, owner: &ParticipantRecord, entry: &ReflectionEntry) -> ApiResult<()> {
        if !owner.participant.condition.is_structured() || !entry.visibility.shared() {
            return Ok(());
        }
        for partner in self.partners(owner)? {
            let id = format!("n-partner_responded-{}-{}", entry.entry_id, partner.id());
            self.notify(&partner, NotificationKind::PartnerResponded, entry.entry_id.to_string(), id)?;
        }
        Ok(())
    }

    // ---- summaries and prompts -----------------------------------------

    fn summary_context(&self, p: &ParticipantRecord, team: &Team, k: u32) -> ApiResult<SummaryContext> {
        Ok(SummaryContext {
            participant_name: p.participant.display_name.clone(),
            task_name: or_default(&team.task_name, DEFAULT_TASK),
            responsibilities: or_default(&p.responsibilities, DEFAULT_RESPONSIBILITIES),
            meeting_count: k,
            reflection_count: self.entries_of(p.id())?.len(),
        })
    }

    /// Folds the transcript (if not yet folded) and the participant's own
    /// unfolded entries into their summary. Caller holds the participant lock.
    fn fold(
        &self,
        p: &ParticipantRecord,
        team: &Team,
        k: u32,
        transcript: Option<&MeetingTranscript>,
    ) -> ApiResult<CollabSummary> {
        let summaries = StoreSummaries(self.store.clone());
        let base = summaries.latest(p.id());
        let folded: BTreeSet<EntryId> = base.entry_refs().into_iter().cloned().collect();
        let fresh: Vec<ReflectionEntry> = self
            .entries_of(p.id())?
            .into_iter()
            .filter(|e| !folded.contains(&e.entry_id))
            .collect();
        let transcript =
            transcript.filter(|t| !base.source_refs.contains(&SourceRef::Transcript(t.transcript_id.clone())));
        if fresh.is_empty() && transcript.is_none() {
            return Ok(base);
        }
        let ctx = self.summary_context(p, team, k)?;
        Ok(self.engine.update_cms(&summaries, &base, &ctx, transcript, &fresh)?)
    }

    fn ensure_prompts(&self, p: &ParticipantRecord, k: u32, d: u32) -> ApiResult<(Vec<ReflectionPrompt>, bool)> {
        let lock = self.lock(p.id());
        let _g = Self::guard(&lock);
        self.ensure_prompts_locked(p, k, d)
    }

    /// Prompts for (meeting k, day d), generating and storing them on first
    /// use. Returns whether they were created by this call.
    fn ensure_prompts_locked(&self, p: &ParticipantRecord, k: u32, d: u32) -> ApiResult<(Vec<ReflectionPrompt>, bool)> {
        let existing = self.prompts_for(p, k, d)?;
        let plan = self.cfg.plan();
        if !existing.is_empty() || !plan.is_scheduled(d) {
            return Ok((existing, false));
        }
        let condition = p.participant.condition;
        let mut prompts = if condition.is_structured() {
            let (team, _) = self.team(&p.participant.team_id)?;
            let transcript = self
                .store
                .load::<MeetingTranscript>(&transcript_key(&team.team_id, k))?
                .map(|(t, _)| t);
            let cms = self.fold(p, &team, k, None)?;
            let first_day = plan.scheduled_days().first() == Some(&d);
            let source = match &transcript {
                Some(t) if first_day => PromptSource::Transcript(&t.normalized_text),
                _ => PromptSource::Summary(&cms.body),
            };
            let cues = condition
                .depths()
                .iter()
                .map(|&depth| cue_for_day(&plan, d, depth))
                .collect::<Result<Vec<_>, _>>()
                .map_err(PromptError::from)?;
            let text = match source {
                PromptSource::Transcript(t) | PromptSource::Summary(t) => t,
            };
            if text.trim().is_empty() {
                // Nothing to personalize from yet: issue the canonical cues.
                cues.into_iter()
                    .map(|c| ReflectionPrompt {
                        prompt_id: PromptId::new(""),
                        participant_id: p.id().clone(),
                        meeting_index: k,
                        day_index: d,
                        depth: c.depth,
                        question_text: c.cue_text,
                        derived_from: PromptOrigin {
                            cue_id: c.cue_id,
                            cms_version: cms.version,
                        },
                        issued_at: self.now(),
                        covers: Vec::new(),
                    })
                    .collect()
            } else {
                let partner = self.partners(p)?.into_iter().next();
                let ctx = PromptContext {
                    poster_topic: or_default(&team.task_name, DEFAULT_TASK),
                    participant_name: p.participant.display_name.clone(),
                    assigned_tasks: or_default(&p.responsibilities, DEFAULT_RESPONSIBILITIES),
                    partner_name: partner.map_or_else(|| "your teammate".into(), |m| m.participant.display_name),
                    day_index: d,
                    cms_version: cms.version,
                };
                self.engine.personalize(&cues, &ctx, p.id(), k, source)?
            }
        } else {
            vec![self.engine.unstructured_prompt(&plan, d, p.id(), k)?]
        };
        for prompt in &mut prompts {
            prompt.prompt_id = PromptId::new(prompt_key(p.id(), k, d, prompt.depth));
            self.store.insert(prompt)?;
        }
        self.notify(
            p,
            NotificationKind::PromptReady,
            prompts[0].prompt_id.to_string(),
            format!("n-prompt_ready-{}-m{k}-d{d}", p.id()),
        )?;
        Ok((prompts, true))
    }

    // ---- endpoints -----------------------------------------------------

    pub fn login(&self, req: &LoginRequest) -> ApiResult<Session> {
        self.hit("POST /sessions");
        let denied = || ApiError::unauthorized("unknown participant or wrong access code");
        let p = self.participant(&req.participant_id).map_err(|_| denied())?;
        let want = p.access_code_sha256.as_deref().ok_or_else(denied)?;
        if hash_access_code(&req.access_code) != want {
            return Err(denied());
        }
        let now = self.now();
        let session = Session {
            token: hex::encode(rand::random::<[u8; 32]>()),
            participant_id: p.id().clone(),
            issued_at: now,
            expires_at: now + Duration::hours(self.cfg.session_ttl_hours),
        };
        self.sessions
            .lock()
            .expect("sessions poisoned")
            .insert(session.token.clone(), session.clone());
        Ok(session)
    }

    pub fn authenticate(&self, token: &str) -> ApiResult<ParticipantRecord> {
        let mut sessions = self.sessions.lock().expect("sessions poisoned");
        let s = sessions
            .get(token)
            .cloned()
            .ok_or_else(|| ApiError::unauthorized("missing or unknown session token"))?;
        if self.now() >= s.expires_at {
            sessions.remove(token);
            return Err(ApiError::new(401, "session_expired", "session token has expired"));
        }
        drop(sessions);
        self.participant(&s.participant_id)
            .map_err(|_| ApiError::unauthorized("session participant no longer exists"))
    }

    pub fn upload_transcript(&self, caller: &ParticipantRecord, up: &TranscriptUpload) -> ApiResult<TranscriptResponse> {
        self.hit("POST /transcripts");
        if up.transcript.len() > self.cfg.transcript_max_bytes {
            return Err(ApiError::new(
                413,
                "payload_too_large",
                format!(
                    "transcript is {} bytes; the limit is {}",
                    up.transcript.len(),
                    self.cfg.transcript_max_bytes
                ),
            ));
        }
        let k = up.meeting_index;
        if !(1..=self.cfg.meeting_count).contains(&k) {
            return Err(ApiError::unprocessable(
                "invalid_meeting",
                format!("meeting_index must be in 1..={}", self.cfg.meeting_count),
            ));
        }
        let normalized = self.engine.normalize_transcript(&up.transcript)?;
        let team_id = caller.participant.team_id.clone();
        let (mut team, rev) = self.team(&team_id)?;
        if let Some(task) = up.task_name.as_deref().map(str::trim).filter(|t| !t.is_empty()) {
            if team.task_name != task {
                team.task_name = task.to_owned();
                self.store.update(&team, rev)?;
            }
        }
        if let Some(resp) = up.responsibilities.as_deref().map(str::trim).filter(|t| !t.is_empty()) {
            let lock = self.lock(caller.id());
            let _g = Self::guard(&lock);
            if let Some((mut me, rev)) = self.store.load::<ParticipantRecord>(caller.id().as_str())? {
                if me.responsibilities != resp {
                    me.responsibilities = resp.to_owned();
                    self.store.update(&me, rev)?;
                }
            }
        }

        let tid = transcript_key(&team_id, k);
        let transcript = match self.store.load::<MeetingTranscript>(&tid)? {
            Some((t, _)) if t.raw_text == up.transcript => t,
            Some(_) => {
                return Err(ApiError::new(
                    409,
                    "transcript_exists",
                    format!("a different transcript for meeting {k} is already stored"),
                ))
            }
            None => {
                let t = MeetingTranscript {
                    transcript_id: TranscriptId::new(tid.clone()),
                    team_id: team_id.clone(),
                    meeting_index: k,
                    raw_text: up.transcript.clone(),
                    normalized_text: normalized,
                    uploaded_at: self.now(),
                };
                match self.store.insert(&t) {
                    Ok(_) => t,
                    Err(StoreError::RevisionConflict { .. }) => {
                        self.store.load::<MeetingTranscript>(&tid)?.expect("just conflicted").0
                    }
                    Err(e) => return Err(e.into()),
                }
            }
        };

        let first_day = self.cfg.plan().scheduled_days()[0];
        let mut recap = None;
        let mut day1 = Vec::new();
        for m in self.store.team_members(&team_id)? {
            let lock = self.lock(m.id());
            let _g = Self::guard(&lock);
            let mine = m.id() == caller.id();
            if m.participant.condition.is_structured() {
                let key = format!("rc-{}-m{k}", m.id());
                let body = match self.store.load::<RecapRecord>(&key)? {
                    Some((r, _)) => r.body,
                    None => {
                        let cms = self.fold(&m, &team, k, Some(&transcript))?;
                        let r = self.engine.generate_recap(&cms, &m.participant)?;
                        let rec = RecapRecord {
                            participant_id: m.id().clone(),
                            meeting_index: k,
                            body: r.body().to_owned(),
                            word_count: r.word_count(),
                            cms_version: cms.version,
                            created_at: self.now(),
                        };
                        self.store.insert(&rec)?;
                        rec.body
                    }
                };
                if mine {
                    recap = Some(body);
                }
            }
            if k < self.cfg.meeting_count {
                let (prompts, _) = self.ensure_prompts_locked(&m, k, first_day)?;
                if mine {
                    day1 = prompts;
                }
            }
        }
        Ok(TranscriptResponse {
            transcript_id: transcript.transcript_id,
            recap,
            day1_prompts: day1,
        })
    }

    pub fn prompts_today(&self, caller: &ParticipantRecord) -> ApiResult<Vec<ReflectionPrompt>> {
        self.hit("GET /prompts/today");
        let Some(DayRef {
            meeting_index: k,
            day_index: d,
        }) = self.today()
        else {
            return Ok(Vec::new());
        };
        if !self.cfg.plan().is_scheduled(d) || !self.released(caller, k, d)? {
            return Ok(Vec::new());
        }
        let (prompts, _) = self.ensure_prompts(caller, k, d)?;
        let answered = self.answered(caller.id())?;
        Ok(prompts.into_iter().filter(|p| !answered.contains(&p.prompt_id)).collect())
    }

    /// One merged prompt for earlier days of the current interval that were
    /// issued but not answered, or an empty list.
    pub fn catch_up(&self, caller: &ParticipantRecord) -> ApiResult<Vec<ReflectionPrompt>> {
        self.hit("GET /prompts/catch-up");
        let Some(DayRef {
            meeting_index: k,
            day_index: today,
        }) = self.today()
        else {
            return Ok(Vec::new());
        };
        let lock = self.lock(caller.id());
        let _g = Self::guard(&lock);
        let answered = self.answered(caller.id())?;
        let mut missed = Vec::new();
        for &d in self.cfg.plan().scheduled_days().iter().filter(|&&d| d < today) {
            missed.extend(
                self.prompts_for(caller, k, d)?
                    .into_iter()
                    .filter(|p| !answered.contains(&p.prompt_id)),
            );
        }
        if missed.is_empty() {
            return Ok(Vec::new());
        }
        let days: BTreeSet<u32> = missed.iter().map(|p| p.day_index).collect();
        let label = days.iter().map(u32::to_string).collect::<Vec<_>>().join("-");
        let key = format!("pr-{}-m{k}-cu-{label}", caller.id());
        if let Some(existing) = self.load_prompt(&key)? {
            return Ok(vec![existing]);
        }
        let mut prompt = self.engine.catch_up_prompt(caller.id(), k, today, &missed)?;
        prompt.prompt_id = PromptId::new(key);
        self.store.insert(&prompt)?;
        Ok(vec![prompt])
    }

    pub fn submit_response(&self, caller: &ParticipantRecord, sub: &ResponseSubmission) -> ApiResult<SubmittedEntry> {
        self.hit("POST /responses");
        let lock = self.lock(caller.id());
        let guard = Self::guard(&lock);
        let prompt = self
            .load_prompt(sub.prompt_id.as_str())?
            .filter(|p| &p.participant_id == caller.id())
            .ok_or_else(|| ApiError::not_found("prompt", sub.prompt_id.as_str()))?;
        if self.answered(caller.id())?.contains(&prompt.prompt_id) {
            return Err(ApiError::new(409, "already_answered", format!("prompt {} is already answered", prompt.prompt_id)));
        }
        let words = word_count(&sub.body);
        if words == 0 {
            return Err(ApiError::unprocessable("empty_response", "response body is empty"));
        }
        let cap = self.cfg.response_word_cap;
        let mut warning = None;
        if words > cap {
            let msg = format!("response has {words} words; the limit is {cap}");
            match self.cfg.word_cap_mode {
                CapMode::Reject => {
                    return Err(ApiError::unprocessable("word_cap_exceeded", msg)
                        .with_detail(json!({"word_count": words, "cap": cap})))
                }
                CapMode::Warn => warning = Some(msg),
            }
        }
        let entry = ReflectionEntry::new(
            EntryId::new(entry_key(&prompt.prompt_id)),
            prompt.prompt_id.clone(),
            caller.id().clone(),
            sub.body.trim(),
            self.now(),
            caller.participant.condition.default_visibility(),
        );
        match self.store.insert(&entry) {
            Ok(_) => {}
            Err(StoreError::RevisionConflict { .. }) => {
                return Err(ApiError::new(409, "already_answered", format!("prompt {} is already answered", prompt.prompt_id)))
            }
            Err(e) => return Err(e.into()),
        }
        drop(guard);
        self.notify_partners_of(caller, &entry)?;
        Ok(SubmittedEntry { entry, warning })
    }

    /// Shared entries of the caller's teammates for one day. Control callers
    /// are always refused.
    pub fn partner_reflections(
        &self,
        caller: &ParticipantRecord,
        day: u32,
        meeting: Option<u32>,
    ) -> ApiResult<Vec<ReflectionEntry>> {
        self.hit("GET /partner-reflections");
        if !caller.participant.condition.is_structured() {
            return Err(ApiError::forbidden(
                "condition_denied",
                "partner reflections are not available in this condition",
            ));
        }
        let k = match meeting {
            Some(k) => k,
            None => self.today().map(|t| t.meeting_index).unwrap_or_else(|| self.latest_interval()),
        };
        if !(1..self.cfg.meeting_count).contains(&k) || !(1..=self.cfg.interval_days).contains(&day) {
            return Err(ApiError::unprocessable(
                "invalid_day",
                format!("day must be in 1..={} and meeting in 1..{}", self.cfg.interval_days, self.cfg.meeting_count),
            ));
        }
        let mut shown = Vec::new();
        for partner in self.partners(caller)? {
            for e in self.store.query_entries(&caller.participant.team_id, Some(day), Some(partner.id()))? {
                let in_interval = self.load_prompt(e.prompt_id.as_str())?.is_some_and(|p| p.meeting_index == k);
                if in_interval && e.visibility.shared() {
                    shown.push(e);
                }
            }
        }
        shown.sort_by(|a, b| (a.submitted_at, &a.entry_id).cmp(&(b.submitted_at, &b.entry_id)));
        if !shown.is_empty() {
            let ids: Vec<EntryId> = shown.iter().map(|e| e.entry_id.clone()).collect();
            self.viewed.lock().expect("viewed poisoned").extend(ids.iter().cloned());
            self.store.append_audit(AuditEvent::PartnerView {
                viewer: caller.id().clone(),
                entry_ids: ids,
                at: self.now(),
            })?;
        }
        Ok(shown)
    }

    fn latest_interval(&self) -> u32 {
        let today = self.cfg.schedule.local_date(self.now());
        (1..self.cfg.meeting_count)
            .rev()
            .find(|&k| self.cfg.meeting_date(k) < today)
            .unwrap_or(1)
    }

    pub fn set_visibility(&self, caller: &ParticipantRecord, entry_id: &EntryId, to: Visibility) -> ApiResult<ReflectionEntry> {
        self.hit("POST /entries/{id}/visibility");
        let lock = self.lock(caller.id());
        let guard = Self::guard(&lock);
        let (mut entry, rev) = self
            .store
            .load::<ReflectionEntry>(entry_id.as_str())?
            .ok_or_else(|| ApiError::not_found("entry", entry_id.as_str()))?;
        if &entry.participant_id != caller.id() {
            return Err(ApiError::forbidden("not_owner", "only the author can change an entry's visibility"));
        }
        if to.shared() && !caller.participant.condition.is_structured() {
            return Err(ApiError::forbidden("condition_denied", "entries cannot be shared in this condition"));
        }
        let from = entry.visibility;
        if to == from {
            return Ok(entry);
        }
        if to < from && self.viewed.lock().expect("viewed poisoned").contains(entry_id) {
            return Err(ApiError::new(
                409,
                "narrowing_after_view",
                "a partner has already viewed this entry; its visibility can no longer be narrowed",
            ));
        }
        entry.visibility = to;
        self.store.update(&entry, rev)?;
        self.store.append_audit(AuditEvent::VisibilityChange {
            entry_id: entry_id.clone(),
            from,
            to,
            at: self.now(),
        })?;
        drop(guard);
        if !from.shared() {
            self.notify_partners_of(caller, &entry)?;
        }
        Ok(entry)
    }

    pub fn notifications(&self, caller: &ParticipantRecord, since: Option<DateTime<Utc>>) -> ApiResult<Vec<Notification>> {
        self.hit("GET /notifications");
        let mut out: Vec<Notification> = self
            .store
            .all::<Notification>()?
            .into_iter()
            .filter(|n| &n.participant_id == caller.id() && since.is_none_or(|s| n.created_at > s))
            .collect();
        out.sort_by(|a, b| (a.created_at, &a.notification_id).cmp(&(b.created_at, &b.notification_id)));
        Ok(out)
    }

    pub fn mark_read(&self, caller: &ParticipantRecord, id: &str) -> ApiResult<Notification> {
        self.hit("POST /notifications/{id}/read");
        let lock = self.lock(caller.id());
        let _g = Self::guard(&lock);
        let (mut n, rev) = self
            .store
            .load::<Notification>(id)?
            .filter(|(n, _)| &n.participant_id == caller.id())
            .ok_or_else(|| ApiError::not_found("notification", id))?;
        if !n.read {
            n.read = true;
            self.store.update(&n, rev)?;
        }
        Ok(n)
    }

    pub fn dashboard(&self, caller: &ParticipantRecord) -> ApiResult<Dashboard> {
        self.hit("GET /dashboard");
        let structured = caller.participant.condition.is_structured();
        let recaps = if structured {
            self.store
                .all::<RecapRecord>()?
                .into_iter()
                .filter(|r| &r.participant_id == caller.id())
                .collect()
        } else {
            Vec::new()
        };
        let mut entries = self.entries_of(caller.id())?;
        entries.sort_by(|a, b| (a.submitted_at, &a.entry_id).cmp(&(b.submitted_at, &b.entry_id)));
        let answered = self.answered(caller.id())?;
        let pending_prompts = self
            .store
            .all::<ReflectionPrompt>()?
            .iter()
            .filter(|p| &p.participant_id == caller.id() && p.depth != Depth::CatchUp && !answered.contains(&p.prompt_id))
            .count();
        let unread_notifications = self
            .store
            .all::<Notification>()?
            .iter()
            .filter(|n| &n.participant_id == caller.id() && !n.read)
            .count();
        let partner_available = structured && {
            let mut any = false;
            for partner in self.partners(caller)? {
                any |= self.entries_of(partner.id())?.iter().any(|e| e.visibility.shared());
            }
            any
        };
        Ok(Dashboard {
            participant_id: caller.id().clone(),
            display_name: caller.participant.display_name.clone(),
            condition: caller.participant.condition,
            today: self.today(),
            recaps,
            entries,
            pending_prompts,
            unread_notifications,
            partner_available,
        })
    }

    pub fn health(&self) -> Value {
        self.hit("GET /health");
        json!({"status": "ok", "study_id": self.cfg.study_id})
    }

    // ---- scheduler -----------------------------------------------------

    fn day_answered(&self, p: &ParticipantRecord, k: u32, d: u32) -> ApiResult<bool> {
        let prompts = self.prompts_for(p, k, d)?;
        if prompts.is_empty() {
            return Ok(false);
        }
        let answered = self.answered(p.id())?;
        Ok(prompts.iter().all(|q| answered.contains(&q.prompt_id)))
    }

    fn partner_shared_on(&self, p: &ParticipantRecord, k: u32, d: u32) -> ApiResult<bool> {
        for partner in self.partners(p)? {
            for e in self.entries_of(partner.id())? {
                if !e.visibility.shared() {
                    continue;
                }
                if self.load_prompt(e.prompt_id.as_str())?.is_some_and(|q| q.meeting_index == k && q.day_index == d) {
                    return Ok(true);
                }
            }
        }
        Ok(false)
    }

    /// Processes every schedule event due at the clock's current instant.
    /// Prompts and notifications carry deterministic keys, so running the
    /// same tick again changes nothing.
    pub fn tick(&self) -> ApiResult<TickReport> {
        let now = self.now();
        let today = self.cfg.schedule.local_date(now);
        let mut report = TickReport::default();
        for team in self.store.all::<Team>()? {
            let members = self.store.team_members(&team.team_id)?;
            if members.is_empty() {
                continue;
            }
            let by_id: BTreeMap<&ParticipantId, &ParticipantRecord> = members.iter().map(|m| (m.id(), m)).collect();
            for k in 1..self.cfg.meeting_count {
                let anchor = self.cfg.meeting_date(k);
                let schedule = self.schedule(&team, &members, k)?;
                let mut seen_due = BTreeSet::new();
                for ev in schedule.events.iter().filter(|e| e.fire_at <= now) {
                    report.due_events += 1;
                    let Some(&m) = by_id.get(&ev.participant_id) else { continue };
                    let d = ev.day_index;
                    let same_day = ScheduleConfig::date_of_day(anchor, d) == today;
                    match ev.kind {
                        EventKind::PromptDue => {
                            if seen_due.insert((m.id().clone(), d)) {
                                let (prompts, created) = self.ensure_prompts(m, k, d)?;
                                if created {
                                    report.prompts_generated += prompts.len();
                                    report.notifications += 1;
                                }
                            }
                        }
                        EventKind::PromptReminder => {
                            if same_day && !self.day_answered(m, k, d)? {
                                let id = format!("n-reminder-{}-m{k}-d{d}", m.id());
                                if self.notify(m, NotificationKind::Reminder, format!("prompt:m{k}-d{d}"), id)? {
                                    report.notifications += 1;
                                }
                            }
                        }
                        EventKind::PartnerViewReminder => {
                            if same_day && m.participant.condition.is_structured() && self.partner_shared_on(m, k, d)? {
                                let id = format!("n-partner_view-{}-m{k}-d{d}", m.id());
                                if self.notify(m, NotificationKind::Reminder, format!("partner_view:m{k}-d{d}"), id)? {
                                    report.notifications += 1;
                                }
                            }
                        }
                        EventKind::CatchupDigest => {}
                    }
                }
            }
        }
        Ok(report)
    }
}

fn transcript_key(team: &TeamId, k: u32) -> String {
    format!("tr-{team}-m{k}")
}

fn or_default(v: &str, default: &str) -> String {
    if v.trim().is_empty() {
        default.to_owned()
    } else {
        v.to_owned()
    }
}
