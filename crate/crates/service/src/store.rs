//! Embedded document store: one JSONL segment per collection, revision
//! checked writes, append-only history.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, RwLock};

use reflect_core::analysis::SurveyRow;
use reflect_core::model::{
    CollabSummary, MeetingTranscript, ParticipantId, ReflectionEntry, ReflectionPrompt, Team, TeamId,
};
use reflect_core::prompt::{AuditRecord, AuditSink, PromptError, SummaryStore};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::records::{summary_key, AuditEntry, AuditEvent, Notification, ParticipantRecord, RecapRecord, Record};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Collection {
    Participants,
    Teams,
    Transcripts,
    Summaries,
    Recaps,
    Prompts,
    Entries,
    Notifications,
    Audit,
    Surveys,
}

impl Collection {
    pub const ALL: [Collection; 10] = [
        Collection::Participants,
        Collection::Teams,
        Collection::Transcripts,
        Collection::Summaries,
        Collection::Recaps,
        Collection::Prompts,
        Collection::Entries,
        Collection::Notifications,
        Collection::Audit,
        Collection::Surveys,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Collection::Participants => "participants",
            Collection::Teams => "teams",
            Collection::Transcripts => "transcripts",
            Collection::Summaries => "summaries",
            Collection::Recaps => "recaps",
            Collection::Prompts => "prompts",
            Collection::Entries => "entries",
            Collection::Notifications => "notifications",
            Collection::Audit => "audit",
            Collection::Surveys => "surveys",
        }
    }
}

impl fmt::Display for Collection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Collection {
    type Err = StoreError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Collection::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| StoreError::SchemaViolation {
                collection: s.to_owned(),
                key: String::new(),
                reason: "unknown collection".into(),
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredDocument {
    pub collection: Collection,
    pub key: String,
    pub payload: Value,
    pub revision: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StoreError {
    #[error("revision conflict on {collection}/{key}: expected {expected:?}, found {actual:?}")]
    RevisionConflict {
        collection: Collection,
        key: String,
        expected: Option<u64>,
        actual: Option<u64>,
    },
    #[error("schema violation in {collection}/{key}: {reason}")]
    SchemaViolation {
        collection: String,
        key: String,
        reason: String,
    },
    #[error("unknown team {0}")]
    UnknownTeam(TeamId),
    #[error("unknown study at {0}")]
    UnknownStudy(String),
    #[error("unsupported export format {0:?} (use jsonl or csv)")]
    UnsupportedFormat(String),
    #[error("storage i/o: {0}")]
    Io(String),
    #[error("corrupt segment {file} line {line}: {reason}")]
    Corrupt { file: String, line: usize, reason: String },
}

impl From<std::io::Error> for StoreError {
    fn from(e: std::io::Error) -> Self {
        StoreError::Io(e.to_string())
    }
}

pub type Result<T, E = StoreError> = std::result::Result<T, E>;

fn schema_err(collection: Collection, key: &str, reason: impl Into<String>) -> StoreError {
    StoreError::SchemaViolation {
        collection: collection.to_string(),
        key: key.to_owned(),
        reason: reason.into(),
    }
}

fn check_payload<R: Record>(key: &str, payload: &Value) -> Result<()> {
    let rec: R =
        serde_json::from_value(payload.clone()).map_err(|e| schema_err(R::COLLECTION, key, e.to_string()))?;
    if rec.key() != key {
        return Err(schema_err(
            R::COLLECTION,
            key,
            format!("payload belongs under key {:?}", rec.key()),
        ));
    }
    Ok(())
}

fn validate(doc: &StoredDocument) -> Result<()> {
    let (k, p) = (doc.key.as_str(), &doc.payload);
    match doc.collection {
        Collection::Participants => check_payload::<ParticipantRecord>(k, p),
        Collection::Teams => check_payload::<Team>(k, p),
        Collection::Transcripts => check_payload::<MeetingTranscript>(k, p),
        Collection::Summaries => check_payload::<CollabSummary>(k, p),
        Collection::Recaps => check_payload::<RecapRecord>(k, p),
        Collection::Prompts => check_payload::<ReflectionPrompt>(k, p),
        Collection::Entries => check_payload::<ReflectionEntry>(k, p),
        Collection::Notifications => check_payload::<Notification>(k, p),
        Collection::Audit => check_payload::<AuditEntry>(k, p),
        Collection::Surveys => check_payload::<SurveyRow>(k, p),
    }
}

/// Entries may only change visibility; everything else is the immutable log.
fn check_entry_update(prev: &Value, next: &Value, key: &str) -> Result<()> {
    let strip = |v: &Value| {
        let mut v = v.clone();
        if let Some(o) = v.as_object_mut() {
            o.remove("visibility");
        }
        v
    };
    if strip(prev) != strip(next) {
        return Err(schema_err(Collection::Entries, key, "entries are immutable except for visibility"));
    }
    Ok(())
}

#[derive(Default)]
struct Shard {
    docs: BTreeMap<String, Vec<StoredDocument>>,
    file: Option<File>,
}

#[derive(Debug, Clone, Copy)]
pub struct StoreOptions {
    /// fsync each segment append before the write returns.
    pub fsync: bool,
}

impl Default for StoreOptions {
    fn default() -> Self {
        Self { fsync: true }
    }
}

/// Document store with one lock per collection. Readers run concurrently;
/// writers to a collection are serialized so the revision check and the
/// append happen together.
pub struct Store {
    dir: Option<PathBuf>,
    options: StoreOptions,
    shards: BTreeMap<Collection, RwLock<Shard>>,
}

impl fmt::Debug for Store {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Store").field("dir", &self.dir).finish_non_exhaustive()
    }
}

fn segment_path(dir: &Path, c: Collection) -> PathBuf {
    dir.join(format!("{}.jsonl", c.as_str()))
}

/// Replays a segment. A final line without its newline is a torn write
/// from a crash and is cut off; any other bad line is corruption.
fn replay(path: &Path, c: Collection) -> Result<(BTreeMap<String, Vec<StoredDocument>>, File)> {
    let mut file = OpenOptions::new().create(true).read(true).append(true).open(path)?;
    let mut docs: BTreeMap<String, Vec<StoredDocument>> = BTreeMap::new();
    let mut reader = BufReader::new(&file);
    let mut good_len = 0u64;
    let mut line = String::new();
    let mut n = 0;
    loop {
        line.clear();
        let read = reader.read_line(&mut line)?;
        if read == 0 {
            break;
        }
        n += 1;
        if !line.ends_with('\n') {
            break;
        }
        let doc: StoredDocument = serde_json::from_str(&line).map_err(|e| StoreError::Corrupt {
            file: path.display().to_string(),
            line: n,
            reason: e.to_string(),
        })?;
        if doc.collection != c {
            return Err(StoreError::Corrupt {
                file: path.display().to_string(),
                line: n,
                reason: format!("record for {} in the {c} segment", doc.collection),
            });
        }
        docs.entry(doc.key.clone()).or_default().push(doc);
        good_len += read as u64;
    }
    drop(reader);
    if file.metadata()?.len() != good_len {
        file.set_len(good_len)?;
        file.seek(SeekFrom::End(0))?;
    }
    Ok((docs, file))
}

impl Store {
    pub fn in_memory() -> Self {
        Self {
            dir: None,
            options: StoreOptions { fsync: false },
            shards: Collection::ALL.into_iter().map(|c| (c, RwLock::default())).collect(),
        }
    }

    /// Opens (or creates) a store directory and replays its segments.
    pub fn open(dir: &Path, options: StoreOptions) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        let mut shards = BTreeMap::new();
        for c in Collection::ALL {
            let (docs, file) = replay(&segment_path(dir, c), c)?;
            shards.insert(c, RwLock::new(Shard { docs, file: Some(file) }));
        }
        Ok(Self {
            dir: Some(dir.to_owned()),
            options,
            shards,
        })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    fn shard(&self, c: Collection) -> &RwLock<Shard> {
        &self.shards[&c]
    }

    fn write_locked(&self, shard: &mut Shard, doc: StoredDocument) -> Result<u64> {
        if let Some(file) = shard.file.as_mut() {
            let mut line = serde_json::to_vec(&doc).map_err(|e| StoreError::Io(e.to_string()))?;
            line.push(b'\n');
            file.write_all(&line)?;
            file.flush()?;
            if self.options.fsync {
                file.sync_data()?;
            }
        }
        let rev = doc.revision;
        shard.docs.entry(doc.key.clone()).or_default().push(doc);
        Ok(rev)
    }

    /// Writes `doc` if the key's latest revision equals `expected` (`None`
    /// meaning the key must not exist yet). Returns the new revision; the
    /// revision field of `doc` is ignored.
    pub fn put(&self, mut doc: StoredDocument, expected: Option<u64>) -> Result<u64> {
        validate(&doc)?;
        let mut shard = self.shard(doc.collection).write().expect("store lock poisoned");
        let prev = shard.docs.get(&doc.key).and_then(|h| h.last());
        let actual = prev.map(|d| d.revision);
        if actual != expected {
            return Err(StoreError::RevisionConflict {
                collection: doc.collection,
                key: doc.key,
                expected,
                actual,
            });
        }
        if let Some(prev) = prev {
            match doc.collection {
                Collection::Audit => return Err(schema_err(Collection::Audit, &doc.key, "audit records are write-once")),
                Collection::Entries => check_entry_update(&prev.payload, &doc.payload, &doc.key)?,
                _ => {}
            }
        }
        doc.revision = actual.unwrap_or(0) + 1;
        self.write_locked(&mut shard, doc)
    }

    pub fn get(&self, c: Collection, key: &str) -> Option<StoredDocument> {
        let shard = self.shard(c).read().expect("store lock poisoned");
        shard.docs.get(key).and_then(|h| h.last().cloned())
    }

    /// Every stored revision of a key, oldest first.
    pub fn history(&self, c: Collection, key: &str) -> Vec<StoredDocument> {
        let shard = self.shard(c).read().expect("store lock poisoned");
        shard.docs.get(key).cloned().unwrap_or_default()
    }

    /// Latest revision of every key, in key order.
    pub fn list(&self, c: Collection) -> Vec<StoredDocument> {
        let shard = self.shard(c).read().expect("store lock poisoned");
        shard.docs.values().filter_map(|h| h.last().cloned()).collect()
    }

    pub fn count(&self, c: Collection) -> usize {
        self.shard(c).read().expect("store lock poisoned").docs.len()
    }

    fn decode<R: Record>(doc: &StoredDocument) -> Result<R> {
        serde_json::from_value(doc.payload.clone()).map_err(|e| schema_err(R::COLLECTION, &doc.key, e.to_string()))
    }

    fn doc_of<R: Record>(r: &R) -> Result<StoredDocument> {
        Ok(StoredDocument {
            collection: R::COLLECTION,
            key: r.key(),
            payload: serde_json::to_value(r).map_err(|e| schema_err(R::COLLECTION, &r.key(), e.to_string()))?,
            revision: 0,
        })
    }

    /// First write of a record; fails with `RevisionConflict` if it exists.
    pub fn insert<R: Record>(&self, r: &R) -> Result<u64> {
        self.put(Self::doc_of(r)?, None)
    }

    pub fn update<R: Record>(&self, r: &R, expected: u64) -> Result<u64> {
        self.put(Self::doc_of(r)?, Some(expected))
    }

    pub fn load<R: Record>(&self, key: &str) -> Result<Option<(R, u64)>> {
        self.get(R::COLLECTION, key)
            .map(|d| Ok((Self::decode(&d)?, d.revision)))
            .transpose()
    }

    pub fn all<R: Record>(&self) -> Result<Vec<R>> {
        self.list(R::COLLECTION).iter().map(Self::decode).collect()
    }

    /// Appends an audit event under the next sequential id.
    pub fn append_audit(&self, event: AuditEvent) -> Result<String> {
        let mut shard = self.shard(Collection::Audit).write().expect("store lock poisoned");
        let audit_id = format!("audit-{:08}", shard.docs.len() + 1);
        let entry = AuditEntry {
            audit_id: audit_id.clone(),
            event,
        };
        let doc = Self::doc_of(&entry)?;
        validate(&doc)?;
        self.write_locked(&mut shard, StoredDocument { revision: 1, ..doc })?;
        Ok(audit_id)
    }

    pub fn team_members(&self, team: &TeamId) -> Result<Vec<ParticipantRecord>> {
        if self.get(Collection::Teams, team.as_str()).is_none() {
            return Err(StoreError::UnknownTeam(team.clone()));
        }
        Ok(self
            .all::<ParticipantRecord>()?
            .into_iter()
            .filter(|p| &p.participant.team_id == team)
            .collect())
    }

    /// Entries of a team, optionally narrowed to one day index and one
    /// participant, ordered by submission time. Visibility is not applied.
    pub fn query_entries(
        &self,
        team: &TeamId,
        day_index: Option<u32>,
        participant: Option<&ParticipantId>,
    ) -> Result<Vec<ReflectionEntry>> {
        let members: BTreeSet<ParticipantId> = self.team_members(team)?.iter().map(|p| p.id().clone()).collect();
        let mut out = Vec::new();
        for e in self.all::<ReflectionEntry>()? {
            if !members.contains(&e.participant_id) || participant.is_some_and(|p| p != &e.participant_id) {
                continue;
            }
            if let Some(day) = day_index {
                let prompt = self.load::<ReflectionPrompt>(e.prompt_id.as_str())?;
                if prompt.is_none_or(|(p, _)| p.day_index != day) {
                    continue;
                }
            }
            out.push(e);
        }
        out.sort_by(|a, b| (a.submitted_at, &a.entry_id).cmp(&(b.submitted_at, &b.entry_id)));
        Ok(out)
    }

    /// Dangling references: entries whose prompt or participant is missing,
    /// prompts whose participant is missing.
    pub fn integrity_problems(&self) -> Result<Vec<String>> {
        let participants: BTreeSet<String> = self.list(Collection::Participants).into_iter().map(|d| d.key).collect();
        let prompts: BTreeSet<String> = self.list(Collection::Prompts).into_iter().map(|d| d.key).collect();
        let mut problems = Vec::new();
        for e in self.all::<ReflectionEntry>()? {
            if !prompts.contains(e.prompt_id.as_str()) {
                problems.push(format!("entry {} references missing prompt {}", e.entry_id, e.prompt_id));
            }
            if !participants.contains(e.participant_id.as_str()) {
                problems.push(format!("entry {} references missing participant {}", e.entry_id, e.participant_id));
            }
        }
        for p in self.all::<ReflectionPrompt>()? {
            if !participants.contains(p.participant_id.as_str()) {
                problems.push(format!("prompt {} references missing participant {}", p.prompt_id, p.participant_id));
            }
        }
        Ok(problems)
    }
}

/// Adapter exposing the store's summaries collection to the prompt engine.
pub struct StoreSummaries(pub Arc<Store>);

impl SummaryStore for StoreSummaries {
    fn latest(&self, participant: &ParticipantId) -> CollabSummary {
        let prefix = format!("{participant}-v");
        let shard = self.0.shard(Collection::Summaries).read().expect("store lock poisoned");
        shard
            .docs
            .range(prefix.clone()..)
            .take_while(|(k, _)| k.starts_with(&prefix))
            .filter_map(|(_, h)| h.last())
            .filter_map(|d| serde_json::from_value::<CollabSummary>(d.payload.clone()).ok())
            .filter(|s| &s.participant_id == participant)
            .max_by_key(|s| s.version)
            .unwrap_or_else(|| CollabSummary::initial(participant.clone()))
    }

    fn commit(&self, next: &CollabSummary) -> Result<(), PromptError> {
        let latest = self.latest(&next.participant_id).version;
        if next.version != latest + 1 {
            return Err(PromptError::StaleVersion {
                given: next.version.saturating_sub(1),
                latest,
            });
        }
        match self.0.insert(next) {
            Ok(_) => Ok(()),
            Err(StoreError::RevisionConflict { .. }) => Err(PromptError::StaleVersion {
                given: next.version - 1,
                latest: next.version,
            }),
            Err(e) => Err(PromptError::MissingContext(format!("summary store: {e}"))),
        }
    }
}

impl StoreSummaries {
    pub fn versions(&self, participant: &ParticipantId) -> Vec<CollabSummary> {
        let mut v: Vec<CollabSummary> = self
            .0
            .all::<CollabSummary>()
            .unwrap_or_default()
            .into_iter()
            .filter(|s| &s.participant_id == participant)
            .collect();
        v.sort_by_key(|s| s.version);
        v
    }

    pub fn key(participant: &ParticipantId, version: u32) -> String {
        summary_key(participant, version)
    }
}

/// Sends prompt-engine audit records to the audit collection. Write
/// failures are reported on stderr rather than failing the request.
pub struct StoreAudit(pub Arc<Store>);

impl AuditSink for StoreAudit {
    fn record(&self, rec: AuditRecord) {
        if let Err(e) = self.0.append_audit(AuditEvent::LlmCall(rec)) {
            eprintln!("{{\"level\":\"error\",\"msg\":\"audit write failed\",\"error\":{:?}}}", e.to_string());
        }
    }
}
