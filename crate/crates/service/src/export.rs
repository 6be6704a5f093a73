//! Dataset export (JSONL and CSV) and JSONL import.
//!
//! JSONL: one object per record with a `kind` field, keys in lexical order,
//! records grouped by kind and sorted by store key. CSV flattens nested
//! objects into dotted columns; arrays are written as JSON text.

use std::collections::BTreeSet;
use std::str::FromStr;

use serde_json::{Map, Value};

use crate::store::{Collection, Result, Store, StoreError, StoredDocument};

/// Export order and the `kind` label of each exported collection. The audit
/// log is internal and not exported.
pub const KINDS: [(&str, Collection); 9] = [
    ("team", Collection::Teams),
    ("participant", Collection::Participants),
    ("transcript", Collection::Transcripts),
    ("summary", Collection::Summaries),
    ("recap", Collection::Recaps),
    ("prompt", Collection::Prompts),
    ("entry", Collection::Entries),
    ("notification", Collection::Notifications),
    ("survey", Collection::Surveys),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Jsonl,
    Csv,
}

impl FromStr for ExportFormat {
    type Err = StoreError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" => Ok(Self::Jsonl),
            "csv" => Ok(Self::Csv),
            other => Err(StoreError::UnsupportedFormat(other.to_owned())),
        }
    }
}

fn records(store: &Store) -> Vec<Value> {
    let mut out = Vec::new();
    for (kind, c) in KINDS {
        for doc in store.list(c) {
            let mut obj = match doc.payload {
                Value::Object(m) => m,
                other => {
                    let mut m = Map::new();
                    m.insert("value".into(), other);
                    m
                }
            };
            if c == Collection::Participants {
                obj.remove("access_code_sha256");
            }
            obj.insert("kind".into(), Value::String(kind.into()));
            out.push(Value::Object(obj));
        }
    }
    out
}

pub fn export(store: &Store, format: ExportFormat) -> Result<String> {
    match format {
        ExportFormat::Jsonl => Ok(export_jsonl(store)),
        ExportFormat::Csv => export_csv(store),
    }
}

pub fn export_jsonl(store: &Store) -> String {
    let mut out = String::new();
    for r in records(store) {
        out.push_str(&r.to_string());
        out.push('\n');
    }
    out
}

/// Loads a JSONL export into `store` (normally empty).
pub fn import_jsonl(store: &Store, text: &str) -> Result<usize> {
    let mut n = 0;
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let corrupt = |reason: String| StoreError::Corrupt {
            file: "<import>".into(),
            line: i + 1,
            reason,
        };
        let mut v: Value = serde_json::from_str(line).map_err(|e| corrupt(e.to_string()))?;
        let obj = v.as_object_mut().ok_or_else(|| corrupt("not an object".into()))?;
        let kind = match obj.remove("kind") {
            Some(Value::String(k)) => k,
            _ => return Err(corrupt("missing kind".into())),
        };
        let c = KINDS
            .iter()
            .find(|(k, _)| *k == kind)
            .map(|(_, c)| *c)
            .ok_or_else(|| corrupt(format!("unknown kind {kind:?}")))?;
        let key = key_of(c, obj).ok_or_else(|| corrupt(format!("{kind} record has no key field")))?;
        store.put(
            StoredDocument {
                collection: c,
                key,
                payload: v,
                revision: 0,
            },
            None,
        )?;
        n += 1;
    }
    Ok(n)
}

fn key_of(c: Collection, obj: &Map<String, Value>) -> Option<String> {
    let s = |f: &str| obj.get(f).and_then(Value::as_str).map(str::to_owned);
    match c {
        Collection::Teams => s("team_id"),
        Collection::Participants | Collection::Surveys => s("participant_id"),
        Collection::Transcripts => s("transcript_id"),
        Collection::Summaries => {
            let v = obj.get("version")?.as_u64()?;
            Some(crate::records::summary_key(&s("participant_id")?.as_str().into(), v as u32))
        }
        Collection::Recaps => Some(format!("rc-{}-m{}", s("participant_id")?, obj.get("meeting_index")?.as_u64()?)),
        Collection::Prompts => s("prompt_id"),
        Collection::Entries => s("entry_id"),
        Collection::Notifications => s("notification_id"),
        Collection::Audit => s("audit_id"),
    }
}

/// Flattens nested objects into dotted keys. Arrays become JSON text,
/// strings are written raw, null becomes an empty cell.
pub fn flatten(v: &Value) -> Vec<(String, String)> {
    fn walk(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
        match v {
            Value::Object(m) => {
                for (k, child) in m {
                    let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    walk(&key, child, out);
                }
            }
            Value::String(s) => out.push((prefix.to_owned(), s.clone())),
            Value::Null => out.push((prefix.to_owned(), String::new())),
            other => out.push((prefix.to_owned(), other.to_string())),
        }
    }
    let mut out = Vec::new();
    walk("", v, &mut out);
    out
}

pub fn export_csv(store: &Store) -> Result<String> {
    let rows: Vec<Vec<(String, String)>> = records(store).iter().map(flatten).collect();
    let mut columns: BTreeSet<String> = rows.iter().flatten().map(|(k, _)| k.clone()).collect();
    columns.remove("kind");
    let header: Vec<&str> = std::iter::once("kind").chain(columns.iter().map(String::as_str)).collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| StoreError::Io(e.to_string());
    w.write_record(&header).map_err(io)?;
    for row in &rows {
        let cells: Vec<&str> = header
            .iter()
            .map(|h| row.iter().find(|(k, _)| k == h).map_or("", |(_, v)| v.as_str()))
            .collect();
        w.write_record(&cells).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| StoreError::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| StoreError::Io(e.to_string()))
}
