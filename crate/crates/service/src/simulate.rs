//! Seeded end-to-end study run against the stub provider. Every request
//! goes through the HTTP router, so the run doubles as an API smoke test.

use std::collections::BTreeMap;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request};
use axum::Router;
use chrono::{DateTime, NaiveDate, NaiveTime, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reflect_core::analysis::SurveyRow;
use reflect_core::llm::Gateway;
use reflect_core::model::{Clock, ManualClock, PreferredWindow, StudyCondition};
use serde_json::{json, Value};
use thiserror::Error;
use tower::ServiceExt;

use crate::admin::{self, AdminError, NewParticipant};
use crate::config::StudyConfig;
use crate::export::export_jsonl;
use crate::notify::FeedOnly;
use crate::records::ParticipantRecord;
use crate::service::{Service, TickReport};
use crate::store::{Collection, Store};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Admin(#[from] AdminError),
    #[error("{method} {uri} returned {status}: {body}")]
    Api {
        method: String,
        uri: String,
        status: u16,
        body: String,
    },
    #[error("simulation failed: {0}")]
    Runtime(String),
}

#[derive(Debug, Clone)]
pub struct SimulationOptions {
    pub interval_days: u32,
    pub seed: u64,
    pub teams_per_condition: usize,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        Self {
            interval_days: 5,
            seed: 7,
            teams_per_condition: 5,
        }
    }
}

pub struct Simulation {
    pub service: Arc<Service>,
    pub clock: Arc<ManualClock>,
    pub jsonl: String,
    /// Responses seen per endpoint and status code.
    pub statuses: BTreeMap<String, BTreeMap<u16, usize>>,
    /// Whether every immediately repeated tick changed nothing.
    pub ticks_idempotent: bool,
}

const TOPICS: [&str; 6] = [
    "AI for detecting microplastics",
    "urban heat islands and tree cover",
    "low-cost water quality sensors",
    "campus food waste tracking",
    "accessible public transit maps",
    "solar-powered study lamps",
];

const NAMES: [&str; 12] = [
    "Avery", "Blake", "Casey", "Devon", "Emerson", "Finley", "Harper", "Jordan", "Kendall", "Logan", "Morgan", "Quinn",
];

const DUTIES: [&str; 4] = [
    "literature review and the introduction panel",
    "data collection and the results figures",
    "poster layout and visual design",
    "methods section and the final proofread",
];

const SENTENCES: [&str; 10] = [
    "We split the work early so each of us owned one part of the poster.",
    "I noticed that our check-ins were shorter when we had a clear agenda.",
    "My partner explained the data pipeline and it finally made sense to me.",
    "Next time I want to share drafts sooner instead of polishing alone.",
    "The hardest part was agreeing on which results belong on the poster.",
    "I learned that asking a quick question saves hours of guessing.",
    "Our plan for tomorrow is to merge the sections and cut repeated text.",
    "I felt more prepared because I wrote down what I still had to finish.",
    "We disagreed about the figure style but settled it with a quick sketch.",
    "I will send my partner a short update before the next meeting.",
];

fn transcript(topic: &str, a: &str, b: &str, meeting: u32) -> String {
    format!(
        "[00:00:04] {a}: Okay, meeting {meeting} for the {topic} poster. Where are we?\n\
         [00:00:19] {b}: I finished a first pass on the sources and flagged three we should cite.\n\
         [00:01:02] {a}: Good. I can take the figures if you handle the methods text.\n\
         [00:01:40] {b}: Deal. Let's check in again before the next meeting and swap drafts.\n\
         [00:02:15] {a}: I'll also draft the title and the one-line takeaway.\n"
    )
}

fn persona_text(rng: &mut ChaCha8Rng, day: u32) -> String {
    let n = rng.random_range(2..=4);
    let mut parts = vec![format!("Day {day}:")];
    for _ in 0..n {
        parts.push(SENTENCES[rng.random_range(0..SENTENCES.len())].to_owned());
    }
    parts.join(" ")
}

struct Client {
    router: Router,
    rt: tokio::runtime::Runtime,
    statuses: BTreeMap<String, BTreeMap<u16, usize>>,
}

impl Client {
    fn call(&mut self, method: Method, uri: &str, token: Option<&str>, body: Option<Value>) -> (u16, Value) {
        let mut req = Request::builder().method(method.clone()).uri(uri);
        if let Some(t) = token {
            req = req.header("authorization", format!("Bearer {t}"));
        }
        let req = match body {
            Some(b) => req
                .header("content-type", "application/json")
                .body(Body::from(b.to_string())),
            None => req.body(Body::empty()),
        }
        .expect("valid request");
        let router = self.router.clone();
        let (status, bytes) = self.rt.block_on(async move {
            let resp = router.oneshot(req).await.expect("router is infallible");
            let status = resp.status().as_u16();
            let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap_or_default();
            (status, bytes)
        });
        let path = uri.split('?').next().unwrap_or(uri);
        let endpoint = format!("{method} {}", normalize_path(path));
        *self.statuses.entry(endpoint).or_default().entry(status).or_default() += 1;
        (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
    }

    fn expect(&mut self, method: Method, uri: &str, token: Option<&str>, body: Option<Value>, ok: &[u16]) -> Result<Value, SimError> {
        let (status, v) = self.call(method.clone(), uri, token, body);
        if ok.contains(&status) {
            Ok(v)
        } else {
            Err(SimError::Api {
                method: method.to_string(),
                uri: uri.to_owned(),
                status,
                body: v.to_string(),
            })
        }
    }
}

/// Replaces path ids with `{id}` so statuses group per route.
fn normalize_path(path: &str) -> String {
    let segs: Vec<&str> = path.split('/').collect();
    segs.iter()
        .enumerate()
        .map(|(i, s)| if i > 0 && matches!(segs[i - 1], "entries" | "notifications") && *s != "read" { "{id}" } else { s })
        .collect::<Vec<_>>()
        .join("/")
}

struct Member {
    rec: ParticipantRecord,
    token: String,
}

fn at(cfg: &StudyConfig, date: NaiveDate, h: u32, m: u32) -> DateTime<Utc> {
    cfg.schedule
        .to_utc(date.and_time(NaiveTime::from_hms_opt(h, m, 0).expect("valid time")))
}

/// Runs a full seeded study into `store` (which should be empty).
pub fn run(opts: &SimulationOptions, store: Arc<Store>) -> Result<Simulation, SimError> {
    let cfg = StudyConfig {
        study_id: format!("sim-{}", opts.seed),
        interval_days: opts.interval_days,
        meeting_count: 2,
        llm_seed: opts.seed,
        ..StudyConfig::default()
    };
    cfg.validate().map_err(AdminError::from)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    let n_teams = 3 * opts.teams_per_condition;
    let conditions = admin::random_assignment(n_teams, opts.seed);
    let windows = [PreferredWindow::Morning, PreferredWindow::Afternoon, PreferredWindow::Evening];
    let mut teams = Vec::new();
    for (i, &condition) in conditions.iter().enumerate() {
        let team_id = format!("team-{:02}", i + 1);
        admin::add_team(&store, &team_id, condition, "")?;
        let mut members = Vec::new();
        for j in 0..2 {
            let n = 2 * i + j + 1;
            let pid = format!("p-{n:03}");
            members.push(admin::add_participant(
                &store,
                &NewParticipant {
                    participant_id: pid.clone(),
                    team_id: team_id.clone(),
                    display_name: format!("{} {}", NAMES[n % NAMES.len()], n),
                    access_code: Some(format!("code-{pid}")),
                    responsibilities: DUTIES[rng.random_range(0..DUTIES.len())].to_owned(),
                    preferred_window: windows[n % 3],
                    ..Default::default()
                },
            )?);
        }
        teams.push((TOPICS[rng.random_range(0..TOPICS.len())], members));
    }

    let clock = Arc::new(ManualClock::new(at(&cfg, cfg.meeting_date(1), 19, 0)));
    let service = Arc::new(
        Service::new(store.clone(), cfg.clone(), Arc::new(Gateway::stub(opts.seed)), clock.clone(), Arc::new(FeedOnly))
            .map_err(|e| SimError::Runtime(e.to_string()))?,
    );
    let rt = tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .build()
        .map_err(|e| SimError::Runtime(e.to_string()))?;
    let mut client = Client {
        router: crate::http::router(service.clone(), None),
        rt,
        statuses: BTreeMap::new(),
    };

    client.expect(Method::GET, "/health", None, None, &[200])?;
    let login = |client: &mut Client, rec: &ParticipantRecord| -> Result<String, SimError> {
        let v = client.expect(
            Method::POST,
            "/sessions",
            None,
            Some(json!({"participant_id": rec.id(), "access_code": format!("code-{}", rec.id())})),
            &[200],
        )?;
        Ok(v["token"].as_str().unwrap_or_default().to_owned())
    };
    // Sessions expire after a week, so everyone logs in again each day.
    let relogin = |client: &mut Client, roster: &mut [(&str, Vec<Member>)]| -> Result<(), SimError> {
        for (_, members) in roster.iter_mut() {
            for m in members {
                m.token = login(client, &m.rec)?;
            }
        }
        Ok(())
    };
    let mut roster: Vec<(&str, Vec<Member>)> = Vec::new();
    for (topic, members) in &teams {
        let mut logged = Vec::new();
        for rec in members {
            let token = login(&mut client, rec)?;
            logged.push(Member { rec: rec.clone(), token });
        }
        roster.push((topic, logged));
    }

    let upload = |client: &mut Client, topic: &str, m: &[Member], k: u32| -> Result<(), SimError> {
        let (a, b) = (&m[0].rec.participant.display_name, &m[1].rec.participant.display_name);
        client.expect(
            Method::POST,
            "/transcripts",
            Some(&m[0].token),
            Some(json!({
                "meeting_index": k,
                "transcript": transcript(topic, a, b, k),
                "task_name": topic,
                "responsibilities": m[0].rec.responsibilities,
            })),
            &[200],
        )?;
        client.expect(Method::GET, "/dashboard", Some(&m[1].token), None, &[200])?;
        Ok(())
    };
    for (topic, m) in &roster {
        upload(&mut client, topic, m, 1)?;
    }

    let mut ticks_idempotent = true;
    let mut tick = |clock: &ManualClock, when: DateTime<Utc>| -> Result<TickReport, SimError> {
        clock.set(when);
        let report = service.tick().map_err(|e| SimError::Runtime(e.to_string()))?;
        let before: Vec<usize> = Collection::ALL.iter().map(|&c| store.count(c)).collect();
        let again = service.tick().map_err(|e| SimError::Runtime(e.to_string()))?;
        let after: Vec<usize> = Collection::ALL.iter().map(|&c| store.count(c)).collect();
        ticks_idempotent &= before == after && again.prompts_generated == 0 && again.notifications == 0;
        Ok(report)
    };

    let anchor = cfg.meeting_date(1);
    let first_day = cfg.plan().scheduled_days()[0];
    let mut since: BTreeMap<String, DateTime<Utc>> = BTreeMap::new();
    for d in 1..=cfg.interval_days {
        let date = anchor + chrono::Duration::days(d as i64);
        tick(&clock, at(&cfg, date, 8, 0))?;
        tick(&clock, at(&cfg, date, 9, 30))?;

        clock.set(at(&cfg, date, 10, 0));
        relogin(&mut client, &mut roster)?;
        for (_, members) in &roster {
            for m in members {
                client.expect(Method::GET, "/prompts/catch-up", Some(&m.token), None, &[200])?;
                let prompts = client.expect(Method::GET, "/prompts/today", Some(&m.token), None, &[200])?;
                for p in prompts.as_array().into_iter().flatten() {
                    let body = persona_text(&mut rng, d);
                    client.expect(
                        Method::POST,
                        "/responses",
                        Some(&m.token),
                        Some(json!({"prompt_id": p["prompt_id"], "body": body})),
                        &[200],
                    )?;
                }
            }
        }

        tick(&clock, at(&cfg, date, 14, 30))?;
        clock.set(at(&cfg, date, 15, 0));
        for (_, members) in &roster {
            for m in members {
                let structured = m.rec.participant.condition.is_structured();
                let want = if structured { 200 } else { 403 };
                client.expect(Method::GET, &format!("/partner-reflections?day={d}"), Some(&m.token), None, &[want])?;
                let uri = match since.get(m.rec.id().as_str()) {
                    Some(s) => format!("/notifications?since={}", s.format("%Y-%m-%dT%H:%M:%SZ")),
                    None => "/notifications".to_owned(),
                };
                let feed = client.expect(Method::GET, &uri, Some(&m.token), None, &[200])?;
                if let Some(first) = feed.as_array().and_then(|a| a.iter().find(|n| n["read"] == false)) {
                    let id = first["notification_id"].as_str().unwrap_or_default();
                    client.expect(Method::POST, &format!("/notifications/{id}/read"), Some(&m.token), None, &[200])?;
                }
                since.insert(m.rec.id().to_string(), clock.now());
            }
        }

        if d == first_day {
            // One widening in a structured team; one refused share in control.
            for (_, members) in &roster {
                let m = &members[0];
                let entry = format!("en-pr-{}-m1-d{d}-{}", m.rec.id(), m.rec.participant.condition.depths()[0]);
                let (to, want) = match m.rec.participant.condition {
                    StudyCondition::Control => ("partner", 403),
                    _ => ("team", 200),
                };
                client.expect(
                    Method::POST,
                    &format!("/entries/{entry}/visibility"),
                    Some(&m.token),
                    Some(json!({"visibility": to})),
                    &[want],
                )?;
            }
        }

        tick(&clock, at(&cfg, date, 19, 30))?;
    }

    clock.set(at(&cfg, cfg.meeting_date(2), 19, 0));
    relogin(&mut client, &mut roster)?;
    for (topic, m) in &roster {
        upload(&mut client, topic, m, 2)?;
    }

    for (_, members) in &roster {
        for m in members {
            let q: Vec<Option<u8>> = (0..28).map(|_| Some(rng.random_range(1..=5))).collect();
            let tlx = std::array::from_fn(|_| Some(rng.random_range(1..=10)));
            store
                .insert(&SurveyRow {
                    participant_id: m.rec.id().clone(),
                    condition: m.rec.participant.condition,
                    q,
                    tlx,
                })
                .map_err(AdminError::from)?;
        }
    }

    let jsonl = export_jsonl(&store);
    Ok(Simulation {
        service,
        clock,
        jsonl,
        statuses: client.statuses,
        ticks_idempotent,
    })
}
