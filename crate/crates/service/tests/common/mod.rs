#![allow(dead_code)]

use std::sync::Arc;

use chrono::{DateTime, Duration, NaiveTime, Utc};
use reflect_core::llm::Gateway;
use reflect_core::model::{ManualClock, ParticipantId, PreferredWindow, StudyCondition};
use reflect_service::admin::{self, NewParticipant};
use reflect_service::config::StudyConfig;
use reflect_service::notify::{CaptureDispatcher, Dispatcher};
use reflect_service::records::ParticipantRecord;
use reflect_service::service::{Service, TranscriptResponse, TranscriptUpload};
use reflect_service::store::Store;

pub const TEAMS: [(&str, StudyCondition, [&str; 2]); 3] = [
    ("t-reg", StudyCondition::Regular, ["r1", "r2"]),
    ("t-deep", StudyCondition::Deeper, ["d1", "d2"]),
    ("t-ctl", StudyCondition::Control, ["c1", "c2"]),
];

pub struct Fixture {
    pub svc: Arc<Service>,
    pub store: Arc<Store>,
    pub clock: Arc<ManualClock>,
    pub capture: Arc<CaptureDispatcher>,
    pub cfg: StudyConfig,
}

pub fn seed_teams(store: &Store) {
    for (team, condition, members) in TEAMS {
        admin::add_team(store, team, condition, "a poster on coral reef restoration").unwrap();
        for (i, m) in members.iter().enumerate() {
            admin::add_participant(
                store,
                &NewParticipant {
                    participant_id: m.to_string(),
                    team_id: team.into(),
                    display_name: format!("{}{}", m.to_uppercase(), i),
                    access_code: Some(format!("code-{m}")),
                    responsibilities: "the background section".into(),
                    preferred_window: PreferredWindow::Morning,
                    ..Default::default()
                },
            )
            .unwrap();
        }
    }
}

impl Fixture {
    pub fn new(cfg: StudyConfig) -> Self {
        let store = Arc::new(Store::in_memory());
        seed_teams(&store);
        Self::over(store, cfg)
    }

    pub fn over(store: Arc<Store>, cfg: StudyConfig) -> Self {
        let capture = Arc::new(CaptureDispatcher::default());
        Self::with_dispatcher(store, cfg, capture.clone(), capture)
    }

    pub fn with_dispatcher(
        store: Arc<Store>,
        cfg: StudyConfig,
        dispatcher: Arc<dyn Dispatcher>,
        capture: Arc<CaptureDispatcher>,
    ) -> Self {
        let clock = Arc::new(ManualClock::new(local(&cfg, 0, 19, 0)));
        let svc = Service::new(store.clone(), cfg.clone(), Arc::new(Gateway::stub(3)), clock.clone(), dispatcher).unwrap();
        Self {
            svc: Arc::new(svc),
            store,
            clock,
            capture,
            cfg,
        }
    }

    pub fn p(&self, id: &str) -> ParticipantRecord {
        self.svc.participant(&ParticipantId::new(id)).unwrap()
    }

    /// Moves the clock to `day` days after the first meeting, local time.
    pub fn at(&self, day: i64, h: u32, m: u32) {
        self.clock.set(local(&self.cfg, day, h, m));
    }

    pub fn upload(&self, id: &str, k: u32) -> TranscriptResponse {
        self.svc.upload_transcript(&self.p(id), &upload(k)).unwrap()
    }
}

pub fn local(cfg: &StudyConfig, day: i64, h: u32, m: u32) -> DateTime<Utc> {
    let date = cfg.start_date + Duration::days(day);
    cfg.schedule.to_utc(date.and_time(NaiveTime::from_hms_opt(h, m, 0).unwrap()))
}

pub fn upload(k: u32) -> TranscriptUpload {
    TranscriptUpload {
        meeting_index: k,
        transcript: format!(
            "[00:00:03] Ana: Meeting {k}. I will collect the survey data.\n[00:00:40] Ben: I will write the methods and draw the figures.\n"
        ),
        task_name: Some("a poster on coral reef restoration".into()),
        responsibilities: None,
    }
}

/// A body of exactly `n` whitespace-separated words.
pub fn words(n: usize) -> String {
    (0..n).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ")
}
