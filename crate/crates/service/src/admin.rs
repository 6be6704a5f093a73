//! Study setup operations shared by the CLI and the simulator.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use reflect_core::model::{
    NotificationChannel, Participant, ParticipantId, PreferredWindow, StudyCondition, Team, TeamId,
};
use thiserror::Error;

use crate::config::{ConfigError, StudyConfig};
use crate::records::ParticipantRecord;
use crate::service::hash_access_code;
use crate::store::{Store, StoreError};

pub const STUDY_FILE: &str = "study.json";

#[derive(Debug, Error)]
pub enum AdminError {
    #[error("no study found in {0} (run `study create` first)")]
    UnknownStudy(String),
    #[error("{kind} {id} already exists")]
    DuplicateId { kind: &'static str, id: String },
    #[error("{0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

impl From<ConfigError> for AdminError {
    fn from(e: ConfigError) -> Self {
        AdminError::InvalidConfig(e.to_string())
    }
}

impl AdminError {
    pub fn code(&self) -> &'static str {
        match self {
            AdminError::UnknownStudy(_) => "unknown_study",
            AdminError::DuplicateId { .. } => "duplicate_id",
            AdminError::InvalidConfig(_) => "invalid_config",
            AdminError::Store(StoreError::UnknownTeam(_)) => "unknown_team",
            AdminError::Store(StoreError::UnsupportedFormat(_)) => "unsupported_format",
            AdminError::Store(_) => "store_error",
        }
    }
}

fn study_path(dir: &Path) -> PathBuf {
    dir.join(STUDY_FILE)
}

pub fn create_study(dir: &Path, cfg: &StudyConfig) -> Result<(), AdminError> {
    cfg.validate()?;
    let path = study_path(dir);
    if path.exists() {
        return Err(AdminError::DuplicateId {
            kind: "study",
            id: dir.display().to_string(),
        });
    }
    std::fs::create_dir_all(dir).map_err(|e| StoreError::Io(e.to_string()))?;
    let text = serde_json::to_string_pretty(cfg).map_err(|e| AdminError::InvalidConfig(e.to_string()))?;
    std::fs::write(&path, text + "\n").map_err(|e| StoreError::Io(e.to_string()))?;
    Ok(())
}

pub fn load_study(dir: &Path) -> Result<StudyConfig, AdminError> {
    let path = study_path(dir);
    if !path.exists() {
        return Err(AdminError::UnknownStudy(dir.display().to_string()));
    }
    Ok(StudyConfig::load(&path)?)
}

pub fn add_team(store: &Store, team_id: &str, condition: StudyCondition, task_name: &str) -> Result<Team, AdminError> {
    let team = Team {
        team_id: TeamId::new(team_id),
        condition,
        task_name: task_name.to_owned(),
    };
    match store.insert(&team) {
        Ok(_) => Ok(team),
        Err(StoreError::RevisionConflict { .. }) => Err(AdminError::DuplicateId {
            kind: "team",
            id: team_id.to_owned(),
        }),
        Err(e) => Err(e.into()),
    }
}

#[derive(Debug, Clone, Default)]
pub struct NewParticipant {
    pub participant_id: String,
    pub team_id: String,
    pub display_name: String,
    pub access_code: Option<String>,
    pub responsibilities: String,
    pub preferred_window: PreferredWindow,
    pub notification_channel: NotificationChannel,
}

/// Adds a participant; their condition is the team's.
pub fn add_participant(store: &Store, new: &NewParticipant) -> Result<ParticipantRecord, AdminError> {
    let team_id = TeamId::new(&new.team_id);
    let (team, _) = store
        .load::<Team>(team_id.as_str())?
        .ok_or_else(|| StoreError::UnknownTeam(team_id.clone()))?;
    let rec = ParticipantRecord {
        participant: Participant {
            participant_id: ParticipantId::new(&new.participant_id),
            display_name: new.display_name.clone(),
            team_id,
            condition: team.condition,
            notification_channel: new.notification_channel,
            preferred_window: new.preferred_window,
        },
        responsibilities: new.responsibilities.clone(),
        access_code_sha256: new.access_code.as_deref().map(hash_access_code),
    };
    match store.insert(&rec) {
        Ok(_) => Ok(rec),
        Err(StoreError::RevisionConflict { .. }) => Err(AdminError::DuplicateId {
            kind: "participant",
            id: new.participant_id.clone(),
        }),
        Err(e) => Err(e.into()),
    }
}

/// Balanced random assignment: conditions are dealt round-robin, then
/// shuffled with a seeded generator.
pub fn random_assignment(n_teams: usize, seed: u64) -> Vec<StudyCondition> {
    let mut conditions: Vec<StudyCondition> = StudyCondition::ALL.iter().copied().cycle().take(n_teams).collect();
    conditions.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    conditions
}

/// Reassigns every team (in id order) and its members.
pub fn assign_conditions(store: &Store, seed: u64) -> Result<Vec<(TeamId, StudyCondition)>, AdminError> {
    let teams = store.all::<Team>()?;
    let conditions = random_assignment(teams.len(), seed);
    let mut out = Vec::new();
    for (mut team, condition) in teams.into_iter().zip(conditions) {
        let (_, rev) = store.load::<Team>(team.team_id.as_str())?.expect("listed team exists");
        if team.condition != condition {
            team.condition = condition;
            store.update(&team, rev)?;
        }
        for mut m in store.team_members(&team.team_id)? {
            if m.participant.condition != condition {
                let (_, rev) = store
                    .load::<ParticipantRecord>(m.id().as_str())?
                    .expect("listed participant exists");
                m.participant.condition = condition;
                store.update(&m, rev)?;
            }
        }
        out.push((team.team_id, condition));
    }
    Ok(out)
}
