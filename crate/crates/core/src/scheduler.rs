//! Interval-adaptive reflection scheduling.
//!
//! Meeting dates are the anchors: day `d` of an interval is the local date
//! `anchor + d`, so every event falls in `(anchor, next_meeting]`. The plan
//! for a given interval length decides which days carry prompts; the
//! condition decides how many prompts and which reminders each day gets.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Duration, FixedOffset, NaiveDate, NaiveDateTime, NaiveTime, TimeZone, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cues::CueError;
use crate::model::{Depth, ParticipantId, PreferredWindow, StudyCondition, TeamId};

pub const SUPPORTED_INTERVALS: [u32; 4] = [5, 7, 10, 15];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScheduleError {
    #[error("unsupported interval of {0} days (supported: 5, 7, 10, 15)")]
    UnsupportedInterval(i64),
    #[error("next meeting {next} is not after anchor {anchor}")]
    InvalidDates { anchor: NaiveDate, next: NaiveDate },
    #[error("plan violates the {interval}-day frequency rules: {reason}")]
    PlanViolation { interval: u32, reason: String },
    #[error("catch-up digest needs at least one missed prompt")]
    EmptyMissedList,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Intensity {
    Light,
    Deep,
    Planning,
}

/// Which days of an interval carry reflections, and how heavy each one is.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntervalPlan {
    interval_days: u32,
    scheduled_days: Vec<u32>,
    depth_profile: BTreeMap<u32, Intensity>,
}

impl IntervalPlan {
    /// The default plan for one of the supported interval lengths.
    pub fn for_interval(days: i64) -> Result<Self, ScheduleError> {
        use Intensity::*;
        let (interval, profile): (u32, &[(u32, Intensity)]) = match days {
            5 => (5, &[(1, Light), (2, Light), (3, Light), (4, Light), (5, Planning)]),
            7 => (
                7,
                &[(1, Light), (2, Light), (3, Light), (4, Deep), (5, Light), (6, Planning)],
            ),
            10 => (10, &[(2, Light), (4, Deep), (7, Light), (9, Deep)]),
            15 => (15, &[(3, Light), (5, Light), (8, Deep), (13, Planning), (14, Planning)]),
            other => return Err(ScheduleError::UnsupportedInterval(other)),
        };
        Self::custom(interval, profile.iter().copied())
    }

    /// A deployment-specific plan; rejected unless it satisfies the
    /// frequency rules of its interval length.
    pub fn custom(
        interval_days: u32,
        profile: impl IntoIterator<Item = (u32, Intensity)>,
    ) -> Result<Self, ScheduleError> {
        let depth_profile: BTreeMap<u32, Intensity> = profile.into_iter().collect();
        let plan = Self {
            interval_days,
            scheduled_days: depth_profile.keys().copied().collect(),
            depth_profile,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn interval_days(&self) -> u32 {
        self.interval_days
    }

    pub fn scheduled_days(&self) -> &[u32] {
        &self.scheduled_days
    }

    pub fn depth_profile(&self) -> &BTreeMap<u32, Intensity> {
        &self.depth_profile
    }

    pub fn intensity(&self, day: u32) -> Option<Intensity> {
        self.depth_profile.get(&day).copied()
    }

    pub fn is_scheduled(&self, day: u32) -> bool {
        self.depth_profile.contains_key(&day)
    }

    pub fn last_day(&self) -> u32 {
        *self.scheduled_days.last().expect("validated plans are non-empty")
    }

    /// Canonical stage (1..=5) asked on `day`. The stages are spread
    /// proportionally over the scheduled days so the first day is always
    /// stage 1 and the last always stage 5.
    pub fn stage_for(&self, day: u32) -> Result<u32, CueError> {
        let pos = self
            .scheduled_days
            .iter()
            .position(|&d| d == day)
            .ok_or(CueError::UnsupportedDay {
                day,
                interval: self.interval_days,
            })?;
        let n = self.scheduled_days.len();
        if n == 1 {
            return Ok(5);
        }
        let scaled = (pos * 4) as f64 / (n - 1) as f64;
        Ok(1 + scaled.round() as u32)
    }

    /// Checks the frequency rules for the plan's interval length.
    pub fn validate(&self) -> Result<(), ScheduleError> {
        let interval = self.interval_days;
        let fail = |reason: String| Err(ScheduleError::PlanViolation { interval, reason });
        let days = &self.scheduled_days;
        if days.is_empty() {
            return fail("no scheduled days".into());
        }
        if days.iter().any(|&d| d == 0 || d > interval) {
            return fail(format!("days {days:?} fall outside 1..={interval}"));
        }
        let deep: Vec<u32> = self
            .depth_profile
            .iter()
            .filter(|(_, i)| **i == Intensity::Deep)
            .map(|(d, _)| *d)
            .collect();
        match interval {
            5 => {
                if days != &[1, 2, 3, 4, 5] {
                    return fail(format!("expected daily reflections, got {days:?}"));
                }
            }
            7 => {
                if !(5..=6).contains(&days.len()) {
                    return fail(format!("expected 5-6 reflections, got {}", days.len()));
                }
                if deep.len() != 1 {
                    return fail(format!("expected exactly one deeper day, got {deep:?}"));
                }
                if !(3..=5).contains(&deep[0]) {
                    return fail(format!("deeper day {} is not mid-cycle", deep[0]));
                }
            }
            10 => {
                if !(4..=5).contains(&days.len()) {
                    return fail(format!("expected 4-5 reflections, got {}", days.len()));
                }
                if days.windows(2).any(|w| !(2..=3).contains(&(w[1] - w[0]))) {
                    return fail(format!("gaps in {days:?} are not 2-3 days"));
                }
            }
            15 => {
                let early = days.iter().filter(|d| (3..=5).contains(*d)).count();
                let mid = days.iter().filter(|d| (7..=10).contains(*d)).count();
                let late = days.iter().filter(|d| (13..=14).contains(*d)).count();
                if early + mid + late != days.len() {
                    return fail(format!("{days:?} has days outside the early/mid/late bands"));
                }
                if early == 0 || mid == 0 || late == 0 {
                    return fail(format!("{days:?} leaves a band empty"));
                }
            }
            other => return Err(ScheduleError::UnsupportedInterval(other as i64)),
        }
        Ok(())
    }
}

/// A time-of-day window with the instant reminders fire at by default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start: NaiveTime,
    pub end: NaiveTime,
    pub fire: NaiveTime,
}

impl Window {
    fn hm(h: u32, m: u32) -> NaiveTime {
        NaiveTime::from_hms_opt(h, m, 0).expect("valid wall-clock time")
    }

    pub fn new(start_h: u32, end_h: u32, fire_h: u32) -> Self {
        Self {
            start: Self::hm(start_h, 0),
            end: Self::hm(end_h, 0),
            fire: Self::hm(fire_h, 0),
        }
    }

    pub fn contains(&self, t: NaiveTime) -> bool {
        self.start <= t && t < self.end
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub morning: Window,
    pub afternoon: Window,
    pub evening: Window,
    /// Local time of the meeting that closes the interval.
    pub meeting_time: NaiveTime,
    /// How long before that meeting the final prompt is released.
    pub final_prompt_lead_hours: i64,
    /// Participant-local offset from UTC, stored as seconds east.
    #[serde(with = "offset_seconds")]
    pub utc_offset: FixedOffset,
}

mod offset_seconds {
    use chrono::FixedOffset;
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(o: &FixedOffset, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_i32(o.local_minus_utc())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<FixedOffset, D::Error> {
        let secs = i32::deserialize(d)?;
        FixedOffset::east_opt(secs).ok_or_else(|| D::Error::custom(format!("offset {secs}s out of range")))
    }
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            morning: Window::new(8, 12, 9),
            afternoon: Window::new(12, 17, 14),
            evening: Window::new(17, 23, 19),
            meeting_time: NaiveTime::from_hms_opt(18, 0, 0).expect("valid"),
            final_prompt_lead_hours: 4,
            utc_offset: FixedOffset::east_opt(0).expect("valid"),
        }
    }
}

impl ScheduleConfig {
    pub fn window(&self, w: PreferredWindow) -> &Window {
        match w {
            PreferredWindow::Morning => &self.morning,
            PreferredWindow::Afternoon => &self.afternoon,
            PreferredWindow::Evening => &self.evening,
        }
    }

    pub fn to_utc(&self, local: NaiveDateTime) -> DateTime<Utc> {
        self.utc_offset
            .from_local_datetime(&local)
            .single()
            .expect("fixed offsets are unambiguous")
            .with_timezone(&Utc)
    }

    pub fn local_date(&self, at: DateTime<Utc>) -> NaiveDate {
        at.with_timezone(&self.utc_offset).date_naive()
    }

    pub fn date_of_day(anchor: NaiveDate, day: u32) -> NaiveDate {
        anchor + Duration::days(day as i64)
    }

    /// Interval day index of `at` relative to `anchor`, if it is inside
    /// `(anchor, anchor + interval]`.
    pub fn day_index_at(&self, anchor: NaiveDate, interval: u32, at: DateTime<Utc>) -> Option<u32> {
        let offset = (self.local_date(at) - anchor).num_days();
        (1..=interval as i64).contains(&offset).then_some(offset as u32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    PromptDue,
    PromptReminder,
    PartnerViewReminder,
    CatchupDigest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReminderKind {
    Prompt,
    PartnerView,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleEvent {
    pub kind: EventKind,
    pub participant_id: ParticipantId,
    pub day_index: u32,
    /// Set on `prompt_due` events.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<Depth>,
    pub fire_at: DateTime<Utc>,
}

impl ScheduleEvent {
    fn sort_key(&self) -> (DateTime<Utc>, EventKind, &ParticipantId, Option<Depth>) {
        (self.fire_at, self.kind, &self.participant_id, self.depth)
    }
}

/// Per-member input to [`build_schedule`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemberPrefs {
    pub participant_id: ParticipantId,
    #[serde(default)]
    pub preferred_window: PreferredWindow,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub team_id: TeamId,
    pub condition: StudyCondition,
    pub anchor_date: NaiveDate,
    pub next_meeting_date: NaiveDate,
    pub plan: IntervalPlan,
    pub events: Vec<ScheduleEvent>,
}

impl Schedule {
    pub fn events_of(&self, kind: EventKind) -> impl Iterator<Item = &ScheduleEvent> {
        self.events.iter().filter(move |e| e.kind == kind)
    }

    pub fn window_contains(&self, cfg: &ScheduleConfig, at: DateTime<Utc>) -> bool {
        let d = cfg.local_date(at);
        d > self.anchor_date && d <= self.next_meeting_date
    }
}

/// Local instant a reminder fires on `day`. Prompt reminders follow the
/// participant's preferred window; partner-view reminders are always in the
/// evening.
pub fn reminder_time(
    anchor: NaiveDate,
    day: u32,
    kind: ReminderKind,
    prefs: PreferredWindow,
    cfg: &ScheduleConfig,
) -> DateTime<Utc> {
    let fire = match kind {
        ReminderKind::Prompt => cfg.window(prefs).fire,
        ReminderKind::PartnerView => cfg.evening.fire,
    };
    cfg.to_utc(ScheduleConfig::date_of_day(anchor, day).and_time(fire))
}

fn release_time(plan: &IntervalPlan, anchor: NaiveDate, day: u32, cfg: &ScheduleConfig) -> NaiveDateTime {
    let date = ScheduleConfig::date_of_day(anchor, day);
    let normal = date.and_time(cfg.morning.start);
    if day == plan.interval_days() {
        // The prompt on the meeting day must be answerable before the meeting.
        let meeting = date.and_time(cfg.meeting_time);
        let before = (meeting - Duration::hours(cfg.final_prompt_lead_hours)).max(date.and_time(NaiveTime::MIN));
        normal.min(before)
    } else {
        normal
    }
}

/// Builds the event plan for one team between two meetings.
pub fn build_schedule(
    team_id: TeamId,
    anchor_date: NaiveDate,
    next_meeting_date: NaiveDate,
    condition: StudyCondition,
    members: &[MemberPrefs],
    cfg: &ScheduleConfig,
) -> Result<Schedule, ScheduleError> {
    let span = (next_meeting_date - anchor_date).num_days();
    if span <= 0 {
        return Err(ScheduleError::InvalidDates {
            anchor: anchor_date,
            next: next_meeting_date,
        });
    }
    let plan = IntervalPlan::for_interval(span)?;
    build_schedule_with_plan(team_id, anchor_date, condition, members, plan, cfg)
}

/// Like [`build_schedule`] with an explicit, already-validated plan.
pub fn build_schedule_with_plan(
    team_id: TeamId,
    anchor_date: NaiveDate,
    condition: StudyCondition,
    members: &[MemberPrefs],
    plan: IntervalPlan,
    cfg: &ScheduleConfig,
) -> Result<Schedule, ScheduleError> {
    plan.validate()?;
    let next_meeting_date = anchor_date + Duration::days(plan.interval_days() as i64);
    let last = plan.last_day();
    let mut events = Vec::new();
    for member in members {
        for &day in plan.scheduled_days() {
            let release = cfg.to_utc(release_time(&plan, anchor_date, day, cfg));
            for &depth in condition.depths() {
                events.push(ScheduleEvent {
                    kind: EventKind::PromptDue,
                    participant_id: member.participant_id.clone(),
                    day_index: day,
                    depth: Some(depth),
                    fire_at: release,
                });
            }

            let mut remind = reminder_time(anchor_date, day, ReminderKind::Prompt, member.preferred_window, cfg);
            if day == plan.interval_days() {
                let deadline = cfg.to_utc(
                    ScheduleConfig::date_of_day(anchor_date, day).and_time(cfg.meeting_time)
                        - Duration::hours(cfg.final_prompt_lead_hours),
                );
                remind = remind.min(deadline).max(release);
            }
            events.push(ScheduleEvent {
                kind: EventKind::PromptReminder,
                participant_id: member.participant_id.clone(),
                day_index: day,
                depth: None,
                fire_at: remind,
            });

            if condition.is_structured() && day != last {
                events.push(ScheduleEvent {
                    kind: EventKind::PartnerViewReminder,
                    participant_id: member.participant_id.clone(),
                    day_index: day,
                    depth: None,
                    fire_at: reminder_time(
                        anchor_date,
                        day,
                        ReminderKind::PartnerView,
                        member.preferred_window,
                        cfg,
                    ),
                });
            }
        }
    }
    events.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    Ok(Schedule {
        team_id,
        condition,
        anchor_date,
        next_meeting_date,
        plan,
        events,
    })
}

/// Which prompts a participant has dealt with, either individually or as
/// part of an answered catch-up digest.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmissionLedger {
    answered: BTreeSet<(ParticipantId, u32, Depth)>,
    whole_days: BTreeSet<(ParticipantId, u32)>,
}

impl SubmissionLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, participant: ParticipantId, day: u32, depth: Depth) {
        self.answered.insert((participant, day, depth));
    }

    /// Marks every prompt of `day` as answered.
    pub fn record_day(&mut self, participant: ParticipantId, day: u32) {
        self.whole_days.insert((participant, day));
    }

    pub fn is_answered(&self, participant: &ParticipantId, day: u32, depth: Depth) -> bool {
        self.whole_days.contains(&(participant.clone(), day))
            || self.answered.contains(&(participant.clone(), day, depth))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DuePrompt {
    pub participant_id: ParticipantId,
    pub day_index: u32,
    pub depth: Depth,
}

/// Released, unanswered prompts at `now`, in release order.
pub fn due_prompts(schedule: &Schedule, now: DateTime<Utc>, submitted: &SubmissionLedger) -> Vec<DuePrompt> {
    schedule
        .events_of(EventKind::PromptDue)
        .filter(|e| e.fire_at <= now)
        .filter_map(|e| {
            let depth = e.depth?;
            (!submitted.is_answered(&e.participant_id, e.day_index, depth)).then(|| DuePrompt {
                participant_id: e.participant_id.clone(),
                day_index: e.day_index,
                depth,
            })
        })
        .collect()
}

/// One merged prompt standing in for several missed days.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatchUpDigest {
    pub days: Vec<u32>,
    pub text: String,
}

impl CatchUpDigest {
    /// Records an answer to the digest: every covered day counts as done.
    pub fn mark_answered(&self, participant: &ParticipantId, ledger: &mut SubmissionLedger) {
        for &day in &self.days {
            ledger.record_day(participant.clone(), day);
        }
    }
}

/// Merges missed `(day, question)` pairs into a single catch-up prompt.
pub fn catchup_digest(missed: &[(u32, String)]) -> Result<CatchUpDigest, ScheduleError> {
    if missed.is_empty() {
        return Err(ScheduleError::EmptyMissedList);
    }
    let mut by_day: BTreeMap<u32, Vec<&str>> = BTreeMap::new();
    for (day, question) in missed {
        by_day.entry(*day).or_default().push(question.as_str());
    }
    let days: Vec<u32> = by_day.keys().copied().collect();
    let label = match days.as_slice() {
        [one] => format!("day {one}"),
        many => {
            let (last, rest) = many.split_last().expect("non-empty");
            let rest: Vec<String> = rest.iter().map(u32::to_string).collect();
            format!("days {} and {last}", rest.join(", "))
        }
    };
    let mut text = format!(
        "Catch-up: you have not yet reflected on {label}. In one short response, look back over that stretch and touch on whichever of these feels most relevant now:"
    );
    for (day, questions) in &by_day {
        for q in questions {
            text.push_str(&format!("\n- Day {day}: {q}"));
        }
    }
    Ok(CatchUpDigest { days, text })
}
