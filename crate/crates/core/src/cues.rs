//! Day-indexed reflective cue tables.
//!
//! The five canonical stages (after the first meeting, early progress,
//! midway alignment, preparing for completion, final readiness) each carry a
//! regular cue, a deeper cue and an unstructured statement. Longer interval
//! plans reuse the canonical stages, stretched over their scheduled days.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{CueId, Depth, KolbStage};
use crate::scheduler::IntervalPlan;

use KolbStage::{AC, AE, CE, RO};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReflectionCue {
    pub cue_id: CueId,
    /// Day within the interval (1-based) on which the cue is asked.
    pub day_index: u32,
    /// Canonical stage 1..=5 the cue text comes from.
    pub stage: u32,
    pub depth: Depth,
    pub cue_text: String,
    pub kolb_stages: BTreeSet<KolbStage>,
    pub purpose: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CueError {
    #[error("unsupported interval of {0} days (supported: 5, 7, 10, 15)")]
    UnsupportedInterval(i64),
    #[error("day {day} is not a scheduled reflection day of the {interval}-day plan")]
    UnsupportedDay { day: u32, interval: u32 },
    #[error("no cue table for depth {0}")]
    UnsupportedDepth(Depth),
}

struct StageRow {
    title: &'static str,
    regular: (&'static str, &'static [KolbStage], &'static str),
    deeper: (&'static str, &'static [KolbStage], &'static str),
    unstructured: &'static str,
}

const STAGES: [StageRow; 5] = [
    StageRow {
        title: "After Initial Meeting",
        regular: (
            "What tasks did you agree to take on? How do you plan to begin working on them today?",
            &[CE, AE],
            "Reinforce task ownership and encourage immediate planning.",
        ),
        deeper: (
            "What factors influenced how you and your partner divided the work? Do you see any strengths or weaknesses in that division?",
            &[RO, AC],
            "Reflect on rationale and fairness in task division to anticipate future issues.",
        ),
        unstructured: "\u{201c}The first step often shapes the rest of the work.\u{201d} (On Day 1, you may focus on your tasks, how you plan to begin, and the outline of your work ahead. Take a moment to jot down your initial thoughts.)",
    },
    StageRow {
        title: "Early Progress Check",
        regular: (
            "What progress did you make today? Did you face any difficulties?",
            &[CE, RO],
            "Monitor momentum and identify emerging challenges.",
        ),
        deeper: (
            "Why do you think those difficulties came up? What assumptions might you or your partner have made?",
            &[RO, AC],
            "Analyze causes of difficulty and uncover underlying assumptions.",
        ),
        unstructured: "\u{201c}Every step forward comes with its own set of hurdles.\u{201d} (On Day 2, you may think about your progress so far, the outcomes you\u{2019}ve reached, the milestones achieved, and any challenges or obstacles you encountered. Briefly note anything that stood out today.)",
    },
    StageRow {
        title: "Midway Alignment",
        regular: (
            "What part of your work do you feel satisfied with so far?",
            &[RO],
            "Build confidence and reflect on task progress.",
        ),
        deeper: (
            "How does your contribution connect with your partner\u{2019}s role? What adjustments might be needed?",
            &[RO, AC, AE],
            "Reflect on interdependence and plan alignment between contributions.",
        ),
        unstructured: "\u{201c}Not all efforts feel equal \u{2013} some bring a sense of fulfillment.\u{201d} (On Day 3, you may focus on your accomplishments, moments of success, completed work, and the highlights that stand out. Note down what felt most meaningful.)",
    },
    StageRow {
        title: "Preparing for Completion",
        regular: (
            "What tasks remain for you before the next meeting?",
            &[AE],
            "Prepare for completion by outlining final steps.",
        ),
        deeper: (
            "What have you learned about your collaborative work style? How might this help in the upcoming session?",
            &[RO, AC, AE],
            "Build awareness of strategies and refine collaboration habits.",
        ),
        unstructured: "\u{201c}Progress also depends on recognizing what is yet to be finished.\u{201d} (On Day 4, you may focus on what is left unfinished, your goals, pending assignments, upcoming tasks, and how you are preparing for them. Record what remains and how you plan to address it.)",
    },
    StageRow {
        title: "Final Readiness",
        regular: (
            "How ready are you to present your work? What do you still need to polish?",
            &[RO, AE],
            "Evaluate readiness and plan finishing touches.",
        ),
        deeper: (
            "What lessons from this week can improve how you merge your work?",
            &[RO, AC, AE],
            "Generalize insights and apply to immediate and future collaboration.",
        ),
        unstructured: "\u{201c}Readiness often shows in the final touches.\u{201d} (On Day 5, you may focus on your presentation, the final polish, clarity of ideas, confidence, and overall preparation. Use this space to assess your readiness before the final meeting.)",
    },
];

/// Title of a canonical stage (1..=5), e.g. "Midway Alignment".
pub fn stage_title(stage: u32) -> Option<&'static str> {
    STAGES.get(stage.checked_sub(1)? as usize).map(|s| s.title)
}

/// The cue of one canonical stage and depth, placed on `day_index`.
pub fn canonical_cue(stage: u32, depth: Depth, day_index: u32) -> Result<ReflectionCue, CueError> {
    let row = stage
        .checked_sub(1)
        .and_then(|i| STAGES.get(i as usize))
        .ok_or(CueError::UnsupportedDay {
            day: stage,
            interval: 5,
        })?;
    let (text, stages, purpose): (&str, &[KolbStage], &str) = match depth {
        Depth::Regular => row.regular,
        Depth::Deeper => row.deeper,
        Depth::Unstructured => (row.unstructured, &[], "Unstructured evocative statement with general guidance."),
        Depth::CatchUp => return Err(CueError::UnsupportedDepth(depth)),
    };
    Ok(ReflectionCue {
        cue_id: CueId::new(format!("d{day_index}-s{stage}-{depth}")),
        day_index,
        stage,
        depth,
        cue_text: text.to_owned(),
        kolb_stages: stages.iter().copied().collect(),
        purpose: purpose.to_owned(),
    })
}

/// Full ordered cue list for a plan and depth, one cue per scheduled day.
pub fn cue_table(plan: &IntervalPlan, depth: Depth) -> Result<Vec<ReflectionCue>, CueError> {
    plan.scheduled_days()
        .iter()
        .map(|&day| canonical_cue(plan.stage_for(day)?, depth, day))
        .collect()
}

/// The cue asked on one day of a plan.
pub fn cue_for_day(plan: &IntervalPlan, day: u32, depth: Depth) -> Result<ReflectionCue, CueError> {
    canonical_cue(plan.stage_for(day)?, depth, day)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn five() -> IntervalPlan {
        IntervalPlan::for_interval(5).unwrap()
    }

    fn set(s: &[KolbStage]) -> BTreeSet<KolbStage> {
        s.iter().copied().collect()
    }

    #[test]
    fn five_day_stage_mapping_is_exact() {
        let expected: [(&[KolbStage], &[KolbStage]); 5] = [
            (&[CE, AE], &[RO, AC]),
            (&[CE, RO], &[RO, AC]),
            (&[RO], &[RO, AC, AE]),
            (&[AE], &[RO, AC, AE]),
            (&[RO, AE], &[RO, AC, AE]),
        ];
        let regular = cue_table(&five(), Depth::Regular).unwrap();
        let deeper = cue_table(&five(), Depth::Deeper).unwrap();
        for (i, (r, d)) in expected.iter().enumerate() {
            assert_eq!(regular[i].day_index, i as u32 + 1);
            assert_eq!(regular[i].kolb_stages, set(r), "regular day {}", i + 1);
            assert_eq!(deeper[i].kolb_stages, set(d), "deeper day {}", i + 1);
        }
    }

    #[test]
    fn day_three_regular_cue() {
        let cue = cue_for_day(&five(), 3, Depth::Regular).unwrap();
        assert_eq!(cue.cue_text, "What part of your work do you feel satisfied with so far?");
        assert_eq!(cue.kolb_stages, set(&[RO]));
    }

    #[test]
    fn deeper_cues_all_include_ro() {
        let deeper = cue_table(&five(), Depth::Deeper).unwrap();
        assert_eq!(deeper.len(), 5);
        assert!(deeper.iter().all(|c| c.kolb_stages.contains(&RO)));
    }

    #[test]
    fn unstructured_cues_have_no_stages() {
        let un = cue_table(&five(), Depth::Unstructured).unwrap();
        assert!(un[0].cue_text.starts_with("\u{201c}The first step often shapes the rest of the work."));
        assert!(un.iter().all(|c| c.kolb_stages.is_empty()));
    }

    #[test]
    fn longer_plans_stretch_the_stages() {
        for interval in [7, 10, 15] {
            let plan = IntervalPlan::for_interval(interval).unwrap();
            let cues = cue_table(&plan, Depth::Regular).unwrap();
            assert_eq!(cues.len(), plan.scheduled_days().len());
            assert_eq!(cues.first().unwrap().stage, 1);
            assert_eq!(cues.last().unwrap().stage, 5);
            assert!(cues.windows(2).all(|w| w[0].stage <= w[1].stage));
        }
    }

    #[test]
    fn unscheduled_day_is_rejected() {
        let plan = IntervalPlan::for_interval(10).unwrap();
        assert!(matches!(
            cue_for_day(&plan, 3, Depth::Regular),
            Err(CueError::UnsupportedDay { day: 3, interval: 10 })
        ));
    }

    #[test]
    fn catch_up_has_no_cue_table() {
        assert!(cue_table(&five(), Depth::CatchUp).is_err());
    }
}
