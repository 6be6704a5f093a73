//! Domain model, cue tables, scheduling, prompt generation and survey
//! analysis for structured between-meeting reflection.

pub mod analysis;
pub mod cues;
pub mod llm;
pub mod model;
pub mod prompt;
pub mod scheduler;
