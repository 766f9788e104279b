//! Language-model capability behind the four generation tasks: behavior
//! planning, agent-to-agent dialogue, memory summarization and user replies.
//!
//! Providers implement [`Cognition`]. Callers go through the free functions
//! in this module ([`plan_next`], [`next_dialogue_turn`],
//! [`summarize_events`], [`respond_to_user`]), which check preconditions and
//! repair provider output so every returned value satisfies its invariants
//! no matter what the provider produced.

mod llm;
mod remote;
mod stub;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{AgentId, AgentProfile};
use crate::memory::{ContextBundle, MemoryEvent, Summarizer};
use crate::world::{SceneArea, SceneCategory, SceneId, WorldMap};

pub use llm::{parse_block, ChatMessage, ChatModel, ChatRole, LlmCognition};
pub use remote::{OpenAiCompatClient, ProviderConfig, ProviderError, Retrying};
pub use stub::StubCognition;

/// Default cap on agent-to-agent conversation length.
pub const DEFAULT_MAX_TURNS: usize = 6;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CognitionError {
    #[error("provider unavailable after {attempts} attempt(s): {reason}")]
    Unavailable { attempts: u32, reason: String },
    #[error("precondition violated: {0}")]
    Precondition(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanDecision {
    pub destination: SceneId,
    pub activity: String,
    #[serde(default)]
    pub rationale: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueTurn {
    pub speaker: AgentId,
    pub text: String,
    pub terminate: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserReply {
    pub text: String,
    pub accepted_action: Option<PlanDecision>,
}

pub struct PlanRequest<'a> {
    pub profile: &'a AgentProfile,
    pub context: &'a ContextBundle,
    pub map: &'a WorldMap,
}

/// One side of an agent-to-agent conversation.
#[derive(Clone, Copy)]
pub struct Interlocutor<'a> {
    pub profile: &'a AgentProfile,
    pub context: &'a ContextBundle,
}

pub struct DialogueRequest<'a> {
    pub turns: &'a [DialogueTurn],
    pub speaker: Interlocutor<'a>,
    pub listener: Interlocutor<'a>,
    pub max_turns: usize,
}

pub struct ReplyRequest<'a> {
    pub profile: &'a AgentProfile,
    pub context: &'a ContextBundle,
    pub map: &'a WorldMap,
    pub user_text: &'a str,
}

/// A language-model provider. Implementations return raw decisions; the
/// module-level functions validate and repair them.
pub trait Cognition: Send + Sync {
    fn plan(&self, req: &PlanRequest<'_>) -> Result<PlanDecision, CognitionError>;
    fn dialogue_turn(&self, req: &DialogueRequest<'_>) -> Result<DialogueTurn, CognitionError>;
    fn summarize(&self, events: &[MemoryEvent]) -> Result<String, CognitionError>;
    fn reply(&self, req: &ReplyRequest<'_>) -> Result<UserReply, CognitionError>;
}

/// Activity an agent falls back to in `scene`: its occupation's routine at
/// home, otherwise the scene category's usual pastime.
pub fn default_activity(profile: &AgentProfile, scene: &SceneArea) -> String {
    if scene.id == profile.home_scene {
        return match profile.occupation.as_str() {
            "chef" => "preparing ingredients".into(),
            "musician" => "practicing a new song".into(),
            "librarian" => "sorting returned books".into(),
            "gardener" => "watering the flower beds".into(),
            "barista" => "brewing a fresh batch of coffee".into(),
            other => format!("working as a {other}"),
        };
    }
    match scene.category {
        SceneCategory::Dining => "having a bite to eat",
        SceneCategory::Leisure => "taking a stroll among the flowers",
        SceneCategory::Culture => "browsing the shelves",
        SceneCategory::Social => "chatting with passers-by",
    }
    .into()
}

/// A validated plan, plus the provider's destination if it had to be
/// replaced.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Planned {
    pub decision: PlanDecision,
    pub repaired_from: Option<String>,
}

pub fn plan_next(
    cognition: &dyn Cognition,
    profile: &AgentProfile,
    context: &ContextBundle,
    map: &WorldMap,
) -> Result<Planned, CognitionError> {
    if map.scenes().is_empty() {
        return Err(CognitionError::Precondition("map has no scenes".into()));
    }
    let raw = cognition.plan(&PlanRequest {
        profile,
        context,
        map,
    })?;
    let (scene, repaired_from) = match map.scene(raw.destination.as_str()) {
        Some(scene) => (scene, None),
        None => {
            let home = map
                .scene(profile.home_scene.as_str())
                .unwrap_or(&map.scenes()[0]);
            tracing::info!(
                agent = %profile.id,
                requested = %raw.destination,
                repaired = %home.id,
                "plan named an unknown scene"
            );
            (home, Some(raw.destination.0.clone()))
        }
    };
    let activity = if repaired_from.is_some() || raw.activity.trim().is_empty() {
        default_activity(profile, scene)
    } else {
        raw.activity.trim().to_owned()
    };
    Ok(Planned {
        decision: PlanDecision {
            destination: scene.id.clone(),
            activity,
            rationale: raw.rationale,
        },
        repaired_from,
    })
}

/// Produces the next turn of a conversation. The speaker alternates starting
/// with `initiator`; the turn at index `max_turns - 1` always terminates.
pub fn next_dialogue_turn(
    cognition: &dyn Cognition,
    turns: &[DialogueTurn],
    initiator: Interlocutor<'_>,
    partner: Interlocutor<'_>,
    max_turns: usize,
) -> Result<DialogueTurn, CognitionError> {
    if turns.len() >= max_turns {
        return Err(CognitionError::Precondition(format!(
            "conversation already has {} of {max_turns} turns",
            turns.len()
        )));
    }
    let (speaker, listener) = if turns.len() % 2 == 0 {
        (initiator, partner)
    } else {
        (partner, initiator)
    };
    let raw = cognition.dialogue_turn(&DialogueRequest {
        turns,
        speaker,
        listener,
        max_turns,
    })?;
    let text = raw.text.trim().replace('\n', " ");
    Ok(DialogueTurn {
        speaker: speaker.profile.id.clone(),
        terminate: raw.terminate || text.is_empty() || turns.len() + 1 >= max_turns,
        text,
    })
}

pub fn summarize_events(cognition: &dyn Cognition, events: &[MemoryEvent]) -> Result<String, CognitionError> {
    let Some(first) = events.first() else {
        return Err(CognitionError::Precondition("no events to summarize".into()));
    };
    if events.iter().any(|e| e.track != first.track) {
        return Err(CognitionError::Precondition(
            "events to summarize span both tracks".into(),
        ));
    }
    let summary = cognition.summarize(events)?.trim().replace('\n', " ");
    if summary.is_empty() {
        return Err(CognitionError::Unavailable {
            attempts: 1,
            reason: "provider returned an empty summary".into(),
        });
    }
    let input_len: usize = events.iter().map(|e| e.text.chars().count()).sum();
    if summary.chars().count() >= input_len && input_len > 1 {
        return Ok(summary.chars().take(input_len - 1).collect());
    }
    Ok(summary)
}

pub fn respond_to_user(
    cognition: &dyn Cognition,
    profile: &AgentProfile,
    context: &ContextBundle,
    map: &WorldMap,
    user_text: &str,
) -> Result<UserReply, CognitionError> {
    if user_text.trim().is_empty() {
        return Err(CognitionError::Precondition("user text is empty".into()));
    }
    let raw = cognition.reply(&ReplyRequest {
        profile,
        context,
        map,
        user_text,
    })?;
    let text = raw.text.trim().to_owned();
    if text.is_empty() {
        return Err(CognitionError::Unavailable {
            attempts: 1,
            reason: "provider returned an empty reply".into(),
        });
    }
    let accepted_action = raw.accepted_action.and_then(|action| {
        let scene = map.scene(action.destination.as_str())?;
        let activity = if action.activity.trim().is_empty() {
            default_activity(profile, scene)
        } else {
            action.activity.trim().to_owned()
        };
        Some(PlanDecision {
            destination: scene.id.clone(),
            activity,
            rationale: action.rationale,
        })
    });
    Ok(UserReply {
        text,
        accepted_action,
    })
}

/// Adapts a [`Cognition`] provider to the memory store's summarizer hook.
pub struct CognitionSummarizer<'a>(pub &'a dyn Cognition);

impl Summarizer for CognitionSummarizer<'_> {
    fn summarize(&self, events: &[MemoryEvent]) -> Result<String, CognitionError> {
        summarize_events(self.0, events)
    }
}
