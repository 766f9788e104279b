//! Prompted provider over any chat-completion model.
//!
//! Models are asked to answer with one fenced block of `key: value` lines.
//! If a reply cannot be parsed the model is re-prompted once; after that
//! the provider falls back to a safe default.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{
    default_activity, Cognition, CognitionError, DialogueRequest, DialogueTurn, PlanDecision,
    PlanRequest, ProviderError, ReplyRequest, UserReply,
};
use crate::agent::AgentProfile;
use crate::memory::{ContextBundle, MemoryEvent, Track};
use crate::world::{SceneId, WorldMap};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChatRole {
    System,
    User,
    Assistant,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: ChatRole,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: ChatRole::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: ChatRole::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: ChatRole::Assistant,
            content: content.into(),
        }
    }
}

/// A blocking chat-completion backend.
pub trait ChatModel: Send + Sync {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, ProviderError>;
}

const REPROMPT: &str =
    "I could not read that answer. Reply with only the fenced block, one `key: value` per line, exactly as requested.";

/// Extracts `key: value` fields from the first fenced block of `text`, or
/// from the whole text when there is no fence. Keys are lowercased and
/// stripped of markdown emphasis. Returns `None` when no field is found.
pub fn parse_block(text: &str) -> Option<BTreeMap<String, String>> {
    let body = match text.find("```") {
        Some(start) => {
            let rest = &text[start + 3..];
            // Skip an optional language tag on the fence line.
            let rest = rest.split_once('\n').map_or("", |(_, r)| r);
            rest.find("```").map_or(rest, |end| &rest[..end])
        }
        None => text,
    };
    let fields: BTreeMap<String, String> = body
        .lines()
        .filter_map(|line| {
            let (k, v) = line.split_once(':')?;
            let key = k
                .trim()
                .trim_start_matches(['-', '*', ' '])
                .trim_matches(['*', '`', '"'])
                .to_lowercase();
            if key.is_empty() || key.contains(' ') {
                return None;
            }
            let value = v.trim().trim_matches(['"', '`']).trim().to_owned();
            Some((key, value))
        })
        .collect();
    (!fields.is_empty()).then_some(fields)
}

fn is_none_value(v: &str) -> bool {
    matches!(v.trim().to_lowercase().as_str(), "" | "none" | "null" | "n/a" | "-")
}

fn to_unavailable(err: ProviderError) -> CognitionError {
    let attempts = match &err {
        ProviderError::Exhausted { attempts, .. } => *attempts,
        _ => 1,
    };
    CognitionError::Unavailable {
        attempts,
        reason: err.to_string(),
    }
}

/// Provider backed by two chat models: one for planning and summarization,
/// one for conversation (with other agents and with the user).
pub struct LlmCognition {
    planner: Box<dyn ChatModel>,
    conversationalist: Box<dyn ChatModel>,
}

impl LlmCognition {
    pub fn new(planner: Box<dyn ChatModel>, conversationalist: Box<dyn ChatModel>) -> Self {
        Self {
            planner,
            conversationalist,
        }
    }

    /// Asks `model` and parses the answer, re-prompting once. `Ok(None)`
    /// means both answers were unreadable.
    fn ask_structured(
        model: &dyn ChatModel,
        mut messages: Vec<ChatMessage>,
        required: &[&str],
    ) -> Result<(Option<BTreeMap<String, String>>, String), CognitionError> {
        let mut raw = String::new();
        for attempt in 0..2 {
            if attempt == 1 {
                messages.push(ChatMessage::assistant(raw.clone()));
                messages.push(ChatMessage::user(REPROMPT));
            }
            raw = model.complete(&messages).map_err(to_unavailable)?;
            if let Some(fields) = parse_block(&raw) {
                if required.iter().all(|k| fields.contains_key(*k)) {
                    return Ok((Some(fields), raw));
                }
            }
        }
        Ok((None, raw))
    }
}

fn persona_prompt(profile: &AgentProfile, context: &ContextBundle) -> String {
    format!(
        "You are {name}, a {occupation} living in a small town with a few neighbours.\n\
         Personality: {personality}.\n\
         Background: {bio}\n\n\
         Your memories. \"Shared with user\" is your history with the person who talks to you; \
         \"own life\" is what you did and who you met on your own.\n\n{memories}",
        name = profile.name,
        occupation = profile.occupation,
        personality = profile.personality,
        bio = profile.bio,
        memories = context.render(),
    )
}

fn places(map: &WorldMap) -> String {
    map.scenes()
        .iter()
        .map(|s| format!("- {} ({}): the {}\n", s.id, s.category.as_str(), s.label))
        .collect()
}

impl Cognition for LlmCognition {
    fn plan(&self, req: &PlanRequest<'_>) -> Result<PlanDecision, CognitionError> {
        let system = format!(
            "{}\n\nPlaces in town:\n{}\nDecide where to go next and what to do there. \
             Answer with exactly one fenced block:\n```\ndestination: <place id>\nactivity: <short activity>\nrationale: <one sentence>\n```",
            persona_prompt(req.profile, req.context),
            places(req.map)
        );
        let messages = vec![
            ChatMessage::system(system),
            ChatMessage::user("What do you do next?"),
        ];
        let (fields, _) =
            Self::ask_structured(self.planner.as_ref(), messages, &["destination", "activity"])?;
        Ok(match fields {
            Some(f) => PlanDecision {
                destination: SceneId::new(f["destination"].clone()),
                activity: f["activity"].clone(),
                rationale: f.get("rationale").cloned().unwrap_or_default(),
            },
            None => {
                let home = req
                    .map
                    .scene(req.profile.home_scene.as_str())
                    .unwrap_or(&req.map.scenes()[0]);
                PlanDecision {
                    destination: home.id.clone(),
                    activity: default_activity(req.profile, home),
                    rationale: "fallback after an unreadable plan".into(),
                }
            }
        })
    }

    fn dialogue_turn(&self, req: &DialogueRequest<'_>) -> Result<DialogueTurn, CognitionError> {
        let me = req.speaker.profile;
        let you = req.listener.profile;
        let system = format!(
            "{}\n\nYou ran into {}, a {} ({}), and are chatting casually. \
             Keep each line short and natural. Set end to yes when the conversation should wrap up. \
             Answer with exactly one fenced block:\n```\nsay: <your next line>\nend: yes|no\n```",
            persona_prompt(me, req.speaker.context),
            you.name,
            you.occupation,
            you.personality
        );
        let transcript: String = if req.turns.is_empty() {
            format!("You start the conversation with {}.", you.name)
        } else {
            req.turns
                .iter()
                .map(|t| {
                    let who = if t.speaker == me.id { &me.name } else { &you.name };
                    format!("{who}: {}\n", t.text)
                })
                .collect()
        };
        let messages = vec![ChatMessage::system(system), ChatMessage::user(transcript)];
        let (fields, _) =
            Self::ask_structured(self.conversationalist.as_ref(), messages, &["say"])?;
        Ok(match fields {
            Some(f) => DialogueTurn {
                speaker: me.id.clone(),
                text: f["say"].clone(),
                terminate: f
                    .get("end")
                    .is_some_and(|v| matches!(v.to_lowercase().as_str(), "yes" | "true")),
            },
            None => DialogueTurn {
                speaker: me.id.clone(),
                text: String::new(),
                terminate: true,
            },
        })
    }

    fn summarize(&self, events: &[MemoryEvent]) -> Result<String, CognitionError> {
        let track = match events.first().map(|e| e.track) {
            Some(Track::Interaction) => "conversations with the user",
            _ => "own daily life",
        };
        let listing: String = events
            .iter()
            .map(|e| format!("- [tick {}] {}\n", e.tick, e.text))
            .collect();
        let messages = vec![
            ChatMessage::system(format!(
                "Condense these memories about the agent's {track} into one or two short sentences \
                 of long-term memory. Keep names and places. Answer with exactly one fenced block:\n\
                 ```\nsummary: <text>\n```"
            )),
            ChatMessage::user(listing),
        ];
        let (fields, raw) = Self::ask_structured(self.planner.as_ref(), messages, &["summary"])?;
        Ok(match fields {
            Some(f) => f["summary"].clone(),
            None => raw.replace("```", "").trim().to_owned(),
        })
    }

    fn reply(&self, req: &ReplyRequest<'_>) -> Result<UserReply, CognitionError> {
        let system = format!(
            "{}\n\nPlaces in town:\n{}\nA person is talking to you. Answer in character, drawing on your memories. \
             If they ask you to go somewhere or do something and you agree, name the place id and the activity; \
             otherwise write none. Answer with exactly one fenced block:\n\
             ```\nreply: <what you say>\ndestination: <place id or none>\nactivity: <activity or none>\n```",
            persona_prompt(req.profile, req.context),
            places(req.map)
        );
        let messages = vec![ChatMessage::system(system), ChatMessage::user(req.user_text)];
        let (fields, raw) =
            Self::ask_structured(self.conversationalist.as_ref(), messages, &["reply"])?;
        let Some(f) = fields else {
            return Ok(UserReply {
                text: raw.replace("```", "").trim().to_owned(),
                accepted_action: None,
            });
        };
        let accepted_action = f
            .get("destination")
            .filter(|d| !is_none_value(d))
            .map(|d| PlanDecision {
                destination: SceneId::new(d.clone()),
                activity: f
                    .get("activity")
                    .filter(|a| !is_none_value(a))
                    .cloned()
                    .unwrap_or_default(),
                rationale: "the user suggested it".into(),
            });
        Ok(UserReply {
            text: f["reply"].clone(),
            accepted_action,
        })
    }
}
