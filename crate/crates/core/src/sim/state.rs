use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::event::{EventKind, SimEvent};
use crate::agent::{AgentError, AgentId, AgentMode, AgentProfile, ConversationId, Intent, Roster};
use crate::cognition::{DialogueTurn, DEFAULT_MAX_TURNS};
use crate::memory::{MemoryError, MemoryEvent, MemoryKind, MemoryStore, DEFAULT_THRESHOLD};
use crate::world::{Path, WorldMap};

fn default_seed() -> u64 {
    42
}
fn default_tick_ms() -> u64 {
    1000
}
fn default_radius() -> u32 {
    2
}
fn default_cooldown() -> u32 {
    20
}
fn default_activity_duration() -> u32 {
    15
}
fn default_threshold() -> usize {
    DEFAULT_THRESHOLD
}
fn default_max_turns() -> usize {
    DEFAULT_MAX_TURNS
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Wall-clock milliseconds per tick; 0 runs as fast as possible.
    #[serde(default = "default_tick_ms")]
    pub tick_ms: u64,
    /// Manhattan distance at or below which idle agents strike up a
    /// conversation.
    #[serde(default = "default_radius")]
    pub proximity_radius: u32,
    #[serde(default = "default_cooldown")]
    pub conversation_cooldown: u32,
    #[serde(default = "default_activity_duration")]
    pub activity_duration: u32,
    #[serde(default = "default_threshold")]
    pub memory_threshold: usize,
    #[serde(default = "default_max_turns")]
    pub max_turns: usize,
    /// Hold the autonomous loop while a user chat is being answered.
    #[serde(default)]
    pub pause_during_chat: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: default_seed(),
            tick_ms: default_tick_ms(),
            proximity_radius: default_radius(),
            conversation_cooldown: default_cooldown(),
            activity_duration: default_activity_duration(),
            memory_threshold: default_threshold(),
            max_turns: default_max_turns(),
            pause_during_chat: false,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.proximity_radius < 1 {
            return Err("proximity_radius must be at least 1".into());
        }
        if self.activity_duration < 1 {
            return Err("activity_duration must be at least 1".into());
        }
        if self.memory_threshold < 1 {
            return Err("memory_threshold must be at least 1".into());
        }
        if self.max_turns < 1 {
            return Err("max_turns must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conversation {
    pub id: ConversationId,
    /// Initiator first.
    pub participants: [AgentId; 2],
    pub turns: Vec<DialogueTurn>,
    pub open: bool,
    pub scene: Option<crate::world::SceneId>,
}

impl Conversation {
    pub fn next_speaker(&self) -> &AgentId {
        &self.participants[self.turns.len() % 2]
    }

    pub fn partner_of(&self, agent: &AgentId) -> &AgentId {
        if &self.participants[0] == agent {
            &self.participants[1]
        } else {
            &self.participants[0]
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ApplyError {
    #[error("event seq {found} out of order, expected {expected}")]
    OutOfOrder { expected: u64, found: u64 },
    #[error("event at tick {found} does not belong to current tick {current}")]
    WrongTick { current: u64, found: u64 },
    #[error("unknown agent `{0}`")]
    UnknownAgent(AgentId),
    #[error("unknown conversation {0}")]
    UnknownConversation(ConversationId),
    #[error("inconsistent event: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
}

/// Complete simulation state. Everything the engine needs to continue a run
/// lives here, and every change after construction comes from applying a
/// [`SimEvent`] or from [`SimState::begin_tick`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimState {
    pub config: SimConfig,
    pub map: WorldMap,
    pub tick: u64,
    /// Seq the next event will carry.
    pub next_seq: u64,
    pub next_conversation: u64,
    pub roster: Roster,
    pub memories: BTreeMap<AgentId, MemoryStore>,
    pub conversations: BTreeMap<ConversationId, Conversation>,
}

impl SimState {
    pub fn new(config: SimConfig, map: WorldMap, roster: Roster) -> Self {
        let memories = roster
            .agents
            .iter()
            .map(|e| {
                (
                    e.profile.id.clone(),
                    MemoryStore::new(e.profile.id.clone(), config.memory_threshold),
                )
            })
            .collect();
        Self {
            config,
            map,
            tick: 0,
            next_seq: 1,
            next_conversation: 1,
            roster,
            memories,
            conversations: BTreeMap::new(),
        }
    }

    /// Stable SHA-256 over the canonical JSON form of the state.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("state always serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn profile(&self, id: &AgentId) -> Option<&AgentProfile> {
        self.roster.get(id).map(|e| &e.profile)
    }

    fn name_of(&self, id: &AgentId) -> String {
        self.profile(id).map_or_else(|| id.to_string(), |p| p.name.clone())
    }

    fn entry_mut(&mut self, id: &AgentId) -> Result<&mut crate::agent::RosterEntry, ApplyError> {
        self.roster
            .get_mut(id)
            .ok_or_else(|| ApplyError::UnknownAgent(id.clone()))
    }

    fn remember(&mut self, agent: &AgentId, event: MemoryEvent) -> Result<(), ApplyError> {
        self.memories
            .get_mut(agent)
            .ok_or_else(|| ApplyError::UnknownAgent(agent.clone()))?
            .record_event(event)?;
        Ok(())
    }

    /// Advances the clock: cooldowns tick down and expired activities end.
    pub fn begin_tick(&mut self) {
        self.tick += 1;
        for entry in &mut self.roster.agents {
            entry.state.tick_timers();
        }
    }

    /// Applies one event. Fails without a partial update only for checks
    /// made before mutation; callers treat any error as a corrupt log.
    pub fn apply(&mut self, event: &SimEvent) -> Result<(), ApplyError> {
        if event.seq != self.next_seq {
            return Err(ApplyError::OutOfOrder {
                expected: self.next_seq,
                found: event.seq,
            });
        }
        if event.tick != self.tick {
            return Err(ApplyError::WrongTick {
                current: self.tick,
                found: event.tick,
            });
        }
        let tick = self.tick;
        match &event.kind {
            EventKind::Planned {
                agent,
                destination,
                activity,
                user_influenced,
                path,
                ..
            } => {
                let name = self.name_of(agent);
                let entry = self.entry_mut(agent)?;
                let origin = entry.state.position;
                if let Some(first) = path.first() {
                    if first.manhattan(origin) != 1 {
                        return Err(ApplyError::Inconsistent(format!(
                            "path for `{agent}` starts at {first}, not next to {origin}"
                        )));
                    }
                }
                entry.state.begin_moving(
                    Path {
                        steps: path.clone(),
                    },
                    Intent {
                        destination: destination.clone(),
                        activity: activity.clone(),
                    },
                )?;
                if !path.is_empty() {
                    let text = if *user_influenced {
                        format!("{name} set off toward the {destination} at the user's suggestion.")
                    } else {
                        format!("{name} set off toward the {destination}.")
                    };
                    let memory = MemoryEvent::new(tick, MemoryKind::Movement, text, vec![agent.clone()])
                        .at_scene(Some(destination.clone()));
                    self.remember(agent, memory)?;
                }
            }
            EventKind::PlanRepaired { agent, .. } => {
                self.entry_mut(agent)?;
            }
            EventKind::Moved { agent, from, to } => {
                let state = &mut self.entry_mut(agent)?.state;
                if state.position != *from || state.next_step() != Some(*to) {
                    return Err(ApplyError::Inconsistent(format!(
                        "`{agent}` cannot move {from} -> {to}"
                    )));
                }
                state.advance_one_step()?;
            }
            EventKind::Arrived { agent, scene, at } => {
                let name = self.name_of(agent);
                let state = &mut self.entry_mut(agent)?.state;
                if state.mode == AgentMode::Moving {
                    if !state.advance_one_step()? {
                        return Err(ApplyError::Inconsistent(format!(
                            "`{agent}` arrived with steps left"
                        )));
                    }
                }
                if state.mode != AgentMode::Idle || state.position != *at {
                    return Err(ApplyError::Inconsistent(format!(
                        "`{agent}` cannot arrive at {at}"
                    )));
                }
                let memory = MemoryEvent::new(
                    tick,
                    MemoryKind::Arrival,
                    format!("{name} arrived at the {scene}."),
                    vec![agent.clone()],
                )
                .at_scene(Some(scene.clone()));
                self.remember(agent, memory)?;
            }
            EventKind::ActivityStarted {
                agent,
                activity,
                scene,
                duration,
            } => {
                let name = self.name_of(agent);
                let state = &mut self.entry_mut(agent)?.state;
                state.set_activity(activity.clone(), *duration)?;
                state.intent = None;
                let memory = MemoryEvent::new(
                    tick,
                    MemoryKind::Activity,
                    format!("{name} started {activity} at the {scene}."),
                    vec![agent.clone()],
                )
                .at_scene(Some(scene.clone()));
                self.remember(agent, memory)?;
            }
            EventKind::ConversationStarted {
                conversation,
                initiator,
                partner,
                scene,
                ..
            } => {
                if *conversation != ConversationId(self.next_conversation) {
                    return Err(ApplyError::Inconsistent(format!(
                        "conversation id {conversation} out of order"
                    )));
                }
                if initiator == partner {
                    return Err(ApplyError::Inconsistent("self-conversation".into()));
                }
                self.entry_mut(partner)?;
                self.entry_mut(initiator)?.state.join_conversation(*conversation)?;
                self.entry_mut(partner)?.state.join_conversation(*conversation)?;
                self.next_conversation += 1;
                self.conversations.insert(
                    *conversation,
                    Conversation {
                        id: *conversation,
                        participants: [initiator.clone(), partner.clone()],
                        turns: Vec::new(),
                        open: true,
                        scene: scene.clone(),
                    },
                );
            }
            EventKind::DialogueTurn {
                conversation,
                index,
                speaker,
                text,
                terminate,
            } => {
                let max_turns = self.config.max_turns;
                let conv = self
                    .conversations
                    .get_mut(conversation)
                    .ok_or(ApplyError::UnknownConversation(*conversation))?;
                if *index != conv.turns.len() || conv.next_speaker() != speaker || *index >= max_turns {
                    return Err(ApplyError::Inconsistent(format!(
                        "turn {index} by `{speaker}` does not follow in {conversation}"
                    )));
                }
                conv.turns.push(DialogueTurn {
                    speaker: speaker.clone(),
                    text: text.clone(),
                    terminate: *terminate,
                });
            }
            EventKind::ConversationEnded {
                conversation,
                participants,
                turns,
                ..
            } => {
                let mut conv = self
                    .conversations
                    .remove(conversation)
                    .ok_or(ApplyError::UnknownConversation(*conversation))?;
                if &conv.participants != participants || conv.turns.len() != *turns {
                    return Err(ApplyError::Inconsistent(format!(
                        "end of {conversation} does not match its record"
                    )));
                }
                conv.open = false;
                let cooldown = self.config.conversation_cooldown;
                for agent in &conv.participants {
                    self.entry_mut(agent)?.state.leave_conversation(cooldown)?;
                }
                for agent in conv.participants.clone() {
                    let other = conv.partner_of(&agent).clone();
                    let text = self.dialogue_memory_text(&conv, &agent, &other);
                    let memory = MemoryEvent::new(tick, MemoryKind::AgentDialogue, text, vec![agent.clone(), other])
                        .at_scene(conv.scene.clone());
                    self.remember(&agent, memory)?;
                }
            }
            EventKind::MemoryCompressed {
                agent,
                track,
                first,
                last,
                count,
                summary,
            } => {
                if last + 1 - first != *count {
                    return Err(ApplyError::Inconsistent(format!(
                        "compression count {count} does not match range {first}..={last}"
                    )));
                }
                self.memories
                    .get_mut(agent)
                    .ok_or_else(|| ApplyError::UnknownAgent(agent.clone()))?
                    .apply_compression(*track, *first, *last, summary.clone())?;
            }
            EventKind::UserExchange { agent, text, .. } => {
                let memory = MemoryEvent::new(tick, MemoryKind::UserExchange, text.clone(), vec![agent.clone()]);
                self.remember(agent, memory)?;
            }
        }
        self.next_seq += 1;
        Ok(())
    }

    fn dialogue_memory_text(&self, conv: &Conversation, me: &AgentId, other: &AgentId) -> String {
        let place = conv
            .scene
            .as_ref()
            .map_or_else(|| " on the way".to_owned(), |s| format!(" in the {s}"));
        let lines: Vec<String> = conv
            .turns
            .iter()
            .filter(|t| !t.text.is_empty())
            .map(|t| format!("{}: {}", self.name_of(&t.speaker), t.text))
            .collect();
        if lines.is_empty() {
            format!(
                "{} ran into {}{place} but the conversation broke off.",
                self.name_of(me),
                self.name_of(other)
            )
        } else {
            format!(
                "{} had a conversation with {}{place}: {}",
                self.name_of(me),
                self.name_of(other),
                lines.join(" ")
            )
        }
    }

    /// Structural checks used after loading persisted state.
    pub fn validate(&self) -> Result<(), (String, String)> {
        self.config.validate().map_err(|e| ("config".to_owned(), e))?;
        for (i, entry) in self.roster.agents.iter().enumerate() {
            let field = format!("roster.agents[{i}].state");
            let s = &entry.state;
            if s.id != entry.profile.id {
                return Err((format!("{field}.id"), "does not match the profile id".into()));
            }
            if !self.map.is_walkable(s.position) {
                return Err((format!("{field}.position"), format!("{} is not a walkable tile", s.position)));
            }
            if !s.is_coherent() {
                return Err((format!("{field}.mode"), format!("mode {} disagrees with its fields", s.mode)));
            }
            if let Some(c) = s.conversation {
                if !self.conversations.contains_key(&c) {
                    return Err((format!("{field}.conversation"), format!("{c} is not open")));
                }
            }
            let Some(store) = self.memories.get(&entry.profile.id) else {
                return Err(("memories".into(), format!("missing store for `{}`", entry.profile.id)));
            };
            if !store.is_conserved() {
                return Err((format!("memories.{}", entry.profile.id), "event counts do not add up".into()));
            }
        }
        for (id, conv) in &self.conversations {
            for p in &conv.participants {
                let ok = self
                    .roster
                    .get(p)
                    .is_some_and(|e| e.state.conversation == Some(*id));
                if !ok {
                    return Err((format!("conversations.{}", id.0), format!("participant `{p}` is not in it")));
                }
            }
        }
        Ok(())
    }
}
