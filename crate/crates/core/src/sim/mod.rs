//! The tick pipeline: planning, path execution, social trigger and memory
//! update, with every state change emitted as a [`SimEvent`].
//!
//! The engine decides what happens (calling the cognition provider where a
//! decision is needed) and then applies the resulting event to [`SimState`].
//! Replaying the same events on the same initial state reproduces the state
//! exactly.

mod event;
mod state;

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use event::{EndReason, EventKind, SimEvent};
pub use state::{ApplyError, Conversation, SimConfig, SimState};

use crate::agent::{AgentId, AgentMode, ConversationId, Roster};
use crate::cognition::{
    self, default_activity, Cognition, CognitionSummarizer, Interlocutor, PlanDecision,
};
use crate::memory::{ContextBundle, MemoryEvent, MemoryKind, Summarizer, Track};
use crate::world::WorldMap;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error("unknown agent `{0}`")]
    UnknownAgent(AgentId),
    #[error("unknown scene `{0}`")]
    InvalidScene(String),
    #[error("user exchange must be a user_exchange event on the interaction track, got {kind:?} on {track}")]
    TrackMismatch { kind: MemoryKind, track: Track },
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// External input waiting for its fixed point in the next tick.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "input", rename_all = "snake_case")]
pub enum Input {
    Replan {
        agent: AgentId,
        decision: PlanDecision,
    },
    UserExchange {
        agent: AgentId,
        session: Option<String>,
        text: String,
    },
}

/// A running simulation: state plus the inbox of pending external inputs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Simulation {
    state: SimState,
    inbox: Vec<Input>,
}

impl Simulation {
    pub fn new(config: SimConfig, map: WorldMap, roster: Roster) -> Result<Self, SimError> {
        config.validate().map_err(SimError::Config)?;
        Ok(Self::from_state(SimState::new(config, map, roster)))
    }

    pub fn from_state(state: SimState) -> Self {
        Self {
            state,
            inbox: Vec::new(),
        }
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn inbox(&self) -> &[Input] {
        &self.inbox
    }

    pub fn tick_count(&self) -> u64 {
        self.state.tick
    }

    pub fn digest(&self) -> String {
        self.state.digest()
    }

    pub fn context_for(&self, agent: &AgentId) -> Result<ContextBundle, SimError> {
        self.state
            .memories
            .get(agent)
            .map(|m| m.assemble_context())
            .ok_or_else(|| SimError::UnknownAgent(agent.clone()))
    }

    /// Queues a user-accepted plan. It preempts the agent at the start of
    /// the next tick, so the agent is already moving in that tick.
    pub fn request_replan(&mut self, agent: &AgentId, decision: PlanDecision) -> Result<(), SimError> {
        let profile = self
            .state
            .profile(agent)
            .ok_or_else(|| SimError::UnknownAgent(agent.clone()))?;
        let scene = self
            .state
            .map
            .scene(decision.destination.as_str())
            .ok_or_else(|| SimError::InvalidScene(decision.destination.0.clone()))?;
        let activity = if decision.activity.trim().is_empty() {
            default_activity(profile, scene)
        } else {
            decision.activity
        };
        self.inbox.push(Input::Replan {
            agent: agent.clone(),
            decision: PlanDecision {
                activity,
                ..decision
            },
        });
        Ok(())
    }

    /// Queues an interaction-track memory; it is committed in the memory
    /// stage of the next tick.
    pub fn inject_user_exchange(
        &mut self,
        agent: &AgentId,
        exchange: MemoryEvent,
        session: Option<String>,
    ) -> Result<(), SimError> {
        if self.state.profile(agent).is_none() {
            return Err(SimError::UnknownAgent(agent.clone()));
        }
        if exchange.track != Track::Interaction || exchange.kind != MemoryKind::UserExchange {
            return Err(SimError::TrackMismatch {
                kind: exchange.kind,
                track: exchange.track,
            });
        }
        self.inbox.push(Input::UserExchange {
            agent: agent.clone(),
            session,
            text: exchange.text,
        });
        Ok(())
    }

    fn emit(&mut self, kind: EventKind, out: &mut Vec<SimEvent>) {
        let event = SimEvent {
            seq: self.state.next_seq,
            tick: self.state.tick,
            kind,
        };
        if let Err(e) = self.state.apply(&event) {
            panic!("engine produced an inapplicable event {event:?}: {e}");
        }
        out.push(event);
    }

    /// Runs one full tick and returns the events it produced.
    pub fn tick(&mut self, cognition: &dyn Cognition) -> Vec<SimEvent> {
        let mut out = Vec::new();
        self.state.begin_tick();
        let inbox = std::mem::take(&mut self.inbox);
        let (replans, exchanges): (Vec<_>, Vec<_>) =
            inbox.into_iter().partition(|i| matches!(i, Input::Replan { .. }));

        for input in replans {
            if let Input::Replan { agent, decision } = input {
                self.apply_replan(&agent, decision, &mut out);
            }
        }
        self.stage_planning(cognition, &mut out);
        self.stage_movement(&mut out);
        self.stage_social(cognition, &mut out);
        self.stage_memory(cognition, exchanges, &mut out);
        out
    }

    /// Runs `n` ticks, sleeping to honour `tick_ms` when it is non-zero.
    pub fn run(&mut self, cognition: &dyn Cognition, n: u64) -> Vec<SimEvent> {
        let pace = Duration::from_millis(self.state.config.tick_ms);
        let mut log = Vec::new();
        for _ in 0..n {
            let started = Instant::now();
            log.extend(self.tick(cognition));
            if let Some(rest) = pace.checked_sub(started.elapsed()) {
                std::thread::sleep(rest);
            }
        }
        log
    }

    fn sorted_agents(&self) -> Vec<AgentId> {
        self.state.roster.sorted_ids()
    }

    fn agent_state(&self, id: &AgentId) -> &crate::agent::AgentState {
        &self.state.roster.get(id).expect("known agent").state
    }

    fn close_conversation(&mut self, id: ConversationId, reason: EndReason, out: &mut Vec<SimEvent>) {
        let conv = &self.state.conversations[&id];
        let participants = conv.participants.clone();
        let mut turns = conv.turns.len();
        if conv.turns.last().is_none_or(|t| !t.terminate) && turns < self.state.config.max_turns {
            let speaker = conv.next_speaker().clone();
            self.emit(
                EventKind::DialogueTurn {
                    conversation: id,
                    index: turns,
                    speaker,
                    text: String::new(),
                    terminate: true,
                },
                out,
            );
            turns += 1;
        }
        self.emit(
            EventKind::ConversationEnded {
                conversation: id,
                participants,
                turns,
                reason,
            },
            out,
        );
    }

    fn begin_plan(&mut self, agent: &AgentId, decision: PlanDecision, user_influenced: bool, out: &mut Vec<SimEvent>) {
        let state = self.agent_state(agent);
        let from = state.position;
        let route = self
            .state
            .map
            .scene_anchor(decision.destination.as_str())
            .and_then(|goal| self.state.map.find_path(from, goal));
        match route {
            Ok(path) => self.emit(
                EventKind::Planned {
                    agent: agent.clone(),
                    destination: decision.destination,
                    activity: decision.activity,
                    rationale: decision.rationale,
                    user_influenced,
                    path: path.steps,
                },
                out,
            ),
            Err(e) => tracing::warn!(%agent, error = %e, "no route for plan, staying put"),
        }
    }

    fn apply_replan(&mut self, agent: &AgentId, decision: PlanDecision, out: &mut Vec<SimEvent>) {
        if let Some(conv) = self.agent_state(agent).conversation {
            self.close_conversation(conv, EndReason::Preempted, out);
        }
        self.begin_plan(agent, decision, true, out);
    }

    fn stage_planning(&mut self, cognition: &dyn Cognition, out: &mut Vec<SimEvent>) {
        for id in self.sorted_agents() {
            let state = self.agent_state(&id);
            if state.mode != AgentMode::Idle {
                continue;
            }
            if let Some(intent) = state.intent.clone() {
                let decision = PlanDecision {
                    destination: intent.destination,
                    activity: intent.activity,
                    rationale: "picking up where I left off".into(),
                };
                self.begin_plan(&id, decision, false, out);
                continue;
            }
            let profile = self.state.profile(&id).expect("known agent").clone();
            let context = self.state.memories[&id].assemble_context();
            match cognition::plan_next(cognition, &profile, &context, &self.state.map) {
                Ok(planned) => {
                    if let Some(requested) = planned.repaired_from {
                        self.emit(
                            EventKind::PlanRepaired {
                                agent: id.clone(),
                                requested,
                                repaired_to: planned.decision.destination.clone(),
                            },
                            out,
                        );
                    }
                    self.begin_plan(&id, planned.decision, false, out);
                }
                Err(e) => tracing::warn!(agent = %id, error = %e, "planning failed, idling this tick"),
            }
        }
    }

    fn stage_movement(&mut self, out: &mut Vec<SimEvent>) {
        let duration = self.state.config.activity_duration;
        for id in self.sorted_agents() {
            let state = self.agent_state(&id);
            if state.mode != AgentMode::Moving {
                continue;
            }
            let from = state.position;
            let intent = state.intent.clone().expect("moving agents have an intent");
            let arrived = match state.next_step() {
                Some(to) => {
                    self.emit(
                        EventKind::Moved {
                            agent: id.clone(),
                            from,
                            to,
                        },
                        out,
                    );
                    self.agent_state(&id).mode == AgentMode::Idle
                }
                None => true,
            };
            if arrived {
                let at = self.agent_state(&id).position;
                self.emit(
                    EventKind::Arrived {
                        agent: id.clone(),
                        scene: intent.destination.clone(),
                        at,
                    },
                    out,
                );
                self.emit(
                    EventKind::ActivityStarted {
                        agent: id.clone(),
                        activity: intent.activity,
                        scene: intent.destination,
                        duration,
                    },
                    out,
                );
            }
        }
    }

    /// Pairs that start talking this tick: eligible pairs within the
    /// proximity radius sorted by (distance, smaller id, larger id), matched
    /// greedily so nobody joins two conversations.
    pub fn select_pairs(&self) -> Vec<(AgentId, AgentId, u32)> {
        let radius = self.state.config.proximity_radius;
        let eligible: Vec<_> = self
            .sorted_agents()
            .into_iter()
            .filter(|id| {
                let s = self.agent_state(id);
                s.mode != AgentMode::Conversing && s.conversation_cooldown == 0
            })
            .collect();
        let mut candidates = Vec::new();
        for (i, a) in eligible.iter().enumerate() {
            for b in &eligible[i + 1..] {
                let d = self.agent_state(a).position.manhattan(self.agent_state(b).position);
                if d <= radius {
                    candidates.push((d, a.clone(), b.clone()));
                }
            }
        }
        candidates.sort();
        let mut taken = std::collections::BTreeSet::new();
        let mut pairs = Vec::new();
        for (d, a, b) in candidates {
            if taken.contains(&a) || taken.contains(&b) {
                continue;
            }
            taken.insert(a.clone());
            taken.insert(b.clone());
            pairs.push((a, b, d));
        }
        pairs
    }

    fn stage_social(&mut self, cognition: &dyn Cognition, out: &mut Vec<SimEvent>) {
        for (initiator, partner, distance) in self.select_pairs() {
            let scene = self
                .state
                .map
                .scene_at(self.agent_state(&initiator).position)
                .ok()
                .flatten()
                .cloned();
            self.emit(
                EventKind::ConversationStarted {
                    conversation: ConversationId(self.state.next_conversation),
                    initiator,
                    partner,
                    distance,
                    scene,
                },
                out,
            );
        }

        let max_turns = self.state.config.max_turns;
        let open: Vec<ConversationId> = self.state.conversations.keys().copied().collect();
        for id in open {
            let conv = &self.state.conversations[&id];
            let [a, b] = conv.participants.clone();
            let result = {
                let pa = self.state.profile(&a).expect("known agent");
                let pb = self.state.profile(&b).expect("known agent");
                let ca = self.state.memories[&a].assemble_context();
                let cb = self.state.memories[&b].assemble_context();
                cognition::next_dialogue_turn(
                    cognition,
                    &conv.turns,
                    Interlocutor {
                        profile: pa,
                        context: &ca,
                    },
                    Interlocutor {
                        profile: pb,
                        context: &cb,
                    },
                    max_turns,
                )
            };
            match result {
                Ok(turn) => {
                    let index = self.state.conversations[&id].turns.len();
                    let terminate = turn.terminate;
                    self.emit(
                        EventKind::DialogueTurn {
                            conversation: id,
                            index,
                            speaker: turn.speaker,
                            text: turn.text,
                            terminate,
                        },
                        out,
                    );
                    if terminate {
                        self.close_conversation(id, EndReason::Completed, out);
                    }
                }
                Err(e) => {
                    tracing::warn!(conversation = %id, error = %e, "dialogue failed, ending conversation");
                    self.close_conversation(id, EndReason::ProviderFailure, out);
                }
            }
        }
    }

    fn stage_memory(&mut self, cognition: &dyn Cognition, exchanges: Vec<Input>, out: &mut Vec<SimEvent>) {
        for input in exchanges {
            if let Input::UserExchange {
                agent,
                session,
                text,
            } = input
            {
                self.emit(
                    EventKind::UserExchange {
                        agent,
                        session,
                        text,
                    },
                    out,
                );
            }
        }
        let summarizer = CognitionSummarizer(cognition);
        for id in self.sorted_agents() {
            for track in Track::ALL {
                loop {
                    let store = &self.state.memories[&id];
                    let Some(batch) = store.compression_batch(track) else {
                        break;
                    };
                    let (first, last) = (batch[0].seq, batch[batch.len() - 1].seq);
                    match summarizer.summarize(batch) {
                        Ok(summary) => self.emit(
                            EventKind::MemoryCompressed {
                                agent: id.clone(),
                                track,
                                first,
                                last,
                                count: last + 1 - first,
                                summary,
                            },
                            out,
                        ),
                        Err(e) => {
                            tracing::warn!(agent = %id, %track, error = %e, "compression failed, retrying next tick");
                            break;
                        }
                    }
                }
            }
        }
    }
}
