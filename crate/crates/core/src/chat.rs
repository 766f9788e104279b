//! User chat sessions with individual agents.
//!
//! A reply is grounded in the agent's full dual-track context. Each
//! completed exchange becomes exactly one interaction-track memory, and a
//! reply that accepts a suggested move preempts the agent's current plan.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{AgentId, AgentProfile};
use crate::cognition::{self, Cognition, CognitionError, PlanDecision};
use crate::memory::{ContextBundle, MemoryEvent, MemoryKind};
use crate::sim::{SimError, Simulation};
use crate::world::WorldMap;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SessionId(pub String);

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Agent,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub role: Role,
    pub text: String,
    pub tick: u64,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ChatError {
    #[error("unknown agent `{0}`")]
    UnknownAgent(AgentId),
    #[error("unknown session `{0}`")]
    UnknownSession(SessionId),
    #[error("session `{0}` is closed")]
    Closed(SessionId),
    #[error("session `{0}` is already closed")]
    AlreadyClosed(SessionId),
    #[error("message text is empty")]
    EmptyText,
    /// The provider could not answer; the transcript is unchanged and the
    /// message can be retried.
    #[error("agent could not reply right now: {0}")]
    Unavailable(CognitionError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

impl ChatError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, ChatError::Unavailable(_))
    }
}

/// What a chat needs to see of an agent at message time.
#[derive(Clone, Debug)]
pub struct AgentView {
    pub profile: AgentProfile,
    pub context: ContextBundle,
    pub map: WorldMap,
    pub tick: u64,
}

/// Access to the running simulation from a chat session. Submissions are
/// queued on the simulation inbox, never applied directly.
pub trait SimHandle {
    fn agent_view(&self, agent: &AgentId) -> Result<AgentView, SimError>;
    fn submit_exchange(&mut self, agent: &AgentId, exchange: MemoryEvent, session: &SessionId) -> Result<(), SimError>;
    fn submit_replan(&mut self, agent: &AgentId, decision: PlanDecision) -> Result<(), SimError>;
}

impl SimHandle for Simulation {
    fn agent_view(&self, agent: &AgentId) -> Result<AgentView, SimError> {
        let state = self.state();
        let profile = state
            .profile(agent)
            .ok_or_else(|| SimError::UnknownAgent(agent.clone()))?
            .clone();
        Ok(AgentView {
            profile,
            context: self.context_for(agent)?,
            map: state.map.clone(),
            tick: state.tick,
        })
    }

    fn submit_exchange(&mut self, agent: &AgentId, exchange: MemoryEvent, session: &SessionId) -> Result<(), SimError> {
        self.inject_user_exchange(agent, exchange, Some(session.0.clone()))
    }

    fn submit_replan(&mut self, agent: &AgentId, decision: PlanDecision) -> Result<(), SimError> {
        self.request_replan(agent, decision)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatSession {
    pub id: SessionId,
    pub agent: AgentId,
    pub transcript: Vec<TranscriptEntry>,
    pub open: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatOutcome {
    pub reply: String,
    pub acted: bool,
}

fn sentence(text: &str) -> String {
    let t = text.trim();
    if t.ends_with(['.', '!', '?']) {
        t.to_owned()
    } else {
        format!("{t}.")
    }
}

/// Interaction-track memory text for one exchange.
pub fn exchange_text(user_text: &str, agent_name: &str, reply: &str) -> String {
    format!(
        "User said: {} {agent_name} replied: {}",
        sentence(user_text),
        sentence(reply)
    )
}

impl ChatSession {
    pub fn new(id: SessionId, agent: AgentId) -> Self {
        Self {
            id,
            agent,
            transcript: Vec::new(),
            open: true,
        }
    }

    /// Sends one user message and returns the agent's reply.
    pub fn user_message<H: SimHandle + ?Sized>(
        &mut self,
        text: &str,
        sim: &mut H,
        cognition: &dyn Cognition,
    ) -> Result<ChatOutcome, ChatError> {
        if !self.open {
            return Err(ChatError::Closed(self.id.clone()));
        }
        if text.trim().is_empty() {
            return Err(ChatError::EmptyText);
        }
        let view = sim.agent_view(&self.agent)?;
        let reply = cognition::respond_to_user(cognition, &view.profile, &view.context, &view.map, text)
            .map_err(|e| match e {
                CognitionError::Precondition(_) => ChatError::EmptyText,
                other => ChatError::Unavailable(other),
            })?;

        let memory = MemoryEvent::new(
            view.tick,
            MemoryKind::UserExchange,
            exchange_text(text, &view.profile.name, &reply.text),
            vec![self.agent.clone()],
        );
        sim.submit_exchange(&self.agent, memory, &self.id)?;
        let acted = match reply.accepted_action {
            Some(decision) => {
                sim.submit_replan(&self.agent, decision)?;
                true
            }
            None => false,
        };
        self.transcript.push(TranscriptEntry {
            role: Role::User,
            text: text.to_owned(),
            tick: view.tick,
        });
        self.transcript.push(TranscriptEntry {
            role: Role::Agent,
            text: reply.text.clone(),
            tick: view.tick,
        });
        Ok(ChatOutcome {
            reply: reply.text,
            acted,
        })
    }

    pub fn close(&mut self) -> Result<(), ChatError> {
        if !self.open {
            return Err(ChatError::AlreadyClosed(self.id.clone()));
        }
        self.open = false;
        Ok(())
    }

    /// Writes the transcript as JSON Lines of `{session, role, text, tick}`.
    pub fn export_transcript<W: Write>(&self, mut out: W) -> io::Result<()> {
        #[derive(Serialize)]
        struct Line<'a> {
            session: &'a SessionId,
            role: Role,
            text: &'a str,
            tick: u64,
        }
        for entry in &self.transcript {
            let line = Line {
                session: &self.id,
                role: entry.role,
                text: &entry.text,
                tick: entry.tick,
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Registry of sessions, open and closed.
#[derive(Debug, Default)]
pub struct ChatSessions {
    next_id: u64,
    sessions: BTreeMap<SessionId, ChatSession>,
}

impl ChatSessions {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn open<H: SimHandle + ?Sized>(&mut self, agent: &AgentId, sim: &H) -> Result<SessionId, ChatError> {
        sim.agent_view(agent).map_err(|e| match e {
            SimError::UnknownAgent(a) => ChatError::UnknownAgent(a),
            other => ChatError::Sim(other),
        })?;
        self.next_id += 1;
        let id = SessionId(format!("s{}", self.next_id));
        self.sessions
            .insert(id.clone(), ChatSession::new(id.clone(), agent.clone()));
        Ok(id)
    }

    pub fn get(&self, id: &SessionId) -> Result<&ChatSession, ChatError> {
        self.sessions
            .get(id)
            .ok_or_else(|| ChatError::UnknownSession(id.clone()))
    }

    pub fn get_mut(&mut self, id: &SessionId) -> Result<&mut ChatSession, ChatError> {
        self.sessions
            .get_mut(id)
            .ok_or_else(|| ChatError::UnknownSession(id.clone()))
    }

    pub fn close(&mut self, id: &SessionId) -> Result<&ChatSession, ChatError> {
        let session = self.get_mut(id)?;
        session.close()?;
        Ok(session)
    }

    pub fn iter(&self) -> impl Iterator<Item = &ChatSession> {
        self.sessions.values()
    }
}
