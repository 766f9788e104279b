use serde::de::Error as _;
use serde::ser::{Error as _, SerializeStruct};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{json, Value};

use crate::agent::{AgentId, ConversationId};
use crate::memory::Track;
use crate::world::{Position, SceneId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndReason {
    /// A turn asked to terminate, or the turn cap was reached.
    Completed,
    ProviderFailure,
    /// A participant was sent elsewhere by a user-accepted plan.
    Preempted,
}

/// Payload of a simulation event. Serialized adjacently tagged as
/// `{"type": ..., "data": {...}}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "data", rename_all = "snake_case")]
pub enum EventKind {
    Planned {
        agent: AgentId,
        destination: SceneId,
        activity: String,
        rationale: String,
        user_influenced: bool,
        path: Vec<Position>,
    },
    PlanRepaired {
        agent: AgentId,
        requested: String,
        repaired_to: SceneId,
    },
    Moved {
        agent: AgentId,
        from: Position,
        to: Position,
    },
    Arrived {
        agent: AgentId,
        scene: SceneId,
        at: Position,
    },
    ActivityStarted {
        agent: AgentId,
        activity: String,
        scene: SceneId,
        duration: u32,
    },
    ConversationStarted {
        conversation: ConversationId,
        initiator: AgentId,
        partner: AgentId,
        distance: u32,
        scene: Option<SceneId>,
    },
    DialogueTurn {
        conversation: ConversationId,
        index: usize,
        speaker: AgentId,
        text: String,
        terminate: bool,
    },
    ConversationEnded {
        conversation: ConversationId,
        participants: [AgentId; 2],
        turns: usize,
        reason: EndReason,
    },
    MemoryCompressed {
        agent: AgentId,
        track: Track,
        first: u64,
        last: u64,
        count: u64,
        summary: String,
    },
    UserExchange {
        agent: AgentId,
        #[serde(default)]
        session: Option<String>,
        text: String,
    },
}

impl EventKind {
    pub fn type_name(&self) -> &'static str {
        match self {
            Self::Planned { .. } => "planned",
            Self::PlanRepaired { .. } => "plan_repaired",
            Self::Moved { .. } => "moved",
            Self::Arrived { .. } => "arrived",
            Self::ActivityStarted { .. } => "activity_started",
            Self::ConversationStarted { .. } => "conversation_started",
            Self::DialogueTurn { .. } => "dialogue_turn",
            Self::ConversationEnded { .. } => "conversation_ended",
            Self::MemoryCompressed { .. } => "memory_compressed",
            Self::UserExchange { .. } => "user_exchange",
        }
    }

    /// Agents this event concerns. Dialogue turns name only the speaker.
    pub fn agents(&self) -> Vec<AgentId> {
        match self {
            Self::Planned { agent, .. }
            | Self::PlanRepaired { agent, .. }
            | Self::Moved { agent, .. }
            | Self::Arrived { agent, .. }
            | Self::ActivityStarted { agent, .. }
            | Self::MemoryCompressed { agent, .. }
            | Self::UserExchange { agent, .. } => vec![agent.clone()],
            Self::ConversationStarted {
                initiator, partner, ..
            } => vec![initiator.clone(), partner.clone()],
            Self::DialogueTurn { speaker, .. } => vec![speaker.clone()],
            Self::ConversationEnded { participants, .. } => participants.to_vec(),
        }
    }
}

/// One entry of the append-only simulation log.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SimEvent {
    pub seq: u64,
    pub tick: u64,
    pub kind: EventKind,
}

impl SimEvent {
    pub fn type_name(&self) -> &'static str {
        self.kind.type_name()
    }

    /// One JSON Lines record: `{seq, tick, type, agents, data}`.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("events always serialize")
    }
}

impl Serialize for SimEvent {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let tagged = serde_json::to_value(&self.kind).map_err(S::Error::custom)?;
        let mut s = serializer.serialize_struct("SimEvent", 5)?;
        s.serialize_field("seq", &self.seq)?;
        s.serialize_field("tick", &self.tick)?;
        s.serialize_field("type", &tagged["type"])?;
        s.serialize_field("agents", &self.kind.agents())?;
        s.serialize_field("data", &tagged["data"])?;
        s.end()
    }
}

#[derive(Deserialize)]
struct WireEvent {
    seq: u64,
    tick: u64,
    #[serde(rename = "type")]
    kind: String,
    #[serde(default)]
    agents: Vec<AgentId>,
    data: Value,
}

impl<'de> Deserialize<'de> for SimEvent {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let wire = WireEvent::deserialize(deserializer)?;
        let kind: EventKind = serde_json::from_value(json!({"type": wire.kind, "data": wire.data}))
            .map_err(D::Error::custom)?;
        if kind.agents() != wire.agents {
            return Err(D::Error::custom(format!(
                "agents {:?} do not match the {} payload",
                wire.agents,
                kind.type_name()
            )));
        }
        Ok(SimEvent {
            seq: wire.seq,
            tick: wire.tick,
            kind,
        })
    }
}
