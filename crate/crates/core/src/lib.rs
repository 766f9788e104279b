//! Persistent multi-agent life-space engine.
//!
//! Agents with occupational personas walk a tiled town, take up activities
//! in named scenes and strike up conversations with whoever they pass. Each
//! agent keeps a dual-track memory: an interaction track of exchanges with
//! the user and a life-space track of everything it did on its own. Both
//! tracks are injected together whenever the agent plans or replies.
//!
//! The crate is organised bottom-up:
//!
//! - [`world`]: map, scenes and A* navigation
//! - [`agent`]: personas, live agent state and the default roster
//! - [`memory`]: the dual-track memory store and prompt context rendering
//! - [`cognition`]: the language-model capability (stub and remote)
//! - [`sim`]: the tick pipeline and its event stream
//! - [`chat`]: user chat sessions feeding the interaction track
//! - [`log`] and [`snapshot`]: persistence and replay verification

pub mod agent;
pub mod chat;
pub mod cognition;
pub mod log;
pub mod memory;
pub mod sim;
pub mod snapshot;
pub mod world;

pub use agent::{default_roster, AgentId, AgentMode, AgentProfile, Roster};
pub use cognition::{Cognition, StubCognition};
pub use memory::{ContextBundle, MemoryEvent, MemoryKind, MemoryStore, Track};
pub use sim::{EventKind, SimConfig, SimEvent, SimState, Simulation};
pub use world::{load_map, Position, SceneId, WorldMap};
