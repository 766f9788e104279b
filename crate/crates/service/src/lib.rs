//! Network boundary for a running lifespace simulation.
//!
//! | method | path | body | response |
//! |--------|------|------|----------|
//! | GET | `/v1/state` | | [`StateView`] |
//! | GET / POST | `/v1/mode` | `{"mode": "observable" \| "unobservable"}` | `{"mode": ...}` |
//! | POST | `/v1/sessions` | `{"agent": id}` | `{"session", "agent"}` |
//! | GET / DELETE | `/v1/sessions/{id}` | | session / final transcript |
//! | POST | `/v1/sessions/{id}/messages` | `{"text"}` | `{"reply", "acted"}` |
//! | POST | `/v1/snapshot` | `{"path"}` | [`SnapshotInfo`] |
//! | POST | `/v1/snapshot/load` | `{"path"}` | [`SnapshotInfo`] |
//! | WS | `/v1/events?since=<seq>` | | stream frames |
//!
//! Stream frames are JSON objects of one of three shapes:
//! `{"event": SimEvent, "visible": bool}` for every logged event,
//! `{"expression": {"tick", "agents": {id: mode}}}` after each tick, and
//! `{"mode_changed": {"mode", "after_seq", "tick"}}` on a mode switch.
//! Errors come back as `{"error", "retryable"}` with a matching status.

mod engine;
mod http;

pub use engine::{
    AgentSnapshot, ConversationView, Engine, EngineError, Frame, ModeChange, SceneView, SnapshotInfo, StateView,
    StreamEnvelope, ViewMode, SUBSCRIBER_QUEUE,
};
pub use http::{
    router, serve, ErrorBody, MessageBody, ModeBody, OpenSession, SessionClosed, SessionOpened, SnapshotPath,
};
