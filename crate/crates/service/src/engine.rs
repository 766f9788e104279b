//! The running engine: one simulation writer thread, many readers.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, MutexGuard, RwLock};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use lifespace_core::agent::ConversationId;
use lifespace_core::chat::{AgentView, ChatError, ChatOutcome, ChatSession, SessionId, SimHandle, TranscriptEntry};
use lifespace_core::cognition::{DialogueTurn, PlanDecision};
use lifespace_core::sim::SimError;
use lifespace_core::snapshot::{self, SnapshotError};
use lifespace_core::world::SceneCategory;
use lifespace_core::{AgentId, AgentMode, Cognition, MemoryEvent, Position, SceneId, SimEvent, Simulation, WorldMap};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::broadcast;

/// Per-subscriber queue bound; a subscriber that falls this far behind is
/// disconnected and must resubscribe from its last seq.
pub const SUBSCRIBER_QUEUE: usize = 4096;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViewMode {
    #[default]
    Observable,
    Unobservable,
}

impl ViewMode {
    /// Whether `event` is shown to clients in this mode.
    pub fn shows(self, event: &SimEvent) -> bool {
        match self {
            ViewMode::Observable => true,
            ViewMode::Unobservable => event.kind.type_name() == "user_exchange",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamEnvelope {
    pub event: SimEvent,
    pub visible: bool,
}

/// Administrative record of a mode switch. Not part of the simulation log.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeChange {
    pub mode: ViewMode,
    /// Seq of the last event logged before the switch.
    pub after_seq: u64,
    pub tick: u64,
}

/// What the stream carries besides simulation events.
#[derive(Clone, Debug)]
pub enum Frame {
    Event(Arc<SimEvent>),
    /// Agent modes after a tick; enough for an expressions-only view.
    Expression {
        tick: u64,
        agents: BTreeMap<AgentId, AgentMode>,
    },
    ModeChanged(ModeChange),
    /// The log was replaced (snapshot load) or the engine is stopping.
    /// Subscribers are disconnected and should resubscribe.
    Reset,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SceneView {
    pub id: SceneId,
    pub category: SceneCategory,
    pub label: String,
    pub anchor: Position,
    pub tiles: Vec<Position>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AgentSnapshot {
    pub id: AgentId,
    pub name: String,
    pub occupation: String,
    pub home_scene: SceneId,
    pub primary: bool,
    pub position: Position,
    pub mode: AgentMode,
    pub activity: Option<String>,
    pub destination: Option<SceneId>,
    pub route: Vec<Position>,
    pub conversation: Option<ConversationId>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConversationView {
    pub id: ConversationId,
    pub participants: [AgentId; 2],
    pub scene: Option<SceneId>,
    pub turns: Vec<DialogueTurn>,
}

/// Immutable view of the world between ticks.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StateView {
    pub tick: u64,
    pub last_seq: u64,
    pub mode: ViewMode,
    pub map: WorldMap,
    pub scenes: Vec<SceneView>,
    pub agents: Vec<AgentSnapshot>,
    pub conversations: Vec<ConversationView>,
}

impl StateView {
    fn of(sim: &Simulation, mode: ViewMode) -> Self {
        let state = sim.state();
        let scenes = state
            .map
            .scenes()
            .iter()
            .map(|s| SceneView {
                id: s.id.clone(),
                category: s.category,
                label: s.label.clone(),
                anchor: s.anchor(),
                tiles: s.tiles.iter().copied().collect(),
            })
            .collect();
        let agents = state
            .roster
            .agents
            .iter()
            .map(|e| AgentSnapshot {
                id: e.profile.id.clone(),
                name: e.profile.name.clone(),
                occupation: e.profile.occupation.clone(),
                home_scene: e.profile.home_scene.clone(),
                primary: e.profile.primary,
                position: e.state.position,
                mode: e.state.mode,
                activity: e.state.current_activity.clone(),
                destination: e.state.intent.as_ref().map(|i| i.destination.clone()),
                route: e
                    .state
                    .current_path
                    .as_ref()
                    .map(|c| c.path.steps[c.cursor.min(c.path.len())..].to_vec())
                    .unwrap_or_default(),
                conversation: e.state.conversation,
            })
            .collect();
        let conversations = state
            .conversations
            .values()
            .map(|c| ConversationView {
                id: c.id,
                participants: c.participants.clone(),
                scene: c.scene.clone(),
                turns: c.turns.clone(),
            })
            .collect();
        Self {
            tick: state.tick,
            last_seq: state.next_seq - 1,
            mode,
            map: state.map.clone(),
            scenes,
            agents,
            conversations,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SnapshotInfo {
    pub path: String,
    pub tick: u64,
    pub last_seq: u64,
    pub digest: String,
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("engine has not been started")]
    NotStarted,
    #[error("engine is already running")]
    AlreadyStarted,
    #[error(transparent)]
    Chat(#[from] ChatError),
    #[error(transparent)]
    Snapshot(#[from] SnapshotError),
}

#[derive(Default)]
struct EventLog {
    /// Seq of the event just before `events[0]`.
    base: u64,
    events: Vec<Arc<SimEvent>>,
}

struct Shared {
    sim: Mutex<Simulation>,
    cognition: Arc<dyn Cognition>,
    log: RwLock<EventLog>,
    view: RwLock<Option<StateView>>,
    frames: broadcast::Sender<Frame>,
    mode: RwLock<ViewMode>,
    mode_log: Mutex<Vec<ModeChange>>,
    sessions: Mutex<BTreeMap<SessionId, Arc<Mutex<ChatSession>>>>,
    next_session: AtomicUsize,
    started: AtomicBool,
    stopping: AtomicBool,
    chats_in_flight: AtomicUsize,
    worker: Mutex<Option<JoinHandle<()>>>,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

/// Cheap to clone; all clones drive the same simulation.
#[derive(Clone)]
pub struct Engine {
    shared: Arc<Shared>,
}

impl Engine {
    pub fn new(sim: Simulation, cognition: Arc<dyn Cognition>) -> Self {
        let base = sim.state().next_seq - 1;
        let (frames, _) = broadcast::channel(SUBSCRIBER_QUEUE);
        Self {
            shared: Arc::new(Shared {
                sim: Mutex::new(sim),
                cognition,
                log: RwLock::new(EventLog {
                    base,
                    events: Vec::new(),
                }),
                view: RwLock::new(None),
                frames,
                mode: RwLock::new(ViewMode::default()),
                mode_log: Mutex::new(Vec::new()),
                sessions: Mutex::new(BTreeMap::new()),
                next_session: AtomicUsize::new(0),
                started: AtomicBool::new(false),
                stopping: AtomicBool::new(false),
                chats_in_flight: AtomicUsize::new(0),
                worker: Mutex::new(None),
            }),
        }
    }

    fn mark_started(&self) -> Result<(), EngineError> {
        if self.shared.started.swap(true, Ordering::SeqCst) {
            return Err(EngineError::AlreadyStarted);
        }
        let sim = lock(&self.shared.sim);
        *self.shared.view.write().unwrap() = Some(StateView::of(&sim, self.mode()));
        Ok(())
    }

    /// Starts without a ticking thread; the caller drives ticks with
    /// [`Engine::advance`].
    pub fn start_manual(&self) -> Result<(), EngineError> {
        self.mark_started()
    }

    /// Starts the simulation thread, one tick every `tick_ms`.
    pub fn start(&self) -> Result<(), EngineError> {
        self.mark_started()?;
        let engine = self.clone();
        let handle = std::thread::Builder::new()
            .name("lifespace-sim".into())
            .spawn(move || engine.tick_loop())
            .expect("spawn simulation thread");
        *lock(&self.shared.worker) = Some(handle);
        Ok(())
    }

    fn tick_loop(&self) {
        let (pace, pause_during_chat) = {
            let sim = lock(&self.shared.sim);
            let cfg = &sim.state().config;
            (Duration::from_millis(cfg.tick_ms), cfg.pause_during_chat)
        };
        while !self.shared.stopping.load(Ordering::SeqCst) {
            let began = Instant::now();
            let chatting = self.shared.chats_in_flight.load(Ordering::SeqCst) > 0;
            if !(pause_during_chat && chatting) {
                self.run_ticks(1);
            }
            match pace.checked_sub(began.elapsed()) {
                Some(rest) if !rest.is_zero() => std::thread::sleep(rest),
                _ => std::thread::yield_now(),
            }
        }
    }

    /// Stops the simulation thread after its current tick and disconnects
    /// stream subscribers.
    pub fn stop(&self) {
        self.shared.stopping.store(true, Ordering::SeqCst);
        if let Some(handle) = lock(&self.shared.worker).take() {
            let _ = handle.join();
        }
        let _ = self.shared.frames.send(Frame::Reset);
    }

    pub fn is_started(&self) -> bool {
        self.shared.started.load(Ordering::SeqCst)
    }

    /// Runs `n` ticks on the calling thread.
    pub fn advance(&self, n: u64) -> Result<Vec<SimEvent>, EngineError> {
        if !self.is_started() {
            return Err(EngineError::NotStarted);
        }
        Ok(self.run_ticks(n))
    }

    fn run_ticks(&self, n: u64) -> Vec<SimEvent> {
        let mut all = Vec::new();
        for _ in 0..n {
            let mut sim = lock(&self.shared.sim);
            let events = sim.tick(self.shared.cognition.as_ref());
            let shared: Vec<Arc<SimEvent>> = events.iter().cloned().map(Arc::new).collect();
            self.shared.log.write().unwrap().events.extend(shared.iter().cloned());
            *self.shared.view.write().unwrap() = Some(StateView::of(&sim, self.mode()));
            for e in shared {
                let _ = self.shared.frames.send(Frame::Event(e));
            }
            let agents = sim
                .state()
                .roster
                .agents
                .iter()
                .map(|e| (e.profile.id.clone(), e.state.mode))
                .collect();
            let _ = self.shared.frames.send(Frame::Expression {
                tick: sim.state().tick,
                agents,
            });
            drop(sim);
            all.extend(events);
        }
        all
    }

    pub fn get_state(&self) -> Result<StateView, EngineError> {
        let mut view = self
            .shared
            .view
            .read()
            .unwrap()
            .clone()
            .ok_or(EngineError::NotStarted)?;
        view.mode = self.mode();
        Ok(view)
    }

    pub fn digest(&self) -> String {
        lock(&self.shared.sim).digest()
    }

    /// Runs `f` against the simulation between ticks.
    pub fn with_simulation<T>(&self, f: impl FnOnce(&Simulation) -> T) -> T {
        f(&lock(&self.shared.sim))
    }

    /// Full backend log since the last (re)load.
    pub fn event_log(&self) -> Vec<SimEvent> {
        self.events_since(0).into_iter().map(|e| (*e).clone()).collect()
    }

    pub fn events_since(&self, since: u64) -> Vec<Arc<SimEvent>> {
        let log = self.shared.log.read().unwrap();
        let skip = since.saturating_sub(log.base) as usize;
        log.events.iter().skip(skip).cloned().collect()
    }

    pub fn subscribe(&self) -> broadcast::Receiver<Frame> {
        self.shared.frames.subscribe()
    }

    pub fn mode(&self) -> ViewMode {
        *self.shared.mode.read().unwrap()
    }

    pub fn set_mode(&self, mode: ViewMode) -> ViewMode {
        // Hold the simulation lock so the marker sits between two ticks.
        let sim = lock(&self.shared.sim);
        *self.shared.mode.write().unwrap() = mode;
        let change = ModeChange {
            mode,
            after_seq: sim.state().next_seq - 1,
            tick: sim.state().tick,
        };
        lock(&self.shared.mode_log).push(change.clone());
        tracing::info!(?mode, after_seq = change.after_seq, "view mode changed");
        let _ = self.shared.frames.send(Frame::ModeChanged(change));
        mode
    }

    pub fn mode_log(&self) -> Vec<ModeChange> {
        lock(&self.shared.mode_log).clone()
    }

    pub fn envelope(&self, event: &SimEvent) -> StreamEnvelope {
        StreamEnvelope {
            event: event.clone(),
            visible: self.mode().shows(event),
        }
    }

    pub fn open_session(&self, agent: &AgentId) -> Result<SessionId, EngineError> {
        if !self.is_started() {
            return Err(EngineError::NotStarted);
        }
        if lock(&self.shared.sim).state().profile(agent).is_none() {
            return Err(ChatError::UnknownAgent(agent.clone()).into());
        }
        let n = self.shared.next_session.fetch_add(1, Ordering::SeqCst) + 1;
        let id = SessionId(format!("s{n}"));
        lock(&self.shared.sessions).insert(
            id.clone(),
            Arc::new(Mutex::new(ChatSession::new(id.clone(), agent.clone()))),
        );
        Ok(id)
    }

    fn session(&self, id: &SessionId) -> Result<Arc<Mutex<ChatSession>>, EngineError> {
        lock(&self.shared.sessions)
            .get(id)
            .cloned()
            .ok_or_else(|| ChatError::UnknownSession(id.clone()).into())
    }

    /// Sends a user message. Blocks for the provider call; async callers
    /// should run it on a blocking thread.
    pub fn send_message(&self, id: &SessionId, text: &str) -> Result<ChatOutcome, EngineError> {
        let session = self.session(id)?;
        let mut session = lock(&session);
        self.shared.chats_in_flight.fetch_add(1, Ordering::SeqCst);
        let mut handle = SharedSim(&self.shared.sim);
        let result = session.user_message(text, &mut handle, self.shared.cognition.as_ref());
        self.shared.chats_in_flight.fetch_sub(1, Ordering::SeqCst);
        Ok(result?)
    }

    pub fn close_session(&self, id: &SessionId) -> Result<Vec<TranscriptEntry>, EngineError> {
        let session = self.session(id)?;
        let mut session = lock(&session);
        session.close()?;
        Ok(session.transcript.clone())
    }

    pub fn session_info(&self, id: &SessionId) -> Result<ChatSession, EngineError> {
        let session = self.session(id)?;
        let info = lock(&session).clone();
        Ok(info)
    }

    pub fn save_snapshot(&self, path: &Path) -> Result<SnapshotInfo, EngineError> {
        let sim = lock(&self.shared.sim);
        snapshot::save_snapshot(&sim, path)?;
        Ok(SnapshotInfo {
            path: path.display().to_string(),
            tick: sim.state().tick,
            last_seq: sim.state().next_seq - 1,
            digest: sim.digest(),
        })
    }

    /// Replaces the running simulation. The in-memory log restarts at the
    /// loaded state's seq and current subscribers are disconnected.
    pub fn load_snapshot(&self, path: &Path) -> Result<SnapshotInfo, EngineError> {
        let loaded = snapshot::load_snapshot(path)?;
        let mut sim = lock(&self.shared.sim);
        *sim = loaded;
        let last_seq = sim.state().next_seq - 1;
        *self.shared.log.write().unwrap() = EventLog {
            base: last_seq,
            events: Vec::new(),
        };
        if self.is_started() {
            *self.shared.view.write().unwrap() = Some(StateView::of(&sim, self.mode()));
        }
        let _ = self.shared.frames.send(Frame::Reset);
        Ok(SnapshotInfo {
            path: path.display().to_string(),
            tick: sim.state().tick,
            last_seq,
            digest: sim.digest(),
        })
    }
}

/// Chat access that takes the simulation lock per call, so a slow provider
/// reply never blocks the tick loop.
struct SharedSim<'a>(&'a Mutex<Simulation>);

impl SimHandle for SharedSim<'_> {
    fn agent_view(&self, agent: &AgentId) -> Result<AgentView, SimError> {
        lock(self.0).agent_view(agent)
    }

    fn submit_exchange(&mut self, agent: &AgentId, exchange: MemoryEvent, session: &SessionId) -> Result<(), SimError> {
        lock(self.0).submit_exchange(agent, exchange, session)
    }

    fn submit_replan(&mut self, agent: &AgentId, decision: PlanDecision) -> Result<(), SimError> {
        lock(self.0).submit_replan(agent, decision)
    }
}
