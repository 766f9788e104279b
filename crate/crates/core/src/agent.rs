//! Agent personas, live agent state and the default five-agent roster.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::world::{Path, Position, SceneId, WorldMap};

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(pub String);

impl AgentId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for AgentId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConversationId(pub u64);

impl fmt::Display for ConversationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{}", self.0)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AgentError {
    #[error("agent `{agent}` cannot {action} while {mode}")]
    IllegalTransition {
        agent: AgentId,
        mode: AgentMode,
        action: &'static str,
    },
    #[error("roster requires scene `{0}` which the map lacks")]
    MissingScene(SceneId),
    #[error("duplicate agent id `{0}`")]
    DuplicateAgent(AgentId),
    #[error("agent `{0}` has an empty occupation")]
    EmptyOccupation(AgentId),
    #[error("roster must flag exactly one primary agent, found {0}")]
    PrimaryCount(usize),
    #[error("roster is empty")]
    EmptyRoster,
    #[error("invalid roster file: {0}")]
    Format(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentProfile {
    pub id: AgentId,
    pub name: String,
    pub occupation: String,
    pub personality: String,
    pub home_scene: SceneId,
    #[serde(default)]
    pub bio: String,
    /// The user-facing persona of the deployment.
    #[serde(default)]
    pub primary: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentMode {
    Idle,
    Moving,
    Acting,
    Conversing,
}

impl AgentMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Idle => "idle",
            Self::Moving => "moving",
            Self::Acting => "acting",
            Self::Conversing => "conversing",
        }
    }
}

impl fmt::Display for AgentMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathCursor {
    pub path: Path,
    /// Index of the next step to take.
    pub cursor: usize,
}

impl PathCursor {
    pub fn remaining(&self) -> usize {
        self.path.len().saturating_sub(self.cursor)
    }
}

/// Where an agent is headed and what it will do on arrival.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Intent {
    pub destination: SceneId,
    pub activity: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentState {
    pub id: AgentId,
    pub position: Position,
    pub mode: AgentMode,
    pub current_path: Option<PathCursor>,
    pub current_activity: Option<String>,
    pub conversation: Option<ConversationId>,
    pub conversation_cooldown: u32,
    pub activity_ticks_left: u32,
    /// Plan being executed, kept across an interrupting conversation so the
    /// agent can resume it afterwards.
    pub intent: Option<Intent>,
}

impl AgentState {
    pub fn idle_at(id: AgentId, position: Position) -> Self {
        Self {
            id,
            position,
            mode: AgentMode::Idle,
            current_path: None,
            current_activity: None,
            conversation: None,
            conversation_cooldown: 0,
            activity_ticks_left: 0,
            intent: None,
        }
    }

    fn illegal(&self, action: &'static str) -> AgentError {
        AgentError::IllegalTransition {
            agent: self.id.clone(),
            mode: self.mode,
            action,
        }
    }

    /// Mode/field coherence: each of moving, acting and conversing holds
    /// exactly when its backing field is present.
    pub fn is_coherent(&self) -> bool {
        let path_ok = match &self.current_path {
            None => self.mode != AgentMode::Moving,
            Some(p) => self.mode == AgentMode::Moving && (p.remaining() > 0 || p.path.is_empty()),
        };
        path_ok
            && (self.mode == AgentMode::Acting) == self.current_activity.is_some()
            && (self.mode == AgentMode::Conversing) == self.conversation.is_some()
    }

    pub fn set_activity(&mut self, activity: impl Into<String>, duration: u32) -> Result<(), AgentError> {
        match self.mode {
            AgentMode::Idle | AgentMode::Acting => {
                self.mode = AgentMode::Acting;
                self.current_activity = Some(activity.into());
                self.activity_ticks_left = duration;
                Ok(())
            }
            _ => Err(self.illegal("start an activity")),
        }
    }

    /// Starts following `path` toward `intent`. Any running activity is
    /// dropped.
    pub fn begin_moving(&mut self, path: Path, intent: Intent) -> Result<(), AgentError> {
        if self.mode == AgentMode::Conversing {
            return Err(self.illegal("start moving"));
        }
        self.mode = AgentMode::Moving;
        self.current_path = Some(PathCursor { path, cursor: 0 });
        self.current_activity = None;
        self.activity_ticks_left = 0;
        self.intent = Some(intent);
        Ok(())
    }

    /// Moves one tile along the current path. Returns `true` once the path
    /// is exhausted, leaving the agent idle at its destination. An empty path
    /// arrives without moving.
    pub fn advance_one_step(&mut self) -> Result<bool, AgentError> {
        if self.mode != AgentMode::Moving {
            return Err(self.illegal("advance along a path"));
        }
        let cursor = self.current_path.as_mut().expect("moving agents carry a path");
        if let Some(&next) = cursor.path.steps.get(cursor.cursor) {
            self.position = next;
            cursor.cursor += 1;
        }
        if cursor.remaining() == 0 {
            self.current_path = None;
            self.mode = AgentMode::Idle;
            return Ok(true);
        }
        Ok(false)
    }

    /// The tile the next `advance_one_step` will move to, if any.
    pub fn next_step(&self) -> Option<Position> {
        self.current_path
            .as_ref()
            .and_then(|c| c.path.steps.get(c.cursor).copied())
    }

    /// Enters a conversation, suspending movement (the intent is kept) or
    /// abandoning the current activity.
    pub fn join_conversation(&mut self, id: ConversationId) -> Result<(), AgentError> {
        if self.mode == AgentMode::Conversing {
            return Err(self.illegal("join a second conversation"));
        }
        if self.mode == AgentMode::Acting {
            self.intent = None;
        }
        self.mode = AgentMode::Conversing;
        self.current_path = None;
        self.current_activity = None;
        self.activity_ticks_left = 0;
        self.conversation = Some(id);
        Ok(())
    }

    pub fn leave_conversation(&mut self, cooldown: u32) -> Result<(), AgentError> {
        if self.mode != AgentMode::Conversing {
            return Err(self.illegal("leave a conversation"));
        }
        self.mode = AgentMode::Idle;
        self.conversation = None;
        self.conversation_cooldown = cooldown;
        Ok(())
    }

    /// Per-tick timers: cooldown decrement and activity expiry.
    pub fn tick_timers(&mut self) {
        self.conversation_cooldown = self.conversation_cooldown.saturating_sub(1);
        if self.mode == AgentMode::Acting {
            self.activity_ticks_left = self.activity_ticks_left.saturating_sub(1);
            if self.activity_ticks_left == 0 {
                self.mode = AgentMode::Idle;
                self.current_activity = None;
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RosterEntry {
    pub profile: AgentProfile,
    pub state: AgentState,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Roster {
    pub agents: Vec<RosterEntry>,
}

impl Roster {
    /// Validates the profiles against `map` and spawns every agent idle at
    /// its home scene anchor.
    pub fn from_profiles(map: &WorldMap, mut profiles: Vec<AgentProfile>) -> Result<Self, AgentError> {
        if profiles.is_empty() {
            return Err(AgentError::EmptyRoster);
        }
        let mut ids = HashSet::new();
        for p in &profiles {
            if !ids.insert(p.id.clone()) {
                return Err(AgentError::DuplicateAgent(p.id.clone()));
            }
            if p.occupation.trim().is_empty() {
                return Err(AgentError::EmptyOccupation(p.id.clone()));
            }
            if map.scene(p.home_scene.as_str()).is_none() {
                return Err(AgentError::MissingScene(p.home_scene.clone()));
            }
        }
        match profiles.iter().filter(|p| p.primary).count() {
            0 => profiles[0].primary = true,
            1 => {}
            n => return Err(AgentError::PrimaryCount(n)),
        }
        let agents = profiles
            .into_iter()
            .map(|profile| {
                let anchor = map
                    .scene_anchor(profile.home_scene.as_str())
                    .expect("home scene checked above");
                RosterEntry {
                    state: AgentState::idle_at(profile.id.clone(), anchor),
                    profile,
                }
            })
            .collect();
        Ok(Self { agents })
    }

    /// Parses a JSON roster file (an array of profiles).
    pub fn from_json(map: &WorldMap, json: &str) -> Result<Self, AgentError> {
        let profiles: Vec<AgentProfile> =
            serde_json::from_str(json).map_err(|e| AgentError::Format(e.to_string()))?;
        Self::from_profiles(map, profiles)
    }

    pub fn primary(&self) -> &RosterEntry {
        self.agents
            .iter()
            .find(|e| e.profile.primary)
            .expect("validated roster has a primary agent")
    }

    pub fn get(&self, id: &AgentId) -> Option<&RosterEntry> {
        self.agents.iter().find(|e| &e.profile.id == id)
    }

    pub fn get_mut(&mut self, id: &AgentId) -> Option<&mut RosterEntry> {
        self.agents.iter_mut().find(|e| &e.profile.id == id)
    }

    /// Agent ids in processing order (sorted).
    pub fn sorted_ids(&self) -> Vec<AgentId> {
        let mut ids: Vec<AgentId> = self.agents.iter().map(|e| e.profile.id.clone()).collect();
        ids.sort();
        ids
    }
}

fn persona(
    id: &str,
    name: &str,
    occupation: &str,
    personality: &str,
    home: &str,
    bio: &str,
) -> AgentProfile {
    AgentProfile {
        id: AgentId::new(id),
        name: name.to_owned(),
        occupation: occupation.to_owned(),
        personality: personality.to_owned(),
        home_scene: SceneId::new(home),
        bio: bio.to_owned(),
        primary: false,
    }
}

/// The five shipped personas. The chef is the primary agent.
pub fn default_profiles() -> Vec<AgentProfile> {
    let mut chef = persona(
        "anty",
        "Anty",
        "chef",
        "warm, curious and proud of a good dessert",
        "restaurant",
        "Runs the kitchen of the neighbourhood restaurant and loves trying new recipes.",
    );
    chef.primary = true;
    vec![
        chef,
        persona(
            "barr",
            "Barr",
            "musician",
            "easygoing and talkative, always humming something",
            "plaza",
            "Plays guitar on the plaza most afternoons and collects old records.",
        ),
        persona(
            "cleo",
            "Cleo",
            "librarian",
            "quiet, precise and quietly funny",
            "library",
            "Keeps the library in order and runs the Thursday reading circle.",
        ),
        persona(
            "dara",
            "Dara",
            "gardener",
            "patient and observant, happiest outdoors",
            "garden",
            "Tends the community garden and knows every plant by name.",
        ),
        persona(
            "ezra",
            "Ezra",
            "barista",
            "upbeat and quick-witted, remembers everyone's order",
            "cafe",
            "Opens the cafe every morning and experiments with new blends.",
        ),
    ]
}

pub fn default_roster(map: &WorldMap) -> Result<Roster, AgentError> {
    Roster::from_profiles(map, default_profiles())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::load_map;

    fn moving(steps: &[(u32, u32)]) -> AgentState {
        let mut s = AgentState::idle_at("a".into(), Position::new(0, 0));
        let path = Path {
            steps: steps.iter().map(|&(x, y)| Position::new(x, y)).collect(),
        };
        s.begin_moving(
            path,
            Intent {
                destination: "x".into(),
                activity: "y".into(),
            },
        )
        .unwrap();
        s
    }

    #[test]
    fn default_roster_matches_deployment() {
        let map = WorldMap::default_map();
        let roster = default_roster(&map).unwrap();
        assert_eq!(roster.agents.len(), 5);
        let first = &roster.agents[0];
        assert_eq!(first.profile.name, "Anty");
        assert_eq!(first.profile.occupation, "chef");
        assert!(first.profile.primary);
        assert_eq!(roster.primary().profile.id.as_str(), "anty");
        assert_eq!(first.state.position, map.scene_anchor("restaurant").unwrap());
        assert!(roster.agents.iter().any(|e| e.profile.name == "Barr"));
        let occupations: HashSet<_> = roster.agents.iter().map(|e| &e.profile.occupation).collect();
        assert_eq!(occupations.len(), 5);
        assert!(roster.agents.iter().all(|e| e.state.mode == AgentMode::Idle));
    }

    #[test]
    fn roster_requires_home_scenes() {
        let map = load_map("2 1\n..\nscene cafe dining 0,0\n").unwrap();
        assert_eq!(
            default_roster(&map).unwrap_err(),
            AgentError::MissingScene("restaurant".into())
        );
    }

    #[test]
    fn roster_rejects_duplicates_and_multiple_primaries() {
        let map = WorldMap::default_map();
        let mut profiles = default_profiles();
        profiles[1].id = profiles[0].id.clone();
        assert!(matches!(
            Roster::from_profiles(&map, profiles),
            Err(AgentError::DuplicateAgent(_))
        ));
        let mut profiles = default_profiles();
        profiles[2].primary = true;
        assert_eq!(
            Roster::from_profiles(&map, profiles).unwrap_err(),
            AgentError::PrimaryCount(2)
        );
    }

    #[test]
    fn roster_json_overrides_personas() {
        let map = WorldMap::default_map();
        let json = r#"[{"id":"zed","name":"Zed","occupation":"painter","personality":"dreamy","home_scene":"garden","bio":"paints"}]"#;
        let roster = Roster::from_json(&map, json).unwrap();
        assert_eq!(roster.primary().profile.id.as_str(), "zed");
        assert!(matches!(
            Roster::from_json(&map, "{"),
            Err(AgentError::Format(_))
        ));
    }

    #[test]
    fn set_activity_transitions() {
        let mut s = AgentState::idle_at("a".into(), Position::new(0, 0));
        s.set_activity("preparing dessert", 5).unwrap();
        assert_eq!(s.mode, AgentMode::Acting);
        assert_eq!(s.current_activity.as_deref(), Some("preparing dessert"));
        s.set_activity("plating", 5).unwrap();
        assert_eq!(s.current_activity.as_deref(), Some("plating"));

        s.join_conversation(ConversationId(1)).unwrap();
        assert!(matches!(
            s.set_activity("x", 1),
            Err(AgentError::IllegalTransition { mode: AgentMode::Conversing, .. })
        ));
        let mut m = moving(&[(1, 0)]);
        assert!(m.set_activity("x", 1).is_err());
    }

    #[test]
    fn advance_steps_and_arrival() {
        let mut s = moving(&[(1, 0)]);
        assert!(s.advance_one_step().unwrap());
        assert_eq!(s.mode, AgentMode::Idle);
        assert!(s.current_path.is_none());

        let mut s = moving(&[(1, 0), (2, 0), (3, 0)]);
        assert!(!s.advance_one_step().unwrap());
        assert_eq!(s.position, Position::new(1, 0));
        assert_eq!(s.mode, AgentMode::Moving);

        let mut idle = AgentState::idle_at("a".into(), Position::new(0, 0));
        assert!(idle.advance_one_step().is_err());

        let mut empty = moving(&[]);
        assert!(empty.advance_one_step().unwrap());
        assert_eq!(empty.position, Position::new(0, 0));
    }

    #[test]
    fn conversation_suspends_movement_and_keeps_intent() {
        let mut s = moving(&[(1, 0), (2, 0)]);
        s.join_conversation(ConversationId(3)).unwrap();
        assert!(s.is_coherent());
        assert!(s.intent.is_some());
        s.leave_conversation(4).unwrap();
        assert_eq!(s.mode, AgentMode::Idle);
        assert_eq!(s.conversation_cooldown, 4);
        s.tick_timers();
        assert_eq!(s.conversation_cooldown, 3);
    }

    #[test]
    fn activity_expires_after_duration() {
        let mut s = AgentState::idle_at("a".into(), Position::new(0, 0));
        s.set_activity("reading", 2).unwrap();
        s.tick_timers();
        assert_eq!(s.mode, AgentMode::Acting);
        s.tick_timers();
        assert_eq!(s.mode, AgentMode::Idle);
        assert!(s.is_coherent());
    }
}
