//! Deterministic rule-based provider.
//!
//! The stub is a complete provider, not a test double: it lets the engine
//! run end to end with no network. Every output is a pure function of the
//! seed and the request. Rules:
//!
//! | task      | rule |
//! |-----------|------|
//! | plan      | no life-track memory yet → home scene. Otherwise, if a recent life event is an arrival, go to the scene after that one in map order (wrapping). Otherwise pick `hash(seed, agent, life-event count) mod scenes`. Activity is [`default_activity`] for the chosen scene. |
//! | dialogue  | turn 0: the initiator greets the partner by name. Turns 1..: fixed small-talk templates about the speakers' occupations. The stub never ends a conversation early; the turn cap does. |
//! | summarize | life track: one sentence naming the distinct scenes visited and partners spoken to, in first-seen order. Interaction track: number of exchanges with the user plus the opening of the latest. |
//! | reply     | text with a movement cue (`go`, `head`, `visit`, `move`, `walk`, `come`) naming a scene id or label → accept, action = that scene with its default activity. Text asking about recent doings (`today`, `recent`, `lately`, `doing`, `did you`, `up to`) → quote the most recent life event verbatim, else the latest life summary. Otherwise a persona-flavoured acknowledgement. |

use std::collections::BTreeSet;

use super::{
    default_activity, Cognition, CognitionError, DialogueRequest, DialogueTurn, PlanDecision,
    PlanRequest, ReplyRequest, UserReply,
};
use crate::memory::{MemoryEvent, MemoryKind, Track};

const MOVE_CUES: &[&str] = &["go", "head", "visit", "move", "walk", "come"];
const RECENT_CUES: &[&str] = &["today", "recent", "recently", "lately", "doing"];
const RECENT_PHRASES: &[&str] = &["did you", "up to"];

#[derive(Clone, Debug)]
pub struct StubCognition {
    seed: u64,
}

impl StubCognition {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }
}

/// 64-bit FNV-1a; stable across platforms and toolchains.
fn fnv1a(parts: &[&[u8]]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325_u64;
    for part in parts {
        for &b in *part {
            hash ^= u64::from(b);
            hash = hash.wrapping_mul(0x0100_0000_01b3);
        }
        hash ^= 0xff;
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}

fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn topic(occupation: &str) -> &str {
    match occupation {
        "chef" => "food",
        "musician" => "music",
        "librarian" => "books",
        "gardener" => "plants",
        "barista" => "coffee",
        other => other,
    }
}

impl Cognition for StubCognition {
    fn plan(&self, req: &PlanRequest<'_>) -> Result<PlanDecision, CognitionError> {
        let scenes = req.map.scenes();
        let ctx = req.context;
        let last_arrival = ctx
            .recent_life
            .iter()
            .rev()
            .find(|e| e.kind == MemoryKind::Arrival)
            .and_then(|e| e.scene.as_ref())
            .and_then(|s| scenes.iter().position(|a| &a.id == s));

        let (scene, rationale) = if ctx.recent_life.is_empty() && ctx.long_term_life.is_empty() {
            let home = req
                .map
                .scene(req.profile.home_scene.as_str())
                .unwrap_or(&scenes[0]);
            (home, "starting the day at my usual place".to_owned())
        } else if let Some(idx) = last_arrival {
            let next = &scenes[(idx + 1) % scenes.len()];
            (next, format!("I haven't been to the {} in a while", next.label))
        } else {
            let seen: u64 = ctx.long_term_life.iter().map(|s| s.size()).sum::<u64>()
                + ctx.recent_life.len() as u64;
            let h = fnv1a(&[
                &self.seed.to_le_bytes(),
                req.profile.id.as_str().as_bytes(),
                &seen.to_le_bytes(),
            ]);
            let next = &scenes[(h % scenes.len() as u64) as usize];
            (next, format!("the {} sounds nice right now", next.label))
        };
        Ok(PlanDecision {
            destination: scene.id.clone(),
            activity: default_activity(req.profile, scene),
            rationale,
        })
    }

    fn dialogue_turn(&self, req: &DialogueRequest<'_>) -> Result<DialogueTurn, CognitionError> {
        let me = req.speaker.profile;
        let you = req.listener.profile;
        let index = req.turns.len();
        let last = index + 1 >= req.max_turns;
        let text = if last {
            format!("Anyway, I should get going. See you around, {}!", you.name)
        } else {
            match index {
                0 => format!("Hi {}! Nice to run into you.", you.name),
                1 => format!(
                    "Hey {}! Good to see you. How is life as a {}?",
                    you.name, you.occupation
                ),
                2 => format!(
                    "Busy but fun. As a {}, I can never stop thinking about {}.",
                    me.occupation,
                    topic(&me.occupation)
                ),
                3 => format!(
                    "Ha, I know the feeling. For me it's all about {}.",
                    topic(&me.occupation)
                ),
                _ => format!(
                    "We should talk about {} and {} again soon.",
                    topic(&me.occupation),
                    topic(&you.occupation)
                ),
            }
        };
        Ok(DialogueTurn {
            speaker: me.id.clone(),
            text,
            terminate: last,
        })
    }

    fn summarize(&self, events: &[MemoryEvent]) -> Result<String, CognitionError> {
        let (first, last) = match (events.first(), events.last()) {
            (Some(f), Some(l)) => (f.tick, l.tick),
            _ => return Err(CognitionError::Precondition("no events to summarize".into())),
        };
        if events[0].track == Track::Interaction {
            let latest = &events[events.len() - 1].text;
            let opening: String = latest.chars().take(40).collect();
            return Ok(format!(
                "Talked with the user {} times (ticks {first}-{last}); latest: {opening}",
                events.len()
            ));
        }
        let mut scenes: Vec<&str> = Vec::new();
        let mut partners: Vec<&str> = Vec::new();
        let mut seen = BTreeSet::new();
        for e in events {
            if let Some(s) = &e.scene {
                if seen.insert(("s", s.as_str())) {
                    scenes.push(s.as_str());
                }
            }
            if e.kind == MemoryKind::AgentDialogue {
                for p in e.participants.iter().skip(1) {
                    if seen.insert(("p", p.as_str())) {
                        partners.push(p.as_str());
                    }
                }
            }
        }
        let places = if scenes.is_empty() {
            "stayed on the move".to_owned()
        } else {
            format!("spent time at the {}", scenes.join(", "))
        };
        let talk = if partners.is_empty() {
            "kept to myself".to_owned()
        } else {
            format!("talked with {}", partners.join(", "))
        };
        Ok(format!("Ticks {first}-{last}: {places} and {talk}."))
    }

    fn reply(&self, req: &ReplyRequest<'_>) -> Result<UserReply, CognitionError> {
        let tokens = words(req.user_text);
        let lower = req.user_text.to_lowercase();
        let has = |w: &str| tokens.iter().any(|t| t == w);

        if MOVE_CUES.iter().any(|c| has(c)) {
            let named = req.map.scenes().iter().find(|s| {
                has(s.id.as_str()) || {
                    let label = words(&s.label);
                    !label.is_empty() && tokens.windows(label.len()).any(|w| w == label.as_slice())
                }
            });
            if let Some(scene) = named {
                return Ok(UserReply {
                    text: format!("Sure, I'll head over to the {} now.", scene.label),
                    accepted_action: Some(PlanDecision {
                        destination: scene.id.clone(),
                        activity: default_activity(req.profile, scene),
                        rationale: "the user suggested it".into(),
                    }),
                });
            }
        }

        if RECENT_CUES.iter().any(|c| has(c)) || RECENT_PHRASES.iter().any(|p| lower.contains(p)) {
            let ctx = req.context;
            let text = if let Some(e) = ctx.recent_life.last() {
                format!("Let me think. {}", e.text)
            } else if let Some(s) = ctx.long_term_life.last() {
                format!("Let me think. {}", s.text)
            } else {
                "Not much has happened yet, my day is just getting started.".into()
            };
            return Ok(UserReply {
                text,
                accepted_action: None,
            });
        }

        Ok(UserReply {
            text: format!(
                "As the {} here, I'm always happy to chat. What's on your mind?",
                req.profile.occupation
            ),
            accepted_action: None,
        })
    }
}
