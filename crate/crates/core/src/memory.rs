//! Dual-track agent memory.
//!
//! Each agent keeps two independent tracks: the interaction track (what the
//! user said and how the agent replied) and the life-space track (movement,
//! arrivals, activities and conversations with other agents). Each track has
//! its own short-term buffer and its own list of long-term summaries. Both
//! tracks are merged only when a prompt context is assembled.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::AgentId;
use crate::cognition::CognitionError;
use crate::world::SceneId;

/// Default number of short-term events compressed into one summary.
pub const DEFAULT_THRESHOLD: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Track {
    Interaction,
    LifeSpace,
}

impl Track {
    pub const ALL: [Track; 2] = [Track::Interaction, Track::LifeSpace];

    pub fn as_str(self) -> &'static str {
        match self {
            Track::Interaction => "interaction",
            Track::LifeSpace => "life_space",
        }
    }
}

impl fmt::Display for Track {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryKind {
    Movement,
    Arrival,
    Activity,
    AgentDialogue,
    UserExchange,
}

impl MemoryKind {
    /// The only track this kind may be stored on.
    pub fn track(self) -> Track {
        match self {
            MemoryKind::UserExchange => Track::Interaction,
            _ => Track::LifeSpace,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryEvent {
    /// Per-track sequence number, assigned on record.
    pub seq: u64,
    pub tick: u64,
    pub track: Track,
    pub kind: MemoryKind,
    pub text: String,
    pub participants: Vec<AgentId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene: Option<SceneId>,
}

impl MemoryEvent {
    /// A not-yet-recorded event on the track implied by `kind`.
    pub fn new(tick: u64, kind: MemoryKind, text: impl Into<String>, participants: Vec<AgentId>) -> Self {
        Self {
            seq: 0,
            tick,
            track: kind.track(),
            kind,
            text: text.into(),
            participants,
            scene: None,
        }
    }

    pub fn at_scene(mut self, scene: Option<SceneId>) -> Self {
        self.scene = scene;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LongTermSummary {
    /// Inclusive per-track seq range of the compressed events.
    pub seq_range: (u64, u64),
    pub track: Track,
    pub text: String,
}

impl LongTermSummary {
    pub fn size(&self) -> u64 {
        self.seq_range.1 - self.seq_range.0 + 1
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MemoryError {
    #[error("{kind:?} events belong on the {expected} track, not {found}")]
    TrackMismatch {
        kind: MemoryKind,
        expected: Track,
        found: Track,
    },
    #[error("memory event text is empty")]
    EmptyText,
    #[error("summarizer failed: {0}")]
    Summarizer(#[from] CognitionError),
    #[error("compression of {track} events {first}..={last} does not match the buffer")]
    CompressionMismatch { track: Track, first: u64, last: u64 },
}

/// Produces the long-term summary for a batch of same-track events.
pub trait Summarizer {
    fn summarize(&self, events: &[MemoryEvent]) -> Result<String, CognitionError>;
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackMemory {
    pub short_term: Vec<MemoryEvent>,
    pub long_term: Vec<LongTermSummary>,
    /// Number of events ever recorded on this track (also the last seq).
    pub recorded: u64,
}

impl TrackMemory {
    pub fn compressed_count(&self) -> u64 {
        self.long_term.iter().map(LongTermSummary::size).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryStore {
    pub agent: AgentId,
    pub threshold: usize,
    pub interaction: TrackMemory,
    pub life_space: TrackMemory,
}

impl MemoryStore {
    pub fn new(agent: AgentId, threshold: usize) -> Self {
        assert!(threshold >= 1, "memory threshold must be at least 1");
        Self {
            agent,
            threshold,
            interaction: TrackMemory::default(),
            life_space: TrackMemory::default(),
        }
    }

    pub fn track(&self, track: Track) -> &TrackMemory {
        match track {
            Track::Interaction => &self.interaction,
            Track::LifeSpace => &self.life_space,
        }
    }

    fn track_mut(&mut self, track: Track) -> &mut TrackMemory {
        match track {
            Track::Interaction => &mut self.interaction,
            Track::LifeSpace => &mut self.life_space,
        }
    }

    /// Appends `event` to its track's short-term buffer and assigns its seq.
    pub fn record_event(&mut self, mut event: MemoryEvent) -> Result<&MemoryEvent, MemoryError> {
        let expected = event.kind.track();
        if event.track != expected {
            return Err(MemoryError::TrackMismatch {
                kind: event.kind,
                expected,
                found: event.track,
            });
        }
        if event.text.trim().is_empty() {
            return Err(MemoryError::EmptyText);
        }
        let track = self.track_mut(expected);
        track.recorded += 1;
        event.seq = track.recorded;
        track.short_term.push(event);
        Ok(track.short_term.last().expect("just pushed"))
    }

    /// Tracks whose short-term buffer has reached the threshold.
    pub fn pending_compressions(&self) -> Vec<Track> {
        Track::ALL
            .into_iter()
            .filter(|&t| self.track(t).short_term.len() >= self.threshold)
            .collect()
    }

    /// The events the next compression of `track` would consume.
    pub fn compression_batch(&self, track: Track) -> Option<&[MemoryEvent]> {
        let buf = &self.track(track).short_term;
        (buf.len() >= self.threshold).then(|| &buf[..self.threshold])
    }

    /// Replaces the oldest `threshold` events of `track` with `summary`.
    /// `first`/`last` must name exactly those events.
    pub fn apply_compression(
        &mut self,
        track: Track,
        first: u64,
        last: u64,
        summary: String,
    ) -> Result<&LongTermSummary, MemoryError> {
        let matches = self
            .compression_batch(track)
            .is_some_and(|b| b[0].seq == first && b[b.len() - 1].seq == last);
        if !matches {
            return Err(MemoryError::CompressionMismatch { track, first, last });
        }
        let k = self.threshold;
        let mem = self.track_mut(track);
        mem.short_term.drain(..k);
        mem.long_term.push(LongTermSummary {
            seq_range: (first, last),
            track,
            text: summary,
        });
        Ok(mem.long_term.last().expect("just pushed"))
    }

    /// Compresses every track at or above the threshold. All summaries are
    /// produced before anything is committed, so a summarizer failure leaves
    /// the store untouched.
    pub fn maybe_compress(&mut self, summarizer: &dyn Summarizer) -> Result<Vec<Track>, MemoryError> {
        let mut staged = Vec::new();
        for track in self.pending_compressions() {
            let batch = self.compression_batch(track).expect("pending track has a batch");
            let text = summarizer.summarize(batch)?;
            staged.push((track, batch[0].seq, batch[batch.len() - 1].seq, text));
        }
        let mut done = Vec::with_capacity(staged.len());
        for (track, first, last, text) in staged {
            self.apply_compression(track, first, last, text)?;
            done.push(track);
        }
        Ok(done)
    }

    pub fn assemble_context(&self) -> ContextBundle {
        ContextBundle {
            long_term_interaction: self.interaction.long_term.clone(),
            long_term_life: self.life_space.long_term.clone(),
            recent_interaction: self.interaction.short_term.clone(),
            recent_life: self.life_space.short_term.clone(),
        }
    }

    /// Recorded = buffered + compressed, per track.
    pub fn is_conserved(&self) -> bool {
        Track::ALL.into_iter().all(|t| {
            let m = self.track(t);
            m.recorded == m.short_term.len() as u64 + m.compressed_count()
        })
    }
}

/// Everything injected into a prompt for one agent, in fixed section order.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextBundle {
    pub long_term_interaction: Vec<LongTermSummary>,
    pub long_term_life: Vec<LongTermSummary>,
    pub recent_interaction: Vec<MemoryEvent>,
    pub recent_life: Vec<MemoryEvent>,
}

pub const SECTION_PAST_SHARED: &str = "## Past (shared with user)";
pub const SECTION_PAST_OWN: &str = "## Past (own life)";
pub const SECTION_RECENT_SHARED: &str = "## Recent (shared with user)";
pub const SECTION_RECENT_OWN: &str = "## Recent (own life)";

impl ContextBundle {
    pub fn is_empty(&self) -> bool {
        self.long_term_interaction.is_empty()
            && self.long_term_life.is_empty()
            && self.recent_interaction.is_empty()
            && self.recent_life.is_empty()
    }

    /// Section sizes in render order.
    pub fn section_sizes(&self) -> [usize; 4] {
        [
            self.long_term_interaction.len(),
            self.long_term_life.len(),
            self.recent_interaction.len(),
            self.recent_life.len(),
        ]
    }

    /// Renders the bundle as prompt text. Sections are separated by a blank
    /// line; each item is one `- <text>` line in seq order.
    pub fn render(&self) -> String {
        fn section<'a>(out: &mut String, heading: &str, items: impl Iterator<Item = &'a str>) {
            out.push_str(heading);
            out.push('\n');
            for text in items {
                out.push_str("- ");
                out.push_str(&text.replace('\n', " "));
                out.push('\n');
            }
        }
        let mut out = String::new();
        section(
            &mut out,
            SECTION_PAST_SHARED,
            self.long_term_interaction.iter().map(|s| s.text.as_str()),
        );
        out.push('\n');
        section(
            &mut out,
            SECTION_PAST_OWN,
            self.long_term_life.iter().map(|s| s.text.as_str()),
        );
        out.push('\n');
        section(
            &mut out,
            SECTION_RECENT_SHARED,
            self.recent_interaction.iter().map(|e| e.text.as_str()),
        );
        out.push('\n');
        section(
            &mut out,
            SECTION_RECENT_OWN,
            self.recent_life.iter().map(|e| e.text.as_str()),
        );
        out
    }
}

pub fn render_context(bundle: &ContextBundle) -> String {
    bundle.render()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::Cell;

    struct Joiner {
        fail: bool,
        calls: Cell<usize>,
    }

    impl Joiner {
        fn ok() -> Self {
            Self {
                fail: false,
                calls: Cell::new(0),
            }
        }
    }

    impl Summarizer for Joiner {
        fn summarize(&self, events: &[MemoryEvent]) -> Result<String, CognitionError> {
            self.calls.set(self.calls.get() + 1);
            if self.fail {
                return Err(CognitionError::Unavailable {
                    attempts: 1,
                    reason: "down".into(),
                });
            }
            Ok(format!("{} events", events.len()))
        }
    }

    fn life(text: &str) -> MemoryEvent {
        MemoryEvent::new(1, MemoryKind::Arrival, text, vec!["anty".into()])
    }

    fn chat(text: &str) -> MemoryEvent {
        MemoryEvent::new(1, MemoryKind::UserExchange, text, vec!["anty".into()])
    }

    fn store(k: usize) -> MemoryStore {
        MemoryStore::new("anty".into(), k)
    }

    #[test]
    fn record_routes_by_kind() {
        let mut s = store(10);
        s.record_event(life("Anty arrived at the restaurant")).unwrap();
        assert_eq!(s.life_space.short_term.len(), 1);
        s.record_event(chat("user asked about desserts; agent recommended soufflé"))
            .unwrap();
        assert_eq!(s.interaction.short_term.len(), 1);
        assert_eq!(s.life_space.short_term.len(), 1);
    }

    #[test]
    fn record_rejects_track_mismatch_and_empty_text() {
        let mut s = store(10);
        let mut bad = chat("hi");
        bad.track = Track::LifeSpace;
        assert_eq!(
            s.record_event(bad),
            Err(MemoryError::TrackMismatch {
                kind: MemoryKind::UserExchange,
                expected: Track::Interaction,
                found: Track::LifeSpace
            })
        );
        assert_eq!(s.record_event(life("  ")), Err(MemoryError::EmptyText));
        assert_eq!(s.life_space.recorded, 0);
    }

    #[test]
    fn seq_strictly_increases_per_track() {
        let mut s = store(100);
        for i in 0..5 {
            s.record_event(life(&format!("e{i}"))).unwrap();
        }
        let seqs: Vec<u64> = s.life_space.short_term.iter().map(|e| e.seq).collect();
        assert_eq!(seqs, vec![1, 2, 3, 4, 5]);
    }

    #[test]
    fn compress_only_full_tracks() {
        let mut s = store(10);
        for i in 0..10 {
            s.record_event(life(&format!("life {i}"))).unwrap();
        }
        for i in 0..3 {
            s.record_event(chat(&format!("chat {i}"))).unwrap();
        }
        let done = s.maybe_compress(&Joiner::ok()).unwrap();
        assert_eq!(done, vec![Track::LifeSpace]);
        assert!(s.life_space.short_term.is_empty());
        assert_eq!(s.life_space.long_term[0].seq_range, (1, 10));
        assert_eq!(s.interaction.short_term.len(), 3);
        assert!(s.interaction.long_term.is_empty());
    }

    #[test]
    fn compress_noop_on_empty_store() {
        let mut s = store(10);
        let j = Joiner::ok();
        assert!(s.maybe_compress(&j).unwrap().is_empty());
        assert_eq!(j.calls.get(), 0);
    }

    #[test]
    fn summarizer_failure_leaves_store_unchanged() {
        let mut s = store(10);
        for i in 0..10 {
            s.record_event(life(&format!("life {i}"))).unwrap();
        }
        let before = s.clone();
        let err = s
            .maybe_compress(&Joiner {
                fail: true,
                calls: Cell::new(0),
            })
            .unwrap_err();
        assert!(matches!(err, MemoryError::Summarizer(_)));
        assert_eq!(s, before);
    }

    #[test]
    fn overfull_buffer_keeps_the_excess() {
        let mut s = store(3);
        for i in 0..5 {
            s.record_event(life(&format!("life {i}"))).unwrap();
        }
        s.maybe_compress(&Joiner::ok()).unwrap();
        let left: Vec<u64> = s.life_space.short_term.iter().map(|e| e.seq).collect();
        assert_eq!(left, vec![4, 5]);
        assert!(s.is_conserved());
    }

    #[test]
    fn apply_compression_validates_range() {
        let mut s = store(2);
        s.record_event(life("a")).unwrap();
        s.record_event(life("b")).unwrap();
        assert!(s
            .apply_compression(Track::LifeSpace, 2, 3, "x".into())
            .is_err());
        assert!(s
            .apply_compression(Track::Interaction, 1, 2, "x".into())
            .is_err());
        s.apply_compression(Track::LifeSpace, 1, 2, "x".into()).unwrap();
    }

    #[test]
    fn context_sections() {
        let s = store(10);
        let bundle = s.assemble_context();
        assert!(bundle.is_empty());
        assert_eq!(
            bundle.render(),
            "## Past (shared with user)\n\n## Past (own life)\n\n## Recent (shared with user)\n\n## Recent (own life)\n"
        );

        let mut s = store(4);
        for i in 0..12 {
            s.record_event(life(&format!("life {i}"))).unwrap();
            s.maybe_compress(&Joiner::ok()).unwrap();
        }
        // 12 life events at K=4 -> 3 summaries, 0 left; add 2 more.
        s.record_event(life("life 12")).unwrap();
        s.record_event(chat("hello")).unwrap();
        let b = s.assemble_context();
        assert_eq!(b.section_sizes(), [0, 3, 1, 1]);
    }

    #[test]
    fn compressed_events_leave_recent_sections() {
        let mut s = store(10);
        for i in 0..13 {
            s.record_event(life(&format!("life event {i}"))).unwrap();
            s.maybe_compress(&Joiner::ok()).unwrap();
        }
        let b = s.assemble_context();
        let recent: Vec<&str> = b.recent_life.iter().map(|e| e.text.as_str()).collect();
        assert_eq!(recent, vec!["life event 10", "life event 11", "life event 12"]);
        assert_eq!(b.long_term_life.len(), 1);
        assert_eq!(b.long_term_life[0].seq_range, (1, 10));
        let text = b.render();
        assert!(!text.contains("life event 3\n"));
    }

    #[test]
    fn render_places_event_once_under_recent_life() {
        let mut s = store(10);
        s.record_event(life("Anty arrived at the restaurant")).unwrap();
        let b = s.assemble_context();
        let text = render_context(&b);
        assert_eq!(text.matches("Anty arrived at the restaurant").count(), 1);
        let own = text.split(SECTION_RECENT_OWN).nth(1).unwrap();
        assert!(own.contains("- Anty arrived at the restaurant\n"));
        assert_eq!(render_context(&b), text);
    }
}
