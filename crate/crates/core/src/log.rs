//! JSON Lines event log with a header carrying the initial state and a
//! trailer carrying the final state digest.
//!
//! ```text
//! {"seq":0,"tick":0,"type":"header","agents":[...],"data":{"format":"lifespace-log/1","state":{...}}}
//! {"seq":1,"tick":1,"type":"planned","agents":["anty"],"data":{...}}
//! ...
//! {"seq":412,"tick":100,"type":"trailer","agents":[],"data":{"digest":"9f2c...","events":412}}
//! ```
//!
//! The trailer's `seq` is the seq of the last event in the log.

use std::fmt;
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::agent::AgentId;
use crate::sim::{SimEvent, SimState};

pub const LOG_FORMAT: &str = "lifespace-log/1";

#[derive(Debug, Error)]
pub enum LogError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("corrupt log at line {line}: {message}")]
    Corrupt { line: usize, message: String },
}

/// Streams a log: header on construction, one line per event, trailer on
/// [`LogWriter::finish`].
pub struct LogWriter<W: Write> {
    out: W,
    events: u64,
    last_seq: u64,
}

impl<W: Write> LogWriter<W> {
    pub fn new(mut out: W, initial: &SimState) -> io::Result<Self> {
        let agents: Vec<&AgentId> = initial.roster.agents.iter().map(|e| &e.profile.id).collect();
        let header = json!({
            "seq": 0,
            "tick": initial.tick,
            "type": "header",
            "agents": agents,
            "data": {"format": LOG_FORMAT, "state": initial},
        });
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n")?;
        Ok(Self {
            out,
            events: 0,
            last_seq: initial.next_seq - 1,
        })
    }

    pub fn write_event(&mut self, event: &SimEvent) -> io::Result<()> {
        self.out.write_all(event.to_json_line().as_bytes())?;
        self.out.write_all(b"\n")?;
        self.events += 1;
        self.last_seq = event.seq;
        Ok(())
    }

    pub fn finish(mut self, final_state: &SimState) -> io::Result<W> {
        let trailer = json!({
            "seq": self.last_seq,
            "tick": final_state.tick,
            "type": "trailer",
            "agents": [],
            "data": {"digest": final_state.digest(), "events": self.events},
        });
        serde_json::to_writer(&mut self.out, &trailer)?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(self.out)
    }
}

/// Writes a complete log for a run from `initial` to `final_state`.
pub fn write_log<W: Write>(out: W, initial: &SimState, events: &[SimEvent], final_state: &SimState) -> io::Result<W> {
    let mut writer = LogWriter::new(out, initial)?;
    for e in events {
        writer.write_event(e)?;
    }
    writer.finish(final_state)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum ReplayReport {
    Match {
        digest: String,
        events: u64,
        final_tick: u64,
    },
    Mismatch {
        /// First event seq at which the log and the replay disagree, when
        /// the divergence can be pinned to one.
        first_divergent_seq: Option<u64>,
        detail: String,
    },
}

impl ReplayReport {
    pub fn is_match(&self) -> bool {
        matches!(self, ReplayReport::Match { .. })
    }
}

impl fmt::Display for ReplayReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReplayReport::Match {
                digest,
                events,
                final_tick,
            } => write!(f, "digest match: {events} events, final tick {final_tick}, digest {digest}"),
            ReplayReport::Mismatch {
                first_divergent_seq: Some(seq),
                detail,
            } => write!(f, "digest mismatch: first divergent seq {seq}: {detail}"),
            ReplayReport::Mismatch {
                first_divergent_seq: None,
                detail,
            } => write!(f, "digest mismatch: {detail}"),
        }
    }
}

#[derive(Deserialize)]
struct Header {
    format: String,
    state: SimState,
}

#[derive(Deserialize)]
struct Trailer {
    digest: String,
}

fn corrupt(line: usize, message: impl Into<String>) -> LogError {
    LogError::Corrupt {
        line,
        message: message.into(),
    }
}

/// Rebuilds the final state from the header and events, then compares its
/// digest against the trailer.
pub fn replay<R: BufRead>(reader: R) -> Result<ReplayReport, LogError> {
    let mut lines = reader.lines().enumerate().map(|(i, l)| (i + 1, l));

    let (_, first) = lines.next().ok_or_else(|| corrupt(1, "empty log"))?;
    let first = first?;
    let value: Value = serde_json::from_str(&first).map_err(|e| corrupt(1, e.to_string()))?;
    if value["type"] != "header" {
        return Err(corrupt(1, "first line is not a header"));
    }
    let header: Header = serde_json::from_value(value["data"].clone())
        .map_err(|e| corrupt(1, format!("bad header: {e}")))?;
    if header.format != LOG_FORMAT {
        return Err(corrupt(1, format!("unsupported log format `{}`", header.format)));
    }
    let mut state = header.state;
    if let Err((field, msg)) = state.validate() {
        return Err(corrupt(1, format!("invalid initial state at {field}: {msg}")));
    }

    let mut events = 0u64;
    let mut trailer = None;
    for (n, line) in lines {
        let line = line?;
        if trailer.is_some() {
            return Err(corrupt(n, "content after trailer"));
        }
        let value: Value = serde_json::from_str(&line).map_err(|e| corrupt(n, e.to_string()))?;
        if value["type"] == "trailer" {
            let seq = value["seq"].as_u64().ok_or_else(|| corrupt(n, "trailer without seq"))?;
            let tick = value["tick"].as_u64().ok_or_else(|| corrupt(n, "trailer without tick"))?;
            let t: Trailer = serde_json::from_value(value["data"].clone())
                .map_err(|e| corrupt(n, format!("bad trailer: {e}")))?;
            trailer = Some((seq, tick, t));
            continue;
        }
        let event: SimEvent = serde_json::from_value(value).map_err(|e| corrupt(n, e.to_string()))?;
        if event.seq != state.next_seq {
            return Ok(ReplayReport::Mismatch {
                first_divergent_seq: Some(state.next_seq),
                detail: format!("expected seq {}, log has seq {}", state.next_seq, event.seq),
            });
        }
        if event.tick < state.tick {
            return Ok(ReplayReport::Mismatch {
                first_divergent_seq: Some(event.seq),
                detail: format!("tick went backwards to {}", event.tick),
            });
        }
        while state.tick < event.tick {
            state.begin_tick();
        }
        if let Err(e) = state.apply(&event) {
            return Ok(ReplayReport::Mismatch {
                first_divergent_seq: Some(event.seq),
                detail: e.to_string(),
            });
        }
        events += 1;
    }

    let Some((last_seq, final_tick, trailer)) = trailer else {
        return Ok(ReplayReport::Mismatch {
            first_divergent_seq: None,
            detail: "log has no trailer".into(),
        });
    };
    if last_seq + 1 != state.next_seq {
        return Ok(ReplayReport::Mismatch {
            first_divergent_seq: Some(state.next_seq.min(last_seq)),
            detail: format!("trailer expects last seq {last_seq}, log ends at {}", state.next_seq - 1),
        });
    }
    if final_tick < state.tick {
        return Ok(ReplayReport::Mismatch {
            first_divergent_seq: None,
            detail: format!("trailer tick {final_tick} precedes replayed tick {}", state.tick),
        });
    }
    while state.tick < final_tick {
        state.begin_tick();
    }
    let digest = state.digest();
    if digest != trailer.digest {
        return Ok(ReplayReport::Mismatch {
            first_divergent_seq: None,
            detail: format!("replayed digest {digest} differs from trailer digest {}", trailer.digest),
        });
    }
    Ok(ReplayReport::Match {
        digest,
        events,
        final_tick,
    })
}
