//! System-level acceptance checks. One PASS/FAIL line per criterion; exits
//! non-zero if any fails.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;
use std::time::{Duration, Instant};

use lifespace_cli::{cmd_replay, cmd_run, ReplayArgs, RunArgs, SpecArgs};
use lifespace_core::chat::ChatSession;
use lifespace_core::chat::SessionId;
use lifespace_core::cognition::CognitionSummarizer;
use lifespace_core::snapshot::{from_bytes, to_bytes};
use lifespace_core::world::WorldError;
use lifespace_core::{
    default_roster, AgentId, EventKind, MemoryEvent, MemoryKind, MemoryStore, Position, SimConfig, SimEvent, SimState,
    Simulation, StubCognition, Track, WorldMap,
};
use lifespace_service::{Engine, ViewMode};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn config(seed: u64) -> SimConfig {
    SimConfig {
        seed,
        tick_ms: 0,
        ..SimConfig::default()
    }
}

fn simulation(seed: u64) -> Simulation {
    let map = WorldMap::default_map();
    let roster = default_roster(&map).unwrap();
    Simulation::new(config(seed), map, roster).unwrap()
}

fn bfs_distances(map: &WorldMap, start: Position) -> Vec<Option<u32>> {
    let w = map.width();
    let idx = |p: Position| (p.y * w + p.x) as usize;
    let mut dist = vec![None; (w * map.height()) as usize];
    dist[idx(start)] = Some(0);
    let mut queue = VecDeque::from([start]);
    while let Some(p) = queue.pop_front() {
        let d = dist[idx(p)].unwrap();
        for n in map.neighbors(p) {
            if dist[idx(n)].is_none() {
                dist[idx(n)] = Some(d + 1);
                queue.push_back(n);
            }
        }
    }
    dist
}

fn pathfinding_oracle() -> Outcome {
    let started = Instant::now();
    let mut rng = StdRng::seed_from_u64(20_24);
    let (mut reachable, mut unreachable, mut mismatches) = (0u32, 0u32, 0u32);
    for _ in 0..50 {
        let cells: Vec<bool> = (0..400).map(|_| !rng.random_bool(0.3)).collect();
        let map = WorldMap::new(20, 20, cells, Vec::new()).unwrap();
        let tiles: Vec<Position> = (0..20)
            .flat_map(|y| (0..20).map(move |x| Position::new(x, y)))
            .filter(|&p| map.is_walkable(p))
            .collect();
        let mut found = 0;
        let mut attempts = 0;
        while found < 200 && attempts < 20_000 {
            attempts += 1;
            let s = tiles[rng.random_range(0..tiles.len())];
            let g = tiles[rng.random_range(0..tiles.len())];
            let oracle = bfs_distances(&map, s)[(g.y * 20 + g.x) as usize];
            match (map.find_path(s, g), oracle) {
                (Ok(path), Some(d)) => {
                    found += 1;
                    reachable += 1;
                    let steps_ok = path
                        .steps
                        .iter()
                        .scan(s, |prev, &p| {
                            let ok = prev.manhattan(p) == 1 && map.is_walkable(p);
                            *prev = p;
                            Some(ok)
                        })
                        .all(|ok| ok);
                    if path.len() as u32 != d || !steps_ok || path.steps.last().is_some_and(|&l| l != g) {
                        mismatches += 1;
                    }
                }
                (Err(WorldError::NoRoute { .. }), None) => unreachable += 1,
                _ => {
                    mismatches += 1;
                    found += 1;
                }
            }
        }
        if found < 200 {
            mismatches += 1;
        }
    }
    let elapsed = started.elapsed();
    outcome(
        mismatches == 0 && elapsed < Duration::from_secs(5),
        format!(
            "{reachable} reachable pairs, {unreachable} unreachable pairs, {mismatches} mismatches, {:.2}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn no_teleportation() -> Outcome {
    let mut sim = simulation(42);
    let stub = StubCognition::new(42);
    let mut positions: BTreeMap<AgentId, Position> = sim
        .state()
        .roster
        .agents
        .iter()
        .map(|e| (e.profile.id.clone(), e.state.position))
        .collect();
    let (mut violations, mut moves) = (0u64, 0u64);
    for _ in 0..1000 {
        for e in sim.tick(&stub) {
            if let EventKind::Moved { agent, from, to } = &e.kind {
                moves += 1;
                let prev = positions.insert(agent.clone(), *to).unwrap();
                if prev != *from || from.manhattan(*to) != 1 || !sim.state().map.is_walkable(*to) {
                    violations += 1;
                }
            }
        }
        for entry in &sim.state().roster.agents {
            if positions[&entry.profile.id] != entry.state.position {
                violations += 1;
            }
        }
    }
    outcome(violations == 0, format!("1000 ticks, {moves} moves, {violations} violations"))
}

/// Rebuilds positions, open conversations and cooldown expiry from the log
/// alone and checks every tick's conversation starts against an exhaustive
/// pair search.
fn social_trigger_oracle() -> Outcome {
    let mut sim = simulation(42);
    let initial = sim.state().clone();
    let events = sim.run(&StubCognition::new(42), 500);
    let radius = initial.config.proximity_radius;
    let cooldown = u64::from(initial.config.conversation_cooldown);

    let mut pos: BTreeMap<AgentId, Position> = initial
        .roster
        .agents
        .iter()
        .map(|e| (e.profile.id.clone(), e.state.position))
        .collect();
    let mut talking: BTreeSet<AgentId> = BTreeSet::new();
    let mut ended_at: BTreeMap<AgentId, u64> = BTreeMap::new();
    let mut by_tick: BTreeMap<u64, Vec<&SimEvent>> = BTreeMap::new();
    for e in &events {
        by_tick.entry(e.tick).or_default().push(e);
    }

    let (mut false_pos, mut false_neg, mut starts) = (0u32, 0u32, 0u32);
    for tick in 1..=500u64 {
        let tick_events = by_tick.remove(&tick).unwrap_or_default();
        let social_at = tick_events
            .iter()
            .position(|e| {
                matches!(
                    e.kind,
                    EventKind::ConversationStarted { .. }
                        | EventKind::DialogueTurn { .. }
                        | EventKind::ConversationEnded { .. }
                        | EventKind::UserExchange { .. }
                        | EventKind::MemoryCompressed { .. }
                )
            })
            .unwrap_or(tick_events.len());
        for e in &tick_events[..social_at] {
            if let EventKind::Moved { agent, to, .. } = &e.kind {
                pos.insert(agent.clone(), *to);
            }
        }

        let eligible: Vec<&AgentId> = pos
            .keys()
            .filter(|a| !talking.contains(*a) && ended_at.get(*a).is_none_or(|&te| tick >= te + cooldown))
            .collect();
        let mut candidates = Vec::new();
        for (i, a) in eligible.iter().enumerate() {
            for b in &eligible[i + 1..] {
                let d = pos[*a].manhattan(pos[*b]);
                if d <= radius {
                    candidates.push((d, (*a).clone(), (*b).clone()));
                }
            }
        }
        candidates.sort();
        let mut taken = BTreeSet::new();
        let mut expected = BTreeSet::new();
        for (d, a, b) in candidates {
            if taken.contains(&a) || taken.contains(&b) {
                continue;
            }
            taken.insert(a.clone());
            taken.insert(b.clone());
            expected.insert((a, b, d));
        }

        let mut actual = BTreeSet::new();
        for e in &tick_events[social_at..] {
            match &e.kind {
                EventKind::ConversationStarted {
                    initiator,
                    partner,
                    distance,
                    ..
                } => {
                    actual.insert((initiator.clone(), partner.clone(), *distance));
                    talking.insert(initiator.clone());
                    talking.insert(partner.clone());
                }
                EventKind::ConversationEnded { participants, .. } => {
                    for p in participants {
                        talking.remove(p);
                        ended_at.insert(p.clone(), tick);
                    }
                }
                _ => {}
            }
        }
        starts += actual.len() as u32;
        false_pos += actual.difference(&expected).count() as u32;
        false_neg += expected.difference(&actual).count() as u32;
    }
    outcome(
        false_pos == 0 && false_neg == 0 && starts > 0,
        format!("500 ticks, {starts} conversations, {false_pos} false positives, {false_neg} false negatives"),
    )
}

fn conservation_violations(state: &SimState) -> u32 {
    let mut bad = 0;
    for store in state.memories.values() {
        if !store.is_conserved() {
            bad += 1;
        }
        for track in Track::ALL {
            let mem = store.track(track);
            bad += mem.short_term.iter().filter(|e| e.track != track || e.kind.track() != track).count() as u32;
            bad += mem.long_term.iter().filter(|s| s.track != track).count() as u32;
        }
    }
    bad
}

fn isolation_and_conservation() -> Outcome {
    let mut sim = simulation(11);
    let initial = sim.state().clone();
    let stub = StubCognition::new(11);
    let agents = sim.state().roster.sorted_ids();
    let mut sessions: Vec<ChatSession> = agents
        .iter()
        .enumerate()
        .map(|(i, a)| ChatSession::new(SessionId(format!("s{}", i + 1)), a.clone()))
        .collect();
    let prompts = ["hello!", "what have you been doing today?", "tell me about yourself", "nice weather"];
    let mut log = Vec::new();
    let mut chats = 0u32;
    for tick in 0..500u64 {
        if tick % 3 == 0 {
            let s = &mut sessions[(tick as usize / 3) % agents.len()];
            s.user_message(prompts[(tick as usize / 7) % prompts.len()], &mut sim, &stub).unwrap();
            chats += 1;
        }
        log.extend(sim.tick(&stub));
    }

    // Re-apply the log and check accounting at every compression boundary.
    let mut replayed = initial;
    let (mut violations, mut boundaries) = (0u32, 0u32);
    for e in &log {
        while replayed.tick < e.tick {
            replayed.begin_tick();
        }
        replayed.apply(e).unwrap();
        if matches!(e.kind, EventKind::MemoryCompressed { .. }) {
            boundaries += 1;
            violations += conservation_violations(&replayed);
        }
    }
    violations += conservation_violations(sim.state());
    for a in &agents {
        let exchanges = log
            .iter()
            .filter(|e| matches!(&e.kind, EventKind::UserExchange { agent, .. } if agent == a))
            .count() as u64;
        if sim.state().memories[a].track(Track::Interaction).recorded != exchanges {
            violations += 1;
        }
    }
    outcome(
        violations == 0 && boundaries > 0,
        format!("500 ticks, {chats} chat exchanges, {boundaries} compression boundaries, {violations} violations"),
    )
}

fn compression_exactness() -> Outcome {
    let stub = StubCognition::new(0);
    let summarizer = CognitionSummarizer(&stub);
    let mut store = MemoryStore::new(AgentId::new("anty"), 10);
    let mut fired_at = Vec::new();
    for i in 1..=25u64 {
        let kind = [MemoryKind::Movement, MemoryKind::Arrival, MemoryKind::Activity][(i % 3) as usize];
        store
            .record_event(MemoryEvent::new(i, kind, format!("life event {i}"), vec![]))
            .unwrap();
        if !store.maybe_compress(&summarizer).unwrap().is_empty() {
            fired_at.push(i);
        }
    }
    let life = store.track(Track::LifeSpace);
    let ranges: Vec<(u64, u64)> = life.long_term.iter().map(|s| s.seq_range).collect();
    let buffered: Vec<u64> = life.short_term.iter().map(|e| e.seq).collect();
    let pass = fired_at == [10, 20] && ranges == [(1, 10), (11, 20)] && buffered == [21, 22, 23, 24, 25];
    outcome(
        pass,
        format!("compressed at events {fired_at:?}, ranges {ranges:?}, {} left buffered", buffered.len()),
    )
}

fn mode_invariance() -> Outcome {
    let make = |mode: ViewMode| {
        let engine = Engine::new(simulation(5), Arc::new(StubCognition::new(5)));
        engine.set_mode(mode);
        engine.start_manual().unwrap();
        engine
    };
    let obs = make(ViewMode::Observable);
    let unobs = make(ViewMode::Unobservable);
    for engine in [&obs, &unobs] {
        engine.advance(50).unwrap();
        let s = engine.open_session(&AgentId::new("anty")).unwrap();
        engine.send_message(&s, "hi Anty, how is the kitchen?").unwrap();
        engine.send_message(&s, "go to the garden").unwrap();
        engine.advance(150).unwrap();
    }
    let bytes = |e: &Engine| -> String { e.event_log().iter().map(|ev| ev.to_json_line() + "\n").collect() };
    let (a, b) = (bytes(&obs), bytes(&unobs));
    let log = obs.event_log();
    let obs_visible = log.iter().filter(|e| obs.envelope(e).visible).count();
    let unobs_visible: Vec<_> = log.iter().filter(|e| unobs.envelope(e).visible).collect();
    let rule_ok = obs_visible == log.len()
        && !unobs_visible.is_empty()
        && unobs_visible.iter().all(|e| e.kind.type_name() == "user_exchange")
        && log
            .iter()
            .filter(|e| e.kind.type_name() == "user_exchange")
            .count()
            == unobs_visible.len();
    outcome(
        a == b && rule_ok,
        format!(
            "{} events, logs {}, visible {}/{} observable vs {}/{} unobservable",
            log.len(),
            if a == b { "byte-identical" } else { "DIFFER" },
            obs_visible,
            log.len(),
            unobs_visible.len(),
            log.len()
        ),
    )
}

fn immediate_user_influence() -> Outcome {
    let mut sim = simulation(3);
    let stub = StubCognition::new(3);
    sim.run(&stub, 30);
    let mut session = ChatSession::new(SessionId("s1".into()), AgentId::new("anty"));
    let reply = session.user_message("go to the garden", &mut sim, &stub).unwrap();
    let tick = sim.tick_count() + 1;
    let events = sim.tick(&stub);
    let planned = events.iter().position(|e| {
        matches!(&e.kind, EventKind::Planned { agent, destination, user_influenced: true, .. }
            if agent.as_str() == "anty" && destination.as_str() == "garden")
    });
    let moved = events
        .iter()
        .position(|e| matches!(&e.kind, EventKind::Moved { agent, .. } if agent.as_str() == "anty"));
    let pass = reply.acted && matches!((planned, moved), (Some(p), Some(m)) if p < m);
    outcome(
        pass,
        format!(
            "accepted={}, planned(user_influenced) {} and first move {} in tick {tick}",
            reply.acted,
            if planned.is_some() { "present" } else { "MISSING" },
            if moved.is_some() { "present" } else { "MISSING" },
        ),
    )
}

fn determinism_and_replay(suite_started: Instant) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let args = |name: &str| RunArgs {
        spec: SpecArgs {
            seed: Some(7),
            ..SpecArgs::default()
        },
        ticks: 300,
        out: dir.path().join(name),
    };
    let (a, b) = (args("a.jsonl"), args("b.jsonl"));
    cmd_run(&a).unwrap();
    cmd_run(&b).unwrap();
    let identical = std::fs::read(&a.out).unwrap() == std::fs::read(&b.out).unwrap();
    let report = cmd_replay(&ReplayArgs { log: a.out.clone() }).unwrap();

    let stub = StubCognition::new(7);
    let mut whole = simulation(7);
    let full: Vec<String> = whole
        .run(&stub, 110)
        .iter()
        .filter(|e| e.tick > 100)
        .map(SimEvent::to_json_line)
        .collect();
    let mut first = simulation(7);
    first.run(&stub, 100);
    let mut resumed = from_bytes(&to_bytes(&first)).unwrap();
    let tail: Vec<String> = resumed.run(&stub, 10).iter().map(SimEvent::to_json_line).collect();
    let resume_ok = tail == full && resumed.digest() == whole.digest();

    let elapsed = suite_started.elapsed();
    outcome(
        identical && report.is_match() && resume_ok && elapsed < Duration::from_secs(60),
        format!(
            "logs {}, replay: {}, snapshot@100+10 {} ({} events), suite {:.2}s",
            if identical { "byte-identical" } else { "DIFFER" },
            report,
            if resume_ok { "matches uninterrupted suffix" } else { "DIVERGES" },
            tail.len(),
            elapsed.as_secs_f64()
        ),
    )
}

fn roster_conformance() -> Outcome {
    let map = WorldMap::default_map();
    let roster = default_roster(&map).unwrap();
    let occupations: BTreeSet<&str> = roster.agents.iter().map(|e| e.profile.occupation.as_str()).collect();
    let primaries: Vec<_> = roster.agents.iter().filter(|e| e.profile.primary).collect();
    let primary = roster.primary();
    let pass = roster.agents.len() == 5
        && occupations.len() == 5
        && primaries.len() == 1
        && primary.profile.occupation == "chef";
    outcome(
        pass,
        format!(
            "{} agents, {} distinct occupations, primary {} ({})",
            roster.agents.len(),
            occupations.len(),
            primary.profile.name,
            primary.profile.occupation
        ),
    )
}

fn main() {
    let started = Instant::now();
    let checks: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("pathfinding oracle equivalence", Box::new(pathfinding_oracle)),
        ("no teleportation", Box::new(no_teleportation)),
        ("social trigger oracle", Box::new(social_trigger_oracle)),
        ("dual-track isolation and conservation", Box::new(isolation_and_conservation)),
        ("compression exactness", Box::new(compression_exactness)),
        ("mode invariance", Box::new(mode_invariance)),
        ("immediate user influence", Box::new(immediate_user_influence)),
        ("determinism and replay", Box::new(move || determinism_and_replay(started))),
        ("roster conformance", Box::new(roster_conformance)),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(check))
            .unwrap_or_else(|p| {
                let msg = p
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                outcome(false, format!("panicked: {msg}"))
            });
        if !result.pass {
            failed += 1;
        }
        println!("{} {name}: {}", if result.pass { "PASS" } else { "FAIL" }, result.detail);
    }
    println!("acceptance: {} of 9 criteria passed in {:.2}s", 9 - failed, started.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}
