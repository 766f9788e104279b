use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use futures::StreamExt;
use lifespace_core::cognition::{
    CognitionError, DialogueRequest, DialogueTurn, PlanDecision, PlanRequest, ReplyRequest, UserReply,
};
use lifespace_core::{default_roster, Cognition, MemoryEvent, SimConfig, SimEvent, Simulation, StubCognition, WorldMap};
use lifespace_service::{serve, Engine, EngineError, StateView, StreamEnvelope, ViewMode};
use serde_json::{json, Value};
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio_tungstenite::tungstenite::Message;

fn engine_with(config: SimConfig, cognition: Arc<dyn Cognition>) -> Engine {
    let map = WorldMap::default_map();
    let roster = default_roster(&map).unwrap();
    Engine::new(Simulation::new(config, map, roster).unwrap(), cognition)
}

fn engine() -> Engine {
    engine_with(
        SimConfig {
            tick_ms: 0,
            ..SimConfig::default()
        },
        Arc::new(StubCognition::new(42)),
    )
}

struct Server {
    addr: SocketAddr,
    http: reqwest::Client,
    _stop: oneshot::Sender<()>,
}

impl Server {
    async fn start(engine: Engine) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap();
        let (tx, rx) = oneshot::channel::<()>();
        tokio::spawn(serve(engine, listener, async {
            let _ = rx.await;
        }));
        Self {
            addr,
            http: reqwest::Client::new(),
            _stop: tx,
        }
    }

    fn url(&self, path: &str) -> String {
        format!("http://{}{path}", self.addr)
    }

    async fn get(&self, path: &str) -> (u16, Value) {
        let r = self.http.get(self.url(path)).send().await.unwrap();
        (r.status().as_u16(), r.json().await.unwrap())
    }

    async fn post(&self, path: &str, body: Value) -> (u16, Value) {
        let r = self.http.post(self.url(path)).json(&body).send().await.unwrap();
        (r.status().as_u16(), r.json().await.unwrap())
    }

    async fn delete(&self, path: &str) -> (u16, Value) {
        let r = self.http.delete(self.url(path)).send().await.unwrap();
        (r.status().as_u16(), r.json().await.unwrap())
    }

    /// Reads envelopes from `since` until one with `until_seq` arrives.
    async fn envelopes(&self, since: u64, until_seq: u64) -> Vec<StreamEnvelope> {
        let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{}/v1/events?since={since}", self.addr))
            .await
            .unwrap();
        let mut out = Vec::new();
        if until_seq <= since {
            return out;
        }
        while let Some(msg) = tokio::time::timeout(Duration::from_secs(10), ws.next())
            .await
            .expect("stream stalled")
        {
            let Message::Text(text) = msg.unwrap() else { continue };
            let value: Value = serde_json::from_str(&text).unwrap();
            if value.get("event").is_some() {
                let env: StreamEnvelope = serde_json::from_value(value).unwrap();
                let done = env.event.seq >= until_seq;
                out.push(env);
                if done {
                    break;
                }
            }
        }
        out
    }
}

fn last_seq(engine: &Engine) -> u64 {
    engine.get_state().unwrap().last_seq
}

#[tokio::test]
async fn state_requires_started_engine() {
    let engine = engine();
    assert!(matches!(engine.get_state(), Err(EngineError::NotStarted)));
    let server = Server::start(engine.clone()).await;
    let (status, body) = server.get("/v1/state").await;
    assert_eq!(status, 503);
    assert!(body["error"].as_str().unwrap().contains("not been started"));

    engine.start_manual().unwrap();
    let (status, body) = server.get("/v1/state").await;
    assert_eq!(status, 200);
    let view: StateView = serde_json::from_value(body).unwrap();
    assert_eq!(view.tick, 0);
    for agent in &view.agents {
        let home = view.scenes.iter().find(|s| s.id == agent.home_scene).unwrap();
        assert_eq!(agent.position, home.anchor, "{} not at home", agent.id);
    }

    engine.advance(50).unwrap();
    let (_, body) = server.get("/v1/state").await;
    assert_eq!(body["tick"], 50);
}

#[tokio::test]
async fn stream_delivers_full_log_in_order() {
    let engine = engine();
    engine.start_manual().unwrap();
    engine.advance(30).unwrap();
    let server = Server::start(engine.clone()).await;
    let last = last_seq(&engine);
    let got = server.envelopes(0, last).await;
    let log = engine.event_log();
    assert_eq!(got.len(), log.len());
    for (env, event) in got.iter().zip(&log) {
        assert_eq!(&env.event, event);
        assert!(env.visible);
    }
}

#[tokio::test]
async fn resubscribing_has_no_gaps_or_duplicates() {
    let engine = engine();
    engine.start_manual().unwrap();
    let server = Server::start(engine.clone()).await;
    engine.advance(10).unwrap();
    let mut seen: Vec<SimEvent> = Vec::new();
    let mut cursor = 0;
    for _ in 0..4 {
        let target = last_seq(&engine);
        let batch = server.envelopes(cursor, target).await;
        cursor = batch.last().map_or(cursor, |e| e.event.seq);
        seen.extend(batch.into_iter().map(|e| e.event));
        engine.advance(7).unwrap();
    }
    let target = last_seq(&engine);
    seen.extend(server.envelopes(cursor, target).await.into_iter().map(|e| e.event));
    assert_eq!(seen, engine.event_log());
}

#[tokio::test]
async fn live_events_follow_the_backlog() {
    // An identical twin tells us where the log will end.
    let twin = engine();
    twin.start_manual().unwrap();
    twin.advance(25).unwrap();
    let target = last_seq(&twin);

    let engine = engine();
    engine.start_manual().unwrap();
    engine.advance(5).unwrap();
    let server = Server::start(engine.clone()).await;
    let ticker = engine.clone();
    let handle = tokio::task::spawn_blocking(move || {
        std::thread::sleep(Duration::from_millis(100));
        ticker.advance(20).unwrap();
    });
    let got = server.envelopes(0, target).await;
    handle.await.unwrap();
    let got: Vec<SimEvent> = got.into_iter().map(|e| e.event).collect();
    assert_eq!(got, twin.event_log());
}

#[tokio::test]
async fn unobservable_mode_hides_everything_but_exchanges() {
    let engine = engine();
    engine.start_manual().unwrap();
    let server = Server::start(engine.clone()).await;
    let (status, body) = server.post("/v1/mode", json!({"mode": "unobservable"})).await;
    assert_eq!((status, body["mode"].as_str()), (200, Some("unobservable")));

    let (_, opened) = server.post("/v1/sessions", json!({"agent": "anty"})).await;
    let session = opened["session"].as_str().unwrap().to_owned();
    let (status, _) = server
        .post(&format!("/v1/sessions/{session}/messages"), json!({"text": "hello there"}))
        .await;
    assert_eq!(status, 200);
    engine.advance(20).unwrap();

    let got = server.envelopes(0, last_seq(&engine)).await;
    assert!(got.iter().any(|e| e.event.kind.type_name() == "user_exchange" && e.visible));
    for env in &got {
        assert_eq!(env.visible, env.event.kind.type_name() == "user_exchange", "{:?}", env.event);
    }

    // Toggling back restores full visibility for the same log.
    server.post("/v1/mode", json!({"mode": "observable"})).await;
    assert!(server.envelopes(0, last_seq(&engine)).await.iter().all(|e| e.visible));
    assert_eq!(engine.mode_log().len(), 2);
}

#[tokio::test]
async fn mode_does_not_touch_the_backend_log() {
    let a = engine();
    let b = engine();
    b.set_mode(ViewMode::Unobservable);
    a.start_manual().unwrap();
    b.start_manual().unwrap();
    a.advance(120).unwrap();
    for _ in 0..4 {
        b.advance(30).unwrap();
        let flip = if b.mode() == ViewMode::Observable {
            ViewMode::Unobservable
        } else {
            ViewMode::Observable
        };
        b.set_mode(flip);
    }
    let la: Vec<String> = a.event_log().iter().map(SimEvent::to_json_line).collect();
    let lb: Vec<String> = b.event_log().iter().map(SimEvent::to_json_line).collect();
    assert_eq!(la, lb);
    assert_eq!(a.digest(), b.digest());
}

#[tokio::test]
async fn chat_round_trip_and_user_influence() {
    let engine = engine();
    engine.start_manual().unwrap();
    let server = Server::start(engine.clone()).await;
    let (status, opened) = server.post("/v1/sessions", json!({"agent": "anty"})).await;
    assert_eq!(status, 201);
    let session = opened["session"].as_str().unwrap().to_owned();

    let (status, reply) = server
        .post(&format!("/v1/sessions/{session}/messages"), json!({"text": "Why not go to the garden?"}))
        .await;
    assert_eq!(status, 200, "{reply}");
    assert_eq!(reply["acted"], true);
    assert!(reply["reply"].as_str().unwrap().contains("Garden"));

    let events = engine.advance(1).unwrap();
    let anty: Vec<&SimEvent> = events
        .iter()
        .filter(|e| e.kind.agents().iter().any(|a| a.as_str() == "anty"))
        .collect();
    let planned = anty.iter().position(|e| e.kind.type_name() == "planned").unwrap();
    let moved = anty.iter().position(|e| e.kind.type_name() == "moved").unwrap();
    assert!(planned < moved);
    let json = serde_json::to_value(anty[planned]).unwrap();
    assert_eq!(json["data"]["user_influenced"], true);
    assert_eq!(json["data"]["destination"], "garden");

    let (_, info) = server.get(&format!("/v1/sessions/{session}")).await;
    assert_eq!(info["transcript"].as_array().unwrap().len(), 2);
    let (status, closed) = server.delete(&format!("/v1/sessions/{session}")).await;
    assert_eq!(status, 200);
    assert_eq!(closed["transcript"].as_array().unwrap().len(), 2);
    let (status, _) = server
        .post(&format!("/v1/sessions/{session}/messages"), json!({"text": "still there?"}))
        .await;
    assert_eq!(status, 409);
}

#[tokio::test]
async fn chat_errors_map_to_statuses() {
    let engine = engine();
    let server = Server::start(engine.clone()).await;
    let (status, _) = server.post("/v1/sessions", json!({"agent": "anty"})).await;
    assert_eq!(status, 503);
    engine.start_manual().unwrap();
    let (status, _) = server.post("/v1/sessions", json!({"agent": "zed"})).await;
    assert_eq!(status, 404);
    let (status, _) = server.post("/v1/sessions/s99/messages", json!({"text": "hi"})).await;
    assert_eq!(status, 404);
    let (_, opened) = server.post("/v1/sessions", json!({"agent": "barr"})).await;
    let session = opened["session"].as_str().unwrap().to_owned();
    let (status, body) = server
        .post(&format!("/v1/sessions/{session}/messages"), json!({"text": "   "}))
        .await;
    assert_eq!(status, 400);
    assert_eq!(body["retryable"], false);
}

struct NoReplies(StubCognition);

impl Cognition for NoReplies {
    fn plan(&self, req: &PlanRequest<'_>) -> Result<PlanDecision, CognitionError> {
        self.0.plan(req)
    }
    fn dialogue_turn(&self, req: &DialogueRequest<'_>) -> Result<DialogueTurn, CognitionError> {
        self.0.dialogue_turn(req)
    }
    fn summarize(&self, events: &[MemoryEvent]) -> Result<String, CognitionError> {
        self.0.summarize(events)
    }
    fn reply(&self, _: &ReplyRequest<'_>) -> Result<UserReply, CognitionError> {
        Err(CognitionError::Unavailable {
            attempts: 3,
            reason: "timed out".into(),
        })
    }
}

#[tokio::test]
async fn provider_outage_is_retryable_and_leaves_no_trace() {
    let engine = engine_with(
        SimConfig {
            tick_ms: 0,
            ..SimConfig::default()
        },
        Arc::new(NoReplies(StubCognition::new(1))),
    );
    engine.start_manual().unwrap();
    let server = Server::start(engine.clone()).await;
    let (_, opened) = server.post("/v1/sessions", json!({"agent": "anty"})).await;
    let session = opened["session"].as_str().unwrap().to_owned();
    let (status, body) = server
        .post(&format!("/v1/sessions/{session}/messages"), json!({"text": "hello"}))
        .await;
    assert_eq!(status, 503);
    assert_eq!(body["retryable"], true);
    let (_, info) = server.get(&format!("/v1/sessions/{session}")).await;
    assert!(info["transcript"].as_array().unwrap().is_empty());
    let events = engine.advance(1).unwrap();
    assert!(events.iter().all(|e| e.kind.type_name() != "user_exchange"));
}

#[tokio::test]
async fn snapshot_save_and_load_over_http() {
    let engine = engine();
    engine.start_manual().unwrap();
    engine.advance(40).unwrap();
    let server = Server::start(engine.clone()).await;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("snap.json");

    let (status, saved) = server.post("/v1/snapshot", json!({"path": path})).await;
    assert_eq!(status, 200, "{saved}");
    assert_eq!(saved["tick"], 40);
    let digest = saved["digest"].as_str().unwrap().to_owned();

    engine.advance(15).unwrap();
    assert_ne!(engine.digest(), digest);
    let (status, loaded) = server.post("/v1/snapshot/load", json!({"path": path})).await;
    assert_eq!(status, 200);
    assert_eq!(loaded["digest"], digest.as_str());
    assert_eq!(engine.get_state().unwrap().tick, 40);

    // Seq continues from the snapshot.
    let events = engine.advance(1).unwrap();
    assert_eq!(events[0].seq, saved["last_seq"].as_u64().unwrap() + 1);

    std::fs::write(&path, "{\"format\":\"lifespace-snapshot/1\",\"simulation\":{\"state\":").unwrap();
    let (status, body) = server.post("/v1/snapshot/load", json!({"path": path})).await;
    assert_eq!(status, 422);
    assert!(body["error"].as_str().unwrap().contains("corrupt snapshot"));
}

#[tokio::test]
async fn free_running_engine_ticks_until_stopped() {
    let engine = engine_with(
        SimConfig {
            tick_ms: 2,
            ..SimConfig::default()
        },
        Arc::new(StubCognition::new(42)),
    );
    engine.start().unwrap();
    assert!(matches!(engine.start(), Err(EngineError::AlreadyStarted)));
    let server = Server::start(engine.clone()).await;
    let mut tick = 0;
    for _ in 0..200 {
        tokio::time::sleep(Duration::from_millis(10)).await;
        tick = server.get("/v1/state").await.1["tick"].as_u64().unwrap();
        if tick >= 5 {
            break;
        }
    }
    assert!(tick >= 5);
    tokio::task::spawn_blocking(move || engine.stop()).await.unwrap();
}
