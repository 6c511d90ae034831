//! TCP and WebSocket listeners around a single [`ServerCore`] actor.
//!
//! One acceptor per listener. Every connection gets a reader task and a writer
//! task joined by a bounded queue; the actor only ever `try_send`s into those
//! queues, so a client that stops reading loses frames instead of stalling
//! the gateway path or its peers.

use std::collections::HashMap;
use std::io;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use futures_util::{SinkExt, StreamExt};
use greenhouse_core::protocol::{parse_hex, to_hex, Codec, DecodeError, Frame, FrameScanner, Layer};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{mpsc, oneshot, watch};
use tokio::task::JoinHandle;
use tokio_tungstenite::tungstenite::Message;

use crate::bridge::{is_json, BridgeReply, BridgeRequest};
use crate::engine::{EngineError, ServerCore};
use crate::history::{RecordClass, SessionEventKind};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    pub gateway_addr: SocketAddr,
    pub app_addr: SocketAddr,
    pub ws_addr: SocketAddr,
    /// Outbound frames buffered per session before new ones are dropped.
    pub session_queue: usize,
    pub command_queue: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            gateway_addr: ([0, 0, 0, 0], 8080).into(),
            app_addr: ([0, 0, 0, 0], 8088).into(),
            ws_addr: ([0, 0, 0, 0], 8090).into(),
            session_queue: 64,
            command_queue: 1024,
        }
    }
}

impl NetConfig {
    /// All three listeners on ephemeral loopback ports.
    pub fn loopback() -> Self {
        let any: SocketAddr = ([127, 0, 0, 1], 0).into();
        Self { gateway_addr: any, app_addr: any, ws_addr: any, ..Self::default() }
    }
}

#[derive(Debug, Error)]
pub enum NetError {
    #[error("cannot bind {name} listener on {addr}: {source}")]
    Bind { name: &'static str, addr: SocketAddr, source: io::Error },
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("server task failed: {0}")]
    Join(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServerMetrics {
    pub gateway_frames: u64,
    pub gateway_errors: u64,
    pub persist_latency_max_us: u64,
    pub persist_latency_total_us: u64,
    pub broadcasts: u64,
    /// Broadcast frames dropped because a session queue was full.
    pub session_drops: u64,
    pub app_sessions: usize,
    pub gateway_connected: bool,
}

impl ServerMetrics {
    pub fn mean_persist_latency_us(&self) -> u64 {
        self.persist_latency_total_us.checked_div(self.gateway_frames).unwrap_or(0)
    }
}

pub fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

#[derive(Debug, Clone)]
enum Outgoing {
    Frame(Arc<[u8]>),
    Text(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SessionKind {
    Tcp,
    WebSocket,
}

struct Session {
    tx: mpsc::Sender<Outgoing>,
    kind: SessionKind,
    user: Option<String>,
    peer: SocketAddr,
}

enum Cmd {
    GatewayUp { id: u64, peer: SocketAddr, tx: mpsc::Sender<Vec<u8>> },
    GatewayDown { id: u64 },
    GatewayFrame { frame: Frame, received: Instant },
    GatewayError { error: DecodeError, raw: Vec<u8> },
    AppUp { id: u64, peer: SocketAddr, kind: SessionKind, tx: mpsc::Sender<Outgoing> },
    AppDown { id: u64 },
    Auth { id: u64, username: String, password: String, reply: oneshot::Sender<bool> },
    Token { id: u64, token: String, reply: oneshot::Sender<bool> },
    AppFrame { id: u64, frame: Frame },
    History { id: u64, class: String, from_ms: u64, to_ms: u64, buckets: Option<usize> },
}

pub struct ServerHandle {
    pub gateway_addr: SocketAddr,
    pub app_addr: SocketAddr,
    pub ws_addr: SocketAddr,
    metrics: Arc<Mutex<ServerMetrics>>,
    shutdown: watch::Sender<bool>,
    actor: JoinHandle<Result<(), EngineError>>,
    acceptors: Vec<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn metrics(&self) -> ServerMetrics {
        *self.metrics.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Stops accepting, drains the command queue and flushes persistence.
    pub async fn shutdown(self) -> Result<(), NetError> {
        let _ = self.shutdown.send(true);
        for a in self.acceptors {
            let _ = a.await;
        }
        self.actor.await.map_err(|e| NetError::Join(e.to_string()))??;
        Ok(())
    }

    /// Resolves when the actor stops on its own (a fatal engine error).
    pub fn is_finished(&self) -> bool {
        self.actor.is_finished()
    }
}

async fn bind(name: &'static str, addr: SocketAddr) -> Result<TcpListener, NetError> {
    TcpListener::bind(addr).await.map_err(|source| NetError::Bind { name, addr, source })
}

/// Binds the three listeners and starts serving. Fails if any port is taken.
pub async fn start(core: ServerCore, config: NetConfig) -> Result<ServerHandle, NetError> {
    let gateway = bind("gateway", config.gateway_addr).await?;
    let app = bind("app", config.app_addr).await?;
    let ws = bind("websocket", config.ws_addr).await?;
    let local = |l: &TcpListener| l.local_addr().expect("bound listener has an address");
    let (gateway_addr, app_addr, ws_addr) = (local(&gateway), local(&app), local(&ws));
    tracing::info!(%gateway_addr, %app_addr, %ws_addr, "server listening");

    let (shutdown, shutdown_rx) = watch::channel(false);
    let (cmd_tx, cmd_rx) = mpsc::channel(config.command_queue.max(1));
    let metrics = Arc::new(Mutex::new(ServerMetrics::default()));
    let auto_period = Duration::from_millis(core.config().auto_period_ms.max(1));
    let actor = tokio::spawn(run_actor(core, cmd_rx, shutdown_rx.clone(), metrics.clone(), auto_period));

    let ids = Arc::new(std::sync::atomic::AtomicU64::new(1));
    let queue = config.session_queue.max(1);
    let mut acceptors = Vec::new();
    for (listener, role) in [(gateway, Role::Gateway), (app, Role::App), (ws, Role::WebSocket)] {
        let (cmd_tx, mut stop, ids) = (cmd_tx.clone(), shutdown_rx.clone(), ids.clone());
        acceptors.push(tokio::spawn(async move {
            loop {
                tokio::select! {
                    accepted = listener.accept() => match accepted {
                        Ok((stream, peer)) => {
                            let id = ids.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                            let _ = stream.set_nodelay(true);
                            let (cmd_tx, stop) = (cmd_tx.clone(), stop.clone());
                            tokio::spawn(async move {
                                match role {
                                    Role::Gateway => gateway_session(id, stream, peer, cmd_tx, stop).await,
                                    Role::App => app_session(id, stream, peer, cmd_tx, stop, queue).await,
                                    Role::WebSocket => ws_session(id, stream, peer, cmd_tx, stop, queue).await,
                                }
                            });
                        }
                        Err(e) => tracing::warn!(%e, "accept failed"),
                    },
                    _ = stop.changed() => break,
                }
            }
        }));
    }
    Ok(ServerHandle { gateway_addr, app_addr, ws_addr, metrics, shutdown, actor, acceptors })
}

#[derive(Debug, Clone, Copy)]
enum Role {
    Gateway,
    App,
    WebSocket,
}

struct Actor {
    core: ServerCore,
    sessions: HashMap<u64, Session>,
    gateway: Option<(u64, mpsc::Sender<Vec<u8>>)>,
    metrics: Arc<Mutex<ServerMetrics>>,
}

impl Actor {
    fn metrics(&self) -> std::sync::MutexGuard<'_, ServerMetrics> {
        self.metrics.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn dispatch(&mut self, fx: crate::engine::Effects) {
        if let Some((_, tx)) = &self.gateway {
            for bytes in fx.to_gateway {
                if tx.try_send(bytes).is_err() {
                    tracing::warn!("gateway queue full; instruction dropped");
                }
            }
        }
        let Some(b) = fx.broadcast else { return };
        let frame: Arc<[u8]> = b.bytes.into();
        let mut drops = 0;
        let mut closed = Vec::new();
        for (id, s) in self.sessions.iter().filter(|(_, s)| s.user.is_some()) {
            match s.tx.try_send(Outgoing::Frame(frame.clone())) {
                Ok(()) => {}
                Err(mpsc::error::TrySendError::Full(_)) => drops += 1,
                Err(mpsc::error::TrySendError::Closed(_)) => closed.push(*id),
            }
        }
        for id in closed {
            self.sessions.remove(&id);
        }
        let mut m = self.metrics();
        m.broadcasts += 1;
        m.session_drops += drops;
    }

    fn reply(&self, id: u64, text: impl FnOnce(SessionKind) -> String) {
        if let Some(s) = self.sessions.get(&id) {
            let _ = s.tx.try_send(Outgoing::Text(text(s.kind)));
        }
    }

    fn handle(&mut self, cmd: Cmd) -> Result<(), EngineError> {
        let now = now_ms();
        match cmd {
            Cmd::GatewayUp { id, peer, tx } => {
                if self.gateway.is_some() {
                    tracing::info!(%peer, "replacing gateway session");
                }
                self.gateway = Some((id, tx));
                self.metrics().gateway_connected = true;
                let fx = self.core.gateway_connected(Some(peer.to_string()), now)?;
                self.dispatch(fx);
            }
            Cmd::GatewayDown { id } => {
                if self.gateway.as_ref().is_some_and(|(g, _)| *g == id) {
                    self.gateway = None;
                    self.metrics().gateway_connected = false;
                    self.core.gateway_disconnected(now)?;
                }
            }
            Cmd::GatewayFrame { frame, received } => {
                let result = self.core.on_gateway_frame(&frame, now);
                let latency = received.elapsed().as_micros() as u64;
                {
                    let mut m = self.metrics();
                    m.gateway_frames += 1;
                    m.persist_latency_total_us += latency;
                    m.persist_latency_max_us = m.persist_latency_max_us.max(latency);
                }
                match result {
                    Ok(fx) => self.dispatch(fx),
                    Err(EngineError::UnexpectedFrame(kind)) => tracing::warn!(?kind, "unexpected gateway frame"),
                    Err(e) => return Err(e),
                }
            }
            Cmd::GatewayError { error, raw } => {
                self.metrics().gateway_errors += 1;
                self.core.on_gateway_error(&error, &raw, now)?;
            }
            Cmd::AppUp { id, peer, kind, tx } => {
                self.sessions.insert(id, Session { tx, kind, user: None, peer });
                self.metrics().app_sessions = self.sessions.len();
                self.core.session_event(SessionEventKind::AppConnected, None, Some(peer.to_string()), now)?;
            }
            Cmd::AppDown { id } => {
                if let Some(s) = self.sessions.remove(&id) {
                    self.metrics().app_sessions = self.sessions.len();
                    let event = SessionEventKind::AppDisconnected;
                    self.core.session_event(event, s.user.as_deref(), Some(s.peer.to_string()), now)?;
                }
            }
            Cmd::Auth { id, username, password, reply } => {
                let peer = self.sessions.get(&id).map(|s| s.peer.to_string());
                let result = self.core.authenticate(&username, &password, peer, now);
                let ok = match result {
                    Ok(token) => {
                        self.reply(id, |kind| match kind {
                            SessionKind::Tcp => format!("OK {token}\n"),
                            SessionKind::WebSocket => {
                                BridgeReply::Auth { ok: true, token: Some(token.clone()), error: None }.to_json()
                            }
                        });
                        if let Some(s) = self.sessions.get_mut(&id) {
                            s.user = Some(username);
                        }
                        true
                    }
                    Err(EngineError::Auth(e)) => {
                        self.reply(id, |kind| match kind {
                            SessionKind::Tcp => format!("ERR {}\n", e.code()),
                            SessionKind::WebSocket => {
                                BridgeReply::Auth { ok: false, token: None, error: Some(e.code().into()) }.to_json()
                            }
                        });
                        false
                    }
                    Err(e) => return Err(e),
                };
                let _ = reply.send(ok);
            }
            Cmd::Token { id, token, reply } => {
                let user = self.core.validate_token(&token).map(str::to_string);
                let ok = user.is_some();
                self.reply(id, |kind| match (kind, ok) {
                    (SessionKind::Tcp, true) => format!("OK {token}\n"),
                    (SessionKind::Tcp, false) => "ERR InvalidCredentials\n".into(),
                    (SessionKind::WebSocket, ok) => BridgeReply::Auth {
                        ok,
                        token: ok.then(|| token.clone()),
                        error: (!ok).then(|| "InvalidCredentials".into()),
                    }
                    .to_json(),
                });
                if let Some(s) = self.sessions.get_mut(&id) {
                    s.user = s.user.take().or(user);
                }
                let _ = reply.send(ok);
            }
            Cmd::AppFrame { id, frame } => {
                let user = self.sessions.get(&id).and_then(|s| s.user.clone());
                match self.core.on_app_frame(user.as_deref(), &frame, now) {
                    Ok(fx) => self.dispatch(fx),
                    Err(e @ (EngineError::Unauthenticated | EngineError::UnexpectedFrame(_))) => {
                        let msg = e.to_string();
                        self.reply(id, |kind| match kind {
                            SessionKind::Tcp => format!("ERR {msg}\n"),
                            SessionKind::WebSocket => BridgeReply::Error { error: msg.clone() }.to_json(),
                        });
                    }
                    Err(e) => return Err(e),
                }
            }
            Cmd::History { id, class, from_ms, to_ms, buckets } => {
                let authed = self.sessions.get(&id).is_some_and(|s| s.user.is_some());
                let reply = match (authed, RecordClass::parse(&class)) {
                    (false, _) => BridgeReply::Error { error: "Unauthenticated".into() },
                    (true, None) => BridgeReply::Error { error: format!("unknown record class {class}") },
                    (true, Some(c)) => BridgeReply::History {
                        class,
                        records: self.core.query_history(c, from_ms, to_ms),
                        buckets: buckets.map(|n| self.core.history_buckets(c, from_ms, to_ms, n)),
                    },
                };
                self.reply(id, |_| reply.to_json());
            }
        }
        Ok(())
    }
}

async fn run_actor(
    core: ServerCore,
    mut rx: mpsc::Receiver<Cmd>,
    mut shutdown: watch::Receiver<bool>,
    metrics: Arc<Mutex<ServerMetrics>>,
    auto_period: Duration,
) -> Result<(), EngineError> {
    let mut actor = Actor { core, sessions: HashMap::new(), gateway: None, metrics };
    let mut auto = tokio::time::interval_at(tokio::time::Instant::now() + auto_period, auto_period);
    auto.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    loop {
        tokio::select! {
            cmd = rx.recv() => match cmd {
                Some(cmd) => actor.handle(cmd)?,
                None => break,
            },
            _ = auto.tick() => {
                let fx = actor.core.auto_control_cycle(now_ms())?;
                actor.dispatch(fx);
            }
            _ = shutdown.changed() => break,
        }
    }
    rx.close();
    while let Ok(cmd) = rx.try_recv() {
        actor.handle(cmd)?;
    }
    actor.sessions.clear();
    actor.gateway = None;
    actor.core.shutdown()?;
    tracing::info!("server stopped");
    Ok(())
}

async fn gateway_session(
    id: u64,
    stream: TcpStream,
    peer: SocketAddr,
    cmd: mpsc::Sender<Cmd>,
    mut stop: watch::Receiver<bool>,
) {
    let (mut rd, mut wr) = stream.into_split();
    let (tx, mut rx) = mpsc::channel::<Vec<u8>>(64);
    if cmd.send(Cmd::GatewayUp { id, peer, tx }).await.is_err() {
        return;
    }
    let writer = tokio::spawn(async move {
        while let Some(bytes) = rx.recv().await {
            if wr.write_all(&bytes).await.is_err() {
                break;
            }
        }
    });
    let mut scanner = FrameScanner::new(Codec::for_layer(Layer::Network));
    let mut buf = vec![0u8; 4096];
    loop {
        let n = tokio::select! {
            r = rd.read(&mut buf) => match r {
                Ok(0) | Err(_) => break,
                Ok(n) => n,
            },
            _ = stop.changed() => break,
        };
        let received = Instant::now();
        let out = scanner.push(&buf[..n]);
        for error in out.errors {
            let _ = cmd.send(Cmd::GatewayError { error, raw: buf[..n].to_vec() }).await;
        }
        for frame in out.frames {
            let _ = cmd.send(Cmd::GatewayFrame { frame, received }).await;
        }
    }
    let _ = cmd.send(Cmd::GatewayDown { id }).await;
    writer.abort();
    tracing::info!(%peer, "gateway disconnected");
}

/// Text handshake (`AUTH <user> <password>` or `TOKEN <token>`, one per
/// line) followed by raw application-layer frames in both directions.
async fn app_session(
    id: u64,
    stream: TcpStream,
    peer: SocketAddr,
    cmd: mpsc::Sender<Cmd>,
    mut stop: watch::Receiver<bool>,
    queue: usize,
) {
    let (mut rd, mut wr) = stream.into_split();
    let (tx, mut rx) = mpsc::channel::<Outgoing>(queue);
    if cmd.send(Cmd::AppUp { id, peer, kind: SessionKind::Tcp, tx: tx.clone() }).await.is_err() {
        return;
    }
    let writer = tokio::spawn(async move {
        while let Some(out) = rx.recv().await {
            let r = match out {
                Outgoing::Frame(b) => wr.write_all(&b).await,
                Outgoing::Text(t) => wr.write_all(t.as_bytes()).await,
            };
            if r.is_err() {
                break;
            }
        }
    });
    let mut scanner = FrameScanner::new(Codec::for_layer(Layer::Application));
    let mut pending: Vec<u8> = Vec::new();
    let mut authed = false;
    let mut buf = vec![0u8; 4096];
    'read: loop {
        let n = tokio::select! {
            r = rd.read(&mut buf) => match r {
                Ok(0) | Err(_) => break,
                Ok(n) => n,
            },
            _ = stop.changed() => break,
        };
        pending.extend_from_slice(&buf[..n]);
        while !authed && !pending.is_empty() {
            if pending[0] == greenhouse_core::protocol::codes::HEADER {
                // frames before login: let the engine record the rejection, then hang up
                for frame in scanner.push(&std::mem::take(&mut pending)).frames {
                    let _ = cmd.send(Cmd::AppFrame { id, frame }).await;
                }
                break 'read;
            }
            let Some(eol) = pending.iter().position(|&b| b == b'\n') else { break };
            let line: Vec<u8> = pending.drain(..=eol).collect();
            let line = String::from_utf8_lossy(&line);
            let mut words = line.split_whitespace();
            let (reply, rx) = oneshot::channel();
            let sent = match (words.next(), words.next(), words.next()) {
                (Some("AUTH"), Some(u), Some(p)) => {
                    cmd.send(Cmd::Auth { id, username: u.into(), password: p.into(), reply }).await
                }
                (Some("TOKEN"), Some(t), None) => cmd.send(Cmd::Token { id, token: t.into(), reply }).await,
                _ => {
                    let _ = tx.send(Outgoing::Text("ERR Unauthenticated\n".into())).await;
                    continue;
                }
            };
            if sent.is_err() {
                break 'read;
            }
            authed = rx.await.unwrap_or(false);
        }
        if authed && !pending.is_empty() {
            let out = scanner.push(&std::mem::take(&mut pending));
            for error in out.errors {
                tracing::debug!(%peer, %error, "app frame rejected");
            }
            for frame in out.frames {
                let _ = cmd.send(Cmd::AppFrame { id, frame }).await;
            }
        }
    }
    let _ = cmd.send(Cmd::AppDown { id }).await;
    drop(tx);
    let _ = writer.await;
}

async fn ws_session(
    id: u64,
    stream: TcpStream,
    peer: SocketAddr,
    cmd: mpsc::Sender<Cmd>,
    mut stop: watch::Receiver<bool>,
    queue: usize,
) {
    let ws = match tokio_tungstenite::accept_async(stream).await {
        Ok(ws) => ws,
        Err(e) => {
            tracing::debug!(%peer, %e, "websocket handshake failed");
            return;
        }
    };
    let (mut sink, mut source) = ws.split();
    let (tx, mut rx) = mpsc::channel::<Outgoing>(queue);
    if cmd.send(Cmd::AppUp { id, peer, kind: SessionKind::WebSocket, tx: tx.clone() }).await.is_err() {
        return;
    }
    let writer = tokio::spawn(async move {
        while let Some(out) = rx.recv().await {
            let msg = match out {
                Outgoing::Frame(b) => Message::text(to_hex(&b)),
                Outgoing::Text(t) => Message::text(t),
            };
            if sink.send(msg).await.is_err() {
                break;
            }
        }
        let _ = sink.close().await;
    });
    let codec = Codec::for_layer(Layer::Application);
    loop {
        let msg = tokio::select! {
            m = source.next() => match m {
                Some(Ok(m)) => m,
                _ => break,
            },
            _ = stop.changed() => break,
        };
        let bytes = match msg {
            Message::Text(text) if is_json(text.as_str()) => {
                let request = match serde_json::from_str::<BridgeRequest>(text.as_str()) {
                    Ok(r) => r,
                    Err(e) => {
                        let _ = tx.try_send(Outgoing::Text(BridgeReply::Error { error: e.to_string() }.to_json()));
                        continue;
                    }
                };
                let (reply, rx) = oneshot::channel();
                let c = match request {
                    BridgeRequest::Auth { username, password } => Cmd::Auth { id, username, password, reply },
                    BridgeRequest::Token { token } => Cmd::Token { id, token, reply },
                    BridgeRequest::History { class, from_ms, to_ms, buckets } => {
                        drop(reply);
                        Cmd::History { id, class, from_ms, to_ms, buckets }
                    }
                };
                if cmd.send(c).await.is_err() {
                    break;
                }
                let _ = rx.await;
                continue;
            }
            Message::Text(text) => match parse_hex(text.as_str()) {
                Some(b) => b,
                None => {
                    let error = "frame text is not hex".to_string();
                    let _ = tx.try_send(Outgoing::Text(BridgeReply::Error { error }.to_json()));
                    continue;
                }
            },
            Message::Binary(b) => b.to_vec(),
            Message::Close(_) => break,
            _ => continue,
        };
        match codec.decode(&bytes) {
            Ok(frame) => {
                let _ = cmd.send(Cmd::AppFrame { id, frame }).await;
            }
            Err(e) => {
                let _ = tx.try_send(Outgoing::Text(BridgeReply::Error { error: e.to_string() }.to_json()));
            }
        }
    }
    let _ = cmd.send(Cmd::AppDown { id }).await;
    drop(tx);
    let _ = writer.await;
}
