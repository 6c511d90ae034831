use std::io::{ErrorKind, Read, Write};
use std::net::TcpStream;
use std::thread;
use std::time::{Duration, Instant};

use futures_util::{SinkExt, StreamExt};
use greenhouse_core::protocol::{to_hex, Codec, Frame, FrameScanner, Layer, LocationReadings};
use greenhouse_core::{Actuator, ActuatorBank};
use greenhouse_server::client::AppClient;
use greenhouse_server::engine::{ServerConfig, ServerCore};
use greenhouse_server::history::RecordClass;
use greenhouse_server::net::{start, NetConfig, ServerHandle};
use serde_json::Value;
use tokio::runtime::Runtime;
use tokio_tungstenite::tungstenite::Message;

struct Harness {
    rt: Runtime,
    handle: Option<ServerHandle>,
    _dir: tempfile::TempDir,
}

impl Harness {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let config = ServerConfig { data_dir: dir.path().to_path_buf(), ..ServerConfig::default() };
        let (mut core, _) = ServerCore::open(config).unwrap();
        core.add_user("op", "secret", 0).unwrap();
        let rt = Runtime::new().unwrap();
        let handle = rt.block_on(start(core, NetConfig::loopback())).unwrap();
        Self { rt, handle: Some(handle), _dir: dir }
    }

    fn handle(&self) -> &ServerHandle {
        self.handle.as_ref().unwrap()
    }

    fn gateway(&self) -> TcpStream {
        let s = TcpStream::connect(self.handle().gateway_addr).unwrap();
        s.set_nodelay(true).unwrap();
        wait_until(|| self.handle().metrics().gateway_connected);
        s
    }

    fn login(&self) -> AppClient {
        AppClient::login(self.handle().app_addr, "op", "secret").unwrap()
    }
}

impl Drop for Harness {
    fn drop(&mut self) {
        if let Some(h) = self.handle.take() {
            self.rt.block_on(h.shutdown()).unwrap();
        }
    }
}

fn wait_until(cond: impl Fn() -> bool) {
    let deadline = Instant::now() + Duration::from_secs(5);
    while !cond() {
        assert!(Instant::now() < deadline, "condition not reached in 5 s");
        thread::sleep(Duration::from_millis(5));
    }
}

fn push(gateway: &mut TcpStream, temperature: i8, gears: ActuatorBank) {
    let codec = Codec::for_layer(Layer::Network);
    let r = LocationReadings { temperature: [temperature; 6], humidity: [55; 6], ..Default::default() };
    let mut bytes = codec.encode(&Frame::NetSensorData(r)).unwrap();
    bytes.extend(codec.encode(&Frame::NetExecutorStatus(gears)).unwrap());
    gateway.write_all(&bytes).unwrap();
}

fn read_network_frames(stream: &mut TcpStream, want: usize, timeout: Duration) -> Vec<Frame> {
    let mut scanner = FrameScanner::new(Codec::for_layer(Layer::Network));
    let mut frames = Vec::new();
    let mut buf = [0u8; 1024];
    let deadline = Instant::now() + timeout;
    stream.set_read_timeout(Some(Duration::from_millis(50))).unwrap();
    while frames.len() < want && Instant::now() < deadline {
        match stream.read(&mut buf) {
            Ok(0) => break,
            Ok(n) => frames.extend(scanner.push(&buf[..n]).frames),
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
            Err(e) => panic!("{e}"),
        }
    }
    frames
}

type Ws = tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<tokio::net::TcpStream>>;

async fn next_text(ws: &mut Ws) -> String {
    loop {
        let msg = tokio::time::timeout(Duration::from_secs(5), ws.next()).await.expect("reply timeout").unwrap().unwrap();
        if let Message::Text(t) = msg {
            return t.to_string();
        }
    }
}

fn temperatures(frames: &[Frame]) -> Vec<i8> {
    frames
        .iter()
        .map(|f| match f {
            Frame::AppData(d) => d.temperature,
            other => panic!("unexpected {other:?}"),
        })
        .collect()
}

#[test]
fn pushes_fan_out_once_to_every_reader_despite_a_stalled_client() {
    let h = Harness::new();
    let mut gateway = h.gateway();
    let _stalled = h.login();
    let sent: Vec<i8> = (0..100).map(|i| (i % 50 - 10) as i8).collect();
    let readers: Vec<_> = (0..10)
        .map(|_| {
            let mut c = h.login();
            thread::spawn(move || c.read_frames(100, Duration::from_secs(10)).unwrap())
        })
        .collect();
    wait_until(|| h.handle().metrics().app_sessions == 11);
    for &t in &sent {
        push(&mut gateway, t, ActuatorBank::OFF);
        thread::sleep(Duration::from_millis(1));
    }
    for r in readers {
        let (frames, errors) = r.join().unwrap();
        assert!(errors.is_empty(), "{errors:?}");
        assert_eq!(temperatures(&frames), sent);
    }
    let m = h.handle().metrics();
    assert_eq!(m.broadcasts, 100);
    assert_eq!(m.gateway_frames, 200);
    assert!(m.persist_latency_max_us < 50_000, "{m:?}");
}

#[test]
fn manual_instruction_reaches_the_gateway_and_the_next_broadcast_carries_it() {
    let h = Harness::new();
    let mut gateway = h.gateway();
    let mut app = h.login();
    let cool = ActuatorBank::OFF.with(Actuator::Cooling, 4);
    app.send_frame(&Frame::AppManualInstruction(cool)).unwrap();
    assert_eq!(read_network_frames(&mut gateway, 1, Duration::from_secs(5)), vec![Frame::NetInstruction(cool)]);
    push(&mut gateway, 22, cool);
    let (frames, _) = app.read_frames(1, Duration::from_secs(5)).unwrap();
    let [Frame::AppData(d)] = frames.as_slice() else { panic!("{frames:?}") };
    assert_eq!(d.gears.get(Actuator::Cooling), 4);
    assert_eq!(d.temperature, 22);
}

#[test]
fn instruction_sent_before_the_gateway_connects_is_delivered_on_connect() {
    let h = Harness::new();
    let mut app = h.login();
    let led = ActuatorBank::OFF.with(Actuator::Led, 2);
    app.send_frame(&Frame::AppManualInstruction(led)).unwrap();
    thread::sleep(Duration::from_millis(50));
    let mut gateway = h.gateway();
    assert_eq!(read_network_frames(&mut gateway, 1, Duration::from_secs(5)), vec![Frame::NetInstruction(led)]);
}

#[test]
fn bad_credentials_and_anonymous_frames_are_refused() {
    let h = Harness::new();
    let err = AppClient::login(h.handle().app_addr, "op", "wrong").unwrap_err();
    assert_eq!(err.kind(), ErrorKind::PermissionDenied);
    assert_eq!(err.to_string(), "InvalidCredentials");

    let mut gateway = h.gateway();
    let mut anon = TcpStream::connect(h.handle().app_addr).unwrap();
    let bytes = Codec::for_layer(Layer::Application)
        .encode(&Frame::AppManualInstruction(ActuatorBank::OFF.with(Actuator::Heating, 3)))
        .unwrap();
    anon.write_all(&bytes).unwrap();
    anon.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
    let mut rest = Vec::new();
    let _ = anon.read_to_end(&mut rest);
    assert!(read_network_frames(&mut gateway, 1, Duration::from_millis(300)).is_empty());

    let token = h.login().token;
    assert!(AppClient::resume(h.handle().app_addr, &token).is_ok());
    assert!(AppClient::resume(h.handle().app_addr, "bogus").is_err());
}

#[test]
fn websocket_bridge_speaks_json_and_hex() {
    let h = Harness::new();
    let mut gateway = h.gateway();
    let url = format!("ws://{}", h.handle().ws_addr);
    let cool = ActuatorBank::OFF.with(Actuator::Cooling, 4);
    h.rt.block_on(async {
        let (mut ws, _) = tokio_tungstenite::connect_async(url).await.unwrap();
        ws.send(Message::text(r#"{"type":"history","class":"reading","from_ms":0,"to_ms":1}"#)).await.unwrap();
        let reply: Value = serde_json::from_str(&next_text(&mut ws).await).unwrap();
        assert_eq!(reply["type"], "error");
        assert_eq!(reply["error"], "Unauthenticated");

        ws.send(Message::text(r#"{"type":"auth","username":"op","password":"secret"}"#)).await.unwrap();
        let reply: Value = serde_json::from_str(&next_text(&mut ws).await).unwrap();
        assert_eq!(reply["ok"], true);
        assert!(reply["token"].as_str().is_some_and(|t| !t.is_empty()));

        let hex = to_hex(&Codec::for_layer(Layer::Application).encode(&Frame::AppManualInstruction(cool)).unwrap());
        ws.send(Message::text(hex)).await.unwrap();
        ws.send(Message::text("A5 06 07")).await.unwrap();
        let reply: Value = serde_json::from_str(&next_text(&mut ws).await).unwrap();
        assert_eq!(reply["type"], "error");
    });

    assert_eq!(read_network_frames(&mut gateway, 1, Duration::from_secs(5)), vec![Frame::NetInstruction(cool)]);
    push(&mut gateway, 21, cool);

    let url = format!("ws://{}", h.handle().ws_addr);
    h.rt.block_on(async {
        let (mut ws, _) = tokio_tungstenite::connect_async(url).await.unwrap();
        ws.send(Message::text(r#"{"type":"auth","username":"op","password":"secret"}"#)).await.unwrap();
        let mut got_auth = false;
        let mut frame_hex = None;
        let deadline = tokio::time::Instant::now() + Duration::from_secs(5);
        while !got_auth {
            let msg = tokio::time::timeout_at(deadline, ws.next()).await.unwrap().unwrap().unwrap();
            if let Message::Text(t) = msg {
                let v: Value = serde_json::from_str(t.as_str()).unwrap();
                got_auth = v["type"] == "auth" && v["ok"] == true;
            }
        }
        let body = format!(r#"{{"type":"history","class":"{}","from_ms":0,"to_ms":{},"buckets":4}}"#,
            RecordClass::Reading.name(), 1u64 << 50);
        ws.send(Message::text(body)).await.unwrap();
        let mut history = None;
        while history.is_none() {
            let msg = tokio::time::timeout_at(deadline, ws.next()).await.unwrap().unwrap().unwrap();
            let Message::Text(t) = msg else { continue };
            if t.trim_start().starts_with('{') {
                history = Some(serde_json::from_str::<Value>(t.as_str()).unwrap());
            } else {
                frame_hex = Some(t.to_string());
            }
        }
        let history = history.unwrap();
        assert_eq!(history["type"], "history");
        assert_eq!(history["records"].as_array().unwrap().len(), 1);
        assert_eq!(history["buckets"].as_array().unwrap().len(), 4);
        assert!(frame_hex.is_none(), "no push happened after this session logged in");
    });
}
