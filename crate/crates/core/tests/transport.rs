use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use plantbot::bridge::{bridge_osc, Direction};
use plantbot::bus::{Bus, RouteTable, TopicPattern};
use plantbot::clock::WallClock;
use plantbot::llm::{
    parse_script, Backend, BackendError, ChatTurn, CompletionRequest, LiveBackend, LiveConfig,
    ScriptedBackend,
};
use plantbot::osc::{open_endpoint, EndpointConfig, OscMessage};
use plantbot::roles::{wire_agents, Backends, Capacities, RolePromptSet};

fn bus() -> Bus {
    Bus::new(RouteTable::default_topology(), Arc::new(WallClock))
}

#[test]
fn outbound_bridge_sends_one_string_arg() {
    let bus = bus();
    let local = open_endpoint(&EndpointConfig::loopback()).unwrap();
    let remote = open_endpoint(&EndpointConfig::loopback()).unwrap();
    local.add_peer(remote.local_addr());
    let bridge = bridge_osc(
        &bus,
        &local,
        Direction::Outbound(TopicPattern::new("/plantbot/sensor/out").unwrap()),
    );
    bus.publisher("sensor")
        .send("/plantbot/sensor/out", "The soil is dry.")
        .unwrap();
    bus.publisher("chat").send("/plantbot/chat/out", "ignored").unwrap();
    let (msg, _) = remote
        .receive_timeout(Some(Duration::from_secs(2)))
        .unwrap()
        .expect("datagram");
    assert_eq!(msg, OscMessage::text("/plantbot/sensor/out", "The soil is dry."));
    assert!(remote
        .receive_timeout(Some(Duration::from_millis(150)))
        .unwrap()
        .is_none());
    assert_eq!(bridge.forwarded(), 1);
    bridge.stop();
}

#[test]
fn inbound_bridge_publishes_onto_the_bus() {
    let bus = bus();
    let inbox = bus.subscribe("chat", "/plantbot/human/in").unwrap();
    let local = open_endpoint(&EndpointConfig::loopback()).unwrap();
    let sender = open_endpoint(&EndpointConfig::loopback()).unwrap();
    let bridge = bridge_osc(
        &bus,
        &local,
        Direction::Inbound(TopicPattern::new("/plantbot/*/in").unwrap()),
    );
    let text = "hello 🌱 ünïcode";
    sender
        .send(&OscMessage::text("/plantbot/human/in", text), local.local_addr())
        .unwrap();
    let env = inbox.recv_timeout(Duration::from_secs(2)).expect("envelope");
    assert_eq!(env.topic, "/plantbot/human/in");
    assert_eq!(env.source, "human");
    assert_eq!(env.payload, text);
    assert_eq!(env.payload.len(), text.len());

    // malformed datagrams and non-text messages are dropped, not fatal
    let raw = std::net::UdpSocket::bind("127.0.0.1:0").unwrap();
    raw.send_to(b"garbage", local.local_addr()).unwrap();
    sender
        .send(
            &OscMessage::new("/plantbot/human/in", vec![plantbot::osc::OscArg::Int(3)]),
            local.local_addr(),
        )
        .unwrap();
    sender
        .send(&OscMessage::text("/plantbot/human/in", "again"), local.local_addr())
        .unwrap();
    let env = inbox.recv_timeout(Duration::from_secs(2)).expect("still running");
    assert_eq!(env.payload, "again");
    assert_eq!(local.malformed_count(), 1);
    assert_eq!(bridge.failures(), 1);
}

/// Minimal HTTP server answering each connection from `responses` in turn
/// and handing the raw requests back.
fn stub_server(responses: Vec<(u16, String)>) -> (String, thread::JoinHandle<Vec<String>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let handle = thread::spawn(move || {
        let mut seen = Vec::new();
        for (status, body) in responses {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream);
            let mut head = String::new();
            let mut len = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                head.push_str(&line);
                if line == "\r\n" {
                    break;
                }
            }
            let mut body_in = vec![0; len];
            reader.read_exact(&mut body_in).unwrap();
            seen.push(head + &String::from_utf8(body_in).unwrap());
            let mut stream = reader.into_inner();
            write!(
                stream,
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
        seen
    });
    (url, handle)
}

fn reply(text: &str) -> String {
    serde_json::json!({"choices": [{"message": {"role": "assistant", "content": text}}]}).to_string()
}

fn request(agent: &str) -> CompletionRequest {
    CompletionRequest {
        agent: agent.into(),
        model: String::new(),
        turns: vec![ChatTurn::system("You are a plant."), ChatTurn::user("hi")],
        max_tokens: 64,
        temperature: 0.7,
    }
}

fn live(url: String, retries: u32) -> LiveBackend {
    let mut models = std::collections::HashMap::new();
    models.insert("vision".to_owned(), "vision-model".to_owned());
    LiveBackend::new(LiveConfig {
        base_url: url,
        model: "base-model".into(),
        models,
        api_key_env: "PLANTBOT_TEST_KEY_UNSET".into(),
        timeout: Duration::from_secs(5),
        retries,
        backoff: Duration::from_millis(10),
    })
    .unwrap()
}

#[test]
fn live_backend_sends_one_chat_completion() {
    let (url, server) = stub_server(vec![(200, reply("Hello!"))]);
    let out = live(url, 0).complete(&request("chat")).unwrap();
    assert_eq!(out, "Hello!");
    let seen = server.join().unwrap();
    assert_eq!(seen.len(), 1);
    let req = &seen[0];
    assert!(req.starts_with("POST /v1/chat/completions"), "{req}");
    let body: serde_json::Value = serde_json::from_str(&req[req.find("\r\n\r\n").unwrap() + 4..]).unwrap();
    assert_eq!(body["model"], "base-model");
    assert_eq!(body["messages"][0]["role"], "system");
    assert_eq!(body["messages"][1]["content"], "hi");
    assert_eq!(body["max_tokens"], 64);
}

#[test]
fn live_backend_uses_per_agent_model_and_retries() {
    let (url, server) = stub_server(vec![(500, "{}".into()), (200, reply("I see a tree."))]);
    let out = live(url, 1).complete(&request("vision")).unwrap();
    assert_eq!(out, "I see a tree.");
    let seen = server.join().unwrap();
    assert_eq!(seen.len(), 2);
    assert!(seen[1].contains("\"vision-model\""));
}

#[test]
fn live_backend_gives_up_after_retries() {
    let (url, server) = stub_server(vec![(503, "{}".into()), (503, "{}".into())]);
    let err = live(url, 1).complete(&request("chat")).unwrap_err();
    assert!(matches!(err, BackendError::Unavailable { attempts: 2, .. }), "{err:?}");
    server.join().unwrap();
    // invalid requests never reach the network
    let mut bad = request("chat");
    bad.turns.remove(0);
    assert!(matches!(
        live("http://127.0.0.1:9".into(), 0).complete(&bad),
        Err(BackendError::InvalidRequest(_))
    ));
}

#[test]
fn threaded_agents_cascade_from_sensor_to_motor() {
    let bus = bus();
    let motor = bus.subscribe("world", "/plantbot/action2/out").unwrap();
    let speaker = bus.subscribe("speaker", "/plantbot/chat/out").unwrap();
    let rules = parse_script(
        "10 | sensor | status=dry | The soil is dry.\n\
         10 | chat | [sensor] The soil is dry | I am thirsty. I want to move.\n\
         10 | action1 | want to move | [1] Reason: thirsty\n\
         10 | action2 | [1] | CMD: forward 0.5\n",
    )
    .unwrap();
    let backend: Arc<dyn Backend> = Arc::new(ScriptedBackend::new(rules, "[0] idle"));
    let system = wire_agents(
        &RolePromptSet::default(),
        &bus,
        &Backends::uniform(backend),
        &Capacities::default(),
        30.0,
        None,
    )
    .unwrap();
    bus.publisher("world")
        .send(
            "/plantbot/sensor/in",
            "moisture=12.0% temp=22.0C pH=6.5 EC=1.2 N=120.0 P=40.0 K=150.0 status=dry",
        )
        .unwrap();
    let said = speaker.recv_timeout(Duration::from_secs(5)).expect("chat speaks");
    assert_eq!(said.payload, "I am thirsty. I want to move.");
    let deadline = Instant::now() + Duration::from_secs(5);
    let mut cmds = Vec::new();
    while Instant::now() < deadline && !cmds.iter().any(|p: &String| p.contains("forward")) {
        if let Some(env) = motor.recv_timeout(Duration::from_millis(50)) {
            cmds.push(env.payload);
        }
    }
    assert!(cmds.iter().any(|p| p == "CMD: forward 0.5"), "{cmds:?}");
    let agents = system.stop();
    assert_eq!(agents.len(), 5);
}
