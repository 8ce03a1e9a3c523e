use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use plantbot::config::{RunConfig, Scenario};
use plantbot::console::{parse_event, ConsoleCommand, ConsoleEvent, EventKind, ViewState};
use plantbot::gateway::{replay, run, ConsoleServer, GatewayError, RunOptions, Simulation};
use plantbot::roles::SoilThresholds;
use plantbot::telemetry::{load_records, RecordKind};

fn assets() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("assets")
}

fn config(name: &str, log: Option<&Path>) -> RunConfig {
    let mut cfg = RunConfig::load(&assets().join("configs").join(format!("{name}.toml"))).unwrap();
    cfg.log = log.map(Path::to_path_buf);
    cfg
}

fn quiet_scenario(duration_s: f64) -> Scenario {
    Scenario {
        duration_s,
        ..Scenario::default()
    }
}

fn sim_with(scenario: Scenario, log: Option<&Path>) -> Simulation {
    let mut cfg = config("example1", log);
    cfg.backend.scripts = vec![assets().join("scripts/default.script")];
    let backend = plantbot::gateway::build_backend(&cfg).unwrap();
    Simulation::with_backends(cfg, scenario, plantbot::roles::Backends::uniform(backend)).unwrap()
}

#[test]
fn example1_run_logs_the_cascade() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("ex1.jsonl");
    let stats = run(config("example1", Some(&log)), &RunOptions { fast: true, headless: true, ..Default::default() }).unwrap();
    assert_eq!(stats.ticks, 1500);
    let recs = load_records(&log).unwrap().records;
    let sensor_dry = recs
        .iter()
        .position(|r| r.agent == "sensor" && r.text == "The soil is dry.")
        .expect("sensor message");
    let chat = recs[sensor_dry..]
        .iter()
        .position(|r| r.agent == "chat" && r.kind == RecordKind::Utterance)
        .unwrap()
        + sensor_dry;
    assert_eq!(recs[chat].text, "It says it's thirsty. Could you water me?");
    assert_eq!(recs[chat + 1].kind, RecordKind::Decision);
    assert_eq!(recs[chat + 1].flag, Some(1));
}

#[test]
fn missing_prompt_file_names_the_path() {
    let mut cfg = config("example1", None);
    cfg.prompts.insert("chat".into(), PathBuf::from("/nonexistent/chat_prompt.txt"));
    let err = run(cfg, &RunOptions { fast: true, headless: true, ..Default::default() }).unwrap_err();
    assert!(err.to_string().contains("/nonexistent/chat_prompt.txt"), "{err}");
}

#[test]
fn invalid_prompt_is_rejected_at_startup() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("chat.txt");
    std::fs::write(&p, "You are a robot.").unwrap();
    let mut cfg = config("example1", None);
    cfg.prompts.insert("chat".into(), p);
    assert!(matches!(
        Simulation::new(cfg),
        Err(GatewayError::Prompts(_))
    ));
}

#[test]
fn unwritable_log_is_fatal() {
    let cfg = config("example1", Some(Path::new("/nonexistent-dir/run.jsonl")));
    let err = Simulation::new(cfg).err().expect("startup error");
    assert!(err.to_string().starts_with("log sink"), "{err}");
}

#[test]
fn headless_duration_tracks_wall_time() {
    let start = Instant::now();
    let opts = RunOptions {
        duration_s: Some(1.0),
        fast: false,
        headless: true,
    };
    run(config("example1", None), &opts).unwrap();
    let took = start.elapsed().as_secs_f64();
    assert!((0.9..2.5).contains(&took), "took {took}s");
}

#[test]
fn utterance_gets_a_chat_reply() {
    let mut sim = sim_with(quiet_scenario(30.0), None);
    let events = sim
        .handle_command(ConsoleCommand::UserUtterance("hello".into()))
        .unwrap();
    assert_eq!(events[0].kind, EventKind::AgentMsg, "acknowledged first");
    assert_eq!(events[0].payload["agent"], "human");
    let reply = events.iter().find(|e| e.kind == EventKind::ChatReply).expect("chat reply");
    assert!(reply.payload["text"].as_str().unwrap().starts_with("Hello!"));
}

#[test]
fn moisture_command_drives_a_dry_cascade() {
    let mut sim = sim_with(quiet_scenario(60.0), None);
    sim.collect_events(true);
    for _ in 0..20 {
        sim.step().unwrap();
    }
    sim.take_events();
    let ack = sim.handle_command(ConsoleCommand::SetSoilMoisture(12.0)).unwrap();
    assert_eq!(ack[0].kind, EventKind::Soil);
    assert_eq!(ack[0].payload["moisture"], 12.0);
    assert_eq!(ack[0].payload["status"], "dry");

    let t0 = sim.now_ms();
    let mut events = ack;
    while sim.now_ms() < t0 + 10_000 {
        sim.step().unwrap();
        events.extend(sim.take_events());
    }
    let dry = events
        .iter()
        .position(|e| e.kind == EventKind::AgentMsg && e.payload["agent"] == "sensor" && e.payload["text"].as_str().unwrap().contains("dry"))
        .expect("dry sensor message");
    let moving = events[dry..]
        .iter()
        .any(|e| e.kind == EventKind::Decision && e.payload["flag"] == 1);
    assert!(moving, "decision flips to move");
    let view = ViewState::fold(&events);
    assert_eq!(view.moving, Some(true));
}

#[test]
fn pause_freezes_the_world_clock() {
    let mut sim = sim_with(quiet_scenario(60.0), None);
    for _ in 0..15 {
        sim.step().unwrap();
    }
    let ev = sim.handle_command(ConsoleCommand::Pause).unwrap();
    assert_eq!(ev.len(), 1);
    let frozen = sim.now_ms();
    let pose = sim.world().pose;
    for _ in 0..20 {
        sim.step().unwrap();
    }
    assert_eq!(sim.now_ms(), frozen);
    assert_eq!(sim.world().pose, pose);
    let ev = sim
        .handle_command(ConsoleCommand::UserUtterance("still there?".into()))
        .unwrap();
    assert!(ev.iter().all(|e| e.timestamp_ms == frozen));
    assert!(ev.iter().any(|e| e.kind == EventKind::ChatReply), "agents still answer");
    sim.handle_command(ConsoleCommand::Resume).unwrap();
    sim.step().unwrap();
    assert!(sim.now_ms() > frozen);
}

#[test]
fn bad_commands_become_error_events() {
    let mut sim = sim_with(quiet_scenario(10.0), None);
    let ev = sim.handle_command(ConsoleCommand::Water(-3.0)).unwrap();
    assert_eq!(ev[0].kind, EventKind::Error);
    let ev = sim
        .handle_command(ConsoleCommand::AddObstacle { x: 1.0, y: 0.0, r: 0.2 })
        .unwrap();
    assert_eq!(ev[0].kind, EventKind::AgentMsg);
    assert_eq!(sim.world().obstacles.len(), 1);
}

#[test]
fn commands_are_acknowledged_within_one_tick() {
    let mut sim = sim_with(quiet_scenario(10.0), None);
    for cmd in [
        ConsoleCommand::UserUtterance("hi".into()),
        ConsoleCommand::SetSoilMoisture(40.0),
        ConsoleCommand::Water(0.2),
        ConsoleCommand::AddObstacle { x: 3.0, y: 3.0, r: 0.1 },
        ConsoleCommand::Pause,
        ConsoleCommand::Resume,
    ] {
        let ev = sim.handle_command(cmd.clone()).unwrap();
        assert!(!ev.is_empty(), "{cmd:?} unacknowledged");
    }
}

fn read_event(r: &mut impl BufRead) -> ConsoleEvent {
    let mut line = String::new();
    r.read_line(&mut line).unwrap();
    parse_event(&line).unwrap_or_else(|e| panic!("{e}: {line:?}"))
}

#[test]
fn console_socket_round_trip() {
    let mut sim = sim_with(quiet_scenario(60.0), None);
    sim.attach_console(ConsoleServer::bind("127.0.0.1:0").unwrap());
    let addr = sim.console_addr().unwrap();
    let mut a = TcpStream::connect(addr).unwrap();
    let b = TcpStream::connect(addr).unwrap();
    for s in [&a, &b] {
        s.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
    }
    let deadline = Instant::now() + Duration::from_secs(5);
    while sim.console_clients() < 2 {
        assert!(Instant::now() < deadline, "clients never registered");
        std::thread::sleep(Duration::from_millis(5));
    }

    sim.collect_events(true);
    writeln!(a, r#"{{"kind":"user_utterance","payload":"hello"}}"#).unwrap();
    writeln!(a, "not json").unwrap();
    let mut sent = Vec::new();
    let deadline = Instant::now() + Duration::from_secs(5);
    let has = |evs: &[ConsoleEvent], k| evs.iter().any(|e| e.kind == k);
    while !(has(&sent, EventKind::ChatReply) && has(&sent, EventKind::Error)) {
        assert!(Instant::now() < deadline, "no reply: {sent:?}");
        sim.step().unwrap();
        sent.extend(sim.take_events());
        std::thread::sleep(Duration::from_millis(2));
    }

    let mut ra = BufReader::new(a.try_clone().unwrap());
    let mut rb = BufReader::new(b);
    let seen_a: Vec<_> = (0..sent.len()).map(|_| read_event(&mut ra)).collect();
    let seen_b: Vec<_> = (0..sent.len()).map(|_| read_event(&mut rb)).collect();
    assert_eq!(seen_a, sent);
    assert_eq!(seen_b, sent, "clients see the same stream");
    let reply = sent.iter().find(|e| e.kind == EventKind::ChatReply).unwrap();
    assert!(reply.payload["text"].as_str().unwrap().starts_with("Hello!"));
}

#[test]
fn replay_reproduces_the_live_stream() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("run.jsonl");
    let mut sim = sim_with(
        Scenario {
            events: Scenario::parse(
                "[[events]]\nat_s = 1.0\nkind = \"user_utterance\"\npayload = \"hello\"\n\
                 [[events]]\nat_s = 2.0\nkind = \"set_soil_moisture\"\npayload = 12.0\n",
            )
            .unwrap()
            .events,
            ..quiet_scenario(20.0)
        },
        Some(&log),
    );
    sim.collect_events(true);
    sim.run_to_end(false).unwrap();
    let live = sim.take_events();
    sim.finish().unwrap();

    let mut replayed = Vec::new();
    let summary = replay(&log, 0.0, &SoilThresholds::default(), |e| replayed.push(e)).unwrap();
    assert_eq!(summary.stopped_at_line, None);
    assert_eq!(summary.emitted, load_records(&log).unwrap().records.len());
    assert_eq!(replayed, live);
    assert_eq!(ViewState::fold(&replayed), ViewState::fold(&live));
}

#[test]
fn replay_scales_time_and_stops_at_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("run.jsonl");
    let mut sim = sim_with(quiet_scenario(4.0), Some(&log));
    sim.run_to_end(false).unwrap();
    sim.finish().unwrap();

    let start = Instant::now();
    let s = replay(&log, 10.0, &SoilThresholds::default(), |_| {}).unwrap();
    let took = start.elapsed().as_secs_f64();
    assert!(s.emitted > 0);
    // last record is at 3.9 s of simulated time
    assert!((0.3..1.5).contains(&took), "took {took}s");

    let empty = dir.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    let s = replay(&empty, 1.0, &SoilThresholds::default(), |_| {}).unwrap();
    assert_eq!(s.emitted, 0);

    let text = std::fs::read_to_string(&log).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let corrupt = format!("{}\n{}\n{{broken\n{}\n", lines[0], lines[1], lines[2]);
    std::fs::write(&log, corrupt).unwrap();
    let s = replay(&log, 0.0, &SoilThresholds::default(), |_| {}).unwrap();
    assert_eq!(s.emitted, 2);
    assert_eq!(s.stopped_at_line, Some(3));
}

#[test]
fn threaded_mode_runs_the_same_cascade() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("threaded.jsonl");
    let mut cfg = config("example1", Some(&log));
    cfg.mode = plantbot::config::Mode::Threaded;
    let opts = RunOptions {
        duration_s: Some(12.0),
        fast: false,
        headless: true,
    };
    // paced in real time so agent threads keep up with the world
    run(cfg, &opts).unwrap();
    let recs = load_records(&log).unwrap().records;
    let dry = recs
        .iter()
        .position(|r| r.agent == "sensor" && r.text == "The soil is dry.")
        .expect("sensor speaks");
    assert!(recs[dry..]
        .iter()
        .any(|r| r.kind == RecordKind::Decision && r.flag == Some(1)));
}
