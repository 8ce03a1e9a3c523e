//! Acceptance criteria. Each test prints one `PASS`/`FAIL` line with its
//! measurement before asserting, so `cargo test --test acceptance --
//! --nocapture` doubles as a report.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use plantbot::agent::{Agent, AgentSpec, HistoryBuffer};
use plantbot::bus::Envelope;
use plantbot::config::{RobotSetup, RunConfig, Scenario};
use plantbot::gateway::{run, RunOptions, Simulation};
use plantbot::llm::{
    parse_script, Backend, BackendError, ChatTurn, CompletionRequest, ScriptedBackend,
};
use plantbot::osc::{decode_message, encode_message, OscArg, OscMessage};
use plantbot::roles::Backends;
use plantbot::telemetry::{
    load_records, pre_transition_terms, run_lengths, state_counts, LogRecord, RecordKind,
    Tokenizer,
};
use plantbot::world::{Bounds, Obstacle};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(name: &str, ok: bool, detail: impl std::fmt::Display) {
    println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
}

fn assets() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("assets")
}

fn run_config(name: &str, log: &Path) -> Vec<LogRecord> {
    let mut cfg = RunConfig::load(&assets().join("configs").join(format!("{name}.toml"))).unwrap();
    cfg.log = Some(log.to_path_buf());
    let opts = RunOptions {
        fast: true,
        headless: true,
        ..Default::default()
    };
    run(cfg, &opts).unwrap();
    load_records(log).unwrap().records
}

/// Index of the first record at or after `from` satisfying `pred`.
fn find(recs: &[LogRecord], from: usize, pred: impl Fn(&LogRecord) -> bool) -> Option<usize> {
    recs.iter().skip(from).position(pred).map(|i| i + from)
}

// --- OSC codec --------------------------------------------------------------

fn arg() -> impl Strategy<Value = OscArg> {
    prop_oneof![
        any::<i32>().prop_map(OscArg::Int),
        (-1e6f32..1e6).prop_map(OscArg::Float),
        "[^\u{0}]{0,40}".prop_map(OscArg::Str),
        proptest::collection::vec(any::<u8>(), 0..33).prop_map(OscArg::Blob),
    ]
}

fn message() -> impl Strategy<Value = OscMessage> {
    (
        "/[a-z]{1,8}(/[a-z0-9_]{1,8}){0,3}",
        proptest::collection::vec(arg(), 0..6),
    )
        .prop_map(|(a, args)| OscMessage::new(a, args))
}

#[test]
fn osc_codec() {
    let start = Instant::now();
    let mut runner = TestRunner::new(Config::with_cases(1000));
    let round_trips = runner.run(&message(), |m| {
        let bytes = encode_message(&m).unwrap();
        prop_assert_eq!(bytes.len() % 4, 0);
        prop_assert_eq!(decode_message(&bytes).unwrap(), m);
        Ok(())
    });

    let ping = encode_message(&OscMessage::new("/ping", vec![])).unwrap();
    let dry = encode_message(&OscMessage::text("/plantbot/sensor", "dry")).unwrap();
    let fixtures = ping == b"/ping\0\0\0,\0\0\0"
        && dry == b"/plantbot/sensor\0\0\0\0,s\0\0dry\0";

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut panics = 0;
    let valid = encode_message(&OscMessage::new(
        "/plantbot/chat/out",
        vec![OscArg::Str("I am thirsty.".into()), OscArg::Int(3), OscArg::Blob(vec![1, 2, 3])],
    ))
    .unwrap();
    for i in 0..20_000 {
        let buf: Vec<u8> = if i % 2 == 0 {
            let n = rng.random_range(0..128);
            (0..n).map(|_| rng.random()).collect()
        } else {
            let mut b = valid.clone();
            for _ in 0..rng.random_range(1..4) {
                let at = rng.random_range(0..b.len());
                b[at] = rng.random();
            }
            b.truncate(rng.random_range(0..=b.len()));
            b
        };
        if catch_unwind(AssertUnwindSafe(|| {
            let _ = decode_message(&buf);
        }))
        .is_err()
        {
            panics += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let ok = round_trips.is_ok() && fixtures && panics == 0 && secs < 10.0;
    report(
        "osc codec",
        ok,
        format!(
            "1000 round trips {}, 12/28-byte fixtures {}, 20000 fuzzed buffers {panics} panics, {secs:.2}s",
            if round_trips.is_ok() { "identical" } else { "FAILED" },
            if fixtures { "match" } else { "differ" },
        ),
    );
    assert!(ok, "{round_trips:?}");
}

// --- history window ---------------------------------------------------------

struct Recorder(Mutex<Vec<CompletionRequest>>);

impl Backend for Recorder {
    fn complete(&self, req: &CompletionRequest) -> Result<String, BackendError> {
        let mut seen = self.0.lock().unwrap();
        seen.push(req.clone());
        Ok(format!("reply {}", seen.len()))
    }
    fn name(&self) -> &str {
        "recorder"
    }
}

fn env(seq: u64, payload: String) -> Envelope {
    Envelope {
        seq,
        timestamp_ms: seq,
        source: "world".into(),
        topic: "/plantbot/sensor/in".into(),
        payload,
    }
}

#[test]
fn history_window() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut violations = 0;
    let mut checked = 0;
    for case in 0..300 {
        let cap = if case % 10 == 0 { 0 } else { rng.random_range(1..16) };
        let inputs = rng.random_range(0..30);

        // buffer alone
        let mut buf = HistoryBuffer::new(cap);
        let mut all = Vec::new();
        for i in 0..inputs {
            let t = ChatTurn::user(format!("t{i}"));
            all.push(t.clone());
            buf.append(t);
        }
        let want: Vec<_> = all[all.len() - cap.min(all.len())..].to_vec();
        if buf.entries().cloned().collect::<Vec<_>>() != want {
            violations += 1;
        }

        // through an agent: each exchange adds a user and an assistant turn
        let mut spec = AgentSpec::new("sensor", "You read soil.", "/plantbot/sensor/out");
        spec.history_capacity = cap;
        let mut agent = Agent::new(spec);
        let rec = Recorder(Mutex::new(Vec::new()));
        let mut turns: Vec<ChatTurn> = Vec::new();
        for i in 0..inputs {
            let input = format!("reading {i}");
            agent.handle(&env(i as u64, input.clone()), &rec, i as u64);
            let req = rec.0.lock().unwrap().last().cloned().unwrap();
            let mut expect = vec![ChatTurn::system("You read soil.")];
            expect.extend_from_slice(&turns[turns.len() - cap.min(turns.len())..]);
            expect.push(ChatTurn::user(input.clone()));
            checked += 1;
            if req.turns != expect {
                violations += 1;
            }
            turns.push(ChatTurn::user(input));
            turns.push(ChatTurn::assistant(format!("reply {}", i + 1)));
        }
    }
    let ok = violations == 0;
    report(
        "history window",
        ok,
        format!("300 buffers and {checked} prompts against the last-min(n, total) oracle, {violations} violations"),
    );
    assert!(ok);
}

// --- Example 1 cascade ----------------------------------------------------

#[test]
fn example1_cascade() {
    let dir = tempfile::tempdir().unwrap();
    let mut logs = Vec::new();
    let mut cascades = 0;
    let start = Instant::now();
    for i in 0..5 {
        let path = dir.path().join(format!("ex1-{i}.jsonl"));
        let recs = run_config("example1", &path);
        logs.push(std::fs::read(&path).unwrap());
        let stop = find(&recs, 0, |r| r.kind == RecordKind::Decision && r.flag == Some(0));
        let sensor = stop.and_then(|s| {
            find(&recs, s, |r| r.agent == "sensor" && r.kind == RecordKind::Utterance && r.text.contains("The soil is dry."))
        });
        let chat = sensor.and_then(|s| {
            find(&recs, s, |r| r.agent == "chat" && r.kind == RecordKind::Utterance && r.text.contains("water"))
        });
        let go = chat.and_then(|c| find(&recs, c, |r| r.kind == RecordKind::Decision && r.flag == Some(1)));
        if go.is_some() {
            cascades += 1;
        }
    }
    let identical = logs.windows(2).all(|w| w[0] == w[1]);
    let ok = cascades == 5 && identical;
    report(
        "example 1 cascade",
        ok,
        format!(
            "decision 0 -> dry sensor -> chat asks for water -> decision 1 in {cascades}/5 runs, logs identical: {identical}, {:.2}s",
            start.elapsed().as_secs_f64()
        ),
    );
    assert!(ok);
}

// --- Example 3 ordering ---------------------------------------------------

#[test]
fn example3_ordering() {
    let dir = tempfile::tempdir().unwrap();
    let recs = run_config("example3", &dir.path().join("ex3.jsonl"));
    let vision = find(&recs, 0, |r| {
        r.agent == "vision" && r.kind == RecordKind::Utterance && r.text.contains("two people")
    });
    let chat = vision.and_then(|v| find(&recs, v, |r| r.agent == "chat" && r.kind == RecordKind::Utterance));
    let go = chat.and_then(|c| find(&recs, c, |r| r.kind == RecordKind::Decision && r.flag == Some(1)));
    let after_arrival = vision.is_some_and(|v| recs[v].timestamp_ms >= 10_000);
    let ok = go.is_some() && after_arrival;
    let at = |i: Option<usize>| i.map_or("missing".to_owned(), |i| format!("{:.1}s", recs[i].timestamp_ms as f64 / 1000.0));
    report(
        "example 3 ordering",
        ok,
        format!("vision {} -> chat {} -> decision 1 {}", at(vision), at(chat), at(go)),
    );
    assert!(ok);
}

// --- reflex safety -----------------------------------------------------------

const ALWAYS_MOVE: &str = "\
10 | sensor | * | The soil is fine.
10 | vision | * | Nothing new around me.
10 | chat | * | I want to move.
10 | action1 | * | [1] Reason: I want to move.
10 | action2 | * | CMD: forward 100
";

fn random_scenario(rng: &mut ChaCha8Rng, d_safe: f64) -> Scenario {
    let mut obstacles = Vec::new();
    while obstacles.len() < 12 {
        let (x, y, r) = (
            rng.random_range(-3.8f64..3.8),
            rng.random_range(-3.8f64..3.8),
            rng.random_range(0.1..0.6),
        );
        if x.hypot(y) - r > d_safe + 0.1 {
            obstacles.push(Obstacle::Circle { x, y, r });
        }
    }
    Scenario {
        duration_s: 60.0,
        robot: RobotSetup {
            heading: rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
            ..RobotSetup::default()
        },
        bounds: Some(Bounds {
            min_x: -4.0,
            min_y: -4.0,
            max_x: 4.0,
            max_y: 4.0,
        }),
        obstacles,
        ..Scenario::default()
    }
}

fn reflex_run(scenario: Scenario, seed: u64, enabled: bool) -> plantbot::gateway::RunStats {
    let mut cfg = RunConfig::for_scenario("generated.toml", seed);
    cfg.refresh_s = 1.0;
    cfg.ticks.sensor_s = 1.0;
    cfg.reflex.enabled = enabled;
    let backend: Arc<dyn Backend> = Arc::new(ScriptedBackend::new(parse_script(ALWAYS_MOVE).unwrap(), "CMD: forward 100"));
    let mut sim = Simulation::with_backends(cfg, scenario, Backends::uniform(backend)).unwrap();
    sim.run_to_end(false).unwrap();
    sim.finish().unwrap()
}

#[test]
fn reflex_safety() {
    let start = Instant::now();
    let defaults = RunConfig::for_scenario("x", 0);
    let bound = defaults.reflex.d_safe - defaults.drive.v_max * defaults.ticks.dt_s;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = f64::INFINITY;
    let mut collisions = 0;
    let mut engaged = 0;
    let mut unguarded_collisions = 0;
    for seed in 0..100 {
        let scenario = random_scenario(&mut rng, defaults.reflex.d_safe);
        let s = reflex_run(scenario.clone(), seed, true);
        worst = worst.min(s.min_clearance);
        collisions += s.collisions;
        engaged += s.reflex_engagements;
        if seed < 10 {
            unguarded_collisions += reflex_run(scenario, seed, false).collisions;
        }
    }
    let ok = worst >= bound - 1e-9 && collisions == 0 && unguarded_collisions > 0;
    report(
        "reflex safety",
        ok,
        format!(
            "100 scenarios, min clearance {worst:.6} m (bound {bound:.3} m, tolerance 1e-9), {collisions} collisions, {engaged} engagements; reflex off: {unguarded_collisions} collisions in 10; {:.1}s",
            start.elapsed().as_secs_f64()
        ),
    );
    assert!(ok);
}

// --- analysis oracle --------------------------------------------------------

fn decision(seq: u64, run: &str, flag: u8) -> LogRecord {
    LogRecord {
        timestamp_ms: seq * 100,
        seq,
        agent: "action1".into(),
        kind: RecordKind::Decision,
        text: format!("[{flag}] reason"),
        flag: Some(flag),
        pose: None,
        run_id: run.into(),
    }
}

#[test]
fn analysis_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut mismatches = 0;
    for _ in 0..200 {
        let runs = rng.random_range(1..4);
        let mut recs = Vec::new();
        let mut flags_by_run: Vec<Vec<u8>> = vec![Vec::new(); runs];
        for seq in 0..rng.random_range(0..200u64) {
            let r = rng.random_range(0..runs);
            if rng.random_bool(0.2) {
                recs.push(LogRecord {
                    kind: RecordKind::Utterance,
                    agent: "chat".into(),
                    text: "noise".into(),
                    flag: None,
                    ..decision(seq, &format!("run{r}"), 0)
                });
                continue;
            }
            let f = rng.random_range(0..2u8);
            flags_by_run[r].push(f);
            recs.push(decision(seq, &format!("run{r}"), f));
        }
        // brute force
        let all: Vec<u8> = flags_by_run.concat();
        let stop = all.iter().filter(|f| **f == 0).count();
        let mut want: [BTreeMap<usize, usize>; 2] = Default::default();
        for flags in &flags_by_run {
            let mut i = 0;
            while i < flags.len() {
                let mut j = i;
                while j < flags.len() && flags[j] == flags[i] {
                    j += 1;
                }
                *want[flags[i] as usize].entry(j - i).or_default() += 1;
                i = j;
            }
        }
        let c = state_counts(&recs);
        let l = run_lengths(&recs);
        let conserved = c.stop + c.moving == all.len()
            && plantbot::telemetry::RunLengths::weighted_total(&l.stop) == c.stop
            && plantbot::telemetry::RunLengths::weighted_total(&l.moving) == c.moving;
        if c.stop != stop || l.stop != want[0] || l.moving != want[1] || !conserved {
            mismatches += 1;
        }
    }
    let ok = mismatches == 0;
    report(
        "analysis oracle",
        ok,
        format!("200 random decision sequences, {mismatches} disagreements with brute-force counts and run lengths"),
    );
    assert!(ok);
}

// --- long-run behaviour -----------------------------------------------------

#[test]
fn stop_dominates_long_run() {
    let dir = tempfile::tempdir().unwrap();
    let recs = run_config("long_run", &dir.path().join("long_run.jsonl"));
    let c = state_counts(&recs);
    let l = run_lengths(&recs);
    let ok = c.stop > c.moving && l.max_stop() > l.max_move();
    report(
        "stop dominates",
        ok,
        format!(
            "10-minute run: stop {} vs move {}, longest stop run {} vs longest move run {}",
            c.stop,
            c.moving,
            l.max_stop(),
            l.max_move()
        ),
    );
    assert!(ok);
}

#[test]
fn transition_vocabulary() {
    let dir = tempfile::tempdir().unwrap();
    let mut recs = Vec::new();
    for name in ["example1", "example2", "example3"] {
        recs.extend(run_config(name, &dir.path().join(format!("{name}.jsonl"))));
    }
    let tok = Tokenizer::default();
    let to_move = pre_transition_terms(&recs, 1, 3, 20, &tok);
    let to_stop = pre_transition_terms(&recs, 0, 3, 20, &tok);
    let rank = |list: &[(String, usize)], t: &str| list.iter().position(|(w, _)| w == t);
    let move_rank = rank(&to_move, "move");
    let move_rank_stop = rank(&to_stop, "move");
    let stable = rank(&to_stop, "stable").is_some() || rank(&to_stop, "stay").is_some();
    let ok = match (move_rank, move_rank_stop) {
        (Some(a), Some(b)) => a < b,
        (Some(_), None) => true,
        _ => false,
    } && stable;
    let show = |r: Option<usize>| r.map_or("absent".to_owned(), |r| format!("rank {}", r + 1));
    report(
        "transition vocabulary",
        ok,
        format!(
            "\"move\" {} before move vs {} before stop; stability term before stop: {stable}",
            show(move_rank),
            show(move_rank_stop)
        ),
    );
    assert!(ok);
}

#[test]
fn deterministic_logs() {
    let dir = tempfile::tempdir().unwrap();
    let mut same = true;
    for name in ["example3", "long_run"] {
        let a = dir.path().join(format!("{name}-a.jsonl"));
        let b = dir.path().join(format!("{name}-b.jsonl"));
        run_config(name, &a);
        run_config(name, &b);
        same &= std::fs::read(&a).unwrap() == std::fs::read(&b).unwrap();
    }
    report(
        "deterministic logs",
        same,
        "same config and seed give byte-identical logs (example 3 and the 10-minute run)",
    );
    assert!(same);
}
