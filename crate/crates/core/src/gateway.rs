//! Run orchestration: world, bus, agents and log sink driven by one tick
//! loop, plus the console server and log replay.
//!
//! In lockstep mode every agent runs inside the tick: after the world
//! publishes its sensor and camera inputs, agents take turns handling one
//! envelope each (sensor, vision, chat, action1, action2) until no inbox
//! has anything left. All timestamps come from the simulated clock, so a
//! given config and seed always yields the same log.

use std::collections::VecDeque;
use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::Path;
use std::sync::mpsc::{self, Receiver, Sender, SyncSender, TrySendError};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::action::{
    front_min_range, parse_motor_command, reflex_avoid, to_motor, DriveParams, MotorCommand,
};
use crate::agent::{Agent, AgentEvent, AgentReport, Outcome, AGENT_QUEUE_BOUND};
use crate::bus::{Bus, BusError, Publisher, Subscription};
use crate::clock::{Clock, SimClock};
use crate::config::{BackendKind, ConfigError, Mode, RunConfig, Scenario, ScenarioEvent};
use crate::console::{record_to_event, ConsoleCommand, ConsoleEvent, POSE_TEXT};
#[cfg(feature = "live")]
use crate::llm::LiveBackend;
use crate::llm::{load_script, parse_script, Backend, ScriptError, ScriptedBackend};
use crate::roles::{
    format_sensor_input, format_vision_input, role_specs, wire_agents, Backends, RoleError,
    RolePromptSet, SystemHandle,
};
use crate::telemetry::{load_records, parse_record, LogError, LogSink, RecordKind};
use crate::world::{
    apply_water_event, lidar_scan, observe_scene, Obstacle, World, WorldState,
};

/// Rules used when a scripted config names no script files.
pub const DEFAULT_SCRIPT: &str = include_str!("../assets/scripts/default.script");

const WORLD: &str = "world";
const HUMAN: &str = "human";
const MAX_DRAIN_STEPS: usize = 10_000;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("prompts: {0}")]
    Prompts(RoleError),
    #[error("backend: {0}")]
    Backend(String),
    #[error("script: {0}")]
    Script(#[from] ScriptError),
    #[error("log sink: {0}")]
    Log(#[from] LogError),
    #[error("bus: {0}")]
    Bus(#[from] BusError),
    #[error("agents: {0}")]
    Agents(RoleError),
    #[error("console: cannot bind {addr}: {source}")]
    Console {
        addr: String,
        source: std::io::Error,
    },
}

pub fn build_backend(cfg: &RunConfig) -> Result<Arc<dyn Backend>, GatewayError> {
    match cfg.backend.kind {
        BackendKind::Scripted => {
            let mut rules = Vec::new();
            if cfg.backend.scripts.is_empty() {
                rules = parse_script(DEFAULT_SCRIPT)?;
            }
            for p in &cfg.backend.scripts {
                let more = load_script(p).map_err(|e| match e {
                    ScriptError::Parse { .. } => GatewayError::Backend(format!("{}: {e}", p.display())),
                    io => GatewayError::Script(io),
                })?;
                rules.extend(more);
            }
            Ok(Arc::new(ScriptedBackend::new(rules, cfg.backend.default_response.clone())))
        }
        #[cfg(feature = "live")]
        BackendKind::Live => {
            let live = LiveBackend::new(cfg.backend.live.to_live_config())
                .map_err(|e| GatewayError::Backend(e.to_string()))?;
            Ok(Arc::new(live))
        }
        #[cfg(not(feature = "live"))]
        BackendKind::Live => Err(GatewayError::Backend(
            "built without the \"live\" feature".into(),
        )),
    }
}

struct LocalAgent {
    agent: Agent,
    inbox: Subscription,
    publisher: Publisher,
    backend: Arc<dyn Backend>,
}

enum Agents {
    Lockstep(Vec<LocalAgent>),
    Threaded {
        system: SystemHandle,
        reports: Receiver<AgentReport>,
    },
}

/// Running totals exposed for tests and the CLI summary.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunStats {
    pub ticks: u64,
    pub collisions: u64,
    pub reflex_engagements: u64,
    /// Smallest robot-center-to-obstacle distance seen after a step.
    pub min_clearance: f64,
}

struct ActiveCommand {
    cmd: MotorCommand,
    remaining: f64,
}

pub struct Simulation {
    cfg: RunConfig,
    scenario: Scenario,
    world: World,
    clock: Arc<SimClock>,
    bus: Bus,
    agents: Agents,
    world_inbox: Subscription,
    world_pub: Publisher,
    human_pub: Publisher,
    sink: LogSink,
    schedule: VecDeque<ScenarioEvent>,
    commands: VecDeque<ConsoleCommand>,
    active: Option<ActiveCommand>,
    reflex_engaged: bool,
    paused: bool,
    tick: u64,
    next_sensor_s: f64,
    next_vision_s: f64,
    next_pose_s: f64,
    last_vision: Option<String>,
    collect: bool,
    outbox: Vec<ConsoleEvent>,
    console: Option<ConsoleServer>,
    stats: RunStats,
}

impl Simulation {
    /// Loads the scenario and prompts, builds backends and agents and
    /// opens the log sink.
    pub fn new(cfg: RunConfig) -> Result<Self, GatewayError> {
        cfg.validate()?;
        let scenario = Scenario::load(&cfg.scenario)?;
        let backend = build_backend(&cfg)?;
        Self::with_backends(cfg, scenario, Backends::uniform(backend))
    }

    pub fn with_backends(cfg: RunConfig, scenario: Scenario, backends: Backends) -> Result<Self, GatewayError> {
        scenario.validate()?;
        let prompts = RolePromptSet::load(&cfg.prompts).map_err(GatewayError::Prompts)?;
        let run_id = cfg.run_id();
        let sink = match &cfg.log {
            Some(p) => LogSink::create(p, &run_id)?,
            None => LogSink::null(&run_id),
        };
        let clock = Arc::new(SimClock::new());
        let bus = Bus::new(cfg.route_table()?, clock.clone());
        let world_inbox = bus.subscribe(WORLD, "/plantbot/action2/out")?;

        let agents = match cfg.mode {
            Mode::Lockstep => {
                let mut out = Vec::new();
                for spec in role_specs(&prompts, &cfg.capacities) {
                    let mut inbox = None;
                    for p in &spec.subscriptions {
                        inbox = Some(bus.subscribe_bounded(&spec.id, p, AGENT_QUEUE_BOUND)?);
                    }
                    let backend = backends.get(&spec.id).map_err(GatewayError::Agents)?;
                    out.push(LocalAgent {
                        publisher: bus.publisher(&spec.id),
                        inbox: inbox.expect("role agents subscribe to something"),
                        agent: Agent::with_refresh(spec, cfg.refresh_s),
                        backend,
                    });
                }
                Agents::Lockstep(out)
            }
            Mode::Threaded => {
                let (tx, rx) = mpsc::channel();
                let system = wire_agents(&prompts, &bus, &backends, &cfg.capacities, cfg.refresh_s, Some(tx))
                    .map_err(GatewayError::Agents)?;
                Agents::Threaded { system, reports: rx }
            }
        };

        let mut state = WorldState::new(scenario.robot.pose(), scenario.soil);
        state.track_width = scenario.robot.track_width;
        state.obstacles = scenario.obstacles.clone();
        state.bounds = scenario.bounds;
        let world = World::new(state, scenario.soil_params, cfg.seed);

        let mut events = scenario.events.clone();
        events.sort_by(|a, b| a.at_s.total_cmp(&b.at_s));
        let ticks = cfg.ticks;
        let mut sim = Self {
            world_pub: bus.publisher(WORLD),
            human_pub: bus.publisher(HUMAN),
            world,
            clock,
            bus,
            agents,
            world_inbox,
            sink,
            schedule: events.into(),
            commands: VecDeque::new(),
            active: None,
            reflex_engaged: false,
            paused: false,
            tick: 0,
            next_sensor_s: ticks.sensor_s,
            next_vision_s: ticks.vision_s,
            next_pose_s: 0.0,
            last_vision: None,
            collect: false,
            outbox: Vec::new(),
            console: None,
            stats: RunStats {
                min_clearance: f64::INFINITY,
                ..RunStats::default()
            },
            scenario,
            cfg,
        };
        sim.stats.min_clearance = sim.world.state.clearance();
        Ok(sim)
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn world(&self) -> &WorldState {
        &self.world.state
    }

    pub fn bus(&self) -> &Bus {
        &self.bus
    }

    pub fn stats(&self) -> RunStats {
        self.stats
    }

    pub fn is_paused(&self) -> bool {
        self.paused
    }

    pub fn now_ms(&self) -> u64 {
        self.clock.now_ms()
    }

    /// Simulated seconds elapsed.
    pub fn time_s(&self) -> f64 {
        self.world.state.time_s
    }

    pub fn finished(&self) -> bool {
        self.time_s() >= self.scenario.duration_s - 1e-9
    }

    /// Keeps console events produced by ticks for [`Simulation::take_events`].
    pub fn collect_events(&mut self, on: bool) {
        self.collect = on;
    }

    pub fn take_events(&mut self) -> Vec<ConsoleEvent> {
        std::mem::take(&mut self.outbox)
    }

    pub fn attach_console(&mut self, server: ConsoleServer) {
        self.console = Some(server);
    }

    pub fn console_addr(&self) -> Option<SocketAddr> {
        self.console.as_ref().map(ConsoleServer::local_addr)
    }

    pub fn console_clients(&self) -> usize {
        self.console.as_ref().map_or(0, ConsoleServer::client_count)
    }

    /// Queues a command for the next tick.
    pub fn submit(&mut self, cmd: ConsoleCommand) {
        self.commands.push_back(cmd);
    }

    /// Applies `cmd` on a tick of its own and returns the events that tick
    /// produced; the first one acknowledges the command.
    pub fn handle_command(&mut self, cmd: ConsoleCommand) -> Result<Vec<ConsoleEvent>, GatewayError> {
        let was = self.collect;
        self.collect = true;
        let before = self.outbox.len();
        self.submit(cmd);
        let res = self.step();
        let events = self.outbox.split_off(before);
        if was {
            self.outbox.extend(events.iter().cloned());
        }
        self.collect = was;
        res.map(|_| events)
    }

    fn pose(&self) -> [f64; 3] {
        let p = self.world.state.pose;
        [p.x, p.y, p.heading]
    }

    fn log(&mut self, agent: &str, kind: RecordKind, text: &str, flag: Option<u8>) -> Result<(), GatewayError> {
        let pose = matches!(kind, RecordKind::World | RecordKind::Motor).then(|| self.pose());
        let rec = self
            .sink
            .record(self.clock.now_ms(), agent, kind, text, flag, pose)?;
        if self.collect || self.console.is_some() {
            let ev = record_to_event(&rec, &self.cfg.thresholds);
            if let Some(c) = &self.console {
                c.broadcast(&ev);
            }
            if self.collect {
                self.outbox.push(ev);
            }
        }
        Ok(())
    }

    fn log_soil(&mut self) -> Result<(), GatewayError> {
        let line = format_sensor_input(&self.world.state.soil, &self.cfg.thresholds);
        self.log(WORLD, RecordKind::World, &line, None)
    }

    fn apply(&mut self, cmd: ConsoleCommand) -> Result<(), GatewayError> {
        if let Err(reason) = cmd.validate() {
            return self.log("gateway", RecordKind::Error, &reason, None);
        }
        match cmd {
            ConsoleCommand::UserUtterance(text) => {
                self.human_pub.send("/plantbot/human/in", text.clone())?;
                self.log(HUMAN, RecordKind::Utterance, &text, None)?;
            }
            ConsoleCommand::SetSoilMoisture(m) => {
                self.world.set_moisture(m);
                self.log_soil()?;
            }
            ConsoleCommand::Water(liters) => {
                apply_water_event(&mut self.world.state, liters);
                self.log(WORLD, RecordKind::World, &format!("water {liters:.2} L"), None)?;
            }
            ConsoleCommand::AddObstacle { x, y, r } => {
                self.world.state.obstacles.push(Obstacle::Circle { x, y, r });
                self.log(
                    WORLD,
                    RecordKind::World,
                    &format!("add_obstacle x={x:.2} y={y:.2} r={r:.2}"),
                    None,
                )?;
            }
            ConsoleCommand::Pause => {
                self.paused = true;
                self.log(WORLD, RecordKind::World, "paused", None)?;
            }
            ConsoleCommand::Resume => {
                self.paused = false;
                self.log(WORLD, RecordKind::World, "resumed", None)?;
            }
        }
        Ok(())
    }

    fn absorb(&mut self, agent: &str, published: Option<&str>, events: &[AgentEvent]) -> Result<(), GatewayError> {
        let completion = events.iter().find_map(|e| match e {
            AgentEvent::Completion(t) => Some(t.clone()),
            _ => None,
        });
        for ev in events {
            match ev {
                AgentEvent::Decision { decision, .. } => {
                    let text = completion.clone().unwrap_or_else(|| decision.render());
                    self.log(agent, RecordKind::Decision, &text, Some(decision.flag()))?;
                }
                AgentEvent::ParseFallback { raw, error } => {
                    self.log(agent, RecordKind::Error, &format!("{error}; used safe default for {raw:?}"), None)?;
                }
                AgentEvent::BackendFailure(e) => {
                    self.log(agent, RecordKind::Error, &format!("backend failure: {e}"), None)?;
                }
                AgentEvent::InputRejected(e) => {
                    self.log(agent, RecordKind::Error, &format!("input rejected: {e}"), None)?;
                }
                AgentEvent::Completion(_) | AgentEvent::Motor(_) => {}
            }
        }
        if let Some(text) = published {
            self.log(agent, RecordKind::Utterance, text, None)?;
        }
        Ok(())
    }

    /// Lets agents handle everything pending, one envelope per agent per
    /// round, in role order.
    fn drain_agents(&mut self) -> Result<(), GatewayError> {
        match &mut self.agents {
            Agents::Lockstep(_) => {
                let Agents::Lockstep(mut agents) = std::mem::replace(&mut self.agents, Agents::Lockstep(Vec::new())) else {
                    unreachable!()
                };
                let res = self.drain_lockstep(&mut agents);
                self.agents = Agents::Lockstep(agents);
                res
            }
            Agents::Threaded { reports, .. } => {
                let pending: Vec<AgentReport> = reports.try_iter().collect();
                for r in pending {
                    let text = r.published.as_ref().map(|e| e.payload.clone());
                    self.absorb(&r.agent, text.as_deref(), &r.events)?;
                }
                Ok(())
            }
        }
    }

    fn drain_lockstep(&mut self, agents: &mut [LocalAgent]) -> Result<(), GatewayError> {
        let now = self.clock.now_ms();
        for _ in 0..MAX_DRAIN_STEPS {
            let mut progressed = false;
            for a in agents.iter_mut() {
                let Some(first) = a.inbox.try_recv() else {
                    continue;
                };
                let env = if a.agent.spec.coalesce {
                    a.inbox.drain().pop().unwrap_or(first)
                } else {
                    first
                };
                progressed = true;
                let Outcome { publish, events } = a.agent.handle(&env, a.backend.as_ref(), now);
                if let Some(text) = &publish {
                    a.publisher.send(&a.agent.spec.output_topic, text.clone())?;
                }
                let id = a.agent.spec.id.clone();
                self.absorb(&id, publish.as_deref(), &events)?;
            }
            if !progressed {
                return Ok(());
            }
        }
        self.log("gateway", RecordKind::Error, "agent cascade did not settle", None)
    }

    fn publish_inputs(&mut self) -> Result<(), GatewayError> {
        let t = self.time_s() + 1e-9;
        let ticks = self.cfg.ticks;
        if t >= self.next_sensor_s {
            self.next_sensor_s += ticks.sensor_s;
            let line = format_sensor_input(&self.world.state.soil, &self.cfg.thresholds);
            self.world_pub.send("/plantbot/sensor/in", line.clone())?;
            self.log(WORLD, RecordKind::World, &line, None)?;
        }
        if t >= self.next_vision_s {
            self.next_vision_s += ticks.vision_s;
            let obs = observe_scene(
                &self.world.state,
                &self.scenario.entities,
                &self.scenario.vision,
                &self.scenario.lidar,
            );
            let text = format_vision_input(&obs);
            if self.last_vision.as_deref() != Some(text.as_str()) {
                self.world_pub.send("/plantbot/vision/in", text.clone())?;
                self.last_vision = Some(text);
            }
        }
        Ok(())
    }

    fn take_motor_commands(&mut self) -> Result<(), GatewayError> {
        for env in self.world_inbox.drain() {
            let vc = match parse_motor_command(&env.payload) {
                Ok(vc) => vc,
                Err(e) => {
                    self.log(WORLD, RecordKind::Error, &format!("motor command ignored: {e}"), None)?;
                    continue;
                }
            };
            let drive = DriveParams {
                track_width: self.world.state.track_width,
                ..self.cfg.drive
            };
            let cmd = to_motor(&vc, &drive);
            self.active = (!cmd.is_stop()).then_some(ActiveCommand {
                cmd,
                remaining: cmd.duration,
            });
            self.log(
                WORLD,
                RecordKind::Motor,
                &format!(
                    "{vc} -> left={:.2} right={:.2} duration={:.2}",
                    cmd.left, cmd.right, cmd.duration
                ),
                None,
            )?;
        }
        Ok(())
    }

    /// One fixed world tick.
    pub fn step(&mut self) -> Result<(), GatewayError> {
        let t = self.time_s() + 1e-9;
        while self.schedule.front().is_some_and(|e| e.at_s <= t) {
            let ev = self.schedule.pop_front().unwrap();
            self.commands.push_back(ev.command);
        }
        if let Some(c) = &self.console {
            for incoming in c.poll() {
                match incoming {
                    Ok(cmd) => self.commands.push_back(cmd),
                    Err(e) => self.log("gateway", RecordKind::Error, &e, None)?,
                }
            }
        }
        while let Some(cmd) = self.commands.pop_front() {
            self.apply(cmd)?;
        }
        if self.paused {
            self.drain_agents()?;
            return Ok(());
        }

        if t >= self.next_pose_s {
            self.next_pose_s += self.cfg.ticks.pose_s;
            self.log(WORLD, RecordKind::World, POSE_TEXT, None)?;
        }
        self.publish_inputs()?;
        self.drain_agents()?;
        self.take_motor_commands()?;

        let dt = self.cfg.ticks.dt_s;
        let wanted = self.active.as_ref().map_or(MotorCommand::stop(), |a| a.cmd);
        let scan = lidar_scan(&self.world.state, &self.scenario.lidar);
        let applied = reflex_avoid(&wanted, &scan, &self.cfg.reflex);
        let engaged = applied != wanted;
        if engaged && !self.reflex_engaged {
            self.stats.reflex_engagements += 1;
            let side = if applied.right > applied.left { "left" } else { "right" };
            let d = front_min_range(&scan, self.cfg.reflex.sector_deg);
            self.log(
                WORLD,
                RecordKind::Motor,
                &format!("reflex: obstacle at {d:.2} m, turning {side}"),
                None,
            )?;
        }
        self.reflex_engaged = engaged;

        let was_collided = self.world.state.collided;
        self.world.tick(&applied, dt);
        if let Some(a) = &mut self.active {
            a.remaining -= dt;
            if a.remaining <= 1e-9 {
                self.active = None;
            }
        }
        self.tick += 1;
        self.stats.ticks = self.tick;
        self.stats.min_clearance = self.stats.min_clearance.min(self.world.state.clearance());
        // tick count × dt keeps the clock free of accumulated rounding
        self.clock.set_ms((self.tick as f64 * dt * 1000.0).round() as u64);
        self.world.state.time_s = self.tick as f64 * dt;
        if self.world.state.collided && !was_collided {
            self.stats.collisions += 1;
            self.log(WORLD, RecordKind::World, "collision", None)?;
        }
        Ok(())
    }

    /// Steps until the scenario ends. With `realtime`, each tick waits for
    /// its wall-clock slot; while paused, ticks keep polling commands.
    pub fn run_to_end(&mut self, realtime: bool) -> Result<(), GatewayError> {
        let start = Instant::now();
        let mut paused_for = Duration::ZERO;
        while !self.finished() {
            let pause_start = self.paused.then(Instant::now);
            self.step()?;
            if realtime {
                if let Some(p) = pause_start {
                    std::thread::sleep(Duration::from_secs_f64(self.cfg.ticks.dt_s));
                    paused_for += p.elapsed();
                    continue;
                }
                let due = Duration::from_secs_f64(self.time_s()) + paused_for;
                if let Some(wait) = due.checked_sub(start.elapsed()) {
                    std::thread::sleep(wait);
                }
            }
        }
        self.sink.flush()?;
        Ok(())
    }

    /// Stops threaded agents and flushes the log.
    pub fn finish(mut self) -> Result<RunStats, GatewayError> {
        self.sink.flush()?;
        if let Agents::Threaded { system, .. } = std::mem::replace(&mut self.agents, Agents::Lockstep(Vec::new())) {
            system.stop();
        }
        self.bus.shutdown();
        Ok(self.stats)
    }
}

/// Options layered over the config by the CLI.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub duration_s: Option<f64>,
    /// Skip wall-clock pacing.
    pub fast: bool,
    /// No console server even if the config names one.
    pub headless: bool,
}

/// Runs a config to completion and returns the run statistics.
pub fn run(cfg: RunConfig, opts: &RunOptions) -> Result<RunStats, GatewayError> {
    cfg.validate()?;
    let mut scenario = Scenario::load(&cfg.scenario)?;
    if let Some(d) = opts.duration_s {
        scenario.duration_s = d;
    }
    let backend = build_backend(&cfg)?;
    let bind = if opts.headless { None } else { cfg.console_bind.clone() };
    let mut sim = Simulation::with_backends(cfg, scenario, Backends::uniform(backend))?;
    if let Some(addr) = bind {
        let server = ConsoleServer::bind(&addr)?;
        tracing::info!(addr = %server.local_addr(), "console listening");
        sim.attach_console(server);
    }
    sim.run_to_end(!opts.fast)?;
    sim.finish()
}

/// Buffer per console client; a client this far behind is dropped.
pub const CLIENT_BUFFER: usize = 1024;

/// Line-framed JSON over TCP. Events fan out to every client; commands
/// from all clients are merged into one queue polled by the tick loop.
pub struct ConsoleServer {
    addr: SocketAddr,
    clients: Arc<Mutex<Vec<SyncSender<String>>>>,
    commands: Receiver<Result<ConsoleCommand, String>>,
}

impl ConsoleServer {
    pub fn bind(addr: &str) -> Result<Self, GatewayError> {
        let listener = TcpListener::bind(addr).map_err(|source| GatewayError::Console {
            addr: addr.to_owned(),
            source,
        })?;
        let local = listener.local_addr().map_err(|source| GatewayError::Console {
            addr: addr.to_owned(),
            source,
        })?;
        let clients: Arc<Mutex<Vec<SyncSender<String>>>> = Arc::default();
        let (tx, rx) = mpsc::channel();
        {
            let clients = clients.clone();
            std::thread::Builder::new()
                .name("console-accept".into())
                .spawn(move || {
                    for stream in listener.incoming() {
                        match stream {
                            Ok(s) => Self::serve_client(s, &clients, tx.clone()),
                            Err(e) => tracing::warn!(error = %e, "console accept failed"),
                        }
                    }
                })
                .expect("spawn console thread");
        }
        Ok(Self {
            addr: local,
            clients,
            commands: rx,
        })
    }

    fn serve_client(
        stream: TcpStream,
        clients: &Arc<Mutex<Vec<SyncSender<String>>>>,
        commands: Sender<Result<ConsoleCommand, String>>,
    ) {
        let Ok(read_half) = stream.try_clone() else {
            return;
        };
        let (out_tx, out_rx) = mpsc::sync_channel::<String>(CLIENT_BUFFER);
        clients.lock().unwrap().push(out_tx);
        std::thread::spawn(move || {
            let mut w = stream;
            for line in out_rx {
                if writeln!(w, "{line}").is_err() {
                    break;
                }
            }
        });
        std::thread::spawn(move || {
            for line in BufReader::new(read_half).lines() {
                let Ok(line) = line else { break };
                if line.trim().is_empty() {
                    continue;
                }
                if commands.send(crate::console::parse_command(&line)).is_err() {
                    break;
                }
            }
        });
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn client_count(&self) -> usize {
        self.clients.lock().unwrap().len()
    }

    pub fn broadcast(&self, ev: &ConsoleEvent) {
        let line = ev.to_line();
        self.clients
            .lock()
            .unwrap()
            .retain(|c| match c.try_send(line.clone()) {
                Ok(()) => true,
                Err(TrySendError::Full(_)) => {
                    tracing::warn!("dropping slow console client");
                    false
                }
                Err(TrySendError::Disconnected(_)) => false,
            });
    }

    pub fn poll(&self) -> Vec<Result<ConsoleCommand, String>> {
        self.commands.try_iter().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ReplaySummary {
    pub emitted: usize,
    /// 1-based line of the first corrupt record, if any.
    pub stopped_at_line: Option<usize>,
}

/// Re-emits the console events of a log. `speed` scales the recorded
/// timeline (10 plays a minute in six seconds); zero or less means no
/// waiting. Stops at the first corrupt line.
pub fn replay(
    path: &Path,
    speed: f64,
    thresholds: &crate::roles::SoilThresholds,
    mut emit: impl FnMut(ConsoleEvent),
) -> Result<ReplaySummary, LogError> {
    let file = std::fs::File::open(path).map_err(|source| LogError::Open {
        path: path.display().to_string(),
        source,
    })?;
    let start = Instant::now();
    let mut first_ts = None;
    let mut summary = ReplaySummary::default();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let Some(rec) = parse_record(&line) else {
            summary.stopped_at_line = Some(i + 1);
            break;
        };
        let t0 = *first_ts.get_or_insert(rec.timestamp_ms);
        if speed > 0.0 && speed.is_finite() {
            let due = Duration::from_secs_f64(rec.timestamp_ms.saturating_sub(t0) as f64 / 1000.0 / speed);
            if let Some(wait) = due.checked_sub(start.elapsed()) {
                std::thread::sleep(wait);
            }
        }
        emit(record_to_event(&rec, thresholds));
        summary.emitted += 1;
    }
    Ok(summary)
}

/// Number of records a log would replay (all well-formed lines).
pub fn loggable_records(path: &Path) -> Result<usize, LogError> {
    Ok(load_records(path)?.records.len())
}
