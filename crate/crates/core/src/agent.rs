//! Generic agent chassis: bounded history, prompt assembly, per-role
//! postprocessing, and a threaded run loop over the bus.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::Sender;
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::action::{
    parse_decision, parse_motor_command, Decision, Suppressor, VerbCommand,
};
use crate::bus::{parse_topic, Bus, BusError, Envelope};
use crate::llm::{Backend, ChatTurn, CompletionRequest};
use crate::roles::format_chat_input;

/// Inbound queue bound for agent inboxes.
pub const AGENT_QUEUE_BOUND: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Postprocessor {
    /// Publish the completion text as-is.
    Plain,
    /// Read a `[0]`/`[1]` decision and suppress repeats.
    Decision,
    /// Gate on the latest decision and emit a `CMD:` line.
    Motor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputFormat {
    /// Payload is the user turn.
    Raw,
    /// Payload prefixed with its source agent, e.g. `[sensor] ...`.
    Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub id: String,
    pub role_prompt: String,
    pub history_capacity: usize,
    pub subscriptions: Vec<String>,
    pub output_topic: String,
    pub tick_ms: Option<u64>,
    pub postprocessor: Postprocessor,
    pub input_format: InputFormat,
    /// Prompt only the newest of several queued inputs.
    pub coalesce: bool,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl AgentSpec {
    pub fn new(id: &str, role_prompt: &str, output_topic: &str) -> Self {
        Self {
            id: id.to_owned(),
            role_prompt: role_prompt.to_owned(),
            history_capacity: 10,
            subscriptions: Vec::new(),
            output_topic: output_topic.to_owned(),
            tick_ms: None,
            postprocessor: Postprocessor::Plain,
            input_format: InputFormat::Raw,
            coalesce: false,
            model: String::new(),
            temperature: 0.7,
            max_tokens: 256,
        }
    }

    pub fn validate(&self) -> Result<(), BusError> {
        parse_topic(&self.output_topic)?;
        for s in &self.subscriptions {
            crate::bus::TopicPattern::new(s.as_str())?;
        }
        Ok(())
    }
}

/// Fixed-capacity turn memory; evicts oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryBuffer {
    capacity: usize,
    entries: VecDeque<ChatTurn>,
}

impl HistoryBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            entries: VecDeque::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &ChatTurn> {
        self.entries.iter()
    }

    pub fn append(&mut self, turn: ChatTurn) {
        history_append(self, turn)
    }
}

pub fn history_append(buf: &mut HistoryBuffer, turn: ChatTurn) {
    if buf.capacity == 0 {
        return;
    }
    buf.entries.push_back(turn);
    while buf.entries.len() > buf.capacity {
        buf.entries.pop_front();
    }
}

/// `[system: role prompt] + history + [user: input]`.
pub fn build_prompt(spec: &AgentSpec, buf: &HistoryBuffer, new_input: &str) -> CompletionRequest {
    let mut turns = Vec::with_capacity(buf.len() + 2);
    turns.push(ChatTurn::system(spec.role_prompt.clone()));
    turns.extend(buf.entries().cloned());
    turns.push(ChatTurn::user(new_input));
    CompletionRequest {
        agent: spec.id.clone(),
        model: spec.model.clone(),
        turns,
        max_tokens: spec.max_tokens,
        temperature: spec.temperature,
    }
}

/// Side effects of handling one input, for logging.
#[derive(Debug, Clone, PartialEq)]
pub enum AgentEvent {
    /// Raw completion text, whether or not it was published.
    Completion(String),
    Decision {
        decision: Decision,
        emitted: bool,
    },
    Motor(VerbCommand),
    /// Output could not be parsed; the safe default was used.
    ParseFallback { raw: String, error: String },
    BackendFailure(String),
    InputRejected(String),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Outcome {
    pub publish: Option<String>,
    pub events: Vec<AgentEvent>,
}

/// One agent's state: spec, history and role-specific memory.
#[derive(Debug, Clone)]
pub struct Agent {
    pub spec: AgentSpec,
    history: HistoryBuffer,
    suppressor: Suppressor,
    /// Latest directive seen by a motor agent.
    directive: Option<Decision>,
    last_input: Option<Envelope>,
}

fn source_of(env: &Envelope) -> &str {
    parse_topic(&env.topic)
        .map(|(agent, _)| agent)
        .unwrap_or(env.source.as_str())
}

impl Agent {
    pub fn new(spec: AgentSpec) -> Self {
        Self::with_refresh(spec, Suppressor::DEFAULT_REFRESH_S)
    }

    pub fn with_refresh(spec: AgentSpec, refresh_s: f64) -> Self {
        let history = HistoryBuffer::new(spec.history_capacity);
        Self {
            spec,
            history,
            suppressor: Suppressor::new(refresh_s),
            directive: None,
            last_input: None,
        }
    }

    pub fn id(&self) -> &str {
        &self.spec.id
    }

    pub fn history(&self) -> &HistoryBuffer {
        &self.history
    }

    pub fn directive(&self) -> Option<&Decision> {
        self.directive.as_ref()
    }

    fn complete(
        &mut self,
        input: String,
        backend: &dyn Backend,
        events: &mut Vec<AgentEvent>,
    ) -> Option<String> {
        let req = build_prompt(&self.spec, &self.history, &input);
        match backend.complete(&req) {
            Ok(text) => {
                self.history.append(ChatTurn::user(input));
                self.history.append(ChatTurn::assistant(text.clone()));
                events.push(AgentEvent::Completion(text.clone()));
                Some(text)
            }
            Err(e) => {
                tracing::warn!(agent = %self.spec.id, error = %e, "completion failed");
                events.push(AgentEvent::BackendFailure(e.to_string()));
                None
            }
        }
    }

    /// Processes one inbound envelope.
    pub fn handle(&mut self, env: &Envelope, backend: &dyn Backend, now_ms: u64) -> Outcome {
        let mut out = Outcome::default();
        self.last_input = Some(env.clone());
        let source = source_of(env).to_owned();

        let input = match self.spec.input_format {
            InputFormat::Raw => env.payload.clone(),
            InputFormat::Provenance => match format_chat_input(&source, &env.payload) {
                Ok(s) => s,
                Err(e) => {
                    out.events.push(AgentEvent::InputRejected(e.to_string()));
                    return out;
                }
            },
        };

        match self.spec.postprocessor {
            Postprocessor::Plain => {
                out.publish = self.complete(input, backend, &mut out.events);
            }
            Postprocessor::Decision => {
                let Some(text) = self.complete(input, backend, &mut out.events) else {
                    return out;
                };
                let (decision, publish) = match parse_decision(&text) {
                    Ok(d) => (d, text),
                    Err(e) => {
                        out.events.push(AgentEvent::ParseFallback {
                            raw: text,
                            error: e.to_string(),
                        });
                        let d = Decision::stop();
                        let rendered = d.render();
                        (d, rendered)
                    }
                };
                let emitted = self.suppressor.offer(&decision, now_ms as f64 / 1000.0);
                out.events.push(AgentEvent::Decision { decision, emitted });
                if emitted {
                    out.publish = Some(publish);
                }
            }
            Postprocessor::Motor => {
                if source == "chat" {
                    // context only; motion is gated on the decision agent
                    self.history.append(ChatTurn::user(format!("[chat] {}", env.payload)));
                    return out;
                }
                let directive = parse_decision(&env.payload).unwrap_or_else(|_| Decision::stop());
                self.directive = Some(directive.clone());
                let vc = if directive.moving {
                    let Some(text) = self.complete(
                        format!("[{source}] {}", env.payload),
                        backend,
                        &mut out.events,
                    ) else {
                        return out;
                    };
                    parse_motor_command(&text).unwrap_or_else(|e| {
                        out.events.push(AgentEvent::ParseFallback {
                            raw: text.clone(),
                            error: e.to_string(),
                        });
                        VerbCommand::stop()
                    })
                } else {
                    VerbCommand::stop()
                };
                out.events.push(AgentEvent::Motor(vc));
                out.publish = Some(vc.to_string());
            }
        }
        out
    }

    /// Re-prompts with the latest input; used for periodic ticks.
    pub fn tick(&mut self, backend: &dyn Backend, now_ms: u64) -> Outcome {
        match self.last_input.clone() {
            Some(env) => self.handle(&env, backend, now_ms),
            None => Outcome::default(),
        }
    }
}

/// Counters shared with a running agent thread.
#[derive(Debug, Default)]
pub struct AgentStats {
    pub handled: AtomicU64,
    pub published: AtomicU64,
    pub failures: AtomicU64,
}

/// What a threaded agent reports for logging.
#[derive(Debug, Clone)]
pub struct AgentReport {
    pub agent: String,
    pub timestamp_ms: u64,
    pub published: Option<Envelope>,
    pub events: Vec<AgentEvent>,
}

pub struct AgentHandle {
    id: String,
    stop: Arc<AtomicBool>,
    join: Option<JoinHandle<Agent>>,
    pub stats: Arc<AgentStats>,
}

impl AgentHandle {
    pub fn id(&self) -> &str {
        &self.id
    }

    /// Stops the loop and returns the agent's final state.
    pub fn stop(mut self) -> Option<Agent> {
        self.stop.store(true, Ordering::SeqCst);
        self.join.take().and_then(|j| j.join().ok())
    }
}

impl Drop for AgentHandle {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(j) = self.join.take() {
            let _ = j.join();
        }
    }
}

/// Runs `agent` on its own thread: one completion in flight at a time,
/// inbound envelopes queued (drop-oldest, bound 16) meanwhile.
pub fn run_agent(
    agent: Agent,
    bus: &Bus,
    backend: Arc<dyn Backend>,
    reports: Option<Sender<AgentReport>>,
) -> Result<AgentHandle, BusError> {
    agent.spec.validate()?;
    let mut inbox = None;
    for pattern in &agent.spec.subscriptions {
        inbox = Some(bus.subscribe_bounded(&agent.spec.id, pattern, AGENT_QUEUE_BOUND)?);
    }
    let publisher = bus.publisher(&agent.spec.id);
    let clock = bus.clock().clone();
    let stop = Arc::new(AtomicBool::new(false));
    let stats = Arc::new(AgentStats::default());
    let id = agent.spec.id.clone();

    let join = {
        let stop = stop.clone();
        let stats = stats.clone();
        std::thread::Builder::new()
            .name(format!("agent-{id}"))
            .spawn(move || {
                let mut agent = agent;
                let tick = agent.spec.tick_ms.map(Duration::from_millis);
                let mut last_tick = Instant::now();
                while !stop.load(Ordering::SeqCst) {
                    let next = inbox.as_ref().and_then(|q| {
                        let first = q.recv_timeout(Duration::from_millis(20))?;
                        if agent.spec.coalesce {
                            Some(q.drain().pop().unwrap_or(first))
                        } else {
                            Some(first)
                        }
                    });
                    let now = clock.now_ms();
                    let outcome = match next {
                        Some(env) => agent.handle(&env, backend.as_ref(), now),
                        None => match tick {
                            Some(t) if last_tick.elapsed() >= t => {
                                last_tick = Instant::now();
                                agent.tick(backend.as_ref(), now)
                            }
                            _ => {
                                if inbox.is_none() {
                                    std::thread::sleep(Duration::from_millis(20));
                                }
                                continue;
                            }
                        },
                    };
                    stats.handled.fetch_add(1, Ordering::Relaxed);
                    if outcome
                        .events
                        .iter()
                        .any(|e| matches!(e, AgentEvent::BackendFailure(_)))
                    {
                        stats.failures.fetch_add(1, Ordering::Relaxed);
                    }
                    let published = outcome.publish.as_ref().and_then(|text| {
                        match publisher.send(&agent.spec.output_topic, text.clone()) {
                            Ok((_, env)) => {
                                stats.published.fetch_add(1, Ordering::Relaxed);
                                Some(env)
                            }
                            Err(e) => {
                                tracing::error!(agent = %agent.spec.id, error = %e, "publish failed");
                                None
                            }
                        }
                    });
                    if let Some(tx) = &reports {
                        let _ = tx.send(AgentReport {
                            agent: agent.spec.id.clone(),
                            timestamp_ms: now,
                            published,
                            events: outcome.events,
                        });
                    }
                }
                agent
            })
            .expect("spawn agent thread")
    };
    Ok(AgentHandle {
        id,
        stop,
        join: Some(join),
        stats,
    })
}
