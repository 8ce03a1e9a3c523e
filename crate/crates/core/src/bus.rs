//! Topic-based publish/subscribe router.
//!
//! Topics follow `/plantbot/<agent>/<in|out>`. Every agent owns one bounded
//! inbox; `subscribe` attaches patterns to it. Delivery requires both a
//! matching subscription pattern and a matching route-table edge, so an
//! envelope can never reach an agent the topology does not allow.

use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, RwLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Clock;

pub const NAMESPACE_ROOT: &str = "plantbot";

/// Agent segments that may appear in a topic.
pub const KNOWN_AGENTS: [&str; 8] = [
    "sensor", "vision", "chat", "action1", "action2", "human", "speaker", "world",
];

pub const DEFAULT_QUEUE_BOUND: usize = 256;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BusError {
    #[error("topic {0:?} is outside the /plantbot/<agent>/<in|out> namespace")]
    UnknownTopic(String),
    #[error("invalid topic pattern {0:?}")]
    BadPattern(String),
    #[error("sequence {seq} from {source_id} is not greater than the last seen {last}")]
    SequenceRegression {
        source_id: String,
        seq: u64,
        last: u64,
    },
}

/// Which agent a topic belongs to and its direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TopicKind {
    In,
    Out,
}

pub fn topic(agent: &str, kind: TopicKind) -> String {
    let k = match kind {
        TopicKind::In => "in",
        TopicKind::Out => "out",
    };
    format!("/{NAMESPACE_ROOT}/{agent}/{k}")
}

/// Splits a namespaced topic into (agent, kind).
pub fn parse_topic(t: &str) -> Result<(&str, TopicKind), BusError> {
    let mut parts = t.split('/');
    let bad = || BusError::UnknownTopic(t.to_owned());
    if parts.next() != Some("") || parts.next() != Some(NAMESPACE_ROOT) {
        return Err(bad());
    }
    let agent = parts.next().ok_or_else(bad)?;
    let kind = match parts.next() {
        Some("in") => TopicKind::In,
        Some("out") => TopicKind::Out,
        _ => return Err(bad()),
    };
    if parts.next().is_some() || !KNOWN_AGENTS.contains(&agent) {
        return Err(bad());
    }
    Ok((agent, kind))
}

/// A segment-wise glob: `*` matches exactly one path segment.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct TopicPattern(String);

impl TopicPattern {
    pub fn new(p: impl Into<String>) -> Result<Self, BusError> {
        let p = p.into();
        if !p.starts_with('/') || p.contains(char::is_whitespace) || p.contains("//") {
            return Err(BusError::BadPattern(p));
        }
        Ok(Self(p))
    }

    pub fn matches(&self, topic: &str) -> bool {
        let mut pat = self.0.split('/');
        let mut top = topic.split('/');
        loop {
            match (pat.next(), top.next()) {
                (None, None) => return true,
                (Some("*"), Some(_)) => {}
                (Some(a), Some(b)) if a == b => {}
                _ => return false,
            }
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for TopicPattern {
    type Error = BusError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        Self::new(s)
    }
}

impl From<TopicPattern> for String {
    fn from(p: TopicPattern) -> String {
        p.0
    }
}

impl std::fmt::Display for TopicPattern {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Envelope {
    pub seq: u64,
    pub timestamp_ms: u64,
    pub source: String,
    pub topic: String,
    pub payload: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RouteEdge {
    pub pattern: TopicPattern,
    pub agent: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RouteTable {
    pub edges: Vec<RouteEdge>,
}

impl RouteTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_edge(mut self, pattern: &str, agent: &str) -> Self {
        self.add(TopicPattern::new(pattern).expect("static pattern"), agent);
        self
    }

    pub fn add(&mut self, pattern: TopicPattern, agent: &str) {
        let edge = RouteEdge {
            pattern,
            agent: agent.to_owned(),
        };
        if !self.edges.contains(&edge) {
            self.edges.push(edge);
        }
    }

    /// The agent network topology: perception into chat, chat fanned out to
    /// the speaker and both action agents, action1 into action2, action2
    /// into the world. The world feeds the sensor and vision agents.
    pub fn default_topology() -> Self {
        Self::new()
            .with_edge("/plantbot/sensor/out", "chat")
            .with_edge("/plantbot/vision/out", "chat")
            .with_edge("/plantbot/human/in", "chat")
            .with_edge("/plantbot/chat/out", "speaker")
            .with_edge("/plantbot/chat/out", "action1")
            .with_edge("/plantbot/chat/out", "action2")
            .with_edge("/plantbot/action1/out", "action2")
            .with_edge("/plantbot/action2/out", "world")
            .with_edge("/plantbot/sensor/in", "sensor")
            .with_edge("/plantbot/vision/in", "vision")
    }

    pub fn allows(&self, topic: &str, agent: &str) -> bool {
        self.edges
            .iter()
            .any(|e| e.agent == agent && e.pattern.matches(topic))
    }

    /// Agents a topic is routed to, in edge order.
    pub fn destinations(&self, topic: &str) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for e in &self.edges {
            if e.pattern.matches(topic) && !out.contains(&e.agent.as_str()) {
                out.push(&e.agent);
            }
        }
        out
    }

    /// Checks that every edge of the default topology is present.
    pub fn contains_default_topology(&self) -> bool {
        Self::default_topology()
            .edges
            .iter()
            .all(|e| self.edges.contains(e))
    }
}

struct QueueState {
    items: VecDeque<Envelope>,
    closed: bool,
}

/// Bounded drop-oldest FIFO with a blocking receiver side.
pub(crate) struct BoundedQueue {
    bound: usize,
    state: Mutex<QueueState>,
    ready: Condvar,
    dropped: AtomicU64,
}

impl BoundedQueue {
    fn new(bound: usize) -> Self {
        Self {
            bound: bound.max(1),
            state: Mutex::new(QueueState {
                items: VecDeque::new(),
                closed: false,
            }),
            ready: Condvar::new(),
            dropped: AtomicU64::new(0),
        }
    }

    /// Returns true when an older entry had to be dropped.
    fn push(&self, env: Envelope) -> bool {
        let mut st = self.state.lock().unwrap();
        let mut dropped = false;
        while st.items.len() >= self.bound {
            st.items.pop_front();
            dropped = true;
        }
        if dropped {
            self.dropped.fetch_add(1, Ordering::Relaxed);
        }
        st.items.push_back(env);
        drop(st);
        self.ready.notify_one();
        dropped
    }

    fn try_pop(&self) -> Option<Envelope> {
        self.state.lock().unwrap().items.pop_front()
    }

    fn pop_timeout(&self, timeout: Duration) -> Option<Envelope> {
        let st = self.state.lock().unwrap();
        let (mut st, _) = self
            .ready
            .wait_timeout_while(st, timeout, |s| s.items.is_empty() && !s.closed)
            .unwrap();
        st.items.pop_front()
    }

    fn drain(&self) -> Vec<Envelope> {
        self.state.lock().unwrap().items.drain(..).collect()
    }

    fn len(&self) -> usize {
        self.state.lock().unwrap().items.len()
    }

    fn close(&self) {
        self.state.lock().unwrap().closed = true;
        self.ready.notify_all();
    }

    fn is_closed(&self) -> bool {
        self.state.lock().unwrap().closed
    }
}

/// Receiving side of an agent's inbox. One consumer per subscription.
#[derive(Clone)]
pub struct Subscription {
    agent: String,
    queue: Arc<BoundedQueue>,
}

impl Subscription {
    pub fn agent(&self) -> &str {
        &self.agent
    }

    pub fn try_recv(&self) -> Option<Envelope> {
        self.queue.try_pop()
    }

    pub fn recv_timeout(&self, timeout: Duration) -> Option<Envelope> {
        self.queue.pop_timeout(timeout)
    }

    /// Takes everything queued right now.
    pub fn drain(&self) -> Vec<Envelope> {
        self.queue.drain()
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dropped(&self) -> u64 {
        self.queue.dropped.load(Ordering::Relaxed)
    }

    pub fn is_closed(&self) -> bool {
        self.queue.is_closed()
    }

    pub fn iter(&self) -> impl Iterator<Item = Envelope> + '_ {
        std::iter::from_fn(move || self.try_recv())
    }
}

struct Inbox {
    patterns: Vec<TopicPattern>,
    queue: Arc<BoundedQueue>,
}

struct BusInner {
    routes: RwLock<RouteTable>,
    inboxes: RwLock<HashMap<String, Inbox>>,
    taps: RwLock<Vec<Arc<BoundedQueue>>>,
    sequences: Mutex<HashMap<String, Arc<AtomicU64>>>,
    last_seen: Mutex<HashMap<String, u64>>,
    clock: Arc<dyn Clock>,
    queue_bound: usize,
    dropped_total: AtomicU64,
}

/// In-process message bus. Cheap to clone; clones share state.
#[derive(Clone)]
pub struct Bus {
    inner: Arc<BusInner>,
}

impl Bus {
    pub fn new(routes: RouteTable, clock: Arc<dyn Clock>) -> Self {
        Self::with_queue_bound(routes, clock, DEFAULT_QUEUE_BOUND)
    }

    pub fn with_queue_bound(routes: RouteTable, clock: Arc<dyn Clock>, bound: usize) -> Self {
        Self {
            inner: Arc::new(BusInner {
                routes: RwLock::new(routes),
                inboxes: RwLock::new(HashMap::new()),
                taps: RwLock::new(Vec::new()),
                sequences: Mutex::new(HashMap::new()),
                last_seen: Mutex::new(HashMap::new()),
                clock,
                queue_bound: bound,
                dropped_total: AtomicU64::new(0),
            }),
        }
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.inner.clock
    }

    pub fn routes(&self) -> RouteTable {
        self.inner.routes.read().unwrap().clone()
    }

    /// Attaches `pattern` to `agent`'s inbox, creating it with the bus
    /// default bound if needed. Repeating a subscription is a no-op.
    pub fn subscribe(&self, agent: &str, pattern: &str) -> Result<Subscription, BusError> {
        self.subscribe_bounded(agent, pattern, self.inner.queue_bound)
    }

    /// Like [`Bus::subscribe`], but a newly created inbox uses `bound`.
    pub fn subscribe_bounded(
        &self,
        agent: &str,
        pattern: &str,
        bound: usize,
    ) -> Result<Subscription, BusError> {
        let pattern = TopicPattern::new(pattern)?;
        let mut inboxes = self.inner.inboxes.write().unwrap();
        let inbox = inboxes.entry(agent.to_owned()).or_insert_with(|| Inbox {
            patterns: Vec::new(),
            queue: Arc::new(BoundedQueue::new(bound)),
        });
        if !inbox.patterns.contains(&pattern) {
            inbox.patterns.push(pattern);
        }
        Ok(Subscription {
            agent: agent.to_owned(),
            queue: inbox.queue.clone(),
        })
    }

    pub fn unsubscribe(&self, agent: &str, pattern: &str) {
        if let Some(inbox) = self.inner.inboxes.write().unwrap().get_mut(agent) {
            inbox.patterns.retain(|p| p.as_str() != pattern);
        }
    }

    /// Receives a copy of every accepted envelope, regardless of routing.
    /// Used by log sinks and OSC egress, not by agents.
    pub fn tap(&self) -> Subscription {
        let queue = Arc::new(BoundedQueue::new(usize::MAX / 2));
        self.inner.taps.write().unwrap().push(queue.clone());
        Subscription {
            agent: "<tap>".into(),
            queue,
        }
    }

    /// Publisher handle for `source`. All handles for one source share a
    /// sequence counter.
    pub fn publisher(&self, source: &str) -> Publisher {
        let counter = self
            .inner
            .sequences
            .lock()
            .unwrap()
            .entry(source.to_owned())
            .or_insert_with(|| Arc::new(AtomicU64::new(0)))
            .clone();
        Publisher {
            bus: self.clone(),
            source: source.to_owned(),
            counter,
        }
    }

    /// Routes `env` to every permitted subscriber and returns how many
    /// inboxes received it.
    pub fn publish(&self, env: Envelope) -> Result<usize, BusError> {
        parse_topic(&env.topic)?;
        {
            let mut last = self.inner.last_seen.lock().unwrap();
            if let Some(&prev) = last.get(&env.source) {
                if env.seq <= prev {
                    return Err(BusError::SequenceRegression {
                        source_id: env.source.clone(),
                        seq: env.seq,
                        last: prev,
                    });
                }
            }
            last.insert(env.source.clone(), env.seq);
        }

        let targets: Vec<Arc<BoundedQueue>> = {
            let routes = self.inner.routes.read().unwrap();
            let inboxes = self.inner.inboxes.read().unwrap();
            let mut names: Vec<&String> = inboxes.keys().collect();
            names.sort();
            names
                .into_iter()
                .filter(|name| {
                    let inbox = &inboxes[*name];
                    inbox.patterns.iter().any(|p| p.matches(&env.topic))
                        && routes.allows(&env.topic, name)
                })
                .map(|name| inboxes[name].queue.clone())
                .collect()
        };

        for tap in self.inner.taps.read().unwrap().iter() {
            tap.push(env.clone());
        }
        let delivered = targets.len();
        for q in targets {
            if q.push(env.clone()) {
                self.inner.dropped_total.fetch_add(1, Ordering::Relaxed);
            }
        }
        Ok(delivered)
    }

    pub fn dropped_total(&self) -> u64 {
        self.inner.dropped_total.load(Ordering::Relaxed)
    }

    /// Closes every inbox so blocked receivers return.
    pub fn shutdown(&self) {
        for inbox in self.inner.inboxes.read().unwrap().values() {
            inbox.queue.close();
        }
        for tap in self.inner.taps.read().unwrap().iter() {
            tap.close();
        }
    }
}

#[derive(Clone)]
pub struct Publisher {
    bus: Bus,
    source: String,
    counter: Arc<AtomicU64>,
}

impl Publisher {
    pub fn source(&self) -> &str {
        &self.source
    }

    /// Stamps and publishes a payload on `topic`.
    pub fn send(&self, topic: &str, payload: impl Into<String>) -> Result<(usize, Envelope), BusError> {
        parse_topic(topic)?;
        let env = Envelope {
            seq: self.counter.fetch_add(1, Ordering::SeqCst) + 1,
            timestamp_ms: self.bus.inner.clock.now_ms(),
            source: self.source.clone(),
            topic: topic.to_owned(),
            payload: payload.into(),
        };
        let n = self.bus.publish(env.clone())?;
        Ok((n, env))
    }
}
