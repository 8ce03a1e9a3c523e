//! OSC egress and ingress for the bus, so agents can live in other
//! processes. Each bridge runs on its own thread until stopped.
//!
//! Outbound bridges forward every envelope whose topic matches a pattern as
//! `OscMessage(topic, [payload])`. Inbound bridges publish every received
//! message whose address matches a pattern, taking the source agent from
//! the address. Use disjoint patterns on one bus to avoid echo loops.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use crate::bus::{parse_topic, Bus, TopicPattern};
use crate::osc::{Endpoint, OscMessage};

const POLL: Duration = Duration::from_millis(20);

#[derive(Debug, Clone)]
pub enum Direction {
    Outbound(TopicPattern),
    Inbound(TopicPattern),
}

/// Counters for a running bridge. Failures are counted, never fatal.
#[derive(Debug, Default)]
pub struct BridgeStats {
    pub forwarded: AtomicU64,
    pub failures: AtomicU64,
}

pub struct BridgeHandle {
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
    pub stats: Arc<BridgeStats>,
}

impl BridgeHandle {
    pub fn forwarded(&self) -> u64 {
        self.stats.forwarded.load(Ordering::Relaxed)
    }

    pub fn failures(&self) -> u64 {
        self.stats.failures.load(Ordering::Relaxed)
    }

    pub fn stop(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for BridgeHandle {
    fn drop(&mut self) {
        self.shutdown();
    }
}

pub fn bridge_osc(bus: &Bus, endpoint: &Endpoint, direction: Direction) -> BridgeHandle {
    let stop = Arc::new(AtomicBool::new(false));
    let stats = Arc::new(BridgeStats::default());
    let thread = match direction {
        Direction::Outbound(pattern) => {
            let tap = bus.tap();
            let endpoint = endpoint.clone();
            let (stop, stats) = (stop.clone(), stats.clone());
            std::thread::Builder::new()
                .name("osc-out".into())
                .spawn(move || {
                    while !stop.load(Ordering::SeqCst) && !tap.is_closed() {
                        let Some(env) = tap.recv_timeout(POLL) else {
                            continue;
                        };
                        if !pattern.matches(&env.topic) {
                            continue;
                        }
                        let msg = OscMessage::text(env.topic, env.payload);
                        match endpoint.broadcast(&msg) {
                            Ok(()) => stats.forwarded.fetch_add(1, Ordering::Relaxed),
                            Err(e) => {
                                tracing::warn!(error = %e, "osc egress encode failed");
                                stats.failures.fetch_add(1, Ordering::Relaxed)
                            }
                        };
                    }
                })
        }
        Direction::Inbound(pattern) => {
            let bus = bus.clone();
            let endpoint = endpoint.clone();
            let (stop, stats) = (stop.clone(), stats.clone());
            std::thread::Builder::new()
                .name("osc-in".into())
                .spawn(move || {
                    while !stop.load(Ordering::SeqCst) {
                        let msg = match endpoint.receive_timeout(Some(POLL)) {
                            Ok(Some((msg, _))) => msg,
                            Ok(None) => continue,
                            Err(e) => {
                                tracing::warn!(error = %e, "osc ingress socket error");
                                stats.failures.fetch_add(1, Ordering::Relaxed);
                                std::thread::sleep(POLL);
                                continue;
                            }
                        };
                        if !pattern.matches(&msg.address) {
                            continue;
                        }
                        let published = match (parse_topic(&msg.address), msg.as_text()) {
                            (Ok((agent, _)), Some(text)) => {
                                bus.publisher(agent).send(&msg.address, text).is_ok()
                            }
                            _ => false,
                        };
                        if published {
                            stats.forwarded.fetch_add(1, Ordering::Relaxed);
                        } else {
                            tracing::debug!(address = %msg.address, "osc ingress rejected message");
                            stats.failures.fetch_add(1, Ordering::Relaxed);
                        }
                    }
                })
        }
    }
    .expect("spawn bridge thread");
    BridgeHandle {
        stop,
        thread: Some(thread),
        stats,
    }
}
