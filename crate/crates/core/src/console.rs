//! Operator console protocol: one JSON object per line in each direction.
//!
//! Commands (client → gateway):
//!
//! ```text
//! {"kind":"user_utterance","payload":"hello"}
//! {"kind":"set_soil_moisture","payload":12.0}
//! {"kind":"water","payload":0.5}
//! {"kind":"add_obstacle","payload":{"x":1.0,"y":0.0,"r":0.2}}
//! {"kind":"pause"}
//! {"kind":"resume"}
//! ```
//!
//! Events (gateway → client) are `{"kind":…,"payload":{…},"timestamp_ms":…}`
//! with kind one of `agent_msg`, `chat_reply`, `pose`, `soil`, `decision`,
//! `error`. Every event is derived from one log record, so a replayed log
//! yields the same stream a live client saw.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::roles::{parse_sensor_line, soil_tag, SoilThresholds, CHAT};
use crate::telemetry::{LogRecord, RecordKind};

/// Text of world records that carry a pose sample.
pub const POSE_TEXT: &str = "pose";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum ConsoleCommand {
    UserUtterance(String),
    SetSoilMoisture(f64),
    Water(f64),
    AddObstacle { x: f64, y: f64, r: f64 },
    Pause,
    Resume,
}

impl ConsoleCommand {
    /// Rejects values that would put the world in an invalid state.
    pub fn validate(&self) -> Result<(), String> {
        match self {
            ConsoleCommand::UserUtterance(t) if t.trim().is_empty() => Err("empty utterance".into()),
            ConsoleCommand::SetSoilMoisture(m) if !(0.0..=100.0).contains(m) => {
                Err(format!("moisture {m} outside [0, 100]"))
            }
            ConsoleCommand::Water(l) if !(l.is_finite() && *l > 0.0) => {
                Err(format!("water amount {l} must be positive"))
            }
            ConsoleCommand::AddObstacle { x, y, r }
                if !(x.is_finite() && y.is_finite() && r.is_finite() && *r > 0.0) =>
            {
                Err("obstacle needs finite x, y and positive r".into())
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    AgentMsg,
    ChatReply,
    Pose,
    Soil,
    Decision,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsoleEvent {
    pub kind: EventKind,
    pub payload: Value,
    pub timestamp_ms: u64,
}

impl ConsoleEvent {
    pub fn error(message: impl Into<String>, timestamp_ms: u64) -> Self {
        Self {
            kind: EventKind::Error,
            payload: json!({ "agent": "gateway", "text": message.into() }),
            timestamp_ms,
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("event serializes")
    }
}

pub fn parse_command(line: &str) -> Result<ConsoleCommand, String> {
    let cmd: ConsoleCommand =
        serde_json::from_str(line.trim()).map_err(|e| format!("malformed command: {e}"))?;
    cmd.validate()?;
    Ok(cmd)
}

pub fn parse_event(line: &str) -> Result<ConsoleEvent, serde_json::Error> {
    serde_json::from_str(line.trim())
}

/// The console event a log record stands for.
pub fn record_to_event(rec: &LogRecord, thresholds: &SoilThresholds) -> ConsoleEvent {
    let pose = rec.pose.map(|[x, y, h]| json!({ "x": x, "y": y, "heading": h }));
    let (kind, payload) = match rec.kind {
        RecordKind::Utterance if rec.agent == CHAT => (
            EventKind::ChatReply,
            json!({ "agent": rec.agent, "text": rec.text }),
        ),
        RecordKind::Utterance | RecordKind::Motor => (
            EventKind::AgentMsg,
            json!({ "agent": rec.agent, "text": rec.text, "pose": pose }),
        ),
        RecordKind::Decision => (
            EventKind::Decision,
            json!({ "agent": rec.agent, "flag": rec.flag, "text": rec.text }),
        ),
        RecordKind::Error => (
            EventKind::Error,
            json!({ "agent": rec.agent, "text": rec.text }),
        ),
        RecordKind::World => {
            if let Some(s) = parse_sensor_line(&rec.text) {
                (
                    EventKind::Soil,
                    json!({
                        "moisture": s.moisture,
                        "temperature": s.temperature,
                        "ph": s.ph,
                        "ec": s.ec,
                        "n": s.n,
                        "p": s.p,
                        "k": s.k,
                        "status": soil_tag(s.moisture, thresholds),
                    }),
                )
            } else if rec.text == POSE_TEXT && pose.is_some() {
                (EventKind::Pose, pose.unwrap())
            } else {
                (
                    EventKind::AgentMsg,
                    json!({ "agent": rec.agent, "text": rec.text, "pose": pose }),
                )
            }
        }
    };
    ConsoleEvent {
        kind,
        payload,
        timestamp_ms: rec.timestamp_ms,
    }
}

/// What a console shows, folded from the events it received.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ViewState {
    pub transcript: Vec<(String, String)>,
    pub feed: Vec<(String, String)>,
    pub pose: Option<Value>,
    pub soil: Option<Value>,
    pub moving: Option<bool>,
    pub errors: usize,
    pub last_timestamp_ms: u64,
}

impl ViewState {
    pub fn apply(&mut self, ev: &ConsoleEvent) {
        let field = |k: &str| ev.payload.get(k).and_then(Value::as_str).unwrap_or("").to_owned();
        self.last_timestamp_ms = self.last_timestamp_ms.max(ev.timestamp_ms);
        match ev.kind {
            EventKind::ChatReply => {
                self.transcript.push((field("agent"), field("text")));
                self.feed.push((field("agent"), field("text")));
            }
            EventKind::AgentMsg => {
                let agent = field("agent");
                if agent == "human" {
                    self.transcript.push((agent.clone(), field("text")));
                }
                self.feed.push((agent, field("text")));
            }
            EventKind::Pose => self.pose = Some(ev.payload.clone()),
            EventKind::Soil => self.soil = Some(ev.payload.clone()),
            EventKind::Decision => {
                if let Some(f) = ev.payload.get("flag").and_then(Value::as_u64) {
                    self.moving = Some(f == 1);
                }
            }
            EventKind::Error => self.errors += 1,
        }
    }

    pub fn fold<'a>(events: impl IntoIterator<Item = &'a ConsoleEvent>) -> Self {
        let mut v = Self::default();
        for e in events {
            v.apply(e);
        }
        v
    }
}
