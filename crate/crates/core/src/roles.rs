//! The five role agents: default prompts, input formatters and wiring.

use std::collections::HashMap;
use std::path::Path;
use std::sync::mpsc::Sender;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{run_agent, Agent, AgentHandle, AgentReport, AgentSpec, InputFormat, Postprocessor};
use crate::bus::{Bus, BusError};
use crate::llm::Backend;
use crate::world::{EntityClass, SceneObservation, SoilState};

pub const SENSOR: &str = "sensor";
pub const VISION: &str = "vision";
pub const CHAT: &str = "chat";
pub const ACTION1: &str = "action1";
pub const ACTION2: &str = "action2";

/// Agent ids in the order the lockstep scheduler visits them.
pub const ROLE_IDS: [&str; 5] = [SENSOR, VISION, CHAT, ACTION1, ACTION2];

/// Required clause in the chat prompt.
pub const HYBRID_CLAUSE: &str = "hybrid system of plant and robot";

#[derive(Debug, Error)]
pub enum RoleError {
    #[error("unknown message source {0:?} (expected sensor, vision or human)")]
    UnknownSource(String),
    #[error("cannot read prompt {path}: {source}")]
    PromptIo {
        path: String,
        source: std::io::Error,
    },
    #[error("prompt for {agent} is invalid: {reason}")]
    PromptInvalid { agent: String, reason: String },
    #[error("no backend configured for agent {0}")]
    MissingBackend(String),
    #[error(transparent)]
    Bus(#[from] BusError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RolePromptSet {
    pub sensor: String,
    pub vision: String,
    pub chat: String,
    pub action1: String,
    pub action2: String,
}

impl Default for RolePromptSet {
    fn default() -> Self {
        Self {
            sensor: include_str!("../assets/prompts/sensor.txt").to_owned(),
            vision: include_str!("../assets/prompts/vision.txt").to_owned(),
            chat: include_str!("../assets/prompts/chat.txt").to_owned(),
            action1: include_str!("../assets/prompts/action1.txt").to_owned(),
            action2: include_str!("../assets/prompts/action2.txt").to_owned(),
        }
    }
}

impl RolePromptSet {
    pub fn get(&self, agent: &str) -> Option<&str> {
        Some(match agent {
            SENSOR => &self.sensor,
            VISION => &self.vision,
            CHAT => &self.chat,
            ACTION1 => &self.action1,
            ACTION2 => &self.action2,
            _ => return None,
        })
    }

    /// Reads one prompt per agent from `paths`, falling back to the shipped
    /// defaults for agents without an entry.
    pub fn load(paths: &HashMap<String, std::path::PathBuf>) -> Result<Self, RoleError> {
        let mut set = Self::default();
        for (agent, path) in paths {
            let text = read_prompt(path)?;
            let slot = match agent.as_str() {
                SENSOR => &mut set.sensor,
                VISION => &mut set.vision,
                CHAT => &mut set.chat,
                ACTION1 => &mut set.action1,
                ACTION2 => &mut set.action2,
                other => {
                    return Err(RoleError::PromptInvalid {
                        agent: other.to_owned(),
                        reason: "not a role agent".into(),
                    })
                }
            };
            *slot = text;
        }
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<(), RoleError> {
        let invalid = |agent: &str, reason: &str| RoleError::PromptInvalid {
            agent: agent.into(),
            reason: reason.into(),
        };
        if !self.chat.contains(HYBRID_CLAUSE) {
            return Err(invalid(CHAT, "must contain \"hybrid system of plant and robot\""));
        }
        if !(self.action1.contains("[0]") && self.action1.contains("[1]")) {
            return Err(invalid(ACTION1, "must instruct the [0]/[1] tag convention"));
        }
        if !self.action2.contains("CMD:") {
            return Err(invalid(ACTION2, "must instruct the CMD: line convention"));
        }
        Ok(())
    }
}

fn read_prompt(path: &Path) -> Result<String, RoleError> {
    std::fs::read_to_string(path).map_err(|source| RoleError::PromptIo {
        path: path.display().to_string(),
        source,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SoilThresholds {
    pub dry_below: f64,
    pub wet_above: f64,
}

impl Default for SoilThresholds {
    fn default() -> Self {
        Self {
            dry_below: 30.0,
            wet_above: 70.0,
        }
    }
}

pub fn soil_tag(moisture: f64, t: &SoilThresholds) -> &'static str {
    if moisture < t.dry_below {
        "dry"
    } else if moisture > t.wet_above {
        "wet"
    } else {
        "ok"
    }
}

/// One-line reading for the sensor agent, all values to one decimal.
pub fn format_sensor_input(reading: &SoilState, t: &SoilThresholds) -> String {
    format!(
        "moisture={:.1}% temp={:.1}C pH={:.1} EC={:.1} N={:.1} P={:.1} K={:.1} status={}",
        reading.moisture,
        reading.temperature,
        reading.ph,
        reading.ec,
        reading.n,
        reading.p,
        reading.k,
        soil_tag(reading.moisture, t)
    )
}

/// Inverse of [`format_sensor_input`] (up to rounding); used by replay.
pub fn parse_sensor_line(line: &str) -> Option<SoilState> {
    let mut s = SoilState::default();
    let mut seen = 0;
    for field in line.split_whitespace() {
        let Some((k, v)) = field.split_once('=') else {
            continue;
        };
        let v = v.trim_end_matches(['%', 'C']);
        let Ok(x) = v.parse::<f64>() else {
            continue;
        };
        let slot = match k {
            "moisture" => &mut s.moisture,
            "temp" => &mut s.temperature,
            "pH" => &mut s.ph,
            "EC" => &mut s.ec,
            "N" => &mut s.n,
            "P" => &mut s.p,
            "K" => &mut s.k,
            _ => continue,
        };
        *slot = x;
        seen += 1;
    }
    (seen == 7).then_some(s)
}

fn count_word(n: usize) -> String {
    const WORDS: [&str; 11] = [
        "no", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
    ];
    WORDS.get(n).map_or_else(|| n.to_string(), |w| (*w).to_owned())
}

fn class_phrase(class: EntityClass, n: usize) -> String {
    let noun = match (class, n) {
        (EntityClass::Person, 1) => "person",
        (EntityClass::Person, _) => "people",
        (EntityClass::Obstacle, 1) => "obstacle",
        (EntityClass::Obstacle, _) => "obstacles",
        (EntityClass::Landmark, 1) => "landmark",
        (EntityClass::Landmark, _) => "landmarks",
    };
    format!("{} {noun}", count_word(n))
}

/// Deterministic text rendering of a scene for the vision agent.
pub fn format_vision_input(obs: &SceneObservation) -> String {
    let free = |f: bool| if f { "clear" } else { "blocked" };
    let space = format!(
        "Free space: left {}, center {}, right {}.",
        free(obs.free_space[0]),
        free(obs.free_space[1]),
        free(obs.free_space[2])
    );
    if obs.entities.is_empty() {
        return format!("No objects visible. {space}");
    }
    let counts: Vec<String> = [EntityClass::Person, EntityClass::Obstacle, EntityClass::Landmark]
        .into_iter()
        .filter_map(|c| {
            let n = obs.count(c);
            (n > 0).then(|| class_phrase(c, n))
        })
        .collect();
    let details: Vec<String> = obs
        .entities
        .iter()
        .map(|e| {
            let name = match &e.label {
                Some(l) => format!("{l} ({})", e.class.as_str()),
                None => e.class.as_str().to_owned(),
            };
            format!(
                "{name} at bearing {:.0} deg, {:.1} m",
                e.bearing_deg + 0.0,
                e.distance
            )
        })
        .collect();
    format!(
        "Visible: {}. {}. {space}",
        counts.join(", "),
        details.join("; ")
    )
}

/// Tags a chat input with its origin.
pub fn format_chat_input(source: &str, payload: &str) -> Result<String, RoleError> {
    match source {
        SENSOR | VISION | "human" => Ok(format!("[{source}] {payload}")),
        other => Err(RoleError::UnknownSource(other.to_owned())),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Capacities {
    pub sensor: usize,
    pub vision: usize,
    pub chat: usize,
    pub action1: usize,
    pub action2: usize,
}

impl Default for Capacities {
    fn default() -> Self {
        Self {
            sensor: 10,
            vision: 0,
            chat: 10,
            action1: 10,
            action2: 10,
        }
    }
}

/// Specs for the five agents with the default topology subscriptions.
pub fn role_specs(prompts: &RolePromptSet, caps: &Capacities) -> Vec<AgentSpec> {
    let spec = |id: &str, cap: usize, subs: &[&str]| {
        let mut s = AgentSpec::new(id, prompts.get(id).unwrap(), &format!("/plantbot/{id}/out"));
        s.history_capacity = cap;
        s.subscriptions = subs.iter().map(|x| (*x).to_owned()).collect();
        s
    };
    let mut sensor = spec(SENSOR, caps.sensor, &["/plantbot/sensor/in"]);
    sensor.coalesce = true;
    let vision = spec(VISION, caps.vision, &["/plantbot/vision/in"]);
    let mut chat = spec(
        CHAT,
        caps.chat,
        &["/plantbot/sensor/out", "/plantbot/vision/out", "/plantbot/human/in"],
    );
    chat.input_format = InputFormat::Provenance;
    let mut action1 = spec(ACTION1, caps.action1, &["/plantbot/chat/out"]);
    action1.postprocessor = Postprocessor::Decision;
    let mut action2 = spec(ACTION2, caps.action2, &["/plantbot/chat/out", "/plantbot/action1/out"]);
    action2.postprocessor = Postprocessor::Motor;
    vec![sensor, vision, chat, action1, action2]
}

/// Backend per agent id.
#[derive(Clone, Default)]
pub struct Backends {
    map: HashMap<String, Arc<dyn Backend>>,
}

impl Backends {
    pub fn uniform(backend: Arc<dyn Backend>) -> Self {
        Self {
            map: ROLE_IDS
                .iter()
                .map(|id| ((*id).to_owned(), backend.clone()))
                .collect(),
        }
    }

    pub fn set(&mut self, agent: &str, backend: Arc<dyn Backend>) {
        self.map.insert(agent.to_owned(), backend);
    }

    pub fn get(&self, agent: &str) -> Result<Arc<dyn Backend>, RoleError> {
        self.map
            .get(agent)
            .cloned()
            .ok_or_else(|| RoleError::MissingBackend(agent.to_owned()))
    }
}

/// Five agents running on their own threads.
pub struct SystemHandle {
    pub agents: Vec<AgentHandle>,
}

impl SystemHandle {
    pub fn stop(self) -> Vec<Agent> {
        self.agents.into_iter().filter_map(AgentHandle::stop).collect()
    }
}

/// Starts all five role agents on `bus`. The world side (feeding sensor
/// and vision inputs, applying action2 output) belongs to the caller.
pub fn wire_agents(
    prompts: &RolePromptSet,
    bus: &Bus,
    backends: &Backends,
    caps: &Capacities,
    refresh_s: f64,
    reports: Option<Sender<AgentReport>>,
) -> Result<SystemHandle, RoleError> {
    prompts.validate()?;
    let specs = role_specs(prompts, caps);
    // resolve every backend before starting anything
    let resolved = specs
        .iter()
        .map(|s| backends.get(&s.id))
        .collect::<Result<Vec<_>, _>>()?;
    let mut agents = Vec::with_capacity(specs.len());
    for (spec, backend) in specs.into_iter().zip(resolved) {
        let agent = Agent::with_refresh(spec, refresh_s);
        agents.push(run_agent(agent, bus, backend, reports.clone())?);
    }
    Ok(SystemHandle { agents })
}
