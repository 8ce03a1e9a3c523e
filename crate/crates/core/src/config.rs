//! Run configuration and scenario files, both TOML.
//!
//! Relative paths inside a file resolve against that file's directory.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::{DriveParams, ReflexParams};
use crate::bus::{RouteTable, TopicPattern};
use crate::console::ConsoleCommand;
use crate::llm::LiveConfig;
use crate::roles::{Capacities, SoilThresholds, ROLE_IDS};
use crate::world::{Bounds, Entity, LidarParams, Obstacle, RobotPose, SoilParams, SoilState, VisionParams};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{field} refers to missing file {path}")]
    MissingFile { field: String, path: String },
    #[error("invalid value for {field}: {reason}")]
    Invalid { field: String, reason: String },
}

fn invalid(field: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_owned(),
        reason: reason.into(),
    }
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    toml::from_str(&text).map_err(|e| ConfigError::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_owned()
    } else {
        base.join(p)
    }
}

fn require_file(field: &str, path: &Path) -> Result<(), ConfigError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(ConfigError::MissingFile {
            field: field.to_owned(),
            path: path.display().to_string(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Scripted,
    Live,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LiveSettings {
    pub base_url: String,
    pub model: String,
    /// Per-agent model overrides, e.g. a vision-capable model for vision.
    pub models: HashMap<String, String>,
    pub api_key_env: String,
    pub timeout_s: f64,
    pub retries: u32,
    pub backoff_ms: u64,
}

impl Default for LiveSettings {
    fn default() -> Self {
        let d = LiveConfig::default();
        Self {
            base_url: d.base_url,
            model: d.model,
            models: d.models,
            api_key_env: d.api_key_env,
            timeout_s: d.timeout.as_secs_f64(),
            retries: d.retries,
            backoff_ms: d.backoff.as_millis() as u64,
        }
    }
}

impl LiveSettings {
    pub fn to_live_config(&self) -> LiveConfig {
        LiveConfig {
            base_url: self.base_url.clone(),
            model: self.model.clone(),
            models: self.models.clone(),
            api_key_env: self.api_key_env.clone(),
            timeout: Duration::from_secs_f64(self.timeout_s.max(0.001)),
            retries: self.retries,
            backoff: Duration::from_millis(self.backoff_ms),
        }
    }
}

pub const DEFAULT_RESPONSE: &str = "[0] Reason: Nothing has changed.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendSettings {
    pub kind: BackendKind,
    /// Rule files, concatenated in order.
    pub scripts: Vec<PathBuf>,
    pub default_response: String,
    pub live: LiveSettings,
}

impl Default for BackendSettings {
    fn default() -> Self {
        Self {
            kind: BackendKind::Scripted,
            scripts: Vec::new(),
            default_response: DEFAULT_RESPONSE.into(),
            live: LiveSettings::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ticks {
    /// World step, seconds.
    pub dt_s: f64,
    pub sensor_s: f64,
    pub vision_s: f64,
    pub pose_s: f64,
}

impl Default for Ticks {
    fn default() -> Self {
        Self {
            dt_s: 0.1,
            sensor_s: 5.0,
            vision_s: 3.0,
            pose_s: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Agents run inside the world tick; fully deterministic.
    #[default]
    Lockstep,
    /// Each agent on its own thread.
    Threaded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteSpec {
    pub pattern: String,
    pub agent: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub scenario: PathBuf,
    #[serde(default)]
    pub log: Option<PathBuf>,
    #[serde(default)]
    pub run_id: Option<String>,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub console_bind: Option<String>,
    /// Decision refresh period for the suppressor, seconds.
    #[serde(default = "default_refresh")]
    pub refresh_s: f64,
    #[serde(default)]
    pub prompts: HashMap<String, PathBuf>,
    #[serde(default)]
    pub backend: BackendSettings,
    #[serde(default)]
    pub routes: Vec<RouteSpec>,
    #[serde(default)]
    pub ticks: Ticks,
    #[serde(default)]
    pub capacities: Capacities,
    #[serde(default)]
    pub reflex: ReflexParams,
    #[serde(default)]
    pub drive: DriveParams,
    #[serde(default)]
    pub thresholds: SoilThresholds,
}

fn default_refresh() -> f64 {
    crate::action::Suppressor::DEFAULT_REFRESH_S
}

impl RunConfig {
    /// Minimal config around a scenario, with every default.
    pub fn for_scenario(scenario: impl Into<PathBuf>, seed: u64) -> Self {
        Self {
            seed,
            scenario: scenario.into(),
            log: None,
            run_id: None,
            mode: Mode::default(),
            console_bind: None,
            refresh_s: default_refresh(),
            prompts: HashMap::new(),
            backend: BackendSettings::default(),
            routes: Vec::new(),
            ticks: Ticks::default(),
            capacities: Capacities::default(),
            reflex: ReflexParams::default(),
            drive: DriveParams::default(),
            thresholds: SoilThresholds::default(),
        }
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: base.display().to_string(),
            message: e.to_string(),
        })?;
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let mut cfg: RunConfig = read_toml(path)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        self.scenario = resolve(base, &self.scenario);
        self.log = self.log.as_ref().map(|p| resolve(base, p));
        for p in self.prompts.values_mut() {
            *p = resolve(base, p);
        }
        for p in &mut self.backend.scripts {
            *p = resolve(base, p);
        }
    }

    /// The default topology plus any configured extra edges.
    pub fn route_table(&self) -> Result<RouteTable, ConfigError> {
        let mut t = RouteTable::default_topology();
        for r in &self.routes {
            let p = TopicPattern::new(r.pattern.as_str()).map_err(|e| invalid("routes", e.to_string()))?;
            t.add(p, &r.agent);
        }
        Ok(t)
    }

    pub fn run_id(&self) -> String {
        self.run_id.clone().unwrap_or_else(|| {
            let stem = self
                .scenario
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "run".into());
            format!("{stem}-seed{}", self.seed)
        })
    }

    /// Checks every invariant that does not need the scenario contents.
    pub fn validate(&self) -> Result<(), ConfigError> {
        require_file("scenario", &self.scenario)?;
        for (agent, p) in &self.prompts {
            if !ROLE_IDS.contains(&agent.as_str()) {
                return Err(invalid("prompts", format!("{agent} is not a role agent")));
            }
            require_file(&format!("prompts.{agent}"), p)?;
        }
        if self.backend.kind == BackendKind::Scripted {
            for p in &self.backend.scripts {
                require_file("backend.scripts", p)?;
            }
        }
        let t = &self.ticks;
        for (name, v) in [
            ("ticks.dt_s", t.dt_s),
            ("ticks.sensor_s", t.sensor_s),
            ("ticks.vision_s", t.vision_s),
            ("ticks.pose_s", t.pose_s),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(name, "must be positive"));
            }
        }
        if !(self.refresh_s.is_finite() && self.refresh_s > 0.0) {
            return Err(invalid("refresh_s", "must be positive"));
        }
        if self.reflex.d_safe < 0.0 || self.reflex.sector_deg <= 0.0 {
            return Err(invalid("reflex", "d_safe ≥ 0 and sector_deg > 0 required"));
        }
        if self.drive.track_width <= 0.0 || self.drive.v_max < 0.0 {
            return Err(invalid("drive", "track_width > 0 and v_max ≥ 0 required"));
        }
        if self.thresholds.dry_below > self.thresholds.wet_above {
            return Err(invalid("thresholds", "dry_below exceeds wet_above"));
        }
        self.route_table()?;
        if let Some(b) = &self.console_bind {
            b.parse::<std::net::SocketAddr>()
                .map_err(|_| invalid("console_bind", format!("{b:?} is not HOST:PORT")))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RobotSetup {
    pub x: f64,
    pub y: f64,
    /// Radians.
    pub heading: f64,
    pub track_width: f64,
}

impl Default for RobotSetup {
    fn default() -> Self {
        Self {
            x: 0.0,
            y: 0.0,
            heading: 0.0,
            track_width: 0.4,
        }
    }
}

impl RobotSetup {
    pub fn pose(&self) -> RobotPose {
        RobotPose {
            x: self.x,
            y: self.y,
            heading: self.heading,
        }
    }
}

/// A console command scheduled at a simulated time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioEvent {
    pub at_s: f64,
    #[serde(flatten)]
    pub command: ConsoleCommand,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Scenario {
    pub name: String,
    pub duration_s: f64,
    pub robot: RobotSetup,
    pub soil: SoilState,
    pub soil_params: SoilParams,
    pub bounds: Option<Bounds>,
    pub obstacles: Vec<Obstacle>,
    pub entities: Vec<Entity>,
    pub events: Vec<ScenarioEvent>,
    pub lidar: LidarParams,
    pub vision: VisionParams,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            name: "scenario".into(),
            duration_s: 60.0,
            robot: RobotSetup::default(),
            soil: SoilState::default(),
            soil_params: SoilParams::default(),
            bounds: None,
            obstacles: Vec::new(),
            entities: Vec::new(),
            events: Vec::new(),
            lidar: LidarParams::default(),
            vision: VisionParams::default(),
        }
    }
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let s: Scenario = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: "<scenario>".into(),
            message: e.to_string(),
        })?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let s: Scenario = read_toml(path)?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return Err(invalid("duration_s", "must be positive"));
        }
        if !self.soil.is_valid() {
            return Err(invalid("soil", "values out of range"));
        }
        if self.robot.track_width <= 0.0 {
            return Err(invalid("robot.track_width", "must be positive"));
        }
        if self.lidar.rays == 0 {
            return Err(invalid("lidar.rays", "must be at least 1"));
        }
        for (i, e) in self.events.iter().enumerate() {
            if !(e.at_s.is_finite() && e.at_s >= 0.0) {
                return Err(invalid(&format!("events[{i}].at_s"), "must be ≥ 0"));
            }
            e.command
                .validate()
                .map_err(|r| invalid(&format!("events[{i}]"), r))?;
        }
        Ok(())
    }
}
