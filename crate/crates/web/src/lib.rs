//! Browser bindings for three small views of the simulator: a robot that
//! always drives forward with the lidar reflex switchable, the soil
//! moisture curve, and the OSC encoding of a text message.
//!
//! Every export returns JSON (or hex) strings so the page needs no glue
//! beyond `JSON.parse`.

use plantbot::action::{reflex_avoid, DriveParams, MotorCommand, ReflexParams};
use plantbot::osc::{encode_message, OscMessage};
use plantbot::world::{
    lidar_scan, step_robot, Bounds, LidarParams, Obstacle, RobotPose, SoilModel, SoilParams,
    SoilState, WorldState,
};
use serde_json::json;
use wasm_bindgen::prelude::*;

const DT: f64 = 0.1;
const ARENA: f64 = 4.0;

/// Small deterministic generator so arenas are reproducible per seed.
struct SplitMix(u64);

impl SplitMix {
    fn next_f64(&mut self) -> f64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        ((z ^ (z >> 31)) >> 11) as f64 / (1u64 << 53) as f64
    }

    fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }
}

#[wasm_bindgen]
pub struct WorldDemo {
    world: WorldState,
    lidar: LidarParams,
    reflex: ReflexParams,
    drive: DriveParams,
    trail: Vec<[f64; 2]>,
    min_clearance: f64,
    collisions: u32,
    engagements: u32,
    engaged: bool,
    ticks: u64,
}

#[wasm_bindgen]
impl WorldDemo {
    /// A walled 8 m arena with ten random circular obstacles, none closer
    /// than the reflex distance to the start.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32) -> WorldDemo {
        let mut rng = SplitMix(u64::from(seed));
        let reflex = ReflexParams::default();
        let mut world = WorldState::new(
            RobotPose {
                x: 0.0,
                y: 0.0,
                heading: rng.range(-std::f64::consts::PI, std::f64::consts::PI),
            },
            SoilState::default(),
        );
        world.bounds = Some(Bounds {
            min_x: -ARENA,
            min_y: -ARENA,
            max_x: ARENA,
            max_y: ARENA,
        });
        while world.obstacles.len() < 10 {
            let (x, y, r) = (
                rng.range(-3.6, 3.6),
                rng.range(-3.6, 3.6),
                rng.range(0.15, 0.6),
            );
            if x.hypot(y) - r > reflex.d_safe + 0.2 {
                world.obstacles.push(Obstacle::Circle { x, y, r });
            }
        }
        let min_clearance = world.clearance();
        WorldDemo {
            world,
            lidar: LidarParams::default(),
            reflex,
            drive: DriveParams::default(),
            trail: vec![[0.0, 0.0]],
            min_clearance,
            collisions: 0,
            engagements: 0,
            engaged: false,
            ticks: 0,
        }
    }

    pub fn set_reflex(&mut self, enabled: bool) {
        self.reflex.enabled = enabled;
    }

    pub fn add_obstacle(&mut self, x: f64, y: f64, r: f64) {
        if x.is_finite() && y.is_finite() && r > 0.0 {
            self.world.obstacles.push(Obstacle::Circle { x, y, r });
        }
    }

    /// Advances `n` ticks of 0.1 s with a constant full-speed forward
    /// command and returns the state as JSON.
    pub fn step(&mut self, n: u32) -> String {
        let forward = MotorCommand {
            left: self.drive.v_max,
            right: self.drive.v_max,
            duration: f64::INFINITY,
        };
        for _ in 0..n {
            let scan = lidar_scan(&self.world, &self.lidar);
            let cmd = reflex_avoid(&forward, &scan, &self.reflex);
            let engaged = cmd != forward;
            if engaged && !self.engaged {
                self.engagements += 1;
            }
            self.engaged = engaged;
            let was = self.world.collided;
            step_robot(&mut self.world, &cmd, DT);
            if self.world.collided && !was {
                self.collisions += 1;
            }
            self.min_clearance = self.min_clearance.min(self.world.clearance());
            self.ticks += 1;
            let p = self.world.pose;
            if self.trail.last().is_none_or(|l| (l[0] - p.x).hypot(l[1] - p.y) > 0.02) {
                self.trail.push([p.x, p.y]);
            }
        }
        self.state()
    }

    /// Pose, obstacles, lidar rays, trail and counters as JSON.
    pub fn state(&self) -> String {
        let scan = lidar_scan(&self.world, &self.lidar);
        let rays: Vec<[f64; 2]> = scan
            .ranges
            .iter()
            .enumerate()
            .map(|(i, r)| [self.world.pose.heading + scan.ray_angle(i), *r])
            .collect();
        let obstacles: Vec<_> = self
            .world
            .obstacles
            .iter()
            .filter_map(|o| match *o {
                Obstacle::Circle { x, y, r } => Some(json!({ "x": x, "y": y, "r": r })),
                Obstacle::Wall { .. } => None,
            })
            .collect();
        json!({
            "time_s": self.ticks as f64 * DT,
            "pose": self.world.pose,
            "arena": ARENA,
            "obstacles": obstacles,
            "rays": rays,
            "trail": self.trail,
            "reflex": self.reflex.enabled,
            "d_safe": self.reflex.d_safe,
            "engaged": self.engaged,
            "clearance": self.world.clearance(),
            "min_clearance": self.min_clearance,
            "collisions": self.collisions,
            "engagements": self.engagements,
        })
        .to_string()
    }
}

/// Moisture sampled once a minute for `minutes`, with `liters` of water
/// added at minute `water_at_min` (negative for none). Returns
/// `[[minute, moisture], …]` as JSON.
#[wasm_bindgen]
pub fn soil_curve(
    initial: f64,
    decay_per_min: f64,
    minutes: u32,
    water_at_min: f64,
    liters: f64,
) -> String {
    let params = SoilParams {
        decay_per_min: decay_per_min.max(0.0),
        ..SoilParams::default()
    };
    let start = SoilState {
        moisture: initial.clamp(0.0, 100.0),
        ..SoilState::default()
    };
    let mut model = SoilModel::new(params, start, 0);
    let mut soil = start;
    let mut points = vec![[0.0, soil.moisture]];
    for m in 1..=minutes {
        let t = f64::from(m);
        let water = if water_at_min >= 0.0 && water_at_min > t - 1.0 && water_at_min <= t {
            liters.max(0.0)
        } else {
            0.0
        };
        soil = model.step(&soil, 60.0, water);
        points.push([t, soil.moisture]);
    }
    serde_json::to_string(&points).expect("numbers serialize")
}

/// Hex dump of the OSC packet carrying `text` at `address`, four bytes
/// per group.
pub fn osc_hex(address: &str, text: &str) -> Result<String, String> {
    let bytes = encode_message(&OscMessage::text(address, text)).map_err(|e| e.to_string())?;
    Ok(bytes
        .chunks(4)
        .map(|c| c.iter().map(|b| format!("{b:02x}")).collect::<String>())
        .collect::<Vec<_>>()
        .join(" "))
}

#[wasm_bindgen]
pub fn osc_encode(address: &str, text: &str) -> Result<String, JsError> {
    osc_hex(address, text).map_err(|e| JsError::new(&e))
}
