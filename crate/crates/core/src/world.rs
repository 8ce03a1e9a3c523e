//! Deterministic world: soil dynamics, a differential-drive base,
//! circle/segment obstacles, a 2D LiDAR and a structured camera surrogate.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::action::MotorCommand;

/// Normalizes an angle to (-π, π].
pub fn normalize_angle(a: f64) -> f64 {
    let mut x = a % (2.0 * PI);
    if x <= -PI {
        x += 2.0 * PI;
    } else if x > PI {
        x -= 2.0 * PI;
    }
    x
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SoilState {
    /// Volumetric moisture, percent.
    pub moisture: f64,
    /// Degrees Celsius.
    pub temperature: f64,
    pub ph: f64,
    /// Electrical conductivity, mS/cm.
    pub ec: f64,
    /// Nutrients, mg/kg.
    pub n: f64,
    pub p: f64,
    pub k: f64,
}

impl Default for SoilState {
    fn default() -> Self {
        Self {
            moisture: 50.0,
            temperature: 22.0,
            ph: 6.5,
            ec: 1.2,
            n: 120.0,
            p: 40.0,
            k: 150.0,
        }
    }
}

impl SoilState {
    pub fn is_valid(&self) -> bool {
        (0.0..=100.0).contains(&self.moisture)
            && (0.0..=14.0).contains(&self.ph)
            && self.ec >= 0.0
            && self.n >= 0.0
            && self.p >= 0.0
            && self.k >= 0.0
            && self.temperature.is_finite()
    }

    fn clamp_ranges(&mut self) {
        self.moisture = self.moisture.clamp(0.0, 100.0);
        self.ph = self.ph.clamp(0.0, 14.0);
        self.ec = self.ec.max(0.0);
        self.n = self.n.max(0.0);
        self.p = self.p.max(0.0);
        self.k = self.k.max(0.0);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SoilParams {
    /// Moisture decay rate, per minute.
    pub decay_per_min: f64,
    /// Moisture gained per liter of water, percentage points.
    pub gain_per_liter: f64,
    pub temp_amplitude: f64,
    pub temp_period_s: f64,
    /// Random-walk scale per sqrt(minute) and the band around the initial
    /// value the walk stays in.
    pub ph_step: f64,
    pub ph_band: f64,
    pub ec_step: f64,
    pub ec_band: f64,
    /// Relative step and band for N, P and K.
    pub npk_step: f64,
    pub npk_band: f64,
}

impl Default for SoilParams {
    fn default() -> Self {
        Self {
            decay_per_min: 0.01,
            gain_per_liter: 20.0,
            temp_amplitude: 3.0,
            temp_period_s: 86_400.0,
            ph_step: 0.01,
            ph_band: 0.5,
            ec_step: 0.005,
            ec_band: 0.3,
            npk_step: 0.002,
            npk_band: 0.1,
        }
    }
}

/// Soil dynamics with a seeded drift generator.
#[derive(Debug, Clone)]
pub struct SoilModel {
    pub params: SoilParams,
    baseline: SoilState,
    elapsed_s: f64,
    rng: ChaCha8Rng,
}

impl SoilModel {
    pub fn new(params: SoilParams, initial: SoilState, seed: u64) -> Self {
        Self {
            params,
            baseline: initial,
            elapsed_s: 0.0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Advances `soil` by `dt_s` seconds with `watering_l` liters added.
    ///
    /// Moisture follows `m·exp(-λ·dt) + α·w`, clamped to [0, 100].
    pub fn step(&mut self, soil: &SoilState, dt_s: f64, watering_l: f64) -> SoilState {
        let mut out = *soil;
        let dt_min = dt_s.max(0.0) / 60.0;
        let p = self.params;
        out.moisture = (soil.moisture * (-p.decay_per_min * dt_min).exp()
            + p.gain_per_liter * watering_l.max(0.0))
        .clamp(0.0, 100.0);
        if dt_s <= 0.0 {
            return out;
        }
        self.elapsed_s += dt_s;
        let phase = 2.0 * PI * self.elapsed_s / p.temp_period_s;
        out.temperature = self.baseline.temperature + p.temp_amplitude * phase.sin();

        let scale = dt_min.sqrt();
        let mut walk = |value: f64, base: f64, step: f64, band: f64| {
            let delta = self.rng.random_range(-1.0..=1.0) * step * scale;
            (value + delta).clamp(base - band, base + band)
        };
        let b = self.baseline;
        out.ph = walk(soil.ph, b.ph, p.ph_step, p.ph_band);
        out.ec = walk(soil.ec, b.ec, p.ec_step, p.ec_band);
        out.n = walk(soil.n, b.n, p.npk_step * b.n, p.npk_band * b.n);
        out.p = walk(soil.p, b.p, p.npk_step * b.p, p.npk_band * b.p);
        out.k = walk(soil.k, b.k, p.npk_step * b.k, p.npk_band * b.k);
        out.clamp_ranges();
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotPose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Obstacle {
    Circle { x: f64, y: f64, r: f64 },
    Wall { x1: f64, y1: f64, x2: f64, y2: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl Bounds {
    fn walls(&self) -> [Obstacle; 4] {
        let Bounds {
            min_x,
            min_y,
            max_x,
            max_y,
        } = *self;
        [
            Obstacle::Wall { x1: min_x, y1: min_y, x2: max_x, y2: min_y },
            Obstacle::Wall { x1: max_x, y1: min_y, x2: max_x, y2: max_y },
            Obstacle::Wall { x1: max_x, y1: max_y, x2: min_x, y2: max_y },
            Obstacle::Wall { x1: min_x, y1: max_y, x2: min_x, y2: min_y },
        ]
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.min_x && x <= self.max_x && y >= self.min_y && y <= self.max_y
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub pose: RobotPose,
    pub soil: SoilState,
    pub obstacles: Vec<Obstacle>,
    pub bounds: Option<Bounds>,
    pub time_s: f64,
    pub track_width: f64,
    /// Set when the last robot step ended in contact.
    pub collided: bool,
    /// Water queued for the next soil step, liters.
    pub pending_water: f64,
}

impl WorldState {
    pub fn new(pose: RobotPose, soil: SoilState) -> Self {
        Self {
            pose,
            soil,
            obstacles: Vec::new(),
            bounds: None,
            time_s: 0.0,
            track_width: 0.4,
            collided: false,
            pending_water: 0.0,
        }
    }

    /// Obstacles plus bounding walls.
    pub fn all_obstacles(&self) -> Vec<Obstacle> {
        let mut all = self.obstacles.clone();
        if let Some(b) = &self.bounds {
            all.extend(b.walls());
        }
        all
    }

    /// Distance from the robot center to the nearest obstacle or bound.
    pub fn clearance(&self) -> f64 {
        self.all_obstacles()
            .iter()
            .map(|o| point_distance(o, self.pose.x, self.pose.y))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Distance from a point to an obstacle surface (0 when inside).
pub fn point_distance(o: &Obstacle, px: f64, py: f64) -> f64 {
    match *o {
        Obstacle::Circle { x, y, r } => ((px - x).hypot(py - y) - r).max(0.0),
        Obstacle::Wall { x1, y1, x2, y2 } => {
            let (dx, dy) = (x2 - x1, y2 - y1);
            let len2 = dx * dx + dy * dy;
            let t = if len2 == 0.0 {
                0.0
            } else {
                (((px - x1) * dx + (py - y1) * dy) / len2).clamp(0.0, 1.0)
            };
            (px - (x1 + t * dx)).hypot(py - (y1 + t * dy))
        }
    }
}

/// Distance along the unit ray (ox, oy) + t·(dx, dy) to the obstacle,
/// or `None` when it is missed.
pub fn ray_hit(o: &Obstacle, ox: f64, oy: f64, dx: f64, dy: f64) -> Option<f64> {
    match *o {
        Obstacle::Circle { x, y, r } => {
            let (fx, fy) = (ox - x, oy - y);
            let b = fx * dx + fy * dy;
            let c = fx * fx + fy * fy - r * r;
            if c <= 0.0 {
                // on or inside the surface: blocked only when heading inward
                return (b < 0.0).then_some(0.0);
            }
            let disc = b * b - c;
            if disc < 0.0 {
                return None;
            }
            let t = -b - disc.sqrt();
            (t >= 0.0).then_some(t)
        }
        Obstacle::Wall { x1, y1, x2, y2 } => {
            let (sx, sy) = (x2 - x1, y2 - y1);
            let denom = dx * sy - dy * sx;
            if denom.abs() < 1e-15 {
                return None;
            }
            let (qx, qy) = (x1 - ox, y1 - oy);
            let t = (qx * sy - qy * sx) / denom;
            let u = (qx * dy - qy * dx) / denom;
            (t >= 0.0 && (-1e-12..=1.0 + 1e-12).contains(&u)).then_some(t)
        }
    }
}

fn cast(obstacles: &[Obstacle], ox: f64, oy: f64, angle: f64) -> f64 {
    let (dy, dx) = angle.sin_cos();
    obstacles
        .iter()
        .filter_map(|o| ray_hit(o, ox, oy, dx, dy))
        .fold(f64::INFINITY, f64::min)
}

/// Gap kept between the robot and a surface after contact.
const CONTACT_GAP: f64 = 1e-6;

/// Moves the robot along a straight chord, stopping at first contact.
/// Returns true on contact.
fn translate(world: &mut WorldState, obstacles: &[Obstacle], dist: f64, heading: f64) -> bool {
    if dist == 0.0 {
        return false;
    }
    let dir = if dist < 0.0 { heading + PI } else { heading };
    let len = dist.abs();
    let hit = cast(obstacles, world.pose.x, world.pose.y, dir);
    let (dy, dx) = dir.sin_cos();
    if hit <= len {
        let travel = (hit - CONTACT_GAP).max(0.0);
        world.pose.x += dx * travel;
        world.pose.y += dy * travel;
        true
    } else {
        world.pose.x += dx * len;
        world.pose.y += dy * len;
        false
    }
}

/// Differential-drive update over `dt` seconds: v = (l + r)/2,
/// ω = (r − l)/W. Motion stops at the first contact and raises the
/// collision flag.
pub fn step_robot(world: &mut WorldState, cmd: &MotorCommand, dt: f64) {
    debug_assert!(dt > 0.0);
    world.collided = false;
    let v = (cmd.left + cmd.right) / 2.0;
    let omega = (cmd.right - cmd.left) / world.track_width;
    let obstacles = world.all_obstacles();
    let theta0 = world.pose.heading;

    if omega == 0.0 {
        world.collided = translate(world, &obstacles, v * dt, theta0);
    } else if v == 0.0 {
        world.pose.heading = normalize_angle(theta0 + omega * dt);
    } else {
        // arc: follow chords of the exact circular path
        let sweep = omega * dt;
        let chords = ((sweep.abs() / 0.05).ceil() as usize).clamp(1, 256);
        let radius = v / omega;
        for i in 0..chords {
            let a0 = theta0 + sweep * i as f64 / chords as f64;
            let a1 = theta0 + sweep * (i + 1) as f64 / chords as f64;
            let cx = radius * (a1.sin() - a0.sin());
            let cy = -radius * (a1.cos() - a0.cos());
            if translate(world, &obstacles, cx.hypot(cy), cy.atan2(cx)) {
                world.pose.heading = normalize_angle(a0);
                world.collided = true;
                return;
            }
        }
        world.pose.heading = normalize_angle(theta0 + sweep);
        return;
    }
    world.pose.heading = normalize_angle(world.pose.heading);
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LidarParams {
    pub rays: usize,
    pub max_range: f64,
}

impl Default for LidarParams {
    fn default() -> Self {
        Self {
            rays: 72,
            max_range: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LidarScan {
    /// Ray 0 points along the heading; rays advance counter-clockwise.
    pub ranges: Vec<f64>,
    pub max_range: f64,
}

impl LidarScan {
    pub fn ray_angle(&self, i: usize) -> f64 {
        i as f64 * 2.0 * PI / self.ranges.len() as f64
    }
}

pub fn lidar_scan(world: &WorldState, params: &LidarParams) -> LidarScan {
    let obstacles = world.all_obstacles();
    let n = params.rays.max(1);
    let ranges = (0..n)
        .map(|i| {
            let angle = world.pose.heading + i as f64 * 2.0 * PI / n as f64;
            cast(&obstacles, world.pose.x, world.pose.y, angle).clamp(1e-6, params.max_range)
        })
        .collect();
    LidarScan {
        ranges,
        max_range: params.max_range,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityClass {
    Person,
    Obstacle,
    Landmark,
}

impl EntityClass {
    pub fn as_str(self) -> &'static str {
        match self {
            EntityClass::Person => "person",
            EntityClass::Obstacle => "obstacle",
            EntityClass::Landmark => "landmark",
        }
    }
}

/// A scripted scene object with an optional presence window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    pub class: EntityClass,
    #[serde(default)]
    pub label: Option<String>,
    pub x: f64,
    pub y: f64,
    #[serde(default)]
    pub appear_s: Option<f64>,
    #[serde(default)]
    pub leave_s: Option<f64>,
}

impl Entity {
    pub fn present_at(&self, t: f64) -> bool {
        self.appear_s.is_none_or(|a| t >= a) && self.leave_s.is_none_or(|l| t < l)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VisionParams {
    pub fov_deg: f64,
    pub max_distance: f64,
    /// A sector is free when its nearest LiDAR return exceeds this.
    pub free_threshold: f64,
}

impl Default for VisionParams {
    fn default() -> Self {
        Self {
            fov_deg: 120.0,
            max_distance: 8.0,
            free_threshold: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeenEntity {
    pub class: EntityClass,
    pub label: Option<String>,
    /// Degrees, positive to the left.
    pub bearing_deg: f64,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObservation {
    /// Sorted by distance.
    pub entities: Vec<SeenEntity>,
    /// Free space in the left, center and right thirds of the view.
    pub free_space: [bool; 3],
}

impl SceneObservation {
    pub fn count(&self, class: EntityClass) -> usize {
        self.entities.iter().filter(|e| e.class == class).count()
    }
}

/// Entities inside the field of view and range, plus circle obstacles.
/// Occlusion is ignored.
pub fn observe_scene(
    world: &WorldState,
    entities: &[Entity],
    vision: &VisionParams,
    lidar: &LidarParams,
) -> SceneObservation {
    let half = vision.fov_deg / 2.0;
    let pose = world.pose;
    let mut seen = Vec::new();
    let mut consider = |class, label: Option<String>, x: f64, y: f64, surface: f64| {
        let dist = ((x - pose.x).hypot(y - pose.y) - surface).max(0.0);
        let bearing = normalize_angle((y - pose.y).atan2(x - pose.x) - pose.heading).to_degrees();
        if bearing.abs() <= half && dist <= vision.max_distance {
            seen.push(SeenEntity {
                class,
                label,
                bearing_deg: bearing,
                distance: dist,
            });
        }
    };
    for e in entities.iter().filter(|e| e.present_at(world.time_s)) {
        consider(e.class, e.label.clone(), e.x, e.y, 0.0);
    }
    for o in &world.obstacles {
        if let Obstacle::Circle { x, y, r } = *o {
            consider(EntityClass::Obstacle, None, x, y, r);
        }
    }
    seen.sort_by(|a, b| {
        a.distance
            .total_cmp(&b.distance)
            .then(a.bearing_deg.total_cmp(&b.bearing_deg))
    });

    let scan = lidar_scan(world, lidar);
    let n = scan.ranges.len();
    let mut free = [true; 3];
    for (i, r) in scan.ranges.iter().enumerate() {
        let b = normalize_angle(2.0 * PI * i as f64 / n as f64).to_degrees();
        if b.abs() > half {
            continue;
        }
        // thirds: left (+), center, right (−)
        let sector = if b > half / 3.0 {
            0
        } else if b < -half / 3.0 {
            2
        } else {
            1
        };
        if *r <= vision.free_threshold {
            free[sector] = false;
        }
    }
    SceneObservation {
        entities: seen,
        free_space: free,
    }
}

/// Queues water for the next soil step.
pub fn apply_water_event(world: &mut WorldState, liters: f64) {
    if liters > 0.0 {
        world.pending_water += liters;
    }
}

/// Whole-world stepper owning the soil model.
#[derive(Debug, Clone)]
pub struct World {
    pub state: WorldState,
    pub soil_model: SoilModel,
}

impl World {
    pub fn new(state: WorldState, soil_params: SoilParams, seed: u64) -> Self {
        let soil_model = SoilModel::new(soil_params, state.soil, seed);
        Self { state, soil_model }
    }

    /// One fixed tick: soil (with pending water), then the robot.
    pub fn tick(&mut self, cmd: &MotorCommand, dt: f64) {
        let water = std::mem::take(&mut self.state.pending_water);
        self.state.soil = self.soil_model.step(&self.state.soil, dt, water);
        step_robot(&mut self.state, cmd, dt);
        self.state.time_s += dt;
    }

    pub fn set_moisture(&mut self, percent: f64) {
        self.state.soil.moisture = percent.clamp(0.0, 100.0);
    }
}
