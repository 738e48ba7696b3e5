//! Synthetic multi-agent driving scenes with ground-truth futures, plus
//! their rasterization into multi-channel ego-centric images.
//!
//! Scenes are generated in a world frame, then rigidly transformed into the
//! frame of the prediction target at the prediction time (x forward, y
//! left). All sampling runs at 5 Hz: 25 past poses and 25 future waypoints.

mod generator;
pub mod dataset;
pub mod raster;

pub use generator::{build_dataset, fork_branches, generate_scene, DatasetParams};
pub use raster::{rasterize, RasterConfig, RasterTensor, RASTER_CHANNELS};

/// 5 Hz sampling.
pub const STEP_SECONDS: f32 = 0.2;
/// Past poses kept per agent.
pub const HISTORY_STEPS: usize = 25;
/// Future waypoints (5 s at 5 Hz).
pub const HORIZON_STEPS: usize = 25;
/// Speed cap for generated agents, m/s.
pub const MAX_SPEED: f32 = 30.0;
/// Per-step displacement bound implied by the speed cap.
pub const MAX_STEP_DISPLACEMENT: f32 = MAX_SPEED * STEP_SECONDS;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AgentKind {
    Vehicle,
    Pedestrian,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScenarioKind {
    Straight,
    Turn,
    Fork,
    Stop,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 4] = [
        ScenarioKind::Straight,
        ScenarioKind::Turn,
        ScenarioKind::Fork,
        ScenarioKind::Stop,
    ];

    pub fn as_u8(self) -> u8 {
        match self {
            ScenarioKind::Straight => 0,
            ScenarioKind::Turn => 1,
            ScenarioKind::Fork => 2,
            ScenarioKind::Stop => 3,
        }
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(ScenarioKind::Straight),
            1 => Some(ScenarioKind::Turn),
            2 => Some(ScenarioKind::Fork),
            3 => Some(ScenarioKind::Stop),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Straight => "straight",
            ScenarioKind::Turn => "turn",
            ScenarioKind::Fork => "fork",
            ScenarioKind::Stop => "stop",
        }
    }
}

impl std::str::FromStr for ScenarioKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "straight" => Ok(ScenarioKind::Straight),
            "turn" => Ok(ScenarioKind::Turn),
            "fork" => Ok(ScenarioKind::Fork),
            "stop" => Ok(ScenarioKind::Stop),
            other => Err(format!("unknown scenario kind: {other}")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub x: f32,
    pub y: f32,
    pub yaw: f32,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Agent {
    pub position: (f32, f32),
    pub velocity: (f32, f32),
    pub acceleration: (f32, f32),
    /// Radians in [-pi, pi).
    pub yaw: f32,
    pub kind: AgentKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MapElementKind {
    Lane,
    RoadBoundary,
    Crosswalk,
}

/// Lane metadata; zeroed for non-lane elements.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct LaneAttributes {
    pub direction_sign: f32,
    pub speed_limit: f32,
    pub priority: f32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MapElement {
    pub kind: MapElementKind,
    /// At least two points.
    pub polyline: Vec<(f32, f32)>,
    pub attributes: LaneAttributes,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LightState {
    Red,
    Yellow,
    Green,
    Unknown,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrafficLight {
    pub position: (f32, f32),
    pub state: LightState,
}

/// T future waypoints of the prediction target, ego frame.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruthTrajectory {
    pub points: Vec<(f32, f32)>,
}

/// One ego-centered snapshot. `agents[0]` is the prediction target.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub agents: Vec<Agent>,
    pub map: Vec<MapElement>,
    pub lights: Vec<TrafficLight>,
    /// Per-agent past poses, oldest first, at 5 Hz; `history[a][HISTORY_STEPS - k]`
    /// is agent a's pose k steps before the prediction time.
    pub history: Vec<Vec<Pose>>,
    pub future: GroundTruthTrajectory,
    pub scenario_kind: ScenarioKind,
    pub seed: u64,
    pub difficulty: f32,
}

/// Rigid world-to-ego transform: translate by -ego position, rotate by -ego yaw.
pub fn ego_transform(point: (f32, f32), ego: Pose) -> (f32, f32) {
    let dx = point.0 - ego.x;
    let dy = point.1 - ego.y;
    let (s, c) = ego.yaw.sin_cos();
    (dx * c + dy * s, -dx * s + dy * c)
}

/// Rotate a free vector (velocity, acceleration) into the ego frame.
pub fn ego_rotate(vec: (f32, f32), ego_yaw: f32) -> (f32, f32) {
    let (s, c) = ego_yaw.sin_cos();
    (vec.0 * c + vec.1 * s, -vec.0 * s + vec.1 * c)
}

/// Wrap an angle into [-pi, pi).
pub fn normalize_yaw(yaw: f32) -> f32 {
    let two_pi = 2.0 * std::f32::consts::PI;
    let mut y = (yaw + std::f32::consts::PI).rem_euclid(two_pi);
    if y < 0.0 {
        y += two_pi;
    }
    y - std::f32::consts::PI
}
