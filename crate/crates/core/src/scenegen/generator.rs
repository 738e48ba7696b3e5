//! Deterministic synthetic scene generation.
//!
//! A scene is a pure function of (seed, scenario kind, difficulty). The
//! target's motion is simulated in a world frame over [-5 s, +5 s] at 5 Hz,
//! the map is laid out along its path, and everything is then transformed
//! into the target's frame at the prediction time. Difficulty scales speed
//! wobble, heading jitter and scene clutter; at 0 the noise terms vanish
//! exactly, so a straight scene is a perfect constant-velocity line.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::*;
use crate::seed::derive_seed2;

const SIM_STEPS: usize = HISTORY_STEPS + 1 + HORIZON_STEPS; // poses -5 s ..= +5 s
const NOW: usize = HISTORY_STEPS; // index of the prediction-time pose

#[derive(Clone, Debug)]
struct PathParams {
    kind: ScenarioKind,
    difficulty: f32,
    v0: f32,
    curvature: f32,
    brake_time: f32,
    decel: f32,
    fork_distance: f32,
    branch_angle: f32,
    fork_side: f32,
    noise_seed: u64,
    world_x: f32,
    world_y: f32,
    world_yaw: f32,
}

const FORK_TRANSITION_M: f32 = 8.0;

fn draw_params(rng: &mut ChaCha20Rng, kind: ScenarioKind, difficulty: f32) -> PathParams {
    let v0 = match kind {
        ScenarioKind::Straight => rng.gen_range(3.0..13.0),
        ScenarioKind::Turn => rng.gen_range(4.0..10.0),
        ScenarioKind::Fork => rng.gen_range(8.0..12.0),
        ScenarioKind::Stop => rng.gen_range(4.0..12.0),
    };
    let radius: f32 = rng.gen_range(12.0..40.0);
    let turn_left = rng.gen_bool(0.5);
    let curvature = if turn_left { 1.0 / radius } else { -1.0 / radius };
    let brake_time = rng.gen_range(-0.5..1.0);
    let decel = rng.gen_range(1.5..3.5);
    let fork_distance = rng.gen_range(8.0..15.0);
    let branch_angle = rng.gen_range(0.40..0.62);
    let fork_side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    let noise_seed = rng.gen();
    let world_x = rng.gen_range(-200.0..200.0);
    let world_y = rng.gen_range(-200.0..200.0);
    let world_yaw = rng.gen_range(-std::f32::consts::PI..std::f32::consts::PI);
    PathParams {
        kind,
        difficulty,
        v0,
        curvature,
        brake_time,
        decel,
        fork_distance,
        branch_angle,
        fork_side,
        noise_seed,
        world_x,
        world_y,
        world_yaw,
    }
}

/// World-frame target path: poses plus per-step speeds, index NOW = t 0.
struct TargetPath {
    poses: Vec<Pose>,
    speeds: Vec<f32>,
}

fn build_target_path(p: &PathParams, side: f32) -> TargetPath {
    let mut noise = ChaCha20Rng::seed_from_u64(p.noise_seed);
    // Draw all noise up front so both fork sides see identical draws.
    let speed_noise: Vec<f32> = (0..SIM_STEPS).map(|_| noise.gen_range(-1.0..1.0f32)).collect();
    let heading_noise: Vec<f32> = (0..SIM_STEPS).map(|_| noise.gen_range(-1.0..1.0f32)).collect();

    let wobble = match p.kind {
        ScenarioKind::Fork => 1.0,
        _ => 1.5,
    } * p.difficulty;
    let jitter = match p.kind {
        ScenarioKind::Fork => 0.0,
        _ => 0.02,
    } * p.difficulty;

    // Pass 1: speed profile (independent of heading).
    let mut speeds = Vec::with_capacity(SIM_STEPS);
    for (i, sn) in speed_noise.iter().enumerate() {
        let t = (i as isize - NOW as isize) as f32 * STEP_SECONDS;
        let base = p.v0 + wobble * (0.7 * t).sin() + 0.3 * wobble * sn;
        let v = match p.kind {
            ScenarioKind::Stop => {
                if t >= p.brake_time {
                    (base - p.decel * (t - p.brake_time)).max(0.0)
                } else {
                    base
                }
            }
            _ => base,
        };
        speeds.push(v.clamp(0.0, MAX_SPEED * 0.9));
    }
    let s_now: f32 = speeds[..NOW].iter().map(|v| v * STEP_SECONDS).sum();
    let s_fork = s_now + p.fork_distance;

    // Pass 2: integrate positions under the heading profile.
    let heading_at = |s: f32| -> f32 {
        match p.kind {
            ScenarioKind::Straight | ScenarioKind::Stop => 0.0,
            ScenarioKind::Turn => p.curvature * s,
            ScenarioKind::Fork => {
                if s <= s_fork {
                    0.0
                } else {
                    side * p.branch_angle * ((s - s_fork) / FORK_TRANSITION_M).min(1.0)
                }
            }
        }
    };

    let mut poses = Vec::with_capacity(SIM_STEPS);
    let (mut x, mut y, mut s) = (0.0f32, 0.0f32, 0.0f32);
    for i in 0..SIM_STEPS {
        let yaw = heading_at(s) + jitter * heading_noise[i];
        poses.push(Pose { x, y, yaw });
        let (sy, cy) = yaw.sin_cos();
        x += speeds[i] * STEP_SECONDS * cy;
        y += speeds[i] * STEP_SECONDS * sy;
        s += speeds[i] * STEP_SECONDS;
    }

    // Place in the world frame.
    let (ws, wc) = p.world_yaw.sin_cos();
    for pose in poses.iter_mut() {
        let (px, py) = (pose.x, pose.y);
        pose.x = p.world_x + px * wc - py * ws;
        pose.y = p.world_y + px * ws + py * wc;
        pose.yaw = normalize_yaw(pose.yaw + p.world_yaw);
    }
    TargetPath { poses, speeds }
}

/// Offset a polyline laterally by `lateral` meters (positive = left of travel).
fn offset_polyline(points: &[(f32, f32)], lateral: f32) -> Vec<(f32, f32)> {
    let n = points.len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let (ax, ay) = points[i.saturating_sub(1)];
        let (bx, by) = points[(i + 1).min(n - 1)];
        let (dx, dy) = (bx - ax, by - ay);
        let len = (dx * dx + dy * dy).sqrt().max(1e-6);
        // Unit left normal of the travel direction.
        let (nx, ny) = (-dy / len, dx / len);
        out.push((points[i].0 + lateral * nx, points[i].1 + lateral * ny));
    }
    out
}

/// Path position and left normal at arclength `s_query` from the path start.
fn point_at_arclength(path: &TargetPath, s_query: f32) -> ((f32, f32), (f32, f32)) {
    let mut s = 0.0f32;
    for i in 0..SIM_STEPS - 1 {
        let step = path.speeds[i] * STEP_SECONDS;
        if s + step >= s_query || i == SIM_STEPS - 2 {
            let a = path.poses[i];
            let b = path.poses[i + 1];
            let frac = if step > 1e-6 { ((s_query - s) / step).clamp(0.0, 1.0) } else { 0.0 };
            let px = a.x + frac * (b.x - a.x);
            let py = a.y + frac * (b.y - a.y);
            let (dx, dy) = (b.x - a.x, b.y - a.y);
            let len = (dx * dx + dy * dy).sqrt().max(1e-6);
            return ((px, py), (-dy / len, dx / len));
        }
        s += step;
    }
    let last = path.poses[SIM_STEPS - 1];
    ((last.x, last.y), (0.0, 1.0))
}

fn path_polyline(path: &TargetPath, stride: usize) -> Vec<(f32, f32)> {
    let mut pts: Vec<(f32, f32)> = path
        .poses
        .iter()
        .step_by(stride.max(1))
        .map(|p| (p.x, p.y))
        .collect();
    // Extend past the simulated horizon so lanes reach the raster edge.
    let last = path.poses[SIM_STEPS - 1];
    let (sy, cy) = last.yaw.sin_cos();
    for k in 1..=3 {
        pts.push((last.x + 5.0 * k as f32 * cy, last.y + 5.0 * k as f32 * sy));
    }
    pts
}

/// Generate one scene. Deterministic in (seed, kind, difficulty).
pub fn generate_scene(seed: u64, kind: ScenarioKind, difficulty: f32) -> Scene {
    let difficulty = difficulty.clamp(0.0, 1.0);
    let stream = derive_seed2(
        seed,
        "scenegen",
        ((kind.as_u8() as u64) << 32) ^ difficulty.to_bits() as u64,
    );
    let mut rng = ChaCha20Rng::seed_from_u64(stream);

    let params = draw_params(&mut rng, kind, difficulty);
    let path = build_target_path(&params, params.fork_side);
    let ego = path.poses[NOW];

    // Target agent at the prediction time.
    let vel_world = |i: usize| -> (f32, f32) {
        let (sy, cy) = path.poses[i].yaw.sin_cos();
        (path.speeds[i] * cy, path.speeds[i] * sy)
    };
    let v_now = vel_world(NOW);
    let v_prev = vel_world(NOW - 1);
    let accel_world = (
        (v_now.0 - v_prev.0) / STEP_SECONDS,
        (v_now.1 - v_prev.1) / STEP_SECONDS,
    );
    let target = Agent {
        position: ego_transform((ego.x, ego.y), ego),
        velocity: ego_rotate(v_now, ego.yaw),
        acceleration: ego_rotate(accel_world, ego.yaw),
        yaw: normalize_yaw(ego.yaw - ego.yaw),
        kind: AgentKind::Vehicle,
    };
    let target_history: Vec<Pose> = (0..HISTORY_STEPS)
        .map(|i| {
            let p = path.poses[i];
            let (x, y) = ego_transform((p.x, p.y), ego);
            Pose { x, y, yaw: normalize_yaw(p.yaw - ego.yaw) }
        })
        .collect();
    let future = GroundTruthTrajectory {
        points: (NOW + 1..SIM_STEPS)
            .map(|i| ego_transform((path.poses[i].x, path.poses[i].y), ego))
            .collect(),
    };

    // Map along the target path (world frame, transformed afterwards).
    let mut map_world: Vec<MapElement> = Vec::new();
    let lane_attrs = LaneAttributes {
        direction_sign: 1.0,
        speed_limit: (params.v0 * 1.3).clamp(5.0, MAX_SPEED),
        priority: if rng.gen_bool(0.5) { 1.0 } else { 0.0 },
    };
    let main_lane = path_polyline(&path, 2);
    map_world.push(MapElement {
        kind: MapElementKind::Lane,
        polyline: main_lane.clone(),
        attributes: lane_attrs,
    });
    if kind == ScenarioKind::Fork {
        // The untaken branch is part of the map; the raster must show both.
        let other = build_target_path(&params, -params.fork_side);
        map_world.push(MapElement {
            kind: MapElementKind::Lane,
            polyline: path_polyline(&other, 2),
            attributes: lane_attrs,
        });
    }
    let has_adjacent = kind != ScenarioKind::Fork && rng.gen_bool(0.4);
    if has_adjacent {
        map_world.push(MapElement {
            kind: MapElementKind::Lane,
            polyline: offset_polyline(&main_lane, 3.5),
            attributes: LaneAttributes {
                direction_sign: -1.0,
                ..lane_attrs
            },
        });
    }
    let left_width = if has_adjacent { 5.75 } else { 2.5 };
    map_world.push(MapElement {
        kind: MapElementKind::RoadBoundary,
        polyline: offset_polyline(&main_lane, left_width),
        attributes: LaneAttributes::default(),
    });
    map_world.push(MapElement {
        kind: MapElementKind::RoadBoundary,
        polyline: offset_polyline(&main_lane, -2.5),
        attributes: LaneAttributes::default(),
    });

    let s_now: f32 = path.speeds[..NOW].iter().map(|v| v * STEP_SECONDS).sum();
    let crosswalk_s = s_now + rng.gen_range(12.0..22.0);
    let wants_crosswalk = kind == ScenarioKind::Stop || rng.gen_bool(0.3);
    if wants_crosswalk {
        let (c, n) = point_at_arclength(&path, crosswalk_s);
        map_world.push(MapElement {
            kind: MapElementKind::Crosswalk,
            polyline: vec![
                (c.0 - 4.0 * n.0, c.1 - 4.0 * n.1),
                (c.0 + 4.0 * n.0, c.1 + 4.0 * n.1),
            ],
            attributes: LaneAttributes::default(),
        });
    }

    // Traffic light: red at the stop point for stop scenes, otherwise
    // green/unknown somewhere ahead on the lane.
    let light_s = s_now + rng.gen_range(15.0..25.0);
    let light_roll: f64 = rng.gen();
    let light_world = match kind {
        ScenarioKind::Stop => {
            let v_b = params.v0;
            let stop_s = s_now
                + (params.brake_time.max(0.0) * v_b + v_b * v_b / (2.0 * params.decel)).max(2.0);
            let (pos, _) = point_at_arclength(&path, stop_s);
            TrafficLight { position: pos, state: LightState::Red }
        }
        _ => {
            let (pos, _) = point_at_arclength(&path, light_s);
            let state = if light_roll < 0.55 { LightState::Green } else { LightState::Unknown };
            TrafficLight { position: pos, state }
        }
    };

    // Other agents, generated directly in the ego frame.
    let n_other = ((difficulty * 5.0) as usize + usize::from(rng.gen_bool(0.3))).min(6);
    let mut agents = vec![target];
    let mut history = vec![target_history];
    for _ in 0..n_other {
        let other_kind = if rng.gen_bool(0.75) { AgentKind::Vehicle } else { AgentKind::Pedestrian };
        let lat: f32 = rng.gen_range(3.2..8.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let lon: f32 = rng.gen_range(-12.0..25.0);
        let (speed, yaw) = match other_kind {
            AgentKind::Vehicle => {
                let forward = rng.gen_bool(0.7);
                (rng.gen_range(0.0..12.0), if forward { 0.0 } else { std::f32::consts::PI * -1.0 })
            }
            AgentKind::Pedestrian => (
                rng.gen_range(0.3..1.8),
                normalize_yaw(rng.gen_range(-std::f32::consts::PI..std::f32::consts::PI)),
            ),
        };
        let (sy, cy) = yaw.sin_cos();
        let vel = (speed * cy, speed * sy);
        let agent = Agent {
            position: (lon, lat),
            velocity: vel,
            acceleration: (0.0, 0.0),
            yaw,
            kind: other_kind,
        };
        let hist: Vec<Pose> = (0..HISTORY_STEPS)
            .map(|i| {
                let dt = (i as isize - NOW as isize) as f32 * STEP_SECONDS;
                Pose { x: lon + vel.0 * dt, y: lat + vel.1 * dt, yaw }
            })
            .collect();
        agents.push(agent);
        history.push(hist);
    }

    let to_ego_polyline = |poly: &[(f32, f32)]| -> Vec<(f32, f32)> {
        poly.iter().map(|&p| ego_transform(p, ego)).collect()
    };
    let map: Vec<MapElement> = map_world
        .iter()
        .map(|m| MapElement {
            kind: m.kind,
            polyline: to_ego_polyline(&m.polyline),
            attributes: m.attributes,
        })
        .collect();
    let lights = vec![TrafficLight {
        position: ego_transform(light_world.position, ego),
        state: light_world.state,
    }];

    Scene {
        agents,
        map,
        lights,
        history,
        future,
        scenario_kind: kind,
        seed,
        difficulty,
    }
}

/// Both fork branch futures for a fork scene's parameters, in the scene's
/// ego frame: (left branch, right branch). The pre-fork segment is shared,
/// so the frame is identical for both.
pub fn fork_branches(seed: u64, difficulty: f32) -> (GroundTruthTrajectory, GroundTruthTrajectory) {
    let difficulty = difficulty.clamp(0.0, 1.0);
    let stream = derive_seed2(
        seed,
        "scenegen",
        ((ScenarioKind::Fork.as_u8() as u64) << 32) ^ difficulty.to_bits() as u64,
    );
    let mut rng = ChaCha20Rng::seed_from_u64(stream);
    let params = draw_params(&mut rng, ScenarioKind::Fork, difficulty);
    let branch = |side: f32| -> GroundTruthTrajectory {
        let path = build_target_path(&params, side);
        let ego = path.poses[NOW];
        GroundTruthTrajectory {
            points: (NOW + 1..SIM_STEPS)
                .map(|i| ego_transform((path.poses[i].x, path.poses[i].y), ego))
                .collect(),
        }
    };
    (branch(1.0), branch(-1.0))
}

/// Batch generation recipe shared by the CLI and tests.
#[derive(Clone, Debug)]
pub struct DatasetParams {
    pub count: usize,
    pub seed_base: u64,
    /// Fork-only scenes at difficulty in [0.7, 1.0] — conditions excluded
    /// from the standard training regime.
    pub shifted: bool,
    pub kind: Option<ScenarioKind>,
    pub difficulty: Option<f32>,
}

/// Generate `count` scenes with seeds seed_base, seed_base+1, ...
///
/// Standard regime cycles {straight, turn, stop} with per-seed difficulty in
/// [0, 0.6]; the shifted regime is fork-only with difficulty in [0.7, 1.0].
/// Explicit kind/difficulty override either regime.
pub fn build_dataset(params: &DatasetParams) -> Vec<Scene> {
    const STANDARD_KINDS: [ScenarioKind; 3] =
        [ScenarioKind::Straight, ScenarioKind::Turn, ScenarioKind::Stop];
    (0..params.count)
        .map(|i| {
            let seed = params.seed_base + i as u64;
            let kind = params.kind.unwrap_or(if params.shifted {
                ScenarioKind::Fork
            } else {
                STANDARD_KINDS[i % STANDARD_KINDS.len()]
            });
            let difficulty = params.difficulty.unwrap_or_else(|| {
                let mut rng = ChaCha20Rng::seed_from_u64(derive_seed2(seed, "difficulty", 0));
                if params.shifted {
                    rng.gen_range(0.7..1.0)
                } else {
                    rng.gen_range(0.0..0.6)
                }
            });
            generate_scene(seed, kind, difficulty)
        })
        .collect()
}
