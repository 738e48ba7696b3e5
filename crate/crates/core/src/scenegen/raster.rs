//! Bird's-eye-view rasterization of a scene into a fixed 12-channel image.
//!
//! Channel layout:
//!   0      target footprint at the prediction time
//!   1..3   target footprint 5 / 10 / 20 steps in the past
//!   4      other-agent footprints
//!   5      velocity magnitude, |v| / 30, painted over agent footprints
//!   6      yaw, (yaw/pi + 1) / 2, painted over agent footprints
//!   7      lane centerlines
//!   8      road boundaries
//!   9      crosswalks
//!   10     traffic-light state (red 1.0, yellow 0.5, green 0.25) as a disk
//!   11     speed limit / 30 along lanes
//!
//! Geometry: x (forward) points up (decreasing row), y (left) points to the
//! image left (decreasing column); the ego pixel sits at (3H/4, W/2).
//! Coverage is binary (pixel centers, no anti-aliasing), overlaps keep the
//! max value, and anything outside the extent is clipped. Rasterization is a
//! pure function of (scene, config).

use super::{AgentKind, LightState, MapElementKind, Pose, Scene, MAX_SPEED};
use crate::error::{Error, Result};

pub const RASTER_CHANNELS: usize = 12;

const VEHICLE_HALF_LENGTH: f32 = 2.25;
const VEHICLE_HALF_WIDTH: f32 = 1.0;
const PEDESTRIAN_RADIUS: f32 = 0.35;
const LIGHT_RADIUS: f32 = 1.0;
/// History footprint channels, as steps into the past.
const HISTORY_CHANNEL_STEPS: [usize; 3] = [5, 10, 20];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RasterConfig {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub meters_per_pixel: f32,
}

impl Default for RasterConfig {
    fn default() -> Self {
        RasterConfig {
            channels: RASTER_CHANNELS,
            height: 64,
            width: 64,
            meters_per_pixel: 0.5,
        }
    }
}

impl RasterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels != RASTER_CHANNELS {
            return Err(Error::Config(format!(
                "raster channels must be {RASTER_CHANNELS} (fixed layout), got {}",
                self.channels
            )));
        }
        if self.height == 0 || self.width == 0 {
            return Err(Error::Config("raster dimensions must be positive".into()));
        }
        if !(self.meters_per_pixel > 0.0) || !self.meters_per_pixel.is_finite() {
            return Err(Error::Config(format!(
                "meters_per_pixel must be positive, got {}",
                self.meters_per_pixel
            )));
        }
        Ok(())
    }

    pub fn ego_pixel(&self) -> (usize, usize) {
        (self.height * 3 / 4, self.width / 2)
    }
}

/// C x H x W grid of f32 in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct RasterTensor {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
    pub meters_per_pixel: f32,
    pub ego_pixel: (usize, usize),
}

impl RasterTensor {
    pub fn get(&self, c: usize, row: usize, col: usize) -> f32 {
        self.data[(c * self.height + row) * self.width + col]
    }

    fn paint_max(&mut self, c: usize, row: usize, col: usize, value: f32) {
        let idx = (c * self.height + row) * self.width + col;
        if value > self.data[idx] {
            self.data[idx] = value;
        }
    }

    /// Meter coordinates of a pixel center.
    fn pixel_center(&self, row: usize, col: usize) -> (f32, f32) {
        (
            (self.ego_pixel.0 as f32 - row as f32) * self.meters_per_pixel,
            (self.ego_pixel.1 as f32 - col as f32) * self.meters_per_pixel,
        )
    }

    /// Pixel indices containing a meter point, if inside the grid.
    fn pixel_of(&self, x: f32, y: f32) -> Option<(usize, usize)> {
        let row = self.ego_pixel.0 as f32 - x / self.meters_per_pixel;
        let col = self.ego_pixel.1 as f32 - y / self.meters_per_pixel;
        let (row, col) = (row.round(), col.round());
        if row < 0.0 || col < 0.0 || row >= self.height as f32 || col >= self.width as f32 {
            return None;
        }
        Some((row as usize, col as usize))
    }
}

pub fn rasterize(scene: &Scene, config: &RasterConfig) -> Result<RasterTensor> {
    config.validate()?;
    let mut raster = RasterTensor {
        channels: config.channels,
        height: config.height,
        width: config.width,
        data: vec![0.0; config.channels * config.height * config.width],
        meters_per_pixel: config.meters_per_pixel,
        ego_pixel: config.ego_pixel(),
    };

    if let Some(target) = scene.agents.first() {
        let pose = Pose {
            x: target.position.0,
            y: target.position.1,
            yaw: target.yaw,
        };
        fill_footprint(&mut raster, 0, pose, target.kind, 1.0);
        if let Some(hist) = scene.history.first() {
            for (ch, &steps_back) in HISTORY_CHANNEL_STEPS.iter().enumerate() {
                if hist.len() >= steps_back {
                    let p = hist[hist.len() - steps_back];
                    fill_footprint(&mut raster, 1 + ch, p, target.kind, 1.0);
                }
            }
        }
    }
    for agent in scene.agents.iter().skip(1) {
        let pose = Pose {
            x: agent.position.0,
            y: agent.position.1,
            yaw: agent.yaw,
        };
        fill_footprint(&mut raster, 4, pose, agent.kind, 1.0);
    }
    for agent in &scene.agents {
        let pose = Pose {
            x: agent.position.0,
            y: agent.position.1,
            yaw: agent.yaw,
        };
        let speed = (agent.velocity.0.powi(2) + agent.velocity.1.powi(2)).sqrt();
        fill_footprint(&mut raster, 5, pose, agent.kind, (speed / MAX_SPEED).clamp(0.0, 1.0));
        let yaw_enc = (agent.yaw / std::f32::consts::PI + 1.0) * 0.5;
        fill_footprint(&mut raster, 6, pose, agent.kind, yaw_enc.clamp(0.0, 1.0));
    }

    for element in &scene.map {
        match element.kind {
            MapElementKind::Lane => {
                draw_polyline(&mut raster, 7, &element.polyline, 1.0);
                let limit = (element.attributes.speed_limit / MAX_SPEED).clamp(0.0, 1.0);
                draw_polyline(&mut raster, 11, &element.polyline, limit);
            }
            MapElementKind::RoadBoundary => draw_polyline(&mut raster, 8, &element.polyline, 1.0),
            MapElementKind::Crosswalk => draw_polyline(&mut raster, 9, &element.polyline, 1.0),
        }
    }

    for light in &scene.lights {
        let value = match light.state {
            LightState::Red => 1.0,
            LightState::Yellow => 0.5,
            LightState::Green => 0.25,
            LightState::Unknown => 0.0,
        };
        if value > 0.0 {
            fill_disk(&mut raster, 10, light.position, LIGHT_RADIUS, value);
        }
    }

    Ok(raster)
}

/// Binary-coverage footprint: oriented 4.5 x 2 m rectangle for vehicles,
/// 0.7 m disk for pedestrians. Pixels whose center lies inside are painted.
fn fill_footprint(raster: &mut RasterTensor, channel: usize, pose: Pose, kind: AgentKind, value: f32) {
    match kind {
        AgentKind::Vehicle => {
            let reach = (VEHICLE_HALF_LENGTH * VEHICLE_HALF_LENGTH
                + VEHICLE_HALF_WIDTH * VEHICLE_HALF_WIDTH)
                .sqrt();
            let (s, c) = pose.yaw.sin_cos();
            for_each_pixel_near(raster, (pose.x, pose.y), reach, |raster, row, col| {
                let (px, py) = raster.pixel_center(row, col);
                let (dx, dy) = (px - pose.x, py - pose.y);
                let u = dx * c + dy * s;
                let w = -dx * s + dy * c;
                if u.abs() <= VEHICLE_HALF_LENGTH && w.abs() <= VEHICLE_HALF_WIDTH {
                    raster.paint_max(channel, row, col, value);
                }
            });
        }
        AgentKind::Pedestrian => fill_disk(raster, channel, (pose.x, pose.y), PEDESTRIAN_RADIUS, value),
    }
}

fn fill_disk(raster: &mut RasterTensor, channel: usize, center: (f32, f32), radius: f32, value: f32) {
    for_each_pixel_near(raster, center, radius, |raster, row, col| {
        let (px, py) = raster.pixel_center(row, col);
        let (dx, dy) = (px - center.0, py - center.1);
        if dx * dx + dy * dy <= radius * radius {
            raster.paint_max(channel, row, col, value);
        }
    });
}

/// Visit grid pixels within `reach` meters of a point, clipped to the grid.
fn for_each_pixel_near(
    raster: &mut RasterTensor,
    center: (f32, f32),
    reach: f32,
    mut f: impl FnMut(&mut RasterTensor, usize, usize),
) {
    let mpp = raster.meters_per_pixel;
    let r_px = (reach / mpp).ceil() + 1.0;
    let row_c = raster.ego_pixel.0 as f32 - center.0 / mpp;
    let col_c = raster.ego_pixel.1 as f32 - center.1 / mpp;
    let row_lo = ((row_c - r_px).floor().max(0.0)) as i64;
    let row_hi = ((row_c + r_px).ceil().min(raster.height as f32 - 1.0)) as i64;
    let col_lo = ((col_c - r_px).floor().max(0.0)) as i64;
    let col_hi = ((col_c + r_px).ceil().min(raster.width as f32 - 1.0)) as i64;
    if row_hi < row_lo || col_hi < col_lo || row_lo >= raster.height as i64 || col_lo >= raster.width as i64 {
        return;
    }
    for row in row_lo..=row_hi {
        for col in col_lo..=col_hi {
            f(raster, row as usize, col as usize);
        }
    }
}

fn draw_polyline(raster: &mut RasterTensor, channel: usize, points: &[(f32, f32)], value: f32) {
    let step = raster.meters_per_pixel * 0.25;
    for seg in points.windows(2) {
        let (ax, ay) = seg[0];
        let (bx, by) = seg[1];
        let len = ((bx - ax).powi(2) + (by - ay).powi(2)).sqrt();
        let n = (len / step).ceil().max(1.0) as usize;
        for i in 0..=n {
            let t = i as f32 / n as f32;
            let x = ax + t * (bx - ax);
            let y = ay + t * (by - ay);
            if let Some((row, col)) = raster.pixel_of(x, y) {
                raster.paint_max(channel, row, col, value);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenegen::{
        generate_scene, Agent, GroundTruthTrajectory, ScenarioKind, Scene, TrafficLight,
    };

    fn empty_scene() -> Scene {
        Scene {
            agents: vec![],
            map: vec![],
            lights: vec![],
            history: vec![],
            future: GroundTruthTrajectory { points: vec![] },
            scenario_kind: ScenarioKind::Straight,
            seed: 0,
            difficulty: 0.0,
        }
    }

    fn vehicle_at(x: f32, y: f32, yaw: f32) -> Agent {
        Agent {
            position: (x, y),
            velocity: (0.0, 0.0),
            acceleration: (0.0, 0.0),
            yaw,
            kind: AgentKind::Vehicle,
        }
    }

    #[test]
    fn empty_scene_rasters_to_zero() {
        let raster = rasterize(&empty_scene(), &RasterConfig::default()).unwrap();
        assert!(raster.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn target_at_origin_marks_ego_pixel() {
        let mut scene = empty_scene();
        scene.agents.push(vehicle_at(0.0, 0.0, 0.0));
        scene.history.push(vec![]);
        let raster = rasterize(&scene, &RasterConfig::default()).unwrap();
        let (er, ec) = raster.ego_pixel;
        assert_eq!((er, ec), (48, 32));
        assert_eq!(raster.get(0, er, ec), 1.0);
    }

    #[test]
    fn agent_ten_meters_ahead_lands_twenty_pixels_forward() {
        // x_px = 10 m / 0.5 m/px = 20 px forward of the ego pixel.
        let mut scene = empty_scene();
        scene.agents.push(vehicle_at(0.0, 0.0, 0.0));
        scene.history.push(vec![]);
        scene.agents.push(vehicle_at(10.0, 0.0, 0.0));
        scene.history.push(vec![]);
        let raster = rasterize(&scene, &RasterConfig::default()).unwrap();
        let (er, ec) = raster.ego_pixel;
        assert_eq!(raster.get(4, er - 20, ec), 1.0);
        // Centroid of channel 4 coverage sits at the expected center.
        let (mut sr, mut sc, mut n) = (0.0f64, 0.0f64, 0.0f64);
        for r in 0..raster.height {
            for c in 0..raster.width {
                if raster.get(4, r, c) > 0.0 {
                    sr += r as f64;
                    sc += c as f64;
                    n += 1.0;
                }
            }
        }
        assert!((sr / n - (er - 20) as f64).abs() < 1.0);
        assert!((sc / n - ec as f64).abs() < 1.0);
    }

    #[test]
    fn out_of_extent_agent_is_clipped_silently() {
        let mut scene = empty_scene();
        scene.agents.push(vehicle_at(0.0, 0.0, 0.0));
        scene.history.push(vec![]);
        let base = rasterize(&scene, &RasterConfig::default()).unwrap();
        scene.agents.push(vehicle_at(500.0, 0.0, 0.0));
        scene.history.push(vec![]);
        let with_far = rasterize(&scene, &RasterConfig::default()).unwrap();
        assert_eq!(base.data, with_far.data);
    }

    #[test]
    fn invalid_configs_error() {
        let scene = empty_scene();
        let bad_channels = RasterConfig { channels: 5, ..Default::default() };
        assert!(rasterize(&scene, &bad_channels).is_err());
        let bad_mpp = RasterConfig { meters_per_pixel: 0.0, ..Default::default() };
        assert!(rasterize(&scene, &bad_mpp).is_err());
        let bad_dim = RasterConfig { height: 0, ..Default::default() };
        assert!(rasterize(&scene, &bad_dim).is_err());
    }

    #[test]
    fn rasterize_is_pure_and_bounded() {
        for seed in 0..12u64 {
            for kind in ScenarioKind::ALL {
                let scene = generate_scene(seed, kind, 0.9);
                let a = rasterize(&scene, &RasterConfig::default()).unwrap();
                let b = rasterize(&scene, &RasterConfig::default()).unwrap();
                assert_eq!(
                    a.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                    b.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
                );
                assert!(a.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
            }
        }
    }

    #[test]
    fn light_states_encode_distinct_values() {
        let mut scene = empty_scene();
        scene.lights.push(TrafficLight { position: (5.0, 0.0), state: LightState::Red });
        let raster = rasterize(&scene, &RasterConfig::default()).unwrap();
        let (er, ec) = raster.ego_pixel;
        assert_eq!(raster.get(10, er - 10, ec), 1.0);

        scene.lights[0].state = LightState::Green;
        let raster = rasterize(&scene, &RasterConfig::default()).unwrap();
        assert_eq!(raster.get(10, er - 10, ec), 0.25);

        scene.lights[0].state = LightState::Unknown;
        let raster = rasterize(&scene, &RasterConfig::default()).unwrap();
        assert_eq!(raster.get(10, er - 10, ec), 0.0);
    }

    #[test]
    fn fork_scene_shows_both_branches() {
        // Lanes for both branches must appear: pixels left and right of the
        // centerline in the lane channel, well past the fork point.
        let scene = generate_scene(11, ScenarioKind::Fork, 0.2);
        let raster = rasterize(&scene, &RasterConfig::default()).unwrap();
        let (mut left, mut right) = (false, false);
        for r in 0..16 {
            for c in 0..raster.width {
                if raster.get(7, r, c) > 0.0 {
                    if c < raster.ego_pixel.1 - 3 {
                        left = true;
                    }
                    if c > raster.ego_pixel.1 + 3 {
                        right = true;
                    }
                }
            }
        }
        assert!(left && right, "fork raster misses a branch: left={left} right={right}");
    }
}
