//! Dataset file format.
//!
//! Layout (little-endian):
//!   magic "SVMPDS1" (7 bytes), u32 scene count, then per scene:
//!     u64 seed, u8 kind, f32 difficulty,
//!     u32 n_agents, u32 n_map, u32 n_lights,
//!     agents:  n_agents x (f32 x y vx vy ax ay yaw, u8 kind),
//!     history: n_agents x 25 x (f32 x y yaw),
//!     map:     n_map x (u8 kind, u32 n_points, f32 dir_sign speed_limit
//!              priority, n_points x (f32 x y)),
//!     lights:  n_lights x (f32 x y, u8 state),
//!     future:  25 x (f32 x y).
//!
//! Writing is byte-deterministic for a given scene list.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::{
    Agent, AgentKind, GroundTruthTrajectory, LaneAttributes, LightState, MapElement,
    MapElementKind, Pose, ScenarioKind, Scene, TrafficLight, HISTORY_STEPS, HORIZON_STEPS,
};
use crate::error::{Error, Result};

const MAGIC: &[u8; 7] = b"SVMPDS1";
const MAX_COUNT: u32 = 1 << 20;

pub fn write_dataset(path: &Path, scenes: &[Scene]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(scenes.len() as u32).to_le_bytes())?;
    for scene in scenes {
        write_scene(&mut w, scene)?;
    }
    w.flush()?;
    Ok(())
}

fn write_scene<W: Write>(w: &mut W, scene: &Scene) -> Result<()> {
    w.write_all(&scene.seed.to_le_bytes())?;
    w.write_all(&[scene.scenario_kind.as_u8()])?;
    w.write_all(&scene.difficulty.to_le_bytes())?;
    w.write_all(&(scene.agents.len() as u32).to_le_bytes())?;
    w.write_all(&(scene.map.len() as u32).to_le_bytes())?;
    w.write_all(&(scene.lights.len() as u32).to_le_bytes())?;
    for a in &scene.agents {
        for v in [
            a.position.0,
            a.position.1,
            a.velocity.0,
            a.velocity.1,
            a.acceleration.0,
            a.acceleration.1,
            a.yaw,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&[match a.kind {
            AgentKind::Vehicle => 0u8,
            AgentKind::Pedestrian => 1,
        }])?;
    }
    for hist in &scene.history {
        debug_assert_eq!(hist.len(), HISTORY_STEPS);
        for p in hist {
            w.write_all(&p.x.to_le_bytes())?;
            w.write_all(&p.y.to_le_bytes())?;
            w.write_all(&p.yaw.to_le_bytes())?;
        }
    }
    for m in &scene.map {
        w.write_all(&[match m.kind {
            MapElementKind::Lane => 0u8,
            MapElementKind::RoadBoundary => 1,
            MapElementKind::Crosswalk => 2,
        }])?;
        w.write_all(&(m.polyline.len() as u32).to_le_bytes())?;
        for v in [
            m.attributes.direction_sign,
            m.attributes.speed_limit,
            m.attributes.priority,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        for &(x, y) in &m.polyline {
            w.write_all(&x.to_le_bytes())?;
            w.write_all(&y.to_le_bytes())?;
        }
    }
    for l in &scene.lights {
        w.write_all(&l.position.0.to_le_bytes())?;
        w.write_all(&l.position.1.to_le_bytes())?;
        w.write_all(&[match l.state {
            LightState::Red => 0u8,
            LightState::Yellow => 1,
            LightState::Green => 2,
            LightState::Unknown => 3,
        }])?;
    }
    debug_assert_eq!(scene.future.points.len(), HORIZON_STEPS);
    for &(x, y) in &scene.future.points {
        w.write_all(&x.to_le_bytes())?;
        w.write_all(&y.to_le_bytes())?;
    }
    Ok(())
}

struct Reader<R: Read> {
    inner: R,
    path: PathBuf,
}

impl<R: Read> Reader<R> {
    fn bad(&self, reason: impl Into<String>) -> Error {
        Error::Malformed {
            path: self.path.clone(),
            reason: reason.into(),
        }
    }

    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| self.bad("unexpected end of file"))?;
        Ok(buf)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.bytes()?))
    }

    fn count(&mut self, what: &str) -> Result<usize> {
        let n = self.u32()?;
        if n > MAX_COUNT {
            return Err(self.bad(format!("{what} count {n} exceeds limit")));
        }
        Ok(n as usize)
    }
}

pub fn read_dataset(path: &Path) -> Result<Vec<Scene>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut r = Reader {
        inner: BufReader::new(File::open(path)?),
        path: path.to_path_buf(),
    };
    let magic = r.bytes::<7>()?;
    if &magic != MAGIC {
        return Err(r.bad("bad magic"));
    }
    let count = r.count("scene")?;
    let mut scenes = Vec::with_capacity(count);
    for _ in 0..count {
        scenes.push(read_scene(&mut r)?);
    }
    // Trailing garbage means the file was not produced by this writer.
    let mut probe = [0u8; 1];
    if r.inner.read(&mut probe).map_err(Error::Io)? != 0 {
        return Err(r.bad("trailing bytes after last scene"));
    }
    Ok(scenes)
}

fn read_scene<R: Read>(r: &mut Reader<R>) -> Result<Scene> {
    let seed = r.u64()?;
    let kind_byte = r.u8()?;
    let scenario_kind = ScenarioKind::from_u8(kind_byte)
        .ok_or_else(|| r.bad(format!("unknown scenario kind {kind_byte}")))?;
    let difficulty = r.f32()?;
    let n_agents = r.count("agent")?;
    let n_map = r.count("map element")?;
    let n_lights = r.count("light")?;

    let mut agents = Vec::with_capacity(n_agents);
    for _ in 0..n_agents {
        let vals: Vec<f32> = (0..7).map(|_| r.f32()).collect::<Result<_>>()?;
        let kind = match r.u8()? {
            0 => AgentKind::Vehicle,
            1 => AgentKind::Pedestrian,
            other => return Err(r.bad(format!("unknown agent kind {other}"))),
        };
        agents.push(Agent {
            position: (vals[0], vals[1]),
            velocity: (vals[2], vals[3]),
            acceleration: (vals[4], vals[5]),
            yaw: vals[6],
            kind,
        });
    }
    let mut history = Vec::with_capacity(n_agents);
    for _ in 0..n_agents {
        let mut poses = Vec::with_capacity(HISTORY_STEPS);
        for _ in 0..HISTORY_STEPS {
            poses.push(Pose {
                x: r.f32()?,
                y: r.f32()?,
                yaw: r.f32()?,
            });
        }
        history.push(poses);
    }
    let mut map = Vec::with_capacity(n_map);
    for _ in 0..n_map {
        let kind = match r.u8()? {
            0 => MapElementKind::Lane,
            1 => MapElementKind::RoadBoundary,
            2 => MapElementKind::Crosswalk,
            other => return Err(r.bad(format!("unknown map element kind {other}"))),
        };
        let n_points = r.count("polyline point")?;
        if n_points < 2 {
            return Err(r.bad("polyline needs at least 2 points"));
        }
        let attributes = LaneAttributes {
            direction_sign: r.f32()?,
            speed_limit: r.f32()?,
            priority: r.f32()?,
        };
        let mut polyline = Vec::with_capacity(n_points);
        for _ in 0..n_points {
            polyline.push((r.f32()?, r.f32()?));
        }
        map.push(MapElement { kind, polyline, attributes });
    }
    let mut lights = Vec::with_capacity(n_lights);
    for _ in 0..n_lights {
        let position = (r.f32()?, r.f32()?);
        let state = match r.u8()? {
            0 => LightState::Red,
            1 => LightState::Yellow,
            2 => LightState::Green,
            3 => LightState::Unknown,
            other => return Err(r.bad(format!("unknown light state {other}"))),
        };
        lights.push(TrafficLight { position, state });
    }
    let mut points = Vec::with_capacity(HORIZON_STEPS);
    for _ in 0..HORIZON_STEPS {
        points.push((r.f32()?, r.f32()?));
    }
    Ok(Scene {
        agents,
        map,
        lights,
        history,
        future: GroundTruthTrajectory { points },
        scenario_kind,
        seed,
        difficulty,
    })
}

/// SHA-256 of a file's bytes, hex-encoded; recorded in run manifests.
pub fn file_sha256(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut f = File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 8192];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}
