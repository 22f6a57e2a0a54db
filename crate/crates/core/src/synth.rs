//! Synthetic intersection scenes with exact ground truth.
//!
//! Agents move along simple parametric paths. Each frame samples the visible
//! box surfaces (four sides and the top) with an expected point count of
//! `density · area / r²`, adds Gaussian noise, removes points that fall in
//! the bird's-eye angular shadow of a closer agent, and scatters ground points.
//! Every frame draws from its own RNG stream, so output is a pure function of
//! the config.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::detect_io::{DetectionFrameSet, DetectionSource};
use crate::geometry::{angle_diff, wrap_angle, Box7, Detection, ObjectClass, Point, PointCloud};
use crate::ground::Plane;
use crate::scene::SceneSequence;
use crate::track::{EntrySource, TrackEntry, Tracklet};

/// Typical (length, width, height) for each class.
pub fn default_size(class: ObjectClass) -> [f64; 3] {
    match class {
        ObjectClass::Vehicle => [4.5, 1.8, 1.5],
        ObjectClass::Pedestrian => [0.6, 0.6, 1.7],
        ObjectClass::Cyclist => [1.8, 0.6, 1.7],
        ObjectClass::Motorcycle => [2.0, 0.8, 1.5],
        ObjectClass::Bus => [12.0, 2.5, 3.2],
        ObjectClass::Truck => [8.0, 2.5, 3.0],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrajectorySpec {
    Line { start: [f64; 2], heading: f64 },
    Arc { center: [f64; 2], radius: f64, start_angle: f64, clockwise: bool },
    /// Straight line that alternates `go_frames` of motion with `stop_frames` at rest.
    StopAndGo { start: [f64; 2], heading: f64, go_frames: usize, stop_frames: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub class: ObjectClass,
    pub spawn_frame: usize,
    pub trajectory: TrajectorySpec,
    /// m/s
    pub speed: f64,
    pub size: [f64; 3],
    #[serde(default)]
    pub despawn_frame: Option<usize>,
}

impl AgentSpec {
    pub fn line(class: ObjectClass, spawn_frame: usize, start: [f64; 2], heading: f64, speed: f64) -> Self {
        Self {
            class,
            spawn_frame,
            trajectory: TrajectorySpec::Line { start, heading },
            speed,
            size: default_size(class),
            despawn_frame: None,
        }
    }

    /// BEV pose (x, y, yaw) `elapsed` seconds after spawning.
    fn pose(&self, elapsed: f64, frame_rate: f64) -> (f64, f64, f64) {
        match &self.trajectory {
            TrajectorySpec::Line { start, heading } => {
                let d = self.speed * elapsed;
                (start[0] + d * heading.cos(), start[1] + d * heading.sin(), wrap_angle(*heading))
            }
            TrajectorySpec::Arc { center, radius, start_angle, clockwise } => {
                let sweep = self.speed * elapsed / radius;
                let (theta, yaw) = if *clockwise {
                    let t = start_angle - sweep;
                    (t, t - FRAC_PI_2)
                } else {
                    let t = start_angle + sweep;
                    (t, t + FRAC_PI_2)
                };
                (center[0] + radius * theta.cos(), center[1] + radius * theta.sin(), wrap_angle(yaw))
            }
            TrajectorySpec::StopAndGo { start, heading, go_frames, stop_frames } => {
                let k = (elapsed * frame_rate).round() as usize;
                let cycle = go_frames + stop_frames;
                let moving = if cycle == 0 { k } else { (k / cycle) * go_frames + (k % cycle).min(*go_frames) };
                let d = self.speed * moving as f64 / frame_rate;
                (start[0] + d * heading.cos(), start[1] + d * heading.sin(), wrap_angle(*heading))
            }
        }
    }
}

/// Frames during which a fraction of every agent's points is removed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DropoutWindow {
    pub start_frame: usize,
    pub end_frame: usize,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub duration: usize,
    /// Hz
    pub frame_rate: f64,
    pub sensor_height: f64,
    /// Agents farther than this from the sensor (horizontally) have left the scene.
    pub scene_radius: f64,
    pub agents: Vec<AgentSpec>,
    /// Expected points per square meter of surface at 1 m range.
    pub point_density: f64,
    pub noise_sigma: f64,
    pub ground_points: usize,
    pub ground_z: f64,
    pub dropout_windows: Vec<DropoutWindow>,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            duration: 100,
            frame_rate: 10.0,
            sensor_height: 5.0,
            scene_radius: 60.0,
            agents: Vec::new(),
            point_density: 3000.0,
            noise_sigma: 0.02,
            ground_points: 4000,
            ground_z: 0.0,
            dropout_windows: Vec::new(),
            seed: 0,
        }
    }
}

const MIN_RANGE: f64 = 1.0;

fn frame_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Ground-truth tracklets only (no point sampling); ids are `1..=agents.len()`.
pub fn generate_ground_truth(config: &SceneConfig) -> Vec<Tracklet> {
    config
        .agents
        .iter()
        .enumerate()
        .map(|(i, agent)| {
            let mut t = Tracklet::new(i as u64 + 1, agent.class);
            let end = agent.despawn_frame.unwrap_or(config.duration).min(config.duration);
            for f in agent.spawn_frame..end {
                let elapsed = (f - agent.spawn_frame) as f64 / config.frame_rate;
                let (x, y, yaw) = agent.pose(elapsed, config.frame_rate);
                if x.hypot(y) > config.scene_radius {
                    // Agents that have entered and then leave are gone for good.
                    if !t.is_empty() {
                        break;
                    }
                    continue;
                }
                let [l, w, h] = agent.size;
                let bbox = Box7 { cx: x, cy: y, cz: config.ground_z + 0.5 * h, length: l, width: w, height: h, yaw };
                t.entries.push(TrackEntry::new(f, bbox, EntrySource::Manual));
            }
            t
        })
        .collect()
}

/// Angular extent of a box seen from the sensor at the origin.
#[derive(Debug, Clone, Copy)]
pub struct Shadow {
    center_angle: f64,
    half_width: f64,
    near_range: f64,
    center_range: f64,
}

impl Shadow {
    pub fn of(b: &Box7) -> Shadow {
        let center_angle = b.cy.atan2(b.cx);
        let mut half_width: f64 = 0.0;
        let mut near_range = f64::INFINITY;
        for [x, y] in b.corners_bev() {
            half_width = half_width.max(angle_diff(y.atan2(x), center_angle).abs());
            near_range = near_range.min(x.hypot(y));
        }
        // A box containing the sensor shadows everything.
        if b.contains(0.0, 0.0, b.cz, 0.0) {
            half_width = PI;
            near_range = 0.0;
        }
        Shadow { center_angle, half_width, near_range, center_range: b.cx.hypot(b.cy) }
    }

    /// Whether a point at BEV (x, y) lies behind this box.
    pub fn hides(&self, x: f64, y: f64) -> bool {
        let range = x.hypot(y);
        range > self.near_range && angle_diff(y.atan2(x), self.center_angle).abs() <= self.half_width
    }
}

fn sample_surface(b: &Box7, rng: &mut ChaCha8Rng, n: usize, noise: Option<&Normal<f64>>) -> Vec<Point> {
    let [l, w, h] = b.size();
    let faces = [w * h, w * h, l * h, l * h, l * w];
    let total: f64 = faces.iter().sum();
    (0..n)
        .map(|_| {
            let mut pick = rng.random::<f64>() * total;
            let mut face = faces.len() - 1;
            for (i, a) in faces.iter().enumerate() {
                if pick < *a {
                    face = i;
                    break;
                }
                pick -= a;
            }
            let u = rng.random::<f64>() - 0.5;
            let v = rng.random::<f64>() - 0.5;
            let (lx, ly, lz) = match face {
                0 => (0.5 * l, u * w, v * h),
                1 => (-0.5 * l, u * w, v * h),
                2 => (u * l, 0.5 * w, v * h),
                3 => (u * l, -0.5 * w, v * h),
                _ => (u * l, v * w, 0.5 * h),
            };
            let [mut x, mut y, mut z] = b.to_world(lx, ly, lz);
            if let Some(nd) = noise {
                x += nd.sample(rng);
                y += nd.sample(rng);
                z += nd.sample(rng);
            }
            Point::new(x, y, z, rng.random())
        })
        .collect()
}

/// Expected number of surface points for a box at its current range.
pub fn expected_point_count(b: &Box7, density: f64) -> f64 {
    let [l, w, h] = b.size();
    let area = 2.0 * w * h + 2.0 * l * h + l * w;
    let r = b.cx.hypot(b.cy).max(MIN_RANGE);
    density * area / (r * r)
}

pub fn generate_scene(config: &SceneConfig) -> SceneSequence {
    let gt_tracks = generate_ground_truth(config);
    let noise = (config.noise_sigma > 0.0).then(|| Normal::new(0.0, config.noise_sigma).expect("finite sigma"));

    let frames = (0..config.duration)
        .map(|f| {
            let mut rng = frame_rng(config.seed, f as u64 + 1);
            let visible: Vec<(usize, Box7)> = gt_tracks
                .iter()
                .enumerate()
                .filter_map(|(i, t)| t.entry_at(f).map(|e| (i, e.bbox)))
                .collect();
            let shadows: Vec<Shadow> = visible.iter().map(|(_, b)| Shadow::of(b)).collect();
            let dropout = config
                .dropout_windows
                .iter()
                .filter(|w| (w.start_frame..w.end_frame).contains(&f))
                .map(|w| w.fraction)
                .fold(0.0f64, f64::max);

            let mut points = Vec::new();
            for (k, (_, b)) in visible.iter().enumerate() {
                let lambda = expected_point_count(b, config.point_density);
                let n = if lambda > 0.0 {
                    Poisson::new(lambda).expect("positive rate").sample(&mut rng) as usize
                } else {
                    0
                };
                let own_range = shadows[k].center_range;
                for p in sample_surface(b, &mut rng, n, noise.as_ref()) {
                    let keep_draw: f64 = rng.random();
                    if keep_draw < dropout {
                        continue;
                    }
                    let hidden = shadows
                        .iter()
                        .enumerate()
                        .any(|(j, s)| j != k && s.center_range < own_range && s.hides(p.x, p.y));
                    if !hidden {
                        points.push(p);
                    }
                }
            }

            for _ in 0..config.ground_points {
                let r = MIN_RANGE + rng.random::<f64>() * (config.scene_radius - MIN_RANGE);
                let theta = rng.random::<f64>() * TAU;
                let (x, y) = (r * theta.cos(), r * theta.sin());
                let dz = noise.as_ref().map_or(0.0, |nd| nd.sample(&mut rng));
                let intensity = 0.2 * rng.random::<f64>();
                let covered = visible.iter().any(|(_, b)| b.to_local(x, y, b.cz).iter().take(2).zip([b.length, b.width]).all(|(v, s)| v.abs() <= 0.5 * s));
                if covered || shadows.iter().any(|s| s.hides(x, y)) {
                    continue;
                }
                points.push(Point::new(x, y, config.ground_z + dz, intensity));
            }

            PointCloud::new(points, f as f64 / config.frame_rate, f)
        })
        .collect();

    SceneSequence {
        frames,
        frame_rate: config.frame_rate,
        gt_tracks,
        ground_plane: Some(Plane { a: 0.0, b: 0.0, c: 1.0, d: -config.ground_z }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreModel {
    /// True-positive score is `exp(-d² / 2·falloff²)` for center error `d`, floored at `tp_floor`.
    pub tp_falloff: f64,
    pub tp_floor: f64,
    /// False-positive scores are uniform in `[fp_low, fp_high)`.
    pub fp_low: f64,
    pub fp_high: f64,
}

impl Default for ScoreModel {
    fn default() -> Self {
        Self { tp_falloff: 0.5, tp_floor: 0.55, fp_low: 0.05, fp_high: 0.45 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub dropout: f64,
    /// Expected false positives per frame.
    pub fp_rate: f64,
    /// Per-axis center noise, meters.
    pub box_noise: f64,
    /// Heading noise, radians.
    pub yaw_noise: f64,
    pub score: ScoreModel,
    /// Radius within which false positives are placed.
    pub fp_radius: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self { dropout: 0.0, fp_rate: 0.0, box_noise: 0.0, yaw_noise: 0.0, score: ScoreModel::default(), fp_radius: 60.0 }
    }
}

/// Oracle detector over a generated sequence.
pub fn synth_detector(seq: &SceneSequence, config: &DetectorConfig, seed: u64) -> DetectionFrameSet {
    synth_detector_from_tracks(&seq.gt_tracks, seq.len(), config, seed)
}

/// Oracle detector driven directly by ground-truth tracklets.
pub fn synth_detector_from_tracks(
    gt_tracks: &[Tracklet],
    frame_count: usize,
    config: &DetectorConfig,
    seed: u64,
) -> DetectionFrameSet {
    let center_noise = (config.box_noise > 0.0).then(|| Normal::new(0.0, config.box_noise).expect("finite sigma"));
    let yaw_noise = (config.yaw_noise > 0.0).then(|| Normal::new(0.0, config.yaw_noise).expect("finite sigma"));
    let fp_count = (config.fp_rate > 0.0).then(|| Poisson::new(config.fp_rate).expect("positive rate"));
    let mut fp_classes: Vec<ObjectClass> = gt_tracks.iter().map(|t| t.class).collect();
    fp_classes.sort();
    fp_classes.dedup();
    if fp_classes.is_empty() {
        fp_classes.push(ObjectClass::Vehicle);
    }
    let ground_z = gt_tracks
        .iter()
        .flat_map(|t| t.entries.first())
        .map(|e| e.bbox.z_min())
        .next()
        .unwrap_or(0.0);

    let frames = (0..frame_count)
        .map(|f| {
            let mut rng = frame_rng(seed ^ 0x5eed_de7e_c7ab_1e00, f as u64 + 1);
            let mut out = Vec::new();
            for t in gt_tracks {
                let Some(e) = t.entry_at(f) else { continue };
                let drop: f64 = rng.random();
                if drop < config.dropout {
                    continue;
                }
                let mut b = e.bbox;
                if let Some(nd) = &center_noise {
                    b.cx += nd.sample(&mut rng);
                    b.cy += nd.sample(&mut rng);
                    b.cz += nd.sample(&mut rng);
                }
                if let Some(nd) = &yaw_noise {
                    b.yaw = wrap_angle(b.yaw + nd.sample(&mut rng));
                }
                let err = ((b.cx - e.bbox.cx).powi(2) + (b.cy - e.bbox.cy).powi(2) + (b.cz - e.bbox.cz).powi(2)).sqrt();
                let s = &config.score;
                let score = (-err * err / (2.0 * s.tp_falloff * s.tp_falloff)).exp().max(s.tp_floor).min(1.0);
                out.push(Detection { bbox: b, class: t.class, score });
            }
            let n_fp = fp_count.as_ref().map_or(0, |p| p.sample(&mut rng) as usize);
            for _ in 0..n_fp {
                let class = fp_classes[rng.random_range(0..fp_classes.len())];
                let [l, w, h] = default_size(class);
                let r = config.fp_radius * rng.random::<f64>().sqrt();
                let theta = rng.random::<f64>() * TAU;
                let yaw = wrap_angle(rng.random::<f64>() * TAU);
                let bbox = Box7 { cx: r * theta.cos(), cy: r * theta.sin(), cz: ground_z + 0.5 * h, length: l, width: w, height: h, yaw };
                let s = &config.score;
                let score = s.fp_low + (s.fp_high - s.fp_low) * rng.random::<f64>();
                out.push(Detection { bbox, class, score });
            }
            out
        })
        .collect();

    DetectionFrameSet { frames, source: DetectionSource::Synthetic }
}

/// A busy but collision-free intersection approach.
///
/// Vehicles drive in four east–west lanes (two per direction) with a fixed
/// speed per lane and staggered spawns; pedestrians walk on sidewalk lines;
/// a few cars are parked. `objects` agents are produced in total.
pub fn intersection_preset(objects: usize, duration: usize, seed: u64) -> SceneConfig {
    let lanes: [(f64, f64, f64); 4] = [(-8.75, 0.0, 11.0), (-5.25, 0.0, 8.0), (5.25, PI, 9.0), (8.75, PI, 12.0)];
    let walkways: [(f64, f64, f64); 4] = [(-14.0, 0.0, 1.3), (-16.0, PI, 1.1), (14.0, PI, 1.4), (16.0, 0.0, 1.2)];
    let parking: [(f64, f64); 2] = [(-11.5, 0.0), (11.5, PI)];
    let start_x = 55.0;

    let mut agents = Vec::new();
    let mut lane_next_spawn = [0usize; 4];
    let mut walk_next_spawn = [0usize; 4];
    let mut parked = 0usize;
    let mut k = 0usize;
    while agents.len() < objects {
        match k % 5 {
            0 | 1 | 3 => {
                let lane = (k / 5 * 3 + [0, 1, 0, 2][k % 5]) % 4;
                let (y, heading, speed) = lanes[lane];
                let x0 = if heading == 0.0 { -start_x } else { start_x };
                let spawn = lane_next_spawn[lane];
                // 25 m headway at the lane speed.
                lane_next_spawn[lane] += (25.0 / speed * 10.0).ceil() as usize + 3 * (k % 3);
                let mut a = AgentSpec::line(ObjectClass::Vehicle, spawn, [x0, y], heading, speed);
                if k % 7 == 6 {
                    a.class = ObjectClass::Truck;
                    a.size = default_size(ObjectClass::Truck);
                }
                agents.push(a);
            }
            2 => {
                let w = (k / 5) % 4;
                let (y, heading, speed) = walkways[w];
                let x0 = if heading == 0.0 { -30.0 } else { 30.0 };
                let spawn = walk_next_spawn[w];
                walk_next_spawn[w] += 60;
                agents.push(AgentSpec::line(ObjectClass::Pedestrian, spawn, [x0, y], heading, speed));
            }
            _ => {
                if parked < 6 {
                    let (y, heading) = parking[parked % 2];
                    let x = -20.0 + 12.0 * (parked / 2) as f64;
                    parked += 1;
                    agents.push(AgentSpec::line(ObjectClass::Vehicle, 0, [x, y], heading, 0.0));
                } else {
                    let w = (k / 5 + 1) % 4;
                    let (y, heading, speed) = walkways[w];
                    let x0 = if heading == 0.0 { -30.0 } else { 30.0 };
                    let spawn = walk_next_spawn[w];
                    walk_next_spawn[w] += 60;
                    agents.push(AgentSpec::line(ObjectClass::Pedestrian, spawn, [x0, y], heading, speed));
                }
            }
        }
        k += 1;
    }

    SceneConfig { duration, agents, seed, ..SceneConfig::default() }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_box_config(x: f64, sigma: f64) -> SceneConfig {
        SceneConfig {
            duration: 1,
            agents: vec![AgentSpec::line(ObjectClass::Vehicle, 0, [x, 0.0], 0.0, 0.0)],
            noise_sigma: sigma,
            ground_points: 0,
            ..SceneConfig::default()
        }
    }

    #[test]
    fn static_box_points_on_surface() {
        let seq = generate_scene(&single_box_config(10.0, 0.0));
        let b = seq.gt_tracks[0].entries[0].bbox;
        assert!(!seq.frames[0].is_empty());
        for p in &seq.frames[0].points {
            let [lx, ly, lz] = b.to_local(p.x, p.y, p.z);
            let on_face = [(lx, b.length), (ly, b.width), (lz, b.height)]
                .iter()
                .any(|(v, s)| ((v.abs() - 0.5 * s).abs()) < 1e-9);
            assert!(on_face && b.contains(p.x, p.y, p.z, 1e-9));
        }
    }

    #[test]
    fn inverse_square_point_count() {
        let mut near = 0usize;
        let mut far = 0usize;
        for seed in 0..20 {
            let mut c = single_box_config(10.0, 0.0);
            c.seed = seed;
            near += generate_scene(&c).frames[0].len();
            c.agents[0].trajectory = TrajectorySpec::Line { start: [20.0, 0.0], heading: 0.0 };
            far += generate_scene(&c).frames[0].len();
        }
        let ratio = far as f64 / near as f64;
        assert!((ratio - 0.25).abs() <= 0.25 * 0.2, "{ratio}");
    }

    #[test]
    fn closer_large_agent_shadows_farther_one() {
        let mut c = single_box_config(20.0, 0.0);
        c.agents[0].trajectory = TrajectorySpec::Line { start: [20.0, 0.0], heading: FRAC_PI_2 };
        let mut bus = AgentSpec::line(ObjectClass::Bus, 0, [10.0, 0.0], FRAC_PI_2, 0.0);
        bus.size = default_size(ObjectClass::Bus);
        c.agents.push(bus);
        let seq = generate_scene(&c);
        let car = seq.gt_tracks[0].entries[0].bbox;
        let on_car = seq.frames[0].points.iter().filter(|p| car.contains(p.x, p.y, p.z, 0.05)).count();
        assert_eq!(on_car, 0);
        assert!(!seq.frames[0].is_empty());
    }

    #[test]
    fn scene_is_deterministic() {
        let c = intersection_preset(8, 30, 7);
        assert_eq!(generate_scene(&c), generate_scene(&c));
        let mut c2 = c.clone();
        c2.seed = 8;
        assert_ne!(generate_scene(&c).frames[5], generate_scene(&c2).frames[5]);
    }

    #[test]
    fn perfect_detector_equals_ground_truth() {
        let seq = generate_scene(&intersection_preset(6, 20, 1));
        let dets = synth_detector(&seq, &DetectorConfig::default(), 3);
        for (f, frame) in dets.frames.iter().enumerate() {
            let gt: Vec<Box7> = seq.gt_tracks.iter().filter_map(|t| t.entry_at(f)).map(|e| e.bbox).collect();
            assert_eq!(frame.iter().map(|d| d.bbox).collect::<Vec<_>>(), gt);
            assert!(frame.iter().all(|d| d.score == 1.0));
        }
        let all_drop = DetectorConfig { dropout: 1.0, ..DetectorConfig::default() };
        assert_eq!(synth_detector(&seq, &all_drop, 3).total(), 0);
    }

    #[test]
    fn arc_heading_is_tangent() {
        let a = AgentSpec {
            class: ObjectClass::Vehicle,
            spawn_frame: 0,
            trajectory: TrajectorySpec::Arc { center: [0.0, 0.0], radius: 10.0, start_angle: 0.0, clockwise: false },
            speed: 5.0,
            size: default_size(ObjectClass::Vehicle),
            despawn_frame: None,
        };
        let (x, y, yaw) = a.pose(0.0, 10.0);
        assert!((x - 10.0).abs() < 1e-12 && y.abs() < 1e-12 && (yaw - FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn stop_and_go_pauses() {
        let a = AgentSpec {
            class: ObjectClass::Pedestrian,
            spawn_frame: 0,
            trajectory: TrajectorySpec::StopAndGo { start: [0.0, 0.0], heading: 0.0, go_frames: 10, stop_frames: 5 },
            speed: 1.0,
            size: default_size(ObjectClass::Pedestrian),
            despawn_frame: None,
        };
        let x_at = |f: usize| a.pose(f as f64 / 10.0, 10.0).0;
        assert!((x_at(10) - 1.0).abs() < 1e-12);
        assert_eq!(x_at(12), x_at(14));
        assert!((x_at(16) - 1.1).abs() < 1e-12);
    }
}
