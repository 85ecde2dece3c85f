//! Procedural depth scenes: a rectangular room observed by an elevated,
//! tilted camera whose pose jitters every frame, with person-shaped walkers
//! (sphere head on a capsule torso) moving along straight segments.
//!
//! Rendering is analytic ray casting against the room box and the person
//! primitives, so annotations (projected head centers, per-head visibility)
//! are exact by construction.

use crate::codec::Annotation;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Scene and rendering configuration.
#[derive(Debug, Clone)]
pub struct SceneConfig {
    pub room_width_m: f64,
    pub room_depth_m: f64,
    pub room_height_m: f64,
    /// Camera height range in meters.
    pub cam_height_m: (f64, f64),
    /// Downward tilt range in degrees.
    pub cam_tilt_deg: (f64, f64),
    /// Walkers per dataset, inclusive.
    pub person_count: (usize, usize),
    /// Walking speed range in m/s.
    pub walk_speed_mps: (f64, f64),
    /// Standard deviation of additive depth noise, meters.
    pub depth_noise_m: f64,
    /// Frame rows.
    pub height: usize,
    /// Frame columns.
    pub width: usize,
    pub seed: u64,
    /// Depth normalization window, meters; values are clamped into it.
    pub depth_min_m: f64,
    pub depth_max_m: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            room_width_m: 8.0,
            room_depth_m: 10.0,
            room_height_m: 3.0,
            cam_height_m: (2.2, 2.7),
            cam_tilt_deg: (26.0, 41.0),
            person_count: (1, 4),
            walk_speed_mps: (0.3, 1.2),
            depth_noise_m: 0.01,
            height: 240,
            width: 320,
            seed: 0,
            depth_min_m: 0.5,
            depth_max_m: 8.0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::Param("frame size must be positive".into()));
        }
        if self.cam_height_m.0 > self.cam_height_m.1
            || self.cam_tilt_deg.0 > self.cam_tilt_deg.1
            || self.person_count.0 > self.person_count.1
            || self.walk_speed_mps.0 > self.walk_speed_mps.1
        {
            return Err(Error::Param("a configuration range is inverted".into()));
        }
        if self.depth_min_m >= self.depth_max_m {
            return Err(Error::Param("depth window is empty".into()));
        }
        Ok(())
    }

    /// Horizontal focal length in pixels (74 degree field of view, a typical
    /// depth-camera geometry; vertical field of view follows from the 4:3
    /// frame and square pixels).
    pub fn focal_px(&self) -> f64 {
        (self.width as f64 / 2.0) / (37.0f64).to_radians().tan()
    }

    /// The region walkers are confined to, given the dataset's base pose: a
    /// trapezoid in front of the camera that stays inside the view frustum
    /// under every per-frame jitter (yaw within 5 deg, camera x within
    /// 0.3 m, z within [0.1, 0.5], tilt within 2 deg of the base).
    fn walk_bounds(&self, base: &PoseBase, z: f64) -> (f64, f64) {
        let center = self.room_width_m / 2.0;
        // Horizontal: half fov 37 deg minus yaw jitter minus head margin.
        let half = ((30.0f64).to_radians().tan() * (z - 0.5) - 0.4).max(0.05);
        let _ = base;
        (center - half, center + half)
    }

    fn walk_depth_range(&self, base: &PoseBase) -> (f64, f64) {
        // Vertical visibility: at the steepest jittered tilt the tallest
        // head (1.76 m eye line, camera at its lowest) must stay under the
        // frame's top edge (half fov ~29.5 deg, ~1.5 deg head margin).
        let top_angle = (base.tilt_deg + 2.0 - 28.0).max(0.5f64).to_radians();
        let far = 0.1 + (base.cam_height_m - 0.05 - 1.76) / top_angle.tan();
        let hi = far.min(5.0).min(self.room_depth_m - 0.5);
        (3.0, hi.max(3.4))
    }
}

const HEAD_RADIUS_M: f64 = 0.09;
const TORSO_RADIUS_M: f64 = 0.14;

/// One person: ground position, heading, speed, body size and a countdown to
/// the next random turn.
#[derive(Debug, Clone)]
pub struct WalkerState {
    pub x: f64,
    pub z: f64,
    /// Heading angle in the ground plane, radians.
    pub heading: f64,
    pub speed: f64,
    pub height_m: f64,
    pub turn_in_s: f64,
}

impl WalkerState {
    /// Head sphere center in world coordinates.
    pub fn head_center(&self) -> [f64; 3] {
        [self.x, self.height_m - HEAD_RADIUS_M, self.z]
    }
}

/// Per-dataset base pose: per-frame jitter stays near it so the walker zone
/// is view-consistent for the whole dataset. Steeper base tilts require
/// higher camera mounts for distant heads to stay in frame, so the tilt
/// ceiling grows with the sampled height.
#[derive(Debug, Clone, Copy)]
pub struct PoseBase {
    pub cam_height_m: f64,
    pub tilt_deg: f64,
}

/// Sample the dataset-level base pose inside the config ranges.
pub fn sample_pose_base(cfg: &SceneConfig, rng: &mut Rng) -> PoseBase {
    let cam_height_m = rng.uniform(cfg.cam_height_m.0, cfg.cam_height_m.1);
    // Keep a >=3.3 m deep walkable band visible: the steepest usable tilt
    // grows with the mounting height.
    let ceiling = 26.0 + ((cam_height_m - 0.05 - 1.76) / 3.3).atan().to_degrees();
    let hi = cfg.cam_tilt_deg.1.min(ceiling).max(cfg.cam_tilt_deg.0);
    let tilt_deg = rng.uniform(cfg.cam_tilt_deg.0, hi);
    PoseBase { cam_height_m, tilt_deg }
}

/// Spawn the dataset's walkers inside the visible region.
pub fn spawn_walkers(cfg: &SceneConfig, base: &PoseBase, rng: &mut Rng) -> Vec<WalkerState> {
    let count = rng.uniform_usize(cfg.person_count.0, cfg.person_count.1);
    let (z_lo, z_hi) = cfg.walk_depth_range(base);
    (0..count)
        .map(|_| {
            let z = rng.uniform(z_lo, z_hi);
            let (x_lo, x_hi) = cfg.walk_bounds(base, z);
            WalkerState {
                x: rng.uniform(x_lo, x_hi),
                z,
                heading: rng.uniform(0.0, std::f64::consts::TAU),
                speed: rng.uniform(cfg.walk_speed_mps.0, cfg.walk_speed_mps.1),
                height_m: rng.uniform(1.5, 1.85),
                turn_in_s: rng.uniform(1.0, 4.0),
            }
        })
        .collect()
}

/// Advance a walker along its straight segment, bouncing off the walk-region
/// boundary and turning when its timer expires.
pub fn advance_walker(w: &mut WalkerState, cfg: &SceneConfig, base: &PoseBase, dt: f64, rng: &mut Rng) {
    w.turn_in_s -= dt;
    if w.turn_in_s <= 0.0 {
        w.heading = rng.uniform(0.0, std::f64::consts::TAU);
        w.turn_in_s = rng.uniform(1.0, 4.0);
    }
    w.x += w.heading.cos() * w.speed * dt;
    w.z += w.heading.sin() * w.speed * dt;
    let (z_lo, z_hi) = cfg.walk_depth_range(base);
    if w.z < z_lo || w.z > z_hi {
        w.z = w.z.clamp(z_lo, z_hi);
        w.heading = -w.heading;
    }
    let (x_lo, x_hi) = cfg.walk_bounds(base, w.z);
    if w.x < x_lo || w.x > x_hi {
        w.x = w.x.clamp(x_lo, x_hi);
        w.heading = std::f64::consts::PI - w.heading;
    }
}

/// A sampled camera pose.
#[derive(Debug, Clone, Copy)]
pub struct CameraPose {
    pub position: [f64; 3],
    /// Downward tilt, radians.
    pub tilt: f64,
    /// Yaw about the vertical axis, radians; zero looks straight down +z.
    pub yaw: f64,
}

impl CameraPose {
    pub fn right(&self) -> [f64; 3] {
        [self.yaw.cos(), 0.0, -self.yaw.sin()]
    }

    pub fn forward(&self) -> [f64; 3] {
        [
            self.yaw.sin() * self.tilt.cos(),
            -self.tilt.sin(),
            self.yaw.cos() * self.tilt.cos(),
        ]
    }

    pub fn down(&self) -> [f64; 3] {
        cross(self.right(), self.forward())
    }
}

/// Sample a per-frame pose: small jitter around the dataset base, clamped to
/// the configured ranges.
pub fn sample_pose(cfg: &SceneConfig, base: &PoseBase, rng: &mut Rng) -> CameraPose {
    let height = (base.cam_height_m + rng.uniform(-0.05, 0.05))
        .clamp(cfg.cam_height_m.0, cfg.cam_height_m.1);
    let tilt = (base.tilt_deg + rng.uniform(-2.0, 2.0))
        .clamp(cfg.cam_tilt_deg.0, cfg.cam_tilt_deg.1)
        .to_radians();
    let yaw = rng.uniform(-5.0f64, 5.0).to_radians();
    let x = cfg.room_width_m / 2.0 + rng.uniform(-0.3, 0.3);
    let z = rng.uniform(0.1, 0.5);
    CameraPose { position: [x, height, z], tilt, yaw }
}

/// A rendered frame: quantized depth plus exact annotations.
#[derive(Debug, Clone)]
pub struct DepthFrame {
    pub height: usize,
    pub width: usize,
    /// Row-major depth, normalized into the config window and quantized.
    pub depth: Vec<u16>,
    pub annotations: Vec<Annotation>,
    /// World-space head centers for the annotated walkers (same order).
    pub head_centers: Vec<[f64; 3]>,
}

impl DepthFrame {
    /// Depth as `[0, 1]` values (the exact inverse of the quantization).
    pub fn normalized(&self) -> Vec<f64> {
        self.depth.iter().map(|&q| q as f64 / 65535.0).collect()
    }
}

/// Render one frame with a pose sampled from `rng` around the dataset base.
pub fn generate_frame(
    cfg: &SceneConfig,
    base: &PoseBase,
    walkers: &[WalkerState],
    rng: &mut Rng,
) -> Result<DepthFrame> {
    cfg.validate()?;
    let pose = sample_pose(cfg, base, rng);
    render_frame(cfg, &pose, walkers, rng)
}

/// Render one frame under an explicit pose. Depth noise and nothing else is
/// drawn from `rng`.
pub fn render_frame(
    cfg: &SceneConfig,
    pose: &CameraPose,
    walkers: &[WalkerState],
    rng: &mut Rng,
) -> Result<DepthFrame> {
    cfg.validate()?;
    let (h, w) = (cfg.height, cfg.width);
    let fx = cfg.focal_px();
    let fy = fx;
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let right = pose.right();
    let down = pose.down();
    let forward = pose.forward();
    let origin = pose.position;

    let mut depth = vec![0u16; h * w];
    let mut visible = vec![0usize; walkers.len()];
    let mut total = vec![0usize; walkers.len()];

    for r in 0..h {
        for c in 0..w {
            let du = (c as f64 - cx) / fx;
            let dv = (r as f64 - cy) / fy;
            let dir = [
                right[0] * du + down[0] * dv + forward[0],
                right[1] * du + down[1] * dv + forward[1],
                right[2] * du + down[2] * dv + forward[2],
            ];
            // Parameter t along the ray equals camera-axis depth because the
            // direction has unit projection onto the forward axis.
            let mut best = room_exit(cfg, origin, dir);
            let mut best_head: Option<usize> = None;
            for (i, walker) in walkers.iter().enumerate() {
                if let Some(t) = ray_sphere(origin, dir, walker.head_center(), HEAD_RADIUS_M) {
                    total[i] += 1;
                    if t < best {
                        best = t;
                        best_head = Some(i);
                    }
                }
                // Shoulder line sits low enough that the cap sphere stays
                // below the head sphere.
                let top = walker.height_m - 2.0 * HEAD_RADIUS_M - TORSO_RADIUS_M - 0.01;
                if let Some(t) =
                    ray_capsule(origin, dir, walker.x, walker.z, 0.1, top, TORSO_RADIUS_M)
                {
                    if t < best {
                        best = t;
                        best_head = None;
                    }
                }
            }
            if let Some(i) = best_head {
                visible[i] += 1;
            }
            let noisy = best + rng.normal(cfg.depth_noise_m);
            let clamped = noisy.clamp(cfg.depth_min_m, cfg.depth_max_m);
            let normalized = (clamped - cfg.depth_min_m) / (cfg.depth_max_m - cfg.depth_min_m);
            depth[r * w + c] = (normalized * 65535.0).round() as u16;
        }
    }

    let mut annotations = Vec::new();
    let mut head_centers = Vec::new();
    for (i, walker) in walkers.iter().enumerate() {
        let hc = walker.head_center();
        let rel = [hc[0] - origin[0], hc[1] - origin[1], hc[2] - origin[2]];
        let z_cam = dot(rel, forward);
        if z_cam <= 0.1 {
            continue;
        }
        let u = cx + fx * dot(rel, right) / z_cam;
        let v = cy + fy * dot(rel, down) / z_cam;
        if u < 0.0 || v < 0.0 || u >= w as f64 || v >= h as f64 {
            continue;
        }
        let occlusion = if total[i] == 0 {
            1.0
        } else {
            1.0 - visible[i] as f64 / total[i] as f64
        };
        annotations.push(Annotation { u, v, occlusion });
        head_centers.push(hc);
    }

    Ok(DepthFrame { height: h, width: w, depth, annotations, head_centers })
}

/// Distance to the room-box exit surface (the camera sits inside the box).
fn room_exit(cfg: &SceneConfig, origin: [f64; 3], dir: [f64; 3]) -> f64 {
    let mut t_exit = f64::INFINITY;
    let bounds = [
        (0.0, cfg.room_width_m),
        (0.0, cfg.room_height_m),
        (0.0, cfg.room_depth_m),
    ];
    for axis in 0..3 {
        let d = dir[axis];
        if d.abs() < 1e-12 {
            continue;
        }
        let (lo, hi) = bounds[axis];
        let target = if d > 0.0 { hi } else { lo };
        let t = (target - origin[axis]) / d;
        if t > 0.0 {
            t_exit = t_exit.min(t);
        }
    }
    t_exit
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Nearest positive intersection of a ray with a sphere.
fn ray_sphere(origin: [f64; 3], dir: [f64; 3], center: [f64; 3], radius: f64) -> Option<f64> {
    let oc = [origin[0] - center[0], origin[1] - center[1], origin[2] - center[2]];
    let a = dot(dir, dir);
    let b = 2.0 * dot(oc, dir);
    let c = dot(oc, oc) - radius * radius;
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return None;
    }
    let sqrt_disc = disc.sqrt();
    let t1 = (-b - sqrt_disc) / (2.0 * a);
    if t1 > 1e-9 {
        return Some(t1);
    }
    let t2 = (-b + sqrt_disc) / (2.0 * a);
    (t2 > 1e-9).then_some(t2)
}

/// Nearest positive intersection with a vertical capsule (cylinder body plus
/// hemispherical caps) centered at `(x, z)` spanning heights `[y0, y1]`.
fn ray_capsule(
    origin: [f64; 3],
    dir: [f64; 3],
    x: f64,
    z: f64,
    y0: f64,
    y1: f64,
    radius: f64,
) -> Option<f64> {
    let mut best: Option<f64> = None;
    let mut consider = |t: f64| {
        if t > 1e-9 && best.is_none_or(|b| t < b) {
            best = Some(t);
        }
    };
    // Infinite cylinder in the ground plane.
    let ox = origin[0] - x;
    let oz = origin[2] - z;
    let a = dir[0] * dir[0] + dir[2] * dir[2];
    if a > 1e-12 {
        let b = 2.0 * (ox * dir[0] + oz * dir[2]);
        let c = ox * ox + oz * oz - radius * radius;
        let disc = b * b - 4.0 * a * c;
        if disc >= 0.0 {
            let sq = disc.sqrt();
            for t in [(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)] {
                if t > 1e-9 {
                    let y = origin[1] + t * dir[1];
                    if y >= y0 && y <= y1 {
                        consider(t);
                    }
                }
            }
        }
    }
    for cap_y in [y0, y1] {
        if let Some(t) = ray_sphere(origin, dir, [x, cap_y, z], radius) {
            consider(t);
        }
    }
    best
}
