//! Synthetic event generator with analytic ground truth.
//!
//! Scenes are fronto-parallel textured planes. Each plane's texture is a set
//! of straight edge segments; an event fires whenever a projected edge
//! sweeps across a pixel center (one event per crossing, polarity from the
//! crossing direction times the edge contrast sign). Uniform Poisson noise
//! and fixed-rate hot pixels can be added.
//!
//! Camera pose at time `t` is `R(t)`, `c(t)` with `R` integrated from the
//! body angular velocity and `c` from the (world-frame) linear velocity;
//! a world point `P` is seen at `R(t)^T (P - c(t))`. The world frame is the
//! camera frame at `t = 0`.
//!
//! Randomness comes from `ChaCha8Rng::seed_from_u64(seed)` (the ChaCha
//! stream cipher with 8 rounds, a portable and platform-independent
//! generator). Draw order is fixed: plane textures in plane order, then
//! noise, then hot-pixel phases, so a seed fully determines the output.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::camera::CameraIntrinsics;
use crate::error::{Error, Result};
use crate::event::Event;
use crate::mask::RegionMask;
use crate::warp::{flow_basis, AngularVelocity2, AngularVelocity3, FlowVector, ImuSample};

type Vec3 = [f64; 3];
type Mat3 = [[f64; 3]; 3];

fn default_edge_length() -> f64 {
    8.0
}

/// One textured plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneSpec {
    /// Region id used in masks and ground truth; defaults to index + 1.
    #[serde(default)]
    pub id: Option<u32>,
    /// Outline in image coordinates at `t = 0`.
    pub polygon: Vec<[f64; 2]>,
    /// Depth in meters.
    pub depth: f64,
    /// Random edges per 100 square pixels of polygon area.
    #[serde(default)]
    pub edge_density: f64,
    /// Explicit edges (image coordinates at `t = 0`), added to the random ones.
    #[serde(default)]
    pub edges: Vec<[[f64; 2]; 2]>,
}

/// Pixel that fires at a fixed rate regardless of motion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HotPixel {
    pub x: usize,
    pub y: usize,
    /// events per second
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub planes: Vec<PlaneSpec>,
    /// Background noise in events per pixel per second.
    #[serde(default)]
    pub noise_rate: f64,
    #[serde(default)]
    pub hot_pixels: Vec<HotPixel>,
    /// Length of random texture edges in pixels.
    #[serde(default = "default_edge_length")]
    pub edge_length: f64,
}

impl SceneSpec {
    pub fn plane_id(&self, i: usize) -> u32 {
        self.planes[i].id.unwrap_or(i as u32 + 1)
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = std::collections::BTreeSet::new();
        for (i, p) in self.planes.iter().enumerate() {
            if !(p.depth > 0.0 && p.depth.is_finite()) {
                return Err(Error::Validation(format!("plane {i}: depth must be > 0")));
            }
            if p.polygon.len() < 3 {
                return Err(Error::Validation(format!(
                    "plane {i}: polygon needs at least 3 vertices"
                )));
            }
            if !(p.edge_density >= 0.0 && p.edge_density.is_finite()) {
                return Err(Error::Validation(format!("plane {i}: bad edge density")));
            }
            let id = self.plane_id(i);
            if id == 0 || !ids.insert(id) {
                return Err(Error::Validation(format!("plane {i}: id {id} is 0 or duplicated")));
            }
        }
        if !(self.noise_rate >= 0.0 && self.noise_rate.is_finite()) {
            return Err(Error::Validation("noise rate must be >= 0".into()));
        }
        if !(self.edge_length > 0.0) {
            return Err(Error::Validation("edge length must be > 0".into()));
        }
        for h in &self.hot_pixels {
            if !(h.rate > 0.0 && h.rate.is_finite()) {
                return Err(Error::Validation("hot pixel rate must be > 0".into()));
            }
        }
        for i in 0..self.planes.len() {
            for j in i + 1..self.planes.len() {
                if polygons_overlap(&self.planes[i].polygon, &self.planes[j].polygon) {
                    return Err(Error::RegionsOverlap);
                }
            }
        }
        Ok(())
    }
}

/// Constant-velocity stretch of a motion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionPhase {
    /// m/s, world frame.
    pub v: [f64; 3],
    /// rad/s, body frame.
    #[serde(default)]
    pub omega: AngularVelocity3,
    pub duration: f64,
}

/// Piecewise-constant camera motion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "MotionSpecRepr", into = "MotionSpecRepr")]
pub struct MotionSpec {
    pub phases: Vec<MotionPhase>,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum MotionSpecRepr {
    Phases { phases: Vec<MotionPhase> },
    Single(MotionPhase),
}

impl From<MotionSpecRepr> for MotionSpec {
    fn from(r: MotionSpecRepr) -> Self {
        match r {
            MotionSpecRepr::Phases { phases } => Self { phases },
            MotionSpecRepr::Single(p) => Self { phases: vec![p] },
        }
    }
}

impl From<MotionSpec> for MotionSpecRepr {
    fn from(m: MotionSpec) -> Self {
        if m.phases.len() == 1 {
            MotionSpecRepr::Single(m.phases[0])
        } else {
            MotionSpecRepr::Phases { phases: m.phases }
        }
    }
}

impl MotionSpec {
    pub fn constant(v: [f64; 3], omega: AngularVelocity3, duration: f64) -> Self {
        Self {
            phases: vec![MotionPhase { v, omega, duration }],
        }
    }

    pub fn duration(&self) -> f64 {
        self.phases.iter().map(|p| p.duration).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.phases.is_empty() {
            return Err(Error::Validation("motion has no phases".into()));
        }
        for p in &self.phases {
            if !(p.duration > 0.0 && p.duration.is_finite()) {
                return Err(Error::Validation("phase duration must be > 0".into()));
            }
            if !(p.v.iter().all(|x| x.is_finite()) && p.omega.is_finite()) {
                return Err(Error::Validation("motion must be finite".into()));
            }
        }
        Ok(())
    }

    /// Phase active at time `t` (the last one for `t` past the end).
    pub fn phase_at(&self, t: f64) -> &MotionPhase {
        let mut acc = 0.0;
        for p in &self.phases {
            acc += p.duration;
            if t < acc {
                return p;
            }
        }
        self.phases.last().expect("validated")
    }
}

/// Generator knobs that are not part of the scene itself.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthOptions {
    /// Spacing of ground-truth masks and depths (s).
    pub window_dt: f64,
    /// IMU sampling rate (Hz).
    pub imu_rate: f64,
    /// Largest image motion per simulation step (pixels).
    pub max_step_px: f64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            window_dt: 0.05,
            imu_rate: 1000.0,
            max_step_px: 0.25,
        }
    }
}

/// Generator output.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub width: usize,
    pub height: usize,
    pub events: Vec<Event>,
    pub imu: Vec<ImuSample>,
    /// `(t_start, mask)` per window.
    pub masks: Vec<(f64, RegionMask)>,
    /// `(t_start, region id -> depth in meters)` per window.
    pub depths: Vec<(f64, BTreeMap<u32, f64>)>,
}

// ---------------------------------------------------------------- geometry

fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    m
}

const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

/// Rodrigues' formula for `exp([w]x)`.
fn so3_exp(w: Vec3) -> Mat3 {
    let th = (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt();
    let k = [[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]];
    let k2 = mat_mul(&k, &k);
    let (a, b) = if th < 1e-8 {
        (1.0 - th * th / 6.0, 0.5 - th * th / 24.0)
    } else {
        (th.sin() / th, (1.0 - th.cos()) / (th * th))
    };
    let mut r = IDENTITY;
    for i in 0..3 {
        for j in 0..3 {
            r[i][j] += a * k[i][j] + b * k2[i][j];
        }
    }
    r
}

#[derive(Debug, Clone, Copy)]
struct Pose {
    r: Mat3,
    c: Vec3,
}

impl Pose {
    fn to_camera(&self, p: &Vec3) -> Vec3 {
        let d = [p[0] - self.c[0], p[1] - self.c[1], p[2] - self.c[2]];
        // R^T d
        [
            self.r[0][0] * d[0] + self.r[1][0] * d[1] + self.r[2][0] * d[2],
            self.r[0][1] * d[0] + self.r[1][1] * d[1] + self.r[2][1] * d[2],
            self.r[0][2] * d[0] + self.r[1][2] * d[1] + self.r[2][2] * d[2],
        ]
    }
}

fn pose_at(motion: &MotionSpec, t: f64) -> Pose {
    let mut r = IDENTITY;
    let mut c = [0.0; 3];
    let mut t0 = 0.0;
    let n = motion.phases.len();
    for (i, p) in motion.phases.iter().enumerate() {
        let last = i + 1 == n;
        let h = if last { t - t0 } else { (t - t0).min(p.duration) };
        if h <= 0.0 && !last {
            break;
        }
        let h = h.max(0.0);
        for k in 0..3 {
            c[k] += p.v[k] * h;
        }
        r = mat_mul(&r, &so3_exp([p.omega.wx * h, p.omega.wy * h, p.omega.wz * h]));
        t0 += p.duration;
        if t < t0 {
            break;
        }
    }
    Pose { r, c }
}

const MIN_DEPTH: f64 = 1e-3;

fn project(intr: &CameraIntrinsics, p: &Vec3) -> Option<[f64; 2]> {
    if p[2] <= MIN_DEPTH {
        return None;
    }
    Some([
        intr.fx * p[0] / p[2] + intr.cx,
        intr.fy * p[1] / p[2] + intr.cy,
    ])
}

fn back_project(intr: &CameraIntrinsics, q: [f64; 2], z: f64) -> Vec3 {
    let (xn, yn) = intr.normalize(q[0], q[1]);
    [xn * z, yn * z, z]
}

/// Even-odd point in polygon test.
pub fn point_in_polygon(poly: &[[f64; 2]], x: f64, y: f64) -> bool {
    let mut inside = false;
    let n = poly.len();
    let mut j = n - 1;
    for i in 0..n {
        let (xi, yi) = (poly[i][0], poly[i][1]);
        let (xj, yj) = (poly[j][0], poly[j][1]);
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// Shoelace area (absolute).
pub fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    let mut s = 0.0;
    for i in 0..n {
        let j = (i + 1) % n;
        s += poly[i][0] * poly[j][1] - poly[j][0] * poly[i][1];
    }
    0.5 * s.abs()
}

fn bbox(poly: &[[f64; 2]]) -> [f64; 4] {
    poly.iter().fold(
        [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY],
        |b, p| [b[0].min(p[0]), b[1].min(p[1]), b[2].max(p[0]), b[3].max(p[1])],
    )
}

/// Interior overlap test, sampled on half-integer points so that polygons
/// sharing an integer-aligned boundary do not count as overlapping.
fn polygons_overlap(a: &[[f64; 2]], b: &[[f64; 2]]) -> bool {
    let ba = bbox(a);
    let bb = bbox(b);
    let x0 = ba[0].max(bb[0]);
    let y0 = ba[1].max(bb[1]);
    let x1 = ba[2].min(bb[2]);
    let y1 = ba[3].min(bb[3]);
    if x0 >= x1 || y0 >= y1 {
        return false;
    }
    let mut y = y0.floor() + 0.5;
    while y < y1 {
        let mut x = x0.floor() + 0.5;
        while x < x1 {
            if point_in_polygon(a, x, y) && point_in_polygon(b, x, y) {
                return true;
            }
            x += 1.0;
        }
        y += 1.0;
    }
    false
}

// ---------------------------------------------------------------- analytic flow

/// Translational flow (pixels/s) of a point at depth `z` seen at pixel `(x, y)`.
pub fn translational_flow(v: [f64; 3], z: f64, x: f64, y: f64, intr: &CameraIntrinsics) -> FlowVector {
    let (xn, yn) = intr.normalize(x, y);
    FlowVector::new(
        intr.fx * (-v[0] + xn * v[2]) / z,
        intr.fy * (-v[1] + yn * v[2]) / z,
    )
}

/// Two-axis rotation whose flow at `(x, y)` equals the translational flow of
/// a point at depth `z`; warping by it cancels the translation there.
pub fn compensation_at(
    v: [f64; 3],
    z: f64,
    x: f64,
    y: f64,
    intr: &CameraIntrinsics,
) -> Result<AngularVelocity2> {
    if v[2] != 0.0 {
        return Err(Error::ZMotion(v[2]));
    }
    let t = translational_flow(v, z, x, y, intr);
    let [a, b] = flow_basis(x, y, intr);
    // [a0 a1; b0 b1] [wx; wy] = [tu; tv]
    let det = a[0] * b[1] - a[1] * b[0];
    let wx = (t.u * b[1] - a[1] * t.v) / det;
    let wy = (a[0] * t.v - b[0] * t.u) / det;
    Ok(AngularVelocity2::from_cartesian(wx, wy))
}

/// Compensating rotation for a region at `t = 0`, evaluated at the centroid
/// of its visible pixels.
pub fn analytic_compensation(
    scene: &SceneSpec,
    motion: &MotionSpec,
    region_id: u32,
    intr: &CameraIntrinsics,
) -> Result<AngularVelocity2> {
    let v = motion.phases[0].v;
    if v[2] != 0.0 {
        return Err(Error::ZMotion(v[2]));
    }
    let i = (0..scene.planes.len())
        .find(|&i| scene.plane_id(i) == region_id)
        .ok_or_else(|| Error::Validation(format!("no plane with id {region_id}")))?;
    let mask = ground_truth_mask(scene, motion, intr, 0.0);
    let (cx, cy) = mask.centroid(region_id).unwrap_or_else(|| {
        let b = bbox(&scene.planes[i].polygon);
        (0.5 * (b[0] + b[2]), 0.5 * (b[1] + b[3]))
    });
    compensation_at(v, scene.planes[i].depth, cx, cy, intr)
}

// ---------------------------------------------------------------- generation

struct PlaneWorld {
    id: u32,
    polygon: Vec<Vec3>,
    anchor: Vec3,
}

fn world_planes(scene: &SceneSpec, intr: &CameraIntrinsics) -> Vec<PlaneWorld> {
    scene
        .planes
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let b = bbox(&p.polygon);
            PlaneWorld {
                id: scene.plane_id(i),
                polygon: p.polygon.iter().map(|&q| back_project(intr, q, p.depth)).collect(),
                anchor: back_project(intr, [0.5 * (b[0] + b[2]), 0.5 * (b[1] + b[3])], p.depth),
            }
        })
        .collect()
}

/// Projected outline and camera depth of each plane at a pose.
fn projected_planes(planes: &[PlaneWorld], pose: &Pose, intr: &CameraIntrinsics) -> Vec<Option<(Vec<[f64; 2]>, f64)>> {
    planes
        .iter()
        .map(|p| {
            let poly: Option<Vec<[f64; 2]>> = p
                .polygon
                .iter()
                .map(|q| project(intr, &pose.to_camera(q)))
                .collect();
            let depth = pose.to_camera(&p.anchor)[2];
            poly.map(|poly| (poly, depth))
        })
        .collect()
}

/// Ground-truth labels at time `t`: nearest plane covering each pixel center.
pub fn ground_truth_mask(
    scene: &SceneSpec,
    motion: &MotionSpec,
    intr: &CameraIntrinsics,
    t: f64,
) -> RegionMask {
    let planes = world_planes(scene, intr);
    let pose = pose_at(motion, t);
    let proj = projected_planes(&planes, &pose, intr);
    let (w, h) = (intr.width, intr.height);
    let mut labels = vec![0u32; w * h];
    let mut zbuf = vec![f64::INFINITY; w * h];
    for (pw, pr) in planes.iter().zip(&proj) {
        let Some((poly, depth)) = pr else { continue };
        if *depth <= MIN_DEPTH {
            continue;
        }
        let b = bbox(poly);
        let x0 = b[0].ceil().max(0.0) as usize;
        let y0 = b[1].ceil().max(0.0) as usize;
        let x1 = (b[2].floor().min(w as f64 - 1.0)).max(-1.0);
        let y1 = (b[3].floor().min(h as f64 - 1.0)).max(-1.0);
        if x1 < 0.0 || y1 < 0.0 {
            continue;
        }
        for y in y0..=y1 as usize {
            for x in x0..=x1 as usize {
                let i = y * w + x;
                if *depth < zbuf[i] && point_in_polygon(poly, x as f64, y as f64) {
                    zbuf[i] = *depth;
                    labels[i] = pw.id;
                }
            }
        }
    }
    RegionMask::new(w, h, labels).expect("dimensions match")
}

/// Ground-truth depth (camera z of each plane's anchor) at time `t`.
pub fn ground_truth_depths(
    scene: &SceneSpec,
    motion: &MotionSpec,
    intr: &CameraIntrinsics,
    t: f64,
) -> BTreeMap<u32, f64> {
    let pose = pose_at(motion, t);
    world_planes(scene, intr)
        .iter()
        .map(|p| (p.id, pose.to_camera(&p.anchor)[2]))
        .collect()
}

struct Edge {
    plane: usize,
    a: Vec3,
    b: Vec3,
    contrast: i8,
}

fn sample_texture(scene: &SceneSpec, intr: &CameraIntrinsics, rng: &mut ChaCha8Rng) -> Vec<Edge> {
    let mut edges = Vec::new();
    for (pi, p) in scene.planes.iter().enumerate() {
        for e in &p.edges {
            edges.push(Edge {
                plane: pi,
                a: back_project(intr, e[0], p.depth),
                b: back_project(intr, e[1], p.depth),
                contrast: if rng.random::<bool>() { 1 } else { -1 },
            });
        }
        let area = polygon_area(&p.polygon);
        let n = (p.edge_density * area / 100.0).round() as usize;
        let b = bbox(&p.polygon);
        let half = 0.5 * scene.edge_length;
        let mut placed = 0;
        let mut attempts = 0;
        while placed < n && attempts < 100 * n + 100 {
            attempts += 1;
            let cx = rng.random_range(b[0]..b[2]);
            let cy = rng.random_range(b[1]..b[3]);
            let th = rng.random_range(0.0..std::f64::consts::PI);
            let contrast = if rng.random::<bool>() { 1 } else { -1 };
            let (dx, dy) = (half * th.cos(), half * th.sin());
            let e0 = [cx - dx, cy - dy];
            let e1 = [cx + dx, cy + dy];
            if !(point_in_polygon(&p.polygon, e0[0], e0[1]) && point_in_polygon(&p.polygon, e1[0], e1[1])) {
                continue;
            }
            edges.push(Edge {
                plane: pi,
                a: back_project(intr, e0, p.depth),
                b: back_project(intr, e1, p.depth),
                contrast,
            });
            placed += 1;
        }
    }
    edges
}

/// Upper bound on image speed (pixels/s) over the whole motion.
fn max_image_speed(scene: &SceneSpec, motion: &MotionSpec, intr: &CameraIntrinsics) -> f64 {
    let (xn0, yn0) = intr.normalize(0.0, 0.0);
    let (xn1, yn1) = intr.normalize(intr.width as f64, intr.height as f64);
    let r = 1.5 * (xn0.abs().max(xn1.abs()).powi(2) + yn0.abs().max(yn1.abs()).powi(2)).sqrt();
    let z_min = scene
        .planes
        .iter()
        .map(|p| p.depth)
        .fold(f64::INFINITY, f64::min);
    let f = intr.fx.max(intr.fy);
    let mut s: f64 = 0.0;
    for p in &motion.phases {
        let vn = (p.v[0].powi(2) + p.v[1].powi(2) + p.v[2].powi(2)).sqrt();
        let z = (z_min - vn * motion.duration()).max(0.1 * z_min);
        s = s.max(f * (vn / z * (1.0 + r) + p.omega.norm() * (1.0 + r * r)));
    }
    s
}

fn cross2(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

/// Generates events, an IMU trace and per-window ground truth with default options.
pub fn generate(
    scene: &SceneSpec,
    motion: &MotionSpec,
    intr: &CameraIntrinsics,
    seed: u64,
) -> Result<SynthOutput> {
    generate_with(scene, motion, intr, seed, &SynthOptions::default())
}

pub fn generate_with(
    scene: &SceneSpec,
    motion: &MotionSpec,
    intr: &CameraIntrinsics,
    seed: u64,
    opts: &SynthOptions,
) -> Result<SynthOutput> {
    scene.validate()?;
    motion.validate()?;
    intr.validate()?;
    let (w, h) = (intr.width, intr.height);
    let duration = motion.duration();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let planes = world_planes(scene, intr);
    let edges = sample_texture(scene, intr, &mut rng);

    let speed = max_image_speed(scene, motion, intr);
    let n_steps = if speed > 0.0 {
        ((duration * speed / opts.max_step_px).ceil() as usize).max(1)
    } else {
        0
    };
    let mut events = Vec::new();
    if n_steps > 0 && !edges.is_empty() {
        let step = duration / n_steps as f64;
        let poses: Vec<Pose> = (0..=n_steps).map(|k| pose_at(motion, k as f64 * step)).collect();
        let outlines: Vec<Vec<Option<(Vec<[f64; 2]>, f64)>>> = if planes.len() > 1 {
            poses.iter().map(|p| projected_planes(&planes, p, intr)).collect()
        } else {
            Vec::new()
        };
        for e in &edges {
            let mut prev: Option<([f64; 2], [f64; 2])> = None;
            for k in 0..=n_steps {
                let pose = &poses[k];
                let cur = match (
                    project(intr, &pose.to_camera(&e.a)),
                    project(intr, &pose.to_camera(&e.b)),
                ) {
                    (Some(a), Some(b)) => Some((a, b)),
                    _ => None,
                };
                if let (Some((a0, b0)), Some((a1, b1))) = (prev, cur) {
                    let t0 = (k - 1) as f64 * step;
                    crossings(
                        intr,
                        (a0, b0),
                        (a1, b1),
                        t0,
                        step,
                        e.contrast,
                        |x, y, t, p| {
                            if occluded(&outlines, k - 1, e.plane, x as f64, y as f64) {
                                return;
                            }
                            events.push(Event::new(x as f64, y as f64, t, p));
                        },
                    );
                }
                prev = cur;
            }
        }
    }

    // Background noise.
    if scene.noise_rate > 0.0 {
        let lambda = scene.noise_rate * (w * h) as f64 * duration;
        let n = Poisson::new(lambda)
            .map(|d| d.sample(&mut rng) as usize)
            .unwrap_or(0);
        for _ in 0..n {
            let x = rng.random_range(0..w);
            let y = rng.random_range(0..h);
            let t = rng.random_range(0.0..duration);
            let p = if rng.random::<bool>() { 1 } else { -1 };
            events.push(Event::new(x as f64, y as f64, t, p));
        }
    }
    for hp in &scene.hot_pixels {
        if hp.x >= w || hp.y >= h {
            continue;
        }
        let period = 1.0 / hp.rate;
        let mut t = rng.random_range(0.0..period);
        let mut p = 1;
        while t < duration {
            events.push(Event::new(hp.x as f64, hp.y as f64, t, p));
            p = -p;
            t += period;
        }
    }
    events.sort_by(|a, b| {
        a.t.total_cmp(&b.t)
            .then(a.y.total_cmp(&b.y))
            .then(a.x.total_cmp(&b.x))
            .then(a.p.cmp(&b.p))
    });

    let n_imu = (duration * opts.imu_rate).round() as usize;
    let imu = (0..=n_imu)
        .map(|i| {
            let t = i as f64 / opts.imu_rate;
            ImuSample {
                t,
                omega: motion.phase_at(t).omega,
            }
        })
        .collect();

    let n_win = ((duration / opts.window_dt) - 1e-9).ceil().max(1.0) as usize;
    let mut masks = Vec::with_capacity(n_win);
    let mut depths = Vec::with_capacity(n_win);
    for k in 0..n_win {
        let t = k as f64 * opts.window_dt;
        masks.push((t, ground_truth_mask(scene, motion, intr, t)));
        depths.push((t, ground_truth_depths(scene, motion, intr, t)));
    }

    Ok(SynthOutput {
        width: w,
        height: h,
        events,
        imu,
        masks,
        depths,
    })
}

fn occluded(
    outlines: &[Vec<Option<(Vec<[f64; 2]>, f64)>>],
    k: usize,
    plane: usize,
    x: f64,
    y: f64,
) -> bool {
    let Some(frame) = outlines.get(k) else {
        return false;
    };
    let Some((_, own_depth)) = &frame[plane] else {
        return false;
    };
    frame.iter().enumerate().any(|(i, o)| match o {
        Some((poly, d)) if i != plane && d < own_depth => point_in_polygon(poly, x, y),
        _ => false,
    })
}

/// Emits every pixel-center crossing of a segment moving linearly from
/// `(a0, b0)` at `t0` to `(a1, b1)` at `t0 + step`.
fn crossings(
    intr: &CameraIntrinsics,
    (a0, b0): ([f64; 2], [f64; 2]),
    (a1, b1): ([f64; 2], [f64; 2]),
    t0: f64,
    step: f64,
    contrast: i8,
    mut emit: impl FnMut(usize, usize, f64, i8),
) {
    let xs = [a0[0], b0[0], a1[0], b1[0]];
    let ys = [a0[1], b0[1], a1[1], b1[1]];
    let fold = |v: &[f64; 4], f: fn(f64, f64) -> f64, init: f64| v.iter().copied().fold(init, f);
    let x_lo = fold(&xs, f64::min, f64::INFINITY).ceil().max(0.0);
    let x_hi = fold(&xs, f64::max, f64::NEG_INFINITY).floor().min(intr.width as f64 - 1.0);
    let y_lo = fold(&ys, f64::min, f64::INFINITY).ceil().max(0.0);
    let y_hi = fold(&ys, f64::max, f64::NEG_INFINITY).floor().min(intr.height as f64 - 1.0);
    if x_lo > x_hi || y_lo > y_hi {
        return;
    }
    let d0 = [b0[0] - a0[0], b0[1] - a0[1]];
    let d1 = [b1[0] - a1[0], b1[1] - a1[1]];
    let l0 = d0[0].hypot(d0[1]);
    let l1 = d1[0].hypot(d1[1]);
    if l0 == 0.0 || l1 == 0.0 {
        return;
    }
    for y in y_lo as usize..=y_hi as usize {
        for x in x_lo as usize..=x_hi as usize {
            let p = [x as f64, y as f64];
            let s0 = cross2(d0, [p[0] - a0[0], p[1] - a0[1]]) / l0;
            let s1 = cross2(d1, [p[0] - a1[0], p[1] - a1[1]]) / l1;
            if (s0 >= 0.0) == (s1 >= 0.0) {
                continue;
            }
            let lam = s0 / (s0 - s1);
            let a = [a0[0] + lam * (a1[0] - a0[0]), a0[1] + lam * (a1[1] - a0[1])];
            let b = [b0[0] + lam * (b1[0] - b0[0]), b0[1] + lam * (b1[1] - b0[1])];
            let d = [b[0] - a[0], b[1] - a[1]];
            let mu = ((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / (d[0] * d[0] + d[1] * d[1]);
            if !(0.0..1.0).contains(&mu) {
                continue;
            }
            let dir = if s0 >= 0.0 { 1 } else { -1 };
            emit(x, y, t0 + lam * step, contrast * dir);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn intr() -> CameraIntrinsics {
        CameraIntrinsics::centered(300.0, 240, 180).unwrap()
    }

    fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Vec<[f64; 2]> {
        vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]]
    }

    fn textured(depth: f64) -> SceneSpec {
        SceneSpec {
            planes: vec![PlaneSpec {
                id: None,
                polygon: rect(-400.0, -200.0, 640.0, 380.0),
                depth,
                edge_density: 0.5,
                edges: vec![],
            }],
            noise_rate: 0.0,
            hot_pixels: vec![],
            edge_length: 8.0,
        }
    }

    #[test]
    fn rodrigues_small_and_large() {
        let r = so3_exp([0.0, 0.0, std::f64::consts::FRAC_PI_2]);
        assert!((r[0][1] + 1.0).abs() < 1e-12 && (r[1][0] - 1.0).abs() < 1e-12);
        let r = so3_exp([1e-10, 0.0, 0.0]);
        assert!((r[2][1] - 1e-10).abs() < 1e-18);
    }

    #[test]
    fn no_motion_no_events() {
        let m = MotionSpec::constant([0.0; 3], AngularVelocity3::ZERO, 0.2);
        let out = generate(&textured(2.0), &m, &intr(), 1).unwrap();
        assert!(out.events.is_empty());
        assert_eq!(out.masks.len(), 4);
    }

    #[test]
    fn vertical_edge_crossing_times() {
        let k = intr();
        let scene = SceneSpec {
            planes: vec![PlaneSpec {
                id: None,
                polygon: rect(-500.0, -100.0, 700.0, 300.0),
                depth: 3.0,
                edge_density: 0.0,
                edges: vec![[[150.3, -50.0], [150.3, 250.0]]],
            }],
            noise_rate: 0.0,
            hot_pixels: vec![],
            edge_length: 8.0,
        };
        let vx = 0.4;
        let m = MotionSpec::constant([vx, 0.0, 0.0], AngularVelocity3::ZERO, 0.3);
        let out = generate(&scene, &m, &k, 3).unwrap();
        let row: Vec<&Event> = out.events.iter().filter(|e| e.y == 90.0).collect();
        assert!(row.len() > 10);
        let expect = 3.0 / (300.0 * vx);
        for w in row.windows(2) {
            assert!((w[1].t - w[0].t - expect).abs() < 1e-9, "{}", w[1].t - w[0].t);
            assert_eq!(w[1].x, w[0].x - 1.0);
        }
        // Every row of the edge fires at the same times.
        let other: Vec<f64> = out.events.iter().filter(|e| e.y == 10.0).map(|e| e.t).collect();
        let mine: Vec<f64> = row.iter().map(|e| e.t).collect();
        assert_eq!(other, mine);
    }

    #[test]
    fn deterministic_given_seed() {
        let m = MotionSpec::constant([0.3, 0.1, 0.0], AngularVelocity3::ZERO, 0.1);
        let mut s = textured(2.0);
        s.noise_rate = 0.5;
        let a = generate(&s, &m, &intr(), 42).unwrap();
        let b = generate(&s, &m, &intr(), 42).unwrap();
        assert_eq!(a, b);
        let c = generate(&s, &m, &intr(), 43).unwrap();
        assert_ne!(a.events, c.events);
    }

    #[test]
    fn overlap_is_rejected() {
        let mut s = textured(2.0);
        s.planes.push(PlaneSpec {
            id: None,
            polygon: rect(0.0, 0.0, 50.0, 50.0),
            depth: 1.0,
            edge_density: 0.1,
            edges: vec![],
        });
        assert_eq!(s.validate(), Err(Error::RegionsOverlap));
        // Touching along a shared edge is fine.
        let t = SceneSpec {
            planes: vec![
                PlaneSpec { id: None, polygon: rect(0.0, 0.0, 60.0, 100.0), depth: 1.0, edge_density: 0.1, edges: vec![] },
                PlaneSpec { id: None, polygon: rect(60.0, 0.0, 120.0, 100.0), depth: 2.0, edge_density: 0.1, edges: vec![] },
            ],
            noise_rate: 0.0,
            hot_pixels: vec![],
            edge_length: 8.0,
        };
        assert!(t.validate().is_ok());
    }

    #[test]
    fn compensation_at_principal_point() {
        let k = intr();
        let c = compensation_at([0.6, 0.0, 0.0], 3.0, k.cx, k.cy, &k).unwrap();
        let (wx, wy) = c.cartesian();
        assert!(wx.abs() < 1e-12);
        assert!((wy - 0.2).abs() < 1e-12);
        let c2 = compensation_at([0.6, 0.0, 0.0], 6.0, k.cx, k.cy, &k).unwrap();
        assert!((c2.m - c.m / 2.0).abs() < 1e-15);
        assert_eq!(compensation_at([0.0; 3], 3.0, 10.0, 20.0, &k).unwrap().m, 0.0);
        assert!(matches!(
            compensation_at([0.1, 0.0, 0.1], 3.0, 10.0, 20.0, &k),
            Err(Error::ZMotion(_))
        ));
    }

    #[test]
    fn compensation_cancels_translational_flow() {
        let k = intr();
        let (x, y) = (37.0, 151.0);
        let v = [0.3, -0.2, 0.0];
        let c = compensation_at(v, 2.5, x, y, &k).unwrap();
        let r = crate::warp::rot_flow(c.to_3dof(), x, y, &k);
        let t = translational_flow(v, 2.5, x, y, &k);
        assert!((r.u - t.u).abs() < 1e-9 && (r.v - t.v).abs() < 1e-9);
    }

    #[test]
    fn hot_pixel_rate_is_motion_independent() {
        let mut s = textured(2.0);
        s.hot_pixels.push(HotPixel { x: 5, y: 5, rate: 1000.0 });
        let still = MotionSpec::constant([0.0; 3], AngularVelocity3::ZERO, 0.5);
        let moving = MotionSpec::constant([0.5, 0.0, 0.0], AngularVelocity3::ZERO, 0.5);
        let count = |m: &MotionSpec| {
            generate(&s, m, &intr(), 9)
                .unwrap()
                .events
                .iter()
                .filter(|e| e.x == 5.0 && e.y == 5.0)
                .count()
        };
        let a = count(&still);
        assert!((a as i64 - 500).abs() <= 1);
        let b = count(&moving);
        // The moving texture may add a handful of genuine events at that pixel.
        assert!(b >= a && b < a + 20);
    }

    #[test]
    fn event_count_scales_with_speed_and_density() {
        let k = intr();
        let base = |density: f64, vx: f64| {
            let mut s = textured(2.0);
            s.planes[0].edge_density = density;
            let m = MotionSpec::constant([vx, 0.0, 0.0], AngularVelocity3::ZERO, 0.2);
            generate(&s, &m, &k, 5).unwrap().events.len() as f64
        };
        let n = base(0.5, 0.2);
        let ratio_speed = base(0.5, 0.4) / n;
        let ratio_density = base(1.0, 0.2) / n;
        assert!((ratio_speed - 2.0).abs() < 0.2, "{ratio_speed}");
        assert!((ratio_density - 2.0).abs() < 0.2, "{ratio_density}");
    }

    #[test]
    fn masks_follow_motion() {
        let k = intr();
        let scene = SceneSpec {
            planes: vec![
                PlaneSpec { id: Some(4), polygon: rect(-1000.0, -100.0, 100.0, 300.0), depth: 2.0, edge_density: 0.0, edges: vec![] },
                PlaneSpec { id: Some(9), polygon: rect(100.0, -100.0, 1000.0, 300.0), depth: 4.0, edge_density: 0.0, edges: vec![] },
            ],
            noise_rate: 0.0,
            hot_pixels: vec![],
            edge_length: 8.0,
        };
        let m = MotionSpec::constant([-0.4, 0.0, 0.0], AngularVelocity3::ZERO, 0.5);
        let m0 = ground_truth_mask(&scene, &m, &k, 0.0);
        assert_eq!(m0.label_at(99, 50), 4);
        assert_eq!(m0.label_at(101, 50), 9);
        // Near plane moves 60 px/s to the right, far plane 30 px/s: the near
        // plane occludes the far one.
        let m1 = ground_truth_mask(&scene, &m, &k, 0.5);
        assert_eq!(m1.label_at(129, 50), 4);
        assert_eq!(m1.label_at(131, 50), 9);
        // Moving the other way opens a gap between them.
        let back = MotionSpec::constant([0.4, 0.0, 0.0], AngularVelocity3::ZERO, 0.5);
        let m2 = ground_truth_mask(&scene, &back, &k, 0.5);
        assert_eq!(m2.label_at(69, 50), 4);
        assert_eq!(m2.label_at(77, 50), 0);
        assert_eq!(m2.label_at(86, 50), 9);
        let d = ground_truth_depths(&scene, &m, &k, 0.25);
        assert_eq!(d[&4], 2.0);
        assert_eq!(d[&9], 4.0);
    }

    #[test]
    fn motion_spec_json_forms() {
        let single: MotionSpec =
            serde_json::from_str(r#"{"v":[0.1,0,0],"omega":{"wx":0,"wy":0,"wz":0},"duration":1.0}"#)
                .unwrap();
        assert_eq!(single.phases.len(), 1);
        let multi: MotionSpec = serde_json::from_str(
            r#"{"phases":[{"v":[0,0,0],"duration":0.5},{"v":[1,0,0],"duration":0.5}]}"#,
        )
        .unwrap();
        assert_eq!(multi.duration(), 1.0);
        assert_eq!(multi.phase_at(0.7).v[0], 1.0);
    }
}
