#![allow(dead_code)]

use evalign_core::synth::{MotionSpec, PlaneSpec, SceneSpec};
use evalign_core::{AngularVelocity3, CameraIntrinsics};

pub const W: usize = 120;
pub const H: usize = 90;
pub const F: f64 = 150.0;

pub fn intr() -> CameraIntrinsics {
    CameraIntrinsics::centered(F, W, H).unwrap()
}

/// Axis-aligned rectangle as a polygon.
pub fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Vec<[f64; 2]> {
    vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]]
}

pub fn plane(id: u32, polygon: Vec<[f64; 2]>, depth: f64, density: f64) -> PlaneSpec {
    PlaneSpec {
        id: Some(id),
        polygon,
        depth,
        edge_density: density,
        edges: vec![],
    }
}

/// Textured plane filling (and overhanging) the whole sensor.
pub fn single_plane(depth: f64) -> SceneSpec {
    SceneSpec {
        planes: vec![plane(1, rect(-200.0, -200.0, 320.0, 290.0), depth, 1.0)],
        noise_rate: 0.1,
        hot_pixels: vec![],
        edge_length: 8.0,
    }
}

/// Left half at `z_left`, right half at `z_right`.
pub fn two_planes(z_left: f64, z_right: f64) -> SceneSpec {
    let xb = W as f64 / 2.0;
    SceneSpec {
        planes: vec![
            plane(1, rect(-200.0, -200.0, xb, 290.0), z_left, 1.0),
            plane(2, rect(xb, -200.0, 320.0, 290.0), z_right, 1.0),
        ],
        noise_rate: 0.1,
        hot_pixels: vec![],
        edge_length: 8.0,
    }
}

/// Translation giving `px_per_s` of image motion at depth `z`.
pub fn translation(v_dir: [f64; 2], px_per_s: f64, z: f64, duration: f64) -> MotionSpec {
    let n = v_dir[0].hypot(v_dir[1]);
    let s = px_per_s * z / F / n;
    MotionSpec::constant([v_dir[0] * s, v_dir[1] * s, 0.0], AngularVelocity3::ZERO, duration)
}
