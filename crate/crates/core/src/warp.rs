//! Rotational flow, linearized event warping and IMU derotation.
//!
//! Flow follows the instantaneous rotational motion field of a pinhole
//! camera. With normalized coordinates `xn = (x - cx) / fx`,
//! `yn = (y - cy) / fy` a camera rotating at `(wx, wy, wz)` sees
//!
//! ```text
//! u = fx * ( xn*yn*wx - (1 + xn^2)*wy + yn*wz )
//! v = fy * ( (1 + yn^2)*wx - xn*yn*wy - xn*wz )
//! ```
//!
//! in pixels per second. The field never depends on scene depth.

use std::f64::consts::TAU;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::camera::CameraIntrinsics;
use crate::error::{Error, Result};
use crate::event::{Event, EventWindow};

/// Two-axis (pan/tilt) angular velocity in polar form.
///
/// Cartesian components are `wx = m cos(phi)`, `wy = m sin(phi)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngularVelocity2 {
    /// rad/s, non-negative.
    pub m: f64,
    /// rad, in `[0, 2*pi)`.
    pub phi: f64,
}

impl AngularVelocity2 {
    pub const ZERO: Self = Self { m: 0.0, phi: 0.0 };

    /// Builds from polar components, folding negative magnitudes into the direction.
    pub fn polar(m: f64, phi: f64) -> Self {
        if m < 0.0 {
            Self {
                m: -m,
                phi: wrap_angle(phi + std::f64::consts::PI),
            }
        } else {
            Self {
                m,
                phi: wrap_angle(phi),
            }
        }
    }

    pub fn from_cartesian(wx: f64, wy: f64) -> Self {
        let m = wx.hypot(wy);
        if m == 0.0 {
            return Self::ZERO;
        }
        Self {
            m,
            phi: wrap_angle(wy.atan2(wx)),
        }
    }

    pub fn cartesian(&self) -> (f64, f64) {
        (self.m * self.phi.cos(), self.m * self.phi.sin())
    }

    /// Three-axis form with `wz = 0`.
    pub fn to_3dof(&self) -> AngularVelocity3 {
        let (wx, wy) = self.cartesian();
        AngularVelocity3::new(wx, wy, 0.0)
    }
}

/// Wraps an angle into `[0, 2*pi)`.
pub fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    // rem_euclid can return exactly TAU for tiny negative inputs.
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Smallest absolute difference between two angles, in `[0, pi]`.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    let d = wrap_angle(a - b);
    d.min(TAU - d)
}

/// Angular velocity about the camera x, y and z axes (rad/s).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AngularVelocity3 {
    pub wx: f64,
    pub wy: f64,
    pub wz: f64,
}

impl AngularVelocity3 {
    pub const ZERO: Self = Self {
        wx: 0.0,
        wy: 0.0,
        wz: 0.0,
    };

    pub fn new(wx: f64, wy: f64, wz: f64) -> Self {
        Self { wx, wy, wz }
    }

    pub fn norm(&self) -> f64 {
        (self.wx * self.wx + self.wy * self.wy + self.wz * self.wz).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.wx.is_finite() && self.wy.is_finite() && self.wz.is_finite()
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.wx, self.wy, self.wz]
    }
}

impl Add for AngularVelocity3 {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.wx + o.wx, self.wy + o.wy, self.wz + o.wz)
    }
}

impl Sub for AngularVelocity3 {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.wx - o.wx, self.wy - o.wy, self.wz - o.wz)
    }
}

impl Mul<f64> for AngularVelocity3 {
    type Output = Self;
    fn mul(self, s: f64) -> Self {
        Self::new(self.wx * s, self.wy * s, self.wz * s)
    }
}

impl Neg for AngularVelocity3 {
    type Output = Self;
    fn neg(self) -> Self {
        self * -1.0
    }
}

/// Image-plane velocity in pixels per second.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FlowVector {
    pub u: f64,
    pub v: f64,
}

impl FlowVector {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn norm(&self) -> f64 {
        self.u.hypot(self.v)
    }

    pub fn dot(&self, o: &FlowVector) -> f64 {
        self.u * o.u + self.v * o.v
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::new(self.u * s, self.v * s)
    }
}

/// Rotational flow (pixels/s) at pixel `(x, y)`.
pub fn rot_flow(omega: AngularVelocity3, x: f64, y: f64, intr: &CameraIntrinsics) -> FlowVector {
    let [a, b] = flow_basis(x, y, intr);
    FlowVector::new(
        a[0] * omega.wx + a[1] * omega.wy + a[2] * omega.wz,
        b[0] * omega.wx + b[1] * omega.wy + b[2] * omega.wz,
    )
}

/// Rows of the 2x3 matrix mapping `(wx, wy, wz)` to flow at `(x, y)`.
#[inline]
pub fn flow_basis(x: f64, y: f64, intr: &CameraIntrinsics) -> [[f64; 3]; 2] {
    let (xn, yn) = intr.normalize(x, y);
    [
        [intr.fx * xn * yn, -intr.fx * (1.0 + xn * xn), intr.fx * yn],
        [intr.fy * (1.0 + yn * yn), -intr.fy * xn * yn, -intr.fy * xn],
    ]
}

/// Upper bound (pixels) on the displacement over `dt` of any point within
/// half a pixel of the sensor, for a pan/tilt rate up to `m` and a roll rate
/// up to `wz`.
pub fn max_displacement(m: f64, wz: f64, dt: f64, intr: &CameraIntrinsics) -> f64 {
    // The pan/tilt block of the flow basis has largest singular value f (1 + r^2).
    let (xn0, yn0) = intr.normalize(-1.0, -1.0);
    let (xn1, yn1) = intr.normalize(intr.width as f64, intr.height as f64);
    let r2 = xn0.abs().max(xn1.abs()).powi(2) + yn0.abs().max(yn1.abs()).powi(2);
    let f = intr.fx.max(intr.fy);
    (f * m.abs() * (1.0 + r2) + f * r2.sqrt() * wz.abs()) * dt.abs()
}

/// Warps one event back to `t_ref` under a constant three-axis rotation.
#[inline]
pub fn warp_event(e: &Event, t_ref: f64, omega: AngularVelocity3, intr: &CameraIntrinsics) -> (f64, f64) {
    let f = rot_flow(omega, e.x, e.y, intr);
    let dt = e.t - t_ref;
    (e.x - f.u * dt, e.y - f.v * dt)
}

/// First-order rotational warp of every event back to the window's `t_ref`.
pub fn warp_window(w: &EventWindow, omega: AngularVelocity2, intr: &CameraIntrinsics) -> Vec<(f64, f64)> {
    warp_window3(w, omega.to_3dof(), intr)
}

/// Three-axis variant of [`warp_window`].
pub fn warp_window3(w: &EventWindow, omega: AngularVelocity3, intr: &CameraIntrinsics) -> Vec<(f64, f64)> {
    w.events
        .iter()
        .map(|e| warp_event(e, w.t_ref, omega, intr))
        .collect()
}

/// One gyroscope reading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    pub t: f64,
    pub omega: AngularVelocity3,
}

/// Zero-order-hold integration of a gyroscope trace.
///
/// Each sample holds until the next one; the first sample also holds
/// backwards in time.
#[derive(Debug, Clone)]
pub struct ImuIntegrator<'a> {
    samples: &'a [ImuSample],
    // Integral from samples[0].t up to samples[i].t.
    cumulative: Vec<[f64; 3]>,
}

impl<'a> ImuIntegrator<'a> {
    pub fn new(samples: &'a [ImuSample]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Validation("empty IMU trace".into()));
        }
        let mut cumulative = Vec::with_capacity(samples.len());
        let mut acc = [0.0; 3];
        cumulative.push(acc);
        for w in samples.windows(2) {
            let h = w[1].t - w[0].t;
            if !(h > 0.0) {
                return Err(Error::Validation(format!(
                    "IMU timestamps must be strictly increasing ({} then {})",
                    w[0].t, w[1].t
                )));
            }
            let o = w[0].omega.as_array();
            for k in 0..3 {
                acc[k] += o[k] * h;
            }
            cumulative.push(acc);
        }
        Ok(Self {
            samples,
            cumulative,
        })
    }

    fn antiderivative(&self, t: f64) -> [f64; 3] {
        // Index of the last sample with s.t <= t (or 0 when t precedes all samples).
        let i = self.samples.partition_point(|s| s.t <= t).saturating_sub(1);
        let s = &self.samples[i];
        let o = s.omega.as_array();
        let h = t - s.t;
        let c = self.cumulative[i];
        [c[0] + o[0] * h, c[1] + o[1] * h, c[2] + o[2] * h]
    }

    /// Rotation vector accumulated over `[t0, t1]` (negative if `t1 < t0`).
    pub fn integrate(&self, t0: f64, t1: f64) -> AngularVelocity3 {
        let a = self.antiderivative(t0);
        let b = self.antiderivative(t1);
        AngularVelocity3::new(b[0] - a[0], b[1] - a[1], b[2] - a[2])
    }

    /// Mean angular velocity over `[t0, t1]`.
    pub fn mean(&self, t0: f64, t1: f64) -> AngularVelocity3 {
        let d = t1 - t0;
        if d <= 0.0 {
            let i = self.samples.partition_point(|s| s.t <= t0).saturating_sub(1);
            return self.samples[i].omega;
        }
        self.integrate(t0, t1) * (1.0 / d)
    }

    /// Longest sample spacing touching `[t0, t1]`, including any stretch of
    /// the interval before the first or after the last sample.
    pub fn max_gap(&self, t0: f64, t1: f64) -> f64 {
        let first = self.samples[0].t;
        let last = self.samples[self.samples.len() - 1].t;
        let mut gap = (first - t0).max(t1 - last).max(0.0);
        for w in self.samples.windows(2) {
            if w[1].t >= t0 && w[0].t <= t1 {
                gap = gap.max(w[1].t - w[0].t);
            }
        }
        gap
    }
}

/// Result of [`derotate`].
#[derive(Debug, Clone, PartialEq)]
pub struct Derotated {
    pub window: EventWindow,
    /// Set when no IMU data was supplied and the window was passed through.
    pub imu_missing: bool,
}

/// Removes the IMU-measured rotation from a window.
///
/// Each event is displaced by minus the rotational flow of the rotation
/// vector integrated from `t_ref` to the event time.
pub fn derotate(w: &EventWindow, imu: &[ImuSample], intr: &CameraIntrinsics) -> Result<Derotated> {
    if imu.is_empty() {
        log::warn!(
            "no IMU samples for window starting at {}; skipping derotation",
            w.t_start
        );
        return Ok(Derotated {
            window: w.clone(),
            imu_missing: true,
        });
    }
    let integ = ImuIntegrator::new(imu)?;
    let dt = w.dt();
    let gap = integ.max_gap(w.t_start, w.t_end);
    if gap > dt {
        return Err(Error::ImuGap { gap, dt });
    }
    let events = w
        .events
        .iter()
        .map(|e| {
            let theta = integ.integrate(w.t_ref, e.t);
            let f = rot_flow(theta, e.x, e.y, intr);
            Event::new(e.x - f.u, e.y - f.v, e.t, e.p)
        })
        .collect();
    Ok(Derotated {
        window: w.with_events(events),
        imu_missing: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn intr() -> CameraIntrinsics {
        CameraIntrinsics::new(300.0, 300.0, 120.0, 120.0, 240, 240).unwrap()
    }

    #[test]
    fn zero_rotation_has_zero_flow() {
        let f = rot_flow(AngularVelocity3::ZERO, 17.0, 203.0, &intr());
        assert_eq!(f, FlowVector::new(0.0, 0.0));
    }

    #[test]
    fn pan_at_principal_point() {
        let f = rot_flow(AngularVelocity3::new(0.0, 0.3, 0.0), 120.0, 120.0, &intr());
        assert!((f.u - (-300.0 * 0.3)).abs() < 1e-12);
        assert_eq!(f.v, 0.0);
    }

    #[test]
    fn flow_matches_hand_evaluation() {
        // xn = 80/300, yn = -70/300, evaluated term by term.
        let xn: f64 = 80.0 / 300.0;
        let yn: f64 = -70.0 / 300.0;
        let (wx, wy, wz) = (0.1, -0.05, 0.02);
        let u = 300.0 * (xn * yn * wx - (1.0 + xn * xn) * wy + yn * wz);
        let v = 300.0 * ((1.0 + yn * yn) * wx - xn * yn * wy - xn * wz);
        // Exact rational evaluation: u = 64/5, v = 291/10.
        assert!((u - 12.8).abs() < 1e-9, "{u}");
        assert!((v - 29.1).abs() < 1e-9, "{v}");
        let f = rot_flow(AngularVelocity3::new(wx, wy, wz), 200.0, 50.0, &intr());
        assert!((f.u - u).abs() < 1e-12);
        assert!((f.v - v).abs() < 1e-12);
    }

    #[test]
    fn identity_warps() {
        let k = intr();
        let w = EventWindow::new(
            vec![Event::new(10.0, 20.0, 0.01, 1), Event::new(100.0, 3.0, 0.04, -1)],
            0.0,
            0.05,
        );
        let p = warp_window(&w, AngularVelocity2::polar(0.0, 1.3), &k);
        assert_eq!(p, vec![(10.0, 20.0), (100.0, 3.0)]);

        let w = EventWindow::new(vec![Event::new(50.0, 60.0, 0.0, 1)], 0.0, 0.05);
        let p = warp_window(&w, AngularVelocity2::polar(3.0, 0.7), &k);
        assert_eq!(p, vec![(50.0, 60.0)]);
    }

    #[test]
    fn principal_point_displacement() {
        let w = EventWindow::new(vec![Event::new(120.0, 120.0, 0.05, 1)], 0.0, 0.1);
        let p = warp_window(&w, AngularVelocity2::from_cartesian(0.0, 0.2), &intr());
        assert!((p[0].0 - 123.0).abs() < 1e-12);
        assert!((p[0].1 - 120.0).abs() < 1e-12);
    }

    #[test]
    fn polar_cartesian_roundtrip() {
        for &(wx, wy) in &[(0.3, 0.4), (-1.0, 0.2), (0.0, -2.0), (-0.5, -0.5)] {
            let w = AngularVelocity2::from_cartesian(wx, wy);
            assert!(w.m >= 0.0 && w.phi >= 0.0 && w.phi < TAU);
            let (a, b) = w.cartesian();
            assert!((a - wx).abs() < 1e-12 && (b - wy).abs() < 1e-12);
        }
        assert_eq!(AngularVelocity2::polar(-1.0, 0.0).phi, std::f64::consts::PI);
    }

    #[test]
    fn zero_imu_is_noop() {
        let k = intr();
        let w = EventWindow::new(
            vec![Event::new(10.0, 20.0, 0.01, 1), Event::new(100.0, 3.0, 0.04, -1)],
            0.0,
            0.05,
        );
        let imu: Vec<ImuSample> = (0..11)
            .map(|i| ImuSample {
                t: i as f64 * 0.005,
                omega: AngularVelocity3::ZERO,
            })
            .collect();
        let d = derotate(&w, &imu, &k).unwrap();
        assert!(!d.imu_missing);
        assert_eq!(d.window, w);
    }

    #[test]
    fn missing_imu_flags_and_passes_through() {
        let w = EventWindow::new(vec![Event::new(10.0, 20.0, 0.01, 1)], 0.0, 0.05);
        let d = derotate(&w, &[], &intr()).unwrap();
        assert!(d.imu_missing);
        assert_eq!(d.window, w);
    }

    #[test]
    fn imu_gap_is_an_error() {
        let w = EventWindow::new(vec![Event::new(10.0, 20.0, 0.01, 1)], 1.0, 1.05);
        let imu = vec![
            ImuSample {
                t: 0.9,
                omega: AngularVelocity3::ZERO,
            },
            ImuSample {
                t: 1.2,
                omega: AngularVelocity3::ZERO,
            },
        ];
        assert!(matches!(derotate(&w, &imu, &intr()), Err(Error::ImuGap { .. })));
    }

    #[test]
    fn constant_imu_matches_warp() {
        let k = intr();
        let events: Vec<Event> = (0..20)
            .map(|i| Event::new(7.0 * i as f64, 3.0 + 11.0 * i as f64, i as f64 * 0.0025, 1))
            .collect();
        let w = EventWindow::new(events, 0.0, 0.05);
        let imu: Vec<ImuSample> = (0..=50)
            .map(|i| ImuSample {
                t: i as f64 * 0.001,
                omega: AngularVelocity3::new(0.0, 0.2, 0.0),
            })
            .collect();
        let d = derotate(&w, &imu, &k).unwrap();
        let p = warp_window(&w, AngularVelocity2::from_cartesian(0.0, 0.2), &k);
        for (e, q) in d.window.events.iter().zip(&p) {
            assert!((e.x - q.0).abs() < 1e-12 && (e.y - q.1).abs() < 1e-12);
        }
    }

    #[test]
    fn integrator_zero_order_hold() {
        let imu = vec![
            ImuSample {
                t: 0.0,
                omega: AngularVelocity3::new(1.0, 0.0, 0.0),
            },
            ImuSample {
                t: 1.0,
                omega: AngularVelocity3::new(3.0, 0.0, 0.0),
            },
        ];
        let integ = ImuIntegrator::new(&imu).unwrap();
        assert!((integ.integrate(0.5, 1.5).wx - 2.0).abs() < 1e-12);
        assert!((integ.integrate(1.5, 0.5).wx + 2.0).abs() < 1e-12);
        assert!((integ.mean(0.0, 2.0).wx - 2.0).abs() < 1e-12);
        assert!((integ.integrate(-1.0, 0.0).wx - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn flow_is_linear_in_omega(
            a in -3.0f64..3.0, b in -3.0f64..3.0,
            w1 in prop::array::uniform3(-2.0f64..2.0),
            w2 in prop::array::uniform3(-2.0f64..2.0),
            x in 0.0f64..240.0, y in 0.0f64..240.0,
        ) {
            let k = intr();
            let o1 = AngularVelocity3::new(w1[0], w1[1], w1[2]);
            let o2 = AngularVelocity3::new(w2[0], w2[1], w2[2]);
            let lhs = rot_flow(o1 * a + o2 * b, x, y, &k);
            let f1 = rot_flow(o1, x, y, &k);
            let f2 = rot_flow(o2, x, y, &k);
            prop_assert!((lhs.u - (a * f1.u + b * f2.u)).abs() < 1e-9);
            prop_assert!((lhs.v - (a * f1.v + b * f2.v)).abs() < 1e-9);
        }

        #[test]
        fn opposite_warps_are_symmetric(
            m in 0.0f64..5.0, phi in 0.0f64..TAU,
            x in 0.0f64..240.0, y in 0.0f64..240.0, t in 0.0f64..0.05,
        ) {
            let k = intr();
            let w = EventWindow::new(vec![Event::new(x, y, t, 1)], 0.0, 0.05);
            let fwd = warp_window(&w, AngularVelocity2::polar(m, phi), &k)[0];
            let back = warp_window(&w, AngularVelocity2::polar(-m, phi), &k)[0];
            // Displacements cancel: applying the opposite displacement restores the event.
            prop_assert!((fwd.0 + back.0 - 2.0 * x).abs() < 1e-9);
            prop_assert!((fwd.1 + back.1 - 2.0 * y).abs() < 1e-9);
        }

        #[test]
        fn polar_roundtrip(wx in -10.0f64..10.0, wy in -10.0f64..10.0) {
            let (a, b) = AngularVelocity2::from_cartesian(wx, wy).cartesian();
            prop_assert!((a - wx).abs() < 1e-12 && (b - wy).abs() < 1e-12);
        }
    }
}
