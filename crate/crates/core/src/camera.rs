use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pinhole intrinsics of an undistorted sensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let intr = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        intr.validate()?;
        Ok(intr)
    }

    /// Principal point at the sensor center, square pixels.
    pub fn centered(f: f64, width: usize, height: usize) -> Result<Self> {
        Self::new(
            f,
            f,
            (width as f64 - 1.0) / 2.0,
            (height as f64 - 1.0) / 2.0,
            width,
            height,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(Error::InvalidParam(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            return Err(Error::InvalidParam("principal point must be finite".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidParam("sensor size must be non-zero".into()));
        }
        Ok(())
    }

    /// Pixel to normalized image coordinates.
    #[inline]
    pub fn normalize(&self, x: f64, y: f64) -> (f64, f64) {
        ((x - self.cx) / self.fx, (y - self.cy) / self.fy)
    }

    /// Normalized image coordinates to pixel.
    #[inline]
    pub fn denormalize(&self, xn: f64, yn: f64) -> (f64, f64) {
        (xn * self.fx + self.cx, yn * self.fy + self.cy)
    }

    /// Mean focal length.
    pub fn focal(&self) -> f64 {
        0.5 * (self.fx + self.fy)
    }

    pub fn n_pixels(&self) -> usize {
        self.width * self.height
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_values() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 0.0, 0.0, 10, 10).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0, 0, 10).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, f64::NAN, 0.0, 10, 10).is_err());
    }

    #[test]
    fn normalize_roundtrip() {
        let k = CameraIntrinsics::new(300.0, 310.0, 120.0, 90.0, 240, 180).unwrap();
        let (xn, yn) = k.normalize(200.0, 50.0);
        let (x, y) = k.denormalize(xn, yn);
        assert!((x - 200.0).abs() < 1e-12 && (y - 50.0).abs() < 1e-12);
    }
}
