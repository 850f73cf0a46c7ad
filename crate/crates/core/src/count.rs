//! Bilinear event accumulation into count images.

/// Per-pixel accumulated (possibly fractional) event counts.
#[derive(Debug, Clone, PartialEq)]
pub struct CountImage {
    pub width: usize,
    pub height: usize,
    pub counts: Vec<f64>,
    /// Mass that fell outside the sensor.
    pub dropped: f64,
}

impl CountImage {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            counts: vec![0.0; width * height],
            dropped: 0.0,
        }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.counts[y * self.width + x]
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }

    /// Adds one unit of mass at a continuous position.
    #[inline]
    pub fn splat(&mut self, x: f64, y: f64) {
        let (w, h) = (self.width, self.height);
        let counts = &mut self.counts;
        self.dropped += splat_bilinear(x, y, w, h, |i, m| counts[i] += m);
    }
}

/// Distributes unit mass at `(x, y)` over the (up to) four surrounding pixel
/// centers, calling `add(flat_index, mass)` for every in-bounds neighbor with
/// non-zero weight. Returns the mass that fell outside the grid.
#[inline]
pub fn splat_bilinear(
    x: f64,
    y: f64,
    width: usize,
    height: usize,
    mut add: impl FnMut(usize, f64),
) -> f64 {
    if !(x.is_finite() && y.is_finite()) {
        return 1.0;
    }
    let x0 = x.floor();
    let y0 = y.floor();
    let ax = x - x0;
    let ay = y - y0;
    let mut dropped = 0.0;
    let corners = [
        (x0, y0, (1.0 - ax) * (1.0 - ay)),
        (x0 + 1.0, y0, ax * (1.0 - ay)),
        (x0, y0 + 1.0, (1.0 - ax) * ay),
        (x0 + 1.0, y0 + 1.0, ax * ay),
    ];
    for (cx, cy, wgt) in corners {
        if wgt == 0.0 {
            continue;
        }
        if cx >= 0.0 && cy >= 0.0 && cx < width as f64 && cy < height as f64 {
            add(cy as usize * width + cx as usize, wgt);
        } else {
            dropped += wgt;
        }
    }
    dropped
}

/// Accumulates warped positions into a count image.
pub fn accumulate(positions: &[(f64, f64)], width: usize, height: usize) -> CountImage {
    let mut img = CountImage::zeros(width, height);
    for &(x, y) in positions {
        img.splat(x, y);
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn integer_position_hits_one_pixel() {
        let img = accumulate(&[(10.0, 10.0)], 32, 32);
        assert_eq!(img.at(10, 10), 1.0);
        assert_eq!(img.total(), 1.0);
        assert_eq!(img.counts.iter().filter(|&&c| c != 0.0).count(), 1);
    }

    #[test]
    fn half_pixel_splits_evenly() {
        let img = accumulate(&[(10.5, 10.0)], 32, 32);
        assert_eq!(img.at(10, 10), 0.5);
        assert_eq!(img.at(11, 10), 0.5);
        assert_eq!(img.total(), 1.0);
    }

    #[test]
    fn out_of_bounds_mass_is_tallied() {
        let img = accumulate(&[(-5.0, 3.0), (31.5, 2.0)], 32, 32);
        assert_eq!(img.total(), 0.5);
        assert_eq!(img.dropped, 1.5);
    }

    #[test]
    fn empty_input() {
        let img = accumulate(&[], 4, 4);
        assert_eq!(img.total(), 0.0);
    }

    #[test]
    fn thousand_events_conserve_mass() {
        // Deterministic low-discrepancy positions, all at least one pixel inside.
        let pos: Vec<(f64, f64)> = (0..1000)
            .map(|i| {
                let a = (i as f64 * 0.618_033_988_749_895).fract();
                let b = (i as f64 * 0.754_877_666_246_693).fract();
                (1.0 + a * 60.0, 1.0 + b * 40.0)
            })
            .collect();
        let img = accumulate(&pos, 64, 48);
        // Scalar tally: every position is in bounds, so each contributes 1.
        let tally = pos.len() as f64;
        assert!((img.total() - tally).abs() <= 1e-6 * tally);
        assert_eq!(img.dropped, 0.0);
    }

    proptest! {
        #[test]
        fn splat_is_local_and_conserves_mass(x in -3.0f64..35.0, y in -3.0f64..35.0) {
            let mut touched = Vec::new();
            let dropped = splat_bilinear(x, y, 32, 32, |i, m| touched.push((i, m)));
            prop_assert!(touched.len() <= 4);
            let inside: f64 = touched.iter().map(|t| t.1).sum();
            prop_assert!((inside + dropped - 1.0).abs() < 1e-12);
        }
    }
}
