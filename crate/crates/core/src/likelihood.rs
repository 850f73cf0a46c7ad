//! Negative-binomial alignment objective over count images.
//!
//! The count `k` at each pixel of a warped count image is scored with
//!
//! ```text
//! log NB(k; r, q) = lgamma(k + r) - lgamma(k + 1) - lgamma(r) + r ln q + k ln(1 - q)
//! ```
//!
//! and the objective is the sum over a pixel support. Warps are linear in
//! the angular velocity, so each event's displacement is precomputed as a
//! 2x3 matrix ([`WarpCache`]) and every objective evaluation is a single
//! pass of six multiply-adds and one bilinear splat per event.

use std::cell::RefCell;

use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use rand_chacha::ChaCha8Rng;
use statrs::function::gamma::ln_gamma;

use crate::camera::CameraIntrinsics;
use crate::error::{Error, Result};
use crate::event::{Event, EventWindow};
use crate::mask::PixelSet;
use crate::warp::{flow_basis, max_displacement, AngularVelocity2, AngularVelocity3};

/// Default dispersion.
///
/// Values below one make the objective prefer few pixels with many events
/// over many pixels with few events, which is what alignment needs.
pub const DEFAULT_R: f64 = 0.1;

/// Negative-binomial parameters: dispersion `r` and success probability `q`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NBParams {
    pub r: f64,
    pub q: f64,
}

impl NBParams {
    pub fn new(r: f64, q: f64) -> Result<Self> {
        let p = Self { r, q };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r > 0.0 && self.r.is_finite()) {
            return Err(Error::InvalidParam(format!("r must be > 0, got {}", self.r)));
        }
        if !(self.q > 0.0 && self.q < 1.0) {
            return Err(Error::InvalidParam(format!(
                "q must lie in (0, 1), got {}",
                self.q
            )));
        }
        Ok(())
    }

    /// `q` chosen so that the mean `r (1 - q) / q` equals `mean`.
    pub fn moment_matched(r: f64, mean: f64) -> Result<Self> {
        let mean = mean.max(1e-9);
        Self::new(r, r / (r + mean))
    }

    pub fn mean(&self) -> f64 {
        self.r * (1.0 - self.q) / self.q
    }
}

/// How fractional (bilinearly splatted) counts enter the pmf.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CountModel {
    /// Round to the nearest integer (half up); mass below 0.5 counts as 0.
    Nearest,
    /// Evaluate the pmf's gamma-function form at the real-valued count.
    #[default]
    Continuous,
}

/// How NB parameters are chosen per evaluation context.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NbConfig {
    pub r: f64,
    /// `None`: moment-match `q` to the mean event count per support pixel.
    pub q: Option<f64>,
    pub counts: CountModel,
}

impl Default for NbConfig {
    fn default() -> Self {
        Self {
            r: DEFAULT_R,
            q: None,
            counts: CountModel::default(),
        }
    }
}

impl NbConfig {
    pub fn resolve(&self, n_events: usize, n_pixels: usize) -> Result<NBParams> {
        match self.q {
            Some(q) => NBParams::new(self.r, q),
            None => NBParams::moment_matched(self.r, n_events as f64 / n_pixels.max(1) as f64),
        }
    }
}

/// `log NB(k; r, q)`.
pub fn nb_log_pmf(k: u64, params: &NBParams) -> Result<f64> {
    params.validate()?;
    Ok(nb_log_pmf_unchecked(k, params))
}

#[inline]
fn nb_log_pmf_unchecked(k: u64, p: &NBParams) -> f64 {
    nb_log_density(k as f64, p)
}

/// The log-pmf formula evaluated at a real `k >= 0`.
#[inline]
pub fn nb_log_density(k: f64, p: &NBParams) -> f64 {
    ln_gamma(k + p.r) - ln_gamma(k + 1.0) - ln_gamma(p.r) + p.r * p.q.ln() + k * (-p.q).ln_1p()
}

/// Tabulated log-pmf for small counts.
#[derive(Debug, Clone)]
pub struct NbTable {
    params: NBParams,
    model: CountModel,
    table: Vec<f64>,
    /// `ln_gamma(k + r) - ln_gamma(k + 1)` sampled every `1 / FINE` for the
    /// continuous model.
    fine: Vec<f64>,
    /// `r ln q - ln_gamma(r)` and `ln(1 - q)`.
    offset: f64,
    slope: f64,
}

impl NbTable {
    const MAX_TABLE: usize = 1024;
    const FINE: f64 = 256.0;
    const FINE_MAX: f64 = 64.0;

    pub fn new(params: NBParams, max_k: usize) -> Result<Self> {
        Self::with_model(params, max_k, CountModel::Nearest)
    }

    pub fn with_model(params: NBParams, max_k: usize, model: CountModel) -> Result<Self> {
        params.validate()?;
        let n = max_k.min(Self::MAX_TABLE) + 1;
        let table = (0..n as u64).map(|k| nb_log_pmf_unchecked(k, &params)).collect();
        let fine = match model {
            CountModel::Nearest => Vec::new(),
            CountModel::Continuous => {
                let n = (Self::FINE_MAX.min(max_k as f64 + 1.0) * Self::FINE) as usize + 2;
                (0..n)
                    .map(|i| {
                        let k = i as f64 / Self::FINE;
                        ln_gamma(k + params.r) - ln_gamma(k + 1.0)
                    })
                    .collect()
            }
        };
        Ok(Self {
            params,
            model,
            table,
            fine,
            offset: params.r * params.q.ln() - ln_gamma(params.r),
            slope: (-params.q).ln_1p(),
        })
    }

    pub fn params(&self) -> &NBParams {
        &self.params
    }

    pub fn model(&self) -> CountModel {
        self.model
    }

    /// `score(c) - score(0)` for the continuous model; `base` is `fine[0]`.
    #[inline]
    fn continuous_excess(&self, c: f64, base: f64) -> f64 {
        let u = c * Self::FINE;
        let i = u as usize;
        let g = if i + 1 < self.fine.len() {
            let f = u - i as f64;
            self.fine[i] + f * (self.fine[i + 1] - self.fine[i])
        } else {
            ln_gamma(c + self.params.r) - ln_gamma(c + 1.0)
        };
        g - base + c * self.slope
    }

    /// Log-probability of a splatted count under the table's count model.
    #[inline]
    pub fn score(&self, c: f64) -> f64 {
        match self.model {
            CountModel::Nearest => self.get(round_count(c)),
            CountModel::Continuous => {
                let p = &self.params;
                let u = c * Self::FINE;
                let i = u as usize;
                let g = if i + 1 < self.fine.len() {
                    let f = u - i as f64;
                    self.fine[i] + f * (self.fine[i + 1] - self.fine[i])
                } else {
                    ln_gamma(c + p.r) - ln_gamma(c + 1.0)
                };
                g + self.offset + c * self.slope
            }
        }
    }

    #[inline]
    pub fn get(&self, k: usize) -> f64 {
        match self.table.get(k) {
            Some(&v) => v,
            None => nb_log_pmf_unchecked(k as u64, &self.params),
        }
    }
}

/// Uniform magnitude grid on `[0, m_max]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MagnitudeGrid {
    pub m_max: f64,
    pub values: Vec<f64>,
}

impl MagnitudeGrid {
    pub fn new(m_max: f64, n: usize) -> Result<Self> {
        if !(m_max > 0.0 && m_max.is_finite()) {
            return Err(Error::InvalidParam(format!("m_max must be > 0, got {m_max}")));
        }
        if n < 2 {
            return Err(Error::InvalidParam(format!("grid needs >= 2 points, got {n}")));
        }
        let step = m_max / (n - 1) as f64;
        let mut values: Vec<f64> = (0..n).map(|i| i as f64 * step).collect();
        values[n - 1] = m_max;
        Ok(Self { m_max, values })
    }

    pub fn n(&self) -> usize {
        self.values.len()
    }

    pub fn step(&self) -> f64 {
        self.m_max / (self.n() - 1) as f64
    }

    /// Log trapezoid weights; they sum (in linear space) to `m_max`.
    pub fn log_weights(&self) -> Vec<f64> {
        let n = self.n();
        let h = self.step();
        (0..n)
            .map(|i| if i == 0 || i == n - 1 { (0.5 * h).ln() } else { h.ln() })
            .collect()
    }
}

pub const M_MAX_FLOOR: f64 = 0.5;
pub const M_MAX_CAP: f64 = 10.0;

/// Default `m_max`: four times the typical image speed, expressed as a
/// rotation rate, clamped to `[0.5, 10]` rad/s.
///
/// The typical speed (pixels/s) is the median over events of the inverse
/// gradient norm of a local plane fitted to the surface of most recent
/// timestamps in the 3x3 neighborhood.
pub fn auto_m_max(w: &EventWindow, intr: &CameraIntrinsics) -> f64 {
    let speed = median_local_speed(w, intr.width, intr.height);
    match speed {
        Some(s) => (4.0 * s / intr.focal()).clamp(M_MAX_FLOOR, M_MAX_CAP),
        None => M_MAX_FLOOR,
    }
}

/// Median local edge speed in pixels per second, if any plane fit succeeded.
pub fn median_local_speed(w: &EventWindow, width: usize, height: usize) -> Option<f64> {
    let horizon = w.dt().max(1e-6);
    let mut sae = vec![f64::NEG_INFINITY; width * height];
    let mut speeds = Vec::new();
    for e in &w.events {
        let Some((px, py)) = e.pixel(width, height) else {
            continue;
        };
        sae[py * width + px] = e.t;
        if px == 0 || py == 0 || px + 1 >= width || py + 1 >= height {
            continue;
        }
        // Least-squares plane t = a + gx*dx + gy*dy over recent neighbors.
        let (mut n, mut sx, mut sy, mut st) = (0.0, 0.0, 0.0, 0.0);
        let (mut sxx, mut syy, mut sxy, mut sxt, mut syt) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let q = (py as i64 + dy) as usize * width + (px as i64 + dx) as usize;
                let tq = sae[q];
                if !(e.t - tq <= horizon) {
                    continue;
                }
                let (fx, fy, ft) = (dx as f64, dy as f64, tq - e.t);
                n += 1.0;
                sx += fx;
                sy += fy;
                st += ft;
                sxx += fx * fx;
                syy += fy * fy;
                sxy += fx * fy;
                sxt += fx * ft;
                syt += fy * ft;
            }
        }
        if n < 4.0 {
            continue;
        }
        // Centered normal equations for (gx, gy).
        let cxx = sxx - sx * sx / n;
        let cyy = syy - sy * sy / n;
        let cxy = sxy - sx * sy / n;
        let cxt = sxt - sx * st / n;
        let cyt = syt - sy * st / n;
        let det = cxx * cyy - cxy * cxy;
        if det.abs() < 1e-9 {
            continue;
        }
        let gx = (cyy * cxt - cxy * cyt) / det;
        let gy = (cxx * cyt - cxy * cxt) / det;
        let g = gx.hypot(gy);
        if g > 0.0 && g.is_finite() {
            speeds.push((1.0 / g).min(1e5));
        }
    }
    if speeds.is_empty() {
        return None;
    }
    let mid = speeds.len() / 2;
    let (_, m, _) = speeds.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
    Some(*m)
}

/// Seed of the sub-pixel dequantization stream.
pub const JITTER_SEED: u64 = 0x5eed;

/// Per-event warp coefficients: position plus the `dt`-scaled 2x3 flow basis.
///
/// Event coordinates are integers, so unwarped events all land exactly on
/// the pixel lattice and score higher than any small nonzero warp. Each
/// position is therefore spread uniformly over its pixel by a jitter drawn
/// from the event's own coordinates and [`JITTER_SEED`], which keeps the
/// objective independent of event order.
///
/// Counts are accumulated on a canvas that extends `margin` pixels past each
/// sensor edge, so events warped off the sensor keep their mass.
#[derive(Debug, Clone)]
pub struct WarpCache {
    width: usize,
    height: usize,
    margin: usize,
    rows: Vec<[f64; 8]>,
}

impl WarpCache {
    pub fn new<'a>(
        events: impl IntoIterator<Item = &'a Event>,
        t_ref: f64,
        intr: &CameraIntrinsics,
    ) -> Self {
        let rows = events
            .into_iter()
            .map(|e| {
                let mut rng = ChaCha8Rng::seed_from_u64(jitter_key(e));
                let x = e.x + rng.random_range(-0.5..0.5);
                let y = e.y + rng.random_range(-0.5..0.5);
                let [a, b] = flow_basis(x, y, intr);
                let dt = e.t - t_ref;
                [
                    x,
                    y,
                    a[0] * dt,
                    a[1] * dt,
                    a[2] * dt,
                    b[0] * dt,
                    b[1] * dt,
                    b[2] * dt,
                ]
            })
            .collect();
        Self {
            width: intr.width,
            height: intr.height,
            margin: 0,
            rows,
        }
    }

    /// Sets the canvas margin in pixels.
    pub fn with_margin(mut self, margin: usize) -> Self {
        self.margin = margin;
        self
    }

    pub fn margin(&self) -> usize {
        self.margin
    }

    pub fn from_window(w: &EventWindow, intr: &CameraIntrinsics) -> Self {
        Self::new(&w.events, w.t_ref, intr)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    #[inline]
    pub fn warped(&self, i: usize, o: &AngularVelocity3) -> (f64, f64) {
        let r = &self.rows[i];
        (
            r[0] - (r[2] * o.wx + r[3] * o.wy + r[4] * o.wz),
            r[1] - (r[5] * o.wx + r[6] * o.wy + r[7] * o.wz),
        )
    }
}

fn jitter_key(e: &Event) -> u64 {
    [e.x, e.y, e.t].iter().fold(JITTER_SEED, |h, v| {
        (h ^ v.to_bits()).wrapping_mul(0x9e37_79b9_7f4a_7c15).rotate_left(31)
    })
}

thread_local! {
    static SCRATCH: RefCell<Vec<f64>> = const { RefCell::new(Vec::new()) };
}

/// Calls `f` with the count image of the warped events.
///
/// The canvas is the sensor plus `margin` pixels per side plus a one-pixel
/// zero border, so the four bilinear corners never need bounds checks.
/// Events whose footprint lies entirely off the canvas are skipped.
fn with_counts<R>(cache: &WarpCache, omega: &AngularVelocity3, f: impl FnOnce(&[f64]) -> R) -> R {
    SCRATCH.with(|cell| {
        let mut counts = cell.borrow_mut();
        let m = cache.margin as f64;
        let stride = cache.width + 2 * cache.margin + 2;
        let n = stride * (cache.height + 2 * cache.margin + 2);
        if counts.len() != n {
            counts.clear();
            counts.resize(n, 0.0);
        }
        let (w, h) = (cache.width as f64, cache.height as f64);
        let (wx, wy, wz) = (omega.wx, omega.wy, omega.wz);
        let off = m + 1.0;
        for r in &cache.rows {
            let x = r[0] - (r[2] * wx + r[3] * wy + r[4] * wz);
            let y = r[1] - (r[5] * wx + r[6] * wy + r[7] * wz);
            if !(x > -1.0 - m && x < w + m && y > -1.0 - m && y < h + m) {
                continue;
            }
            let x0 = x.floor();
            let y0 = y.floor();
            let ax = x - x0;
            let ay = y - y0;
            let base = (y0 + off) as usize * stride + (x0 + off) as usize;
            counts[base] += (1.0 - ax) * (1.0 - ay);
            counts[base + 1] += ax * (1.0 - ay);
            counts[base + stride] += (1.0 - ax) * ay;
            counts[base + stride + 1] += ax * ay;
        }
        let out = f(&counts);
        counts.fill(0.0);
        out
    })
}

/// Contiguous runs of support pixels, as index ranges into the padded canvas.
///
/// A margin pixel belongs to the support when the nearest sensor pixel does.
fn support_spans(support: &PixelSet, margin: usize) -> Vec<(usize, usize)> {
    let (w, h) = (support.width(), support.height());
    let (cw, ch) = (w + 2 * margin, h + 2 * margin);
    let stride = cw + 2;
    let inside = |cx: usize, cy: usize| {
        let sx = cx.saturating_sub(margin).min(w - 1);
        let sy = cy.saturating_sub(margin).min(h - 1);
        support.contains(sy * w + sx)
    };
    let mut spans = Vec::new();
    for y in 0..ch {
        let mut x = 0;
        while x < cw {
            if !inside(x, y) {
                x += 1;
                continue;
            }
            let x_start = x;
            while x < cw && inside(x, y) {
                x += 1;
            }
            let off = (y + 1) * stride + 1;
            spans.push((off + x_start, off + x));
        }
    }
    spans
}

/// Round-half-up count.
#[inline]
fn round_count(c: f64) -> usize {
    (c + 0.5).floor() as usize
}

/// Objective bound to one event set and one pixel support.
#[derive(Debug, Clone)]
pub struct Objective {
    pub cache: WarpCache,
    pub support: PixelSet,
    pub table: NbTable,
    spans: Vec<(usize, usize)>,
    n_support: usize,
}

impl Objective {
    pub fn new(cache: WarpCache, support: PixelSet, params: NBParams) -> Result<Self> {
        Self::with_model(cache, support, params, CountModel::default())
    }

    pub fn with_model(
        cache: WarpCache,
        support: PixelSet,
        params: NBParams,
        model: CountModel,
    ) -> Result<Self> {
        if support.is_empty() {
            return Err(Error::EmptyRegion);
        }
        let max_k = cache.len() + 1;
        let table = NbTable::with_model(params, max_k, model)?;
        let spans = support_spans(&support, cache.margin);
        let n_support = spans.iter().map(|(a, b)| b - a).sum();
        Ok(Self {
            cache,
            support,
            table,
            spans,
            n_support,
        })
    }

    /// Builds the objective with parameters resolved from `nb` (moment
    /// matching uses the number of events and support pixels).
    pub fn with_config(cache: WarpCache, support: PixelSet, nb: &NbConfig) -> Result<Self> {
        if support.is_empty() {
            return Err(Error::EmptyRegion);
        }
        let params = nb.resolve(cache.len(), support.len())?;
        Self::with_model(cache, support, params, nb.counts)
    }

    pub fn params(&self) -> &NBParams {
        self.table.params()
    }

    /// Number of scored canvas pixels (the support plus its margin extension).
    pub fn n_support(&self) -> usize {
        self.n_support
    }

    /// Log-likelihood of the count image warped by `omega`.
    pub fn eval(&self, omega: &AngularVelocity3) -> f64 {
        let lp0 = self.table.get(0);
        with_counts(&self.cache, omega, |counts| {
            let mut excess = 0.0;
            match self.table.model() {
                CountModel::Continuous => {
                    let t = &self.table;
                    let base = t.fine[0];
                    for &(a, b) in &self.spans {
                        for &c in &counts[a..b] {
                            if c != 0.0 {
                                excess += t.continuous_excess(c, base);
                            }
                        }
                    }
                }
                CountModel::Nearest => {
                    for &(a, b) in &self.spans {
                        for &c in &counts[a..b] {
                            if c >= 0.5 {
                                excess += self.table.get(round_count(c)) - lp0;
                            }
                        }
                    }
                }
            }
            self.n_support as f64 * lp0 + excess
        })
    }

    pub fn eval2(&self, omega: AngularVelocity2) -> f64 {
        self.eval(&omega.to_3dof())
    }

    /// Inner log-likelihoods along direction `phi` at every grid magnitude.
    pub fn along_direction(&self, phi: f64, wz: f64, grid: &MagnitudeGrid) -> Vec<f64> {
        grid.values
            .par_iter()
            .map(|&m| self.eval(&omega_at(m, phi, wz)))
            .collect()
    }

    /// `log integral_0^m_max p(k | m, phi) dm` via trapezoid weights and log-sum-exp.
    pub fn marginal(&self, phi: f64, wz: f64, grid: &MagnitudeGrid) -> f64 {
        let inner = self.along_direction(phi, wz, grid);
        let lw = grid.log_weights();
        log_sum_exp(inner.iter().zip(&lw).map(|(l, w)| l + w))
    }

    /// Pixel-factorized marginal: each pixel integrates its own count over
    /// the magnitude grid before the product over pixels is taken.
    pub fn marginal_per_pixel(&self, phi: f64, wz: f64, grid: &MagnitudeGrid) -> f64 {
        let weights: Vec<f64> = grid.log_weights().iter().map(|w| w.exp()).collect();
        let p0 = self.table.get(0).exp();
        // Sparse per-grid-point lists of (pixel, probability difference to k = 0).
        let per_m: Vec<Vec<(usize, f64)>> = grid
            .values
            .par_iter()
            .map(|&m| {
                let o = omega_at(m, phi, wz);
                with_counts(&self.cache, &o, |counts| {
                    let mut v = Vec::new();
                    for &(a, b) in &self.spans {
                        for (i, &c) in counts[a..b].iter().enumerate() {
                            if c != 0.0 {
                                let d = self.table.score(c).exp() - p0;
                                if d != 0.0 {
                                    v.push((a + i, d));
                                }
                            }
                        }
                    }
                    v
                })
            })
            .collect();
        let mut acc: std::collections::BTreeMap<usize, f64> = std::collections::BTreeMap::new();
        for (list, w) in per_m.iter().zip(&weights) {
            for &(i, d) in list {
                *acc.entry(i).or_insert(0.0) += w * d;
            }
        }
        let base = grid.m_max * p0;
        let untouched = self.n_support - acc.len();
        let mut total = untouched as f64 * base.ln();
        for v in acc.values() {
            total += (base + v).max(f64::MIN_POSITIVE).ln();
        }
        total
    }
}

#[inline]
pub fn omega_at(m: f64, phi: f64, wz: f64) -> AngularVelocity3 {
    AngularVelocity3::new(m * phi.cos(), m * phi.sin(), wz)
}

/// Numerically stable `log(sum(exp(x)))`.
pub fn log_sum_exp(xs: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.into_iter().collect();
    let mx = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !mx.is_finite() {
        return mx;
    }
    mx + v.iter().map(|x| (x - mx).exp()).sum::<f64>().ln()
}

/// Log-likelihood of `w` warped by `omega`, summed over `support`.
///
/// `params = None` moment-matches `q` with the default dispersion.
pub fn window_log_likelihood(
    w: &EventWindow,
    omega: AngularVelocity2,
    support: &PixelSet,
    params: &NBParams,
    intr: &CameraIntrinsics,
) -> Result<f64> {
    if support.is_empty() {
        return Err(Error::EmptyRegion);
    }
    let margin = max_displacement(omega.m, 0.0, w.dt(), intr).ceil() as usize + 1;
    let obj = Objective::new(WarpCache::from_window(w, intr).with_margin(margin), support.clone(), *params)?;
    Ok(obj.eval2(omega))
}

/// Magnitude-marginalized log-likelihood along direction `phi`.
pub fn marginal_log_likelihood(
    w: &EventWindow,
    phi: f64,
    grid: &MagnitudeGrid,
    support: &PixelSet,
    params: &NBParams,
    intr: &CameraIntrinsics,
) -> Result<f64> {
    if support.is_empty() {
        return Err(Error::EmptyRegion);
    }
    let margin = max_displacement(grid.m_max, 0.0, w.dt(), intr).ceil() as usize + 1;
    let obj = Objective::new(WarpCache::from_window(w, intr).with_margin(margin), support.clone(), *params)?;
    Ok(obj.marginal(phi, 0.0, grid))
}
