//! Two-step region-wise alignment.
//!
//! 1. A single direction `phi` is chosen on the full frame by maximizing
//!    the magnitude-marginalized likelihood.
//! 2. Each region then gets its own magnitude `m` along that direction by
//!    maximizing the likelihood of its own events.
//!
//! Every region of one [`AlignmentResult`] therefore shares the same `phi`.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use rayon::prelude::*;

use crate::camera::CameraIntrinsics;
use crate::error::{Error, Result};
use crate::event::{Event, EventWindow};
use crate::likelihood::{auto_m_max, omega_at, MagnitudeGrid, NbConfig, Objective, WarpCache};
use crate::mask::{PixelSet, RegionMask};
use crate::optim::{argmax_first, golden_section_max};
use crate::warp::{derotate, max_displacement, wrap_angle, AngularVelocity2, AngularVelocity3, ImuSample};

/// How the direction objective integrates out the magnitude.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MarginalMode {
    /// Integrate the whole-frame likelihood over `m`.
    #[default]
    Joint,
    /// Integrate each pixel's likelihood over `m`, then multiply pixels.
    PerPixel,
}

/// Alignment settings.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignConfig {
    pub nb: NbConfig,
    /// Fixed `m_max` in rad/s; `None` derives it from the window.
    pub m_max: Option<f64>,
    pub grid_n: usize,
    pub phi_samples: usize,
    pub min_events: usize,
    /// Cap on objective evaluations during each golden-section refinement.
    pub max_refine_evals: usize,
    /// Direction refinement stops below this bracket width (rad).
    pub phi_tol: f64,
    pub marginal: MarginalMode,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            nb: NbConfig::default(),
            m_max: None,
            grid_n: 50,
            phi_samples: 36,
            min_events: 50,
            max_refine_evals: 50,
            phi_tol: 0.2_f64.to_radians(),
            marginal: MarginalMode::Joint,
        }
    }
}

impl AlignConfig {
    pub fn grid_for(&self, w: &EventWindow, intr: &CameraIntrinsics) -> Result<MagnitudeGrid> {
        let m_max = self.m_max.unwrap_or_else(|| auto_m_max(w, intr));
        MagnitudeGrid::new(m_max, self.grid_n)
    }
}

/// Per-region alignment outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionAlignment {
    pub m: f64,
    pub omega: AngularVelocity2,
    pub log_likelihood: f64,
    pub n_events: usize,
    pub converged: bool,
    /// Event-mass centroid of the region's events.
    pub centroid: Option<(f64, f64)>,
}

/// Alignment of one window.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentResult {
    pub t_start: f64,
    pub phi_global: f64,
    pub m_max: f64,
    pub imu_missing: bool,
    pub per_region: BTreeMap<u32, RegionAlignment>,
}

/// Refinement tolerance for magnitudes; never looser for more events.
pub fn magnitude_tolerance(m_max: f64, n_events: usize) -> f64 {
    let n = n_events.max(1) as f64;
    m_max * 1e-3 * (1000.0 / n).sqrt().clamp(1.0, 4.0)
}

fn check_count(n: usize, min_events: usize) -> Result<()> {
    if n < min_events.max(1) {
        return Err(Error::InsufficientEvents {
            found: n,
            required: min_events.max(1),
        });
    }
    Ok(())
}

fn direction_objective(
    obj: &Objective,
    phi: f64,
    wz: f64,
    grid: &MagnitudeGrid,
    mode: MarginalMode,
) -> f64 {
    match mode {
        MarginalMode::Joint => obj.marginal(phi, wz, grid),
        MarginalMode::PerPixel => obj.marginal_per_pixel(phi, wz, grid),
    }
}

/// Direction search on a prepared full-frame objective (rotation about z fixed at `wz`).
pub fn search_direction(obj: &Objective, wz: f64, grid: &MagnitudeGrid, cfg: &AlignConfig) -> f64 {
    let n = cfg.phi_samples.max(1);
    let step = TAU / n as f64;
    let coarse: Vec<f64> = (0..n)
        .map(|i| direction_objective(obj, i as f64 * step, wz, grid, cfg.marginal))
        .collect();
    let best = argmax_first(&coarse).unwrap_or(0);
    refine_direction(obj, wz, grid, cfg, best as f64 * step, Some(coarse[best]))
}

/// Golden-section refinement of the direction within one coarse step of `phi0`.
pub fn refine_direction(
    obj: &Objective,
    wz: f64,
    grid: &MagnitudeGrid,
    cfg: &AlignConfig,
    phi0: f64,
    f0: Option<f64>,
) -> f64 {
    let step = TAU / cfg.phi_samples.max(1) as f64;
    let f0 = f0.unwrap_or_else(|| direction_objective(obj, phi0, wz, grid, cfg.marginal));
    let refined = golden_section_max(
        |phi| direction_objective(obj, phi, wz, grid, cfg.marginal),
        phi0 - step,
        phi0 + step,
        cfg.phi_tol,
        cfg.max_refine_evals,
        Some((phi0, f0)),
    );
    wrap_angle(refined.x)
}

/// Global direction from the marginal likelihood over the full frame.
pub fn estimate_direction(
    w: &EventWindow,
    grid: &MagnitudeGrid,
    cfg: &AlignConfig,
    intr: &CameraIntrinsics,
) -> Result<f64> {
    check_count(w.len(), cfg.min_events)?;
    let obj = Objective::with_config(
        WarpCache::from_window(w, intr).with_margin(canvas_margin(grid.m_max, 0.0, w.dt(), intr)),
        PixelSet::full(intr.width, intr.height),
        &cfg.nb,
    )?;
    Ok(search_direction(&obj, 0.0, grid, cfg))
}

/// Magnitude estimate for one region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MagnitudeEstimate {
    pub m: f64,
    pub log_likelihood: f64,
    pub evals: usize,
}

/// 1-D magnitude search on a prepared objective: coarse grid, then
/// golden-section refinement around the best grid point.
pub fn search_magnitude(
    obj: &Objective,
    phi: f64,
    wz: f64,
    grid: &MagnitudeGrid,
    tol: f64,
    max_refine_evals: usize,
) -> MagnitudeEstimate {
    let coarse = obj.along_direction(phi, wz, grid);
    let i = argmax_first(&coarse).unwrap_or(0);
    let lo = grid.values[i.saturating_sub(1)];
    let hi = grid.values[(i + 1).min(grid.n() - 1)];
    let refined = golden_section_max(
        |m| obj.eval(&omega_at(m, phi, wz)),
        lo,
        hi,
        tol,
        max_refine_evals,
        Some((grid.values[i], coarse[i])),
    );
    MagnitudeEstimate {
        m: refined.x.max(0.0),
        log_likelihood: refined.f,
        evals: grid.n() + refined.evals,
    }
}

/// Pixels within reach of a region's events for any magnitude up to `m_max`.
pub fn magnitude_support(
    region: &PixelSet,
    m_max: f64,
    dt: f64,
    intr: &CameraIntrinsics,
) -> PixelSet {
    region.dilate(canvas_margin(m_max, 0.0, dt, intr))
}

/// Canvas margin (pixels) covering every warp up to the given rates.
pub fn canvas_margin(m_max: f64, wz_max: f64, dt: f64, intr: &CameraIntrinsics) -> usize {
    max_displacement(m_max, wz_max, dt, intr).ceil() as usize + 1
}

fn events_in(w: &EventWindow, region: &PixelSet) -> Vec<Event> {
    w.events
        .iter()
        .filter(|e| {
            e.pixel(region.width(), region.height())
                .is_some_and(|(x, y)| region.contains(y * region.width() + x))
        })
        .copied()
        .collect()
}

fn centroid(events: &[Event]) -> Option<(f64, f64)> {
    if events.is_empty() {
        return None;
    }
    let n = events.len() as f64;
    let (sx, sy) = events.iter().fold((0.0, 0.0), |a, e| (a.0 + e.x, a.1 + e.y));
    Some((sx / n, sy / n))
}

/// Magnitude along `phi` maximizing the likelihood of the region's own events.
pub fn estimate_magnitude(
    w: &EventWindow,
    phi: f64,
    region: &PixelSet,
    grid: &MagnitudeGrid,
    cfg: &AlignConfig,
    intr: &CameraIntrinsics,
) -> Result<MagnitudeEstimate> {
    if region.is_empty() {
        return Err(Error::EmptyRegion);
    }
    let events = events_in(w, region);
    check_count(events.len(), cfg.min_events)?;
    let margin = canvas_margin(grid.m_max, 0.0, w.dt(), intr);
    let support = region.dilate(margin);
    let cache = WarpCache::new(&events, w.t_ref, intr).with_margin(margin);
    let obj = Objective::with_config(cache, support, &cfg.nb)?;
    Ok(search_magnitude(
        &obj,
        phi,
        0.0,
        grid,
        magnitude_tolerance(grid.m_max, events.len()),
        cfg.max_refine_evals,
    ))
}

/// Full two-step alignment of one window.
///
/// IMU samples, when given, are removed first. Regions with too few events
/// are reported unconverged with `m = 0`; they never abort the window.
pub fn align_window(
    w: &EventWindow,
    mask: &RegionMask,
    imu: Option<&[ImuSample]>,
    cfg: &AlignConfig,
    intr: &CameraIntrinsics,
) -> Result<AlignmentResult> {
    if mask.width() != intr.width || mask.height() != intr.height {
        return Err(Error::Validation(format!(
            "mask is {}x{}, sensor is {}x{}",
            mask.width(),
            mask.height(),
            intr.width,
            intr.height
        )));
    }
    let (win, imu_missing) = match imu {
        Some(samples) => {
            let d = derotate(w, samples, intr)?;
            (d.window, d.imu_missing)
        }
        None => (w.clone(), true),
    };
    let grid = cfg.grid_for(&win, intr)?;
    let phi = estimate_direction(&win, &grid, cfg, intr)?;

    let ids: Vec<u32> = mask.region_ids().collect();
    let per_region: BTreeMap<u32, RegionAlignment> = ids
        .par_iter()
        .map(|&id| {
            let region = mask.pixel_set(id).expect("id from mask");
            let events = events_in(&win, &region);
            let c = centroid(&events);
            let entry = match estimate_magnitude(&win, phi, &region, &grid, cfg, intr) {
                Ok(est) => RegionAlignment {
                    m: est.m,
                    omega: AngularVelocity2 { m: est.m, phi },
                    log_likelihood: est.log_likelihood,
                    n_events: events.len(),
                    converged: true,
                    centroid: c,
                },
                Err(e) => {
                    log::debug!("region {id} at t={}: {e}", w.t_start);
                    RegionAlignment {
                        m: 0.0,
                        omega: AngularVelocity2 { m: 0.0, phi },
                        log_likelihood: f64::NEG_INFINITY,
                        n_events: events.len(),
                        converged: false,
                        centroid: c,
                    }
                }
            };
            (id, entry)
        })
        .collect();

    Ok(AlignmentResult {
        t_start: w.t_start,
        phi_global: phi,
        m_max: grid.m_max,
        imu_missing,
        per_region,
    })
}

/// Settings for full three-axis rotation estimation.
#[derive(Debug, Clone, PartialEq)]
pub struct Align3Config {
    pub base: AlignConfig,
    pub wz_samples: usize,
    /// Half-range of the `wz` scan; `None` uses the window's `m_max`.
    pub wz_max: Option<f64>,
}

impl Default for Align3Config {
    fn default() -> Self {
        Self {
            base: AlignConfig::default(),
            wz_samples: 11,
            wz_max: None,
        }
    }
}

/// Full-frame three-axis angular velocity of a window.
///
/// The two-axis search (direction then magnitude) runs nested inside a
/// coarse scan over `wz` followed by golden-section refinement of `wz`.
pub fn align_window_3dof(
    w: &EventWindow,
    cfg: &Align3Config,
    intr: &CameraIntrinsics,
) -> Result<(AngularVelocity3, f64)> {
    let base = &cfg.base;
    check_count(w.len(), base.min_events)?;
    let grid = base.grid_for(w, intr)?;
    let wz_max = cfg.wz_max.unwrap_or(grid.m_max);
    let n = cfg.wz_samples.max(1);
    // the refinement bracket reaches one coarse step past the scan
    let wz_reach = if n == 1 { 0.0 } else { wz_max * (1.0 + 2.0 / (n - 1) as f64) };
    let obj = Objective::with_config(
        WarpCache::from_window(w, intr).with_margin(canvas_margin(grid.m_max, wz_reach, w.dt(), intr)),
        PixelSet::full(intr.width, intr.height),
        &base.nb,
    )?;
    let tol = magnitude_tolerance(grid.m_max, w.len());
    // Two-axis search at fixed `wz`; with a direction hint only the local
    // refinement runs.
    let inner = |wz: f64, hint: Option<f64>| -> (AngularVelocity3, f64) {
        let phi = match hint {
            None => search_direction(&obj, wz, &grid, base),
            Some(phi0) => refine_direction(&obj, wz, &grid, base, phi0, None),
        };
        let est = search_magnitude(&obj, phi, wz, &grid, tol, base.max_refine_evals);
        (omega_at(est.m, phi, wz), est.log_likelihood)
    };

    if n == 1 {
        return Ok(inner(0.0, None));
    }
    let wz_values: Vec<f64> = (0..n)
        .map(|i| -wz_max + 2.0 * wz_max * i as f64 / (n - 1) as f64)
        .collect();
    let coarse: Vec<(AngularVelocity3, f64)> = wz_values.iter().map(|&wz| inner(wz, None)).collect();
    let scores: Vec<f64> = coarse.iter().map(|c| c.1).collect();
    let i = argmax_first(&scores).unwrap_or(0);
    let step = 2.0 * wz_max / (n - 1) as f64;
    let hint = coarse[i].0.wy.atan2(coarse[i].0.wx);
    let mut best = coarse[i];
    golden_section_max(
        |wz| {
            let r = inner(wz, Some(hint));
            if r.1 > best.1 {
                best = r;
            }
            r.1
        },
        wz_values[i] - step,
        wz_values[i] + step,
        tol,
        base.max_refine_evals,
        Some((wz_values[i], coarse[i].1)),
    );
    Ok(best)
}
