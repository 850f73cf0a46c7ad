//! Relative distance from compensatory rotational flow, and per-region
//! 1-D Kalman tracking of that distance.
//!
//! Under a fronto-parallel plane with no motion along the optical axis the
//! rotational flow that stabilizes a region scales with inverse depth, so
//! two regions' flows give `d = z / z_ref = (v_ref . v) / |v|^2`.

use std::collections::BTreeMap;

use crate::align::AlignmentResult;
use crate::camera::CameraIntrinsics;
use crate::error::{Error, Result};
use crate::mask::RegionMask;
use crate::warp::{rot_flow, FlowVector};

/// Flows below this norm (pixels/s) are treated as "no motion".
pub const EPS_FLOW: f64 = 1e-3;
/// Variance the reference track is pinned to.
pub const REFERENCE_VAR: f64 = 1e-4;

/// Stabilizing flow of one region, evaluated at its event centroid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionFlow {
    pub region_id: u32,
    pub centroid: (f64, f64),
    pub v_r: FlowVector,
}

/// Gaussian belief over one region's relative distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceTrack {
    pub region_id: u32,
    pub d: f64,
    pub var: f64,
    pub last_update: f64,
}

/// Converged region with the most mask pixels; ties go to the smaller id.
pub fn select_reference(mask: &RegionMask, result: &AlignmentResult) -> Result<u32> {
    result
        .per_region
        .iter()
        .filter(|(_, r)| r.converged)
        .map(|(&id, _)| (id, mask.region_size(id)))
        // BTreeMap iterates ids ascending, so keep the first maximum.
        .fold(None, |best: Option<(u32, usize)>, (id, size)| match best {
            Some((_, s)) if s >= size => best,
            _ => Some((id, size)),
        })
        .map(|(id, _)| id)
        .ok_or(Error::NoConvergedRegion)
}

/// `d = (v_ref . v) / |v|^2`, the pseudo-inverse contraction of two flows.
pub fn relative_distance(v_r: FlowVector, v_r_ref: FlowVector) -> Result<f64> {
    let n2 = v_r.dot(&v_r);
    if n2.sqrt() <= EPS_FLOW {
        return Err(Error::DegenerateFlow(n2.sqrt()));
    }
    Ok(v_r_ref.dot(&v_r) / n2)
}

/// Constant-distance prediction: variance grows by `sigma_proc^2`.
pub fn track_predict(track: &DistanceTrack, sigma_proc: f64) -> DistanceTrack {
    DistanceTrack {
        var: track.var + sigma_proc * sigma_proc,
        ..*track
    }
}

/// Outcome of [`track_update`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UpdateOutcome {
    Updated(DistanceTrack),
    /// The measurement was rejected; the track was coasted one predict step.
    Coasted(DistanceTrack),
}

impl UpdateOutcome {
    pub fn track(&self) -> DistanceTrack {
        match *self {
            UpdateOutcome::Updated(t) | UpdateOutcome::Coasted(t) => t,
        }
    }
}

/// Scalar Kalman update with measurement variance `1 / |v_r|^2`.
///
/// A non-positive or non-finite measurement is rejected and the track is
/// coasted by one predict step of `sigma_proc`.
pub fn track_update(
    track: &DistanceTrack,
    z: f64,
    v_r: FlowVector,
    sigma_proc: f64,
    t: f64,
) -> UpdateOutcome {
    if !(z > 0.0 && z.is_finite()) {
        return UpdateOutcome::Coasted(track_predict(track, sigma_proc));
    }
    let speed = v_r.norm().max(EPS_FLOW);
    let r = 1.0 / (speed * speed);
    let k = track.var / (track.var + r);
    UpdateOutcome::Updated(DistanceTrack {
        region_id: track.region_id,
        d: track.d + k * (z - track.d),
        var: (1.0 - k) * track.var,
        last_update: t,
    })
}

/// Per-region line of a depth report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionDepth {
    pub region_id: u32,
    pub phi: f64,
    pub m: f64,
    pub d_meas: Option<f64>,
    pub d_track: Option<f64>,
    pub var: Option<f64>,
    pub converged: bool,
    pub coasted: bool,
    pub is_reference: bool,
}

/// Depth results for one window.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthReport {
    pub t_start: f64,
    pub reference: Option<u32>,
    pub regions: BTreeMap<u32, RegionDepth>,
}

/// Compensatory flow at each converged region's event centroid.
pub fn region_flows(result: &AlignmentResult, intr: &CameraIntrinsics) -> BTreeMap<u32, RegionFlow> {
    result
        .per_region
        .iter()
        .filter(|(_, r)| r.converged)
        .filter_map(|(&id, r)| {
            let c = r.centroid?;
            Some((
                id,
                RegionFlow {
                    region_id: id,
                    centroid: c,
                    v_r: rot_flow(r.omega.to_3dof(), c.0, c.1, intr),
                },
            ))
        })
        .collect()
}

/// Per-session tracker state: one track per region id.
#[derive(Debug, Clone, Default)]
pub struct DepthTracker {
    pub tracks: BTreeMap<u32, DistanceTrack>,
    pub sigma_proc: f64,
}

impl DepthTracker {
    pub fn new(sigma_proc: f64) -> Self {
        Self {
            tracks: BTreeMap::new(),
            sigma_proc,
        }
    }

    pub fn step(
        &mut self,
        result: &AlignmentResult,
        mask: &RegionMask,
        intr: &CameraIntrinsics,
    ) -> DepthReport {
        estimate_window_depth(result, mask, intr, &mut self.tracks, self.sigma_proc)
    }
}

/// Measures every converged region against the reference and advances the tracks.
///
/// Regions without a usable measurement (unconverged, degenerate flow or a
/// non-positive ratio) are coasted on prediction. The reference track is
/// pinned to `d = 1` with variance [`REFERENCE_VAR`].
pub fn estimate_window_depth(
    result: &AlignmentResult,
    mask: &RegionMask,
    intr: &CameraIntrinsics,
    tracks: &mut BTreeMap<u32, DistanceTrack>,
    sigma_proc: f64,
) -> DepthReport {
    let t = result.t_start;
    let flows = region_flows(result, intr);
    let reference = select_reference(mask, result)
        .ok()
        .filter(|id| flows.contains_key(id));

    let mut regions = BTreeMap::new();
    for (&id, r) in &result.per_region {
        let mut line = RegionDepth {
            region_id: id,
            phi: r.omega.phi,
            m: r.m,
            d_meas: None,
            d_track: None,
            var: None,
            converged: r.converged,
            coasted: false,
            is_reference: Some(id) == reference,
        };

        if Some(id) == reference {
            let pinned = DistanceTrack {
                region_id: id,
                d: 1.0,
                var: REFERENCE_VAR,
                last_update: t,
            };
            tracks.insert(id, pinned);
            line.d_meas = Some(1.0);
            line.d_track = Some(1.0);
            line.var = Some(REFERENCE_VAR);
            regions.insert(id, line);
            continue;
        }

        let measurement = match (reference.and_then(|rid| flows.get(&rid)), flows.get(&id)) {
            (Some(rf), Some(f)) => relative_distance(f.v_r, rf.v_r).ok().map(|d| (d, f.v_r)),
            _ => None,
        };
        if let Some((d, _)) = measurement {
            line.d_meas = Some(d);
            if d <= 0.0 {
                log::info!("region {id} at t={t}: opposing flow (d = {d}), not tracked");
            }
        }

        let next = match (tracks.get(&id), measurement) {
            (None, Some((d, v))) if d > 0.0 && d.is_finite() => {
                let speed = v.norm();
                Some(DistanceTrack {
                    region_id: id,
                    d,
                    var: 1.0 / (speed * speed),
                    last_update: t,
                })
            }
            (None, _) => None,
            (Some(tr), Some((d, v))) if d > 0.0 && d.is_finite() => {
                let predicted = track_predict(tr, sigma_proc);
                Some(track_update(&predicted, d, v, sigma_proc, t).track())
            }
            (Some(tr), _) => {
                line.coasted = true;
                Some(track_predict(tr, sigma_proc))
            }
        };
        if let Some(tr) = next {
            tracks.insert(id, tr);
            line.d_track = Some(tr.d);
            line.var = Some(tr.var);
        }
        regions.insert(id, line);
    }

    DepthReport {
        t_start: t,
        reference,
        regions,
    }
}
