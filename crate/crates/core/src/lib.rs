//! Per-region relative depth and angular velocity from event streams by
//! maximizing the likelihood of rotationally warped event counts.
//!
//! A window of events is warped with a two-axis rotation `(m, phi)`; the
//! resulting count image is scored under a negative-binomial model. The
//! direction `phi` is shared by the whole frame, the magnitude `m` is found
//! per region, and ratios of the implied flows give relative distances.

pub mod align;
pub mod camera;
pub mod count;
pub mod dataio;
pub mod depth;
pub mod error;
pub mod event;
pub mod likelihood;
pub mod mask;
pub mod metrics;
pub mod optim;
pub mod synth;
pub mod warp;

pub use align::{align_window, align_window_3dof, Align3Config, AlignConfig, AlignmentResult, MarginalMode, RegionAlignment};
pub use camera::CameraIntrinsics;
pub use count::CountImage;
pub use depth::{estimate_window_depth, relative_distance, track_predict, track_update, DepthReport, DistanceTrack};
pub use error::{Error, Result};
pub use event::{slice_windows, slice_windows_by_count, Event, EventWindow};
pub use likelihood::{nb_log_pmf, MagnitudeGrid, NBParams, NbConfig};
pub use mask::RegionMask;
pub use warp::{rot_flow, warp_window, AngularVelocity2, AngularVelocity3, FlowVector, ImuSample};
