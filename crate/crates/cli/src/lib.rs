//! Command implementations behind the `evalign` binary.
//!
//! Every command reads the plain-text formats of [`evalign_core::dataio`]
//! and writes CSV files whose first lines are `#` comments echoing the
//! version, command, inputs, seed and full configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use evalign_core::align::{
    align_window, align_window_3dof, Align3Config, AlignConfig, AlignmentResult, MarginalMode, RegionAlignment,
};
use evalign_core::camera::CameraIntrinsics;
use evalign_core::dataio::{self, EventStream, GtDepths, MaskSequence};
use evalign_core::depth::{DepthReport, DepthTracker};
use evalign_core::event::{slice_windows, slice_windows_by_count, EventWindow};
use evalign_core::likelihood::{CountModel, NbConfig, DEFAULT_R};
use evalign_core::mask::RegionMask;
use evalign_core::metrics::{angvel_metrics, depth_metrics_pairs, AngVelMetrics, DepthMetrics};
use evalign_core::synth::{self, MotionSpec, SceneSpec, SynthOptions};
use evalign_core::warp::{AngularVelocity2, AngularVelocity3, ImuIntegrator, ImuSample};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "EVALIGN_THREADS";

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad arguments or unreadable/invalid input files.
    #[error("{0}")]
    Input(String),
    /// Inputs were fine but nothing could be estimated.
    #[error("{0}")]
    NoResult(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::NoResult(_) => 3,
        }
    }
}

impl From<evalign_core::Error> for CliError {
    fn from(e: evalign_core::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn input(msg: impl Into<String>) -> CliError {
    CliError::Input(msg.into())
}

/// Pipeline settings shared by all commands.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Window length (s).
    pub dt: f64,
    /// Fixed event count per window instead of fixed duration.
    pub window_events: Option<usize>,
    pub sigma_proc: f64,
    pub nb_r: f64,
    /// `None` moment-matches `q`.
    pub nb_q: Option<f64>,
    pub counts: CountModel,
    pub marginal: MarginalMode,
    /// `None` derives `m_max` per window.
    pub m_max: Option<f64>,
    pub grid_n: usize,
    pub phi_samples: usize,
    pub min_events: usize,
    pub wz_samples: usize,
    /// Hot-pixel rate threshold (events/s); `None` disables filtering.
    pub hot_thresh: Option<f64>,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dt: 0.05,
            window_events: None,
            sigma_proc: 0.1,
            nb_r: DEFAULT_R,
            nb_q: None,
            counts: CountModel::default(),
            marginal: MarginalMode::default(),
            m_max: None,
            grid_n: 50,
            phi_samples: 36,
            min_events: 50,
            wz_samples: 11,
            hot_thresh: None,
            seed: 0,
        }
    }
}

fn opt<T: std::fmt::Display>(v: &Option<T>, none: &str) -> String {
    v.as_ref().map_or_else(|| none.to_string(), |x| x.to_string())
}

impl RunConfig {
    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: &str| Err(input(m));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("--dt must be > 0");
        }
        if self.window_events == Some(0) {
            return bad("--window-events must be > 0");
        }
        if !(self.sigma_proc >= 0.0 && self.sigma_proc.is_finite()) {
            return bad("--sigma-proc must be >= 0");
        }
        if !(self.nb_r > 0.0 && self.nb_r.is_finite()) {
            return bad("--nb-r must be > 0");
        }
        if let Some(q) = self.nb_q {
            if !(q > 0.0 && q < 1.0) {
                return bad("--nb-q must be in (0, 1)");
            }
        }
        if let Some(m) = self.m_max {
            if !(m > 0.0 && m.is_finite()) {
                return bad("--m-max must be > 0");
            }
        }
        if self.grid_n < 2 {
            return bad("--grid-n must be >= 2");
        }
        if self.phi_samples < 3 {
            return bad("--phi-samples must be >= 3");
        }
        if self.wz_samples == 0 {
            return bad("--wz-samples must be >= 1");
        }
        if let Some(h) = self.hot_thresh {
            if !(h > 0.0 && h.is_finite()) {
                return bad("--hot-thresh must be > 0");
            }
        }
        Ok(())
    }

    pub fn align_config(&self) -> AlignConfig {
        AlignConfig {
            nb: NbConfig {
                r: self.nb_r,
                q: self.nb_q,
                counts: self.counts,
            },
            m_max: self.m_max,
            grid_n: self.grid_n,
            phi_samples: self.phi_samples,
            min_events: self.min_events,
            marginal: self.marginal,
            ..AlignConfig::default()
        }
    }

    pub fn align3_config(&self) -> Align3Config {
        Align3Config {
            base: self.align_config(),
            wz_samples: self.wz_samples,
            wz_max: None,
        }
    }

    /// Single-line `key=value` echo of every setting.
    pub fn describe(&self) -> String {
        format!(
            "dt={} window_events={} sigma_proc={} nb_r={} nb_q={} counts={} marginal={} m_max={} \
             grid_n={} phi_samples={} min_events={} wz_samples={} hot_thresh={}",
            self.dt,
            opt(&self.window_events, "none"),
            self.sigma_proc,
            self.nb_r,
            opt(&self.nb_q, "auto"),
            match self.counts {
                CountModel::Nearest => "nearest",
                CountModel::Continuous => "continuous",
            },
            match self.marginal {
                MarginalMode::Joint => "joint",
                MarginalMode::PerPixel => "per-pixel",
            },
            opt(&self.m_max, "auto"),
            self.grid_n,
            self.phi_samples,
            self.min_events,
            self.wz_samples,
            opt(&self.hot_thresh, "none"),
        )
    }

    /// Reproducibility header for output files.
    pub fn header(&self, command: &str, inputs: &[(&str, String)]) -> String {
        let mut h = String::new();
        let _ = writeln!(h, "# evalign {VERSION}");
        let _ = writeln!(h, "# command: {command}");
        for (k, v) in inputs {
            let _ = writeln!(h, "# {k}: {v}");
        }
        let _ = writeln!(h, "# seed: {}", self.seed);
        let _ = writeln!(h, "# config: {}", self.describe());
        h
    }
}

/// Caps the global rayon pool at `EVALIGN_THREADS` when set.
pub fn configure_threads() -> CliResult<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .map_err(|_| input(format!("{THREADS_ENV} must be a positive integer, got '{v}'")))?;
    if n == 0 {
        return Err(input(format!("{THREADS_ENV} must be a positive integer")));
    }
    // A second call in the same process keeps the first pool.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

// ---------------------------------------------------------------- inputs

/// Scene file: camera intrinsics plus the scene description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFile {
    pub camera: CameraIntrinsics,
    #[serde(flatten)]
    pub scene: SceneSpec,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| input(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| input(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| input(format!("{}: {e}", path.display())))
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| input(format!("{}: {e}", dir.display())))
}

/// Where camera intrinsics come from.
#[derive(Debug, Clone, PartialEq)]
pub enum CameraSource {
    /// JSON file with `fx, fy, cx, cy, width, height`.
    File(PathBuf),
    /// Focal length in pixels; principal point at the sensor center.
    Focal(f64),
}

impl CameraSource {
    fn resolve(&self, width: usize, height: usize) -> CliResult<CameraIntrinsics> {
        let intr = match self {
            CameraSource::File(p) => read_json::<CameraIntrinsics>(p)?,
            CameraSource::Focal(f) => CameraIntrinsics::centered(*f, width, height)?,
        };
        intr.validate()?;
        if intr.width != width || intr.height != height {
            return Err(input(format!(
                "camera is {}x{} but events are {}x{}",
                intr.width, intr.height, width, height
            )));
        }
        Ok(intr)
    }

    fn describe(&self) -> String {
        match self {
            CameraSource::File(p) => p.display().to_string(),
            CameraSource::Focal(f) => format!("focal={f}"),
        }
    }
}

/// Region definition for the depth command.
#[derive(Debug, Clone, PartialEq)]
pub enum MaskSource {
    File(PathBuf),
    Honeycomb { radius: f64 },
}

impl MaskSource {
    /// Parses `honeycomb:r=<px>` or a file path.
    pub fn parse(s: &str) -> CliResult<Self> {
        match s.strip_prefix("honeycomb:") {
            Some(rest) => {
                let r = rest
                    .strip_prefix("r=")
                    .and_then(|v| v.parse::<f64>().ok())
                    .ok_or_else(|| input(format!("bad honeycomb spec '{s}', expected honeycomb:r=<px>")))?;
                Ok(MaskSource::Honeycomb { radius: r })
            }
            None => Ok(MaskSource::File(PathBuf::from(s))),
        }
    }

    fn describe(&self) -> String {
        match self {
            MaskSource::File(p) => p.display().to_string(),
            MaskSource::Honeycomb { radius } => format!("honeycomb:r={radius}"),
        }
    }
}

fn load_events(path: &Path, cfg: &RunConfig) -> CliResult<EventStream> {
    let mut s = dataio::read_events(path)?;
    if let Some(th) = cfg.hot_thresh {
        let before = s.events.len();
        s.events = dataio::filter_hot_pixels(&s.events, s.width, s.height, th);
        log::info!("hot-pixel filter removed {} events", before - s.events.len());
    }
    Ok(s)
}

fn make_windows(s: &EventStream, cfg: &RunConfig) -> CliResult<Vec<EventWindow>> {
    let w = match cfg.window_events {
        Some(n) => slice_windows_by_count(&s.events, n)?,
        None => slice_windows(&s.events, cfg.dt)?,
    };
    Ok(w)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

// ---------------------------------------------------------------- synth

/// Files written by [`cmd_synth`].
#[derive(Debug, Clone, PartialEq)]
pub struct SynthFiles {
    pub events: PathBuf,
    pub masks: PathBuf,
    pub imu: PathBuf,
    pub gt_depth: PathBuf,
    pub camera: PathBuf,
    pub n_events: usize,
}

pub const EVENTS_FILE: &str = "events.txt";
pub const MASKS_FILE: &str = "masks.txt";
pub const IMU_FILE: &str = "imu.txt";
pub const GT_DEPTH_FILE: &str = "gt_depth.txt";
pub const CAMERA_FILE: &str = "camera.json";

/// Generates a synthetic dataset into `out_dir`.
pub fn cmd_synth(scene_path: &Path, motion_path: &Path, out_dir: &Path, cfg: &RunConfig) -> CliResult<SynthFiles> {
    cfg.validate()?;
    let scene: SceneFile = read_json(scene_path)?;
    let motion: MotionSpec = read_json(motion_path)?;
    synth_to_dir(&scene, &motion, out_dir, cfg)
}

/// [`cmd_synth`] on already parsed specs.
pub fn synth_to_dir(scene: &SceneFile, motion: &MotionSpec, out_dir: &Path, cfg: &RunConfig) -> CliResult<SynthFiles> {
    let opts = SynthOptions {
        window_dt: cfg.dt,
        ..SynthOptions::default()
    };
    let out = synth::generate_with(&scene.scene, motion, &scene.camera, cfg.seed, &opts)?;
    ensure_dir(out_dir)?;
    let files = SynthFiles {
        events: out_dir.join(EVENTS_FILE),
        masks: out_dir.join(MASKS_FILE),
        imu: out_dir.join(IMU_FILE),
        gt_depth: out_dir.join(GT_DEPTH_FILE),
        camera: out_dir.join(CAMERA_FILE),
        n_events: out.events.len(),
    };
    let stream = EventStream {
        width: out.width,
        height: out.height,
        events: out.events,
    };
    dataio::write_events(&files.events, &stream)?;
    dataio::write_masks(&files.masks, &out.masks)?;
    dataio::write_imu(&files.imu, &out.imu)?;
    dataio::write_gt_depths(&files.gt_depth, &out.depths)?;
    let cam = serde_json::to_string_pretty(&scene.camera).map_err(|e| input(e.to_string()))?;
    write_file(&files.camera, &(cam + "\n"))?;
    Ok(files)
}

// ---------------------------------------------------------------- depth

#[derive(Debug, Clone, PartialEq)]
pub struct DepthArgs {
    pub events: PathBuf,
    pub mask: MaskSource,
    pub camera: CameraSource,
    pub imu: Option<PathBuf>,
    pub gt: Option<PathBuf>,
    /// Per-window plane labels used to derive ground truth for honeycomb cells.
    pub gt_mask: Option<PathBuf>,
    pub out: PathBuf,
}

pub const DEPTH_CSV: &str = "depth.csv";
pub const DEPTH_METRICS_CSV: &str = "depth_metrics.csv";
pub const DEPTH_COLUMNS: &str = "t_start,region_id,phi,m,d_meas,d_track,var,converged";
pub const DEPTH_METRICS_COLUMNS: &str = "window,t_start,n,rmse_lin,rmse_log,ard,srd,delta1,delta2,delta3";

#[derive(Debug, Clone, PartialEq)]
pub struct DepthSummary {
    pub reports: Vec<DepthReport>,
    /// Aggregate metrics over all windows, when ground truth was supplied.
    pub aggregate: Option<DepthMetrics>,
    pub per_window: Vec<(f64, Option<DepthMetrics>)>,
    pub results_csv: PathBuf,
    pub metrics_csv: Option<PathBuf>,
}

/// Ground-truth label of a region: the most common non-background label
/// under it in `gt_mask` (ties to the smaller label).
fn majority_label(region: &[usize], gt_mask: &RegionMask) -> Option<u32> {
    let mut votes: BTreeMap<u32, usize> = BTreeMap::new();
    for &i in region {
        let l = gt_mask.labels()[i];
        if l != 0 {
            *votes.entry(l).or_insert(0) += 1;
        }
    }
    let mut best: Option<(u32, usize)> = None;
    for (l, c) in votes {
        if best.is_none_or(|(_, bc)| c > bc) {
            best = Some((l, c));
        }
    }
    let (l, c) = best?;
    (2 * c > region.len()).then_some(l)
}

/// Relative ground-truth distance of each region against the report's reference.
fn gt_relative(
    report: &DepthReport,
    mask: &RegionMask,
    depths: &BTreeMap<u32, f64>,
    gt_mask: Option<&RegionMask>,
) -> BTreeMap<u32, f64> {
    let z_of = |id: u32| -> Option<f64> {
        match gt_mask {
            None => depths.get(&id).copied(),
            Some(g) => majority_label(mask.pixels(id)?, g).and_then(|l| depths.get(&l).copied()),
        }
    };
    let Some(z_ref) = report.reference.and_then(z_of) else {
        return BTreeMap::new();
    };
    report
        .regions
        .keys()
        .filter_map(|&id| z_of(id).map(|z| (id, z / z_ref)))
        .collect()
}

fn gt_for_window(gt: &GtDepths, t: f64) -> Option<&BTreeMap<u32, f64>> {
    let i = gt.partition_point(|(s, _)| *s <= t + 1e-9);
    gt.get(i.checked_sub(1)?).map(|(_, m)| m)
}

/// Per-window, per-region relative distance estimation.
pub fn cmd_depth(args: &DepthArgs, cfg: &RunConfig) -> CliResult<DepthSummary> {
    cfg.validate()?;
    let stream = load_events(&args.events, cfg)?;
    let intr = args.camera.resolve(stream.width, stream.height)?;
    let masks: MaskSequence = match &args.mask {
        MaskSource::File(p) => dataio::read_masks(p)?,
        MaskSource::Honeycomb { radius } => {
            vec![(0.0, dataio::honeycomb_mask(stream.width, stream.height, *radius)?)]
        }
    };
    if masks.is_empty() {
        return Err(input("mask file holds no masks"));
    }
    for (_, m) in &masks {
        if m.width() != stream.width || m.height() != stream.height {
            return Err(input(format!(
                "mask is {}x{} but events are {}x{}",
                m.width(),
                m.height(),
                stream.width,
                stream.height
            )));
        }
    }
    let imu: Option<Vec<ImuSample>> = args.imu.as_ref().map(dataio::read_imu).transpose()?;
    let gt: Option<GtDepths> = args.gt.as_ref().map(dataio::read_gt_depths).transpose()?;
    let gt_masks: Option<MaskSequence> = args.gt_mask.as_ref().map(dataio::read_masks).transpose()?;
    if gt.is_some() && matches!(args.mask, MaskSource::Honeycomb { .. }) && gt_masks.is_none() {
        return Err(input("ground truth with a honeycomb mask needs --gt-mask"));
    }

    let align_cfg = cfg.align_config();
    let windows = make_windows(&stream, cfg)?;
    let mut tracker = DepthTracker::new(cfg.sigma_proc);
    let mut reports = Vec::with_capacity(windows.len());
    let mut per_window = Vec::new();
    let mut all_pairs = Vec::new();
    let mut rows = String::new();
    let mut any_converged = false;
    for w in &windows {
        let mask = dataio::mask_at(&masks, w.t_start).expect("non-empty");
        let result = align_window(w, mask, imu.as_deref(), &align_cfg, &intr);
        let result = match result {
            Ok(r) => r,
            Err(e @ evalign_core::Error::ImuGap { .. }) => return Err(e.into()),
            Err(e) => {
                log::warn!("window at t={}: {e}", w.t_start);
                AlignmentResult {
                    t_start: w.t_start,
                    phi_global: 0.0,
                    m_max: 0.0,
                    imu_missing: imu.is_none(),
                    per_region: mask
                        .region_ids()
                        .map(|id| {
                            (
                                id,
                                RegionAlignment {
                                    m: 0.0,
                                    omega: AngularVelocity2::polar(0.0, 0.0),
                                    log_likelihood: f64::NEG_INFINITY,
                                    n_events: 0,
                                    converged: false,
                                    centroid: None,
                                },
                            )
                        })
                        .collect(),
                }
            }
        };
        let report = tracker.step(&result, mask, &intr);
        any_converged |= report.reference.is_some();
        for (id, r) in &report.regions {
            let _ = writeln!(
                rows,
                "{},{},{},{},{},{},{},{}",
                w.t_start,
                id,
                r.phi,
                r.m,
                fmt_opt(r.d_meas),
                fmt_opt(r.d_track),
                fmt_opt(r.var),
                r.converged
            );
        }
        if let Some(gt) = &gt {
            let gmask = gt_masks.as_ref().and_then(|g| dataio::mask_at(g, w.t_start));
            let pairs: Vec<(f64, f64)> = match gt_for_window(gt, w.t_start) {
                Some(depths) => {
                    let rel = gt_relative(&report, mask, depths, gmask);
                    report
                        .regions
                        .iter()
                        .filter(|(id, r)| Some(**id) != report.reference && !r.is_reference)
                        .filter_map(|(id, r)| Some((r.d_track?, *rel.get(id)?)))
                        .collect()
                }
                None => Vec::new(),
            };
            let m = if pairs.is_empty() {
                None
            } else {
                Some(depth_metrics_pairs(&pairs)?)
            };
            all_pairs.extend(pairs);
            per_window.push((w.t_start, m));
        }
        reports.push(report);
    }

    ensure_dir(&args.out)?;
    let mut inputs = vec![
        ("events", args.events.display().to_string()),
        ("mask", args.mask.describe()),
        ("camera", args.camera.describe()),
    ];
    if let Some(p) = &args.imu {
        inputs.push(("imu", p.display().to_string()));
    }
    if let Some(p) = &args.gt {
        inputs.push(("gt", p.display().to_string()));
    }
    if let Some(p) = &args.gt_mask {
        inputs.push(("gt_mask", p.display().to_string()));
    }
    let header = cfg.header("depth", &inputs);
    let results_csv = args.out.join(DEPTH_CSV);
    write_file(&results_csv, &format!("{header}{DEPTH_COLUMNS}\n{rows}"))?;

    let mut aggregate = None;
    let mut metrics_csv = None;
    if gt.is_some() {
        let mut text = format!("{header}{DEPTH_METRICS_COLUMNS}\n");
        for (i, (t, m)) in per_window.iter().enumerate() {
            let _ = writeln!(text, "{i},{t},{}", metrics_fields(m.as_ref()));
        }
        if !all_pairs.is_empty() {
            aggregate = Some(depth_metrics_pairs(&all_pairs)?);
        }
        let _ = writeln!(text, "all,,{}", metrics_fields(aggregate.as_ref()));
        let p = args.out.join(DEPTH_METRICS_CSV);
        write_file(&p, &text)?;
        metrics_csv = Some(p);
    }
    if !any_converged {
        return Err(CliError::NoResult("no window produced a converged region".into()));
    }
    Ok(DepthSummary {
        reports,
        aggregate,
        per_window,
        results_csv,
        metrics_csv,
    })
}

fn metrics_fields(m: Option<&DepthMetrics>) -> String {
    match m {
        Some(m) => format!(
            "{},{},{},{},{},{},{},{}",
            m.n, m.rmse_lin, m.rmse_log, m.ard, m.srd, m.delta1, m.delta2, m.delta3
        ),
        None => "0,,,,,,,".into(),
    }
}

// ---------------------------------------------------------------- angvel

#[derive(Debug, Clone, PartialEq)]
pub struct AngvelArgs {
    pub events: PathBuf,
    /// IMU trace used as ground truth.
    pub gt: PathBuf,
    pub camera: CameraSource,
    /// Peak rate for the percentage metric (deg/s); defaults to the largest
    /// ground-truth window rate.
    pub max_rate: Option<f64>,
    pub out: PathBuf,
}

pub const ANGVEL_CSV: &str = "angvel.csv";
pub const ANGVEL_METRICS_CSV: &str = "angvel_metrics.csv";
pub const ANGVEL_COLUMNS: &str = "t_start,t_end,n_events,wx,wy,wz,gt_wx,gt_wy,gt_wz";
pub const ANGVEL_METRICS_COLUMNS: &str = "n,e_wx,e_wy,e_wz,sigma_ew,rms,rms_pct,max_rate";

#[derive(Debug, Clone, PartialEq)]
pub struct AngvelWindow {
    pub t_start: f64,
    pub t_end: f64,
    pub n_events: usize,
    pub omega: AngularVelocity3,
    pub gt: AngularVelocity3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AngvelSummary {
    pub windows: Vec<AngvelWindow>,
    pub metrics: AngVelMetrics,
    pub max_rate: f64,
    pub results_csv: PathBuf,
    pub metrics_csv: PathBuf,
}

/// Full-frame three-axis angular velocity per window, scored against an IMU trace.
pub fn cmd_angvel(args: &AngvelArgs, cfg: &RunConfig) -> CliResult<AngvelSummary> {
    cfg.validate()?;
    let stream = load_events(&args.events, cfg)?;
    let intr = args.camera.resolve(stream.width, stream.height)?;
    let gt_samples = dataio::read_imu(&args.gt)?;
    let integ = ImuIntegrator::new(&gt_samples)?;
    let a3 = cfg.align3_config();
    let windows = make_windows(&stream, cfg)?;
    let mut out = Vec::new();
    for w in &windows {
        match align_window_3dof(w, &a3, &intr) {
            Ok((omega, _)) => out.push(AngvelWindow {
                t_start: w.t_start,
                t_end: w.t_end,
                n_events: w.len(),
                omega,
                gt: integ.mean(w.t_start, w.t_end),
            }),
            Err(e) => log::warn!("window at t={}: {e}", w.t_start),
        }
    }
    if out.is_empty() {
        return Err(CliError::NoResult("no window produced an estimate".into()));
    }
    let max_rate = match args.max_rate {
        Some(r) if r > 0.0 => r,
        Some(_) => return Err(input("--max-rate must be > 0")),
        None => out
            .iter()
            .map(|w| w.gt.norm().to_degrees())
            .fold(0.0, f64::max)
            .max(1e-9),
    };
    let pred: Vec<AngularVelocity3> = out.iter().map(|w| w.omega).collect();
    let gt: Vec<AngularVelocity3> = out.iter().map(|w| w.gt).collect();
    let metrics = angvel_metrics(&pred, &gt, max_rate)?;

    ensure_dir(&args.out)?;
    let header = cfg.header(
        "angvel",
        &[
            ("events", args.events.display().to_string()),
            ("gt", args.gt.display().to_string()),
            ("camera", args.camera.describe()),
        ],
    );
    let mut text = format!("{header}{ANGVEL_COLUMNS}\n");
    for w in &out {
        let _ = writeln!(
            text,
            "{},{},{},{},{},{},{},{},{}",
            w.t_start, w.t_end, w.n_events, w.omega.wx, w.omega.wy, w.omega.wz, w.gt.wx, w.gt.wy, w.gt.wz
        );
    }
    let results_csv = args.out.join(ANGVEL_CSV);
    write_file(&results_csv, &text)?;
    let m = &metrics;
    let mtext = format!(
        "{header}{ANGVEL_METRICS_COLUMNS}\n{},{},{},{},{},{},{},{}\n",
        out.len(),
        m.e_wx,
        m.e_wy,
        m.e_wz,
        m.sigma_ew,
        m.rms,
        m.rms_pct,
        max_rate
    );
    let metrics_csv = args.out.join(ANGVEL_METRICS_CSV);
    write_file(&metrics_csv, &mtext)?;
    Ok(AngvelSummary {
        windows: out,
        metrics,
        max_rate,
        results_csv,
        metrics_csv,
    })
}
