use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use evalign_cli::{
    cmd_angvel, cmd_depth, cmd_synth, configure_threads, AngvelArgs, CameraSource, CliResult, DepthArgs,
    MaskSource, RunConfig,
};
use evalign_core::align::MarginalMode;
use evalign_core::likelihood::{CountModel, DEFAULT_R};

#[derive(Parser)]
#[command(name = "evalign", version, about = "Relative depth and angular velocity from event streams")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Render a synthetic event dataset from a scene and motion description.
    Synth {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        motion: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Ground-truth sampling period (s).
        #[arg(long, default_value_t = 0.05)]
        dt: f64,
    },
    /// Per-region relative distance.
    Depth {
        #[arg(long)]
        events: PathBuf,
        /// Mask file or `honeycomb:r=<px>`.
        #[arg(long)]
        mask: String,
        #[arg(long)]
        imu: Option<PathBuf>,
        /// Ground-truth depth file.
        #[arg(long)]
        gt: Option<PathBuf>,
        /// Plane-label masks matching `--gt`, needed with honeycomb regions.
        #[arg(long)]
        gt_mask: Option<PathBuf>,
        #[command(flatten)]
        cam: CamArgs,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Full-frame three-axis angular velocity.
    Angvel {
        #[arg(long)]
        events: PathBuf,
        /// IMU trace used as ground truth.
        #[arg(long)]
        gt: PathBuf,
        #[command(flatten)]
        cam: CamArgs,
        /// Peak rate for the percentage error (deg/s).
        #[arg(long)]
        max_rate: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        /// Half-range sample count of the wz scan.
        #[arg(long, default_value_t = 11)]
        wz_samples: usize,
        #[command(flatten)]
        run: RunArgs,
    },
}

#[derive(Args)]
struct CamArgs {
    /// Camera intrinsics JSON.
    #[arg(long, conflicts_with = "focal", required_unless_present = "focal")]
    camera: Option<PathBuf>,
    /// Focal length (px) with a centered principal point.
    #[arg(long)]
    focal: Option<f64>,
}

impl CamArgs {
    fn source(&self) -> CameraSource {
        match (&self.camera, self.focal) {
            (Some(p), _) => CameraSource::File(p.clone()),
            (None, Some(f)) => CameraSource::Focal(f),
            (None, None) => unreachable!("clap enforces one of --camera/--focal"),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Counts {
    Continuous,
    Nearest,
}

#[derive(Clone, Copy, ValueEnum)]
enum Marginal {
    Joint,
    PerPixel,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, default_value_t = 0.05)]
    dt: f64,
    /// Slice by event count instead of duration.
    #[arg(long)]
    window_events: Option<usize>,
    #[arg(long, default_value_t = 0.1)]
    sigma_proc: f64,
    #[arg(long, default_value_t = DEFAULT_R)]
    nb_r: f64,
    /// Fixed NB q; moment-matched per window when omitted.
    #[arg(long)]
    nb_q: Option<f64>,
    #[arg(long, value_enum, default_value_t = Counts::Continuous)]
    counts: Counts,
    #[arg(long, value_enum, default_value_t = Marginal::Joint)]
    marginal: Marginal,
    /// Upper bound of the magnitude grid (rad/s); derived per window when omitted.
    #[arg(long)]
    m_max: Option<f64>,
    #[arg(long, default_value_t = 50)]
    grid_n: usize,
    #[arg(long, default_value_t = 36)]
    phi_samples: usize,
    #[arg(long, default_value_t = 50)]
    min_events: usize,
    /// Drop pixels firing above this rate (events/s).
    #[arg(long)]
    hot_thresh: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl RunArgs {
    fn config(&self) -> RunConfig {
        RunConfig {
            dt: self.dt,
            window_events: self.window_events,
            sigma_proc: self.sigma_proc,
            nb_r: self.nb_r,
            nb_q: self.nb_q,
            counts: match self.counts {
                Counts::Continuous => CountModel::Continuous,
                Counts::Nearest => CountModel::Nearest,
            },
            marginal: match self.marginal {
                Marginal::Joint => MarginalMode::Joint,
                Marginal::PerPixel => MarginalMode::PerPixel,
            },
            m_max: self.m_max,
            grid_n: self.grid_n,
            phi_samples: self.phi_samples,
            min_events: self.min_events,
            hot_thresh: self.hot_thresh,
            seed: self.seed,
            ..RunConfig::default()
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    configure_threads()?;
    match cli.cmd {
        Cmd::Synth { scene, motion, out, seed, dt } => {
            let cfg = RunConfig { seed, dt, ..RunConfig::default() };
            let f = cmd_synth(&scene, &motion, &out, &cfg)?;
            println!("wrote {} events to {}", f.n_events, out.display());
        }
        Cmd::Depth { events, mask, imu, gt, gt_mask, cam, out, run } => {
            let args = DepthArgs {
                events,
                mask: MaskSource::parse(&mask)?,
                camera: cam.source(),
                imu,
                gt,
                gt_mask,
                out,
            };
            let s = cmd_depth(&args, &run.config())?;
            println!("{} windows -> {}", s.reports.len(), s.results_csv.display());
            if let Some(m) = s.aggregate {
                println!(
                    "ARD {:.4}  SRD {:.4}  RMSE {:.4}  RMSE_log {:.4}  d1 {:.1}%  (n={})",
                    m.ard, m.srd, m.rmse_lin, m.rmse_log, m.delta1, m.n
                );
            }
        }
        Cmd::Angvel { events, gt, cam, max_rate, out, wz_samples, run } => {
            let args = AngvelArgs {
                events,
                gt,
                camera: cam.source(),
                max_rate,
                out,
            };
            let cfg = RunConfig { wz_samples, ..run.config() };
            let s = cmd_angvel(&args, &cfg)?;
            let m = s.metrics;
            println!(
                "{} windows  RMS {:.3} deg/s ({:.2}%)  ex {:.3} ey {:.3} ez {:.3}",
                s.windows.len(),
                m.rms,
                m.rms_pct,
                m.e_wx,
                m.e_wy,
                m.e_wz
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
