//! The full offline pipeline: frontend and backend over a scan sequence,
//! then map fusion, export and evaluation.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::backend::{Backend, BackendConfig};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::eval::{glass_coverage, trajectory_error, GlassCoverageReport, TrajectoryError};
use crate::frontend::{Frontend, FrontendConfig};
use crate::geometry::{Pose2, Transform2};
use crate::glass::{GlassMode, GlassPointRegistry};
use crate::io::{self, LogRecord};
use crate::map::{render_submaps, MapThresholds, RenderedMap};
use crate::scan::LaserScan;
use crate::sim::{corridor_loop_environment, corridor_loop_trajectory, playback, Environment};
use crate::submap::Submap;

#[derive(Debug, Clone)]
pub struct SlamOutput {
    /// Every submap, by id, with its optimized pose.
    pub submaps: Vec<(Submap, Pose2)>,
    /// Frontend poses before any backend correction.
    pub local_trajectory: Vec<(f64, Pose2)>,
    pub optimized_trajectory: Vec<(f64, Pose2)>,
    pub registry: GlassPointRegistry,
    pub loop_closures: usize,
    pub optimizations: usize,
    /// `H_k` per submap id after the final optimization.
    pub corrections: Vec<(usize, Transform2)>,
    pub glass_beams: usize,
}

impl SlamOutput {
    pub fn render(&self, thresholds: &MapThresholds) -> Result<RenderedMap> {
        let refs: Vec<(&Submap, Pose2)> = self.submaps.iter().map(|(s, p)| (s, *p)).collect();
        render_submaps(&refs, thresholds)
    }
}

/// Runs SLAM over `(scan, odometry)` pairs in order.
pub fn run_slam<'a, I>(scans: I, frontend: &FrontendConfig, backend: &BackendConfig) -> Result<SlamOutput>
where
    I: IntoIterator<Item = (&'a LaserScan, Option<Pose2>)>,
{
    let mut f = Frontend::new(*frontend)?;
    let mut b = Backend::new(*backend)?;
    let mut glass_beams = 0;
    for (scan, odom) in scans {
        for ev in f.process_scan(scan, odom)? {
            if let crate::frontend::FrontendEvent::ScanInserted { glass_beams: g, .. } = &ev {
                glass_beams += g;
            }
            if let Some(h) = b.handle(ev)? {
                f.set_correction(h);
            }
        }
    }
    b.finish()?;

    let registry = f.registry().clone();
    let optimized_trajectory = b.optimized_trajectory();
    let local_trajectory = b.local_trajectory().to_vec();
    let loop_closures = b.loop_closure_count();
    let optimizations = b.optimization_count();
    let corrections = b.corrections();
    let active = f.into_active_submaps();
    let graph = b.graph().clone();
    let mut all: Vec<Submap> = b.into_finished_submaps();
    all.extend(active);
    all.sort_by_key(|s| s.id);
    let submaps = all
        .into_iter()
        .filter_map(|s| {
            let pose = graph.pose(crate::backend::NodeId::Submap(s.id))?;
            Some((s, pose))
        })
        .collect();
    Ok(SlamOutput {
        submaps,
        local_trajectory,
        optimized_trajectory,
        registry,
        loop_closures,
        optimizations,
        corrections,
        glass_beams,
    })
}

/// Files written by [`simulate_to_files`].
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationFiles {
    pub log: PathBuf,
    pub truth: PathBuf,
    pub env: PathBuf,
}

struct Inputs {
    records: Vec<LogRecord>,
    truth: Option<Vec<(f64, Pose2)>>,
    env: Option<Environment>,
    simulated: Option<SimulationFiles>,
}

fn output_path(config: &PipelineConfig, suffix: &str) -> PathBuf {
    config.paths.output_dir.join(format!("{}.{suffix}", config.paths.name))
}

fn create_output_dir(config: &PipelineConfig) -> Result<()> {
    let dir = &config.paths.output_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn simulate_inputs(config: &PipelineConfig) -> Result<Inputs> {
    let (Some(env_path), Some(traj_path)) = (&config.paths.env, &config.paths.trajectory) else {
        return Err(Error::Config("simulation needs paths.env and paths.trajectory".into()));
    };
    let env = io::load_environment(env_path)?;
    let traj = io::load_trajectory(traj_path)?;
    let sim = playback(&env, &traj, &config.lidar, &config.odometry, config.seed)?;
    let truth: Vec<(f64, Pose2)> = sim.iter().map(|s| (s.scan.timestamp, s.truth)).collect();
    let records: Vec<LogRecord> = sim
        .into_iter()
        .map(|s| LogRecord {
            scan: s.scan,
            odometry: Some(s.odometry),
        })
        .collect();

    create_output_dir(config)?;
    let files = SimulationFiles {
        log: output_path(config, "scans"),
        truth: output_path(config, "truth"),
        env: output_path(config, "env"),
    };
    io::write_scan_log(&files.log, &records)?;
    io::write_bytes(&files.truth, io::format_trajectory(&truth))?;
    io::write_bytes(&files.env, io::format_environment(&env))?;
    Ok(Inputs {
        records,
        truth: Some(truth),
        env: Some(env),
        simulated: Some(files),
    })
}

/// Simulates scans along `paths.trajectory` in `paths.env` and writes the
/// scan log, ground-truth poses and a copy of the environment to the output
/// directory.
pub fn simulate_to_files(config: &PipelineConfig) -> Result<SimulationFiles> {
    config.validate()?;
    Ok(simulate_inputs(config)?.simulated.expect("simulated"))
}

fn load_inputs(config: &PipelineConfig) -> Result<Inputs> {
    let Some(log) = &config.paths.log else {
        return simulate_inputs(config);
    };
    let records = io::load_scan_log(log)?;
    let truth = match &config.paths.truth {
        Some(p) => Some(io::load_trajectory(p)?.poses),
        None => None,
    };
    let env = match &config.paths.env {
        Some(p) => Some(io::load_environment(p)?),
        None => None,
    };
    Ok(Inputs {
        records,
        truth,
        env,
        simulated: None,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineReport {
    pub mode: GlassMode,
    pub scans: usize,
    pub submaps: usize,
    pub loop_closures: usize,
    pub optimizations: usize,
    pub glass_beams: usize,
    pub registry_points: usize,
    pub map_width: usize,
    pub map_height: usize,
    /// Present when the environment and ground truth are known.
    pub coverage: Option<GlassCoverageReport>,
    /// Frontend trajectory against ground truth.
    pub error_before: Option<TrajectoryError>,
    pub error_after: Option<TrajectoryError>,
    pub outputs: Vec<PathBuf>,
}

impl PipelineReport {
    /// `key = value` lines, stable across runs.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "mode = {}", self.mode);
        let _ = writeln!(s, "scans = {}", self.scans);
        let _ = writeln!(s, "submaps = {}", self.submaps);
        let _ = writeln!(s, "loop_closures = {}", self.loop_closures);
        let _ = writeln!(s, "optimizations = {}", self.optimizations);
        let _ = writeln!(s, "glass_beams = {}", self.glass_beams);
        let _ = writeln!(s, "registry_points = {}", self.registry_points);
        let _ = writeln!(s, "map_size = {}x{}", self.map_width, self.map_height);
        if let Some(c) = &self.coverage {
            let _ = writeln!(s, "glass_length = {:.3}", c.ground_truth_length);
            let _ = writeln!(s, "glass_detected = {:.3}", c.detected_length);
            let _ = writeln!(s, "glass_accuracy = {:.2}", c.accuracy);
        }
        for (key, e) in [("before", &self.error_before), ("after", &self.error_after)] {
            if let Some(e) = e {
                let _ = writeln!(s, "rmse_translation_{key} = {:.4}", e.rmse_translation);
                let _ = writeln!(s, "rmse_rotation_{key} = {:.5}", e.rmse_rotation);
            }
        }
        s
    }
}

/// Maps environment coordinates into the optimized map frame, anchoring the
/// first estimated pose on the first true pose.
pub fn world_to_map(estimated_first: &Pose2, truth_first: &Pose2) -> Transform2 {
    estimated_first.to_transform().compose(&truth_first.to_transform().inverse())
}

/// Simulate (when no log is given), map, export and evaluate. Writes into
/// `paths.output_dir`: `<name>.pgm`, `<name>.yaml`, `<name>.traj`
/// (optimized), `<name>.local.traj`, `<name>.glass` (registry dump) and
/// `<name>.report`.
pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineReport> {
    config.validate()?;
    let inputs = load_inputs(config)?;
    let out = run_slam(
        inputs.records.iter().map(|r| (&r.scan, r.odometry)),
        &config.frontend(),
        &config.backend,
    )?;
    let map = out.render(&config.map)?;

    create_output_dir(config)?;
    let mut outputs = Vec::new();
    if let Some(sim) = &inputs.simulated {
        outputs.extend([sim.log.clone(), sim.truth.clone(), sim.env.clone()]);
    }
    let (pgm, yaml) = io::write_map(&config.paths.output_dir, &config.paths.name, &map, &config.map)?;
    outputs.extend([pgm, yaml]);
    for (suffix, text) in [
        ("traj", io::format_trajectory(&out.optimized_trajectory)),
        ("local.traj", io::format_trajectory(&out.local_trajectory)),
        ("glass", io::format_registry(&out.registry)),
    ] {
        let p = output_path(config, suffix);
        io::write_bytes(&p, text)?;
        outputs.push(p);
    }

    let mut coverage = None;
    let (mut error_before, mut error_after) = (None, None);
    if let Some(truth) = &inputs.truth {
        error_before = Some(trajectory_error(&out.local_trajectory, truth)?);
        error_after = Some(trajectory_error(&out.optimized_trajectory, truth)?);
        if let (Some(env), Some(est0), Some(gt0)) = (&inputs.env, out.optimized_trajectory.first(), truth.first()) {
            if env.glass_segments().next().is_some() {
                let w2m = world_to_map(&est0.1, &gt0.1);
                coverage = Some(glass_coverage(&map, env, config.evaluation.corridor, &w2m, &config.map)?);
            }
        }
    }

    let report_path = output_path(config, "report");
    outputs.push(report_path.clone());
    let report = PipelineReport {
        mode: config.glass.mode,
        scans: inputs.records.len(),
        submaps: out.submaps.len(),
        loop_closures: out.loop_closures,
        optimizations: out.optimizations,
        glass_beams: out.glass_beams,
        registry_points: out.registry.len(),
        map_width: map.width,
        map_height: map.height,
        coverage,
        error_before,
        error_after,
        outputs,
    };
    io::write_bytes(&report_path, report.to_text())?;
    Ok(report)
}

/// Writes the built-in corridor loop as `corridor.env` and `corridor.traj`
/// into `dir`.
pub fn write_corridor_scenario(dir: &Path, passes: usize, step: f64, dt: f64) -> Result<(PathBuf, PathBuf)> {
    if passes == 0 || !(step > 0.0) || !(dt > 0.0) {
        return Err(Error::InvalidParam("passes, step and dt must be positive".into()));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let env = dir.join("corridor.env");
    let traj = dir.join("corridor.traj");
    io::write_bytes(&env, io::format_environment(&corridor_loop_environment()))?;
    io::write_bytes(&traj, io::format_trajectory(&corridor_loop_trajectory(passes, step, dt).poses))?;
    Ok((env, traj))
}
