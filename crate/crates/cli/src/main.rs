use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use glass_slam::config::PipelineConfig;
use glass_slam::detector::{detect_glass, intensity_profile};
use glass_slam::eval::{glass_coverage, trajectory_error};
use glass_slam::glass::GlassMode;
use glass_slam::io;
use glass_slam::pipeline::{run_pipeline, simulate_to_files, world_to_map, write_corridor_scenario};
use glass_slam::sim::OdometryModel;
use glass_slam::Error;

/// 2D graph SLAM with LiDAR-intensity glass detection.
#[derive(Parser)]
#[command(name = "glass-slam", version)]
struct Cli {
    /// TOML pipeline configuration; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override any configuration key, e.g. `--set backend.loop_closure.min_score=0.7`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a scan log, ground-truth poses and environment copy from an
    /// environment and a trajectory.
    Simulate(SimulateArgs),
    /// Run SLAM over a scan log (or a fresh simulation) and export the map,
    /// trajectories, glass registry and report.
    Map(MapArgs),
    /// Score an exported map and trajectory against ground truth.
    Evaluate(EvaluateArgs),
    /// Print the intensity profile around the strongest return of one scan.
    Calibrate(CalibrateArgs),
    /// Write the built-in corridor loop environment and trajectory.
    Scenario(ScenarioArgs),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Stem of the output files.
    #[arg(long)]
    name: Option<String>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    env: Option<PathBuf>,
    #[arg(long)]
    traj: Option<PathBuf>,
    /// Odometry drift as a fraction of distance traveled.
    #[arg(long)]
    drift: Option<f64>,
    #[arg(long)]
    beams: Option<usize>,
    #[arg(long)]
    range_max: Option<f64>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct MapArgs {
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    env: Option<PathBuf>,
    #[arg(long)]
    traj: Option<PathBuf>,
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    mode: Option<GlassMode>,
    #[arg(long)]
    drift: Option<f64>,
    #[arg(long)]
    resolution: Option<f64>,
    #[arg(long)]
    scans_per_submap: Option<usize>,
    #[arg(long)]
    thresh: Option<f64>,
    #[arg(long)]
    grad: Option<f64>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    seed_radius: Option<f64>,
    #[arg(long)]
    min_score: Option<f64>,
    #[arg(long)]
    sampling_ratio: Option<f64>,
    #[arg(long)]
    corridor: Option<f64>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Metadata file of an exported map.
    #[arg(long)]
    map: Option<PathBuf>,
    #[arg(long)]
    env: Option<PathBuf>,
    /// Estimated trajectory.
    #[arg(long)]
    traj: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    corridor: Option<f64>,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    log: PathBuf,
    /// Scan index; defaults to the scan with the strongest return.
    #[arg(long)]
    scan: Option<usize>,
    #[arg(long, default_value_t = 12)]
    half_window: usize,
}

#[derive(Args)]
struct ScenarioArgs {
    #[arg(long, default_value = ".")]
    output_dir: PathBuf,
    #[arg(long, default_value_t = 2)]
    passes: usize,
    #[arg(long, default_value_t = 0.05)]
    step: f64,
    #[arg(long, default_value_t = 0.1)]
    dt: f64,
}

fn exit_code(e: &Error) -> u8 {
    match e.category() {
        "input" => 3,
        "parse" => 4,
        "config" => 5,
        "io" => 6,
        "graph" => 7,
        "evaluation" => 8,
        "state" => 9,
        "export" => 10,
        _ => 1,
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, Error> {
    let mut c = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    for kv in &cli.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got '{kv}'")))?;
        c.apply_override(k.trim(), v.trim())?;
    }
    Ok(c)
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn apply_common(c: &mut PipelineConfig, a: Common) {
    set(&mut c.seed, a.seed);
    set(&mut c.paths.output_dir, a.output_dir);
    set(&mut c.paths.name, a.name);
}

fn simulate(mut c: PipelineConfig, a: SimulateArgs) -> Result<(), Error> {
    apply_common(&mut c, a.common);
    c.paths.env = a.env.or(c.paths.env);
    c.paths.trajectory = a.traj.or(c.paths.trajectory);
    set(&mut c.odometry, a.drift.map(OdometryModel::drifting));
    set(&mut c.lidar.beam_count, a.beams);
    set(&mut c.lidar.range_max, a.range_max);
    let files = simulate_to_files(&c)?;
    println!("log = {}", files.log.display());
    println!("truth = {}", files.truth.display());
    println!("env = {}", files.env.display());
    Ok(())
}

fn map(mut c: PipelineConfig, a: MapArgs) -> Result<(), Error> {
    apply_common(&mut c, a.common);
    c.paths.log = a.log.or(c.paths.log);
    c.paths.env = a.env.or(c.paths.env);
    c.paths.trajectory = a.traj.or(c.paths.trajectory);
    c.paths.truth = a.truth.or(c.paths.truth);
    set(&mut c.glass.mode, a.mode);
    set(&mut c.odometry, a.drift.map(OdometryModel::drifting));
    set(&mut c.grid.resolution, a.resolution);
    set(&mut c.grid.scans_per_submap, a.scans_per_submap);
    set(&mut c.detector.thresh, a.thresh);
    set(&mut c.detector.grad, a.grad);
    set(&mut c.detector.width, a.width);
    set(&mut c.glass.seed_radius, a.seed_radius);
    set(&mut c.backend.loop_closure.min_score, a.min_score);
    set(&mut c.backend.loop_closure.sampling_ratio, a.sampling_ratio);
    set(&mut c.evaluation.corridor, a.corridor);
    let report = run_pipeline(&c)?;
    print!("{}", report.to_text());
    for p in &report.outputs {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn evaluate(c: PipelineConfig, a: EvaluateArgs) -> Result<(), Error> {
    let est = io::load_trajectory(&a.traj)?.poses;
    let truth = io::load_trajectory(&a.truth)?.poses;
    let err = trajectory_error(&est, &truth)?;
    println!("poses = {}", est.len());
    println!("rmse_translation = {:.4}", err.rmse_translation);
    println!("rmse_rotation = {:.5}", err.rmse_rotation);
    match (&a.map, &a.env) {
        (Some(map_path), Some(env_path)) => {
            let (map, thresholds) = io::read_map(map_path)?;
            let env = io::load_environment(env_path)?;
            let (Some(e0), Some(t0)) = (est.first(), truth.first()) else {
                return Err(Error::NoGroundTruth);
            };
            let corridor = a.corridor.unwrap_or(c.evaluation.corridor);
            let cov = glass_coverage(&map, &env, corridor, &world_to_map(&e0.1, &t0.1), &thresholds)?;
            println!("glass_length = {:.3}", cov.ground_truth_length);
            println!("glass_detected = {:.3}", cov.detected_length);
            println!("glass_accuracy = {:.2}", cov.accuracy);
        }
        (None, None) => {}
        _ => return Err(Error::Config("coverage needs both --map and --env".into())),
    }
    Ok(())
}

fn calibrate(c: PipelineConfig, a: CalibrateArgs) -> Result<(), Error> {
    let records = io::load_scan_log(&a.log)?;
    let peak = |r: &io::LogRecord| {
        (0..r.scan.len())
            .map(|i| r.scan.effective_intensity(i))
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let k = match a.scan {
        Some(k) if k < records.len() => k,
        Some(k) => return Err(Error::Domain(format!("scan {k} out of range (log has {})", records.len()))),
        None => (0..records.len())
            .max_by(|&x, &y| peak(&records[x]).total_cmp(&peak(&records[y])).then(y.cmp(&x)))
            .ok_or_else(|| Error::Domain(format!("{} holds no scans", a.log.display())))?,
    };
    let scan = &records[k].scan;
    let mask = detect_glass(scan, &c.detector)?;
    println!(
        "# scan {k} at t = {}, thresh {} grad {} width {}",
        scan.timestamp, c.detector.thresh, c.detector.grad, c.detector.width
    );
    println!("{:>6} {:>9} {:>8} {:>10} {:>10} {:>5}", "beam", "angle_deg", "range", "intensity", "diff", "glass");
    for (i, angle, range, intensity, diff) in intensity_profile(scan, a.half_window) {
        println!(
            "{i:>6} {:>9.2} {range:>8.3} {intensity:>10.1} {diff:>10.1} {:>5}",
            angle.to_degrees(),
            if mask.is_glass(i) { "*" } else { "" }
        );
    }
    Ok(())
}

fn scenario(a: ScenarioArgs) -> Result<(), Error> {
    let (env, traj) = write_corridor_scenario(&a.output_dir, a.passes, a.step, a.dt)?;
    println!("env = {}", env.display());
    println!("traj = {}", traj.display());
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    let config = load_config(&cli)?;
    match cli.command {
        Command::Simulate(a) => simulate(config, a),
        Command::Map(a) => map(config, a),
        Command::Evaluate(a) => evaluate(config, a),
        Command::Calibrate(a) => calibrate(config, a),
        Command::Scenario(a) => scenario(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("glass-slam: {} error: {e}", e.category());
            ExitCode::from(exit_code(&e))
        }
    }
}
