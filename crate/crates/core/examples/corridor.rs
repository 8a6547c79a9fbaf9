//! Maps the simulated glass corridor loop in every glass mode and prints
//! coverage, trajectory error and timing.

use std::time::Instant;

use glass_slam::backend::BackendConfig;
use glass_slam::eval::{glass_coverage, trajectory_error};
use glass_slam::frontend::FrontendConfig;
use glass_slam::glass::{GlassMode, GlassModeConfig};
use glass_slam::map::MapThresholds;
use glass_slam::pipeline::{self, run_slam};
use glass_slam::sim::{corridor_loop_environment, corridor_loop_trajectory, playback, LidarSpec, OdometryModel};

fn main() -> glass_slam::Result<()> {
    let drift: f64 = std::env::args().nth(1).map_or(0.0, |s| s.parse().expect("drift fraction"));
    let env = corridor_loop_environment();
    let traj = corridor_loop_trajectory(2, 0.05, 0.1);
    let t0 = Instant::now();
    let sim = playback(&env, &traj, &LidarSpec::default(), &OdometryModel::drifting(drift), 7)?;
    println!("simulated {} scans in {:.2?}", sim.len(), t0.elapsed());
    let truth: Vec<_> = sim.iter().map(|s| (s.scan.timestamp, s.truth)).collect();

    for mode in [GlassMode::Off, GlassMode::Lite, GlassMode::Full] {
        let fc = FrontendConfig {
            glass: GlassModeConfig::with_mode(mode),
            ..FrontendConfig::default()
        };
        let t0 = Instant::now();
        let out = run_slam(sim.iter().map(|s| (&s.scan, Some(s.odometry))), &fc, &BackendConfig::default())?;
        let elapsed = t0.elapsed();
        let thresholds = MapThresholds::default();
        let map = out.render(&thresholds)?;
        let world_to_map = pipeline::world_to_map(&out.optimized_trajectory[0].1, &truth[0].1);
        let cov = glass_coverage(&map, &env, 0.1, &world_to_map, &thresholds)?;
        let before = trajectory_error(&out.local_trajectory, &truth)?;
        let after = trajectory_error(&out.optimized_trajectory, &truth)?;
        println!(
            "{mode}: coverage {:.1}% ({:.2}/{:.2} m), rmse before {:.3} m after {:.3} m, {} loop closures, {} glass beams, {} registry cells, {:.2?}",
            cov.accuracy,
            cov.detected_length,
            cov.ground_truth_length,
            before.rmse_translation,
            after.rmse_translation,
            out.loop_closures,
            out.glass_beams,
            out.registry.distinct_cells(),
            elapsed
        );
    }
    Ok(())
}
