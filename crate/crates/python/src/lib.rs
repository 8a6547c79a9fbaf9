//! Python bindings: the odds update, glass detection, ray traversal, the
//! simulator, SLAM over in-memory scans, and the file-based pipeline.

use std::path::PathBuf;

use glass_slam::backend::BackendConfig;
use glass_slam::config::PipelineConfig;
use glass_slam::detector::{detect_in_profile, DetectorParams};
use glass_slam::eval::trajectory_error as eval_trajectory_error;
use glass_slam::frontend::FrontendConfig;
use glass_slam::glass::{GlassMode, GlassModeConfig};
use glass_slam::grid::GridParams;
use glass_slam::map::MapThresholds;
use glass_slam::pipeline::{run_pipeline as core_run_pipeline, run_slam as core_run_slam, write_corridor_scenario};
use glass_slam::scan::LaserScan;
use glass_slam::sim::{corridor_loop_environment, corridor_loop_trajectory, playback, LidarSpec, OdometryModel};
use glass_slam::{Error, Point, Pose2};
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict, PyList};

create_exception!(glass_slam, GlassSlamError, PyException);

fn err(e: Error) -> PyErr {
    GlassSlamError::new_err(format!("{} error: {e}", e.category()))
}

type PoseTuple = (f64, f64, f64);
type Stamped = (f64, PoseTuple);

fn pose(p: PoseTuple) -> Pose2 {
    Pose2::new(p.0, p.1, p.2)
}

fn tuple(p: &Pose2) -> PoseTuple {
    (p.x, p.y, p.theta)
}

/// One odds update of a cell, clamped to `[clamp_min, clamp_max]`.
#[pyfunction]
#[pyo3(signature = (m_old, p, clamp_min = 0.12, clamp_max = 0.971))]
fn update_cell(m_old: f64, p: f64, clamp_min: f64, clamp_max: f64) -> PyResult<f64> {
    let params = GridParams {
        p_clamp_min: clamp_min,
        p_clamp_max: clamp_max,
        ..GridParams::default()
    };
    glass_slam::grid::update_cell(m_old, p, &params).map_err(err)
}

/// Per-beam glass flags for an intensity profile.
#[pyfunction]
#[pyo3(signature = (intensities, thresh = 3000.0, grad = 500.0, width = 10))]
fn detect_glass(intensities: Vec<f64>, thresh: f64, grad: f64, width: usize) -> PyResult<Vec<bool>> {
    let params = DetectorParams { thresh, grad, width };
    Ok(detect_in_profile(&intensities, &params).map_err(err)?.flags)
}

/// Cells crossed by the segment from `start` to `end`, excluding the end cell.
#[pyfunction]
fn traverse_ray(resolution: f64, start: (f64, f64), end: (f64, f64)) -> Vec<(i32, i32)> {
    glass_slam::grid::traverse_ray(resolution, &Point::new(start.0, start.1), &Point::new(end.0, end.1))
        .into_iter()
        .map(|c| (c.i, c.j))
        .collect()
}

/// Simulated scans along the built-in corridor loop, as dicts with keys
/// `timestamp`, `angles`, `ranges`, `intensities`, `odometry` and `truth`.
#[pyfunction]
#[pyo3(signature = (passes = 2, step = 0.05, drift = 0.0, seed = 7))]
fn simulate_corridor<'py>(py: Python<'py>, passes: usize, step: f64, drift: f64, seed: u64) -> PyResult<Bound<'py, PyList>> {
    if passes == 0 || !(step > 0.0) {
        return Err(err(Error::InvalidParam("passes and step must be positive".into())));
    }
    let odo = if drift == 0.0 { OdometryModel::exact() } else { OdometryModel::drifting(drift) };
    let sim = playback(
        &corridor_loop_environment(),
        &corridor_loop_trajectory(passes, step, 0.1),
        &LidarSpec::default(),
        &odo,
        seed,
    )
    .map_err(err)?;
    let out = PyList::empty(py);
    for s in sim {
        let d = PyDict::new(py);
        d.set_item("timestamp", s.scan.timestamp)?;
        d.set_item("angles", s.scan.angles)?;
        d.set_item("ranges", s.scan.ranges)?;
        d.set_item("intensities", s.scan.intensities)?;
        d.set_item("odometry", tuple(&s.odometry))?;
        d.set_item("truth", tuple(&s.truth))?;
        out.append(d)?;
    }
    Ok(out)
}

fn scan_from_dict(d: &Bound<'_, PyDict>) -> PyResult<(LaserScan, Option<Pose2>)> {
    let get = |k: &str| {
        d.get_item(k)?
            .ok_or_else(|| GlassSlamError::new_err(format!("scan is missing '{k}'")))
    };
    let range_max: f64 = match d.get_item("range_max")? {
        Some(v) => v.extract()?,
        None => LidarSpec::default().range_max,
    };
    let no_return: Vec<usize> = match d.get_item("no_return")? {
        Some(v) => v.extract()?,
        None => Vec::new(),
    };
    let scan = LaserScan::new(
        get("timestamp")?.extract()?,
        get("angles")?.extract()?,
        get("ranges")?.extract()?,
        get("intensities")?.extract()?,
        &no_return,
        range_max,
    )
    .map_err(err)?;
    let odometry = match d.get_item("odometry")? {
        Some(v) if !v.is_none() => Some(pose(v.extract()?)),
        _ => None,
    };
    Ok((scan, odometry))
}

/// Runs SLAM over a list of scan dicts (as produced by
/// `simulate_corridor`) and returns trajectories, counters and the map as
/// PGM bytes.
#[pyfunction]
#[pyo3(signature = (scans, mode = "lite"))]
fn run_slam<'py>(py: Python<'py>, scans: Vec<Bound<'py, PyDict>>, mode: &str) -> PyResult<Bound<'py, PyDict>> {
    let mode: GlassMode = mode.parse().map_err(err)?;
    let inputs = scans.iter().map(scan_from_dict).collect::<PyResult<Vec<_>>>()?;
    let fc = FrontendConfig {
        glass: GlassModeConfig::with_mode(mode),
        ..FrontendConfig::default()
    };
    let out = py
        .detach(|| core_run_slam(inputs.iter().map(|(s, o)| (s, *o)), &fc, &BackendConfig::default()))
        .map_err(err)?;
    let t = MapThresholds::default();
    let map = out.render(&t).map_err(err)?;
    let traj = |v: &[(f64, Pose2)]| v.iter().map(|(s, p)| (*s, tuple(p))).collect::<Vec<Stamped>>();
    let d = PyDict::new(py);
    d.set_item("optimized_trajectory", traj(&out.optimized_trajectory))?;
    d.set_item("local_trajectory", traj(&out.local_trajectory))?;
    d.set_item("submaps", out.submaps.len())?;
    d.set_item("loop_closures", out.loop_closures)?;
    d.set_item("glass_beams", out.glass_beams)?;
    d.set_item(
        "registry",
        out.registry.points().iter().map(|g| (g.point.x, g.point.y, g.first_submap)).collect::<Vec<_>>(),
    )?;
    d.set_item("pgm", PyBytes::new(py, &map.to_pgm(&t)))?;
    d.set_item("map_origin", (map.origin().x, map.origin().y))?;
    d.set_item("resolution", map.resolution)?;
    Ok(d)
}

/// Translation and rotation RMSE of `estimated` after rigid alignment to
/// `truth`; both are lists of `(t, (x, y, theta))`.
#[pyfunction]
fn trajectory_error(estimated: Vec<Stamped>, truth: Vec<Stamped>) -> PyResult<(f64, f64)> {
    let conv = |v: Vec<Stamped>| v.into_iter().map(|(t, p)| (t, pose(p))).collect::<Vec<_>>();
    let e = eval_trajectory_error(&conv(estimated), &conv(truth)).map_err(err)?;
    Ok((e.rmse_translation, e.rmse_rotation))
}

/// Pipeline configuration. Keys are dotted paths, e.g. `glass.mode`.
#[pyclass(name = "PipelineConfig")]
struct PyPipelineConfig {
    inner: PipelineConfig,
}

#[pymethods]
impl PyPipelineConfig {
    #[new]
    #[pyo3(signature = (toml = None))]
    fn new(toml: Option<&str>) -> PyResult<Self> {
        let inner = match toml {
            Some(t) => PipelineConfig::from_toml(t).map_err(err)?,
            None => PipelineConfig::default(),
        };
        Ok(Self { inner })
    }

    /// Sets one key; the value is read as a TOML literal, else as a string.
    fn set(&mut self, key: &str, value: &str) -> PyResult<()> {
        self.inner.apply_override(key, value).map_err(err)
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("PipelineConfig(mode={}, seed={})", self.inner.glass.mode, self.inner.seed)
    }
}

/// Runs the file-based pipeline and returns the report as a dict.
#[pyfunction]
fn run_pipeline<'py>(py: Python<'py>, config: &PyPipelineConfig) -> PyResult<Bound<'py, PyDict>> {
    let c = config.inner.clone();
    let r = py.detach(|| core_run_pipeline(&c)).map_err(err)?;
    let d = PyDict::new(py);
    for line in r.to_text().lines() {
        if let Some((k, v)) = line.split_once(" = ") {
            match v.parse::<f64>() {
                Ok(x) => d.set_item(k, x)?,
                Err(_) => d.set_item(k, v)?,
            }
        }
    }
    d.set_item("outputs", r.outputs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>())?;
    Ok(d)
}

/// Writes `corridor.env` and `corridor.traj` into `directory`.
#[pyfunction]
#[pyo3(signature = (directory, passes = 2, step = 0.05, dt = 0.1))]
fn write_scenario(directory: PathBuf, passes: usize, step: f64, dt: f64) -> PyResult<(String, String)> {
    let (e, t) = write_corridor_scenario(&directory, passes, step, dt).map_err(err)?;
    Ok((e.display().to_string(), t.display().to_string()))
}

#[pymodule]
#[pyo3(name = "glass_slam")]
fn glass_slam_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("GlassSlamError", m.py().get_type::<GlassSlamError>())?;
    m.add_class::<PyPipelineConfig>()?;
    m.add_function(wrap_pyfunction!(update_cell, m)?)?;
    m.add_function(wrap_pyfunction!(detect_glass, m)?)?;
    m.add_function(wrap_pyfunction!(traverse_ray, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_corridor, m)?)?;
    m.add_function(wrap_pyfunction!(run_slam, m)?)?;
    m.add_function(wrap_pyfunction!(trajectory_error, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(write_scenario, m)?)?;
    Ok(())
}
