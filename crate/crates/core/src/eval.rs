//! Glass coverage and trajectory accuracy against ground truth.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{normalize_angle, Point, Pose2, Transform2};
use crate::grid::CellIndex;
use crate::map::{MapThresholds, RenderedMap};
use crate::sim::Environment;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentCoverage {
    /// Index into the environment's segment list.
    pub segment: usize,
    pub length: f64,
    pub detected: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlassCoverageReport {
    pub ground_truth_length: f64,
    pub detected_length: f64,
    /// Percent.
    pub accuracy: f64,
    pub segments: Vec<SegmentCoverage>,
}

/// Detected length of every glass wall: each wall is cut into pieces about
/// one map cell long, and a piece counts when an occupied cell center lies
/// within `corridor` of its midpoint. `world_to_map` places environment
/// coordinates in the map frame.
pub fn glass_coverage(
    map: &RenderedMap,
    env: &Environment,
    corridor: f64,
    world_to_map: &Transform2,
    thresholds: &MapThresholds,
) -> Result<GlassCoverageReport> {
    let res = map.resolution;
    let reach = (corridor / res).ceil() as i32 + 1;
    let mut segments = Vec::new();
    for (k, seg) in env.segments.iter().enumerate() {
        if seg.material != crate::sim::Material::Glass {
            continue;
        }
        let length = seg.length();
        let n = ((length / res).round() as usize).max(1);
        let piece = length / n as f64;
        let mut hits = 0usize;
        for s in 0..n {
            let f = (s as f64 + 0.5) / n as f64;
            let p = world_to_map.apply(&(seg.a + (seg.b - seg.a) * f));
            if occupied_within(map, &p, corridor, reach, thresholds) {
                hits += 1;
            }
        }
        segments.push(SegmentCoverage {
            segment: k,
            length,
            detected: hits as f64 * piece,
        });
    }
    if segments.is_empty() {
        return Err(Error::NoGroundTruth);
    }
    let ground_truth_length: f64 = segments.iter().map(|s| s.length).sum();
    let detected_length: f64 = segments.iter().map(|s| s.detected).sum();
    Ok(GlassCoverageReport {
        ground_truth_length,
        detected_length,
        accuracy: 100.0 * detected_length / ground_truth_length,
        segments,
    })
}

fn occupied_within(map: &RenderedMap, p: &Point, corridor: f64, reach: i32, t: &MapThresholds) -> bool {
    let c = map.index_of(p);
    for dj in -reach..=reach {
        for di in -reach..=reach {
            let q = CellIndex::new(c.i + di, c.j + dj);
            if map.is_occupied(q, t) && (map.cell_center(q) - p).norm() <= corridor {
                return true;
            }
        }
    }
    false
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryError {
    pub rmse_translation: f64,
    pub rmse_rotation: f64,
    /// Rigid transform applied to the estimate before scoring.
    pub alignment: Transform2,
}

/// Closed-form rigid alignment of `source` onto `target` (least squares, no
/// scale).
pub fn align_rigid(source: &[Point], target: &[Point]) -> Transform2 {
    let n = source.len().min(target.len());
    if n == 0 {
        return Transform2::identity();
    }
    let mean = |ps: &[Point]| {
        let s = ps[..n].iter().fold(nalgebra::Vector2::zeros(), |a, p| a + p.coords);
        s / n as f64
    };
    let (ms, mt) = (mean(source), mean(target));
    let (mut sin, mut cos) = (0.0, 0.0);
    for (a, b) in source[..n].iter().zip(&target[..n]) {
        let (a, b) = (a.coords - ms, b.coords - mt);
        cos += a.x * b.x + a.y * b.y;
        sin += a.x * b.y - a.y * b.x;
    }
    let theta = if sin == 0.0 && cos == 0.0 { 0.0 } else { sin.atan2(cos) };
    let rot = Transform2::new(theta, 0.0, 0.0);
    let t = mt - rot.rotate(ms);
    Transform2::new(theta, t.x, t.y)
}

/// RMSE of the estimate after rigid alignment to the truth. Timestamps must
/// agree pose by pose (to 1 µs).
pub fn trajectory_error(estimated: &[(f64, Pose2)], truth: &[(f64, Pose2)]) -> Result<TrajectoryError> {
    let n = estimated.len().max(truth.len());
    for k in 0..n {
        let (e, t) = (estimated.get(k).map(|p| p.0), truth.get(k).map(|p| p.0));
        match (e, t) {
            (Some(a), Some(b)) if (a - b).abs() <= 1e-6 => {}
            _ => {
                return Err(Error::TimestampMismatch {
                    index: k,
                    estimated: e.unwrap_or(f64::NAN),
                    truth: t.unwrap_or(f64::NAN),
                })
            }
        }
    }
    if n == 0 {
        return Ok(TrajectoryError {
            rmse_translation: 0.0,
            rmse_rotation: 0.0,
            alignment: Transform2::identity(),
        });
    }
    let src: Vec<Point> = estimated.iter().map(|p| p.1.position()).collect();
    let dst: Vec<Point> = truth.iter().map(|p| p.1.position()).collect();
    let align = align_rigid(&src, &dst);
    let mut sq_t = 0.0;
    let mut sq_r = 0.0;
    for ((_, e), (_, t)) in estimated.iter().zip(truth) {
        let moved = align.apply(&e.position());
        sq_t += (moved - t.position()).norm_squared();
        sq_r += normalize_angle(e.theta + align.rotation - t.theta).powi(2);
    }
    Ok(TrajectoryError {
        rmse_translation: (sq_t / n as f64).sqrt(),
        rmse_rotation: (sq_r / n as f64).sqrt(),
        alignment: align,
    })
}
