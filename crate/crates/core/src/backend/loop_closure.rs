//! Matching sampled scans against finished submaps they were not inserted
//! into.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::matcher::{match_points, MatchParams};
use crate::submap::Submap;

use super::graph::{Constraint, ConstraintKind, Information, NodeId, PoseGraph};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoopClosureParams {
    pub window_x: f64,
    pub window_y: f64,
    pub window_theta: f64,
    pub linear_step: f64,
    pub angular_step: f64,
    /// Minimum mean endpoint probability for a match to become a constraint.
    pub min_score: f64,
    /// Fraction of scans tried as loop-closure candidates.
    pub sampling_ratio: f64,
    /// Submaps created just before a scan's own submaps overlap it in time
    /// and are already tied to it through shared scans; this many of them
    /// are not tried.
    pub skip_recent_submaps: usize,
    pub refine: bool,
}

impl Default for LoopClosureParams {
    fn default() -> Self {
        Self {
            window_x: 0.5,
            window_y: 0.5,
            window_theta: 5f64.to_radians(),
            linear_step: 0.05,
            angular_step: 1f64.to_radians(),
            min_score: 0.6,
            sampling_ratio: 0.05,
            skip_recent_submaps: 4,
            refine: true,
        }
    }
}

impl LoopClosureParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_score > 0.0 && self.min_score < 1.0) {
            return Err(Error::InvalidParam(format!("min_score must be in (0, 1), got {}", self.min_score)));
        }
        if !(self.sampling_ratio > 0.0 && self.sampling_ratio <= 1.0) {
            return Err(Error::InvalidParam(format!(
                "sampling_ratio must be in (0, 1], got {}",
                self.sampling_ratio
            )));
        }
        self.match_params().validate()
    }

    pub fn match_params(&self) -> MatchParams {
        MatchParams {
            window_x: self.window_x,
            window_y: self.window_y,
            window_theta: self.window_theta,
            linear_step: self.linear_step,
            angular_step: self.angular_step,
            refine: self.refine,
            ..MatchParams::default()
        }
    }

    /// Every `stride`-th scan is a candidate.
    pub fn stride(&self) -> usize {
        ((1.0 / self.sampling_ratio).round() as usize).max(1)
    }
}

/// What the loop-closure search needs to know about one scan.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanRecord {
    pub index: usize,
    pub points: Vec<Point>,
    /// Submaps the scan was inserted into.
    pub submaps: Vec<usize>,
}

/// Tries every sampled (scan, submap) pair whose current estimated scan
/// position falls on an observed cell of the submap, skipping the submaps
/// that immediately precede the scan's own; matches scoring at least
/// `min_score` become constraints.
pub fn find_loop_closures(
    graph: &PoseGraph,
    finished: &[&Submap],
    scans: &[&ScanRecord],
    params: &LoopClosureParams,
    information: Information,
) -> Vec<Constraint> {
    let stride = params.stride();
    let mp = params.match_params();
    let mut out = Vec::new();
    for sm in finished {
        let Some(sm_pose) = graph.pose(NodeId::Submap(sm.id)) else {
            continue;
        };
        for scan in scans {
            if scan.index % stride != 0 || scan.submaps.contains(&sm.id) || scan.points.is_empty() {
                continue;
            }
            let own = scan.submaps.iter().copied().min().unwrap_or(usize::MAX);
            if sm.id < own && sm.id + params.skip_recent_submaps >= own {
                continue;
            }
            let Some(scan_pose) = graph.pose(NodeId::Scan(scan.index)) else {
                continue;
            };
            let guess = sm_pose.between(&scan_pose);
            if sm.grid.get(sm.grid.index_of(&guess.position())).is_none() {
                continue;
            }
            let r = match_points(&sm.grid, &scan.points, &guess, &mp);
            if r.score >= params.min_score {
                out.push(Constraint {
                    from: NodeId::Submap(sm.id),
                    to: NodeId::Scan(scan.index),
                    measurement: r.pose,
                    information,
                    kind: ConstraintKind::LoopClosure,
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Pose2, Transform2};
    use crate::grid::GridParams;
    use crate::scan::{GlassMask, LaserScan};
    use crate::submap::NullSink;

    fn ring_scan() -> LaserScan {
        let n = 120;
        let angles: Vec<f64> = (0..n).map(|k| -3.1 + 6.2 * k as f64 / n as f64).collect();
        let ranges: Vec<f64> = angles.iter().map(|a| 1.5 + 0.4 * (3.0 * a).cos()).collect();
        LaserScan::new(0.0, angles, ranges, vec![1000.0; n], &[], 10.0).unwrap()
    }

    fn setup() -> (PoseGraph, Submap, ScanRecord) {
        let params = GridParams::default();
        let mut sm = Submap::new(0, Pose2::origin(), params.resolution);
        let scan = ring_scan();
        for _ in 0..20 {
            sm.insert_scan(&scan, &GlassMask::none(scan.len()), &Pose2::origin(), &mut NullSink, &Transform2::identity(), &params)
                .unwrap();
        }
        let mut g = PoseGraph::new();
        g.add_node(NodeId::Submap(0), Pose2::origin()).unwrap();
        g.add_node(NodeId::Scan(0), Pose2::new(0.1, -0.1, 0.02)).unwrap();
        let rec = ScanRecord {
            index: 0,
            points: scan.valid_endpoints(),
            submaps: vec![5],
        };
        (g, sm, rec)
    }

    #[test]
    fn revisit_yields_constraint() {
        let (g, sm, rec) = setup();
        let info = Information::from_sigmas(0.1, 0.1, 0.03);
        let cs = find_loop_closures(&g, &[&sm], &[&rec], &LoopClosureParams::default(), info);
        assert_eq!(cs.len(), 1);
        let z = cs[0].measurement;
        assert!(z.x.abs() < 0.05 && z.y.abs() < 0.05 && z.theta.abs() < 0.01, "{z:?}");
    }

    #[test]
    fn nothing_without_finished_submaps() {
        let (g, _, rec) = setup();
        let info = Information::from_sigmas(0.1, 0.1, 0.03);
        assert!(find_loop_closures(&g, &[], &[&rec], &LoopClosureParams::default(), info).is_empty());
    }

    #[test]
    fn own_submap_is_skipped() {
        let (g, sm, mut rec) = setup();
        rec.submaps = vec![0];
        let info = Information::from_sigmas(0.1, 0.1, 0.03);
        assert!(find_loop_closures(&g, &[&sm], &[&rec], &LoopClosureParams::default(), info).is_empty());
    }

    #[test]
    fn recent_submaps_are_skipped() {
        let (g, sm, mut rec) = setup();
        let info = Information::from_sigmas(0.1, 0.1, 0.03);
        rec.submaps = vec![3, 4];
        assert!(find_loop_closures(&g, &[&sm], &[&rec], &LoopClosureParams::default(), info).is_empty());
        let params = LoopClosureParams { skip_recent_submaps: 2, ..LoopClosureParams::default() };
        assert_eq!(find_loop_closures(&g, &[&sm], &[&rec], &params, info).len(), 1);
    }

    #[test]
    fn unreachable_score_yields_nothing() {
        let (g, sm, rec) = setup();
        let info = Information::from_sigmas(0.1, 0.1, 0.03);
        let params = LoopClosureParams { min_score: 1.0 - 1e-12, ..LoopClosureParams::default() };
        assert!(find_loop_closures(&g, &[&sm], &[&rec], &params, info).is_empty());
        assert!(LoopClosureParams { min_score: 1.0, ..LoopClosureParams::default() }.validate().is_err());
    }
}
