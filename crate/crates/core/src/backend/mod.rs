//! Global SLAM: builds the pose graph from frontend events, searches for loop
//! closures, optimizes, and publishes the frame corrections `H_k`.

mod graph;
mod loop_closure;

pub use graph::{
    residual_and_jacobians, Constraint, ConstraintKind, Information, NodeId, PoseGraph, SolveReport, SolverParams,
};
pub use loop_closure::{find_loop_closures, LoopClosureParams, ScanRecord};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontend::FrontendEvent;
use crate::geometry::{Pose2, Transform2};
use crate::submap::Submap;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub intra_sigma_xy: f64,
    pub intra_sigma_theta: f64,
    pub loop_sigma_xy: f64,
    pub loop_sigma_theta: f64,
    /// Optimize after this many submaps finish; 0 optimizes only at the end.
    pub optimize_every: usize,
    pub loop_closure: LoopClosureParams,
    pub solver: SolverParams,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            intra_sigma_xy: 0.05,
            intra_sigma_theta: 1f64.to_radians(),
            loop_sigma_xy: 0.1,
            loop_sigma_theta: 2f64.to_radians(),
            optimize_every: 1,
            loop_closure: LoopClosureParams::default(),
            solver: SolverParams::default(),
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("intra_sigma_xy", self.intra_sigma_xy),
            ("intra_sigma_theta", self.intra_sigma_theta),
            ("loop_sigma_xy", self.loop_sigma_xy),
            ("loop_sigma_theta", self.loop_sigma_theta),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParam(format!("{name} must be positive, got {v}")));
            }
        }
        self.loop_closure.validate()
    }

    pub fn intra_information(&self) -> Information {
        Information::from_sigmas(self.intra_sigma_xy, self.intra_sigma_xy, self.intra_sigma_theta)
    }

    pub fn loop_information(&self) -> Information {
        Information::from_sigmas(self.loop_sigma_xy, self.loop_sigma_xy, self.loop_sigma_theta)
    }
}

#[derive(Debug, Clone)]
pub struct Backend {
    config: BackendConfig,
    graph: PoseGraph,
    /// Frontend-frame pose of every submap, by id.
    local_submaps: BTreeMap<usize, Pose2>,
    local_scans: Vec<(f64, Pose2)>,
    finished: Vec<Submap>,
    candidates: Vec<ScanRecord>,
    checked_submaps: usize,
    checked_scans: usize,
    since_optimization: usize,
    correction: Transform2,
    loop_closures: usize,
    optimizations: usize,
}

impl Backend {
    pub fn new(config: BackendConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            graph: PoseGraph::new(),
            local_submaps: BTreeMap::new(),
            local_scans: Vec::new(),
            finished: Vec::new(),
            candidates: Vec::new(),
            checked_submaps: 0,
            checked_scans: 0,
            since_optimization: 0,
            correction: Transform2::identity(),
            loop_closures: 0,
            optimizations: 0,
        })
    }

    pub fn graph(&self) -> &PoseGraph {
        &self.graph
    }

    pub fn finished_submaps(&self) -> &[Submap] {
        &self.finished
    }

    pub fn loop_closure_count(&self) -> usize {
        self.loop_closures
    }

    pub fn optimization_count(&self) -> usize {
        self.optimizations
    }

    /// Latest correction from the frontend frame to the optimized frame.
    pub fn correction(&self) -> Transform2 {
        self.correction
    }

    /// Consumes one frontend event. Returns a fresh correction when the
    /// event triggered an optimization.
    pub fn handle(&mut self, event: FrontendEvent) -> Result<Option<Transform2>> {
        match event {
            FrontendEvent::SubmapCreated { id, pose, .. } => {
                // The node joins the graph with its first scan, so the graph
                // stays connected between events.
                self.local_submaps.insert(id, pose);
                Ok(None)
            }
            FrontendEvent::ScanInserted {
                index,
                timestamp,
                pose,
                submaps,
                points,
                ..
            } => {
                if index != self.local_scans.len() {
                    return Err(Error::State(format!(
                        "scan {index} arrived, expected scan {}",
                        self.local_scans.len()
                    )));
                }
                let mut locals = Vec::with_capacity(submaps.len());
                for &id in &submaps {
                    let local = *self
                        .local_submaps
                        .get(&id)
                        .ok_or_else(|| Error::UnknownNode(NodeId::Submap(id).to_string()))?;
                    if !self.graph.contains(NodeId::Submap(id)) {
                        self.graph.add_node(
                            NodeId::Submap(id),
                            Pose2::from_transform(&self.correction.compose(&local.to_transform())),
                        )?;
                    }
                    locals.push((id, local));
                }
                let node = NodeId::Scan(index);
                self.graph
                    .add_node(node, Pose2::from_transform(&self.correction.compose(&pose.to_transform())))?;
                let info = self.config.intra_information();
                for (id, local) in locals {
                    self.graph.add_intra_constraint(NodeId::Submap(id), node, &local, &pose, info)?;
                }
                self.local_scans.push((timestamp, pose));
                if index % self.config.loop_closure.stride() == 0 {
                    self.candidates.push(ScanRecord { index, points, submaps });
                }
                Ok(None)
            }
            FrontendEvent::SubmapFinished(sm) => {
                self.finished.push(*sm);
                self.since_optimization += 1;
                if self.config.optimize_every > 0 && self.since_optimization >= self.config.optimize_every {
                    self.run_optimization().map(Some)
                } else {
                    Ok(None)
                }
            }
        }
    }

    /// Final loop-closure pass and optimization at the end of a run.
    pub fn finish(&mut self) -> Result<Transform2> {
        if self.graph.node_count() == 0 {
            return Ok(self.correction);
        }
        self.run_optimization()
    }

    fn run_optimization(&mut self) -> Result<Transform2> {
        self.since_optimization = 0;
        let info = self.config.loop_information();
        let lc = &self.config.loop_closure;
        let new_submaps: Vec<&Submap> = self.finished[self.checked_submaps..].iter().collect();
        let old_submaps: Vec<&Submap> = self.finished[..self.checked_submaps].iter().collect();
        let all_scans: Vec<&ScanRecord> = self.candidates.iter().collect();
        let new_scans: Vec<&ScanRecord> = self.candidates[self.checked_scans..].iter().collect();
        let mut found = find_loop_closures(&self.graph, &new_submaps, &all_scans, lc, info);
        found.extend(find_loop_closures(&self.graph, &old_submaps, &new_scans, lc, info));
        self.checked_submaps = self.finished.len();
        self.checked_scans = self.candidates.len();
        self.loop_closures += found.len();
        for c in found {
            self.graph.add_constraint(c)?;
        }

        self.graph.optimize(&self.config.solver)?;
        self.optimizations += 1;
        if let Some(h) = self.local_submaps.keys().rev().find_map(|&id| self.submap_correction(id)) {
            self.correction = h;
        }
        Ok(self.correction)
    }

    /// `H_k` for submap `id`: optimized pose composed with the inverse of its
    /// frontend pose.
    pub fn submap_correction(&self, id: usize) -> Option<Transform2> {
        let local = self.local_submaps.get(&id)?;
        let opt = self.graph.pose(NodeId::Submap(id))?;
        Some(opt.to_transform().compose(&local.to_transform().inverse()))
    }

    pub fn corrections(&self) -> Vec<(usize, Transform2)> {
        self.local_submaps
            .keys()
            .filter_map(|&id| self.submap_correction(id).map(|h| (id, h)))
            .collect()
    }

    pub fn submap_pose(&self, id: usize) -> Option<Pose2> {
        self.graph.pose(NodeId::Submap(id))
    }

    /// Frontend trajectory as received.
    pub fn local_trajectory(&self) -> &[(f64, Pose2)] {
        &self.local_scans
    }

    pub fn optimized_trajectory(&self) -> Vec<(f64, Pose2)> {
        self.local_scans
            .iter()
            .enumerate()
            .map(|(k, &(t, _))| (t, self.graph.pose(NodeId::Scan(k)).expect("scan node exists")))
            .collect()
    }

    pub fn into_finished_submaps(self) -> Vec<Submap> {
        self.finished
    }
}
