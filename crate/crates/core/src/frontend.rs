//! Per-scan local SLAM: matching, glass detection, insertion and the
//! two-submap lifecycle.
//!
//! Poses here live in the frontend's own frame, which is never rewritten.
//! The backend hands back a correction (frontend frame to optimized frame)
//! that is used to register glass points and to seed new submaps.

use serde::{Deserialize, Serialize};

use crate::detector::{detect_glass, DetectorParams};
use crate::error::{Error, Result};
use crate::geometry::{Point, Pose2, Transform2};
use crate::glass::{effective_grid_params, seed_cells, GlassModeConfig, GlassPointRegistry};
use crate::grid::GridParams;
use crate::matcher::{match_scan, MatchParams};
use crate::scan::{GlassMask, LaserScan};
use crate::submap::Submap;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrontendConfig {
    pub grid: GridParams,
    pub matcher: MatchParams,
    pub detector: DetectorParams,
    pub glass: GlassModeConfig,
}

impl FrontendConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.matcher.validate()?;
        self.detector.validate()?;
        self.glass.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FrontendEvent {
    SubmapCreated {
        id: usize,
        pose: Pose2,
        seeded_cells: usize,
    },
    ScanInserted {
        index: usize,
        timestamp: f64,
        pose: Pose2,
        submaps: Vec<usize>,
        /// Sensor-frame endpoints of the valid beams.
        points: Vec<Point>,
        glass_beams: usize,
    },
    /// The submap is removed from the frontend and handed over whole.
    SubmapFinished(Box<Submap>),
}

#[derive(Debug, Clone)]
pub struct Frontend {
    config: FrontendConfig,
    insert_params: GridParams,
    active: Vec<Submap>,
    next_submap_id: usize,
    trajectory: Vec<(f64, Pose2)>,
    registry: GlassPointRegistry,
    correction: Transform2,
    last_odometry: Option<Pose2>,
    match_scores: Vec<f64>,
}

impl Frontend {
    pub fn new(config: FrontendConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            insert_params: effective_grid_params(&config.glass, &config.grid),
            registry: GlassPointRegistry::new(config.grid.resolution),
            config,
            active: Vec::new(),
            next_submap_id: 0,
            trajectory: Vec::new(),
            correction: Transform2::identity(),
            last_odometry: None,
            match_scores: Vec::new(),
        })
    }

    pub fn config(&self) -> &FrontendConfig {
        &self.config
    }

    pub fn active_submaps(&self) -> &[Submap] {
        &self.active
    }

    pub fn trajectory(&self) -> &[(f64, Pose2)] {
        &self.trajectory
    }

    pub fn registry(&self) -> &GlassPointRegistry {
        &self.registry
    }

    /// Per-scan match scores (0 when nothing was matched).
    pub fn match_scores(&self) -> &[f64] {
        &self.match_scores
    }

    /// Latest backend correction, mapping frontend-frame points to the
    /// optimized frame.
    pub fn set_correction(&mut self, correction: Transform2) {
        self.correction = correction;
    }

    pub fn correction(&self) -> &Transform2 {
        &self.correction
    }

    /// Hands over the still-active submaps, e.g. at the end of a run.
    pub fn into_active_submaps(self) -> Vec<Submap> {
        self.active
    }

    /// `odometry` is an absolute odometry reading; consecutive readings give
    /// the motion prediction.
    pub fn process_scan(&mut self, scan: &LaserScan, odometry: Option<Pose2>) -> Result<Vec<FrontendEvent>> {
        if let Some(&(previous, _)) = self.trajectory.last() {
            if !(scan.timestamp > previous) {
                return Err(Error::Ordering {
                    previous,
                    got: scan.timestamp,
                });
            }
        }
        let mut events = Vec::new();

        let last = self.trajectory.last().map(|&(_, p)| p).unwrap_or_else(Pose2::origin);
        let delta = match (self.last_odometry, odometry) {
            (Some(a), Some(b)) => a.between(&b),
            _ => Pose2::origin(),
        };
        if odometry.is_some() {
            self.last_odometry = odometry;
        }
        let guess = last.compose(&delta);

        let (pose, score) = match self.active.first() {
            Some(reference) if !reference.grid.is_empty() => {
                let local_guess = reference.global_pose.between(&guess);
                let r = match_scan(&reference.grid, scan, &local_guess, &self.config.matcher);
                (reference.global_pose.compose(&r.pose), r.score)
            }
            _ => (guess, 0.0),
        };

        let mask = if self.config.glass.detection_enabled() && scan.len() >= 2 {
            detect_glass(scan, &self.config.detector)?
        } else {
            GlassMask::none(scan.len())
        };

        if self.active.is_empty() {
            self.create_submap(pose, &mut events);
        }

        let h_k = self.correction;
        let mut inserted = Vec::with_capacity(2);
        let mut finished = false;
        for sm in self.active.iter_mut() {
            let local = sm.global_pose.between(&pose);
            let report = sm.insert_scan(scan, &mask, &local, &mut self.registry, &h_k, &self.insert_params)?;
            inserted.push(sm.id);
            finished |= report.just_finished;
        }

        let index = self.trajectory.len();
        self.trajectory.push((scan.timestamp, pose));
        self.match_scores.push(score);
        events.push(FrontendEvent::ScanInserted {
            index,
            timestamp: scan.timestamp,
            pose,
            submaps: inserted,
            points: scan.valid_endpoints(),
            glass_beams: mask.count(),
        });

        if finished {
            let done = self.active.remove(0);
            events.push(FrontendEvent::SubmapFinished(Box::new(done)));
            self.create_submap(pose, &mut events);
        } else if self.active.len() == 1 && self.active[0].insertion_count == self.config.grid.scans_per_submap / 2 {
            self.create_submap(pose, &mut events);
        }
        Ok(events)
    }

    fn create_submap(&mut self, pose: Pose2, events: &mut Vec<FrontendEvent>) {
        let id = self.next_submap_id;
        self.next_submap_id += 1;
        let mut sm = Submap::new(id, pose, self.config.grid.resolution);
        let seeded_cells = if self.config.glass.seeding_enabled() {
            seed_cells(
                &mut sm,
                &self.registry,
                &self.correction,
                &self.insert_params,
                self.config.glass.seed_radius,
            )
        } else {
            0
        };
        events.push(FrontendEvent::SubmapCreated { id, pose, seeded_cells });
        self.active.push(sm);
    }
}
