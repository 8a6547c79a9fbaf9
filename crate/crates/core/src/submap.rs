//! Submaps and scan insertion with the local glass mapping scheme.
//!
//! One scan is inserted as a set of hit cells (beam endpoints) and miss cells
//! (cells crossed by any ray that are not hits); each cell is updated at most
//! once per scan. Glass-masked endpoints are pinned at `max_p` and flagged,
//! flagged cells never take hit/miss updates again, and every detected glass
//! point is reported to a [`GlassSink`] in the initial global frame.

use crate::error::{Error, Result};
use crate::geometry::{Point, Pose2, Transform2};
use crate::grid::{odds, odds_inverse, CellIndex, CellState, GridParams, ProbabilityGrid};
use crate::scan::{GlassMask, LaserScan};

/// Receives glass points detected during insertion.
pub trait GlassSink {
    /// `point` is in the current global frame; `h_k` maps it to the initial
    /// global frame.
    fn register(&mut self, point: Point, h_k: &Transform2, submap_id: usize);
}

/// Collects initial-frame points; handy for tests and one-off insertions.
impl GlassSink for Vec<Point> {
    fn register(&mut self, point: Point, h_k: &Transform2, _submap_id: usize) {
        self.push(h_k.apply(&point));
    }
}

/// Discards everything.
pub struct NullSink;

impl GlassSink for NullSink {
    fn register(&mut self, _: Point, _: &Transform2, _: usize) {}
}

#[derive(Debug, Clone, PartialEq)]
pub struct Submap {
    pub id: usize,
    /// Submap origin in the frame scans are tracked in.
    pub global_pose: Pose2,
    pub grid: ProbabilityGrid,
    pub insertion_count: usize,
    pub finished: bool,
}

/// What a single insertion did, for bookkeeping and tests.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct InsertionReport {
    pub hits: Vec<CellIndex>,
    pub misses: Vec<CellIndex>,
    pub glass_cells: Vec<CellIndex>,
    pub just_finished: bool,
}

const MARK_HIT: u8 = 1;
const MARK_MISS: u8 = 2;

impl Submap {
    pub fn new(id: usize, global_pose: Pose2, resolution: f64) -> Self {
        Self {
            id,
            global_pose,
            grid: ProbabilityGrid::new(resolution),
            insertion_count: 0,
            finished: false,
        }
    }

    /// Inserts `scan`, taken at `scan_pose` (in this submap's frame).
    pub fn insert_scan(
        &mut self,
        scan: &LaserScan,
        mask: &GlassMask,
        scan_pose: &Pose2,
        sink: &mut dyn GlassSink,
        h_k: &Transform2,
        params: &GridParams,
    ) -> Result<InsertionReport> {
        if self.finished {
            return Err(Error::State(format!("submap {} is finished", self.id)));
        }
        if mask.len() != scan.len() {
            return Err(Error::Domain(format!(
                "glass mask has {} entries for a {}-beam scan",
                mask.len(),
                scan.len()
            )));
        }
        let hit_odds = odds(params.p_hit)?;
        let miss_odds = odds(params.p_miss)?;

        let sensor = scan_pose.to_transform();
        let origin = scan_pose.position();
        let ends: Vec<Point> = (0..scan.len()).map(|i| sensor.apply(&scan.endpoint(i))).collect();

        let mut lo = self.grid.index_of(&origin);
        let mut hi = lo;
        for e in &ends {
            let c = self.grid.index_of(e);
            lo = CellIndex::new(lo.i.min(c.i), lo.j.min(c.j));
            hi = CellIndex::new(hi.i.max(c.i), hi.j.max(c.j));
        }
        self.grid.ensure_contains(lo, hi);

        let mut report = InsertionReport::default();

        // Glass endpoints first: pinned and flagged before any update runs.
        let to_current = self.global_pose.to_transform();
        for (i, end) in ends.iter().enumerate() {
            if !mask.is_glass(i) || scan.no_return[i] {
                continue;
            }
            let c = self.grid.index_of(end);
            self.grid.set(
                c,
                CellState {
                    probability: params.max_p,
                    glass: true,
                },
            );
            report.glass_cells.push(c);
            sink.register(to_current.apply(end), h_k, self.id);
        }

        let mut marks = vec![0u8; self.grid.slot_count()];
        let mut hit_slots = Vec::new();
        for (i, end) in ends.iter().enumerate() {
            if scan.no_return[i] {
                continue;
            }
            let c = self.grid.index_of(end);
            let o = self.grid.linear_index(c).expect("grid covers scan");
            if marks[o] == 0 {
                marks[o] = MARK_HIT;
                hit_slots.push(o);
                report.hits.push(c);
            }
        }
        let mut miss_slots = Vec::new();
        for end in &ends {
            for c in self.grid.traverse_ray(&origin, end) {
                let o = self.grid.linear_index(c).expect("grid covers ray");
                if marks[o] == 0 {
                    marks[o] = MARK_MISS;
                    miss_slots.push(o);
                    report.misses.push(c);
                }
            }
        }

        for (slots, factor) in [(&hit_slots, hit_odds), (&miss_slots, miss_odds)] {
            for &o in slots.iter() {
                self.apply_update(o, factor, params);
            }
        }

        self.insertion_count += 1;
        if self.insertion_count >= params.scans_per_submap {
            self.finished = true;
            report.just_finished = true;
        }
        Ok(report)
    }

    fn apply_update(&mut self, slot: usize, factor: f64, params: &GridParams) {
        let prior = self.grid.slot(slot);
        let updated = match prior {
            Some(CellState { glass: true, .. }) => return,
            Some(s) => odds_inverse(s.probability / (1.0 - s.probability) * factor),
            None => odds_inverse(factor),
        };
        if prior.is_none() {
            self.grid.note_observed();
        }
        *self.grid.slot_mut(slot) = Some(CellState {
            probability: updated.clamp(params.p_clamp_min, params.p_clamp_max),
            glass: false,
        });
    }

    /// Writes a flagged glass cell, used when seeding from the registry.
    pub fn pin_glass(&mut self, cell: CellIndex, params: &GridParams) {
        self.grid.set(
            cell,
            CellState {
                probability: params.max_p,
                glass: true,
            },
        );
    }
}
