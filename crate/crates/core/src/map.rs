//! Fusing submaps into one global grid and encoding it as a trinary
//! portable graymap.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point, Pose2};
use crate::grid::CellIndex;
use crate::submap::Submap;

pub const PIXEL_OCCUPIED: u8 = 0;
pub const PIXEL_UNKNOWN: u8 = 205;
pub const PIXEL_FREE: u8 = 254;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapThresholds {
    /// Cells above this probability render as occupied.
    pub occupied: f64,
    /// Cells below this probability render as free.
    pub free: f64,
}

impl Default for MapThresholds {
    fn default() -> Self {
        Self {
            occupied: 0.65,
            free: 0.35,
        }
    }
}

impl MapThresholds {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.free && self.free < self.occupied && self.occupied <= 1.0) {
            return Err(Error::InvalidParam(format!(
                "need 0 <= free < occupied <= 1, got free {} occupied {}",
                self.free, self.occupied
            )));
        }
        Ok(())
    }

    pub fn pixel(&self, p: Option<f64>) -> u8 {
        match p {
            Some(p) if p > self.occupied => PIXEL_OCCUPIED,
            Some(p) if p < self.free => PIXEL_FREE,
            _ => PIXEL_UNKNOWN,
        }
    }

    fn decisive(&self, p: f64) -> bool {
        p > self.occupied || p < self.free
    }
}

/// A global occupancy grid in the optimized map frame.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedMap {
    pub resolution: f64,
    /// Index of the lower-left cell.
    pub min: CellIndex,
    pub width: usize,
    pub height: usize,
    /// Row-major from the bottom row up; `None` where no submap observed.
    pub cells: Vec<Option<f64>>,
}

impl RenderedMap {
    pub fn from_cells(resolution: f64, min: CellIndex, width: usize, height: usize, cells: Vec<Option<f64>>) -> Result<Self> {
        if cells.len() != width * height {
            return Err(Error::Domain(format!("{} cells for a {width}×{height} map", cells.len())));
        }
        Ok(Self {
            resolution,
            min,
            width,
            height,
            cells,
        })
    }

    /// Map-frame coordinates of the lower-left corner.
    pub fn origin(&self) -> Point {
        Point::new(self.min.i as f64 * self.resolution, self.min.j as f64 * self.resolution)
    }

    pub fn get(&self, c: CellIndex) -> Option<f64> {
        let di = c.i - self.min.i;
        let dj = c.j - self.min.j;
        if di < 0 || dj < 0 || di as usize >= self.width || dj as usize >= self.height {
            return None;
        }
        self.cells[dj as usize * self.width + di as usize]
    }

    pub fn index_of(&self, p: &Point) -> CellIndex {
        CellIndex::new((p.x / self.resolution).floor() as i32, (p.y / self.resolution).floor() as i32)
    }

    pub fn cell_center(&self, c: CellIndex) -> Point {
        Point::new((c.i as f64 + 0.5) * self.resolution, (c.j as f64 + 0.5) * self.resolution)
    }

    pub fn is_occupied(&self, c: CellIndex, t: &MapThresholds) -> bool {
        t.pixel(self.get(c)) == PIXEL_OCCUPIED
    }

    /// Occupied cells, bottom row first.
    pub fn occupied_cells<'a>(&'a self, t: &'a MapThresholds) -> impl Iterator<Item = CellIndex> + 'a {
        (0..self.height).flat_map(move |dj| {
            (0..self.width).filter_map(move |di| {
                let c = CellIndex::new(self.min.i + di as i32, self.min.j + dj as i32);
                self.is_occupied(c, t).then_some(c)
            })
        })
    }

    /// Binary (P5) graymap, top row first.
    pub fn to_pgm(&self, t: &MapThresholds) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.reserve(self.width * self.height);
        for row in (0..self.height).rev() {
            for col in 0..self.width {
                out.push(t.pixel(self.cells[row * self.width + col]));
            }
        }
        out
    }

    /// Metadata in the map-server layout.
    pub fn metadata(&self, image: &str, t: &MapThresholds) -> String {
        let o = self.origin();
        format!(
            "image: {image}\nresolution: {}\norigin: [{}, {}, 0.0]\nnegate: 0\noccupied_thresh: {}\nfree_thresh: {}\nmode: trinary\n",
            self.resolution, o.x, o.y, t.occupied, t.free
        )
    }
}

/// Fuses submaps placed at their (optimized) poses, given oldest first.
///
/// Per cell, the newest submap holding a decisive value (occupied or free)
/// wins; if none does, the newest observed value is kept. Glass pinned in an
/// older submap therefore survives a newer submap in which that cell has
/// only drifted towards unknown.
pub fn render_submaps(submaps: &[(&Submap, Pose2)], thresholds: &MapThresholds) -> Result<RenderedMap> {
    let Some((first, _)) = submaps.first() else {
        return Err(Error::EmptyMap);
    };
    let res = first.grid.resolution();
    let mut lo = (f64::INFINITY, f64::INFINITY);
    let mut hi = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for (sm, pose) in submaps {
        let Some((a, b)) = sm.grid.known_bounds() else { continue };
        let t = pose.to_transform();
        for (i, j) in [(a.i, a.j), (b.i + 1, a.j), (a.i, b.j + 1), (b.i + 1, b.j + 1)] {
            let p = t.apply(&Point::new(i as f64 * res, j as f64 * res));
            lo = (lo.0.min(p.x), lo.1.min(p.y));
            hi = (hi.0.max(p.x), hi.1.max(p.y));
        }
    }
    if !lo.0.is_finite() {
        return Err(Error::EmptyMap);
    }
    let min = CellIndex::new((lo.0 / res).floor() as i32, (lo.1 / res).floor() as i32);
    let max = CellIndex::new((hi.0 / res).floor() as i32, (hi.1 / res).floor() as i32);
    let width = (max.i - min.i + 1) as usize;
    let height = (max.j - min.j + 1) as usize;
    let inverse: Vec<_> = submaps.iter().rev().map(|(sm, p)| (*sm, p.to_transform().inverse())).collect();

    let mut cells = vec![None; width * height];
    for dj in 0..height {
        for di in 0..width {
            let c = CellIndex::new(min.i + di as i32, min.j + dj as i32);
            let center = Point::new((c.i as f64 + 0.5) * res, (c.j as f64 + 0.5) * res);
            let mut fallback = None;
            let mut value = None;
            for (sm, inv) in &inverse {
                let local = inv.apply(&center);
                if let Some(s) = sm.grid.get(sm.grid.index_of(&local)) {
                    if thresholds.decisive(s.probability) {
                        value = Some(s.probability);
                        break;
                    }
                    fallback.get_or_insert(s.probability);
                }
            }
            cells[dj * width + di] = value.or(fallback);
        }
    }
    RenderedMap::from_cells(res, min, width, height, cells)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::CellState;

    fn submap_with(cells: &[((i32, i32), f64)], pose: Pose2, id: usize) -> Submap {
        let mut sm = Submap::new(id, pose, 0.05);
        for &((i, j), p) in cells {
            sm.grid.set(CellIndex::new(i, j), CellState { probability: p, glass: false });
        }
        sm
    }

    #[test]
    fn pixel_classes() {
        let t = MapThresholds::default();
        assert_eq!(t.pixel(Some(0.971)), 0);
        assert_eq!(t.pixel(Some(0.12)), 254);
        assert_eq!(t.pixel(Some(0.5)), 205);
        assert_eq!(t.pixel(Some(0.65)), 205);
        assert_eq!(t.pixel(Some(0.35)), 205);
        assert_eq!(t.pixel(None), 205);
    }

    #[test]
    fn glass_renders_black() {
        let mut sm = Submap::new(0, Pose2::origin(), 0.05);
        sm.pin_glass(CellIndex::new(2, 3), &crate::grid::GridParams::default());
        sm.grid.set(CellIndex::new(0, 0), CellState { probability: 0.971, glass: false });
        let map = render_submaps(&[(&sm, Pose2::origin())], &MapThresholds::default()).unwrap();
        let t = MapThresholds::default();
        assert!(map.is_occupied(CellIndex::new(2, 3), &t));
        assert_eq!(t.pixel(map.get(CellIndex::new(2, 3))), t.pixel(map.get(CellIndex::new(0, 0))));
    }

    #[test]
    fn empty_inputs_rejected() {
        assert!(matches!(render_submaps(&[], &MapThresholds::default()), Err(Error::EmptyMap)));
        let sm = Submap::new(0, Pose2::origin(), 0.05);
        assert!(matches!(
            render_submaps(&[(&sm, Pose2::origin())], &MapThresholds::default()),
            Err(Error::EmptyMap)
        ));
    }

    #[test]
    fn newest_decisive_value_wins() {
        let t = MapThresholds::default();
        let old = submap_with(&[((0, 0), 0.9), ((1, 0), 0.9), ((2, 0), 0.2)], Pose2::origin(), 0);
        let new = submap_with(&[((0, 0), 0.45), ((1, 0), 0.2), ((2, 0), 0.5)], Pose2::origin(), 1);
        let map = render_submaps(&[(&old, Pose2::origin()), (&new, Pose2::origin())], &t).unwrap();
        assert_eq!(map.get(CellIndex::new(0, 0)), Some(0.9));
        assert_eq!(map.get(CellIndex::new(1, 0)), Some(0.2));
        assert_eq!(map.get(CellIndex::new(2, 0)), Some(0.2));

        let gray_old = submap_with(&[((0, 0), 0.55)], Pose2::origin(), 0);
        let gray_new = submap_with(&[((0, 0), 0.45)], Pose2::origin(), 1);
        let map = render_submaps(&[(&gray_old, Pose2::origin()), (&gray_new, Pose2::origin())], &t).unwrap();
        assert_eq!(map.get(CellIndex::new(0, 0)), Some(0.45));
    }

    #[test]
    fn submap_pose_moves_cells() {
        let sm = submap_with(&[((0, 0), 0.9)], Pose2::origin(), 0);
        let map = render_submaps(&[(&sm, Pose2::new(1.0, 0.5, 0.0))], &MapThresholds::default()).unwrap();
        assert_eq!(map.get(CellIndex::new(20, 10)), Some(0.9));
        assert_eq!(map.origin(), Point::new(1.0, 0.5));
    }

    #[test]
    fn pgm_rows_run_top_down() {
        let t = MapThresholds::default();
        let map = RenderedMap::from_cells(0.05, CellIndex::new(0, 0), 2, 2, vec![Some(0.9), None, Some(0.1), Some(0.5)]).unwrap();
        let pgm = map.to_pgm(&t);
        assert_eq!(&pgm[..], b"P5\n2 2\n255\n\xfe\xcd\x00\xcd");
    }

    #[test]
    fn export_is_pure() {
        let t = MapThresholds::default();
        let sm = submap_with(&[((0, 0), 0.9), ((3, 1), 0.1)], Pose2::origin(), 0);
        let a = render_submaps(&[(&sm, Pose2::new(0.3, 0.2, 0.4))], &t).unwrap();
        let b = render_submaps(&[(&sm, Pose2::new(0.3, 0.2, 0.4))], &t).unwrap();
        assert_eq!(a.to_pgm(&t), b.to_pgm(&t));
    }
}
