//! Probability grids with the multiplicative odds update.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point;

/// `p / (1 - p)`.
pub fn odds(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("probability {p} outside (0, 1)")));
    }
    Ok(p / (1.0 - p))
}

/// Inverse of [`odds`]: `o / (1 + o)`.
pub fn odds_inverse(o: f64) -> f64 {
    o / (1.0 + o)
}

/// Odds update of one cell, clamped to the grid's probability band.
pub fn update_cell(m_old: f64, p: f64, params: &GridParams) -> Result<f64> {
    let o = odds(m_old)? * odds(p)?;
    Ok(odds_inverse(o).clamp(params.p_clamp_min, params.p_clamp_max))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridParams {
    /// Cell edge length in meters.
    pub resolution: f64,
    pub p_hit: f64,
    pub p_miss: f64,
    pub p_clamp_min: f64,
    pub p_clamp_max: f64,
    /// Probability written into detected glass cells.
    pub max_p: f64,
    pub scans_per_submap: usize,
}

impl Default for GridParams {
    fn default() -> Self {
        Self {
            resolution: 0.05,
            p_hit: 0.55,
            p_miss: 0.49,
            p_clamp_min: 0.12,
            p_clamp_max: 0.971,
            max_p: 0.971,
            scans_per_submap: 90,
        }
    }
}

impl GridParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParam(m));
        if !(self.resolution > 0.0 && self.resolution.is_finite()) {
            return bad(format!("resolution must be positive, got {}", self.resolution));
        }
        if !(0.0 < self.p_miss && self.p_miss < 0.5 && 0.5 < self.p_hit && self.p_hit < 1.0) {
            return bad(format!(
                "need 0 < p_miss < 0.5 < p_hit < 1, got p_miss={} p_hit={}",
                self.p_miss, self.p_hit
            ));
        }
        if !(0.0 < self.p_clamp_min && self.p_clamp_min < 0.5 && 0.5 < self.p_clamp_max && self.p_clamp_max < 1.0)
        {
            return bad(format!(
                "clamp band [{}, {}] must straddle 0.5 inside (0, 1)",
                self.p_clamp_min, self.p_clamp_max
            ));
        }
        if self.max_p != self.p_clamp_max {
            return bad(format!(
                "max_p ({}) must equal p_clamp_max ({})",
                self.max_p, self.p_clamp_max
            ));
        }
        if self.scans_per_submap < 2 {
            return bad("scans_per_submap must be >= 2".into());
        }
        Ok(())
    }
}

/// Integer cell coordinates: cell `(i, j)` covers
/// `[i·res, (i+1)·res) × [j·res, (j+1)·res)` in the grid's frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellIndex {
    pub i: i32,
    pub j: i32,
}

impl CellIndex {
    pub const fn new(i: i32, j: i32) -> Self {
        Self { i, j }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellState {
    pub probability: f64,
    /// Set on cells written by glass detection; such cells are pinned at
    /// `max_p` and skip hit/miss updates.
    pub glass: bool,
}

const GROW_MARGIN: i32 = 32;

/// Sparse-by-presence occupancy grid backed by a dense array that grows on
/// demand. Unobserved cells are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityGrid {
    resolution: f64,
    min_i: i32,
    min_j: i32,
    width: i32,
    height: i32,
    cells: Vec<Option<CellState>>,
    known: usize,
}

impl ProbabilityGrid {
    pub fn new(resolution: f64) -> Self {
        Self {
            resolution,
            min_i: 0,
            min_j: 0,
            width: 0,
            height: 0,
            cells: Vec::new(),
            known: 0,
        }
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    /// Number of observed cells.
    pub fn known_count(&self) -> usize {
        self.known
    }

    pub fn is_empty(&self) -> bool {
        self.known == 0
    }

    #[inline]
    pub fn index_of(&self, p: &Point) -> CellIndex {
        CellIndex::new(
            (p.x / self.resolution).floor() as i32,
            (p.y / self.resolution).floor() as i32,
        )
    }

    pub fn cell_center(&self, c: CellIndex) -> Point {
        Point::new(
            (c.i as f64 + 0.5) * self.resolution,
            (c.j as f64 + 0.5) * self.resolution,
        )
    }

    #[inline]
    fn offset(&self, c: CellIndex) -> Option<usize> {
        let di = c.i - self.min_i;
        let dj = c.j - self.min_j;
        if di < 0 || dj < 0 || di >= self.width || dj >= self.height {
            None
        } else {
            Some((dj * self.width + di) as usize)
        }
    }

    #[inline]
    pub fn get(&self, c: CellIndex) -> Option<CellState> {
        self.offset(c).and_then(|o| self.cells[o])
    }

    /// Probability of a cell, 0 when unobserved.
    #[inline]
    pub fn probability_or_zero(&self, c: CellIndex) -> f64 {
        match self.offset(c) {
            Some(o) => self.cells[o].map_or(0.0, |s| s.probability),
            None => 0.0,
        }
    }

    pub fn set(&mut self, c: CellIndex, state: CellState) {
        self.ensure_contains(c, c);
        let o = self.offset(c).expect("grown to contain cell");
        if self.cells[o].is_none() {
            self.known += 1;
        }
        self.cells[o] = Some(state);
    }

    /// Inclusive index bounds of the allocated area, if any.
    pub fn allocated_bounds(&self) -> Option<(CellIndex, CellIndex)> {
        (self.width > 0).then(|| {
            (
                CellIndex::new(self.min_i, self.min_j),
                CellIndex::new(self.min_i + self.width - 1, self.min_j + self.height - 1),
            )
        })
    }

    /// Tight inclusive bounds of the observed cells.
    pub fn known_bounds(&self) -> Option<(CellIndex, CellIndex)> {
        let mut lo = CellIndex::new(i32::MAX, i32::MAX);
        let mut hi = CellIndex::new(i32::MIN, i32::MIN);
        for (c, _) in self.known_cells() {
            lo = CellIndex::new(lo.i.min(c.i), lo.j.min(c.j));
            hi = CellIndex::new(hi.i.max(c.i), hi.j.max(c.j));
        }
        (self.known > 0).then_some((lo, hi))
    }

    /// Observed cells in row-major order.
    pub fn known_cells(&self) -> impl Iterator<Item = (CellIndex, CellState)> + '_ {
        self.cells.iter().enumerate().filter_map(move |(o, s)| {
            s.map(|s| {
                let o = o as i32;
                (
                    CellIndex::new(self.min_i + o % self.width, self.min_j + o / self.width),
                    s,
                )
            })
        })
    }

    /// Grows the backing store so that every cell in `[lo, hi]` is addressable.
    pub fn ensure_contains(&mut self, lo: CellIndex, hi: CellIndex) {
        if self.width > 0
            && lo.i >= self.min_i
            && lo.j >= self.min_j
            && hi.i < self.min_i + self.width
            && hi.j < self.min_j + self.height
        {
            return;
        }
        let (new_min_i, new_min_j, new_max_i, new_max_j) = if self.width == 0 {
            (
                lo.i - GROW_MARGIN,
                lo.j - GROW_MARGIN,
                hi.i + GROW_MARGIN,
                hi.j + GROW_MARGIN,
            )
        } else {
            let max_i = self.min_i + self.width - 1;
            let max_j = self.min_j + self.height - 1;
            (
                if lo.i < self.min_i { lo.i - GROW_MARGIN } else { self.min_i },
                if lo.j < self.min_j { lo.j - GROW_MARGIN } else { self.min_j },
                if hi.i > max_i { hi.i + GROW_MARGIN } else { max_i },
                if hi.j > max_j { hi.j + GROW_MARGIN } else { max_j },
            )
        };
        let width = new_max_i - new_min_i + 1;
        let height = new_max_j - new_min_j + 1;
        let mut cells = vec![None; (width * height) as usize];
        for dj in 0..self.height {
            let src = (dj * self.width) as usize;
            let dst = ((self.min_j + dj - new_min_j) * width + (self.min_i - new_min_i)) as usize;
            cells[dst..dst + self.width as usize]
                .copy_from_slice(&self.cells[src..src + self.width as usize]);
        }
        self.min_i = new_min_i;
        self.min_j = new_min_j;
        self.width = width;
        self.height = height;
        self.cells = cells;
    }

    pub(crate) fn linear_index(&self, c: CellIndex) -> Option<usize> {
        self.offset(c)
    }

    pub(crate) fn slot_count(&self) -> usize {
        self.cells.len()
    }

    pub(crate) fn slot(&self, o: usize) -> Option<CellState> {
        self.cells[o]
    }

    pub(crate) fn slot_mut(&mut self, o: usize) -> &mut Option<CellState> {
        &mut self.cells[o]
    }

    pub(crate) fn note_observed(&mut self) {
        self.known += 1;
    }

    /// Cells crossed by the segment `start → end`; see [`traverse_ray`].
    pub fn traverse_ray(&self, start: &Point, end: &Point) -> Vec<CellIndex> {
        traverse_ray(self.resolution, start, end)
    }
}

/// Every cell the segment `start → end` passes through, ordered from `start`,
/// excluding the cell containing `end`. When the segment passes exactly
/// through a lattice corner both side cells are emitted before the diagonal
/// neighbour (supercover), so no diagonal step is ever skipped.
pub fn traverse_ray(resolution: f64, start: &Point, end: &Point) -> Vec<CellIndex> {
    let (x0, y0) = (start.x / resolution, start.y / resolution);
    let (x1, y1) = (end.x / resolution, end.y / resolution);
    let mut cur = CellIndex::new(x0.floor() as i32, y0.floor() as i32);
    let goal = CellIndex::new(x1.floor() as i32, y1.floor() as i32);
    let mut out = Vec::new();
    if cur == goal {
        return out;
    }

    let (dx, dy) = (x1 - x0, y1 - y0);
    let step_i = if dx > 0.0 { 1 } else if dx < 0.0 { -1 } else { 0 };
    let step_j = if dy > 0.0 { 1 } else if dy < 0.0 { -1 } else { 0 };
    let first_crossing = |p0: f64, d: f64, c: i32| -> f64 {
        if d > 0.0 {
            ((c + 1) as f64 - p0) / d
        } else if d < 0.0 {
            (p0 - c as f64) / -d
        } else {
            f64::INFINITY
        }
    };
    let mut t_max_x = first_crossing(x0, dx, cur.i);
    let mut t_max_y = first_crossing(y0, dy, cur.j);
    let t_delta_x = if dx != 0.0 { 1.0 / dx.abs() } else { f64::INFINITY };
    let t_delta_y = if dy != 0.0 { 1.0 / dy.abs() } else { f64::INFINITY };

    loop {
        if cur == goal {
            break;
        }
        out.push(cur);
        if t_max_x.min(t_max_y) > 1.0 {
            break;
        }
        if t_max_x < t_max_y {
            cur.i += step_i;
            t_max_x += t_delta_x;
        } else if t_max_y < t_max_x {
            cur.j += step_j;
            t_max_y += t_delta_y;
        } else {
            for side in [
                CellIndex::new(cur.i + step_i, cur.j),
                CellIndex::new(cur.i, cur.j + step_j),
            ] {
                if side != goal {
                    out.push(side);
                }
            }
            cur = CellIndex::new(cur.i + step_i, cur.j + step_j);
            t_max_x += t_delta_x;
            t_max_y += t_delta_y;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn odds_values() {
        assert_eq!(odds(0.5).unwrap(), 1.0);
        assert_abs_diff_eq!(odds(0.9).unwrap(), 9.0, epsilon = 1e-12);
        assert!(odds(0.0).is_err());
        assert!(odds(1.0).is_err());
        assert!(odds(f64::NAN).is_err());
    }

    #[test]
    fn update_examples() {
        let p = GridParams::default();
        assert_abs_diff_eq!(update_cell(0.5, 0.55, &p).unwrap(), 0.55, epsilon = 1e-12);
        // 1.2222² = 1.49383 → 1.49383 / 2.49383
        assert_abs_diff_eq!(update_cell(0.55, 0.55, &p).unwrap(), 0.599010, epsilon = 1e-6);
        // 9 × 0.96078 = 8.64706 → 8.64706 / 9.64706
        assert_abs_diff_eq!(update_cell(0.9, 0.49, &p).unwrap(), 0.896341, epsilon = 1e-6);
        assert!(update_cell(1.0, 0.55, &p).is_err());
    }

    #[test]
    fn clamping() {
        let p = GridParams::default();
        assert_eq!(update_cell(0.97, 0.9, &p).unwrap(), p.p_clamp_max);
        assert_eq!(update_cell(0.13, 0.1, &p).unwrap(), p.p_clamp_min);
    }

    #[test]
    fn default_params_valid() {
        GridParams::default().validate().unwrap();
        let mut p = GridParams::default();
        p.max_p = 1.0;
        assert!(p.validate().is_err());
        let mut p = GridParams::default();
        p.p_miss = 0.6;
        assert!(p.validate().is_err());
    }

    #[test]
    fn grid_grows_and_keeps_cells() {
        let mut g = ProbabilityGrid::new(0.05);
        let s = CellState { probability: 0.7, glass: false };
        g.set(CellIndex::new(0, 0), s);
        g.set(CellIndex::new(-500, 300), s);
        g.set(CellIndex::new(400, -80), s);
        assert_eq!(g.known_count(), 3);
        assert_eq!(g.get(CellIndex::new(0, 0)), Some(s));
        assert_eq!(g.get(CellIndex::new(-500, 300)), Some(s));
        assert_eq!(g.get(CellIndex::new(1, 0)), None);
        assert_eq!(
            g.known_bounds(),
            Some((CellIndex::new(-500, -80), CellIndex::new(400, 300)))
        );
    }

    #[test]
    fn same_cell_ray_is_empty() {
        let c = traverse_ray(0.05, &Point::new(0.01, 0.01), &Point::new(0.04, 0.02));
        assert!(c.is_empty());
    }

    #[test]
    fn axis_aligned_ray() {
        // spans cells 0, 1, 2 along x; the endpoint cell 2 is excluded
        let c = traverse_ray(0.05, &Point::new(0.01, 0.02), &Point::new(0.12, 0.02));
        assert_eq!(c, vec![CellIndex::new(0, 0), CellIndex::new(1, 0)]);
        let c = traverse_ray(0.05, &Point::new(0.12, 0.02), &Point::new(0.01, 0.02));
        assert_eq!(c, vec![CellIndex::new(2, 0), CellIndex::new(1, 0)]);
    }

    #[test]
    fn exact_diagonal_is_supercover() {
        let c = traverse_ray(1.0, &Point::new(0.5, 0.5), &Point::new(2.5, 2.5));
        assert_eq!(
            c,
            vec![
                CellIndex::new(0, 0),
                CellIndex::new(1, 0),
                CellIndex::new(0, 1),
                CellIndex::new(1, 1),
                CellIndex::new(2, 1),
                CellIndex::new(1, 2),
            ]
        );
    }

    proptest! {
        #[test]
        fn odds_round_trip(p in 1e-6..(1.0 - 1e-6)) {
            prop_assert!((odds_inverse(odds(p).unwrap()) - p).abs() <= 1e-12);
        }

        #[test]
        fn odds_strictly_increasing(a in 1e-6..(1.0 - 1e-6), b in 1e-6..(1.0 - 1e-6)) {
            prop_assume!(a < b);
            prop_assert!(odds(a).unwrap() < odds(b).unwrap());
        }

        #[test]
        fn consecutive_cells_are_adjacent(
            x0 in -3.0..3.0f64, y0 in -3.0..3.0f64, x1 in -3.0..3.0f64, y1 in -3.0..3.0f64
        ) {
            let c = traverse_ray(0.1, &Point::new(x0, y0), &Point::new(x1, y1));
            for w in c.windows(2) {
                prop_assert_eq!((w[0].i - w[1].i).abs() + (w[0].j - w[1].j).abs(), 1);
            }
        }
    }
}
