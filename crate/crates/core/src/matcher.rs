//! Scan-to-grid matching.
//!
//! An exhaustive correlative search over a window around the initial guess,
//! scoring each candidate by the summed grid probability at the beam
//! endpoints, optionally polished by damped Gauss-Newton on the bilinearly
//! interpolated grid.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point, Pose2};
use crate::grid::{CellIndex, ProbabilityGrid};
use crate::scan::LaserScan;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchParams {
    /// Half-width of the search window along x, meters.
    pub window_x: f64,
    /// Half-width of the search window along y, meters.
    pub window_y: f64,
    /// Half-width of the search window in heading, radians.
    pub window_theta: f64,
    pub linear_step: f64,
    pub angular_step: f64,
    pub refine: bool,
    pub max_refine_iters: usize,
    pub convergence_linear: f64,
    pub convergence_angular: f64,
}

impl Default for MatchParams {
    fn default() -> Self {
        Self {
            window_x: 0.3,
            window_y: 0.3,
            window_theta: 10f64.to_radians(),
            linear_step: 0.05,
            angular_step: 0.5f64.to_radians(),
            refine: true,
            max_refine_iters: 20,
            convergence_linear: 1e-4,
            convergence_angular: 1e-4,
        }
    }
}

impl MatchParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.linear_step > 0.0 && self.angular_step > 0.0) {
            return Err(Error::InvalidParam("match steps must be positive".into()));
        }
        if self.window_x < self.linear_step
            || self.window_y < self.linear_step
            || self.window_theta < self.angular_step
        {
            return Err(Error::InvalidParam(
                "match window must span at least one step in every dimension".into(),
            ));
        }
        Ok(())
    }

    fn half_counts(&self) -> (i32, i32, i32) {
        let n = |w: f64, s: f64| (w / s + 1e-9).floor() as i32;
        (
            n(self.window_x, self.linear_step),
            n(self.window_y, self.linear_step),
            n(self.window_theta, self.angular_step),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchResult {
    pub pose: Pose2,
    /// Mean grid probability at the beam endpoints.
    pub score: f64,
}

/// Aligns `scan` to `grid` starting from `guess` (a pose in the grid frame).
pub fn match_scan(grid: &ProbabilityGrid, scan: &LaserScan, guess: &Pose2, params: &MatchParams) -> MatchResult {
    match_points(grid, &scan.valid_endpoints(), guess, params)
}

/// [`match_scan`] on pre-extracted sensor-frame endpoints.
pub fn match_points(grid: &ProbabilityGrid, points: &[Point], guess: &Pose2, params: &MatchParams) -> MatchResult {
    if grid.is_empty() || points.is_empty() {
        return MatchResult {
            pose: *guess,
            score: 0.0,
        };
    }
    let coarse = exhaustive_search(grid, points, guess, params);
    let pose = if params.refine {
        refine(grid, points, &coarse, params)
    } else {
        coarse
    };
    MatchResult {
        pose,
        score: mean_probability(grid, points, &pose),
    }
}

/// Mean nearest-cell probability of `points` placed at `pose`.
pub fn mean_probability(grid: &ProbabilityGrid, points: &[Point], pose: &Pose2) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let t = pose.to_transform();
    let sum: f64 = points
        .iter()
        .map(|p| grid.probability_or_zero(grid.index_of(&t.apply(p))))
        .sum();
    sum / points.len() as f64
}

/// Best candidate on the discrete window; ties go to the candidate closest to
/// the guess.
pub fn exhaustive_search(grid: &ProbabilityGrid, points: &[Point], guess: &Pose2, params: &MatchParams) -> Pose2 {
    let Some(table) = LookupTable::new(grid) else {
        return *guess;
    };
    let (nx, ny, na) = params.half_counts();
    let res = grid.resolution();
    let n = points.len();
    let cols_x = (2 * nx + 1) as usize;
    let cols_y = (2 * ny + 1) as usize;
    let mut ix = vec![0u32; cols_x * n];
    let mut iy = vec![0u32; cols_y * n];

    let mut best_sum = f32::NEG_INFINITY;
    let mut best_cost = f64::INFINITY;
    let mut best = (0i32, 0i32, 0i32);

    for a in -na..=na {
        let theta = guess.theta + a as f64 * params.angular_step;
        let (s, c) = theta.sin_cos();
        for (k, p) in points.iter().enumerate() {
            let rx = c * p.x - s * p.y + guess.x;
            let ry = s * p.x + c * p.y + guess.y;
            for d in 0..cols_x {
                let off = (d as i32 - nx) as f64 * params.linear_step;
                ix[d * n + k] = table.column(((rx + off) / res).floor() as i32);
            }
            for d in 0..cols_y {
                let off = (d as i32 - ny) as f64 * params.linear_step;
                iy[d * n + k] = table.row(((ry + off) / res).floor() as i32);
            }
        }
        let ang_cost = (a as f64 * params.angular_step).powi(2);
        for dx in 0..cols_x {
            let xs = &ix[dx * n..(dx + 1) * n];
            for dy in 0..cols_y {
                let ys = &iy[dy * n..(dy + 1) * n];
                let sum: f32 = xs.iter().zip(ys).map(|(&i, &j)| table.data[(i + j) as usize]).sum();
                if sum < best_sum {
                    continue;
                }
                let ox = (dx as i32 - nx) as f64 * params.linear_step;
                let oy = (dy as i32 - ny) as f64 * params.linear_step;
                let cost = ox * ox + oy * oy + ang_cost;
                if sum > best_sum || cost < best_cost {
                    best_sum = sum;
                    best_cost = cost;
                    best = (dx as i32 - nx, dy as i32 - ny, a);
                }
            }
        }
    }
    Pose2::new(
        guess.x + best.0 as f64 * params.linear_step,
        guess.y + best.1 as f64 * params.linear_step,
        guess.theta + best.2 as f64 * params.angular_step,
    )
}

/// The grid copied into a flat array with a one-cell ring of zeros, so any
/// out-of-range index can be clamped onto the ring instead of tested.
struct LookupTable {
    data: Vec<f32>,
    min_i: i32,
    min_j: i32,
    width: i32,
    height: i32,
}

impl LookupTable {
    fn new(grid: &ProbabilityGrid) -> Option<Self> {
        let (lo, hi) = grid.allocated_bounds()?;
        let (min_i, min_j) = (lo.i - 1, lo.j - 1);
        let width = hi.i - lo.i + 3;
        let height = hi.j - lo.j + 3;
        let mut data = vec![0f32; (width * height) as usize];
        for (c, s) in grid.known_cells() {
            data[((c.j - min_j) * width + (c.i - min_i)) as usize] = s.probability as f32;
        }
        Some(Self {
            data,
            min_i,
            min_j,
            width,
            height,
        })
    }

    #[inline]
    fn column(&self, i: i32) -> u32 {
        (i - self.min_i).clamp(0, self.width - 1) as u32
    }

    #[inline]
    fn row(&self, j: i32) -> u32 {
        ((j - self.min_j).clamp(0, self.height - 1) * self.width) as u32
    }
}

/// Bilinear probability and its spatial gradient at `q` (cell centers are
/// the interpolation nodes; unobserved cells read 0).
pub fn interpolate(grid: &ProbabilityGrid, q: &Point) -> (f64, f64, f64) {
    let res = grid.resolution();
    let u = q.x / res - 0.5;
    let v = q.y / res - 0.5;
    let (i0, j0) = (u.floor(), v.floor());
    let (fx, fy) = (u - i0, v - j0);
    let (i0, j0) = (i0 as i32, j0 as i32);
    let p = |di: i32, dj: i32| grid.probability_or_zero(CellIndex::new(i0 + di, j0 + dj));
    let (p00, p10, p01, p11) = (p(0, 0), p(1, 0), p(0, 1), p(1, 1));
    let m = p00 * (1.0 - fx) * (1.0 - fy) + p10 * fx * (1.0 - fy) + p01 * (1.0 - fx) * fy + p11 * fx * fy;
    let gx = ((p10 - p00) * (1.0 - fy) + (p11 - p01) * fy) / res;
    let gy = ((p01 - p00) * (1.0 - fx) + (p11 - p10) * fx) / res;
    (m, gx, gy)
}

fn refine_cost(grid: &ProbabilityGrid, points: &[Point], pose: &Pose2) -> f64 {
    let t = pose.to_transform();
    points
        .iter()
        .map(|p| {
            let (m, _, _) = interpolate(grid, &t.apply(p));
            (1.0 - m).powi(2)
        })
        .sum()
}

/// Damped Gauss-Newton on `Σ (1 - M(T·p))²`, confined to one search step
/// around `start`.
fn refine(grid: &ProbabilityGrid, points: &[Point], start: &Pose2, params: &MatchParams) -> Pose2 {
    let mut pose = *start;
    let mut cost = refine_cost(grid, points, &pose);
    let mut lambda = 1e-3;
    for _ in 0..params.max_refine_iters {
        let (s, c) = pose.theta.sin_cos();
        let mut h = Matrix3::<f64>::zeros();
        let mut g = Vector3::<f64>::zeros();
        for p in points {
            let q = Point::new(c * p.x - s * p.y + pose.x, s * p.x + c * p.y + pose.y);
            let (m, gx, gy) = interpolate(grid, &q);
            let r = 1.0 - m;
            let dqx = -s * p.x - c * p.y;
            let dqy = c * p.x - s * p.y;
            let j = Vector3::new(-gx, -gy, -(gx * dqx + gy * dqy));
            h += j * j.transpose();
            g += j * r;
        }
        let mut damped = h;
        for k in 0..3 {
            damped[(k, k)] += lambda * h[(k, k)].max(1e-9);
        }
        let Some(delta) = damped.cholesky().map(|ch| ch.solve(&(-g))) else {
            break;
        };
        let cand = Pose2::new(
            (pose.x + delta.x).clamp(start.x - params.linear_step, start.x + params.linear_step),
            (pose.y + delta.y).clamp(start.y - params.linear_step, start.y + params.linear_step),
            (pose.theta + delta.z).clamp(start.theta - params.angular_step, start.theta + params.angular_step),
        );
        let cand_cost = refine_cost(grid, points, &cand);
        if cand_cost < cost {
            let moved_lin = ((cand.x - pose.x).powi(2) + (cand.y - pose.y).powi(2)).sqrt();
            let moved_ang = crate::geometry::normalize_angle(cand.theta - pose.theta).abs();
            pose = cand;
            cost = cand_cost;
            lambda = (lambda * 0.1).max(1e-9);
            if moved_lin < params.convergence_linear && moved_ang < params.convergence_angular {
                break;
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e6 {
                break;
            }
        }
    }
    pose
}
