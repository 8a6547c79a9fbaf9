//! 2D LiDAR simulator with diffuse and glass surfaces.
//!
//! Glass only returns a beam near normal incidence, with an intensity spike
//! that decays with the incidence angle; at any other angle the beam passes
//! through to whatever lies behind.

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{normalize_angle, Point, Pose2};
use crate::scan::LaserScan;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Material {
    Diffuse,
    Glass,
}

impl std::str::FromStr for Material {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "diffuse" => Ok(Material::Diffuse),
            "glass" => Ok(Material::Glass),
            other => Err(Error::Domain(format!("unknown material '{other}' (diffuse|glass)"))),
        }
    }
}

impl std::fmt::Display for Material {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Material::Diffuse => "diffuse",
            Material::Glass => "glass",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub a: Point,
    pub b: Point,
    pub material: Material,
}

impl Segment {
    pub fn new(a: (f64, f64), b: (f64, f64), material: Material) -> Self {
        Self {
            a: Point::new(a.0, a.1),
            b: Point::new(b.0, b.1),
            material,
        }
    }

    pub fn length(&self) -> f64 {
        (self.b - self.a).norm()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Environment {
    pub segments: Vec<Segment>,
}

impl Environment {
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        for (k, s) in segments.iter().enumerate() {
            if !(s.length() > 0.0) {
                return Err(Error::Domain(format!("segment {k} has zero length")));
            }
        }
        Ok(Self { segments })
    }

    pub fn glass_segments(&self) -> impl Iterator<Item = &Segment> + '_ {
        self.segments.iter().filter(|s| s.material == Material::Glass)
    }

    /// All intersections of the ray with the environment, nearest first:
    /// `(distance, segment index)`.
    pub fn intersections(&self, origin: &Point, direction: f64) -> Vec<(f64, usize)> {
        let (dy, dx) = direction.sin_cos();
        let mut hits: Vec<(f64, usize)> = self
            .segments
            .iter()
            .enumerate()
            .filter_map(|(k, s)| {
                let e = s.b - s.a;
                let den = dx * e.y - dy * e.x;
                if den.abs() < 1e-15 {
                    return None;
                }
                let w = s.a - origin;
                let t = (w.x * e.y - w.y * e.x) / den;
                let u = (w.x * dy - w.y * dx) / den;
                (t > 1e-12 && (0.0..=1.0).contains(&u)).then_some((t, k))
            })
            .collect();
        hits.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        hits
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LidarSpec {
    pub beam_count: usize,
    /// Radians, centered on the sensor heading.
    pub field_of_view: f64,
    pub range_max: f64,
    pub range_noise_sigma: f64,
    pub diffuse_intensity_mean: f64,
    pub diffuse_intensity_sigma: f64,
    pub glass_peak_intensity: f64,
    /// Glass returns only within this angle of the surface normal.
    pub glass_specular_half_angle: f64,
    /// Angular width of the Gaussian intensity falloff around the normal.
    pub glass_peak_shape_width: f64,
}

impl Default for LidarSpec {
    fn default() -> Self {
        Self {
            beam_count: 360,
            field_of_view: TAU,
            range_max: 10.0,
            range_noise_sigma: 0.01,
            diffuse_intensity_mean: 1500.0,
            diffuse_intensity_sigma: 300.0,
            glass_peak_intensity: 6000.0,
            glass_specular_half_angle: 5f64.to_radians(),
            glass_peak_shape_width: 10f64.to_radians(),
        }
    }
}

impl LidarSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParam(m.into()));
        if self.beam_count < 1 {
            return bad("beam_count must be >= 1");
        }
        if !(self.field_of_view > 0.0 && self.field_of_view <= TAU) {
            return bad("field_of_view must be in (0, 2π]");
        }
        if !(self.range_max > 0.0) {
            return bad("range_max must be positive");
        }
        if !(self.range_noise_sigma >= 0.0 && self.diffuse_intensity_sigma >= 0.0) {
            return bad("noise sigmas must be >= 0");
        }
        if !(self.glass_peak_intensity > self.diffuse_intensity_mean) {
            return bad("glass_peak_intensity must exceed diffuse_intensity_mean");
        }
        if !(self.glass_specular_half_angle > 0.0 && self.glass_peak_shape_width > 0.0) {
            return bad("glass angles must be positive");
        }
        Ok(())
    }

    /// Beam angles relative to the heading, one per equal sector.
    pub fn beam_angles(&self) -> Vec<f64> {
        let n = self.beam_count as f64;
        (0..self.beam_count)
            .map(|k| -self.field_of_view / 2.0 + (k as f64 + 0.5) * self.field_of_view / n)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamReturn {
    pub range: f64,
    pub intensity: f64,
    pub no_return: bool,
}

/// Angle between the ray and the segment normal, in `[0, π/2]`.
pub fn incidence_angle(segment: &Segment, direction: f64) -> f64 {
    let e = (segment.b - segment.a).normalize();
    let (dy, dx) = direction.sin_cos();
    let along = (dx * e.x + dy * e.y).abs().min(1.0);
    along.asin()
}

pub fn cast_beam<R: Rng + ?Sized>(env: &Environment, origin: &Point, direction: f64, spec: &LidarSpec, rng: &mut R) -> BeamReturn {
    for (t, k) in env.intersections(origin, direction) {
        if t > spec.range_max {
            break;
        }
        let seg = &env.segments[k];
        let intensity = match seg.material {
            Material::Diffuse => {
                let v = gaussian(rng, spec.diffuse_intensity_mean, spec.diffuse_intensity_sigma);
                v.max(0.0)
            }
            Material::Glass => {
                let inc = incidence_angle(seg, direction);
                if inc > spec.glass_specular_half_angle {
                    continue;
                }
                spec.glass_peak_intensity * (-(inc / spec.glass_peak_shape_width).powi(2)).exp()
            }
        };
        let range = gaussian(rng, t, spec.range_noise_sigma).clamp(0.0, spec.range_max);
        return BeamReturn {
            range,
            intensity,
            no_return: false,
        };
    }
    BeamReturn {
        range: spec.range_max,
        intensity: 0.0,
        no_return: true,
    }
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R, mean: f64, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return mean;
    }
    Normal::new(mean, sigma).expect("sigma validated").sample(rng)
}

pub fn simulate_scan<R: Rng + ?Sized>(
    env: &Environment,
    pose: &Pose2,
    spec: &LidarSpec,
    timestamp: f64,
    rng: &mut R,
) -> Result<LaserScan> {
    let angles = spec.beam_angles();
    let origin = pose.position();
    let mut ranges = Vec::with_capacity(angles.len());
    let mut intensities = Vec::with_capacity(angles.len());
    let mut missing = Vec::new();
    for (k, a) in angles.iter().enumerate() {
        let r = cast_beam(env, &origin, pose.theta + a, spec, rng);
        ranges.push(r.range);
        intensities.push(r.intensity);
        if r.no_return {
            missing.push(k);
        }
    }
    LaserScan::new(timestamp, angles, ranges, intensities, &missing, spec.range_max)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub poses: Vec<(f64, Pose2)>,
}

impl Trajectory {
    pub fn new(poses: Vec<(f64, Pose2)>) -> Result<Self> {
        for w in poses.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::Ordering {
                    previous: w[0].0,
                    got: w[1].0,
                });
            }
        }
        Ok(Self { poses })
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    /// Closed polygon path with rounded corners, traversed `passes` times at
    /// `step` meters per waypoint, `dt` seconds apart. Starts at the first
    /// vertex heading to the second.
    pub fn rounded_loop(vertices: &[(f64, f64)], corner_radius: f64, passes: usize, step: f64, dt: f64) -> Result<Self> {
        let path = RoundedPath::new(vertices, corner_radius)?;
        if !(step > 0.0 && dt > 0.0) {
            return Err(Error::InvalidParam("step and dt must be positive".into()));
        }
        let total = path.length * passes as f64;
        let count = (total / step + 1e-9).floor() as usize;
        let poses = (0..count)
            .map(|k| (k as f64 * dt, path.pose_at((k as f64 * step) % path.length)))
            .collect();
        Self::new(poses)
    }
}

#[derive(Debug, Clone, Copy)]
enum Piece {
    Line { from: Point, heading: f64, length: f64 },
    Arc { center: Point, radius: f64, start: f64, sweep: f64 },
}

impl Piece {
    fn length(&self) -> f64 {
        match *self {
            Piece::Line { length, .. } => length,
            Piece::Arc { radius, sweep, .. } => radius * sweep.abs(),
        }
    }

    fn pose_at(&self, s: f64) -> Pose2 {
        match *self {
            Piece::Line { from, heading, .. } => {
                Pose2::new(from.x + s * heading.cos(), from.y + s * heading.sin(), heading)
            }
            Piece::Arc { center, radius, start, sweep } => {
                let phi = start + sweep.signum() * s / radius;
                let heading = phi + sweep.signum() * PI / 2.0;
                Pose2::new(center.x + radius * phi.cos(), center.y + radius * phi.sin(), normalize_angle(heading))
            }
        }
    }
}

struct RoundedPath {
    pieces: Vec<Piece>,
    length: f64,
}

impl RoundedPath {
    fn new(vertices: &[(f64, f64)], r: f64) -> Result<Self> {
        let n = vertices.len();
        if n < 3 {
            return Err(Error::InvalidParam("a loop needs at least 3 vertices".into()));
        }
        let v: Vec<Point> = vertices.iter().map(|&(x, y)| Point::new(x, y)).collect();
        let dir = |i: usize| (v[(i + 1) % n] - v[i]).normalize();
        // trim[i]: how far the corner at vertex i eats into its two edges
        let mut trim = vec![0.0; n];
        let mut arcs = vec![None; n];
        for i in 0..n {
            let d_in = dir((i + n - 1) % n);
            let d_out = dir(i);
            let sweep = normalize_angle(d_out.y.atan2(d_out.x) - d_in.y.atan2(d_in.x));
            if sweep.abs() < 1e-12 || r == 0.0 {
                continue;
            }
            let t = r * (sweep.abs() / 2.0).tan();
            let p = v[i] - d_in * t;
            let normal = if sweep > 0.0 {
                nalgebra::Vector2::new(-d_in.y, d_in.x)
            } else {
                nalgebra::Vector2::new(d_in.y, -d_in.x)
            };
            let center = p + normal * r;
            let start = (p - center).y.atan2((p - center).x);
            trim[i] = t;
            arcs[i] = Some(Piece::Arc { center, radius: r, start, sweep });
        }
        let mut pieces = Vec::new();
        for i in 0..n {
            let j = (i + 1) % n;
            let d = dir(i);
            let length = (v[j] - v[i]).norm() - trim[i] - trim[j];
            if length < -1e-9 {
                return Err(Error::InvalidParam("corner radius too large for the polygon".into()));
            }
            pieces.push(Piece::Line {
                from: v[i] + d * trim[i],
                heading: d.y.atan2(d.x),
                length: length.max(0.0),
            });
            if let Some(arc) = arcs[j] {
                pieces.push(arc);
            }
        }
        let length = pieces.iter().map(Piece::length).sum();
        Ok(Self { pieces, length })
    }

    fn pose_at(&self, mut s: f64) -> Pose2 {
        for p in &self.pieces {
            let l = p.length();
            if s <= l {
                return p.pose_at(s);
            }
            s -= l;
        }
        let last = self.pieces.last().expect("non-empty path");
        last.pose_at(last.length())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OdometryModel {
    /// Relative error on every translation increment.
    pub scale_error: f64,
    /// Heading error accumulated per meter traveled, radians.
    pub heading_drift: f64,
    pub sigma_translation: f64,
    pub sigma_rotation: f64,
}

impl Default for OdometryModel {
    fn default() -> Self {
        Self::exact()
    }
}

impl OdometryModel {
    pub fn exact() -> Self {
        Self {
            scale_error: 0.0,
            heading_drift: 0.0,
            sigma_translation: 0.0,
            sigma_rotation: 0.0,
        }
    }

    /// Systematic drift of `fraction` of the distance traveled.
    pub fn drifting(fraction: f64) -> Self {
        Self {
            scale_error: fraction,
            heading_drift: fraction,
            sigma_translation: 0.002,
            sigma_rotation: 0.001,
        }
    }

    /// Odometry readings along `truth`, starting at its first pose.
    pub fn readings<R: Rng + ?Sized>(&self, truth: &Trajectory, rng: &mut R) -> Vec<Pose2> {
        let mut out = Vec::with_capacity(truth.len());
        let Some(&(_, first)) = truth.poses.first() else {
            return out;
        };
        let mut odom = first;
        out.push(odom);
        for w in truth.poses.windows(2) {
            let d = w[0].1.between(&w[1].1);
            let dist = (d.x * d.x + d.y * d.y).sqrt();
            let scale = 1.0 + self.scale_error;
            let noisy = Pose2::new(
                d.x * scale + gaussian(rng, 0.0, self.sigma_translation),
                d.y * scale + gaussian(rng, 0.0, self.sigma_translation),
                d.theta + self.heading_drift * dist + gaussian(rng, 0.0, self.sigma_rotation),
            );
            odom = odom.compose(&noisy);
            out.push(odom);
        }
        out
    }
}

/// One simulated scan with its odometry reading and ground-truth pose.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedScan {
    pub scan: LaserScan,
    pub odometry: Pose2,
    pub truth: Pose2,
}

/// Renders one scan per waypoint. Deterministic for a fixed seed.
pub fn playback(
    env: &Environment,
    trajectory: &Trajectory,
    spec: &LidarSpec,
    odometry: &OdometryModel,
    seed: u64,
) -> Result<Vec<SimulatedScan>> {
    spec.validate()?;
    let mut odo_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6f64_6f6d);
    let readings = odometry.readings(trajectory, &mut odo_rng);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    trajectory
        .poses
        .iter()
        .zip(readings)
        .map(|(&(t, truth), odometry)| {
            Ok(SimulatedScan {
                scan: simulate_scan(env, &truth, spec, t, &mut rng)?,
                odometry,
                truth,
            })
        })
        .collect()
}

fn push_box(segs: &mut Vec<Segment>, x0: f64, y0: f64, x1: f64, y1: f64) {
    let m = Material::Diffuse;
    segs.push(Segment::new((x0, y0), (x1, y0), m));
    segs.push(Segment::new((x1, y0), (x1, y1), m));
    segs.push(Segment::new((x1, y1), (x0, y1), m));
    segs.push(Segment::new((x0, y1), (x0, y0), m));
}

/// A 2 m wide corridor ring around a 10 m × 6 m block, whose centerline is the
/// 12 m × 8 m rectangle from (0, 0) to (12, 8) (a 40 m loop). The outer wall
/// of the bottom corridor is 10 m of glass (x from 1 to 11 at y = -1) with a
/// furnished room behind it. Pillars along the walls break the corridor
/// symmetry.
pub fn corridor_loop_environment() -> Environment {
    let d = Material::Diffuse;
    let mut s = vec![
        // outer walls
        Segment::new((-1.0, -1.0), (1.0, -1.0), d),
        Segment::new((1.0, -1.0), (11.0, -1.0), Material::Glass),
        Segment::new((11.0, -1.0), (13.0, -1.0), d),
        Segment::new((13.0, -1.0), (13.0, 9.0), d),
        Segment::new((13.0, 9.0), (-1.0, 9.0), d),
        Segment::new((-1.0, 9.0), (-1.0, -1.0), d),
        // room behind the glass
        Segment::new((1.0, -1.0), (1.0, -4.0), d),
        Segment::new((1.0, -4.0), (11.0, -4.0), d),
        Segment::new((11.0, -4.0), (11.0, -1.0), d),
    ];
    // inner block
    push_box(&mut s, 1.0, 1.0, 11.0, 7.0);
    // pillars
    for &(x0, y0, x1, y1) in &[
        (3.4, 1.0, 3.7, 1.25),
        (7.9, 1.0, 8.2, 1.25),
        (12.7, 2.8, 13.0, 3.1),
        (12.7, 6.1, 13.0, 6.4),
        (9.6, 8.7, 9.9, 9.0),
        (6.3, 8.7, 6.6, 9.0),
        (2.9, 8.7, 3.2, 9.0),
        (-1.0, 3.9, -0.7, 4.2),
        (10.75, 4.3, 11.0, 4.6),
        (1.0, 2.6, 1.25, 2.9),
        (5.5, 7.0, 5.8, 7.25),
        // furniture in the room
        (4.0, -3.2, 5.2, -2.6),
        (8.0, -2.4, 8.6, -1.8),
    ] {
        push_box(&mut s, x0, y0, x1, y1);
    }
    Environment::new(s).expect("static geometry")
}

/// Waypoints along the corridor centerline, starting at (0, 4) heading
/// down the left leg, so the loop closes at the start.
pub fn corridor_loop_trajectory(passes: usize, step: f64, dt: f64) -> Trajectory {
    Trajectory::rounded_loop(&[(0.0, 4.0), (0.0, 0.0), (12.0, 0.0), (12.0, 8.0), (0.0, 8.0)], 0.5, passes, step, dt)
        .expect("static geometry")
}
