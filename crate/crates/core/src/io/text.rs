//! Whitespace-separated text formats. Blank lines and `#` comments are
//! ignored everywhere.
//!
//! | file        | columns                      |
//! |-------------|------------------------------|
//! | environment | `x1 y1 x2 y2 diffuse\|glass` |
//! | trajectory  | `t x y theta`                |
//! | registry    | `x y first_submap`           |

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{Point, Pose2};
use crate::glass::GlassPointRegistry;
use crate::sim::{Environment, Material, Segment, Trajectory};

fn rows<'a>(text: &'a str) -> impl Iterator<Item = (usize, Vec<&'a str>)> + 'a {
    text.lines().enumerate().filter_map(|(k, l)| {
        let l = l.split('#').next().unwrap_or("").trim();
        (!l.is_empty()).then(|| (k + 1, l.split_whitespace().collect()))
    })
}

fn number(path: &Path, line: usize, s: &str) -> Result<f64> {
    let v: f64 = s.parse().map_err(|_| Error::parse(path, line, format!("'{s}' is not a number")))?;
    if !v.is_finite() {
        return Err(Error::parse(path, line, format!("'{s}' is not finite")));
    }
    Ok(v)
}

fn expect_columns(path: &Path, line: usize, cols: &[&str], n: usize) -> Result<()> {
    if cols.len() != n {
        return Err(Error::parse(path, line, format!("expected {n} columns, found {}", cols.len())));
    }
    Ok(())
}

/// `path` is only used in error messages.
pub fn parse_environment(text: &str, path: &Path) -> Result<Environment> {
    let mut segs = Vec::new();
    for (line, cols) in rows(text) {
        expect_columns(path, line, &cols, 5)?;
        let mut v = [0.0; 4];
        for (k, c) in cols[..4].iter().enumerate() {
            v[k] = number(path, line, c)?;
        }
        let m: Material = cols[4].parse().map_err(|e: Error| Error::parse(path, line, e.to_string()))?;
        segs.push(Segment::new((v[0], v[1]), (v[2], v[3]), m));
    }
    Environment::new(segs).map_err(|e| Error::parse(path, 0, e.to_string()))
}

pub fn format_environment(env: &Environment) -> String {
    let mut out = String::from("# x1 y1 x2 y2 material\n");
    for s in &env.segments {
        let _ = writeln!(out, "{} {} {} {} {}", s.a.x, s.a.y, s.b.x, s.b.y, s.material);
    }
    out
}

pub fn parse_trajectory(text: &str, path: &Path) -> Result<Trajectory> {
    let mut poses = Vec::new();
    for (line, cols) in rows(text) {
        expect_columns(path, line, &cols, 4)?;
        let t = number(path, line, cols[0])?;
        if let Some(&(prev, _)) = poses.last() {
            if !(t > prev) {
                return Err(Error::parse(path, line, format!("timestamp {t} does not follow {prev}")));
            }
        }
        let p = Pose2::new(number(path, line, cols[1])?, number(path, line, cols[2])?, number(path, line, cols[3])?);
        poses.push((t, p));
    }
    Trajectory::new(poses)
}

/// Shortest round-trip decimal for every value, so the output is exact and
/// byte-stable.
pub fn format_trajectory(poses: &[(f64, Pose2)]) -> String {
    let mut out = String::from("# t x y theta\n");
    for (t, p) in poses {
        let _ = writeln!(out, "{t} {} {} {}", p.x, p.y, p.theta);
    }
    out
}

pub fn format_registry(registry: &GlassPointRegistry) -> String {
    let mut out = String::from("# x y first_submap\n");
    for g in registry.points() {
        let _ = writeln!(out, "{} {} {}", g.point.x, g.point.y, g.first_submap);
    }
    out
}

/// Registry points as `(point, first_submap)`.
pub fn parse_registry(text: &str, path: &Path) -> Result<Vec<(Point, usize)>> {
    let mut out = Vec::new();
    for (line, cols) in rows(text) {
        expect_columns(path, line, &cols, 3)?;
        let id = cols[2]
            .parse()
            .map_err(|_| Error::parse(path, line, format!("'{}' is not a submap id", cols[2])))?;
        out.push((Point::new(number(path, line, cols[0])?, number(path, line, cols[1])?), id));
    }
    Ok(out)
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_bytes(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_environment(path: &Path) -> Result<Environment> {
    parse_environment(&read_text(path)?, path)
}

pub fn load_trajectory(path: &Path) -> Result<Trajectory> {
    parse_trajectory(&read_text(path)?, path)
}
