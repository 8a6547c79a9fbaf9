//! File formats: scan logs, text tables, and map image + metadata pairs.

mod scanlog;
mod text;

pub use scanlog::{encode_record, load_scan_log, open_scan_log, write_scan_log, LogRecord, ScanLogReader};
pub use text::{
    format_environment, format_registry, format_trajectory, load_environment, load_trajectory, parse_environment,
    parse_registry, parse_trajectory, read_text, write_bytes,
};

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::grid::CellIndex;
use crate::map::{MapThresholds, RenderedMap, PIXEL_FREE, PIXEL_OCCUPIED};

/// Writes `<dir>/<name>.pgm` and `<dir>/<name>.yaml`; returns both paths.
pub fn write_map(dir: &Path, name: &str, map: &RenderedMap, t: &MapThresholds) -> Result<(PathBuf, PathBuf)> {
    let image = format!("{name}.pgm");
    let pgm = dir.join(&image);
    let yaml = dir.join(format!("{name}.yaml"));
    write_bytes(&pgm, map.to_pgm(t))?;
    write_bytes(&yaml, map.metadata(&image, t))?;
    Ok((pgm, yaml))
}

fn pgm_header(bytes: &[u8], path: &Path) -> Result<(usize, usize, usize)> {
    // magic, width, height, maxval; whitespace separated, `#` comments allowed
    let mut fields = Vec::new();
    let mut k = 0;
    while fields.len() < 4 {
        while k < bytes.len() && bytes[k].is_ascii_whitespace() {
            k += 1;
        }
        if k < bytes.len() && bytes[k] == b'#' {
            while k < bytes.len() && bytes[k] != b'\n' {
                k += 1;
            }
            continue;
        }
        let start = k;
        while k < bytes.len() && !bytes[k].is_ascii_whitespace() {
            k += 1;
        }
        if start == k {
            return Err(Error::parse(path, 1, "truncated header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..k]).into_owned());
    }
    if fields[0] != "P5" {
        return Err(Error::parse(path, 1, format!("expected P5, found {}", fields[0])));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| Error::parse(path, 1, format!("bad header field '{s}'")));
    let (w, h, max) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if max != 255 {
        return Err(Error::parse(path, 1, format!("maxval {max} unsupported")));
    }
    // exactly one whitespace byte separates the header from the raster
    Ok((w, h, k + 1))
}

/// Reads a map written by [`write_map`] back from its metadata file. The
/// image only tells the class of each cell, so occupied cells come back
/// halfway between `occupied` and 1, free cells at half of `free`, and
/// unknown cells as `None`.
pub fn read_map(yaml: &Path) -> Result<(RenderedMap, MapThresholds)> {
    let text = read_text(yaml)?;
    let mut image = None;
    let mut resolution = None;
    let mut origin = None;
    let mut t = MapThresholds::default();
    for (n, line) in text.lines().enumerate() {
        let Some((key, value)) = line.split_once(':') else { continue };
        let value = value.trim();
        let bad = || Error::parse(yaml, n + 1, format!("bad value for {key}: '{value}'"));
        match key.trim() {
            "image" => image = Some(value.to_string()),
            "resolution" => resolution = Some(value.parse::<f64>().map_err(|_| bad())?),
            "occupied_thresh" => t.occupied = value.parse().map_err(|_| bad())?,
            "free_thresh" => t.free = value.parse().map_err(|_| bad())?,
            "origin" => {
                let inner = value.trim_start_matches('[').trim_end_matches(']');
                let v: Vec<f64> = inner
                    .split(',')
                    .map(|s| s.trim().parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad())?;
                if v.len() != 3 {
                    return Err(bad());
                }
                origin = Some((v[0], v[1]));
            }
            _ => {}
        }
    }
    let missing = |k: &str| Error::parse(yaml, 0, format!("missing '{k}'"));
    let image = image.ok_or_else(|| missing("image"))?;
    let res = resolution.ok_or_else(|| missing("resolution"))?;
    let (ox, oy) = origin.ok_or_else(|| missing("origin"))?;
    if !(res > 0.0) {
        return Err(Error::parse(yaml, 0, "resolution must be positive"));
    }
    let pgm = yaml.parent().unwrap_or(Path::new(".")).join(image);
    let bytes = std::fs::read(&pgm).map_err(|e| Error::io(&pgm, e))?;
    let (w, h, start) = pgm_header(&bytes, &pgm)?;
    if bytes.len() != start + w * h {
        return Err(Error::parse(&pgm, 0, format!("expected {} pixels, found {}", w * h, bytes.len().saturating_sub(start))));
    }
    let min = CellIndex::new((ox / res).round() as i32, (oy / res).round() as i32);
    let mut cells = vec![None; w * h];
    for row in 0..h {
        // the image runs top-down, the cells bottom-up
        let src = &bytes[start + (h - 1 - row) * w..][..w];
        for (col, &px) in src.iter().enumerate() {
            cells[row * w + col] = match px {
                PIXEL_OCCUPIED => Some((t.occupied + 1.0) / 2.0),
                PIXEL_FREE => Some(t.free / 2.0),
                _ => None,
            };
        }
    }
    Ok((RenderedMap::from_cells(res, min, w, h, cells)?, t))
}
