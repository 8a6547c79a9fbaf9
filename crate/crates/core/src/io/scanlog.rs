//! Scan logs: one JSON object per line, strictly increasing timestamps.
//!
//! ```text
//! {"timestamp":0.1,"odometry":{"x":0.0,"y":0.0,"theta":0.0},"range_max":10.0,
//!  "angles":[...],"ranges":[...],"intensities":[...],"no_return":[3,4]}
//! ```
//!
//! `odometry` and `no_return` may be omitted.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Pose2;
use crate::scan::LaserScan;

#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub scan: LaserScan,
    /// Absolute odometry reading taken with the scan.
    pub odometry: Option<Pose2>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Line {
    timestamp: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    odometry: Option<Pose2>,
    range_max: f64,
    angles: Vec<f64>,
    ranges: Vec<f64>,
    intensities: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    no_return: Vec<usize>,
}

/// Encodes one record as a single line (no trailing newline).
pub fn encode_record(r: &LogRecord) -> String {
    let line = Line {
        timestamp: r.scan.timestamp,
        odometry: r.odometry,
        range_max: r.scan.range_max,
        angles: r.scan.angles.clone(),
        ranges: r.scan.ranges.clone(),
        intensities: r.scan.intensities.clone(),
        no_return: r.scan.no_return_indices(),
    };
    serde_json::to_string(&line).expect("plain data serializes")
}

fn decode(text: &str) -> std::result::Result<LogRecord, String> {
    let l: Line = serde_json::from_str(text).map_err(|e| e.to_string())?;
    let scan = LaserScan::new(l.timestamp, l.angles, l.ranges, l.intensities, &l.no_return, l.range_max)
        .map_err(|e| e.to_string())?;
    Ok(LogRecord {
        scan,
        odometry: l.odometry,
    })
}

/// Streams records from a reader, validating each line and the time order.
pub struct ScanLogReader<R> {
    lines: std::io::Lines<R>,
    path: PathBuf,
    line: usize,
    last: Option<f64>,
}

impl<R: BufRead> ScanLogReader<R> {
    pub fn new(reader: R, path: impl Into<PathBuf>) -> Self {
        Self {
            lines: reader.lines(),
            path: path.into(),
            line: 0,
            last: None,
        }
    }
}

impl<R: BufRead> Iterator for ScanLogReader<R> {
    type Item = Result<LogRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let text = match self.lines.next()? {
                Ok(t) => t,
                Err(e) => return Some(Err(Error::io(&self.path, e))),
            };
            self.line += 1;
            if text.trim().is_empty() {
                continue;
            }
            let rec = match decode(&text) {
                Ok(r) => r,
                Err(m) => return Some(Err(Error::parse(&self.path, self.line, m))),
            };
            if let Some(prev) = self.last {
                if !(rec.scan.timestamp > prev) {
                    return Some(Err(Error::parse(
                        &self.path,
                        self.line,
                        format!("timestamp {} does not follow {prev}", rec.scan.timestamp),
                    )));
                }
            }
            self.last = Some(rec.scan.timestamp);
            return Some(Ok(rec));
        }
    }
}

pub fn open_scan_log(path: &Path) -> Result<ScanLogReader<BufReader<File>>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(ScanLogReader::new(BufReader::new(f), path))
}

pub fn load_scan_log(path: &Path) -> Result<Vec<LogRecord>> {
    open_scan_log(path)?.collect()
}

pub fn write_scan_log(path: &Path, records: &[LogRecord]) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for r in records {
        writeln!(w, "{}", encode_record(r)).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{corridor_loop_environment, corridor_loop_trajectory, playback, LidarSpec, OdometryModel};

    fn read(text: &str) -> Vec<Result<LogRecord>> {
        ScanLogReader::new(text.as_bytes(), "mem").collect()
    }

    #[test]
    fn empty_input_is_empty() {
        assert!(read("").is_empty());
        assert!(read("\n\n").is_empty());
    }

    #[test]
    fn length_mismatch_reports_line() {
        let text = concat!(
            r#"{"timestamp":0.0,"range_max":10.0,"angles":[0.0,0.1],"ranges":[1.0,1.0],"intensities":[5.0,5.0]}"#,
            "\n",
            r#"{"timestamp":1.0,"range_max":10.0,"angles":[0.0,0.1],"ranges":[1.0,1.0],"intensities":[5.0]}"#,
            "\n"
        );
        let r = read(text);
        assert!(r[0].is_ok());
        match &r[1] {
            Err(Error::Parse { line, .. }) => assert_eq!(*line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn time_must_increase() {
        let l = r#"{"timestamp":1.0,"range_max":10.0,"angles":[0.0],"ranges":[1.0],"intensities":[5.0]}"#;
        let r = read(&format!("{l}\n{l}\n"));
        assert!(matches!(r[1], Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn malformed_json_reports_line() {
        let r = read("\n{not json}\n");
        assert!(matches!(r[0], Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn simulated_log_round_trips() {
        let env = corridor_loop_environment();
        let traj = corridor_loop_trajectory(1, 1.0, 0.1);
        let sim = playback(&env, &traj, &LidarSpec::default(), &OdometryModel::drifting(0.005), 3).unwrap();
        let records: Vec<LogRecord> = sim
            .into_iter()
            .map(|s| LogRecord {
                scan: s.scan,
                odometry: Some(s.odometry),
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.scans");
        write_scan_log(&p, &records).unwrap();
        let back = load_scan_log(&p).unwrap();
        assert_eq!(back, records);
    }
}
