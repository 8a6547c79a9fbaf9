//! Laser sweeps and the per-beam glass mask.

use crate::error::{Error, Result};
use crate::geometry::Point;

/// One LiDAR sweep.
///
/// Beams without a return keep `range == range_max` and are flagged in
/// `no_return`; they never carry NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct LaserScan {
    pub timestamp: f64,
    pub angles: Vec<f64>,
    pub ranges: Vec<f64>,
    pub intensities: Vec<f64>,
    pub no_return: Vec<bool>,
    pub range_max: f64,
}

impl LaserScan {
    /// Builds a scan and checks its invariants. Beams listed in
    /// `no_return_idx` are normalized to the `range_max` sentinel.
    pub fn new(
        timestamp: f64,
        angles: Vec<f64>,
        mut ranges: Vec<f64>,
        intensities: Vec<f64>,
        no_return_idx: &[usize],
        range_max: f64,
    ) -> Result<Self> {
        let n = angles.len();
        if n == 0 {
            return Err(Error::Domain("scan has no beams".into()));
        }
        if ranges.len() != n || intensities.len() != n {
            return Err(Error::Domain(format!(
                "beam arrays differ in length: {} angles, {} ranges, {} intensities",
                n,
                ranges.len(),
                intensities.len()
            )));
        }
        if !(range_max > 0.0 && range_max.is_finite()) {
            return Err(Error::Domain(format!("range_max must be positive, got {range_max}")));
        }
        if angles.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Domain("beam angles must be strictly increasing".into()));
        }
        let mut no_return = vec![false; n];
        for &i in no_return_idx {
            if i >= n {
                return Err(Error::Domain(format!("no-return index {i} out of range")));
            }
            no_return[i] = true;
            ranges[i] = range_max;
        }
        for (i, &r) in ranges.iter().enumerate() {
            if !no_return[i] && !(0.0..=range_max).contains(&r) {
                return Err(Error::Domain(format!(
                    "beam {i}: range {r} outside [0, {range_max}]"
                )));
            }
        }
        if intensities.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite intensity".into()));
        }
        Ok(Self {
            timestamp,
            angles,
            ranges,
            intensities,
            no_return,
            range_max,
        })
    }

    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }

    pub fn no_return_indices(&self) -> Vec<usize> {
        self.no_return
            .iter()
            .enumerate()
            .filter_map(|(i, &f)| f.then_some(i))
            .collect()
    }

    /// Intensity as seen by the glass detector: no-return beams read 0.
    pub fn effective_intensity(&self, i: usize) -> f64 {
        if self.no_return[i] {
            0.0
        } else {
            self.intensities[i]
        }
    }

    /// Endpoint of beam `i` in the sensor frame.
    pub fn endpoint(&self, i: usize) -> Point {
        let (s, c) = self.angles[i].sin_cos();
        Point::new(self.ranges[i] * c, self.ranges[i] * s)
    }

    /// Sensor-frame endpoints of all beams that returned.
    pub fn valid_endpoints(&self) -> Vec<Point> {
        (0..self.len())
            .filter(|&i| !self.no_return[i])
            .map(|i| self.endpoint(i))
            .collect()
    }
}

/// Per-beam glass flags for one scan.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GlassMask {
    pub flags: Vec<bool>,
}

impl GlassMask {
    pub fn none(len: usize) -> Self {
        Self {
            flags: vec![false; len],
        }
    }

    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }

    pub fn count(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }

    pub fn is_glass(&self, i: usize) -> bool {
        self.flags[i]
    }
}
