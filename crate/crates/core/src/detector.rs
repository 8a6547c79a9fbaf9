//! Glass detection from the intensity profile of a single sweep.
//!
//! Near-normal incidence on glass produces a sharp intensity spike. A rising
//! edge (intensity at least `thresh` and a jump of at least `grad` over the
//! previous beam) opens a candidate at index `h`; each following beam that is
//! still above `thresh` without a new jump, and lies within `width` beams of
//! `h`, marks the midpoint `floor((p + h) / 2)` as glass.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scan::{GlassMask, LaserScan};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorParams {
    /// Minimum intensity (sensor counts) for a beam to be considered.
    pub thresh: f64,
    /// Minimum beam-to-beam intensity increase that counts as a rising edge.
    pub grad: f64,
    /// Maximum profile width, in beams, measured from the rising edge.
    pub width: usize,
}

impl Default for DetectorParams {
    /// Lab calibration for acrylic, glass and polycarbonate panels.
    fn default() -> Self {
        Self {
            thresh: 3000.0,
            grad: 500.0,
            width: 10,
        }
    }
}

impl DetectorParams {
    /// Parameters recommended for the public `slam_glass` office dataset.
    pub fn slam_glass_dataset() -> Self {
        Self {
            thresh: 8000.0,
            grad: 4000.0,
            width: 5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.thresh > 0.0) {
            return Err(Error::InvalidParam(format!("thresh must be > 0, got {}", self.thresh)));
        }
        if !(self.grad >= 0.0) {
            return Err(Error::InvalidParam(format!("grad must be >= 0, got {}", self.grad)));
        }
        if self.width < 1 {
            return Err(Error::InvalidParam("width must be >= 1".into()));
        }
        Ok(())
    }
}

/// Classifies each beam of `scan` as glass or not.
pub fn detect_glass(scan: &LaserScan, params: &DetectorParams) -> Result<GlassMask> {
    params.validate()?;
    let intensities: Vec<f64> = (0..scan.len()).map(|i| scan.effective_intensity(i)).collect();
    detect_in_profile(&intensities, params)
}

/// Same as [`detect_glass`] on a bare intensity profile.
pub fn detect_in_profile(intensities: &[f64], params: &DetectorParams) -> Result<GlassMask> {
    if intensities.len() < 2 {
        return Err(Error::ScanTooShort(intensities.len()));
    }
    let mut mask = GlassMask::none(intensities.len());
    let mut candidate: Option<usize> = None;

    for (p, pair) in intensities.windows(2).enumerate().map(|(i, w)| (i + 1, w)) {
        let (prev, cur) = (pair[0], pair[1]);
        if cur < params.thresh {
            continue;
        }
        if cur - prev >= params.grad {
            candidate = Some(p);
        } else if let Some(h) = candidate {
            if p - h <= params.width {
                mask.flags[(p + h) / 2] = true;
            }
        }
    }
    Ok(mask)
}

/// Intensity profile rows around the strongest beam, for picking detector
/// parameters by hand: `(index, angle, range, intensity, difference)`.
pub fn intensity_profile(scan: &LaserScan, half_window: usize) -> Vec<(usize, f64, f64, f64, f64)> {
    if scan.is_empty() {
        return Vec::new();
    }
    let peak = (0..scan.len())
        .max_by(|&a, &b| {
            scan.effective_intensity(a)
                .total_cmp(&scan.effective_intensity(b))
                .then(b.cmp(&a))
        })
        .unwrap_or(0);
    let lo = peak.saturating_sub(half_window);
    let hi = (peak + half_window).min(scan.len() - 1);
    (lo..=hi)
        .map(|i| {
            let cur = scan.effective_intensity(i);
            let diff = if i == 0 { 0.0 } else { cur - scan.effective_intensity(i - 1) };
            (i, scan.angles[i], scan.ranges[i], cur, diff)
        })
        .collect()
}
