//! Keeping detected glass alive across submaps.
//!
//! Every glass point detected during insertion is stored in the initial global
//! frame. In full mode each new submap is seeded from this registry, so the
//! points stay pinned even though the submap's grid starts empty. Lite mode
//! skips seeding and instead raises `p_miss` so old glass fades slowly.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point, Transform2};
use crate::grid::{CellIndex, GridParams};
use crate::submap::{GlassSink, Submap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum GlassMode {
    /// No detection; plain occupancy mapping.
    Off,
    /// Local pinning with a raised miss probability, no seeding.
    #[default]
    Lite,
    /// Local pinning plus registry seeding of every new submap.
    Full,
}

impl std::str::FromStr for GlassMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "off" => Ok(GlassMode::Off),
            "lite" => Ok(GlassMode::Lite),
            "full" => Ok(GlassMode::Full),
            other => Err(Error::Config(format!("unknown glass mode '{other}' (off|lite|full)"))),
        }
    }
}

impl std::fmt::Display for GlassMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            GlassMode::Off => "off",
            GlassMode::Lite => "lite",
            GlassMode::Full => "full",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GlassModeConfig {
    pub mode: GlassMode,
    /// Miss probability used in lite mode.
    pub lite_p_miss: f64,
    /// Registry points within this distance (meters) of a new submap's
    /// origin are seeded into it.
    pub seed_radius: f64,
}

impl Default for GlassModeConfig {
    fn default() -> Self {
        Self {
            mode: GlassMode::Lite,
            lite_p_miss: 0.499,
            seed_radius: 10.0,
        }
    }
}

impl GlassModeConfig {
    pub fn with_mode(mode: GlassMode) -> Self {
        Self {
            mode,
            ..Self::default()
        }
    }

    pub fn detection_enabled(&self) -> bool {
        self.mode != GlassMode::Off
    }

    pub fn seeding_enabled(&self) -> bool {
        self.mode == GlassMode::Full
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lite_p_miss > 0.0 && self.lite_p_miss < 0.5) {
            return Err(Error::InvalidParam(format!(
                "lite_p_miss must be in (0, 0.5), got {}",
                self.lite_p_miss
            )));
        }
        if !(self.seed_radius >= 0.0) {
            return Err(Error::InvalidParam("seed_radius must be >= 0".into()));
        }
        Ok(())
    }
}

/// Miss probability actually used for insertion under `config`.
pub fn effective_miss_probability(config: &GlassModeConfig, params: &GridParams) -> f64 {
    match config.mode {
        GlassMode::Lite => config.lite_p_miss,
        GlassMode::Off | GlassMode::Full => params.p_miss,
    }
}

/// `params` with the miss probability for `config` substituted.
pub fn effective_grid_params(config: &GlassModeConfig, params: &GridParams) -> GridParams {
    GridParams {
        p_miss: effective_miss_probability(config, params),
        ..*params
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlassPoint {
    /// Initial-global-frame coordinates.
    pub point: Point,
    pub first_submap: usize,
}

/// Append-only store of detected glass points in the initial global frame.
///
/// Every registration is kept; seeding walks one representative per
/// resolution-sized cell of the initial frame.
#[derive(Debug, Clone)]
pub struct GlassPointRegistry {
    resolution: f64,
    points: Vec<GlassPoint>,
    cells: HashMap<CellIndex, usize>,
    representatives: Vec<usize>,
}

impl GlassPointRegistry {
    pub fn new(resolution: f64) -> Self {
        Self {
            resolution,
            points: Vec::new(),
            cells: HashMap::new(),
            representatives: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[GlassPoint] {
        &self.points
    }

    pub fn distinct_cells(&self) -> usize {
        self.representatives.len()
    }

    /// One point per occupied initial-frame cell, in first-seen order.
    pub fn representatives(&self) -> impl Iterator<Item = &GlassPoint> + '_ {
        self.representatives.iter().map(move |&i| &self.points[i])
    }

    /// Stores `h_k · point`. Returns whether it landed in a new cell.
    pub fn register(&mut self, point: Point, h_k: &Transform2, submap_id: usize) -> bool {
        let p = h_k.apply(&point);
        self.push_initial(p, submap_id)
    }

    /// Stores a point already expressed in the initial frame.
    pub fn push_initial(&mut self, p: Point, submap_id: usize) -> bool {
        let idx = self.points.len();
        self.points.push(GlassPoint {
            point: p,
            first_submap: submap_id,
        });
        let cell = CellIndex::new(
            (p.x / self.resolution).floor() as i32,
            (p.y / self.resolution).floor() as i32,
        );
        let mut fresh = false;
        self.cells.entry(cell).or_insert_with(|| {
            fresh = true;
            idx
        });
        if fresh {
            self.representatives.push(idx);
        }
        fresh
    }
}

impl GlassSink for GlassPointRegistry {
    fn register(&mut self, point: Point, h_k: &Transform2, submap_id: usize) {
        GlassPointRegistry::register(self, point, h_k, submap_id);
    }
}

/// Seeds a freshly created submap with registry glass within its span.
/// Returns the number of distinct cells written.
pub fn seed_submap(
    submap: &mut Submap,
    registry: &GlassPointRegistry,
    h_k: &Transform2,
    params: &GridParams,
    seed_radius: f64,
) -> Result<usize> {
    if submap.insertion_count != 0 {
        return Err(Error::State(format!(
            "submap {} already holds {} scan(s); only fresh submaps can be seeded",
            submap.id, submap.insertion_count
        )));
    }
    Ok(seed_cells(submap, registry, h_k, params, seed_radius))
}

pub(crate) fn seed_cells(
    submap: &mut Submap,
    registry: &GlassPointRegistry,
    h_k: &Transform2,
    params: &GridParams,
    seed_radius: f64,
) -> usize {
    let to_current = h_k.inverse();
    let to_submap = submap.global_pose.to_transform().inverse();
    let origin = submap.global_pose.position();
    let mut cells: Vec<CellIndex> = registry
        .representatives()
        .map(|g| to_current.apply(&g.point))
        .filter(|x| (x - origin).norm() <= seed_radius)
        .map(|x| submap.grid.index_of(&to_submap.apply(&x)))
        .collect();
    cells.sort_unstable();
    cells.dedup();
    for &c in &cells {
        submap.pin_glass(c, params);
    }
    cells.len()
}
