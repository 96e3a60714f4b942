//! Shared vocabulary: fence geometry, supply/demand entities and episode configuration.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point inside the geo-fence, in meters from the south-west corner.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub x: f64,
    pub y: f64,
}

impl Location {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    /// Straight-line distance in meters.
    pub fn distance(&self, other: &Location) -> f64 {
        distance(*self, *other)
    }
}

/// Euclidean distance between two locations, in meters.
pub fn distance(a: Location, b: Location) -> f64 {
    (a.x - b.x).hypot(a.y - b.y)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GridCell {
    pub row: usize,
    pub col: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OrderId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DriverId(pub u32);

impl fmt::Display for OrderId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "o{}", self.0)
    }
}

impl fmt::Display for DriverId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "d{}", self.0)
    }
}

/// A ride request. Cancels once it has waited `patience` seconds unserved.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Order {
    pub id: OrderId,
    pub origin: Location,
    pub destination: Location,
    pub price: f64,
    pub appear_time: f64,
    pub patience: f64,
    pub trip_duration: f64,
}

/// A driver coming online. While idle, leaves the platform with
/// probability `offline_hazard` at every batch boundary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Driver {
    pub id: DriverId,
    pub position: Location,
    pub appear_time: f64,
    pub offline_hazard: f64,
}

/// Which quantity the outer reward tracks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RewardMode {
    /// Negative pickup distance of assigned pairs (passenger view).
    #[serde(rename = "APD")]
    Apd,
    /// Total price of assigned orders (driver view).
    #[serde(rename = "TDI")]
    Tdi,
}

impl fmt::Display for RewardMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RewardMode::Apd => "APD",
            RewardMode::Tdi => "TDI",
        })
    }
}

impl std::str::FromStr for RewardMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "APD" => Ok(RewardMode::Apd),
            "TDI" => Ok(RewardMode::Tdi),
            _ => Err(Error::InvalidConfig(format!("unknown reward mode `{s}`"))),
        }
    }
}

/// Episode-wide settings shared by the generator, simulator and environment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub episode_length: f64,
    pub batch_window: f64,
    pub fence_width: f64,
    pub fence_height: f64,
    pub cell_size: f64,
    pub reward_mode: RewardMode,
    pub seed: u64,
    /// Meters per second used to turn pickup distance into pickup time.
    pub pickup_speed: f64,
    /// Filtering radius for eligible pairs, in meters.
    pub radius: f64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        // 6.4 km x 4.8 km is ~30 km², split into 8 x 6 = 48 cells.
        Self {
            episode_length: 600.0,
            batch_window: 2.0,
            fence_width: 6400.0,
            fence_height: 4800.0,
            cell_size: 800.0,
            reward_mode: RewardMode::Tdi,
            seed: 0,
            pickup_speed: 6.0,
            radius: 3000.0,
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("episode_length", self.episode_length),
            ("batch_window", self.batch_window),
            ("fence_width", self.fence_width),
            ("fence_height", self.fence_height),
            ("cell_size", self.cell_size),
            ("pickup_speed", self.pickup_speed),
            ("radius", self.radius),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        let ratio = self.episode_length / self.batch_window;
        if (ratio - ratio.round()).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "episode_length {} is not a multiple of batch_window {}",
                self.episode_length, self.batch_window
            )));
        }
        Ok(())
    }

    /// Number of decision batches in one episode.
    pub fn n_batches(&self) -> usize {
        (self.episode_length / self.batch_window).round() as usize
    }

    pub fn grid_rows(&self) -> usize {
        (self.fence_height / self.cell_size).ceil().max(1.0) as usize
    }

    pub fn grid_cols(&self) -> usize {
        (self.fence_width / self.cell_size).ceil().max(1.0) as usize
    }

    pub fn n_cells(&self) -> usize {
        self.grid_rows() * self.grid_cols()
    }

    pub fn contains(&self, p: Location) -> bool {
        p.x >= 0.0 && p.y >= 0.0 && p.x <= self.fence_width && p.y <= self.fence_height
    }

    /// Clamps a point onto the fence.
    pub fn clamp(&self, p: Location) -> Location {
        Location::new(p.x.clamp(0.0, self.fence_width), p.y.clamp(0.0, self.fence_height))
    }

    /// Flat index of a cell, row-major.
    pub fn cell_index(&self, cell: GridCell) -> usize {
        cell.row * self.grid_cols() + cell.col
    }
}

/// Grid cell containing `p`; rows run along y, columns along x.
pub fn cell_of(p: Location, cfg: &EpisodeConfig) -> Result<GridCell> {
    if !(p.x.is_finite() && p.y.is_finite()) || !cfg.contains(p) {
        return Err(Error::OutOfFence { x: p.x, y: p.y });
    }
    // Points on the far edge belong to the last cell.
    let row = ((p.y / cfg.cell_size).floor() as usize).min(cfg.grid_rows() - 1);
    let col = ((p.x / cfg.cell_size).floor() as usize).min(cfg.grid_cols() - 1);
    Ok(GridCell { row, col })
}

/// A candidate (order, driver) match and its feature row.
#[derive(Clone, Debug, PartialEq)]
pub struct OdPair {
    pub order_id: OrderId,
    pub driver_id: DriverId,
    pub pickup_distance: f64,
    pub price: f64,
    pub features: Vec<f64>,
}
