//! Small geometric value types shared by every module.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A ground location in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist_sq(&self, other: &Point2) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }

    pub fn dist(&self, other: &Point2) -> f64 {
        self.dist_sq(other).sqrt()
    }
}

/// A vehicle location in meters; `z` is altitude above ground.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn ground(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }
}

/// Axis-aligned rectangle `[min.x, min.x + width] × [min.y, min.y + height]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extent {
    pub min: Point2,
    pub width: f64,
    pub height: f64,
}

impl Extent {
    /// Rectangle anchored at the origin.
    pub fn new(width: f64, height: f64) -> Result<Self> {
        Self::with_origin(Point2::default(), width, height)
    }

    pub fn with_origin(min: Point2, width: f64, height: f64) -> Result<Self> {
        if !(width > 0.0 && height > 0.0 && width.is_finite() && height.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "extent must be positive, got {width} x {height}"
            )));
        }
        Ok(Self { min, width, height })
    }

    pub fn max(&self) -> Point2 {
        Point2::new(self.min.x + self.width, self.min.y + self.height)
    }

    pub fn contains(&self, p: &Point2) -> bool {
        let max = self.max();
        p.x >= self.min.x && p.x <= max.x && p.y >= self.min.y && p.y <= max.y
    }

    pub fn clamp(&self, p: &Point2) -> Point2 {
        let max = self.max();
        Point2::new(p.x.clamp(self.min.x, max.x), p.y.clamp(self.min.y, max.y))
    }

    /// Row-major lattice of points spaced `step` apart, starting at `min` and
    /// including the far edge when it falls on the lattice.
    pub fn lattice(&self, step: f64) -> Lattice {
        let nx = (self.width / step + 1e-9).floor() as usize + 1;
        let ny = (self.height / step + 1e-9).floor() as usize + 1;
        Lattice {
            origin: self.min,
            step,
            nx,
            ny,
        }
    }
}

/// Regular row-major sample grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lattice {
    pub origin: Point2,
    pub step: f64,
    pub nx: usize,
    pub ny: usize,
}

impl Lattice {
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn point(&self, index: usize) -> Point2 {
        let (row, col) = (index / self.nx, index % self.nx);
        Point2::new(
            self.origin.x + col as f64 * self.step,
            self.origin.y + row as f64 * self.step,
        )
    }

    pub fn points(&self) -> impl Iterator<Item = Point2> + '_ {
        (0..self.len()).map(move |i| self.point(i))
    }
}
