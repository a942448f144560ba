//! Arm lattice, camera model and measurement synthesis.
//!
//! Every altitude level carries a square, nadir-pointing footprint. Arms at a
//! level sit on a lattice whose spacing equals the footprint side, so adjacent
//! footprints tile the extent edge to edge starting at its minimum corner.

use std::collections::HashMap;
use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::geom::{Extent, Point2, Point3};

/// Linear altitude noise model `c0 + c1 · altitude`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseModel {
    pub c0: f64,
    pub c1: f64,
}

impl Default for NoiseModel {
    /// 1.0 at 10 m and 4.0 at 70 m.
    fn default() -> Self {
        Self { c0: 0.5, c1: 0.05 }
    }
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.c0 >= 0.0 && self.c1 >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "noise model coefficients must be non-negative, got c0={} c1={}",
                self.c0, self.c1
            )));
        }
        Ok(())
    }
}

/// Measurement variance for an image taken at `altitude`.
pub fn noise_variance_at(altitude: f64, model: &NoiseModel) -> f64 {
    model.c0 + model.c1 * altitude
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AltitudeLevel {
    pub altitude: f64,
    pub footprint_side: f64,
    pub noise_variance: f64,
}

impl AltitudeLevel {
    pub fn new(altitude: f64, footprint_side: f64, noise: &NoiseModel) -> Self {
        Self {
            altitude,
            footprint_side,
            noise_variance: noise_variance_at(altitude, noise),
        }
    }
}

/// Which ground locations the posterior is tracked at.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestLayout {
    /// Union of every arm's pixel centers; an arm's index set is every test
    /// point inside its footprint.
    PixelCenters,
    /// Union of every arm's pixel centers, but an arm's index set is only
    /// its own pixels.
    OwnPixels,
    /// Cell centers of a regular grid; an arm's index set is every cell
    /// center inside its footprint.
    Grid { cell: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Arm {
    pub id: usize,
    pub position: Point3,
    pub level: usize,
    pub col: usize,
    pub row: usize,
    /// Global test-point indices observed from this arm, ascending.
    pub test_indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArmGrid {
    extent: Extent,
    levels: Vec<AltitudeLevel>,
    arms: Vec<Arm>,
    /// `(cols, rows, first arm id)` per level.
    level_dims: Vec<(usize, usize, usize)>,
    pixels_x: usize,
    pixels_y: usize,
    test_points: Vec<Point2>,
}

/// One image worth of pixel measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementBatch {
    pub arm_id: usize,
    pub pixel_locations: Vec<Point2>,
    pub values: Vec<f64>,
    pub noise_variance: f64,
}

const DEDUP_TOL: f64 = 1e-9;

fn dedup_key(p: &Point2) -> (i64, i64) {
    (
        (p.x / DEDUP_TOL).round() as i64,
        (p.y / DEDUP_TOL).round() as i64,
    )
}

/// Builds the 3D arm lattice with a square `pixels_per_side` camera.
pub fn build_arm_grid(
    extent: Extent,
    levels: &[AltitudeLevel],
    pixels_per_side: usize,
) -> Result<ArmGrid> {
    ArmGrid::build(extent, levels, pixels_per_side, pixels_per_side, TestLayout::PixelCenters)
}

impl ArmGrid {
    pub fn build(
        extent: Extent,
        levels: &[AltitudeLevel],
        pixels_x: usize,
        pixels_y: usize,
        layout: TestLayout,
    ) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::InvalidConfig("at least one altitude level is required".into()));
        }
        if pixels_x == 0 || pixels_y == 0 {
            return Err(Error::InvalidConfig("camera needs at least one pixel".into()));
        }
        for pair in levels.windows(2) {
            if !(pair[0].altitude < pair[1].altitude) {
                return Err(Error::InvalidConfig("levels must be sorted by increasing altitude".into()));
            }
            if pair[1].noise_variance < pair[0].noise_variance {
                return Err(Error::InvalidConfig(
                    "noise variance must not decrease with altitude".into(),
                ));
            }
        }
        for l in levels {
            if !(l.altitude > 0.0 && l.footprint_side > 0.0 && l.noise_variance >= 0.0) {
                return Err(Error::InvalidConfig(format!("invalid altitude level {l:?}")));
            }
        }
        let lowest = levels[0].footprint_side;
        if lowest > extent.width + 1e-9 || lowest > extent.height + 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "lowest footprint {lowest} m exceeds the {} x {} m extent",
                extent.width, extent.height
            )));
        }

        let mut grid = ArmGrid {
            extent,
            levels: levels.to_vec(),
            arms: Vec::new(),
            level_dims: Vec::new(),
            pixels_x,
            pixels_y,
            test_points: Vec::new(),
        };
        for (li, level) in levels.iter().enumerate() {
            let side = level.footprint_side;
            let cols = ((extent.width / side) - 1e-9).ceil().max(1.0) as usize;
            let rows = ((extent.height / side) - 1e-9).ceil().max(1.0) as usize;
            grid.level_dims.push((cols, rows, grid.arms.len()));
            for row in 0..rows {
                for col in 0..cols {
                    let x = extent.min.x + (col as f64 + 0.5) * side;
                    let y = extent.min.y + (row as f64 + 0.5) * side;
                    grid.arms.push(Arm {
                        id: grid.arms.len(),
                        position: Point3::new(x, y, level.altitude),
                        level: li,
                        col,
                        row,
                        test_indices: Vec::new(),
                    });
                }
            }
        }

        match layout {
            TestLayout::PixelCenters | TestLayout::OwnPixels => {
                let mut index: HashMap<(i64, i64), usize> = HashMap::new();
                for a in 0..grid.arms.len() {
                    let centers = grid.pixel_centers(&grid.arms[a]);
                    let mut ids: Vec<usize> = centers
                        .iter()
                        .map(|p| {
                            *index.entry(dedup_key(p)).or_insert_with(|| {
                                grid.test_points.push(*p);
                                grid.test_points.len() - 1
                            })
                        })
                        .collect();
                    ids.sort_unstable();
                    ids.dedup();
                    grid.arms[a].test_indices = ids;
                }
                if layout == TestLayout::PixelCenters {
                    grid.assign_by_footprint();
                }
            }
            TestLayout::Grid { cell } => {
                if !(cell > 0.0) {
                    return Err(Error::InvalidConfig("test grid cell must be positive".into()));
                }
                let nx = ((extent.width / cell) - 1e-9).ceil().max(1.0) as usize;
                let ny = ((extent.height / cell) - 1e-9).ceil().max(1.0) as usize;
                for row in 0..ny {
                    for col in 0..nx {
                        let p = Point2::new(
                            extent.min.x + (col as f64 + 0.5) * cell,
                            extent.min.y + (row as f64 + 0.5) * cell,
                        );
                        grid.test_points.push(extent.clamp(&p));
                    }
                }
                grid.assign_by_footprint();
                for a in 0..grid.arms.len() {
                    if grid.arms[a].test_indices.is_empty() {
                        let c = grid.arms[a].position.ground();
                        let nearest = (0..grid.test_points.len())
                            .min_by(|&i, &j| {
                                grid.test_points[i]
                                    .dist_sq(&c)
                                    .total_cmp(&grid.test_points[j].dist_sq(&c))
                            })
                            .expect("test grid is non-empty");
                        grid.arms[a].test_indices.push(nearest);
                    }
                }
            }
        }
        Ok(grid)
    }

    /// Sets every arm's index set to the test points inside its footprint.
    fn assign_by_footprint(&mut self) {
        for a in 0..self.arms.len() {
            let ids: Vec<usize> = (0..self.test_points.len())
                .filter(|&i| self.footprint_contains(&self.arms[a], &self.test_points[i]))
                .collect();
            self.arms[a].test_indices = ids;
        }
    }

    pub fn extent(&self) -> Extent {
        self.extent
    }

    pub fn levels(&self) -> &[AltitudeLevel] {
        &self.levels
    }

    pub fn arms(&self) -> &[Arm] {
        &self.arms
    }

    pub fn arm(&self, id: usize) -> &Arm {
        &self.arms[id]
    }

    pub fn len(&self) -> usize {
        self.arms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arms.is_empty()
    }

    pub fn test_points(&self) -> &[Point2] {
        &self.test_points
    }

    /// Pixels per image.
    pub fn pixels_per_image(&self) -> usize {
        self.pixels_x * self.pixels_y
    }

    pub fn level_dims(&self, level: usize) -> (usize, usize) {
        let (c, r, _) = self.level_dims[level];
        (c, r)
    }

    /// Lattice spacing at `level`.
    pub fn spacing(&self, level: usize) -> f64 {
        self.levels[level].footprint_side
    }

    pub fn arm_noise(&self, id: usize) -> f64 {
        self.levels[self.arms[id].level].noise_variance
    }

    /// Arm id at lattice cell `(col, row)` of `level`, if it exists.
    pub fn arm_at(&self, level: usize, col: isize, row: isize) -> Option<usize> {
        let (cols, rows, first) = *self.level_dims.get(level)?;
        if col < 0 || row < 0 || col as usize >= cols || row as usize >= rows {
            return None;
        }
        Some(first + row as usize * cols + col as usize)
    }

    /// Arm ids of one level in row-major order.
    pub fn level_arms(&self, level: usize) -> std::ops::Range<usize> {
        let (cols, rows, first) = self.level_dims[level];
        first..first + cols * rows
    }

    /// Pixel centers of an image from `arm`, clamped to the extent, row-major.
    pub fn pixel_centers(&self, arm: &Arm) -> Vec<Point2> {
        let side = self.levels[arm.level].footprint_side;
        let (px, py) = (self.pixels_x, self.pixels_y);
        let c = arm.position.ground();
        let mut out = Vec::with_capacity(px * py);
        for j in 0..py {
            for i in 0..px {
                let p = Point2::new(
                    c.x - side / 2.0 + side * (i as f64 + 0.5) / px as f64,
                    c.y - side / 2.0 + side * (j as f64 + 0.5) / py as f64,
                );
                out.push(self.extent.clamp(&p));
            }
        }
        out
    }

    /// Whether the ground point lies inside the arm's (unclamped) footprint.
    pub fn footprint_contains(&self, arm: &Arm, p: &Point2) -> bool {
        let half = self.levels[arm.level].footprint_side / 2.0;
        (p.x - arm.position.x).abs() <= half + DEDUP_TOL
            && (p.y - arm.position.y).abs() <= half + DEDUP_TOL
    }

    /// Writes `id,x,y,z,level,test_points` rows.
    pub fn write_summary_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["id", "x", "y", "z", "level", "test_points"])?;
        for a in &self.arms {
            w.write_record(&[
                a.id.to_string(),
                a.position.x.to_string(),
                a.position.y.to_string(),
                a.position.z.to_string(),
                a.level.to_string(),
                a.test_indices.len().to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn pixel_centers(arm: &Arm, grid: &ArmGrid) -> Vec<Point2> {
    grid.pixel_centers(arm)
}

/// Simulates one image: true intensity at each pixel center plus i.i.d.
/// Gaussian noise at the arm's level variance.
pub fn take_image<R: Rng + ?Sized>(
    field: &ScalarField,
    arm: &Arm,
    grid: &ArmGrid,
    rng: &mut R,
) -> MeasurementBatch {
    let noise_variance = grid.levels[arm.level].noise_variance;
    let pixel_locations = grid.pixel_centers(arm);
    let values = if noise_variance > 0.0 {
        let normal = Normal::new(0.0, noise_variance.sqrt()).expect("finite std");
        pixel_locations
            .iter()
            .map(|p| field.value(p) + normal.sample(rng))
            .collect()
    } else {
        pixel_locations.iter().map(|p| field.value(p)).collect()
    };
    MeasurementBatch {
        arm_id: arm.id,
        pixel_locations,
        values,
        noise_variance,
    }
}

/// Flight time at unit speed.
pub fn travel_time(a: &Point3, b: &Point3) -> f64 {
    let (dx, dy, dz) = (a.x - b.x, a.y - b.y, a.z - b.z);
    (dx * dx + dy * dy + dz * dz).sqrt()
}
