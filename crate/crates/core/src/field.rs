//! Ground-truth intensity fields.
//!
//! A field is either a mixture of isotropic Gaussian bumps over a rectangle
//! (the synthetic environments) or a bilinearly interpolated grid loaded from
//! disk. Both are immutable once built.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Extent, Lattice, Point2};

/// Resolution of the dense grid used to enforce the configured maximum.
pub const RESCALE_RESOLUTION: f64 = 0.1;

/// One Gaussian component `amplitude · exp(-‖x - center‖² / (2 width²))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub center: Point2,
    pub amplitude: f64,
    pub width: f64,
}

impl Bump {
    pub fn eval(&self, p: &Point2) -> f64 {
        self.amplitude * (-p.dist_sq(&self.center) / (2.0 * self.width * self.width)).exp()
    }
}

/// Row-major intensity samples at cell centers.
///
/// Row 0 is the row nearest `origin.y`; within a row `x` increases.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityGrid {
    pub nx: usize,
    pub ny: usize,
    pub cell: f64,
    pub origin: Point2,
    pub values: Vec<f64>,
}

impl IntensityGrid {
    pub fn extent(&self) -> Extent {
        Extent {
            min: self.origin,
            width: self.nx as f64 * self.cell,
            height: self.ny as f64 * self.cell,
        }
    }

    fn at(&self, col: usize, row: usize) -> f64 {
        self.values[row * self.nx + col]
    }

    /// Bilinear interpolation between cell centers, constant beyond the
    /// outermost centers.
    pub fn interpolate(&self, p: &Point2) -> f64 {
        let fx = ((p.x - self.origin.x) / self.cell - 0.5).clamp(0.0, (self.nx - 1) as f64);
        let fy = ((p.y - self.origin.y) / self.cell - 0.5).clamp(0.0, (self.ny - 1) as f64);
        let (c0, r0) = (fx.floor() as usize, fy.floor() as usize);
        let (c1, r1) = ((c0 + 1).min(self.nx - 1), (r0 + 1).min(self.ny - 1));
        let (tx, ty) = (fx - c0 as f64, fy - r0 as f64);
        let bottom = self.at(c0, r0) * (1.0 - tx) + self.at(c1, r0) * tx;
        let top = self.at(c0, r1) * (1.0 - tx) + self.at(c1, r1) * tx;
        bottom * (1.0 - ty) + top * ty
    }

    /// Center of cell `(col, row)`.
    pub fn cell_center(&self, col: usize, row: usize) -> Point2 {
        Point2::new(
            self.origin.x + (col as f64 + 0.5) * self.cell,
            self.origin.y + (row as f64 + 0.5) * self.cell,
        )
    }

    /// Text form: header `nx ny cell origin_x origin_y`, then one row per line.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{} {} {} {} {}\n",
            self.nx, self.ny, self.cell, self.origin.x, self.origin.y
        );
        for row in self.values.chunks(self.nx) {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        out
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let bad = |reason: String| Error::MalformedGrid {
            path: path.to_path_buf(),
            reason,
        };
        let mut tokens = text.split_whitespace();
        let mut header = |name: &str| {
            tokens
                .next()
                .ok_or_else(|| bad(format!("missing header field `{name}`")))
                .map(str::to_owned)
        };
        let nx: usize = header("width_cells")?
            .parse()
            .map_err(|e| bad(format!("width_cells: {e}")))?;
        let ny: usize = header("height_cells")?
            .parse()
            .map_err(|e| bad(format!("height_cells: {e}")))?;
        let mut float = |name: &str| -> Result<f64> {
            header(name)?
                .parse::<f64>()
                .map_err(|e| bad(format!("{name}: {e}")))
        };
        let cell = float("cell_size_m")?;
        let ox = float("origin_x")?;
        let oy = float("origin_y")?;
        if nx == 0 || ny == 0 {
            return Err(bad("grid must have at least one cell".into()));
        }
        if !(cell > 0.0 && cell.is_finite()) || !ox.is_finite() || !oy.is_finite() {
            return Err(bad("cell size must be positive and origin finite".into()));
        }
        let values = tokens
            .enumerate()
            .map(|(i, t)| {
                let v: f64 = t.parse().map_err(|e| bad(format!("value {i}: {e}")))?;
                if !v.is_finite() {
                    return Err(bad(format!("value {i} is not finite")));
                }
                if v < 0.0 {
                    return Err(bad(format!("value {i} is negative ({v})")));
                }
                Ok(v)
            })
            .collect::<Result<Vec<f64>>>()?;
        if values.len() != nx * ny {
            return Err(bad(format!(
                "expected {} values, found {}",
                nx * ny,
                values.len()
            )));
        }
        Ok(Self {
            nx,
            ny,
            cell,
            origin: Point2::new(ox, oy),
            values,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FieldSource {
    Mixture { bumps: Vec<Bump>, baseline: f64 },
    Grid(IntensityGrid),
}

/// Ground-truth intensity function over a rectangle.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    extent: Extent,
    source: FieldSource,
    clamp: bool,
    /// Dense samples at [`RESCALE_RESOLUTION`] for mixtures; `None` for grids.
    cache: Option<Vec<f64>>,
}

impl ScalarField {
    pub fn from_bumps(extent: Extent, bumps: Vec<Bump>, baseline: f64) -> Result<Self> {
        if baseline < 0.0 || !baseline.is_finite() {
            return Err(Error::InvalidConfig(format!("baseline must be >= 0, got {baseline}")));
        }
        if bumps.iter().any(|b| !(b.amplitude >= 0.0 && b.width > 0.0)) {
            return Err(Error::InvalidConfig(
                "bumps need non-negative amplitude and positive width".into(),
            ));
        }
        let mut field = Self {
            extent,
            source: FieldSource::Mixture { bumps, baseline },
            clamp: true,
            cache: None,
        };
        let lattice = extent.lattice(RESCALE_RESOLUTION);
        field.cache = Some(lattice.points().map(|p| field.eval_raw(&p)).collect());
        Ok(field)
    }

    pub fn from_grid(grid: IntensityGrid) -> Self {
        Self {
            extent: grid.extent(),
            source: FieldSource::Grid(grid),
            clamp: true,
            cache: None,
        }
    }

    /// Uniform intensity `value` everywhere.
    pub fn constant(extent: Extent, value: f64) -> Result<Self> {
        Self::from_bumps(extent, Vec::new(), value)
    }

    /// Makes out-of-extent queries an error instead of clamping them.
    pub fn with_clamping(mut self, clamp: bool) -> Self {
        self.clamp = clamp;
        self
    }

    pub fn extent(&self) -> Extent {
        self.extent
    }

    pub fn source(&self) -> &FieldSource {
        &self.source
    }

    /// Dense samples on `extent.lattice(RESCALE_RESOLUTION)`, if cached.
    pub fn cached_grid(&self) -> Option<&[f64]> {
        self.cache.as_deref()
    }

    fn eval_raw(&self, p: &Point2) -> f64 {
        match &self.source {
            FieldSource::Mixture { bumps, baseline } => {
                baseline + bumps.iter().map(|b| b.eval(p)).sum::<f64>()
            }
            FieldSource::Grid(grid) => grid.interpolate(p),
        }
    }

    pub fn evaluate(&self, p: &Point2) -> Result<f64> {
        if self.extent.contains(p) {
            return Ok(self.eval_raw(p));
        }
        if self.clamp {
            Ok(self.eval_raw(&self.extent.clamp(p)))
        } else {
            Err(Error::OutOfExtent { x: p.x, y: p.y })
        }
    }

    /// Like [`evaluate`](Self::evaluate) but always clamps.
    pub fn value(&self, p: &Point2) -> f64 {
        self.eval_raw(&self.extent.clamp(p))
    }

    /// Brute-force argmax over a lattice of spacing `resolution`; ties go to
    /// the lowest row-major index.
    pub fn global_optimum(&self, resolution: f64) -> Result<(Point2, f64)> {
        if !(resolution > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "resolution must be positive, got {resolution}"
            )));
        }
        let lattice = self.extent.lattice(resolution);
        let cached = (resolution - RESCALE_RESOLUTION).abs() < 1e-15;
        let mut best = (0usize, f64::NEG_INFINITY);
        for i in 0..lattice.len() {
            let v = match (&self.cache, cached) {
                (Some(c), true) => c[i],
                _ => self.value(&lattice.point(i)),
            };
            if v > best.1 {
                best = (i, v);
            }
        }
        let opt = match &self.source {
            // The cell centers are where grid maxima live; scan them too.
            FieldSource::Grid(g) => {
                let mut opt = (lattice.point(best.0), best.1);
                for row in 0..g.ny {
                    for col in 0..g.nx {
                        let v = g.at(col, row);
                        if v > opt.1 {
                            opt = (g.cell_center(col, row), v);
                        }
                    }
                }
                opt
            }
            FieldSource::Mixture { .. } => (lattice.point(best.0), best.1),
        };
        Ok(opt)
    }

    pub fn write_grid(&self, path: &Path, cell: f64) -> Result<()> {
        fs::write(path, self.to_grid(cell).to_text())?;
        Ok(())
    }

    /// Samples the field at cell centers of a grid covering the extent.
    pub fn to_grid(&self, cell: f64) -> IntensityGrid {
        let nx = ((self.extent.width / cell) - 1e-9).ceil().max(1.0) as usize;
        let ny = ((self.extent.height / cell) - 1e-9).ceil().max(1.0) as usize;
        let mut grid = IntensityGrid {
            nx,
            ny,
            cell,
            origin: self.extent.min,
            values: Vec::with_capacity(nx * ny),
        };
        for row in 0..ny {
            for col in 0..nx {
                let v = self.value(&grid.cell_center(col, row));
                grid.values.push(v);
            }
        }
        grid
    }
}

/// Reads a field from the whitespace grid format.
pub fn load_field_from_grid(path: &Path) -> Result<ScalarField> {
    let text = fs::read_to_string(path)?;
    Ok(ScalarField::from_grid(IntensityGrid::parse(&text, path)?))
}

/// Parameters of the random Gaussian-mixture environment generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FieldConfig {
    pub seed: u64,
    pub width: f64,
    pub height: f64,
    pub num_bumps: usize,
    pub global_max: f64,
    pub min_bump_separation: f64,
    pub min_bump_width: f64,
    pub max_bump_width: f64,
    /// Amplitudes are drawn from `[min_relative_amplitude, 1]` before rescaling.
    pub min_relative_amplitude: f64,
    pub baseline: f64,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            width: 20.0,
            height: 20.0,
            num_bumps: 6,
            global_max: 50.0,
            min_bump_separation: 3.0,
            min_bump_width: 1.0,
            max_bump_width: 2.5,
            min_relative_amplitude: 0.3,
            baseline: 0.0,
        }
    }
}

impl FieldConfig {
    pub fn validate(&self) -> Result<()> {
        Extent::new(self.width, self.height)?;
        if self.num_bumps == 0 {
            return Err(Error::InvalidConfig("num_bumps must be >= 1".into()));
        }
        if !(self.global_max > 0.0) {
            return Err(Error::InvalidConfig("global_max must be > 0".into()));
        }
        if !(self.min_bump_width > 0.0 && self.max_bump_width >= self.min_bump_width) {
            return Err(Error::InvalidConfig("invalid bump width range".into()));
        }
        if !(0.0..=1.0).contains(&self.min_relative_amplitude) {
            return Err(Error::InvalidConfig("min_relative_amplitude must lie in [0, 1]".into()));
        }
        if !(self.baseline >= 0.0 && self.baseline < self.global_max) {
            return Err(Error::InvalidConfig("baseline must lie in [0, global_max)".into()));
        }
        Ok(())
    }
}

/// Draws a seeded Gaussian mixture and rescales its amplitudes so the dense
/// grid maximum equals `global_max`.
pub fn generate_random_field(config: &FieldConfig) -> Result<ScalarField> {
    config.validate()?;
    let extent = Extent::new(config.width, config.height)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut bumps: Vec<Bump> = Vec::with_capacity(config.num_bumps);
    let mut separation = config.min_bump_separation;
    while bumps.len() < config.num_bumps {
        let mut placed = false;
        for _ in 0..200 {
            let center = Point2::new(
                rng.random_range(0.0..config.width),
                rng.random_range(0.0..config.height),
            );
            if bumps.iter().all(|b| b.center.dist(&center) >= separation) {
                let amplitude = rng.random_range(config.min_relative_amplitude..=1.0);
                let width = rng.random_range(config.min_bump_width..=config.max_bump_width);
                bumps.push(Bump {
                    center,
                    amplitude,
                    width,
                });
                placed = true;
                break;
            }
        }
        if !placed {
            // Too crowded for the requested separation.
            separation *= 0.5;
        }
    }
    let raw = ScalarField::from_bumps(extent, bumps, config.baseline)?;
    let raw_max = raw
        .cached_grid()
        .expect("mixtures are cached")
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let scale = (config.global_max - config.baseline) / (raw_max - config.baseline);
    let FieldSource::Mixture { bumps, baseline } = raw.source else {
        unreachable!()
    };
    let bumps = bumps
        .into_iter()
        .map(|b| Bump {
            amplitude: b.amplitude * scale,
            ..b
        })
        .collect();
    ScalarField::from_bumps(extent, bumps, baseline)
}

/// Dense lattice used by the rescaling step; exposed for checks.
pub fn rescale_lattice(extent: &Extent) -> Lattice {
    extent.lattice(RESCALE_RESOLUTION)
}
