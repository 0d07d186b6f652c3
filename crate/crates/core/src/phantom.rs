//! Ellipse phantoms with closed-form projections.

use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{PoseSet, Vec2};
use crate::image::ImageGrid;
use crate::projector::{ellipse_projection_oracle, DetectorGeometry, Sinogram};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ellipse {
    pub center: Vec2,
    /// Semi-axes along the ellipse's own x and y directions.
    pub semi_axes: (f64, f64),
    /// Counter-clockwise tilt in radians.
    pub tilt: f64,
    /// Added to every point inside.
    pub density: f64,
}

impl Ellipse {
    pub fn new(center: Vec2, a: f64, b: f64, tilt_deg: f64, density: f64) -> Self {
        Self {
            center,
            semi_axes: (a, b),
            tilt: tilt_deg.to_radians(),
            density,
        }
    }

    pub fn contains(&self, p: Vec2) -> bool {
        let (s, c) = self.tilt.sin_cos();
        let dx = p[0] - self.center[0];
        let dy = p[1] - self.center[1];
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        let (a, b) = self.semi_axes;
        (u / a).powi(2) + (v / b).powi(2) <= 1.0
    }

    /// The same ellipse rotated about the origin by `angle` radians.
    pub fn rotated(&self, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        let [x, y] = self.center;
        Self {
            center: [c * x - s * y, s * x + c * y],
            tilt: self.tilt + angle,
            ..*self
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EllipsePhantom {
    pub ellipses: Vec<Ellipse>,
}

/// Toft's modified Shepp-Logan table: center, semi-axes, tilt in degrees
/// and additive density. Intensities stay within `[0, 1]`.
const SHEPP_LOGAN: [(f64, f64, f64, f64, f64, f64); 10] = [
    (0.0, 0.0, 0.69, 0.92, 0.0, 1.0),
    (0.0, -0.0184, 0.6624, 0.874, 0.0, -0.8),
    (0.22, 0.0, 0.11, 0.31, -18.0, -0.2),
    (-0.22, 0.0, 0.16, 0.41, 18.0, -0.2),
    (0.0, 0.35, 0.21, 0.25, 0.0, 0.1),
    (0.0, 0.1, 0.046, 0.046, 0.0, 0.1),
    (0.0, -0.1, 0.046, 0.046, 0.0, 0.1),
    (-0.08, -0.605, 0.046, 0.023, 0.0, 0.1),
    (0.0, -0.606, 0.023, 0.023, 0.0, 0.1),
    (0.06, -0.605, 0.023, 0.046, 0.0, 0.1),
];

impl EllipsePhantom {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn disk(radius: f64, density: f64) -> Self {
        Self {
            ellipses: vec![Ellipse::new([0.0, 0.0], radius, radius, 0.0, density)],
        }
    }

    pub fn two_disks() -> Self {
        Self {
            ellipses: vec![
                Ellipse::new([-0.2, 0.0], 0.45, 0.45, 0.0, 0.5),
                Ellipse::new([0.25, 0.15], 0.3, 0.3, 0.0, 0.5),
            ],
        }
    }

    pub fn shepp_logan() -> Self {
        Self {
            ellipses: SHEPP_LOGAN
                .iter()
                .map(|&(x, y, a, b, tilt, rho)| Ellipse::new([x, y], a, b, tilt, rho))
                .collect(),
        }
    }

    /// Shipped presets: `disk`, `two-disks`, `shepp-logan`.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "disk" => Ok(Self::disk(0.5, 1.0)),
            "two-disks" => Ok(Self::two_disks()),
            "shepp-logan" => Ok(Self::shepp_logan()),
            other => Err(Error::InvalidArgument(format!(
                "unknown phantom preset {other:?} (disk, two-disks, shepp-logan)"
            ))),
        }
    }

    /// Parses one ellipse per line: `x0 y0 a b tilt_deg density`. Blank
    /// lines and `#` comments are skipped.
    pub fn parse_table(text: &str) -> std::result::Result<Self, String> {
        let mut ellipses = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let nums: Vec<f64> = line
                .split(|c: char| c.is_whitespace() || c == ',')
                .filter(|t| !t.is_empty())
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| format!("line {}: {e}", lineno + 1))?;
            if nums.len() != 6 {
                return Err(format!(
                    "line {}: expected 6 numbers, found {}",
                    lineno + 1,
                    nums.len()
                ));
            }
            if nums[2] <= 0.0 || nums[3] <= 0.0 {
                return Err(format!("line {}: semi-axes must be positive", lineno + 1));
            }
            ellipses.push(Ellipse::new([nums[0], nums[1]], nums[2], nums[3], nums[4], nums[5]));
        }
        Ok(Self { ellipses })
    }

    pub fn load_table(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_table(&text).map_err(|msg| Error::format(path, msg))
    }

    pub fn value(&self, p: Vec2) -> f64 {
        self.ellipses
            .iter()
            .filter(|e| e.contains(p))
            .map(|e| e.density)
            .sum()
    }

    pub fn rotated(&self, angle: f64) -> Self {
        Self {
            ellipses: self.ellipses.iter().map(|e| e.rotated(angle)).collect(),
        }
    }

    /// Point-samples pixel centers, or averages a 2x2 sub-pixel grid
    /// (four samples per pixel) when `supersample` is set.
    pub fn rasterize(&self, size: usize, supersample: bool) -> Result<ImageGrid> {
        if size < 8 {
            return Err(Error::InvalidArgument(format!(
                "raster size must be at least 8, got {size}"
            )));
        }
        if !supersample {
            return Ok(ImageGrid::from_fn(size, |p| self.value(p)));
        }
        let q = 0.25 * 2.0 / size as f64;
        Ok(ImageGrid::from_fn(size, |[x, y]| {
            let mut acc = 0.0;
            for dx in [-q, q] {
                for dy in [-q, q] {
                    acc += self.value([x + dx, y + dy]);
                }
            }
            acc / 4.0
        }))
    }

    /// Exact line integral for one pose and detector coordinate. The pose
    /// translation moves the ray, which is the same as moving every ellipse
    /// center by `-t`.
    pub fn line_integral(&self, theta: f64, t: Vec2, s: f64) -> f64 {
        self.ellipses
            .iter()
            .map(|e| {
                let c = [e.center[0] - t[0], e.center[1] - t[1]];
                ellipse_projection_oracle(c, e.semi_axes, e.tilt, e.density, theta, s)
            })
            .sum()
    }

    pub fn analytic_sinogram(&self, poses: &PoseSet, detector: &DetectorGeometry) -> Sinogram {
        let centers = detector.bin_centers();
        let values = poses
            .poses
            .iter()
            .flat_map(|p| {
                centers
                    .iter()
                    .map(|&s| self.line_integral(p.theta, p.t, s))
                    .collect::<Vec<_>>()
            })
            .collect();
        Sinogram::new(values, poses.nominal_angles.clone(), *detector)
            .expect("analytic projections are finite")
    }
}
