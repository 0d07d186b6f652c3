//! Positional encoders: multiresolution hash grid, Gaussian Fourier
//! features and the identity.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geometry::Vec2;

/// Per-dimension multipliers of the spatial hash.
pub const HASH_PRIMES: [u32; 2] = [1, 2_654_435_761];

#[derive(Clone, Debug, PartialEq)]
pub struct HashGridConfig {
    pub n_levels: usize,
    pub base_resolution: usize,
    pub per_level_scale: f64,
    pub log2_table_size: u32,
    pub features_per_level: usize,
}

impl Default for HashGridConfig {
    fn default() -> Self {
        Self {
            n_levels: 8,
            base_resolution: 16,
            per_level_scale: 1.5,
            log2_table_size: 16,
            features_per_level: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FourierConfig {
    /// Number of random frequencies `m`; the encoding has `2m` entries.
    pub n_frequencies: usize,
    pub sigma: f64,
    pub seed: u64,
}

impl Default for FourierConfig {
    fn default() -> Self {
        Self {
            n_frequencies: 128,
            sigma: 10.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum EncoderSpec {
    Hash(HashGridConfig),
    Fourier(FourierConfig),
    Identity,
}

impl EncoderSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            EncoderSpec::Hash(_) => "hash",
            EncoderSpec::Fourier(_) => "fourier",
            EncoderSpec::Identity => "identity",
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct HashLevel {
    pub resolution: usize,
    pub table_len: usize,
    /// Offset of this level's table inside the parameter vector.
    pub offset: usize,
    pub dense: bool,
}

#[derive(Clone, Debug)]
pub struct HashGrid {
    pub(crate) levels: Vec<HashLevel>,
    pub(crate) features: usize,
}

/// The four corners touched at one level: parameter offsets of their
/// feature vectors, bilinear weights and weight derivatives in `x`, `y`.
#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct Corners {
    pub base: [usize; 4],
    pub w: [f64; 4],
    pub dwdx: [f64; 4],
    pub dwdy: [f64; 4],
}

impl HashGrid {
    /// Lays out one table per level starting at parameter offset `offset`.
    /// Coarse levels whose dense grid fits get exactly `(res + 1)^2` entries.
    pub(crate) fn new(cfg: &HashGridConfig, offset: usize) -> Result<Self> {
        if cfg.n_levels == 0 || cfg.features_per_level == 0 || cfg.base_resolution == 0 {
            return Err(Error::InvalidArgument(
                "hash grid needs levels, features and a base resolution".into(),
            ));
        }
        if !(cfg.per_level_scale > 1.0) || cfg.log2_table_size > 30 {
            return Err(Error::InvalidArgument(
                "per-level scale must exceed 1 and the table at most 2^30".into(),
            ));
        }
        let table = 1usize << cfg.log2_table_size;
        let mut levels: Vec<HashLevel> = Vec::with_capacity(cfg.n_levels);
        let mut off = offset;
        for l in 0..cfg.n_levels {
            let resolution =
                (cfg.base_resolution as f64 * cfg.per_level_scale.powi(l as i32)).floor() as usize;
            if let Some(prev) = levels.last() {
                if resolution <= prev.resolution {
                    return Err(Error::InvalidArgument(
                        "hash level resolutions must strictly increase".into(),
                    ));
                }
            }
            let vertices = (resolution + 1) * (resolution + 1);
            let dense = vertices <= table;
            let table_len = if dense { vertices } else { table };
            levels.push(HashLevel {
                resolution,
                table_len,
                offset: off,
                dense,
            });
            off += table_len * cfg.features_per_level;
        }
        Ok(Self {
            levels,
            features: cfg.features_per_level,
        })
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn output_dim(&self) -> usize {
        self.levels.len() * self.features
    }

    pub fn resolutions(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.resolution).collect()
    }

    pub fn n_params(&self) -> usize {
        self.levels.iter().map(|l| l.table_len * self.features).sum()
    }

    /// Table slot of integer vertex `(ix, iy)` at `level`.
    pub fn vertex_index(&self, level: usize, ix: usize, iy: usize) -> usize {
        let lv = &self.levels[level];
        if lv.dense {
            ix + iy * (lv.resolution + 1)
        } else {
            let h = (ix as u32).wrapping_mul(HASH_PRIMES[0])
                ^ (iy as u32).wrapping_mul(HASH_PRIMES[1]);
            h as usize % lv.table_len
        }
    }

    /// Cell and fractional position along one axis. Returns the lower cell
    /// index, the fraction in `[0, 1]` and `d fraction / d coordinate`.
    #[inline]
    fn locate(x: f64, res: usize) -> (usize, f64, f64) {
        let (xc, dx) = if x <= -1.0 {
            (-1.0, 0.0)
        } else if x >= 1.0 {
            (1.0, 0.0)
        } else {
            (x, res as f64 / 2.0)
        };
        let u = (xc + 1.0) / 2.0 * res as f64;
        let i = (u.floor() as usize).min(res - 1);
        (i, u - i as f64, dx)
    }

    #[inline]
    pub(crate) fn corners(&self, level: usize, p: Vec2) -> Corners {
        let lv = &self.levels[level];
        let (ix, fx, dfx) = Self::locate(p[0], lv.resolution);
        let (iy, fy, dfy) = Self::locate(p[1], lv.resolution);
        let f = self.features;
        let base = |dx: usize, dy: usize| lv.offset + self.vertex_index(level, ix + dx, iy + dy) * f;
        Corners {
            base: [base(0, 0), base(1, 0), base(0, 1), base(1, 1)],
            w: [(1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy, fx * fy],
            dwdx: [-(1.0 - fy) * dfx, (1.0 - fy) * dfx, -fy * dfx, fy * dfx],
            dwdy: [-(1.0 - fx) * dfy, -fx * dfy, (1.0 - fx) * dfy, fx * dfy],
        }
    }

    /// Cell coordinates of `p` at every level, for detecting when a
    /// perturbation crosses a cell boundary.
    pub fn cell_ids(&self, p: Vec2) -> Vec<(usize, usize, bool)> {
        self.levels
            .iter()
            .map(|lv| {
                let (ix, _, dx) = Self::locate(p[0], lv.resolution);
                let (iy, _, dy) = Self::locate(p[1], lv.resolution);
                (ix, iy, dx == 0.0 || dy == 0.0)
            })
            .collect()
    }

    pub(crate) fn encode(&self, params: &[f64], p: Vec2, out: &mut [f64], corners: &mut [Corners]) {
        let f = self.features;
        for l in 0..self.levels.len() {
            let c = self.corners(l, p);
            let o = &mut out[l * f..(l + 1) * f];
            o.fill(0.0);
            for k in 0..4 {
                let e = &params[c.base[k]..c.base[k] + f];
                for (oi, ei) in o.iter_mut().zip(e) {
                    *oi += c.w[k] * ei;
                }
            }
            corners[l] = c;
        }
    }
}

#[derive(Clone, Debug)]
pub struct FourierEncoder {
    /// `m x 2` projection matrix, fixed at construction.
    pub(crate) b: Vec<Vec2>,
}

impl FourierEncoder {
    pub fn new(cfg: &FourierConfig) -> Result<Self> {
        if cfg.n_frequencies == 0 || !(cfg.sigma > 0.0) {
            return Err(Error::InvalidArgument(
                "Fourier encoder needs frequencies and a positive scale".into(),
            ));
        }
        let normal = Normal::new(0.0, cfg.sigma)
            .map_err(|e| Error::InvalidArgument(format!("Fourier scale: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let b = (0..cfg.n_frequencies)
            .map(|_| [normal.sample(&mut rng), normal.sample(&mut rng)])
            .collect();
        Ok(Self { b })
    }

    pub fn from_matrix(b: Vec<Vec2>) -> Self {
        Self { b }
    }

    pub fn matrix(&self) -> &[Vec2] {
        &self.b
    }

    pub fn output_dim(&self) -> usize {
        2 * self.b.len()
    }

    /// `[sin(2 pi B p), cos(2 pi B p)]`.
    pub fn encode(&self, p: Vec2, out: &mut [f64]) {
        let m = self.b.len();
        for (k, b) in self.b.iter().enumerate() {
            let arg = 2.0 * PI * (b[0] * p[0] + b[1] * p[1]);
            let (s, c) = arg.sin_cos();
            out[k] = s;
            out[m + k] = c;
        }
    }

    /// Adds `sum_k dfeat_k * d feat_k / dp` into `grad`.
    pub(crate) fn vjp(&self, p: Vec2, dfeat: &[f64], grad: &mut Vec2) {
        let m = self.b.len();
        for (k, b) in self.b.iter().enumerate() {
            let arg = 2.0 * PI * (b[0] * p[0] + b[1] * p[1]);
            let (s, c) = arg.sin_cos();
            let g = 2.0 * PI * (dfeat[k] * c - dfeat[m + k] * s);
            grad[0] += g * b[0];
            grad[1] += g * b[1];
        }
    }
}

/// Standalone hash encoding of one point.
pub fn hash_encode(grid: &HashGrid, params: &[f64], p: Vec2) -> Vec<f64> {
    let mut out = vec![0.0; grid.output_dim()];
    let mut corners = vec![Corners::default(); grid.n_levels()];
    grid.encode(params, p, &mut out, &mut corners);
    out
}

/// Standalone Fourier-feature encoding of one point.
pub fn fourier_encode(enc: &FourierEncoder, p: Vec2) -> Vec<f64> {
    let mut out = vec![0.0; enc.output_dim()];
    enc.encode(p, &mut out);
    out
}
