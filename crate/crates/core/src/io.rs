//! On-disk formats.
//!
//! Arrays are stored as a flat little-endian binary payload next to a text
//! sidecar with the same basename and a `.meta` extension holding
//! `key=value` lines. Sinograms and images use 32-bit floats, checkpoints
//! 64-bit floats. Poses and loss curves are plain CSV.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::field::{
    Activation, EncoderSpec, FieldArch, FieldModel, FourierConfig, HashGridConfig, OutputActivation,
};
use crate::geometry::{PoseSet, ProjectionPose};
use crate::image::ImageGrid;
use crate::projector::{DetectorGeometry, Sinogram};

pub const FORMAT_VERSION: u32 = 1;

/// Sidecar path for a payload path: same basename, `.meta` extension.
pub fn meta_path(path: &Path) -> PathBuf {
    path.with_extension("meta")
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, data: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, data).map_err(|e| Error::io(path, e))
}

/// Parses `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_kv(text: &str) -> std::result::Result<Vec<(String, String)>, String> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected key=value", i + 1))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn format_kv(pairs: &[(String, String)]) -> String {
    let mut s = String::new();
    for (k, v) in pairs {
        let _ = writeln!(s, "{k}={v}");
    }
    s
}

pub fn read_kv(path: &Path) -> Result<Vec<(String, String)>> {
    parse_kv(&read_text(path)?).map_err(|m| Error::format(path, m))
}

pub fn write_kv(path: &Path, pairs: &[(String, String)]) -> Result<()> {
    write(path, format_kv(pairs))
}

/// Lookup helper over a parsed sidecar.
struct Meta<'a> {
    path: &'a Path,
    pairs: Vec<(String, String)>,
}

impl<'a> Meta<'a> {
    fn load(path: &'a Path) -> Result<Self> {
        let pairs = read_kv(path)?;
        let meta = Self { path, pairs };
        let version: u32 = meta.parse("format_version")?;
        if version != FORMAT_VERSION {
            return Err(Error::format(path, format!("unsupported format_version {version}")));
        }
        Ok(meta)
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.pairs.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    fn req(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::format(self.path, format!("missing key {key}")))
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.req(key)?;
        v.parse()
            .map_err(|_| Error::format(self.path, format!("bad value for {key}: {v:?}")))
    }

    fn list(&self, key: &str) -> Result<Vec<f64>> {
        let v = self.req(key)?;
        if v.is_empty() {
            return Ok(Vec::new());
        }
        v.split(',')
            .map(|x| {
                x.trim()
                    .parse()
                    .map_err(|_| Error::format(self.path, format!("bad number in {key}: {x:?}")))
            })
            .collect()
    }
}

fn join(values: impl IntoIterator<Item = f64>) -> String {
    values
        .into_iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn f32_bytes(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect()
}

fn f32_values(path: &Path, bytes: &[u8], expected: usize) -> Result<Vec<f64>> {
    if bytes.len() != 4 * expected {
        return Err(Error::format(
            path,
            format!("expected {} bytes, found {}", 4 * expected, bytes.len()),
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

/// Writes `path` (f32 payload, view-major) and its sidecar. Values are
/// rounded to single precision.
pub fn write_sinogram(path: &Path, sino: &Sinogram) -> Result<()> {
    let d = sino.detector();
    let pairs = vec![
        ("rows".into(), sino.n_views().to_string()),
        ("cols".into(), sino.n_bins().to_string()),
        ("angles_deg".into(), join(sino.angles().iter().map(|a| a.to_degrees()))),
        ("angles_rad".into(), join(sino.angles().iter().copied())),
        ("detector_bins".into(), d.n_bins.to_string()),
        ("samples_per_ray".into(), d.n_samples.to_string()),
        ("sample_step".into(), d.sample_step.to_string()),
        ("format_version".into(), FORMAT_VERSION.to_string()),
    ];
    write(path, f32_bytes(sino.values()))?;
    write_kv(&meta_path(path), &pairs)
}

pub fn read_sinogram(path: &Path) -> Result<Sinogram> {
    let mp = meta_path(path);
    let meta = Meta::load(&mp)?;
    let rows: usize = meta.parse("rows")?;
    let cols: usize = meta.parse("cols")?;
    let bins: usize = meta.parse("detector_bins")?;
    if bins != cols {
        return Err(Error::format(&mp, "detector_bins differs from cols"));
    }
    let angles = match meta.get("angles_rad") {
        Some(_) => meta.list("angles_rad")?,
        None => meta.list("angles_deg")?.into_iter().map(f64::to_radians).collect(),
    };
    if angles.len() != rows {
        return Err(Error::format(&mp, format!("{} angles for {rows} rows", angles.len())));
    }
    let detector = match (meta.get("samples_per_ray"), meta.get("sample_step")) {
        (Some(_), Some(_)) => DetectorGeometry::new(bins, meta.parse("samples_per_ray")?, meta.parse("sample_step")?)
            .map_err(|e| Error::format(&mp, e.to_string()))?,
        _ => DetectorGeometry::with_default_sampling(bins),
    };
    let values = f32_values(path, &read(path)?, rows * cols)?;
    Sinogram::new(values, angles, detector).map_err(|e| match e {
        Error::NonFinite { .. } => e,
        e => Error::format(path, e.to_string()),
    })
}

/// Writes `path` (f32 payload, row-major) and its sidecar.
pub fn write_image(path: &Path, image: &ImageGrid) -> Result<()> {
    let pairs = vec![
        ("rows".into(), image.size().to_string()),
        ("cols".into(), image.size().to_string()),
        ("extent".into(), "-1,1".into()),
        ("format_version".into(), FORMAT_VERSION.to_string()),
    ];
    write(path, f32_bytes(image.pixels()))?;
    write_kv(&meta_path(path), &pairs)
}

pub fn read_image(path: &Path) -> Result<ImageGrid> {
    let mp = meta_path(path);
    let meta = Meta::load(&mp)?;
    let rows: usize = meta.parse("rows")?;
    let cols: usize = meta.parse("cols")?;
    if rows != cols {
        return Err(Error::format(&mp, "images must be square"));
    }
    let values = f32_values(path, &read(path)?, rows * cols)?;
    ImageGrid::from_pixels(rows, values).map_err(|e| Error::format(path, e.to_string()))
}

/// Binary 8-bit PGM, min-max windowed.
pub fn pgm_bytes(image: &ImageGrid) -> Vec<u8> {
    let n = image.size();
    let (lo, hi) = image.min_max();
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut out = format!("P5\n{n} {n}\n255\n").into_bytes();
    out.extend(
        image
            .pixels()
            .iter()
            .map(|v| (((v - lo) / span) * 255.0).round().clamp(0.0, 255.0) as u8),
    );
    out
}

pub fn write_pgm(path: &Path, image: &ImageGrid) -> Result<()> {
    write(path, pgm_bytes(image))
}

fn arch_pairs(arch: &FieldArch) -> Vec<(String, String)> {
    let mut p: Vec<(String, String)> = vec![("encoder".into(), arch.encoder.kind().into())];
    match &arch.encoder {
        EncoderSpec::Hash(c) => {
            p.push(("hash_levels".into(), c.n_levels.to_string()));
            p.push(("hash_base_resolution".into(), c.base_resolution.to_string()));
            p.push(("hash_per_level_scale".into(), c.per_level_scale.to_string()));
            p.push(("hash_log2_table_size".into(), c.log2_table_size.to_string()));
            p.push(("hash_features_per_level".into(), c.features_per_level.to_string()));
        }
        EncoderSpec::Fourier(c) => {
            p.push(("fourier_frequencies".into(), c.n_frequencies.to_string()));
            p.push(("fourier_sigma".into(), c.sigma.to_string()));
            p.push(("fourier_seed".into(), c.seed.to_string()));
        }
        EncoderSpec::Identity => {}
    }
    p.push((
        "hidden".into(),
        arch.hidden.iter().map(|h| h.to_string()).collect::<Vec<_>>().join(","),
    ));
    p.push(("hidden_activation".into(), arch.hidden_activation.name().into()));
    p.push(("output_activation".into(), arch.output_activation.name().into()));
    p
}

fn arch_from_meta(meta: &Meta) -> Result<FieldArch> {
    let bad = |e: Error| Error::format(meta.path, e.to_string());
    let encoder = match meta.req("encoder")? {
        "hash" => EncoderSpec::Hash(HashGridConfig {
            n_levels: meta.parse("hash_levels")?,
            base_resolution: meta.parse("hash_base_resolution")?,
            per_level_scale: meta.parse("hash_per_level_scale")?,
            log2_table_size: meta.parse("hash_log2_table_size")?,
            features_per_level: meta.parse("hash_features_per_level")?,
        }),
        "fourier" => EncoderSpec::Fourier(FourierConfig {
            n_frequencies: meta.parse("fourier_frequencies")?,
            sigma: meta.parse("fourier_sigma")?,
            seed: meta.parse("fourier_seed")?,
        }),
        "identity" => EncoderSpec::Identity,
        other => return Err(Error::format(meta.path, format!("unknown encoder {other:?}"))),
    };
    let hidden = meta.req("hidden")?;
    let hidden = if hidden.is_empty() {
        Vec::new()
    } else {
        hidden
            .split(',')
            .map(|h| {
                h.trim()
                    .parse()
                    .map_err(|_| Error::format(meta.path, format!("bad hidden width {h:?}")))
            })
            .collect::<Result<Vec<usize>>>()?
    };
    Ok(FieldArch {
        encoder,
        hidden,
        hidden_activation: Activation::parse(meta.req("hidden_activation")?).map_err(bad)?,
        output_activation: OutputActivation::parse(meta.req("output_activation")?).map_err(bad)?,
    })
}

/// Writes the parameter vector (f64, little endian) and an architecture
/// sidecar sufficient to rebuild the model.
pub fn write_checkpoint(path: &Path, model: &FieldModel, params: &[f64]) -> Result<()> {
    if params.len() != model.n_params() {
        return Err(Error::Shape("parameter vector does not match the model".into()));
    }
    let mut pairs = arch_pairs(model.arch());
    pairs.push(("n_params".into(), params.len().to_string()));
    pairs.push(("layer_widths".into(), join(model.layer_widths().iter().map(|&w| w as f64))));
    pairs.push(("format_version".into(), FORMAT_VERSION.to_string()));
    let bytes: Vec<u8> = params.iter().flat_map(|v| v.to_le_bytes()).collect();
    write(path, bytes)?;
    write_kv(&meta_path(path), &pairs)
}

pub fn read_checkpoint(path: &Path) -> Result<(FieldModel, Vec<f64>)> {
    let mp = meta_path(path);
    let meta = Meta::load(&mp)?;
    let arch = arch_from_meta(&meta)?;
    let model = FieldModel::new(arch).map_err(|e| Error::format(&mp, e.to_string()))?;
    let n: usize = meta.parse("n_params")?;
    if n != model.n_params() {
        return Err(Error::format(&mp, format!("n_params {n} does not match the architecture")));
    }
    let bytes = read(path)?;
    if bytes.len() != 8 * n {
        return Err(Error::format(path, format!("expected {} bytes, found {}", 8 * n, bytes.len())));
    }
    let params = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok((model, params))
}

pub const POSE_HEADER: &str = "view_index,nominal_angle_rad,theta_rad,t_x,t_y";

pub fn poses_csv(poses: &PoseSet) -> String {
    let mut s = format!("{POSE_HEADER}\n");
    for (i, (p, a)) in poses.poses.iter().zip(&poses.nominal_angles).enumerate() {
        let _ = writeln!(s, "{i},{a},{},{},{}", p.theta, p.t[0], p.t[1]);
    }
    s
}

pub fn write_poses(path: &Path, poses: &PoseSet) -> Result<()> {
    write(path, poses_csv(poses))
}

pub fn read_poses(path: &Path) -> Result<PoseSet> {
    let text = read_text(path)?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(POSE_HEADER) {
        return Err(Error::format(path, format!("expected header {POSE_HEADER}")));
    }
    let mut poses = Vec::new();
    let mut nominal = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        let num = |k: usize| -> Result<f64> {
            f.get(k)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::format(path, format!("line {}: bad field {k}", i + 2)))
        };
        if f.len() != 5 || f[0].parse::<usize>().ok() != Some(poses.len()) {
            return Err(Error::format(path, format!("line {}: expected 5 fields in view order", i + 2)));
        }
        nominal.push(num(1)?);
        poses.push(ProjectionPose::new(num(2)?, [num(3)?, num(4)?]));
    }
    PoseSet::new(poses, nominal).map_err(|e| Error::format(path, e.to_string()))
}

/// `epoch,loss,lr` rows.
pub fn loss_csv(losses: &[f64], lr: impl Fn(usize) -> f64) -> String {
    let mut s = String::from("epoch,loss,lr\n");
    for (e, l) in losses.iter().enumerate() {
        let _ = writeln!(s, "{e},{l},{}", lr(e));
    }
    s
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write(path, text)
}
