use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use selfcal_core::analytic::{fbp_reconstruct, FilterKind, FilterSpec};
use selfcal_core::field::{EncoderSpec, FieldArch, FieldModel, FourierConfig};
use selfcal_core::geometry::PoseSet;
use selfcal_core::io;
use selfcal_core::metrics::{data_range_of, pose_report, MetricsBlock};
use selfcal_core::par::Exec;
use selfcal_core::phantom::EllipsePhantom;
use selfcal_core::projector::{
    project_image, simulate_motion_sinogram_with, DetectorGeometry, MotionLevel,
};
use selfcal_core::trainer::{lr_at, train_with, PoseGauge, RenderMode, TrainConfig};
use selfcal_core::{Error, ImageGrid, Sinogram};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Numerical(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Numerical(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else if e.is_io() {
            CliError::Io(e.to_string())
        } else {
            CliError::Usage(e.to_string())
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "selfcal", version, about, args_override_self = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Rasterize a phantom and write sparse (moving) and dense (static) sinograms.
    Simulate(SimulateArgs),
    /// Fit a neural field and per-view poses to a sparse sinogram.
    Reconstruct(ReconstructArgs),
    /// Filtered back-projection of a sinogram.
    Fbp(FbpArgs),
    /// Collect run reports into one CSV table.
    Evaluate(EvaluateArgs),
}

#[derive(Args, Debug)]
pub struct Common {
    /// key=value file with default flag values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    out: PathBuf,
    /// Preset phantom: disk, two-disks or shepp-logan.
    #[arg(long, default_value = "shepp-logan")]
    phantom: String,
    /// Ellipse table (x0 y0 a b tilt_deg density per line) instead of a preset.
    #[arg(long, conflicts_with = "image")]
    phantom_file: Option<PathBuf>,
    /// Image in the binary+sidecar format instead of a phantom.
    #[arg(long)]
    image: Option<PathBuf>,
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    views: Option<usize>,
    #[arg(long)]
    dense_views: Option<usize>,
    /// Motion level k: rotation in U(-k, k) degrees and translation in
    /// U(-k, k) pixels.
    #[arg(long, default_value_t = 0.0)]
    motion_level: f64,
    #[arg(long)]
    motion_rot: Option<f64>,
    #[arg(long)]
    motion_trans: Option<f64>,
    /// Comma-separated motion levels; one subdirectory `k<level>` each.
    #[arg(long, value_delimiter = ',')]
    grid: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// 256 pixels, 90 sparse views, 720 dense views.
    #[arg(long)]
    full_scale: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum EncoderArg {
    Hash,
    Fourier,
    Identity,
}

#[derive(Args, Debug)]
pub struct ReconstructArgs {
    #[command(flatten)]
    common: Common,
    /// Directory written by `simulate`.
    #[arg(long, required_unless_present = "sinogram")]
    input: Option<PathBuf>,
    /// Sinogram file, when not reading a simulation directory.
    #[arg(long)]
    sinogram: Option<PathBuf>,
    /// Initial pose CSV; defaults to nominal angles with zero translation.
    #[arg(long)]
    initial_poses: Option<PathBuf>,
    /// Ground-truth pose CSV for the pose report.
    #[arg(long)]
    true_poses: Option<PathBuf>,
    /// Reference image for PSNR/SSIM.
    #[arg(long)]
    reference: Option<PathBuf>,
    #[arg(long)]
    data_range: Option<f64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = EncoderArg::Hash)]
    encoder: EncoderArg,
    /// Keep the poses frozen at their initial values.
    #[arg(long)]
    no_pose_correction: bool,
    /// fixed: optimize translation along each detector axis and remove the
    /// common rotation and shift; free: plain Adam on all pose variables.
    #[arg(long, default_value = "fixed")]
    pose_gauge: String,
    /// Epochs before the poses start moving.
    #[arg(long)]
    pose_warmup: Option<usize>,
    /// Fade the hash levels in over this stretch of the run, given as
    /// `start,end` fractions of the epochs, or `off`.
    #[arg(long)]
    coarse_to_fine: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, default_value_t = 1e-3)]
    lr_field: f64,
    #[arg(long, default_value_t = 1e-3)]
    lr_pose: f64,
    #[arg(long, default_value_t = 0.5)]
    decay_factor: f64,
    #[arg(long, default_value_t = 500)]
    decay_every: usize,
    #[arg(long)]
    views_per_batch: Option<usize>,
    /// grid: field rendered on a pixel grid each epoch; direct: field
    /// evaluated at every ray sample.
    #[arg(long, default_value = "grid")]
    render_mode: String,
    #[arg(long)]
    fourier_sigma: Option<f64>,
    #[arg(long)]
    fourier_features: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// 5000 epochs.
    #[arg(long)]
    full_scale: bool,
}

#[derive(Args, Debug)]
pub struct FbpArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    sinogram: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "ramp")]
    filter: String,
    /// Output size; defaults to the detector bin count.
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    reference: Option<PathBuf>,
    #[arg(long)]
    data_range: Option<f64>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[command(flatten)]
    common: Common,
    /// Run directories containing report.txt.
    #[arg(required = true)]
    runs: Vec<PathBuf>,
    /// Output CSV; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => simulate(&a),
        Command::Reconstruct(a) => reconstruct(&a),
        Command::Fbp(a) => fbp(&a),
        Command::Evaluate(a) => evaluate(&a),
    }
}

const DESK: (usize, usize, usize, usize) = (128, 60, 360, 2000);
const FULL: (usize, usize, usize, usize) = (256, 90, 720, 5000);

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn pairs(v: &[(&str, String)]) -> Vec<(String, String)> {
    v.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

fn write_image_set(dir: &Path, stem: &str, image: &ImageGrid) -> Result<()> {
    io::write_image(&dir.join(format!("{stem}.bin")), image)?;
    io::write_pgm(&dir.join(format!("{stem}.pgm")), image)?;
    Ok(())
}

/// Ground-truth style FBP shared by `simulate` and `fbp`.
fn fbp_image(sino: &Sinogram, kind: FilterKind, size: usize) -> Result<ImageGrid> {
    Ok(fbp_reconstruct(sino, &FilterSpec::new(kind, sino.n_bins()), size)?)
}

fn simulate(a: &SimulateArgs) -> Result<()> {
    let (size0, views0, dense0, _) = if a.full_scale { FULL } else { DESK };
    let truth = match (&a.image, &a.phantom_file) {
        (Some(p), _) => io::read_image(p)?,
        (None, Some(p)) => EllipsePhantom::load_table(p)?.rasterize(a.size.unwrap_or(size0), true)?,
        (None, None) => EllipsePhantom::preset(&a.phantom)?.rasterize(a.size.unwrap_or(size0), true)?,
    };
    let size = truth.size();
    let views = a.views.unwrap_or(views0);
    let dense = a.dense_views.unwrap_or(dense0);
    let levels = if a.grid.is_empty() { vec![a.motion_level] } else { a.grid.clone() };
    for (i, k) in levels.iter().enumerate() {
        if !(*k >= 0.0) {
            return Err(usage("motion levels must be >= 0"));
        }
        if levels[..i].contains(k) {
            return Err(usage(format!("motion level {k} listed twice")));
        }
    }
    let geom = DetectorGeometry::with_default_sampling(size);
    let exec = Exec::default();
    let dense_sino = project_image(&truth, &PoseSet::uniform(dense), &geom, exec)?;
    // reconstruct from the stored single-precision scan so `fbp` on dense.bin
    // reproduces gt_fbp.bin exactly
    let dense_path = a.out.join(".dense.bin");
    io::write_sinogram(&dense_path, &dense_sino)?;
    let dense_sino = io::read_sinogram(&dense_path)?;
    let _ = std::fs::remove_file(&dense_path);
    let _ = std::fs::remove_file(io::meta_path(&dense_path));
    let gt = fbp_image(&dense_sino, FilterKind::Ramp, size)?;
    for &k in &levels {
        let dir = if a.grid.is_empty() { a.out.clone() } else { a.out.join(format!("k{k}")) };
        let motion = MotionLevel {
            rot_deg: a.motion_rot.unwrap_or(k),
            trans_px: a.motion_trans.unwrap_or(k),
        };
        let sim = simulate_motion_sinogram_with(&truth, views, motion, a.seed, &geom, exec)?;
        io::write_sinogram(&dir.join("sparse.bin"), &sim.sinogram)?;
        io::write_sinogram(&dir.join("dense.bin"), &dense_sino)?;
        io::write_poses(&dir.join("poses_true.csv"), &sim.true_poses)?;
        io::write_poses(&dir.join("poses_initial.csv"), &sim.initial_poses)?;
        write_image_set(&dir, "phantom", &truth)?;
        write_image_set(&dir, "gt_fbp", &gt)?;
        let source = match (&a.image, &a.phantom_file) {
            (Some(p), _) | (None, Some(p)) => p.display().to_string(),
            _ => a.phantom.clone(),
        };
        let info = pairs(&[
            ("source", source),
            ("size", size.to_string()),
            ("views", views.to_string()),
            ("dense_views", dense.to_string()),
            ("motion_level", k.to_string()),
            ("motion_rot_deg", motion.rot_deg.to_string()),
            ("motion_trans_px", motion.trans_px.to_string()),
            ("seed", a.seed.to_string()),
        ]);
        io::write_kv(&dir.join("simulate.txt"), &info)?;
    }
    Ok(())
}

fn encoder(a: &ReconstructArgs) -> EncoderSpec {
    match a.encoder {
        EncoderArg::Hash => FieldArch::hash_default().encoder,
        EncoderArg::Fourier => {
            let d = FourierConfig::default();
            EncoderSpec::Fourier(FourierConfig {
                n_frequencies: a.fourier_features.unwrap_or(d.n_frequencies),
                sigma: a.fourier_sigma.unwrap_or(d.sigma),
                seed: a.seed,
            })
        }
        EncoderArg::Identity => EncoderSpec::Identity,
    }
}

fn existing(p: PathBuf) -> Option<PathBuf> {
    p.exists().then_some(p)
}

fn sim_info(dir: Option<&Path>) -> Result<Vec<(String, String)>> {
    match dir.map(|d| d.join("simulate.txt")).and_then(existing) {
        Some(p) => Ok(io::read_kv(&p)?),
        None => Ok(Vec::new()),
    }
}

fn lookup<'a>(kv: &'a [(String, String)], key: &str) -> Option<&'a str> {
    kv.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
}

fn metrics_for(image: &ImageGrid, reference: Option<&Path>, data_range: Option<f64>) -> Result<Option<MetricsBlock>> {
    let Some(path) = reference else {
        return Ok(None);
    };
    let reference = io::read_image(path)?;
    if reference.size() != image.size() {
        return Err(usage(format!(
            "reference {} is {}x{0}, reconstruction is {}x{1}",
            path.display(),
            reference.size(),
            image.size()
        )));
    }
    let range = data_range.unwrap_or_else(|| data_range_of(&reference));
    Ok(Some(MetricsBlock::image(image, &reference, range)?))
}

fn parse_fade(s: &str) -> Result<Option<(f64, f64)>> {
    if s == "off" {
        return Ok(None);
    }
    let bad = || usage(format!("coarse-to-fine expects start,end or off, got {s}"));
    let (a, b) = s.split_once(',').ok_or_else(bad)?;
    let (a, b) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
    Ok(Some((a, b)))
}

fn reconstruct(a: &ReconstructArgs) -> Result<()> {
    let input = a.input.as_deref();
    let sino_path = match (&a.sinogram, input) {
        (Some(p), _) => p.clone(),
        (None, Some(d)) => d.join("sparse.bin"),
        (None, None) => return Err(usage("need --input or --sinogram")),
    };
    let sino = io::read_sinogram(&sino_path)?;
    let from_input = |name: &str| input.map(|d| d.join(name)).and_then(existing);
    let initial = match a.initial_poses.clone().or_else(|| from_input("poses_initial.csv")) {
        Some(p) => io::read_poses(&p)?,
        None => PoseSet::nominal(sino.angles().to_vec())?,
    };
    let truth = match a.true_poses.clone().or_else(|| from_input("poses_true.csv")) {
        Some(p) => Some(io::read_poses(&p)?),
        None => None,
    };
    let reference = a.reference.clone().or_else(|| from_input("gt_fbp.bin"));
    let epochs = a.epochs.unwrap_or(if a.full_scale { FULL.3 } else { DESK.3 });
    let config = TrainConfig {
        epochs,
        lr_field: a.lr_field,
        lr_pose: a.lr_pose,
        decay_factor: a.decay_factor,
        decay_every: a.decay_every,
        views_per_batch: a.views_per_batch,
        pose_correction: !a.no_pose_correction,
        pose_gauge: PoseGauge::parse(&a.pose_gauge)?,
        pose_warmup: a.pose_warmup.unwrap_or(TrainConfig::default().pose_warmup),
        coarse_to_fine: match &a.coarse_to_fine {
            Some(s) => parse_fade(s)?,
            None => TrainConfig::default().coarse_to_fine,
        },
        arch: FieldArch::with_encoder(encoder(a)),
        seed: a.seed,
        mode: RenderMode::parse(&a.render_mode)?,
        checkpoint_every: a.checkpoint_every,
        ..TrainConfig::default()
    };
    let out = &a.out;
    let ckpt_dir = out.join("checkpoints");
    let result = train_with(&config, &sino, &initial, |model, state| {
        if a.checkpoint_every.is_none() || state.epoch() == epochs {
            return Ok(());
        }
        let stem = format!("epoch{:06}", state.epoch());
        io::write_checkpoint(&ckpt_dir.join(format!("{stem}.bin")), model, &state.params)?;
        io::write_poses(&ckpt_dir.join(format!("{stem}_poses.csv")), &initial.with_flat(&state.pose_vars))
    });
    let report = match result {
        Ok(r) => r,
        Err(Error::Diverged {
            epoch,
            reason,
            last_finite,
        }) => {
            if let Some(state) = last_finite {
                let model = FieldModel::new(config.arch.clone())?;
                io::write_checkpoint(&out.join("last_finite.bin"), &model, &state.params)?;
                io::write_poses(&out.join("last_finite_poses.csv"), &initial.with_flat(&state.pose_vars))?;
            }
            return Err(CliError::Numerical(format!("training diverged at epoch {epoch}: {reason}")));
        }
        Err(e) => return Err(e.into()),
    };

    let model = FieldModel::new(config.arch.clone())?;
    write_image_set(out, "recon", &report.image)?;
    io::write_poses(&out.join("poses_optimized.csv"), &report.poses)?;
    io::write_checkpoint(&out.join("checkpoint.bin"), &model, &report.state.params)?;
    let lr = |e| lr_at(e, config.lr_field, config.decay_factor, config.decay_every);
    io::write_text(&out.join("loss.csv"), &io::loss_csv(&report.loss_history, lr))?;

    let mut metrics = metrics_for(&report.image, reference.as_deref(), a.data_range)?;
    if let (Some(t), Some(m)) = (&truth, metrics.as_mut()) {
        let pr = pose_report(&initial, t, &report.poses, report.image.size())?;
        io::write_text(&out.join("pose_report.csv"), &pr.to_csv(report.image.size()))?;
        if config.pose_correction {
            *m = m.clone().with_poses(&pr);
        }
    }
    let info = sim_info(input)?;
    let mut kv = pairs(&[
        ("method", config.arch.encoder.kind().to_string()),
        ("pose_correction", config.pose_correction.to_string()),
        ("motion_level", lookup(&info, "motion_level").unwrap_or("").to_string()),
        ("sinogram", sino_path.display().to_string()),
        ("final_loss", report.loss_history.last().copied().unwrap_or(f64::NAN).to_string()),
    ]);
    if let Some(m) = &metrics {
        kv.extend(m.to_pairs());
    }
    kv.extend(report.config.iter().map(|(k, v)| (format!("config.{k}"), v.clone())));
    io::write_kv(&out.join("report.txt"), &kv)?;
    // wall-clock time lives apart from the report so reruns are byte-identical
    io::write_kv(&out.join("timing.txt"), &pairs(&[("seconds", format!("{:.3}", report.seconds))]))?;
    Ok(())
}

fn fbp(a: &FbpArgs) -> Result<()> {
    let sino = io::read_sinogram(&a.sinogram)?;
    let kind = FilterKind::parse(&a.filter)?;
    let size = a.size.unwrap_or(sino.n_bins());
    let image = fbp_image(&sino, kind, size)?;
    write_image_set(&a.out, "fbp", &image)?;
    let sim_dir = a.sinogram.parent();
    let reference = a
        .reference
        .clone()
        .or_else(|| sim_dir.map(|d| d.join("gt_fbp.bin")).and_then(existing));
    let info = sim_info(sim_dir)?;
    let mut kv = pairs(&[
        ("method", "fbp".to_string()),
        ("pose_correction", "false".to_string()),
        ("motion_level", lookup(&info, "motion_level").unwrap_or("").to_string()),
        ("sinogram", a.sinogram.display().to_string()),
        ("filter", a.filter.clone()),
    ]);
    if let Some(m) = metrics_for(&image, reference.as_deref(), a.data_range)? {
        kv.extend(m.to_pairs());
    }
    io::write_kv(&a.out.join("report.txt"), &kv)?;
    Ok(())
}

struct Row {
    label: String,
    k: String,
    psnr: f64,
    ssim: f64,
    angle: Option<f64>,
    trans: Option<f64>,
}

fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let mut rows = Vec::new();
    for dir in &a.runs {
        let path = dir.join("report.txt");
        if !path.exists() {
            return Err(CliError::Io(format!("{}: missing run report", path.display())));
        }
        let kv = io::read_kv(&path)?;
        let need = |key: &str| -> Result<&str> {
            lookup(&kv, key).ok_or_else(|| CliError::Io(format!("{}: missing key {key}", path.display())))
        };
        let num = |key: &str| -> Result<f64> {
            need(key)?
                .parse()
                .map_err(|_| CliError::Io(format!("{}: bad value for {key}", path.display())))
        };
        let opt = |key: &str| lookup(&kv, key).and_then(|v| v.parse().ok());
        let method = need("method")?;
        let label = if lookup(&kv, "pose_correction") == Some("true") {
            format!("{method}+pose")
        } else {
            method.to_string()
        };
        rows.push(Row {
            label,
            k: need("motion_level")?.to_string(),
            psnr: num("psnr")?,
            ssim: num("ssim")?,
            angle: opt("pose_angle_mae"),
            trans: opt("pose_trans_mae"),
        });
    }
    let cell = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.4}"));
    let mut csv = String::from("method,k,psnr,ssim,pose_angle_mae_deg,pose_trans_mae_px\n");
    let mut groups: BTreeMap<&str, Vec<&Row>> = BTreeMap::new();
    for r in &rows {
        groups.entry(&r.label).or_default().push(r);
    }
    for (label, group) in groups {
        for r in &group {
            let _ = writeln!(
                csv,
                "{label},{},{:.4},{:.4},{},{}",
                r.k,
                r.psnr,
                r.ssim,
                cell(r.angle),
                cell(r.trans)
            );
        }
        let n = group.len() as f64;
        let mean_opt = |f: fn(&Row) -> Option<f64>| -> Option<f64> {
            group.iter().map(|r| f(r)).sum::<Option<f64>>().map(|s| s / n)
        };
        let _ = writeln!(
            csv,
            "{label},mean,{:.4},{:.4},{},{}",
            group.iter().map(|r| r.psnr).sum::<f64>() / n,
            group.iter().map(|r| r.ssim).sum::<f64>() / n,
            cell(mean_opt(|r| r.angle)),
            cell(mean_opt(|r| r.trans))
        );
    }
    match &a.out {
        Some(p) => io::write_text(p, &csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}
