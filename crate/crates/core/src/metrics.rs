//! Image quality (PSNR, SSIM) and pose-recovery statistics.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, PoseSet};
use crate::image::ImageGrid;

/// Reported PSNR when the images are identical.
pub const PSNR_CAP: f64 = 99.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn same_shape(a: &ImageGrid, b: &ImageGrid) -> Result<()> {
    if a.size() != b.size() {
        return Err(Error::Shape(format!("images are {}x{0} and {}x{1}", a.size(), b.size())));
    }
    Ok(())
}

/// `max - min` of the reference, the default data range.
pub fn data_range_of(reference: &ImageGrid) -> f64 {
    let (lo, hi) = reference.min_max();
    hi - lo
}

/// `10 log10(range^2 / MSE)`, capped at [`PSNR_CAP`].
pub fn psnr(test: &ImageGrid, reference: &ImageGrid, data_range: f64) -> Result<f64> {
    same_shape(test, reference)?;
    if !(data_range > 0.0) {
        return Err(Error::InvalidArgument("data range must be positive".into()));
    }
    let mse = test
        .pixels()
        .iter()
        .zip(reference.pixels())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / test.pixels().len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (data_range * data_range / mse).log10()).min(PSNR_CAP))
}

fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let r = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Half-sample symmetric index: `... c b a | a b c ...`.
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let mut i = i.rem_euclid(period);
    if i >= n {
        i = period - 1 - i;
    }
    i as usize
}

/// Separable Gaussian filter with symmetric boundary.
fn blur(img: &[f64], n: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as isize;
    let mut tmp = vec![0.0; n * n];
    for row in 0..n {
        for col in 0..n {
            let mut acc = 0.0;
            for (k, w) in taps.iter().enumerate() {
                acc += w * img[row * n + reflect(col as isize + k as isize - r, n)];
            }
            tmp[row * n + col] = acc;
        }
    }
    let mut out = vec![0.0; n * n];
    for row in 0..n {
        for col in 0..n {
            let mut acc = 0.0;
            for (k, w) in taps.iter().enumerate() {
                acc += w * tmp[reflect(row as isize + k as isize - r, n) * n + col];
            }
            out[row * n + col] = acc;
        }
    }
    out
}

/// Mean structural similarity over every pixel.
///
/// Local statistics use an 11x11 Gaussian window (sigma 1.5) with
/// half-sample symmetric extension at the borders and population (biased)
/// variances; `C1 = (0.01 L)^2`, `C2 = (0.03 L)^2` for data range `L`.
pub fn ssim(test: &ImageGrid, reference: &ImageGrid, data_range: f64) -> Result<f64> {
    same_shape(test, reference)?;
    let n = test.size();
    if n < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}"
        )));
    }
    if !(data_range > 0.0) {
        return Err(Error::InvalidArgument("data range must be positive".into()));
    }
    let taps = gaussian_taps();
    let x = test.pixels();
    let y = reference.pixels();
    let prod = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(u, v)| u * v).collect() };
    let mx = blur(x, n, &taps);
    let my = blur(y, n, &taps);
    let mxx = blur(&prod(x, x), n, &taps);
    let myy = blur(&prod(y, y), n, &taps);
    let mxy = blur(&prod(x, y), n, &taps);
    let c1 = (SSIM_K1 * data_range).powi(2);
    let c2 = (SSIM_K2 * data_range).powi(2);
    let mut total = 0.0;
    for i in 0..n * n {
        let (ux, uy) = (mx[i], my[i]);
        let vx = mxx[i] - ux * ux;
        let vy = myy[i] - uy * uy;
        let cxy = mxy[i] - ux * uy;
        total += ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
    }
    Ok(total / (n * n) as f64)
}

/// Per-view pose errors for one view.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseRow {
    pub view: usize,
    pub nominal: f64,
    pub initial: [f64; 3],
    pub truth: [f64; 3],
    pub optimized: [f64; 3],
    /// Degrees, wrapped to `(-180, 180]`.
    pub angle_err_initial: f64,
    pub angle_err: f64,
    /// Euclidean, pixels.
    pub trans_err_initial: f64,
    pub trans_err: f64,
    /// Translation error along the true detector axis, pixels. The component
    /// along the ray does not change a parallel-beam projection.
    pub detector_err: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PoseReport {
    pub rows: Vec<PoseRow>,
    pub angle_mae_initial: f64,
    pub trans_mae_initial: f64,
    pub angle_mae: f64,
    pub trans_mae: f64,
    pub detector_mae: f64,
}

impl PoseReport {
    /// One line per view: nominal, initial, true and optimized tracks plus
    /// errors. Angles in degrees, translations in pixels.
    pub fn to_csv(&self, size: usize) -> String {
        let px = size as f64 / 2.0;
        let mut s = String::from(
            "view_index,nominal_deg,initial_theta_deg,initial_tx_px,initial_ty_px,\
             true_theta_deg,true_tx_px,true_ty_px,opt_theta_deg,opt_tx_px,opt_ty_px,\
             angle_err_deg,trans_err_px\n",
        );
        for r in &self.rows {
            let track = |p: [f64; 3]| format!("{},{},{}", p[0].to_degrees(), p[1] * px, p[2] * px);
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                r.view,
                r.nominal.to_degrees(),
                track(r.initial),
                track(r.truth),
                track(r.optimized),
                r.angle_err,
                r.trans_err
            );
        }
        s
    }
}

fn angle_err_deg(a: f64, b: f64) -> f64 {
    wrap_angle(a - b).to_degrees()
}

/// Compares initial and optimized poses against the truth. `size` is the
/// image size used to convert normalized translations to pixels (`N/2`
/// pixels per unit).
pub fn pose_report(initial: &PoseSet, truth: &PoseSet, optimized: &PoseSet, size: usize) -> Result<PoseReport> {
    if initial.len() != truth.len() || optimized.len() != truth.len() {
        return Err(Error::Shape(format!(
            "pose sets of length {}, {}, {}",
            initial.len(),
            truth.len(),
            optimized.len()
        )));
    }
    let px = size as f64 / 2.0;
    let dist = |a: [f64; 2], b: [f64; 2]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt() * px;
    let mut rows = Vec::with_capacity(truth.len());
    for i in 0..truth.len() {
        let (p0, pt, po) = (initial.poses[i], truth.poses[i], optimized.poses[i]);
        let axis = pt.detector_axis();
        let dt = [po.t[0] - pt.t[0], po.t[1] - pt.t[1]];
        rows.push(PoseRow {
            view: i,
            nominal: truth.nominal_angles[i],
            initial: [p0.theta, p0.t[0], p0.t[1]],
            truth: [pt.theta, pt.t[0], pt.t[1]],
            optimized: [po.theta, po.t[0], po.t[1]],
            angle_err_initial: angle_err_deg(p0.theta, pt.theta),
            angle_err: angle_err_deg(po.theta, pt.theta),
            trans_err_initial: dist(p0.t, pt.t),
            trans_err: dist(po.t, pt.t),
            detector_err: (dt[0] * axis[0] + dt[1] * axis[1]).abs() * px,
        });
    }
    let mean = |f: &dyn Fn(&PoseRow) -> f64| rows.iter().map(f).sum::<f64>() / rows.len().max(1) as f64;
    Ok(PoseReport {
        angle_mae_initial: mean(&|r| r.angle_err_initial.abs()),
        trans_mae_initial: mean(&|r| r.trans_err_initial),
        angle_mae: mean(&|r| r.angle_err.abs()),
        trans_mae: mean(&|r| r.trans_err),
        detector_mae: mean(&|r| r.detector_err),
        rows,
    })
}

/// Summary numbers for one run. Pose fields are absent for runs without
/// ground-truth poses or without pose correction.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsBlock {
    pub psnr: f64,
    pub ssim: f64,
    pub pose_angle_mae: Option<f64>,
    pub pose_trans_mae: Option<f64>,
    pub pose_angle_mae_initial: Option<f64>,
    pub pose_trans_mae_initial: Option<f64>,
}

impl MetricsBlock {
    pub fn image(test: &ImageGrid, reference: &ImageGrid, data_range: f64) -> Result<Self> {
        Ok(Self {
            psnr: psnr(test, reference, data_range)?,
            ssim: ssim(test, reference, data_range)?,
            ..Self::default()
        })
    }

    pub fn with_poses(mut self, report: &PoseReport) -> Self {
        self.pose_angle_mae = Some(report.angle_mae);
        self.pose_trans_mae = Some(report.trans_mae);
        self.pose_angle_mae_initial = Some(report.angle_mae_initial);
        self.pose_trans_mae_initial = Some(report.trans_mae_initial);
        self
    }

    /// `key=value` pairs for a run report; absent pose fields are omitted.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let mut out = vec![
            ("psnr".to_string(), self.psnr.to_string()),
            ("ssim".to_string(), self.ssim.to_string()),
        ];
        for (k, v) in [
            ("pose_angle_mae", self.pose_angle_mae),
            ("pose_trans_mae", self.pose_trans_mae),
            ("pose_angle_mae_initial", self.pose_angle_mae_initial),
            ("pose_trans_mae_initial", self.pose_trans_mae_initial),
        ] {
            if let Some(v) = v {
                out.push((k.to_string(), v.to_string()));
            }
        }
        out
    }
}
