//! Parallel-beam line integrals through continuous fields and discrete
//! images, their adjoints, and the motion-corrupted sinogram simulator.
//!
//! A view with pose `(theta, t)` reads detector bin `s_j` by summing the
//! field over the ray `x = s_j` of the standard frame, mapped into the
//! object frame by `R(theta) p + t`:
//!
//! ```text
//! y(i, j) = dl * sum_k f(R(theta_i) (s_j, l_k) + t_i)
//! ```
//!
//! with `l_k = -c + (k + 0.5) dl` and `c = n_samples * dl / 2`. The `dl`
//! weight turns the sum into a midpoint-rule line integral, so values do not
//! depend on the sampling density beyond discretization error.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_finite, Error, Result};
use crate::geometry::{PoseSet, ProjectionPose, Vec2};
use crate::image::ImageGrid;
use crate::par::{fixed_chunks, Exec};

const SQRT2: f64 = std::f64::consts::SQRT_2;

/// Detector bins and ray sampling shared by every view.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetectorGeometry {
    pub n_bins: usize,
    pub n_samples: usize,
    pub sample_step: f64,
}

impl DetectorGeometry {
    pub fn new(n_bins: usize, n_samples: usize, sample_step: f64) -> Result<Self> {
        if n_bins == 0 {
            return Err(Error::InvalidArgument("detector needs at least one bin".into()));
        }
        if n_samples < 2 || !(sample_step > 0.0) || !sample_step.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "need n_samples >= 2 and a positive step, got {n_samples} and {sample_step}"
            )));
        }
        // the rotated square's diagonal must fit in the sampled span
        if n_samples as f64 * sample_step < 2.0 * SQRT2 * (1.0 - 1e-12) {
            return Err(Error::InvalidArgument(format!(
                "ray span {} does not cover the chord 2*sqrt(2)",
                n_samples as f64 * sample_step
            )));
        }
        Ok(Self {
            n_bins,
            n_samples,
            sample_step,
        })
    }

    /// `n_bins` bins with `2 * n_bins` samples per ray spanning `2 sqrt(2)`.
    pub fn with_default_sampling(n_bins: usize) -> Self {
        Self::with_samples(n_bins, 2 * n_bins.max(1))
    }

    /// `n_samples` evenly spaced samples spanning exactly `2 sqrt(2)`.
    pub fn with_samples(n_bins: usize, n_samples: usize) -> Self {
        let n_samples = n_samples.max(2);
        Self::new(n_bins, n_samples, 2.0 * SQRT2 / n_samples as f64)
            .expect("default sampling is valid")
    }

    pub fn bin_spacing(&self) -> f64 {
        2.0 / self.n_bins as f64
    }

    pub fn bin_center(&self, j: usize) -> f64 {
        -1.0 + (j as f64 + 0.5) * self.bin_spacing()
    }

    pub fn bin_centers(&self) -> Vec<f64> {
        (0..self.n_bins).map(|j| self.bin_center(j)).collect()
    }

    /// Positions `l_k` along the ray, centered on the detector line.
    pub fn sample_offsets(&self) -> Vec<f64> {
        let c = self.n_samples as f64 * self.sample_step / 2.0;
        (0..self.n_samples)
            .map(|k| -c + (k as f64 + 0.5) * self.sample_step)
            .collect()
    }
}

/// Sample points of the ray `x = s` in the standard frame.
pub fn sample_ray(s: f64, geom: &DetectorGeometry) -> Result<Vec<Vec2>> {
    if !(-1.0..=1.0).contains(&s) {
        return Err(Error::InvalidArgument(format!(
            "detector coordinate {s} outside [-1, 1]"
        )));
    }
    Ok(geom.sample_offsets().into_iter().map(|l| [s, l]).collect())
}

/// `M x N` projection data, one row per view.
#[derive(Clone, Debug, PartialEq)]
pub struct Sinogram {
    values: Vec<f64>,
    angles: Vec<f64>,
    detector: DetectorGeometry,
}

impl Sinogram {
    pub fn new(values: Vec<f64>, angles: Vec<f64>, detector: DetectorGeometry) -> Result<Self> {
        if values.len() != angles.len() * detector.n_bins {
            return Err(Error::Shape(format!(
                "{} values for {} views x {} bins",
                values.len(),
                angles.len(),
                detector.n_bins
            )));
        }
        check_finite("sinogram", &values)?;
        Ok(Self {
            values,
            angles,
            detector,
        })
    }

    pub fn zeros(angles: Vec<f64>, detector: DetectorGeometry) -> Self {
        Self {
            values: vec![0.0; angles.len() * detector.n_bins],
            angles,
            detector,
        }
    }

    pub fn n_views(&self) -> usize {
        self.angles.len()
    }

    pub fn n_bins(&self) -> usize {
        self.detector.n_bins
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn detector(&self) -> &DetectorGeometry {
        &self.detector
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.n_bins();
        &self.values[i * n..(i + 1) * n]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let n = self.n_bins();
        &mut self.values[i * n..(i + 1) * n]
    }

    /// Same data with a different ray sampling (bins must agree).
    pub fn with_detector(mut self, detector: DetectorGeometry) -> Result<Self> {
        if detector.n_bins != self.detector.n_bins {
            return Err(Error::Shape("detector bin count differs".into()));
        }
        self.detector = detector;
        Ok(self)
    }
}

/// A scalar function on the plane, evaluated in batches.
pub trait ScalarField: Sync {
    fn eval_batch(&self, points: &[Vec2], out: &mut [f64]);
}

/// A scalar field with reverse-mode derivatives with respect to its own
/// parameters and to the query coordinates.
pub trait DifferentiableField: ScalarField {
    fn n_params(&self) -> usize;

    /// For `L = sum_k upstream[k] * f(points[k])`, adds `dL/dparams` into
    /// `param_grad` and writes `dL/dpoints[k]` into `coord_grad[k]`.
    fn backward_batch(
        &self,
        points: &[Vec2],
        upstream: &[f64],
        param_grad: &mut [f64],
        coord_grad: &mut [Vec2],
    ) -> Result<()>;
}

/// Adapter for plain closures.
pub struct FnField<F>(pub F);

impl<F: Fn(Vec2) -> f64 + Sync> ScalarField for FnField<F> {
    fn eval_batch(&self, points: &[Vec2], out: &mut [f64]) {
        for (o, p) in out.iter_mut().zip(points) {
            *o = (self.0)(*p);
        }
    }
}

/// The bilinear interpolant of an image; its parameters are the pixels.
impl ScalarField for ImageGrid {
    fn eval_batch(&self, points: &[Vec2], out: &mut [f64]) {
        for (o, p) in out.iter_mut().zip(points) {
            *o = self.sample(*p);
        }
    }
}

impl DifferentiableField for ImageGrid {
    fn n_params(&self) -> usize {
        self.size() * self.size()
    }

    fn backward_batch(
        &self,
        points: &[Vec2],
        upstream: &[f64],
        param_grad: &mut [f64],
        coord_grad: &mut [Vec2],
    ) -> Result<()> {
        for (k, (p, &g)) in points.iter().zip(upstream).enumerate() {
            if !g.is_finite() {
                return Err(Error::NonFinite {
                    what: "upstream gradient".into(),
                    index: k,
                });
            }
            coord_grad[k] = self.scatter_grad(*p, g, param_grad);
        }
        Ok(())
    }
}

/// Object-frame sample points of every ray of one view, bin-major.
pub fn view_points(pose: &ProjectionPose, geom: &DetectorGeometry) -> Vec<Vec2> {
    let offsets = geom.sample_offsets();
    let [ax, ay] = pose.detector_axis();
    let [rx, ry] = pose.ray_direction();
    let mut pts = Vec::with_capacity(geom.n_bins * geom.n_samples);
    for j in 0..geom.n_bins {
        let s = geom.bin_center(j);
        let o = [s * ax + pose.t[0], s * ay + pose.t[1]];
        for &l in &offsets {
            pts.push([o[0] + l * rx, o[1] + l * ry]);
        }
    }
    pts
}

fn integrate_rows(values: &[f64], geom: &DetectorGeometry) -> Vec<f64> {
    values
        .chunks_exact(geom.n_samples)
        .map(|ray| geom.sample_step * ray.iter().sum::<f64>())
        .collect()
}

/// One projection row of `field` at `pose`.
pub fn project_view<F: ScalarField + ?Sized>(
    field: &F,
    pose: &ProjectionPose,
    geom: &DetectorGeometry,
) -> Vec<f64> {
    let pts = view_points(pose, geom);
    let mut vals = vec![0.0; pts.len()];
    field.eval_batch(&pts, &mut vals);
    integrate_rows(&vals, geom)
}

/// Renders the sinogram of a continuous field at the given poses. The
/// sinogram carries the poses' nominal angles.
pub fn forward_project_field<F: ScalarField + ?Sized>(
    field: &F,
    poses: &PoseSet,
    geom: &DetectorGeometry,
) -> Result<Sinogram> {
    forward_project_field_with(field, poses, geom, Exec::default())
}

pub fn forward_project_field_with<F: ScalarField + ?Sized>(
    field: &F,
    poses: &PoseSet,
    geom: &DetectorGeometry,
    exec: Exec,
) -> Result<Sinogram> {
    if poses.poses.len() != poses.nominal_angles.len() {
        return Err(Error::Shape("pose count differs from angle count".into()));
    }
    let rows = exec.map(poses.len(), |i| project_view(field, &poses.poses[i], geom));
    Sinogram::new(rows.concat(), poses.nominal_angles.clone(), *geom)
}

/// One projection row of a discrete image (bilinear, zero outside the square).
pub fn forward_project_image(
    image: &ImageGrid,
    pose: &ProjectionPose,
    geom: &DetectorGeometry,
) -> Result<Vec<f64>> {
    check_finite("image", image.pixels())?;
    Ok(project_view(image, pose, geom))
}

/// All rows of a discrete image.
pub fn project_image(
    image: &ImageGrid,
    poses: &PoseSet,
    geom: &DetectorGeometry,
    exec: Exec,
) -> Result<Sinogram> {
    check_finite("image", image.pixels())?;
    forward_project_field_with(image, poses, geom, exec)
}

/// Gradients of a sum of per-view losses.
#[derive(Clone, Debug)]
pub struct ProjectionGrad {
    pub loss: f64,
    pub param_grad: Vec<f64>,
    /// `[d/dtheta, d/dtx, d/dty]` per requested view.
    pub pose_grad: Vec<[f64; 3]>,
    /// Predicted rows of the requested views, in request order.
    pub predictions: Vec<Vec<f64>>,
}

/// Forward projects the requested views, asks `row_loss(view, prediction)`
/// for each view's loss and `dL/dprediction`, and backpropagates through the
/// quadrature, the field and the pose transform.
///
/// Views are split into a fixed number of contiguous chunks that depends only
/// on `views.len()`; each chunk owns its parameter-gradient buffer and the
/// buffers are summed in view order, so results are bit-identical for any
/// thread count.
pub fn project_backward<F, L>(
    field: &F,
    poses: &[ProjectionPose],
    views: &[usize],
    geom: &DetectorGeometry,
    row_loss: L,
    exec: Exec,
) -> Result<ProjectionGrad>
where
    F: DifferentiableField + ?Sized,
    L: Fn(usize, &[f64]) -> (f64, Vec<f64>) + Sync,
{
    const MAX_CHUNKS: usize = 8;
    let chunks = fixed_chunks(views.len(), views.len().div_ceil(MAX_CHUNKS));
    let offsets = geom.sample_offsets();
    let per_chunk = exec.map(chunks.len(), |ci| -> Result<_> {
        let mut grad = vec![0.0; field.n_params()];
        let mut out = Vec::with_capacity(chunks[ci].len());
        for &view in &views[chunks[ci].clone()] {
            let pose = poses[view];
            let pts = view_points(&pose, geom);
            let mut vals = vec![0.0; pts.len()];
            field.eval_batch(&pts, &mut vals);
            let pred = integrate_rows(&vals, geom);
            let (loss, row_grad) = row_loss(view, &pred);
            let upstream: Vec<f64> = row_grad
                .iter()
                .flat_map(|&g| std::iter::repeat_n(g * geom.sample_step, geom.n_samples))
                .collect();
            let mut cg = vec![[0.0; 2]; pts.len()];
            field.backward_batch(&pts, &upstream, &mut grad, &mut cg)?;
            let (s, c) = pose.theta.sin_cos();
            let mut pg = [0.0; 3];
            for j in 0..geom.n_bins {
                let sj = geom.bin_center(j);
                for (k, &l) in offsets.iter().enumerate() {
                    let g = cg[j * geom.n_samples + k];
                    // R'(theta) (s, l)
                    let dth = [-s * sj - c * l, c * sj - s * l];
                    pg[0] += g[0] * dth[0] + g[1] * dth[1];
                    pg[1] += g[0];
                    pg[2] += g[1];
                }
            }
            out.push((loss, pg, pred));
        }
        Ok((grad, out))
    });
    let mut total = ProjectionGrad {
        loss: 0.0,
        param_grad: vec![0.0; field.n_params()],
        pose_grad: Vec::with_capacity(views.len()),
        predictions: Vec::with_capacity(views.len()),
    };
    for chunk in per_chunk {
        let (grad, out) = chunk?;
        for (acc, g) in total.param_grad.iter_mut().zip(&grad) {
            *acc += g;
        }
        for (loss, pg, pred) in out {
            total.loss += loss;
            total.pose_grad.push(pg);
            total.predictions.push(pred);
        }
    }
    Ok(total)
}

/// Closed-form line integral of a uniform ellipse along the ray at
/// detector coordinate `s` of a view with angle `view_angle` (no
/// translation). The detector axis is `(cos a, sin a)`.
pub fn ellipse_projection_oracle(
    center: Vec2,
    semi_axes: (f64, f64),
    tilt: f64,
    density: f64,
    view_angle: f64,
    s: f64,
) -> f64 {
    let (a, b) = semi_axes;
    let (sa, ca) = view_angle.sin_cos();
    let s_local = s - (center[0] * ca + center[1] * sa);
    let gamma = view_angle - tilt;
    let (sg, cg) = gamma.sin_cos();
    let r2 = a * a * cg * cg + b * b * sg * sg;
    let disc = r2 - s_local * s_local;
    if disc <= 0.0 {
        return 0.0;
    }
    density * 2.0 * a * b * disc.sqrt() / r2
}

/// Rigid motion amplitudes: rotation in degrees, translation in pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MotionLevel {
    pub rot_deg: f64,
    pub trans_px: f64,
}

impl MotionLevel {
    /// The same `k` for degrees and pixels.
    pub fn coupled(k: f64) -> Self {
        Self {
            rot_deg: k,
            trans_px: k,
        }
    }
}

/// Result of [`simulate_motion_sinogram`].
#[derive(Clone, Debug)]
pub struct Simulation {
    pub sinogram: Sinogram,
    pub true_poses: PoseSet,
    pub initial_poses: PoseSet,
}

/// Uniform double in `[0, 1)` from the top 53 bits of one 64-bit draw.
fn unit_f64(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Draws per-view rigid motion and projects `image` at the perturbed poses.
///
/// The generator is ChaCha8 seeded with `seed`; for each view in order it
/// draws the angle offset, then `t_x`, then `t_y`, each as `-k + 2k u` with
/// `u` built from one 64-bit output. Pixel translations become normalized
/// units through `2 / image.size()`. The initial poses are the nominal
/// angles with zero translation.
pub fn simulate_motion_sinogram(
    image: &ImageGrid,
    n_views: usize,
    motion: MotionLevel,
    seed: u64,
) -> Result<Simulation> {
    let geom = DetectorGeometry::with_default_sampling(image.size());
    simulate_motion_sinogram_with(image, n_views, motion, seed, &geom, Exec::default())
}

pub fn simulate_motion_sinogram_with(
    image: &ImageGrid,
    n_views: usize,
    motion: MotionLevel,
    seed: u64,
    geom: &DetectorGeometry,
    exec: Exec,
) -> Result<Simulation> {
    if n_views == 0 {
        return Err(Error::InvalidArgument("need at least one view".into()));
    }
    if !(motion.rot_deg >= 0.0 && motion.trans_px >= 0.0) {
        return Err(Error::InvalidArgument("motion level must be >= 0".into()));
    }
    let initial = PoseSet::uniform(n_views);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let px = 2.0 / image.size() as f64;
    let mut draw = |k: f64| -k + 2.0 * k * unit_f64(&mut rng);
    let true_poses: Vec<ProjectionPose> = initial
        .nominal_angles
        .iter()
        .map(|&alpha| {
            let dtheta = draw(motion.rot_deg).to_radians();
            let tx = draw(motion.trans_px) * px;
            let ty = draw(motion.trans_px) * px;
            ProjectionPose::new(alpha + dtheta, [tx, ty])
        })
        .collect();
    let true_poses = PoseSet::new(true_poses, initial.nominal_angles.clone())?;
    let sinogram = project_image(image, &true_poses, geom, exec)?;
    Ok(Simulation {
        sinogram,
        true_poses,
        initial_poses: initial,
    })
}
