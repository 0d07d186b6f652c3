//! Joint fitting of the field parameters and the per-view poses.
//!
//! Every epoch renders the predicted sinogram at the current poses, takes the
//! mean absolute error against the measurement, backpropagates through the
//! quadrature sum, the field and the pose transform, and applies one Adam
//! step to the field parameters and one to the pose variables.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::field::{FieldArch, FieldModel, ParamLayout};
use crate::geometry::{PoseSet, ProjectionPose};
use crate::image::ImageGrid;
use crate::metrics::MetricsBlock;
use crate::par::Exec;
use crate::projector::{project_backward, DetectorGeometry, Sinogram};

/// Treatment of pose directions the measurements cannot see.
///
/// A parallel-beam projection is unchanged when its view is shifted along
/// the ray, and the whole problem is unchanged when every pose and the image
/// are moved by one common rigid motion. Plain Adam turns the tiny
/// discretization gradients in those directions into full-size steps, so
/// poses wander even when the data are motion-free.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoseGauge {
    /// Adam directly on `(theta, t_x, t_y)`.
    Free,
    /// Adam on `(theta, u)` where `u` is the translation along the view's
    /// initial detector axis; the along-ray component keeps its initial
    /// value. After every step the mean angle correction and the best
    /// fitting common shift are removed from the corrections.
    Fixed,
}

impl PoseGauge {
    pub fn name(self) -> &'static str {
        match self {
            PoseGauge::Free => "free",
            PoseGauge::Fixed => "fixed",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "free" => Ok(PoseGauge::Free),
            "fixed" => Ok(PoseGauge::Fixed),
            _ => Err(Error::InvalidArgument(format!("unknown pose gauge {s:?}"))),
        }
    }
}

/// How predicted projections are computed during training.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RenderMode {
    /// Evaluate the field once per epoch on a pixel grid and integrate its
    /// bilinear interpolant (zero outside the square). One field evaluation
    /// per pixel instead of one per ray sample.
    Grid,
    /// Evaluate the field at every ray sample.
    Direct,
}

impl RenderMode {
    pub fn name(self) -> &'static str {
        match self {
            RenderMode::Grid => "grid",
            RenderMode::Direct => "direct",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "grid" => Ok(RenderMode::Grid),
            "direct" => Ok(RenderMode::Direct),
            _ => Err(Error::InvalidArgument(format!("unknown render mode {s:?}"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr_field: f64,
    pub lr_pose: f64,
    /// Multiplier applied every `decay_every` epochs.
    pub decay_factor: f64,
    pub decay_every: usize,
    /// Views per Adam step; `None` is full batch.
    pub views_per_batch: Option<usize>,
    pub pose_correction: bool,
    /// Epochs at the start during which the poses stay frozen while the
    /// field takes shape.
    pub pose_warmup: usize,
    pub pose_gauge: PoseGauge,
    /// Stretch of the run, as fractions `(start, end)` of `epochs`, over
    /// which the hash levels fade in from the two coarsest to all of them.
    /// Until the fine levels arrive the field cannot fit per-view
    /// misalignment with sharp detail, which keeps the angles from
    /// locking into the first blurry image.
    pub coarse_to_fine: Option<(f64, f64)>,
    pub arch: FieldArch,
    pub seed: u64,
    pub mode: RenderMode,
    /// Pixel grid used in [`RenderMode::Grid`]; defaults to the detector
    /// bin count.
    pub grid_size: Option<usize>,
    /// Size of the returned image; defaults to the detector bin count.
    pub out_size: Option<usize>,
    /// Abort when the loss exceeds this multiple of the first epoch's loss.
    pub divergence_factor: f64,
    pub checkpoint_every: Option<usize>,
    pub exec: Exec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5000,
            lr_field: 1e-3,
            lr_pose: 1e-3,
            decay_factor: 0.5,
            decay_every: 500,
            views_per_batch: None,
            pose_correction: true,
            pose_warmup: 300,
            pose_gauge: PoseGauge::Fixed,
            coarse_to_fine: Some((0.0, 0.5)),
            arch: FieldArch::hash_default(),
            seed: 0,
            mode: RenderMode::Grid,
            grid_size: None,
            out_size: None,
            divergence_factor: 10.0,
            checkpoint_every: None,
            exec: Exec::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if !(self.lr_field > 0.0 && self.lr_pose > 0.0) {
            return bad("learning rates must be positive");
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return bad("decay factor must lie in (0, 1]");
        }
        if self.decay_every == 0 {
            return bad("decay interval must be >= 1");
        }
        if self.views_per_batch == Some(0) {
            return bad("views per batch must be >= 1");
        }
        if self.grid_size.is_some_and(|g| g < 2) || self.out_size == Some(0) {
            return bad("grid and output sizes must be positive");
        }
        if self.coarse_to_fine.is_some_and(|(a, b)| !(0.0 <= a && a < b && b <= 1.0)) {
            return bad("coarse-to-fine range must satisfy 0 <= start < end <= 1");
        }
        Ok(())
    }

    /// Key/value pairs describing the run, for reports.
    pub fn echo(&self) -> Vec<(String, String)> {
        let a = &self.arch;
        let opt = |v: Option<usize>| v.map_or("auto".to_string(), |v| v.to_string());
        vec![
            ("epochs".into(), self.epochs.to_string()),
            ("lr_field".into(), self.lr_field.to_string()),
            ("lr_pose".into(), self.lr_pose.to_string()),
            ("decay_factor".into(), self.decay_factor.to_string()),
            ("decay_every".into(), self.decay_every.to_string()),
            ("views_per_batch".into(), opt(self.views_per_batch)),
            ("pose_correction".into(), self.pose_correction.to_string()),
            ("pose_warmup".into(), self.pose_warmup.to_string()),
            ("pose_gauge".into(), self.pose_gauge.name().into()),
            (
                "coarse_to_fine".into(),
                self.coarse_to_fine.map_or("off".into(), |(a, b)| format!("{a},{b}")),
            ),
            ("encoder".into(), a.encoder.kind().to_string()),
            (
                "hidden".into(),
                a.hidden.iter().map(|h| h.to_string()).collect::<Vec<_>>().join(","),
            ),
            ("hidden_activation".into(), a.hidden_activation.name().into()),
            ("output_activation".into(), a.output_activation.name().into()),
            ("seed".into(), self.seed.to_string()),
            ("render_mode".into(), self.mode.name().into()),
            ("grid_size".into(), opt(self.grid_size)),
        ]
    }
}

/// Hash level weights at `progress` in `[0, 1]` through the fade-in. The
/// number of active levels grows linearly from 2 to `n_levels`; level `l`
/// enters with weight `(1 - cos(pi * clamp(alpha - l, 0, 1))) / 2`.
pub fn level_weights_at(n_levels: usize, progress: f64) -> Vec<f64> {
    let first = 2.0f64.min(n_levels as f64);
    let progress = progress.clamp(0.0, 1.0);
    let alpha = first + (n_levels as f64 - first) * progress;
    (0..n_levels)
        .map(|l| {
            let x = (alpha - l as f64).clamp(0.0, 1.0);
            (1.0 - (std::f64::consts::PI * x).cos()) / 2.0
        })
        .collect()
}

/// `lr0 * factor^floor(epoch / every)`.
pub fn lr_at(epoch: usize, lr0: f64, factor: f64, every: usize) -> f64 {
    lr0 * factor.powi((epoch / every.max(1)) as i32)
}

/// Everything the optimizer mutates.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub params: Vec<f64>,
    /// `[theta, t_x, t_y]` per view.
    pub pose_vars: Vec<f64>,
    pub m_params: Vec<f64>,
    pub v_params: Vec<f64>,
    pub m_pose: Vec<f64>,
    pub v_pose: Vec<f64>,
    /// Adam steps taken so far.
    pub step: u64,
    /// Adam steps that updated the poses; trails `step` during warm-up.
    pub pose_step: u64,
    /// Mean absolute error per completed epoch, measured before that
    /// epoch's updates.
    pub loss_history: Vec<f64>,
}

impl TrainState {
    pub fn new(params: Vec<f64>, poses: &PoseSet) -> Self {
        let pose_vars = poses.to_flat();
        Self {
            m_params: vec![0.0; params.len()],
            v_params: vec![0.0; params.len()],
            m_pose: vec![0.0; pose_vars.len()],
            v_pose: vec![0.0; pose_vars.len()],
            params,
            pose_vars,
            step: 0,
            pose_step: 0,
            loss_history: Vec::new(),
        }
    }

    pub fn poses(&self) -> Vec<ProjectionPose> {
        self.pose_vars
            .chunks_exact(3)
            .map(|v| ProjectionPose::new(v[0], [v[1], v[2]]))
            .collect()
    }

    pub fn epoch(&self) -> usize {
        self.loss_history.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Adam {
    /// One bias-corrected update; `t` is the 1-based step number.
    pub fn update(&self, vars: &mut [f64], grads: &[f64], m: &mut [f64], v: &mut [f64], t: u64, lr: f64) {
        let c1 = 1.0 - self.beta1.powi(t as i32);
        let c2 = 1.0 - self.beta2.powi(t as i32);
        for i in 0..vars.len() {
            let g = grads[i];
            m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
            v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
            let mh = m[i] / c1;
            let vh = v[i] / c2;
            vars[i] -= lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// Applies one Adam step to the field parameters and, when `pose_grad` is
/// given, to the pose variables. Non-finite gradients are rejected before
/// anything is modified; the error names the parameter slice.
pub fn adam_step(
    state: &mut TrainState,
    layout: &ParamLayout,
    param_grad: &[f64],
    pose_grad: Option<&[f64]>,
    lr_field: f64,
    lr_pose: f64,
) -> Result<()> {
    if param_grad.len() != state.params.len() {
        return Err(Error::Shape("parameter gradient has the wrong length".into()));
    }
    if let Some(i) = param_grad.iter().position(|g| !g.is_finite()) {
        let name = layout.slice_of(i).map_or("params", |s| s.name.as_str());
        return Err(Error::NonFinite {
            what: format!("gradient of {name}"),
            index: i,
        });
    }
    if let Some(pg) = pose_grad {
        if pg.len() != state.pose_vars.len() {
            return Err(Error::Shape("pose gradient has the wrong length".into()));
        }
        if let Some(i) = pg.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                what: format!("gradient of pose {}", i / 3),
                index: i,
            });
        }
    }
    let adam = Adam::default();
    state.step += 1;
    adam.update(&mut state.params, param_grad, &mut state.m_params, &mut state.v_params, state.step, lr_field);
    if let Some(pg) = pose_grad {
        state.pose_step += 1;
        adam.update(&mut state.pose_vars, pg, &mut state.m_pose, &mut state.v_pose, state.pose_step, lr_pose);
    }
    Ok(())
}

/// Per-view frames for [`PoseGauge::Fixed`]: detector axis and ray
/// direction at the initial angle, plus the initial pose variables.
struct GaugeFrame {
    origin: Vec<f64>,
    axes: Vec<([f64; 2], [f64; 2])>,
}

impl GaugeFrame {
    fn new(initial: &[f64]) -> Self {
        let axes = initial
            .chunks_exact(3)
            .map(|v| {
                let (s, c) = v[0].sin_cos();
                ([c, s], [-s, c])
            })
            .collect();
        Self {
            origin: initial.to_vec(),
            axes,
        }
    }

    /// `(theta, t_x, t_y)` to `(theta, u, w)` offsets from the origin.
    fn to_local(&self, vars: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; vars.len()];
        for (i, (a, r)) in self.axes.iter().enumerate() {
            let k = 3 * i;
            let d = [vars[k + 1] - self.origin[k + 1], vars[k + 2] - self.origin[k + 2]];
            out[k] = vars[k];
            out[k + 1] = d[0] * a[0] + d[1] * a[1];
            out[k + 2] = d[0] * r[0] + d[1] * r[1];
        }
        out
    }

    fn to_global(&self, local: &[f64], vars: &mut [f64]) {
        for (i, (a, r)) in self.axes.iter().enumerate() {
            let k = 3 * i;
            let (u, w) = (local[k + 1], local[k + 2]);
            vars[k] = local[k];
            vars[k + 1] = self.origin[k + 1] + u * a[0] + w * r[0];
            vars[k + 2] = self.origin[k + 2] + u * a[1] + w * r[1];
        }
    }

    /// Pose gradient in local coordinates with the along-ray part dropped.
    fn grad_to_local(&self, g: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; g.len()];
        for (i, (a, _)) in self.axes.iter().enumerate() {
            let k = 3 * i;
            out[k] = g[k];
            out[k + 1] = g[k + 1] * a[0] + g[k + 2] * a[1];
        }
        out
    }

    /// Removes the mean angle correction and the least-squares common shift
    /// `c` (whose detector-axis part in view `i` is `c . a_i`).
    fn recentre(&self, local: &mut [f64]) {
        let m = self.axes.len();
        if m == 0 {
            return;
        }
        let mean_dtheta = (0..m).map(|i| local[3 * i] - self.origin[3 * i]).sum::<f64>() / m as f64;
        let (mut s00, mut s01, mut s11, mut b0, mut b1) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (i, (a, _)) in self.axes.iter().enumerate() {
            let u = local[3 * i + 1];
            s00 += a[0] * a[0];
            s01 += a[0] * a[1];
            s11 += a[1] * a[1];
            b0 += a[0] * u;
            b1 += a[1] * u;
        }
        let det = s00 * s11 - s01 * s01;
        let c = if det.abs() > 1e-12 * (s00 + s11).powi(2) {
            [(s11 * b0 - s01 * b1) / det, (s00 * b1 - s01 * b0) / det]
        } else {
            [0.0, 0.0]
        };
        for (i, (a, _)) in self.axes.iter().enumerate() {
            local[3 * i] -= mean_dtheta;
            local[3 * i + 1] -= c[0] * a[0] + c[1] * a[1];
        }
    }
}

/// Mean absolute error and its subgradient `sign(pred - target) / (M N)`,
/// zero at ties.
pub fn l1_loss(pred: &Sinogram, target: &Sinogram) -> Result<(f64, Sinogram)> {
    if pred.n_views() != target.n_views() || pred.n_bins() != target.n_bins() {
        return Err(Error::Shape(format!(
            "prediction is {}x{}, target {}x{}",
            pred.n_views(),
            pred.n_bins(),
            target.n_views(),
            target.n_bins()
        )));
    }
    let scale = 1.0 / pred.values().len() as f64;
    let (loss, grad) = l1_row(pred.values(), target.values(), scale);
    let grad = Sinogram::new(grad, pred.angles().to_vec(), *pred.detector())?;
    Ok((loss, grad))
}

fn l1_row(pred: &[f64], target: &[f64], scale: f64) -> (f64, Vec<f64>) {
    let mut loss = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(p, y)| {
            let d = p - y;
            loss += d.abs();
            if d > 0.0 {
                scale
            } else if d < 0.0 {
                -scale
            } else {
                0.0
            }
        })
        .collect();
    (loss * scale, grad)
}

/// Loss and gradients for one set of views.
#[derive(Clone, Debug)]
pub struct Objective {
    /// Mean absolute error over the selected views.
    pub loss: f64,
    pub param_grad: Vec<f64>,
    /// Flat `[theta, t_x, t_y]` gradient over all views; zero for views
    /// not selected.
    pub pose_grad: Vec<f64>,
}

/// Evaluates the l1 objective over `views` of `target` for the given field
/// parameters and poses, with gradients for both.
pub fn objective(
    model: &FieldModel,
    params: &[f64],
    poses: &[ProjectionPose],
    target: &Sinogram,
    views: &[usize],
    mode: RenderMode,
    grid_size: usize,
    exec: Exec,
) -> Result<Objective> {
    if poses.len() != target.n_views() {
        return Err(Error::Shape("pose count differs from sinogram view count".into()));
    }
    let geom: &DetectorGeometry = target.detector();
    let scale = 1.0 / (views.len() * target.n_bins()) as f64;
    let row_loss = |view: usize, pred: &[f64]| l1_row(pred, target.row(view), scale);
    let (loss, param_grad, pg) = match mode {
        RenderMode::Direct => {
            let field = model.bind(params).with_exec(Exec::Sequential);
            let g = project_backward(&field, poses, views, geom, row_loss, exec)?;
            (g.loss, g.param_grad, g.pose_grad)
        }
        RenderMode::Grid => {
            let centers = ImageGrid::pixel_centers(grid_size);
            let mut px = vec![0.0; centers.len()];
            model.forward_batch(params, &centers, &mut px, exec)?;
            let image = ImageGrid::from_pixels(grid_size, px)?;
            let g = project_backward(&image, poses, views, geom, row_loss, exec)?;
            let mut param_grad = vec![0.0; model.n_params()];
            let mut cg = vec![[0.0; 2]; centers.len()];
            model.backward_batch(params, &centers, &g.param_grad, &mut param_grad, &mut cg, exec)?;
            (g.loss, param_grad, g.pose_grad)
        }
    };
    let mut pose_grad = vec![0.0; 3 * poses.len()];
    for (&v, g) in views.iter().zip(&pg) {
        pose_grad[3 * v..3 * v + 3].copy_from_slice(g);
    }
    Ok(Objective {
        loss,
        param_grad,
        pose_grad,
    })
}

/// Evaluates the field at every pixel center of a `size x size` grid.
pub fn render_image(model: &FieldModel, state: &TrainState, size: usize, exec: Exec) -> Result<ImageGrid> {
    let centers = ImageGrid::pixel_centers(size);
    let mut px = vec![0.0; centers.len()];
    model.forward_batch(&state.params, &centers, &mut px, exec)?;
    ImageGrid::from_pixels(size, px)
}

#[derive(Clone, Debug)]
pub struct ReconReport {
    pub image: ImageGrid,
    pub poses: PoseSet,
    pub loss_history: Vec<f64>,
    /// Filled in by the caller once a reference is available.
    pub metrics: Option<MetricsBlock>,
    pub seconds: f64,
    pub config: Vec<(String, String)>,
    pub state: TrainState,
}

/// Fits a field and poses to `sinogram` starting from `initial_poses`.
pub fn train(config: &TrainConfig, sinogram: &Sinogram, initial_poses: &PoseSet) -> Result<ReconReport> {
    train_with(config, sinogram, initial_poses, |_, _| Ok(()))
}

/// [`train`] with a callback invoked every `checkpoint_every` epochs (and
/// after the last one) with the model and current state.
pub fn train_with<C>(
    config: &TrainConfig,
    sinogram: &Sinogram,
    initial_poses: &PoseSet,
    mut on_checkpoint: C,
) -> Result<ReconReport>
where
    C: FnMut(&FieldModel, &TrainState) -> Result<()>,
{
    config.validate()?;
    if initial_poses.len() != sinogram.n_views() {
        return Err(Error::Shape(format!(
            "{} initial poses for {} views",
            initial_poses.len(),
            sinogram.n_views()
        )));
    }
    crate::error::check_finite("sinogram", sinogram.values())?;
    let start = Instant::now();
    let mut model = FieldModel::new(config.arch.clone())?;
    let n_levels = model.hash_grid().map_or(0, |g| g.n_levels());
    let mut state = TrainState::new(model.init_params(config.seed).values, initial_poses);
    let m = sinogram.n_views();
    let grid = config.grid_size.unwrap_or(sinogram.n_bins());
    let batch = config.views_per_batch.unwrap_or(m).min(m);
    let all_views: Vec<usize> = (0..m).collect();
    let mut first_loss = None;
    let frame = (config.pose_gauge == PoseGauge::Fixed).then(|| GaugeFrame::new(&state.pose_vars));

    for epoch in 0..config.epochs {
        let lr_f = lr_at(epoch, config.lr_field, config.decay_factor, config.decay_every);
        let lr_p = lr_at(epoch, config.lr_pose, config.decay_factor, config.decay_every);
        if let (Some((a, b)), true) = (config.coarse_to_fine, n_levels > 0) {
            let progress = (epoch as f64 / config.epochs as f64 - a) / (b - a);
            model.set_level_weights(&level_weights_at(n_levels, progress))?;
        }
        let mut epoch_loss = 0.0;
        for views in all_views.chunks(batch) {
            let poses = state.poses();
            let obj = objective(&model, &state.params, &poses, sinogram, views, config.mode, grid, config.exec)?;
            let reason = if !obj.loss.is_finite() {
                Some(format!("loss is {}", obj.loss))
            } else {
                match first_loss {
                    Some(l0) if obj.loss > config.divergence_factor * l0 && obj.loss > 0.0 => Some(format!(
                        "loss {:.6e} exceeds {} x initial {:.6e}",
                        obj.loss, config.divergence_factor, l0
                    )),
                    _ => None,
                }
            };
            if let Some(reason) = reason {
                return Err(Error::Diverged {
                    epoch,
                    reason,
                    last_finite: Some(Box::new(state)),
                });
            }
            epoch_loss += obj.loss * views.len() as f64 / m as f64;
            let update_poses = config.pose_correction && epoch >= config.pose_warmup;
            match (&frame, update_poses) {
                (Some(frame), true) => {
                    let global = std::mem::take(&mut state.pose_vars);
                    state.pose_vars = frame.to_local(&global);
                    let g = frame.grad_to_local(&obj.pose_grad);
                    let res = adam_step(&mut state, model.layout(), &obj.param_grad, Some(&g), lr_f, lr_p);
                    let mut local = std::mem::replace(&mut state.pose_vars, global);
                    res?;
                    frame.recentre(&mut local);
                    frame.to_global(&local, &mut state.pose_vars);
                }
                _ => {
                    let pose_grad = update_poses.then_some(obj.pose_grad.as_slice());
                    adam_step(&mut state, model.layout(), &obj.param_grad, pose_grad, lr_f, lr_p)?;
                }
            }
        }
        first_loss.get_or_insert(epoch_loss);
        state.loss_history.push(epoch_loss);
        let done = epoch + 1 == config.epochs;
        if done || config.checkpoint_every.is_some_and(|k| (epoch + 1) % k == 0) {
            on_checkpoint(&model, &state)?;
        }
    }

    let out = config.out_size.unwrap_or(sinogram.n_bins());
    let image = render_image(&model, &state, out, config.exec)?;
    let poses = PoseSet::new(state.poses(), initial_poses.nominal_angles.clone())?;
    Ok(ReconReport {
        image,
        poses,
        loss_history: state.loss_history.clone(),
        metrics: None,
        seconds: start.elapsed().as_secs_f64(),
        config: config.echo(),
        state,
    })
}
