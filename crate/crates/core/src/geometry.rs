//! Rigid per-view poses and the map from the standard ray frame into the
//! physical (object) frame: `p_real = R(theta) p + t`.

use std::f64::consts::PI;

use crate::error::{Error, Result};

pub type Vec2 = [f64; 2];
/// Row-major 2x2 matrix.
pub type Mat2 = [[f64; 2]; 2];

/// Pose of one projection: rotation angle in radians and a translation in
/// normalized image units (the `[-1, 1]^2` square spans 2 units).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectionPose {
    pub theta: f64,
    pub t: Vec2,
}

/// Jacobians of `apply_pose` at a point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseJacobians {
    /// d p_real / d theta = R'(theta) p
    pub d_theta: Vec2,
    /// d p_real / d t, always the identity.
    pub d_t: Mat2,
    /// d p_real / d p = R(theta)
    pub d_p: Mat2,
}

pub fn rotation_matrix(theta: f64) -> Result<Mat2> {
    if !theta.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "rotation angle must be finite, got {theta}"
        )));
    }
    let (s, c) = theta.sin_cos();
    Ok([[c, -s], [s, c]])
}

impl ProjectionPose {
    pub fn new(theta: f64, t: Vec2) -> Self {
        Self { theta, t }
    }

    pub fn identity() -> Self {
        Self::new(0.0, [0.0, 0.0])
    }

    pub fn is_finite(&self) -> bool {
        self.theta.is_finite() && self.t.iter().all(|v| v.is_finite())
    }

    /// Unit vector along the detector axis in the object frame, `R(theta) e_x`.
    #[inline]
    pub fn detector_axis(&self) -> Vec2 {
        let (s, c) = self.theta.sin_cos();
        [c, s]
    }

    /// Unit vector along the rays in the object frame, `R(theta) e_y`.
    #[inline]
    pub fn ray_direction(&self) -> Vec2 {
        let (s, c) = self.theta.sin_cos();
        [-s, c]
    }

    pub fn apply(&self, p: Vec2) -> Result<Vec2> {
        if !self.is_finite() || !p.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument(
                "apply_pose needs a finite pose and point".into(),
            ));
        }
        Ok(self.apply_unchecked(p))
    }

    #[inline]
    pub(crate) fn apply_unchecked(&self, p: Vec2) -> Vec2 {
        let (s, c) = self.theta.sin_cos();
        [c * p[0] - s * p[1] + self.t[0], s * p[0] + c * p[1] + self.t[1]]
    }

    /// Inverse map, `R(theta)^T (p_real - t)`.
    pub fn invert(&self, p_real: Vec2) -> Vec2 {
        let (s, c) = self.theta.sin_cos();
        let d = [p_real[0] - self.t[0], p_real[1] - self.t[1]];
        [c * d[0] + s * d[1], -s * d[0] + c * d[1]]
    }

    pub fn jacobians(&self, p: Vec2) -> Result<PoseJacobians> {
        let r = rotation_matrix(self.theta)?;
        if !p.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite point".into()));
        }
        let (s, c) = self.theta.sin_cos();
        Ok(PoseJacobians {
            d_theta: [-s * p[0] - c * p[1], c * p[0] - s * p[1]],
            d_t: [[1.0, 0.0], [0.0, 1.0]],
            d_p: r,
        })
    }
}

/// `R(theta) p + t`.
pub fn apply_pose(pose: &ProjectionPose, p: Vec2) -> Result<Vec2> {
    pose.apply(p)
}

pub fn apply_pose_jacobians(pose: &ProjectionPose, p: Vec2) -> Result<PoseJacobians> {
    pose.jacobians(p)
}

/// Reduces an angle to `(-pi, pi]`. Optimized angles are stored unwrapped;
/// this is only for reporting.
pub fn wrap_angle(theta: f64) -> f64 {
    let mut a = theta.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// `m` uniformly spaced parallel-beam angles on `[0, pi)`.
pub fn uniform_angles(m: usize) -> Vec<f64> {
    (0..m).map(|i| i as f64 * PI / m as f64).collect()
}

/// One pose per view plus the scheduled (nominal) acquisition angles.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseSet {
    pub poses: Vec<ProjectionPose>,
    pub nominal_angles: Vec<f64>,
}

impl PoseSet {
    pub fn new(poses: Vec<ProjectionPose>, nominal_angles: Vec<f64>) -> Result<Self> {
        if poses.len() != nominal_angles.len() {
            return Err(Error::Shape(format!(
                "{} poses for {} nominal angles",
                poses.len(),
                nominal_angles.len()
            )));
        }
        if nominal_angles.windows(2).any(|w| w[1] <= w[0])
            || nominal_angles.iter().any(|a| !(0.0..PI).contains(a))
        {
            return Err(Error::InvalidArgument(
                "nominal angles must be strictly increasing within [0, pi)".into(),
            ));
        }
        if let Some(i) = poses.iter().position(|p| !p.is_finite()) {
            return Err(Error::NonFinite {
                what: "pose".into(),
                index: i,
            });
        }
        Ok(Self {
            poses,
            nominal_angles,
        })
    }

    /// Poses sitting exactly at the nominal angles with zero translation.
    pub fn nominal(nominal_angles: Vec<f64>) -> Result<Self> {
        let poses = nominal_angles
            .iter()
            .map(|&a| ProjectionPose::new(a, [0.0, 0.0]))
            .collect();
        Self::new(poses, nominal_angles)
    }

    pub fn uniform(m: usize) -> Self {
        Self::nominal(uniform_angles(m)).expect("uniform angles are valid")
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    /// Flattened `[theta_0, tx_0, ty_0, theta_1, ...]`.
    pub fn to_flat(&self) -> Vec<f64> {
        self.poses
            .iter()
            .flat_map(|p| [p.theta, p.t[0], p.t[1]])
            .collect()
    }

    pub fn with_flat(&self, flat: &[f64]) -> Self {
        assert_eq!(flat.len(), 3 * self.len());
        let poses = flat
            .chunks_exact(3)
            .map(|c| ProjectionPose::new(c[0], [c[1], c[2]]))
            .collect();
        Self {
            poses,
            nominal_angles: self.nominal_angles.clone(),
        }
    }
}
