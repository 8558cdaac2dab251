//! Gaze directions, the angular-error metric and evaluation subsets.
//!
//! Coordinate convention, fixed here and inherited everywhere: the camera
//! looks along +z, so a subject gazing straight into the camera has gaze
//! (0, 0, -1); x points to the subject's left, y points up. Yaw is positive
//! to the subject's left, pitch positive upward.

use crate::error::{Error, Result};

/// 3D gaze direction in camera coordinates. Stored labels are unit norm;
/// predictions may be unnormalized until they reach the metric.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GazeVector {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

/// (yaw, pitch) parameterization in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphericalGaze {
    pub yaw: f64,
    pub pitch: f64,
}

/// Direction of a gaze aimed straight at the camera.
pub const CAMERA_AXIS: GazeVector = GazeVector { x: 0.0, y: 0.0, z: -1.0 };

impl GazeVector {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        GazeVector { x, y, z }
    }

    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn dot(&self, other: &GazeVector) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    /// Unit-length copy; errors on zero-norm input.
    pub fn normalized(&self) -> Result<GazeVector> {
        let n = self.norm();
        if n == 0.0 {
            return Err(Error::arg("normalize", "zero-norm gaze vector"));
        }
        Ok(GazeVector::new(self.x / n, self.y / n, self.z / n))
    }

    pub fn is_unit(&self, tol: f64) -> bool {
        (self.norm() - 1.0).abs() <= tol
    }
}

impl SphericalGaze {
    pub fn new(yaw: f64, pitch: f64) -> Self {
        SphericalGaze { yaw, pitch }
    }
}

/// Angle in degrees between two gaze directions:
/// `arccos(clamp(a.b / (|a||b|), -1, 1))`, in [0, 180].
pub fn angular_error(pred: &GazeVector, truth: &GazeVector) -> Result<f64> {
    let (np, nt) = (pred.norm(), truth.norm());
    if np == 0.0 || nt == 0.0 {
        return Err(Error::arg("angular_error", "zero-norm gaze vector"));
    }
    let cos = (pred.dot(truth) / (np * nt)).clamp(-1.0, 1.0);
    Ok(cos.acos().to_degrees())
}

/// g = (cos(pitch) sin(yaw), sin(pitch), -cos(pitch) cos(yaw)); unit norm by
/// construction.
pub fn spherical_to_vector(s: &SphericalGaze) -> GazeVector {
    let (cp, sp) = (s.pitch.cos(), s.pitch.sin());
    GazeVector::new(cp * s.yaw.sin(), sp, -cp * s.yaw.cos())
}

/// Inverse of [`spherical_to_vector`] on unit vectors. At the gimbal poles
/// (|g_y| = 1) the yaw is reported as 0.
pub fn vector_to_spherical(g: &GazeVector) -> SphericalGaze {
    let pitch = g.y.clamp(-1.0, 1.0).asin();
    let cp = pitch.cos();
    if cp < 1e-12 {
        return SphericalGaze::new(0.0, pitch);
    }
    let yaw = g.x.atan2(-g.z);
    SphericalGaze::new(yaw, pitch)
}

/// Evaluation subsets over the angle between the gaze and the camera axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Subset {
    All,
    /// Gaze angle strictly below 90 degrees from the camera axis.
    Front180,
    /// Gaze angle strictly below 20 degrees from the camera axis.
    FrontFacing,
}

impl Subset {
    pub const ALL_SUBSETS: [Subset; 3] = [Subset::All, Subset::Front180, Subset::FrontFacing];

    pub fn name(&self) -> &'static str {
        match self {
            Subset::All => "all",
            Subset::Front180 => "front180",
            Subset::FrontFacing => "front_facing",
        }
    }
}

impl std::str::FromStr for Subset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Subset::All),
            "front180" => Ok(Subset::Front180),
            "front_facing" => Ok(Subset::FrontFacing),
            other => Err(Error::arg(
                "subset",
                format!("unknown subset {other:?} (expected all, front180 or front_facing)"),
            )),
        }
    }
}

/// Whether `gaze` belongs to `subset`. Boundaries are strict: a gaze at
/// exactly 90 (or 20) degrees from the camera axis is excluded.
pub fn subset_filter(gaze: &GazeVector, subset: Subset) -> Result<bool> {
    match subset {
        Subset::All => Ok(true),
        Subset::Front180 => Ok(angular_error(gaze, &CAMERA_AXIS)? < 90.0),
        Subset::FrontFacing => Ok(angular_error(gaze, &CAMERA_AXIS)? < 20.0),
    }
}

/// Per-subset summary returned by [`mean_angular_error`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubsetError {
    pub count: usize,
    /// Mean angular error in degrees; None when the subset is empty.
    pub mean_deg: Option<f64>,
}

/// Mean angular error over the samples whose *truth* passes the subset
/// filter. Errors if the lists disagree in length; an empty subset yields
/// count 0 with no mean rather than an error value.
pub fn mean_angular_error(
    preds: &[GazeVector],
    truths: &[GazeVector],
    subset: Subset,
) -> Result<SubsetError> {
    if preds.len() != truths.len() {
        return Err(Error::arg(
            "mean_angular_error",
            format!("{} predictions vs {} truths", preds.len(), truths.len()),
        ));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (p, t) in preds.iter().zip(truths) {
        if subset_filter(t, subset)? {
            total += angular_error(p, t)?;
            count += 1;
        }
    }
    Ok(SubsetError {
        count,
        mean_deg: (count > 0).then(|| total / count as f64),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    #[test]
    fn angular_error_anchor_cases() {
        let ex = GazeVector::new(1.0, 0.0, 0.0);
        let ey = GazeVector::new(0.0, 1.0, 0.0);
        assert_eq!(angular_error(&ex, &ex).unwrap(), 0.0);
        assert!((angular_error(&ex, &ey).unwrap() - 90.0).abs() < 1e-12);
        // scale invariance
        let scaled = GazeVector::new(2.0, 0.0, 0.0);
        assert_eq!(angular_error(&ex, &scaled).unwrap(), 0.0);
        // arccos(1/sqrt(2))
        let diag = GazeVector::new(1.0, 1.0, 0.0);
        assert!((angular_error(&diag, &ex).unwrap() - 45.0).abs() < 1e-12);
    }

    #[test]
    fn zero_norm_rejected() {
        let z = GazeVector::new(0.0, 0.0, 0.0);
        let e = GazeVector::new(1.0, 0.0, 0.0);
        assert!(angular_error(&z, &e).is_err());
        assert!(angular_error(&e, &z).is_err());
    }

    #[test]
    fn clamp_prevents_nan_on_rounding_overshoot() {
        // nearly identical vectors whose dot product can exceed 1 in floats
        let a = GazeVector::new(0.6, 0.48, -0.64).normalized().unwrap();
        let err = angular_error(&a, &a).unwrap();
        assert!(err.is_finite() && err.abs() < 1e-5);
    }

    #[test]
    fn spherical_anchors() {
        let straight = spherical_to_vector(&SphericalGaze::new(0.0, 0.0));
        assert!((straight.x).abs() < 1e-15);
        assert!((straight.y).abs() < 1e-15);
        assert!((straight.z + 1.0).abs() < 1e-15);

        let left = spherical_to_vector(&SphericalGaze::new(FRAC_PI_2, 0.0));
        assert!((left.x - 1.0).abs() < 1e-15);
        assert!(left.y.abs() < 1e-15 && left.z.abs() < 1e-12);

        let nearly_up = spherical_to_vector(&SphericalGaze::new(0.0, FRAC_PI_2 - 1e-6));
        assert!((nearly_up.y - 1.0).abs() < 1e-9);
    }

    #[test]
    fn vector_to_spherical_anchors_and_pole() {
        let s = vector_to_spherical(&GazeVector::new(0.0, 0.0, -1.0));
        assert_eq!((s.yaw, s.pitch), (0.0, 0.0));

        let pole = vector_to_spherical(&GazeVector::new(0.0, 1.0, 0.0));
        assert_eq!(pole.yaw, 0.0);
        assert!((pole.pitch - FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn spherical_roundtrip_dense_grid() {
        // deterministic grid over the open domain
        let mut worst: f64 = 0.0;
        for i in 0..40 {
            for j in 0..25 {
                let yaw = -PI + (i as f64 + 0.5) * (2.0 * PI / 40.0);
                let pitch = -FRAC_PI_2 + (j as f64 + 0.5) * (PI / 25.0);
                let s = SphericalGaze::new(yaw, pitch);
                let back = vector_to_spherical(&spherical_to_vector(&s));
                worst = worst
                    .max((back.yaw - yaw).abs())
                    .max((back.pitch - pitch).abs());
            }
        }
        assert!(worst < 1e-9, "max roundtrip error {worst}");
    }

    #[test]
    fn subset_boundaries_are_strict() {
        assert!(subset_filter(&CAMERA_AXIS, Subset::FrontFacing).unwrap());
        // exactly 90 degrees from the camera axis: excluded from front180
        let side = GazeVector::new(1.0, 0.0, 0.0);
        assert!(!subset_filter(&side, Subset::Front180).unwrap());
        assert!(subset_filter(&side, Subset::All).unwrap());
    }

    #[test]
    fn mean_error_trivials() {
        let vs: Vec<GazeVector> = (0..4)
            .map(|i| {
                spherical_to_vector(&SphericalGaze::new(0.3 * i as f64 - 0.45, 0.1 * i as f64))
            })
            .collect();
        let m = mean_angular_error(&vs, &vs, Subset::All).unwrap();
        assert_eq!(m.count, 4);
        assert!(m.mean_deg.unwrap() < 1e-12);

        // one sample at 0 degrees error and one at 90 -> mean 45
        let truths = [CAMERA_AXIS, CAMERA_AXIS];
        let preds = [CAMERA_AXIS, GazeVector::new(1.0, 0.0, 0.0)];
        let m = mean_angular_error(&preds, &truths, Subset::All).unwrap();
        assert!((m.mean_deg.unwrap() - 45.0).abs() < 1e-12);
    }

    #[test]
    fn empty_subset_reports_count_zero() {
        let away = [GazeVector::new(0.0, 0.0, 1.0)];
        let m = mean_angular_error(&away, &away, Subset::FrontFacing).unwrap();
        assert_eq!(m.count, 0);
        assert!(m.mean_deg.is_none());
    }
}
