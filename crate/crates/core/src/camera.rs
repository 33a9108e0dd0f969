//! Pinhole camera with a rigid head pose, and the analytic derivatives of
//! the projection used by the fitting losses.

use nalgebra::{Matrix3, Quaternion, Vector2, Vector3, Vector4};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Default for Intrinsics {
    fn default() -> Self {
        Self {
            focal: 500.0,
            cx: 160.0,
            cy: 120.0,
        }
    }
}

/// Rigid transform followed by pinhole projection. `rotation` is kept unit
/// length by the optimizer; projection normalizes it anyway.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Quaternion<f64>,
    pub translation: Vector3<f64>,
    pub intrinsics: Intrinsics,
}

impl Pose {
    pub fn new(rotation: Quaternion<f64>, translation: Vector3<f64>, intrinsics: Intrinsics) -> Self {
        Self {
            rotation,
            translation,
            intrinsics,
        }
    }

    pub fn identity(intrinsics: Intrinsics) -> Self {
        Self::new(Quaternion::identity(), Vector3::zeros(), intrinsics)
    }

    pub fn normalize_rotation(&mut self) {
        let n = self.rotation.norm();
        if n > 0.0 {
            self.rotation /= n;
        }
    }
}

/// Projects a model-space vertex to pixels.
pub fn project(vertex: &Vector3<f64>, pose: &Pose) -> Result<Vector2<f64>> {
    Ok(Projector::new(pose)?.project(vertex)?.pixel)
}

#[derive(Debug, Clone, Copy)]
pub struct Projected {
    pub pixel: Vector2<f64>,
    pub camera: Vector3<f64>,
}

/// Gradient of a scalar with respect to the pose parameters. `rotation` is
/// ordered `(w, x, y, z)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PoseGrad {
    pub rotation: Vector4<f64>,
    pub translation: Vector3<f64>,
}

/// Pose with its rotation matrix and rotation derivatives precomputed.
#[derive(Debug, Clone)]
pub struct Projector {
    intr: Intrinsics,
    t: Vector3<f64>,
    r: Matrix3<f64>,
    // d R / d qhat for qhat = (w, x, y, z)
    dr: [Matrix3<f64>; 4],
    qhat: Vector4<f64>,
    qnorm: f64,
}

impl Projector {
    pub fn new(pose: &Pose) -> Result<Self> {
        let q = pose.rotation;
        let qnorm = q.norm();
        if !(qnorm > 0.0 && qnorm.is_finite()) {
            return Err(Error::Numeric(format!("rotation quaternion has norm {qnorm}")));
        }
        let (w, x, y, z) = (q.w / qnorm, q.i / qnorm, q.j / qnorm, q.k / qnorm);
        #[rustfmt::skip]
        let r = Matrix3::new(
            1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z),       2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),       1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),       2.0 * (y * z + w * x),       1.0 - 2.0 * (x * x + y * y),
        );
        #[rustfmt::skip]
        let dr = [
            Matrix3::new(
                0.0,      -2.0 * z,  2.0 * y,
                2.0 * z,   0.0,     -2.0 * x,
               -2.0 * y,   2.0 * x,  0.0,
            ),
            Matrix3::new(
                0.0,      2.0 * y,  2.0 * z,
                2.0 * y, -4.0 * x, -2.0 * w,
                2.0 * z,  2.0 * w, -4.0 * x,
            ),
            Matrix3::new(
               -4.0 * y,  2.0 * x,  2.0 * w,
                2.0 * x,  0.0,      2.0 * z,
               -2.0 * w,  2.0 * z, -4.0 * y,
            ),
            Matrix3::new(
               -4.0 * z, -2.0 * w,  2.0 * x,
                2.0 * w, -4.0 * z,  2.0 * y,
                2.0 * x,  2.0 * y,  0.0,
            ),
        ];
        Ok(Self {
            intr: pose.intrinsics,
            t: pose.translation,
            r,
            dr,
            qhat: Vector4::new(w, x, y, z),
            qnorm,
        })
    }

    pub fn rotation_matrix(&self) -> &Matrix3<f64> {
        &self.r
    }

    pub fn project(&self, s: &Vector3<f64>) -> Result<Projected> {
        let c = self.r * s + self.t;
        if !(c.z > 0.0) {
            return Err(Error::BehindCamera { depth: c.z });
        }
        let f = self.intr.focal;
        let pixel = Vector2::new(f * c.x / c.z + self.intr.cx, f * c.y / c.z + self.intr.cy);
        Ok(Projected { pixel, camera: c })
    }

    /// Chains `d loss / d pixel` back through the projection. Adds the pose
    /// contribution to `acc` (rotation with respect to the normalized
    /// quaternion; see [`PoseGrad`] and [`Projector::finish`]) and returns
    /// `d loss / d s` for the model-space vertex.
    pub fn backprop(&self, s: &Vector3<f64>, p: &Projected, g: &Vector2<f64>, acc: &mut PoseGrad) -> Vector3<f64> {
        let f = self.intr.focal;
        let c = p.camera;
        let inv_z = 1.0 / c.z;
        let gc = Vector3::new(
            f * g.x * inv_z,
            f * g.y * inv_z,
            -f * (g.x * c.x + g.y * c.y) * inv_z * inv_z,
        );
        acc.translation += gc;
        for (slot, dr) in self.dr.iter().enumerate() {
            acc.rotation[slot] += gc.dot(&(dr * s));
        }
        self.r.transpose() * gc
    }

    /// Converts an accumulated gradient with respect to the normalized
    /// quaternion into one with respect to the raw parameters. At unit
    /// length this is the projection onto the sphere's tangent space.
    pub fn finish(&self, acc: PoseGrad) -> PoseGrad {
        let g = acc.rotation;
        let tangent = (g - self.qhat * self.qhat.dot(&g)) / self.qnorm;
        PoseGrad {
            rotation: tangent,
            translation: acc.translation,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{UnitQuaternion, Vector3};

    fn pose(f: f64, cx: f64, cy: f64) -> Pose {
        Pose::identity(Intrinsics { focal: f, cx, cy })
    }

    #[test]
    fn optical_axis_hits_principal_point() {
        let p = project(&Vector3::new(0.0, 0.0, 1.0), &pose(500.0, 160.0, 120.0)).unwrap();
        assert_eq!(p, Vector2::new(160.0, 120.0));
    }

    #[test]
    fn direct_formula() {
        let p = project(&Vector3::new(1.0, 0.0, 1.0), &pose(100.0, 0.0, 0.0)).unwrap();
        assert_eq!(p, Vector2::new(100.0, 0.0));
    }

    #[test]
    fn zero_depth_is_behind_camera() {
        let err = project(&Vector3::new(1.0, 0.0, 0.0), &pose(100.0, 0.0, 0.0)).unwrap_err();
        assert!(matches!(err, Error::BehindCamera { .. }));
    }

    #[test]
    fn rotation_matches_nalgebra() {
        let uq = UnitQuaternion::from_euler_angles(0.3, -0.2, 0.7);
        let pose = Pose::new(*uq.quaternion(), Vector3::new(0.1, 0.2, 5.0), Intrinsics::default());
        let proj = Projector::new(&pose).unwrap();
        let v = Vector3::new(0.4, -0.3, 0.2);
        assert_relative_eq!(proj.rotation_matrix() * v, uq * v, epsilon = 1e-12);
    }

    #[test]
    fn unnormalized_rotation_projects_like_normalized() {
        let uq = UnitQuaternion::from_euler_angles(0.1, 0.2, 0.3);
        let mut pose = Pose::new(*uq.quaternion() * 3.0, Vector3::new(0.0, 0.0, 4.0), Intrinsics::default());
        let a = project(&Vector3::new(0.2, 0.1, 0.0), &pose).unwrap();
        pose.normalize_rotation();
        let b = project(&Vector3::new(0.2, 0.1, 0.0), &pose).unwrap();
        assert_relative_eq!(a, b, epsilon = 1e-12);
    }
}
