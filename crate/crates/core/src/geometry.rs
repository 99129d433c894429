//! Planar rigid-body frame arithmetic.
//!
//! Observations arrive in the world frame; the prediction model works in the
//! object's current frame. Everything here is exact `f64` arithmetic with no
//! small-angle shortcuts.

use std::f64::consts::{PI, TAU};
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

/// A 2-vector in meters (positions, motions, offsets).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Planar2 {
    pub x: f64,
    pub y: f64,
}

impl Planar2 {
    pub const ZERO: Planar2 = Planar2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, other: Planar2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// z-component of the 3D cross product.
    pub fn cross(self, other: Planar2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn to_array(self) -> [f64; 2] {
        [self.x, self.y]
    }
}

impl From<[f64; 2]> for Planar2 {
    fn from(a: [f64; 2]) -> Self {
        Self::new(a[0], a[1])
    }
}

impl Add for Planar2 {
    type Output = Planar2;
    fn add(self, rhs: Planar2) -> Planar2 {
        Planar2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl AddAssign for Planar2 {
    fn add_assign(&mut self, rhs: Planar2) {
        self.x += rhs.x;
        self.y += rhs.y;
    }
}

impl Sub for Planar2 {
    type Output = Planar2;
    fn sub(self, rhs: Planar2) -> Planar2 {
        Planar2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Neg for Planar2 {
    type Output = Planar2;
    fn neg(self) -> Planar2 {
        Planar2::new(-self.x, -self.y)
    }
}

impl Mul<f64> for Planar2 {
    type Output = Planar2;
    fn mul(self, k: f64) -> Planar2 {
        Planar2::new(self.x * k, self.y * k)
    }
}

/// An angle in radians. Not wrapped unless produced by [`wrap_angle`].
#[derive(Clone, Copy, Debug, Default, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Angle(pub f64);

impl Angle {
    pub fn radians(self) -> f64 {
        self.0
    }
}

impl Neg for Angle {
    type Output = Angle;
    fn neg(self) -> Angle {
        Angle(-self.0)
    }
}

/// Object position and heading in the world frame.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ObjectPose {
    pub position: Planar2,
    pub orientation: Angle,
}

impl ObjectPose {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            position: Planar2::new(x, y),
            orientation: Angle(theta),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.position.is_finite() && self.orientation.0.is_finite()
    }
}

/// Applies the 2x2 rotation matrix `R(angle)` to `vec`.
pub fn rotate(angle: Angle, vec: Planar2) -> Planar2 {
    let (s, c) = angle.0.sin_cos();
    Planar2::new(c * vec.x - s * vec.y, s * vec.x + c * vec.y)
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(theta: f64) -> Angle {
    if theta > -PI && theta <= PI {
        return Angle(theta);
    }
    let mut r = theta.rem_euclid(TAU);
    if r > PI {
        r -= TAU;
    }
    if r <= -PI {
        r = PI;
    }
    Angle(r)
}

/// Expresses the robot position and motion command in the object's frame.
///
/// Returns `(p_r_o, u_r_o)` with the position relative to the object center.
pub fn to_object_frame(
    object: &ObjectPose,
    robot_pos: Planar2,
    robot_motion: Planar2,
) -> (Planar2, Planar2) {
    let back = -object.orientation;
    (
        rotate(back, robot_pos - object.position),
        rotate(back, robot_motion),
    )
}

/// Inverse of [`to_object_frame`] for the robot position and motion.
pub fn from_object_frame(
    object: &ObjectPose,
    p_r_o: Planar2,
    u_r_o: Planar2,
) -> (Planar2, Planar2) {
    (
        object.position + rotate(object.orientation, p_r_o),
        rotate(object.orientation, u_r_o),
    )
}

/// Object displacement between two poses, expressed in the frame of `pose_t`.
pub fn outcome_to_object_frame(pose_t: &ObjectPose, pose_t1: &ObjectPose) -> (Planar2, Angle) {
    let dp = rotate(-pose_t.orientation, pose_t1.position - pose_t.position);
    let dw = wrap_angle(pose_t1.orientation.0 - pose_t.orientation.0);
    (dp, dw)
}

/// Applies an object-frame displacement to `pose_t`, giving the next world pose.
///
/// The resulting orientation is not wrapped, so a rolled-out heading stays
/// continuous over many steps.
pub fn outcome_to_world_frame(pose_t: &ObjectPose, dp_o: Planar2, dw_o: Angle) -> ObjectPose {
    ObjectPose {
        position: pose_t.position + rotate(pose_t.orientation, dp_o),
        orientation: Angle(pose_t.orientation.0 + dw_o.0),
    }
}
