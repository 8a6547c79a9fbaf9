//! Planar rigid-body geometry shared by every module.
//!
//! Rotations are stored as a single angle. [`Transform2`] acts on points,
//! [`Pose2`] is the same quantity viewed as a robot/sensor pose.

use std::f64::consts::{PI, TAU};

use nalgebra::{Point2, Vector2};
use serde::{Deserialize, Serialize};

pub type Point = Point2<f64>;

/// Wraps an angle into `(-π, π]`.
pub fn normalize_angle(theta: f64) -> f64 {
    let r = theta.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// Rigid planar transform `p ↦ R(rotation)·p + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transform2 {
    pub rotation: f64,
    pub translation: Vector2<f64>,
}

impl Default for Transform2 {
    fn default() -> Self {
        Self::identity()
    }
}

impl Transform2 {
    pub fn new(rotation: f64, tx: f64, ty: f64) -> Self {
        Self {
            rotation: normalize_angle(rotation),
            translation: Vector2::new(tx, ty),
        }
    }

    pub fn identity() -> Self {
        Self {
            rotation: 0.0,
            translation: Vector2::zeros(),
        }
    }

    #[inline]
    pub fn rotate(&self, v: Vector2<f64>) -> Vector2<f64> {
        if self.rotation == 0.0 {
            return v;
        }
        let (s, c) = self.rotation.sin_cos();
        Vector2::new(c * v.x - s * v.y, s * v.x + c * v.y)
    }

    #[inline]
    pub fn apply(&self, p: &Point) -> Point {
        Point::from(self.rotate(p.coords) + self.translation)
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Transform2) -> Transform2 {
        Transform2 {
            rotation: normalize_angle(self.rotation + other.rotation),
            translation: self.rotate(other.translation) + self.translation,
        }
    }

    pub fn inverse(&self) -> Transform2 {
        let inv = Transform2 {
            rotation: normalize_angle(-self.rotation),
            translation: Vector2::zeros(),
        };
        Transform2 {
            rotation: inv.rotation,
            translation: -inv.rotate(self.translation),
        }
    }
}

/// Robot or sensor pose: position in meters, heading in radians.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: normalize_angle(theta),
        }
    }

    pub fn origin() -> Self {
        Self::default()
    }

    pub fn position(&self) -> Point {
        Point::new(self.x, self.y)
    }

    pub fn to_transform(&self) -> Transform2 {
        Transform2::new(self.theta, self.x, self.y)
    }

    pub fn from_transform(t: &Transform2) -> Self {
        Self::new(t.translation.x, t.translation.y, t.rotation)
    }

    pub fn compose(&self, other: &Pose2) -> Pose2 {
        Pose2::from_transform(&self.to_transform().compose(&other.to_transform()))
    }

    pub fn inverse(&self) -> Pose2 {
        Pose2::from_transform(&self.to_transform().inverse())
    }

    /// Pose of `other` expressed in the frame of `self`.
    pub fn between(&self, other: &Pose2) -> Pose2 {
        self.inverse().compose(other)
    }

    pub fn apply(&self, p: &Point) -> Point {
        self.to_transform().apply(p)
    }
}

impl From<Pose2> for Transform2 {
    fn from(p: Pose2) -> Self {
        p.to_transform()
    }
}

impl From<Transform2> for Pose2 {
    fn from(t: Transform2) -> Self {
        Pose2::from_transform(&t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn close_t(a: &Transform2, b: &Transform2, tol: f64) -> bool {
        normalize_angle(a.rotation - b.rotation).abs() <= tol
            && (a.translation - b.translation).norm() <= tol
    }

    #[test]
    fn compose_identity() {
        let i = Transform2::identity();
        assert_eq!(i.compose(&i), i);
    }

    #[test]
    fn compose_hand_computed() {
        let a = Transform2::new(PI / 2.0, 1.0, 0.0);
        let b = Transform2::new(0.0, 1.0, 0.0);
        let c = a.compose(&b);
        assert_abs_diff_eq!(c.rotation, PI / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c.translation.x, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c.translation.y, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn apply_examples() {
        let p = Point::new(3.2, -1.0);
        assert_eq!(Transform2::identity().apply(&p), p);

        let q = Transform2::new(PI, 0.0, 0.0).apply(&Point::new(1.0, 0.0));
        assert_abs_diff_eq!(q.x, -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(q.y, 0.0, epsilon = 1e-12);

        let q = Transform2::new(PI / 2.0, 2.0, 0.0).apply(&Point::new(1.0, 0.0));
        assert_abs_diff_eq!(q.x, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(q.y, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn normalize_range() {
        assert_eq!(normalize_angle(PI), PI);
        assert_eq!(normalize_angle(-PI), PI);
        assert_eq!(normalize_angle(0.0), 0.0);
        assert!(normalize_angle(-1e-300) <= 0.0 && normalize_angle(-1e-300) > -PI);
        assert_abs_diff_eq!(normalize_angle(3.0 * PI / 2.0), -PI / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn pose_between_rotated_submap() {
        let submap = Pose2::new(0.0, 0.0, PI / 2.0);
        let scan = Pose2::new(0.0, 1.0, PI / 2.0);
        let rel = submap.between(&scan);
        assert_abs_diff_eq!(rel.x, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(rel.y, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(rel.theta, 0.0, epsilon = 1e-12);
    }

    fn transform() -> impl Strategy<Value = Transform2> {
        (-10.0..10.0f64, -50.0..50.0f64, -50.0..50.0f64)
            .prop_map(|(r, x, y)| Transform2::new(r, x, y))
    }

    fn point() -> impl Strategy<Value = Point> {
        (-50.0..50.0f64, -50.0..50.0f64).prop_map(|(x, y)| Point::new(x, y))
    }

    proptest! {
        #[test]
        fn inverse_round_trip(t in transform(), p in point()) {
            let q = t.inverse().apply(&t.apply(&p));
            prop_assert!((q - p).norm() <= 1e-9);
            prop_assert!(close_t(&t.compose(&t.inverse()), &Transform2::identity(), 1e-9));
        }

        #[test]
        fn compose_matches_sequential_apply(a in transform(), b in transform(), p in point()) {
            let lhs = a.compose(&b).apply(&p);
            let rhs = a.apply(&b.apply(&p));
            prop_assert!((lhs - rhs).norm() <= 1e-9);
        }

        #[test]
        fn compose_associative(a in transform(), b in transform(), c in transform()) {
            let l = a.compose(&b).compose(&c);
            let r = a.compose(&b.compose(&c));
            prop_assert!(close_t(&l, &r, 1e-9));
        }

        #[test]
        fn rigid_motion_preserves_distance(t in transform(), p in point(), q in point()) {
            let d0 = (p - q).norm();
            let d1 = (t.apply(&p) - t.apply(&q)).norm();
            prop_assert!((d0 - d1).abs() <= 1e-9);
        }

        #[test]
        fn normalization_is_periodic(theta in -PI..PI, k in -20i32..20) {
            let a = normalize_angle(theta + TAU * k as f64);
            let b = normalize_angle(theta);
            prop_assert!(a > -PI && a <= PI);
            // compare on the circle so values straddling ±π are equal
            prop_assert!(normalize_angle(a - b).abs() <= 1e-12);
        }
    }
}
