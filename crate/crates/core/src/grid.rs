//! Five-dimensional pose keying.
//!
//! Space is cut into cubes of edge `dl`. View directions are cut into pitch
//! rings of height `d_phi`; each ring is split into yaw cells whose width
//! shrinks with the cosine of the ring's mid latitude so that cells keep a
//! roughly constant area on the sphere. The two rings touching the poles are
//! kept whole.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;

use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector3};
use thiserror::Error;

const POLE_EPS: f64 = 1e-9;
const ORTHO_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("invalid grid parameters: {0}")]
    InvalidParams(String),
    #[error("non-finite position ({0}, {1}, {2})")]
    NonFinite(f64, f64, f64),
    #[error("position {0} m is outside the representable grid range")]
    OutOfRange(f64),
    #[error("rotation is not orthonormal with determinant +1")]
    NotARotation,
}

/// Resolution of the 5D grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridParams {
    /// Spatial cell edge in meters.
    pub dl: f64,
    /// Yaw step at the equator in radians.
    pub d_theta: f64,
    /// Pitch step in radians.
    pub d_phi: f64,
}

impl GridParams {
    pub fn new(dl: f64, d_theta: f64, d_phi: f64) -> Result<Self, GridError> {
        let p = Self { dl, d_theta, d_phi };
        p.validate()?;
        Ok(p)
    }

    /// `dl = 0.4`, `d_theta = d_phi = π/6`.
    pub fn indoor() -> Self {
        Self { dl: 0.4, d_theta: PI / 6.0, d_phi: PI / 6.0 }
    }

    /// `dl = 2.0`, `d_theta = d_phi = π/6`.
    pub fn outdoor() -> Self {
        Self { dl: 2.0, d_theta: PI / 6.0, d_phi: PI / 6.0 }
    }

    pub fn validate(&self) -> Result<(), GridError> {
        if !(self.dl.is_finite() && self.dl > 0.0) {
            return Err(GridError::InvalidParams(format!("dl must be > 0, got {}", self.dl)));
        }
        if !(self.d_theta > 0.0 && self.d_theta <= PI) {
            return Err(GridError::InvalidParams(format!(
                "d_theta must lie in (0, π], got {}",
                self.d_theta
            )));
        }
        if !(self.d_phi > 0.0 && self.d_phi <= FRAC_PI_2) {
            return Err(GridError::InvalidParams(format!(
                "d_phi must lie in (0, π/2], got {}",
                self.d_phi
            )));
        }
        Ok(())
    }

    /// Index of the bottom pole-cap ring.
    pub fn bottom_ring(&self) -> i32 {
        (-FRAC_PI_2 / self.d_phi + POLE_EPS).floor() as i32
    }

    /// Index of the top pole-cap ring: the lowest ring whose upper edge
    /// reaches `π/2`. A pitch of exactly `π/2` is folded into it.
    pub fn top_ring(&self) -> i32 {
        (FRAC_PI_2 / self.d_phi - POLE_EPS).ceil() as i32 - 1
    }

    pub fn is_cap_ring(&self, l: i32) -> bool {
        l <= self.bottom_ring() || l >= self.top_ring()
    }

    /// Yaw cell width on ring `l`: `d_theta · cos((l + 0.5) · d_phi)`.
    pub fn ring_width(&self, l: i32) -> f64 {
        self.d_theta * ((l as f64 + 0.5) * self.d_phi).cos()
    }

    /// Range of yaw indices reached on a non-cap ring for yaw in (-π, π].
    pub fn ring_m_range(&self, l: i32) -> (i32, i32) {
        let w = self.ring_width(l);
        ((-PI / w).floor() as i32, (PI / w).floor() as i32)
    }
}

/// Rigid camera pose, world ← camera. The camera looks along its local +z.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

/// Unit quaternion from `q`, left untouched when it is already unit to
/// working precision so that stored rotations survive text round trips.
pub fn unit_quaternion(q: Quaternion<f64>) -> UnitQuaternion<f64> {
    if (q.norm_squared() - 1.0).abs() <= 8.0 * f64::EPSILON {
        UnitQuaternion::new_unchecked(q)
    } else {
        UnitQuaternion::new_normalize(q)
    }
}

impl Pose {
    /// Pose from a rotation matrix; the matrix is assumed orthonormal.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(rotation));
        Self { rotation: unit_quaternion(q.into_inner()), translation }
    }

    pub fn identity() -> Self {
        Self { rotation: UnitQuaternion::identity(), translation: Vector3::zeros() }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self { rotation: UnitQuaternion::identity(), translation: t }
    }

    pub fn from_quaternion(q: &UnitQuaternion<f64>, t: Vector3<f64>) -> Self {
        Self { rotation: unit_quaternion(q.into_inner()), translation: t }
    }

    /// Builds a camera pose whose forward axis points at the given yaw and
    /// pitch, with the camera x axis kept horizontal and `roll` applied about
    /// the forward axis.
    pub fn looking(position: Vector3<f64>, theta: f64, phi: f64, roll: f64) -> Self {
        let forward = direction(theta, phi);
        // Right vector stays in the horizontal plane; at the poles fall back to yaw.
        let right = Vector3::new(theta.sin(), -theta.cos(), 0.0);
        let down = forward.cross(&right);
        let (s, c) = roll.sin_cos();
        let x = right * c + down * s;
        let y = -right * s + down * c;
        Self::new(Matrix3::from_columns(&[x, y, forward]), position)
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    /// Camera forward axis (local +z) in world coordinates.
    pub fn forward(&self) -> Vector3<f64> {
        self.rotation * Vector3::z()
    }

    pub fn position(&self) -> Vector3<f64> {
        self.translation
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: unit_quaternion((self.rotation * other.rotation).into_inner()),
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let ri = self.rotation.inverse();
        Pose { rotation: ri, translation: -(ri * self.translation) }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// World point expressed in the camera frame.
    pub fn inverse_transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.inverse_transform_vector(&(p - self.translation))
    }

    pub fn to_quaternion(&self) -> UnitQuaternion<f64> {
        self.rotation
    }

    pub fn is_finite(&self) -> bool {
        self.rotation.coords.iter().all(|v| v.is_finite()) && self.translation.iter().all(|v| v.is_finite())
    }

    pub fn is_valid_rotation(&self) -> bool {
        (self.rotation.norm() - 1.0).abs() <= ORTHO_TOL
    }

    pub fn check(&self) -> Result<(), GridError> {
        if self.is_finite() && self.is_valid_rotation() {
            Ok(())
        } else {
            Err(GridError::NotARotation)
        }
    }

    /// Rotation angle of `self⁻¹ ∘ other` in radians.
    pub fn rotation_angle_to(&self, other: &Pose) -> f64 {
        self.rotation.angle_to(&other.rotation)
    }
}

/// Unit vector at yaw `theta` and pitch `phi`.
pub fn direction(theta: f64, phi: f64) -> Vector3<f64> {
    Vector3::new(phi.cos() * theta.cos(), phi.cos() * theta.sin(), phi.sin())
}

/// Yaw and pitch of a camera forward axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewAngles {
    /// Yaw in (-π, π].
    pub theta: f64,
    /// Pitch in [-π/2, π/2].
    pub phi: f64,
}

impl ViewAngles {
    pub fn direction(&self) -> Vector3<f64> {
        direction(self.theta, self.phi)
    }
}

/// Wraps an angle into (-π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    if w <= -PI {
        w += 2.0 * PI;
    }
    w
}

pub fn view_angles(pose: &Pose) -> ViewAngles {
    direction_angles(&pose.forward())
}

/// Yaw and pitch of a direction vector; the zero vector maps to +z.
pub fn direction_angles(f: &Vector3<f64>) -> ViewAngles {
    let n = f.norm();
    let f = if n > 0.0 { f / n } else { Vector3::z() };
    let phi = f.z.clamp(-1.0, 1.0).asin();
    let theta = if f.x == 0.0 && f.y == 0.0 { 0.0 } else { f.y.atan2(f.x) };
    // atan2 may return exactly -π.
    let theta = if theta <= -PI { theta + 2.0 * PI } else { theta };
    ViewAngles { theta, phi }
}

/// Identifier of one 5D cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct PoseKey {
    pub i: i32,
    pub j: i32,
    pub k: i32,
    pub l: i32,
    pub m: i32,
}

impl PoseKey {
    pub const fn new(i: i32, j: i32, k: i32, l: i32, m: i32) -> Self {
        Self { i, j, k, l, m }
    }

    pub fn spatial(&self) -> (i32, i32, i32) {
        (self.i, self.j, self.k)
    }
}

impl fmt::Display for PoseKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{},{},{})", self.i, self.j, self.k, self.l, self.m)
    }
}

fn floor_index(v: f64) -> Result<i32, GridError> {
    let f = v.floor();
    if f < i32::MIN as f64 || f > i32::MAX as f64 {
        return Err(GridError::OutOfRange(v));
    }
    Ok(f as i32)
}

pub fn spatial_key(position: &Vector3<f64>, dl: f64) -> Result<(i32, i32, i32), GridError> {
    if !position.iter().all(|v| v.is_finite()) {
        return Err(GridError::NonFinite(position.x, position.y, position.z));
    }
    Ok((
        floor_index(position.x / dl)?,
        floor_index(position.y / dl)?,
        floor_index(position.z / dl)?,
    ))
}

pub fn angular_key(angles: ViewAngles, params: &GridParams) -> (i32, i32) {
    let raw = (angles.phi / params.d_phi).floor() as i32;
    let l = raw.clamp(params.bottom_ring(), params.top_ring());
    if params.is_cap_ring(l) {
        return (l, 0);
    }
    let m = (angles.theta / params.ring_width(l)).floor() as i32;
    (l, m)
}

pub fn pose_key(pose: &Pose, params: &GridParams) -> Result<PoseKey, GridError> {
    let (i, j, k) = spatial_key(&pose.translation, params.dl)?;
    let (l, m) = angular_key(view_angles(pose), params);
    Ok(PoseKey { i, j, k, l, m })
}

/// Ideal cell center. Yaw is `(m + 0.5)` ring widths and may fall past ±π
/// for the last, narrower cell of a ring.
pub fn cell_center(key: &PoseKey, params: &GridParams) -> (Vector3<f64>, ViewAngles) {
    let dl = params.dl;
    let position = Vector3::new(
        (key.i as f64 + 0.5) * dl,
        (key.j as f64 + 0.5) * dl,
        (key.k as f64 + 0.5) * dl,
    );
    let phi = ((key.l as f64 + 0.5) * params.d_phi).clamp(-FRAC_PI_2, FRAC_PI_2);
    let theta = if params.is_cap_ring(key.l) {
        0.0
    } else {
        (key.m as f64 + 0.5) * params.ring_width(key.l)
    };
    (position, ViewAngles { theta, phi })
}

/// Pose at the center of a cell (zero roll).
pub fn cell_center_pose(key: &PoseKey, params: &GridParams) -> Pose {
    let (p, a) = cell_center(key, params);
    Pose::looking(p, a.theta, a.phi, 0.0)
}
