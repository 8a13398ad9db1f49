//! Rotation carriers and the handful of SO(3) operations the rest of the crate
//! relies on.
//!
//! [`Rotation`] is the canonical carrier. [`Rot6D`] is the continuous
//! representation the network regresses: the first two columns of the rotation
//! matrix, flattened column by column. [`AxisAngle`] is the compact on-disk form
//! and the space where Gaussian noise is injected.
//!
//! The Gram-Schmidt kernel is exposed twice: [`gram_schmidt`] for `f64` values
//! with precondition checks, and the generic [`gram_schmidt_columns`] /
//! [`gram_schmidt_vjp`] pair which the network uses in both `f32` and `f64`.

use std::f64::consts::PI;
use std::ops::Mul;

use nalgebra::{Matrix3, Vector3};
use num_traits::Float;
use rand::Rng;

use crate::error::{Error, Result};

/// Minimum norm accepted for either Gram-Schmidt input column.
pub const GS_MIN_NORM: f64 = 1e-8;

/// Tolerance on `mᵀm = I` and `det m = 1`.
pub const ORTHO_TOL: f64 = 1e-6;

/// A proper rotation matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Matrix3::identity())
    }

    /// Validates orthonormality and a positive unit determinant.
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        let r = Rotation(m);
        if r.orthonormality_error() > ORTHO_TOL || (m.determinant() - 1.0).abs() > ORTHO_TOL {
            return Err(Error::InvalidConfig(format!(
                "matrix is not a rotation (ortho err {:.3e}, det {:.6})",
                r.orthonormality_error(),
                m.determinant()
            )));
        }
        Ok(r)
    }

    pub fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Rotation(m)
    }

    /// Rotation of `angle` radians about the (not necessarily unit) `axis`.
    pub fn about_axis(axis: Vector3<f64>, angle: f64) -> Self {
        axisangle_to_rotation(AxisAngle(axis.normalize() * angle))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Rotation(self.0.transpose())
    }

    /// Max-abs entry of `mᵀm − I`.
    pub fn orthonormality_error(&self) -> f64 {
        (self.0.transpose() * self.0 - Matrix3::identity()).abs().max()
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        self.orthonormality_error() <= tol && (self.0.determinant() - 1.0).abs() <= tol
    }

    pub fn apply(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    /// Frobenius distance between the two matrices.
    pub fn chordal_distance(&self, other: &Rotation) -> f64 {
        (self.0 - other.0).norm()
    }
}

impl Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl Mul<&Rotation> for &Rotation {
    type Output = Rotation;
    fn mul(self, rhs: &Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

/// First two rotation-matrix columns, `(c1x, c1y, c1z, c2x, c2y, c2z)`.
///
/// Any 6-vector is a valid value; only [`gram_schmidt`] imposes conditions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rot6D(pub [f64; 6]);

/// Rotation vector: unit axis scaled by the angle in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisAngle(pub Vector3<f64>);

impl AxisAngle {
    pub fn angle(&self) -> f64 {
        self.0.norm()
    }
}

/// Orthonormalizes two 3-columns into a full rotation, column-major output.
///
/// Returns `None` when either norm precondition fails. Generic so the network
/// can run it in `f32` while gradient checks run it in `f64`.
pub fn gram_schmidt_columns<F: Float>(v: &[F; 6], min_norm: F) -> Option<[F; 9]> {
    let a1 = [v[0], v[1], v[2]];
    let a2 = [v[3], v[4], v[5]];
    let n1 = norm3(&a1);
    if !(n1 > min_norm) {
        return None;
    }
    let b1 = scale3(&a1, F::one() / n1);
    let d = dot3(&b1, &a2);
    let u = [a2[0] - d * b1[0], a2[1] - d * b1[1], a2[2] - d * b1[2]];
    let n2 = norm3(&u);
    if !(n2 > min_norm) {
        return None;
    }
    let b2 = scale3(&u, F::one() / n2);
    let b3 = cross3(&b1, &b2);
    Some([b1[0], b1[1], b1[2], b2[0], b2[1], b2[2], b3[0], b3[1], b3[2]])
}

/// Vector-Jacobian product of [`gram_schmidt_columns`].
///
/// `grad_out` is the gradient with respect to the column-major 3×3 output;
/// returns the gradient with respect to the 6D input. The input must satisfy
/// the norm preconditions.
pub fn gram_schmidt_vjp<F: Float>(v: &[F; 6], grad_out: &[F; 9]) -> [F; 6] {
    let a1 = [v[0], v[1], v[2]];
    let a2 = [v[3], v[4], v[5]];
    let n1 = norm3(&a1);
    let b1 = scale3(&a1, F::one() / n1);
    let d = dot3(&b1, &a2);
    let u = [a2[0] - d * b1[0], a2[1] - d * b1[1], a2[2] - d * b1[2]];
    let n2 = norm3(&u);
    let b2 = scale3(&u, F::one() / n2);

    let g3 = [grad_out[6], grad_out[7], grad_out[8]];
    let mut gb1 = [grad_out[0], grad_out[1], grad_out[2]];
    let mut gb2 = [grad_out[3], grad_out[4], grad_out[5]];
    // b3 = b1 × b2
    gb1 = add3(&gb1, &cross3(&b2, &g3));
    gb2 = add3(&gb2, &cross3(&g3, &b1));

    // b2 = u / |u|
    let p = dot3(&b2, &gb2);
    let gu = scale3(&sub3(&gb2, &scale3(&b2, p)), F::one() / n2);

    // u = a2 − (b1·a2) b1
    let bu = dot3(&b1, &gu);
    let ga2 = sub3(&gu, &scale3(&b1, bu));
    gb1 = sub3(&gb1, &add3(&scale3(&gu, d), &scale3(&a2, bu)));

    // b1 = a1 / |a1|
    let q = dot3(&b1, &gb1);
    let ga1 = scale3(&sub3(&gb1, &scale3(&b1, q)), F::one() / n1);
    [ga1[0], ga1[1], ga1[2], ga2[0], ga2[1], ga2[2]]
}

/// Maps an arbitrary 6D vector onto SO(3).
pub fn gram_schmidt(v: &Rot6D) -> Result<Rotation> {
    let a1 = Vector3::new(v.0[0], v.0[1], v.0[2]);
    if a1.norm() <= GS_MIN_NORM {
        return Err(Error::DegenerateInput("first column has vanishing norm"));
    }
    let c = gram_schmidt_columns(&v.0, GS_MIN_NORM)
        .ok_or(Error::DegenerateInput("second column is parallel to the first"))?;
    Ok(Rotation(Matrix3::from_column_slice(&c)))
}

/// Full 9×6 Jacobian of [`gram_schmidt`] (row = output entry, column-major).
pub fn gram_schmidt_jacobian(v: &Rot6D) -> Result<[[f64; 6]; 9]> {
    gram_schmidt(v)?;
    let mut jac = [[0.0; 6]; 9];
    for (i, row) in jac.iter_mut().enumerate() {
        let mut e = [0.0; 9];
        e[i] = 1.0;
        *row = gram_schmidt_vjp(&v.0, &e);
    }
    Ok(jac)
}

pub fn rotation_to_6d(r: &Rotation) -> Rot6D {
    let m = r.matrix();
    Rot6D([m[(0, 0)], m[(1, 0)], m[(2, 0)], m[(0, 1)], m[(1, 1)], m[(2, 1)]])
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rodrigues' formula.
pub fn axisangle_to_rotation(a: AxisAngle) -> Rotation {
    let theta = a.0.norm();
    let k = skew(&a.0);
    let m = if theta < 1e-8 {
        // second-order expansion
        Matrix3::identity() + k + k * k * 0.5
    } else {
        Matrix3::identity()
            + k * (theta.sin() / theta)
            + k * k * ((1.0 - theta.cos()) / (theta * theta))
    };
    Rotation(m)
}

/// Logarithm map via a quaternion (Shepperd's method), canonical angle in `[0, π]`.
///
/// At exactly π the axis sign is fixed so that its largest-magnitude component
/// is positive.
pub fn rotation_to_axisangle(r: &Rotation) -> AxisAngle {
    let m = r.matrix();
    let tr = m.trace();
    let (w, x, y, z);
    if tr > m[(0, 0)].max(m[(1, 1)]).max(m[(2, 2)]) {
        let s = (1.0 + tr).max(0.0).sqrt() * 2.0;
        w = 0.25 * s;
        x = (m[(2, 1)] - m[(1, 2)]) / s;
        y = (m[(0, 2)] - m[(2, 0)]) / s;
        z = (m[(1, 0)] - m[(0, 1)]) / s;
    } else if m[(0, 0)] >= m[(1, 1)] && m[(0, 0)] >= m[(2, 2)] {
        let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).max(0.0).sqrt() * 2.0;
        w = (m[(2, 1)] - m[(1, 2)]) / s;
        x = 0.25 * s;
        y = (m[(0, 1)] + m[(1, 0)]) / s;
        z = (m[(0, 2)] + m[(2, 0)]) / s;
    } else if m[(1, 1)] >= m[(2, 2)] {
        let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).max(0.0).sqrt() * 2.0;
        w = (m[(0, 2)] - m[(2, 0)]) / s;
        x = (m[(0, 1)] + m[(1, 0)]) / s;
        y = 0.25 * s;
        z = (m[(1, 2)] + m[(2, 1)]) / s;
    } else {
        let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).max(0.0).sqrt() * 2.0;
        w = (m[(1, 0)] - m[(0, 1)]) / s;
        x = (m[(0, 2)] + m[(2, 0)]) / s;
        y = (m[(1, 2)] + m[(2, 1)]) / s;
        z = 0.25 * s;
    }
    let mut qv = Vector3::new(x, y, z);
    let mut qw = w;
    if qw < 0.0 {
        qw = -qw;
        qv = -qv;
    }
    let s = qv.norm();
    if s < 1e-300 {
        return AxisAngle(Vector3::zeros());
    }
    let angle = 2.0 * s.atan2(qw);
    let mut axis = qv / s;
    if (angle - PI).abs() < 1e-12 {
        let imax = axis.iamax();
        if axis[imax] < 0.0 {
            axis = -axis;
        }
    }
    AxisAngle(axis * angle)
}

/// Angle of `r1ᵀ r2`, in radians.
pub fn geodesic_distance(r1: &Rotation, r2: &Rotation) -> f64 {
    let rel = r1.matrix().transpose() * r2.matrix();
    ((rel.trace() - 1.0) * 0.5).clamp(-1.0, 1.0).acos()
}

/// Geodesic interpolation `r1 · exp(t · log(r1ᵀ r2))`.
pub fn slerp(r1: &Rotation, r2: &Rotation, t: f64) -> Result<Rotation> {
    if (geodesic_distance(r1, r2) - PI).abs() <= 1e-6 {
        return Err(Error::AmbiguousAntipodal);
    }
    let rel = r1.transpose() * *r2;
    let log = rotation_to_axisangle(&rel);
    Ok(*r1 * axisangle_to_rotation(AxisAngle(log.0 * t)))
}

/// Uniformly distributed rotation (Shoemake's uniform quaternion).
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> Rotation {
    let u1: f64 = rng.random();
    let u2: f64 = rng.random();
    let u3: f64 = rng.random();
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    let tau = 2.0 * PI;
    let (x, y) = (a * (tau * u2).sin(), a * (tau * u2).cos());
    let (z, w) = (b * (tau * u3).sin(), b * (tau * u3).cos());
    Rotation(quat_to_matrix(w, x, y, z))
}

fn quat_to_matrix(w: f64, x: f64, y: f64, z: f64) -> Matrix3<f64> {
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Projects an arbitrary 3×3 matrix onto the nearest rotation (Frobenius sense).
pub fn project_to_rotation(m: &Matrix3<f64>) -> Rotation {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd u");
    let vt = svd.v_t.expect("svd v_t");
    let mut d = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    Rotation(u * d * vt)
}

#[inline]
fn dot3<F: Float>(a: &[F; 3], b: &[F; 3]) -> F {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}
#[inline]
fn norm3<F: Float>(a: &[F; 3]) -> F {
    dot3(a, a).sqrt()
}
#[inline]
fn scale3<F: Float>(a: &[F; 3], s: F) -> [F; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}
#[inline]
fn add3<F: Float>(a: &[F; 3], b: &[F; 3]) -> [F; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}
#[inline]
fn sub3<F: Float>(a: &[F; 3], b: &[F; 3]) -> [F; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}
#[inline]
fn cross3<F: Float>(a: &[F; 3], b: &[F; 3]) -> [F; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}
