//! Quasi-static pushing dynamics and the center-of-mass corrections around it.
//!
//! All quantities are in the object frame at time `t`. `c` and `u_c` are the
//! contact point and contact motion relative to the center of mass; `v` is the
//! offset from the center of mass to the object's geometric center.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Planar2;

/// Lower bound of the friction parameter `h`, in meters.
pub const H_MIN: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhysicsError {
    #[error("friction parameter h must be positive and finite, got {0}")]
    NonPositiveH(f64),
    #[error("friction parameter h must exceed h_min = {H_MIN}, got {0}")]
    BelowMinimum(f64),
}

/// The fast-adapting analytical parameters: COM offset `v` and friction
/// parameter `h`, stored as `rho` with `h = H_MIN + exp(rho)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OnlineParams {
    pub v: Planar2,
    pub rho: f64,
}

impl OnlineParams {
    pub fn from_h(v: Planar2, h: f64) -> Result<Self, PhysicsError> {
        if !h.is_finite() || h <= H_MIN {
            return Err(PhysicsError::BelowMinimum(h));
        }
        Ok(Self {
            v,
            rho: (h - H_MIN).ln(),
        })
    }

    pub fn h(&self) -> f64 {
        H_MIN + self.rho.exp()
    }

    /// `dh/drho`.
    pub fn dh_drho(&self) -> f64 {
        self.rho.exp()
    }

    pub fn to_array(&self) -> [f64; 3] {
        [self.v.x, self.v.y, self.rho]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self {
            v: Planar2::new(a[0], a[1]),
            rho: a[2],
        }
    }
}

impl Default for OnlineParams {
    /// `v = 0`, `h = 0.05 m`.
    fn default() -> Self {
        Self::from_h(Planar2::ZERO, 0.05).expect("default h is above h_min")
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ContactState {
    pub c: Planar2,
    pub u_c: Planar2,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PhysicalOutcome {
    pub d_com: Planar2,
    pub d_omega: f64,
}

/// Jacobian of [`physical_push`]: rows `(dCOM_x, dCOM_y, d_omega)`, columns
/// `(c_x, c_y, u_cx, u_cy, h)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PushJacobian(pub [[f64; 5]; 3]);

impl PushJacobian {
    pub const C_X: usize = 0;
    pub const C_Y: usize = 1;
    pub const U_X: usize = 2;
    pub const U_Y: usize = 3;
    pub const H: usize = 4;

    /// Vector-Jacobian product: pulls an output cotangent back to the inputs.
    pub fn pullback(&self, g_com: Planar2, g_omega: f64) -> [f64; 5] {
        let mut out = [0.0; 5];
        for (k, o) in out.iter_mut().enumerate() {
            *o = g_com.x * self.0[0][k] + g_com.y * self.0[1][k] + g_omega * self.0[2][k];
        }
        out
    }
}

fn check_h(h: f64) -> Result<(), PhysicsError> {
    if h.is_finite() && h > 0.0 {
        Ok(())
    } else {
        Err(PhysicsError::NonPositiveH(h))
    }
}

/// Quasi-static push response of the center of mass.
///
/// The rotation uses `(c x dCOM) / h^2`, which simplifies to
/// `(c x u_c) / (h^2 + |c|^2)`; the simplified form is evaluated so that a push
/// through the center of mass yields exactly zero rotation.
pub fn physical_push(contact: &ContactState, h: f64) -> Result<PhysicalOutcome, PhysicsError> {
    check_h(h)?;
    let ContactState { c, u_c: u } = *contact;
    let h2 = h * h;
    let denom = h2 + c.x * c.x + c.y * c.y;
    let nx = (h2 + c.x * c.x) * u.x + c.x * c.y * u.y;
    let ny = (h2 + c.y * c.y) * u.y + c.x * c.y * u.x;
    Ok(PhysicalOutcome {
        d_com: Planar2::new(nx / denom, ny / denom),
        d_omega: c.cross(u) / denom,
    })
}

/// Closed-form Jacobian of [`physical_push`] with respect to `(c, u_c, h)`.
pub fn physical_push_grad(contact: &ContactState, h: f64) -> Result<PushJacobian, PhysicsError> {
    let out = physical_push(contact, h)?;
    let ContactState { c, u_c: u } = *contact;
    let h2 = h * h;
    let denom = h2 + c.x * c.x + c.y * c.y;

    let d_nx = [
        2.0 * c.x * u.x + c.y * u.y,
        c.x * u.y,
        h2 + c.x * c.x,
        c.x * c.y,
        2.0 * h * u.x,
    ];
    let d_ny = [
        c.y * u.x,
        2.0 * c.y * u.y + c.x * u.x,
        c.x * c.y,
        h2 + c.y * c.y,
        2.0 * h * u.y,
    ];
    let d_cross = [u.y, -u.x, -c.y, c.x, 0.0];
    let d_denom = [2.0 * c.x, 2.0 * c.y, 0.0, 0.0, 2.0 * h];

    let mut jac = [[0.0; 5]; 3];
    for k in 0..5 {
        jac[0][k] = (d_nx[k] - out.d_com.x * d_denom[k]) / denom;
        jac[1][k] = (d_ny[k] - out.d_com.y * d_denom[k]) / denom;
        jac[2][k] = (d_cross[k] - out.d_omega * d_denom[k]) / denom;
    }
    Ok(PushJacobian(jac))
}

/// Robot position relative to the center of mass.
pub fn correct_input_position(p_r_o: Planar2, v: Planar2) -> Planar2 {
    p_r_o + v
}

/// Object-center displacement from the COM displacement: `dCOM + (R(dw) - I) v`.
pub fn correct_output_motion(d_com: Planar2, d_omega: f64, v: Planar2) -> Planar2 {
    let (s, cm1) = rot_minus_identity(d_omega);
    d_com + Planar2::new(cm1 * v.x - s * v.y, s * v.x + cm1 * v.y)
}

/// `(sin w, cos w - 1)`, the latter without cancellation near zero.
fn rot_minus_identity(w: f64) -> (f64, f64) {
    let half = (0.5 * w).sin();
    (w.sin(), -2.0 * half * half)
}

/// Jacobian of [`correct_output_motion`]. `d_com` is always the identity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MotionCorrectionJacobian {
    /// `R'(dw) v`.
    pub d_omega: Planar2,
    /// `R(dw) - I`, row-major.
    pub d_v: [[f64; 2]; 2],
}

impl MotionCorrectionJacobian {
    pub fn d_com(&self) -> [[f64; 2]; 2] {
        [[1.0, 0.0], [0.0, 1.0]]
    }
}

pub fn correct_output_motion_grad(
    _d_com: Planar2,
    d_omega: f64,
    v: Planar2,
) -> MotionCorrectionJacobian {
    let (s, c) = d_omega.sin_cos();
    let (_, cm1) = rot_minus_identity(d_omega);
    MotionCorrectionJacobian {
        d_omega: Planar2::new(-s * v.x - c * v.y, c * v.x - s * v.y),
        d_v: [[cm1, -s], [s, cm1]],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    fn contact(cx: f64, cy: f64, ux: f64, uy: f64) -> ContactState {
        ContactState {
            c: Planar2::new(cx, cy),
            u_c: Planar2::new(ux, uy),
        }
    }

    /// Unsimplified push response, with the rotation as `(c x dCOM) / h^2`.
    fn push_reference(k: &ContactState, h: f64) -> [f64; 3] {
        let (cx, cy, ux, uy) = (k.c.x, k.c.y, k.u_c.x, k.u_c.y);
        let d = h * h + cx * cx + cy * cy;
        let x = ((h * h + cx * cx) * ux + cx * cy * uy) / d;
        let y = ((h * h + cy * cy) * uy + cx * cy * ux) / d;
        [x, y, (cx * y - cy * x) / (h * h)]
    }

    fn push_vec(x: [f64; 5]) -> [f64; 3] {
        let out = physical_push(&contact(x[0], x[1], x[2], x[3]), x[4]).unwrap();
        [out.d_com.x, out.d_com.y, out.d_omega]
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
    }

    #[test]
    fn push_examples() {
        let out = physical_push(&contact(0.0, -1.0, 0.0, 1.0), 1.0).unwrap();
        assert_eq!(out.d_com, Planar2::new(0.0, 1.0));
        assert_eq!(out.d_omega, 0.0);

        let out = physical_push(&contact(1.0, 0.0, 0.0, 1.0), 1.0).unwrap();
        assert_eq!(out.d_com, Planar2::new(0.0, 0.5));
        assert_eq!(out.d_omega, 0.5);

        let out = physical_push(&contact(0.3, -0.7, 0.0, 0.0), 0.2).unwrap();
        assert_eq!(out.d_com, Planar2::ZERO);
        assert_eq!(out.d_omega, 0.0);
    }

    #[test]
    fn rejects_non_positive_h() {
        let k = contact(0.1, 0.1, 0.0, 1.0);
        assert_eq!(physical_push(&k, 0.0), Err(PhysicsError::NonPositiveH(0.0)));
        assert!(physical_push(&k, -1.0).is_err());
        assert!(physical_push(&k, f64::NAN).is_err());
        assert!(physical_push_grad(&k, 0.0).is_err());
    }

    #[test]
    fn simplified_rotation_matches_literal_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let k = contact(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let h = rng.random_range(0.05..2.0);
            let a = physical_push(&k, h).unwrap();
            let b = push_reference(&k, h);
            assert!((a.d_com.x - b[0]).abs() < 1e-14);
            assert!((a.d_com.y - b[1]).abs() < 1e-14);
            assert!((a.d_omega - b[2]).abs() < 1e-10 * b[2].abs().max(1.0));
        }
    }

    #[test]
    fn jacobian_examples() {
        let jac = physical_push_grad(&contact(0.0, 0.0, 0.4, -0.2), 0.7).unwrap();
        assert_eq!(jac.0[0][PushJacobian::U_X], 1.0);

        let jac = physical_push_grad(&contact(0.0, -1.0, 0.0, 1.0), 1.0).unwrap();
        assert_eq!(jac.0[2][PushJacobian::H], 0.0);
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let step = 1e-6;
        for _ in 0..100 {
            let x = [
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(0.2..2.0),
            ];
            let jac = physical_push_grad(&contact(x[0], x[1], x[2], x[3]), x[4]).unwrap();
            for k in 0..5 {
                let mut xp = x;
                let mut xm = x;
                xp[k] += step;
                xm[k] -= step;
                let (fp, fm) = (push_vec(xp), push_vec(xm));
                for row in 0..3 {
                    let num = (fp[row] - fm[row]) / (2.0 * step);
                    let ana = jac.0[row][k];
                    if ana.abs() < 1e-8 && num.abs() < 1e-8 {
                        continue;
                    }
                    assert!(
                        rel_err(ana, num) < 1e-6,
                        "row {row} col {k}: analytic {ana} numeric {num}"
                    );
                }
            }
        }
    }

    #[test]
    fn input_correction_examples() {
        let p = Planar2::new(1.0, -2.0);
        assert_eq!(correct_input_position(p, Planar2::ZERO), p);
        assert_eq!(
            correct_input_position(p, Planar2::new(-1.0, -0.5)),
            Planar2::new(0.0, -2.5)
        );
    }

    #[test]
    fn input_correction_points_from_com_to_robot() {
        // Object center at the origin, COM at (-1, -0.5), so v = p_o - COM = (1, 0.5).
        let com = Planar2::new(-1.0, -0.5);
        let v = Planar2::ZERO - com;
        let robot = Planar2::new(0.4, 1.3);
        assert_eq!(correct_input_position(robot, v), robot - com);
    }

    #[test]
    fn output_correction_examples() {
        let d = Planar2::new(0.2, -0.1);
        assert_eq!(correct_output_motion(d, 0.3, Planar2::ZERO), d);
        let out = correct_output_motion(Planar2::ZERO, FRAC_PI_2, Planar2::new(1.0, 0.0));
        assert!((out.x + 1.0).abs() < 1e-15 && (out.y - 1.0).abs() < 1e-15);
        assert_eq!(correct_output_motion(d, 0.0, Planar2::new(3.0, -4.0)), d);

        let jac = correct_output_motion_grad(d, 0.0, Planar2::new(3.0, -4.0));
        assert_eq!(jac.d_v, [[0.0, 0.0], [0.0, 0.0]]);
        assert_eq!(jac.d_com(), [[1.0, 0.0], [0.0, 1.0]]);
    }

    #[test]
    fn output_correction_jacobian_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let step = 1e-6;
        let f = |x: [f64; 5]| {
            let o = correct_output_motion(Planar2::new(x[0], x[1]), x[2], Planar2::new(x[3], x[4]));
            [o.x, o.y]
        };
        for _ in 0..100 {
            let x: [f64; 5] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            let jac = correct_output_motion_grad(
                Planar2::new(x[0], x[1]),
                x[2],
                Planar2::new(x[3], x[4]),
            );
            let d_com = jac.d_com();
            let analytic = |row: usize, k: usize| match k {
                0 | 1 => d_com[row][k],
                2 => jac.d_omega.to_array()[row],
                _ => jac.d_v[row][k - 3],
            };
            for k in 0..5 {
                let mut xp = x;
                let mut xm = x;
                xp[k] += step;
                xm[k] -= step;
                let (fp, fm) = (f(xp), f(xm));
                for row in 0..2 {
                    let num = (fp[row] - fm[row]) / (2.0 * step);
                    let ana = analytic(row, k);
                    if ana.abs() < 1e-8 && num.abs() < 1e-8 {
                        continue;
                    }
                    assert!(
                        rel_err(ana, num) < 1e-6,
                        "row {row} col {k}: {ana} vs {num}"
                    );
                }
            }
        }
    }

    #[test]
    fn online_params_reparameterization() {
        let p = OnlineParams::from_h(Planar2::new(0.01, 0.02), 0.05).unwrap();
        assert!((p.h() - 0.05).abs() < 1e-15);
        assert!(OnlineParams::from_h(Planar2::ZERO, H_MIN).is_err());
        let low = OnlineParams {
            v: Planar2::ZERO,
            rho: -800.0,
        };
        assert!(low.h() >= H_MIN);
        assert_eq!(OnlineParams::default().v, Planar2::ZERO);
    }
}
