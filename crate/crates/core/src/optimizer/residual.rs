//! Spring-model residuals and their analytic Jacobians.
//!
//! The residual of an edge `i -> j` with measured rotation `R_m` and unit
//! heading `d` is
//!
//! ```text
//! r = [ t/|t| - d ; log(R_m^T * R) ]      where (R, t) = relative(P_i, P_j)
//! ```
//!
//! Jacobians are taken with respect to right perturbations `P * exp(xi)`,
//! `xi = [rho; phi]`.

use nalgebra::{Matrix3, Matrix6, SVector, Vector6};

use crate::geometry::{relative, skew, so3_log, so3_right_jacobian_inv, Pose};
use crate::graph::{Edge, EdgeKind, EdgeMeasurement, SwitchVariable};

/// Below this predicted baseline the heading is undefined and the
/// translation block is zeroed.
pub const BASELINE_EPS: f64 = 1e-8;

pub type Vector7 = SVector<f64, 7>;

#[derive(Debug, Clone)]
pub struct EdgeLinearization {
    pub residual: Vector6<f64>,
    pub jac_from: Matrix6<f64>,
    pub jac_to: Matrix6<f64>,
    /// Predicted baseline fell under [`BASELINE_EPS`].
    pub degenerate: bool,
}

pub fn measurement_residual(m: &EdgeMeasurement, from: &Pose, to: &Pose) -> Vector6<f64> {
    let rel = relative(from, to);
    let t = rel.translation();
    let norm = t.norm();
    let mut r = Vector6::zeros();
    if norm >= BASELINE_EPS {
        r.fixed_rows_mut::<3>(0).copy_from(&(t / norm - m.direction()));
    }
    let err = m.rotation().inverse() * rel.rotation();
    r.fixed_rows_mut::<3>(3).copy_from(&so3_log(&err));
    r
}

pub fn linearize(m: &EdgeMeasurement, from: &Pose, to: &Pose) -> EdgeLinearization {
    let rel = relative(from, to);
    let t = *rel.translation();
    let r_hat = rel.rotation_matrix();
    let norm = t.norm();

    let mut residual = Vector6::zeros();
    let mut jac_from = Matrix6::zeros();
    let mut jac_to = Matrix6::zeros();

    let degenerate = norm < BASELINE_EPS;
    if !degenerate {
        let u = t / norm;
        residual.fixed_rows_mut::<3>(0).copy_from(&(u - m.direction()));
        let proj = (Matrix3::identity() - u * u.transpose()) / norm;
        // d t / d rho_i = -I, d t / d phi_i = [t]x, d t / d rho_j = R
        jac_from.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-proj));
        jac_from.fixed_view_mut::<3, 3>(0, 3).copy_from(&(proj * skew(&t)));
        jac_to.fixed_view_mut::<3, 3>(0, 0).copy_from(&(proj * r_hat));
    }

    let err = m.rotation().inverse() * rel.rotation();
    let phi = so3_log(&err);
    residual.fixed_rows_mut::<3>(3).copy_from(&phi);
    let jr_inv = so3_right_jacobian_inv(&phi);
    jac_from.fixed_view_mut::<3, 3>(3, 3).copy_from(&(-jr_inv * r_hat.transpose()));
    jac_to.fixed_view_mut::<3, 3>(3, 3).copy_from(&jr_inv);

    EdgeLinearization { residual, jac_from, jac_to, degenerate }
}

pub fn tracking_residual(edge: &Edge, pose_i: &Pose, pose_j: &Pose) -> Vector6<f64> {
    debug_assert_eq!(edge.kind, EdgeKind::Tracking);
    measurement_residual(&edge.measurement, pose_i, pose_j)
}

/// Gated residual followed by the switch prior `sqrt(lambda) * (w - 1)`.
pub fn loop_residual(edge: &Edge, pose_i: &Pose, pose_j: &Pose, switch: &SwitchVariable) -> Vector7 {
    debug_assert_eq!(edge.kind, EdgeKind::LoopClosure);
    let r = measurement_residual(&edge.measurement, pose_i, pose_j) * switch.value;
    let mut out = Vector7::zeros();
    out.fixed_rows_mut::<6>(0).copy_from(&r);
    out[6] = switch.prior_information.sqrt() * (switch.value - switch.prior);
    out
}

/// `r^T W r` for a diagonal weight `W`.
pub fn weighted_norm2(r: &Vector6<f64>, weights: &Vector6<f64>) -> f64 {
    r.iter().zip(weights.iter()).map(|(a, w)| a * a * w).sum()
}
