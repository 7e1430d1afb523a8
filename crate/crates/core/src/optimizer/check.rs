//! Finite-difference verification of the analytic edge Jacobians.

use nalgebra::{DMatrix, DVector};

use super::residual::{linearize, loop_residual, measurement_residual};
use crate::geometry::{Pose, Twist};
use crate::graph::{Edge, EdgeKind, Graph, SwitchVariable};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct JacobianCheck {
    /// Largest `|analytic - numeric| / max(1, |numeric|)` over all entries.
    pub max_deviation: f64,
    pub edges_checked: usize,
}

fn residual_of(edge: &Edge, pi: &Pose, pj: &Pose, switch: Option<&SwitchVariable>) -> DVector<f64> {
    match (edge.kind, switch) {
        (EdgeKind::LoopClosure, Some(sw)) => DVector::from_column_slice(loop_residual(edge, pi, pj, sw).as_slice()),
        _ => DVector::from_column_slice(measurement_residual(&edge.measurement, pi, pj).as_slice()),
    }
}

/// Analytic Jacobian of the full edge residual: 6 columns per endpoint, plus
/// one for the switch on loop closures.
fn analytic(edge: &Edge, pi: &Pose, pj: &Pose, switch: Option<&SwitchVariable>) -> DMatrix<f64> {
    let lin = linearize(&edge.measurement, pi, pj);
    match switch {
        None => {
            let mut j = DMatrix::zeros(6, 12);
            j.view_mut((0, 0), (6, 6)).copy_from(&lin.jac_from);
            j.view_mut((0, 6), (6, 6)).copy_from(&lin.jac_to);
            j
        }
        Some(sw) => {
            let mut j = DMatrix::zeros(7, 13);
            j.view_mut((0, 0), (6, 6)).copy_from(&(lin.jac_from * sw.value));
            j.view_mut((0, 6), (6, 6)).copy_from(&(lin.jac_to * sw.value));
            j.view_mut((0, 12), (6, 1)).copy_from(&lin.residual);
            j[(6, 12)] = sw.prior_information.sqrt();
            j
        }
    }
}

fn numeric(edge: &Edge, pi: &Pose, pj: &Pose, switch: Option<&SwitchVariable>, h: f64) -> DMatrix<f64> {
    let rows = if switch.is_some() { 7 } else { 6 };
    let cols = if switch.is_some() { 13 } else { 12 };
    let mut j = DMatrix::zeros(rows, cols);
    for c in 0..12 {
        let mut xi = [0.0; 6];
        xi[c % 6] = h;
        let plus = Twist::from_slice(&xi);
        xi[c % 6] = -h;
        let minus = Twist::from_slice(&xi);
        let (rp, rm) = if c < 6 {
            (residual_of(edge, &pi.retract(&plus), pj, switch), residual_of(edge, &pi.retract(&minus), pj, switch))
        } else {
            (residual_of(edge, pi, &pj.retract(&plus), switch), residual_of(edge, pi, &pj.retract(&minus), switch))
        };
        j.set_column(c, &((rp - rm) / (2.0 * h)));
    }
    if let Some(sw) = switch {
        let mut up = *sw;
        let mut down = *sw;
        up.value += h;
        down.value -= h;
        let d = (residual_of(edge, pi, pj, Some(&up)) - residual_of(edge, pi, pj, Some(&down))) / (2.0 * h);
        j.set_column(12, &d);
    }
    j
}

/// Compares analytic and central-difference Jacobians of every live edge.
///
/// When the predicted baseline is degenerate the translation rows are zero
/// analytically; the guarded residual is only piecewise smooth there, so those
/// rows are checked against zero instead of the finite difference.
pub fn numeric_jacobian_check(graph: &Graph, h: f64) -> JacobianCheck {
    let mut out = JacobianCheck::default();
    for edge in graph.edges().iter().filter(|e| graph.edge_is_live(e)) {
        let pi = graph.vertex(edge.from).expect("live edge endpoint").pose;
        let pj = graph.vertex(edge.to).expect("live edge endpoint").pose;
        let switch = graph.switch_of(edge);
        let a = analytic(edge, &pi, &pj, switch);
        let degenerate = linearize(&edge.measurement, &pi, &pj).degenerate;
        let n = if degenerate { a.clone() } else { numeric(edge, &pi, &pj, switch, h) };
        if degenerate {
            let translation_rows = a.view((0, 0), (3, 12)).amax();
            out.max_deviation = out.max_deviation.max(translation_rows);
            let num = numeric(edge, &pi, &pj, switch, h);
            for r in 3..a.nrows() {
                for c in 0..a.ncols() {
                    let dev = (a[(r, c)] - num[(r, c)]).abs() / num[(r, c)].abs().max(1.0);
                    out.max_deviation = out.max_deviation.max(dev);
                }
            }
        } else {
            for (x, y) in a.iter().zip(n.iter()) {
                out.max_deviation = out.max_deviation.max((x - y).abs() / y.abs().max(1.0));
            }
        }
        out.edges_checked += 1;
    }
    out
}
