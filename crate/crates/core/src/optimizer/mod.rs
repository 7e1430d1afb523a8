//! Levenberg-Marquardt over the submap graph.
//!
//! Unknowns are the poses of active, unfixed vertices (6 DOF each, right
//! perturbation) and the switch value of every participating loop closure.
//! Each switch touches a single edge, so its row is eliminated with a Schur
//! complement before the block-sparse pose system is factored.

mod check;
mod sparse;
pub mod residual;

use std::collections::BTreeMap;

use nalgebra::{DVector, Matrix6, Vector3, Vector6};

use crate::error::{Error, Result};
use crate::geometry::{Pose, Twist};
use crate::graph::{Edge, EdgeKind, Graph, VertexId};
use sparse::{BlockMatrix, EnvelopeCholesky};

pub use check::{numeric_jacobian_check, JacobianCheck};
pub use residual::{linearize, loop_residual, measurement_residual, tracking_residual, BASELINE_EPS};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerSettings {
    pub max_iterations: usize,
    pub initial_damping: f64,
    pub damping_up: f64,
    pub damping_down: f64,
    /// Stop once an accepted step lowers chi2 by less than this fraction.
    pub convergence_tol: f64,
    /// Switch value under which a loop closure counts as closed.
    pub closed_threshold: f64,
    /// Weight of the pace term between consecutive tracking edges; zero
    /// leaves the plain spring-model cost.
    pub pace_weight: f64,
}

impl OptimizerSettings {
    /// Short run triggered by the new-edge counter.
    pub fn regular() -> Self {
        Self {
            max_iterations: 10,
            initial_damping: 1e-4,
            damping_up: 10.0,
            damping_down: 1.0 / 3.0,
            convergence_tol: 1e-6,
            closed_threshold: 0.1,
            pace_weight: 0.0,
        }
    }

    /// Long run used when the front-end is idle.
    pub fn free_time() -> Self {
        Self { max_iterations: 50, ..Self::regular() }
    }

    pub fn with_iterations(mut self, max_iterations: usize) -> Self {
        self.max_iterations = max_iterations;
        self
    }

    pub fn with_pace_weight(mut self, pace_weight: f64) -> Self {
        self.pace_weight = pace_weight;
        self
    }
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self::regular()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OptimizationReport {
    pub iterations_run: usize,
    pub chi2_initial: f64,
    pub chi2_final: f64,
    pub switches_closed: usize,
}

/// Vertex whose pose pins the gauge: the first active vertex of the
/// lowest-numbered submap that still has one.
pub fn gauge_vertex(graph: &Graph) -> Option<VertexId> {
    graph.active_vertices().min_by_key(|v| (v.submap_id, v.id)).map(|v| v.id)
}

struct Term {
    edge: usize,
    from: usize,
    to: usize,
    weights: Vector6<f64>,
    /// Slot in the switch state, for loop closures.
    switch: Option<usize>,
}

/// Holds the distance between two vertices at its starting value. Every
/// measurement is blind to a common scale, so this only removes that
/// freedom; it is zero along the whole family of equivalent solutions.
#[derive(Debug, Clone, Copy)]
struct ScaleAnchor {
    from: usize,
    to: usize,
    length: f64,
}

const ANCHOR_WEIGHT: f64 = 100.0;

/// Keeps the length ratio of two consecutive tracking edges `a -> b -> c`
/// at the ratio of their frame gaps. Headings carry no length, so on a
/// near-straight run a loop correction could otherwise be absorbed by
/// stretching a few edges arbitrarily. Invariant to a common scale.
#[derive(Debug, Clone, Copy)]
struct PaceTerm {
    a: usize,
    b: usize,
    c: usize,
    /// `ln(gap_bc / gap_ab)`.
    target: f64,
    weight: f64,
}

impl PaceTerm {
    fn residual(&self, poses: &[Pose]) -> f64 {
        let first = poses[self.b].translation() - poses[self.a].translation();
        let second = poses[self.c].translation() - poses[self.b].translation();
        let (l1, l2) = (first.norm().max(BASELINE_EPS), second.norm().max(BASELINE_EPS));
        self.weight.sqrt() * ((l2 / l1).ln() - self.target)
    }

    /// Gradient rows for the right perturbations of `a`, `b` and `c`.
    fn jacobians(&self, poses: &[Pose]) -> [Vector6<f64>; 3] {
        let first = poses[self.b].translation() - poses[self.a].translation();
        let second = poses[self.c].translation() - poses[self.b].translation();
        let k = self.weight.sqrt();
        let g1 = first / first.norm_squared().max(BASELINE_EPS * BASELINE_EPS) * k;
        let g2 = second / second.norm_squared().max(BASELINE_EPS * BASELINE_EPS) * k;
        let row = |slot: usize, v: Vector3<f64>| {
            let w = poses[slot].rotation_matrix().transpose() * v;
            Vector6::new(w.x, w.y, w.z, 0.0, 0.0, 0.0)
        };
        [row(self.a, g1), row(self.b, -g2 - g1), row(self.c, g2)]
    }
}

/// Consecutive tracking-edge pairs among the problem terms.
fn pace_terms(graph: &Graph, ids: &[VertexId], terms: &[Term], weight: f64) -> Vec<PaceTerm> {
    if weight <= 0.0 {
        return Vec::new();
    }
    let mut incoming: BTreeMap<usize, usize> = BTreeMap::new();
    for t in terms {
        if graph.edges()[t.edge].kind == EdgeKind::Tracking {
            incoming.insert(t.to, t.from);
        }
    }
    let gap = |x: usize, y: usize| (ids[y] as f64 - ids[x] as f64).abs().max(1.0);
    terms
        .iter()
        .filter(|t| graph.edges()[t.edge].kind == EdgeKind::Tracking)
        .filter_map(|t| {
            let a = *incoming.get(&t.from)?;
            Some(PaceTerm { a, b: t.from, c: t.to, target: (gap(t.from, t.to) / gap(a, t.from)).ln(), weight })
        })
        .collect()
}

impl ScaleAnchor {
    fn residual(&self, poses: &[Pose]) -> f64 {
        let d = poses[self.to].translation() - poses[self.from].translation();
        ANCHOR_WEIGHT.sqrt() * (d.norm() / self.length - 1.0)
    }

    /// Gradient row with respect to the right perturbation of each end.
    fn jacobians(&self, poses: &[Pose]) -> (Vector6<f64>, Vector6<f64>) {
        let d = poses[self.to].translation() - poses[self.from].translation();
        let u = d.normalize() * (ANCHOR_WEIGHT.sqrt() / self.length);
        let ja = -(poses[self.from].rotation_matrix().transpose() * u);
        let jb = poses[self.to].rotation_matrix().transpose() * u;
        let row = |v: Vector3<f64>| Vector6::new(v.x, v.y, v.z, 0.0, 0.0, 0.0);
        (row(ja), row(jb))
    }
}

/// Pins every connected component of the problem: a component without a
/// held vertex holds its lowest id, and one with fewer than two held
/// vertices gets a scale anchor.
fn fix_gauges(
    ids: &[VertexId],
    poses: &[Pose],
    terms: &[Term],
    initially_held: impl Fn(usize) -> bool,
) -> (Vec<bool>, Vec<ScaleAnchor>) {
    let n = ids.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for t in terms {
        let (a, b) = (find(&mut parent, t.from), find(&mut parent, t.to));
        if a != b {
            parent[a.max(b)] = a.min(b);
        }
    }
    let mut components: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for slot in 0..n {
        let root = find(&mut parent, slot);
        components.entry(root).or_default().push(slot);
    }

    let mut held: Vec<bool> = (0..n).map(&initially_held).collect();
    let mut anchors = Vec::new();
    for members in components.values() {
        let mut by_id = members.clone();
        by_id.sort_by_key(|&s| ids[s]);
        if !by_id.iter().any(|&s| held[s]) {
            held[by_id[0]] = true;
        }
        let pinned: Vec<usize> = by_id.iter().copied().filter(|&s| held[s]).collect();
        let base = pinned[0];
        let spread = |s: usize| (poses[s].translation() - poses[base].translation()).norm();
        if pinned.iter().any(|&s| spread(s) > 1e-9) {
            continue;
        }
        if let Some(&other) = by_id.iter().find(|&&s| !held[s] && spread(s) > 1e-9) {
            anchors.push(ScaleAnchor { from: base, to: other, length: spread(other) });
        }
    }
    (held, anchors)
}

struct Problem {
    ids: Vec<VertexId>,
    /// Variable block of each pose slot, `None` when held constant.
    var_of: Vec<Option<usize>>,
    n_vars: usize,
    terms: Vec<Term>,
    switch_edges: Vec<usize>,
    switch_lambda: Vec<f64>,
    anchors: Vec<ScaleAnchor>,
    paces: Vec<PaceTerm>,
    /// Fill-reducing elimination order of the pose blocks.
    order: Vec<usize>,
}

#[derive(Clone)]
struct State {
    poses: Vec<Pose>,
    switches: Vec<f64>,
}

impl Problem {
    fn build<W: Fn(&Edge) -> Vector6<f64>>(graph: &Graph, weight: &W, pace_weight: f64) -> Result<(Self, State)> {
        let gauge = gauge_vertex(graph).ok_or(Error::NoActiveVertices)?;
        let movable = |id: VertexId| {
            let v = graph.vertex(id).expect("edge endpoints exist");
            v.active && !v.fixed && id != gauge
        };

        let mut slot_of: BTreeMap<VertexId, usize> = BTreeMap::new();
        let mut ids = Vec::new();
        let mut poses = Vec::new();
        let mut slot = |id: VertexId, ids: &mut Vec<VertexId>, poses: &mut Vec<Pose>| {
            *slot_of.entry(id).or_insert_with(|| {
                ids.push(id);
                poses.push(graph.vertex(id).expect("endpoint exists").pose);
                ids.len() - 1
            })
        };

        let mut terms = Vec::new();
        let mut switch_edges = Vec::new();
        let mut switch_lambda = Vec::new();
        let mut switches = Vec::new();
        for (index, edge) in graph.edges().iter().enumerate() {
            if !graph.edge_is_live(edge) || !(movable(edge.from) || movable(edge.to)) {
                continue;
            }
            let from = slot(edge.from, &mut ids, &mut poses);
            let to = slot(edge.to, &mut ids, &mut poses);
            let switch = edge.switch_index.map(|s| {
                let sw = graph.switches()[s];
                switch_edges.push(index);
                switch_lambda.push(sw.prior_information);
                switches.push(sw.value);
                switches.len() - 1
            });
            terms.push(Term { edge: index, from, to, weights: weight(edge), switch });
        }

        let (held, anchors) = fix_gauges(&ids, &poses, &terms, |slot| !movable(ids[slot]));
        let paces = pace_terms(graph, &ids, &terms, pace_weight);
        let mut n_vars = 0;
        let var_of: Vec<Option<usize>> = held
            .iter()
            .map(|&h| {
                (!h).then(|| {
                    n_vars += 1;
                    n_vars - 1
                })
            })
            .collect();
        let order = sparse::rcm_order(
            n_vars,
            terms
                .iter()
                .map(|t| (t.from, t.to))
                .chain(anchors.iter().map(|a| (a.from, a.to)))
                .chain(paces.iter().flat_map(|p| [(p.a, p.b), (p.b, p.c), (p.a, p.c)]))
                .filter_map(|(a, b)| Some((var_of[a]?, var_of[b]?))),
        );
        let problem = Problem { ids, var_of, n_vars, terms, anchors, paces, switch_edges, switch_lambda, order };
        Ok((problem, State { poses, switches }))
    }

    /// Sets every switch to its exact minimiser with the poses held:
    /// `Λ / (Λ + e²)`. A coordinate-descent step, so the cost cannot rise.
    fn settle_switches(&self, graph: &Graph, state: &mut State) {
        for t in &self.terms {
            let Some(s) = t.switch else { continue };
            let m = &graph.edges()[t.edge].measurement;
            let r = measurement_residual(m, &state.poses[t.from], &state.poses[t.to]);
            let e2 = residual::weighted_norm2(&r, &t.weights);
            let lambda = self.switch_lambda[s];
            state.switches[s] = lambda / (lambda + e2);
        }
    }

    fn cost(&self, graph: &Graph, state: &State) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                let m = &graph.edges()[t.edge].measurement;
                let r = measurement_residual(m, &state.poses[t.from], &state.poses[t.to]);
                let e2 = residual::weighted_norm2(&r, &t.weights);
                match t.switch {
                    None => e2,
                    Some(s) => {
                        let w = state.switches[s];
                        w * w * e2 + self.switch_lambda[s] * (w - 1.0).powi(2)
                    }
                }
            })
            .sum::<f64>()
            + self.anchors.iter().map(|a| a.residual(&state.poses).powi(2)).sum::<f64>()
            + self.paces.iter().map(|p| p.residual(&state.poses).powi(2)).sum::<f64>()
    }
}

struct Linearized {
    h: BlockMatrix,
    g: DVector<f64>,
    /// Per switch: Hessian diagonal, gradient, coupling to the endpoint pose blocks.
    sw_h: Vec<f64>,
    sw_g: Vec<f64>,
    sw_couple: Vec<[(Option<usize>, Vector6<f64>); 2]>,
}

fn linearize_problem(problem: &Problem, graph: &Graph, state: &State) -> Linearized {
    let n = problem.n_vars * 6;
    let mut h = BlockMatrix::zeros(problem.n_vars);
    let mut g = DVector::zeros(n);
    let ns = state.switches.len();
    let mut sw_h = vec![0.0; ns];
    let mut sw_g = vec![0.0; ns];
    let mut sw_couple = vec![[(None, Vector6::zeros()), (None, Vector6::zeros())]; ns];

    for t in &problem.terms {
        let m = &graph.edges()[t.edge].measurement;
        let lin = linearize(m, &state.poses[t.from], &state.poses[t.to]);
        let w = t.switch.map(|s| state.switches[s]).unwrap_or(1.0);
        let wr = lin.residual.component_mul(&t.weights); // W r
        let blocks = [(problem.var_of[t.from], lin.jac_from), (problem.var_of[t.to], lin.jac_to)];
        let w2 = w * w;

        for (va, ja) in &blocks {
            let Some(a) = *va else { continue };
            let jt_w = ja.transpose() * Matrix6::from_diagonal(&t.weights);
            let ga = jt_w * lin.residual * w2;
            let mut gv = g.fixed_rows_mut::<6>(a * 6);
            gv += ga;
            for (vb, jb) in &blocks {
                let Some(b) = *vb else { continue };
                h.add(a, b, &(jt_w * jb * w2));
            }
        }

        if let Some(s) = t.switch {
            let e2 = lin.residual.dot(&wr);
            let lambda = problem.switch_lambda[s];
            sw_h[s] = e2 + lambda;
            sw_g[s] = w * e2 + lambda * (w - 1.0);
            for (k, (va, ja)) in blocks.iter().enumerate() {
                if va.is_some() {
                    sw_couple[s][k] = (*va, ja.transpose() * wr * w);
                }
            }
        }
    }
    for anchor in &problem.anchors {
        let r = anchor.residual(&state.poses);
        let (ja, jb) = anchor.jacobians(&state.poses);
        let blocks = [(problem.var_of[anchor.from], ja), (problem.var_of[anchor.to], jb)];
        for (va, ja) in &blocks {
            let Some(a) = *va else { continue };
            let mut gv = g.fixed_rows_mut::<6>(a * 6);
            gv += ja * r;
            for (vb, jb) in &blocks {
                let Some(b) = *vb else { continue };
                h.add(a, b, &(ja * jb.transpose()));
            }
        }
    }
    for pace in &problem.paces {
        let r = pace.residual(&state.poses);
        let rows = pace.jacobians(&state.poses);
        let slots = [pace.a, pace.b, pace.c];
        for (sa, ja) in slots.iter().zip(&rows) {
            let Some(a) = problem.var_of[*sa] else { continue };
            let mut gv = g.fixed_rows_mut::<6>(a * 6);
            gv += ja * r;
            for (sb, jb) in slots.iter().zip(&rows) {
                let Some(b) = problem.var_of[*sb] else { continue };
                h.add(a, b, &(ja * jb.transpose()));
            }
        }
    }
    Linearized { h, g, sw_h, sw_g, sw_couple }
}

fn solve_step(problem: &Problem, lin: &Linearized, lambda: f64) -> Option<(DVector<f64>, Vec<f64>)> {
    let n = problem.n_vars * 6;
    let mut a = lin.h.clone();
    let extra: Vec<f64> = (0..n).map(|i| lambda * lin.h.diag[i / 6][(i % 6, i % 6)].max(1e-6)).collect();
    let mut b = lin.g.clone();
    let damped_sw: Vec<f64> = lin.sw_h.iter().map(|h| h + lambda * h.max(1e-6)).collect();

    // eliminate every switch: each only touches its edge's two pose blocks
    for (s, couple) in lin.sw_couple.iter().enumerate() {
        let hs = damped_sw[s];
        for (va, ca) in couple {
            let Some(a_idx) = va else { continue };
            let mut bv = b.fixed_rows_mut::<6>(a_idx * 6);
            bv -= ca * (lin.sw_g[s] / hs);
            for (vb, cb) in couple {
                let Some(b_idx) = vb else { continue };
                a.add(*a_idx, *b_idx, &(-(ca * cb.transpose()) / hs));
            }
        }
    }

    let dx = if n > 0 {
        -EnvelopeCholesky::factor(&a, &problem.order, &extra)?.solve(&b)
    } else {
        DVector::zeros(0)
    };
    let dsw = lin
        .sw_couple
        .iter()
        .enumerate()
        .map(|(s, couple)| {
            let mut rhs = lin.sw_g[s];
            for (va, ca) in couple {
                if let Some(a_idx) = va {
                    rhs += ca.dot(&dx.fixed_rows::<6>(a_idx * 6));
                }
            }
            -rhs / damped_sw[s]
        })
        .collect();
    if dx.iter().any(|v| !v.is_finite()) {
        return None;
    }
    Some((dx, dsw))
}

fn apply_step(problem: &Problem, state: &State, dx: &DVector<f64>, dsw: &[f64]) -> State {
    let mut next = state.clone();
    for (slot, var) in problem.var_of.iter().enumerate() {
        if let Some(v) = var {
            let delta = Twist::from_slice(dx.fixed_rows::<6>(v * 6).as_slice());
            next.poses[slot] = state.poses[slot].retract(&delta);
        }
    }
    for (w, d) in next.switches.iter_mut().zip(dsw) {
        *w = (*w + d).clamp(0.0, 1.0);
    }
    next
}

/// Minimises the weighted spring-model cost with the default per-edge weights.
pub fn optimize(graph: &mut Graph, settings: &OptimizerSettings) -> Result<OptimizationReport> {
    optimize_with(graph, settings, |e: &Edge| e.measurement.information())
}

/// As [`optimize`], with a caller-supplied diagonal information per edge.
pub fn optimize_with<W: Fn(&Edge) -> Vector6<f64>>(
    graph: &mut Graph,
    settings: &OptimizerSettings,
    weight: W,
) -> Result<OptimizationReport> {
    let (problem, mut state) = Problem::build(graph, &weight, settings.pace_weight)?;
    let mut cost = problem.cost(graph, &state);
    let mut report = OptimizationReport { chi2_initial: cost, chi2_final: cost, ..Default::default() };
    let open_before: Vec<bool> = state.switches.iter().map(|&w| w >= settings.closed_threshold).collect();
    // outliers lose their pull before any pose moves
    problem.settle_switches(graph, &mut state);
    cost = problem.cost(graph, &state);

    let mut lambda = settings.initial_damping;
    while report.iterations_run < settings.max_iterations && !problem.terms.is_empty() {
        report.iterations_run += 1;
        let lin = linearize_problem(&problem, graph, &state);
        let grad = lin.g.amax().max(lin.sw_g.iter().fold(0.0f64, |m, v| m.max(v.abs())));
        if grad < 1e-12 {
            break;
        }
        let mut accepted = None;
        for _ in 0..12 {
            if let Some((dx, dsw)) = solve_step(&problem, &lin, lambda) {
                let trial = apply_step(&problem, &state, &dx, &dsw);
                let trial_cost = problem.cost(graph, &trial);
                if trial_cost.is_finite() && trial_cost < cost {
                    accepted = Some((trial, trial_cost));
                    lambda = (lambda * settings.damping_down).max(1e-12);
                    break;
                }
            }
            lambda *= settings.damping_up;
        }
        let Some((trial, trial_cost)) = accepted else { break };
        let decrease = cost - trial_cost;
        state = trial;
        cost = trial_cost;
        if decrease <= settings.convergence_tol * cost.max(f64::MIN_POSITIVE) {
            break;
        }
    }

    for (slot, id) in problem.ids.iter().enumerate() {
        if problem.var_of[slot].is_some() {
            graph.set_pose(*id, state.poses[slot])?;
        }
    }
    for (s, &edge) in problem.switch_edges.iter().enumerate() {
        let index = graph.edges()[edge].switch_index.expect("loop edge has a switch");
        graph.switch_mut(index).set_clamped(state.switches[s]);
        if open_before[s] && state.switches[s] < settings.closed_threshold {
            report.switches_closed += 1;
        }
    }
    report.chi2_final = cost;
    Ok(report)
}

/// Total weighted cost of the graph as the optimizer sees it.
pub fn chi2(graph: &Graph) -> Result<f64> {
    let weight = |e: &Edge| e.measurement.information();
    let (problem, state) = Problem::build(graph, &weight, 0.0)?;
    Ok(problem.cost(graph, &state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{EdgeKind, EdgeMeasurement};
    use nalgebra::{UnitQuaternion, Vector3};

    fn meas_between(a: &Pose, b: &Pose, s: u32) -> EdgeMeasurement {
        let rel = crate::geometry::relative(a, b);
        EdgeMeasurement::new(*rel.rotation(), rel.translation().normalize(), s, 500).unwrap()
    }

    #[test]
    fn single_vertex_is_trivial() {
        let mut g = Graph::new();
        g.add_keyframe_vertex(0, Pose::identity(), 0).unwrap();
        let r = optimize(&mut g, &OptimizerSettings::regular()).unwrap();
        assert_eq!(r.chi2_initial, 0.0);
        assert_eq!(r.chi2_final, 0.0);
        assert_eq!(r.iterations_run, 0);
        assert_eq!(g.vertex(0).unwrap().pose, Pose::identity());
    }

    #[test]
    fn empty_graph_errors() {
        let mut g = Graph::new();
        assert!(matches!(optimize(&mut g, &OptimizerSettings::regular()), Err(Error::NoActiveVertices)));
    }

    #[test]
    fn fixed_vertices_never_move() {
        let truth = [Pose::identity(), Pose::planar(1.0, 0.0, 0.3), Pose::planar(2.0, 0.5, 0.6)];
        let mut g = Graph::new();
        for (i, p) in truth.iter().enumerate() {
            let noisy = *p * Pose::planar(0.05, -0.03, 0.02);
            g.add_keyframe_vertex(i as u64, noisy, 0).unwrap();
        }
        g.set_fixed(1, true).unwrap();
        let before = g.vertex(1).unwrap().pose;
        g.add_edge(EdgeKind::Tracking, 0, 1, meas_between(&truth[0], &truth[1], 400)).unwrap();
        g.add_edge(EdgeKind::Tracking, 1, 2, meas_between(&truth[1], &truth[2], 400)).unwrap();
        let r = optimize(&mut g, &OptimizerSettings::free_time()).unwrap();
        assert!(r.chi2_final <= r.chi2_initial);
        assert_eq!(g.vertex(1).unwrap().pose, before);
    }

    #[test]
    fn disconnected_submaps_keep_relative_placement() {
        let mut g = Graph::new();
        let offsets = [Pose::identity(), Pose::planar(10.0, -4.0, 1.2)];
        let mut id = 0;
        for (s, off) in offsets.iter().enumerate() {
            let truth: Vec<Pose> =
                (0..4).map(|k| *off * Pose::planar(k as f64, 0.3 * (k as f64).sin(), 0.2 * k as f64)).collect();
            for (k, p) in truth.iter().enumerate() {
                g.add_keyframe_vertex(id + k as u64, *p * Pose::planar(0.02, 0.01, 0.01 * k as f64), s).unwrap();
            }
            for k in 0..3 {
                let m = meas_between(&truth[k], &truth[k + 1], 300);
                g.add_edge(EdgeKind::Tracking, id + k as u64, id + k as u64 + 1, m).unwrap();
            }
            id += 4;
        }
        // submap 1 floats; its root is free but nothing ties it to submap 0
        let before = g.vertex(4).unwrap().pose;
        optimize(&mut g, &OptimizerSettings::free_time()).unwrap();
        let after = g.vertex(4).unwrap().pose;
        // its internal shape converged without any cross terms
        let internal = tracking_residual(&g.edges()[3], &g.vertex(4).unwrap().pose, &g.vertex(5).unwrap().pose);
        assert!(internal.norm() < 1e-6);
        // the root only moves through its own edges, never towards submap 0
        assert!((after.translation() - before.translation()).norm() < 0.5);
        assert_eq!(g.vertex(0).unwrap().pose, Pose::identity() * Pose::planar(0.02, 0.01, 0.0));
    }

    #[test]
    fn outlier_switch_closes() {
        let truth = [
            Pose::planar(0.0, 0.0, 0.0),
            Pose::planar(1.0, 0.0, std::f64::consts::FRAC_PI_2),
            Pose::planar(1.0, 1.0, std::f64::consts::PI - 0.01),
            Pose::planar(0.0, 1.0, -std::f64::consts::FRAC_PI_2),
        ];
        let mut g = Graph::new();
        for (i, p) in truth.iter().enumerate() {
            g.add_keyframe_vertex(i as u64, *p, 0).unwrap();
        }
        g.set_fixed(1, true).unwrap();
        for i in 0..4 {
            let j = (i + 1) % 4;
            g.add_edge(EdgeKind::Tracking, i as u64, j as u64, meas_between(&truth[i], &truth[j], 400)).unwrap();
        }
        let good = g.add_edge(EdgeKind::LoopClosure, 0, 2, meas_between(&truth[0], &truth[2], 200)).unwrap();
        let bad_m = EdgeMeasurement::new(
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), 2.0),
            Vector3::new(0.0, -1.0, 0.0),
            200,
            500,
        )
        .unwrap();
        let bad = g.add_edge(EdgeKind::LoopClosure, 1, 3, bad_m).unwrap();
        let report = optimize(&mut g, &OptimizerSettings::free_time()).unwrap();
        let sw = |e: usize| g.switch_of(&g.edges()[e]).unwrap().value;
        assert!(sw(bad) < 0.1, "outlier switch {}", sw(bad));
        assert!(sw(good) > 0.9, "inlier switch {}", sw(good));
        assert_eq!(report.switches_closed, 1);
    }

    /// Central differences of a scalar term against its analytic rows.
    fn check_rows(f: impl Fn(&[Pose]) -> f64, rows: &[Vector6<f64>], poses: &[Pose], slots: &[usize]) {
        let h = 1e-6;
        for (row, &slot) in rows.iter().zip(slots) {
            for k in 0..6 {
                let mut xi = [0.0; 6];
                xi[k] = h;
                let mut plus = poses.to_vec();
                plus[slot] = poses[slot].retract(&Twist::from_slice(&xi));
                xi[k] = -h;
                let mut minus = poses.to_vec();
                minus[slot] = poses[slot].retract(&Twist::from_slice(&xi));
                let numeric = (f(&plus) - f(&minus)) / (2.0 * h);
                assert!((numeric - row[k]).abs() < 1e-6 * numeric.abs().max(1.0), "slot {slot} k {k}: {numeric} vs {}", row[k]);
            }
        }
    }

    fn scattered_poses() -> Vec<Pose> {
        vec![
            Pose::new(UnitQuaternion::from_euler_angles(0.1, -0.2, 0.3), Vector3::new(0.2, -0.1, 0.05)),
            Pose::new(UnitQuaternion::from_euler_angles(-0.3, 0.1, 1.1), Vector3::new(1.1, 0.4, -0.2)),
            Pose::new(UnitQuaternion::from_euler_angles(0.2, 0.4, -0.7), Vector3::new(1.9, 1.6, 0.3)),
        ]
    }

    #[test]
    fn anchor_jacobian_matches_differences() {
        let poses = scattered_poses();
        let anchor = ScaleAnchor { from: 0, to: 2, length: 1.7 };
        let (ja, jb) = anchor.jacobians(&poses);
        check_rows(|p| anchor.residual(p), &[ja, jb], &poses, &[0, 2]);
    }

    #[test]
    fn pace_jacobian_matches_differences() {
        let poses = scattered_poses();
        let pace = PaceTerm { a: 0, b: 1, c: 2, target: 0.4_f64.ln(), weight: 2.0 };
        check_rows(|p| pace.residual(p), &pace.jacobians(&poses), &poses, &[0, 1, 2]);
    }

    #[test]
    fn pace_is_blind_to_common_scale() {
        let poses = scattered_poses();
        let scaled: Vec<Pose> = poses.iter().map(|p| Pose::new(*p.rotation(), p.translation() * 3.5)).collect();
        let pace = PaceTerm { a: 0, b: 1, c: 2, target: 0.0, weight: 1.0 };
        assert!((pace.residual(&poses) - pace.residual(&scaled)).abs() < 1e-12);
    }

    #[test]
    fn pace_keeps_straight_run_evenly_spaced() {
        // a straight chain whose only loop asks for a sideways correction;
        // without the pace term the correction stretches single edges
        let truth: Vec<Pose> = (0..8).map(|k| Pose::planar(k as f64, 0.0, 0.0)).collect();
        let mut g = Graph::new();
        for (k, p) in truth.iter().enumerate() {
            g.add_keyframe_vertex(k as u64, *p, 0).unwrap();
        }
        for k in 0..7 {
            g.add_edge(EdgeKind::Tracking, k, k + 1, meas_between(&truth[k as usize], &truth[k as usize + 1], 400)).unwrap();
        }
        let bent = Pose::planar(7.0, 0.3, 0.0);
        g.add_edge(EdgeKind::LoopClosure, 0, 7, meas_between(&truth[0], &bent, 400)).unwrap();
        let spread = |g: &Graph| {
            let lens: Vec<f64> = (0..7)
                .map(|k| (g.vertex(k + 1).unwrap().pose.translation() - g.vertex(k).unwrap().pose.translation()).norm())
                .collect();
            lens.iter().cloned().fold(0.0, f64::max) / lens.iter().cloned().fold(f64::INFINITY, f64::min)
        };
        let mut paced = g.clone();
        optimize(&mut paced, &OptimizerSettings::free_time().with_pace_weight(1.0)).unwrap();
        assert!(spread(&paced) < 1.2, "paced spread {}", spread(&paced));
    }

    #[test]
    fn gauges_hold_one_vertex_and_anchor_scale_per_component() {
        let ids = [3, 1, 7, 9];
        let poses: Vec<Pose> = (0..4).map(|k| Pose::planar(k as f64, 0.0, 0.0)).collect();
        let term = |from, to| Term { edge: 0, from, to, weights: Vector6::repeat(1.0), switch: None };
        let terms = [term(0, 1), term(2, 3)];
        let (held, anchors) = fix_gauges(&ids, &poses, &terms, |_| false);
        // lowest id of each component: 1 (slot 1) and 7 (slot 2)
        assert_eq!(held, vec![false, true, true, false]);
        assert_eq!(anchors.len(), 2);
        assert!(anchors.iter().all(|a| (a.length - 1.0).abs() < 1e-12));
        // two held vertices at distinct places already fix the scale
        let (held, anchors) = fix_gauges(&ids, &poses, &terms, |s| s == 0 || s == 1);
        assert_eq!(held, vec![true, true, true, false]);
        assert_eq!(anchors.len(), 1);
    }

    #[test]
    fn settled_switches_minimise_their_own_term() {
        let truth = [Pose::identity(), Pose::planar(1.0, 0.0, 0.0), Pose::planar(2.0, 0.0, 0.0)];
        let mut g = Graph::new();
        for (i, p) in truth.iter().enumerate() {
            g.add_keyframe_vertex(i as u64, *p, 0).unwrap();
        }
        g.add_edge(EdgeKind::Tracking, 0, 1, meas_between(&truth[0], &truth[1], 400)).unwrap();
        let wrong = EdgeMeasurement::new(UnitQuaternion::identity(), Vector3::y(), 250, 500).unwrap();
        g.add_edge(EdgeKind::LoopClosure, 0, 2, wrong).unwrap();
        let weight = |e: &Edge| e.measurement.information();
        let (problem, mut state) = Problem::build(&g, &weight, 0.0).unwrap();
        let before = problem.cost(&g, &state);
        problem.settle_switches(&g, &mut state);
        let settled = problem.cost(&g, &state);
        assert!(settled <= before);
        // nudging the settled value either way only raises the cost
        for d in [-1e-3, 1e-3] {
            let mut probe = state.clone();
            probe.switches[0] += d;
            assert!(problem.cost(&g, &probe) > settled);
        }
    }
}
