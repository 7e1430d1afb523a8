//! Pose-graph data model: keyframe vertices, relative-pose edges, the switch
//! variables attached to loop closures, and submap bookkeeping.

mod format;

use std::collections::BTreeMap;

use nalgebra::{Matrix6, UnitQuaternion, Vector3, Vector6};

use crate::error::{Error, Result};
use crate::geometry::{canonical, Pose};

pub use format::{parse, serialize};

pub type VertexId = u64;
pub type SubmapId = usize;

/// Default information of the switch prior.
pub const DEFAULT_SWITCH_PRIOR: f64 = 1.0;

/// Diagonal of the edge information matrix: unit weights on the
/// translation-direction block, `100 * s / n` on the rotation block.
pub fn information_weights(s: u32, n: u32) -> Result<Vector6<f64>> {
    if n == 0 || s > n {
        return Err(Error::InvalidCounts { s: s.into(), n: n.into() });
    }
    // one rounding: 100 * s is exact, the division is correctly rounded
    let omega = (100 * u64::from(s)) as f64 / f64::from(n);
    Ok(Vector6::new(1.0, 1.0, 1.0, omega, omega, omega))
}

pub fn information_matrix(s: u32, n: u32) -> Result<Matrix6<f64>> {
    information_weights(s, n).map(|d| Matrix6::from_diagonal(&d))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vertex {
    pub id: VertexId,
    pub pose: Pose,
    pub submap_id: SubmapId,
    pub fixed: bool,
    pub active: bool,
}

/// What the two-view geometry reports for a pair of frames.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeMeasurement {
    rotation: UnitQuaternion<f64>,
    direction: Vector3<f64>,
    inliers: u32,
    detected: u32,
}

impl EdgeMeasurement {
    /// `direction` is normalised if it is within 1e-6 of unit length; the
    /// stored value then has unit norm to within 1e-9.
    pub fn new(rotation: UnitQuaternion<f64>, direction: Vector3<f64>, inliers: u32, detected: u32) -> Result<Self> {
        if detected == 0 || inliers > detected {
            return Err(Error::InvalidCounts { s: inliers.into(), n: detected.into() });
        }
        let norm = direction.norm();
        if !norm.is_finite() || (norm - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidEdge(format!("translation direction has norm {norm}")));
        }
        let direction = if (norm - 1.0).abs() > 1e-12 { direction / norm } else { direction };
        Ok(Self { rotation: canonical(rotation), direction, inliers, detected })
    }

    pub(crate) fn from_raw(rotation: UnitQuaternion<f64>, direction: Vector3<f64>, inliers: u32, detected: u32) -> Self {
        Self { rotation: canonical(rotation), direction, inliers, detected }
    }

    pub fn rotation(&self) -> &UnitQuaternion<f64> {
        &self.rotation
    }

    pub fn direction(&self) -> &Vector3<f64> {
        &self.direction
    }

    pub fn inliers(&self) -> u32 {
        self.inliers
    }

    pub fn detected(&self) -> u32 {
        self.detected
    }

    pub fn information(&self) -> Vector6<f64> {
        information_weights(self.inliers, self.detected).expect("counts validated on construction")
    }

    /// The same measurement seen from the other frame.
    pub fn inverse(&self) -> Self {
        let r_inv = self.rotation.inverse();
        Self::from_raw(r_inv, -(r_inv * self.direction), self.inliers, self.detected)
    }

    /// Relative pose with the unit direction scaled by `step`.
    pub fn to_pose(&self, step: f64) -> Pose {
        Pose::new(self.rotation, self.direction * step)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EdgeKind {
    Tracking,
    LoopClosure,
}

impl EdgeKind {
    pub fn code(self) -> char {
        match self {
            EdgeKind::Tracking => 'T',
            EdgeKind::LoopClosure => 'L',
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub kind: EdgeKind,
    pub from: VertexId,
    pub to: VertexId,
    pub measurement: EdgeMeasurement,
    pub switch_index: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwitchVariable {
    pub value: f64,
    pub prior: f64,
    pub prior_information: f64,
}

impl SwitchVariable {
    pub fn open(prior_information: f64) -> Self {
        Self { value: 1.0, prior: 1.0, prior_information }
    }

    pub fn set_clamped(&mut self, value: f64) {
        self.value = value.clamp(0.0, 1.0);
    }
}

#[derive(Debug, Clone)]
pub struct Graph {
    vertices: BTreeMap<VertexId, Vertex>,
    edges: Vec<Edge>,
    switches: Vec<SwitchVariable>,
    incident: BTreeMap<VertexId, Vec<usize>>,
    submap_count: usize,
    new_edge_counter: usize,
    new_vertex_ids: Vec<VertexId>,
    switch_prior: f64,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl PartialEq for Graph {
    // bookkeeping counters are session state, not graph content
    fn eq(&self, other: &Self) -> bool {
        self.vertices == other.vertices
            && self.edges == other.edges
            && self.switches == other.switches
            && self.submap_count == other.submap_count
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::with_switch_prior(DEFAULT_SWITCH_PRIOR)
    }

    pub fn with_switch_prior(prior_information: f64) -> Self {
        Self {
            vertices: BTreeMap::new(),
            edges: Vec::new(),
            switches: Vec::new(),
            incident: BTreeMap::new(),
            submap_count: 0,
            new_edge_counter: 0,
            new_vertex_ids: Vec::new(),
            switch_prior: prior_information,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn submap_count(&self) -> usize {
        self.submap_count
    }

    pub fn switch_prior(&self) -> f64 {
        self.switch_prior
    }

    pub fn vertex(&self, id: VertexId) -> Option<&Vertex> {
        self.vertices.get(&id)
    }

    pub fn contains(&self, id: VertexId) -> bool {
        self.vertices.contains_key(&id)
    }

    pub fn vertices(&self) -> impl Iterator<Item = &Vertex> {
        self.vertices.values()
    }

    pub fn active_vertices(&self) -> impl Iterator<Item = &Vertex> {
        self.vertices.values().filter(|v| v.active)
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn switches(&self) -> &[SwitchVariable] {
        &self.switches
    }

    pub fn switch_of(&self, edge: &Edge) -> Option<&SwitchVariable> {
        edge.switch_index.map(|i| &self.switches[i])
    }

    pub fn switch_mut(&mut self, index: usize) -> &mut SwitchVariable {
        &mut self.switches[index]
    }

    /// Indices of edges touching `id`, in insertion order.
    pub fn incident_edges(&self, id: VertexId) -> &[usize] {
        self.incident.get(&id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn new_edge_counter(&self) -> usize {
        self.new_edge_counter
    }

    pub fn new_vertex_ids(&self) -> &[VertexId] {
        &self.new_vertex_ids
    }

    pub fn reset_new_bookkeeping(&mut self) {
        self.new_edge_counter = 0;
        self.new_vertex_ids.clear();
    }

    /// Id the next submap will receive.
    pub fn next_submap_id(&self) -> SubmapId {
        self.submap_count
    }

    pub fn set_pose(&mut self, id: VertexId, pose: Pose) -> Result<()> {
        self.vertices.get_mut(&id).ok_or(Error::UnknownVertex(id))?.pose = pose;
        Ok(())
    }

    pub fn set_fixed(&mut self, id: VertexId, fixed: bool) -> Result<()> {
        self.vertices.get_mut(&id).ok_or(Error::UnknownVertex(id))?.fixed = fixed;
        Ok(())
    }

    pub fn fix_all(&mut self) {
        for v in self.vertices.values_mut() {
            v.fixed = true;
        }
    }

    /// Inserts an active, unfixed vertex. `submap_id` must name an existing
    /// submap or be [`Graph::next_submap_id`], which opens a new one.
    pub fn add_keyframe_vertex(&mut self, id: VertexId, initial_pose: Pose, submap_id: SubmapId) -> Result<VertexId> {
        if self.vertices.contains_key(&id) {
            return Err(Error::DuplicateId(id));
        }
        if submap_id > self.submap_count {
            return Err(Error::InvalidEdge(format!(
                "submap {submap_id} skips ahead of the next free submap {}",
                self.submap_count
            )));
        }
        if submap_id == self.submap_count {
            self.submap_count += 1;
        }
        self.vertices.insert(id, Vertex { id, pose: initial_pose, submap_id, fixed: false, active: true });
        self.new_vertex_ids.push(id);
        Ok(id)
    }

    /// Appends an edge; loop closures get a fresh switch at 1.0. Attaching an
    /// edge to a discarded vertex brings it back.
    pub fn add_edge(&mut self, kind: EdgeKind, from: VertexId, to: VertexId, measurement: EdgeMeasurement) -> Result<usize> {
        if from == to {
            return Err(Error::InvalidEdge(format!("edge from vertex {from} to itself")));
        }
        let from_submap = self.vertices.get(&from).ok_or(Error::UnknownVertex(from))?.submap_id;
        let to_submap = self.vertices.get(&to).ok_or(Error::UnknownVertex(to))?.submap_id;
        if kind == EdgeKind::Tracking && from_submap != to_submap {
            return Err(Error::InvalidEdge(format!(
                "tracking edge {from}->{to} crosses submaps {from_submap} and {to_submap}"
            )));
        }
        let switch_index = match kind {
            EdgeKind::Tracking => None,
            EdgeKind::LoopClosure => {
                self.switches.push(SwitchVariable::open(self.switch_prior));
                Some(self.switches.len() - 1)
            }
        };
        let index = self.edges.len();
        self.edges.push(Edge { kind, from, to, measurement, switch_index });
        self.incident.entry(from).or_default().push(index);
        self.incident.entry(to).or_default().push(index);
        for id in [from, to] {
            if let Some(v) = self.vertices.get_mut(&id) {
                v.active = true;
            }
        }
        self.new_edge_counter += 1;
        Ok(index)
    }

    /// True when the edge takes part in optimisation: both endpoints active.
    pub fn edge_is_live(&self, edge: &Edge) -> bool {
        self.vertices[&edge.from].active && self.vertices[&edge.to].active
    }

    /// Marks inactive every active vertex that has no edges, or has no
    /// tracking edge and only loop edges whose switches are below
    /// `closed_threshold`. Returns how many were newly discarded.
    pub fn discard_inactive(&mut self, closed_threshold: f64) -> usize {
        let mut doomed = Vec::new();
        for v in self.vertices.values().filter(|v| v.active) {
            let incident = self.incident_edges(v.id);
            let keep = incident.iter().any(|&e| {
                let edge = &self.edges[e];
                match edge.switch_index {
                    None => true,
                    Some(s) => self.switches[s].value >= closed_threshold,
                }
            });
            if !keep {
                doomed.push(v.id);
            }
        }
        for id in &doomed {
            self.vertices.get_mut(id).expect("collected above").active = false;
        }
        doomed.len()
    }

    /// Vertex ids of `submap`, ascending.
    pub fn submap_vertices(&self, submap: SubmapId) -> Vec<VertexId> {
        self.vertices.values().filter(|v| v.submap_id == submap).map(|v| v.id).collect()
    }

    pub fn edge_count(&self, kind: EdgeKind) -> usize {
        self.edges.iter().filter(|e| e.kind == kind).count()
    }

    /// Applies `f` to every vertex pose in the given submaps.
    pub(crate) fn map_poses<F: Fn(&Pose) -> Pose>(&mut self, submaps: &[SubmapId], f: F) {
        for v in self.vertices.values_mut() {
            if submaps.contains(&v.submap_id) {
                v.pose = f(&v.pose);
            }
        }
    }

    pub(crate) fn from_parts(vertices: Vec<Vertex>, edges: Vec<Edge>, switches: Vec<SwitchVariable>) -> Self {
        let mut g = Graph::new();
        g.submap_count = vertices.iter().map(|v| v.submap_id + 1).max().unwrap_or(0);
        for v in vertices {
            g.vertices.insert(v.id, v);
        }
        for (i, e) in edges.iter().enumerate() {
            g.incident.entry(e.from).or_default().push(i);
            g.incident.entry(e.to).or_default().push(i);
        }
        g.edges = edges;
        g.switches = switches;
        g
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn meas(s: u32) -> EdgeMeasurement {
        EdgeMeasurement::new(UnitQuaternion::identity(), Vector3::x(), s, 500).unwrap()
    }

    #[test]
    fn information_matrix_values() {
        let m = information_matrix(500, 500).unwrap();
        assert_eq!(m, Matrix6::from_diagonal(&Vector6::new(1.0, 1.0, 1.0, 100.0, 100.0, 100.0)));
        assert_eq!(information_weights(250, 500).unwrap()[3], 50.0);
        assert_eq!(information_weights(1, 500).unwrap()[5], 0.2);
        assert!(matches!(information_matrix(501, 500), Err(Error::InvalidCounts { .. })));
        assert!(matches!(information_matrix(0, 0), Err(Error::InvalidCounts { .. })));
    }

    #[test]
    fn measurement_validation() {
        assert!(EdgeMeasurement::new(UnitQuaternion::identity(), Vector3::new(2.0, 0.0, 0.0), 1, 2).is_err());
        assert!(EdgeMeasurement::new(UnitQuaternion::identity(), Vector3::x(), 3, 2).is_err());
        let m = EdgeMeasurement::new(UnitQuaternion::identity(), Vector3::new(0.6, 0.8 + 1e-8, 0.0), 1, 2).unwrap();
        assert!((m.direction().norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn vertices_and_submaps() {
        let mut g = Graph::new();
        g.add_keyframe_vertex(0, Pose::identity(), 0).unwrap();
        assert!(matches!(g.add_keyframe_vertex(0, Pose::identity(), 0), Err(Error::DuplicateId(0))));
        // a second submap may also start at the origin
        g.add_keyframe_vertex(5, Pose::identity(), 1).unwrap();
        assert_eq!(g.submap_count(), 2);
        assert_eq!(g.vertex(5).unwrap().pose, g.vertex(0).unwrap().pose);
        assert!(g.add_keyframe_vertex(6, Pose::identity(), 3).is_err());
        assert_eq!(g.new_vertex_ids(), &[0, 5]);
    }

    #[test]
    fn edges_and_switches() {
        let mut g = Graph::new();
        for id in 0..3 {
            g.add_keyframe_vertex(id, Pose::identity(), 0).unwrap();
        }
        g.add_keyframe_vertex(3, Pose::identity(), 1).unwrap();
        let t = g.add_edge(EdgeKind::Tracking, 0, 1, meas(100)).unwrap();
        assert_eq!(g.edges()[t].switch_index, None);
        assert!(g.switches().is_empty());
        let l = g.add_edge(EdgeKind::LoopClosure, 0, 2, meas(30)).unwrap();
        assert_eq!(g.edges()[l].switch_index, Some(0));
        assert_eq!(g.switches()[0].value, 1.0);
        assert!(matches!(g.add_edge(EdgeKind::Tracking, 2, 3, meas(100)), Err(Error::InvalidEdge(_))));
        g.add_edge(EdgeKind::LoopClosure, 2, 3, meas(30)).unwrap();
        assert!(matches!(g.add_edge(EdgeKind::Tracking, 0, 9, meas(1)), Err(Error::UnknownVertex(9))));
        assert!(g.add_edge(EdgeKind::Tracking, 1, 1, meas(1)).is_err());
        assert_eq!(g.new_edge_counter(), 3);
    }

    #[test]
    fn discard_closed_loop_vertex() {
        let mut g = Graph::new();
        for id in 0..3 {
            g.add_keyframe_vertex(id, Pose::identity(), 0).unwrap();
        }
        g.add_edge(EdgeKind::Tracking, 0, 1, meas(100)).unwrap();
        let l = g.add_edge(EdgeKind::LoopClosure, 1, 2, meas(30)).unwrap();
        let s = g.edges()[l].switch_index.unwrap();
        g.switch_mut(s).value = 0.03;
        assert_eq!(g.discard_inactive(0.1), 1);
        assert!(!g.vertex(2).unwrap().active);
        assert!(g.vertex(1).unwrap().active, "tracking edge keeps vertex 1");
        assert_eq!(g.discard_inactive(0.1), 0);
        assert_eq!(Graph::new().discard_inactive(0.1), 0);
    }

    #[test]
    fn isolated_vertex_is_discarded_and_revived_by_new_edge() {
        let mut g = Graph::new();
        g.add_keyframe_vertex(0, Pose::identity(), 0).unwrap();
        g.add_keyframe_vertex(1, Pose::identity(), 0).unwrap();
        assert_eq!(g.discard_inactive(0.1), 2);
        g.add_edge(EdgeKind::Tracking, 0, 1, meas(100)).unwrap();
        assert!(g.vertex(0).unwrap().active && g.vertex(1).unwrap().active);
    }
}
