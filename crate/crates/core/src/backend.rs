//! Back-end manager: submap lifecycle, motion-model initialisation, merging
//! submaps once loop closures link them, optimisation scheduling, the
//! exploration end condition and kidnapped relocalisation.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, UnitQuaternion, Vector3, Vector6};
use serde::Serialize;

use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::frontend::{
    place_recognition, process_frame, select_keyframe, verify_loops, EdgeSet, FrameObservation, KeyframeDecision,
    KeyframeRef,
};
use crate::geometry::{relative, Pose};
use crate::graph::{Edge, EdgeKind, EdgeMeasurement, Graph, SubmapId, VertexId};
use crate::optimizer::{gauge_vertex, optimize, optimize_with, OptimizationReport, OptimizerSettings};
use crate::sim::MeasurementSource;

/// Two loop closures agree on how to align a pair of submaps when their
/// rotation estimates differ by less than this (rad).
pub const MERGE_ROTATION_AGREEMENT: f64 = 0.25;

/// Keyframe steps the motion model looks back over.
const SPEED_WINDOW: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EndCondition {
    Continue,
    Finished,
}

/// One regular-optimisation trigger of the end condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EndConditionRecord {
    pub frame: u64,
    pub new_edges: usize,
    pub s_nv: usize,
    pub counter_c: usize,
    pub chi2_initial: f64,
    pub chi2_final: f64,
}

/// Alignment applied when two submap groups were first linked.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MergeRecord {
    pub frame: u64,
    pub kept: SubmapId,
    pub moved: SubmapId,
    pub scale: f64,
}

#[derive(Debug, Clone, Default)]
pub struct ExplorationState {
    pub current_submap: SubmapId,
    pub last_kf_per_submap: BTreeMap<SubmapId, VertexId>,
    pub counter_c: usize,
    /// Processed frames since the last free-time optimisation.
    pub free_time_budget: usize,
    pub finished: bool,
    pub frames_processed: usize,
    pub trace: Vec<EndConditionRecord>,
    pub merges: Vec<MergeRecord>,
    pub free_time_runs: usize,
    /// Keyframes per submap, in insertion order.
    submap_keyframes: BTreeMap<SubmapId, Vec<VertexId>>,
    /// Union-find over submaps that share a coordinate frame.
    parent: Vec<SubmapId>,
    /// Loops between groups not yet brought into a common frame.
    cross_loops: Vec<CrossLoop>,
}

impl ExplorationState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Representative submap of the frame `submap` is expressed in.
    pub fn frame_group(&self, submap: SubmapId) -> SubmapId {
        let mut s = submap;
        while let Some(&p) = self.parent.get(s) {
            if p == s {
                break;
            }
            s = p;
        }
        s
    }

    fn register_submap(&mut self, submap: SubmapId) {
        while self.parent.len() <= submap {
            self.parent.push(self.parent.len());
        }
    }

    fn union(&mut self, a: SubmapId, b: SubmapId) {
        let (ra, rb) = (self.frame_group(a), self.frame_group(b));
        if ra != rb {
            let (lo, hi) = (ra.min(rb), ra.max(rb));
            self.parent[hi] = lo;
        }
    }

    fn group_members(&self, group: SubmapId) -> Vec<SubmapId> {
        (0..self.parent.len()).filter(|&s| self.frame_group(s) == group).collect()
    }

    pub fn keyframes_in(&self, submap: SubmapId) -> &[VertexId] {
        self.submap_keyframes.get(&submap).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn keyframes_per_submap(&self) -> Vec<usize> {
        self.submap_keyframes.values().map(Vec::len).collect()
    }

    fn record_keyframe(&mut self, submap: SubmapId, id: VertexId) {
        self.register_submap(submap);
        self.submap_keyframes.entry(submap).or_default().push(id);
        self.last_kf_per_submap.insert(submap, id);
        self.current_submap = submap;
    }
}

/// Median length of the tracking edges inside the given submaps.
fn median_spacing(graph: &Graph, submaps: &[SubmapId]) -> Option<f64> {
    let inside = |id: VertexId| graph.vertex(id).is_some_and(|v| submaps.contains(&v.submap_id));
    let mut lengths: Vec<f64> = graph
        .edges()
        .iter()
        .filter(|e| e.kind == EdgeKind::Tracking && inside(e.from) && inside(e.to))
        .map(|e| (graph.vertex(e.to).unwrap().pose.translation() - graph.vertex(e.from).unwrap().pose.translation()).norm())
        .filter(|l| *l > 0.0)
        .collect();
    if lengths.is_empty() {
        return None;
    }
    lengths.sort_by(f64::total_cmp);
    Some(lengths[lengths.len() / 2])
}

fn pose_of(graph: &Graph, id: VertexId) -> Pose {
    graph.vertex(id).expect("vertex exists").pose
}

/// Distance per frame over the last few keyframes of a submap (median of
/// consecutive steps), so one bad step does not set the scale.
fn recent_speed(graph: &Graph, kfs: &[VertexId]) -> Option<f64> {
    let tail = &kfs[kfs.len().saturating_sub(SPEED_WINDOW + 1)..];
    let mut speeds: Vec<f64> = tail
        .windows(2)
        .map(|w| (pose_of(graph, w[1]).translation() - pose_of(graph, w[0]).translation()).norm() / (w[1] - w[0]) as f64)
        .collect();
    if speeds.is_empty() {
        return None;
    }
    speeds.sort_by(f64::total_cmp);
    Some(speeds[speeds.len() / 2])
}

/// Constant-velocity guess along a measured relative pose from `last`.
fn motion_model(graph: &Graph, state: &ExplorationState, submap: SubmapId, frame: u64, edge: &Edge) -> Pose {
    let last = edge.from;
    let scale = match recent_speed(graph, state.keyframes_in(submap)) {
        Some(speed) if frame > last => speed * (frame - last) as f64,
        _ => 1.0,
    };
    let scale = if scale > 1e-9 { scale } else { 1.0 };
    pose_of(graph, last) * edge.measurement.to_pose(scale)
}

/// Continues the current submap's last motion when nothing relates the new
/// frame to it directly.
fn extrapolate(graph: &Graph, state: &ExplorationState, submap: SubmapId, frame: u64) -> Pose {
    match state.keyframes_in(submap) {
        [.., prev, last] => {
            let step = relative(&pose_of(graph, *prev), &pose_of(graph, *last));
            let ratio = (frame - last) as f64 / (last - prev) as f64;
            let t = step.translation() * ratio;
            pose_of(graph, *last) * Pose::new(*step.rotation(), t)
        }
        [last] => pose_of(graph, *last) * Pose::from_translation(Vector3::x()),
        [] => Pose::identity(),
    }
}

/// Inserts the keyframe for `frame` and its edges. A lost frame starts a new
/// submap rooted at the origin; otherwise the vertex joins the current
/// submap with a motion-model (or loop-partner) initial pose.
pub fn handle_edge_set(frame: u64, edge_set: &EdgeSet, graph: &mut Graph, state: &mut ExplorationState) -> Result<VertexId> {
    if graph.is_empty() || edge_set.is_lost() {
        let submap = graph.next_submap_id();
        graph.add_keyframe_vertex(frame, Pose::identity(), submap)?;
        state.record_keyframe(submap, frame);
        return Ok(frame);
    }

    let submap = state.current_submap;
    let initial = match (&edge_set.tracking, edge_set.loops.first()) {
        (Some(t), _) => motion_model(graph, state, submap, frame, t),
        (None, Some(best)) => {
            let partner = graph.vertex(best.from).ok_or(Error::UnknownVertex(best.from))?;
            let partner_group = state.frame_group(partner.submap_id);
            if partner_group == state.frame_group(submap) {
                let members = state.group_members(partner_group);
                let spacing = median_spacing(graph, &members).unwrap_or(1.0);
                partner.pose * best.measurement.to_pose(spacing)
            } else {
                extrapolate(graph, state, submap, frame)
            }
        }
        (None, None) => unreachable!("lost frames handled above"),
    };

    graph.add_keyframe_vertex(frame, initial, submap)?;
    if let Some(t) = &edge_set.tracking {
        graph.add_edge(EdgeKind::Tracking, t.from, frame, t.measurement)?;
    }
    for l in &edge_set.loops {
        graph.add_edge(EdgeKind::LoopClosure, l.from, frame, l.measurement)?;
    }
    state.record_keyframe(submap, frame);

    if edge_set.tracking.is_some() {
        merge_linked_groups(frame, &edge_set.loops, graph, state);
    }
    Ok(frame)
}

/// A loop closure between two frame groups, kept until they are merged.
#[derive(Debug, Clone, Copy)]
struct CrossLoop {
    from: VertexId,
    to: VertexId,
    measurement: EdgeMeasurement,
}

/// Similarity `x -> s R x + t` taking one group's frame into another's.
#[derive(Debug, Clone, Copy)]
struct GroupAlignment {
    rotation: UnitQuaternion<f64>,
    scale: f64,
    translation: Vector3<f64>,
}

/// Estimates the similarity taking group `moving` into group `target` from
/// the loops between them (`x` in target, `y` in moving, measurement
/// `x -> y`). Each loop predicts the rotation; the scale is the ratio of the
/// groups' keyframe spacings; the translation puts every consensus frame on
/// its loop ray `p_x + lambda * R_x d`, softly held `step` along the first.
fn estimate_alignment(
    graph: &Graph,
    loops: &[(VertexId, VertexId, EdgeMeasurement)],
    scale: f64,
    step: f64,
) -> Option<GroupAlignment> {
    let estimates: Vec<UnitQuaternion<f64>> = loops
        .iter()
        .map(|(x, y, m)| pose_of(graph, *x).rotation() * m.rotation() * pose_of(graph, *y).rotation().inverse())
        .collect();
    let agreeing = (0..loops.len())
        .map(|i| {
            (0..loops.len()).filter(|&j| estimates[i].angle_to(&estimates[j]) < MERGE_ROTATION_AGREEMENT).collect::<Vec<_>>()
        })
        .max_by_key(|set| set.len())?;
    if agreeing.len() < 2 {
        return None;
    }
    let rotation = estimates[agreeing[0]];
    let moved = |y: VertexId| scale * (rotation * pose_of(graph, y).translation());
    let ray = |i: usize| {
        let (x, _, m) = &loops[i];
        let px = pose_of(graph, *x);
        (*px.translation(), px.rotation() * m.direction())
    };

    let (o0, u0) = ray(agreeing[0]);
    let guess = o0 + u0 * step - moved(loops[agreeing[0]].1);
    let beta2 = 1e-2;
    let mut normal = Matrix3::identity() * beta2;
    let mut rhs = guess * beta2;
    for &i in &agreeing {
        let (o, u) = ray(i);
        let proj = Matrix3::identity() - u * u.transpose();
        normal += proj;
        rhs += proj * (o - moved(loops[i].1));
    }
    let translation = normal.try_inverse()? * rhs;
    let in_front = agreeing.iter().all(|&i| {
        let (o, u) = ray(i);
        u.dot(&(moved(loops[i].1) + translation - o)) > 0.0
    });
    in_front.then_some(GroupAlignment { rotation, scale, translation })
}

/// Records the new vertex's loops into other frame groups and merges every
/// group for which the accumulated loops now agree on an alignment.
fn merge_linked_groups(frame: u64, loops: &[Edge], graph: &mut Graph, state: &mut ExplorationState) {
    let own_submap = graph.vertex(frame).expect("just inserted").submap_id;
    let mut touched = Vec::new();
    for l in loops {
        let group = state.frame_group(graph.vertex(l.from).expect("candidate exists").submap_id);
        if group != state.frame_group(own_submap) {
            state.cross_loops.push(CrossLoop { from: l.from, to: frame, measurement: l.measurement });
            if !touched.contains(&group) {
                touched.push(group);
            }
        }
    }

    for group in touched {
        let own = state.frame_group(own_submap);
        let target = state.frame_group(group);
        if target == own {
            continue;
        }
        let group_of = |id: VertexId| state.frame_group(graph.vertex(id).expect("vertex exists").submap_id);
        let evidence: Vec<(VertexId, VertexId, EdgeMeasurement)> = state
            .cross_loops
            .iter()
            .filter_map(|c| match (group_of(c.from), group_of(c.to)) {
                (a, b) if a == target && b == own => Some((c.from, c.to, c.measurement)),
                (a, b) if a == own && b == target => {
                    let inv = c.measurement.inverse();
                    Some((c.to, c.from, inv))
                }
                _ => None,
            })
            .collect();
        let target_members = state.group_members(target);
        let own_members = state.group_members(own);
        let target_spacing = median_spacing(graph, &target_members).unwrap_or(1.0);
        let scale = target_spacing / median_spacing(graph, &own_members).unwrap_or(1.0);
        let Some(align) = estimate_alignment(graph, &evidence, scale, 2.0 * target_spacing) else { continue };

        let gauge_group = gauge_vertex(graph).map(|g| state.frame_group(graph.vertex(g).unwrap().submap_id));
        let count = |members: &[SubmapId]| graph.vertices().filter(|x| members.contains(&x.submap_id)).count();
        let move_own = gauge_group != Some(own) && (gauge_group == Some(target) || count(&own_members) <= count(&target_members));
        let GroupAlignment { rotation, scale, translation } = align;
        if move_own {
            graph.map_poses(&own_members, |p| Pose::new(rotation * p.rotation(), scale * (rotation * p.translation()) + translation));
        } else {
            let inv = rotation.inverse();
            graph.map_poses(&target_members, |p| Pose::new(inv * p.rotation(), inv * (p.translation() - translation) / scale));
        }
        state.union(own, target);
        let (kept, moved) = if move_own { (target, own) } else { (own, target) };
        state.merges.push(MergeRecord { frame, kept, moved, scale: if move_own { scale } else { 1.0 / scale } });
    }
    let state_ref = &*state;
    let groups: Vec<(SubmapId, SubmapId)> = state_ref
        .cross_loops
        .iter()
        .map(|c| {
            let g = |id: VertexId| state_ref.frame_group(graph.vertex(id).expect("vertex exists").submap_id);
            (g(c.from), g(c.to))
        })
        .collect();
    let mut keep = groups.iter().map(|(a, b)| a != b);
    state.cross_loops.retain(|_| keep.next().unwrap_or(false));
}

/// Optimises with loops between groups that are not yet in a common frame
/// held out: until the alignment step has merged them, such a loop would
/// only drag a group whose scale and placement nothing else fixes.
pub fn optimize_merged(graph: &mut Graph, state: &ExplorationState, settings: &OptimizerSettings) -> Result<OptimizationReport> {
    let group: BTreeMap<VertexId, SubmapId> =
        graph.vertices().map(|v| (v.id, state.frame_group(v.submap_id))).collect();
    optimize_with(graph, settings, |e: &Edge| {
        if e.kind == EdgeKind::LoopClosure && group[&e.from] != group[&e.to] {
            Vector6::zeros()
        } else {
            e.measurement.information()
        }
    })
}

/// Runs the end-condition test once enough new edges have accumulated.
pub fn end_condition_step(
    frame: u64,
    graph: &mut Graph,
    state: &mut ExplorationState,
    config: &SystemConfig,
) -> Result<EndCondition> {
    if state.finished {
        return Ok(EndCondition::Finished);
    }
    if graph.new_edge_counter() < config.t_e {
        return Ok(EndCondition::Continue);
    }
    let report = optimize_merged(graph, state, &config.regular())?;
    graph.discard_inactive(config.closed_threshold);
    let s_nv = graph.new_vertex_ids().iter().filter(|&&id| graph.vertex(id).is_some_and(|v| v.active)).count();
    let new_edges = graph.new_edge_counter();
    graph.reset_new_bookkeeping();
    if s_nv as f64 <= config.density_bound() {
        state.counter_c += 1;
    } else {
        state.counter_c = 0;
    }
    state.trace.push(EndConditionRecord {
        frame,
        new_edges,
        s_nv,
        counter_c: state.counter_c,
        chi2_initial: report.chi2_initial,
        chi2_final: report.chi2_final,
    });
    if state.counter_c >= config.c_max {
        state.finished = true;
        return Ok(EndCondition::Finished);
    }
    Ok(EndCondition::Continue)
}

/// Counts a processed frame; every `free_time_every`-th one the front-end is
/// considered idle and the long optimisation runs. End-condition bookkeeping
/// is left untouched.
pub fn schedule_free_time_optimization(
    state: &mut ExplorationState,
    graph: &mut Graph,
    config: &SystemConfig,
) -> Result<Option<OptimizationReport>> {
    state.frames_processed += 1;
    state.free_time_budget += 1;
    if state.free_time_budget < config.free_time_every || graph.is_empty() {
        return Ok(None);
    }
    state.free_time_budget = 0;
    state.free_time_runs += 1;
    optimize_merged(graph, state, &config.free_time()).map(Some)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FrameEvent {
    pub frame: u64,
    pub keyframe: bool,
    pub lost: bool,
    pub tracking: bool,
    pub loops: usize,
    pub submap: Option<SubmapId>,
}

impl FrameEvent {
    pub const CSV_HEADER: &'static str = "frame,keyframe,lost,tracking,loops,submap";

    pub fn csv_row(&self) -> String {
        let submap = self.submap.map(|s| s.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{}",
            self.frame, self.keyframe as u8, self.lost as u8, self.tracking as u8, self.loops, submap
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EdgeCounts {
    pub tracking: usize,
    pub loop_closure: usize,
}

/// Deterministic summary of an exploration run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunStats {
    pub frames_processed: usize,
    pub keyframe_count: usize,
    pub lost_count: usize,
    pub submap_count: usize,
    pub active_vertices: usize,
    pub edges: EdgeCounts,
    pub switches_closed: usize,
    pub regular_optimizations: usize,
    pub free_time_optimizations: usize,
    pub merges: Vec<MergeRecord>,
    pub finished: bool,
    pub end_condition: Vec<EndConditionRecord>,
}

#[derive(Debug, Clone)]
pub struct ExplorationRun {
    pub graph: Graph,
    pub state: ExplorationState,
    pub events: Vec<FrameEvent>,
    pub stats: RunStats,
}

impl ExplorationRun {
    pub fn events_csv(&self) -> String {
        let mut out = String::from(FrameEvent::CSV_HEADER);
        out.push('\n');
        for e in &self.events {
            out.push_str(&e.csv_row());
            out.push('\n');
        }
        out
    }
}

/// Active keyframes as place-recognition entries.
pub fn keyframe_index<'a>(graph: &Graph, descriptors: &'a BTreeMap<VertexId, FrameObservation>) -> Vec<KeyframeRef<'a>> {
    graph
        .active_vertices()
        .filter_map(|v| descriptors.get(&v.id).map(|f| KeyframeRef { id: v.id, index: f.index, descriptor: &f.descriptor }))
        .collect()
}

/// Runs the whole front-end/back-end loop over `frames` until they run out
/// or the end condition fires. Vertex ids are frame indices.
pub fn explore(frames: &[FrameObservation], source: &dyn MeasurementSource, config: &SystemConfig) -> Result<ExplorationRun> {
    config.validate()?;
    let mut graph = Graph::with_switch_prior(config.switch_prior);
    let mut state = ExplorationState::new();
    let mut keyframes: BTreeMap<VertexId, FrameObservation> = BTreeMap::new();
    let mut last_kf: Option<VertexId> = None;
    let mut events = Vec::with_capacity(frames.len());
    let mut lost_count = 0;

    for frame in frames {
        let rel_estimate = last_kf
            .and_then(|kf| source.measure(kf, frame.index))
            .map(|m| Pose::new(m.rotation, Vector3::zeros()));
        let decision = select_keyframe(frame, last_kf.and_then(|kf| keyframes.get(&kf)), rel_estimate.as_ref(), config);
        let mut event = FrameEvent { frame: frame.index, keyframe: false, lost: false, tracking: false, loops: 0, submap: None };

        if decision == KeyframeDecision::Insert {
            let edge_set = if graph.is_empty() {
                EdgeSet::default()
            } else {
                let anchor = state.last_kf_per_submap.get(&state.current_submap).copied();
                let index = keyframe_index(&graph, &keyframes);
                process_frame(frame, anchor, &index, source, config)
            };
            let first = graph.is_empty();
            let id = handle_edge_set(frame.index, &edge_set, &mut graph, &mut state)?;
            keyframes.insert(id, frame.clone());
            last_kf = Some(id);
            if edge_set.is_lost() && !first {
                lost_count += 1;
            }
            event = FrameEvent {
                keyframe: true,
                lost: edge_set.is_lost() && !first,
                tracking: edge_set.tracking.is_some(),
                loops: edge_set.loops.len(),
                submap: Some(state.current_submap),
                ..event
            };
        }
        events.push(event);

        let status = if decision == KeyframeDecision::Insert {
            end_condition_step(frame.index, &mut graph, &mut state, config)?
        } else {
            EndCondition::Continue
        };
        schedule_free_time_optimization(&mut state, &mut graph, config)?;
        if status == EndCondition::Finished {
            break;
        }
    }

    if !graph.is_empty() {
        optimize_merged(&mut graph, &state, &config.free_time())?;
        state.free_time_runs += 1;
        graph.discard_inactive(config.closed_threshold);
    }

    let stats = RunStats {
        frames_processed: state.frames_processed,
        keyframe_count: keyframes.len(),
        lost_count,
        submap_count: graph.submap_count(),
        active_vertices: graph.active_vertices().count(),
        edges: EdgeCounts {
            tracking: graph.edge_count(EdgeKind::Tracking),
            loop_closure: graph.edge_count(EdgeKind::LoopClosure),
        },
        switches_closed: graph.switches().iter().filter(|s| s.value < config.closed_threshold).count(),
        regular_optimizations: state.trace.len(),
        free_time_optimizations: state.free_time_runs,
        merges: state.merges.clone(),
        finished: state.finished,
        end_condition: state.trace.clone(),
    };
    Ok(ExplorationRun { graph, state, events, stats })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelocalizationResult {
    pub frame_index: u64,
    pub pose: Option<Pose>,
    pub localized: bool,
    /// Loop edges that passed verification.
    pub loops: usize,
    /// Of those, edges whose switch stayed open.
    pub open_loops: usize,
}

/// Localises a single frame against a fixed map using loop closures only.
///
/// The map is only read: the frame's vertex lives in a scratch copy in which
/// every map vertex is fixed, so only the new pose and its switches move.
pub fn relocalize_frame(
    frame: &FrameObservation,
    map: &Graph,
    keyframes: &[KeyframeRef<'_>],
    source: &dyn MeasurementSource,
    config: &SystemConfig,
) -> Result<RelocalizationResult> {
    if map.is_empty() {
        return Err(Error::NoActiveVertices);
    }
    let mut result = RelocalizationResult { frame_index: frame.index, pose: None, localized: false, loops: 0, open_loops: 0 };
    let candidates = place_recognition(frame, keyframes, config.k_reloc, 0);
    let loops = verify_loops(frame, &candidates, source, config);
    result.loops = loops.len();
    if loops.len() < config.reloc_min_edges {
        return Ok(result);
    }

    let mut scratch = map.clone();
    scratch.fix_all();
    let best = scratch.vertex(loops[0].from).ok_or(Error::UnknownVertex(loops[0].from))?.clone();
    let all_submaps: Vec<SubmapId> = (0..scratch.submap_count()).collect();
    let spacing = median_spacing(&scratch, &all_submaps).unwrap_or(1.0);
    let initial = best.pose * loops[0].measurement.to_pose(spacing);
    if scratch.contains(frame.index) {
        return Err(Error::DuplicateId(frame.index));
    }
    scratch.add_keyframe_vertex(frame.index, initial, best.submap_id)?;
    let mut edge_ids = Vec::with_capacity(loops.len());
    for l in &loops {
        edge_ids.push(scratch.add_edge(EdgeKind::LoopClosure, l.from, frame.index, l.measurement)?);
    }
    optimize(&mut scratch, &config.free_time())?;
    result.open_loops = edge_ids
        .iter()
        .filter(|&&e| scratch.switch_of(&scratch.edges()[e]).is_some_and(|s| s.value >= config.closed_threshold))
        .count();
    if result.open_loops >= config.reloc_min_edges {
        result.localized = true;
        result.pose = Some(scratch.vertex(frame.index).expect("inserted").pose);
    }
    Ok(result)
}
