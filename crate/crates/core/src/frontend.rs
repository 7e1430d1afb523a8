//! Front-end decisions per frame: keyframe selection, strict tracking,
//! top-k place recognition and lax loop verification.

use nalgebra::DVector;

use crate::config::SystemConfig;
use crate::geometry::Pose;
use crate::graph::{Edge, EdgeKind, EdgeMeasurement, VertexId};
use crate::sim::{Measurement, MeasurementSource};

#[derive(Debug, Clone, PartialEq)]
pub struct FrameObservation {
    pub index: u64,
    pub descriptor: DVector<f64>,
    pub timestamp: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeyframeDecision {
    Insert,
    Skip,
}

/// Constraints found for one keyframe. Empty means the frame is lost.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EdgeSet {
    pub tracking: Option<Edge>,
    pub loops: Vec<Edge>,
}

impl EdgeSet {
    pub fn is_lost(&self) -> bool {
        self.tracking.is_none() && self.loops.is_empty()
    }

    pub fn len(&self) -> usize {
        self.loops.len() + self.tracking.is_some() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.is_lost()
    }
}

/// A keyframe as seen by place recognition.
#[derive(Debug, Clone, Copy)]
pub struct KeyframeRef<'a> {
    pub id: VertexId,
    pub index: u64,
    pub descriptor: &'a DVector<f64>,
}

pub fn descriptor_distance(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm()
}

/// Inserts when the estimated motion or the appearance change since the last
/// keyframe is large enough. Without a previous keyframe the frame is always
/// inserted.
pub fn select_keyframe(
    frame: &FrameObservation,
    last_kf: Option<&FrameObservation>,
    rel_estimate: Option<&Pose>,
    config: &SystemConfig,
) -> KeyframeDecision {
    let Some(last) = last_kf else {
        return KeyframeDecision::Insert;
    };
    // a logarithm too close to pi is a large motion by any measure
    let moved = rel_estimate.is_some_and(|p| p.log().map_or(f64::INFINITY, |t| t.norm()) > config.tau_pose);
    let changed = descriptor_distance(&frame.descriptor, &last.descriptor) > config.tau_desc;
    if moved || changed {
        KeyframeDecision::Insert
    } else {
        KeyframeDecision::Skip
    }
}

fn to_edge(kind: EdgeKind, from: VertexId, to: VertexId, m: &Measurement) -> Option<Edge> {
    if m.degenerate {
        return None;
    }
    let measurement = EdgeMeasurement::new(m.rotation, m.direction, m.s, m.n).ok()?;
    Some(Edge { kind, from, to, measurement, switch_index: None })
}

/// Tracking edge `last_kf -> frame` when the matcher reports at least
/// `s_strict` inliers.
pub fn try_tracking_edge(
    frame: &FrameObservation,
    last_kf: VertexId,
    source: &dyn MeasurementSource,
    config: &SystemConfig,
) -> Option<Edge> {
    let m = source.measure(last_kf, frame.index)?;
    if m.s < config.s_strict {
        return None;
    }
    to_edge(EdgeKind::Tracking, last_kf, frame.index, &m)
}

/// The `k` nearest keyframes by descriptor distance among those at least
/// `gap_min` frames away; ties go to the lower id.
pub fn place_recognition(frame: &FrameObservation, keyframes: &[KeyframeRef<'_>], k: usize, gap_min: u64) -> Vec<VertexId> {
    let mut scored: Vec<(f64, VertexId)> = keyframes
        .iter()
        .filter(|kf| kf.index.abs_diff(frame.index) >= gap_min)
        .map(|kf| (descriptor_distance(&frame.descriptor, kf.descriptor), kf.id))
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    scored.into_iter().take(k).map(|(_, id)| id).collect()
}

/// Loop edges `candidate -> frame` for every candidate with at least
/// `s_lax` inliers, in candidate order.
pub fn verify_loops(
    frame: &FrameObservation,
    candidates: &[VertexId],
    source: &dyn MeasurementSource,
    config: &SystemConfig,
) -> Vec<Edge> {
    candidates
        .iter()
        .filter_map(|&c| {
            let m = source.measure(c, frame.index)?;
            if m.s < config.s_lax {
                return None;
            }
            to_edge(EdgeKind::LoopClosure, c, frame.index, &m)
        })
        .collect()
}

/// Tracks against the last keyframe of the current submap and looks for
/// loop closures among the given keyframes.
pub fn process_frame(
    frame: &FrameObservation,
    tracking_anchor: Option<VertexId>,
    keyframes: &[KeyframeRef<'_>],
    source: &dyn MeasurementSource,
    config: &SystemConfig,
) -> EdgeSet {
    let tracking = tracking_anchor.and_then(|anchor| try_tracking_edge(frame, anchor, source, config));
    let loops = if config.loops_enabled {
        let candidates = place_recognition(frame, keyframes, config.k, config.gap_min);
        verify_loops(frame, &candidates, source, config)
    } else {
        Vec::new()
    };
    EdgeSet { tracking, loops }
}
