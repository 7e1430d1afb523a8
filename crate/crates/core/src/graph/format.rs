//! Line-oriented text format for graphs.
//!
//! ```text
//! VERTEX id tx ty tz qw qx qy qz submap_id fixed active
//! EDGE kind(T|L) from_id to_id qw qx qy qz dx dy dz s n
//! SWITCH edge_ordinal value lambda
//! ```
//!
//! Reals are written with 17 significant digits, so printing a parsed file
//! reproduces it byte for byte.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::Vector3;

use super::{Edge, EdgeKind, EdgeMeasurement, Graph, SwitchVariable, Vertex};
use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::text::{push_fields, records, unit_quaternion, Fields};

const HEADER: &str = "# pose graph: VERTEX id tx ty tz qw qx qy qz submap fixed active | \
EDGE kind from to qw qx qy qz dx dy dz s n | SWITCH edge value lambda\n";

pub fn serialize(graph: &Graph) -> String {
    let mut out = String::from(HEADER);
    for v in graph.vertices() {
        let t = v.pose.translation();
        let _ = write!(out, "VERTEX {}", v.id);
        push_fields(&mut out, &[t.x, t.y, t.z]);
        push_fields(&mut out, &v.pose.quaternion_wxyz());
        let _ = writeln!(out, " {} {} {}", v.submap_id, v.fixed as u8, v.active as u8);
    }
    for e in graph.edges() {
        let q = e.measurement.rotation().quaternion();
        let d = e.measurement.direction();
        let _ = write!(out, "EDGE {} {} {}", e.kind.code(), e.from, e.to);
        push_fields(&mut out, &[q.w, q.i, q.j, q.k, d.x, d.y, d.z]);
        let _ = writeln!(out, " {} {}", e.measurement.inliers(), e.measurement.detected());
    }
    for (ordinal, e) in graph.edges().iter().enumerate() {
        if let Some(s) = e.switch_index {
            let sw = &graph.switches()[s];
            let _ = write!(out, "SWITCH {ordinal}");
            push_fields(&mut out, &[sw.value, sw.prior_information]);
            out.push('\n');
        }
    }
    out
}

pub fn parse(text: &str) -> Result<Graph> {
    let mut vertices: Vec<Vertex> = Vec::new();
    let mut seen = BTreeMap::new();
    let mut edges: Vec<(usize, Edge)> = Vec::new();
    let mut switch_records: Vec<(usize, usize, SwitchVariable)> = Vec::new();

    for (line, rec) in records(text) {
        let mut f = Fields::new(line, rec);
        match f.next_str("record type")? {
            "VERTEX" => {
                let id: u64 = f.next("id")?;
                let t = Vector3::new(f.next_f64("tx")?, f.next_f64("ty")?, f.next_f64("tz")?);
                let q = unit_quaternion(line, f.next_f64("qw")?, f.next_f64("qx")?, f.next_f64("qy")?, f.next_f64("qz")?)?;
                let submap_id: usize = f.next("submap_id")?;
                let fixed = f.next_flag("fixed")?;
                let active = f.next_flag("active")?;
                f.finish()?;
                if seen.insert(id, submap_id).is_some() {
                    return Err(Error::parse(line, format!("duplicate vertex id {id}")));
                }
                vertices.push(Vertex { id, pose: Pose::from_raw(q, t), submap_id, fixed, active });
            }
            "EDGE" => {
                let kind = match f.next_str("kind")? {
                    "T" => EdgeKind::Tracking,
                    "L" => EdgeKind::LoopClosure,
                    other => return Err(Error::parse(line, format!("unknown edge kind {other:?}"))),
                };
                let from: u64 = f.next("from_id")?;
                let to: u64 = f.next("to_id")?;
                let q = unit_quaternion(line, f.next_f64("qw")?, f.next_f64("qx")?, f.next_f64("qy")?, f.next_f64("qz")?)?;
                let d = Vector3::new(f.next_f64("dx")?, f.next_f64("dy")?, f.next_f64("dz")?);
                let s: u32 = f.next("s")?;
                let n: u32 = f.next("n")?;
                f.finish()?;
                if n == 0 || s > n {
                    return Err(Error::parse(line, format!("invalid inlier counts s={s} n={n}")));
                }
                if (d.norm() - 1.0).abs() > 1e-9 {
                    return Err(Error::parse(line, format!("direction norm {} is not 1", d.norm())));
                }
                if from == to {
                    return Err(Error::parse(line, "edge connects a vertex to itself"));
                }
                let measurement = EdgeMeasurement::from_raw(q, d, s, n);
                edges.push((line, Edge { kind, from, to, measurement, switch_index: None }));
            }
            "SWITCH" => {
                let ordinal: usize = f.next("edge_ordinal")?;
                let value = f.next_f64("value")?;
                let lambda = f.next_f64("lambda")?;
                f.finish()?;
                if !(0.0..=1.0).contains(&value) {
                    return Err(Error::parse(line, format!("switch value {value} outside [0, 1]")));
                }
                if lambda <= 0.0 {
                    return Err(Error::parse(line, "switch prior information must be positive"));
                }
                switch_records.push((line, ordinal, SwitchVariable { value, prior: 1.0, prior_information: lambda }));
            }
            other => return Err(Error::parse(line, format!("unknown record {other:?}"))),
        }
    }

    for (line, e) in &edges {
        for id in [e.from, e.to] {
            if !seen.contains_key(&id) {
                return Err(Error::parse(*line, format!("edge references unknown vertex {id}")));
            }
        }
        let (sa, sb) = (seen[&e.from], seen[&e.to]);
        if e.kind == EdgeKind::Tracking && sa != sb {
            return Err(Error::parse(*line, "tracking edge crosses submaps"));
        }
    }

    let mut switches = Vec::with_capacity(switch_records.len());
    for (line, ordinal, sw) in switch_records {
        let (_, edge) = edges
            .get_mut(ordinal)
            .ok_or_else(|| Error::parse(line, format!("switch refers to missing edge {ordinal}")))?;
        if edge.kind != EdgeKind::LoopClosure {
            return Err(Error::parse(line, format!("edge {ordinal} is not a loop closure")));
        }
        if edge.switch_index.is_some() {
            return Err(Error::parse(line, format!("edge {ordinal} already has a switch")));
        }
        edge.switch_index = Some(switches.len());
        switches.push(sw);
    }
    if let Some((line, _)) = edges.iter().find(|(_, e)| e.kind == EdgeKind::LoopClosure && e.switch_index.is_none()) {
        return Err(Error::parse(*line, "loop-closure edge without a SWITCH record"));
    }

    let submaps = vertices.iter().map(|v| v.submap_id + 1).max().unwrap_or(0);
    let mut present = vec![false; submaps];
    for v in &vertices {
        present[v.submap_id] = true;
    }
    if let Some(missing) = present.iter().position(|p| !p) {
        let line = text.lines().count();
        return Err(Error::parse(line, format!("submap ids are not contiguous: {missing} has no vertex")));
    }

    Ok(Graph::from_parts(vertices, edges.into_iter().map(|(_, e)| e).collect(), switches))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::UnitQuaternion;

    fn fixture() -> Graph {
        let mut g = Graph::new();
        g.add_keyframe_vertex(0, Pose::identity(), 0).unwrap();
        g.add_keyframe_vertex(4, Pose::planar(1.0 / 3.0, -0.25, 0.7), 0).unwrap();
        g.add_keyframe_vertex(9, Pose::planar(0.1, 2.0, -2.9), 1).unwrap();
        g.set_fixed(0, true).unwrap();
        let m = EdgeMeasurement::new(
            UnitQuaternion::from_scaled_axis(Vector3::new(0.0, 0.0, 0.7)),
            Vector3::new(0.8, -0.6, 0.0),
            321,
            500,
        )
        .unwrap();
        g.add_edge(EdgeKind::Tracking, 0, 4, m).unwrap();
        let l = g.add_edge(EdgeKind::LoopClosure, 4, 9, m).unwrap();
        g.switch_mut(g.edges()[l].switch_index.unwrap()).value = 0.123456789;
        g
    }

    #[test]
    fn empty_graph_is_header_only() {
        let text = serialize(&Graph::new());
        assert_eq!(text, HEADER);
        let g = parse(&text).unwrap();
        assert!(g.is_empty() && g.edges().is_empty());
    }

    #[test]
    fn fixture_round_trips() {
        let g = fixture();
        let text = serialize(&g);
        let back = parse(&text).unwrap();
        assert_eq!(back, g);
        assert_eq!(back.new_edge_counter(), 0);
        assert_eq!(serialize(&back), text);
    }

    #[test]
    fn zero_quaternion_reports_line() {
        let text = "# header\n\
VERTEX 0 0 0 0 1 0 0 0 0 0 1\n\
VERTEX 1 1 0 0 1 0 0 0 0 0 1\n\
\n\
VERTEX 2 2 0 0 0 0 0 0 0 0 1\n";
        match parse(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 5),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_structural_errors() {
        let base = "VERTEX 0 0 0 0 1 0 0 0 0 0 1\nVERTEX 1 1 0 0 1 0 0 0 0 0 1\n";
        let loop_no_switch = format!("{base}EDGE L 0 1 1 0 0 0 1 0 0 10 20\n");
        assert!(matches!(parse(&loop_no_switch), Err(Error::Parse { line: 3, .. })));
        let bad_counts = format!("{base}EDGE T 0 1 1 0 0 0 1 0 0 30 20\n");
        assert!(matches!(parse(&bad_counts), Err(Error::Parse { line: 3, .. })));
        let switch_on_tracking = format!("{base}EDGE T 0 1 1 0 0 0 1 0 0 10 20\nSWITCH 0 1 1\n");
        assert!(matches!(parse(&switch_on_tracking), Err(Error::Parse { line: 4, .. })));
        let gap = "VERTEX 0 0 0 0 1 0 0 0 0 0 1\nVERTEX 1 1 0 0 1 0 0 0 2 0 1\n";
        assert!(parse(gap).is_err());
        assert!(matches!(parse("VERTEX 0 0 0\n"), Err(Error::Parse { line: 1, .. })));
    }
}
