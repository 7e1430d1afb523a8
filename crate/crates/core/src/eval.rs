//! Trajectory metrics: aligned ATE RMSE, tracking percentage, correlation and
//! keyframes-per-submap statistics, plus TUM trajectory I/O.

use std::fmt::Write as _;

use nalgebra::Vector3;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{umeyama_align, Pose, SimilarityTransform};
use crate::text::{records, unit_quaternion, Fields};

/// Timestamps closer than this are the same frame.
pub const TIMESTAMP_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stamped {
    pub timestamp: f64,
    pub pose: Pose,
}

/// Parses `timestamp tx ty tz qx qy qz qw` lines.
pub fn read_tum(text: &str) -> Result<Vec<Stamped>> {
    records(text)
        .map(|(line, rec)| {
            let mut f = Fields::new(line, rec);
            let timestamp = f.next_f64("timestamp")?;
            let t = Vector3::new(f.next_f64("tx")?, f.next_f64("ty")?, f.next_f64("tz")?);
            let (qx, qy, qz, qw) = (f.next_f64("qx")?, f.next_f64("qy")?, f.next_f64("qz")?, f.next_f64("qw")?);
            f.finish()?;
            let q = unit_quaternion(line, qw, qx, qy, qz)?;
            Ok(Stamped { timestamp, pose: Pose::from_raw(q, t) })
        })
        .collect()
}

/// Writes the shortest representation that reads back to the same bits.
pub fn write_tum(trajectory: &[Stamped]) -> String {
    let mut out = String::from("# timestamp tx ty tz qx qy qz qw\n");
    for s in trajectory {
        let t = s.pose.translation();
        let [w, x, y, z] = s.pose.quaternion_wxyz();
        let _ = writeln!(out, "{} {} {} {} {} {} {} {}", s.timestamp, t.x, t.y, t.z, x, y, z, w);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Alignment {
    None,
    Rigid,
    Similarity,
}

/// Pairs `(estimated, reference)` whose timestamps agree within `tolerance`;
/// each reference entry is used at most once.
pub fn associate(estimated: &[Stamped], reference: &[Stamped], tolerance: f64) -> Vec<(usize, usize)> {
    let mut order: Vec<usize> = (0..reference.len()).collect();
    order.sort_by(|&a, &b| reference[a].timestamp.total_cmp(&reference[b].timestamp));
    let mut used = vec![false; reference.len()];
    let mut pairs = Vec::new();
    for (i, e) in estimated.iter().enumerate() {
        let pos = order.partition_point(|&r| reference[r].timestamp < e.timestamp - tolerance);
        let best = order[pos..]
            .iter()
            .take_while(|&&r| reference[r].timestamp <= e.timestamp + tolerance)
            .filter(|&&r| !used[r])
            .min_by(|&&a, &&b| {
                let da = (reference[a].timestamp - e.timestamp).abs();
                let db = (reference[b].timestamp - e.timestamp).abs();
                da.total_cmp(&db)
            });
        if let Some(&r) = best {
            used[r] = true;
            pairs.push((i, r));
        }
    }
    pairs
}

/// Alignment of `estimated` onto `reference` and the RMSE left after it.
pub fn align_positions(
    estimated: &[Vector3<f64>],
    reference: &[Vector3<f64>],
    align: Alignment,
) -> Result<(f64, SimilarityTransform)> {
    if estimated.is_empty() {
        return Err(Error::AssociationEmpty);
    }
    if estimated.len() < 3 {
        return Err(Error::DegenerateInput(format!("need at least 3 associated poses, got {}", estimated.len())));
    }
    let identity = SimilarityTransform::identity();
    let transform = match align {
        Alignment::None => identity,
        Alignment::Rigid => umeyama_align(estimated, reference, false)?,
        Alignment::Similarity => umeyama_align(estimated, reference, true)?,
    };
    // the identity is always admissible; keep it when rounding makes the
    // closed form marginally worse (e.g. identical inputs)
    let aligned = transform.rms_residual(estimated, reference);
    let unaligned = identity.rms_residual(estimated, reference);
    if unaligned <= aligned {
        Ok((unaligned, identity))
    } else {
        Ok((aligned, transform))
    }
}

/// Absolute trajectory error: positions associated by timestamp, aligned,
/// then root-mean-square of the remaining offsets.
pub fn ate_rmse(estimated: &[Stamped], reference: &[Stamped], align: Alignment) -> Result<f64> {
    let pairs = associate(estimated, reference, TIMESTAMP_TOLERANCE);
    if pairs.is_empty() {
        return Err(Error::AssociationEmpty);
    }
    let est: Vec<_> = pairs.iter().map(|&(i, _)| *estimated[i].pose.translation()).collect();
    let gt: Vec<_> = pairs.iter().map(|&(_, j)| *reference[j].pose.translation()).collect();
    align_positions(&est, &gt, align).map(|(rmse, _)| rmse)
}

pub fn tracking_percentage(considered: usize, tracked: usize) -> Result<f64> {
    if considered == 0 || tracked > considered {
        return Err(Error::InvalidCounts { s: tracked as u64, n: considered as u64 });
    }
    Ok(tracked as f64 / considered as f64)
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::DegenerateInput(format!("need two equal series of length >= 2, got {} and {}", x.len(), y.len())));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SubmapStats {
    pub a_kfs: f64,
    pub sd_kfs: f64,
    pub submap_count: usize,
}

/// Population mean and standard deviation of keyframes per submap.
pub fn submap_stats(keyframes_per_submap: &[usize]) -> Result<SubmapStats> {
    if keyframes_per_submap.is_empty() {
        return Err(Error::EmptyLog);
    }
    let n = keyframes_per_submap.len() as f64;
    let mean = keyframes_per_submap.iter().sum::<usize>() as f64 / n;
    let var = keyframes_per_submap.iter().map(|&c| (c as f64 - mean).powi(2)).sum::<f64>() / n;
    Ok(SubmapStats { a_kfs: mean, sd_kfs: var.sqrt(), submap_count: keyframes_per_submap.len() })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MetricsReport {
    pub ate_rmse: Option<f64>,
    pub tracking_percentage: Option<f64>,
    pub submap_count: Option<usize>,
    pub a_kfs: Option<f64>,
    pub sd_kfs: Option<f64>,
    pub pearson_r: Option<f64>,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str = "ate_rmse,tracking_percentage,submap_count,a_kfs,sd_kfs,pearson_r";

    pub fn with_submaps(mut self, stats: SubmapStats) -> Self {
        self.submap_count = Some(stats.submap_count);
        self.a_kfs = Some(stats.a_kfs);
        self.sd_kfs = Some(stats.sd_kfs);
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// One CSV row; unknown fields are left empty.
    pub fn to_csv_row(&self) -> String {
        fn cell<T: ToString>(v: Option<T>) -> String {
            v.map(|v| v.to_string()).unwrap_or_default()
        }
        [
            cell(self.ate_rmse),
            cell(self.tracking_percentage),
            cell(self.submap_count),
            cell(self.a_kfs),
            cell(self.sd_kfs),
            cell(self.pearson_r),
        ]
        .join(",")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::UnitQuaternion;

    fn path(n: usize) -> Vec<Stamped> {
        (0..n)
            .map(|i| {
                let a = i as f64 * 0.3;
                Stamped { timestamp: i as f64 / 30.0, pose: Pose::planar(2.0 * a.cos(), a.sin() + 0.1 * a, a) }
            })
            .collect()
    }

    #[test]
    fn identical_trajectories_have_zero_error() {
        let gt = path(20);
        for align in [Alignment::None, Alignment::Rigid, Alignment::Similarity] {
            assert_eq!(ate_rmse(&gt, &gt, align).unwrap(), 0.0);
        }
    }

    #[test]
    fn similarity_absorbs_scale() {
        let gt = path(25);
        let est: Vec<_> = gt
            .iter()
            .map(|s| Stamped { pose: Pose::new(*s.pose.rotation(), s.pose.translation() * 2.0), ..*s })
            .collect();
        assert!(ate_rmse(&est, &gt, Alignment::Similarity).unwrap() < 1e-9);
        assert!(ate_rmse(&est, &gt, Alignment::Rigid).unwrap() > 0.1);
    }

    // Derivative-free refinement of the similarity objective over
    // (scale, yaw, roll, pitch, tx, ty, tz) as an independent oracle.
    fn brute_force_similarity(est: &[Vector3<f64>], gt: &[Vector3<f64>]) -> f64 {
        let cost = |x: &[f64; 7]| {
            let r = UnitQuaternion::from_euler_angles(x[2], x[3], x[1]);
            let t = Vector3::new(x[4], x[5], x[6]);
            let sum: f64 = est.iter().zip(gt).map(|(e, g)| (x[0] * (r * e) + t - g).norm_squared()).sum();
            (sum / est.len() as f64).sqrt()
        };
        let mut x = [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let mut best = cost(&x);
        let mut step = 0.5;
        while step > 1e-10 {
            let mut improved = false;
            for d in 0..7 {
                for sign in [-1.0, 1.0] {
                    let mut y = x;
                    y[d] += sign * step;
                    let c = cost(&y);
                    if c < best {
                        best = c;
                        x = y;
                        improved = true;
                    }
                }
            }
            if !improved {
                step *= 0.5;
            }
        }
        best
    }

    #[test]
    fn partial_offset_matches_brute_force() {
        let gt = path(30);
        let est: Vec<_> = gt
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let shift = if i % 2 == 0 { Vector3::new(0.1, 0.0, 0.0) } else { Vector3::zeros() };
                Stamped { pose: Pose::new(*s.pose.rotation(), s.pose.translation() + shift), ..*s }
            })
            .collect();
        let rmse = ate_rmse(&est, &gt, Alignment::Similarity).unwrap();
        let e: Vec<_> = est.iter().map(|s| *s.pose.translation()).collect();
        let g: Vec<_> = gt.iter().map(|s| *s.pose.translation()).collect();
        let oracle = brute_force_similarity(&e, &g);
        assert!((rmse - oracle).abs() < 1e-7, "{rmse} vs {oracle}");
        assert!(rmse > 0.0 && rmse < 0.05);
    }

    #[test]
    fn alignment_ordering_and_rigid_invariance() {
        let gt = path(40);
        let motion = Pose::new(UnitQuaternion::from_euler_angles(0.3, -0.2, 1.1), Vector3::new(3.0, -1.0, 0.5));
        let est: Vec<_> = gt
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let wobble = Vector3::new((i as f64).sin() * 0.05, 0.02 * i as f64, 0.0);
                Stamped { pose: Pose::new(*s.pose.rotation(), s.pose.translation() * 1.3 + wobble), ..*s }
            })
            .collect();
        let none = ate_rmse(&est, &gt, Alignment::None).unwrap();
        let rigid = ate_rmse(&est, &gt, Alignment::Rigid).unwrap();
        let sim = ate_rmse(&est, &gt, Alignment::Similarity).unwrap();
        assert!(sim <= rigid + 1e-12 && rigid <= none + 1e-12);

        let moved = |t: &[Stamped]| t.iter().map(|s| Stamped { pose: motion * s.pose, ..*s }).collect::<Vec<_>>();
        let again = ate_rmse(&moved(&est), &moved(&gt), Alignment::Similarity).unwrap();
        assert!((again - sim).abs() < 1e-9);
    }

    #[test]
    fn association_failures() {
        let gt = path(10);
        let late: Vec<_> = gt.iter().map(|s| Stamped { timestamp: s.timestamp + 100.0, ..*s }).collect();
        assert!(matches!(ate_rmse(&late, &gt, Alignment::Similarity), Err(Error::AssociationEmpty)));
        assert!(matches!(ate_rmse(&gt[..2], &gt, Alignment::Similarity), Err(Error::DegenerateInput(_))));
        let jittered: Vec<_> = gt.iter().map(|s| Stamped { timestamp: s.timestamp + 5e-4, ..*s }).collect();
        assert_eq!(associate(&jittered, &gt, TIMESTAMP_TOLERANCE).len(), 10);
    }

    #[test]
    fn tum_round_trip_is_byte_identical() {
        let text = write_tum(&path(12));
        let back = read_tum(&text).unwrap();
        assert_eq!(write_tum(&back), text);
        assert!(read_tum("0 1 2 3 0 0 0 0\n").is_err());
    }

    #[test]
    fn tracking_percentage_values() {
        assert_eq!(tracking_percentage(1000, 658).unwrap(), 0.658);
        assert_eq!(tracking_percentage(7, 7).unwrap(), 1.0);
        assert_eq!(tracking_percentage(7, 0).unwrap(), 0.0);
        assert!(tracking_percentage(0, 0).is_err());
        assert!(tracking_percentage(3, 4).is_err());
    }

    #[test]
    fn pearson_values() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert!((pearson(&x, &x.map(|v| 2.0 * v + 1.0)).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&x, &x.map(|v| -v)).unwrap() + 1.0).abs() < 1e-15);
        // means 2.5 and 2.5; sum of products of deviations = 3; both sums of squares = 5
        let r = pearson(&x, &[2.0, 1.0, 4.0, 3.0]).unwrap();
        assert!((r - 0.6).abs() < 1e-15);
        let scaled = pearson(&x.map(|v| 3.0 * v - 7.0), &[2.0, 1.0, 4.0, 3.0]).unwrap();
        assert!((scaled - r).abs() < 1e-12);
        assert!(matches!(pearson(&x, &[1.0; 4]), Err(Error::ZeroVariance)));
    }

    #[test]
    fn submap_stat_values() {
        assert_eq!(submap_stats(&[10]).unwrap(), SubmapStats { a_kfs: 10.0, sd_kfs: 0.0, submap_count: 1 });
        assert_eq!(submap_stats(&[5, 15]).unwrap(), SubmapStats { a_kfs: 10.0, sd_kfs: 5.0, submap_count: 2 });
        assert!(matches!(submap_stats(&[]), Err(Error::EmptyLog)));
    }

    #[test]
    fn report_csv_leaves_unknowns_empty() {
        let r = MetricsReport { ate_rmse: Some(0.5), submap_count: Some(3), ..Default::default() };
        assert_eq!(r.to_csv_row(), "0.5,,3,,,");
        assert_eq!(MetricsReport::CSV_HEADER.split(',').count(), 6);
    }
}
