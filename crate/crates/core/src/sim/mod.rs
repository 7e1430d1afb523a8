//! Synthetic monocular world: a looping hand-held trajectory through a room,
//! appearance descriptors, and a pairwise two-view measurement oracle with
//! noise, inlier counts, degraded stretches and perceptual aliasing.

mod dataset;

use std::f64::consts::{PI, TAU};
use std::fmt::Write as _;

use nalgebra::{DVector, DMatrix, Quaternion, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{relative, so3_exp, Pose};
use crate::text::{key_values, parse_value};

pub use dataset::{Dataset, FrameRecord, MeasurementTable};

/// Baseline under which a pair's translation direction is undefined.
pub const DEGENERATE_BASELINE: f64 = 1e-6;

/// Frames `start..end` observed with reduced feature quality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FailureWindow {
    pub start: u64,
    pub end: u64,
    pub quality: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorldSpec {
    pub seed: u64,
    pub room_x: f64,
    pub room_y: f64,
    /// Distance kept between the nominal path and the walls.
    pub margin: f64,
    pub loops: usize,
    pub frames_per_loop: usize,
    pub fps: f64,
    /// Amplitude of per-loop offsets and path wobble (m).
    pub lateral_jitter: f64,
    /// Adds height and pitch variation to the otherwise planar path.
    pub three_d: bool,
    pub descriptor_dim: usize,
    pub descriptor_length_scale: f64,
    pub descriptor_angle_scale: f64,
    pub sigma_r: f64,
    pub sigma_t: f64,
    pub sigma_d: f64,
    pub r_cov: f64,
    pub theta_cov: f64,
    /// Probability that a frame's descriptor looks like the mirrored place.
    pub p_alias: f64,
    /// Inlier-rate factor of matches against an aliased place.
    pub alias_quality: f64,
    /// Match-ratio factor of the inlier model.
    pub p: f64,
    /// Feature budget per frame.
    pub n: u32,
    /// Draw inlier counts from a binomial; otherwise use the rounded mean.
    pub stochastic_inliers: bool,
    pub failure_windows: Vec<FailureWindow>,
}

impl Default for WorldSpec {
    fn default() -> Self {
        Self::standard(7)
    }
}

impl WorldSpec {
    /// Three loops (900 frames) with three degraded stretches.
    pub fn standard(seed: u64) -> Self {
        Self {
            seed,
            room_x: 6.0,
            room_y: 4.0,
            margin: 0.8,
            loops: 3,
            frames_per_loop: 300,
            fps: 30.0,
            lateral_jitter: 0.12,
            three_d: false,
            descriptor_dim: 64,
            descriptor_length_scale: 0.75,
            descriptor_angle_scale: 0.5,
            sigma_r: 0.005,
            sigma_t: 0.02,
            sigma_d: 0.01,
            r_cov: 1.3,
            theta_cov: 0.75,
            p_alias: 0.1,
            alias_quality: 0.05,
            p: 0.8,
            n: 500,
            stochastic_inliers: true,
            failure_windows: vec![
                FailureWindow { start: 100, end: 115, quality: 0.05 },
                FailureWindow { start: 420, end: 432, quality: 0.05 },
                FailureWindow { start: 610, end: 622, quality: 0.05 },
            ],
        }
    }

    /// Five loops over the same room, no degraded stretches and no aliasing:
    /// every revisit can saturate its place-recognition candidates.
    pub fn dense_revisit(seed: u64) -> Self {
        Self { loops: 5, failure_windows: Vec::new(), p_alias: 0.0, ..Self::standard(seed) }
    }

    /// One lap only.
    pub fn single_pass(seed: u64) -> Self {
        Self { loops: 1, failure_windows: Vec::new(), ..Self::standard(seed) }
    }

    pub fn frame_count(&self) -> usize {
        self.loops * self.frames_per_loop
    }

    pub fn room_diagonal(&self) -> f64 {
        self.room_x.hypot(self.room_y)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse_value(key, value)?,
            "room_x" => self.room_x = parse_value(key, value)?,
            "room_y" => self.room_y = parse_value(key, value)?,
            "margin" => self.margin = parse_value(key, value)?,
            "loops" => self.loops = parse_value(key, value)?,
            "frames_per_loop" => self.frames_per_loop = parse_value(key, value)?,
            "fps" => self.fps = parse_value(key, value)?,
            "lateral_jitter" => self.lateral_jitter = parse_value(key, value)?,
            "three_d" => self.three_d = parse_value(key, value)?,
            "descriptor_dim" => self.descriptor_dim = parse_value(key, value)?,
            "descriptor_length_scale" => self.descriptor_length_scale = parse_value(key, value)?,
            "descriptor_angle_scale" => self.descriptor_angle_scale = parse_value(key, value)?,
            "sigma_r" => self.sigma_r = parse_value(key, value)?,
            "sigma_t" => self.sigma_t = parse_value(key, value)?,
            "sigma_d" => self.sigma_d = parse_value(key, value)?,
            "r_cov" => self.r_cov = parse_value(key, value)?,
            "theta_cov" => self.theta_cov = parse_value(key, value)?,
            "p_alias" => self.p_alias = parse_value(key, value)?,
            "alias_quality" => self.alias_quality = parse_value(key, value)?,
            "p" => self.p = parse_value(key, value)?,
            "n" => self.n = parse_value(key, value)?,
            "stochastic_inliers" => self.stochastic_inliers = parse_value(key, value)?,
            "failure_window" => self.failure_windows.push(parse_window(value)?),
            "failure_windows" if value == "none" => self.failure_windows.clear(),
            _ => return Err(Error::config(key, "unknown world key")),
        }
        Ok(())
    }

    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair.split_once('=').ok_or_else(|| Error::config(pair, "expected key=value"))?;
        self.set(k.trim(), v.trim())?;
        self.validate()
    }

    /// Reads a world description. Failure windows are given as repeated
    /// `failure_window = start,end,quality` lines; when none is listed the
    /// preset's windows are kept unless `failure_windows = none`.
    pub fn from_text(text: &str) -> Result<Self> {
        let spec = Self::parse_fields(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub(crate) fn parse_fields(text: &str) -> Result<Self> {
        let mut spec = Self::default();
        let mut windows_seen = false;
        for (line, key, value) in key_values(text)? {
            if key == "failure_window" && !windows_seen {
                spec.failure_windows.clear();
                windows_seen = true;
            }
            spec.set(&key, &value).map_err(|e| match e {
                Error::Config { field, reason } => Error::Config { field, reason: format!("line {line}: {reason}") },
                other => other,
            })?;
        }
        Ok(spec)
    }

    /// Writes every field but the failure windows.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let value = serde_json::to_value(self).expect("spec serializes");
        for (k, v) in value.as_object().expect("struct") {
            if k != "failure_windows" {
                let _ = writeln!(out, "{k} = {v}");
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let non_negative = [
            ("lateral_jitter", self.lateral_jitter),
            ("sigma_r", self.sigma_r),
            ("sigma_t", self.sigma_t),
            ("sigma_d", self.sigma_d),
            ("margin", self.margin),
        ];
        for (field, v) in non_negative {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(field, "must be non-negative"));
            }
        }
        let positive = [
            ("room_x", self.room_x),
            ("room_y", self.room_y),
            ("fps", self.fps),
            ("r_cov", self.r_cov),
            ("theta_cov", self.theta_cov),
            ("descriptor_length_scale", self.descriptor_length_scale),
            ("descriptor_angle_scale", self.descriptor_angle_scale),
        ];
        for (field, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(field, "must be positive"));
            }
        }
        for (field, v) in [("p", self.p), ("p_alias", self.p_alias), ("alias_quality", self.alias_quality)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(field, "must lie in [0, 1]"));
            }
        }
        if 2.0 * self.margin >= self.room_x.min(self.room_y) {
            return Err(Error::config("margin", "leaves no room for the path"));
        }
        if self.loops == 0 || self.frames_per_loop < 3 {
            return Err(Error::config("frames_per_loop", "need at least one loop of 3 frames"));
        }
        if self.descriptor_dim == 0 {
            return Err(Error::config("descriptor_dim", "must be positive"));
        }
        if self.n == 0 {
            return Err(Error::config("n", "must be positive"));
        }
        let frames = self.frame_count() as u64;
        for w in &self.failure_windows {
            if w.start >= w.end || w.end > frames || !(0.0..=1.0).contains(&w.quality) {
                return Err(Error::config("failure_window", format!("{},{},{} is not a window inside the run", w.start, w.end, w.quality)));
            }
        }
        Ok(())
    }

    /// Feature-quality factor of a frame.
    pub fn quality(&self, frame: u64) -> f64 {
        self.failure_windows
            .iter()
            .filter(|w| (w.start..w.end).contains(&frame))
            .map(|w| w.quality)
            .fold(1.0, f64::min)
    }
}

pub(crate) fn parse_window(value: &str) -> Result<FailureWindow> {
    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(Error::config("failure_window", "expected start,end,quality"));
    }
    Ok(FailureWindow {
        start: parse_value("failure_window", parts[0])?,
        end: parse_value("failure_window", parts[1])?,
        quality: parse_value("failure_window", parts[2])?,
    })
}

/// What the two-view geometry returns for a frame pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub rotation: UnitQuaternion<f64>,
    /// Unit vector, or zero when `degenerate`.
    pub direction: Vector3<f64>,
    pub s: u32,
    pub n: u32,
    pub degenerate: bool,
}

impl Measurement {
    /// The same measurement seen from the other frame.
    pub fn inverse(&self) -> Self {
        let rotation = self.rotation.inverse();
        Self { rotation, direction: -(rotation * self.direction), ..*self }
    }
}

/// Anything that can answer "what does the matcher report for frames i, j".
pub trait MeasurementSource {
    fn measure(&self, from: u64, to: u64) -> Option<Measurement>;
}

/// Seed-fixed random Fourier features approximating a Gaussian kernel on
/// (position, heading).
#[derive(Debug, Clone)]
struct Embedding {
    weights: DMatrix<f64>,
    phases: DVector<f64>,
    length: f64,
    angle: f64,
}

impl Embedding {
    fn new(spec: &WorldSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(spec.seed, 0xD35C, 0));
        let d = spec.descriptor_dim;
        let weights = DMatrix::from_fn(5, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let phases = DVector::from_fn(d, |_, _| rng.random_range(0.0..TAU));
        Self { weights, phases, length: spec.descriptor_length_scale, angle: spec.descriptor_angle_scale }
    }

    fn embed(&self, pose: &Pose) -> DVector<f64> {
        let t = pose.translation();
        let heading = pose.rotation() * Vector3::x();
        let yaw = heading.y.atan2(heading.x);
        let z = DVector::from_vec(vec![
            t.x / self.length,
            t.y / self.length,
            t.z / self.length,
            yaw.cos() / self.angle,
            yaw.sin() / self.angle,
        ]);
        let scale = (2.0 / self.phases.len() as f64).sqrt();
        (self.weights.tr_mul(&z) + &self.phases).map(|a| scale * a.cos())
    }
}

/// A generated world: ground truth plus the hidden state the oracle needs.
#[derive(Debug, Clone)]
pub struct World {
    pub spec: WorldSpec,
    pub timestamps: Vec<f64>,
    pub poses: Vec<Pose>,
    pub descriptors: Vec<DVector<f64>>,
    /// Frames whose appearance mimics the mirrored place.
    pub aliased: Vec<bool>,
}

impl World {
    pub fn generate(spec: &WorldSpec) -> Result<Self> {
        spec.validate()?;
        let trajectory = generate_trajectory(spec);
        let embedding = Embedding::new(spec);
        let mut descriptors = Vec::with_capacity(trajectory.len());
        let mut aliased = Vec::with_capacity(trajectory.len());
        for (i, (_, pose)) in trajectory.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(mix(spec.seed, 0xF4A3, i as u64));
            let alias = rng.random::<f64>() < spec.p_alias;
            let base = if alias { embedding.embed(&mirrored(pose)) } else { embedding.embed(pose) };
            let noise = DVector::from_fn(base.len(), |_, _| spec.sigma_d * rng.sample::<f64, _>(StandardNormal));
            descriptors.push(base + noise);
            aliased.push(alias);
        }
        let (timestamps, poses) = trajectory.into_iter().unzip();
        Ok(Self { spec: spec.clone(), timestamps, poses, descriptors, aliased })
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    /// Pose the frame's appearance suggests.
    fn apparent_pose(&self, i: usize) -> Pose {
        if self.aliased[i] {
            mirrored(&self.poses[i])
        } else {
            self.poses[i]
        }
    }

    pub fn truly_covisible(&self, i: u64, j: u64) -> bool {
        overlap(&self.spec, &self.poses[i as usize], &self.poses[j as usize]).is_some()
    }

    /// The oracle for a pair; `None` when the frames share no view, real or
    /// apparent. Each unordered pair has its own random stream, and the
    /// reversed query returns the exact inverse.
    pub fn measure_relative(&self, i: u64, j: u64) -> Option<Measurement> {
        if i == j || i as usize >= self.len() || j as usize >= self.len() {
            return None;
        }
        let (lo, hi) = (i.min(j), i.max(j));
        let m = self.measure_ordered(lo, hi)?;
        Some(if i < j { m } else { m.inverse() })
    }

    fn measure_ordered(&self, lo: u64, hi: u64) -> Option<Measurement> {
        let spec = &self.spec;
        let (a, b) = (lo as usize, hi as usize);
        let mut rng = ChaCha8Rng::seed_from_u64(mix(spec.seed, lo, hi));
        let quality = spec.quality(lo) * spec.quality(hi);

        if let Some(q) = overlap(spec, &self.poses[a], &self.poses[b]) {
            let rel = relative(&self.poses[a], &self.poses[b]);
            let noise = Vector3::from_fn(|_, _| spec.sigma_r * rng.sample::<f64, _>(StandardNormal));
            let rotation = *rel.rotation() * so3_exp(&noise);
            let baseline = rel.translation().norm();
            let degenerate = baseline < DEGENERATE_BASELINE;
            let direction = if degenerate {
                Vector3::zeros()
            } else {
                let jitter = Vector3::from_fn(|_, _| spec.sigma_t * rng.sample::<f64, _>(StandardNormal));
                (rel.translation() / baseline + jitter).normalize()
            };
            let s = inlier_count(spec, &mut rng, q * quality * spec.p);
            return Some(Measurement { rotation, direction, s, n: spec.n, degenerate });
        }

        if !(self.aliased[a] || self.aliased[b]) {
            return None;
        }
        let q = overlap(spec, &self.apparent_pose(a), &self.apparent_pose(b))?;
        // geometry from matches against the wrong place: arbitrary
        let quat = Quaternion::from_vector(nalgebra::Vector4::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal)));
        let rotation = UnitQuaternion::from_quaternion(quat);
        let direction = Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal)).normalize();
        let s = inlier_count(spec, &mut rng, q * quality * spec.p * spec.alias_quality);
        Some(Measurement { rotation, direction, s, n: spec.n, degenerate: false })
    }

    pub fn to_dataset(&self) -> Dataset {
        Dataset::from_world(self)
    }
}

impl MeasurementSource for World {
    fn measure(&self, from: u64, to: u64) -> Option<Measurement> {
        self.measure_relative(from, to)
    }
}

fn inlier_count(spec: &WorldSpec, rng: &mut ChaCha8Rng, prob: f64) -> u32 {
    let prob = prob.clamp(0.0, 1.0);
    if spec.stochastic_inliers {
        Binomial::new(spec.n as u64, prob).expect("probability clamped").sample(rng) as u32
    } else {
        (spec.n as f64 * prob).round() as u32
    }
}

/// View overlap in [0, 1] of two camera poses, `None` when not covisible.
pub fn overlap(spec: &WorldSpec, a: &Pose, b: &Pose) -> Option<f64> {
    let d = (a.translation() - b.translation()).norm();
    let angle = relative(a, b).angle();
    if d > spec.r_cov || angle > spec.theta_cov {
        return None;
    }
    Some((1.0 - d / spec.r_cov) * (1.0 - angle / spec.theta_cov))
}

/// Point reflection through the room centre, facing the opposite way.
pub fn mirrored(pose: &Pose) -> Pose {
    let t = pose.translation();
    let flip = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), PI);
    Pose::new(flip * pose.rotation(), Vector3::new(-t.x, -t.y, t.z))
}

/// Looping path around the room centre at constant speed; yaw follows the
/// direction of motion.
pub fn generate_trajectory(spec: &WorldSpec) -> Vec<(f64, Pose)> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(spec.seed, 0x7EA1, 0));
    let a = spec.room_x / 2.0 - spec.margin;
    let b = spec.room_y / 2.0 - spec.margin;
    let jitter = spec.lateral_jitter;
    let offsets: Vec<f64> = (0..=spec.loops).map(|_| rng.random_range(-jitter..=jitter)).collect();
    let wobble: Vec<(f64, f64)> =
        (0..3).map(|_| (rng.random_range(-jitter..=jitter) / 2.0, rng.random_range(0.0..TAU))).collect();

    let position = |u: f64| -> Vector3<f64> {
        // u counts laps
        let lap = (u.floor() as usize).min(spec.loops - 1);
        let frac = u - lap as f64;
        let blend = 0.5 - 0.5 * (PI * frac).cos();
        let theta = TAU * u;
        let mut off = offsets[lap] * (1.0 - blend) + offsets[lap + 1] * blend;
        for (k, (amp, phase)) in wobble.iter().enumerate() {
            off += amp * ((k as f64 + 2.0) * theta + phase).sin();
        }
        let z = if spec.three_d { 0.15 * (3.0 * theta).sin() } else { 0.0 };
        Vector3::new((a + off) * theta.cos(), (b + off) * theta.sin(), z)
    };

    // constant walking speed: frames are spaced evenly in arc length
    let total_u = spec.loops as f64;
    let samples = spec.frame_count() * 16;
    let mut arc = Vec::with_capacity(samples + 1);
    arc.push(0.0);
    let mut prev = position(0.0);
    for k in 1..=samples {
        let p = position(total_u * k as f64 / samples as f64);
        arc.push(arc[k - 1] + (p - prev).norm());
        prev = p;
    }
    let length = arc[samples];
    let frames = spec.frame_count();
    let lap_of_arc = |target: f64| -> f64 {
        let k = arc.partition_point(|&l| l < target).clamp(1, samples);
        let span = arc[k] - arc[k - 1];
        let t = if span > 0.0 { (target - arc[k - 1]) / span } else { 0.0 };
        total_u * (k as f64 - 1.0 + t) / samples as f64
    };

    (0..frames)
        .map(|f| {
            let u = lap_of_arc(length * f as f64 / frames as f64);
            let p = position(u);
            let h = 1e-4;
            let v = position(u + h) - position(u - h);
            let yaw = v.y.atan2(v.x);
            let mut rotation = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw);
            if spec.three_d {
                let pitch = 0.05 * (2.0 * TAU * u).sin();
                rotation *= UnitQuaternion::from_axis_angle(&Vector3::y_axis(), pitch);
            }
            (f as f64 / spec.fps, Pose::new(rotation, p))
        })
        .collect()
}

/// SplitMix64 over the seed and two stream labels.
fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.rotate_left(32).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet(spec: WorldSpec) -> WorldSpec {
        WorldSpec { sigma_r: 0.0, sigma_t: 0.0, sigma_d: 0.0, stochastic_inliers: false, p_alias: 0.0, ..spec }
    }

    #[test]
    fn single_loop_closes_within_jitter() {
        let spec = WorldSpec { frames_per_loop: 100, ..WorldSpec::single_pass(3) };
        let traj = generate_trajectory(&spec);
        assert_eq!(traj.len(), 100);
        let first = traj[0].1.translation();
        let last = traj[99].1.translation();
        // one step short of a full lap, plus the offset blend
        assert!((first - last).norm() < 0.2 + 4.0 * spec.lateral_jitter);
        assert_eq!(traj[30].0, 1.0);
    }

    #[test]
    fn trajectory_is_deterministic() {
        let spec = WorldSpec::standard(11);
        let a = generate_trajectory(&spec);
        let b = generate_trajectory(&spec);
        assert!(a.iter().zip(&b).all(|(x, y)| x.0.to_bits() == y.0.to_bits() && x.1 == y.1));
        let other = generate_trajectory(&WorldSpec::standard(12));
        assert!(a.iter().zip(&other).any(|(x, y)| x.1 != y.1));
    }

    #[test]
    fn later_loops_revisit_the_first() {
        let spec = WorldSpec::standard(5);
        let traj = generate_trajectory(&spec);
        let fpl = spec.frames_per_loop;
        let first: Vec<_> = traj[..fpl].iter().map(|(_, p)| *p.translation()).collect();
        let revisits = traj[fpl..]
            .iter()
            .filter(|(_, p)| first.iter().any(|q| (p.translation() - q).norm() < spec.r_cov))
            .count();
        assert!(revisits as f64 > 0.95 * (traj.len() - fpl) as f64);
    }

    #[test]
    fn descriptors_track_place() {
        let spec = quiet(WorldSpec::standard(2));
        let emb = Embedding::new(&spec);
        let p = Pose::planar(1.0, 0.5, 0.3);
        assert_eq!(emb.embed(&p), emb.embed(&p));
        let mut near = 0.0;
        let mut far = 0.0;
        for k in 0..50 {
            let base = Pose::planar(-2.0 + 0.08 * k as f64, 0.5 * (k as f64).sin(), 0.1 * k as f64);
            let d = |dx: f64| (emb.embed(&base) - emb.embed(&(base * Pose::planar(dx, 0.0, 0.0)))).norm();
            near += d(0.2);
            far += d(5.0);
        }
        assert!(far > 2.0 * near, "near {near} far {far}");
    }

    #[test]
    fn aliased_frame_looks_like_the_mirror() {
        let spec = WorldSpec { p_alias: 0.3, sigma_d: 0.0, ..WorldSpec::standard(9) };
        let world = World::generate(&spec).unwrap();
        let i = world.aliased.iter().position(|&a| a).expect("some frame is aliased");
        let nearest = (0..world.len())
            .filter(|&j| !world.aliased[j])
            .min_by(|&a, &b| {
                let da = (&world.descriptors[a] - &world.descriptors[i]).norm();
                let db = (&world.descriptors[b] - &world.descriptors[i]).norm();
                da.total_cmp(&db)
            })
            .unwrap();
        let mirror = mirrored(&world.poses[i]);
        let to_mirror = (world.poses[nearest].translation() - mirror.translation()).norm();
        let to_truth = (world.poses[nearest].translation() - world.poses[i].translation()).norm();
        assert!(to_mirror < to_truth, "mirror {to_mirror} truth {to_truth}");
    }

    #[test]
    fn noise_free_measurement_is_exact() {
        let spec = quiet(WorldSpec::standard(4));
        let world = World::generate(&spec).unwrap();
        let m = world.measure_relative(10, 10 + spec.frames_per_loop as u64).unwrap();
        let rel = relative(&world.poses[10], &world.poses[310]);
        assert!((m.rotation.angle_to(rel.rotation())) < 1e-12);
        assert!((m.direction - rel.translation().normalize()).norm() < 1e-12);
        let q = overlap(&spec, &world.poses[10], &world.poses[310]).unwrap();
        assert_eq!(m.s, (500.0 * q * 0.8).round() as u32);

        let full = world.measure_relative(5, 6).unwrap();
        assert!(full.s <= 400 && full.s > 300);
    }

    #[test]
    fn failure_window_starves_inliers() {
        let spec = WorldSpec::standard(4);
        let world = World::generate(&spec).unwrap();
        let w = spec.failure_windows[0];
        for i in w.start..w.end {
            let m = world.measure_relative(i - 1, i).unwrap();
            assert!(m.s < 25, "frame {i}: s={}", m.s);
        }
    }

    #[test]
    fn pairs_are_symmetric_and_bounded() {
        let world = World::generate(&WorldSpec::standard(8)).unwrap();
        for (i, j) in [(3, 9), (40, 350), (700, 20)] {
            let (Some(a), Some(b)) = (world.measure_relative(i, j), world.measure_relative(j, i)) else {
                continue;
            };
            assert_eq!(b.rotation, a.rotation.inverse());
            assert!((b.inverse().direction - a.direction).norm() < 1e-12);
            assert!(a.s <= a.n);
        }
        assert!(world.measure_relative(0, 150).is_none());
        assert!(world.measure_relative(4, 4).is_none());
    }

    #[test]
    fn spec_text_round_trips() {
        let mut spec = WorldSpec::dense_revisit(99);
        spec.three_d = true;
        let mut text = spec.to_text();
        text.push_str("failure_windows = none\n");
        assert_eq!(WorldSpec::from_text(&text).unwrap(), spec);
        let err = WorldSpec::from_text("sigma_r = -1\n").unwrap_err();
        assert!(err.to_string().contains("sigma_r"));
    }
}
