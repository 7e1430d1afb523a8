//! On-disk form of a generated world, so runs can be repeated without the
//! oracle.
//!
//! A dataset directory holds `world.cfg`, `failure_windows.txt`,
//! `groundtruth.tum`, `descriptors.txt` and `measurements.txt`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::ops::Range;
use std::path::Path;

use nalgebra::{DVector, Vector3};

use super::{overlap, FailureWindow, Measurement, MeasurementSource, World, WorldSpec};
use crate::error::{Error, Result};
use crate::eval::{read_tum, write_tum, Stamped};
use crate::frontend::FrameObservation;
use crate::geometry::Pose;
use crate::text::{records, unit_quaternion, Fields};

#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub index: u64,
    pub timestamp: f64,
    pub pose: Pose,
    pub descriptor: DVector<f64>,
}

/// Every measurement the oracle can produce, keyed by `(lo, hi)` frame pair.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MeasurementTable {
    pairs: BTreeMap<(u64, u64), Measurement>,
}

impl MeasurementTable {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn insert(&mut self, lo: u64, hi: u64, m: Measurement) {
        assert!(lo < hi, "pairs are stored with lo < hi");
        self.pairs.insert((lo, hi), m);
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# i j qw qx qy qz dx dy dz s n degenerate\n");
        for ((i, j), m) in &self.pairs {
            let q = m.rotation.quaternion();
            let d = m.direction;
            let _ = writeln!(
                out,
                "{i} {j} {} {} {} {} {} {} {} {} {} {}",
                q.w, q.i, q.j, q.k, d.x, d.y, d.z, m.s, m.n, m.degenerate as u8
            );
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut table = Self::default();
        for (line, rec) in records(text) {
            let mut f = Fields::new(line, rec);
            let i: u64 = f.next("i")?;
            let j: u64 = f.next("j")?;
            let rotation = unit_quaternion(line, f.next_f64("qw")?, f.next_f64("qx")?, f.next_f64("qy")?, f.next_f64("qz")?)?;
            let direction = Vector3::new(f.next_f64("dx")?, f.next_f64("dy")?, f.next_f64("dz")?);
            let s: u32 = f.next("s")?;
            let n: u32 = f.next("n")?;
            let degenerate = f.next_flag("degenerate")?;
            f.finish()?;
            if i >= j {
                return Err(Error::parse(line, "pairs must be listed with i < j"));
            }
            if s > n {
                return Err(Error::parse(line, format!("s={s} exceeds n={n}")));
            }
            if !degenerate && (direction.norm() - 1.0).abs() > 1e-9 {
                return Err(Error::parse(line, "direction is not a unit vector"));
            }
            table.pairs.insert((i, j), Measurement { rotation, direction, s, n, degenerate });
        }
        Ok(table)
    }
}

impl MeasurementSource for MeasurementTable {
    fn measure(&self, from: u64, to: u64) -> Option<Measurement> {
        if from < to {
            self.pairs.get(&(from, to)).copied()
        } else {
            self.pairs.get(&(to, from)).map(Measurement::inverse)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: WorldSpec,
    pub frames: Vec<FrameRecord>,
    pub measurements: MeasurementTable,
}

impl Dataset {
    pub fn from_world(world: &World) -> Self {
        let frames = (0..world.len())
            .map(|i| FrameRecord {
                index: i as u64,
                timestamp: world.timestamps[i],
                pose: world.poses[i],
                descriptor: world.descriptors[i].clone(),
            })
            .collect();
        let mut measurements = MeasurementTable::default();
        let n = world.len() as u64;
        for i in 0..n {
            for j in i + 1..n {
                if let Some(m) = world.measure_relative(i, j) {
                    measurements.insert(i, j, m);
                }
            }
        }
        Self { spec: world.spec.clone(), frames, measurements }
    }

    pub fn generate(spec: &WorldSpec) -> Result<Self> {
        Ok(World::generate(spec)?.to_dataset())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// What the front-end sees of frames `range`: descriptors and timestamps.
    pub fn observations(&self, range: Range<usize>) -> Vec<FrameObservation> {
        self.frames[range]
            .iter()
            .map(|f| FrameObservation { index: f.index, descriptor: f.descriptor.clone(), timestamp: f.timestamp })
            .collect()
    }

    /// Ground-truth label of a frame pair: do the cameras really overlap?
    pub fn truly_covisible(&self, i: u64, j: u64) -> bool {
        overlap(&self.spec, &self.frames[i as usize].pose, &self.frames[j as usize].pose).is_some()
    }

    pub fn groundtruth(&self) -> Vec<Stamped> {
        self.frames.iter().map(|f| Stamped { timestamp: f.timestamp, pose: f.pose }).collect()
    }

    /// Building frames `[0, round(len * fraction))` and the held-out rest.
    pub fn split(&self, fraction: f64) -> Result<(Range<usize>, Range<usize>)> {
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(Error::config("split", "must lie strictly between 0 and 1"));
        }
        let cut = (self.len() as f64 * fraction).round() as usize;
        Ok((0..cut, cut..self.len()))
    }

    pub fn export(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, body: String| {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|e| Error::io(path, e))
        };
        write("world.cfg", self.spec.to_text())?;
        let mut windows = String::from("# start end quality\n");
        for w in &self.spec.failure_windows {
            let _ = writeln!(windows, "{} {} {}", w.start, w.end, w.quality);
        }
        write("failure_windows.txt", windows)?;
        write("groundtruth.tum", write_tum(&self.groundtruth()))?;
        let mut desc = String::from("# index v1 .. vD\n");
        for f in &self.frames {
            let _ = write!(desc, "{}", f.index);
            for v in f.descriptor.iter() {
                let _ = write!(desc, " {v}");
            }
            desc.push('\n');
        }
        write("descriptors.txt", desc)?;
        write("measurements.txt", self.measurements.to_text())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| {
            let path = dir.join(name);
            fs::read_to_string(&path).map_err(|e| Error::io(path, e))
        };
        let mut spec = WorldSpec::parse_fields(&read("world.cfg")?)?;
        spec.failure_windows = parse_windows(&read("failure_windows.txt")?)?;
        spec.validate()?;

        let truth = read_tum(&read("groundtruth.tum")?)?;
        let descriptors = parse_descriptors(&read("descriptors.txt")?, spec.descriptor_dim)?;
        if descriptors.len() != truth.len() {
            return Err(Error::parse(
                descriptors.len().min(truth.len()),
                format!("{} descriptors for {} ground-truth poses", descriptors.len(), truth.len()),
            ));
        }
        let frames = truth
            .into_iter()
            .zip(descriptors)
            .enumerate()
            .map(|(i, (s, d))| FrameRecord { index: i as u64, timestamp: s.timestamp, pose: s.pose, descriptor: d })
            .collect();
        let measurements = MeasurementTable::from_text(&read("measurements.txt")?)?;
        Ok(Self { spec, frames, measurements })
    }
}

impl MeasurementSource for Dataset {
    fn measure(&self, from: u64, to: u64) -> Option<Measurement> {
        self.measurements.measure(from, to)
    }
}

fn parse_windows(text: &str) -> Result<Vec<FailureWindow>> {
    records(text)
        .map(|(line, rec)| {
            let mut f = Fields::new(line, rec);
            let w = FailureWindow { start: f.next("start")?, end: f.next("end")?, quality: f.next_f64("quality")? };
            f.finish()?;
            Ok(w)
        })
        .collect()
}

fn parse_descriptors(text: &str, dim: usize) -> Result<Vec<DVector<f64>>> {
    let mut out = Vec::new();
    for (line, rec) in records(text) {
        let mut f = Fields::new(line, rec);
        let index: usize = f.next("index")?;
        if index != out.len() {
            return Err(Error::parse(line, format!("expected frame {} but found {index}", out.len())));
        }
        let values = (0..dim).map(|_| f.next_f64("descriptor value")).collect::<Result<Vec<_>>>()?;
        f.finish()?;
        out.push(DVector::from_vec(values));
    }
    Ok(out)
}
