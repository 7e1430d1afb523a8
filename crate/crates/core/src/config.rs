//! Thresholds and schedules of the pipeline, read from flat `key = value`
//! text and overridable field by field.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::optimizer::OptimizerSettings;
use crate::text::{key_values, parse_value};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SystemConfig {
    /// Keyframe when the relative rotation exceeds this (rad).
    pub tau_pose: f64,
    /// Keyframe when the descriptor distance to the last keyframe exceeds this.
    pub tau_desc: f64,
    /// Inlier count needed for a tracking edge.
    pub s_strict: u32,
    /// Inlier count needed for a loop-closure edge.
    pub s_lax: u32,
    /// Place-recognition candidates per keyframe while exploring.
    pub k: usize,
    /// Candidates per frame while relocalizing.
    pub k_reloc: usize,
    /// Minimum frame-index distance between a frame and its loop candidates.
    pub gap_min: u64,
    /// New-edge count that triggers a regular optimization.
    pub t_e: usize,
    /// Consecutive dense triggers that finish exploration.
    pub c_max: usize,
    /// Free-time optimization every this many processed frames.
    pub free_time_every: usize,
    /// Information of the switch prior.
    pub switch_prior: f64,
    pub closed_threshold: f64,
    pub regular_iterations: usize,
    pub free_time_iterations: usize,
    /// Open loop edges a relocalized frame needs to count as localized.
    pub reloc_min_edges: usize,
    /// Weight keeping consecutive tracking-edge lengths in proportion to
    /// their frame gaps (0 disables).
    pub pace_weight: f64,
    /// Disables place recognition entirely (ablation).
    pub loops_enabled: bool,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            tau_pose: 0.15,
            tau_desc: 0.4,
            s_strict: 60,
            s_lax: 25,
            k: 3,
            k_reloc: 8,
            gap_min: 30,
            t_e: 40,
            c_max: 3,
            free_time_every: 25,
            switch_prior: 1.0,
            closed_threshold: 0.1,
            regular_iterations: 10,
            free_time_iterations: 50,
            reloc_min_edges: 2,
            pace_weight: 1.0,
            loops_enabled: true,
        }
    }
}

impl SystemConfig {
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (line, key, value) in key_values(text)? {
            cfg.set(&key, &value).map_err(|e| match e {
                Error::Config { field, reason } => Error::Config { field, reason: format!("line {line}: {reason}") },
                other => other,
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies one override; `key=value` as accepted on the command line.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair.split_once('=').ok_or_else(|| Error::config(pair, "expected key=value"))?;
        self.set(k.trim(), v.trim())?;
        self.validate()
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "tau_pose" => self.tau_pose = parse_value(key, value)?,
            "tau_desc" => self.tau_desc = parse_value(key, value)?,
            "s_strict" => self.s_strict = parse_value(key, value)?,
            "s_lax" => self.s_lax = parse_value(key, value)?,
            "k" => self.k = parse_value(key, value)?,
            "k_reloc" => self.k_reloc = parse_value(key, value)?,
            "gap_min" => self.gap_min = parse_value(key, value)?,
            "t_e" => self.t_e = parse_value(key, value)?,
            "c_max" => self.c_max = parse_value(key, value)?,
            "free_time_every" => self.free_time_every = parse_value(key, value)?,
            "switch_prior" => self.switch_prior = parse_value(key, value)?,
            "closed_threshold" => self.closed_threshold = parse_value(key, value)?,
            "regular_iterations" => self.regular_iterations = parse_value(key, value)?,
            "free_time_iterations" => self.free_time_iterations = parse_value(key, value)?,
            "reloc_min_edges" => self.reloc_min_edges = parse_value(key, value)?,
            "pace_weight" => self.pace_weight = parse_value(key, value)?,
            "loops_enabled" => self.loops_enabled = parse_value(key, value)?,
            _ => return Err(Error::config(key, "unknown configuration key")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("tau_pose", self.tau_pose),
            ("tau_desc", self.tau_desc),
            ("switch_prior", self.switch_prior),
        ];
        for (field, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if self.s_lax > self.s_strict {
            return Err(Error::config("s_lax", "must not exceed s_strict"));
        }
        if self.k == 0 {
            return Err(Error::config("k", "must be at least 1"));
        }
        if self.k_reloc == 0 {
            return Err(Error::config("k_reloc", "must be at least 1"));
        }
        if self.t_e == 0 {
            return Err(Error::config("t_e", "must be at least 1"));
        }
        if self.c_max == 0 {
            return Err(Error::config("c_max", "must be at least 1"));
        }
        if self.free_time_every == 0 {
            return Err(Error::config("free_time_every", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.closed_threshold) {
            return Err(Error::config("closed_threshold", "must lie in [0, 1)"));
        }
        if !(self.pace_weight.is_finite() && self.pace_weight >= 0.0) {
            return Err(Error::config("pace_weight", "must be non-negative"));
        }
        if self.reloc_min_edges == 0 {
            return Err(Error::config("reloc_min_edges", "must be at least 1"));
        }
        Ok(())
    }

    /// Inlier-count consistency against the sensor's feature budget.
    pub fn check_budget(&self, n: u32) -> Result<()> {
        if self.s_strict > n {
            return Err(Error::config("s_strict", format!("exceeds the feature budget {n}")));
        }
        Ok(())
    }

    /// Density bound of the end condition: `T_e / (k + 1)`.
    pub fn density_bound(&self) -> f64 {
        self.t_e as f64 / (self.k + 1) as f64
    }

    pub fn regular(&self) -> OptimizerSettings {
        OptimizerSettings { closed_threshold: self.closed_threshold, ..OptimizerSettings::regular() }
            .with_iterations(self.regular_iterations)
            .with_pace_weight(self.pace_weight)
    }

    pub fn free_time(&self) -> OptimizerSettings {
        OptimizerSettings { closed_threshold: self.closed_threshold, ..OptimizerSettings::free_time() }
            .with_iterations(self.free_time_iterations)
            .with_pace_weight(self.pace_weight)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let value = serde_json::to_value(self).expect("config serializes");
        for (k, v) in value.as_object().expect("struct") {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}
