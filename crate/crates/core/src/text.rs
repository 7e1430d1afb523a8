//! Helpers shared by the line-oriented text formats.

use std::fmt::Write as _;
use std::str::{FromStr, SplitWhitespace};

use nalgebra::{Quaternion, UnitQuaternion};

use crate::error::{Error, Result};

/// Scientific notation with 17 significant digits; round-trips every f64.
pub fn sci17(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn push_fields(out: &mut String, values: &[f64]) {
    for v in values {
        let _ = write!(out, " {}", sci17(*v));
    }
}

/// Iterates `(line_number, trimmed_line)` over non-blank, non-comment lines.
pub fn records(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

pub struct Fields<'a> {
    line: usize,
    inner: SplitWhitespace<'a>,
}

impl<'a> Fields<'a> {
    pub fn new(line: usize, text: &'a str) -> Self {
        Self { line, inner: text.split_whitespace() }
    }

    pub fn next_str(&mut self, what: &str) -> Result<&'a str> {
        self.inner.next().ok_or_else(|| Error::parse(self.line, format!("missing field `{what}`")))
    }

    pub fn next<T: FromStr>(&mut self, what: &str) -> Result<T> {
        let tok = self.next_str(what)?;
        tok.parse::<T>().map_err(|_| Error::parse(self.line, format!("cannot parse `{what}` from {tok:?}")))
    }

    pub fn next_f64(&mut self, what: &str) -> Result<f64> {
        let v: f64 = self.next(what)?;
        if !v.is_finite() {
            return Err(Error::parse(self.line, format!("`{what}` is not finite")));
        }
        Ok(v)
    }

    pub fn next_flag(&mut self, what: &str) -> Result<bool> {
        match self.next_str(what)? {
            "0" => Ok(false),
            "1" => Ok(true),
            other => Err(Error::parse(self.line, format!("`{what}` must be 0 or 1, got {other:?}"))),
        }
    }

    pub fn finish(mut self) -> Result<()> {
        match self.inner.next() {
            None => Ok(()),
            Some(extra) => Err(Error::parse(self.line, format!("unexpected trailing field {extra:?}"))),
        }
    }
}

/// Builds a unit quaternion from printed coefficients. Values already unit
/// to 1e-9 are kept bit for bit; others within 1e-3 are renormalised.
pub fn unit_quaternion(line: usize, w: f64, x: f64, y: f64, z: f64) -> Result<UnitQuaternion<f64>> {
    let q = Quaternion::new(w, x, y, z);
    let norm = q.norm();
    if (norm - 1.0).abs() <= 1e-9 {
        Ok(UnitQuaternion::new_unchecked(q))
    } else if (norm - 1.0).abs() <= 1e-3 {
        Ok(UnitQuaternion::new_normalize(q))
    } else {
        Err(Error::parse(line, format!("quaternion norm {norm} is not 1")))
    }
}

/// Parses flat `key = value` lines; `#` starts a comment line.
pub fn key_values(text: &str) -> Result<Vec<(usize, String, String)>> {
    records(text)
        .map(|(line, rec)| {
            let (k, v) = rec.split_once('=').ok_or_else(|| Error::parse(line, "expected `key = value`"))?;
            let key = k.trim();
            if key.is_empty() {
                return Err(Error::parse(line, "empty key"));
            }
            Ok((line, key.to_string(), v.trim().to_string()))
        })
        .collect()
}

pub fn parse_value<T: FromStr>(field: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::config(field, format!("cannot parse {value:?}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sci17_round_trips() {
        for x in [0.1, -1.0 / 3.0, 1e-300, 6.02214076e23, 0.0, -0.0] {
            let s = sci17(x);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), x.to_bits(), "{s}");
        }
    }

    #[test]
    fn key_value_lines() {
        let kv = key_values("# c\n a = 1\n\nb=x y\n").unwrap();
        assert_eq!(kv, vec![(2, "a".into(), "1".into()), (4, "b".into(), "x y".into())]);
        assert!(matches!(key_values("oops\n"), Err(Error::Parse { line: 1, .. })));
    }
}
