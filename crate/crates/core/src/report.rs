//! Machine-readable report envelope, multiplier records and CSV rows.

use crate::error::{Error, Result};
use crate::horizon::{Branch, MultiplierSet};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use std::io::Write;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Pass,
    Fail,
}

impl Verdict {
    pub fn from_pass(pass: bool) -> Self {
        if pass {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Envelope<B: Serialize> {
    pub schema_version: u32,
    pub command: String,
    pub instance: String,
    pub verdict: Verdict,
    pub seed: u64,
    pub body: B,
}

impl<B: Serialize> Envelope<B> {
    pub fn new(command: &str, instance: &str, verdict: Verdict, seed: u64, body: B) -> Self {
        Envelope {
            schema_version: SCHEMA_VERSION,
            command: command.into(),
            instance: instance.into(),
            verdict,
            seed,
            body,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

/// Plain-vector form of a multiplier set; also the input format of `verify`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiplierRecord {
    pub lambda0: f64,
    /// `p_1, p_2, …`.
    pub p: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub branch: Option<Branch>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q1: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q2: Option<Vec<f64>>,
}

impl MultiplierRecord {
    pub fn costates(&self) -> Vec<DVector<f64>> {
        self.p.iter().map(|v| DVector::from_column_slice(v)).collect()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let rec: MultiplierRecord = serde_json::from_str(text)?;
        if rec.p.is_empty() {
            return Err(Error::InvalidArgument("multiplier file has no costates".into()));
        }
        Ok(rec)
    }
}

impl From<&MultiplierSet> for MultiplierRecord {
    fn from(ms: &MultiplierSet) -> Self {
        let v = |x: &DVector<f64>| x.iter().cloned().collect::<Vec<f64>>();
        MultiplierRecord {
            lambda0: ms.lambda0,
            p: ms.p.iter().map(v).collect(),
            h: Some(ms.h),
            branch: Some(ms.branch),
            q1: Some(v(&ms.q1)),
            q2: Some(v(&ms.q2)),
        }
    }
}

/// One CSV line: stage `t` of the multipliers computed at horizon `h`.
/// Cells that do not exist at a stage are left empty.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CsvRow {
    pub h: usize,
    pub t: usize,
    pub lambda0: f64,
    /// `‖p_t‖`, for `t ≥ 1`.
    pub p_norm: Option<f64>,
    /// `‖p_t − A_tᵀp_{t+1} − λ0 c_t‖`, for `t ≥ 1`.
    pub adjoint_residual: Option<f64>,
    pub vi_violation: Option<f64>,
    /// `‖p_t^h − p_t^{h−1}‖` against the previous horizon of a sweep.
    pub p_diff: Option<f64>,
}

/// Rows `t = 0..=h` for one multiplier set; `adjoint[t−1]` and `vi[t]` as produced by the library.
pub fn csv_rows(ms: &MultiplierSet, adjoint: &[f64], vi: &[f64], previous: Option<&MultiplierSet>) -> Vec<CsvRow> {
    (0..=ms.h)
        .map(|t| CsvRow {
            h: ms.h,
            t,
            lambda0: ms.lambda0,
            p_norm: (t >= 1).then(|| ms.p_at(t).norm()),
            adjoint_residual: if t >= 1 { adjoint.get(t - 1).copied() } else { None },
            vi_violation: vi.get(t).copied(),
            p_diff: previous.filter(|prev| t >= 1 && t <= prev.h + 1).map(|prev| (ms.p_at(t) - prev.p_at(t)).norm()),
        })
        .collect()
}

/// Rows are sorted by `(h, t)` before writing.
pub fn write_csv<W: Write>(mut rows: Vec<CsvRow>, out: W) -> Result<()> {
    rows.sort_by_key(|r| (r.h, r.t));
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::horizon::Normalization;

    fn set(h: usize, scale: f64) -> MultiplierSet {
        MultiplierSet {
            h,
            lambda0: 1.0,
            p: (0..=h).map(|i| DVector::from_element(1, scale * (i + 1) as f64)).collect(),
            q1: DVector::from_element(1, 0.0),
            q2: DVector::from_element(1, 0.0),
            branch: Branch::Normal,
            normalization: Normalization::Raw,
        }
    }

    #[test]
    fn csv_layout() {
        let prev = set(2, 1.0);
        let cur = set(3, 1.5);
        let rows = csv_rows(&cur, &[0.1, 0.2, 0.3], &[0.0, 0.0, 0.0, 0.0], Some(&prev));
        let mut buf = Vec::new();
        write_csv(rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "h,t,lambda0,p_norm,adjoint_residual,vi_violation,p_diff");
        assert_eq!(lines[1], "3,0,1.0,,,0.0,");
        assert_eq!(lines[2], "3,1,1.0,1.5,0.1,0.0,0.5");
        assert_eq!(lines.len(), 5);
    }

    #[test]
    fn record_round_trip() {
        let rec = MultiplierRecord::from(&set(2, 1.0));
        let text = serde_json::to_string(&rec).unwrap();
        assert_eq!(MultiplierRecord::from_json(&text).unwrap(), rec);
        assert!(MultiplierRecord::from_json(r#"{"lambda0": 0, "p": []}"#).is_err());
    }
}
