//! Reconstruction and codebook-utilization metrics: MSE, PSNR, perplexity,
//! Lorenz curves, and the Gini coefficient.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Image;
use crate::num::Scalar;

/// Per-code assignment counts over an evaluation set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UsageStats {
    counts: Vec<u64>,
}

impl UsageStats {
    pub fn new(counts: Vec<u64>) -> Self {
        Self { counts }
    }

    pub fn from_indices(indices: &[usize], num_codes: usize) -> Result<Self> {
        let mut counts = vec![0u64; num_codes];
        for &idx in indices {
            if idx >= num_codes {
                return Err(Error::Contract(format!("code index {idx} out of range")));
            }
            counts[idx] += 1;
        }
        Ok(Self { counts })
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn num_codes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Codes that never appear in the evaluation set.
    pub fn unused(&self) -> u64 {
        self.counts.iter().filter(|&&c| c == 0).count() as u64
    }

    pub fn merge(&mut self, other: &UsageStats) -> Result<()> {
        if other.counts.len() != self.counts.len() {
            return Err(Error::Contract("merging stats with different K".into()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }
}

/// Exponential of the Shannon entropy of the empirical code-assignment
/// distribution: the effective number of active codes.
pub fn perplexity(stats: &UsageStats) -> Result<f64> {
    let total = stats.total();
    if total == 0 {
        return Err(Error::InvalidInput("perplexity of an empty assignment set".into()));
    }
    let total = total as f64;
    let entropy: f64 = stats
        .counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.ln()
        })
        .sum();
    Ok(entropy.exp())
}

/// Perplexity divided by the codebook size, in `(0, 1]`.
pub fn normalized_perplexity(stats: &UsageStats) -> Result<f64> {
    Ok(perplexity(stats)? / stats.num_codes() as f64)
}

/// Cumulative assignment share against cumulative code fraction, codes
/// sorted by ascending frequency. `K + 1` points from (0,0) to (1,1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LorenzCurve {
    pub points: Vec<(f64, f64)>,
}

pub fn lorenz(stats: &UsageStats) -> Result<LorenzCurve> {
    let total = stats.total();
    if total == 0 {
        return Err(Error::InvalidInput("Lorenz curve of an empty assignment set".into()));
    }
    let mut sorted = stats.counts.clone();
    sorted.sort_unstable();
    let k = sorted.len() as f64;
    let total = total as f64;
    let mut points = Vec::with_capacity(sorted.len() + 1);
    points.push((0.0, 0.0));
    let mut cum = 0u64;
    for (i, c) in sorted.iter().enumerate() {
        cum += c;
        points.push(((i + 1) as f64 / k, cum as f64 / total));
    }
    if let Some(last) = points.last_mut() {
        *last = (1.0, 1.0);
    }
    Ok(LorenzCurve { points })
}

/// `1 - 2 * area` under the Lorenz curve (trapezoid rule): 0 for uniform
/// usage, approaching 1 as usage concentrates on a single code.
pub fn gini(stats: &UsageStats) -> Result<f64> {
    let curve = lorenz(stats)?;
    let mut area = 0.0;
    for pair in curve.points.windows(2) {
        let (x0, y0) = pair[0];
        let (x1, y1) = pair[1];
        area += (y0 + y1) * 0.5 * (x1 - x0);
    }
    Ok(1.0 - 2.0 * area)
}

/// Mean squared pixel error.
pub fn mse<T: Scalar>(a: &Image<T>, b: &Image<T>) -> Result<T> {
    if a.height() != b.height() || a.width() != b.width() || a.channels() != b.channels() {
        return Err(Error::Contract(format!(
            "image shapes differ: {}x{}x{} vs {}x{}x{}",
            a.height(),
            a.width(),
            a.channels(),
            b.height(),
            b.width(),
            b.channels()
        )));
    }
    Ok(crate::codebook::mean_sq_diff(a.pixels(), b.pixels()))
}

/// Peak signal-to-noise ratio in dB over `[0, 1]` pixels (peak 1.0).
/// Identical images are reported as the distinguished `Exact` marker.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Psnr {
    Exact,
    Decibels(f64),
}

impl Psnr {
    pub fn from_mse(mse: f64) -> Psnr {
        if mse == 0.0 {
            Psnr::Exact
        } else {
            Psnr::Decibels(10.0 * (1.0 / mse).log10())
        }
    }

    pub fn as_db(&self) -> Option<f64> {
        match self {
            Psnr::Exact => None,
            Psnr::Decibels(db) => Some(*db),
        }
    }
}

impl std::fmt::Display for Psnr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Psnr::Exact => write!(f, "exact"),
            Psnr::Decibels(db) => write!(f, "{db}"),
        }
    }
}

impl Serialize for Psnr {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Psnr::Exact => s.serialize_str("exact"),
            Psnr::Decibels(db) => s.serialize_f64(*db),
        }
    }
}

impl<'de> Deserialize<'de> for Psnr {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let v = serde_json::Value::deserialize(d)?;
        match v {
            serde_json::Value::String(s) if s == "exact" => Ok(Psnr::Exact),
            serde_json::Value::Number(n) => n
                .as_f64()
                .map(Psnr::Decibels)
                .ok_or_else(|| D::Error::custom("psnr number out of range")),
            other => Err(D::Error::custom(format!("bad psnr value {other}"))),
        }
    }
}

pub fn psnr<T: Scalar>(a: &Image<T>, b: &Image<T>) -> Result<Psnr> {
    Ok(Psnr::from_mse(mse(a, b)?.to_report()))
}

/// One evaluation row of the fixed metrics schema, serialized both to CSV
/// and into JSON reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub run_id: String,
    pub step: u64,
    pub mse: f64,
    pub psnr: Psnr,
    pub perplexity: f64,
    pub normalized_perplexity: f64,
    pub gini: f64,
    pub dead_code_count: u64,
}

impl MetricsRow {
    pub const CSV_HEADER: &'static str =
        "run_id,step,mse,psnr,perplexity,normalized_perplexity,gini,dead_code_count";

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.run_id,
            self.step,
            self.mse,
            self.psnr,
            self.perplexity,
            self.normalized_perplexity,
            self.gini,
            self.dead_code_count
        )
    }

    pub fn parse_csv_row(line: &str) -> Result<Self> {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(Error::Parse {
                offset: 0,
                message: format!("metrics row has {} fields, expected 8", fields.len()),
            });
        }
        let num = |s: &str, what: &str| -> Result<f64> {
            s.parse::<f64>().map_err(|e| Error::Parse {
                offset: 0,
                message: format!("bad {what} {s:?}: {e}"),
            })
        };
        let psnr = if fields[3] == "exact" {
            Psnr::Exact
        } else {
            Psnr::Decibels(num(fields[3], "psnr")?)
        };
        Ok(Self {
            run_id: fields[0].to_string(),
            step: fields[1].parse().map_err(|e| Error::Parse {
                offset: 0,
                message: format!("bad step {:?}: {e}", fields[1]),
            })?,
            mse: num(fields[2], "mse")?,
            psnr,
            perplexity: num(fields[4], "perplexity")?,
            normalized_perplexity: num(fields[5], "normalized_perplexity")?,
            gini: num(fields[6], "gini")?,
            dead_code_count: fields[7].parse().map_err(|e| Error::Parse {
                offset: 0,
                message: format!("bad dead_code_count {:?}: {e}", fields[7]),
            })?,
        })
    }
}
