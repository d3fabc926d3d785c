//! Per-size-bucket positive-sample statistics and deterministic writers.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::assign::{Assignment, AssignerKind};
use crate::error::{Error, Result};
use crate::geometry;
use crate::scene::Scene;
use crate::synth::{size_bucket, SizeBucket};

/// Integer accumulator for positives-per-GT, so merging is exact and
/// independent of scene order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CountStats {
    pub gt_count: u64,
    pub sum: u64,
    pub sum_sq: u128,
}

impl CountStats {
    pub fn push(&mut self, positives: u64) {
        self.gt_count += 1;
        self.sum += positives;
        self.sum_sq += u128::from(positives) * u128::from(positives);
    }

    pub fn merge(&mut self, other: &CountStats) {
        self.gt_count += other.gt_count;
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
    }

    pub fn mean(&self) -> f64 {
        if self.gt_count == 0 {
            0.0
        } else {
            self.sum as f64 / self.gt_count as f64
        }
    }

    /// Population standard deviation.
    pub fn std(&self) -> f64 {
        if self.gt_count == 0 {
            return 0.0;
        }
        let n = u128::from(self.gt_count);
        let s = u128::from(self.sum);
        let num = n * self.sum_sq - s * s;
        ((num as f64) / ((n * n) as f64)).sqrt()
    }
}

/// Accumulated statistics for a set of assigners over many scenes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BucketTally {
    cells: BTreeMap<(AssignerKind, SizeBucket), CountStats>,
}

impl BucketTally {
    pub fn add_assignment(&mut self, kind: AssignerKind, scene: &Scene, a: &Assignment) {
        for (g, gt) in scene.gt_boxes().iter().enumerate() {
            let bucket = size_bucket(geometry::area(gt));
            let n = a.per_gt_positives.get(g).map_or(0, Vec::len) as u64;
            self.cells.entry((kind, bucket)).or_default().push(n);
        }
    }

    pub fn merge(&mut self, other: &BucketTally) {
        for (k, v) in &other.cells {
            self.cells.entry(*k).or_default().merge(v);
        }
    }

    pub fn cell(&self, kind: AssignerKind, bucket: SizeBucket) -> CountStats {
        self.cells.get(&(kind, bucket)).copied().unwrap_or_default()
    }

    /// Report rows for `kinds` in the given order, buckets always in
    /// eS, rS, gS, Normal order.
    pub fn report(&self, kinds: &[AssignerKind]) -> BucketReport {
        let mut rows = Vec::new();
        let mut cov = Vec::new();
        for &kind in kinds {
            let mut means = Vec::new();
            for bucket in SizeBucket::ALL {
                let c = self.cell(kind, bucket);
                rows.push(BucketRow {
                    assigner: kind,
                    bucket,
                    gt_count: c.gt_count,
                    mean_positives: c.mean(),
                    std_positives: c.std(),
                });
                if c.gt_count > 0 {
                    means.push(c.mean());
                }
            }
            cov.push(AssignerCov {
                assigner: kind,
                cov: coefficient_of_variation(&means),
            });
        }
        BucketReport { rows, cov }
    }
}

/// Population standard deviation over mean; 0 for fewer than two values or a
/// zero mean.
pub fn coefficient_of_variation(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if mean == 0.0 {
        return 0.0;
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    var.sqrt() / mean
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BucketRow {
    pub assigner: AssignerKind,
    pub bucket: SizeBucket,
    pub gt_count: u64,
    pub mean_positives: f64,
    pub std_positives: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssignerCov {
    pub assigner: AssignerKind,
    /// Coefficient of variation of mean positives across populated buckets.
    pub cov: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct BucketReport {
    pub rows: Vec<BucketRow>,
    pub cov: Vec<AssignerCov>,
}

impl BucketReport {
    pub fn row(&self, kind: AssignerKind, bucket: SizeBucket) -> Option<&BucketRow> {
        self.rows.iter().find(|r| r.assigner == kind && r.bucket == bucket)
    }

    pub fn cov_of(&self, kind: AssignerKind) -> Option<f64> {
        self.cov.iter().find(|c| c.assigner == kind).map(|c| c.cov)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(Error::InvalidConfig(format!("unknown format `{other}`, expected json or csv"))),
        }
    }
}

/// Formats `v` with 6 significant digits in the style of C's `%g`.
pub fn fmt_g6(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let sci = format!("{v:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    let trim = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if (-4..6).contains(&exp) {
        let decimals = (5 - exp) as usize;
        trim(&format!("{v:.decimals$}"))
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim(mantissa), exp.abs())
    }
}

/// Rounds to 6 significant digits, so JSON output carries the same precision
/// as CSV output.
pub fn round6(v: f64) -> f64 {
    if v == 0.0 || !v.is_finite() {
        return v;
    }
    format!("{v:.5e}").parse().expect("round trip")
}

pub const CSV_HEADER: &str = "assigner,bucket,gt_count,mean_positives,std_positives";

pub fn render_csv(report: &BucketReport) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in &report.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.assigner,
            r.bucket,
            r.gt_count,
            fmt_g6(r.mean_positives),
            fmt_g6(r.std_positives)
        );
    }
    out
}

pub fn render_cov_csv(report: &BucketReport) -> String {
    let mut out = String::from("assigner,cov\n");
    for c in &report.cov {
        let _ = writeln!(out, "{},{}", c.assigner, fmt_g6(c.cov));
    }
    out
}

pub fn render_json(report: &BucketReport) -> String {
    let rounded = BucketReport {
        rows: report
            .rows
            .iter()
            .map(|r| BucketRow {
                mean_positives: round6(r.mean_positives),
                std_positives: round6(r.std_positives),
                ..r.clone()
            })
            .collect(),
        cov: report
            .cov
            .iter()
            .map(|c| AssignerCov {
                cov: round6(c.cov),
                ..c.clone()
            })
            .collect(),
    };
    let mut s = serde_json::to_string_pretty(&rounded).expect("serializable report");
    s.push('\n');
    s
}

pub fn write_report(report: &BucketReport, path: &Path, format: ReportFormat) -> Result<()> {
    let body = match format {
        ReportFormat::Json => render_json(report),
        ReportFormat::Csv => render_csv(report),
    };
    fs::write(path, body).map_err(|e| Error::io(path, e))
}
