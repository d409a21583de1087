//! Pixel-level segmentation metrics, lesion-size stratification, and report
//! emission.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::BinaryMask;

/// Confusion counts over an evaluation region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Count tp/fp/tn/fn over pixels where `region` is set.
pub fn confusion(pred: &BinaryMask, truth: &BinaryMask, region: &BinaryMask) -> Result<Confusion> {
    if !pred.same_size(truth) || !pred.same_size(region) {
        return Err(Error::Shape("confusion inputs must share dimensions".into()));
    }
    if region.is_empty() {
        return Err(Error::EmptyRegion("confusion needs a non-empty region".into()));
    }
    let mut c = Confusion {
        tp: 0,
        fp: 0,
        tn: 0,
        fn_: 0,
    };
    for ((&p, &t), &r) in pred.data().iter().zip(truth.data()).zip(region.data()) {
        if !r {
            continue;
        }
        match (p, t) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// Per-slice metrics derived from confusion counts.
///
/// Degenerate conventions: empty truth and empty prediction scores 1.0 on
/// dice/iou/sensitivity; empty truth with a non-empty prediction scores 0.0.
/// Specificity is 1.0 when the region holds no negatives.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub slice_id: String,
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
    pub dice: f64,
    pub iou: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub accuracy: f64,
}

impl MetricsRecord {
    pub fn from_confusion(slice_id: impl Into<String>, c: Confusion) -> Self {
        let (tp, fp, tn, fn_) = (c.tp as f64, c.fp as f64, c.tn as f64, c.fn_ as f64);
        let truth_empty = c.tp + c.fn_ == 0;
        let pred_empty = c.tp + c.fp == 0;
        let (dice, iou, sensitivity) = if truth_empty {
            if pred_empty {
                (1.0, 1.0, 1.0)
            } else {
                (0.0, 0.0, 0.0)
            }
        } else {
            (
                2.0 * tp / (2.0 * tp + fp + fn_),
                tp / (tp + fp + fn_),
                tp / (tp + fn_),
            )
        };
        let specificity = if c.tn + c.fp == 0 { 1.0 } else { tn / (tn + fp) };
        let accuracy = (tp + tn) / (tp + fp + tn + fn_);
        Self {
            slice_id: slice_id.into(),
            tp: c.tp,
            fp: c.fp,
            tn: c.tn,
            fn_: c.fn_,
            dice,
            iou,
            sensitivity,
            specificity,
            accuracy,
        }
    }

    /// Truth pixel count inside the evaluation region.
    pub fn truth_area(&self) -> u64 {
        self.tp + self.fn_
    }

    /// Evaluation-region pixel count.
    pub fn region_area(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// Lesion area as a fraction of the evaluation region.
    pub fn relative_truth_area(&self) -> f64 {
        self.truth_area() as f64 / self.region_area() as f64
    }
}

/// Macro-averaged summary over a set of slices.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub n: usize,
    pub mean_dice: f64,
    pub mean_iou: f64,
    pub mean_sensitivity: f64,
    pub mean_specificity: f64,
    pub mean_accuracy: f64,
}

pub fn summarize(records: &[MetricsRecord]) -> MetricsSummary {
    let n = records.len().max(1) as f64;
    let mean = |f: fn(&MetricsRecord) -> f64| records.iter().map(f).sum::<f64>() / n;
    MetricsSummary {
        n: records.len(),
        mean_dice: mean(|r| r.dice),
        mean_iou: mean(|r| r.iou),
        mean_sensitivity: mean(|r| r.sensitivity),
        mean_specificity: mean(|r| r.specificity),
        mean_accuracy: mean(|r| r.accuracy),
    }
}

/// One quantile group of the size-stratified report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SizeGroupReport {
    /// 1-based group index, smallest lesions first.
    pub group: usize,
    /// Relative lesion area range (lesion px / region px) covered by the group.
    pub area_min: f64,
    pub area_max: f64,
    pub mean_dice: f64,
    pub mean_iou: f64,
    pub count: usize,
}

/// Partition records into `n_groups` by relative lesion area and average
/// each group.
///
/// Records are ordered by (relative area, slice id) and split as evenly as
/// possible; the slice-id tie-break keeps the partition deterministic when
/// areas repeat.
pub fn stratify_by_size(records: &[MetricsRecord], n_groups: usize) -> Result<Vec<SizeGroupReport>> {
    if n_groups == 0 {
        return Err(Error::Invalid("need at least one group".into()));
    }
    if records.len() < n_groups {
        return Err(Error::Invalid(format!(
            "cannot split {} records into {} groups",
            records.len(),
            n_groups
        )));
    }
    if let Some(r) = records.iter().find(|r| r.truth_area() == 0) {
        return Err(Error::Invalid(format!(
            "record {} has no truth pixels; stratification needs positive lesion areas",
            r.slice_id
        )));
    }
    let mut order: Vec<&MetricsRecord> = records.iter().collect();
    order.sort_by(|a, b| {
        a.relative_truth_area()
            .partial_cmp(&b.relative_truth_area())
            .unwrap()
            .then_with(|| a.slice_id.cmp(&b.slice_id))
    });
    let n = order.len();
    let mut out = Vec::with_capacity(n_groups);
    for g in 0..n_groups {
        let start = g * n / n_groups;
        let end = (g + 1) * n / n_groups;
        let chunk = &order[start..end];
        let count = chunk.len() as f64;
        out.push(SizeGroupReport {
            group: g + 1,
            area_min: chunk.first().map(|r| r.relative_truth_area()).unwrap_or(0.0),
            area_max: chunk.last().map(|r| r.relative_truth_area()).unwrap_or(0.0),
            mean_dice: chunk.iter().map(|r| r.dice).sum::<f64>() / count,
            mean_iou: chunk.iter().map(|r| r.iou).sum::<f64>() / count,
            count: chunk.len(),
        });
    }
    Ok(out)
}

/// One resolution row of the sweep report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub resolution: usize,
    pub summary: MetricsSummary,
}

/// Full evaluation report: per-slice records for each resolution, summary
/// rows, and the size-group tables.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<SweepRow>,
    pub records: Vec<(usize, Vec<MetricsRecord>)>,
    pub size_groups: Vec<(usize, Vec<SizeGroupReport>)>,
}

fn fmt6(v: f64) -> String {
    format!("{v:.6}")
}

impl EvalReport {
    /// Per-slice CSV: `resolution,slice_id,tp,fp,tn,fn,dice,iou,sensitivity,specificity,accuracy`.
    pub fn per_slice_csv(&self) -> String {
        let mut s = String::from(
            "resolution,slice_id,tp,fp,tn,fn,dice,iou,sensitivity,specificity,accuracy\n",
        );
        for (res, records) in &self.records {
            for r in records {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},{},{},{},{},{}",
                    res,
                    r.slice_id,
                    r.tp,
                    r.fp,
                    r.tn,
                    r.fn_,
                    fmt6(r.dice),
                    fmt6(r.iou),
                    fmt6(r.sensitivity),
                    fmt6(r.specificity),
                    fmt6(r.accuracy)
                );
            }
        }
        s
    }

    /// Summary CSV: one row per resolution.
    pub fn summary_csv(&self) -> String {
        let mut s = String::from("resolution,n,dice,iou,sensitivity,specificity,accuracy\n");
        for row in &self.rows {
            let m = &row.summary;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                row.resolution,
                m.n,
                fmt6(m.mean_dice),
                fmt6(m.mean_iou),
                fmt6(m.mean_sensitivity),
                fmt6(m.mean_specificity),
                fmt6(m.mean_accuracy)
            );
        }
        s
    }

    /// Human-readable tables for the terminal or a markdown file.
    pub fn render_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "resolution sweep (macro-averaged over slices)");
        let _ = writeln!(
            s,
            "{:>10} {:>5} {:>8} {:>8} {:>12} {:>12} {:>9}",
            "size", "n", "dice", "iou", "sensitivity", "specificity", "accuracy"
        );
        for row in &self.rows {
            let m = &row.summary;
            let _ = writeln!(
                s,
                "{:>10} {:>5} {:>8.4} {:>8.4} {:>12.4} {:>12.4} {:>9.4}",
                format!("{0}x{0}", row.resolution),
                m.n,
                m.mean_dice,
                m.mean_iou,
                m.mean_sensitivity,
                m.mean_specificity,
                m.mean_accuracy
            );
        }
        for (res, groups) in &self.size_groups {
            let _ = writeln!(s, "\nlesion-size groups at {res}x{res} (relative area quantiles)");
            let _ = writeln!(
                s,
                "{:>6} {:>6} {:>20} {:>8} {:>8}",
                "group", "n", "rel. area range", "dice", "iou"
            );
            for g in groups {
                let _ = writeln!(
                    s,
                    "{:>6} {:>6} {:>20} {:>8.4} {:>8.4}",
                    g.group,
                    g.count,
                    format!("{:.4}..{:.4}", g.area_min, g.area_max),
                    g.mean_dice,
                    g.mean_iou
                );
            }
        }
        s
    }
}
