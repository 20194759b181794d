use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::types::MetricsReport;

fn mean_defined(values: &[Option<f64>]) -> f64 {
    let (sum, count) = values
        .iter()
        .flatten()
        .fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Per-class IoU and accuracy, their means, and overall accuracy.
///
/// IoU is `TP / (TP + FP + FN)`, undefined for classes absent from both
/// predictions and truth. Accuracy is `TP / (TP + FN)`, undefined for
/// classes absent from truth. Means skip undefined entries.
pub fn compute_metrics(pred: &[u32], truth: &[u32], classes: usize) -> Result<MetricsReport> {
    if pred.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: pred.len(),
            right: truth.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let mut tp = vec![0u64; classes];
    let mut fp = vec![0u64; classes];
    let mut fneg = vec![0u64; classes];
    for (i, (&p, &t)) in pred.iter().zip(truth).enumerate() {
        for label in [p, t] {
            if label as usize >= classes {
                return Err(Error::LabelOutOfRange {
                    index: i,
                    label: label as usize,
                    classes,
                });
            }
        }
        if p == t {
            tp[p as usize] += 1;
        } else {
            fp[p as usize] += 1;
            fneg[t as usize] += 1;
        }
    }
    let per_class_iou: Vec<Option<f64>> = (0..classes)
        .map(|c| {
            let denom = tp[c] + fp[c] + fneg[c];
            (denom > 0).then(|| tp[c] as f64 / denom as f64)
        })
        .collect();
    let per_class_acc: Vec<Option<f64>> = (0..classes)
        .map(|c| {
            let denom = tp[c] + fneg[c];
            (denom > 0).then(|| tp[c] as f64 / denom as f64)
        })
        .collect();
    let correct: u64 = tp.iter().sum();
    Ok(MetricsReport {
        miou: mean_defined(&per_class_iou),
        macc: mean_defined(&per_class_acc),
        oa: correct as f64 / pred.len() as f64,
        per_class_iou,
        per_class_acc,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".to_string(), |v| v.to_string())
}

/// CSV with header `class,iou,acc`, one row per class, then footer rows
/// `miou`, `macc`, `oa` (value in the iou column for miou, in the acc column
/// for macc and oa).
pub fn report_csv(report: &MetricsReport) -> String {
    let mut out = String::from("class,iou,acc\n");
    for c in 0..report.classes() {
        let _ = writeln!(
            out,
            "{c},{},{}",
            cell(report.per_class_iou[c]),
            cell(report.per_class_acc[c])
        );
    }
    let _ = writeln!(out, "miou,{},", report.miou);
    let _ = writeln!(out, "macc,,{}", report.macc);
    let _ = writeln!(out, "oa,,{}", report.oa);
    out
}

pub fn report_text(report: &MetricsReport) -> String {
    let pct = |v: Option<f64>| v.map_or_else(|| "   -  ".to_string(), |v| format!("{:6.2}", 100.0 * v));
    let mut out = format!(
        "mIoU {:6.2}  mAcc {:6.2}  OA {:6.2}\nclass    IoU    Acc\n",
        100.0 * report.miou,
        100.0 * report.macc,
        100.0 * report.oa
    );
    for c in 0..report.classes() {
        let _ = writeln!(
            out,
            "{c:>5} {} {}",
            pct(report.per_class_iou[c]),
            pct(report.per_class_acc[c])
        );
    }
    out
}
