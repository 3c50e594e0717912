//! Remote-sensing accuracy assessment: confusion matrices, producer's and
//! user's accuracy, per-class IoU, and grouped evaluation reports.

use thiserror::Error;

use crate::raster::{LabelMask, CLASS_IGNORE};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid value: {0}")]
    Value(String),
    #[error("parse error: {0}")]
    Parse(String),
}

/// K x K matrix of pixel counts; `counts[t][p]` is the number of pixels with
/// ground truth `t` predicted as `p`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self {
            counts: vec![vec![0; num_classes]; num_classes],
        }
    }

    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self, MetricsError> {
        let k = counts.len();
        if k == 0 || counts.iter().any(|row| row.len() != k) {
            return Err(MetricsError::Dimension(
                "confusion matrix must be square and non-empty".into(),
            ));
        }
        Ok(Self { counts })
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn count(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth][predicted]
    }

    pub fn record(&mut self, truth: usize, predicted: usize) {
        self.counts[truth][predicted] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Accumulates another matrix of the same shape into this one.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<(), MetricsError> {
        if other.num_classes() != self.num_classes() {
            return Err(MetricsError::Dimension(format!(
                "cannot merge {}-class matrix into {}-class matrix",
                other.num_classes(),
                self.num_classes()
            )));
        }
        for (dst, src) in self.counts.iter_mut().zip(&other.counts) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
        Ok(())
    }
}

/// Tallies a prediction against ground truth over the two-class label
/// vocabulary. Ground-truth ignore pixels are skipped; a predicted ignore
/// code is an error (models must commit to a class everywhere).
pub fn confusion_matrix(
    pred: &LabelMask,
    gt: &LabelMask,
) -> Result<ConfusionMatrix, MetricsError> {
    if pred.width != gt.width || pred.height != gt.height {
        return Err(MetricsError::Dimension(format!(
            "prediction {}x{} vs ground truth {}x{}",
            pred.width, pred.height, gt.width, gt.height
        )));
    }
    let mut cm = ConfusionMatrix::new(2);
    for (&p, &g) in pred.data.iter().zip(&gt.data) {
        if g == CLASS_IGNORE {
            continue;
        }
        if p == CLASS_IGNORE {
            return Err(MetricsError::Value(
                "prediction contains ignore code 255".into(),
            ));
        }
        cm.record(g as usize, p as usize);
    }
    Ok(cm)
}

/// Per-class accuracy figures. A value is `None` when its denominator is
/// zero (the class never occurs in truth and/or prediction), never NaN.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassMetrics {
    /// Recall: diag / row sum (fraction of true pixels recovered).
    pub producers_acc: Option<f64>,
    /// Precision: diag / column sum (fraction of predicted pixels correct).
    pub users_acc: Option<f64>,
    /// Intersection over union: diag / (row + col - diag).
    pub class_iou: Option<f64>,
}

pub fn accuracy_metrics(cm: &ConfusionMatrix) -> Vec<ClassMetrics> {
    let k = cm.num_classes();
    (0..k)
        .map(|c| {
            let diag = cm.count(c, c);
            let row: u64 = (0..k).map(|p| cm.count(c, p)).sum();
            let col: u64 = (0..k).map(|t| cm.count(t, c)).sum();
            let union = row + col - diag;
            let ratio = |num: u64, den: u64| {
                if den == 0 {
                    None
                } else {
                    Some(num as f64 / den as f64)
                }
            };
            ClassMetrics {
                producers_acc: ratio(diag, row),
                users_acc: ratio(diag, col),
                class_iou: ratio(diag, union),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    ProducersAcc,
    UsersAcc,
    ClassIou,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::ProducersAcc, Metric::UsersAcc, Metric::ClassIou];

    pub fn name(&self) -> &'static str {
        match self {
            Metric::ProducersAcc => "producers_acc",
            Metric::UsersAcc => "users_acc",
            Metric::ClassIou => "class_iou",
        }
    }

    pub fn from_name(name: &str) -> Option<Metric> {
        Metric::ALL.iter().copied().find(|m| m.name() == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub group: String,
    pub metric: Metric,
    pub class: u8,
    pub value: Option<f64>,
}

/// Grouped evaluation results. Within each group the samples' confusion
/// matrices are summed before metrics are derived (micro-averaging), so large
/// scenes weigh proportionally to their pixel count. Rows are ordered
/// metric-major — all producer's accuracy rows first, then user's accuracy,
/// then IoU — with groups in first-appearance order inside each block.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
    pub group_matrices: Vec<(String, ConfusionMatrix)>,
}

impl EvalReport {
    pub fn value(&self, group: &str, metric: Metric, class: u8) -> Option<Option<f64>> {
        self.rows
            .iter()
            .find(|r| r.group == group && r.metric == metric && r.class == class)
            .map(|r| r.value)
    }
}

/// Builds a grouped report from `(prediction, ground truth, group label)`
/// samples, e.g. grouping scenes by acquisition altitude.
pub fn evaluation_report(
    samples: &[(&LabelMask, &LabelMask, &str)],
) -> Result<EvalReport, MetricsError> {
    let mut groups: Vec<(String, ConfusionMatrix)> = Vec::new();
    for (pred, gt, label) in samples {
        let cm = confusion_matrix(pred, gt)?;
        match groups.iter_mut().find(|(name, _)| name == label) {
            Some((_, acc)) => acc.merge(&cm)?,
            None => groups.push((label.to_string(), cm)),
        }
    }
    let mut rows = Vec::new();
    for metric in Metric::ALL {
        for (label, cm) in &groups {
            for (class, m) in accuracy_metrics(cm).iter().enumerate() {
                let value = match metric {
                    Metric::ProducersAcc => m.producers_acc,
                    Metric::UsersAcc => m.users_acc,
                    Metric::ClassIou => m.class_iou,
                };
                rows.push(ReportRow {
                    group: label.clone(),
                    metric,
                    class: class as u8,
                    value,
                });
            }
        }
    }
    Ok(EvalReport {
        rows,
        group_matrices: groups,
    })
}

/// Renders report rows as CSV: `group,metric,class,value` with `n/a` for
/// undefined values. Values use the shortest decimal form that parses back
/// to the identical f64.
pub fn report_csv(report: &EvalReport) -> String {
    let mut out = String::from("group,metric,class,value\n");
    for row in &report.rows {
        let value = match row.value {
            Some(v) => format!("{}", v),
            None => "n/a".into(),
        };
        out.push_str(&format!(
            "{},{},{},{}\n",
            row.group,
            row.metric.name(),
            row.class,
            value
        ));
    }
    out
}

/// Parses rows written by [`report_csv`]. Group labels may contain commas;
/// the three rightmost fields are metric, class and value. The per-group
/// confusion matrices are not part of the CSV and come back empty.
pub fn report_from_csv(text: &str) -> Result<EvalReport, MetricsError> {
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if idx == 0 {
            if line != "group,metric,class,value" {
                return Err(MetricsError::Parse(format!("unexpected header {line:?}")));
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let mut fields = line.rsplitn(4, ',');
        let (value, class, metric, group) = match (
            fields.next(),
            fields.next(),
            fields.next(),
            fields.next(),
        ) {
            (Some(v), Some(c), Some(m), Some(g)) => (v, c, m, g),
            _ => {
                return Err(MetricsError::Parse(format!(
                    "line {}: expected 4 fields",
                    idx + 1
                )))
            }
        };
        let metric = Metric::from_name(metric)
            .ok_or_else(|| MetricsError::Parse(format!("line {}: unknown metric {metric:?}", idx + 1)))?;
        let class: u8 = class
            .parse()
            .map_err(|_| MetricsError::Parse(format!("line {}: bad class {class:?}", idx + 1)))?;
        let value = if value == "n/a" {
            None
        } else {
            Some(value.parse::<f64>().map_err(|_| {
                MetricsError::Parse(format!("line {}: bad value {value:?}", idx + 1))
            })?)
        };
        rows.push(ReportRow {
            group: group.to_string(),
            metric,
            class,
            value,
        });
    }
    Ok(EvalReport {
        rows,
        group_matrices: Vec::new(),
    })
}
