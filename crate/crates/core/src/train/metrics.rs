//! Classification metrics: per-class precision/recall/F1, weighted averages,
//! and the 4x4 confusion matrix. Undefined ratios report 0.

use crate::corpus::ClassLabel;
use crate::error::{Error, Result};

pub const NUM_CLASSES: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub per_class: [ClassMetrics; NUM_CLASSES],
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub weighted_f1: f64,
    /// confusion[true][predicted]
    pub confusion: [[usize; NUM_CLASSES]; NUM_CLASSES],
    pub total: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl EvalReport {
    /// Build the report from parallel truth/prediction class indices.
    pub fn from_predictions(truths: &[usize], predictions: &[usize]) -> Result<EvalReport> {
        if truths.is_empty() || truths.len() != predictions.len() {
            return Err(Error::invalid(format!(
                "metrics: {} truths vs {} predictions",
                truths.len(),
                predictions.len()
            )));
        }
        let mut confusion = [[0usize; NUM_CLASSES]; NUM_CLASSES];
        for (&t, &p) in truths.iter().zip(predictions) {
            if t >= NUM_CLASSES || p >= NUM_CLASSES {
                return Err(Error::invalid(format!("class index out of range: ({t},{p})")));
            }
            confusion[t][p] += 1;
        }
        Ok(Self::from_confusion(confusion))
    }

    pub fn from_confusion(confusion: [[usize; NUM_CLASSES]; NUM_CLASSES]) -> EvalReport {
        let mut per_class = [ClassMetrics {
            precision: 0.0,
            recall: 0.0,
            f1: 0.0,
            support: 0,
        }; NUM_CLASSES];
        let total: usize = confusion.iter().flatten().sum();
        for c in 0..NUM_CLASSES {
            let tp = confusion[c][c];
            let support: usize = confusion[c].iter().sum();
            let predicted: usize = (0..NUM_CLASSES).map(|t| confusion[t][c]).sum();
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            per_class[c] = ClassMetrics {
                precision,
                recall,
                f1,
                support,
            };
        }
        let weight = |f: fn(&ClassMetrics) -> f64| -> f64 {
            if total == 0 {
                return 0.0;
            }
            per_class
                .iter()
                .map(|m| f(m) * m.support as f64)
                .sum::<f64>()
                / total as f64
        };
        EvalReport {
            per_class,
            weighted_precision: weight(|m| m.precision),
            weighted_recall: weight(|m| m.recall),
            weighted_f1: weight(|m| m.f1),
            confusion,
            total,
        }
    }

    /// Per-class rows plus the weighted-average row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,precision,recall,f1,support\n");
        for (c, m) in self.per_class.iter().enumerate() {
            out.push_str(&format!(
                "{},{:.3},{:.3},{:.3},{}\n",
                ClassLabel::from_index(c).expect("class index").name(),
                m.precision,
                m.recall,
                m.f1,
                m.support
            ));
        }
        out.push_str(&format!(
            "weighted_avg,{:.3},{:.3},{:.3},{}\n",
            self.weighted_precision, self.weighted_recall, self.weighted_f1, self.total
        ));
        out
    }

    /// Rows are true classes, columns predictions.
    pub fn confusion_csv(&self) -> String {
        let mut out = String::from("true\\pred");
        for c in 0..NUM_CLASSES {
            out.push(',');
            out.push_str(ClassLabel::from_index(c).expect("class index").name());
        }
        out.push('\n');
        for (t, row) in self.confusion.iter().enumerate() {
            out.push_str(ClassLabel::from_index(t).expect("class index").name());
            for &v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

impl std::fmt::Display for EvalReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (c, m) in self.per_class.iter().enumerate() {
            writeln!(
                f,
                "{:<17} prec {:.3}  rec {:.3}  f1 {:.3}  (n={})",
                ClassLabel::from_index(c).expect("class index").name(),
                m.precision,
                m.recall,
                m.f1,
                m.support
            )?;
        }
        write!(
            f,
            "{:<17} prec {:.3}  rec {:.3}  f1 {:.3}  (n={})",
            "weighted avg",
            self.weighted_precision,
            self.weighted_recall,
            self.weighted_f1,
            self.total
        )
    }
}

/// Argmax with first-wins tie-breaking.
pub fn argmax(logits: &[f64; 4]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate().skip(1) {
        if v > logits[best] {
            best = i;
        }
    }
    best
}

/// Run the model over `samples` in evaluation mode and score the argmax
/// predictions.
pub fn evaluate(
    model: &crate::model::Model,
    samples: &[crate::corpus::AlignedSample],
) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::data("evaluate: no samples"));
    }
    let logits = model.eval_logits(samples)?;
    let truths: Vec<usize> = samples.iter().map(|s| s.label.index()).collect();
    let preds: Vec<usize> = logits.iter().map(argmax).collect();
    EvalReport::from_predictions(&truths, &preds)
}
