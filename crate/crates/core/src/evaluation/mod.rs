//! Metrics, breakdowns and analysis reports.

mod contrast;
mod pca;
mod stats;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::basic_index::BasicIndex;
use crate::corpus::{AnnotatedInstance, InstanceRef, Label, Split};
use crate::error::{Error, Result};
use crate::model::Prediction;

pub use contrast::{contrast_measure, cosine, ContrastStats, GroupMeans};
pub use pca::{pca_export, PcaExport, PcaRow};
pub use stats::{paired_ttest, TTest};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    /// Set when precision or recall had a zero denominator and was reported as 0.
    pub degenerate: bool,
}

impl EvalReport {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize, tn: usize) -> Result<Self> {
        let n = tp + fp + fn_ + tn;
        if n == 0 {
            return Err(Error::Validation("cannot score an empty prediction set".into()));
        }
        let ratio = |num: usize, den: usize| if den == 0 { None } else { Some(num as f64 / den as f64) };
        let p = ratio(tp, tp + fp);
        let r = ratio(tp, tp + fn_);
        let precision = p.unwrap_or(0.0);
        let recall = r.unwrap_or(0.0);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Ok(EvalReport {
            tp,
            fp,
            fn_,
            tn,
            precision,
            recall,
            f1,
            accuracy: (tp + tn) as f64 / n as f64,
            degenerate: p.is_none() || r.is_none(),
        })
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// `P / R / F1 / Acc` as one-decimal percentages.
    pub fn summary(&self) -> String {
        format!(
            "P {}  R {}  F1 {}  Acc {}{}",
            percent(self.precision),
            percent(self.recall),
            percent(self.f1),
            percent(self.accuracy),
            if self.degenerate { "  (degenerate)" } else { "" }
        )
    }
}

/// Percentage with one decimal, ties rounded to even.
pub fn percent(x: f64) -> String {
    format!("{:.1}", (x * 1000.0).round_ties_even() / 10.0)
}

pub fn compute_metrics(predictions: &[Prediction], labels: &[Label]) -> Result<EvalReport> {
    if predictions.len() != labels.len() {
        return Err(Error::Validation(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (p, y) in predictions.iter().zip(labels) {
        match (p.label_hat == 1, y.is_metaphor()) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    EvalReport::from_counts(tp, fp, fn_, tn)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub samples: usize,
    /// Distinct target keys in the bucket.
    pub targets: usize,
    /// `None` for an empty bucket.
    pub report: Option<EvalReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Breakdown {
    pub key_fn_id: String,
    pub has_literal: Bucket,
    pub no_literal: Bucket,
}

impl Breakdown {
    /// Human-readable table. `iaa` is an agreement reference; a has-literal F1
    /// at or above it is annotated.
    pub fn table(&self, iaa: Option<f64>) -> String {
        let mut out = format!("{:<12} {:>8} {:>8} {:>6} {:>6}\n", "bucket", "#sample", "#target", "F1", "Acc");
        for (name, b) in [("has literal", &self.has_literal), ("no literal", &self.no_literal)] {
            let (f1, acc) = b
                .report
                .as_ref()
                .map_or(("-".into(), "-".into()), |r| (percent(r.f1), percent(r.accuracy)));
            out.push_str(&format!("{name:<12} {:>8} {:>8} {f1:>6} {acc:>6}", b.samples, b.targets));
            if let (Some(bound), Some(r), true) = (iaa, &b.report, name == "has literal") {
                if r.f1 >= bound {
                    out.push_str(&format!("  (at or above IAA reference {bound})"));
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Splits `instances` by whether their key has a literal pool in `index` and
/// scores each part.
pub fn breakdown_eval(predictions: &[Prediction], instances: &[AnnotatedInstance], index: &BasicIndex) -> Result<Breakdown> {
    if predictions.len() != instances.len() {
        return Err(Error::Validation(format!(
            "{} predictions for {} instances",
            predictions.len(),
            instances.len()
        )));
    }
    let mut parts: [(Vec<Prediction>, Vec<Label>, BTreeSet<String>); 2] = Default::default();
    for (p, inst) in predictions.iter().zip(instances) {
        let key = index.policy().key(inst);
        let part = &mut parts[usize::from(!index.has_literal(&key))];
        part.0.push(*p);
        part.1.push(inst.label);
        part.2.insert(key);
    }
    let bucket = |(preds, labels, keys): &(Vec<Prediction>, Vec<Label>, BTreeSet<String>)| -> Result<Bucket> {
        Ok(Bucket {
            samples: preds.len(),
            targets: keys.len(),
            report: if preds.is_empty() {
                None
            } else {
                Some(compute_metrics(preds, labels)?)
            },
        })
    };
    Ok(Breakdown {
        key_fn_id: index.key_fn_id(),
        has_literal: bucket(&parts[0])?,
        no_literal: bucket(&parts[1])?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Case {
    pub reference: InstanceRef,
    pub target: String,
    pub sentence: String,
    pub label: Label,
    pub basic_examples: Vec<String>,
}

/// Instances the full model gets right and the ablated model gets wrong,
/// each with up to `m` literal training sentences for its key.
pub fn case_study(
    pred_full: &[Prediction],
    pred_ablated: &[Prediction],
    instances: &[AnnotatedInstance],
    index: &BasicIndex,
    m: usize,
    seed: u64,
) -> Result<Vec<Case>> {
    if pred_full.len() != instances.len() || pred_ablated.len() != instances.len() {
        return Err(Error::Validation(format!(
            "prediction sets of {} and {} do not cover {} instances",
            pred_full.len(),
            pred_ablated.len(),
            instances.len()
        )));
    }
    let label_of = |y: Label| u8::from(y.is_metaphor());
    let mut cases = Vec::new();
    for ((full, ablated), inst) in pred_full.iter().zip(pred_ablated).zip(instances) {
        let y = label_of(inst.label);
        if full.label_hat != y || ablated.label_hat == y {
            continue;
        }
        let key = index.policy().key(inst);
        let exclude = (inst.split == Split::Train).then(|| inst.reference());
        let basic_examples = if m == 0 {
            Vec::new()
        } else {
            index
                .sample_entries(&key, m, seed, exclude.as_ref())?
                .into_iter()
                .map(|e| e.tokens.join(" "))
                .collect()
        };
        cases.push(Case {
            reference: inst.reference(),
            target: inst.target_word().to_string(),
            sentence: inst.tokens.join(" "),
            label: inst.label,
            basic_examples,
        });
    }
    Ok(cases)
}
