use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::error::{Error, Result};
use crate::model::FeatureBundle;

/// Cosine similarity, clamped to `[-1, 1]`. `None` when either vector has
/// zero norm.
pub fn cosine(u: ArrayView1<f64>, v: ArrayView1<f64>) -> Option<f64> {
    let nu = u.dot(&u).sqrt();
    let nv = v.dot(&v).sqrt();
    if nu == 0.0 || nv == 0.0 || !(nu * nv).is_finite() {
        return None;
    }
    Some((u.dot(&v) / (nu * nv)).clamp(-1.0, 1.0))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupMeans {
    pub metaphor: Option<f64>,
    pub literal: Option<f64>,
    pub n_metaphor: usize,
    pub n_literal: usize,
}

/// Mean cosine similarity per gold label for the two pairings. Larger means
/// less contrast.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ContrastStats {
    /// `v_{S,t}` against `v_{F,t}`.
    pub contextual_vs_frequent: GroupMeans,
    /// `v_{S,t}` against `v_{B,t}`.
    pub contextual_vs_basic: GroupMeans,
    /// Instances skipped because a vector had zero norm.
    pub excluded: usize,
}

impl ContrastStats {
    pub fn table(&self) -> String {
        let fmt = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.3}"));
        format!(
            "{:<24} {:>9} {:>9}\n{:<24} {:>9} {:>9}\n{:<24} {:>9} {:>9}\n",
            "",
            "Metaphor",
            "Literal",
            "Contextual vs. Frequent",
            fmt(self.contextual_vs_frequent.metaphor),
            fmt(self.contextual_vs_frequent.literal),
            "Contextual vs. Basic",
            fmt(self.contextual_vs_basic.metaphor),
            fmt(self.contextual_vs_basic.literal),
        )
    }
}

#[derive(Default)]
struct Acc {
    sum: [f64; 2],
    n: [usize; 2],
}

impl Acc {
    fn push(&mut self, label: Label, x: f64) {
        let i = usize::from(label.is_metaphor());
        self.sum[i] += x;
        self.n[i] += 1;
    }

    fn means(&self) -> GroupMeans {
        let mean = |i: usize| (self.n[i] > 0).then(|| self.sum[i] / self.n[i] as f64);
        GroupMeans {
            metaphor: mean(1),
            literal: mean(0),
            n_metaphor: self.n[1],
            n_literal: self.n[0],
        }
    }
}

pub fn contrast_measure(items: &[(FeatureBundle, Label)]) -> Result<ContrastStats> {
    if items.is_empty() {
        return Err(Error::Validation("no instances to measure".into()));
    }
    let mut frequent = Acc::default();
    let mut basic = Acc::default();
    let mut excluded = 0;
    for (b, label) in items {
        b.dim()?;
        let f = cosine(b.v_context_target.view(), b.v_aggregated.view());
        let c = cosine(b.v_context_target.view(), b.v_basic.view());
        match (f, c) {
            (Some(f), Some(c)) => {
                frequent.push(*label, f);
                basic.push(*label, c);
            }
            _ => excluded += 1,
        }
    }
    Ok(ContrastStats {
        contextual_vs_frequent: frequent.means(),
        contextual_vs_basic: basic.means(),
        excluded,
    })
}
