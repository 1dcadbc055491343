//! The contrast head.
//!
//! Three linear maps each look at a pair of vectors:
//!
//! ```text
//! h_bmip = f0([v_context_target, v_basic])
//! h_spv  = f1([v_sentence, v_context_target])
//! h_amip = f2([v_context_target, v_aggregated])
//! score  = σ(Wᵀ [h_bmip; h_amip; h_spv] + b)
//! ```
//!
//! The ablated head drops `f0` and the `h_bmip` block of `W`; ablation is
//! fixed when the head is built.

use ndarray::{concatenate, s, Array1, ArrayView1, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Linear, ParamMut, Parameterized};

/// Loss clamp: scores are kept in `[ε, 1 − ε]` before taking logs.
pub const LOSS_EPSILON: f64 = 1e-7;

/// Largest double below one; predictions never reach exactly 1.
const SCORE_CEIL: f64 = 1.0 - f64::EPSILON / 2.0;

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBundle {
    pub v_context_target: Array1<f64>,
    pub v_basic: Array1<f64>,
    pub v_aggregated: Array1<f64>,
    pub v_sentence: Array1<f64>,
}

impl FeatureBundle {
    pub fn dim(&self) -> Result<usize> {
        let d = self.v_context_target.len();
        if [&self.v_basic, &self.v_aggregated, &self.v_sentence]
            .iter()
            .any(|v| v.len() != d)
        {
            return Err(Error::Validation(format!(
                "bundle dimensions differ: {} / {} / {} / {}",
                d,
                self.v_basic.len(),
                self.v_aggregated.len(),
                self.v_sentence.len()
            )));
        }
        Ok(d)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub score: f64,
    pub label_hat: u8,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    /// Input dimension `d` (encoder hidden size).
    pub input_dim: usize,
    /// Output dimension `h` of each contrast layer.
    pub hidden_dim: usize,
    pub dropout: f64,
    pub ablate_bmip: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelHead {
    config: HeadConfig,
    f0: Option<Linear>,
    f1: Linear,
    f2: Linear,
    classifier: Linear,
}

/// Gradients with respect to the trainable-through inputs of a bundle.
/// `v_basic` is treated as a constant and gets none.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureGrads {
    pub d_context_target: Array1<f64>,
    pub d_aggregated: Array1<f64>,
    pub d_sentence: Array1<f64>,
}

#[derive(Clone, Debug)]
pub struct HeadTape {
    bmip_in: Option<Array1<f64>>,
    spv_in: Array1<f64>,
    amip_in: Array1<f64>,
    features: Array1<f64>,
    mask: Option<Array1<f64>>,
    pub logit: f64,
    pub score: f64,
}

fn pair(a: &Array1<f64>, b: &Array1<f64>) -> Array1<f64> {
    concatenate(Axis(0), &[a.view(), b.view()]).expect("1-d concatenation")
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Sigmoid kept strictly inside `(0, 1)`.
pub fn score_from_logit(logit: f64) -> f64 {
    sigmoid(logit).clamp(f64::MIN_POSITIVE, SCORE_CEIL)
}

impl ModelHead {
    pub fn new(config: HeadConfig, rng: &mut impl Rng) -> Result<Self> {
        Self::validate_config(&config)?;
        let (d, h) = (config.input_dim, config.hidden_dim);
        let blocks = if config.ablate_bmip { 2 } else { 3 };
        Ok(ModelHead {
            f0: (!config.ablate_bmip).then(|| Linear::init(2 * d, h, rng)),
            f1: Linear::init(2 * d, h, rng),
            f2: Linear::init(2 * d, h, rng),
            classifier: Linear::init(blocks * h, 1, rng),
            config,
        })
    }

    /// All-zero parameters; useful for hand-set fixtures.
    pub fn zeros(config: HeadConfig) -> Result<Self> {
        Self::validate_config(&config)?;
        let (d, h) = (config.input_dim, config.hidden_dim);
        let blocks = if config.ablate_bmip { 2 } else { 3 };
        Ok(ModelHead {
            f0: (!config.ablate_bmip).then(|| Linear::zeros(2 * d, h)),
            f1: Linear::zeros(2 * d, h),
            f2: Linear::zeros(2 * d, h),
            classifier: Linear::zeros(blocks * h, 1),
            config,
        })
    }

    fn validate_config(config: &HeadConfig) -> Result<()> {
        if config.input_dim == 0 || config.hidden_dim == 0 {
            return Err(Error::Config("head dimensions must be positive".into()));
        }
        if !(0.0..1.0).contains(&config.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", config.dropout)));
        }
        Ok(())
    }

    pub fn config(&self) -> &HeadConfig {
        &self.config
    }

    pub fn is_ablated(&self) -> bool {
        self.config.ablate_bmip
    }

    pub fn f0(&self) -> Option<&Linear> {
        self.f0.as_ref()
    }

    pub fn f0_mut(&mut self) -> Option<&mut Linear> {
        self.f0.as_mut()
    }

    pub fn f1_mut(&mut self) -> &mut Linear {
        &mut self.f1
    }

    pub fn f2(&self) -> &Linear {
        &self.f2
    }

    pub fn f2_mut(&mut self) -> &mut Linear {
        &mut self.f2
    }

    pub fn classifier_mut(&mut self) -> &mut Linear {
        &mut self.classifier
    }

    fn check(&self, bundle: &FeatureBundle) -> Result<()> {
        let d = bundle.dim()?;
        if d != self.config.input_dim {
            return Err(Error::Validation(format!(
                "bundle dimension {d} does not match head input dimension {}",
                self.config.input_dim
            )));
        }
        Ok(())
    }

    pub fn bmip_feature(&self, bundle: &FeatureBundle) -> Result<Array1<f64>> {
        self.check(bundle)?;
        let f0 = self
            .f0
            .as_ref()
            .ok_or_else(|| Error::Validation("ablated head has no basic-meaning contrast".into()))?;
        Ok(f0.forward(pair(&bundle.v_context_target, &bundle.v_basic).view()))
    }

    pub fn spv_feature(&self, bundle: &FeatureBundle) -> Result<Array1<f64>> {
        self.check(bundle)?;
        Ok(self.f1.forward(pair(&bundle.v_sentence, &bundle.v_context_target).view()))
    }

    pub fn amip_feature(&self, bundle: &FeatureBundle) -> Result<Array1<f64>> {
        self.check(bundle)?;
        Ok(self.f2.forward(pair(&bundle.v_context_target, &bundle.v_aggregated).view()))
    }

    /// Forward pass keeping what [`ModelHead::backward`] needs. Dropout is
    /// applied to the concatenated contrast features only when `rng` is given.
    pub fn forward_train<R: Rng>(&self, bundle: &FeatureBundle, rng: Option<&mut R>) -> Result<HeadTape> {
        self.check(bundle)?;
        let bmip_in = self
            .f0
            .as_ref()
            .map(|_| pair(&bundle.v_context_target, &bundle.v_basic));
        let spv_in = pair(&bundle.v_sentence, &bundle.v_context_target);
        let amip_in = pair(&bundle.v_context_target, &bundle.v_aggregated);

        let mut blocks = Vec::with_capacity(3);
        if let (Some(f0), Some(x)) = (&self.f0, &bmip_in) {
            blocks.push(f0.forward(x.view()));
        }
        blocks.push(self.f2.forward(amip_in.view()));
        blocks.push(self.f1.forward(spv_in.view()));
        let views: Vec<ArrayView1<f64>> = blocks.iter().map(|b| b.view()).collect();
        let features = concatenate(Axis(0), &views).expect("1-d concatenation");

        let p = self.config.dropout;
        let mask = match rng {
            Some(rng) if p > 0.0 => Some(Array1::from_shape_simple_fn(features.len(), || {
                if rng.gen::<f64>() < p {
                    0.0
                } else {
                    1.0 / (1.0 - p)
                }
            })),
            _ => None,
        };
        let dropped = match &mask {
            Some(m) => &features * m,
            None => features.clone(),
        };
        let logit = self.classifier.forward(dropped.view())[0];
        if !logit.is_finite() {
            return Err(Error::Numeric(format!("non-finite logit {logit}")));
        }
        Ok(HeadTape {
            bmip_in,
            spv_in,
            amip_in,
            features,
            mask,
            logit,
            score: score_from_logit(logit),
        })
    }

    pub fn logit(&self, bundle: &FeatureBundle) -> Result<f64> {
        Ok(self.forward_train::<rand_chacha::ChaCha8Rng>(bundle, None)?.logit)
    }

    /// Accumulates head gradients for `∂L/∂logit` and returns the gradients
    /// flowing back into the encoder-produced vectors.
    pub fn backward(&mut self, tape: &HeadTape, d_logit: f64) -> FeatureGrads {
        let d = self.config.input_dim;
        let h = self.config.hidden_dim;
        let dropped = match &tape.mask {
            Some(m) => &tape.features * m,
            None => tape.features.clone(),
        };
        let d_out = Array1::from_elem(1, d_logit);
        let mut d_features = self.classifier.backward(dropped.view(), d_out.view());
        if let Some(m) = &tape.mask {
            d_features *= m;
        }

        let mut d_context_target = Array1::zeros(d);
        let offset = if let (Some(f0), Some(x)) = (self.f0.as_mut(), &tape.bmip_in) {
            let dx = f0.backward(x.view(), d_features.slice(s![0..h]));
            d_context_target += &dx.slice(s![0..d]);
            h
        } else {
            0
        };
        let dx = self
            .f2
            .backward(tape.amip_in.view(), d_features.slice(s![offset..offset + h]));
        d_context_target += &dx.slice(s![0..d]);
        let d_aggregated = dx.slice(s![d..2 * d]).to_owned();
        let dx = self
            .f1
            .backward(tape.spv_in.view(), d_features.slice(s![offset + h..offset + 2 * h]));
        let d_sentence = dx.slice(s![0..d]).to_owned();
        d_context_target += &dx.slice(s![d..2 * d]);

        FeatureGrads {
            d_context_target,
            d_aggregated,
            d_sentence,
        }
    }
}

impl Parameterized for ModelHead {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        if let Some(f0) = &self.f0 {
            f0.visit("f0", f);
        }
        self.f1.visit("f1", f);
        self.f2.visit("f2", f);
        self.classifier.visit("classifier", f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(ParamMut<'_>)) {
        if let Some(f0) = &mut self.f0 {
            f0.visit_mut("f0", false, f);
        }
        self.f1.visit_mut("f1", false, f);
        self.f2.visit_mut("f2", false, f);
        self.classifier.visit_mut("classifier", false, f);
    }
}

pub fn bmip_feature(bundle: &FeatureBundle, head: &ModelHead) -> Result<Array1<f64>> {
    head.bmip_feature(bundle)
}

pub fn spv_feature(bundle: &FeatureBundle, head: &ModelHead) -> Result<Array1<f64>> {
    head.spv_feature(bundle)
}

pub fn amip_feature(bundle: &FeatureBundle, head: &ModelHead) -> Result<Array1<f64>> {
    head.amip_feature(bundle)
}

/// Scores one bundle. `ablate_bmip` must agree with how the head was built.
pub fn predict(bundle: &FeatureBundle, head: &ModelHead, threshold: f64, ablate_bmip: bool) -> Result<Prediction> {
    if ablate_bmip != head.is_ablated() {
        return Err(Error::Validation(format!(
            "ablation requested = {ablate_bmip}, but the head was built with ablation = {}",
            head.is_ablated()
        )));
    }
    let score = score_from_logit(head.logit(bundle)?);
    Ok(Prediction {
        score,
        label_hat: u8::from(score >= threshold),
    })
}

fn check_loss_inputs(scores: &[f64], labels: &[f64]) -> Result<()> {
    if scores.is_empty() || scores.len() != labels.len() {
        return Err(Error::Validation(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(y) = labels.iter().find(|&&y| y != 0.0 && y != 1.0) {
        return Err(Error::Validation(format!("label {y} is not 0 or 1")));
    }
    Ok(())
}


/// Summed binary cross entropy over the batch.
pub fn bce_loss(scores: &[f64], labels: &[f64]) -> Result<f64> {
    check_loss_inputs(scores, labels)?;
    Ok(scores.iter().zip(labels).map(|(&p, &y)| weighted_bce_term(p, y, 1.0, LOSS_EPSILON)).sum())
}

pub fn bce_loss_mean(scores: &[f64], labels: &[f64]) -> Result<f64> {
    Ok(bce_loss(scores, labels)? / scores.len() as f64)
}

/// `∂/∂logit` of one (optionally positive-weighted) loss term. Zero where the
/// score sits on the clamp.
pub fn bce_logit_grad(score: f64, label: f64, pos_weight: f64, eps: f64) -> f64 {
    if !(eps..=1.0 - eps).contains(&score) {
        return 0.0;
    }
    pos_weight * label * (score - 1.0) + (1.0 - label) * score
}

/// Loss term matching [`bce_logit_grad`].
pub fn weighted_bce_term(score: f64, label: f64, pos_weight: f64, eps: f64) -> f64 {
    let p = score.clamp(eps, 1.0 - eps);
    -(pos_weight * label * p.ln() + (1.0 - label) * (1.0 - p).ln())
}
