//! Decoupled-weight-decay Adam and a linear warmup/decay schedule.

use std::collections::HashMap;

use crate::nn::Parameterized;

#[derive(Clone, Debug)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

#[derive(Clone, Debug)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    state: HashMap<String, Moments>,
}

impl Default for AdamW {
    fn default() -> Self {
        AdamW::new(0.01)
    }
}

/// Biases and normalization gains are not decayed.
fn decays(name: &str) -> bool {
    !(name.ends_with("bias") || name.contains("norm"))
}

impl AdamW {
    pub fn new(weight_decay: f64) -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            state: HashMap::new(),
        }
    }

    /// Applies one update to every non-frozen parameter of `model` using its
    /// accumulated gradients. `group` namespaces the moment buffers so two
    /// models can share one optimizer.
    pub fn step(&mut self, group: &str, model: &mut dyn Parameterized, lr: f64) {
        let (b1, b2, eps, wd) = (self.beta1, self.beta2, self.eps, self.weight_decay);
        let state = &mut self.state;
        model.visit_params_mut(&mut |p| {
            if p.frozen {
                return;
            }
            let key = format!("{group}/{}", p.name);
            let st = state.entry(key).or_insert_with(|| Moments {
                m: vec![0.0; p.value.len()],
                v: vec![0.0; p.value.len()],
                t: 0,
            });
            st.t += 1;
            let c1 = 1.0 - b1.powi(st.t);
            let c2 = 1.0 - b2.powi(st.t);
            let decay = if decays(p.name) { wd } else { 0.0 };
            for i in 0..p.value.len() {
                let g = p.grad[i];
                st.m[i] = b1 * st.m[i] + (1.0 - b1) * g;
                st.v[i] = b2 * st.v[i] + (1.0 - b2) * g * g;
                let m_hat = st.m[i] / c1;
                let v_hat = st.v[i] / c2;
                p.value[i] -= lr * (m_hat / (v_hat.sqrt() + eps) + decay * p.value[i]);
            }
        });
    }
}

/// Linear warmup over the first `warmup_steps`, then linear decay to zero.
#[derive(Clone, Copy, Debug)]
pub struct LinearSchedule {
    pub total_steps: usize,
    pub warmup_steps: usize,
}

impl LinearSchedule {
    pub fn with_warmup_fraction(total_steps: usize, fraction: f64) -> Self {
        LinearSchedule {
            total_steps,
            warmup_steps: (total_steps as f64 * fraction).round() as usize,
        }
    }

    /// Multiplier on the base learning rate for the 0-based `step`.
    pub fn factor(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            (step + 1) as f64 / self.warmup_steps as f64
        } else {
            let remaining = self.total_steps.saturating_sub(step) as f64;
            let span = self.total_steps.saturating_sub(self.warmup_steps).max(1) as f64;
            (remaining / span).clamp(0.0, 1.0)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Linear, ParamMut};
    use ndarray::array;

    struct One(Linear);

    impl Parameterized for One {
        fn visit_params(&self, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
            self.0.visit("lin", f)
        }
        fn visit_params_mut(&mut self, f: &mut dyn FnMut(ParamMut<'_>)) {
            self.0.visit_mut("lin", false, f)
        }
    }

    #[test]
    fn first_step_moves_by_learning_rate_against_gradient_sign() {
        let mut model = One(Linear::from_parts(array![[1.0, -1.0]], array![0.5]));
        model.0.weight.grad = array![[2.0, -3.0]];
        model.0.bias.grad = array![0.1];
        let mut opt = AdamW::new(0.0);
        opt.step("g", &mut model, 0.01);
        // bias-corrected first step is lr * g/|g|
        assert!((model.0.weight.value[[0, 0]] - 0.99).abs() < 1e-6);
        assert!((model.0.weight.value[[0, 1]] + 0.99).abs() < 1e-6);
        assert!((model.0.bias.value[0] - 0.49).abs() < 1e-6);
    }

    #[test]
    fn weight_decay_skips_bias() {
        let mut model = One(Linear::from_parts(array![[1.0]], array![1.0]));
        let mut opt = AdamW::new(0.5);
        opt.step("g", &mut model, 0.1);
        assert!((model.0.weight.value[[0, 0]] - 0.95).abs() < 1e-12);
        assert_eq!(model.0.bias.value[0], 1.0);
    }

    #[test]
    fn schedule_warms_up_then_decays() {
        let s = LinearSchedule::with_warmup_fraction(100, 0.1);
        assert_eq!(s.warmup_steps, 10);
        assert!((s.factor(0) - 0.1).abs() < 1e-12);
        assert!((s.factor(9) - 1.0).abs() < 1e-12);
        assert!((s.factor(10) - 1.0).abs() < 1e-12);
        assert!((s.factor(55) - 0.5).abs() < 1e-12);
        assert_eq!(s.factor(100), 0.0);
    }
}
