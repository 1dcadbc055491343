//! Post-norm transformer blocks with explicit backward passes.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use libm::erf;

use basicmip::nn::{softmax_rows, softmax_rows_backward, Linear, ParamMut, Vector};

use crate::config::Activation;

const SQRT_2: f64 = std::f64::consts::SQRT_2;

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm {
    pub weight: Vector,
    pub bias: Vector,
    pub eps: f64,
}

#[derive(Clone, Debug)]
pub struct NormCache {
    xhat: Array2<f64>,
    rstd: Array1<f64>,
}

impl LayerNorm {
    pub fn new(dim: usize, eps: f64) -> Self {
        LayerNorm {
            weight: Vector::new(Array1::ones(dim)),
            bias: Vector::new(Array1::zeros(dim)),
            eps,
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, NormCache) {
        let d = x.ncols() as f64;
        let mean = x.mean_axis(Axis(1)).expect("non-empty rows");
        let centered = x - &mean.insert_axis(Axis(1));
        let var = centered.mapv(|v| v * v).sum_axis(Axis(1)) / d;
        let rstd = var.mapv(|v| 1.0 / (v + self.eps).sqrt());
        let xhat = &centered * &rstd.view().insert_axis(Axis(1));
        let y = &xhat * &self.weight.value + &self.bias.value;
        (y, NormCache { xhat, rstd })
    }

    /// Accumulates gradients and returns `∂L/∂x`.
    pub fn backward(&mut self, cache: &NormCache, dy: &Array2<f64>) -> Array2<f64> {
        self.weight.grad += &(dy * &cache.xhat).sum_axis(Axis(0));
        self.bias.grad += &dy.sum_axis(Axis(0));
        let dxhat = dy * &self.weight.value;
        let mean_d = dxhat.mean_axis(Axis(1)).expect("non-empty rows").insert_axis(Axis(1));
        let mean_dx = (&dxhat * &cache.xhat)
            .mean_axis(Axis(1))
            .expect("non-empty rows")
            .insert_axis(Axis(1));
        (&dxhat - &mean_d - &(&cache.xhat * &mean_dx)) * &cache.rstd.view().insert_axis(Axis(1))
    }

    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.weight.visit(&format!("{prefix}.weight"), f);
        self.bias.visit(&format!("{prefix}.bias"), f);
    }

    pub fn visit_mut(&mut self, prefix: &str, frozen: bool, f: &mut dyn FnMut(ParamMut<'_>)) {
        self.weight.visit_mut(&format!("{prefix}.weight"), frozen, f);
        self.bias.visit_mut(&format!("{prefix}.bias"), frozen, f);
    }
}

fn activate(act: Activation, x: f64) -> f64 {
    match act {
        Activation::Gelu => 0.5 * x * (1.0 + erf(x / SQRT_2)),
        Activation::GeluTanh => {
            let c = (2.0 / std::f64::consts::PI).sqrt();
            0.5 * x * (1.0 + (c * (x + 0.044715 * x.powi(3))).tanh())
        }
    }
}

fn activate_grad(act: Activation, x: f64) -> f64 {
    match act {
        Activation::Gelu => {
            let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
            0.5 * (1.0 + erf(x / SQRT_2)) + x * pdf
        }
        Activation::GeluTanh => {
            let c = (2.0 / std::f64::consts::PI).sqrt();
            let u = c * (x + 0.044715 * x.powi(3));
            let t = u.tanh();
            0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c * (1.0 + 3.0 * 0.044715 * x * x)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub attn_out: Linear,
    pub attn_norm: LayerNorm,
    pub intermediate: Linear,
    pub output: Linear,
    pub out_norm: LayerNorm,
}

#[derive(Clone, Debug)]
pub struct BlockTape {
    input: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    context: Array2<f64>,
    attn_norm: NormCache,
    mid: Array2<f64>,
    pre_act: Array2<f64>,
    act: Array2<f64>,
    out_norm: NormCache,
}

impl Block {
    pub fn forward(&self, x: &Array2<f64>, heads: usize, act: Activation) -> (Array2<f64>, BlockTape) {
        let d = x.ncols();
        let hd = d / heads;
        let scale = (hd as f64).sqrt();
        let q = self.query.forward_rows(x.view());
        let k = self.key.forward_rows(x.view());
        let v = self.value.forward_rows(x.view());
        let mut context = Array2::zeros(x.raw_dim());
        let mut probs = Vec::with_capacity(heads);
        for h in 0..heads {
            let cols = s![.., h * hd..(h + 1) * hd];
            let scores = q.slice(cols).dot(&k.slice(cols).t()) / scale;
            let p = softmax_rows(&scores);
            context.slice_mut(cols).assign(&p.dot(&v.slice(cols)));
            probs.push(p);
        }
        let attended = self.attn_out.forward_rows(context.view()) + x;
        let (mid, attn_norm) = self.attn_norm.forward(&attended);
        let pre_act = self.intermediate.forward_rows(mid.view());
        let activated = pre_act.mapv(|z| activate(act, z));
        let out = self.output.forward_rows(activated.view()) + &mid;
        let (y, out_norm) = self.out_norm.forward(&out);
        let tape = BlockTape {
            input: x.clone(),
            q,
            k,
            v,
            probs,
            context,
            attn_norm,
            mid,
            pre_act,
            act: activated,
            out_norm,
        };
        (y, tape)
    }

    /// Accumulates parameter gradients and returns `∂L/∂input`.
    pub fn backward(&mut self, tape: &BlockTape, dy: &Array2<f64>, act: Activation) -> Array2<f64> {
        let heads = tape.probs.len();
        let d = dy.ncols();
        let hd = d / heads;
        let scale = (hd as f64).sqrt();

        let d_out = self.out_norm.backward(&tape.out_norm, dy);
        let d_act = self.output.backward_rows(tape.act.view(), d_out.view());
        let d_pre = d_act * &tape.pre_act.mapv(|z| activate_grad(act, z));
        let d_mid = self.intermediate.backward_rows(tape.mid.view(), d_pre.view()) + &d_out;

        let d_attended = self.attn_norm.backward(&tape.attn_norm, &d_mid);
        let d_context = self.attn_out.backward_rows(tape.context.view(), d_attended.view());
        let mut d_q = Array2::zeros(tape.q.raw_dim());
        let mut d_k = Array2::zeros(tape.k.raw_dim());
        let mut d_v = Array2::zeros(tape.v.raw_dim());
        for (h, p) in tape.probs.iter().enumerate() {
            let cols = s![.., h * hd..(h + 1) * hd];
            let dc = d_context.slice(cols);
            let d_p = dc.dot(&tape.v.slice(cols).t());
            d_v.slice_mut(cols).assign(&p.t().dot(&dc));
            let d_scores = softmax_rows_backward(p, &d_p) / scale;
            d_q.slice_mut(cols).assign(&d_scores.dot(&tape.k.slice(cols)));
            d_k.slice_mut(cols).assign(&d_scores.t().dot(&tape.q.slice(cols)));
        }
        let x: ArrayView2<f64> = tape.input.view();
        d_attended
            + self.query.backward_rows(x, d_q.view())
            + self.key.backward_rows(x, d_k.view())
            + self.value.backward_rows(x, d_v.view())
    }

    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.query.visit(&format!("{prefix}.attention.self.query"), f);
        self.key.visit(&format!("{prefix}.attention.self.key"), f);
        self.value.visit(&format!("{prefix}.attention.self.value"), f);
        self.attn_out.visit(&format!("{prefix}.attention.output.dense"), f);
        self.attn_norm.visit(&format!("{prefix}.attention.output.LayerNorm"), f);
        self.intermediate.visit(&format!("{prefix}.intermediate.dense"), f);
        self.output.visit(&format!("{prefix}.output.dense"), f);
        self.out_norm.visit(&format!("{prefix}.output.LayerNorm"), f);
    }

    pub fn visit_mut(&mut self, prefix: &str, frozen: bool, f: &mut dyn FnMut(ParamMut<'_>)) {
        self.query.visit_mut(&format!("{prefix}.attention.self.query"), frozen, f);
        self.key.visit_mut(&format!("{prefix}.attention.self.key"), frozen, f);
        self.value.visit_mut(&format!("{prefix}.attention.self.value"), frozen, f);
        self.attn_out.visit_mut(&format!("{prefix}.attention.output.dense"), frozen, f);
        self.attn_norm.visit_mut(&format!("{prefix}.attention.output.LayerNorm"), frozen, f);
        self.intermediate.visit_mut(&format!("{prefix}.intermediate.dense"), frozen, f);
        self.output.visit_mut(&format!("{prefix}.output.dense"), frozen, f);
        self.out_norm.visit_mut(&format!("{prefix}.output.LayerNorm"), frozen, f);
    }
}
