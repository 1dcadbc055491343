//! Minimal trainable building blocks with hand-written backward passes.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

/// Mutable access to one named parameter tensor and its gradient buffer.
pub struct ParamMut<'a> {
    pub name: &'a str,
    pub value: &'a mut [f64],
    pub grad: &'a mut [f64],
    pub frozen: bool,
}

/// Anything owning named parameters: encoders, heads, single layers.
pub trait Parameterized {
    /// Visits `(name, shape, values)` for every parameter in a fixed order.
    fn visit_params(&self, f: &mut dyn FnMut(&str, &[usize], &[f64]));

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(ParamMut<'_>));

    fn zero_grad(&mut self) {
        self.visit_params_mut(&mut |p| p.grad.fill(0.0));
    }

    /// True when at least one parameter is not frozen.
    fn has_trainable(&mut self) -> bool {
        let mut any = false;
        self.visit_params_mut(&mut |p| any |= !p.frozen);
        any
    }

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, _, v| n += v.len());
        n
    }
}

/// Weight/gradient pair for a matrix parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    pub value: Array2<f64>,
    pub grad: Array2<f64>,
}

impl Matrix {
    pub fn new(value: Array2<f64>) -> Self {
        let grad = Array2::zeros(value.raw_dim());
        Matrix { value, grad }
    }

    pub fn visit(&self, name: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        f(name, self.value.shape(), self.value.as_slice().expect("standard layout"));
    }

    pub fn visit_mut(&mut self, name: &str, frozen: bool, f: &mut dyn FnMut(ParamMut<'_>)) {
        f(ParamMut {
            name,
            value: self.value.as_slice_mut().expect("standard layout"),
            grad: self.grad.as_slice_mut().expect("standard layout"),
            frozen,
        });
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Vector {
    pub value: Array1<f64>,
    pub grad: Array1<f64>,
}

impl Vector {
    pub fn new(value: Array1<f64>) -> Self {
        let grad = Array1::zeros(value.len());
        Vector { value, grad }
    }

    pub fn visit(&self, name: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        f(name, self.value.shape(), self.value.as_slice().expect("standard layout"));
    }

    pub fn visit_mut(&mut self, name: &str, frozen: bool, f: &mut dyn FnMut(ParamMut<'_>)) {
        f(ParamMut {
            name,
            value: self.value.as_slice_mut().expect("standard layout"),
            grad: self.grad.as_slice_mut().expect("standard layout"),
            frozen,
        });
    }
}

/// Uniform initialization in `[-bound, bound]`.
pub fn uniform(rows: usize, cols: usize, bound: f64, rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-bound..=bound))
}

/// Affine map `y = W x + b` with `W` stored as `out × in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Vector,
}

impl Linear {
    pub fn zeros(input: usize, output: usize) -> Self {
        Linear {
            weight: Matrix::new(Array2::zeros((output, input))),
            bias: Vector::new(Array1::zeros(output)),
        }
    }

    /// PyTorch-style default: weights and bias uniform in ±1/√in.
    pub fn init(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        let weight = uniform(output, input, bound, rng);
        let bias = Array1::from_shape_simple_fn(output, || rng.gen_range(-bound..=bound));
        Linear {
            weight: Matrix::new(weight),
            bias: Vector::new(bias),
        }
    }

    pub fn from_parts(weight: Array2<f64>, bias: Array1<f64>) -> Self {
        assert_eq!(weight.nrows(), bias.len(), "bias length must match output dim");
        Linear {
            weight: Matrix::new(weight),
            bias: Vector::new(bias),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.value.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.value.nrows()
    }

    pub fn forward(&self, x: ArrayView1<f64>) -> Array1<f64> {
        self.weight.value.dot(&x) + &self.bias.value
    }

    /// Row-wise forward: `X Wᵀ + b` for `X` of shape `n × in`.
    pub fn forward_rows(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.weight.value.t()) + &self.bias.value
    }

    /// Accumulates parameter gradients and returns `∂L/∂x`.
    pub fn backward(&mut self, x: ArrayView1<f64>, dy: ArrayView1<f64>) -> Array1<f64> {
        let outer = dy
            .view()
            .insert_axis(Axis(1))
            .dot(&x.view().insert_axis(Axis(0)));
        self.weight.grad += &outer;
        self.bias.grad += &dy;
        self.weight.value.t().dot(&dy)
    }

    pub fn backward_rows(&mut self, x: ArrayView2<f64>, dy: ArrayView2<f64>) -> Array2<f64> {
        self.weight.grad += &dy.t().dot(&x);
        self.bias.grad += &dy.sum_axis(Axis(0));
        dy.dot(&self.weight.value)
    }

    /// Backward pass that only propagates to the input.
    pub fn input_grad_rows(&self, dy: ArrayView2<f64>) -> Array2<f64> {
        dy.dot(&self.weight.value)
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

/// Numerically stable row-wise softmax.
pub fn softmax_rows(scores: &Array2<f64>) -> Array2<f64> {
    let mut out = scores.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    out
}

/// Backward of [`softmax_rows`] given its output `probs` and `∂L/∂probs`.
pub fn softmax_rows_backward(probs: &Array2<f64>, d_probs: &Array2<f64>) -> Array2<f64> {
    let dot = (probs * d_probs).sum_axis(Axis(1)).insert_axis(Axis(1));
    probs * &(d_probs - &dot)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut lin = Linear::init(4, 3, &mut rng);
        let x = array![0.3, -1.2, 0.7, 2.0];
        let probe = array![1.0, -2.0, 0.5];
        let dx = lin.backward(x.view(), probe.view());
        let h = 1e-6;
        for i in 0..4 {
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            let fd = (lin.forward(xp.view()).dot(&probe) - lin.forward(xm.view()).dot(&probe)) / (2.0 * h);
            assert!((fd - dx[i]).abs() < 1e-7);
        }
        // ∂(probe·y)/∂W[o,i] = probe[o] x[i]
        assert!((lin.weight.grad[[2, 3]] - 0.5 * 2.0).abs() < 1e-12);
        assert_eq!(lin.bias.grad, probe);
    }

    #[test]
    fn softmax_rows_sum_to_one_and_backward_is_consistent() {
        let s = array![[1.0, 2.0, 3.0], [1000.0, 1000.0, 0.0]];
        let p = softmax_rows(&s);
        for row in p.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
        let upstream = array![[0.2, -0.1, 0.4], [1.0, 0.0, -1.0]];
        let ds = softmax_rows_backward(&p, &upstream);
        let h = 1e-6;
        for r in 0..2 {
            for c in 0..3 {
                let mut sp = s.clone();
                sp[[r, c]] += h;
                let mut sm = s.clone();
                sm[[r, c]] -= h;
                let fd = ((softmax_rows(&sp) * &upstream).sum() - (softmax_rows(&sm) * &upstream).sum()) / (2.0 * h);
                assert!((fd - ds[[r, c]]).abs() < 1e-6, "{fd} vs {}", ds[[r, c]]);
            }
        }
    }
}
