//! Dense building blocks with explicit backward passes.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::{cast, Scalar};

pub const LN_EPS: f64 = 1e-5;

/// `y = x · weight + bias`, weight stored `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<F> {
    pub weight: Array2<F>,
    pub bias: Array1<F>,
}

impl<F: Scalar> Linear<F> {
    pub fn zeros(input: usize, output: usize) -> Self {
        Linear {
            weight: Array2::zeros((input, output)),
            bias: Array1::zeros(output),
        }
    }

    /// Xavier-uniform weights scaled by `gain`, zero bias.
    pub fn xavier<R: Rng + ?Sized>(input: usize, output: usize, gain: f64, rng: &mut R) -> Self {
        let a = gain * (6.0 / (input + output) as f64).sqrt();
        let dist = Uniform::new_inclusive(-a, a).expect("finite bound");
        Linear {
            weight: Array2::from_shape_simple_fn((input, output), || cast(dist.sample(rng))),
            bias: Array1::zeros(output),
        }
    }

    pub fn forward(&self, x: &ArrayView2<F>) -> Array2<F> {
        let mut y = x.dot(&self.weight);
        y += &self.bias;
        y
    }

    /// Accumulates parameter gradients into `grad`; returns `dL/dx`.
    pub fn backward(&self, x: &ArrayView2<F>, dy: &ArrayView2<F>, grad: &mut Linear<F>) -> Array2<F> {
        self.backward_with(x, dy, grad, &transpose(&self.weight.view()))
    }

    /// As [`Linear::backward`] with a precomputed `weightᵀ`, for layers
    /// applied several times per pass.
    pub fn backward_with(&self, x: &ArrayView2<F>, dy: &ArrayView2<F>, grad: &mut Linear<F>, weight_t: &Array2<F>) -> Array2<F> {
        self.accumulate(x, dy, grad);
        dy.dot(weight_t)
    }

    pub fn accumulate(&self, x: &ArrayView2<F>, dy: &ArrayView2<F>, grad: &mut Linear<F>) {
        general_mat_mul(F::one(), &x.t(), dy, F::one(), &mut grad.weight);
        grad.bias += &dy.sum_axis(Axis(0));
    }

    pub fn num_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm<F> {
    pub gamma: Array1<F>,
    pub beta: Array1<F>,
}

#[derive(Debug, Clone)]
pub struct LnCache<F> {
    xhat: Array2<F>,
    rstd: Array1<F>,
}

impl<F: Scalar> LayerNorm<F> {
    pub fn new(dim: usize) -> Self {
        LayerNorm {
            gamma: Array1::ones(dim),
            beta: Array1::zeros(dim),
        }
    }

    pub fn zeros(dim: usize) -> Self {
        LayerNorm {
            gamma: Array1::zeros(dim),
            beta: Array1::zeros(dim),
        }
    }

    pub fn forward(&self, x: &ArrayView2<F>) -> (Array2<F>, LnCache<F>) {
        let (n, d) = x.dim();
        let inv_d = cast::<F>(1.0 / d as f64);
        let eps = cast::<F>(LN_EPS);
        let mut xhat = Array2::zeros((n, d));
        let mut rstd = Array1::zeros(n);
        for (i, row) in x.axis_iter(Axis(0)).enumerate() {
            let mean = row.sum() * inv_d;
            let var = row.fold(F::zero(), |acc, &v| acc + (v - mean) * (v - mean)) * inv_d;
            let r = F::one() / (var + eps).sqrt();
            rstd[i] = r;
            xhat.row_mut(i).zip_mut_with(&row, |o, &v| *o = (v - mean) * r);
        }
        let mut y = &xhat * &self.gamma;
        y += &self.beta;
        (y, LnCache { xhat, rstd })
    }

    pub fn backward(&self, dy: &ArrayView2<F>, cache: &LnCache<F>, grad: &mut LayerNorm<F>) -> Array2<F> {
        let (n, d) = dy.dim();
        grad.gamma += &(dy * &cache.xhat).sum_axis(Axis(0));
        grad.beta += &dy.sum_axis(Axis(0));
        let inv_d = cast::<F>(1.0 / d as f64);
        let mut dx = Array2::zeros((n, d));
        for i in 0..n {
            let dxhat = &dy.row(i) * &self.gamma;
            let xh = cache.xhat.row(i);
            let sum = dxhat.sum();
            let dot = (&dxhat * &xh).sum();
            let r = cache.rstd[i];
            dx.row_mut(i).assign(&((&dxhat - &(&xh * dot * inv_d)) - sum * inv_d).mapv(|v| v * r));
        }
        dx
    }
}

pub fn relu_inplace<F: Scalar>(x: &mut Array2<F>) {
    x.mapv_inplace(|v| if v > F::zero() { v } else { F::zero() });
}

/// Zeroes `grad` where the forward pre-activation was non-positive.
pub fn relu_backward_inplace<F: Scalar>(grad: &mut Array2<F>, pre: &Array2<F>) {
    grad.zip_mut_with(pre, |g, &p| {
        if p <= F::zero() {
            *g = F::zero();
        }
    });
}

/// Row-wise softmax in place.
pub fn softmax_rows<F: Scalar>(x: &mut Array2<F>) {
    for mut row in x.axis_iter_mut(Axis(0)) {
        let max = row.fold(F::neg_infinity(), |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

/// Contiguous transpose. Multiplying by a transposed view is several times
/// slower than by a contiguous matrix, so backward passes transpose first.
pub fn transpose<F: Scalar>(a: &ArrayView2<F>) -> Array2<F> {
    const TILE: usize = 32;
    let (r, c) = a.dim();
    let a = a.as_standard_layout();
    let src = a.as_slice().expect("standard layout");
    let mut out = vec![F::zero(); r * c];
    for i0 in (0..r).step_by(TILE) {
        let i1 = (i0 + TILE).min(r);
        for j0 in (0..c).step_by(TILE) {
            let j1 = (j0 + TILE).min(c);
            for i in i0..i1 {
                let row = &src[i * c + j0..i * c + j1];
                for (dj, &v) in row.iter().enumerate() {
                    out[(j0 + dj) * r + i] = v;
                }
            }
        }
    }
    Array2::from_shape_vec((c, r), out).expect("shape matches")
}

/// Copies `a` and `b` side by side.
pub fn hconcat<F: Scalar>(a: &ArrayView2<F>, b: &ArrayView2<F>) -> Array2<F> {
    let (n, da) = a.dim();
    let db = b.ncols();
    let mut out = Array2::zeros((n, da + db));
    out.slice_mut(s![.., ..da]).assign(a);
    out.slice_mut(s![.., da..]).assign(b);
    out
}
