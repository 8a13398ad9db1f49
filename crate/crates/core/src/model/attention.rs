//! Bidirectional multi-head scaled dot-product attention over each sequence
//! of a batch. Rows of the fused `qkv` matrix are `batch × len` tokens; its
//! columns hold the queries, keys and values side by side.

use ndarray::{s, Array2, ArrayView2, Axis};

use super::layers::softmax_rows;
use super::{cast, Scalar};

#[derive(Debug, Clone)]
pub struct AttentionCache<F> {
    /// Attention weights, one `len × len` matrix per (sequence, head).
    pub probs: Vec<Array2<F>>,
}

pub fn attention_forward<F: Scalar>(
    qkv: &ArrayView2<F>,
    batch: usize,
    len: usize,
    heads: usize,
) -> (Array2<F>, AttentionCache<F>) {
    let d = qkv.ncols() / 3;
    let dh = d / heads;
    let scale = cast::<F>(1.0 / (dh as f64).sqrt());
    let mut ctx = Array2::zeros((batch * len, d));
    let mut probs = Vec::with_capacity(batch * heads);
    for b in 0..batch {
        let rows = b * len..(b + 1) * len;
        for h in 0..heads {
            let c = h * dh;
            let q = qkv.slice(s![rows.clone(), c..c + dh]);
            let k = qkv.slice(s![rows.clone(), d + c..d + c + dh]);
            let v = qkv.slice(s![rows.clone(), 2 * d + c..2 * d + c + dh]);
            let mut p = q.dot(&k.t());
            p.mapv_inplace(|x| x * scale);
            softmax_rows(&mut p);
            ctx.slice_mut(s![rows.clone(), c..c + dh]).assign(&p.dot(&v));
            probs.push(p);
        }
    }
    (ctx, AttentionCache { probs })
}

pub fn attention_backward<F: Scalar>(
    dctx: &ArrayView2<F>,
    qkv: &ArrayView2<F>,
    cache: &AttentionCache<F>,
    batch: usize,
    len: usize,
    heads: usize,
) -> Array2<F> {
    let d = qkv.ncols() / 3;
    let dh = d / heads;
    let scale = cast::<F>(1.0 / (dh as f64).sqrt());
    let mut dqkv = Array2::zeros(qkv.raw_dim());
    for b in 0..batch {
        let rows = b * len..(b + 1) * len;
        for h in 0..heads {
            let c = h * dh;
            let p = &cache.probs[b * heads + h];
            let q = qkv.slice(s![rows.clone(), c..c + dh]);
            let k = qkv.slice(s![rows.clone(), d + c..d + c + dh]);
            let v = qkv.slice(s![rows.clone(), 2 * d + c..2 * d + c + dh]);
            let dout = dctx.slice(s![rows.clone(), c..c + dh]);
            let dv = p.t().dot(&dout);
            let dp = dout.dot(&v.t());
            // softmax backward: dS = P ⊙ (dP − rowsum(dP ⊙ P))
            let inner = (&dp * p).sum_axis(Axis(1)).insert_axis(Axis(1));
            let mut ds = (&dp - &inner) * p;
            ds.mapv_inplace(|x| x * scale);
            let dq = ds.dot(&k);
            let dk = ds.t().dot(&q);
            dqkv.slice_mut(s![rows.clone(), c..c + dh]).assign(&dq);
            dqkv.slice_mut(s![rows.clone(), d + c..d + c + dh]).assign(&dk);
            dqkv.slice_mut(s![rows.clone(), 2 * d + c..2 * d + c + dh]).assign(&dv);
        }
    }
    dqkv
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn weights_are_row_stochastic() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let qkv = Array2::from_shape_simple_fn((2 * 5, 3 * 8), || rng.random_range(-2.0..2.0f64));
        let (_, cache) = attention_forward(&qkv.view(), 2, 5, 2);
        assert_eq!(cache.probs.len(), 4);
        for p in &cache.probs {
            for row in p.rows() {
                assert!((row.sum() - 1.0).abs() < 1e-12);
                assert!(row.iter().all(|&x| x >= 0.0));
            }
        }
    }

    #[test]
    fn single_token_passes_values_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let qkv = Array2::from_shape_simple_fn((3, 3 * 4), || rng.random_range(-1.0..1.0f64));
        let (ctx, _) = attention_forward(&qkv.view(), 3, 1, 2);
        assert_eq!(ctx, qkv.slice(s![.., 8..12]));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (batch, len, heads, d) = (2, 3, 2, 4);
        let qkv = Array2::from_shape_simple_fn((batch * len, 3 * d), || rng.random_range(-1.0..1.0f64));
        let w = Array2::from_shape_simple_fn((batch * len, d), || rng.random_range(-1.0..1.0f64));
        let f = |x: &Array2<f64>| (&attention_forward(&x.view(), batch, len, heads).0 * &w).sum();
        let (_, cache) = attention_forward(&qkv.view(), batch, len, heads);
        let an = attention_backward(&w.view(), &qkv.view(), &cache, batch, len, heads);
        let h = 1e-6;
        for idx in 0..qkv.len() {
            let (i, j) = (idx / qkv.ncols(), idx % qkv.ncols());
            let mut p = qkv.clone();
            p[[i, j]] += h;
            let mut m = qkv.clone();
            m[[i, j]] -= h;
            let fd = (f(&p) - f(&m)) / (2.0 * h);
            assert!((fd - an[[i, j]]).abs() < 1e-7, "({i},{j}) fd {fd} an {}", an[[i, j]]);
        }
    }
}
