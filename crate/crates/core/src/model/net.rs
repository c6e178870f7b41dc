//! Dense math for the toy causal transformer: layer norm, gelu, causal
//! attention, the cached forward pass, and the manual backward pass that
//! carries loss gradients to the input embeddings.

use ndarray::{s, Array1, Array2, ArrayView1};

pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct BlockParams {
    pub ln1_g: Array1<f64>,
    pub ln1_b: Array1<f64>,
    /// Additive attention-score bias on the diagonal (j == i). Negative
    /// values push a head toward prior context instead of itself.
    pub self_bias: f64,
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    pub wo: Array2<f64>,
    pub ln2_g: Array1<f64>,
    pub ln2_b: Array1<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct NetParams {
    pub embed: Array2<f64>,
    pub pos: Array2<f64>,
    pub blocks: Vec<BlockParams>,
    pub lnf_g: Array1<f64>,
    pub lnf_b: Array1<f64>,
}

/// Row-wise layer norm cache: normalized activations and 1/sigma per row.
#[derive(Debug, Clone)]
pub struct LnCache {
    pub x_hat: Array2<f64>,
    pub rstd: Array1<f64>,
}

pub fn layer_norm(x: &Array2<f64>, g: &Array1<f64>, b: &Array1<f64>) -> (Array2<f64>, LnCache) {
    let d = x.ncols() as f64;
    let mut x_hat = x.clone();
    let mut rstd = Array1::zeros(x.nrows());
    for (i, mut row) in x_hat.rows_mut().into_iter().enumerate() {
        let mean = row.sum() / d;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| v * v).sum::<f64>() / d;
        let r = 1.0 / (var + LN_EPS).sqrt();
        row.mapv_inplace(|v| v * r);
        rstd[i] = r;
    }
    let out = &x_hat * g + b;
    (out, LnCache { x_hat, rstd })
}

/// dL/dx given dL/dy for y = g .* x_hat + b.
pub fn layer_norm_backward(cache: &LnCache, g: &Array1<f64>, dy: &Array2<f64>) -> Array2<f64> {
    let d = dy.ncols() as f64;
    let d_xhat = dy * g;
    let mut dx = Array2::zeros(dy.raw_dim());
    for i in 0..dy.nrows() {
        let dh = d_xhat.row(i);
        let xh = cache.x_hat.row(i);
        let mean_dh = dh.sum() / d;
        let mean_dh_xh = dh.dot(&xh) / d;
        let r = cache.rstd[i];
        for j in 0..dy.ncols() {
            dx[[i, j]] = r * (dh[j] - mean_dh - xh[j] * mean_dh_xh);
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Numerically stable row softmax over the first `cols` entries
/// (causal mask: entries past `cols` stay zero).
fn masked_softmax_row(mut row: ndarray::ArrayViewMut1<f64>, cols: usize) {
    let mut max = f64::NEG_INFINITY;
    for j in 0..cols {
        max = max.max(row[j]);
    }
    let mut sum = 0.0;
    for j in 0..cols {
        let e = (row[j] - max).exp();
        row[j] = e;
        sum += e;
    }
    for j in 0..cols {
        row[j] /= sum;
    }
    for j in cols..row.len() {
        row[j] = 0.0;
    }
}

pub fn log_softmax(logits: ArrayView1<f64>) -> Array1<f64> {
    let max = logits.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let lse = logits.iter().map(|&v| (v - max).exp()).sum::<f64>().ln() + max;
    logits.mapv(|v| v - lse)
}

pub fn softmax(logits: ArrayView1<f64>) -> Array1<f64> {
    let max = logits.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut out = logits.mapv(|v| (v - max).exp());
    let sum = out.sum();
    out.mapv_inplace(|v| v / sum);
    out
}

#[derive(Debug, Clone)]
pub struct BlockCache {
    pub ln1: LnCache,
    pub q: Array2<f64>,
    pub k: Array2<f64>,
    pub v: Array2<f64>,
    pub probs: Array2<f64>,
    pub ln2: LnCache,
    pub mlp_pre: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub blocks: Vec<BlockCache>,
    pub lnf: LnCache,
    pub logits: Array2<f64>,
}

/// Full forward pass from input embeddings (token + positional already
/// summed). Returns logits for every position plus the activation cache.
pub fn forward_from_embeddings(params: &NetParams, x0: &Array2<f64>) -> ForwardCache {
    let n = x0.nrows();
    let d = x0.ncols();
    let scale = 1.0 / (d as f64).sqrt();
    let mut x = x0.clone();
    let mut blocks = Vec::with_capacity(params.blocks.len());

    for bp in &params.blocks {
        let x_in = x;
        let (ln1_out, ln1) = layer_norm(&x_in, &bp.ln1_g, &bp.ln1_b);
        let q = ln1_out.dot(&bp.wq);
        let k = ln1_out.dot(&bp.wk);
        let v = ln1_out.dot(&bp.wv);

        let mut probs = q.dot(&k.t());
        probs.mapv_inplace(|s| s * scale);
        for (i, mut row) in probs.rows_mut().into_iter().enumerate() {
            row[i] += bp.self_bias;
            masked_softmax_row(row, i + 1);
        }
        let ctx = probs.dot(&v);
        let h_mid = &x_in + &ctx.dot(&bp.wo);

        let (ln2_out, ln2) = layer_norm(&h_mid, &bp.ln2_g, &bp.ln2_b);
        let mlp_pre = ln2_out.dot(&bp.w1) + &bp.b1;
        let mlp_act = mlp_pre.mapv(gelu);
        x = &h_mid + &mlp_act.dot(&bp.w2) + &bp.b2;

        blocks.push(BlockCache {
            ln1,
            q,
            k,
            v,
            probs,
            ln2,
            mlp_pre,
        });
    }

    let (lnf_out, lnf) = layer_norm(&x, &params.lnf_g, &params.lnf_b);
    // tied unembedding
    let logits = lnf_out.dot(&params.embed.t());
    debug_assert_eq!(logits.nrows(), n);
    ForwardCache {
        blocks,
        lnf,
        logits,
    }
}

/// Backward pass: dL/d(input embeddings) given dL/d(logits).
pub fn backward_to_embeddings(
    params: &NetParams,
    cache: &ForwardCache,
    d_logits: &Array2<f64>,
) -> Array2<f64> {
    let d = params.embed.ncols();
    let scale = 1.0 / (d as f64).sqrt();

    let d_lnf_out = d_logits.dot(&params.embed);
    let mut dx = layer_norm_backward(&cache.lnf, &params.lnf_g, &d_lnf_out);

    for (bp, bc) in params.blocks.iter().zip(&cache.blocks).rev() {
        // mlp branch
        let d_act = dx.dot(&bp.w2.t());
        let mut d_pre = d_act;
        d_pre.zip_mut_with(&bc.mlp_pre, |g, &p| *g *= gelu_grad(p));
        let d_ln2_out = d_pre.dot(&bp.w1.t());
        let mut d_h_mid = dx; // residual
        d_h_mid += &layer_norm_backward(&bc.ln2, &bp.ln2_g, &d_ln2_out);

        // attention branch
        let d_ctx = d_h_mid.dot(&bp.wo.t());
        let d_probs = d_ctx.dot(&bc.v.t());
        let d_v = bc.probs.t().dot(&d_ctx);
        let mut d_scores = Array2::zeros(bc.probs.raw_dim());
        for i in 0..bc.probs.nrows() {
            let p = bc.probs.slice(s![i, ..=i]);
            let dp = d_probs.slice(s![i, ..=i]);
            let dot = p.dot(&dp);
            for j in 0..=i {
                d_scores[[i, j]] = p[j] * (dp[j] - dot);
            }
        }
        d_scores.mapv_inplace(|g| g * scale);
        let d_q = d_scores.dot(&bc.k);
        let d_k = d_scores.t().dot(&bc.q);
        let d_ln1_out = d_q.dot(&bp.wq.t()) + d_k.dot(&bp.wk.t()) + d_v.dot(&bp.wv.t());
        let mut d_x_in = d_h_mid; // residual
        d_x_in += &layer_norm_backward(&bc.ln1, &bp.ln1_g, &d_ln1_out);
        dx = d_x_in;
    }
    dx
}

/// Per-layer key/value store for incremental decoding.
#[derive(Debug, Clone, Default)]
pub struct KvCache {
    layers: Vec<(Vec<Array1<f64>>, Vec<Array1<f64>>)>,
}

impl KvCache {
    pub fn new(n_layers: usize) -> Self {
        Self {
            layers: vec![(Vec::new(), Vec::new()); n_layers],
        }
    }
}

fn ln_row(x: &Array1<f64>, g: &Array1<f64>, b: &Array1<f64>) -> Array1<f64> {
    let d = x.len() as f64;
    let mean = x.sum() / d;
    let centered = x.mapv(|v| v - mean);
    let var = centered.iter().map(|v| v * v).sum::<f64>() / d;
    let r = 1.0 / (var + LN_EPS).sqrt();
    centered.mapv(|v| v * r) * g + b
}

/// Advance the cache by one input embedding; returns the logits at the
/// new position.
pub fn step_with_cache(params: &NetParams, cache: &mut KvCache, x_new: &Array1<f64>) -> Array1<f64> {
    let d = x_new.len() as f64;
    let scale = 1.0 / d.sqrt();
    let mut x = x_new.clone();

    for (bp, (ks, vs)) in params.blocks.iter().zip(cache.layers.iter_mut()) {
        let ln1_out = ln_row(&x, &bp.ln1_g, &bp.ln1_b);
        let q = ln1_out.dot(&bp.wq);
        ks.push(ln1_out.dot(&bp.wk));
        vs.push(ln1_out.dot(&bp.wv));

        let mut scores: Vec<f64> = ks.iter().map(|k| q.dot(k) * scale).collect();
        *scores.last_mut().expect("self entry") += bp.self_bias;
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for sc in scores.iter_mut() {
            *sc = (*sc - max).exp();
            sum += *sc;
        }
        let mut ctx: Array1<f64> = Array1::zeros(x.len());
        for (w, v) in scores.iter().zip(vs.iter()) {
            ctx.scaled_add(w / sum, v);
        }
        let h_mid = &x + &ctx.dot(&bp.wo);

        let ln2_out = ln_row(&h_mid, &bp.ln2_g, &bp.ln2_b);
        let pre = ln2_out.dot(&bp.w1) + &bp.b1;
        let act = pre.mapv(gelu);
        x = &h_mid + &act.dot(&bp.w2) + &bp.b2;
    }
    ln_row(&x, &params.lnf_g, &params.lnf_b).dot(&params.embed.t())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;
    use rand::prelude::*;
    use rand_chacha::ChaCha20Rng;

    fn randn(rng: &mut ChaCha20Rng, shape: (usize, usize), sigma: f64) -> Array2<f64> {
        Array::from_shape_fn(shape, |_| {
            // Box-Muller keeps this module free of rand_distr
            let u1: f64 = rng.random::<f64>().max(1e-12);
            let u2: f64 = rng.random();
            sigma * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        })
    }

    fn tiny_params(rng: &mut ChaCha20Rng) -> NetParams {
        let (v, d, ff) = (8, 6, 10);
        let block = |rng: &mut ChaCha20Rng| BlockParams {
            ln1_g: Array1::ones(d),
            ln1_b: Array1::zeros(d),
            self_bias: -0.7,
            wq: randn(rng, (d, d), 0.3),
            wk: randn(rng, (d, d), 0.3),
            wv: randn(rng, (d, d), 0.3),
            wo: randn(rng, (d, d), 0.3),
            ln2_g: Array1::ones(d),
            ln2_b: Array1::zeros(d),
            w1: randn(rng, (d, ff), 0.3),
            b1: Array1::zeros(ff),
            w2: randn(rng, (ff, d), 0.3),
            b2: Array1::zeros(d),
        };
        NetParams {
            embed: randn(rng, (v, d), 1.0),
            pos: randn(rng, (16, d), 0.1),
            blocks: vec![block(rng), block(rng)],
            lnf_g: Array1::ones(d),
            lnf_b: Array1::zeros(d),
        }
    }

    fn scalar_loss(params: &NetParams, x0: &Array2<f64>) -> (f64, Array2<f64>) {
        // simple probe loss: log-softmax of token 3 at the last position
        let cache = forward_from_embeddings(params, x0);
        let last = cache.logits.nrows() - 1;
        let lp = log_softmax(cache.logits.row(last));
        let loss = -lp[3];
        let mut d_logits = Array2::zeros(cache.logits.raw_dim());
        let sm = softmax(cache.logits.row(last));
        for j in 0..sm.len() {
            d_logits[[last, j]] = sm[j] - if j == 3 { 1.0 } else { 0.0 };
        }
        (loss, d_logits)
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let params = tiny_params(&mut rng);
        let n = 5;
        let x0 = randn(&mut rng, (n, params.embed.ncols()), 1.0);

        let cache = forward_from_embeddings(&params, &x0);
        let (_, d_logits) = scalar_loss(&params, &x0);
        let dx = backward_to_embeddings(&params, &cache, &d_logits);

        let h = 1e-5;
        let mut checked = 0;
        for i in 0..n {
            for j in 0..params.embed.ncols() {
                let mut xp = x0.clone();
                xp[[i, j]] += h;
                let mut xm = x0.clone();
                xm[[i, j]] -= h;
                let fd = (scalar_loss(&params, &xp).0 - scalar_loss(&params, &xm).0) / (2.0 * h);
                let got = dx[[i, j]];
                let denom = fd.abs().max(got.abs()).max(1e-8);
                assert!(
                    ((fd - got) / denom).abs() < 1e-4,
                    "fd {fd} vs analytic {got} at ({i},{j})"
                );
                checked += 1;
            }
        }
        assert!(checked > 0);
    }

    #[test]
    fn cached_and_uncached_forward_agree() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let params = tiny_params(&mut rng);
        let n = 7;
        let x0 = randn(&mut rng, (n, params.embed.ncols()), 1.0);

        let full = forward_from_embeddings(&params, &x0);
        let mut kv = KvCache::new(params.blocks.len());
        for i in 0..n {
            let logits = step_with_cache(&params, &mut kv, &x0.row(i).to_owned());
            for j in 0..logits.len() {
                assert!((logits[j] - full.logits[[i, j]]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn log_softmax_normalizes() {
        let v = Array1::from(vec![0.3, -1.2, 2.0, 0.0]);
        let lp = log_softmax(v.view());
        let total: f64 = lp.iter().map(|l| l.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gelu_grad_matches_fd() {
        for &x in &[-2.5, -0.7, 0.0, 0.3, 1.9] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }
}
