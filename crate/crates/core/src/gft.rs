//! Gated cross-attention fusion of frame and audio token streams.
//!
//! L pre-norm residual layers inject audio cues into the frame embeddings,
//! followed by mean pooling to a single fused vector. Per layer, with frames
//! x (N x D) and audio a (M x D):
//!
//!   h    = LN1(x)
//!   attn = CrossAttn(query = h, key/value = a)
//!   g    = sigmoid([h || attn] @ w_gate + b_gate)      elementwise
//!   x    = x + g * attn
//!   x    = x + FFN(LN2(x))                             silu(x @ w1 + b1) @ w2 + b2
//!
//! The gate can close smoothly (bias -> -inf makes the output independent of
//! audio). No positional encodings anywhere: permuting frame rows leaves the
//! pooled output unchanged, as does permuting audio tokens.

use crate::error::{Error, Result};
use crate::params::GatedFusionParams;
use crate::tensor::{
    matmul, matmul_nt, matmul_tn, sigmoid, silu, silu_deriv, softmax_rows, softmax_rows_backward,
    Tensor2,
};

const LN_EPS: f64 = 1e-5;

/// Column-wise arithmetic mean over rows. Errors on an empty input.
pub fn mean_pool(x: &Tensor2) -> Result<Vec<f64>> {
    x.mean_rows()
}

pub struct LnCache {
    pub xhat: Tensor2,
    pub inv_std: Vec<f64>,
}

fn ln_forward(x: &Tensor2, gamma: &Tensor2, beta: &Tensor2) -> (Tensor2, LnCache) {
    let d = x.cols();
    let mut y = Tensor2::zeros(x.rows(), d);
    let mut xhat = Tensor2::zeros(x.rows(), d);
    let mut inv_std = vec![0.0; x.rows()];
    let g = gamma.row(0);
    let b = beta.row(0);
    for i in 0..x.rows() {
        let row = x.row(i);
        let mu = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        inv_std[i] = inv;
        let xh = xhat.row_mut(i);
        let yr = y.row_mut(i);
        for j in 0..d {
            let xv = (row[j] - mu) * inv;
            xh[j] = xv;
            yr[j] = g[j] * xv + b[j];
        }
    }
    (y, LnCache { xhat, inv_std })
}

fn ln_backward(
    cache: &LnCache,
    gamma: &Tensor2,
    d_y: &Tensor2,
    d_gamma: &mut Tensor2,
    d_beta: &mut Tensor2,
) -> Tensor2 {
    let d = d_y.cols();
    let mut d_x = Tensor2::zeros(d_y.rows(), d);
    let g = gamma.row(0);
    for i in 0..d_y.rows() {
        let dy = d_y.row(i);
        let xh = cache.xhat.row(i);
        let inv = cache.inv_std[i];
        let dg = d_gamma.row_mut(0);
        let db = d_beta.row_mut(0);
        let mut m1 = 0.0;
        let mut m2 = 0.0;
        for j in 0..d {
            let dxh = dy[j] * g[j];
            m1 += dxh;
            m2 += dxh * xh[j];
            dg[j] += dy[j] * xh[j];
            db[j] += dy[j];
        }
        m1 /= d as f64;
        m2 /= d as f64;
        let dx = d_x.row_mut(i);
        for j in 0..d {
            let dxh = dy[j] * g[j];
            dx[j] = inv * (dxh - m1 - xh[j] * m2);
        }
    }
    d_x
}

/// Sum of rows as a 1 x C tensor (bias gradients).
fn col_sums(x: &Tensor2) -> Tensor2 {
    let mut out = Tensor2::zeros(1, x.cols());
    for i in 0..x.rows() {
        let row = x.row(i);
        let o = out.row_mut(0);
        for (ov, v) in o.iter_mut().zip(row) {
            *ov += v;
        }
    }
    out
}

/// x @ w + b with b broadcast over rows.
fn linear(x: &Tensor2, w: &Tensor2, b: &Tensor2) -> Result<Tensor2> {
    let mut y = matmul(x, w)?;
    let bias = b.row(0);
    for i in 0..y.rows() {
        let row = y.row_mut(i);
        for (v, bv) in row.iter_mut().zip(bias) {
            *v += bv;
        }
    }
    Ok(y)
}

pub struct LayerCache {
    pub x_in: Tensor2,
    pub ln1: LnCache,
    pub h: Tensor2,
    pub q: Tensor2,
    pub keys: Tensor2,
    pub values: Tensor2,
    pub attn_w: Tensor2,
    pub ctx: Tensor2,
    pub attn_out: Tensor2,
    pub gate_in: Tensor2,
    pub gate: Tensor2,
    pub x_mid: Tensor2,
    pub ln2: LnCache,
    pub h2: Tensor2,
    pub ffn_pre: Tensor2,
    pub ffn_act: Tensor2,
}

pub struct FusionCache {
    pub layers: Vec<LayerCache>,
    pub n_frames: usize,
    pub audio_rows: usize,
}

/// Fuse frames (N x D) with audio tokens (M x D) into a single D-vector.
pub fn fuse_av(frames: &Tensor2, audio: &Tensor2, params: &GatedFusionParams) -> Result<Vec<f64>> {
    let (out, _) = forward(frames, audio, params)?;
    Ok(out)
}

pub fn forward(
    frames: &Tensor2,
    audio: &Tensor2,
    params: &GatedFusionParams,
) -> Result<(Vec<f64>, FusionCache)> {
    if frames.rows() == 0 {
        return Err(Error::EmptyInput { what: "frame sequence" });
    }
    let d = params.layers[0].w_query.rows();
    if frames.cols() != d || audio.cols() != d {
        return Err(Error::DimMismatch {
            op: "fuse_av",
            detail: format!(
                "frames width {} and audio width {} must both be {}",
                frames.cols(),
                audio.cols(),
                d
            ),
        });
    }

    let scale = 1.0 / (d as f64).sqrt();
    let n = frames.rows();
    let mut x = frames.clone();
    let mut caches = Vec::with_capacity(params.layers.len());

    for layer in &params.layers {
        let x_in = x.clone();
        let (h, ln1) = ln_forward(&x, &layer.ln1_gamma, &layer.ln1_beta);

        let q = matmul(&h, &layer.w_query)?;
        let keys = matmul(audio, &layer.w_key)?;
        let values = matmul(audio, &layer.w_value)?;
        let mut scores = matmul_nt(&q, &keys)?;
        scores.scale_inplace(scale);
        let attn_w = softmax_rows(&scores);
        let ctx = matmul(&attn_w, &values)?;
        let attn_out = matmul(&ctx, &layer.w_out)?;

        // gate over [h || attn_out]
        let mut gate_in = Tensor2::zeros(n, 2 * d);
        for i in 0..n {
            gate_in.row_mut(i)[..d].copy_from_slice(h.row(i));
            gate_in.row_mut(i)[d..].copy_from_slice(attn_out.row(i));
        }
        let gate_pre = linear(&gate_in, &layer.w_gate, &layer.b_gate)?;
        let mut gate = gate_pre;
        for v in gate.data_mut() {
            *v = sigmoid(*v);
        }

        for i in 0..n {
            let xr = x.row_mut(i);
            let gr = gate.row(i);
            let ar = attn_out.row(i);
            for j in 0..d {
                xr[j] += gr[j] * ar[j];
            }
        }
        let x_mid = x.clone();

        let (h2, ln2) = ln_forward(&x, &layer.ln2_gamma, &layer.ln2_beta);
        let ffn_pre = linear(&h2, &layer.w_ff1, &layer.b_ff1)?;
        let mut ffn_act = ffn_pre.clone();
        for v in ffn_act.data_mut() {
            *v = silu(*v);
        }
        let ffn_out = linear(&ffn_act, &layer.w_ff2, &layer.b_ff2)?;
        x.add_inplace(&ffn_out);

        caches.push(LayerCache {
            x_in,
            ln1,
            h,
            q,
            keys,
            values,
            attn_w,
            ctx,
            attn_out,
            gate_in,
            gate,
            x_mid,
            ln2,
            h2,
            ffn_pre,
            ffn_act,
        });
    }

    let pooled = mean_pool(&x)?;
    Ok((
        pooled,
        FusionCache {
            layers: caches,
            n_frames: n,
            audio_rows: audio.rows(),
        },
    ))
}

/// Backward pass from the pooled output gradient. Accumulates parameter
/// gradients into `grads` and returns gradients with respect to the audio
/// tokens (summed over all layers). `audio` must be the same tensor that was
/// passed to [`forward`].
pub fn backward_with_audio(
    cache: &FusionCache,
    params: &GatedFusionParams,
    audio: &Tensor2,
    d_pooled: &[f64],
    grads: &mut GatedFusionParams,
) -> Result<Tensor2> {
    let n = cache.n_frames;
    let d = d_pooled.len();
    let scale = 1.0 / (d as f64).sqrt();

    let mut d_x = Tensor2::zeros(n, d);
    let inv_n = 1.0 / n as f64;
    for i in 0..n {
        let row = d_x.row_mut(i);
        for (rv, dv) in row.iter_mut().zip(d_pooled) {
            *rv = dv * inv_n;
        }
    }

    let mut d_audio = Tensor2::zeros(cache.audio_rows, d);

    for ((layer, lc), lg) in params
        .layers
        .iter()
        .zip(&cache.layers)
        .zip(grads.layers.iter_mut())
        .rev()
    {
        // FFN residual
        let d_ffn_out = d_x.clone();
        lg.b_ff2.add_inplace(&col_sums(&d_ffn_out));
        lg.w_ff2.add_inplace(&matmul_tn(&lc.ffn_act, &d_ffn_out)?);
        let d_act = matmul_nt(&d_ffn_out, &layer.w_ff2)?;
        let mut d_pre = d_act;
        for (dv, pv) in d_pre.data_mut().iter_mut().zip(lc.ffn_pre.data()) {
            *dv *= silu_deriv(*pv);
        }
        lg.b_ff1.add_inplace(&col_sums(&d_pre));
        lg.w_ff1.add_inplace(&matmul_tn(&lc.h2, &d_pre)?);
        let d_h2 = matmul_nt(&d_pre, &layer.w_ff1)?;
        let d_from_ln2 = ln_backward(
            &lc.ln2,
            &layer.ln2_gamma,
            &d_h2,
            &mut lg.ln2_gamma,
            &mut lg.ln2_beta,
        );
        let mut d_x_mid = d_x;
        d_x_mid.add_inplace(&d_from_ln2);

        // gated residual
        let mut d_gate = Tensor2::zeros(n, d);
        let mut d_attn_out = Tensor2::zeros(n, d);
        for i in 0..n {
            let dm = d_x_mid.row(i);
            let gr = lc.gate.row(i);
            let ar = lc.attn_out.row(i);
            let dg = d_gate.row_mut(i);
            let da = d_attn_out.row_mut(i);
            for j in 0..d {
                dg[j] = dm[j] * ar[j];
                da[j] = dm[j] * gr[j];
            }
        }
        let mut d_gate_pre = d_gate;
        for (dv, gv) in d_gate_pre.data_mut().iter_mut().zip(lc.gate.data()) {
            *dv *= gv * (1.0 - gv);
        }
        lg.b_gate.add_inplace(&col_sums(&d_gate_pre));
        lg.w_gate.add_inplace(&matmul_tn(&lc.gate_in, &d_gate_pre)?);
        let d_gate_in = matmul_nt(&d_gate_pre, &layer.w_gate)?;

        let mut d_h = Tensor2::zeros(n, d);
        for i in 0..n {
            let gi = d_gate_in.row(i);
            d_h.row_mut(i).copy_from_slice(&gi[..d]);
            let da = d_attn_out.row_mut(i);
            for j in 0..d {
                da[j] += gi[d + j];
            }
        }

        // attention
        lg.w_out.add_inplace(&matmul_tn(&lc.ctx, &d_attn_out)?);
        let d_ctx = matmul_nt(&d_attn_out, &layer.w_out)?;
        let d_attn_w = matmul_nt(&d_ctx, &lc.values)?;
        let d_values = matmul_tn(&lc.attn_w, &d_ctx)?;
        let mut d_scores = softmax_rows_backward(&lc.attn_w, &d_attn_w);
        d_scores.scale_inplace(scale);
        let d_q = matmul(&d_scores, &lc.keys)?;
        let d_keys = matmul_tn(&d_scores, &lc.q)?;

        lg.w_query.add_inplace(&matmul_tn(&lc.h, &d_q)?);
        d_h.add_inplace(&matmul_nt(&d_q, &layer.w_query)?);

        lg.w_key.add_inplace(&matmul_tn(audio, &d_keys)?);
        lg.w_value.add_inplace(&matmul_tn(audio, &d_values)?);
        d_audio.add_inplace(&matmul_nt(&d_keys, &layer.w_key)?);
        d_audio.add_inplace(&matmul_nt(&d_values, &layer.w_value)?);

        // LN1
        let d_from_ln1 = ln_backward(
            &lc.ln1,
            &layer.ln1_gamma,
            &d_h,
            &mut lg.ln1_gamma,
            &mut lg.ln1_beta,
        );
        d_x = d_x_mid;
        d_x.add_inplace(&d_from_ln1);
    }

    Ok(d_audio)
}
