//! Query-based cross-attention resampler.
//!
//! Compresses a variable-length audio token sequence (T x D_a) down to M
//! learned tokens in the shared width D. One attention block, one head:
//!
//!   K = tokens @ w_key,  V = tokens @ w_value
//!   A = softmax(queries @ K^T / sqrt(D))
//!   out = (A @ V) @ w_out
//!
//! No positional encodings are added, so the output is invariant to the
//! order of the audio tokens.

use crate::error::{Error, Result};
use crate::params::ResamplerParams;
use crate::tensor::{matmul, matmul_nt, matmul_tn, softmax_rows, softmax_rows_backward, Tensor2};

/// Intermediates kept for the backward pass.
pub struct ResamplerCache {
    /// Tokens actually attended over (the no-audio stand-in when T was 0).
    pub tokens: Tensor2,
    pub used_fallback: bool,
    pub keys: Tensor2,
    pub values: Tensor2,
    pub attn: Tensor2,
    pub context: Tensor2,
}

/// Resample audio tokens to M x D. Errors when the token sequence is empty;
/// callers that want silent-clip handling should use [`forward`], which
/// substitutes the learned no-audio token.
pub fn resample(audio_tokens: &Tensor2, params: &ResamplerParams) -> Result<Tensor2> {
    if audio_tokens.rows() == 0 {
        return Err(Error::EmptyAudio);
    }
    let (out, _) = forward(audio_tokens, params)?;
    Ok(out)
}

/// Forward pass with caching. An empty token sequence is replaced by the
/// learned no-audio token (T -> 1).
pub fn forward(audio_tokens: &Tensor2, params: &ResamplerParams) -> Result<(Tensor2, ResamplerCache)> {
    let used_fallback = audio_tokens.rows() == 0;
    let tokens = if used_fallback {
        params.no_audio.clone()
    } else {
        audio_tokens.clone()
    };
    if tokens.cols() != params.w_key.rows() {
        return Err(Error::DimMismatch {
            op: "resample",
            detail: format!(
                "audio tokens width {} vs projection input {}",
                tokens.cols(),
                params.w_key.rows()
            ),
        });
    }
    let d = params.queries.cols();
    let keys = matmul(&tokens, &params.w_key)?;
    let values = matmul(&tokens, &params.w_value)?;
    let mut scores = matmul_nt(&params.queries, &keys)?;
    scores.scale_inplace(1.0 / (d as f64).sqrt());
    let attn = softmax_rows(&scores);
    let context = matmul(&attn, &values)?;
    let out = matmul(&context, &params.w_out)?;
    Ok((
        out,
        ResamplerCache {
            tokens,
            used_fallback,
            keys,
            values,
            attn,
            context,
        },
    ))
}

/// Backward pass. Accumulates parameter gradients into `grads` and returns
/// the gradient with respect to the (possibly substituted) token sequence.
/// When the no-audio fallback was taken, the token gradient is routed into
/// `grads.no_audio` and the returned tensor is empty.
pub fn backward(
    cache: &ResamplerCache,
    params: &ResamplerParams,
    d_out: &Tensor2,
    grads: &mut ResamplerParams,
) -> Result<Tensor2> {
    let d = params.queries.cols();
    let scale = 1.0 / (d as f64).sqrt();

    grads
        .w_out
        .add_inplace(&matmul_tn(&cache.context, d_out)?);
    let d_context = matmul_nt(d_out, &params.w_out)?;

    let d_attn = matmul_nt(&d_context, &cache.values)?;
    let d_values = matmul_tn(&cache.attn, &d_context)?;
    let mut d_scores = softmax_rows_backward(&cache.attn, &d_attn);
    d_scores.scale_inplace(scale);

    grads
        .queries
        .add_inplace(&matmul(&d_scores, &cache.keys)?);
    let d_keys = matmul_tn(&d_scores, &params.queries)?;

    grads
        .w_key
        .add_inplace(&matmul_tn(&cache.tokens, &d_keys)?);
    grads
        .w_value
        .add_inplace(&matmul_tn(&cache.tokens, &d_values)?);

    let mut d_tokens = matmul_nt(&d_keys, &params.w_key)?;
    d_tokens.add_inplace(&matmul_nt(&d_values, &params.w_value)?);

    if cache.used_fallback {
        grads.no_audio.add_inplace(&d_tokens);
        return Ok(Tensor2::zeros(0, cache.tokens.cols()));
    }
    Ok(d_tokens)
}
