//! Query-weighted compositional fusion.
//!
//! A two-layer MLP looks at the fused clip embedding together with the four
//! text component embeddings and predicts five sigmoid weights, one per
//! component. The composed query is the weighted sum of the five vectors,
//! L2-normalized. Only relative weights matter: rescaling all weights by a
//! positive constant leaves the normalized output unchanged.
//!
//! A missing text component is represented by the zero vector and its weight
//! is forced to 0, so composition degrades gracefully to the remaining
//! components.

use crate::error::{Error, Result};
use crate::params::CompositionParams;
use crate::tensor::{dot, l2_normalize, l2_normalize_backward, norm, sigmoid, EPS_NORM};

/// Number of composed components: the fused clip embedding plus four text
/// aspects (object, action, attribute, audio).
pub const N_COMPONENTS: usize = 5;

/// Composed query embedding plus the weights that produced it.
#[derive(Clone, Debug)]
pub struct ComposedQuery {
    /// Unit-norm composed embedding.
    pub embedding: Vec<f64>,
    /// Per-component weights actually applied (0 for missing components).
    pub weights: [f64; N_COMPONENTS],
}

/// Intermediates for the backward pass.
pub struct ComposeCache {
    pub concat: Vec<f64>,
    pub hidden_pre: Vec<f64>,
    pub hidden: Vec<f64>,
    pub weights: [f64; N_COMPONENTS],
    pub missing: [bool; N_COMPONENTS],
    pub sum: Vec<f64>,
    pub sum_norm: f64,
    pub unit: Vec<f64>,
}

fn check_widths(components: &[&[f64]; N_COMPONENTS], params: &CompositionParams) -> Result<usize> {
    let d = components[0].len();
    for c in components.iter() {
        if c.len() != d {
            return Err(Error::DimMismatch {
                op: "compose",
                detail: format!("component widths {} vs {}", d, c.len()),
            });
        }
    }
    if params.w1.rows() != N_COMPONENTS * d {
        return Err(Error::DimMismatch {
            op: "compose",
            detail: format!(
                "MLP input {} does not match {} components of width {}",
                params.w1.rows(),
                N_COMPONENTS,
                d
            ),
        });
    }
    Ok(d)
}

fn is_zero(v: &[f64]) -> bool {
    v.iter().all(|x| *x == 0.0)
}

/// Predict the five composition weights, each in (0, 1). Components are
/// consumed in the fixed order: fused clip, object, action, attribute, audio.
pub fn predict_weights(
    components: &[&[f64]; N_COMPONENTS],
    params: &CompositionParams,
) -> Result<[f64; N_COMPONENTS]> {
    let (w, _, _, _) = mlp_forward(components, params)?;
    Ok(w)
}

fn mlp_forward(
    components: &[&[f64]; N_COMPONENTS],
    params: &CompositionParams,
) -> Result<([f64; N_COMPONENTS], Vec<f64>, Vec<f64>, Vec<f64>)> {
    let d = check_widths(components, params)?;
    let h = params.w1.cols();

    let mut concat = Vec::with_capacity(N_COMPONENTS * d);
    for c in components.iter() {
        concat.extend_from_slice(c);
    }

    let mut hidden_pre = params.b1.row(0).to_vec();
    for (i, x) in concat.iter().enumerate() {
        if *x == 0.0 {
            continue;
        }
        let wrow = params.w1.row(i);
        for j in 0..h {
            hidden_pre[j] += x * wrow[j];
        }
    }
    let hidden: Vec<f64> = hidden_pre.iter().map(|v| v.max(0.0)).collect();

    let mut logits = [0.0; N_COMPONENTS];
    for (k, l) in logits.iter_mut().enumerate() {
        *l = params.b2.at(0, k);
    }
    for (j, hv) in hidden.iter().enumerate() {
        if *hv == 0.0 {
            continue;
        }
        let wrow = params.w2.row(j);
        for k in 0..N_COMPONENTS {
            logits[k] += hv * wrow[k];
        }
    }

    let mut weights = [0.0; N_COMPONENTS];
    for k in 0..N_COMPONENTS {
        weights[k] = sigmoid(logits[k]);
    }
    Ok((weights, concat, hidden_pre, hidden))
}

/// Weighted sum of the five components followed by L2 normalization.
/// Weights must be finite and non-negative; a near-zero weighted sum is a
/// degenerate-vector error.
pub fn compose(
    components: &[&[f64]; N_COMPONENTS],
    weights: &[f64; N_COMPONENTS],
) -> Result<Vec<f64>> {
    let d = components[0].len();
    for c in components.iter() {
        if c.len() != d {
            return Err(Error::DimMismatch {
                op: "compose",
                detail: "component width mismatch".into(),
            });
        }
    }
    for w in weights {
        if !w.is_finite() || *w < 0.0 {
            return Err(Error::NonFinite {
                op: format!("compose weight {}", w),
            });
        }
    }
    let mut sum = vec![0.0; d];
    for (c, w) in components.iter().zip(weights) {
        if *w == 0.0 || is_zero(c) {
            continue;
        }
        for (s, v) in sum.iter_mut().zip(*c) {
            *s += w * v;
        }
    }
    l2_normalize(&sum, EPS_NORM)
}

/// Full forward: predict weights, force missing components to 0, compose.
pub fn forward(
    components: &[&[f64]; N_COMPONENTS],
    params: &CompositionParams,
) -> Result<(ComposedQuery, ComposeCache)> {
    let (mut weights, concat, hidden_pre, hidden) = mlp_forward(components, params)?;
    let mut missing = [false; N_COMPONENTS];
    for (k, c) in components.iter().enumerate() {
        if is_zero(c) {
            missing[k] = true;
            weights[k] = 0.0;
        }
    }

    let d = components[0].len();
    let mut sum = vec![0.0; d];
    for (k, c) in components.iter().enumerate() {
        if missing[k] {
            continue;
        }
        let w = weights[k];
        for (s, v) in sum.iter_mut().zip(*c) {
            *s += w * v;
        }
    }
    let sum_norm = norm(&sum);
    let unit = l2_normalize(&sum, EPS_NORM)?;

    Ok((
        ComposedQuery {
            embedding: unit.clone(),
            weights,
        },
        ComposeCache {
            concat,
            hidden_pre,
            hidden,
            weights,
            missing,
            sum,
            sum_norm,
            unit,
        },
    ))
}

/// Backward pass. Accumulates MLP gradients into `grads` and returns the
/// gradient with respect to the fused clip embedding (component 0); the four
/// text embeddings are frozen inputs.
pub fn backward(
    cache: &ComposeCache,
    components: &[&[f64]; N_COMPONENTS],
    params: &CompositionParams,
    d_embedding: &[f64],
    grads: &mut CompositionParams,
) -> Result<Vec<f64>> {
    let d = components[0].len();
    let h = params.w1.cols();

    // through l2 normalization
    let d_sum = l2_normalize_backward(&cache.unit, cache.sum_norm, d_embedding);

    // weighted sum: d_w[k] = d_sum . c_k ; d_c0 = w0 * d_sum
    let mut d_weights = [0.0; N_COMPONENTS];
    for (k, c) in components.iter().enumerate() {
        if cache.missing[k] {
            continue;
        }
        d_weights[k] = dot(&d_sum, c);
    }
    let mut d_fused: Vec<f64> = d_sum.iter().map(|v| v * cache.weights[0]).collect();

    // sigmoid
    let mut d_logits = [0.0; N_COMPONENTS];
    for k in 0..N_COMPONENTS {
        if cache.missing[k] {
            continue;
        }
        let w = cache.weights[k];
        d_logits[k] = d_weights[k] * w * (1.0 - w);
    }

    // readout layer
    let mut d_hidden = vec![0.0; h];
    for j in 0..h {
        let hv = cache.hidden[j];
        let wrow = grads.w2.row_mut(j);
        let prow = params.w2.row(j);
        let mut acc = 0.0;
        for k in 0..N_COMPONENTS {
            wrow[k] += hv * d_logits[k];
            acc += prow[k] * d_logits[k];
        }
        d_hidden[j] = acc;
    }
    {
        let b2 = grads.b2.row_mut(0);
        for k in 0..N_COMPONENTS {
            b2[k] += d_logits[k];
        }
    }

    // relu
    let d_hidden_pre: Vec<f64> = d_hidden
        .iter()
        .zip(&cache.hidden_pre)
        .map(|(g, p)| if *p > 0.0 { *g } else { 0.0 })
        .collect();

    // input layer
    {
        let b1 = grads.b1.row_mut(0);
        for (bv, g) in b1.iter_mut().zip(&d_hidden_pre) {
            *bv += g;
        }
    }
    for (i, x) in cache.concat.iter().enumerate() {
        if *x != 0.0 {
            let wrow = grads.w1.row_mut(i);
            for (wv, g) in wrow.iter_mut().zip(&d_hidden_pre) {
                *wv += x * g;
            }
        }
    }
    // gradient into the fused embedding through the MLP input block 0
    for (i, df) in d_fused.iter_mut().enumerate().take(d) {
        let wrow = params.w1.row(i);
        *df += dot(wrow, &d_hidden_pre);
    }

    Ok(d_fused)
}
