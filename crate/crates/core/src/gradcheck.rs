//! Finite-difference verification of every trainable block.
//!
//! Each case builds a small model plus probe inputs from a seed, evaluates a
//! scalar loss (a fixed random linear functional of the block output, or the
//! batch loss itself), and compares the analytic parameter gradients against
//! central differences with step 1e-4. Relative error uses
//! |analytic - numeric| / max(1, |analytic|, |numeric|).
//!
//! Probes are rejected and redrawn when they sit too close to a relu kink or
//! saturate a sigmoid, where finite differences stop being trustworthy.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::compose;
use crate::data::TripletRecord;
use crate::error::{Error, Result};
use crate::gft;
use crate::objective;
use crate::params::{AvFusion, FusionParams, ModelConfig, TextFusion};
use crate::resampler;
use crate::tensor::Tensor2;
use crate::trainer;

/// Central-difference step on every scalar parameter.
pub const FD_STEP: f64 = 1e-4;
/// Default pass tolerance on the max relative error.
pub const DEFAULT_TOL: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct GradReport {
    pub op: String,
    pub tol: f64,
    pub max_rel_error: f64,
    /// Max relative error per named parameter tensor.
    pub per_param: Vec<(String, f64)>,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tol
    }
}

impl std::fmt::Display for GradReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {:<28} max rel err {:.3e} (tol {:.0e})",
            if self.passed() { "PASS" } else { "FAIL" },
            self.op,
            self.max_rel_error,
            self.tol
        )
    }
}

/// Compare analytic gradients against central finite differences over every
/// scalar in `params`. `eval` must be a pure function of the parameters.
pub fn finite_diff_report(
    op: &str,
    params: &FusionParams,
    eval: &dyn Fn(&FusionParams) -> Result<f64>,
    analytic: &FusionParams,
    h: f64,
    tol: f64,
) -> Result<GradReport> {
    if !analytic.is_finite() {
        return Err(Error::NonFinite {
            op: format!("{} analytic gradient", op),
        });
    }
    let names = params.tensor_names();
    let mut per_param = Vec::with_capacity(names.len());
    let mut max_rel = 0.0f64;

    for (t_idx, name) in names.iter().enumerate() {
        let len = params.named_tensors()[t_idx].1.data().len();
        let mut tensor_max = 0.0f64;
        for i in 0..len {
            let mut plus = params.clone();
            plus.named_tensors_mut()[t_idx].1.data_mut()[i] += h;
            let mut minus = params.clone();
            minus.named_tensors_mut()[t_idx].1.data_mut()[i] -= h;
            let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * h);
            let a = analytic.named_tensors()[t_idx].1.data()[i];
            let rel = (a - numeric).abs() / 1.0f64.max(a.abs()).max(numeric.abs());
            tensor_max = tensor_max.max(rel);
        }
        max_rel = max_rel.max(tensor_max);
        per_param.push((name.clone(), tensor_max));
    }

    Ok(GradReport {
        op: op.to_string(),
        tol,
        max_rel_error: max_rel,
        per_param,
    })
}

// ---------------------------------------------------------------------------
// registered cases

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckCase {
    /// Audio resampler through a fixed linear readout.
    Resampler,
    /// Resampler fed an empty token sequence (no-audio fallback path).
    ResamplerNoAudio,
    /// Gated fusion stack, one layer.
    GatedFusionL1,
    /// Gated fusion stack, two layers.
    GatedFusionL2,
    /// Weight prediction composed with the weighted sum and normalization.
    Composition,
    /// Batch InfoNCE through the similarity matrix and the temperature.
    LossThroughTau,
    /// Whole pipeline: resample -> fuse -> compose -> batch loss.
    FullChain,
}

pub const ALL_CASES: [CheckCase; 7] = [
    CheckCase::Resampler,
    CheckCase::ResamplerNoAudio,
    CheckCase::GatedFusionL1,
    CheckCase::GatedFusionL2,
    CheckCase::Composition,
    CheckCase::LossThroughTau,
    CheckCase::FullChain,
];

impl CheckCase {
    pub fn name(&self) -> &'static str {
        match self {
            CheckCase::Resampler => "resampler",
            CheckCase::ResamplerNoAudio => "resampler/no-audio",
            CheckCase::GatedFusionL1 => "gated-fusion/L1",
            CheckCase::GatedFusionL2 => "gated-fusion/L2",
            CheckCase::Composition => "composition",
            CheckCase::LossThroughTau => "loss-through-tau",
            CheckCase::FullChain => "full-chain",
        }
    }

    pub fn tol(&self) -> f64 {
        match self {
            CheckCase::LossThroughTau => 1e-4,
            _ => DEFAULT_TOL,
        }
    }
}

fn small_cfg(layers: usize) -> ModelConfig {
    ModelConfig {
        dim: 8,
        audio_dim: 6,
        audio_tokens: 2,
        layers,
        mlp_hidden: 8,
        av_fusion: AvFusion::Gated,
        text_fusion: TextFusion::Weighted,
    }
}

fn rand_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor2 {
    let mut t = Tensor2::zeros(rows, cols);
    for v in t.data_mut() {
        *v = rng.gen_range(-scale..scale);
    }
    t
}

fn rand_vec(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> Vec<f64> {
    (0..d).map(|_| rng.gen_range(-scale..scale)).collect()
}

/// Random parameters for checking: unlike training init, the composition
/// readout is non-zero so its input layer sees gradient.
fn check_params(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> FusionParams {
    let mut p = FusionParams::init(cfg, rng);
    for v in p.composition.w2.data_mut() {
        *v = rng.gen_range(-0.4..0.4);
    }
    for v in p.composition.b2.data_mut() {
        *v = rng.gen_range(-0.3..0.3);
    }
    // moderate attention scale keeps softmax unsaturated at dim 8
    for layer in p.gated.layers.iter_mut() {
        for t in [
            &mut layer.w_query,
            &mut layer.w_key,
            &mut layer.w_value,
            &mut layer.w_out,
        ] {
            t.scale_inplace(0.8);
        }
    }
    p
}

/// Smoothness guard: relu pre-activations away from the kink, sigmoid and
/// gate pre-activations inside [-4, 4].
fn composition_probe_ok(probe: &[Vec<f64>; 5], params: &FusionParams) -> bool {
    let comps: [&[f64]; 5] = [&probe[0], &probe[1], &probe[2], &probe[3], &probe[4]];
    let Ok((_, cache)) = compose::forward(&comps, &params.composition) else {
        return false;
    };
    cache.hidden_pre.iter().all(|p| p.abs() > 2e-3)
        && cache.sum_norm > 0.1
        && cache.weights.iter().all(|w| *w > 0.02 && *w < 0.98)
}

fn run_with_seed(case: CheckCase, seed: u64) -> Result<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9).wrapping_add(17));
    match case {
        CheckCase::Resampler | CheckCase::ResamplerNoAudio => {
            let cfg = small_cfg(1);
            let params = check_params(&cfg, &mut rng);
            let tokens = if case == CheckCase::Resampler {
                rand_mat(&mut rng, 5, cfg.audio_dim, 1.0)
            } else {
                Tensor2::zeros(0, cfg.audio_dim)
            };
            let readout = rand_mat(&mut rng, cfg.audio_tokens, cfg.dim, 1.0);

            let mut grads = FusionParams::zeros(&cfg);
            let (_, cache) = resampler::forward(&tokens, &params.resampler)?;
            resampler::backward(&cache, &params.resampler, &readout, &mut grads.resampler)?;

            let eval = move |p: &FusionParams| -> Result<f64> {
                let (out, _) = resampler::forward(&tokens, &p.resampler)?;
                Ok(out
                    .data()
                    .iter()
                    .zip(readout.data())
                    .map(|(a, b)| a * b)
                    .sum())
            };
            finite_diff_report(case.name(), &params, &eval, &grads, FD_STEP, case.tol())
        }
        CheckCase::GatedFusionL1 | CheckCase::GatedFusionL2 => {
            let cfg = small_cfg(if case == CheckCase::GatedFusionL1 { 1 } else { 2 });
            let params = check_params(&cfg, &mut rng);
            let frames = rand_mat(&mut rng, 3, cfg.dim, 1.0);
            let audio = rand_mat(&mut rng, 2, cfg.dim, 1.0);
            let readout = rand_vec(&mut rng, cfg.dim, 1.0);

            let frames_c = frames.clone();
            let audio_c = audio.clone();
            let readout_c = readout.clone();
            let eval = move |p: &FusionParams| -> Result<f64> {
                let fused = gft::fuse_av(&frames_c, &audio_c, &p.gated)?;
                Ok(fused.iter().zip(&readout_c).map(|(a, b)| a * b).sum())
            };
            let mut grads = FusionParams::zeros(&cfg);
            let (_, cache) = gft::forward(&frames, &audio, &params.gated)?;
            gft::backward_with_audio(&cache, &params.gated, &audio, &readout, &mut grads.gated)?;
            finite_diff_report(case.name(), &params, &eval, &grads, FD_STEP, case.tol())
        }
        CheckCase::Composition => {
            let cfg = small_cfg(1);
            // redraw until the probe is smooth at the working point
            let mut attempt = 0u64;
            loop {
                let mut r = ChaCha8Rng::seed_from_u64(
                    (seed + 1000 * attempt).wrapping_mul(0x9e37_79b9).wrapping_add(23),
                );
                let params = check_params(&cfg, &mut r);
                let probe: [Vec<f64>; 5] = [
                    rand_vec(&mut r, cfg.dim, 1.0),
                    rand_vec(&mut r, cfg.dim, 1.0),
                    rand_vec(&mut r, cfg.dim, 1.0),
                    rand_vec(&mut r, cfg.dim, 1.0),
                    rand_vec(&mut r, cfg.dim, 1.0),
                ];
                let readout = rand_vec(&mut r, cfg.dim, 1.0);
                if !composition_probe_ok(&probe, &params) {
                    attempt += 1;
                    assert!(attempt < 50, "no smooth composition probe found");
                    continue;
                }

                let probe_c = probe.clone();
                let readout_c = readout.clone();
                let eval = move |p: &FusionParams| -> Result<f64> {
                    let comps: [&[f64]; 5] = [
                        &probe_c[0],
                        &probe_c[1],
                        &probe_c[2],
                        &probe_c[3],
                        &probe_c[4],
                    ];
                    let (q, _) = compose::forward(&comps, &p.composition)?;
                    Ok(q.embedding.iter().zip(&readout_c).map(|(a, b)| a * b).sum())
                };
                let mut grads = FusionParams::zeros(&cfg);
                let comps: [&[f64]; 5] =
                    [&probe[0], &probe[1], &probe[2], &probe[3], &probe[4]];
                let (_, cache) = compose::forward(&comps, &params.composition)?;
                compose::backward(&cache, &comps, &params.composition, &readout, &mut grads.composition)?;
                return finite_diff_report(case.name(), &params, &eval, &grads, FD_STEP, case.tol());
            }
        }
        CheckCase::LossThroughTau => {
            let cfg = small_cfg(1);
            let params = check_params(&cfg, &mut rng);
            let b = 4;
            let mk_unit_rows = |rng: &mut ChaCha8Rng| -> Tensor2 {
                let mut m = Tensor2::zeros(b, cfg.dim);
                for i in 0..b {
                    let v = rand_vec(rng, cfg.dim, 1.0);
                    let u = crate::tensor::l2_normalize(&v, 1e-12).unwrap();
                    m.row_mut(i).copy_from_slice(&u);
                }
                m
            };
            let queries = mk_unit_rows(&mut rng);
            let targets = mk_unit_rows(&mut rng);

            let q_c = queries.clone();
            let t_c = targets.clone();
            let eval = move |p: &FusionParams| -> Result<f64> {
                Ok(objective::batch_loss(&q_c, &t_c, p.log_tau.at(0, 0))?.loss)
            };
            let mut grads = FusionParams::zeros(&cfg);
            let out = objective::batch_loss(&queries, &targets, params.log_tau.at(0, 0))?;
            *grads.log_tau.at_mut(0, 0) = out.d_log_tau;
            finite_diff_report(case.name(), &params, &eval, &grads, FD_STEP, case.tol())
        }
        CheckCase::FullChain => {
            let cfg = small_cfg(1);
            let mut attempt = 0u64;
            loop {
                let mut r = ChaCha8Rng::seed_from_u64(
                    (seed + 1000 * attempt).wrapping_mul(0x9e37_79b9).wrapping_add(31),
                );
                let params = check_params(&cfg, &mut r);
                let records: Vec<TripletRecord> = (0..3)
                    .map(|i| TripletRecord {
                        id: format!("probe{}", i),
                        query_frames: rand_mat(&mut r, 3, cfg.dim, 1.0),
                        query_audio: rand_mat(&mut r, 4, cfg.audio_dim, 1.0),
                        text: [
                            rand_vec(&mut r, cfg.dim, 1.0),
                            rand_vec(&mut r, cfg.dim, 1.0),
                            rand_vec(&mut r, cfg.dim, 1.0),
                            rand_vec(&mut r, cfg.dim, 1.0),
                        ],
                        target_id: format!("t{}", i),
                        target_frames: rand_mat(&mut r, 3, cfg.dim, 1.0),
                        target_audio: rand_mat(&mut r, 4, cfg.audio_dim, 1.0),
                    })
                    .collect();

                // smoothness guard on every query's composition
                let mut ok = true;
                for rec in &records {
                    let (fused, _) = match resampler::forward(&rec.query_audio, &params.resampler)
                        .and_then(|(res, _)| gft::forward(&rec.query_frames, &res, &params.gated))
                    {
                        Ok(v) => v,
                        Err(_) => {
                            ok = false;
                            break;
                        }
                    };
                    let probe: [Vec<f64>; 5] = [
                        fused,
                        rec.text[0].clone(),
                        rec.text[1].clone(),
                        rec.text[2].clone(),
                        rec.text[3].clone(),
                    ];
                    if !composition_probe_ok(&probe, &params) {
                        ok = false;
                        break;
                    }
                }
                if !ok {
                    attempt += 1;
                    assert!(attempt < 50, "no smooth full-chain probe found");
                    continue;
                }

                let recs_c = records.clone();
                let cfg_c = cfg.clone();
                let eval = move |p: &FusionParams| -> Result<f64> {
                    let refs: Vec<&TripletRecord> = recs_c.iter().collect();
                    Ok(trainer::batch_forward_backward(&refs, p, &cfg_c, 1)?.loss)
                };
                let refs: Vec<&TripletRecord> = records.iter().collect();
                let out = trainer::batch_forward_backward(&refs, &params, &cfg, 1)?;
                return finite_diff_report(
                    case.name(),
                    &params,
                    &eval,
                    &out.grads,
                    FD_STEP,
                    case.tol(),
                );
            }
        }
    }
}

/// Run one case at one seed.
pub fn run_case(case: CheckCase, seed: u64) -> Result<GradReport> {
    run_with_seed(case, seed)
}

/// Every case over every seed.
pub fn run_suite(seeds: &[u64]) -> Result<Vec<GradReport>> {
    let mut out = Vec::new();
    for case in ALL_CASES {
        for &seed in seeds {
            let mut report = run_case(case, seed)?;
            report.op = format!("{} seed {}", case.name(), seed);
            out.push(report);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> ModelConfig {
        small_cfg(1)
    }

    #[test]
    fn linear_layer_passes() {
        // loss = sum(c * (x @ w_out)) checked against dW = x^T c
        let cfg = tiny_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let params = check_params(&cfg, &mut rng);
        let x = rand_mat(&mut rng, 3, cfg.dim, 1.0);
        let c = rand_mat(&mut rng, 3, cfg.dim, 1.0);

        let x_c = x.clone();
        let c_c = c.clone();
        let eval = move |p: &FusionParams| -> Result<f64> {
            let y = crate::tensor::matmul(&x_c, &p.resampler.w_out)?;
            Ok(y.data().iter().zip(c_c.data()).map(|(a, b)| a * b).sum())
        };
        let mut grads = FusionParams::zeros(&cfg);
        grads.resampler.w_out = crate::tensor::matmul_tn(&x, &c).unwrap();
        let report = finite_diff_report("linear", &params, &eval, &grads, FD_STEP, 1e-3).unwrap();
        assert!(report.passed(), "{}", report);
    }

    #[test]
    fn constant_function_has_zero_error() {
        let cfg = tiny_cfg();
        let params = check_params(&cfg, &mut ChaCha8Rng::seed_from_u64(6));
        let eval = |_: &FusionParams| -> Result<f64> { Ok(42.0) };
        let grads = FusionParams::zeros(&cfg);
        let report = finite_diff_report("constant", &params, &eval, &grads, FD_STEP, 1e-3).unwrap();
        assert_eq!(report.max_rel_error, 0.0);
        assert!(report.passed());
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let cfg = tiny_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let params = check_params(&cfg, &mut rng);
        let x = rand_mat(&mut rng, 3, cfg.dim, 1.0);
        let c = rand_mat(&mut rng, 3, cfg.dim, 1.0);

        let x_c = x.clone();
        let c_c = c.clone();
        let eval = move |p: &FusionParams| -> Result<f64> {
            let y = crate::tensor::matmul(&x_c, &p.resampler.w_out)?;
            Ok(y.data().iter().zip(c_c.data()).map(|(a, b)| a * b).sum())
        };
        let mut grads = FusionParams::zeros(&cfg);
        grads.resampler.w_out = crate::tensor::matmul_tn(&x, &c).unwrap();
        grads.resampler.w_out.scale_inplace(2.0); // planted fault
        let report = finite_diff_report("corrupted", &params, &eval, &grads, FD_STEP, 1e-3).unwrap();
        assert!(!report.passed(), "planted fault went undetected: {}", report);
    }

    #[test]
    fn non_finite_analytic_gradient_is_fatal() {
        let cfg = tiny_cfg();
        let params = check_params(&cfg, &mut ChaCha8Rng::seed_from_u64(8));
        let eval = |_: &FusionParams| -> Result<f64> { Ok(0.0) };
        let mut grads = FusionParams::zeros(&cfg);
        grads.resampler.w_out.data_mut()[0] = f64::NAN;
        assert!(matches!(
            finite_diff_report("nan", &params, &eval, &grads, FD_STEP, 1e-3),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn every_case_passes_on_two_seeds() {
        for case in ALL_CASES {
            for seed in [1, 2] {
                let report = run_case(case, seed).unwrap();
                assert!(report.passed(), "{}", report);
            }
        }
    }
}
