//! Mini-batch contrastive training over triplets.
//!
//! Queries are encoded as resample -> gated fusion -> weighted composition;
//! targets as resample -> gated fusion -> L2 normalization (text plays no
//! role on the target side). Each batch forms the in-batch score matrix,
//! applies the symmetric InfoNCE loss, and updates the fusion parameters with
//! bias-corrected adaptive moments.
//!
//! Dataset tensors are frozen inputs: the loop never writes to them. Batch
//! forwards/backwards run over a fixed chunk grid so results are
//! bit-identical for any worker count.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::compose::{self, ComposeCache, ComposedQuery, N_COMPONENTS};
use crate::data::{Dataset, TripletRecord};
use crate::error::{Error, Result};
use crate::eval::MetricsTable;
use crate::gft;
use crate::objective;
use crate::params::{AvFusion, FusionParams, ModelConfig, TextFusion};
use crate::resampler;
use crate::tensor::{l2_normalize, l2_normalize_backward, norm, Tensor2, EPS_NORM};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Evaluate every k epochs on the held-out dataset (0 = never).
    pub eval_every: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub clip_norm: Option<f64>,
    /// The resampler's learnable tokens and projections are trained by
    /// default; switch off to freeze them.
    pub train_resampler: bool,
    /// Worker cap; 1 is the fully serial reference mode.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 64,
            learning_rate: 1e-4,
            seed: 0,
            eval_every: 0,
            beta1: 0.9,
            beta2: 0.999,
            clip_norm: None,
            train_resampler: true,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::InvalidConfig(format!(
                "batch size {} too small (need >= 2)",
                self.batch_size
            )));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::InvalidConfig("learning rate must be >= 0".into()));
        }
        if self.threads == 0 {
            return Err(Error::InvalidConfig("threads must be >= 1".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// encoding

enum AvCache {
    Gated {
        rcache: resampler::ResamplerCache,
        resampled: Tensor2,
        gcache: gft::FusionCache,
    },
    Mean {
        rcache: resampler::ResamplerCache,
        audio_rows: usize,
    },
    VideoOnly,
}

fn av_forward(
    frames: &Tensor2,
    audio_tokens: &Tensor2,
    params: &FusionParams,
    cfg: &ModelConfig,
) -> Result<(Vec<f64>, AvCache)> {
    match cfg.av_fusion {
        AvFusion::Gated => {
            let (resampled, rcache) = resampler::forward(audio_tokens, &params.resampler)?;
            let (fused, gcache) = gft::forward(frames, &resampled, &params.gated)?;
            Ok((
                fused,
                AvCache::Gated {
                    rcache,
                    resampled,
                    gcache,
                },
            ))
        }
        AvFusion::Mean => {
            let (resampled, rcache) = resampler::forward(audio_tokens, &params.resampler)?;
            let frames_mean = frames.mean_rows()?;
            let audio_mean = resampled.mean_rows()?;
            let fused: Vec<f64> = frames_mean
                .iter()
                .zip(&audio_mean)
                .map(|(f, a)| 0.5 * (f + a))
                .collect();
            Ok((
                fused,
                AvCache::Mean {
                    rcache,
                    audio_rows: resampled.rows(),
                },
            ))
        }
        AvFusion::VideoOnly => Ok((frames.mean_rows()?, AvCache::VideoOnly)),
    }
}

fn av_backward(
    cache: &AvCache,
    params: &FusionParams,
    d_fused: &[f64],
    grads: &mut FusionParams,
) -> Result<()> {
    match cache {
        AvCache::Gated {
            rcache,
            resampled,
            gcache,
        } => {
            let d_resampled =
                gft::backward_with_audio(gcache, &params.gated, resampled, d_fused, &mut grads.gated)?;
            resampler::backward(rcache, &params.resampler, &d_resampled, &mut grads.resampler)?;
            Ok(())
        }
        AvCache::Mean { rcache, audio_rows } => {
            let m = *audio_rows;
            let mut d_resampled = Tensor2::zeros(m, d_fused.len());
            let scale = 0.5 / m as f64;
            for i in 0..m {
                let row = d_resampled.row_mut(i);
                for (rv, dv) in row.iter_mut().zip(d_fused) {
                    *rv = dv * scale;
                }
            }
            resampler::backward(rcache, &params.resampler, &d_resampled, &mut grads.resampler)?;
            Ok(())
        }
        AvCache::VideoOnly => Ok(()),
    }
}

enum TextCache {
    Weighted(ComposeCache),
    Mean {
        weights: [f64; N_COMPONENTS],
        sum_norm: f64,
        unit: Vec<f64>,
    },
    None {
        pre_norm: f64,
        unit: Vec<f64>,
    },
}

struct QueryCache {
    av: AvCache,
    fused: Vec<f64>,
    text: TextCache,
}

fn query_forward(
    rec: &TripletRecord,
    params: &FusionParams,
    cfg: &ModelConfig,
) -> Result<(ComposedQuery, QueryCache)> {
    let (fused, av) = av_forward(&rec.query_frames, &rec.query_audio, params, cfg)?;
    let comps: [&[f64]; N_COMPONENTS] = [
        &fused,
        &rec.text[0],
        &rec.text[1],
        &rec.text[2],
        &rec.text[3],
    ];
    match cfg.text_fusion {
        TextFusion::Weighted => {
            let (q, ccache) = compose::forward(&comps, &params.composition)?;
            Ok((
                q.clone(),
                QueryCache {
                    av,
                    fused,
                    text: TextCache::Weighted(ccache),
                },
            ))
        }
        TextFusion::Mean => {
            let mut weights = [0.5; N_COMPONENTS];
            for (k, c) in comps.iter().enumerate() {
                if c.iter().all(|v| *v == 0.0) {
                    weights[k] = 0.0;
                }
            }
            let mut sum = vec![0.0; fused.len()];
            for (k, c) in comps.iter().enumerate() {
                if weights[k] == 0.0 {
                    continue;
                }
                for (s, v) in sum.iter_mut().zip(*c) {
                    *s += weights[k] * v;
                }
            }
            let sum_norm = norm(&sum);
            let unit = l2_normalize(&sum, EPS_NORM)?;
            Ok((
                ComposedQuery {
                    embedding: unit.clone(),
                    weights,
                },
                QueryCache {
                    av,
                    fused,
                    text: TextCache::Mean {
                        weights,
                        sum_norm,
                        unit,
                    },
                },
            ))
        }
        TextFusion::None => {
            let pre_norm = norm(&fused);
            let unit = l2_normalize(&fused, EPS_NORM)?;
            Ok((
                ComposedQuery {
                    embedding: unit.clone(),
                    weights: [1.0, 0.0, 0.0, 0.0, 0.0],
                },
                QueryCache {
                    av,
                    fused,
                    text: TextCache::None { pre_norm, unit },
                },
            ))
        }
    }
}

fn query_backward(
    rec: &TripletRecord,
    cache: &QueryCache,
    params: &FusionParams,
    d_embedding: &[f64],
    grads: &mut FusionParams,
) -> Result<()> {
    let d_fused: Vec<f64> = match &cache.text {
        TextCache::Weighted(ccache) => {
            let comps: [&[f64]; N_COMPONENTS] = [
                &cache.fused,
                &rec.text[0],
                &rec.text[1],
                &rec.text[2],
                &rec.text[3],
            ];
            compose::backward(
                ccache,
                &comps,
                &params.composition,
                d_embedding,
                &mut grads.composition,
            )?
        }
        TextCache::Mean {
            weights,
            sum_norm,
            unit,
        } => {
            let d_sum = l2_normalize_backward(unit, *sum_norm, d_embedding);
            d_sum.iter().map(|v| v * weights[0]).collect()
        }
        TextCache::None { pre_norm, unit } => l2_normalize_backward(unit, *pre_norm, d_embedding),
    };
    av_backward(&cache.av, params, &d_fused, grads)
}

struct TargetCache {
    av: AvCache,
    pre_norm: f64,
    unit: Vec<f64>,
}

fn target_forward(
    frames: &Tensor2,
    audio: &Tensor2,
    params: &FusionParams,
    cfg: &ModelConfig,
) -> Result<(Vec<f64>, TargetCache)> {
    let (fused, av) = av_forward(frames, audio, params, cfg)?;
    let pre_norm = norm(&fused);
    let unit = l2_normalize(&fused, EPS_NORM)?;
    Ok((
        unit.clone(),
        TargetCache {
            av,
            pre_norm,
            unit,
        },
    ))
}

fn target_backward(
    cache: &TargetCache,
    params: &FusionParams,
    d_embedding: &[f64],
    grads: &mut FusionParams,
) -> Result<()> {
    let d_fused = l2_normalize_backward(&cache.unit, cache.pre_norm, d_embedding);
    av_backward(&cache.av, params, &d_fused, grads)
}

/// Encode one triplet's query side: fused clip embedding composed with the
/// four text components. Unit norm.
pub fn encode_query(
    rec: &TripletRecord,
    params: &FusionParams,
    cfg: &ModelConfig,
) -> Result<ComposedQuery> {
    Ok(query_forward(rec, params, cfg)?.0)
}

/// Encode a gallery clip (frames + audio, no text). Unit norm.
pub fn encode_target(
    frames: &Tensor2,
    audio: &Tensor2,
    params: &FusionParams,
    cfg: &ModelConfig,
) -> Result<Vec<f64>> {
    Ok(target_forward(frames, audio, params, cfg)?.0)
}

// ---------------------------------------------------------------------------
// batch loss and gradients

/// Fixed chunk count for batch work: reductions always run over the same
/// grid, so results do not depend on the worker count.
const BATCH_CHUNKS: usize = 4;

fn chunk_ranges(len: usize) -> Vec<std::ops::Range<usize>> {
    let per = len.div_ceil(BATCH_CHUNKS);
    (0..len)
        .step_by(per.max(1))
        .map(|s| s..(s + per).min(len))
        .collect()
}

pub struct BatchStep {
    pub loss: f64,
    pub grads: FusionParams,
}

/// Forward and backward over one batch of triplets.
pub fn batch_forward_backward(
    records: &[&TripletRecord],
    params: &FusionParams,
    cfg: &ModelConfig,
    threads: usize,
) -> Result<BatchStep> {
    let b = records.len();
    if b < 2 {
        return Err(Error::BatchTooSmall { size: b });
    }
    let d = cfg.dim;

    let ranges = chunk_ranges(b);
    type FwdChunk = (Vec<(ComposedQuery, QueryCache)>, Vec<(Vec<f64>, TargetCache)>);
    let run_forward = |range: std::ops::Range<usize>| -> Result<FwdChunk> {
        let mut qs = Vec::with_capacity(range.len());
        let mut ts = Vec::with_capacity(range.len());
        for i in range {
            let rec = records[i];
            qs.push(query_forward(rec, params, cfg)?);
            ts.push(target_forward(
                &rec.target_frames,
                &rec.target_audio,
                params,
                cfg,
            )?);
        }
        Ok((qs, ts))
    };

    let forward_chunks: Vec<Result<FwdChunk>> = if threads > 1 {
        use rayon::prelude::*;
        ranges.par_iter().cloned().map(run_forward).collect()
    } else {
        ranges.iter().cloned().map(run_forward).collect()
    };

    let mut queries = Vec::with_capacity(b);
    let mut targets = Vec::with_capacity(b);
    for chunk in forward_chunks {
        let (qs, ts) = chunk?;
        queries.extend(qs);
        targets.extend(ts);
    }

    let mut q_rows = Tensor2::zeros(b, d);
    let mut t_rows = Tensor2::zeros(b, d);
    for i in 0..b {
        q_rows.row_mut(i).copy_from_slice(&queries[i].0.embedding);
        t_rows.row_mut(i).copy_from_slice(&targets[i].0);
    }

    let loss = objective::batch_loss(&q_rows, &t_rows, params.log_tau.at(0, 0))?;

    let run_backward = |range: std::ops::Range<usize>| -> Result<FusionParams> {
        let mut grads = FusionParams::zeros(cfg);
        for i in range {
            query_backward(records[i], &queries[i].1, params, loss.d_queries.row(i), &mut grads)?;
            target_backward(&targets[i].1, params, loss.d_targets.row(i), &mut grads)?;
        }
        Ok(grads)
    };

    let grad_chunks: Vec<Result<FusionParams>> = if threads > 1 {
        use rayon::prelude::*;
        ranges.par_iter().cloned().map(run_backward).collect()
    } else {
        ranges.iter().cloned().map(run_backward).collect()
    };

    let mut grads = FusionParams::zeros(cfg);
    for chunk in grad_chunks {
        let chunk = chunk?;
        for ((_, g), (_, c)) in grads.named_tensors_mut().into_iter().zip(chunk.named_tensors()) {
            g.add_inplace(c);
        }
    }
    *grads.log_tau.at_mut(0, 0) += loss.d_log_tau;

    Ok(BatchStep {
        loss: loss.loss,
        grads,
    })
}

// ---------------------------------------------------------------------------
// optimizer

/// Adaptive moment estimation with bias correction.
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    names: Vec<String>,
    m: Vec<Tensor2>,
    v: Vec<Tensor2>,
}

impl Adam {
    pub fn new(params: &FusionParams, lr: f64, beta1: f64, beta2: f64) -> Self {
        let named = params.named_tensors();
        Adam {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            step: 0,
            names: named.iter().map(|(n, _)| n.clone()).collect(),
            m: named.iter().map(|(_, t)| Tensor2::zeros(t.rows(), t.cols())).collect(),
            v: named.iter().map(|(_, t)| Tensor2::zeros(t.rows(), t.cols())).collect(),
        }
    }

    /// Names of every tensor this optimizer updates, in update order.
    pub fn touched_names(&self) -> &[String] {
        &self.names
    }

    pub fn step(&mut self, params: &mut FusionParams, grads: &FusionParams) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (((name, p), (gname, g)), (m, v)) in params
            .named_tensors_mut()
            .into_iter()
            .zip(grads.named_tensors())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            debug_assert_eq!(name, gname);
            for ((pv, gv), (mv, vv)) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
            {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *pv -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// Scale all gradients so their global L2 norm is at most `max_norm`.
pub fn clip_global_norm(grads: &mut FusionParams, max_norm: f64) {
    let mut total = 0.0;
    for (_, t) in grads.named_tensors() {
        for v in t.data() {
            total += v * v;
        }
    }
    let total = total.sqrt();
    if total > max_norm && total > 0.0 {
        let scale = max_norm / total;
        for (_, t) in grads.named_tensors_mut() {
            t.scale_inplace(scale);
        }
    }
}

// ---------------------------------------------------------------------------
// training loop

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainLog {
    pub steps: Vec<StepLog>,
    pub evals: Vec<(usize, MetricsTable)>,
    pub wall_seconds: f64,
}

impl TrainLog {
    pub fn epoch_mean_loss(&self, epoch: usize) -> Option<f64> {
        let losses: Vec<f64> = self
            .steps
            .iter()
            .filter(|s| s.epoch == epoch)
            .map(|s| s.loss)
            .collect();
        if losses.is_empty() {
            None
        } else {
            Some(losses.iter().sum::<f64>() / losses.len() as f64)
        }
    }

    /// Line-delimited log: one JSON object per step, then per eval.
    pub fn write(&self, path: &std::path::Path) -> Result<()> {
        let mut body = String::new();
        for s in &self.steps {
            body.push_str(&serde_json::to_string(s).expect("step log serializes"));
            body.push('\n');
        }
        for (epoch, m) in &self.evals {
            let line = serde_json::json!({"eval_epoch": epoch, "metrics": m});
            body.push_str(&line.to_string());
            body.push('\n');
        }
        body.push_str(
            &serde_json::json!({"wall_seconds": self.wall_seconds}).to_string(),
        );
        body.push('\n');
        std::fs::write(path, body).map_err(|e| Error::io(path.display().to_string(), e))
    }
}

pub struct TrainOutcome {
    pub params: FusionParams,
    pub steps: u64,
    pub log: TrainLog,
}

/// Train fusion parameters on a dataset. Deterministic for a fixed seed: the
/// same seed yields bit-identical parameters and loss sequences.
pub fn train(
    dataset: &Dataset,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    eval_data: Option<&Dataset>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.triplets.len() < cfg.batch_size {
        return Err(Error::InvalidConfig(format!(
            "dataset has {} triplets, batch size {} needs at least that many",
            dataset.triplets.len(),
            cfg.batch_size
        )));
    }

    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = FusionParams::init(model_cfg, &mut rng);
    let mut adam = Adam::new(&params, cfg.learning_rate, cfg.beta1, cfg.beta2);
    let mut log = TrainLog {
        steps: Vec::new(),
        evals: Vec::new(),
        wall_seconds: 0.0,
    };

    let n = dataset.triplets.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut step = 0usize;

    for epoch in 0..cfg.epochs {
        // Fisher-Yates off the training RNG stream
        for i in (1..n).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }

        for batch in order.chunks(cfg.batch_size) {
            if batch.len() < cfg.batch_size {
                break; // drop last incomplete batch
            }
            let records: Vec<&TripletRecord> =
                batch.iter().map(|&i| &dataset.triplets[i]).collect();
            let mut out = batch_forward_backward(&records, &params, model_cfg, cfg.threads)?;
            step += 1;
            if !out.loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    step,
                    batch_ids: records.iter().map(|r| r.id.clone()).collect(),
                });
            }
            if let Some(max_norm) = cfg.clip_norm {
                clip_global_norm(&mut out.grads, max_norm);
            }
            if !cfg.train_resampler {
                for (name, t) in out.grads.named_tensors_mut() {
                    if name.starts_with("resampler.") {
                        t.scale_inplace(0.0);
                    }
                }
            }
            adam.step(&mut params, &out.grads);
            log.steps.push(StepLog {
                step,
                epoch,
                loss: out.loss,
            });
        }

        if cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0 {
            let data = eval_data.unwrap_or(dataset);
            let (metrics, _) = crate::eval::evaluate(
                &data.triplets,
                &data.gallery,
                &params,
                model_cfg,
                cfg.threads,
            )?;
            log.evals.push((epoch, metrics));
        }
    }

    log.wall_seconds = start.elapsed().as_secs_f64();
    Ok(TrainOutcome {
        params,
        steps: step as u64,
        log,
    })
}
