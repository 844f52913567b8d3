//! End-to-end tuning probe: generate, train, evaluate, print the numbers the
//! acceptance gates care about.

use avtr::data::synth::{generate, SynthConfig};
use avtr::data::load_dataset;
use avtr::eval::evaluate;
use avtr::params::{AvFusion, FusionParams, ModelConfig, TextFusion};
use avtr::trainer::{train, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let mode = args.get(1).map(|s| s.as_str()).unwrap_or("learn");
    match mode {
        "learn" => learn_probe(),
        "order" => order_probe(),
        "diag" => diag_probe(),
        "sweep" => sweep_probe(),
        "grid" => grid_probe(),
        _ => eprintln!("modes: learn | order | diag | sweep | grid"),
    }
}

/// Small-dim training grid over generator knobs.
fn grid_probe() {
    let dim = 128;
    for (vocab, family) in [(6usize, 8usize), (3, 4), (6, 16), (3, 8), (2, 8)] {
        let synth = SynthConfig {
            n_triplets: 512,
            test_triplets: 96,
            gallery_extra: 48,
            dim,
            audio_dim: 192,
            n_frames: 8,
            audio_len: 8,
            noise: 0.05,
            mod_vocab: vocab,
            family_size: family,
            ..SynthConfig::default()
        };
        let dir = tempfile::tempdir().unwrap();
        generate(&synth, 321, dir.path()).unwrap();
        let train_ds = load_dataset(&dir.path().join("train/manifest.jsonl")).unwrap();
        let test_ds = load_dataset(&dir.path().join("test/manifest.jsonl")).unwrap();
        let model = ModelConfig {
            dim,
            audio_dim: 192,
            audio_tokens: 4,
            layers: 2,
            mlp_hidden: 256,
            av_fusion: AvFusion::Gated,
            text_fusion: TextFusion::Weighted,
        };
        let cfg = TrainConfig {
            seed: 7,
            threads: 2,
            ..TrainConfig::default()
        };
        let untrained = FusionParams::init(&model, &mut ChaCha8Rng::seed_from_u64(7));
        let (m0, _) =
            evaluate(&test_ds.triplets, &test_ds.gallery, &untrained, &model, 2).unwrap();
        let out = train(&train_ds, &model, &cfg, None).unwrap();
        let (m1, _) =
            evaluate(&test_ds.triplets, &test_ds.gallery, &out.params, &model, 2).unwrap();
        let (mt, _) = evaluate(
            &train_ds.triplets[..96],
            &train_ds.gallery,
            &out.params,
            &model,
            2,
        )
        .unwrap();
        println!(
            "vocab {:2} family {}: untrained R@1 {:5.1} | test R@1 {:5.1} (MnR {:5.1}) | train R@1 {:5.1} | loss {:.3}",
            vocab,
            family,
            m0.r1,
            m1.r1,
            m1.mnr,
            mt.r1,
            out.log.steps.last().unwrap().loss
        );
    }
}

/// Pure geometry: with identity encoders, how do the batch loss and eval R@1
/// depend on the global text-composition strength r?
fn sweep_probe() {
    use avtr::objective::batch_loss;
    use avtr::tensor::{l2_normalize, Tensor2};

    let dim = 128;
    let synth = SynthConfig {
        n_triplets: 256,
        gallery_extra: 32,
        dim,
        audio_dim: 64,
        n_frames: 8,
        audio_len: 4,
        noise: 0.05,
        ..SynthConfig::default()
    };
    let dir = tempfile::tempdir().unwrap();
    generate(&synth, 55, dir.path()).unwrap();
    let ds = load_dataset(&dir.path().join("manifest.jsonl")).unwrap();
    let truth = avtr::data::synth::read_truth(&dir.path().join("truth.jsonl")).unwrap();

    let compose_at = |rec: &avtr::data::TripletRecord, tr: &avtr::data::synth::TruthRecord, r: f64| -> Vec<f64> {
        let mut q = rec.query_frames.mean_rows().unwrap();
        for x in 0..4 {
            if tr.scales[x] > 0.0 {
                for (qv, tv) in q.iter_mut().zip(&rec.text[x]) {
                    *qv += r * tv / tr.scales[x];
                }
            }
        }
        l2_normalize(&q, 1e-12).unwrap()
    };

    // gallery embeddings: identity encode (mean + normalize)
    let gal_ids: Vec<String> = ds.gallery.iter().map(|g| g.id.clone()).collect();
    let mut gal_rows = Tensor2::zeros(ds.gallery.len(), dim);
    for (i, g) in ds.gallery.iter().enumerate() {
        let m = g.frames.mean_rows().unwrap();
        let u = l2_normalize(&m, 1e-12).unwrap();
        gal_rows.row_mut(i).copy_from_slice(&u);
    }
    let gal = avtr::eval::GalleryEmbeddings {
        ids: gal_ids,
        rows: gal_rows,
    };

    println!("   r    loss     R@1");
    let mut r = 0.0;
    while r <= 3.01 {
        // batch loss over batches of 64
        let mut total_loss = 0.0;
        let mut batches = 0;
        for chunk in ds.triplets.chunks(64) {
            if chunk.len() < 64 {
                break;
            }
            let mut q_rows = Tensor2::zeros(64, dim);
            let mut t_rows = Tensor2::zeros(64, dim);
            for (i, rec) in chunk.iter().enumerate() {
                let idx = ds.triplets.iter().position(|t| t.id == rec.id).unwrap();
                let q = compose_at(rec, &truth[idx], r);
                q_rows.row_mut(i).copy_from_slice(&q);
                let tm = rec.target_frames.mean_rows().unwrap();
                let tu = l2_normalize(&tm, 1e-12).unwrap();
                t_rows.row_mut(i).copy_from_slice(&tu);
            }
            total_loss += batch_loss(&q_rows, &t_rows, (0.07f64).ln()).unwrap().loss;
            batches += 1;
        }

        // eval R@1, tallying what outranks the target on misses
        let mut hits = 0;
        let mut winners: std::collections::BTreeMap<String, usize> = Default::default();
        for (i, rec) in ds.triplets.iter().enumerate() {
            let q = compose_at(rec, &truth[i], r);
            let rr = avtr::eval::rank(&rec.id, &q, &gal, &rec.target_id).unwrap();
            if rr.truth_rank == 1 {
                hits += 1;
            } else {
                let wid = &gal.ids[rr.order[0] as usize];
                let me: usize = rec.id[3..8].parse().unwrap();
                let kind = if wid.starts_with("twn") {
                    let owner: usize = wid[3..8].parse().unwrap();
                    let side = &wid[8..9];
                    if owner == me {
                        format!("own-twin-{}", side)
                    } else if owner / 4 == me / 4 {
                        format!("family-twin-{}", side)
                    } else {
                        "other-twin".into()
                    }
                } else if wid.starts_with("tgt") {
                    let owner: usize = wid[3..8].parse().unwrap();
                    if owner / 4 == me / 4 {
                        "family-target".into()
                    } else {
                        "other-target".into()
                    }
                } else {
                    "distractor".into()
                };
                *winners.entry(kind).or_default() += 1;
            }
        }
        println!(
            "  {:.2}  {:.4}  {:.1}  {:?}",
            r,
            total_loss / batches as f64,
            100.0 * hits as f64 / ds.triplets.len() as f64,
            winners
        );
        r += 0.25;
    }
}

fn diag_probe() {
    let dim = 128;
    let synth = SynthConfig {
        n_triplets: 256,
        gallery_extra: 32,
        dim,
        audio_dim: 192,
        n_frames: 8,
        audio_len: 8,
        noise: 0.05,
        ..SynthConfig::default()
    };
    let mut test_synth = synth.clone();
    test_synth.n_triplets = 48;

    let tdir = tempfile::tempdir().unwrap();
    let edir = tempfile::tempdir().unwrap();
    generate(&synth, 100, tdir.path()).unwrap();
    generate(&test_synth, 200, edir.path()).unwrap();
    let train_ds = load_dataset(&tdir.path().join("manifest.jsonl")).unwrap();
    let test_ds = load_dataset(&edir.path().join("manifest.jsonl")).unwrap();
    let truth = avtr::data::synth::read_truth(&edir.path().join("truth.jsonl")).unwrap();

    let model = ModelConfig {
        dim,
        audio_dim: 192,
        audio_tokens: 4,
        layers: 2,
        mlp_hidden: 256,
        av_fusion: AvFusion::Gated,
        text_fusion: TextFusion::Weighted,
    };
    let cfg = TrainConfig {
        epochs: 10,
        batch_size: 64,
        learning_rate: 1e-4,
        seed: 7,
        threads: 2,
        ..TrainConfig::default()
    };
    let out = train(&train_ds, &model, &cfg, None).unwrap();
    println!(
        "loss first {:.4} last {:.4}, tau {:.4}",
        out.log.steps.first().unwrap().loss,
        out.log.steps.last().unwrap().loss,
        out.params.tau()
    );
    let (m, results) =
        evaluate(&test_ds.triplets, &test_ds.gallery, &out.params, &model, 2).unwrap();
    println!("trained: {}", m);

    // Per-query geometry: effective share coefficients of query vs target.
    let gal = avtr::eval::encode_gallery(&test_ds.gallery, &out.params, &model, 2).unwrap();
    for (i, rec) in test_ds.triplets.iter().enumerate().take(6) {
        let q = avtr::trainer::encode_query(rec, &out.params, &model).unwrap();
        let tr = &truth[i];
        let r = &results[i];
        let tgt_idx = gal.index_of(&rec.target_id).unwrap();
        let tgt = gal.rows.row(tgt_idx);

        // share unit directions from stored text / scale
        let mut share_units: Vec<Option<Vec<f64>>> = Vec::new();
        for x in 0..4 {
            if tr.scales[x] > 0.0 {
                let s: Vec<f64> = rec.text[x].iter().map(|v| v / tr.scales[x]).collect();
                let n = avtr::tensor::norm(&s);
                share_units.push(Some(s.iter().map(|v| v / n).collect()));
            } else {
                share_units.push(None);
            }
        }
        let profile = |v: &[f64]| -> Vec<f64> {
            share_units
                .iter()
                .map(|u| match u {
                    Some(u) => avtr::tensor::dot(v, u),
                    None => f64::NAN,
                })
                .collect()
        };
        let fused_norm = {
            let (res, _) = avtr::resampler::forward(&rec.query_audio, &out.params.resampler).unwrap();
            let f = avtr::gft::fuse_av(&rec.query_frames, &res, &out.params.gated).unwrap();
            avtr::tensor::norm(&f)
        };
        println!(
            "{} rank {} |f_av| {:.2} scales {:?}\n  q profile {:?}\n  t profile {:?}  q.t {:.3}",
            rec.id,
            r.truth_rank,
            fused_norm,
            tr.scales.iter().map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>(),
            profile(&q.embedding).iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
            profile(tgt).iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
            avtr::tensor::dot(&q.embedding, tgt)
        );
    }
}

fn learn_probe() {
    let dim = 256;
    let synth = SynthConfig {
        n_triplets: 512,
        test_triplets: 128,
        gallery_extra: 64,
        dim,
        audio_dim: 384,
        n_frames: 8,
        audio_len: 16,
        noise: 0.05,
        ..SynthConfig::default()
    };

    let dir = tempfile::tempdir().unwrap();
    let t0 = Instant::now();
    generate(&synth, 100, dir.path()).unwrap();
    println!("generate: {:.1}s", t0.elapsed().as_secs_f64());

    let train_ds = load_dataset(&dir.path().join("train/manifest.jsonl")).unwrap();
    let test_ds = load_dataset(&dir.path().join("test/manifest.jsonl")).unwrap();
    println!(
        "train triplets {}, test triplets {}, test gallery {}",
        train_ds.triplets.len(),
        test_ds.triplets.len(),
        test_ds.gallery.len()
    );

    let model = ModelConfig {
        dim,
        audio_dim: 384,
        audio_tokens: 8,
        layers: 2,
        mlp_hidden: 256,
        av_fusion: AvFusion::Gated,
        text_fusion: TextFusion::Weighted,
    };

    // untrained baseline
    let untrained = FusionParams::init(&model, &mut ChaCha8Rng::seed_from_u64(7));
    let (m0, _) = evaluate(&test_ds.triplets, &test_ds.gallery, &untrained, &model, 2).unwrap();
    println!("untrained: {}", m0);

    let args: Vec<String> = std::env::args().collect();
    let lr: f64 = args
        .get(2)
        .and_then(|s| s.parse().ok())
        .unwrap_or(1e-4);
    let epochs: usize = args
        .get(3)
        .and_then(|s| s.parse().ok())
        .unwrap_or(10);
    let cfg = TrainConfig {
        seed: 7,
        threads: 2,
        learning_rate: lr,
        epochs,
        ..TrainConfig::default()
    };
    let t1 = Instant::now();
    let out = train(&train_ds, &model, &cfg, None).unwrap();
    println!(
        "train: {:.1}s wall ({} steps)",
        t1.elapsed().as_secs_f64(),
        out.steps
    );
    for e in 0..cfg.epochs {
        if let Some(l) = out.log.epoch_mean_loss(e) {
            println!("  epoch {:2} mean loss {:.4}", e, l);
        }
    }
    let (m1, results) = evaluate(&test_ds.triplets, &test_ds.gallery, &out.params, &model, 2).unwrap();
    println!("trained: {}", m1);
    let mut winners: std::collections::BTreeMap<String, usize> = Default::default();
    let gal_ids: Vec<&String> = test_ds.gallery.iter().map(|g| &g.id).collect();
    for (rec, r) in test_ds.triplets.iter().zip(&results) {
        if r.truth_rank > 1 {
            let wid = gal_ids[r.order[0] as usize];
            let me: usize = rec.id[3..8].parse().unwrap();
            let kind = if wid.starts_with("twn") {
                let owner: usize = wid[3..8].parse().unwrap();
                let side = &wid[8..9];
                if owner == me {
                    format!("own-twin-{}", side)
                } else if owner / 4 == me / 4 {
                    format!("family-twin-{}", side)
                } else {
                    "other-twin".into()
                }
            } else if wid.starts_with("tgt") {
                let owner: usize = wid[3..8].parse().unwrap();
                if owner / 4 == me / 4 {
                    "family-target".into()
                } else {
                    "other-target".into()
                }
            } else {
                "distractor".into()
            };
            *winners.entry(kind).or_default() += 1;
        }
    }
    println!("test winners above target: {:?}", winners);
    let (mt, _) = evaluate(
        &train_ds.triplets[..128],
        &train_ds.gallery,
        &out.params,
        &model,
        2,
    )
    .unwrap();
    println!("train-set eval (first 128): {}", mt);
    for rec in test_ds.triplets.iter().take(3) {
        let q = avtr::trainer::encode_query(rec, &out.params, &model).unwrap();
        println!("test weights {:?}", q.weights);
    }
    for rec in train_ds.triplets.iter().take(3) {
        let q = avtr::trainer::encode_query(rec, &out.params, &model).unwrap();
        println!("train weights {:?}", q.weights);
    }
}

fn order_probe() {
    let dim = 64;
    let synth = SynthConfig {
        n_triplets: 160,
        gallery_extra: 40,
        dim,
        audio_dim: 96,
        n_frames: 4,
        audio_len: 8,
        noise: 0.05,
        ..SynthConfig::default()
    };
    let mut test_synth = synth.clone();
    test_synth.n_triplets = 96;

    let strategies = [
        ("V only       ", AvFusion::VideoOnly, TextFusion::None),
        ("V,A gated    ", AvFusion::Gated, TextFusion::None),
        ("TVA avg+avg  ", AvFusion::Mean, TextFusion::Mean),
        ("TVA gated+avg", AvFusion::Gated, TextFusion::Mean),
        ("TVA gated+wgt", AvFusion::Gated, TextFusion::Weighted),
    ];

    for seed in [1u64, 2, 3, 4, 5] {
        let tdir = tempfile::tempdir().unwrap();
        let edir = tempfile::tempdir().unwrap();
        generate(&synth, 1000 + seed, tdir.path()).unwrap();
        generate(&test_synth, 2000 + seed, edir.path()).unwrap();
        let train_ds = load_dataset(&tdir.path().join("manifest.jsonl")).unwrap();
        let test_ds = load_dataset(&edir.path().join("manifest.jsonl")).unwrap();

        print!("seed {}: ", seed);
        for (name, av, text) in &strategies {
            let model = ModelConfig {
                dim,
                audio_dim: 96,
                audio_tokens: 4,
                layers: 1,
                mlp_hidden: 256,
                av_fusion: *av,
                text_fusion: *text,
            };
            let cfg = TrainConfig {
                epochs: 10,
                batch_size: 32,
                learning_rate: 3e-4,
                seed,
                threads: 2,
                ..TrainConfig::default()
            };
            let out = train(&train_ds, &model, &cfg, None).unwrap();
            let (m, _) =
                evaluate(&test_ds.triplets, &test_ds.gallery, &out.params, &model, 2).unwrap();
            print!("{}={:.1}  ", name.trim(), m.r1);
        }
        println!();
    }
}
