//! Synthetic dataset generator with planted, recoverable retrieval structure.
//!
//! Geometry (all in the shared width D, split into a latent subspace and a
//! modification subspace):
//!
//! - every target gets a unit latent z inside the latent subspace; target
//!   frames are noisy copies of the target point;
//! - the query's frames sit at the target minus a planted modification, the
//!   sum of per-component shares s_x; share directions come from a finite
//!   per-dataset vocabulary of `mod_vocab` directions per component inside
//!   the modification subspace, and each occurrence applies at single or
//!   double strength. The same few modifications recur across clips at
//!   different strengths, so matching share content identifies a target only
//!   when both direction and magnitude are composed correctly;
//! - each stored text component is its share scaled by a factor drawn from
//!   `scale_range` times that component's `component_signal` strength; the
//!   strengths differ per component, so recovery needs per-component weights
//!   (plain averaging over- or under-corrects every aspect);
//! - the query audio tokens carry the audio-modification share through a
//!   fixed random linear map into the audio token space, so the audio stream
//!   is the only text-free route to that share;
//! - for every active component the gallery gains two sibling distractors at
//!   z - s_x and z + s_x. Under-correcting a component loses to the first,
//!   over-correcting loses to the second, so queries resolve only when every
//!   component is composed at roughly the right strength;
//! - remaining gallery entries are fresh latents.
//!
//! A fraction of triplets modify audio only (their visual text components are
//! zero vectors); the rest modify all four aspects.
//!
//! Triplets come in families of `family_size` sharing one source video:
//! sibling members keep the anchor's modification except for one component,
//! which is either not applied (target one share below the anchor's), applied
//! at double strength (one share above), or applied along a fresh direction
//! in the same block. Family targets are therefore exactly the kind of
//! near-siblings the gallery plants around every target, so in-batch
//! negatives keep exerting pressure until the composition weights are
//! calibrated at share-norm precision — the same judgement the gallery
//! distractors apply at evaluation time.
//!
//! `truth.jsonl` records the per-triplet scale factors so tests can rebuild
//! the ideal composed query (frames mean plus the unscaled shares).

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::manifest::{
    write_manifest, ClipManifest, GalleryManifest, ManifestRecord, TripletManifest,
};
use crate::data::tensor_file::{save_matrix, save_vector};
use crate::error::{Error, Result};
use crate::tensor::Tensor2;

/// Per-component signal multiplier applied to the drawn text scale.
/// Setting a component to 0 removes it from every query.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ComponentSignal {
    pub object: f64,
    pub action: f64,
    pub attribute: f64,
    pub audio: f64,
}

impl Default for ComponentSignal {
    fn default() -> Self {
        ComponentSignal {
            object: 1.0,
            action: 1.0,
            attribute: 1.0,
            audio: 1.0,
        }
    }
}

impl ComponentSignal {
    pub fn as_array(&self) -> [f64; 4] {
        [self.object, self.action, self.attribute, self.audio]
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_triplets: usize,
    /// Held-out triplets; when non-zero the output has train/ and test/
    /// subdirectories sharing one modification vocabulary and audio map.
    pub test_triplets: usize,
    /// Fresh-latent distractors added to the gallery.
    pub gallery_extra: usize,
    pub dim: usize,
    pub audio_dim: usize,
    pub n_frames: usize,
    pub audio_len: usize,
    /// Per-entry Gaussian noise sigma on frame and audio tensors.
    pub noise: f64,
    pub component_signal: ComponentSignal,
    /// Norm of each planted component share.
    pub share_norm: f64,
    /// Range the per-triplet text scale factors are drawn from.
    pub scale_range: (f64, f64),
    /// Fraction of triplets that modify audio only.
    pub audio_only_fraction: f64,
    /// Triplets per shared-latent family.
    pub family_size: usize,
    /// Modification vocabulary entries per component.
    pub mod_vocab: usize,
    /// Clip records (for the dedup / pair-mining pipeline); 0 = none.
    pub n_clips: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_triplets: 128,
            test_triplets: 0,
            gallery_extra: 100,
            dim: 512,
            audio_dim: 768,
            n_frames: 8,
            audio_len: 64,
            noise: 0.05,
            component_signal: ComponentSignal::default(),
            share_norm: 0.45,
            scale_range: (1.7, 2.1),
            audio_only_fraction: 0.4,
            family_size: 8,
            mod_vocab: 3,
            n_clips: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 8 {
            return Err(Error::InvalidConfig(format!(
                "dim {} too small (need >= 8)",
                self.dim
            )));
        }
        if self.noise < 0.0 {
            return Err(Error::InvalidConfig("noise must be >= 0".into()));
        }
        if self.n_frames == 0 || self.audio_len == 0 || self.audio_dim < 4 {
            return Err(Error::InvalidConfig(
                "n_frames, audio_len must be >= 1 and audio_dim >= 4".into(),
            ));
        }
        if !(self.scale_range.0 > 0.0 && self.scale_range.1 >= self.scale_range.0) {
            return Err(Error::InvalidConfig("bad scale_range".into()));
        }
        if !(0.0..=1.0).contains(&self.audio_only_fraction) {
            return Err(Error::InvalidConfig(
                "audio_only_fraction must be in [0, 1]".into(),
            ));
        }
        if self.share_norm <= 0.0 {
            return Err(Error::InvalidConfig("share_norm must be > 0".into()));
        }
        if self.family_size == 0 {
            return Err(Error::InvalidConfig("family_size must be >= 1".into()));
        }
        if self.mod_vocab < 2 {
            return Err(Error::InvalidConfig("mod_vocab must be >= 2".into()));
        }
        Ok(())
    }

    /// Width of the modification subspace.
    pub fn share_width(&self) -> usize {
        (self.dim / 2).max(4)
    }

    /// Dim range of the modification subspace.
    pub fn share_range(&self) -> std::ops::Range<usize> {
        (self.dim - self.share_width())..self.dim
    }
}

/// Per-triplet ground truth emitted next to the manifest.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TruthRecord {
    pub id: String,
    pub target_id: String,
    /// Text scale factor per component; 0 marks an inactive component.
    pub scales: [f64; 4],
}

pub fn read_truth(path: &Path) -> Result<Vec<TruthRecord>> {
    let pstr = path.display().to_string();
    let contents = std::fs::read_to_string(path).map_err(|e| Error::io(&pstr, e))?;
    let mut out = Vec::new();
    for (i, line) in contents.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line).map_err(|e| Error::Manifest {
            path: pstr.clone(),
            line: i + 1,
            msg: e.to_string(),
        })?);
    }
    Ok(out)
}

struct Gen<'a> {
    cfg: &'a SynthConfig,
    rng: ChaCha8Rng,
    noise: Option<Normal<f64>>,
}

impl<'a> Gen<'a> {
    fn normal(&mut self) -> f64 {
        // unit normal via the distribution tables; deterministic per seed
        Normal::new(0.0, 1.0).unwrap().sample(&mut self.rng)
    }

    /// Random unit vector supported on `range` inside a D-vector.
    fn unit_in(&mut self, range: std::ops::Range<usize>) -> Vec<f64> {
        let mut v = vec![0.0; self.cfg.dim];
        loop {
            let mut norm2 = 0.0;
            for i in range.clone() {
                let x = self.normal();
                v[i] = x;
                norm2 += x * x;
            }
            if norm2 > 1e-12 {
                let inv = 1.0 / norm2.sqrt();
                for i in range.clone() {
                    v[i] *= inv;
                }
                return v;
            }
        }
    }

    /// Rows of `base` plus per-entry noise.
    fn noisy_rows(&mut self, base: &[f64], rows: usize) -> Tensor2 {
        let mut t = Tensor2::zeros(rows, base.len());
        for i in 0..rows {
            let row = t.row_mut(i);
            row.copy_from_slice(base);
            if let Some(n) = &self.noise {
                for v in row.iter_mut() {
                    *v += n.sample(&mut self.rng);
                }
            }
        }
        t
    }
}

/// Generate a dataset under `out_dir`: `manifest.jsonl`, `truth.jsonl`, and
/// `tensors/`. With `test_triplets > 0`, `train/` and `test/` subdirectories
/// are emitted instead, sharing the same modification vocabulary and audio
/// map but with fresh clips. With `n_clips > 0` also writes `clips.jsonl`
/// at the top level. Deterministic for a given seed, byte for byte.
pub fn generate(cfg: &SynthConfig, seed: u64, out_dir: &Path) -> Result<()> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;

    let mut g = Gen {
        cfg,
        rng: ChaCha8Rng::seed_from_u64(seed),
        noise: if cfg.noise > 0.0 {
            Some(Normal::new(0.0, cfg.noise).unwrap())
        } else {
            None
        },
    };

    // fixed map from the modification subspace into the audio token space
    let mut audio_map = Tensor2::zeros(cfg.share_width(), cfg.audio_dim);
    for v in audio_map.data_mut() {
        *v = g.normal();
    }

    // finite vocabulary of modification directions, per component
    let vocab: Vec<Vec<Vec<f64>>> = (0..4)
        .map(|_| {
            (0..cfg.mod_vocab)
                .map(|_| g.unit_in(cfg.share_range()))
                .collect()
        })
        .collect();

    if cfg.test_triplets > 0 {
        emit_split(cfg, &mut g, &audio_map, &vocab, cfg.n_triplets, &out_dir.join("train"))?;
        emit_split(cfg, &mut g, &audio_map, &vocab, cfg.test_triplets, &out_dir.join("test"))?;
    } else {
        emit_split(cfg, &mut g, &audio_map, &vocab, cfg.n_triplets, out_dir)?;
    }

    if cfg.n_clips > 0 {
        let tensors_dir = out_dir.join("tensors");
        std::fs::create_dir_all(&tensors_dir)
            .map_err(|e| Error::io(tensors_dir.display().to_string(), e))?;
        generate_clips(cfg, &mut g, out_dir)?;
    }
    Ok(())
}

fn emit_split(
    cfg: &SynthConfig,
    g: &mut Gen,
    audio_map: &Tensor2,
    vocab: &[Vec<Vec<f64>>],
    n_triplets: usize,
    out_dir: &Path,
) -> Result<()> {
    let tensors_dir = out_dir.join("tensors");
    std::fs::create_dir_all(&tensors_dir)
        .map_err(|e| Error::io(tensors_dir.display().to_string(), e))?;

    let d = cfg.dim;
    let latent = 0..(d - cfg.share_width());
    let beta = cfg.share_norm;
    let signal = cfg.component_signal.as_array();

    let mut records: Vec<ManifestRecord> = Vec::new();
    let mut truth: Vec<TruthRecord> = Vec::new();

    let mat = |dir: &Path, id: &str, field: &str, t: &Tensor2| -> Result<String> {
        let rel = format!("tensors/{}.{}.avct", id, field);
        save_matrix(&dir.join(&rel), t)?;
        Ok(rel)
    };
    let vecf = |dir: &Path, id: &str, field: &str, v: &[f64]| -> Result<String> {
        let rel = format!("tensors/{}.{}.avct", id, field);
        save_vector(&dir.join(&rel), v)?;
        Ok(rel)
    };

    // family state: source-video base, the anchor's shares and vocab picks,
    // plus every base point the family has already placed (targets and
    // siblings); new points must keep their distance so that no two gallery
    // entries coincide
    let mut fam_video_base: Vec<f64> = Vec::new();
    let mut fam_shares: [Option<Vec<f64>>; 4] = [None, None, None, None];
    let mut fam_picks: [usize; 4] = [0; 4];
    let mut fam_bases: Vec<Vec<f64>> = Vec::new();

    fn far_from_all(bases: &[Vec<f64>], candidate: &[f64], min_dist: f64) -> bool {
        bases.iter().all(|b| {
            let d2: f64 = b
                .iter()
                .zip(candidate)
                .map(|(x, y)| (x - y) * (x - y))
                .sum();
            d2 > min_dist * min_dist
        })
    }

    for j in 0..n_triplets {
        let tgt_id = format!("tgt{:05}", j);
        let qry_id = format!("qry{:05}", j);

        let member = j % cfg.family_size;
        let mut shares: [Option<Vec<f64>>; 4] = [None, None, None, None];
        let mut target_base: Vec<f64> = Vec::new();
        let mut placed = false;
        if member != 0 && !fam_bases.is_empty() {
            // sibling: same video, one component's modification altered;
            // redraw until the target lands away from every existing point
            for _attempt in 0..64 {
                shares = fam_shares.clone();
                let active: Vec<usize> = (0..4).filter(|x| shares[*x].is_some()).collect();
                let x = active[g.rng.gen_range(0..active.len())];
                // weighted toward double-strength siblings, which are the
                // only in-batch pressure against over-composition; dropping
                // the only component would make the query trivial
                let roll: f64 = g.rng.gen();
                let kind = if active.len() == 1 {
                    if roll < 0.75 {
                        1
                    } else {
                        2
                    }
                } else if roll < 0.35 {
                    0
                } else if roll < 0.85 {
                    1
                } else {
                    2
                };
                match kind {
                    0 => shares[x] = None, // change not applied
                    1 => {
                        // same change at double strength
                        let doubled: Vec<f64> =
                            shares[x].as_ref().unwrap().iter().map(|v| 2.0 * v).collect();
                        shares[x] = Some(doubled);
                    }
                    _ => {
                        // a different change in the same aspect
                        let mut pick = g.rng.gen_range(0..cfg.mod_vocab);
                        if pick == fam_picks[x] {
                            pick = (pick + 1) % cfg.mod_vocab;
                        }
                        let strength = if g.rng.gen::<bool>() { 2.0 } else { 1.0 };
                        shares[x] = Some(
                            vocab[x][pick].iter().map(|v| v * beta * strength).collect(),
                        );
                    }
                }
                target_base = fam_video_base.clone();
                for share in shares.iter().flatten() {
                    for (tv, sv) in target_base.iter_mut().zip(share) {
                        *tv += sv;
                    }
                }
                if far_from_all(&fam_bases, &target_base, 1e-6) {
                    placed = true;
                    break;
                }
            }
        }
        if member == 0 || !placed {
            // new family: fresh latent, fresh shares, shared source video.
            // Also taken when the sibling configuration space is exhausted.
            let z = g.unit_in(latent.clone());
            let audio_only = g.rng.gen::<f64>() < cfg.audio_only_fraction;
            fam_shares = [None, None, None, None];
            for x in 0..4 {
                let active = (x == 3 || !audio_only) && signal[x] > 0.0;
                if active {
                    let pick = g.rng.gen_range(0..cfg.mod_vocab);
                    fam_picks[x] = pick;
                    let strength = if g.rng.gen::<bool>() { 2.0 } else { 1.0 };
                    fam_shares[x] = Some(
                        vocab[x][pick].iter().map(|v| v * beta * strength).collect(),
                    );
                }
            }
            fam_video_base = z.clone();
            for share in fam_shares.iter().flatten() {
                for (qv, sv) in fam_video_base.iter_mut().zip(share) {
                    *qv -= sv;
                }
            }
            shares = fam_shares.clone();
            target_base = z;
            fam_bases.clear();
        }
        fam_bases.push(target_base.clone());

        let mut scales = [0.0f64; 4];
        for (x, share) in shares.iter().enumerate() {
            if share.is_some() {
                scales[x] = g.rng.gen_range(cfg.scale_range.0..=cfg.scale_range.1) * signal[x];
            }
        }

        // target entry
        let target_frames = g.noisy_rows(&target_base, cfg.n_frames);
        let target_audio = g.noisy_rows(&vec![0.0; cfg.audio_dim], cfg.audio_len);
        records.push(ManifestRecord::Gallery(GalleryManifest {
            id: tgt_id.clone(),
            frames: mat(out_dir, &tgt_id, "frames", &target_frames)?,
            audio: mat(out_dir, &tgt_id, "audio", &target_audio)?,
        }));

        // sibling distractors one share away from the target, both signs;
        // skipped when the point is already occupied by a family target or
        // an earlier sibling
        for (x, share) in shares.iter().enumerate() {
            let Some(share) = share else { continue };
            for (tag, sign) in [("m", -1.0), ("p", 1.0)] {
                let base: Vec<f64> = target_base
                    .iter()
                    .zip(share)
                    .map(|(zv, sv)| zv + sign * sv)
                    .collect();
                if !far_from_all(&fam_bases, &base, 1e-6) {
                    continue;
                }
                fam_bases.push(base.clone());
                let id = format!("twn{:05}{}{}", j, tag, x);
                let frames = g.noisy_rows(&base, cfg.n_frames);
                let audio = g.noisy_rows(&vec![0.0; cfg.audio_dim], cfg.audio_len);
                records.push(ManifestRecord::Gallery(GalleryManifest {
                    id: id.clone(),
                    frames: mat(out_dir, &id, "frames", &frames)?,
                    audio: mat(out_dir, &id, "audio", &audio)?,
                }));
            }
        }

        let query_frames = g.noisy_rows(&fam_video_base, cfg.n_frames);

        let query_audio = if let Some(share) = &shares[3] {
            // carrier = normalized map of the audio share, rescaled to beta
            let coords = Tensor2::from_row(&share[cfg.share_range()]);
            let raw = crate::tensor::matmul(&coords, audio_map)?;
            let unit = crate::tensor::l2_normalize(raw.row(0), 1e-12)?;
            let carrier: Vec<f64> = unit.iter().map(|v| v * beta).collect();
            g.noisy_rows(&carrier, cfg.audio_len)
        } else {
            g.noisy_rows(&vec![0.0; cfg.audio_dim], cfg.audio_len)
        };

        let zero_text = vec![0.0; d];
        let mut text_rels = Vec::with_capacity(4);
        for (x, field) in ["text_object", "text_action", "text_attribute", "text_audio"]
            .iter()
            .enumerate()
        {
            let stored: Vec<f64> = match &shares[x] {
                Some(share) => share.iter().map(|v| v * scales[x]).collect(),
                None => zero_text.clone(),
            };
            text_rels.push(vecf(out_dir, &qry_id, field, &stored)?);
        }

        records.push(ManifestRecord::Triplet(TripletManifest {
            id: qry_id.clone(),
            query_frames: mat(out_dir, &qry_id, "query_frames", &query_frames)?,
            query_audio: mat(out_dir, &qry_id, "query_audio", &query_audio)?,
            text_object: text_rels[0].clone(),
            text_action: text_rels[1].clone(),
            text_attribute: text_rels[2].clone(),
            text_audio: text_rels[3].clone(),
            target_id: tgt_id.clone(),
        }));
        truth.push(TruthRecord {
            id: qry_id,
            target_id: tgt_id,
            scales,
        });
    }

    // fresh-latent distractors
    for i in 0..cfg.gallery_extra {
        let id = format!("dis{:05}", i);
        let z = g.unit_in(latent.clone());
        let frames = g.noisy_rows(&z, cfg.n_frames);
        let audio = g.noisy_rows(&vec![0.0; cfg.audio_dim], cfg.audio_len);
        records.push(ManifestRecord::Gallery(GalleryManifest {
            id: id.clone(),
            frames: mat(out_dir, &id, "frames", &frames)?,
            audio: mat(out_dir, &id, "audio", &audio)?,
        }));
    }

    write_manifest(&out_dir.join("manifest.jsonl"), &records)?;

    let truth_path = out_dir.join("truth.jsonl");
    let mut truth_lines = String::new();
    for t in &truth {
        truth_lines.push_str(&serde_json::to_string(t).expect("truth serializes"));
        truth_lines.push('\n');
    }
    std::fs::write(&truth_path, truth_lines)
        .map_err(|e| Error::io(truth_path.display().to_string(), e))
}

/// Unit vector at an exact cosine to `base` (both unit).
fn at_cosine(g: &mut Gen, base: &[f64], target_cos: f64) -> Vec<f64> {
    let d = base.len();
    loop {
        let mut w: Vec<f64> = (0..d).map(|_| g.normal()).collect();
        let proj = crate::tensor::dot(&w, base);
        for (wv, bv) in w.iter_mut().zip(base) {
            *wv -= proj * bv;
        }
        let n = crate::tensor::norm(&w);
        if n > 1e-9 {
            let sin = (1.0 - target_cos * target_cos).sqrt();
            return base
                .iter()
                .zip(&w)
                .map(|(bv, wv)| target_cos * bv + sin * wv / n)
                .collect();
        }
    }
}

/// Clip records with planted duplicate pairs and pairs inside both mining
/// bands, plus unrelated singles. Written to `clips.jsonl`.
fn generate_clips(cfg: &SynthConfig, g: &mut Gen, out_dir: &Path) -> Result<()> {
    let d = cfg.dim;
    let mut records = Vec::new();
    let mut i = 0usize;

    let push_clip = |i: usize, e_v: &[f64], e_a: &[f64]| -> Result<ClipManifest> {
        let id = format!("clip{:05}", i);
        // identical frame rows so the clip-level mean recovers e_v exactly
        let mut rows = Tensor2::zeros(cfg.n_frames, d);
        for r in 0..cfg.n_frames {
            rows.row_mut(r).copy_from_slice(e_v);
        }
        let frames_rel = format!("tensors/{}.frames.avct", id);
        save_matrix(&out_dir.join(&frames_rel), &rows)?;
        let audio_rel = format!("tensors/{}.audio_caption.avct", id);
        save_vector(&out_dir.join(&audio_rel), e_a)?;
        Ok(ClipManifest {
            id,
            frames: frames_rel,
            audio_caption: audio_rel,
            caption: None,
        })
    };

    while i < cfg.n_clips {
        let kind = (i / 2) % 4;
        let v1 = g.unit_in(0..d);
        let a1 = g.unit_in(0..d);
        records.push(ManifestRecord::Clip(push_clip(i, &v1, &a1)?));
        i += 1;
        if i >= cfg.n_clips || kind == 3 {
            continue;
        }
        let (cv, ca) = match kind {
            0 => (0.95, 0.98),  // near-duplicate
            1 => (0.94, 0.60),  // visually similar, audio differs
            _ => (0.865, 0.97), // slight visual difference, audio similar
        };
        let v2 = at_cosine(g, &v1, cv);
        let a2 = at_cosine(g, &a1, ca);
        records.push(ManifestRecord::Clip(push_clip(i, &v2, &a2)?));
        i += 1;
    }

    write_manifest(&out_dir.join("clips.jsonl"), &records)
}
