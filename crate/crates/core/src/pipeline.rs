//! Clip-level embedding construction, redundancy reduction, and two-band
//! candidate pair mining.
//!
//! A clip record pairs a clip-level video embedding E_v (the plain mean of
//! its frame embeddings, not renormalized — cosine handles scale downstream)
//! with an audio-caption embedding E_a in the same width. Dedup drops a
//! record when an earlier retained record is close on BOTH channels; mining
//! keeps unordered pairs whose similarities fall strictly inside one of two
//! bands: visually similar but different audio, or slightly different visuals
//! with matching audio.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::manifest::{self, ManifestRecord};
use crate::data::tensor_file;
use crate::error::{Error, Result};
use crate::tensor::{cosine_similarity, norm, Tensor2, EPS_NORM};

#[derive(Clone, Debug)]
pub struct ClipRecord {
    pub id: String,
    pub e_v: Vec<f64>,
    pub e_a: Vec<f64>,
}

/// Clip-level video embedding: column mean over frame embeddings.
pub fn clip_embedding(frames: &Tensor2) -> Result<Vec<f64>> {
    frames.mean_rows()
}

/// Load clip records from a manifest (non-clip records are ignored).
pub fn load_clips(manifest_path: &Path) -> Result<Vec<ClipRecord>> {
    let records = manifest::read_manifest(manifest_path)?;
    let mut out = Vec::new();
    for (_, rec) in records {
        let ManifestRecord::Clip(c) = rec else {
            continue;
        };
        let frames = tensor_file::load(&manifest::resolve(manifest_path, &c.frames))
            .and_then(|t| t.as_matrix(&c.frames))
            .map_err(|e| Error::Record {
                id: c.id.clone(),
                msg: e.to_string(),
            })?;
        let e_v = clip_embedding(&frames).map_err(|e| Error::Record {
            id: c.id.clone(),
            msg: e.to_string(),
        })?;
        let e_a = tensor_file::load(&manifest::resolve(manifest_path, &c.audio_caption))
            .and_then(|t| t.as_vector(&c.audio_caption))
            .map_err(|e| Error::Record {
                id: c.id.clone(),
                msg: e.to_string(),
            })?;
        for (what, v) in [("E_v", &e_v), ("E_a", &e_a)] {
            if !(norm(v) > EPS_NORM) {
                return Err(Error::Record {
                    id: c.id.clone(),
                    msg: format!("{} has vanishing norm", what),
                });
            }
        }
        out.push(ClipRecord {
            id: c.id,
            e_v,
            e_a,
        });
    }
    Ok(out)
}

pub const DEDUP_THETA_V: f64 = 0.92;
pub const DEDUP_THETA_A: f64 = 0.96;

/// Greedy first-wins dedup in input order. A record is dropped iff some
/// earlier retained record satisfies S(E_v) > theta_v AND S(E_a) > theta_a.
/// Returns the indices of retained records; output order is input order.
pub fn dedup_indices(records: &[ClipRecord], theta_v: f64, theta_a: f64) -> Result<Vec<usize>> {
    let mut retained: Vec<usize> = Vec::new();
    for (i, rec) in records.iter().enumerate() {
        let mut duplicate = false;
        for &k in &retained {
            let s_v = cosine_similarity(&records[k].e_v, &rec.e_v, EPS_NORM)?;
            let s_a = cosine_similarity(&records[k].e_a, &rec.e_a, EPS_NORM)?;
            if s_v > theta_v && s_a > theta_a {
                duplicate = true;
                break;
            }
        }
        if !duplicate {
            retained.push(i);
        }
    }
    Ok(retained)
}

pub fn dedup(records: &[ClipRecord], theta_v: f64, theta_a: f64) -> Result<Vec<ClipRecord>> {
    Ok(dedup_indices(records, theta_v, theta_a)?
        .into_iter()
        .map(|i| records[i].clone())
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Band {
    /// Visually similar, audio captions differ.
    VisualSimilarAudioDiffer,
    /// Slight visual difference, audio captions similar.
    VisualDifferAudioSimilar,
}

/// How the visual and audio interval conditions combine within a band.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Combine {
    And,
    Or,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct BandThresholds {
    /// Band 1 open interval on S(E_v).
    pub band1_v: (f64, f64),
    /// Band 1 open interval on S(E_a).
    pub band1_a: (f64, f64),
    pub band2_v: (f64, f64),
    pub band2_a: (f64, f64),
    pub combine: Combine,
}

impl Default for BandThresholds {
    fn default() -> Self {
        BandThresholds {
            band1_v: (0.92, 0.96),
            band1_a: (0.0, 0.85),
            band2_v: (0.85, 0.88),
            band2_a: (0.95, 1.0),
            combine: Combine::And,
        }
    }
}

#[inline]
fn inside(x: f64, (lo, hi): (f64, f64)) -> bool {
    x > lo && x < hi
}

/// Band membership. All bounds are strict. With [`Combine::Or`] the bands can
/// overlap; band 1 is checked first.
pub fn band_of(s_v: f64, s_a: f64, th: &BandThresholds) -> Option<Band> {
    let pick = |v: bool, a: bool| match th.combine {
        Combine::And => v && a,
        Combine::Or => v || a,
    };
    if pick(inside(s_v, th.band1_v), inside(s_a, th.band1_a)) {
        return Some(Band::VisualSimilarAudioDiffer);
    }
    if pick(inside(s_v, th.band2_v), inside(s_a, th.band2_a)) {
        return Some(Band::VisualDifferAudioSimilar);
    }
    None
}

/// Empty caption payload attached to mined pairs; external captioning steps
/// fill these in.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct CaptionPayload {
    pub video_a: String,
    pub video_b: String,
    pub audio_a: String,
    pub audio_b: String,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ModificationPayload {
    pub object: String,
    pub action: String,
    pub attribute: String,
    pub audio: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CandidatePair {
    /// Lexicographically smaller id.
    pub id_a: String,
    pub id_b: String,
    pub s_v: f64,
    pub s_a: f64,
    pub band: Band,
    #[serde(default)]
    pub captions: CaptionPayload,
    #[serde(default)]
    pub modification: ModificationPayload,
}

/// Test every unordered pair against the band predicates. Pair ids are
/// canonicalized (id_a < id_b) and the output is sorted by (band, id_a, id_b).
pub fn mine_pairs(records: &[ClipRecord], th: &BandThresholds) -> Result<Vec<CandidatePair>> {
    let mut out = Vec::new();
    for i in 0..records.len() {
        for j in (i + 1)..records.len() {
            let s_v = cosine_similarity(&records[i].e_v, &records[j].e_v, EPS_NORM)?;
            let s_a = cosine_similarity(&records[i].e_a, &records[j].e_a, EPS_NORM)?;
            if let Some(band) = band_of(s_v, s_a, th) {
                let (a, b) = if records[i].id <= records[j].id {
                    (i, j)
                } else {
                    (j, i)
                };
                out.push(CandidatePair {
                    id_a: records[a].id.clone(),
                    id_b: records[b].id.clone(),
                    s_v,
                    s_a,
                    band,
                    captions: CaptionPayload::default(),
                    modification: ModificationPayload::default(),
                });
            }
        }
    }
    out.sort_by(|x, y| {
        (x.band, &x.id_a, &x.id_b).cmp(&(y.band, &y.id_a, &y.id_b))
    });
    Ok(out)
}

/// Write mined pairs as line-delimited JSON.
pub fn write_pairs(path: &Path, pairs: &[CandidatePair]) -> Result<()> {
    let mut body = String::new();
    for p in pairs {
        body.push_str(&serde_json::to_string(p).expect("pairs serialize"));
        body.push('\n');
    }
    std::fs::write(path, body).map_err(|e| Error::io(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn clip(id: &str, e_v: Vec<f64>, e_a: Vec<f64>) -> ClipRecord {
        ClipRecord {
            id: id.into(),
            e_v,
            e_a,
        }
    }

    /// Pair of unit vectors with the given cosine, in dimension d.
    fn pair_at(cos: f64, d: usize) -> (Vec<f64>, Vec<f64>) {
        let mut a = vec![0.0; d];
        a[0] = 1.0;
        let mut b = vec![0.0; d];
        b[0] = cos;
        b[1] = (1.0 - cos * cos).sqrt();
        (a, b)
    }

    #[test]
    fn clip_embedding_examples() {
        let same = Tensor2::from_vec(3, 2, vec![0.5, -1.0, 0.5, -1.0, 0.5, -1.0]).unwrap();
        assert_eq!(clip_embedding(&same).unwrap(), vec![0.5, -1.0]);

        let m = Tensor2::from_vec(2, 2, vec![1., 0., 0., 1.]).unwrap();
        assert_eq!(clip_embedding(&m).unwrap(), vec![0.5, 0.5]);

        let perm = Tensor2::from_vec(2, 2, vec![0., 1., 1., 0.]).unwrap();
        assert_eq!(clip_embedding(&m).unwrap(), clip_embedding(&perm).unwrap());

        assert!(clip_embedding(&Tensor2::zeros(0, 3)).is_err());
    }

    #[test]
    fn dedup_drops_only_when_both_channels_exceed() {
        let (v1, v2) = pair_at(0.93, 8);
        let (a1, a2) = pair_at(0.97, 8);
        let recs = vec![clip("a", v1.clone(), a1.clone()), clip("b", v2.clone(), a2)];
        let kept = dedup(&recs, DEDUP_THETA_V, DEDUP_THETA_A).unwrap();
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].id, "a");

        // audio condition fails at 0.95 -> both retained
        let (_, a3) = pair_at(0.95, 8);
        let recs2 = vec![clip("a", v1, a1), clip("b", v2, a3)];
        let kept2 = dedup(&recs2, DEDUP_THETA_V, DEDUP_THETA_A).unwrap();
        assert_eq!(kept2.len(), 2);
    }

    #[test]
    fn exact_duplicates_keep_first_only() {
        let e_v: Vec<f64> = vec![0.3, 0.4, 0.5, 0.1];
        let e_a: Vec<f64> = vec![0.9, -0.2, 0.1, 0.0];
        let recs: Vec<ClipRecord> = (0..5)
            .map(|i| clip(&format!("c{}", i), e_v.clone(), e_a.clone()))
            .collect();
        let kept = dedup(&recs, DEDUP_THETA_V, DEDUP_THETA_A).unwrap();
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].id, "c0");
    }

    fn random_clips(n: usize, seed: u64) -> Vec<ClipRecord> {
        // correlated draws so thresholds actually trigger
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = 12;
        let mut out = Vec::new();
        let mut base_v = vec![0.0; d];
        let mut base_a = vec![0.0; d];
        for v in base_v.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        for v in base_a.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        for i in 0..n {
            let mut e_v = base_v.clone();
            let mut e_a = base_a.clone();
            let jv: f64 = rng.gen_range(0.0..0.6);
            let ja: f64 = rng.gen_range(0.0..0.6);
            for v in e_v.iter_mut() {
                *v += rng.gen_range(-jv..=jv.max(1e-9));
            }
            for v in e_a.iter_mut() {
                *v += rng.gen_range(-ja..=ja.max(1e-9));
            }
            out.push(clip(&format!("r{:03}", i), e_v, e_a));
        }
        out
    }

    #[test]
    fn dedup_is_idempotent_and_matches_brute_force() {
        let recs = random_clips(60, 3);
        let once = dedup(&recs, DEDUP_THETA_V, DEDUP_THETA_A).unwrap();
        let twice = dedup(&once, DEDUP_THETA_V, DEDUP_THETA_A).unwrap();
        assert_eq!(once.len(), twice.len());
        for (a, b) in once.iter().zip(&twice) {
            assert_eq!(a.id, b.id);
        }

        // brute force: sequential definition, re-derived independently
        let mut kept_ids: Vec<String> = Vec::new();
        let mut kept: Vec<&ClipRecord> = Vec::new();
        'outer: for r in &recs {
            for k in &kept {
                let sv = cosine_similarity(&k.e_v, &r.e_v, EPS_NORM).unwrap();
                let sa = cosine_similarity(&k.e_a, &r.e_a, EPS_NORM).unwrap();
                if sv > DEDUP_THETA_V && sa > DEDUP_THETA_A {
                    continue 'outer;
                }
            }
            kept.push(r);
            kept_ids.push(r.id.clone());
        }
        assert_eq!(
            once.iter().map(|r| r.id.clone()).collect::<Vec<_>>(),
            kept_ids
        );
    }

    #[test]
    fn band_examples_and_strict_bounds() {
        let th = BandThresholds::default();
        assert_eq!(
            band_of(0.94, 0.60, &th),
            Some(Band::VisualSimilarAudioDiffer)
        );
        assert_eq!(
            band_of(0.86, 0.97, &th),
            Some(Band::VisualDifferAudioSimilar)
        );
        // strict bounds at the exact threshold values
        assert_eq!(band_of(0.92, 0.60, &th), None);
        assert_eq!(band_of(0.96, 0.60, &th), None);
        assert_eq!(band_of(0.94, 0.85, &th), None);
        assert_eq!(band_of(0.94, 0.0, &th), None);
        assert_eq!(band_of(0.85, 0.97, &th), None);
        assert_eq!(band_of(0.88, 0.97, &th), None);
        assert_eq!(band_of(0.86, 0.95, &th), None);
        assert_eq!(band_of(0.86, 1.0, &th), None);
        // the two visual intervals are disjoint: no input can be in both
        assert!(!(inside(0.9, th.band1_v) && inside(0.9, th.band2_v)));
    }

    #[test]
    fn or_combinator_widens_bands() {
        let th = BandThresholds {
            combine: Combine::Or,
            ..BandThresholds::default()
        };
        // visual outside band 1, audio inside -> OR admits it
        assert_eq!(
            band_of(0.5, 0.60, &th),
            Some(Band::VisualSimilarAudioDiffer)
        );
        let and = BandThresholds::default();
        assert_eq!(band_of(0.5, 0.60, &and), None);
    }

    #[test]
    fn mine_pairs_matches_brute_force_double_loop() {
        let recs = random_clips(50, 9);
        let th = BandThresholds::default();
        let mined = mine_pairs(&recs, &th).unwrap();

        let mut expected = Vec::new();
        for i in 0..recs.len() {
            for j in 0..recs.len() {
                if i >= j {
                    continue;
                }
                let sv = cosine_similarity(&recs[i].e_v, &recs[j].e_v, EPS_NORM).unwrap();
                let sa = cosine_similarity(&recs[i].e_a, &recs[j].e_a, EPS_NORM).unwrap();
                let band1 = sv > 0.92 && sv < 0.96 && sa > 0.0 && sa < 0.85;
                let band2 = sv > 0.85 && sv < 0.88 && sa > 0.95 && sa < 1.0;
                if band1 || band2 {
                    let (a, b) = if recs[i].id <= recs[j].id { (i, j) } else { (j, i) };
                    expected.push((band2, recs[a].id.clone(), recs[b].id.clone()));
                }
            }
        }
        expected.sort();
        let got: Vec<(bool, String, String)> = mined
            .iter()
            .map(|p| {
                (
                    p.band == Band::VisualDifferAudioSimilar,
                    p.id_a.clone(),
                    p.id_b.clone(),
                )
            })
            .collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn pair_ids_are_canonical_and_order_is_deterministic() {
        let (v1, v2) = pair_at(0.94, 8);
        let (a1, a2) = pair_at(0.5, 8);
        // "z" before "a" in input; output must still be (a, z)
        let recs = vec![clip("z", v1, a1), clip("a", v2, a2)];
        let mined = mine_pairs(&recs, &BandThresholds::default()).unwrap();
        assert_eq!(mined.len(), 1);
        assert_eq!(mined[0].id_a, "a");
        assert_eq!(mined[0].id_b, "z");
        assert!(mined[0].id_a < mined[0].id_b);
    }
}
