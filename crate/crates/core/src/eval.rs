//! Full-gallery cosine ranking and retrieval metrics.
//!
//! The gallery is ranked exhaustively for every query by dot product over
//! unit embeddings; ties break toward the lower gallery index. Metrics are
//! R@1/5/10 (percentage of queries whose target lands in the top K) and the
//! mean 1-based rank of the target.

use serde::{Deserialize, Serialize};

use crate::data::{GalleryEntry, TripletRecord};
use crate::error::{Error, Result};
use crate::params::{FusionParams, ModelConfig};
use crate::tensor::Tensor2;
use crate::trainer::{encode_query, encode_target};

/// Unit-norm gallery embedding matrix with row ids.
pub struct GalleryEmbeddings {
    pub ids: Vec<String>,
    pub rows: Tensor2,
}

impl GalleryEmbeddings {
    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|g| g == id)
    }
}

/// One query's ranking: gallery indices in descending-similarity order plus
/// the 1-based rank of the ground-truth entry.
#[derive(Clone, Debug)]
pub struct RankedResult {
    pub query_id: String,
    /// Permutation of gallery indices, best match first.
    pub order: Vec<u32>,
    pub truth_rank: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub r1: f64,
    pub r5: f64,
    pub r10: f64,
    pub mnr: f64,
    pub queries: usize,
    pub gallery: usize,
}

impl std::fmt::Display for MetricsTable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "queries: {}   gallery: {}", self.queries, self.gallery)?;
        writeln!(f, "R@1    R@5    R@10   MnR")?;
        write!(
            f,
            "{:<6.1} {:<6.1} {:<6.1} {:<6.1}",
            self.r1, self.r5, self.r10, self.mnr
        )
    }
}

/// Rank the gallery for one query. Descending dot product, ties broken by
/// ascending gallery index.
pub fn rank(
    query_id: &str,
    query: &[f64],
    gallery: &GalleryEmbeddings,
    truth_id: &str,
) -> Result<RankedResult> {
    let g = gallery.rows.rows();
    if g == 0 {
        return Err(Error::EmptyInput { what: "gallery" });
    }
    let truth_idx = gallery
        .index_of(truth_id)
        .ok_or_else(|| Error::MissingTarget {
            triplet_id: query_id.to_string(),
            target_id: truth_id.to_string(),
        })? as u32;

    let mut scored: Vec<(f64, u32)> = (0..g)
        .map(|i| (crate::tensor::dot(gallery.rows.row(i), query), i as u32))
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

    let order: Vec<u32> = scored.iter().map(|(_, i)| *i).collect();
    let truth_rank = order
        .iter()
        .position(|i| *i == truth_idx)
        .expect("truth index present in permutation")
        + 1;
    Ok(RankedResult {
        query_id: query_id.to_string(),
        order,
        truth_rank,
    })
}

/// Percentage of results whose target ranks within the top k.
pub fn recall_at_k(results: &[RankedResult], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidConfig("recall@k needs k >= 1".into()));
    }
    if results.is_empty() {
        return Err(Error::EmptyInput { what: "rank results" });
    }
    let hits = results.iter().filter(|r| r.truth_rank <= k).count();
    Ok(100.0 * hits as f64 / results.len() as f64)
}

/// Arithmetic mean of the 1-based target ranks.
pub fn mean_rank(results: &[RankedResult]) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::EmptyInput { what: "rank results" });
    }
    Ok(results.iter().map(|r| r.truth_rank as f64).sum::<f64>() / results.len() as f64)
}

pub fn metrics_from_results(results: &[RankedResult], gallery_size: usize) -> Result<MetricsTable> {
    Ok(MetricsTable {
        r1: recall_at_k(results, 1)?,
        r5: recall_at_k(results, 5)?,
        r10: recall_at_k(results, 10)?,
        mnr: mean_rank(results)?,
        queries: results.len(),
        gallery: gallery_size,
    })
}

fn chunk_ranges(len: usize, chunks: usize) -> Vec<std::ops::Range<usize>> {
    let per = len.div_ceil(chunks.max(1)).max(1);
    (0..len)
        .step_by(per)
        .map(|s| s..(s + per).min(len))
        .collect()
}

/// Encode every gallery entry once into a unit-row matrix.
pub fn encode_gallery(
    gallery: &[GalleryEntry],
    params: &FusionParams,
    cfg: &ModelConfig,
    threads: usize,
) -> Result<GalleryEmbeddings> {
    if gallery.is_empty() {
        return Err(Error::EmptyInput { what: "gallery" });
    }
    let ranges = chunk_ranges(gallery.len(), 8);
    let encode_range = |range: std::ops::Range<usize>| -> Result<Vec<Vec<f64>>> {
        range
            .map(|i| encode_target(&gallery[i].frames, &gallery[i].audio, params, cfg))
            .collect()
    };
    let chunks: Vec<Result<Vec<Vec<f64>>>> = if threads > 1 {
        use rayon::prelude::*;
        ranges.par_iter().cloned().map(encode_range).collect()
    } else {
        ranges.iter().cloned().map(encode_range).collect()
    };

    let mut rows = Tensor2::zeros(gallery.len(), cfg.dim);
    let mut idx = 0usize;
    for chunk in chunks {
        for emb in chunk? {
            rows.row_mut(idx).copy_from_slice(&emb);
            idx += 1;
        }
    }
    Ok(GalleryEmbeddings {
        ids: gallery.iter().map(|g| g.id.clone()).collect(),
        rows,
    })
}

/// Encode queries and gallery, rank every query, aggregate metrics.
/// Deterministic and independent of processing order.
pub fn evaluate(
    triplets: &[TripletRecord],
    gallery: &[GalleryEntry],
    params: &FusionParams,
    cfg: &ModelConfig,
    threads: usize,
) -> Result<(MetricsTable, Vec<RankedResult>)> {
    if triplets.is_empty() {
        return Err(Error::EmptyInput { what: "test triplets" });
    }
    let embeddings = encode_gallery(gallery, params, cfg, threads)?;

    let ranges = chunk_ranges(triplets.len(), 8);
    let rank_range = |range: std::ops::Range<usize>| -> Result<Vec<RankedResult>> {
        range
            .map(|i| {
                let rec = &triplets[i];
                let q = encode_query(rec, params, cfg)?;
                rank(&rec.id, &q.embedding, &embeddings, &rec.target_id)
            })
            .collect()
    };
    let chunks: Vec<Result<Vec<RankedResult>>> = if threads > 1 {
        use rayon::prelude::*;
        ranges.par_iter().cloned().map(rank_range).collect()
    } else {
        ranges.iter().cloned().map(rank_range).collect()
    };

    let mut results = Vec::with_capacity(triplets.len());
    for chunk in chunks {
        results.extend(chunk?);
    }
    let metrics = metrics_from_results(&results, gallery.len())?;
    Ok((metrics, results))
}

/// Serialize metrics as a single deterministic JSON line.
pub fn write_metrics(path: &std::path::Path, metrics: &MetricsTable) -> Result<()> {
    let mut body = serde_json::to_string(metrics).expect("metrics serialize");
    body.push('\n');
    std::fs::write(path, body).map_err(|e| Error::io(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gallery_from_rows(rows: Vec<Vec<f64>>) -> GalleryEmbeddings {
        let d = rows[0].len();
        let mut m = Tensor2::zeros(rows.len(), d);
        for (i, r) in rows.iter().enumerate() {
            m.row_mut(i).copy_from_slice(r);
        }
        GalleryEmbeddings {
            ids: (0..rows.len()).map(|i| format!("g{}", i)).collect(),
            rows: m,
        }
    }

    #[test]
    fn self_retrieval_ranks_first() {
        let g = gallery_from_rows(vec![
            vec![1., 0., 0.],
            vec![0., 1., 0.],
            vec![0., 0., 1.],
        ]);
        let r = rank("q", &[0., 1., 0.], &g, "g1").unwrap();
        assert_eq!(r.truth_rank, 1);
        assert_eq!(r.order[0], 1);
    }

    #[test]
    fn ties_break_by_gallery_index() {
        let row = vec![0.6, 0.8];
        let g = gallery_from_rows(vec![row.clone(), row.clone(), row.clone()]);
        let r = rank("q", &[0.6, 0.8], &g, "g2").unwrap();
        assert_eq!(r.order, vec![0, 1, 2]);
        assert_eq!(r.truth_rank, 3);
    }

    #[test]
    fn order_matches_brute_force_sort() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<Vec<f64>> = (0..10)
            .map(|_| {
                let v: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
                crate::tensor::l2_normalize(&v, 1e-12).unwrap()
            })
            .collect();
        let q: Vec<f64> = {
            let v: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
            crate::tensor::l2_normalize(&v, 1e-12).unwrap()
        };
        let g = gallery_from_rows(rows.clone());
        let r = rank("q", &q, &g, "g0").unwrap();

        let mut brute: Vec<(f64, usize)> = rows
            .iter()
            .enumerate()
            .map(|(i, row)| (crate::tensor::dot(row, &q), i))
            .collect();
        brute.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let expect: Vec<u32> = brute.iter().map(|(_, i)| *i as u32).collect();
        assert_eq!(r.order, expect);
    }

    #[test]
    fn rank_is_invariant_to_query_rescaling() {
        let g = gallery_from_rows(vec![
            vec![1., 0., 0.],
            vec![0.6, 0.8, 0.],
            vec![0., 0., 1.],
        ]);
        let q = [0.9, 0.1, 0.05];
        let r1 = rank("q", &q, &g, "g0").unwrap();
        let scaled: Vec<f64> = q.iter().map(|v| v * 7.25).collect();
        let r2 = rank("q", &scaled, &g, "g0").unwrap();
        assert_eq!(r1.order, r2.order);
    }

    fn fake_results(ranks: &[usize]) -> Vec<RankedResult> {
        ranks
            .iter()
            .enumerate()
            .map(|(i, r)| RankedResult {
                query_id: format!("q{}", i),
                order: Vec::new(),
                truth_rank: *r,
            })
            .collect()
    }

    #[test]
    fn recall_examples() {
        let rs = fake_results(&[1, 3]);
        assert_eq!(recall_at_k(&rs, 1).unwrap(), 50.0);
        assert_eq!(recall_at_k(&rs, 5).unwrap(), 100.0);
        assert!(recall_at_k(&rs, 0).is_err());
        assert!(recall_at_k(&[], 1).is_err());
    }

    #[test]
    fn recall_monotone_in_k() {
        let rs = fake_results(&[1, 2, 7, 4, 11, 3, 9]);
        let mut prev = 0.0;
        for k in 1..=12 {
            let r = recall_at_k(&rs, k).unwrap();
            assert!(r >= prev);
            prev = r;
        }
    }

    #[test]
    fn mean_rank_examples() {
        assert_eq!(mean_rank(&fake_results(&[1, 3])).unwrap(), 2.0);
        assert_eq!(mean_rank(&fake_results(&[1, 1, 1])).unwrap(), 1.0);
        assert!(mean_rank(&[]).is_err());
    }

    #[test]
    fn empty_gallery_is_an_error() {
        let g = GalleryEmbeddings {
            ids: Vec::new(),
            rows: Tensor2::zeros(0, 3),
        };
        assert!(matches!(
            rank("q", &[1., 0., 0.], &g, "g0"),
            Err(Error::EmptyInput { .. })
        ));
    }

    #[test]
    fn missing_truth_names_the_query() {
        let g = gallery_from_rows(vec![vec![1., 0.]]);
        match rank("query-7", &[1., 0.], &g, "nope") {
            Err(Error::MissingTarget { triplet_id, target_id }) => {
                assert_eq!(triplet_id, "query-7");
                assert_eq!(target_id, "nope");
            }
            other => panic!("expected missing target, got {:?}", other.map(|r| r.truth_rank)),
        }
    }
}
