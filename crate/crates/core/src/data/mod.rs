//! Data model, on-disk formats, dataset loading, and the synthetic generator.

pub mod checkpoint;
pub mod manifest;
pub mod synth;
pub mod tensor_file;

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor2;
use manifest::ManifestRecord;

/// Dataset-level tensor dimensions; every record must agree with them.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DatasetDims {
    /// Shared embedding width D.
    pub dim: usize,
    /// Audio token width D_a.
    pub audio_dim: usize,
    /// Frames per clip N.
    pub n_frames: usize,
    /// Audio tokens per clip T.
    pub audio_len: usize,
}

/// One training/eval triplet: query clip, four text components, target clip.
#[derive(Clone, Debug)]
pub struct TripletRecord {
    pub id: String,
    pub query_frames: Tensor2,
    pub query_audio: Tensor2,
    /// Text component embeddings in fixed order: object, action, attribute, audio.
    pub text: [Vec<f64>; 4],
    pub target_id: String,
    pub target_frames: Tensor2,
    pub target_audio: Tensor2,
}

#[derive(Clone, Debug)]
pub struct GalleryEntry {
    pub id: String,
    pub frames: Tensor2,
    pub audio: Tensor2,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub dims: DatasetDims,
    pub triplets: Vec<TripletRecord>,
    pub gallery: Vec<GalleryEntry>,
    gallery_index: HashMap<String, usize>,
}

impl Dataset {
    pub fn gallery_index(&self, id: &str) -> Option<usize> {
        self.gallery_index.get(id).copied()
    }
}

fn load_matrix(manifest_path: &Path, rel: &str, record_id: &str) -> Result<Tensor2> {
    let path = manifest::resolve(manifest_path, rel);
    let t = tensor_file::load(&path).map_err(|e| Error::Record {
        id: record_id.to_string(),
        msg: e.to_string(),
    })?;
    t.as_matrix(rel).map_err(|e| Error::Record {
        id: record_id.to_string(),
        msg: e.to_string(),
    })
}

fn load_vector(manifest_path: &Path, rel: &str, record_id: &str) -> Result<Vec<f64>> {
    let path = manifest::resolve(manifest_path, rel);
    let t = tensor_file::load(&path).map_err(|e| Error::Record {
        id: record_id.to_string(),
        msg: e.to_string(),
    })?;
    t.as_vector(rel).map_err(|e| Error::Record {
        id: record_id.to_string(),
        msg: e.to_string(),
    })
}

fn expect_shape(
    id: &str,
    what: &str,
    t: &Tensor2,
    rows: usize,
    cols: usize,
) -> Result<()> {
    if t.rows() != rows || t.cols() != cols {
        return Err(Error::Record {
            id: id.to_string(),
            msg: format!(
                "{} is {}x{}, dataset dims require {}x{}",
                what,
                t.rows(),
                t.cols(),
                rows,
                cols
            ),
        });
    }
    Ok(())
}

/// Load triplet and gallery records from a manifest. Clip records (pipeline
/// inputs) are ignored here; see [`crate::pipeline::load_clips`].
///
/// Records are validated against dataset-level dims inferred from the first
/// gallery entry and first triplet; ordering follows the manifest.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let records = manifest::read_manifest(manifest_path)?;

    let mut seen = HashMap::new();
    for (line, rec) in &records {
        if let Some(prev) = seen.insert(rec.id().to_string(), *line) {
            return Err(Error::Record {
                id: rec.id().to_string(),
                msg: format!("duplicate id (lines {} and {})", prev, line),
            });
        }
    }

    let mut gallery = Vec::new();
    let mut gallery_index = HashMap::new();
    let mut dims: Option<DatasetDims> = None;

    for (_, rec) in &records {
        if let ManifestRecord::Gallery(g) = rec {
            let frames = load_matrix(manifest_path, &g.frames, &g.id)?;
            let audio = load_matrix(manifest_path, &g.audio, &g.id)?;
            match &dims {
                None => {
                    dims = Some(DatasetDims {
                        dim: frames.cols(),
                        audio_dim: audio.cols(),
                        n_frames: frames.rows(),
                        audio_len: audio.rows(),
                    });
                }
                Some(d) => {
                    expect_shape(&g.id, "frames", &frames, d.n_frames, d.dim)?;
                    expect_shape(&g.id, "audio", &audio, d.audio_len, d.audio_dim)?;
                }
            }
            gallery_index.insert(g.id.clone(), gallery.len());
            gallery.push(GalleryEntry {
                id: g.id.clone(),
                frames,
                audio,
            });
        }
    }

    let mut triplets = Vec::new();
    for (_, rec) in &records {
        if let ManifestRecord::Triplet(t) = rec {
            let query_frames = load_matrix(manifest_path, &t.query_frames, &t.id)?;
            let query_audio = load_matrix(manifest_path, &t.query_audio, &t.id)?;
            let d = match &dims {
                Some(d) => *d,
                None => {
                    let d = DatasetDims {
                        dim: query_frames.cols(),
                        audio_dim: query_audio.cols(),
                        n_frames: query_frames.rows(),
                        audio_len: query_audio.rows(),
                    };
                    dims = Some(d);
                    d
                }
            };
            expect_shape(&t.id, "query frames", &query_frames, d.n_frames, d.dim)?;
            expect_shape(&t.id, "query audio", &query_audio, d.audio_len, d.audio_dim)?;

            let mut text: [Vec<f64>; 4] = Default::default();
            for (slot, rel) in [
                (&t.text_object, 0usize),
                (&t.text_action, 1),
                (&t.text_attribute, 2),
                (&t.text_audio, 3),
            ]
            .map(|(p, i)| (p.clone(), i))
            {
                let v = load_vector(manifest_path, &slot, &t.id)?;
                if v.len() != d.dim {
                    return Err(Error::Record {
                        id: t.id.clone(),
                        msg: format!(
                            "text component {} has width {}, dataset dims require {}",
                            rel,
                            v.len(),
                            d.dim
                        ),
                    });
                }
                text[rel] = v;
            }

            let target_idx =
                gallery_index
                    .get(&t.target_id)
                    .copied()
                    .ok_or_else(|| Error::MissingTarget {
                        triplet_id: t.id.clone(),
                        target_id: t.target_id.clone(),
                    })?;
            let target = &gallery[target_idx];

            triplets.push(TripletRecord {
                id: t.id.clone(),
                query_frames,
                query_audio,
                text,
                target_id: t.target_id.clone(),
                target_frames: target.frames.clone(),
                target_audio: target.audio.clone(),
            });
        }
    }

    let dims = dims.ok_or(Error::EmptyInput {
        what: "manifest (no gallery or triplet records)",
    })?;

    Ok(Dataset {
        dims,
        triplets,
        gallery,
        gallery_index,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{generate, SynthConfig};

    #[test]
    fn generator_output_loads_cleanly() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            n_triplets: 3,
            gallery_extra: 4,
            dim: 16,
            audio_dim: 12,
            n_frames: 3,
            audio_len: 4,
            ..SynthConfig::default()
        };
        generate(&cfg, 7, dir.path()).unwrap();
        let ds = load_dataset(&dir.path().join("manifest.jsonl")).unwrap();
        assert_eq!(ds.triplets.len(), 3);
        assert!(ds.gallery.len() >= 3 + 4);
        assert_eq!(ds.dims.dim, 16);
        assert_eq!(ds.dims.audio_dim, 12);
        for t in &ds.triplets {
            assert!(ds.gallery_index(&t.target_id).is_some());
        }
    }

    #[test]
    fn missing_tensor_file_names_the_record() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            n_triplets: 2,
            gallery_extra: 0,
            dim: 16,
            audio_dim: 12,
            n_frames: 2,
            audio_len: 3,
            ..SynthConfig::default()
        };
        generate(&cfg, 8, dir.path()).unwrap();
        // remove one triplet tensor
        let victim = dir.path().join("tensors/qry00001.query_frames.avct");
        std::fs::remove_file(&victim).unwrap();
        match load_dataset(&dir.path().join("manifest.jsonl")) {
            Err(Error::Record { id, .. }) => assert_eq!(id, "qry00001"),
            other => panic!("expected record error, got {:?}", other.map(|d| d.triplets.len())),
        }
    }

    #[test]
    fn dim_mismatch_names_the_record() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            n_triplets: 2,
            gallery_extra: 0,
            dim: 16,
            audio_dim: 12,
            n_frames: 2,
            audio_len: 3,
            ..SynthConfig::default()
        };
        generate(&cfg, 9, dir.path()).unwrap();
        // overwrite a text vector with the wrong width
        let victim = dir.path().join("tensors/qry00000.text_object.avct");
        tensor_file::save_vector(&victim, &vec![0.5; 32]).unwrap();
        match load_dataset(&dir.path().join("manifest.jsonl")) {
            Err(Error::Record { id, msg }) => {
                assert_eq!(id, "qry00000");
                assert!(msg.contains("width 32"), "msg: {}", msg);
            }
            other => panic!("expected record error, got {:?}", other.map(|d| d.triplets.len())),
        }
    }

    #[test]
    fn duplicate_id_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            n_triplets: 1,
            gallery_extra: 0,
            dim: 16,
            audio_dim: 12,
            n_frames: 2,
            audio_len: 3,
            ..SynthConfig::default()
        };
        generate(&cfg, 10, dir.path()).unwrap();
        let manifest = dir.path().join("manifest.jsonl");
        let mut contents = std::fs::read_to_string(&manifest).unwrap();
        let first_line = contents.lines().next().unwrap().to_string();
        contents.push_str(&first_line);
        contents.push('\n');
        std::fs::write(&manifest, contents).unwrap();
        assert!(matches!(
            load_dataset(&manifest),
            Err(Error::Record { .. })
        ));
    }
}
