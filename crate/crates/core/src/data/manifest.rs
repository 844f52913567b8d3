//! Line-delimited dataset manifest.
//!
//! One JSON record per line, tagged by `role`. Tensor paths are relative to
//! the manifest's own directory. Triplet records reference their target by id
//! rather than duplicating tensors; clip records carry the clip-level inputs
//! for the dedup / pair-mining pipeline, with an opaque `caption` payload
//! field for steps that happen outside this engine.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TripletManifest {
    pub id: String,
    pub query_frames: String,
    pub query_audio: String,
    pub text_object: String,
    pub text_action: String,
    pub text_attribute: String,
    pub text_audio: String,
    pub target_id: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GalleryManifest {
    pub id: String,
    pub frames: String,
    pub audio: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClipManifest {
    pub id: String,
    pub frames: String,
    pub audio_caption: String,
    /// Opaque caption payload; filled by external captioning steps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption: Option<serde_json::Value>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "role", rename_all = "snake_case")]
pub enum ManifestRecord {
    Triplet(TripletManifest),
    Gallery(GalleryManifest),
    Clip(ClipManifest),
}

impl ManifestRecord {
    pub fn id(&self) -> &str {
        match self {
            ManifestRecord::Triplet(t) => &t.id,
            ManifestRecord::Gallery(g) => &g.id,
            ManifestRecord::Clip(c) => &c.id,
        }
    }
}

/// Parse a manifest, keeping 1-based line numbers for error reporting.
pub fn read_manifest(path: &Path) -> Result<Vec<(usize, ManifestRecord)>> {
    let pstr = path.display().to_string();
    let file = File::open(path).map_err(|e| Error::io(&pstr, e))?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(&pstr, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestRecord = serde_json::from_str(&line).map_err(|e| Error::Manifest {
            path: pstr.clone(),
            line: idx + 1,
            msg: e.to_string(),
        })?;
        out.push((idx + 1, rec));
    }
    Ok(out)
}

pub fn write_manifest(path: &Path, records: &[ManifestRecord]) -> Result<()> {
    let pstr = path.display().to_string();
    let file = File::create(path).map_err(|e| Error::io(&pstr, e))?;
    let mut w = BufWriter::new(file);
    for rec in records {
        let line = serde_json::to_string(rec).expect("manifest records serialize");
        writeln!(w, "{}", line).map_err(|e| Error::io(&pstr, e))?;
    }
    w.flush().map_err(|e| Error::io(&pstr, e))
}

/// Resolve a tensor path named in a manifest against the manifest directory.
pub fn resolve(manifest_path: &Path, rel: &str) -> PathBuf {
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    base.join(rel)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_preserves_records_and_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let records = vec![
            ManifestRecord::Gallery(GalleryManifest {
                id: "g1".into(),
                frames: "tensors/g1.f.avct".into(),
                audio: "tensors/g1.a.avct".into(),
            }),
            ManifestRecord::Triplet(TripletManifest {
                id: "t1".into(),
                query_frames: "tensors/t1.qf.avct".into(),
                query_audio: "tensors/t1.qa.avct".into(),
                text_object: "tensors/t1.to.avct".into(),
                text_action: "tensors/t1.tc.avct".into(),
                text_attribute: "tensors/t1.tt.avct".into(),
                text_audio: "tensors/t1.tm.avct".into(),
                target_id: "g1".into(),
            }),
            ManifestRecord::Clip(ClipManifest {
                id: "c1".into(),
                frames: "tensors/c1.f.avct".into(),
                audio_caption: "tensors/c1.ac.avct".into(),
                caption: None,
            }),
        ];
        write_manifest(&path, &records).unwrap();
        let back = read_manifest(&path).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back[0].1.id(), "g1");
        assert_eq!(back[1].1.id(), "t1");
        assert_eq!(back[2].1.id(), "c1");
        assert_eq!(back[2].0, 3);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(&path, "{\"role\":\"gallery\",\"id\":\"g\",\"frames\":\"f\",\"audio\":\"a\"}\nnot json\n").unwrap();
        match read_manifest(&path) {
            Err(Error::Manifest { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected manifest error, got {:?}", other.map(|v| v.len())),
        }
    }
}
