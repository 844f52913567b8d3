//! Parameter checkpoints.
//!
//! Binary layout: magic `AVCK1`, format version (u32 LE), config snapshot as
//! length-prefixed JSON, training step (u64 LE), tensor count (u64 LE), then
//! per tensor: length-prefixed name, rows, cols (u64 LE), and the raw f64 LE
//! payload. Parameters are stored at full precision so save -> load is
//! bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::params::{FusionParams, ModelConfig};
use crate::tensor::Tensor2;

const MAGIC: &[u8; 5] = b"AVCK1";
const VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub step: u64,
    pub params: FusionParams,
}

pub fn save(path: &Path, config: &ModelConfig, step: u64, params: &FusionParams) -> Result<()> {
    let pstr = path.display().to_string();
    let file = File::create(path).map_err(|e| Error::io(&pstr, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(&pstr, e);

    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io)?;

    let cfg_json = serde_json::to_vec(config).expect("config serializes");
    w.write_all(&(cfg_json.len() as u64).to_le_bytes()).map_err(io)?;
    w.write_all(&cfg_json).map_err(io)?;
    w.write_all(&step.to_le_bytes()).map_err(io)?;

    let tensors = params.named_tensors();
    w.write_all(&(tensors.len() as u64).to_le_bytes()).map_err(io)?;
    for (name, t) in tensors {
        let nb = name.as_bytes();
        w.write_all(&(nb.len() as u64).to_le_bytes()).map_err(io)?;
        w.write_all(nb).map_err(io)?;
        w.write_all(&(t.rows() as u64).to_le_bytes()).map_err(io)?;
        w.write_all(&(t.cols() as u64).to_le_bytes()).map_err(io)?;
        for v in t.data() {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

fn read_u64(r: &mut impl Read, what: &str) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)
        .map_err(|_| Error::Checkpoint(format!("truncated while reading {}", what)))?;
    Ok(u64::from_le_bytes(b))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(Error::CheckpointNotFound(path.display().to_string()));
    }
    let pstr = path.display().to_string();
    let file = File::open(path).map_err(|e| Error::io(&pstr, e))?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Checkpoint("truncated header".into()))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!("bad magic {:?}", magic)));
    }
    let mut vb = [0u8; 4];
    r.read_exact(&mut vb)
        .map_err(|_| Error::Checkpoint("truncated version".into()))?;
    let version = u32::from_le_bytes(vb);
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "format version {} not supported (expected {})",
            version, VERSION
        )));
    }

    let cfg_len = read_u64(&mut r, "config length")? as usize;
    if cfg_len > 1 << 20 {
        return Err(Error::Checkpoint("implausible config size".into()));
    }
    let mut cfg_bytes = vec![0u8; cfg_len];
    r.read_exact(&mut cfg_bytes)
        .map_err(|_| Error::Checkpoint("truncated config".into()))?;
    let config: ModelConfig = serde_json::from_slice(&cfg_bytes)
        .map_err(|e| Error::Checkpoint(format!("bad config snapshot: {}", e)))?;

    let step = read_u64(&mut r, "step")?;
    let n_tensors = read_u64(&mut r, "tensor count")? as usize;

    let mut params = FusionParams::zeros(&config);
    let expected_names: Vec<String> = params.tensor_names();
    if n_tensors != expected_names.len() {
        return Err(Error::Checkpoint(format!(
            "tensor count {} does not match config ({} expected)",
            n_tensors,
            expected_names.len()
        )));
    }

    {
        let mut slots: std::collections::HashMap<String, &mut Tensor2> =
            params.named_tensors_mut().into_iter().collect();
        for _ in 0..n_tensors {
            let name_len = read_u64(&mut r, "tensor name length")? as usize;
            if name_len > 4096 {
                return Err(Error::Checkpoint("implausible tensor name".into()));
            }
            let mut nb = vec![0u8; name_len];
            r.read_exact(&mut nb)
                .map_err(|_| Error::Checkpoint("truncated tensor name".into()))?;
            let name = String::from_utf8(nb)
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
            let rows = read_u64(&mut r, "tensor rows")? as usize;
            let cols = read_u64(&mut r, "tensor cols")? as usize;
            let slot = slots
                .remove(&name)
                .ok_or_else(|| Error::Checkpoint(format!("unexpected tensor {}", name)))?;
            if slot.rows() != rows || slot.cols() != cols {
                return Err(Error::Checkpoint(format!(
                    "tensor {} is {}x{}, config requires {}x{}",
                    name,
                    rows,
                    cols,
                    slot.rows(),
                    slot.cols()
                )));
            }
            let mut buf = [0u8; 8];
            for v in slot.data_mut() {
                r.read_exact(&mut buf).map_err(|_| {
                    Error::Checkpoint(format!("truncated payload in tensor {}", name))
                })?;
                let x = f64::from_le_bytes(buf);
                if !x.is_finite() {
                    return Err(Error::Checkpoint(format!(
                        "non-finite value in tensor {}",
                        name
                    )));
                }
                *v = x;
            }
        }
        if !slots.is_empty() {
            let mut missing: Vec<&String> = slots.keys().collect();
            missing.sort();
            return Err(Error::Checkpoint(format!("missing tensors: {:?}", missing)));
        }
    }

    let mut trailing = [0u8; 1];
    if r.read(&mut trailing).map_err(|e| Error::io(&pstr, e))? != 0 {
        return Err(Error::Checkpoint("trailing bytes after payload".into()));
    }

    Ok(Checkpoint {
        config,
        step,
        params,
    })
}

/// Load a checkpoint and reject it unless its config matches `expected`.
pub fn load_expect(path: &Path, expected: &ModelConfig) -> Result<Checkpoint> {
    let ckpt = load(path)?;
    let c = &ckpt.config;
    for (field, exp, act) in [
        ("dim", c.dim, expected.dim),
        ("audio_dim", c.audio_dim, expected.audio_dim),
        ("audio_tokens", c.audio_tokens, expected.audio_tokens),
        ("layers", c.layers, expected.layers),
        ("mlp_hidden", c.mlp_hidden, expected.mlp_hidden),
    ] {
        if exp != act {
            return Err(Error::ConfigMismatch {
                field: match field {
                    "dim" => "dim",
                    "audio_dim" => "audio_dim",
                    "audio_tokens" => "audio_tokens",
                    "layers" => "layers",
                    _ => "mlp_hidden",
                },
                expected: exp,
                actual: act,
            });
        }
    }
    Ok(ckpt)
}
