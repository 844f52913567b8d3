//! Binary tensor container.
//!
//! Layout: magic `AVCT1`, dtype code (u8, 1 = f32), rank (u8), dims as u64
//! little-endian, then the row-major payload in little-endian f32. Values are
//! widened to f64 on load; every value must be finite.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor2;

const MAGIC: &[u8; 5] = b"AVCT1";
const DTYPE_F32: u8 = 1;

pub struct LoadedTensor {
    pub dims: Vec<u64>,
    pub data: Vec<f64>,
}

impl LoadedTensor {
    pub fn as_matrix(&self, path: &str) -> Result<Tensor2> {
        if self.dims.len() != 2 {
            return Err(Error::TensorFile {
                path: path.into(),
                msg: format!("expected rank 2, found rank {}", self.dims.len()),
            });
        }
        Tensor2::from_vec(self.dims[0] as usize, self.dims[1] as usize, self.data.clone())
    }

    pub fn as_vector(&self, path: &str) -> Result<Vec<f64>> {
        if self.dims.len() != 1 {
            return Err(Error::TensorFile {
                path: path.into(),
                msg: format!("expected rank 1, found rank {}", self.dims.len()),
            });
        }
        Ok(self.data.clone())
    }
}

fn write_payload(path: &Path, dims: &[u64], values: impl Iterator<Item = f64>) -> Result<()> {
    let pstr = path.display().to_string();
    let file = File::create(path).map_err(|e| Error::io(&pstr, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(&pstr, e);
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&[DTYPE_F32, dims.len() as u8]).map_err(io)?;
    for d in dims {
        w.write_all(&d.to_le_bytes()).map_err(io)?;
    }
    for v in values {
        w.write_all(&(v as f32).to_le_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn save_matrix(path: &Path, m: &Tensor2) -> Result<()> {
    write_payload(
        path,
        &[m.rows() as u64, m.cols() as u64],
        m.data().iter().copied(),
    )
}

pub fn save_vector(path: &Path, v: &[f64]) -> Result<()> {
    write_payload(path, &[v.len() as u64], v.iter().copied())
}

pub fn load(path: &Path) -> Result<LoadedTensor> {
    let pstr = path.display().to_string();
    let file = File::open(path).map_err(|e| Error::io(&pstr, e))?;
    let mut r = BufReader::new(file);
    let bad = |msg: String| Error::TensorFile {
        path: pstr.clone(),
        msg,
    };

    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)
        .map_err(|_| bad("truncated header".into()))?;
    if &magic != MAGIC {
        return Err(bad(format!("bad magic {:?}", magic)));
    }
    let mut head = [0u8; 2];
    r.read_exact(&mut head)
        .map_err(|_| bad("truncated header".into()))?;
    if head[0] != DTYPE_F32 {
        return Err(bad(format!("unsupported dtype code {}", head[0])));
    }
    let rank = head[1] as usize;
    if rank == 0 || rank > 2 {
        return Err(bad(format!("unsupported rank {}", rank)));
    }
    let mut dims = Vec::with_capacity(rank);
    let mut count: u64 = 1;
    for _ in 0..rank {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)
            .map_err(|_| bad("truncated dims".into()))?;
        let d = u64::from_le_bytes(b);
        count = count.saturating_mul(d);
        dims.push(d);
    }
    if count > (1 << 32) {
        return Err(bad(format!("implausible element count {}", count)));
    }
    let mut data = Vec::with_capacity(count as usize);
    let mut buf = [0u8; 4];
    for i in 0..count {
        r.read_exact(&mut buf)
            .map_err(|_| bad(format!("truncated payload at element {}", i)))?;
        let v = f32::from_le_bytes(buf) as f64;
        if !v.is_finite() {
            return Err(bad(format!("non-finite value at element {}", i)));
        }
        data.push(v);
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing).map_err(|e| Error::io(&pstr, e))? != 0 {
        return Err(bad("trailing bytes after payload".into()));
    }
    Ok(LoadedTensor { dims, data })
}
