//! Binary dump of sampled scheme paths.
//!
//! Little-endian layout:
//!
//! ```text
//! magic     8 bytes   "RVPATHS1"
//! n         u64       grid size (steps per unit time)
//! intervals u64       K, including a trailing partial interval
//! paths     u64       P
//! seed      u64
//! hurst     f64
//! rho       f64
//! horizon   f64
//! P records of 3K + 2 f64:
//!   hat_w[0..K]      Ŵ at interval left endpoints (hat_w[0] = 0)
//!   hat_w_terminal   Ŵ_T
//!   dw[0..K]         W increments
//!   dw_perp[0..K]    W^⊥ increments
//!   x_terminal       scheme value X_T^n
//! ```

use std::io::{Read, Write};

use roughvol_core::moments::ModelSpec;
use roughvol_core::simulate::{scheme_terminal, GridPath};

use crate::error::CliError;

pub const MAGIC: &[u8; 8] = b"RVPATHS1";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathHeader {
    pub n: u64,
    pub intervals: u64,
    pub paths: u64,
    pub seed: u64,
    pub hurst: f64,
    pub rho: f64,
    pub horizon: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord {
    pub path: GridPath,
    pub x_terminal: f64,
}

pub fn write_paths<W: Write, I: IntoIterator<Item = GridPath>>(
    out: &mut W,
    header: &PathHeader,
    model: &ModelSpec,
    paths: I,
) -> Result<u64, CliError> {
    out.write_all(MAGIC)?;
    for v in [header.n, header.intervals, header.paths, header.seed] {
        out.write_all(&v.to_le_bytes())?;
    }
    for v in [header.hurst, header.rho, header.horizon] {
        out.write_all(&v.to_le_bytes())?;
    }
    let mut written = 0;
    for p in paths {
        if p.intervals() as u64 != header.intervals {
            return Err(CliError::PathFile(format!("path has {} intervals, header says {}", p.intervals(), header.intervals)));
        }
        let x = scheme_terminal(&p, model);
        for v in p.hat_w.iter().chain([&p.hat_w_terminal]).chain(&p.dw).chain(&p.dw_perp).chain([&x]) {
            out.write_all(&v.to_le_bytes())?;
        }
        written += 1;
    }
    if written != header.paths {
        return Err(CliError::PathFile(format!("wrote {written} paths, header says {}", header.paths)));
    }
    Ok(written)
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, CliError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64, CliError> {
    Ok(f64::from_bits(read_u64(r)?))
}

fn read_vec<R: Read>(r: &mut R, k: usize) -> Result<Vec<f64>, CliError> {
    (0..k).map(|_| read_f64(r)).collect()
}

pub fn read_paths<R: Read>(input: &mut R) -> Result<(PathHeader, Vec<PathRecord>), CliError> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CliError::PathFile("bad magic".into()));
    }
    let header = PathHeader {
        n: read_u64(input)?,
        intervals: read_u64(input)?,
        paths: read_u64(input)?,
        seed: read_u64(input)?,
        hurst: read_f64(input)?,
        rho: read_f64(input)?,
        horizon: read_f64(input)?,
    };
    let k = usize::try_from(header.intervals).map_err(|_| CliError::PathFile("interval count overflows".into()))?;
    let mut records = Vec::new();
    for _ in 0..header.paths {
        let hat_w = read_vec(input, k)?;
        let hat_w_terminal = read_f64(input)?;
        let dw = read_vec(input, k)?;
        let dw_perp = read_vec(input, k)?;
        let x_terminal = read_f64(input)?;
        records.push(PathRecord { path: GridPath { hat_w, hat_w_terminal, dw, dw_perp }, x_terminal });
    }
    let mut rest = [0u8; 1];
    if input.read(&mut rest)? != 0 {
        return Err(CliError::PathFile("trailing bytes".into()));
    }
    Ok((header, records))
}
