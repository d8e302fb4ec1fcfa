//! CEMW checkpoint format.
//!
//! Little-endian: magic `CEMW`, u32 version, u8 architecture tag, u32 layer
//! count, then per layer u32 `out_ch, in_ch, kh, kw`, u8 activation, f64
//! weights (row-major) and f64 biases.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::conv::ConvLayer;
use super::model::{ArchTag, EstimatorModel};
use super::Activation;
use crate::error::{Error, Result};

pub const CEMW_MAGIC: &[u8; 4] = b"CEMW";
pub const CEMW_VERSION: u32 = 1;

/// Upper bound on any single layer dimension accepted from a file.
const MAX_DIM: u32 = 4096;

pub fn write_model<W: Write>(m: &EstimatorModel, mut out: W) -> Result<()> {
    out.write_all(CEMW_MAGIC)?;
    out.write_all(&CEMW_VERSION.to_le_bytes())?;
    out.write_all(&[m.arch().code()])?;
    out.write_all(&(m.layers().len() as u32).to_le_bytes())?;
    for layer in m.layers() {
        for dim in [layer.out_ch, layer.in_ch, layer.kh, layer.kw] {
            out.write_all(&(dim as u32).to_le_bytes())?;
        }
        out.write_all(&[layer.activation.code()])?;
        for v in layer.weights.iter().chain(&layer.bias) {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn save_model(m: &EstimatorModel, path: &Path) -> Result<()> {
    write_model(m, BufWriter::new(File::create(path)?))
}

fn read_array<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format("checkpoint is truncated".into()),
        _ => Error::Io(e),
    })?;
    Ok(buf)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    Ok(u32::from_le_bytes(read_array(r)?))
}

fn read_f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    (0..n)
        .map(|_| Ok(f64::from_le_bytes(read_array(r)?)))
        .collect()
}

pub fn read_model<R: Read>(mut r: R) -> Result<EstimatorModel> {
    if &read_array::<4>(&mut r)? != CEMW_MAGIC {
        return Err(Error::Format("not a CEMW checkpoint (bad magic)".into()));
    }
    let version = read_u32(&mut r)?;
    if version != CEMW_VERSION {
        return Err(Error::Format(format!(
            "unsupported CEMW version {version} (expected {CEMW_VERSION})"
        )));
    }
    let [code] = read_array::<1>(&mut r)?;
    let arch = ArchTag::from_code(code)
        .ok_or_else(|| Error::Format(format!("unknown architecture tag {code}")))?;
    let n_layers = read_u32(&mut r)?;
    if n_layers == 0 || n_layers > 64 {
        return Err(Error::Format(format!("implausible layer count {n_layers}")));
    }
    let mut layers = Vec::with_capacity(n_layers as usize);
    for _ in 0..n_layers {
        let mut dims = [0u32; 4];
        for d in &mut dims {
            *d = read_u32(&mut r)?;
            if *d == 0 || *d > MAX_DIM {
                return Err(Error::Format(format!("implausible layer dimension {d}")));
            }
        }
        let [act] = read_array::<1>(&mut r)?;
        let activation = Activation::from_code(act)
            .ok_or_else(|| Error::Format(format!("unknown activation code {act}")))?;
        let [out_ch, in_ch, kh, kw] = dims.map(|d| d as usize);
        let weights = read_f64s(&mut r, out_ch * in_ch * kh * kw)?;
        let bias = read_f64s(&mut r, out_ch)?;
        let layer = ConvLayer::with_params(out_ch, in_ch, kh, kw, activation, weights, bias)
            .map_err(|e| Error::Format(e.to_string()))?;
        layers.push(layer);
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    EstimatorModel::from_layers(arch, layers).map_err(|e| Error::Format(e.to_string()))
}

pub fn load_model(path: &Path) -> Result<EstimatorModel> {
    read_model(BufReader::new(File::open(path)?))
}
