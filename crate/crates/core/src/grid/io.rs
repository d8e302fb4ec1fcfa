//! CEGD dataset files.
//!
//! Little-endian layout: magic `CEGD`, then `u32` version, sample count,
//! `n_sub`, `n_sym`, `n_chan`, then every input grid as `f32` in memory order,
//! then every label grid. Scenarios go to a JSON sidecar `<file>.meta.json`.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::chansim::ChannelScenario;
use crate::error::{Error, Result};

use super::{Dataset, RealGrid, SplitTag};

pub const CEGD_MAGIC: &[u8; 4] = b"CEGD";
pub const CEGD_VERSION: u32 = 1;

/// Path of the scenario sidecar for a dataset file.
pub fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

pub fn save_dataset(d: &Dataset, path: &Path) -> Result<()> {
    let (n_sub, n_sym, n_chan) = d.grid_shape().unwrap_or((0, 0, 0));
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CEGD_MAGIC)?;
    for v in [CEGD_VERSION, d.len() as u32, n_sub as u32, n_sym as u32, n_chan as u32] {
        w.write_all(&v.to_le_bytes())?;
    }
    for grid in d.inputs().iter().chain(d.labels()) {
        for &v in grid.as_slice() {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    fs::write(meta_path(path), serde_json::to_vec_pretty(d.scenarios())?)?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| Error::Format("truncated header".into()))?;
    Ok(u32::from_le_bytes(b))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format("file too short for magic".into()))?;
    if &magic != CEGD_MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let version = read_u32(&mut r)?;
    if version != CEGD_VERSION {
        return Err(Error::Format(format!("unsupported CEGD version {version}")));
    }
    let n = read_u32(&mut r)? as usize;
    let n_sub = read_u32(&mut r)? as usize;
    let n_sym = read_u32(&mut r)? as usize;
    let n_chan = read_u32(&mut r)? as usize;
    let per_grid = n_sub
        .checked_mul(n_sym)
        .and_then(|v| v.checked_mul(n_chan))
        .ok_or_else(|| Error::Format("grid shape overflows".into()))?;
    if n > 0 && per_grid == 0 {
        return Err(Error::Format("zero-sized grid shape".into()));
    }

    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    let expected = 2 * n * per_grid * 4;
    if payload.len() != expected {
        return Err(Error::Format(format!(
            "payload holds {} bytes, header implies {expected}",
            payload.len()
        )));
    }
    let mut grids = payload
        .chunks_exact(per_grid.max(1) * 4)
        .take(2 * n)
        .map(|chunk| {
            let data = chunk
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
                .collect();
            RealGrid::new(n_sub, n_sym, n_chan, data)
                .map_err(|e| Error::Format(format!("invalid grid payload: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let labels = grids.split_off(n);

    let meta = fs::read(meta_path(path))?;
    let scenarios: Vec<ChannelScenario> = serde_json::from_slice(&meta)
        .map_err(|e| Error::Format(format!("bad scenario sidecar: {e}")))?;
    if scenarios.len() != n {
        return Err(Error::Format(format!(
            "sidecar holds {} scenarios for {n} samples",
            scenarios.len()
        )));
    }
    Dataset::new(grids, labels, scenarios, SplitTag::All)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::tests::toy_dataset;

    #[test]
    fn round_trip_is_exact_for_f32_payloads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.cegd");
        let d = toy_dataset(4);
        save_dataset(&d, &path).unwrap();
        assert!(meta_path(&path).exists());
        let back = load_dataset(&path).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn f64_payload_is_quantized_once() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.cegd");
        let d = toy_dataset(2);
        let inputs = vec![RealGrid::from_vec(2, 3, vec![0.1; 12]).unwrap(); 2];
        let d = d.with_inputs(inputs).unwrap();
        save_dataset(&d, &path).unwrap();
        let once = load_dataset(&path).unwrap();
        assert_eq!(once.inputs()[0].as_slice()[0], 0.1f32 as f64);
        let bytes = fs::read(&path).unwrap();
        save_dataset(&once, &path).unwrap();
        assert_eq!(fs::read(&path).unwrap(), bytes);
    }

    #[test]
    fn truncated_file_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.cegd");
        save_dataset(&toy_dataset(3), &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        assert!(matches!(load_dataset(&path), Err(Error::Format(_))));
        fs::write(&path, &bytes[..10]).unwrap();
        assert!(matches!(load_dataset(&path), Err(Error::Format(_))));
    }

    #[test]
    fn wrong_magic_or_version_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.cegd");
        save_dataset(&toy_dataset(1), &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[0] = b'X';
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_dataset(&path), Err(Error::Format(_))));
        bytes[0] = b'C';
        bytes[4] = 9;
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_dataset(&path), Err(Error::Format(_))));
    }

    #[test]
    fn missing_file_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_dataset(&dir.path().join("nope.cegd")),
            Err(Error::Io(_))
        ));
    }
}
