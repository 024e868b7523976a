//! Atomic artifact writes and the binary parameter format.
//!
//! Parameter files: magic `ATPS`, then little-endian `u32` version, `u32`
//! layer count, `(out, in)` per layer as `u32` pairs, then per layer the
//! weights followed by the biases as `f64`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::network::{Layer, ParamSet};

pub const PARAMS_MAGIC: &[u8; 4] = b"ATPS";
pub const PARAMS_VERSION: u32 = 1;

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

pub fn write_string(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes())
}

/// Reads a file, reporting a missing path as a missing artifact.
pub fn read_artifact(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact(path.to_path_buf()),
        _ => Error::Io(e),
    })
}

pub fn read_artifact_string(path: &Path) -> Result<String> {
    String::from_utf8(read_artifact(path)?).map_err(|e| Error::Format {
        what: "text artifact",
        detail: e.to_string(),
    })
}

/// Serializes rows to CSV bytes in memory.
pub fn csv_bytes<S: serde::Serialize>(rows: &[S]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn write_csv<S: serde::Serialize>(path: &Path, rows: &[S]) -> Result<()> {
    write_atomic(path, &csv_bytes(rows)?)
}

pub fn write_json<S: serde::Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_string(path, &text)
}

pub fn params_to_bytes(params: &ParamSet) -> Vec<u8> {
    let mut out = PARAMS_MAGIC.to_vec();
    out.extend(PARAMS_VERSION.to_le_bytes());
    out.extend((params.layers().len() as u32).to_le_bytes());
    for l in params.layers() {
        out.extend((l.out_dim as u32).to_le_bytes());
        out.extend((l.in_dim as u32).to_le_bytes());
    }
    for l in params.layers() {
        for v in l.weight.iter().chain(&l.bias) {
            out.extend(v.to_le_bytes());
        }
    }
    out
}

pub fn params_from_bytes(bytes: &[u8]) -> Result<ParamSet> {
    let bad = |detail: &str| Error::Format {
        what: "parameter file",
        detail: detail.to_string(),
    };
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let end = pos.checked_add(n).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated"))?;
        let s = &bytes[pos..end];
        pos = end;
        Ok(s)
    };
    if take(4)? != PARAMS_MAGIC {
        return Err(bad("bad magic"));
    }
    let u32_at = |s: &[u8]| u32::from_le_bytes(s.try_into().expect("4 bytes")) as usize;
    let version = u32_at(take(4)?) as u32;
    if version != PARAMS_VERSION {
        return Err(Error::Version {
            what: "parameter file",
            found: version,
            expected: PARAMS_VERSION,
        });
    }
    let count = u32_at(take(4)?);
    let mut shapes = Vec::new();
    for _ in 0..count {
        let out = u32_at(take(4)?);
        let inp = u32_at(take(4)?);
        shapes.push((out, inp));
    }
    let mut layers = Vec::with_capacity(count);
    for (out, inp) in shapes {
        let n = out.checked_mul(inp).ok_or_else(|| bad("layer size overflow"))?;
        let mut read = |k: usize| -> Result<Vec<f64>> {
            let raw = take(k.checked_mul(8).ok_or_else(|| bad("layer size overflow"))?)?;
            Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
        };
        let weight = read(n)?;
        let bias = read(out)?;
        layers.push(Layer::new(out, inp, weight, bias)?);
    }
    if pos != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    ParamSet::new(layers)
}

pub fn save_params(params: &ParamSet, path: &Path) -> Result<()> {
    write_atomic(path, &params_to_bytes(params))
}

pub fn load_params(path: &Path) -> Result<ParamSet> {
    params_from_bytes(&read_artifact(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn params_round_trip_bit_exact() {
        let p = ParamSet::kaiming_normal(&[5, 7, 3], 11);
        assert_eq!(params_from_bytes(&params_to_bytes(&p)).unwrap(), p);
    }

    #[test]
    fn atomic_write_replaces_and_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/out.bin");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"two");
        assert_eq!(fs::read_dir(path.parent().unwrap()).unwrap().count(), 1);
    }

    #[test]
    fn missing_file_is_missing_artifact() {
        let err = load_params(Path::new("/nonexistent/params.bin")).unwrap_err();
        assert!(matches!(err, Error::MissingArtifact(_)));
    }

    #[test]
    fn version_and_magic_checked() {
        let mut b = params_to_bytes(&ParamSet::zeros(&[2, 1]));
        b[4] = 9;
        assert!(matches!(params_from_bytes(&b), Err(Error::Version { found: 9, .. })));
        b[0] = b'X';
        assert!(params_from_bytes(&b).is_err());
    }

    proptest! {
        #[test]
        fn truncations_fail_cleanly(cut in 0usize..200) {
            let b = params_to_bytes(&ParamSet::kaiming_normal(&[3, 4, 2], 1));
            if cut < b.len() {
                prop_assert!(params_from_bytes(&b[..cut]).is_err());
            }
        }

        #[test]
        fn garbage_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..96)) {
            let mut input = b"ATPS\x01\x00\x00\x00".to_vec();
            input.extend(bytes);
            let _ = params_from_bytes(&input);
        }
    }
}
