//! Locator checkpoint files.
//!
//! Binary layout, all little-endian:
//!
//! ```text
//! "QLOC" | version u32
//! in_dim u32 | channels u32 | kernel u32 | projection u32 | hidden u32 | flags u32
//! leaky_slope f64 | length_norm f64
//! tensors as f64, in LocatorParams::tensors() order
//! ```
//!
//! `flags` bit 0 marks a separate query convolution. A JSON sidecar
//! (`<checkpoint>.json`) records the training configuration and log.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{LocatorConfig, LocatorError, LocatorParams, TrainingLog};
use crate::embedding::BackendDescriptor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"QLOC";
pub const CHECKPOINT_VERSION: u32 = 1;

const FLAG_SEPARATE_QUERY_CONV: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointSidecar {
    pub format_version: u32,
    pub config: LocatorConfig,
    pub backend: Option<BackendDescriptor>,
    pub training_log: TrainingLog,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

pub fn encode_checkpoint(params: &LocatorParams) -> Vec<u8> {
    let mut out = Vec::with_capacity(48 + 8 * params.num_parameters());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    let flags = if params.query_conv.is_some() {
        FLAG_SEPARATE_QUERY_CONV
    } else {
        0
    };
    for v in [
        CHECKPOINT_VERSION,
        params.in_dim() as u32,
        params.channels() as u32,
        params.conv.width as u32,
        params.projection_dim() as u32,
        params.hidden_dim() as u32,
        flags,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&params.leaky_slope.to_le_bytes());
    out.extend_from_slice(&params.length_norm.to_le_bytes());
    for (_, t) in params.tensors() {
        for x in t {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<LocatorParams, LocatorError> {
    let bad = |m: &str| LocatorError::Checkpoint(m.to_string());
    if bytes.len() < 4 + 7 * 4 + 16 {
        return Err(bad("file too short for header"));
    }
    if &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(bad("bad magic bytes"));
    }
    let u = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    let version = u(0);
    if version != CHECKPOINT_VERSION {
        return Err(LocatorError::Checkpoint(format!(
            "unsupported format version {version}"
        )));
    }
    let (d, c, k, e, h, flags) = (
        u(1) as usize,
        u(2) as usize,
        u(3) as usize,
        u(4) as usize,
        u(5) as usize,
        u(6),
    );
    if flags & !FLAG_SEPARATE_QUERY_CONV != 0 {
        return Err(bad("unknown flag bits"));
    }
    let f = |off: usize| f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
    let slope = f(32);
    let length_norm = f(40);
    let config = LocatorConfig {
        out_channels: c,
        projection_dim: e,
        hidden_dim: h,
        kernel_size: k,
        leaky_slope: slope,
        share_conv: flags & FLAG_SEPARATE_QUERY_CONV == 0,
        ..LocatorConfig::default()
    };
    if d == 0 || c == 0 || e == 0 || h == 0 || k == 0 || k % 2 == 0 {
        return Err(bad("invalid dimensions in header"));
    }
    let mut params = LocatorParams::zeros(d, &config, length_norm);
    let body = &bytes[48..];
    if body.len() != 8 * params.num_parameters() {
        return Err(LocatorError::Checkpoint(format!(
            "expected {} parameter bytes, found {}",
            8 * params.num_parameters(),
            body.len()
        )));
    }
    let mut values = body
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()));
    for (_, t) in params.tensors_mut() {
        for x in t.iter_mut() {
            *x = values.next().expect("length checked");
        }
    }
    params.check()?;
    if !params.is_finite() {
        return Err(bad("non-finite parameter"));
    }
    Ok(params)
}

/// Writes the binary checkpoint and its JSON sidecar.
pub fn save_checkpoint(
    path: &Path,
    params: &LocatorParams,
    sidecar: &CheckpointSidecar,
) -> Result<(), LocatorError> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, encode_checkpoint(params))?;
    let json = serde_json::to_string_pretty(sidecar)
        .map_err(|e| LocatorError::Checkpoint(e.to_string()))?;
    std::fs::write(sidecar_path(path), json + "\n")?;
    Ok(())
}

/// Loads the parameters, plus the sidecar when one exists.
pub fn load_checkpoint(
    path: &Path,
) -> Result<(LocatorParams, Option<CheckpointSidecar>), LocatorError> {
    let params = decode_checkpoint(&std::fs::read(path)?)?;
    let sidecar = match std::fs::read_to_string(sidecar_path(path)) {
        Ok(s) => Some(
            serde_json::from_str(&s)
                .map_err(|e| LocatorError::Checkpoint(format!("sidecar: {e}")))?,
        ),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(e) => return Err(e.into()),
    };
    Ok((params, sidecar))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(share: bool) -> LocatorParams {
        let cfg = LocatorConfig {
            out_channels: 3,
            projection_dim: 4,
            hidden_dim: 5,
            share_conv: share,
            ..Default::default()
        };
        LocatorParams::random(6, &cfg, 123.0, 1.0, &mut ChaCha8Rng::seed_from_u64(1))
    }

    #[test]
    fn header_layout() {
        let bytes = encode_checkpoint(&params(true));
        assert_eq!(&bytes[..4], b"QLOC");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &6u32.to_le_bytes());
        assert_eq!(&bytes[40..48], &123.0f64.to_le_bytes());
    }

    #[test]
    fn round_trip_both_conv_modes() {
        let dir = tempfile::tempdir().unwrap();
        for share in [true, false] {
            let p = params(share);
            let path = dir.path().join(format!("m{share}.qloc"));
            let sidecar = CheckpointSidecar {
                format_version: CHECKPOINT_VERSION,
                config: LocatorConfig::default(),
                backend: None,
                training_log: TrainingLog::default(),
            };
            save_checkpoint(&path, &p, &sidecar).unwrap();
            let (back, sc) = load_checkpoint(&path).unwrap();
            assert_eq!(back, p);
            assert_eq!(sc.unwrap(), sidecar);
        }
    }

    #[test]
    fn corrupt_files_rejected() {
        let mut bytes = encode_checkpoint(&params(true));
        assert!(decode_checkpoint(&bytes[..bytes.len() - 8]).is_err());
        bytes[0] = b'X';
        assert!(decode_checkpoint(&bytes).is_err());
        let mut bytes = encode_checkpoint(&params(true));
        bytes[4] = 9;
        assert!(
            matches!(decode_checkpoint(&bytes), Err(LocatorError::Checkpoint(m)) if m.contains("version"))
        );
    }
}
