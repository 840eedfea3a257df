//! Checkpoint format (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "RLPSCKPT"
//! version    u32      1
//! cfg_len    u32      byte length of the config text
//! config     cfg_len  ModelConfig as TOML (UTF-8)
//! n_params   u64
//! payload    n_params × f32, canonical `Layout` order
//! ```

use std::fs;
use std::path::Path;

use super::{FusionModelParams, ModelConfig};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"RLPSCKPT";
pub const VERSION: u32 = 1;

pub fn encode(params: &FusionModelParams) -> Vec<u8> {
    let cfg = toml::to_string(&params.config).expect("model config serializes");
    let mut out = Vec::with_capacity(24 + cfg.len() + params.len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(cfg.as_bytes());
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for &v in &params.values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<FusionModelParams> {
    let fail = |m: &str| Error::format(path, m.to_string());
    let take = |at: usize, n: usize| bytes.get(at..at + n).ok_or_else(|| fail("truncated checkpoint"));
    if take(0, 8)? != MAGIC {
        return Err(fail("bad magic"));
    }
    let version = u32::from_le_bytes(take(8, 4)?.try_into().unwrap());
    if version != VERSION {
        return Err(fail(&format!("unsupported checkpoint version {version}")));
    }
    let cfg_len = u32::from_le_bytes(take(12, 4)?.try_into().unwrap()) as usize;
    let cfg_text = std::str::from_utf8(take(16, cfg_len)?).map_err(|_| fail("config is not UTF-8"))?;
    let config: ModelConfig = toml::from_str(cfg_text).map_err(|e| fail(&format!("config: {e}")))?;
    let at = 16 + cfg_len;
    let n = u64::from_le_bytes(take(at, 8)?.try_into().unwrap()) as usize;
    let payload = take(at + 8, n * 4)?;
    if bytes.len() != at + 8 + n * 4 {
        return Err(fail("trailing bytes after payload"));
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    FusionModelParams::from_values(&config, values)
}

pub fn save(params: &FusionModelParams, path: &Path) -> Result<()> {
    fs::write(path, encode(params)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<FusionModelParams> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_model, Modality, ModelConfig};

    #[test]
    fn round_trip_is_f32_exact() {
        let c = ModelConfig {
            input_shape: [8, 8, 8],
            vision_channels: vec![2, 4],
            modality: Modality::Multimodal,
            ..ModelConfig::default()
        };
        let p = init_model(&c).unwrap();
        let back = decode(&encode(&p), Path::new("mem")).unwrap();
        assert_eq!(back.config, p.config);
        for (a, b) in p.values.iter().zip(&back.values) {
            assert_eq!(*a as f32, *b as f32);
        }
        // a second round trip is lossless
        assert_eq!(encode(&back), encode(&p));
    }

    #[test]
    fn corrupt_headers_rejected() {
        let p = init_model(&ModelConfig {
            modality: Modality::TabularOnly,
            ..ModelConfig::default()
        })
        .unwrap();
        let mut b = encode(&p);
        assert!(decode(&b[..b.len() - 2], Path::new("mem")).is_err());
        b[0] = b'X';
        assert!(decode(&b, Path::new("mem")).is_err());
    }
}
