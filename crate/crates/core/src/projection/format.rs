//! The `AVEP` parameter container.
//!
//! ```text
//! "AVEP" | version u32 = 1 | d_a u32 | hidden u32 | output u32 (1024)
//! dropout f32
//! tensors as f32 in declaration order: w1 b1 ln1_gain ln1_bias w2 b2
//!   ln2_gain ln2_bias w3 b3
//! crc32 u32 over every preceding byte
//! ```

use std::path::Path;

use super::{ProjectionConfig, ProjectionParams};
use crate::io_util::{put_f32s, seal, unseal, write_atomic, Reader};
use crate::{Error, Result, CLIP_DIM};

pub const MAGIC: &[u8; 4] = b"AVEP";
pub const VERSION: u32 = 1;

pub fn write_params(params: &ProjectionParams) -> Vec<u8> {
    let cfg = params.config();
    let mut out = Vec::with_capacity(28 + params.param_count() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for dim in [cfg.audio_dim, cfg.hidden, CLIP_DIM] {
        out.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    out.extend_from_slice(&(cfg.dropout as f32).to_le_bytes());
    for t in params.tensors() {
        put_f32s(&mut out, t);
    }
    seal(&mut out);
    out
}

pub fn save_params(params: &ProjectionParams, path: &Path) -> Result<()> {
    write_atomic(path, &write_params(params))
}

pub fn load_params(path: &Path) -> Result<ProjectionParams> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_params(&bytes)
}

pub fn read_params(bytes: &[u8]) -> Result<ProjectionParams> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: "missing AVEP magic".into(),
        });
    }
    if bytes.len() < 8 {
        return Err(Error::Corrupt {
            offset: bytes.len() as u64,
            message: "truncated before version".into(),
        });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Format {
            offset: 4,
            message: format!("unsupported version {version}"),
        });
    }
    let body = unseal(bytes)?;
    let mut r = Reader::new(body);
    r.take(8, "preamble")?;
    let audio_dim = r.u32("d_a")? as usize;
    let hidden = r.u32("hidden width")? as usize;
    let out_at = r.offset();
    let output = r.u32("output width")? as usize;
    if output != CLIP_DIM {
        return Err(Error::Format {
            offset: out_at,
            message: format!("output width {output}, expected {CLIP_DIM}"),
        });
    }
    let dropout_at = r.offset();
    let dropout = r.f32("dropout")? as f64;
    let config = ProjectionConfig {
        audio_dim,
        hidden,
        dropout,
    };
    config.validate().map_err(|e| Error::Format {
        offset: dropout_at,
        message: e.to_string(),
    })?;
    let (d, h, o) = (audio_dim as u128, hidden as u128, CLIP_DIM as u128);
    let count = h * d + h * h + 6 * h + o * h + o;
    if count * 4 != r.remaining() as u128 {
        return Err(Error::Corrupt {
            offset: r.offset(),
            message: format!(
                "{} payload bytes do not match {count} parameters",
                r.remaining()
            ),
        });
    }
    let mut params = ProjectionParams::<f32>::zeros(config);
    for (name, t) in super::TENSOR_NAMES.iter().zip(params.tensors_mut()) {
        let values = r.finite_f32s(t.len(), name)?;
        t.copy_from_slice(&values);
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::projection::init_projection;

    fn small() -> ProjectionParams {
        init_projection(
            ProjectionConfig {
                audio_dim: 5,
                hidden: 7,
                dropout: 0.1,
            },
            3,
        )
        .unwrap()
    }

    #[test]
    fn round_trip() {
        let p = small();
        let bytes = write_params(&p);
        let back = read_params(&bytes).unwrap();
        assert_eq!(back.tensors(), p.tensors());
        assert_eq!(back.config().hidden, 7);
        assert!((back.config().dropout - 0.1).abs() < 1e-7);
        assert_eq!(write_params(&back), bytes);
    }

    #[test]
    fn rejects_damage() {
        let bytes = write_params(&small());
        assert!(matches!(
            read_params(b"AVEB"),
            Err(Error::Format { offset: 0, .. })
        ));
        assert!(matches!(
            read_params(&bytes[..bytes.len() - 1]),
            Err(Error::Corrupt { .. })
        ));
        let mut flipped = bytes.clone();
        flipped[40] ^= 0x10;
        assert!(matches!(read_params(&flipped), Err(Error::Corrupt { .. })));
    }
}
