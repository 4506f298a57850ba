//! The `AVEB` container.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! "AVEB" | version u32 = 1
//! n_segments u64 | d_a u32 | L u32 | S u32 | d_w u32 | N u32
//! has_audio u8 | has_layers u8 | has_visual u8
//! per segment:
//!   id_len u16 | id utf-8 | 5 x f32 alignment scores | split u8
//!   [d_a f32] [L*S*d_w f32] [(N+1)*1024 f32]      -- present modalities only
//! crc32 u32 over every preceding byte
//! ```

use std::path::Path;

use super::{
    AlignmentScores, AudioEmbedding, Dims, EmbeddingDataset, LayerStack, Presence, Segment,
    SegmentMeta, Split, VisualTokenGrid,
};
use crate::io_util::{put_f32s, seal, unseal, write_atomic, Reader};
use crate::{Error, Result, CLIP_DIM};

pub const MAGIC: &[u8; 4] = b"AVEB";
pub const VERSION: u32 = 1;

// id_len + scores + split
const MIN_RECORD: usize = 2 + 5 * 4 + 1;

pub fn write_dataset(ds: &EmbeddingDataset) -> Result<Vec<u8>> {
    ds.validate()?;
    let d = ds.dims();
    let p = ds.presence();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(ds.len() as u64).to_le_bytes());
    for dim in [d.audio_dim, d.layers, d.seq_len, d.width, d.patches] {
        let dim = u32::try_from(dim)
            .map_err(|_| Error::Validation(format!("dimension {dim} does not fit in u32")))?;
        out.extend_from_slice(&dim.to_le_bytes());
    }
    out.extend_from_slice(&[p.audio as u8, p.layers as u8, p.visual as u8]);

    for seg in ds.segments() {
        let id = seg.meta.id.as_bytes();
        out.extend_from_slice(&(id.len() as u16).to_le_bytes());
        out.extend_from_slice(id);
        put_f32s(&mut out, &seg.meta.alignment_scores.as_array());
        out.push(seg.meta.split.to_u8());
        if let Some(a) = &seg.audio {
            put_f32s(&mut out, a.as_slice());
        }
        if let Some(l) = &seg.layers {
            put_f32s(&mut out, l.values());
        }
        if let Some(v) = &seg.visual {
            put_f32s(&mut out, v.tokens());
        }
    }
    seal(&mut out);
    Ok(out)
}

pub fn save_dataset(ds: &EmbeddingDataset, path: &Path) -> Result<()> {
    let bytes = write_dataset(ds)?;
    write_atomic(path, &bytes)
}

pub fn load_dataset(path: &Path) -> Result<EmbeddingDataset> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_dataset(&bytes)
}

fn flag(r: &mut Reader<'_>, what: &str) -> Result<bool> {
    let at = r.offset();
    match r.u8(what)? {
        0 => Ok(false),
        1 => Ok(true),
        v => Err(Error::Format {
            offset: at,
            message: format!("{what} flag must be 0 or 1, got {v}"),
        }),
    }
}

pub fn read_dataset(bytes: &[u8]) -> Result<EmbeddingDataset> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: "missing AVEB magic".into(),
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

    let n_segments = r.u64("segment count")?;
    let mut dim = |what: &str| -> Result<usize> { Ok(r.u32(what)? as usize) };
    let dims = Dims {
        audio_dim: dim("d_a")?,
        layers: dim("L")?,
        seq_len: dim("S")?,
        width: dim("d_w")?,
        patches: dim("N")?,
    };
    let presence = Presence {
        audio: flag(&mut r, "audio")?,
        layers: flag(&mut r, "layers")?,
        visual: flag(&mut r, "visual")?,
    };

    let max_records = r.remaining() / MIN_RECORD;
    if n_segments > max_records as u64 {
        return Err(Error::Corrupt {
            offset: 8,
            message: format!(
                "header claims {n_segments} segments but only {} bytes follow",
                r.remaining()
            ),
        });
    }
    let layer_len = dims
        .layers
        .checked_mul(dims.seq_len)
        .and_then(|v| v.checked_mul(dims.width));
    let grid_len = (dims.patches + 1).checked_mul(CLIP_DIM);
    let (Some(layer_len), Some(grid_len)) = (layer_len, grid_len) else {
        return Err(Error::Format {
            offset: 16,
            message: "tensor sizes overflow".into(),
        });
    };

    let mut segments = Vec::with_capacity(n_segments as usize);
    for _ in 0..n_segments {
        let id_len = r.u16("id length")? as usize;
        let id_at = r.offset();
        let id = std::str::from_utf8(r.take(id_len, "id")?)
            .map_err(|_| Error::Format {
                offset: id_at,
                message: "segment id is not UTF-8".into(),
            })?
            .to_owned();
        let mut scores = [0f32; 5];
        for s in &mut scores {
            *s = r.f32("alignment score")?;
        }
        let split_at = r.offset();
        let split_byte = r.u8("split")?;
        let split = Split::from_u8(split_byte).ok_or_else(|| Error::Format {
            offset: split_at,
            message: format!("unknown split tag {split_byte}"),
        })?;

        let audio = if presence.audio {
            Some(AudioEmbedding(
                r.finite_f32s(dims.audio_dim, "audio embedding")?,
            ))
        } else {
            None
        };
        let layers = if presence.layers {
            let values = r.finite_f32s(layer_len, "layer stack")?;
            Some(LayerStack::new(
                dims.layers,
                dims.seq_len,
                dims.width,
                values,
            )?)
        } else {
            None
        };
        let visual = if presence.visual {
            let tokens = r.finite_f32s(grid_len, "visual grid")?;
            Some(VisualTokenGrid::new(dims.patches, tokens)?)
        } else {
            None
        };
        segments.push(Segment {
            meta: SegmentMeta {
                id,
                alignment_scores: AlignmentScores::from_array(scores),
                split,
            },
            audio,
            layers,
            visual,
        });
    }
    if r.remaining() != 0 {
        return Err(Error::Format {
            offset: r.offset(),
            message: format!("{} trailing bytes after last segment", r.remaining()),
        });
    }
    EmbeddingDataset::with_header(dims, presence, segments)
}
