//! Paired audio/visual embedding records and their binary container.

mod format;
mod synth;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::{Error, Result, CLIP_DIM};

pub use format::{load_dataset, read_dataset, save_dataset, write_dataset, MAGIC, VERSION};
pub use synth::{generate_synthetic, MixingMap, SynthConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn to_u8(self) -> u8 {
        match self {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        }
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Split::Train),
            1 => Some(Split::Val),
            2 => Some(Split::Test),
            _ => None,
        }
    }
}

/// The five per-segment alignment ratings, each on a 0-10 scale.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentScores {
    pub temporal: f32,
    pub spatial: f32,
    pub contextual: f32,
    pub causality: f32,
    pub visibility: f32,
}

impl AlignmentScores {
    pub const NAMES: [&'static str; 5] = [
        "temporal",
        "spatial",
        "contextual",
        "causality",
        "visibility",
    ];

    pub fn uniform(v: f32) -> Self {
        Self::from_array([v; 5])
    }

    pub fn from_array(a: [f32; 5]) -> Self {
        Self {
            temporal: a[0],
            spatial: a[1],
            contextual: a[2],
            causality: a[3],
            visibility: a[4],
        }
    }

    pub fn as_array(&self) -> [f32; 5] {
        [
            self.temporal,
            self.spatial,
            self.contextual,
            self.causality,
            self.visibility,
        ]
    }

    /// Arithmetic mean of the five ratings.
    pub fn overall(&self) -> f64 {
        self.as_array().iter().map(|&s| s as f64).sum::<f64>() / 5.0
    }

    fn validate(&self, id: &str) -> Result<()> {
        for (name, s) in Self::NAMES.iter().zip(self.as_array()) {
            if !(0.0..=10.0).contains(&s) {
                return Err(Error::Validation(format!(
                    "segment {id}: {name} score {s} outside [0, 10]"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentMeta {
    pub id: String,
    pub alignment_scores: AlignmentScores,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AudioEmbedding(pub Vec<f32>);

impl AudioEmbedding {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }
}

/// Hidden states of every encoder layer, stored `layers × seq_len × width`
/// row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerStack {
    layers: usize,
    seq_len: usize,
    width: usize,
    values: Vec<f32>,
}

impl LayerStack {
    pub fn new(layers: usize, seq_len: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if layers == 0 || seq_len == 0 || width == 0 {
            return Err(Error::Shape(format!(
                "layer stack dims must be positive, got {layers}x{seq_len}x{width}"
            )));
        }
        if values.len() != layers * seq_len * width {
            return Err(Error::Shape(format!(
                "layer stack {layers}x{seq_len}x{width} needs {} values, got {}",
                layers * seq_len * width,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation(
                "layer stack has non-finite values".into(),
            ));
        }
        Ok(Self {
            layers,
            seq_len,
            width,
            values,
        })
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Hidden state of one time step; `layer` and `step` are 0-based.
    pub fn row(&self, layer: usize, step: usize) -> &[f32] {
        let start = (layer * self.seq_len + step) * self.width;
        &self.values[start..start + self.width]
    }
}

/// A `(patches + 1) × 1024` token matrix; row 0 is the CLS token.
#[derive(Clone, Debug, PartialEq)]
pub struct VisualTokenGrid {
    patches: usize,
    tokens: Vec<f32>,
}

impl VisualTokenGrid {
    pub fn new(patches: usize, tokens: Vec<f32>) -> Result<Self> {
        if tokens.len() != (patches + 1) * CLIP_DIM {
            return Err(Error::Shape(format!(
                "grid with {patches} patches needs {} values, got {}",
                (patches + 1) * CLIP_DIM,
                tokens.len()
            )));
        }
        if tokens.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation(
                "visual grid has non-finite values".into(),
            ));
        }
        Ok(Self { patches, tokens })
    }

    pub fn patches(&self) -> usize {
        self.patches
    }

    pub fn rows(&self) -> usize {
        self.patches + 1
    }

    pub fn cls(&self) -> &[f32] {
        self.row(0)
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.tokens[i * CLIP_DIM..(i + 1) * CLIP_DIM]
    }

    pub(crate) fn row_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.tokens[i * CLIP_DIM..(i + 1) * CLIP_DIM]
    }

    pub fn tokens(&self) -> &[f32] {
        &self.tokens
    }
}

/// Header dimensions. Dims of an absent modality are zero.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub audio_dim: usize,
    pub layers: usize,
    pub seq_len: usize,
    pub width: usize,
    pub patches: usize,
}

/// Which modalities every segment of a dataset carries.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Presence {
    pub audio: bool,
    pub layers: bool,
    pub visual: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub meta: SegmentMeta,
    pub audio: Option<AudioEmbedding>,
    pub layers: Option<LayerStack>,
    pub visual: Option<VisualTokenGrid>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingDataset {
    dims: Dims,
    presence: Presence,
    segments: Vec<Segment>,
}

impl EmbeddingDataset {
    /// Builds a dataset, deriving header dims from the first segment and
    /// checking every invariant.
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        let (dims, presence) = match segments.first() {
            None => (Dims::default(), Presence::default()),
            Some(s) => (
                Dims {
                    audio_dim: s.audio.as_ref().map_or(0, |a| a.dim()),
                    layers: s.layers.as_ref().map_or(0, |l| l.layers()),
                    seq_len: s.layers.as_ref().map_or(0, |l| l.seq_len()),
                    width: s.layers.as_ref().map_or(0, |l| l.width()),
                    patches: s.visual.as_ref().map_or(0, |v| v.patches()),
                },
                Presence {
                    audio: s.audio.is_some(),
                    layers: s.layers.is_some(),
                    visual: s.visual.is_some(),
                },
            ),
        };
        Self::with_header(dims, presence, segments)
    }

    pub fn with_header(dims: Dims, presence: Presence, segments: Vec<Segment>) -> Result<Self> {
        let ds = Self {
            dims,
            presence,
            segments,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn presence(&self) -> Presence {
        self.presence
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn into_segments(self) -> Vec<Segment> {
        self.segments
    }

    /// Checks every type invariant; a dataset that fails is never returned
    /// from a constructor or loader.
    pub fn validate(&self) -> Result<()> {
        let Dims {
            audio_dim,
            layers,
            seq_len,
            width,
            patches,
        } = self.dims;
        let p = self.presence;
        if !self.segments.is_empty() && !p.audio && !p.layers {
            return Err(Error::Validation(
                "segments must carry audio embeddings or layer stacks".into(),
            ));
        }
        if p.audio != (audio_dim > 0) {
            return Err(Error::Validation(format!(
                "audio presence {} disagrees with d_a = {audio_dim}",
                p.audio
            )));
        }
        let layer_dims_ok = if p.layers {
            layers > 0 && seq_len > 0 && width > 0
        } else {
            (layers | seq_len | width) == 0
        };
        if !layer_dims_ok {
            return Err(Error::Validation(format!(
                "layer presence {} disagrees with dims {layers}x{seq_len}x{width}",
                p.layers
            )));
        }
        if !p.visual && patches != 0 {
            return Err(Error::Validation(format!(
                "N = {patches} declared without visual grids"
            )));
        }

        let mut seen = HashSet::with_capacity(self.segments.len());
        for seg in &self.segments {
            let id = &seg.meta.id;
            if !seen.insert(id.as_str()) {
                return Err(Error::Validation(format!("duplicate segment id {id}")));
            }
            if id.len() > u16::MAX as usize {
                return Err(Error::Validation(format!(
                    "segment id of {} bytes exceeds the 65535-byte limit",
                    id.len()
                )));
            }
            seg.meta.alignment_scores.validate(id)?;

            match (&seg.audio, p.audio) {
                (Some(a), true) => {
                    if a.dim() != audio_dim {
                        return Err(Error::Validation(format!(
                            "segment {id}: audio length {} != d_a {audio_dim}",
                            a.dim()
                        )));
                    }
                    if a.0.iter().any(|v| !v.is_finite()) {
                        return Err(Error::Validation(format!(
                            "segment {id}: non-finite audio embedding"
                        )));
                    }
                }
                (None, false) => {}
                _ => {
                    return Err(Error::Validation(format!(
                        "segment {id}: audio presence differs from header"
                    )))
                }
            }
            match (&seg.layers, p.layers) {
                (Some(l), true) => {
                    if (l.layers(), l.seq_len(), l.width()) != (layers, seq_len, width) {
                        return Err(Error::Validation(format!(
                            "segment {id}: layer stack {}x{}x{} != header {layers}x{seq_len}x{width}",
                            l.layers(),
                            l.seq_len(),
                            l.width()
                        )));
                    }
                }
                (None, false) => {}
                _ => {
                    return Err(Error::Validation(format!(
                        "segment {id}: layer presence differs from header"
                    )))
                }
            }
            match (&seg.visual, p.visual) {
                (Some(v), true) => {
                    if v.patches() != patches {
                        return Err(Error::Validation(format!(
                            "segment {id}: grid has {} patches, header N = {patches}",
                            v.patches()
                        )));
                    }
                }
                (None, false) => {}
                _ => {
                    return Err(Error::Validation(format!(
                        "segment {id}: visual presence differs from header"
                    )))
                }
            }
        }
        Ok(())
    }

    /// Segments carrying the given split label, in file order.
    pub fn split(&self, split: Split) -> impl Iterator<Item = &Segment> {
        self.segments.iter().filter(move |s| s.meta.split == split)
    }

    /// One JSON object per line mirroring each segment's metadata, plus the
    /// aggregate score used by [`filter_by_alignment`].
    pub fn manifest(&self) -> String {
        #[derive(Serialize)]
        struct Line<'a> {
            #[serde(flatten)]
            meta: &'a SegmentMeta,
            overall_score: f64,
            overall_aggregate: &'static str,
        }
        let mut out = String::new();
        for seg in &self.segments {
            let line = Line {
                meta: &seg.meta,
                overall_score: seg.meta.alignment_scores.overall(),
                overall_aggregate: "mean",
            };
            out.push_str(&serde_json::to_string(&line).expect("metadata serializes"));
            out.push('\n');
        }
        out
    }
}

/// Writes the JSON-lines metadata sidecar for `ds`.
pub fn save_manifest(ds: &EmbeddingDataset, path: &std::path::Path) -> Result<()> {
    crate::io_util::write_atomic(path, ds.manifest().as_bytes())
}

/// Keeps segments whose mean alignment score is strictly above `threshold`.
pub fn filter_by_alignment(ds: &EmbeddingDataset, threshold: f64) -> Result<EmbeddingDataset> {
    if !(0.0..=10.0).contains(&threshold) {
        return Err(Error::Config(format!(
            "threshold {threshold} outside [0, 10]"
        )));
    }
    let kept = ds
        .segments
        .iter()
        .filter(|s| s.meta.alignment_scores.overall() > threshold)
        .cloned()
        .collect();
    EmbeddingDataset::with_header(ds.dims, ds.presence, kept)
}
