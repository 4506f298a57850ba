use std::fmt::Write as _;
use std::path::Path;

use xmodal_core::projection::{self, read_params};
use xmodal_core::store::{self, read_dataset, AlignmentScores, EmbeddingDataset, Split};
use xmodal_core::{Error, Result};

const BINS: usize = 10;

pub fn summarize(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    match bytes.get(..4) {
        Some(m) if m == projection::MAGIC => {
            let p = read_params(&bytes)?;
            let c = p.config();
            Ok(format!(
                "{}: projection parameters v{}\n\
                 audio dim {}  hidden {}  output 1024  dropout {}\n\
                 parameters {}\n",
                path.display(),
                projection::VERSION,
                c.audio_dim,
                c.hidden,
                c.dropout as f32,
                p.param_count()
            ))
        }
        // Anything else goes through the dataset reader so bad magic is
        // reported with its offset.
        _ => Ok(dataset_summary(path, &read_dataset(&bytes)?)),
    }
}

fn histogram(ds: &EmbeddingDataset, dim: usize) -> [usize; BINS] {
    let mut h = [0; BINS];
    for s in ds.segments() {
        let v = s.meta.alignment_scores.as_array()[dim];
        h[(v as usize).min(BINS - 1)] += 1;
    }
    h
}

fn dataset_summary(path: &Path, ds: &EmbeddingDataset) -> String {
    let d = ds.dims();
    let p = ds.presence();
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{}: dataset v{}, {} segments",
        path.display(),
        store::VERSION,
        ds.len()
    );
    let _ = writeln!(
        out,
        "audio dim {}  layers {}x{}x{}  patches {}",
        d.audio_dim, d.layers, d.seq_len, d.width, d.patches
    );
    let _ = writeln!(
        out,
        "present: audio {}  layers {}  visual {}",
        p.audio, p.layers, p.visual
    );
    let count = |s| ds.split(s).count();
    let _ = writeln!(
        out,
        "splits: train {}  val {}  test {}",
        count(Split::Train),
        count(Split::Val),
        count(Split::Test)
    );
    let _ = writeln!(out, "alignment scores, 10 bins over [0, 10]:");
    for (i, name) in AlignmentScores::NAMES.iter().enumerate() {
        let bins: Vec<String> = histogram(ds, i).iter().map(|c| format!("{c:>5}")).collect();
        let _ = writeln!(out, "  {name:<11}{}", bins.join(""));
    }
    out
}
