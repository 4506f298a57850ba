//! Bidirectional retrieval evaluation by cosine similarity.
//!
//! Each repeat samples `P` pairs from the first `max_pool` test pairs and
//! ranks every query against the sampled pool. Mean rank and Top-1/3/10 are
//! computed from the same pools.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};
use rand::Rng as _;
use rayon::prelude::*;
use serde::Serialize;

use crate::projection::{pad_or_truncate, project_batch, Mode, ProjectionParams};
use crate::rng::{seeded, stream};
use crate::store::{EmbeddingDataset, Split};
use crate::substitution::cosine_unchecked;
use crate::{Error, Result, CLIP_DIM};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Direction {
    #[serde(rename = "a2v")]
    AudioToVideo,
    #[serde(rename = "v2a")]
    VideoToAudio,
    #[serde(rename = "both")]
    Both,
}

impl Direction {
    fn expand(self) -> Vec<Direction> {
        match self {
            Direction::Both => vec![Direction::AudioToVideo, Direction::VideoToAudio],
            d => vec![d],
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Direction::AudioToVideo => "A→V",
            Direction::VideoToAudio => "V→A",
            Direction::Both => "both",
        }
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "a2v" => Ok(Direction::AudioToVideo),
            "v2a" => Ok(Direction::VideoToAudio),
            "both" => Ok(Direction::Both),
            _ => Err(Error::Config(format!("unknown direction {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RetrievalProtocol {
    pub pool_size: usize,
    pub max_pool: usize,
    pub repeats: usize,
    pub seed: u64,
    pub direction: Direction,
}

impl Default for RetrievalProtocol {
    fn default() -> Self {
        Self {
            pool_size: 100,
            max_pool: 500,
            repeats: 5,
            seed: 0,
            direction: Direction::Both,
        }
    }
}

impl RetrievalProtocol {
    pub fn validate(&self) -> Result<()> {
        if self.pool_size == 0 || self.repeats == 0 {
            return Err(Error::Config(
                "pool size and repeats must be positive".into(),
            ));
        }
        if self.max_pool < self.pool_size {
            return Err(Error::Config(format!(
                "max pool {} smaller than pool size {}",
                self.max_pool, self.pool_size
            )));
        }
        Ok(())
    }
}

/// Row-aligned audio-side and visual-side vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedEmbeddings {
    pub ids: Vec<String>,
    pub audio: Array2<f32>,
    pub visual: Array2<f32>,
}

/// How audio embeddings are moved into the 1024-wide visual space.
#[derive(Clone, Copy)]
pub enum AudioMapping<'a> {
    Projected(&'a ProjectionParams),
    RawPad,
}

/// Test-split audio embeddings lifted to 1024 dims, paired with CLS tokens.
pub fn test_pairs(ds: &EmbeddingDataset, mapping: AudioMapping<'_>) -> Result<PairedEmbeddings> {
    let p = ds.presence();
    if !(p.audio && p.visual) {
        return Err(Error::Config(
            "retrieval needs audio embeddings and visual grids".into(),
        ));
    }
    let segs: Vec<_> = ds.split(Split::Test).collect();
    let d_a = ds.dims().audio_dim;
    let mut raw = Array2::<f32>::zeros((segs.len(), d_a));
    let mut visual = Array2::<f32>::zeros((segs.len(), CLIP_DIM));
    for (i, s) in segs.iter().enumerate() {
        raw.row_mut(i).assign(&ndarray::ArrayView1::from(
            s.audio.as_ref().unwrap().as_slice(),
        ));
        visual
            .row_mut(i)
            .assign(&ndarray::ArrayView1::from(s.visual.as_ref().unwrap().cls()));
    }
    let audio = lift_audio(raw.view(), mapping)?;
    Ok(PairedEmbeddings {
        ids: segs.iter().map(|s| s.meta.id.clone()).collect(),
        audio,
        visual,
    })
}

/// Applies the mapping row by row; projection runs in inference mode.
pub fn lift_audio(raw: ArrayView2<'_, f32>, mapping: AudioMapping<'_>) -> Result<Array2<f32>> {
    match mapping {
        AudioMapping::RawPad => {
            let mut out = Array2::zeros((raw.nrows(), CLIP_DIM));
            for (mut o, r) in out.outer_iter_mut().zip(raw.outer_iter()) {
                let padded = pad_or_truncate(&r.to_vec());
                o.assign(&ndarray::ArrayView1::from(&padded[..]));
            }
            Ok(out)
        }
        AudioMapping::Projected(params) => {
            const CHUNK: usize = 256;
            let mut out = Array2::zeros((raw.nrows(), CLIP_DIM));
            for start in (0..raw.nrows()).step_by(CHUNK) {
                let end = (start + CHUNK).min(raw.nrows());
                let part =
                    project_batch(params, raw.slice(ndarray::s![start..end, ..]), Mode::Infer)?;
                out.slice_mut(ndarray::s![start..end, ..]).assign(&part);
            }
            Ok(out)
        }
    }
}

/// `M[i][j] = cos(a_i, b_j)`.
pub fn similarity_matrix(a: ArrayView2<'_, f32>, b: ArrayView2<'_, f32>) -> Result<Array2<f64>> {
    if a.ncols() != b.ncols() {
        return Err(Error::Shape(format!(
            "row widths {} and {} differ",
            a.ncols(),
            b.ncols()
        )));
    }
    let rows: Vec<Vec<f32>> = a.outer_iter().map(|r| r.to_vec()).collect();
    let cols: Vec<Vec<f32>> = b.outer_iter().map(|r| r.to_vec()).collect();
    Ok(Array2::from_shape_fn((rows.len(), cols.len()), |(i, j)| {
        cosine_unchecked(&rows[i], &cols[j])
    }))
}

/// 1-based position of the true candidate; tied candidates count as ahead.
pub fn rank_of_match(scores: &[f64], true_index: usize) -> Result<usize> {
    let Some(&target) = scores.get(true_index) else {
        return Err(Error::Bounds {
            index: true_index,
            len: scores.len(),
        });
    };
    let ahead = scores
        .iter()
        .enumerate()
        .filter(|&(j, &s)| j != true_index && s >= target)
        .count();
    Ok(1 + ahead)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DirectionReport {
    pub direction: Direction,
    pub mean_rank: f64,
    /// Population standard deviation of the per-repeat mean ranks.
    pub rank_std_across_repeats: f64,
    pub top1: f64,
    pub top3: f64,
    pub top10: f64,
    pub repeat_mean_ranks: Vec<f64>,
    pub ranks: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RetrievalReport {
    pub protocol: RetrievalProtocol,
    /// Pool size actually used after clipping.
    pub pool_size: usize,
    /// Pairs the pools were drawn from.
    pub candidates: usize,
    pub warning: Option<String>,
    /// Top-k accuracies share the mean-rank pools.
    pub shared_pools: bool,
    pub directions: Vec<DirectionReport>,
}

impl RetrievalReport {
    pub fn direction(&self, d: Direction) -> Option<&DirectionReport> {
        self.directions.iter().find(|r| r.direction == d)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }

    /// Mean rank plus T1/T3/T10 for each direction.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "pool {} of {} candidates, {} repeats, seed {}\n",
            self.pool_size, self.candidates, self.protocol.repeats, self.protocol.seed
        ));
        out.push_str(&format!(
            "{:<6} {:>10} {:>8} {:>7} {:>7} {:>7}\n",
            "dir", "mean rank", "std", "T1", "T3", "T10"
        ));
        for d in &self.directions {
            out.push_str(&format!(
                "{:<6} {:>10.2} {:>8.2} {:>7.1} {:>7.1} {:>7.1}\n",
                d.direction.label(),
                d.mean_rank,
                d.rank_std_across_repeats,
                d.top1,
                d.top3,
                d.top10
            ));
        }
        if let Some(w) = &self.warning {
            out.push_str(&format!("warning: {w}\n"));
        }
        out
    }
}

fn sample_without_replacement(n: usize, k: usize, seed: u64, repeat: usize) -> Vec<usize> {
    let mut rng = seeded(seed, stream::RETRIEVAL + repeat as u64);
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.random_range(i..n);
        idx.swap(i, j);
    }
    idx.truncate(k);
    idx
}

fn pct(ranks: &[usize], k: usize) -> f64 {
    100.0 * ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64
}

pub fn evaluate_retrieval(
    pairs: &PairedEmbeddings,
    protocol: &RetrievalProtocol,
) -> Result<RetrievalReport> {
    protocol.validate()?;
    if pairs.audio.dim() != (pairs.visual.nrows(), pairs.visual.ncols())
        || pairs.audio.nrows() != pairs.ids.len()
    {
        return Err(Error::Shape(format!(
            "audio side {:?} and visual side {:?} are not paired",
            pairs.audio.dim(),
            pairs.visual.dim()
        )));
    }
    let candidates = pairs.audio.nrows().min(protocol.max_pool);
    if candidates == 0 {
        return Err(Error::Validation("no test pairs to evaluate".into()));
    }
    let pool_size = protocol.pool_size.min(candidates);
    let warning = (pool_size < protocol.pool_size).then(|| {
        format!(
            "pool clipped from {} to {pool_size}: only {candidates} test pairs available",
            protocol.pool_size
        )
    });
    if let Some(w) = &warning {
        log::warn!("{w}");
    }

    let dirs = protocol.direction.expand();
    // per repeat: ranks for each direction
    let per_repeat: Vec<Vec<Vec<usize>>> = (0..protocol.repeats)
        .into_par_iter()
        .map(|r| {
            let idx = sample_without_replacement(candidates, pool_size, protocol.seed, r);
            let a = pairs.audio.select(ndarray::Axis(0), &idx);
            let v = pairs.visual.select(ndarray::Axis(0), &idx);
            let sims = similarity_matrix(a.view(), v.view()).expect("widths checked");
            dirs.iter()
                .map(|d| {
                    (0..pool_size)
                        .map(|q| {
                            let scores: Vec<f64> = match d {
                                Direction::AudioToVideo => sims.row(q).to_vec(),
                                _ => sims.column(q).to_vec(),
                            };
                            rank_of_match(&scores, q).expect("query in pool")
                        })
                        .collect()
                })
                .collect()
        })
        .collect();

    let directions = dirs
        .iter()
        .enumerate()
        .map(|(di, &direction)| {
            let ranks: Vec<Vec<usize>> = per_repeat.iter().map(|r| r[di].clone()).collect();
            let repeat_mean_ranks: Vec<f64> = ranks
                .iter()
                .map(|r| r.iter().sum::<usize>() as f64 / r.len() as f64)
                .collect();
            let mean_rank = repeat_mean_ranks.iter().sum::<f64>() / repeat_mean_ranks.len() as f64;
            let var = repeat_mean_ranks
                .iter()
                .map(|m| (m - mean_rank).powi(2))
                .sum::<f64>()
                / repeat_mean_ranks.len() as f64;
            let all: Vec<usize> = ranks.iter().flatten().copied().collect();
            DirectionReport {
                direction,
                mean_rank,
                rank_std_across_repeats: var.sqrt(),
                top1: pct(&all, 1),
                top3: pct(&all, 3),
                top10: pct(&all, 10),
                repeat_mean_ranks,
                ranks,
            }
        })
        .collect();

    Ok(RetrievalReport {
        protocol: protocol.clone(),
        pool_size,
        candidates,
        warning,
        shared_pools: true,
        directions,
    })
}

impl fmt::Display for RetrievalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render_table())
    }
}
