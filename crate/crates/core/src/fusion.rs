//! Reduction of per-layer hidden states to a single audio embedding.
//!
//! Every strategy is a weighted average of per-layer time means, so each is
//! linear in the stack. Sums accumulate in `f64`.

use std::fmt;
use std::str::FromStr;

use crate::store::{AudioEmbedding, LayerStack};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum FusionStrategy {
    FinalOnly,
    /// Layer `ceil(L / 2)`, 1-indexed.
    MiddleOnly,
    /// Unweighted mean over the last `n` layers.
    LastN(usize),
    AverageAll,
    /// Fixed non-negative weights summing to one, one per layer.
    WeightedAll(Vec<f64>),
}

impl FusionStrategy {
    /// Per-layer weights this strategy applies to a stack of `layers` layers.
    pub fn layer_weights(&self, layers: usize) -> Result<Vec<f64>> {
        if layers == 0 {
            return Err(Error::Config("stack has no layers".into()));
        }
        let mut w = vec![0.0; layers];
        match self {
            FusionStrategy::FinalOnly => w[layers - 1] = 1.0,
            FusionStrategy::MiddleOnly => w[layers.div_ceil(2) - 1] = 1.0,
            FusionStrategy::LastN(n) => {
                if *n == 0 || *n > layers {
                    return Err(Error::Config(format!(
                        "last-n needs 1 <= n <= {layers}, got {n}"
                    )));
                }
                for wi in &mut w[layers - n..] {
                    *wi = 1.0 / *n as f64;
                }
            }
            FusionStrategy::AverageAll => w.fill(1.0 / layers as f64),
            FusionStrategy::WeightedAll(given) => {
                if given.len() != layers {
                    return Err(Error::Config(format!(
                        "{} weights given for {layers} layers",
                        given.len()
                    )));
                }
                if given.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
                    return Err(Error::Config(
                        "weights must be finite and non-negative".into(),
                    ));
                }
                let sum: f64 = given.iter().sum();
                if (sum - 1.0).abs() > 1e-9 {
                    return Err(Error::Config(format!("weights sum to {sum}, expected 1")));
                }
                w.copy_from_slice(given);
            }
        }
        Ok(w)
    }
}

impl fmt::Display for FusionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FusionStrategy::FinalOnly => write!(f, "final"),
            FusionStrategy::MiddleOnly => write!(f, "middle"),
            FusionStrategy::LastN(n) => write!(f, "last-n:{n}"),
            FusionStrategy::AverageAll => write!(f, "average"),
            FusionStrategy::WeightedAll(w) => write!(f, "weighted({} layers)", w.len()),
        }
    }
}

/// Parses `final`, `middle`, `last-n:N` and `average`. Weighted fusion
/// needs its weights loaded first; see [`parse_weights`].
impl FromStr for FusionStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "final" => Ok(FusionStrategy::FinalOnly),
            "middle" => Ok(FusionStrategy::MiddleOnly),
            "average" => Ok(FusionStrategy::AverageAll),
            _ => {
                if let Some(n) = s.strip_prefix("last-n:") {
                    let n = n
                        .parse()
                        .map_err(|_| Error::Config(format!("bad layer count in {s:?}")))?;
                    Ok(FusionStrategy::LastN(n))
                } else {
                    Err(Error::Config(format!("unknown fusion strategy {s:?}")))
                }
            }
        }
    }
}

/// Reads whitespace- or comma-separated weights.
pub fn parse_weights(text: &str) -> Result<Vec<f64>> {
    text.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::Config(format!("bad weight {t:?}")))
        })
        .collect()
}

fn mean_time_f64(stack: &LayerStack, layer: usize) -> Vec<f64> {
    let mut acc = vec![0.0f64; stack.width()];
    for s in 0..stack.seq_len() {
        for (a, &v) in acc.iter_mut().zip(stack.row(layer, s)) {
            *a += v as f64;
        }
    }
    let inv = 1.0 / stack.seq_len() as f64;
    acc.iter_mut().for_each(|a| *a *= inv);
    acc
}

/// Time-averaged hidden state of layer `layer_index` (1-indexed).
pub fn mean_time(stack: &LayerStack, layer_index: usize) -> Result<Vec<f32>> {
    if layer_index == 0 || layer_index > stack.layers() {
        return Err(Error::Bounds {
            index: layer_index,
            len: stack.layers(),
        });
    }
    Ok(mean_time_f64(stack, layer_index - 1)
        .into_iter()
        .map(|v| v as f32)
        .collect())
}

pub fn fuse(stack: &LayerStack, strategy: &FusionStrategy) -> Result<AudioEmbedding> {
    let weights = strategy.layer_weights(stack.layers())?;
    let mut out = vec![0.0f64; stack.width()];
    for (l, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        for (o, m) in out.iter_mut().zip(mean_time_f64(stack, l)) {
            *o += w * m;
        }
    }
    Ok(AudioEmbedding(out.into_iter().map(|v| v as f32).collect()))
}
