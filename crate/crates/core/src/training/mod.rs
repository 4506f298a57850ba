//! Training of the projection head: objective, analytic gradients, Adam and
//! the epoch loop with a reduce-on-plateau learning-rate schedule.

mod adam;
mod backprop;
mod loss;

use ndarray::{s, Array2};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::projection::{init_projection, write_params, ProjectionConfig, ProjectionParams};
use crate::rng::{seeded, stream};
use crate::store::{EmbeddingDataset, Split};
use crate::{Error, Result, CLIP_DIM};

pub use adam::{adam_step, adam_step_params, AdamState};
pub use backprop::{batch_loss, batch_loss_and_gradients, loss_gradients, Batch};
pub use loss::{
    dist_match, dist_match_with_grad, info_nce, info_nce_with_grad, total_loss,
    total_loss_with_grad, BatchStats, Objective,
};

/// Minimum drop in validation loss that counts as an improvement.
pub const PLATEAU_THRESHOLD: f64 = 1e-6;

/// Deserializing fills missing fields from the defaults and rejects a
/// `seed` key; callers set the seed explicitly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub tau: f64,
    pub lambda: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(skip_deserializing)]
    pub seed: u64,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub min_lr: f64,
    pub val_fraction: f64,
    pub hidden: usize,
    pub dropout: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            tau: 0.07,
            lambda: 0.02,
            lr: 5e-5,
            epochs: 10,
            batch_size: 64,
            seed: 0,
            plateau_factor: 0.1,
            plateau_patience: 2,
            min_lr: 1e-7,
            val_fraction: 0.1,
            hidden: CLIP_DIM,
            dropout: 0.1,
        }
    }
}

impl TrainingConfig {
    pub fn objective(&self) -> Objective {
        Objective {
            tau: self.tau,
            lambda: self.lambda,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.objective().validate()?;
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be >= 0, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return Err(Error::Config(format!(
                "plateau factor must lie in (0, 1), got {}",
                self.plateau_factor
            )));
        }
        if self.plateau_patience == 0 {
            return Err(Error::Config("plateau patience must be at least 1".into()));
        }
        if self.min_lr.is_nan() || self.min_lr < 0.0 {
            return Err(Error::Config("min lr must be >= 0".into()));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Config(format!(
                "val fraction must lie in (0, 1), got {}",
                self.val_fraction
            )));
        }
        ProjectionConfig {
            audio_dim: 1,
            hidden: self.hidden,
            dropout: self.dropout,
        }
        .validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Learning rate in effect during this epoch.
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainingLog {
    pub config: TrainingConfig,
    /// Rows are L2-normalized before the InfoNCE dot products.
    pub normalize_before_nce: bool,
    /// Distribution matching sees the unnormalized projections.
    pub dist_match_features: &'static str,
    pub train_size: usize,
    pub val_size: usize,
    pub initial_val_loss: f64,
    pub epochs: Vec<EpochRecord>,
    pub param_checksum: String,
}

#[derive(Serialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum LogLine<'a> {
    Header {
        config: &'a TrainingConfig,
        normalize_before_nce: bool,
        dist_match_features: &'a str,
        train_size: usize,
        val_size: usize,
        initial_val_loss: f64,
    },
    Epoch(&'a EpochRecord),
    Final {
        param_checksum: &'a str,
    },
}

impl TrainingLog {
    /// Header line, one line per epoch, then the final checksum line.
    pub fn to_jsonl(&self) -> String {
        let mut lines = vec![LogLine::Header {
            config: &self.config,
            normalize_before_nce: self.normalize_before_nce,
            dist_match_features: self.dist_match_features,
            train_size: self.train_size,
            val_size: self.val_size,
            initial_val_loss: self.initial_val_loss,
        }];
        lines.extend(self.epochs.iter().map(LogLine::Epoch));
        lines.push(LogLine::Final {
            param_checksum: &self.param_checksum,
        });
        let mut out = String::new();
        for l in lines {
            out.push_str(&serde_json::to_string(&l).expect("log serializes"));
            out.push('\n');
        }
        out
    }
}

/// SHA-256 of the serialized parameters, hex encoded.
pub fn param_checksum(params: &ProjectionParams) -> String {
    Sha256::digest(write_params(params))
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Contiguous batch ranges; a trailing single row joins the previous batch
/// so the batch statistics stay defined.
fn batch_ranges(n: usize, size: usize) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = (0..n)
        .step_by(size)
        .map(|start| (start, (start + size).min(n)))
        .collect();
    if out.len() >= 2 && out.last().map(|&(a, b)| b - a) == Some(1) {
        let (_, end) = out.pop().unwrap();
        out.last_mut().unwrap().1 = end;
    }
    out
}

struct PairedRows {
    audio: Array2<f64>,
    cls: Array2<f64>,
}

impl PairedRows {
    fn gather(&self, idx: &[usize]) -> PairedRows {
        PairedRows {
            audio: self.audio.select(ndarray::Axis(0), idx),
            cls: self.cls.select(ndarray::Axis(0), idx),
        }
    }

    fn batch(&self, start: usize, end: usize) -> Batch<'_> {
        Batch {
            audio: self.audio.slice(s![start..end, ..]),
            cls: self.cls.slice(s![start..end, ..]),
        }
    }
}

fn eval_loss(
    params: &ProjectionParams,
    rows: &PairedRows,
    batch_size: usize,
    objective: Objective,
) -> Result<f64> {
    let p64 = params.to_f64();
    let ranges = batch_ranges(rows.audio.nrows(), batch_size);
    let mut sum = 0.0;
    for &(a, b) in &ranges {
        sum += batch_loss(&p64, rows.batch(a, b), objective, None)?;
    }
    Ok(sum / ranges.len() as f64)
}

/// Audio embeddings and CLS tokens of every non-test segment, in file order.
fn training_pool(ds: &EmbeddingDataset) -> Result<PairedRows> {
    let p = ds.presence();
    if !(p.audio && p.visual) {
        return Err(Error::Config(
            "training needs audio embeddings and visual grids".into(),
        ));
    }
    let segs: Vec<_> = ds
        .segments()
        .iter()
        .filter(|s| s.meta.split != Split::Test)
        .collect();
    let d_a = ds.dims().audio_dim;
    let mut audio = Array2::zeros((segs.len(), d_a));
    let mut cls = Array2::zeros((segs.len(), CLIP_DIM));
    for (i, s) in segs.iter().enumerate() {
        let a = s.audio.as_ref().expect("presence checked");
        let v = s.visual.as_ref().expect("presence checked");
        audio
            .row_mut(i)
            .iter_mut()
            .zip(a.as_slice())
            .for_each(|(o, &x)| *o = x as f64);
        cls.row_mut(i)
            .iter_mut()
            .zip(v.cls())
            .for_each(|(o, &x)| *o = x as f64);
    }
    Ok(PairedRows { audio, cls })
}

/// Trains a fresh projection head on the non-test segments of `ds`.
pub fn train_projection(
    ds: &EmbeddingDataset,
    cfg: &TrainingConfig,
) -> Result<(ProjectionParams, TrainingLog)> {
    cfg.validate()?;
    let pool = training_pool(ds)?;
    let n = pool.audio.nrows();
    let n_val = ((n as f64 * cfg.val_fraction).round() as usize).max(1);
    if n_val >= n {
        return Err(Error::Config(format!(
            "{n} non-test segments leave no training data after a {n_val}-segment validation split"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded(cfg.seed, stream::SPLIT));
    let val = pool.gather(&order[..n_val]);
    let train = pool.gather(&order[n_val..]);
    let n_train = n - n_val;

    let proj_cfg = ProjectionConfig {
        audio_dim: ds.dims().audio_dim,
        hidden: cfg.hidden,
        dropout: cfg.dropout,
    };
    let mut params = init_projection(proj_cfg, cfg.seed)?;
    let objective = cfg.objective();
    let initial_val_loss = eval_loss(&params, &val, cfg.batch_size, objective)?;

    let mut adam = AdamState::for_params(&params);
    let mut shuffle_rng = seeded(cfg.seed, stream::SHUFFLE);
    let mut dropout_rng = seeded(cfg.seed, stream::DROPOUT);
    let mut lr = cfg.lr;
    let mut best = initial_val_loss;
    let mut stale = 0usize;
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut train_order: Vec<usize> = (0..n_train).collect();

    for epoch in 1..=cfg.epochs {
        train_order.shuffle(&mut shuffle_rng);
        let shuffled = train.gather(&train_order);
        let ranges = batch_ranges(n_train, cfg.batch_size);
        let mut loss_sum = 0.0;
        for &(a, b) in &ranges {
            let (loss, grads) =
                loss_gradients(&params, shuffled.batch(a, b), objective, &mut dropout_rng)?;
            adam_step_params(&mut params, &grads, &mut adam, lr);
            loss_sum += loss;
        }
        let val_loss = eval_loss(&params, &val, cfg.batch_size, objective)?;
        log::info!(
            "epoch {epoch}: train loss {:.6}, val loss {val_loss:.6}, lr {lr:e}",
            loss_sum / ranges.len() as f64
        );
        epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / ranges.len() as f64,
            val_loss,
            lr,
        });

        if val_loss < best - PLATEAU_THRESHOLD {
            best = val_loss;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.plateau_patience {
                lr = (lr * cfg.plateau_factor).max(cfg.min_lr.min(lr));
                stale = 0;
            }
        }
    }

    let log = TrainingLog {
        config: cfg.clone(),
        normalize_before_nce: true,
        dist_match_features: "pre_normalization",
        train_size: n_train,
        val_size: n_val,
        initial_val_loss,
        epochs,
        param_checksum: param_checksum(&params),
    };
    Ok((params, log))
}
