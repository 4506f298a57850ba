//! The audio-to-visual mapping: a three-block MLP head and the
//! parameter-free pad/truncate baseline.
//!
//! ```text
//! f = W3 gelu(LN(W2 gelu(LN(W1 z + b1)) + b2)) + b3
//! ```
//!
//! Dropout, when training, follows each GELU.

mod format;
pub(crate) mod forward;

use ndarray::{Array1, Array2, ArrayView2};
use num_traits::Zero;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::rng::{seeded, stream, Rng};
use crate::{Error, Result, CLIP_DIM};

pub use format::{load_params, read_params, save_params, write_params, MAGIC, VERSION};
pub use forward::{forward_batch, gelu, gelu_grad, DropoutMasks, ForwardCache, LN_EPS};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionConfig {
    pub audio_dim: usize,
    pub hidden: usize,
    pub dropout: f64,
}

impl ProjectionConfig {
    pub fn new(audio_dim: usize) -> Self {
        Self {
            audio_dim,
            hidden: CLIP_DIM,
            dropout: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.audio_dim == 0 || self.hidden == 0 {
            return Err(Error::Config(format!(
                "projection widths must be positive (d_a = {}, hidden = {})",
                self.audio_dim, self.hidden
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }

    /// Trainable scalars, normalization gains and biases included.
    pub fn param_count(&self) -> usize {
        let (d, h) = (self.audio_dim, self.hidden);
        (h * d + h) + 2 * h + (h * h + h) + 2 * h + (CLIP_DIM * h + CLIP_DIM)
    }
}

/// Weights of the projection head. Stored as `f32`; training and gradient
/// checks work on an `f64` copy of the same shape.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionParams<T = f32> {
    config: ProjectionConfig,
    /// `hidden x d_a`
    pub w1: Array2<T>,
    pub b1: Array1<T>,
    pub ln1_gain: Array1<T>,
    pub ln1_bias: Array1<T>,
    /// `hidden x hidden`
    pub w2: Array2<T>,
    pub b2: Array1<T>,
    pub ln2_gain: Array1<T>,
    pub ln2_bias: Array1<T>,
    /// `1024 x hidden`
    pub w3: Array2<T>,
    pub b3: Array1<T>,
}

pub const TENSOR_NAMES: [&str; 10] = [
    "w1", "b1", "ln1_gain", "ln1_bias", "w2", "b2", "ln2_gain", "ln2_bias", "w3", "b3",
];

impl<T: Clone + Zero> ProjectionParams<T> {
    /// All-zero tensors with the shapes implied by `config`.
    pub fn zeros(config: ProjectionConfig) -> Self {
        let (d, h) = (config.audio_dim, config.hidden);
        let z1 = |n| Array1::from_elem(n, T::zero());
        let z2 = |r, c| Array2::from_elem((r, c), T::zero());
        Self {
            config,
            w1: z2(h, d),
            b1: z1(h),
            ln1_gain: z1(h),
            ln1_bias: z1(h),
            w2: z2(h, h),
            b2: z1(h),
            ln2_gain: z1(h),
            ln2_bias: z1(h),
            w3: z2(CLIP_DIM, h),
            b3: z1(CLIP_DIM),
        }
    }
}

impl<T> ProjectionParams<T> {
    pub fn config(&self) -> ProjectionConfig {
        self.config
    }

    pub fn audio_dim(&self) -> usize {
        self.config.audio_dim
    }

    pub fn set_dropout(&mut self, rate: f64) -> Result<()> {
        let cfg = ProjectionConfig {
            dropout: rate,
            ..self.config
        };
        cfg.validate()?;
        self.config = cfg;
        Ok(())
    }

    /// Every tensor as a flat row-major slice, in declaration order.
    pub fn tensors(&self) -> [&[T]; 10] {
        fn s1<T>(a: &Array1<T>) -> &[T] {
            a.as_slice().expect("standard layout")
        }
        fn s2<T>(a: &Array2<T>) -> &[T] {
            a.as_slice().expect("standard layout")
        }
        [
            s2(&self.w1),
            s1(&self.b1),
            s1(&self.ln1_gain),
            s1(&self.ln1_bias),
            s2(&self.w2),
            s1(&self.b2),
            s1(&self.ln2_gain),
            s1(&self.ln2_bias),
            s2(&self.w3),
            s1(&self.b3),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [T]; 10] {
        [
            self.w1.as_slice_mut().expect("standard layout"),
            self.b1.as_slice_mut().expect("standard layout"),
            self.ln1_gain.as_slice_mut().expect("standard layout"),
            self.ln1_bias.as_slice_mut().expect("standard layout"),
            self.w2.as_slice_mut().expect("standard layout"),
            self.b2.as_slice_mut().expect("standard layout"),
            self.ln2_gain.as_slice_mut().expect("standard layout"),
            self.ln2_bias.as_slice_mut().expect("standard layout"),
            self.w3.as_slice_mut().expect("standard layout"),
            self.b3.as_slice_mut().expect("standard layout"),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn map<U>(&self, f: impl Fn(&T) -> U + Copy) -> ProjectionParams<U> {
        ProjectionParams {
            config: self.config,
            w1: self.w1.map(f),
            b1: self.b1.map(f),
            ln1_gain: self.ln1_gain.map(f),
            ln1_bias: self.ln1_bias.map(f),
            w2: self.w2.map(f),
            b2: self.b2.map(f),
            ln2_gain: self.ln2_gain.map(f),
            ln2_bias: self.ln2_bias.map(f),
            w3: self.w3.map(f),
            b3: self.b3.map(f),
        }
    }
}

impl ProjectionParams<f32> {
    pub fn to_f64(&self) -> ProjectionParams<f64> {
        self.map(|&v| v as f64)
    }
}

impl ProjectionParams<f64> {
    pub fn to_f32(&self) -> ProjectionParams<f32> {
        self.map(|&v| v as f32)
    }
}

/// Fan-in scaled uniform weights (bound `1/sqrt(fan_in)`), zero biases,
/// unit normalization gains.
pub fn init_projection(config: ProjectionConfig, seed: u64) -> Result<ProjectionParams> {
    config.validate()?;
    let mut p = ProjectionParams::<f32>::zeros(config);
    let mut rng = seeded(seed, stream::INIT);
    let fill = |w: &mut Array2<f32>, rng: &mut Rng| {
        let bound = 1.0 / (w.ncols() as f64).sqrt();
        w.iter_mut()
            .for_each(|v| *v = rng.random_range(-bound..bound) as f32);
    };
    fill(&mut p.w1, &mut rng);
    fill(&mut p.w2, &mut rng);
    fill(&mut p.w3, &mut rng);
    p.ln1_gain.fill(1.0);
    p.ln2_gain.fill(1.0);
    Ok(p)
}

pub enum Mode<'a> {
    Infer,
    /// Inverted dropout with masks drawn from the given generator.
    Train(&'a mut Rng),
}

/// Projects a batch of audio embeddings (one per row).
pub fn project_batch(
    params: &ProjectionParams,
    z: ArrayView2<'_, f32>,
    mode: Mode<'_>,
) -> Result<Array2<f32>> {
    if z.ncols() != params.audio_dim() {
        return Err(Error::Shape(format!(
            "input width {} != d_a {}",
            z.ncols(),
            params.audio_dim()
        )));
    }
    let p64 = params.to_f64();
    let z64 = z.mapv(|v| v as f64);
    let masks = match mode {
        Mode::Infer => None,
        Mode::Train(rng) => Some(DropoutMasks::sample(
            rng,
            z.nrows(),
            params.config.hidden,
            params.config.dropout,
        )),
    };
    let cache = forward_batch(&p64, z64.view(), masks.as_ref());
    Ok(cache.output.mapv(|v| v as f32))
}

pub fn project(params: &ProjectionParams, z_a: &[f32], mode: Mode<'_>) -> Result<Vec<f32>> {
    let row = ArrayView2::from_shape((1, z_a.len()), z_a).expect("one row");
    Ok(project_batch(params, row, mode)?
        .into_raw_vec_and_offset()
        .0)
}

/// Zero-pads or truncates to the 1024-wide visual token space.
pub fn pad_or_truncate(z_a: &[f32]) -> Vec<f32> {
    let mut out = vec![0.0; CLIP_DIM];
    let n = z_a.len().min(CLIP_DIM);
    out[..n].copy_from_slice(&z_a[..n]);
    out
}
