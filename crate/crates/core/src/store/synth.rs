//! Synthetic paired embeddings with a tunable alignment signal.
//!
//! Each segment draws a unit-norm CLS token `c`, and its audio embedding is
//! `G c + noise * eps`, where `G` is a fixed seed-derived `d_a x 1024` map
//! whose rows have entries of variance `1/d_a` (so `|G c|` is about 1) and
//! `eps` has the same per-entry variance. Patch rows are `c` plus Gaussian
//! jitter.

use ndarray::{Array1, Array2};
use rand::Rng as _;
use rand_distr::StandardNormal;

use super::{
    AlignmentScores, AudioEmbedding, EmbeddingDataset, LayerStack, Segment, SegmentMeta, Split,
    VisualTokenGrid,
};
use crate::rng::{seeded, stream, Rng};
use crate::{Error, Result, CLIP_DIM};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MixingMap {
    /// Gaussian entries with variance `1/d_a`.
    Random,
    /// `G[i][j] = [i == j]`, zero-padded or truncated when `d_a != 1024`.
    Identity,
}

#[derive(Clone, Debug)]
pub struct SynthConfig {
    pub n_segments: usize,
    pub audio_dim: usize,
    pub patches: usize,
    /// Audio noise level in `[0, 1]`.
    pub noise: f64,
    pub seed: u64,
    pub map: MixingMap,
    /// Norm scale of the per-patch jitter.
    pub patch_noise: f64,
    /// Fraction of segments (taken from the end) labelled as test.
    pub test_fraction: f64,
    /// When non-zero, also emit `layers x seq_len x d_a` stacks whose rows
    /// are the audio embedding plus fresh noise.
    pub layers: usize,
    pub seq_len: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_segments: 1000,
            audio_dim: 512,
            patches: 576,
            noise: 0.2,
            seed: 0,
            map: MixingMap::Random,
            patch_noise: 1.0,
            test_fraction: 0.1,
            layers: 0,
            seq_len: 0,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.n_segments == 0 {
            return Err(Error::Config("n_segments must be at least 1".into()));
        }
        if self.audio_dim == 0 {
            return Err(Error::Config("d_a must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return Err(Error::Config(format!(
                "noise level {} outside [0, 1]",
                self.noise
            )));
        }
        if !(self.patch_noise >= 0.0 && self.patch_noise.is_finite()) {
            return Err(Error::Config("patch noise must be finite and >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.test_fraction) {
            return Err(Error::Config("test fraction outside [0, 1]".into()));
        }
        if (self.layers == 0) != (self.seq_len == 0) {
            return Err(Error::Config(
                "layers and seq_len must both be zero or both positive".into(),
            ));
        }
        Ok(())
    }
}

fn gaussian(rng: &mut Rng, n: usize, scale: f64) -> Array1<f64> {
    (0..n)
        .map(|_| rng.sample::<f64, _>(StandardNormal) * scale)
        .collect()
}

pub fn generate_synthetic(cfg: &SynthConfig) -> Result<EmbeddingDataset> {
    cfg.validate()?;
    let d_a = cfg.audio_dim;
    let entry_scale = (1.0 / d_a as f64).sqrt();

    let map = match cfg.map {
        MixingMap::Random => {
            let mut rng = seeded(cfg.seed, stream::SYNTH_MAP);
            let g = gaussian(&mut rng, d_a * CLIP_DIM, entry_scale);
            Some(
                g.into_shape_with_order((d_a, CLIP_DIM))
                    .expect("sized above"),
            )
        }
        MixingMap::Identity => None::<Array2<f64>>,
    };

    let n_test = (cfg.n_segments as f64 * cfg.test_fraction).round() as usize;
    let first_test = cfg.n_segments - n_test.min(cfg.n_segments);
    let patch_scale = cfg.patch_noise / (CLIP_DIM as f64).sqrt();

    let mut rng = seeded(cfg.seed, stream::SYNTH_SEGMENTS);
    let mut segments = Vec::with_capacity(cfg.n_segments);
    for i in 0..cfg.n_segments {
        let mut cls = gaussian(&mut rng, CLIP_DIM, 1.0);
        let norm = cls.dot(&cls).sqrt();
        cls /= norm;
        let cls: Array1<f64> = cls.mapv(|v| v as f32 as f64);

        let signal = match &map {
            Some(g) => g.dot(&cls),
            None => (0..d_a)
                .map(|j| if j < CLIP_DIM { cls[j] } else { 0.0 })
                .collect(),
        };
        let eps = gaussian(&mut rng, d_a, entry_scale);
        let audio: Vec<f32> = signal
            .iter()
            .zip(eps.iter())
            .map(|(s, e)| (s + cfg.noise * e) as f32)
            .collect();

        let mut tokens = Vec::with_capacity((cfg.patches + 1) * CLIP_DIM);
        tokens.extend(cls.iter().map(|&v| v as f32));
        for _ in 0..cfg.patches {
            let jitter = gaussian(&mut rng, CLIP_DIM, patch_scale);
            tokens.extend(cls.iter().zip(jitter.iter()).map(|(c, j)| (c + j) as f32));
        }

        let scores: [f32; 5] = std::array::from_fn(|_| rng.random_range(0.0f32..=10.0));

        let layers = if cfg.layers > 0 {
            let mut values = Vec::with_capacity(cfg.layers * cfg.seq_len * d_a);
            for _ in 0..cfg.layers * cfg.seq_len {
                let eta = gaussian(&mut rng, d_a, entry_scale);
                values.extend(
                    audio
                        .iter()
                        .zip(eta.iter())
                        .map(|(&a, e)| (a as f64 + cfg.noise * e) as f32),
                );
            }
            Some(LayerStack::new(cfg.layers, cfg.seq_len, d_a, values)?)
        } else {
            None
        };

        segments.push(Segment {
            meta: SegmentMeta {
                id: format!("syn-{i:06}"),
                alignment_scores: AlignmentScores::from_array(scores),
                split: if i >= first_test {
                    Split::Test
                } else {
                    Split::Train
                },
            },
            audio: Some(AudioEmbedding(audio)),
            layers,
            visual: Some(VisualTokenGrid::new(cfg.patches, tokens)?),
        });
    }
    EmbeddingDataset::new(segments)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SynthConfig {
        SynthConfig {
            n_segments: 8,
            audio_dim: 16,
            patches: 3,
            seed,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn zero_noise_identity_map_copies_cls() {
        let ds = generate_synthetic(&SynthConfig {
            n_segments: 4,
            audio_dim: CLIP_DIM,
            patches: 0,
            noise: 0.0,
            map: MixingMap::Identity,
            ..SynthConfig::default()
        })
        .unwrap();
        for s in ds.segments() {
            assert_eq!(
                s.audio.as_ref().unwrap().as_slice(),
                s.visual.as_ref().unwrap().cls()
            );
        }
    }

    #[test]
    fn seeded_determinism() {
        assert_eq!(
            generate_synthetic(&small(3)).unwrap(),
            generate_synthetic(&small(3)).unwrap()
        );
        assert_ne!(
            generate_synthetic(&small(3)).unwrap(),
            generate_synthetic(&small(4)).unwrap()
        );
    }

    #[test]
    fn cls_is_unit_norm_and_splits_assigned() {
        let ds = generate_synthetic(&SynthConfig {
            n_segments: 20,
            ..small(1)
        })
        .unwrap();
        for s in ds.segments() {
            let c = s.visual.as_ref().unwrap().cls();
            let n: f64 = c.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-5);
        }
        assert_eq!(ds.split(Split::Test).count(), 2);
        assert_eq!(ds.split(Split::Train).count(), 18);
    }

    #[test]
    fn rejects_bad_config() {
        for cfg in [
            SynthConfig {
                noise: 1.5,
                ..small(0)
            },
            SynthConfig {
                noise: -0.1,
                ..small(0)
            },
            SynthConfig {
                n_segments: 0,
                ..small(0)
            },
        ] {
            assert!(matches!(generate_synthetic(&cfg), Err(Error::Config(_))));
        }
    }

    #[test]
    fn optional_layer_stacks() {
        let ds = generate_synthetic(&SynthConfig {
            layers: 3,
            seq_len: 2,
            ..small(0)
        })
        .unwrap();
        let d = ds.dims();
        assert_eq!((d.layers, d.seq_len, d.width), (3, 2, 16));
    }
}
