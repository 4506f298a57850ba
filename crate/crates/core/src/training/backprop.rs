//! Analytic gradients of the combined objective through the projection head.

use ndarray::{Array2, ArrayView2, Axis};

use super::loss::{total_loss, total_loss_with_grad, Objective};
use crate::projection::{
    forward::layer_norm_backward, forward_batch, gelu_grad, DropoutMasks, ProjectionParams,
};
use crate::rng::Rng;
use crate::{Error, Result, CLIP_DIM};

/// A mini-batch of audio embeddings and their paired CLS tokens.
#[derive(Clone, Copy, Debug)]
pub struct Batch<'a> {
    pub audio: ArrayView2<'a, f64>,
    pub cls: ArrayView2<'a, f64>,
}

impl Batch<'_> {
    fn check(&self, params: &ProjectionParams<f64>) -> Result<()> {
        if self.audio.ncols() != params.audio_dim() {
            return Err(Error::Shape(format!(
                "audio width {} != d_a {}",
                self.audio.ncols(),
                params.audio_dim()
            )));
        }
        if self.cls.ncols() != CLIP_DIM || self.cls.nrows() != self.audio.nrows() {
            return Err(Error::Shape(format!(
                "cls batch {:?} does not pair with {} audio rows",
                self.cls.dim(),
                self.audio.nrows()
            )));
        }
        Ok(())
    }
}

/// Objective value for fixed dropout masks (`None` = inference).
pub fn batch_loss(
    params: &ProjectionParams<f64>,
    batch: Batch<'_>,
    objective: Objective,
    masks: Option<&DropoutMasks>,
) -> Result<f64> {
    batch.check(params)?;
    let cache = forward_batch(params, batch.audio, masks);
    total_loss(cache.output.view(), batch.cls, objective)
}

/// Objective value and its gradient with respect to every parameter tensor.
pub fn batch_loss_and_gradients(
    params: &ProjectionParams<f64>,
    batch: Batch<'_>,
    objective: Objective,
    masks: Option<&DropoutMasks>,
) -> Result<(f64, ProjectionParams<f64>)> {
    batch.check(params)?;
    let cache = forward_batch(params, batch.audio, masks);
    let (loss, d_out) = total_loss_with_grad(cache.output.view(), batch.cls, objective)?;
    let mut g = ProjectionParams::<f64>::zeros(params.config());

    g.w3 = d_out.t().dot(&cache.hidden2);
    g.b3 = d_out.sum_axis(Axis(0));
    let mut d_h2 = d_out.dot(&params.w3);
    if let Some(m) = masks {
        d_h2 *= &m.second;
    }
    let d_n2: Array2<f64> = d_h2 * &cache.pre_act2.mapv(gelu_grad);
    let d_a2 = layer_norm_backward(
        &d_n2,
        &cache.ln2,
        &params.ln2_gain,
        &mut g.ln2_gain,
        &mut g.ln2_bias,
    );

    g.w2 = d_a2.t().dot(&cache.hidden1);
    g.b2 = d_a2.sum_axis(Axis(0));
    let mut d_h1 = d_a2.dot(&params.w2);
    if let Some(m) = masks {
        d_h1 *= &m.first;
    }
    let d_n1: Array2<f64> = d_h1 * &cache.pre_act1.mapv(gelu_grad);
    let d_a1 = layer_norm_backward(
        &d_n1,
        &cache.ln1,
        &params.ln1_gain,
        &mut g.ln1_gain,
        &mut g.ln1_bias,
    );

    g.w1 = d_a1.t().dot(&batch.audio);
    g.b1 = d_a1.sum_axis(Axis(0));
    Ok((loss, g))
}

/// Samples dropout masks from `rng` (using the parameters' dropout rate),
/// then differentiates the objective with those masks held fixed.
pub fn loss_gradients(
    params: &ProjectionParams,
    batch: Batch<'_>,
    objective: Objective,
    rng: &mut Rng,
) -> Result<(f64, ProjectionParams<f64>)> {
    let cfg = params.config();
    let masks = DropoutMasks::sample(rng, batch.audio.nrows(), cfg.hidden, cfg.dropout);
    batch_loss_and_gradients(&params.to_f64(), batch, objective, Some(&masks))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::projection::{init_projection, ProjectionConfig};
    use crate::rng::seeded;
    use rand::Rng as _;

    #[test]
    fn single_row_without_dist_term_has_zero_gradients() {
        let p = init_projection(ProjectionConfig::new(6), 0).unwrap();
        let mut rng = seeded(1, 0);
        let audio = Array2::from_shape_fn((1, 6), |_| rng.random::<f64>());
        let cls = Array2::from_shape_fn((1, CLIP_DIM), |_| rng.random::<f64>());
        let obj = Objective {
            tau: 0.07,
            lambda: 0.0,
        };
        let (loss, g) = loss_gradients(
            &p,
            Batch {
                audio: audio.view(),
                cls: cls.view(),
            },
            obj,
            &mut rng,
        )
        .unwrap();
        assert_eq!(loss, 0.0);
        for t in g.tensors() {
            assert!(t.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn shape_errors() {
        let p = init_projection(ProjectionConfig::new(6), 0)
            .unwrap()
            .to_f64();
        let audio = Array2::zeros((2, 5));
        let cls = Array2::zeros((2, CLIP_DIM));
        let batch = Batch {
            audio: audio.view(),
            cls: cls.view(),
        };
        assert!(matches!(
            batch_loss(&p, batch, Objective::default(), None),
            Err(Error::Shape(_))
        ));
    }
}
