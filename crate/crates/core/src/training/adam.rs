use crate::projection::ProjectionParams;

/// Bias-corrected Adam moments for a list of flat parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(sizes: &[usize]) -> Self {
        Self {
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn for_params<T>(params: &ProjectionParams<T>) -> Self {
        let sizes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
        Self::new(&sizes)
    }
}

/// One Adam update. Moments and arithmetic are `f64`; parameters stay `f32`.
pub fn adam_step(params: &mut [&mut [f32]], grads: &[&[f64]], state: &mut AdamState, lr: f64) {
    assert_eq!(params.len(), grads.len(), "parameter/gradient tensor count");
    assert_eq!(params.len(), state.m.len(), "parameter/moment tensor count");
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        assert_eq!(p.len(), g.len(), "parameter/gradient length");
        for i in 0..p.len() {
            let gi = g[i];
            m[i] = b1 * m[i] + (1.0 - b1) * gi;
            v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] = (p[i] as f64 - lr * m_hat / (v_hat.sqrt() + eps)) as f32;
        }
    }
}

pub fn adam_step_params(
    params: &mut ProjectionParams,
    grads: &ProjectionParams<f64>,
    state: &mut AdamState,
    lr: f64,
) {
    let mut p = params.tensors_mut();
    adam_step(&mut p, &grads.tensors(), state, lr);
}
