//! Symmetric InfoNCE over L2-normalized rows plus a first/second moment
//! matching penalty on the unnormalized rows.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::{Error, Result};

/// Temperature and distribution-matching weight of the combined objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Objective {
    pub tau: f64,
    pub lambda: f64,
}

impl Default for Objective {
    fn default() -> Self {
        Self {
            tau: 0.07,
            lambda: 0.02,
        }
    }
}

impl Objective {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("tau must be > 0, got {}", self.tau)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// Per-dimension batch mean and population standard deviation.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mu: Array1<f64>,
    pub sigma: Array1<f64>,
}

impl BatchStats {
    pub fn of(x: ArrayView2<'_, f64>) -> Self {
        let n = x.nrows() as f64;
        let mu = x.sum_axis(Axis(0)) / n;
        let centered = &x - &mu;
        let sigma = ((&centered * &centered).sum_axis(Axis(0)) / n).mapv(f64::sqrt);
        Self { mu, sigma }
    }
}

fn check_pair(f: ArrayView2<'_, f64>, c: ArrayView2<'_, f64>) -> Result<()> {
    if f.dim() != c.dim() {
        return Err(Error::Shape(format!(
            "audio batch {:?} vs visual batch {:?}",
            f.dim(),
            c.dim()
        )));
    }
    if f.nrows() == 0 {
        return Err(Error::Shape("empty batch".into()));
    }
    Ok(())
}

fn normalize_rows(x: ArrayView2<'_, f64>) -> (Array2<f64>, Array1<f64>) {
    let norms: Array1<f64> = x.outer_iter().map(|r| r.dot(&r).sqrt()).collect();
    let mut u = x.to_owned();
    for (mut row, &n) in u.outer_iter_mut().zip(norms.iter()) {
        if n > 0.0 {
            row /= n;
        }
    }
    (u, norms)
}

fn log_sum_exp<'a>(values: impl Iterator<Item = &'a f64> + Clone) -> f64 {
    let m = values.clone().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    m + values.map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Loss and gradient with respect to the unnormalized audio rows.
pub fn info_nce_with_grad(
    f: ArrayView2<'_, f64>,
    c: ArrayView2<'_, f64>,
    tau: f64,
) -> Result<(f64, Array2<f64>)> {
    check_pair(f, c)?;
    if tau.is_nan() || tau <= 0.0 {
        return Err(Error::Config(format!("tau must be > 0, got {tau}")));
    }
    let b = f.nrows();
    let (u, norms) = normalize_rows(f);
    let (w, _) = normalize_rows(c);
    let logits = u.dot(&w.t()) / tau;

    let row_lse: Vec<f64> = logits.outer_iter().map(|r| log_sum_exp(r.iter())).collect();
    let col_lse: Vec<f64> = logits
        .axis_iter(Axis(1))
        .map(|col| log_sum_exp(col.iter()))
        .collect();
    let mut sum = 0.0;
    for i in 0..b {
        let s = logits[[i, i]];
        sum += (s - row_lse[i]) + (s - col_lse[i]);
    }
    // A batch of one sums to exactly zero; keep the sign positive.
    let loss = if sum == 0.0 {
        0.0
    } else {
        -sum / (2.0 * b as f64)
    };

    // dL/dS = (P_row + P_col - 2I) / 2B
    let mut d_logits = Array2::zeros((b, b));
    for i in 0..b {
        for j in 0..b {
            let s = logits[[i, j]];
            let mut g = (s - row_lse[i]).exp() + (s - col_lse[j]).exp();
            if i == j {
                g -= 2.0;
            }
            d_logits[[i, j]] = g / (2.0 * b as f64);
        }
    }
    let d_u = d_logits.dot(&w) / tau;
    let mut grad = Array2::zeros(f.dim());
    for i in 0..b {
        if norms[i] == 0.0 {
            continue;
        }
        let ui = u.row(i);
        let du = d_u.row(i);
        let proj = ui.dot(&du);
        let mut g = grad.row_mut(i);
        for ((gk, &uk), &dk) in g.iter_mut().zip(ui.iter()).zip(du.iter()) {
            *gk = (dk - uk * proj) / norms[i];
        }
    }
    Ok((loss, grad))
}

pub fn info_nce(f: ArrayView2<'_, f64>, c: ArrayView2<'_, f64>, tau: f64) -> Result<f64> {
    Ok(info_nce_with_grad(f, c, tau)?.0)
}

/// Loss and gradient with respect to the audio rows.
pub fn dist_match_with_grad(
    f: ArrayView2<'_, f64>,
    c: ArrayView2<'_, f64>,
    lambda: f64,
) -> Result<(f64, Array2<f64>)> {
    check_pair(f, c)?;
    let b = f.nrows();
    if b < 2 {
        return Err(Error::BatchTooSmall(b));
    }
    let a = BatchStats::of(f);
    let v = BatchStats::of(c);
    let d_mu = &a.mu - &v.mu;
    let d_sigma = &a.sigma - &v.sigma;
    let loss = lambda * (d_mu.dot(&d_mu) + d_sigma.dot(&d_sigma));

    let bf = b as f64;
    let mut grad = Array2::zeros(f.dim());
    for (mut g, row) in grad.outer_iter_mut().zip(f.outer_iter()) {
        for k in 0..row.len() {
            let mut gk = 2.0 * d_mu[k] / bf;
            if a.sigma[k] > 0.0 {
                gk += 2.0 * d_sigma[k] * (row[k] - a.mu[k]) / (bf * a.sigma[k]);
            }
            g[k] = lambda * gk;
        }
    }
    Ok((loss, grad))
}

pub fn dist_match(f: ArrayView2<'_, f64>, c: ArrayView2<'_, f64>, lambda: f64) -> Result<f64> {
    Ok(dist_match_with_grad(f, c, lambda)?.0)
}

/// InfoNCE plus distribution matching. With `lambda = 0` the second term is
/// skipped, so single-row batches are accepted.
pub fn total_loss_with_grad(
    f: ArrayView2<'_, f64>,
    c: ArrayView2<'_, f64>,
    objective: Objective,
) -> Result<(f64, Array2<f64>)> {
    objective.validate()?;
    let (nce, mut grad) = info_nce_with_grad(f, c, objective.tau)?;
    if objective.lambda == 0.0 {
        return Ok((nce, grad));
    }
    let (dist, dist_grad) = dist_match_with_grad(f, c, objective.lambda)?;
    grad += &dist_grad;
    Ok((nce + dist, grad))
}

pub fn total_loss(
    f: ArrayView2<'_, f64>,
    c: ArrayView2<'_, f64>,
    objective: Objective,
) -> Result<f64> {
    Ok(total_loss_with_grad(f, c, objective)?.0)
}
