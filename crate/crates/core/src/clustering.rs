//! Feature clustering with the dynamic-weighted variance (DWV) loss.
//!
//! The K augmented embeddings of each sample are pulled toward their mean,
//! scaled by a weight that ramps linearly from zero between epochs `t1` and
//! `t2`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Encoder outputs arranged as (sample, augmentation pass, feature).
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    n: usize,
    k: usize,
    d: usize,
    data: Vec<f64>,
}

impl EmbeddingBatch {
    pub fn zeros(n: usize, k: usize, d: usize) -> Self {
        Self {
            n,
            k,
            d,
            data: vec![0.0; n * k * d],
        }
    }

    pub fn from_vec(n: usize, k: usize, d: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * k * d {
            return Err(Error::input(format!("embedding buffer has {} values, expected {n}x{k}x{d}", data.len())));
        }
        Ok(Self { n, k, d, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn get(&self, i: usize, k: usize) -> &[f64] {
        let at = (i * self.k + k) * self.d;
        &self.data[at..at + self.d]
    }

    pub fn get_mut(&mut self, i: usize, k: usize) -> &mut [f64] {
        let at = (i * self.k + k) * self.d;
        &mut self.data[at..at + self.d]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Per-sample mean over the K passes, `n x d`.
    pub fn means(&self) -> Vec<Vec<f64>> {
        (0..self.n)
            .map(|i| {
                let mut mu = vec![0.0; self.d];
                for k in 0..self.k {
                    for (m, z) in mu.iter_mut().zip(self.get(i, k)) {
                        *m += z;
                    }
                }
                mu.iter_mut().for_each(|m| *m /= self.k as f64);
                mu
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub t1: u32,
    pub t2: u32,
    pub alpha_f: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            t1: 30,
            t2: 150,
            alpha_f: 1.0,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t2 <= self.t1 {
            return Err(Error::config(format!("schedule needs t2 > t1, got t1={} t2={}", self.t1, self.t2)));
        }
        if !(self.alpha_f > 0.0) {
            return Err(Error::config(format!("alpha_f must be positive, got {}", self.alpha_f)));
        }
        Ok(())
    }
}

/// DWV weight at (0-based) epoch `t`: 0 before `t1`, a linear ramp up to
/// `alpha_f` at `t2`, then constant.
pub fn linear_schedule(t: u32, cfg: &ScheduleConfig) -> Result<f64> {
    cfg.validate()?;
    Ok(if t < cfg.t1 {
        0.0
    } else if t < cfg.t2 {
        cfg.alpha_f * f64::from(t - cfg.t1) / f64::from(cfg.t2 - cfg.t1)
    } else {
        cfg.alpha_f
    })
}

/// How the squared deviation is reduced over the feature dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DimReduce {
    /// Divide by `n * K * d`.
    Mean,
    /// Divide by `n * K`, summing over features.
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DwvOptions {
    pub dim_reduce: DimReduce,
    pub stop_mean_gradient: bool,
}

impl Default for DwvOptions {
    fn default() -> Self {
        Self {
            dim_reduce: DimReduce::Mean,
            stop_mean_gradient: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DwvLoss {
    pub loss: f64,
    pub grad: EmbeddingBatch,
}

/// Weighted mean squared deviation of each sample's K embeddings from their
/// mean, with its gradient w.r.t. every embedding.
///
/// The gradient through the mean is `-(1/K) * sum_k (z_k - mu)` per sample,
/// which is identically zero, so `stop_mean_gradient` only changes the
/// arithmetic path, not the result.
pub fn dwv_loss(batch: &EmbeddingBatch, weight: f64, opts: DwvOptions) -> Result<DwvLoss> {
    let (n, k, d) = (batch.n(), batch.k(), batch.d());
    if n == 0 || k == 0 || d == 0 {
        return Err(Error::input(format!("empty embedding batch ({n}x{k}x{d})")));
    }
    if !(weight >= 0.0) {
        return Err(Error::config(format!("dwv weight must be nonnegative, got {weight}")));
    }
    if batch.as_slice().iter().any(|z| !z.is_finite()) {
        return Err(Error::numeric("non-finite embedding"));
    }
    let denom = match opts.dim_reduce {
        DimReduce::Mean => (n * k * d) as f64,
        DimReduce::Sum => (n * k) as f64,
    };
    let means = batch.means();
    let mut grad = EmbeddingBatch::zeros(n, k, d);
    let mut total = 0.0;
    let coeff = 2.0 * weight / denom;
    for (i, mu) in means.iter().enumerate() {
        for kk in 0..k {
            let z = batch.get(i, kk);
            let g = grad.get_mut(i, kk);
            for f in 0..d {
                let dev = z[f] - mu[f];
                total += dev * dev;
                g[f] = coeff * dev;
            }
        }
        if !opts.stop_mean_gradient {
            // chain rule through mu: every pass receives -(1/K) of the summed
            // deviation gradient
            let mut through_mean = vec![0.0; d];
            for kk in 0..k {
                for (t, dev) in through_mean.iter_mut().zip(batch.get(i, kk).iter().zip(mu)) {
                    *t += coeff * (dev.0 - dev.1);
                }
            }
            for kk in 0..k {
                for (g, t) in grad.get_mut(i, kk).iter_mut().zip(&through_mean) {
                    *g -= t / k as f64;
                }
            }
        }
    }
    Ok(DwvLoss {
        loss: weight * total / denom,
        grad,
    })
}
