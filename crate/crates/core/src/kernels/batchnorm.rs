//! Per-channel batch normalisation over `[N, C, ...]` activations.

use std::collections::BTreeMap;

use super::{LayerGrads, Mode};
use crate::error::{config_err, shape_err, Result};
use crate::tensor::Tensor;

/// Learnable affine parameters plus running statistics of one batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormParams {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNormParams {
    pub fn new(channels: usize) -> Self {
        BatchNormParams {
            gamma: Tensor::filled(&[channels], 1.0),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::filled(&[channels], 1.0),
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Folds the batch statistics recorded in `cache` into the running estimates.
    pub fn update_running(&mut self, cache: &BatchNormCache) {
        if cache.mode != Mode::Train {
            return;
        }
        let m = self.momentum;
        for (r, &b) in self
            .running_mean
            .data_mut()
            .iter_mut()
            .zip(&cache.batch_mean)
        {
            *r = (1.0 - m) * *r + m * b;
        }
        for (r, &b) in self
            .running_var
            .data_mut()
            .iter_mut()
            .zip(&cache.batch_var_unbiased)
        {
            *r = (1.0 - m) * *r + m * b;
        }
    }
}

/// State kept from the forward pass for the backward pass.
#[derive(Clone, Debug)]
pub struct BatchNormCache {
    pub x_hat: Tensor,
    pub inv_std: Vec<f64>,
    pub mode: Mode,
    pub batch_mean: Vec<f64>,
    pub batch_var_unbiased: Vec<f64>,
}

fn layout(x: &Tensor, channels: usize) -> Result<(usize, usize)> {
    let s = x.shape();
    if s.len() < 2 || s[1] != channels {
        return shape_err(format!(
            "batch norm over {channels} channels got input {s:?}"
        ));
    }
    Ok((s[0], s[2..].iter().product()))
}

/// Normalises each channel with batch statistics (train) or running statistics (eval), then applies `gamma`/`beta`.
pub fn batchnorm3d(
    x: &Tensor,
    p: &BatchNormParams,
    mode: Mode,
) -> Result<(Tensor, BatchNormCache)> {
    let c = p.channels();
    let (n, vol) = layout(x, c)?;
    let count = n * vol;
    if mode == Mode::Train && count < 2 {
        return config_err("batch norm training needs at least two values per channel");
    }
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    let mut unbiased = vec![0.0; c];
    match mode {
        Mode::Train => {
            for ch in 0..c {
                let mut s = 0.0;
                for b in 0..n {
                    s += x.data()[(b * c + ch) * vol..(b * c + ch + 1) * vol]
                        .iter()
                        .sum::<f64>();
                }
                let mu = s / count as f64;
                let mut ss = 0.0;
                for b in 0..n {
                    ss += x.data()[(b * c + ch) * vol..(b * c + ch + 1) * vol]
                        .iter()
                        .map(|v| (v - mu) * (v - mu))
                        .sum::<f64>();
                }
                mean[ch] = mu;
                var[ch] = ss / count as f64;
                unbiased[ch] = ss / (count - 1) as f64;
            }
        }
        Mode::Eval => {
            mean.copy_from_slice(p.running_mean.data());
            var.copy_from_slice(p.running_var.data());
        }
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + p.eps).sqrt()).collect();
    let mut x_hat = vec![0.0; x.len()];
    let mut y = vec![0.0; x.len()];
    for b in 0..n {
        for ch in 0..c {
            let r = (b * c + ch) * vol..(b * c + ch + 1) * vol;
            let (g, be) = (p.gamma.data()[ch], p.beta.data()[ch]);
            for i in r {
                let h = (x.data()[i] - mean[ch]) * inv_std[ch];
                x_hat[i] = h;
                y[i] = g * h + be;
            }
        }
    }
    let cache = BatchNormCache {
        x_hat: Tensor::new(x.shape().to_vec(), x_hat)?,
        inv_std,
        mode,
        batch_mean: mean,
        batch_var_unbiased: unbiased,
    };
    Ok((Tensor::new(x.shape().to_vec(), y)?, cache))
}

/// Gradients named `gamma` and `beta`.
pub fn batchnorm3d_backward(
    cache: &BatchNormCache,
    gamma: &Tensor,
    d_out: &Tensor,
) -> Result<LayerGrads> {
    let c = gamma.len();
    let (n, vol) = layout(d_out, c)?;
    if !cache.x_hat.same_shape(d_out) {
        return shape_err("batch norm upstream gradient shape mismatch");
    }
    let count = (n * vol) as f64;
    let xh = cache.x_hat.data();
    let dy = d_out.data();
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for b in 0..n {
        for ch in 0..c {
            for i in (b * c + ch) * vol..(b * c + ch + 1) * vol {
                dgamma[ch] += dy[i] * xh[i];
                dbeta[ch] += dy[i];
            }
        }
    }
    let mut dx = vec![0.0; d_out.len()];
    for b in 0..n {
        for ch in 0..c {
            let g = gamma.data()[ch];
            let is = cache.inv_std[ch];
            for i in (b * c + ch) * vol..(b * c + ch + 1) * vol {
                dx[i] = match cache.mode {
                    // sum(dxhat) = g*dbeta, sum(dxhat*xhat) = g*dgamma
                    Mode::Train => {
                        g * is / count * (count * dy[i] - dbeta[ch] - xh[i] * dgamma[ch])
                    }
                    Mode::Eval => g * is * dy[i],
                };
            }
        }
    }
    let mut d_params = BTreeMap::new();
    d_params.insert("gamma".to_string(), Tensor::vector(dgamma));
    d_params.insert("beta".to_string(), Tensor::vector(dbeta));
    Ok(LayerGrads {
        d_input: Tensor::new(d_out.shape().to_vec(), dx)?,
        d_params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    #[test]
    fn constant_input_maps_to_beta() {
        let mut p = BatchNormParams::new(2);
        p.beta = Tensor::filled(&[2], 0.3);
        let x = Tensor::filled(&[2, 2, 2, 3, 3], 4.2);
        let (y, _) = batchnorm3d(&x, &p, Mode::Train).unwrap();
        assert!(y.data().iter().all(|&v| (v - 0.3).abs() < 1e-12));
    }

    #[test]
    fn standardised_input_is_a_fixed_point() {
        // two values per channel: +1 and -1 have mean 0 and (biased) variance 1
        let x = Tensor::new(vec![2, 1, 1, 1, 1], vec![1.0, -1.0]).unwrap();
        let mut p = BatchNormParams::new(1);
        p.eps = 1e-8;
        let (y, _) = batchnorm3d(&x, &p, Mode::Train).unwrap();
        assert!(y.max_abs_diff(&x) < 1e-6);
    }

    #[test]
    fn random_input_is_standardised() {
        let mut r = crate::rng::stream(5, "test", 0);
        let x = Tensor::from_fn(&[3, 2, 2, 4, 4], |_| r.random_range(-10.0..10.0));
        let (y, _) = batchnorm3d(&x, &BatchNormParams::new(2), Mode::Train).unwrap();
        for ch in 0..2 {
            let vals: Vec<f64> = (0..3)
                .flat_map(|b| y.data()[(b * 2 + ch) * 32..(b * 2 + ch + 1) * 32].to_vec())
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-10);
            assert!((var - 1.0).abs() < 1e-6, "var {var}");
        }
    }

    #[test]
    fn running_stats_follow_momentum() {
        let x = Tensor::new(vec![2, 1, 1, 1, 1], vec![3.0, 5.0]).unwrap();
        let mut p = BatchNormParams::new(1);
        let (_, cache) = batchnorm3d(&x, &p, Mode::Train).unwrap();
        p.update_running(&cache);
        assert!((p.running_mean.data()[0] - 0.4).abs() < 1e-15);
        // unbiased variance of {3,5} is 2
        assert!((p.running_var.data()[0] - (0.9 + 0.2)).abs() < 1e-15);
    }
}
