//! Coordinate-based neural-network denoiser: a small MLP maps (t, x[, y]) to u.

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{FieldSeries, Provenance};
use crate::rng;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Sigmoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    /// Plain gradient descent with a fixed learning rate.
    Gd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenoiserConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub train_fraction: f64,
    /// Epochs without validation improvement before training stops.
    pub patience: usize,
    pub max_epochs: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    /// Minibatch size; 0 trains on the full training split each step.
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig {
            hidden: vec![32, 32, 32],
            activation: Activation::Tanh,
            train_fraction: 0.8,
            patience: 50,
            max_epochs: 600,
            learning_rate: 2e-3,
            optimizer: Optimizer::Adam,
            batch_size: 256,
            seed: 0,
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self, samples: usize) -> Result<()> {
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::Config(
                "the denoiser needs at least one non-empty hidden layer".into(),
            ));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train fraction {} outside (0, 1)",
                self.train_fraction
            )));
        }
        let train = (self.train_fraction * samples as f64).round() as usize;
        if train == 0 || train >= samples {
            return Err(Error::Config(
                "train fraction leaves an empty training or validation split".into(),
            ));
        }
        if !(self.learning_rate > 0.0) || self.max_epochs == 0 {
            return Err(Error::Config(
                "learning rate and max epochs must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Outcome of a training run.
#[derive(Debug, Clone)]
pub struct DenoiseReport {
    pub epochs: usize,
    pub best_epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
}

struct Layer {
    w: Array2<f64>,
    b: Array1<f64>,
}

struct Moments {
    mw: Array2<f64>,
    vw: Array2<f64>,
    mb: Array1<f64>,
    vb: Array1<f64>,
}

struct Mlp {
    layers: Vec<Layer>,
    act: Activation,
}

impl Mlp {
    fn new(inputs: usize, hidden: &[usize], act: Activation, r: &mut rng::Rng) -> Self {
        let mut sizes = vec![inputs];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let layers = sizes
            .windows(2)
            .map(|w| {
                // Glorot-uniform initialisation.
                let lim = (6.0 / (w[0] + w[1]) as f64).sqrt();
                let w_mat = Array2::from_shape_fn((w[0], w[1]), |_| r.gen_range(-lim..lim));
                Layer {
                    w: w_mat,
                    b: Array1::zeros(w[1]),
                }
            })
            .collect();
        Mlp { layers, act }
    }

    fn activate(&self, z: &mut Array2<f64>) {
        match self.act {
            Activation::Tanh => z.mapv_inplace(f64::tanh),
            Activation::Sigmoid => z.mapv_inplace(|v| 1.0 / (1.0 + (-v).exp())),
        }
    }

    /// Derivative of the activation expressed through its output.
    fn activation_slope(&self, a: f64) -> f64 {
        match self.act {
            Activation::Tanh => 1.0 - a * a,
            Activation::Sigmoid => a * (1.0 - a),
        }
    }

    /// Returns the activations of every layer (input first, output last).
    fn forward(&self, x: &Array2<f64>) -> Vec<Array2<f64>> {
        let mut acts = vec![x.clone()];
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = acts[l].dot(&layer.w) + &layer.b;
            if l != last {
                self.activate(&mut z);
            }
            acts.push(z);
        }
        acts
    }

    fn predict(&self, x: &Array2<f64>) -> Array1<f64> {
        self.forward(x).pop().unwrap().column(0).to_owned()
    }

    /// Mean squared error and its gradients for one batch.
    fn gradients(
        &self,
        x: &Array2<f64>,
        y: &Array1<f64>,
    ) -> (f64, Vec<(Array2<f64>, Array1<f64>)>) {
        let acts = self.forward(x);
        let out = acts.last().unwrap();
        let n = x.nrows() as f64;
        let resid = &out.column(0) - y;
        let loss = resid.mapv(|v| v * v).sum() / n;
        let mut dz = resid.insert_axis(Axis(1)).mapv(|v| 2.0 * v / n);
        let mut grads = Vec::with_capacity(self.layers.len());
        for l in (0..self.layers.len()).rev() {
            let gw = acts[l].t().dot(&dz);
            let gb = dz.sum_axis(Axis(0));
            if l > 0 {
                let mut da = dz.dot(&self.layers[l].w.t());
                da.zip_mut_with(&acts[l], |d, &a| *d *= self.activation_slope(a));
                dz = da;
            }
            grads.push((gw, gb));
        }
        grads.reverse();
        (loss, grads)
    }

    fn loss(&self, x: &Array2<f64>, y: &Array1<f64>) -> f64 {
        let p = self.predict(x);
        (&p - y).mapv(|v| v * v).mean().unwrap_or(f64::NAN)
    }

    fn snapshot(&self) -> Vec<(Array2<f64>, Array1<f64>)> {
        self.layers
            .iter()
            .map(|l| (l.w.clone(), l.b.clone()))
            .collect()
    }

    fn restore(&mut self, s: Vec<(Array2<f64>, Array1<f64>)>) {
        for (l, (w, b)) in self.layers.iter_mut().zip(s) {
            l.w = w;
            l.b = b;
        }
    }
}

fn scaled_coordinates<T: Real>(field: &FieldSeries<T>) -> Array2<f64> {
    let g = &field.grid;
    let scale = |v: f64, lo: f64, hi: f64| {
        if hi > lo {
            2.0 * (v - lo) / (hi - lo) - 1.0
        } else {
            0.0
        }
    };
    let ts = g.t_coords();
    let xs = g.x_coords();
    let ys = if g.is_2d() { g.y_coords() } else { vec![0.0] };
    let (x_lo, x_hi) = (xs[0], xs[xs.len() - 1]);
    let (y_lo, y_hi) = (ys[0], ys[ys.len() - 1]);
    let dims = if g.is_2d() { 3 } else { 2 };
    let mut a = Array2::zeros((g.len(), dims));
    let mut row = 0;
    for &t in &ts {
        for &y in &ys {
            for &x in &xs {
                a[[row, 0]] = scale(t, g.t.min, g.t.max);
                a[[row, 1]] = scale(x, x_lo, x_hi);
                if dims == 3 {
                    a[[row, 2]] = scale(y, y_lo, y_hi);
                }
                row += 1;
            }
        }
    }
    a
}

/// Fits the MLP to the noisy field with early stopping on a random validation
/// split and returns its prediction on the full grid.
pub fn denoise<T: Real>(
    noisy: &FieldSeries<T>,
    cfg: &DenoiserConfig,
) -> Result<(FieldSeries<T>, DenoiseReport)> {
    let n = noisy.values.len();
    cfg.validate(n)?;
    let mean = noisy.mean().as_f64();
    let std = noisy.std().as_f64();
    let std = if std > 0.0 { std } else { 1.0 };
    let coords = scaled_coordinates(noisy);
    let target = Array1::from_iter(noisy.values.iter().map(|v| (v.as_f64() - mean) / std));

    let mut r = rng::seeded(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut r);
    let n_train = (cfg.train_fraction * n as f64).round() as usize;
    let (train_idx, val_idx) = order.split_at(n_train);
    let xt = coords.select(Axis(0), train_idx);
    let yt = target.select(Axis(0), train_idx);
    let xv = coords.select(Axis(0), val_idx);
    let yv = target.select(Axis(0), val_idx);

    let mut net = Mlp::new(coords.ncols(), &cfg.hidden, cfg.activation, &mut r);
    let mut moments: Vec<Moments> = net
        .layers
        .iter()
        .map(|l| Moments {
            mw: Array2::zeros(l.w.dim()),
            vw: Array2::zeros(l.w.dim()),
            mb: Array1::zeros(l.b.len()),
            vb: Array1::zeros(l.b.len()),
        })
        .collect();
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let mut step = 0i32;
    let batch = if cfg.batch_size == 0 {
        n_train
    } else {
        cfg.batch_size.min(n_train)
    };

    let mut best = (f64::INFINITY, 0usize, net.snapshot());
    let mut train_loss = f64::NAN;
    let mut epochs = 0;
    let mut perm: Vec<usize> = (0..n_train).collect();
    for epoch in 0..cfg.max_epochs {
        epochs = epoch + 1;
        if batch < n_train {
            perm.shuffle(&mut r);
        }
        let mut acc = 0.0;
        for chunk in perm.chunks(batch) {
            let (loss, grads) = if batch == n_train {
                net.gradients(&xt, &yt)
            } else {
                net.gradients(&xt.select(Axis(0), chunk), &yt.select(Axis(0), chunk))
            };
            if !loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "denoiser loss became non-finite at epoch {epoch}; lower the learning rate"
                )));
            }
            acc += loss * chunk.len() as f64;
            step += 1;
            let lr = cfg.learning_rate;
            for ((layer, m), (gw, gb)) in net.layers.iter_mut().zip(&mut moments).zip(grads) {
                match cfg.optimizer {
                    Optimizer::Gd => {
                        layer.w.scaled_add(-lr, &gw);
                        layer.b.scaled_add(-lr, &gb);
                    }
                    Optimizer::Adam => {
                        let c1 = 1.0 - b1.powi(step);
                        let c2 = 1.0 - b2.powi(step);
                        m.mw.zip_mut_with(&gw, |a, &g| *a = b1 * *a + (1.0 - b1) * g);
                        m.vw.zip_mut_with(&gw, |a, &g| *a = b2 * *a + (1.0 - b2) * g * g);
                        m.mb.zip_mut_with(&gb, |a, &g| *a = b1 * *a + (1.0 - b1) * g);
                        m.vb.zip_mut_with(&gb, |a, &g| *a = b2 * *a + (1.0 - b2) * g * g);
                        ndarray::Zip::from(&mut layer.w)
                            .and(&m.mw)
                            .and(&m.vw)
                            .for_each(|w, &mm, &vv| {
                                *w -= lr * (mm / c1) / ((vv / c2).sqrt() + eps)
                            });
                        ndarray::Zip::from(&mut layer.b)
                            .and(&m.mb)
                            .and(&m.vb)
                            .for_each(|w, &mm, &vv| {
                                *w -= lr * (mm / c1) / ((vv / c2).sqrt() + eps)
                            });
                    }
                }
            }
        }
        train_loss = acc / n_train as f64;
        let val = net.loss(&xv, &yv);
        if !val.is_finite() {
            return Err(Error::Numerical(format!(
                "denoiser validation loss became non-finite at epoch {epoch}"
            )));
        }
        if val < best.0 {
            best = (val, epoch, net.snapshot());
        } else if epoch - best.1 >= cfg.patience {
            break;
        }
    }
    let (val_loss, best_epoch, params) = best;
    net.restore(params);
    let pred = net.predict(&coords);
    let values = pred.iter().map(|&p| T::of(p * std + mean)).collect();
    let mut out = FieldSeries::new(noisy.grid, values, Provenance::Denoised)?;
    out.meta = noisy.meta.clone();
    Ok((
        out,
        DenoiseReport {
            epochs,
            best_epoch: best_epoch + 1,
            train_loss: train_loss * std * std,
            validation_loss: val_loss * std * std,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradients_match_finite_differences() {
        let mut r = rng::seeded(3);
        let net = Mlp::new(2, &[5, 4], Activation::Tanh, &mut r);
        let x = Array2::from_shape_fn((7, 2), |(i, j)| ((i * 3 + j) as f64 * 0.37).sin());
        let y = Array1::from_shape_fn(7, |i| (i as f64 * 0.5).cos());
        let (_, grads) = net.gradients(&x, &y);
        let mut net = net;
        let h = 1e-6;
        for l in 0..net.layers.len() {
            for idx in [(0usize, 0usize), (1, 0)] {
                if idx.0 >= net.layers[l].w.nrows() {
                    continue;
                }
                let orig = net.layers[l].w[idx];
                net.layers[l].w[idx] = orig + h;
                let lp = net.loss(&x, &y);
                net.layers[l].w[idx] = orig - h;
                let lm = net.loss(&x, &y);
                net.layers[l].w[idx] = orig;
                let fd = (lp - lm) / (2.0 * h);
                assert!(
                    (fd - grads[l].0[idx]).abs() < 1e-6,
                    "layer {l} {idx:?}: {fd} vs {}",
                    grads[l].0[idx]
                );
            }
            let orig = net.layers[l].b[0];
            net.layers[l].b[0] = orig + h;
            let lp = net.loss(&x, &y);
            net.layers[l].b[0] = orig - h;
            let lm = net.loss(&x, &y);
            net.layers[l].b[0] = orig;
            assert!(((lp - lm) / (2.0 * h) - grads[l].1[0]).abs() < 1e-6);
        }
    }
}
