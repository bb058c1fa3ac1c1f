use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::{domain, make_stream};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Weight of the squared-weight penalty (biases excluded), in
    /// standardized units.
    pub ridge: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1000,
            batch_size: 512,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            ridge: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer<T> {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs x inputs`.
    pub w: Vec<T>,
    pub b: Vec<T>,
}

/// Softplus network with identity output and built-in standardization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp<T> {
    pub layers: Vec<Layer<T>>,
    pub x_shift: Vec<T>,
    pub x_scale: Vec<T>,
    pub y_shift: T,
    pub y_scale: T,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainReport {
    /// Mean squared error of the last epoch, label units squared.
    pub final_loss: f64,
    pub epochs: usize,
}

#[inline]
fn softplus<T: Scalar>(z: T) -> T {
    z.max(T::zero()) + (-z.abs()).exp().ln_1p()
}

#[inline]
fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

impl<T: Scalar> Mlp<T> {
    /// Fresh network: hidden layers uniform in `+-1/sqrt(fan_in)`, output
    /// layer zero, identity standardization.
    pub fn new(inputs: usize, hidden: &[usize], seed: u64) -> Self {
        let mut s = make_stream(seed, domain::TRAINING);
        let mut sizes = vec![inputs];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(l, w)| {
                let (ni, no) = (w[0], w[1]);
                let bound = 1.0 / (ni.max(1) as f64).sqrt();
                let weights = (0..ni * no)
                    .map(|_| {
                        if l == last {
                            T::zero()
                        } else {
                            T::of(bound * (2.0 * s.uniform() - 1.0))
                        }
                    })
                    .collect();
                Layer {
                    inputs: ni,
                    outputs: no,
                    w: weights,
                    b: vec![T::zero(); no],
                }
            })
            .collect();
        Self {
            layers,
            x_shift: vec![T::zero(); inputs],
            x_scale: vec![T::one(); inputs],
            y_shift: T::zero(),
            y_scale: T::one(),
        }
    }

    pub fn inputs(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Forward pass in standardized units, keeping post-activations.
    fn forward_cached(&self, z0: &[T], acts: &mut Vec<Vec<T>>, pre: &mut Vec<Vec<T>>) -> T {
        acts.resize(self.layers.len() + 1, Vec::new());
        pre.resize(self.layers.len(), Vec::new());
        acts[0].clear();
        acts[0].extend_from_slice(z0);
        let nl = self.layers.len();
        for (l, layer) in self.layers.iter().enumerate() {
            let (head, tail) = acts.split_at_mut(l + 1);
            let inp = &head[l];
            let out = &mut tail[0];
            out.resize(layer.outputs, T::zero());
            let pz = &mut pre[l];
            pz.resize(layer.outputs, T::zero());
            for o in 0..layer.outputs {
                let row = &layer.w[o * layer.inputs..(o + 1) * layer.inputs];
                let mut z = layer.b[o];
                for (wi, xi) in row.iter().zip(inp.iter()) {
                    z += *wi * *xi;
                }
                pz[o] = z;
                out[o] = if l + 1 == nl { z } else { softplus(z) };
            }
        }
        acts[nl][0]
    }

    fn standardize(&self, x: &[T]) -> Vec<T> {
        x.iter()
            .zip(&self.x_shift)
            .zip(&self.x_scale)
            .map(|((&v, &s), &c)| (v - s) / c)
            .collect()
    }

    pub fn predict(&self, x: &[T]) -> T {
        let z0 = self.standardize(x);
        let (mut a, mut p) = (Vec::new(), Vec::new());
        self.y_shift + self.y_scale * self.forward_cached(&z0, &mut a, &mut p)
    }

    pub fn predict_rows(&self, x: &Matrix<T>) -> Vec<T> {
        (0..x.rows()).map(|i| self.predict(x.row(i))).collect()
    }

    /// Backpropagates `d output / d (last pre-activation) = 1` through the
    /// cached pass; returns the gradient with respect to the standardized
    /// input and, when `grads` is given, accumulates `scale *` parameter
    /// gradients into it (same layout as [`Mlp::flat_params`]).
    fn backward(&self, acts: &[Vec<T>], pre: &[Vec<T>], scale: T, mut grads: Option<&mut [T]>) -> Vec<T> {
        let nl = self.layers.len();
        let mut delta = vec![T::one()];
        let mut offsets = Vec::with_capacity(nl);
        let mut off = 0;
        for layer in &self.layers {
            offsets.push(off);
            off += layer.w.len() + layer.b.len();
        }
        for l in (0..nl).rev() {
            let layer = &self.layers[l];
            if let Some(g) = grads.as_deref_mut() {
                let base = offsets[l];
                let inp = &acts[l];
                for o in 0..layer.outputs {
                    let d = delta[o] * scale;
                    if d == T::zero() {
                        continue;
                    }
                    let row = &mut g[base + o * layer.inputs..base + (o + 1) * layer.inputs];
                    for (gi, xi) in row.iter_mut().zip(inp.iter()) {
                        *gi += d * *xi;
                    }
                    g[base + layer.w.len() + o] += d;
                }
            }
            let mut prev = vec![T::zero(); layer.inputs];
            for o in 0..layer.outputs {
                let d = delta[o];
                if d == T::zero() {
                    continue;
                }
                let row = &layer.w[o * layer.inputs..(o + 1) * layer.inputs];
                for (pi, wi) in prev.iter_mut().zip(row) {
                    *pi += d * *wi;
                }
            }
            if l > 0 {
                for (pi, &z) in prev.iter_mut().zip(&pre[l - 1]) {
                    *pi *= sigmoid(z);
                }
            }
            delta = prev;
        }
        delta
    }

    /// Exact gradient of the (unstandardized) output in raw input units.
    pub fn input_gradient(&self, x: &[T]) -> Vec<T> {
        let z0 = self.standardize(x);
        let (mut a, mut p) = (Vec::new(), Vec::new());
        self.forward_cached(&z0, &mut a, &mut p);
        let g = self.backward(&a, &p, T::one(), None);
        g.iter().zip(&self.x_scale).map(|(&gi, &s)| self.y_scale * gi / s).collect()
    }

    pub fn flat_params(&self) -> Vec<T> {
        let mut v = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            v.extend_from_slice(&l.w);
            v.extend_from_slice(&l.b);
        }
        v
    }

    fn set_flat_params(&mut self, v: &[T]) {
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.w.len();
            l.w.copy_from_slice(&v[off..off + nw]);
            off += nw;
            let nb = l.b.len();
            l.b.copy_from_slice(&v[off..off + nb]);
            off += nb;
        }
    }

    /// Mask of the flattened parameters that are weights (ridge applies).
    fn weight_mask(&self) -> Vec<bool> {
        let mut v = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            v.extend(std::iter::repeat_n(true, l.w.len()));
            v.extend(std::iter::repeat_n(false, l.b.len()));
        }
        v
    }
}

fn column_moments<T: Scalar>(x: &Matrix<T>) -> (Vec<T>, Vec<T>) {
    let (m, k) = (x.rows(), x.cols());
    let mf = T::of_usize(m);
    let mut shift = vec![T::zero(); k];
    for i in 0..m {
        for (s, &v) in shift.iter_mut().zip(x.row(i)) {
            *s += v;
        }
    }
    shift.iter_mut().for_each(|s| *s /= mf);
    let mut ss = vec![T::zero(); k];
    for i in 0..m {
        for ((a, &v), &s) in ss.iter_mut().zip(x.row(i)).zip(&shift) {
            *a += (v - s) * (v - s);
        }
    }
    let scale = ss
        .into_iter()
        .map(|a| {
            let sd = (a / mf).sqrt();
            if sd > T::zero() && sd.is_finite() {
                sd
            } else {
                T::one()
            }
        })
        .collect();
    (shift, scale)
}

/// Trains a softplus network on `features` / `labels` by Adam on the
/// mean squared error plus ridge, reshuffling mini-batches every epoch.
pub fn fit_mlp<T: Scalar>(
    features: &Matrix<T>,
    labels: &[T],
    hidden: &[usize],
    cfg: &TrainConfig,
) -> Result<(Mlp<T>, TrainReport)> {
    let (m, k) = (features.rows(), features.cols());
    if labels.len() != m || m == 0 {
        return Err(Error::Dimension(format!("{m} feature rows against {} labels", labels.len())));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(Error::Config("epochs and batch size must be at least 1".into()));
    }
    if features.as_slice().iter().chain(labels).any(|v| !v.is_finite()) {
        return Err(Error::Config("non-finite training data".into()));
    }
    let mut net = Mlp::new(k, hidden, cfg.seed);
    let (xs, xc) = column_moments(features);
    net.x_shift = xs;
    net.x_scale = xc;
    let ym = Matrix::from_vec(m, 1, labels.to_vec());
    let (ys, yc) = column_moments(&ym);
    net.y_shift = ys[0];
    net.y_scale = yc[0];
    let z: Vec<Vec<T>> = (0..m).map(|i| net.standardize(features.row(i))).collect();
    let t: Vec<T> = labels.iter().map(|&v| (v - net.y_shift) / net.y_scale).collect();

    let np = net.param_count();
    let mask = net.weight_mask();
    let mut theta = net.flat_params();
    let mut m1 = vec![0.0f64; np];
    let mut m2 = vec![0.0f64; np];
    let mut grad = vec![T::zero(); np];
    let mut order: Vec<usize> = (0..m).collect();
    let mut shuffler = make_stream(cfg.seed, domain::TRAINING | 1);
    let (mut acts, mut pre) = (Vec::new(), Vec::new());
    let mut step = 0i32;
    let mut last_loss = f64::NAN;
    for epoch in 0..cfg.epochs {
        // Fisher-Yates with the training stream.
        for i in (1..m).rev() {
            let j = shuffler.below(i + 1);
            order.swap(i, j);
        }
        let mut sse = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grad.iter_mut().for_each(|g| *g = T::zero());
            let bn = T::of_usize(batch.len());
            for &i in batch {
                let out = net.forward_cached(&z[i], &mut acts, &mut pre);
                let r = out - t[i];
                sse += r.to_f64_lossy().powi(2);
                net.backward(&acts, &pre, T::of(2.0) * r / bn, Some(&mut grad));
            }
            step += 1;
            let bc1 = 1.0 - cfg.beta1.powi(step);
            let bc2 = 1.0 - cfg.beta2.powi(step);
            for q in 0..np {
                let mut g = grad[q].to_f64_lossy();
                if mask[q] {
                    g += 2.0 * cfg.ridge * theta[q].to_f64_lossy();
                }
                m1[q] = cfg.beta1 * m1[q] + (1.0 - cfg.beta1) * g;
                m2[q] = cfg.beta2 * m2[q] + (1.0 - cfg.beta2) * g * g;
                let upd = cfg.learning_rate * (m1[q] / bc1) / ((m2[q] / bc2).sqrt() + cfg.eps);
                theta[q] -= T::of(upd);
            }
            net.set_flat_params(&theta);
        }
        last_loss = sse / m as f64;
        if !last_loss.is_finite() {
            return Err(Error::Diverged(format!("non-finite training loss at epoch {epoch}")));
        }
    }
    let scale2 = net.y_scale.to_f64_lossy().powi(2);
    Ok((
        net,
        TrainReport {
            final_loss: last_loss * scale2,
            epochs: cfg.epochs,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_1d(n: usize, lo: f64, hi: f64) -> Matrix<f64> {
        Matrix::from_fn(n, 1, |i, _| lo + (hi - lo) * i as f64 / (n - 1) as f64)
    }

    #[test]
    fn zero_labels_give_zero_predictions() {
        let x = grid_1d(64, -2.0, 2.0);
        let cfg = TrainConfig {
            epochs: 20,
            batch_size: 16,
            ..Default::default()
        };
        let (net, rep) = fit_mlp(&x, &[0.0; 64], &[8, 8], &cfg).unwrap();
        assert_eq!(rep.final_loss, 0.0);
        for v in [-2.0, 0.3, 1.9] {
            assert!(net.predict(&[v]).abs() < 1e-3);
        }
        assert!(net.input_gradient(&[0.2]).iter().all(|&g| g == 0.0));
    }

    #[test]
    fn learns_softplus() {
        let x = grid_1d(200, -3.0, 3.0);
        let y: Vec<f64> = (0..200).map(|i| softplus(x[(i, 0)])).collect();
        let cfg = TrainConfig {
            epochs: 1000,
            batch_size: 32,
            learning_rate: 3e-3,
            ridge: 0.0,
            ..Default::default()
        };
        let (net, _) = fit_mlp(&x, &y, &[8], &cfg).unwrap();
        let test = grid_1d(57, -2.9, 2.9);
        let mse: f64 = (0..57)
            .map(|i| (net.predict(test.row(i)) - softplus(test[(i, 0)])).powi(2))
            .sum::<f64>()
            / 57.0;
        assert!(mse < 1e-4, "mse {mse}");
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut s = make_stream(8, 0);
        let x = Matrix::from_fn(256, 3, |_, _| s.normal());
        let y: Vec<f64> = (0..256)
            .map(|i| x[(i, 0)].sin() + x[(i, 1)] * x[(i, 2)])
            .collect();
        let cfg = TrainConfig {
            epochs: 30,
            batch_size: 32,
            learning_rate: 1e-2,
            ..Default::default()
        };
        let (net, _) = fit_mlp(&x, &y, &[16, 16], &cfg).unwrap();
        for _ in 0..100 {
            let p: Vec<f64> = (0..3).map(|_| s.normal()).collect();
            let g = net.input_gradient(&p);
            for k in 0..3 {
                let h = 1e-5;
                let mut up = p.clone();
                let mut dn = p.clone();
                up[k] += h;
                dn[k] -= h;
                let fd = (net.predict(&up) - net.predict(&dn)) / (2.0 * h);
                let rel = (fd - g[k]).abs() / g[k].abs().max(1e-2);
                assert!(rel < 1e-4, "k={k} fd={fd} g={}", g[k]);
            }
        }
    }

    #[test]
    fn deterministic_training() {
        let x = grid_1d(50, 0.0, 1.0);
        let y: Vec<f64> = (0..50).map(|i| x[(i, 0)].powi(2)).collect();
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 7,
            seed: 11,
            ..Default::default()
        };
        let a = fit_mlp(&x, &y, &[4], &cfg).unwrap().0;
        let b = fit_mlp(&x, &y, &[4], &cfg).unwrap().0;
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_non_finite() {
        let x = grid_1d(4, 0.0, 1.0);
        assert!(fit_mlp(&x, &[0.0, f64::NAN, 0.0, 0.0], &[2], &TrainConfig::default()).is_err());
    }

    #[test]
    fn single_precision() {
        let x: Matrix<f32> = Matrix::from_fn(40, 1, |i, _| i as f32 / 40.0);
        let y: Vec<f32> = (0..40).map(|i| 2.0 * i as f32 / 40.0).collect();
        let cfg = TrainConfig {
            epochs: 200,
            batch_size: 8,
            learning_rate: 1e-2,
            ..Default::default()
        };
        let (net, _) = fit_mlp(&x, &y, &[4], &cfg).unwrap();
        assert!((net.predict(&[0.5]) - 1.0).abs() < 0.05);
    }
}
