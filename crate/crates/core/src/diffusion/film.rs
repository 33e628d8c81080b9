//! FiLM noise predictor: `eps_hat = gamma(e_t, e_u) * x_t + eta(e_t, e_u)`,
//! where `gamma` and `eta` are tanh MLPs over `concat(e_t, e_u)`.
//!
//! Forward and backward passes are written by hand. The first layer of each
//! net is always evaluated as `time_part + user_part` so that cached chain
//! sampling and the plain forward pass produce identical bits.

use std::io::{Read, Write};

use crate::binio;
use crate::error::{Error, Result};
use crate::numkit::{adam_step, all_finite, dot, AdamConfig, AdamState, RngStream};

/// Fully connected layer, weights row-major `(out, in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub rows: usize,
    pub cols: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            weight: vec![0.0; rows * cols],
            bias: vec![0.0; rows],
        }
    }

    fn xavier(rows: usize, cols: usize, rng: &mut RngStream) -> Self {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        Self {
            rows,
            cols,
            weight: (0..rows * cols)
                .map(|_| rng.uniform_range(-bound, bound))
                .collect(),
            bias: vec![0.0; rows],
        }
    }

    fn affine(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|r| self.bias[r] + dot(&self.weight[r * self.cols..(r + 1) * self.cols], x))
            .collect()
    }
}

/// Tanh MLP with a linear output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

struct MlpCache {
    /// Input to every layer; `acts[0]` is the concatenated conditioning.
    acts: Vec<Vec<f64>>,
}

impl Mlp {
    fn shapes(sizes: &[usize]) -> impl Iterator<Item = (usize, usize)> + '_ {
        sizes.windows(2).map(|w| (w[1], w[0]))
    }

    fn zeros(sizes: &[usize]) -> Self {
        Self {
            layers: Self::shapes(sizes)
                .map(|(r, c)| Dense::zeros(r, c))
                .collect(),
        }
    }

    fn xavier(sizes: &[usize], rng: &mut RngStream) -> Self {
        Self {
            layers: Self::shapes(sizes)
                .map(|(r, c)| Dense::xavier(r, c, rng))
                .collect(),
        }
    }

    /// Contribution of the first `d_t` input columns to the first layer.
    pub(crate) fn time_part(&self, e_t: &[f64]) -> Vec<f64> {
        let l = &self.layers[0];
        (0..l.rows)
            .map(|r| dot(&l.weight[r * l.cols..r * l.cols + e_t.len()], e_t))
            .collect()
    }

    /// Bias plus the contribution of the trailing (user) input columns.
    pub(crate) fn user_part(&self, d_t: usize, e_u: &[f64]) -> Vec<f64> {
        let l = &self.layers[0];
        (0..l.rows)
            .map(|r| l.bias[r] + dot(&l.weight[r * l.cols + d_t..(r + 1) * l.cols], e_u))
            .collect()
    }

    fn activate(&self, layer: usize, z: Vec<f64>) -> Vec<f64> {
        if layer + 1 == self.layers.len() {
            z
        } else {
            z.into_iter().map(f64::tanh).collect()
        }
    }

    /// Completes a forward pass from the first layer's pre-activation.
    pub(crate) fn finish(&self, time_part: &[f64], user_part: &[f64]) -> Vec<f64> {
        let z0: Vec<f64> = time_part
            .iter()
            .zip(user_part)
            .map(|(a, b)| a + b)
            .collect();
        let mut h = self.activate(0, z0);
        for (k, layer) in self.layers.iter().enumerate().skip(1) {
            h = self.activate(k, layer.affine(&h));
        }
        h
    }

    fn forward_cached(&self, e_t: &[f64], e_u: &[f64]) -> (Vec<f64>, MlpCache) {
        let mut input = Vec::with_capacity(e_t.len() + e_u.len());
        input.extend_from_slice(e_t);
        input.extend_from_slice(e_u);
        let tp = self.time_part(e_t);
        let up = self.user_part(e_t.len(), e_u);
        let z0: Vec<f64> = tp.iter().zip(&up).map(|(a, b)| a + b).collect();
        let mut acts = vec![input];
        let mut h = self.activate(0, z0);
        for (k, layer) in self.layers.iter().enumerate().skip(1) {
            acts.push(h);
            h = self.activate(k, layer.affine(acts.last().expect("pushed")));
        }
        (h, MlpCache { acts })
    }

    /// Accumulates parameter gradients into `grads` given `d_out = dL/d(output)`.
    fn backward(&self, cache: &MlpCache, d_out: &[f64], grads: &mut Mlp) {
        let n = self.layers.len();
        let mut delta = d_out.to_vec();
        for k in (0..n).rev() {
            let layer = &self.layers[k];
            let input = &cache.acts[k];
            let g = &mut grads.layers[k];
            for r in 0..layer.rows {
                let dz = delta[r];
                g.bias[r] += dz;
                let row = &mut g.weight[r * layer.cols..(r + 1) * layer.cols];
                for (gw, x) in row.iter_mut().zip(input) {
                    *gw += dz * x;
                }
            }
            if k == 0 {
                break;
            }
            // Back through the weights, then through the tanh that produced `input`.
            let mut prev = vec![0.0; layer.cols];
            for r in 0..layer.rows {
                let w = &layer.weight[r * layer.cols..(r + 1) * layer.cols];
                for (p, wi) in prev.iter_mut().zip(w) {
                    *p += wi * delta[r];
                }
            }
            for (p, h) in prev.iter_mut().zip(input) {
                *p *= 1.0 - h * h;
            }
            delta = prev;
        }
    }
}

/// Parameters of the conditional noise model.
#[derive(Debug, Clone, PartialEq)]
pub struct FilmPredictor {
    d: usize,
    d_t: usize,
    pub gamma: Mlp,
    pub eta: Mlp,
}

impl FilmPredictor {
    fn sizes(d: usize, d_t: usize, hidden: usize) -> [usize; 4] {
        [d_t + d, hidden, hidden, d]
    }

    fn check_dims(d: usize, d_t: usize, hidden: usize) -> Result<()> {
        if d == 0 || hidden == 0 || d_t == 0 || d_t % 2 != 0 {
            return Err(Error::InvalidDimension(format!(
                "predictor dims d={d}, d_t={d_t}, hidden={hidden}"
            )));
        }
        Ok(())
    }

    /// Two hidden tanh layers of width `hidden` per net, Xavier-initialized.
    pub fn new(d: usize, d_t: usize, hidden: usize, rng: &mut RngStream) -> Result<Self> {
        Self::check_dims(d, d_t, hidden)?;
        let sizes = Self::sizes(d, d_t, hidden);
        let gamma = Mlp::xavier(&sizes, rng);
        let eta = Mlp::xavier(&sizes, rng);
        Ok(Self { d, d_t, gamma, eta })
    }

    pub fn zeros(d: usize, d_t: usize, hidden: usize) -> Result<Self> {
        Self::check_dims(d, d_t, hidden)?;
        let sizes = Self::sizes(d, d_t, hidden);
        Ok(Self {
            d,
            d_t,
            gamma: Mlp::zeros(&sizes),
            eta: Mlp::zeros(&sizes),
        })
    }

    /// All-zero container with this predictor's shapes.
    pub fn zeros_like(&self) -> Self {
        Self {
            d: self.d,
            d_t: self.d_t,
            gamma: Mlp {
                layers: self
                    .gamma
                    .layers
                    .iter()
                    .map(|l| Dense::zeros(l.rows, l.cols))
                    .collect(),
            },
            eta: Mlp {
                layers: self
                    .eta
                    .layers
                    .iter()
                    .map(|l| Dense::zeros(l.rows, l.cols))
                    .collect(),
            },
        }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn time_dim(&self) -> usize {
        self.d_t
    }

    fn check_inputs(&self, x_t: &[f64], e_t: &[f64], e_u: &[f64]) -> Result<()> {
        if x_t.len() != self.d || e_u.len() != self.d || e_t.len() != self.d_t {
            return Err(Error::ShapeMismatch(format!(
                "predictor expects x_t[{}], e_t[{}], e_u[{}]; got {}, {}, {}",
                self.d,
                self.d_t,
                self.d,
                x_t.len(),
                e_t.len(),
                e_u.len()
            )));
        }
        Ok(())
    }

    /// Scale and offset for the given conditioning.
    pub fn modulation(&self, e_t: &[f64], e_u: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let g = self.gamma.finish(
            &self.gamma.time_part(e_t),
            &self.gamma.user_part(self.d_t, e_u),
        );
        let h = self
            .eta
            .finish(&self.eta.time_part(e_t), &self.eta.user_part(self.d_t, e_u));
        (g, h)
    }

    pub fn predict_noise(&self, x_t: &[f64], e_t: &[f64], e_u: &[f64]) -> Result<Vec<f64>> {
        self.check_inputs(x_t, e_t, e_u)?;
        let (g, h) = self.modulation(e_t, e_u);
        Ok(modulate(&g, &h, x_t))
    }

    /// Forward pass that keeps what the backward pass needs.
    pub(crate) fn forward_train(&self, x_t: &[f64], e_t: &[f64], e_u: &[f64]) -> Result<FilmTrace> {
        self.check_inputs(x_t, e_t, e_u)?;
        let (g, gc) = self.gamma.forward_cached(e_t, e_u);
        let (h, hc) = self.eta.forward_cached(e_t, e_u);
        let eps_hat = modulate(&g, &h, x_t);
        Ok(FilmTrace {
            x_t: x_t.to_vec(),
            eps_hat,
            gamma_cache: gc,
            eta_cache: hc,
        })
    }

    /// Accumulates parameter gradients for `dL/d eps_hat`.
    pub(crate) fn backward(&self, trace: &FilmTrace, d_eps_hat: &[f64], grads: &mut FilmPredictor) {
        let d_gamma: Vec<f64> = d_eps_hat
            .iter()
            .zip(&trace.x_t)
            .map(|(g, x)| g * x)
            .collect();
        self.gamma
            .backward(&trace.gamma_cache, &d_gamma, &mut grads.gamma);
        self.eta
            .backward(&trace.eta_cache, d_eps_hat, &mut grads.eta);
    }

    /// Named parameter tensors in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        for (net, mlp) in [("gamma", &self.gamma), ("eta", &self.eta)] {
            for (k, l) in mlp.layers.iter().enumerate() {
                out.push((format!("{net}.layer{k}.weight"), l.weight.as_slice()));
                out.push((format!("{net}.layer{k}.bias"), l.bias.as_slice()));
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = Vec::new();
        for (net, mlp) in [("gamma", &mut self.gamma), ("eta", &mut self.eta)] {
            for (k, l) in mlp.layers.iter_mut().enumerate() {
                out.push((format!("{net}.layer{k}.weight"), l.weight.as_mut_slice()));
                out.push((format!("{net}.layer{k}.bias"), l.bias.as_mut_slice()));
            }
        }
        out
    }

    pub fn scale(&mut self, factor: f64) {
        for (_, t) in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn add_scaled(&mut self, other: &FilmPredictor, factor: f64) {
        let src: Vec<Vec<f64>> = other
            .tensors()
            .into_iter()
            .map(|(_, t)| t.to_vec())
            .collect();
        for ((_, t), s) in self.tensors_mut().into_iter().zip(src) {
            for (a, b) in t.iter_mut().zip(s) {
                *a += factor * b;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| all_finite(t))
    }

    /// Checkpoint: magic `ADFD`, u32 version, u32 d, u32 d_t, u32 layer count,
    /// per-layer (u32 rows, u32 cols), then per layer the row-major f64
    /// weights followed by the f64 biases. Gamma layers precede eta layers.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(PREDICTOR_MAGIC)?;
        binio::write_u32(&mut w, PREDICTOR_VERSION)?;
        binio::write_u32(&mut w, self.d as u32)?;
        binio::write_u32(&mut w, self.d_t as u32)?;
        let layers: Vec<&Dense> = self.gamma.layers.iter().chain(&self.eta.layers).collect();
        binio::write_u32(&mut w, layers.len() as u32)?;
        for l in &layers {
            binio::write_u32(&mut w, l.rows as u32)?;
            binio::write_u32(&mut w, l.cols as u32)?;
        }
        for l in &layers {
            binio::write_f64s(&mut w, &l.weight)?;
            binio::write_f64s(&mut w, &l.bias)?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self> {
        binio::expect_magic(&mut r, PREDICTOR_MAGIC)?;
        let version = binio::read_u32(&mut r, "version")?;
        if version != PREDICTOR_VERSION {
            return Err(Error::Version {
                found: version,
                expected: PREDICTOR_VERSION,
            });
        }
        let d = binio::read_u32(&mut r, "d")? as usize;
        let d_t = binio::read_u32(&mut r, "d_t")? as usize;
        let n = binio::read_u32(&mut r, "layer count")? as usize;
        if n == 0 || n % 2 != 0 {
            return Err(Error::Format(format!("odd or zero layer count {n}")));
        }
        let mut shapes = Vec::with_capacity(n);
        for _ in 0..n {
            let rows = binio::read_u32(&mut r, "layer rows")? as usize;
            let cols = binio::read_u32(&mut r, "layer cols")? as usize;
            shapes.push((rows, cols));
        }
        let mut layers = Vec::with_capacity(n);
        for (rows, cols) in shapes {
            let weight = binio::read_f64s(&mut r, rows * cols, "layer weights")?;
            let bias = binio::read_f64s(&mut r, rows, "layer bias")?;
            layers.push(Dense {
                rows,
                cols,
                weight,
                bias,
            });
        }
        binio::expect_eof(&mut r)?;
        let eta = Mlp {
            layers: layers.split_off(n / 2),
        };
        let gamma = Mlp { layers };
        for mlp in [&gamma, &eta] {
            let first = &mlp.layers[0];
            let last = mlp.layers.last().expect("non-empty");
            let chained = mlp.layers.windows(2).all(|w| w[0].rows == w[1].cols);
            if first.cols != d + d_t || last.rows != d || !chained {
                return Err(Error::Format(
                    "predictor layer shapes are inconsistent".into(),
                ));
            }
        }
        Ok(Self { d, d_t, gamma, eta })
    }
}

const PREDICTOR_MAGIC: &[u8; 4] = b"ADFD";
const PREDICTOR_VERSION: u32 = 1;

#[inline]
pub(crate) fn modulate(gamma: &[f64], eta: &[f64], x_t: &[f64]) -> Vec<f64> {
    gamma
        .iter()
        .zip(eta)
        .zip(x_t)
        .map(|((g, h), x)| g * x + h)
        .collect()
}

pub(crate) struct FilmTrace {
    x_t: Vec<f64>,
    pub eps_hat: Vec<f64>,
    gamma_cache: MlpCache,
    eta_cache: MlpCache,
}

/// One Adam state per predictor tensor.
#[derive(Debug, Clone)]
pub struct FilmOptimizer {
    states: Vec<AdamState>,
}

impl FilmOptimizer {
    pub fn new(pred: &FilmPredictor) -> Self {
        Self {
            states: pred
                .tensors()
                .iter()
                .map(|(_, t)| AdamState::zeros(t.len()))
                .collect(),
        }
    }

    pub fn step(
        &mut self,
        pred: &mut FilmPredictor,
        grads: &FilmPredictor,
        cfg: &AdamConfig,
    ) -> Result<()> {
        let g = grads.tensors();
        for (((_, p), (_, gt)), st) in pred.tensors_mut().into_iter().zip(g).zip(&mut self.states) {
            adam_step(p, gt, st, cfg)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_network_predicts_zero() {
        let p = FilmPredictor::zeros(3, 4, 6).unwrap();
        let out = p
            .predict_noise(&[1.0, -2.0, 5.0], &[0.1; 4], &[0.3; 3])
            .unwrap();
        assert_eq!(out, vec![0.0; 3]);
    }

    #[test]
    fn identity_modulation() {
        // gamma's output bias is one and everything else zero: gamma = 1, eta = 0.
        let mut p = FilmPredictor::zeros(3, 2, 4).unwrap();
        p.gamma.layers[2].bias = vec![1.0; 3];
        let x = [0.5, -1.5, 2.25];
        assert_eq!(
            p.predict_noise(&x, &[0.2, 0.9], &[1.0, 2.0, 3.0]).unwrap(),
            x.to_vec()
        );
    }

    #[test]
    fn tiny_hand_computed_forward() {
        // d = 1, d_t = 2, one hidden unit per layer.
        let mut p = FilmPredictor::zeros(1, 2, 1).unwrap();
        let set = |mlp: &mut Mlp, w0: [f64; 3], b0: f64, w1: f64, b1: f64, w2: f64, b2: f64| {
            mlp.layers[0].weight = w0.to_vec();
            mlp.layers[0].bias = vec![b0];
            mlp.layers[1].weight = vec![w1];
            mlp.layers[1].bias = vec![b1];
            mlp.layers[2].weight = vec![w2];
            mlp.layers[2].bias = vec![b2];
        };
        set(&mut p.gamma, [0.5, -0.25, 1.0], 0.1, 2.0, -0.3, 1.5, 0.2);
        set(&mut p.eta, [-1.0, 0.75, 0.5], 0.0, -0.5, 0.4, 0.8, -0.1);
        let e_t = [0.3, 0.6];
        let e_u = [0.9];
        let x_t = [1.7];

        // Reference evaluation written out scalar by scalar.
        let g_h1 = (0.5f64 * 0.3 + -0.25 * 0.6 + 1.0 * 0.9 + 0.1).tanh();
        let g_h2 = (2.0 * g_h1 - 0.3).tanh();
        let gamma = 1.5 * g_h2 + 0.2;
        let e_h1 = (-1.0f64 * 0.3 + 0.75 * 0.6 + 0.5 * 0.9 + 0.0).tanh();
        let e_h2 = (-0.5 * e_h1 + 0.4).tanh();
        let eta = 0.8 * e_h2 - 0.1;
        let expected = gamma * 1.7 + eta;

        let out = p.predict_noise(&x_t, &e_t, &e_u).unwrap();
        assert!((out[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch() {
        let p = FilmPredictor::zeros(2, 2, 2).unwrap();
        assert!(p.predict_noise(&[1.0], &[0.0, 0.0], &[0.0, 0.0]).is_err());
        assert!(FilmPredictor::zeros(2, 3, 2).is_err());
    }

    #[test]
    fn cached_and_plain_forward_agree_bitwise() {
        let p = FilmPredictor::new(4, 6, 8, &mut RngStream::new(1, 2)).unwrap();
        let e_t = [0.1, 0.2, -0.3, 0.4, 0.5, -0.6];
        let e_u = [1.0, -0.5, 0.25, 2.0];
        let x = [0.3, 0.3, -0.9, 0.0];
        let trace = p.forward_train(&x, &e_t, &e_u).unwrap();
        assert_eq!(trace.eps_hat, p.predict_noise(&x, &e_t, &e_u).unwrap());
    }

    #[test]
    fn checkpoint_round_trip() {
        let p = FilmPredictor::new(3, 4, 5, &mut RngStream::new(6, 0)).unwrap();
        let mut buf = Vec::new();
        p.write_checkpoint(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"ADFD");
        let back = FilmPredictor::read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back, p);
        assert!(matches!(
            FilmPredictor::read_checkpoint(&buf[..buf.len() - 1]),
            Err(Error::Truncated(_))
        ));
        let mut bad = buf.clone();
        bad[4] = 9;
        assert!(matches!(
            FilmPredictor::read_checkpoint(bad.as_slice()),
            Err(Error::Version { found: 9, .. })
        ));
    }
}
