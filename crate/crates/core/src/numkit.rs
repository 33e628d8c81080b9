//! Deterministic numerical substrate: keyed random streams, small dense
//! vector helpers and the Adam optimizer shared by the encoder and the
//! diffusion model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Stream roles. Combined with epoch and batch indices to key a stream.
pub mod role {
    pub const SPLIT: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const DIFFUSION: u64 = 3;
    pub const NEGATIVE: u64 = 4;
    pub const AUGMENT: u64 = 5;
    pub const INIT_ENCODER: u64 = 6;
    pub const INIT_PREDICTOR: u64 = 7;
    pub const SYNTH: u64 = 8;
    pub const VERIFY: u64 = 9;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A counter-based random stream identified by `(seed, stream_id)`.
///
/// Backed by ChaCha20, whose 64-bit stream selector gives each id its own
/// non-overlapping 2^68-byte keystream under the same key.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha20Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            rng,
        }
    }

    /// Derives the stream id from a tuple such as `(epoch, batch, role, row)`.
    pub fn keyed(seed: u64, key: &[u64]) -> Self {
        let id = key.iter().fold(0x243F_6A88_85A3_08D3u64, |acc, &k| {
            splitmix64(acc ^ splitmix64(k))
        });
        Self::new(seed, id)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// `d` independent standard-normal draws.
    pub fn gaussian_vec(&mut self, d: usize) -> Result<Vec<f64>> {
        if d == 0 {
            return Err(Error::InvalidDimension(
                "gaussian vector needs d >= 1".into(),
            ));
        }
        Ok((0..d).map(|_| self.gaussian()).collect())
    }

    pub fn gaussian(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `[0, n)`. Panics when `n == 0`.
    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    /// Uniform integer in `[lo, hi]`.
    pub fn between(&mut self, lo: usize, hi: usize) -> usize {
        self.rng.random_range(lo..=hi)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        // Fisher-Yates, written out so the draw sequence is pinned here
        // rather than to a library implementation detail.
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

/// Inner product over the common prefix. Eight interleaved partial sums keep
/// the reduction from being latency-bound; the summation order is fixed.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    for (k, (x, y)) in ra.iter().zip(rb).enumerate() {
        acc[k] += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]))
}

pub fn checked_dot(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "dot product of lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(dot(a, b))
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn all_finite(a: &[f64]) -> bool {
    a.iter().all(|v| v.is_finite())
}

/// Logistic sigmoid, evaluated without overflow for large |x|.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)`, stable on both tails.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidArgument(
                "Adam betas must lie in [0, 1)".into(),
            ));
        }
        if !(self.eps > 0.0) {
            return Err(Error::InvalidArgument("Adam eps must be > 0".into()));
        }
        Ok(())
    }
}

/// First/second moment buffers for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
}

impl AdamState {
    pub fn zeros(len: usize) -> Self {
        Self {
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            step_count: 0,
        }
    }

    fn bias_corrections(&self, cfg: &AdamConfig) -> (f64, f64) {
        let t = self.step_count as i32;
        (1.0 - cfg.beta1.powi(t), 1.0 - cfg.beta2.powi(t))
    }
}

#[inline]
fn adam_update_slice(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    cfg: &AdamConfig,
    bc1: f64,
    bc2: f64,
) {
    for k in 0..params.len() {
        let g = grads[k] + cfg.weight_decay * params[k];
        m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g;
        v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[k] / bc1;
        let v_hat = v[k] / bc2;
        params[k] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

/// One bias-corrected Adam step applied elementwise to a dense tensor.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    cfg.validate()?;
    if params.len() != grads.len()
        || params.len() != state.first_moment.len()
        || params.len() != state.second_moment.len()
    {
        return Err(Error::ShapeMismatch(format!(
            "adam: params {} grads {} moments {}/{}",
            params.len(),
            grads.len(),
            state.first_moment.len(),
            state.second_moment.len()
        )));
    }
    state.step_count += 1;
    let (bc1, bc2) = state.bias_corrections(cfg);
    adam_update_slice(
        params,
        grads,
        &mut state.first_moment,
        &mut state.second_moment,
        cfg,
        bc1,
        bc2,
    );
    Ok(())
}

/// Lazy Adam over a row-major table: only the listed rows have their
/// moments and values touched. The step counter is shared by the table.
pub fn adam_step_rows(
    table: &mut [f64],
    cols: usize,
    rows: &[(usize, Vec<f64>)],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    cfg.validate()?;
    if cols == 0 || table.len() % cols != 0 || state.first_moment.len() != table.len() {
        return Err(Error::ShapeMismatch("adam: table/moment shape".into()));
    }
    let n_rows = table.len() / cols;
    for (r, g) in rows {
        if *r >= n_rows || g.len() != cols {
            return Err(Error::ShapeMismatch(format!(
                "adam: row {r} with {} grads for a {n_rows}x{cols} table",
                g.len()
            )));
        }
    }
    state.step_count += 1;
    let (bc1, bc2) = state.bias_corrections(cfg);
    for (r, g) in rows {
        let span = r * cols..(r + 1) * cols;
        adam_update_slice(
            &mut table[span.clone()],
            g,
            &mut state.first_moment[span.clone()],
            &mut state.second_moment[span],
            cfg,
            bc1,
            bc2,
        );
    }
    Ok(())
}
