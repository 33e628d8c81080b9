//! Forward corruption, the diffusion training loss, and the deterministic
//! reverse chain.

use crate::error::{Error, Result};
use crate::numkit::RngStream;

use super::embedding::TimeEmbedding;
use super::film::{modulate, FilmPredictor};
use super::schedule::DiffusionSchedule;

/// A corrupted embedding together with the noise that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisedSample {
    pub x_t: Vec<f64>,
    pub t: usize,
    pub eps: Vec<f64>,
}

/// `x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps` for a given `eps`.
/// `t = 0` is accepted and returns `x0` unchanged.
pub fn noise_with(
    x0: &[f64],
    t: usize,
    eps: Vec<f64>,
    sched: &DiffusionSchedule,
) -> Result<NoisedSample> {
    sched.check_step(t, 0)?;
    if eps.len() != x0.len() {
        return Err(Error::ShapeMismatch("noise and x0 lengths differ".into()));
    }
    let ab = sched.alpha_bar(t);
    let (a, s) = (ab.sqrt(), (1.0 - ab).sqrt());
    let x_t = x0.iter().zip(&eps).map(|(x, e)| a * x + s * e).collect();
    Ok(NoisedSample { x_t, t, eps })
}

/// Draws `eps ~ N(0, I)` and corrupts `x0` to step `t` in `[1, T]`.
pub fn forward_noise(
    x0: &[f64],
    t: usize,
    sched: &DiffusionSchedule,
    rng: &mut RngStream,
) -> Result<NoisedSample> {
    sched.check_step(t, 1)?;
    let eps = rng.gaussian_vec(x0.len())?;
    noise_with(x0, t, eps, sched)
}

/// Loss value and parameter gradients of one diffusion training sample.
#[derive(Debug, Clone)]
pub struct DiffusionGrads {
    pub loss: f64,
    pub grads: FilmPredictor,
}

/// `||eps - eps_hat||^2 + ||x0 - x0_hat||^2` with the single-step estimate
/// `x0_hat = (x_t - sqrt(1 - abar_t) eps_hat) / sqrt(abar_t)`.
pub fn diffusion_loss_and_grads(
    pred: &FilmPredictor,
    sched: &DiffusionSchedule,
    x0: &[f64],
    sample: &NoisedSample,
    e_t: &[f64],
    e_u: &[f64],
) -> Result<DiffusionGrads> {
    let mut grads = pred.zeros_like();
    let loss = accumulate_diffusion_grads(pred, sched, x0, sample, e_t, e_u, 1.0, &mut grads)?;
    Ok(DiffusionGrads { loss, grads })
}

/// As [`diffusion_loss_and_grads`], adding `scale * grad` into `grads`.
#[allow(clippy::too_many_arguments)]
pub fn accumulate_diffusion_grads(
    pred: &FilmPredictor,
    sched: &DiffusionSchedule,
    x0: &[f64],
    sample: &NoisedSample,
    e_t: &[f64],
    e_u: &[f64],
    scale: f64,
    grads: &mut FilmPredictor,
) -> Result<f64> {
    sched.check_step(sample.t, 1)?;
    let ab = sched.alpha_bar(sample.t);
    if !(ab > 0.0) {
        return Err(Error::DegenerateStep(sample.t));
    }
    if x0.len() != sample.x_t.len() || sample.eps.len() != sample.x_t.len() {
        return Err(Error::ShapeMismatch("x0 / sample lengths differ".into()));
    }
    let a = ab.sqrt();
    let s = (1.0 - ab).sqrt();
    let trace = pred.forward_train(&sample.x_t, e_t, e_u)?;
    let mut loss = 0.0;
    let mut d_eps_hat = Vec::with_capacity(x0.len());
    for k in 0..x0.len() {
        let eh = trace.eps_hat[k];
        let r_noise = sample.eps[k] - eh;
        let x0_hat = (sample.x_t[k] - s * eh) / a;
        let r_recon = x0[k] - x0_hat;
        loss += r_noise * r_noise + r_recon * r_recon;
        // d x0_hat / d eps_hat = -s / a
        d_eps_hat.push(scale * (-2.0 * r_noise + 2.0 * r_recon * (s / a)));
    }
    pred.backward(&trace, &d_eps_hat, grads);
    Ok(loss)
}

/// `x_{t-1} = x_t / sqrt(alpha_t) - (1 - alpha_t) / (sqrt(alpha_t) sqrt(1 - abar_t)) eps_hat`.
pub fn reverse_step(
    x_t: &[f64],
    t: usize,
    eps_hat: &[f64],
    sched: &DiffusionSchedule,
) -> Result<Vec<f64>> {
    sched.check_step(t, 1)?;
    if x_t.len() != eps_hat.len() {
        return Err(Error::ShapeMismatch(
            "x_t and eps_hat lengths differ".into(),
        ));
    }
    let (c1, c2) = reverse_coefficients(t, sched)?;
    Ok(x_t
        .iter()
        .zip(eps_hat)
        .map(|(x, e)| c1 * x - c2 * e)
        .collect())
}

fn reverse_coefficients(t: usize, sched: &DiffusionSchedule) -> Result<(f64, f64)> {
    let alpha = sched.alpha(t);
    let ab = sched.alpha_bar(t);
    if !(ab < 1.0) || !(alpha > 0.0) {
        return Err(Error::DegenerateStep(t));
    }
    let sa = alpha.sqrt();
    Ok((1.0 / sa, (1.0 - alpha) / (sa * (1.0 - ab).sqrt())))
}

/// Reverse-chain options.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ChainOptions {
    pub embedding: TimeEmbedding,
    /// Adds `sqrt(beta_t) z` at every step with `t > 1`.
    pub stochastic: bool,
}

/// Reverse sampler with the time half of each net's first layer
/// precomputed for every step. Valid while the predictor is unchanged.
pub struct ChainSampler<'a> {
    pred: &'a FilmPredictor,
    sched: &'a DiffusionSchedule,
    opts: ChainOptions,
    gamma_time: Vec<Vec<f64>>,
    eta_time: Vec<Vec<f64>>,
    coefficients: Vec<(f64, f64)>,
}

impl<'a> ChainSampler<'a> {
    pub fn new(
        pred: &'a FilmPredictor,
        sched: &'a DiffusionSchedule,
        opts: ChainOptions,
    ) -> Result<Self> {
        let steps = sched.steps();
        let mut gamma_time = vec![Vec::new()];
        let mut eta_time = vec![Vec::new()];
        let mut coefficients = vec![(0.0, 0.0)];
        for t in 1..=steps {
            let e_t = opts.embedding.embed(t, pred.time_dim())?;
            gamma_time.push(pred.gamma.time_part(&e_t));
            eta_time.push(pred.eta.time_part(&e_t));
            coefficients.push(reverse_coefficients(t, sched)?);
        }
        Ok(Self {
            pred,
            sched,
            opts,
            gamma_time,
            eta_time,
            coefficients,
        })
    }

    /// Runs `x_T -> x_stop`, calling `visit(t, x_t)` for every state
    /// including both endpoints. Returns `x_stop`.
    pub fn run(
        &self,
        e_u: &[f64],
        rng: &mut RngStream,
        stop_at: usize,
        mut visit: impl FnMut(usize, &[f64]),
    ) -> Result<Vec<f64>> {
        let steps = self.sched.steps();
        self.sched.check_step(stop_at, 0)?;
        let d = self.pred.dim();
        if e_u.len() != d {
            return Err(Error::ShapeMismatch(format!(
                "user embedding has {} dims, predictor {d}",
                e_u.len()
            )));
        }
        let g_user = self.pred.gamma.user_part(self.pred.time_dim(), e_u);
        let h_user = self.pred.eta.user_part(self.pred.time_dim(), e_u);
        let mut x = rng.gaussian_vec(d)?;
        visit(steps, &x);
        for t in (stop_at + 1..=steps).rev() {
            let gamma = self.pred.gamma.finish(&self.gamma_time[t], &g_user);
            let eta = self.pred.eta.finish(&self.eta_time[t], &h_user);
            let eps_hat = modulate(&gamma, &eta, &x);
            let (c1, c2) = self.coefficients[t];
            for (xk, ek) in x.iter_mut().zip(&eps_hat) {
                *xk = c1 * *xk - c2 * ek;
            }
            if self.opts.stochastic && t > 1 {
                let sigma = self.sched.beta(t).sqrt();
                for xk in x.iter_mut() {
                    *xk += sigma * rng.gaussian();
                }
            }
            visit(t - 1, &x);
        }
        Ok(x)
    }

    /// The full candidate list `x_T, x_{T-1}, ..., x_stop`.
    pub fn chain(&self, e_u: &[f64], rng: &mut RngStream, stop_at: usize) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(self.sched.steps() + 1 - stop_at.min(self.sched.steps()));
        self.run(e_u, rng, stop_at, |_, x| out.push(x.to_vec()))?;
        Ok(out)
    }
}

/// Generates the reverse chain from `x_T ~ N(0, I)` down to `stop_at`,
/// returning `T - stop_at + 1` states ordered from `x_T` to `x_stop`.
pub fn reverse_chain(
    pred: &FilmPredictor,
    e_u: &[f64],
    sched: &DiffusionSchedule,
    opts: ChainOptions,
    rng: &mut RngStream,
    stop_at: usize,
) -> Result<Vec<Vec<f64>>> {
    ChainSampler::new(pred, sched, opts)?.chain(e_u, rng, stop_at)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::embedding::timestep_embedding;

    fn sched_from(alpha_prev_bar: f64, alpha: f64) -> DiffusionSchedule {
        DiffusionSchedule::from_betas(vec![1.0 - alpha_prev_bar, 1.0 - alpha]).unwrap()
    }

    #[test]
    fn noiseless_injection() {
        let s = DiffusionSchedule::default_for(50).unwrap();
        let x0 = [1.0, -2.0, 0.5];
        let n = noise_with(&x0, 10, vec![0.0; 3], &s).unwrap();
        let a = s.alpha_bar(10).sqrt();
        for k in 0..3 {
            assert_eq!(n.x_t[k], a * x0[k]);
        }
        let ident = noise_with(&x0, 0, vec![0.7, 0.1, -3.0], &s).unwrap();
        assert_eq!(ident.x_t, x0.to_vec());
    }

    #[test]
    fn forward_rejects_out_of_range() {
        let s = DiffusionSchedule::default_for(5).unwrap();
        let mut rng = RngStream::new(0, 0);
        assert!(forward_noise(&[1.0], 0, &s, &mut rng).is_err());
        assert!(forward_noise(&[1.0], 6, &s, &mut rng).is_err());
    }

    #[test]
    fn perfect_prediction_has_zero_loss() {
        // eta outputs eps through its output bias; gamma is zero.
        let s = DiffusionSchedule::default_for(10).unwrap();
        let eps = vec![0.3, -1.2];
        let x0 = [0.5, 0.25];
        let sample = noise_with(&x0, 4, eps.clone(), &s).unwrap();
        let mut p = FilmPredictor::zeros(2, 2, 3).unwrap();
        p.eta.layers[2].bias = eps.clone();
        let out = diffusion_loss_and_grads(&p, &s, &x0, &sample, &[0.0, 1.0], &[0.1, 0.2]).unwrap();
        assert!(out.loss < 1e-28, "{}", out.loss);
    }

    #[test]
    fn hand_loss_value() {
        // abar_t = 0.25, x0 = 1, eps = 0, eps_hat = 0.5:
        // x_t = 0.5, x0_hat = (0.5 - sqrt(0.75) * 0.5) / 0.5 = 1 - sqrt(0.75),
        // loss = 0.25 + 0.75 = 1.
        let s = DiffusionSchedule::from_betas(vec![0.75]).unwrap();
        let sample = noise_with(&[1.0], 1, vec![0.0], &s).unwrap();
        assert_eq!(sample.x_t, vec![0.5]);
        let mut p = FilmPredictor::zeros(1, 2, 1).unwrap();
        p.eta.layers[2].bias = vec![0.5];
        let out = diffusion_loss_and_grads(&p, &s, &[1.0], &sample, &[0.0, 1.0], &[0.0]).unwrap();
        assert!((out.loss - 1.0).abs() < 1e-14, "{}", out.loss);
    }

    #[test]
    fn reverse_step_hand_value() {
        let s = sched_from(1.0 - (1.0 - 0.5 / 0.81), 0.81);
        assert!((s.alpha_bar(2) - 0.5).abs() < 1e-15);
        let out = reverse_step(&[1.0], 2, &[1.0], &s).unwrap();
        assert!(
            (out[0] - 0.812_554_914_610_124_5).abs() < 1e-12,
            "{}",
            out[0]
        );
    }

    #[test]
    fn reverse_step_zero_prediction() {
        let s = DiffusionSchedule::default_for(8).unwrap();
        let out = reverse_step(&[2.0, -4.0], 5, &[0.0, 0.0], &s).unwrap();
        let sa = s.alpha(5).sqrt();
        assert_eq!(out, vec![2.0 / sa, -4.0 / sa]);
    }

    #[test]
    fn reverse_step_matches_posterior_mean_form() {
        let s = DiffusionSchedule::default_for(20).unwrap();
        let x = [0.4, -1.1, 2.0];
        let e = [0.9, 0.05, -0.3];
        for t in 1..=20 {
            let out = reverse_step(&x, t, &e, &s).unwrap();
            let at = s.alpha(t);
            let ab = s.alpha_bar(t);
            for k in 0..3 {
                let mu = (x[k] - s.beta(t) / (1.0 - ab).sqrt() * e[k]) / at.sqrt();
                assert!((out[k] - mu).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn chain_length_and_determinism() {
        let s = DiffusionSchedule::default_for(12).unwrap();
        let p = FilmPredictor::new(3, 4, 6, &mut RngStream::new(1, 1)).unwrap();
        let e_u = [0.2, -0.1, 0.4];
        let a = reverse_chain(
            &p,
            &e_u,
            &s,
            ChainOptions::default(),
            &mut RngStream::new(5, 5),
            0,
        )
        .unwrap();
        let b = reverse_chain(
            &p,
            &e_u,
            &s,
            ChainOptions::default(),
            &mut RngStream::new(5, 5),
            0,
        )
        .unwrap();
        assert_eq!(a.len(), 13);
        assert_eq!(a, b);
        let short = reverse_chain(
            &p,
            &e_u,
            &s,
            ChainOptions::default(),
            &mut RngStream::new(5, 5),
            7,
        )
        .unwrap();
        assert_eq!(short.len(), 6);
        assert_eq!(&a[..6], &short[..]);
    }

    #[test]
    fn chain_agrees_with_step_by_step_prediction() {
        let s = DiffusionSchedule::default_for(6).unwrap();
        let p = FilmPredictor::new(2, 4, 3, &mut RngStream::new(2, 2)).unwrap();
        let e_u = [0.7, -0.3];
        let chain = reverse_chain(
            &p,
            &e_u,
            &s,
            ChainOptions::default(),
            &mut RngStream::new(9, 0),
            0,
        )
        .unwrap();
        let mut x = chain[0].clone();
        for t in (1..=6).rev() {
            let e_t = timestep_embedding(t, 4).unwrap();
            let eh = p.predict_noise(&x, &e_t, &e_u).unwrap();
            x = reverse_step(&x, t, &eh, &s).unwrap();
            let got = &chain[6 - t + 1];
            for k in 0..2 {
                assert!((x[k] - got[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_predictor_closed_form() {
        let s = DiffusionSchedule::default_for(10).unwrap();
        let p = FilmPredictor::zeros(4, 4, 5).unwrap();
        let chain = reverse_chain(
            &p,
            &[0.0; 4],
            &s,
            ChainOptions::default(),
            &mut RngStream::new(3, 0),
            0,
        )
        .unwrap();
        let x_t = &chain[0];
        for (k, state) in chain.iter().enumerate() {
            let stop = 10 - k;
            let denom: f64 = (stop + 1..=10).map(|t| s.alpha(t).sqrt()).product();
            for dim in 0..4 {
                let expected = x_t[dim] / denom;
                assert!((state[dim] - expected).abs() <= 1e-12 * expected.abs().max(1.0));
            }
        }
    }
}
