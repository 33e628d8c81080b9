//! Self-checks of the numerical core against independent oracles: sample
//! statistics, closed forms, brute force and finite differences.

use std::fmt;

use crate::adar::{empirical_transition, raw_transition, transition_point, TransitionConfig};
use crate::data::{IdMap, InteractionSet, SplitDataset};
use crate::diffusion::{
    diffusion_loss_and_grads, forward_noise, noise_with, reverse_chain, timestep_embedding,
    ChainOptions, DiffusionSchedule, FilmPredictor, ScheduleKind,
};
use crate::encoder::{
    bpr_loss_and_grads, d_bpr_loss_and_grads, EncoderModel, MatrixFactorization, Table,
};
use crate::error::Result;
use crate::eval::{brute_force_evaluate, evaluate, ndcg_at_k, recall_at_k};
use crate::numkit::{role, RngStream};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Worst observed error, in the units of `tolerance`.
    pub measured: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &str, measured: f64, tolerance: f64, passed: bool, detail: String) -> Self {
        Self {
            name: name.into(),
            passed,
            measured,
            tolerance,
            detail,
        }
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<22} measured={:.3e} tol={:.1e} {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            self.tolerance,
            self.detail
        )
    }
}

fn stream(seed: u64, check: u64, k: u64) -> RngStream {
    RngStream::keyed(seed, &[check, k, role::VERIFY, 0])
}

/// Forward corruption statistics: per-dimension sample mean within
/// `mean_tol` of `sqrt(abar_t) x0` and sample variance within `var_rel_tol`
/// (relative) of `1 - abar_t`. `measured` is the worst error divided by its
/// tolerance.
pub fn forward_marginals(seed: u64, draws: usize) -> Result<CheckResult> {
    const D: usize = 8;
    const MEAN_TOL: f64 = 0.03;
    const VAR_TOL: f64 = 0.05;
    let sched = DiffusionSchedule::default_for(50)?;
    let mut rng = stream(seed, 1, 0);
    let x0 = rng.gaussian_vec(D)?;
    let mut worst: f64 = 0.0;
    let mut detail = Vec::new();
    for t in [1, 25, 50] {
        let ab = sched.alpha_bar(t);
        let mut sum = [0.0; D];
        let mut sum_sq = [0.0; D];
        for _ in 0..draws {
            let s = forward_noise(&x0, t, &sched, &mut rng)?;
            for k in 0..D {
                sum[k] += s.x_t[k];
                sum_sq[k] += s.x_t[k] * s.x_t[k];
            }
        }
        let n = draws as f64;
        let (mut mean_err, mut var_err): (f64, f64) = (0.0, 0.0);
        for k in 0..D {
            let mean = sum[k] / n;
            let var = (sum_sq[k] - n * mean * mean) / (n - 1.0);
            mean_err = mean_err.max((mean - ab.sqrt() * x0[k]).abs());
            var_err = var_err.max((var / (1.0 - ab) - 1.0).abs());
        }
        worst = worst.max(mean_err / MEAN_TOL).max(var_err / VAR_TOL);
        detail.push(format!(
            "t={t}: mean_err={mean_err:.4} var_rel_err={var_err:.4}"
        ));
    }
    Ok(CheckResult::new(
        "forward_marginals",
        worst,
        1.0,
        worst <= 1.0,
        detail.join("; "),
    ))
}

/// Schedule used for the crossing check: the default end value keeps
/// `abar_50 = 0.075 > (0.5/2)^2`, so this one runs a little hotter.
pub fn bracketing_schedule() -> Result<DiffusionSchedule> {
    DiffusionSchedule::build(ScheduleKind::Linear, 50, 1e-4, 0.18)
}

/// Monte-Carlo crossing step against the closed-form target
/// `abar_{t*} <= (mu_minus / mu_plus)^2 < abar_{t*-1}` for each `mu_plus`,
/// plus monotonicity of the crossing in `mu_plus`.
pub fn crossing_bracketing(seed: u64, n_samples: usize, mu_pluses: &[f64]) -> Result<CheckResult> {
    const MU_MINUS: f64 = 0.5;
    let sched = bracketing_schedule()?;
    let e_u = [0.25; 4];
    let norm_sq: f64 = e_u.iter().map(|v| v * v).sum();
    let mut steps = Vec::new();
    let mut violation: f64 = 0.0;
    let mut detail = Vec::new();
    for (k, &mu_plus) in mu_pluses.iter().enumerate() {
        let x0: Vec<f64> = e_u.iter().map(|v| v * mu_plus / norm_sq).collect();
        let target = (MU_MINUS / mu_plus).powi(2);
        let mut rng = stream(seed, 2, k as u64);
        let t_hat = empirical_transition(&e_u, &x0, MU_MINUS, &sched, n_samples, &mut rng)?;
        let (lo, hi) = (sched.alpha_bar(t_hat), sched.alpha_bar(t_hat - 1));
        violation = violation
            .max(lo - target)
            .max(target - hi + f64::EPSILON)
            .max(0.0);
        if !(lo <= target && target < hi) {
            violation = violation.max(f64::EPSILON);
        }
        detail.push(format!(
            "mu+={mu_plus}: t={t_hat} abar=[{lo:.4},{hi:.4}) target={target:.4}"
        ));
        steps.push(t_hat);
    }
    let monotone = steps.windows(2).all(|w| w[0] <= w[1]);
    let targets_decrease = mu_pluses
        .windows(2)
        .all(|w| w[0] >= w[1] || (MU_MINUS / w[1]).powi(2) < (MU_MINUS / w[0]).powi(2));
    let passed = violation == 0.0 && monotone && targets_decrease;
    detail.push(format!("non-decreasing={monotone}"));
    Ok(CheckResult::new(
        "crossing_bracketing",
        violation,
        0.0,
        passed,
        detail.join("; "),
    ))
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(floor);
    if denom == 0.0 {
        0.0
    } else {
        (analytic - numeric).abs() / denom
    }
}

/// Absolute scale below which a gradient entry is compared absolutely
/// rather than relatively: central differences carry rounding error of
/// order `eps * |f| / h`, so entries much smaller than that are noise.
pub fn gradient_floor(f: f64) -> f64 {
    1e-6 * f.abs().max(1.0)
}

/// Largest relative error between `analytic` and central differences of
/// `f` at `x`.
pub fn check_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], analytic: &[f64], h: f64) -> f64 {
    let f0 = f(x);
    let mut worst: f64 = 0.0;
    let mut probe = x.to_vec();
    for k in 0..x.len() {
        probe[k] = x[k] + h;
        let up = f(&probe);
        probe[k] = x[k] - h;
        let down = f(&probe);
        probe[k] = x[k];
        let numeric = (up - down) / (2.0 * h);
        worst = worst.max(relative_error(analytic[k], numeric, gradient_floor(f0)));
    }
    worst
}

fn pairwise_check(
    seed: u64,
    configs: usize,
    h: f64,
    name: &str,
    check: u64,
    augmented: bool,
) -> Result<CheckResult> {
    let mut worst: f64 = 0.0;
    for c in 0..configs {
        let mut rng = stream(seed, check, c as u64);
        let d = rng.between(1, 8);
        let lambda = if augmented { rng.uniform() } else { 0.0 };
        let draw = |rng: &mut RngStream| -> Result<Vec<f64>> {
            Ok(rng.gaussian_vec(d)?.into_iter().map(|v| 0.7 * v).collect())
        };
        let (u, i, j, e_d) = (
            draw(&mut rng)?,
            draw(&mut rng)?,
            draw(&mut rng)?,
            draw(&mut rng)?,
        );
        let loss = |u: &[f64], i: &[f64], j: &[f64]| -> f64 {
            if augmented {
                d_bpr_loss_and_grads(u, i, j, &e_d, lambda).map_or(f64::NAN, |g| g.loss)
            } else {
                bpr_loss_and_grads(u, i, j).map_or(f64::NAN, |g| g.loss)
            }
        };
        let g = if augmented {
            d_bpr_loss_and_grads(&u, &i, &j, &e_d, lambda)?
        } else {
            bpr_loss_and_grads(&u, &i, &j)?
        };
        worst = worst
            .max(check_gradient(|x| loss(x, &i, &j), &u, &g.user, h))
            .max(check_gradient(|x| loss(&u, x, &j), &i, &g.pos, h))
            .max(check_gradient(|x| loss(&u, &i, x), &j, &g.neg, h));
    }
    Ok(CheckResult::new(
        name,
        worst,
        GRAD_TOL,
        worst < GRAD_TOL,
        format!("{configs} configs, h={h:e}"),
    ))
}

pub const GRAD_TOL: f64 = 1e-4;

pub fn bpr_gradients(seed: u64, configs: usize, h: f64) -> Result<CheckResult> {
    pairwise_check(seed, configs, h, "gradient_bpr", 3, false)
}

pub fn d_bpr_gradients(seed: u64, configs: usize, h: f64) -> Result<CheckResult> {
    pairwise_check(seed, configs, h, "gradient_d_bpr", 4, true)
}

/// A random predictor and training sample for the diffusion gradient check.
pub struct DiffusionFixture {
    pub pred: FilmPredictor,
    pub sched: DiffusionSchedule,
    pub x0: Vec<f64>,
    pub t: usize,
    pub eps: Vec<f64>,
    pub e_t: Vec<f64>,
    pub e_u: Vec<f64>,
}

impl DiffusionFixture {
    pub fn random(rng: &mut RngStream) -> Result<Self> {
        let d = rng.between(1, 4);
        let d_t = 2 * rng.between(1, 3);
        let hidden = rng.between(1, 6);
        let steps = rng.between(2, 50);
        let mut pred = FilmPredictor::new(d, d_t, hidden, rng)?;
        // Non-zero biases so every parameter receives a gradient.
        for (_, t) in pred.tensors_mut() {
            for v in t.iter_mut() {
                *v += 0.1 * rng.gaussian();
            }
        }
        let sched = DiffusionSchedule::default_for(steps)?;
        let t = rng.between(1, steps);
        Ok(Self {
            x0: rng.gaussian_vec(d)?,
            eps: rng.gaussian_vec(d)?,
            e_u: rng.gaussian_vec(d)?,
            e_t: timestep_embedding(t, d_t)?,
            pred,
            sched,
            t,
        })
    }

    pub fn loss(&self, pred: &FilmPredictor) -> Result<f64> {
        let sample = noise_with(&self.x0, self.t, self.eps.clone(), &self.sched)?;
        Ok(
            diffusion_loss_and_grads(pred, &self.sched, &self.x0, &sample, &self.e_t, &self.e_u)?
                .loss,
        )
    }

    pub fn analytic(&self) -> Result<FilmPredictor> {
        let sample = noise_with(&self.x0, self.t, self.eps.clone(), &self.sched)?;
        Ok(diffusion_loss_and_grads(
            &self.pred,
            &self.sched,
            &self.x0,
            &sample,
            &self.e_t,
            &self.e_u,
        )?
        .grads)
    }

    /// Worst relative error per named predictor tensor against `analytic`.
    pub fn tensor_errors(&self, analytic: &FilmPredictor, h: f64) -> Result<Vec<(String, f64)>> {
        let f0 = self.loss(&self.pred)?;
        let floor = gradient_floor(f0);
        let grads: Vec<(String, Vec<f64>)> = analytic
            .tensors()
            .into_iter()
            .map(|(n, t)| (n, t.to_vec()))
            .collect();
        let mut out = Vec::with_capacity(grads.len());
        for (ti, (name, g)) in grads.iter().enumerate() {
            let mut worst: f64 = 0.0;
            for k in 0..g.len() {
                let eval = |delta: f64| -> Result<f64> {
                    let mut p = self.pred.clone();
                    p.tensors_mut()[ti].1[k] += delta;
                    self.loss(&p)
                };
                let numeric = (eval(h)? - eval(-h)?) / (2.0 * h);
                worst = worst.max(relative_error(g[k], numeric, floor));
            }
            out.push((name.clone(), worst));
        }
        Ok(out)
    }
}

/// Summarizes per-tensor errors from many fixtures, naming every tensor
/// that exceeded the tolerance.
pub fn summarize_tensor_errors(
    name: &str,
    errors: &[(String, f64)],
    detail: String,
) -> CheckResult {
    let worst = errors.iter().map(|e| e.1).fold(0.0, f64::max);
    let mut failing: Vec<&str> = errors
        .iter()
        .filter(|e| !(e.1 < GRAD_TOL))
        .map(|e| e.0.as_str())
        .collect();
    failing.sort_unstable();
    failing.dedup();
    let detail = if failing.is_empty() {
        detail
    } else {
        format!("{detail}; failing tensors: {}", failing.join(", "))
    };
    CheckResult::new(name, worst, GRAD_TOL, failing.is_empty(), detail)
}

pub fn diffusion_gradients(seed: u64, configs: usize, h: f64) -> Result<CheckResult> {
    let mut all = Vec::new();
    for c in 0..configs {
        let mut rng = stream(seed, 5, c as u64);
        let fx = DiffusionFixture::random(&mut rng)?;
        all.extend(fx.tensor_errors(&fx.analytic()?, h)?);
    }
    Ok(summarize_tensor_errors(
        "gradient_diffusion",
        &all,
        format!("{configs} configs, h={h:e}, all predictor tensors"),
    ))
}

/// The reference value at `p_s = 0`, monotonicity over random
/// configurations, and the open range of the unrounded value.
pub fn transition_law(seed: u64, draws: usize) -> Result<CheckResult> {
    let reference = transition_point(0.0, &TransitionConfig::new(1.0, 1.0, 50)?)?;
    let mut rng = stream(seed, 6, 0);
    let mut violations = 0usize;
    let mut strict_checked = 0usize;
    for _ in 0..draws {
        let omega = rng.uniform_range(0.01, 5.0);
        let k = rng.uniform_range(0.01, 5.0);
        let steps = rng.between(1, 200);
        let cfg = TransitionConfig::new(omega, k, steps)?;
        let (mut p1, mut p2) = (
            rng.uniform_range(-10.0, 10.0),
            rng.uniform_range(-10.0, 10.0),
        );
        if p1 > p2 {
            std::mem::swap(&mut p1, &mut p2);
        }
        let (t1, t2) = (transition_point(p1, &cfg)?, transition_point(p2, &cfg)?);
        if t1 > t2 || t1 < (steps / 2).max(1) || t2 > steps {
            violations += 1;
        }
        for p in [p1, p2] {
            let raw = raw_transition(p, &cfg)?;
            let half = steps as f64 / 2.0;
            // The open interval is only resolvable in f64 while the sigmoid
            // argument stays clear of its saturation points.
            let arg = omega * (k * p).exp();
            if (1e-12..=30.0).contains(&arg) {
                strict_checked += 1;
                if !(raw > half && raw < steps as f64) {
                    violations += 1;
                }
            } else if !(raw >= half && raw <= steps as f64) {
                violations += 1;
            }
        }
    }
    let passed = reference == 36 && violations == 0;
    Ok(CheckResult::new(
        "transition_law",
        violations as f64,
        0.0,
        passed,
        format!(
            "t*(0)={reference}; {draws} draws; strict range checked on {strict_checked} values"
        ),
    ))
}

/// Random `n_users x n_items` instance with integer-valued embeddings (so
/// ties occur) and disjoint train/test lists.
pub fn random_metric_instance(
    rng: &mut RngStream,
    n_users: usize,
    n_items: usize,
) -> Result<(EncoderModel, SplitDataset)> {
    let d = 3;
    let int = |rng: &mut RngStream| rng.between(0, 4) as f64 - 2.0;
    let users = Table {
        rows: n_users,
        cols: d,
        data: (0..n_users * d).map(|_| int(rng)).collect(),
    };
    let items = Table {
        rows: n_items,
        cols: d,
        data: (0..n_items * d).map(|_| int(rng)).collect(),
    };
    let mut train = Vec::with_capacity(n_users);
    let mut test = Vec::with_capacity(n_users);
    for u in 0..n_users {
        let mut perm: Vec<u32> = (0..n_items as u32).collect();
        rng.shuffle(&mut perm);
        let n_train = rng.between(1, n_items / 3);
        // The first user always has test items so the instance is evaluable.
        let n_test = rng.between(usize::from(u == 0), n_items / 4);
        train.push(perm[..n_train].to_vec());
        test.push(perm[n_train..n_train + n_test].to_vec());
    }
    let train = InteractionSet::from_adjacency(
        train,
        n_items,
        IdMap::sequential("u", n_users),
        IdMap::sequential("i", n_items),
    )?;
    Ok((
        EncoderModel::Mf(MatrixFactorization::from_tables(users, items)),
        SplitDataset::new(train, test)?,
    ))
}

/// `evaluate` against the brute-force oracle on random instances, plus
/// closed-form spot checks.
pub fn metric_oracle(seed: u64, instances: usize) -> Result<CheckResult> {
    let ks = [1, 5, 10, 20];
    let mut mismatches = 0usize;
    let mut worst: f64 = 0.0;
    for n in 0..instances {
        let mut rng = stream(seed, 7, n as u64);
        let (enc, split) = random_metric_instance(&mut rng, 10, 20)?;
        let fast = evaluate(&enc, &split, &ks)?;
        let slow = brute_force_evaluate(&enc, &split, &ks)?;
        if fast != slow {
            mismatches += 1;
        }
        for (a, b) in fast
            .recall
            .iter()
            .chain(&fast.ndcg)
            .zip(slow.recall.iter().chain(&slow.ndcg))
        {
            worst = worst.max((a - b).abs());
        }
    }
    let ranked: Vec<usize> = (0..30).collect();
    let spot_ndcg = ndcg_at_k(&ranked, &[2], 10)?;
    let spot_recall = recall_at_k(&ranked, &[2], 10)?;
    let passed = mismatches == 0 && spot_ndcg == 0.5 && spot_recall == 1.0;
    Ok(CheckResult::new(
        "metric_oracle",
        worst,
        0.0,
        passed,
        format!(
            "{instances} instances, {mismatches} mismatches; ndcg(rank 3)={spot_ndcg}, recall={spot_recall}"
        ),
    ))
}

/// With every predictor weight zero each reverse step only rescales by
/// `1/sqrt(alpha_t)`, so `x_t = x_T / prod_{s>t} sqrt(alpha_s)`.
pub fn zero_predictor_chain(seed: u64) -> Result<CheckResult> {
    const TOL: f64 = 1e-13;
    let steps = 50;
    let sched = DiffusionSchedule::default_for(steps)?;
    let pred = FilmPredictor::zeros(8, 8, 16)?;
    let e_u = stream(seed, 8, 0).gaussian_vec(8)?;
    let chain = reverse_chain(
        &pred,
        &e_u,
        &sched,
        ChainOptions::default(),
        &mut stream(seed, 8, 1),
        0,
    )?;
    let x_t = &chain[0];
    let mut worst: f64 = 0.0;
    for (pos, state) in chain.iter().enumerate() {
        let t = steps - pos;
        let denom: f64 = (t + 1..=steps).map(|s| sched.alpha(s).sqrt()).product();
        for k in 0..8 {
            let expected = x_t[k] / denom;
            worst = worst.max((state[k] - expected).abs() / expected.abs().max(f64::MIN_POSITIVE));
        }
    }
    Ok(CheckResult::new(
        "zero_predictor_chain",
        worst,
        TOL,
        worst <= TOL,
        format!("{} states, relative error", chain.len()),
    ))
}

/// `abar_T < 0.1` under the default schedule.
pub fn schedule_premise(steps: &[usize]) -> Result<CheckResult> {
    let mut worst: f64 = 0.0;
    let mut detail = Vec::new();
    for &t in steps {
        let ab = DiffusionSchedule::default_for(t)?.alpha_bar(t);
        worst = worst.max(ab);
        detail.push(format!("T={t}: abar_T={ab:.4}"));
    }
    Ok(CheckResult::new(
        "schedule_premise",
        worst,
        0.1,
        worst < 0.1,
        detail.join("; "),
    ))
}

/// Sizes used by [`battery`].
pub const MARGINAL_DRAWS: usize = 20_000;
pub const BRACKET_SAMPLES: usize = 50_000;
pub const GRAD_CONFIGS: usize = 100;
pub const GRAD_STEP: f64 = 1e-5;
pub const TRANSITION_DRAWS: usize = 1000;
pub const METRIC_INSTANCES: usize = 50;

/// The full battery at its reference sizes.
pub fn battery(seed: u64) -> Result<Vec<CheckResult>> {
    Ok(vec![
        forward_marginals(seed, MARGINAL_DRAWS)?,
        crossing_bracketing(seed, BRACKET_SAMPLES, &[1.0, 2.0, 4.0])?,
        bpr_gradients(seed, GRAD_CONFIGS, GRAD_STEP)?,
        d_bpr_gradients(seed, GRAD_CONFIGS, GRAD_STEP)?,
        diffusion_gradients(seed, GRAD_CONFIGS, GRAD_STEP)?,
        transition_law(seed, TRANSITION_DRAWS)?,
        metric_oracle(seed, METRIC_INSTANCES)?,
        zero_predictor_chain(seed)?,
        schedule_premise(&[20, 50])?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1.0, 1.0, 1e-6), 0.0);
        assert!((relative_error(1.0, 1.1, 1e-6) - 0.1 / 1.1).abs() < 1e-15);
        assert_eq!(relative_error(0.0, 0.0, 0.0), 0.0);
        assert_eq!(relative_error(1e-9, 0.0, 1e-6), 1e-3);
    }

    #[test]
    fn gradient_checker_detects_wrong_gradient() {
        let f = |x: &[f64]| x[0] * x[0] + 3.0 * x[1];
        assert!(check_gradient(f, &[0.5, 2.0], &[1.0, 3.0], 1e-5) < 1e-8);
        assert!(check_gradient(f, &[0.5, 2.0], &[1.0, 3.1], 1e-5) > 1e-2);
    }

    #[test]
    fn corrupted_diffusion_gradient_names_the_tensor() {
        let mut rng = RngStream::new(21, 0);
        let fx = DiffusionFixture::random(&mut rng).unwrap();
        let mut analytic = fx.analytic().unwrap();
        let target = "eta.layer1.weight";
        for (name, t) in analytic.tensors_mut() {
            if name == target {
                t[0] = t[0] * 1.5 + 0.1;
            }
        }
        let errors = fx.tensor_errors(&analytic, GRAD_STEP).unwrap();
        let res = summarize_tensor_errors("gradient_diffusion", &errors, String::new());
        assert!(!res.passed);
        assert!(res.detail.contains(target), "{}", res.detail);
        assert!(!res.detail.contains("gamma"), "{}", res.detail);
    }

    #[test]
    fn small_battery_passes() {
        assert!(forward_marginals(1, 4000).is_ok());
        for r in [
            bpr_gradients(1, 10, GRAD_STEP).unwrap(),
            d_bpr_gradients(1, 10, GRAD_STEP).unwrap(),
            diffusion_gradients(1, 5, GRAD_STEP).unwrap(),
            transition_law(1, 200).unwrap(),
            metric_oracle(1, 5).unwrap(),
            zero_predictor_chain(1).unwrap(),
            schedule_premise(&[20, 50]).unwrap(),
        ] {
            assert!(r.passed, "{r}");
        }
    }

    #[test]
    fn result_line_format() {
        let r = CheckResult::new("x", 0.5, 1.0, true, "ok".into());
        assert_eq!(
            r.to_string(),
            "PASS x                      measured=5.000e-1 tol=1.0e0 ok"
        );
    }
}
