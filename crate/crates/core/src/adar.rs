//! Negative-sample engine: the score-aware transition point, the generated
//! negative `e_d`, and the baseline samplers it is layered on.

use std::fmt;
use std::str::FromStr;

use crate::data::InteractionSet;
use crate::diffusion::{ChainOptions, ChainSampler, DiffusionSchedule, FilmPredictor};
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::numkit::{dot, sigmoid, RngStream};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionConfig {
    pub omega: f64,
    pub k: f64,
    pub steps: usize,
}

impl TransitionConfig {
    pub fn new(omega: f64, k: f64, steps: usize) -> Result<Self> {
        let cfg = Self { omega, k, steps };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.omega > 0.0 && self.omega.is_finite()) || !(self.k > 0.0 && self.k.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "omega and k must be positive, got omega={} k={}",
                self.omega, self.k
            )));
        }
        if self.steps == 0 {
            return Err(Error::InvalidArgument("T must be >= 1".into()));
        }
        Ok(())
    }
}

/// `sigmoid(omega * exp(k * p_s)) * T` before rounding.
pub fn raw_transition(p_s: f64, cfg: &TransitionConfig) -> Result<f64> {
    cfg.validate()?;
    if !p_s.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "preference score {p_s} is not finite"
        )));
    }
    Ok(sigmoid(cfg.omega * (cfg.k * p_s).exp()) * cfg.steps as f64)
}

/// The raw value floored and clamped to `[1, T]`.
pub fn transition_point(p_s: f64, cfg: &TransitionConfig) -> Result<usize> {
    let raw = raw_transition(p_s, cfg)?;
    Ok((raw.floor() as usize).clamp(1, cfg.steps))
}

/// Monte-Carlo crossing step: the first `t` at which the mean score of
/// `x_t ~ q(x_t | x0)` against `e_u` drops below `mu_minus`.
pub fn empirical_transition(
    e_u: &[f64],
    x0: &[f64],
    mu_minus: f64,
    sched: &DiffusionSchedule,
    n_samples: usize,
    rng: &mut RngStream,
) -> Result<usize> {
    if e_u.len() != x0.len() || e_u.is_empty() {
        return Err(Error::ShapeMismatch(
            "e_u and x0 must share a positive dimension".into(),
        ));
    }
    if n_samples == 0 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    let mu_plus = dot(e_u, x0);
    if !(mu_plus > mu_minus && mu_minus > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "need mu_plus > mu_minus > 0, got mu_plus={mu_plus} mu_minus={mu_minus}"
        )));
    }
    for t in 1..=sched.steps() {
        let ab = sched.alpha_bar(t);
        let (a, s) = (ab.sqrt(), (1.0 - ab).sqrt());
        let mut total = 0.0;
        for _ in 0..n_samples {
            let mut f = 0.0;
            for (u, x) in e_u.iter().zip(x0) {
                f += u * (a * x + s * rng.gaussian());
            }
            total += f;
        }
        if total / (n_samples as f64) < mu_minus {
            return Ok(t);
        }
    }
    Err(Error::NoTransition(sched.steps()))
}

/// Uniform draw from the items `u` has not interacted with.
pub fn uniform_negative(u: usize, train: &InteractionSet, rng: &mut RngStream) -> Result<usize> {
    let n_items = train.n_items();
    let observed = train.items_of(u);
    if observed.len() >= n_items {
        return Err(Error::ExhaustedNegatives { user: u });
    }
    if 2 * observed.len() > n_items {
        let candidates = complement(observed, n_items);
        return Ok(candidates[rng.below(candidates.len())]);
    }
    loop {
        let j = rng.below(n_items);
        if observed.binary_search(&(j as u32)).is_err() {
            return Ok(j);
        }
    }
}

fn complement(sorted: &[u32], n_items: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(n_items - sorted.len());
    let mut next = sorted.iter().peekable();
    for j in 0..n_items {
        if next.peek().is_some_and(|&&o| o as usize == j) {
            next.next();
        } else {
            out.push(j);
        }
    }
    out
}

/// Highest-scored item among `pool` uniform unobserved draws (with
/// replacement); ties go to the smaller index. A pool at least as large as
/// the candidate set scores every candidate and consumes no randomness.
pub fn dns_negative<E: Encoder + ?Sized>(
    u: usize,
    train: &InteractionSet,
    enc: &E,
    pool: usize,
    rng: &mut RngStream,
) -> Result<usize> {
    if pool == 0 {
        return Err(Error::InvalidArgument("dns pool size must be >= 1".into()));
    }
    let observed = train.items_of(u);
    let n_candidates = train.n_items().saturating_sub(observed.len());
    if n_candidates == 0 {
        return Err(Error::ExhaustedNegatives { user: u });
    }
    let candidates = if pool >= n_candidates {
        complement(observed, train.n_items())
    } else {
        (0..pool)
            .map(|_| uniform_negative(u, train, rng))
            .collect::<Result<Vec<_>>>()?
    };
    let e_u = enc.embed_user(u);
    let mut best = (f64::NEG_INFINITY, usize::MAX);
    for j in candidates {
        let s = dot(&e_u, &enc.embed_item(j));
        if s > best.0 || (s == best.0 && j < best.1) || best.1 == usize::MAX {
            best = (s, j);
        }
    }
    Ok(best.1)
}

/// How the hard negative `j` is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaseSampler {
    Uniform,
    Dns { pool: usize },
}

impl BaseSampler {
    pub fn draw<E: Encoder + ?Sized>(
        self,
        u: usize,
        train: &InteractionSet,
        enc: &E,
        rng: &mut RngStream,
    ) -> Result<usize> {
        match self {
            Self::Uniform => uniform_negative(u, train, rng),
            Self::Dns { pool } => dns_negative(u, train, enc, pool, rng),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplerKind {
    Uniform,
    Dns,
    AdarAdaptive,
    AdarRandomT,
    AdarFixedT,
    AdarMixedT,
}

impl SamplerKind {
    pub const ALL: [SamplerKind; 6] = [
        Self::Uniform,
        Self::Dns,
        Self::AdarAdaptive,
        Self::AdarRandomT,
        Self::AdarFixedT,
        Self::AdarMixedT,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Uniform => "uniform",
            Self::Dns => "dns",
            Self::AdarAdaptive => "adar_adaptive",
            Self::AdarRandomT => "adar_random_t",
            Self::AdarFixedT => "adar_fixed_t",
            Self::AdarMixedT => "adar_mixed_t",
        }
    }

    /// Whether the kind generates `e_d` with the diffusion model.
    pub fn is_generative(self) -> bool {
        !matches!(self, Self::Uniform | Self::Dns)
    }
}

impl FromStr for SamplerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown sampler `{s}`")))
    }
}

impl fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A sampler kind with its parameters resolved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SamplerMode {
    Uniform,
    Dns { pool: usize },
    AdarAdaptive,
    AdarRandomT,
    AdarFixedT { t: usize },
    AdarMixedT { ts: Vec<usize> },
}

impl SamplerMode {
    pub fn kind(&self) -> SamplerKind {
        match self {
            Self::Uniform => SamplerKind::Uniform,
            Self::Dns { .. } => SamplerKind::Dns,
            Self::AdarAdaptive => SamplerKind::AdarAdaptive,
            Self::AdarRandomT => SamplerKind::AdarRandomT,
            Self::AdarFixedT { .. } => SamplerKind::AdarFixedT,
            Self::AdarMixedT { .. } => SamplerKind::AdarMixedT,
        }
    }

    /// Fills in the default parameters for `T` steps: pool `dns_pool` for
    /// dns, `floor(T/2)` for fixed, and `{T/2, T/4, T/8, T/10}` for mixed.
    pub fn with_defaults(kind: SamplerKind, steps: usize, dns_pool: usize) -> Self {
        match kind {
            SamplerKind::Uniform => Self::Uniform,
            SamplerKind::Dns => Self::Dns { pool: dns_pool },
            SamplerKind::AdarAdaptive => Self::AdarAdaptive,
            SamplerKind::AdarRandomT => Self::AdarRandomT,
            SamplerKind::AdarFixedT => Self::AdarFixedT {
                t: default_fixed_t(steps),
            },
            SamplerKind::AdarMixedT => Self::AdarMixedT {
                ts: default_mixed_ts(steps),
            },
        }
    }

    pub fn validate(&self, steps: usize) -> Result<()> {
        let in_range = |t: usize| (1..=steps).contains(&t);
        match self {
            Self::Dns { pool } if *pool == 0 => {
                Err(Error::InvalidArgument("dns pool size must be >= 1".into()))
            }
            Self::AdarFixedT { t } if !in_range(*t) => Err(Error::TimestepOutOfRange {
                t: *t,
                lo: 1,
                hi: steps,
            }),
            Self::AdarMixedT { ts } if ts.is_empty() => Err(Error::InvalidArgument(
                "mixed variant needs at least one step".into(),
            )),
            Self::AdarMixedT { ts } => match ts.iter().find(|t| !in_range(**t)) {
                Some(t) => Err(Error::TimestepOutOfRange {
                    t: *t,
                    lo: 1,
                    hi: steps,
                }),
                None => Ok(()),
            },
            _ => Ok(()),
        }
    }
}

pub fn default_fixed_t(steps: usize) -> usize {
    (steps / 2).max(1)
}

/// `{T/2, T/4, T/8, T/10}` floored, clamped to at least 1, duplicates removed.
pub fn default_mixed_ts(steps: usize) -> Vec<usize> {
    let mut ts: Vec<usize> = Vec::with_capacity(4);
    for div in [2, 4, 8, 10] {
        let t = (steps / div).max(1);
        if !ts.contains(&t) {
            ts.push(t);
        }
    }
    ts
}

/// Where the reverse chain is read.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VariantT {
    Single(usize),
    /// Outputs at these steps are averaged into one negative.
    Mixed(Vec<usize>),
}

pub fn select_variant_t(
    mode: &SamplerMode,
    p_s: f64,
    cfg: &TransitionConfig,
    rng: &mut RngStream,
) -> Result<VariantT> {
    mode.validate(cfg.steps)?;
    match mode {
        SamplerMode::AdarAdaptive => Ok(VariantT::Single(transition_point(p_s, cfg)?)),
        SamplerMode::AdarRandomT => Ok(VariantT::Single(rng.between(1, cfg.steps))),
        SamplerMode::AdarFixedT { t } => Ok(VariantT::Single(*t)),
        SamplerMode::AdarMixedT { ts } => Ok(VariantT::Mixed(ts.clone())),
        SamplerMode::Uniform | SamplerMode::Dns { .. } => Err(Error::InvalidArgument(format!(
            "sampler `{}` has no diffusion step",
            mode.kind()
        ))),
    }
}

/// Runs the reverse chain for `e_u` and reads it at `choice`.
pub fn generate_negative(
    sampler: &ChainSampler<'_>,
    e_u: &[f64],
    choice: &VariantT,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    match choice {
        VariantT::Single(t) => sampler.run(e_u, rng, *t, |_, _| {}),
        VariantT::Mixed(ts) => {
            let stop = *ts.iter().min().ok_or_else(|| {
                Error::InvalidArgument("mixed variant needs at least one step".into())
            })?;
            let mut acc = vec![0.0; e_u.len()];
            sampler.run(e_u, rng, stop, |t, x| {
                for _ in ts.iter().filter(|&&s| s == t) {
                    for (a, v) in acc.iter_mut().zip(x) {
                        *a += v;
                    }
                }
            })?;
            let n = ts.len() as f64;
            Ok(acc.into_iter().map(|v| v / n).collect())
        }
    }
}

/// The adaptive negative for a training pair: score the pair with the
/// current encoder, map the score to `t*`, and return `x_{t*}` of a reverse
/// chain conditioned on the user.
#[allow(clippy::too_many_arguments)]
pub fn augment_negative<E: Encoder + ?Sized>(
    u: usize,
    i: usize,
    enc: &E,
    pred: &FilmPredictor,
    sched: &DiffusionSchedule,
    cfg: &TransitionConfig,
    opts: ChainOptions,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    let e_u = enc.embed_user(u);
    let p_s = dot(&e_u, &enc.embed_item(i));
    let t_star = transition_point(p_s, cfg)?;
    let sampler = ChainSampler::new(pred, sched, opts)?;
    sampler.run(&e_u, rng, t_star, |_, _| {})
}
