//! Alternating optimization of the diffusion model and the encoder.
//!
//! Every batch runs a diffusion phase (one noised positive per pair, one
//! Adam step on the predictor) followed by an encoder phase (one negative
//! per pair, optionally augmented with a generated `e_d`, one sparse Adam
//! step on the touched rows). Per-row randomness comes from streams keyed
//! by `(seed, epoch, batch, role, row)` and gradients are reduced in row
//! order, so results do not depend on the thread count.

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::adar::{
    generate_negative, select_variant_t, BaseSampler, SamplerKind, SamplerMode, TransitionConfig,
};
use crate::data::{InteractionSet, SplitDataset};
use crate::diffusion::{
    accumulate_diffusion_grads, default_beta_end, forward_noise, ChainOptions, ChainSampler,
    DiffusionSchedule, FilmOptimizer, FilmPredictor, ScheduleKind, TimeEmbedding,
    DEFAULT_BETA_START,
};
use crate::encoder::{
    bpr_loss_and_grads, d_bpr_loss_and_grads, Encoder, EncoderKind, EncoderModel, PairwiseGrads,
    SparseGrads,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate, MetricsReport, DEFAULT_KS};
use crate::numkit::{role, AdamConfig, RngStream};

/// Rows per gradient-accumulation chunk in the diffusion phase. Fixed so the
/// reduction order does not depend on the thread count.
const GRAD_CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub dim: usize,
    pub time_dim: usize,
    /// Hidden width of both FiLM nets; `None` means `2 * dim`.
    pub hidden: Option<usize>,
    pub lr: f64,
    pub diffusion_lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub steps: usize,
    pub schedule: ScheduleKind,
    pub beta_start: f64,
    /// `None` scales with `T` (see [`default_beta_end`]).
    pub beta_end: Option<f64>,
    pub lambda: f64,
    pub omega: f64,
    pub k: f64,
    pub sampler: SamplerKind,
    pub base_sampler: SamplerKind,
    pub dns_pool: usize,
    pub fixed_t: Option<usize>,
    pub mixed_t: Option<Vec<usize>>,
    pub seed: u64,
    /// Worker threads; 0 uses the rayon default. Results are identical for
    /// every value.
    pub threads: usize,
    pub warmup_epochs: usize,
    pub eval_every: usize,
    pub patience: usize,
    pub encoder: EncoderKind,
    pub stochastic_reverse: bool,
    pub time_embedding: TimeEmbedding,
    pub ks: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            time_dim: 64,
            hidden: None,
            lr: 1e-3,
            diffusion_lr: 1e-3,
            weight_decay: 0.0,
            batch_size: 2048,
            epochs: 30,
            steps: 50,
            schedule: ScheduleKind::Linear,
            beta_start: DEFAULT_BETA_START,
            beta_end: None,
            lambda: 0.3,
            omega: 1.0,
            k: 1.0,
            sampler: SamplerKind::AdarAdaptive,
            base_sampler: SamplerKind::Uniform,
            dns_pool: 8,
            fixed_t: None,
            mixed_t: None,
            seed: 42,
            threads: 1,
            warmup_epochs: 0,
            eval_every: 0,
            patience: 0,
            encoder: EncoderKind::Mf,
            stochastic_reverse: false,
            time_embedding: TimeEmbedding::Literal,
            ks: DEFAULT_KS.to_vec(),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::InvalidArgument(format!("`{key}`: cannot parse `{value}`: {e}")))
}

fn parse_auto<T: std::str::FromStr>(key: &str, value: &str) -> Result<Option<T>>
where
    T::Err: std::fmt::Display,
{
    if value == "auto" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

/// Comma-separated list.
pub fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn join<T: ToString>(vals: &[T]) -> String {
    vals.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn auto<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "auto".into(), T::to_string)
}

impl TrainConfig {
    pub const KEYS: [&'static str; 29] = [
        "dim",
        "time_dim",
        "hidden",
        "lr",
        "diffusion_lr",
        "weight_decay",
        "batch_size",
        "epochs",
        "T",
        "schedule",
        "beta_start",
        "beta_end",
        "lambda",
        "omega",
        "k",
        "sampler",
        "base_sampler",
        "dns_pool",
        "fixed_t",
        "mixed_t",
        "seed",
        "threads",
        "warmup_epochs",
        "eval_every",
        "patience",
        "encoder",
        "stochastic_reverse",
        "time_embedding",
        "ks",
    ];

    /// Sets one key from its text form. Returns `Ok(false)` for keys that are
    /// not training parameters.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let v = value.trim();
        match key {
            "dim" => self.dim = parse(key, v)?,
            "time_dim" => self.time_dim = parse(key, v)?,
            "hidden" => self.hidden = parse_auto(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "diffusion_lr" => self.diffusion_lr = parse(key, v)?,
            "weight_decay" => self.weight_decay = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "T" => self.steps = parse(key, v)?,
            "schedule" => self.schedule = v.parse()?,
            "beta_start" => self.beta_start = parse(key, v)?,
            "beta_end" => self.beta_end = parse_auto(key, v)?,
            "lambda" => self.lambda = parse(key, v)?,
            "omega" => self.omega = parse(key, v)?,
            "k" => self.k = parse(key, v)?,
            "sampler" => self.sampler = v.parse()?,
            "base_sampler" => self.base_sampler = v.parse()?,
            "dns_pool" => self.dns_pool = parse(key, v)?,
            "fixed_t" => self.fixed_t = parse_auto(key, v)?,
            "mixed_t" => {
                self.mixed_t = if v == "auto" {
                    None
                } else {
                    Some(parse_list(key, v)?)
                }
            }
            "seed" => self.seed = parse(key, v)?,
            "threads" => self.threads = parse(key, v)?,
            "warmup_epochs" => self.warmup_epochs = parse(key, v)?,
            "eval_every" => self.eval_every = parse(key, v)?,
            "patience" => self.patience = parse(key, v)?,
            "encoder" => self.encoder = v.parse()?,
            "stochastic_reverse" => self.stochastic_reverse = parse(key, v)?,
            "time_embedding" => self.time_embedding = v.parse()?,
            "ks" => self.ks = parse_list(key, v)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Every key with its current value, in [`TrainConfig::KEYS`] order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let values = [
            self.dim.to_string(),
            self.time_dim.to_string(),
            auto(&self.hidden),
            self.lr.to_string(),
            self.diffusion_lr.to_string(),
            self.weight_decay.to_string(),
            self.batch_size.to_string(),
            self.epochs.to_string(),
            self.steps.to_string(),
            self.schedule.name().to_string(),
            self.beta_start.to_string(),
            auto(&self.beta_end),
            self.lambda.to_string(),
            self.omega.to_string(),
            self.k.to_string(),
            self.sampler.name().to_string(),
            self.base_sampler.name().to_string(),
            self.dns_pool.to_string(),
            auto(&self.fixed_t),
            self.mixed_t.as_deref().map_or_else(|| "auto".into(), join),
            self.seed.to_string(),
            self.threads.to_string(),
            self.warmup_epochs.to_string(),
            self.eval_every.to_string(),
            self.patience.to_string(),
            self.encoder.name().to_string(),
            self.stochastic_reverse.to_string(),
            self.time_embedding.name().to_string(),
            join(&self.ks),
        ];
        Self::KEYS.into_iter().zip(values).collect()
    }

    /// First 16 hex digits of SHA-256 over the sorted `key=value` lines of
    /// every result-affecting key (`threads` is left out).
    pub fn fingerprint(&self) -> String {
        let mut lines: Vec<String> = self
            .entries()
            .into_iter()
            .filter(|(k, _)| *k != "threads")
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect();
        lines.sort();
        let digest = Sha256::digest(lines.concat().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn hidden_width(&self) -> usize {
        self.hidden.unwrap_or(2 * self.dim)
    }

    pub fn schedule(&self) -> Result<DiffusionSchedule> {
        let end = self
            .beta_end
            .unwrap_or_else(|| default_beta_end(self.steps).max(self.beta_start));
        DiffusionSchedule::build(self.schedule, self.steps, self.beta_start, end)
    }

    pub fn transition(&self) -> Result<TransitionConfig> {
        TransitionConfig::new(self.omega, self.k, self.steps)
    }

    pub fn sampler_mode(&self) -> Result<SamplerMode> {
        let mut mode = SamplerMode::with_defaults(self.sampler, self.steps, self.dns_pool);
        match &mut mode {
            SamplerMode::AdarFixedT { t } => {
                if let Some(v) = self.fixed_t {
                    *t = v;
                }
            }
            SamplerMode::AdarMixedT { ts } => {
                if let Some(v) = &self.mixed_t {
                    *ts = v.clone();
                }
            }
            _ => {}
        }
        mode.validate(self.steps)?;
        Ok(mode)
    }

    pub fn base(&self) -> Result<BaseSampler> {
        let kind = match self.sampler {
            SamplerKind::Uniform | SamplerKind::Dns => self.sampler,
            _ => self.base_sampler,
        };
        match kind {
            SamplerKind::Uniform => Ok(BaseSampler::Uniform),
            SamplerKind::Dns if self.dns_pool >= 1 => Ok(BaseSampler::Dns {
                pool: self.dns_pool,
            }),
            SamplerKind::Dns => Err(Error::InvalidArgument("dns_pool must be >= 1".into())),
            other => Err(Error::InvalidArgument(format!(
                "base_sampler must be uniform or dns, got `{other}`"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.dim == 0 {
            return bad("dim must be >= 1".into());
        }
        if self.time_dim == 0 || self.time_dim % 2 != 0 {
            return bad(format!(
                "time_dim must be even and positive, got {}",
                self.time_dim
            ));
        }
        if self.hidden_width() == 0 {
            return bad("hidden must be >= 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad(format!("lambda must lie in [0, 1], got {}", self.lambda));
        }
        for (name, lr) in [("lr", self.lr), ("diffusion_lr", self.diffusion_lr)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad(format!("{name} must be positive, got {lr}"));
            }
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be >= 0".into());
        }
        if self.ks.is_empty() || self.ks.contains(&0) {
            return bad("ks must list positive cutoffs".into());
        }
        let explicit_ts = self.fixed_t.iter().chain(self.mixed_t.iter().flatten());
        if let Some(t) = explicit_ts.copied().find(|t| !(1..=self.steps).contains(t)) {
            return Err(Error::TimestepOutOfRange {
                t,
                lo: 1,
                hi: self.steps,
            });
        }
        self.schedule()?;
        self.transition()?;
        self.sampler_mode()?;
        self.base()?;
        Ok(())
    }

    fn encoder_adam(&self) -> AdamConfig {
        AdamConfig {
            weight_decay: self.weight_decay,
            ..AdamConfig::with_lr(self.lr)
        }
    }
}

/// One epoch's positive pairs in shuffled order, chunked into batches.
pub fn make_batches(
    train: &InteractionSet,
    batch_size: usize,
    rng: &mut RngStream,
) -> Result<Vec<Vec<(u32, u32)>>> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
    }
    let mut pairs: Vec<(u32, u32)> = train.pairs().collect();
    if pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    rng.shuffle(&mut pairs);
    Ok(pairs.chunks(batch_size).map(<[_]>::to_vec).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub epoch: usize,
    pub batch: usize,
    pub diff_loss: f64,
    pub rank_loss: f64,
}

/// Which halves of a batch step run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Phases {
    pub diffusion: bool,
    pub encoder: bool,
}

/// Model state plus the fixed pieces derived from a [`TrainConfig`].
pub struct Trainer {
    cfg: TrainConfig,
    sched: DiffusionSchedule,
    transition: TransitionConfig,
    mode: SamplerMode,
    base: BaseSampler,
    time_codes: Vec<Vec<f64>>,
    encoder: EncoderModel,
    predictor: FilmPredictor,
    film_opt: FilmOptimizer,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, n_users: usize, n_items: usize) -> Result<Self> {
        cfg.validate()?;
        let mut enc_rng = RngStream::keyed(cfg.seed, &[0, 0, role::INIT_ENCODER, 0]);
        let encoder = EncoderModel::new(cfg.encoder, n_users, n_items, cfg.dim, &mut enc_rng);
        let mut pred_rng = RngStream::keyed(cfg.seed, &[0, 0, role::INIT_PREDICTOR, 0]);
        let predictor = FilmPredictor::new(
            encoder.dim(),
            cfg.time_dim,
            cfg.hidden_width(),
            &mut pred_rng,
        )?;
        let film_opt = FilmOptimizer::new(&predictor);
        let time_codes = (0..=cfg.steps)
            .map(|t| cfg.time_embedding.embed(t, cfg.time_dim))
            .collect::<Result<_>>()?;
        Ok(Self {
            sched: cfg.schedule()?,
            transition: cfg.transition()?,
            mode: cfg.sampler_mode()?,
            base: cfg.base()?,
            cfg,
            time_codes,
            encoder,
            predictor,
            film_opt,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn encoder(&self) -> &EncoderModel {
        &self.encoder
    }

    pub fn predictor(&self) -> &FilmPredictor {
        &self.predictor
    }

    pub fn schedule(&self) -> &DiffusionSchedule {
        &self.sched
    }

    pub fn into_parts(self) -> (EncoderModel, FilmPredictor) {
        (self.encoder, self.predictor)
    }

    fn uses_diffusion(&self) -> bool {
        self.cfg.sampler.is_generative()
    }

    fn augments(&self) -> bool {
        self.uses_diffusion() && self.cfg.lambda > 0.0
    }

    /// Both phases on one batch. Returns the mean diffusion and ranking
    /// losses; a skipped phase reports 0.
    pub fn train_batch(
        &mut self,
        train: &InteractionSet,
        batch: &[(u32, u32)],
        epoch: usize,
        batch_idx: usize,
        phases: Phases,
    ) -> Result<(f64, f64)> {
        if batch.is_empty() {
            return Ok((0.0, 0.0));
        }
        let non_finite = |what: &str| Error::NonFinite {
            what: what.into(),
            epoch,
            batch: batch_idx,
        };
        let mut diff_loss = 0.0;
        if phases.diffusion && self.uses_diffusion() {
            diff_loss = self.diffusion_phase(batch, epoch, batch_idx)?;
            if !diff_loss.is_finite() || !self.predictor.is_finite() {
                return Err(non_finite("diffusion model"));
            }
        }
        let mut rank_loss = 0.0;
        if phases.encoder {
            rank_loss = self.encoder_phase(train, batch, epoch, batch_idx)?;
            if !rank_loss.is_finite() || !self.encoder.is_finite() {
                return Err(non_finite("encoder"));
            }
        }
        Ok((diff_loss, rank_loss))
    }

    fn diffusion_phase(
        &mut self,
        batch: &[(u32, u32)],
        epoch: usize,
        batch_idx: usize,
    ) -> Result<f64> {
        let scale = 1.0 / batch.len() as f64;
        let (enc, pred, sched, codes, seed) = (
            &self.encoder,
            &self.predictor,
            &self.sched,
            &self.time_codes,
            self.cfg.seed,
        );
        let partials: Vec<(f64, FilmPredictor)> = batch
            .par_chunks(GRAD_CHUNK)
            .enumerate()
            .map(|(c, chunk)| {
                let mut grads = pred.zeros_like();
                let mut loss = 0.0;
                for (r, &(u, i)) in chunk.iter().enumerate() {
                    let row = (c * GRAD_CHUNK + r) as u64;
                    let mut rng = RngStream::keyed(
                        seed,
                        &[epoch as u64, batch_idx as u64, role::DIFFUSION, row],
                    );
                    let e_u = enc.embed_user(u as usize);
                    let x0 = enc.embed_item(i as usize);
                    let t = rng.between(1, sched.steps());
                    let sample = forward_noise(&x0, t, sched, &mut rng)?;
                    loss += accumulate_diffusion_grads(
                        pred, sched, &x0, &sample, &codes[t], &e_u, scale, &mut grads,
                    )?;
                }
                Ok((loss, grads))
            })
            .collect::<Result<_>>()?;
        let mut parts = partials.into_iter();
        let (mut loss, mut grads) = parts.next().expect("non-empty batch");
        for (l, g) in parts {
            loss += l;
            grads.add_scaled(&g, 1.0);
        }
        let adam = AdamConfig::with_lr(self.cfg.diffusion_lr);
        self.film_opt.step(&mut self.predictor, &grads, &adam)?;
        Ok(loss * scale)
    }

    fn encoder_phase(
        &mut self,
        train: &InteractionSet,
        batch: &[(u32, u32)],
        epoch: usize,
        batch_idx: usize,
    ) -> Result<f64> {
        let augments = self.augments();
        let opts = ChainOptions {
            embedding: self.cfg.time_embedding,
            stochastic: self.cfg.stochastic_reverse,
        };
        let sampler = if augments {
            Some(ChainSampler::new(&self.predictor, &self.sched, opts)?)
        } else {
            None
        };
        let (enc, seed, lambda) = (&self.encoder, self.cfg.seed, self.cfg.lambda);
        let (base, mode, transition) = (self.base, &self.mode, &self.transition);
        let rows: Vec<(usize, usize, usize, PairwiseGrads)> = batch
            .par_iter()
            .enumerate()
            .map(|(row, &(u, i))| {
                let (u, i) = (u as usize, i as usize);
                let key = |r: u64| [epoch as u64, batch_idx as u64, r, row as u64];
                let mut neg_rng = RngStream::keyed(seed, &key(role::NEGATIVE));
                let j = base.draw(u, train, enc, &mut neg_rng)?;
                let e_u = enc.embed_user(u);
                let e_i = enc.embed_item(i);
                let e_j = enc.embed_item(j);
                let grads = match &sampler {
                    Some(sampler) => {
                        let mut aug_rng = RngStream::keyed(seed, &key(role::AUGMENT));
                        let p_s = crate::numkit::dot(&e_u, &e_i);
                        let choice = select_variant_t(mode, p_s, transition, &mut aug_rng)?;
                        let e_d = generate_negative(sampler, &e_u, &choice, &mut aug_rng)?;
                        d_bpr_loss_and_grads(&e_u, &e_i, &e_j, &e_d, lambda)?
                    }
                    None => bpr_loss_and_grads(&e_u, &e_i, &e_j)?,
                };
                Ok((u, i, j, grads))
            })
            .collect::<Result<_>>()?;
        let scale = 1.0 / batch.len() as f64;
        let mut sparse = SparseGrads::default();
        let mut loss = 0.0;
        for (u, i, j, g) in &rows {
            loss += g.loss;
            sparse.add_user(*u, &g.user, scale);
            sparse.add_item(*i, &g.pos, scale);
            sparse.add_item(*j, &g.neg, scale);
        }
        self.encoder
            .apply_grads(&sparse, &self.cfg.encoder_adam())?;
        Ok(loss * scale)
    }
}

#[derive(Debug, Clone)]
pub struct TrainArtifacts {
    pub encoder: EncoderModel,
    pub predictor: FilmPredictor,
    pub losses: Vec<LossRecord>,
    /// Periodic test reports as `(epoch, report)`.
    pub history: Vec<(usize, MetricsReport)>,
    pub metrics: MetricsReport,
    pub epochs_run: usize,
}

/// Trains on `split.train` and reports on `split.test`.
pub fn train(cfg: &TrainConfig, split: &SplitDataset) -> Result<TrainArtifacts> {
    train_with_validation(cfg, split, None)
}

/// As [`train`]; `patience > 0` stops once Recall at the first cutoff on
/// `validation` has not improved for that many evaluations.
pub fn train_with_validation(
    cfg: &TrainConfig,
    split: &SplitDataset,
    validation: Option<&SplitDataset>,
) -> Result<TrainArtifacts> {
    cfg.validate()?;
    if cfg.patience > 0 && validation.is_none() {
        return Err(Error::InvalidArgument(
            "patience needs a validation split".into(),
        ));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    pool.install(|| run(cfg, split, validation))
}

fn run(
    cfg: &TrainConfig,
    split: &SplitDataset,
    validation: Option<&SplitDataset>,
) -> Result<TrainArtifacts> {
    let train_set = &split.train;
    let mut trainer = Trainer::new(cfg.clone(), train_set.n_users(), train_set.n_items())?;
    let warmup = if cfg.sampler.is_generative() {
        cfg.warmup_epochs
    } else {
        0
    };
    let eval_every = if cfg.patience > 0 {
        cfg.eval_every.max(1)
    } else {
        cfg.eval_every
    };
    let mut losses = Vec::new();
    let mut history = Vec::new();
    let mut best = f64::NEG_INFINITY;
    let mut stale = 0;
    let mut epochs_run = 0;
    for epoch in 1..=warmup + cfg.epochs {
        let mut shuffle = RngStream::keyed(cfg.seed, &[epoch as u64, 0, role::SHUFFLE, 0]);
        let batches = make_batches(train_set, cfg.batch_size, &mut shuffle)?;
        let phases = Phases {
            diffusion: true,
            encoder: epoch > warmup,
        };
        for (b, batch) in batches.iter().enumerate() {
            let (diff_loss, rank_loss) = trainer.train_batch(train_set, batch, epoch, b, phases)?;
            losses.push(LossRecord {
                epoch,
                batch: b,
                diff_loss,
                rank_loss,
            });
        }
        epochs_run = epoch;
        if epoch <= warmup || eval_every == 0 || (epoch - warmup) % eval_every != 0 {
            continue;
        }
        if cfg.eval_every > 0 {
            let mut report = evaluate(trainer.encoder(), split, &cfg.ks)?;
            report.fingerprint = cfg.fingerprint();
            history.push((epoch, report));
        }
        if let (Some(valid), true) = (validation, cfg.patience > 0) {
            let r = evaluate(trainer.encoder(), valid, &cfg.ks)?;
            if r.recall[0] > best {
                best = r.recall[0];
                stale = 0;
            } else {
                stale += 1;
                if stale >= cfg.patience {
                    break;
                }
            }
        }
    }
    let mut metrics = evaluate(trainer.encoder(), split, &cfg.ks)?;
    metrics.fingerprint = cfg.fingerprint();
    let (encoder, predictor) = trainer.into_parts();
    Ok(TrainArtifacts {
        encoder,
        predictor,
        losses,
        history,
        metrics,
        epochs_run,
    })
}

/// `epoch,batch,diff_loss,rank_loss` lines with a header.
pub fn losses_csv(losses: &[LossRecord]) -> String {
    let mut out = String::from("epoch,batch,diff_loss,rank_loss\n");
    for l in losses {
        out.push_str(&format!(
            "{},{},{},{}\n",
            l.epoch, l.batch, l.diff_loss, l.rank_loss
        ));
    }
    out
}
