use std::f64::consts::FRAC_PI_2;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    Linear,
    Cosine,
}

impl FromStr for ScheduleKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Self::Linear),
            "cosine" => Ok(Self::Cosine),
            _ => Err(Error::InvalidArgument(format!("unknown schedule `{s}`"))),
        }
    }
}

impl ScheduleKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Linear => "linear",
            Self::Cosine => "cosine",
        }
    }
}

pub const DEFAULT_BETA_START: f64 = 1e-4;

/// Default `beta_end` for `T` steps: keeps the summed noise at the level of
/// `(1e-4, 0.1)` over 50 steps so that `alpha_bar_T < 0.1` for any `T >= 2`.
pub fn default_beta_end(steps: usize) -> f64 {
    (5.0 / steps.max(1) as f64).min(0.999)
}

const COSINE_OFFSET: f64 = 0.008;
const COSINE_MAX_BETA: f64 = 0.999;

/// Noise tables for `t = 0..=T`. Index 0 is the identity row
/// (`alpha_bar_0 = 1`, no beta).
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl DiffusionSchedule {
    pub fn build(kind: ScheduleKind, steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidArgument("schedule needs T >= 1".into()));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
            )));
        }
        let betas = match kind {
            ScheduleKind::Linear => {
                if steps == 1 {
                    vec![beta_start]
                } else {
                    (0..steps)
                        .map(|k| {
                            beta_start + k as f64 / (steps - 1) as f64 * (beta_end - beta_start)
                        })
                        .collect()
                }
            }
            ScheduleKind::Cosine => {
                let f = |t: usize| {
                    let x = (t as f64 / steps as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET);
                    (x * FRAC_PI_2).cos().powi(2)
                };
                (1..=steps)
                    .map(|t| (1.0 - f(t) / f(t - 1)).clamp(f64::MIN_POSITIVE, COSINE_MAX_BETA))
                    .collect()
            }
        };
        Self::from_betas(betas)
    }

    /// The default linear schedule for `T` steps.
    pub fn default_for(steps: usize) -> Result<Self> {
        let end = default_beta_end(steps).max(DEFAULT_BETA_START);
        Self::build(ScheduleKind::Linear, steps, DEFAULT_BETA_START, end)
    }

    /// Builds the tables from `beta_1..beta_T`.
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::InvalidArgument("schedule needs T >= 1".into()));
        }
        if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::InvalidArgument(format!("beta {b} outside (0, 1)")));
        }
        let mut all_betas = Vec::with_capacity(betas.len() + 1);
        all_betas.push(0.0);
        all_betas.extend_from_slice(&betas);
        let alphas: Vec<f64> = all_betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(alphas.len());
        let mut acc = 1.0;
        alpha_bars.push(1.0);
        for a in &alphas[1..] {
            acc *= a;
            alpha_bars.push(acc);
        }
        Ok(Self {
            betas: all_betas,
            alphas,
            alpha_bars,
        })
    }

    pub fn steps(&self) -> usize {
        self.betas.len() - 1
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    /// `beta_1..beta_T`.
    pub fn betas(&self) -> &[f64] {
        &self.betas[1..]
    }

    pub(crate) fn check_step(&self, t: usize, lo: usize) -> Result<()> {
        if t < lo || t > self.steps() {
            return Err(Error::TimestepOutOfRange {
                t,
                lo,
                hi: self.steps(),
            });
        }
        Ok(())
    }
}
