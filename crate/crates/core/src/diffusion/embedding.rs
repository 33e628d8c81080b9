use std::str::FromStr;

use crate::error::{Error, Result};

/// Layout of the sinusoidal timestep code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TimeEmbedding {
    /// Component `i` uses frequency `10000^(-2i/d_t)`; sine at even `i`,
    /// cosine at odd `i`.
    #[default]
    Literal,
    /// Conventional layout: first half sines, second half cosines, sharing
    /// frequencies `10000^(-2k/d_t)` for `k < d_t/2`.
    Paired,
}

impl FromStr for TimeEmbedding {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "literal" => Ok(Self::Literal),
            "paired" => Ok(Self::Paired),
            _ => Err(Error::InvalidArgument(format!(
                "unknown time embedding `{s}`"
            ))),
        }
    }
}

impl TimeEmbedding {
    pub fn name(self) -> &'static str {
        match self {
            Self::Literal => "literal",
            Self::Paired => "paired",
        }
    }

    pub fn embed(self, t: usize, d_t: usize) -> Result<Vec<f64>> {
        if d_t == 0 || d_t % 2 != 0 {
            return Err(Error::InvalidDimension(format!(
                "time embedding dimension must be even and positive, got {d_t}"
            )));
        }
        let t = t as f64;
        let freq = |k: usize| 10000f64.powf(-2.0 * k as f64 / d_t as f64);
        Ok(match self {
            Self::Literal => (0..d_t)
                .map(|i| {
                    let x = t * freq(i);
                    if i % 2 == 0 {
                        x.sin()
                    } else {
                        x.cos()
                    }
                })
                .collect(),
            Self::Paired => {
                let half = d_t / 2;
                (0..d_t)
                    .map(|i| {
                        if i < half {
                            (t * freq(i)).sin()
                        } else {
                            (t * freq(i - half)).cos()
                        }
                    })
                    .collect()
            }
        })
    }
}

/// The literal sinusoidal timestep code.
pub fn timestep_embedding(t: usize, d_t: usize) -> Result<Vec<f64>> {
    TimeEmbedding::Literal.embed(t, d_t)
}
