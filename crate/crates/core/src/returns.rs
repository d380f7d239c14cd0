//! Per-agent return and saving-rate sampling over named, replayable PRNG streams.
//!
//! Every stream is a ChaCha8 block generator (`rand_chacha::ChaCha8Rng`). The
//! 256-bit key is expanded from the 64-bit base seed with `rand_core`'s
//! `seed_from_u64` (PCG32 expansion), and the 64-bit ChaCha stream id encodes
//! `(replication, channel, agent block)`:
//!
//! ```text
//! bits 63..32  replication index
//! bits 31..24  channel (0 = returns, 1 = saving rates)
//! bits 23..0   agent block index
//! ```
//!
//! ChaCha output is defined bit-for-bit independently of platform, so a given
//! `(base_seed, key)` reproduces the same `u64` sequence everywhere. Floating
//! point transforms use only `ln`, `sqrt` and `powf`.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Identifier recorded in manifests for the generator family used by [`RngStream`].
pub const RNG_ALGORITHM: &str = "chacha8-rand_chacha-0.9/seed_from_u64-pcg32";

/// Agents per PRNG stream. Each block of agents owns one stream per channel.
pub const AGENT_BLOCK: usize = 1024;

const MAX_BLOCKS: u32 = 1 << 24;

/// Distribution of the per-period return `r_{i,t}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReturnSpec {
    Normal {
        mu: f64,
        sigma: f64,
    },
    /// Shape `a`, scale `b`: mean `a*b`, variance `a*b^2`.
    Gamma {
        shape: f64,
        scale: f64,
    },
    Constant {
        rate: f64,
    },
}

impl ReturnSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            ReturnSpec::Normal { mu, sigma } => mu.is_finite() && sigma.is_finite() && sigma > 0.0,
            ReturnSpec::Gamma { shape, scale } => {
                shape.is_finite() && scale.is_finite() && shape > 0.0 && scale > 0.0
            }
            ReturnSpec::Constant { rate } => rate.is_finite() && rate >= -1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!(
                "invalid return distribution {self:?}"
            )))
        }
    }

    /// Mean of the unclamped distribution.
    pub fn mean(&self) -> f64 {
        match *self {
            ReturnSpec::Normal { mu, .. } => mu,
            ReturnSpec::Gamma { shape, scale } => shape * scale,
            ReturnSpec::Constant { rate } => rate,
        }
    }

    /// Variance of the unclamped distribution.
    pub fn variance(&self) -> f64 {
        match *self {
            ReturnSpec::Normal { sigma, .. } => sigma * sigma,
            ReturnSpec::Gamma { shape, scale } => shape * scale * scale,
            ReturnSpec::Constant { .. } => 0.0,
        }
    }
}

/// Which family of draws a stream feeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Channel {
    Returns = 0,
    Saving = 1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub replication: u32,
    pub block: u32,
}

impl StreamKey {
    pub fn new(replication: u32, block: u32) -> Self {
        assert!(block < MAX_BLOCKS, "agent block index {block} out of range");
        StreamKey { replication, block }
    }

    fn stream_id(self, channel: Channel) -> u64 {
        (u64::from(self.replication) << 32) | ((channel as u64) << 24) | u64::from(self.block)
    }
}

/// A single-consumer random stream. Cloning forks an identical copy.
#[derive(Debug, Clone)]
pub struct RngStream {
    base_seed: u64,
    channel: Channel,
    key: StreamKey,
    inner: ChaCha8Rng,
    spare_normal: Option<f64>,
}

impl RngStream {
    pub fn new(base_seed: u64, channel: Channel, key: StreamKey) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(base_seed);
        inner.set_stream(key.stream_id(channel));
        RngStream {
            base_seed,
            channel,
            key,
            inner,
            spare_normal: None,
        }
    }

    pub fn base_seed(&self) -> u64 {
        self.base_seed
    }

    pub fn channel(&self) -> Channel {
        self.channel
    }

    pub fn key(&self) -> StreamKey {
        self.key
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on `[0, 1)` with 53 bits of precision.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on `(0, 1]`, safe to feed to `ln`.
    #[inline]
    fn next_open_f64(&mut self) -> f64 {
        1.0 - self.next_f64()
    }

    /// Standard normal via the Marsaglia polar form of Box-Muller.
    /// Each accepted pair yields two variates; the second is cached.
    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        loop {
            let u = 2.0 * self.next_f64() - 1.0;
            let v = 2.0 * self.next_f64() - 1.0;
            let s = u * u + v * v;
            if s >= 1.0 || s == 0.0 {
                continue;
            }
            let factor = (-2.0 * s.ln() / s).sqrt();
            self.spare_normal = Some(v * factor);
            return u * factor;
        }
    }

    /// Gamma(shape, 1) via Marsaglia-Tsang. Shapes below one are boosted:
    /// draw Gamma(shape + 1) and multiply by `U^(1/shape)`.
    pub fn standard_gamma(&mut self, shape: f64) -> f64 {
        debug_assert!(shape > 0.0);
        if shape < 1.0 {
            let g = self.marsaglia_tsang(shape + 1.0);
            let u = self.next_open_f64();
            return g * u.powf(1.0 / shape);
        }
        self.marsaglia_tsang(shape)
    }

    fn marsaglia_tsang(&mut self, shape: f64) -> f64 {
        let d = shape - 1.0 / 3.0;
        let c = 1.0 / (9.0 * d).sqrt();
        loop {
            let x = self.standard_normal();
            let t = 1.0 + c * x;
            if t <= 0.0 {
                continue;
            }
            let v = t * t * t;
            let u = self.next_open_f64();
            let x2 = x * x;
            if u < 1.0 - 0.0331 * x2 * x2 {
                return d * v;
            }
            if u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
                return d * v;
            }
        }
    }
}

/// Draw one return from `spec`, clamped to `>= -1`.
#[inline]
pub fn sample_return(spec: &ReturnSpec, stream: &mut RngStream) -> f64 {
    let r = match *spec {
        ReturnSpec::Normal { mu, sigma } => mu + sigma * stream.standard_normal(),
        ReturnSpec::Gamma { shape, scale } => scale * stream.standard_gamma(shape),
        ReturnSpec::Constant { rate } => rate,
    };
    r.max(-1.0)
}

/// Saving share of labour income, uniform on the unit interval.
#[inline]
pub fn sample_saving_rate(stream: &mut RngStream) -> f64 {
    stream.next_f64()
}

/// The per-block streams of one channel for one replication.
#[derive(Debug, Clone)]
pub struct StreamSet {
    streams: Vec<RngStream>,
}

impl StreamSet {
    pub fn new(base_seed: u64, channel: Channel, replication: u32, agents: usize) -> Self {
        let blocks = agents.div_ceil(AGENT_BLOCK).max(1);
        let streams = (0..blocks)
            .map(|b| RngStream::new(base_seed, channel, StreamKey::new(replication, b as u32)))
            .collect();
        StreamSet { streams }
    }

    /// Fill `out` with one return per agent; agent `i` draws from block `i / AGENT_BLOCK`.
    pub fn fill_returns(&mut self, spec: &ReturnSpec, out: &mut [f64]) {
        for (chunk, stream) in out.chunks_mut(AGENT_BLOCK).zip(self.streams.iter_mut()) {
            for r in chunk {
                *r = sample_return(spec, stream);
            }
        }
    }

    pub fn fill_saving_rates(&mut self, out: &mut [f64]) {
        for (chunk, stream) in out.chunks_mut(AGENT_BLOCK).zip(self.streams.iter_mut()) {
            for s in chunk {
                *s = sample_saving_rate(stream);
            }
        }
    }
}
