//! Unbiased estimates of |G|² and tr(Σ) from gradient norms measured at two
//! batch sizes, and a pair of EWMAs that turn them into a running B_simple.
//!
//! With `E|G_B|² = |G|² + tr(Σ)/B`, two measurements at `b_small < b_big`
//! give
//!
//! ```text
//! |𝒢|² = (b_big·|G_big|² − b_small·|G_small|²) / (b_big − b_small)
//! 𝒮    = (|G_small|² − |G_big|²) / (1/b_small − 1/b_big)
//! ```
//!
//! Either estimate can be negative on a single observation. They are kept
//! as-is so the moving averages stay unbiased.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Squared gradient norms at a small and a big batch size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormPair {
    pub gnorm_small_sq: f64,
    pub gnorm_big_sq: f64,
    pub b_small: usize,
    pub b_big: usize,
}

impl NormPair {
    pub fn new(gnorm_small_sq: f64, gnorm_big_sq: f64, b_small: usize, b_big: usize) -> Result<Self> {
        if b_small == 0 {
            return Err(invalid("b_small must be at least 1"));
        }
        if b_big <= b_small {
            return Err(Error::DegeneratePair { b_small, b_big });
        }
        Ok(Self { gnorm_small_sq, gnorm_big_sq, b_small, b_big })
    }
}

/// Per-observation estimates of |G|² and tr(Σ).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub gsq: f64,
    pub trsigma: f64,
}

pub fn unbiased_moments(obs: &NormPair) -> Result<Moments> {
    if obs.b_big <= obs.b_small || obs.b_small == 0 {
        return Err(Error::DegeneratePair { b_small: obs.b_small, b_big: obs.b_big });
    }
    let small = obs.b_small as f64;
    let big = obs.b_big as f64;
    let gsq = (big * obs.gnorm_big_sq - small * obs.gnorm_small_sq) / (big - small);
    let trsigma = (obs.gnorm_small_sq - obs.gnorm_big_sq) / (1.0 / small - 1.0 / big);
    Ok(Moments { gsq, trsigma })
}

/// `E|G_B|² = |G|² + tr(Σ)/B`.
pub fn expected_sq_norm(gsq: f64, trsigma: f64, batch_size: usize) -> Result<f64> {
    if batch_size == 0 {
        return Err(invalid("batch size must be at least 1"));
    }
    if trsigma < 0.0 {
        return Err(invalid("tr(Σ) must be non-negative"));
    }
    Ok(gsq + trsigma / batch_size as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackerConfig {
    #[serde(default = "TrackerConfig::default_decay")]
    pub decay_gsq: f64,
    #[serde(default = "TrackerConfig::default_decay")]
    pub decay_trsigma: f64,
    /// Observations required before an estimate is reported.
    #[serde(default = "TrackerConfig::default_warmup")]
    pub warmup: u64,
}

impl TrackerConfig {
    fn default_decay() -> f64 {
        0.99
    }

    fn default_warmup() -> u64 {
        100
    }

    pub fn validate(&self) -> Result<()> {
        for (name, d) in [("decay_gsq", self.decay_gsq), ("decay_trsigma", self.decay_trsigma)] {
            if !(d > 0.0 && d < 1.0) {
                return Err(invalid(format!("{name} must lie in (0, 1), got {d}")));
            }
        }
        Ok(())
    }
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self { decay_gsq: Self::default_decay(), decay_trsigma: Self::default_decay(), warmup: Self::default_warmup() }
    }
}

/// Bias-corrected EWMA.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ewma {
    decay: f64,
    value: f64,
    weight: f64,
}

impl Ewma {
    pub fn new(decay: f64) -> Self {
        Self { decay, value: 0.0, weight: 0.0 }
    }

    pub fn update(&mut self, x: f64) -> f64 {
        self.value = self.decay * self.value + (1.0 - self.decay) * x;
        self.weight = self.decay * self.weight + (1.0 - self.decay);
        self.get().unwrap_or(x)
    }

    /// Current average, `None` before the first observation.
    pub fn get(&self) -> Option<f64> {
        (self.weight > 0.0).then(|| self.value / self.weight)
    }
}

/// Running B_simple from a stream of [`NormPair`]s.
///
/// The estimate is the ratio of the two averages, reported only after
/// `warmup` observations and only while the |G|² average is positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseScaleTracker {
    config: TrackerConfig,
    ema_gsq: Ewma,
    ema_trsigma: Ewma,
    observation_count: u64,
}

/// Point-in-time view of a tracker.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackerSnapshot {
    pub ema_gsq: Option<f64>,
    pub ema_trsigma: Option<f64>,
    pub observation_count: u64,
    pub b_simple: Option<f64>,
}

impl NoiseScaleTracker {
    pub fn new(config: TrackerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            ema_gsq: Ewma::new(config.decay_gsq),
            ema_trsigma: Ewma::new(config.decay_trsigma),
            observation_count: 0,
        })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    pub fn observe(&mut self, obs: &NormPair) -> Result<Option<f64>> {
        let m = unbiased_moments(obs)?;
        self.observe_moments(m);
        Ok(self.b_simple())
    }

    pub fn observe_moments(&mut self, m: Moments) {
        self.ema_gsq.update(m.gsq);
        self.ema_trsigma.update(m.trsigma);
        self.observation_count += 1;
    }

    pub fn observation_count(&self) -> u64 {
        self.observation_count
    }

    pub fn b_simple(&self) -> Option<f64> {
        if self.observation_count < self.config.warmup.max(1) {
            return None;
        }
        let gsq = self.ema_gsq.get()?;
        let trsigma = self.ema_trsigma.get()?;
        (gsq > 0.0).then(|| trsigma / gsq)
    }

    pub fn snapshot(&self) -> TrackerSnapshot {
        TrackerSnapshot {
            ema_gsq: self.ema_gsq.get(),
            ema_trsigma: self.ema_trsigma.get(),
            observation_count: self.observation_count,
            b_simple: self.b_simple(),
        }
    }
}

pub fn tracker_observe(tracker: &mut NoiseScaleTracker, obs: &NormPair) -> Result<Option<f64>> {
    tracker.observe(obs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn moments_from_expected_norms() {
        // |G|² = 1, tr Σ = 10 ⇒ E|G_2|² = 6, E|G_10|² = 2.
        let m = unbiased_moments(&NormPair::new(6.0, 2.0, 2, 10).unwrap()).unwrap();
        assert_relative_eq!(m.gsq, 1.0, epsilon = 1e-12);
        assert_relative_eq!(m.trsigma, 10.0, epsilon = 1e-12);
    }

    #[test]
    fn noiseless_pair() {
        let m = unbiased_moments(&NormPair::new(3.5, 3.5, 4, 32).unwrap()).unwrap();
        assert_eq!(m.trsigma, 0.0);
        assert_relative_eq!(m.gsq, 3.5, epsilon = 1e-12);
    }

    #[test]
    fn degenerate_pair_rejected() {
        assert!(matches!(NormPair::new(1.0, 1.0, 8, 8), Err(Error::DegeneratePair { .. })));
        let raw = NormPair { gnorm_small_sq: 1.0, gnorm_big_sq: 1.0, b_small: 4, b_big: 4 };
        assert!(matches!(unbiased_moments(&raw), Err(Error::DegeneratePair { .. })));
    }

    #[test]
    fn expected_norm_formula() {
        assert_relative_eq!(expected_sq_norm(1.0, 10.0, 10).unwrap(), 2.0);
        assert_eq!(expected_sq_norm(3.0, 0.0, 7).unwrap(), 3.0);
        assert_relative_eq!(expected_sq_norm(3.0, 1.0, usize::MAX).unwrap(), 3.0);
        assert!(expected_sq_norm(1.0, 1.0, 0).is_err());
    }

    #[test]
    fn warmup_suppresses_estimate() {
        let mut t = NoiseScaleTracker::new(TrackerConfig::default()).unwrap();
        let pair = NormPair::new(6.0, 2.0, 2, 10).unwrap();
        assert_eq!(t.observe(&pair).unwrap(), None);
    }

    #[test]
    fn constant_stream_converges_to_ratio() {
        let mut t = NoiseScaleTracker::new(TrackerConfig::default()).unwrap();
        let pair = NormPair::new(6.0, 2.0, 2, 10).unwrap();
        let mut last = None;
        for _ in 0..500 {
            last = t.observe(&pair).unwrap();
        }
        assert_relative_eq!(last.unwrap(), 10.0, epsilon = 1e-9);
    }

    #[test]
    fn non_positive_gsq_average_suppresses_estimate() {
        let cfg = TrackerConfig { warmup: 1, ..TrackerConfig::default() };
        let mut t = NoiseScaleTracker::new(cfg).unwrap();
        // |G_big|² > b_small/b_big-weighted |G_small|² fails: gsq < 0.
        let pair = NormPair::new(10.0, 1.0, 1, 2).unwrap();
        assert!(unbiased_moments(&pair).unwrap().gsq < 0.0);
        assert_eq!(t.observe(&pair).unwrap(), None);
    }

    #[test]
    fn invalid_decay_rejected() {
        let cfg = TrackerConfig { decay_gsq: 1.0, ..TrackerConfig::default() };
        assert!(NoiseScaleTracker::new(cfg).is_err());
    }
}
