use chrono::Duration;
use serde::{Deserialize, Serialize};

use crate::hashing::unit_interval;
use crate::model::PairKey;
use crate::pairgen::RankMode;

use super::EngineError;

/// Annotation queue parameters. `sampling_seed` has no default: it must be
/// chosen explicitly so IAA membership is reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueueConfig {
    #[serde(default = "default_iaa_fraction")]
    pub iaa_fraction: f64,
    #[serde(default = "default_weekly_cap")]
    pub weekly_iaa_cap: u32,
    pub sampling_seed: u64,
    #[serde(default = "default_lease_secs")]
    pub claim_lease_secs: i64,
    #[serde(default)]
    pub rank_mode: RankMode,
}

fn default_iaa_fraction() -> f64 {
    0.05
}

fn default_weekly_cap() -> u32 {
    150
}

fn default_lease_secs() -> i64 {
    15 * 60
}

impl QueueConfig {
    pub fn with_seed(sampling_seed: u64) -> Self {
        Self {
            iaa_fraction: default_iaa_fraction(),
            weekly_iaa_cap: default_weekly_cap(),
            sampling_seed,
            claim_lease_secs: default_lease_secs(),
            rank_mode: RankMode::default(),
        }
    }

    pub fn claim_lease(&self) -> Duration {
        Duration::seconds(self.claim_lease_secs)
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        if !(0.0..=1.0).contains(&self.iaa_fraction) {
            return Err(EngineError::InvalidConfig(format!(
                "iaa_fraction {} outside [0, 1]",
                self.iaa_fraction
            )));
        }
        if self.claim_lease_secs <= 0 {
            return Err(EngineError::InvalidConfig("claim lease must be positive".into()));
        }
        Ok(())
    }
}

/// Seeded, order-independent IAA membership for one mention pair.
pub fn sample_iaa(pair_key: &PairKey, config: &QueueConfig) -> bool {
    if config.iaa_fraction <= 0.0 {
        return false;
    }
    if config.iaa_fraction >= 1.0 {
        return true;
    }
    unit_interval(config.sampling_seed, pair_key.to_string().as_bytes()) < config.iaa_fraction
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(i: usize) -> PairKey {
        format!("n{i}@0-4|s{i}@3-9").parse().unwrap()
    }

    #[test]
    fn extremes() {
        let mut c = QueueConfig::with_seed(1);
        c.iaa_fraction = 0.0;
        assert!((0..500).all(|i| !sample_iaa(&key(i), &c)));
        c.iaa_fraction = 1.0;
        assert!((0..500).all(|i| sample_iaa(&key(i), &c)));
    }

    #[test]
    fn five_percent_within_three_sigma() {
        // Binomial(10000, 0.05): mean 500, sd sqrt(475) = 21.8, 3 sd = 65.4.
        for seed in [1, 2, 3, 2021] {
            let c = QueueConfig::with_seed(seed);
            let n = (0..10_000).filter(|&i| sample_iaa(&key(i), &c)).count();
            assert!((435..=565).contains(&n), "seed {seed}: {n}");
        }
    }

    #[test]
    fn deterministic() {
        let c = QueueConfig::with_seed(77);
        let a: Vec<bool> = (0..200).map(|i| sample_iaa(&key(i), &c)).collect();
        let b: Vec<bool> = (0..200).map(|i| sample_iaa(&key(i), &c)).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_fraction() {
        let mut c = QueueConfig::with_seed(1);
        c.iaa_fraction = 1.5;
        assert!(c.validate().is_err());
    }
}
