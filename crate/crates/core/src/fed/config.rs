//! Run configuration for the federated loop.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    FedAvg,
    FedProx,
    Scaffold,
    FedBn,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [Algorithm::FedAvg, Algorithm::FedProx, Algorithm::Scaffold, Algorithm::FedBn];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::FedAvg => "fedavg",
            Algorithm::FedProx => "fedprox",
            Algorithm::Scaffold => "scaffold",
            Algorithm::FedBn => "fedbn",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown algorithm {s:?} (fedavg, fedprox, scaffold, fedbn)")))
    }
}

/// How the training set is split across clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PartitionSpec {
    Iid,
    Shards { shard_size: usize, shards_per_client: usize },
    Dirichlet { alpha: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FLConfig {
    pub total_clients: usize,
    pub rounds: usize,
    pub participants_per_round: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub temperature: f64,
    /// Per-round training temperature; round `r` uses entry `r - 1`, and the
    /// last entry persists past the end of the list.
    pub temperature_schedule: Option<Vec<f64>>,
    /// Temperature for test loss and entropy; the training temperature of
    /// the round when absent.
    pub eval_temperature: Option<f64>,
    pub algorithm: Algorithm,
    pub fedprox_mu: f64,
    pub seed: u64,
    pub model: ModelSpec,
    pub partition: PartitionSpec,
    pub target_accuracy: Option<f64>,
    /// Fraction of each client's samples held out for the pre/post
    /// aggregation accuracy deltas; never trained on.
    pub client_holdout: f64,
}

impl Default for FLConfig {
    fn default() -> Self {
        FLConfig {
            total_clients: 50,
            rounds: 300,
            participants_per_round: 10,
            local_epochs: 10,
            batch_size: 16,
            learning_rate: 0.001,
            lr_decay: 1e-5,
            temperature: 1.0,
            temperature_schedule: None,
            eval_temperature: None,
            algorithm: Algorithm::FedAvg,
            fedprox_mu: 0.0,
            seed: 0,
            model: ModelSpec::mlp_femnist(),
            partition: PartitionSpec::Shards {
                shard_size: 200,
                shards_per_client: 2,
            },
            target_accuracy: None,
            client_holdout: 0.0,
        }
    }
}

fn positive_temperature(name: &str, t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must be positive and finite, got {t}")))
    }
}

impl FLConfig {
    pub fn validate(&self) -> Result<()> {
        if self.total_clients == 0 {
            return Err(Error::invalid("total_clients must be at least 1"));
        }
        if self.participants_per_round == 0 || self.participants_per_round > self.total_clients {
            return Err(Error::invalid(format!(
                "participants_per_round must be in 1..={}, got {}",
                self.total_clients, self.participants_per_round
            )));
        }
        if self.local_epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("local_epochs and batch_size must be at least 1"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!("learning_rate must be >= 0, got {}", self.learning_rate)));
        }
        if !(self.lr_decay >= 0.0 && self.lr_decay.is_finite()) {
            return Err(Error::invalid(format!("lr_decay must be >= 0, got {}", self.lr_decay)));
        }
        positive_temperature("temperature", self.temperature)?;
        if let Some(schedule) = &self.temperature_schedule {
            if schedule.is_empty() {
                return Err(Error::invalid("temperature_schedule must not be empty"));
            }
            for &t in schedule {
                positive_temperature("temperature_schedule entry", t)?;
            }
        }
        if let Some(t) = self.eval_temperature {
            positive_temperature("eval_temperature", t)?;
        }
        if !(self.fedprox_mu >= 0.0 && self.fedprox_mu.is_finite()) {
            return Err(Error::invalid(format!("fedprox_mu must be >= 0, got {}", self.fedprox_mu)));
        }
        if self.algorithm == Algorithm::Scaffold && self.learning_rate == 0.0 {
            return Err(Error::invalid("scaffold needs a positive learning_rate (control update divides by it)"));
        }
        if let Some(t) = self.target_accuracy {
            if !(t > 0.0 && t <= 1.0) {
                return Err(Error::invalid(format!("target_accuracy must be in (0, 1], got {t}")));
            }
        }
        if !(0.0..1.0).contains(&self.client_holdout) {
            return Err(Error::invalid(format!("client_holdout must be in [0, 1), got {}", self.client_holdout)));
        }
        match self.partition {
            PartitionSpec::Dirichlet { alpha } if !(alpha > 0.0 && alpha.is_finite()) => {
                return Err(Error::invalid(format!("dirichlet alpha must be positive, got {alpha}")));
            }
            PartitionSpec::Shards {
                shard_size,
                shards_per_client,
            } if shard_size == 0 || shards_per_client == 0 => {
                return Err(Error::invalid("shard_size and shards_per_client must be at least 1"));
            }
            _ => {}
        }
        self.model.validate()
    }

    /// Training temperature for a 1-based round.
    pub fn temperature_at(&self, round: usize) -> f64 {
        match &self.temperature_schedule {
            Some(s) => s[round.saturating_sub(1).min(s.len() - 1)],
            None => self.temperature,
        }
    }

    pub fn eval_temperature_at(&self, round: usize) -> f64 {
        self.eval_temperature.unwrap_or_else(|| self.temperature_at(round))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = FLConfig::default();
        c.validate().unwrap();
        assert_eq!(c.learning_rate, 0.001);
        assert_eq!((c.rounds, c.local_epochs, c.participants_per_round, c.batch_size), (300, 10, 10, 16));
    }

    #[test]
    fn invariants() {
        let bad = |f: fn(&mut FLConfig)| {
            let mut c = FLConfig::default();
            f(&mut c);
            c.validate().is_err()
        };
        assert!(bad(|c| c.participants_per_round = 51));
        assert!(bad(|c| c.participants_per_round = 0));
        assert!(bad(|c| c.temperature = 0.0));
        assert!(bad(|c| c.temperature = -1.0));
        assert!(bad(|c| {
            c.algorithm = Algorithm::Scaffold;
            c.learning_rate = 0.0
        }));
        assert!(bad(|c| c.partition = PartitionSpec::Dirichlet { alpha: 0.0 }));
        assert!(bad(|c| c.temperature_schedule = Some(vec![])));
    }

    #[test]
    fn schedule_lookup() {
        let c = FLConfig {
            temperature_schedule: Some(vec![1.0, 0.5]),
            ..FLConfig::default()
        };
        assert_eq!(c.temperature_at(1), 1.0);
        assert_eq!(c.temperature_at(2), 0.5);
        assert_eq!(c.temperature_at(9), 0.5);
    }

    #[test]
    fn json_round_trip() {
        let c = FLConfig {
            temperature: 0.05,
            partition: PartitionSpec::Dirichlet { alpha: 0.1 },
            target_accuracy: Some(0.7),
            ..FLConfig::default()
        };
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<FLConfig>(&s).unwrap(), c);
        assert_eq!(Algorithm::parse("scaffold").unwrap(), Algorithm::Scaffold);
    }
}
