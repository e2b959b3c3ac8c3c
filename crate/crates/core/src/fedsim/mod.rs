//! Federated orchestration: personalized two-stage training with server
//! fine-tuning on virtual data, and the local / FedAvg / FedProx /
//! FedAvg-ft baselines, over a simulated round-synchronous channel.

mod channel;
mod run;
mod train;

pub use channel::{Channel, Direction, Event, Payload};
pub use run::{run, run_baseline, run_pfedcr, RoundState, RunOutput};
pub use train::{local_train_stage1, personalize_stage2, server_finetune, train_epochs, StepConfig};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::datagen::BucketSet;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::optim::AdadeltaConfig;
use crate::params::ParamSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Standalone training, plain CRNN.
    Local,
    /// Standalone training with ECA layers.
    LocalAttention,
    /// Standalone training from a model trained on the virtual corpus.
    LocalPretrain,
    #[serde(rename = "fedavg")]
    FedAvg,
    /// FedAvg plus one extra local epoch after the final round.
    #[serde(rename = "fedavg_ft")]
    FedAvgFt,
    #[serde(rename = "fedprox")]
    FedProx,
    #[serde(rename = "pfedcr")]
    PFedCr,
}

impl Algorithm {
    pub const ALL: [Algorithm; 7] = [
        Algorithm::Local,
        Algorithm::LocalAttention,
        Algorithm::LocalPretrain,
        Algorithm::FedAvg,
        Algorithm::FedAvgFt,
        Algorithm::FedProx,
        Algorithm::PFedCr,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Local => "local",
            Algorithm::LocalAttention => "local_attention",
            Algorithm::LocalPretrain => "local_pretrain",
            Algorithm::FedAvg => "fedavg",
            Algorithm::FedAvgFt => "fedavg_ft",
            Algorithm::FedProx => "fedprox",
            Algorithm::PFedCr => "pfedcr",
        }
    }

    pub fn is_federated(self) -> bool {
        !matches!(self, Algorithm::Local | Algorithm::LocalAttention | Algorithm::LocalPretrain)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown algorithm `{s}`")))
    }
}

/// Component switches of the personalized algorithm.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationFlags {
    pub use_virtual_data: bool,
    pub use_eca: bool,
    pub freeze_head: bool,
    pub stage2: bool,
}

impl AblationFlags {
    pub const ALL_ON: AblationFlags = AblationFlags {
        use_virtual_data: true,
        use_eca: true,
        freeze_head: true,
        stage2: true,
    };
    pub const ALL_OFF: AblationFlags = AblationFlags {
        use_virtual_data: false,
        use_eca: false,
        freeze_head: false,
        stage2: false,
    };
}

impl Default for AblationFlags {
    fn default() -> Self {
        Self::ALL_ON
    }
}

/// Which client models the server averages each round.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregateSource {
    /// The stage-1 models as uploaded.
    #[default]
    Stage1,
    /// The half-way averages of stage-1 model and broadcast global.
    Averaged,
}

/// Evaluation schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Evaluate every `every` rounds; 0 evaluates only the final round.
    pub every: usize,
    /// Cross-client matrix on the final round.
    pub cross: bool,
    /// Frequency-bucket table on the final round.
    pub buckets: Option<BucketSet>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            every: 1,
            cross: true,
            buckets: Some(BucketSet::desk()),
        }
    }
}

impl EvalConfig {
    pub fn evaluates(&self, round: usize, rounds: usize) -> bool {
        round + 1 == rounds || (self.every > 0 && (round + 1).is_multiple_of(self.every))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    pub clients: usize,
    pub rounds: usize,
    pub local_epochs: usize,
    pub server_epochs: usize,
    pub batch_size: usize,
    pub fedprox_mu: f64,
    pub flags: AblationFlags,
    pub seed: u64,
    pub optimizer: AdadeltaConfig,
    /// Epochs on the virtual corpus before standalone training
    /// (`local_pretrain`).
    pub pretrain_epochs: usize,
    /// Extra local epochs after the final round (`fedavg_ft`).
    pub finetune_epochs: usize,
    /// Learning-rate multiplier of those extra epochs; the round schedule
    /// has reached 0 by then.
    pub finetune_lr_scale: f64,
    pub aggregate_source: AggregateSource,
    pub eval: EvalConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::PFedCr,
            clients: 3,
            rounds: 35,
            local_epochs: 1,
            server_epochs: 1,
            batch_size: 128,
            fedprox_mu: 0.01,
            flags: AblationFlags::ALL_ON,
            seed: 0,
            optimizer: AdadeltaConfig::default(),
            pretrain_epochs: 20,
            finetune_epochs: 1,
            finetune_lr_scale: 1.0,
            aggregate_source: AggregateSource::Stage1,
            eval: EvalConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.rounds == 0 {
            return bad("rounds must be >= 1");
        }
        if self.clients == 0 {
            return bad("clients must be >= 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(self.fedprox_mu >= 0.0) {
            return Err(Error::Config(format!("fedprox_mu must be >= 0, got {}", self.fedprox_mu)));
        }
        if !(self.finetune_lr_scale >= 0.0) {
            return bad("finetune_lr_scale must be >= 0");
        }
        self.optimizer.validate()
    }

    /// Flags in force: the configured ones for the personalized algorithm,
    /// all off otherwise.
    pub fn effective_flags(&self) -> AblationFlags {
        match self.algorithm {
            Algorithm::PFedCr => self.flags,
            _ => AblationFlags::ALL_OFF,
        }
    }

    /// The architecture this algorithm trains: ECA layers only for the
    /// attention baseline and for the personalized algorithm with `use_eca`.
    pub fn effective_model(&self, base: &ModelConfig) -> ModelConfig {
        let use_eca = match self.algorithm {
            Algorithm::LocalAttention => true,
            Algorithm::PFedCr => self.flags.use_eca,
            _ => false,
        };
        ModelConfig { use_eca, ..base.clone() }
    }
}

/// Elementwise unweighted mean of client models, summed in client order in
/// 64-bit precision. The result carries fresh optimizer state.
pub fn aggregate(locals: &[&ParamSet]) -> Result<ParamSet> {
    let (first, rest) = locals
        .split_first()
        .ok_or_else(|| Error::Protocol("aggregate needs at least one model".into()))?;
    for other in rest {
        first.check_compatible(other)?;
    }
    let mut out = first.values_only();
    let k = locals.len() as f64;
    for (pi, p) in out.iter_mut().enumerate() {
        for (i, v) in p.value.data_mut().iter_mut().enumerate() {
            let sum: f64 = locals.iter().map(|m| m.get(pi).value.data()[i] as f64).sum();
            *v = (sum / k) as f32;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{Group, Param};
    use crate::tensor::Tensor;

    fn set(v: &[f32]) -> ParamSet {
        ParamSet::new(vec![Param::new("w", Group::Body, Tensor::new(vec![v.len()], v.to_vec()).unwrap())]).unwrap()
    }

    #[test]
    fn mean_of_hand_vectors() {
        let m = aggregate(&[&set(&[1.0, 3.0]), &set(&[3.0, 5.0])]).unwrap();
        assert_eq!(m.get(0).value.data(), &[2.0, 4.0]);
        let one = set(&[0.1, -7.25]);
        assert!(aggregate(&[&one]).unwrap().values_bits_eq(&one, crate::params::GroupSet::ALL));
    }

    #[test]
    fn mismatch_is_a_protocol_error() {
        let e = aggregate(&[&set(&[1.0]), &set(&[1.0, 2.0])]).unwrap_err();
        assert!(matches!(e, Error::Protocol(_)));
        assert!(matches!(aggregate(&[]), Err(Error::Protocol(_))));
    }

    #[test]
    fn algorithm_names_round_trip() {
        for a in Algorithm::ALL {
            assert_eq!(a.as_str().parse::<Algorithm>().unwrap(), a);
            assert_eq!(serde_json::to_string(&a).unwrap(), format!("\"{a}\""));
        }
        assert!("fedsgd".parse::<Algorithm>().is_err());
    }
}
