//! Adapter fine-tuning on bank pairs: DPO against the adapter-off reference,
//! and an SFT baseline on chosen explanations only.

pub mod dpo;
pub mod sft;

use serde::{Deserialize, Serialize};

use crate::bank::PreferencePair;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tokens::TokenId;
use crate::toylm::optim::AdamWConfig;
use crate::toylm::{AdapterConfig, ToyModel};

pub use dpo::{dpo_loss, dpo_objective, train_dpo, PairScores};
pub use sft::{sft_examples, train_sft};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Toy,
    Replication,
}

impl Profile {
    pub fn parse(s: &str) -> Result<Profile> {
        match s {
            "toy" => Ok(Profile::Toy),
            "replication" => Ok(Profile::Replication),
            _ => Err(Error::config("profile", format!("unknown profile `{s}` (toy, replication)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// DPO temperature; unused by SFT.
    pub beta: f64,
    pub optimizer: AdamWConfig,
    pub epochs: usize,
    /// Pairs per micro-batch.
    pub batch_size: usize,
    /// Micro-batches averaged per optimizer step.
    pub grad_accum: usize,
    /// When set, each pair's loss is weighted by `tanh(score_scale · Δ)`
    /// where `Δ` is the alignment margin between chosen and rejected.
    #[serde(default)]
    pub score_scale: Option<f64>,
    pub adapter: AdapterConfig,
    pub seed: u64,
}

/// Rows of the replication hyperparameter table.
pub const REPLICATION_ROWS: [(&str, f64, f64); 4] = [
    ("ecqa-l3.1", 4.21e-6, 5.13),
    ("arc-easy-l3.1", 4.65e-6, 5.64),
    ("ecqa-l3.2", 9.55e-6, 8.44),
    ("arc-easy-l3.2", 6.32e-6, 8.84),
];

pub const REPLICATION_SFT_LR: f64 = 6.95e-6;

impl TrainConfig {
    pub fn toy() -> Self {
        TrainConfig {
            beta: 0.5,
            optimizer: AdamWConfig::new(1e-4),
            epochs: 10,
            batch_size: 16,
            grad_accum: 1,
            score_scale: None,
            adapter: AdapterConfig { rank: 8, alpha: 16.0 },
            seed: 42,
        }
    }

    /// One row of the replication table by name.
    pub fn replication(row: &str) -> Result<Self> {
        let (_, lr, beta) = REPLICATION_ROWS
            .iter()
            .find(|(name, ..)| *name == row)
            .ok_or_else(|| Error::config("train.row", format!("unknown replication row `{row}`")))?;
        Ok(TrainConfig {
            beta: *beta,
            optimizer: AdamWConfig::new(*lr),
            epochs: 10,
            batch_size: 16,
            grad_accum: 8,
            score_scale: Some(10.0),
            adapter: AdapterConfig { rank: 32, alpha: 32.0 },
            seed: 42,
        })
    }

    pub fn for_profile(profile: Profile) -> Self {
        match profile {
            Profile::Toy => Self::toy(),
            Profile::Replication => Self::replication(REPLICATION_ROWS[0].0).expect("first row exists"),
        }
    }

    /// SFT variant: same adapter, epochs, batching and optimizer, its own rate.
    pub fn sft(profile: Profile) -> Self {
        let mut c = Self::for_profile(profile);
        if profile == Profile::Replication {
            c.optimizer.lr = REPLICATION_SFT_LR;
        }
        c.score_scale = None;
        c
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::config("train.beta", "must be positive"));
        }
        if self.batch_size == 0 || self.grad_accum == 0 {
            return Err(Error::config("train.batch_size", "batch size and accumulation must be positive"));
        }
        if self.adapter.rank == 0 {
            return Err(Error::config("train.adapter.rank", "must be positive"));
        }
        if let Some(s) = self.score_scale {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::config("train.score_scale", "must be positive"));
            }
        }
        self.optimizer.validate()
    }

    pub fn pair_weight(&self, pair: &PreferencePair) -> f64 {
        match self.score_scale {
            Some(s) => (s * pair.margin).tanh(),
            None => 1.0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub kind: String,
    /// Mean loss of each optimizer step's batch.
    pub step_losses: Vec<f64>,
    /// DPO: mean implicit-reward margin `β·m` over all pairs after each epoch.
    pub epoch_margin: Vec<f64>,
    /// DPO: fraction of pairs whose chosen implicit reward beats the rejected.
    pub epoch_accuracy: Vec<f64>,
    /// Mean loss over all training items after the last epoch.
    pub final_loss: f64,
    pub final_accuracy: Option<f64>,
    pub checkpoints: Vec<String>,
}

/// Continuation scored for an explanation: its tokens plus end-of-sequence.
pub fn scored_continuation(explanation: &[TokenId], eos: TokenId) -> Vec<TokenId> {
    let mut c = explanation.to_vec();
    c.push(eos);
    c
}

pub(crate) fn ensure_adapter(model: &mut ToyModel, config: &TrainConfig) -> Result<()> {
    if model.adapter.is_none() {
        model.attach_adapter(config.adapter, &mut Rng::named(config.seed, "adapter"))?;
    }
    Ok(())
}

/// Item order for one epoch, micro-batched and grouped into optimizer steps.
pub(crate) fn epoch_steps(n: usize, config: &TrainConfig, epoch: usize) -> Vec<Vec<Vec<usize>>> {
    let mut order: Vec<usize> = (0..n).collect();
    Rng::named(config.seed, "train").derive("epoch", epoch as u64).shuffle(&mut order);
    let micro: Vec<Vec<usize>> = order.chunks(config.batch_size).map(<[usize]>::to_vec).collect();
    micro.chunks(config.grad_accum).map(<[Vec<usize>]>::to_vec).collect()
}
