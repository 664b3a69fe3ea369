//! Next-token pretraining of the base toy model.

use serde::{Deserialize, Serialize};

use super::model::{ForwardOptions, GradScope, ModelConfig, ScoreItem, ToyModel};
use super::synth::{generate_task_corpus, pretraining_example, TaskProfile};
use super::optim::{AdamW, AdamWConfig};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tokens::TokenId;

/// A training sequence: loss is taken on the continuation only.
pub type Example = (Vec<TokenId>, Vec<TokenId>);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainSchedule {
    pub steps: usize,
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
    /// Linear warmup steps, then cosine decay to `final_lr_frac · lr`.
    #[serde(default)]
    pub warmup: usize,
    #[serde(default = "default_final_frac")]
    pub final_lr_frac: f64,
    pub seed: u64,
}

fn default_final_frac() -> f64 {
    0.1
}

impl PretrainSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("pretrain.batch_size", "must be positive"));
        }
        self.optimizer.validate()
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        let lr = self.optimizer.lr;
        if step < self.warmup {
            return lr * (step + 1) as f64 / self.warmup as f64;
        }
        let span = self.steps.saturating_sub(self.warmup).max(1) as f64;
        let t = ((step - self.warmup) as f64 / span).min(1.0);
        let floor = self.final_lr_frac * lr;
        floor + 0.5 * (lr - floor) * (1.0 + (std::f64::consts::PI * t).cos())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    /// Mean per-token negative log-likelihood of each step's batch.
    pub losses: Vec<f64>,
    pub initial_heldout_nll: Option<f64>,
    pub final_heldout_nll: Option<f64>,
}

/// Mean per-token negative log-likelihood of the continuations.
pub fn mean_nll(model: &ToyModel, examples: &[Example], use_adapter: bool) -> Result<f64> {
    let opts = ForwardOptions::adapter(use_adapter);
    let (mut total, mut tokens) = (0.0, 0usize);
    for chunk in examples.chunks(8) {
        let items: Vec<ScoreItem<'_>> = chunk
            .iter()
            .map(|(p, c)| ScoreItem {
                prompt: p,
                continuation: c,
            })
            .collect();
        for r in model.score(&items, &opts)? {
            total -= r.slp;
            tokens += r.per_token_logprob.len();
        }
    }
    Ok(if tokens == 0 { 0.0 } else { total / tokens as f64 })
}

/// Trains all base parameters on `train`; `heldout` (possibly empty) is
/// scored before and after. Zero steps leave the model untouched.
pub fn pretrain_toy(model: &mut ToyModel, train: &[Example], heldout: &[Example], schedule: &PretrainSchedule) -> Result<PretrainReport> {
    schedule.validate()?;
    if train.is_empty() {
        return Err(Error::invalid("pretraining corpus is empty"));
    }
    let mut report = PretrainReport::default();
    if !heldout.is_empty() {
        report.initial_heldout_nll = Some(mean_nll(model, heldout, false)?);
    }
    let mut opt = AdamW::new(schedule.optimizer, model.params.len());
    let mut rng = Rng::named(schedule.seed, "pretrain");
    let opts = ForwardOptions::adapter(false);
    for step in 0..schedule.steps {
        let batch: Vec<&Example> = (0..schedule.batch_size).map(|_| &train[rng.below(train.len())]).collect();
        let tokens: usize = batch.iter().map(|(_, c)| c.len()).sum();
        let items: Vec<ScoreItem<'_>> = batch
            .iter()
            .map(|(p, c)| ScoreItem {
                prompt: p,
                continuation: c,
            })
            .collect();
        let weights = vec![-1.0 / tokens.max(1) as f64; items.len()];
        let (results, grad) = model.score_with_grad(&items, &weights, GradScope::Base, &opts)?;
        let loss = -results.iter().map(|r| r.slp).sum::<f64>() / tokens.max(1) as f64;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence { step, loss });
        }
        report.losses.push(loss);
        opt.step(&mut model.params, &grad, schedule.lr_at(step));
        if step % 500 == 0 {
            log::info!("pretrain step {step}: loss {loss:.4}");
        }
    }
    if !heldout.is_empty() {
        report.final_heldout_nll = Some(mean_nll(model, heldout, false)?);
    }
    Ok(report)
}

/// Everything needed to rebuild a pretrained toy base model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyRecipe {
    pub model: ModelConfig,
    pub init_seed: u64,
    /// Task profiles mixed into the pretraining corpus.
    pub profiles: Vec<String>,
    pub tasks_per_profile: usize,
    /// Held out from each profile's tasks for the NLL report.
    pub heldout_per_profile: usize,
    pub task_seed: u64,
    pub example_seed: u64,
    pub schedule: PretrainSchedule,
}

impl Default for ToyRecipe {
    fn default() -> Self {
        ToyRecipe {
            model: ModelConfig {
                width: 32,
                mlp_hidden: 64,
                ..ModelConfig::default()
            },
            init_seed: 1,
            profiles: vec!["alpha".into(), "beta".into()],
            tasks_per_profile: 4000,
            heldout_per_profile: 200,
            task_seed: 7,
            example_seed: 9,
            schedule: PretrainSchedule {
                steps: 6000,
                batch_size: 16,
                optimizer: AdamWConfig {
                    clip_norm: Some(1.0),
                    ..AdamWConfig::new(3e-3)
                },
                warmup: 100,
                final_lr_frac: 0.1,
                seed: 3,
            },
        }
    }
}

/// Builds the pretraining corpus of a recipe as `(train, heldout)`.
pub fn recipe_examples(recipe: &ToyRecipe) -> Result<(Vec<Example>, Vec<Example>)> {
    if recipe.heldout_per_profile > recipe.tasks_per_profile {
        return Err(Error::config("pretrain.heldout_per_profile", "exceeds tasks_per_profile"));
    }
    let (mut train, mut heldout) = (Vec::new(), Vec::new());
    for name in &recipe.profiles {
        let profile = TaskProfile::by_name(name)?;
        let tasks = generate_task_corpus(&Rng::named(recipe.task_seed, &profile.name), recipe.tasks_per_profile, &profile)?;
        let mut rng = Rng::named(recipe.example_seed, "examples").derive(&profile.name, 0);
        let cut = recipe.tasks_per_profile - recipe.heldout_per_profile;
        for (i, task) in tasks.iter().enumerate() {
            let ex = pretraining_example(task, &profile, &mut rng);
            if i < cut {
                train.push(ex);
            } else {
                heldout.push(ex);
            }
        }
    }
    Ok((train, heldout))
}

pub fn pretrain_recipe(recipe: &ToyRecipe) -> Result<(ToyModel, PretrainReport)> {
    let mut model = ToyModel::init(recipe.model.clone(), &mut Rng::named(recipe.init_seed, "init"))?;
    let (train, heldout) = recipe_examples(recipe)?;
    let report = pretrain_toy(&mut model, &train, &heldout, &recipe.schedule)?;
    Ok((model, report))
}
