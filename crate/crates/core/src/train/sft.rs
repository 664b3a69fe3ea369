//! Supervised fine-tuning of the adapter on chosen explanations.

use super::{ensure_adapter, epoch_steps, scored_continuation, TrainConfig, TrainReport};
use crate::bank::PreferencePair;
use crate::error::{Error, Result};
use crate::numfmt::q9;
use crate::toylm::optim::AdamW;
use crate::toylm::pretrain::{mean_nll, Example};
use crate::toylm::synth::EOS;
use crate::toylm::{ForwardOptions, GradScope, ScoreItem, ToyModel};

const CHUNK: usize = 4;

/// `(explanation prompt, chosen explanation + EOS)` per pair.
pub fn sft_examples(pairs: &[PreferencePair]) -> Vec<Example> {
    pairs.iter().map(|p| (p.context.clone(), scored_continuation(&p.chosen, EOS))).collect()
}

/// Mean per-token NLL of `batch` and its adapter gradient.
fn sft_objective(model: &ToyModel, batch: &[&Example]) -> Result<(f64, Vec<f64>)> {
    let tokens: usize = batch.iter().map(|(_, c)| c.len()).sum::<usize>().max(1);
    let opts = ForwardOptions::adapter(true);
    let mut grad = vec![0.0; model.adapter.as_ref().map_or(0, |a| a.params.len())];
    let mut loss = 0.0;
    for chunk in batch.chunks(CHUNK) {
        let items: Vec<ScoreItem<'_>> = chunk
            .iter()
            .map(|(p, c)| ScoreItem {
                prompt: p,
                continuation: c,
            })
            .collect();
        let w = vec![-1.0 / tokens as f64; items.len()];
        let (res, g) = model.score_with_grad(&items, &w, GradScope::Adapter, &opts)?;
        loss -= res.iter().map(|r| r.slp).sum::<f64>() / tokens as f64;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    Ok((loss, grad))
}

/// Maximizes the likelihood of `examples` through the adapter only.
pub fn train_sft(model: &mut ToyModel, examples: &[Example], config: &TrainConfig) -> Result<TrainReport> {
    config.validate()?;
    ensure_adapter(model, config)?;
    let n_params = model.adapter.as_ref().expect("adapter attached").params.len();
    let mut opt = AdamW::new(config.optimizer, n_params);
    let mut report = TrainReport {
        kind: "sft".into(),
        ..Default::default()
    };
    let mut step = 0;
    for epoch in 0..config.epochs {
        for micro in epoch_steps(examples.len(), config, epoch) {
            let mut grad = vec![0.0; n_params];
            let mut loss = 0.0;
            for mb in &micro {
                let batch: Vec<&Example> = mb.iter().map(|&i| &examples[i]).collect();
                let (l, g) = sft_objective(model, &batch)?;
                loss += l / micro.len() as f64;
                for (a, b) in grad.iter_mut().zip(&g) {
                    *a += b / micro.len() as f64;
                }
            }
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence { step, loss });
            }
            report.step_losses.push(q9(loss));
            let params = &mut model.adapter.as_mut().expect("adapter attached").params;
            opt.step(params, &grad, config.optimizer.lr);
            step += 1;
        }
        log::info!("sft epoch {epoch}: last step loss {:?}", report.step_losses.last());
    }
    report.final_loss = q9(mean_nll(model, examples, true)?);
    Ok(report)
}
