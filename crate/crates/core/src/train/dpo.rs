//! Direct preference optimization of the adapter.

use super::{ensure_adapter, epoch_steps, scored_continuation, TrainConfig, TrainReport};
use crate::bank::PreferencePair;
use crate::error::{Error, Result};
use crate::numfmt::q9;
use crate::oracle::LogProbResult;
use crate::tokens::TokenId;
use crate::toylm::optim::AdamW;
use crate::toylm::synth::EOS;
use crate::toylm::{ForwardOptions, GradScope, ScoreItem, ToyModel};

/// Pairs scored per forward pass.
const PAIR_CHUNK: usize = 2;

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `(loss, m)` with `m = (π_c − ref_c) − (π_r − ref_r)` and
/// `loss = −log σ(β·m) = softplus(−β·m)`.
pub fn dpo_loss(policy: (f64, f64), reference: (f64, f64), beta: f64) -> Result<(f64, f64)> {
    let all = [policy.0, policy.1, reference.0, reference.1, beta];
    if all.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("DPO inputs".into()));
    }
    let m = (policy.0 - reference.0) - (policy.1 - reference.1);
    Ok((softplus(-beta * m), m))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairScores {
    pub chosen: f64,
    pub rejected: f64,
}

struct PairItems {
    context: Vec<TokenId>,
    chosen: Vec<TokenId>,
    rejected: Vec<TokenId>,
}

fn items_of(pairs: &[PreferencePair]) -> Vec<PairItems> {
    pairs
        .iter()
        .map(|p| PairItems {
            context: p.context.clone(),
            chosen: scored_continuation(&p.chosen, EOS),
            rejected: scored_continuation(&p.rejected, EOS),
        })
        .collect()
}

fn score_items<'a>(items: impl Iterator<Item = &'a PairItems>) -> Vec<ScoreItem<'a>> {
    items
        .flat_map(|p| {
            [
                ScoreItem {
                    prompt: &p.context,
                    continuation: &p.chosen,
                },
                ScoreItem {
                    prompt: &p.context,
                    continuation: &p.rejected,
                },
            ]
        })
        .collect()
}

fn pair_slps(model: &ToyModel, items: &[PairItems], use_adapter: bool) -> Result<Vec<PairScores>> {
    let opts = ForwardOptions::adapter(use_adapter);
    let mut out = Vec::with_capacity(items.len());
    for chunk in items.chunks(PAIR_CHUNK) {
        let r = model.score(&score_items(chunk.iter()), &opts)?;
        out.extend(r.chunks(2).map(|c| PairScores {
            chosen: c[0].slp,
            rejected: c[1].slp,
        }));
    }
    Ok(out)
}

/// Reference log-likelihoods: the same model with its adapter disabled.
pub fn reference_scores(model: &ToyModel, pairs: &[PreferencePair]) -> Result<Vec<PairScores>> {
    pair_slps(model, &items_of(pairs), false)
}

/// Weighted mean DPO loss over `pairs` and its gradient with respect to
/// the adapter parameters.
pub fn dpo_objective(model: &ToyModel, pairs: &[PreferencePair], refs: &[PairScores], config: &TrainConfig) -> Result<(f64, Vec<f64>)> {
    assert_eq!(pairs.len(), refs.len(), "one reference per pair");
    let n = pairs.len().max(1) as f64;
    let items = items_of(pairs);
    let opts = ForwardOptions::adapter(true);
    let mut grad = vec![0.0; model.adapter.as_ref().map_or(0, |a| a.params.len())];
    let mut loss = 0.0;
    let beta = config.beta;
    for (c, chunk) in items.chunks(PAIR_CHUNK).enumerate() {
        let base = c * PAIR_CHUNK;
        let mut chunk_loss = Ok(0.0);
        let (_, g) = model.score_with_grad_by(&score_items(chunk.iter()), GradScope::Adapter, &opts, |res: &[LogProbResult]| {
            let mut w = Vec::with_capacity(res.len());
            let mut acc = 0.0;
            for (j, r) in res.chunks(2).enumerate() {
                let (pair, reference) = (&pairs[base + j], refs[base + j]);
                let weight = config.pair_weight(pair);
                match dpo_loss((r[0].slp, r[1].slp), (reference.chosen, reference.rejected), beta) {
                    Ok((l, m)) => {
                        acc += weight * l;
                        let s = sigmoid(-beta * m);
                        w.push(-beta * s * weight / n);
                        w.push(beta * s * weight / n);
                    }
                    Err(e) => {
                        chunk_loss = Err(e);
                        w.extend([0.0, 0.0]);
                    }
                }
            }
            if let Ok(l) = &mut chunk_loss {
                *l = acc;
            }
            w
        })?;
        loss += chunk_loss?;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    Ok((loss / n, grad))
}

/// Mean loss, mean implicit-reward margin `β·m`, and pair accuracy under
/// the adapted model.
pub fn evaluate_pairs(model: &ToyModel, pairs: &[PreferencePair], refs: &[PairScores], config: &TrainConfig) -> Result<(f64, f64, f64)> {
    if pairs.is_empty() {
        return Ok((0.0, 0.0, 0.0));
    }
    let policy = pair_slps(model, &items_of(pairs), true)?;
    let (mut loss, mut margin, mut wins) = (0.0, 0.0, 0usize);
    for ((p, r), pair) in policy.iter().zip(refs).zip(pairs) {
        let (l, m) = dpo_loss((p.chosen, p.rejected), (r.chosen, r.rejected), config.beta)?;
        loss += config.pair_weight(pair) * l;
        margin += config.beta * m;
        wins += (m > 0.0) as usize;
    }
    let n = pairs.len() as f64;
    Ok((loss / n, margin / n, wins as f64 / n))
}

/// Trains the adapter (attached fresh when absent) on `pairs`. Base
/// parameters are never touched, so the adapter-off forward is the
/// reference policy throughout.
pub fn train_dpo(model: &mut ToyModel, pairs: &[PreferencePair], config: &TrainConfig) -> Result<TrainReport> {
    config.validate()?;
    ensure_adapter(model, config)?;
    let refs = reference_scores(model, pairs)?;
    let n_params = model.adapter.as_ref().expect("adapter attached").params.len();
    let mut opt = AdamW::new(config.optimizer, n_params);
    let mut report = TrainReport {
        kind: "dpo".into(),
        ..Default::default()
    };
    let mut step = 0;
    for epoch in 0..config.epochs {
        for micro in epoch_steps(pairs.len(), config, epoch) {
            let mut grad = vec![0.0; n_params];
            let mut loss = 0.0;
            for mb in &micro {
                let sub: Vec<PreferencePair> = mb.iter().map(|&i| pairs[i].clone()).collect();
                let sub_refs: Vec<PairScores> = mb.iter().map(|&i| refs[i]).collect();
                let (l, g) = dpo_objective(model, &sub, &sub_refs, config)?;
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
        let (l, m, acc) = evaluate_pairs(model, pairs, &refs, config)?;
        log::info!("dpo epoch {epoch}: loss {l:.4} margin {m:.4} accuracy {acc:.3}");
        report.epoch_margin.push(q9(m));
        report.epoch_accuracy.push(q9(acc));
    }
    let (l, _, acc) = evaluate_pairs(model, pairs, &refs, config)?;
    report.final_loss = q9(l);
    report.final_accuracy = Some(q9(acc));
    Ok(report)
}
