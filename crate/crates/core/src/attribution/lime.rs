//! LIME: a locally weighted linear surrogate over token-presence masks.

use serde::{Deserialize, Serialize};

use super::game::{evaluate, mask_from_bits, CoalitionGame, OracleGame};
use super::regress::weighted_ridge;
use super::{AttributionRequest, AttributionVector, Method};
use crate::error::{Error, Result};
use crate::oracle::Oracle;
use crate::rng::Rng;
use crate::tokens::TokenId;

/// How perturbation masks are drawn.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskDistribution {
    /// Removal count uniform in `0..=p`, then a uniform subset of that size.
    UniformCount,
    /// Every one of the `2^p` masks once; `n_samples` is ignored.
    Exhaustive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LimeParams {
    pub n_samples: usize,
    /// Token written over removed positions.
    pub baseline: TokenId,
    /// Width σ of the kernel `exp(−d²/σ²)` on cosine distance to the
    /// unperturbed mask.
    pub kernel_width: f64,
    pub ridge: f64,
    pub masks: MaskDistribution,
}

impl Default for LimeParams {
    fn default() -> Self {
        LimeParams {
            n_samples: 500,
            baseline: 0,
            kernel_width: 0.25,
            ridge: 1e-3,
            masks: MaskDistribution::UniformCount,
        }
    }
}

impl LimeParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::config("lime.n_samples", "must be positive"));
        }
        if !(self.kernel_width > 0.0 && self.kernel_width.is_finite()) {
            return Err(Error::config("lime.kernel_width", "must be positive"));
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return Err(Error::config("lime.ridge", "must be non-negative"));
        }
        Ok(())
    }
}

/// Largest player count for exhaustive masks.
const MAX_EXHAUSTIVE: usize = 20;

fn draw_masks(p: usize, params: &LimeParams, rng: &mut Rng) -> Result<Vec<Vec<bool>>> {
    match params.masks {
        MaskDistribution::Exhaustive => {
            if p > MAX_EXHAUSTIVE {
                return Err(Error::config("lime.masks", format!("exhaustive masks need p ≤ {MAX_EXHAUSTIVE}, got {p}")));
            }
            Ok((0..1u64 << p).map(|b| mask_from_bits(b, p)).collect())
        }
        MaskDistribution::UniformCount => {
            if params.n_samples < p + 2 {
                return Err(Error::config(
                    "lime.n_samples",
                    format!("{} samples cannot fit {p} features plus an intercept", params.n_samples),
                ));
            }
            Ok((0..params.n_samples)
                .map(|_| {
                    let removed = rng.below(p + 1);
                    let mut z = vec![true; p];
                    for i in rng.subset(p, removed) {
                        z[i] = false;
                    }
                    z
                })
                .collect())
        }
    }
}

/// Kernel weight of a mask with `present` of `p` players kept. The cosine
/// similarity between the mask and all-ones is `√(present/p)`; the empty
/// mask is at distance 1.
pub fn kernel_weight(present: usize, p: usize, width: f64) -> f64 {
    let d = if present == 0 {
        1.0
    } else {
        1.0 - (present as f64 / p as f64).sqrt()
    };
    (-(d * d) / (width * width)).exp()
}

/// Fits the surrogate and returns one coefficient per player.
pub fn lime_fit(game: &dyn CoalitionGame, params: &LimeParams, rng: &mut Rng) -> Result<Vec<f64>> {
    params.validate()?;
    let p = game.players();
    if p == 0 {
        return Ok(Vec::new());
    }
    let masks = draw_masks(p, params, rng)?;
    if masks.iter().all(|m| m == &masks[0]) {
        return Err(Error::Estimator("all perturbation masks are identical".into()));
    }
    let values = evaluate(game, &masks)?;
    let weights: Vec<f64> = masks
        .iter()
        .map(|m| kernel_weight(m.iter().filter(|&&b| b).count(), p, params.kernel_width))
        .collect();
    let rows: Vec<Vec<f64>> = masks
        .iter()
        .map(|m| m.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect())
        .collect();
    let (_, coefs) = weighted_ridge(&rows, &values, &weights, params.ridge, true)?;
    Ok(coefs)
}

pub fn attribute_lime(oracle: &dyn Oracle, req: &AttributionRequest, params: &LimeParams, rng: &mut Rng) -> Result<AttributionVector> {
    if !oracle.capabilities()?.can_logprob {
        return Err(Error::CapabilityMissing("logprob"));
    }
    params.validate()?;
    let target = req.target_slp(oracle)?;
    let game = OracleGame::new(oracle, req, params.baseline);
    let coefs = lime_fit(&game, params, rng)?;
    AttributionVector::scatter(Method::Lime, target, req.prompt.skip_mask(), game.positions(), &coefs)
}
