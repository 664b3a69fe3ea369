//! Shapley values: brute-force enumeration and the kernel-weighted
//! regression estimator (KernelSHAP).

use serde::{Deserialize, Serialize};

use super::game::{evaluate, mask_from_bits, CoalitionGame, OracleGame};
use super::regress::weighted_ridge;
use super::{AttributionRequest, AttributionVector, Method};
use crate::error::{Error, Result};
use crate::oracle::Oracle;
use crate::rng::Rng;
use crate::tokens::TokenId;

/// Exact enumeration is refused above this many players.
pub const MAX_EXACT_PLAYERS: usize = 12;

/// Above this many players KernelSHAP never enumerates exhaustively.
const MAX_ENUMERATED: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KshapParams {
    /// Coalitions sampled besides the empty and full ones. When this
    /// reaches `2^p − 2` every coalition is enumerated instead.
    pub n_samples: usize,
    pub baseline: TokenId,
}

impl Default for KshapParams {
    fn default() -> Self {
        KshapParams {
            n_samples: 500,
            baseline: 0,
        }
    }
}

impl KshapParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::config("kshap.n_samples", "must be positive"));
        }
        Ok(())
    }
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Shapley values of `game` by enumerating all `2^p` coalitions.
pub fn exact_shapley(game: &dyn CoalitionGame) -> Result<Vec<f64>> {
    let p = game.players();
    if p > MAX_EXACT_PLAYERS {
        return Err(Error::TooManyPlayers {
            players: p,
            max: MAX_EXACT_PLAYERS,
        });
    }
    if p == 0 {
        return Ok(Vec::new());
    }
    let coalitions: Vec<Vec<bool>> = (0..1u64 << p).map(|b| mask_from_bits(b, p)).collect();
    let v = evaluate(game, &coalitions)?;
    // weight of a coalition of size s not containing the player
    let pf = factorial(p);
    let w: Vec<f64> = (0..p).map(|s| factorial(s) * factorial(p - s - 1) / pf).collect();
    let mut phi = vec![0.0; p];
    for (i, out) in phi.iter_mut().enumerate() {
        let bit = 1usize << i;
        let mut acc = 0.0;
        for s in 0..1usize << p {
            if s & bit == 0 {
                acc += w[s.count_ones() as usize] * (v[s | bit] - v[s]);
            }
        }
        *out = acc;
    }
    Ok(phi)
}

/// KernelSHAP: weighted least squares over coalitions with the Shapley
/// kernel `(p−1) / (C(p,s)·s·(p−s))`, the efficiency constraint
/// `Σφ = v(full) − v(∅)` imposed exactly by eliminating the last player.
pub fn kernel_shap(game: &dyn CoalitionGame, n_samples: usize, rng: &mut Rng) -> Result<Vec<f64>> {
    let p = game.players();
    if p == 0 {
        return Ok(Vec::new());
    }
    let ends = evaluate(game, &[vec![false; p], vec![true; p]])?;
    let (v0, v1) = (ends[0], ends[1]);
    let total = v1 - v0;
    if p == 1 {
        return Ok(vec![total]);
    }
    let exhaustive = p <= MAX_ENUMERATED && n_samples as u64 >= (1u64 << p) - 2;
    let (coalitions, weights): (Vec<Vec<bool>>, Vec<f64>) = if exhaustive {
        (1..(1u64 << p) - 1)
            .map(|b| {
                let m = mask_from_bits(b, p);
                let s = b.count_ones() as usize;
                let w = (p - 1) as f64 / (binomial(p, s) * s as f64 * (p - s) as f64);
                (m, w)
            })
            .unzip()
    } else {
        // sizes drawn in proportion to the kernel's total mass per size, so
        // each sampled coalition carries unit weight
        let size_mass: Vec<f64> = (1..p).map(|s| (p - 1) as f64 / (s * (p - s)) as f64).collect();
        let mass: f64 = size_mass.iter().sum();
        (0..n_samples)
            .map(|_| {
                let mut u = rng.uniform() * mass;
                let mut s = p - 1;
                for (i, m) in size_mass.iter().enumerate() {
                    if u < *m {
                        s = i + 1;
                        break;
                    }
                    u -= m;
                }
                let mut z = vec![false; p];
                for i in rng.subset(p, s) {
                    z[i] = true;
                }
                (z, 1.0)
            })
            .unzip()
    };
    let values = evaluate(game, &coalitions)?;
    let last = p - 1;
    let rows: Vec<Vec<f64>> = coalitions
        .iter()
        .map(|z| {
            let zl = if z[last] { 1.0 } else { 0.0 };
            (0..last).map(|i| if z[i] { 1.0 } else { 0.0 } - zl).collect()
        })
        .collect();
    let y: Vec<f64> = coalitions
        .iter()
        .zip(&values)
        .map(|(z, v)| v - v0 - if z[last] { total } else { 0.0 })
        .collect();
    let (_, head) = weighted_ridge(&rows, &y, &weights, 0.0, false)?;
    let mut phi = head;
    let rest: f64 = phi.iter().sum();
    phi.push(total - rest);
    Ok(phi)
}

pub fn attribute_exact_shapley(oracle: &dyn Oracle, req: &AttributionRequest, baseline: TokenId) -> Result<AttributionVector> {
    if !oracle.capabilities()?.can_logprob {
        return Err(Error::CapabilityMissing("logprob"));
    }
    let game = OracleGame::new(oracle, req, baseline);
    if game.players() > MAX_EXACT_PLAYERS {
        return Err(Error::TooManyPlayers {
            players: game.players(),
            max: MAX_EXACT_PLAYERS,
        });
    }
    let target = req.target_slp(oracle)?;
    let phi = exact_shapley(&game)?;
    AttributionVector::scatter(Method::ExactShapley, target, req.prompt.skip_mask(), game.positions(), &phi)
}

pub fn attribute_kshap(oracle: &dyn Oracle, req: &AttributionRequest, params: &KshapParams, rng: &mut Rng) -> Result<AttributionVector> {
    if !oracle.capabilities()?.can_logprob {
        return Err(Error::CapabilityMissing("logprob"));
    }
    params.validate()?;
    let target = req.target_slp(oracle)?;
    let game = OracleGame::new(oracle, req, params.baseline);
    let phi = kernel_shap(&game, params.n_samples, rng)?;
    AttributionVector::scatter(Method::Kshap, target, req.prompt.skip_mask(), game.positions(), &phi)
}
