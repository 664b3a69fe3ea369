//! Coalition games over perturbable prompt positions.

use crate::error::{Error, Result};
use crate::oracle::Oracle;
use crate::tokens::TokenId;

use super::AttributionRequest;

/// A set function `v(S)` over `players()` players, evaluated in batches.
/// `coalitions[j][i]` is true when player `i` is present.
pub trait CoalitionGame {
    fn players(&self) -> usize;
    fn values(&self, coalitions: &[Vec<bool>]) -> Result<Vec<f64>>;
}

/// `v(S)` = SLP of the continuation when every perturbable prompt position
/// outside `S` holds the baseline token.
pub struct OracleGame<'a> {
    oracle: &'a dyn Oracle,
    req: &'a AttributionRequest,
    positions: Vec<usize>,
    baseline: TokenId,
}

impl<'a> OracleGame<'a> {
    pub fn new(oracle: &'a dyn Oracle, req: &'a AttributionRequest, baseline: TokenId) -> Self {
        OracleGame {
            oracle,
            req,
            positions: req.perturbable(),
            baseline,
        }
    }

    /// Prompt positions of the players, in player order.
    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    fn prompt_for(&self, coalition: &[bool]) -> Vec<TokenId> {
        let mut p = self.req.prompt.tokens().to_vec();
        for (&pos, &present) in self.positions.iter().zip(coalition) {
            if !present {
                p[pos] = self.baseline;
            }
        }
        p.extend_from_slice(&self.req.suffix);
        p
    }
}

impl CoalitionGame for OracleGame<'_> {
    fn players(&self) -> usize {
        self.positions.len()
    }

    fn values(&self, coalitions: &[Vec<bool>]) -> Result<Vec<f64>> {
        let prompts: Vec<Vec<TokenId>> = coalitions.iter().map(|c| self.prompt_for(c)).collect();
        let results = self.oracle.logprob_batch(&prompts, &self.req.continuation)?;
        if results.len() != prompts.len() {
            return Err(Error::Protocol("oracle returned the wrong number of results".into()));
        }
        results
            .into_iter()
            .map(|r| {
                if r.slp.is_finite() {
                    Ok(r.slp)
                } else {
                    Err(Error::NonFinite("oracle returned a non-finite SLP".into()))
                }
            })
            .collect()
    }
}

/// A game given by an arbitrary closure over presence masks; handy for
/// synthetic checks.
pub struct FnGame<F> {
    pub players: usize,
    pub f: F,
}

impl<F: Fn(&[bool]) -> f64> CoalitionGame for FnGame<F> {
    fn players(&self) -> usize {
        self.players
    }

    fn values(&self, coalitions: &[Vec<bool>]) -> Result<Vec<f64>> {
        Ok(coalitions.iter().map(|c| (self.f)(c)).collect())
    }
}

/// Evaluates a game on many coalitions in fixed-size batches, preserving
/// order.
pub(crate) fn evaluate(game: &dyn CoalitionGame, coalitions: &[Vec<bool>]) -> Result<Vec<f64>> {
    const BATCH: usize = 64;
    let mut out = Vec::with_capacity(coalitions.len());
    for chunk in coalitions.chunks(BATCH) {
        let v = game.values(chunk)?;
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("coalition value".into()));
        }
        out.extend(v);
    }
    Ok(out)
}

/// Presence mask of the coalition encoded by the low `p` bits of `bits`.
pub(crate) fn mask_from_bits(bits: u64, p: usize) -> Vec<bool> {
    (0..p).map(|i| bits >> i & 1 == 1).collect()
}
