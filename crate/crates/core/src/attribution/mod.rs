//! Token-level attribution of a continuation's SLP to prompt tokens.
//!
//! Four estimators share one request shape: LIME and KernelSHAP fit
//! surrogates to token-replacement perturbations, exact Shapley enumerates
//! every coalition, and LIG integrates embedding gradients along a straight
//! path from a baseline. Skip-masked positions are never perturbed and
//! always score exactly zero.

pub mod game;
pub mod lig;
pub mod lime;
pub mod regress;
pub mod shapley;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::Oracle;
use crate::rng::Rng;
use crate::tokens::{TokenId, TokenSequence};

pub use game::{CoalitionGame, FnGame, OracleGame};
pub use lig::{attribute_lig, attribute_lig_detailed, LigBaseline, LigOutput, LigParams, Quadrature};
pub use lime::{attribute_lime, lime_fit, LimeParams, MaskDistribution};
pub use shapley::{attribute_exact_shapley, attribute_kshap, exact_shapley, kernel_shap, KshapParams, MAX_EXACT_PLAYERS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Lime,
    Lig,
    ExactShapley,
    Kshap,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Lime => "lime",
            Method::Lig => "lig",
            Method::ExactShapley => "exact_shapley",
            Method::Kshap => "kshap",
        }
    }

    pub fn parse(s: &str) -> Result<Method> {
        match s {
            "lime" => Ok(Method::Lime),
            "lig" => Ok(Method::Lig),
            "exact_shapley" | "shapley" => Ok(Method::ExactShapley),
            "kshap" => Ok(Method::Kshap),
            _ => Err(Error::config("method", format!("unknown attribution method `{s}`"))),
        }
    }
}

/// Importance of each prompt token for generating a continuation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributionVector {
    pub scores: Vec<f64>,
    pub method: Method,
    /// SLP of the continuation under the unperturbed prompt.
    pub target_slp: f64,
    pub skip_mask: Vec<bool>,
}

impl AttributionVector {
    /// Checks the invariants: equal lengths, exact zeros under the mask,
    /// finite scores.
    pub fn new(scores: Vec<f64>, method: Method, target_slp: f64, skip_mask: Vec<bool>) -> Result<Self> {
        if scores.len() != skip_mask.len() {
            return Err(Error::invalid("attribution scores and skip mask differ in length"));
        }
        if scores.iter().any(|s| !s.is_finite()) || !target_slp.is_finite() {
            return Err(Error::NonFinite(format!("{} attribution", method.name())));
        }
        if scores.iter().zip(&skip_mask).any(|(s, &m)| m && *s != 0.0) {
            return Err(Error::invalid("masked positions must score exactly zero"));
        }
        Ok(AttributionVector {
            scores,
            method,
            target_slp,
            skip_mask,
        })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Places per-player scores at their prompt positions, zero elsewhere.
    pub(crate) fn scatter(method: Method, target_slp: f64, skip_mask: &[bool], positions: &[usize], values: &[f64]) -> Result<Self> {
        let mut scores = vec![0.0; skip_mask.len()];
        for (&pos, &v) in positions.iter().zip(values) {
            scores[pos] = v;
        }
        Self::new(scores, method, target_slp, skip_mask.to_vec())
    }
}

/// What to attribute: the SLP of `continuation` after `prompt ++ suffix`.
/// Only the prompt's unmasked positions are perturbed or scored; the suffix
/// (for explanations: the decision and the explanation marker) is context
/// that is never perturbed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributionRequest {
    pub prompt: TokenSequence,
    #[serde(default)]
    pub suffix: Vec<TokenId>,
    pub continuation: Vec<TokenId>,
}

impl AttributionRequest {
    pub fn new(prompt: TokenSequence, suffix: Vec<TokenId>, continuation: Vec<TokenId>) -> Self {
        AttributionRequest {
            prompt,
            suffix,
            continuation,
        }
    }

    pub fn perturbable(&self) -> Vec<usize> {
        self.prompt.unmasked()
    }

    pub fn full_prompt(&self) -> Vec<TokenId> {
        let mut p = self.prompt.tokens().to_vec();
        p.extend_from_slice(&self.suffix);
        p
    }

    pub fn target_slp(&self, oracle: &dyn Oracle) -> Result<f64> {
        let r = oracle.logprob(&self.full_prompt(), &self.continuation)?;
        if !r.slp.is_finite() {
            return Err(Error::NonFinite("target SLP".into()));
        }
        Ok(r.slp)
    }
}

/// Estimator choice plus its parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum MethodParams {
    Lime(LimeParams),
    Lig(LigParams),
    ExactShapley {
        #[serde(default)]
        baseline: TokenId,
    },
    Kshap(KshapParams),
}

impl MethodParams {
    pub fn method(&self) -> Method {
        match self {
            MethodParams::Lime(_) => Method::Lime,
            MethodParams::Lig(_) => Method::Lig,
            MethodParams::ExactShapley { .. } => Method::ExactShapley,
            MethodParams::Kshap(_) => Method::Kshap,
        }
    }

    pub fn default_for(method: Method) -> Self {
        match method {
            Method::Lime => MethodParams::Lime(LimeParams::default()),
            Method::Lig => MethodParams::Lig(LigParams::default()),
            Method::ExactShapley => MethodParams::ExactShapley { baseline: 0 },
            Method::Kshap => MethodParams::Kshap(KshapParams::default()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            MethodParams::Lime(p) => p.validate(),
            MethodParams::Lig(p) => p.validate(),
            MethodParams::ExactShapley { .. } => Ok(()),
            MethodParams::Kshap(p) => p.validate(),
        }
    }

    /// Whether the estimator consumes randomness.
    pub fn is_stochastic(&self) -> bool {
        match self {
            MethodParams::Lime(p) => p.masks != MaskDistribution::Exhaustive,
            MethodParams::Kshap(_) => true,
            _ => false,
        }
    }
}

/// Runs the chosen estimator.
pub fn attribute(oracle: &dyn Oracle, req: &AttributionRequest, params: &MethodParams, rng: &mut Rng) -> Result<AttributionVector> {
    match params {
        MethodParams::Lime(p) => attribute_lime(oracle, req, p, rng),
        MethodParams::Lig(p) => attribute_lig(oracle, req, p),
        MethodParams::ExactShapley { baseline } => attribute_exact_shapley(oracle, req, *baseline),
        MethodParams::Kshap(p) => attribute_kshap(oracle, req, p, rng),
    }
}
