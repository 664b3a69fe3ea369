//! Abstract access to an autoregressive language model.
//!
//! An [`Oracle`] scores continuations (teacher-forced log-probabilities) and
//! samples continuations with nucleus decoding. Gradient access is a separate
//! trait so perturbation-only backends (remote servers) and the built-in toy
//! model share one interface.

pub mod remote;
pub mod server;
pub mod wire;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tokens::TokenId;
use crate::toylm::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleCapabilities {
    pub can_logprob: bool,
    pub can_sample: bool,
    pub can_gradient: bool,
    pub can_embed: bool,
    pub vocab_size: usize,
    pub max_context: usize,
}

impl OracleCapabilities {
    pub fn validate(&self) -> Result<()> {
        if self.can_gradient && !self.can_embed {
            return Err(Error::Protocol("can_gradient requires can_embed".into()));
        }
        if self.vocab_size == 0 || self.max_context == 0 {
            return Err(Error::Protocol("vocab_size and max_context must be positive".into()));
        }
        Ok(())
    }
}

/// Teacher-forced scores of a continuation. `slp` is the sum of the
/// per-token natural-log probabilities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogProbResult {
    pub per_token_logprob: Vec<f64>,
    pub slp: f64,
}

impl LogProbResult {
    pub fn empty() -> Self {
        LogProbResult {
            per_token_logprob: Vec::new(),
            slp: 0.0,
        }
    }

    pub fn check(&self) -> Result<()> {
        if !self.slp.is_finite() || self.per_token_logprob.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("log-probability".into()));
        }
        if self.per_token_logprob.iter().any(|&x| x > 1e-12) {
            return Err(Error::Protocol("log-probability above zero".into()));
        }
        let sum: f64 = self.per_token_logprob.iter().sum();
        if (sum - self.slp).abs() > 1e-9 * sum.abs().max(1.0) {
            return Err(Error::Protocol(format!("slp {} differs from token sum {}", self.slp, sum)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleParams {
    pub top_p: f64,
    pub temperature: f64,
    pub max_tokens: usize,
    pub seed: u64,
    /// Argmax decoding; `top_p`, `temperature` and `seed` are ignored.
    #[serde(default)]
    pub greedy: bool,
}

impl Default for SampleParams {
    fn default() -> Self {
        SampleParams {
            top_p: 0.9,
            temperature: 0.7,
            max_tokens: 400,
            seed: 42,
            greedy: false,
        }
    }
}

impl SampleParams {
    pub fn greedy(max_tokens: usize) -> Self {
        SampleParams {
            max_tokens,
            greedy: true,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::config("top_p", "must lie in (0, 1]"));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::config("temperature", "must be positive"));
        }
        if self.max_tokens == 0 {
            return Err(Error::config("max_tokens", "must be positive"));
        }
        Ok(())
    }
}

/// A language model that can score and sample token sequences.
///
/// Implementations must not mutate model state from these calls; they are
/// shared across concurrent readers.
pub trait Oracle: Send + Sync {
    /// Stable identifier recorded in provenance.
    fn id(&self) -> String;

    fn capabilities(&self) -> Result<OracleCapabilities>;

    /// Teacher-forced log-probabilities of `continuation` after `prompt`.
    fn logprob(&self, prompt: &[TokenId], continuation: &[TokenId]) -> Result<LogProbResult>;

    /// Scores one continuation under many prompts. Results are in prompt order.
    fn logprob_batch(&self, prompts: &[Vec<TokenId>], continuation: &[TokenId]) -> Result<Vec<LogProbResult>> {
        prompts.iter().map(|p| self.logprob(p, continuation)).collect()
    }

    /// Samples a continuation. The terminating end-of-sequence token is not
    /// included in the returned tokens.
    fn sample(&self, prompt: &[TokenId], params: &SampleParams) -> Result<Vec<TokenId>>;

    /// Embedding and gradient access, when the backend supports it.
    fn gradients(&self) -> Option<&dyn GradientOracle> {
        None
    }
}

/// Embedding-level access needed by path-integrated attribution.
pub trait GradientOracle: Send + Sync {
    /// Input token embeddings, one row per id.
    fn embed(&self, ids: &[TokenId]) -> Result<Matrix>;

    /// For each prompt-embedding matrix, the SLP of `continuation` and its
    /// gradient with respect to every prompt embedding row.
    fn slp_grad_wrt_embeddings(&self, prompt_embeds: &[Matrix], continuation: &[TokenId]) -> Result<Vec<(f64, Matrix)>>;
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(logprobs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in logprobs.iter().enumerate() {
        if v > logprobs[best] {
            best = i;
        }
    }
    best
}

/// One nucleus draw from a next-token log-probability vector: temperature
/// scaling, then the smallest probability-sorted prefix whose mass reaches
/// `top_p`, renormalised.
pub fn nucleus_draw(logprobs: &[f64], top_p: f64, temperature: f64, rng: &mut Rng) -> usize {
    let scaled: Vec<f64> = logprobs.iter().map(|&l| l / temperature).collect();
    let probs = crate::toylm::tensor::softmax(&scaled);
    let mut order: Vec<usize> = (0..probs.len()).collect();
    // stable sort keeps lower ids first on ties
    order.sort_by(|&a, &b| probs[b].partial_cmp(&probs[a]).unwrap_or(std::cmp::Ordering::Equal));
    let mut mass = 0.0;
    let mut cut = order.len();
    for (rank, &i) in order.iter().enumerate() {
        mass += probs[i];
        if mass >= top_p {
            cut = rank + 1;
            break;
        }
    }
    let kept = &order[..cut];
    let total: f64 = kept.iter().map(|&i| probs[i]).sum();
    let u = rng.uniform() * total;
    let mut acc = 0.0;
    for &i in kept {
        acc += probs[i];
        if u < acc {
            return i;
        }
    }
    kept[kept.len() - 1]
}

/// Autoregressive decoding loop shared by local oracles. `next` returns the
/// next-token log-probabilities for a prefix.
pub fn decode<F>(mut next: F, prompt: &[TokenId], params: &SampleParams, eos: TokenId, max_context: usize) -> Result<Vec<TokenId>>
where
    F: FnMut(&[TokenId]) -> Result<Vec<f64>>,
{
    params.validate()?;
    if prompt.len() > max_context {
        return Err(Error::ContextOverflow {
            len: prompt.len(),
            max: max_context,
        });
    }
    let mut rng = Rng::named(params.seed, "sample");
    let mut seq = prompt.to_vec();
    let mut out = Vec::new();
    while out.len() < params.max_tokens && seq.len() < max_context {
        let lp = next(&seq)?;
        let tok = if params.greedy {
            argmax(&lp)
        } else {
            nucleus_draw(&lp, params.top_p, params.temperature, &mut rng)
        } as TokenId;
        if tok == eos {
            break;
        }
        out.push(tok);
        seq.push(tok);
    }
    Ok(out)
}
