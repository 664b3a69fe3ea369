//! The toy model behind the [`Oracle`] interface.

use std::sync::Arc;

use super::model::{ForwardOptions, ScoreItem, ToyModel};
use super::synth::EOS;
use super::tensor::Matrix;
use crate::error::Result;
use crate::oracle::{decode, GradientOracle, LogProbResult, Oracle, OracleCapabilities, SampleParams};
use crate::tokens::TokenId;

/// Perturbation batches are scored this many prompts at a time; larger
/// batches stop fitting in cache.
const SCORE_CHUNK: usize = 4;

/// A read-only view of a toy model, with the adapter either applied or not.
#[derive(Clone)]
pub struct ToyOracle {
    model: Arc<ToyModel>,
    use_adapter: bool,
    name: String,
}

impl ToyOracle {
    pub fn new(model: Arc<ToyModel>, use_adapter: bool, name: impl Into<String>) -> Self {
        ToyOracle {
            model,
            use_adapter,
            name: name.into(),
        }
    }

    /// The base model: any adapter is ignored.
    pub fn base(model: Arc<ToyModel>, name: impl Into<String>) -> Self {
        Self::new(model, false, name)
    }

    /// The adapted model. Falls back to the base when no adapter is attached.
    pub fn tuned(model: Arc<ToyModel>, name: impl Into<String>) -> Self {
        Self::new(model, true, name)
    }

    pub fn model(&self) -> &ToyModel {
        &self.model
    }

    fn opts(&self) -> ForwardOptions {
        ForwardOptions::adapter(self.use_adapter)
    }
}

impl Oracle for ToyOracle {
    fn id(&self) -> String {
        let mode = if self.use_adapter && self.model.adapter.is_some() {
            "tuned"
        } else {
            "base"
        };
        format!("toy:{}:{mode}", self.name)
    }

    fn capabilities(&self) -> Result<OracleCapabilities> {
        Ok(OracleCapabilities {
            can_logprob: true,
            can_sample: true,
            can_gradient: true,
            can_embed: true,
            vocab_size: self.model.config.vocab_size,
            max_context: self.model.config.context,
        })
    }

    fn logprob(&self, prompt: &[TokenId], continuation: &[TokenId]) -> Result<LogProbResult> {
        if continuation.is_empty() {
            return Ok(LogProbResult::empty());
        }
        self.model.slp(prompt, continuation, self.use_adapter)
    }

    fn logprob_batch(&self, prompts: &[Vec<TokenId>], continuation: &[TokenId]) -> Result<Vec<LogProbResult>> {
        if continuation.is_empty() {
            return Ok(prompts.iter().map(|_| LogProbResult::empty()).collect());
        }
        let opts = self.opts();
        let mut out = Vec::with_capacity(prompts.len());
        for chunk in prompts.chunks(SCORE_CHUNK) {
            let items: Vec<ScoreItem<'_>> = chunk
                .iter()
                .map(|p| ScoreItem {
                    prompt: p,
                    continuation,
                })
                .collect();
            out.extend(self.model.score(&items, &opts)?);
        }
        Ok(out)
    }

    fn sample(&self, prompt: &[TokenId], params: &SampleParams) -> Result<Vec<TokenId>> {
        let opts = self.opts();
        decode(
            |prefix| self.model.next_token_logprobs_with(prefix, &opts),
            prompt,
            params,
            EOS,
            self.model.config.context,
        )
    }

    fn gradients(&self) -> Option<&dyn GradientOracle> {
        Some(self)
    }
}

impl GradientOracle for ToyOracle {
    fn embed(&self, ids: &[TokenId]) -> Result<Matrix> {
        self.model.embed(ids)
    }

    fn slp_grad_wrt_embeddings(&self, prompt_embeds: &[Matrix], continuation: &[TokenId]) -> Result<Vec<(f64, Matrix)>> {
        let opts = self.opts();
        let mut out = Vec::with_capacity(prompt_embeds.len());
        for chunk in prompt_embeds.chunks(SCORE_CHUNK) {
            out.extend(self.model.slp_grad_wrt_embeddings(chunk, continuation, &opts)?);
        }
        Ok(out)
    }
}
