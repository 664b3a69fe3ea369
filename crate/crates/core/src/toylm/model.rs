//! A small decoder-only transformer (RMSNorm, multi-head causal attention,
//! SwiGLU MLP) with optional low-rank adapters on every attention and MLP
//! projection.
//!
//! All parameters live in one flat array addressed through a [`Layout`];
//! adapter factors live in a second flat array so the base can be frozen
//! and the reference policy is simply "adapter off".

use serde::{Deserialize, Serialize};

use super::tape::{AttentionShape, Tape, Var};
use super::tensor::{log_softmax, Matrix};
use crate::error::{Error, Result};
use crate::oracle::LogProbResult;
use crate::rng::Rng;
use crate::tokens::TokenId;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub layers: usize,
    pub width: usize,
    pub heads: usize,
    pub mlp_hidden: usize,
    pub vocab_size: usize,
    pub context: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            layers: 2,
            width: 64,
            heads: 2,
            mlp_hidden: 128,
            vocab_size: 128,
            context: 128,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.width == 0 || self.heads == 0 || self.mlp_hidden == 0 {
            return Err(Error::config("model", "layers, width, heads and mlp_hidden must be positive"));
        }
        if self.width % self.heads != 0 {
            return Err(Error::config("model.heads", "width must be divisible by heads"));
        }
        if self.vocab_size == 0 || self.context == 0 {
            return Err(Error::config("model", "vocab_size and context must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdapterConfig {
    pub rank: usize,
    pub alpha: f64,
}

impl AdapterConfig {
    pub fn scale(&self) -> f64 {
        self.alpha / self.rank as f64
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Named views into a flat parameter array.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub specs: Vec<ParamSpec>,
    pub total: usize,
}

impl Layout {
    fn build(shapes: Vec<(String, usize, usize)>) -> Self {
        let mut offset = 0;
        let specs = shapes
            .into_iter()
            .map(|(name, rows, cols)| {
                let s = ParamSpec {
                    name,
                    rows,
                    cols,
                    offset,
                };
                offset += rows * cols;
                s
            })
            .collect();
        Layout { specs, total: offset }
    }

    pub fn model(cfg: &ModelConfig) -> Self {
        let (d, h) = (cfg.width, cfg.mlp_hidden);
        let mut shapes = vec![
            ("tok_emb".to_string(), cfg.vocab_size, d),
            ("pos_emb".to_string(), cfg.context, d),
        ];
        for l in 0..cfg.layers {
            shapes.push((format!("l{l}.attn_norm"), 1, d));
            for n in ["wq", "wk", "wv", "wo"] {
                shapes.push((format!("l{l}.{n}"), d, d));
            }
            shapes.push((format!("l{l}.mlp_norm"), 1, d));
            shapes.push((format!("l{l}.w_gate"), d, h));
            shapes.push((format!("l{l}.w_up"), d, h));
            shapes.push((format!("l{l}.w_down"), h, d));
        }
        shapes.push(("final_norm".to_string(), 1, d));
        shapes.push(("w_out".to_string(), d, cfg.vocab_size));
        Layout::build(shapes)
    }

    pub fn adapter(cfg: &ModelConfig, acfg: &AdapterConfig) -> Self {
        let mut shapes = Vec::new();
        for (m, r, c) in adapted_shapes(cfg) {
            shapes.push((format!("{m}.lora_a"), r, acfg.rank));
            shapes.push((format!("{m}.lora_b"), acfg.rank, c));
        }
        Layout::build(shapes)
    }

    pub fn get(&self, name: &str) -> Option<&ParamSpec> {
        self.specs.iter().find(|s| s.name == name)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.specs.iter().position(|s| s.name == name)
    }
}

/// Projection matrices that receive adapters, in layout order.
fn adapted_shapes(cfg: &ModelConfig) -> Vec<(String, usize, usize)> {
    let (d, h) = (cfg.width, cfg.mlp_hidden);
    let mut out = Vec::new();
    for l in 0..cfg.layers {
        for n in ["wq", "wk", "wv", "wo"] {
            out.push((format!("l{l}.{n}"), d, d));
        }
        out.push((format!("l{l}.w_gate"), d, h));
        out.push((format!("l{l}.w_up"), d, h));
        out.push((format!("l{l}.w_down"), h, d));
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adapter {
    pub config: AdapterConfig,
    pub layout: Layout,
    pub params: Vec<f64>,
}

impl Adapter {
    /// `A` Gaussian with std 1/√in, `B` zero: the adapted model starts
    /// identical to the base.
    pub fn init(model: &ModelConfig, config: AdapterConfig, rng: &mut Rng) -> Result<Self> {
        if config.rank == 0 {
            return Err(Error::config("adapter.rank", "rank must be positive"));
        }
        let layout = Layout::adapter(model, &config);
        let mut params = vec![0.0; layout.total];
        for spec in &layout.specs {
            if spec.name.ends_with("lora_a") {
                let std = 1.0 / (spec.rows as f64).sqrt();
                for p in &mut params[spec.offset..spec.offset + spec.len()] {
                    *p = rng.normal() * std;
                }
            }
        }
        Ok(Adapter {
            config,
            layout,
            params,
        })
    }
}

/// Which parameters a backward pass differentiates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradScope {
    Base,
    Adapter,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyModel {
    pub config: ModelConfig,
    pub layout: Layout,
    pub params: Vec<f64>,
    pub adapter: Option<Adapter>,
}

/// One teacher-forced scoring item: the continuation is scored given the prompt.
#[derive(Clone, Copy, Debug)]
pub struct ScoreItem<'a> {
    pub prompt: &'a [TokenId],
    pub continuation: &'a [TokenId],
}

#[derive(Clone, Debug, Default)]
pub struct ForwardOptions {
    pub use_adapter: bool,
    /// Positions no other position may attend to.
    pub blocked_keys: Vec<usize>,
}

impl ForwardOptions {
    pub fn adapter(use_adapter: bool) -> Self {
        ForwardOptions {
            use_adapter,
            blocked_keys: Vec::new(),
        }
    }
}

struct Built {
    logits: Var,
    slps: Var,
    base: Vec<Var>,
    adapter: Vec<Var>,
    input: Option<Var>,
}

impl ToyModel {
    pub fn init(config: ModelConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let layout = Layout::model(&config);
        let mut params = vec![0.0; layout.total];
        for spec in &layout.specs {
            let slot = &mut params[spec.offset..spec.offset + spec.len()];
            if spec.name.ends_with("norm") {
                slot.fill(1.0);
                continue;
            }
            let std = match spec.name.as_str() {
                "tok_emb" | "pos_emb" => 0.5,
                _ => 1.0 / (spec.rows as f64).sqrt(),
            };
            for p in slot.iter_mut() {
                *p = rng.normal() * std;
            }
        }
        Ok(ToyModel {
            config,
            layout,
            params,
            adapter: None,
        })
    }

    pub fn param(&self, name: &str) -> Option<Matrix> {
        let s = self.layout.get(name)?;
        Some(Matrix::from_vec(s.rows, s.cols, self.params[s.offset..s.offset + s.len()].to_vec()))
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let s = self.layout.get(name)?.clone();
        Some(&mut self.params[s.offset..s.offset + s.len()])
    }

    pub fn attach_adapter(&mut self, config: AdapterConfig, rng: &mut Rng) -> Result<()> {
        self.adapter = Some(Adapter::init(&self.config, config, rng)?);
        Ok(())
    }

    pub fn adapter_params(&self) -> Option<&[f64]> {
        self.adapter.as_ref().map(|a| a.params.as_slice())
    }

    /// Token embedding rows for `ids`.
    pub fn embed(&self, ids: &[TokenId]) -> Result<Matrix> {
        self.check_ids(ids)?;
        let d = self.config.width;
        let spec = self.layout.get("tok_emb").expect("tok_emb");
        let mut m = Matrix::zeros(ids.len(), d);
        for (r, &t) in ids.iter().enumerate() {
            let o = spec.offset + t as usize * d;
            m.row_mut(r).copy_from_slice(&self.params[o..o + d]);
        }
        Ok(m)
    }

    fn check_ids(&self, ids: &[TokenId]) -> Result<()> {
        if let Some(&t) = ids.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            return Err(Error::invalid(format!(
                "token id {t} outside vocabulary of {}",
                self.config.vocab_size
            )));
        }
        Ok(())
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len > self.config.context {
            return Err(Error::ContextOverflow {
                len,
                max: self.config.context,
            });
        }
        Ok(())
    }

    /// Builds the graph for a right-padded batch. `inputs` are the token
    /// rows fed to the network (prompt followed by all but the last
    /// continuation token); `targets[b]` pairs a position with the token its
    /// output must predict.
    fn build(
        &self,
        tape: &mut Tape,
        inputs: &[Vec<TokenId>],
        targets: &[Vec<(usize, TokenId)>],
        embed_override: Option<(Matrix, bool)>,
        base_grad: bool,
        adapter_grad: bool,
        opts: &ForwardOptions,
    ) -> Built {
        let cfg = &self.config;
        let batch = inputs.len();
        let n = inputs.iter().map(Vec::len).max().unwrap_or(0);
        let base: Vec<Var> = self
            .layout
            .specs
            .iter()
            .map(|s| {
                let m = Matrix::from_vec(s.rows, s.cols, self.params[s.offset..s.offset + s.len()].to_vec());
                tape.leaf(m, base_grad)
            })
            .collect();
        let p = |name: &str| base[self.layout.index_of(name).expect("param")];

        let use_adapter = opts.use_adapter && self.adapter.is_some();
        let adapter: Vec<Var> = match (&self.adapter, use_adapter) {
            (Some(a), true) => a
                .layout
                .specs
                .iter()
                .map(|s| {
                    let m = Matrix::from_vec(s.rows, s.cols, a.params[s.offset..s.offset + s.len()].to_vec());
                    tape.leaf(m, adapter_grad)
                })
                .collect(),
            _ => Vec::new(),
        };
        let lora = |name: &str| -> Option<(Var, Var, f64)> {
            let a = self.adapter.as_ref()?;
            if adapter.is_empty() {
                return None;
            }
            let ia = a.layout.index_of(&format!("{name}.lora_a"))?;
            Some((adapter[ia], adapter[ia + 1], a.config.scale()))
        };
        let linear = |tape: &mut Tape, x: Var, name: &str| -> Var {
            let y = tape.matmul(x, p(name));
            match lora(name) {
                Some((a, b, s)) => {
                    let xa = tape.matmul(x, a);
                    let xab = tape.matmul(xa, b);
                    let scaled = tape.scale(xab, s);
                    tape.add(y, scaled)
                }
                None => y,
            }
        };

        let flat: Vec<usize> = inputs
            .iter()
            .flat_map(|seq| (0..n).map(move |i| seq.get(i).copied().unwrap_or(0) as usize))
            .collect();
        let (tok, input) = match embed_override {
            Some((m, grad)) => {
                let v = tape.leaf(m, grad);
                (v, Some(v))
            }
            None => (tape.gather(p("tok_emb"), flat), None),
        };
        let pos_ids: Vec<usize> = (0..batch).flat_map(|_| 0..n).collect();
        let pos = tape.gather(p("pos_emb"), pos_ids);
        let mut h = tape.add(tok, pos);
        let shape = AttentionShape {
            batch,
            seq_len: n,
            heads: cfg.heads,
        };
        for l in 0..cfg.layers {
            let a = tape.rms_norm(h, p(&format!("l{l}.attn_norm")));
            let q = linear(tape, a, &format!("l{l}.wq"));
            let k = linear(tape, a, &format!("l{l}.wk"));
            let v = linear(tape, a, &format!("l{l}.wv"));
            let att = tape.attention(q, k, v, shape, &opts.blocked_keys);
            let o = linear(tape, att, &format!("l{l}.wo"));
            h = tape.add(h, o);
            let m = tape.rms_norm(h, p(&format!("l{l}.mlp_norm")));
            let gate = linear(tape, m, &format!("l{l}.w_gate"));
            let up = linear(tape, m, &format!("l{l}.w_up"));
            let act = tape.silu(gate);
            let f = tape.mul(act, up);
            let down = linear(tape, f, &format!("l{l}.w_down"));
            h = tape.add(h, down);
        }
        let hf = tape.rms_norm(h, p("final_norm"));
        let mut rows = Vec::new();
        let mut groups = Vec::with_capacity(batch);
        for (b, tg) in targets.iter().enumerate() {
            let mut g = Vec::with_capacity(tg.len());
            for &(pos, tok) in tg {
                g.push((rows.len(), tok as usize));
                rows.push(b * n + pos);
            }
            groups.push(g);
        }
        let sel = tape.select_rows(hf, rows);
        let logits = tape.matmul(sel, p("w_out"));
        let slps = tape.log_probs(logits, groups);
        Built {
            logits,
            slps,
            base,
            adapter,
            input,
        }
    }

    fn prepare(&self, items: &[ScoreItem<'_>]) -> Result<(Vec<Vec<TokenId>>, Vec<Vec<(usize, TokenId)>>)> {
        let mut inputs = Vec::with_capacity(items.len());
        let mut targets = Vec::with_capacity(items.len());
        for it in items {
            if it.prompt.is_empty() {
                return Err(Error::invalid("prompt must be non-empty"));
            }
            self.check_ids(it.prompt)?;
            self.check_ids(it.continuation)?;
            self.check_len(it.prompt.len() + it.continuation.len())?;
            let mut seq = it.prompt.to_vec();
            if let Some((_, head)) = it.continuation.split_last() {
                seq.extend_from_slice(head);
            }
            let p = it.prompt.len();
            targets.push(
                it.continuation
                    .iter()
                    .enumerate()
                    .map(|(t, &tok)| (p - 1 + t, tok))
                    .collect(),
            );
            inputs.push(seq);
        }
        Ok((inputs, targets))
    }

    /// Teacher-forced log-probabilities for a batch of items.
    pub fn score(&self, items: &[ScoreItem<'_>], opts: &ForwardOptions) -> Result<Vec<LogProbResult>> {
        if items.is_empty() {
            return Ok(Vec::new());
        }
        let (inputs, targets) = self.prepare(items)?;
        let mut tape = Tape::new();
        let built = self.build(&mut tape, &inputs, &targets, None, false, false, opts);
        Ok(collect_results(&tape, built.slps))
    }

    pub fn slp(&self, prompt: &[TokenId], continuation: &[TokenId], use_adapter: bool) -> Result<LogProbResult> {
        let r = self.score(
            &[ScoreItem {
                prompt,
                continuation,
            }],
            &ForwardOptions::adapter(use_adapter),
        )?;
        Ok(r.into_iter().next().expect("one result"))
    }

    /// Log-softmax over the vocabulary for the token following `prefix`.
    pub fn next_token_logprobs(&self, prefix: &[TokenId], use_adapter: bool) -> Result<Vec<f64>> {
        self.next_token_logprobs_with(prefix, &ForwardOptions::adapter(use_adapter))
    }

    pub fn next_token_logprobs_with(&self, prefix: &[TokenId], opts: &ForwardOptions) -> Result<Vec<f64>> {
        if prefix.is_empty() {
            return Err(Error::invalid("prefix must be non-empty"));
        }
        self.check_ids(prefix)?;
        self.check_len(prefix.len())?;
        let mut tape = Tape::new();
        // target token is irrelevant; read the logits row directly
        let built = self.build(
            &mut tape,
            &[prefix.to_vec()],
            &[vec![(prefix.len() - 1, 0)]],
            None,
            false,
            false,
            opts,
        );
        Ok(log_softmax(tape.value(built.logits).row(0)))
    }

    /// Gradient of `Σ weights[i]·SLP(item i)` with respect to the chosen
    /// parameter set. Returns per-item results and the flat gradient.
    pub fn score_with_grad(
        &self,
        items: &[ScoreItem<'_>],
        weights: &[f64],
        scope: GradScope,
        opts: &ForwardOptions,
    ) -> Result<(Vec<LogProbResult>, Vec<f64>)> {
        assert_eq!(items.len(), weights.len(), "one weight per item");
        self.score_with_grad_by(items, scope, opts, |_| weights.to_vec())
    }

    /// Like [`score_with_grad`](Self::score_with_grad), with the weights
    /// computed from the forward results before the backward pass.
    pub fn score_with_grad_by<F>(
        &self,
        items: &[ScoreItem<'_>],
        scope: GradScope,
        opts: &ForwardOptions,
        weights_for: F,
    ) -> Result<(Vec<LogProbResult>, Vec<f64>)>
    where
        F: FnOnce(&[LogProbResult]) -> Vec<f64>,
    {
        let grad_len = match scope {
            GradScope::Base => self.layout.total,
            GradScope::Adapter => {
                let a = self
                    .adapter
                    .as_ref()
                    .ok_or_else(|| Error::invalid("adapter gradient requested but no adapter attached"))?;
                if !opts.use_adapter {
                    return Err(Error::invalid("adapter gradient requires the adapter to be enabled"));
                }
                a.layout.total
            }
        };
        if items.is_empty() {
            return Ok((Vec::new(), vec![0.0; grad_len]));
        }
        let (inputs, targets) = self.prepare(items)?;
        let mut tape = Tape::new();
        let built = self.build(
            &mut tape,
            &inputs,
            &targets,
            None,
            scope == GradScope::Base,
            scope == GradScope::Adapter,
            opts,
        );
        let results = collect_results(&tape, built.slps);
        let weights = weights_for(&results);
        assert_eq!(items.len(), weights.len(), "one weight per item");
        let seed = Matrix::from_vec(weights.len(), 1, weights);
        let mut grads = tape.backward(built.slps, seed);
        let (vars, layout) = match scope {
            GradScope::Base => (&built.base, &self.layout),
            GradScope::Adapter => (&built.adapter, &self.adapter.as_ref().expect("adapter").layout),
        };
        let mut flat = vec![0.0; grad_len];
        for (var, spec) in vars.iter().zip(&layout.specs) {
            if let Some(g) = grads.take(*var) {
                flat[spec.offset..spec.offset + spec.len()].copy_from_slice(&g.data);
            }
        }
        Ok((results, flat))
    }

    /// SLP and its gradient with respect to the prompt's input token
    /// embeddings, for a batch of embedding matrices (each `prompt_len × width`)
    /// sharing one continuation.
    pub fn slp_grad_wrt_embeddings(
        &self,
        prompt_embeds: &[Matrix],
        continuation: &[TokenId],
        opts: &ForwardOptions,
    ) -> Result<Vec<(f64, Matrix)>> {
        let Some(first) = prompt_embeds.first() else {
            return Ok(Vec::new());
        };
        let p = first.rows;
        let d = self.config.width;
        if p == 0 || prompt_embeds.iter().any(|m| m.rows != p || m.cols != d) {
            return Err(Error::invalid("prompt embeddings must share a non-empty p × width shape"));
        }
        self.check_ids(continuation)?;
        self.check_len(p + continuation.len())?;
        if continuation.is_empty() {
            return Ok(prompt_embeds.iter().map(|_| (0.0, Matrix::zeros(p, d))).collect());
        }
        let n = p + continuation.len() - 1;
        let batch = prompt_embeds.len();
        let mut input = Matrix::zeros(batch * n, d);
        let tail = self.embed(&continuation[..continuation.len() - 1])?;
        for (b, m) in prompt_embeds.iter().enumerate() {
            for i in 0..p {
                input.row_mut(b * n + i).copy_from_slice(m.row(i));
            }
            for i in 0..tail.rows {
                input.row_mut(b * n + p + i).copy_from_slice(tail.row(i));
            }
        }
        let targets: Vec<Vec<(usize, TokenId)>> = (0..batch)
            .map(|_| continuation.iter().enumerate().map(|(t, &tok)| (p - 1 + t, tok)).collect())
            .collect();
        // token ids only size the batch; embeddings come from `input`
        let inputs: Vec<Vec<TokenId>> = (0..batch).map(|_| vec![0; n]).collect();
        let mut tape = Tape::new();
        let built = self.build(&mut tape, &inputs, &targets, Some((input, true)), false, false, opts);
        let slps = tape.value(built.slps).data.clone();
        let seed = Matrix::from_vec(batch, 1, vec![1.0; batch]);
        let grads = tape.backward(built.slps, seed);
        let g = grads.get(built.input.expect("input leaf")).expect("embedding gradient");
        Ok((0..batch)
            .map(|b| {
                let mut m = Matrix::zeros(p, d);
                for i in 0..p {
                    m.row_mut(i).copy_from_slice(g.row(b * n + i));
                }
                (slps[b], m)
            })
            .collect())
    }

    /// SLP computed from explicit prompt embeddings, without gradients.
    pub fn slp_from_embeddings(&self, prompt_embeds: &Matrix, continuation: &[TokenId], opts: &ForwardOptions) -> Result<f64> {
        Ok(self
            .slp_grad_wrt_embeddings(std::slice::from_ref(prompt_embeds), continuation, opts)?
            .remove(0)
            .0)
    }
}

fn collect_results(tape: &Tape, slps: Var) -> Vec<LogProbResult> {
    let values = &tape.value(slps).data;
    tape.picked_log_probs(slps)
        .iter()
        .zip(values)
        .map(|(per, &slp)| LogProbResult {
            per_token_logprob: per.clone(),
            slp,
        })
        .collect()
}
