//! The self-consistency bank: per-instance decisions, sampled explanations,
//! their attribution vectors and alignment scores, and the preference pairs
//! drawn from them.

pub mod pairs;

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::alignment::{score_explanations, AlignmentScore, Metric};
use crate::attribution::{attribute, AttributionRequest, AttributionVector, MethodParams};
use crate::error::{Error, Result};
use crate::numfmt::{q9, q9_all};
use crate::oracle::{Oracle, SampleParams};
use crate::rng::Rng;
use crate::stats::WorstMeanBest;
use crate::task::{McqTask, Split, Template};
use crate::tokens::{apply_skip_mask, resolve_skip_set, SkipTokenSet, TokenId, TokenSequence, Vocab};
use crate::toylm::synth;

pub use pairs::{extract_pairs, PairExtraction, PreferencePair};

pub const BANK_FORMAT: &str = "attrcons-bank";
pub const BANK_VERSION: u32 = 1;

pub const BANK_FILE: &str = "bank.jsonl";
pub const ERRORS_FILE: &str = "errors.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionTarget {
    /// The whole greedy answer.
    #[default]
    Full,
    /// Only the option letter; falls back to the whole answer when no
    /// letter parses.
    Letter,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BankConfig {
    /// Explanations sampled per instance.
    pub k: usize,
    /// Metric that ranks explanations for pair extraction.
    pub metric: Metric,
    pub attribution: MethodParams,
    /// Nucleus parameters for explanations; `seed` is replaced per explanation.
    pub sample: SampleParams,
    /// One seed per explanation; defaults to `42, 43, …`.
    pub explanation_seeds: Option<Vec<u64>>,
    pub attribution_seed: u64,
    pub decision_max_tokens: usize,
    /// What the decision attribution explains.
    pub decision_target: DecisionTarget,
    pub split: Split,
    /// Use at most this many instances of the split, in id order.
    pub limit: Option<usize>,
}

impl Default for BankConfig {
    fn default() -> Self {
        BankConfig {
            k: 5,
            metric: Metric::CcSp,
            attribution: MethodParams::default_for(crate::attribution::Method::Lime),
            sample: SampleParams::default(),
            explanation_seeds: None,
            attribution_seed: 42,
            decision_max_tokens: 3,
            decision_target: DecisionTarget::Full,
            split: Split::Train,
            limit: None,
        }
    }
}

impl BankConfig {
    pub fn seeds(&self) -> Vec<u64> {
        match &self.explanation_seeds {
            Some(s) => s.clone(),
            None => (0..self.k as u64).map(|i| 42 + i).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::config("bank.k", "must be at least 1"));
        }
        if self.seeds().len() != self.k {
            return Err(Error::config("bank.explanation_seeds", format!("expected {} seeds", self.k)));
        }
        if self.decision_max_tokens == 0 {
            return Err(Error::config("bank.decision_max_tokens", "must be positive"));
        }
        self.sample.validate()?;
        self.attribution.validate()
    }
}

/// Vocabulary, template and skip set used to render and mask prompts.
#[derive(Clone, Debug)]
pub struct PromptContext {
    pub template: Template,
    pub vocab: Vocab,
    pub skips: SkipTokenSet,
}

impl PromptContext {
    pub fn new<S: AsRef<str>>(template: Template, vocab: Vocab, skip_literals: &[S]) -> Result<Self> {
        let skips = resolve_skip_set(skip_literals, &vocab)?;
        if !skips.unresolved.is_empty() {
            log::warn!("skip literals not in vocabulary: {:?}", skips.unresolved);
        }
        Ok(PromptContext { template, vocab, skips })
    }

    pub fn toy() -> Self {
        Self::new(synth::template(), synth::vocab(), &synth::SKIP_LITERALS).expect("toy vocabulary resolves")
    }

    /// The decision prompt with its skip mask applied.
    pub fn decision_input(&self, task: &McqTask) -> Result<TokenSequence> {
        let seq = self.vocab.sequence(&self.template.decision_prompt(task))?;
        Ok(apply_skip_mask(&seq, &self.skips))
    }

    pub fn explanation_prompt(&self, x: &[TokenId], y_dec: &[TokenId]) -> Vec<TokenId> {
        let mut p = x.to_vec();
        p.extend(self.template.explanation_suffix(y_dec));
        p
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub y_dec: Vec<TokenId>,
    /// Option index named by the decision; `None` when none parses.
    pub letter: Option<usize>,
    pub correct: Option<bool>,
}

/// Greedy decision under the decision template.
pub fn elicit_decision(oracle: &dyn Oracle, ctx: &PromptContext, task: &McqTask, max_tokens: usize) -> Result<Decision> {
    let x = ctx.template.decision_prompt(task);
    let y_dec = oracle.sample(&x, &SampleParams::greedy(max_tokens))?;
    let letter = ctx.template.parse_letter(&y_dec, task.options.len());
    Ok(Decision {
        y_dec,
        letter,
        correct: letter.map(|l| l == task.gold),
    })
}

/// One nucleus sample per seed, conditioned on the input and the decision.
pub fn sample_explanations(
    oracle: &dyn Oracle,
    ctx: &PromptContext,
    x: &[TokenId],
    y_dec: &[TokenId],
    params: &SampleParams,
    seeds: &[u64],
) -> Result<Vec<Vec<TokenId>>> {
    if !oracle.capabilities()?.can_sample {
        return Err(Error::CapabilityMissing("sample"));
    }
    let prompt = ctx.explanation_prompt(x, y_dec);
    seeds
        .iter()
        .map(|&seed| oracle.sample(&prompt, &SampleParams { seed, ..params.clone() }))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Alignments {
    pub cc_cos: Vec<AlignmentScore>,
    pub cc_sp: Vec<AlignmentScore>,
}

impl Alignments {
    pub fn get(&self, metric: Metric) -> &[AlignmentScore] {
        match metric {
            Metric::CcCos => &self.cc_cos,
            Metric::CcSp => &self.cc_sp,
        }
    }

    pub fn values(&self, metric: Metric) -> Vec<f64> {
        self.get(metric).iter().map(|s| s.value).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub decider: String,
    pub explainer: String,
    pub method: String,
    pub attribution_seed: u64,
    pub explanation_seeds: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BankRecord {
    pub id: u64,
    pub domain: String,
    pub gold: usize,
    pub x: TokenSequence,
    pub decision: Decision,
    pub explanations: Vec<Vec<TokenId>>,
    pub dec_attr: AttributionVector,
    pub exp_attrs: Vec<AttributionVector>,
    pub alignment: Alignments,
    pub provenance: Provenance,
}

fn quantize(v: AttributionVector) -> Result<AttributionVector> {
    AttributionVector::new(q9_all(&v.scores), v.method, q9(v.target_slp), v.skip_mask)
}

/// Both metrics for stored vectors, values rounded as they are written.
pub fn score_alignments(dec: &AttributionVector, exps: &[AttributionVector]) -> Result<Alignments> {
    let score = |metric| -> Result<Vec<AlignmentScore>> {
        let mut s = score_explanations(dec, exps, metric)?.scores;
        for a in &mut s {
            a.value = q9(a.value);
        }
        Ok(s)
    };
    Ok(Alignments {
        cc_cos: score(Metric::CcCos)?,
        cc_sp: score(Metric::CcSp)?,
    })
}

/// Decides with `decider`, explains with `explainer`, and attributes each
/// output under the model that produced it.
pub fn build_record(decider: &dyn Oracle, explainer: &dyn Oracle, ctx: &PromptContext, task: &McqTask, config: &BankConfig) -> Result<BankRecord> {
    let x = ctx.decision_input(task)?;
    let decision = elicit_decision(decider, ctx, task, config.decision_max_tokens)?;
    let seeds = config.seeds();
    let explanations = sample_explanations(explainer, ctx, x.tokens(), &decision.y_dec, &config.sample, &seeds)?;

    let base = Rng::named(config.attribution_seed, "attribution").derive("instance", task.id);
    let dec_target = match (config.decision_target, decision.letter) {
        (DecisionTarget::Letter, Some(l)) => vec![ctx.template.letters[l]],
        _ => decision.y_dec.clone(),
    };
    let dec_req = AttributionRequest::new(x.clone(), Vec::new(), dec_target);
    let dec_attr = quantize(attribute(decider, &dec_req, &config.attribution, &mut base.derive("decision", 0))?)?;
    let suffix = ctx.template.explanation_suffix(&decision.y_dec);
    let exp_attrs = explanations
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let req = AttributionRequest::new(x.clone(), suffix.clone(), e.clone());
            quantize(attribute(explainer, &req, &config.attribution, &mut base.derive("explanation", i as u64))?)
        })
        .collect::<Result<Vec<_>>>()?;
    let alignment = score_alignments(&dec_attr, &exp_attrs)?;
    Ok(BankRecord {
        id: task.id,
        domain: task.domain.clone(),
        gold: task.gold,
        x,
        decision,
        explanations,
        dec_attr,
        exp_attrs,
        alignment,
        provenance: Provenance {
            decider: decider.id(),
            explainer: explainer.id(),
            method: config.attribution.method().name().to_owned(),
            attribution_seed: config.attribution_seed,
            explanation_seeds: seeds,
        },
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BankHeader {
    pub format: String,
    pub version: u32,
    pub config: BankConfig,
    pub decider: String,
    pub explainer: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordError {
    pub id: u64,
    pub kind: String,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub scores: WorstMeanBest,
    pub degenerate: usize,
    pub scored: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BankSummary {
    pub records: usize,
    pub errors: usize,
    pub parse_failures: usize,
    /// Over records whose decision parsed.
    pub accuracy: Option<f64>,
    pub cc_cos: Option<MetricSummary>,
    pub cc_sp: Option<MetricSummary>,
}

impl BankSummary {
    pub fn of(records: &[BankRecord], errors: usize) -> Self {
        let parsed: Vec<bool> = records.iter().filter_map(|r| r.decision.correct).collect();
        let accuracy = (!parsed.is_empty()).then(|| q9(parsed.iter().filter(|&&c| c).count() as f64 / parsed.len() as f64));
        let metric = |m: Metric| {
            if records.is_empty() {
                return None;
            }
            let rows: Vec<Vec<f64>> = records.iter().map(|r| r.alignment.values(m)).collect();
            let all = records.iter().flat_map(|r| r.alignment.get(m));
            let (scored, degenerate) = all.fold((0, 0), |(n, d), s| (n + 1, d + s.degenerate as usize));
            Some(MetricSummary {
                scores: WorstMeanBest::of(&rows),
                degenerate,
                scored,
            })
        };
        BankSummary {
            records: records.len(),
            errors,
            parse_failures: records.len() - parsed.len(),
            accuracy,
            cc_cos: metric(Metric::CcCos),
            cc_sp: metric(Metric::CcSp),
        }
    }

    pub fn metric(&self, m: Metric) -> Option<&MetricSummary> {
        match m {
            Metric::CcCos => self.cc_cos.as_ref(),
            Metric::CcSp => self.cc_sp.as_ref(),
        }
    }
}

/// Tasks of the configured split in id order, truncated to the limit.
pub fn select_tasks<'a>(tasks: impl IntoIterator<Item = &'a McqTask>, limit: Option<usize>) -> Vec<&'a McqTask> {
    let mut v: Vec<&McqTask> = tasks.into_iter().collect();
    v.sort_by_key(|t| t.id);
    if let Some(n) = limit {
        v.truncate(n);
    }
    v
}

#[derive(Clone, Debug, PartialEq)]
pub struct Bank {
    pub header: BankHeader,
    pub records: Vec<BankRecord>,
}

impl Bank {
    /// Builds one record per task; failures go to the error list.
    pub fn build(
        decider: &dyn Oracle,
        explainer: &dyn Oracle,
        ctx: &PromptContext,
        tasks: &[&McqTask],
        config: &BankConfig,
    ) -> Result<(Bank, Vec<RecordError>)> {
        config.validate()?;
        let mut records = Vec::with_capacity(tasks.len());
        let mut errors = Vec::new();
        for (n, task) in tasks.iter().enumerate() {
            match build_record(decider, explainer, ctx, task, config) {
                Ok(r) => records.push(r),
                Err(e @ (Error::Io(_) | Error::Transport(_))) => return Err(e),
                Err(e) => errors.push(RecordError {
                    id: task.id,
                    kind: e.kind().to_owned(),
                    message: e.to_string(),
                }),
            }
            if (n + 1) % 100 == 0 {
                log::info!("bank: {}/{} instances", n + 1, tasks.len());
            }
        }
        let header = BankHeader {
            format: BANK_FORMAT.to_owned(),
            version: BANK_VERSION,
            config: config.clone(),
            decider: decider.id(),
            explainer: explainer.id(),
        };
        Ok((Bank { header, records }, errors))
    }

    pub fn summary(&self, errors: usize) -> BankSummary {
        BankSummary::of(&self.records, errors)
    }

    /// Writes the bank, the error sidecar and the summary into `dir`.
    pub fn write_dir(&self, dir: &Path, errors: &[RecordError]) -> Result<BankSummary> {
        std::fs::create_dir_all(dir)?;
        self.write(&dir.join(BANK_FILE))?;
        let mut e = BufWriter::new(std::fs::File::create(dir.join(ERRORS_FILE))?);
        for err in errors {
            serde_json::to_writer(&mut e, err)?;
            e.write_all(b"\n")?;
        }
        e.flush()?;
        let summary = self.summary(errors.len());
        std::fs::write(dir.join(SUMMARY_FILE), serde_json::to_string_pretty(&summary)? + "\n")?;
        Ok(summary)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(&mut w, &self.header)?;
        w.write_all(b"\n")?;
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a bank file, or `bank.jsonl` inside a directory.
    pub fn read(path: &Path) -> Result<Bank> {
        let path = if path.is_dir() { path.join(BANK_FILE) } else { path.to_path_buf() };
        let mut lines = BufReader::new(std::fs::File::open(&path)?).lines();
        let first = lines.next().ok_or_else(|| Error::Format(format!("{}: empty bank file", path.display())))??;
        let header: BankHeader = serde_json::from_str(&first)?;
        if header.format != BANK_FORMAT || header.version != BANK_VERSION {
            return Err(Error::Format(format!(
                "{}: expected {BANK_FORMAT} v{BANK_VERSION}, found {} v{}",
                path.display(),
                header.format,
                header.version
            )));
        }
        let mut records = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(&line)?);
        }
        Ok(Bank { header, records })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_follow_k() {
        let c = BankConfig { k: 3, ..Default::default() };
        assert_eq!(c.seeds(), vec![42, 43, 44]);
        assert_eq!(BankConfig::default().seeds(), vec![42, 43, 44, 45, 46]);
        let bad = BankConfig {
            explanation_seeds: Some(vec![1]),
            ..Default::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config { field, .. }) if field == "bank.explanation_seeds"));
    }

    #[test]
    fn config_parses_from_toml() {
        let c: BankConfig = toml::from_str(
            "k = 2\nmetric = \"cc_cos\"\n[attribution]\nmethod = \"lime\"\nn_samples = 64\n[sample]\nmax_tokens = 8\n",
        )
        .unwrap();
        assert_eq!(c.k, 2);
        assert_eq!(c.sample.max_tokens, 8);
        match c.attribution {
            MethodParams::Lime(p) => assert_eq!(p.n_samples, 64),
            other => panic!("{other:?}"),
        }
        assert!(toml::from_str::<BankConfig>("kk = 2").is_err());
    }

    #[test]
    fn toy_context_masks_template_tokens() {
        let ctx = PromptContext::toy();
        let task = synth::generate_task_corpus(&Rng::new(1, 1), 1, &synth::TaskProfile::alpha()).unwrap().remove(0);
        let x = ctx.decision_input(&task).unwrap();
        assert_eq!(x.len(), 18);
        assert_eq!(x.unmasked().len(), 14);
    }
}
