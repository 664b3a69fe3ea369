//! Config-driven pipeline: base model, corpora, banks, adapter training,
//! evaluation and a final report, with per-stage digests for resuming.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::alignment::Metric;
use crate::attribution::MethodParams;
use crate::bank::{extract_pairs, select_tasks, Bank, BankConfig, BankRecord, PromptContext};
use crate::error::{Error, Result};
use crate::eval::{correctness_split, cross_matrix, method_agreement, rank_separation, render_cross, render_reports, run_mode, EvalMode, EvalReport};
use crate::numfmt::q9;
use crate::rng::Rng;
use crate::task::{validate_ratios, Corpus, Split, DEFAULT_RATIOS};
use crate::toylm::pretrain::{pretrain_recipe, ToyRecipe};
use crate::toylm::synth::{self, TaskProfile};
use crate::toylm::{checkpoint, ToyModel, ToyOracle};
use crate::train::{sft_examples, train_dpo, train_sft, Profile, TrainConfig};

/// Environment variable that replaces the configured output root.
pub const OUT_ENV: &str = "ATTRCONS_OUT";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseStage {
    /// Existing base checkpoint, relative to the config file.
    pub checkpoint: Option<PathBuf>,
    /// Pretrain from scratch instead.
    pub pretrain: Option<ToyRecipe>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusStage {
    /// Task profiles; each is a separate domain.
    pub domains: Vec<String>,
    pub n: usize,
    pub split: [f64; 3],
    pub split_seed: u64,
}

impl Default for CorpusStage {
    fn default() -> Self {
        CorpusStage {
            domains: vec!["alpha".into()],
            n: 1000,
            split: DEFAULT_RATIOS,
            split_seed: 42,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainStage {
    pub dpo: Option<TrainConfig>,
    /// Also train the SFT baseline on chosen explanations.
    pub sft: bool,
    pub sft_config: Option<TrainConfig>,
}

impl Default for TrainStage {
    fn default() -> Self {
        TrainStage {
            dpo: None,
            sft: true,
            sft_config: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalStage {
    pub modes: Vec<EvalMode>,
    /// Test instances per domain.
    pub limit: Option<usize>,
    /// Replace the bank's attribution seed at evaluation time.
    pub attribution_seed: Option<u64>,
    pub explanation_seeds: Option<Vec<u64>>,
    /// Evaluate each tuned model on every domain, not only its own.
    pub cross: bool,
}

impl Default for EvalStage {
    fn default() -> Self {
        EvalStage {
            modes: EvalMode::ALL.to_vec(),
            limit: None,
            attribution_seed: None,
            explanation_seeds: None,
            cross: true,
        }
    }
}

/// A second bank per domain scored with another attribution method, for
/// cross-method agreement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgreementStage {
    pub methods: Vec<MethodParams>,
    pub limit: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_profile")]
    pub profile: Profile,
    pub out: PathBuf,
    pub base: BaseStage,
    #[serde(default)]
    pub corpus: CorpusStage,
    #[serde(default)]
    pub bank: BankConfig,
    #[serde(default)]
    pub train: TrainStage,
    #[serde(default)]
    pub eval: EvalStage,
    #[serde(default)]
    pub agreement: Option<AgreementStage>,
}

fn default_profile() -> Profile {
    Profile::Toy
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: PipelineConfig = toml::from_str(text).map_err(|e| Error::config(toml_field(&e), e.message().to_owned()))?;
        c.validate()?;
        Ok(c)
    }

    /// Reads a config; relative paths inside resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut c = Self::from_toml(&std::fs::read_to_string(path)?)?;
        let dir = path.parent().unwrap_or(Path::new("."));
        if let Some(ck) = &c.base.checkpoint {
            if ck.is_relative() {
                c.base.checkpoint = Some(dir.join(ck));
            }
        }
        if c.out.is_relative() {
            c.out = dir.join(&c.out);
        }
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.base.checkpoint, &self.base.pretrain) {
            (Some(_), None) | (None, Some(_)) => {}
            _ => return Err(Error::config("base", "set exactly one of `checkpoint` or `pretrain`")),
        }
        if self.corpus.domains.is_empty() {
            return Err(Error::config("corpus.domains", "at least one domain required"));
        }
        for d in &self.corpus.domains {
            TaskProfile::by_name(d).map_err(|_| Error::config("corpus.domains", format!("unknown profile `{d}`")))?;
        }
        validate_ratios(&self.corpus.split)?;
        self.bank.validate()?;
        self.dpo_config().validate()?;
        self.sft_config().validate()?;
        if self.eval.modes.is_empty() {
            return Err(Error::config("eval.modes", "at least one mode required"));
        }
        if let Some(a) = &self.agreement {
            for m in &a.methods {
                m.validate()?;
            }
        }
        Ok(())
    }

    pub fn dpo_config(&self) -> TrainConfig {
        self.train.dpo.clone().unwrap_or_else(|| TrainConfig {
            seed: self.seed,
            ..TrainConfig::for_profile(self.profile)
        })
    }

    pub fn sft_config(&self) -> TrainConfig {
        self.train.sft_config.clone().unwrap_or_else(|| {
            let dpo = self.dpo_config();
            TrainConfig {
                optimizer: TrainConfig::sft(self.profile).optimizer,
                score_scale: None,
                ..dpo
            }
        })
    }

    pub fn eval_bank_config(&self) -> BankConfig {
        let mut c = self.bank.clone();
        c.split = Split::Test;
        c.limit = self.eval.limit;
        if let Some(s) = self.eval.attribution_seed {
            c.attribution_seed = s;
        }
        if let Some(s) = &self.eval.explanation_seeds {
            c.explanation_seeds = Some(s.clone());
        }
        c
    }

    /// Stable digest of the config. The output root is left out: where a run is
    /// written does not change what it computes.
    pub fn digest(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(m) = v.as_object_mut() {
            m.remove("out");
        }
        digest_json(&v)
    }
}

fn toml_field(e: &toml::de::Error) -> String {
    let msg = e.message();
    if let Some(rest) = msg.split('`').nth(1) {
        return rest.to_owned();
    }
    "config".into()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn digest_json(v: &Value) -> String {
    sha256_hex(&serde_json::to_vec(v).expect("value serializes"))
}

pub fn file_digest(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub key: String,
    pub artifacts: Vec<Artifact>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_digest: String,
    pub stages: Vec<StageRecord>,
}

/// What happened to each stage in one run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunSummary {
    pub ran: Vec<String>,
    pub skipped: Vec<String>,
    pub manifest: Option<Manifest>,
}

const STAGE_FILE: &str = "stage.json";

struct Runner {
    root: PathBuf,
    config_digest: String,
    stages: Vec<StageRecord>,
    summary: RunSummary,
}

impl Runner {
    /// Runs `body` unless the stage directory already holds outputs for the
    /// same key with matching digests. `body` returns files written, relative
    /// to the stage directory.
    fn stage<F>(&mut self, name: &str, inputs: Value, body: F) -> Result<StageRecord>
    where
        F: FnOnce(&Path) -> Result<Vec<String>>,
    {
        let dir = self.root.join(name);
        let key = digest_json(&json!({ "stage": name, "inputs": inputs }));
        if let Some(rec) = self.cached(&dir, &key)? {
            log::info!("stage {name}: up to date");
            self.summary.skipped.push(name.to_owned());
            self.stages.push(rec.clone());
            return Ok(rec);
        }
        log::info!("stage {name}: running");
        if dir.exists() {
            std::fs::remove_dir_all(&dir)?;
        }
        std::fs::create_dir_all(&dir)?;
        let files = body(&dir)?;
        let artifacts = files
            .iter()
            .map(|f| {
                Ok(Artifact {
                    path: format!("{name}/{f}"),
                    sha256: file_digest(&dir.join(f))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let rec = StageRecord {
            name: name.to_owned(),
            key,
            artifacts,
        };
        std::fs::write(dir.join(STAGE_FILE), serde_json::to_string_pretty(&rec)? + "\n")?;
        self.summary.ran.push(name.to_owned());
        self.stages.push(rec.clone());
        Ok(rec)
    }

    fn cached(&self, dir: &Path, key: &str) -> Result<Option<StageRecord>> {
        let Ok(text) = std::fs::read_to_string(dir.join(STAGE_FILE)) else {
            return Ok(None);
        };
        let Ok(rec) = serde_json::from_str::<StageRecord>(&text) else {
            return Ok(None);
        };
        if rec.key != key {
            return Ok(None);
        }
        for a in &rec.artifacts {
            match file_digest(&self.root.join(&a.path)) {
                Ok(d) if d == a.sha256 => {}
                _ => return Ok(None),
            }
        }
        Ok(Some(rec))
    }
}

fn digest_of(rec: &StageRecord) -> Value {
    json!(rec.artifacts.iter().map(|a| &a.sha256).collect::<Vec<_>>())
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(v)? + "\n")?;
    Ok(())
}

fn save_model(path: &Path, model: &ToyModel, seeds: &[(&str, u64)]) -> Result<()> {
    let seeds: BTreeMap<String, u64> = seeds.iter().map(|(k, v)| (k.to_string(), *v)).collect();
    checkpoint::save(path, model, &seeds, &BTreeMap::new())
}

fn load_model(path: &Path) -> Result<ToyModel> {
    Ok(checkpoint::load(path)?.0)
}

/// Generates the synthetic corpus of one domain.
pub fn generate_corpus(domain: &str, n: usize, seed: u64, ratios: [f64; 3], split_seed: u64) -> Result<Corpus> {
    let profile = TaskProfile::by_name(domain)?;
    let tasks = synth::generate_task_corpus(&Rng::named(seed, &format!("corpus/{domain}")), n, &profile)?;
    let mut c = Corpus::new(tasks, synth::template(), ratios, split_seed)?;
    c.header.meta.insert("profile".into(), json!(profile));
    c.header.meta.insert("seed".into(), json!(seed));
    Ok(c)
}

/// Output root after the environment override.
pub fn output_root(config: &PipelineConfig) -> PathBuf {
    match std::env::var_os(OUT_ENV) {
        Some(p) if !p.is_empty() => PathBuf::from(p),
        _ => config.out.clone(),
    }
}

pub fn run_pipeline(config: &PipelineConfig) -> Result<RunSummary> {
    run_pipeline_in(config, &output_root(config))
}

pub fn run_pipeline_in(config: &PipelineConfig, root: &Path) -> Result<RunSummary> {
    config.validate()?;
    std::fs::create_dir_all(root)?;
    let mut r = Runner {
        root: root.to_path_buf(),
        config_digest: config.digest(),
        stages: Vec::new(),
        summary: RunSummary::default(),
    };
    let ctx = PromptContext::toy();

    let base_inputs = match (&config.base.checkpoint, &config.base.pretrain) {
        (Some(p), _) => json!({ "checkpoint": file_digest(p)? }),
        (_, Some(recipe)) => json!({ "pretrain": recipe }),
        _ => unreachable!("validated"),
    };
    let base_rec = r.stage("base", base_inputs, |dir| {
        match (&config.base.checkpoint, &config.base.pretrain) {
            (Some(p), _) => {
                let m = load_model(p)?;
                if m.adapter.is_some() {
                    return Err(Error::config("base.checkpoint", "base checkpoint must not carry an adapter"));
                }
                std::fs::copy(p, dir.join("model.ckpt"))?;
            }
            (_, Some(recipe)) => {
                let (m, report) = pretrain_recipe(recipe)?;
                save_model(&dir.join("model.ckpt"), &m, &[("init", recipe.init_seed), ("pretrain", recipe.schedule.seed)])?;
                write_json(&dir.join("pretrain.json"), &report)?;
                return Ok(vec!["model.ckpt".into(), "pretrain.json".into()]);
            }
            _ => unreachable!("validated"),
        }
        Ok(vec!["model.ckpt".into()])
    })?;
    let base_model = Arc::new(load_model(&root.join("base/model.ckpt"))?);
    let base_oracle = ToyOracle::base(base_model.clone(), "base");

    let mut corpora = BTreeMap::new();
    for domain in &config.corpus.domains {
        let c = &config.corpus;
        let rec = r.stage(
            &format!("corpus-{domain}"),
            json!({ "domain": domain, "n": c.n, "seed": config.seed, "split": c.split, "split_seed": c.split_seed }),
            |dir| {
                generate_corpus(domain, c.n, config.seed, c.split, c.split_seed)?.write(&dir.join("corpus.jsonl"))?;
                Ok(vec!["corpus.jsonl".into()])
            },
        )?;
        let corpus = Corpus::read(&root.join(format!("corpus-{domain}/corpus.jsonl")))?;
        corpora.insert(domain.clone(), (corpus, rec));
    }

    let mut banks: BTreeMap<String, (Vec<BankRecord>, StageRecord)> = BTreeMap::new();
    for (domain, (corpus, crec)) in &corpora {
        let name = format!("bank-{domain}");
        let rec = r.stage(
            &name,
            json!({ "base": digest_of(&base_rec), "corpus": digest_of(crec), "bank": config.bank }),
            |dir| {
                let tasks = select_tasks(corpus.split(config.bank.split), config.bank.limit);
                let (bank, errors) = Bank::build(&base_oracle, &base_oracle, &ctx, &tasks, &config.bank)?;
                bank.write_dir(dir, &errors)?;
                let pairs = extract_pairs(&bank.records, config.bank.metric, &ctx);
                write_jsonl(&dir.join("pairs.jsonl"), &pairs.pairs)?;
                write_json(
                    &dir.join("pairs_summary.json"),
                    &json!({ "pairs": pairs.pairs.len(), "skipped_degenerate": pairs.skipped_degenerate, "skipped_tied": pairs.skipped_tied }),
                )?;
                Ok(vec![
                    "bank.jsonl".into(),
                    "errors.jsonl".into(),
                    "summary.json".into(),
                    "pairs.jsonl".into(),
                    "pairs_summary.json".into(),
                ])
            },
        )?;
        let bank = Bank::read(&root.join(&name))?;
        banks.insert(domain.clone(), (bank.records, rec));
    }

    let mut agreements = Vec::new();
    if let Some(ag) = &config.agreement {
        for (domain, (corpus, crec)) in &corpora {
            for params in &ag.methods {
                let method = params.method().name();
                let name = format!("bank-{domain}-{method}");
                let mut bc = config.bank.clone();
                bc.attribution = params.clone();
                bc.limit = Some(ag.limit.min(config.bank.limit.unwrap_or(usize::MAX)));
                r.stage(&name, json!({ "base": digest_of(&base_rec), "corpus": digest_of(crec), "bank": bc }), |dir| {
                    let tasks = select_tasks(corpus.split(bc.split), bc.limit);
                    let (bank, errors) = Bank::build(&base_oracle, &base_oracle, &ctx, &tasks, &bc)?;
                    bank.write_dir(dir, &errors)?;
                    Ok(vec!["bank.jsonl".into(), "errors.jsonl".into(), "summary.json".into()])
                })?;
                let other = Bank::read(&root.join(&name))?.records;
                let main = &banks[domain].0;
                let ids: Vec<u64> = other.iter().map(|r| r.id).collect();
                let main: Vec<BankRecord> = main.iter().filter(|r| ids.contains(&r.id)).cloned().collect();
                let other: Vec<BankRecord> = other.into_iter().filter(|r| main.iter().any(|m| m.id == r.id)).collect();
                for metric in Metric::ALL {
                    let a = method_agreement(&main, &other, metric)?;
                    agreements.push(json!({ "domain": domain, "methods": [config.bank.attribution.method().name(), method], "agreement": a }));
                }
            }
        }
    }

    // tuned models: (name, source domain, stage record)
    let mut tuned: Vec<(String, String, StageRecord)> = Vec::new();
    for (domain, (_, brec)) in &banks {
        let pairs_path = root.join(format!("bank-{domain}/pairs.jsonl"));
        let dpo_cfg = config.dpo_config();
        let name = format!("train-dpo-{domain}");
        let rec = r.stage(&name, json!({ "base": digest_of(&base_rec), "bank": digest_of(brec), "train": dpo_cfg }), |dir| {
            let pairs = read_jsonl(&pairs_path)?;
            let mut m = (*base_model).clone();
            let report = train_dpo(&mut m, &pairs, &dpo_cfg)?;
            save_model(&dir.join("model.ckpt"), &m, &[("adapter", dpo_cfg.seed)])?;
            write_json(&dir.join("report.json"), &report)?;
            Ok(vec!["model.ckpt".into(), "report.json".into()])
        })?;
        tuned.push((format!("dpo-{domain}"), domain.clone(), rec));
        if config.train.sft {
            let sft_cfg = config.sft_config();
            let name = format!("train-sft-{domain}");
            let rec = r.stage(&name, json!({ "base": digest_of(&base_rec), "bank": digest_of(brec), "train": sft_cfg }), |dir| {
                let pairs = read_jsonl(&pairs_path)?;
                let mut m = (*base_model).clone();
                let report = train_sft(&mut m, &sft_examples(&pairs), &sft_cfg)?;
                save_model(&dir.join("model.ckpt"), &m, &[("adapter", sft_cfg.seed)])?;
                write_json(&dir.join("report.json"), &report)?;
                Ok(vec!["model.ckpt".into(), "report.json".into()])
            })?;
            tuned.push((format!("sft-{domain}"), domain.clone(), rec));
        }
    }

    let ecfg = config.eval_bank_config();
    // (source, target, report)
    let mut reports: Vec<(String, String, EvalReport)> = Vec::new();
    for (target, (corpus, crec)) in &corpora {
        let test = select_tasks(corpus.split(Split::Test), ecfg.limit);
        let mut jobs: Vec<(String, Option<&StageRecord>, Vec<EvalMode>)> = Vec::new();
        if config.eval.modes.contains(&EvalMode::BB) {
            jobs.push(("base".into(), None, vec![EvalMode::BB]));
        }
        let tuned_modes: Vec<EvalMode> = config.eval.modes.iter().copied().filter(|m| *m != EvalMode::BB).collect();
        for (tname, source, trec) in &tuned {
            if (config.eval.cross || source == target) && !tuned_modes.is_empty() {
                jobs.push((tname.clone(), Some(trec), tuned_modes.clone()));
            }
        }
        for (source, trec, modes) in jobs {
            let name = format!("eval-{source}-on-{target}");
            let inputs = json!({
                "base": digest_of(&base_rec), "corpus": digest_of(crec),
                "tuned": trec.map(digest_of), "modes": modes, "bank": ecfg,
            });
            let tuned_path = trec.map(|t| root.join(&t.name).join("model.ckpt"));
            r.stage(&name, inputs, |dir| {
                let tuned_oracle = match &tuned_path {
                    Some(p) => ToyOracle::tuned(Arc::new(load_model(p)?), source.clone()),
                    None => ToyOracle::tuned(base_model.clone(), "base"),
                };
                let mut files = Vec::new();
                for mode in &modes {
                    let (report, _, _) = run_mode(*mode, &base_oracle, &tuned_oracle, &ctx, &test, &ecfg)?;
                    let f = format!("{}.json", mode_file(*mode));
                    write_json(&dir.join(&f), &report)?;
                    files.push(f);
                }
                Ok(files)
            })?;
            for mode in modes {
                let text = std::fs::read_to_string(root.join(&name).join(format!("{}.json", mode_file(mode))))?;
                let report: EvalReport = serde_json::from_str(&text)?;
                let src = if mode == EvalMode::BB { target.clone() } else { source.clone() };
                reports.push((src, target.clone(), report));
            }
        }
    }

    let inputs = json!(r.stages.iter().map(|s| (s.name.clone(), digest_of(s))).collect::<Vec<_>>());
    r.stage("report", inputs, |dir| {
        let mut summary = Vec::new();
        for (source, target, rep) in &reports {
            let split = Metric::ALL.map(|m| correctness_split(&rep.rows, m));
            summary.push(json!({
                "source": source, "target": target, "mode": rep.mode,
                "accuracy": rep.accuracy, "instances": rep.instances, "errors": rep.errors,
                "cc_cos": rep.cc_cos, "cc_sp": rep.cc_sp,
                "degenerate_rate_cos": rep.degenerate_rate_cos, "degenerate_rate_sp": rep.degenerate_rate_sp,
                "correctness": split,
            }));
        }
        let mut separation = BTreeMap::new();
        for (domain, (records, _)) in &banks {
            let per_metric: BTreeMap<&str, Value> = Metric::ALL
                .iter()
                .map(|&m| {
                    let rows: Vec<Vec<f64>> = records.iter().map(|r| r.alignment.values(m)).collect();
                    let s = rank_separation(&rows);
                    (m.name(), json!({ "spread": q9(s.spread), "rank_means": s.rank_means.iter().map(|&x| q9(x)).collect::<Vec<_>>() }))
                })
                .collect();
            separation.insert(domain.clone(), per_metric);
        }
        let cross = cross_matrix(&reports)?;
        write_json(
            &dir.join("report.json"),
            &json!({ "reports": summary, "cross": cross, "rank_separation": separation, "agreement": agreements }),
        )?;
        let mut table = String::new();
        for (source, target) in unique_pairs(&reports) {
            let group: Vec<EvalReport> = reports
                .iter()
                .filter(|(s, t, rep)| t == &target && (s == &source || rep.mode == EvalMode::BB))
                .map(|(.., rep)| rep.clone())
                .collect();
            table.push_str(&format!("== {source} on {target} ==\n"));
            table.push_str(&render_reports(&group));
            table.push('\n');
        }
        table.push_str(&render_cross(&cross));
        std::fs::write(dir.join("tables.txt"), table)?;
        Ok(vec!["report.json".into(), "tables.txt".into()])
    })?;

    let manifest = Manifest {
        config_digest: r.config_digest.clone(),
        stages: r.stages.clone(),
    };
    write_json(&root.join("manifest.json"), &manifest)?;
    r.summary.manifest = Some(manifest);
    Ok(r.summary)
}

fn unique_pairs(reports: &[(String, String, EvalReport)]) -> Vec<(String, String)> {
    let mut v: Vec<(String, String)> = reports
        .iter()
        .filter(|(.., r)| r.mode != EvalMode::BB)
        .map(|(s, t, _)| (s.clone(), t.clone()))
        .collect();
    v.dedup();
    v
}

fn mode_file(m: EvalMode) -> &'static str {
    match m {
        EvalMode::BB => "bb",
        EvalMode::BT => "bt",
        EvalMode::TT => "tt",
    }
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut s = String::new();
    for it in items {
        s.push_str(&serde_json::to_string(it)?);
        s.push('\n');
    }
    std::fs::write(path, s)?;
    Ok(())
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    std::fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}
