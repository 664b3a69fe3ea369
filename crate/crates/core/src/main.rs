use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use attrcons::alignment::Metric;
use attrcons::attribution::{attribute, AttributionRequest, Method, MethodParams};
use attrcons::bank::{elicit_decision, extract_pairs, select_tasks, Bank, BankConfig, PreferencePair, PromptContext};
use attrcons::eval::{method_agreement, rank_separation, render_reports, run_mode, EvalMode, EvalReport};
use attrcons::oracle::remote::RemoteOracle;
use attrcons::oracle::server::{serve_stream, serve_tcp};
use attrcons::oracle::Oracle;
use attrcons::pipeline::{generate_corpus, read_jsonl, run_pipeline_in, write_jsonl, PipelineConfig, OUT_ENV};
use attrcons::rng::Rng;
use attrcons::task::{read_external, Corpus, Split, DEFAULT_RATIOS};
use attrcons::tokens::{load_skip_literals, Vocab};
use attrcons::toylm::pretrain::{pretrain_recipe, ToyRecipe};
use attrcons::toylm::{checkpoint, synth, ToyModel, ToyOracle};
use attrcons::train::{sft_examples, train_dpo, train_sft, Profile, TrainConfig};
use attrcons::{Error, Result};

#[derive(Parser)]
#[command(name = "attrcons", version, about = "Attributional self-consistency: attributions, alignment banks, DPO, evaluation")]
struct Cli {
    /// Base seed for anything the command samples.
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    #[arg(long, global = true, default_value = "toy")]
    profile: String,
    /// Output file or directory, depending on the command.
    #[arg(long, global = true, env = OUT_ENV)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthetic task corpora.
    #[command(subcommand)]
    Corpus(CorpusCmd),
    /// Pretrain the toy base model from a recipe.
    Pretrain {
        /// TOML recipe; defaults to the built-in one.
        #[arg(long)]
        recipe: Option<PathBuf>,
    },
    #[command(subcommand)]
    Bank(BankCmd),
    #[command(subcommand)]
    Train(TrainCmd),
    #[command(subcommand)]
    Eval(EvalCmd),
    #[command(subcommand)]
    Report(ReportCmd),
    #[command(subcommand)]
    Pipeline(PipelineCmd),
    /// Attribute each task's decision; one JSON line per task.
    Attribute {
        #[command(flatten)]
        ctx: CtxArgs,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        oracle: String,
        #[arg(long, default_value = "lime")]
        method: String,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Serve a toy checkpoint over the oracle wire protocol.
    Serve {
        #[arg(long)]
        oracle: String,
        /// TCP address; reads stdin and writes stdout when omitted.
        #[arg(long)]
        addr: Option<String>,
    },
}

#[derive(Subcommand)]
enum CorpusCmd {
    Gen {
        #[arg(long, default_value = "alpha")]
        domain: String,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 42)]
        split_seed: u64,
    },
    /// Import a pre-tokenized external dataset.
    Import {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        domain: String,
        #[arg(long, default_value_t = 42)]
        split_seed: u64,
    },
}

#[derive(Args)]
struct CtxArgs {
    /// JSON array of vocabulary pieces, for non-toy oracles.
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Skip-token literal list, one per line.
    #[arg(long)]
    skip: Option<PathBuf>,
}

#[derive(Subcommand)]
enum BankCmd {
    Build {
        #[command(flatten)]
        ctx: CtxArgs,
        #[arg(long)]
        corpus: PathBuf,
        /// `toy:CKPT`, `tuned:CKPT` or `remote:HOST:PORT`.
        #[arg(long)]
        oracle: String,
        /// Explainer oracle; defaults to the decider.
        #[arg(long)]
        explainer: Option<String>,
        /// TOML bank config; flags below override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        metric: Option<String>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        split: Option<String>,
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Preference pairs from an existing bank.
    Pairs {
        #[arg(long)]
        bank: PathBuf,
        #[arg(long, default_value = "sp")]
        metric: String,
    },
}

#[derive(Args)]
struct TrainArgs {
    /// Bank directory holding `pairs.jsonl`, or a pairs file.
    #[arg(long)]
    bank: PathBuf,
    #[arg(long)]
    base: PathBuf,
    /// TOML train config; defaults to the profile's.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum TrainCmd {
    Dpo(TrainArgs),
    Sft(TrainArgs),
}

#[derive(Subcommand)]
enum EvalCmd {
    Run {
        #[command(flatten)]
        ctx: CtxArgs,
        #[arg(long)]
        mode: String,
        /// Base oracle spec.
        #[arg(long)]
        decider: String,
        /// Tuned oracle spec.
        #[arg(long)]
        explainer: String,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        limit: Option<usize>,
    },
    Agreement {
        #[arg(long)]
        bank_a: PathBuf,
        #[arg(long)]
        bank_b: PathBuf,
    },
    RankSep {
        #[arg(long)]
        bank: PathBuf,
    },
}

#[derive(Subcommand)]
enum ReportCmd {
    /// Render eval report JSON files as a table.
    Render { reports: Vec<PathBuf> },
}

#[derive(Subcommand)]
enum PipelineCmd {
    Run {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn out_path(cli_out: &Option<PathBuf>) -> Result<&Path> {
    cli_out.as_deref().ok_or_else(|| Error::config("out", format!("pass --out or set {OUT_ENV}")))
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    toml::from_str(&std::fs::read_to_string(path)?).map_err(|e| Error::config(path.display().to_string(), e.message().to_owned()))
}

fn write_json<T: serde::Serialize>(path: &Path, v: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(v)? + "\n")?;
    Ok(())
}

fn load_model(path: &Path) -> Result<Arc<ToyModel>> {
    Ok(Arc::new(checkpoint::load(path)?.0))
}

fn open_oracle(spec: &str) -> Result<Box<dyn Oracle>> {
    let (kind, rest) = spec
        .split_once(':')
        .ok_or_else(|| Error::config("oracle", format!("`{spec}`: expected toy:CKPT, tuned:CKPT or remote:ADDR")))?;
    match kind {
        "toy" => Ok(Box::new(ToyOracle::base(load_model(Path::new(rest))?, spec))),
        "tuned" => Ok(Box::new(ToyOracle::tuned(load_model(Path::new(rest))?, spec))),
        "remote" => Ok(Box::new(RemoteOracle::connect_tcp(rest)?)),
        _ => Err(Error::config("oracle", format!("unknown oracle kind `{kind}`"))),
    }
}

fn prompt_context(args: &CtxArgs, corpus: &Corpus) -> Result<PromptContext> {
    let vocab = match &args.vocab {
        Some(p) => Vocab::new(serde_json::from_str(&std::fs::read_to_string(p)?)?),
        None => synth::vocab(),
    };
    let skips = match &args.skip {
        Some(p) => load_skip_literals(p)?,
        None => synth::SKIP_LITERALS.iter().map(|s| s.to_string()).collect(),
    };
    PromptContext::new(corpus.template().clone(), vocab, &skips)
}

fn apply_overrides(
    c: &mut BankConfig,
    method: Option<&str>,
    metric: Option<&str>,
    k: Option<usize>,
    split: Option<&str>,
    limit: Option<usize>,
) -> Result<()> {
    if let Some(m) = method {
        let m = Method::parse(m)?;
        if c.attribution.method() != m {
            c.attribution = MethodParams::default_for(m);
        }
    }
    if let Some(m) = metric {
        c.metric = Metric::parse(m)?;
    }
    if let Some(k) = k {
        c.k = k;
    }
    if let Some(s) = split {
        c.split = Split::parse(s)?;
    }
    if limit.is_some() {
        c.limit = limit;
    }
    c.validate()
}

fn pairs_of(path: &Path) -> Result<Vec<PreferencePair>> {
    let path = if path.is_dir() { path.join("pairs.jsonl") } else { path.to_path_buf() };
    read_jsonl(&path)
}

fn train_config(args: &TrainArgs, profile: Profile, seed: u64, sft: bool) -> Result<TrainConfig> {
    let c = match &args.config {
        Some(p) => read_toml(p)?,
        None if sft => TrainConfig { seed, ..TrainConfig::sft(profile) },
        None => TrainConfig { seed, ..TrainConfig::for_profile(profile) },
    };
    c.validate()?;
    Ok(c)
}

fn run(cli: Cli) -> Result<()> {
    let profile = Profile::parse(&cli.profile)?;
    let seed = cli.seed;
    match cli.cmd {
        Cmd::Corpus(CorpusCmd::Gen { domain, n, split_seed }) => {
            let out = out_path(&cli.out)?;
            generate_corpus(&domain, n, seed, DEFAULT_RATIOS, split_seed)?.write(out)?;
            log::info!("wrote {n} {domain} tasks to {}", out.display());
        }
        Cmd::Corpus(CorpusCmd::Import { input, domain, split_seed }) => {
            read_external(&input, &domain, synth::template(), DEFAULT_RATIOS, split_seed)?.write(out_path(&cli.out)?)?;
        }
        Cmd::Pretrain { recipe } => {
            let out = out_path(&cli.out)?;
            let recipe: ToyRecipe = match recipe {
                Some(p) => read_toml(&p)?,
                None => ToyRecipe::default(),
            };
            let (model, report) = pretrain_recipe(&recipe)?;
            let seeds = [("init".to_string(), recipe.init_seed), ("pretrain".to_string(), recipe.schedule.seed)].into();
            let meta = [("recipe".to_string(), serde_json::to_value(&recipe)?)].into();
            checkpoint::save(out, &model, &seeds, &meta)?;
            write_json(&out.with_extension("report.json"), &report)?;
        }
        Cmd::Bank(BankCmd::Build {
            ctx,
            corpus,
            oracle,
            explainer,
            config,
            method,
            metric,
            k,
            split,
            limit,
        }) => {
            let out = out_path(&cli.out)?;
            let corpus = Corpus::read(&corpus)?;
            let ctx = prompt_context(&ctx, &corpus)?;
            let mut c: BankConfig = match &config {
                Some(p) => read_toml(p)?,
                None => BankConfig {
                    attribution_seed: seed,
                    ..BankConfig::default()
                },
            };
            apply_overrides(&mut c, method.as_deref(), metric.as_deref(), k, split.as_deref(), limit)?;
            let decider = open_oracle(&oracle)?;
            let explainer = explainer.map(|s| open_oracle(&s)).transpose()?;
            let tasks = select_tasks(corpus.split(c.split), c.limit);
            let (bank, errors) = Bank::build(decider.as_ref(), explainer.as_deref().unwrap_or(decider.as_ref()), &ctx, &tasks, &c)?;
            let summary = bank.write_dir(out, &errors)?;
            let pairs = extract_pairs(&bank.records, c.metric, &ctx);
            write_jsonl(&out.join("pairs.jsonl"), &pairs.pairs)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Cmd::Bank(BankCmd::Pairs { bank, metric }) => {
            let out = out_path(&cli.out)?;
            let bank = Bank::read(&bank)?;
            let pairs = extract_pairs(&bank.records, Metric::parse(&metric)?, &PromptContext::toy());
            write_jsonl(out, &pairs.pairs)?;
            log::info!("{} pairs, {} skipped", pairs.pairs.len(), pairs.skipped());
        }
        Cmd::Train(cmd) => {
            let out = out_path(&cli.out)?;
            let (args, sft) = match &cmd {
                TrainCmd::Dpo(a) => (a, false),
                TrainCmd::Sft(a) => (a, true),
            };
            let config = train_config(args, profile, seed, sft)?;
            let pairs = pairs_of(&args.bank)?;
            let mut model = (*load_model(&args.base)?).clone();
            let report = if sft {
                train_sft(&mut model, &sft_examples(&pairs), &config)?
            } else {
                train_dpo(&mut model, &pairs, &config)?
            };
            let seeds = [("adapter".to_string(), config.seed)].into();
            let meta = [("train".to_string(), serde_json::to_value(&config)?)].into();
            checkpoint::save(out, &model, &seeds, &meta)?;
            let log_path = out.with_extension("log.jsonl");
            let mut log = std::fs::File::create(&log_path)?;
            for (step, loss) in report.step_losses.iter().enumerate() {
                writeln!(log, "{}", json!({ "step": step, "loss": loss }))?;
            }
            write_json(&out.with_extension("report.json"), &report)?;
        }
        Cmd::Eval(EvalCmd::Run {
            ctx,
            mode,
            decider,
            explainer,
            corpus,
            config,
            limit,
        }) => {
            let mode = EvalMode::parse(&mode)?;
            let corpus = Corpus::read(&corpus)?;
            let ctx = prompt_context(&ctx, &corpus)?;
            let mut c: BankConfig = match &config {
                Some(p) => read_toml(p)?,
                None => BankConfig {
                    attribution_seed: seed,
                    ..BankConfig::default()
                },
            };
            c.split = Split::Test;
            apply_overrides(&mut c, None, None, None, None, limit)?;
            let (base, tuned) = (open_oracle(&decider)?, open_oracle(&explainer)?);
            let tasks = select_tasks(corpus.split(c.split), c.limit);
            let (report, bank, errors) = run_mode(mode, base.as_ref(), tuned.as_ref(), &ctx, &tasks, &c)?;
            print!("{}", render_reports(std::slice::from_ref(&report)));
            if let Some(out) = &cli.out {
                bank.write_dir(out, &errors)?;
                write_json(&out.join("report.json"), &report)?;
            }
        }
        Cmd::Eval(EvalCmd::Agreement { bank_a, bank_b }) => {
            let (a, b) = (Bank::read(&bank_a)?.records, Bank::read(&bank_b)?.records);
            let res: Vec<_> = Metric::ALL.iter().map(|&m| method_agreement(&a, &b, m)).collect::<Result<_>>()?;
            let text = serde_json::to_string_pretty(&res)?;
            println!("{text}");
            if let Some(out) = &cli.out {
                std::fs::write(out, text + "\n")?;
            }
        }
        Cmd::Eval(EvalCmd::RankSep { bank }) => {
            let records = Bank::read(&bank)?.records;
            let res: Vec<_> = Metric::ALL
                .iter()
                .map(|&m| {
                    let rows: Vec<Vec<f64>> = records.iter().map(|r| r.alignment.values(m)).collect();
                    let s = rank_separation(&rows);
                    json!({ "metric": m, "rank_means": s.rank_means, "spread": s.spread })
                })
                .collect();
            println!("{}", serde_json::to_string_pretty(&res)?);
        }
        Cmd::Report(ReportCmd::Render { reports }) => {
            let reports: Vec<EvalReport> = reports
                .iter()
                .map(|p| Ok(serde_json::from_str(&std::fs::read_to_string(p)?)?))
                .collect::<Result<_>>()?;
            print!("{}", render_reports(&reports));
        }
        Cmd::Pipeline(PipelineCmd::Run { config }) => {
            let config = PipelineConfig::load(&config)?;
            let root = cli.out.clone().unwrap_or_else(|| config.out.clone());
            let summary = run_pipeline_in(&config, &root)?;
            log::info!("ran {:?}; up to date {:?}", summary.ran, summary.skipped);
            let tables = root.join("report/tables.txt");
            if let Ok(t) = std::fs::read_to_string(tables) {
                print!("{t}");
            }
        }
        Cmd::Attribute {
            ctx,
            corpus,
            oracle,
            method,
            split,
            limit,
        } => {
            let corpus = Corpus::read(&corpus)?;
            let ctx = prompt_context(&ctx, &corpus)?;
            let oracle = open_oracle(&oracle)?;
            let params = MethodParams::default_for(Method::parse(&method)?);
            let stdout = std::io::stdout();
            let mut w = stdout.lock();
            for task in select_tasks(corpus.split(Split::parse(&split)?), limit) {
                let x = ctx.decision_input(task)?;
                let dec = elicit_decision(oracle.as_ref(), &ctx, task, BankConfig::default().decision_max_tokens)?;
                let req = AttributionRequest::new(x, Vec::new(), dec.y_dec.clone());
                let mut rng = Rng::named(seed, "attribution").derive("instance", task.id);
                let v = attribute(oracle.as_ref(), &req, &params, &mut rng)?;
                let line = json!({ "id": task.id, "method": v.method, "params": params, "scores": v.scores, "target_slp": v.target_slp });
                writeln!(w, "{line}")?;
            }
        }
        Cmd::Serve { oracle, addr } => {
            let oracle: Arc<dyn Oracle> = Arc::from(open_oracle(&oracle)?);
            match addr {
                Some(a) => {
                    let (local, handle) = serve_tcp(oracle, a.as_str())?;
                    eprintln!("listening on {local}");
                    let _ = handle.join();
                }
                None => serve_stream(oracle.as_ref(), std::io::stdin().lock(), std::io::stdout().lock())?,
            }
        }
    }
    Ok(())
}
