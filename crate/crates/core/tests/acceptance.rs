//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.
//!
//! C7, C8, C9 and C11 read one shared pipeline run, built from scratch in a
//! temporary directory.

mod common;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use attrcons::alignment::{cc_cos, cc_sp, Metric};
use attrcons::attribution::{
    attribute_lig_detailed, exact_shapley, kernel_shap, lime_fit, AttributionRequest, AttributionVector, CoalitionGame, FnGame, LigParams,
    LimeParams, MaskDistribution, Method,
};
use attrcons::bank::{Bank, PreferencePair, PromptContext};
use attrcons::eval::analysis::agreement_of;
use attrcons::eval::{method_agreement, EvalReport};
use attrcons::pipeline::{read_jsonl, run_pipeline_in, PipelineConfig};
use attrcons::rng::Rng;
use attrcons::stats::Stat;
use attrcons::task::Corpus;
use attrcons::tokens::TokenId;
use attrcons::toylm::synth::{self, EOS};
use attrcons::toylm::{AdapterConfig, ForwardOptions, GradScope, ScoreItem};
use attrcons::train::dpo::{evaluate_pairs, reference_scores};
use attrcons::train::{scored_continuation, train_dpo, TrainConfig};

use common::*;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn run(id: &str, limit: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let t = Instant::now();
    let o = f();
    let took = t.elapsed();
    let in_time = took <= limit;
    let pass = o.pass && in_time;
    let time_note = if in_time { String::new() } else { format!(" (over the {}s limit)", limit.as_secs()) };
    println!(
        "{id} {} {}; {:.1}s{time_note}",
        if pass { "PASS" } else { "FAIL" },
        o.detail,
        took.as_secs_f64()
    );
    pass
}

fn mins(m: u64) -> Duration {
    Duration::from_secs(60 * m)
}

// C1

fn c1() -> Outcome {
    let mut m = (*base_model()).clone();
    let mut rng = Rng::named(1, "c1");
    m.attach_adapter(AdapterConfig { rank: 8, alpha: 16.0 }, &mut rng).unwrap();
    for p in &mut m.adapter.as_mut().unwrap().params {
        *p += 0.05 * rng.normal();
    }
    let ctx = PromptContext::toy();
    let corpus = Corpus::read(&fixture("toy_tasks.jsonl")).unwrap();
    let prompt = ctx.decision_input(&corpus.tasks[0]).unwrap().tokens().to_vec();
    let cont = [synth::LETTER_BASE + 1, EOS];
    let opts = ForwardOptions::adapter(true);

    let e = m.embed(&prompt).unwrap();
    let (_, g) = m.slp_grad_wrt_embeddings(std::slice::from_ref(&e), &cont, &opts).unwrap().remove(0);
    let mut flat = e.data.clone();
    let emb = gradcheck(&mut flat, &g.data, 100, &mut Rng::named(2, "c1"), |x| {
        let mm = attrcons::toylm::tensor::Matrix::from_vec(e.rows, e.cols, x.to_vec());
        m.slp_from_embeddings(&mm, &cont, &opts).unwrap()
    });

    let items = [ScoreItem {
        prompt: &prompt,
        continuation: &cont,
    }];
    let (_, g) = m.score_with_grad(&items, &[1.0], GradScope::Adapter, &opts).unwrap();
    let mut params = m.adapter.as_ref().unwrap().params.clone();
    let adapter = gradcheck(&mut params, &g, 100, &mut Rng::named(3, "c1"), |p| {
        let mut mm = m.clone();
        mm.adapter.as_mut().unwrap().params.copy_from_slice(p);
        mm.score(&items, &opts).unwrap()[0].slp
    });
    outcome(
        emb < 1e-3 && adapter < 1e-3,
        format!("worst relative error: embeddings {emb:.2e}, adapter {adapter:.2e} (100 coordinates each)"),
    )
}

// C2

fn c2() -> Outcome {
    let ctx = PromptContext::toy();
    let corpus = Corpus::read(&fixture("toy_tasks.jsonl")).unwrap();
    let o = attrcons::toylm::ToyOracle::base(base_model(), "base");
    let steps = [8, 32, 128, 256];
    let mut sums = [0.0; 4];
    let mut worst_256: f64 = 0.0;
    let tasks = &corpus.tasks[..20];
    for t in tasks {
        let req = AttributionRequest::new(ctx.decision_input(t).unwrap(), Vec::new(), vec![synth::LETTER_BASE + t.gold as TokenId]);
        for (i, &s) in steps.iter().enumerate() {
            let out = attribute_lig_detailed(&o, &req, &LigParams { steps: s, ..Default::default() }).unwrap();
            let e = out.completeness_error();
            sums[i] += e;
            if s == 256 {
                worst_256 = worst_256.max(e);
            }
        }
    }
    let avg: Vec<f64> = sums.iter().map(|s| s / tasks.len() as f64).collect();
    let monotone = avg.windows(2).all(|w| w[1] <= w[0]);
    outcome(
        worst_256 < 0.01 && monotone,
        format!("worst error at 256 steps {worst_256:.2e}; averages over steps {steps:?}: {}", avg.iter().map(|e| format!("{e:.2e}")).collect::<Vec<_>>().join(" ")),
    )
}

// C3

fn linear_game(w: &[f64], bias: f64) -> FnGame<impl Fn(&[bool]) -> f64 + '_> {
    FnGame {
        players: w.len(),
        f: move |s: &[bool]| bias + s.iter().zip(w).filter(|(p, _)| **p).map(|(_, w)| w).sum::<f64>(),
    }
}

fn c3() -> Outcome {
    let mut rng = Rng::named(3, "c3");
    let (mut exhaustive, mut sampled): (f64, f64) = (0.0, 0.0);
    for trial in 0..40 {
        let p = 1 + trial % 8;
        let w: Vec<f64> = (0..p).map(|_| rng.normal()).collect();
        let g = linear_game(&w, rng.normal());
        let ex = LimeParams {
            masks: MaskDistribution::Exhaustive,
            ridge: 0.0,
            ..Default::default()
        };
        let phi = lime_fit(&g, &ex, &mut Rng::new(0, 0)).unwrap();
        exhaustive = exhaustive.max(max_abs_diff(&phi, &w));
        if p >= 2 {
            let phi = lime_fit(&g, &LimeParams::default(), &mut Rng::new(42, trial as u64)).unwrap();
            sampled = sampled.max(max_abs_diff(&phi, &w));
        }
    }
    outcome(
        exhaustive < 1e-6 && sampled < 1e-2,
        format!("max weight error: exhaustive {exhaustive:.2e}, sampled n=500 {sampled:.2e} (40 games, p ≤ 8)"),
    )
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

// C4

/// A random game where players `i` and `j` are interchangeable and player
/// `k` never changes the value.
struct StructuredGame {
    p: usize,
    table: Vec<f64>,
    i: usize,
    j: usize,
    k: usize,
}

impl StructuredGame {
    fn bits(s: &[bool]) -> usize {
        s.iter().enumerate().filter(|(_, &b)| b).map(|(n, _)| 1 << n).sum()
    }

    fn value(&self, s: &[bool]) -> f64 {
        let mut s = s.to_vec();
        s[self.k] = false;
        let mut swapped = s.clone();
        swapped.swap(self.i, self.j);
        self.table[Self::bits(&s)] + self.table[Self::bits(&swapped)]
    }
}

impl CoalitionGame for StructuredGame {
    fn players(&self) -> usize {
        self.p
    }
    fn values(&self, c: &[Vec<bool>]) -> attrcons::Result<Vec<f64>> {
        Ok(c.iter().map(|s| self.value(s)).collect())
    }
}

fn c4() -> Outcome {
    let mut rng = Rng::named(4, "c4");
    let (mut eff, mut sym, mut null, mut ks): (f64, f64, f64, f64) = (0.0, 0.0, 0.0, 0.0);
    for n in 0..100 {
        let p = 3 + n % 8;
        let mut picks = rng.subset(p, 3);
        rng.shuffle(&mut picks);
        let g = StructuredGame {
            p,
            table: (0..1 << p).map(|_| rng.normal()).collect(),
            i: picks[0],
            j: picks[1],
            k: picks[2],
        };
        let phi = exact_shapley(&g).unwrap();
        let total = g.value(&vec![true; p]) - g.value(&vec![false; p]);
        eff = eff.max((phi.iter().sum::<f64>() - total).abs());
        sym = sym.max((phi[g.i] - phi[g.j]).abs());
        null = null.max(phi[g.k].abs());
        let k = kernel_shap(&g, (1 << p) - 2, &mut Rng::new(n as u64, 0)).unwrap();
        ks = ks.max(max_abs_diff(&k, &phi));
    }
    outcome(
        eff < 1e-9 && sym < 1e-9 && null < 1e-9 && ks < 1e-6,
        format!("efficiency {eff:.1e}, symmetry {sym:.1e}, null player {null:.1e}, exhaustive KernelSHAP {ks:.1e} (100 games, p ≤ 10)"),
    )
}

// C5

fn direct_cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for k in 0..a.len() {
        dot += a[k] * b[k];
        na += a[k] * a[k];
        nb += b[k] * b[k];
    }
    (na > 0.0 && nb > 0.0).then(|| dot / na.sqrt() / nb.sqrt())
}

/// Rank of each entry: count of smaller entries plus the mean position
/// within its tie group.
fn direct_ranks(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|&x| {
            let less = v.iter().filter(|&&y| y < x).count() as f64;
            let equal = v.iter().filter(|&&y| y == x).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

fn direct_spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    let (ra, rb) = (direct_ranks(a), direct_ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma) * (x - ma)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb) * (y - mb)).sum();
    (va > 0.0 && vb > 0.0).then(|| cov / (va * vb).sqrt())
}

fn textbook_spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (direct_ranks(a), direct_ranks(b));
    let m = a.len() as f64;
    let d2: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - y).powi(2)).sum();
    1.0 - 6.0 * d2 / (m * (m * m - 1.0))
}

fn c5() -> Outcome {
    let mut rng = Rng::named(5, "c5");
    let (mut cos_err, mut sp_err, mut textbook_err): (f64, f64, f64) = (0.0, 0.0, 0.0);
    let (mut ties, mut degenerate_agree, mut degenerate_total) = (0, 0, 0);
    for n in 0..1000 {
        let len = 2 + rng.below(20);
        let mask: Vec<bool> = (0..len).map(|i| i > 1 && rng.uniform() < 0.2).collect();
        // a third of the pairs use a handful of integer levels, so ties are common
        let tied = n % 3 == 0;
        let draw = |r: &mut Rng| if tied { r.below(3) as f64 } else { r.normal() };
        let a: Vec<f64> = mask.iter().map(|&m| if m { 0.0 } else { draw(&mut rng) }).collect();
        let b: Vec<f64> = mask.iter().map(|&m| if m { 0.0 } else { draw(&mut rng) }).collect();
        let (ua, ub): (Vec<f64>, Vec<f64>) = a.iter().zip(&b).zip(&mask).filter(|(_, &m)| !m).map(|((x, y), _)| (*x, *y)).unzip();
        let va = AttributionVector::new(a, Method::Lime, 0.0, mask.clone()).unwrap();
        let vb = AttributionVector::new(b, Method::Lime, 0.0, mask).unwrap();
        let c = cc_cos(&va, &vb).unwrap();
        let s = cc_sp(&va, &vb).unwrap();
        for (got, want) in [(&c, direct_cosine(&ua, &ub)), (&s, direct_spearman(&ua, &ub))] {
            if want.is_none() || got.degenerate {
                degenerate_total += 1;
                degenerate_agree += (want.is_none() && got.degenerate) as usize;
            }
        }
        if let Some(w) = direct_cosine(&ua, &ub).filter(|_| !c.degenerate) {
            cos_err = cos_err.max((c.value - w).abs());
        }
        if let Some(w) = direct_spearman(&ua, &ub).filter(|_| !s.degenerate) {
            sp_err = sp_err.max((s.value - w).abs());
            let has_ties = |v: &[f64]| v.iter().enumerate().any(|(i, x)| v[..i].contains(x));
            if has_ties(&ua) || has_ties(&ub) {
                ties += 1;
            } else {
                textbook_err = textbook_err.max((s.value - textbook_spearman(&ua, &ub)).abs());
            }
        }
    }
    outcome(
        cos_err < 1e-9 && sp_err < 1e-9 && textbook_err < 1e-9 && degenerate_agree == degenerate_total,
        format!(
            "max error: cc_cos {cos_err:.1e}, cc_sp {sp_err:.1e}, cc_sp vs textbook formula {textbook_err:.1e}; \
             {ties} tied pairs, {degenerate_agree}/{degenerate_total} degenerate cases agree (1000 pairs)"
        ),
    )
}

// C6

fn c6() -> Outcome {
    let pairs: Vec<PreferencePair> = read_jsonl(&fixture("toy_pairs.jsonl")).unwrap();
    let cfg = TrainConfig::toy();
    let mut m = (*base_model()).clone();
    train_dpo(&mut m, &pairs, &cfg).unwrap();
    let refs = reference_scores(&base_model(), &pairs).unwrap();
    let (loss, _, acc) = evaluate_pairs(&m, &pairs, &refs, &cfg).unwrap();

    let mut z = (*base_model()).clone();
    train_dpo(&mut z, &pairs, &TrainConfig { epochs: 0, ..cfg }).unwrap();
    let identity = pairs.iter().all(|p| {
        let cont = scored_continuation(&p.chosen, EOS);
        z.slp(&p.context, &cont, true).unwrap() == base_model().slp(&p.context, &cont, false).unwrap()
    });
    outcome(
        loss < std::f64::consts::LN_2 && acc >= 0.8 && identity,
        format!(
            "final loss {loss:.4} (ln 2 = 0.6931), pair accuracy {acc:.3}, zero-step identity {identity} ({} pairs)",
            pairs.len()
        ),
    )
}

// C7 to C9: the shared pipeline

fn acceptance_pipeline(dir: &Path) -> attrcons::Result<PathBuf> {
    let config = PipelineConfig::load(&config_file("acceptance.toml"))?;
    let root = dir.join("run");
    run_pipeline_in(&config, &root)?;
    Ok(root)
}

fn report(root: &Path, stage: &str, mode: &str) -> EvalReport {
    let text = std::fs::read_to_string(root.join(stage).join(format!("{mode}.json"))).unwrap();
    serde_json::from_str(&text).unwrap()
}

/// Per-instance mean CC-Sp keyed by instance id.
fn row_means(r: &EvalReport, pick: impl Fn(&[f64]) -> f64) -> BTreeMap<u64, f64> {
    r.rows.iter().filter(|row| !row.cc_sp.is_empty()).map(|row| (row.id, pick(&row.cc_sp))).collect()
}

fn mean_of(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn worst(v: &[f64]) -> f64 {
    v.iter().cloned().fold(f64::INFINITY, f64::min)
}

fn best(v: &[f64]) -> f64 {
    v.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
}

/// Mean and standard error of `b − a` over instances present in both.
fn paired(a: &BTreeMap<u64, f64>, b: &BTreeMap<u64, f64>) -> Stat {
    let d: Vec<f64> = a.iter().filter_map(|(id, x)| b.get(id).map(|y| y - x)).collect();
    Stat::of(&d)
}

fn c7(root: &Path) -> Outcome {
    let bb = report(root, "eval-base-on-alpha", "bb");
    let tt = report(root, "eval-dpo-alpha-on-alpha", "tt");
    let delta = paired(&row_means(&bb, mean_of), &row_means(&tt, mean_of));
    let rel = |pick: fn(&[f64]) -> f64| {
        let (b, t) = (row_means(&bb, pick), row_means(&tt, pick));
        let base = mean_of(&b.values().cloned().collect::<Vec<_>>());
        paired(&b, &t).mean / base.abs()
    };
    let (rw, rb) = (rel(worst), rel(best));
    let acc_change = 100.0 * (tt.accuracy.unwrap_or(0.0) - bb.accuracy.unwrap_or(0.0));
    let n = bb.instances.min(tt.instances);
    outcome(
        n >= 500 && delta.mean > delta.se && delta.mean > 0.0 && rw > rb && acc_change.abs() <= 2.0,
        format!(
            "T-T minus B-B mean CC-Sp {:+.4} (SE {:.4}, n {}); relative change worst {:+.1}% vs best {:+.1}%; accuracy {:+.1} points",
            delta.mean,
            delta.se,
            delta.n,
            100.0 * rw,
            100.0 * rb,
            acc_change
        ),
    )
}

fn c8(root: &Path) -> Outcome {
    let bb = row_means(&report(root, "eval-base-on-alpha", "bb"), mean_of);
    let dpo = row_means(&report(root, "eval-dpo-alpha-on-alpha", "tt"), mean_of);
    let sft = row_means(&report(root, "eval-sft-alpha-on-alpha", "tt"), mean_of);
    let (d_dpo, d_sft) = (paired(&bb, &dpo), paired(&bb, &sft));
    let gap = paired(&sft, &dpo);
    outcome(
        gap.mean > gap.se && gap.mean > 0.0,
        format!(
            "T-T minus B-B mean CC-Sp: DPO {:+.4}, SFT {:+.4}; DPO minus SFT {:+.4} (SE {:.4})",
            d_dpo.mean, d_sft.mean, gap.mean, gap.se
        ),
    )
}

fn c9(root: &Path) -> Outcome {
    let text = std::fs::read_to_string(root.join("report/report.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    let spread = |m: Metric| v["rank_separation"]["alpha"][m.name()]["spread"].as_f64().unwrap();
    let (sp, cos) = (spread(Metric::CcSp), spread(Metric::CcCos));
    let records = Bank::read(&root.join("bank-alpha")).unwrap().records.len();
    outcome(sp > cos, format!("rank-separation spread CC-Sp {sp:.5} vs CC-Cos {cos:.5} ({records} bank records)"))
}

// C10

fn c10() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(config_file("acceptance.toml")).unwrap();
    let mut base = PipelineConfig::from_toml(&text).unwrap();
    base.base.checkpoint = Some(fixture("toy_base.ckpt"));
    base.corpus.n = 80;
    base.bank.limit = Some(6);
    base.bank.attribution = attrcons::attribution::MethodParams::Lime(LimeParams {
        n_samples: 40,
        ..Default::default()
    });
    base.eval.limit = Some(4);
    if let Some(a) = base.agreement.as_mut() {
        a.limit = 3;
    }
    let mut digests = Vec::new();
    let mut files = Vec::new();
    for i in 0..2 {
        let root = dir.path().join(format!("run{i}"));
        let mut c = base.clone();
        c.out = root.clone();
        let s = run_pipeline_in(&c, &root).unwrap();
        let m = s.manifest.unwrap();
        files.push(std::fs::read(root.join("bank-alpha/bank.jsonl")).unwrap());
        files.push(std::fs::read(root.join("report/report.json")).unwrap());
        files.push(std::fs::read(root.join("report/tables.txt")).unwrap());
        digests.push(m);
    }
    let n: usize = digests[0].stages.iter().map(|s| s.artifacts.len()).sum();
    let same = digests[0] == digests[1] && files[..3] == files[3..];
    outcome(same, format!("two runs: {n} artifacts, manifests and bank/report bytes identical: {same}"))
}

// C11

fn c11(root: &Path) -> Outcome {
    let same = agreement_of(&[0.1, 0.5, 0.3, 0.9, 0.2], &[0.1, 0.5, 0.3, 0.9, 0.2]);
    let rev = agreement_of(&[5.0, 4.0, 3.0, 2.0, 1.0], &[1.0, 2.0, 3.0, 4.0, 5.0]);
    let units = same == (1.0, 1.0, Some(1.0)) && rev.0 == 0.0 && (rev.1 - 1.0 / 3.0).abs() < 1e-12 && rev.2 == Some(-1.0);

    let bank = Bank::read(&root.join("bank-alpha")).unwrap().records;
    let self_agreement = method_agreement(&bank, &bank, Metric::CcSp).unwrap();
    let self_ok = self_agreement.top1 == 1.0 && self_agreement.top3 == 1.0 && self_agreement.spearman == Some(1.0);

    let text = std::fs::read_to_string(root.join("report/report.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    let entries = v["agreement"].as_array().cloned().unwrap_or_default();
    let emitted = !entries.is_empty()
        && entries
            .iter()
            .all(|e| e["agreement"]["top1"].is_number() && e["agreement"]["top3"].is_number() && !e["agreement"]["spearman"].is_null());
    let lig_sp = entries
        .iter()
        .find(|e| e["agreement"]["metric"] == "cc_sp")
        .map(|e| format!("{} {} {}", e["agreement"]["top1"], e["agreement"]["top3"], e["agreement"]["spearman"]))
        .unwrap_or_default();
    outcome(
        units && self_ok && emitted,
        format!(
            "identical (1/1/1) and reversed k=5 (0, 1/3, -1) fixtures {units}; self-agreement {self_ok}; \
             {} pipeline entries, LIME vs LIG on CC-Sp top1/top3/spearman {lig_sp}",
            entries.len()
        ),
    )
}

fn main() {
    let mut ok = true;
    ok &= run("C1", mins(1), c1);
    ok &= run("C2", mins(2), c2);
    ok &= run("C3", mins(1), c3);
    ok &= run("C4", mins(2), c4);
    ok &= run("C5", mins(1), c5);
    ok &= run("C6", mins(5), c6);
    let t = Instant::now();
    let dir = tempfile::tempdir().expect("temporary directory");
    let root = acceptance_pipeline(dir.path());
    let pipeline_time = t.elapsed();
    match &root {
        Ok(root) => {
            // the shared run counts against each of C7 and C8
            ok &= run("C7", mins(30).saturating_sub(pipeline_time), || c7(root));
            ok &= run("C8", mins(30).saturating_sub(pipeline_time), || c8(root));
            ok &= run("C9", mins(5), || c9(root));
        }
        Err(e) => {
            for id in ["C7", "C8", "C9"] {
                println!("{id} FAIL acceptance pipeline failed: {e}");
            }
            ok = false;
        }
    }
    ok &= run("C10", mins(5), c10);
    match &root {
        Ok(root) => ok &= run("C11", mins(1), || c11(root)),
        Err(_) => {
            println!("C11 FAIL acceptance pipeline failed");
            ok = false;
        }
    }
    println!("acceptance pipeline {:.1}s", pipeline_time.as_secs_f64());
    if !ok {
        std::process::exit(1);
    }
}
