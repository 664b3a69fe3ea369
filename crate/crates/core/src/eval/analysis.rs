//! Breakdowns of alignment scores: correctness classes, rank positions,
//! agreement between attribution methods, and cross-domain deltas.

use serde::{Deserialize, Serialize};

use super::{DetailRow, EvalMode, EvalReport};
use crate::alignment::{average_ranks, pearson, Metric};
use crate::bank::BankRecord;
use crate::error::{Error, Result};
use crate::numfmt::q9;
use crate::stats::{relative_delta_pct, WorstMeanBest};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassSplit {
    pub metric: Metric,
    /// Rows whose decision was correct; `None` when there are none.
    pub correct: Option<WorstMeanBest>,
    pub incorrect: Option<WorstMeanBest>,
    /// Correct minus incorrect, for worst, mean and best.
    pub delta: Option<[f64; 3]>,
}

/// Scores split by decision correctness. Unparsed decisions belong to
/// neither class.
pub fn correctness_split(rows: &[DetailRow], metric: Metric) -> ClassSplit {
    let class = |want: bool| {
        let v: Vec<Vec<f64>> = rows
            .iter()
            .filter(|r| r.correct == Some(want))
            .map(|r| r.values(metric).to_vec())
            .collect();
        (!v.is_empty()).then(|| WorstMeanBest::of(&v))
    };
    let (t, f) = (class(true), class(false));
    let delta = match (&t, &f) {
        (Some(t), Some(f)) => Some([
            q9(t.worst.mean - f.worst.mean),
            q9(t.mean.mean - f.mean.mean),
            q9(t.best.mean - f.best.mean),
        ]),
        _ => None,
    };
    ClassSplit {
        metric,
        correct: t,
        incorrect: f,
        delta,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankSeparation {
    /// `per_rank[j]` holds every record's `j`-th highest score.
    pub per_rank: Vec<Vec<f64>>,
    pub rank_means: Vec<f64>,
    /// Population variance of the per-rank means.
    pub spread: f64,
}

/// Sorts each record's scores in descending order and summarizes each rank
/// position. Records shorter than the longest contribute to fewer ranks.
pub fn rank_separation<R: AsRef<[f64]>>(rows: &[R]) -> RankSeparation {
    let k = rows.iter().map(|r| r.as_ref().len()).max().unwrap_or(0);
    let mut per_rank = vec![Vec::new(); k];
    for r in rows {
        let mut v = r.as_ref().to_vec();
        v.sort_by(|a, b| b.total_cmp(a));
        for (j, x) in v.into_iter().enumerate() {
            per_rank[j].push(x);
        }
    }
    let rank_means: Vec<f64> = per_rank.iter().map(|v| v.iter().sum::<f64>() / v.len() as f64).collect();
    let spread = if rank_means.is_empty() {
        0.0
    } else {
        let m = rank_means.iter().sum::<f64>() / rank_means.len() as f64;
        rank_means.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / rank_means.len() as f64
    };
    RankSeparation {
        per_rank,
        rank_means,
        spread,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    pub metric: Metric,
    pub records: usize,
    /// Mean of per-record indicators that both methods pick the same best explanation.
    pub top1: f64,
    /// Mean of per-record `|top3_A ∩ top3_B| / 3`.
    pub top3: f64,
    /// Mean rank correlation between the two score vectors, over records
    /// where neither is constant.
    pub spearman: Option<f64>,
    pub spearman_undefined: usize,
}

/// Indices of the `n` highest scores; ties go to the lower index.
pub fn top_indices(values: &[f64], n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx.truncate(n);
    idx
}

pub fn agreement_of(a: &[f64], b: &[f64]) -> (f64, f64, Option<f64>) {
    let top1 = (top_indices(a, 1) == top_indices(b, 1)) as u8 as f64;
    let n = 3.min(a.len());
    let (ta, tb) = (top_indices(a, n), top_indices(b, n));
    let top3 = ta.iter().filter(|i| tb.contains(i)).count() as f64 / n as f64;
    (top1, top3, pearson(&average_ranks(a), &average_ranks(b)))
}

/// Compares two banks over the same instances and explanations, scored by
/// different attribution methods.
pub fn method_agreement(a: &[BankRecord], b: &[BankRecord], metric: Metric) -> Result<Agreement> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!("banks cover {} and {} instances", a.len(), b.len())));
    }
    let (mut top1, mut top3, mut sp, mut n_sp) = (0.0, 0.0, 0.0, 0usize);
    for (ra, rb) in a.iter().zip(b) {
        if ra.id != rb.id || ra.explanations != rb.explanations {
            return Err(Error::invalid(format!("instance mismatch at id {} vs {}", ra.id, rb.id)));
        }
        let (t1, t3, s) = agreement_of(&ra.alignment.values(metric), &rb.alignment.values(metric));
        top1 += t1;
        top3 += t3;
        if let Some(s) = s {
            sp += s;
            n_sp += 1;
        }
    }
    let n = a.len().max(1) as f64;
    Ok(Agreement {
        metric,
        records: a.len(),
        top1: q9(top1 / n),
        top3: q9(top3 / n),
        spearman: (n_sp > 0).then(|| q9(sp / n_sp as f64)),
        spearman_undefined: a.len() - n_sp,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossCell {
    /// Data the tuned model was trained on.
    pub source: String,
    /// Data evaluated.
    pub target: String,
    pub mode: EvalMode,
    pub cc_cos_mean: f64,
    pub cc_sp_mean: f64,
    /// Percent change of the mean against the B-B cell of the same target.
    pub cc_cos_delta_pct: Option<f64>,
    pub cc_sp_delta_pct: Option<f64>,
}

/// Table of reports keyed by `(source, target)`, with deltas against the
/// B-B report of each target. Every target needs a B-B report.
pub fn cross_matrix(reports: &[(String, String, EvalReport)]) -> Result<Vec<CrossCell>> {
    let methods: Vec<_> = reports.iter().map(|(.., r)| (&r.config.attribution, r.config.k)).collect();
    if methods.windows(2).any(|w| w[0] != w[1]) {
        return Err(Error::invalid("cross matrix reports use different attribution settings"));
    }
    reports
        .iter()
        .map(|(source, target, r)| {
            let bb = reports
                .iter()
                .find(|(_, t, b)| t == target && b.mode == EvalMode::BB)
                .ok_or_else(|| Error::invalid(format!("no B-B report for `{target}`")))?;
            let delta = |m: Metric| relative_delta_pct(bb.2.metric(m).mean.mean, r.metric(m).mean.mean).map(q9);
            Ok(CrossCell {
                source: source.clone(),
                target: target.clone(),
                mode: r.mode,
                cc_cos_mean: r.cc_cos.mean.mean,
                cc_sp_mean: r.cc_sp.mean.mean,
                cc_cos_delta_pct: delta(Metric::CcCos),
                cc_sp_delta_pct: delta(Metric::CcSp),
            })
        })
        .collect()
}
