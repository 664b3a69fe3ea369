//! Chosen/rejected explanation pairs from ranked bank records.

use serde::{Deserialize, Serialize};

use super::{BankRecord, PromptContext};
use crate::alignment::{best_worst, Metric};
use crate::numfmt::q9;
use crate::tokens::TokenId;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub id: u64,
    pub metric: Metric,
    /// Explanation prompt: input, decision, end marker, explanation marker.
    pub context: Vec<TokenId>,
    pub chosen: Vec<TokenId>,
    pub chosen_index: usize,
    pub chosen_score: f64,
    pub rejected: Vec<TokenId>,
    pub rejected_index: usize,
    pub rejected_score: f64,
    pub margin: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PairExtraction {
    pub pairs: Vec<PreferencePair>,
    /// Records with fewer than two non-degenerate scores.
    pub skipped_degenerate: usize,
    /// Records whose best and worst scores tie.
    pub skipped_tied: usize,
}

impl PairExtraction {
    pub fn skipped(&self) -> usize {
        self.skipped_degenerate + self.skipped_tied
    }
}

/// Picks best and worst among a record's non-degenerate scores. Returns
/// `(chosen, rejected)` indices into the full list. The error is `true`
/// when fewer than two scores qualify and `false` when the margin is zero.
pub fn select_pair(values: &[f64], degenerate: &[bool]) -> Result<(usize, usize), bool> {
    let idx: Vec<usize> = (0..values.len()).filter(|&i| !degenerate[i]).collect();
    if idx.len() < 2 {
        return Err(true);
    }
    let vals: Vec<f64> = idx.iter().map(|&i| values[i]).collect();
    let (b, w) = best_worst(&vals);
    if vals[b] == vals[w] {
        return Err(false);
    }
    Ok((idx[b], idx[w]))
}

pub fn extract_pairs(records: &[BankRecord], metric: Metric, ctx: &PromptContext) -> PairExtraction {
    let mut out = PairExtraction::default();
    for r in records {
        let scores = r.alignment.get(metric);
        let values: Vec<f64> = scores.iter().map(|s| s.value).collect();
        let degenerate: Vec<bool> = scores.iter().map(|s| s.degenerate).collect();
        match select_pair(&values, &degenerate) {
            Err(true) => out.skipped_degenerate += 1,
            Err(false) => out.skipped_tied += 1,
            Ok((c, j)) => out.pairs.push(PreferencePair {
                id: r.id,
                metric,
                context: ctx.explanation_prompt(r.x.tokens(), &r.decision.y_dec),
                chosen: r.explanations[c].clone(),
                chosen_index: c,
                chosen_score: values[c],
                rejected: r.explanations[j].clone(),
                rejected_index: j,
                rejected_score: values[j],
                margin: q9(values[c] - values[j]),
            }),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arg_extrema() {
        let v = [0.1, 0.9, 0.4, 0.4, 0.2];
        assert_eq!(select_pair(&v, &[false; 5]), Ok((1, 0)));
        assert_eq!(select_pair(&[0.3, 0.7], &[false; 2]), Ok((1, 0)));
        assert_eq!(select_pair(&[0.5; 5], &[false; 5]), Err(false));
        assert_eq!(select_pair(&[0.0, 0.7, 0.2], &[true, false, true]), Err(true));
        // a degenerate zero never becomes the rejected explanation
        assert_eq!(select_pair(&[0.0, 0.7, 0.2], &[true, false, false]), Ok((1, 2)));
    }
}
