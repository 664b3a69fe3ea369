//! Agreement between a decision's attribution vector and an explanation's.

use serde::{Deserialize, Serialize};

use crate::attribution::AttributionVector;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    CcCos,
    CcSp,
}

impl Metric {
    pub const ALL: [Metric; 2] = [Metric::CcCos, Metric::CcSp];

    pub fn name(self) -> &'static str {
        match self {
            Metric::CcCos => "cc_cos",
            Metric::CcSp => "cc_sp",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Metric::CcCos => "CC-Cos",
            Metric::CcSp => "CC-Sp",
        }
    }

    pub fn parse(s: &str) -> Result<Metric> {
        match s {
            "cos" | "cc_cos" => Ok(Metric::CcCos),
            "sp" | "cc_sp" => Ok(Metric::CcSp),
            _ => Err(Error::config("metric", format!("unknown metric `{s}` (cos, sp)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentScore {
    pub metric: Metric,
    pub value: f64,
    pub effective_m: usize,
    pub degenerate: bool,
}

impl AlignmentScore {
    fn degenerate(metric: Metric, effective_m: usize) -> Self {
        AlignmentScore {
            metric,
            value: 0.0,
            effective_m,
            degenerate: true,
        }
    }
}

/// Scores at the positions unmasked in both vectors, which must share
/// length and mask.
fn joint(dec: &AttributionVector, exp: &AttributionVector) -> Result<(Vec<f64>, Vec<f64>)> {
    if dec.len() != exp.len() {
        return Err(Error::invalid(format!(
            "attribution lengths differ: {} vs {}",
            dec.len(),
            exp.len()
        )));
    }
    if dec.skip_mask != exp.skip_mask {
        return Err(Error::invalid("attribution skip masks differ"));
    }
    let keep = |v: &AttributionVector| -> Vec<f64> {
        v.scores
            .iter()
            .zip(&v.skip_mask)
            .filter(|(_, &m)| !m)
            .map(|(&s, _)| s)
            .collect()
    };
    Ok((keep(dec), keep(exp)))
}

pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>();
    let nb = b.iter().map(|x| x * x).sum::<f64>();
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some((dot / (na * nb).sqrt()).clamp(-1.0, 1.0))
}

/// Pearson correlation; `None` when either input has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    if a.is_empty() {
        return None;
    }
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// 1-based ranks in ascending order; tied values share the mean of the
/// ranks they occupy.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman's textbook formula `1 − 6Σd²/(m(m²−1))`, valid only without ties.
pub fn spearman_no_ties(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let m = a.len() as f64;
    let d2: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - y) * (x - y)).sum();
    1.0 - 6.0 * d2 / (m * (m * m - 1.0))
}

pub fn cc_cos(dec: &AttributionVector, exp: &AttributionVector) -> Result<AlignmentScore> {
    let (a, b) = joint(dec, exp)?;
    let m = a.len();
    Ok(match cosine(&a, &b) {
        Some(value) => AlignmentScore {
            metric: Metric::CcCos,
            value,
            effective_m: m,
            degenerate: false,
        },
        None => AlignmentScore::degenerate(Metric::CcCos, m),
    })
}

/// Spearman correlation with average ranks for ties, computed as the
/// Pearson correlation of the rank vectors.
pub fn cc_sp(dec: &AttributionVector, exp: &AttributionVector) -> Result<AlignmentScore> {
    let (a, b) = joint(dec, exp)?;
    let m = a.len();
    if m < 2 {
        return Err(Error::invalid(format!("rank correlation needs at least 2 unmasked positions, got {m}")));
    }
    Ok(match pearson(&average_ranks(&a), &average_ranks(&b)) {
        Some(value) => AlignmentScore {
            metric: Metric::CcSp,
            value,
            effective_m: m,
            degenerate: false,
        },
        None => AlignmentScore::degenerate(Metric::CcSp, m),
    })
}

pub fn align(metric: Metric, dec: &AttributionVector, exp: &AttributionVector) -> Result<AlignmentScore> {
    match metric {
        Metric::CcCos => cc_cos(dec, exp),
        Metric::CcSp => cc_sp(dec, exp),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplanationRanking {
    pub scores: Vec<AlignmentScore>,
    pub best: usize,
    pub worst: usize,
    pub degenerate: usize,
}

/// Indices of the highest and lowest value; ties go to the lowest index.
pub fn best_worst(values: &[f64]) -> (usize, usize) {
    let (mut best, mut worst) = (0, 0);
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
        if v < values[worst] {
            worst = i;
        }
    }
    (best, worst)
}

pub fn score_explanations(dec: &AttributionVector, exps: &[AttributionVector], metric: Metric) -> Result<ExplanationRanking> {
    if exps.is_empty() {
        return Err(Error::invalid("no explanations to score"));
    }
    let scores = exps.iter().map(|e| align(metric, dec, e)).collect::<Result<Vec<_>>>()?;
    let values: Vec<f64> = scores.iter().map(|s| s.value).collect();
    let (best, worst) = best_worst(&values);
    let degenerate = scores.iter().filter(|s| s.degenerate).count();
    Ok(ExplanationRanking {
        scores,
        best,
        worst,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attribution::Method;
    use proptest::prelude::*;

    fn av(s: &[f64]) -> AttributionVector {
        AttributionVector::new(s.to_vec(), Method::Lime, 0.0, vec![false; s.len()]).unwrap()
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cc_cos(&av(&[1.0, 0.0]), &av(&[0.0, 1.0])).unwrap().value, 0.0);
        assert!((cc_cos(&av(&[2.0, 4.0]), &av(&[1.0, 2.0])).unwrap().value - 1.0).abs() < 1e-15);
        assert!((cc_cos(&av(&[1.0, 2.0]), &av(&[2.0, 1.0])).unwrap().value - 0.8).abs() < 1e-15);
        let z = cc_cos(&av(&[0.0, 0.0]), &av(&[1.0, 2.0])).unwrap();
        assert!(z.degenerate && z.value == 0.0);
    }

    #[test]
    fn spearman_examples() {
        let x = av(&[1.0, 2.0, 3.0]);
        assert_eq!(cc_sp(&x, &x).unwrap().value, 1.0);
        assert!((cc_sp(&x, &av(&[3.0, 2.0, 1.0])).unwrap().value + 1.0).abs() < 1e-15);
        assert!((cc_sp(&x, &av(&[1.0, 3.0, 2.0])).unwrap().value - 0.5).abs() < 1e-15);
        let c = cc_sp(&x, &av(&[4.0, 4.0, 4.0])).unwrap();
        assert!(c.degenerate && c.value == 0.0);
        assert!(cc_sp(&av(&[1.0]), &av(&[2.0])).is_err());
    }

    #[test]
    fn masks_restrict_and_must_match() {
        let mask = vec![false, true, false];
        let a = AttributionVector::new(vec![1.0, 0.0, 2.0], Method::Lime, 0.0, mask.clone()).unwrap();
        let b = AttributionVector::new(vec![2.0, 0.0, 1.0], Method::Lime, 0.0, mask).unwrap();
        let s = cc_cos(&a, &b).unwrap();
        assert_eq!(s.effective_m, 2);
        assert!((s.value - 0.8).abs() < 1e-15);
        assert!(cc_cos(&a, &av(&[1.0, 2.0, 3.0])).is_err());
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 10.0, 5.0]), vec![2.5, 4.0, 2.5, 1.0]);
    }

    #[test]
    fn ranking_ties_and_degenerates() {
        let dec = av(&[1.0, 2.0, 3.0]);
        let one = score_explanations(&dec, &[av(&[1.0, 2.0, 3.0])], Metric::CcSp).unwrap();
        assert_eq!((one.best, one.worst), (0, 0));
        assert_eq!(best_worst(&[0.2, 0.5, 0.5]), (1, 0));
        let flat = [av(&[1.0, 1.0, 1.0]), av(&[2.0, 2.0, 2.0])];
        let r = score_explanations(&dec, &flat, Metric::CcSp).unwrap();
        assert_eq!((r.best, r.worst, r.degenerate), (0, 0, 2));
    }

    proptest! {
        #[test]
        fn cosine_scaling_and_sign(a in prop::collection::vec(-5.0f64..5.0, 3..12), c in 0.01f64..100.0) {
            let b: Vec<f64> = a.iter().rev().copied().collect();
            let base = cc_cos(&av(&a), &av(&b)).unwrap();
            prop_assume!(!base.degenerate);
            let scaled: Vec<f64> = a.iter().map(|x| x * c).collect();
            prop_assert!((cc_cos(&av(&scaled), &av(&b)).unwrap().value - base.value).abs() < 1e-9);
            let neg: Vec<f64> = a.iter().map(|x| -x).collect();
            prop_assert!((cc_cos(&av(&neg), &av(&b)).unwrap().value + base.value).abs() < 1e-9);
            prop_assert!((cc_cos(&av(&b), &av(&a)).unwrap().value - base.value).abs() < 1e-15);
        }

        #[test]
        fn spearman_monotone_invariance(a in prop::collection::vec(-5.0f64..5.0, 2..12), b in prop::collection::vec(-5.0f64..5.0, 12)) {
            let b = &b[..a.len()];
            let s = cc_sp(&av(&a), &av(b)).unwrap();
            let t: Vec<f64> = a.iter().map(|x| x.exp() * 3.0 + 1.0).collect();
            prop_assert!((cc_sp(&av(&t), &av(b)).unwrap().value - s.value).abs() < 1e-12);
            prop_assert!((cc_sp(&av(b), &av(&a)).unwrap().value - s.value).abs() < 1e-15);
        }

        #[test]
        fn best_worst_ignores_trailing_degenerate(v in prop::collection::vec(0.01f64..1.0, 1..8)) {
            let (b, w) = best_worst(&v);
            let mut ext = v.clone();
            ext.push(0.0);
            let (b2, w2) = best_worst(&ext);
            prop_assert_eq!(b, b2);
            prop_assert_eq!(w2, v.len());
            prop_assert!(v[w] >= 0.0);
        }
    }
}
