//! Summary statistics shared by bank summaries and evaluation reports.

use serde::{Deserialize, Serialize};

use crate::numfmt::q9;

/// Sample mean with its standard error `s/√n` (zero when `n < 2`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(xs: &[f64]) -> Stat {
        let n = xs.len();
        if n == 0 {
            return Stat { mean: 0.0, se: 0.0, n };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let se = if n < 2 {
            0.0
        } else {
            let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        };
        Stat { mean, se, n }
    }

    pub fn quantized(self) -> Stat {
        Stat {
            mean: q9(self.mean),
            se: q9(self.se),
            n: self.n,
        }
    }
}

/// Per-record worst, mean and best over the sampled explanations, each
/// averaged across records.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorstMeanBest {
    pub worst: Stat,
    pub mean: Stat,
    pub best: Stat,
}

impl WorstMeanBest {
    /// Rows with no scores are ignored.
    pub fn of<R: AsRef<[f64]>>(rows: &[R]) -> WorstMeanBest {
        let (mut w, mut m, mut b) = (Vec::new(), Vec::new(), Vec::new());
        for row in rows {
            let row = row.as_ref();
            if row.is_empty() {
                continue;
            }
            let (lo, hi) = min_max(row);
            let avg = (row.iter().sum::<f64>() / row.len() as f64).clamp(lo, hi);
            w.push(lo);
            m.push(avg);
            b.push(hi);
        }
        WorstMeanBest {
            worst: Stat::of(&w).quantized(),
            mean: Stat::of(&m).quantized(),
            best: Stat::of(&b).quantized(),
        }
    }
}

pub fn min_max(xs: &[f64]) -> (f64, f64) {
    xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

/// Relative change of `new` against `base`, in percent.
pub fn relative_delta_pct(base: f64, new: f64) -> Option<f64> {
    if base == 0.0 {
        return None;
    }
    Some((new - base) / base.abs() * 100.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn mean_and_se() {
        let s = Stat::of(&[1.0, 2.0, 3.0]);
        assert_eq!(s.mean, 2.0);
        assert!((s.se - (1.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(Stat::of(&[4.0]).se, 0.0);
    }

    #[test]
    fn single_explanation_collapses() {
        let r = WorstMeanBest::of(&[vec![0.3], vec![0.5]]);
        assert_eq!(r.worst, r.mean);
        assert_eq!(r.mean, r.best);
    }

    #[test]
    fn delta_convention() {
        assert!((relative_delta_pct(10.0, 11.3).unwrap() - 13.0).abs() < 1e-9);
        assert!((relative_delta_pct(-0.2, -0.1).unwrap() - 50.0).abs() < 1e-9);
        assert_eq!(relative_delta_pct(0.0, 1.0), None);
    }

    proptest! {
        #[test]
        fn ordered(rows in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 1..6), 1..20)) {
            let r = WorstMeanBest::of(&rows);
            prop_assert!(r.worst.mean <= r.mean.mean && r.mean.mean <= r.best.mean);
        }
    }
}
