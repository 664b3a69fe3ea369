//! Evaluation: decider/explainer modes on fresh generations, per-class and
//! per-rank breakdowns, cross-method agreement and cross-domain tables.

pub mod analysis;
pub mod render;

use serde::{Deserialize, Serialize};

use crate::alignment::Metric;
use crate::bank::{Bank, BankConfig, BankRecord, PromptContext, RecordError};
use crate::error::{Error, Result};
use crate::numfmt::q9;
use crate::oracle::Oracle;
use crate::stats::WorstMeanBest;
use crate::task::McqTask;

pub use analysis::{correctness_split, cross_matrix, method_agreement, rank_separation, Agreement, ClassSplit, CrossCell, RankSeparation};
pub use render::{render_cross, render_reports};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EvalMode {
    #[serde(rename = "BB")]
    BB,
    #[serde(rename = "BT")]
    BT,
    #[serde(rename = "TT")]
    TT,
}

impl EvalMode {
    pub const ALL: [EvalMode; 3] = [EvalMode::BB, EvalMode::BT, EvalMode::TT];

    pub fn label(self) -> &'static str {
        match self {
            EvalMode::BB => "B-B",
            EvalMode::BT => "B-T",
            EvalMode::TT => "T-T",
        }
    }

    pub fn parse(s: &str) -> Result<EvalMode> {
        match s.to_ascii_lowercase().replace('-', "").as_str() {
            "bb" => Ok(EvalMode::BB),
            "bt" => Ok(EvalMode::BT),
            "tt" => Ok(EvalMode::TT),
            _ => Err(Error::config("mode", format!("unknown mode `{s}` (bb, bt, tt)"))),
        }
    }

    /// `(decider, explainer)` for this mode.
    pub fn oracles<'a>(self, base: &'a dyn Oracle, tuned: &'a dyn Oracle) -> (&'a dyn Oracle, &'a dyn Oracle) {
        match self {
            EvalMode::BB => (base, base),
            EvalMode::BT => (base, tuned),
            EvalMode::TT => (tuned, tuned),
        }
    }
}

/// One instance's outcome.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetailRow {
    pub id: u64,
    pub correct: Option<bool>,
    pub cc_cos: Vec<f64>,
    pub cc_sp: Vec<f64>,
    pub degenerate_cos: usize,
    pub degenerate_sp: usize,
}

impl DetailRow {
    pub fn of(r: &BankRecord) -> Self {
        let deg = |m| r.alignment.get(m).iter().filter(|s| s.degenerate).count();
        DetailRow {
            id: r.id,
            correct: r.decision.correct,
            cc_cos: r.alignment.values(Metric::CcCos),
            cc_sp: r.alignment.values(Metric::CcSp),
            degenerate_cos: deg(Metric::CcCos),
            degenerate_sp: deg(Metric::CcSp),
        }
    }

    pub fn values(&self, m: Metric) -> &[f64] {
        match m {
            Metric::CcCos => &self.cc_cos,
            Metric::CcSp => &self.cc_sp,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: EvalMode,
    pub decider: String,
    pub explainer: String,
    pub instances: usize,
    pub errors: usize,
    pub parse_failures: usize,
    pub accuracy: Option<f64>,
    pub cc_cos: WorstMeanBest,
    pub cc_sp: WorstMeanBest,
    pub degenerate_rate_cos: f64,
    pub degenerate_rate_sp: f64,
    pub rows: Vec<DetailRow>,
    pub config: BankConfig,
}

impl EvalReport {
    pub fn from_records(mode: EvalMode, decider: String, explainer: String, records: &[BankRecord], errors: usize, config: BankConfig) -> Self {
        let rows: Vec<DetailRow> = records.iter().map(DetailRow::of).collect();
        let parsed: Vec<bool> = rows.iter().filter_map(|r| r.correct).collect();
        let accuracy = (!parsed.is_empty()).then(|| q9(parsed.iter().filter(|&&c| c).count() as f64 / parsed.len() as f64));
        let scored: usize = rows.iter().map(|r| r.cc_sp.len()).sum();
        let rate = |d: usize| if scored == 0 { 0.0 } else { q9(d as f64 / scored as f64) };
        let wmb = |m| WorstMeanBest::of(&rows.iter().map(|r| r.values(m).to_vec()).collect::<Vec<_>>());
        EvalReport {
            mode,
            decider,
            explainer,
            instances: rows.len(),
            errors,
            parse_failures: rows.len() - parsed.len(),
            accuracy,
            cc_cos: wmb(Metric::CcCos),
            cc_sp: wmb(Metric::CcSp),
            degenerate_rate_cos: rate(rows.iter().map(|r| r.degenerate_cos).sum()),
            degenerate_rate_sp: rate(rows.iter().map(|r| r.degenerate_sp).sum()),
            rows,
            config,
        }
    }

    pub fn metric(&self, m: Metric) -> &WorstMeanBest {
        match m {
            Metric::CcCos => &self.cc_cos,
            Metric::CcSp => &self.cc_sp,
        }
    }
}

/// Regenerates decisions, explanations and attributions for `tasks` under
/// the mode's decider and explainer.
pub fn run_mode(
    mode: EvalMode,
    base: &dyn Oracle,
    tuned: &dyn Oracle,
    ctx: &PromptContext,
    tasks: &[&McqTask],
    config: &BankConfig,
) -> Result<(EvalReport, Bank, Vec<RecordError>)> {
    let (decider, explainer) = mode.oracles(base, tuned);
    let (bank, errors) = Bank::build(decider, explainer, ctx, tasks, config)?;
    let report = EvalReport::from_records(mode, decider.id(), explainer.id(), &bank.records, errors.len(), config.clone());
    Ok((report, bank, errors))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_parsing() {
        assert_eq!(EvalMode::parse("tt").unwrap(), EvalMode::TT);
        assert_eq!(EvalMode::parse("B-T").unwrap(), EvalMode::BT);
        assert!(EvalMode::parse("xx").is_err());
        assert_eq!(serde_json::to_string(&EvalMode::BB).unwrap(), "\"BB\"");
    }
}
