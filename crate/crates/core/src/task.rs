//! Multiple-choice tasks, the prompt templates that render them, corpus
//! splits, and the corpus file format.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tokens::TokenId;

/// One multiple-choice instance, already tokenized.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McqTask {
    pub id: u64,
    pub domain: String,
    pub question: Vec<TokenId>,
    pub options: Vec<Vec<TokenId>>,
    /// Index of the correct option.
    pub gold: usize,
    /// Question positions whose tokens determine the answer. Empty when
    /// unknown (external datasets).
    #[serde(default)]
    pub key_positions: Vec<usize>,
}

impl McqTask {
    pub fn validate(&self, template: &Template) -> Result<()> {
        if self.question.is_empty() {
            return Err(Error::invalid(format!("task {}: empty question", self.id)));
        }
        if self.options.len() < 2 || self.options.len() > template.letters.len() {
            return Err(Error::invalid(format!(
                "task {}: {} options, template supports 2..={}",
                self.id,
                self.options.len(),
                template.letters.len()
            )));
        }
        if self.options.iter().any(Vec::is_empty) {
            return Err(Error::invalid(format!("task {}: empty option", self.id)));
        }
        if self.gold >= self.options.len() {
            return Err(Error::invalid(format!("task {}: gold index out of range", self.id)));
        }
        if self.key_positions.iter().any(|&k| k >= self.question.len()) {
            return Err(Error::invalid(format!("task {}: key position out of range", self.id)));
        }
        Ok(())
    }
}

/// Token ids of the fixed template pieces.
///
/// Decision prompt: `bos question_marker q… choose_marker L₁ o₁ … Lₙ oₙ answer_marker`.
/// Explanation prompt: `x y_dec eos why_marker`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Template {
    pub pad: TokenId,
    pub bos: TokenId,
    pub eos: TokenId,
    pub question: TokenId,
    pub choose: TokenId,
    pub answer: TokenId,
    pub why: TokenId,
    pub letters: Vec<TokenId>,
}

impl Template {
    pub fn decision_prompt(&self, task: &McqTask) -> Vec<TokenId> {
        let mut x = vec![self.bos, self.question];
        x.extend_from_slice(&task.question);
        x.push(self.choose);
        for (letter, opt) in self.letters.iter().zip(&task.options) {
            x.push(*letter);
            x.extend_from_slice(opt);
        }
        x.push(self.answer);
        x
    }

    /// Positions in the decision prompt holding the task's key tokens.
    pub fn key_prompt_positions(&self, task: &McqTask) -> Vec<usize> {
        task.key_positions.iter().map(|&k| k + 2).collect()
    }

    pub fn explanation_suffix(&self, y_dec: &[TokenId]) -> Vec<TokenId> {
        let mut s = y_dec.to_vec();
        s.push(self.eos);
        s.push(self.why);
        s
    }

    /// The option a decision names: the first token that is one of the
    /// first `n_options` letters.
    pub fn parse_letter(&self, y_dec: &[TokenId], n_options: usize) -> Option<usize> {
        let letters = &self.letters[..n_options.min(self.letters.len())];
        y_dec.iter().find_map(|t| letters.iter().position(|l| l == t))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Split> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::invalid(format!("unknown split `{s}`"))),
        }
    }
}

pub const DEFAULT_RATIOS: [f64; 3] = [0.7, 0.2, 0.1];

pub fn validate_ratios(ratios: &[f64; 3]) -> Result<()> {
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) {
        return Err(Error::config("split", "ratios must be non-negative"));
    }
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::config("split", format!("ratios sum to {sum}, expected 1")));
    }
    Ok(())
}

/// Split sizes by largest remainder: every split gets `floor(n·r)`, then
/// the leftover items go to the largest fractional parts, earlier splits
/// winning ties.
pub fn split_sizes(n: usize, ratios: &[f64; 3]) -> Result<[usize; 3]> {
    validate_ratios(ratios)?;
    let exact: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    // the guard keeps 0.7·100 = 70.00000000000001 and 69.99999999999999 on the same side
    let mut sizes: Vec<usize> = exact.iter().map(|e| (e + 1e-9).floor() as usize).collect();
    let assigned: usize = sizes.iter().sum();
    let mut order: Vec<usize> = (0..3).collect();
    let frac = |i: usize| {
        let f = exact[i] - sizes[i] as f64;
        if f < 1e-9 {
            0.0
        } else {
            f
        }
    };
    let fracs: Vec<f64> = (0..3).map(frac).collect();
    order.sort_by(|&a, &b| fracs[b].partial_cmp(&fracs[a]).unwrap_or(std::cmp::Ordering::Equal));
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        sizes[i] += 1;
    }
    Ok([sizes[0], sizes[1], sizes[2]])
}

/// Assigns each of `n` items to a split: a seeded shuffle, then contiguous
/// blocks of the largest-remainder sizes.
pub fn assign_splits(n: usize, ratios: &[f64; 3], seed: u64) -> Result<Vec<Split>> {
    let sizes = split_sizes(n, ratios)?;
    let mut order: Vec<usize> = (0..n).collect();
    Rng::named(seed, "split").shuffle(&mut order);
    let mut out = vec![Split::Train; n];
    let mut cursor = 0;
    for (split, size) in Split::ALL.iter().zip(sizes) {
        for &i in &order[cursor..cursor + size] {
            out[i] = *split;
        }
        cursor += size;
    }
    Ok(out)
}

pub const CORPUS_FORMAT: &str = "attrcons-corpus";
pub const CORPUS_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusHeader {
    pub format: String,
    pub version: u32,
    pub ratios: [f64; 3],
    pub split_seed: u64,
    pub template: Template,
    /// Free-form generation parameters, recorded for provenance.
    #[serde(default)]
    pub meta: BTreeMap<String, Value>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct CorpusLine {
    split: Split,
    #[serde(flatten)]
    task: McqTask,
}

/// Tasks with their fixed split assignment.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub header: CorpusHeader,
    pub tasks: Vec<McqTask>,
    pub splits: Vec<Split>,
}

impl Corpus {
    pub fn new(tasks: Vec<McqTask>, template: Template, ratios: [f64; 3], split_seed: u64) -> Result<Self> {
        for t in &tasks {
            t.validate(&template)?;
        }
        let splits = assign_splits(tasks.len(), &ratios, split_seed)?;
        Ok(Corpus {
            header: CorpusHeader {
                format: CORPUS_FORMAT.into(),
                version: CORPUS_VERSION,
                ratios,
                split_seed,
                template,
                meta: BTreeMap::new(),
            },
            tasks,
            splits,
        })
    }

    pub fn template(&self) -> &Template {
        &self.header.template
    }

    pub fn split(&self, split: Split) -> Vec<&McqTask> {
        self.tasks
            .iter()
            .zip(&self.splits)
            .filter(|(_, s)| **s == split)
            .map(|(t, _)| t)
            .collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "{}", serde_json::to_string(&self.header)?)?;
        for (task, split) in self.tasks.iter().zip(&self.splits) {
            let line = CorpusLine {
                split: *split,
                task: task.clone(),
            };
            writeln!(f, "{}", serde_json::to_string(&line)?)?;
        }
        f.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let f = BufReader::new(std::fs::File::open(path)?);
        let mut lines = f.lines();
        let header_line = lines
            .next()
            .ok_or_else(|| Error::Format(format!("{}: empty corpus file", path.display())))??;
        let header: CorpusHeader = serde_json::from_str(&header_line)
            .map_err(|e| Error::Format(format!("{}: bad corpus header: {e}", path.display())))?;
        if header.format != CORPUS_FORMAT || header.version != CORPUS_VERSION {
            return Err(Error::Format(format!(
                "{}: expected {CORPUS_FORMAT} v{CORPUS_VERSION}, found {} v{}",
                path.display(),
                header.format,
                header.version
            )));
        }
        let mut tasks = Vec::new();
        let mut splits = Vec::new();
        for (n, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: CorpusLine = serde_json::from_str(&line)
                .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), n + 2)))?;
            rec.task.validate(&header.template)?;
            tasks.push(rec.task);
            splits.push(rec.split);
        }
        Ok(Corpus {
            header,
            tasks,
            splits,
        })
    }
}

/// Reads a pre-tokenized external dataset: one JSON object per line with
/// `question` (ids), `options` (list of id lists) and `gold` (index or
/// letter such as `"B"`). Splits are assigned with the given seed.
pub fn read_external(path: &Path, domain: &str, template: Template, ratios: [f64; 3], split_seed: u64) -> Result<Corpus> {
    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    struct External {
        question: Vec<TokenId>,
        options: Vec<Vec<TokenId>>,
        gold: Value,
    }
    let f = BufReader::new(std::fs::File::open(path)?);
    let mut tasks = Vec::new();
    for (n, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let where_ = || format!("{}:{}", path.display(), n + 1);
        let rec: External = serde_json::from_str(&line).map_err(|e| Error::Format(format!("{}: {e}", where_())))?;
        let gold = match &rec.gold {
            Value::Number(x) => x
                .as_u64()
                .map(|g| g as usize)
                .ok_or_else(|| Error::Format(format!("{}: gold must be a non-negative index", where_())))?,
            Value::String(s) => {
                let mut chars = s.trim().chars();
                match (chars.next(), chars.next()) {
                    (Some(c), None) if c.is_ascii_alphabetic() => (c.to_ascii_uppercase() as u8 - b'A') as usize,
                    _ => return Err(Error::Format(format!("{}: gold letter `{s}` not understood", where_()))),
                }
            }
            _ => return Err(Error::Format(format!("{}: gold must be an index or a letter", where_()))),
        };
        tasks.push(McqTask {
            id: tasks.len() as u64,
            domain: domain.to_string(),
            question: rec.question,
            options: rec.options,
            gold,
            key_positions: Vec::new(),
        });
    }
    Corpus::new(tasks, template, ratios, split_seed)
}
