//! The toy vocabulary and the synthetic multiple-choice task family.
//!
//! A question is a handful of filler words plus one key token. Each profile
//! owns a block of keys and a block of answers with a fixed key → answer
//! map; the options are the key's answer plus distinct distractor answers
//! from the profile's pool, shuffled. The gold letter therefore depends on
//! the key and the option order, never on the filler words.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::task::{McqTask, Template};
use crate::tokens::{TokenId, Vocab};

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const QUESTION: TokenId = 3;
pub const CHOOSE: TokenId = 4;
pub const ANSWER: TokenId = 5;
pub const WHY: TokenId = 6;
pub const LETTER_BASE: TokenId = 7;
pub const N_LETTERS: usize = 5;
pub const KEY_BASE: TokenId = 12;
pub const N_KEYS: usize = 16;
pub const ANSWER_BASE: TokenId = 28;
pub const N_ANSWERS: usize = 24;
pub const WORD_BASE: TokenId = 52;
pub const N_WORDS: usize = 76;
pub const VOCAB_SIZE: usize = 128;

/// Template tokens that carry no task content.
pub const SKIP_LITERALS: [&str; 4] = ["<bos>", "Question:", "Choose:", "Answer:"];

pub fn vocab() -> Vocab {
    let mut pieces: Vec<String> = ["<pad>", "<bos>", "<eos>", "Question:", "Choose:", "Answer:", "Why:"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    pieces.extend(["A", "B", "C", "D", "E"].iter().map(|s| s.to_string()));
    pieces.extend((0..N_KEYS).map(|i| format!("k{i:02}")));
    pieces.extend((0..N_ANSWERS).map(|i| format!("a{i:02}")));
    pieces.extend((0..N_WORDS).map(|i| format!("w{i:02}")));
    debug_assert_eq!(pieces.len(), VOCAB_SIZE);
    Vocab::new(pieces)
}

pub fn template() -> Template {
    Template {
        pad: PAD,
        bos: BOS,
        eos: EOS,
        question: QUESTION,
        choose: CHOOSE,
        answer: ANSWER,
        why: WHY,
        letters: (0..N_LETTERS as TokenId).map(|i| LETTER_BASE + i).collect(),
    }
}

/// A task family: which keys and answers it draws on and how long its
/// questions are.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskProfile {
    pub name: String,
    /// First key token index (relative to the key block) and key count.
    pub key_start: usize,
    pub n_keys: usize,
    /// First answer index (relative to the answer block). Key `i` maps to
    /// answer `answer_start + i`; the pool continues past the mapped block.
    pub answer_start: usize,
    pub answer_pool: usize,
    pub question_len: usize,
    pub n_options: usize,
}

impl TaskProfile {
    pub fn alpha() -> Self {
        TaskProfile {
            name: "alpha".into(),
            key_start: 0,
            n_keys: 8,
            answer_start: 0,
            answer_pool: 12,
            question_len: 6,
            n_options: 4,
        }
    }

    pub fn beta() -> Self {
        TaskProfile {
            name: "beta".into(),
            key_start: 8,
            n_keys: 8,
            answer_start: 12,
            answer_pool: 12,
            question_len: 6,
            n_options: 4,
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "alpha" => Ok(Self::alpha()),
            "beta" => Ok(Self::beta()),
            _ => Err(Error::config("profile", format!("unknown task profile `{name}` (alpha, beta)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_keys == 0 || self.key_start + self.n_keys > N_KEYS {
            return Err(Error::config("task.keys", "key block outside the toy vocabulary"));
        }
        if self.answer_pool < self.n_keys || self.answer_start + self.answer_pool > N_ANSWERS {
            return Err(Error::config("task.answers", "answer pool must cover every key and fit the vocabulary"));
        }
        if self.n_options < 2 || self.n_options > N_LETTERS || self.n_options > self.answer_pool {
            return Err(Error::config("task.n_options", "between 2 and the letter count"));
        }
        if self.question_len < 1 {
            return Err(Error::config("task.question_len", "must be positive"));
        }
        Ok(())
    }

    pub fn keys(&self) -> impl Iterator<Item = TokenId> + '_ {
        (self.key_start..self.key_start + self.n_keys).map(|i| KEY_BASE + i as TokenId)
    }

    /// The answer token a key maps to, if the key belongs to this profile.
    pub fn answer_for(&self, key: TokenId) -> Option<TokenId> {
        let i = key.checked_sub(KEY_BASE)? as usize;
        if i < self.key_start || i >= self.key_start + self.n_keys {
            return None;
        }
        Some(ANSWER_BASE + (self.answer_start + i - self.key_start) as TokenId)
    }
}

pub fn is_key(t: TokenId) -> bool {
    (KEY_BASE..KEY_BASE + N_KEYS as TokenId).contains(&t)
}

pub fn is_answer(t: TokenId) -> bool {
    (ANSWER_BASE..ANSWER_BASE + N_ANSWERS as TokenId).contains(&t)
}

pub fn is_word(t: TokenId) -> bool {
    (WORD_BASE..WORD_BASE + N_WORDS as TokenId).contains(&t)
}

fn generate_one(rng: &mut Rng, id: u64, profile: &TaskProfile) -> McqTask {
    let key = KEY_BASE + (profile.key_start + rng.below(profile.n_keys)) as TokenId;
    let answer = profile.answer_for(key).expect("key from profile");
    let key_pos = rng.below(profile.question_len);
    let question: Vec<TokenId> = (0..profile.question_len)
        .map(|i| {
            if i == key_pos {
                key
            } else {
                WORD_BASE + rng.below(N_WORDS) as TokenId
            }
        })
        .collect();
    let pool: Vec<TokenId> = (0..profile.answer_pool)
        .map(|i| ANSWER_BASE + (profile.answer_start + i) as TokenId)
        .filter(|&a| a != answer)
        .collect();
    let mut options: Vec<TokenId> = rng
        .subset(pool.len(), profile.n_options - 1)
        .into_iter()
        .map(|i| pool[i])
        .collect();
    options.push(answer);
    rng.shuffle(&mut options);
    let gold = options.iter().position(|&o| o == answer).expect("answer among options");
    McqTask {
        id,
        domain: profile.name.clone(),
        question,
        options: options.into_iter().map(|o| vec![o]).collect(),
        gold,
        key_positions: vec![key_pos],
    }
}

/// `n` tasks; task `i` depends only on `(rng seed/stream, i)`.
pub fn generate_task_corpus(rng: &Rng, n: usize, profile: &TaskProfile) -> Result<Vec<McqTask>> {
    profile.validate()?;
    Ok((0..n)
        .map(|i| generate_one(&mut rng.derive("task", i as u64), i as u64, profile))
        .collect())
}

/// Styles of synthetic training explanations: the probability that each
/// explanation token refers to the key (the key itself or its answer)
/// rather than echoing a filler word from the question.
pub const EXPLANATION_STYLES: [f64; 5] = [0.0, 0.0, 0.0, 0.25, 1.0];

/// A synthetic explanation for pretraining: 3–5 tokens, each key-related
/// with probability `rho`, otherwise a copy of a random filler word.
pub fn synthetic_explanation(task: &McqTask, profile: &TaskProfile, rho: f64, rng: &mut Rng) -> Vec<TokenId> {
    let key = task.key_positions.first().map(|&k| task.question[k]);
    let answer = key.and_then(|k| profile.answer_for(k));
    let fillers: Vec<TokenId> = task
        .question
        .iter()
        .enumerate()
        .filter(|(i, _)| !task.key_positions.contains(i))
        .map(|(_, &t)| t)
        .collect();
    let len = 3 + rng.below(3);
    (0..len)
        .map(|_| {
            let keyish = rng.uniform() < rho;
            match (keyish, key, answer) {
                (true, Some(k), Some(a)) => {
                    if rng.below(2) == 0 {
                        k
                    } else {
                        a
                    }
                }
                _ if !fillers.is_empty() => fillers[rng.below(fillers.len())],
                _ => key.unwrap_or(PAD),
            }
        })
        .collect()
}

/// A full pretraining sequence as `(prompt, continuation)`: the decision
/// prompt, then the gold decision, the explanation marker and a synthetic
/// explanation closed by `<eos>`.
pub fn pretraining_example(task: &McqTask, profile: &TaskProfile, rng: &mut Rng) -> (Vec<TokenId>, Vec<TokenId>) {
    let t = template();
    let prompt = t.decision_prompt(task);
    let rho = EXPLANATION_STYLES[rng.below(EXPLANATION_STYLES.len())];
    let mut cont = vec![t.letters[task.gold]];
    cont.extend_from_slice(&task.options[task.gold]);
    cont.push(EOS);
    cont.push(WHY);
    cont.extend(synthetic_explanation(task, profile, rho, rng));
    cont.push(EOS);
    (prompt, cont)
}
