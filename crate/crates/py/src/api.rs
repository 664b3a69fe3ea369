//! The operations exposed to Python, on plain Rust types.

use std::path::Path;
use std::sync::Arc;

use attrcons::alignment::{align, Metric};
use attrcons::attribution::{attribute, AttributionRequest, AttributionVector, Method, MethodParams};
use attrcons::bank::{Bank, ERRORS_FILE};
use attrcons::oracle::remote::RemoteOracle;
use attrcons::oracle::{Oracle, SampleParams};
use attrcons::rng::Rng;
use attrcons::tokens::{TokenId, TokenSequence};
use attrcons::toylm::{checkpoint, ToyOracle};
use attrcons::{Error, Result};

/// Opens an oracle from a spec: `toy:PATH`, `tuned:PATH` (adapter on) or
/// `remote:HOST:PORT`.
pub fn open_oracle(spec: &str) -> Result<Box<dyn Oracle>> {
    let (kind, rest) = spec
        .split_once(':')
        .ok_or_else(|| Error::invalid(format!("oracle spec `{spec}` needs a kind prefix")))?;
    match kind {
        "toy" | "tuned" => {
            let model = Arc::new(checkpoint::load(Path::new(rest))?.0);
            Ok(Box::new(if kind == "toy" {
                ToyOracle::base(model, spec)
            } else {
                ToyOracle::tuned(model, spec)
            }))
        }
        "remote" => Ok(Box::new(RemoteOracle::connect_tcp(rest)?)),
        _ => Err(Error::invalid(format!("unknown oracle kind `{kind}` (toy, tuned, remote)"))),
    }
}

pub fn sample(oracle: &dyn Oracle, prompt: &[TokenId], params: &SampleParams) -> Result<Vec<TokenId>> {
    params.validate()?;
    oracle.sample(prompt, params)
}

/// Attribution of `continuation` to each prompt position. `params` is the
/// JSON form of the method settings, e.g. `{"method": "lime", "n_samples": 200}`.
pub fn attribute_json(
    oracle: &dyn Oracle,
    prompt: Vec<TokenId>,
    skip_mask: Option<Vec<bool>>,
    suffix: Vec<TokenId>,
    continuation: Vec<TokenId>,
    params: &str,
    seed: u64,
) -> Result<AttributionVector> {
    let params: MethodParams = serde_json::from_str(params)?;
    params.validate()?;
    let pieces = prompt.iter().map(|t| t.to_string()).collect();
    let seq = match skip_mask {
        Some(m) => TokenSequence::with_mask(prompt, pieces, m)?,
        None => TokenSequence::new(prompt, pieces)?,
    };
    let req = AttributionRequest::new(seq, suffix, continuation);
    attribute(oracle, &req, &params, &mut Rng::named(seed, "attribution"))
}

/// Alignment of two score vectors over the unmasked positions; `None` when
/// the metric is undefined (a constant or zero vector).
pub fn alignment(metric: &str, dec: Vec<f64>, exp: Vec<f64>, skip_mask: Option<Vec<bool>>) -> Result<Option<f64>> {
    let metric = Metric::parse(metric)?;
    if dec.len() != exp.len() {
        return Err(Error::invalid(format!("vector lengths differ: {} vs {}", dec.len(), exp.len())));
    }
    let mask = skip_mask.unwrap_or_else(|| vec![false; dec.len()]);
    if mask.len() != dec.len() {
        return Err(Error::invalid(format!("mask length {} differs from vector length {}", mask.len(), dec.len())));
    }
    // masked entries are ignored whatever their value
    let clear = |v: Vec<f64>| -> Vec<f64> { v.into_iter().zip(&mask).map(|(x, &m)| if m { 0.0 } else { x }).collect() };
    let a = AttributionVector::new(clear(dec), Method::Lime, 0.0, mask.clone())?;
    let b = AttributionVector::new(clear(exp), Method::Lime, 0.0, mask)?;
    let s = align(metric, &a, &b)?;
    Ok((!s.degenerate).then_some(s.value))
}

/// Summary of a bank directory as JSON.
pub fn bank_summary(dir: &Path) -> Result<String> {
    let bank = Bank::read(dir)?;
    let errors = match std::fs::read_to_string(dir.join(ERRORS_FILE)) {
        Ok(s) => s.lines().filter(|l| !l.trim().is_empty()).count(),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => 0,
        Err(e) => return Err(e.into()),
    };
    Ok(serde_json::to_string(&bank.summary(errors))?)
}
