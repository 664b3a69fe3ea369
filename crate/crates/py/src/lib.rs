//! Python bindings. Token ids, scores and masks cross as lists; structured
//! results (capabilities, bank summaries) cross as JSON strings.

pub mod api;

use std::path::PathBuf;

use attrcons::oracle::{Oracle, SampleParams};
use attrcons::tokens::TokenId;
use attrcons::Error;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::InvalidInput(_) | Error::Config { .. } | Error::Json(_) | Error::TooManyPlayers { .. } | Error::ContextOverflow { .. } => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

#[pyclass(name = "Oracle", frozen)]
struct PyOracle {
    inner: Box<dyn Oracle>,
}

#[pymethods]
impl PyOracle {
    /// `toy:PATH`, `tuned:PATH` or `remote:HOST:PORT`.
    #[new]
    fn new(spec: &str) -> PyResult<Self> {
        Ok(PyOracle {
            inner: api::open_oracle(spec).map_err(to_py)?,
        })
    }

    #[getter]
    fn id(&self) -> String {
        self.inner.id()
    }

    fn capabilities(&self) -> PyResult<String> {
        let c = self.inner.capabilities().map_err(to_py)?;
        serde_json::to_string(&c).map_err(|e| to_py(e.into()))
    }

    /// `(slp, per_token_logprobs)` of `continuation` after `prompt`.
    fn logprob(&self, prompt: Vec<TokenId>, continuation: Vec<TokenId>) -> PyResult<(f64, Vec<f64>)> {
        let r = self.inner.logprob(&prompt, &continuation).map_err(to_py)?;
        Ok((r.slp, r.per_token_logprob))
    }

    #[pyo3(signature = (prompt, max_tokens = 32, top_p = 0.9, temperature = 0.7, seed = 42, greedy = false))]
    fn sample(&self, prompt: Vec<TokenId>, max_tokens: usize, top_p: f64, temperature: f64, seed: u64, greedy: bool) -> PyResult<Vec<TokenId>> {
        let params = SampleParams {
            top_p,
            temperature,
            max_tokens,
            seed,
            greedy,
        };
        api::sample(self.inner.as_ref(), &prompt, &params).map_err(to_py)
    }

    /// Per-position scores; masked positions are exactly zero.
    #[pyo3(signature = (prompt, continuation, params = r#"{"method": "lime"}"#, skip_mask = None, suffix = Vec::new(), seed = 0))]
    fn attribute(
        &self,
        prompt: Vec<TokenId>,
        continuation: Vec<TokenId>,
        params: &str,
        skip_mask: Option<Vec<bool>>,
        suffix: Vec<TokenId>,
        seed: u64,
    ) -> PyResult<Vec<f64>> {
        let v = api::attribute_json(self.inner.as_ref(), prompt, skip_mask, suffix, continuation, params, seed).map_err(to_py)?;
        Ok(v.scores)
    }
}

/// Cosine alignment over unmasked positions; `None` when undefined.
#[pyfunction]
#[pyo3(signature = (dec, exp, skip_mask = None))]
fn cc_cos(dec: Vec<f64>, exp: Vec<f64>, skip_mask: Option<Vec<bool>>) -> PyResult<Option<f64>> {
    api::alignment("cc_cos", dec, exp, skip_mask).map_err(to_py)
}

/// Spearman alignment (average-rank ties) over unmasked positions.
#[pyfunction]
#[pyo3(signature = (dec, exp, skip_mask = None))]
fn cc_sp(dec: Vec<f64>, exp: Vec<f64>, skip_mask: Option<Vec<bool>>) -> PyResult<Option<f64>> {
    api::alignment("cc_sp", dec, exp, skip_mask).map_err(to_py)
}

#[pyfunction]
fn bank_summary(dir: PathBuf) -> PyResult<String> {
    api::bank_summary(&dir).map_err(to_py)
}

#[pymodule]
#[pyo3(name = "attrcons")]
fn attrcons_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyOracle>()?;
    m.add_function(wrap_pyfunction!(cc_cos, m)?)?;
    m.add_function(wrap_pyfunction!(cc_sp, m)?)?;
    m.add_function(wrap_pyfunction!(bank_summary, m)?)?;
    Ok(())
}
