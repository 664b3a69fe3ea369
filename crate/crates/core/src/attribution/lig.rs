//! Integrated gradients on the token-embedding layer.

use serde::{Deserialize, Serialize};

use super::{AttributionRequest, AttributionVector, Method};
use crate::error::{Error, Result};
use crate::oracle::Oracle;
use crate::tokens::TokenId;
use crate::toylm::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LigBaseline {
    /// Every prompt position starts from the embedding of `pad_token`.
    PadEmbedding,
    ZeroEmbedding,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quadrature {
    /// Nodes `k/steps` for `k = 0..steps`, equal weights.
    RiemannLeft,
    /// Nodes `k/steps` for `k = 0..=steps`, halved end weights.
    Trapezoid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LigParams {
    pub steps: usize,
    pub baseline: LigBaseline,
    pub quadrature: Quadrature,
    pub pad_token: TokenId,
}

impl Default for LigParams {
    fn default() -> Self {
        LigParams {
            steps: 25,
            baseline: LigBaseline::PadEmbedding,
            quadrature: Quadrature::Trapezoid,
            pad_token: 0,
        }
    }
}

impl LigParams {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::config("lig.steps", "must be at least 1"));
        }
        Ok(())
    }

    fn nodes(&self) -> Vec<(f64, f64)> {
        let n = self.steps as f64;
        match self.quadrature {
            Quadrature::RiemannLeft => (0..self.steps).map(|k| (k as f64 / n, 1.0 / n)).collect(),
            Quadrature::Trapezoid => (0..=self.steps)
                .map(|k| {
                    let w = if k == 0 || k == self.steps { 0.5 / n } else { 1.0 / n };
                    (k as f64 / n, w)
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LigOutput {
    pub vector: AttributionVector,
    /// Per-position scores before masking; their sum approximates
    /// `SLP(x) − SLP(baseline)`.
    pub raw_scores: Vec<f64>,
    pub baseline_slp: f64,
}

impl LigOutput {
    /// Relative completeness error `|Σφ − ΔSLP| / |ΔSLP|`.
    pub fn completeness_error(&self) -> f64 {
        let delta = self.vector.target_slp - self.baseline_slp;
        let sum: f64 = self.raw_scores.iter().sum();
        (sum - delta).abs() / delta.abs()
    }
}

pub fn attribute_lig(oracle: &dyn Oracle, req: &AttributionRequest, params: &LigParams) -> Result<AttributionVector> {
    Ok(attribute_lig_detailed(oracle, req, params)?.vector)
}

pub fn attribute_lig_detailed(oracle: &dyn Oracle, req: &AttributionRequest, params: &LigParams) -> Result<LigOutput> {
    params.validate()?;
    let caps = oracle.capabilities()?;
    if !caps.can_gradient || !caps.can_embed {
        return Err(Error::CapabilityMissing("gradient"));
    }
    let grads = oracle.gradients().ok_or(Error::CapabilityMissing("gradient"))?;
    let full = req.full_prompt();
    let m = req.prompt.len();
    let input = grads.embed(&full)?;
    let width = input.cols;
    let base_row = match params.baseline {
        LigBaseline::PadEmbedding => grads.embed(&[params.pad_token])?.row(0).to_vec(),
        LigBaseline::ZeroEmbedding => vec![0.0; width],
    };
    let point = |t: f64| {
        let mut e = input.clone();
        for i in 0..m {
            for (x, &b) in e.row_mut(i).iter_mut().zip(&base_row) {
                *x = b + t * (*x - b);
            }
        }
        e
    };
    let nodes = params.nodes();
    let mut points: Vec<Matrix> = nodes.iter().map(|&(t, _)| point(t)).collect();
    let has_zero = nodes[0].0 == 0.0;
    if !has_zero {
        points.push(point(0.0));
    }
    let evals = grads.slp_grad_wrt_embeddings(&points, &req.continuation)?;
    let baseline_slp = if has_zero { evals[0].0 } else { evals[evals.len() - 1].0 };
    let mut avg = Matrix::zeros(m, width);
    for ((_, w), (_, g)) in nodes.iter().zip(&evals) {
        for i in 0..m {
            for (a, &gv) in avg.row_mut(i).iter_mut().zip(g.row(i)) {
                *a += w * gv;
            }
        }
    }
    let raw_scores: Vec<f64> = (0..m)
        .map(|i| {
            input.row(i)[..width]
                .iter()
                .zip(&base_row)
                .zip(avg.row(i))
                .map(|((&e, &b), &g)| (e - b) * g)
                .sum()
        })
        .collect();
    if raw_scores.iter().any(|s| !s.is_finite()) || !baseline_slp.is_finite() {
        return Err(Error::NonFinite("integrated gradients".into()));
    }
    let mask = req.prompt.skip_mask();
    let scores: Vec<f64> = raw_scores.iter().zip(mask).map(|(&s, &masked)| if masked { 0.0 } else { s }).collect();
    let target = req.target_slp(oracle)?;
    Ok(LigOutput {
        vector: AttributionVector::new(scores, Method::Lig, target, mask.to_vec())?,
        raw_scores,
        baseline_slp,
    })
}
