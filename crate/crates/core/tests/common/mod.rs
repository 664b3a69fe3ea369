//! Shared fixtures and independent reference computations for the
//! integration tests.

#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::{Arc, OnceLock};

use attrcons::rng::Rng;
use attrcons::tokens::TokenId;
use attrcons::toylm::{checkpoint, AdapterConfig, ModelConfig, ToyModel};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn config_file(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("config").join(name)
}

/// The shipped pretrained toy base model.
pub fn base_model() -> Arc<ToyModel> {
    static M: OnceLock<Arc<ToyModel>> = OnceLock::new();
    M.get_or_init(|| Arc::new(checkpoint::load(&fixture("toy_base.ckpt")).expect("shipped base checkpoint").0))
        .clone()
}

pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        layers: 2,
        width: 8,
        heads: 2,
        mlp_hidden: 12,
        vocab_size: 16,
        context: 24,
    }
}

/// A random tiny model with a random, non-zero adapter.
pub fn tiny_model(seed: u64) -> ToyModel {
    let mut rng = Rng::named(seed, "tiny");
    let mut m = ToyModel::init(tiny_config(), &mut rng).unwrap();
    m.attach_adapter(AdapterConfig { rank: 2, alpha: 4.0 }, &mut rng).unwrap();
    for p in &mut m.adapter.as_mut().unwrap().params {
        if *p == 0.0 {
            *p = 0.3 * rng.normal();
        }
    }
    m
}

fn param(m: &ToyModel, name: &str) -> (Vec<f64>, usize, usize) {
    let s = m.layout.get(name).unwrap();
    (m.params[s.offset..s.offset + s.len()].to_vec(), s.rows, s.cols)
}

/// `x · W` (+ scaled `x · A · B` when the adapter is on), with plain loops.
fn proj(m: &ToyModel, x: &[f64], name: &str, use_adapter: bool) -> Vec<f64> {
    let (w, rows, cols) = param(m, name);
    let mut y = vec![0.0; cols];
    for j in 0..cols {
        for i in 0..rows {
            y[j] += x[i] * w[i * cols + j];
        }
    }
    if let (true, Some(ad)) = (use_adapter, &m.adapter) {
        let sa = ad.layout.get(&format!("{name}.lora_a")).unwrap();
        let sb = ad.layout.get(&format!("{name}.lora_b")).unwrap();
        let r = sa.cols;
        let mut xa = vec![0.0; r];
        for k in 0..r {
            for i in 0..rows {
                xa[k] += x[i] * ad.params[sa.offset + i * r + k];
            }
        }
        let scale = ad.config.alpha / ad.config.rank as f64;
        for j in 0..cols {
            let mut acc = 0.0;
            for k in 0..r {
                acc += xa[k] * ad.params[sb.offset + k * cols + j];
            }
            y[j] += scale * acc;
        }
    }
    y
}

fn rms(m: &ToyModel, x: &[f64], gain: &str) -> Vec<f64> {
    let (g, ..) = param(m, gain);
    let ms = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    let inv = 1.0 / (ms + 1e-6).sqrt();
    x.iter().zip(&g).map(|(v, g)| v * inv * g).collect()
}

/// Independent forward pass over one sequence, position by position.
/// Returns the final hidden state (after the last norm) at every position.
pub fn reference_hidden(m: &ToyModel, seq: &[TokenId], use_adapter: bool) -> Vec<Vec<f64>> {
    let c = &m.config;
    let d = c.width;
    let hd = d / c.heads;
    let (tok, ..) = param(m, "tok_emb");
    let (pos, ..) = param(m, "pos_emb");
    let mut h: Vec<Vec<f64>> = seq
        .iter()
        .enumerate()
        .map(|(i, &t)| (0..d).map(|j| tok[t as usize * d + j] + pos[i * d + j]).collect())
        .collect();
    for l in 0..c.layers {
        let a: Vec<Vec<f64>> = h.iter().map(|x| rms(m, x, &format!("l{l}.attn_norm"))).collect();
        let q: Vec<Vec<f64>> = a.iter().map(|x| proj(m, x, &format!("l{l}.wq"), use_adapter)).collect();
        let k: Vec<Vec<f64>> = a.iter().map(|x| proj(m, x, &format!("l{l}.wk"), use_adapter)).collect();
        let v: Vec<Vec<f64>> = a.iter().map(|x| proj(m, x, &format!("l{l}.wv"), use_adapter)).collect();
        for i in 0..seq.len() {
            let mut att = vec![0.0; d];
            for head in 0..c.heads {
                let r = head * hd..(head + 1) * hd;
                let s: Vec<f64> = (0..=i)
                    .map(|j| q[i][r.clone()].iter().zip(&k[j][r.clone()]).map(|(a, b)| a * b).sum::<f64>() / (hd as f64).sqrt())
                    .collect();
                let mx = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = s.iter().map(|x| (x - mx).exp()).collect();
                let z: f64 = e.iter().sum();
                for (j, w) in e.iter().enumerate() {
                    for t in r.clone() {
                        att[t] += w / z * v[j][t];
                    }
                }
            }
            let o = proj(m, &att, &format!("l{l}.wo"), use_adapter);
            for t in 0..d {
                h[i][t] += o[t];
            }
        }
        for x in h.iter_mut() {
            let n = rms(m, x, &format!("l{l}.mlp_norm"));
            let g = proj(m, &n, &format!("l{l}.w_gate"), use_adapter);
            let u = proj(m, &n, &format!("l{l}.w_up"), use_adapter);
            let f: Vec<f64> = g.iter().zip(&u).map(|(g, u)| g / (1.0 + (-g).exp()) * u).collect();
            let down = proj(m, &f, &format!("l{l}.w_down"), use_adapter);
            for t in 0..d {
                x[t] += down[t];
            }
        }
    }
    h.iter().map(|x| rms(m, x, "final_norm")).collect()
}

fn log_softmax(z: &[f64]) -> Vec<f64> {
    let mx = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = mx + z.iter().map(|x| (x - mx).exp()).sum::<f64>().ln();
    z.iter().map(|x| x - lse).collect()
}

/// Per-token log-probabilities of `cont` after `prompt`, by the reference pass.
pub fn reference_logprobs(m: &ToyModel, prompt: &[TokenId], cont: &[TokenId], use_adapter: bool) -> Vec<f64> {
    if cont.is_empty() {
        return Vec::new();
    }
    let mut seq = prompt.to_vec();
    seq.extend_from_slice(&cont[..cont.len() - 1]);
    let h = reference_hidden(m, &seq, use_adapter);
    let (w, _, vsz) = param(m, "w_out");
    cont.iter()
        .enumerate()
        .map(|(t, &tok)| {
            let x = &h[prompt.len() - 1 + t];
            let logits: Vec<f64> = (0..vsz).map(|j| x.iter().enumerate().map(|(i, xi)| xi * w[i * vsz + j]).sum()).collect();
            log_softmax(&logits)[tok as usize]
        })
        .collect()
}

/// `|a − b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Central finite-difference check of `grad` against `f` on `n` random
/// coordinates of `params`. Returns the worst relative error.
pub fn gradcheck<F>(params: &mut [f64], grad: &[f64], n: usize, rng: &mut Rng, mut f: F) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    let h = 1e-3;
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let i = rng.below(params.len());
        let orig = params[i];
        params[i] = orig + h;
        let up = f(params);
        params[i] = orig - h;
        let down = f(params);
        params[i] = orig;
        let fd = (up - down) / (2.0 * h);
        worst = worst.max(rel_err(fd, grad[i], 1e-4));
    }
    worst
}
