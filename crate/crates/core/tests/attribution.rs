mod common;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use attrcons::attribution::{
    attribute, attribute_exact_shapley, attribute_kshap, attribute_lig, attribute_lig_detailed, attribute_lime, exact_shapley, kernel_shap,
    AttributionRequest, FnGame, KshapParams, LigParams, LimeParams, MethodParams, OracleGame,
};
use attrcons::bank::PromptContext;
use attrcons::oracle::{GradientOracle, LogProbResult, Oracle, OracleCapabilities, SampleParams};
use attrcons::rng::Rng;
use attrcons::task::Corpus;
use attrcons::tokens::{TokenId, TokenSequence};
use attrcons::toylm::tensor::Matrix;
use attrcons::toylm::{synth, ToyOracle};
use attrcons::{Error, Result};

use common::*;

fn toy() -> ToyOracle {
    ToyOracle::base(base_model(), "base")
}

fn fixture_tasks() -> Corpus {
    Corpus::read(&fixture("toy_tasks.jsonl")).unwrap()
}

/// The decision request for fixture task `i`, continuation = gold letter.
fn decision_request(i: usize) -> AttributionRequest {
    let ctx = PromptContext::toy();
    let c = fixture_tasks();
    let t = &c.tasks[i];
    AttributionRequest::new(ctx.decision_input(t).unwrap(), Vec::new(), vec![synth::LETTER_BASE + t.gold as TokenId])
}

/// Same prompt with only the first `keep` perturbable positions unmasked.
fn narrowed(req: &AttributionRequest, keep: usize) -> AttributionRequest {
    let mut mask = req.prompt.skip_mask().to_vec();
    let mut seen = 0;
    for m in mask.iter_mut() {
        if !*m {
            seen += 1;
            if seen > keep {
                *m = true;
            }
        }
    }
    let prompt = TokenSequence::with_mask(req.prompt.tokens().to_vec(), req.prompt.pieces().to_vec(), mask).unwrap();
    AttributionRequest::new(prompt, req.suffix.clone(), req.continuation.clone())
}

#[test]
fn vectors_respect_mask_and_record_target() {
    let o = toy();
    let req = decision_request(0);
    let target = o.logprob(&req.full_prompt(), &req.continuation).unwrap().slp;
    let p = req.prompt.skip_mask().iter().filter(|m| !**m).count();
    assert_eq!(p, 14);
    for params in [
        MethodParams::Lime(LimeParams {
            n_samples: 100,
            ..Default::default()
        }),
        MethodParams::Lig(LigParams::default()),
        MethodParams::Kshap(KshapParams {
            n_samples: 100,
            ..Default::default()
        }),
    ] {
        let v = attribute(&o, &req, &params, &mut Rng::new(1, 0)).unwrap();
        assert_eq!(v.len(), req.prompt.len());
        assert_eq!(v.target_slp, target);
        for (s, &m) in v.scores.iter().zip(req.prompt.skip_mask()) {
            if m {
                assert_eq!(*s, 0.0);
            }
        }
        assert!(v.scores.iter().any(|s| *s != 0.0));
    }
}

#[test]
fn stochastic_estimators_follow_the_seed() {
    let o = toy();
    let req = decision_request(1);
    let lp = LimeParams {
        n_samples: 80,
        ..Default::default()
    };
    let a = attribute_lime(&o, &req, &lp, &mut Rng::new(5, 0)).unwrap();
    let b = attribute_lime(&o, &req, &lp, &mut Rng::new(5, 0)).unwrap();
    let c = attribute_lime(&o, &req, &lp, &mut Rng::new(6, 0)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.scores, c.scores);
}

struct Counting {
    inner: ToyOracle,
    calls: AtomicUsize,
}

impl Oracle for Counting {
    fn id(&self) -> String {
        "counting".into()
    }
    fn capabilities(&self) -> Result<OracleCapabilities> {
        self.inner.capabilities()
    }
    fn logprob(&self, p: &[TokenId], c: &[TokenId]) -> Result<LogProbResult> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.logprob(p, c)
    }
    fn sample(&self, p: &[TokenId], s: &SampleParams) -> Result<Vec<TokenId>> {
        self.inner.sample(p, s)
    }
}

#[test]
fn nothing_perturbable_means_zero_vector_and_one_call() {
    let o = Counting {
        inner: toy(),
        calls: AtomicUsize::new(0),
    };
    let req = narrowed(&decision_request(0), 0);
    for params in [
        MethodParams::Lime(LimeParams::default()),
        MethodParams::Kshap(KshapParams::default()),
        MethodParams::ExactShapley { baseline: 0 },
    ] {
        o.calls.store(0, Ordering::Relaxed);
        let v = attribute(&o, &req, &params, &mut Rng::new(1, 0)).unwrap();
        assert!(v.scores.iter().all(|&s| s == 0.0));
        assert!(v.target_slp.is_finite());
        assert_eq!(o.calls.load(Ordering::Relaxed), 1, "only the target SLP is queried");
    }
}

#[test]
fn exact_shapley_on_the_toy_model() {
    let o = toy();
    let full = decision_request(2);
    assert!(matches!(
        attribute_exact_shapley(&o, &full, 0),
        Err(Error::TooManyPlayers { players: 14, max: 12 })
    ));
    let req = narrowed(&full, 7);
    let exact = attribute_exact_shapley(&o, &req, 0).unwrap();
    let game = OracleGame::new(&o, &req, 0);
    let all = attrcons::attribution::CoalitionGame::values(&game, &[vec![true; 7], vec![false; 7]]).unwrap();
    let total: f64 = exact.scores.iter().sum();
    assert!((total - (all[0] - all[1])).abs() < 1e-9, "efficiency");
    let ks = attribute_kshap(&o, &req, &KshapParams { n_samples: 126, baseline: 0 }, &mut Rng::new(3, 0)).unwrap();
    for (a, b) in exact.scores.iter().zip(&ks.scores) {
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }
}

#[test]
fn sampled_kernel_shap_on_a_linear_game() {
    let w = [0.8, -0.3, 0.5, 0.0, 1.2, -0.7, 0.25, 0.4, -0.1, 0.9];
    let g = FnGame {
        players: w.len(),
        f: |s: &[bool]| s.iter().zip(&w).filter(|(p, _)| **p).map(|(_, w)| w).sum::<f64>() + 0.5,
    };
    let phi = kernel_shap(&g, 2000, &mut Rng::new(42, 0)).unwrap();
    let err = phi.iter().zip(&w).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err < 0.05, "max error {err}");
    assert_eq!(exact_shapley(&FnGame { players: 3, f: |_: &[bool]| 2.0 }).unwrap(), vec![0.0; 3]);
}

#[test]
fn lig_completeness_on_the_toy_model() {
    let o = toy();
    let req = decision_request(3);
    let out = attribute_lig_detailed(
        &o,
        &req,
        &LigParams {
            steps: 256,
            ..Default::default()
        },
    )
    .unwrap();
    assert!(out.completeness_error() < 0.01, "{}", out.completeness_error());
}

#[test]
fn lig_from_the_baseline_is_zero() {
    let o = toy();
    let req = decision_request(0);
    let pads = vec![0; req.prompt.len()];
    let prompt = TokenSequence::with_mask(pads, req.prompt.pieces().to_vec(), req.prompt.skip_mask().to_vec()).unwrap();
    let req = AttributionRequest::new(prompt, Vec::new(), req.continuation.clone());
    let v = attribute_lig(&o, &req, &LigParams::default()).unwrap();
    assert!(v.scores.iter().all(|&s| s == 0.0));
}

/// SLP is a fixed linear function of the prompt embeddings.
struct LinearEmbedOracle {
    table: Matrix,
    weights: Matrix,
}

impl LinearEmbedOracle {
    fn slp_of(&self, e: &Matrix) -> f64 {
        (0..e.rows).map(|i| e.row(i).iter().zip(self.weights.row(i)).map(|(a, b)| a * b).sum::<f64>()).sum()
    }
}

impl Oracle for LinearEmbedOracle {
    fn id(&self) -> String {
        "linear".into()
    }
    fn capabilities(&self) -> Result<OracleCapabilities> {
        Ok(OracleCapabilities {
            can_logprob: true,
            can_sample: false,
            can_gradient: true,
            can_embed: true,
            vocab_size: self.table.rows,
            max_context: 64,
        })
    }
    fn logprob(&self, p: &[TokenId], _c: &[TokenId]) -> Result<LogProbResult> {
        let slp = self.slp_of(&self.embed(p)?);
        Ok(LogProbResult {
            per_token_logprob: vec![slp],
            slp,
        })
    }
    fn sample(&self, _p: &[TokenId], _s: &SampleParams) -> Result<Vec<TokenId>> {
        Err(Error::CapabilityMissing("sample"))
    }
    fn gradients(&self) -> Option<&dyn GradientOracle> {
        Some(self)
    }
}

impl GradientOracle for LinearEmbedOracle {
    fn embed(&self, ids: &[TokenId]) -> Result<Matrix> {
        let mut m = Matrix::zeros(ids.len(), self.table.cols);
        for (r, &t) in ids.iter().enumerate() {
            m.row_mut(r).copy_from_slice(self.table.row(t as usize));
        }
        Ok(m)
    }
    fn slp_grad_wrt_embeddings(&self, embeds: &[Matrix], _c: &[TokenId]) -> Result<Vec<(f64, Matrix)>> {
        Ok(embeds
            .iter()
            .map(|e| {
                let mut g = Matrix::zeros(e.rows, e.cols);
                for i in 0..e.rows {
                    g.row_mut(i).copy_from_slice(self.weights.row(i));
                }
                (self.slp_of(e), g)
            })
            .collect())
    }
}

#[test]
fn lig_is_exact_for_linear_models() {
    let mut rng = Rng::new(8, 0);
    let (v, d, n) = (6, 3, 4);
    let table = Matrix::from_vec(v, d, (0..v * d).map(|_| rng.normal()).collect());
    let weights = Matrix::from_vec(n, d, (0..n * d).map(|_| rng.normal()).collect());
    let o = LinearEmbedOracle { table, weights };
    let ids = vec![1, 4, 2, 5];
    let seq = TokenSequence::new(ids.clone(), vec!["x".into(); 4]).unwrap();
    let req = AttributionRequest::new(seq, Vec::new(), vec![0]);
    for steps in [1, 3, 17] {
        let v = attribute_lig(
            &o,
            &req,
            &LigParams {
                steps,
                ..Default::default()
            },
        )
        .unwrap();
        for (i, &t) in ids.iter().enumerate() {
            let want: f64 = (0..d).map(|j| (o.table.get(t as usize, j) - o.table.get(0, j)) * o.weights.get(i, j)).sum();
            assert!((v.scores[i] - want).abs() < 1e-12);
        }
    }
}

#[test]
fn gradient_methods_need_gradient_access() {
    let (addr, _h) = attrcons::oracle::server::serve_tcp(Arc::new(toy()), "127.0.0.1:0").unwrap();
    let remote = attrcons::oracle::remote::RemoteOracle::connect_tcp(&addr.to_string()).unwrap();
    assert!(matches!(
        attribute_lig(&remote, &decision_request(0), &LigParams::default()),
        Err(Error::CapabilityMissing(_))
    ));
}
