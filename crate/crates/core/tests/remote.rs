//! Remote-oracle contract suite, run against the in-process TCP server and
//! against the `serve` subcommand over stdio.

mod common;

use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::sync::Arc;

use attrcons::attribution::{attribute, MethodParams, LimeParams, AttributionRequest};
use attrcons::bank::PromptContext;
use attrcons::oracle::remote::RemoteOracle;
use attrcons::oracle::server::serve_tcp;
use attrcons::oracle::{Oracle, SampleParams};
use attrcons::rng::Rng;
use attrcons::task::Corpus;
use attrcons::toylm::{synth, ToyOracle};
use attrcons::Error;
use serde_json::Value;

use common::*;

fn local() -> ToyOracle {
    ToyOracle::base(base_model(), "local")
}

fn contract(remote: &dyn Oracle) {
    let local = local();
    let caps = remote.capabilities().unwrap();
    assert!(caps.can_logprob && caps.can_sample);
    assert!(!caps.can_gradient && !caps.can_embed);
    assert!(remote.gradients().is_none());
    assert_eq!(caps.vocab_size, synth::VOCAB_SIZE);

    let prompt = [1, 3, 14, 20, 4, 7, 9, 28, 5];
    for cont in [&[][..], &[8][..], &[9, 33, 60, 2][..]] {
        let (r, l) = (remote.logprob(&prompt, cont).unwrap(), local.logprob(&prompt, cont).unwrap());
        assert_eq!(r, l, "logprobs must cross the wire bit-exactly");
    }
    let prompts = vec![prompt.to_vec(), vec![1, 3, 15, 21, 4, 8]];
    assert_eq!(
        remote.logprob_batch(&prompts, &[33, 2]).unwrap(),
        local.logprob_batch(&prompts, &[33, 2]).unwrap()
    );

    for params in [SampleParams::greedy(12), SampleParams::default()] {
        assert_eq!(remote.sample(&prompt, &params).unwrap(), local.sample(&prompt, &params).unwrap());
    }

    match remote.logprob(&[1, 999], &[2]) {
        Err(Error::Remote { kind, .. }) => assert_eq!(kind, "bad_request"),
        other => panic!("expected a remote error, got {other:?}"),
    }
    let long = vec![1; caps.max_context + 1];
    assert!(matches!(remote.logprob(&long, &[2]), Err(Error::ContextOverflow { .. })));
    // the session survives errors
    assert!(remote.logprob(&prompt, &[8]).is_ok());

    // perturbation-based attribution is identical through the wire
    let ctx = PromptContext::toy();
    let corpus = Corpus::new(
        synth::generate_task_corpus(&Rng::named(1, "t"), 3, &synth::TaskProfile::alpha()).unwrap(),
        synth::template(),
        [1.0, 0.0, 0.0],
        1,
    )
    .unwrap();
    let task = &corpus.tasks[0];
    let req = AttributionRequest::new(ctx.decision_input(task).unwrap(), Vec::new(), vec![synth::LETTER_BASE]);
    let params = MethodParams::Lime(LimeParams {
        n_samples: 64,
        ..LimeParams::default()
    });
    let a = attribute(remote, &req, &params, &mut Rng::new(9, 0)).unwrap();
    let b = attribute(&local, &req, &params, &mut Rng::new(9, 0)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn tcp_contract() {
    let (addr, _h) = serve_tcp(Arc::new(local()), "127.0.0.1:0").unwrap();
    let remote = RemoteOracle::connect_tcp(&addr.to_string()).unwrap();
    contract(&remote);
}

#[test]
fn stdio_contract_against_serve_subcommand() {
    let ckpt = fixture("toy_base.ckpt");
    let args = vec!["serve".to_string(), "--oracle".into(), format!("toy:{}", ckpt.display())];
    let remote = RemoteOracle::spawn(env!("CARGO_BIN_EXE_attrcons"), &args).unwrap();
    contract(&remote);
}

#[test]
fn malformed_requests_get_bad_request_and_server_stays_up() {
    let (addr, _h) = serve_tcp(Arc::new(local()), "127.0.0.1:0").unwrap();
    let stream = TcpStream::connect(addr).unwrap();
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut w = stream;
    let mut ask = |line: &str| -> Value {
        w.write_all(line.as_bytes()).unwrap();
        w.write_all(b"\n").unwrap();
        let mut buf = String::new();
        reader.read_line(&mut buf).unwrap();
        serde_json::from_str(&buf).unwrap()
    };
    for bad in ["{not json", r#"{"kind":"logprob"}"#, r#"{"id":3,"kind":"teleport"}"#, r#"{"id":4,"kind":"sample","prompt_ids":[1],"top_p":0.9}"#] {
        let v = ask(bad);
        assert_eq!(v["error"]["kind"], "bad_request", "{bad} -> {v}");
    }
    let v = ask(r#"{"id":4,"kind":"sample","prompt_ids":[1],"top_p":"0.9","temperature":"0.7","max_tokens":3,"seed":1}"#);
    assert_eq!(v["id"], 4);
    assert!(v["result"]["tokens"].is_array());
    let v = ask(r#"{"id":5,"kind":"capabilities"}"#);
    assert_eq!(v["result"]["can_gradient"], false);
}

#[test]
fn dead_server_is_a_transport_error() {
    let (addr, h) = {
        let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = l.local_addr().unwrap();
        let h = std::thread::spawn(move || {
            let (s, _) = l.accept().unwrap();
            drop(s);
        });
        (addr, h)
    };
    let remote = RemoteOracle::connect_tcp(&addr.to_string()).unwrap();
    h.join().unwrap();
    assert!(matches!(remote.capabilities(), Err(Error::Transport(_))));
}
