//! Line-delimited JSON protocol between the engine and a model server.
//!
//! One request per line, one response per line. Responses echo the request
//! `id` and carry either `result` or `error: {kind, message}`. Real-valued
//! fields travel as decimal strings (Rust's shortest round-trip form), so
//! no JSON float re-encoding can perturb them; ids and counts are integers.
//!
//! ```text
//! {"id":1,"kind":"capabilities"}
//! {"id":2,"kind":"logprob","prompt_ids":[1,3],"continuation_ids":[7,8]}
//! {"id":3,"kind":"sample","prompt_ids":[1,3],"top_p":"0.9","temperature":"0.7","max_tokens":400,"seed":42}
//! {"id":2,"result":{"per_token_logprob":["-0.5","-1.25"],"slp":"-1.75"}}
//! {"id":4,"error":{"kind":"bad_request","message":"unknown kind"}}
//! ```

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::{LogProbResult, OracleCapabilities, SampleParams};
use crate::error::{Error, Result};
use crate::tokens::TokenId;

#[derive(Clone, Debug, PartialEq)]
pub enum Request {
    Capabilities,
    Logprob {
        prompt_ids: Vec<TokenId>,
        continuation_ids: Vec<TokenId>,
    },
    Sample {
        prompt_ids: Vec<TokenId>,
        params: SampleParams,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub enum Response {
    Capabilities(OracleCapabilities),
    Logprob(LogProbResult),
    Sample(Vec<TokenId>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WireError {
    pub kind: String,
    pub message: String,
}

pub fn real(x: f64) -> Value {
    Value::String(format!("{x}"))
}

pub fn parse_real(v: &Value, field: &str) -> Result<f64> {
    match v {
        Value::String(s) => s
            .trim()
            .parse::<f64>()
            .map_err(|_| Error::Protocol(format!("field `{field}` is not decimal text: {s:?}"))),
        _ => Err(Error::Protocol(format!("field `{field}` must be a decimal string"))),
    }
}

fn ids(v: Option<&Value>, field: &str) -> Result<Vec<TokenId>> {
    let arr = v
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Protocol(format!("missing array field `{field}`")))?;
    arr.iter()
        .map(|x| {
            x.as_u64()
                .and_then(|u| TokenId::try_from(u).ok())
                .ok_or_else(|| Error::Protocol(format!("`{field}` must hold non-negative integers")))
        })
        .collect()
}

fn uint(v: Option<&Value>, field: &str) -> Result<u64> {
    v.and_then(Value::as_u64)
        .ok_or_else(|| Error::Protocol(format!("missing integer field `{field}`")))
}

pub fn encode_request(id: u64, req: &Request) -> String {
    let v = match req {
        Request::Capabilities => json!({"id": id, "kind": "capabilities"}),
        Request::Logprob {
            prompt_ids,
            continuation_ids,
        } => json!({
            "id": id,
            "kind": "logprob",
            "prompt_ids": prompt_ids,
            "continuation_ids": continuation_ids,
        }),
        Request::Sample { prompt_ids, params } => {
            let mut m = Map::new();
            m.insert("id".into(), json!(id));
            m.insert("kind".into(), json!("sample"));
            m.insert("prompt_ids".into(), json!(prompt_ids));
            m.insert("top_p".into(), real(params.top_p));
            m.insert("temperature".into(), real(params.temperature));
            m.insert("max_tokens".into(), json!(params.max_tokens));
            m.insert("seed".into(), json!(params.seed));
            if params.greedy {
                m.insert("greedy".into(), json!(true));
            }
            Value::Object(m)
        }
    };
    v.to_string()
}

/// Parses a request line into `(id, request)`. The id is recovered whenever
/// possible so error responses can echo it.
pub fn decode_request(line: &str) -> (Option<u64>, Result<Request>) {
    let v: Value = match serde_json::from_str(line) {
        Ok(v) => v,
        Err(e) => return (None, Err(Error::Protocol(format!("malformed JSON: {e}")))),
    };
    let id = v.get("id").and_then(Value::as_u64);
    let req = (|| {
        if id.is_none() {
            return Err(Error::Protocol("missing integer `id`".into()));
        }
        let kind = v
            .get("kind")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::Protocol("missing `kind`".into()))?;
        match kind {
            "capabilities" => Ok(Request::Capabilities),
            "logprob" => Ok(Request::Logprob {
                prompt_ids: ids(v.get("prompt_ids"), "prompt_ids")?,
                continuation_ids: ids(v.get("continuation_ids"), "continuation_ids")?,
            }),
            "sample" => {
                let params = SampleParams {
                    top_p: parse_real(v.get("top_p").unwrap_or(&Value::Null), "top_p")?,
                    temperature: parse_real(v.get("temperature").unwrap_or(&Value::Null), "temperature")?,
                    max_tokens: uint(v.get("max_tokens"), "max_tokens")? as usize,
                    seed: uint(v.get("seed"), "seed")?,
                    greedy: v.get("greedy").and_then(Value::as_bool).unwrap_or(false),
                };
                Ok(Request::Sample {
                    prompt_ids: ids(v.get("prompt_ids"), "prompt_ids")?,
                    params,
                })
            }
            other => Err(Error::Protocol(format!("unknown request kind `{other}`"))),
        }
    })();
    (id, req)
}

pub fn encode_response(id: Option<u64>, resp: &Result<Response>) -> String {
    let id = id.map(Value::from).unwrap_or(Value::Null);
    let v = match resp {
        Ok(Response::Capabilities(c)) => json!({"id": id, "result": c}),
        Ok(Response::Logprob(r)) => json!({
            "id": id,
            "result": {
                "per_token_logprob": r.per_token_logprob.iter().map(|&x| real(x)).collect::<Vec<_>>(),
                "slp": real(r.slp),
            }
        }),
        Ok(Response::Sample(tokens)) => json!({"id": id, "result": {"tokens": tokens}}),
        Err(e) => json!({"id": id, "error": {"kind": e.kind(), "message": e.to_string()}}),
    };
    v.to_string()
}

/// Decodes a response line for a request of the given kind.
pub fn decode_response(line: &str, expect_id: u64, req: &Request) -> Result<Response> {
    let v: Value = serde_json::from_str(line).map_err(|e| Error::Protocol(format!("malformed response: {e}")))?;
    let id = v.get("id").and_then(Value::as_u64);
    if id != Some(expect_id) {
        return Err(Error::Protocol(format!("response id {id:?} does not match request {expect_id}")));
    }
    if let Some(err) = v.get("error") {
        let e: WireError = serde_json::from_value(err.clone()).map_err(|e| Error::Protocol(format!("malformed error object: {e}")))?;
        return Err(Error::Remote {
            kind: e.kind,
            message: e.message,
        });
    }
    let result = v
        .get("result")
        .ok_or_else(|| Error::Protocol("response carries neither result nor error".into()))?;
    match req {
        Request::Capabilities => {
            let caps: OracleCapabilities =
                serde_json::from_value(result.clone()).map_err(|e| Error::Protocol(format!("bad capabilities: {e}")))?;
            caps.validate()?;
            Ok(Response::Capabilities(caps))
        }
        Request::Logprob { .. } => {
            let per = result
                .get("per_token_logprob")
                .and_then(Value::as_array)
                .ok_or_else(|| Error::Protocol("missing per_token_logprob".into()))?
                .iter()
                .map(|x| parse_real(x, "per_token_logprob"))
                .collect::<Result<Vec<_>>>()?;
            let slp = parse_real(result.get("slp").unwrap_or(&Value::Null), "slp")?;
            let r = LogProbResult {
                per_token_logprob: per,
                slp,
            };
            r.check()?;
            Ok(Response::Logprob(r))
        }
        Request::Sample { .. } => Ok(Response::Sample(ids(result.get("tokens"), "tokens")?)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sample_request_carries_decimal_text() {
        let line = encode_request(
            3,
            &Request::Sample {
                prompt_ids: vec![1, 2],
                params: SampleParams::default(),
            },
        );
        let v: Value = serde_json::from_str(&line).unwrap();
        assert_eq!(v["top_p"], json!("0.9"));
        assert_eq!(v["temperature"], json!("0.7"));
        assert_eq!(v["max_tokens"], json!(400));
        assert_eq!(v["kind"], json!("sample"));
    }

    #[test]
    fn malformed_lines_are_bad_requests() {
        let (id, r) = decode_request("{not json");
        assert!(id.is_none());
        assert_eq!(r.unwrap_err().kind(), "bad_request");
        let (id, r) = decode_request(r#"{"id":5,"kind":"nope"}"#);
        assert_eq!(id, Some(5));
        assert_eq!(r.unwrap_err().kind(), "bad_request");
        let (_, r) = decode_request(r#"{"id":6,"kind":"sample","prompt_ids":[1],"top_p":0.9}"#);
        assert!(r.is_err());
    }

    #[test]
    fn error_response_roundtrip() {
        let line = encode_response(Some(4), &Err(Error::ContextOverflow { len: 9, max: 8 }));
        let err = decode_response(&line, 4, &Request::Capabilities).unwrap_err();
        match err {
            Error::Remote { kind, .. } => assert_eq!(kind, "context_overflow"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn mismatched_id_rejected() {
        let line = encode_response(Some(1), &Ok(Response::Sample(vec![1])));
        assert!(decode_response(&line, 2, &Request::Capabilities).is_err());
    }

    proptest! {
        #[test]
        fn logprob_response_is_bit_exact(per in prop::collection::vec(-50.0f64..0.0, 0..8)) {
            let slp: f64 = per.iter().sum();
            let r = LogProbResult { per_token_logprob: per, slp };
            let line = encode_response(Some(9), &Ok(Response::Logprob(r.clone())));
            let req = Request::Logprob { prompt_ids: vec![1], continuation_ids: vec![] };
            let back = decode_response(&line, 9, &req).unwrap();
            prop_assert_eq!(back, Response::Logprob(r));
        }

        #[test]
        fn request_roundtrip(p in prop::collection::vec(0u32..1000, 1..10), c in prop::collection::vec(0u32..1000, 0..10),
                             top_p in 0.01f64..1.0, temp in 0.01f64..3.0, seed in any::<u64>()) {
            let reqs = [
                Request::Logprob { prompt_ids: p.clone(), continuation_ids: c },
                Request::Sample { prompt_ids: p, params: SampleParams { top_p, temperature: temp, max_tokens: 7, seed, greedy: false } },
            ];
            for r in reqs {
                let (id, back) = decode_request(&encode_request(11, &r));
                prop_assert_eq!(id, Some(11));
                prop_assert_eq!(back.unwrap(), r);
            }
        }
    }
}
