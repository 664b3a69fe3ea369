//! Serves any [`Oracle`] over the wire protocol. Used to expose the toy
//! model to external tooling and to exercise the remote client.

use std::io::{BufRead, Write};
use std::net::{TcpListener, ToSocketAddrs};
use std::sync::Arc;

use super::wire::{decode_request, encode_response, Request, Response};
use super::Oracle;
use crate::error::Result;

fn handle(oracle: &dyn Oracle, req: Request) -> Result<Response> {
    match req {
        Request::Capabilities => {
            let c = oracle.capabilities()?;
            // gradients never cross the wire
            Ok(Response::Capabilities(super::OracleCapabilities {
                can_gradient: false,
                can_embed: false,
                ..c
            }))
        }
        Request::Logprob {
            prompt_ids,
            continuation_ids,
        } => Ok(Response::Logprob(oracle.logprob(&prompt_ids, &continuation_ids)?)),
        Request::Sample { prompt_ids, params } => Ok(Response::Sample(oracle.sample(&prompt_ids, &params)?)),
    }
}

/// Answers requests line by line until the reader is exhausted. Malformed
/// requests get an error response; the loop keeps running.
pub fn serve_stream<R: BufRead, W: Write>(oracle: &dyn Oracle, reader: R, mut writer: W) -> std::io::Result<()> {
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (id, req) = decode_request(&line);
        let resp = req.and_then(|r| handle(oracle, r));
        writer.write_all(encode_response(id, &resp).as_bytes())?;
        writer.write_all(b"\n")?;
        writer.flush()?;
    }
    Ok(())
}

/// Binds `addr` and serves each connection on its own thread. Returns the
/// bound address and the accept-loop handle.
pub fn serve_tcp<A: ToSocketAddrs>(
    oracle: Arc<dyn Oracle>,
    addr: A,
) -> std::io::Result<(std::net::SocketAddr, std::thread::JoinHandle<()>)> {
    let listener = TcpListener::bind(addr)?;
    let local = listener.local_addr()?;
    let handle = std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(stream) = stream else { continue };
            let oracle = Arc::clone(&oracle);
            std::thread::spawn(move || {
                let Ok(read_half) = stream.try_clone() else { return };
                let _ = serve_stream(oracle.as_ref(), std::io::BufReader::new(read_half), stream);
            });
        }
    });
    Ok((local, handle))
}
