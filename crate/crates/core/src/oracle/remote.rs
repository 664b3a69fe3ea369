//! Client for a model server speaking the [`wire`](super::wire) protocol,
//! over TCP or the standard streams of a child process.

use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Mutex, OnceLock};

use super::wire::{decode_response, encode_request, Request, Response};
use super::{LogProbResult, Oracle, OracleCapabilities, SampleParams};
use crate::error::{Error, Result};
use crate::tokens::TokenId;

trait Channel: Send {
    fn send_line(&mut self, line: &str) -> std::io::Result<()>;
    fn recv_line(&mut self) -> std::io::Result<String>;
}

struct Duplex<R, W> {
    reader: R,
    writer: W,
}

impl<R: BufRead + Send, W: Write + Send> Channel for Duplex<R, W> {
    fn send_line(&mut self, line: &str) -> std::io::Result<()> {
        self.writer.write_all(line.as_bytes())?;
        self.writer.write_all(b"\n")?;
        self.writer.flush()
    }

    fn recv_line(&mut self) -> std::io::Result<String> {
        let mut buf = String::new();
        if self.reader.read_line(&mut buf)? == 0 {
            return Err(std::io::Error::new(std::io::ErrorKind::UnexpectedEof, "server closed the connection"));
        }
        Ok(buf)
    }
}

pub struct RemoteOracle {
    address: String,
    channel: Mutex<Box<dyn Channel>>,
    next_id: AtomicU64,
    caps: OnceLock<OracleCapabilities>,
    child: Option<Mutex<Child>>,
}

impl RemoteOracle {
    pub fn connect_tcp(addr: &str) -> Result<Self> {
        let stream = TcpStream::connect(addr).map_err(|e| Error::Transport(format!("connect {addr}: {e}")))?;
        stream.set_nodelay(true).ok();
        let reader = BufReader::new(stream.try_clone().map_err(|e| Error::Transport(e.to_string()))?);
        Ok(Self::from_parts(format!("remote:{addr}"), Box::new(Duplex { reader, writer: stream }), None))
    }

    /// Spawns `program args…` and talks to it over stdin/stdout.
    pub fn spawn(program: &str, args: &[String]) -> Result<Self> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| Error::Transport(format!("spawn {program}: {e}")))?;
        let stdin: ChildStdin = child.stdin.take().expect("piped stdin");
        let stdout: ChildStdout = child.stdout.take().expect("piped stdout");
        let chan = Duplex {
            reader: BufReader::new(stdout),
            writer: stdin,
        };
        Ok(Self::from_parts(format!("remote:stdio:{program}"), Box::new(chan), Some(Mutex::new(child))))
    }

    /// Wraps an arbitrary reader/writer pair, e.g. an in-process pipe.
    pub fn from_streams<R, W>(name: &str, reader: R, writer: W) -> Self
    where
        R: BufRead + Send + 'static,
        W: Write + Send + 'static,
    {
        Self::from_parts(name.to_string(), Box::new(Duplex { reader, writer }), None)
    }

    fn from_parts(address: String, channel: Box<dyn Channel>, child: Option<Mutex<Child>>) -> Self {
        RemoteOracle {
            address,
            channel: Mutex::new(channel),
            next_id: AtomicU64::new(1),
            caps: OnceLock::new(),
            child,
        }
    }

    fn call(&self, req: &Request) -> Result<Response> {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let line = encode_request(id, req);
        let mut chan = self.channel.lock().map_err(|_| Error::Transport("channel poisoned".into()))?;
        chan.send_line(&line).map_err(|e| Error::Transport(e.to_string()))?;
        let reply = chan.recv_line().map_err(|e| Error::Transport(e.to_string()))?;
        decode_response(reply.trim_end(), id, req)
    }
}

impl Drop for RemoteOracle {
    fn drop(&mut self) {
        if let Some(child) = &self.child {
            if let Ok(mut c) = child.lock() {
                let _ = c.kill();
                let _ = c.wait();
            }
        }
    }
}

impl Oracle for RemoteOracle {
    fn id(&self) -> String {
        self.address.clone()
    }

    fn capabilities(&self) -> Result<OracleCapabilities> {
        if let Some(c) = self.caps.get() {
            return Ok(*c);
        }
        match self.call(&Request::Capabilities)? {
            Response::Capabilities(c) => {
                // the protocol never carries gradients, whatever the server claims
                let c = OracleCapabilities {
                    can_gradient: false,
                    can_embed: false,
                    ..c
                };
                Ok(*self.caps.get_or_init(|| c))
            }
            other => Err(Error::Protocol(format!("unexpected response {other:?}"))),
        }
    }

    fn logprob(&self, prompt: &[TokenId], continuation: &[TokenId]) -> Result<LogProbResult> {
        let caps = self.capabilities()?;
        if !caps.can_logprob {
            return Err(Error::CapabilityMissing("logprob"));
        }
        if prompt.len() + continuation.len() > caps.max_context {
            return Err(Error::ContextOverflow {
                len: prompt.len() + continuation.len(),
                max: caps.max_context,
            });
        }
        let req = Request::Logprob {
            prompt_ids: prompt.to_vec(),
            continuation_ids: continuation.to_vec(),
        };
        match self.call(&req)? {
            Response::Logprob(r) if r.per_token_logprob.len() == continuation.len() => Ok(r),
            Response::Logprob(r) => Err(Error::Protocol(format!(
                "expected {} per-token values, got {}",
                continuation.len(),
                r.per_token_logprob.len()
            ))),
            other => Err(Error::Protocol(format!("unexpected response {other:?}"))),
        }
    }

    fn sample(&self, prompt: &[TokenId], params: &SampleParams) -> Result<Vec<TokenId>> {
        params.validate()?;
        if !self.capabilities()?.can_sample {
            return Err(Error::CapabilityMissing("sample"));
        }
        let req = Request::Sample {
            prompt_ids: prompt.to_vec(),
            params: params.clone(),
        };
        match self.call(&req)? {
            Response::Sample(t) => Ok(t),
            other => Err(Error::Protocol(format!("unexpected response {other:?}"))),
        }
    }
}
