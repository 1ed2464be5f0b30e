//! Newline-delimited JSON client for an external pose/token service.
//!
//! ```text
//! → {"type":"process","id":1,"anchor":"a.png","frames":["a.png","b.png"]}
//! ← {"type":"result","id":1,"poses":[{"t":[..],"q":[qx,qy,qz,qw]},..],"tokens":[[..],..]}
//! ← {"type":"error","id":1,"message":"..."}
//! ```
//!
//! A server may also emit `{"type":"hello","token_dim":D}` once when a
//! session starts. Poses are anchor-relative, in request order.

use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::time::Duration;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, BackendRequest, BackendResponse, FrameEstimate};
use crate::geometry::Rigid3;

/// Environment variable that overrides any configured endpoint.
pub const ENDPOINT_ENV: &str = "KFVO_BACKEND_ENDPOINT";
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);
/// Anchor-identity tolerance for poses that crossed the wire.
pub const WIRE_ANCHOR_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WirePose {
    pub t: [f64; 3],
    /// `[qx, qy, qz, qw]`
    pub q: [f64; 4],
}

impl WirePose {
    pub fn from_rigid(p: &Rigid3) -> Self {
        Self {
            t: [p.translation.x, p.translation.y, p.translation.z],
            q: p.quaternion_xyzw(),
        }
    }

    fn to_rigid(self) -> Result<Rigid3, BackendError> {
        let norm = self.q.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !norm.is_finite() || (norm - 1.0).abs() > 1e-3 || self.t.iter().any(|v| !v.is_finite()) {
            return Err(BackendError::Protocol(format!(
                "invalid pose (quaternion norm {norm})"
            )));
        }
        Ok(Rigid3::from_quaternion_xyzw(
            self.q,
            Vector3::new(self.t[0], self.t[1], self.t[2]),
        ))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum WireMessage {
    Process {
        id: i64,
        anchor: String,
        frames: Vec<String>,
    },
    Result {
        id: i64,
        poses: Vec<WirePose>,
        tokens: Vec<Vec<f64>>,
    },
    Error {
        id: i64,
        message: String,
    },
    Hello {
        token_dim: usize,
    },
}

impl WireMessage {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("wire message serializes")
    }

    pub fn parse(line: &str) -> Result<Self, BackendError> {
        serde_json::from_str(line.trim())
            .map_err(|e| BackendError::Protocol(format!("malformed message: {e}")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Endpoint {
    /// `tcp://host:port`
    Tcp(String),
    /// `stdio:<command line>`; the command is run through `sh -c`.
    Stdio(String),
}

impl Endpoint {
    pub fn parse(s: &str) -> Result<Self, BackendError> {
        if let Some(addr) = s.strip_prefix("tcp://") {
            Ok(Self::Tcp(addr.to_string()))
        } else if let Some(cmd) = s.strip_prefix("stdio:") {
            Ok(Self::Stdio(cmd.trim().to_string()))
        } else {
            Err(BackendError::BadConfig(format!(
                "endpoint `{s}` must start with tcp:// or stdio:"
            )))
        }
    }

    /// `KFVO_BACKEND_ENDPOINT` when set, else `configured`.
    pub fn resolve(configured: Option<&str>) -> Result<Self, BackendError> {
        match std::env::var(ENDPOINT_ENV) {
            Ok(v) if !v.trim().is_empty() => Self::parse(v.trim()),
            _ => match configured {
                Some(c) => Self::parse(c),
                None => Err(BackendError::BadConfig(format!(
                    "no backend endpoint configured and {ENDPOINT_ENV} is unset"
                ))),
            },
        }
    }
}

trait LineTransport: Send {
    fn send_line(&mut self, line: &str) -> Result<(), BackendError>;
    fn recv_line(&mut self, timeout: Duration) -> Result<String, BackendError>;
}

struct TcpTransport {
    writer: TcpStream,
    reader: BufReader<TcpStream>,
}

impl LineTransport for TcpTransport {
    fn send_line(&mut self, line: &str) -> Result<(), BackendError> {
        self.writer.write_all(line.as_bytes())?;
        self.writer.write_all(b"\n")?;
        self.writer.flush()?;
        Ok(())
    }

    fn recv_line(&mut self, timeout: Duration) -> Result<String, BackendError> {
        self.reader.get_ref().set_read_timeout(Some(timeout))?;
        let mut line = String::new();
        match self.reader.read_line(&mut line) {
            Ok(0) => Err(BackendError::Protocol("connection closed".into())),
            Ok(_) => Ok(line),
            Err(e)
                if matches!(
                    e.kind(),
                    std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut
                ) =>
            {
                Err(BackendError::Timeout(timeout))
            }
            Err(e) => Err(e.into()),
        }
    }
}

struct ChildTransport {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
}

impl LineTransport for ChildTransport {
    fn send_line(&mut self, line: &str) -> Result<(), BackendError> {
        self.stdin.write_all(line.as_bytes())?;
        self.stdin.write_all(b"\n")?;
        self.stdin.flush()?;
        Ok(())
    }

    fn recv_line(&mut self, timeout: Duration) -> Result<String, BackendError> {
        match self.lines.recv_timeout(timeout) {
            Ok(Ok(line)) => Ok(line),
            Ok(Err(e)) => Err(e.into()),
            Err(RecvTimeoutError::Timeout) => Err(BackendError::Timeout(timeout)),
            Err(RecvTimeoutError::Disconnected) => {
                Err(BackendError::Protocol("backend process exited".into()))
            }
        }
    }
}

impl Drop for ChildTransport {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Client side of the wire protocol. One request in flight at a time.
pub struct RemoteBackend {
    transport: Box<dyn LineTransport>,
    next_id: i64,
    timeout: Duration,
    token_dim: Option<usize>,
}

impl RemoteBackend {
    pub fn connect(endpoint: &Endpoint, timeout: Duration) -> Result<Self, BackendError> {
        let transport: Box<dyn LineTransport> = match endpoint {
            Endpoint::Tcp(addr) => {
                let stream = TcpStream::connect(addr)?;
                stream.set_nodelay(true)?;
                Box::new(TcpTransport {
                    writer: stream.try_clone()?,
                    reader: BufReader::new(stream),
                })
            }
            Endpoint::Stdio(cmd) => {
                let mut child = Command::new("sh")
                    .arg("-c")
                    .arg(cmd)
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .spawn()?;
                let stdin = child.stdin.take().expect("piped stdin");
                let stdout = child.stdout.take().expect("piped stdout");
                let (tx, rx) = mpsc::channel();
                std::thread::spawn(move || {
                    for line in BufReader::new(stdout).lines() {
                        if tx.send(line).is_err() {
                            break;
                        }
                    }
                });
                Box::new(ChildTransport {
                    child,
                    stdin,
                    lines: rx,
                })
            }
        };
        Ok(Self {
            transport,
            next_id: 1,
            timeout,
            token_dim: None,
        })
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    /// Sends one `process` message and waits for the matching reply.
    pub fn remote_process(
        &mut self,
        request: &BackendRequest,
    ) -> Result<BackendResponse, BackendError> {
        let refs: Vec<String> = request.frames.iter().map(|f| f.reference.clone()).collect();
        let Some(anchor) = refs.first().cloned() else {
            return Ok(BackendResponse::default());
        };
        let id = self.next_id;
        self.next_id += 1;
        self.transport.send_line(
            &WireMessage::Process {
                id,
                anchor,
                frames: refs,
            }
            .to_line(),
        )?;

        loop {
            let line = self.transport.recv_line(self.timeout)?;
            if line.trim().is_empty() {
                continue;
            }
            match WireMessage::parse(&line)? {
                WireMessage::Hello { token_dim } => self.token_dim = Some(token_dim),
                WireMessage::Error { id: rid, message } if rid == id || rid < 0 => {
                    return Err(BackendError::Remote(message));
                }
                WireMessage::Result {
                    id: rid,
                    poses,
                    tokens,
                } if rid == id => {
                    let response = self.decode(request, poses, tokens)?;
                    response.validate(request, WIRE_ANCHOR_TOLERANCE)?;
                    return Ok(response);
                }
                other => {
                    return Err(BackendError::Protocol(format!(
                        "unexpected message for request {id}: {}",
                        other.to_line()
                    )))
                }
            }
        }
    }

    fn decode(
        &self,
        request: &BackendRequest,
        poses: Vec<WirePose>,
        tokens: Vec<Vec<f64>>,
    ) -> Result<BackendResponse, BackendError> {
        if poses.len() != request.len() || tokens.len() != request.len() {
            return Err(BackendError::Protocol(format!(
                "expected {} poses and tokens, got {} and {}",
                request.len(),
                poses.len(),
                tokens.len()
            )));
        }
        if let Some(dim) = self.token_dim {
            if tokens.iter().any(|t| t.len() != dim) {
                return Err(BackendError::Protocol(format!(
                    "token dimension differs from advertised {dim}"
                )));
            }
        }
        let entries = request
            .frames
            .iter()
            .zip(poses.into_iter().zip(tokens))
            .map(|(f, (pose, token))| {
                if token.iter().any(|v| !v.is_finite()) {
                    return Err(BackendError::Protocol("non-finite token".into()));
                }
                Ok(FrameEstimate {
                    id: f.id,
                    rel_pose: pose.to_rigid()?,
                    token,
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(BackendResponse { entries })
    }
}

impl Backend for RemoteBackend {
    fn process(&mut self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        self.remote_process(request)
    }

    fn token_dim(&self) -> Option<usize> {
        self.token_dim
    }
}

/// Serves any [`Backend`] over the wire protocol until `reader` hits EOF.
///
/// Emits the `hello` handshake first when the token dimension is known.
/// Requests carry only references; numeric references are used as frame
/// ids (see [`BackendRequest::from_refs`]).
pub fn serve_backend<B, R, W>(backend: &mut B, reader: R, mut writer: W) -> std::io::Result<()>
where
    B: Backend + ?Sized,
    R: BufRead,
    W: Write,
{
    if let Some(token_dim) = backend.token_dim() {
        writeln!(writer, "{}", WireMessage::Hello { token_dim }.to_line())?;
        writer.flush()?;
    }
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = match WireMessage::parse(&line) {
            Ok(WireMessage::Process { id, anchor, frames }) => {
                if frames.first() != Some(&anchor) {
                    WireMessage::Error {
                        id,
                        message: "anchor must be the first frame".into(),
                    }
                } else {
                    match backend.process(&BackendRequest::from_refs(&frames)) {
                        Ok(resp) => WireMessage::Result {
                            id,
                            poses: resp.entries.iter().map(|e| WirePose::from_rigid(&e.rel_pose)).collect(),
                            tokens: resp.entries.into_iter().map(|e| e.token).collect(),
                        },
                        Err(e) => WireMessage::Error {
                            id,
                            message: e.to_string(),
                        },
                    }
                }
            }
            Ok(_) => WireMessage::Error {
                id: -1,
                message: "expected a process message".into(),
            },
            Err(e) => WireMessage::Error {
                id: -1,
                message: e.to_string(),
            },
        };
        writeln!(writer, "{}", reply.to_line())?;
        writer.flush()?;
    }
    Ok(())
}
