//! Client side of the model-server protocol.
//!
//! A [`BridgeClient`] owns one or more connections to the same server; each
//! connection carries at most one request at a time, and callers on
//! different threads are spread across connections.

use std::io::{BufReader, BufWriter, Read, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use super::schedule::DiffusionSchedule;
use super::{BackendError, Denoiser, DenoiserRequest};
use crate::conditioning::{ExtractorError, PromptExtractor};
use crate::protocol::{
    encode_request, read_handshake, read_response, Handshake, ProtocolError, Request, RequestKind, ResponseBody,
};
use crate::tensor::{ImageGrid, LatentGrid};

struct Connection {
    reader: BufReader<Box<dyn Read + Send>>,
    writer: BufWriter<Box<dyn Write + Send>>,
    child: Option<Child>,
    broken: bool,
}

impl Drop for Connection {
    fn drop(&mut self) {
        if let Some(child) = &mut self.child {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

impl Connection {
    fn tcp(addr: &str, timeout: Option<Duration>) -> Result<(Self, Handshake), BackendError> {
        let stream = TcpStream::connect(addr).map_err(|e| BackendError::Unavailable(format!("{addr}: {e}")))?;
        stream.set_read_timeout(timeout).map_err(|e| BackendError::Unavailable(e.to_string()))?;
        stream.set_nodelay(true).ok();
        let read_half = stream.try_clone().map_err(|e| BackendError::Unavailable(e.to_string()))?;
        Self::start(Box::new(read_half), Box::new(stream), None)
    }

    fn exec(command: &str) -> Result<(Self, Handshake), BackendError> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| BackendError::Unavailable(format!("{command}: {e}")))?;
        let stdout = child.stdout.take().expect("piped stdout");
        let stdin = child.stdin.take().expect("piped stdin");
        Self::start(Box::new(stdout), Box::new(stdin), Some(child))
    }

    fn start(
        read: Box<dyn Read + Send>,
        write: Box<dyn Write + Send>,
        child: Option<Child>,
    ) -> Result<(Self, Handshake), BackendError> {
        let mut conn = Connection {
            reader: BufReader::new(read),
            writer: BufWriter::new(write),
            child,
            broken: false,
        };
        let hs = read_handshake(&mut conn.reader)?;
        Ok((conn, hs))
    }

    fn roundtrip(&mut self, req: &Request, expected: Option<usize>) -> Result<crate::protocol::Response, ProtocolError> {
        self.writer.write_all(&encode_request(req))?;
        self.writer.flush()?;
        let resp = read_response(&mut self.reader, req.kind, expected)?;
        if resp.seq != req.seq {
            return Err(ProtocolError::SequenceMismatch {
                expected: req.seq,
                actual: resp.seq,
            });
        }
        Ok(resp)
    }
}

pub struct BridgeClient {
    conns: Vec<Mutex<Connection>>,
    handshake: Handshake,
    seq: AtomicU64,
    next: AtomicUsize,
}

impl std::fmt::Debug for BridgeClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BridgeClient")
            .field("connections", &self.conns.len())
            .field("handshake", &self.handshake)
            .finish()
    }
}

impl BridgeClient {
    fn from_connections(pairs: Vec<(Connection, Handshake)>) -> Result<Self, BackendError> {
        let handshake = pairs
            .first()
            .map(|p| p.1)
            .ok_or_else(|| BackendError::Unavailable("no connections requested".into()))?;
        if let Some((_, other)) = pairs.iter().find(|(_, h)| *h != handshake) {
            return Err(BackendError::Unavailable(format!(
                "connections disagree on handshake: {handshake:?} vs {other:?}"
            )));
        }
        Ok(Self {
            conns: pairs.into_iter().map(|(c, _)| Mutex::new(c)).collect(),
            handshake,
            seq: AtomicU64::new(1),
            next: AtomicUsize::new(0),
        })
    }

    pub fn connect_tcp(addr: &str, connections: usize, timeout: Option<Duration>) -> Result<Self, BackendError> {
        let pairs = (0..connections.max(1))
            .map(|_| Connection::tcp(addr, timeout))
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_connections(pairs)
    }

    /// Spawn `command` through `sh -c` once per connection and talk over its
    /// stdin/stdout.
    pub fn spawn(command: &str, connections: usize) -> Result<Self, BackendError> {
        let pairs = (0..connections.max(1))
            .map(|_| Connection::exec(command))
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_connections(pairs)
    }

    /// `exec:<command>` spawns a child process; anything else is a TCP address.
    pub fn open(address: &str, connections: usize, timeout: Option<Duration>) -> Result<Self, BackendError> {
        match address.strip_prefix("exec:") {
            Some(cmd) => Self::spawn(cmd, connections),
            None => Self::connect_tcp(address.strip_prefix("tcp://").unwrap_or(address), connections, timeout),
        }
    }

    pub fn handshake(&self) -> Handshake {
        self.handshake
    }

    pub fn connections(&self) -> usize {
        self.conns.len()
    }

    fn call(&self, mut req: Request, expected: Option<usize>) -> Result<ResponseBody, BackendError> {
        req.seq = self.seq.fetch_add(1, Ordering::Relaxed);
        let n = self.conns.len();
        let start = self.next.fetch_add(1, Ordering::Relaxed) % n;
        let mut guard = (0..n)
            .find_map(|k| self.conns[(start + k) % n].try_lock().ok())
            .unwrap_or_else(|| self.conns[start].lock().unwrap_or_else(|p| p.into_inner()));
        if guard.broken {
            return Err(BackendError::Unavailable("connection dropped after a protocol error".into()));
        }
        let resp = guard.roundtrip(&req, expected).inspect_err(|_| guard.broken = true)?;
        match (resp.status, resp.body) {
            (0, body) => Ok(body),
            (status, ResponseBody::Text(message)) => Err(BackendError::Remote { status, message }),
            (status, ResponseBody::Values(_)) => Err(BackendError::Remote {
                status,
                message: String::new(),
            }),
        }
    }

    /// One denoise step on a window latent sized per the handshake.
    pub fn denoise(&self, latent: &LatentGrid, timestep: usize, tags: &str, guidance: f64) -> Result<LatentGrid, BackendError> {
        let dims = (
            self.handshake.window_w as usize,
            self.handshake.window_h as usize,
            self.handshake.channels as usize,
        );
        if latent.dims() != dims {
            return Err(BackendError::ShapeMismatch {
                expected: dims,
                actual: latent.dims(),
            });
        }
        let req = Request {
            kind: RequestKind::Denoise,
            seq: 0,
            timestep: timestep as u32,
            guidance,
            tags: tags.to_string(),
            payload: latent.data().iter().map(|&v| v as f32).collect(),
        };
        match self.call(req, Some(self.handshake.elements()))? {
            ResponseBody::Values(v) => LatentGrid::new(dims.0, dims.1, dims.2, v.into_iter().map(f64::from).collect())
                .map_err(|e| BackendError::Unavailable(format!("server returned a bad latent: {e}"))),
            ResponseBody::Text(_) => unreachable!("value body for a denoise response"),
        }
    }

    /// Raw `", "`-joined tag string for an image patch (sent as RGB).
    pub fn tags(&self, patch: &ImageGrid) -> Result<String, BackendError> {
        let req = Request {
            kind: RequestKind::Tags,
            seq: 0,
            timestep: patch.width() as u32,
            guidance: 0.0,
            tags: String::new(),
            payload: rgb_f32(patch),
        };
        match self.call(req, None)? {
            ResponseBody::Text(t) => Ok(t),
            ResponseBody::Values(_) => unreachable!("text body for a tags response"),
        }
    }

    /// Server-side perceptual score (e.g. LPIPS) between two equal-size images.
    pub fn metric(&self, a: &ImageGrid, b: &ImageGrid) -> Result<f64, BackendError> {
        if (a.width(), a.height()) != (b.width(), b.height()) {
            return Err(BackendError::ShapeMismatch {
                expected: (a.width(), a.height(), 3),
                actual: (b.width(), b.height(), 3),
            });
        }
        let mut payload = rgb_f32(a);
        payload.extend(rgb_f32(b));
        let req = Request {
            kind: RequestKind::Metric,
            seq: 0,
            timestep: a.width() as u32,
            guidance: 0.0,
            tags: String::new(),
            payload,
        };
        match self.call(req, Some(1))? {
            ResponseBody::Values(v) => Ok(v[0] as f64),
            ResponseBody::Text(_) => unreachable!("value body for a metric response"),
        }
    }
}

fn rgb_f32(img: &ImageGrid) -> Vec<f32> {
    match img.channels() {
        3 => img.data().iter().map(|&v| v as f32).collect(),
        1 => img.data().iter().flat_map(|&v| [v as f32; 3]).collect(),
        c => img
            .data()
            .chunks_exact(c)
            .flat_map(|px| [px[0] as f32, px[1 % c] as f32, px[2 % c] as f32])
            .collect(),
    }
}

/// Denoiser backed by a model server.
#[derive(Debug, Clone)]
pub struct ExternalDenoiser {
    client: Arc<BridgeClient>,
}

impl ExternalDenoiser {
    pub fn new(client: Arc<BridgeClient>) -> Self {
        Self { client }
    }
}

impl Denoiser for ExternalDenoiser {
    fn declared_dims(&self) -> Option<(usize, usize, usize)> {
        let h = self.client.handshake();
        Some((h.window_w as usize, h.window_h as usize, h.channels as usize))
    }

    fn denoise_step(&self, req: &DenoiserRequest<'_>, schedule: &DiffusionSchedule) -> Result<LatentGrid, BackendError> {
        req.validate(schedule, self.declared_dims())?;
        self.client
            .denoise(req.latent, req.timestep, &req.condition.joined(), req.guidance_scale)
    }
}

/// Prompt extractor backed by a model server.
#[derive(Debug, Clone)]
pub struct ExternalTagger {
    client: Arc<BridgeClient>,
    native_size: Option<(usize, usize)>,
}

impl ExternalTagger {
    pub fn new(client: Arc<BridgeClient>) -> Self {
        Self {
            client,
            native_size: Some((512, 512)),
        }
    }

    pub fn with_native_size(mut self, size: Option<(usize, usize)>) -> Self {
        self.native_size = size;
        self
    }
}

impl PromptExtractor for ExternalTagger {
    fn extract(&self, patch: &ImageGrid) -> Result<Vec<String>, ExtractorError> {
        let text = self.client.tags(patch).map_err(|e| ExtractorError(e.to_string()))?;
        Ok(text.split(',').map(str::to_string).collect())
    }

    fn native_size(&self) -> Option<(usize, usize)> {
        self.native_size
    }

    fn concurrent_safe(&self) -> bool {
        true
    }
}
