//! Length-prefixed binary protocol spoken with external model servers.
//!
//! All integers and floats are little-endian. After connecting, the server
//! speaks first:
//!
//! ```text
//! handshake  := "MDF1" u32 window_w  u32 window_h  u32 channels
//! request    := u8 kind  u64 seq  u32 timestep  f64 guidance
//!               u32 tag_len  [tag_len]u8 utf8-tags
//!               u32 count    [count]f32 payload
//! response   := u64 seq  u8 status  body
//! body       := u32 count [count]f32        (status 0, kind 1 or 3)
//!             | u32 len   [len]u8 utf8      (status 0 kind 2, or status != 0)
//! ```
//!
//! Kind 1 (denoise) carries a window latent, row-major channel-last, whose
//! size must match the handshake. Kind 2 (tags) carries an RGB image patch in
//! the same layout; the `timestep` field holds the patch width. Kind 3
//! (metric) carries two equally sized RGB images back to back, width in
//! `timestep`, and expects a single f32 score.
//!
//! Any malformed magic, unknown kind, oversized length or truncated frame is
//! a [`ProtocolError`], after which the connection must be dropped.

use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::thread::JoinHandle;

use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"MDF1";
/// Largest accepted tag/text payload.
pub const MAX_TEXT_BYTES: u32 = 1 << 20;
/// Largest accepted f32 payload (two 8K RGB frames fit).
pub const MAX_ELEMENTS: u32 = 1 << 28;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("bad magic {0:02x?}, expected \"MDF1\"")]
    BadMagic([u8; 4]),
    #[error("unknown request kind {0}")]
    UnknownKind(u8),
    #[error("{what} length {len} exceeds limit {limit}")]
    LengthTooLarge { what: &'static str, len: u32, limit: u32 },
    #[error("payload has {actual} elements, expected {expected}")]
    UnexpectedCount { expected: usize, actual: usize },
    #[error("response sequence id {actual} does not match request {expected}")]
    SequenceMismatch { expected: u64, actual: u64 },
    #[error("text payload is not valid UTF-8")]
    BadUtf8,
    #[error("connection closed mid-frame")]
    Truncated,
    #[error("i/o: {0}")]
    Io(#[source] io::Error),
}

impl From<io::Error> for ProtocolError {
    fn from(e: io::Error) -> Self {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            ProtocolError::Truncated
        } else {
            ProtocolError::Io(e)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum RequestKind {
    Denoise = 1,
    Tags = 2,
    Metric = 3,
}

impl TryFrom<u8> for RequestKind {
    type Error = ProtocolError;

    fn try_from(v: u8) -> Result<Self, ProtocolError> {
        match v {
            1 => Ok(RequestKind::Denoise),
            2 => Ok(RequestKind::Tags),
            3 => Ok(RequestKind::Metric),
            other => Err(ProtocolError::UnknownKind(other)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Handshake {
    pub window_w: u32,
    pub window_h: u32,
    pub channels: u32,
}

impl Handshake {
    pub fn elements(&self) -> usize {
        self.window_w as usize * self.window_h as usize * self.channels as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Request {
    pub kind: RequestKind,
    pub seq: u64,
    pub timestep: u32,
    pub guidance: f64,
    pub tags: String,
    pub payload: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ResponseBody {
    Values(Vec<f32>),
    Text(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Response {
    pub seq: u64,
    pub status: u8,
    pub body: ResponseBody,
}

impl Response {
    pub fn ok_values(seq: u64, values: Vec<f32>) -> Self {
        Self {
            seq,
            status: 0,
            body: ResponseBody::Values(values),
        }
    }

    pub fn ok_text(seq: u64, text: impl Into<String>) -> Self {
        Self {
            seq,
            status: 0,
            body: ResponseBody::Text(text.into()),
        }
    }

    pub fn error(seq: u64, status: u8, message: impl Into<String>) -> Self {
        assert_ne!(status, 0, "error responses need a non-zero status");
        Self {
            seq,
            status,
            body: ResponseBody::Text(message.into()),
        }
    }
}

fn read_u8(r: &mut impl Read) -> Result<u8, ProtocolError> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

fn read_u32(r: &mut impl Read) -> Result<u32, ProtocolError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64, ProtocolError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64, ProtocolError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn read_text(r: &mut impl Read, what: &'static str) -> Result<String, ProtocolError> {
    let len = read_u32(r)?;
    if len > MAX_TEXT_BYTES {
        return Err(ProtocolError::LengthTooLarge {
            what,
            len,
            limit: MAX_TEXT_BYTES,
        });
    }
    let mut buf = vec![0u8; len as usize];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| ProtocolError::BadUtf8)
}

/// Read a count-prefixed f32 array; `expected` rejects a wrong count before
/// any payload is read.
fn read_values(r: &mut impl Read, expected: Option<usize>) -> Result<Vec<f32>, ProtocolError> {
    let count = read_u32(r)?;
    if count > MAX_ELEMENTS {
        return Err(ProtocolError::LengthTooLarge {
            what: "element count",
            len: count,
            limit: MAX_ELEMENTS,
        });
    }
    if let Some(e) = expected {
        if e != count as usize {
            return Err(ProtocolError::UnexpectedCount {
                expected: e,
                actual: count as usize,
            });
        }
    }
    let mut bytes = vec![0u8; count as usize * 4];
    r.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn put_values(out: &mut Vec<u8>, values: &[f32]) {
    out.extend_from_slice(&(values.len() as u32).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn put_text(out: &mut Vec<u8>, text: &str) {
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
}

pub fn encode_handshake(h: &Handshake) -> Vec<u8> {
    let mut out = Vec::with_capacity(16);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&h.window_w.to_le_bytes());
    out.extend_from_slice(&h.window_h.to_le_bytes());
    out.extend_from_slice(&h.channels.to_le_bytes());
    out
}

pub fn read_handshake(r: &mut impl Read) -> Result<Handshake, ProtocolError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(ProtocolError::BadMagic(magic));
    }
    Ok(Handshake {
        window_w: read_u32(r)?,
        window_h: read_u32(r)?,
        channels: read_u32(r)?,
    })
}

pub fn encode_request(req: &Request) -> Vec<u8> {
    let mut out = Vec::with_capacity(33 + req.tags.len() + 4 * req.payload.len());
    out.push(req.kind as u8);
    out.extend_from_slice(&req.seq.to_le_bytes());
    out.extend_from_slice(&req.timestep.to_le_bytes());
    out.extend_from_slice(&req.guidance.to_le_bytes());
    put_text(&mut out, &req.tags);
    put_values(&mut out, &req.payload);
    out
}

/// Read one request. Returns `Ok(None)` on a clean end of stream before the
/// first byte of a frame.
pub fn read_request(r: &mut impl Read, handshake: &Handshake) -> Result<Option<Request>, ProtocolError> {
    let mut first = [0u8; 1];
    loop {
        match r.read(&mut first) {
            Ok(0) => return Ok(None),
            Ok(_) => break,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e.into()),
        }
    }
    let kind = RequestKind::try_from(first[0])?;
    let seq = read_u64(r)?;
    let timestep = read_u32(r)?;
    let guidance = read_f64(r)?;
    let tags = read_text(r, "tag string")?;
    let expected = match kind {
        RequestKind::Denoise => Some(handshake.elements()),
        _ => None,
    };
    let payload = read_values(r, expected)?;
    Ok(Some(Request {
        kind,
        seq,
        timestep,
        guidance,
        tags,
        payload,
    }))
}

pub fn encode_response(resp: &Response) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&resp.seq.to_le_bytes());
    out.push(resp.status);
    match &resp.body {
        ResponseBody::Values(v) => put_values(&mut out, v),
        ResponseBody::Text(t) => put_text(&mut out, t),
    }
    out
}

/// Read the response to a request of `kind`. `expected_values` pins the
/// element count of a successful value body.
pub fn read_response(
    r: &mut impl Read,
    kind: RequestKind,
    expected_values: Option<usize>,
) -> Result<Response, ProtocolError> {
    let seq = read_u64(r)?;
    let status = read_u8(r)?;
    let body = if status != 0 || kind == RequestKind::Tags {
        ResponseBody::Text(read_text(r, "response text")?)
    } else {
        ResponseBody::Values(read_values(r, expected_values)?)
    };
    Ok(Response { seq, status, body })
}

/// Serve one connection: send the handshake, then answer requests with
/// `handler` until the peer closes. A protocol violation ends the connection
/// with an error.
pub fn serve_connection<S, F>(mut stream: S, handshake: Handshake, mut handler: F) -> Result<(), ProtocolError>
where
    S: Read + Write,
    F: FnMut(Request) -> Response,
{
    stream.write_all(&encode_handshake(&handshake))?;
    stream.flush()?;
    while let Some(req) = read_request(&mut stream, &handshake)? {
        let resp = handler(req);
        stream.write_all(&encode_response(&resp))?;
        stream.flush()?;
    }
    Ok(())
}

/// Identity server: denoise returns its latent, tags return the request's
/// tag string, metric returns 0.
pub fn echo_handler(req: Request) -> Response {
    match req.kind {
        RequestKind::Denoise => Response::ok_values(req.seq, req.payload),
        RequestKind::Tags => Response::ok_text(req.seq, req.tags),
        RequestKind::Metric => Response::ok_values(req.seq, vec![0.0]),
    }
}

/// A TCP echo server on a background thread, one thread per connection.
pub struct EchoServer {
    pub addr: SocketAddr,
    _accept: JoinHandle<()>,
}

impl EchoServer {
    pub fn spawn(bind: &str, handshake: Handshake) -> io::Result<Self> {
        let listener = TcpListener::bind(bind)?;
        let addr = listener.local_addr()?;
        let accept = std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { continue };
                std::thread::spawn(move || {
                    // errors just drop the connection
                    let _ = serve_connection(stream, handshake, echo_handler);
                });
            }
        });
        Ok(Self { addr, _accept: accept })
    }

    /// Blocking variant for the CLI: serves until the process is killed.
    pub fn run_forever(bind: &str, handshake: Handshake, log: impl Fn(&str) + Send + Sync + 'static) -> io::Result<()> {
        let listener = TcpListener::bind(bind)?;
        log(&format!("echo server listening on {}", listener.local_addr()?));
        let log = std::sync::Arc::new(log);
        for stream in listener.incoming() {
            let stream: TcpStream = stream?;
            let log = log.clone();
            std::thread::spawn(move || {
                if let Err(e) = serve_connection(stream, handshake, echo_handler) {
                    log(&format!("connection dropped: {e}"));
                }
            });
        }
        Ok(())
    }
}
