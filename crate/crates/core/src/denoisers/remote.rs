//! Client (and a minimal server loop) for the external denoiser protocol.
//!
//! Every message is one frame:
//!
//! ```text
//! "ECPR" | version u8 = 1 | type u8 | payload length u32 LE | payload
//! ```
//!
//! | type | payload |
//! |------|---------|
//! | 0x01 request  | h u32, w u32, c u32, variance f64, h*w*c pixels f32 |
//! | 0x02 response | h u32, w u32, c u32, h*w*c pixels f32 |
//! | 0x03 error    | UTF-8 message |
//! | 0x04 ping, 0x05 pong | empty |
//!
//! All integers and floats are little-endian; pixels are row-major and
//! channel-planar on the `[0, 255]` scale. One request is in flight per
//! connection and replies come back in order.

use std::fmt;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::str::FromStr;
use std::sync::Mutex;
use std::time::Duration;

use crate::error::{invalid, Error, Result};
use crate::types::Image;

use super::{check_input, Denoiser};

pub const MAGIC: [u8; 4] = *b"ECPR";
pub const VERSION: u8 = 0x01;
pub const HEADER_LEN: usize = 10;
/// Frames larger than this are rejected as malformed.
pub const MAX_PAYLOAD: u32 = 1 << 30;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum FrameType {
    DenoiseRequest = 0x01,
    DenoiseResponse = 0x02,
    Error = 0x03,
    Ping = 0x04,
    Pong = 0x05,
}

impl FrameType {
    fn from_byte(b: u8) -> Option<Self> {
        Some(match b {
            0x01 => Self::DenoiseRequest,
            0x02 => Self::DenoiseResponse,
            0x03 => Self::Error,
            0x04 => Self::Ping,
            0x05 => Self::Pong,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub kind: FrameType,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(kind: FrameType, payload: Vec<u8>) -> Self {
        Self { kind, payload }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload.len());
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.push(self.kind as u8);
        out.extend_from_slice(&(self.payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }
}

pub fn write_frame(w: &mut impl Write, frame: &Frame) -> io::Result<()> {
    w.write_all(&frame.encode())?;
    w.flush()
}

/// Reads one frame. `Ok(None)` on a clean end of stream before any header
/// byte; a malformed header is `Error::Protocol`; transport failures are
/// `Error::Io`.
pub fn read_frame(r: &mut impl Read) -> Result<Option<Frame>> {
    let mut header = [0u8; HEADER_LEN];
    let mut filled = 0;
    while filled < HEADER_LEN {
        match r.read(&mut header[filled..]) {
            Ok(0) if filled == 0 => return Ok(None),
            Ok(0) => return Err(Error::Protocol("stream ended inside a frame header".into())),
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    if header[..4] != MAGIC {
        return Err(Error::Protocol(format!("bad magic {:02x?}", &header[..4])));
    }
    if header[4] != VERSION {
        return Err(Error::Protocol(format!("unsupported version {}", header[4])));
    }
    let kind = FrameType::from_byte(header[5])
        .ok_or_else(|| Error::Protocol(format!("unknown frame type 0x{:02x}", header[5])))?;
    let len = u32::from_le_bytes(header[6..10].try_into().unwrap());
    if len > MAX_PAYLOAD {
        return Err(Error::Protocol(format!("payload of {len} bytes is too large")));
    }
    let mut payload = vec![0u8; len as usize];
    r.read_exact(&mut payload).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => Error::Protocol("stream ended inside a payload".into()),
        _ => e.into(),
    })?;
    Ok(Some(Frame { kind, payload }))
}

/// Decoded request or response payload, before any shape validation.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePayload {
    pub height: u32,
    pub width: u32,
    pub channels: u32,
    /// Present only in requests.
    pub variance: Option<f64>,
    pub pixels: Vec<f32>,
}

impl ImagePayload {
    pub fn from_image(img: &Image, variance: Option<f64>) -> Self {
        let (h, w, c) = img.shape();
        Self {
            height: h as u32,
            width: w as u32,
            channels: c as u32,
            variance,
            pixels: img.pixels().iter().map(|&p| p as f32).collect(),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + 4 * self.pixels.len());
        out.extend_from_slice(&self.height.to_le_bytes());
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.channels.to_le_bytes());
        if let Some(v) = self.variance {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for p in &self.pixels {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn decode(payload: &[u8], with_variance: bool) -> Result<Self> {
        let fixed = if with_variance { 20 } else { 12 };
        if payload.len() < fixed {
            return Err(Error::Protocol(format!("payload of {} bytes is truncated", payload.len())));
        }
        let u32_at = |k: usize| u32::from_le_bytes(payload[k..k + 4].try_into().unwrap());
        let (height, width, channels) = (u32_at(0), u32_at(4), u32_at(8));
        let variance = with_variance.then(|| f64::from_le_bytes(payload[12..20].try_into().unwrap()));
        let count = (height as u128) * (width as u128) * (channels as u128);
        let body = &payload[fixed..];
        if body.len() as u128 != 4 * count {
            return Err(Error::Protocol(format!(
                "shape {height}x{width}x{channels} needs {} pixel bytes, got {}",
                4 * count,
                body.len()
            )));
        }
        let pixels = body
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Ok(Self {
            height,
            width,
            channels,
            variance,
            pixels,
        })
    }

    pub fn to_image(&self) -> Result<Image> {
        Image::new(
            self.height as usize,
            self.width as usize,
            self.channels as usize,
            self.pixels.iter().map(|&p| f64::from(p)).collect(),
        )
    }
}

/// Where the denoiser server lives: `HOST:PORT` or `stdio:COMMAND`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Endpoint {
    Tcp(String),
    Stdio(String),
}

impl FromStr for Endpoint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(cmd) = s.strip_prefix("stdio:") {
            if cmd.trim().is_empty() {
                return Err(invalid("stdio endpoint needs a command"));
            }
            return Ok(Endpoint::Stdio(cmd.to_string()));
        }
        match s.rsplit_once(':') {
            Some((host, port)) if !host.is_empty() && port.parse::<u16>().is_ok() => {
                Ok(Endpoint::Tcp(s.to_string()))
            }
            _ => Err(invalid(format!("endpoint '{s}' is neither HOST:PORT nor stdio:CMD"))),
        }
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Tcp(a) => f.write_str(a),
            Endpoint::Stdio(c) => write!(f, "stdio:{c}"),
        }
    }
}

enum Connection {
    Tcp {
        reader: BufReader<TcpStream>,
        writer: BufWriter<TcpStream>,
    },
    Stdio {
        child: Child,
        reader: BufReader<ChildStdout>,
        writer: BufWriter<ChildStdin>,
    },
    Closed,
}

impl Connection {
    fn open(endpoint: &Endpoint, timeout: Duration) -> Result<Self> {
        match endpoint {
            Endpoint::Tcp(addr) => {
                let addrs: Vec<_> = addr
                    .to_socket_addrs()
                    .map_err(|e| Error::Connection(format!("{addr}: {e}")))?
                    .collect();
                let mut last = None;
                for a in addrs {
                    match TcpStream::connect_timeout(&a, timeout) {
                        Ok(stream) => {
                            let conn = || -> io::Result<Self> {
                                stream.set_read_timeout(Some(timeout))?;
                                stream.set_write_timeout(Some(timeout))?;
                                stream.set_nodelay(true)?;
                                Ok(Connection::Tcp {
                                    reader: BufReader::new(stream.try_clone()?),
                                    writer: BufWriter::new(stream),
                                })
                            };
                            return conn().map_err(|e| Error::Connection(format!("{addr}: {e}")));
                        }
                        Err(e) => last = Some(e),
                    }
                }
                Err(Error::Connection(match last {
                    Some(e) => format!("{addr}: {e}"),
                    None => format!("{addr}: no addresses"),
                }))
            }
            Endpoint::Stdio(cmd) => {
                let mut child = Command::new("sh")
                    .arg("-c")
                    .arg(cmd)
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::inherit())
                    .spawn()
                    .map_err(|e| Error::Connection(format!("cannot start '{cmd}': {e}")))?;
                let stdin = child.stdin.take().expect("piped stdin");
                let stdout = child.stdout.take().expect("piped stdout");
                Ok(Connection::Stdio {
                    child,
                    reader: BufReader::new(stdout),
                    writer: BufWriter::new(stdin),
                })
            }
        }
    }

    fn round_trip(&mut self, frame: &Frame) -> Result<Frame> {
        let (reader, writer): (&mut dyn Read, &mut dyn Write) = match self {
            Connection::Tcp { reader, writer } => (reader, writer),
            Connection::Stdio { reader, writer, .. } => (reader, writer),
            Connection::Closed => return Err(Error::Connection("connection is closed".into())),
        };
        write_frame(&mut { writer }, frame).map_err(|e| Error::Connection(e.to_string()))?;
        match read_frame(&mut { reader }) {
            Ok(Some(f)) => Ok(f),
            Ok(None) => Err(Error::Connection("server closed the connection".into())),
            Err(Error::Io(e)) => Err(Error::Connection(e.to_string())),
            Err(e) => Err(e),
        }
    }

    fn close(&mut self) {
        // Dropping the old value shuts it down.
        drop(std::mem::replace(self, Connection::Closed));
    }
}

impl Drop for Connection {
    fn drop(&mut self) {
        if let Connection::Stdio { child, .. } = self {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// A denoiser served by another process. Owns one connection; concurrent
/// calls are serialized.
pub struct RemoteDenoiser {
    endpoint: Endpoint,
    name: String,
    conn: Mutex<Connection>,
}

impl fmt::Debug for RemoteDenoiser {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RemoteDenoiser").field("endpoint", &self.endpoint).finish()
    }
}

impl RemoteDenoiser {
    pub fn connect(endpoint: Endpoint, timeout: Duration) -> Result<Self> {
        let conn = Connection::open(&endpoint, timeout)?;
        Ok(Self {
            name: format!("remote:{endpoint}"),
            endpoint,
            conn: Mutex::new(conn),
        })
    }

    pub fn endpoint(&self) -> &Endpoint {
        &self.endpoint
    }

    pub fn ping(&self) -> Result<()> {
        let reply = self.exchange(&Frame::new(FrameType::Ping, Vec::new()))?;
        match reply.kind {
            FrameType::Pong => Ok(()),
            other => self.fail(Error::Protocol(format!("expected pong, got {other:?}"))),
        }
    }

    fn exchange(&self, frame: &Frame) -> Result<Frame> {
        let mut conn = self.conn.lock().unwrap_or_else(|p| p.into_inner());
        let out = conn.round_trip(frame);
        if matches!(out, Err(Error::Protocol(_) | Error::Connection(_))) {
            conn.close();
        }
        out
    }

    fn fail<T>(&self, err: Error) -> Result<T> {
        self.conn.lock().unwrap_or_else(|p| p.into_inner()).close();
        Err(err)
    }
}

impl Denoiser for RemoteDenoiser {
    fn name(&self) -> &str {
        &self.name
    }

    fn denoise(&self, r: &Image, v_in: f64) -> Result<Image> {
        check_input(r, v_in)?;
        let request = ImagePayload::from_image(r, Some(v_in));
        let reply = self.exchange(&Frame::new(FrameType::DenoiseRequest, request.encode()))?;
        match reply.kind {
            FrameType::DenoiseResponse => {
                let body = match ImagePayload::decode(&reply.payload, false) {
                    Ok(b) => b,
                    Err(e) => return self.fail(e),
                };
                if (body.height, body.width, body.channels)
                    != (request.height, request.width, request.channels)
                {
                    return self.fail(Error::Protocol(format!(
                        "response shape {}x{}x{} does not match request",
                        body.height, body.width, body.channels
                    )));
                }
                body.to_image().or_else(|e| self.fail(Error::Protocol(e.to_string())))
            }
            FrameType::Error => Err(Error::Remote(String::from_utf8_lossy(&reply.payload).into_owned())),
            other => self.fail(Error::Protocol(format!("unexpected {other:?} frame"))),
        }
    }
}

/// Serves one connection until the peer hangs up. Malformed frames get an
/// error frame and end the connection; invalid shapes get an error frame
/// and the connection stays open.
pub fn serve_connection<F>(reader: &mut impl Read, writer: &mut impl Write, mut handler: F) -> io::Result<()>
where
    F: FnMut(&Image, f64) -> std::result::Result<Image, String>,
{
    let error = |msg: String| Frame::new(FrameType::Error, msg.into_bytes());
    loop {
        let frame = match read_frame(reader) {
            Ok(Some(f)) => f,
            Ok(None) => return Ok(()),
            Err(Error::Io(e)) => return Err(e),
            Err(e) => {
                let _ = write_frame(writer, &error(e.to_string()));
                return Ok(());
            }
        };
        let reply = match frame.kind {
            FrameType::Ping => Frame::new(FrameType::Pong, Vec::new()),
            FrameType::DenoiseRequest => match ImagePayload::decode(&frame.payload, true) {
                Err(e) => {
                    write_frame(writer, &error(e.to_string()))?;
                    return Ok(());
                }
                Ok(req) => {
                    let v = req.variance.unwrap_or(f64::NAN);
                    match req.to_image() {
                        Err(e) => error(format!("invalid shape or pixels: {e}")),
                        Ok(_) if !(v > 0.0) || !v.is_finite() => error(format!("invalid variance {v}")),
                        Ok(img) => match handler(&img, v) {
                            Ok(out) if out.shape() == img.shape() => Frame::new(
                                FrameType::DenoiseResponse,
                                ImagePayload::from_image(&out, None).encode(),
                            ),
                            Ok(_) => error("model changed the image shape".into()),
                            Err(msg) => error(msg),
                        },
                    }
                }
            },
            other => {
                write_frame(writer, &error(format!("unexpected {other:?} frame")))?;
                return Ok(());
            }
        };
        write_frame(writer, &reply)?;
    }
}
