//! OSC 1.0 message codec and UDP endpoints.
//!
//! Only the four core argument types are supported (`i`, `f`, `s`, `b`).
//! Bundles (`#bundle`) are recognised and rejected with their own error.
//! Every encoded block is padded with NULs to a multiple of four bytes.

use std::net::{SocketAddr, ToSocketAddrs, UdpSocket};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use thiserror::Error;

/// Largest datagram we will try to read.
pub const MAX_DATAGRAM: usize = 65_507;

#[derive(Debug, Clone, PartialEq)]
pub enum OscArg {
    Int(i32),
    Float(f32),
    Str(String),
    Blob(Vec<u8>),
}

impl OscArg {
    fn tag(&self) -> u8 {
        match self {
            OscArg::Int(_) => b'i',
            OscArg::Float(_) => b'f',
            OscArg::Str(_) => b's',
            OscArg::Blob(_) => b'b',
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OscMessage {
    pub address: String,
    pub args: Vec<OscArg>,
}

impl OscMessage {
    pub fn new(address: impl Into<String>, args: Vec<OscArg>) -> Self {
        Self {
            address: address.into(),
            args,
        }
    }

    /// A message carrying a single string argument, the shape used for
    /// all natural-language traffic.
    pub fn text(address: impl Into<String>, text: impl Into<String>) -> Self {
        Self::new(address, vec![OscArg::Str(text.into())])
    }

    /// Returns the payload when the message is exactly one string argument.
    pub fn as_text(&self) -> Option<&str> {
        match self.args.as_slice() {
            [OscArg::Str(s)] => Some(s),
            _ => None,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EncodeError {
    #[error("invalid address {0:?}: must start with '/' and contain no whitespace or NUL")]
    InvalidAddress(String),
    #[error("string argument {index} contains an embedded NUL byte")]
    NulInString { index: usize },
    #[error("blob argument {index} is too large ({len} bytes)")]
    BlobTooLarge { index: usize, len: usize },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DecodeError {
    #[error("truncated packet")]
    TruncatedPacket,
    #[error("OSC bundles are not supported")]
    BundleUnsupported,
    #[error("address is not a valid OSC address")]
    BadAddress,
    #[error("type tag string does not start with ','")]
    MissingTypeTagPrefix,
    #[error("unknown type tag {0:?}")]
    UnknownTypeTag(char),
    #[error("truncated argument {index}")]
    TruncatedArgument { index: usize },
    #[error("bad padding")]
    BadPadding,
    #[error("string is not valid UTF-8")]
    InvalidUtf8,
    #[error("{0} trailing bytes after the last argument")]
    TrailingBytes(usize),
}

fn padded_len(n: usize) -> usize {
    (n + 3) & !3
}

pub fn is_valid_address(address: &str) -> bool {
    address.starts_with('/')
        && !address
            .chars()
            .any(|c| c == '\0' || c.is_whitespace())
}

fn push_padded_str(out: &mut Vec<u8>, s: &[u8]) {
    out.extend_from_slice(s);
    // at least one NUL terminator, then pad to 4
    let total = padded_len(s.len() + 1);
    out.resize(out.len() + (total - s.len()), 0);
}

/// Encodes a message into its OSC 1.0 wire representation.
pub fn encode_message(msg: &OscMessage) -> Result<Vec<u8>, EncodeError> {
    if !is_valid_address(&msg.address) {
        return Err(EncodeError::InvalidAddress(msg.address.clone()));
    }
    let mut out = Vec::with_capacity(64);
    push_padded_str(&mut out, msg.address.as_bytes());

    let mut tags = Vec::with_capacity(msg.args.len() + 1);
    tags.push(b',');
    tags.extend(msg.args.iter().map(OscArg::tag));
    push_padded_str(&mut out, &tags);

    for (index, arg) in msg.args.iter().enumerate() {
        match arg {
            OscArg::Int(v) => out.extend_from_slice(&v.to_be_bytes()),
            OscArg::Float(v) => out.extend_from_slice(&v.to_bits().to_be_bytes()),
            OscArg::Str(s) => {
                if s.as_bytes().contains(&0) {
                    return Err(EncodeError::NulInString { index });
                }
                push_padded_str(&mut out, s.as_bytes());
            }
            OscArg::Blob(b) => {
                let len = i32::try_from(b.len())
                    .map_err(|_| EncodeError::BlobTooLarge { index, len: b.len() })?;
                out.extend_from_slice(&len.to_be_bytes());
                out.extend_from_slice(b);
                out.resize(out.len() + padded_len(b.len()) - b.len(), 0);
            }
        }
    }
    debug_assert_eq!(out.len() % 4, 0);
    Ok(out)
}

/// Reads a NUL-terminated, 4-aligned string starting at `pos`.
/// Returns the string bytes and the position after the padding.
fn read_padded_str(buf: &[u8], pos: usize) -> Option<Result<(&[u8], usize), DecodeError>> {
    let rest = buf.get(pos..)?;
    let nul = rest.iter().position(|&b| b == 0)?;
    let end = pos + padded_len(nul + 1);
    if end > buf.len() {
        return None;
    }
    if buf[pos + nul..end].iter().any(|&b| b != 0) {
        return Some(Err(DecodeError::BadPadding));
    }
    Some(Ok((&buf[pos..pos + nul], end)))
}

/// Decodes one OSC message. Total over arbitrary input: malformed bytes
/// produce an error, never a panic.
pub fn decode_message(buf: &[u8]) -> Result<OscMessage, DecodeError> {
    if buf.is_empty() {
        return Err(DecodeError::TruncatedPacket);
    }
    if buf.starts_with(b"#bundle") {
        return Err(DecodeError::BundleUnsupported);
    }
    if buf.len() % 4 != 0 {
        // could still be a truncated message; report padding only when the
        // header parses
    }
    let (addr, mut pos) = match read_padded_str(buf, 0) {
        None => return Err(DecodeError::TruncatedPacket),
        Some(r) => r?,
    };
    let address = std::str::from_utf8(addr).map_err(|_| DecodeError::BadAddress)?;
    if !is_valid_address(address) {
        return Err(DecodeError::BadAddress);
    }

    if pos >= buf.len() {
        return Err(DecodeError::TruncatedPacket);
    }
    if buf[pos] != b',' {
        return Err(DecodeError::MissingTypeTagPrefix);
    }
    let (tags, next) = match read_padded_str(buf, pos) {
        None => return Err(DecodeError::TruncatedPacket),
        Some(r) => r?,
    };
    pos = next;

    let mut args = Vec::with_capacity(tags.len().saturating_sub(1));
    for (index, &tag) in tags[1..].iter().enumerate() {
        let arg = match tag {
            b'i' | b'f' => {
                let raw = buf
                    .get(pos..pos + 4)
                    .ok_or(DecodeError::TruncatedArgument { index })?;
                let bits = u32::from_be_bytes([raw[0], raw[1], raw[2], raw[3]]);
                pos += 4;
                if tag == b'i' {
                    OscArg::Int(bits as i32)
                } else {
                    OscArg::Float(f32::from_bits(bits))
                }
            }
            b's' => {
                let (s, next) = match read_padded_str(buf, pos) {
                    None => return Err(DecodeError::TruncatedArgument { index }),
                    Some(r) => r?,
                };
                pos = next;
                OscArg::Str(
                    std::str::from_utf8(s)
                        .map_err(|_| DecodeError::InvalidUtf8)?
                        .to_owned(),
                )
            }
            b'b' => {
                let raw = buf
                    .get(pos..pos + 4)
                    .ok_or(DecodeError::TruncatedArgument { index })?;
                let len = i32::from_be_bytes([raw[0], raw[1], raw[2], raw[3]]);
                let len = usize::try_from(len).map_err(|_| DecodeError::TruncatedArgument { index })?;
                let start = pos + 4;
                let end = start
                    .checked_add(padded_len(len))
                    .ok_or(DecodeError::TruncatedArgument { index })?;
                if end > buf.len() || padded_len(len) < len {
                    return Err(DecodeError::TruncatedArgument { index });
                }
                if buf[start + len..end].iter().any(|&b| b != 0) {
                    return Err(DecodeError::BadPadding);
                }
                pos = end;
                OscArg::Blob(buf[start..start + len].to_vec())
            }
            other => return Err(DecodeError::UnknownTypeTag(other as char)),
        };
        args.push(arg);
    }
    if pos != buf.len() {
        return Err(DecodeError::TrailingBytes(buf.len() - pos));
    }
    Ok(OscMessage {
        address: address.to_owned(),
        args,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EndpointConfig {
    pub bind_host: String,
    pub bind_port: u16,
    pub peers: Vec<(String, u16)>,
}

impl EndpointConfig {
    /// Loopback endpoint on an OS-assigned port with no peers.
    pub fn loopback() -> Self {
        Self {
            bind_host: "127.0.0.1".into(),
            bind_port: 0,
            peers: Vec::new(),
        }
    }
}

#[derive(Debug, Error)]
pub enum EndpointError {
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: String,
        source: std::io::Error,
    },
    #[error("cannot resolve peer {0}")]
    Resolve(String),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error("socket error: {0}")]
    Io(#[from] std::io::Error),
}

/// A bound UDP socket speaking OSC. `send` may be called from any thread;
/// `receive` is meant for a single consumer.
#[derive(Clone)]
pub struct Endpoint {
    socket: Arc<UdpSocket>,
    peers: Arc<Mutex<Vec<SocketAddr>>>,
    malformed: Arc<AtomicU64>,
    send_failures: Arc<AtomicU64>,
}

pub fn open_endpoint(cfg: &EndpointConfig) -> Result<Endpoint, EndpointError> {
    let addr = format!("{}:{}", cfg.bind_host, cfg.bind_port);
    let socket = UdpSocket::bind(&addr).map_err(|source| EndpointError::Bind {
        addr: addr.clone(),
        source,
    })?;
    let mut peers = Vec::with_capacity(cfg.peers.len());
    for (host, port) in &cfg.peers {
        let resolved = (host.as_str(), *port)
            .to_socket_addrs()
            .ok()
            .and_then(|mut it| it.next())
            .ok_or_else(|| EndpointError::Resolve(format!("{host}:{port}")))?;
        peers.push(resolved);
    }
    Ok(Endpoint {
        socket: Arc::new(socket),
        peers: Arc::new(Mutex::new(peers)),
        malformed: Arc::new(AtomicU64::new(0)),
        send_failures: Arc::new(AtomicU64::new(0)),
    })
}

impl Endpoint {
    pub fn local_addr(&self) -> SocketAddr {
        self.socket.local_addr().expect("bound socket has an address")
    }

    pub fn add_peer(&self, peer: SocketAddr) {
        self.peers.lock().unwrap().push(peer);
    }

    pub fn peers(&self) -> Vec<SocketAddr> {
        self.peers.lock().unwrap().clone()
    }

    /// Encodes `msg` into a single datagram and sends it to `peer`.
    /// Network failures are logged and counted; only encoding errors surface.
    pub fn send(&self, msg: &OscMessage, peer: SocketAddr) -> Result<(), EncodeError> {
        let bytes = encode_message(msg)?;
        if let Err(e) = self.socket.send_to(&bytes, peer) {
            self.send_failures.fetch_add(1, Ordering::Relaxed);
            tracing::warn!(%peer, error = %e, "osc send failed");
        }
        Ok(())
    }

    /// Sends to every configured peer.
    pub fn broadcast(&self, msg: &OscMessage) -> Result<(), EncodeError> {
        let bytes = encode_message(msg)?;
        for peer in self.peers() {
            if let Err(e) = self.socket.send_to(&bytes, peer) {
                self.send_failures.fetch_add(1, Ordering::Relaxed);
                tracing::warn!(%peer, error = %e, "osc send failed");
            }
        }
        Ok(())
    }

    /// Blocks until a well-formed message arrives or `timeout` elapses.
    /// Malformed datagrams are dropped and counted.
    pub fn receive_timeout(
        &self,
        timeout: Option<Duration>,
    ) -> Result<Option<(OscMessage, SocketAddr)>, std::io::Error> {
        self.socket.set_read_timeout(timeout)?;
        let mut buf = vec![0u8; MAX_DATAGRAM];
        loop {
            match self.socket.recv_from(&mut buf) {
                Ok((n, from)) => match decode_message(&buf[..n]) {
                    Ok(msg) => return Ok(Some((msg, from))),
                    Err(e) => {
                        self.malformed.fetch_add(1, Ordering::Relaxed);
                        tracing::debug!(%from, error = %e, "dropping malformed datagram");
                    }
                },
                Err(e)
                    if matches!(
                        e.kind(),
                        std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut
                    ) =>
                {
                    return Ok(None)
                }
                Err(e) => return Err(e),
            }
        }
    }

    /// Blocking iterator over well-formed inbound messages.
    pub fn receive(&self) -> impl Iterator<Item = OscMessage> + '_ {
        std::iter::from_fn(move || loop {
            match self.receive_timeout(None) {
                Ok(Some((msg, _))) => return Some(msg),
                Ok(None) => continue,
                Err(_) => return None,
            }
        })
    }

    pub fn malformed_count(&self) -> u64 {
        self.malformed.load(Ordering::Relaxed)
    }

    pub fn send_failure_count(&self) -> u64 {
        self.send_failures.load(Ordering::Relaxed)
    }
}
